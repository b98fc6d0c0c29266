//! End-to-end checks of the command-line surface: flag validation, exit
//! codes (0 success, 1 usage, 2 data), output file contracts, and the
//! separate-mode fan-out.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_visw2v")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().unwrap()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        Workspace { _dir: dir, root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).to_str().unwrap().to_owned()
    }

    fn write(&self, name: &str, content: &str) {
        fs::write(self.path(name), content).unwrap();
    }

    /// Small three-topic corpus plus aligned multimodal data: `aa` and `bb`
    /// share the low feature cluster, `cc` sits in the other one.
    fn with_pipeline_data() -> Self {
        let ws = Workspace::new();
        let mut corpus = String::new();
        let blocks = [
            ("aa", ["red", "blue", "green", "cold"]),
            ("bb", ["fast", "slow", "tall", "wide"]),
            ("cc", ["soft", "loud", "dark", "pale"]),
        ];
        for round in 0..80 {
            for (word, fillers) in &blocks {
                corpus.push_str(&format!(
                    "{word} {} {}\n",
                    fillers[round % 4],
                    fillers[(round + 1) % 4]
                ));
            }
        }
        ws.write("corpus.txt", &corpus);

        let mut feats = String::new();
        let mut text = String::new();
        let mut tuples = String::new();
        for i in 0..50 {
            for (word, base, relation) in [
                ("aa", 0.0, "red"),
                ("bb", 0.05, "fast"),
                ("cc", 10.0, "dark"),
            ] {
                feats.push_str(&format!("{:.6},0.5\n", base + i as f64 * 0.001));
                text.push_str(word);
                text.push('\n');
                tuples.push_str(&format!("{word}\t{relation}\t{word}\n"));
            }
        }
        ws.write("feats.csv", &feats);
        ws.write("text.txt", &text);
        ws.write("tuples.tsv", &tuples);
        ws.write("train.tsv", "aa\tred\tblue\nbb\tfast\tslow\n");
        ws.write(
            "test.tsv",
            "aa\tred\tblue\t1\ncc\tdark\tpale\t0\nbb\ttall\twide\t1\n",
        );
        ws
    }

    fn pretrain(&self) -> PathBuf {
        let out = self.path("w2v.txt");
        let res = run(&[
            "pretrain",
            "--corpus",
            &self.arg("corpus.txt"),
            "--out",
            out.to_str().unwrap(),
            "--n-hidden",
            "12",
            "--epochs",
            "2",
            "--seed",
            "4",
        ]);
        assert!(res.status.success(), "{}", stderr_of(&res));
        out
    }

    fn cluster(&self) -> PathBuf {
        let out = self.path("cmodel.txt");
        let res = run(&[
            "cluster",
            "--features",
            &self.arg("feats.csv"),
            "--clusters",
            "2",
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "4",
        ]);
        assert!(res.status.success(), "{}", stderr_of(&res));
        out
    }
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("process terminated by signal")
}

#[test]
fn missing_required_flag_is_usage_error() {
    let out = run(&["pretrain", "--out", "x.txt"]);
    assert_eq!(exit_code(&out), 1, "{}", stderr_of(&out));
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let out = run(&["transmogrify"]);
    assert_eq!(exit_code(&out), 1);
}

#[test]
fn help_exits_zero() {
    let out = run(&["--help"]);
    assert_eq!(exit_code(&out), 0);
    for sub in [
        "pretrain",
        "cluster",
        "finetune",
        "eval-cs",
        "eval-vp",
        "retrieve",
        "report-cooccurrence",
    ] {
        assert!(
            stdout_of(&out).contains(sub),
            "help does not mention {sub}"
        );
    }
}

#[test]
fn nonexistent_input_is_data_error() {
    let out = run(&[
        "pretrain",
        "--corpus",
        "/nonexistent/corpus.txt",
        "--out",
        "/tmp/never-written.txt",
    ]);
    assert_eq!(exit_code(&out), 2, "{}", stderr_of(&out));
    assert!(stderr_of(&out).contains("not found"));
}

#[test]
fn pretrain_output_is_loadable_and_seed_stable() {
    let ws = Workspace::with_pipeline_data();
    let first = ws.pretrain();
    let loaded = visw2v::embedding::load_text(&first).unwrap();
    assert_eq!(loaded.n_hidden(), 12);
    assert!(loaded.vocab().contains("aa"));

    let bytes_a = fs::read(&first).unwrap();
    let second = ws.pretrain();
    let bytes_b = fs::read(&second).unwrap();
    assert_eq!(bytes_a, bytes_b);
}

#[test]
fn cluster_rejects_k_larger_than_rows() {
    let ws = Workspace::new();
    ws.write("feats.csv", "0.0\n1.0\n");
    let out = run(&[
        "cluster",
        "--features",
        &ws.arg("feats.csv"),
        "--clusters",
        "5",
        "--out",
        &ws.arg("cmodel.txt"),
    ]);
    assert_eq!(exit_code(&out), 2);
    let err = stderr_of(&out);
    assert!(err.contains('5') && err.contains('2'), "bad message: {err}");
}

#[test]
fn cluster_labels_align_with_feature_rows() {
    let ws = Workspace::with_pipeline_data();
    let res = run(&[
        "cluster",
        "--features",
        &ws.arg("feats.csv"),
        "--clusters",
        "2",
        "--out",
        &ws.arg("cmodel.txt"),
        "--labels-out",
        &ws.arg("labels.tsv"),
    ]);
    assert!(res.status.success());
    let n_rows = fs::read_to_string(ws.path("feats.csv"))
        .unwrap()
        .lines()
        .count();
    let n_labels = fs::read_to_string(ws.path("labels.tsv"))
        .unwrap()
        .lines()
        .count();
    assert_eq!(n_rows, n_labels);
}

#[test]
fn cluster_with_pca_serializes_pca_block() {
    let ws = Workspace::with_pipeline_data();
    let res = run(&[
        "cluster",
        "--features",
        &ws.arg("feats.csv"),
        "--clusters",
        "2",
        "--pca",
        "0.95",
        "--out",
        &ws.arg("cmodel-pca.txt"),
    ]);
    assert!(res.status.success(), "{}", stderr_of(&res));
    let content = fs::read_to_string(ws.path("cmodel-pca.txt")).unwrap();
    let header = content.lines().next().unwrap();
    assert!(header.ends_with(" 1"), "header lacks pca flag: {header}");
    let model = visw2v::clustering::load_cluster_model(&ws.path("cmodel-pca.txt")).unwrap();
    assert!(model.pca().is_some());
}

#[test]
fn finetune_needs_exactly_one_text_source() {
    let ws = Workspace::with_pipeline_data();
    let w2v = ws.pretrain();
    let cmodel = ws.cluster();
    let base: Vec<String> = vec![
        "finetune".into(),
        "--embeddings".into(),
        w2v.to_str().unwrap().into(),
        "--features".into(),
        ws.arg("feats.csv"),
        "--cluster-model".into(),
        cmodel.to_str().unwrap().into(),
        "--out".into(),
        ws.arg("vis.txt"),
    ];

    let neither = run(&base.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(exit_code(&neither), 1);

    let mut both = base.clone();
    both.extend([
        "--text".into(),
        ws.arg("text.txt"),
        "--tuples".into(),
        ws.arg("tuples.tsv"),
    ]);
    let both = run(&both.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(exit_code(&both), 1);

    // separate mode over plain text has no role information
    let mut sep = base;
    sep.extend([
        "--text".into(),
        ws.arg("text.txt"),
        "--mode".into(),
        "separate".into(),
    ]);
    let sep = run(&sep.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(exit_code(&sep), 1);
}

#[test]
fn finetune_rejects_mismatched_cluster_count() {
    let ws = Workspace::with_pipeline_data();
    let w2v = ws.pretrain();
    let cmodel = ws.cluster();
    let out = run(&[
        "finetune",
        "--embeddings",
        w2v.to_str().unwrap(),
        "--features",
        &ws.arg("feats.csv"),
        "--text",
        &ws.arg("text.txt"),
        "--cluster-model",
        cmodel.to_str().unwrap(),
        "--clusters",
        "7",
        "--out",
        &ws.arg("vis.txt"),
    ]);
    assert_eq!(exit_code(&out), 2);
    assert!(stderr_of(&out).contains('7') && stderr_of(&out).contains('2'));
}

#[test]
fn finetune_loss_log_has_one_row_per_epoch() {
    let ws = Workspace::with_pipeline_data();
    let w2v = ws.pretrain();
    let cmodel = ws.cluster();
    let res = run(&[
        "finetune",
        "--embeddings",
        w2v.to_str().unwrap(),
        "--features",
        &ws.arg("feats.csv"),
        "--text",
        &ws.arg("text.txt"),
        "--cluster-model",
        cmodel.to_str().unwrap(),
        "--epochs",
        "7",
        "--out",
        &ws.arg("vis.txt"),
        "--loss-out",
        &ws.arg("loss.tsv"),
    ]);
    assert!(res.status.success(), "{}", stderr_of(&res));
    let log = fs::read_to_string(ws.path("loss.tsv")).unwrap();
    let rows: Vec<&str> = log.lines().collect();
    assert_eq!(rows.len(), 7);
    for (i, row) in rows.iter().enumerate() {
        let mut cols = row.split('\t');
        assert_eq!(cols.next().unwrap(), (i + 1).to_string());
        let loss: f64 = cols.next().unwrap().parse().unwrap();
        assert!(loss.is_finite() && loss >= 0.0);
    }
}

#[test]
fn finetune_separate_writes_three_role_files() {
    let ws = Workspace::with_pipeline_data();
    let w2v = ws.pretrain();
    let cmodel = ws.cluster();
    let res = run(&[
        "finetune",
        "--embeddings",
        w2v.to_str().unwrap(),
        "--features",
        &ws.arg("feats.csv"),
        "--tuples",
        &ws.arg("tuples.tsv"),
        "--cluster-model",
        cmodel.to_str().unwrap(),
        "--mode",
        "separate",
        "--epochs",
        "3",
        "--out",
        &ws.arg("vis.txt"),
    ]);
    assert!(res.status.success(), "{}", stderr_of(&res));
    for suffix in ["P", "R", "S"] {
        let path = ws.path(&format!("vis.txt.{suffix}"));
        assert!(path.exists(), "missing {}", path.display());
        visw2v::embedding::load_text(&path).unwrap();
    }
    assert!(!ws.path("vis.txt").exists());
}

fn finetuned(ws: &Workspace) -> PathBuf {
    let w2v = ws.pretrain();
    let cmodel = ws.cluster();
    let vis = ws.path("vis.txt");
    let res = run(&[
        "finetune",
        "--embeddings",
        w2v.to_str().unwrap(),
        "--features",
        &ws.arg("feats.csv"),
        "--text",
        &ws.arg("text.txt"),
        "--cluster-model",
        cmodel.to_str().unwrap(),
        "--epochs",
        "5",
        "--out",
        vis.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", stderr_of(&res));
    vis
}

#[test]
fn eval_cs_reports_one_ap_per_model() {
    let ws = Workspace::with_pipeline_data();
    let vis = finetuned(&ws);
    let out = run(&[
        "eval-cs",
        "--train",
        &ws.arg("train.tsv"),
        "--test",
        &ws.arg("test.tsv"),
        "--embeddings",
        vis.to_str().unwrap(),
        "--embeddings",
        &ws.arg("w2v.txt"),
        "--delta",
        "0.5",
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let report = stdout_of(&out);
    let ap_lines: Vec<&str> = report.lines().filter(|l| l.contains("\tAP\t")).collect();
    assert_eq!(ap_lines.len(), 2, "report:\n{report}");
    assert!(report.contains("vis.txt") && report.contains("w2v.txt"));
    for line in ap_lines {
        let ap: f64 = line.rsplit('\t').next().unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&ap));
    }
}

#[test]
fn separate_mode_round_trips_from_finetune_to_eval() {
    let ws = Workspace::with_pipeline_data();
    let w2v = ws.pretrain();
    let cmodel = ws.cluster();
    let res = run(&[
        "finetune",
        "--embeddings",
        w2v.to_str().unwrap(),
        "--features",
        &ws.arg("feats.csv"),
        "--tuples",
        &ws.arg("tuples.tsv"),
        "--cluster-model",
        cmodel.to_str().unwrap(),
        "--mode",
        "separate",
        "--epochs",
        "3",
        "--out",
        &ws.arg("vis.txt"),
    ]);
    assert!(res.status.success(), "{}", stderr_of(&res));

    let cs = run(&[
        "eval-cs",
        "--train",
        &ws.arg("train.tsv"),
        "--test",
        &ws.arg("test.tsv"),
        "--embeddings",
        &ws.arg("vis.txt"),
        "--mode",
        "separate",
    ]);
    assert!(cs.status.success(), "{}", stderr_of(&cs));
    assert!(stdout_of(&cs).contains("\tAP\t"));

    let ret = run(&[
        "retrieve",
        "--queries",
        &ws.arg("test.tsv"),
        "--database",
        &ws.arg("test.tsv"),
        "--embeddings",
        &ws.arg("vis.txt"),
        "--mode",
        "separate",
    ]);
    assert!(ret.status.success(), "{}", stderr_of(&ret));
    assert!(stdout_of(&ret).contains("medR\t"));

    // pointing separate mode at a base file without the .P/.R/.S trio fails
    let missing = run(&[
        "eval-cs",
        "--train",
        &ws.arg("train.tsv"),
        "--test",
        &ws.arg("test.tsv"),
        "--embeddings",
        w2v.to_str().unwrap(),
        "--mode",
        "separate",
    ]);
    assert_eq!(exit_code(&missing), 2);
}

#[test]
fn eval_cs_rejects_unlabelled_test_tuples() {
    let ws = Workspace::with_pipeline_data();
    let vis = finetuned(&ws);
    ws.write("unlabelled.tsv", "aa\tred\tblue\n");
    let out = run(&[
        "eval-cs",
        "--train",
        &ws.arg("train.tsv"),
        "--test",
        &ws.arg("unlabelled.tsv"),
        "--embeddings",
        vis.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 2);
    assert!(stderr_of(&out).contains("label"));
}

#[test]
fn eval_vp_reports_ap() {
    let ws = Workspace::with_pipeline_data();
    let vis = finetuned(&ws);
    ws.write(
        "vp.tsv",
        "aa red blue\taa red blue\t1\naa red blue\tcc dark pale\t0\nbb fast slow\tbb fast slow\t1\n",
    );
    let out = run(&[
        "eval-vp",
        "--test",
        &ws.arg("vp.tsv"),
        "--embeddings",
        vis.to_str().unwrap(),
        "--train",
        &ws.arg("vp.tsv"),
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let report = stdout_of(&out);
    assert!(report.lines().any(|l| l.starts_with("weights\t")));
    let ap_line = report
        .lines()
        .find(|l| l.starts_with("AP\t"))
        .expect("missing AP line");
    let ap: f64 = ap_line.split('\t').nth(1).unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&ap));
}

#[test]
fn retrieve_summary_lists_all_metrics() {
    let ws = Workspace::with_pipeline_data();
    let vis = finetuned(&ws);
    let out = run(&[
        "retrieve",
        "--queries",
        &ws.arg("test.tsv"),
        "--database",
        &ws.arg("test.tsv"),
        "--embeddings",
        vis.to_str().unwrap(),
        "--ranks-out",
        &ws.arg("ranks.tsv"),
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let report = stdout_of(&out);
    for metric in ["R@1\t", "R@5\t", "R@10\t", "medR\t"] {
        assert!(report.contains(metric), "missing {metric} in:\n{report}");
    }
    // a query identical to its target ranks first
    assert!(report.contains("R@1\t1.000000"));
    let ranks = fs::read_to_string(ws.path("ranks.tsv")).unwrap();
    assert_eq!(ranks.lines().count(), 3);
}

#[test]
fn retrieve_mismatched_counts_need_targets() {
    let ws = Workspace::with_pipeline_data();
    let vis = finetuned(&ws);
    ws.write("single.tsv", "aa\tred\tblue\n");
    let out = run(&[
        "retrieve",
        "--queries",
        &ws.arg("single.tsv"),
        "--database",
        &ws.arg("test.tsv"),
        "--embeddings",
        vis.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 2);
    assert!(stderr_of(&out).contains("--targets"));

    ws.write("targets.txt", "0\n");
    let out = run(&[
        "retrieve",
        "--queries",
        &ws.arg("single.tsv"),
        "--database",
        &ws.arg("test.tsv"),
        "--embeddings",
        vis.to_str().unwrap(),
        "--targets",
        &ws.arg("targets.txt"),
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
}

#[test]
fn cooccurrence_report_is_sorted_tsv() {
    let ws = Workspace::with_pipeline_data();
    let cmodel = ws.cluster();
    let out = run(&[
        "report-cooccurrence",
        "--features",
        &ws.arg("feats.csv"),
        "--tuples",
        &ws.arg("tuples.tsv"),
        "--cluster-model",
        cmodel.to_str().unwrap(),
        "--out",
        &ws.arg("cooc.tsv"),
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let report = stdout_of(&out);
    let rows: Vec<(String, String, usize)> = report
        .lines()
        .map(|l| {
            let mut cols = l.split('\t');
            (
                cols.next().unwrap().to_owned(),
                cols.next().unwrap().to_owned(),
                cols.next().unwrap().parse().unwrap(),
            )
        })
        .collect();
    // relations: red (with aa), fast (with bb) share the low cluster; dark is alone
    assert_eq!(rows.len(), 3);
    assert!(rows.windows(2).all(|w| w[0].2 >= w[1].2));
    assert_eq!(rows[0], ("fast".to_owned(), "red".to_owned(), 1));
    let file_copy = fs::read_to_string(ws.path("cooc.tsv")).unwrap();
    assert_eq!(file_copy, report);
}

#[test]
fn commands_do_not_mutate_inputs() {
    let ws = Workspace::with_pipeline_data();
    let before: Vec<(String, Vec<u8>)> = ["corpus.txt", "feats.csv", "text.txt", "tuples.tsv"]
        .iter()
        .map(|n| (n.to_string(), fs::read(ws.path(n)).unwrap()))
        .collect();
    let _ = finetuned(&ws);
    for (name, bytes) in before {
        assert_eq!(fs::read(ws.path(&name)).unwrap(), bytes, "{name} changed");
    }
}

#[test]
fn lemma_table_is_applied() {
    let ws = Workspace::new();
    ws.write("corpus.txt", &"boys eating cakes\n".repeat(40));
    ws.write("lemmas.tsv", "boys\tboy\neating\teat\ncakes\tcake\n");
    let res = run(&[
        "pretrain",
        "--corpus",
        &ws.arg("corpus.txt"),
        "--out",
        &ws.arg("w2v.txt"),
        "--n-hidden",
        "4",
        "--epochs",
        "1",
        "--lemmas",
        &ws.arg("lemmas.tsv"),
    ]);
    assert!(res.status.success(), "{}", stderr_of(&res));
    let model = visw2v::embedding::load_text(&ws.path("w2v.txt")).unwrap();
    assert!(model.vocab().contains("boy"));
    assert!(!model.vocab().contains("boys"));
}

#[test]
fn strategy_flag_accepts_winds_widths() {
    let ws = Workspace::with_pipeline_data();
    let w2v = ws.pretrain();
    let cmodel = ws.cluster();
    for strategy in ["words", "phrases", "sents", "winds:3", "descs"] {
        let res = run(&[
            "finetune",
            "--embeddings",
            w2v.to_str().unwrap(),
            "--features",
            &ws.arg("feats.csv"),
            "--text",
            &ws.arg("text.txt"),
            "--cluster-model",
            cmodel.to_str().unwrap(),
            "--strategy",
            strategy,
            "--epochs",
            "1",
            "--out",
            &ws.arg(&format!("vis-{}.txt", strategy.replace(':', "-"))),
        ]);
        assert!(res.status.success(), "strategy {strategy}: {}", stderr_of(&res));
    }
    let bad = run(&[
        "finetune",
        "--embeddings",
        w2v.to_str().unwrap(),
        "--features",
        &ws.arg("feats.csv"),
        "--text",
        &ws.arg("text.txt"),
        "--cluster-model",
        cmodel.to_str().unwrap(),
        "--strategy",
        "winds:0",
        "--out",
        &ws.arg("vis-bad.txt"),
    ]);
    assert_eq!(exit_code(&bad), 1);
}

#[test]
fn eval_cs_sweep_delta_reports_choice() {
    let ws = Workspace::with_pipeline_data();
    let vis = finetuned(&ws);
    let out = run(&[
        "eval-cs",
        "--train",
        &ws.arg("train.tsv"),
        "--test",
        &ws.arg("test.tsv"),
        "--sweep-delta",
        &ws.arg("test.tsv"),
        "--embeddings",
        vis.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let report = stdout_of(&out);
    assert!(
        report.lines().any(|l| l.contains("\tdelta\t")),
        "missing delta line:\n{report}"
    );
}

#[test]
fn outputs_parse_back_through_the_library() {
    let ws = Workspace::with_pipeline_data();
    let vis = finetuned(&ws);
    let model = visw2v::embedding::load_text(&vis).unwrap();
    assert_eq!(model.n_hidden(), 12);
    let cmodel = visw2v::clustering::load_cluster_model(&ws.path("cmodel.txt")).unwrap();
    assert_eq!(cmodel.n_clusters(), 2);
    assert!(Path::new(&ws.path("w2v.txt")).exists());
}
