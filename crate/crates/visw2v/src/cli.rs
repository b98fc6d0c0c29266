//! Subcommand front end: pretrain → cluster → finetune → evaluate, each
//! stage seeded and reproducible. Commands exit 0 on success, 1 on usage
//! errors, and 2 on data errors; no command mutates its input files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use visw2v::clustering::{self, ClusterModel};
use visw2v::corpus::{
    self, LemmaTable, MultimodalPair, Role, Tuple, WindowStrategy,
};
use visw2v::embedding::{self, EmbeddingModel, RoleModels};
use visw2v::evaluation::{self, CommonSenseConfig, RankedResult, ScoringMode, VpWeights};
use visw2v::grounding::{self, GroundingConfig};
use visw2v::pretrain::{self, PretrainConfig};

pub enum CliError {
    Usage(String),
    Data(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Data(e.into())
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Parser)]
#[command(
    name = "visw2v",
    version,
    about = "Visually grounded word embeddings: pretrain, cluster, finetune, evaluate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train base CBOW embeddings on a plain-text corpus
    Pretrain(PretrainArgs),
    /// Fit the grouping function: K-means over feature vectors, optional PCA
    Cluster(ClusterArgs),
    /// Fine-tune embeddings to predict surrogate visual classes
    Finetune(FinetuneArgs),
    /// Score tuple plausibility against a set of plausible tuples
    EvalCs(EvalCsArgs),
    /// Score visual-paraphrase description pairs
    EvalVp(EvalVpArgs),
    /// Rank a tuple database against query tuples
    Retrieve(RetrieveArgs),
    /// Count relation pairs sharing clusters
    ReportCooccurrence(ReportCooccurrenceArgs),
}

#[derive(Args)]
struct PretrainArgs {
    /// Text corpus, one document per line
    #[arg(long)]
    corpus: PathBuf,
    /// Output embedding file
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "n-hidden", default_value_t = 100)]
    n_hidden: usize,
    /// Context tokens taken on each side of the center token
    #[arg(long = "context-radius", default_value_t = 5)]
    context_radius: usize,
    /// Negative samples per center token
    #[arg(long, default_value_t = 5)]
    negatives: usize,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long = "min-count", default_value_t = 1)]
    min_count: u64,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Optional TSV word→lemma table applied after tokenization
    #[arg(long)]
    lemmas: Option<PathBuf>,
}

#[derive(Args)]
struct ClusterArgs {
    /// Feature CSV, one vector per row
    #[arg(long)]
    features: PathBuf,
    /// Number of clusters K
    #[arg(long)]
    clusters: usize,
    /// Output cluster-model file
    #[arg(long)]
    out: PathBuf,
    /// Optional per-row label TSV
    #[arg(long = "labels-out")]
    labels_out: Option<PathBuf>,
    /// Apply PCA first, retaining this fraction of variance
    #[arg(long)]
    pca: Option<f64>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long = "max-iter", default_value_t = 100)]
    max_iter: usize,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
}

#[derive(Args)]
struct FinetuneArgs {
    /// Pretrained embedding file (text format)
    #[arg(long)]
    embeddings: PathBuf,
    /// Feature CSV aligned with the text records
    #[arg(long)]
    features: PathBuf,
    /// Multimodal text: one record per line, tab-separated sentences
    #[arg(long)]
    text: Option<PathBuf>,
    /// Tuple TSV (primary, relation, secondary); required for separate mode
    #[arg(long)]
    tuples: Option<PathBuf>,
    /// Fitted cluster-model file
    #[arg(long = "cluster-model")]
    cluster_model: PathBuf,
    /// Expected cluster count; must match the cluster model when given
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long, default_value = "words")]
    strategy: WindowStrategy,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    /// shared: one model for all roles; separate: one per role (.P/.R/.S)
    #[arg(long, default_value = "shared")]
    mode: ScoringMode,
    /// Output embedding file (suffixed .P/.R/.S in separate mode)
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch mean NLL log (TSV: epoch, mean_nll)
    #[arg(long = "loss-out")]
    loss_out: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Keep the record order fixed instead of shuffling each epoch
    #[arg(long = "no-shuffle")]
    no_shuffle: bool,
    #[arg(long)]
    lemmas: Option<PathBuf>,
}

#[derive(Args)]
struct EvalCsArgs {
    /// Plausible training tuples (TSV)
    #[arg(long)]
    train: PathBuf,
    /// Labelled test tuples (TSV with 0/1 label column)
    #[arg(long)]
    test: PathBuf,
    /// Embedding file to evaluate; repeat to compare several models
    #[arg(long, required = true)]
    embeddings: Vec<PathBuf>,
    #[arg(long, default_value = "shared")]
    mode: ScoringMode,
    /// Hinge threshold subtracted from every pair score
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
    /// Use raw dot products instead of normalized element embeddings
    #[arg(long = "no-normalize")]
    no_normalize: bool,
    /// Pick delta by sweeping [0,3] step 0.1 on these labelled tuples
    #[arg(long = "sweep-delta")]
    sweep_delta: Option<PathBuf>,
    /// Per-tuple score TSV (model, index, score, label)
    #[arg(long = "scores-out")]
    scores_out: Option<PathBuf>,
    #[arg(long)]
    lemmas: Option<PathBuf>,
}

#[derive(Args)]
struct EvalVpArgs {
    /// Description pairs: two tab-separated descriptions plus a 0/1 label
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    /// Labelled pairs used to fit the scorer weights
    #[arg(long)]
    train: Option<PathBuf>,
    /// Embedding-cosine weight when no training split is given
    #[arg(long = "w-emb", default_value_t = 1.0)]
    w_emb: f64,
    /// Term-frequency-cosine weight when no training split is given
    #[arg(long = "w-tf", default_value_t = 1.0)]
    w_tf: f64,
    #[arg(long, default_value_t = 0.0)]
    bias: f64,
    #[arg(long)]
    lemmas: Option<PathBuf>,
}

#[derive(Args)]
struct RetrieveArgs {
    /// Query tuples (TSV)
    #[arg(long)]
    queries: PathBuf,
    /// Database tuples (TSV); row i is query i's target unless --targets is given
    #[arg(long)]
    database: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long, default_value = "shared")]
    mode: ScoringMode,
    /// One 0-based database index per line, aligned with the queries
    #[arg(long)]
    targets: Option<PathBuf>,
    /// Per-query rank TSV (query, target, rank)
    #[arg(long = "ranks-out")]
    ranks_out: Option<PathBuf>,
    #[arg(long)]
    lemmas: Option<PathBuf>,
}

#[derive(Args)]
struct ReportCooccurrenceArgs {
    #[arg(long)]
    features: PathBuf,
    /// Tuple TSV supplying the relation annotation per feature row
    #[arg(long)]
    tuples: PathBuf,
    #[arg(long = "cluster-model")]
    cluster_model: PathBuf,
    /// Optional output file; the report always goes to stdout
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    lemmas: Option<PathBuf>,
}

pub fn main() -> u8 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            1
        }
        Err(CliError::Data(e)) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Pretrain(args) => cmd_pretrain(args),
        Command::Cluster(args) => cmd_cluster(args),
        Command::Finetune(args) => cmd_finetune(args),
        Command::EvalCs(args) => cmd_eval_cs(args),
        Command::EvalVp(args) => cmd_eval_vp(args),
        Command::Retrieve(args) => cmd_retrieve(args),
        Command::ReportCooccurrence(args) => cmd_report_cooccurrence(args),
    }
}

fn require_inputs(paths: &[Option<&PathBuf>]) -> Result<(), CliError> {
    for path in paths.iter().flatten() {
        if !path.exists() {
            return Err(CliError::Data(anyhow!(
                "input file not found: {}",
                path.display()
            )));
        }
    }
    Ok(())
}

fn load_lemmas(path: Option<&PathBuf>) -> Result<Option<LemmaTable>, CliError> {
    Ok(match path {
        Some(p) => Some(corpus::load_lemma_table(p)?),
        None => None,
    })
}

fn create_out(path: &Path) -> Result<BufWriter<File>, CliError> {
    let file = File::create(path)
        .with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn suffixed(path: &Path, role: Role) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".");
    name.push(role.suffix());
    PathBuf::from(name)
}

fn write_loss_log(path: &Path, losses: &[f64]) -> Result<(), CliError> {
    let mut out = create_out(path)?;
    for (epoch, loss) in losses.iter().enumerate() {
        writeln!(out, "{}\t{loss:.8e}", epoch + 1).context("writing loss log")?;
    }
    out.flush().context("writing loss log")?;
    Ok(())
}

fn cmd_pretrain(args: PretrainArgs) -> Result<(), CliError> {
    require_inputs(&[Some(&args.corpus), args.lemmas.as_ref()])?;
    let lemmas = load_lemmas(args.lemmas.as_ref())?;
    let docs = corpus::load_corpus(&args.corpus, lemmas.as_ref())?;
    let config = PretrainConfig {
        n_hidden: args.n_hidden,
        context_radius: args.context_radius,
        negatives: args.negatives,
        learning_rate: args.lr,
        epochs: args.epochs,
        min_count: args.min_count,
        seed: args.seed,
    };
    let model = pretrain::train_cbow(&docs, &config)?;
    embedding::save_text(&model, &args.out)?;
    eprintln!(
        "pretrained {} words x {} dims -> {}",
        model.vocab().len(),
        model.n_hidden(),
        args.out.display()
    );
    Ok(())
}

fn cmd_cluster(args: ClusterArgs) -> Result<(), CliError> {
    require_inputs(&[Some(&args.features)])?;
    let rows = corpus::load_features(&args.features)?;
    let matrix = clustering::feature_matrix(&rows)?;
    let model = clustering::fit_cluster_model(
        &matrix,
        args.clusters,
        args.seed,
        args.max_iter,
        args.restarts,
        args.pca,
    )?;
    clustering::save_cluster_model(&model, &args.out)?;
    if let Some(labels_path) = &args.labels_out {
        let mut out = create_out(labels_path)?;
        for row in matrix.outer_iter() {
            writeln!(out, "{}", model.assign(row)?).context("writing labels")?;
        }
        out.flush().context("writing labels")?;
    }
    eprintln!(
        "clustered {} rows into {} classes -> {}",
        matrix.nrows(),
        model.n_clusters(),
        args.out.display()
    );
    Ok(())
}

/// Builds one pair per tuple element, all sharing the tuple's feature row,
/// so the Words/Phrases strategies act per element.
fn element_pairs(
    features: Vec<Vec<f64>>,
    tuples: &[Tuple],
    role: Option<Role>,
) -> Result<Vec<MultimodalPair>, CliError> {
    if features.len() != tuples.len() {
        return Err(CliError::Data(anyhow!(
            "row count mismatch: {} feature rows vs {} tuples",
            features.len(),
            tuples.len()
        )));
    }
    let roles: Vec<Role> = match role {
        Some(r) => vec![r],
        None => Role::ALL.to_vec(),
    };
    let mut pairs = Vec::new();
    for (feat, tuple) in features.into_iter().zip(tuples) {
        for &r in &roles {
            pairs.push(MultimodalPair::new(
                feat.clone(),
                vec![tuple.element(r).to_vec()],
            )?);
        }
    }
    Ok(pairs)
}

fn load_cluster_model_checked(
    path: &Path,
    expected_k: Option<usize>,
) -> Result<ClusterModel, CliError> {
    let model = clustering::load_cluster_model(path)?;
    if let Some(k) = expected_k {
        if k != model.n_clusters() {
            return Err(CliError::Data(anyhow!(
                "--clusters {k} does not match the cluster model's {} classes",
                model.n_clusters()
            )));
        }
    }
    Ok(model)
}

fn cmd_finetune(args: FinetuneArgs) -> Result<(), CliError> {
    if args.text.is_some() == args.tuples.is_some() {
        return Err(usage("provide exactly one of --text or --tuples"));
    }
    if args.mode == ScoringMode::Separate && args.tuples.is_none() {
        return Err(usage("--mode separate needs --tuples to know each word's role"));
    }
    require_inputs(&[
        Some(&args.embeddings),
        Some(&args.features),
        args.text.as_ref(),
        args.tuples.as_ref(),
        Some(&args.cluster_model),
        args.lemmas.as_ref(),
    ])?;
    let lemmas = load_lemmas(args.lemmas.as_ref())?;
    let clusters = load_cluster_model_checked(&args.cluster_model, args.clusters)?;
    let base_config = GroundingConfig {
        learning_rate: args.lr,
        epochs: args.epochs,
        strategy: args.strategy,
        n_classes: clusters.n_clusters(),
        seed: args.seed,
        shuffle: !args.no_shuffle,
    };

    match (&args.text, &args.tuples, args.mode) {
        (Some(text), None, ScoringMode::Shared) => {
            let pairs = corpus::load_multimodal(&args.features, text, lemmas.as_ref())?;
            let mut model = pretrain::import_pretrained(&args.embeddings)?;
            let losses = grounding::finetune(&mut model, &pairs, &clusters, &base_config)?;
            embedding::save_text(&model, &args.out)?;
            if let Some(log) = &args.loss_out {
                write_loss_log(log, &losses)?;
            }
            eprintln!("finetuned -> {}", args.out.display());
        }
        (None, Some(tuples_path), ScoringMode::Shared) => {
            let features = corpus::load_features(&args.features)?;
            let tuples = corpus::load_tuples(tuples_path, lemmas.as_ref())?;
            let pairs = element_pairs(features, &tuples, None)?;
            let mut model = pretrain::import_pretrained(&args.embeddings)?;
            let losses = grounding::finetune(&mut model, &pairs, &clusters, &base_config)?;
            embedding::save_text(&model, &args.out)?;
            if let Some(log) = &args.loss_out {
                write_loss_log(log, &losses)?;
            }
            eprintln!("finetuned -> {}", args.out.display());
        }
        (None, Some(tuples_path), ScoringMode::Separate) => {
            let features = corpus::load_features(&args.features)?;
            let tuples = corpus::load_tuples(tuples_path, lemmas.as_ref())?;
            for (i, role) in Role::ALL.into_iter().enumerate() {
                let pairs = element_pairs(features.clone(), &tuples, Some(role))?;
                let mut model = pretrain::import_pretrained(&args.embeddings)?;
                let config = GroundingConfig {
                    // decorrelate the three runs while staying reproducible
                    seed: args.seed.wrapping_add(i as u64),
                    ..base_config.clone()
                };
                let losses = grounding::finetune(&mut model, &pairs, &clusters, &config)?;
                let out = suffixed(&args.out, role);
                embedding::save_text(&model, &out)?;
                if let Some(log) = &args.loss_out {
                    write_loss_log(&suffixed(log, role), &losses)?;
                }
                eprintln!("finetuned role {role} -> {}", out.display());
            }
        }
        _ => unreachable!("combinations rejected above"),
    }
    Ok(())
}

fn load_role_models(path: &Path, mode: ScoringMode) -> Result<RoleModels, CliError> {
    match mode {
        ScoringMode::Shared => Ok(RoleModels::Shared(embedding::load_text(path)?)),
        ScoringMode::Separate => {
            let load = |role: Role| -> Result<EmbeddingModel, CliError> {
                let p = suffixed(path, role);
                if !p.exists() {
                    return Err(CliError::Data(anyhow!(
                        "separate mode expects {}, which does not exist",
                        p.display()
                    )));
                }
                Ok(embedding::load_text(&p)?)
            };
            Ok(RoleModels::separate(
                load(Role::Primary)?,
                load(Role::Relation)?,
                load(Role::Secondary)?,
            )?)
        }
    }
}

fn labelled_tuples(path: &Path, lemmas: Option<&LemmaTable>) -> Result<Vec<Tuple>, CliError> {
    let tuples = corpus::load_tuples(path, lemmas)?;
    for (i, t) in tuples.iter().enumerate() {
        if t.label.is_none() {
            return Err(CliError::Data(anyhow!(
                "tuple row {} in {} has no 0/1 label",
                i + 1,
                path.display()
            )));
        }
    }
    Ok(tuples)
}

fn cmd_eval_cs(args: EvalCsArgs) -> Result<(), CliError> {
    require_inputs(&[
        Some(&args.train),
        Some(&args.test),
        args.sweep_delta.as_ref(),
        args.lemmas.as_ref(),
    ])?;
    let lemmas = load_lemmas(args.lemmas.as_ref())?;
    let train = corpus::load_tuples(&args.train, lemmas.as_ref())?;
    if train.is_empty() {
        return Err(CliError::Data(anyhow!("training tuple set is empty")));
    }
    let test = labelled_tuples(&args.test, lemmas.as_ref())?;
    let validation = match &args.sweep_delta {
        Some(p) => Some(labelled_tuples(p, lemmas.as_ref())?),
        None => None,
    };
    let normalize = !args.no_normalize;

    let stdout = std::io::stdout();
    let mut report = stdout.lock();
    let mut scores_out = match &args.scores_out {
        Some(p) => Some(create_out(p)?),
        None => None,
    };

    for path in &args.embeddings {
        let models = load_role_models(path, args.mode)?;
        let delta = match &validation {
            Some(val) => {
                let (best_delta, _) =
                    evaluation::sweep_delta(&models, &train, val, normalize)?;
                writeln!(report, "{}\tdelta\t{best_delta:.1}", path.display())
                    .context("writing report")?;
                best_delta
            }
            None => args.delta,
        };
        let config = CommonSenseConfig { delta, normalize };
        let mut scores = Vec::with_capacity(test.len());
        let mut labels = Vec::with_capacity(test.len());
        for (i, tuple) in test.iter().enumerate() {
            let score = evaluation::cs_plausibility(&models, tuple, &train, &config)
                .with_context(|| format!("test tuple {}", i + 1))?;
            scores.push(score);
            labels.push(tuple.label.expect("validated above"));
            if let Some(out) = scores_out.as_mut() {
                writeln!(
                    out,
                    "{}\t{}\t{score:.8e}\t{}",
                    path.display(),
                    i + 1,
                    u8::from(tuple.label.expect("validated above"))
                )
                .context("writing scores")?;
            }
        }
        let ap = evaluation::average_precision(&scores, &labels)?;
        writeln!(report, "{}\tAP\t{ap:.6}", path.display()).context("writing report")?;
    }
    if let Some(out) = scores_out.as_mut() {
        out.flush().context("writing scores")?;
    }
    Ok(())
}

fn load_vp_pairs(
    path: &Path,
    lemmas: Option<&LemmaTable>,
) -> Result<Vec<evaluation::VpExample>, CliError> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut pairs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = i + 1;
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(CliError::Data(anyhow!(
                "line {row}: expected 'description<TAB>description<TAB>label', found {} columns",
                cols.len()
            )));
        }
        let mut a = corpus::tokenize(cols[0]);
        let mut b = corpus::tokenize(cols[1]);
        if let Some(table) = lemmas {
            corpus::apply_lemmas(&mut a, table);
            corpus::apply_lemmas(&mut b, table);
        }
        if a.is_empty() || b.is_empty() {
            return Err(CliError::Data(anyhow!(
                "line {row}: a description is empty after tokenization"
            )));
        }
        let label = match cols[2].trim() {
            "0" => false,
            "1" => true,
            other => {
                return Err(CliError::Data(anyhow!(
                    "line {row}: label must be 0 or 1, found '{other}'"
                )))
            }
        };
        pairs.push((a, b, label));
    }
    if pairs.is_empty() {
        return Err(CliError::Data(anyhow!(
            "{} contains no description pairs",
            path.display()
        )));
    }
    Ok(pairs)
}

fn cmd_eval_vp(args: EvalVpArgs) -> Result<(), CliError> {
    require_inputs(&[
        Some(&args.test),
        Some(&args.embeddings),
        args.train.as_ref(),
        args.lemmas.as_ref(),
    ])?;
    let lemmas = load_lemmas(args.lemmas.as_ref())?;
    let model = embedding::load_text(&args.embeddings)?;
    let test = load_vp_pairs(&args.test, lemmas.as_ref())?;

    let weights = match &args.train {
        Some(train_path) => {
            let train = load_vp_pairs(train_path, lemmas.as_ref())?;
            evaluation::fit_vp_weights(&model, &train)?
        }
        None => VpWeights {
            w_emb: args.w_emb,
            w_tf: args.w_tf,
            bias: args.bias,
        },
    };

    let mut scores = Vec::with_capacity(test.len());
    let mut labels = Vec::with_capacity(test.len());
    for (i, (a, b, label)) in test.iter().enumerate() {
        let score = evaluation::vp_score(&model, a, b, &weights)
            .with_context(|| format!("description pair {}", i + 1))?;
        scores.push(score);
        labels.push(*label);
    }
    let ap = evaluation::average_precision(&scores, &labels)?;

    println!(
        "weights\t{:.8e}\t{:.8e}\t{:.8e}",
        weights.w_emb, weights.w_tf, weights.bias
    );
    println!("AP\t{ap:.6}");
    Ok(())
}

fn load_targets(path: &Path, n_queries: usize, db_len: usize) -> Result<Vec<usize>, CliError> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut targets = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let t: usize = line.trim().parse().map_err(|_| {
            CliError::Data(anyhow!("line {}: invalid target index '{line}'", i + 1))
        })?;
        if t >= db_len {
            return Err(CliError::Data(anyhow!(
                "line {}: target {t} outside database of {db_len} tuples",
                i + 1
            )));
        }
        targets.push(t);
    }
    if targets.len() != n_queries {
        return Err(CliError::Data(anyhow!(
            "{} targets for {} queries",
            targets.len(),
            n_queries
        )));
    }
    Ok(targets)
}

fn cmd_retrieve(args: RetrieveArgs) -> Result<(), CliError> {
    // in separate mode --embeddings is a prefix; load_role_models checks the trio
    let embeddings_input = (args.mode == ScoringMode::Shared).then_some(&args.embeddings);
    require_inputs(&[
        Some(&args.queries),
        Some(&args.database),
        embeddings_input,
        args.targets.as_ref(),
        args.lemmas.as_ref(),
    ])?;
    let lemmas = load_lemmas(args.lemmas.as_ref())?;
    let queries = corpus::load_tuples(&args.queries, lemmas.as_ref())?;
    let database = corpus::load_tuples(&args.database, lemmas.as_ref())?;
    if database.is_empty() {
        return Err(CliError::Data(anyhow!("database is empty")));
    }
    let targets = match &args.targets {
        Some(p) => load_targets(p, queries.len(), database.len())?,
        None => {
            if queries.len() != database.len() {
                return Err(CliError::Data(anyhow!(
                    "{} queries vs {} database tuples; provide --targets to align them",
                    queries.len(),
                    database.len()
                )));
            }
            (0..queries.len()).collect()
        }
    };
    let models = load_role_models(&args.embeddings, args.mode)?;

    let mut results: Vec<RankedResult> = Vec::with_capacity(queries.len());
    for (i, query) in queries.iter().enumerate() {
        let res = evaluation::retrieve(&models, i, query, &database, targets[i], args.mode)
            .with_context(|| format!("query {}", i + 1))?;
        results.push(res);
    }

    if let Some(ranks_path) = &args.ranks_out {
        let mut out = create_out(ranks_path)?;
        for r in &results {
            writeln!(
                out,
                "{}\t{}\t{}",
                r.query_id, targets[r.query_id], r.target_rank
            )
            .context("writing ranks")?;
        }
        out.flush().context("writing ranks")?;
    }

    for k in [1, 5, 10] {
        println!("R@{k}\t{:.6}", evaluation::recall_at_k(&results, k));
    }
    println!("medR\t{}", evaluation::median_rank(&results));
    Ok(())
}

fn cmd_report_cooccurrence(args: ReportCooccurrenceArgs) -> Result<(), CliError> {
    require_inputs(&[
        Some(&args.features),
        Some(&args.tuples),
        Some(&args.cluster_model),
        args.lemmas.as_ref(),
    ])?;
    let lemmas = load_lemmas(args.lemmas.as_ref())?;
    let features = corpus::load_features(&args.features)?;
    let tuples = corpus::load_tuples(&args.tuples, lemmas.as_ref())?;
    if features.len() != tuples.len() {
        return Err(CliError::Data(anyhow!(
            "row count mismatch: {} feature rows vs {} tuples",
            features.len(),
            tuples.len()
        )));
    }
    let clusters = clustering::load_cluster_model(&args.cluster_model)?;

    // each pair carries its tuple as P/R/S segments; the relation is segment 1
    let pairs: Vec<MultimodalPair> = features
        .into_iter()
        .zip(&tuples)
        .map(|(f, t)| {
            MultimodalPair::new(
                f,
                vec![
                    t.primary.clone(),
                    t.relation.clone(),
                    t.secondary.clone(),
                ],
            )
        })
        .collect::<Result<_, _>>()?;
    let report = grounding::cooccurrence_report(&pairs, &clusters, |p| {
        p.segment(1).map(|s| s.join(" "))
    })?;

    let mut file_out = match &args.out {
        Some(p) => Some(create_out(p)?),
        None => None,
    };
    for (a, b, count) in &report {
        println!("{a}\t{b}\t{count}");
        if let Some(out) = file_out.as_mut() {
            writeln!(out, "{a}\t{b}\t{count}").context("writing report")?;
        }
    }
    if let Some(out) = file_out.as_mut() {
        out.flush().context("writing report")?;
    }
    Ok(())
}
