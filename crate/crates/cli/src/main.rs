use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use svdrank::annotation::AnnotationService;
use svdrank::dataset::{
    load_corpus, load_labels, make_split, subsample_training, Corpus, LabelSet, Source, SplitPlan, Svd, Utterance,
};
use svdrank::features::{self, load_feature_store, save_pooled_feature, save_spectrogram, FeatureStore, InputKind};
use svdrank::metrics::{pseudo_f, tallies_from_labels, upper_bound_estimate, MetricReport, PseudoF, ResponseTally};
use svdrank::scorer::{self, load_checkpoint, save_checkpoint, Architecture, ScorerParameters};
use svdrank::synth::{self, LabelCounts, SynthConfig};
use svdrank::training::{
    run_experiment, train_acr, train_ccr, ExperimentConfig, Hyperparams, ModelSpec, PairEvaluator, TrainMode,
    DEFAULT_TEST_PAIRS,
};

#[derive(Debug, Parser)]
#[command(
    name = "svdrank",
    version,
    about = "Train and evaluate subjective voice descriptor scorers from ACR and CCR labels",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Level-normalize audio and write spectrogram (.svds) and pooled (.svdf) features.
    Extract(ExtractArgs),
    /// Generate a synthetic corpus with known latent scores and simulated labels.
    Synth(SynthArgs),
    /// Draw a speaker-disjoint train/test split.
    Split(SplitArgs),
    /// Train one scorer.
    Train(TrainArgs),
    /// Compute ppref (and upper bounds) for a trained scorer.
    Eval(EvalArgs),
    /// Estimate ppref upper bounds from inter-annotator agreement.
    Agreement(AgreementArgs),
    /// Pseudo-F of speaker-grouped ACR ratings or model scores.
    PseudoF(PseudoFArgs),
    /// Label-efficiency sweep over training sizes, label modes and seeds.
    Experiment(ExperimentArgs),
    /// Serve the annotation HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Acr,
    Ccr,
}

impl From<ModeArg> for TrainMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Acr => TrainMode::Acr,
            ModeArg::Ccr => TrainMode::Ccr,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ArchArg {
    #[value(name = "pooled_fc")]
    PooledFc,
    #[value(name = "conv_pool")]
    ConvPool,
}

impl From<ArchArg> for Architecture {
    fn from(a: ArchArg) -> Self {
        match a {
            ArchArg::PooledFc => Architecture::PooledFc,
            ArchArg::ConvPool => Architecture::ConvPool,
        }
    }
}

/// Where the corpus lives.
#[derive(Debug, Args)]
struct CorpusArgs {
    /// Corpus root; relative source paths in the manifest resolve against it.
    #[arg(long, env = "SVDRANK_DATA_DIR")]
    data_dir: Option<PathBuf>,
    /// Manifest file [default: <data-dir>/manifest.jsonl].
    #[arg(long)]
    manifest: Option<PathBuf>,
}

impl CorpusArgs {
    fn manifest(&self) -> Result<PathBuf> {
        match (&self.manifest, &self.data_dir) {
            (Some(m), _) => Ok(m.clone()),
            (None, Some(d)) => Ok(d.join("manifest.jsonl")),
            (None, None) => bail!("either --manifest or --data-dir (SVDRANK_DATA_DIR) is required"),
        }
    }

    fn root(&self) -> Result<PathBuf> {
        match &self.data_dir {
            Some(d) => Ok(d.clone()),
            None => Ok(self.manifest()?.parent().map(Path::to_path_buf).unwrap_or_default()),
        }
    }

    fn load(&self) -> Result<Corpus> {
        let path = self.manifest()?;
        load_corpus(&path).with_context(|| format!("loading manifest {}", path.display()))
    }
}

#[derive(Debug, Args)]
struct LabelArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Label file [default: <data-dir>/labels.jsonl].
    #[arg(long, env = "SVDRANK_LABELS")]
    labels: Option<PathBuf>,
    /// Descriptor id; youthfulF, youthfulM and resonantM carry a gender scope.
    #[arg(long)]
    svd: String,
}

impl LabelArgs {
    fn labels_path(&self) -> Result<PathBuf> {
        match &self.labels {
            Some(p) => Ok(p.clone()),
            None => Ok(self.corpus.root()?.join("labels.jsonl")),
        }
    }

    fn load(&self) -> Result<(Corpus, LabelSet, Svd)> {
        let corpus = self.corpus.load()?;
        let path = self.labels_path()?;
        let labels = load_labels(&path, &corpus).with_context(|| format!("loading labels {}", path.display()))?;
        Ok((corpus, labels, Svd::resolve(&self.svd)))
    }
}

#[derive(Debug, Args)]
struct HyperArgs {
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 6)]
    batch: usize,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0.3)]
    dropout: f64,
}

impl HyperArgs {
    fn hyperparams(&self, seeds: Vec<u64>) -> Result<Hyperparams> {
        let hp = Hyperparams {
            learning_rate: self.lr,
            batch_size: self.batch,
            epochs: self.epochs,
            dropout: self.dropout,
            seeds,
            ..Hyperparams::default()
        };
        hp.validate()?;
        Ok(hp)
    }
}

#[derive(Debug, Args)]
struct ExtractArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Output directory for features and the rewritten manifest.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = features::DEFAULT_TARGET_DBFS, allow_negative_numbers = true)]
    target_dbfs: f64,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value = "synthetic")]
    svd: String,
    #[arg(long, default_value_t = 200)]
    speakers: usize,
    #[arg(long, default_value_t = 3)]
    utts_per_speaker: usize,
    #[arg(long, default_value_t = 3)]
    sentences: usize,
    #[arg(long, default_value_t = 32)]
    feature_dim: usize,
    #[arg(long, default_value_t = 0.2)]
    sigma_jitter: f64,
    #[arg(long, default_value_t = 0.4)]
    sigma_label: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma_feature: f64,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    #[arg(long, default_value_t = 16)]
    frames: usize,
    #[arg(long, default_value_t = LabelCounts::default().acr)]
    n_acr: usize,
    #[arg(long, default_value_t = LabelCounts::default().ccr)]
    n_ccr: usize,
    /// Common questions answered by the simulated panel.
    #[arg(long, default_value_t = 50)]
    panel_questions: usize,
    /// Simulated panel size; 0 skips the panel.
    #[arg(long, default_value_t = 50)]
    panel_annotators: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[command(flatten)]
    labels: LabelArgs,
    /// Number of training speakers [default: 75% of eligible speakers].
    #[arg(long)]
    train_speakers: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    labels: LabelArgs,
    #[arg(long, value_enum)]
    mode: ModeArg,
    #[arg(long, value_enum, default_value = "pooled_fc")]
    arch: ArchArg,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Split plan; drawn with --split-seed when absent.
    #[arg(long)]
    plan: Option<PathBuf>,
    #[arg(long)]
    train_speakers: Option<usize>,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    /// Subsample this many training labels.
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint output.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch report (JSON).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    labels: LabelArgs,
    #[arg(long)]
    model: PathBuf,
    /// Evaluate on the plan's test labels; otherwise on every CCR label of the descriptor.
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Minimum answers per ordered pair for the agreement bound.
    #[arg(long, default_value_t = 2)]
    min_responses: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AgreementArgs {
    /// Tally file (JSON list of {a1, a2, a3, a4}, or a panel file from `synth`).
    #[arg(long, conflicts_with_all = ["labels", "svd"])]
    tallies: Option<PathBuf>,
    /// Label file to tally by ordered pair.
    #[arg(long, env = "SVDRANK_LABELS", requires = "svd")]
    labels: Option<PathBuf>,
    #[arg(long)]
    svd: Option<String>,
    #[arg(long, default_value_t = 2)]
    min_responses: u64,
}

#[derive(Debug, Args)]
struct PseudoFArgs {
    #[command(flatten)]
    labels: LabelArgs,
    /// Group model scores instead of ACR ratings.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[command(flatten)]
    labels: LabelArgs,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "acr,ccr")]
    modes: Vec<ModeArg>,
    #[arg(long, value_delimiter = ',', default_value = "125,250,500,1000,2000,4000,5000")]
    sizes: Vec<usize>,
    /// Number of training seeds per cell.
    #[arg(long, default_value_t = 5)]
    seeds: usize,
    /// First training seed; seeds are seed, seed+1, ...
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "pooled_fc")]
    arch: ArchArg,
    #[command(flatten)]
    hyper: HyperArgs,
    #[arg(long)]
    train_speakers: Option<usize>,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    /// Cap on strong and on weak test pairs.
    #[arg(long, default_value_t = DEFAULT_TEST_PAIRS)]
    test_pairs: usize,
    #[arg(long)]
    out: PathBuf,
    /// Write one checkpoint per (mode, size, seed) here.
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Label file receiving accepted answers [default: <data-dir>/labels.jsonl].
    #[arg(long, env = "SVDRANK_LABELS")]
    labels: Option<PathBuf>,
    /// Session store [default: <data-dir>/sessions.json].
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long, env = "SVDRANK_PORT", default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Extract(a) => extract(a),
        Command::Synth(a) => synth_cmd(a),
        Command::Split(a) => split(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Agreement(a) => agreement(a),
        Command::PseudoF(a) => pseudo_f_cmd(a),
        Command::Experiment(a) => experiment(a),
        Command::Serve(a) => serve(a),
    }
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn extract(a: ExtractArgs) -> Result<()> {
    let corpus = a.corpus.load()?;
    let root = a.corpus.root()?;
    let feature_dir = a.out_dir.join("features");
    fs::create_dir_all(&feature_dir).with_context(|| format!("creating {}", feature_dir.display()))?;
    let mut out = Vec::with_capacity(corpus.len());
    for u in corpus.utterances() {
        let rel = PathBuf::from("features").join(format!("{}.svdf", u.id));
        let dest = a.out_dir.join(&rel);
        match &u.source {
            Source::Audio(_) => {
                let path = features::source_path(&root, u);
                let wav = features::read_wav(&path).with_context(|| format!("reading {}", path.display()))?;
                let normalized =
                    features::level_normalize(&wav, a.target_dbfs).with_context(|| format!("normalizing {}", u.id))?;
                let spec = features::stft_magnitude(&normalized).with_context(|| format!("analysing {}", u.id))?;
                save_spectrogram(dest.with_extension("svds"), &spec)?;
                save_pooled_feature(&dest, &spec.time_average())?;
            }
            Source::Feature(_) => {
                // Already extracted: copy both representations that exist.
                let pooled = features::load_input(&root, u, InputKind::Pooled)?;
                if let features::ModelInput::Pooled(p) = pooled {
                    save_pooled_feature(&dest, &p)?;
                }
                if let Ok(features::ModelInput::Spectrogram(s)) = features::load_input(&root, u, InputKind::Spectrogram)
                {
                    save_spectrogram(dest.with_extension("svds"), &s)?;
                }
            }
        }
        out.push(Utterance {
            source: Source::Feature(rel),
            ..u.clone()
        });
    }
    let manifest = a.out_dir.join("manifest.jsonl");
    let mut buf = Vec::new();
    Corpus::from_utterances(out)?.write_manifest(&mut buf)?;
    fs::write(&manifest, buf)?;
    eprintln!("extracted {} utterances into {}", corpus.len(), a.out_dir.display());
    Ok(())
}

#[derive(Serialize)]
struct PanelFile {
    questions: Vec<(String, String)>,
    tallies: Vec<ResponseTally>,
    analytic: synth::AnalyticAgreement,
}

fn synth_cmd(a: SynthArgs) -> Result<()> {
    let config = SynthConfig {
        n_speakers: a.speakers,
        utts_per_speaker: a.utts_per_speaker,
        n_sentences: a.sentences,
        feature_dim: a.feature_dim,
        sigma_jitter: a.sigma_jitter,
        sigma_label: a.sigma_label,
        tau: a.tau,
        sigma_feature: a.sigma_feature,
        spectrogram_frames: a.frames,
    };
    let svd = Svd::resolve(&a.svd);
    let counts = LabelCounts {
        acr: a.n_acr,
        ccr: a.n_ccr,
    };
    let ds = synth::generate_dataset(&config, &svd, &counts, a.seed)?;
    synth::write_dataset(&ds, &a.out_dir)?;
    if a.panel_annotators > 0 && a.panel_questions > 0 {
        let questions = synth::sample_questions(&ds.corpus, &svd, a.panel_questions, a.seed)?;
        let tallies = synth::simulate_panel(&ds.world, &questions, a.panel_annotators, a.seed)?;
        let analytic = synth::analytic_agreement(&ds.world, &questions, a.panel_annotators)?;
        write_json(
            Some(&a.out_dir.join("panel.json")),
            &PanelFile {
                questions,
                tallies,
                analytic,
            },
        )?;
    }
    eprintln!(
        "wrote {} utterances and {} labels to {}",
        ds.corpus.len(),
        ds.labels.len(),
        a.out_dir.display()
    );
    Ok(())
}

fn default_train_speakers(corpus: &Corpus, svd: &Svd) -> usize {
    let eligible = corpus
        .speakers()
        .filter(|(_, idx)| {
            idx.iter()
                .any(|&i| svd.gender_scope.admits(corpus.utterances()[i].gender))
        })
        .count();
    (eligible * 3).div_ceil(4)
}

fn split(a: SplitArgs) -> Result<()> {
    let (corpus, labels, svd) = a.labels.load()?;
    let n = a
        .train_speakers
        .unwrap_or_else(|| default_train_speakers(&corpus, &svd));
    let plan = make_split(&corpus, &labels, &svd, n, a.seed)?;
    plan.audit(&corpus, &labels).context("split audit")?;
    plan.save(&a.out)?;
    eprintln!(
        "{} training speakers; train ACR {}, train CCR {}, test CCR {}",
        plan.train_speakers.len(),
        plan.train_acr.len(),
        plan.train_ccr.len(),
        plan.test_ccr.len()
    );
    Ok(())
}

fn input_kind(arch: Architecture) -> InputKind {
    match arch {
        Architecture::PooledFc => InputKind::Pooled,
        Architecture::ConvPool => InputKind::Spectrogram,
    }
}

fn load_features(corpus: &Corpus, root: &Path, svd: &Svd, arch: Architecture) -> Result<FeatureStore> {
    load_feature_store(corpus, root, input_kind(arch), |u| svd.gender_scope.admits(u.gender))
        .context("loading features")
}

fn plan_for(
    corpus: &Corpus,
    labels: &LabelSet,
    svd: &Svd,
    plan: Option<&Path>,
    train_speakers: Option<usize>,
    seed: u64,
) -> Result<SplitPlan> {
    let plan = match plan {
        Some(p) => SplitPlan::load(p).with_context(|| format!("loading plan {}", p.display()))?,
        None => {
            let n = train_speakers.unwrap_or_else(|| default_train_speakers(corpus, svd));
            make_split(corpus, labels, svd, n, seed)?
        }
    };
    ensure!(
        plan.svd == svd.id,
        "plan is for descriptor {:?}, not {:?}",
        plan.svd,
        svd.id
    );
    plan.audit(corpus, labels).context("split audit")?;
    Ok(plan)
}

fn train(a: TrainArgs) -> Result<()> {
    let (corpus, labels, svd) = a.labels.load()?;
    let arch = Architecture::from(a.arch);
    let mode = TrainMode::from(a.mode);
    let hp = a.hyper.hyperparams(vec![a.seed])?;
    let mut plan = plan_for(
        &corpus,
        &labels,
        &svd,
        a.plan.as_deref(),
        a.train_speakers,
        a.split_seed,
    )?;
    match mode {
        TrainMode::Acr => plan.train_ccr.clear(),
        TrainMode::Ccr => plan.train_acr.clear(),
    }
    if let Some(n) = a.n_train {
        plan = subsample_training(&plan, n, svdrank::rng::derive_seed(a.seed, &[n as u64]))?;
    }
    let features = load_features(&corpus, &a.labels.corpus.root()?, &svd, arch)?;
    let test: Vec<_> = plan.test_ccr.iter().filter_map(|&i| labels.ccr(i)).collect();
    let evaluator = PairEvaluator::new(test.iter().copied(), &features)?;
    let model = ModelSpec::default_for(arch).init(&features, a.seed)?;
    let hook = |epoch: usize, p: &ScorerParameters| {
        let s = evaluator.evaluate(p, &features)?;
        eprintln!(
            "epoch {:>3}  ppref_strong {}  ppref_weak {}",
            epoch,
            fmt_opt(s.strong),
            fmt_opt(s.weak)
        );
        Ok(s)
    };
    let (model, reports) = match mode {
        TrainMode::Acr => {
            let train: Vec<_> = plan.train_acr.iter().filter_map(|&i| labels.acr(i).cloned()).collect();
            ensure!(!train.is_empty(), "no ACR training labels for {}", svd.id);
            train_acr(model, &train, &features, &hp, a.seed, hook)?
        }
        TrainMode::Ccr => {
            let train: Vec<_> = plan.train_ccr.iter().filter_map(|&i| labels.ccr(i).cloned()).collect();
            ensure!(!train.is_empty(), "no CCR training labels for {}", svd.id);
            train_ccr(model, &train, &features, &hp, a.seed, hook)?
        }
    };
    save_checkpoint(&a.out, &model)?;
    if let Some(p) = &a.report {
        write_json(Some(p), &reports)?;
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |v| format!("{v:.4}"))
}

fn eval(a: EvalArgs) -> Result<()> {
    let (corpus, labels, svd) = a.labels.load()?;
    let model = load_checkpoint(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let features = load_features(&corpus, &a.labels.corpus.root()?, &svd, model.arch())?;
    let test: Vec<_> = match &a.plan {
        Some(p) => plan_for(&corpus, &labels, &svd, Some(p), None, 0)?
            .test_ccr
            .iter()
            .filter_map(|&i| labels.ccr(i))
            .collect(),
        None => labels.ccr_labels(&svd.id).map(|(_, c)| c).collect(),
    };
    ensure!(!test.is_empty(), "no CCR labels to evaluate for {}", svd.id);
    let evaluator = PairEvaluator::new(test.iter().copied(), &features)?;
    let predictions = evaluator.predictions(&model, &features)?;
    let tallies = tallies_from_labels(&labels, &svd.id, a.min_responses);
    let bound = upper_bound_estimate(&tallies).ok();
    let report = MetricReport::from_predictions(&svd.id, &predictions, bound.as_ref());
    write_json(a.out.as_deref(), &report)
}

fn read_tallies(path: &Path) -> Result<Vec<ResponseTally>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let list = match value.get("tallies") {
        Some(t) => t.clone(),
        None => value,
    };
    serde_json::from_value(list).context("tally file must hold a list of {a1, a2, a3, a4}")
}

#[derive(Serialize)]
struct AgreementReport {
    questions: usize,
    ub_strong: Option<f64>,
    ub_weak: Option<f64>,
    strong_questions: usize,
    weak_questions: usize,
}

fn agreement(a: AgreementArgs) -> Result<()> {
    let tallies = match (&a.tallies, &a.labels, &a.svd) {
        (Some(path), _, _) => read_tallies(path)?,
        (None, Some(labels), Some(svd)) => {
            let text = fs::read(labels).with_context(|| format!("reading {}", labels.display()))?;
            let set = svdrank::dataset::parse_labels(text.as_slice(), &labels.display().to_string())?;
            tallies_from_labels(&set, svd, a.min_responses)
        }
        _ => bail!("pass --tallies, or --labels together with --svd"),
    };
    let ub = upper_bound_estimate(&tallies)?;
    write_json(
        None,
        &AgreementReport {
            questions: tallies.len(),
            ub_strong: ub.strong,
            ub_weak: ub.weak,
            strong_questions: ub.strong_questions,
            weak_questions: ub.weak_questions,
        },
    )
}

fn pseudo_f_cmd(a: PseudoFArgs) -> Result<()> {
    let (corpus, labels, svd) = a.labels.load()?;
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    match &a.model {
        None => {
            for (_, l) in labels.acr_labels(&svd.id) {
                let speaker = corpus.speaker_of(&l.utterance_id).expect("validated on load");
                groups.entry(speaker.to_string()).or_default().push(l.rating as f64);
            }
        }
        Some(path) => {
            let model = load_checkpoint(path)?;
            let features = load_features(&corpus, &a.labels.corpus.root()?, &svd, model.arch())?;
            for u in corpus.utterances().iter().filter(|u| features.contains_key(&u.id)) {
                groups
                    .entry(u.speaker_id.clone())
                    .or_default()
                    .push(scorer::score(&model, &features[&u.id])?);
            }
        }
    }
    let groups: Vec<Vec<f64>> = groups.into_values().collect();
    let value = match pseudo_f(&groups)? {
        PseudoF::Finite(v) => serde_json::json!(v),
        PseudoF::Infinite => serde_json::json!("inf"),
    };
    let n: usize = groups.iter().map(Vec::len).sum();
    write_json(
        None,
        &serde_json::json!({ "svd": svd.id, "groups": groups.len(), "n": n, "pseudo_f": value }),
    )
}

fn experiment(a: ExperimentArgs) -> Result<()> {
    ensure!(a.seeds >= 1, "--seeds must be at least 1");
    let (corpus, labels, svd) = a.labels.load()?;
    let arch = Architecture::from(a.arch);
    let seeds: Vec<u64> = (0..a.seeds as u64).map(|k| a.seed + k).collect();
    let hp = a.hyper.hyperparams(seeds)?;
    let features = load_features(&corpus, &a.labels.corpus.root()?, &svd, arch)?;
    let config = ExperimentConfig {
        train_speakers: a
            .train_speakers
            .unwrap_or_else(|| default_train_speakers(&corpus, &svd)),
        svd,
        sizes: a.sizes,
        modes: a.modes.into_iter().map(TrainMode::from).collect(),
        model: ModelSpec::default_for(arch),
        hyperparams: hp,
        split_seed: a.split_seed,
        test_pairs_per_variant: Some(a.test_pairs),
        keep_models: a.checkpoint_dir.is_some(),
    };
    let result = run_experiment(&corpus, &labels, &features, &config)?;
    result.plan.audit(&corpus, &labels).context("split audit")?;

    let mut out = Vec::new();
    writeln!(
        out,
        "# svdrank experiment generated {}",
        chrono::Utc::now().to_rfc3339()
    )?;
    result.write_csv(&mut out)?;
    fs::write(&a.out, out).with_context(|| format!("writing {}", a.out.display()))?;

    if let Some(dir) = &a.checkpoint_dir {
        fs::create_dir_all(dir)?;
        for r in &result.runs {
            if let Some(m) = &r.model {
                let name = format!("{}_{}_{}_n{}_seed{}.svdm", result.svd, r.mode, arch, r.n_train, r.seed);
                save_checkpoint(dir.join(name), m)?;
            }
        }
    }
    for s in &result.summaries {
        eprintln!(
            "{:<4} n={:<5} ppref_strong {} ± {}  ppref_weak {} ± {}",
            s.mode,
            s.n_train,
            fmt_opt(s.mean_strong),
            fmt_opt(s.std_strong),
            fmt_opt(s.mean_weak),
            fmt_opt(s.std_weak)
        );
    }
    eprintln!(
        "test pairs: {} strong, {} weak; results in {}",
        result.n_test_strong,
        result.n_test_weak,
        a.out.display()
    );
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let corpus = a.corpus.load()?;
    let root = a.corpus.root()?;
    let labels = a.labels.clone().unwrap_or_else(|| root.join("labels.jsonl"));
    let store = a.store.clone().unwrap_or_else(|| root.join("sessions.json"));
    let service = Arc::new(AnnotationService::open(corpus, root, store, labels, a.seed)?);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port))
            .await
            .with_context(|| format!("binding {}:{}", a.host, a.port))?;
        println!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, svdrank_cli::server::router(service)).await?;
        Ok(())
    })
}
