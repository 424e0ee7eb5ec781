//! Command-line front end: `generate`, `train`, `eval`, `ablate`, `report`.
//!
//! Experiments are described by an optional TOML file:
//!
//! ```toml
//! profile = "desk"            # or "paper-scale"
//!
//! [data]
//! kind = "synthetic"          # or "folder" with `root = "..."`
//! seed = 0
//! [data.synth]
//! source_count = 64
//!
//! [train]
//! method = "tist"
//! tau = 0.85
//! ```
//!
//! Resolution order is profile defaults, then the file, then flags. The
//! resolved form is written into every run directory together with its hash.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure, 3 sweep finished
//! with failed runs.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{export_folder, generate_synthetic, load_folder_dataset, make_folds, Dataset, Domain, DomainShift, FolderLayout, SynthConfig};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, SegmentationNetwork};
use crate::report::{evaluate, relative_dice, sweep_report, table_markdown, DiceResult, SweepPoint};
use crate::trainer::{canonical_hash, train, History, Method, Profile, RunOptions, TrainConfig, TrainData, HISTORY_FILE, LAST_CHECKPOINT};

pub const OUTPUT_ROOT_ENV: &str = "TIST_OUTPUT_ROOT";
pub const EXPERIMENT_FILE: &str = "experiment.json";
pub const PLAN_FILE: &str = "plan.json";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_PARTIAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "tist", version, about = "Transformation-invariant self-training for segmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic source/target pair in the folder layout.
    Generate(GenerateArgs),
    /// Train one model.
    Train(TrainArgs),
    /// Score a checkpoint, optionally against a baseline.
    Eval(EvalArgs),
    /// Run a tau / labelled-fraction grid and report it.
    Ablate(AblateArgs),
    /// Rebuild a sweep report or tabulate finished runs.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ShiftArg {
    Default,
    None,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Output directory (default: `$TIST_OUTPUT_ROOT/data`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub shift: Option<ShiftArg>,
    #[arg(long)]
    pub source_count: Option<usize>,
    #[arg(long)]
    pub target_count: Option<usize>,
    /// Side length of the square images.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

/// Flags shared by `train` and `ablate`.
#[derive(Debug, Args, Default)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset root holding `source/` and `target/` in the folder layout.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub profile: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub fold: Option<usize>,
    /// Base channel width of the network.
    #[arg(long)]
    pub width: Option<usize>,
    /// Evaluate only after the last epoch.
    #[arg(long)]
    pub eval_final_only: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub exp: ExperimentArgs,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Share of the labelled source set to train on.
    #[arg(long)]
    pub fraction: Option<f64>,
    /// Run directory (default: `$TIST_OUTPUT_ROOT/<method>_tau<tau>_seed<seed>_<hash>`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue from a checkpoint; the run directory defaults to its parent.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Test,
    Train,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DomainArg {
    Source,
    Target,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset root; defaults to the data recorded next to the checkpoint.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[arg(long, value_enum, default_value = "target")]
    pub domain: DomainArg,
    /// Checkpoint of the run to report relative Dice against.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// Where `eval.json` and `eval.md` go (default: the checkpoint directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub exp: ExperimentArgs,
    #[arg(long, value_delimiter = ',', default_value = "st,tist")]
    pub methods: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "0.80,0.85,0.90,0.95")]
    pub taus: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1.0")]
    pub fractions: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    /// Sweep directory (default: `$TIST_OUTPUT_ROOT/sweep`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Sweep directory written by `ablate`.
    #[arg(long, conflicts_with = "runs")]
    pub sweep: Option<PathBuf>,
    /// Finished run directories to tabulate.
    #[arg(long, num_args = 1..)]
    pub runs: Vec<PathBuf>,
    /// Method used as the relative-Dice baseline in the table.
    #[arg(long, default_value = "supervised")]
    pub baseline: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Where the images come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    Synthetic {
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        synth: SynthConfig,
    },
    /// `root/source` and `root/target`, each in the folder layout.
    Folder {
        root: PathBuf,
        #[serde(default)]
        layout: FolderLayout,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            seed: 0,
            synth: SynthConfig::default(),
        }
    }
}

impl DataSource {
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        match self {
            DataSource::Synthetic { seed, synth } => generate_synthetic(synth, *seed),
            DataSource::Folder { root, layout } => Ok((
                load_folder_dataset(&root.join("source"), layout, Domain::Source)?,
                load_folder_dataset(&root.join("target"), layout, Domain::Target)?,
            )),
        }
    }
}

/// Fully resolved description of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub data: DataSource,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn hash(&self) -> String {
        canonical_hash(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if let DataSource::Synthetic { synth, .. } = &self.data {
            synth.validate()?;
            if synth.num_classes != self.train.model.num_classes {
                return Err(Error::InvalidConfig(format!(
                    "synthetic data has {} classes but the model has {}",
                    synth.num_classes, self.train.model.num_classes
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    profile: Option<Profile>,
    data: Option<DataSource>,
    train: Option<toml::Table>,
}

fn read_config_file(path: &Path) -> Result<ConfigFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Profile defaults, then the config file, then `exp` flags.
pub fn resolve_experiment(exp: &ExperimentArgs) -> Result<ExperimentConfig> {
    let file = match &exp.config {
        Some(p) => read_config_file(p)?,
        None => ConfigFile::default(),
    };
    let profile = match &exp.profile {
        Some(p) => p.parse()?,
        None => file.profile.unwrap_or_default(),
    };
    let mut train_value = serde_json::to_value(TrainConfig::for_profile(profile))?;
    if let Some(t) = file.train {
        merge(&mut train_value, serde_json::to_value(t)?);
    }
    let mut train: TrainConfig =
        serde_json::from_value(train_value).map_err(|e| Error::InvalidConfig(format!("[train]: {e}")))?;
    let mut data = file.data.unwrap_or_default();
    if let Some(root) = &exp.data {
        data = DataSource::Folder {
            root: root.clone(),
            layout: FolderLayout::default(),
        };
    }
    if let Some(v) = exp.epochs {
        train.epochs = v;
    }
    if let Some(v) = exp.lr {
        train.lr = v;
    }
    if let Some(v) = exp.batch_size {
        train.batch_size = v;
    }
    if let Some(v) = exp.fold {
        train.fold = v;
    }
    if let Some(v) = exp.width {
        train.model.base_width = v;
    }
    if let DataSource::Synthetic { synth, .. } = &data {
        if exp.config.is_none() {
            train.model.num_classes = synth.num_classes;
        }
    }
    train.data_tag = canonical_hash(&data);
    Ok(ExperimentConfig { profile, data, train })
}

fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn is_nonempty_dir(path: &Path) -> bool {
    fs::read_dir(path).map(|mut d| d.next().is_some()).unwrap_or(false)
}

fn refuse_existing(path: &Path, force: bool) -> Result<()> {
    if is_nonempty_dir(path) && !force {
        return Err(Error::InvalidConfig(format!(
            "{} exists and is not empty; pass --force to overwrite",
            path.display()
        )));
    }
    Ok(())
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<D: serde::de::DeserializeOwned>(path: &Path) -> Result<D> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Exit status of a command that ran to the end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Completion {
    Full,
    Partial,
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<Completion> {
    let (mut seed, mut synth) = match &args.config {
        Some(p) => match read_config_file(p)?.data {
            Some(DataSource::Synthetic { seed, synth }) => (seed, synth),
            Some(DataSource::Folder { .. }) => {
                return Err(Error::InvalidConfig("generate needs a synthetic data section".into()))
            }
            None => (0, SynthConfig::default()),
        },
        None => (0, SynthConfig::default()),
    };
    if let Some(s) = args.seed {
        seed = s;
    }
    match args.shift {
        Some(ShiftArg::None) => synth.shift = DomainShift::NONE,
        Some(ShiftArg::Default) => synth.shift = DomainShift::default(),
        None => {}
    }
    if let Some(n) = args.source_count {
        synth.source_count = n;
    }
    if let Some(n) = args.target_count {
        synth.target_count = n;
    }
    if let Some(n) = args.size {
        synth.height = n;
        synth.width = n;
    }
    if let Some(n) = args.classes {
        synth.num_classes = n;
    }
    synth.validate()?;
    let out = args.out.clone().unwrap_or_else(|| output_root().join("data"));
    refuse_existing(&out, args.force)?;
    let (source, target) = generate_synthetic(&synth, seed)?;
    let layout = FolderLayout::default();
    for (name, ds) in [("source", &source), ("target", &target)] {
        let dir = out.join(name);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        export_folder(ds, &dir, &layout)?;
    }
    let source_spec = DataSource::Synthetic { seed, synth };
    write_json(
        &out.join("manifest.json"),
        &serde_json::json!({
            "data": source_spec,
            "data_hash": canonical_hash(&source_spec),
            "source_count": source.len(),
            "target_count": target.len(),
            "layout": layout,
        }),
    )?;
    println!("wrote {} source and {} target samples to {}", source.len(), target.len(), out.display());
    Ok(Completion::Full)
}

fn run_name(cfg: &TrainConfig) -> String {
    let mut name = format!("{}_tau{}_seed{}", cfg.method, cfg.tau, cfg.seed);
    if cfg.labeled_fraction < 1.0 {
        name.push_str(&format!("_frac{}", cfg.labeled_fraction));
    }
    name
}

fn fold_data(exp: &ExperimentConfig) -> Result<TrainData> {
    let (source, target) = exp.data.load()?;
    let folds = make_folds(&source, &target, exp.train.folds, exp.train.seed)?;
    TrainData::from_split(&source, &target, &folds[exp.train.fold])
}

/// Trains one run into `dir` and writes its final evaluation.
fn run_training(exp: &ExperimentConfig, dir: &Path, resume: Option<PathBuf>, eval_final_only: bool) -> Result<History> {
    let data = fold_data(exp)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(
        &dir.join(EXPERIMENT_FILE),
        &serde_json::json!({ "experiment_hash": exp.hash(), "experiment": exp }),
    )?;
    let opts = RunOptions {
        out_dir: Some(dir.to_path_buf()),
        resume,
        stop_after: None,
        eval_final_only,
    };
    let outcome = train(&exp.train, &data, &opts)?;
    let target = if data.target_test.is_empty() {
        None
    } else {
        Some(evaluate(&outcome.model, &data.target_test, exp.train.eval_classes)?)
    };
    let source = if data.source_test.is_empty() {
        None
    } else {
        Some(evaluate(&outcome.model, &data.source_test, exp.train.eval_classes)?)
    };
    write_json(
        &dir.join("final_eval.json"),
        &serde_json::json!({ "config_hash": outcome.history.config_hash, "target": target, "source": source }),
    )?;
    Ok(outcome.history)
}

pub fn cmd_train(args: &TrainArgs) -> Result<Completion> {
    let mut exp = resolve_experiment(&args.exp)?;
    if let Some(m) = &args.method {
        exp.train.method = m.parse()?;
    }
    if let Some(t) = args.tau {
        exp.train.tau = t;
    }
    if let Some(s) = args.seed {
        exp.train.seed = s;
    }
    if let Some(f) = args.fraction {
        exp.train.labeled_fraction = f;
    }
    if args.resume.is_some() && args.force {
        return Err(Error::InvalidConfig("--resume and --force are mutually exclusive".into()));
    }
    exp.validate()?;
    let dir = match (&args.out, &args.resume) {
        (Some(d), _) => d.clone(),
        (None, Some(ck)) => ck.parent().map(Path::to_path_buf).unwrap_or_default(),
        (None, None) => output_root().join(format!("{}_{}", run_name(&exp.train), &exp.train.hash()[..8])),
    };
    if args.resume.is_none() {
        refuse_existing(&dir, args.force)?;
        for stale in ["metrics.jsonl", HISTORY_FILE, LAST_CHECKPOINT, "best.ckpt", "final_eval.json"] {
            let _ = fs::remove_file(dir.join(stale));
        }
    }
    let history = run_training(&exp, &dir, args.resume.clone(), args.exp.eval_final_only)?;
    println!(
        "{}: target dice {} source dice {} ({})",
        exp.train.method,
        fmt_pct(history.final_target_dice()),
        fmt_pct(history.final_source_dice()),
        dir.display()
    );
    Ok(Completion::Full)
}

fn fmt_pct(v: Option<f64>) -> String {
    v.map(|d| format!("{:.2}", 100.0 * d)).unwrap_or_else(|| "n/a".into())
}

/// Reads the experiment recorded next to a checkpoint, if any.
fn experiment_near(checkpoint: &Path) -> Option<ExperimentConfig> {
    let path = checkpoint.parent()?.join(EXPERIMENT_FILE);
    let v: Value = read_json(&path).ok()?;
    serde_json::from_value(v.get("experiment")?.clone()).ok()
}

fn checkpoint_config(ck: &Checkpoint) -> Result<TrainConfig> {
    serde_json::from_value(ck.meta.extra["config"].clone())
        .map_err(|e| Error::Checkpoint {
            path: PathBuf::new(),
            message: format!("no training config recorded: {e}"),
        })
}

fn eval_split(ck_path: &Path, args: &EvalArgs) -> Result<(TrainConfig, Dataset)> {
    let ck = Checkpoint::load(ck_path)?;
    let cfg = checkpoint_config(&ck)?;
    let data = match (&args.data, experiment_near(ck_path)) {
        (Some(root), _) => DataSource::Folder {
            root: root.clone(),
            layout: FolderLayout::default(),
        },
        (None, Some(exp)) => exp.data,
        (None, None) => {
            return Err(Error::InvalidConfig(format!(
                "no --data given and no {EXPERIMENT_FILE} next to {}",
                ck_path.display()
            )))
        }
    };
    let (source, target) = data.load()?;
    let folds = make_folds(&source, &target, cfg.folds, cfg.seed)?;
    let split = &folds[cfg.fold];
    let (pool, test, train) = match args.domain {
        DomainArg::Target => (&target, &split.test_ids, &split.train_target_ids),
        DomainArg::Source => (&source, &split.source_test_ids, &split.train_source_ids),
    };
    let ids = match args.split {
        SplitArg::Test => test.clone(),
        SplitArg::Train => train.clone(),
        SplitArg::All => pool.ids(),
    };
    Ok((cfg, pool.subset(&ids)?))
}

pub fn cmd_eval(args: &EvalArgs) -> Result<Completion> {
    let (cfg, set) = eval_split(&args.checkpoint, args)?;
    let (model, _) = Checkpoint::load(&args.checkpoint)?.restore()?;
    let result = evaluate(&model, &set, cfg.eval_classes)?;
    let mut rows = vec![(cfg.method.to_string(), vec![Some(100.0 * result.mean)])];
    let mut baseline_result: Option<DiceResult> = None;
    if let Some(b) = &args.baseline {
        let (bmodel, _) = Checkpoint::load(b)?.restore()?;
        if bmodel.config().num_classes != model.config().num_classes {
            return Err(Error::InvalidInput(format!(
                "baseline predicts {} classes, checkpoint {}",
                bmodel.config().num_classes,
                model.config().num_classes
            )));
        }
        let r = evaluate(&bmodel, &set, cfg.eval_classes)?;
        rows.insert(0, ("baseline".to_string(), vec![Some(100.0 * r.mean)]));
        baseline_result = Some(r);
    }
    let relative = baseline_result.as_ref().map(|b| relative_dice(100.0 * result.mean, 100.0 * b.mean));
    let out = args
        .out
        .clone()
        .or_else(|| args.checkpoint.parent().map(Path::to_path_buf))
        .unwrap_or_default();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    write_json(
        &out.join("eval.json"),
        &serde_json::json!({
            "checkpoint": args.checkpoint,
            "result": result,
            "baseline": baseline_result,
            "relative_dice": relative,
        }),
    )?;
    let task = format!("{:?} {:?}", args.domain, args.split).to_lowercase();
    let md = table_markdown(&[task], &rows, "baseline");
    fs::write(out.join("eval.md"), &md).map_err(|e| Error::io(out.join("eval.md"), e))?;
    print!("{md}");
    if !result.skipped.is_empty() {
        eprintln!("skipped {} image(s) with no scorable pixels", result.skipped.len());
    }
    Ok(Completion::Full)
}

/// One grid point of a sweep, as recorded in `plan.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedRun {
    pub method: Method,
    pub tau: f64,
    pub fraction: f64,
    pub seed: u64,
    pub dir: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub epochs: usize,
    pub runs: Vec<PlannedRun>,
}

fn collect_points(sweep_dir: &Path, plan: &SweepPlan) -> Vec<SweepPoint> {
    plan.runs
        .iter()
        .map(|r| SweepPoint::from_run_dir(&sweep_dir.join("runs").join(&r.dir), r.method, r.tau, r.fraction, r.seed, plan.epochs))
        .collect()
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<Completion> {
    let base = resolve_experiment(&args.exp)?;
    let methods: Vec<Method> = args.methods.iter().map(|m| m.parse()).collect::<Result<_>>()?;
    if methods.iter().any(|m| !m.uses_target()) {
        return Err(Error::InvalidConfig("ablate compares st and tist only".into()));
    }
    if methods.is_empty() || args.taus.is_empty() || args.fractions.is_empty() || args.seeds.is_empty() {
        return Err(Error::InvalidConfig("empty sweep grid".into()));
    }
    let mut grid = Vec::new();
    for &method in &methods {
        for &fraction in &args.fractions {
            for &tau in &args.taus {
                for &seed in &args.seeds {
                    let mut exp = base.clone();
                    exp.train.method = method;
                    exp.train.tau = tau;
                    exp.train.seed = seed;
                    exp.train.labeled_fraction = fraction;
                    exp.validate()?;
                    grid.push(exp);
                }
            }
        }
    }
    let out = args.out.clone().unwrap_or_else(|| output_root().join("sweep"));
    refuse_existing(&out, args.force)?;
    let plan = SweepPlan {
        epochs: base.train.epochs,
        runs: grid
            .iter()
            .map(|e| PlannedRun {
                method: e.train.method,
                tau: e.train.tau,
                fraction: e.train.labeled_fraction,
                seed: e.train.seed,
                dir: format!("{}_frac{}", run_name(&e.train), e.train.labeled_fraction),
            })
            .collect(),
    };
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    write_json(&out.join(PLAN_FILE), &plan)?;
    let mut failures = 0;
    for (exp, run) in grid.iter().zip(&plan.runs) {
        let dir = out.join("runs").join(&run.dir);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        match run_training(exp, &dir, None, args.exp.eval_final_only) {
            Ok(h) => println!("{}: target dice {}", run.dir, fmt_pct(h.final_target_dice())),
            Err(e) => {
                failures += 1;
                eprintln!("{}: failed: {e}", run.dir);
            }
        }
    }
    let report = sweep_report(&collect_points(&out, &plan), &out.join("report"))?;
    println!("report written to {}", out.join("report").display());
    Ok(if failures > 0 || !report.is_complete() {
        Completion::Partial
    } else {
        Completion::Full
    })
}

pub fn cmd_report(args: &ReportArgs) -> Result<Completion> {
    if let Some(sweep) = &args.sweep {
        let plan: SweepPlan = read_json(&sweep.join(PLAN_FILE))?;
        let out = args.out.clone().unwrap_or_else(|| sweep.join("report"));
        let report = sweep_report(&collect_points(sweep, &plan), &out)?;
        println!("report written to {}", out.display());
        return Ok(if report.is_complete() { Completion::Full } else { Completion::Partial });
    }
    if args.runs.is_empty() {
        return Err(Error::InvalidConfig("pass --sweep DIR or --runs DIR...".into()));
    }
    let mut rows = Vec::new();
    for dir in &args.runs {
        let h = History::load(&dir.join(HISTORY_FILE))?;
        let label = if h.method == Method::Supervised {
            h.method.to_string()
        } else {
            format!("{} (tau={})", h.method, h.tau)
        };
        rows.push((label, vec![h.final_target_dice().map(|d| 100.0 * d)]));
    }
    let md = table_markdown(&["target".to_string()], &rows, &args.baseline);
    if let Some(out) = &args.out {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        fs::write(out.join("table.md"), &md).map_err(|e| Error::io(out.join("table.md"), e))?;
    }
    print!("{md}");
    Ok(Completion::Full)
}

pub fn dispatch(cli: &Cli) -> Result<Completion> {
    match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Report(a) => cmd_report(a),
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(Completion::Full) => EXIT_OK,
        Ok(Completion::Partial) => EXIT_PARTIAL,
        Err(e @ Error::InvalidConfig(_)) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}
