//! The `coopens` subcommands. Every command resolves its settings (config
//! file, then flags), validates them, and only then loads data or computes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use coopens_core::data::{Domain, SynthConfig};
use coopens_core::distill::{distill_train, DistillConfig};
use coopens_core::episodic::{AggregateMode, CentroidKind, EvalConfig};
use coopens_core::gradcheck::suite::{run_suite, SuiteOptions, TOLERANCE};
use coopens_core::models::EnsembleParams;
use coopens_core::rng;
use coopens_core::training::{train_ensemble, Strategy, TrainConfig, TrainLog, Validation};
use sha2::{Digest, Sha256};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::corpus::{load_corpus, synth_corpus, Corpus};
use crate::error::{Error, Result};
use crate::kv;
use crate::parallel;
use crate::report::{collect_reports, table, ReportFile};
use crate::settings::Settings;

/// Declares a flag group: every field becomes an optional `--long` flag and
/// a config key of the same name.
macro_rules! options {
    ($(#[$m:meta])* $name:ident { $( $(#[$fm:meta])* $field:ident : $ty:ty ),* $(,)? }) => {
        $(#[$m])*
        #[derive(Args, Clone, Debug, Default)]
        pub struct $name {
            $( $(#[$fm])* #[arg(long)] pub $field: Option<$ty>, )*
        }

        impl $name {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($field)),*];

            pub fn overrides(&self) -> Vec<(&'static str, String)> {
                let mut out = Vec::new();
                $( if let Some(v) = &self.$field { out.push((stringify!($field), v.to_string())); } )*
                out
            }
        }
    };
}

options!(SynthOpts {
    /// Generator seed
    seed: u64,
    /// Number of classes (>= 10)
    classes: usize,
    /// Images per class (>= 30)
    per_class: usize,
    /// Side of the square images, 16..=64
    image_size: usize,
    /// standard | shifted
    domain: String,
    /// Output directory
    out: String,
});

options!(TrainOpts {
    /// Master seed for every random stream
    seed: u64,
    lr: f64,
    weight_decay: f64,
    batch_size: usize,
    /// Epochs without validation improvement before a drop, then a stop
    patience: usize,
    lr_drop_factor: f64,
    max_epochs: usize,
    /// Enable training augmentation
    augment: bool,
    crop_lo: f64,
    crop_hi: f64,
    jitter: f64,
    noise: f64,
    /// Probability of leaving a member out of a step
    member_drop: f64,
    /// Dropout before the classification head
    dropout: f64,
    /// Give each member its own augmented view
    per_member_augment: bool,
    val_episodes: usize,
    val_way: usize,
    val_shot: usize,
    /// Draw new validation episodes every epoch
    resample_validation: bool,
});

options!(EnsembleOpts {
    /// Dataset directory
    data: String,
    /// Checkpoint path, or output directory with --grid
    out: String,
    /// Training log path (default: <out>.log)
    log: String,
    /// independent | diversity | cooperation | robust
    strategy: String,
    /// Ensemble size
    k: usize,
    /// none | cosine-diversity | symkl-cooperation | l2-diversity | l2-cooperation | negcos-cooperation
    penalty: String,
    gamma: f64,
    /// Compare full softmax(z/T) vectors in the penalty
    temperature_probe: f64,
    /// Comma-separated member seeds (overrides derivation from --seed)
    member_seeds: String,
    /// Train every strategy for each size in --grid-k
    grid: bool,
    grid_k: String,
});

options!(EvalOpts {
    checkpoint: String,
    /// Dataset directory
    data: String,
    /// Evaluate on this corpus instead of --data (domain shift)
    dataset_b: String,
    /// test | val | train
    split: String,
    episodes: usize,
    way: usize,
    shot: usize,
    query: usize,
    /// average | vote
    mode: String,
    /// mean | learned
    centroid: String,
    centroid_steps: usize,
    centroid_lr: f64,
    seed: u64,
    /// Worker threads; results do not depend on it
    threads: usize,
    /// Report path (default: stdout)
    out: String,
    /// Label for the report table
    strategy: String,
});

options!(DistillOpts {
    /// Teacher ensemble checkpoint
    teacher: String,
    data: String,
    /// Student checkpoint path
    out: String,
    log: String,
    temperature: f64,
    alpha: f64,
    /// Dataset directory of extra unlabeled images
    unlabeled_pool: String,
    unlabeled_per_batch: usize,
    /// Width multiplier of the student
    width: f64,
    #[arg(hide = true)]
    printed_sign: bool,
});

options!(ReportOpts {
    /// Directory of *.report files
    reports: String,
    /// Table path (default: stdout)
    out: String,
    /// tab | comma | a single character
    delimiter: String,
});

options!(GradcheckOpts {
    #[arg(hide = true)]
    inject_fault: bool,
});

#[derive(Parser, Debug)]
#[command(
    name = "coopens",
    version,
    about = "Few-shot ensembles with cooperation/diversity penalties"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug)]
pub struct SynthDataArgs {
    /// key=value config file; flags take precedence
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub opts: SynthOpts,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub ensemble: EnsembleOpts,
    #[command(flatten)]
    pub train: TrainOpts,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub opts: EvalOpts,
}

#[derive(Args, Debug)]
pub struct DistillArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub distill: DistillOpts,
    #[command(flatten)]
    pub train: TrainOpts,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub opts: ReportOpts,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub opts: GradcheckOpts,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic corpus: IDX image/label files and a manifest
    SynthData(SynthDataArgs),
    /// Train an ensemble (or a strategy x K grid) on the train classes
    Train(TrainArgs),
    /// Few-shot episodic evaluation of a checkpoint
    Eval(EvalArgs),
    /// Distill an ensemble checkpoint into a single network
    Distill(DistillArgs),
    /// Join evaluation reports into a strategy x K table
    Report(ReportArgs),
    /// Check every gradient against central finite differences
    Gradcheck(GradcheckArgs),
}

/// Core parameter names that differ from the flag that sets them.
const FLAG_NAMES: &[(&str, &str)] = &[
    ("n_classes", "classes"),
    ("n_members", "k"),
    ("member_drop_prob", "member-drop"),
    ("dropout_before_head", "dropout"),
    ("crop_fraction_range", "crop-lo/--crop-hi"),
    ("color_jitter_strength", "jitter"),
    ("noise_std", "noise"),
    ("n_way", "way"),
    ("k_shot", "shot"),
    ("n_episodes", "episodes"),
    ("split", "data"),
];

/// Rephrase a validation failure in terms of the offending flag.
fn flagged(e: coopens_core::Error) -> Error {
    flagged_with(e, &[])
}

fn flagged_with(e: coopens_core::Error, local: &[(&str, &str)]) -> Error {
    match e {
        coopens_core::Error::Parameter { name, reason } => {
            let flag = local
                .iter()
                .chain(FLAG_NAMES)
                .find(|(n, _)| *n == name)
                .map_or_else(|| name.replace('_', "-"), |(_, f)| f.to_string());
            Error::Usage(format!("--{flag}: {reason}"))
        }
        other => Error::Core(other),
    }
}

/// A flag group's config keys and the values given on the command line.
type Group<'a> = (&'a [&'a str], Vec<(&'static str, String)>);

fn resolve(config: Option<&Path>, groups: &[Group<'_>]) -> Result<Settings> {
    let keys: Vec<&str> = groups.iter().flat_map(|(k, _)| k.iter().copied()).collect();
    let overrides = groups.iter().flat_map(|(_, o)| o.iter().cloned()).collect();
    Settings::resolve(config, &keys, overrides)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthData(a) => {
            let s = resolve(a.config.as_deref(), &[(SynthOpts::KEYS, a.opts.overrides())])?;
            cmd_synth_data(&s)
        }
        Command::Train(a) => {
            let s = resolve(
                a.config.as_deref(),
                &[
                    (EnsembleOpts::KEYS, a.ensemble.overrides()),
                    (TrainOpts::KEYS, a.train.overrides()),
                ],
            )?;
            cmd_train(&s)
        }
        Command::Eval(a) => {
            let s = resolve(a.config.as_deref(), &[(EvalOpts::KEYS, a.opts.overrides())])?;
            cmd_eval(&s)
        }
        Command::Distill(a) => {
            let s = resolve(
                a.config.as_deref(),
                &[
                    (DistillOpts::KEYS, a.distill.overrides()),
                    (TrainOpts::KEYS, a.train.overrides()),
                ],
            )?;
            cmd_distill(&s)
        }
        Command::Report(a) => {
            let s = resolve(a.config.as_deref(), &[(ReportOpts::KEYS, a.opts.overrides())])?;
            cmd_report(&s)
        }
        Command::Gradcheck(a) => cmd_gradcheck(a.opts.inject_fault.unwrap_or(false)),
    }
}

pub fn cmd_synth_data(s: &Settings) -> Result<()> {
    let domain: String = s.get("domain", "standard".to_string())?;
    let cfg = SynthConfig {
        seed: s.get("seed", 0)?,
        n_classes: s.get("classes", 40)?,
        per_class: s.get("per_class", 50)?,
        image_size: s.get("image_size", 32)?,
        domain: Domain::from_token(&domain)
            .ok_or_else(|| Error::Usage(format!("--domain: unknown domain `{domain}`")))?,
    };
    let out: String = s.require("out")?;
    cfg.validate()
        .map_err(|e| flagged_with(e, &[("height", "image-size"), ("width", "image-size")]))?;
    let d = synth_corpus(Path::new(&out), &cfg)?;
    println!("wrote {} images of {} classes to {out}", d.len(), d.n_classes());
    Ok(())
}

/// Shared optimizer, schedule, augmentation and validation settings on top
/// of `base`.
pub fn apply_train_opts(s: &Settings, base: TrainConfig) -> Result<TrainConfig> {
    let mut c = base;
    c.master_seed = s.get("seed", c.master_seed)?;
    c.lr = s.get("lr", c.lr)?;
    c.weight_decay = s.get("weight_decay", c.weight_decay)?;
    c.batch_size = s.get("batch_size", c.batch_size)?;
    c.patience = s.get("patience", c.patience)?;
    c.lr_drop_factor = s.get("lr_drop_factor", c.lr_drop_factor)?;
    c.max_epochs = s.get("max_epochs", c.max_epochs)?;
    c.augment.enabled = s.get("augment", c.augment.enabled)?;
    let (lo, hi) = c.augment.crop_fraction_range;
    c.augment.crop_fraction_range = (s.get("crop_lo", lo)?, s.get("crop_hi", hi)?);
    c.augment.color_jitter_strength = s.get("jitter", c.augment.color_jitter_strength)?;
    c.augment.noise_std = s.get("noise", c.augment.noise_std)?;
    c.robust.member_drop_prob = s.get("member_drop", c.robust.member_drop_prob)?;
    c.robust.dropout_before_head = s.get("dropout", c.robust.dropout_before_head)?;
    c.robust.per_member_augmentation = s.get("per_member_augment", c.robust.per_member_augmentation)?;
    c.val_episodes = s.get("val_episodes", c.val_episodes)?;
    c.val_n_way = s.get("val_way", c.val_n_way)?;
    c.val_k_shot = s.get("val_shot", c.val_k_shot)?;
    c.resample_validation = s.get("resample_validation", c.resample_validation)?;
    Ok(c)
}

fn strategy(s: &Settings) -> Result<Strategy> {
    match s.raw("strategy") {
        None => Ok(Strategy::Independent),
        Some(v) => Strategy::from_token(v).ok_or_else(|| Error::Usage(format!("--strategy: unknown strategy `{v}`"))),
    }
}

/// Effective configuration of one ensemble run, as settings for `train`.
pub fn ensemble_config(s: &Settings, strategy: Strategy, k: usize) -> Result<TrainConfig> {
    let mut c = apply_train_opts(s, TrainConfig::for_strategy(strategy, k, 0))?;
    c.penalty = s.get("penalty", c.penalty)?;
    c.gamma = s.get("gamma", c.gamma)?;
    c.temperature_probe = s.opt("temperature_probe")?;
    c.member_seeds = s.list("member_seeds")?;
    c.validate().map_err(flagged)?;
    Ok(c)
}

/// The effective configuration as `key=value` lines accepted by `train`.
pub fn config_text(c: &TrainConfig) -> String {
    let mut out = String::new();
    kv::line(&mut out, "k", c.n_members);
    kv::line(&mut out, "penalty", c.penalty);
    kv::line(&mut out, "gamma", c.gamma);
    if let Some(t) = c.temperature_probe {
        kv::line(&mut out, "temperature_probe", t);
    }
    kv::line(&mut out, "member_seeds", kv::join(&c.seeds()));
    kv::line(&mut out, "seed", c.master_seed);
    kv::line(&mut out, "lr", c.lr);
    kv::line(&mut out, "weight_decay", c.weight_decay);
    kv::line(&mut out, "batch_size", c.batch_size);
    kv::line(&mut out, "patience", c.patience);
    kv::line(&mut out, "lr_drop_factor", c.lr_drop_factor);
    kv::line(&mut out, "max_epochs", c.max_epochs);
    kv::line(&mut out, "augment", c.augment.enabled);
    kv::line(&mut out, "crop_lo", c.augment.crop_fraction_range.0);
    kv::line(&mut out, "crop_hi", c.augment.crop_fraction_range.1);
    kv::line(&mut out, "jitter", c.augment.color_jitter_strength);
    kv::line(&mut out, "noise", c.augment.noise_std);
    kv::line(&mut out, "member_drop", c.robust.member_drop_prob);
    kv::line(&mut out, "dropout", c.robust.dropout_before_head);
    kv::line(&mut out, "per_member_augment", c.robust.per_member_augmentation);
    kv::line(&mut out, "val_episodes", c.val_episodes);
    kv::line(&mut out, "val_way", c.val_n_way);
    kv::line(&mut out, "val_shot", c.val_k_shot);
    kv::line(&mut out, "resample_validation", c.resample_validation);
    out
}

/// Hex digest identifying a run: effective configuration plus the manifest
/// of the corpus it trained on.
pub fn run_fingerprint(config_text: &str, corpus: &Corpus) -> String {
    let mut h = Sha256::new();
    h.update(config_text.as_bytes());
    h.update(corpus.manifest.to_text().as_bytes());
    h.finalize()[..8].iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn log_text(config_text: &str, fingerprint: &str, extra: &[(&str, String)], log: &TrainLog) -> String {
    let mut out = format!("# run_fingerprint={fingerprint}\n");
    for line in config_text.lines() {
        let _ = writeln!(out, "# {line}");
    }
    for (k, v) in extra {
        let _ = writeln!(out, "# {k}={v}");
    }
    out.push_str(&log.to_text());
    out
}

fn train_one(corpus: &Corpus, config: &TrainConfig, out: &Path, log_path: &Path) -> Result<String> {
    let text = config_text(config);
    let fp = run_fingerprint(&text, corpus);
    let (ensemble, log) = train_ensemble(&corpus.dataset, corpus.split(), config)?;
    save_checkpoint(&ensemble, out)?;
    write_file(log_path, &log_text(&text, &fp, &[], &log))?;
    println!(
        "{}: K={} best_epoch={} run={fp}",
        out.display(),
        ensemble.len(),
        log.best_epoch
    );
    Ok(fp)
}

pub fn cmd_train(s: &Settings) -> Result<()> {
    let data: String = s.require("data")?;
    let out = PathBuf::from(s.require::<String>("out")?);
    if s.get("grid", false)? {
        for key in ["k", "strategy", "penalty", "gamma", "member_seeds", "log"] {
            if s.has(key) {
                return Err(Error::Usage(format!(
                    "{} cannot be combined with --grid",
                    crate::settings::flag(key)
                )));
            }
        }
        let ks: Vec<usize> = s.list("grid_k")?.unwrap_or_else(|| vec![1, 2, 3, 5]);
        let mut runs = Vec::new();
        for &k in &ks {
            for strategy in Strategy::ALL {
                runs.push((strategy, k, ensemble_config(s, strategy, k)?));
            }
        }
        let corpus = load_corpus(Path::new(&data), runs[0].2.val_n_way)?;
        fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        for (strategy, k, cfg) in runs {
            let name = format!("{}-k{k}", strategy.token());
            train_one(
                &corpus,
                &cfg,
                &out.join(format!("{name}.ckpt")),
                &out.join(format!("{name}.log")),
            )?;
        }
        return Ok(());
    }
    let cfg = ensemble_config(s, strategy(s)?, s.get("k", 1)?)?;
    let log = s
        .opt::<String>("log")?
        .map_or_else(|| PathBuf::from(format!("{}.log", out.display())), PathBuf::from);
    let corpus = load_corpus(Path::new(&data), cfg.val_n_way)?;
    train_one(&corpus, &cfg, &out, &log).map(|_| ())
}

pub fn eval_config(s: &Settings) -> Result<EvalConfig> {
    let mut c = EvalConfig::new(
        s.get("way", 5)?,
        s.get("shot", 5)?,
        s.get("episodes", 1000)?,
        s.get("seed", 0)?,
    );
    c.q_query = s.get("query", c.q_query)?;
    c.mode = s.get("mode", AggregateMode::Average)?;
    c.centroid = match s.raw("centroid").unwrap_or("mean") {
        "mean" => CentroidKind::Mean,
        "learned" => {
            let CentroidKind::Learned { steps, lr } = CentroidKind::learned_default() else {
                unreachable!()
            };
            CentroidKind::Learned {
                steps: s.get("centroid_steps", steps)?,
                lr: s.get("centroid_lr", lr)?,
            }
        }
        other => return Err(Error::Usage(format!("--centroid: unknown classifier `{other}`"))),
    };
    c.validate().map_err(flagged)?;
    Ok(c)
}

pub fn cmd_eval(s: &Settings) -> Result<()> {
    let cfg = eval_config(s)?;
    let threads: Option<usize> = s.opt("threads")?;
    if threads == Some(0) {
        return Err(Error::Usage("--threads must be at least 1".into()));
    }
    let data: String = match s.opt::<String>("dataset_b")? {
        Some(b) => b,
        None => s.require("data")?,
    };
    let checkpoint: String = s.require("checkpoint")?;
    let split: String = s.get("split", "test".to_string())?;
    if !["test", "val", "train"].contains(&split.as_str()) {
        return Err(Error::Usage(format!("--split: unknown split `{split}`")));
    }
    let ensemble = load_checkpoint(Path::new(&checkpoint))?;
    let corpus = load_corpus(Path::new(&data), cfg.n_way)?;
    let classes = match split.as_str() {
        "test" => &corpus.split().test,
        "val" => &corpus.split().val,
        _ => &corpus.split().train,
    };
    if classes.len() < cfg.n_way {
        return Err(Error::Usage(format!(
            "--split {split} has {} classes, fewer than --way",
            classes.len()
        )));
    }
    let report = parallel::evaluate(&ensemble, &corpus.dataset, classes, &cfg, threads)?;
    let file = ReportFile {
        report,
        strategy: s.get("strategy", "-".to_string())?,
        n_members: ensemble.len(),
    };
    match s.opt::<String>("out")? {
        Some(out) => {
            write_file(Path::new(&out), &file.to_text())?;
            println!(
                "{out}: {:.2} +- {:.2} over {} episodes",
                file.report.mean,
                file.report.half_ci,
                file.report.n_episodes()
            );
        }
        None => print!("{}", file.to_text()),
    }
    Ok(())
}

pub fn distill_config(s: &Settings) -> Result<DistillConfig> {
    let train = apply_train_opts(s, TrainConfig::default())?;
    let mut c = DistillConfig::new(&train);
    if s.has("patience") {
        c.train.patience = train.patience;
    }
    c.temperature = s.get("temperature", c.temperature)?;
    c.alpha = s.get("alpha", c.alpha)?;
    c.width = s.get("width", c.width)?;
    c.printed_sign = s.get("printed_sign", false)?;
    let default_extra = if s.has("unlabeled_pool") { 8 } else { 0 };
    c.unlabeled_per_batch = s.get("unlabeled_per_batch", default_extra)?;
    c.validate().map_err(flagged)?;
    Ok(c)
}

pub fn cmd_distill(s: &Settings) -> Result<()> {
    let cfg = distill_config(s)?;
    let teacher_path: String = s.require("teacher")?;
    let data: String = s.require("data")?;
    let out = PathBuf::from(s.require::<String>("out")?);
    let log_path = s
        .opt::<String>("log")?
        .map_or_else(|| PathBuf::from(format!("{}.log", out.display())), PathBuf::from);
    let pool_dir: Option<String> = s.opt("unlabeled_pool")?;
    if cfg.unlabeled_per_batch > 0 && pool_dir.is_none() {
        return Err(Error::Usage("--unlabeled-per-batch needs --unlabeled-pool".into()));
    }

    let teacher = load_checkpoint(Path::new(&teacher_path))?;
    let corpus = load_corpus(Path::new(&data), cfg.train.val_n_way)?;
    let pool = pool_dir.map(|p| load_corpus(Path::new(&p), 0)).transpose()?;
    let split = corpus.split();
    if split.val.len() < cfg.train.val_n_way {
        return Err(Error::Usage(format!(
            "--data has {} validation classes, fewer than --val-way",
            split.val.len()
        )));
    }
    let train = corpus.dataset.select_classes(&split.train)?;
    let val = Validation {
        data: &corpus.dataset,
        classes: &split.val,
    };
    let (student, log, counter) = distill_train(&teacher, &train, Some(val), pool.as_ref().map(|c| &c.dataset), &cfg)
        .map_err(|e| match e {
        coopens_core::Error::Parameter {
            name: "teacher",
            reason,
        } => Error::Usage(format!("--teacher: {reason}")),
        other => Error::Core(other),
    })?;
    let seed = rng::child_seed(cfg.train.master_seed, "student", 0);
    save_checkpoint(&EnsembleParams::single(student, seed), &out)?;

    let mut text = config_text(&cfg.train);
    kv::line(&mut text, "temperature", cfg.temperature);
    kv::line(&mut text, "alpha", cfg.alpha);
    kv::line(&mut text, "width", cfg.width);
    kv::line(&mut text, "unlabeled_per_batch", cfg.unlabeled_per_batch);
    kv::line(&mut text, "teacher_hash", format!("{:016x}", teacher.content_hash()));
    let fp = run_fingerprint(&text, &corpus);
    let extra = [
        ("labeled_rows", counter.labeled_rows.to_string()),
        ("unlabeled_rows", counter.unlabeled_rows.to_string()),
    ];
    write_file(&log_path, &log_text(&text, &fp, &extra, &log))?;
    println!("{}: student best_epoch={} run={fp}", out.display(), log.best_epoch);
    Ok(())
}

pub fn cmd_report(s: &Settings) -> Result<()> {
    let dir: String = s.require("reports")?;
    let delimiter = match s.raw("delimiter").unwrap_or("tab") {
        "tab" => '\t',
        "comma" => ',',
        other => {
            let mut chars = other.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) => c,
                _ => {
                    return Err(Error::Usage(format!(
                        "--delimiter: expected one character, got `{other}`"
                    )))
                }
            }
        }
    };
    let text = table(&collect_reports(Path::new(&dir))?, delimiter);
    match s.opt::<String>("out")? {
        Some(out) => write_file(Path::new(&out), &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn cmd_gradcheck(inject_fault: bool) -> Result<()> {
    let results = run_suite(SuiteOptions { inject_fault })?;
    let mut worst = 0.0f64;
    for r in &results {
        worst = worst.max(r.max_error);
        println!(
            "{}\t{:.3e}\t{}",
            if r.passed { "ok" } else { "FAIL" },
            r.max_error,
            r.name
        );
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!(
        "{} checks, {failed} failed, worst relative error {worst:.3e} (tolerance {TOLERANCE:e})",
        results.len()
    );
    if failed > 0 {
        return Err(Error::Failed(format!("{failed} gradient checks failed")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;
    use coopens_core::penalties::PenaltyKind;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn strategy_flags_and_overrides() {
        let s = Settings::from_pairs(&[("penalty", "none"), ("gamma", "0"), ("k", "3")]);
        let c = ensemble_config(&s, strategy(&s).unwrap(), 3).unwrap();
        assert_eq!(c, TrainConfig::for_strategy(Strategy::Independent, 3, 0));

        let s = Settings::from_pairs(&[("strategy", "robust"), ("member_drop", "0.5")]);
        let c = ensemble_config(&s, strategy(&s).unwrap(), 5).unwrap();
        assert_eq!(c.penalty, PenaltyKind::SymKlCooperation);
        assert_eq!(c.robust.member_drop_prob, 0.5);
        assert!(c.robust.per_member_augmentation);
    }

    #[test]
    fn config_text_reproduces_the_config() {
        let s = Settings::from_pairs(&[("strategy", "diversity"), ("temperature_probe", "4"), ("lr", "0.003")]);
        let c = ensemble_config(&s, strategy(&s).unwrap(), 2).unwrap();
        let text = config_text(&c);
        let e = crate::kv::Entries::parse(&text, Path::new("t")).unwrap();
        let pairs: Vec<(&str, &str)> = e.keys().map(|k| (k, e.get(k).unwrap())).collect();
        let again = ensemble_config(&Settings::from_pairs(&pairs), Strategy::Independent, 2).unwrap();
        assert_eq!(
            again,
            TrainConfig {
                member_seeds: Some(c.seeds()),
                ..c
            }
        );
    }

    #[test]
    fn validation_errors_name_flags() {
        let s = Settings::from_pairs(&[("k", "0")]);
        match ensemble_config(&s, Strategy::Independent, 0) {
            Err(Error::Usage(m)) => assert!(m.starts_with("--k:"), "{m}"),
            other => panic!("{other:?}"),
        }
        let s = Settings::from_pairs(&[("shot", "0")]);
        assert!(matches!(eval_config(&s), Err(Error::Usage(_))));
        let s = Settings::from_pairs(&[("alpha", "2")]);
        match distill_config(&s) {
            Err(Error::Usage(m)) => assert!(m.starts_with("--alpha"), "{m}"),
            other => panic!("{other:?}"),
        }
    }
}
