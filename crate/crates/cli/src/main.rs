//! Command-line driver: synthesize datasets, ingest external CFR records,
//! evaluate learners with cross-validation, run ablations and print tables.
//!
//! Exit status: 0 success, 1 configuration error, 2 data error, 3 anything else.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use dsrc_traffic::experiment::{
    ablate, evaluate, preprocess_dataset, render_report, synthesize, write_ablation, write_evaluation,
    write_synthesis, ExperimentConfig, Manifest, TrainingKind, BACKGROUND_FILE, DATASET_FILE, MANIFEST_FILE,
};
use dsrc_traffic::learn::{Family, Provenance};
use dsrc_traffic::records::{
    assemble_dataset, complete_snapshots, median_count, read_records, write_records, CfrRecord,
    Combine,
};
use dsrc_traffic::Error;

#[derive(Parser)]
#[command(name = "dsrc-traffic", version, about = "Road traffic monitoring from DSRC channel responses")]
struct Cli {
    /// Worker threads for synthesis and cross-validation (default: one per core).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Increase log verbosity (-v info, -vv debug). RUST_LOG takes precedence.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate scenes, channels and noisy CFR records.
    Synthesize {
        /// Master seed for every random stream.
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Load an external record file, report rejected rows and write the accepted ones.
    Ingest {
        /// Record file with header `snapshot,receiver,count,h0,...`.
        path: PathBuf,
        /// Intensity threshold (default: median count).
        #[arg(long)]
        gamma: Option<usize>,
        /// Receivers to combine (default: every receiver in the file).
        #[arg(long, value_delimiter = ',')]
        receivers: Option<Vec<usize>>,
        #[arg(long, value_enum)]
        combine: Option<CombineArg>,
        /// Output directory for the accepted records.
        #[arg(long, default_value = "ingested")]
        out: PathBuf,
    },
    /// Preprocess, grid-search and cross-validate every configured family.
    Evaluate(RunArgs),
    /// Evaluate with each preprocessing stage and receiver switched off in turn.
    Ablate(RunArgs),
    /// Print the result tables found in a directory.
    Report {
        /// Directory holding classification.csv, regression.csv or ablation.csv.
        dir: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Directory with dataset.csv (and optionally background.csv and manifest.json).
    #[arg(long)]
    data: PathBuf,
    /// Master seed (default: the one recorded in the manifest).
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    config: ConfigArgs,
}

/// Flags mirroring `ExperimentConfig`. A `--config` file is applied last and
/// overrides any flag it also sets. Hyperparameter lists accept commas.
#[derive(Args)]
struct ConfigArgs {
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    dataset_size: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    receivers: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    combine: Option<CombineArg>,
    #[arg(long)]
    gamma: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    estimates_per_packet: Option<usize>,
    #[arg(long)]
    background_frames: Option<usize>,
    /// SNR against the strongest empty-road path, in dB.
    #[arg(long, conflicts_with = "sigma_n_sq")]
    snr_db: Option<f64>,
    /// Noise variance per complex sample.
    #[arg(long)]
    sigma_n_sq: Option<f64>,
    #[arg(long, value_enum)]
    training: Option<TrainingArg>,
    #[arg(long)]
    zc_root: Option<usize>,
    #[arg(long)]
    lanes: Option<usize>,
    #[arg(long)]
    road_length: Option<f64>,
    /// Vehicles per lane per 100 m (lower end when --density-max is set).
    #[arg(long)]
    density: Option<f64>,
    #[arg(long)]
    density_max: Option<f64>,
    #[arg(long)]
    epoch_length: Option<usize>,
    #[arg(long, conflicts_with = "no_hampel")]
    hampel: bool,
    #[arg(long)]
    no_hampel: bool,
    #[arg(long)]
    no_wavelet: bool,
    #[arg(long)]
    no_background: bool,
    #[arg(long, value_enum, value_delimiter = ',')]
    families: Option<Vec<FamilyArg>>,
    #[arg(long, value_delimiter = ',')]
    knn_k: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    n_trees: Option<Vec<usize>>,
    /// Tree depth limits; 0 means unlimited.
    #[arg(long, value_delimiter = ',')]
    max_depth: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    boost_stages: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    boost_depth: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    learning_rate: Option<Vec<f64>>,
}

#[derive(Clone, Copy, ValueEnum)]
enum CombineArg {
    Concatenate,
    Average,
}

impl From<CombineArg> for Combine {
    fn from(c: CombineArg) -> Self {
        match c {
            CombineArg::Concatenate => Combine::Concatenate,
            CombineArg::Average => Combine::Average,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainingArg {
    #[value(name = "zadoff_chu")]
    ZadoffChu,
    #[value(name = "long_training")]
    LongTraining,
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    #[value(name = "knn")]
    Knn,
    #[value(name = "random_forest")]
    RandomForest,
    #[value(name = "extra_trees")]
    ExtraTrees,
    #[value(name = "gradient_boosting")]
    GradientBoosting,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Knn => Family::Knn,
            FamilyArg::RandomForest => Family::RandomForest,
            FamilyArg::ExtraTrees => Family::ExtraTrees,
            FamilyArg::GradientBoosting => Family::GradientBoosting,
        }
    }
}

fn config_error(field: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        field: field.to_string(),
        reason: reason.into(),
    }
}

impl ConfigArgs {
    /// Applies the flags to `cfg`, then the config file on top.
    fn resolve(&self, mut cfg: ExperimentConfig) -> Result<ExperimentConfig> {
        fn set<T: Clone>(dst: &mut T, src: &Option<T>) {
            if let Some(v) = src {
                *dst = v.clone();
            }
        }
        set(&mut cfg.output_dir, &self.out);
        set(&mut cfg.dataset_size, &self.dataset_size);
        set(&mut cfg.receivers, &self.receivers);
        if let Some(c) = self.combine {
            cfg.combine = c.into();
        }
        if self.gamma.is_some() {
            cfg.gamma = self.gamma;
        }
        set(&mut cfg.folds, &self.folds);
        set(&mut cfg.estimates_per_packet, &self.estimates_per_packet);
        set(&mut cfg.background_frames, &self.background_frames);
        if let Some(snr) = self.snr_db {
            cfg.noise.snr_db = Some(snr);
            cfg.noise.sigma_n_sq = None;
        }
        if let Some(s) = self.sigma_n_sq {
            cfg.noise.sigma_n_sq = Some(s);
            cfg.noise.snr_db = None;
        }
        if let Some(t) = self.training {
            cfg.training.kind = match t {
                TrainingArg::ZadoffChu => TrainingKind::ZadoffChu,
                TrainingArg::LongTraining => TrainingKind::LongTraining,
            };
        }
        set(&mut cfg.training.root, &self.zc_root);
        set(&mut cfg.scene.lane_count, &self.lanes);
        set(&mut cfg.scene.road_length, &self.road_length);
        set(&mut cfg.scene.density, &self.density);
        if self.density_max.is_some() {
            cfg.scene.density_max = self.density_max;
        }
        set(&mut cfg.scene.epoch_length, &self.epoch_length);
        if self.hampel {
            cfg.preprocess.hampel = true;
        }
        if self.no_hampel {
            cfg.preprocess.hampel = false;
        }
        if self.no_wavelet {
            cfg.preprocess.wavelet = false;
        }
        if self.no_background {
            cfg.preprocess.background = false;
        }
        if let Some(f) = &self.families {
            cfg.models.families = f.iter().map(|&f| f.into()).collect();
        }
        set(&mut cfg.models.knn_k, &self.knn_k);
        set(&mut cfg.models.n_trees, &self.n_trees);
        set(&mut cfg.models.max_depth, &self.max_depth);
        set(&mut cfg.models.boost_stages, &self.boost_stages);
        set(&mut cfg.models.boost_depth, &self.boost_depth);
        set(&mut cfg.models.learning_rate, &self.learning_rate);

        if let Some(path) = &self.config {
            let text = fs::read_to_string(path)
                .map_err(|e| config_error("--config", format!("{}: {e}", path.display())))?;
            cfg = cfg.overlay_toml(&text)?;
        }
        Ok(cfg)
    }
}

fn read_record_file(path: &Path) -> Result<dsrc_traffic::records::RecordLoad> {
    let file = File::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok(read_records(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))?)
}

/// Loads a record file that must parse completely.
fn read_clean(path: &Path) -> Result<Vec<CfrRecord>> {
    let load = read_record_file(path)?;
    if let Some(first) = load.rejected.first() {
        return Err(Error::Data(format!(
            "{}: {} malformed rows, first: {first}",
            path.display(),
            load.rejected.len()
        ))
        .into());
    }
    Ok(load.records)
}

fn run_synthesize(seed: u64, args: &ConfigArgs) -> Result<()> {
    let cfg = args.resolve(ExperimentConfig {
        seed,
        ..ExperimentConfig::default()
    })?;
    cfg.validate()?;
    let syn = synthesize(&cfg)?;
    let manifest = write_synthesis(&cfg.output_dir, &cfg, &syn)?;
    println!(
        "wrote {} snapshots x {} receivers to {} (counts {}..={}, gamma {}, noise variance {:.3e})",
        manifest.snapshots,
        cfg.receivers.len(),
        cfg.output_dir.display(),
        manifest.min_count,
        manifest.max_count,
        manifest.gamma,
        manifest.noise_variance
    );
    Ok(())
}

fn run_ingest(
    path: &Path,
    gamma: Option<usize>,
    receivers: Option<Vec<usize>>,
    combine: Option<CombineArg>,
    out: &Path,
) -> Result<()> {
    let load = read_record_file(path)?;
    for e in &load.rejected {
        warn!("{}: rejected: {e}", path.display());
    }
    if load.records.is_empty() {
        return Err(Error::Data(format!("{}: no valid rows", path.display())).into());
    }
    let receivers = receivers.unwrap_or_else(|| {
        let ids: BTreeSet<usize> = load.records.iter().map(|r| r.receiver).collect();
        ids.into_iter().collect()
    });
    let combine = combine.map_or(Combine::default(), Combine::from);
    let partial = load.is_partial();
    let (records, dropped) = complete_snapshots(load.records, &receivers);
    if !dropped.is_empty() {
        warn!("dropped {} snapshots missing a receiver row, first {}", dropped.len(), dropped[0]);
    }
    let gamma = match gamma {
        Some(g) => g,
        None => median_count(&records).ok_or_else(|| Error::Data("no complete snapshots".into()))?,
    };
    let dataset = assemble_dataset(&records, &receivers, combine, gamma, Provenance::Ingested)?;

    fs::create_dir_all(out)?;
    let mut w = BufWriter::new(File::create(out.join(DATASET_FILE))?);
    write_records(&mut w, &records)?;
    w.flush()?;
    let heavy = dataset
        .samples
        .iter()
        .filter(|s| s.label == dsrc_traffic::scene::Label::Heavy)
        .count();
    println!(
        "{} snapshots, {} features, gamma {gamma}: {heavy} heavy, {} light; wrote {}",
        dataset.len(),
        dataset.n_features(),
        dataset.len() - heavy,
        out.join(DATASET_FILE).display()
    );
    if partial || !dropped.is_empty() {
        return Err(Error::Data(format!(
            "partial load: {} malformed rows, {} incomplete snapshots",
            load.rejected.len(),
            dropped.len()
        ))
        .into());
    }
    Ok(())
}

/// Config for evaluate/ablate: the manifest's config when the data directory
/// has one, then flags, then the config file.
fn run_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let manifest_path = args.data.join(MANIFEST_FILE);
    let base = if manifest_path.exists() {
        let file = File::open(&manifest_path)?;
        let manifest: Manifest = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::Data(format!("{}: {e}", manifest_path.display())))?;
        manifest.config
    } else {
        ExperimentConfig::default()
    };
    let mut cfg = args.config.resolve(base)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_inputs(args: &RunArgs) -> Result<(Vec<CfrRecord>, Option<Vec<CfrRecord>>)> {
    let records = read_clean(&args.data.join(DATASET_FILE))?;
    let bg_path = args.data.join(BACKGROUND_FILE);
    let background = if bg_path.exists() {
        Some(read_clean(&bg_path)?)
    } else {
        None
    };
    Ok((records, background))
}

fn run_evaluate(args: &RunArgs) -> Result<()> {
    let cfg = run_config(args)?;
    let (records, background) = load_inputs(args)?;
    let gamma = match cfg.gamma {
        Some(g) => g,
        None => median_count(&records).ok_or_else(|| Error::Data("dataset is empty".into()))?,
    };
    let raw = assemble_dataset(&records, &cfg.receivers, cfg.combine, gamma, Provenance::Synthetic)?;
    let data = preprocess_dataset(&raw, &cfg.preprocess, background.as_deref(), &cfg.receivers, cfg.combine)?;
    info!("evaluating {} snapshots with {} features", data.len(), data.n_features());
    let eval = evaluate(&data, &cfg.models, cfg.folds, cfg.seed)?;
    write_evaluation(&cfg.output_dir, &eval)?;
    print!("{}", render_report(&cfg.output_dir)?);
    Ok(())
}

fn run_ablate(args: &RunArgs) -> Result<()> {
    let cfg = run_config(args)?;
    let (records, background) = load_inputs(args)?;
    let gamma = match cfg.gamma {
        Some(g) => g,
        None => median_count(&records).ok_or_else(|| Error::Data("dataset is empty".into()))?,
    };
    let rows = ablate(&cfg, &records, background.as_deref(), gamma)?;
    fs::create_dir_all(&cfg.output_dir)?;
    let mut w = BufWriter::new(File::create(cfg.output_dir.join("ablation.csv"))?);
    write_ablation(&mut w, &rows)?;
    w.flush()?;
    print!("{}", render_report(&cfg.output_dir)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(config_error("--workers", "must be >= 1").into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("starting worker pool")?;
    }
    match cli.command {
        Command::Synthesize { seed, config } => run_synthesize(seed, &config),
        Command::Ingest {
            path,
            gamma,
            receivers,
            combine,
            out,
        } => run_ingest(&path, gamma, receivers, combine, &out),
        Command::Evaluate(args) => run_evaluate(&args),
        Command::Ablate(args) => run_ablate(&args),
        Command::Report { dir } => {
            print!("{}", render_report(&dir)?);
            Ok(())
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|cause| cause.downcast_ref::<Error>())
        .map_or(3, |e| {
            if e.is_config() {
                1
            } else if e.is_data() {
                2
            } else {
                3
            }
        })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
