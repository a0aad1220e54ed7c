//! `bandnet` command line: synthetic corpora, preprocessing, training,
//! grids, attribution and report merging.
//!
//! Settings come from `--config <file>` (flat `key = value`) and are then
//! overridden by flags. Exit status is 0 on success, 1 for invalid input
//! and 2 when a run fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bandnet::attribution::AttributionSummary;
use bandnet::runner::{
    self, CellRun, ConfigFile, DataSource, DataSplits, ExperimentConfig, GridOptions, GridSpec, ReportFormat,
    ResultTable, SavedModel, ShapBudget,
};
use bandnet::signal::{self, Dataset};
use bandnet::{Error, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "bandnet", version, about = "EEG rhythm hemisphere classification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// Base random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Flat `key = value` settings file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Only log warnings and errors.
    #[arg(long, short)]
    quiet: bool,
}

/// Where recordings come from and how they become examples.
#[derive(Args, Debug, Clone, Default)]
struct DataArgs {
    /// Directory of recording files instead of synthetic data.
    #[arg(long)]
    corpus: Option<String>,
    /// Split written by `preprocess`.
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    participants: Option<String>,
    #[arg(long)]
    intensities: Option<String>,
    /// Samples per synthetic channel.
    #[arg(long)]
    samples: Option<String>,
    /// Five comma-separated band power multipliers for left channels.
    #[arg(long, allow_hyphen_values = true)]
    left: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    right: Option<String>,
    #[arg(long)]
    noise: Option<String>,
    #[arg(long)]
    jitter: Option<String>,
    /// Draw sinusoid frequencies and phases per channel instead of per dataset.
    #[arg(long)]
    random_phase: bool,
    /// Z-score every example.
    #[arg(long)]
    standardize: bool,
    #[arg(long)]
    filter_order: Option<String>,
}

impl DataArgs {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut put = |k: &'static str, v: &Option<String>| {
            if let Some(v) = v {
                out.push((k, v.clone()));
            }
        };
        put("corpus", &self.corpus);
        put("data", &self.data);
        put("synthetic.participants", &self.participants);
        put("synthetic.intensities", &self.intensities);
        put("synthetic.samples", &self.samples);
        put("synthetic.left", &self.left);
        put("synthetic.right", &self.right);
        put("synthetic.noise", &self.noise);
        put("synthetic.jitter", &self.jitter);
        put("filter_order", &self.filter_order);
        if self.random_phase {
            out.push(("synthetic.phase_locked", "false".into()));
        }
        if self.standardize {
            out.push(("standardize", "true".into()));
        }
        out
    }
}

/// Training settings shared by `train` and `grid`.
#[derive(Args, Debug, Clone, Default)]
struct TrainArgs {
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    max_epochs: Option<String>,
    #[arg(long)]
    patience: Option<String>,
    #[arg(long)]
    min_delta: Option<String>,
    /// FTRL L1 strength.
    #[arg(long)]
    l1: Option<String>,
    /// FTRL L2 strength.
    #[arg(long)]
    l2: Option<String>,
    /// Test examples to explain per cell (0 skips attribution).
    #[arg(long)]
    shap_instances: Option<String>,
    #[arg(long)]
    shap_background: Option<String>,
    #[arg(long)]
    shap_permutations: Option<String>,
    #[arg(long)]
    shap_segment_size: Option<String>,
}

impl TrainArgs {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        [
            ("learning_rate", &self.lr),
            ("batch_size", &self.batch_size),
            ("max_epochs", &self.max_epochs),
            ("patience", &self.patience),
            ("min_delta", &self.min_delta),
            ("l1", &self.l1),
            ("l2", &self.l2),
            ("shap.instances", &self.shap_instances),
            ("shap.background", &self.shap_background),
            ("shap.permutations", &self.shap_permutations),
            ("shap.segment_size", &self.shap_segment_size),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.clone().map(|v| (k, v)))
        .collect()
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic corpus, one file per recording.
    Synth {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Comma-separated datasets to generate.
        #[arg(long)]
        datasets: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Filter one band of one dataset and write its train/val/test split.
    Preprocess {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        band: Option<String>,
        #[arg(long)]
        dataset: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate a single cell.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        band: Option<String>,
        #[arg(long)]
        dataset: Option<String>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        optimizer: Option<String>,
        /// Directory for report.csv, report.json, model.json and history.csv.
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Run every combination of the listed bands, datasets, models and optimizers.
    Grid {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        bands: Option<String>,
        #[arg(long)]
        datasets: Option<String>,
        #[arg(long)]
        models: Option<String>,
        #[arg(long)]
        optimizers: Option<String>,
        /// Run the cells that share data concurrently.
        #[arg(long)]
        parallel_cells: bool,
        /// Directory for report.csv and report.json.
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Shapley attribution of a trained model on a preprocessed split.
    Explain {
        #[command(flatten)]
        common: Common,
        /// model.json written by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Split written by `preprocess`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 10)]
        instances: usize,
        #[arg(long, default_value_t = 50)]
        background: usize,
        #[arg(long, default_value_t = 100)]
        permutations: usize,
        #[arg(long, default_value_t = 250)]
        segment_size: usize,
        /// Output table `feature_index,time_s,phi_mean,phi_abs_mean`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge report files and write them as CSV or JSON.
    Report {
        #[command(flatten)]
        common: Common,
        /// Report files (.csv or .json).
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Output format; defaults to the output file's extension.
        #[arg(long)]
        format: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the best ROC AUC per rhythm and dataset here.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Synth { common, .. }
            | Command::Preprocess { common, .. }
            | Command::Train { common, .. }
            | Command::Grid { common, .. }
            | Command::Explain { common, .. }
            | Command::Report { common, .. } => common,
        }
    }
}

fn file_settings(common: &Common) -> Result<Vec<(String, String)>> {
    let mut out = match &common.config {
        Some(path) => ConfigFile::load(path)?.entries,
        None => Vec::new(),
    };
    if let Some(seed) = common.seed {
        out.push(("seed".into(), seed.to_string()));
    }
    Ok(out)
}

/// Applies the config file, then `--seed`, then the given flag overrides.
fn experiment(common: &Common, flags: Vec<(&'static str, String)>) -> Result<ExperimentConfig> {
    let mut c = ExperimentConfig::default();
    for (k, v) in file_settings(common)? {
        c.set(&k, &v)?;
    }
    for (k, v) in flags {
        c.set(k, &v)?;
    }
    Ok(c)
}

fn named(pairs: &[(&'static str, &Option<String>)]) -> Vec<(&'static str, String)> {
    pairs
        .iter()
        .filter_map(|(k, v)| v.as_ref().map(|v| (*k, v.clone())))
        .collect()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn synth(common: &Common, data: &DataArgs, datasets: &Option<String>, out: &Path) -> Result<()> {
    let c = experiment(common, data.overrides())?;
    let DataSource::Synthetic {
        mut config,
        participants,
        intensities,
    } = c.source
    else {
        return Err(Error::Validation("synth needs synthetic settings, not a corpus".into()));
    };
    if let Some(list) = datasets {
        config.datasets = runner::parse_list::<Dataset>(list)?;
    }
    let recordings = signal::generate_synthetic(&config, participants, intensities)?;
    let paths = signal::save_recordings(&recordings, out)?;
    log::info!("wrote {} recordings to {}", paths.len(), out.display());
    Ok(())
}

fn preprocess(common: &Common, data: &DataArgs, band: &Option<String>, dataset: &Option<String>, out: &Path) -> Result<()> {
    let mut flags = data.overrides();
    flags.extend(named(&[("band", band), ("dataset", dataset)]));
    let c = experiment(common, flags)?;
    if matches!(c.source, DataSource::Prepared(_)) {
        return Err(Error::Validation("preprocess reads recordings, not a prepared split".into()));
    }
    c.validate()?;
    let (split, secs) = runner::prepare(&c)?;
    runner::save_split(&split, out)?;
    let [tr, va, te] = split.sizes();
    log::info!("[{}/{}] {tr}/{va}/{te} examples in {secs:.2} s -> {}", c.band, c.dataset, out.display());
    Ok(())
}

fn write_cell(run: &CellRun, config: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    let table = ResultTable::new(vec![run.result.clone()], Vec::new())?;
    table.emit(ReportFormat::Csv, &out_dir.join("report.csv"))?;
    table.emit(ReportFormat::Json, &out_dir.join("report.json"))?;
    write_text(&out_dir.join("history.csv"), &run.outcome.history_csv())?;
    if let Some(summary) = &run.attribution {
        write_text(&out_dir.join("attribution.csv"), &summary.to_text())?;
    }
    SavedModel {
        config: config.clone(),
        model: run.model.clone(),
    }
    .save(&out_dir.join("model.json"))?;
    print!("{}", table.to_csv());
    Ok(())
}

fn grid(common: &Common, flags: Vec<(&'static str, String)>, parallel_cells: bool, out_dir: &Path) -> Result<bool> {
    let mut g = GridSpec::full(ExperimentConfig::default());
    for (k, v) in file_settings(common)? {
        g.set(&k, &v)?;
    }
    for (k, v) in flags {
        g.set(k, &v)?;
    }
    let cells = g.cells();
    if cells.is_empty() {
        return Err(Error::Validation("the grid has no cells".into()));
    }
    log::info!("running {} cells", cells.len());
    let table = runner::run_grid(&cells, GridOptions { parallel_cells })?;
    table.emit(ReportFormat::Csv, &out_dir.join("report.csv"))?;
    table.emit(ReportFormat::Json, &out_dir.join("report.json"))?;
    print!("{}", table.to_csv());
    for f in &table.failures {
        eprintln!("cell {} failed: {}", f.key, f.error);
    }
    Ok(table.failures.is_empty())
}

fn explain(
    common: &Common,
    model_path: &Path,
    data: &Path,
    budget: ShapBudget,
    out: &Path,
) -> Result<AttributionSummary> {
    let saved = SavedModel::load(model_path)?;
    let split = runner::load_split(data)?;
    let splits = DataSplits::from_split(&split)?;
    let seed = common.seed.unwrap_or(saved.config.seed);
    let summary = runner::explain_model(&saved.model, &splits.train.x, &splits.test.x, &budget, seed)?;
    write_text(out, &summary.to_text())?;
    Ok(summary)
}

fn report(inputs: &[PathBuf], format: &Option<String>, out: &Path, summary: &Option<PathBuf>) -> Result<()> {
    let tables = inputs.iter().map(|p| ResultTable::load(p)).collect::<Result<Vec<_>>>()?;
    let table = ResultTable::merge(tables)?;
    let format = match format {
        Some(f) => f.parse()?,
        None => ReportFormat::for_path(out),
    };
    table.emit(format, out)?;
    if let Some(path) = summary {
        write_text(path, &table.max_auc_summary())?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match &cli.command {
        Command::Synth {
            common,
            data,
            datasets,
            out,
        } => synth(common, data, datasets, out)?,
        Command::Preprocess {
            common,
            data,
            band,
            dataset,
            out,
        } => preprocess(common, data, band, dataset, out)?,
        Command::Train {
            common,
            data,
            train,
            band,
            dataset,
            model,
            optimizer,
            out_dir,
        } => {
            let mut flags = data.overrides();
            flags.extend(train.overrides());
            flags.extend(named(&[
                ("band", band),
                ("dataset", dataset),
                ("model", model),
                ("optimizer", optimizer),
            ]));
            let c = experiment(common, flags)?;
            let run = runner::run_cell(&c)?;
            write_cell(&run, &c, out_dir)?;
        }
        Command::Grid {
            common,
            data,
            train,
            bands,
            datasets,
            models,
            optimizers,
            parallel_cells,
            out_dir,
        } => {
            let mut flags = data.overrides();
            flags.extend(train.overrides());
            flags.extend(named(&[
                ("bands", bands),
                ("datasets", datasets),
                ("models", models),
                ("optimizers", optimizers),
            ]));
            return grid(common, flags, *parallel_cells, out_dir);
        }
        Command::Explain {
            common,
            model,
            data,
            instances,
            background,
            permutations,
            segment_size,
            out,
        } => {
            let budget = ShapBudget {
                instances: *instances,
                background: *background,
                permutations: *permutations,
                segment_size: *segment_size,
            };
            let summary = explain(common, model, data, budget, out)?;
            if let Some(top) = summary.rows.first() {
                println!(
                    "top feature {} ({} s), mean phi {}",
                    top.feature_index, top.time_s, top.phi_mean
                );
            }
        }
        Command::Report {
            inputs,
            format,
            out,
            summary,
            ..
        } => report(inputs, format, out, summary)?,
    }
    Ok(true)
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
    let level = if cli.command.common().quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
