//! Running single cells and grids of cells.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{CellKey, DataSource, ExperimentConfig, ShapBudget};
use super::report::{CellFailure, ResultTable, RunResult, Timings};
use super::train::{evaluate, predict_scores, train, DataSplits, TrainConfig, TrainOutcome};
use crate::attribution::{sample_background, sampled_shapley, summarize, AttributionConfig, AttributionSummary};
use crate::nn::{build_model, Matrix, Model, ModelOptions};
use crate::optim::Optimizer;
use crate::signal::{
    build_dataset_with_order, generate_synthetic, load_recordings, split_dataset, standardize, RawRecording,
    SplitDataset,
};
use crate::{par, seed, Error, Result};

const SPLIT_STREAM: u64 = 1;
const INIT_STREAM: u64 = 2;
const SHUFFLE_STREAM: u64 = 3;
const SHAP_STREAM: u64 = 4;

fn stream(config: &ExperimentConfig, with_model: bool, with_optimizer: bool, tag: u64) -> u64 {
    let k = config.key();
    let mut parts = vec![k.band as u64, k.dataset as u64];
    if with_model {
        parts.push(k.model as u64);
    }
    if with_optimizer {
        parts.push(k.optimizer as u64);
    }
    parts.push(tag);
    seed::derive(config.seed, &parts)
}

/// Seed of the train/val/test split; shared by every model and optimizer
/// of one (band, dataset) pair.
pub fn split_seed(config: &ExperimentConfig) -> u64 {
    stream(config, false, false, SPLIT_STREAM)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer(BufWriter::new(file), value)?;
    Ok(())
}

pub fn save_split(split: &SplitDataset, path: &Path) -> Result<()> {
    write_json(split, path)
}

pub fn load_split(path: &Path) -> Result<SplitDataset> {
    read_json(path)
}

/// A trained model together with the configuration that produced it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SavedModel {
    pub config: ExperimentConfig,
    pub model: Model,
}

impl SavedModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

fn recordings_for(config: &ExperimentConfig, corpus: Option<&[RawRecording]>) -> Result<Vec<RawRecording>> {
    match &config.source {
        DataSource::Corpus(dir) => {
            let owned;
            let all = match corpus {
                Some(c) => c,
                None => {
                    owned = load_recordings(dir)?;
                    &owned
                }
            };
            Ok(all.iter().filter(|r| r.dataset == config.dataset).cloned().collect())
        }
        DataSource::Synthetic {
            config: synth,
            participants,
            intensities,
        } => {
            let mut synth = synth.clone();
            synth.datasets = vec![config.dataset];
            generate_synthetic(&synth, *participants, *intensities)
        }
        DataSource::Prepared(_) => Err(Error::State("prepared data has no recordings".into())),
    }
}

fn prepare_with(config: &ExperimentConfig, corpus: Option<&[RawRecording]>) -> Result<(SplitDataset, f64)> {
    let start = Instant::now();
    let split = match &config.source {
        DataSource::Prepared(path) => load_split(path)?,
        _ => {
            let recordings = recordings_for(config, corpus)?;
            if recordings.is_empty() {
                return Err(Error::invalid(format!("no {} recordings in the data source", config.dataset)));
            }
            let mut examples = build_dataset_with_order(&recordings, config.band, config.filter_order)?;
            drop(recordings);
            if config.standardize {
                standardize(&mut examples);
            }
            split_dataset(examples, split_seed(config))?
        }
    };
    Ok((split, start.elapsed().as_secs_f64()))
}

/// Loads or generates recordings, filters them into the cell's band,
/// and splits them. Returns the split and the seconds it took.
pub fn prepare(config: &ExperimentConfig) -> Result<(SplitDataset, f64)> {
    prepare_with(config, None)
}

/// Everything one cell produced.
#[derive(Clone, Debug)]
pub struct CellRun {
    pub result: RunResult,
    pub model: Model,
    pub outcome: TrainOutcome,
    pub attribution: Option<AttributionSummary>,
}

/// Sampled Shapley summary over the first `budget.instances` rows of
/// `instances`, against a background drawn from `background_pool`.
pub fn explain_model(
    model: &Model,
    background_pool: &Matrix,
    instances: &Matrix,
    budget: &ShapBudget,
    seed: u64,
) -> Result<AttributionSummary> {
    let background = sample_background(background_pool, budget.background, seed);
    let config = AttributionConfig::new(background, budget.permutations, seed).with_segment_size(budget.segment_size);
    let f = |m: &Matrix| predict_scores(model, m);
    let results = (0..budget.instances.min(instances.rows()))
        .map(|i| sampled_shapley(&f, instances.row(i), &config))
        .collect::<Result<Vec<_>>>()?;
    summarize(&results)
}

/// Trains and evaluates one cell on already prepared splits.
pub fn run_prepared(config: &ExperimentConfig, splits: &DataSplits, preprocessing_s: f64) -> Result<CellRun> {
    config.validate()?;
    let key = config.key();
    let spec = build_model(config.model, splits.feature_len(), &ModelOptions::default())?;
    let mut model = Model::new(spec, stream(config, true, false, INIT_STREAM))?;
    let mut optimizer = Optimizer::new(config.optimizer_config())?;
    let train_cfg = TrainConfig {
        batch_size: config.batch_size,
        max_epochs: config.max_epochs,
        patience: config.patience,
        min_delta: config.min_delta,
        seed: stream(config, true, true, SHUFFLE_STREAM),
    };

    let start = Instant::now();
    let outcome = train(&mut model, &mut optimizer, splits, &train_cfg)?;
    let train_s = start.elapsed().as_secs_f64();
    log::info!(
        "[{key}] {} epochs, best epoch {} (val loss {:.6})",
        outcome.epochs_run(),
        outcome.best_epoch,
        outcome.best_val_loss
    );

    let test = evaluate(&model, &splits.test)?;
    let train_acc = evaluate(&model, &splits.train)?.report.accuracy;
    let val_acc = evaluate(&model, &splits.val)?.report.accuracy;

    let start = Instant::now();
    let attribution = if config.shap.instances > 0 {
        Some(explain_model(
            &model,
            &splits.train.x,
            &splits.test.x,
            &config.shap,
            stream(config, true, true, SHAP_STREAM),
        )?)
    } else {
        None
    };
    let shap_s = if attribution.is_some() { start.elapsed().as_secs_f64() } else { 0.0 };
    log::info!(
        "[{key}] test acc {:.4}, roc auc {:.4}",
        test.report.accuracy,
        test.report.roc_auc
    );

    let result = RunResult {
        key,
        train_acc,
        val_acc,
        test_acc: test.report.accuracy,
        metrics: test.report,
        efficient_class: test.efficient.efficient,
        shap_sign: attribution.as_ref().and_then(AttributionSummary::top_sign),
        epochs: outcome.epochs_run(),
        timings: Timings {
            preprocessing_s,
            train_s,
            inference_s: test.inference_s,
            shap_s,
        },
    };
    Ok(CellRun {
        result,
        model,
        outcome,
        attribution,
    })
}

/// Prepares data for and runs a single cell.
pub fn run_cell(config: &ExperimentConfig) -> Result<CellRun> {
    config.validate()?;
    let (split, preprocessing_s) = prepare(config)?;
    let splits = DataSplits::from_split(&split)?;
    drop(split);
    run_prepared(config, &splits, preprocessing_s)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GridOptions {
    /// Run the cells of one (band, dataset) group concurrently. Each cell
    /// then holds its own model and optimizer state in memory.
    pub parallel_cells: bool,
}

/// Everything that determines a cell's split.
fn data_key(c: &ExperimentConfig) -> String {
    format!(
        "{:?}|{:?}|{:?}|{}|{}|{}",
        c.band,
        c.dataset,
        c.source,
        c.standardize,
        c.filter_order,
        split_seed(c)
    )
}

/// Runs every cell; a failing cell is recorded in the table and the rest
/// continue. Cells sharing data are prepared once.
pub fn run_grid(configs: &[ExperimentConfig], options: GridOptions) -> Result<ResultTable> {
    let mut keys = BTreeMap::new();
    for c in configs {
        c.validate()?;
        if keys.insert(c.key(), ()).is_some() {
            return Err(Error::invalid(format!("duplicate grid cell {}", c.key())));
        }
    }
    let mut groups: BTreeMap<String, Vec<&ExperimentConfig>> = BTreeMap::new();
    for c in configs {
        groups.entry(data_key(c)).or_default().push(c);
    }
    let mut corpora: BTreeMap<&Path, Vec<RawRecording>> = BTreeMap::new();
    let (mut rows, mut failures) = (Vec::new(), Vec::new());
    let fail = |key: CellKey, e: &Error| {
        log::warn!("[{key}] failed: {e}");
        CellFailure {
            key,
            error: e.to_string(),
        }
    };

    for cells in groups.values_mut() {
        cells.sort_by_key(|c| c.key());
        let first = cells[0];
        let corpus = match &first.source {
            DataSource::Corpus(dir) => {
                if !corpora.contains_key(dir.as_path()) {
                    match load_recordings(dir) {
                        Ok(r) => {
                            corpora.insert(dir.as_path(), r);
                        }
                        Err(e) => {
                            failures.extend(cells.iter().map(|c| fail(c.key(), &e)));
                            continue;
                        }
                    }
                }
                corpora.get(dir.as_path()).map(Vec::as_slice)
            }
            _ => None,
        };
        let prepared = prepare_with(first, corpus).and_then(|(split, secs)| Ok((DataSplits::from_split(&split)?, secs)));
        let (splits, preprocessing_s) = match prepared {
            Ok(p) => p,
            Err(e) => {
                failures.extend(cells.iter().map(|c| fail(c.key(), &e)));
                continue;
            }
        };
        log::info!(
            "[{}/{}] prepared {} examples in {preprocessing_s:.2} s",
            first.band,
            first.dataset,
            splits.train.len() + splits.val.len() + splits.test.len()
        );
        let run = |c: &&ExperimentConfig| run_prepared(c, &splits, preprocessing_s).map(|r| r.result);
        let outcomes = if options.parallel_cells {
            par::map_slice(cells, run)
        } else {
            cells.iter().map(run).collect()
        };
        for (c, outcome) in cells.iter().zip(outcomes) {
            match outcome {
                Ok(r) => rows.push(r),
                Err(e) => failures.push(fail(c.key(), &e)),
            }
        }
    }
    ResultTable::new(rows, failures)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::SyntheticConfig;

    pub(crate) fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            max_epochs: 3,
            source: DataSource::Synthetic {
                config: SyntheticConfig {
                    samples: 64,
                    ..SyntheticConfig::default()
                },
                participants: 1,
                intensities: 1,
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn split_seed_ignores_model_and_optimizer() {
        let a = tiny();
        let b = ExperimentConfig {
            model: crate::nn::ModelKind::Cnn,
            optimizer: crate::optim::Rule::Ftrl,
            ..tiny()
        };
        assert_eq!(split_seed(&a), split_seed(&b));
        assert_eq!(data_key(&a), data_key(&b));
    }

    #[test]
    fn duplicate_cells_are_rejected() {
        let err = run_grid(&[tiny(), tiny()], GridOptions::default()).unwrap_err();
        assert!(err.is_validation());
    }

    #[test]
    fn failing_cell_does_not_abort() {
        let ok = tiny();
        // A missing corpus fails while preparing data.
        let bad = ExperimentConfig {
            dataset: crate::signal::Dataset::MonaLisa,
            source: DataSource::Corpus("/nonexistent/corpus".into()),
            ..tiny()
        };
        let t = run_grid(&[ok, bad], GridOptions::default()).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.failures.len(), 1);
    }
}
