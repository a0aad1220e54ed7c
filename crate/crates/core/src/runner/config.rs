//! Experiment configuration and the flat `key = value` config file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::nn::ModelKind;
use crate::optim::{OptimizerConfig, Rule};
use crate::signal::{Band, Dataset, SyntheticConfig, DEFAULT_FILTER_ORDER};
use crate::{Error, Result};

/// Where a cell's recordings come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DataSource {
    /// Directory of recording files.
    Corpus(PathBuf),
    Synthetic {
        config: SyntheticConfig,
        participants: u32,
        intensities: u8,
    },
    /// A split written by `preprocess`; band and dataset come from the file.
    Prepared(PathBuf),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            config: SyntheticConfig::default(),
            participants: 10,
            intensities: 10,
        }
    }
}

/// Attribution work done per cell. `instances = 0` skips it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapBudget {
    pub instances: usize,
    pub background: usize,
    pub permutations: usize,
    pub segment_size: usize,
}

impl Default for ShapBudget {
    fn default() -> Self {
        Self {
            instances: 0,
            background: 50,
            permutations: 100,
            segment_size: 250,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub band: Band,
    pub dataset: Dataset,
    pub model: ModelKind,
    pub optimizer: Rule,
    /// `None` uses the model kind's default.
    pub learning_rate: Option<f64>,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub seed: u64,
    pub source: DataSource,
    pub standardize: bool,
    pub filter_order: usize,
    pub shap: ShapBudget,
    /// FTRL regularization strengths.
    pub l1: f64,
    pub l2: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            band: Band::Beta,
            dataset: Dataset::NeckerCube,
            model: ModelKind::Small,
            optimizer: Rule::Adam,
            learning_rate: None,
            batch_size: 32,
            max_epochs: 150,
            patience: 10,
            min_delta: 1e-5,
            seed: 0,
            source: DataSource::default(),
            standardize: false,
            filter_order: DEFAULT_FILTER_ORDER,
            shap: ShapBudget::default(),
            l1: 0.0,
            l2: 0.0,
        }
    }
}

/// The identity of one grid cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub band: Band,
    pub dataset: Dataset,
    pub model: ModelKind,
    pub optimizer: Rule,
}

impl std::fmt::Display for CellKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}/{}/{}", self.band, self.dataset, self.model, self.optimizer)
    }
}

impl ExperimentConfig {
    pub fn key(&self) -> CellKey {
        CellKey {
            band: self.band,
            dataset: self.dataset,
            model: self.model,
            optimizer: self.optimizer,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate.unwrap_or_else(|| self.model.default_learning_rate())
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        let mut c = OptimizerConfig::new(self.optimizer, self.learning_rate());
        c.l1 = self.l1;
        c.l2 = self.l2;
        c
    }

    pub fn validate(&self) -> Result<()> {
        let lr = self.learning_rate();
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {lr}")));
        }
        if self.max_epochs == 0 || self.patience == 0 || self.batch_size == 0 {
            return Err(Error::invalid("max_epochs, patience and batch_size must be at least 1"));
        }
        if !(self.min_delta >= 0.0) {
            return Err(Error::invalid("min_delta must be non-negative"));
        }
        if self.shap.instances > 0
            && (self.shap.background == 0 || self.shap.permutations == 0 || self.shap.segment_size == 0)
        {
            return Err(Error::invalid("shap background, permutations and segment size must be at least 1"));
        }
        if let DataSource::Synthetic { config, participants, intensities } = &self.source {
            config.validate()?;
            if !(1..=10).contains(participants) || !(1..=10).contains(intensities) {
                return Err(Error::invalid("synthetic participants and intensities must be 1..=10"));
            }
        }
        self.optimizer_config().validate()
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::invalid(format!("{key}: {value:?} is not {what}"));
        let num = |what| value.parse::<f64>().map_err(|_| bad(what));
        let count = || value.parse::<usize>().map_err(|_| bad("a non-negative integer"));
        match key {
            "band" => self.band = value.parse()?,
            "dataset" => self.dataset = value.parse()?,
            "model" => self.model = value.parse()?,
            "optimizer" => self.optimizer = value.parse()?,
            "learning_rate" | "lr" => self.learning_rate = Some(num("a number")?),
            "batch_size" => self.batch_size = count()?,
            "max_epochs" => self.max_epochs = count()?,
            "patience" => self.patience = count()?,
            "min_delta" => self.min_delta = num("a number")?,
            "seed" => {
                self.seed = value.parse().map_err(|_| bad("an unsigned integer"))?;
                if let DataSource::Synthetic { config, .. } = &mut self.source {
                    config.seed = self.seed;
                }
            }
            "standardize" => self.standardize = parse_bool(value).ok_or_else(|| bad("true or false"))?,
            "filter_order" => self.filter_order = count()?,
            "l1" => self.l1 = num("a number")?,
            "l2" => self.l2 = num("a number")?,
            "corpus" => self.source = DataSource::Corpus(PathBuf::from(value)),
            "data" => self.source = DataSource::Prepared(PathBuf::from(value)),
            "shap.instances" => self.shap.instances = count()?,
            "shap.background" => self.shap.background = count()?,
            "shap.permutations" => self.shap.permutations = count()?,
            "shap.segment_size" => self.shap.segment_size = count()?,
            k if k.starts_with("synthetic.") => {
                if !matches!(self.source, DataSource::Synthetic { .. }) {
                    let mut fresh = DataSource::default();
                    if let DataSource::Synthetic { config, .. } = &mut fresh {
                        config.seed = self.seed;
                    }
                    self.source = fresh;
                }
                let DataSource::Synthetic { config, participants, intensities } = &mut self.source else {
                    unreachable!("source was just made synthetic");
                };
                match &k["synthetic.".len()..] {
                    "participants" => *participants = value.parse().map_err(|_| bad("an integer"))?,
                    "intensities" => *intensities = value.parse().map_err(|_| bad("an integer"))?,
                    "samples" => config.samples = count()?,
                    "noise" => config.noise_amplitude = num("a number")?,
                    "jitter" => config.jitter = num("a number")?,
                    "phase_locked" => {
                        config.phase_locked = parse_bool(value).ok_or_else(|| bad("true or false"))?
                    }
                    "seed" => config.seed = value.parse().map_err(|_| bad("an unsigned integer"))?,
                    "left" => config.left = parse_five(value).ok_or_else(|| bad("five numbers"))?,
                    "right" => config.right = parse_five(value).ok_or_else(|| bad("five numbers"))?,
                    other => return Err(Error::invalid(format!("unknown setting synthetic.{other}"))),
                }
            }
            _ => return Err(Error::invalid(format!("unknown setting {key:?}"))),
        }
        Ok(())
    }
}

fn parse_bool(v: &str) -> Option<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Some(true),
        "false" | "no" | "0" | "off" => Some(false),
        _ => None,
    }
}

fn parse_five(v: &str) -> Option<[f64; 5]> {
    let vals: Vec<f64> = v.split(',').map(|s| s.trim().parse().ok()).collect::<Option<_>>()?;
    vals.try_into().ok()
}

/// Splits a comma list and parses every item.
pub fn parse_list<T: std::str::FromStr<Err = Error>>(v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect()
}

/// Settings read from a `key = value` file, in file order.
///
/// Blank lines and lines starting with `#` are ignored.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigFile {
    pub entries: Vec<(String, String)>,
}

impl ConfigFile {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        let mut seen = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fail = |msg: String| Error::Format {
                file: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| fail(format!("expected key = value, got {line:?}")))?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if k.is_empty() {
                return Err(fail("empty key".into()));
            }
            if let Some(prev) = seen.insert(k.clone(), i + 1) {
                return Err(fail(format!("{k} already set on line {prev}")));
            }
            entries.push((k, v));
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

/// Grid axes; each cell copies `base` and sets its key.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub bands: Vec<Band>,
    pub datasets: Vec<Dataset>,
    pub models: Vec<ModelKind>,
    pub optimizers: Vec<Rule>,
    pub base: ExperimentConfig,
}

impl GridSpec {
    /// All 5 x 2 x 3 x 8 cells.
    pub fn full(base: ExperimentConfig) -> Self {
        Self {
            bands: Band::ALL.to_vec(),
            datasets: Dataset::ALL.to_vec(),
            models: ModelKind::ALL.to_vec(),
            optimizers: Rule::ALL.to_vec(),
            base,
        }
    }

    /// Grid keys (`bands`, `datasets`, `models`, `optimizers`) go to the axes,
    /// everything else to the base config.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "bands" => self.bands = parse_list(value)?,
            "datasets" => self.datasets = parse_list(value)?,
            "models" => self.models = parse_list(value)?,
            "optimizers" => self.optimizers = parse_list(value)?,
            _ => self.base.set(key, value)?,
        }
        Ok(())
    }

    pub fn cells(&self) -> Vec<ExperimentConfig> {
        let mut out = Vec::new();
        for &band in &self.bands {
            for &dataset in &self.datasets {
                for &model in &self.models {
                    for &optimizer in &self.optimizers {
                        out.push(ExperimentConfig {
                            band,
                            dataset,
                            model,
                            optimizer,
                            ..self.base.clone()
                        });
                    }
                }
            }
        }
        out
    }
}
