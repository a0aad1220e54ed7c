//! Recordings and their text file format.
//!
//! A recording file starts with
//! `# dataset=<MonaLisa|NeckerCube> participant=<int> intensity=<0.1..1.0> rate=250`
//! followed by one `label,v1,...,vN` line per channel. Files written with a
//! length other than 15,000 samples add `samples=<N>` to the header.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const SAMPLE_RATE: f64 = 250.0;
pub const SAMPLES_PER_RECORDING: usize = 15_000;

/// The 31 referenced electrodes; `-A1` channels are left, `-A2` right.
pub const CHANNELS: [&str; 31] = [
    "O2-A2", "O1-A1", "P4-A2", "P3-A1", "C4-A2", "C3-A1", "F4-A2", "F3-A1", "Fp2-A2", "Fp1-A1",
    "T6-A2", "T5-A1", "T4-A2", "T3-A1", "F8-A2", "F7-A1", "Oz-A2", "Pz-A1", "Cz-A2", "Fz-A1",
    "Fpz-A2", "FT7-A1", "FC3-A1", "Fcz-A1", "FC4-A2", "FT8-A2", "TP7-A1", "CP3-A1", "Cpz-A1",
    "CP4-A2", "TP8-A2",
];

/// Hemisphere label from the reference suffix: `-A1` is 0 (left), `-A2` is 1 (right).
pub fn label_channel(label: &str) -> Result<u8> {
    if label.ends_with("-A1") {
        Ok(0)
    } else if label.ends_with("-A2") {
        Ok(1)
    } else {
        Err(Error::UnknownChannel(label.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dataset {
    MonaLisa,
    NeckerCube,
}

impl Dataset {
    pub const ALL: [Dataset; 2] = [Dataset::MonaLisa, Dataset::NeckerCube];

    /// Name used in recording headers.
    pub fn header_name(self) -> &'static str {
        match self {
            Dataset::MonaLisa => "MonaLisa",
            Dataset::NeckerCube => "NeckerCube",
        }
    }

    /// Short name used on the command line and in reports.
    pub fn short_name(self) -> &'static str {
        match self {
            Dataset::MonaLisa => "monalisa",
            Dataset::NeckerCube => "necker",
        }
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for Dataset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "monalisa" | "mona_lisa" | "mona-lisa" => Ok(Dataset::MonaLisa),
            "necker" | "neckercube" | "necker_cube" | "necker-cube" => Ok(Dataset::NeckerCube),
            _ => Err(Error::invalid(format!("unknown dataset {s:?} (monalisa, necker)"))),
        }
    }
}

/// Stimulus intensity in tenths, 1..=10 for 0.1..=1.0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Intensity(u8);

impl Intensity {
    pub fn from_tenths(tenths: u8) -> Result<Self> {
        if (1..=10).contains(&tenths) {
            Ok(Self(tenths))
        } else {
            Err(Error::invalid(format!("intensity must be 0.1..=1.0, got {}", f64::from(tenths) / 10.0)))
        }
    }

    pub fn tenths(self) -> u8 {
        self.0
    }

    pub fn value(self) -> f64 {
        f64::from(self.0) / 10.0
    }
}

impl fmt::Display for Intensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1}", self.value())
    }
}

impl FromStr for Intensity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v: f64 = s
            .parse()
            .map_err(|_| Error::invalid(format!("intensity {s:?} is not a number")))?;
        let tenths = (v * 10.0).round();
        if (v * 10.0 - tenths).abs() > 1e-9 || !(1.0..=10.0).contains(&tenths) {
            return Err(Error::invalid(format!("intensity must be one of 0.1..=1.0, got {s}")));
        }
        Self::from_tenths(tenths as u8)
    }
}

/// One stimulus presentation: 31 channels of equal length.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRecording {
    pub dataset: Dataset,
    pub participant: u32,
    pub intensity: Intensity,
    pub channel_labels: Vec<String>,
    pub samples: Vec<Vec<f64>>,
    pub sample_rate: f64,
}

impl RawRecording {
    pub fn new(
        dataset: Dataset,
        participant: u32,
        intensity: Intensity,
        channel_labels: Vec<String>,
        samples: Vec<Vec<f64>>,
        sample_rate: f64,
    ) -> Result<Self> {
        let rec = Self {
            dataset,
            participant,
            intensity,
            channel_labels,
            samples,
            sample_rate,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channel_labels.len() != CHANNELS.len() || self.samples.len() != CHANNELS.len() {
            return Err(Error::invalid(format!(
                "recording needs {} channels, got {} labels and {} series",
                CHANNELS.len(),
                self.channel_labels.len(),
                self.samples.len()
            )));
        }
        for label in &self.channel_labels {
            label_channel(label)?;
        }
        let len = self.len();
        if len == 0 || self.samples.iter().any(|s| s.len() != len) {
            return Err(Error::invalid("channels must share one non-zero length"));
        }
        if !(1..=10).contains(&self.participant) {
            return Err(Error::invalid(format!("participant id {} outside 1..=10", self.participant)));
        }
        Ok(())
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn header(&self) -> String {
        let mut h = format!(
            "# dataset={} participant={} intensity={} rate={}",
            self.dataset.header_name(),
            self.participant,
            self.intensity,
            self.sample_rate
        );
        if self.len() != SAMPLES_PER_RECORDING {
            h.push_str(&format!(" samples={}", self.len()));
        }
        h
    }
}

pub fn recording_file_name(rec: &RawRecording) -> String {
    format!(
        "{}_p{:02}_i{:02}.csv",
        rec.dataset.short_name(),
        rec.participant,
        rec.intensity.tenths()
    )
}

pub fn save_recording(rec: &RawRecording, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "{}", rec.header())?;
        for (label, series) in rec.channel_labels.iter().zip(&rec.samples) {
            write!(w, "{label}")?;
            for v in series {
                // `{}` on f64 is the shortest representation that parses back exactly.
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

/// Writes one file per recording into `dir`, creating it if needed.
pub fn save_recordings(recordings: &[RawRecording], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    recordings
        .iter()
        .map(|rec| {
            let path = dir.join(recording_file_name(rec));
            save_recording(rec, &path)?;
            Ok(path)
        })
        .collect()
}

pub fn load_recording(path: &Path) -> Result<RawRecording> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let fail = |line: usize, msg: String| Error::Format {
        file: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| fail(1, "empty file".into()))?;
    let header = header
        .strip_prefix('#')
        .ok_or_else(|| fail(1, "missing '# dataset=...' header".into()))?;

    let (mut dataset, mut participant, mut intensity, mut rate, mut expected) =
        (None, None, None, None, SAMPLES_PER_RECORDING);
    for field in header.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| fail(1, format!("header field {field:?} is not key=value")))?;
        let bad = |e: Error| fail(1, format!("{key}: {e}"));
        match key {
            "dataset" => dataset = Some(value.parse::<Dataset>().map_err(bad)?),
            "participant" => {
                participant = Some(
                    value
                        .parse::<u32>()
                        .map_err(|_| fail(1, format!("participant {value:?} is not an integer")))?,
                )
            }
            "intensity" => intensity = Some(value.parse::<Intensity>().map_err(bad)?),
            "rate" => {
                rate = Some(
                    value
                        .parse::<f64>()
                        .map_err(|_| fail(1, format!("rate {value:?} is not a number")))?,
                )
            }
            "samples" => {
                expected = value
                    .parse()
                    .map_err(|_| fail(1, format!("samples {value:?} is not an integer")))?
            }
            _ => return Err(fail(1, format!("unknown header key {key:?}"))),
        }
    }
    let dataset = dataset.ok_or_else(|| fail(1, "header lacks dataset".into()))?;
    let participant = participant.ok_or_else(|| fail(1, "header lacks participant".into()))?;
    let intensity = intensity.ok_or_else(|| fail(1, "header lacks intensity".into()))?;
    let sample_rate = rate.ok_or_else(|| fail(1, "header lacks rate".into()))?;

    let mut labels = Vec::with_capacity(CHANNELS.len());
    let mut samples = Vec::with_capacity(CHANNELS.len());
    for (i, line) in lines {
        let line_no = i + 1;
        let mut parts = line.split(',');
        let label = parts.next().unwrap_or_default().trim().to_string();
        label_channel(&label).map_err(|e| fail(line_no, e.to_string()))?;
        let series = parts
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| fail(line_no, format!("bad sample value {v:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if series.len() != expected {
            return Err(fail(
                line_no,
                format!("channel {label} has {} samples, expected {expected}", series.len()),
            ));
        }
        labels.push(label);
        samples.push(series);
    }
    let last_line = text.lines().count().max(1);
    if labels.is_empty() {
        return Err(fail(last_line, "recording has a header but no channels".into()));
    }
    if labels.len() != CHANNELS.len() {
        return Err(fail(
            last_line,
            format!("recording has {} channels, expected {}", labels.len(), CHANNELS.len()),
        ));
    }
    RawRecording::new(dataset, participant, intensity, labels, samples, sample_rate)
        .map_err(|e| fail(1, e.to_string()))
}

/// Loads every `*.csv` recording in `dir`, in file-name order.
pub fn load_recordings(dir: &Path) -> Result<Vec<RawRecording>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    paths.iter().map(|p| load_recording(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_follow_reference_suffix() {
        assert_eq!(label_channel("O2-A2").unwrap(), 1);
        assert_eq!(label_channel("Cpz-A1").unwrap(), 0);
        assert!(matches!(label_channel("O2"), Err(Error::UnknownChannel(_))));
    }

    #[test]
    fn channel_list_is_sixteen_left_fifteen_right() {
        let right = CHANNELS.iter().filter(|c| label_channel(c).unwrap() == 1).count();
        assert_eq!((CHANNELS.len() - right, right), (16, 15));
    }

    #[test]
    fn intensity_parsing() {
        assert_eq!("0.3".parse::<Intensity>().unwrap().tenths(), 3);
        assert_eq!("1.0".parse::<Intensity>().unwrap().to_string(), "1.0");
        assert!("0.35".parse::<Intensity>().is_err());
        assert!("0".parse::<Intensity>().is_err());
    }

    #[test]
    fn dataset_names() {
        assert_eq!("Necker".parse::<Dataset>().unwrap(), Dataset::NeckerCube);
        assert_eq!("MonaLisa".parse::<Dataset>().unwrap(), Dataset::MonaLisa);
        assert!("cube".parse::<Dataset>().is_err());
    }
}
