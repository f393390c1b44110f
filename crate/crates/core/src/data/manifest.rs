//! JSON Lines clip manifest.
//!
//! One record per line:
//! `{"id": str, "fold": int, "label": number | [number, number], "video": path, "image": path, "text": path}`.
//! Relative paths resolve against the manifest's directory.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::features::{read_features, Modality};
use super::sampling::{clip_windows, WindowSample};
use crate::error::{Error, Result};

pub const NUM_FOLDS: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Regression,
}

impl Task {
    /// Width of the prediction head.
    pub fn out_dim(self) -> usize {
        match self {
            Task::Classification => 1,
            Task::Regression => 2,
        }
    }

    pub fn metric_name(self) -> &'static str {
        match self {
            Task::Classification => "f1",
            Task::Regression => "ccc",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Classification => "classification",
            Task::Regression => "regression",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classification" | "cls" => Ok(Task::Classification),
            "regression" | "reg" => Ok(Task::Regression),
            other => Err(Error::Config(format!("unknown task {other:?}"))),
        }
    }
}

/// Binary class or a (valence, arousal) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Label {
    Class(u8),
    Va([f64; 2]),
}

impl Label {
    pub fn task(&self) -> Task {
        match self {
            Label::Class(_) => Task::Classification,
            Label::Va(_) => Task::Regression,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        match *self {
            Label::Class(c) => vec![c as f64],
            Label::Va(va) => va.to_vec(),
        }
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Label::Class(c) => s.serialize_u8(*c),
            Label::Va(va) => va.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Pair([f64; 2]),
        }
        match Raw::deserialize(d)? {
            Raw::Number(x) if x == 0.0 || x == 1.0 => Ok(Label::Class(x as u8)),
            Raw::Number(x) => Err(serde::de::Error::custom(format!(
                "class label must be 0 or 1, got {x}"
            ))),
            Raw::Pair(va) if va.iter().all(|v| v.is_finite()) => Ok(Label::Va(va)),
            Raw::Pair(va) => Err(serde::de::Error::custom(format!(
                "non-finite valence/arousal {va:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub id: String,
    pub fold: u32,
    pub label: Label,
    pub video: PathBuf,
    pub image: PathBuf,
    pub text: PathBuf,
}

impl ClipRecord {
    pub fn path(&self, m: Modality) -> &Path {
        match m {
            Modality::Video => &self.video,
            Modality::Image => &self.image,
            Modality::Text => &self.text,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub records: Vec<ClipRecord>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: ClipRecord = serde_json::from_str(line)
                .map_err(|e| Error::Data(format!("{} line {}: {e}", path.display(), lineno + 1)))?;
            if !(1..=NUM_FOLDS).contains(&rec.fold) {
                return Err(Error::Data(format!(
                    "{} line {}: fold {} outside 1..={NUM_FOLDS}",
                    path.display(),
                    lineno + 1,
                    rec.fold
                )));
            }
            records.push(rec);
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { root, records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        for rec in &self.records {
            serde_json::to_writer(&mut buf, rec).map_err(|e| Error::json(path, e))?;
            buf.write_all(b"\n").expect("write to Vec");
        }
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Fails unless every label belongs to `task`.
    pub fn check_task(&self, task: Task) -> Result<()> {
        match self.records.iter().find(|r| r.label.task() != task) {
            Some(r) => Err(Error::Config(format!(
                "clip {} has a {} label but the task is {task}",
                r.id,
                r.label.task()
            ))),
            None => Ok(()),
        }
    }

    /// Reads the feature files of every clip whose fold satisfies `keep`
    /// and cuts them into windows, in manifest order.
    pub fn load_windows(
        &self,
        keep: impl Fn(u32) -> bool,
        stride: usize,
    ) -> Result<Vec<WindowSample>> {
        let mut out = Vec::new();
        for rec in self.records.iter().filter(|r| keep(r.fold)) {
            let read = |m: Modality| read_features(&self.resolve(rec.path(m)), m);
            let (v, i, t) = (
                read(Modality::Video)?,
                read(Modality::Image)?,
                read(Modality::Text)?,
            );
            out.extend(clip_windows(&v, &i, &t, rec.label, stride)?);
        }
        Ok(out)
    }
}
