use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::features::FeatureFile;
use crate::error::{Error, Result};
use crate::hallucinate::{Clip, Dataset, StreamId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One clip and the files that describe it. Paths are relative to the
/// manifest's root directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipManifest {
    pub id: String,
    pub label: usize,
    pub split: Split,
    pub backbone: String,
    /// Sketch copies per stream; each path holds one target vector.
    #[serde(default)]
    pub targets: BTreeMap<String, Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detections: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub saliency_spatial: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub saliency_temporal: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub classes: usize,
    pub clips: Vec<ClipManifest>,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let m: Manifest = serde_json::from_str(text)?;
        if m.classes < 2 {
            return Err(Error::invalid("manifest needs at least 2 classes"));
        }
        for c in &m.clips {
            if c.label >= m.classes {
                return Err(Error::OutOfRange(format!(
                    "clip {} has label {} with {} classes",
                    c.id, c.label, m.classes
                )));
            }
            for s in c.targets.keys() {
                s.parse::<StreamId>()?;
            }
        }
        Ok(m)
    }

    /// Parses and checks that every referenced file exists under `root`.
    pub fn load(path: &Path, root: &Path) -> Result<Self> {
        let m = Self::parse(&fs::read_to_string(path)?)?;
        for c in &m.clips {
            for p in c.paths() {
                if !root.join(p).is_file() {
                    return Err(Error::invalid(format!("clip {}: missing file {p}", c.id)));
                }
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    /// Reads backbone features and targets into memory. With `streams`, only
    /// those targets are loaded and each must be present.
    pub fn dataset(&self, root: &Path, streams: Option<&[StreamId]>) -> Result<Dataset> {
        let mut data = Dataset {
            classes: self.classes,
            ..Dataset::default()
        };
        for c in &self.clips {
            let clip = c.load(root, streams)?;
            match c.split {
                Split::Train => data.train.push(clip),
                Split::Val => data.val.push(clip),
                Split::Test => data.test.push(clip),
            }
        }
        Ok(data)
    }
}

impl ClipManifest {
    pub fn paths(&self) -> Vec<&str> {
        let mut out = vec![self.backbone.as_str()];
        out.extend(self.targets.values().flatten().map(String::as_str));
        out.extend(
            [&self.detections, &self.saliency_spatial, &self.saliency_temporal]
                .into_iter()
                .flatten()
                .map(String::as_str),
        );
        out
    }

    pub fn load(&self, root: &Path, streams: Option<&[StreamId]>) -> Result<Clip> {
        let backbone = FeatureFile::read(&resolve(root, &self.backbone))?.data;
        let mut targets = BTreeMap::new();
        for (name, paths) in &self.targets {
            let id: StreamId = name.parse()?;
            if streams.is_some_and(|s| !s.contains(&id)) {
                continue;
            }
            let copies = paths
                .iter()
                .map(|p| Ok(FeatureFile::read(&resolve(root, p))?.data))
                .collect::<Result<Vec<_>>>()?;
            targets.insert(id, copies);
        }
        if let Some(wanted) = streams {
            for id in wanted {
                if !targets.contains_key(id) {
                    return Err(Error::MissingTarget(format!("{id} for clip {}", self.id)));
                }
            }
        }
        Ok(Clip {
            id: self.id.clone(),
            backbone,
            label: self.label,
            targets,
        })
    }
}

pub fn resolve(root: &Path, rel: &str) -> PathBuf {
    root.join(rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_must_be_below_classes() {
        let text = r#"{"classes": 2, "clips": [{"id": "a", "label": 2, "split": "train", "backbone": "a.hfv"}]}"#;
        assert!(matches!(Manifest::parse(text), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn missing_files_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let text = r#"{"classes": 2, "clips": [{"id": "a", "label": 1, "split": "val", "backbone": "a.hfv"}]}"#;
        let path = dir.path().join("m.json");
        fs::write(&path, text).unwrap();
        assert!(Manifest::load(&path, dir.path()).is_err());
        FeatureFile::vector(vec![1.0, 2.0]).write(&dir.path().join("a.hfv")).unwrap();
        let m = Manifest::load(&path, dir.path()).unwrap();
        let d = m.dataset(dir.path(), None).unwrap();
        assert_eq!(d.val[0].backbone, vec![1.0, 2.0]);
    }

    #[test]
    fn unknown_stream_rejected() {
        let text = r#"{"classes": 2, "clips": [{"id": "a", "label": 0, "split": "test", "backbone": "a", "targets": {"xyz": ["t"]}}]}"#;
        assert!(Manifest::parse(text).is_err());
    }
}
