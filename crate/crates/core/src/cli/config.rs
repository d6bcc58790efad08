//! `key=value` run configuration: parsing, validation and the dataset /
//! architecture it resolves to.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::data::mnist::{load_mnist, MnistMode};
use crate::data::store::{load_modelnet, load_splits};
use crate::data::synth::{synth_segmentation, synth_shapes, Shape};
use crate::data::{Dataset, Splits};
use crate::error::{Error, Result};
use crate::graph::WeightScheme;
use crate::model::{ArchSpec, ClusterGraph, Variant};
use crate::training::{Augment, TrainConfig};

/// Every accepted key with its default value.
pub const KEYS: &[(&str, &str)] = &[
    ("arch", "4l-spec-cp"),
    ("augment", "false"),
    ("batch_size", "32"),
    ("cluster_graph", "spatial"),
    ("data_seed", "1000"),
    ("dataset", "synth"),
    ("deterministic", "false"),
    ("epochs", "50"),
    ("lr", "0.001"),
    ("mnist_dir", "data/mnist-subset"),
    ("mnist_mode", "full"),
    ("n_points", "256"),
    ("n_test", "100"),
    ("n_train", "400"),
    ("noise", "0.02"),
    ("normals", "false"),
    ("out_dir", "runs/latest"),
    ("scale", "desk"),
    ("seed", "0"),
    ("seeds", "3"),
    ("seg_shape", "cylinder"),
    ("threads", "0"),
    ("weight_scheme", "gaussian"),
];

pub fn valid_keys() -> String {
    KEYS.iter().map(|(k, _)| *k).collect::<Vec<_>>().join(", ")
}

/// Resolved configuration: defaults, then the config file, then overrides.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn parse_line(line: &str, source: &str, ln: usize) -> Result<Option<(String, String)>> {
    let line = line.split('#').next().unwrap_or("").trim();
    if line.is_empty() {
        return Ok(None);
    }
    let (k, v) = line
        .split_once('=')
        .ok_or_else(|| Error::Parse { path: source.into(), line: ln, msg: format!("expected key=value, found {line:?}") })?;
    Ok(Some((k.trim().to_string(), v.trim().to_string())))
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { values: KEYS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect() }
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(Error::Config(format!("unknown key {key:?}; valid keys: {}", valid_keys())));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str, source: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            if let Some((k, v)) = parse_line(line, source, i + 1)? {
                self.set(&k, &v)?;
            }
        }
        Ok(())
    }

    /// Defaults, then `config_path` (if any), then each `key=value` override.
    pub fn load(config_path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(p) = config_path {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            cfg.apply_text(&text, &p.display().to_string())?;
        }
        for o in overrides {
            let (k, v) = parse_line(o, "command line", 0)?
                .ok_or_else(|| Error::Config(format!("empty override {o:?}")))?;
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("unregistered key {key}"))
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key);
        v.parse().map_err(|_| Error::Config(format!("invalid value {v:?} for {key}")))
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.parsed(key)
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        self.parsed(key)
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        self.parsed(key)
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        match self.get(key) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            v => Err(Error::Config(format!("invalid value {v:?} for {key} (expected true or false)"))),
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.get("out_dir"))
    }

    /// Sorted `key=value` lines.
    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            epochs: self.usize("epochs")?,
            seed: self.u64("seed")?,
            base_lr: self.f64("lr")?,
            batch_size: self.usize("batch_size")?,
            augment: if self.bool("augment")? {
                Augment { features_are_normals: self.bool("normals")?, ..Augment::all() }
            } else {
                Augment::default()
            },
            deterministic: self.bool("deterministic")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn is_segmentation(&self) -> bool {
        self.get("dataset") == "synth_seg"
    }

    /// Loads or generates the train/test splits named by `dataset`.
    pub fn dataset(&self) -> Result<Splits> {
        let n_train = self.usize("n_train")?;
        let n_test = self.usize("n_test")?;
        let n_points = self.usize("n_points")?;
        let noise = self.f64("noise")?;
        let seed = self.u64("data_seed")?;
        let tag = |mut d: Dataset, s: &str| {
            d.split = s.into();
            d
        };
        let dataset = self.get("dataset");
        let splits = match dataset {
            "synth" => {
                if n_train % 4 != 0 || n_test % 4 != 0 {
                    return Err(Error::Config("synth needs n_train and n_test divisible by 4 (one share per class)".into()));
                }
                Splits {
                    train: tag(synth_shapes(n_train / 4, n_points, noise, seed)?, "train"),
                    test: tag(synth_shapes(n_test / 4, n_points, noise, seed + 1)?, "test"),
                }
            }
            "synth_seg" => {
                let shape = Shape::parse(self.get("seg_shape"))?;
                Splits {
                    train: tag(synth_segmentation(shape, n_train, n_points, noise, seed)?, "train"),
                    test: tag(synth_segmentation(shape, n_test, n_points, noise, seed + 1)?, "test"),
                }
            }
            "mnist" => {
                let mode = MnistMode::parse(self.get("mnist_mode"))?;
                load_mnist(Path::new(self.get("mnist_dir")), n_train, n_test, mode)?
            }
            other => match other.split_once(':') {
                Some(("dir", path)) => load_splits(Path::new(path))?,
                Some(("modelnet", path)) => load_modelnet(Path::new(path), n_points, self.bool("normals")?, seed)?,
                _ => {
                    return Err(Error::Config(format!(
                        "unknown dataset {other:?} (expected synth, synth_seg, mnist, dir:<path> or modelnet:<path>)"
                    )))
                }
            },
        };
        if splits.train.is_empty() {
            return Err(Error::Input(format!("dataset {dataset}: train split is empty")));
        }
        Ok(splits)
    }

    /// Architecture for `variant` sized to the data in `splits`.
    pub fn arch_for(&self, variant: Variant, splits: &Splits) -> Result<ArchSpec> {
        let first = &splits.train.items.first().ok_or_else(|| Error::Input("train split is empty".into()))?.cloud;
        let (coord_dim, in_features) = (first.dim(), first.features.cols());
        let seg = splits.train.n_part_labels > 0;
        let mut arch = match (self.get("scale"), seg) {
            ("desk", false) => ArchSpec::desk_classifier(variant, splits.train.n_classes(), coord_dim, in_features),
            ("desk", true) => ArchSpec::desk_segmenter(variant, splits.train.n_part_labels, coord_dim, in_features),
            ("1k", false) => ArchSpec::table_1k(variant, splits.train.n_classes(), in_features),
            ("2k", false) => ArchSpec::table_2k(variant, splits.train.n_classes(), in_features),
            (s @ ("1k" | "2k"), true) => {
                return Err(Error::Config(format!("scale={s} defines classifiers only; use scale=desk for segmentation")))
            }
            (s, _) => return Err(Error::Config(format!("unknown scale {s:?} (expected desk, 1k or 2k)"))),
        };
        if arch.coord_dim != coord_dim {
            return Err(Error::Config(format!(
                "scale={} expects {}-d points, dataset has {coord_dim}-d",
                self.get("scale"),
                arch.coord_dim
            )));
        }
        arch.weight_scheme = WeightScheme::parse(self.get("weight_scheme"))?;
        arch.cluster_graph = match self.get("cluster_graph") {
            "spatial" => ClusterGraph::Spatial,
            "features" => ClusterGraph::Features,
            v => return Err(Error::Config(format!("invalid cluster_graph {v:?} (expected spatial or features)"))),
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn variant(&self) -> Result<Variant> {
        Variant::parse(self.get("arch"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_overrides() {
        let mut c = RunConfig::default();
        c.apply_text("# comment\nepochs = 7\n\nseed=3 # trailing\n", "cfg").unwrap();
        assert_eq!(c.usize("epochs").unwrap(), 7);
        c.set("epochs", "9").unwrap();
        assert_eq!(c.usize("epochs").unwrap(), 9);
        assert_eq!(c.u64("seed").unwrap(), 3);
    }

    #[test]
    fn unknown_key_lists_valid_keys() {
        let err = RunConfig::default().set("epoch", "3").unwrap_err().to_string();
        assert!(err.contains("epoch") && err.contains("batch_size") && err.contains("weight_scheme"), "{err}");
    }

    #[test]
    fn malformed_line_names_line() {
        let err = RunConfig::default().apply_text("epochs=1\nbogus\n", "x.cfg").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn manifest_text_is_sorted() {
        let t = RunConfig::default().to_text();
        let keys: Vec<&str> = t.lines().map(|l| l.split('=').next().unwrap()).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }
}
