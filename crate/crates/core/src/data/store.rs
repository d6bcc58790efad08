//! Datasets on disk: a directory of xyz files plus a manifest.
//!
//! ```text
//! <dir>/manifest.txt        classes=…, part_labels=…, train=N, test=M, fingerprint=…
//! <dir>/<split>/labels.txt  one "<file> <class index>" line per item
//! <dir>/<split>/<file>.xyz
//! ```
//!
//! [`load_modelnet`] also reads the usual mesh-collection layout
//! `<dir>/<class>/{train,test}/*.off`.

use std::collections::BTreeMap;
use std::path::Path;

use crate::data::mesh::{load_off, sample_mesh};
use crate::data::xyz::{load_xyz, write_xyz};
use crate::data::{Dataset, Sample, Splits};
use crate::error::{Error, Result};

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn save_splits(splits: &Splits, dir: &Path) -> Result<()> {
    for ds in [&splits.train, &splits.test] {
        if ds.class_names.iter().any(|n| n.contains(',') || n.contains('\n')) {
            return Err(Error::Input("class names may not contain commas or newlines".into()));
        }
    }
    for (tag, ds) in [("train", &splits.train), ("test", &splits.test)] {
        let sub = dir.join(tag);
        std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        let mut labels = String::new();
        for (i, s) in ds.items.iter().enumerate() {
            let name = format!("item_{i:05}.xyz");
            write_xyz(&s.cloud, &sub.join(&name))?;
            labels.push_str(&format!("{name} {}\n", s.label));
        }
        write(&sub.join("labels.txt"), &labels)?;
    }
    let mut manifest = BTreeMap::new();
    manifest.insert("classes", splits.train.class_names.join(","));
    manifest.insert("part_labels", splits.train.n_part_labels.to_string());
    manifest.insert("train", splits.train.len().to_string());
    manifest.insert("test", splits.test.len().to_string());
    manifest.insert("fingerprint", splits.fingerprint());
    let text: String = manifest.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    write(&dir.join("manifest.txt"), &text)
}

fn read_manifest(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg: "expected key=value".into(),
        })?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn load_split(dir: &Path, tag: &str, class_names: &[String], part_labels: usize) -> Result<Dataset> {
    let sub = dir.join(tag);
    let index = sub.join("labels.txt");
    let text = std::fs::read_to_string(&index).map_err(|e| Error::io(&index, e))?;
    let mut items = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::Parse { path: index.display().to_string(), line: i + 1, msg: msg.into() };
        let (file, label) = line.split_once(' ').ok_or_else(|| bad("expected \"<file> <label>\""))?;
        let label: usize = label.trim().parse().map_err(|_| bad("label is not an integer"))?;
        items.push(Sample { cloud: load_xyz(&sub.join(file))?, label });
    }
    let ds = Dataset { items, class_names: class_names.to_vec(), n_part_labels: part_labels, split: tag.into() };
    ds.validate()?;
    Ok(ds)
}

pub fn load_splits(dir: &Path) -> Result<Splits> {
    let path = dir.join("manifest.txt");
    let m = read_manifest(&path)?;
    let get = |k: &str| m.get(k).ok_or_else(|| Error::Input(format!("{}: missing key {k}", path.display())));
    let classes: Vec<String> = get("classes")?.split(',').filter(|s| !s.is_empty()).map(str::to_string).collect();
    let part_labels: usize =
        get("part_labels")?.parse().map_err(|_| Error::Input(format!("{}: bad part_labels", path.display())))?;
    let splits = Splits {
        train: load_split(dir, "train", &classes, part_labels)?,
        test: load_split(dir, "test", &classes, part_labels)?,
    };
    for (tag, ds) in [("train", &splits.train), ("test", &splits.test)] {
        if get(tag)? != &ds.len().to_string() {
            return Err(Error::Input(format!("{}: {tag} count does not match the files", path.display())));
        }
    }
    Ok(splits)
}

fn sorted_entries(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut out = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    out.sort();
    Ok(out)
}

/// Samples every mesh of a `<class>/{train,test}/*.off` tree into an
/// `n_points` cloud (seeded per file). Classes are the sorted subdirectory names.
pub fn load_modelnet(dir: &Path, n_points: usize, normals: bool, seed: u64) -> Result<Splits> {
    let classes: Vec<std::path::PathBuf> = sorted_entries(dir)?.into_iter().filter(|p| p.is_dir()).collect();
    if classes.is_empty() {
        return Err(Error::Input(format!("{}: no class directories", dir.display())));
    }
    let names: Vec<String> =
        classes.iter().map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()).collect();
    let load = |tag: &str| -> Result<Dataset> {
        let mut items = Vec::new();
        for (label, class_dir) in classes.iter().enumerate() {
            let sub = class_dir.join(tag);
            if !sub.is_dir() {
                continue;
            }
            for file in sorted_entries(&sub)? {
                if file.extension().is_some_and(|e| e.eq_ignore_ascii_case("off")) {
                    let file_seed = seed.wrapping_add(items.len() as u64);
                    let cloud = sample_mesh(&load_off(&file)?, n_points, file_seed, normals)?;
                    items.push(Sample { cloud, label });
                }
            }
        }
        Ok(Dataset { items, class_names: names.clone(), n_part_labels: 0, split: tag.into() })
    };
    Ok(Splits { train: load("train")?, test: load("test")? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synth_segmentation, synth_shapes, Shape};

    #[test]
    fn saved_dataset_reloads_identically() {
        let dir = tempfile::tempdir().unwrap();
        let mut train = synth_shapes(2, 16, 0.01, 1).unwrap();
        train.split = "train".into();
        let mut test = synth_shapes(1, 16, 0.01, 2).unwrap();
        test.split = "test".into();
        let splits = Splits { train, test };
        save_splits(&splits, dir.path()).unwrap();
        let back = load_splits(dir.path()).unwrap();
        assert_eq!(back.train, splits.train);
        assert_eq!(back.test, splits.test);
        assert_eq!(back.fingerprint(), splits.fingerprint());
    }

    #[test]
    fn mesh_tree_is_sampled() {
        let dir = tempfile::tempdir().unwrap();
        let tri = "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n";
        for (class, split) in [("a", "train"), ("a", "test"), ("b", "train")] {
            let sub = dir.path().join(class).join(split);
            std::fs::create_dir_all(&sub).unwrap();
            std::fs::write(sub.join("m.off"), tri).unwrap();
        }
        let s = load_modelnet(dir.path(), 32, true, 0).unwrap();
        assert_eq!(s.train.len(), 2);
        assert_eq!(s.test.len(), 1);
        assert_eq!(s.train.class_names, vec!["a", "b"]);
        assert_eq!(s.train.items[1].label, 1);
        assert_eq!(s.train.items[0].cloud.features.cols(), 3);
    }

    #[test]
    fn segmentation_labels_survive() {
        let dir = tempfile::tempdir().unwrap();
        let mk = |seed, tag: &str| {
            let mut d = synth_segmentation(Shape::Cylinder, 2, 20, 0.0, seed).unwrap();
            d.split = tag.into();
            d
        };
        let splits = Splits { train: mk(1, "train"), test: mk(2, "test") };
        save_splits(&splits, dir.path()).unwrap();
        assert_eq!(load_splits(dir.path()).unwrap().train, splits.train);
    }
}
