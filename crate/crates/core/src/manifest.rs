//! Per-image bundles: a directory of `.npy` arrays described by an
//! `instance.json` manifest.
//!
//! ```json
//! {
//!   "id": "img_0003",
//!   "attention": "attention.npy",
//!   "features": "features.npy",
//!   "weights": "weights.npy",
//!   "labels": [0, 2],
//!   "boundary": "boundary.npy",
//!   "gt_mask": "gt_mask.npy"
//! }
//! ```
//!
//! Array entries are paths relative to the manifest, or objects
//! `{"path": ..., "shape": [...]}` whose shape is checked against the file.
//! `id` defaults to the name of the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::array_io::{read_array, write_array, ArrayFile};
use crate::cam::{AttentionStack, ClassifierWeights, FeatureMap};
use crate::error::{Error, Result};
use crate::eval::SeedMask;
use crate::grid::Grid;
use crate::random_walk::BoundaryMap;

pub const MANIFEST_NAME: &str = "instance.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArrayRef {
    Path(String),
    Entry {
        path: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        shape: Option<Vec<usize>>,
    },
}

impl ArrayRef {
    fn path(&self) -> &str {
        match self {
            ArrayRef::Path(p) | ArrayRef::Entry { path: p, .. } => p,
        }
    }

    fn declared_shape(&self) -> Option<&[usize]> {
        match self {
            ArrayRef::Entry { shape: Some(s), .. } => Some(s),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub attention: ArrayRef,
    pub features: ArrayRef,
    pub weights: ArrayRef,
    pub labels: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<ArrayRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_mask: Option<ArrayRef>,
}

/// One image with every tensor loaded and validated.
#[derive(Debug, Clone)]
pub struct Instance {
    pub id: String,
    pub features: FeatureMap,
    pub weights: ClassifierWeights,
    pub attention: AttentionStack,
    pub labels: Vec<usize>,
    pub boundary: Option<BoundaryMap>,
    pub gt_mask: Option<SeedMask>,
}

impl Instance {
    pub fn grid(&self) -> Grid {
        self.features.grid()
    }

    pub fn num_classes(&self) -> usize {
        self.weights.classes()
    }

    /// Loads from a manifest file or a directory holding `instance.json`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let manifest_path = if path.is_dir() { path.join(MANIFEST_NAME) } else { path.to_path_buf() };
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::Manifest { path: manifest_path.clone(), reason: e.to_string() })?;
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        let id = match &manifest.id {
            Some(id) => id.clone(),
            None => dir
                .canonicalize()
                .ok()
                .and_then(|d| d.file_name().map(|s| s.to_string_lossy().into_owned()))
                .unwrap_or_else(|| "image".into()),
        };
        let bad = |reason: String| Error::Manifest { path: manifest_path.clone(), reason };

        let (shape, data) = load_ref(dir, &manifest.features)?.into_f32(3)?;
        let features = FeatureMap::new(shape[0], Grid::new(shape[1], shape[2]), data)?;
        let (shape, data) = load_ref(dir, &manifest.weights)?.into_f32(2)?;
        let weights = ClassifierWeights::new(shape[0], shape[1], data)?;
        let (shape, data) = load_ref(dir, &manifest.attention)?.into_f32(4)?;
        if shape[2] != shape[3] {
            return Err(Error::ShapeMismatch(format!("attention slices are {}x{}, not square", shape[2], shape[3])));
        }
        let attention = AttentionStack::new(shape[0], shape[1], shape[2], data)?;
        if attention.tokens() != features.grid().len() {
            return Err(Error::ShapeMismatch(format!(
                "attention has {} tokens but features form a {}x{} grid",
                attention.tokens(),
                features.grid().height,
                features.grid().width
            )));
        }
        if weights.channels() != features.channels() {
            return Err(Error::ChannelMismatch { features: features.channels(), weights: weights.channels() });
        }

        if manifest.labels.is_empty() {
            return Err(bad("labels must not be empty".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for &l in &manifest.labels {
            if l >= weights.classes() {
                return Err(Error::ClassOutOfRange { class: l, classes: weights.classes() });
            }
            if !seen.insert(l) {
                return Err(Error::DuplicateClass(l));
            }
        }

        let boundary = match &manifest.boundary {
            Some(r) => {
                let (shape, data) = load_ref(dir, r)?.into_f32(2)?;
                let grid = Grid::new(shape[0], shape[1]);
                if grid != features.grid() {
                    return Err(Error::GridMismatch { left: grid.dims(), right: features.grid().dims() });
                }
                Some(BoundaryMap::new(grid, data.into_iter().map(f64::from).collect())?)
            }
            None => None,
        };
        let gt_mask = match &manifest.gt_mask {
            Some(r) => {
                let (shape, data) = load_ref(dir, r)?.into_u8(2)?;
                Some(SeedMask::new(Grid::new(shape[0], shape[1]), weights.classes(), data)?)
            }
            None => None,
        };

        Ok(Instance { id, features, weights, attention, labels: manifest.labels, boundary, gt_mask })
    }

    /// Writes every array plus `instance.json` into `dir`, creating it.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let g = self.grid();
        let a = &self.attention;
        let entry = |name: &str, shape: Vec<usize>| ArrayRef::Entry { path: name.into(), shape: Some(shape) };

        let attention_shape = vec![a.layers(), a.heads(), a.tokens(), a.tokens()];
        write_array(dir.join("attention.npy"), &ArrayFile::f32(attention_shape.clone(), a.data().to_vec())?)?;
        let feature_shape = vec![self.features.channels(), g.height, g.width];
        write_array(dir.join("features.npy"), &ArrayFile::f32(feature_shape.clone(), self.features.data().to_vec())?)?;
        let weight_shape = vec![self.weights.classes(), self.weights.channels()];
        write_array(dir.join("weights.npy"), &ArrayFile::f32(weight_shape.clone(), self.weights.data().to_vec())?)?;

        let mut manifest = Manifest {
            id: Some(self.id.clone()),
            attention: entry("attention.npy", attention_shape),
            features: entry("features.npy", feature_shape),
            weights: entry("weights.npy", weight_shape),
            labels: self.labels.clone(),
            boundary: None,
            gt_mask: None,
        };
        if let Some(b) = &self.boundary {
            let shape = vec![g.height, g.width];
            let data = b.data().iter().map(|&v| v as f32).collect();
            write_array(dir.join("boundary.npy"), &ArrayFile::f32(shape.clone(), data)?)?;
            manifest.boundary = Some(entry("boundary.npy", shape));
        }
        if let Some(m) = &self.gt_mask {
            let shape = vec![m.grid().height, m.grid().width];
            write_array(dir.join("gt_mask.npy"), &ArrayFile::u8(shape.clone(), m.data().to_vec())?)?;
            manifest.gt_mask = Some(entry("gt_mask.npy", shape));
        }
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        let path = dir.join(MANIFEST_NAME);
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }
}

fn load_ref(dir: &Path, r: &ArrayRef) -> Result<ArrayFile> {
    let arr = read_array(dir.join(r.path()))?;
    if let Some(shape) = r.declared_shape() {
        if shape != arr.shape.as_slice() {
            return Err(Error::ShapeMismatch(format!(
                "{} declares shape {shape:?} but holds {:?}",
                r.path(),
                arr.shape
            )));
        }
    }
    Ok(arr)
}

/// Expands inputs into manifest paths. A file is taken as is; a directory
/// holding `instance.json` is one image; any other directory contributes
/// each immediate subdirectory that holds one. Results within a directory
/// are sorted by name.
pub fn discover_manifests(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for input in inputs {
        if input.is_file() {
            out.push(input.clone());
            continue;
        }
        let direct = input.join(MANIFEST_NAME);
        if direct.is_file() {
            out.push(direct);
            continue;
        }
        let entries = fs::read_dir(input).map_err(|e| Error::io(input, e))?;
        let mut found: Vec<PathBuf> =
            entries.filter_map(|e| e.ok()).map(|e| e.path().join(MANIFEST_NAME)).filter(|p| p.is_file()).collect();
        if found.is_empty() {
            return Err(Error::Manifest { path: input.clone(), reason: "no instance.json found".into() });
        }
        found.sort();
        out.extend(found);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_instance() -> Instance {
        let grid = Grid::new(1, 2);
        Instance {
            id: "tiny".into(),
            features: FeatureMap::new(1, grid, vec![1.0, 0.5]).unwrap(),
            weights: ClassifierWeights::new(2, 1, vec![1.0, -1.0]).unwrap(),
            attention: AttentionStack::single(2, vec![0.75, 0.25, 0.5, 0.5]).unwrap(),
            labels: vec![0],
            boundary: Some(BoundaryMap::new(grid, vec![0.0, 0.5]).unwrap()),
            gt_mask: Some(SeedMask::new(Grid::new(2, 4), 2, vec![0, 1, 1, 0, 255, 2, 0, 0]).unwrap()),
        }
    }

    #[test]
    fn write_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let inst = tiny_instance();
        inst.write(dir.path()).unwrap();
        let back = Instance::load(dir.path()).unwrap();
        assert_eq!(back.id, "tiny");
        assert_eq!(back.features, inst.features);
        assert_eq!(back.weights, inst.weights);
        assert_eq!(back.attention, inst.attention);
        assert_eq!(back.boundary, inst.boundary);
        assert_eq!(back.gt_mask, inst.gt_mask);
    }

    #[test]
    fn plain_path_entries_and_default_id() {
        let root = tempfile::tempdir().unwrap();
        let dir = root.path().join("img_7");
        tiny_instance().write(&dir).unwrap();
        let json =
            r#"{"attention": "attention.npy", "features": "features.npy", "weights": "weights.npy", "labels": [1]}"#;
        fs::write(dir.join(MANIFEST_NAME), json).unwrap();
        let inst = Instance::load(dir.join(MANIFEST_NAME)).unwrap();
        assert_eq!(inst.id, "img_7");
        assert_eq!(inst.labels, vec![1]);
        assert!(inst.gt_mask.is_none());
    }

    #[test]
    fn rejects_bad_labels_and_shapes() {
        let dir = tempfile::tempdir().unwrap();
        tiny_instance().write(dir.path()).unwrap();
        let write = |json: &str| fs::write(dir.path().join(MANIFEST_NAME), json).unwrap();

        write(r#"{"attention": "attention.npy", "features": "features.npy", "weights": "weights.npy", "labels": [2]}"#);
        assert!(matches!(Instance::load(dir.path()), Err(Error::ClassOutOfRange { .. })));
        write(r#"{"attention": "attention.npy", "features": "features.npy", "weights": "weights.npy", "labels": []}"#);
        assert!(matches!(Instance::load(dir.path()), Err(Error::Manifest { .. })));
        write(
            r#"{"attention": {"path": "attention.npy", "shape": [1, 1, 3, 3]}, "features": "features.npy", "weights": "weights.npy", "labels": [0]}"#,
        );
        assert!(matches!(Instance::load(dir.path()), Err(Error::ShapeMismatch(_))));
        write(r#"{"attention": "features.npy", "features": "features.npy", "weights": "weights.npy", "labels": [0]}"#);
        assert!(matches!(Instance::load(dir.path()), Err(Error::InvalidShape { .. })));
        write(r#"{"attention": "attention.npy"}"#);
        assert!(matches!(Instance::load(dir.path()), Err(Error::Manifest { .. })));
    }

    #[test]
    fn discovery_sorts_subdirectories() {
        let root = tempfile::tempdir().unwrap();
        for name in ["b", "a", "c"] {
            tiny_instance().write(root.path().join(name)).unwrap();
        }
        fs::create_dir(root.path().join("empty")).unwrap();
        let found = discover_manifests(&[root.path().to_path_buf()]).unwrap();
        let names: Vec<_> = found.iter().map(|p| p.parent().unwrap().file_name().unwrap().to_owned()).collect();
        assert_eq!(names, ["a", "b", "c"]);
        assert_eq!(discover_manifests(&[root.path().join("a")]).unwrap().len(), 1);
        assert!(discover_manifests(&[root.path().join("empty")]).is_err());
    }
}
