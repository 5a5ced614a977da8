//! Dataset manifests and the in-memory [`Example`] record.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridDistribution, GridGeometry};
use crate::region::AffineMap;

use super::npy::{self, DType, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Calibration,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Calibration => "calibration",
            Split::Test => "test",
        })
    }
}

/// One calibration or test record: model outputs for a single landmark of a
/// single case, plus the ground-truth location (mm).
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub landmark: usize,
    pub truth: Vec<f64>,
    pub grid: Option<GridDistribution>,
    pub point: Option<Vec<f64>>,
    pub samples: Option<Vec<Vec<f64>>>,
    pub covariance: Option<Vec<Vec<f64>>>,
    /// Maps the grid's working frame onto the native frame of `truth`.
    /// Absent means the grid already lives in the native frame.
    pub native_map: Option<AffineMap>,
}

impl Example {
    pub fn new(id: impl Into<String>, truth: Vec<f64>) -> Self {
        Example {
            id: id.into(),
            landmark: 0,
            truth,
            grid: None,
            point: None,
            samples: None,
            covariance: None,
            native_map: None,
        }
    }

    pub fn dims(&self) -> usize {
        self.truth.len()
    }

    /// Ground truth expressed in the grid's working frame.
    pub fn truth_in_grid_frame(&self) -> Vec<f64> {
        match &self.native_map {
            Some(m) => m.invert(&self.truth),
            None => self.truth.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dims();
        if !(2..=3).contains(&d) {
            return Err(Error::InvariantViolation(format!(
                "example {:?}: dimension {d} is not 2 or 3",
                self.id
            )));
        }
        if self.grid.is_none() && self.point.is_none() && self.samples.is_none() {
            return Err(Error::InvariantViolation(format!(
                "example {:?} has none of grid, point, samples",
                self.id
            )));
        }
        if let Some(g) = &self.grid {
            crate::error::check_dims(d, g.dims())?;
        }
        if let Some(p) = &self.point {
            crate::error::check_dims(d, p.len())?;
        }
        if let Some(s) = &self.samples {
            if s.is_empty() {
                return Err(Error::InvariantViolation(format!(
                    "example {:?} has an empty sample list",
                    self.id
                )));
            }
            for row in s {
                crate::error::check_dims(d, row.len())?;
            }
        }
        if let Some(c) = &self.covariance {
            crate::linalg::check_covariance(c, d)
                .map_err(|e| Error::InvariantViolation(format!("example {:?}: {e}", self.id)))?;
        }
        if let Some(m) = &self.native_map {
            crate::error::check_dims(d, m.dims())?;
            m.validate()?;
        }
        Ok(())
    }

    /// Re-expresses every native-frame quantity under `map`.
    ///
    /// A grid carrying its own `native_map` keeps its working frame and has
    /// the map composed; otherwise its geometry is transformed directly.
    pub fn transform(&self, map: &AffineMap) -> Result<Example> {
        crate::error::check_dims(self.dims(), map.dims())?;
        let mut out = self.clone();
        out.truth = map.apply(&self.truth);
        out.point = self.point.as_ref().map(|p| map.apply(p));
        out.samples = self
            .samples
            .as_ref()
            .map(|s| s.iter().map(|x| map.apply(x)).collect());
        out.covariance = self.covariance.as_ref().map(|c| map.transform_covariance(c));
        match &self.native_map {
            Some(inner) => out.native_map = Some(map.compose(inner)),
            None => {
                out.grid = match &self.grid {
                    Some(g) => Some(g.transform(map)?),
                    None => None,
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    /// Tensor path relative to the manifest directory.
    pub file: String,
    pub shape: Vec<usize>,
    pub origin: Vec<f64>,
    pub spacing: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleEntry {
    pub id: String,
    #[serde(default)]
    pub landmark: usize,
    pub truth: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub native_map: Option<AffineMap>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dims: usize,
    pub split: Split,
    pub units: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub examples: Vec<ExampleEntry>,
}

/// A loaded manifest with its tensors resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dims: usize,
    pub split: Split,
    pub seed: Option<u64>,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn new(dims: usize, split: Split, examples: Vec<Example>) -> Self {
        Dataset {
            dims,
            split,
            seed: None,
            examples,
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

fn load_example(base: &Path, dims: usize, entry: ExampleEntry) -> Result<Example> {
    let grid = match entry.grid {
        Some(g) => {
            let path = base.join(&g.file);
            if !path.is_file() {
                return Err(Error::MissingTensor(path));
            }
            let tensor = npy::read_tensor(&path)?;
            if tensor.shape != g.shape {
                return Err(Error::ShapeMismatch {
                    expected: g.shape,
                    found: tensor.shape,
                });
            }
            let geometry = GridGeometry::new(g.shape, g.origin, g.spacing)?;
            Some(GridDistribution::new(geometry, tensor.data)?)
        }
        None => None,
    };
    let example = Example {
        id: entry.id,
        landmark: entry.landmark,
        truth: entry.truth,
        grid,
        point: entry.point,
        samples: entry.samples,
        covariance: entry.covariance,
        native_map: entry.native_map,
    };
    crate::error::check_dims(dims, example.dims())?;
    example.validate()?;
    Ok(example)
}

/// Loads a manifest and every tensor it references. Grids are validated and
/// normalized on the way in.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Dataset> {
    let manifest_path = manifest_path.as_ref();
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::Manifest(e.to_string()))?;
    if manifest.units != "mm" {
        return Err(Error::Manifest(format!(
            "units must be \"mm\", got {:?}",
            manifest.units
        )));
    }
    if !(2..=3).contains(&manifest.dims) {
        return Err(Error::Manifest(format!(
            "dims must be 2 or 3, got {}",
            manifest.dims
        )));
    }
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let examples = manifest
        .examples
        .into_iter()
        .map(|e| load_example(base, manifest.dims, e))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        dims: manifest.dims,
        split: manifest.split,
        seed: manifest.seed,
        examples,
    })
}

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Writes `dataset` as `<dir>/<manifest_name>` plus one tensor per grid under
/// `<dir>/<tensor_subdir>/`. Returns the manifest path.
pub fn save_dataset(
    dataset: &Dataset,
    dir: impl AsRef<Path>,
    manifest_name: &str,
    dtype: DType,
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let stem = manifest_name.trim_end_matches(".json");
    let tensor_dir = format!("{stem}_grids");
    std::fs::create_dir_all(dir.join(&tensor_dir)).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(dataset.len());
    for (i, ex) in dataset.examples.iter().enumerate() {
        let grid = match &ex.grid {
            Some(g) => {
                let rel = format!("{tensor_dir}/{:06}_{}.npy", i, file_stem(&ex.id));
                let geo = g.geometry();
                let tensor = Tensor::new(geo.shape.clone(), g.values().to_vec())?;
                npy::write_tensor_as(&tensor, dtype, dir.join(&rel))?;
                Some(GridEntry {
                    file: rel,
                    shape: geo.shape.clone(),
                    origin: geo.origin.clone(),
                    spacing: geo.spacing.clone(),
                })
            }
            None => None,
        };
        entries.push(ExampleEntry {
            id: ex.id.clone(),
            landmark: ex.landmark,
            truth: ex.truth.clone(),
            grid,
            point: ex.point.clone(),
            samples: ex.samples.clone(),
            covariance: ex.covariance.clone(),
            native_map: ex.native_map.clone(),
        });
    }
    let manifest = DatasetManifest {
        dims: dataset.dims,
        split: dataset.split,
        units: "mm".into(),
        seed: dataset.seed,
        examples: entries,
    };
    let path = dir.join(manifest_name);
    super::write_json(&path, &manifest)?;
    Ok(path)
}
