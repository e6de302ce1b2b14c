//! Synthetic multi-view datasets and their on-disk form.
//!
//! A dataset is a flat list of view records. Each object belongs to one class
//! and has several noisy views of the same underlying vector.
//!
//! On disk a dataset is a CSV file with header
//! `object_id,label,view_index,x0,…,x{D-1}` (labels are 1-based there) plus a
//! JSON sidecar next to it (same stem, `.json`) holding the class count, the
//! generating spec if any, and the train/test assignment of every object.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::{axpy, dot_unchecked, norm};

pub const SIDECAR_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub objects_per_class: usize,
    pub views_per_object: usize,
    pub input_dim: usize,
    /// Euclidean distance between any two class prototypes that come from
    /// the orthonormal part of the basis.
    pub class_separation: f64,
    pub view_noise_std: f64,
    pub object_noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 6,
            objects_per_class: 40,
            views_per_object: 12,
            input_dim: 16,
            class_separation: 4.0,
            view_noise_std: 0.3,
            object_noise_std: 0.3,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_classes", self.num_classes),
            ("objects_per_class", self.objects_per_class),
            ("views_per_object", self.views_per_object),
            ("input_dim", self.input_dim),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        let reals = [
            ("class_separation", self.class_separation),
            ("view_noise_std", self.view_noise_std),
            ("object_noise_std", self.object_noise_std),
        ];
        for (name, v) in reals {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord {
    pub object_id: usize,
    /// Zero-based class index.
    pub label: usize,
    pub view_index: usize,
    pub input: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub num_classes: usize,
    pub input_dim: usize,
    pub records: Vec<ViewRecord>,
    /// Split of each object; empty until [`Dataset::split`] assigns one.
    pub splits: BTreeMap<usize, Split>,
    pub spec: Option<SyntheticSpec>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    format_version: u32,
    num_classes: usize,
    input_dim: usize,
    spec: Option<SyntheticSpec>,
    splits: BTreeMap<usize, Split>,
}

/// Orthonormal vectors from Gram–Schmidt on Gaussian draws.
fn random_orthonormal(count: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        for b in &basis {
            let proj = dot_unchecked(&v, b);
            axpy(-proj, b, &mut v);
        }
        let n = norm(&v);
        // reject draws that are numerically inside the current span
        if n > 1e-8 {
            v.iter_mut().for_each(|x| *x /= n);
            basis.push(v);
        }
    }
    basis
}

fn prototypes_from(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let scale = spec.class_separation / 2f64.sqrt();
    let ortho = spec.num_classes.min(spec.input_dim);
    let mut protos = random_orthonormal(ortho, spec.input_dim, rng);
    while protos.len() < spec.num_classes {
        let mut v: Vec<f64> = (0..spec.input_dim)
            .map(|_| StandardNormal.sample(rng))
            .collect();
        let n = norm(&v);
        v.iter_mut().for_each(|x| *x /= n);
        protos.push(v);
    }
    protos
        .into_iter()
        .map(|p| p.into_iter().map(|x| x * scale).collect())
        .collect()
}

/// Class prototypes of `spec`, identical to those [`generate`] uses.
pub fn prototypes(spec: &SyntheticSpec) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok(prototypes_from(spec, &mut rng))
}

fn gaussian(std: f64) -> Normal<f64> {
    Normal::new(0.0, std).expect("validated std")
}

/// Draws a dataset: prototype per class, prototype plus object noise per
/// object, object vector plus view noise per view.
pub fn generate(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let protos = prototypes_from(spec, &mut rng);
    let object_noise = gaussian(spec.object_noise_std);
    let view_noise = gaussian(spec.view_noise_std);

    let mut records =
        Vec::with_capacity(spec.num_classes * spec.objects_per_class * spec.views_per_object);
    let mut object_id = 0;
    for (label, proto) in protos.iter().enumerate() {
        for _ in 0..spec.objects_per_class {
            let center: Vec<f64> = proto
                .iter()
                .map(|p| p + object_noise.sample(&mut rng))
                .collect();
            for view_index in 0..spec.views_per_object {
                let input = center
                    .iter()
                    .map(|c| c + view_noise.sample(&mut rng))
                    .collect();
                records.push(ViewRecord {
                    object_id,
                    label,
                    view_index,
                    input,
                });
            }
            object_id += 1;
        }
    }
    Ok(Dataset {
        num_classes: spec.num_classes,
        input_dim: spec.input_dim,
        records,
        splits: BTreeMap::new(),
        spec: Some(spec.clone()),
    })
}

impl Dataset {
    /// Object id → class label, in id order.
    pub fn object_labels(&self) -> BTreeMap<usize, usize> {
        self.records.iter().map(|r| (r.object_id, r.label)).collect()
    }

    pub fn num_objects(&self) -> usize {
        self.object_labels().len()
    }

    pub fn split_of(&self, object_id: usize) -> Option<Split> {
        self.splits.get(&object_id).copied()
    }

    /// Records of objects assigned to `split`.
    pub fn records_in(&self, split: Split) -> Vec<&ViewRecord> {
        self.records
            .iter()
            .filter(|r| self.split_of(r.object_id) == Some(split))
            .collect()
    }

    /// Training records: the train split when one is assigned, otherwise all.
    pub fn training_records(&self) -> Vec<&ViewRecord> {
        if self.splits.is_empty() {
            self.records.iter().collect()
        } else {
            self.records_in(Split::Train)
        }
    }

    /// Evaluation records: the test split when one is assigned, otherwise all.
    pub fn evaluation_records(&self) -> Vec<&ViewRecord> {
        if self.splits.is_empty() {
            self.records.iter().collect()
        } else {
            self.records_in(Split::Test)
        }
    }

    /// Stratified object-level split: within every class a seeded shuffle of
    /// its objects sends `round(fraction·count)` (at least one, at most
    /// `count − 1`) to train and the rest to test.
    pub fn split(&self, train_fraction: f64, seed: u64) -> Result<Dataset> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "train fraction must be in (0, 1), got {train_fraction}"
            )));
        }
        let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (object, label) in self.object_labels() {
            by_class.entry(label).or_default().push(object);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut splits = BTreeMap::new();
        for (label, mut objects) in by_class {
            let count = objects.len();
            if count < 2 {
                return Err(Error::InvalidConfig(format!(
                    "class {} has {count} object(s); a stratified split needs at least 2",
                    label + 1
                )));
            }
            objects.shuffle(&mut rng);
            let train = ((train_fraction * count as f64).round() as usize).clamp(1, count - 1);
            for (i, object) in objects.into_iter().enumerate() {
                splits.insert(object, if i < train { Split::Train } else { Split::Test });
            }
        }
        Ok(Dataset {
            splits,
            ..self.clone()
        })
    }

    fn validate(&self) -> Result<()> {
        if self.records.is_empty() {
            return Err(Error::Empty("dataset has no records"));
        }
        let mut labels: BTreeMap<usize, usize> = BTreeMap::new();
        for r in &self.records {
            if r.input.len() != self.input_dim {
                return Err(Error::DimensionMismatch {
                    expected: self.input_dim,
                    got: r.input.len(),
                });
            }
            if r.label >= self.num_classes {
                return Err(Error::LabelOutOfRange {
                    label: r.label,
                    classes: self.num_classes,
                });
            }
            if let Some(prev) = labels.insert(r.object_id, r.label) {
                if prev != r.label {
                    return Err(Error::InvalidConfig(format!(
                        "object {} has views with different labels",
                        r.object_id
                    )));
                }
            }
        }
        let present: std::collections::BTreeSet<usize> = labels.values().copied().collect();
        if present.len() != self.num_classes {
            return Err(Error::InvalidConfig(format!(
                "labels are not contiguous: {} of {} classes present",
                present.len(),
                self.num_classes
            )));
        }
        if !self.splits.is_empty() {
            if let Some(missing) = labels.keys().find(|o| !self.splits.contains_key(o)) {
                return Err(Error::InvalidConfig(format!(
                    "object {missing} has no split assignment"
                )));
            }
        }
        Ok(())
    }

    /// Writes the CSV to `path` and the sidecar to [`sidecar_path`].
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.validate()?;
        let mut out = String::new();
        out.push_str("object_id,label,view_index");
        for t in 0..self.input_dim {
            out.push_str(&format!(",x{t}"));
        }
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!("{},{},{}", r.object_id, r.label + 1, r.view_index));
            for x in &r.input {
                out.push(',');
                out.push_str(&x.to_string());
            }
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))?;

        let sidecar = Sidecar {
            format_version: SIDECAR_VERSION,
            num_classes: self.num_classes,
            input_dim: self.input_dim,
            spec: self.spec.clone(),
            splits: self.splits.clone(),
        };
        let side = sidecar_path(path);
        fs::write(&side, serde_json::to_string_pretty(&sidecar)?).map_err(|e| Error::io(&side, e))
    }

    /// Reads a dataset CSV and, when present, its sidecar.
    ///
    /// Without a sidecar the class count is the largest label and no split
    /// is assigned.
    pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
        let path = path.as_ref();
        let parse_err = |line: u64, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };

        let mut reader = csv::ReaderBuilder::new()
            .flexible(true)
            .from_path(path)
            .map_err(|e| match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::io(path, io),
                other => parse_err(1, format!("{other:?}")),
            })?;
        let header = reader
            .headers()
            .map_err(|e| parse_err(1, e.to_string()))?
            .clone();
        if header.len() < 4
            || &header[0] != "object_id"
            || &header[1] != "label"
            || &header[2] != "view_index"
        {
            return Err(parse_err(
                1,
                "expected header object_id,label,view_index,x0,...".into(),
            ));
        }
        let input_dim = header.len() - 3;
        for (t, name) in header.iter().skip(3).enumerate() {
            if name != format!("x{t}") {
                return Err(parse_err(1, format!("column {} should be x{t}, found `{name}`", t + 4)));
            }
        }

        let mut records = Vec::new();
        let mut max_label = 0;
        for row in reader.records() {
            let row = row.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                parse_err(line, e.to_string())
            })?;
            let line = row.position().map_or(0, |p| p.line());
            if row.len() != header.len() {
                return Err(parse_err(
                    line,
                    format!("expected {} fields, found {}", header.len(), row.len()),
                ));
            }
            let int = |i: usize, what: &str| -> Result<usize> {
                row[i]
                    .trim()
                    .parse::<usize>()
                    .map_err(|e| parse_err(line, format!("{what} `{}`: {e}", &row[i])))
            };
            let object_id = int(0, "object_id")?;
            let label = int(1, "label")?;
            if label == 0 {
                return Err(parse_err(line, "labels are 1-based; found 0".into()));
            }
            let view_index = int(2, "view_index")?;
            let input = (3..row.len())
                .map(|i| {
                    row[i]
                        .trim()
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| parse_err(line, format!("x{} `{}` is not a finite number", i - 3, &row[i])))
                })
                .collect::<Result<Vec<f64>>>()?;
            max_label = max_label.max(label);
            records.push(ViewRecord {
                object_id,
                label: label - 1,
                view_index,
                input,
            });
        }
        if records.is_empty() {
            return Err(parse_err(1, "header present but the dataset has no rows".into()));
        }

        let side = sidecar_path(path);
        let dataset = if side.exists() {
            let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
            let sidecar: Sidecar = serde_json::from_str(&text)?;
            if sidecar.format_version != SIDECAR_VERSION {
                return Err(Error::InvalidConfig(format!(
                    "unsupported sidecar version {}",
                    sidecar.format_version
                )));
            }
            if sidecar.input_dim != input_dim {
                return Err(Error::DimensionMismatch {
                    expected: sidecar.input_dim,
                    got: input_dim,
                });
            }
            Dataset {
                num_classes: sidecar.num_classes,
                input_dim,
                records,
                splits: sidecar.splits,
                spec: sidecar.spec,
            }
        } else {
            Dataset {
                num_classes: max_label,
                input_dim,
                records,
                splits: BTreeMap::new(),
                spec: None,
            }
        };
        dataset.validate()?;
        Ok(dataset)
    }
}

/// `data.csv` → `data.json`.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}
