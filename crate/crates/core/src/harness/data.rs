use std::f64::consts::PI;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{HarnessError, Result};
use crate::netcore::Shape3;

/// Where samples come from. Synthetic kinds are fully determined by their fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Isotropic gaussian clusters with centres on a circle of radius 4.
    Blobs {
        n_train: usize,
        n_val: usize,
        #[serde(default = "two")]
        classes: usize,
        #[serde(default = "two")]
        dim: usize,
        #[serde(default = "one")]
        spread: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Two interleaved half circles.
    Moons {
        n_train: usize,
        n_val: usize,
        #[serde(default = "default_noise")]
        noise: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Interleaved spiral arms, one per class.
    Spirals {
        n_train: usize,
        n_val: usize,
        #[serde(default = "two")]
        classes: usize,
        #[serde(default = "default_noise")]
        noise: f64,
        #[serde(default)]
        seed: u64,
    },
    /// One sample per row: comma-separated floats, last column an integer label.
    Csv {
        path: PathBuf,
        #[serde(default = "default_val_fraction")]
        val_fraction: f64,
        /// Image shape of each row; flat when absent.
        #[serde(default)]
        shape: Option<Shape3>,
        #[serde(default)]
        seed: u64,
    },
}

fn two() -> usize {
    2
}
fn one() -> f64 {
    1.0
}
fn default_noise() -> f64 {
    0.1
}
fn default_val_fraction() -> f64 {
    0.2
}

/// Row-major samples with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub x: Vec<f64>,
    pub y: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Gathers the given rows into a contiguous batch.
    pub fn gather(&self, rows: &[usize], features: usize) -> (Vec<f64>, Vec<usize>) {
        let mut x = Vec::with_capacity(rows.len() * features);
        let mut y = Vec::with_capacity(rows.len());
        for &r in rows {
            x.extend_from_slice(&self.x[r * features..(r + 1) * features]);
            y.push(self.y[r]);
        }
        (x, y)
    }
}

/// Disjoint train and validation splits.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub shape: Shape3,
    pub classes: usize,
    pub train: Split,
    pub val: Split,
    pub spec: DatasetSpec,
}

impl Dataset {
    pub fn features(&self) -> usize {
        self.shape.len()
    }

    fn from_samples(shape: Shape3, classes: usize, x: Vec<f64>, y: Vec<usize>, n_val: usize, spec: DatasetSpec) -> Result<Self> {
        let f = shape.len();
        let n = y.len();
        if n_val == 0 || n_val >= n {
            return Err(HarnessError::Dataset(format!("need 0 < n_val < {n} samples, got {n_val}")));
        }
        if let Some(&bad) = y.iter().find(|&&l| l >= classes) {
            return Err(HarnessError::Dataset(format!("label {bad} outside 0..{classes}")));
        }
        let cut = n - n_val;
        Ok(Self {
            shape,
            classes,
            train: Split { x: x[..cut * f].to_vec(), y: y[..cut].to_vec() },
            val: Split { x: x[cut * f..].to_vec(), y: y[cut..].to_vec() },
            spec,
        })
    }
}

/// Materialises a dataset. Samples are shuffled before the split, so train
/// and validation come from the same distribution and never share a row.
pub fn load_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    match spec {
        &DatasetSpec::Blobs { n_train, n_val, classes, dim, spread, seed } => {
            if classes < 2 || dim < 2 || spread.is_nan() || spread < 0.0 {
                return Err(HarnessError::Dataset("blobs need classes >= 2, dim >= 2, spread >= 0".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noise = Normal::new(0.0, spread).expect("spread checked");
            let n = n_train + n_val;
            let y = balanced_labels(n, classes, &mut rng);
            let mut x = Vec::with_capacity(n * dim);
            for &c in &y {
                let a = 2.0 * PI * c as f64 / classes as f64;
                for d in 0..dim {
                    let centre = match d {
                        0 => 4.0 * a.cos(),
                        1 => 4.0 * a.sin(),
                        _ => 0.0,
                    };
                    x.push(centre + noise.sample(&mut rng));
                }
            }
            Dataset::from_samples(Shape3::flat(dim), classes, x, y, n_val, spec.clone())
        }
        &DatasetSpec::Moons { n_train, n_val, noise, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let jitter = normal(noise)?;
            let n = n_train + n_val;
            let y = balanced_labels(n, 2, &mut rng);
            let mut x = Vec::with_capacity(n * 2);
            for &c in &y {
                let t = rng.random_range(0.0..PI);
                let (px, py) = if c == 0 { (t.cos(), t.sin()) } else { (1.0 - t.cos(), 0.5 - t.sin()) };
                x.push(px + jitter.sample(&mut rng));
                x.push(py + jitter.sample(&mut rng));
            }
            Dataset::from_samples(Shape3::flat(2), 2, x, y, n_val, spec.clone())
        }
        &DatasetSpec::Spirals { n_train, n_val, classes, noise, seed } => {
            if classes < 2 {
                return Err(HarnessError::Dataset("spirals need at least 2 classes".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let jitter = normal(noise)?;
            let n = n_train + n_val;
            let y = balanced_labels(n, classes, &mut rng);
            let mut x = Vec::with_capacity(n * 2);
            for &c in &y {
                let t: f64 = rng.random_range(0.05..1.0);
                let a = 3.0 * PI * t + 2.0 * PI * c as f64 / classes as f64;
                x.push(2.0 * t * a.cos() + jitter.sample(&mut rng));
                x.push(2.0 * t * a.sin() + jitter.sample(&mut rng));
            }
            Dataset::from_samples(Shape3::flat(2), classes, x, y, n_val, spec.clone())
        }
        DatasetSpec::Csv { path, val_fraction, shape, seed } => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
            let (mut x, mut y, cols) = parse_csv(&text)?;
            let shape = shape.unwrap_or(Shape3::flat(cols));
            if shape.len() != cols {
                return Err(HarnessError::Dataset(format!("shape {shape:?} needs {} features, rows have {cols}", shape.len())));
            }
            let mut order: Vec<usize> = (0..y.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(*seed));
            let xs: Vec<f64> = order.iter().flat_map(|&r| x[r * cols..(r + 1) * cols].to_vec()).collect();
            let ys: Vec<usize> = order.iter().map(|&r| y[r]).collect();
            x = xs;
            y = ys;
            let classes = y.iter().max().map_or(0, |m| m + 1).max(2);
            let n_val = (y.len() as f64 * val_fraction).round() as usize;
            Dataset::from_samples(shape, classes, x, y, n_val, spec.clone())
        }
    }
}

fn normal(sd: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, sd).map_err(|_| HarnessError::Dataset(format!("noise {sd} must be finite and >= 0")))
}

fn balanced_labels(n: usize, classes: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut y: Vec<usize> = (0..n).map(|i| i % classes).collect();
    y.shuffle(rng);
    y
}

fn parse_csv(text: &str) -> Result<(Vec<f64>, Vec<usize>, usize)> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut cols = None;
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = |m: &str| HarnessError::Dataset(format!("line {}: {m}", ln + 1));
        if fields.len() < 2 {
            return Err(bad("need at least one feature and a label"));
        }
        let n = fields.len() - 1;
        if *cols.get_or_insert(n) != n {
            return Err(bad("inconsistent column count"));
        }
        for f in &fields[..n] {
            let v: f64 = f.parse().map_err(|_| bad(&format!("bad value {f:?}")))?;
            if !v.is_finite() {
                return Err(bad("non-finite value"));
            }
            x.push(v);
        }
        y.push(fields[n].parse().map_err(|_| bad(&format!("bad label {:?}", fields[n])))?);
    }
    let cols = cols.ok_or_else(|| HarnessError::Dataset("no rows".into()))?;
    Ok((x, y, cols))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn moons() -> DatasetSpec {
        DatasetSpec::Moons { n_train: 300, n_val: 100, noise: 0.1, seed: 4 }
    }

    #[test]
    fn synthetic_sets_are_deterministic_and_split() {
        let a = load_dataset(&moons()).unwrap();
        assert_eq!(a, load_dataset(&moons()).unwrap());
        assert_eq!((a.train.len(), a.val.len()), (300, 100));
        assert_eq!(a.train.x.len(), 600);
        let spirals = DatasetSpec::Spirals { n_train: 90, n_val: 30, classes: 3, noise: 0.05, seed: 1 };
        let s = load_dataset(&spirals).unwrap();
        assert_eq!(s.classes, 3);
        assert!(s.train.y.iter().all(|&l| l < 3));
    }

    #[test]
    fn blobs_are_balanced() {
        let spec = DatasetSpec::Blobs { n_train: 200, n_val: 50, classes: 2, dim: 3, spread: 1.0, seed: 0 };
        let d = load_dataset(&spec).unwrap();
        let ones = d.train.y.iter().chain(&d.val.y).filter(|&&l| l == 1).count();
        assert_eq!(ones, 125);
        assert_eq!(d.shape, Shape3::flat(3));
    }

    #[test]
    fn csv_rows_load_and_validate() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for i in 0..10 {
            writeln!(f, "{}, {}, {}", i as f64 * 0.1, 1.0 - i as f64 * 0.1, i % 3).unwrap();
        }
        let spec = DatasetSpec::Csv { path: f.path().into(), val_fraction: 0.2, shape: None, seed: 0 };
        let d = load_dataset(&spec).unwrap();
        assert_eq!((d.train.len(), d.val.len(), d.classes), (8, 2, 3));

        let mut g = tempfile::NamedTempFile::new().unwrap();
        writeln!(g, "0.1, 0.2, 1\n0.3, 0").unwrap();
        let spec = DatasetSpec::Csv { path: g.path().into(), val_fraction: 0.5, shape: None, seed: 0 };
        assert!(matches!(load_dataset(&spec), Err(HarnessError::Dataset(m)) if m.contains("line 2")));
    }

    #[test]
    fn empty_validation_split_rejected() {
        let spec = DatasetSpec::Moons { n_train: 10, n_val: 0, noise: 0.1, seed: 0 };
        assert!(load_dataset(&spec).is_err());
    }
}
