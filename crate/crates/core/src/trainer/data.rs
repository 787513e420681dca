//! Synthetic datasets and the on-disk dataset directory format
//! (`images.ptns`, N×C×H×W f32, and `labels.ptns`, N u32).

use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{read_ptns, roll, write_ptns, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    /// One bright pixel on low noise; the label is the pixel's quadrant.
    Quadrant,
    /// Quadrant images paired with circularly shifted copies.
    ShiftPairs,
    /// A dataset directory on disk.
    File,
}

/// Description of a dataset. Synthetic kinds are a pure function of these
/// fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    #[serde(default)]
    pub n: usize,
    #[serde(default)]
    pub size: usize,
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub path: Option<PathBuf>,
}

fn default_noise() -> f64 {
    0.05
}

impl DatasetSpec {
    pub fn quadrant(n: usize, size: usize, seed: u64) -> Self {
        DatasetSpec {
            kind: DatasetKind::Quadrant,
            n,
            size,
            noise: default_noise(),
            seed,
            path: None,
        }
    }
}

/// Labelled images, N×C×H×W.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor<f32>,
    pub labels: Vec<u32>,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<u32>) -> Result<Self> {
        let (n, _, _, _) = images.nchw()?;
        if n != labels.len() {
            return Err(Error::shape(format!("{n} images but {} labels", labels.len())));
        }
        Ok(Dataset { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_dims(&self) -> [usize; 3] {
        let d = self.images.dims();
        [d[1], d[2], d[3]]
    }

    /// Copies the samples at `indices` into a batch.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<f32>, Vec<u32>)> {
        let [c, h, w] = self.sample_dims();
        let plane = c * h * w;
        let mut data = Vec::with_capacity(indices.len() * plane);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Argument(format!("sample {i} out of range for {} samples", self.len())));
            }
            data.extend_from_slice(&self.images.data()[i * plane..(i + 1) * plane]);
            labels.push(self.labels[i]);
        }
        Ok((Tensor::new(vec![indices.len(), c, h, w], data)?, labels))
    }

    /// Splits into the first `n` samples and the rest.
    pub fn split(&self, n: usize) -> Result<(Dataset, Dataset)> {
        if n == 0 || n >= self.len() {
            return Err(Error::Argument(format!("cannot split {} samples at {n}", self.len())));
        }
        let head: Vec<usize> = (0..n).collect();
        let tail: Vec<usize> = (n..self.len()).collect();
        let (a, la) = self.batch(&head)?;
        let (b, lb) = self.batch(&tail)?;
        Ok((Dataset::new(a, la)?, Dataset::new(b, lb)?))
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_ptns(dir.join("images.ptns"), &self.images)?;
        let n = self.len();
        write_ptns(dir.join("labels.ptns"), &Tensor::new(vec![n], self.labels.clone())?)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let images = read_ptns::<f32>(dir.join("images.ptns"))?;
        let labels = read_ptns::<u32>(dir.join("labels.ptns"))?;
        if labels.rank() != 1 {
            return Err(Error::shape(format!("labels must be 1-D, got dims {:?}", labels.dims())));
        }
        Dataset::new(images, labels.into_data())
    }
}

/// Images and their circularly shifted copies; `shifts[i]` is the
/// (row, column) shift applied to image `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftPairs {
    pub originals: Tensor<f32>,
    pub shifted: Tensor<f32>,
    pub shifts: Vec<(usize, usize)>,
}

impl ShiftPairs {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_ptns(dir.join("images.ptns"), &self.originals)?;
        write_ptns(dir.join("shifted.ptns"), &self.shifted)?;
        let flat: Vec<u32> = self.shifts.iter().flat_map(|&(r, c)| [r as u32, c as u32]).collect();
        write_ptns(dir.join("shifts.ptns"), &Tensor::new(vec![self.shifts.len(), 2], flat)?)
    }
}

/// Generated data for any synthetic kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Synthetic {
    Labeled(Dataset),
    Pairs(ShiftPairs),
}

impl Synthetic {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        match self {
            Synthetic::Labeled(d) => d.save(dir),
            Synthetic::Pairs(p) => p.save(dir),
        }
    }
}

/// Quadrant index of pixel `(row, col)` in a `size`×`size` image:
/// 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right.
pub fn quadrant_label(row: usize, col: usize, size: usize) -> u32 {
    2 * u32::from(row >= size / 2) + u32::from(col >= size / 2)
}

fn check_spec(spec: &DatasetSpec) -> Result<()> {
    if spec.size < 2 {
        return Err(Error::Argument(format!("image size {} is below 2", spec.size)));
    }
    if spec.n == 0 {
        return Err(Error::Argument("sample count must be positive".into()));
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(Error::Argument(format!("noise level {} must be finite and ≥ 0", spec.noise)));
    }
    Ok(())
}

fn quadrant_images(spec: &DatasetSpec, rng: &mut ChaCha8Rng) -> Dataset {
    let s = spec.size;
    let normal = Normal::new(0.0, spec.noise).expect("validated noise");
    let mut data = Vec::with_capacity(spec.n * s * s);
    let mut labels = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let (r, c) = (rng.random_range(0..s), rng.random_range(0..s));
        let start = data.len();
        data.extend((0..s * s).map(|_| normal.sample(rng) as f32));
        data[start + r * s + c] = 1.0;
        labels.push(quadrant_label(r, c, s));
    }
    Dataset {
        images: Tensor::new(vec![spec.n, 1, s, s], data).expect("sized above"),
        labels,
    }
}

/// Generates a synthetic dataset, or loads one for `kind = file`.
pub fn make_synthetic(spec: &DatasetSpec) -> Result<Synthetic> {
    if spec.kind == DatasetKind::File {
        let path = spec
            .path
            .as_ref()
            .ok_or_else(|| Error::Argument("file dataset needs a path".into()))?;
        return Ok(Synthetic::Labeled(Dataset::load(path)?));
    }
    check_spec(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let data = quadrant_images(spec, &mut rng);
    match spec.kind {
        DatasetKind::Quadrant => Ok(Synthetic::Labeled(data)),
        DatasetKind::ShiftPairs => {
            let s = spec.size;
            let mut shifted = Vec::with_capacity(data.images.len());
            let mut shifts = Vec::with_capacity(spec.n);
            for i in 0..spec.n {
                let (dr, dc) = (rng.random_range(0..s), rng.random_range(0..s));
                let (x, _) = data.batch(&[i])?;
                let y = roll(&roll(&x, 2, dr as isize)?, 3, dc as isize)?;
                shifted.extend_from_slice(y.data());
                shifts.push((dr, dc));
            }
            Ok(Synthetic::Pairs(ShiftPairs {
                shifted: Tensor::new(data.images.dims().to_vec(), shifted)?,
                originals: data.images,
                shifts,
            }))
        }
        DatasetKind::File => unreachable!("handled above"),
    }
}

/// The quadrant task as a labelled dataset.
pub fn quadrant_dataset(n: usize, size: usize, seed: u64) -> Result<Dataset> {
    match make_synthetic(&DatasetSpec::quadrant(n, size, seed))? {
        Synthetic::Labeled(d) => Ok(d),
        Synthetic::Pairs(_) => unreachable!("quadrant kind"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_follow_quadrants() {
        assert_eq!(quadrant_label(1, 1, 8), 0);
        assert_eq!(quadrant_label(1, 6, 8), 1);
        assert_eq!(quadrant_label(6, 1, 8), 2);
        assert_eq!(quadrant_label(6, 6, 8), 3);
        assert_eq!(quadrant_label(4, 3, 8), 2);
    }

    #[test]
    fn marker_is_brightest_and_labelled() {
        let d = quadrant_dataset(50, 8, 3).unwrap();
        for i in 0..d.len() {
            let img = &d.images.data()[i * 64..(i + 1) * 64];
            let pos = img.iter().position(|&v| v == 1.0).unwrap();
            assert_eq!(d.labels[i], quadrant_label(pos / 8, pos % 8, 8));
        }
    }

    #[test]
    fn class_balance_within_three_percent() {
        let d = quadrant_dataset(10_000, 16, 7).unwrap();
        let mut counts = [0usize; 4];
        for &l in &d.labels {
            counts[l as usize] += 1;
        }
        for c in counts {
            assert!((c as f64 / 10_000.0 - 0.25).abs() < 0.03, "{counts:?}");
        }
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(quadrant_dataset(20, 6, 1).unwrap(), quadrant_dataset(20, 6, 1).unwrap());
        assert_ne!(quadrant_dataset(20, 6, 1).unwrap(), quadrant_dataset(20, 6, 2).unwrap());
    }

    #[test]
    fn small_images_rejected() {
        assert!(matches!(make_synthetic(&DatasetSpec::quadrant(5, 1, 0)), Err(Error::Argument(_))));
    }

    #[test]
    fn shift_pairs_are_circular_shifts() {
        let spec = DatasetSpec {
            kind: DatasetKind::ShiftPairs,
            ..DatasetSpec::quadrant(4, 5, 9)
        };
        let Synthetic::Pairs(p) = make_synthetic(&spec).unwrap() else { panic!() };
        for (i, &(dr, dc)) in p.shifts.iter().enumerate() {
            for r in 0..5 {
                for c in 0..5 {
                    let a = p.originals.data()[i * 25 + r * 5 + c];
                    let b = p.shifted.data()[i * 25 + ((r + dr) % 5) * 5 + (c + dc) % 5];
                    assert_eq!(a, b);
                }
            }
        }
    }

    #[test]
    fn directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = quadrant_dataset(10, 4, 0).unwrap();
        d.save(dir.path()).unwrap();
        assert_eq!(Dataset::load(dir.path()).unwrap(), d);
        let spec = DatasetSpec {
            kind: DatasetKind::File,
            path: Some(dir.path().to_path_buf()),
            ..DatasetSpec::quadrant(0, 0, 0)
        };
        assert_eq!(make_synthetic(&spec).unwrap(), Synthetic::Labeled(d));
    }
}
