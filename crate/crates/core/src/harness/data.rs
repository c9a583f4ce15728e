//! Synthetic blob datasets, train/test splits and the two-view augmentation.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::rng::{stream, Rng, Stream};

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `[N, d]`
    pub features: Tensor,
    /// Evaluation only; training never reads them.
    pub labels: Option<Vec<usize>>,
    pub class_count: Option<usize>,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Option<Vec<usize>>) -> Result<Self> {
        let (n, _) = features.dims2()?;
        if !features.is_finite() {
            return Err(Error::domain("dataset features must be finite"));
        }
        let class_count = match &labels {
            None => None,
            Some(l) if l.len() != n => {
                return Err(Error::contract(format!("{} labels for {n} rows", l.len())));
            }
            Some(l) => Some(l.iter().max().map_or(0, |m| m + 1)),
        };
        Ok(Dataset {
            features,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(rows),
            labels: self.labels.as_ref().map(|l| rows.iter().map(|&i| l[i]).collect()),
            class_count: self.class_count,
        }
    }

    pub fn without_labels(&self) -> Dataset {
        Dataset {
            features: self.features.clone(),
            labels: None,
            class_count: None,
        }
    }

    pub fn require_labels(&self) -> Result<&[usize]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::contract("evaluation needs a labeled dataset"))
    }
}

/// Unit-variance isotropic Gaussian blobs with every pair of class means
/// `separation` apart (class means on scaled coordinate axes). When
/// `dim < classes` the means fall back to a line with neighbours
/// `separation` apart. Rows are class-major.
pub fn generate_blobs(classes: usize, per_class: usize, dim: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if classes < 2 || per_class < 2 || dim == 0 {
        return Err(Error::contract(format!(
            "need classes >= 2, per_class >= 2, dim >= 1 (got {classes}, {per_class}, {dim})"
        )));
    }
    if !(separation.is_finite() && separation >= 0.0) {
        return Err(Error::contract(format!("separation must be finite and >= 0, got {separation}")));
    }
    let mut rng = stream(seed, Stream::Data);
    let mut data = Vec::with_capacity(classes * per_class * dim);
    let mut labels = Vec::with_capacity(classes * per_class);
    for c in 0..classes {
        let mut mean = vec![0.0; dim];
        if dim >= classes {
            mean[c] = separation / std::f64::consts::SQRT_2;
        } else {
            mean[0] = separation * c as f64;
        }
        for _ in 0..per_class {
            data.extend(mean.iter().map(|m| m + rng.sample::<f64, _>(StandardNormal)));
            labels.push(c);
        }
    }
    let features = Tensor::matrix(classes * per_class, dim, data)?;
    Ok(Dataset {
        features,
        labels: Some(labels),
        class_count: Some(classes),
    })
}

/// Seeded permutation split into (train rows, test rows).
pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::contract(format!("test_fraction must be in [0, 1), got {test_fraction}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(seed, Stream::Split));
    let n_test = (n as f64 * test_fraction).round() as usize;
    let test = idx.split_off(n - n_test);
    Ok((idx, test))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentSettings {
    /// Standard deviation of the additive Gaussian noise.
    pub noise_std: f64,
    /// Probability of zeroing each coordinate.
    pub mask_prob: f64,
}

impl AugmentSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::contract(format!("noise_std must be >= 0, got {}", self.noise_std)));
        }
        if !(0.0..1.0).contains(&self.mask_prob) {
            return Err(Error::contract(format!("mask_prob must be in [0, 1), got {}", self.mask_prob)));
        }
        Ok(())
    }
}

fn augment_view(x: &[f64], s: &AugmentSettings, rng: &mut Rng) -> Vec<f64> {
    let mut v: Vec<f64> = x
        .iter()
        .map(|&xi| xi + s.noise_std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    for vi in v.iter_mut() {
        if rng.random::<f64>() < s.mask_prob {
            *vi = 0.0;
        }
    }
    v
}

/// Two independent draws of noise followed by coordinate masking.
pub fn augment_pair(x: &[f64], settings: &AugmentSettings, rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
    let a = augment_view(x, settings, rng);
    let b = augment_view(x, settings, rng);
    (a, b)
}
