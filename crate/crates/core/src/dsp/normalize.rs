use ndarray::{Array1, Array2, Axis};

use super::features::{FeatureKind, FeatureMatrix};
use crate::error::{Error, Result};

/// Per-dimension mean and variance, computed on a training partition and
/// persisted alongside the model that consumes the normalized features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
}

impl FeatureStats {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: Array1::zeros(dim),
            var: Array1::ones(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Pooled population statistics over all frames of `parts`.
    pub fn compute<'a>(parts: impl IntoIterator<Item = &'a FeatureMatrix>) -> Result<Self> {
        let mut n = 0usize;
        let mut sum: Option<Array1<f64>> = None;
        let parts: Vec<&FeatureMatrix> = parts.into_iter().collect();
        for p in &parts {
            let s = p.data().sum_axis(Axis(0));
            match &mut sum {
                Some(acc) if acc.len() == s.len() => *acc += &s,
                Some(_) => return Err(Error::shape("feature dims differ across inputs")),
                None => sum = Some(s),
            }
            n += p.frames();
        }
        let sum = sum.ok_or_else(|| Error::param("no features to compute statistics over"))?;
        if n == 0 {
            return Err(Error::param("no frames to compute statistics over"));
        }
        let mean = sum / n as f64;
        let mut sq = Array1::<f64>::zeros(mean.len());
        for p in &parts {
            for row in p.data().rows() {
                let d = &row - &mean;
                sq += &(&d * &d);
            }
        }
        Ok(Self {
            mean,
            var: sq / n as f64,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != self.var.len() {
            return Err(Error::shape("mean and variance lengths differ"));
        }
        for (d, (&m, &v)) in self.mean.iter().zip(&self.var).enumerate() {
            if !m.is_finite() || !v.is_finite() {
                return Err(Error::Numerical(format!("non-finite statistics in dimension {d}")));
            }
            if v <= 0.0 {
                return Err(Error::Validation(format!(
                    "dimension {d} has zero variance; cannot normalize"
                )));
            }
        }
        Ok(())
    }
}

/// `(x - mean) / std` per dimension.
pub fn normalize(f: &FeatureMatrix, stats: &FeatureStats) -> Result<FeatureMatrix> {
    stats.validate()?;
    if stats.dim() != f.dim() {
        return Err(Error::shape(format!(
            "statistics for {} dims applied to {}-dim features",
            stats.dim(),
            f.dim()
        )));
    }
    let std = stats.var.mapv(f64::sqrt);
    let data = (f.data() - &stats.mean) / &std;
    FeatureMatrix::new(data, f.kind(), f.frame_shift_s())
}

/// Concatenates frames `t-left ..= t+right` (edges replicated).
pub fn stack_context(f: &FeatureMatrix, left: usize, right: usize) -> Result<FeatureMatrix> {
    let n = f.frames();
    if n == 0 {
        return Err(Error::param("cannot stack an empty feature matrix"));
    }
    if left == 0 && right == 0 {
        return Ok(f.clone());
    }
    let d = f.dim();
    let width = left + right + 1;
    let mut out = Array2::zeros((n, d * width));
    for t in 0..n {
        for j in 0..width {
            let src = (t + j).saturating_sub(left).min(n - 1);
            out.slice_mut(ndarray::s![t, j * d..(j + 1) * d])
                .assign(&f.data().row(src));
        }
    }
    FeatureMatrix::new(out, FeatureKind::Stacked, f.frame_shift_s())
}
