use ndarray::Array2;

use crate::error::{Error, Result};

/// Probabilities below this are treated as this inside the log.
pub const CE_LOG_FLOOR: f64 = 1e-12;

fn same_shape(a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    if a.nrows() == 0 {
        return Err(Error::param("empty batch"));
    }
    Ok(())
}

/// `-(1/m) sum_i L_i . log(P_i)`, averaged over the `m` rows.
pub fn loss_ce(probs: &Array2<f64>, labels: &Array2<f64>) -> Result<f64> {
    same_shape(probs, labels)?;
    let m = probs.nrows() as f64;
    let total: f64 = probs
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l != 0.0)
        .map(|(&p, &l)| l * p.max(CE_LOG_FLOOR).ln())
        .sum();
    Ok(-total / m)
}

/// `dL/dP` of [`loss_ce`].
pub fn loss_ce_grad(probs: &Array2<f64>, labels: &Array2<f64>) -> Result<Array2<f64>> {
    same_shape(probs, labels)?;
    let m = probs.nrows() as f64;
    let mut g = Array2::zeros(probs.dim());
    ndarray::Zip::from(&mut g).and(probs).and(labels).for_each(|g, &p, &l| {
        if l != 0.0 && p > CE_LOG_FLOOR {
            *g = -l / (p * m);
        }
    });
    Ok(g)
}

/// `dL/dZ` of cross-entropy composed with a softmax output: `(P - L) / m`.
pub fn ce_softmax_grad(probs: &Array2<f64>, labels: &Array2<f64>) -> Result<Array2<f64>> {
    same_shape(probs, labels)?;
    Ok((probs - labels) / probs.nrows() as f64)
}

/// Mean over all entries of the squared error.
pub fn loss_mse(pred: &Array2<f64>, target: &Array2<f64>) -> Result<f64> {
    same_shape(pred, target)?;
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64)
}

pub fn loss_mse_grad(pred: &Array2<f64>, target: &Array2<f64>) -> Result<Array2<f64>> {
    same_shape(pred, target)?;
    Ok((pred - target) * (2.0 / pred.len() as f64))
}
