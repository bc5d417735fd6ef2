use crate::error::{Error, Result};

/// Mean squared error over all scalar entries.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::BadMetricInput("mse on empty slices"));
    }
    if pred.len() != target.len() {
        return Err(Error::LengthMismatch(pred.len(), target.len()));
    }
    let n = pred.len() as f64;
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n)
}

/// Gradient of [`mse_loss`] with respect to the predictions:
/// `2 (pred - target) / n`, accumulated into `out`.
pub fn mse_grad(pred: &[f64], target: &[f64], out: &mut [f64]) {
    let n = pred.len() as f64;
    for ((o, p), t) in out.iter_mut().zip(pred).zip(target) {
        *o += 2.0 * (p - t) / n;
    }
}

/// Ridge penalty `0.5 * sum(w^2)` over the given weight slices. Biases are
/// deliberately excluded by the callers.
pub fn l2_penalty<'a>(weights: impl IntoIterator<Item = &'a [f64]>) -> f64 {
    weights
        .into_iter()
        .flat_map(|w| w.iter())
        .map(|v| v * v)
        .sum::<f64>()
        * 0.5
}

const ACT_CLAMP_LO: f64 = 1e-7;
const ACT_CLAMP_HI: f64 = 1.0 - 1e-7;

/// KL divergence between Bernoulli(rho) and Bernoulli(rho_hat):
/// `rho ln(rho/rho_hat) + (1-rho) ln((1-rho)/(1-rho_hat))`.
/// `rho_hat` is clamped into `[1e-7, 1 - 1e-7]` so saturated activations
/// stay finite.
pub fn bernoulli_kl(rho: f64, rho_hat: f64) -> f64 {
    debug_assert!(rho > 0.0 && rho < 1.0, "target activity must be in (0,1)");
    let q = rho_hat.clamp(ACT_CLAMP_LO, ACT_CLAMP_HI);
    rho * (rho / q).ln() + (1.0 - rho) * ((1.0 - rho) / (1.0 - q)).ln()
}

/// Sparsity penalty of a batch of activation rows: per-unit batch means,
/// then `sum_j KL(rho || mean_j)`.
pub fn sparse_kl_penalty(rows: &[&[f64]], rho: f64) -> Result<f64> {
    let means = unit_means(rows)?;
    Ok(means.iter().map(|&m| bernoulli_kl(rho, m)).sum())
}

/// Gradient of [`sparse_kl_penalty`] with respect to each activation.
/// The penalty touches activations only through the batch means, so the
/// gradient is identical for every row: entry `j` of the returned vector is
/// `d penalty / d a[b][j]` for any `b`. Clamped units get zero gradient.
pub fn sparse_kl_act_grad(rows: &[&[f64]], rho: f64) -> Result<Vec<f64>> {
    let means = unit_means(rows)?;
    let b = rows.len() as f64;
    Ok(means
        .iter()
        .map(|&m| {
            if m <= ACT_CLAMP_LO || m >= ACT_CLAMP_HI {
                0.0
            } else {
                (-rho / m + (1.0 - rho) / (1.0 - m)) / b
            }
        })
        .collect())
}

fn unit_means(rows: &[&[f64]]) -> Result<Vec<f64>> {
    let first = rows.first().ok_or(Error::EmptySample)?;
    let width = first.len();
    let mut means = vec![0.0; width];
    for row in rows {
        if row.len() != width {
            return Err(Error::DimMismatch(width, row.len()));
        }
        for (m, a) in means.iter_mut().zip(row.iter()) {
            *m += a.clamp(ACT_CLAMP_LO, ACT_CLAMP_HI);
        }
    }
    let b = rows.len() as f64;
    for m in &mut means {
        *m /= b;
    }
    Ok(means)
}
