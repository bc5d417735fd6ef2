//! Forecast quality metrics: RMSE, the capacity-normalized qualified rate,
//! a Friedman rank test with hand-rolled chi-square tail, inter-step
//! rising rates, and the per-cell result row the reports are built from.
//!
//! RMSE is computed in standardized units while the qualified rate lives
//! in physical kW normalized by capacity; the two deliberately use
//! different unit systems and reports label them accordingly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn rmse(measured: &[f64], predicted: &[f64]) -> Result<f64> {
    if measured.is_empty() {
        return Err(Error::BadMetricInput("rmse on empty series"));
    }
    if measured.len() != predicted.len() {
        return Err(Error::LengthMismatch(measured.len(), predicted.len()));
    }
    let n = measured.len() as f64;
    let sq: f64 = measured
        .iter()
        .zip(predicted)
        .map(|(m, p)| (m - p) * (m - p))
        .sum();
    Ok((sq / n).sqrt())
}

/// Fraction of hours whose prediction quality `1 - |P - P̂|/cap` reaches
/// the quantile `q`; the boundary counts as qualified. Physical units.
pub fn qr(measured_kw: &[f64], predicted_kw: &[f64], cap: f64, q: f64) -> Result<f64> {
    if cap <= 0.0 {
        return Err(Error::BadCapacity(cap));
    }
    if !(0.0 < q && q < 1.0) {
        return Err(Error::BadMetricInput("quantile outside (0, 1)"));
    }
    if measured_kw.is_empty() {
        return Err(Error::BadMetricInput("qualified rate on empty series"));
    }
    if measured_kw.len() != predicted_kw.len() {
        return Err(Error::LengthMismatch(measured_kw.len(), predicted_kw.len()));
    }
    let qualified = measured_kw
        .iter()
        .zip(predicted_kw)
        .filter(|(m, p)| 1.0 - (*m - *p).abs() / cap >= q)
        .count();
    Ok(qualified as f64 / measured_kw.len() as f64)
}

// ---------------------------------------------------------------------------
// Friedman rank test

#[derive(Clone, Debug, Serialize)]
pub struct FriedmanResult {
    pub statistic: f64,
    pub p_value: f64,
    /// Mean rank per column; rank 1 is the smallest value in a row.
    pub mean_ranks: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

/// Ranks one row ascending with mid-ranks for ties.
fn row_ranks(row: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[a].total_cmp(&row[b]));
    let mut ranks = vec![0.0; row.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && row[idx[j + 1]] == row[idx[i]] {
            j += 1;
        }
        // positions i..=j share the averaged 1-based rank
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &col in &idx[i..=j] {
            ranks[col] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Friedman test over a `t x k` table (rows = blocks, columns = treatments,
/// smaller is better). The statistic follows chi-square with `k-1` degrees
/// of freedom under the null of no column effect.
pub fn friedman(table: &[Vec<f64>]) -> Result<FriedmanResult> {
    let t = table.len();
    let k = table.first().map_or(0, |r| r.len());
    if t < 2 || k < 2 {
        return Err(Error::BadRankTable { rows: t, cols: k });
    }
    for row in table {
        if row.len() != k {
            return Err(Error::BadRankTable { rows: t, cols: row.len() });
        }
    }
    let mut mean_ranks = vec![0.0; k];
    for row in table {
        for (m, r) in mean_ranks.iter_mut().zip(row_ranks(row)) {
            *m += r;
        }
    }
    for m in &mut mean_ranks {
        *m /= t as f64;
    }
    let (tf, kf) = (t as f64, k as f64);
    let sum_r2: f64 = mean_ranks.iter().map(|r| r * r).sum();
    let statistic = 12.0 * tf / (kf * (kf + 1.0)) * (sum_r2 - kf * (kf + 1.0) * (kf + 1.0) / 4.0);
    let p_value = if statistic <= 0.0 {
        1.0
    } else {
        chi2_survival(statistic, k - 1)
    };
    Ok(FriedmanResult {
        statistic,
        p_value,
        mean_ranks,
        rows: t,
        cols: k,
    })
}

// ---------------------------------------------------------------------------
// chi-square tail via the regularized incomplete gamma function

/// `P(X > x)` for chi-square with `df` degrees of freedom.
pub fn chi2_survival(x: f64, df: usize) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    regularized_gamma_q(df as f64 / 2.0, x / 2.0)
}

/// Lanczos approximation (g = 7, 9 terms), accurate to ~1e-13 for z > 0.
fn ln_gamma(z: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    debug_assert!(z > 0.0);
    let mut acc = 0.999_999_999_999_809_9;
    for (i, c) in COEFFS.iter().enumerate() {
        acc += c / (z + i as f64);
    }
    let t = z + 6.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (z - 0.5) * t.ln() - t + acc.ln()
}

const GAMMA_EPS: f64 = 1e-15;
const GAMMA_MAX_ITER: usize = 500;

/// Regularized upper incomplete gamma `Q(a, x) = Γ(a, x)/Γ(a)`, evaluated
/// by the series for the lower function when `x < a + 1` and by a
/// continued fraction otherwise.
pub fn regularized_gamma_q(a: f64, x: f64) -> f64 {
    debug_assert!(a > 0.0 && x >= 0.0);
    if x == 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        1.0 - lower_series(a, x)
    } else {
        upper_continued_fraction(a, x)
    }
}

fn prefactor(a: f64, x: f64) -> f64 {
    (a * x.ln() - x - ln_gamma(a)).exp()
}

fn lower_series(a: f64, x: f64) -> f64 {
    let mut term = 1.0 / a;
    let mut sum = term;
    for n in 1..GAMMA_MAX_ITER {
        term *= x / (a + n as f64);
        sum += term;
        if term.abs() < sum.abs() * GAMMA_EPS {
            break;
        }
    }
    sum * prefactor(a, x)
}

fn upper_continued_fraction(a: f64, x: f64) -> f64 {
    const FPMIN: f64 = f64::MIN_POSITIVE / GAMMA_EPS;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / FPMIN;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..GAMMA_MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = b + an / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < GAMMA_EPS {
            break;
        }
    }
    prefactor(a, x) * h
}

// ---------------------------------------------------------------------------
// rising rates and correlation

/// Inter-step rates `r_s = rmse[s+1]/rmse[s] - 1` of an RMSE-by-horizon
/// curve.
pub fn step_rates(rmse_by_step: &[f64]) -> Result<Vec<f64>> {
    if rmse_by_step.len() < 2 {
        return Err(Error::BadMetricInput("rising rates need at least 2 steps"));
    }
    if let Some(i) = rmse_by_step.iter().position(|v| *v == 0.0) {
        return Err(Error::ZeroRmseStep(i));
    }
    Ok(rmse_by_step.windows(2).map(|w| w[1] / w[0] - 1.0).collect())
}

/// Summary of a pooled collection of rates: geometric mean
/// `exp(mean ln(1+r)) - 1` plus the population std of the raw rates.
/// The log form tolerates mildly negative rates (curve dips) as long as
/// every rate stays above -100%.
pub fn rate_stats(rates: &[f64]) -> Result<(f64, f64)> {
    if rates.is_empty() {
        return Err(Error::BadMetricInput("rate stats need at least one rate"));
    }
    if rates.iter().any(|r| 1.0 + r <= 0.0) {
        return Err(Error::BadMetricInput("rate at or below -100%"));
    }
    let n = rates.len() as f64;
    let geomean = (rates.iter().map(|r| (1.0 + r).ln()).sum::<f64>() / n).exp() - 1.0;
    let mean = rates.iter().sum::<f64>() / n;
    let var = rates.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    Ok((geomean, var.sqrt()))
}

/// Rising-rate summary of one RMSE-by-horizon curve.
pub fn rising_rates(rmse_by_step: &[f64]) -> Result<(f64, f64)> {
    rate_stats(&step_rates(rmse_by_step)?)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(Error::BadMetricInput("correlation needs at least 2 points"));
    }
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in x.iter().zip(y) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::BadMetricInput("correlation of a constant series"));
    }
    Ok(cov / (vx * vy).sqrt())
}

// ---------------------------------------------------------------------------
// result rows

/// One evaluated cell of the model comparison.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricRow {
    pub model: String,
    pub turbine: String,
    pub horizon: usize,
    /// Standardized units.
    pub rmse: f64,
    /// Physical units normalized by capacity.
    pub qr90: f64,
    pub param_count: usize,
    pub train_seconds: f64,
    pub infer_seconds: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        let m = [0.2, -0.4, 1.1];
        let p = [0.1, 0.2, 0.9];
        let r = rmse(&m, &p).unwrap();
        let mse: f64 = m.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 3.0;
        assert_abs_diff_eq!(r * r, mse, epsilon = 1e-12);
    }

    #[test]
    fn qr_examples_and_boundary() {
        assert_eq!(qr(&[5.0, 6.0], &[5.0, 6.0], 3000.0, 0.9).unwrap(), 1.0);
        // error exactly (1-q) cap: the >= boundary qualifies
        assert_eq!(qr(&[300.0], &[0.0], 3000.0, 0.9).unwrap(), 1.0);
        assert_eq!(qr(&[0.0, 600.0], &[0.0, 0.0], 3000.0, 0.9).unwrap(), 0.5);
    }

    #[test]
    fn qr_is_scale_invariant() {
        let m = [100.0, 900.0, 2500.0];
        let p = [140.0, 600.0, 2510.0];
        let a = qr(&m, &p, 3000.0, 0.9).unwrap();
        let k = 7.3;
        let ms: Vec<f64> = m.iter().map(|v| v * k).collect();
        let ps: Vec<f64> = p.iter().map(|v| v * k).collect();
        assert_eq!(a, qr(&ms, &ps, 3000.0 * k, 0.9).unwrap());
    }

    #[test]
    fn qr_rejects_bad_inputs() {
        assert!(qr(&[1.0], &[1.0], 0.0, 0.9).is_err());
        assert!(qr(&[1.0], &[1.0], 100.0, 1.0).is_err());
        assert!(qr(&[], &[], 100.0, 0.9).is_err());
    }

    #[test]
    fn friedman_identical_columns_give_zero_statistic() {
        let table = vec![vec![1.0, 1.0, 1.0], vec![2.0, 2.0, 2.0]];
        let r = friedman(&table).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert!(r.mean_ranks.iter().all(|&m| m == 2.0));
    }

    #[test]
    fn friedman_strict_ordering_3x3() {
        let table = vec![
            vec![0.1, 0.2, 0.3],
            vec![0.4, 0.5, 0.6],
            vec![0.7, 0.8, 0.9],
        ];
        let r = friedman(&table).unwrap();
        assert_abs_diff_eq!(r.statistic, 6.0, epsilon = 1e-12);
        // chi-square df=2 tail has the closed form exp(-F/2)
        assert_abs_diff_eq!(r.p_value, (-3.0f64).exp(), epsilon = 1e-12);
        assert_eq!(r.mean_ranks, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn friedman_rejects_degenerate_tables() {
        assert!(friedman(&[vec![1.0, 2.0]]).is_err());
        assert!(friedman(&[vec![1.0], vec![2.0]]).is_err());
        assert!(friedman(&[vec![1.0, 2.0], vec![1.0]]).is_err());
    }

    /// Independent rank computation: rank = 1 + count(smaller) + half the
    /// tied peers, never touching the sort-based path.
    fn counting_ranks(row: &[f64]) -> Vec<f64> {
        row.iter()
            .map(|v| {
                let less = row.iter().filter(|w| *w < v).count();
                let eq = row.iter().filter(|w| *w == v).count();
                1.0 + less as f64 + (eq - 1) as f64 / 2.0
            })
            .collect()
    }

    #[test]
    fn friedman_matches_counting_oracle_on_random_tables() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for case in 0..50 {
            let table: Vec<Vec<f64>> = (0..10)
                .map(|_| {
                    (0..6)
                        .map(|_| {
                            // quantized values so ties actually occur
                            (rng.gen_range(0..25) as f64) / 10.0
                        })
                        .collect()
                })
                .collect();
            let got = friedman(&table).unwrap();

            let mut mean_ranks = vec![0.0; 6];
            for row in &table {
                for (m, r) in mean_ranks.iter_mut().zip(counting_ranks(row)) {
                    *m += r;
                }
            }
            for m in &mut mean_ranks {
                *m /= 10.0;
            }
            let sum_r2: f64 = mean_ranks.iter().map(|r| r * r).sum();
            let expect = 12.0 * 10.0 / (6.0 * 7.0) * (sum_r2 - 6.0 * 49.0 / 4.0);
            assert_eq!(got.mean_ranks, mean_ranks, "case {case}");
            assert_eq!(got.statistic.to_bits(), expect.to_bits(), "case {case}");
        }
    }

    #[test]
    fn chi2_survival_matches_reference_values() {
        // reference values from an independent implementation
        let cases = [
            (16.4, 4, 2.526_812_843_743_711e-3),
            (1.57, 5, 9.048_532_144_437_471e-1),
            (6.0, 2, 4.978_706_836_786_395e-2),
            (0.0, 3, 1.0),
            (2.5, 1, 1.138_462_980_066_576_3e-1),
            (30.0, 5, 1.474_858_103_844_307_3e-5),
            (10.0, 6, 1.246_520_194_830_810_8e-1),
            (3.3, 2, 1.920_499_086_207_540_5e-1),
        ];
        for (x, df, expect) in cases {
            let got = chi2_survival(x, df);
            assert!(
                (got - expect).abs() <= 1e-10 * expect.max(1e-10),
                "sf({x}, {df}) = {got}, want {expect}"
            );
        }
    }

    #[test]
    fn p_value_decreases_in_statistic() {
        let mut last = 1.0;
        for i in 1..40 {
            let p = chi2_survival(i as f64 * 0.5, 4);
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn rising_rate_examples() {
        let (g, s) = rising_rates(&[0.12, 0.12, 0.12]).unwrap();
        assert_abs_diff_eq!(g, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s, 0.0, epsilon = 1e-15);
        let (g, _) = rising_rates(&[0.10, 0.11, 0.121]).unwrap();
        assert_abs_diff_eq!(g, 0.10, epsilon = 1e-12);
    }

    #[test]
    fn rising_rates_tolerate_dips_and_reject_zeros() {
        let (g, _) = rising_rates(&[0.10, 0.09, 0.12]).unwrap();
        assert!(g.is_finite());
        assert!(matches!(
            rising_rates(&[0.1, 0.0, 0.2]),
            Err(Error::ZeroRmseStep(1))
        ));
    }

    #[test]
    fn pearson_hand_case() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [2.0, 4.0, 6.0, 8.0];
        assert_abs_diff_eq!(pearson(&x, &y).unwrap(), 1.0, epsilon = 1e-12);
        let y_neg = [8.0, 6.0, 4.0, 2.0];
        assert_abs_diff_eq!(pearson(&x, &y_neg).unwrap(), -1.0, epsilon = 1e-12);
    }
}
