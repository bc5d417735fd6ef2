use super::NetParams;

/// Outcome of a finite-difference sweep. `max_rel_err` is the headline
/// number; the worst location is kept for debugging.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub checked_scalars: usize,
}

/// Denominator floor: below this magnitude the comparison degrades into a
/// scaled absolute error, which keeps finite-difference noise on genuinely
/// tiny gradients from reading as failure.
const REL_FLOOR: f64 = 1e-5;

/// Compares the gradients currently accumulated in `net` against central
/// finite differences of `loss`. The caller must have run its analytic
/// forward/backward for the exact same loss immediately before; `loss` must
/// be deterministic (no dropout, no RNG).
pub fn check_gradients<N: NetParams>(
    net: &mut N,
    mut loss: impl FnMut(&N) -> f64,
    epsilon: f64,
) -> GradCheckReport {
    let analytic: Vec<Vec<f64>> = net.params().iter().map(|p| p.grad.clone()).collect();
    let names: Vec<String> = net.params().iter().map(|p| p.name.clone()).collect();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        checked_scalars: 0,
    };

    let n_params = analytic.len();
    for k in 0..n_params {
        for i in 0..analytic[k].len() {
            let orig = net.params()[k].value[i];
            net.params_mut()[k].value[i] = orig + epsilon;
            let f_plus = loss(net);
            net.params_mut()[k].value[i] = orig - epsilon;
            let f_minus = loss(net);
            net.params_mut()[k].value[i] = orig;

            let numeric = (f_plus - f_minus) / (2.0 * epsilon);
            let a = analytic[k][i];
            let denom = a.abs().max(numeric.abs()).max(REL_FLOOR);
            let rel = (a - numeric).abs() / denom;
            report.checked_scalars += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = names[k].clone();
                report.worst_index = i;
                report.analytic_at_worst = a;
                report.numeric_at_worst = numeric;
            }
        }
    }
    report
}
