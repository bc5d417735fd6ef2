//! Acceptance gate: eight release criteria, each printing one verdict line.
//! Run with `--nocapture` to see the lines for passing criteria too.

use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use windkd::data::{ChannelSet, FrameScalers, StandardScaler, SupervisedSet, WindowSpec};
use windkd::distill::{compare_term, kd_loss, KdConfig, RelErrBatch};
use windkd::evaluate::{friedman, qr, rmse};
use windkd::nn::{check_gradients, NetParams};
use windkd::recurrent::{grad_check_turbine, BiLstmNet, EdLstmNet, TurbineNet};
use windkd::run::{emit_report, run_ablation, ForecastReport, ModelKind, RunConfig};
use windkd::transfer::{
    batch_backprop, batch_loss, collect_hidden_acts, mmd, Alignment, Bandwidth, KernelSpec,
    RegWeights, TlNet,
};

fn verdict(n: usize, what: &str, checks: &[(String, bool)]) {
    let pass = checks.iter().all(|(_, ok)| *ok);
    println!(
        "criterion {n}: {} - {what}",
        if pass { "PASS" } else { "FAIL" }
    );
    for (detail, ok) in checks {
        if !ok {
            println!("  failed: {detail}");
        }
    }
    assert!(pass, "criterion {n} failed, see lines above");
}

// ---------------------------------------------------------------------------
// criterion 1: every layer and loss passes a finite-difference audit

fn unit_scalers(with_nwp: bool) -> FrameScalers {
    let s = StandardScaler { mean: 0.0, std: 1.0 };
    FrameScalers {
        power: s,
        speed: s,
        nwp: with_nwp.then_some(s),
    }
}

/// Small sinusoid window set, enough records for a gradient batch.
fn toy_set(n: usize, with_nwp: bool, phase: f64) -> SupervisedSet {
    let spec = WindowSpec::new(7, 6).unwrap();
    let mut power = Vec::new();
    let mut speed = Vec::new();
    let mut nwp = Vec::new();
    let mut targets = Vec::new();
    let mut times = Vec::new();
    for i in 0..n {
        for t in 0..spec.lag_count {
            let ph = 0.3 * (i + t) as f64 + phase;
            power.push(ph.sin());
            speed.push((ph + 0.5).sin());
        }
        let tgt = (0.3 * (i + spec.lag_count + spec.horizon - 1) as f64 + phase).sin();
        targets.push(tgt);
        if with_nwp {
            nwp.push(tgt * 0.9);
        }
        times.push(windkd::data::utc(2020, 1, 1, 0, 0) + chrono::Duration::hours(i as i64));
    }
    SupervisedSet {
        spec,
        with_nwp,
        power_lags: power,
        speed_lags: speed,
        nwp_at_target: nwp,
        targets,
        target_times: times,
        scalers: unit_scalers(with_nwp),
        capacity_kw: 3000.0,
        base_len: n,
        channels: ChannelSet::for_window(false, with_nwp),
    }
}

fn random_rows(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect()
}

#[test]
fn criterion_1_gradient_audits() {
    let started = Instant::now();
    let mut checks = Vec::new();
    let tol = 1e-4;

    for seed in 0..20u64 {
        let phase = seed as f64 * 0.17;

        // recurrent nets, both input widths: covers LSTM cells, the
        // bidirectional wiring, the encoder-decoder path and the dense head
        for with_nwp in [false, true] {
            let set = toy_set(5, with_nwp, phase);
            let in_dim = if with_nwp { 3 } else { 2 };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let nets = [
                ("bilstm", TurbineNet::Bi(BiLstmNet::new(in_dim, 0.0, &mut rng))),
                ("edlstm", TurbineNet::Ed(EdLstmNet::new(in_dim, 0.0, &mut rng))),
            ];
            for (name, mut net) in nets {
                let r = grad_check_turbine(&mut net, &set, 4, 1e-5).unwrap();
                checks.push((
                    format!("{name} in_dim {in_dim} seed {seed}: rel err {:.2e}", r.max_rel_err),
                    r.max_rel_err < tol,
                ));
            }
        }

        // relation-network losses: plain regularized fit, then the
        // adaptation loss with the kernel alignment term switched on
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1000));
        let source = TlNet::new(&mut rng);
        let source_xs = random_rows(8, 7, &mut rng);
        let xs = random_rows(6, 7, &mut rng);
        let ys = random_rows(6, 7, &mut rng);
        let reg = RegWeights { l2: 1e-3, sparse: 0.05, rho: 0.1 };

        let mut net = source.clone();
        net.zero_grads();
        batch_backprop(&mut net, &xs, &ys, &reg, None).unwrap();
        let r = check_gradients(
            &mut net,
            |n| batch_loss(n, &xs, &ys, &reg, None).unwrap().total,
            1e-5,
        );
        checks.push((
            format!("source-domain loss seed {seed}: rel err {:.2e}", r.max_rel_err),
            r.max_rel_err < tol,
        ));

        let mut adapted = source.clone();
        for p in adapted.params_mut() {
            for v in &mut p.value {
                *v += rng.gen_range(-0.3..0.3);
            }
        }
        let align = Alignment {
            gamma: 0.7,
            kernel: KernelSpec::Rbf { bandwidth: Bandwidth::Fixed(1.0) },
            layers: vec![0, 1, 2],
            source_acts: collect_hidden_acts(&source, &source_xs),
        };
        adapted.zero_grads();
        batch_backprop(&mut adapted, &xs, &ys, &reg, Some(&align)).unwrap();
        let r = check_gradients(
            &mut adapted,
            |n| batch_loss(n, &xs, &ys, &reg, Some(&align)).unwrap().total,
            1e-5,
        );
        checks.push((
            format!("adaptation loss seed {seed}: rel err {:.2e}", r.max_rel_err),
            r.max_rel_err < tol,
        ));

        // distillation loss in its open-gate branch, differentiated
        // against the student error entries by central differences
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2000));
        let teacher: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..0.3)).collect();
        let student: Vec<f64> = teacher.iter().map(|t| t + rng.gen_range(0.2..0.5)).collect();
        let cfg = KdConfig { alpha: 0.8, ..KdConfig::default() };
        let n = student.len() as f64;
        let mut worst: f64 = 0.0;
        for i in 0..student.len() {
            let eps = 1e-6;
            let eval = |s_i: f64| {
                let mut s = student.clone();
                s[i] = s_i;
                kd_loss(&RelErrBatch::new(s, teacher.clone()).unwrap(), &cfg).unwrap()
            };
            let numeric = (eval(student[i] + eps) - eval(student[i] - eps)) / (2.0 * eps);
            let analytic =
                (2.0 * cfg.alpha * student[i] + 2.0 * (1.0 - cfg.alpha) * (student[i] - teacher[i])) / n;
            let rel = (numeric - analytic).abs() / analytic.abs().max(1e-5);
            worst = worst.max(rel);
        }
        checks.push((
            format!("distillation open-gate loss seed {seed}: rel err {worst:.2e}"),
            worst < tol,
        ));
    }

    let elapsed = started.elapsed().as_secs_f64();
    checks.push((format!("completed in {elapsed:.1}s (budget 120s)"), elapsed < 120.0));
    verdict(
        1,
        "gradient audits across layers and losses, 20 seeds",
        &checks,
    );
}

// ---------------------------------------------------------------------------
// criterion 2: kernel statistic against a naive oracle

fn naive_mmd_sq(x: &[Vec<f64>], y: &[Vec<f64>], k: impl Fn(&[f64], &[f64]) -> f64) -> f64 {
    let mut xx = 0.0;
    for a in x {
        for b in x {
            xx += k(a, b);
        }
    }
    let mut yy = 0.0;
    for a in y {
        for b in y {
            yy += k(a, b);
        }
    }
    let mut xy = 0.0;
    for a in x {
        for b in y {
            xy += k(a, b);
        }
    }
    let (n, m) = (x.len() as f64, y.len() as f64);
    xx / (n * n) + yy / (m * m) - 2.0 * xy / (n * m)
}

#[test]
fn criterion_2_kernel_statistic_vs_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checks = Vec::new();

    let mut worst_rbf: f64 = 0.0;
    for _ in 0..100 {
        let dim = rng.gen_range(1..=8);
        let n = rng.gen_range(2..=50);
        let m = rng.gen_range(2..=50);
        let x = random_rows(n, dim, &mut rng);
        let y = random_rows(m, dim, &mut rng);
        let sigma = rng.gen_range(0.5..2.0);
        let got = mmd(&x, &y, KernelSpec::Rbf { bandwidth: Bandwidth::Fixed(sigma) }).unwrap();
        let want = naive_mmd_sq(&x, &y, |a, b| {
            let d2: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
            (-d2 / (2.0 * sigma * sigma)).exp()
        })
        .max(0.0)
        .sqrt();
        worst_rbf = worst_rbf.max((got - want).abs());
    }
    checks.push((
        format!("rbf kernel vs double-loop oracle, 100 cases: worst abs diff {worst_rbf:.2e}"),
        worst_rbf < 1e-12,
    ));

    let mut worst_lin: f64 = 0.0;
    for _ in 0..100 {
        let dim = rng.gen_range(1..=8);
        let x = random_rows(rng.gen_range(2..=50), dim, &mut rng);
        let y = random_rows(rng.gen_range(2..=50), dim, &mut rng);
        let got_sq = mmd(&x, &y, KernelSpec::Linear).unwrap().powi(2);
        let mean = |s: &[Vec<f64>]| -> Vec<f64> {
            let mut out = vec![0.0; dim];
            for row in s {
                for (o, v) in out.iter_mut().zip(row) {
                    *o += v / s.len() as f64;
                }
            }
            out
        };
        let (mx, my) = (mean(&x), mean(&y));
        let want: f64 = mx.iter().zip(&my).map(|(a, b)| (a - b) * (a - b)).sum();
        worst_lin = worst_lin.max((got_sq - want).abs());
    }
    checks.push((
        format!("linear kernel squared == squared mean difference: worst abs diff {worst_lin:.2e}"),
        worst_lin < 1e-10,
    ));

    verdict(2, "kernel two-sample statistic matches naive oracles", &checks);
}

// ---------------------------------------------------------------------------
// criterion 3: distillation loss closed forms

#[test]
fn criterion_3_distillation_loss_algebra() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checks = Vec::new();

    // alpha = 1 collapses to the student term, bit for bit
    let mut alpha_one_exact = true;
    for _ in 0..50 {
        let n = rng.gen_range(1..=20);
        let student: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..2.0)).collect();
        let teacher: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..2.0)).collect();
        let batch = RelErrBatch::new(student.clone(), teacher).unwrap();
        let got = kd_loss(&batch, &KdConfig { alpha: 1.0, ..KdConfig::default() }).unwrap();
        let want = student.iter().map(|s| s * s).sum::<f64>() / n as f64;
        if got.to_bits() != want.to_bits() {
            alpha_one_exact = false;
        }
    }
    checks.push(("alpha=1 equals mean squared student error bit-exactly".into(), alpha_one_exact));

    // the gate is exactly zero whenever the student is not worse
    let mut gate_zero = true;
    for _ in 0..50 {
        let n = rng.gen_range(1..=20);
        let teacher: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
        // scale the student strictly inside the teacher's norm
        let scale = rng.gen_range(0.0..1.0);
        let student: Vec<f64> = teacher.iter().map(|t| t * scale).collect();
        if compare_term(&student, &teacher).unwrap() != 0.0 {
            gate_zero = false;
        }
    }
    // boundary: equal norms keep the gate closed too
    let b = vec![0.3, 0.4];
    if compare_term(&b, &[0.4, 0.3]).unwrap() != 0.0 {
        gate_zero = false;
    }
    checks.push(("gate exactly 0 when student norm <= teacher norm".into(), gate_zero));

    // three-sample hand case at alpha = 0.8: student [0.5, 0.2, 0.4],
    // teacher [0.1, 0.1, 0.1]; s2 = 0.45 > t2 = 0.03 so the gate is open;
    // compare = 0.16 + 0.01 + 0.09 = 0.26
    // loss = (0.8 * 0.45 + 0.2 * 0.26) / 3 = 0.412 / 3
    let batch = RelErrBatch::new(vec![0.5, 0.2, 0.4], vec![0.1, 0.1, 0.1]).unwrap();
    let got = kd_loss(&batch, &KdConfig { alpha: 0.8, ..KdConfig::default() }).unwrap();
    let want = (0.8 * 0.45 + 0.2 * 0.26) / 3.0;
    checks.push((
        format!("hand case: got {got:.15}, want {want:.15}"),
        (got - want).abs() < 1e-12,
    ));

    verdict(3, "distillation loss closed forms and gate rule", &checks);
}

// ---------------------------------------------------------------------------
// criterion 4: rank test against a brute-force oracle

/// Independent rank computation: average ranks within each row (ties
/// averaged), then the classical statistic.
fn brute_friedman_statistic(table: &[Vec<f64>]) -> f64 {
    let t = table.len() as f64;
    let k = table[0].len() as f64;
    let mut rank_sums = vec![0.0; table[0].len()];
    for row in table {
        for (j, rj) in rank_sums.iter_mut().enumerate() {
            let v = row[j];
            let less = row.iter().filter(|&&o| o < v).count() as f64;
            let equal = row.iter().filter(|&&o| o == v).count() as f64;
            // average rank: 1-based, ties share the mean of their block
            *rj += less + (equal + 1.0) / 2.0;
        }
    }
    let mean_ranks: Vec<f64> = rank_sums.iter().map(|s| s / t).collect();
    let center = (k + 1.0) / 2.0;
    let dev: f64 = mean_ranks.iter().map(|r| (r - center) * (r - center)).sum();
    12.0 * t / (k * (k + 1.0)) * dev
}

#[test]
fn criterion_4_rank_test_vs_brute_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut checks = Vec::new();

    let mut worst: f64 = 0.0;
    for case in 0..50 {
        let table: Vec<Vec<f64>> = (0..10)
            .map(|_| {
                (0..6)
                    .map(|_| {
                        // quantized values so ties actually occur
                        let v: f64 = rng.gen_range(0.0..1.0);
                        if case % 2 == 0 { (v * 8.0).round() / 8.0 } else { v }
                    })
                    .collect()
            })
            .collect();
        let got = friedman(&table).unwrap().statistic;
        let want = brute_friedman_statistic(&table);
        worst = worst.max((got - want).abs());
    }
    checks.push((
        format!("50 random 10x6 tables vs rank oracle: worst abs diff {worst:.2e}"),
        worst < 1e-10,
    ));

    let equal = vec![vec![1.0; 6]; 10];
    let r = friedman(&equal).unwrap();
    checks.push((
        format!("all-equal columns: statistic {} p {}", r.statistic, r.p_value),
        r.statistic == 0.0 && r.p_value == 1.0,
    ));

    let strict = vec![
        vec![1.0, 2.0, 3.0],
        vec![0.1, 0.2, 0.3],
        vec![10.0, 20.0, 30.0],
    ];
    let r = friedman(&strict).unwrap();
    checks.push((
        format!("3x3 strict ordering: statistic {}", r.statistic),
        (r.statistic - 6.0).abs() < 1e-12,
    ));

    verdict(4, "rank significance test matches brute-force oracle", &checks);
}

// ---------------------------------------------------------------------------
// criterion 5: metric identities

#[test]
fn criterion_5_metric_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checks = Vec::new();

    let y: Vec<f64> = (0..200).map(|_| rng.gen_range(-2.0..2.0)).collect();
    checks.push((
        "rmse of a series against itself is 0".into(),
        rmse(&y, &y).unwrap() == 0.0,
    ));
    let shifted: Vec<f64> = y.iter().map(|v| v + 0.25).collect();
    let r = rmse(&y, &shifted).unwrap();
    checks.push((
        format!("constant offset 0.25 gives rmse {r:.15}"),
        (r - 0.25).abs() < 1e-12,
    ));
    let r = rmse(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
    checks.push((format!("[0,0] vs [1,1] gives {r}"), r == 1.0));
    // rmse^2 equals mean squared error
    let pred: Vec<f64> = y.iter().map(|v| v + rng.gen_range(-0.5..0.5)).collect();
    let r = rmse(&y, &pred).unwrap();
    let mse: f64 = y.iter().zip(&pred).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64;
    checks.push((
        format!("rmse^2 vs mse diff {:.2e}", (r * r - mse).abs()),
        (r * r - mse).abs() < 1e-12,
    ));

    checks.push((
        "perfect predictions give qualified rate 1".into(),
        qr(&y, &y, 3000.0, 0.9).unwrap() == 1.0,
    ));
    // boundary: error of exactly (1-q)*cap still qualifies
    let q = qr(&[1000.0], &[1300.0], 3000.0, 0.9).unwrap();
    checks.push((format!("boundary error 300 of 3000 gives {q}"), q == 1.0));
    let q = qr(&[1000.0, 1000.0], &[1000.0, 1600.0], 3000.0, 0.9).unwrap();
    checks.push((format!("errors [0, 600] at cap 3000 give {q}"), q == 0.5));

    // joint rescaling of measured, predicted and capacity changes nothing
    let meas: Vec<f64> = (0..100).map(|_| rng.gen_range(0.0..3000.0)).collect();
    let pred: Vec<f64> = meas.iter().map(|v| v + rng.gen_range(-500.0..500.0)).collect();
    let base = qr(&meas, &pred, 3000.0, 0.9).unwrap();
    let mut scale_ok = true;
    for scale in [0.1, 7.0, 123.456] {
        let ms: Vec<f64> = meas.iter().map(|v| v * scale).collect();
        let ps: Vec<f64> = pred.iter().map(|v| v * scale).collect();
        if qr(&ms, &ps, 3000.0 * scale, 0.9).unwrap() != base {
            scale_ok = false;
        }
    }
    checks.push(("qualified rate invariant under joint scaling".into(), scale_ok));

    verdict(5, "metric identities and boundary rules", &checks);
}

// ---------------------------------------------------------------------------
// criteria 6 and 7 share one full comparison run

struct FullRun {
    report: ForecastReport,
    elapsed_seconds: f64,
}

fn full_run() -> &'static FullRun {
    static RUN: OnceLock<FullRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let mut config = RunConfig::default();
        config.seed = 42;
        config.duration_days = 365;
        config.horizons = vec![6, 9, 12];
        config.lag_count = 24;
        config.augment.factor = 1;
        config.train.teacher_epochs = 40;
        config.train.teacher_folds = 4;
        config.train.student_epochs = 70;
        config.train.distill_epochs = 25;
        config.train.relation_epochs = 80;
        config.train.correction_epochs = 50;
        config.train.patience = 8;
        let started = Instant::now();
        let report = run_ablation(&config).expect("full comparison run");
        FullRun {
            report,
            elapsed_seconds: started.elapsed().as_secs_f64(),
        }
    })
}

fn cell_rmse(report: &ForecastReport, model: &str, turbine: &str, horizon: usize) -> Option<f64> {
    report
        .cells
        .iter()
        .find(|c| c.model == model && c.turbine == turbine && c.horizon == horizon)
        .and_then(|c| c.metrics.as_ref())
        .map(|m| m.rmse)
}

#[test]
fn criterion_6_end_to_end_comparison() {
    let run = full_run();
    let report = &run.report;
    let mut checks = Vec::new();

    let failed: Vec<String> = report
        .cells
        .iter()
        .filter(|c| c.error.is_some())
        .map(|c| format!("{} {} h{}", c.model, c.turbine, c.horizon))
        .collect();
    checks.push((
        format!("all 90 cells trained ({} failed: {})", failed.len(), failed.join(", ")),
        failed.is_empty(),
    ));

    let mut worst = ("", String::new(), 0usize, 0.0f64);
    let mut all_under = true;
    for m in ModelKind::ALL {
        for turbine in &report.turbines {
            for &h in &report.horizons {
                if let Some(r) = cell_rmse(report, m.name(), turbine, h) {
                    if r >= 0.15 {
                        all_under = false;
                    }
                    if r > worst.3 {
                        worst = (m.name(), turbine.clone(), h, r);
                    }
                }
            }
        }
    }
    checks.push((
        format!(
            "every cell under 0.15 standardized rmse (worst: {} {} h{} = {:.4})",
            worst.0, worst.1, worst.2, worst.3
        ),
        all_under,
    ));

    let mean_rmse = |model: &str| -> f64 {
        let vals: Vec<f64> = report
            .turbines
            .iter()
            .flat_map(|t| {
                report
                    .horizons
                    .iter()
                    .filter_map(|&h| cell_rmse(report, model, t, h))
                    .collect::<Vec<_>>()
            })
            .collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    };
    let (kdtl, bilstm, kd) = (mean_rmse("KD-TL"), mean_rmse("BiLSTM"), mean_rmse("KD"));
    checks.push((
        format!("full framework mean {kdtl:.4} < plain recurrent baseline {bilstm:.4}"),
        kdtl < bilstm,
    ));
    checks.push((
        format!("full framework mean {kdtl:.4} < distilled-only {kd:.4}"),
        kdtl < kd,
    ));

    let mut worst_inversions = 0usize;
    let mut curves_ok = true;
    for m in ModelKind::ALL {
        for turbine in &report.turbines {
            let curve: Vec<f64> = report
                .horizons
                .iter()
                .filter_map(|&h| cell_rmse(report, m.name(), turbine, h))
                .collect();
            if curve.len() < 2 {
                continue;
            }
            let inversions = curve.windows(2).filter(|w| w[1] < w[0]).count();
            worst_inversions = worst_inversions.max(inversions);
            if inversions > 1 {
                curves_ok = false;
            }
        }
    }
    checks.push((
        format!("rmse rises with horizon, at most one inversion per curve (worst {worst_inversions})"),
        curves_ok,
    ));

    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let budget = 45.0 * 60.0 * 8.0 / cores as f64;
    checks.push((
        format!(
            "runtime {:.0}s on {cores} cores (budget {:.0}s, stated for 8 cores)",
            run.elapsed_seconds, budget
        ),
        run.elapsed_seconds < budget,
    ));

    verdict(
        6,
        "end-to-end six-model comparison on a year of synthetic data",
        &checks,
    );
}

#[test]
fn criterion_7_complexity_ratios() {
    let run = full_run();
    let report = &run.report;
    let mut checks = Vec::new();

    let params = |model: &str| -> Option<usize> {
        report
            .cells
            .iter()
            .filter(|c| c.model == model)
            .find_map(|c| c.metrics.as_ref().map(|m| m.param_count))
    };
    let infer_mean = |model: &str| -> Option<f64> {
        let vals: Vec<f64> = report
            .cells
            .iter()
            .filter(|c| c.model == model)
            .filter_map(|c| c.metrics.as_ref().map(|m| m.infer_seconds))
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };

    match (params("EDED-TL"), params("KD-TL")) {
        (Some(heavy), Some(light)) => {
            let ratio = heavy as f64 / light as f64;
            checks.push((
                format!("parameter ratio {heavy}/{light} = {ratio:.2} within [2, 6]"),
                (2.0..=6.0).contains(&ratio),
            ));
        }
        _ => checks.push(("parameter counts present for both models".into(), false)),
    }

    match (infer_mean("EDED-TL"), infer_mean("KD-TL")) {
        (Some(heavy), Some(light)) => checks.push((
            format!(
                "per-prediction inference {:.1}us vs {:.1}us, heavier model slower",
                heavy * 1e6,
                light * 1e6
            ),
            heavy > light,
        )),
        _ => checks.push(("inference timings present for both models".into(), false)),
    }

    verdict(7, "model complexity ratios", &checks);
}

// ---------------------------------------------------------------------------
// criterion 8: byte-identical reruns

#[test]
fn criterion_8_reproducible_metrics() {
    let mut config = RunConfig::default();
    config.seed = 77;
    config.duration_days = 30;
    config.horizons = vec![6];
    config.lag_count = 24;
    config.roster = vec![ModelKind::BiLstm, ModelKind::Kd];
    config.augment.factor = 2;
    config.train.teacher_epochs = 4;
    config.train.teacher_folds = 2;
    config.train.student_epochs = 5;
    config.train.distill_epochs = 3;
    config.train.relation_epochs = 6;
    config.train.correction_epochs = 4;
    config.train.patience = 2;

    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for sub in ["a", "b"] {
        let out = dir.path().join(sub);
        let report = run_ablation(&config).unwrap();
        emit_report(&report, &out).unwrap();
        bytes.push(std::fs::read(out.join("metrics.csv")).unwrap());
    }
    let identical = bytes[0] == bytes[1];
    verdict(
        8,
        "identical config and seed reproduce metrics.csv byte for byte",
        &[(
            format!(
                "two runs, {} vs {} bytes, identical: {identical}",
                bytes[0].len(),
                bytes[1].len()
            ),
            identical,
        )],
    );
}
