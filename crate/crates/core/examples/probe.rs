use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use windkd::data::{make_windows, split_train_test, FrameScalers, WindowSpec};
use windkd::evaluate::rmse;
use windkd::nn::AdamConfig;
use windkd::recurrent::{predict_set, train_network, BiLstmNet, TrainSpec, TurbineNet};
use windkd::synth::{gen_with, SynthConfig};

fn train_eval(
    cfg: &SynthConfig,
    label: &str,
    epochs: usize,
    with_nwp: bool,
    lags: usize,
    horizon: usize,
    only: &[&str],
) {
    let ds = gen_with(cfg.clone()).unwrap();
    let park_hourly = ds.park.to_hourly().unwrap();
    let mut line = format!("{label} nwp={with_nwp} lags={lags} h={horizon}:");
    for raw in &ds.turbines {
        if !only.is_empty() && !only.contains(&raw.name.as_str()) {
            continue;
        }
        let hourly = raw.to_hourly().unwrap();
        let frame = if with_nwp {
            hourly.with_park_nwp(&park_hourly).unwrap()
        } else {
            hourly
        };
        let (train, test) = split_train_test(&frame, 0.65).unwrap();
        let window = WindowSpec::new(lags, horizon).unwrap();
        let scalers = FrameScalers::fit(&train).unwrap();
        let strain = scalers.apply(&train);
        let stest = scalers.apply(&test);
        let train_set = make_windows(&strain, window, with_nwp, &scalers).unwrap();
        let test_set = make_windows(&stest, window, with_nwp, &scalers).unwrap();
        let (tr, va) = train_set.split_tail(0.1).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut net = TurbineNet::Bi(BiLstmNet::new(if with_nwp { 3 } else { 2 }, 0.0, &mut rng));
        let spec = TrainSpec {
            adam: AdamConfig { lr: 3e-3, ..AdamConfig::default() },
            batch_size: 32,
            max_epochs: epochs,
            patience: 25,
            seed: 7,
            ..TrainSpec::default()
        };
        train_network(&mut net, &tr, Some(&va), &spec).unwrap();
        let preds = predict_set(&net, &test_set);
        let r = rmse(&test_set.targets, &preds).unwrap();
        line.push_str(&format!(" {}={:.3}", raw.name, r));
    }
    println!("{line}");
}

fn main() {
    let epochs: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(120);

    let mk = |period: f64, amp: f64, diurnal: f64, turb_scale: f64, noise: f64| {
        let mut c = SynthConfig {
            seed: 42,
            duration_days: 365,
            ..SynthConfig::default()
        };
        c.weather.synoptic_period_h = period;
        c.weather.synoptic_amp = amp;
        c.weather.diurnal_amp = diurnal;
        c.weather.noise_std = noise;
        for t in &mut c.terrains {
            t.turbulence_std *= turb_scale;
        }
        c.nwp_noise_std = 0.2;
        c
    };

    let b5 = mk(288.0, 5.0, 2.6, 0.45, 0.016);
    for h in [6, 12] {
        for nwp in [true, false] {
            train_eval(&b5, "B5", epochs, nwp, 24, h, &[]);
        }
    }
}
