//! Built-in smoke checks behind `fedcl selftest`: a fast subset of the
//! property suites, suitable for sanity-checking a build in a few seconds.

use fedcl_core::curriculum::{self, CurriculumConfig};
use fedcl_core::data;
use fedcl_core::distill::LabelPrior;
use fedcl_core::federation::{Broadcast, ClientReport};
use fedcl_core::gmm;
use fedcl_core::nn::{self, LossSpec};
use fedcl_core::rng;
use fedcl_core::sync::{self, GlobalPool};
use fedcl_core::wire;
use rand::Rng;

use crate::config::AppConfig;
use crate::metrics;
use crate::runner;

type Check = (&'static str, fn() -> Result<(), String>);

fn lambert_w_inverts() -> Result<(), String> {
    let mut x = -0.36;
    while x < 40.0 {
        let w = curriculum::lambert_w0(x);
        let residual = (w * w.exp() - x).abs();
        if residual > 1e-8 * (1.0 + x.abs()) {
            return Err(format!("residual {residual} at x = {x}"));
        }
        x += 0.17;
    }
    Ok(())
}

fn confidence_matches_grid() -> Result<(), String> {
    let mut rng = rng::stream(42, "selftest-grid", 0, 0);
    for _ in 0..50 {
        let tau = rng.random::<f64>() * 10.0;
        let lambda = 0.2 + rng.random::<f64>() * 1.5;
        // Stay inside the regime where the stationary point is the global
        // minimizer over the grid range.
        let base = tau - 0.6 * lambda + rng.random::<f64>() * 12.0;
        let cfg = CurriculumConfig::new(tau, lambda).map_err(|e| e.to_string())?;
        let sigma = curriculum::optimal_confidence(base, &cfg);
        let eval = |s: f64| (base - tau) * s + lambda * s.ln().powi(2);
        let mut best = (f64::INFINITY, 0.0);
        let mut s = 1e-4;
        while s <= 10.0 {
            let v = eval(s);
            if v < best.0 {
                best = (v, s);
            }
            s += 1e-3;
        }
        if (sigma - best.1).abs() > 2e-3 {
            return Err(format!(
                "sigma {sigma} vs grid {} (base {base}, tau {tau}, lambda {lambda})",
                best.1
            ));
        }
    }
    Ok(())
}

fn em_monotone() -> Result<(), String> {
    for seed in 0..5u64 {
        let mut r = rng::stream(seed, "selftest-em", 0, 0);
        let scores: Vec<f64> = (0..150)
            .map(|i| rng::standard_normal(&mut r) + if i % 2 == 0 { 0.0 } else { 6.0 })
            .collect();
        let fit = gmm::fit_em(&scores, 2, seed, 80, 1e-9).map_err(|e| e.to_string())?;
        for w in fit.ll_trace.windows(2) {
            if w[1] < w[0] - 1e-9 {
                return Err(format!("log-likelihood fell: {} -> {}", w[0], w[1]));
            }
        }
    }
    Ok(())
}

fn sync_oracles() -> Result<(), String> {
    let mut r = rng::stream(7, "selftest-sync", 0, 0);
    for _ in 0..200 {
        let n = r.random_range(1..150);
        let values: Vec<f64> = (0..n).map(|_| r.random::<f64>() * 30.0 - 10.0).collect();
        let pool = GlobalPool::from_draws(vec![values.clone()]).map_err(|e| e.to_string())?;
        let t = 1e-6 + r.random::<f64>() * 0.999;
        let got = sync::threshold_lookup(&pool, t).map_err(|e| e.to_string())?;
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        let idx = ((t * n as f64).ceil() as usize).clamp(1, n);
        if got != sorted[idx - 1] {
            return Err(format!("threshold mismatch at t = {t}"));
        }
        let thr = r.random::<f64>() * 30.0 - 10.0;
        let v = 0.01 + r.random::<f64>() * 0.98;
        let want = values.iter().filter(|&&x| x <= thr).count() as f64 > v * n as f64;
        if sync::freeze_decision(&values, thr, v) != want {
            return Err("freeze decision mismatch".into());
        }
    }
    Ok(())
}

fn gradient_spot_check() -> Result<(), String> {
    let cfg = CurriculumConfig::new(1.0, 0.5).map_err(|e| e.to_string())?;
    let params = nn::init_classifier(&[3, 5, 4, 2], 2, 5).map_err(|e| e.to_string())?;
    let data = data::make_blobs(2, 4, 3, 1.0, 9).map_err(|e| e.to_string())?;
    let indices: Vec<usize> = (0..8).collect();
    let spec = LossSpec::curriculum(&cfg);
    let (_, grads) = nn::backward(&params, &data, &indices, &spec).map_err(|e| e.to_string())?;
    let flat = grads.to_flat();
    let h = 1e-5;
    for coord in (0..params.flat_len()).step_by(7) {
        let eval = |delta: f64| {
            let mut f = params.to_flat();
            f[coord] += delta;
            let mut p = params.clone();
            p.assign_from_flat(&f).unwrap();
            nn::batch_loss(&p, &data, &indices, &spec).unwrap()
        };
        let numeric = (eval(h) - eval(-h)) / (2.0 * h);
        let err = (flat[coord] - numeric).abs() / flat[coord].abs().max(numeric.abs()).max(1e-3);
        if err > 1e-4 {
            return Err(format!("gradient mismatch at coord {coord}: rel {err}"));
        }
    }
    Ok(())
}

fn checkpoint_roundtrip() -> Result<(), String> {
    let report = ClientReport {
        client_id: 3,
        params: nn::init_classifier(&[4, 6, 3], 1, 2).map_err(|e| e.to_string())?,
        gmm: None,
        label_counter: vec![1, 2, 3],
        local_steps_run: 20,
        mean_local_loss: 0.75,
    };
    let back = wire::decode_client_report(&wire::encode_client_report(&report))
        .map_err(|e| e.to_string())?;
    if back != report {
        return Err("client report did not round-trip".into());
    }
    let bcast = Broadcast {
        round: 4,
        state_index: 1,
        model: nn::init_classifier(&[4, 6, 3], 1, 8).map_err(|e| e.to_string())?,
        generator: Some(nn::init_generator(3, 4, &[8], 6, 5).map_err(|e| e.to_string())?),
        label_prior: LabelPrior::uniform(3),
        pool: GlobalPool::uniform_init(12),
        threshold: 0.25,
    };
    let back = wire::decode_broadcast(&wire::encode_broadcast(&bcast)).map_err(|e| e.to_string())?;
    if back != bcast {
        return Err("broadcast did not round-trip".into());
    }
    Ok(())
}

fn mini_run_determinism() -> Result<(), String> {
    let mut cfg = AppConfig::default();
    cfg.apply_text(
        "rounds = 3\nclients.total = 4\nlocal.steps = 2\nlocal.batch_size = 4\n\
         data.blob_classes = 3\ndata.blob_per_class = 24\ndata.blob_test_per_class = 8\n\
         data.blob_dim = 4\ngmm.samples_per_client = 25\ngenerator.batch_size = 8\n\
         generator.steps_per_round = 1\ngenerator.noise_dim = 4\ngenerator.hidden = 8\n\
         distill.batch_size = 4\nmodel.hidden = 8,6\n",
        "selftest",
    )
    .map_err(|e| e.to_string())?;
    let a = runner::run_experiment(&cfg).map_err(|e| e.to_string())?;
    let b = runner::run_experiment(&cfg).map_err(|e| e.to_string())?;
    let ca = metrics::csv_string(&a.history).map_err(|e| e.to_string())?;
    let cb = metrics::csv_string(&b.history).map_err(|e| e.to_string())?;
    if ca != cb {
        return Err("identical configs produced different metrics".into());
    }
    Ok(())
}

/// Runs every check, printing one status line each. Returns true when all
/// pass.
pub fn run_all() -> bool {
    let checks: &[Check] = &[
        ("lambert-w inversion", lambert_w_inverts),
        ("confidence grid search", confidence_matches_grid),
        ("em monotonicity", em_monotone),
        ("pool/freeze oracles", sync_oracles),
        ("gradient spot check", gradient_spot_check),
        ("checkpoint roundtrip", checkpoint_roundtrip),
        ("mini-run determinism", mini_run_determinism),
    ];
    let mut ok = true;
    for (name, check) in checks {
        match check() {
            Ok(()) => println!("[PASS] {name}"),
            Err(msg) => {
                println!("[FAIL] {name}: {msg}");
                ok = false;
            }
        }
    }
    ok
}
