//! Property tests for the core invariants.

use fedcl_core::curriculum::{self, CurriculumConfig};
use fedcl_core::data;
use fedcl_core::distill::LabelPrior;
use fedcl_core::federation::{Broadcast, ClientReport};
use fedcl_core::gmm;
use fedcl_core::nn;
use fedcl_core::rng;
use fedcl_core::sync::{self, GlobalPool};
use fedcl_core::wire;

use proptest::prelude::*;

fn cl_at(base: f64, sigma: f64, cfg: &CurriculumConfig) -> f64 {
    (base - cfg.tau) * sigma + cfg.lambda * sigma.ln().powi(2)
}

proptest! {
    // The closed-form confidence minimizes the curriculum loss over its
    // codomain (0, e] for every base loss, and over (0, 10] whenever the
    // sample is at or above the threshold (below it the objective is
    // unbounded in sigma, so no global minimizer exists there).
    #[test]
    fn curriculum_argmin_dominance(
        base in -30.0..30.0f64,
        tau in -5.0..15.0f64,
        lambda in 0.05..3.0f64,
        sigmas in proptest::collection::vec(1e-6..1.0f64, 1..40),
    ) {
        let cfg = CurriculumConfig::new(tau, lambda).unwrap();
        let (loss, conf) = curriculum::cl_loss(base, &cfg);
        prop_assert!(conf > 0.0 && conf <= core::f64::consts::E + 1e-9);
        for u in &sigmas {
            let sigma_e = u * core::f64::consts::E;
            prop_assert!(loss <= cl_at(base, sigma_e, &cfg) + 1e-9,
                "dominance failed at sigma {sigma_e}");
            if base >= tau {
                let sigma_10 = u * 10.0;
                prop_assert!(loss <= cl_at(base, sigma_10, &cfg) + 1e-9,
                    "dominance failed at sigma {sigma_10}");
            }
        }
        // Never worse than the unweighted loss.
        prop_assert!(loss <= (base - tau) + 1e-12);
    }

    #[test]
    fn confidence_monotone_nonincreasing(
        a in -20.0..20.0f64,
        delta in 0.0..20.0f64,
        tau in -5.0..15.0f64,
        lambda in 0.05..3.0f64,
    ) {
        let cfg = CurriculumConfig::new(tau, lambda).unwrap();
        let lo = curriculum::optimal_confidence(a, &cfg);
        let hi = curriculum::optimal_confidence(a + delta, &cfg);
        prop_assert!(hi <= lo + 1e-12);
    }

    #[test]
    fn difficulty_score_monotone_in_base_loss(
        a in -20.0..20.0f64,
        delta in 0.0..20.0f64,
        conf in 0.01..3.0f64,
        tau in -5.0..15.0f64,
    ) {
        let cfg = CurriculumConfig::new(tau, 0.5).unwrap();
        let lo = curriculum::difficulty_score(a, conf, &cfg);
        let hi = curriculum::difficulty_score(a + delta, conf, &cfg);
        prop_assert!(hi >= lo);
    }

    #[test]
    fn softmax_is_a_simplex(logits in proptest::collection::vec(-40.0..40.0f64, 2..12)) {
        let probs = nn::softmax(&logits);
        let sum: f64 = probs.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9);
        prop_assert!(probs.iter().all(|&p| p > 0.0));
    }

    #[test]
    fn threshold_lookup_matches_sort_index_oracle(
        values in proptest::collection::vec(-100.0..100.0f64, 1..200),
        t in 1e-6..0.999_999f64,
    ) {
        let pool = GlobalPool::from_draws(vec![values.clone()]).unwrap();
        let got = sync::threshold_lookup(&pool, t).unwrap();
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let idx = ((t * n as f64).ceil() as usize).clamp(1, n);
        prop_assert_eq!(got.to_bits(), sorted[idx - 1].to_bits());
    }

    #[test]
    fn freeze_decision_matches_count_oracle(
        samples in proptest::collection::vec(-10.0..10.0f64, 1..100),
        threshold in -10.0..10.0f64,
        v in 0.01..0.99f64,
    ) {
        let got = sync::freeze_decision(&samples, threshold, v);
        let count = samples.iter().filter(|&&x| x <= threshold).count();
        prop_assert_eq!(got, count as f64 > v * samples.len() as f64);
    }

    #[test]
    fn partition_laws(
        classes in 2..5usize,
        per_class in 5..30usize,
        clients in 1..6usize,
        alpha in 0.05..5.0f64,
        seed in 0..1000u64,
    ) {
        let data = data::make_blobs(classes, per_class, 3, 1.0, seed).unwrap();
        let p = data::dirichlet_partition(&data, clients, alpha, seed).unwrap();
        let mut seen = vec![false; data.len()];
        for idx in &p.client_indices {
            prop_assert!(!idx.is_empty());
            for &i in idx {
                prop_assert!(!seen[i]);
                seen[i] = true;
            }
        }
        prop_assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn em_weights_sum_to_one_and_trace_monotone(
        seed in 0..500u64,
        n in 10..120usize,
        l in 1..4usize,
    ) {
        let mut r = rng::stream(seed, "prop-em", 0, 0);
        let scores: Vec<f64> = (0..n)
            .map(|i| rng::standard_normal(&mut r) * 1.5 + if i % 3 == 0 { 5.0 } else { 0.0 })
            .collect();
        let fit = gmm::fit_em(&scores, l, seed, 60, 1e-9).unwrap();
        let wsum: f64 = fit.gmm.components.iter().map(|c| c.weight).sum();
        prop_assert!((wsum - 1.0).abs() < 1e-9);
        prop_assert!(fit.gmm.components.iter().all(|c| c.variance >= gmm::VARIANCE_FLOOR));
        for w in fit.ll_trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-9);
        }
    }

    #[test]
    fn forward_passes_are_pure(seed in 0..200u64) {
        let params = nn::init_classifier(&[4, 6, 3], 1, seed).unwrap();
        let x = [0.3, -0.8, 0.1, 0.9];
        let a = nn::forward_classifier(&params, &x).unwrap();
        let b = nn::forward_classifier(&params, &x).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn report_wire_roundtrip(
        seed in 0..300u64,
        classes in 2..5usize,
        with_gmm in proptest::bool::ANY,
    ) {
        let params = nn::init_classifier(&[3, 4, classes], 1, seed).unwrap();
        let gmm = with_gmm.then(|| {
            gmm::fit_em(&[0.1, 0.5, 0.9, 1.4, 2.0], 2, seed, 20, 1e-7).unwrap().gmm
        });
        let report = ClientReport {
            client_id: seed as usize,
            params,
            gmm,
            label_counter: (0..classes as u64).collect(),
            local_steps_run: 20,
            mean_local_loss: seed as f64 * 0.25,
        };
        let back = wire::decode_client_report(&wire::encode_client_report(&report)).unwrap();
        prop_assert_eq!(back, report);
    }

    #[test]
    fn broadcast_wire_roundtrip(seed in 0..300u64, with_gen in proptest::bool::ANY) {
        let bcast = Broadcast {
            round: seed,
            state_index: (seed % 3) as usize,
            model: nn::init_classifier(&[3, 5, 4, 2], 2, seed).unwrap(),
            generator: with_gen.then(|| nn::init_generator(2, 3, &[6], 4, seed).unwrap()),
            label_prior: LabelPrior::uniform(2),
            pool: GlobalPool::uniform_init(5 + (seed as usize % 20)),
            threshold: seed as f64 * 0.01,
        };
        let back = wire::decode_broadcast(&wire::encode_broadcast(&bcast)).unwrap();
        prop_assert_eq!(back, bcast);
    }
}

#[test]
fn entropy_ordering_across_alpha() {
    // Lower concentration must yield more skewed (lower-entropy) clients.
    let mut wins = 0;
    for seed in 0..10u64 {
        let data = data::make_blobs(8, 60, 3, 1.0, seed).unwrap();
        let skewed = data::dirichlet_partition(&data, 8, 0.05, seed).unwrap();
        let uniform = data::dirichlet_partition(&data, 8, 10.0, seed).unwrap();
        if data::mean_label_entropy(&data, &skewed) < data::mean_label_entropy(&data, &uniform) {
            wins += 1;
        }
    }
    assert!(wins >= 9, "entropy ordering held in only {wins}/10 seeds");
}
