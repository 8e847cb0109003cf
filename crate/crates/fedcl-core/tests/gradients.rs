//! Finite-difference verification of every analytic gradient path: the
//! curriculum batch loss, the plain cross-entropy + proximal composite, the
//! head-only distillation term, and the generator objective.
//!
//! Central differences with h = 1e-5 on f64; relative error below 1e-4 with
//! the denominator floored at 1e-3 so near-zero coordinates are judged on an
//! absolute scale well above the truncation noise.

use fedcl_core::curriculum::CurriculumConfig;
use fedcl_core::data::Dataset;
use fedcl_core::distill::{self, LabelPrior};
use fedcl_core::nn::{self, BaseLoss, GeneratorParams, LossSpec, ModelParams, ProxTerm};
use fedcl_core::rng;
use fedcl_core::sync::GlobalPool;

use rand::Rng;

const H: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
}

fn perturbed_model(params: &ModelParams, coord: usize, delta: f64) -> ModelParams {
    let mut flat = params.to_flat();
    flat[coord] += delta;
    let mut out = params.clone();
    out.assign_from_flat(&flat).unwrap();
    out
}

fn perturbed_generator(gen: &GeneratorParams, coord: usize, delta: f64) -> GeneratorParams {
    let mut flat = gen.to_flat();
    flat[coord] += delta;
    let mut out = gen.clone();
    let mut off = 0;
    for l in &mut out.layers {
        let wn = l.weights.len();
        l.weights.copy_from_slice(&flat[off..off + wn]);
        off += wn;
        let bn = l.bias.len();
        l.bias.copy_from_slice(&flat[off..off + bn]);
        off += bn;
    }
    out
}

fn random_dataset(rng: &mut rand_chacha::ChaCha8Rng, n: usize, dim: usize, classes: usize) -> Dataset {
    let features: Vec<f64> = (0..n * dim).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
    Dataset::new(features, labels, dim, classes).unwrap()
}

fn check_model_loss_gradient<F>(params: &ModelParams, loss_fn: F, analytic: &[f64], what: &str)
where
    F: Fn(&ModelParams) -> f64,
{
    assert_eq!(analytic.len(), params.flat_len());
    for coord in 0..params.flat_len() {
        let plus = loss_fn(&perturbed_model(params, coord, H));
        let minus = loss_fn(&perturbed_model(params, coord, -H));
        let numeric = (plus - minus) / (2.0 * H);
        let err = rel_err(analytic[coord], numeric);
        assert!(
            err < REL_TOL,
            "{what}: coord {coord} analytic {} vs numeric {} (rel {err})",
            analytic[coord],
            numeric
        );
    }
}

#[test]
fn curriculum_batch_loss_gradient() {
    for instance in 0..10u64 {
        let mut rng = rng::stream(100 + instance, "gradcheck", 0, 0);
        let classes = rng.random_range(2..5);
        let dims = [rng.random_range(2..5), rng.random_range(3..7), 4, classes];
        let params = nn::init_classifier(&dims, 2, 1000 + instance).unwrap();
        let data = random_dataset(&mut rng, 8, dims[0], classes);
        let indices: Vec<usize> = (0..8).collect();
        let cfg = CurriculumConfig::new(rng.random::<f64>() * 3.0, 0.2 + rng.random::<f64>()).unwrap();
        let spec = LossSpec::curriculum(&cfg);
        let (_, grads) = nn::backward(&params, &data, &indices, &spec).unwrap();
        check_model_loss_gradient(
            &params,
            |p| nn::batch_loss(p, &data, &indices, &spec).unwrap(),
            &grads.to_flat(),
            "curriculum",
        );
    }
}

#[test]
fn proximal_composite_gradient() {
    for instance in 0..10u64 {
        let mut rng = rng::stream(200 + instance, "gradcheck", 0, 0);
        let classes = rng.random_range(2..4);
        let dims = [3, 5, 4, classes];
        let params = nn::init_classifier(&dims, 2, 2000 + instance).unwrap();
        let anchor = nn::init_classifier(&dims, 2, 3000 + instance).unwrap();
        let data = random_dataset(&mut rng, 6, dims[0], classes);
        let indices: Vec<usize> = (0..6).collect();
        let mu = 0.05 + rng.random::<f64>() * 0.5;
        let spec = LossSpec {
            base: BaseLoss::PlainCe,
            prox: Some(ProxTerm { mu, anchor: &anchor }),
        };
        let (_, grads) = nn::backward(&params, &data, &indices, &spec).unwrap();
        check_model_loss_gradient(
            &params,
            |p| nn::batch_loss(p, &data, &indices, &spec).unwrap(),
            &grads.to_flat(),
            "prox",
        );
    }
}

#[test]
fn distillation_term_gradient_head_only() {
    for instance in 0..10u64 {
        let mut rng = rng::stream(300 + instance, "gradcheck", 0, 0);
        let classes = rng.random_range(2..4);
        let latent = 3;
        let params = nn::init_classifier(&[4, 5, latent, classes], 2, 4000 + instance).unwrap();
        let gen = nn::init_generator(classes, 3, &[6], latent, 5000 + instance).unwrap();
        let pool = GlobalPool::uniform_init(20);
        let prior = LabelPrior::uniform(classes);
        let mut brng = rng::stream(6000 + instance, "distill", 0, 0);
        let batch = distill::sample_distill_batch(&gen, &prior, &pool, 6, &mut brng).unwrap();
        let cfg = CurriculumConfig::new(rng.random::<f64>() * 2.0, 0.3 + rng.random::<f64>()).unwrap();
        let (_, grads) = distill::distillation_term(&params, &batch, Some(&cfg)).unwrap();
        let flat = grads.to_flat();
        check_model_loss_gradient(
            &params,
            |p| distill::distillation_term(p, &batch, Some(&cfg)).unwrap().0,
            &flat,
            "distillation",
        );
        // Structural: the feature-extractor block of the gradient is zero.
        let head_offset: usize = params.layers[..params.split_index]
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum();
        assert!(flat[..head_offset].iter().all(|&g| g == 0.0));
    }
}

#[test]
fn generator_objective_gradient() {
    for instance in 0..10u64 {
        let mut rng = rng::stream(400 + instance, "gradcheck", 0, 0);
        let classes = 2;
        let latent = 3;
        let heads: Vec<ModelParams> = (0..2)
            .map(|s| nn::init_classifier(&[3, 4, latent, classes], 2, 7000 + instance * 10 + s).unwrap())
            .collect();
        let head_refs: Vec<&ModelParams> = heads.iter().collect();
        let gen = nn::init_generator(classes, 3, &[5], latent, 8000 + instance).unwrap();
        let pool = GlobalPool::uniform_init(15);
        let prior = LabelPrior::uniform(classes);
        let cfg = CurriculumConfig::new(rng.random::<f64>(), 0.4 + rng.random::<f64>()).unwrap();
        let seed = 9000 + instance;
        let (_, grads) =
            distill::generator_loss(&gen, &head_refs, &prior, &pool, 8, Some(&cfg), seed).unwrap();
        let analytic = grads.to_flat();
        for coord in 0..gen.flat_len() {
            let plus = distill::generator_loss(
                &perturbed_generator(&gen, coord, H),
                &head_refs,
                &prior,
                &pool,
                8,
                Some(&cfg),
                seed,
            )
            .unwrap()
            .0;
            let minus = distill::generator_loss(
                &perturbed_generator(&gen, coord, -H),
                &head_refs,
                &prior,
                &pool,
                8,
                Some(&cfg),
                seed,
            )
            .unwrap()
            .0;
            let numeric = (plus - minus) / (2.0 * H);
            let err = rel_err(analytic[coord], numeric);
            assert!(
                err < REL_TOL,
                "generator: coord {coord} analytic {} vs numeric {} (rel {err})",
                analytic[coord],
                numeric
            );
        }
    }
}

#[test]
fn full_local_objective_is_sum_of_term_gradients() {
    // Linearity: local curriculum gradient plus distillation gradient equals
    // the gradient of the summed objective.
    let mut rng = rng::stream(55, "gradcheck", 0, 0);
    let classes = 3;
    let latent = 4;
    let params = nn::init_classifier(&[4, 6, latent, classes], 2, 1).unwrap();
    let data = random_dataset(&mut rng, 10, 4, classes);
    let indices: Vec<usize> = (0..10).collect();
    let cfg = CurriculumConfig::new(1.0, 0.5).unwrap();
    let gen = nn::init_generator(classes, 4, &[8], latent, 2).unwrap();
    let pool = GlobalPool::uniform_init(12);
    let mut brng = rng::stream(77, "distill", 0, 0);
    let batch = distill::sample_distill_batch(&gen, &LabelPrior::uniform(classes), &pool, 6, &mut brng)
        .unwrap();

    let spec = LossSpec::curriculum(&cfg);
    let (_, local) = nn::backward(&params, &data, &indices, &spec).unwrap();
    let (_, dist) = distill::distillation_term(&params, &batch, Some(&cfg)).unwrap();
    let mut combined = local.clone();
    combined.add_scaled(&dist, 1.0).unwrap();

    check_model_loss_gradient(
        &params,
        |p| {
            nn::batch_loss(p, &data, &indices, &spec).unwrap()
                + distill::distillation_term(p, &batch, Some(&cfg)).unwrap().0
        },
        &combined.to_flat(),
        "combined objective",
    );
}
