//! Data-free knowledge channel between server and clients.
//!
//! Server side: a conditional generator maps (one-hot label, difficulty
//! conditioner, noise) to a latent feature and is trained so the *ensemble*
//! of client predictor heads classifies its output as the conditioning label
//! (heads stay frozen; only generator parameters receive gradient).
//!
//! Client side: each client augments its local objective with the curriculum
//! loss of its own head on generated latents whose labels are drawn from the
//! aggregated label prior. Gradient from this term flows only through the
//! head; the feature extractor never sees generated data.
//!
//! The difficulty conditioner for each generated sample is one draw from the
//! global pool, min-max normalized by the pool's range into `[0, 1]` before
//! being fed to the generator.

use crate::curriculum::{self, CurriculumConfig};
use crate::error::{Error, Result};
use crate::nn::{
    self, backward_layers, forward_layers, GeneratorParams, Gradients, ModelParams, OptimizerState,
};
use crate::rng;
use crate::sync::{self, GlobalPool};

use alloc::vec::Vec;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Aggregated label counts and the induced sampling distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelPrior {
    counts: Vec<u64>,
    probabilities: Vec<f64>,
}

impl LabelPrior {
    /// Uniform prior over `num_classes` labels (zero observed counts).
    pub fn uniform(num_classes: usize) -> LabelPrior {
        LabelPrior {
            counts: alloc::vec![0; num_classes],
            probabilities: alloc::vec![1.0 / num_classes as f64; num_classes],
        }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn num_classes(&self) -> usize {
        self.probabilities.len()
    }

    /// One label draw.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.random();
        let mut cum = 0.0;
        for (y, p) in self.probabilities.iter().enumerate() {
            cum += p;
            if u < cum {
                return y;
            }
        }
        self.probabilities.len() - 1
    }
}

/// Sums per-client label counters and normalizes. Errors when nothing has
/// been observed.
pub fn update_label_prior(counters: &[Vec<u64>]) -> Result<LabelPrior> {
    if counters.is_empty() {
        return Err(Error::Empty("label counters"));
    }
    let classes = counters[0].len();
    let mut counts = alloc::vec![0u64; classes];
    for c in counters {
        if c.len() != classes {
            return Err(Error::Shape {
                context: "label counter",
                expected: classes,
                actual: c.len(),
            });
        }
        for (dst, &v) in counts.iter_mut().zip(c.iter()) {
            *dst += v;
        }
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::Empty("label counts (no data observed)"));
    }
    let probabilities = counts.iter().map(|&c| c as f64 / total as f64).collect();
    Ok(LabelPrior {
        counts,
        probabilities,
    })
}

/// Mean of the per-head logits on `z`, in fixed head order.
pub fn ensemble_logits(heads: &[&ModelParams], z: &[f64]) -> Result<Vec<f64>> {
    if heads.is_empty() {
        return Err(Error::Empty("ensemble heads"));
    }
    let mut mean: Vec<f64> = alloc::vec![0.0; heads[0].num_classes()];
    for h in heads {
        let (logits, _) = nn::forward_head(h, z)?;
        if logits.len() != mean.len() {
            return Err(Error::Shape {
                context: "ensemble logits",
                expected: mean.len(),
                actual: logits.len(),
            });
        }
        for (m, l) in mean.iter_mut().zip(logits.iter()) {
            *m += l;
        }
    }
    let k = heads.len() as f64;
    for m in &mut mean {
        *m /= k;
    }
    Ok(mean)
}

/// One batch of generated training material.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillBatch {
    /// Labels drawn from the label prior.
    pub labels: Vec<usize>,
    /// Raw difficulty conditioners as drawn from the pool (pre-normalization).
    pub conditioners: Vec<f64>,
    /// Noise vectors.
    pub noises: Vec<Vec<f64>>,
    /// Generated latent features.
    pub latents: Vec<Vec<f64>>,
}

impl DistillBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Min-max normalization of a pool draw into `[0, 1]`. Degenerate pools map
/// to 0.5.
pub fn normalize_conditioner(pool: &GlobalPool, raw: f64) -> f64 {
    let range = pool.max() - pool.min();
    if range <= 0.0 {
        0.5
    } else {
        (raw - pool.min()) / range
    }
}

/// Samples labels, conditioners, and noises, and runs the generator on each
/// triple. Draw order per sample is fixed: label, conditioner, noise.
pub fn sample_distill_batch(
    gen: &GeneratorParams,
    prior: &LabelPrior,
    pool: &GlobalPool,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<DistillBatch> {
    if batch_size == 0 {
        return Err(Error::Empty("distill batch"));
    }
    let mut labels = Vec::with_capacity(batch_size);
    let mut conditioners = Vec::with_capacity(batch_size);
    let mut noises = Vec::with_capacity(batch_size);
    let mut latents = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let y = prior.sample(rng);
        let raw = sync::draw_global_sample(pool, rng)?;
        let eps = rng::normal_vec(rng, gen.noise_dim);
        let z = nn::forward_generator(gen, y, normalize_conditioner(pool, raw), &eps)?;
        labels.push(y);
        conditioners.push(raw);
        noises.push(eps);
        latents.push(z);
    }
    Ok(DistillBatch {
        labels,
        conditioners,
        noises,
        latents,
    })
}

fn curriculum_loss_and_scale(ce: f64, cfg: Option<&CurriculumConfig>) -> (f64, f64) {
    match cfg {
        Some(cfg) => {
            let (loss, sigma) = curriculum::cl_loss(ce, cfg);
            (loss, sigma)
        }
        None => (ce, 1.0),
    }
}

/// Knowledge-extraction objective: the batch-mean curriculum loss of the
/// head-ensemble prediction on generated latents, differentiated with respect
/// to generator parameters only. Returns `(loss, gradient)`.
///
/// With `cl_cfg == None` the raw cross-entropy is used instead of the
/// curriculum loss (curriculum disabled).
pub fn generator_loss(
    gen: &GeneratorParams,
    heads: &[&ModelParams],
    prior: &LabelPrior,
    pool: &GlobalPool,
    batch_size: usize,
    cl_cfg: Option<&CurriculumConfig>,
    seed: u64,
) -> Result<(f64, Gradients)> {
    if heads.is_empty() {
        return Err(Error::Empty("ensemble heads"));
    }
    if prior.probabilities().iter().all(|&p| p == 0.0) {
        return Err(Error::Empty("degenerate label prior"));
    }
    let mut rng = rng::stream(seed, "generator-batch", 0, 0);
    let batch = sample_distill_batch(gen, prior, pool, batch_size, &mut rng)?;

    let b = batch.len() as f64;
    let k = heads.len() as f64;
    let mut grads = Gradients::zeros(&gen.layers);
    let mut total = 0.0;

    for i in 0..batch.len() {
        let y = batch.labels[i];
        let beta = normalize_conditioner(pool, batch.conditioners[i]);
        let input = nn::generator_input(gen, y, beta, &batch.noises[i])?;
        let gen_acts = forward_layers(&gen.layers, &input, true);
        let z = gen_acts.last().unwrap();

        // Ensemble forward, keeping every head's trace for the latent grad.
        let head_traces: Vec<Vec<Vec<f64>>> = heads
            .iter()
            .map(|h| forward_layers(h.head_layers(), z, false))
            .collect();
        let classes = heads[0].num_classes();
        let mut mean_logits = alloc::vec![0.0; classes];
        for trace in &head_traces {
            let logits = trace.last().unwrap();
            if logits.len() != classes {
                return Err(Error::Shape {
                    context: "ensemble logits",
                    expected: classes,
                    actual: logits.len(),
                });
            }
            for (m, l) in mean_logits.iter_mut().zip(logits.iter()) {
                *m += l;
            }
        }
        for m in &mut mean_logits {
            *m /= k;
        }

        let (ce, probs) = nn::cross_entropy_from_logits(&mean_logits, y)?;
        let (loss, scale) = curriculum_loss_and_scale(ce, cl_cfg);
        total += loss;

        let mut dmean = probs;
        dmean[y] -= 1.0;
        for d in &mut dmean {
            *d *= scale / b;
        }
        // d(mean)/d(head_k logits) = 1/K; heads are constants here, so only
        // the latent gradient is collected.
        let mut dz = alloc::vec![0.0; z.len()];
        for (h, trace) in heads.iter().zip(head_traces.iter()) {
            let dhead: Vec<f64> = dmean.iter().map(|d| d / k).collect();
            let dz_k = backward_layers(h.head_layers(), z, trace, dhead, false, None);
            for (a, bk) in dz.iter_mut().zip(dz_k.iter()) {
                *a += bk;
            }
        }
        backward_layers(&gen.layers, &input, &gen_acts, dz, true, Some(&mut grads.layers));
    }

    let loss = total / b;
    grads.loss = loss;
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::NonFinite {
            context: "generator loss",
            sample: None,
        });
    }
    Ok((loss, grads))
}

/// Runs `steps` optimizer updates of the generator against the given heads.
/// Returns the loss trajectory (one entry per step).
pub fn train_generator(
    gen: &mut GeneratorParams,
    heads: &[&ModelParams],
    prior: &LabelPrior,
    pool: &GlobalPool,
    steps: usize,
    opt: &mut OptimizerState,
    batch_size: usize,
    cl_cfg: Option<&CurriculumConfig>,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut trajectory = Vec::with_capacity(steps);
    for step_idx in 0..steps {
        let step_seed = rng::seed64(seed, "generator-step", step_idx as u64, 0);
        let (loss, grads) =
            generator_loss(gen, heads, prior, pool, batch_size, cl_cfg, step_seed)
                .map_err(|e| e.with_context(alloc::format!("generator step {step_idx}")))?;
        nn::step(&mut gen.layers, &grads, opt)?;
        trajectory.push(loss);
    }
    Ok(trajectory)
}

/// Knowledge-distillation term on the client: curriculum loss of the client's
/// own head on the generated latents. Gradient flows only through head
/// layers; the feature-extractor portion of the returned gradient is exactly
/// zero.
pub fn distillation_term(
    client_params: &ModelParams,
    batch: &DistillBatch,
    cl_cfg: Option<&CurriculumConfig>,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::Empty("distill batch"));
    }
    let latent_dim = client_params.latent_dim();
    let split = client_params.split_index;
    let b = batch.len() as f64;
    let mut grads = Gradients::zeros(&client_params.layers);
    let mut total = 0.0;

    for i in 0..batch.len() {
        let z = &batch.latents[i];
        if z.len() != latent_dim {
            return Err(Error::Shape {
                context: "distill latent",
                expected: latent_dim,
                actual: z.len(),
            });
        }
        let y = batch.labels[i];
        let head = client_params.head_layers();
        let acts = forward_layers(head, z, false);
        let (ce, probs) = nn::cross_entropy_from_logits(acts.last().unwrap(), y)?;
        let (loss, scale) = curriculum_loss_and_scale(ce, cl_cfg);
        total += loss;
        let mut dlogits = probs;
        dlogits[y] -= 1.0;
        for d in &mut dlogits {
            *d *= scale / b;
        }
        backward_layers(head, z, &acts, dlogits, false, Some(&mut grads.layers[split..]));
    }

    let loss = total / b;
    grads.loss = loss;
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math;
    use crate::nn::Layer;
    use alloc::vec;

    fn head_only_model(latent: usize, classes: usize, seed: u64) -> ModelParams {
        // Two feature layers plus one head layer; only the head matters for
        // these tests.
        nn::init_classifier(&[3, 4, latent, classes], 2, seed).unwrap()
    }

    #[test]
    fn prior_sums_and_symmetry() {
        let p = update_label_prior(&[vec![1, 1]]).unwrap();
        assert_eq!(p.probabilities(), &[0.5, 0.5]);
        let p = update_label_prior(&[vec![10, 0], vec![0, 10]]).unwrap();
        assert_eq!(p.probabilities(), &[0.5, 0.5]);
        assert!(update_label_prior(&[vec![0, 0]]).is_err());
    }

    #[test]
    fn prior_matches_sum_normalize_oracle() {
        let counters = vec![vec![3u64, 7, 0], vec![2, 1, 9], vec![0, 0, 4]];
        let p = update_label_prior(&counters).unwrap();
        let mut sums = [0u64; 3];
        for c in &counters {
            for (i, &v) in c.iter().enumerate() {
                sums[i] += v;
            }
        }
        let total: u64 = sums.iter().sum();
        for (i, &s) in sums.iter().enumerate() {
            assert!(math::abs(p.probabilities()[i] - s as f64 / total as f64) < 1e-12);
        }
        let psum: f64 = p.probabilities().iter().sum();
        assert!(math::abs(psum - 1.0) < 1e-12);
    }

    #[test]
    fn singleton_ensemble_is_identity() {
        let m = head_only_model(5, 3, 1);
        let z = [0.1, -0.2, 0.3, 0.0, 0.5];
        let (logits, _) = nn::forward_head(&m, &z).unwrap();
        let ens = ensemble_logits(&[&m], &z).unwrap();
        for (a, b) in ens.iter().zip(logits.iter()) {
            assert!(math::abs(a - b) < 1e-15);
        }
    }

    #[test]
    fn opposite_heads_cancel() {
        let mut a = head_only_model(4, 2, 2);
        let mut b = a.clone();
        // Force single-layer heads to be exact negations.
        let split = a.split_index;
        for (dst, src) in b.layers[split].weights.iter_mut().zip(a.layers[split].weights.iter()) {
            *dst = -src;
        }
        for (dst, src) in b.layers[split].bias.iter_mut().zip(a.layers[split].bias.iter()) {
            *dst = -src;
        }
        let _ = &mut a;
        let z = [0.4, -0.6, 0.2, 0.9];
        let ens = ensemble_logits(&[&a, &b], &z).unwrap();
        for v in &ens {
            assert!(math::abs(*v) < 1e-15);
        }
    }

    #[test]
    fn ensemble_matches_mean_oracle() {
        let models: Vec<ModelParams> = (0..3).map(|s| head_only_model(4, 3, 40 + s)).collect();
        let refs: Vec<&ModelParams> = models.iter().collect();
        let z = [0.3, 0.1, -0.7, 0.2];
        let ens = ensemble_logits(&refs, &z).unwrap();
        let mut mean = vec![0.0; 3];
        for m in &models {
            let (logits, _) = nn::forward_head(m, &z).unwrap();
            for (dst, l) in mean.iter_mut().zip(logits.iter()) {
                *dst += l / 3.0;
            }
        }
        for (a, b) in ens.iter().zip(mean.iter()) {
            assert!(math::abs(a - b) < 1e-12);
        }
    }

    #[test]
    fn ensemble_permutation_invariant() {
        let models: Vec<ModelParams> = (0..4).map(|s| head_only_model(4, 3, 50 + s)).collect();
        let z = [0.3, 0.1, -0.7, 0.2];
        let fwd: Vec<&ModelParams> = models.iter().collect();
        let rev: Vec<&ModelParams> = models.iter().rev().collect();
        let a = ensemble_logits(&fwd, &z).unwrap();
        let b = ensemble_logits(&rev, &z).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!(math::abs(x - y) < 1e-12);
        }
    }

    #[test]
    fn distill_batch_is_seeded_and_members_of_pool() {
        let gen = nn::init_generator(3, 4, &[6], 5, 8).unwrap();
        let prior = LabelPrior::uniform(3);
        let pool = GlobalPool::uniform_init(50);
        let mut r1 = rng::stream(3, "distill", 1, 2);
        let mut r2 = rng::stream(3, "distill", 1, 2);
        let a = sample_distill_batch(&gen, &prior, &pool, 16, &mut r1).unwrap();
        let b = sample_distill_batch(&gen, &prior, &pool, 16, &mut r2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.labels.len(), 16);
        assert_eq!(a.conditioners.len(), 16);
        assert_eq!(a.noises.len(), 16);
        assert_eq!(a.latents.len(), 16);
        for c in &a.conditioners {
            assert!(pool.sorted().contains(c));
        }
    }

    #[test]
    fn generator_loss_zero_at_curriculum_threshold() {
        // Zero head weights: uniform probs independent of z, so ce = ln(C)
        // for every sample and nothing depends on the generator output.
        let mut m = head_only_model(5, 4, 3);
        let split = m.split_index;
        for w in &mut m.layers[split].weights {
            *w = 0.0;
        }
        for b in &mut m.layers[split].bias {
            *b = 0.0;
        }
        let gen = nn::init_generator(4, 3, &[6], 5, 9).unwrap();
        let prior = LabelPrior::uniform(4);
        let pool = GlobalPool::uniform_init(20);
        let cfg = CurriculumConfig::new(math::ln(4.0), 0.5).unwrap();
        let (loss, grads) =
            generator_loss(&gen, &[&m], &prior, &pool, 8, Some(&cfg), 77).unwrap();
        assert!(math::abs(loss) < 1e-12);
        for l in &grads.layers {
            assert!(l.d_weights.iter().all(|&g| g == 0.0));
            assert!(l.d_bias.iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn generator_loss_deterministic_per_seed() {
        let heads: Vec<ModelParams> = (0..2).map(|s| head_only_model(5, 3, 60 + s)).collect();
        let refs: Vec<&ModelParams> = heads.iter().collect();
        let gen = nn::init_generator(3, 4, &[8], 5, 10).unwrap();
        let prior = LabelPrior::uniform(3);
        let pool = GlobalPool::uniform_init(30);
        let cfg = CurriculumConfig::default();
        let (l1, _) = generator_loss(&gen, &refs, &prior, &pool, 12, Some(&cfg), 5).unwrap();
        let (l2, _) = generator_loss(&gen, &refs, &prior, &pool, 12, Some(&cfg), 5).unwrap();
        let (l3, _) = generator_loss(&gen, &refs, &prior, &pool, 12, Some(&cfg), 6).unwrap();
        assert_eq!(l1.to_bits(), l2.to_bits());
        assert_ne!(l1.to_bits(), l3.to_bits());
    }

    #[test]
    fn train_generator_zero_steps_is_identity() {
        let heads = [head_only_model(5, 3, 70)];
        let refs: Vec<&ModelParams> = heads.iter().collect();
        let mut gen = nn::init_generator(3, 4, &[8], 5, 11).unwrap();
        let before = gen.clone();
        let mut opt = OptimizerState::adam(1e-4, gen.flat_len()).unwrap();
        let pool = GlobalPool::uniform_init(30);
        let traj = train_generator(
            &mut gen,
            &refs,
            &LabelPrior::uniform(3),
            &pool,
            0,
            &mut opt,
            16,
            None,
            1,
        )
        .unwrap();
        assert!(traj.is_empty());
        assert_eq!(gen, before);
    }

    #[test]
    fn generator_training_descends_on_fixed_heads() {
        let heads: Vec<ModelParams> = (0..2).map(|s| head_only_model(6, 2, 80 + s)).collect();
        let refs: Vec<&ModelParams> = heads.iter().collect();
        let pool = GlobalPool::uniform_init(40);
        let prior = LabelPrior::uniform(2);
        let mut wins = 0;
        for seed in 0..3u64 {
            let mut gen = nn::init_generator(2, 4, &[16], 6, 100 + seed).unwrap();
            let mut opt = OptimizerState::adam(1e-2, gen.flat_len()).unwrap();
            let traj = train_generator(
                &mut gen, &refs, &prior, &pool, 200, &mut opt, 32, None, seed,
            )
            .unwrap();
            let head_mean: f64 = traj[..10].iter().sum::<f64>() / 10.0;
            let tail_mean: f64 = traj[traj.len() - 10..].iter().sum::<f64>() / 10.0;
            if tail_mean <= head_mean {
                wins += 1;
            }
        }
        assert!(wins >= 2, "loss failed to descend in {} of 3 seeds", 3 - wins);
    }

    #[test]
    fn distillation_gradient_stays_in_head() {
        let m = head_only_model(5, 3, 90);
        let gen = nn::init_generator(3, 4, &[8], 5, 12).unwrap();
        let pool = GlobalPool::uniform_init(25);
        let mut rng = rng::stream(1, "distill", 0, 0);
        let batch =
            sample_distill_batch(&gen, &LabelPrior::uniform(3), &pool, 10, &mut rng).unwrap();
        let cfg = CurriculumConfig::default();
        let (loss, grads) = distillation_term(&m, &batch, Some(&cfg)).unwrap();
        assert!(loss.is_finite());
        for l in &grads.layers[..m.split_index] {
            assert!(l.d_weights.iter().all(|&g| g == 0.0));
            assert!(l.d_bias.iter().all(|&g| g == 0.0));
        }
        let head_nonzero = grads.layers[m.split_index..]
            .iter()
            .any(|l| l.d_weights.iter().any(|&g| g != 0.0));
        assert!(head_nonzero);
    }

    #[test]
    fn distillation_zero_at_threshold() {
        // Uniform head output with tau = ln(C) zeroes the curriculum loss.
        let mut m = head_only_model(4, 2, 91);
        let split = m.split_index;
        m.layers[split] = Layer::zeros(4, 2).unwrap();
        let batch = DistillBatch {
            labels: vec![0, 1],
            conditioners: vec![0.2, 0.8],
            noises: vec![vec![0.0; 2]; 2],
            latents: vec![vec![0.1, 0.2, 0.3, 0.4], vec![-0.1, 0.0, 0.2, 0.5]],
        };
        let cfg = CurriculumConfig::new(math::ln(2.0), 0.5).unwrap();
        let (loss, _) = distillation_term(&m, &batch, Some(&cfg)).unwrap();
        assert!(math::abs(loss) < 1e-12);
    }
}
