//! One-dimensional Gaussian mixtures fitted by EM.
//!
//! Each client summarizes its difficulty-score distribution as mixture
//! parameters `(weight, mean, variance)` per component; only those parameters
//! travel to the server, never the raw scores. The server later draws from the
//! uploaded mixtures to rebuild an empirical global difficulty pool.
//!
//! The E-step works in log space (log-sum-exp) and the M-step floors every
//! variance at [`VARIANCE_FLOOR`] so duplicated scores cannot produce singular
//! components. The per-iteration log-likelihood is recorded and checked to be
//! nondecreasing in debug builds.

use crate::error::{Error, Result};
use crate::math;
use crate::rng;

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Smallest variance a fitted component may carry.
pub const VARIANCE_FLOOR: f64 = 1e-6;

const LN_2PI: f64 = 1.8378770664093453;

/// One mixture component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

/// A 1-D Gaussian mixture: weights sum to 1, variances are floored.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmParams {
    pub components: Vec<GmmComponent>,
}

impl GmmParams {
    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::Empty("gmm components"));
        }
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if math::abs(total - 1.0) > 1e-9 {
            return Err(Error::InvalidConfig("gmm weights must sum to 1".into()));
        }
        for c in &self.components {
            if !(c.weight >= 0.0) || !c.mean.is_finite() || !(c.variance >= VARIANCE_FLOOR) {
                return Err(Error::InvalidConfig("invalid gmm component".into()));
            }
        }
        Ok(())
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }
}

/// Result of an EM fit.
#[derive(Debug, Clone, PartialEq)]
pub struct EmFit {
    pub gmm: GmmParams,
    pub log_likelihood: f64,
    pub iterations: usize,
    /// True when the requested component count exceeded the sample count and
    /// was reduced to it.
    pub components_reduced: bool,
    /// Log-likelihood after each E-step, in iteration order.
    pub ll_trace: Vec<f64>,
}

fn log_gauss(x: f64, mean: f64, variance: f64) -> f64 {
    -0.5 * (LN_2PI + math::ln(variance)) - math::sq(x - mean) / (2.0 * variance)
}

/// Log-likelihood of `scores` under `gmm`.
pub fn log_likelihood(gmm: &GmmParams, scores: &[f64]) -> f64 {
    let mut total = 0.0;
    for &x in scores {
        let mut m = f64::NEG_INFINITY;
        let terms: Vec<f64> = gmm
            .components
            .iter()
            .map(|c| {
                let t = if c.weight > 0.0 {
                    math::ln(c.weight) + log_gauss(x, c.mean, c.variance)
                } else {
                    f64::NEG_INFINITY
                };
                m = m.max(t);
                t
            })
            .collect();
        let sum: f64 = terms.iter().map(|&t| math::exp(t - m)).sum();
        total += m + math::ln(sum);
    }
    total
}

/// Fits an `L`-component mixture to `scores` by EM.
///
/// Initialization: component means at seeded random quantiles of the data,
/// uniform weights, variances set to the (floored) data variance. Terminates
/// at `max_iters` or when the log-likelihood improves by less than `tol`.
/// If `scores.len() < components` the component count is reduced and the fit
/// is flagged.
pub fn fit_em(
    scores: &[f64],
    components: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<EmFit> {
    if scores.is_empty() {
        return Err(Error::Empty("gmm fit scores"));
    }
    if components == 0 {
        return Err(Error::InvalidConfig("gmm needs at least one component".into()));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "gmm fit scores",
            sample: scores.iter().position(|v| !v.is_finite()),
        });
    }
    let n = scores.len();
    let components_reduced = components > n;
    let l = components.min(n);

    let mean: f64 = scores.iter().sum::<f64>() / n as f64;
    let var: f64 = scores.iter().map(|&x| math::sq(x - mean)).sum::<f64>() / n as f64;
    let var = var.max(VARIANCE_FLOOR);

    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);

    let mut rng = rng::stream(seed, "gmm-init", 0, 0);
    let mut comps: Vec<GmmComponent> = (0..l)
        .map(|_| {
            let q: f64 = rng.random();
            let idx = ((q * (n - 1) as f64) as usize).min(n - 1);
            GmmComponent {
                weight: 1.0 / l as f64,
                mean: sorted[idx],
                variance: var,
            }
        })
        .collect();

    let mut resp = vec![0.0f64; n * l];
    let mut prev_ll = f64::NEG_INFINITY;
    let mut ll = prev_ll;
    let mut iterations = 0;
    let mut ll_trace = Vec::new();

    for iter in 0..max_iters {
        iterations = iter + 1;
        // E-step (log space).
        ll = 0.0;
        for (i, &x) in scores.iter().enumerate() {
            let mut m = f64::NEG_INFINITY;
            for (k, c) in comps.iter().enumerate() {
                let t = if c.weight > 0.0 {
                    math::ln(c.weight) + log_gauss(x, c.mean, c.variance)
                } else {
                    f64::NEG_INFINITY
                };
                resp[i * l + k] = t;
                m = m.max(t);
            }
            let mut total = 0.0;
            for k in 0..l {
                let e = math::exp(resp[i * l + k] - m);
                resp[i * l + k] = e;
                total += e;
            }
            for k in 0..l {
                resp[i * l + k] /= total;
            }
            ll += m + math::ln(total);
        }
        ll_trace.push(ll);
        debug_assert!(
            iter == 0 || ll >= prev_ll - 1e-9,
            "EM log-likelihood decreased: {prev_ll} -> {ll}"
        );
        if iter > 0 && ll - prev_ll < tol {
            prev_ll = ll;
            break;
        }
        prev_ll = ll;

        // M-step.
        for k in 0..l {
            let mass: f64 = (0..n).map(|i| resp[i * l + k]).sum();
            if mass < 1e-12 {
                // Component lost every point; its parameters no longer affect
                // the likelihood, so leave them and zero the weight.
                comps[k].weight = 0.0;
                continue;
            }
            let mu: f64 = (0..n).map(|i| resp[i * l + k] * scores[i]).sum::<f64>() / mass;
            let v: f64 =
                (0..n).map(|i| resp[i * l + k] * math::sq(scores[i] - mu)).sum::<f64>() / mass;
            comps[k].weight = mass / n as f64;
            comps[k].mean = mu;
            comps[k].variance = v.max(VARIANCE_FLOOR);
        }
        // Renormalize against drift from dropped components.
        let wsum: f64 = comps.iter().map(|c| c.weight).sum();
        for c in &mut comps {
            c.weight /= wsum;
        }
    }

    let gmm = GmmParams { components: comps };
    gmm.validate()?;
    Ok(EmFit {
        gmm,
        log_likelihood: ll.max(prev_ll),
        iterations,
        components_reduced,
        ll_trace,
    })
}

/// Mixture density at `x`.
pub fn pdf(gmm: &GmmParams, x: f64) -> f64 {
    gmm.components
        .iter()
        .map(|c| {
            if c.weight > 0.0 {
                c.weight * math::exp(log_gauss(x, c.mean, c.variance))
            } else {
                0.0
            }
        })
        .sum()
}

/// Draws one value: weight-proportional component choice, then a Gaussian
/// draw.
pub fn sample_one(gmm: &GmmParams, rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut chosen = gmm.components.len() - 1;
    for (k, c) in gmm.components.iter().enumerate() {
        cum += c.weight;
        if u < cum {
            chosen = k;
            break;
        }
    }
    let c = &gmm.components[chosen];
    c.mean + math::sqrt(c.variance) * rng::standard_normal(rng)
}

/// `count` seeded draws from the mixture.
pub fn sample(gmm: &GmmParams, count: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng::stream(seed, "gmm-sample", 0, 0);
    (0..count).map(|_| sample_one(gmm, &mut rng)).collect()
}
