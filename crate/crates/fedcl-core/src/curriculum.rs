//! Confidence-weighted curriculum loss.
//!
//! Each sample's base loss `l` is turned into a curriculum loss
//!
//! ```text
//! cl(l, sigma) = (l - tau) * sigma + lambda * ln(sigma)^2
//! ```
//!
//! where `tau` splits easy (`l < tau`) from hard (`l > tau`) samples and
//! `sigma > 0` is a per-sample confidence. The confidence is not learned; it
//! is set to the stationary minimizer of `cl` in closed form,
//! `sigma* = exp(-W((l - tau) / (2 lambda)))` with `W` the principal Lambert-W
//! branch. Hard samples get `sigma* < 1` (down-weighted), easy samples
//! `sigma* in (1, e]`. The Lambert-W argument is clamped at `-1/e`, the edge
//! of the principal branch, so `sigma*` saturates at `e` for very easy
//! samples.
//!
//! The product `(l - tau) * sigma*` is the *difficulty score* — the quantity
//! whose per-client distribution is later encoded as a Gaussian mixture. Note
//! the naming collision inherited from the problem statement: the confidence
//! `sigma` here is unrelated to the Gaussian variances in [`crate::gmm`].
//!
//! Because `sigma*` is a stationary point, the derivative of the minimized
//! loss with respect to `l` is exactly `sigma*` (envelope argument), so
//! training code treats `sigma*` as a constant within a step and still gets
//! the exact total derivative.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::math;
use crate::nn::{self, ModelParams};

use alloc::vec::Vec;

/// `1/e`, the lower edge of the principal Lambert-W domain.
const NEG_INV_E: f64 = -0.36787944117144233;

/// Curriculum hyperparameters: loss threshold `tau` and regularizer weight
/// `lambda`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurriculumConfig {
    pub tau: f64,
    pub lambda: f64,
}

impl CurriculumConfig {
    pub fn new(tau: f64, lambda: f64) -> Result<Self> {
        if !tau.is_finite() {
            return Err(Error::InvalidConfig("curriculum.tau must be finite".into()));
        }
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidConfig(
                "curriculum.lambda must be positive and finite".into(),
            ));
        }
        Ok(CurriculumConfig { tau, lambda })
    }
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        CurriculumConfig {
            tau: 10.0,
            lambda: 0.5,
        }
    }
}

/// Per-sample curriculum quantities, bundled for reporting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleDifficulty {
    pub base_loss: f64,
    pub confidence: f64,
    pub difficulty_score: f64,
    pub cl_loss: f64,
}

/// Principal branch of the Lambert-W function (`W(x) e^{W(x)} = x`).
///
/// Halley iteration from a regime-dependent initial guess; arguments below
/// `-1/e + 1e-12` are clamped to that value. Terminates when the step falls
/// below `1e-12` or after 80 iterations (near the branch point the residual
/// is cancellation-limited, so the iteration cap is load-bearing there).
pub fn lambert_w0(x: f64) -> f64 {
    let x = x.max(NEG_INV_E + 1e-12);
    if x == 0.0 {
        return 0.0;
    }
    let mut w = if x < -0.25 {
        // Series around the branch point x = -1/e.
        let p = math::sqrt(2.0 * (core::f64::consts::E * x + 1.0));
        -1.0 + p - p * p / 3.0 + 11.0 * p * p * p / 72.0
    } else if x < 3.0 {
        math::ln(1.0 + x)
    } else {
        let l = math::ln(x);
        l - math::ln(l)
    };
    for _ in 0..80 {
        let ew = math::exp(w);
        let f = w * ew - x;
        let denom = ew * (w + 1.0) - (w + 2.0) * f / (2.0 * w + 2.0);
        if denom == 0.0 {
            break;
        }
        let delta = f / denom;
        w -= delta;
        if math::abs(delta) < 1e-12 {
            break;
        }
    }
    w
}

/// Closed-form confidence minimizing the curriculum loss for `base_loss`.
///
/// `sigma* = exp(-W(arg))` with `arg = (base_loss - tau) / (2 lambda)` clamped
/// at `-1/e`. Always positive; at most `e`; exactly 1 when `base_loss == tau`.
pub fn optimal_confidence(base_loss: f64, cfg: &CurriculumConfig) -> f64 {
    let arg = (base_loss - cfg.tau) / (2.0 * cfg.lambda);
    math::exp(-lambert_w0(arg))
}

/// `(base_loss - tau) * confidence`.
pub fn difficulty_score(base_loss: f64, confidence: f64, cfg: &CurriculumConfig) -> f64 {
    (base_loss - cfg.tau) * confidence
}

/// Curriculum loss at the optimal confidence. Returns `(loss, confidence)`.
pub fn cl_loss(base_loss: f64, cfg: &CurriculumConfig) -> (f64, f64) {
    let sigma = optimal_confidence(base_loss, cfg);
    let loss = difficulty_score(base_loss, sigma, cfg) + cfg.lambda * math::sq(math::ln(sigma));
    (loss, sigma)
}

/// Full per-sample record for `base_loss`.
pub fn sample_difficulty(base_loss: f64, cfg: &CurriculumConfig) -> SampleDifficulty {
    let (loss, confidence) = cl_loss(base_loss, cfg);
    SampleDifficulty {
        base_loss,
        confidence,
        difficulty_score: difficulty_score(base_loss, confidence, cfg),
        cl_loss: loss,
    }
}

/// Mean curriculum loss of `params` over `data`, plus the per-sample
/// difficulty scores (the inputs to mixture fitting).
pub fn empirical_cl_risk(
    params: &ModelParams,
    data: &Dataset,
    cfg: &CurriculumConfig,
) -> Result<(f64, Vec<f64>)> {
    if data.len() == 0 {
        return Err(Error::Empty("empirical_cl_risk dataset"));
    }
    let ce = nn::per_sample_ce(params, data)?;
    let mut total = 0.0;
    let mut scores = Vec::with_capacity(ce.len());
    for &l in &ce {
        let d = sample_difficulty(l, cfg);
        total += d.cl_loss;
        scores.push(d.difficulty_score);
    }
    Ok((total / ce.len() as f64, scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn cl_at(base_loss: f64, sigma: f64, cfg: &CurriculumConfig) -> f64 {
        (base_loss - cfg.tau) * sigma + cfg.lambda * math::sq(math::ln(sigma))
    }

    #[test]
    fn lambert_w_known_values() {
        assert_eq!(lambert_w0(0.0), 0.0);
        // Omega constant.
        assert!(math::abs(lambert_w0(1.0) - 0.567_143_290_409_783_8) < 1e-12);
        assert!(math::abs(lambert_w0(core::f64::consts::E) - 1.0) < 1e-12);
    }

    #[test]
    fn lambert_w_inverts_w_exp_w() {
        let mut x = -0.36;
        while x < 50.0 {
            let w = lambert_w0(x);
            assert!(
                math::abs(w * math::exp(w) - x) < 1e-9 * (1.0 + math::abs(x)),
                "residual too large at x={x}"
            );
            x += 0.37;
        }
    }

    #[test]
    fn confidence_is_one_at_threshold() {
        let cfg = CurriculumConfig::default();
        assert_eq!(optimal_confidence(cfg.tau, &cfg), 1.0);
        let (loss, sigma) = cl_loss(cfg.tau, &cfg);
        assert_eq!(loss, 0.0);
        assert_eq!(sigma, 1.0);
    }

    #[test]
    fn confidence_is_stationary_local_minimum() {
        let cfg = CurriculumConfig {
            tau: 10.0,
            lambda: 0.5,
        };
        // Hard side and mildly-easy side both have an interior stationary min.
        for base in [15.0, 12.0, 10.1, 9.9] {
            let sigma = optimal_confidence(base, &cfg);
            let here = cl_at(base, sigma, &cfg);
            for d in [1e-4, 1e-3] {
                assert!(here <= cl_at(base, sigma + d, &cfg) + 1e-12);
                assert!(here <= cl_at(base, sigma - d, &cfg) + 1e-12);
            }
        }
    }

    #[test]
    fn easy_samples_saturate_at_e() {
        let cfg = CurriculumConfig {
            tau: 10.0,
            lambda: 0.5,
        };
        // tau - 5 is far below the branch-point boundary tau - 2*lambda/e.
        let sigma = optimal_confidence(5.0, &cfg);
        assert!(sigma > 1.0);
        assert!(sigma <= core::f64::consts::E + 1e-9);
        assert!(math::abs(sigma - core::f64::consts::E) < 1e-4);
    }

    #[test]
    fn confidence_nonincreasing_in_base_loss() {
        let cfg = CurriculumConfig {
            tau: 3.0,
            lambda: 0.7,
        };
        let mut prev = f64::INFINITY;
        let mut base = -10.0;
        while base < 30.0 {
            let s = optimal_confidence(base, &cfg);
            assert!(s <= prev + 1e-12, "confidence rose at base={base}");
            prev = s;
            base += 0.05;
        }
    }

    #[test]
    fn cl_dominates_unit_confidence() {
        let cfg = CurriculumConfig {
            tau: 2.0,
            lambda: 0.5,
        };
        let mut base = -20.0;
        while base < 40.0 {
            let (loss, _) = cl_loss(base, &cfg);
            assert!(loss <= (base - cfg.tau) + 1e-12, "base={base}");
            base += 0.11;
        }
    }

    #[test]
    fn difficulty_score_arithmetic() {
        let cfg = CurriculumConfig {
            tau: 10.0,
            lambda: 0.5,
        };
        assert_eq!(difficulty_score(12.0, 0.5, &cfg), 1.0);
        assert_eq!(difficulty_score(cfg.tau, 3.3, &cfg), 0.0);
        assert_eq!(difficulty_score(11.0, 1.0, &cfg), 1.0);
    }

    #[test]
    fn risk_is_mean_of_per_sample_losses() {
        let cfg = CurriculumConfig {
            tau: 1.0,
            lambda: 0.5,
        };
        let params = nn::init_classifier(&[3, 4, 2], 1, 11).unwrap();
        let data = Dataset::new(
            vec![0.1, -0.2, 0.3, 0.9, 0.4, -0.5, 0.0, 0.2, 0.7],
            vec![0, 1, 0],
            3,
            2,
        )
        .unwrap();
        let (risk, scores) = empirical_cl_risk(&params, &data, &cfg).unwrap();
        let ce = nn::per_sample_ce(&params, &data).unwrap();
        let mut acc = 0.0;
        for (i, &l) in ce.iter().enumerate() {
            let d = sample_difficulty(l, &cfg);
            assert!(math::abs(scores[i] - d.difficulty_score) < 1e-15);
            acc += d.cl_loss;
        }
        assert!(math::abs(risk - acc / 3.0) < 1e-12);
    }
}
