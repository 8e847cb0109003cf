//! Transcendental functions routed through `libm`.
//!
//! The crate is `no_std`, so the std float methods are unavailable; more
//! importantly, `libm` is a pure-Rust port with identical results on every
//! platform, which keeps seeded runs bit-reproducible across hosts.

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}

#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

#[inline]
pub fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

#[inline]
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

#[inline]
pub fn round(x: f64) -> f64 {
    libm::round(x)
}

/// x².
#[inline]
pub fn sq(x: f64) -> f64 {
    x * x
}
