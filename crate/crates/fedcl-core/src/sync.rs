//! Global difficulty pool and the freeze/unfreeze training-state machine.
//!
//! The server draws a fixed number of samples from every client's uploaded
//! mixture, pools and sorts them ([`GlobalPool`]) — an empirical stand-in for
//! the global difficulty distribution. A quantile level from the configured
//! schedule is turned into a concrete difficulty threshold by
//! [`threshold_lookup`]; a client whose fresh mixture draws fall below that
//! threshold in more than fraction `v` of cases is frozen (it stops training
//! until everyone has caught up). When every client is frozen the state
//! machine advances to the next schedule level and unfreezes all clients.
//!
//! Schedule levels are traversed in the order given; the default
//! `[0.3, 0.6, 0.9]` walks from the easy mass toward the hard mass.

use crate::error::{Error, Result};
use crate::gmm::{self, GmmParams};
use crate::math;
use crate::rng;

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Sorted pool of difficulty samples drawn from all client mixtures.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalPool {
    sorted: Vec<f64>,
    per_client_counts: Vec<usize>,
}

impl GlobalPool {
    /// Builds a pool directly from already-drawn per-client sample lists.
    pub fn from_draws(draws: Vec<Vec<f64>>) -> Result<GlobalPool> {
        if draws.is_empty() || draws.iter().all(|d| d.is_empty()) {
            return Err(Error::Empty("global pool"));
        }
        let per_client_counts: Vec<usize> = draws.iter().map(Vec::len).collect();
        let mut sorted: Vec<f64> = draws.into_iter().flatten().collect();
        sorted.sort_by(f64::total_cmp);
        Ok(GlobalPool {
            sorted,
            per_client_counts,
        })
    }

    /// Evenly spaced pool on `[0, 1]` — the uninformed initial distribution
    /// used before any client has reported a mixture.
    pub fn uniform_init(count: usize) -> GlobalPool {
        let count = count.max(1);
        let sorted = if count == 1 {
            vec![0.5]
        } else {
            (0..count)
                .map(|i| i as f64 / (count - 1) as f64)
                .collect()
        };
        GlobalPool {
            sorted,
            per_client_counts: vec![count],
        }
    }

    pub fn total(&self) -> usize {
        self.sorted.len()
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    pub fn per_client_counts(&self) -> &[usize] {
        &self.per_client_counts
    }

    pub fn min(&self) -> f64 {
        self.sorted[0]
    }

    pub fn max(&self) -> f64 {
        *self.sorted.last().unwrap()
    }
}

/// Draws `per_client_count` samples from each mixture and pools them sorted.
/// Each client uses its own derived stream, so the result is independent of
/// iteration interleaving.
pub fn build_global_pool(
    gmms: &[&GmmParams],
    per_client_count: usize,
    seed: u64,
) -> Result<GlobalPool> {
    if gmms.is_empty() {
        return Err(Error::Empty("global pool gmm list"));
    }
    if per_client_count == 0 {
        return Err(Error::InvalidConfig("per-client pool count must be >= 1".into()));
    }
    let draws: Vec<Vec<f64>> = gmms
        .iter()
        .enumerate()
        .map(|(k, g)| gmm::sample(g, per_client_count, rng::seed64(seed, "pool-client", k as u64, 0)))
        .collect();
    GlobalPool::from_draws(draws)
}

/// The difficulty value at quantile level `t`: the `ceil(t * N)`-th element
/// (1-indexed, clamped to `[1, N]`) of the sorted pool.
pub fn threshold_lookup(pool: &GlobalPool, t: f64) -> Result<f64> {
    if pool.total() == 0 {
        return Err(Error::Empty("global pool"));
    }
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::InvalidConfig("quantile level must lie in (0, 1)".into()));
    }
    let n = pool.total();
    let idx = math::ceil(t * n as f64) as usize;
    let idx = idx.clamp(1, n);
    Ok(pool.sorted[idx - 1])
}

/// One uniform draw from the pool (uniform index into the sorted list).
pub fn draw_global_sample(pool: &GlobalPool, rng: &mut ChaCha8Rng) -> Result<f64> {
    if pool.total() == 0 {
        return Err(Error::Empty("global pool"));
    }
    let r = rng.random_range(0..pool.total());
    Ok(pool.sorted[r])
}

/// True when strictly more than `v * N_k` of the client's samples sit at or
/// below the threshold.
pub fn freeze_decision(client_samples: &[f64], beta_threshold: f64, v: f64) -> bool {
    let below = client_samples.iter().filter(|&&x| x <= beta_threshold).count();
    below as f64 > v * client_samples.len() as f64
}

/// Outcome of advancing the training state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdvanceOutcome {
    /// Moved to the next schedule level; all clients unfrozen.
    Advanced,
    /// The schedule is exhausted; training is complete.
    Completed,
}

/// The multi-phase synchronization state: schedule position, frozen set, and
/// the current difficulty threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncState {
    schedule: Vec<f64>,
    state_index: usize,
    frozen: Vec<bool>,
    temperature_v: f64,
    current_threshold: f64,
    completed: bool,
}

impl SyncState {
    pub fn new(schedule: Vec<f64>, num_clients: usize, temperature_v: f64) -> Result<SyncState> {
        if schedule.is_empty() {
            return Err(Error::InvalidConfig("schedule must be nonempty".into()));
        }
        if schedule.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            return Err(Error::InvalidConfig(
                "schedule levels must lie strictly in (0, 1)".into(),
            ));
        }
        if !(temperature_v > 0.0 && temperature_v < 1.0) {
            return Err(Error::InvalidConfig(
                "temperature must lie strictly in (0, 1)".into(),
            ));
        }
        if num_clients == 0 {
            return Err(Error::InvalidConfig("state machine needs clients".into()));
        }
        Ok(SyncState {
            schedule,
            state_index: 0,
            frozen: vec![false; num_clients],
            temperature_v,
            current_threshold: f64::NAN,
            completed: false,
        })
    }

    pub fn num_clients(&self) -> usize {
        self.frozen.len()
    }

    pub fn state_index(&self) -> usize {
        self.state_index
    }

    pub fn schedule(&self) -> &[f64] {
        &self.schedule
    }

    /// Current schedule level `T_z`.
    pub fn current_level(&self) -> f64 {
        self.schedule[self.state_index]
    }

    pub fn temperature(&self) -> f64 {
        self.temperature_v
    }

    pub fn current_threshold(&self) -> f64 {
        self.current_threshold
    }

    pub fn is_completed(&self) -> bool {
        self.completed
    }

    pub fn is_frozen(&self, client: usize) -> bool {
        self.frozen[client]
    }

    pub fn frozen_count(&self) -> usize {
        self.frozen.iter().filter(|&&f| f).count()
    }

    pub fn all_frozen(&self) -> bool {
        self.frozen.iter().all(|&f| f)
    }

    /// Ascending ids of unfrozen clients.
    pub fn live_clients(&self) -> Vec<usize> {
        self.frozen
            .iter()
            .enumerate()
            .filter(|(_, &f)| !f)
            .map(|(k, _)| k)
            .collect()
    }

    /// Ascending ids of frozen clients.
    pub fn frozen_clients(&self) -> Vec<usize> {
        self.frozen
            .iter()
            .enumerate()
            .filter(|(_, &f)| f)
            .map(|(k, _)| k)
            .collect()
    }

    /// Marks a client frozen. Freezing is monotone within a state: there is
    /// no unfreeze short of [`SyncState::advance`].
    pub fn freeze(&mut self, client: usize) {
        self.frozen[client] = true;
    }

    /// Recomputes the current threshold from `pool` at the current level.
    pub fn refresh_threshold(&mut self, pool: &GlobalPool) -> Result<()> {
        self.current_threshold = threshold_lookup(pool, self.current_level())?;
        Ok(())
    }

    /// Advances to the next schedule level. Requires every client frozen.
    pub fn advance(&mut self, pool: &GlobalPool) -> Result<AdvanceOutcome> {
        if !self.all_frozen() {
            return Err(Error::Protocol(
                "advance requires every client frozen",
            ));
        }
        self.force_advance(pool)
    }

    /// Advances regardless of the frozen set; used when a round cap forces
    /// progress through a stalled state.
    pub fn force_advance(&mut self, pool: &GlobalPool) -> Result<AdvanceOutcome> {
        for f in &mut self.frozen {
            *f = false;
        }
        if self.state_index + 1 >= self.schedule.len() {
            self.completed = true;
            return Ok(AdvanceOutcome::Completed);
        }
        self.state_index += 1;
        self.refresh_threshold(pool)?;
        Ok(AdvanceOutcome::Advanced)
    }
}
