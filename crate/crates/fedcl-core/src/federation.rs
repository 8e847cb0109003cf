//! Round-based federated training orchestrator.
//!
//! One server loop drives all three algorithms:
//!
//! * `fedcl` — curriculum-weighted local objectives plus the generated-latent
//!   distillation term, per-client difficulty mixtures, the global difficulty
//!   pool, and the freeze/unfreeze schedule;
//! * `fedavg` — the same loop with curriculum, generator, and
//!   synchronization disabled;
//! * `fedprox` — `fedavg` plus a proximal penalty toward the broadcast model.
//!
//! Every round the server samples an active subset of the live clients,
//! broadcasts the global model (plus generator, label prior, and difficulty
//! pool), collects reports, and averages *all* `K` parameter vectors — live
//! clients contribute fresh parameters, everyone else their most recent
//! report (initially the starting model). Frozen clients therefore keep
//! influencing the aggregate without training.
//!
//! Determinism: every random draw comes from a stream derived from the master
//! seed and a purpose tag (see [`crate::rng`]), so a configuration and seed
//! fully determine the metrics history, regardless of client execution order
//! or parallelism.

use crate::curriculum::{self, CurriculumConfig};
use crate::data::{Dataset, Partition};
use crate::distill::{self, LabelPrior};
use crate::error::{Error, Result};
use crate::gmm::{self, GmmParams};
use crate::nn::{
    self, BaseLoss, GeneratorParams, LossSpec, ModelParams, OptimizerState, ProxTerm,
};
use crate::rng;
use crate::sync::{self, AdvanceOutcome, GlobalPool, SyncState};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

/// Which training algorithm a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    FedCl,
    FedAvg,
    FedProx,
}

impl Algorithm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::FedCl => "fedcl",
            Algorithm::FedAvg => "fedavg",
            Algorithm::FedProx => "fedprox",
        }
    }

    pub fn parse(s: &str) -> Option<Algorithm> {
        match s {
            "fedcl" => Some(Algorithm::FedCl),
            "fedavg" => Some(Algorithm::FedAvg),
            "fedprox" => Some(Algorithm::FedProx),
            _ => None,
        }
    }
}

/// Full run configuration. Defaults mirror the reference experiment setup:
/// SGD at 0.01, 20 local steps, batch 32, 20 clients with 10 active, 200
/// rounds, schedule `[0.3, 0.6, 0.9]` with an 80% freeze fraction, Adam at
/// 1e-4 with inference batch 128 for the generator, proximal coefficient 0.1.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub rounds: u64,
    pub num_clients: usize,
    pub active_ratio: f64,
    pub local_steps: usize,
    pub batch_size: usize,
    pub client_lr: f64,
    pub curriculum: CurriculumConfig,
    pub curriculum_enabled: bool,
    pub gmm_components: usize,
    pub gmm_samples_per_client: usize,
    pub schedule: Vec<f64>,
    pub temperature_v: f64,
    pub sync_enabled: bool,
    /// Per-state round cap; 0 disables the cap (a stalled state then runs
    /// until the global budget is exhausted).
    pub state_patience: u64,
    /// When true, training ends as soon as the schedule saturates. The
    /// default keeps training (without further freezing) until the round
    /// budget, mirroring the uniform-budget comparison protocol.
    pub stop_on_completion: bool,
    pub generator_enabled: bool,
    pub generator_lr: f64,
    pub generator_batch: usize,
    pub generator_steps: usize,
    pub generator_noise_dim: usize,
    pub generator_hidden: Vec<usize>,
    pub distill_batch: usize,
    pub distill_weight: f64,
    pub prox_mu: f64,
    pub classifier_hidden: Vec<usize>,
    /// When false (the default) the wall-seconds metric column is written as
    /// zero so runs stay byte-reproducible.
    pub record_timing: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            algorithm: Algorithm::FedCl,
            seed: 1,
            rounds: 200,
            num_clients: 20,
            active_ratio: 0.5,
            local_steps: 20,
            batch_size: 32,
            client_lr: 0.01,
            curriculum: CurriculumConfig::default(),
            curriculum_enabled: true,
            gmm_components: 3,
            gmm_samples_per_client: 200,
            schedule: vec![0.3, 0.6, 0.9],
            temperature_v: 0.8,
            sync_enabled: true,
            state_patience: 0,
            stop_on_completion: false,
            generator_enabled: true,
            generator_lr: 1e-4,
            generator_batch: 128,
            generator_steps: 10,
            generator_noise_dim: 32,
            generator_hidden: vec![128],
            distill_batch: 32,
            distill_weight: 1.0,
            prox_mu: 0.1,
            classifier_hidden: vec![64, 32],
            record_timing: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::InvalidConfig("clients.total must be >= 1".into()));
        }
        if !(self.active_ratio > 0.0 && self.active_ratio <= 1.0) {
            return Err(Error::InvalidConfig(
                "clients.active_ratio must lie in (0, 1]".into(),
            ));
        }
        if self.local_steps == 0 {
            return Err(Error::InvalidConfig("local.steps must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("local.batch_size must be >= 1".into()));
        }
        if !(self.client_lr > 0.0) {
            return Err(Error::InvalidConfig("local.lr must be > 0".into()));
        }
        if !(self.generator_lr > 0.0) {
            return Err(Error::InvalidConfig("generator.lr must be > 0".into()));
        }
        if self.generator_batch == 0 {
            return Err(Error::InvalidConfig("generator.batch_size must be >= 1".into()));
        }
        if self.gmm_components == 0 {
            return Err(Error::InvalidConfig("gmm.components must be >= 1".into()));
        }
        if self.gmm_samples_per_client == 0 {
            return Err(Error::InvalidConfig(
                "gmm.samples_per_client must be >= 1".into(),
            ));
        }
        if !(self.prox_mu >= 0.0) {
            return Err(Error::InvalidConfig("fedprox.mu must be >= 0".into()));
        }
        if !(self.distill_weight >= 0.0) || !self.distill_weight.is_finite() {
            return Err(Error::InvalidConfig("distill.weight must be >= 0".into()));
        }
        if self.schedule.is_empty() {
            return Err(Error::InvalidConfig("sync.schedule must be nonempty".into()));
        }
        if self.schedule.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            return Err(Error::InvalidConfig(
                "sync.schedule levels must lie strictly in (0, 1)".into(),
            ));
        }
        if !(self.temperature_v > 0.0 && self.temperature_v < 1.0) {
            return Err(Error::InvalidConfig(
                "sync.temperature must lie strictly in (0, 1)".into(),
            ));
        }
        if self.classifier_hidden.is_empty() {
            return Err(Error::InvalidConfig(
                "model.hidden must name at least one hidden layer".into(),
            ));
        }
        CurriculumConfig::new(self.curriculum.tau, self.curriculum.lambda)?;
        Ok(())
    }

    /// Mechanisms actually in effect for the configured algorithm.
    pub fn effective_flags(&self) -> EffectiveFlags {
        match self.algorithm {
            Algorithm::FedCl => EffectiveFlags {
                curriculum: self.curriculum_enabled,
                generator: self.generator_enabled,
                sync: self.sync_enabled,
                prox_mu: 0.0,
            },
            Algorithm::FedAvg => EffectiveFlags {
                curriculum: false,
                generator: false,
                sync: false,
                prox_mu: 0.0,
            },
            Algorithm::FedProx => EffectiveFlags {
                curriculum: false,
                generator: false,
                sync: false,
                prox_mu: self.prox_mu,
            },
        }
    }

    /// Number of clients sampled per round.
    pub fn active_count(&self) -> usize {
        let c = crate::math::round(self.active_ratio * self.num_clients as f64) as usize;
        c.clamp(1, self.num_clients)
    }
}

/// Mechanism switches resolved from algorithm + config.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveFlags {
    pub curriculum: bool,
    pub generator: bool,
    pub sync: bool,
    pub prox_mu: f64,
}

/// One client's per-round upload.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientReport {
    pub client_id: usize,
    pub params: ModelParams,
    pub gmm: Option<GmmParams>,
    pub label_counter: Vec<u64>,
    pub local_steps_run: usize,
    pub mean_local_loss: f64,
}

/// Server-to-client payload for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct Broadcast {
    pub round: u64,
    pub state_index: usize,
    pub model: ModelParams,
    pub generator: Option<GeneratorParams>,
    pub label_prior: LabelPrior,
    pub pool: GlobalPool,
    pub threshold: f64,
}

/// One metrics row per communication round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: u64,
    pub state_index: usize,
    pub algorithm: Algorithm,
    pub test_accuracy: f64,
    pub mean_client_loss: f64,
    pub generator_loss: f64,
    pub frozen_count: usize,
    pub wall_seconds: f64,
    pub seed: u64,
}

/// Synchronization audit record emitted once per round while the state
/// machine is active.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncEvent {
    pub round: u64,
    pub state_index: usize,
    pub threshold: f64,
    pub frozen: Vec<usize>,
    pub forced_advance: bool,
}

/// Everything a finished run reports.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub final_model: ModelParams,
    pub history: Vec<RoundMetrics>,
    pub sync_events: Vec<SyncEvent>,
    pub partition_fingerprint: u64,
    pub init_fingerprint: u64,
    pub schedule_completed: bool,
    pub forced_advances: u32,
}

/// Runs per-client jobs; implementations may parallelize but must return
/// results in job order.
pub trait ClientExecutor {
    fn map_clients<T, F>(&self, count: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync;
}

/// In-order, single-threaded executor.
#[derive(Debug, Clone, Copy, Default)]
pub struct SequentialExecutor;

impl ClientExecutor for SequentialExecutor {
    fn map_clients<T, F>(&self, count: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync,
    {
        (0..count).map(f).collect()
    }
}

/// Wall-clock source for the timing column. The core is `no_std`, so real
/// timing is injected by the caller.
pub trait Clock {
    fn seconds(&self) -> f64;
}

/// Always reports zero; keeps runs byte-reproducible.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullClock;

impl Clock for NullClock {
    fn seconds(&self) -> f64 {
        0.0
    }
}

/// One client's local phase: pull the broadcast model, take `local_steps`
/// SGD steps on the local objective (curriculum or plain cross-entropy, plus
/// the distillation term and/or proximal penalty when enabled), update the
/// label counter from observed minibatches, then fit the difficulty mixture
/// on the full local dataset.
pub fn client_local_update(
    bcast: &Broadcast,
    local_data: &Dataset,
    cfg: &RunConfig,
    client_id: usize,
) -> Result<ClientReport> {
    if local_data.is_empty() {
        return Err(Error::Empty("client dataset"));
    }
    let flags = cfg.effective_flags();
    let classes = bcast.model.num_classes();
    let round = bcast.round;
    let mut params = bcast.model.clone();
    let mut opt = OptimizerState::sgd(cfg.client_lr)?;
    let mut counter = vec![0u64; classes];
    let mut batch_rng = rng::stream(cfg.seed, "batch", round, client_id as u64);
    let mut distill_rng = rng::stream(cfg.seed, "distill", round, client_id as u64);
    let cl_cfg = flags.curriculum.then_some(&cfg.curriculum);
    let use_distill = flags.generator
        && bcast.generator.is_some()
        && cfg.distill_weight > 0.0
        && cfg.distill_batch > 0;
    let mut loss_acc = 0.0;

    for step_idx in 0..cfg.local_steps {
        let idx = rng::indices_with_replacement(&mut batch_rng, local_data.len(), cfg.batch_size);
        for &i in &idx {
            counter[local_data.label(i)] += 1;
        }
        let spec = LossSpec {
            base: match cl_cfg {
                Some(c) => BaseLoss::Curriculum(c),
                None => BaseLoss::PlainCe,
            },
            prox: (flags.prox_mu > 0.0).then_some(ProxTerm {
                mu: flags.prox_mu,
                anchor: &bcast.model,
            }),
        };
        let (mut step_loss, mut grads) =
            nn::backward(&params, local_data, &idx, &spec).map_err(|e| {
                e.with_context(format!("round {round} client {client_id} step {step_idx}"))
            })?;
        if use_distill {
            let gen = bcast.generator.as_ref().unwrap();
            let batch = distill::sample_distill_batch(
                gen,
                &bcast.label_prior,
                &bcast.pool,
                cfg.distill_batch,
                &mut distill_rng,
            )?;
            let (dloss, dgrads) = distill::distillation_term(&params, &batch, cl_cfg)?;
            grads.add_scaled(&dgrads, cfg.distill_weight)?;
            step_loss += cfg.distill_weight * dloss;
        }
        if !step_loss.is_finite() {
            return Err(Error::NonFinite {
                context: "local objective",
                sample: None,
            }
            .with_context(format!("round {round} client {client_id} step {step_idx}")));
        }
        nn::step(&mut params.layers, &grads, &mut opt)?;
        loss_acc += step_loss;
    }

    // Difficulty mixture over the full local dataset, post-training. With the
    // curriculum disabled the raw per-sample cross-entropy stands in for the
    // difficulty score.
    let gmm = if flags.sync || flags.generator {
        let scores = match cl_cfg {
            Some(c) => curriculum::empirical_cl_risk(&params, local_data, c)?.1,
            None => nn::per_sample_ce(&params, local_data)?,
        };
        let fit = gmm::fit_em(
            &scores,
            cfg.gmm_components,
            rng::seed64(cfg.seed, "gmm-fit", round, client_id as u64),
            200,
            1e-7,
        )
        .map_err(|e| e.with_context(format!("round {round} client {client_id} gmm fit")))?;
        Some(fit.gmm)
    } else {
        None
    };

    let mean_local_loss = if cfg.local_steps == 0 {
        0.0
    } else {
        loss_acc / cfg.local_steps as f64
    };
    Ok(ClientReport {
        client_id,
        params,
        gmm,
        label_counter: counter,
        local_steps_run: cfg.local_steps,
        mean_local_loss,
    })
}

/// Coordinate-wise mean of exactly `expected_clients` parameter stacks (live
/// clients fresh, frozen/inactive clients from the server cache).
pub fn aggregate(params: &[&ModelParams], expected_clients: usize) -> Result<ModelParams> {
    if params.is_empty() {
        return Err(Error::Empty("aggregation input"));
    }
    if params.len() != expected_clients {
        return Err(Error::MissingClient {
            expected: expected_clients,
            actual: params.len(),
        });
    }
    let first = params[0];
    let flat_len = first.flat_len();
    let mut acc = vec![0.0f64; flat_len];
    for p in params {
        if p.layers.len() != first.layers.len() || p.flat_len() != flat_len {
            return Err(Error::Shape {
                context: "aggregation",
                expected: flat_len,
                actual: p.flat_len(),
            });
        }
        let mut off = 0;
        for l in &p.layers {
            for &w in l.weights.iter().chain(l.bias.iter()) {
                acc[off] += w;
                off += 1;
            }
        }
    }
    let k = params.len() as f64;
    for v in &mut acc {
        *v /= k;
    }
    let mut out = first.clone();
    out.assign_from_flat(&acc)?;
    Ok(out)
}

/// Top-1 accuracy on `test`; argmax ties break toward the lowest class index.
pub fn evaluate(model: &ModelParams, test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let mut correct = 0usize;
    for i in 0..test.len() {
        let (_, logits, _) = nn::forward_classifier(model, test.feature(i))?;
        let mut best = 0usize;
        for (c, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = c;
            }
        }
        if best == test.label(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

/// Runs the full training loop over `partition` until the round budget is
/// exhausted or the synchronization schedule completes.
pub fn run_training<E: ClientExecutor, C: Clock>(
    cfg: &RunConfig,
    train: &Dataset,
    test: &Dataset,
    partition: &Partition,
    executor: &E,
    clock: &C,
) -> Result<RunResult> {
    cfg.validate()?;
    if partition.num_clients() != cfg.num_clients {
        return Err(Error::InvalidConfig(format!(
            "partition has {} clients, config expects {}",
            partition.num_clients(),
            cfg.num_clients
        )));
    }
    if train.num_classes() != test.num_classes() || train.num_features() != test.num_features() {
        return Err(Error::InvalidConfig(
            "train and test sets disagree on shape".into(),
        ));
    }
    let flags = cfg.effective_flags();
    let k = cfg.num_clients;
    let classes = train.num_classes();

    let client_data: Vec<Dataset> = partition
        .client_indices
        .iter()
        .map(|idx| train.subset(idx))
        .collect::<Result<_>>()?;

    let mut dims = vec![train.num_features()];
    dims.extend_from_slice(&cfg.classifier_hidden);
    dims.push(classes);
    let split_index = dims.len() - 2;
    let mut model = nn::init_classifier(&dims, split_index, rng::seed64(cfg.seed, "init-model", 0, 0))?;
    let init_fingerprint = model.fingerprint();

    let mut generator = if flags.generator {
        Some(nn::init_generator(
            classes,
            cfg.generator_noise_dim,
            &cfg.generator_hidden,
            model.latent_dim(),
            rng::seed64(cfg.seed, "init-generator", 0, 0),
        )?)
    } else {
        None
    };
    let mut gen_opt = match &generator {
        Some(g) => Some(OptimizerState::adam(cfg.generator_lr, g.flat_len())?),
        None => None,
    };

    let mut cached_params: Vec<ModelParams> = vec![model.clone(); k];
    let mut cached_gmms: Vec<Option<GmmParams>> = vec![None; k];
    let mut cached_counters: Vec<Vec<u64>> = vec![vec![0u64; classes]; k];
    let mut prior = LabelPrior::uniform(classes);
    let mut pool = GlobalPool::uniform_init(k * cfg.gmm_samples_per_client);
    let mut sstate = if flags.sync {
        let mut s = SyncState::new(cfg.schedule.clone(), k, cfg.temperature_v)?;
        s.refresh_threshold(&pool)?;
        Some(s)
    } else {
        None
    };

    let mut history = Vec::new();
    let mut sync_events = Vec::new();
    let mut schedule_completed = false;
    let mut forced_advances = 0u32;
    let mut round = 0u64;
    let mut rounds_in_state = 0u64;

    while round < cfg.rounds {
        round += 1;
        rounds_in_state += 1;
        let t0 = clock.seconds();

        let live: Vec<usize> = match &sstate {
            Some(s) => s.live_clients(),
            None => (0..k).collect(),
        };
        debug_assert!(!live.is_empty(), "round started with no live clients");
        let mut active_rng = rng::stream(cfg.seed, "active", round, 0);
        let active =
            rng::subset_without_replacement(&mut active_rng, &live, cfg.active_count());

        let bcast = Broadcast {
            round,
            state_index: sstate.as_ref().map(SyncState::state_index).unwrap_or(0),
            model: model.clone(),
            generator: generator.clone(),
            label_prior: prior.clone(),
            pool: pool.clone(),
            threshold: sstate
                .as_ref()
                .map(SyncState::current_threshold)
                .unwrap_or(f64::NAN),
        };

        let results = executor.map_clients(active.len(), |j| {
            let id = active[j];
            client_local_update(&bcast, &client_data[id], cfg, id)
        });
        let mut mean_client_loss = 0.0;
        for result in results {
            let report = result.map_err(|e| e.with_context(format!("round {round}")))?;
            mean_client_loss += report.mean_local_loss;
            let id = report.client_id;
            cached_params[id] = report.params;
            if let Some(g) = report.gmm {
                cached_gmms[id] = Some(g);
            }
            cached_counters[id] = report.label_counter;
        }
        mean_client_loss /= active.len() as f64;

        let refs: Vec<&ModelParams> = cached_params.iter().collect();
        model = aggregate(&refs, k)?;

        if cached_counters.iter().any(|c| c.iter().any(|&v| v > 0)) {
            prior = distill::update_label_prior(&cached_counters)?;
        }

        let generator_loss = match (&mut generator, &mut gen_opt) {
            (Some(gen), Some(opt)) => {
                let heads: Vec<&ModelParams> = cached_params.iter().collect();
                let trajectory = distill::train_generator(
                    gen,
                    &heads,
                    &prior,
                    &pool,
                    cfg.generator_steps,
                    opt,
                    cfg.generator_batch,
                    flags.curriculum.then_some(&cfg.curriculum),
                    rng::seed64(cfg.seed, "gen-round", round, 0),
                )
                .map_err(|e| e.with_context(format!("round {round}")))?;
                trajectory.last().copied().unwrap_or(0.0)
            }
            _ => 0.0,
        };

        if flags.sync || flags.generator {
            let available: Vec<&GmmParams> = cached_gmms.iter().flatten().collect();
            if !available.is_empty() {
                pool = sync::build_global_pool(
                    &available,
                    cfg.gmm_samples_per_client,
                    rng::seed64(cfg.seed, "pool", round, 0),
                )?;
            }
        }

        let mut frozen_count = 0;
        if let Some(s) = sstate.as_mut() {
            if !s.is_completed() {
                s.refresh_threshold(&pool)?;
                let threshold = s.current_threshold();
                for &id in &live {
                    if let Some(g) = &cached_gmms[id] {
                        let draws = gmm::sample(
                            g,
                            cfg.gmm_samples_per_client,
                            rng::seed64(cfg.seed, "freeze", round, id as u64),
                        );
                        if sync::freeze_decision(&draws, threshold, cfg.temperature_v) {
                            s.freeze(id);
                        }
                    }
                }
                frozen_count = s.frozen_count();
                sync_events.push(SyncEvent {
                    round,
                    state_index: s.state_index(),
                    threshold,
                    frozen: s.frozen_clients(),
                    forced_advance: false,
                });
            }
        }

        let test_accuracy = evaluate(&model, test)?;
        let wall_seconds = if cfg.record_timing {
            clock.seconds() - t0
        } else {
            0.0
        };
        history.push(RoundMetrics {
            round,
            state_index: sstate.as_ref().map(SyncState::state_index).unwrap_or(0),
            algorithm: cfg.algorithm,
            test_accuracy,
            mean_client_loss,
            generator_loss,
            frozen_count,
            wall_seconds,
            seed: cfg.seed,
        });

        if let Some(s) = sstate.as_mut() {
            if !s.is_completed() {
                if s.all_frozen() {
                    if s.advance(&pool)? == AdvanceOutcome::Completed {
                        schedule_completed = true;
                        if cfg.stop_on_completion {
                            break;
                        }
                    } else {
                        rounds_in_state = 0;
                    }
                } else if cfg.state_patience > 0 && rounds_in_state >= cfg.state_patience {
                    // A stalled state is forced onward so the schedule keeps
                    // moving within the round budget.
                    forced_advances += 1;
                    if let Some(event) = sync_events.last_mut() {
                        event.forced_advance = true;
                    }
                    if s.force_advance(&pool)? == AdvanceOutcome::Completed {
                        schedule_completed = true;
                        if cfg.stop_on_completion {
                            break;
                        }
                    } else {
                        rounds_in_state = 0;
                    }
                }
            }
        }
    }

    Ok(RunResult {
        final_model: model,
        history,
        sync_events,
        partition_fingerprint: partition.fingerprint(),
        init_fingerprint,
        schedule_completed,
        forced_advances,
    })
}
