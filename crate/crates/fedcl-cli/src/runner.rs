//! Experiment assembly: dataset supply, the rayon-backed client executor,
//! wall-clock timing, and the `run`/`compare` entry points.

use std::path::Path;
use std::time::Instant;

use fedcl_core::data::{self, Dataset, Partition};
use fedcl_core::federation::{
    self, Algorithm, ClientExecutor, Clock, RunConfig, RunResult,
};
use fedcl_core::rng;
use rayon::prelude::*;

use crate::config::{AppConfig, DatasetKind};
use crate::error::{CliError, Result};
use crate::idx;

/// Rayon-backed executor. `FEDCL_THREADS` caps the worker count; results are
/// collected in job order, so parallelism never changes results.
pub struct RayonExecutor {
    pool: Option<rayon::ThreadPool>,
}

impl RayonExecutor {
    pub fn from_env() -> RayonExecutor {
        let pool = std::env::var("FEDCL_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&n| n >= 1)
            .and_then(|n| {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .ok()
            });
        RayonExecutor { pool }
    }
}

impl ClientExecutor for RayonExecutor {
    fn map_clients<T, F>(&self, count: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync,
    {
        match &self.pool {
            Some(pool) => pool.install(|| (0..count).into_par_iter().map(&f).collect()),
            None => (0..count).into_par_iter().map(&f).collect(),
        }
    }
}

/// Wall clock backed by `Instant`.
pub struct WallClock {
    start: Instant,
}

impl WallClock {
    pub fn new() -> WallClock {
        WallClock {
            start: Instant::now(),
        }
    }
}

impl Default for WallClock {
    fn default() -> Self {
        WallClock::new()
    }
}

impl Clock for WallClock {
    fn seconds(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }
}

fn load_mnist_pair(dir: &Path, images: &str, labels: &str) -> Result<Dataset> {
    let images_path = dir.join(images);
    let labels_path = dir.join(labels);
    idx::load_idx(&images_path, &labels_path).map_err(|source| CliError::Idx {
        path: images_path,
        source,
    })
}

/// True when the four MNIST IDX files exist under `dir`.
pub fn mnist_files_present(dir: &Path) -> bool {
    ["train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"]
        .iter()
        .all(|f| dir.join(f).exists())
}

/// Builds the train pool, test split, and client partition for a config.
/// Everything is derived from the master seed, so every algorithm sharing a
/// seed sees the identical partition and data.
pub fn prepare_data(cfg: &AppConfig) -> Result<(Dataset, Dataset, Partition)> {
    let seed = cfg.run.seed;
    let (train_pool, test) = match cfg.data.dataset {
        DatasetKind::Blobs => {
            let (train, test) = data::make_blobs_split(
                cfg.data.blob_classes,
                cfg.data.blob_per_class,
                cfg.data.blob_test_per_class,
                cfg.data.blob_dim,
                cfg.data.blob_spread,
                rng::seed64(seed, "dataset", 0, 0),
            )?;
            (train, test.expect("test_per_class >= 1"))
        }
        DatasetKind::Mnist => {
            let dir = cfg.data.mnist_dir.as_ref().ok_or_else(|| {
                CliError::Invalid("data.mnist_dir is required for data.dataset = mnist".into())
            })?;
            let train = load_mnist_pair(dir, "train-images-idx3-ubyte", "train-labels-idx1-ubyte")?;
            let test = load_mnist_pair(dir, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")?;
            let train = train.subsample(
                cfg.data.mnist_train_limit.min(train.len()),
                rng::seed64(seed, "mnist-train-subset", 0, 0),
            )?;
            let test = test.subsample(
                cfg.data.mnist_test_limit.min(test.len()),
                rng::seed64(seed, "mnist-test-subset", 0, 0),
            )?;
            (train, test)
        }
    };

    let distributed_count =
        ((cfg.data.train_fraction * train_pool.len() as f64).round() as usize)
            .clamp(1, train_pool.len());
    let distributed = train_pool.subsample(
        distributed_count,
        rng::seed64(seed, "train-fraction", 0, 0),
    )?;
    let partition = data::dirichlet_partition(
        &distributed,
        cfg.run.num_clients,
        cfg.data.dirichlet_alpha,
        rng::seed64(seed, "partition", 0, 0),
    )?;
    Ok((distributed, test, partition))
}

/// Runs one experiment end to end.
pub fn run_experiment(cfg: &AppConfig) -> Result<RunResult> {
    cfg.validate()?;
    let (train, test, partition) = prepare_data(cfg)?;
    let executor = RayonExecutor::from_env();
    let clock = WallClock::new();
    let result = federation::run_training(&cfg.run, &train, &test, &partition, &executor, &clock)?;
    Ok(result)
}

/// Outcome of a multi-algorithm comparison on shared data.
pub struct CompareOutcome {
    pub runs: Vec<(Algorithm, RunResult)>,
    pub partition_fingerprint: u64,
    pub init_fingerprint: u64,
}

/// Runs each algorithm on the identical partition and initial model, and
/// asserts that fairness invariant via fingerprints.
pub fn compare_experiments(cfg: &AppConfig, algorithms: &[Algorithm]) -> Result<CompareOutcome> {
    if algorithms.is_empty() {
        return Err(CliError::Invalid("compare needs at least one algorithm".into()));
    }
    cfg.validate()?;
    let (train, test, partition) = prepare_data(cfg)?;
    let executor = RayonExecutor::from_env();
    let clock = WallClock::new();
    let mut runs = Vec::with_capacity(algorithms.len());
    for &algorithm in algorithms {
        let mut run_cfg: RunConfig = cfg.run.clone();
        run_cfg.algorithm = algorithm;
        run_cfg.validate()?;
        let result =
            federation::run_training(&run_cfg, &train, &test, &partition, &executor, &clock)?;
        runs.push((algorithm, result));
    }
    let partition_fingerprint = runs[0].1.partition_fingerprint;
    let init_fingerprint = runs[0].1.init_fingerprint;
    for (algorithm, result) in &runs {
        if result.partition_fingerprint != partition_fingerprint
            || result.init_fingerprint != init_fingerprint
        {
            return Err(CliError::Invalid(format!(
                "fairness violation: {} ran on a different partition or initial model",
                algorithm.as_str()
            )));
        }
    }
    Ok(CompareOutcome {
        runs,
        partition_fingerprint,
        init_fingerprint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> AppConfig {
        let mut cfg = AppConfig::default();
        cfg.apply_text(
            "rounds = 2\nclients.total = 4\nlocal.steps = 2\nlocal.batch_size = 4\n\
             data.blob_classes = 3\ndata.blob_per_class = 30\ndata.blob_test_per_class = 10\n\
             data.blob_dim = 4\ngmm.samples_per_client = 30\ngenerator.batch_size = 8\n\
             generator.steps_per_round = 1\ngenerator.noise_dim = 4\ngenerator.hidden = 8\n\
             distill.batch_size = 4\nmodel.hidden = 8,6\n",
            "test",
        )
        .unwrap();
        cfg
    }

    #[test]
    fn prepare_data_is_seed_deterministic() {
        let cfg = small_cfg();
        let (a_train, a_test, a_part) = prepare_data(&cfg).unwrap();
        let (b_train, b_test, b_part) = prepare_data(&cfg).unwrap();
        assert_eq!(a_train, b_train);
        assert_eq!(a_test, b_test);
        assert_eq!(a_part, b_part);
    }

    #[test]
    fn compare_shares_partition_and_init() {
        let cfg = small_cfg();
        let outcome =
            compare_experiments(&cfg, &[Algorithm::FedCl, Algorithm::FedAvg, Algorithm::FedProx])
                .unwrap();
        assert_eq!(outcome.runs.len(), 3);
        for (_, result) in &outcome.runs {
            assert_eq!(result.partition_fingerprint, outcome.partition_fingerprint);
            assert_eq!(result.init_fingerprint, outcome.init_fingerprint);
        }
    }

    #[test]
    fn executor_preserves_job_order() {
        let exec = RayonExecutor::from_env();
        let out = exec.map_clients(64, |i| i * 3);
        assert_eq!(out, (0..64).map(|i| i * 3).collect::<Vec<_>>());
    }
}
