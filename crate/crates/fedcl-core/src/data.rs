//! Dataset container, synthetic Gaussian-blob classification sets, and
//! Dirichlet label-skew partitioning.

use crate::error::{Error, Result};
use crate::math;
use crate::rng;

use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};

/// Immutable labelled feature matrix (row-major, `n x num_features`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    num_features: usize,
    num_classes: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        num_features: usize,
        num_classes: usize,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        if num_features == 0 {
            return Err(Error::InvalidConfig("dataset with zero features".into()));
        }
        if features.len() != labels.len() * num_features {
            return Err(Error::Shape {
                context: "dataset features",
                expected: labels.len() * num_features,
                actual: features.len(),
            });
        }
        for &l in &labels {
            if l >= num_classes {
                return Err(Error::LabelOutOfRange {
                    label: l,
                    num_classes,
                });
            }
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "dataset features",
                sample: None,
            });
        }
        Ok(Dataset {
            features,
            labels,
            num_features,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.num_features..(i + 1) * self.num_features]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Counts per class.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0usize; self.num_classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }

    /// New dataset holding the rows at `indices` (in the given order).
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if indices.is_empty() {
            return Err(Error::Empty("dataset subset"));
        }
        let mut features = Vec::with_capacity(indices.len() * self.num_features);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.feature(i));
            labels.push(self.labels[i]);
        }
        Dataset::new(features, labels, self.num_features, self.num_classes)
    }

    /// Seeded subsample of `count` rows without replacement.
    pub fn subsample(&self, count: usize, seed: u64) -> Result<Dataset> {
        let count = count.min(self.len());
        let mut rng = rng::stream(seed, "subsample", 0, 0);
        let idx = rng::subset_without_replacement(&mut rng, &(0..self.len()).collect::<Vec<_>>(), count);
        self.subset(&idx)
    }
}

/// Disjoint per-client index lists covering the partitioned dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub client_indices: Vec<Vec<usize>>,
}

impl Partition {
    pub fn num_clients(&self) -> usize {
        self.client_indices.len()
    }

    /// Order-independent fingerprint of the assignment, for fairness checks
    /// across runs that must share a partition.
    pub fn fingerprint(&self) -> u64 {
        let mut bytes = Vec::new();
        for (k, idx) in self.client_indices.iter().enumerate() {
            bytes.extend_from_slice(&(k as u64).to_le_bytes());
            for &i in idx {
                bytes.extend_from_slice(&(i as u64).to_le_bytes());
            }
        }
        rng::fnv1a64(&bytes)
    }
}

/// Splits `data` across `num_clients` with per-class Dirichlet(`alpha`)
/// proportions: for each class, proportions are drawn once and that class's
/// shuffled samples are dealt out accordingly. Smaller `alpha` concentrates
/// each class on fewer clients (more heterogeneity). Clients left empty are
/// repaired by stealing one sample from the largest client.
pub fn dirichlet_partition(
    data: &Dataset,
    num_clients: usize,
    alpha: f64,
    seed: u64,
) -> Result<Partition> {
    if num_clients == 0 {
        return Err(Error::InvalidConfig("partition needs at least one client".into()));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidConfig("dirichlet alpha must be positive".into()));
    }
    if data.len() < num_clients {
        return Err(Error::InvalidConfig(
            "dataset smaller than the number of clients".into(),
        ));
    }
    let mut rng = rng::stream(seed, "dirichlet", 0, 0);
    let gamma = Gamma::new(alpha, 1.0)
        .map_err(|_| Error::InvalidConfig("dirichlet alpha rejected".into()))?;

    let mut assignment: Vec<Vec<usize>> = vec![Vec::new(); num_clients];
    for class in 0..data.num_classes() {
        let mut idx: Vec<usize> = (0..data.len()).filter(|&i| data.label(i) == class).collect();
        if idx.is_empty() {
            continue;
        }
        idx.shuffle(&mut rng);
        // Dirichlet draw via normalized Gamma variates.
        let mut props: Vec<f64> = (0..num_clients).map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = props.iter().sum();
        if total <= 0.0 {
            // All draws underflowed; fall back to a uniform split.
            props = vec![1.0; num_clients];
        }
        let total: f64 = props.iter().sum();
        let n = idx.len();
        let mut cursor = 0usize;
        let mut cum = 0.0;
        for (k, p) in props.iter().enumerate() {
            cum += p / total;
            let end = if k + 1 == num_clients {
                n
            } else {
                (math::round(cum * n as f64) as usize).min(n)
            };
            let end = end.max(cursor);
            assignment[k].extend_from_slice(&idx[cursor..end]);
            cursor = end;
        }
    }

    // Repair empty clients by stealing one sample from the largest client.
    loop {
        let Some(empty) = assignment.iter().position(|a| a.is_empty()) else {
            break;
        };
        let largest = assignment
            .iter()
            .enumerate()
            .max_by_key(|(_, a)| a.len())
            .map(|(k, _)| k)
            .unwrap();
        if assignment[largest].len() <= 1 {
            return Err(Error::InvalidConfig(
                "cannot repair empty client: not enough samples".into(),
            ));
        }
        let moved = assignment[largest].pop().unwrap();
        assignment[empty].push(moved);
    }

    for a in &mut assignment {
        a.sort_unstable();
    }
    Ok(Partition {
        client_indices: assignment,
    })
}

/// Synthetic classification set: class means on a seeded random sphere of
/// radius 5, samples drawn isotropically around them with stddev `spread`.
pub fn make_blobs(
    classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    let (train, _) = make_blobs_split(classes, per_class, 0, dim, spread, seed)?;
    Ok(train)
}

/// Like [`make_blobs`] but also returns a second set drawn around the *same*
/// class means, for use as a held-out test split. `test_per_class` may be 0.
pub fn make_blobs_split(
    classes: usize,
    per_class: usize,
    test_per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<(Dataset, Option<Dataset>)> {
    if classes < 2 {
        return Err(Error::InvalidConfig("blobs need at least two classes".into()));
    }
    if per_class == 0 {
        return Err(Error::InvalidConfig("blobs need at least one sample per class".into()));
    }
    if dim == 0 {
        return Err(Error::InvalidConfig("blobs need dim >= 1".into()));
    }
    if !(spread >= 0.0) || !spread.is_finite() {
        return Err(Error::InvalidConfig("blob spread must be >= 0".into()));
    }

    let mut means_rng = rng::stream(seed, "blob-means", 0, 0);
    let mut means = Vec::with_capacity(classes);
    for _ in 0..classes {
        let mut v = rng::normal_vec(&mut means_rng, dim);
        let norm = math::sqrt(v.iter().map(|x| x * x).sum::<f64>()).max(1e-12);
        for x in &mut v {
            *x *= 5.0 / norm;
        }
        means.push(v);
    }

    let sample_set = |count: usize, tag: &str| -> Dataset {
        let mut rng = rng::stream(seed, tag, 0, 0);
        let mut features = Vec::with_capacity(classes * count * dim);
        let mut labels = Vec::with_capacity(classes * count);
        for (c, mean) in means.iter().enumerate() {
            for _ in 0..count {
                for &m in mean.iter() {
                    features.push(m + spread * rng::standard_normal(&mut rng));
                }
                labels.push(c);
            }
        }
        Dataset {
            features,
            labels,
            num_features: dim,
            num_classes: classes,
        }
    };

    let train = sample_set(per_class, "blob-train");
    let test = if test_per_class > 0 {
        Some(sample_set(test_per_class, "blob-test"))
    } else {
        None
    };
    Ok((train, test))
}

/// Mean per-client entropy (nats) of the label distribution under a
/// partition. Higher means more uniform client label mixes.
pub fn mean_label_entropy(data: &Dataset, partition: &Partition) -> f64 {
    let mut total = 0.0;
    for idx in &partition.client_indices {
        let mut counts = vec![0usize; data.num_classes()];
        for &i in idx {
            counts[data.label(i)] += 1;
        }
        let n = idx.len() as f64;
        let mut h = 0.0;
        for &c in &counts {
            if c > 0 {
                let p = c as f64 / n;
                h -= p * math::ln(p);
            }
        }
        total += h;
    }
    total / partition.num_clients() as f64
}
