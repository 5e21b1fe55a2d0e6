//! Dataset ingestion, synthetic data generation, scenario partitioning and
//! class-imbalance reporting.
//!
//! Client-side code only ever sees a [`ClientView`] (features, no labels);
//! ground-truth labels stay behind the oracle accessors used by evaluation
//! and analysis paths.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seed::{self, tags};

/// Feature matrix plus class labels. Features are expected to be
/// standardized with statistics from the training split before training.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_histogram(&self) -> Vec<u64> {
        let mut hist = vec![0u64; self.class_count()];
        for &l in &self.labels {
            hist[l] += 1;
        }
        hist
    }

    fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
        }
    }
}

/// What the loader dropped while cleaning.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub rows_read: usize,
    pub dropped_malformed: usize,
    pub dropped_unknown_class: usize,
}

/// Column layout of a labeled CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub label_column: String,
    /// Class names in label-id order; rows with other labels are dropped.
    pub classes: Vec<String>,
    /// Feature columns to read; `None` means every non-label column.
    pub feature_columns: Option<Vec<String>>,
}

/// Loads and cleans a labeled CSV. Rows with unparseable or non-finite
/// feature values are dropped and counted, as are rows whose label is not in
/// the configured class set. Row order follows the file.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<(Dataset, CleaningReport)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Schema(e.to_string()))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Schema(e.to_string()))?
        .iter()
        .map(String::from)
        .collect();

    let label_idx = headers
        .iter()
        .position(|h| h == &schema.label_column)
        .ok_or_else(|| Error::Schema(format!("unknown column {:?}", schema.label_column)))?;
    let feature_idx: Vec<usize> = match &schema.feature_columns {
        Some(names) => {
            let mut idx = Vec::with_capacity(names.len());
            for name in names {
                idx.push(
                    headers
                        .iter()
                        .position(|h| h == name)
                        .ok_or_else(|| Error::Schema(format!("unknown column {name:?}")))?,
                );
            }
            idx
        }
        None => (0..headers.len()).filter(|&i| i != label_idx).collect(),
    };

    let mut report = CleaningReport::default();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Schema(e.to_string()))?;
        report.rows_read += 1;
        let label = match record.get(label_idx) {
            Some(l) => l.trim(),
            None => {
                report.dropped_malformed += 1;
                continue;
            }
        };
        let Some(class_id) = schema.classes.iter().position(|c| c == label) else {
            report.dropped_unknown_class += 1;
            continue;
        };
        let mut row = Vec::with_capacity(feature_idx.len());
        let mut ok = true;
        for &i in &feature_idx {
            match record.get(i).and_then(|v| v.trim().parse::<f64>().ok()) {
                Some(v) if v.is_finite() => row.push(v),
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            report.dropped_malformed += 1;
            continue;
        }
        rows.push(row);
        labels.push(class_id);
    }
    if rows.is_empty() {
        return Err(Error::Input(format!("no usable rows in {}", path.display())));
    }
    let features = Matrix::from_rows(&rows)?;
    Ok((Dataset { features, labels, class_names: schema.classes.clone() }, report))
}

/// Gaussian blobs with unit covariance. Class centers sit on scaled basis
/// axes so each pair is exactly `separation` apart; `classes` must not
/// exceed the feature dimension.
pub fn make_synthetic(
    classes: usize,
    per_class: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::Config("need at least two classes".into()));
    }
    if classes > dim {
        return Err(Error::Config(format!(
            "{classes} classes need at least {classes} feature dimensions"
        )));
    }
    if separation < 0.0 {
        return Err(Error::Config("separation must be nonnegative".into()));
    }
    let mut rng = seed::stream(seed, &[tags::DATA]);
    let scale = separation / std::f64::consts::SQRT_2;
    let mut rows = Vec::with_capacity(classes * per_class);
    let mut labels = Vec::with_capacity(classes * per_class);
    for class in 0..classes {
        for _ in 0..per_class {
            let mut row = vec![0.0; dim];
            for v in row.iter_mut() {
                *v = gaussian(&mut rng);
            }
            row[class] += scale;
            rows.push(row);
            labels.push(class);
        }
    }
    Ok(Dataset {
        features: Matrix::from_rows(&rows)?,
        labels,
        class_names: (0..classes).map(|c| format!("class-{c}")).collect(),
    })
}

fn gaussian(rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Stratified train/test split; per class, `test_fraction` of the samples
/// (rounded) go to the test set.
pub fn train_test_split(dataset: &Dataset, test_fraction: f64, seed: u64) -> (Dataset, Dataset) {
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for class in 0..dataset.class_count() {
        let mut pool: Vec<usize> =
            (0..dataset.len()).filter(|&i| dataset.labels[i] == class).collect();
        shuffle(&mut pool, &mut seed::stream(seed, &[tags::SPLIT, class as u64]));
        let n_test = (pool.len() as f64 * test_fraction).round() as usize;
        test_idx.extend_from_slice(&pool[..n_test]);
        train_idx.extend_from_slice(&pool[n_test..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    (dataset.subset(&train_idx), dataset.subset(&test_idx))
}

/// Per-column location/scale fitted on the training split only.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    pub fn fit(train: &Dataset) -> Self {
        let cols = train.features.cols();
        let n = train.len() as f64;
        let mut mean = vec![0.0; cols];
        for r in 0..train.len() {
            for (m, &v) in mean.iter_mut().zip(train.features.row(r)) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        let mut var = vec![0.0; cols];
        for r in 0..train.len() {
            for (c, (&v, &m)) in train.features.row(r).iter().zip(&mean).enumerate() {
                var[c] += (v - m) * (v - m);
            }
        }
        let scale = var
            .iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, dataset: &mut Dataset) {
        for r in 0..dataset.len() {
            for (c, v) in dataset.features.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.mean[c]) / self.scale[c];
            }
        }
    }
}

/// Per-client class quotas (a row per client, a count per class).
#[derive(Debug, Clone, PartialEq)]
pub struct QuotaTable {
    pub class_names: Vec<String>,
    pub quotas: Vec<Vec<usize>>,
}

/// The shipped ten-party tables carry published per-party entropy values
/// that are normalized by log(10): the upstream label encoding kept a
/// ten-slot class space even though only nine classes carry samples. Use
/// this constant when reproducing those values.
pub const CIC_ENTROPY_NORM: usize = 10;

impl QuotaTable {
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut class_names: Vec<String> = Vec::new();
        let mut quotas: Vec<Vec<usize>> = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| Error::Schema(e.to_string()))?;
            let client: usize = record
                .get(0)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Schema("bad client id in quota table".into()))?;
            let class = record
                .get(1)
                .ok_or_else(|| Error::Schema("missing class in quota table".into()))?
                .to_string();
            let count: usize = record
                .get(2)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Schema("bad count in quota table".into()))?;
            let class_id = match class_names.iter().position(|c| *c == class) {
                Some(i) => i,
                None => {
                    class_names.push(class);
                    class_names.len() - 1
                }
            };
            while quotas.len() <= client {
                quotas.push(Vec::new());
            }
            let row = &mut quotas[client];
            while row.len() <= class_id {
                row.push(0);
            }
            row[class_id] = count;
        }
        if quotas.is_empty() {
            return Err(Error::Input("empty quota table".into()));
        }
        let k = class_names.len();
        for row in quotas.iter_mut() {
            row.resize(k, 0);
        }
        Ok(Self { class_names, quotas })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_csv_str(&std::fs::read_to_string(path)?)
    }

    /// The ten-party highly skewed table shipped with the crate.
    pub fn cic_basic() -> Self {
        Self::from_csv_str(include_str!("../data/cic_basic_quotas.csv"))
            .expect("embedded quota table is valid")
    }

    /// The ten-party identically distributed table shipped with the crate.
    pub fn cic_balanced() -> Self {
        Self::from_csv_str(include_str!("../data/cic_balanced_quotas.csv"))
            .expect("embedded quota table is valid")
    }

    pub fn clients(&self) -> usize {
        self.quotas.len()
    }
}

/// Normalized Shannon entropy of a class histogram, in `[0, 1]`:
/// `-(sum p log p) / log(k_norm)`. Zero-count classes contribute nothing
/// (`0 log 0 = 0`); a single-class histogram scores 0 and a uniform
/// histogram over `k_norm` classes scores 1.
pub fn shannon_entropy(histogram: &[u64], k_norm: usize) -> Result<f64> {
    let total: u64 = histogram.iter().sum();
    if total == 0 {
        return Err(Error::Input("entropy of an empty histogram".into()));
    }
    if k_norm <= 1 {
        return Ok(0.0);
    }
    let n = total as f64;
    let sum: f64 = histogram
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum();
    Ok(sum / (k_norm as f64).ln())
}

/// Relative client data sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SizeProfile {
    Uniform,
    /// Sizes decay geometrically; the largest client holds `ratio` times
    /// the smallest one's share.
    Geometric { ratio: f64 },
    Explicit { shares: Vec<f64> },
}

impl SizeProfile {
    /// Heterogeneity matching the shipped ten-party tables (largest client
    /// is 4.64x the smallest).
    pub fn default_geometric() -> Self {
        Self::Geometric { ratio: 4.64 }
    }

    pub fn shares(&self, clients: usize) -> Result<Vec<f64>> {
        let raw: Vec<f64> = match self {
            Self::Uniform => vec![1.0; clients],
            Self::Geometric { ratio } => {
                if *ratio <= 0.0 {
                    return Err(Error::Config("size ratio must be positive".into()));
                }
                if clients == 1 {
                    vec![1.0]
                } else {
                    (0..clients)
                        .map(|i| ratio.powf(-(i as f64) / (clients as f64 - 1.0)))
                        .collect()
                }
            }
            Self::Explicit { shares } => {
                if shares.len() != clients {
                    return Err(Error::Config(format!(
                        "size profile has {} entries for {clients} clients",
                        shares.len()
                    )));
                }
                shares.clone()
            }
        };
        let total: f64 = raw.iter().sum();
        Ok(raw.iter().map(|v| v / total).collect())
    }
}

/// How training data is spread across clients.
#[derive(Debug, Clone, PartialEq)]
pub enum PartitionStrategy {
    /// Explicit per-client class counts.
    Quota(QuotaTable),
    /// Per class, client shares drawn from a Dirichlet with concentration
    /// `alpha * M * size_share`; small alpha gives strong label skew.
    Dirichlet { alpha: f64 },
    /// Every client gets the global class mix (sizes still follow the
    /// profile).
    Proportional,
}

/// The result of partitioning: disjoint index lists for the clients and the
/// server's labeled split, plus per-client class histograms and entropy.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioPartition {
    pub client_indices: Vec<Vec<usize>>,
    pub server_indices: Vec<usize>,
    pub client_histograms: Vec<Vec<u64>>,
    pub client_entropy: Vec<f64>,
}

impl ScenarioPartition {
    pub fn clients(&self) -> usize {
        self.client_indices.len()
    }

    pub fn client_size(&self, client: usize) -> usize {
        self.client_indices[client].len()
    }

    /// The unlabeled view handed to client training code: features only.
    pub fn client_view(&self, dataset: &Dataset, client: usize) -> ClientView {
        ClientView { features: dataset.features.select_rows(&self.client_indices[client]) }
    }

    /// Oracle path: ground-truth labels of a client partition. Only
    /// evaluation and analysis code may use this.
    pub fn oracle_labels(&self, dataset: &Dataset, client: usize) -> Vec<usize> {
        self.client_indices[client].iter().map(|&i| dataset.labels[i]).collect()
    }

    /// Oracle path: the true class histogram of a client partition.
    pub fn oracle_histogram(&self, client: usize) -> &[u64] {
        &self.client_histograms[client]
    }

    pub fn server_dataset(&self, dataset: &Dataset) -> Dataset {
        dataset.subset(&self.server_indices)
    }
}

/// Unlabeled client-side view. Deliberately label-free: training code that
/// receives one cannot reach ground truth.
#[derive(Debug, Clone)]
pub struct ClientView {
    pub features: Matrix,
}

fn shuffle(indices: &mut [usize], rng: &mut rand_chacha::ChaCha8Rng) {
    for i in (1..indices.len()).rev() {
        let j = rng.gen_range(0..=i);
        indices.swap(i, j);
    }
}

/// Largest-remainder apportionment of `total` into shares `w` (w sums to 1).
fn apportion(total: usize, w: &[f64]) -> Vec<usize> {
    let mut out: Vec<usize> = w.iter().map(|&x| (total as f64 * x).floor() as usize).collect();
    let assigned: usize = out.iter().sum();
    let mut remainders: Vec<(usize, f64)> = w
        .iter()
        .enumerate()
        .map(|(i, &x)| (i, total as f64 * x - (total as f64 * x).floor()))
        .collect();
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for k in 0..total.saturating_sub(assigned) {
        out[remainders[k % w.len()].0] += 1;
    }
    out
}

/// Splits a dataset across `clients` plus a labeled server share.
///
/// Clients draw from per-class pools first (quotas, Dirichlet draws or the
/// plain proportional mix); the server's labeled split is then taken
/// class-stratified from the remainder, sized at `server_fraction` of the
/// dataset. All index lists are pairwise disjoint.
pub fn partition(
    dataset: &Dataset,
    strategy: &PartitionStrategy,
    clients: usize,
    server_fraction: f64,
    size_profile: &SizeProfile,
    seed: u64,
) -> Result<ScenarioPartition> {
    if clients < 2 {
        return Err(Error::Config("partitioning needs at least two clients".into()));
    }
    if !(0.0..1.0).contains(&server_fraction) {
        return Err(Error::Config(format!("server fraction {server_fraction} outside [0,1)")));
    }
    let k = dataset.class_count();
    let n = dataset.len();

    // Shuffled per-class index pools.
    let pools: Vec<Vec<usize>> = (0..k)
        .map(|class| {
            let mut pool: Vec<usize> =
                (0..n).filter(|&i| dataset.labels[i] == class).collect();
            shuffle(&mut pool, &mut seed::stream(seed, &[tags::PARTITION, class as u64]));
            pool
        })
        .collect();
    let mut cursors = vec![0usize; k];

    // Per-client class quotas.
    let quotas: Vec<Vec<usize>> = match strategy {
        PartitionStrategy::Quota(table) => {
            if table.clients() != clients {
                return Err(Error::Config(format!(
                    "quota table covers {} clients, run asks for {clients}",
                    table.clients()
                )));
            }
            if table.class_names != dataset.class_names {
                return Err(Error::Config(
                    "quota table classes do not match the dataset".into(),
                ));
            }
            table.quotas.clone()
        }
        PartitionStrategy::Dirichlet { alpha } => {
            if *alpha <= 0.0 {
                return Err(Error::Config("dirichlet alpha must be positive".into()));
            }
            let shares = size_profile.shares(clients)?;
            let mut rng = seed::stream(seed, &[tags::PARTITION, u64::MAX]);
            let mut quotas = vec![vec![0usize; k]; clients];
            for (class, pool) in pools.iter().enumerate() {
                let budget =
                    pool.len() - (pool.len() as f64 * server_fraction).round() as usize;
                // Dirichlet over clients via normalized Gamma draws; the
                // concentration follows the size profile so expected sizes
                // track it.
                let mut w: Vec<f64> = shares
                    .iter()
                    .map(|&s| {
                        let conc = (alpha * clients as f64 * s).max(1e-3);
                        Gamma::new(conc, 1.0).unwrap().sample(&mut rng).max(1e-300)
                    })
                    .collect();
                let total: f64 = w.iter().sum();
                for v in w.iter_mut() {
                    *v /= total;
                }
                for (client, q) in apportion(budget, &w).into_iter().enumerate() {
                    quotas[client][class] = q;
                }
            }
            quotas
        }
        PartitionStrategy::Proportional => {
            let shares = size_profile.shares(clients)?;
            let mut quotas = vec![vec![0usize; k]; clients];
            for (class, pool) in pools.iter().enumerate() {
                let budget =
                    pool.len() - (pool.len() as f64 * server_fraction).round() as usize;
                for (client, q) in apportion(budget, &shares).into_iter().enumerate() {
                    quotas[client][class] = q;
                }
            }
            quotas
        }
    };

    // Assign client indices from the pools.
    let mut client_indices: Vec<Vec<usize>> = vec![Vec::new(); clients];
    for (client, quota) in quotas.iter().enumerate() {
        for (class, &count) in quota.iter().enumerate() {
            let available = pools[class].len() - cursors[class];
            if count > available {
                return Err(Error::Partition(format!(
                    "quota of {count} exceeds remaining {available} samples of class {:?}",
                    dataset.class_names[class]
                )));
            }
            client_indices[client]
                .extend_from_slice(&pools[class][cursors[class]..cursors[class] + count]);
            cursors[class] += count;
        }
        client_indices[client].sort_unstable();
    }

    // Server split: class-stratified over what remains.
    let server_target = (n as f64 * server_fraction).round() as usize;
    let remaining: Vec<usize> = (0..k).map(|c| pools[c].len() - cursors[c]).collect();
    let remaining_total: usize = remaining.iter().sum();
    if server_target > remaining_total {
        return Err(Error::Partition(format!(
            "server split needs {server_target} samples but only {remaining_total} remain"
        )));
    }
    let mut server_indices = Vec::with_capacity(server_target);
    if server_target > 0 {
        let w: Vec<f64> =
            remaining.iter().map(|&r| r as f64 / remaining_total as f64).collect();
        for (class, want) in apportion(server_target, &w).into_iter().enumerate() {
            let take = want.min(remaining[class]);
            server_indices
                .extend_from_slice(&pools[class][cursors[class]..cursors[class] + take]);
            cursors[class] += take;
        }
        server_indices.sort_unstable();
    }

    let client_histograms: Vec<Vec<u64>> = client_indices
        .iter()
        .map(|idx| {
            let mut h = vec![0u64; k];
            for &i in idx {
                h[dataset.labels[i]] += 1;
            }
            h
        })
        .collect();
    let client_entropy = client_histograms
        .iter()
        .map(|h| {
            if h.iter().sum::<u64>() == 0 {
                0.0
            } else {
                shannon_entropy(h, k).unwrap()
            }
        })
        .collect();

    Ok(ScenarioPartition { client_indices, server_indices, client_histograms, client_entropy })
}
