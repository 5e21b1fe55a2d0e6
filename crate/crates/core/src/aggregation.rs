//! Global-model arithmetic.
//!
//! Covers the plain size-weighted average, the dynamic supervised weight
//! schedule, staleness discounting, and group-based aggregation with
//! k-means grouping of client class histograms. All functions are pure and
//! deterministic; k-means draws from its own seeded stream.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ParamVector, VersionedModel};
use crate::seed;

/// Identifier of a simulated client.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct ClientId(pub usize);

impl std::fmt::Display for ClientId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "C{}", self.0)
    }
}

/// Size-weighted mean of parameter vectors (the classic federated average).
/// Weights are `|D_i| / sum |D_j|`, so they sum to one exactly.
pub fn fedavg(models: &[(ParamVector, usize)]) -> Result<ParamVector> {
    if models.is_empty() {
        return Err(Error::Input("fedavg over an empty model list".into()));
    }
    if models.iter().any(|(_, size)| *size == 0) {
        return Err(Error::Input("fedavg weights must be positive".into()));
    }
    let len = models[0].0.len();
    let total: u64 = models.iter().map(|(_, s)| *s as u64).sum();
    let mut acc = models[0].0.zeros_like();
    for (model, size) in models {
        if model.len() != len {
            return Err(Error::Dimension("fedavg over mismatched vectors".into()));
        }
        let w = *size as f64;
        for (a, &v) in acc.values_mut().iter_mut().zip(model.values()) {
            *a += w * v;
        }
    }
    let t = total as f64;
    for a in acc.values_mut() {
        *a /= t;
    }
    Ok(acc)
}

/// Dynamic supervised-learning weight `f(r) = beta + (alpha - beta) * decay^r`:
/// starts at `alpha`, decreases monotonically, approaches `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupervisedWeightSchedule {
    pub alpha: f64,
    pub beta: f64,
    pub decay: f64,
}

impl SupervisedWeightSchedule {
    /// The default schedule: alpha 1/2, beta `1/(C*M + 1)` (the server ends
    /// up weighted like an average client), decay 0.9.
    pub fn for_participation(participation: f64, clients: usize) -> Self {
        Self {
            alpha: 0.5,
            beta: 1.0 / (participation * clients as f64 + 1.0),
            decay: 0.9,
        }
    }

    /// A constant weight (ablation mode).
    pub fn fixed(weight: f64) -> Self {
        Self { alpha: weight, beta: weight, decay: 0.9 }
    }

    pub fn weight(&self, round: u64) -> f64 {
        self.beta + (self.alpha - self.beta) * self.decay.powi(round as i32)
    }
}

/// Staleness discount `g(gap)` applied to a model trained `gap` global
/// rounds ago. All variants satisfy `g(0) = 1` and are non-increasing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StalenessFunction {
    Constant,
    /// `(gap + 1)^-a`
    Polynomial { a: f64 },
    /// `1` while `gap <= b`, otherwise `1 / (a * (gap + b) + 1)`
    Hinge { a: f64, b: f64 },
    /// `a^-gap`, `a > 1`
    Exponential { a: f64 },
}

impl StalenessFunction {
    /// Cited parameter choices: polynomial a = 1/2, hinge a = 1 b = 0,
    /// exponential a = e/2.
    pub fn default_polynomial() -> Self {
        Self::Polynomial { a: 0.5 }
    }

    pub fn default_hinge() -> Self {
        Self::Hinge { a: 1.0, b: 0.0 }
    }

    pub fn default_exponential() -> Self {
        Self::Exponential { a: std::f64::consts::E / 2.0 }
    }

    /// A negative gap means the version bookkeeping is broken upstream.
    pub fn weight(&self, gap: i64) -> Result<f64> {
        if gap < 0 {
            return Err(Error::Logic(format!("negative staleness gap {gap}")));
        }
        let gap = gap as f64;
        Ok(match *self {
            Self::Constant => 1.0,
            Self::Polynomial { a } => (gap + 1.0).powf(-a),
            Self::Hinge { a, b } => {
                if gap <= b {
                    1.0
                } else {
                    1.0 / (a * (gap + b) + 1.0)
                }
            }
            Self::Exponential { a } => a.powf(-gap),
        })
    }
}

/// Group-count and k-means controls for group-based aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupingConfig {
    pub groups: usize,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl GroupingConfig {
    pub fn new(groups: usize, seed: u64) -> Self {
        Self { groups, max_iterations: 100, tolerance: 1e-9, seed }
    }
}

/// Result of grouping: a dense group index per participant, in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct Grouping {
    pub assignments: Vec<usize>,
    pub group_count: usize,
}

impl Grouping {
    pub fn single(n: usize) -> Self {
        Self { assignments: vec![0; n], group_count: 1 }
    }

    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.group_count];
        for (i, &g) in self.assignments.iter().enumerate() {
            groups[g].push(i);
        }
        groups
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Partitions clients into at most `cfg.groups` groups by k-means over their
/// class histograms (k-means++ seeding, Lloyd iterations). The requested
/// group count is clamped to the participant count and empty groups are
/// dropped, so the effective count can be smaller.
pub fn group_clients(
    participants: &[(ClientId, Vec<f64>)],
    cfg: &GroupingConfig,
) -> Result<Grouping> {
    if participants.is_empty() {
        return Err(Error::Input("grouping requires at least one participant".into()));
    }
    if cfg.groups == 0 {
        return Err(Error::Config("group count must be positive".into()));
    }
    let dim = participants[0].1.len();
    for (id, hist) in participants {
        if hist.len() != dim {
            return Err(Error::Dimension(format!("histogram of {id} has wrong length")));
        }
        let sum: f64 = hist.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Input(format!("histogram of {id} sums to {sum}, not 1")));
        }
    }
    let k = cfg.groups.min(participants.len());
    if k == 1 {
        return Ok(Grouping::single(participants.len()));
    }

    let points: Vec<&[f64]> = participants.iter().map(|(_, h)| h.as_slice()).collect();
    let mut rng = seed::stream(cfg.seed, &[seed::tags::KMEANS]);

    // k-means++ seeding. Once a point is chosen its distance drops to zero,
    // so distinct points are preferred automatically.
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(points[rng.gen_range(0..points.len())].to_vec());
    while centroids.len() < k {
        let dists: Vec<f64> = points
            .iter()
            .map(|p| {
                centroids
                    .iter()
                    .map(|c| squared_distance(p, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = dists.iter().sum();
        let next = if total <= 0.0 {
            rng.gen_range(0..points.len())
        } else {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, &d) in dists.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        };
        centroids.push(points[next].to_vec());
    }

    // Lloyd iterations; assignment ties go to the lowest centroid index.
    let mut assignments = vec![0usize; points.len()];
    for _ in 0..cfg.max_iterations {
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let d = squared_distance(p, centroid);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            assignments[i] = best;
        }
        let mut shift: f64 = 0.0;
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<&&[f64]> = points
                .iter()
                .zip(&assignments)
                .filter(|(_, &a)| a == c)
                .map(|(p, _)| p)
                .collect();
            if members.is_empty() {
                continue; // keep the old centroid; dropped later if still empty
            }
            let mut mean = vec![0.0; dim];
            for p in &members {
                for (m, &v) in mean.iter_mut().zip(p.iter()) {
                    *m += v;
                }
            }
            for m in mean.iter_mut() {
                *m /= members.len() as f64;
            }
            shift = shift.max(squared_distance(&mean, centroid).sqrt());
            *centroid = mean;
        }
        if shift < cfg.tolerance {
            break;
        }
    }

    // Drop empty groups, renumbering densely in centroid order.
    let mut remap = vec![usize::MAX; k];
    let mut next = 0usize;
    for &a in &assignments {
        if remap[a] == usize::MAX {
            remap[a] = next;
            next += 1;
        }
    }
    // Renumber in first-appearance order of centroid index to stay stable.
    let mut remap_ordered = vec![usize::MAX; k];
    let mut count = 0usize;
    for c in 0..k {
        if assignments.iter().any(|&a| a == c) {
            remap_ordered[c] = count;
            count += 1;
        }
    }
    let assignments: Vec<usize> = assignments.iter().map(|&a| remap_ordered[a]).collect();
    Ok(Grouping { assignments, group_count: count })
}

/// One uploaded model entering a global update.
#[derive(Debug, Clone)]
pub struct Participant {
    pub id: ClientId,
    pub model: VersionedModel,
    pub data_size: usize,
    pub group: usize,
}

/// Group-based, staleness-discounted aggregation.
///
/// Per group the members are combined with weights
/// `(|D_i| / |D_group|) * g(round - version_i)`; with `normalize` set those
/// weights are renormalized to sum to one (restoring a convex combination;
/// without it the literal discounted sum is kept and the result's norm can
/// shrink). Groups are then combined by arithmetic mean, and the final model
/// is `f(round) * server + (1 - f(round)) * group_mean`.
pub fn aggregate(
    server_model: &ParamVector,
    participants: &[Participant],
    round: u64,
    schedule: &SupervisedWeightSchedule,
    staleness: &StalenessFunction,
    normalize: bool,
) -> Result<ParamVector> {
    if participants.is_empty() {
        return Err(Error::Input("aggregation requires participants".into()));
    }
    for p in participants {
        if p.model.params.len() != server_model.len() {
            return Err(Error::Dimension(format!("model of {} has wrong length", p.id)));
        }
        if !p.model.params.is_finite() {
            return Err(Error::NonFinite(format!("uploaded model of {}", p.id)));
        }
        if p.data_size == 0 {
            return Err(Error::Input(format!("{} has empty data", p.id)));
        }
    }
    if !server_model.is_finite() {
        return Err(Error::NonFinite("server model".into()));
    }

    let group_count = participants.iter().map(|p| p.group).max().unwrap() + 1;
    let mut group_sum = vec![server_model.zeros_like(); group_count];
    let mut group_seen = vec![false; group_count];

    for g in 0..group_count {
        let members: Vec<&Participant> =
            participants.iter().filter(|p| p.group == g).collect();
        if members.is_empty() {
            continue;
        }
        group_seen[g] = true;
        let group_size: u64 = members.iter().map(|p| p.data_size as u64).sum();
        let mut weights = Vec::with_capacity(members.len());
        for p in &members {
            let gap = round as i64 - p.model.version as i64;
            if gap < 0 {
                return Err(Error::Logic(format!(
                    "{} carries version {} newer than round {round}",
                    p.id, p.model.version
                )));
            }
            let w = (p.data_size as f64 / group_size as f64) * staleness.weight(gap)?;
            weights.push(w);
        }
        if normalize {
            let total: f64 = weights.iter().sum();
            for w in weights.iter_mut() {
                *w /= total;
            }
        }
        let acc = &mut group_sum[g];
        for (p, w) in members.iter().zip(&weights) {
            for (a, &v) in acc.values_mut().iter_mut().zip(p.model.params.values()) {
                *a += w * v;
            }
        }
    }

    let effective: Vec<usize> = (0..group_count).filter(|&g| group_seen[g]).collect();
    let mut client_term = server_model.zeros_like();
    for &g in &effective {
        for (c, &v) in client_term.values_mut().iter_mut().zip(group_sum[g].values()) {
            *c += v;
        }
    }
    let inv = 1.0 / effective.len() as f64;
    for c in client_term.values_mut() {
        *c *= inv;
    }

    let f = schedule.weight(round);
    let mut out = server_model.zeros_like();
    for ((o, &s), &c) in out
        .values_mut()
        .iter_mut()
        .zip(server_model.values())
        .zip(client_term.values())
    {
        *o = f * s + (1.0 - f) * c;
    }
    if !out.is_finite() {
        return Err(Error::NonFinite("aggregated model".into()));
    }
    Ok(out)
}
