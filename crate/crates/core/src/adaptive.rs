//! Per-client adaptive learning rates.
//!
//! A client's relative participation frequency is a round-weighted sum over
//! the rounds it joined, normalized across clients. More frequent (and more
//! recent) participation raises the frequency, which lowers the learning
//! rate `lambda / (M * f_i)`; rare participants get a higher rate, clamped
//! to one decade around the global rate.

use serde::{Deserialize, Serialize};

use crate::aggregation::ClientId;

/// Weight given to a participation event at absolute round `r`. All
/// variants are non-decreasing in `r`, so later rounds never count less.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RoundWeightFunction {
    Constant,
    /// `ln(1 + r)`; zero at round 0, the normalization handles it.
    Logarithmic,
    /// `(1 + r)^a`
    Polynomial { a: f64 },
    /// `(1 + a)^r`
    ExponentialSmoothing { a: f64 },
    /// `a^r`, `a > 1`
    Exponential { a: f64 },
}

impl RoundWeightFunction {
    pub fn default_polynomial() -> Self {
        Self::Polynomial { a: 0.5 }
    }

    pub fn default_exponential_smoothing() -> Self {
        Self::ExponentialSmoothing { a: 0.1 }
    }

    pub fn default_exponential() -> Self {
        Self::Exponential { a: std::f64::consts::E / 2.0 }
    }

    pub fn weight(&self, round: u64) -> f64 {
        let r = round as f64;
        match *self {
            Self::Constant => 1.0,
            Self::Logarithmic => (1.0 + r).ln(),
            Self::Polynomial { a } => (1.0 + r).powf(a),
            Self::ExponentialSmoothing { a } => (1.0 + a).powf(r),
            Self::Exponential { a } => a.powf(r),
        }
    }

    pub fn is_strictly_increasing(&self) -> bool {
        !matches!(self, Self::Constant)
    }
}

/// Participation history of every client, plus the frequency computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipationTracker {
    joined_rounds: Vec<Vec<u64>>,
}

impl ParticipationTracker {
    pub fn new(clients: usize) -> Self {
        Self { joined_rounds: vec![Vec::new(); clients] }
    }

    pub fn clients(&self) -> usize {
        self.joined_rounds.len()
    }

    /// Records that a client joined the global update of `round`.
    /// History stays strictly increasing; re-recording is a no-op.
    pub fn record(&mut self, client: ClientId, round: u64) {
        let history = &mut self.joined_rounds[client.0];
        if history.last().is_none_or(|&last| round > last) {
            history.push(round);
        }
    }

    pub fn history(&self, client: ClientId) -> &[u64] {
        &self.joined_rounds[client.0]
    }

    pub fn participation_count(&self, client: ClientId) -> usize {
        self.joined_rounds[client.0].len()
    }

    /// Relative frequencies under the given round-weight function:
    /// `f_i = sum_{r in P_i} h(r) / sum_j sum_{r in P_j} h(r)`.
    ///
    /// With the constant function this reduces to plain count
    /// normalization. Before anyone has participated (or when all weights
    /// vanish) the frequencies are uniform `1/M`.
    pub fn frequencies(&self, h: &RoundWeightFunction) -> Vec<f64> {
        let m = self.joined_rounds.len();
        let per_client: Vec<f64> = self
            .joined_rounds
            .iter()
            .map(|rounds| rounds.iter().map(|&r| h.weight(r)).sum())
            .collect();
        let total: f64 = per_client.iter().sum();
        if total <= 0.0 {
            return vec![1.0 / m as f64; m];
        }
        per_client.iter().map(|w| w / total).collect()
    }
}

/// `eta_i = lambda / (M * f_i)`, clamped to `[lambda/10, 10*lambda]`.
/// A vanishing frequency is floored at `1/(10M)` before the formula, which
/// lands on the upper clamp.
pub fn adaptive_rate(frequency: f64, lambda: f64, clients: usize) -> f64 {
    let m = clients as f64;
    let f = if frequency > 0.0 { frequency } else { 1.0 / (10.0 * m) };
    let eta = lambda / (m * f);
    eta.clamp(lambda / 10.0, 10.0 * lambda)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_functions() -> Vec<RoundWeightFunction> {
        vec![
            RoundWeightFunction::Constant,
            RoundWeightFunction::Logarithmic,
            RoundWeightFunction::default_polynomial(),
            RoundWeightFunction::default_exponential_smoothing(),
            RoundWeightFunction::default_exponential(),
        ]
    }

    #[test]
    fn round_weights_are_positive_and_non_decreasing() {
        for h in all_functions() {
            let mut last = 0.0;
            for r in 0..30 {
                let w = h.weight(r);
                assert!(w >= last, "{h:?} decreased at {r}");
                if r >= 1 {
                    assert!(w > 0.0, "{h:?} not positive at {r}");
                }
                last = w;
            }
        }
    }

    #[test]
    fn equal_counts_under_constant_weight_are_equal_frequencies() {
        let mut t = ParticipationTracker::new(3);
        for (c, rounds) in [(0, [0u64, 1]), (1, [0, 2]), (2, [1, 3])] {
            for r in rounds {
                t.record(ClientId(c), r);
            }
        }
        let f = t.frequencies(&RoundWeightFunction::Constant);
        for v in &f {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn recency_orders_clients_under_any_increasing_weight() {
        // C1 joined rounds {0,1}, C2 {0,2}, C3 {1,3}: the later the rounds,
        // the larger the frequency.
        let mut t = ParticipationTracker::new(3);
        for (c, rounds) in [(0, [0u64, 1]), (1, [0, 2]), (2, [1, 3])] {
            for r in rounds {
                t.record(ClientId(c), r);
            }
        }
        for h in all_functions() {
            if !h.is_strictly_increasing() {
                continue;
            }
            let f = t.frequencies(&h);
            assert!(f[2] > f[1], "{h:?}: f(C3)={} !> f(C2)={}", f[2], f[1]);
            assert!(f[1] > f[0], "{h:?}: f(C2)={} !> f(C1)={}", f[1], f[0]);
        }
    }

    #[test]
    fn frequencies_sum_to_one_for_any_history() {
        let mut t = ParticipationTracker::new(5);
        let joins: [(usize, u64); 8] =
            [(0, 0), (1, 0), (0, 1), (2, 2), (3, 2), (0, 3), (4, 5), (2, 6)];
        for (c, r) in joins {
            t.record(ClientId(c), r);
        }
        for h in all_functions() {
            let f = t.frequencies(&h);
            let sum: f64 = f.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "{h:?} sums to {sum}");
        }
    }

    #[test]
    fn before_any_participation_frequencies_are_uniform() {
        let t = ParticipationTracker::new(4);
        for h in all_functions() {
            assert_eq!(t.frequencies(&h), vec![0.25; 4]);
        }
    }

    #[test]
    fn single_participant_takes_all_frequency() {
        let mut t = ParticipationTracker::new(4);
        t.record(ClientId(2), 3);
        let f = t.frequencies(&RoundWeightFunction::default_exponential());
        assert_eq!(f[2], 1.0);
        assert_eq!(f[0] + f[1] + f[3], 0.0);
    }

    #[test]
    fn constant_weight_reduces_to_count_normalization() {
        let mut t = ParticipationTracker::new(3);
        for (c, r) in [(0usize, 0u64), (0, 1), (0, 2), (1, 3), (1, 4), (2, 5)] {
            t.record(ClientId(c), r);
        }
        let f = t.frequencies(&RoundWeightFunction::Constant);
        assert!((f[0] - 3.0 / 6.0).abs() < 1e-15);
        assert!((f[1] - 2.0 / 6.0).abs() < 1e-15);
        assert!((f[2] - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn history_stays_strictly_increasing() {
        let mut t = ParticipationTracker::new(1);
        t.record(ClientId(0), 2);
        t.record(ClientId(0), 2);
        t.record(ClientId(0), 5);
        assert_eq!(t.history(ClientId(0)), &[2, 5]);
    }

    #[test]
    fn adaptive_rate_formula_and_clamp() {
        // uniform participation keeps the global rate
        assert_eq!(adaptive_rate(0.1, 1e-4, 10), 1e-4);
        // direct arithmetic
        assert!((adaptive_rate(0.2, 1e-4, 10) - 5e-5).abs() < 1e-20);
        // vanishing frequency caps at 10x
        assert_eq!(adaptive_rate(0.0, 1e-4, 10), 1e-3);
        assert_eq!(adaptive_rate(1e-9, 1e-4, 10), 1e-3);
        // dominant frequency floors at a tenth
        assert_eq!(adaptive_rate(1.0, 1e-4, 1000), 1e-5);
        // strictly decreasing in frequency before the clamp
        let mut last = f64::INFINITY;
        for f in [0.05, 0.1, 0.2, 0.4, 0.8] {
            let eta = adaptive_rate(f, 1e-4, 10);
            assert!(eta <= last);
            last = eta;
        }
    }
}
