//! Semi-supervised training procedures.
//!
//! Clients run pseudo-label training on unlabeled features: per mini-batch,
//! the current model's predictions are thresholded, confident rows receive
//! their argmax class as a constant one-hot target, the rest are masked out
//! of the loss, and one optimizer step is taken. The server runs ordinary
//! supervised mini-batch cross-entropy on its labeled split.

use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{ModelSpec, ParamVector, VersionedModel};
use crate::nn::{self, DropoutMode, OptimizerState};
use crate::seed::{self, tags};

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelConfig {
    /// Confidence threshold; a row whose max probability is >= threshold is
    /// pseudo-labeled (inclusive comparison).
    pub threshold: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for PseudoLabelConfig {
    fn default() -> Self {
        Self { threshold: 0.95, batch_size: 100, epochs: 1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub mean_loss: f64,
    /// Fraction of samples whose confidence passed the threshold.
    pub coverage: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingStats {
    pub epochs: Vec<EpochStats>,
    /// Pseudo-label class counts from the final epoch (all zeros for
    /// supervised training or when nothing passed the threshold).
    pub pseudo_label_counts: Vec<u64>,
}

impl TrainingStats {
    pub fn final_coverage(&self) -> f64 {
        self.epochs.last().map_or(0.0, |e| e.coverage)
    }

    /// Pseudo-label counts normalized to a probability vector; uniform when
    /// no sample passed the threshold.
    pub fn label_histogram(&self, classes: usize) -> Vec<f64> {
        let total: u64 = self.pseudo_label_counts.iter().sum();
        if total == 0 || self.pseudo_label_counts.len() != classes {
            return vec![1.0 / classes as f64; classes];
        }
        self.pseudo_label_counts.iter().map(|&c| c as f64 / total as f64).collect()
    }
}

fn fisher_yates(n: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    order
}

/// Pseudo-label training over an unlabeled partition. Deterministic for a
/// given seed, which drives both shuffling and dropout. An empty partition
/// returns the start parameters unchanged with zero coverage.
pub fn client_local_training(
    start: &VersionedModel,
    features: &Matrix,
    spec: &ModelSpec,
    cfg: &PseudoLabelConfig,
    opt: &mut OptimizerState,
    seed: u64,
) -> Result<(ParamVector, TrainingStats)> {
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if !(0.0..=1.0).contains(&cfg.threshold) {
        return Err(Error::Config(format!("threshold {} outside (0,1]", cfg.threshold)));
    }
    let classes = spec.class_count();
    let mut params = start.params.clone();
    let mut stats = TrainingStats {
        epochs: Vec::with_capacity(cfg.epochs),
        pseudo_label_counts: vec![0; classes],
    };
    if features.is_empty() {
        stats.epochs.push(EpochStats { mean_loss: 0.0, coverage: 0.0 });
        return Ok((params, stats));
    }

    let n = features.rows();
    for epoch in 0..cfg.epochs {
        let mut shuffle_rng = seed::stream(seed, &[tags::SHUFFLE, epoch as u64]);
        let order = fisher_yates(n, &mut shuffle_rng);
        let mut passed = 0usize;
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        let mut counts = vec![0u64; classes];

        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = features.select_rows(chunk);
            // Pseudo-labels come from the current model in eval mode.
            let probs = nn::forward(&params, spec, &batch)?;
            let mut targets = Matrix::zeros(batch.rows(), classes);
            let mut mask = vec![false; batch.rows()];
            for r in 0..batch.rows() {
                let row = probs.row(r);
                let (argmax, max) = row
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                        if v > bv { (i, v) } else { (bi, bv) }
                    });
                if max >= cfg.threshold {
                    mask[r] = true;
                    targets.set(r, argmax, 1.0);
                    passed += 1;
                    counts[argmax] += 1;
                }
            }
            let dropout = DropoutMode::Train {
                seed: seed::derive(seed, &[tags::DROPOUT, epoch as u64, batch_idx as u64]),
            };
            let (loss, grad) = nn::loss_and_grad(&params, spec, &batch, &targets, &mask, dropout)?;
            opt.step(&mut params, &grad)?;
            loss_sum += loss;
            batches += 1;
        }

        stats.epochs.push(EpochStats {
            mean_loss: loss_sum / batches as f64,
            coverage: passed as f64 / n as f64,
        });
        stats.pseudo_label_counts = counts;
    }
    Ok((params, stats))
}

/// Supervised mini-batch cross-entropy training on labeled data.
/// `epochs == 0` returns the start parameters bitwise.
pub fn server_supervised_training(
    start: &ParamVector,
    features: &Matrix,
    labels: &[usize],
    spec: &ModelSpec,
    epochs: usize,
    batch_size: usize,
    opt: &mut OptimizerState,
    seed: u64,
) -> Result<(ParamVector, TrainingStats)> {
    if features.is_empty() {
        return Err(Error::Config("server supervised training requires labeled data".into()));
    }
    if labels.len() != features.rows() {
        return Err(Error::Dimension(format!(
            "{} labels for {} rows",
            labels.len(),
            features.rows()
        )));
    }
    let classes = spec.class_count();
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Input(format!("label {bad} outside 0..{classes}")));
    }
    let mut params = start.clone();
    let mut stats = TrainingStats::default();
    let n = features.rows();
    let mask = vec![true; batch_size.min(n)];

    for epoch in 0..epochs {
        let mut shuffle_rng = seed::stream(seed, &[tags::SHUFFLE, epoch as u64]);
        let order = fisher_yates(n, &mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (batch_idx, chunk) in order.chunks(batch_size).enumerate() {
            let batch = features.select_rows(chunk);
            let mut targets = Matrix::zeros(batch.rows(), classes);
            for (r, &idx) in chunk.iter().enumerate() {
                targets.set(r, labels[idx], 1.0);
            }
            let dropout = DropoutMode::Train {
                seed: seed::derive(seed, &[tags::DROPOUT, epoch as u64, batch_idx as u64]),
            };
            let (loss, grad) = nn::loss_and_grad(
                &params,
                spec,
                &batch,
                &targets,
                &mask[..batch.rows()],
                dropout,
            )?;
            opt.step(&mut params, &grad)?;
            loss_sum += loss;
            batches += 1;
        }
        stats
            .epochs
            .push(EpochStats { mean_loss: loss_sum / batches as f64, coverage: 1.0 });
    }
    stats.pseudo_label_counts = vec![0; classes];
    Ok((params, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;
    use crate::nn::OptimizerKind;
    use crate::seed;
    use rand::Rng;

    fn blob_features(n_per: usize, seed_val: u64) -> (Matrix, Vec<usize>) {
        // Two well-separated 2-d blobs.
        let mut rng = seed::stream(seed_val, &[tags::DATA]);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for class in 0..2usize {
            let center = if class == 0 { -4.0 } else { 4.0 };
            for _ in 0..n_per {
                rows.push(vec![
                    center + rng.gen_range(-1.0..1.0),
                    center + rng.gen_range(-1.0..1.0),
                ]);
                labels.push(class);
            }
        }
        (Matrix::from_rows(&rows).unwrap(), labels)
    }

    fn accuracy(params: &ParamVector, spec: &ModelSpec, x: &Matrix, y: &[usize]) -> f64 {
        let probs = nn::forward(params, spec, x).unwrap();
        let mut hit = 0usize;
        for r in 0..x.rows() {
            let row = probs.row(r);
            let pred = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            if pred == y[r] {
                hit += 1;
            }
        }
        hit as f64 / x.rows() as f64
    }

    #[test]
    fn empty_partition_returns_start_unchanged() {
        let spec = ModelSpec::new(vec![2, 3, 2], 0.0, 0.0).unwrap();
        let start = VersionedModel {
            params: ParamVector::random_init(&spec, &mut seed::stream(1, &[tags::INIT])),
            version: 0,
        };
        let features = Matrix::zeros(0, 2);
        let mut opt = OptimizerState::sgd(0.1);
        let (end, stats) = client_local_training(
            &start,
            &features,
            &spec,
            &PseudoLabelConfig::default(),
            &mut opt,
            9,
        )
        .unwrap();
        assert_eq!(end, start.params);
        assert_eq!(stats.final_coverage(), 0.0);
    }

    #[test]
    fn threshold_above_all_confidences_leaves_only_l1_motion() {
        let spec = ModelSpec::new(vec![2, 4, 2], 0.0, 0.0).unwrap();
        let (features, _) = blob_features(20, 2);
        let start = VersionedModel {
            params: ParamVector::random_init(&spec, &mut seed::stream(3, &[tags::INIT])),
            version: 0,
        };
        let cfg = PseudoLabelConfig { threshold: 1.0, batch_size: 16, epochs: 1 };
        let mut opt = OptimizerState::sgd(0.5);
        let (end, stats) =
            client_local_training(&start, &features, &spec, &cfg, &mut opt, 4).unwrap();
        // Softmax confidence is strictly below 1, so everything is masked and
        // with l1 = 0 parameters cannot move at all.
        assert_eq!(stats.final_coverage(), 0.0);
        assert_eq!(end, start.params);
    }

    #[test]
    fn zero_threshold_labels_every_sample() {
        let spec = ModelSpec::new(vec![2, 4, 2], 0.0, 0.0).unwrap();
        let (features, _) = blob_features(15, 5);
        let start = VersionedModel {
            params: ParamVector::random_init(&spec, &mut seed::stream(6, &[tags::INIT])),
            version: 0,
        };
        let cfg = PseudoLabelConfig { threshold: 0.0, batch_size: 10, epochs: 2 };
        let mut opt = OptimizerState::sgd(0.05);
        let (_, stats) =
            client_local_training(&start, &features, &spec, &cfg, &mut opt, 7).unwrap();
        for e in &stats.epochs {
            assert_eq!(e.coverage, 1.0);
        }
        let total: u64 = stats.pseudo_label_counts.iter().sum();
        assert_eq!(total, 30);
    }

    #[test]
    fn confidence_exactly_at_threshold_is_included() {
        // Zero weights on a 2-class head give exactly 0.5 confidence.
        let spec = ModelSpec::new(vec![2, 2], 0.0, 0.0).unwrap();
        let start = VersionedModel { params: ParamVector::zeros(&spec), version: 0 };
        let features = Matrix::from_rows(&[vec![1.0, -1.0], vec![0.5, 0.25]]).unwrap();
        let cfg = PseudoLabelConfig { threshold: 0.5, batch_size: 2, epochs: 1 };
        let mut opt = OptimizerState::sgd(0.0);
        let (_, stats) =
            client_local_training(&start, &features, &spec, &cfg, &mut opt, 8).unwrap();
        assert_eq!(stats.final_coverage(), 1.0);
    }

    #[test]
    fn coverage_is_monotone_in_threshold() {
        let spec = ModelSpec::new(vec![2, 4, 2], 0.0, 0.0).unwrap();
        let (features, _) = blob_features(25, 9);
        let start = VersionedModel {
            params: ParamVector::random_init(&spec, &mut seed::stream(10, &[tags::INIT])),
            version: 0,
        };
        let mut last = 1.1;
        for threshold in [0.0, 0.3, 0.5, 0.7, 0.9, 0.99, 1.0] {
            let cfg = PseudoLabelConfig { threshold, batch_size: 1000, epochs: 1 };
            // lr 0 keeps the model fixed so coverage depends only on the
            // threshold.
            let mut opt = OptimizerState::sgd(0.0);
            let (_, stats) =
                client_local_training(&start, &features, &spec, &cfg, &mut opt, 11).unwrap();
            assert!(stats.final_coverage() <= last + 1e-12);
            last = stats.final_coverage();
        }
    }

    #[test]
    fn masked_out_batch_matches_all_masked_gradient() {
        // With the threshold above every confidence, the applied update must
        // equal the pure-L1 update: data gradient contributes exactly zero.
        let spec = ModelSpec::new(vec![2, 3, 2], 0.0, 0.01).unwrap();
        let (features, _) = blob_features(8, 12);
        let params = ParamVector::random_init(&spec, &mut seed::stream(13, &[tags::INIT]));
        let start = VersionedModel { params: params.clone(), version: 0 };
        let cfg = PseudoLabelConfig { threshold: 1.0, batch_size: 16, epochs: 1 };
        let mut opt = OptimizerState::sgd(0.1);
        let (end, _) =
            client_local_training(&start, &features, &spec, &cfg, &mut opt, 14).unwrap();

        let batch = Matrix::zeros(0, 2);
        let targets = Matrix::zeros(0, 2);
        let (_, l1_grad) =
            nn::loss_and_grad(&params, &spec, &batch, &targets, &[], DropoutMode::Eval).unwrap();
        let mut expected = params.clone();
        OptimizerState::sgd(0.1).step(&mut expected, &l1_grad).unwrap();
        assert_eq!(end, expected);
    }

    #[test]
    fn pseudo_label_training_preserves_accuracy_on_separated_blobs() {
        let spec = ModelSpec::new(vec![2, 8, 2], 0.0, 0.0).unwrap();
        let (features, labels) = blob_features(60, 15);
        // Pre-train to high accuracy on a labeled subset.
        let init = ParamVector::random_init(&spec, &mut seed::stream(16, &[tags::INIT]));
        let mut opt = OptimizerState::new(OptimizerKind::Adam, 0.01, init.len());
        let (pre, _) = server_supervised_training(
            &init, &features, &labels, &spec, 20, 32, &mut opt, 17,
        )
        .unwrap();
        let before = accuracy(&pre, &spec, &features, &labels);
        assert!(before >= 0.9, "pre-training should reach 90%, got {before}");

        let start = VersionedModel { params: pre, version: 0 };
        let cfg = PseudoLabelConfig { threshold: 0.95, batch_size: 32, epochs: 1 };
        let mut opt = OptimizerState::new(OptimizerKind::Adam, 0.001, start.params.len());
        let (end, _) =
            client_local_training(&start, &features, &spec, &cfg, &mut opt, 18).unwrap();
        let after = accuracy(&end, &spec, &features, &labels);
        assert!(after >= before - 0.01, "accuracy dropped from {before} to {after}");
    }

    #[test]
    fn supervised_training_zero_epochs_is_identity() {
        let spec = ModelSpec::new(vec![2, 3, 2], 0.0, 0.0).unwrap();
        let start = ParamVector::random_init(&spec, &mut seed::stream(19, &[tags::INIT]));
        let (features, labels) = blob_features(5, 20);
        let mut opt = OptimizerState::sgd(0.1);
        let (end, _) = server_supervised_training(
            &start, &features, &labels, &spec, 0, 4, &mut opt, 21,
        )
        .unwrap();
        assert_eq!(end, start);
    }

    #[test]
    fn supervised_training_fits_linearly_separable_data() {
        let spec = ModelSpec::new(vec![2, 2], 0.0, 0.0).unwrap();
        let start = ParamVector::zeros(&spec);
        let (features, labels) = blob_features(40, 22);
        let mut opt = OptimizerState::sgd(0.5);
        let (end, _) = server_supervised_training(
            &start, &features, &labels, &spec, 50, 20, &mut opt, 23,
        )
        .unwrap();
        assert!(accuracy(&end, &spec, &features, &labels) >= 0.99);
    }

    #[test]
    fn supervised_training_rejects_empty_data() {
        let spec = ModelSpec::new(vec![2, 2], 0.0, 0.0).unwrap();
        let start = ParamVector::zeros(&spec);
        let mut opt = OptimizerState::sgd(0.1);
        let err = server_supervised_training(
            &start,
            &Matrix::zeros(0, 2),
            &[],
            &spec,
            1,
            4,
            &mut opt,
            24,
        );
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn training_is_deterministic_given_seed() {
        let spec = ModelSpec::new(vec![2, 6, 2], 0.1, 1e-4).unwrap();
        let (features, labels) = blob_features(30, 25);
        let start = ParamVector::random_init(&spec, &mut seed::stream(26, &[tags::INIT]));

        let run = |seed_val: u64| {
            let mut opt = OptimizerState::new(OptimizerKind::Adam, 0.005, start.len());
            server_supervised_training(
                &start, &features, &labels, &spec, 3, 16, &mut opt, seed_val,
            )
            .unwrap()
            .0
        };
        assert_eq!(run(42), run(42));
        assert_ne!(run(42), run(43));

        let vm = VersionedModel { params: start.clone(), version: 0 };
        let run_client = |seed_val: u64| {
            let mut opt = OptimizerState::new(OptimizerKind::Adam, 0.005, start.len());
            client_local_training(
                &vm,
                &features,
                &spec,
                &PseudoLabelConfig { threshold: 0.6, batch_size: 16, epochs: 2 },
                &mut opt,
                seed_val,
            )
            .unwrap()
        };
        assert_eq!(run_client(7), run_client(7));
    }
}
