//! The deterministic virtual-clock event loop.
//!
//! Clients train in simulated time and upload on completion; once a quorum
//! of `ceil(C * M)` uploads is in, the server trains its supervised pass,
//! aggregates, and distributes the new global model to the clients that
//! participated (latest) or whose version gap exceeds the tolerance
//! (deprecated, force-refreshed). Tolerable clients keep training on their
//! stale base and their later uploads count toward the next quorum.
//!
//! Everything is derived from the master seed: shuffling, dropout, duration
//! jitter, grouping and selection. Two runs with the same config produce
//! bit-identical models and traces.

use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::cmp::Reverse;

use crate::adaptive::{adaptive_rate, ParticipationTracker};
use crate::aggregation::{
    self, ClientId, Grouping, GroupingConfig, Participant,
};
use crate::config::{
    BaselineMode, DurationConfig, ExperimentConfig, HistogramSource, ScenarioKind,
    TransportKind,
};
use crate::data::{
    self, Dataset, PartitionStrategy, ScenarioPartition, Standardization,
};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics;
use crate::model::{ModelSpec, ParamVector, VersionedModel};
use crate::nn::OptimizerState;
use crate::report::{self, RoundRecord, RunSummary};
use crate::seed::{self, tags};
use crate::ssl::{self, PseudoLabelConfig};
use crate::transport;

/// Client taxonomy after a global update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClientClass {
    /// Participated in this round's update; receives the new model.
    Latest,
    /// Gap within tolerance; keeps training on its stale base.
    Tolerable,
    /// Gap beyond tolerance; force-refreshed (in-flight work aborted).
    Deprecated,
}

/// Classifies every client after the update that produced `new_version`.
/// Participants are latest regardless of their gap; everyone else is
/// deprecated iff `new_version - base > tolerance` (strict).
pub fn classify_clients(
    base_versions: &[u64],
    participants: &BTreeSet<usize>,
    new_version: u64,
    tolerance: u64,
) -> Vec<ClientClass> {
    base_versions
        .iter()
        .enumerate()
        .map(|(i, &base)| {
            if participants.contains(&i) {
                ClientClass::Latest
            } else if new_version - base > tolerance {
                ClientClass::Deprecated
            } else {
                ClientClass::Tolerable
            }
        })
        .collect()
}

/// Virtual training duration model: `kappa * |D|^exponent` with lognormal
/// jitter, or explicitly scripted per-attempt durations.
#[derive(Debug, Clone)]
pub struct DurationModel {
    scripted: Option<Vec<Vec<f64>>>,
    kappa: f64,
    exponent: f64,
    sigma: f64,
}

impl DurationModel {
    /// Calibrates the power-law scale so the largest partition maps to the
    /// configured longest duration.
    pub fn from_config(cfg: &DurationConfig, partition_sizes: &[usize]) -> Self {
        let largest = partition_sizes.iter().copied().max().unwrap_or(1).max(1) as f64;
        Self {
            scripted: cfg.scripted.clone(),
            kappa: cfg.target_longest_s / largest.powf(cfg.exponent),
            exponent: cfg.exponent,
            sigma: cfg.jitter_sigma,
        }
    }

    pub fn sample(&self, client: ClientId, data_size: usize, attempt: u64, master: u64) -> f64 {
        if let Some(rows) = &self.scripted {
            let row = &rows[client.0];
            return row[(attempt as usize).min(row.len() - 1)];
        }
        let base = self.kappa * (data_size.max(1) as f64).powf(self.exponent);
        if self.sigma == 0.0 {
            return base;
        }
        let mut rng = seed::stream(master, &[tags::DURATION, client.0 as u64, attempt]);
        use rand::Rng;
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen::<f64>();
        let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        base * (self.sigma * z).exp()
    }
}

/// Dataset, split and partition actually used by a run.
pub struct PreparedData {
    pub train: Dataset,
    pub test: Dataset,
    pub partition: ScenarioPartition,
    pub server_data: Dataset,
    pub spec: ModelSpec,
}

/// Builds (or loads), cleans, splits, standardizes and partitions the data
/// for a config. Deterministic in the config seed.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let raw = match cfg.scenario {
        ScenarioKind::Synthetic => data::make_synthetic(
            cfg.synthetic.classes,
            cfg.synthetic.per_class,
            cfg.synthetic.feature_dim,
            cfg.synthetic.separation,
            seed::derive(cfg.seed, &[tags::DATA]),
        )?,
        ScenarioKind::Basic | ScenarioKind::Balanced => {
            let path = cfg
                .data_path
                .as_ref()
                .ok_or_else(|| Error::Config("data_path: CSV scenarios need a dataset".into()))?;
            let (dataset, _report) = data::load_csv(path, &cfg.csv_schema())?;
            dataset
        }
    };
    let (mut train, mut test) = data::train_test_split(&raw, cfg.test_fraction, cfg.seed);
    let stats = Standardization::fit(&train);
    stats.apply(&mut train);
    stats.apply(&mut test);

    let strategy = match cfg.scenario {
        ScenarioKind::Synthetic => {
            PartitionStrategy::Dirichlet { alpha: cfg.synthetic.dirichlet_alpha }
        }
        ScenarioKind::Basic => PartitionStrategy::Quota(data::QuotaTable::cic_basic()),
        ScenarioKind::Balanced => PartitionStrategy::Quota(data::QuotaTable::cic_balanced()),
    };
    let partition = data::partition(
        &train,
        &strategy,
        cfg.clients,
        cfg.server_fraction,
        &cfg.size_profile,
        cfg.seed,
    )?;
    if partition.server_indices.is_empty() {
        return Err(Error::Config("server_fraction: produced an empty labeled split".into()));
    }
    let server_data = partition.server_dataset(&train);
    let spec = cfg.model_spec(train.features.cols(), train.class_count())?;
    Ok(PreparedData { train, test, partition, server_data, spec })
}

/// Everything a finished run yields.
pub struct RunOutput {
    pub final_model: ParamVector,
    pub ledger: Vec<RoundRecord>,
    pub summary: RunSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ClientStatus {
    Training,
    AwaitingModel,
}

/// Result of a training pass, computed when training starts and surfaced
/// when the completion event fires.
struct PendingResult {
    params: ParamVector,
    histogram: Vec<f64>,
    coverage: f64,
}

struct ClientState {
    id: ClientId,
    data_size: usize,
    /// The client's reconstruction of the last distributed global model.
    /// The server mirrors this exactly (it produced the bytes), so sparse
    /// transfers stay consistent on both sides.
    base_params: ParamVector,
    base_version: u64,
    learning_rate: f64,
    status: ClientStatus,
    attempt: u64,
    in_flight: Option<PendingResult>,
}

/// Upload completion event; the queue is a min-heap over
/// (time, client, attempt), which fixes the order of simultaneous events.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Event {
    time: f64,
    client: usize,
    attempt: u64,
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.client.cmp(&other.client))
            .then(self.attempt.cmp(&other.attempt))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

struct Upload {
    client: ClientId,
    model: VersionedModel,
    data_size: usize,
    histogram: Vec<f64>,
    coverage: f64,
}

#[derive(Default)]
struct ByteCounter {
    uplink: u64,
    downlink: u64,
    dense_equivalent: u64,
}

struct Engine<'a> {
    cfg: &'a ExperimentConfig,
    data: &'a PreparedData,
    master: u64,
    client_features: Vec<Matrix>,
    clients: Vec<ClientState>,
    durations: DurationModel,
    queue: BinaryHeap<Reverse<Event>>,
    buffer: VecDeque<Upload>,
    /// Server-side history of global models, deep enough for every legal
    /// uplink base (tolerance + 2 versions).
    cache: BTreeMap<u64, ParamVector>,
    version: u64,
    now: f64,
    round_started_at: f64,
    tracker: ParticipationTracker,
    bytes: ByteCounter,
    ledger: Vec<RoundRecord>,
    /// Sync-mode (fedavg) per-round selection; `None` in semi-async modes.
    selected: Option<Vec<usize>>,
}

impl<'a> Engine<'a> {
    fn new(cfg: &'a ExperimentConfig, data: &'a PreparedData, master: u64) -> Result<Self> {
        let m = cfg.clients;
        let client_features: Vec<Matrix> =
            (0..m).map(|c| data.partition.client_view(&data.train, c).features.clone()).collect();
        let sizes: Vec<usize> = (0..m).map(|c| data.partition.client_size(c)).collect();
        let durations = DurationModel::from_config(&cfg.duration, &sizes);

        // Warm-up: random init, then supervised epochs on the server split.
        let init = ParamVector::random_init(
            &data.spec,
            &mut seed::stream(master, &[tags::INIT]),
        );
        let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate, init.len());
        let (global0, _) = ssl::server_supervised_training(
            &init,
            &data.server_data.features,
            &data.server_data.labels,
            &data.spec,
            cfg.server_warmup_epochs,
            cfg.batch_size,
            &mut opt,
            seed::derive(master, &[tags::SERVER_TRAIN, u64::MAX]),
        )?;

        let clients: Vec<ClientState> = (0..m)
            .map(|c| ClientState {
                id: ClientId(c),
                data_size: sizes[c],
                base_params: global0.clone(),
                base_version: 0,
                learning_rate: cfg.learning_rate,
                status: ClientStatus::AwaitingModel,
                attempt: 0,
                in_flight: None,
            })
            .collect();
        let mut cache = BTreeMap::new();
        cache.insert(0u64, global0);

        Ok(Self {
            cfg,
            data,
            master,
            client_features,
            clients,
            durations,
            queue: BinaryHeap::new(),
            buffer: VecDeque::new(),
            cache,
            version: 0,
            now: 0.0,
            round_started_at: 0.0,
            tracker: ParticipationTracker::new(m),
            bytes: ByteCounter::default(),
            ledger: Vec::new(),
            selected: None,
        })
    }

    fn is_sync(&self) -> bool {
        matches!(
            self.cfg.baseline,
            BaselineMode::FedavgAll | BaselineMode::FedavgPartial
        )
    }

    fn global(&self) -> &ParamVector {
        &self.cache[&self.version]
    }

    fn param_len(&self) -> usize {
        self.data.spec.param_len()
    }

    fn select_for_round(&self, round: u64) -> Vec<usize> {
        match self.cfg.baseline {
            BaselineMode::FedavgAll => (0..self.cfg.clients).collect(),
            BaselineMode::FedavgPartial => {
                use rand::Rng;
                let mut rng = seed::stream(self.master, &[tags::SELECTION, round]);
                let mut ids: Vec<usize> = (0..self.cfg.clients).collect();
                for i in (1..ids.len()).rev() {
                    let j = rng.gen_range(0..=i);
                    ids.swap(i, j);
                }
                let mut picked: Vec<usize> = ids[..self.cfg.quorum()].to_vec();
                picked.sort_unstable();
                picked
            }
            _ => unreachable!("selection only happens in sync modes"),
        }
    }

    /// Sends the current global model to a client, charges the transfer and
    /// updates the client's base. The in-flight attempt, if any, is aborted
    /// by the attempt bump in `start_training`.
    fn distribute_to(&mut self, client: usize) {
        let dense = transport::dense_cost(self.param_len());
        let global = self.cache[&self.version].clone();
        let state = &mut self.clients[client];
        let cost = if self.cfg.transport == TransportKind::Sparse && self.version > 0 {
            let delta = transport::encode(
                &global,
                &state.base_params,
                state.base_version,
                self.cfg.zero_threshold,
            )
            .expect("shadow base length matches the global model");
            if delta.sparse_cost() < dense {
                state.base_params = transport::decode(&delta, &state.base_params)
                    .expect("delta encoded against the same base");
                delta.sparse_cost()
            } else {
                state.base_params = global;
                dense
            }
        } else {
            state.base_params = global;
            dense
        };
        state.base_version = self.version;
        self.bytes.downlink += cost;
        self.bytes.dense_equivalent += dense;
    }

    /// Runs the client's next training pass eagerly and schedules its upload
    /// at the simulated completion time.
    fn start_training(&mut self, client: usize) -> Result<()> {
        let state = &mut self.clients[client];
        state.attempt += 1;
        let attempt = state.attempt;
        let train_seed = seed::derive(
            self.master,
            &[tags::CLIENT_TRAIN, client as u64, state.base_version, attempt],
        );
        let start = VersionedModel {
            params: state.base_params.clone(),
            version: state.base_version,
        };
        let mut opt = OptimizerState::new(
            self.cfg.optimizer,
            state.learning_rate,
            start.params.len(),
        );
        let pl_cfg = PseudoLabelConfig {
            threshold: self.cfg.pseudo_label_threshold,
            batch_size: self.cfg.batch_size,
            epochs: self.cfg.local_epochs,
        };
        let (params, stats) = ssl::client_local_training(
            &start,
            &self.client_features[client],
            &self.data.spec,
            &pl_cfg,
            &mut opt,
            train_seed,
        )?;
        let classes = self.data.spec.class_count();
        state.in_flight = Some(PendingResult {
            params,
            histogram: stats.label_histogram(classes),
            coverage: stats.final_coverage(),
        });
        state.status = ClientStatus::Training;
        let duration =
            self.durations
                .sample(state.id, state.data_size, attempt - 1, self.master);
        self.queue.push(Reverse(Event { time: self.now + duration, client, attempt }));
        Ok(())
    }

    /// Applies the uplink transfer for a finished attempt and buffers the
    /// upload in arrival order.
    fn receive_upload(&mut self, client: usize) -> Result<()> {
        let dense = transport::dense_cost(self.param_len());
        let state = &mut self.clients[client];
        let result = state
            .in_flight
            .take()
            .ok_or_else(|| Error::Logic(format!("{} completed without work", state.id)))?;
        state.status = ClientStatus::AwaitingModel;

        // The receiver can only decode against a cached base version.
        if self.cfg.transport == TransportKind::Sparse
            && !self.cache.contains_key(&state.base_version)
        {
            return Err(Error::StalenessCache(state.base_version));
        }
        let (delivered, cost) = if self.cfg.transport == TransportKind::Sparse {
            let delta = transport::encode(
                &result.params,
                &state.base_params,
                state.base_version,
                self.cfg.zero_threshold,
            )?;
            if delta.sparse_cost() < dense {
                (transport::decode(&delta, &state.base_params)?, delta.sparse_cost())
            } else {
                (result.params, dense)
            }
        } else {
            (result.params, dense)
        };
        self.bytes.uplink += cost;
        self.bytes.dense_equivalent += dense;
        self.buffer.push_back(Upload {
            client: state.id,
            model: VersionedModel { params: delivered, version: state.base_version },
            data_size: state.data_size.max(1),
            histogram: result.histogram,
            coverage: result.coverage,
        });
        Ok(())
    }

    fn quorum_for_round(&self) -> usize {
        match &self.selected {
            Some(s) => s.len(),
            None => self.cfg.quorum(),
        }
    }

    /// Pops events until the quorum fills. Stale events (attempt mismatch
    /// after an abort) are discarded.
    fn wait_for_quorum(&mut self) -> Result<()> {
        while self.buffer.len() < self.quorum_for_round() {
            let Some(Reverse(event)) = self.queue.pop() else {
                return Err(Error::Protocol(format!(
                    "deadlock at t={}: {} of {} uploads buffered, no pending events; \
                     statuses: {:?}",
                    self.now,
                    self.buffer.len(),
                    self.quorum_for_round(),
                    self.clients.iter().map(|c| (c.id.0, c.status)).collect::<Vec<_>>()
                )));
            };
            if self.clients[event.client].attempt != event.attempt {
                continue; // aborted attempt
            }
            debug_assert!(event.time >= self.now);
            self.now = event.time;
            self.receive_upload(event.client)?;
        }
        Ok(())
    }

    fn oracle_histogram(&self, client: ClientId) -> Vec<f64> {
        let hist = self.data.partition.oracle_histogram(client.0);
        let total: u64 = hist.iter().sum();
        if total == 0 {
            vec![1.0 / hist.len() as f64; hist.len()]
        } else {
            hist.iter().map(|&c| c as f64 / total as f64).collect()
        }
    }

    fn run_round(&mut self, round: u64) -> Result<()> {
        self.wait_for_quorum()?;

        // Drain exactly the quorum; later arrivals stay buffered for the
        // next round.
        let quorum = self.quorum_for_round();
        let uploads: Vec<Upload> = (0..quorum)
            .map(|_| self.buffer.pop_front().expect("buffer holds a quorum"))
            .collect();

        // One supervised pass from the current global model.
        let mut opt = OptimizerState::new(
            self.cfg.optimizer,
            self.cfg.learning_rate,
            self.param_len(),
        );
        let (server_params, _) = ssl::server_supervised_training(
            self.global(),
            &self.data.server_data.features,
            &self.data.server_data.labels,
            &self.data.spec,
            self.cfg.local_epochs,
            self.cfg.batch_size,
            &mut opt,
            seed::derive(self.master, &[tags::SERVER_TRAIN, round]),
        )?;

        // Group participants by class histogram.
        let histograms: Vec<(ClientId, Vec<f64>)> = uploads
            .iter()
            .map(|u| {
                let h = match self.cfg.histogram_source {
                    HistogramSource::PseudoLabel => u.histogram.clone(),
                    HistogramSource::Oracle => self.oracle_histogram(u.client),
                };
                (u.client, h)
            })
            .collect();
        let grouping = if self.cfg.groups > 1 && uploads.len() > 1 {
            aggregation::group_clients(
                &histograms,
                &GroupingConfig::new(
                    self.cfg.groups,
                    seed::derive(self.master, &[tags::KMEANS, round]),
                ),
            )?
        } else {
            Grouping::single(uploads.len())
        };

        let participants: Vec<Participant> = uploads
            .iter()
            .zip(&grouping.assignments)
            .map(|(u, &group)| Participant {
                id: u.client,
                model: u.model.clone(),
                data_size: u.data_size,
                group,
            })
            .collect();
        let schedule = self.cfg.supervised_schedule();
        let new_global = aggregation::aggregate(
            &server_params,
            &participants,
            round,
            &schedule,
            &self.cfg.staleness(),
            self.cfg.normalize_weights,
        )?;

        self.version = round + 1;
        self.cache.insert(self.version, new_global);
        let horizon = self.version.saturating_sub(self.cfg.staleness_tolerance + 1);
        self.cache.retain(|&v, _| v >= horizon);

        // Participation bookkeeping and the rates applied at distribution.
        let participant_set: BTreeSet<usize> =
            uploads.iter().map(|u| u.client.0).collect();
        for &c in &participant_set {
            self.tracker.record(ClientId(c), round);
        }
        let rates: Vec<f64> = if self.cfg.adaptive_lr {
            self.tracker
                .frequencies(&self.cfg.round_weight())
                .iter()
                .map(|&f| adaptive_rate(f, self.cfg.learning_rate, self.cfg.clients))
                .collect()
        } else {
            vec![self.cfg.learning_rate; self.cfg.clients]
        };

        let bases: Vec<u64> = self.clients.iter().map(|c| c.base_version).collect();
        let classes = classify_clients(
            &bases,
            &participant_set,
            self.version,
            self.cfg.staleness_tolerance,
        );
        let classification_gaps: Vec<u64> = self
            .clients
            .iter()
            .zip(&classes)
            .map(|(c, class)| {
                if *class == ClientClass::Latest {
                    0
                } else {
                    self.version - c.base_version
                }
            })
            .collect();
        let deprecated: Vec<usize> = classes
            .iter()
            .enumerate()
            .filter(|(_, c)| **c == ClientClass::Deprecated)
            .map(|(i, _)| i)
            .collect();

        // Distribution. Semi-async: latest and deprecated clients receive
        // the new model and restart; tolerable clients keep their in-flight
        // work and their previously distributed rate. Sync baselines:
        // distribute to the next selected subset instead.
        if self.is_sync() {
            let next = self.select_for_round(round + 1);
            for &c in &next {
                self.clients[c].learning_rate = rates[c];
                self.distribute_to(c);
                self.start_training(c)?;
            }
            self.selected = Some(next);
        } else {
            for c in 0..self.cfg.clients {
                if classes[c] != ClientClass::Tolerable {
                    self.clients[c].learning_rate = rates[c];
                    self.distribute_to(c);
                    self.start_training(c)?;
                }
            }
        }

        let post_distribution_gaps: Vec<u64> =
            self.clients.iter().map(|c| self.version - c.base_version).collect();

        // Evaluate the new global model on the held-out test set.
        let conf = metrics::evaluate(
            self.global(),
            &self.data.spec,
            &self.data.test.features,
            &self.data.test.labels,
        )?;
        let snapshot = metrics::weighted_metrics(&conf)?;

        let total = self.bytes.uplink + self.bytes.downlink;
        let mut participant_ids: Vec<usize> = participant_set.iter().copied().collect();
        participant_ids.sort_unstable();
        let gaps: Vec<u64> = participant_ids
            .iter()
            .map(|&c| {
                let upload = uploads.iter().find(|u| u.client.0 == c).unwrap();
                round - upload.model.version
            })
            .collect();
        let mean_coverage =
            uploads.iter().map(|u| u.coverage).sum::<f64>() / uploads.len() as f64;
        self.ledger.push(RoundRecord {
            round,
            time: self.now,
            duration: self.now - self.round_started_at,
            participants: participant_ids,
            gaps,
            classification_gaps,
            post_distribution_gaps,
            deprecated,
            uplink_bytes: self.bytes.uplink,
            downlink_bytes: self.bytes.downlink,
            dense_equivalent_bytes: self.bytes.dense_equivalent,
            byte_ratio: total as f64 / self.bytes.dense_equivalent as f64,
            supervised_weight: schedule.weight(round),
            mean_coverage,
            model_checksum: format!("{:016x}", self.global().checksum()),
            metrics: snapshot,
        });
        self.bytes = ByteCounter::default();
        self.round_started_at = self.now;
        Ok(())
    }

    fn run(&mut self) -> Result<RunOutput> {
        // Initial broadcast of the warmed-up model.
        if self.is_sync() {
            let first = self.select_for_round(0);
            for &c in &first {
                self.distribute_to(c);
                self.start_training(c)?;
            }
            self.selected = Some(first);
        } else {
            for c in 0..self.cfg.clients {
                self.distribute_to(c);
                self.start_training(c)?;
            }
        }

        let mut best = f64::NEG_INFINITY;
        let mut since_best = 0u64;
        for round in 0..self.cfg.rounds {
            self.run_round(round)?;
            if let Some(stop) = &self.cfg.early_stop {
                let acc = self.ledger.last().unwrap().metrics.accuracy;
                if acc > best + stop.min_delta {
                    best = acc;
                    since_best = 0;
                } else {
                    since_best += 1;
                    if since_best >= stop.patience {
                        break;
                    }
                }
            }
        }
        let summary = report::summarize(&self.ledger)?;
        Ok(RunOutput {
            final_model: self.global().clone(),
            ledger: std::mem::take(&mut self.ledger),
            summary,
        })
    }
}

/// Runs one experiment end to end: data preparation, warm-up, the event
/// loop, and the summary. Fully deterministic for a given config.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let cfg = cfg.normalized()?;
    let data = prepare_data(&cfg)?;
    run_on_prepared(&cfg, &data)
}

/// Like [`run_experiment`], reusing already prepared data.
pub fn run_on_prepared(cfg: &ExperimentConfig, data: &PreparedData) -> Result<RunOutput> {
    let cfg = cfg.normalized()?;
    Engine::new(&cfg, data, cfg.seed)?.run()
}

/// Runs the configured number of repetitions; repetition `i > 0` derives
/// its seed from the base seed.
pub fn run_repetitions(cfg: &ExperimentConfig) -> Result<Vec<RunOutput>> {
    let cfg = cfg.normalized()?;
    let mut outputs = Vec::with_capacity(cfg.repetitions);
    for rep in 0..cfg.repetitions {
        let mut c = cfg.clone();
        if rep > 0 {
            c.seed = seed::derive(cfg.seed, &[tags::REPETITION, rep as u64]);
        }
        outputs.push(run_experiment(&c)?);
    }
    Ok(outputs)
}

/// Centralized semi-supervised ceiling: one process trains on the server's
/// labeled split plus the pooled unlabeled client data, alternating a
/// supervised pass and a pseudo-label pass per round.
pub fn local_ssl_baseline(cfg: &ExperimentConfig) -> Result<RunSummary> {
    let cfg = cfg.normalized()?;
    let data = prepare_data(&cfg)?;
    let pooled_indices: Vec<usize> = {
        let mut idx: Vec<usize> =
            data.partition.client_indices.iter().flatten().copied().collect();
        idx.sort_unstable();
        idx
    };
    let pooled = data.train.features.select_rows(&pooled_indices);

    let init = ParamVector::random_init(
        &data.spec,
        &mut seed::stream(cfg.seed, &[tags::INIT]),
    );
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate, init.len());
    let (mut params, _) = ssl::server_supervised_training(
        &init,
        &data.server_data.features,
        &data.server_data.labels,
        &data.spec,
        cfg.server_warmup_epochs,
        cfg.batch_size,
        &mut opt,
        seed::derive(cfg.seed, &[tags::SERVER_TRAIN, u64::MAX]),
    )?;

    let pl_cfg = PseudoLabelConfig {
        threshold: cfg.pseudo_label_threshold,
        batch_size: cfg.batch_size,
        epochs: cfg.local_epochs,
    };
    let mut records: Vec<RoundRecord> = Vec::with_capacity(cfg.rounds as usize);
    for round in 0..cfg.rounds {
        let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate, params.len());
        let (supervised, _) = ssl::server_supervised_training(
            &params,
            &data.server_data.features,
            &data.server_data.labels,
            &data.spec,
            cfg.local_epochs,
            cfg.batch_size,
            &mut opt,
            seed::derive(cfg.seed, &[tags::SERVER_TRAIN, round]),
        )?;
        let start = VersionedModel { params: supervised, version: round };
        let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate, params.len());
        let (unsupervised, stats) = ssl::client_local_training(
            &start,
            &pooled,
            &data.spec,
            &pl_cfg,
            &mut opt,
            seed::derive(cfg.seed, &[tags::CLIENT_TRAIN, round]),
        )?;
        params = unsupervised;

        let conf = metrics::evaluate(
            &params,
            &data.spec,
            &data.test.features,
            &data.test.labels,
        )?;
        let snapshot = metrics::weighted_metrics(&conf)?;
        records.push(RoundRecord {
            round,
            time: round as f64 + 1.0,
            duration: 1.0,
            participants: vec![],
            gaps: vec![],
            classification_gaps: vec![],
            post_distribution_gaps: vec![],
            deprecated: vec![],
            uplink_bytes: 0,
            downlink_bytes: 0,
            dense_equivalent_bytes: 1,
            byte_ratio: 0.0,
            supervised_weight: 1.0,
            mean_coverage: stats.final_coverage(),
            model_checksum: format!("{:016x}", params.checksum()),
            metrics: snapshot,
        });
    }
    report::summarize(&records)
}
