//! Temporary probe; deleted before release.

use feds3a_core::config::*;
use feds3a_core::nn::OptimizerKind;
use feds3a_core::protocol::{local_ssl_baseline, run_experiment};

#[test]
#[ignore]
fn probe_convergence_defaults() {
    // Table-defaults synthetic scenario.
    for seed in [1u64, 2, 3] {
        let cfg = ExperimentConfig { seed, ..ExperimentConfig::default() };
        let t0 = std::time::Instant::now();
        let out = run_experiment(&cfg).unwrap();
        let best = out.summary.best_accuracy;
        let fin = out.summary.final_metrics.accuracy;
        let cov: f64 = out.ledger.iter().map(|r| r.mean_coverage).sum::<f64>()
            / out.ledger.len() as f64;
        let aco = out.summary.aco;
        println!(
            "seed {seed}: best {best:.4} final {fin:.4} mean-coverage {cov:.3} aco {aco:.3} ({:?})",
            t0.elapsed()
        );
        let ceil = local_ssl_baseline(&cfg).unwrap();
        println!("  local-ssl best {:.4} final {:.4}", ceil.best_accuracy, ceil.final_metrics.accuracy);
    }
}

#[test]
#[ignore]
fn probe_transport_sgd() {
    for (lr, thr) in [(0.05f64, 1e-8f64), (0.05, 1e-6), (0.05, 1e-5), (0.1, 1e-5)] {
        let mut acos = Vec::new();
        let mut sparsities = Vec::new();
        for seed in [1u64, 2, 3] {
            let cfg = ExperimentConfig {
                seed,
                optimizer: OptimizerKind::Sgd,
                learning_rate: lr,
                zero_threshold: thr,
                rounds: 30,
                ..ExperimentConfig::default()
            };
            let out = run_experiment(&cfg).unwrap();
            acos.push(out.summary.aco);
            let s: f64 = out
                .ledger
                .iter()
                .map(|r| r.byte_ratio)
                .sum::<f64>()
                / out.ledger.len() as f64;
            sparsities.push(s);
        }
        acos.sort_by(|a, b| a.partial_cmp(b).unwrap());
        println!("lr {lr} thr {thr:e}: acos {acos:?}");
    }
}

#[test]
#[ignore]
fn probe_trends() {
    // ART vs C
    for c in [0.1f64, 0.4, 0.6, 1.0] {
        let mut arts = Vec::new();
        for seed in [1u64, 2, 3] {
            let cfg = ExperimentConfig {
                seed,
                participation: c,
                rounds: 20,
                ..ExperimentConfig::default()
            };
            let out = run_experiment(&cfg).unwrap();
            arts.push(out.summary.art);
        }
        arts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        println!("C={c}: median ART {:.2}", arts[1]);
    }
}

#[test]
#[ignore]
fn probe_supervised_step_requirement() {
    use feds3a_core::data::*;
    use feds3a_core::model::*;
    use feds3a_core::nn::*;
    use feds3a_core::ssl::*;
    use feds3a_core::metrics;
    // How many Adam steps at 1e-4 does a centralized fit need?
    let d = make_synthetic(3, 2000, 8, 8.0, 1).unwrap();
    let (mut train, mut test) = train_test_split(&d, 0.1, 2);
    let st = Standardization::fit(&train);
    st.apply(&mut train);
    st.apply(&mut test);
    let spec = ModelSpec::new(vec![8, 16, 3], 0.1, 1e-5).unwrap();
    let mut rng = feds3a_core::seed::stream(3, &[1]);
    let init = ParamVector::random_init(&spec, &mut rng);
    let mut params = init.clone();
    for epochs in [1usize, 2, 4, 8, 16, 32] {
        let mut opt = OptimizerState::adam(1e-4, params.len());
        let (p, _) = server_supervised_training(
            &params, &train.features, &train.labels, &spec, epochs, 100, &mut opt, 7,
        )
        .unwrap();
        params = p;
        let conf = metrics::evaluate(&params, &spec, &test.features, &test.labels).unwrap();
        let m = metrics::weighted_metrics(&conf).unwrap();
        println!("cumulative epochs ~{}: acc {:.4}", epochs, m.accuracy);
    }
}

#[test]
#[ignore]
fn probe_convergence_scaled() {
    for per_class in [1500usize, 3000] {
        for seed in [1u64, 2, 3] {
            let cfg = ExperimentConfig {
                seed,
                synthetic: SyntheticConfig {
                    per_class,
                    ..SyntheticConfig::default()
                },
                ..ExperimentConfig::default()
            };
            let t0 = std::time::Instant::now();
            let out = run_experiment(&cfg).unwrap();
            let cov: f64 = out.ledger.iter().map(|r| r.mean_coverage).sum::<f64>()
                / out.ledger.len() as f64;
            println!(
                "per_class {per_class} seed {seed}: best {:.4} final {:.4} cov {:.3} ({:?})",
                out.summary.best_accuracy,
                out.summary.final_metrics.accuracy,
                cov,
                t0.elapsed()
            );
            if seed == 1 {
                let ceil = local_ssl_baseline(&cfg).unwrap();
                println!("   local-ssl best {:.4}", ceil.best_accuracy);
            }
        }
    }
}

#[test]
#[ignore]
fn probe_coverage_growth() {
    use feds3a_core::data::*;
    use feds3a_core::model::*;
    use feds3a_core::nn::*;
    use feds3a_core::ssl::*;
    use feds3a_core::metrics;
    let d = make_synthetic(3, 15000, 8, 8.0, 1).unwrap();
    let (mut train, mut test) = train_test_split(&d, 0.1, 2);
    let st = Standardization::fit(&train);
    st.apply(&mut train);
    st.apply(&mut test);
    // 5% labeled like the server split
    let (rest, labeled) = train_test_split(&train, 0.05, 3);
    let spec = ModelSpec::new(vec![8, 16, 3], 0.1, 1e-5).unwrap();
    let mut rng = feds3a_core::seed::stream(3, &[1]);
    let mut params = ParamVector::random_init(&spec, &mut rng);
    let mut total_steps = 0usize;
    for chunk in 0..14 {
        let epochs = 5;
        let mut opt = OptimizerState::adam(1e-4, params.len());
        let (p, _) = server_supervised_training(
            &params, &labeled.features, &labeled.labels, &spec, epochs, 100, &mut opt, 7 + chunk,
        )
        .unwrap();
        params = p;
        total_steps += epochs * labeled.len().div_ceil(100);
        let conf = metrics::evaluate(&params, &spec, &test.features, &test.labels).unwrap();
        let m = metrics::weighted_metrics(&conf).unwrap();
        // coverage at theta=0.95 over a slice of unlabeled data
        let slice: Vec<usize> = (0..2000.min(rest.len())).collect();
        let probe = rest.features.select_rows(&slice);
        let probs = feds3a_core::nn::forward(&params, &spec, &probe).unwrap();
        let mut passed = 0;
        for r in 0..probs.rows() {
            let maxp = probs.row(r).iter().cloned().fold(0.0, f64::max);
            if maxp >= 0.95 {
                passed += 1;
            }
        }
        println!(
            "steps {total_steps}: acc {:.4} coverage {:.3}",
            m.accuracy,
            passed as f64 / probs.rows() as f64
        );
    }
}

#[test]
#[ignore]
fn probe_convergence_matrix() {
    for (hidden, l1) in [(vec![16usize], 1e-5f64), (vec![64], 1e-5), (vec![64], 0.0), (vec![128], 1e-5)] {
        let cfg = ExperimentConfig {
            seed: 1,
            l1,
            hidden_layers: Some(hidden.clone()),
            synthetic: SyntheticConfig { per_class: 2500, ..SyntheticConfig::default() },
            ..ExperimentConfig::default()
        };
        let t0 = std::time::Instant::now();
        let out = run_experiment(&cfg).unwrap();
        let traj: Vec<String> = out
            .ledger
            .iter()
            .step_by(10)
            .map(|r| format!("r{}:a{:.2}/c{:.2}", r.round, r.metrics.accuracy, r.mean_coverage))
            .collect();
        println!(
            "hidden {hidden:?} l1 {l1:e}: best {:.4} [{}] ({:?})",
            out.summary.best_accuracy,
            traj.join(" "),
            t0.elapsed()
        );
    }
}

#[test]
#[ignore]
fn probe_acceptance_scenario() {
    // Desk-scale analog: warmup step count matches the full-scale warmup
    // (300 epochs x ~4 batches ~= 1200 steps), width 64 for realistic
    // confidence dynamics.
    for seed in [1u64, 2, 3] {
        let cfg = ExperimentConfig {
            seed,
            server_warmup_epochs: 300,
            hidden_layers: Some(vec![64]),
            synthetic: SyntheticConfig { per_class: 2500, ..SyntheticConfig::default() },
            ..ExperimentConfig::default()
        };
        let t0 = std::time::Instant::now();
        let out = run_experiment(&cfg).unwrap();
        let traj: Vec<String> = out
            .ledger
            .iter()
            .step_by(10)
            .map(|r| format!("r{}:a{:.3}/c{:.2}", r.round, r.metrics.accuracy, r.mean_coverage))
            .collect();
        println!(
            "seed {seed}: best {:.4} final {:.4} [{}] ({:?})",
            out.summary.best_accuracy,
            out.summary.final_metrics.accuracy,
            traj.join(" "),
            t0.elapsed()
        );
        let t1 = std::time::Instant::now();
        let ceil = local_ssl_baseline(&cfg).unwrap();
        println!("  local-ssl best {:.4} ({:?})", ceil.best_accuracy, t1.elapsed());
    }
}

fn trend_cfg(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        seed,
        server_warmup_epochs: 100,
        hidden_layers: Some(vec![64]),
        synthetic: SyntheticConfig { per_class: 2500, ..SyntheticConfig::default() },
        ..ExperimentConfig::default()
    }
}

fn late_mean_accuracy(out: &feds3a_core::protocol::RunOutput) -> f64 {
    let n = out.ledger.len();
    let take = 5.min(n);
    out.ledger[n - take..].iter().map(|r| r.metrics.accuracy).sum::<f64>() / take as f64
}

#[test]
#[ignore]
fn probe_trend_scenario() {
    for seed in [1u64, 2, 3] {
        let cfg = trend_cfg(seed);
        let t0 = std::time::Instant::now();
        let out = run_experiment(&cfg).unwrap();
        let traj: Vec<String> = out
            .ledger
            .iter()
            .step_by(10)
            .map(|r| format!("r{}:a{:.3}/c{:.2}", r.round, r.metrics.accuracy, r.mean_coverage))
            .collect();
        println!(
            "seed {seed}: best {:.4} late {:.4} [{}] ({:?})",
            out.summary.best_accuracy,
            late_mean_accuracy(&out),
            traj.join(" "),
            t0.elapsed()
        );
    }
}

#[test]
#[ignore]
fn probe_trend_pairs() {
    let seeds = [1u64, 2, 3, 4, 5];
    let median = |mut v: Vec<f64>| -> f64 {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    };
    let run = |f: &dyn Fn(ExperimentConfig) -> ExperimentConfig| -> f64 {
        median(
            seeds
                .iter()
                .map(|&s| late_mean_accuracy(&run_experiment(&f(trend_cfg(s))).unwrap()))
                .collect(),
        )
    };
    let tau2 = run(&|c| c);
    let tau0 = run(&|c| ExperimentConfig { staleness_tolerance: 0, ..c });
    println!("tau=2 {tau2:.4} vs tau=0 {tau0:.4}  (want >=)");
    let ad_on = tau2;
    let ad_off = run(&|c| ExperimentConfig { adaptive_lr: false, ..c });
    println!("adaptive on {ad_on:.4} vs off {ad_off:.4}  (want >=)");
    let grouped = tau2;
    let ungrouped = run(&|c| ExperimentConfig { groups: 1, ..c });
    println!("grouped {grouped:.4} vs ungrouped {ungrouped:.4}  (want >=)");
}

#[test]
#[ignore]
fn probe_trend_combos() {
    let median = |mut v: Vec<f64>| -> f64 {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    };
    for (warmup, sep) in [(150usize, 6.0f64), (200, 5.0), (250, 5.0)] {
        let base = |seed: u64| ExperimentConfig {
            seed,
            server_warmup_epochs: warmup,
            hidden_layers: Some(vec![64]),
            synthetic: SyntheticConfig {
                per_class: 2500,
                separation: sep,
                ..SyntheticConfig::default()
            },
            ..ExperimentConfig::default()
        };
        let seeds = [1u64, 2, 3, 4, 5];
        let run = |f: &dyn Fn(ExperimentConfig) -> ExperimentConfig| -> Vec<f64> {
            seeds
                .iter()
                .map(|&s| late_mean_accuracy(&run_experiment(&f(base(s))).unwrap()))
                .collect()
        };
        let tau2 = run(&|c| c);
        let tau0 = run(&|c| ExperimentConfig { staleness_tolerance: 0, ..c });
        let ad_off = run(&|c| ExperimentConfig { adaptive_lr: false, ..c });
        let ungroup = run(&|c| ExperimentConfig { groups: 1, ..c });
        println!(
            "warmup {warmup} sep {sep}: tau2 {:.4} tau0 {:.4} | ad-on {:.4} ad-off {:.4} | grp {:.4} ungrp {:.4}",
            median(tau2.clone()),
            median(tau0),
            median(tau2.clone()),
            median(ad_off),
            median(tau2),
            median(ungroup)
        );
    }
}

#[test]
#[ignore]
fn probe_trend_l1_zero() {
    let median = |mut v: Vec<f64>| -> f64 {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    };
    let base = |seed: u64| ExperimentConfig {
        seed,
        l1: 0.0,
        server_warmup_epochs: 250,
        hidden_layers: Some(vec![64]),
        synthetic: SyntheticConfig {
            per_class: 2500,
            separation: 5.0,
            ..SyntheticConfig::default()
        },
        ..ExperimentConfig::default()
    };
    let seeds = [1u64, 2, 3, 4, 5];
    let run = |f: &dyn Fn(ExperimentConfig) -> ExperimentConfig| -> Vec<f64> {
        seeds
            .iter()
            .map(|&s| late_mean_accuracy(&run_experiment(&f(base(s))).unwrap()))
            .collect()
    };
    let tau2 = run(&|c| c);
    let tau0 = run(&|c| ExperimentConfig { staleness_tolerance: 0, ..c });
    let ad_off = run(&|c| ExperimentConfig { adaptive_lr: false, ..c });
    let ungroup = run(&|c| ExperimentConfig { groups: 1, ..c });
    println!(
        "l1=0 w250 sep5: tau2 {:.4} tau0 {:.4} | ad-off {:.4} | ungrp {:.4}  (feds3a {:?})",
        median(tau2.clone()),
        median(tau0),
        median(ad_off),
        median(ungroup),
        tau2,
    );
    // oracle ceiling at this separation
    let ceil = local_ssl_baseline(&base(1)).unwrap();
    println!("oracle at sep5: best {:.4}", ceil.best_accuracy);
}
