//! The deterministic experiment runner and the utilities built on it:
//! sensitivity sweeps over one config axis, the `(C', lambda)` calibration
//! fit, and the strict invariant-checking mode.

use std::path::Path;
use std::time::Instant;

use rand_chacha::ChaCha8Rng;

use crate::harness::{
    emit_metrics, write_summary, ExperimentConfig, HarnessError, RoundMetrics, RunSummary,
    SchemeKind, TaskKind, TopologyKind,
};
use crate::optimizer::{partition_model, partpsp_round, OptimizerConfig};
use crate::privacy::{privacy_budget, PrivacyBudget};
use crate::protocol::{network_mean, NodeState, SyncResetMode};
use crate::seed::{derive, stream, Purpose};
use crate::tasks::{
    evaluate_network, init_stream, load_mnist_idx, make_synthetic_dataset, Dataset, MlpSpec,
    MlpTask, NodeSampler,
};
use crate::topology::GraphSchedule;

/// Execution switches that are not part of the experiment definition.
#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Assert per-round invariants and abort on the first violation.
    pub strict: bool,
    /// Run fewer rounds than the config asks for.
    pub rounds_override: Option<u64>,
    /// Record the per-round trace the calibration fit consumes.
    pub record_calibration: bool,
    /// Write `metrics.csv` / `summary.json` into the config's output dir.
    pub write_outputs: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            strict: false,
            rounds_override: None,
            record_calibration: false,
            write_outputs: true,
        }
    }
}

/// Raw per-round scalars needed to refit the estimate constants.
#[derive(Debug, Clone)]
pub struct CalRound {
    /// Per node: `Some(s0_l1)` if the estimator was pending at round entry.
    pub pending_s0: Vec<Option<f64>>,
    pub eps_l1: Vec<f64>,
    pub deviation_max: f64,
    pub real_sensitivity: f64,
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub summary: RunSummary,
    pub metrics: Vec<RoundMetrics>,
    pub per_node_acc: Vec<f64>,
    pub final_states: Vec<NodeState>,
    pub calibration_trace: Vec<CalRound>,
    pub warnings: Vec<String>,
}

fn build_schedule(cfg: &ExperimentConfig) -> Result<GraphSchedule, HarnessError> {
    let t = &cfg.topology;
    let schedule = match t.kind {
        TopologyKind::DOut => GraphSchedule::d_out(
            t.n_nodes,
            t.d.expect("validated: d present for d_out"),
        )?,
        TopologyKind::Exp => GraphSchedule::exp(t.n_nodes)?,
        TopologyKind::Custom => GraphSchedule::from_edge_file(
            t.n_nodes,
            t.rounds_file.as_ref().expect("validated: rounds_file present"),
        )?,
    };
    Ok(schedule)
}

fn build_task(cfg: &ExperimentConfig) -> Result<(MlpTask, Dataset), HarnessError> {
    let (train, test, spec) = match cfg.task.kind {
        TaskKind::Synthetic => {
            let t = &cfg.task;
            let train = make_synthetic_dataset(
                t.n_examples,
                t.n_features,
                t.n_classes,
                t.separation,
                derive(cfg.master_seed, 0, Purpose::DatasetTrain),
            )?;
            let test = make_synthetic_dataset(
                t.n_test,
                t.n_features,
                t.n_classes,
                t.separation,
                derive(cfg.master_seed, 0, Purpose::DatasetTest),
            )?;
            let spec = MlpSpec::sandwich(t.n_features, t.n_classes);
            (train, test, spec)
        }
        TaskKind::Mnist => {
            let t = &cfg.task;
            let train = load_mnist_idx(
                t.images_path.as_ref().expect("validated"),
                t.labels_path.as_ref().expect("validated"),
            )?;
            let test = load_mnist_idx(
                t.test_images_path.as_ref().expect("validated"),
                t.test_labels_path.as_ref().expect("validated"),
            )?;
            (train, test, MlpSpec::mnist_default())
        }
    };
    let scheme = cfg.partition_scheme()?;
    let partition = partition_model(&spec.param_blocks(), &scheme)?;
    let task = MlpTask::new(spec, partition, train)?;
    Ok((task, test))
}

/// Run one experiment end to end: initialize nodes, execute the configured
/// number of PartPSP rounds, evaluate on the test set, and (optionally)
/// write `metrics.csv` and `summary.json`. Fully deterministic given the
/// config and master seed.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    opts: &RunOptions,
) -> Result<RunArtifacts, HarnessError> {
    let warnings = cfg.validate()?;
    let start = Instant::now();
    let n = cfg.topology.n_nodes;
    let schedule = build_schedule(cfg)?;
    let (task, test_set) = build_task(cfg)?;

    let mut states: Vec<NodeState> = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = init_stream(cfg.master_seed, i, cfg.task.identical_init);
        let full = task.spec().init_params(&mut rng);
        let (shared, local) = task.partition().split(&full)?;
        states.push(NodeState::new(
            i,
            shared,
            local,
            cfg.privacy.c_prime,
            cfg.privacy.lambda,
        )?);
    }

    let mut samplers: Vec<NodeSampler> = (0..n)
        .map(|i| NodeSampler::new(task.train().len(), n, i, cfg.task.batch_size, cfg.master_seed))
        .collect();
    for sampler in &samplers {
        if sampler.shard().is_empty() {
            return Err(HarnessError::Validation {
                key: "task.n_examples".to_string(),
                message: format!("node {} has an empty data shard", sampler.shard().len()),
            });
        }
    }
    let mut noise_rngs: Vec<ChaCha8Rng> = (0..n)
        .map(|i| stream(cfg.master_seed, i as u64, Purpose::NoiseLaplace))
        .collect();
    let budget: Option<PrivacyBudget> = if cfg.privacy.enabled {
        Some(privacy_budget(cfg.privacy.b, cfg.privacy.gamma_n)?)
    } else {
        None
    };
    let opt_cfg = OptimizerConfig {
        gamma_l: cfg.optimizer.gamma_l,
        gamma_s: cfg.optimizer.gamma_s,
        gamma_n: cfg.privacy.gamma_n,
        clip_threshold: cfg.optimizer.clip_threshold,
        rounds: cfg.optimizer.rounds,
        sync_interval: cfg.protocol.sync_interval,
    };
    let sync_mode: SyncResetMode = cfg.protocol.sync_reset_mode.into();
    let rounds = opts.rounds_override.unwrap_or(cfg.optimizer.rounds);

    // Fixed per-node evaluation batches for the optimality metrics: the
    // first `eval_batch` indices of each shard.
    let eval_batches: Vec<Vec<usize>> = samplers
        .iter()
        .map(|s| s.shard().iter().copied().take(cfg.task.eval_batch).collect())
        .collect();

    let mut metrics: Vec<RoundMetrics> = Vec::with_capacity(rounds as usize);
    let mut calibration_trace: Vec<CalRound> = Vec::new();
    let mut real_sum = 0.0f64;
    let mut peak = 0.0f64;

    for t in 0..rounds {
        let w = schedule.weight_matrix(t);
        let pre_mean = opts.strict.then(|| network_mean(&states));
        let pending = opts
            .record_calibration
            .then(|| states.iter().map(|s| s.estimator.pending_s0_l1()).collect::<Vec<_>>());
        let compute_delta = t % cfg.optimizer.metrics_interval == 0;
        let (next, record) = partpsp_round(
            states,
            &task,
            &mut samplers,
            &w,
            &opt_cfg,
            budget.as_ref(),
            &mut noise_rngs,
            t,
            sync_mode,
            compute_delta.then_some(eval_batches.as_slice()),
        )?;
        states = next;

        if opts.strict {
            for s in &states {
                if (s.norm_scalar - 1.0).abs() >= 1e-12 {
                    return Err(HarnessError::Invariant {
                        round: t,
                        message: format!(
                            "node {} normalizing scalar drifted to {}",
                            s.node_id, s.norm_scalar
                        ),
                    });
                }
            }
            if t >= 1 && record.real_sensitivity > record.esti_sensitivity {
                return Err(HarnessError::Invariant {
                    round: t,
                    message: format!(
                        "real sensitivity {} exceeds estimated {} (c_prime={}, lambda={})",
                        record.real_sensitivity,
                        record.esti_sensitivity,
                        cfg.privacy.c_prime,
                        cfg.privacy.lambda
                    ),
                });
            }
            let pre = pre_mean.expect("captured in strict mode");
            let post = network_mean(&states);
            let gamma_n = budget.as_ref().map_or(0.0, |b| b.gamma_n);
            for (c, &post_c) in post.iter().enumerate() {
                let expected =
                    pre[c] + record.eps_sum[c] / n as f64 + gamma_n * record.noise_sum[c] / n as f64;
                if (post_c - expected).abs() >= 1e-10 {
                    return Err(HarnessError::Invariant {
                        round: t,
                        message: format!(
                            "mean-dynamics residual {} at coordinate {c}",
                            post_c - expected
                        ),
                    });
                }
            }
        }

        if let Some(pending_s0) = pending {
            calibration_trace.push(CalRound {
                pending_s0,
                eps_l1: record.eps_l1.clone(),
                deviation_max: record.deviation_max,
                real_sensitivity: record.real_sensitivity,
            });
        }

        real_sum += record.real_sensitivity;
        peak = peak.max(record.real_sensitivity);
        let mean_eps_l1 = record.eps_l1.iter().sum::<f64>() / n as f64;
        let mean_noise_l1 = record.noise_l1.iter().sum::<f64>() / n as f64;
        metrics.push(RoundMetrics {
            round: t,
            esti_sensitivity: record.esti_sensitivity,
            real_sensitivity: record.real_sensitivity,
            mean_eps_l1,
            mean_noise_l1,
            loss_mean: record.loss_mean,
            delta_l: record.delta_l,
            delta_sbar: record.delta_sbar,
            ras_running: real_sum / (t + 1) as f64,
            epsilon_per_round: budget.as_ref().map(|b| b.epsilon_per_round),
            synced: record.synced,
        });
    }

    let (per_node_acc, final_acc) = evaluate_network(&states, &task, &test_set);
    let summary = RunSummary {
        final_acc,
        ras: real_sum / rounds as f64,
        peak_sensitivity: peak,
        total_rounds: rounds,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    };
    if opts.write_outputs {
        emit_metrics(&metrics, &cfg.output_dir.join("metrics.csv"))?;
        write_summary(&summary, &cfg.output_dir.join("summary.json"))?;
    }
    Ok(RunArtifacts {
        summary,
        metrics,
        per_node_acc,
        final_states: states,
        calibration_trace,
        warnings,
    })
}

/// Fitted estimate constants.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct CalibrationResult {
    pub c_prime: f64,
    pub lambda: f64,
    pub rounds_used: u64,
}

/// Run the configured experiment noiselessly, record the per-round
/// deviations, and fit the smallest constants that dominate them with the
/// given headroom. The fit scans a lambda grid; for each candidate the
/// minimal `C'` is the largest observed ratio of deviation to the unit-`C'`
/// recursion value, and the winner minimizes the steady-state multiplier
/// `C' / (1 - lambda)`.
pub fn calibrate(
    cfg: &ExperimentConfig,
    headroom: f64,
) -> Result<CalibrationResult, HarnessError> {
    let mut noiseless = cfg.clone();
    noiseless.privacy.enabled = false;
    let artifacts = run_experiment(
        &noiseless,
        &RunOptions {
            record_calibration: true,
            write_outputs: false,
            ..Default::default()
        },
    )?;
    let trace = &artifacts.calibration_trace;
    if trace.is_empty() {
        return Err(HarnessError::Calibration("empty trace".to_string()));
    }
    let n = trace[0].eps_l1.len();

    let mut best: Option<(f64, CalibrationResult)> = None;
    for step in 1..=19 {
        let lambda = step as f64 * 0.05;
        let mut unit = vec![0.0f64; n];
        let mut max_ratio = 0.0f64;
        let mut feasible = true;
        for (t, round) in trace.iter().enumerate() {
            for ((u, &pending), &eps) in unit.iter_mut().zip(&round.pending_s0).zip(&round.eps_l1)
            {
                *u = match pending {
                    Some(s0) => 2.0 * (s0 + eps),
                    None => lambda * *u + 2.0 * eps,
                };
            }
            if t == 0 {
                continue; // the guarantee starts at t > 0
            }
            let unit_max = unit.iter().fold(0.0f64, |m, &v| m.max(v));
            let target = round.deviation_max.max(round.real_sensitivity);
            if unit_max <= 0.0 {
                if target > 1e-12 {
                    feasible = false;
                    break;
                }
                continue;
            }
            max_ratio = max_ratio.max(target / unit_max);
        }
        if !feasible || max_ratio <= 0.0 {
            continue;
        }
        let c_prime = max_ratio * (1.0 + headroom);
        let objective = c_prime / (1.0 - lambda);
        if best.as_ref().is_none_or(|(o, _)| objective < *o) {
            best = Some((
                objective,
                CalibrationResult {
                    c_prime,
                    lambda,
                    rounds_used: trace.len() as u64,
                },
            ));
        }
    }
    best.map(|(_, r)| r).ok_or_else(|| {
        HarnessError::Calibration(
            "no (c_prime, lambda) on the grid dominates the recorded trace".to_string(),
        )
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    SharedLayers,
    OutDegree,
    NNodes,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "shared_layers" => Some(SweepAxis::SharedLayers),
            "out_degree" => Some(SweepAxis::OutDegree),
            "n_nodes" => Some(SweepAxis::NNodes),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::SharedLayers => "shared_layers",
            SweepAxis::OutDegree => "out_degree",
            SweepAxis::NNodes => "n_nodes",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub axis_value: u64,
    pub ras: f64,
    pub peak_sensitivity: f64,
}

/// Run one experiment per axis value with matched seeds and collect the
/// run-averaged real sensitivity of each.
pub fn run_sensitivity_sweep(
    base: &ExperimentConfig,
    axis: SweepAxis,
    values: &[u64],
    write_outputs: bool,
) -> Result<Vec<SweepRow>, HarnessError> {
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let mut cfg = base.clone();
        match axis {
            SweepAxis::SharedLayers => {
                cfg.partition.scheme = SchemeKind::ShareFirstK;
                cfg.partition.k = Some(value as usize);
                cfg.partition.tags = None;
            }
            SweepAxis::OutDegree => {
                cfg.topology.kind = TopologyKind::DOut;
                cfg.topology.d = Some(value as usize);
            }
            SweepAxis::NNodes => {
                cfg.topology.n_nodes = value as usize;
            }
        }
        let artifacts = run_experiment(
            &cfg,
            &RunOptions {
                write_outputs: false,
                ..Default::default()
            },
        )
        .map_err(|e| HarnessError::Sweep {
            value,
            source: Box::new(e),
        })?;
        rows.push(SweepRow {
            axis_value: value,
            ras: artifacts.summary.ras,
            peak_sensitivity: artifacts.summary.peak_sensitivity,
        });
    }
    if write_outputs {
        write_sweep_csv(&rows, &base.output_dir.join("sweep.csv"))?;
    }
    Ok(rows)
}

fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<(), HarnessError> {
    use crate::harness::format_f64;
    let mut text = String::from("axis_value,ras,peak_sensitivity\n");
    for row in rows {
        text.push_str(&format!(
            "{},{},{}\n",
            row.axis_value,
            format_f64(row.ras),
            format_f64(row.peak_sensitivity)
        ));
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| HarnessError::OutputIo {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        }
    }
    std::fs::write(path, text).map_err(|e| HarnessError::OutputIo {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Run the property suite on a config at reduced rounds: every per-round
/// invariant is asserted and the first violation aborts with its round
/// number and the offending values.
pub fn check_invariants(
    cfg: &ExperimentConfig,
    rounds: Option<u64>,
) -> Result<RunArtifacts, HarnessError> {
    let capped = rounds.unwrap_or_else(|| cfg.optimizer.rounds.min(100));
    run_experiment(
        cfg,
        &RunOptions {
            strict: true,
            rounds_override: Some(capped),
            write_outputs: false,
            ..Default::default()
        },
    )
}
