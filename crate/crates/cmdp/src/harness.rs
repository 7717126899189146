//! Experiment orchestration: key=value configuration, regret/violation
//! ledgers, seeded replication management, and CSV/SVG emission.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::envs::{self, EnvError, QueueConfig};
use crate::finite_horizon::{self, FhError};
use crate::model::{ModelError, TabularCmdp};
use crate::model_based::{
    init_learner, learner_step, Algo, LearnerConfig, RadiusRule, TriggerMode,
};
use crate::occupancy::{self, OccupancyError};
use crate::policy_gradient::{self, PgError};

/// Worker-pool size override for replication fan-out.
pub const WORKERS_ENV: &str = "CMDP_WORKERS";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Occupancy(#[from] OccupancyError),
    #[error(transparent)]
    Pg(#[from] PgError),
    #[error(transparent)]
    Fh(#[from] FhError),
}

// --- ledger ------------------------------------------------------------------

/// One downsampled trace row. All quantities are in the model's normalized
/// units; multiply by the env's `reward_scale` / `cost_scales` to recover
/// original units.
#[derive(Debug, Clone)]
pub struct TracePoint {
    pub t: u64,
    pub regret: f64,
    pub violation: Vec<f64>,
    pub reward_rate: f64,
    pub cost_rates: Vec<f64>,
}

/// Running regret/violation accounting for a single replication:
/// R(t) = t J* - cumulative reward, C_i(t) = (cumulative cost_i)_+.
/// The trace is logged every ceil(T/1000) steps plus the final step.
#[derive(Debug, Clone)]
pub struct RegretLedger {
    pub t: u64,
    pub t_total: u64,
    pub cum_reward: f64,
    pub cum_cost: Vec<f64>,
    pub oracle_gain: f64,
    pub stride: u64,
    pub trace: Vec<TracePoint>,
}

impl RegretLedger {
    pub fn new(oracle_gain: f64, n_channels: usize, t_total: u64) -> Self {
        RegretLedger {
            t: 0,
            t_total,
            cum_reward: 0.0,
            cum_cost: vec![0.0; n_channels],
            oracle_gain,
            stride: t_total.div_ceil(1000).max(1),
            trace: Vec::new(),
        }
    }

    pub fn regret(&self) -> f64 {
        self.t as f64 * self.oracle_gain - self.cum_reward
    }

    pub fn violation(&self, channel: usize) -> f64 {
        self.cum_cost[channel].max(0.0)
    }

    pub fn record(&mut self, reward: f64, costs: &[f64]) {
        self.t += 1;
        self.cum_reward += reward;
        for (acc, &c) in self.cum_cost.iter_mut().zip(costs) {
            *acc += c;
        }
        if self.t % self.stride == 0 || self.t == self.t_total {
            let tf = self.t as f64;
            self.trace.push(TracePoint {
                t: self.t,
                regret: self.regret(),
                violation: (0..self.cum_cost.len()).map(|i| self.violation(i)).collect(),
                reward_rate: self.cum_reward / tf,
                cost_rates: self.cum_cost.iter().map(|c| c / tf).collect(),
            });
        }
    }
}

// --- configuration -----------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Cucrl,
    Cpsrl,
    Pg,
    Fha,
}

#[derive(Debug, Clone)]
pub enum EnvSpec {
    Queue(QueueConfig),
    RandomErgodic {
        states: usize,
        actions: usize,
        channels: usize,
        mix_floor: f64,
        env_seed: u64,
    },
    Chain {
        states: usize,
        p_forward: f64,
        env_seed: u64,
    },
    File(PathBuf),
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub env: EnvSpec,
    pub t_total: u64,
    pub seed: u64,
    pub replications: u64,
    pub output_dir: PathBuf,
    /// Tightening constant for the model-based learners' epsilon schedule.
    pub k: f64,
    pub mode: TriggerMode,
    pub radius: RadiusRule,
    /// Primal step size; derived from the smoothness oracle when absent.
    pub alpha: Option<f64>,
    /// Dual step size.
    pub beta: f64,
    /// Horizon exponent xi for the policy-gradient epoch schedule.
    pub xi: f64,
    /// Explicit epoch / subtrajectory lengths overriding the analysis
    /// schedule (which typically exceeds T at desk scale).
    pub pg_h: Option<u64>,
    pub pg_n: Option<u64>,
    /// Confidence level for the finite-horizon learner's Bernstein sets.
    pub delta: f64,
    /// Span bound sp*_c; derived from the bias oracle when absent.
    pub span_bound: Option<f64>,
    pub emit_svg: bool,
}

impl ExperimentConfig {
    /// Parse the line-oriented `key = value` format. `#` starts a comment;
    /// blank lines are skipped. Unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let bad = |msg: String| HarnessError::ConfigInvalid(msg);
        let mut kv = std::collections::BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("line {}: expected key=value", i + 1)))?;
            if kv.insert(key.trim().to_string(), value.trim().to_string()).is_some() {
                return Err(bad(format!("duplicate key {}", key.trim())));
            }
        }
        let take = |kv: &mut std::collections::BTreeMap<String, String>, key: &str| {
            kv.remove(key)
        };
        fn num<T: std::str::FromStr>(key: &str, v: String) -> Result<T, HarnessError> {
            v.parse()
                .map_err(|_| HarnessError::ConfigInvalid(format!("bad value for {key}: {v}")))
        }
        fn list(key: &str, v: String) -> Result<Vec<f64>, HarnessError> {
            v.split(',').map(|p| num(key, p.trim().to_string())).collect()
        }

        let algorithm = match take(&mut kv, "algorithm").as_deref() {
            Some("cucrl") => Algorithm::Cucrl,
            Some("cpsrl") => Algorithm::Cpsrl,
            Some("pg") => Algorithm::Pg,
            Some("fha") => Algorithm::Fha,
            Some(other) => return Err(bad(format!("unknown algorithm {other}"))),
            None => return Err(bad("missing key algorithm".into())),
        };
        let env_kind = take(&mut kv, "env").unwrap_or_else(|| "queue".into());
        let env = match env_kind.as_str() {
            "queue" => {
                let mut q = QueueConfig::default();
                if let Some(v) = take(&mut kv, "env_buffer") {
                    q.buffer = num("env_buffer", v)?;
                }
                if let Some(v) = take(&mut kv, "env_service_actions") {
                    q.service_actions = list("env_service_actions", v)?;
                }
                if let Some(v) = take(&mut kv, "env_flow_actions") {
                    q.flow_actions = list("env_flow_actions", v)?;
                }
                EnvSpec::Queue(q)
            }
            "random" => EnvSpec::RandomErgodic {
                states: num("env_states", take(&mut kv, "env_states").unwrap_or("4".into()))?,
                actions: num("env_actions", take(&mut kv, "env_actions").unwrap_or("2".into()))?,
                channels: num(
                    "env_channels",
                    take(&mut kv, "env_channels").unwrap_or("1".into()),
                )?,
                mix_floor: num(
                    "env_mix_floor",
                    take(&mut kv, "env_mix_floor").unwrap_or("0.05".into()),
                )?,
                env_seed: num("env_seed", take(&mut kv, "env_seed").unwrap_or("0".into()))?,
            },
            "chain" => EnvSpec::Chain {
                states: num("env_states", take(&mut kv, "env_states").unwrap_or("5".into()))?,
                p_forward: num(
                    "env_p_forward",
                    take(&mut kv, "env_p_forward").unwrap_or("0.7".into()),
                )?,
                env_seed: num("env_seed", take(&mut kv, "env_seed").unwrap_or("0".into()))?,
            },
            "file" => EnvSpec::File(PathBuf::from(
                take(&mut kv, "env_path").ok_or_else(|| bad("env=file needs env_path".into()))?,
            )),
            other => return Err(bad(format!("unknown env {other}"))),
        };
        let t_total = num("t", take(&mut kv, "t").ok_or_else(|| bad("missing key t".into()))?)?;
        let replications = num(
            "replications",
            take(&mut kv, "replications").unwrap_or_else(|| "1".into()),
        )?;
        let config = ExperimentConfig {
            algorithm,
            env,
            t_total,
            seed: num("seed", take(&mut kv, "seed").unwrap_or_else(|| "0".into()))?,
            replications,
            output_dir: PathBuf::from(
                take(&mut kv, "output_dir").unwrap_or_else(|| "out".into()),
            ),
            k: num("k", take(&mut kv, "k").unwrap_or_else(|| "1.0".into()))?,
            mode: match take(&mut kv, "mode").as_deref() {
                None | Some("doubling") => TriggerMode::Doubling,
                Some("linear") => TriggerMode::Linear,
                Some(other) => return Err(bad(format!("unknown mode {other}"))),
            },
            radius: match take(&mut kv, "radius").as_deref() {
                None | Some("evaluation") => RadiusRule::Evaluation,
                Some("theory") => RadiusRule::Theory,
                Some(other) => return Err(bad(format!("unknown radius {other}"))),
            },
            alpha: take(&mut kv, "alpha").map(|v| num("alpha", v)).transpose()?,
            beta: num("beta", take(&mut kv, "beta").unwrap_or_else(|| "0.1".into()))?,
            xi: num("xi", take(&mut kv, "xi").unwrap_or_else(|| "0.4".into()))?,
            pg_h: take(&mut kv, "pg_h").map(|v| num("pg_h", v)).transpose()?,
            pg_n: take(&mut kv, "pg_n").map(|v| num("pg_n", v)).transpose()?,
            delta: num("delta", take(&mut kv, "delta").unwrap_or_else(|| "0.1".into()))?,
            span_bound: take(&mut kv, "span_bound")
                .map(|v| num("span_bound", v))
                .transpose()?,
            emit_svg: match take(&mut kv, "svg").as_deref() {
                None | Some("false") => false,
                Some("true") => true,
                Some(other) => return Err(bad(format!("bad value for svg: {other}"))),
            },
        };
        if let Some(key) = kv.keys().next() {
            return Err(bad(format!("unknown key {key}")));
        }
        config.check()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn check(&self) -> Result<(), HarnessError> {
        if self.t_total < 1 {
            return Err(HarnessError::ConfigInvalid("t must be >= 1".into()));
        }
        if self.replications < 1 {
            return Err(HarnessError::ConfigInvalid("replications must be >= 1".into()));
        }
        Ok(())
    }

    pub fn build_env(&self) -> Result<TabularCmdp, HarnessError> {
        match &self.env {
            EnvSpec::Queue(q) => Ok(envs::build_queue(q)?),
            EnvSpec::RandomErgodic { states, actions, channels, mix_floor, env_seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*env_seed);
                Ok(envs::random_ergodic_cmdp(*states, *actions, *channels, &mut rng, *mix_floor)?)
            }
            EnvSpec::Chain { states, p_forward, env_seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*env_seed);
                Ok(envs::weakly_communicating_chain(*states, *p_forward, &mut rng)?)
            }
            EnvSpec::File(path) => {
                let text = fs::read_to_string(path)?;
                Ok(TabularCmdp::from_text(&text)?)
            }
        }
    }
}

// --- oracle ------------------------------------------------------------------

/// J* from the true-model LP at epsilon = 0, in normalized units.
pub fn oracle_gain(cmdp: &TabularCmdp) -> Result<f64, OccupancyError> {
    let eps = vec![0.0; cmdp.n_channels()];
    occupancy::solve_true_model(cmdp, &eps).map(|(_, j)| j)
}

// --- replication runners -------------------------------------------------------

/// Independent stream for replication `rep`: one seed keys the cipher, the
/// stream index separates replications.
fn replication_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

pub fn run_replication(
    config: &ExperimentConfig,
    env: &TabularCmdp,
    j_star: f64,
    rep: u64,
) -> Result<RegretLedger, HarnessError> {
    let mut rng = replication_rng(config.seed, rep);
    let mut ledger = RegretLedger::new(j_star, env.n_channels(), config.t_total);
    match config.algorithm {
        Algorithm::Cucrl | Algorithm::Cpsrl => {
            let learner = LearnerConfig {
                algo: match config.algorithm {
                    Algorithm::Cucrl => Algo::Cucrl,
                    _ => Algo::Cpsrl,
                },
                k: config.k,
                mode: config.mode,
                radius: config.radius,
            };
            let mut state = env.sample_initial(&mut rng);
            let (mut epoch, mut counts, _) = init_learner(env, &learner, &mut rng)?;
            for t in 1..=config.t_total {
                let out =
                    learner_step(state, t, &mut epoch, &mut counts, env, &learner, &mut rng)?;
                ledger.record(out.reward, &out.costs);
                state = out.next_state;
            }
        }
        Algorithm::Pg => {
            if env.n_channels() != 1 {
                return Err(HarnessError::ConfigInvalid(
                    "pg requires exactly one cost channel".into(),
                ));
            }
            let schedule = match (config.pg_h, config.pg_n) {
                (Some(h), Some(n)) => {
                    policy_gradient::EpochSchedule::with_lengths(config.t_total, config.xi, h, n)?
                }
                (None, None) => {
                    let (t_mix, t_hit) = policy_gradient::mixing_hitting_oracle(env)?;
                    policy_gradient::EpochSchedule::from_constants(
                        config.t_total,
                        config.xi,
                        t_mix,
                        t_hit,
                    )?
                }
                _ => {
                    return Err(HarnessError::ConfigInvalid(
                        "pg_h and pg_n must be given together".into(),
                    ))
                }
            };
            let slater_delta = occupancy::slater_margin(env)?;
            let alpha = match config.alpha {
                Some(a) => a,
                None => {
                    let l = policy_gradient::estimate_smoothness(env, &mut rng, 5)?;
                    policy_gradient::default_alpha(l, slater_delta)
                }
            };
            let mut params =
                policy_gradient::SoftmaxPolicyParams::zeros(env.n_states, env.n_actions);
            let mut dual = policy_gradient::DualState::new(slater_delta, config.beta);
            let mut state = env.sample_initial(&mut rng);
            for epoch in 0..schedule.k {
                let (next, trajectory, _) = policy_gradient::primal_dual_epoch(
                    &mut params, &mut dual, &schedule, env, state, epoch, alpha, &mut rng,
                )?;
                for (&r, &c) in trajectory.rewards.iter().zip(&trajectory.costs) {
                    ledger.record(r, &[c]);
                }
                state = next;
            }
            // remainder steps past the last full epoch play the final policy
            let pi = params.policy();
            while ledger.t < config.t_total {
                let a = pi.sample_action(state, &mut rng);
                let (s2, r, c) = env.sample_step(state, a, &mut rng);
                ledger.record(r, &c);
                state = s2;
            }
        }
        Algorithm::Fha => {
            let span = match config.span_bound {
                Some(s) => s,
                None => finite_horizon::span_bound_oracle(env)?,
            };
            let run =
                finite_horizon::fha_run(env, config.t_total, span, config.delta, &mut rng)?;
            let m = env.n_channels();
            for (t, &r) in run.rewards.iter().enumerate() {
                ledger.record(r, &run.costs[t * m..(t + 1) * m]);
            }
        }
    }
    Ok(ledger)
}

// --- emission ------------------------------------------------------------------

/// 17 significant digits: lossless double round-trip.
fn sig17(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_replication_csv(ledger: &RegretLedger, path: &Path) -> Result<(), HarnessError> {
    let m = ledger.cum_cost.len();
    let mut out = String::from("t,R");
    for i in 1..=m {
        write!(out, ",C_{i}").unwrap();
    }
    out.push_str(",reward_rate");
    for i in 1..=m {
        write!(out, ",cost_rate_{i}").unwrap();
    }
    out.push('\n');
    for p in &ledger.trace {
        write!(out, "{},{}", p.t, sig17(p.regret)).unwrap();
        for v in &p.violation {
            write!(out, ",{}", sig17(*v)).unwrap();
        }
        write!(out, ",{}", sig17(p.reward_rate)).unwrap();
        for v in &p.cost_rates {
            write!(out, ",{}", sig17(*v)).unwrap();
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Column-wise mean and sample std over ledgers sharing one trace grid.
fn summarize(ledgers: &[&RegretLedger]) -> Vec<(u64, Vec<(f64, f64)>)> {
    let n = ledgers.len();
    let rows = ledgers[0].trace.len();
    let m = ledgers[0].cum_cost.len();
    let mut out = Vec::with_capacity(rows);
    for row in 0..rows {
        let cols: Vec<Vec<f64>> = ledgers
            .iter()
            .map(|l| {
                let p = &l.trace[row];
                let mut v = Vec::with_capacity(2 * m + 2);
                v.push(p.regret);
                v.extend(&p.violation);
                v.push(p.reward_rate);
                v.extend(&p.cost_rates);
                v
            })
            .collect();
        let width = cols[0].len();
        let mut stats = Vec::with_capacity(width);
        for j in 0..width {
            let mean = cols.iter().map(|c| c[j]).sum::<f64>() / n as f64;
            let var = if n > 1 {
                cols.iter().map(|c| (c[j] - mean).powi(2)).sum::<f64>() / (n - 1) as f64
            } else {
                0.0
            };
            stats.push((mean, var.sqrt()));
        }
        out.push((ledgers[0].trace[row].t, stats));
    }
    out
}

fn write_summary_csv(
    ledgers: &[&RegretLedger],
    n_channels: usize,
    path: &Path,
) -> Result<(), HarnessError> {
    let mut out = String::from("t,R_mean,R_std");
    for i in 1..=n_channels {
        write!(out, ",C_{i}_mean,C_{i}_std").unwrap();
    }
    out.push_str(",reward_rate_mean,reward_rate_std");
    for i in 1..=n_channels {
        write!(out, ",cost_rate_{i}_mean,cost_rate_{i}_std").unwrap();
    }
    out.push('\n');
    for (t, stats) in summarize(ledgers) {
        write!(out, "{t}").unwrap();
        for (mean, std) in stats {
            write!(out, ",{},{}", sig17(mean), sig17(std)).unwrap();
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Standalone SVG line plot of mean with a +-std band. No external renderer;
/// the figure is the artifact.
fn write_svg(
    path: &Path,
    title: &str,
    series: &[(u64, f64, f64)],
) -> Result<(), HarnessError> {
    let (w, h) = (720.0, 480.0);
    let (ml, mr, mt, mb) = (70.0, 20.0, 40.0, 50.0);
    let x_max = series.last().map(|&(t, _, _)| t as f64).unwrap_or(1.0).max(1.0);
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for &(_, mean, std) in series {
        y_min = y_min.min(mean - std);
        y_max = y_max.max(mean + std);
    }
    if !y_min.is_finite() || y_min == y_max {
        y_min -= 1.0;
        y_max += 1.0;
    }
    let pad = 0.05 * (y_max - y_min);
    let (y_lo, y_hi) = (y_min - pad, y_max + pad);
    let px = |t: f64| ml + (w - ml - mr) * t / x_max;
    let py = |v: f64| mt + (h - mt - mb) * (y_hi - v) / (y_hi - y_lo);

    let mut svg = String::new();
    write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\" font-family=\"monospace\" font-size=\"12\">\n"
    )
    .unwrap();
    writeln!(svg, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>").unwrap();
    writeln!(
        svg,
        "<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{title}</text>",
        w / 2.0
    )
    .unwrap();
    // axes with five ticks each
    writeln!(
        svg,
        "<line x1=\"{ml}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        h - mb,
        w - mr,
        h - mb
    )
    .unwrap();
    writeln!(
        svg,
        "<line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{}\" stroke=\"black\"/>",
        h - mb
    )
    .unwrap();
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let tx = f * x_max;
        let ty = y_lo + f * (y_hi - y_lo);
        writeln!(
            svg,
            "<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>\
             <text x=\"{0}\" y=\"{3}\" text-anchor=\"middle\">{4:.0}</text>",
            px(tx),
            h - mb,
            h - mb + 5.0,
            h - mb + 20.0,
            tx
        )
        .unwrap();
        writeln!(
            svg,
            "<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/>\
             <text x=\"{3}\" y=\"{4}\" text-anchor=\"end\">{5:.3}</text>",
            ml - 5.0,
            py(ty),
            ml,
            ml - 8.0,
            py(ty) + 4.0,
            ty
        )
        .unwrap();
    }
    // std band then mean line
    let mut band = String::new();
    for &(t, mean, std) in series {
        write!(band, "{:.2},{:.2} ", px(t as f64), py(mean + std)).unwrap();
    }
    for &(t, mean, std) in series.iter().rev() {
        write!(band, "{:.2},{:.2} ", px(t as f64), py(mean - std)).unwrap();
    }
    writeln!(svg, "<polygon points=\"{}\" fill=\"#9ecae1\" opacity=\"0.5\"/>", band.trim())
        .unwrap();
    let mut line = String::new();
    for &(t, mean, _) in series {
        write!(line, "{:.2},{:.2} ", px(t as f64), py(mean)).unwrap();
    }
    writeln!(
        svg,
        "<polyline points=\"{}\" fill=\"none\" stroke=\"#08519c\" stroke-width=\"1.5\"/>",
        line.trim()
    )
    .unwrap();
    writeln!(svg, "</svg>").unwrap();
    fs::write(path, svg)?;
    Ok(())
}

// --- experiment driver ----------------------------------------------------------

#[derive(Debug)]
pub struct ExperimentSummary {
    pub oracle_gain: f64,
    pub completed: usize,
    pub failures: Vec<(u64, String)>,
    pub files: Vec<PathBuf>,
}

/// Run all replications on a bounded worker pool (size from `CMDP_WORKERS`,
/// defaulting to the machine's parallelism), write one CSV per replication
/// plus a summary CSV and optional SVG plots. Per-replication failures are
/// recorded and the run continues.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentSummary, HarnessError> {
    config.check()?;
    let env = config.build_env()?;
    let j_star = oracle_gain(&env)?;
    fs::create_dir_all(&config.output_dir)?;

    let workers = std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(0); // 0 lets rayon pick
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| HarnessError::ConfigInvalid(format!("worker pool: {e}")))?;

    use rayon::prelude::*;
    let results: Vec<(u64, Result<RegretLedger, HarnessError>)> = pool.install(|| {
        (0..config.replications)
            .into_par_iter()
            .map(|rep| (rep, run_replication(config, &env, j_star, rep)))
            .collect()
    });

    let mut files = Vec::new();
    let mut failures = Vec::new();
    let mut ledgers = Vec::new();
    for (rep, result) in &results {
        match result {
            Ok(ledger) => {
                let path = config.output_dir.join(format!("rep_{rep:04}.csv"));
                write_replication_csv(ledger, &path)?;
                files.push(path);
                ledgers.push(ledger);
            }
            Err(e) => failures.push((*rep, e.to_string())),
        }
    }
    if !ledgers.is_empty() {
        let path = config.output_dir.join("summary.csv");
        write_summary_csv(&ledgers, env.n_channels(), &path)?;
        files.push(path);
        if config.emit_svg {
            let rows = summarize(&ledgers);
            let regret: Vec<(u64, f64, f64)> =
                rows.iter().map(|(t, s)| (*t, s[0].0, s[0].1)).collect();
            let path = config.output_dir.join("regret.svg");
            write_svg(&path, "R(t), mean +- std", &regret)?;
            files.push(path);
            for i in 0..env.n_channels() {
                let series: Vec<(u64, f64, f64)> =
                    rows.iter().map(|(t, s)| (*t, s[1 + i].0, s[1 + i].1)).collect();
                let path = config.output_dir.join(format!("violation_{}.svg", i + 1));
                write_svg(&path, &format!("C_{}(t), mean +- std", i + 1), &series)?;
                files.push(path);
            }
        }
    }
    Ok(ExperimentSummary {
        oracle_gain: j_star,
        completed: ledgers.len(),
        failures,
        files,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::evaluate_policy;
    use crate::model::StationaryPolicy;

    fn tiny_config(dir: &Path) -> ExperimentConfig {
        ExperimentConfig::parse(&format!(
            "algorithm = cucrl\nenv = random\nenv_states = 3\nenv_actions = 2\n\
             env_channels = 1\nenv_seed = 2\nt = 200\nseed = 7\nreplications = 2\n\
             output_dir = {}\nmode = doubling\n",
            dir.display()
        ))
        .unwrap()
    }

    #[test]
    fn ledger_matches_trivial_arithmetic() {
        // T=10, J*=0.896, all rewards 1.0 => R(10) = 8.96 - 10 = -1.04
        let mut ledger = RegretLedger::new(0.896, 1, 10);
        for _ in 0..10 {
            ledger.record(1.0, &[-0.1]);
        }
        assert!((ledger.regret() - (8.96 - 10.0)).abs() < 1e-12);
        assert_eq!(ledger.violation(0), 0.0);
        assert_eq!(ledger.trace.len(), 10); // stride 1
    }

    #[test]
    fn ledger_regret_is_exact_recomputation() {
        let mut ledger = RegretLedger::new(0.5, 2, 50);
        let mut rewards = Vec::new();
        for i in 0..50u64 {
            let r = (i as f64 * 0.37).sin().abs();
            rewards.push(r);
            ledger.record(r, &[0.01, -0.02]);
        }
        let cum: f64 = rewards.iter().sum();
        assert_eq!(ledger.regret(), 50.0 * 0.5 - cum);
        assert_eq!(ledger.violation(0), (0..50).fold(0.0, |acc, _| acc + 0.01));
        assert_eq!(ledger.violation(1), 0.0);
    }

    #[test]
    fn ledger_stride_downsamples() {
        let mut ledger = RegretLedger::new(0.0, 0, 2500);
        for _ in 0..2500 {
            ledger.record(0.0, &[]);
        }
        // stride = ceil(2500/1000) = 3; 833 multiples plus the final step
        assert_eq!(ledger.stride, 3);
        assert_eq!(ledger.trace.last().unwrap().t, 2500);
        assert_eq!(ledger.trace.len(), 834);
    }

    #[test]
    fn config_rejects_bad_input() {
        assert!(matches!(
            ExperimentConfig::parse("algorithm = cucrl\nt = 0\n"),
            Err(HarnessError::ConfigInvalid(_))
        ));
        assert!(matches!(
            ExperimentConfig::parse("algorithm = warp\nt = 10\n"),
            Err(HarnessError::ConfigInvalid(_))
        ));
        assert!(matches!(
            ExperimentConfig::parse("algorithm = cucrl\nt = 10\nbogus = 1\n"),
            Err(HarnessError::ConfigInvalid(_))
        ));
        assert!(matches!(
            ExperimentConfig::parse("algorithm = cucrl\nt = 10\nt = 20\n"),
            Err(HarnessError::ConfigInvalid(_))
        ));
    }

    #[test]
    fn config_parses_comments_and_defaults() {
        let c = ExperimentConfig::parse(
            "# demo\nalgorithm = cpsrl\nt = 100  # steps\nseed = 3\n",
        )
        .unwrap();
        assert_eq!(c.algorithm, Algorithm::Cpsrl);
        assert_eq!(c.t_total, 100);
        assert_eq!(c.seed, 3);
        assert_eq!(c.replications, 1);
        assert!(matches!(c.env, EnvSpec::Queue(_)));
        assert_eq!(c.mode, TriggerMode::Doubling);
    }

    #[test]
    fn oracle_gain_on_flat_rewards_is_that_reward() {
        let ns = 3;
        let na = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut env = envs::random_ergodic_cmdp(ns, na, 1, &mut rng, 0.05).unwrap();
        env.reward = vec![0.4; ns * na];
        env.costs[0] = vec![-0.1; ns * na];
        let j = oracle_gain(&env).unwrap();
        assert!((j - 0.4).abs() < 1e-9);
    }

    #[test]
    fn oracle_gain_matches_policy_evaluation_on_queue() {
        let env = envs::build_queue(&QueueConfig::default()).unwrap();
        let j = oracle_gain(&env).unwrap();
        assert!((env.reward_scale * j - 4.48).abs() < 0.01);
        // the LP optimum dominates any stationary policy's feasible gain
        let uniform = StationaryPolicy::uniform(env.n_states, env.n_actions);
        let ev = evaluate_policy(&env, &uniform).unwrap();
        assert!(ev.reward_gain() <= j + 1e-9);
    }

    #[test]
    fn experiment_writes_per_rep_and_summary_csvs() {
        let dir = std::env::temp_dir().join(format!("cmdp_harness_{}", std::process::id()));
        let config = tiny_config(&dir);
        let summary = run_experiment(&config).unwrap();
        assert_eq!(summary.completed, 2);
        assert!(summary.failures.is_empty());
        let rep0 = fs::read_to_string(dir.join("rep_0000.csv")).unwrap();
        let header = rep0.lines().next().unwrap();
        assert_eq!(header, "t,R,C_1,reward_rate,cost_rate_1");
        assert!(dir.join("summary.csv").exists());
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn same_seed_gives_byte_identical_csvs() {
        let dir1 = std::env::temp_dir().join(format!("cmdp_det_a_{}", std::process::id()));
        let dir2 = std::env::temp_dir().join(format!("cmdp_det_b_{}", std::process::id()));
        let mut c1 = tiny_config(&dir1);
        let mut c2 = tiny_config(&dir2);
        c1.output_dir = dir1.clone();
        c2.output_dir = dir2.clone();
        run_experiment(&c1).unwrap();
        run_experiment(&c2).unwrap();
        for name in ["rep_0000.csv", "rep_0001.csv", "summary.csv"] {
            let a = fs::read(dir1.join(name)).unwrap();
            let b = fs::read(dir2.join(name)).unwrap();
            assert_eq!(a, b, "{name} differs");
        }
        fs::remove_dir_all(&dir1).unwrap();
        fs::remove_dir_all(&dir2).unwrap();
    }

    #[test]
    fn replications_use_distinct_streams() {
        let config = tiny_config(Path::new("unused"));
        let env = config.build_env().unwrap();
        let j = oracle_gain(&env).unwrap();
        let a = run_replication(&config, &env, j, 0).unwrap();
        let b = run_replication(&config, &env, j, 1).unwrap();
        assert_ne!(a.cum_reward, b.cum_reward);
    }

    #[test]
    fn svg_emission_produces_wellformed_file() {
        let dir = std::env::temp_dir().join(format!("cmdp_svg_{}", std::process::id()));
        let mut config = tiny_config(&dir);
        config.emit_svg = true;
        config.replications = 2;
        run_experiment(&config).unwrap();
        let svg = fs::read_to_string(dir.join("regret.svg")).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("polyline"));
        assert!(dir.join("violation_1.svg").exists());
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn pg_replication_fills_the_ledger() {
        let mut config = ExperimentConfig::parse(
            "algorithm = pg\nenv = random\nenv_states = 3\nenv_actions = 2\n\
             env_channels = 1\nenv_seed = 2\nt = 2000\npg_h = 400\npg_n = 10\nalpha = 0.1\n",
        )
        .unwrap();
        config.t_total = 2100; // force a remainder segment past the last epoch
        let env = config.build_env().unwrap();
        let j = oracle_gain(&env).unwrap();
        let ledger = run_replication(&config, &env, j, 0).unwrap();
        assert_eq!(ledger.t, 2100);
    }

    #[test]
    fn fha_replication_fills_the_ledger() {
        let config = ExperimentConfig::parse(
            "algorithm = fha\nenv = chain\nenv_states = 4\nt = 3000\ndelta = 0.2\n",
        )
        .unwrap();
        let env = config.build_env().unwrap();
        let j = oracle_gain(&env).unwrap();
        let ledger = run_replication(&config, &env, j, 0).unwrap();
        assert_eq!(ledger.t, 3000);
        assert_eq!(ledger.trace.last().unwrap().t, 3000);
    }
}
