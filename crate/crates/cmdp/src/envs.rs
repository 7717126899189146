//! Benchmark environments: the single-server queue-control CMDP, a random
//! ergodic generator, and a river-swim-style weakly communicating chain.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use thiserror::Error;

use crate::model::{ModelError, TabularCmdp};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    ConfigInvalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Single-server queue with finite buffer `L`, service rates `a` and arrival
/// flow rates `b` chosen per step; the action space is the Cartesian product.
#[derive(Debug, Clone)]
pub struct QueueConfig {
    pub buffer: usize,
    pub service_actions: Vec<f64>,
    pub flow_actions: Vec<f64>,
}

impl Default for QueueConfig {
    fn default() -> Self {
        QueueConfig {
            buffer: 5,
            service_actions: vec![0.2, 0.4, 0.6, 0.8],
            flow_actions: vec![0.4, 0.5, 0.6, 0.7],
        }
    }
}

impl QueueConfig {
    fn check(&self) -> Result<(), EnvError> {
        let ok = |v: &[f64]| {
            !v.is_empty() && v.iter().all(|&x| x > 0.0 && x < 1.0)
        };
        if self.buffer < 1 {
            return Err(EnvError::ConfigInvalid("buffer must be >= 1".into()));
        }
        if !ok(&self.service_actions) || !ok(&self.flow_actions) {
            return Err(EnvError::ConfigInvalid(
                "service and flow rates must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Queue-length CMDP with composite action index
/// `service_index * |flow| + flow_index`.
///
/// Original units: reward `5 - s`, service cost `-10a + 6`, flow cost
/// `-8(1-b)^2 + 2`, with constraints oriented as `>= 0`. The returned model
/// is normalized to the framework convention: reward divided by 5 into
/// [0, 1]; each cost negated (so constraints read `<= 0`) and divided by its
/// max magnitude into [-1, 1]. `reward_scale` / `cost_scales` hold the
/// factors, so original values are `reward_scale * r_norm` and
/// `-cost_scales[i] * c_norm`.
pub fn build_queue(config: &QueueConfig) -> Result<TabularCmdp, EnvError> {
    config.check()?;
    let l = config.buffer;
    let ns = l + 1;
    let nf = config.flow_actions.len();
    let na = config.service_actions.len() * nf;
    let mut transition = vec![0.0; ns * na * ns];
    let mut reward = vec![0.0; ns * na];
    let mut c1_orig = vec![0.0; ns * na];
    let mut c2_orig = vec![0.0; ns * na];
    for s in 0..ns {
        for (ia, &a) in config.service_actions.iter().enumerate() {
            for (ib, &b) in config.flow_actions.iter().enumerate() {
                let act = ia * nf + ib;
                let row = &mut transition[(s * na + act) * ns..][..ns];
                if s == 0 {
                    row[0] = 1.0 - b * (1.0 - a);
                    row[1] = b * (1.0 - a);
                } else if s == l {
                    row[l - 1] = a;
                    row[l] = 1.0 - a;
                } else {
                    row[s - 1] = a * (1.0 - b);
                    row[s] = a * b + (1.0 - a) * (1.0 - b);
                    row[s + 1] = (1.0 - a) * b;
                }
                let sa = s * na + act;
                reward[sa] = 5.0 - s as f64;
                c1_orig[sa] = -10.0 * a + 6.0;
                c2_orig[sa] = -8.0 * (1.0 - b) * (1.0 - b) + 2.0;
            }
        }
    }
    let reward_scale = 5.0;
    let max_abs = |v: &[f64]| v.iter().fold(0.0f64, |m, &x| m.max(x.abs())).max(1e-12);
    let s1 = max_abs(&c1_orig);
    let s2 = max_abs(&c2_orig);
    let reward_norm = reward.iter().map(|r| r / reward_scale).collect();
    let c1 = c1_orig.iter().map(|c| -c / s1).collect();
    let c2 = c2_orig.iter().map(|c| -c / s2).collect();
    let mut rho = vec![0.0; ns];
    rho[0] = 1.0;
    let mut m = TabularCmdp::new(ns, na, reward_norm, vec![c1, c2], transition, rho)?;
    m.channel_names = vec!["service".into(), "flow".into()];
    m.reward_scale = reward_scale;
    m.cost_scales = vec![s1, s2];
    Ok(m)
}

/// Random CMDP whose transition rows are `(1 - S eta) Dirichlet(1..1) + eta`,
/// so every entry is at least `eta` and every policy induces an ergodic
/// chain. Rewards uniform in [0, 1], costs uniform in [-1, 1], uniform
/// initial distribution.
pub fn random_ergodic_cmdp<R: Rng + ?Sized>(
    n_states: usize,
    n_actions: usize,
    n_channels: usize,
    rng: &mut R,
    mix_floor: f64,
) -> Result<TabularCmdp, EnvError> {
    if n_states < 1 || n_actions < 1 {
        return Err(EnvError::ConfigInvalid("empty state or action space".into()));
    }
    if mix_floor <= 0.0 || mix_floor > 1.0 / n_states as f64 {
        return Err(EnvError::ConfigInvalid("mix_floor must lie in (0, 1/S]".into()));
    }
    let scale = 1.0 - n_states as f64 * mix_floor;
    let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        // Dirichlet(1..1) as normalized Exp(1) draws
        let draw: Vec<f64> = (0..n_states).map(|_| Exp1.sample(rng)).collect();
        let total: f64 = draw.iter().sum();
        transition.extend(draw.iter().map(|g| scale * g / total + mix_floor));
    }
    let reward = (0..n_states * n_actions).map(|_| rng.random()).collect();
    let costs = (0..n_channels)
        .map(|_| {
            (0..n_states * n_actions)
                .map(|_| 2.0 * rng.random::<f64>() - 1.0)
                .collect()
        })
        .collect();
    let rho = vec![1.0 / n_states as f64; n_states];
    Ok(TabularCmdp::new(n_states, n_actions, reward, costs, transition, rho)?)
}

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

/// River-swim-style chain on `n` states: LEFT steps deterministically toward
/// state 0 (absorbing there), RIGHT advances with probability `p_forward`
/// and otherwise slips back (or stays at the boundaries). Reward 1 at the
/// far end, a small reward for idling at 0, tiny rng jitter elsewhere to
/// break ties; the single cost channel charges RIGHT. Weakly communicating:
/// the LEFT-only policy is absorbed at 0, so not every policy is ergodic.
pub fn weakly_communicating_chain<R: Rng + ?Sized>(
    n: usize,
    p_forward: f64,
    rng: &mut R,
) -> Result<TabularCmdp, EnvError> {
    if n < 3 {
        return Err(EnvError::ConfigInvalid("need at least 3 states".into()));
    }
    if !(0.0 < p_forward && p_forward <= 1.0) {
        return Err(EnvError::ConfigInvalid("p_forward must lie in (0, 1]".into()));
    }
    let na = 2;
    let mut transition = vec![0.0; n * na * n];
    let mut reward = vec![0.0; n * na];
    let mut cost = vec![0.0; n * na];
    for s in 0..n {
        let left = &mut transition[(s * na + LEFT) * n..][..n];
        left[s.saturating_sub(1)] = 1.0;
        let right = &mut transition[(s * na + RIGHT) * n..][..n];
        let fwd = (s + 1).min(n - 1);
        let back = s.saturating_sub(1);
        if fwd == s {
            right[s] += p_forward;
        } else {
            right[fwd] += p_forward;
        }
        if back == s {
            right[s] += 1.0 - p_forward;
        } else {
            right[back] += 1.0 - p_forward;
        }
        let jitter = 0.01 * rng.random::<f64>();
        for a in 0..na {
            reward[s * na + a] = if s == n - 1 {
                1.0
            } else if s == 0 && a == LEFT {
                0.05
            } else {
                jitter
            };
            cost[s * na + a] = if a == RIGHT { 0.2 } else { -0.2 };
        }
    }
    let mut rho = vec![0.0; n];
    rho[0] = 1.0;
    Ok(TabularCmdp::new(n, na, reward, vec![cost], transition, rho)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        check_ergodic, evaluate_policy, induced_chain, unichain_gain_bias, StationaryPolicy,
    };
    use crate::occupancy::solve_true_model;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn queue() -> TabularCmdp {
        build_queue(&QueueConfig::default()).unwrap()
    }

    fn action_index(cfg: &QueueConfig, a: f64, b: f64) -> usize {
        let ia = cfg.service_actions.iter().position(|&x| x == a).unwrap();
        let ib = cfg.flow_actions.iter().position(|&x| x == b).unwrap();
        ia * cfg.flow_actions.len() + ib
    }

    #[test]
    fn queue_interior_row() {
        let cfg = QueueConfig::default();
        let m = queue();
        let act = action_index(&cfg, 0.6, 0.5);
        assert!((m.p(3, act, 2) - 0.30).abs() < 1e-12);
        assert!((m.p(3, act, 3) - 0.50).abs() < 1e-12);
        assert!((m.p(3, act, 4) - 0.20).abs() < 1e-12);
    }

    #[test]
    fn queue_full_row() {
        let cfg = QueueConfig::default();
        let m = queue();
        let act = action_index(&cfg, 0.8, 0.4);
        assert!((m.p(5, act, 4) - 0.8).abs() < 1e-12);
        assert!((m.p(5, act, 5) - 0.2).abs() < 1e-12);
        assert_eq!(m.p(5, act, 3), 0.0);
    }

    #[test]
    fn queue_empty_row() {
        let cfg = QueueConfig::default();
        let m = queue();
        let act = action_index(&cfg, 0.2, 0.4);
        assert!((m.p(0, act, 0) - 0.68).abs() < 1e-12);
        assert!((m.p(0, act, 1) - 0.32).abs() < 1e-12);
    }

    #[test]
    fn queue_reward_and_scales() {
        let m = queue();
        assert_eq!(m.reward_scale, 5.0);
        for a in 0..m.n_actions {
            assert!((m.reward[m.sa(0, a)] - 1.0).abs() < 1e-12);
            assert!((m.reward_scale * m.reward[m.sa(5, a)] - 0.0).abs() < 1e-12);
        }
        // service cost spans -10a + 6 over a in {0.2..0.8}: max magnitude 4
        assert!((m.cost_scales[0] - 4.0).abs() < 1e-12);
        // flow cost max magnitude at b = 0.7: -8(0.3)^2 + 2 = 1.28
        assert!((m.cost_scales[1] - 1.28).abs() < 1e-12);
    }

    #[test]
    fn queue_flow_cost_value() {
        let cfg = QueueConfig::default();
        let m = queue();
        let act = action_index(&cfg, 0.6, 0.4);
        // original units: -8(0.6)^2 + 2 = -0.88
        let orig = -m.cost_scales[1] * m.costs[1][m.sa(2, act)];
        assert!((orig - (-0.88)).abs() < 1e-12);
    }

    #[test]
    fn queue_optimum_constrained() {
        let m = queue();
        let (_, obj) = solve_true_model(&m, &[0.0, 0.0]).unwrap();
        let original = m.reward_scale * obj;
        assert!((original - 4.48).abs() < 0.01, "{original}");
    }

    #[test]
    fn queue_optimum_unconstrained() {
        let mut m = queue();
        let costs = std::mem::take(&mut m.costs);
        let scales = std::mem::take(&mut m.cost_scales);
        m.channel_names.clear();
        let (occ, obj) = solve_true_model(&m, &[]).unwrap();
        let original = m.reward_scale * obj;
        assert!((original - 4.80).abs() < 0.01, "{original}");
        // channel values of the unconstrained optimum, paper sign convention
        let j1 = -scales[0] * occ.expected(&costs[0]);
        let j2 = -scales[1] * occ.expected(&costs[1]);
        assert!((j1 - (-2.0)).abs() < 0.01, "{j1}");
        assert!((j2 - (-0.88)).abs() < 0.01, "{j2}");
    }

    #[test]
    fn random_uniform_at_full_floor() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_ergodic_cmdp(4, 3, 1, &mut rng, 0.25).unwrap();
        for row in m.transition.chunks(4) {
            for &p in row {
                assert!((p - 0.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn random_instances_ergodic_and_deterministic() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_ergodic_cmdp(5, 3, 2, &mut rng, 0.02).unwrap();
            let chain = induced_chain(&m, &StationaryPolicy::uniform(5, 3)).unwrap();
            check_ergodic(&chain).unwrap();
            let mut rng2 = ChaCha8Rng::seed_from_u64(seed);
            let m2 = random_ergodic_cmdp(5, 3, 2, &mut rng2, 0.02).unwrap();
            assert_eq!(m.transition, m2.transition);
            assert_eq!(m.reward, m2.reward);
            assert_eq!(m.costs, m2.costs);
        }
    }

    #[test]
    fn chain_left_only_not_ergodic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = weakly_communicating_chain(5, 0.9, &mut rng).unwrap();
        let left = StationaryPolicy::deterministic(2, &[LEFT; 5]);
        let chain = induced_chain(&m, &left).unwrap();
        assert!(check_ergodic(&chain).is_err());
        assert!(evaluate_policy(&m, &left).is_err());
    }

    #[test]
    fn chain_right_deterministic_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = weakly_communicating_chain(5, 1.0, &mut rng).unwrap();
        let right = StationaryPolicy::deterministic(2, &[RIGHT; 5]);
        let chain = induced_chain(&m, &right).unwrap();
        for s in 0..4 {
            assert_eq!(chain.p(s, s + 1), 1.0);
        }
        assert_eq!(chain.p(4, 4), 1.0);
        // unichain gain: absorbed at the far end
        let g: Vec<f64> = (0..5).map(|s| m.reward[m.sa(s, RIGHT)]).collect();
        let (j, _) = unichain_gain_bias(&chain, &g).unwrap();
        assert!((j - 1.0).abs() < 1e-10);
    }

    #[test]
    fn chain_right_gain_matches_simulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = weakly_communicating_chain(5, 0.9, &mut rng).unwrap();
        let right = StationaryPolicy::deterministic(2, &[RIGHT; 5]);
        let chain = induced_chain(&m, &right).unwrap();
        let g: Vec<f64> = (0..5).map(|s| m.reward[m.sa(s, RIGHT)]).collect();
        let (j, _) = unichain_gain_bias(&chain, &g).unwrap();
        let mut sim_rng = ChaCha8Rng::seed_from_u64(123);
        let mut s = 0usize;
        let (mut total, steps) = (0.0, 400_000usize);
        for _ in 0..steps {
            let (s2, r, _) = m.sample_step(s, RIGHT, &mut sim_rng);
            total += r;
            s = s2;
        }
        let sim = total / steps as f64;
        assert!((sim - j).abs() < 5e-3, "sim {sim} vs exact {j}");
    }
}
