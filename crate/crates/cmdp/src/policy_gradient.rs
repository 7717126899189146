//! Primal-dual parameterized policy gradient on a tabular softmax, with the
//! subtrajectory advantage estimator and projected dual ascent on a single
//! cost channel.

use rand::Rng;
use thiserror::Error;

use crate::model::{
    evaluate_policy, hitting_time, mixing_time, ModelError, StationaryPolicy, TabularCmdp,
};

#[derive(Debug, Error)]
pub enum PgError {
    #[error("epoch schedule too short: H = {h} does not fit T = {t} (or H <= 2N = {n2})")]
    ScheduleTooShort { h: u64, n2: u64, t: u64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Tabular softmax policy parameters theta(s, a), temperature 1.
#[derive(Debug, Clone)]
pub struct SoftmaxPolicyParams {
    pub n_states: usize,
    pub n_actions: usize,
    pub theta: Vec<f64>,
}

impl SoftmaxPolicyParams {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        SoftmaxPolicyParams { n_states, n_actions, theta: vec![0.0; n_states * n_actions] }
    }

    /// pi_theta(a|s) = exp(theta(s,a)) / sum_a' exp(theta(s,a'))
    pub fn policy(&self) -> StationaryPolicy {
        let (ns, na) = (self.n_states, self.n_actions);
        let mut probs = vec![0.0; ns * na];
        for s in 0..ns {
            let row = &self.theta[s * na..(s + 1) * na];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for a in 0..na {
                let e = (row[a] - max).exp();
                probs[s * na + a] = e;
                total += e;
            }
            for a in 0..na {
                probs[s * na + a] /= total;
            }
        }
        StationaryPolicy { n_states: ns, n_actions: na, action_probs: probs }
    }

    /// grad_theta log pi_theta(a|s): coordinate (s, a') holds
    /// 1{a'=a} - pi_theta(a'|s); all other states' blocks are zero.
    pub fn score(&self, s: usize, a: usize) -> Vec<f64> {
        let pi = self.policy();
        let mut g = vec![0.0; self.n_states * self.n_actions];
        for a2 in 0..self.n_actions {
            g[s * self.n_actions + a2] =
                (if a2 == a { 1.0 } else { 0.0 }) - pi.prob(s, a2);
        }
        g
    }
}

/// Projected dual variable for the single cost constraint.
#[derive(Debug, Clone)]
pub struct DualState {
    pub lambda: f64,
    /// Slater constant delta; the dual is kept in [0, 2/delta].
    pub slater_delta: f64,
    /// Dual step size beta.
    pub beta: f64,
}

impl DualState {
    pub fn new(slater_delta: f64, beta: f64) -> Self {
        DualState { lambda: 0.0, slater_delta, beta }
    }

    pub fn cap(&self) -> f64 {
        2.0 / self.slater_delta
    }

    /// lambda <- clip(lambda + beta * j_hat_c, 0, 2/delta)
    pub fn update(&mut self, j_hat_c: f64) {
        self.lambda = (self.lambda + self.beta * j_hat_c).clamp(0.0, self.cap());
    }
}

/// Epoch layout: K epochs of H steps each, with burn-in / subtrajectory
/// length N.
#[derive(Debug, Clone)]
pub struct EpochSchedule {
    pub t_total: u64,
    pub xi: f64,
    pub h: u64,
    pub n: u64,
    pub k: u64,
}

impl EpochSchedule {
    /// The analysis-driven schedule H = 16 t_mix t_hit T^xi (log2 T)^2 and
    /// N = 4 t_mix log2 T. At desk scale H typically exceeds T, which is
    /// reported as ScheduleTooShort; use `with_lengths` to run anyway.
    pub fn from_constants(
        t_total: u64,
        xi: f64,
        t_mix: f64,
        t_hit: f64,
    ) -> Result<Self, PgError> {
        let tf = t_total as f64;
        let log2t = tf.log2();
        let h = (16.0 * t_mix * t_hit * tf.powf(xi) * log2t * log2t).ceil() as u64;
        let n = (4.0 * t_mix * log2t).ceil() as u64;
        Self::with_lengths(t_total, xi, h, n)
    }

    /// Explicit epoch and subtrajectory lengths (still validated).
    pub fn with_lengths(t_total: u64, xi: f64, h: u64, n: u64) -> Result<Self, PgError> {
        let k = if h == 0 { 0 } else { t_total / h };
        if h < 2 * n + 1 || k < 1 {
            return Err(PgError::ScheduleTooShort { h, n2: 2 * n, t: t_total });
        }
        Ok(EpochSchedule { t_total, xi, h, n, k })
    }
}

/// One epoch's rollout, stored as parallel step series.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub costs: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Q-hat minus V-hat for one (s, a) pair, for the reward and cost channels.
#[derive(Debug, Clone, Copy, Default)]
pub struct AdvantageEstimate {
    pub reward: f64,
    pub cost: f64,
    /// Number of subtrajectories found; zero forces both values to zero.
    pub m: u64,
}

/// Subtrajectory scan: cursor tau walks the trajectory; a visit to `s`
/// claims the length-N window starting there and jumps 2N ahead (N of
/// cooldown), otherwise the cursor advances one step. Windows must fit:
/// the scan stops once tau > len - N.
pub fn estimate_advantage(
    trajectory: &Trajectory,
    s: usize,
    a: usize,
    params: &SoftmaxPolicyParams,
    n: u64,
) -> AdvantageEstimate {
    let len = trajectory.len();
    let n = n as usize;
    if n == 0 || len < n {
        return AdvantageEstimate::default();
    }
    let mut tau = 0usize;
    let mut m = 0u64;
    let mut sum_r = 0.0;
    let mut sum_c = 0.0;
    let mut hit_r = 0.0;
    let mut hit_c = 0.0;
    while tau <= len - n {
        if trajectory.states[tau] == s {
            let r: f64 = trajectory.rewards[tau..tau + n].iter().sum();
            let c: f64 = trajectory.costs[tau..tau + n].iter().sum();
            m += 1;
            sum_r += r;
            sum_c += c;
            if trajectory.actions[tau] == a {
                hit_r += r;
                hit_c += c;
            }
            tau += 2 * n;
        } else {
            tau += 1;
        }
    }
    if m == 0 {
        return AdvantageEstimate::default();
    }
    let pi_sa = params.policy().prob(s, a);
    let mf = m as f64;
    let q_r = hit_r / (mf * pi_sa);
    let q_c = hit_c / (mf * pi_sa);
    AdvantageEstimate { reward: q_r - sum_r / mf, cost: q_c - sum_c / mf, m }
}

/// omega = (1/H) sum_t A_hat_L(s_t, a_t) grad log pi(a_t|s_t), with
/// A_hat_L = A_hat_r - lambda A_hat_c. Estimates are cached per (s, a): the
/// scan depends only on the pair, not on t.
pub fn gradient_estimate(
    trajectory: &Trajectory,
    params: &SoftmaxPolicyParams,
    lambda: f64,
    n: u64,
) -> Vec<f64> {
    let (ns, na) = (params.n_states, params.n_actions);
    let mut cache: Vec<Option<AdvantageEstimate>> = vec![None; ns * na];
    let adv_l = |cache: &mut Vec<Option<AdvantageEstimate>>, s: usize, a: usize| -> f64 {
        let est = *cache[s * na + a]
            .get_or_insert_with(|| estimate_advantage(trajectory, s, a, params, n));
        est.reward - lambda * est.cost
    };
    let pi = params.policy();
    let h = trajectory.len();
    let mut omega = vec![0.0; ns * na];
    for t in 0..h {
        let (s, a) = (trajectory.states[t], trajectory.actions[t]);
        let adv = adv_l(&mut cache, s, a);
        if adv == 0.0 {
            continue;
        }
        for a2 in 0..na {
            let score = (if a2 == a { 1.0 } else { 0.0 }) - pi.prob(s, a2);
            omega[s * na + a2] += adv * score;
        }
    }
    for v in omega.iter_mut() {
        *v /= h as f64;
    }
    omega
}

/// Per-epoch audit record; gains are oracle values from the true model.
#[derive(Debug, Clone)]
pub struct PgEpochTrace {
    pub epoch: u64,
    pub j_r_oracle: f64,
    pub j_c_oracle: f64,
    pub j_hat_c: f64,
    pub lambda: f64,
    pub omega_norm: f64,
}

/// One primal-dual epoch: roll out H steps from `state` (no reset), update
/// theta along the gradient estimate and lambda by projected ascent on the
/// tail-averaged cost. Returns the trajectory's final state.
#[allow(clippy::too_many_arguments)]
pub fn primal_dual_epoch<R: Rng + ?Sized>(
    params: &mut SoftmaxPolicyParams,
    dual: &mut DualState,
    schedule: &EpochSchedule,
    env: &TabularCmdp,
    state: usize,
    epoch_index: u64,
    alpha: f64,
    rng: &mut R,
) -> Result<(usize, Trajectory, PgEpochTrace), PgError> {
    if schedule.h < 2 * schedule.n + 1 {
        return Err(PgError::ScheduleTooShort {
            h: schedule.h,
            n2: 2 * schedule.n,
            t: schedule.t_total,
        });
    }
    let pi = params.policy();
    let ev = evaluate_policy(env, &pi)?;
    let h = schedule.h as usize;
    let n = schedule.n as usize;
    let mut trajectory = Trajectory::default();
    let mut s = state;
    for _ in 0..h {
        let a = pi.sample_action(s, rng);
        let (s2, r, c) = env.sample_step(s, a, rng);
        trajectory.states.push(s);
        trajectory.actions.push(a);
        trajectory.rewards.push(r);
        trajectory.costs.push(c[0]);
        s = s2;
    }
    let omega = gradient_estimate(&trajectory, params, dual.lambda, schedule.n);
    for (th, w) in params.theta.iter_mut().zip(&omega) {
        *th += alpha * w;
    }
    // tail-averaged cost estimate: the first N samples are burn-in
    let j_hat_c = trajectory.costs[n..].iter().sum::<f64>() / (h - n) as f64;
    let lambda_used = dual.lambda;
    dual.update(j_hat_c);
    let trace = PgEpochTrace {
        epoch: epoch_index,
        j_r_oracle: ev.reward_gain(),
        j_c_oracle: ev.cost_gain(0),
        j_hat_c,
        lambda: lambda_used,
        omega_norm: omega.iter().map(|w| w * w).sum::<f64>().sqrt(),
    };
    Ok((s, trajectory, trace))
}

/// Worst-case mixing and hitting times over a grid of stationary policies,
/// doubled as a safety factor. For two actions the per-state grid is
/// {0, 1/4, 1/2, 3/4, 1}; for larger action sets it is the deterministic
/// policies plus the uniform row.
pub fn mixing_hitting_oracle(env: &TabularCmdp) -> Result<(f64, f64), ModelError> {
    let (ns, na) = (env.n_states, env.n_actions);
    let rows: Vec<Vec<f64>> = if na == 2 {
        [0.0, 0.25, 0.5, 0.75, 1.0]
            .iter()
            .map(|&p| vec![p, 1.0 - p])
            .collect()
    } else {
        let mut rows: Vec<Vec<f64>> = (0..na)
            .map(|a| (0..na).map(|a2| if a2 == a { 1.0 } else { 0.0 }).collect())
            .collect();
        rows.push(vec![1.0 / na as f64; na]);
        rows
    };
    let mut worst_mix = 1.0f64;
    let mut worst_hit = 1.0f64;
    let mut choice = vec![0usize; ns];
    loop {
        let mut probs = Vec::with_capacity(ns * na);
        for s in 0..ns {
            probs.extend_from_slice(&rows[choice[s]]);
        }
        let pi = StationaryPolicy { n_states: ns, n_actions: na, action_probs: probs };
        // grid points inducing non-ergodic chains are outside the model
        // class and skipped
        if let Ok(tm) = mixing_time(env, &pi) {
            worst_mix = worst_mix.max(tm as f64);
            worst_hit = worst_hit.max(hitting_time(env, &pi)?);
        }
        // odometer over the per-state grid
        let mut s = 0;
        loop {
            if s == ns {
                return Ok((2.0 * worst_mix, 2.0 * worst_hit));
            }
            choice[s] += 1;
            if choice[s] < rows.len() {
                break;
            }
            choice[s] = 0;
            s += 1;
        }
    }
}

/// Exact gradient of J_r at theta (softmax policy-gradient theorem):
/// d/dtheta(s,a) = d(s) pi(a|s) A_r(s,a).
pub fn exact_reward_gradient(
    env: &TabularCmdp,
    params: &SoftmaxPolicyParams,
) -> Result<Vec<f64>, ModelError> {
    let pi = params.policy();
    let ev = evaluate_policy(env, &pi)?;
    let (ns, na) = (params.n_states, params.n_actions);
    let mut g = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            g[s * na + a] = ev.stationary[s] * pi.prob(s, a) * ev.advantage[0][s * na + a];
        }
    }
    Ok(g)
}

/// Numerical smoothness constant: 2x the largest finite-difference
/// curvature of J_r along random directions at random parameter points.
pub fn estimate_smoothness<R: Rng + ?Sized>(
    env: &TabularCmdp,
    rng: &mut R,
    samples: usize,
) -> Result<f64, ModelError> {
    let (ns, na) = (env.n_states, env.n_actions);
    let dim = ns * na;
    let h = 1e-4;
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let theta: Vec<f64> = (0..dim).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
        let dir: Vec<f64> = {
            let raw: Vec<f64> = (0..dim).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
            let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
            raw.iter().map(|v| v / norm).collect()
        };
        let at = |shift: f64| -> Result<Vec<f64>, ModelError> {
            let params = SoftmaxPolicyParams {
                n_states: ns,
                n_actions: na,
                theta: theta.iter().zip(&dir).map(|(t, d)| t + shift * d).collect(),
            };
            exact_reward_gradient(env, &params)
        };
        let (gp, gm) = (at(h)?, at(-h)?);
        let curvature = gp
            .iter()
            .zip(&gm)
            .map(|(a, b)| (a - b) / (2.0 * h))
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        worst = worst.max(curvature);
    }
    Ok(2.0 * worst.max(1e-6))
}

/// Default primal step size 1/(4L(1 + 2/delta)).
pub fn default_alpha(smoothness: f64, slater_delta: f64) -> f64 {
    1.0 / (4.0 * smoothness * (1.0 + 2.0 / slater_delta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::random_ergodic_cmdp;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn score_uniform_and_sums_to_zero() {
        let params = SoftmaxPolicyParams::zeros(2, 2);
        let g = params.score(0, 1);
        assert!((g[0] - (-0.5)).abs() < 1e-15);
        assert!((g[1] - 0.5).abs() < 1e-15);
        assert_eq!(g[2], 0.0);
        assert_eq!(g[3], 0.0);
        let row_sum: f64 = g[0..2].iter().sum();
        assert!(row_sum.abs() < 1e-12);
    }

    #[test]
    fn score_deterministic_limit() {
        let mut params = SoftmaxPolicyParams::zeros(1, 3);
        params.theta[1] = 40.0;
        let g = params.score(0, 1);
        assert!(g[1].abs() < 1e-12);
    }

    #[test]
    fn score_matches_finite_difference() {
        let mut params = SoftmaxPolicyParams::zeros(2, 3);
        params.theta = vec![0.3, -0.7, 0.1, 1.2, 0.0, -0.4];
        let (s, a) = (1, 2);
        let g = params.score(s, a);
        let h = 1e-5;
        for coord in 0..6 {
            let mut lo = params.clone();
            let mut hi = params.clone();
            lo.theta[coord] -= h;
            hi.theta[coord] += h;
            let fd = (hi.policy().prob(s, a).ln() - lo.policy().prob(s, a).ln()) / (2.0 * h);
            assert!((fd - g[coord]).abs() < 1e-6, "coord {coord}: {fd} vs {}", g[coord]);
        }
    }

    fn constant_traj(len: usize) -> Trajectory {
        Trajectory {
            states: vec![0; len],
            actions: vec![0; len],
            rewards: vec![1.0; len],
            costs: vec![0.5; len],
        }
    }

    #[test]
    fn advantage_constant_reward_single_action() {
        let params = SoftmaxPolicyParams::zeros(1, 1);
        let est = estimate_advantage(&constant_traj(100), 0, 0, &params, 10);
        assert!(est.m > 0);
        assert!(est.reward.abs() < 1e-12);
        assert!(est.cost.abs() < 1e-12);
    }

    #[test]
    fn advantage_unvisited_state_is_zero() {
        let params = SoftmaxPolicyParams::zeros(2, 1);
        let est = estimate_advantage(&constant_traj(100), 1, 0, &params, 10);
        assert_eq!(est.m, 0);
        assert_eq!(est.reward, 0.0);
        assert_eq!(est.cost, 0.0);
    }

    #[test]
    fn advantage_scan_by_hand() {
        // states: s=0 appears at t = 0, 1, 2, ...; N = 2, so windows claim
        // t = 0 (jump to 4), t = 4 (jump to 8); t = 8 > len - N = 7 stops.
        let traj = Trajectory {
            states: vec![0, 0, 0, 0, 0, 0, 0, 0, 0],
            actions: vec![0, 1, 1, 1, 1, 1, 1, 1, 1],
            rewards: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0],
            costs: vec![0.0; 9],
        };
        let params = SoftmaxPolicyParams::zeros(1, 2);
        let est = estimate_advantage(&traj, 0, 0, &params, 2);
        // subtrajectories: t=0 sum 1+2=3 (action 0 taken), t=4 sum 5+6=11
        // (action 1). V = (3+11)/2 = 7; Q(a=0) = 3 / (2 * 0.5) = 3.
        assert_eq!(est.m, 2);
        assert!((est.reward - (3.0 - 7.0)).abs() < 1e-12);
        let est1 = estimate_advantage(&traj, 0, 1, &params, 2);
        // Q(a=1) = 11 / (2 * 0.5) = 11
        assert!((est1.reward - (11.0 - 7.0)).abs() < 1e-12);
    }

    #[test]
    fn gradient_zero_for_single_action() {
        let params = SoftmaxPolicyParams::zeros(1, 1);
        let omega = gradient_estimate(&constant_traj(200), &params, 0.0, 10);
        assert!(omega.iter().all(|&w| w.abs() < 1e-12));
    }

    #[test]
    fn gradient_independent_of_lambda_when_cost_flat() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let env = random_ergodic_cmdp(3, 2, 1, &mut rng, 0.05).unwrap();
        let params = SoftmaxPolicyParams::zeros(3, 2);
        let pi = params.policy();
        let mut traj = Trajectory::default();
        let mut s = 0;
        for _ in 0..500 {
            let a = pi.sample_action(s, &mut rng);
            let (s2, r, _) = env.sample_step(s, a, &mut rng);
            traj.states.push(s);
            traj.actions.push(a);
            traj.rewards.push(r);
            traj.costs.push(0.0); // flat cost channel
            s = s2;
        }
        let w0 = gradient_estimate(&traj, &params, 0.0, 8);
        let w1 = gradient_estimate(&traj, &params, 1.5, 8);
        for (a, b) in w0.iter().zip(&w1) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_with_exact_advantages_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let env = random_ergodic_cmdp(3, 2, 1, &mut rng, 0.05).unwrap();
        let mut params = SoftmaxPolicyParams::zeros(3, 2);
        params.theta = vec![0.2, -0.1, 0.5, 0.0, -0.3, 0.4];
        let pi = params.policy();
        let ev = evaluate_policy(&env, &pi).unwrap();
        let lambda = 0.7;
        // trajectory
        let mut traj = Trajectory::default();
        let mut s = 0;
        for _ in 0..400 {
            let a = pi.sample_action(s, &mut rng);
            let (s2, r, c) = env.sample_step(s, a, &mut rng);
            traj.states.push(s);
            traj.actions.push(a);
            traj.rewards.push(r);
            traj.costs.push(c[0]);
            s = s2;
        }
        // plug-in gradient with oracle advantages
        let h = traj.len() as f64;
        let mut omega = vec![0.0; 6];
        for t in 0..traj.len() {
            let (s, a) = (traj.states[t], traj.actions[t]);
            let adv =
                ev.advantage[0][s * 2 + a] - lambda * ev.advantage[1][s * 2 + a];
            for a2 in 0..2 {
                let score = (if a2 == a { 1.0 } else { 0.0 }) - pi.prob(s, a2);
                omega[s * 2 + a2] += adv * score / h;
            }
        }
        // independent re-derivation from empirical pair frequencies
        let mut freq = vec![0.0; 6];
        for t in 0..traj.len() {
            freq[traj.states[t] * 2 + traj.actions[t]] += 1.0 / h;
        }
        let mut closed = vec![0.0; 6];
        for s in 0..3 {
            for a in 0..2 {
                let adv =
                    ev.advantage[0][s * 2 + a] - lambda * ev.advantage[1][s * 2 + a];
                for a2 in 0..2 {
                    let score = (if a2 == a { 1.0 } else { 0.0 }) - pi.prob(s, a2);
                    closed[s * 2 + a2] += freq[s * 2 + a] * adv * score;
                }
            }
        }
        for (a, b) in omega.iter().zip(&closed) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn exact_gradient_matches_finite_difference_of_gain() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let env = random_ergodic_cmdp(3, 2, 1, &mut rng, 0.05).unwrap();
        let mut params = SoftmaxPolicyParams::zeros(3, 2);
        params.theta = vec![0.1, -0.2, 0.3, 0.0, -0.1, 0.25];
        let g = exact_reward_gradient(&env, &params).unwrap();
        let h = 1e-6;
        for coord in 0..6 {
            let mut hi = params.clone();
            let mut lo = params.clone();
            hi.theta[coord] += h;
            lo.theta[coord] -= h;
            let jh = evaluate_policy(&env, &hi.policy()).unwrap().reward_gain();
            let jl = evaluate_policy(&env, &lo.policy()).unwrap().reward_gain();
            let fd = (jh - jl) / (2.0 * h);
            assert!((fd - g[coord]).abs() < 1e-5, "coord {coord}: {fd} vs {}", g[coord]);
        }
    }

    #[test]
    fn dual_update_arithmetic_and_projection() {
        let mut dual = DualState::new(1.0, 0.1);
        dual.lambda = 0.5;
        dual.update(-0.2);
        assert!((dual.lambda - 0.48).abs() < 1e-15);
        dual.update(100.0);
        assert_eq!(dual.lambda, 2.0); // capped at 2/delta
        dual.update(-100.0);
        assert_eq!(dual.lambda, 0.0);
    }

    #[test]
    fn schedule_formula_overflows_desk_scale() {
        // even with unit mixing constants the analysis-driven H exceeds T
        match EpochSchedule::from_constants(10_000, 0.4, 1.0, 1.0) {
            Err(PgError::ScheduleTooShort { .. }) => {}
            other => panic!("expected ScheduleTooShort, got {other:?}"),
        }
        let sched = EpochSchedule::with_lengths(10_000, 0.4, 500, 20).unwrap();
        assert_eq!(sched.k, 20);
        assert!(sched.h >= 2 * sched.n + 1);
    }

    #[test]
    fn epoch_with_zero_beta_keeps_lambda_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let env = random_ergodic_cmdp(3, 2, 1, &mut rng, 0.05).unwrap();
        let mut params = SoftmaxPolicyParams::zeros(3, 2);
        let mut dual = DualState::new(1.0, 0.0);
        let sched = EpochSchedule::with_lengths(4000, 0.4, 400, 10).unwrap();
        let mut state = 0;
        for k in 0..3 {
            let (s2, _, trace) = primal_dual_epoch(
                &mut params,
                &mut dual,
                &sched,
                &env,
                state,
                k,
                0.5,
                &mut rng,
            )
            .unwrap();
            state = s2;
            assert_eq!(trace.lambda, 0.0);
        }
        assert_eq!(dual.lambda, 0.0);
    }

    #[test]
    fn oracle_constants_cover_all_grid_policies() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let env = random_ergodic_cmdp(3, 2, 1, &mut rng, 0.1).unwrap();
        let (t_mix, t_hit) = mixing_hitting_oracle(&env).unwrap();
        // safety factor 2 over a grid that includes the uniform policy
        let uniform = StationaryPolicy::uniform(3, 2);
        assert!(t_mix >= 2.0 * mixing_time(&env, &uniform).unwrap() as f64 / 2.0);
        assert!(t_hit >= hitting_time(&env, &uniform).unwrap());
        assert!(t_mix >= 2.0 && t_hit >= 3.0);
    }

    #[test]
    fn smoothness_positive_and_alpha_sane() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let env = random_ergodic_cmdp(3, 2, 1, &mut rng, 0.1).unwrap();
        let l = estimate_smoothness(&env, &mut rng, 5).unwrap();
        assert!(l > 0.0);
        let a = default_alpha(l, 0.5);
        assert!(a > 0.0 && a < 1.0 / l);
    }

    #[test]
    fn ascent_direction_with_plugin_advantages() {
        // with oracle advantages the gradient estimate should be an ascent
        // direction for J_L on most epochs
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let env = random_ergodic_cmdp(3, 2, 1, &mut rng, 0.05).unwrap();
        let mut params = SoftmaxPolicyParams::zeros(3, 2);
        let lambda = 0.3;
        let mut state = 0;
        let mut ascents = 0;
        let epochs = 20;
        for _ in 0..epochs {
            let pi = params.policy();
            let ev = evaluate_policy(&env, &pi).unwrap();
            let mut traj = Trajectory::default();
            for _ in 0..1500 {
                let a = pi.sample_action(state, &mut rng);
                let (s2, r, c) = env.sample_step(state, a, &mut rng);
                traj.states.push(state);
                traj.actions.push(a);
                traj.rewards.push(r);
                traj.costs.push(c[0]);
                state = s2;
            }
            let mut omega = vec![0.0; 6];
            for t in 0..traj.len() {
                let (s, a) = (traj.states[t], traj.actions[t]);
                let adv =
                    ev.advantage[0][s * 2 + a] - lambda * ev.advantage[1][s * 2 + a];
                for a2 in 0..2 {
                    let score = (if a2 == a { 1.0 } else { 0.0 }) - pi.prob(s, a2);
                    omega[s * 2 + a2] += adv * score / traj.len() as f64;
                }
            }
            let h = 1e-4;
            let jl = |theta: Vec<f64>| -> f64 {
                let p = SoftmaxPolicyParams { n_states: 3, n_actions: 2, theta };
                let e = evaluate_policy(&env, &p.policy()).unwrap();
                e.reward_gain() - lambda * e.cost_gain(0)
            };
            let plus: Vec<f64> =
                params.theta.iter().zip(&omega).map(|(t, w)| t + h * w).collect();
            let minus: Vec<f64> =
                params.theta.iter().zip(&omega).map(|(t, w)| t - h * w).collect();
            if jl(plus) >= jl(minus) {
                ascents += 1;
            }
            // take a real gradient-estimate step to move theta around
            let est = gradient_estimate(&traj, &params, lambda, 8);
            for (t, w) in params.theta.iter_mut().zip(&est) {
                *t += 0.5 * w;
            }
        }
        assert!(ascents * 100 >= epochs * 90, "{ascents}/{epochs}");
    }
}
