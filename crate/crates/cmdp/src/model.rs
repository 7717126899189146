//! Tabular CMDP representation and exact evaluation oracles: stationary
//! distribution, gain, bias, Q/V/advantage, mixing and hitting times.
//!
//! Everything here treats the model as ground truth; the learners elsewhere
//! only ever see `sample_step`.

use rand::Rng;
use thiserror::Error;

/// Row-sum / distribution tolerance for model invariants.
pub const DIST_TOL: f64 = 1e-12;
/// Cap on the mixing-time search.
pub const MIXING_CAP: usize = 100_000;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("induced chain is not ergodic: {0}")]
    NotErgodic(String),
    #[error("singular linear system in policy evaluation")]
    SingularSystem,
    #[error("mixing time exceeds cap of {0}")]
    MixingCap(usize),
    #[error("parse error: {0}")]
    Parse(String),
}

/// Finite CMDP with one reward channel and any number of cost channels.
///
/// `reward` and each cost table are indexed `s * n_actions + a`; the
/// transition table is indexed `(s * n_actions + a) * n_states + s'`.
/// The `*_scale` fields record how an environment's original units map onto
/// the normalized tables (reward divided by `reward_scale`, original cost
/// `= -cost_scales[i] *` normalized cost), so reports can be converted back.
#[derive(Debug, Clone)]
pub struct TabularCmdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub reward: Vec<f64>,
    pub costs: Vec<Vec<f64>>,
    pub transition: Vec<f64>,
    pub initial_distribution: Vec<f64>,
    pub channel_names: Vec<String>,
    pub reward_scale: f64,
    pub cost_scales: Vec<f64>,
}

impl TabularCmdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        reward: Vec<f64>,
        costs: Vec<Vec<f64>>,
        transition: Vec<f64>,
        initial_distribution: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let names = (0..costs.len()).map(|i| format!("c{}", i + 1)).collect();
        let scales = vec![1.0; costs.len()];
        let m = TabularCmdp {
            n_states,
            n_actions,
            reward,
            costs,
            transition,
            initial_distribution,
            channel_names: names,
            reward_scale: 1.0,
            cost_scales: scales,
        };
        m.check_invariants()?;
        Ok(m)
    }

    pub fn n_channels(&self) -> usize {
        self.costs.len()
    }

    #[inline]
    pub fn sa(&self, s: usize, a: usize) -> usize {
        s * self.n_actions + a
    }

    /// P(s' | s, a)
    #[inline]
    pub fn p(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + s2]
    }

    pub fn check_invariants(&self) -> Result<(), ModelError> {
        let (ns, na) = (self.n_states, self.n_actions);
        if ns == 0 || na == 0 {
            return Err(ModelError::InvalidModel("empty state or action space".into()));
        }
        if self.reward.len() != ns * na
            || self.transition.len() != ns * na * ns
            || self.initial_distribution.len() != ns
            || self.costs.iter().any(|c| c.len() != ns * na)
        {
            return Err(ModelError::ShapeMismatch("table size".into()));
        }
        if self.reward.iter().any(|&r| !(0.0..=1.0 + DIST_TOL).contains(&r)) {
            return Err(ModelError::InvalidModel("reward outside [0, 1]".into()));
        }
        for c in &self.costs {
            if c.iter().any(|&v| v.abs() > 1.0 + DIST_TOL) {
                return Err(ModelError::InvalidModel("cost outside [-1, 1]".into()));
            }
        }
        for row in self.transition.chunks(ns) {
            check_distribution(row, "transition row")?;
        }
        check_distribution(&self.initial_distribution, "initial distribution")?;
        Ok(())
    }

    /// Draw (next_state, reward, costs) for one environment step.
    ///
    /// Next state uses a single inverse-CDF draw in canonical state order.
    pub fn sample_step<R: Rng + ?Sized>(
        &self,
        state: usize,
        action: usize,
        rng: &mut R,
    ) -> (usize, f64, Vec<f64>) {
        let row = &self.transition
            [(state * self.n_actions + action) * self.n_states..][..self.n_states];
        let u: f64 = rng.random();
        let next = inverse_cdf(row, u);
        let sa = self.sa(state, action);
        let costs = self.costs.iter().map(|c| c[sa]).collect();
        (next, self.reward[sa], costs)
    }

    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        inverse_cdf(&self.initial_distribution, u)
    }
}

fn check_distribution(row: &[f64], what: &str) -> Result<(), ModelError> {
    if row.iter().any(|&p| p < -DIST_TOL || !p.is_finite()) {
        return Err(ModelError::InvalidModel(format!("{what} has negative entry")));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(ModelError::InvalidModel(format!("{what} sums to {sum}")));
    }
    Ok(())
}

fn inverse_cdf(row: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    row.len() - 1
}

/// Per-state action distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryPolicy {
    pub n_states: usize,
    pub n_actions: usize,
    /// Indexed `s * n_actions + a`.
    pub action_probs: Vec<f64>,
}

impl StationaryPolicy {
    pub fn new(n_states: usize, n_actions: usize, action_probs: Vec<f64>) -> Result<Self, ModelError> {
        if action_probs.len() != n_states * n_actions {
            return Err(ModelError::ShapeMismatch("policy table size".into()));
        }
        for row in action_probs.chunks(n_actions) {
            check_distribution(row, "policy row")?;
        }
        Ok(StationaryPolicy { n_states, n_actions, action_probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        StationaryPolicy {
            n_states,
            n_actions,
            action_probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Self {
        let n_states = actions.len();
        let mut probs = vec![0.0; n_states * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            probs[s * n_actions + a] = 1.0;
        }
        StationaryPolicy { n_states, n_actions, action_probs: probs }
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.action_probs[s * self.n_actions + a]
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize {
        let row = &self.action_probs[s * self.n_actions..][..self.n_actions];
        let u: f64 = rng.random();
        inverse_cdf(row, u)
    }
}

/// State transition matrix induced by a policy, row-major `S x S`.
#[derive(Debug, Clone)]
pub struct InducedChain {
    pub n: usize,
    pub rows: Vec<f64>,
}

impl InducedChain {
    #[inline]
    pub fn p(&self, s: usize, s2: usize) -> f64 {
        self.rows[s * self.n + s2]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.rows[s * self.n..(s + 1) * self.n]
    }
}

/// P^pi(s, s') = sum_a pi(a|s) P(s'|s, a)
pub fn induced_chain(cmdp: &TabularCmdp, policy: &StationaryPolicy) -> Result<InducedChain, ModelError> {
    if policy.n_states != cmdp.n_states || policy.n_actions != cmdp.n_actions {
        return Err(ModelError::ShapeMismatch("policy does not match CMDP".into()));
    }
    let n = cmdp.n_states;
    let mut rows = vec![0.0; n * n];
    for s in 0..n {
        for a in 0..cmdp.n_actions {
            let w = policy.prob(s, a);
            if w == 0.0 {
                continue;
            }
            let p_row = &cmdp.transition[(s * cmdp.n_actions + a) * n..][..n];
            for s2 in 0..n {
                rows[s * n + s2] += w * p_row[s2];
            }
        }
    }
    Ok(InducedChain { n, rows })
}

/// Irreducibility (single SCC over the support graph) plus aperiodicity
/// (gcd of cycle lengths through state 0 equals 1).
pub fn check_ergodic(chain: &InducedChain) -> Result<(), ModelError> {
    let n = chain.n;
    let edge = |s: usize, s2: usize| chain.p(s, s2) > 1e-15;
    let reach = |from: usize, transpose: bool| -> Vec<bool> {
        let mut seen = vec![false; n];
        let mut stack = vec![from];
        seen[from] = true;
        while let Some(u) = stack.pop() {
            for v in 0..n {
                let has = if transpose { edge(v, u) } else { edge(u, v) };
                if has && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen
    };
    let fwd = reach(0, false);
    let bwd = reach(0, true);
    if fwd.iter().any(|&b| !b) || bwd.iter().any(|&b| !b) {
        return Err(ModelError::NotErgodic("support graph is not strongly connected".into()));
    }
    // period via BFS levels from state 0
    let mut dist = vec![usize::MAX; n];
    dist[0] = 0;
    let mut queue = std::collections::VecDeque::from([0usize]);
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            if edge(u, v) && dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    let mut g = 0usize;
    for u in 0..n {
        for v in 0..n {
            if edge(u, v) {
                let diff = (dist[u] as i64 + 1 - dist[v] as i64).unsigned_abs() as usize;
                g = gcd(g, diff);
            }
        }
    }
    if g != 1 {
        return Err(ModelError::NotErgodic(format!("chain is periodic with period {g}")));
    }
    Ok(())
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Stationary distribution of an ergodic chain, residual <= 1e-10.
pub fn stationary_distribution(chain: &InducedChain) -> Result<Vec<f64>, ModelError> {
    check_ergodic(chain)?;
    let d = stationary_on(chain, &(0..chain.n).collect::<Vec<_>>())?;
    let n = chain.n;
    let mut residual: f64 = 0.0;
    for s2 in 0..n {
        let balance: f64 = (0..n).map(|s| d[s] * chain.p(s, s2)).sum();
        residual = residual.max((balance - d[s2]).abs());
    }
    if residual > 1e-10 {
        return Err(ModelError::NotErgodic(format!("balance residual {residual:.3e}")));
    }
    Ok(d)
}

/// Stationary distribution restricted to the states in `support`
/// (zero elsewhere). `support` must be closed under the chain.
fn stationary_on(chain: &InducedChain, support: &[usize]) -> Result<Vec<f64>, ModelError> {
    let k = support.len();
    let mut a = vec![0.0; k * k];
    let mut b = vec![0.0; k];
    // rows 0..k-1: (P^T - I) d = 0, last row replaced with sum(d) = 1
    for (i, &si) in support.iter().enumerate() {
        for (j, &sj) in support.iter().enumerate() {
            a[i * k + j] = chain.p(sj, si) - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..k {
        a[(k - 1) * k + j] = 1.0;
    }
    b[k - 1] = 1.0;
    solve_dense(&mut a, &mut b, k)?;
    let mut d = vec![0.0; chain.n];
    for (i, &s) in support.iter().enumerate() {
        d[s] = b[i].max(0.0);
    }
    let total: f64 = d.iter().sum();
    for v in d.iter_mut() {
        *v /= total;
    }
    Ok(d)
}

/// In-place Gaussian elimination with partial pivoting: solves `a x = b`,
/// leaving the solution in `b`.
pub(crate) fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Result<(), ModelError> {
    for col in 0..n {
        let mut p = col;
        let mut best = a[col * n + col].abs();
        for r in col + 1..n {
            let v = a[r * n + col].abs();
            if v > best {
                best = v;
                p = r;
            }
        }
        if best < 1e-13 {
            return Err(ModelError::SingularSystem);
        }
        if p != col {
            for kk in 0..n {
                a.swap(col * n + kk, p * n + kk);
            }
            b.swap(col, p);
        }
        for r in col + 1..n {
            let f = a[r * n + col] / a[col * n + col];
            if f != 0.0 {
                for kk in col..n {
                    a[r * n + kk] -= f * a[col * n + kk];
                }
                b[r] -= f * b[col];
            }
        }
    }
    for col in (0..n).rev() {
        let mut s = b[col];
        for kk in col + 1..n {
            s -= a[col * n + kk] * b[kk];
        }
        b[col] = s / a[col * n + col];
    }
    Ok(())
}

/// Exact gain/bias/Q/advantage for every channel of a policy on an ergodic
/// CMDP. Channel 0 is the reward; channels 1.. are the costs in order.
#[derive(Debug, Clone)]
pub struct PolicyEvaluation {
    pub gains: Vec<f64>,
    pub stationary: Vec<f64>,
    /// bias v_g(s), one vector per channel
    pub bias: Vec<Vec<f64>>,
    /// q_g(s, a), row-major `S x A`, one table per channel
    pub q: Vec<Vec<f64>>,
    /// advantage a_g = q_g - v_g
    pub advantage: Vec<Vec<f64>>,
}

impl PolicyEvaluation {
    pub fn reward_gain(&self) -> f64 {
        self.gains[0]
    }

    pub fn cost_gain(&self, channel: usize) -> f64 {
        self.gains[channel + 1]
    }
}

/// Solve the average-reward Bellman system for each channel.
///
/// The bias solves `(I - P^pi) v = g^pi - J 1` with `d . v = 0`; both are
/// captured at once by the nonsingular system `(I - P^pi + 1 d^T) v = rhs`.
pub fn evaluate_policy(cmdp: &TabularCmdp, policy: &StationaryPolicy) -> Result<PolicyEvaluation, ModelError> {
    let chain = induced_chain(cmdp, policy)?;
    let d = stationary_distribution(&chain)?;
    let n = cmdp.n_states;
    let na = cmdp.n_actions;
    let mut tables: Vec<&[f64]> = vec![&cmdp.reward];
    for c in &cmdp.costs {
        tables.push(c);
    }
    let mut gains = Vec::new();
    let mut bias = Vec::new();
    let mut qs = Vec::new();
    let mut advs = Vec::new();
    for g in &mut tables {
        let g_pi: Vec<f64> = (0..n)
            .map(|s| (0..na).map(|a| policy.prob(s, a) * g[s * na + a]).sum())
            .collect();
        let j: f64 = d.iter().zip(&g_pi).map(|(d, g)| d * g).sum();
        let mut a_mat = vec![0.0; n * n];
        for s in 0..n {
            for s2 in 0..n {
                a_mat[s * n + s2] = (if s == s2 { 1.0 } else { 0.0 }) - chain.p(s, s2) + d[s2];
            }
        }
        let mut v: Vec<f64> = g_pi.iter().map(|g| g - j).collect();
        solve_dense(&mut a_mat, &mut v, n)?;
        let mut q = vec![0.0; n * na];
        let mut adv = vec![0.0; n * na];
        for s in 0..n {
            for a in 0..na {
                let sa = s * na + a;
                let next: f64 = (0..n).map(|s2| cmdp.p(s, a, s2) * v[s2]).sum();
                q[sa] = g[sa] - j + next;
                adv[sa] = q[sa] - v[s];
            }
        }
        gains.push(j);
        bias.push(v);
        qs.push(q);
        advs.push(adv);
    }
    Ok(PolicyEvaluation { gains, stationary: d, bias: bias_normalize(bias), q: qs, advantage: advs })
}

// The linear system already enforces d.v = 0; this is a no-op kept as a
// single place to re-normalize if the solve ever drifts.
fn bias_normalize(bias: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    bias
}

/// Gain and bias of a single channel on a unichain (one recurrent class plus
/// transient states). Used where ergodicity under every policy is not
/// guaranteed, e.g. span oracles on weakly communicating chains.
pub fn unichain_gain_bias(chain: &InducedChain, g_pi: &[f64]) -> Result<(f64, Vec<f64>), ModelError> {
    let n = chain.n;
    // recurrent class: SCC with no edges leaving it
    let recurrent = find_recurrent_class(chain)?;
    let d = stationary_on(chain, &recurrent)?;
    let j: f64 = d.iter().zip(g_pi).map(|(d, g)| d * g).sum();
    let mut a_mat = vec![0.0; n * n];
    for s in 0..n {
        for s2 in 0..n {
            a_mat[s * n + s2] = (if s == s2 { 1.0 } else { 0.0 }) - chain.p(s, s2) + d[s2];
        }
    }
    let mut v: Vec<f64> = g_pi.iter().map(|g| g - j).collect();
    solve_dense(&mut a_mat, &mut v, n)?;
    Ok((j, v))
}

fn find_recurrent_class(chain: &InducedChain) -> Result<Vec<usize>, ModelError> {
    let n = chain.n;
    let edge = |s: usize, s2: usize| chain.p(s, s2) > 1e-15;
    // A state is recurrent-candidate if every state reachable from it can
    // reach it back; collect the class of the lowest such state.
    let reach_from = |s0: usize| -> Vec<bool> {
        let mut seen = vec![false; n];
        let mut stack = vec![s0];
        seen[s0] = true;
        while let Some(u) = stack.pop() {
            for v in 0..n {
                if edge(u, v) && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen
    };
    let mut classes: Vec<Vec<usize>> = Vec::new();
    let mut assigned = vec![false; n];
    for s in 0..n {
        if assigned[s] {
            continue;
        }
        let fwd = reach_from(s);
        let closed = (0..n).filter(|&v| fwd[v]).all(|v| {
            let back = reach_from(v);
            back[s]
        });
        if closed {
            let class: Vec<usize> = (0..n).filter(|&v| fwd[v]).collect();
            for &v in &class {
                assigned[v] = true;
            }
            classes.push(class);
        }
    }
    match classes.len() {
        1 => Ok(classes.pop().unwrap()),
        0 => Err(ModelError::NotErgodic("no closed recurrent class found".into())),
        k => Err(ModelError::NotErgodic(format!("{k} recurrent classes"))),
    }
}

/// Smallest t >= 1 with max_s TV((P^pi)^t(s,.), d) <= 1/4, TV = half L1.
pub fn mixing_time(cmdp: &TabularCmdp, policy: &StationaryPolicy) -> Result<usize, ModelError> {
    let chain = induced_chain(cmdp, policy)?;
    let d = stationary_distribution(&chain)?;
    mixing_time_of_chain(&chain, &d)
}

pub fn mixing_time_of_chain(chain: &InducedChain, d: &[f64]) -> Result<usize, ModelError> {
    let n = chain.n;
    let mut power = chain.rows.clone();
    for t in 1..=MIXING_CAP {
        let worst = (0..n)
            .map(|s| tv_distance(&power[s * n..(s + 1) * n], d))
            .fold(0.0f64, f64::max);
        if worst <= 0.25 {
            return Ok(t);
        }
        power = mat_mul(&power, &chain.rows, n);
    }
    Err(ModelError::MixingCap(MIXING_CAP))
}

pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

fn mat_mul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let v = a[i * n + k];
            if v != 0.0 {
                for j in 0..n {
                    out[i * n + j] += v * b[k * n + j];
                }
            }
        }
    }
    out
}

/// max_s 1 / d(s)
pub fn hitting_time(cmdp: &TabularCmdp, policy: &StationaryPolicy) -> Result<f64, ModelError> {
    let chain = induced_chain(cmdp, policy)?;
    let d = stationary_distribution(&chain)?;
    Ok(d.iter().map(|&p| 1.0 / p).fold(0.0f64, f64::max))
}

// --- text serialization -----------------------------------------------------

impl TabularCmdp {
    /// Self-describing text format so experiments replay bit-exact.
    pub fn to_text(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        writeln!(out, "cmdp v1").unwrap();
        writeln!(out, "states {}", self.n_states).unwrap();
        writeln!(out, "actions {}", self.n_actions).unwrap();
        write!(out, "channels {}", self.n_channels()).unwrap();
        for name in &self.channel_names {
            write!(out, " {name}").unwrap();
        }
        out.push('\n');
        writeln!(out, "reward_scale {:.16e}", self.reward_scale).unwrap();
        write!(out, "cost_scales").unwrap();
        for s in &self.cost_scales {
            write!(out, " {s:.16e}").unwrap();
        }
        out.push('\n');
        let dump = |out: &mut String, label: &str, table: &[f64], width: usize| {
            writeln!(out, "{label}").unwrap();
            for row in table.chunks(width) {
                let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
                writeln!(out, "{}", line.join(" ")).unwrap();
            }
        };
        dump(&mut out, "rho", &self.initial_distribution, self.n_states);
        dump(&mut out, "reward", &self.reward, self.n_actions);
        for (i, c) in self.costs.iter().enumerate() {
            dump(&mut out, &format!("cost {}", self.channel_names[i]), c, self.n_actions);
        }
        dump(&mut out, "transition", &self.transition, self.n_states);
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ModelError> {
        let mut lines = text.lines();
        let parse = |what: &str, s: Option<&str>| -> Result<String, ModelError> {
            s.map(|s| s.to_string())
                .ok_or_else(|| ModelError::Parse(format!("missing {what}")))
        };
        let header = parse("header", lines.next())?;
        if header.trim() != "cmdp v1" {
            return Err(ModelError::Parse(format!("unknown header {header:?}")));
        }
        let field = |line: String, key: &str| -> Result<Vec<String>, ModelError> {
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some(k) if k == key => Ok(parts.map(|s| s.to_string()).collect()),
                other => Err(ModelError::Parse(format!("expected {key}, got {other:?}"))),
            }
        };
        let one_num = |v: Vec<String>, key: &str| -> Result<f64, ModelError> {
            v.first()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| ModelError::Parse(format!("bad {key}")))
        };
        let n_states =
            one_num(field(parse("states", lines.next())?, "states")?, "states")? as usize;
        let n_actions =
            one_num(field(parse("actions", lines.next())?, "actions")?, "actions")? as usize;
        let chan = field(parse("channels", lines.next())?, "channels")?;
        let n_channels: usize = chan
            .first()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ModelError::Parse("bad channels".into()))?;
        let channel_names: Vec<String> = chan.iter().skip(1).cloned().collect();
        if channel_names.len() != n_channels {
            return Err(ModelError::Parse("channel name count mismatch".into()));
        }
        let reward_scale = one_num(
            field(parse("reward_scale", lines.next())?, "reward_scale")?,
            "reward_scale",
        )?;
        let cost_scales: Vec<f64> = field(parse("cost_scales", lines.next())?, "cost_scales")?
            .iter()
            .map(|s| s.parse())
            .collect::<Result<_, _>>()
            .map_err(|_| ModelError::Parse("bad cost_scales".into()))?;
        let mut read_table = |label: &str, rows: usize, width: usize| -> Result<Vec<f64>, ModelError> {
            let got = parse(label, lines.next())?;
            if got.trim() != label {
                return Err(ModelError::Parse(format!("expected {label:?}, got {got:?}")));
            }
            let mut table = Vec::with_capacity(rows * width);
            for _ in 0..rows {
                let line = parse(label, lines.next())?;
                for tok in line.split_whitespace() {
                    table.push(
                        tok.parse()
                            .map_err(|_| ModelError::Parse(format!("bad number in {label}")))?,
                    );
                }
            }
            if table.len() != rows * width {
                return Err(ModelError::Parse(format!("{label} has wrong size")));
            }
            Ok(table)
        };
        let initial_distribution = read_table("rho", 1, n_states)?;
        let reward = read_table("reward", n_states, n_actions)?;
        let mut costs = Vec::new();
        for name in &channel_names {
            costs.push(read_table(&format!("cost {name}"), n_states, n_actions)?);
        }
        let transition = read_table("transition", n_states * n_actions, n_states)?;
        let mut m = TabularCmdp::new(n_states, n_actions, reward, costs, transition, initial_distribution)?;
        m.channel_names = channel_names;
        m.reward_scale = reward_scale;
        m.cost_scales = cost_scales;
        Ok(m)
    }
}
