//! Tabular Q-learning with potential-based reward shaping.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::mdp::{GridWorld, N_ACTIONS};
use crate::rng::{stream_rng, streams};

/// Optimal undiscounted return per state in the episodic view.
pub fn optimal_values(gw: &GridWorld) -> Result<Vec<f64>> {
    let n = gw.n_states;
    let mut v = vec![0.0; n];
    for _ in 0..100 * n + 1000 {
        let mut change: f64 = 0.0;
        for s in 0..n {
            if gw.is_goal(s) {
                continue;
            }
            let best = (0..N_ACTIONS)
                .map(|a| {
                    let sn = gw.next_state(s, a);
                    gw.arrival_reward(sn) + if gw.is_goal(sn) { 0.0 } else { v[sn] }
                })
                .fold(f64::NEG_INFINITY, f64::max);
            change = change.max((best - v[s]).abs());
            v[s] = best;
        }
        if change < 1e-10 {
            return Ok(v);
        }
    }
    Err(Error::Divergence("value iteration did not reach a fixed point".into()))
}

pub fn value_iteration_optimal_return(gw: &GridWorld) -> Result<f64> {
    Ok(optimal_values(gw)?[gw.start_id])
}

/// γ·v(s′) − v(s)
pub fn shaping_reward(v: &[f64], s: usize, s_next: usize, gamma: f64) -> f64 {
    gamma * v[s_next] - v[s]
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapingSpec {
    pub potential: Vec<f64>,
    pub beta: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub alpha_q: f64,
    pub max_episode: usize,
    pub budget: usize,
    pub eval_every: usize,
}

impl ShapingSpec {
    pub fn new(potential: Vec<f64>, beta: f64, alpha_q: f64) -> ShapingSpec {
        ShapingSpec {
            potential,
            beta,
            gamma: 0.99,
            epsilon: 0.05,
            alpha_q,
            max_episode: 1000,
            budget: 100_000,
            eval_every: 100,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.potential.len() != n {
            return Err(Error::Shape(format!("potential of length {} for {n} states", self.potential.len())));
        }
        if self.potential.iter().any(|x| !x.is_finite()) {
            return Err(Error::Invalid("potential has non-finite entries".into()));
        }
        if !(0.0..=1.0).contains(&self.beta) || !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Invalid(format!("beta {} / gamma {} out of range", self.beta, self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.epsilon) || !(self.alpha_q > 0.0 && self.alpha_q <= 1.0) {
            return Err(Error::Invalid("epsilon must lie in [0, 1] and alpha_q in (0, 1]".into()));
        }
        if self.max_episode == 0 || self.budget == 0 || self.eval_every == 0 {
            return Err(Error::Invalid("episode cap, budget and eval interval must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub n_opt: Option<usize>,
    pub n_visit: usize,
    /// (training step, undiscounted greedy return) per evaluation.
    pub curve: Vec<(usize, f64)>,
}

impl RunMetrics {
    /// N_OPT with non-converged runs counted as the full budget.
    pub fn n_opt_or(&self, budget: usize) -> usize {
        self.n_opt.unwrap_or(budget)
    }
}

/// Lowest-index argmax.
pub fn greedy_action(q: &[f64; N_ACTIONS]) -> usize {
    let mut best = 0;
    for a in 1..N_ACTIONS {
        if q[a] > q[best] {
            best = a;
        }
    }
    best
}

fn greedy_return(gw: &GridWorld, q: &[[f64; N_ACTIONS]], cap: usize) -> f64 {
    let mut s = gw.start_id;
    let mut ret = 0.0;
    for _ in 0..cap {
        s = gw.next_state(s, greedy_action(&q[s]));
        ret += gw.arrival_reward(s);
        if gw.is_goal(s) {
            break;
        }
    }
    ret
}

/// Runs one Q-learning agent and also returns its final table.
pub fn q_learning(gw: &GridWorld, spec: &ShapingSpec, seed: u64) -> Result<(RunMetrics, Vec<[f64; N_ACTIONS]>)> {
    spec.validate(gw.n_states)?;
    let optimal = value_iteration_optimal_return(gw)?;
    let mut rng = stream_rng(seed, streams::Q_LEARNING);
    let mut q = vec![[0.0; N_ACTIONS]; gw.n_states];
    let (mut s, mut t_ep, mut n_visit) = (gw.start_id, 0usize, 0usize);
    let mut curve = Vec::with_capacity(spec.budget / spec.eval_every);
    for step in 1..=spec.budget {
        let a = if rng.gen::<f64>() < spec.epsilon {
            rng.gen_range(0..N_ACTIONS as u32) as usize
        } else {
            greedy_action(&q[s])
        };
        let (sn, r, done) = gw.env_step(s, a)?;
        if gw.is_red(sn) {
            n_visit += 1;
        }
        let fed = (1.0 - spec.beta) * r + spec.beta * shaping_reward(&spec.potential, s, sn, spec.gamma);
        let target = if done { fed } else { fed + spec.gamma * q[sn].iter().copied().fold(f64::NEG_INFINITY, f64::max) };
        q[s][a] += spec.alpha_q * (target - q[s][a]);
        t_ep += 1;
        if done || t_ep >= spec.max_episode {
            s = gw.start_id;
            t_ep = 0;
        } else {
            s = sn;
        }
        if step % spec.eval_every == 0 {
            curve.push((step, greedy_return(gw, &q, spec.max_episode)));
        }
    }
    let mut n_opt = None;
    for &(step, ret) in curve.iter().rev() {
        if (ret - optimal).abs() < 1e-9 {
            n_opt = Some(step);
        } else {
            break;
        }
    }
    Ok((RunMetrics { n_opt, n_visit, curve }, q))
}

pub fn q_learning_run(gw: &GridWorld, spec: &ShapingSpec, seed: u64) -> Result<RunMetrics> {
    Ok(q_learning(gw, spec, seed)?.0)
}

/// A named potential, either shared by every seed or one per seed.
#[derive(Debug, Clone)]
pub struct PotentialSet {
    pub name: String,
    pub per_seed: Vec<Vec<f64>>,
    /// Unshaped baseline: runs only at β = 0.
    pub unshaped: bool,
}

impl PotentialSet {
    pub fn none(n_states: usize) -> PotentialSet {
        PotentialSet { name: "NS".into(), per_seed: vec![vec![0.0; n_states]], unshaped: true }
    }

    pub fn shared(name: &str, v: Vec<f64>) -> PotentialSet {
        PotentialSet { name: name.into(), per_seed: vec![v], unshaped: false }
    }

    pub fn for_seed(&self, i: usize) -> &[f64] {
        if self.per_seed.len() == 1 {
            &self.per_seed[0]
        } else {
            &self.per_seed[i]
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub seeds: Vec<u64>,
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub gamma: f64,
    pub epsilon: f64,
    pub max_episode: usize,
    pub budget: usize,
    pub eval_every: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            seeds: (0..10).collect(),
            betas: vec![0.25, 0.5, 0.75, 1.0],
            alphas: vec![0.1, 0.3, 1.0],
            gamma: 0.99,
            epsilon: 0.05,
            max_episode: 1000,
            budget: 100_000,
            eval_every: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub potential: String,
    pub beta: f64,
    pub alpha_q: f64,
    pub seed: u64,
    pub metrics: RunMetrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestCell {
    pub potential: String,
    pub beta: f64,
    pub alpha_q: f64,
    pub mean_n_opt: f64,
    pub mean_n_visit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub optimal_return: f64,
    pub budget: usize,
    pub records: Vec<RunRecord>,
    pub best: Vec<BestCell>,
}

impl SuiteResult {
    /// Per-seed records of the best cell of `potential`.
    pub fn best_runs(&self, potential: &str) -> Vec<&RunRecord> {
        match self.best.iter().find(|b| b.potential == potential) {
            Some(b) => self
                .records
                .iter()
                .filter(|r| r.potential == potential && r.beta == b.beta && r.alpha_q == b.alpha_q)
                .collect(),
            None => Vec::new(),
        }
    }
}

/// Every (potential, β, α_q, seed) run; per potential the best cell is the
/// lowest mean N_OPT, then the lowest mean N_VISIT, then grid order.
pub fn run_shaping_suite(gw: &GridWorld, potentials: &[PotentialSet], cfg: &SuiteConfig) -> Result<SuiteResult> {
    if cfg.seeds.is_empty() {
        return Err(Error::Invalid("shaping suite needs at least one seed".into()));
    }
    let optimal_return = value_iteration_optimal_return(gw)?;
    let mut records = Vec::new();
    let mut best = Vec::new();
    for pot in potentials {
        if pot.per_seed.len() != 1 && pot.per_seed.len() != cfg.seeds.len() {
            return Err(Error::Shape(format!("potential {} has {} seed variants", pot.name, pot.per_seed.len())));
        }
        let betas = if pot.unshaped { vec![0.0] } else { cfg.betas.clone() };
        let mut choice: Option<BestCell> = None;
        for &beta in &betas {
            for &alpha_q in &cfg.alphas {
                let (mut sum_opt, mut sum_visit) = (0.0, 0.0);
                for (i, &seed) in cfg.seeds.iter().enumerate() {
                    let spec = ShapingSpec {
                        potential: pot.for_seed(i).to_vec(),
                        beta,
                        gamma: cfg.gamma,
                        epsilon: cfg.epsilon,
                        alpha_q,
                        max_episode: cfg.max_episode,
                        budget: cfg.budget,
                        eval_every: cfg.eval_every,
                    };
                    let metrics = q_learning_run(gw, &spec, seed)?;
                    sum_opt += metrics.n_opt_or(cfg.budget) as f64;
                    sum_visit += metrics.n_visit as f64;
                    records.push(RunRecord { potential: pot.name.clone(), beta, alpha_q, seed, metrics });
                }
                let k = cfg.seeds.len() as f64;
                let cell = BestCell {
                    potential: pot.name.clone(),
                    beta,
                    alpha_q,
                    mean_n_opt: sum_opt / k,
                    mean_n_visit: sum_visit / k,
                };
                let better = choice.as_ref().is_none_or(|b| {
                    (cell.mean_n_opt, cell.mean_n_visit) < (b.mean_n_opt, b.mean_n_visit)
                });
                if better {
                    choice = Some(cell);
                }
            }
        }
        best.extend(choice);
    }
    Ok(SuiteResult { optimal_return, budget: cfg.budget, records, best })
}
