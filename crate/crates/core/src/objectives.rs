//! The four eigenvector objectives and the loops that minimize them.
//!
//! GDO works on u(s) directly. LOG_GDO, NG_GDO and DROGO work on v = log u.
//! NG_GDO and DROGO are surrogates g·v(s) with the coefficient g frozen, so
//! their output gradient flows only through v(s).

use std::fmt;

use crate::error::{Error, Result};
use crate::evalkit::cosine_similarity;
use crate::matrix::DenseMatrix;
use crate::mdp::{EncoderKind, GridWorld};
use crate::nets::optim::{clip_global_norm, RmsProp};
use crate::nets::{ConvSpec, MlpSpec, NetSpec, Network};
use crate::rng::{stream_rng, streams};
use crate::sampling::{BatchIter, Dataset, Sample};

/// Largest exponent magnitude evaluated before declaring divergence.
pub const EXP_LIMIT: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    /// Penalty ½(u(s)−u(s′))² + e^{−r/λ}u(s)² + b′(u(s)²−c′)(u(s″)²−c′).
    Gdo { b: f64, c: f64 },
    LogGdo { b: f64, c: f64 },
    NgGdo { b: f64, c: f64 },
    Drogo { anchor: usize },
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Gdo { .. } => "GDO",
            LossKind::LogGdo { .. } => "LOG_GDO",
            LossKind::NgGdo { .. } => "NG_GDO",
            LossKind::Drogo { .. } => "DROGO",
        }
    }

    /// True when the potential stores u rather than log u.
    pub fn is_linear(&self) -> bool {
        matches!(self, LossKind::Gdo { .. })
    }

    pub fn validate(&self, n_states: usize, gw: Option<&GridWorld>) -> Result<()> {
        match *self {
            LossKind::Gdo { b, c } | LossKind::LogGdo { b, c } | LossKind::NgGdo { b, c } => {
                if !(b >= 0.0 && b.is_finite() && c.is_finite()) {
                    return Err(Error::Invalid(format!("penalty coefficients must be finite with b >= 0 (b={b}, c={c})")));
                }
            }
            LossKind::Drogo { anchor } => {
                if anchor >= n_states || gw.is_some_and(|g| !g.is_goal(anchor)) {
                    return Err(Error::Invalid(format!("DROGO anchor {anchor} is not a terminal state")));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn exp_checked(x: f64) -> Result<f64> {
    if x.is_finite() && x.abs() <= EXP_LIMIT {
        Ok(x.exp())
    } else {
        Err(Error::Divergence(format!("exponent {x:e} exceeds the overflow guard")))
    }
}

/// Loss value plus, per sample, the derivative with respect to the network
/// outputs at (s, s′, s″).
#[derive(Debug, Clone)]
pub struct LossEval {
    pub loss: f64,
    pub grads: Vec<[f64; 3]>,
}

impl LossEval {
    /// Sums the per-sample derivatives into one derivative per state.
    pub fn fold(&self, samples: &[Sample], n_states: usize) -> Vec<f64> {
        let mut d = vec![0.0; n_states];
        for (smp, g) in samples.iter().zip(&self.grads) {
            d[smp.s] += g[0];
            d[smp.s_next] += g[1];
            d[smp.s2] += g[2];
        }
        d
    }
}

/// Σ_i w_i·ℓ(sample_i) with per-sample derivatives scaled by w_i.
pub fn evaluate_weighted(kind: LossKind, lambda: f64, vals: &[f64], samples: &[Sample], weights: &[f64]) -> Result<LossEval> {
    if samples.len() != weights.len() {
        return Err(Error::Shape("one weight per sample required".into()));
    }
    let n = vals.len();
    if let Some(s) = samples.iter().find(|s| s.s >= n || s.s_next >= n || s.s2 >= n) {
        return Err(Error::Invalid(format!("sample {s:?} outside {n} states")));
    }
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(samples.len());
    for (smp, &w) in samples.iter().zip(weights) {
        let (l, g) = sample_terms(kind, lambda, vals, smp)?;
        loss += w * l;
        grads.push([w * g[0], w * g[1], w * g[2]]);
    }
    if !loss.is_finite() {
        return Err(Error::Divergence("non-finite loss".into()));
    }
    Ok(LossEval { loss, grads })
}

/// Batch mean of the per-sample loss.
pub fn evaluate(kind: LossKind, lambda: f64, vals: &[f64], batch: &[Sample]) -> Result<LossEval> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let w = vec![1.0 / batch.len() as f64; batch.len()];
    evaluate_weighted(kind, lambda, vals, batch, &w)
}

pub fn loss_gdo(u: &[f64], batch: &[Sample], lambda: f64, b: f64, c: f64) -> Result<LossEval> {
    evaluate(LossKind::Gdo { b, c }, lambda, u, batch)
}

pub fn loss_log_gdo(v: &[f64], batch: &[Sample], lambda: f64, b: f64, c: f64) -> Result<LossEval> {
    evaluate(LossKind::LogGdo { b, c }, lambda, v, batch)
}

pub fn loss_ng_gdo(v: &[f64], batch: &[Sample], lambda: f64, b: f64, c: f64) -> Result<LossEval> {
    evaluate(LossKind::NgGdo { b, c }, lambda, v, batch)
}

pub fn loss_drogo(v: &[f64], batch: &[Sample], lambda: f64, anchor: usize) -> Result<LossEval> {
    evaluate(LossKind::Drogo { anchor }, lambda, v, batch)
}

fn sample_terms(kind: LossKind, lambda: f64, x: &[f64], smp: &Sample) -> Result<(f64, [f64; 3])> {
    let (a, an, a2) = (x[smp.s], x[smp.s_next], x[smp.s2]);
    let rw = exp_checked(-smp.r / lambda)?;
    Ok(match kind {
        LossKind::Gdo { b, c } => {
            let diff = a - an;
            let (p, p2) = (a * a - c, a2 * a2 - c);
            let l = 0.5 * diff * diff + rw * a * a + b * p * p2;
            (l, [diff + 2.0 * rw * a + 2.0 * b * a * p2, -diff, 2.0 * b * a2 * p])
        }
        LossKind::LogGdo { b, c } => {
            let (e, en) = (exp_checked(a)?, exp_checked(an)?);
            let (e2, e22) = (exp_checked(2.0 * a)?, exp_checked(2.0 * a2)?);
            let er = exp_checked(2.0 * a - smp.r / lambda)?;
            let diff = e - en;
            let l = 0.5 * diff * diff + b * (e2 - c) * (e22 - c) + er;
            (l, [diff * e + 2.0 * b * e2 * (e22 - c) + 2.0 * er, -diff * en, 2.0 * b * e22 * (e2 - c)])
        }
        LossKind::NgGdo { b, c } => {
            let g = rw - exp_checked(an - a)? + b * (exp_checked(2.0 * a2)? - c);
            (g * a, [g, 0.0, 0.0])
        }
        LossKind::Drogo { anchor } => {
            let vn = if smp.s_next == anchor { 0.0 } else { an };
            let g = rw - exp_checked(vn - a)?;
            (g * a, [g, 0.0, 0.0])
        }
    })
}

/// Exact expected derivative per state, enumerating s uniform, s′ with
/// weight `trans[(s, s′)]` and s″ uniform.
pub fn expected_update(kind: LossKind, lambda: f64, vals: &[f64], r: &[f64], trans: &DenseMatrix) -> Result<Vec<f64>> {
    let n = vals.len();
    if r.len() != n || trans.rows != n || trans.cols != n {
        return Err(Error::Shape("expected update needs matching rewards and an n x n weight matrix".into()));
    }
    let (samples, weights) = enumerate_samples(r, trans);
    Ok(evaluate_weighted(kind, lambda, vals, &samples, &weights)?.fold(&samples, n))
}

/// All (s, s′, s″) with nonzero weight, weighted (1/n)·trans(s, s′)·(1/n).
pub fn enumerate_samples(r: &[f64], trans: &DenseMatrix) -> (Vec<Sample>, Vec<f64>) {
    let n = r.len();
    let mut samples = Vec::new();
    let mut weights = Vec::new();
    for s in 0..n {
        for sn in 0..n {
            let w = trans[(s, sn)];
            if w == 0.0 {
                continue;
            }
            for s2 in 0..n {
                samples.push(Sample { s, r: r[s], s_next: sn, s2 });
                weights.push(w / (n * n) as f64);
            }
        }
    }
    (samples, weights)
}

/// Deterministic descent on `expected_update`; `pin` holds one entry at 0.
pub fn train_tabular_expected(
    kind: LossKind,
    lambda: f64,
    r: &[f64],
    trans: &DenseMatrix,
    lr: f64,
    steps: usize,
    pin: Option<usize>,
) -> Result<Vec<f64>> {
    let mut v = initial_tabular(kind, r.len());
    if let Some(p) = pin {
        v[p] = 0.0;
    }
    for _ in 0..steps {
        let d = expected_update(kind, lambda, &v, r, trans)?;
        for (s, (x, g)) in v.iter_mut().zip(&d).enumerate() {
            if Some(s) != pin {
                *x -= lr * g;
            }
        }
    }
    Ok(v)
}

/// (‖exp(v+δv) − exp(v)‖², δvᵀ diag(exp 2v) δv)
pub fn riemannian_metric_check(v: &[f64], dv: &[f64]) -> (f64, f64) {
    let lhs = v.iter().zip(dv).map(|(&a, &d)| (a.exp() * d.exp_m1()).powi(2)).sum();
    let rhs = v.iter().zip(dv).map(|(&a, &d)| (2.0 * a).exp() * d * d).sum();
    (lhs, rhs)
}

/// Log-space vector used for comparison with the ground truth: log|u| for
/// GDO, the values themselves otherwise.
pub fn comparison_log(kind: LossKind, vals: &[f64]) -> Vec<f64> {
    if kind.is_linear() {
        vals.iter().map(|u| u.abs().max(f64::MIN_POSITIVE).ln()).collect()
    } else {
        vals.to_vec()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub steps: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub clip_norm: f64,
    pub rms_decay: f64,
    pub rms_eps: f64,
    /// Mean-center both log vectors before cosine similarity.
    pub center: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-5,
            batch: 2000,
            steps: 20_000,
            eval_every: 500,
            seed: 0,
            clip_norm: 0.5,
            rms_decay: 0.99,
            rms_eps: 1e-8,
            center: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.steps == 0 || self.eval_every == 0 {
            return Err(Error::Invalid("batch, steps and eval interval must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.clip_norm > 0.0) || !(0.0..1.0).contains(&self.rms_decay) || !(self.rms_eps > 0.0) {
            return Err(Error::Invalid("step size, clip norm and RMSprop constants out of range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum Potential {
    Tabular(Vec<f64>),
    Neural { net: Network, encoder: EncoderKind },
}

impl Potential {
    pub fn values(&self, gw: &GridWorld) -> Result<Vec<f64>> {
        match self {
            Potential::Tabular(v) => Ok(v.clone()),
            Potential::Neural { net, encoder } => net.predict(&gw.feature_matrix(*encoder), gw.n_states),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub potential: Potential,
    /// Raw outputs over all states at the end of training.
    pub values: Vec<f64>,
    /// (step, cosine similarity) at every evaluation.
    pub curve: Vec<(usize, f64)>,
    /// Step and message of a divergence, if one stopped training.
    pub diverged: Option<(usize, String)>,
}

impl TrainOutcome {
    pub fn final_cosine(&self) -> f64 {
        self.curve.last().map_or(f64::NAN, |c| c.1)
    }
}

fn initial_tabular(kind: LossKind, n: usize) -> Vec<f64> {
    // v = 0 corresponds to u = exp(0) = 1; u = 0 is a stationary point of GDO.
    vec![if kind.is_linear() { 1.0 } else { 0.0 }; n]
}

fn score(kind: LossKind, vals: &[f64], truth: &[f64], center: bool) -> f64 {
    cosine_similarity(&comparison_log(kind, vals), truth, center).unwrap_or(f64::NAN)
}

fn as_divergence(e: Error) -> Result<String> {
    if e.is_numerical() {
        Ok(e.to_string())
    } else {
        Err(e)
    }
}

/// Plain SGD on a tabular potential.
pub fn train_tabular(
    gw: &GridWorld,
    ds: &Dataset,
    kind: LossKind,
    lambda: f64,
    cfg: &TrainConfig,
    truth: &[f64],
) -> Result<TrainOutcome> {
    cfg.validate()?;
    kind.validate(gw.n_states, Some(gw))?;
    ds.check_fingerprint(gw)?;
    let n = gw.n_states;
    let mut v = initial_tabular(kind, n);
    let mut batches = BatchIter::new(ds, cfg.batch, n, cfg.seed)?;
    let mut curve = vec![(0, score(kind, &v, truth, cfg.center))];
    let mut diverged = None;
    for step in 1..=cfg.steps {
        let batch = batches.next_batch();
        let d = match evaluate(kind, lambda, &v, &batch) {
            Ok(e) => e.fold(&batch, n),
            Err(e) => {
                diverged = Some((step, as_divergence(e)?));
                break;
            }
        };
        v.iter_mut().zip(&d).for_each(|(x, g)| *x -= cfg.lr * g);
        if v.iter().any(|x| !x.is_finite()) {
            diverged = Some((step, "non-finite potential".to_string()));
            break;
        }
        if step % cfg.eval_every == 0 || step == cfg.steps {
            curve.push((step, score(kind, &v, truth, cfg.center)));
        }
    }
    Ok(TrainOutcome { potential: Potential::Tabular(v.clone()), values: v, curve, diverged })
}

pub fn net_spec_for(gw: &GridWorld, encoder: EncoderKind) -> NetSpec {
    match encoder {
        EncoderKind::Pixels => NetSpec::Conv(ConvSpec::standard(4, gw.layout.rows, gw.layout.cols)),
        _ => NetSpec::Mlp(MlpSpec::standard(gw.encoder_dim(encoder))),
    }
}

/// Mini-batch training of a network potential with RMSprop.
///
/// Every state is forwarded once per step; the per-sample derivatives of the
/// batch are summed per state and pushed through a single backward pass.
pub fn train_neural(
    gw: &GridWorld,
    ds: &Dataset,
    encoder: EncoderKind,
    kind: LossKind,
    lambda: f64,
    cfg: &TrainConfig,
    truth: &[f64],
) -> Result<TrainOutcome> {
    cfg.validate()?;
    kind.validate(gw.n_states, Some(gw))?;
    ds.check_fingerprint(gw)?;
    let n = gw.n_states;
    let x = gw.feature_matrix(encoder);
    let mut net = Network::init(&net_spec_for(gw, encoder), &mut stream_rng(cfg.seed, streams::INIT))?;
    let mut opt = RmsProp::new(&net, cfg.lr, cfg.rms_decay, cfg.rms_eps);
    let mut batches = BatchIter::new(ds, cfg.batch, n, cfg.seed)?;
    let mut curve = Vec::new();
    let mut diverged = None;
    for step in 0..cfg.steps {
        let (vals, tape) = match net.forward_batch(&x, n) {
            Ok(r) => r,
            Err(e) => {
                diverged = Some((step, as_divergence(e)?));
                break;
            }
        };
        if step % cfg.eval_every == 0 {
            curve.push((step, score(kind, &vals, truth, cfg.center)));
        }
        let batch = batches.next_batch();
        let d = match evaluate(kind, lambda, &vals, &batch) {
            Ok(e) => e.fold(&batch, n),
            Err(e) => {
                diverged = Some((step + 1, as_divergence(e)?));
                break;
            }
        };
        let mut grads = net.backward_batch(&tape, &d)?;
        clip_global_norm(&mut grads, cfg.clip_norm);
        if let Err(e) = opt.step(&mut net, &grads) {
            diverged = Some((step + 1, as_divergence(e)?));
            break;
        }
    }
    let values = match net.predict(&x, n) {
        Ok(v) => v,
        Err(e) => {
            let msg = as_divergence(e)?;
            diverged.get_or_insert((cfg.steps, msg));
            vec![f64::NAN; n]
        }
    };
    if diverged.is_none() {
        curve.push((cfg.steps, score(kind, &values, truth, cfg.center)));
    }
    Ok(TrainOutcome { potential: Potential::Neural { net, encoder }, values, curve, diverged })
}
