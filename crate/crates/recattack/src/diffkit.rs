//! Reverse-mode differentiation through an inner training loop.
//!
//! The attacker's gradient w.r.t. the fake-data block X̂ has two parts: a
//! direct partial (if predictions read X̂ at inference time) and the sum,
//! over inner optimizer steps, of the adversarial adjoint pulled back
//! through each parameter update. This module owns the second part:
//! [`record_inner_training`] stores the last `window` pre-update snapshots
//! while training, and [`unrolled_gradient`] replays them newest-first,
//! turning each transition into one Hessian-vector product and one mixed
//! second-order product. No Jacobian is ever materialized; memory stays
//! proportional to `window * |theta|`.

use std::collections::VecDeque;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Flat parameter vector. Models define their own packing order.
pub type Theta = Array1<f64>;

/// Result of one second-order query at `(theta, xhat)` in direction `dir`:
/// `hvp = H_theta dir` and `mixed[v][i] = d/dxhat_vi (grad_theta L . dir)`.
#[derive(Debug, Clone)]
pub struct SecondOrder {
    pub hvp: Theta,
    pub mixed: Array2<f64>,
}

/// A model whose training step the attack can differentiate through.
///
/// The training data X is owned by the model; only the fake block X̂ moves
/// between calls, because it is the variable of the outer optimization.
/// Training must be full-batch: the transition from one parameter vector to
/// the next has to be a deterministic function of `(theta, xhat)`.
pub trait TransitionModel {
    fn param_len(&self) -> usize;

    /// Training loss and its gradient w.r.t. theta at fixed `xhat`.
    fn loss_and_grad(&self, theta: &Theta, xhat: &Array2<f64>) -> Result<(f64, Theta)>;

    /// Hessian-vector product and mixed-partial pullback in direction `dir`.
    /// Models without analytic second-order support return
    /// [`Error::Capability`].
    fn second_order(&self, theta: &Theta, xhat: &Array2<f64>, dir: &Theta) -> Result<SecondOrder>;
}

/// Adam hyperparameters. Defaults are the usual (0.9, 0.999, 1e-8).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Inner optimizer for the surrogate training loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam(AdamConfig),
}

/// First and second Adam moment vectors.
#[derive(Debug, Clone)]
pub struct AdamMoments {
    pub m: Theta,
    pub v: Theta,
}

impl AdamMoments {
    fn zeros(len: usize) -> Self {
        Self {
            m: Array1::zeros(len),
            v: Array1::zeros(len),
        }
    }
}

/// Snapshot taken just before the update `theta^(step) -> theta^(step+1)`.
/// `grad` is the training gradient at `theta`; `adam` holds the moments
/// entering the update (so the transition is fully replayable).
#[derive(Debug, Clone)]
pub struct TransitionRecord {
    pub step: usize,
    pub theta: Theta,
    pub grad: Theta,
    pub adam: Option<AdamMoments>,
}

/// The tail of an inner training run: the last `min(window, total_steps)`
/// pre-update snapshots, the final parameters, and the loss curve.
#[derive(Debug, Clone)]
pub struct Trajectory {
    records: VecDeque<TransitionRecord>,
    pub final_theta: Theta,
    /// Loss at theta^(0) .. theta^(L), so `total_steps + 1` entries.
    pub losses: Vec<f64>,
    pub step_size: f64,
    pub total_steps: usize,
    pub window: usize,
    pub optimizer: OptimizerKind,
}

impl Trajectory {
    /// Number of stored parameter vectors: recorded pre-update snapshots
    /// plus the final parameters.
    pub fn snapshot_count(&self) -> usize {
        self.records.len() + 1
    }

    /// Number of replayable transitions, equal to `min(window, total_steps)`.
    pub fn transition_count(&self) -> usize {
        self.records.len()
    }

    pub fn records(&self) -> &VecDeque<TransitionRecord> {
        &self.records
    }

    /// Approximate heap footprint of the stored vectors, in bytes. Used by
    /// tests to pin the `window * |theta|` space bound.
    pub fn approx_bytes(&self) -> usize {
        let per_vec = |v: &Theta| v.len() * std::mem::size_of::<f64>();
        let mut total = per_vec(&self.final_theta);
        for r in &self.records {
            total += per_vec(&r.theta) + per_vec(&r.grad);
            if let Some(a) = &r.adam {
                total += per_vec(&a.m) + per_vec(&a.v);
            }
        }
        total
    }

    /// Re-apply every stored transition and check it reproduces the next
    /// stored parameter vector. A drifted model or a stale `xhat` shows up
    /// as a mismatch here.
    pub fn verify_replay<M: TransitionModel + ?Sized>(
        &self,
        model: &M,
        xhat: &Array2<f64>,
        tol: f64,
    ) -> Result<()> {
        for (idx, rec) in self.records.iter().enumerate() {
            let (_, grad) = model.loss_and_grad(&rec.theta, xhat)?;
            let mut theta = rec.theta.clone();
            let mut adam = rec.adam.clone();
            apply_update(
                &mut theta,
                &grad,
                &mut adam,
                rec.step + 1,
                &self.optimizer,
                self.step_size,
            );
            let next = self
                .records
                .get(idx + 1)
                .map(|r| &r.theta)
                .unwrap_or(&self.final_theta);
            let err = (&theta - next).iter().fold(0.0f64, |a, d| a.max(d.abs()));
            if err > tol {
                return Err(Error::Precondition(format!(
                    "replay mismatch at step {}: max deviation {err:.3e}",
                    rec.step
                )));
            }
        }
        Ok(())
    }
}

/// One optimizer update in place. `t` is the 1-based step count used by
/// Adam's bias correction; `moments` must be `Some` iff the optimizer is
/// Adam.
fn apply_update(
    theta: &mut Theta,
    grad: &Theta,
    moments: &mut Option<AdamMoments>,
    t: usize,
    optimizer: &OptimizerKind,
    alpha: f64,
) {
    match optimizer {
        OptimizerKind::Sgd => {
            theta.zip_mut_with(grad, |th, &g| *th -= alpha * g);
        }
        OptimizerKind::Adam(cfg) => {
            let ms = moments.as_mut().expect("adam moments present");
            let bc1 = 1.0 - cfg.beta1.powi(t as i32);
            let bc2 = 1.0 - cfg.beta2.powi(t as i32);
            let n = theta.len();
            let th = theta.as_slice_mut().unwrap();
            let g = grad.as_slice().unwrap();
            let m = ms.m.as_slice_mut().unwrap();
            let v = ms.v.as_slice_mut().unwrap();
            for j in 0..n {
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                th[j] -= alpha * mhat / (vhat.sqrt() + cfg.eps);
            }
        }
    }
}

/// Train for `n_steps` full-batch optimizer steps from `theta0`, keeping
/// the last `min(window, n_steps)` pre-update snapshots. `n_steps = 0`
/// returns the initialization unchanged.
pub fn record_inner_training<M: TransitionModel + ?Sized>(
    model: &M,
    xhat: &Array2<f64>,
    theta0: Theta,
    optimizer: OptimizerKind,
    step_size: f64,
    n_steps: usize,
    window: usize,
) -> Result<Trajectory> {
    if step_size <= 0.0 || !step_size.is_finite() {
        return Err(Error::Precondition(format!(
            "inner step size must be positive and finite, got {step_size}"
        )));
    }
    if theta0.len() != model.param_len() {
        return Err(Error::Precondition(format!(
            "theta0 length {} does not match model parameter count {}",
            theta0.len(),
            model.param_len()
        )));
    }
    let window = window.min(n_steps);
    let mut records = VecDeque::with_capacity(window);
    let mut losses = Vec::with_capacity(n_steps + 1);
    let mut theta = theta0;
    let mut moments = match optimizer {
        OptimizerKind::Sgd => None,
        OptimizerKind::Adam(_) => Some(AdamMoments::zeros(theta.len())),
    };

    for step in 0..n_steps {
        let (loss, grad) = model.loss_and_grad(&theta, xhat)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { step });
        }
        losses.push(loss);
        if step + window >= n_steps {
            if records.len() == window {
                records.pop_front();
            }
            records.push_back(TransitionRecord {
                step,
                theta: theta.clone(),
                grad: grad.clone(),
                adam: moments.clone(),
            });
        }
        apply_update(&mut theta, &grad, &mut moments, step + 1, &optimizer, step_size);
    }

    let (final_loss, _) = model.loss_and_grad(&theta, xhat)?;
    if !final_loss.is_finite() {
        return Err(Error::Divergence { step: n_steps });
    }
    losses.push(final_loss);

    Ok(Trajectory {
        records,
        final_theta: theta,
        losses,
        step_size,
        total_steps: n_steps,
        window,
        optimizer,
    })
}

/// How the backward pass treats Adam's second-moment denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AdamVjpMode {
    /// Differentiate the full update including both moment recursions and
    /// bias correction.
    #[default]
    Exact,
    /// Treat `sqrt(vhat) + eps` as a constant: cheaper, and the first-moment
    /// path is still exact.
    FrozenDenominator,
}

/// Adjoint of the full SGD/Adam optimizer state `(theta, m, v)`.
#[derive(Debug, Clone)]
pub struct StateAdjoint {
    pub theta: Theta,
    pub m: Theta,
    pub v: Theta,
}

impl StateAdjoint {
    /// Seed adjoint: the adversarial loss reads only the final parameters,
    /// never the final moments.
    pub fn from_final_grad(g_final: Theta) -> Self {
        let len = g_final.len();
        Self {
            theta: g_final,
            m: Array1::zeros(len),
            v: Array1::zeros(len),
        }
    }
}

/// Pull the state adjoint back through one recorded Adam transition,
/// accumulating the fake-data contribution into `accum`. Returns nothing;
/// `adj` is updated in place to the adjoint of the previous state.
fn adam_backward_step<M: TransitionModel + ?Sized>(
    model: &M,
    xhat: &Array2<f64>,
    rec: &TransitionRecord,
    cfg: &AdamConfig,
    alpha: f64,
    mode: AdamVjpMode,
    adj: &mut StateAdjoint,
    accum: &mut Array2<f64>,
) -> Result<()> {
    let moments = rec
        .adam
        .as_ref()
        .ok_or_else(|| Error::Precondition("adam backward on a record without moments".into()))?;
    let t = rec.step + 1;
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);

    let n = rec.grad.len();
    let g = rec.grad.as_slice().unwrap();
    let m = moments.m.as_slice().unwrap();
    let v = moments.v.as_slice().unwrap();
    let ut = adj.theta.as_slice().unwrap();
    let um = adj.m.as_slice_mut().unwrap();
    let uv = adj.v.as_slice_mut().unwrap();
    let mut w = Array1::<f64>::zeros(n);
    {
        let ws = w.as_slice_mut().unwrap();
        for j in 0..n {
            let m_next = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            let v_next = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let mhat = m_next / bc1;
            let vhat = v_next / bc2;
            let sq = vhat.sqrt();
            let d = sq + cfg.eps;
            // Adjoint of m_next: its own carry plus the theta update path
            // theta' = theta - alpha * mhat / d.
            let um_t = um[j] - ut[j] * alpha / (bc1 * d);
            // Adjoint of v_next through d; sqrt is not differentiable at 0,
            // where the update direction is 0/eps anyway, so drop the term.
            let uv_t = match mode {
                AdamVjpMode::Exact if sq > 0.0 => {
                    uv[j] + ut[j] * alpha * mhat / (2.0 * bc2 * sq * d * d)
                }
                _ => uv[j],
            };
            ws[j] = (1.0 - cfg.beta1) * um_t + 2.0 * (1.0 - cfg.beta2) * g[j] * uv_t;
            um[j] = cfg.beta1 * um_t;
            uv[j] = cfg.beta2 * uv_t;
        }
    }

    let so = model.second_order(&rec.theta, xhat, &w)?;
    *accum += &so.mixed;
    adj.theta += &so.hvp;
    Ok(())
}

/// Pull the parameter adjoint back through one SGD transition.
fn sgd_backward_step<M: TransitionModel + ?Sized>(
    model: &M,
    xhat: &Array2<f64>,
    rec: &TransitionRecord,
    alpha: f64,
    adj: &mut StateAdjoint,
    accum: &mut Array2<f64>,
) -> Result<()> {
    let so = model.second_order(&rec.theta, xhat, &adj.theta)?;
    accum.zip_mut_with(&so.mixed, |a, &mx| *a -= alpha * mx);
    adj.theta.zip_mut_with(&so.hvp, |u, &h| *u -= alpha * h);
    Ok(())
}

/// Accumulate the trajectory part of the fake-data gradient:
/// the adjoint `g_final = dL_adv/dtheta^(L)` is pulled back through the
/// newest `tau` recorded transitions, and each transition's direct
/// dependence on X̂ (through the training gradient) contributes one mixed
/// second-order product.
///
/// `tau = None` uses every recorded transition. Asking for more transitions
/// than were recorded is an error. The direct partial of the adversarial
/// loss w.r.t. X̂ is not included here; the attack adds it separately.
pub fn unrolled_gradient<M: TransitionModel + ?Sized>(
    model: &M,
    xhat: &Array2<f64>,
    traj: &Trajectory,
    g_final: &Theta,
    tau: Option<usize>,
    mode: AdamVjpMode,
) -> Result<Array2<f64>> {
    if g_final.len() != model.param_len() {
        return Err(Error::Precondition(format!(
            "g_final length {} does not match model parameter count {}",
            g_final.len(),
            model.param_len()
        )));
    }
    let available = traj.transition_count();
    let used = tau.unwrap_or(available);
    if used > available {
        return Err(Error::Precondition(format!(
            "requested unroll window {used} exceeds the {available} recorded transitions"
        )));
    }

    let mut accum = Array2::<f64>::zeros(xhat.raw_dim());
    let mut adj = StateAdjoint::from_final_grad(g_final.clone());
    for rec in traj.records.iter().rev().take(used) {
        match &traj.optimizer {
            OptimizerKind::Sgd => {
                sgd_backward_step(model, xhat, rec, traj.step_size, &mut adj, &mut accum)?
            }
            OptimizerKind::Adam(cfg) => adam_backward_step(
                model,
                xhat,
                rec,
                cfg,
                traj.step_size,
                mode,
                &mut adj,
                &mut accum,
            )?,
        }
    }
    Ok(accum)
}

/// Cotangent pullback through a single SGD update `theta' = theta - alpha g`:
/// returns `(v . dtheta'/dtheta, v . dtheta'/dxhat)`.
pub fn sgd_transition_vjps<M: TransitionModel + ?Sized>(
    model: &M,
    theta: &Theta,
    xhat: &Array2<f64>,
    alpha: f64,
    cotangent: &Theta,
) -> Result<(Theta, Array2<f64>)> {
    let so = model.second_order(theta, xhat, cotangent)?;
    let pull_theta = cotangent - &(so.hvp * alpha);
    let pull_xhat = so.mixed * (-alpha);
    Ok((pull_theta, pull_xhat))
}

/// Cotangent pullback through a single Adam update, starting from a
/// parameter-only cotangent (the moment adjoints seed at zero). Returns the
/// full previous-state adjoint and the fake-data pullback.
#[allow(clippy::too_many_arguments)]
pub fn adam_transition_vjps<M: TransitionModel + ?Sized>(
    model: &M,
    theta: &Theta,
    moments: &AdamMoments,
    step: usize,
    cfg: &AdamConfig,
    alpha: f64,
    xhat: &Array2<f64>,
    cotangent: &Theta,
    mode: AdamVjpMode,
) -> Result<(StateAdjoint, Array2<f64>)> {
    let (_, grad) = model.loss_and_grad(theta, xhat)?;
    let rec = TransitionRecord {
        step,
        theta: theta.clone(),
        grad,
        adam: Some(moments.clone()),
    };
    let mut adj = StateAdjoint::from_final_grad(cotangent.clone());
    let mut accum = Array2::<f64>::zeros(xhat.raw_dim());
    adam_backward_step(model, xhat, &rec, cfg, alpha, mode, &mut adj, &mut accum)?;
    Ok((adj, accum))
}
