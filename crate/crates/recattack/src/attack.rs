//! The outer projected-gradient loop that learns fake user profiles.
//!
//! Each outer iteration (re)trains a surrogate on the poisoned data,
//! evaluates the adversarial objective on the surrogate's normal-user
//! predictions, pulls the objective's gradient back to the fake block, and
//! takes one projected gradient step. The gradient has up to two parts:
//!
//! * a direct partial, present only when predictions read the fake block at
//!   inference time (autoencoder, ALS-trained WRMF), and
//! * the trajectory part accumulated backward through the recorded inner
//!   optimizer steps.
//!
//! [`GradientMode`] selects which parts participate: `Exact` unrolls every
//! inner step, `Truncated` only the last `window`, `PartialOnly` skips
//! unrolling entirely, and `PartialPlusTruncated` combines both.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffkit::{record_inner_training, unrolled_gradient, AdamVjpMode, OptimizerKind};
use crate::error::{Error, Result};
use crate::interactions::InteractionMatrix;
use crate::seeds;
use crate::surrogates::{
    als_adv_partial, wrmf_train_als, AlsConfig, ItemAeConfig, ItemAeModel, Surrogate, WrmfConfig,
    WrmfModel,
};

/// Whether a fake block still holds relaxed real values or final clicks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Continuous,
    Binarized,
}

/// The attacker's decision variable: one row of clicks per fake user.
#[derive(Debug, Clone)]
pub struct FakeProfileBlock {
    pub values: Array2<f64>,
    pub phase: Phase,
}

impl FakeProfileBlock {
    pub fn n_fake(&self) -> usize {
        self.values.nrows()
    }

    /// Clicked item lists per fake row. Requires a binarized block.
    pub fn to_rows(&self) -> Result<Vec<Vec<u32>>> {
        if self.phase != Phase::Binarized {
            return Err(Error::Precondition(
                "fake block must be binarized before conversion to click rows".into(),
            ));
        }
        Ok(self
            .values
            .rows()
            .into_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, &v)| v >= 0.5)
                    .map(|(i, _)| i as u32)
                    .collect()
            })
            .collect())
    }
}

/// Append a binarized fake block below the normal users.
pub fn poisoned_matrix(x: &InteractionMatrix, block: &FakeProfileBlock) -> Result<InteractionMatrix> {
    let rows = block.to_rows()?;
    x.append_rows(&rows)
}

/// Threshold a continuous block to clicks: `>= rho` becomes 1.
pub fn project(values: &Array2<f64>, rho: f64) -> Array2<f64> {
    values.mapv(|v| if v >= rho { 1.0 } else { 0.0 })
}

/// Which gradient components drive the outer update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    Exact,
    Truncated,
    PartialOnly,
    PartialPlusTruncated,
}

/// When the relaxed block is thresholded back to clicks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionSchedule {
    /// Threshold after every outer step (the default).
    EveryIter,
    /// Keep values clamped to [0,1] during the loop, threshold once at the
    /// end. Useful when per-iteration thresholding zeroes out progress.
    AtEnd,
}

/// Fake-block starting point.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", tag = "scheme")]
pub enum InitScheme {
    /// Entries uniform in `[0, high)`.
    Uniform { high: f64 },
    /// Each fake row copies a uniformly sampled normal user's row.
    SampledFromUsers,
    /// Zero block with target columns set to 1.
    TargetsPreset,
}

/// Adversarial objective: which items to promote.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdvObjective {
    pub target_items: Vec<u32>,
}

impl AdvObjective {
    pub fn new(mut target_items: Vec<u32>) -> Result<Self> {
        target_items.sort_unstable();
        target_items.dedup();
        if target_items.is_empty() {
            return Err(Error::Config("target item set must be non-empty".into()));
        }
        Ok(Self { target_items })
    }

    pub fn validate_against(&self, n_items: usize) -> Result<()> {
        if let Some(&bad) = self.target_items.iter().find(|&&i| i as usize >= n_items) {
            return Err(Error::Config(format!(
                "target item {bad} out of range for {n_items} items"
            )));
        }
        Ok(())
    }
}

/// Cross-entropy promotion loss over all users, summed across target items:
/// `sum_u sum_{k in T} (logsumexp(r_u) - r_uk)`. Stabilized by max
/// subtraction. Returns the loss and its gradient w.r.t. the scores.
pub fn adv_loss_ce_grad(r: &Array2<f64>, targets: &[u32]) -> (f64, Array2<f64>) {
    let n_t = targets.len() as f64;
    let mut loss = 0.0;
    let mut grad = Array2::<f64>::zeros(r.raw_dim());
    for (u, row) in r.rows().into_iter().enumerate() {
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let sum_exp: f64 = row.iter().map(|&v| (v - m).exp()).sum();
        let lse = m + sum_exp.ln();
        let mut target_sum = 0.0;
        for &k in targets {
            target_sum += row[k as usize];
        }
        loss += n_t * lse - target_sum;
        let mut grow = grad.row_mut(u);
        for (i, &v) in row.iter().enumerate() {
            grow[i] = n_t * (v - m).exp() / sum_exp;
        }
        for &k in targets {
            grow[k as usize] -= 1.0;
        }
    }
    (loss, grad)
}

/// Loss-only variant of [`adv_loss_ce_grad`].
pub fn adv_loss_ce(r: &Array2<f64>, targets: &[u32]) -> f64 {
    let n_t = targets.len() as f64;
    let mut loss = 0.0;
    for row in r.rows() {
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
        let target_sum: f64 = targets.iter().map(|&k| row[k as usize]).sum();
        loss += n_t * lse - target_sum;
    }
    loss
}

/// Which surrogate the attack trains and differentiates.
#[derive(Debug, Clone)]
pub enum SurrogateSpec {
    /// WRMF trained by full-batch gradient descent; supports every
    /// gradient mode except `PartialOnly` (its predictions never read the
    /// fake block, so the direct partial is structurally zero).
    WrmfSgd {
        cfg: WrmfConfig,
        optimizer: OptimizerKind,
        step_size: f64,
    },
    /// WRMF trained by alternating least squares; only `PartialOnly` makes
    /// sense because the closed-form solves are not unrolled.
    WrmfAls { cfg: AlsConfig },
    /// Item autoencoder; supports every mode, including `PartialOnly`
    /// since its predictions condition on the fake block.
    ItemAe {
        cfg: ItemAeConfig,
        optimizer: OptimizerKind,
        step_size: f64,
    },
}

/// Outer-loop hyperparameters.
#[derive(Debug, Clone)]
pub struct AttackConfig {
    pub n_fake: usize,
    /// Outer PGD iterations (T).
    pub outer_iters: usize,
    /// Inner training steps per outer iteration (L).
    pub inner_iters: usize,
    /// Outer step size (eta).
    pub outer_step: f64,
    /// Unroll window (tau); only consulted by the truncated modes.
    pub window: usize,
    /// Projection threshold (rho).
    pub rho: f64,
    pub gradient_mode: GradientMode,
    /// Retrain the surrogate from its seeded initialization every outer
    /// iteration (the poisoned dataset changes, so the victim would train
    /// from scratch). `false` continues from the previous parameters.
    pub reset_inner: bool,
    pub projection: ProjectionSchedule,
    pub init: InitScheme,
    pub adam_mode: AdamVjpMode,
    pub seed: u64,
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_fake == 0 {
            return Err(Error::Config("n_fake must be >= 1".into()));
        }
        if self.outer_iters == 0 || self.inner_iters == 0 {
            return Err(Error::Config("outer and inner iteration counts must be >= 1".into()));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Config(format!(
                "projection threshold must be in (0, 1), got {}",
                self.rho
            )));
        }
        if self.window > self.inner_iters {
            return Err(Error::Config(format!(
                "unroll window {} exceeds inner iteration count {}",
                self.window, self.inner_iters
            )));
        }
        if self.outer_step <= 0.0 || !self.outer_step.is_finite() {
            return Err(Error::Config("outer step size must be positive and finite".into()));
        }
        if let InitScheme::Uniform { high } = self.init {
            if !(0.0..=1.0).contains(&high) || high == 0.0 {
                return Err(Error::Config(format!(
                    "uniform init bound must be in (0, 1], got {high}"
                )));
            }
        }
        Ok(())
    }
}

/// Result of one attack run: the final clicks plus the adversarial loss
/// trace. `adv_losses[t]` is the loss of the surrogate retrained on the
/// block after `t` outer updates, so the first entry is the initialization
/// and the last the final block (both sides of every update are visible).
#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub block: FakeProfileBlock,
    pub adv_losses: Vec<f64>,
}

/// Build the starting block for a given scheme.
pub fn initialize_fake_block(
    x: &InteractionMatrix,
    targets: &[u32],
    n_fake: usize,
    scheme: &InitScheme,
    seed: u64,
) -> Result<FakeProfileBlock> {
    let n_items = x.n_items();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = match scheme {
        InitScheme::Uniform { high } => {
            Array2::from_shape_fn((n_fake, n_items), |_| rng.gen_range(0.0..*high))
        }
        InitScheme::SampledFromUsers => {
            if x.n_users() == 0 {
                return Err(Error::Precondition(
                    "cannot sample fake rows from an empty user set".into(),
                ));
            }
            let mut values = Array2::zeros((n_fake, n_items));
            for v in 0..n_fake {
                let u = rng.gen_range(0..x.n_users());
                for &i in x.row(u) {
                    values[[v, i as usize]] = 1.0;
                }
            }
            values
        }
        InitScheme::TargetsPreset => {
            let mut values = Array2::zeros((n_fake, n_items));
            for &k in targets {
                for v in 0..n_fake {
                    values[[v, k as usize]] = 1.0;
                }
            }
            values
        }
    };
    Ok(FakeProfileBlock {
        values,
        phase: Phase::Continuous,
    })
}

/// The heuristic baseline: every fake row clicks all targets plus
/// `n_filler` uniformly random non-target items.
pub fn rand_filter_attack(
    targets: &[u32],
    n_fake: usize,
    n_filler: usize,
    n_items: usize,
    seed: u64,
) -> Result<FakeProfileBlock> {
    let target_set: std::collections::BTreeSet<u32> = targets.iter().copied().collect();
    let non_targets: Vec<u32> = (0..n_items as u32)
        .filter(|i| !target_set.contains(i))
        .collect();
    if n_filler > non_targets.len() {
        return Err(Error::Precondition(format!(
            "cannot pick {n_filler} filler items from {} non-targets",
            non_targets.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Array2::<f64>::zeros((n_fake, n_items));
    for v in 0..n_fake {
        for &k in &target_set {
            values[[v, k as usize]] = 1.0;
        }
        let picks = rand::seq::index::sample(&mut rng, non_targets.len(), n_filler);
        for idx in picks.iter() {
            values[[v, non_targets[idx] as usize]] = 1.0;
        }
    }
    Ok(FakeProfileBlock {
        values,
        phase: Phase::Binarized,
    })
}

fn clamp_unit(values: &mut Array2<f64>) {
    values.mapv_inplace(|v| v.clamp(0.0, 1.0));
}

/// One adversarial gradient evaluation against a trainable surrogate.
/// Returns the loss at the trained parameters and the full gradient w.r.t.
/// the fake block for the requested mode.
fn surrogate_gradient<S: Surrogate + ?Sized>(
    model: &S,
    xhat: &Array2<f64>,
    theta0: Array1<f64>,
    optimizer: OptimizerKind,
    step_size: f64,
    targets: &[u32],
    cfg: &AttackConfig,
) -> Result<(f64, Array2<f64>, Array1<f64>)> {
    let window = match cfg.gradient_mode {
        GradientMode::Exact => cfg.inner_iters,
        GradientMode::Truncated | GradientMode::PartialPlusTruncated => cfg.window,
        GradientMode::PartialOnly => 0,
    };
    let traj = record_inner_training(
        model,
        xhat,
        theta0,
        optimizer,
        step_size,
        cfg.inner_iters,
        window,
    )?;
    let r = model.predictions(&traj.final_theta, xhat)?;
    let (loss, g_r) = adv_loss_ce_grad(&r, targets);
    let (g_theta, direct) = model.adv_pullback(&traj.final_theta, xhat, &g_r)?;

    if cfg.gradient_mode == GradientMode::PartialOnly && direct.is_none() {
        return Err(Error::Capability(
            "partial_only is unusable here: the surrogate's predictions never read the fake \
             block, so the direct adversarial partial is identically zero; use an unrolling \
             mode or an ALS/autoencoder surrogate"
                .into(),
        ));
    }

    let mut grad = direct.unwrap_or_else(|| Array2::zeros(xhat.raw_dim()));
    if cfg.gradient_mode != GradientMode::PartialOnly {
        let tau = match cfg.gradient_mode {
            GradientMode::Exact => None,
            _ => Some(cfg.window.min(traj.transition_count())),
        };
        grad += &unrolled_gradient(model, xhat, &traj, &g_theta, tau, cfg.adam_mode)?;
    }
    Ok((loss, grad, traj.final_theta))
}

/// Loss of a freshly trained surrogate on a given block, without gradients.
fn surrogate_loss_only<S: Surrogate + ?Sized>(
    model: &S,
    xhat: &Array2<f64>,
    theta0: Array1<f64>,
    optimizer: OptimizerKind,
    step_size: f64,
    inner_iters: usize,
    targets: &[u32],
) -> Result<f64> {
    let traj = record_inner_training(model, xhat, theta0, optimizer, step_size, inner_iters, 0)?;
    let r = model.predictions(&traj.final_theta, xhat)?;
    Ok(adv_loss_ce(&r, targets))
}

/// Learn fake user profiles by projected gradient descent against the given
/// surrogate. Normal-user rows are never touched; the returned block is
/// binarized and has exactly `cfg.n_fake` rows.
pub fn learn_fake_users(
    x: &InteractionMatrix,
    spec: &SurrogateSpec,
    objective: &AdvObjective,
    cfg: &AttackConfig,
) -> Result<AttackOutcome> {
    cfg.validate()?;
    objective.validate_against(x.n_items())?;
    let targets = objective.target_items.as_slice();
    let init_seed = seeds::derive(cfg.seed, seeds::FAKE_INIT);
    let surrogate_seed = seeds::derive(cfg.seed, seeds::SURROGATE_INIT);

    let mut block = initialize_fake_block(x, targets, cfg.n_fake, &cfg.init, init_seed)?;
    if cfg.projection == ProjectionSchedule::EveryIter {
        // Algorithm starts each iteration from a feasible (binary) point.
        block.values = project(&block.values, cfg.rho);
    }

    let mut adv_losses = Vec::with_capacity(cfg.outer_iters + 1);

    match spec {
        SurrogateSpec::WrmfAls { cfg: als } => {
            if cfg.gradient_mode != GradientMode::PartialOnly {
                return Err(Error::Capability(
                    "the ALS-trained surrogate exposes no training trajectory to unroll; \
                     use gradient_mode=partial_only"
                        .into(),
                ));
            }
            for _ in 0..cfg.outer_iters {
                let params = wrmf_train_als(x, &block.values, *als, surrogate_seed)?;
                let r = params.p.dot(&params.q.t());
                let (loss, g_r) = adv_loss_ce_grad(&r, targets);
                adv_losses.push(loss);
                let grad = als_adv_partial(&params, x, &block.values, &g_r)?;
                block.values.scaled_add(-cfg.outer_step, &grad);
                match cfg.projection {
                    ProjectionSchedule::EveryIter => block.values = project(&block.values, cfg.rho),
                    ProjectionSchedule::AtEnd => clamp_unit(&mut block.values),
                }
            }
            block.values = project(&block.values, cfg.rho);
            block.phase = Phase::Binarized;
            let params = wrmf_train_als(x, &block.values, *als, surrogate_seed)?;
            let r = params.p.dot(&params.q.t());
            adv_losses.push(adv_loss_ce(&r, targets));
        }
        SurrogateSpec::WrmfSgd {
            cfg: wrmf,
            optimizer,
            step_size,
        } => {
            let model = WrmfModel::new(x.clone(), cfg.n_fake, *wrmf)?;
            run_pgd(
                &model, *optimizer, *step_size, targets, cfg, surrogate_seed, &mut block,
                &mut adv_losses,
            )?;
        }
        SurrogateSpec::ItemAe {
            cfg: ae,
            optimizer,
            step_size,
        } => {
            let model = ItemAeModel::new(x.clone(), cfg.n_fake, ae.clone())?;
            run_pgd(
                &model, *optimizer, *step_size, targets, cfg, surrogate_seed, &mut block,
                &mut adv_losses,
            )?;
        }
    }

    Ok(AttackOutcome { block, adv_losses })
}

/// Shared PGD loop for trainable surrogates.
#[allow(clippy::too_many_arguments)]
fn run_pgd<S: Surrogate + ?Sized>(
    model: &S,
    optimizer: OptimizerKind,
    step_size: f64,
    targets: &[u32],
    cfg: &AttackConfig,
    surrogate_seed: u64,
    block: &mut FakeProfileBlock,
    adv_losses: &mut Vec<f64>,
) -> Result<()> {
    let mut carry_theta: Option<Array1<f64>> = None;
    for _ in 0..cfg.outer_iters {
        let theta0 = match (&carry_theta, cfg.reset_inner) {
            (Some(prev), false) => prev.clone(),
            _ => model.init_theta(surrogate_seed),
        };
        let (loss, grad, theta_final) = surrogate_gradient(
            model,
            &block.values,
            theta0,
            optimizer,
            step_size,
            targets,
            cfg,
        )?;
        adv_losses.push(loss);
        carry_theta = Some(theta_final);
        block.values.scaled_add(-cfg.outer_step, &grad);
        match cfg.projection {
            ProjectionSchedule::EveryIter => block.values = project(&block.values, cfg.rho),
            ProjectionSchedule::AtEnd => clamp_unit(&mut block.values),
        }
    }
    block.values = project(&block.values, cfg.rho);
    block.phase = Phase::Binarized;
    let theta0 = match (&carry_theta, cfg.reset_inner) {
        (Some(prev), false) => prev.clone(),
        _ => model.init_theta(surrogate_seed),
    };
    adv_losses.push(surrogate_loss_only(
        model,
        &block.values,
        theta0,
        optimizer,
        step_size,
        cfg.inner_iters,
        targets,
    )?);
    Ok(())
}

/// Run the same attack across a threshold grid and report the final
/// adversarial loss per threshold, lowest first.
pub fn rho_grid(
    x: &InteractionMatrix,
    spec: &SurrogateSpec,
    objective: &AdvObjective,
    cfg: &AttackConfig,
    rhos: &[f64],
) -> Result<Vec<(f64, AttackOutcome)>> {
    let mut out = Vec::with_capacity(rhos.len());
    for &rho in rhos {
        let run_cfg = AttackConfig { rho, ..cfg.clone() };
        out.push((rho, learn_fake_users(x, spec, objective, &run_cfg)?));
    }
    out.sort_by(|a, b| {
        let la = a.1.adv_losses.last().unwrap();
        let lb = b.1.adv_losses.last().unwrap();
        la.partial_cmp(lb).unwrap().then(a.0.partial_cmp(&b.0).unwrap())
    });
    Ok(out)
}
