//! Item-column autoencoder surrogate.
//!
//! Each item i is represented by the stacked click column `[x_i; xhat_i]`
//! of length `n_users + n_fake`. The encoder compresses it through tanh
//! layers, the decoder reconstructs with a linear output, and the training
//! loss is the same weighted squared error scheme as WRMF applied to the
//! reconstruction, plus `lambda |theta|^2`.
//!
//! Unlike factorization models, predictions here read the interaction data
//! at inference time, so the adversarial loss has a nonzero direct partial
//! w.r.t. the fake block: [`Surrogate::adv_pullback`] returns `Some`.
//!
//! Second-order products are computed by forward-over-reverse: a forward
//! pass carries parameter tangents alongside the activations, then the
//! backward pass is differentiated along the same tangent. For tanh these
//! chains need only the activations (`phi' = 1 - a^2`, and the second
//! derivative enters as `-2 a (1 - a^2)`).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::diffkit::{
    record_inner_training, OptimizerKind, SecondOrder, Theta, Trajectory, TransitionModel,
};
use crate::error::{Error, Result};
use crate::interactions::InteractionMatrix;

use super::{gaussian_init, Surrogate};

/// Autoencoder hyperparameters. `hidden` lists the interior layer widths;
/// the input/output width is always `n_users + n_fake`. An empty `hidden`
/// degenerates to a single linear layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemAeConfig {
    pub hidden: Vec<usize>,
    pub lambda: f64,
    pub w_pos: f64,
    pub w_neg: f64,
}

impl Default for ItemAeConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 32, 64],
            lambda: 1e-4,
            w_pos: 20.0,
            w_neg: 1.0,
        }
    }
}

impl ItemAeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        if !(self.w_pos >= self.w_neg && self.w_neg > 0.0) {
            return Err(Error::Config(format!(
                "instance weights must satisfy w_pos >= w_neg > 0, got {} and {}",
                self.w_pos, self.w_neg
            )));
        }
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(Error::Config("lambda must be a finite nonnegative real".into()));
        }
        Ok(())
    }
}

/// Named layer tables unpacked from a flat parameter vector.
#[derive(Debug, Clone)]
pub struct ItemAeParams {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Forward pass for a single item column, mirroring the batched model pass.
pub fn itemae_forward(params: &ItemAeParams, x_plus: &Array1<f64>) -> Result<Array1<f64>> {
    if params.weights.is_empty() {
        return Err(Error::Precondition("autoencoder has no layers".into()));
    }
    if params.weights[0].ncols() != x_plus.len() {
        return Err(Error::Precondition(format!(
            "input length {} does not match first layer width {}",
            x_plus.len(),
            params.weights[0].ncols()
        )));
    }
    let last = params.weights.len() - 1;
    let mut a = x_plus.clone();
    for (l, (w, b)) in params.weights.iter().zip(&params.biases).enumerate() {
        let z = w.dot(&a) + b;
        a = if l == last { z } else { z.mapv(f64::tanh) };
    }
    Ok(a)
}

/// The autoencoder as a differentiable transition model over flat theta.
#[derive(Debug, Clone)]
pub struct ItemAeModel {
    x: InteractionMatrix,
    n_fake: usize,
    cfg: ItemAeConfig,
    /// Layer widths: `[n_total, hidden ..., n_total]`.
    dims: Vec<usize>,
}

impl ItemAeModel {
    pub fn new(x: InteractionMatrix, n_fake: usize, cfg: ItemAeConfig) -> Result<Self> {
        cfg.validate()?;
        let n_total = x.n_users() + n_fake;
        let mut dims = Vec::with_capacity(cfg.hidden.len() + 2);
        dims.push(n_total);
        dims.extend_from_slice(&cfg.hidden);
        dims.push(n_total);
        Ok(Self {
            x,
            n_fake,
            cfg,
            dims,
        })
    }

    pub fn config(&self) -> &ItemAeConfig {
        &self.cfg
    }

    pub fn x(&self) -> &InteractionMatrix {
        &self.x
    }

    fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    /// Split theta into per-layer weight/bias views.
    fn views<'a>(&self, theta: &'a Theta) -> (Vec<ArrayView2<'a, f64>>, Vec<ArrayView1<'a, f64>>) {
        let s = theta.as_slice().expect("contiguous theta");
        let mut weights = Vec::with_capacity(self.n_layers());
        let mut biases = Vec::with_capacity(self.n_layers());
        let mut off = 0;
        for l in 0..self.n_layers() {
            let (rows, cols) = (self.dims[l + 1], self.dims[l]);
            weights.push(ArrayView2::from_shape((rows, cols), &s[off..off + rows * cols]).unwrap());
            off += rows * cols;
            biases.push(ArrayView1::from_shape(rows, &s[off..off + rows]).unwrap());
            off += rows;
        }
        (weights, biases)
    }

    fn pack(&self, weights: Vec<Array2<f64>>, biases: Vec<Array1<f64>>) -> Theta {
        let mut out = Vec::with_capacity(self.param_len());
        for (w, b) in weights.into_iter().zip(biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        Array1::from_vec(out)
    }

    pub fn params_from_theta(&self, theta: &Theta) -> ItemAeParams {
        let (w, b) = self.views(theta);
        ItemAeParams {
            weights: w.into_iter().map(|v| v.to_owned()).collect(),
            biases: b.into_iter().map(|v| v.to_owned()).collect(),
        }
    }

    /// Item-major input matrix `A0[i][u] = [X; Xhat][u][i]`, with the
    /// normal block binary and the fake block continuous.
    fn input_matrix(&self, xhat: &Array2<f64>) -> Result<Array2<f64>> {
        let (nu, ni) = (self.x.n_users(), self.x.n_items());
        if xhat.dim() != (self.n_fake, ni) {
            return Err(Error::Precondition(format!(
                "fake block shape {:?} does not match ({}, {ni})",
                xhat.dim(),
                self.n_fake
            )));
        }
        let mut a0 = Array2::<f64>::zeros((ni, nu + self.n_fake));
        for (u, row) in self.x.rows().iter().enumerate() {
            for &i in row {
                a0[[i as usize, u]] = 1.0;
            }
        }
        for v in 0..self.n_fake {
            for i in 0..ni {
                a0[[i, nu + v]] = xhat[[v, i]];
            }
        }
        Ok(a0)
    }

    /// Per-entry instance weights for the reconstruction loss.
    fn entry_weights(&self, a0: &Array2<f64>) -> Array2<f64> {
        a0.mapv(|v| if v >= 0.5 { self.cfg.w_pos } else { self.cfg.w_neg })
    }

    /// Forward pass over all item columns. Returns activations `A0..Am`.
    fn forward(&self, weights: &[ArrayView2<f64>], biases: &[ArrayView1<f64>], a0: Array2<f64>) -> Vec<Array2<f64>> {
        let m = self.n_layers();
        let mut acts = Vec::with_capacity(m + 1);
        acts.push(a0);
        for l in 0..m {
            let z = acts[l].dot(&weights[l].t()) + &biases[l];
            acts.push(if l + 1 == m { z } else { z.mapv(f64::tanh) });
        }
        acts
    }

    /// Backward pass: per-layer pre-activation adjoints `G1..Gm`, given the
    /// adjoint of the (linear) output.
    fn backward(
        &self,
        weights: &[ArrayView2<f64>],
        acts: &[Array2<f64>],
        g_out: Array2<f64>,
    ) -> Vec<Array2<f64>> {
        let m = self.n_layers();
        let mut gs = vec![Array2::zeros((0, 0)); m];
        gs[m - 1] = g_out;
        for l in (1..m).rev() {
            let upstream = gs[l].dot(&weights[l]);
            gs[l - 1] = upstream * &acts[l].mapv(|a| 1.0 - a * a);
        }
        gs
    }

    /// Extract the fake-column block of an input-shaped gradient and
    /// transpose it to the `n_fake x n_items` attack layout.
    fn fake_block(&self, input_grad: &Array2<f64>) -> Array2<f64> {
        let nu = self.x.n_users();
        let mut out = Array2::<f64>::zeros((self.n_fake, self.x.n_items()));
        for v in 0..self.n_fake {
            for i in 0..self.x.n_items() {
                out[[v, i]] = input_grad[[i, nu + v]];
            }
        }
        out
    }
}

impl TransitionModel for ItemAeModel {
    fn param_len(&self) -> usize {
        (0..self.n_layers())
            .map(|l| self.dims[l + 1] * self.dims[l] + self.dims[l + 1])
            .sum()
    }

    fn loss_and_grad(&self, theta: &Theta, xhat: &Array2<f64>) -> Result<(f64, Theta)> {
        let (weights, biases) = self.views(theta);
        let a0 = self.input_matrix(xhat)?;
        let w_in = self.entry_weights(&a0);
        let acts = self.forward(&weights, &biases, a0);
        let m = self.n_layers();

        let err = &acts[m] - &acts[0];
        let loss = (&w_in * &err * &err).sum()
            + self.cfg.lambda * theta.iter().map(|t| t * t).sum::<f64>();

        let gs = self.backward(&weights, &acts, 2.0 * &w_in * &err);
        let mut grad_w = Vec::with_capacity(m);
        let mut grad_b = Vec::with_capacity(m);
        for l in 0..m {
            let mut gw = gs[l].t().dot(&acts[l]);
            gw.scaled_add(2.0 * self.cfg.lambda, &weights[l]);
            grad_w.push(gw);
            grad_b.push(
                gs[l].sum_axis(Axis(0)) + &(biases[l].to_owned() * (2.0 * self.cfg.lambda)),
            );
        }
        Ok((loss, self.pack(grad_w, grad_b)))
    }

    fn second_order(&self, theta: &Theta, xhat: &Array2<f64>, dir: &Theta) -> Result<SecondOrder> {
        let (weights, biases) = self.views(theta);
        let (dw, db) = self.views(dir);
        let a0 = self.input_matrix(xhat)?;
        let w_in = self.entry_weights(&a0);
        let acts = self.forward(&weights, &biases, a0);
        let m = self.n_layers();

        // Tangent forward: Adot_0 = 0, so the first layer sees only the
        // parameter tangent.
        let mut dacts: Vec<Array2<f64>> = Vec::with_capacity(m + 1);
        dacts.push(Array2::zeros(acts[0].raw_dim()));
        for l in 0..m {
            let dz = acts[l].dot(&dw[l].t()) + dacts[l].dot(&weights[l].t()) + &db[l];
            dacts.push(if l + 1 == m {
                dz
            } else {
                dz * &acts[l + 1].mapv(|a| 1.0 - a * a)
            });
        }

        let err = &acts[m] - &acts[0];
        let derr = dacts[m].clone();

        // Primal adjoints G and their tangents Gdot, both at pre-activation.
        let gs = self.backward(&weights, &acts, 2.0 * &w_in * &err);
        let mut dgs = vec![Array2::zeros((0, 0)); m];
        dgs[m - 1] = 2.0 * &w_in * &derr;
        for l in (1..m).rev() {
            let phi = acts[l].mapv(|a| 1.0 - a * a);
            let up = dgs[l].dot(&weights[l]) + gs[l].dot(&dw[l]);
            // d(phi') along the tangent is -2 a adot.
            let curv = gs[l].dot(&weights[l]) * &acts[l] * &dacts[l] * -2.0;
            dgs[l - 1] = up * &phi + curv;
        }

        let mut hv_w = Vec::with_capacity(m);
        let mut hv_b = Vec::with_capacity(m);
        for l in 0..m {
            let mut hw = dgs[l].t().dot(&acts[l]) + gs[l].t().dot(&dacts[l]);
            hw.scaled_add(2.0 * self.cfg.lambda, &dw[l]);
            hv_w.push(hw);
            hv_b.push(dgs[l].sum_axis(Axis(0)) + &(db[l].to_owned() * (2.0 * self.cfg.lambda)));
        }

        // Input gradient of the directional derivative <grad, dir>: walk
        // both the primal and tangent chains down to A0. C is the adjoint
        // of Z_l, D the adjoint of Zdot_l.
        let mut c = dgs[m - 1].clone();
        let mut d = gs[m - 1].clone();
        for l in (1..m).rev() {
            let ca = c.dot(&weights[l]) + d.dot(&dw[l]);
            let da = d.dot(&weights[l]);
            let phi = acts[l].mapv(|a| 1.0 - a * a);
            c = ca * &phi - 2.0 * &da * &acts[l] * &dacts[l];
            d = da * &phi;
        }
        let mut input_grad = c.dot(&weights[0]) + d.dot(&dw[0]);
        // Direct target-side term of d/dA0 sum 2 W (Am - A0) Amdot.
        input_grad.scaled_add(-2.0, &(&w_in * &derr));

        Ok(SecondOrder {
            hvp: self.pack(hv_w, hv_b),
            mixed: self.fake_block(&input_grad),
        })
    }
}

impl Surrogate for ItemAeModel {
    fn n_users(&self) -> usize {
        self.x.n_users()
    }

    fn n_items(&self) -> usize {
        self.x.n_items()
    }

    fn n_fake(&self) -> usize {
        self.n_fake
    }

    fn init_theta(&self, seed: u64) -> Theta {
        gaussian_init(self.param_len(), seed)
    }

    fn predictions(&self, theta: &Theta, xhat: &Array2<f64>) -> Result<Array2<f64>> {
        let (weights, biases) = self.views(theta);
        let a0 = self.input_matrix(xhat)?;
        let acts = self.forward(&weights, &biases, a0);
        let recon = &acts[self.n_layers()];
        let (nu, ni) = (self.x.n_users(), self.x.n_items());
        let mut r = Array2::<f64>::zeros((nu, ni));
        for u in 0..nu {
            for i in 0..ni {
                r[[u, i]] = recon[[i, u]];
            }
        }
        Ok(r)
    }

    fn adv_pullback(
        &self,
        theta: &Theta,
        xhat: &Array2<f64>,
        g_r: &Array2<f64>,
    ) -> Result<(Theta, Option<Array2<f64>>)> {
        let (nu, ni) = (self.x.n_users(), self.x.n_items());
        if g_r.dim() != (nu, ni) {
            return Err(Error::Precondition(format!(
                "prediction gradient shape {:?} does not match ({nu}, {ni})",
                g_r.dim()
            )));
        }
        let (weights, biases) = self.views(theta);
        let a0 = self.input_matrix(xhat)?;
        let acts = self.forward(&weights, &biases, a0);
        let m = self.n_layers();

        // Pad the adjoint: fake columns of the reconstruction do not enter
        // the adversarial loss.
        let mut g_out = Array2::<f64>::zeros(acts[m].raw_dim());
        for u in 0..nu {
            for i in 0..ni {
                g_out[[i, u]] = g_r[[u, i]];
            }
        }
        let gs = self.backward(&weights, &acts, g_out);
        let mut grad_w = Vec::with_capacity(m);
        let mut grad_b = Vec::with_capacity(m);
        for l in 0..m {
            grad_w.push(gs[l].t().dot(&acts[l]));
            grad_b.push(gs[l].sum_axis(Axis(0)));
        }
        let input_grad = gs[0].dot(&weights[0]);
        Ok((
            self.pack(grad_w, grad_b),
            Some(self.fake_block(&input_grad)),
        ))
    }
}

/// Train the autoencoder with full-batch SGD or Adam, recording the last
/// `window` transitions.
#[allow(clippy::too_many_arguments)]
pub fn itemae_train(
    x: &InteractionMatrix,
    xhat: &Array2<f64>,
    cfg: ItemAeConfig,
    optimizer: OptimizerKind,
    step_size: f64,
    n_steps: usize,
    window: usize,
    seed: u64,
) -> Result<(ItemAeParams, Trajectory)> {
    let model = ItemAeModel::new(x.clone(), xhat.nrows(), cfg)?;
    let theta0 = model.init_theta(seed);
    let traj = record_inner_training(&model, xhat, theta0, optimizer, step_size, n_steps, window)?;
    let params = model.params_from_theta(&traj.final_theta);
    Ok((params, traj))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_instance(seed: u64) -> (ItemAeModel, Theta, Array2<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n_users, n_items, n_fake) = (5, 6, 2);
        let rows: Vec<Vec<u32>> = (0..n_users)
            .map(|_| {
                (0..n_items as u32)
                    .filter(|_| rng.gen::<f64>() < 0.4)
                    .collect()
            })
            .collect();
        let x = InteractionMatrix::from_rows(n_items, rows).unwrap();
        let cfg = ItemAeConfig {
            hidden: vec![4, 3, 4],
            lambda: 0.01,
            w_pos: 20.0,
            w_neg: 1.0,
        };
        let model = ItemAeModel::new(x, n_fake, cfg).unwrap();
        let theta = Array::from_shape_fn(model.param_len(), |_| rng.gen_range(-0.4..0.4));
        let xhat = Array::from_shape_fn((n_fake, n_items), |_| {
            if rng.gen::<bool>() {
                rng.gen_range(0.6..0.95)
            } else {
                rng.gen_range(0.05..0.4)
            }
        });
        (model, theta, xhat)
    }

    #[test]
    fn identity_single_layer_reproduces_input() {
        let n = 4;
        let params = ItemAeParams {
            weights: vec![Array2::eye(n)],
            biases: vec![Array1::zeros(n)],
        };
        let x_plus = ndarray::array![0.0, 1.0, 0.3, 0.9];
        let r = itemae_forward(&params, &x_plus).unwrap();
        assert_eq!(r, x_plus);
    }

    #[test]
    fn forward_rejects_shape_mismatch() {
        let params = ItemAeParams {
            weights: vec![Array2::eye(3)],
            biases: vec![Array1::zeros(3)],
        };
        let bad = ndarray::array![1.0, 2.0];
        assert!(itemae_forward(&params, &bad).is_err());
    }

    #[test]
    fn zero_input_zero_biases_gives_zero_output() {
        let (model, theta, _) = small_instance(1);
        // Zero out the biases in the flat vector.
        let params = model.params_from_theta(&theta);
        let zeroed = ItemAeParams {
            weights: params.weights,
            biases: params.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
        };
        let zero_in = Array1::zeros(7);
        let out = itemae_forward(&zeroed, &zero_in).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn predictions_depend_on_fake_block() {
        let (model, theta, xhat) = small_instance(3);
        let r0 = model.predictions(&theta, &xhat).unwrap();
        let mut xp = xhat.clone();
        xp[[0, 0]] += 0.05;
        let r1 = model.predictions(&theta, &xp).unwrap();
        let diff: f64 = (&r1 - &r0).iter().map(|d| d.abs()).sum();
        assert!(diff > 1e-9, "predictions ignored the fake block");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (model, theta, xhat) = small_instance(5);
        let (_, grad) = model.loss_and_grad(&theta, &xhat).unwrap();
        let h = 1e-5;
        for j in (0..theta.len()).step_by(3) {
            let mut tp = theta.clone();
            tp[j] += h;
            let mut tm = theta.clone();
            tm[j] -= h;
            let (lp, _) = model.loss_and_grad(&tp, &xhat).unwrap();
            let (lm, _) = model.loss_and_grad(&tm, &xhat).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            assert!(
                (grad[j] - fd).abs() < 1e-4 * fd.abs().max(1.0),
                "param {j}: {} vs {fd}",
                grad[j]
            );
        }
    }

    #[test]
    fn hvp_matches_finite_differences_of_gradient() {
        let (model, theta, xhat) = small_instance(7);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let dir: Theta = Array::from_shape_fn(theta.len(), |_| rng.gen_range(-1.0..1.0));
        let so = model.second_order(&theta, &xhat, &dir).unwrap();
        let h = 1e-5;
        let tp = &theta + &(&dir * h);
        let tm = &theta - &(&dir * h);
        let (_, gp) = model.loss_and_grad(&tp, &xhat).unwrap();
        let (_, gm) = model.loss_and_grad(&tm, &xhat).unwrap();
        for j in 0..theta.len() {
            let fd = (gp[j] - gm[j]) / (2.0 * h);
            assert!(
                (so.hvp[j] - fd).abs() < 1e-4 * fd.abs().max(1.0),
                "hvp component {j}: {} vs {fd}",
                so.hvp[j]
            );
        }
    }

    #[test]
    fn mixed_matches_finite_differences() {
        let (model, theta, xhat) = small_instance(9);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let dir: Theta = Array::from_shape_fn(theta.len(), |_| rng.gen_range(-1.0..1.0));
        let so = model.second_order(&theta, &xhat, &dir).unwrap();
        let h = 1e-5;
        for v in 0..2 {
            for i in 0..6 {
                let mut xp = xhat.clone();
                xp[[v, i]] += h;
                let mut xm = xhat.clone();
                xm[[v, i]] -= h;
                let (_, gp) = model.loss_and_grad(&theta, &xp).unwrap();
                let (_, gm) = model.loss_and_grad(&theta, &xm).unwrap();
                let fd = (gp.dot(&dir) - gm.dot(&dir)) / (2.0 * h);
                assert!(
                    (so.mixed[[v, i]] - fd).abs() < 1e-4 * fd.abs().max(1.0),
                    "entry ({v},{i}): {} vs {fd}",
                    so.mixed[[v, i]]
                );
            }
        }
    }

    #[test]
    fn adv_pullback_has_direct_term_matching_finite_differences() {
        let (model, theta, xhat) = small_instance(11);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let g_r: Array2<f64> = Array::from_shape_fn((5, 6), |_| rng.gen_range(-1.0..1.0));
        let (g_theta, direct) = model.adv_pullback(&theta, &xhat, &g_r).unwrap();
        let direct = direct.expect("autoencoder predictions read xhat");

        let f_theta = |th: &Theta| -> f64 {
            (&model.predictions(th, &xhat).unwrap() * &g_r).sum()
        };
        let f_xhat = |xh: &Array2<f64>| -> f64 {
            (&model.predictions(&theta, xh).unwrap() * &g_r).sum()
        };
        let h = 1e-5;
        for j in (0..theta.len()).step_by(5) {
            let mut tp = theta.clone();
            tp[j] += h;
            let mut tm = theta.clone();
            tm[j] -= h;
            let fd = (f_theta(&tp) - f_theta(&tm)) / (2.0 * h);
            assert!(
                (g_theta[j] - fd).abs() < 1e-5 * fd.abs().max(1.0),
                "theta component {j}: {} vs {fd}",
                g_theta[j]
            );
        }
        for v in 0..2 {
            for i in 0..6 {
                let mut xp = xhat.clone();
                xp[[v, i]] += h;
                let mut xm = xhat.clone();
                xm[[v, i]] -= h;
                let fd = (f_xhat(&xp) - f_xhat(&xm)) / (2.0 * h);
                assert!(
                    (direct[[v, i]] - fd).abs() < 1e-5 * fd.abs().max(1.0),
                    "direct entry ({v},{i}): {} vs {fd}",
                    direct[[v, i]]
                );
            }
        }
    }

    #[test]
    fn train_zero_steps_returns_initialization_and_loss_decreases_after() {
        let (model, _, xhat) = small_instance(13);
        let cfg = model.config().clone();
        let (params0, traj0) = itemae_train(
            model.x(),
            &xhat,
            cfg.clone(),
            OptimizerKind::Adam(Default::default()),
            0.01,
            0,
            0,
            3,
        )
        .unwrap();
        let init = model.params_from_theta(&model.init_theta(3));
        assert_eq!(params0.weights[0], init.weights[0]);
        assert_eq!(traj0.total_steps, 0);

        let (_, traj) = itemae_train(
            model.x(),
            &xhat,
            cfg,
            OptimizerKind::Adam(Default::default()),
            0.01,
            80,
            0,
            3,
        )
        .unwrap();
        assert!(
            traj.losses.last().unwrap() < &traj.losses[0],
            "loss did not decrease: {} -> {}",
            traj.losses[0],
            traj.losses.last().unwrap()
        );
    }
}
