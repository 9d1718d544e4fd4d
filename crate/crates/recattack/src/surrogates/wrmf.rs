//! Weighted regularized matrix factorization trained by full-batch
//! gradient descent (SGD or Adam).
//!
//! The training objective is
//!
//! ```text
//! L = sum_ui w_ui (x_ui - P_u.Q_i)^2 + sum_vi w_vi (xhat_vi - F_v.Q_i)^2
//!   + lambda (|P|^2 + |F|^2 + |Q|^2)
//! ```
//!
//! with `w = w_pos` on observed entries and `w_neg` on missing ones. The
//! fake-side weight looks at `xhat_vi >= 0.5`; since the weight is piecewise
//! constant in `xhat`, its derivative is zero almost everywhere and every
//! derivative below treats it as locally constant.
//!
//! The normal-user side never materializes the dense U x I error matrix.
//! Writing `E = X - P Q^T` and `G_Q = Q^T Q`, the identities
//!
//! ```text
//! sum_ui (x_ui - dot_ui)^2 = |P Q^T|^2 - 2 sum_nnz dot_ui + nnz
//! |P Q^T|^2               = sum_u P_u G_Q P_u^T
//! (W o E) Q               = w_neg (X Q - P G_Q) + (w_pos - w_neg) sum_nnz (1 - dot_ui) Q_i
//! ```
//!
//! reduce everything to nonzero loops plus K x K Gram products, so one
//! gradient or Hessian-vector product costs O(nnz K + (U + I) K^2 + V I K).

use ndarray::{Array1, Array2, ArrayView2};

use crate::diffkit::{
    record_inner_training, OptimizerKind, SecondOrder, Theta, Trajectory, TransitionModel,
};
use crate::error::{Error, Result};
use crate::interactions::InteractionMatrix;

use super::{gaussian_init, Surrogate};

/// WRMF hyperparameters shared by the SGD and ALS trainers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WrmfConfig {
    pub k: usize,
    pub lambda: f64,
    pub w_pos: f64,
    pub w_neg: f64,
}

impl WrmfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("latent dimension k must be >= 1".into()));
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

/// Trained factor tables. `p` covers normal users, `f` fake users, `q`
/// items; weights and lambda ride along so the loss is recomputable.
#[derive(Debug, Clone)]
pub struct WrmfParams {
    pub p: Array2<f64>,
    pub f: Array2<f64>,
    pub q: Array2<f64>,
    pub lambda: f64,
    pub w_pos: f64,
    pub w_neg: f64,
}

impl WrmfParams {
    pub fn k(&self) -> usize {
        self.p.ncols()
    }

    /// Flatten into the `[P, F, Q]` row-major layout the transition model
    /// expects.
    pub fn to_theta(&self) -> Theta {
        let mut out = Vec::with_capacity(self.p.len() + self.f.len() + self.q.len());
        out.extend(self.p.iter());
        out.extend(self.f.iter());
        out.extend(self.q.iter());
        Array1::from_vec(out)
    }
}

/// WRMF as a differentiable transition model. Owns the (sparse) normal-user
/// matrix; the fake block arrives as the `xhat` argument on every call.
#[derive(Debug, Clone)]
pub struct WrmfModel {
    x: InteractionMatrix,
    item_users: Vec<Vec<u32>>,
    n_fake: usize,
    cfg: WrmfConfig,
}

impl WrmfModel {
    pub fn new(x: InteractionMatrix, n_fake: usize, cfg: WrmfConfig) -> Result<Self> {
        cfg.validate()?;
        let mut item_users = vec![Vec::new(); x.n_items()];
        for (u, row) in x.rows().iter().enumerate() {
            for &i in row {
                item_users[i as usize].push(u as u32);
            }
        }
        Ok(Self {
            x,
            item_users,
            n_fake,
            cfg,
        })
    }

    pub fn config(&self) -> &WrmfConfig {
        &self.cfg
    }

    pub fn x(&self) -> &InteractionMatrix {
        &self.x
    }

    fn dims(&self) -> (usize, usize, usize, usize) {
        (self.x.n_users(), self.n_fake, self.x.n_items(), self.cfg.k)
    }

    /// Split a flat parameter vector into (P, F, Q) views.
    fn views<'a>(
        &self,
        theta: &'a Theta,
    ) -> (ArrayView2<'a, f64>, ArrayView2<'a, f64>, ArrayView2<'a, f64>) {
        let (nu, nf, ni, k) = self.dims();
        let s = theta.as_slice().expect("contiguous theta");
        let p = ArrayView2::from_shape((nu, k), &s[..nu * k]).unwrap();
        let f = ArrayView2::from_shape((nf, k), &s[nu * k..(nu + nf) * k]).unwrap();
        let q = ArrayView2::from_shape((ni, k), &s[(nu + nf) * k..]).unwrap();
        (p, f, q)
    }

    fn pack(&self, p: Array2<f64>, f: Array2<f64>, q: Array2<f64>) -> Theta {
        let mut out = Vec::with_capacity(p.len() + f.len() + q.len());
        out.extend(p.iter());
        out.extend(f.iter());
        out.extend(q.iter());
        Array1::from_vec(out)
    }

    /// Unpack a trained flat vector into named factor tables.
    pub fn params_from_theta(&self, theta: &Theta) -> WrmfParams {
        let (p, f, q) = self.views(theta);
        WrmfParams {
            p: p.to_owned(),
            f: f.to_owned(),
            q: q.to_owned(),
            lambda: self.cfg.lambda,
            w_pos: self.cfg.w_pos,
            w_neg: self.cfg.w_neg,
        }
    }

    /// Fake-side weight table: `w_pos` where `xhat >= 0.5`, else `w_neg`.
    fn fake_weights(&self, xhat: &Array2<f64>) -> Array2<f64> {
        xhat.mapv(|v| if v >= 0.5 { self.cfg.w_pos } else { self.cfg.w_neg })
    }
}

/// Training loss for given factor tables, using the sparse-path identities.
/// Shared by the SGD model and the ALS monotonicity checks.
pub fn wrmf_loss(params: &WrmfParams, x: &InteractionMatrix, xhat: &Array2<f64>) -> f64 {
    let (p, f, q) = (&params.p, &params.f, &params.q);
    let (wp, wn, lambda) = (params.w_pos, params.w_neg, params.lambda);
    let g_q = q.t().dot(q);

    // |P Q^T|^2 via the K x K Gram matrix.
    let pg = p.dot(&g_q);
    let norm_pq2: f64 = pg.iter().zip(p.iter()).map(|(a, b)| a * b).sum();

    let mut sum_dot = 0.0;
    let mut sq_pos = 0.0;
    for (u, row) in x.rows().iter().enumerate() {
        let pu = p.row(u);
        for &i in row {
            let dot = pu.dot(&q.row(i as usize));
            sum_dot += dot;
            let e = 1.0 - dot;
            sq_pos += e * e;
        }
    }
    let nnz = x.nnz() as f64;
    let normal = wn * (norm_pq2 - 2.0 * sum_dot + nnz) + (wp - wn) * sq_pos;

    let mut fake = 0.0;
    if f.nrows() > 0 {
        let rf = f.dot(&q.t());
        for ((v, i), &pred) in rf.indexed_iter() {
            let xv = xhat[[v, i]];
            let w = if xv >= 0.5 { wp } else { wn };
            let e = xv - pred;
            fake += w * e * e;
        }
    }

    let reg = lambda
        * (p.iter().map(|a| a * a).sum::<f64>()
            + f.iter().map(|a| a * a).sum::<f64>()
            + q.iter().map(|a| a * a).sum::<f64>());
    normal + fake + reg
}

impl TransitionModel for WrmfModel {
    fn param_len(&self) -> usize {
        let (nu, nf, ni, k) = self.dims();
        (nu + nf + ni) * k
    }

    fn loss_and_grad(&self, theta: &Theta, xhat: &Array2<f64>) -> Result<(f64, Theta)> {
        let (nu, nf, ni, k) = self.dims();
        if xhat.dim() != (nf, ni) {
            return Err(Error::Precondition(format!(
                "fake block shape {:?} does not match ({nf}, {ni})",
                xhat.dim()
            )));
        }
        let (p, f, q) = self.views(theta);
        let (wp, wn, lambda) = (self.cfg.w_pos, self.cfg.w_neg, self.cfg.lambda);
        let g_q = q.t().dot(&q);
        let g_p = p.t().dot(&p);

        // One pass over the nonzeros: loss terms plus the weighted error
        // sums S_P[u] = sum_i (1-dot) Q_i and S_Q[i] = sum_u (1-dot) P_u.
        let mut sum_dot = 0.0;
        let mut sq_pos = 0.0;
        let mut s_p = Array2::<f64>::zeros((nu, k));
        let mut s_q = Array2::<f64>::zeros((ni, k));
        for (u, row) in self.x.rows().iter().enumerate() {
            let pu = p.row(u);
            for &iu in row {
                let i = iu as usize;
                let qi = q.row(i);
                let dot = pu.dot(&qi);
                sum_dot += dot;
                let e = 1.0 - dot;
                sq_pos += e * e;
                let mut spu = s_p.row_mut(u);
                spu.scaled_add(e, &qi);
                let mut sqi = s_q.row_mut(i);
                sqi.scaled_add(e, &pu);
            }
        }

        let pg = p.dot(&g_q);
        let norm_pq2: f64 = pg.iter().zip(p.iter()).map(|(a, b)| a * b).sum();
        let nnz = self.x.nnz() as f64;
        let mut loss = wn * (norm_pq2 - 2.0 * sum_dot + nnz) + (wp - wn) * sq_pos;

        // Fake side is dense but only n_fake x n_items.
        let wh = self.fake_weights(xhat);
        let eh = xhat - &f.dot(&q.t());
        let whe = &wh * &eh;
        for ((v, i), &e) in eh.indexed_iter() {
            loss += wh[[v, i]] * e * e;
        }

        let xq = self.x_dot(&q); // X Q, n_users x K
        let xtp = self.xt_dot(&p); // X^T P, n_items x K

        // grad_P = -2 [ wn (XQ - P G_Q) + (wp-wn) S_P ] + 2 lambda P
        let mut grad_p = (xq - &pg) * wn;
        grad_p.scaled_add(wp - wn, &s_p);
        grad_p *= -2.0;
        grad_p.scaled_add(2.0 * lambda, &p);

        // grad_Q = -2 [ wn (X^T P - Q G_P) + (wp-wn) S_Q + (Wh o Eh)^T F ] + 2 lambda Q
        let mut grad_q = (xtp - &q.dot(&g_p)) * wn;
        grad_q.scaled_add(wp - wn, &s_q);
        if nf > 0 {
            grad_q += &whe.t().dot(&f);
        }
        grad_q *= -2.0;
        grad_q.scaled_add(2.0 * lambda, &q);

        // grad_F = -2 (Wh o Eh) Q + 2 lambda F
        let mut grad_f = whe.dot(&q) * -2.0;
        grad_f.scaled_add(2.0 * lambda, &f);

        loss += lambda
            * (p.iter().map(|a| a * a).sum::<f64>()
                + f.iter().map(|a| a * a).sum::<f64>()
                + q.iter().map(|a| a * a).sum::<f64>());

        Ok((loss, self.pack(grad_p, grad_f, grad_q)))
    }

    fn second_order(&self, theta: &Theta, xhat: &Array2<f64>, dir: &Theta) -> Result<SecondOrder> {
        let (nu, nf, ni, k) = self.dims();
        let (p, f, q) = self.views(theta);
        let (dp, df, dq) = self.views(dir);
        let (wp, wn, lambda) = (self.cfg.w_pos, self.cfg.w_neg, self.cfg.lambda);

        let g_q = q.t().dot(&q);
        let g_p = p.t().dot(&p);
        let qtdq = q.t().dot(&dq); // Q^T Qdot
        let ptdp = p.t().dot(&dp); // P^T Pdot
        let sym_q = &qtdq + &qtdq.t(); // d(G_Q)
        let sym_p = &ptdp + &ptdp.t(); // d(G_P)

        // Nonzero pass: s_ui = Pdot_u.Q_i + P_u.Qdot_i and the four sparse
        // accumulators needed by the directional derivative of each factor
        // gradient.
        let mut a_p = Array2::<f64>::zeros((nu, k)); // sum_i (-s Q_i + (1-dot) Qdot_i)
        let mut a_q = Array2::<f64>::zeros((ni, k)); // sum_u (-s P_u + (1-dot) Pdot_u)
        for (u, row) in self.x.rows().iter().enumerate() {
            let pu = p.row(u);
            let dpu = dp.row(u);
            for &iu in row {
                let i = iu as usize;
                let qi = q.row(i);
                let dqi = dq.row(i);
                let dot = pu.dot(&qi);
                let s = dpu.dot(&qi) + pu.dot(&dqi);
                let e = 1.0 - dot;
                let mut apu = a_p.row_mut(u);
                apu.scaled_add(-s, &qi);
                apu.scaled_add(e, &dqi);
                let mut aqi = a_q.row_mut(i);
                aqi.scaled_add(-s, &pu);
                aqi.scaled_add(e, &dpu);
            }
        }

        let xdq = self.x_dot(&dq);
        let xtdp = self.xt_dot(&dp);

        // hv_P = -2 [ wn (X Qdot - Pdot G_Q - P d(G_Q)) + (wp-wn) a_p ] + 2 lambda Pdot
        let mut hv_p = (xdq - &dp.dot(&g_q) - &p.dot(&sym_q)) * wn;
        hv_p.scaled_add(wp - wn, &a_p);
        hv_p *= -2.0;
        hv_p.scaled_add(2.0 * lambda, &dp);

        // Fake-side dense pieces.
        let wh = self.fake_weights(xhat);
        let eh = xhat - &f.dot(&q.t());
        let sh = df.dot(&q.t()) + f.dot(&dq.t()); // d(F Q^T)
        let whe = &wh * &eh;
        let whs = &wh * &sh;

        // hv_Q = -2 [ wn (X^T Pdot - Qdot G_P - Q d(G_P)) + (wp-wn) a_q
        //             - (Wh o Sh)^T F + (Wh o Eh)^T Fdot ] + 2 lambda Qdot
        let mut hv_q = (xtdp - &dq.dot(&g_p) - &q.dot(&sym_p)) * wn;
        hv_q.scaled_add(wp - wn, &a_q);
        if nf > 0 {
            hv_q -= &whs.t().dot(&f);
            hv_q += &whe.t().dot(&df);
        }
        hv_q *= -2.0;
        hv_q.scaled_add(2.0 * lambda, &dq);

        // hv_F = 2 (Wh o Sh) Q - 2 (Wh o Eh) Qdot + 2 lambda Fdot
        let mut hv_f = whs.dot(&q) * 2.0;
        hv_f.scaled_add(-2.0, &whe.dot(&dq));
        hv_f.scaled_add(2.0 * lambda, &df);

        // mixed[v][i] = d/dxhat_vi (grad . dir) = -2 w_vi (Fdot_v.Q_i + F_v.Qdot_i)
        let mixed = whs * -2.0;

        Ok(SecondOrder {
            hvp: self.pack(hv_p, hv_f, hv_q),
            mixed,
        })
    }
}

impl WrmfModel {
    /// X · M for sparse binary X, `M: n_items x K`.
    fn x_dot(&self, m: &ArrayView2<f64>) -> Array2<f64> {
        let (nu, _, _, k) = self.dims();
        let mut out = Array2::<f64>::zeros((nu, k));
        for (u, row) in self.x.rows().iter().enumerate() {
            let mut o = out.row_mut(u);
            for &i in row {
                o += &m.row(i as usize);
            }
        }
        out
    }

    /// X^T · M for sparse binary X, `M: n_users x K`.
    fn xt_dot(&self, m: &ArrayView2<f64>) -> Array2<f64> {
        let (_, _, ni, k) = self.dims();
        let mut out = Array2::<f64>::zeros((ni, k));
        for (i, users) in self.item_users.iter().enumerate() {
            let mut o = out.row_mut(i);
            for &u in users {
                o += &m.row(u as usize);
            }
        }
        out
    }
}

impl Surrogate for WrmfModel {
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

    fn predictions(&self, theta: &Theta, _xhat: &Array2<f64>) -> Result<Array2<f64>> {
        let (p, _, q) = self.views(theta);
        Ok(p.dot(&q.t()))
    }

    fn adv_pullback(
        &self,
        theta: &Theta,
        _xhat: &Array2<f64>,
        g_r: &Array2<f64>,
    ) -> Result<(Theta, Option<Array2<f64>>)> {
        let (nu, nf, ni, k) = self.dims();
        if g_r.dim() != (nu, ni) {
            return Err(Error::Precondition(format!(
                "prediction gradient shape {:?} does not match ({nu}, {ni})",
                g_r.dim()
            )));
        }
        let (p, _, q) = self.views(theta);
        let grad_p = g_r.dot(&q);
        let grad_q = g_r.t().dot(&p);
        let grad_f = Array2::<f64>::zeros((nf, k));
        // R = P Q^T never reads the fake block: the direct adversarial
        // partial w.r.t. xhat is structurally zero.
        Ok((self.pack(grad_p, grad_f, grad_q), None))
    }
}

/// Train WRMF with full-batch SGD or Adam, recording the last `window`
/// transitions for unrolling.
#[allow(clippy::too_many_arguments)]
pub fn wrmf_train_sgd(
    x: &InteractionMatrix,
    xhat: &Array2<f64>,
    cfg: WrmfConfig,
    optimizer: OptimizerKind,
    step_size: f64,
    n_steps: usize,
    window: usize,
    seed: u64,
) -> Result<(WrmfParams, Trajectory)> {
    let model = WrmfModel::new(x.clone(), xhat.nrows(), cfg)?;
    let theta0 = model.init_theta(seed);
    let traj = record_inner_training(&model, xhat, theta0, optimizer, step_size, n_steps, window)?;
    let params = model.params_from_theta(&traj.final_theta);
    Ok((params, traj))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_instance(seed: u64) -> (WrmfModel, Theta, Array2<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_users = 5;
        let n_items = 6;
        let n_fake = 2;
        let k = 3;
        let rows: Vec<Vec<u32>> = (0..n_users)
            .map(|_| {
                (0..n_items as u32)
                    .filter(|_| rng.gen::<f64>() < 0.4)
                    .collect()
            })
            .collect();
        let x = InteractionMatrix::from_rows(n_items, rows).unwrap();
        let cfg = WrmfConfig {
            k,
            lambda: 0.01,
            w_pos: 20.0,
            w_neg: 1.0,
        };
        let model = WrmfModel::new(x, n_fake, cfg).unwrap();
        let theta = Array::from_shape_fn(model.param_len(), |_| rng.gen_range(-0.5..0.5));
        // Keep xhat entries away from the 0.5 weight boundary so finite
        // differences never flip an instance weight.
        let xhat = Array::from_shape_fn((n_fake, n_items), |_| {
            if rng.gen::<bool>() {
                rng.gen_range(0.6..0.95)
            } else {
                rng.gen_range(0.05..0.4)
            }
        });
        (model, theta, xhat)
    }

    /// Naive dense double-loop evaluation of the training objective.
    fn naive_loss(model: &WrmfModel, theta: &Theta, xhat: &Array2<f64>) -> f64 {
        let params = model.params_from_theta(theta);
        let (wp, wn, lambda) = (params.w_pos, params.w_neg, params.lambda);
        let mut loss = 0.0;
        for u in 0..model.n_users() {
            for i in 0..model.n_items() {
                let x = if model.x().contains(u, i as u32) { 1.0 } else { 0.0 };
                let w = if x == 1.0 { wp } else { wn };
                let e = x - params.p.row(u).dot(&params.q.row(i));
                loss += w * e * e;
            }
        }
        for v in 0..model.n_fake() {
            for i in 0..model.n_items() {
                let xv = xhat[[v, i]];
                let w = if xv >= 0.5 { wp } else { wn };
                let e = xv - params.f.row(v).dot(&params.q.row(i));
                loss += w * e * e;
            }
        }
        loss += lambda
            * (params.p.iter().map(|a| a * a).sum::<f64>()
                + params.f.iter().map(|a| a * a).sum::<f64>()
                + params.q.iter().map(|a| a * a).sum::<f64>());
        loss
    }

    #[test]
    fn loss_zero_for_zero_params_and_empty_matrix() {
        let x = InteractionMatrix::from_rows(3, vec![vec![], vec![]]).unwrap();
        let cfg = WrmfConfig {
            k: 2,
            lambda: 0.0,
            w_pos: 20.0,
            w_neg: 1.0,
        };
        let model = WrmfModel::new(x, 0, cfg).unwrap();
        let theta = Array1::zeros(model.param_len());
        let xhat = Array2::zeros((0, 3));
        let (loss, _) = model.loss_and_grad(&theta, &xhat).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn loss_single_observed_entry_by_hand() {
        // One user, one item, x = 1, prediction 0.5, w_pos = 20, lambda = 0:
        // loss = 20 * 0.25 = 5.
        let x = InteractionMatrix::from_rows(1, vec![vec![0]]).unwrap();
        let cfg = WrmfConfig {
            k: 1,
            lambda: 0.0,
            w_pos: 20.0,
            w_neg: 1.0,
        };
        let model = WrmfModel::new(x, 0, cfg).unwrap();
        let theta = array![1.0, 0.5]; // P = [1], Q = [0.5]
        let xhat = Array2::zeros((0, 1));
        let (loss, _) = model.loss_and_grad(&theta, &xhat).unwrap();
        assert!((loss - 5.0).abs() < 1e-12);
    }

    #[test]
    fn sparse_path_loss_matches_naive_double_loop() {
        for seed in [1, 2, 3] {
            let (model, theta, xhat) = small_instance(seed);
            let (loss, _) = model.loss_and_grad(&theta, &xhat).unwrap();
            let naive = naive_loss(&model, &theta, &xhat);
            assert!(
                (loss - naive).abs() < 1e-9 * naive.abs().max(1.0),
                "seed {seed}: {loss} vs {naive}"
            );
            let standalone = wrmf_loss(&model.params_from_theta(&theta), model.x(), &xhat);
            assert!((standalone - naive).abs() < 1e-9 * naive.abs().max(1.0));
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (model, theta, xhat) = small_instance(7);
        let (_, grad) = model.loss_and_grad(&theta, &xhat).unwrap();
        let h = 1e-5;
        for j in 0..theta.len() {
            let mut tp = theta.clone();
            tp[j] += h;
            let mut tm = theta.clone();
            tm[j] -= h;
            let (lp, _) = model.loss_and_grad(&tp, &xhat).unwrap();
            let (lm, _) = model.loss_and_grad(&tm, &xhat).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let tol = 1e-4 * fd.abs().max(1.0);
            assert!((grad[j] - fd).abs() < tol, "param {j}: {} vs {fd}", grad[j]);
        }
    }

    #[test]
    fn hvp_matches_finite_differences_of_gradient() {
        let (model, theta, xhat) = small_instance(11);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let dir: Theta = Array::from_shape_fn(theta.len(), |_| rng.gen_range(-1.0..1.0));
        let so = model.second_order(&theta, &xhat, &dir).unwrap();
        let h = 1e-5;
        let tp = &theta + &(&dir * h);
        let tm = &theta - &(&dir * h);
        let (_, gp) = model.loss_and_grad(&tp, &xhat).unwrap();
        let (_, gm) = model.loss_and_grad(&tm, &xhat).unwrap();
        for j in 0..theta.len() {
            let fd = (gp[j] - gm[j]) / (2.0 * h);
            let tol = 1e-4 * fd.abs().max(1.0);
            assert!(
                (so.hvp[j] - fd).abs() < tol,
                "hvp component {j}: {} vs {fd}",
                so.hvp[j]
            );
        }
    }

    #[test]
    fn hvp_matches_analytic_two_by_two_hessian() {
        // K=1, one user, one observed item, no fakes. With scalars p, q:
        //   L = w (1 - p q)^2 + lambda (p^2 + q^2)
        //   H = [[2wq^2 + 2l, 2w(2pq - 1)], [2w(2pq - 1), 2wp^2 + 2l]]
        let x = InteractionMatrix::from_rows(1, vec![vec![0]]).unwrap();
        let (w, l) = (20.0, 0.3);
        let cfg = WrmfConfig {
            k: 1,
            lambda: l,
            w_pos: w,
            w_neg: 1.0,
        };
        let model = WrmfModel::new(x, 0, cfg).unwrap();
        let (p, q) = (0.7, -0.4);
        let theta = array![p, q];
        let xhat = Array2::zeros((0, 1));
        let h = array![
            [2.0 * w * q * q + 2.0 * l, 2.0 * w * (2.0 * p * q - 1.0)],
            [2.0 * w * (2.0 * p * q - 1.0), 2.0 * w * p * p + 2.0 * l]
        ];
        for dir in [array![1.0, 0.0], array![0.0, 1.0], array![0.3, -0.9]] {
            let so = model.second_order(&theta, &xhat, &dir).unwrap();
            let expect = h.dot(&dir);
            for j in 0..2 {
                assert!(
                    (so.hvp[j] - expect[j]).abs() < 1e-12,
                    "{} vs {}",
                    so.hvp[j],
                    expect[j]
                );
            }
        }
    }

    #[test]
    fn mixed_partial_is_minus_two_w_q() {
        // Unit direction on one F coordinate: mixed[v][i] must equal
        // -2 w_vi Q_i[j] exactly.
        let (model, theta, xhat) = small_instance(13);
        let (nu, nf, _, k) = (model.n_users(), model.n_fake(), model.n_items(), 3);
        let (v, j) = (1, 2);
        let mut dir = Array1::zeros(theta.len());
        dir[(nu + v) * k + j] = 1.0;
        let so = model.second_order(&theta, &xhat, &dir).unwrap();
        let params = model.params_from_theta(&theta);
        for i in 0..model.n_items() {
            let w = if xhat[[v, i]] >= 0.5 { 20.0 } else { 1.0 };
            let expect = -2.0 * w * params.q[[i, j]];
            assert!(
                (so.mixed[[v, i]] - expect).abs() < 1e-12,
                "item {i}: {} vs {expect}",
                so.mixed[[v, i]]
            );
            if v + 1 < nf {
                assert_eq!(so.mixed[[v + 1, i]], 0.0);
            }
        }
    }

    #[test]
    fn mixed_matches_finite_differences() {
        let (model, theta, xhat) = small_instance(17);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dir: Theta = Array::from_shape_fn(theta.len(), |_| rng.gen_range(-1.0..1.0));
        let so = model.second_order(&theta, &xhat, &dir).unwrap();
        let h = 1e-5;
        for v in 0..model.n_fake() {
            for i in 0..model.n_items() {
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
    fn adv_pullback_matches_finite_differences_and_has_no_direct_term() {
        let (model, theta, xhat) = small_instance(19);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g_r: Array2<f64> =
            Array::from_shape_fn((model.n_users(), model.n_items()), |_| rng.gen_range(-1.0..1.0));
        let (g_theta, direct) = model.adv_pullback(&theta, &xhat, &g_r).unwrap();
        assert!(direct.is_none());

        // f(theta) = <G, P Q^T> so the pullback must match its FD gradient.
        let f = |th: &Theta| -> f64 {
            let r = model.predictions(th, &xhat).unwrap();
            (&r * &g_r).sum()
        };
        let h = 1e-6;
        for j in 0..theta.len() {
            let mut tp = theta.clone();
            tp[j] += h;
            let mut tm = theta.clone();
            tm[j] -= h;
            let fd = (f(&tp) - f(&tm)) / (2.0 * h);
            assert!(
                (g_theta[j] - fd).abs() < 1e-5 * fd.abs().max(1.0),
                "component {j}: {} vs {fd}",
                g_theta[j]
            );
        }
    }

    #[test]
    fn train_zero_steps_returns_initialization() {
        let (model, _, xhat) = small_instance(23);
        let cfg = *model.config();
        let (params, traj) = wrmf_train_sgd(
            model.x(),
            &xhat,
            cfg,
            OptimizerKind::Sgd,
            0.001,
            0,
            0,
            42,
        )
        .unwrap();
        let init = model.init_theta(42);
        assert_eq!(params.p.as_slice().unwrap(), &init.as_slice().unwrap()[..params.p.len()]);
        assert_eq!(traj.total_steps, 0);
    }

    #[test]
    fn training_decreases_loss() {
        let (model, _, xhat) = small_instance(29);
        let cfg = *model.config();
        let (_, traj) = wrmf_train_sgd(
            model.x(),
            &xhat,
            cfg,
            OptimizerKind::Adam(Default::default()),
            0.05,
            60,
            0,
            7,
        )
        .unwrap();
        let first = traj.losses[0];
        let last = *traj.losses.last().unwrap();
        assert!(
            last < first,
            "loss did not decrease: {first} -> {last}"
        );
    }

    #[test]
    fn rejects_bad_config() {
        let x = InteractionMatrix::from_rows(2, vec![vec![0]]).unwrap();
        let bad = WrmfConfig {
            k: 2,
            lambda: 0.01,
            w_pos: 0.5,
            w_neg: 1.0,
        };
        assert!(WrmfModel::new(x, 0, bad).is_err());
    }
}
