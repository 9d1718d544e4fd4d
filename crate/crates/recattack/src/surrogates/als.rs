//! WRMF trained by alternating least squares, plus the partial-derivative
//! shortcut that makes ALS-trained WRMF attackable without unrolling.
//!
//! Each factor row has a closed-form ridge solution. For item i with
//! stacked user factors `[P; F]` and per-entry weights `W_i`:
//!
//! ```text
//! Q_i = ([P;F]^T W_i [P;F] + lambda I)^(-1) [P;F]^T W_i [x_i; xhat_i]
//! ```
//!
//! Because missing entries share the weight `w_neg`, the normal matrix
//! splits into a shared Gram part plus a small sum over observed entries:
//! `A_i = w_neg (G_P + G_F) + (w_pos - w_neg) (sum_obs P_u P_u^T + sum_obs F_v F_v^T) + lambda I`.
//!
//! Holding P and F fixed at their converged values, predictions are a
//! linear map of `xhat` columns, which yields the closed-form adversarial
//! partial in [`als_adv_partial`].

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::interactions::InteractionMatrix;
use crate::linalg::{cholesky, solve_with_cholesky};

use super::wrmf::{wrmf_loss, WrmfParams};
use super::gaussian_init;

/// ALS training configuration. `sweeps` bounds the alternation count;
/// training stops early when the relative loss change drops below `tol`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlsConfig {
    pub k: usize,
    pub lambda: f64,
    pub w_pos: f64,
    pub w_neg: f64,
    pub sweeps: usize,
    pub tol: f64,
}

impl Default for AlsConfig {
    fn default() -> Self {
        Self {
            k: 16,
            lambda: 0.01,
            w_pos: 20.0,
            w_neg: 1.0,
            sweeps: 10,
            tol: 1e-6,
        }
    }
}

impl AlsConfig {
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
        if self.lambda < 0.0 || self.sweeps == 0 {
            return Err(Error::Config(
                "lambda must be nonnegative and sweeps positive".into(),
            ));
        }
        Ok(())
    }
}

fn solve_err(e: Error) -> Error {
    match e {
        Error::Degenerate(msg) => Error::Degenerate(format!(
            "ALS normal matrix is singular ({msg}); set lambda > 0"
        )),
        other => other,
    }
}

/// Ridge solve for one user row against fixed item factors. `observed`
/// lists the items the row interacted with (weight `w_pos`, target 1);
/// everything else has weight `w_neg` and target 0.
fn solve_user_factor(
    q: &Array2<f64>,
    g_q: &Array2<f64>,
    observed: &[u32],
    cfg: (f64, f64, f64),
) -> Result<Array1<f64>> {
    let (w_pos, w_neg, lambda) = cfg;
    let k = q.ncols();
    let mut a = g_q * w_neg;
    for d in 0..k {
        a[[d, d]] += lambda;
    }
    let mut b = Array1::<f64>::zeros(k);
    for &i in observed {
        let qi = q.row(i as usize);
        for r in 0..k {
            b[r] += w_pos * qi[r];
            for c in 0..k {
                a[[r, c]] += (w_pos - w_neg) * qi[r] * qi[c];
            }
        }
    }
    crate::linalg::solve_spd(&a, &b).map_err(solve_err)
}

/// Ridge solve for one fake row with continuous targets `xhat_v`.
fn solve_fake_factor(
    q: &Array2<f64>,
    g_q: &Array2<f64>,
    xhat_v: ndarray::ArrayView1<f64>,
    cfg: (f64, f64, f64),
) -> Result<Array1<f64>> {
    let (w_pos, w_neg, lambda) = cfg;
    let k = q.ncols();
    let mut a = g_q * w_neg;
    for d in 0..k {
        a[[d, d]] += lambda;
    }
    let mut b = Array1::<f64>::zeros(k);
    for (i, &xv) in xhat_v.iter().enumerate() {
        let w = if xv >= 0.5 { w_pos } else { w_neg };
        let qi = q.row(i);
        for r in 0..k {
            b[r] += w * xv * qi[r];
            if w != w_neg {
                for c in 0..k {
                    a[[r, c]] += (w - w_neg) * qi[r] * qi[c];
                }
            }
        }
    }
    crate::linalg::solve_spd(&a, &b).map_err(solve_err)
}

/// Normal matrix and right-hand side for one item column. Exposed to the
/// attack path so [`als_adv_partial`] uses exactly the solves training used.
fn item_normal_system(
    p: &Array2<f64>,
    f: &Array2<f64>,
    g_pf: &Array2<f64>,
    users: &[u32],
    xhat_col: Option<ndarray::ArrayView1<f64>>,
    cfg: (f64, f64, f64),
) -> (Array2<f64>, Array1<f64>) {
    let (w_pos, w_neg, lambda) = cfg;
    let k = p.ncols();
    let mut a = g_pf * w_neg;
    for d in 0..k {
        a[[d, d]] += lambda;
    }
    let mut b = Array1::<f64>::zeros(k);
    for &u in users {
        let pu = p.row(u as usize);
        for r in 0..k {
            b[r] += w_pos * pu[r];
            for c in 0..k {
                a[[r, c]] += (w_pos - w_neg) * pu[r] * pu[c];
            }
        }
    }
    if let Some(col) = xhat_col {
        for (v, &xv) in col.iter().enumerate() {
            let w = if xv >= 0.5 { w_pos } else { w_neg };
            let fv = f.row(v);
            for r in 0..k {
                b[r] += w * xv * fv[r];
                if w != w_neg {
                    for c in 0..k {
                        a[[r, c]] += (w - w_neg) * fv[r] * fv[c];
                    }
                }
            }
        }
    }
    (a, b)
}

/// Train WRMF by alternating closed-form ridge solves over user, fake, and
/// item rows. Factors are Gaussian-initialized under the seed; sweeps stop
/// early once the relative loss change falls below `cfg.tol`.
pub fn wrmf_train_als(
    x: &InteractionMatrix,
    xhat: &Array2<f64>,
    cfg: AlsConfig,
    seed: u64,
) -> Result<WrmfParams> {
    cfg.validate()?;
    let (n_users, n_items) = (x.n_users(), x.n_items());
    let n_fake = xhat.nrows();
    if xhat.ncols() != n_items && n_fake > 0 {
        return Err(Error::Precondition(format!(
            "fake block has {} columns, dataset has {n_items} items",
            xhat.ncols()
        )));
    }
    let k = cfg.k;
    let wcfg = (cfg.w_pos, cfg.w_neg, cfg.lambda);

    let init = gaussian_init((n_users + n_fake + n_items) * k, seed);
    let s = init.as_slice().unwrap();
    let mut p = Array2::from_shape_vec((n_users, k), s[..n_users * k].to_vec()).unwrap();
    let mut f =
        Array2::from_shape_vec((n_fake, k), s[n_users * k..(n_users + n_fake) * k].to_vec())
            .unwrap();
    let mut q =
        Array2::from_shape_vec((n_items, k), s[(n_users + n_fake) * k..].to_vec()).unwrap();

    let mut item_users = vec![Vec::new(); n_items];
    for (u, row) in x.rows().iter().enumerate() {
        for &i in row {
            item_users[i as usize].push(u as u32);
        }
    }

    let mut params = WrmfParams {
        p: p.clone(),
        f: f.clone(),
        q: q.clone(),
        lambda: cfg.lambda,
        w_pos: cfg.w_pos,
        w_neg: cfg.w_neg,
    };
    let mut prev_loss = wrmf_loss(&params, x, xhat);

    for _ in 0..cfg.sweeps {
        let g_q = q.t().dot(&q);
        for (u, row) in x.rows().iter().enumerate() {
            let sol = solve_user_factor(&q, &g_q, row, wcfg)?;
            p.row_mut(u).assign(&sol);
        }
        for v in 0..n_fake {
            let sol = solve_fake_factor(&q, &g_q, xhat.row(v), wcfg)?;
            f.row_mut(v).assign(&sol);
        }
        let g_pf = p.t().dot(&p) + f.t().dot(&f);
        for i in 0..n_items {
            let col = if n_fake > 0 { Some(xhat.column(i)) } else { None };
            let (a, b) = item_normal_system(&p, &f, &g_pf, &item_users[i], col, wcfg);
            let sol = crate::linalg::solve_spd(&a, &b).map_err(solve_err)?;
            q.row_mut(i).assign(&sol);
        }

        params.p.assign(&p);
        params.f.assign(&f);
        params.q.assign(&q);
        let loss = wrmf_loss(&params, x, xhat);
        let rel = (prev_loss - loss).abs() / prev_loss.abs().max(1e-12);
        prev_loss = loss;
        if rel < cfg.tol {
            break;
        }
    }
    Ok(params)
}

/// Closed-form adversarial partial for ALS-trained WRMF.
///
/// With P and F frozen, column i of the normal-user predictions is
/// `r_i = P A_i^(-1) b_i` and only `b_i` depends (linearly) on `xhat`:
/// `d r_i / d xhat_vi = P A_i^(-1) (w_vi F_v)`. Contracting with the
/// prediction gradient `g_i = dL_adv/dR[:, i]` gives
/// `partial[v][i] = w_vi (F_v . z_i)` where `A_i z_i = P^T g_i`.
pub fn als_adv_partial(
    params: &WrmfParams,
    x: &InteractionMatrix,
    xhat: &Array2<f64>,
    g_r: &Array2<f64>,
) -> Result<Array2<f64>> {
    let (n_users, n_items) = (x.n_users(), x.n_items());
    let n_fake = xhat.nrows();
    if g_r.dim() != (n_users, n_items) {
        return Err(Error::Precondition(format!(
            "prediction gradient shape {:?} does not match ({n_users}, {n_items})",
            g_r.dim()
        )));
    }
    if n_fake == 0 {
        return Ok(Array2::zeros((0, n_items)));
    }
    let wcfg = (params.w_pos, params.w_neg, params.lambda);

    let mut item_users = vec![Vec::new(); n_items];
    for (u, row) in x.rows().iter().enumerate() {
        for &i in row {
            item_users[i as usize].push(u as u32);
        }
    }
    let g_pf = params.p.t().dot(&params.p) + params.f.t().dot(&params.f);
    // c_i = P^T g_i for all columns at once.
    let c = params.p.t().dot(g_r); // K x n_items

    let mut out = Array2::<f64>::zeros((n_fake, n_items));
    for i in 0..n_items {
        let (a, _) = item_normal_system(
            &params.p,
            &params.f,
            &g_pf,
            &item_users[i],
            Some(xhat.column(i)),
            wcfg,
        );
        let chol = cholesky(&a).ok_or_else(|| {
            Error::Degenerate("ALS normal matrix is singular; set lambda > 0".into())
        })?;
        let z = solve_with_cholesky(&chol, &c.column(i).to_owned());
        for v in 0..n_fake {
            let w = if xhat[[v, i]] >= 0.5 { params.w_pos } else { params.w_neg };
            out[[v, i]] = w * params.f.row(v).dot(&z);
        }
    }
    Ok(out)
}
