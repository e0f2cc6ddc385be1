//! Bilevel hyperparameter tuning for a soft-margin linear classifier.
//!
//! Upper variable `x = c in [0,10]^n` weights the per-sample slack
//! penalties; lower variable `z = (w, b, xi)` trains the classifier on
//! the training split under margin constraints
//! `1 - xi_i - yhat_i (w^T xhat_i + b) <= 0`, with `(w, b)` boxed in
//! `[-1,1]^{q+1}` and `xi` in `[0,20]^n`. The upper objective is the
//! mean binomial-deviance loss on the validation split.

use ndarray::s;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::libsvm::Dataset;
use smo_core::apg::{apg_convex, CompositeConvexProblem};
use smo_core::model::{
    BilevelProblem, ConstraintMap, MatF, ProblemConstants, ProxFriendlyFn, SmoothFn, VecF,
};
use smo_core::{Result, SolverError};

/// Numerically stable `log(1 + exp(-u v))`.
pub fn deviance(u: f64, v: f64) -> f64 {
    let t = -u * v;
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

/// Derivative of the deviance in its second argument: `-u / (1 + e^{uv})`.
pub fn deviance_dv(u: f64, v: f64) -> f64 {
    let t = u * v;
    if t > 0.0 {
        -u * (-t).exp() / (1.0 + (-t).exp())
    } else {
        -u / (1.0 + t.exp())
    }
}

/// Train/validation split of a dataset plus cached geometry.
#[derive(Clone, Debug)]
pub struct SvmInstance {
    pub train: Dataset,
    pub val: Dataset,
}

impl SvmInstance {
    pub fn n_train(&self) -> usize {
        self.train.len()
    }

    pub fn n_features(&self) -> usize {
        self.train.n_features
    }

    /// Dimension of the lower variable `(w, b, xi)`.
    pub fn ny(&self) -> usize {
        self.n_features() + 1 + self.n_train()
    }
}

/// Randomly reserve one fourth of the samples for validation.
pub fn split(data: &Dataset, seed: u64) -> Result<SvmInstance> {
    let total = data.len();
    let n_val = total / 4;
    if n_val == 0 || total - n_val == 0 {
        return Err(SolverError::InvalidInput(
            "dataset too small to split".into(),
        ));
    }
    let mut idx: Vec<usize> = (0..total).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (val_idx, train_idx) = idx.split_at(n_val);
    let pick = |ids: &[usize]| Dataset {
        features: ids.iter().map(|&i| data.features[i].clone()).collect(),
        labels: ids.iter().map(|&i| data.labels[i]).collect(),
        n_features: data.n_features,
    };
    Ok(SvmInstance {
        train: pick(train_idx),
        val: pick(val_idx),
    })
}

/// Synthetic linearly-separable-with-noise dataset: features scaled so
/// sample norms are O(1), labels from a random hyperplane with 5% flips.
pub fn synthetic(n_samples: usize, q: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal: Normal<f64> = Normal::new(0.0, 1.0).unwrap();
    let mut w_star: VecF = (0..q).map(|_| normal.sample(&mut rng)).collect();
    let nrm = w_star.dot(&w_star).sqrt().max(1e-12);
    w_star /= nrm;
    let mut features = Vec::with_capacity(n_samples);
    let mut labels = Vec::with_capacity(n_samples);
    let scale = 1.0 / (q as f64).sqrt();
    for _ in 0..n_samples {
        let row: Vec<f64> = (0..q).map(|_| normal.sample(&mut rng) * scale).collect();
        let margin: f64 = row.iter().zip(w_star.iter()).map(|(a, b)| a * b).sum();
        let mut label = if margin >= 0.0 { 1.0 } else { -1.0 };
        if rng.gen_bool(0.05) {
            label = -label;
        }
        features.push(row);
        labels.push(label);
    }
    Dataset {
        features,
        labels,
        n_features: q,
    }
}

fn row_norms_sq(d: &Dataset) -> Vec<f64> {
    d.features
        .iter()
        .map(|r| r.iter().map(|t| t * t).sum::<f64>())
        .collect()
}

fn row_l1(d: &Dataset) -> Vec<f64> {
    d.features
        .iter()
        .map(|r| r.iter().map(|t| t.abs()).sum::<f64>())
        .collect()
}

/// Margin `w^T xhat_i + b` for a stored sample.
fn margin(d: &Dataset, i: usize, w: &[f64], b: f64) -> f64 {
    d.features[i]
        .iter()
        .zip(w.iter())
        .map(|(a, t)| a * t)
        .sum::<f64>()
        + b
}

/// Build the bilevel problem for a split instance.
pub fn to_problem(inst: &SvmInstance) -> BilevelProblem {
    let n = inst.n_train();
    let m = inst.val.len();
    let q = inst.n_features();
    let ny = inst.ny();

    let s_train = row_norms_sq(&inst.train);
    let s_val = row_norms_sq(&inst.val);
    let l1_train = row_l1(&inst.train);
    let l1_val = row_l1(&inst.val);

    // upper objective: mean validation deviance in (w, b)
    let (vt, vt2) = (inst.val.clone(), inst.val.clone());
    let lip_f1 = s_val.iter().map(|t| (t + 1.0) / (4.0 * m as f64)).sum::<f64>();
    let lip_f1_val = s_val
        .iter()
        .map(|t| (t + 1.0).sqrt() / m as f64)
        .sum::<f64>();
    let f1 = SmoothFn::new(
        move |v: &VecF| {
            let w = v.slice(s![n..n + q]).to_owned();
            let b = v[n + q];
            (0..vt.len())
                .map(|i| deviance(vt.labels[i], margin(&vt, i, w.as_slice().unwrap(), b)))
                .sum::<f64>()
                / vt.len() as f64
        },
        move |v: &VecF| {
            let w = v.slice(s![n..n + q]).to_owned();
            let b = v[n + q];
            let mut g = VecF::zeros(v.len());
            for i in 0..vt2.len() {
                let d = deviance_dv(vt2.labels[i], margin(&vt2, i, w.as_slice().unwrap(), b))
                    / vt2.len() as f64;
                for j in 0..q {
                    g[n + j] += d * vt2.features[i][j];
                }
                g[n + q] += d;
            }
            g
        },
        lip_f1,
        lip_f1_val,
    );

    // lower smooth part: training deviance plus the bilinear slack cost
    let (tr, tr2) = (inst.train.clone(), inst.train.clone());
    let lip_tf1 = s_train.iter().map(|t| (t + 1.0) / 4.0).sum::<f64>() + 1.0;
    let lip_tf1_val = s_train.iter().map(|t| (t + 1.0).sqrt()).sum::<f64>()
        + 20.0 * (n as f64).sqrt()
        + 10.0 * (n as f64).sqrt();
    let tf1 = SmoothFn::new(
        move |v: &VecF| {
            let c = v.slice(s![..n]);
            let w = v.slice(s![n..n + q]).to_owned();
            let b = v[n + q];
            let xi = v.slice(s![n + q + 1..]);
            let loss: f64 = (0..tr.len())
                .map(|i| deviance(tr.labels[i], margin(&tr, i, w.as_slice().unwrap(), b)))
                .sum();
            loss + c.dot(&xi)
        },
        move |v: &VecF| {
            let c = v.slice(s![..n]).to_owned();
            let w = v.slice(s![n..n + q]).to_owned();
            let b = v[n + q];
            let xi = v.slice(s![n + q + 1..]).to_owned();
            let mut g = VecF::zeros(v.len());
            g.slice_mut(s![..n]).assign(&xi);
            for i in 0..tr2.len() {
                let d = deviance_dv(tr2.labels[i], margin(&tr2, i, w.as_slice().unwrap(), b));
                for j in 0..q {
                    g[n + j] += d * tr2.features[i][j];
                }
                g[n + q] += d;
            }
            g.slice_mut(s![n + q + 1..]).assign(&c);
            g
        },
        lip_tf1,
        lip_tf1_val,
    );

    // margin constraints: 1 - xi_i - yhat_i (w^T xhat_i + b) <= 0
    let tr3 = inst.train.clone();
    let mut jac = MatF::zeros((n, n + ny));
    for i in 0..n {
        let u = inst.train.labels[i];
        for j in 0..q {
            jac[(i, n + j)] = -u * inst.train.features[i][j];
        }
        jac[(i, n + q)] = -u;
        jac[(i, n + q + 1 + i)] = -1.0;
    }
    let lip_g = crate::instance::spectral_norm(&jac);
    let g_sup: f64 = l1_train
        .iter()
        .map(|t| (22.0 + t).powi(2))
        .sum::<f64>()
        .sqrt();
    let g = ConstraintMap::new(
        move |_x: &VecF, z: &VecF| {
            let w = z.slice(s![..q]).to_owned();
            let b = z[q];
            (0..tr3.len())
                .map(|i| {
                    1.0 - z[q + 1 + i]
                        - tr3.labels[i] * margin(&tr3, i, w.as_slice().unwrap(), b)
                })
                .collect()
        },
        move |_x: &VecF, _z: &VecF| jac.clone(),
        n,
        lip_g,
        0.0,
        g_sup,
    )
    // the margin constraints do not involve the upper-level variables
    .with_x_lipschitz(0.0);

    let f_hi = l1_val
        .iter()
        .map(|t| 2.0_f64.ln() + t + 1.0)
        .sum::<f64>()
        / m as f64;
    let tf_star_hi = n as f64 * 2.0_f64.ln() + 20.0 * n as f64;
    let d_y = (4.0 * (q + 1) as f64 + 400.0 * n as f64).sqrt();

    // box for (w, b, xi)
    let mut lo = VecF::from_elem(ny, -1.0);
    let mut hi = VecF::from_elem(ny, 1.0);
    for i in 0..n {
        lo[q + 1 + i] = 0.0;
        hi[q + 1 + i] = 20.0;
    }

    BilevelProblem {
        f1,
        f2: ProxFriendlyFn::box_indicator(VecF::zeros(n), VecF::from_elem(n, 10.0)),
        tf1,
        tf2: ProxFriendlyFn::box_indicator(lo, hi),
        g,
        sigma: 0.0,
        constants: ProblemConstants {
            d_x: 10.0 * (n as f64).sqrt(),
            d_y,
            f_hi,
            f_low: 0.0,
            tf_low: 0.0,
            // feasible lower point (w, b) = 0, xi = 2 has cost
            // n ln 2 + c^T xi <= n ln 2 + 20 n
            tf_star_hi,
            g_hi: g_sup,
            // same point gives every constraint value exactly -1
            slater_g: 1.0,
        },
        nx: n,
        ny,
    }
}

/// Mean validation deviance of a trained `(w, b)`.
pub fn validation_loss(inst: &SvmInstance, w: &[f64], b: f64) -> f64 {
    let mv = &inst.val;
    (0..mv.len())
        .map(|i| deviance(mv.labels[i], margin(mv, i, w, b)))
        .sum::<f64>()
        / mv.len() as f64
}

/// Fraction of validation samples classified correctly.
pub fn validation_accuracy(inst: &SvmInstance, w: &[f64], b: f64) -> f64 {
    let mv = &inst.val;
    let hits = (0..mv.len())
        .filter(|&i| mv.labels[i] * margin(mv, i, w, b) > 0.0)
        .count();
    hits as f64 / mv.len() as f64
}

/// Minimize the training deviance in `(w, b)` over its box to tolerance
/// `tol`. At `c = 0` the slack cost vanishes and `xi = 20` keeps every
/// margin constraint feasible, so this is the lower-level optimum.
pub fn train_unweighted(inst: &SvmInstance, tol: f64) -> Result<(VecF, f64)> {
    let q = inst.n_features();
    let tr = inst.train.clone();
    let tr2 = inst.train.clone();
    let s_train = row_norms_sq(&inst.train);
    let lip = (s_train.iter().map(|t| t + 1.0).sum::<f64>() / 4.0).max(1e-12);
    let tr_val = inst.train.clone();
    let reg = ProxFriendlyFn::box_indicator(
        VecF::from_elem(q + 1, -1.0),
        VecF::from_elem(q + 1, 1.0),
    );
    let spec = CompositeConvexProblem {
        phi: Box::new(move |v: &VecF| {
            let w = v.slice(s![..q]).to_owned();
            let b = v[q];
            (0..tr_val.len())
                .map(|i| deviance(tr_val.labels[i], margin(&tr_val, i, w.as_slice().unwrap(), b)))
                .sum::<f64>()
        }),
        grad: Box::new(move |v: &VecF| {
            let w = v.slice(s![..q]).to_owned();
            let b = v[q];
            let mut g = VecF::zeros(q + 1);
            for i in 0..tr.len() {
                let d = deviance_dv(tr.labels[i], margin(&tr, i, w.as_slice().unwrap(), b));
                for j in 0..q {
                    g[j] += d * tr.features[i][j];
                }
                g[q] += d;
            }
            g
        }),
        lip_grad: lip,
        sigma: 0.0,
        reg: &reg,
    };
    let out = apg_convex(&spec, tol, &VecF::zeros(q + 1))?;
    let w = out.point.slice(s![..q]).to_owned();
    let b = out.point[q];
    let loss: f64 = (0..tr2.len())
        .map(|i| deviance(tr2.labels[i], margin(&tr2, i, w.as_slice().unwrap(), b)))
        .sum();
    Ok((out.point, loss))
}

/// Initial objective `f(0, y_0^*)` with `y_0^*` an accurate lower-level
/// optimum at `x = 0`.
pub fn initial_objective(inst: &SvmInstance, tol: f64) -> Result<f64> {
    let (wb, _) = train_unweighted(inst, tol)?;
    let q = inst.n_features();
    Ok(validation_loss(inst, &wb.as_slice().unwrap()[..q], wb[q]))
}
