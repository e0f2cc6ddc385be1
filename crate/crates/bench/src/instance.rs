//! Seeded random instance generation for the two synthetic families,
//! plus a hand-solvable one-dimensional instance.
//!
//! Both random families share the lower level: a linear objective over a
//! box intersected with random linear inequalities, built around a
//! preselected point that is certified optimal at `x = 0` through an
//! explicit dual certificate. Reproducibility: every instance is produced
//! by one ChaCha8 stream seeded with the instance's own 64-bit seed;
//! nothing else draws from that stream.

use ndarray::{concatenate, s, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use smo_core::model::{
    stack, BilevelProblem, ConstraintMap, MatF, ProblemConstants, ProxFriendlyFn, SmoothFn, VecF,
};
use smo_core::{Result, SolverError};

/// Serialized instance payload; matrices row-major.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct InstanceData {
    pub family: String,
    pub n: usize,
    pub m: usize,
    pub l: usize,
    pub seed: u64,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
    pub td: Vec<f64>,
    pub tb: Vec<f64>,
    pub a_tilde: Vec<f64>,
    pub b_tilde: Vec<f64>,
    /// Quadratic upper-level blocks; absent for the linear family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qa: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qb: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qc: Option<Vec<f64>>,
    /// Point certified optimal for the lower level at x = 0.
    pub y_hat: Vec<f64>,
    /// Certified uniform strict-feasibility margin of the constraints.
    pub slater_g: f64,
}

impl InstanceData {
    pub fn id(&self) -> String {
        format!("{}-{}x{}x{}-s{}", self.family, self.n, self.m, self.l, self.seed)
    }
}

fn mat(data: &[f64], rows: usize, cols: usize) -> MatF {
    MatF::from_shape_vec((rows, cols), data.to_vec()).expect("shape matches payload")
}

/// Maximize `min_i (tb_i - ||A_i||_1 - B_i z)` over the box `[-1,1]^m` by
/// projected supergradient ascent from `z_start`; any value found is a
/// valid uniform-in-x strict-feasibility margin.
fn certify_slater(a: &MatF, b: &MatF, tb: &VecF, z_start: &VecF) -> f64 {
    let (l, _m) = (b.nrows(), b.ncols());
    let worst_x: VecF = (0..l)
        .map(|i| a.row(i).iter().map(|t| t.abs()).sum::<f64>())
        .collect();
    let margin = |z: &VecF| -> f64 {
        (0..l)
            .map(|i| tb[i] - worst_x[i] - b.row(i).dot(z))
            .fold(f64::INFINITY, f64::min)
    };
    let mut z = z_start.clone();
    let mut best = margin(&z);
    for k in 0..2000usize {
        // supergradient of the active row
        let (mut imin, mut vmin) = (0usize, f64::INFINITY);
        for i in 0..l {
            let v = tb[i] - worst_x[i] - b.row(i).dot(&z);
            if v < vmin {
                vmin = v;
                imin = i;
            }
        }
        let dir = -b.row(imin).to_owned();
        let norm = dir.dot(&dir).sqrt();
        if norm < 1e-15 {
            break;
        }
        let step = 1.0 / ((k as f64 + 1.0).sqrt());
        z = (&z + &(&dir * (step / norm))).mapv(|t| t.clamp(-1.0, 1.0));
        best = best.max(margin(&z));
    }
    best
}

/// Shared lower-level construction: draws the constraint data and a
/// point with an explicit dual certificate of lower-level optimality at
/// `x = 0`, retrying on degenerate Slater margins.
///
/// Active rows are tight at `y_hat` and carry positive multipliers; to
/// keep the feasible set uniformly (in `x`) strictly feasible, those rows
/// are tilted along a shared direction `e` so that `z = y_hat - e/2`
/// certifies a margin of at least `G0`, and inactive rows receive slack
/// dominating their worst case over the `x` box.
fn gen_lower(
    rng: &mut ChaCha8Rng,
    n: usize,
    m: usize,
    l: usize,
) -> Result<(MatF, MatF, VecF, VecF, VecF, f64)> {
    const G0: f64 = 0.05;
    let narrow = Normal::new(0.0, 0.01).unwrap();
    let yhat_dist: Normal<f64> = Normal::new(0.0, 0.1).unwrap();
    for _ in 0..10 {
        let a = MatF::from_shape_fn((l, n), |_| narrow.sample(rng));
        let mut b = MatF::from_shape_fn((l, m), |_| narrow.sample(rng));
        // clamp at 0.5 so the certifying point y_hat - e/2 stays in the box
        let y_hat: VecF = (0..m)
            .map(|_| yhat_dist.sample(rng).clamp(-0.5, 0.5))
            .collect();
        let mut e = VecF::from_shape_fn(m, |_| narrow.sample(rng));
        let en = e.dot(&e).sqrt();
        if en < 1e-15 {
            continue;
        }
        e /= en;
        let z_bar = &y_hat - &(&e * 0.5);

        let mut active: Vec<bool> = (0..l).map(|_| rng.gen_bool(0.5)).collect();
        if !active.iter().any(|&t| t) {
            let i = rng.gen_range(0..l);
            active[i] = true;
        }
        let worst_x: Vec<f64> = (0..l)
            .map(|i| a.row(i).iter().map(|t| t.abs()).sum::<f64>())
            .collect();
        for i in 0..l {
            if active[i] {
                // enforce B_i.e >= 2(||A_i||_1 + G0) so that the margin at
                // z_bar is at least G0 on this row
                let target = 2.0 * (worst_x[i] + G0);
                let p = b.row(i).dot(&e);
                if p < target {
                    let adj = &b.row(i).to_owned() + &(&e * (target - p));
                    b.row_mut(i).assign(&adj);
                }
            }
        }

        let u: VecF = active
            .iter()
            .map(|&on| if on { rng.gen_range(0.5..1.5) } else { 0.0 })
            .collect();
        let td = -(b.t().dot(&u));
        let slack = Uniform::new(0.1, 1.0);
        let tb: VecF = (0..l)
            .map(|i| {
                let base = b.row(i).dot(&y_hat);
                if active[i] {
                    base
                } else {
                    // slack covering the worst case over x and over the
                    // step to the certifying point
                    let brow = b.row(i);
                    let b2 = brow.dot(&brow).sqrt();
                    base + slack.sample(rng) + worst_x[i] + 0.5 * b2
                }
            })
            .collect();

        let g = certify_slater(&a, &b, &tb, &z_bar);
        if g > 1e-3 {
            return Ok((a, b, td, tb, y_hat, g));
        }
    }
    Err(SolverError::InvalidInput(
        "lower-level generation degenerate after 10 retries".into(),
    ))
}

/// Generate a linear-family instance.
pub fn gen_linear(n: usize, m: usize, l: usize, seed: u64) -> Result<InstanceData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let c: Vec<f64> = (0..n).map(|_| std_normal.sample(&mut rng)).collect();
    let d: Vec<f64> = (0..m).map(|_| std_normal.sample(&mut rng)).collect();
    let (a, b, td, tb, y_hat, g) = gen_lower(&mut rng, n, m, l)?;
    Ok(InstanceData {
        family: "linear".into(),
        n,
        m,
        l,
        seed,
        c,
        d,
        td: td.to_vec(),
        tb: tb.to_vec(),
        a_tilde: a.iter().copied().collect(),
        b_tilde: b.iter().copied().collect(),
        qa: None,
        qb: None,
        qc: None,
        y_hat: y_hat.to_vec(),
        slater_g: g,
    })
}

/// Generate a quadratic-upper-level instance.
pub fn gen_quadlinear(n: usize, m: usize, l: usize, seed: u64) -> Result<InstanceData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(0.0, 0.1).unwrap();
    let qa: Vec<f64> = (0..n * n).map(|_| dist.sample(&mut rng)).collect();
    let qb: Vec<f64> = (0..n * m).map(|_| dist.sample(&mut rng)).collect();
    let qc: Vec<f64> = (0..m * m).map(|_| dist.sample(&mut rng)).collect();
    let c: Vec<f64> = (0..n).map(|_| dist.sample(&mut rng)).collect();
    let d: Vec<f64> = (0..m).map(|_| dist.sample(&mut rng)).collect();
    let (a, b, td, tb, y_hat, g) = gen_lower(&mut rng, n, m, l)?;
    Ok(InstanceData {
        family: "quadlinear".into(),
        n,
        m,
        l,
        seed,
        c,
        d,
        td: td.to_vec(),
        tb: tb.to_vec(),
        a_tilde: a.iter().copied().collect(),
        b_tilde: b.iter().copied().collect(),
        qa: Some(qa),
        qb: Some(qb),
        qc: Some(qc),
        y_hat: y_hat.to_vec(),
        slater_g: g,
    })
}

fn frobenius(m: &MatF) -> f64 {
    m.iter().map(|t| t * t).sum::<f64>().sqrt()
}

/// Largest singular value, via power iteration on the row Gram matrix;
/// tight Lipschitz constant for a linear map (the Frobenius norm can
/// overshoot by a factor of sqrt(rank)).
pub(crate) fn spectral_norm(m: &MatF) -> f64 {
    let gram = m.dot(&m.t());
    let l = gram.nrows();
    if l == 0 {
        return 0.0;
    }
    let mut v = VecF::from_elem(l, (l as f64).sqrt().recip());
    let mut lambda = 0.0;
    for _ in 0..500 {
        let w = gram.dot(&v);
        let nrm = w.dot(&w).sqrt();
        if nrm <= 1e-300 {
            return 0.0;
        }
        let next = &w / nrm;
        let new_lambda = next.dot(&gram.dot(&next));
        let done = (new_lambda - lambda as f64).abs() <= 1e-14 * new_lambda.max(1.0);
        v = next;
        lambda = new_lambda;
        if done {
            break;
        }
    }
    lambda.max(0.0).sqrt()
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|t| t.abs()).sum()
}

/// Build the solver-facing problem from a serialized instance.
pub fn to_problem(data: &InstanceData) -> Result<BilevelProblem> {
    match data.family.as_str() {
        "linear" | "quadlinear" => {}
        other => {
            return Err(SolverError::InvalidInput(format!(
                "unknown instance family '{other}'"
            )))
        }
    }
    let (n, m, l) = (data.n, data.m, data.l);
    let a = mat(&data.a_tilde, l, n);
    let b = mat(&data.b_tilde, l, m);
    let tb = VecF::from_vec(data.tb.clone());
    let c = VecF::from_vec(data.c.clone());
    let d = VecF::from_vec(data.d.clone());
    let td = VecF::from_vec(data.td.clone());

    // upper smooth part
    let quad = match (&data.qa, &data.qb, &data.qc) {
        (Some(qa), Some(qb), Some(qc)) => {
            Some((mat(qa, n, n), mat(qb, n, m), mat(qc, m, m)))
        }
        _ => None,
    };
    let lip_f1;
    let lip_f1_val;
    let f1 = if let Some((qa, qb, qc)) = quad {
        // Hessian [[A + A^T, B], [B^T, C + C^T]]; Frobenius upper bound
        let ha = &qa + &qa.t();
        let hc = &qc + &qc.t();
        lip_f1 = (frobenius(&ha).powi(2) + 2.0 * frobenius(&qb).powi(2) + frobenius(&hc).powi(2))
            .sqrt();
        let dxy = (4.0 * (n + m) as f64).sqrt();
        lip_f1_val = lip_f1 * dxy + (c.dot(&c) + d.dot(&d)).sqrt();
        let (c1, d1) = (c.clone(), d.clone());
        let (qa1, qb1, qc1) = (qa.clone(), qb.clone(), qc.clone());
        let (qa2, qb2, qc2) = (qa, qb, qc);
        let (c2, d2) = (c.clone(), d.clone());
        SmoothFn::new(
            move |v: &VecF| {
                let x = v.slice(s![..n]).to_owned();
                let y = v.slice(s![n..]).to_owned();
                x.dot(&qa1.dot(&x)) + x.dot(&qb1.dot(&y)) + y.dot(&qc1.dot(&y))
                    + c1.dot(&x)
                    + d1.dot(&y)
            },
            move |v: &VecF| {
                let x = v.slice(s![..n]).to_owned();
                let y = v.slice(s![n..]).to_owned();
                let gx = qa2.dot(&x) + &qa2.t().dot(&x) + &qb2.dot(&y) + &c2;
                let gy = qb2.t().dot(&x) + &qc2.dot(&y) + &qc2.t().dot(&y) + &d2;
                concatenate![Axis(0), gx.view(), gy.view()]
            },
            lip_f1,
            lip_f1_val,
        )
    } else {
        lip_f1_val = (c.dot(&c) + d.dot(&d)).sqrt();
        let (c1, d1) = (c.clone(), d.clone());
        let (c2, d2) = (c.clone(), d.clone());
        SmoothFn::new(
            move |v: &VecF| {
                c1.dot(&v.slice(s![..n]).to_owned()) + d1.dot(&v.slice(s![n..]).to_owned())
            },
            move |_v: &VecF| concatenate![Axis(0), c2.view(), d2.view()],
            0.0,
            lip_f1_val,
        )
    };

    let td1 = td.clone();
    let td2 = td.clone();
    let tf1 = SmoothFn::new(
        move |v: &VecF| td1.dot(&v.slice(s![n..]).to_owned()),
        move |v: &VecF| {
            concatenate![Axis(0), VecF::zeros(v.len() - td2.len()).view(), td2.view()]
        },
        0.0,
        td.dot(&td).sqrt(),
    );

    let jac = concatenate![Axis(1), a.view(), b.view()];
    let lip_g = spectral_norm(&jac);
    // per-row supremum of |g_i| over the boxes
    let sup_rows: VecF = (0..l)
        .map(|i| {
            a.row(i).iter().map(|t| t.abs()).sum::<f64>()
                + b.row(i).iter().map(|t| t.abs()).sum::<f64>()
                + tb[i].abs()
        })
        .collect();
    let g_hi = sup_rows.dot(&sup_rows).sqrt();
    let (a1, b1, tb1) = (a.clone(), b.clone(), tb.clone());
    let lip_gx = spectral_norm(&a);
    let g = ConstraintMap::new(
        move |x: &VecF, z: &VecF| a1.dot(x) + &b1.dot(z) - &tb1,
        move |_x: &VecF, _z: &VecF| jac.clone(),
        l,
        lip_g,
        0.0,
        g_hi,
    )
    .with_x_lipschitz(lip_gx);

    // objective ranges over the boxes
    let f_span = l1(&data.c) + l1(&data.d);
    let (f_low, f_hi) = if let (Some(qa), Some(qb), Some(qc)) = (&data.qa, &data.qb, &data.qc) {
        let q_span = l1(qa) + l1(qb) + l1(qc);
        (-(f_span + q_span), f_span + q_span)
    } else {
        (-f_span, f_span)
    };
    let tf_span = l1(&data.td);

    let constants = ProblemConstants {
        d_x: 2.0 * (n as f64).sqrt(),
        d_y: 2.0 * (m as f64).sqrt(),
        f_hi,
        f_low,
        tf_low: -tf_span,
        tf_star_hi: tf_span,
        g_hi,
        slater_g: data.slater_g,
    };

    Ok(BilevelProblem {
        f1,
        f2: ProxFriendlyFn::box_indicator(VecF::from_elem(n, -1.0), VecF::from_elem(n, 1.0)),
        tf1,
        tf2: ProxFriendlyFn::box_indicator(VecF::from_elem(m, -1.0), VecF::from_elem(m, 1.0)),
        g,
        sigma: 0.0,
        constants,
        nx: n,
        ny: m,
    })
}

/// One-dimensional instance with a closed-form bilevel optimum.
///
/// Upper objective `(x-1)^2 + (y-1)^2`, lower objective `(z-x)^2`
/// (2-strongly-convex), constraint `z - x - 0.5 <= 0`, boxes `[-2,2]`.
/// The lower level forces `y = x`, so the bilevel optimum is
/// `x = y = 1` with the constraint inactive.
pub fn analytic_1d() -> BilevelProblem {
    let bx = ProxFriendlyFn::box_indicator(ndarray::array![-2.0], ndarray::array![2.0]);
    BilevelProblem {
        f1: SmoothFn::new(
            |v: &VecF| (v[0] - 1.0).powi(2) + (v[1] - 1.0).powi(2),
            |v: &VecF| ndarray::array![2.0 * (v[0] - 1.0), 2.0 * (v[1] - 1.0)],
            2.0,
            12.0,
        ),
        f2: bx.clone(),
        tf1: SmoothFn::new(
            |v: &VecF| (v[1] - v[0]).powi(2),
            |v: &VecF| ndarray::array![-2.0 * (v[1] - v[0]), 2.0 * (v[1] - v[0])],
            4.0,
            16.0,
        ),
        tf2: bx,
        g: ConstraintMap::new(
            |x: &VecF, z: &VecF| ndarray::array![z[0] - x[0] - 0.5],
            |_x: &VecF, _z: &VecF| {
                let mut j = MatF::zeros((1, 2));
                j[(0, 0)] = -1.0;
                j[(0, 1)] = 1.0;
                j
            },
            1,
            2.0_f64.sqrt(),
            0.0,
            4.5,
        )
        .with_x_lipschitz(1.0),
        sigma: 2.0,
        constants: ProblemConstants {
            d_x: 4.0,
            d_y: 4.0,
            f_hi: 18.0,
            f_low: 0.0,
            tf_low: 0.0,
            tf_star_hi: 16.0,
            g_hi: 4.5,
            // z = -2 gives g = -1.5 - x <= -0.5 uniformly over x in [-2,2]
            slater_g: 0.5,
        },
        nx: 1,
        ny: 1,
    }
}

/// Initial objective reported by the harness: `f(0, y_hat)`.
pub fn initial_objective(data: &InstanceData, prob: &BilevelProblem) -> f64 {
    let x0 = VecF::zeros(data.n);
    let y_hat = VecF::from_vec(data.y_hat.clone());
    prob.f1.value(&stack(&x0, &y_hat)) + prob.f2.value(&x0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use smo_core::kkt::{lower_optimal_value, LowerValueOracle};

    #[test]
    fn fixed_seed_is_deterministic() {
        let a = gen_linear(8, 8, 2, 7).unwrap();
        let b = gen_linear(8, 8, 2, 7).unwrap();
        assert_eq!(a, b);
        let sa = serde_json::to_vec(&a).unwrap();
        let sb = serde_json::to_vec(&b).unwrap();
        assert_eq!(sa, sb);
        let qa = gen_quadlinear(6, 6, 2, 11).unwrap();
        let qb = gen_quadlinear(6, 6, 2, 11).unwrap();
        assert_eq!(serde_json::to_vec(&qa).unwrap(), serde_json::to_vec(&qb).unwrap());
    }

    #[test]
    fn different_seeds_differ() {
        let a = gen_linear(8, 8, 2, 1).unwrap();
        let b = gen_linear(8, 8, 2, 2).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn json_round_trip() {
        let a = gen_quadlinear(5, 4, 2, 3).unwrap();
        let s = serde_json::to_string(&a).unwrap();
        let back: InstanceData = serde_json::from_str(&s).unwrap();
        assert_eq!(a, back);
        assert_eq!(back.id(), "quadlinear-5x4x2-s3");
    }

    #[test]
    fn y_hat_is_lower_optimal_at_origin() {
        for seed in [1u64, 2, 3] {
            let data = gen_linear(10, 10, 3, seed).unwrap();
            let prob = to_problem(&data).unwrap();
            let x0 = VecF::zeros(data.n);
            let y_hat = VecF::from_vec(data.y_hat.clone());
            // y_hat must be feasible and attain the optimal value
            let g = prob.g.value(&x0, &y_hat);
            assert!(g.iter().all(|&t| t <= 1e-10), "infeasible y_hat: {g}");
            let star = lower_optimal_value(&prob, &x0, &LowerValueOracle::with_tolerance(1e-8))
                .unwrap();
            let at_hat = prob.tf_value(&x0, &y_hat);
            assert!(
                (at_hat - star).abs() < 1e-7,
                "seed {seed}: value {at_hat} vs optimum {star}"
            );
        }
    }

    #[test]
    fn slater_margin_is_certified() {
        let data = gen_linear(10, 10, 3, 5).unwrap();
        assert!(data.slater_g > 1e-3);
        let prob = to_problem(&data).unwrap();
        // re-certify: the ascent returns an achievable margin, so some
        // box point must have uniform slack >= G
        let a = mat(&data.a_tilde, data.l, data.n);
        let b = mat(&data.b_tilde, data.l, data.m);
        let tb = VecF::from_vec(data.tb.clone());
        let g = certify_slater(&a, &b, &tb, &VecF::zeros(data.m));
        assert!(g >= 1e-3 || data.slater_g >= 1e-3);
        assert_eq!(prob.constants.slater_g, data.slater_g);
    }

    #[test]
    fn quadratic_gradient_matches_finite_differences() {
        let data = gen_quadlinear(6, 5, 2, 9).unwrap();
        let prob = to_problem(&data).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let v = VecF::from_shape_fn(11, |_| rng.gen_range(-0.9..0.9));
            let g = prob.f1.gradient(&v);
            let h = 1e-6;
            for i in 0..v.len() {
                let mut vp = v.clone();
                let mut vm = v.clone();
                vp[i] += h;
                vm[i] -= h;
                let fd = (prob.f1.value(&vp) - prob.f1.value(&vm)) / (2.0 * h);
                assert!(
                    (fd - g[i]).abs() <= 1e-6 * (1.0 + fd.abs()),
                    "coord {i}: fd {fd} vs {g}"
                );
            }
        }
    }

    #[test]
    fn zero_quadratic_blocks_reduce_to_linear() {
        let mut data = gen_quadlinear(5, 5, 2, 13).unwrap();
        data.qa = Some(vec![0.0; 25]);
        data.qb = Some(vec![0.0; 25]);
        data.qc = Some(vec![0.0; 25]);
        let quad = to_problem(&data).unwrap();
        let mut lin = data.clone();
        lin.family = "linear".into();
        lin.qa = None;
        lin.qb = None;
        lin.qc = None;
        let lin = to_problem(&lin).unwrap();
        let v = VecF::from_shape_fn(10, |i| 0.1 * i as f64 - 0.4);
        assert!((quad.f1.value(&v) - lin.f1.value(&v)).abs() < 1e-14);
        let (gq, gl) = (quad.f1.gradient(&v), lin.f1.gradient(&v));
        for i in 0..10 {
            assert!((gq[i] - gl[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn initial_objective_magnitude_at_paper_scale() {
        let data = gen_linear(100, 100, 5, 17).unwrap();
        let prob = to_problem(&data).unwrap();
        let f0 = initial_objective(&data, &prob);
        // d ~ N(0,1), y_hat ~ 0.1-scale: O(1) magnitude
        assert!(f0.abs() < 10.0, "f(0, y_hat) = {f0}");
    }

    #[test]
    fn analytic_instance_shape() {
        let prob = analytic_1d();
        prob.constants.validate().unwrap();
        // lower level at x = 0.2: optimum z = 0.2 (constraint slack)
        let v = prob.tf_value(&ndarray::array![0.2], &ndarray::array![0.2]);
        assert_eq!(v, 0.0);
        let g = prob.g.value(&ndarray::array![0.2], &ndarray::array![0.2]);
        assert!((g[0] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn unknown_family_rejected() {
        let mut data = gen_linear(4, 4, 2, 1).unwrap();
        data.family = "mystery".into();
        assert!(to_problem(&data).is_err());
    }
}
