//! Single-loop penalty baseline.
//!
//! Instead of the outer multiplier loop, this method fixes the penalty
//! parameters at their accuracy-matched terminal values and performs one
//! saddle-point solve of
//!
//! ```text
//! min_{x,y} max_z  f(x,y) + rho [ tf(x,y) + mu ||[g(x,y)]_+||^2
//!                               - tf(x,z) - mu ||[g(x,z)]_+||^2 ]
//! ```
//!
//! with `rho = 1/eps` and `mu = eps^{-2}/2`, so the effective quadratic
//! constraint penalty `rho*mu` matches the terminal penalty of the
//! multiplier method. The comparison metric is oracle-call counts for the
//! same certificate tolerance.

use ndarray::s;

use smo_core::adaptive::solve_saddle_adaptive;
use smo_core::minimax::{solve_ncc, MinimaxProblem, PdCertificate, SaddleCaps, SaddleStats};
use smo_core::model::{positive_part, stack, BilevelProblem, ProxFriendlyFn, VecF};
use smo_core::smo::OracleCounts;
use smo_core::{Result, SolverError};

/// Result of the one-shot penalty solve.
pub struct BaselineOutput {
    pub x: VecF,
    pub y: VecF,
    pub z: VecF,
    pub cert: PdCertificate,
    pub counts: OracleCounts,
    pub stats: SaddleStats,
    pub rho: f64,
    pub mu: f64,
}

/// Gradient Lipschitz constant of the penalty coupling over the domains.
pub fn lipschitz_penalty(prob: &BilevelProblem, rho: f64, mu: f64) -> f64 {
    let lg = prob.g.lipschitz_val;
    prob.f1.lipschitz_grad
        + 2.0 * rho * prob.tf1.lipschitz_grad
        + 4.0 * rho * mu * (lg * lg + prob.constants.g_hi * prob.g.lipschitz_grad)
}

/// Weak-convexity modulus of the penalty coupling in the min block; the
/// y-side penalty is convex up to constraint curvature, so only the
/// negated z-side penalty contributes through the x-block Jacobian.
pub fn weak_convexity_penalty(prob: &BilevelProblem, rho: f64, mu: f64) -> f64 {
    let lgx = prob.g.lipschitz_val_x;
    let wc = prob.f1.lipschitz_grad
        + 2.0 * rho * prob.tf1.lipschitz_grad
        + 2.0 * rho * mu * (lgx * lgx + 2.0 * prob.constants.g_hi * prob.g.lipschitz_grad);
    wc.min(lipschitz_penalty(prob, rho, mu))
}

/// Run the penalty baseline to a `eps` primal-dual stationarity
/// certificate of the fixed penalty saddle problem.
pub fn penalty_baseline(
    prob: &BilevelProblem,
    eps: f64,
    x0: &VecF,
    y0: &VecF,
    z0: Option<&VecF>,
    caps: &SaddleCaps,
) -> Result<BaselineOutput> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(SolverError::InvalidInput("eps must lie in (0,1)".into()));
    }
    let rho = 1.0 / eps;
    let mu = 0.5 / (eps * eps);
    let nx = prob.nx;

    let h_value = move |u: &VecF, z: &VecF| {
        let x = u.slice(s![..nx]).to_owned();
        let y = u.slice(s![nx..]).to_owned();
        let pen = |p: &VecF| positive_part(&prob.g.value(&x, p)).mapv(|t| t * t).sum();
        prob.f1.value(u)
            + rho * (prob.tf1.value(u) + mu * pen(&y))
            - rho * (prob.tf1.value(&stack(&x, z)) + mu * pen(z))
    };
    let h_grad = move |u: &VecF, z: &VecF| {
        let x = u.slice(s![..nx]).to_owned();
        let y = u.slice(s![nx..]).to_owned();
        let py = positive_part(&prob.g.value(&x, &y)) * (2.0 * rho * mu);
        let pz = positive_part(&prob.g.value(&x, z)) * (2.0 * rho * mu);
        let gf1 = prob.f1.gradient(u);
        let gt_y = prob.tf1.gradient(u);
        let gt_z = prob.tf1.gradient(&stack(&x, z));
        let gx = gf1.slice(s![..nx]).to_owned()
            + &(gt_y.slice(s![..nx]).to_owned() * rho)
            + &prob.g.jt_x_mul(&x, &y, &py)
            - &(gt_z.slice(s![..nx]).to_owned() * rho)
            - &prob.g.jt_x_mul(&x, z, &pz);
        let gy = gf1.slice(s![nx..]).to_owned()
            + &(gt_y.slice(s![nx..]).to_owned() * rho)
            + &prob.g.jt_z_mul(&x, &y, &py);
        let gz = -(gt_z.slice(s![nx..]).to_owned() * rho) - &prob.g.jt_z_mul(&x, z, &pz);
        (stack(&gx, &gy), gz)
    };

    let p = ProxFriendlyFn::separable_sum(&prob.f2, &ProxFriendlyFn::scaled(&prob.tf2, rho), nx);
    let q = ProxFriendlyFn::scaled(&prob.tf2, rho);
    let mm = MinimaxProblem {
        h_value: Box::new(h_value),
        h_grad: Box::new(h_grad),
        lip_grad: lipschitz_penalty(prob, rho, mu),
        sigma_y: rho * prob.sigma,
        weak_convexity_x: weak_convexity_penalty(prob, rho, mu),
        p: &p,
        q: &q,
    };
    let eps_hat0 = if prob.sigma > 0.0 {
        eps / 2.0
    } else {
        // the effective quadratic penalty weight is 2*rho*mu
        eps / (2.0 * (2.0 * rho * mu).sqrt())
    };
    let z_start = z0.cloned().unwrap_or_else(|| y0.clone());
    let start = stack(x0, y0);
    // same certified fast path as the multiplier method, for a fair
    // oracle-count comparison
    let out = match solve_saddle_adaptive(&mm, eps, &start, &z_start, caps) {
        Ok(out) => out,
        Err(SolverError::NonConvergence { .. }) => {
            solve_ncc(&mm, eps, eps_hat0, &start, &z_start, caps)?
        }
        Err(e) => return Err(e),
    };
    let counts = OracleCounts::from_saddle(&out.trace.stats);
    Ok(BaselineOutput {
        x: out.cert.x.slice(s![..nx]).to_owned(),
        y: out.cert.x.slice(s![nx..]).to_owned(),
        z: out.cert.y.clone(),
        cert: out.cert,
        counts,
        stats: out.trace.stats,
        rho,
        mu,
    })
}
