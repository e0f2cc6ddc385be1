//! The outer driver: a sequential minimax optimization method for the
//! constrained bilevel problem.
//!
//! Each outer iteration k (i) warm-starts the lower-level augmented
//! Lagrangian to gap `eps_k`, (ii) solves the penalized minimax
//! subproblem to an `eps_k` primal-dual stationarity certificate, and
//! (iii) updates the multipliers; the schedules are `eps_k = eps0 tau^k`,
//! `rho_k = 1/eps_k`, `mu_k = 1/eps_k^3`. Alongside the iterates it
//! evaluates the closed-form complexity diagnostics and the
//! multiplier-norm invariant.

use ndarray::s;

use crate::adaptive::solve_saddle_adaptive;
use crate::apg::{apg_convex, apg_strongly_convex, CompositeConvexProblem};
use crate::error::{Result, SolverError};
use crate::minimax::{MinimaxProblem, PdCertificate, SaddleCaps, SaddleStats, solve_ncc};
use crate::model::{
    positive_part, stack, update_multiplier, BilevelProblem, Multipliers, ProxFriendlyFn, VecF,
};

/// Configuration of one driver run.
#[derive(Clone)]
pub struct SmoConfig {
    /// Final tolerance, in (0, 1).
    pub eps: f64,
    /// Schedule ratio, in (0, 1).
    pub tau: f64,
    /// Initial tolerance, in (tau * eps, 1].
    pub eps0: f64,
    /// Initial multipliers; zero when absent.
    pub lambda0: Option<Multipliers>,
    pub x0: VecF,
    pub y0: VecF,
    /// Defaults to `y0` when absent.
    pub z0: Option<VecF>,
    pub caps: SaddleCaps,
}

impl SmoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < 1.0 && self.tau > 0.0 && self.tau < 1.0) {
            return Err(SolverError::InvalidInput(
                "need eps and tau in (0, 1)".into(),
            ));
        }
        if !(self.eps0 > self.tau * self.eps && self.eps0 <= 1.0) {
            return Err(SolverError::InvalidInput(
                "need eps0 in (tau * eps, 1]".into(),
            ));
        }
        Ok(())
    }

    /// Index of the last outer iteration: smallest nonnegative K with
    /// `eps0 tau^K <= eps`.
    pub fn k_outer(&self) -> usize {
        (((self.eps.ln() - self.eps0.ln()) / self.tau.ln()).ceil()).max(0.0) as usize
    }
}

/// Tolerance/penalty triple of outer iteration `k`.
pub fn schedule(config: &SmoConfig, k: usize) -> (f64, f64, f64) {
    let eps_k = config.eps0 * config.tau.powi(k as i32);
    (eps_k, eps_k.recip(), eps_k.powi(3).recip())
}

/// Five-way oracle-call tallies in the units of the complexity results.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OracleCounts {
    pub grad_f1: usize,
    pub grad_tf1: usize,
    pub grad_g: usize,
    pub prox_f2: usize,
    pub prox_tf2: usize,
}

impl OracleCounts {
    /// One saddle-coupling gradient costs one upper gradient and two
    /// lower/constraint gradients (the y- and z-copies); one p-prox is a
    /// joint (f2, tf2) prox, one q-prox a tf2 prox.
    pub fn from_saddle(stats: &SaddleStats) -> Self {
        Self {
            grad_f1: stats.grad_calls,
            grad_tf1: 2 * stats.grad_calls,
            grad_g: 2 * stats.grad_calls,
            prox_f2: stats.prox_p_calls,
            prox_tf2: stats.prox_p_calls + stats.prox_q_calls,
        }
    }

    /// Lower-level solves touch one lower gradient and one constraint
    /// Jacobian per smooth-gradient call, and only the tf2 prox.
    pub fn from_lower(grad_calls: usize, prox_calls: usize) -> Self {
        Self {
            grad_f1: 0,
            grad_tf1: grad_calls,
            grad_g: grad_calls,
            prox_f2: 0,
            prox_tf2: prox_calls,
        }
    }

    pub fn absorb(&mut self, other: &OracleCounts) {
        self.grad_f1 += other.grad_f1;
        self.grad_tf1 += other.grad_tf1;
        self.grad_g += other.grad_g;
        self.prox_f2 += other.prox_f2;
        self.prox_tf2 += other.prox_tf2;
    }

    pub fn total(&self) -> usize {
        self.grad_f1 + self.grad_tf1 + self.grad_g + self.prox_f2 + self.prox_tf2
    }
}

/// Per-iteration record of the outer loop.
#[derive(Clone, Debug)]
pub struct SmoIteration {
    pub k: usize,
    pub eps_k: f64,
    pub rho_k: f64,
    pub mu_k: f64,
    /// Multiplier entering iteration k (the one the subproblem of this
    /// iteration was built with; the post-solve update is in `k + 1`).
    pub lambda: Multipliers,
    /// Norm of the multiplier entering iteration k.
    pub lambda_norm: f64,
    /// Whether `||lambda^k||^2 <= 2 rho_k mu_k vartheta` held.
    pub lambda_bound_ok: bool,
    pub warm_start_gap: f64,
    pub certificate_residual: f64,
    pub counts: OracleCounts,
}

/// Full run trace plus final iterates.
#[derive(Clone, Debug)]
pub struct SmoTrace {
    pub iterations: Vec<SmoIteration>,
    pub totals: OracleCounts,
    pub x: VecF,
    pub y: VecF,
    pub z: VecF,
    pub lambda: Multipliers,
}

/// Complexity-diagnostic constants; the branch matches the convexity
/// modulus of the lower smooth part.
#[derive(Clone, Debug)]
pub struct TheoremBounds {
    pub k_outer: usize,
    pub vartheta: f64,
    pub l_big: f64,
    pub l_tilde: f64,
    /// `eps^-2 >= 8 tau^-3 G^-2 vartheta`; guarantees lapse when false.
    pub hypothesis_ok: bool,
    pub alpha: f64,
    pub delta: f64,
    pub m_bound: f64,
    pub t_bound: f64,
    pub n_bound: f64,
    /// True when the strongly-convex branch formulas were used.
    pub strongly_convex_branch: bool,
}

/// Aggregate `vartheta` bounding the multiplier growth.
pub fn vartheta(lam0_norm: f64, prob: &BilevelProblem, config: &SmoConfig) -> f64 {
    let c = &prob.constants;
    0.5 * lam0_norm * lam0_norm
        + (c.tf_star_hi - c.tf_low) / (1.0 - config.tau.powi(4))
        + c.d_y * config.eps0 / (1.0 - config.tau.powi(3))
}

/// Evaluate every closed-form constant of the complexity statements.
///
/// The unknown optimal value entering the M-type constants is replaced
/// by its upper bound `f_hi`; the result stays a valid upper bound.
pub fn theorem_bounds(prob: &BilevelProblem, config: &SmoConfig) -> TheoremBounds {
    let c = &prob.constants;
    let (dx, dy) = (c.d_x, c.d_y);
    let (tau, eps, eps0) = (config.tau, config.eps, config.eps0);
    let lam0 = config
        .lambda0
        .as_ref()
        .map(|l| l.norm())
        .unwrap_or(0.0);
    let th = vartheta(lam0, prob, config);
    let lg = prob.g.lipschitz_val;
    let lgg = prob.g.lipschitz_grad;
    let ghi = c.g_hi;
    let l_big = prob.f1.lipschitz_grad
        + 2.0 * prob.tf1.lipschitz_grad
        + 2.0 * lg * lg
        + 2.0 * ghi * lgg
        + 2.0 * (2.0 * th).sqrt() * lgg;
    let l_tilde = prob.tf1.lipschitz_grad
        + lg * lg
        + ghi * lgg
        + (2.0 * th).sqrt() * lgg;
    let k_outer = config.k_outer();
    let kf = k_outer as f64;
    let hypothesis_ok =
        eps.powi(-2) - 8.0 * tau.powi(-3) * th / (c.slater_g * c.slater_g) >= 0.0;

    // shared pieces of the per-subproblem effort constants
    let lg2 = lg * lg;
    let f_star_sub = c.f_hi; // upper bound standing in for the optimal value
    let range = f_star_sub - c.f_low + c.tf_star_hi - c.tf_low
        + prob.tf1.lipschitz_val * dy
        + 3.0 * th
        + ghi * ghi;
    let d2 = dx * dx + dy * dy;

    if prob.sigma > 0.0 {
        let alpha = (8.0 * prob.sigma / l_big).sqrt().min(1.0);
        let delta = (2.0 + alpha.recip()) * d2 * l_big + (dy.recip()).max(l_big / 4.0) * dy * dy;
        let m_bound = 16.0
            * (1.0 / (4.0 * lg2)).max(2.0 / (alpha * lg2))
            * (9.0 * l_big * l_big / (2.0 * lg2).min(prob.sigma) + 3.0 * l_big).powi(2)
            * (delta + 2.0 * alpha.recip() * (range + l_big * d2));
        let t_bound = (16.0 * (c.f_hi - c.f_low + 1.0) * l_big
            + 8.0 * (1.0 + l_big * l_big / (prob.sigma * prob.sigma)))
        .ceil()
        .max(0.0);
        let n_bound = 3397.0
            * (2.0_f64).max((l_big / (2.0 * prob.sigma)).sqrt())
            * t_bound
            * (1.0 - tau.powi(6)).recip()
            * (tau * eps).powi(-6)
            * (38.0 * kf * tau.recip().ln()
                + 38.0 * eps0.recip().ln()
                + 2.0 * m_bound.ln().max(0.0)
                + 2.0
                + 2.0 * (2.0 * t_bound).ln())
            + 2.0 * (tau * eps).recip()
                * (1.0 - tau)
                * ((l_tilde / prob.sigma).sqrt() + 1.0).ceil()
                * 1.0_f64.max(
                    (2.0 * (2.0 * l_tilde * dy * dy).ln() + 6.0 * kf * tau.recip().ln()
                        - 6.0 * eps0.ln())
                    .ceil(),
                )
            + kf;
        TheoremBounds {
            k_outer,
            vartheta: th,
            l_big,
            l_tilde,
            hypothesis_ok,
            alpha,
            delta,
            m_bound,
            t_bound,
            n_bound,
            strongly_convex_branch: true,
        }
    } else {
        let alpha = (4.0 / (dy * l_big)).sqrt().min(1.0);
        let delta =
            (2.0 + alpha.recip()) * l_big * d2 + (dy.recip()).max(l_big / 4.0) * dy * dy;
        let edge = 3.0 * l_big + 1.0 / (2.0 * dy);
        let m_bound = 16.0
            * (1.0 / (4.0 * lg2)).max(2.0 / (alpha * lg2))
            * (edge * edge / (2.0 * lg2).min(1.0 / (2.0 * dy)) + edge).powi(2)
            * (delta + 2.0 * alpha.recip() * (range + dy / 4.0 + l_big * d2));
        let t_bound = (16.0 * (c.f_hi - c.f_low + 1.0 + dy / 4.0) * l_big
            + 8.0 * (1.0 + 4.0 * dy * dy * l_big * l_big))
        .ceil()
        .max(0.0);
        let n_bound = ((96.0 * 2.0_f64.sqrt() * (1.0 + (12.0 * l_big + 2.0 / dy) / lg2)).ceil()
            + 2.0)
            * (2.0_f64).max((dy * l_big).sqrt())
            * t_bound
            * (1.0 - tau.powi(7)).recip()
            * (tau * eps).powi(-7)
            * (56.0 * kf * tau.recip().ln()
                + 56.0 * eps0.recip().ln()
                + 2.0 * m_bound.ln().max(0.0)
                + 2.0
                + 2.0 * (2.0 * t_bound).ln())
            + (tau * eps).powf(-1.5) * (1.0 - tau.powf(1.5)).recip() * dy * (2.0 * l_tilde).sqrt()
            + kf;
        TheoremBounds {
            k_outer,
            vartheta: th,
            l_big,
            l_tilde,
            hypothesis_ok,
            alpha,
            delta,
            m_bound,
            t_bound,
            n_bound,
            strongly_convex_branch: false,
        }
    }
}

/// Outcome of the warm-started lower-level solve.
pub struct WarmStart {
    pub y: VecF,
    pub gap_bound: f64,
    pub counts: OracleCounts,
}

/// Solve `min_z { lower-AL(x, z, lam; rho, mu) }` to objective gap `tol`,
/// starting from `y_start`.
pub fn warm_start_lower(
    prob: &BilevelProblem,
    x: &VecF,
    lam: &Multipliers,
    rho: f64,
    mu: f64,
    tol: f64,
    y_start: &VecF,
) -> Result<WarmStart> {
    let nx = prob.nx;
    let lam_v = lam.as_vec().clone();
    let phi = {
        let lam_v = lam_v.clone();
        move |z: &VecF| {
            let shifted = &lam_v + &(prob.g.value(x, z) * mu);
            prob.tf1.value(&stack(x, z))
                + positive_part(&shifted).mapv(|t| t * t).sum() / (2.0 * rho * mu)
        }
    };
    let grad = move |z: &VecF| {
        let shifted = positive_part(&(&lam_v + &(prob.g.value(x, z) * mu)));
        let gz = prob.tf1.gradient(&stack(x, z)).slice(s![nx..]).to_owned();
        gz + &(prob.g.jt_z_mul(x, z, &shifted) / rho)
    };
    let cc = CompositeConvexProblem {
        phi: Box::new(phi),
        grad: Box::new(grad),
        lip_grad: prob.lipschitz_lower(rho, mu, lam.norm()),
        sigma: prob.sigma,
        reg: &prob.tf2,
    };
    let out = if prob.sigma > 0.0 {
        apg_strongly_convex(&cc, tol, y_start)?
    } else {
        apg_convex(&cc, tol, y_start)?
    };
    Ok(WarmStart {
        y: out.point,
        gap_bound: out.gap_bound,
        counts: OracleCounts::from_lower(out.grad_calls, out.prox_calls),
    })
}

/// Output of one penalized minimax subproblem solve.
pub struct SubproblemResult {
    pub x: VecF,
    pub y: VecF,
    pub z: VecF,
    pub cert: PdCertificate,
    pub counts: OracleCounts,
    pub stats: SaddleStats,
}

/// Solve the penalized minimax subproblem of outer iteration k to a
/// `tol` primal-dual stationarity certificate, starting from
/// `((x_k, y_init), z_k)`.
pub fn solve_subproblem(
    prob: &BilevelProblem,
    x_k: &VecF,
    y_init: &VecF,
    z_k: &VecF,
    lam: &Multipliers,
    rho: f64,
    mu: f64,
    tol: f64,
    caps: &SaddleCaps,
) -> Result<SubproblemResult> {
    let nx = prob.nx;
    let lam_v = lam.as_vec().clone();

    // coupling h((x,y), z) of the saddle reformulation
    let h_value = {
        let lam_v = lam_v.clone();
        move |u: &VecF, z: &VecF| {
            let x = u.slice(s![..nx]).to_owned();
            let y = u.slice(s![nx..]).to_owned();
            let pen = |p: &VecF| {
                let shifted = &lam_v + &(prob.g.value(&x, p) * mu);
                positive_part(&shifted).mapv(|t| t * t).sum() / (2.0 * mu)
            };
            prob.f1.value(u) + rho * prob.tf1.value(u) + pen(&y)
                - rho * prob.tf1.value(&stack(&x, z))
                - pen(z)
        }
    };
    let h_grad = move |u: &VecF, z: &VecF| {
        let x = u.slice(s![..nx]).to_owned();
        let y = u.slice(s![nx..]).to_owned();
        let my = positive_part(&(&lam_v + &(prob.g.value(&x, &y) * mu)));
        let mz = positive_part(&(&lam_v + &(prob.g.value(&x, z) * mu)));
        let gf1 = prob.f1.gradient(u);
        let gt_y = prob.tf1.gradient(u);
        let gt_z = prob.tf1.gradient(&stack(&x, z));
        let gx = gf1.slice(s![..nx]).to_owned()
            + &(gt_y.slice(s![..nx]).to_owned() * rho)
            + &prob.g.jt_x_mul(&x, &y, &my)
            - &(gt_z.slice(s![..nx]).to_owned() * rho)
            - &prob.g.jt_x_mul(&x, z, &mz);
        let gy = gf1.slice(s![nx..]).to_owned()
            + &(gt_y.slice(s![nx..]).to_owned() * rho)
            + &prob.g.jt_z_mul(&x, &y, &my);
        let gz = -(gt_z.slice(s![nx..]).to_owned() * rho) - &prob.g.jt_z_mul(&x, z, &mz);
        (stack(&gx, &gy), gz)
    };

    let p = ProxFriendlyFn::separable_sum(&prob.f2, &ProxFriendlyFn::scaled(&prob.tf2, rho), nx);
    let q = ProxFriendlyFn::scaled(&prob.tf2, rho);
    let mm = MinimaxProblem {
        h_value: Box::new(h_value),
        h_grad: Box::new(h_grad),
        lip_grad: prob.lipschitz_outer(rho, mu, lam.norm()),
        sigma_y: rho * prob.sigma,
        weak_convexity_x: prob.weak_convexity_outer(rho, mu, lam.norm()),
        p: &p,
        q: &q,
    };
    let eps_hat0 = if prob.sigma > 0.0 {
        tol / 2.0
    } else {
        tol / (2.0 * mu.sqrt())
    };
    // fast certified path first; the worst-case method is the fallback
    let start = stack(x_k, y_init);
    let out = match solve_saddle_adaptive(&mm, tol, &start, z_k, caps) {
        Ok(out) => out,
        Err(SolverError::NonConvergence { .. }) => {
            solve_ncc(&mm, tol, eps_hat0, &start, z_k, caps)?
        }
        Err(e) => return Err(e),
    };
    let counts = OracleCounts::from_saddle(&out.trace.stats);
    Ok(SubproblemResult {
        x: out.cert.x.slice(s![..nx]).to_owned(),
        y: out.cert.x.slice(s![nx..]).to_owned(),
        z: out.cert.y.clone(),
        cert: out.cert,
        counts,
        stats: out.trace.stats,
    })
}

/// Full driver output.
pub struct SmoOutput {
    pub x: VecF,
    pub y: VecF,
    pub trace: SmoTrace,
    pub bounds: TheoremBounds,
}

/// Run the outer loop to the final tolerance.
pub fn run_smo(prob: &BilevelProblem, config: &SmoConfig) -> Result<SmoOutput> {
    config.validate()?;
    prob.constants.validate()?;
    if !prob.f2.contains(&config.x0) || !prob.tf2.contains(&config.y0) {
        return Err(SolverError::DomainViolation("starting point outside domains".into()));
    }
    let bounds = theorem_bounds(prob, config);
    let mut lam = config
        .lambda0
        .clone()
        .unwrap_or_else(|| Multipliers::zeros(prob.g.n_constraints));
    let mut x = config.x0.clone();
    let mut y = config.y0.clone();
    let mut z = config.z0.clone().unwrap_or_else(|| config.y0.clone());
    if !prob.tf2.contains(&z) {
        return Err(SolverError::DomainViolation("z0 outside the lower domain".into()));
    }

    let mut iterations = Vec::new();
    let mut totals = OracleCounts::default();

    for k in 0.. {
        let (eps_k, rho_k, mu_k) = schedule(config, k);
        let lambda_norm = lam.norm();
        let lambda_bound_ok =
            lambda_norm * lambda_norm <= 2.0 * rho_k * mu_k * bounds.vartheta * (1.0 + 1e-12);

        let ws = warm_start_lower(prob, &x, &lam, rho_k, mu_k, eps_k, &y)?;
        let sub = solve_subproblem(prob, &x, &ws.y, &z, &lam, rho_k, mu_k, eps_k, &config.caps)?;
        x = sub.x;
        y = sub.y;
        z = sub.z;
        let lam_entering = lam.clone();
        lam = update_multiplier(&lam, mu_k, &prob.g.value(&x, &z));

        let mut counts = ws.counts;
        counts.absorb(&sub.counts);
        totals.absorb(&counts);
        iterations.push(SmoIteration {
            k,
            eps_k,
            rho_k,
            mu_k,
            lambda: lam_entering,
            lambda_norm,
            lambda_bound_ok,
            warm_start_gap: ws.gap_bound,
            certificate_residual: sub.cert.residual,
            counts,
        });

        if eps_k <= config.eps {
            break;
        }
    }

    Ok(SmoOutput {
        x: x.clone(),
        y: y.clone(),
        trace: SmoTrace {
            iterations,
            totals,
            x,
            y,
            z,
            lambda: lam,
        },
        bounds,
    })
}
