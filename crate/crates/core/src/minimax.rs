//! Saddle-point solvers for composite minimax problems
//! `min_x max_y { h(x,y) + p(x) - q(y) }`.
//!
//! `solve_scsc` is an optimal first-order method for the strongly-convex-
//! strongly-concave case with a verifiable prox-residual termination test.
//! `solve_ncc` wraps it in a proximal-point scheme to handle nonconvex-
//! concave couplings, regularizing both blocks and shrinking the inner
//! tolerance along the outer iterations.

use crate::error::{Result, SolverError};
use crate::model::{ProxFriendlyFn, VecF};

/// Safety caps for the saddle solvers.
#[derive(Clone, Copy, Debug)]
pub struct SaddleCaps {
    /// Total inner iterations across one `solve_scsc` call.
    pub total_inner: usize,
    /// Inner while-loop iterations per outer step of `solve_scsc`.
    pub per_outer: usize,
    /// Outer proximal-point iterations of `solve_ncc`.
    pub ncc_outer: usize,
}

impl Default for SaddleCaps {
    fn default() -> Self {
        Self {
            total_inner: 10_000_000,
            per_outer: 1_000_000,
            ncc_outer: 100_000,
        }
    }
}

/// Composite minimax instance with a smooth coupling.
pub struct MinimaxProblem<'a> {
    pub h_value: Box<dyn Fn(&VecF, &VecF) -> f64 + 'a>,
    /// Full gradient `(grad_x h, grad_y h)`; one call counts as one
    /// coupling-gradient evaluation.
    pub h_grad: Box<dyn Fn(&VecF, &VecF) -> (VecF, VecF) + 'a>,
    pub lip_grad: f64,
    /// Concavity modulus of `h(x, .)`; zero for merely concave.
    pub sigma_y: f64,
    /// Upper bound on the weak-convexity modulus of `h(., y)` in x; the
    /// proximal-point anchor weight is proportional to it, so a tight
    /// bound shortens the outer loop. Set to `lip_grad` when unknown.
    pub weak_convexity_x: f64,
    pub p: &'a ProxFriendlyFn,
    pub q: &'a ProxFriendlyFn,
}

/// Strongly-convex-strongly-concave instance fed to `solve_scsc`.
pub struct ScscSpec<'a> {
    pub h_value: Box<dyn Fn(&VecF, &VecF) -> f64 + 'a>,
    pub h_grad: Box<dyn Fn(&VecF, &VecF) -> (VecF, VecF) + 'a>,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub lip_grad: f64,
    pub p: &'a ProxFriendlyFn,
    pub q: &'a ProxFriendlyFn,
}

impl<'a> ScscSpec<'a> {
    /// Prox step used by the stationarity test.
    pub fn zeta_hat(&self) -> f64 {
        self.sigma_x.min(self.sigma_y) / (self.lip_grad * self.lip_grad)
    }
}

/// Prox-residual witness of approximate primal-dual stationarity.
#[derive(Clone, Debug)]
pub struct PdCertificate {
    pub x: VecF,
    pub y: VecF,
    pub residual: f64,
    /// Prox step used when forming the residual.
    pub step: f64,
    /// Whether an independent recomputation reproduced the residual.
    pub recomputed_ok: bool,
}

/// Oracle-call tallies of one saddle solve.
#[derive(Clone, Copy, Debug, Default)]
pub struct SaddleStats {
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub grad_calls: usize,
    pub prox_p_calls: usize,
    pub prox_q_calls: usize,
}

impl SaddleStats {
    pub fn absorb(&mut self, other: &SaddleStats) {
        self.outer_iters += other.outer_iters;
        self.inner_iters += other.inner_iters;
        self.grad_calls += other.grad_calls;
        self.prox_p_calls += other.prox_p_calls;
        self.prox_q_calls += other.prox_q_calls;
    }
}

fn norm(v: &VecF) -> f64 {
    v.dot(v).sqrt()
}

/// Forward-backward residual at `(x, y)` with step `zeta_hat`:
/// `x^ = prox_{zp}(x - z grad_x h)`, `y^ = prox_{zq}(y + z grad_y h)` and
/// the displacement norm corrected by the gradient variation between the
/// two points. Zero exactly at fixed points of the prox-gradient map.
pub fn pd_residual_with(
    h_grad: &dyn Fn(&VecF, &VecF) -> (VecF, VecF),
    p: &ProxFriendlyFn,
    q: &ProxFriendlyFn,
    zeta_hat: f64,
    x: &VecF,
    y: &VecF,
) -> (f64, VecF, VecF) {
    let (gx, gy) = h_grad(x, y);
    let xh = p.prox(&(x - &(&gx * zeta_hat)), zeta_hat);
    let yh = q.prox(&(y + &(&gy * zeta_hat)), zeta_hat);
    let (gxh, gyh) = h_grad(&xh, &yh);
    let rx = (x - &xh) / zeta_hat - (&gx - &gxh);
    let ry = (&yh - y) / zeta_hat - (&gy - &gyh);
    let res = (rx.dot(&rx) + ry.dot(&ry)).sqrt();
    (res, xh, yh)
}

/// Residual of Definition-1 stationarity for an SC-SC instance.
pub fn pd_residual(spec: &ScscSpec, x: &VecF, y: &VecF) -> (f64, VecF, VecF) {
    pd_residual_with(&*spec.h_grad, spec.p, spec.q, spec.zeta_hat(), x, y)
}

/// Optimal first-order method for the SC-SC composite saddle problem.
///
/// `zbar0` must lie in `-sigma_x * dom p`, `ybar0` in `dom q`. Terminates
/// when the forward-backward residual at the averaged primal-dual pair
/// drops to `tau`.
pub fn solve_scsc(
    spec: &ScscSpec,
    tau: f64,
    zbar0: &VecF,
    ybar0: &VecF,
    caps: &SaddleCaps,
) -> Result<(PdCertificate, SaddleStats)> {
    if tau <= 0.0 {
        return Err(SolverError::InvalidInput("tau must be positive".into()));
    }
    if spec.sigma_x <= 0.0 || spec.sigma_y <= 0.0 {
        return Err(SolverError::InvalidInput(
            "solve_scsc requires positive convexity moduli".into(),
        ));
    }
    let sx = spec.sigma_x;
    let sy = spec.sigma_y;
    let lip = spec.lip_grad;

    // constants from the method header, recomputed every solve
    let alpha_bar = (8.0 * sy / sx).sqrt().min(1.0);
    let eta_z = sx / 2.0;
    let eta_y = (1.0 / (2.0 * sy)).min(4.0 / (alpha_bar * sx));
    let zeta = 1.0 / (2.0 * 5.0_f64.sqrt() * (1.0 + 8.0 * lip / sx));
    let gamma = 8.0 / sx; // gamma_x = gamma_y
    let zeta_hat = spec.zeta_hat();

    // a_x, a_y built from the convexified split
    //   h^(x,y) = h(x,y) - sx ||x||^2/2 + sy ||y||^2/2
    let a_ops = |gx: &VecF, gy: &VecF, x: &VecF, y: &VecF, zg: &VecF, yg: &VecF| {
        let ax = gx - &(x * sx) + &((x - &(zg / sx)) * (sx / 2.0));
        let ay = -gy + &((y - yg) * (sx / 8.0));
        (ax, ay)
    };

    let mut stats = SaddleStats::default();
    let mut z = zbar0.clone();
    let mut y = ybar0.clone();
    let mut zf = zbar0.clone();
    let mut yf = ybar0.clone();

    let mut best: Option<(f64, VecF, VecF)> = None;

    for k in 0..usize::MAX {
        stats.outer_iters = k + 1;
        let zg = &z * alpha_bar + &zf * (1.0 - alpha_bar);
        let yg = &y * alpha_bar + &yf * (1.0 - alpha_bar);
        let xm1 = -&zg / sx;
        let ym1 = yg.clone();

        let (g0x, g0y) = (spec.h_grad)(&xm1, &ym1);
        stats.grad_calls += 1;
        let (a0x, a0y) = a_ops(&g0x, &g0y, &xm1, &ym1, &zg, &yg);
        let step = zeta * gamma;
        let vx = &xm1 - &(&a0x * step);
        let vy = &ym1 - &(&a0y * step);
        let x0 = spec.p.prox(&vx, step);
        let y0 = spec.q.prox(&vy, step);
        stats.prox_p_calls += 1;
        stats.prox_q_calls += 1;
        let bx0 = (&vx - &x0) / step;
        let by0 = (&vy - &y0) / step;

        let mut xt = x0.clone();
        let mut yt = y0.clone();
        let mut bxt = bx0.clone();
        let mut byt = by0.clone();
        let mut t = 0usize;
        let (gfx, gfy) = loop {
            let (gtx, gty) = (spec.h_grad)(&xt, &yt);
            stats.grad_calls += 1;
            let (atx, aty) = a_ops(&gtx, &gty, &xt, &yt, &zg, &yg);
            let lhs = gamma * ((&atx + &bxt).mapv(|v| v * v).sum() + (&aty + &byt).mapv(|v| v * v).sum());
            let rhs = ((&xt - &xm1).mapv(|v| v * v).sum() + (&yt - &ym1).mapv(|v| v * v).sum()) / gamma;
            if lhs <= rhs {
                break (gtx, gty);
            }
            if t >= caps.per_outer || stats.inner_iters >= caps.total_inner {
                let (bx, by) = best
                    .map(|(_, bx, by)| (bx, by))
                    .unwrap_or_else(|| (xt.clone(), yt.clone()));
                return Err(SolverError::NonConvergence {
                    context: format!(
                        "solve_scsc inner loop (best residual iterate dim {}x{})",
                        bx.len(),
                        by.len()
                    ),
                    cap: caps.total_inner,
                });
            }
            let beta = 2.0 / (t as f64 + 3.0);
            let base_x = &xt + &((&x0 - &xt) * beta);
            let base_y = &yt + &((&y0 - &yt) * beta);
            let xh = &base_x - &((&atx + &bxt) * step);
            let yh = &base_y - &((&aty + &byt) * step);
            let (ghx, ghy) = (spec.h_grad)(&xh, &yh);
            stats.grad_calls += 1;
            let (ahx, ahy) = a_ops(&ghx, &ghy, &xh, &yh, &zg, &yg);
            let vx = &base_x - &(&ahx * step);
            let vy = &base_y - &(&ahy * step);
            let x_next = spec.p.prox(&vx, step);
            let y_next = spec.q.prox(&vy, step);
            stats.prox_p_calls += 1;
            stats.prox_q_calls += 1;
            bxt = (&vx - &x_next) / step;
            byt = (&vy - &y_next) / step;
            xt = x_next;
            yt = y_next;
            t += 1;
            stats.inner_iters += 1;
        };

        // momentum updates in the lifted dual space
        let zf_next = &gfx - &(&xt * sx) + &bxt;
        let wf_next = -&gfy - &(&yt * sy) + &byt;
        z = &z + &(&(&zf_next - &z) * (eta_z / sx)) - &(&(&xt + &(&zf_next / sx)) * eta_z);
        y = &y + &(&(&yt - &y) * (eta_y * sy)) - &(&(&wf_next + &(&yt * sy)) * eta_y);
        zf = zf_next;
        yf = yt.clone();
        let x_new = -&z / sx;

        let (gx1, gy1) = (spec.h_grad)(&x_new, &y);
        stats.grad_calls += 1;
        let xhat = spec.p.prox(&(&x_new - &(&gx1 * zeta_hat)), zeta_hat);
        let yhat = spec.q.prox(&(&y + &(&gy1 * zeta_hat)), zeta_hat);
        stats.prox_p_calls += 1;
        stats.prox_q_calls += 1;
        let (gx2, gy2) = (spec.h_grad)(&xhat, &yhat);
        stats.grad_calls += 1;
        let rx = (&x_new - &xhat) / zeta_hat - (&gx1 - &gx2);
        let ry = (&yhat - &y) / zeta_hat - (&gy1 - &gy2);
        let residual = (rx.dot(&rx) + ry.dot(&ry)).sqrt();
        if !residual.is_finite() {
            return Err(SolverError::NumericalFailure {
                context: "solve_scsc residual".into(),
                iteration: k,
            });
        }
        if best.as_ref().map_or(true, |(r, _, _)| residual < *r) {
            best = Some((residual, xhat.clone(), yhat.clone()));
        }
        if residual <= tau {
            let (recheck, _, _) =
                pd_residual_with(&*spec.h_grad, spec.p, spec.q, zeta_hat, &x_new, &y);
            return Ok((
                PdCertificate {
                    x: xhat,
                    y: yhat,
                    residual,
                    step: zeta_hat,
                    recomputed_ok: (recheck - residual).abs() <= 1e-10 * (1.0 + residual),
                },
                stats,
            ));
        }
        if stats.inner_iters + stats.outer_iters >= caps.total_inner {
            return Err(SolverError::NonConvergence {
                context: "solve_scsc".into(),
                cap: caps.total_inner,
            });
        }
    }
    unreachable!()
}

/// Regularized coupling used by the proximal-point wrapper.
pub struct RegularizedCoupling<'a> {
    pub h_value: Box<dyn Fn(&VecF, &VecF) -> f64 + 'a>,
    pub h_grad: Box<dyn Fn(&VecF, &VecF) -> (VecF, VecF) + 'a>,
    pub sigma_x_hat: f64,
    pub sigma_y_hat: f64,
    pub lip_hat: f64,
}

/// Proximal-point anchor weight: the declared weak-convexity modulus,
/// floored so the regularized problem stays usefully conditioned and
/// capped at the smoothness constant (the generic choice).
fn anchor_weight(base: &MinimaxProblem, eps: f64) -> f64 {
    let floor = if base.p.diameter.is_finite() && base.p.diameter > 0.0 {
        eps / (2.0 * base.p.diameter)
    } else {
        base.lip_grad
    };
    base.weak_convexity_x.max(floor).min(base.lip_grad)
}

/// Build the anchored coupling
/// `h_k = h - eps ||y - y0||^2 / (4 D_q) + a ||x - xk||^2` when the base
/// is merely concave in y, or `h_k = h + a ||x - xk||^2` otherwise, with
/// `a` the proximal-point anchor weight. The result is
/// `a`-strongly-convex in x and `sigma_y_hat`-strongly-concave.
pub fn regularized_h<'a>(
    base: &'a MinimaxProblem<'a>,
    xk: &VecF,
    y0: &VecF,
    eps: f64,
) -> RegularizedCoupling<'a> {
    let lip = base.lip_grad;
    let anchor = anchor_weight(base, eps);
    let dq = base.q.diameter;
    let merely_concave = base.sigma_y == 0.0;
    let (sigma_y_hat, lip_hat) = if merely_concave {
        (eps / (2.0 * dq), lip + 2.0 * anchor + eps / (2.0 * dq))
    } else {
        (base.sigma_y, lip + 2.0 * anchor)
    };
    let xk_v = xk.clone();
    let y0_v = y0.clone();
    let xk_g = xk.clone();
    let y0_g = y0.clone();
    let reg_w = if merely_concave { eps / (4.0 * dq) } else { 0.0 };
    let h_value = Box::new(move |x: &VecF, y: &VecF| {
        let dy = y - &y0_v;
        let dx = x - &xk_v;
        (base.h_value)(x, y) - reg_w * dy.dot(&dy) + anchor * dx.dot(&dx)
    });
    let h_grad = Box::new(move |x: &VecF, y: &VecF| {
        let (mut gx, mut gy) = (base.h_grad)(x, y);
        gx = gx + &((x - &xk_g) * (2.0 * anchor));
        if reg_w > 0.0 {
            gy = gy - &((y - &y0_g) * (2.0 * reg_w));
        }
        (gx, gy)
    });
    RegularizedCoupling {
        h_value,
        h_grad,
        sigma_x_hat: anchor,
        sigma_y_hat,
        lip_hat,
    }
}

/// Trace of the proximal-point outer loop.
#[derive(Clone, Debug, Default)]
pub struct NccTrace {
    pub outer_iters: usize,
    /// `||x^{k+1} - x^k||` per outer step.
    pub x_steps: Vec<f64>,
    pub stats: SaddleStats,
}

/// Result of `solve_ncc`: the final pair with its certificate on the
/// original (unregularized) coupling.
pub struct NccOutput {
    pub cert: PdCertificate,
    pub trace: NccTrace,
}

/// Proximal-point method for the nonconvex-concave composite saddle
/// problem; terminates on the anchor displacement test
/// `||x^{k+1} - x^k|| <= eps / (4 a)` (with `a` the anchor weight, so
/// the anchor-gradient error is at most `eps / 2`) and certifies the
/// output by recomputing the residual on the original coupling.
pub fn solve_ncc(
    base: &MinimaxProblem,
    eps: f64,
    eps_hat0: f64,
    x_start: &VecF,
    y_start: &VecF,
    caps: &SaddleCaps,
) -> Result<NccOutput> {
    if eps <= 0.0 || eps_hat0 <= 0.0 || eps_hat0 > eps / 2.0 {
        return Err(SolverError::InvalidInput(
            "need eps > 0 and eps_hat0 in (0, eps/2]".into(),
        ));
    }
    if !base.p.contains(x_start) || !base.q.contains(y_start) {
        return Err(SolverError::DomainViolation("solve_ncc start outside domains".into()));
    }
    let lip = base.lip_grad;
    let anchor = anchor_weight(base, eps);
    let mut x = x_start.clone();
    let mut y = y_start.clone();
    let y0 = y_start.clone();
    let mut trace = NccTrace::default();

    for k in 0..caps.ncc_outer {
        let reg = regularized_h(base, &x, &y0, eps);
        let spec = ScscSpec {
            h_value: reg.h_value,
            h_grad: reg.h_grad,
            sigma_x: reg.sigma_x_hat,
            sigma_y: reg.sigma_y_hat,
            lip_grad: reg.lip_hat,
            p: base.p,
            q: base.q,
        };
        let tau = eps_hat0 / (k as f64 + 1.0);
        let zbar0 = -&x * anchor;
        let (cert, stats) = solve_scsc(&spec, tau, &zbar0, &y, caps)?;
        trace.stats.absorb(&stats);
        trace.outer_iters = k + 1;
        let step = norm(&(&cert.x - &x));
        trace.x_steps.push(step);
        x = cert.x;
        y = cert.y;
        if step <= eps / (4.0 * anchor) {
            // certify against the original coupling
            let sigma_y_eff = if base.sigma_y == 0.0 {
                eps / (2.0 * base.q.diameter)
            } else {
                base.sigma_y
            };
            let zeta_hat = lip.min(sigma_y_eff) / (lip * lip);
            let (residual, _, _) =
                pd_residual_with(&*base.h_grad, base.p, base.q, zeta_hat, &x, &y);
            trace.stats.grad_calls += 2;
            trace.stats.prox_p_calls += 1;
            trace.stats.prox_q_calls += 1;
            return Ok(NccOutput {
                cert: PdCertificate {
                    x,
                    y,
                    residual,
                    step: zeta_hat,
                    recomputed_ok: residual <= eps,
                },
                trace,
            });
        }
    }
    Err(SolverError::NonConvergence {
        context: "solve_ncc outer loop".into(),
        cap: caps.ncc_outer,
    })
}
