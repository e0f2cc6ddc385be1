//! Accelerated proximal-gradient solvers for the composite convex problem
//! `min Psi(x) = phi(x) + P(x)` over the compact domain of `P`.
//!
//! Two variants: a merely-convex solver with a certified running lower
//! bound on the optimal value, and a strongly-convex solver that terminates
//! on a prox-residual test. Step sizes are taken verbatim from the
//! worst-case analysis; there is no line search.

use ndarray::Array1;

use crate::error::{Result, SolverError};
use crate::model::{ProxFriendlyFn, VecF};

/// Hard safety cap on inner iterations across a single solve.
pub const HARD_ITERATION_CAP: usize = 100_000_000;

/// Composite convex minimization instance.
pub struct CompositeConvexProblem<'a> {
    pub phi: Box<dyn Fn(&VecF) -> f64 + 'a>,
    pub grad: Box<dyn Fn(&VecF) -> VecF + 'a>,
    /// Lipschitz constant of `grad` on `dom P`.
    pub lip_grad: f64,
    /// Strong-convexity modulus of `phi`; zero allowed.
    pub sigma: f64,
    pub reg: &'a ProxFriendlyFn,
}

impl<'a> CompositeConvexProblem<'a> {
    pub fn objective(&self, x: &VecF) -> f64 {
        (self.phi)(x) + self.reg.value(x)
    }
}

/// Output of either accelerated solver.
#[derive(Clone, Debug)]
pub struct ApgResult {
    pub point: VecF,
    /// Certified bound on `Psi(point) - Psi*`.
    pub gap_bound: f64,
    pub iterations: usize,
    pub grad_calls: usize,
    pub prox_calls: usize,
}

/// Worst-case iteration cap of the merely-convex solver.
pub fn convex_iteration_cap(diameter: f64, lip_grad: f64, tol: f64) -> usize {
    (diameter * (2.0 * lip_grad / tol).sqrt()).ceil().max(0.0) as usize
}

/// Worst-case iteration cap of the strongly-convex solver.
pub fn strongly_convex_iteration_cap(diameter: f64, lip_grad: f64, sigma: f64, tol: f64) -> usize {
    let outer = (lip_grad / sigma).sqrt().ceil() as usize;
    let inner = (2.0 * (2.0 * lip_grad * diameter * diameter / tol).ln()).ceil();
    outer * (inner.max(1.0) as usize)
}

/// Running certified lower bound on `Psi*` from the accumulated
/// linearizations: `4/((k+1)(k+3)) * min_x sum_i ((i+2)/2) ell(x; y^i)`.
///
/// The minimization of the aggregated (linear + P) model needs an exact
/// linear-minimization oracle on `dom P`; absent that, the caller falls
/// back to the worst-case iteration cap.
pub struct LinearizationBundle {
    // running sums of w_i * grad(y^i) and w_i * (phi(y^i) - <grad(y^i), y^i>)
    grad_sum: VecF,
    offset_sum: f64,
    weight_sum: f64,
    k: usize,
}

impl LinearizationBundle {
    pub fn new(dim: usize) -> Self {
        Self {
            grad_sum: Array1::zeros(dim),
            offset_sum: 0.0,
            weight_sum: 0.0,
            k: 0,
        }
    }

    /// Record the linearization taken at `y^k` with weight `(k+2)/2`.
    pub fn push(&mut self, y: &VecF, phi_y: f64, grad_y: &VecF) {
        let w = (self.k as f64 + 2.0) / 2.0;
        self.grad_sum = &self.grad_sum + &(grad_y * w);
        self.offset_sum += w * (phi_y - grad_y.dot(y));
        self.weight_sum += w;
        self.k += 1;
    }

    /// Lower bound after `k+1` recorded linearizations, or a capability
    /// error when `P` has no exact linear-minimization oracle.
    pub fn lower_bound(&self, reg: &ProxFriendlyFn) -> Result<f64> {
        let k = self.k.checked_sub(1).ok_or_else(|| {
            SolverError::InvalidInput("no linearizations recorded".into())
        })? as f64;
        let scaled = &self.grad_sum / self.weight_sum;
        let u = reg.linear_argmin(&scaled).ok_or_else(|| {
            SolverError::Capability("regularizer has no linear-minimization oracle".into())
        })?;
        let min_val = self.grad_sum.dot(&u) + self.weight_sum * reg.value(&u) + self.offset_sum;
        Ok(4.0 / ((k + 1.0) * (k + 3.0)) * min_val)
    }
}

/// Accelerated method for `sigma = 0`, duality-gap termination.
///
/// Stops as soon as `Psi(x^{k+1}) - lower_bound <= tol`, or after the
/// worst-case cap, at which point the gap bound holds unconditionally.
pub fn apg_convex(prob: &CompositeConvexProblem, tol: f64, x0: &VecF) -> Result<ApgResult> {
    if tol <= 0.0 {
        return Err(SolverError::InvalidInput("tolerance must be positive".into()));
    }
    if prob.lip_grad <= 0.0 {
        return Err(SolverError::InvalidInput("lip_grad must be positive".into()));
    }
    if !prob.reg.contains(x0) {
        return Err(SolverError::DomainViolation("apg_convex start outside dom P".into()));
    }
    let lip = prob.lip_grad;
    let cap = convex_iteration_cap(prob.reg.diameter, lip, tol).max(1);
    let certifiable = prob.reg.linear_argmin(&Array1::zeros(x0.len())).is_some();

    let mut x = x0.clone();
    let mut z = x0.clone();
    let mut bundle = LinearizationBundle::new(x0.len());
    let mut grad_calls = 0usize;
    let mut prox_calls = 0usize;

    for k in 0..cap.min(HARD_ITERATION_CAP) {
        let kf = k as f64;
        let y = (&x * kf + &z * 2.0) / (kf + 2.0);
        let gy = (prob.grad)(&y);
        grad_calls += 1;
        // argmin { ell(z; y^k) + L/(k+2) ||z - z^k||^2 } as one prox call
        let step = (kf + 2.0) / (2.0 * lip);
        let z_next = prob.reg.prox(&(&z - &(&gy * step)), step);
        prox_calls += 1;
        let x_next = (&x * kf + &z_next * 2.0) / (kf + 2.0);

        let obj = prob.objective(&x_next);
        if !obj.is_finite() {
            return Err(SolverError::NumericalFailure {
                context: "apg_convex objective".into(),
                iteration: k,
            });
        }
        x = x_next;
        z = z_next;

        if certifiable {
            bundle.push(&y, (prob.phi)(&y), &gy);
            let lower = bundle.lower_bound(prob.reg)?;
            prox_calls += 1; // linear-minimization oracle, prox-type accounting
            let gap = obj - lower;
            if gap <= tol {
                return Ok(ApgResult {
                    point: x,
                    gap_bound: gap.max(0.0),
                    iterations: k + 1,
                    grad_calls,
                    prox_calls,
                });
            }
        }
    }
    // worst-case cap exhausted: tol holds by the complexity bound
    Ok(ApgResult {
        point: x,
        gap_bound: tol,
        iterations: cap,
        grad_calls,
        prox_calls,
    })
}

/// Accelerated method for `sigma > 0`, prox-residual termination.
///
/// The output satisfies `dist(0, dPsi) <= 2 L ||x~ - x|| <= tol / D_P`
/// and hence an objective gap of at most `tol`.
pub fn apg_strongly_convex(
    prob: &CompositeConvexProblem,
    tol: f64,
    x_start: &VecF,
) -> Result<ApgResult> {
    if tol <= 0.0 {
        return Err(SolverError::InvalidInput("tolerance must be positive".into()));
    }
    if prob.sigma <= 0.0 {
        return Err(SolverError::InvalidInput(
            "apg_strongly_convex requires sigma > 0".into(),
        ));
    }
    if !prob.reg.contains(x_start) {
        return Err(SolverError::DomainViolation(
            "apg_strongly_convex start outside dom P".into(),
        ));
    }
    let lip = prob.lip_grad;
    let dp = prob.reg.diameter;
    let threshold = tol / (2.0 * lip * dp);

    let mut grad_calls = 0usize;
    let mut prox_calls = 0usize;

    let g0 = (prob.grad)(x_start);
    grad_calls += 1;
    let mut x = prob.reg.prox(&(x_start - &(&g0 / lip)), 1.0 / lip);
    prox_calls += 1;
    let mut z = x.clone();
    let alpha = (prob.sigma / lip).sqrt().min(1.0);

    for k in 0..HARD_ITERATION_CAP {
        let y = (&x + &(&z * alpha)) / (1.0 + alpha);
        let gy = (prob.grad)(&y);
        grad_calls += 1;
        // argmin { ell(z; y^k) + alpha L / 2 ||z - alpha y^k - (1-alpha) z^k||^2 }
        let step = 1.0 / (alpha * lip);
        let anchor = &(&y * alpha) + &(&z * (1.0 - alpha));
        let z_next = prob.reg.prox(&(&anchor - &(&gy * step)), step);
        prox_calls += 1;
        let x_next = &(&x * (1.0 - alpha)) + &(&z_next * alpha);
        let gx = (prob.grad)(&x_next);
        grad_calls += 1;
        let x_tilde = prob.reg.prox(&(&x_next - &(&gx / lip)), 1.0 / lip);
        prox_calls += 1;

        if !prob.objective(&x_tilde).is_finite() {
            return Err(SolverError::NumericalFailure {
                context: "apg_strongly_convex objective".into(),
                iteration: k,
            });
        }

        let moved = (&x_tilde - &x).mapv(|t| t * t).sum().sqrt();
        let residual = 2.0 * lip * (&x_tilde - &x_next).mapv(|t| t * t).sum().sqrt();
        z = z_next;
        x = x_next;
        if moved <= threshold {
            return Ok(ApgResult {
                point: x_tilde,
                gap_bound: residual * dp,
                iterations: k + 1,
                grad_calls,
                prox_calls,
            });
        }
    }
    Err(SolverError::NonConvergence {
        context: "apg_strongly_convex".into(),
        cap: HARD_ITERATION_CAP,
    })
}
