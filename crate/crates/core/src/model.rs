//! Problem representation for the constrained bilevel program
//!
//! ```text
//! min f(x,y)  s.t.  y in argmin_z { f~(x,z) | g~(x,z) <= 0 },
//! ```
//!
//! where f = f1 + f2 and f~ = f~1 + f~2 split into smooth and prox-friendly
//! parts, together with the two penalized Lagrangian evaluators and the
//! per-iteration Lipschitz constants that drive every subsolver.

use std::sync::Arc;

use ndarray::{concatenate, s, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SolverError};

pub type VecF = Array1<f64>;
pub type MatF = Array2<f64>;

/// Stack `(x; y)` into one vector.
pub fn stack(x: &VecF, y: &VecF) -> VecF {
    concatenate![Axis(0), x.view(), y.view()]
}

/// Componentwise positive part `[v]_+`.
pub fn positive_part(v: &VecF) -> VecF {
    v.mapv(|t| t.max(0.0))
}

/// A proper closed convex function whose proximal operator is exact.
///
/// `prox(v, step)` returns `argmin_u { P(u) + ||u - v||^2 / (2 step) }`.
/// `linear_argmin(g)`, when available, returns `argmin_u { <g,u> + P(u) }`;
/// it backs the lower-bound certificate of the accelerated solver.
#[derive(Clone)]
pub struct ProxFriendlyFn {
    value: Arc<dyn Fn(&VecF) -> f64 + Send + Sync>,
    prox: Arc<dyn Fn(&VecF, f64) -> VecF + Send + Sync>,
    membership: Arc<dyn Fn(&VecF) -> bool + Send + Sync>,
    linear_argmin: Option<Arc<dyn Fn(&VecF) -> VecF + Send + Sync>>,
    pub diameter: f64,
}

impl ProxFriendlyFn {
    pub fn new(
        value: impl Fn(&VecF) -> f64 + Send + Sync + 'static,
        prox: impl Fn(&VecF, f64) -> VecF + Send + Sync + 'static,
        membership: impl Fn(&VecF) -> bool + Send + Sync + 'static,
        diameter: f64,
    ) -> Self {
        Self {
            value: Arc::new(value),
            prox: Arc::new(prox),
            membership: Arc::new(membership),
            linear_argmin: None,
            diameter,
        }
    }

    /// Indicator of the box `[lo, hi]`; prox is the clamp projection.
    pub fn box_indicator(lo: VecF, hi: VecF) -> Self {
        assert_eq!(lo.len(), hi.len());
        let diameter = (&hi - &lo).mapv(|t| t * t).sum().sqrt();
        let clamp = {
            let (lo, hi) = (lo.clone(), hi.clone());
            move |v: &VecF, _step: f64| -> VecF {
                let mut out = v.clone();
                for i in 0..out.len() {
                    out[i] = out[i].clamp(lo[i], hi[i]);
                }
                out
            }
        };
        let member = {
            let (lo, hi) = (lo.clone(), hi.clone());
            move |v: &VecF| {
                v.len() == lo.len()
                    && v.iter()
                        .zip(lo.iter().zip(hi.iter()))
                        .all(|(&t, (&l, &h))| t >= l - 1e-9 && t <= h + 1e-9)
            }
        };
        let value = {
            let member = member.clone();
            move |v: &VecF| if member(v) { 0.0 } else { f64::INFINITY }
        };
        let lin = {
            let (lo, hi) = (lo.clone(), hi.clone());
            move |g: &VecF| -> VecF {
                let mut out = VecF::zeros(g.len());
                for i in 0..g.len() {
                    out[i] = if g[i] > 0.0 { lo[i] } else { hi[i] };
                }
                out
            }
        };
        let mut f = Self::new(value, clamp, member, diameter);
        f.linear_argmin = Some(Arc::new(lin));
        f
    }

    /// `c * P` for `c > 0`; the domain is unchanged.
    pub fn scaled(inner: &ProxFriendlyFn, c: f64) -> Self {
        assert!(c > 0.0);
        let i1 = inner.clone();
        let i2 = inner.clone();
        let i3 = inner.clone();
        let lin = inner.linear_argmin.clone().map(|la| {
            Arc::new(move |g: &VecF| la(&(g / c))) as Arc<dyn Fn(&VecF) -> VecF + Send + Sync>
        });
        Self {
            value: Arc::new(move |v| c * (i1.value)(v)),
            prox: Arc::new(move |v, step| (i2.prox)(v, step * c)),
            membership: Arc::new(move |v| (i3.membership)(v)),
            linear_argmin: lin,
            diameter: inner.diameter,
        }
    }

    /// Separable sum `P(u) = A(u[..na]) + B(u[na..])`.
    pub fn separable_sum(a: &ProxFriendlyFn, b: &ProxFriendlyFn, na: usize) -> Self {
        let (a1, b1) = (a.clone(), b.clone());
        let (a2, b2) = (a.clone(), b.clone());
        let (a3, b3) = (a.clone(), b.clone());
        let lin = match (&a.linear_argmin, &b.linear_argmin) {
            (Some(la), Some(lb)) => {
                let (la, lb) = (la.clone(), lb.clone());
                Some(Arc::new(move |g: &VecF| {
                    let ga = g.slice(s![..na]).to_owned();
                    let gb = g.slice(s![na..]).to_owned();
                    stack(&la(&ga), &lb(&gb))
                }) as Arc<dyn Fn(&VecF) -> VecF + Send + Sync>)
            }
            _ => None,
        };
        Self {
            value: Arc::new(move |v| {
                (a1.value)(&v.slice(s![..na]).to_owned()) + (b1.value)(&v.slice(s![na..]).to_owned())
            }),
            prox: Arc::new(move |v, step| {
                let pa = (a2.prox)(&v.slice(s![..na]).to_owned(), step);
                let pb = (b2.prox)(&v.slice(s![na..]).to_owned(), step);
                stack(&pa, &pb)
            }),
            membership: Arc::new(move |v| {
                (a3.membership)(&v.slice(s![..na]).to_owned())
                    && (b3.membership)(&v.slice(s![na..]).to_owned())
            }),
            linear_argmin: lin,
            diameter: a.diameter.hypot(b.diameter),
        }
    }

    pub fn value(&self, v: &VecF) -> f64 {
        (self.value)(v)
    }

    pub fn prox(&self, v: &VecF, step: f64) -> VecF {
        (self.prox)(v, step)
    }

    pub fn contains(&self, v: &VecF) -> bool {
        (self.membership)(v)
    }

    pub fn linear_argmin(&self, g: &VecF) -> Option<VecF> {
        self.linear_argmin.as_ref().map(|f| f(g))
    }
}

/// A smooth function with first-order oracle and Lipschitz metadata.
#[derive(Clone)]
pub struct SmoothFn {
    value: Arc<dyn Fn(&VecF) -> f64 + Send + Sync>,
    gradient: Arc<dyn Fn(&VecF) -> VecF + Send + Sync>,
    /// Lipschitz constant of the gradient.
    pub lipschitz_grad: f64,
    /// Lipschitz constant of the function itself.
    pub lipschitz_val: f64,
}

impl SmoothFn {
    pub fn new(
        value: impl Fn(&VecF) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&VecF) -> VecF + Send + Sync + 'static,
        lipschitz_grad: f64,
        lipschitz_val: f64,
    ) -> Self {
        Self {
            value: Arc::new(value),
            gradient: Arc::new(gradient),
            lipschitz_grad,
            lipschitz_val,
        }
    }

    pub fn value(&self, v: &VecF) -> f64 {
        (self.value)(v)
    }

    pub fn gradient(&self, v: &VecF) -> VecF {
        (self.gradient)(v)
    }
}

/// The lower-level constraint map `g~ : (x, z) -> R^l` with its Jacobian.
///
/// Jacobian rows are the gradients of the components; columns `0..nx` are
/// the x-derivatives, `nx..` the z-derivatives.
#[derive(Clone)]
pub struct ConstraintMap {
    value: Arc<dyn Fn(&VecF, &VecF) -> VecF + Send + Sync>,
    jacobian: Arc<dyn Fn(&VecF, &VecF) -> MatF + Send + Sync>,
    pub n_constraints: usize,
    pub lipschitz_val: f64,
    pub lipschitz_grad: f64,
    /// `sup ||g~(x,y)||` over the domain box.
    pub sup_norm: f64,
    /// Norm bound of the x-column block of the Jacobian alone; defaults
    /// to `lipschitz_val` and can be tightened via `with_x_lipschitz`
    /// when the constraints depend only weakly on x.
    pub lipschitz_val_x: f64,
}

impl ConstraintMap {
    pub fn new(
        value: impl Fn(&VecF, &VecF) -> VecF + Send + Sync + 'static,
        jacobian: impl Fn(&VecF, &VecF) -> MatF + Send + Sync + 'static,
        n_constraints: usize,
        lipschitz_val: f64,
        lipschitz_grad: f64,
        sup_norm: f64,
    ) -> Self {
        Self {
            value: Arc::new(value),
            jacobian: Arc::new(jacobian),
            n_constraints,
            lipschitz_val,
            lipschitz_grad,
            sup_norm,
            lipschitz_val_x: lipschitz_val,
        }
    }

    /// Record a tighter norm bound for the x-block of the Jacobian.
    pub fn with_x_lipschitz(mut self, lip_x: f64) -> Self {
        self.lipschitz_val_x = lip_x.min(self.lipschitz_val);
        self
    }

    pub fn value(&self, x: &VecF, z: &VecF) -> VecF {
        (self.value)(x, z)
    }

    pub fn jacobian(&self, x: &VecF, z: &VecF) -> MatF {
        (self.jacobian)(x, z)
    }

    /// `J_x(x,z)^T lam` — x-block of the adjoint Jacobian product.
    pub fn jt_x_mul(&self, x: &VecF, z: &VecF, lam: &VecF) -> VecF {
        let j = self.jacobian(x, z);
        j.slice(s![.., ..x.len()]).t().dot(lam)
    }

    /// `J_z(x,z)^T lam` — z-block of the adjoint Jacobian product.
    pub fn jt_z_mul(&self, x: &VecF, z: &VecF, lam: &VecF) -> VecF {
        let j = self.jacobian(x, z);
        j.slice(s![.., x.len()..]).t().dot(lam)
    }
}

/// Scalar constants of the problem instance used by the complexity
/// diagnostics and the multiplier-norm invariant.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProblemConstants {
    pub d_x: f64,
    pub d_y: f64,
    pub f_hi: f64,
    pub f_low: f64,
    pub tf_low: f64,
    pub tf_star_hi: f64,
    pub g_hi: f64,
    /// Uniform Slater margin `G` of the lower-level constraints.
    pub slater_g: f64,
}

impl ProblemConstants {
    pub fn validate(&self) -> Result<()> {
        let vals = [
            self.d_x,
            self.d_y,
            self.f_hi,
            self.f_low,
            self.tf_low,
            self.tf_star_hi,
            self.g_hi,
            self.slater_g,
        ];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::InvalidInput(
                "problem constants must be finite".into(),
            ));
        }
        if self.f_low > self.f_hi || self.tf_low > self.tf_star_hi {
            return Err(SolverError::InvalidInput(
                "inconsistent objective range constants".into(),
            ));
        }
        if self.slater_g <= 0.0 {
            return Err(SolverError::InvalidInput("Slater margin must be positive".into()));
        }
        Ok(())
    }
}

/// Nonnegative dual multipliers for the lower-level constraints.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Multipliers(VecF);

impl Multipliers {
    pub fn new(v: VecF) -> Result<Self> {
        if v.iter().any(|&t| t < 0.0) {
            return Err(SolverError::InvalidInput(
                "multipliers must be componentwise nonnegative".into(),
            ));
        }
        Ok(Self(v))
    }

    pub fn zeros(l: usize) -> Self {
        Self(VecF::zeros(l))
    }

    pub fn as_vec(&self) -> &VecF {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.dot(&self.0).sqrt()
    }
}

/// The bilevel problem instance under the standing smoothness assumptions.
#[derive(Clone)]
pub struct BilevelProblem {
    /// Smooth part of the upper objective, on `(x, y)`.
    pub f1: SmoothFn,
    /// Prox-friendly part of the upper objective, on `x`; its domain is X.
    pub f2: ProxFriendlyFn,
    /// Smooth part of the lower objective, on `(x, z)`.
    pub tf1: SmoothFn,
    /// Prox-friendly part of the lower objective, on `z`; its domain is Y.
    pub tf2: ProxFriendlyFn,
    pub g: ConstraintMap,
    /// Strong-convexity modulus of `f~1(x, .)`; zero for merely convex.
    pub sigma: f64,
    pub constants: ProblemConstants,
    pub nx: usize,
    pub ny: usize,
}

impl BilevelProblem {
    pub fn f_value(&self, x: &VecF, y: &VecF) -> f64 {
        self.f1.value(&stack(x, y)) + self.f2.value(x)
    }

    pub fn tf_value(&self, x: &VecF, z: &VecF) -> f64 {
        self.tf1.value(&stack(x, z)) + self.tf2.value(z)
    }

    fn check_domains(&self, x: &VecF, zs: &[&VecF]) -> Result<()> {
        if !self.f2.contains(x) {
            return Err(SolverError::DomainViolation("x outside dom f2".into()));
        }
        for z in zs {
            if !self.tf2.contains(z) {
                return Err(SolverError::DomainViolation("point outside dom tf2".into()));
            }
        }
        Ok(())
    }

    /// Modified augmented Lagrangian of the lower level,
    /// `f~(x,z) + ||[lam + mu g~(x,z)]_+||^2 / (2 rho mu)`.
    pub fn eval_lower_al(
        &self,
        x: &VecF,
        z: &VecF,
        lam: &Multipliers,
        rho: f64,
        mu: f64,
    ) -> Result<f64> {
        if rho <= 0.0 || mu <= 0.0 {
            return Err(SolverError::InvalidInput("rho and mu must be positive".into()));
        }
        self.check_domains(x, &[z])?;
        let shifted = lam.as_vec() + &(self.g.value(x, z) * mu);
        let pen = positive_part(&shifted).mapv(|t| t * t).sum();
        Ok(self.tf_value(x, z) + pen / (2.0 * rho * mu))
    }

    /// The penalized saddle function whose min-max subproblems the outer
    /// loop solves:
    /// `f(x,y) + rho f~(x,y) + ||[lam+mu g~(x,y)]_+||^2/(2mu)
    ///  - rho f~(x,z) - ||[lam+mu g~(x,z)]_+||^2/(2mu)`.
    pub fn eval_minimax_lagrangian(
        &self,
        x: &VecF,
        y: &VecF,
        z: &VecF,
        lam: &Multipliers,
        rho: f64,
        mu: f64,
    ) -> Result<f64> {
        if rho <= 0.0 || mu <= 0.0 {
            return Err(SolverError::InvalidInput("rho and mu must be positive".into()));
        }
        self.check_domains(x, &[y, z])?;
        let pen = |p: &VecF| -> f64 {
            let shifted = lam.as_vec() + &(self.g.value(x, p) * mu);
            positive_part(&shifted).mapv(|t| t * t).sum() / (2.0 * mu)
        };
        Ok(self.f_value(x, y) + rho * self.tf_value(x, y) + pen(y)
            - rho * self.tf_value(x, z)
            - pen(z))
    }

    /// Smoothness constant `L_k` of the coupling of the minimax subproblem.
    pub fn lipschitz_outer(&self, rho: f64, mu: f64, lam_norm: f64) -> f64 {
        let g = &self.g;
        self.f1.lipschitz_grad
            + 2.0 * rho * self.tf1.lipschitz_grad
            + 2.0 * mu * g.lipschitz_val * g.lipschitz_val
            + 2.0 * mu * g.sup_norm * g.lipschitz_grad
            + 2.0 * lam_norm * g.lipschitz_grad
    }

    /// Weak-convexity modulus of the minimax-subproblem coupling in the
    /// min block `(x, y)`. The penalty built from `g~(x, y)` is jointly
    /// convex up to constraint curvature, so only the negated z-side
    /// penalty contributes a `mu ||J_x||^2` term; everything else mirrors
    /// `lipschitz_outer`. Always at most `lipschitz_outer`.
    pub fn weak_convexity_outer(&self, rho: f64, mu: f64, lam_norm: f64) -> f64 {
        let g = &self.g;
        let wc = self.f1.lipschitz_grad
            + 2.0 * rho * self.tf1.lipschitz_grad
            + mu * g.lipschitz_val_x * g.lipschitz_val_x
            + 2.0 * mu * g.sup_norm * g.lipschitz_grad
            + 2.0 * lam_norm * g.lipschitz_grad;
        wc.min(self.lipschitz_outer(rho, mu, lam_norm))
    }

    /// Smoothness constant `L~_k` of the lower augmented Lagrangian in z.
    pub fn lipschitz_lower(&self, rho: f64, mu: f64, lam_norm: f64) -> f64 {
        let g = &self.g;
        self.tf1.lipschitz_grad
            + (mu * g.lipschitz_val * g.lipschitz_val
                + mu * g.sup_norm * g.lipschitz_grad
                + lam_norm * g.lipschitz_grad)
                / rho
    }
}

/// Standard multiplier update `[lam + mu g]_+`.
pub fn update_multiplier(lam: &Multipliers, mu: f64, g_val: &VecF) -> Multipliers {
    Multipliers(positive_part(&(lam.as_vec() + &(g_val * mu))))
}
