//! Volterra kernel family F(t, s), its time derivative, the covariance
//! R_F(t, s) = int_0^{t ^ s} F(t, r) F(s, r) dr, and the analytic inversion
//! data used by the operator builders.
//!
//! Conventions:
//! - F(t, s) = 0 for s > t (causality). Pointwise evaluation at a
//!   non-integrable spot (e.g. the diagonal of a rough fractional kernel)
//!   is an error; consumers that need mass near the diagonal must go
//!   through [`KernelSpec::cell_integral`], which absorbs the power-law
//!   endpoint by substitution.
//! - The fractional family F(t,s) = (1/Gamma(a)) f1(s) int_s^t (u-s)^{a-1}
//!   f2(u) du covers both the Riemann-Liouville variant and (after scaling)
//!   the fractional Brownian kernel with H > 1/2, so they share closed
//!   forms, quadrature hints and inversion data.
//! - A declared factorization F(t, s) = f(t) Fhat(t, s) with constant f is
//!   folded into the variant itself; a genuinely t-dependent factor keeps
//!   the cell-integral surface (sampling, shifts, densities) and drops the
//!   derivative/inversion machinery.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{FgError, Result};
use crate::expr::Expr;
use crate::grid_ops::TimeGrid;
use crate::quad::{integrate, QuadOpts};
use crate::scalar::Scalar;
use crate::special::{beta, gamma};

pub type Bivar<T> = Arc<dyn Fn(T, T) -> T + Send + Sync>;
pub type Univar<T> = Arc<dyn Fn(T) -> T + Send + Sync>;

/// A univariate factor (f, f1, f2, zeta, ...) with two bits of metadata the
/// numerics care about: an exact constant value when there is one (enables
/// closed forms and exact pointwise division) and the power-law exponent at
/// zero when the function behaves like C x^e there.
#[derive(Clone)]
pub struct SmoothFn<T> {
    eval: Univar<T>,
    constant: Option<T>,
    zero_exponent: Option<f64>,
}

impl<T: Scalar> SmoothFn<T> {
    pub fn constant(c: T) -> Self {
        Self {
            eval: Arc::new(move |_| c),
            constant: Some(c),
            zero_exponent: None,
        }
    }

    pub fn one() -> Self {
        Self::constant(T::one())
    }

    pub fn new(f: impl Fn(T) -> T + Send + Sync + 'static) -> Self {
        Self {
            eval: Arc::new(f),
            constant: None,
            zero_exponent: None,
        }
    }

    pub fn from_expr(expr: &Expr) -> Self {
        match expr.as_const() {
            Some(c) => Self::constant(T::of(c)),
            None => {
                let e = expr.clone();
                Self::new(move |x| e.eval1(x))
            }
        }
    }

    /// Pure power `x^e` (records the exponent for quadrature hints).
    pub fn power(e: f64) -> Self {
        let et = T::of(e);
        Self {
            eval: Arc::new(move |x: T| x.powf(et)),
            constant: if e == 0.0 { Some(T::one()) } else { None },
            zero_exponent: if e == 0.0 { None } else { Some(e) },
        }
    }

    pub fn with_zero_exponent(mut self, e: f64) -> Self {
        self.zero_exponent = Some(e);
        self
    }

    pub fn scaled(self, k: T) -> Self {
        if k == T::one() {
            return self;
        }
        let inner = self.eval.clone();
        Self {
            eval: Arc::new(move |x| k * (inner)(x)),
            constant: self.constant.map(|c| k * c),
            zero_exponent: self.zero_exponent,
        }
    }

    #[inline]
    pub fn eval(&self, x: T) -> T {
        (self.eval)(x)
    }

    pub fn as_const(&self) -> Option<T> {
        self.constant
    }

    pub fn zero_exponent(&self) -> Option<f64> {
        self.zero_exponent
    }
}

impl<T: Scalar> fmt::Debug for SmoothFn<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.constant {
            Some(c) => write!(f, "SmoothFn(const {c})"),
            None => write!(f, "SmoothFn(fn, zero_exp {:?})", self.zero_exponent),
        }
    }
}

/// The kernel Theta(r, t) of condition (A4). All built-in kernels use the
/// shift-invariant power form Theta(r, t) = (r - t)^p.
#[derive(Clone)]
pub enum ThetaForm<T> {
    Power(f64),
    General(Bivar<T>),
}

impl<T: Scalar> ThetaForm<T> {
    pub fn eval(&self, r: T, t: T) -> T {
        match self {
            ThetaForm::Power(p) => (r - t).powf(T::of(*p)),
            ThetaForm::General(f) => f(r, t),
        }
    }

    /// Exponent of Theta(r, t) in (r - t) near the diagonal, when known.
    pub fn diag_exponent(&self) -> Option<f64> {
        match self {
            ThetaForm::Power(p) => Some(*p),
            ThetaForm::General(_) => None,
        }
    }
}

impl<T: Scalar> fmt::Debug for ThetaForm<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThetaForm::Power(p) => write!(f, "Theta (r-t)^{p}"),
            ThetaForm::General(_) => write!(f, "Theta (general)"),
        }
    }
}

/// Data for the analytic K_F^{-1} route: Phi(t, s) = (t - s)^{power} / denom(s),
/// applied to g or to its derivative, with K_F^{-1} g = (d/dt K_Phi ...) / (scale * xi).
#[derive(Clone)]
pub struct PhiData<T> {
    pub power: f64,
    pub denom: SmoothFn<T>,
    pub xi: SmoothFn<T>,
    pub on_derivative: bool,
    pub scale: T,
}

/// Condition (A4) data. `theta`, `zeta1`, `zeta2` follow the paper's
/// fractional-example normalization: theta(r, t) = (r - t)^{-a},
/// zeta1 = Gamma(1 - a) f1, zeta2 = f2 (scaled by any constant kernel factor).
#[derive(Clone)]
pub struct InversionData<T> {
    pub theta: ThetaForm<T>,
    pub zeta1: SmoothFn<T>,
    pub zeta2: SmoothFn<T>,
    pub phi: Option<PhiData<T>>,
}

#[derive(Clone)]
pub enum KernelVariant<T> {
    /// Indicator kernel: F(t, s) = 1 for s <= t. Brownian motion.
    Identity,
    Constant(T),
    /// F(t, s) = f(s) for s <= t.
    Separable(SmoothFn<T>),
    /// The three-branch fractional Brownian kernel with Hurst index H.
    FbmLiouville { h: T, c_h: T, b_h: T },
    /// F(t, s) = (1/Gamma(alpha)) f1(s) int_s^t (u - s)^{alpha - 1} f2(u) du.
    RiemannLiouville {
        alpha: T,
        f1: SmoothFn<T>,
        f2: SmoothFn<T>,
    },
    Custom { f: Bivar<T>, df_dt: Bivar<T> },
}

impl<T: Scalar> fmt::Debug for PhiData<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "PhiData(power {}, on_derivative {}, scale {})",
            self.power, self.on_derivative, self.scale
        )
    }
}

impl<T: Scalar> fmt::Debug for InversionData<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "InversionData({:?}, zeta1 {:?}, zeta2 {:?}, phi {:?})",
            self.theta, self.zeta1, self.zeta2, self.phi
        )
    }
}

impl<T: Scalar> fmt::Debug for KernelSpec<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KernelSpec({:?}, T = {})", self.variant, self.horizon)
    }
}

impl<T: Scalar> fmt::Debug for KernelVariant<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelVariant::Identity => write!(f, "Identity"),
            KernelVariant::Constant(c) => write!(f, "Constant({c})"),
            KernelVariant::Separable(s) => write!(f, "Separable({s:?})"),
            KernelVariant::FbmLiouville { h, c_h, b_h } => {
                write!(f, "FbmLiouville(H={h}, c_H={c_h}, b_H={b_h})")
            }
            KernelVariant::RiemannLiouville { alpha, .. } => {
                write!(f, "RiemannLiouville(alpha={alpha})")
            }
            KernelVariant::Custom { .. } => write!(f, "Custom"),
        }
    }
}

/// Normalized view of the fractional family shared by `RiemannLiouville`
/// and `FbmLiouville` with H > 1/2:
/// F(t,s) = scale * (1/Gamma(alpha)) f1(s) int_s^t (u-s)^{alpha-1} f2(u) du.
#[derive(Clone)]
pub(crate) struct RlFamily<T> {
    pub alpha: T,
    pub f1: SmoothFn<T>,
    pub f2: SmoothFn<T>,
    pub scale: T,
}

#[derive(Clone)]
pub struct KernelSpec<T> {
    variant: KernelVariant<T>,
    inversion: Option<InversionData<T>>,
    horizon: T,
    outer_factor: Option<SmoothFn<T>>,
    quad: QuadOpts,
}

impl<T: Scalar> KernelSpec<T> {
    fn assemble(variant: KernelVariant<T>, horizon: T) -> Self {
        let mut spec = Self {
            variant,
            inversion: None,
            horizon,
            outer_factor: None,
            quad: QuadOpts::default(),
        };
        spec.inversion = spec.default_inversion();
        spec
    }

    pub fn identity(horizon: T) -> Self {
        Self::assemble(KernelVariant::Identity, horizon)
    }

    pub fn constant(c: T, horizon: T) -> Self {
        Self::assemble(KernelVariant::Constant(c), horizon)
    }

    pub fn separable(f: SmoothFn<T>, horizon: T) -> Self {
        Self::assemble(KernelVariant::Separable(f), horizon)
    }

    pub fn riemann_liouville(
        alpha: T,
        f1: SmoothFn<T>,
        f2: SmoothFn<T>,
        horizon: T,
    ) -> Result<Self> {
        if alpha <= T::zero() || alpha >= T::one() {
            return Err(FgError::Domain(format!(
                "alpha must lie in (0, 1), got {alpha}"
            )));
        }
        Ok(Self::assemble(
            KernelVariant::RiemannLiouville { alpha, f1, f2 },
            horizon,
        ))
    }

    /// Fractional Brownian kernel with the default normalizations:
    /// the literature c_H for H > 1/2, and for H < 1/2 a b_H computed so
    /// that Var(B_t) = t^{2H}.
    pub fn fbm(h: T, horizon: T) -> Result<Self> {
        if h <= T::zero() || h >= T::one() {
            return Err(FgError::Domain(format!("H must lie in (0, 1), got {h}")));
        }
        let half = T::of(0.5);
        let (c_h, b_h) = if h > half {
            let c = (h * (T::of(2.0) * h - T::one())
                / beta(T::of(2.0) - T::of(2.0) * h, h - half))
            .sqrt();
            (c, T::one())
        } else if h < half {
            // Normalize the bracket numerically at t = horizon; the bracket
            // is exactly self-similar, so Var(B_t) = t^{2H} follows.
            let probe = Self::assemble(
                KernelVariant::FbmLiouville {
                    h,
                    c_h: T::one(),
                    b_h: T::one(),
                },
                horizon,
            );
            let var = probe.covariance(horizon, horizon)?;
            if var <= T::zero() {
                return Err(FgError::Domain("fBm normalization failed".into()));
            }
            (T::one(), horizon.powf(h) / var.sqrt())
        } else {
            (T::one(), T::one())
        };
        Ok(Self::assemble(
            KernelVariant::FbmLiouville { h, c_h, b_h },
            horizon,
        ))
    }

    pub fn fbm_with_normalization(h: T, c_h: T, b_h: T, horizon: T) -> Result<Self> {
        if h <= T::zero() || h >= T::one() {
            return Err(FgError::Domain(format!("H must lie in (0, 1), got {h}")));
        }
        Ok(Self::assemble(
            KernelVariant::FbmLiouville { h, c_h, b_h },
            horizon,
        ))
    }

    pub fn custom(
        f: impl Fn(T, T) -> T + Send + Sync + 'static,
        df_dt: impl Fn(T, T) -> T + Send + Sync + 'static,
        horizon: T,
    ) -> Self {
        Self::assemble(
            KernelVariant::Custom {
                f: Arc::new(f),
                df_dt: Arc::new(df_dt),
            },
            horizon,
        )
    }

    /// Attach user-supplied (A4)/(A2) data (for `Custom` kernels).
    pub fn with_inversion_data(mut self, data: InversionData<T>) -> Self {
        self.inversion = Some(data);
        self
    }

    /// Rescale the kernel by a constant, folding the constant into the
    /// variant so every closed form and the inversion data stay valid.
    pub fn rescaled(self, c: T) -> Self {
        let horizon = self.horizon;
        let user_inversion = match &self.variant {
            KernelVariant::Custom { .. } => self.inversion.clone(),
            _ => None,
        };
        let variant = match self.variant {
            KernelVariant::Identity => KernelVariant::Constant(c),
            KernelVariant::Constant(k) => KernelVariant::Constant(c * k),
            KernelVariant::Separable(f) => KernelVariant::Separable(f.scaled(c)),
            KernelVariant::FbmLiouville { h, c_h, b_h } => {
                if (h - T::of(0.5)).abs() < T::of(1e-12) {
                    KernelVariant::Constant(c)
                } else {
                    KernelVariant::FbmLiouville {
                        h,
                        c_h: c * c_h,
                        b_h: c * b_h,
                    }
                }
            }
            KernelVariant::RiemannLiouville { alpha, f1, f2 } => KernelVariant::RiemannLiouville {
                alpha,
                f1,
                f2: f2.scaled(c),
            },
            KernelVariant::Custom { f, df_dt } => {
                let f2 = f.clone();
                let d2 = df_dt.clone();
                KernelVariant::Custom {
                    f: Arc::new(move |t, s| c * f2(t, s)),
                    df_dt: Arc::new(move |t, s| c * d2(t, s)),
                }
            }
        };
        let mut spec = Self::assemble(variant, horizon);
        if let Some(inv) = user_inversion {
            // a user-declared (A4) datum survives rescaling via zeta2 -> c zeta2
            spec.inversion = Some(InversionData {
                zeta2: inv.zeta2.scaled(c),
                ..inv
            });
        }
        spec
    }

    /// Declare the factorization F(t, s) = f(t) * Fhat(t, s) of the
    /// quasi-invariance theorem. A constant factor is folded into the
    /// kernel; a genuine t-dependence restricts the spec to the
    /// cell-integral surface (sampling, shifts, densities).
    pub fn with_outer_factor(self, f: SmoothFn<T>) -> Self {
        match f.as_const() {
            Some(c) => self.rescaled(c),
            None => {
                let mut spec = self;
                spec.inversion = None;
                spec.outer_factor = Some(f);
                spec
            }
        }
    }

    pub fn horizon(&self) -> T {
        self.horizon
    }

    pub fn variant(&self) -> &KernelVariant<T> {
        &self.variant
    }

    pub fn inversion(&self) -> Option<&InversionData<T>> {
        self.inversion.as_ref()
    }

    pub fn outer_factor(&self) -> Option<&SmoothFn<T>> {
        self.outer_factor.as_ref()
    }

    pub fn quad_opts(&self) -> &QuadOpts {
        &self.quad
    }

    #[inline]
    fn factor_at(&self, t: T) -> T {
        match &self.outer_factor {
            Some(f) => f.eval(t),
            None => T::one(),
        }
    }

    pub(crate) fn rl_family(&self) -> Option<RlFamily<T>> {
        if self.outer_factor.is_some() {
            return None;
        }
        match &self.variant {
            KernelVariant::RiemannLiouville { alpha, f1, f2 } => Some(RlFamily {
                alpha: *alpha,
                f1: f1.clone(),
                f2: f2.clone(),
                scale: T::one(),
            }),
            KernelVariant::FbmLiouville { h, c_h, .. } if *h > T::of(0.5) => {
                let half = T::of(0.5);
                let alpha = *h - half;
                Some(RlFamily {
                    alpha,
                    f1: SmoothFn::power((half - *h).to_f64_lossy()),
                    f2: SmoothFn::power((*h - half).to_f64_lossy()),
                    scale: *c_h * gamma(alpha),
                })
            }
            _ => None,
        }
    }

    fn default_inversion(&self) -> Option<InversionData<T>> {
        match &self.variant {
            KernelVariant::Identity => Some(InversionData {
                theta: ThetaForm::Power(0.0),
                zeta1: SmoothFn::one(),
                zeta2: SmoothFn::one(),
                phi: Some(PhiData {
                    power: 0.0,
                    denom: SmoothFn::one(),
                    xi: SmoothFn::one(),
                    on_derivative: true,
                    scale: T::one(),
                }),
            }),
            KernelVariant::Constant(c) => Some(InversionData {
                theta: ThetaForm::Power(0.0),
                zeta1: SmoothFn::one(),
                zeta2: SmoothFn::constant(*c),
                phi: Some(PhiData {
                    power: 0.0,
                    denom: SmoothFn::one(),
                    xi: SmoothFn::constant(*c),
                    on_derivative: true,
                    scale: T::one(),
                }),
            }),
            KernelVariant::Separable(f) => Some(InversionData {
                theta: ThetaForm::Power(0.0),
                zeta1: SmoothFn::one(),
                zeta2: f.clone(),
                phi: Some(PhiData {
                    power: 0.0,
                    denom: SmoothFn::one(),
                    xi: f.clone(),
                    on_derivative: true,
                    scale: T::one(),
                }),
            }),
            KernelVariant::RiemannLiouville { .. } | KernelVariant::FbmLiouville { .. } => {
                let rl = self.rl_family()?;
                let alpha = rl.alpha;
                let g1a = gamma(T::one() - alpha);
                Some(InversionData {
                    theta: ThetaForm::Power((-alpha).to_f64_lossy()),
                    zeta1: rl.f1.clone().scaled(g1a),
                    zeta2: rl.f2.clone().scaled(rl.scale),
                    phi: Some(PhiData {
                        power: (-alpha).to_f64_lossy(),
                        denom: rl.f2.clone(),
                        xi: rl.f1.clone(),
                        on_derivative: true,
                        scale: g1a * rl.scale,
                    }),
                })
            }
            KernelVariant::Custom { .. } => None,
        }
    }

    /// Power-law exponent of F(t, .) at s -> 0+, when singular/fractional.
    pub(crate) fn sing_left(&self) -> Option<f64> {
        match &self.variant {
            KernelVariant::FbmLiouville { h, .. } => {
                let h = h.to_f64_lossy();
                if (h - 0.5).abs() < 1e-12 {
                    None
                } else {
                    Some(-(h - 0.5).abs())
                }
            }
            KernelVariant::RiemannLiouville { f1, .. } => f1.zero_exponent(),
            KernelVariant::Separable(f) => f.zero_exponent(),
            _ => None,
        }
    }

    /// Power-law exponent of F(t, .) at s -> t-, when fractional.
    pub(crate) fn sing_diag(&self) -> Option<f64> {
        match &self.variant {
            KernelVariant::FbmLiouville { h, .. } => {
                let h = h.to_f64_lossy();
                if (h - 0.5).abs() < 1e-12 {
                    None
                } else {
                    Some(h - 0.5)
                }
            }
            KernelVariant::RiemannLiouville { alpha, .. } => Some(alpha.to_f64_lossy()),
            _ => None,
        }
    }

    /// Exponent of dF/dt(t, .) at s -> t-.
    pub(crate) fn sing_diag_df(&self) -> Option<f64> {
        match &self.variant {
            KernelVariant::FbmLiouville { h, .. } => Some(h.to_f64_lossy() - 1.5),
            KernelVariant::RiemannLiouville { alpha, .. } => Some(alpha.to_f64_lossy() - 1.0),
            _ => None,
        }
    }

    /// Raw evaluation: total function, may return +-inf or NaN at singular
    /// spots. Quadrature uses this; the public [`eval`](Self::eval) guards it.
    pub(crate) fn eval_raw(&self, t: T, s: T) -> T {
        if s > t {
            return T::zero();
        }
        let base = match &self.variant {
            KernelVariant::Identity => T::one(),
            KernelVariant::Constant(c) => *c,
            KernelVariant::Separable(f) => f.eval(s),
            KernelVariant::FbmLiouville { h, c_h, b_h } => {
                let half = T::of(0.5);
                if (*h - half).abs() < T::of(1e-12) {
                    T::one()
                } else if *h > half {
                    rl_eval(
                        &RlFamily {
                            alpha: *h - half,
                            f1: SmoothFn::power((half - *h).to_f64_lossy()),
                            f2: SmoothFn::power((*h - half).to_f64_lossy()),
                            scale: *c_h * gamma(*h - half),
                        },
                        t,
                        s,
                        &self.quad,
                    )
                } else {
                    if s <= T::zero() || s >= t {
                        return T::infinity();
                    }
                    let hm = *h - half;
                    let first = (t * (t - s) / s).powf(hm);
                    let inner = fbm_low_inner(*h, t, s, &self.quad);
                    *b_h * (first - hm * s.powf(-hm) * inner)
                }
            }
            KernelVariant::RiemannLiouville { .. } => {
                let rl = self.rl_family().expect("RL family without outer factor");
                rl_eval(&rl, t, s, &self.quad)
            }
            KernelVariant::Custom { f, .. } => f(t, s),
        };
        match &self.outer_factor {
            Some(f) => f.eval(t) * base,
            None => base,
        }
    }

    /// F(t, s). Volterra: returns 0 for s > t. Errors on non-finite spots.
    pub fn eval(&self, t: T, s: T) -> Result<T> {
        let v = self.eval_raw(t, s);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(FgError::NonFinite {
                t: t.to_f64_lossy(),
                s: s.to_f64_lossy(),
                reason: "kernel is singular here; use cell_integral".into(),
            })
        }
    }

    /// dF/dt(t, s) for s < t.
    pub fn df_dt(&self, t: T, s: T) -> Result<T> {
        if s > t {
            return Ok(T::zero());
        }
        if self.outer_factor.is_some() {
            return Err(FgError::UnsupportedKernel(
                "dF/dt is not available with a non-constant outer factor".into(),
            ));
        }
        let v = match &self.variant {
            KernelVariant::Identity | KernelVariant::Constant(_) | KernelVariant::Separable(_) => {
                T::zero()
            }
            KernelVariant::FbmLiouville { h, c_h, b_h } => {
                let half = T::of(0.5);
                if (*h - half).abs() < T::of(1e-12) {
                    T::zero()
                } else {
                    // Both branches collapse to C (s/t)^{1/2-H} (t-s)^{H-3/2}.
                    let c = if *h > half { *c_h } else { *b_h * (*h - half) };
                    c * (s / t).powf(half - *h) * (t - s).powf(*h - T::of(1.5))
                }
            }
            KernelVariant::RiemannLiouville { alpha, f1, f2 } => {
                (t - s).powf(*alpha - T::one()) * f1.eval(s) * f2.eval(t) / gamma(*alpha)
            }
            KernelVariant::Custom { df_dt, .. } => df_dt(t, s),
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(FgError::NonFinite {
                t: t.to_f64_lossy(),
                s: s.to_f64_lossy(),
                reason: "dF/dt is singular here".into(),
            })
        }
    }

    /// int_a^b F(t, s) ds for 0 <= a < b <= t.
    pub fn cell_integral(&self, t: T, a: T, b: T) -> Result<T> {
        let b = if b > t { t } else { b };
        if b <= a {
            return Ok(T::zero());
        }
        // The outer factor is constant in s, so closed forms just pick up f(t).
        let factor = self.factor_at(t);
        match &self.variant {
            KernelVariant::Identity => Ok(factor * (b - a)),
            KernelVariant::Constant(c) => Ok(factor * *c * (b - a)),
            KernelVariant::Separable(f) => match f.as_const() {
                Some(c) => Ok(factor * c * (b - a)),
                None => {
                    let left = if a == T::zero() { f.zero_exponent() } else { None };
                    Ok(factor * integrate(&|s| f.eval(s), a, b, left, None, &self.quad)?)
                }
            },
            KernelVariant::RiemannLiouville { .. } | KernelVariant::FbmLiouville { .. }
                if self.fractional_const_closed_form().is_some() =>
            {
                let k = self.fractional_const_closed_form().unwrap();
                let rl = self.rl_family().unwrap();
                let ap1 = rl.alpha + T::one();
                Ok(factor * k * ((t - a).powf(ap1) - (t - b).powf(ap1)) / ap1)
            }
            _ => {
                let left = if a == T::zero() { self.sing_left() } else { None };
                let right = if b == t { self.sing_diag() } else { None };
                // eval_raw already carries any outer factor
                integrate(&|s| self.eval_raw(t, s), a, b, left, right, &self.quad)
            }
        }
    }

    /// When the fractional kernel has constant f1, f2: F(t,s) = k (t-s)^alpha.
    fn fractional_const_closed_form(&self) -> Option<T> {
        let rl = self.rl_family()?;
        let c1 = rl.f1.as_const()?;
        let c2 = rl.f2.as_const()?;
        Some(rl.scale * c1 * c2 / gamma(rl.alpha + T::one()))
    }

    /// int_a^b F(s, t) ds for t <= a < b (integration over the first slot).
    pub fn cell_integral_first(&self, t: T, a: T, b: T) -> Result<T> {
        if b <= a {
            return Ok(T::zero());
        }
        if self.outer_factor.is_none() {
            match &self.variant {
                KernelVariant::Identity => return Ok(b - a),
                KernelVariant::Constant(c) => return Ok(*c * (b - a)),
                KernelVariant::Separable(f) => return Ok(f.eval(t) * (b - a)),
                _ => {
                    if let Some(k) = self.fractional_const_closed_form() {
                        let rl = self.rl_family().unwrap();
                        let ap1 = rl.alpha + T::one();
                        return Ok(k * ((b - t).powf(ap1) - (a - t).powf(ap1)) / ap1);
                    }
                }
            }
        }
        let left = if a == t { self.sing_diag() } else { None };
        integrate(&|s| self.eval_raw(s, t), a, b, left, None, &self.quad)
    }

    /// Covariance R_F(t, s) = int_0^{t ^ s} F(t, r) F(s, r) dr.
    pub fn covariance(&self, t: T, s: T) -> Result<T> {
        let m = t.min(s);
        if m <= T::zero() {
            return Ok(T::zero());
        }
        let factor = self.factor_at(t) * self.factor_at(s);
        match &self.variant {
            KernelVariant::Identity => Ok(factor * m),
            KernelVariant::Constant(c) => Ok(factor * *c * *c * m),
            KernelVariant::Separable(f) => {
                let v = match f.as_const() {
                    Some(c) => c * c * m,
                    None => {
                        let left = f.zero_exponent().map(|e| 2.0 * e);
                        integrate(&|r| f.eval(r).sq(), T::zero(), m, left, None, &self.quad)?
                    }
                };
                Ok(factor * v)
            }
            _ => {
                let near_diag = (t - s).abs() < T::of(1e-14) * self.horizon;
                let right = self
                    .sing_diag()
                    .map(|p| if near_diag { 2.0 * p } else { p });
                if let Some(p) = right {
                    if p <= -1.0 {
                        return Err(FgError::NonIntegrable(
                            "kernel square is not integrable up to the diagonal".into(),
                        ));
                    }
                }
                let left = self.sing_left().map(|e| 2.0 * e);
                integrate(
                    &|r| self.eval_raw(t, r) * self.eval_raw(s, r),
                    T::zero(),
                    m,
                    left,
                    right,
                    &self.quad,
                )
            }
        }
    }

    /// phi(u, v) = int_0^{u ^ v} dF/du (u, r) dF/dv (v, r) dr.
    pub fn phi(&self, u: T, v: T) -> Result<T> {
        let m = u.min(v);
        if m <= T::zero() {
            return Ok(T::zero());
        }
        match &self.variant {
            KernelVariant::Identity | KernelVariant::Constant(_) | KernelVariant::Separable(_) => {
                Ok(T::zero())
            }
            _ => {
                let p = self.sing_diag_df();
                let near_diag = (u - v).abs() < T::of(1e-14) * self.horizon;
                let right = p.map(|p| if near_diag { 2.0 * p } else { p });
                if let Some(p) = right {
                    if p <= -1.0 {
                        return Err(FgError::NonIntegrable(
                            "dF/dt product is not integrable up to the diagonal".into(),
                        ));
                    }
                }
                let left = match &self.variant {
                    KernelVariant::FbmLiouville { h, .. } => Some(2.0 * (0.5 - h.to_f64_lossy())),
                    KernelVariant::RiemannLiouville { f1, .. } => {
                        f1.zero_exponent().map(|e| 2.0 * e)
                    }
                    _ => None,
                }
                .filter(|e| e.abs() > 1e-12);
                let f = |r: T| self.df_dt_raw(u, r) * self.df_dt_raw(v, r);
                integrate(&f, T::zero(), m, left, right, &self.quad)
            }
        }
    }

    pub(crate) fn df_dt_raw(&self, t: T, s: T) -> T {
        self.df_dt(t, s).unwrap_or_else(|_| T::infinity())
    }

    /// Advisory checks of the standing assumptions on a grid lattice.
    pub fn validate(&self, grid: &TimeGrid<T>) -> ValidationReport {
        let mut notes = Vec::new();
        let t_max = self.horizon;
        let lattice: Vec<T> = (1..=8).map(|k| t_max * T::of(k as f64 / 8.0)).collect();

        // || F ||_{L^2([0,T]^2)} estimate via int_0^T R(t, t) dt (trapezoid).
        let mut sq_f = true;
        let mut acc = T::zero();
        let mut prev_t = T::zero();
        let mut prev_v = T::zero();
        for &t in &lattice {
            match self.covariance(t, t) {
                Ok(v) => {
                    acc = acc + (v + prev_v).half() * (t - prev_t);
                    prev_t = t;
                    prev_v = v;
                }
                Err(e) => {
                    sq_f = false;
                    notes.push(format!("R(t,t) failed at t={t}: {e}"));
                    break;
                }
            }
        }
        if !acc.is_finite() {
            sq_f = false;
        }

        let mut nondeg = true;
        let scale = prev_v.abs() + T::of(1e-300);
        'outer: for &t in &lattice {
            for &s in &lattice {
                match self.covariance(t, s) {
                    Ok(v) => {
                        if v.abs() <= T::of(1e-14) * scale {
                            nondeg = false;
                            notes.push(format!("R({t},{s}) is numerically zero"));
                            break 'outer;
                        }
                    }
                    Err(_) => {
                        nondeg = false;
                        break 'outer;
                    }
                }
            }
        }

        let df_sq = self.df_dt_square_integrable(grid);

        let mut a4_hold = None;
        let mut a4_res = None;
        let mut theta_shift = None;
        let mut zeta_sq = None;
        if let Some(inv) = &self.inversion {
            theta_shift = Some(self.theta_shift_invariant(inv));
            zeta_sq = Some(self.zeta_square_integrable(inv, &mut notes));
            match self.a4_residual(inv) {
                Ok(res) => {
                    a4_res = Some(res);
                    a4_hold = Some(res < 1e-4);
                }
                Err(e) => {
                    notes.push(format!("(A4) check failed to evaluate: {e}"));
                    a4_hold = Some(false);
                }
            }
        }

        ValidationReport {
            square_integrable_f: sq_f,
            nondegenerate_covariance: nondeg,
            df_dt_square_integrable: df_sq,
            inversion_data_present: self.inversion.is_some(),
            a4_identities_hold: a4_hold,
            a4_max_rel_residual: a4_res,
            theta_shift_invariant: theta_shift,
            zeta_square_integrable: zeta_sq,
            notes,
        }
    }

    fn df_dt_square_integrable(&self, _grid: &TimeGrid<T>) -> bool {
        match &self.variant {
            KernelVariant::Identity | KernelVariant::Constant(_) | KernelVariant::Separable(_) => {
                return true;
            }
            _ => {}
        }
        if self.outer_factor.is_some() {
            return false;
        }
        // Divergence is detected as growth of the diagonal-clipped square
        // integral under clip refinement.
        let t = self.horizon;
        let tail = |delta: T| -> Option<T> {
            let f = |s: T| self.df_dt_raw(t, s).sq();
            integrate(
                &f,
                t * T::of(0.25),
                t - delta,
                None,
                None,
                &QuadOpts::with_rel_tol(1e-7),
            )
            .ok()
        };
        let d1 = t * T::of(2e-3);
        let d2 = d1 / T::of(4.0);
        match (tail(d1), tail(d2)) {
            (Some(e1), Some(e2)) if e1 > T::zero() => (e2 / e1) < T::of(1.15),
            _ => false,
        }
    }

    fn theta_shift_invariant(&self, inv: &InversionData<T>) -> bool {
        match &inv.theta {
            ThetaForm::Power(_) => true,
            ThetaForm::General(f) => {
                let t_max = self.horizon;
                let h = t_max * T::of(1e-3);
                let mut worst = T::zero();
                for k in 1..=4 {
                    for j in (k + 1)..=5 {
                        let t = t_max * T::of(k as f64 / 6.0);
                        let r = t_max * T::of(j as f64 / 6.0);
                        let dr = (f(r + h, t) - f(r - h, t)) / (T::of(2.0) * h);
                        let dt = (f(r, t + h) - f(r, t - h)) / (T::of(2.0) * h);
                        let scale = dr.abs() + dt.abs() + T::of(1e-300);
                        worst = worst.max((dr + dt).abs() / scale);
                    }
                }
                worst < T::of(1e-8)
            }
        }
    }

    fn zeta_square_integrable(&self, inv: &InversionData<T>, notes: &mut Vec<String>) -> bool {
        let check = |f: &SmoothFn<T>, invert: bool| -> bool {
            let e = f.zero_exponent().unwrap_or(0.0) * if invert { -2.0 } else { 2.0 };
            if e <= -1.0 {
                return false;
            }
            let g = |x: T| {
                let v = f.eval(x);
                if invert {
                    (T::one() / v).sq()
                } else {
                    v.sq()
                }
            };
            integrate(
                &g,
                T::zero(),
                self.horizon,
                Some(e).filter(|e| e.abs() > 1e-12),
                None,
                &QuadOpts::with_rel_tol(1e-6),
            )
            .map(|v| v.is_finite())
            .unwrap_or(false)
        };
        let ok = check(&inv.zeta1, false)
            && check(&inv.zeta1, true)
            && check(&inv.zeta2, false)
            && check(&inv.zeta2, true);
        if !ok {
            notes.push("zeta1/zeta2 or a reciprocal failed the L2 estimate".into());
        }
        ok
    }

    /// Max relative residual of the two integral identities in (A4) over a
    /// small (t, r) lattice.
    pub(crate) fn a4_residual(&self, inv: &InversionData<T>) -> Result<f64> {
        let mut worst = 0.0f64;
        let t_max = self.horizon;
        let opts = QuadOpts::with_rel_tol(1e-9);
        let theta_p = inv.theta.diag_exponent().filter(|p| p.abs() > 1e-12);
        for (ti, ri) in [(1usize, 4usize), (2, 5), (1, 6), (3, 7)] {
            let t = t_max * T::of(ti as f64 / 8.0);
            let r = t_max * T::of(ri as f64 / 8.0);
            // first: F(r,r) Theta(r,t)/zeta1(r) + int_t^r Theta(s,t)/zeta1(s) dF(r,s)/dr ds = zeta2(r)
            let diag = match self.sing_diag() {
                Some(p) if p > 0.0 => T::zero(),
                Some(_) => {
                    return Err(FgError::UnsupportedKernel(
                        "(A4) first identity needs finite F(r, r)".into(),
                    ))
                }
                None => self.eval(r, r)? * inv.theta.eval(r, t) / inv.zeta1.eval(r),
            };
            let f1_diag = self.sing_diag_df();
            let integrand = |s: T| inv.theta.eval(s, t) / inv.zeta1.eval(s) * self.df_dt_raw(r, s);
            let lhs1 = diag + integrate(&integrand, t, r, theta_p, f1_diag, &opts)?;
            let z2 = inv.zeta2.eval(r);
            worst = worst.max(((lhs1 - z2).abs() / (z2.abs() + T::of(1e-300))).to_f64_lossy());

            // second: F(t,t) Theta(r,t)/zeta2(t) + int_t^r dF(s,t)/ds Theta(r,s)/zeta2(s) ds = zeta1(t)
            let diag2 = match self.sing_diag() {
                Some(p) if p > 0.0 => T::zero(),
                Some(_) => {
                    return Err(FgError::UnsupportedKernel(
                        "(A4) second identity needs finite F(t, t)".into(),
                    ))
                }
                None => self.eval(t, t)? * inv.theta.eval(r, t) / inv.zeta2.eval(t),
            };
            let integrand2 = |s: T| self.df_dt_raw(s, t) * inv.theta.eval(r, s) / inv.zeta2.eval(s);
            let lhs2 = diag2 + integrate(&integrand2, t, r, f1_diag, theta_p, &opts)?;
            let z1 = inv.zeta1.eval(t);
            worst = worst.max(((lhs2 - z1).abs() / (z1.abs() + T::of(1e-300))).to_f64_lossy());
        }
        Ok(worst)
    }
}

fn rl_eval<T: Scalar>(rl: &RlFamily<T>, t: T, s: T, opts: &QuadOpts) -> T {
    if s >= t {
        return T::zero();
    }
    let alpha = rl.alpha;
    let inner = match rl.f2.as_const() {
        Some(c2) => c2 * (t - s).powf(alpha) / alpha,
        None => {
            // u = s + v^{1/alpha} flattens (u-s)^{alpha-1} exactly.
            let q = T::one() / alpha;
            let vmax = (t - s).powf(alpha);
            let f2 = rl.f2.clone();
            let g = move |v: T| f2.eval(s + v.powf(q)) / alpha;
            integrate(&g, T::zero(), vmax, None, None, opts).unwrap_or_else(|_| T::nan())
        }
    };
    rl.scale * rl.f1.eval(s) * inner / gamma(alpha)
}

fn fbm_low_inner<T: Scalar>(h: T, t: T, s: T, _opts: &QuadOpts) -> T {
    // int_s^t (u-s)^{H-1/2} u^{H-3/2} du, H < 1/2. The substitution x = s/u
    // turns this into s^{2H-1} int_{s/t}^1 x^{-2H} (1-x)^{H-1/2} dx, an
    // incomplete Beta with parameters a = 1-2H, b = H+1/2 (both positive),
    // which stays well conditioned uniformly in s.
    let hf = h.to_f64_lossy();
    let a = 1.0 - 2.0 * hf;
    let b = hf + 0.5;
    let z = (s / t).to_f64_lossy().clamp(0.0, 1.0);
    let tail = statrs::function::beta::beta(a, b) * (1.0 - statrs::function::beta::beta_reg(a, b, z));
    s.powf(T::of(2.0) * h - T::one()) * T::of(tail)
}

/// Advisory report from [`KernelSpec::validate`].
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub square_integrable_f: bool,
    pub nondegenerate_covariance: bool,
    pub df_dt_square_integrable: bool,
    pub inversion_data_present: bool,
    pub a4_identities_hold: Option<bool>,
    pub a4_max_rel_residual: Option<f64>,
    pub theta_shift_invariant: Option<bool>,
    pub zeta_square_integrable: Option<bool>,
    pub notes: Vec<String>,
}
