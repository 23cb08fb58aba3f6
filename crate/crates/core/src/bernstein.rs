//! Bernstein functions, their Lévy measures, the jump kernels of the
//! subordinate Brownian motions they generate, and the scaling checks
//! used to qualify a family.
//!
//! A [`BernsteinSpec`] is written `Ψ(u) = b·u + Ψ_j(u)` where `Ψ_j` is the
//! pure-jump part of one of the closed-form families. Families whose
//! parameters make them purely local (`stable` with `α = 2`, `local`)
//! contribute to the drift instead.
//!
//! Jump densities are available through three routes:
//!
//! * `Closed`: `j(r) = Σ A(α) r^{-1-α}` for stable components,
//!   `A(α) = sin(πα/2) Γ(1+α) / π`.
//! * `Subordination`: `j(r) = ∫ (4πt)^{-1/2} e^{-r²/4t} μ(dt)` for families
//!   with an explicit Lévy measure.
//! * `Spectral`: `j(r) = π^{-1} ∫_0^∞ Im Ψ(-w² + i0) e^{-rw} dw`, valid for
//!   every complete Bernstein function.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::quad::{integrate, integrate_positive_axis, QuadOptions};

/// Relative tolerance for every kernel quadrature.
pub const KERNEL_REL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    /// `u^{α/2}`, `α ∈ (0, 2]`.
    Stable { alpha: f64 },
    /// `(u + m^{2/α})^{α/2} − m`, `α ∈ (0, 2)`, `m > 0`.
    Relativistic { alpha: f64, m: f64 },
    /// `u^{α/2} + u^{β/2}`, `α, β ∈ (0, 2]`.
    SumStable { alpha: f64, beta: f64 },
    /// `u^{α/2} (log(1+u))^{-β/2}`, `α ∈ (0, 2]`, `β ∈ [0, α)`.
    LogDamped { alpha: f64, beta: f64 },
    /// `u^{α/2} (log(1+u))^{β/2}`, `α ∈ (0, 2)`, `β ∈ (0, 2 − α)`.
    LogBoosted { alpha: f64, beta: f64 },
    /// `u`: the Laplacian itself.
    Local,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Stable { .. } => "stable",
            Family::Relativistic { .. } => "relativistic",
            Family::SumStable { .. } => "sum_stable",
            Family::LogDamped { .. } => "log_damped",
            Family::LogBoosted { .. } => "log_boosted",
            Family::Local => "local",
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::ParameterDomain(format!("{}: {msg}", self.name())));
        let in_open_closed = |x: f64| x > 0.0 && x <= 2.0;
        match *self {
            Family::Stable { alpha } if !in_open_closed(alpha) => {
                bad(format!("alpha={alpha} outside (0, 2]"))
            }
            Family::Relativistic { alpha, m } => {
                if !(alpha > 0.0 && alpha < 2.0) {
                    bad(format!("alpha={alpha} outside (0, 2)"))
                } else if !(m > 0.0 && m.is_finite()) {
                    bad(format!("m={m} must be positive"))
                } else {
                    Ok(())
                }
            }
            Family::SumStable { alpha, beta } => {
                if !in_open_closed(alpha) || !in_open_closed(beta) {
                    bad(format!("alpha={alpha}, beta={beta} must lie in (0, 2]"))
                } else {
                    Ok(())
                }
            }
            Family::LogDamped { alpha, beta } => {
                if !in_open_closed(alpha) {
                    bad(format!("alpha={alpha} outside (0, 2]"))
                } else if !(beta >= 0.0 && beta < alpha) {
                    bad(format!("beta={beta} outside [0, alpha)"))
                } else {
                    Ok(())
                }
            }
            Family::LogBoosted { alpha, beta } => {
                if !(alpha > 0.0 && alpha < 2.0) {
                    bad(format!("alpha={alpha} outside (0, 2)"))
                } else if !(beta > 0.0 && beta < 2.0 - alpha) {
                    bad(format!("beta={beta} outside (0, 2 - alpha)"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// `LogDamped` with `β = 0` is the stable family.
    fn reduced(&self) -> Family {
        match *self {
            Family::LogDamped { alpha, beta: 0.0 } => Family::Stable { alpha },
            other => other,
        }
    }
}

/// Symbolic descriptor of a Bernstein function `Ψ(u) = b·u + Ψ_j(u)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BernsteinSpec {
    pub family: Family,
    pub drift_b: f64,
    pub dimension_d: u32,
}

fn stable_constant(alpha: f64) -> f64 {
    (PI * alpha / 2.0).sin() * libm::tgamma(1.0 + alpha) / PI
}

fn stable_measure_constant(a: f64) -> f64 {
    a / libm::tgamma(1.0 - a)
}

/// Im Ψ_stable(−s + i0) for `Ψ(u) = u^{α/2}`; zero when `α = 2`.
fn stable_cut(alpha: f64, s: f64) -> f64 {
    if alpha >= 2.0 {
        0.0
    } else {
        let a = alpha / 2.0;
        s.powf(a) * (PI * a).sin()
    }
}

fn stable_jump(alpha: f64, u: f64) -> f64 {
    if alpha >= 2.0 {
        0.0
    } else {
        u.powf(alpha / 2.0)
    }
}

/// Im of `(−s)^a (log(1 − s))^p` with the boundary value taken from the
/// upper half plane.
fn log_family_cut(a: f64, p: f64, s: f64) -> f64 {
    let (modulus, arg) = if s < 1.0 {
        ((-s).ln_1p().abs(), PI)
    } else if s > 1.0 {
        let re = (s - 1.0).ln();
        (re.hypot(PI), PI.atan2(re))
    } else {
        return 0.0;
    };
    if modulus == 0.0 {
        return 0.0;
    }
    s.powf(a) * modulus.powf(p) * (PI * a + p * arg).sin()
}

/// `γ(3, x) = ∫_0^x z² e^{-z} dz`, accurate for small `x`.
fn lower_gamma3(x: f64) -> f64 {
    if x < 0.5 {
        let mut term = x * x * x;
        let mut sum = 0.0;
        for k in 0..20 {
            sum += term / (k as f64 + 3.0);
            term *= -x / (k as f64 + 1.0);
        }
        sum
    } else {
        2.0 - (-x).exp() * (x * x + 2.0 * x + 2.0)
    }
}

/// `1 − e^{-x}(1 + x)`, accurate for small `x`.
fn one_minus_exp_linear(x: f64) -> f64 {
    if x < 0.5 {
        let mut sum = 0.0;
        let mut pow = x * x / 2.0;
        for k in 2..24 {
            sum += pow * (k as f64 - 1.0);
            pow *= -x / (k as f64 + 1.0);
        }
        sum
    } else {
        1.0 - (-x).exp() * (1.0 + x)
    }
}

impl BernsteinSpec {
    pub fn new(family: Family, drift_b: f64) -> Result<Self> {
        family.validate()?;
        if !(drift_b >= 0.0 && drift_b.is_finite()) {
            return Err(Error::ParameterDomain(format!(
                "drift b={drift_b} must be a nonnegative finite number"
            )));
        }
        Ok(BernsteinSpec {
            family,
            drift_b,
            dimension_d: 1,
        })
    }

    pub fn stable(alpha: f64) -> Result<Self> {
        Self::new(Family::Stable { alpha }, 0.0)
    }

    pub fn relativistic(alpha: f64, m: f64) -> Result<Self> {
        Self::new(Family::Relativistic { alpha, m }, 0.0)
    }

    pub fn sum_stable(alpha: f64, beta: f64) -> Result<Self> {
        Self::new(Family::SumStable { alpha, beta }, 0.0)
    }

    pub fn log_damped(alpha: f64, beta: f64) -> Result<Self> {
        Self::new(Family::LogDamped { alpha, beta }, 0.0)
    }

    pub fn log_boosted(alpha: f64, beta: f64) -> Result<Self> {
        Self::new(Family::LogBoosted { alpha, beta }, 0.0)
    }

    pub fn local() -> Self {
        BernsteinSpec {
            family: Family::Local,
            drift_b: 0.0,
            dimension_d: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.family.validate()?;
        if !(self.drift_b >= 0.0 && self.drift_b.is_finite()) {
            return Err(Error::ParameterDomain(format!("drift b={}", self.drift_b)));
        }
        if self.dimension_d == 0 {
            return Err(Error::ParameterDomain("dimension must be positive".into()));
        }
        Ok(())
    }

    /// Coefficient of `u` in `Ψ`: the explicit drift plus any purely local
    /// component of the family.
    pub fn diffusion_coefficient(&self) -> f64 {
        let implied = match self.family.reduced() {
            Family::Local => 1.0,
            Family::Stable { alpha } if alpha >= 2.0 => 1.0,
            Family::SumStable { alpha, beta } => {
                f64::from(u8::from(alpha >= 2.0)) + f64::from(u8::from(beta >= 2.0))
            }
            _ => 0.0,
        };
        self.drift_b + implied
    }

    pub fn has_jumps(&self) -> bool {
        match self.family.reduced() {
            Family::Local => false,
            Family::Stable { alpha } => alpha < 2.0,
            Family::SumStable { alpha, beta } => alpha < 2.0 || beta < 2.0,
            _ => true,
        }
    }

    /// Pure-jump part `Ψ_j(u)` (real `u ≥ 0`).
    pub fn psi_jump(&self, u: f64) -> f64 {
        if u == 0.0 {
            return 0.0;
        }
        match self.family.reduced() {
            Family::Stable { alpha } => stable_jump(alpha, u),
            Family::Relativistic { alpha, m } => {
                let a = alpha / 2.0;
                let lam = m.powf(1.0 / a);
                // (u + λ)^a − λ^a without cancellation for small u
                lam.powf(a) * ((a * (u / lam).ln_1p()).exp_m1())
            }
            Family::SumStable { alpha, beta } => stable_jump(alpha, u) + stable_jump(beta, u),
            Family::LogDamped { alpha, beta } => {
                u.powf(alpha / 2.0) * u.ln_1p().powf(-beta / 2.0)
            }
            Family::LogBoosted { alpha, beta } => {
                u.powf(alpha / 2.0) * u.ln_1p().powf(beta / 2.0)
            }
            Family::Local => 0.0,
        }
    }

    /// `Ψ(u)`; errors on negative or non-finite `u`.
    pub fn psi(&self, u: f64) -> Result<f64> {
        if !(u >= 0.0) || u.is_nan() {
            return Err(Error::Domain(format!("Psi requires u >= 0, got {u}")));
        }
        if u.is_infinite() {
            return Ok(f64::INFINITY);
        }
        Ok(self.diffusion_coefficient() * u + self.psi_jump(u))
    }

    /// `Im Ψ_j(−s + i0)` for `s > 0`: the spectral density of the
    /// Stieltjes representation (times `π s`). Nonnegative for complete
    /// Bernstein functions.
    pub fn cut_imag(&self, s: f64) -> f64 {
        match self.family.reduced() {
            Family::Stable { alpha } => stable_cut(alpha, s),
            Family::Relativistic { alpha, m } => {
                let a = alpha / 2.0;
                let lam = m.powf(1.0 / a);
                if s <= lam {
                    0.0
                } else {
                    (s - lam).powf(a) * (PI * a).sin()
                }
            }
            Family::SumStable { alpha, beta } => stable_cut(alpha, s) + stable_cut(beta, s),
            Family::LogDamped { alpha, beta } => log_family_cut(alpha / 2.0, -beta / 2.0, s),
            Family::LogBoosted { alpha, beta } => log_family_cut(alpha / 2.0, beta / 2.0, s),
            Family::Local => 0.0,
        }
    }

    /// Kinks of `cut_imag` in `ln s`, used as quadrature breakpoints.
    fn cut_breaks_log(&self) -> Vec<f64> {
        match self.family.reduced() {
            Family::Relativistic { alpha, m } => vec![m.powf(2.0 / alpha).ln()],
            Family::LogDamped { .. } | Family::LogBoosted { .. } => vec![0.0],
            _ => Vec::new(),
        }
    }

    /// Density of the Lévy measure `μ(dt)` of the subordinator when it has
    /// a closed form.
    pub fn levy_measure_density(&self, t: f64) -> Option<f64> {
        self.weighted_levy_measure(t, 1.0)
    }

    /// `w · μ(dt)/dt`, evaluated in log space so that a tiny weight can
    /// cancel the `t^{-1-α/2}` blow-up near zero.
    fn weighted_levy_measure(&self, t: f64, weight: f64) -> Option<f64> {
        if weight == 0.0 {
            return Some(0.0);
        }
        let ln_w = weight.ln();
        let term = |alpha: f64, lam: f64| {
            if alpha >= 2.0 {
                0.0
            } else {
                let a = alpha / 2.0;
                stable_measure_constant(a) * ((-1.0 - a) * t.ln() - lam * t + ln_w).exp()
            }
        };
        match self.family.reduced() {
            Family::Stable { alpha } => Some(term(alpha, 0.0)),
            Family::SumStable { alpha, beta } => Some(term(alpha, 0.0) + term(beta, 0.0)),
            Family::Relativistic { alpha, m } => Some(term(alpha, m.powf(2.0 / alpha))),
            Family::Local => Some(0.0),
            Family::LogDamped { .. } | Family::LogBoosted { .. } => None,
        }
    }

    /// `μ((t, ∞))`, the rate of subordinator jumps larger than `t`.
    pub fn levy_tail(&self, t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::Domain(format!("Levy tail requires t > 0, got {t}")));
        }
        let stable = |alpha: f64| {
            if alpha >= 2.0 {
                0.0
            } else {
                let a = alpha / 2.0;
                t.powf(-a) / libm::tgamma(1.0 - a)
            }
        };
        match self.family.reduced() {
            Family::Stable { alpha } => Ok(stable(alpha)),
            Family::SumStable { alpha, beta } => Ok(stable(alpha) + stable(beta)),
            Family::Local => Ok(0.0),
            Family::Relativistic { .. } => {
                let r = integrate_positive_axis(
                    |x| self.levy_measure_density(t + x).unwrap_or(0.0),
                    t.ln(),
                    &[],
                    KERNEL_REL_TOL,
                )?;
                Ok(r.value)
            }
            _ => {
                let r = integrate_positive_axis(
                    |s| self.cut_imag(s) * (-t * s).exp() / s,
                    -t.ln(),
                    &self.cut_breaks_log(),
                    KERNEL_REL_TOL,
                )?;
                Ok(r.value / PI)
            }
        }
    }

    /// `∫_0^ε t μ(dt)`: the mean contribution of jumps below `ε` per unit
    /// time.
    pub fn small_jump_mean(&self, eps: f64) -> Result<f64> {
        if !(eps > 0.0) {
            return Err(Error::Domain(format!("cutoff must be positive, got {eps}")));
        }
        let stable = |alpha: f64| {
            if alpha >= 2.0 {
                0.0
            } else {
                let a = alpha / 2.0;
                stable_measure_constant(a) * eps.powf(1.0 - a) / (1.0 - a)
            }
        };
        match self.family.reduced() {
            Family::Stable { alpha } => Ok(stable(alpha)),
            Family::SumStable { alpha, beta } => Ok(stable(alpha) + stable(beta)),
            Family::Local => Ok(0.0),
            Family::Relativistic { .. } => {
                let r = integrate_positive_axis(
                    |t| {
                        if t < eps {
                            t * self.levy_measure_density(t).unwrap_or(0.0)
                        } else {
                            0.0
                        }
                    },
                    eps.ln(),
                    &[eps.ln()],
                    KERNEL_REL_TOL,
                )?;
                Ok(r.value)
            }
            _ => {
                let r = integrate_positive_axis(
                    |s| self.cut_imag(s) * one_minus_exp_linear(eps * s) / (s * s),
                    -eps.ln(),
                    &self.cut_breaks_log(),
                    KERNEL_REL_TOL,
                )?;
                Ok(r.value / PI)
            }
        }
    }

    /// The scaling certificates listed for the family in the literature,
    /// adjusted for an explicit drift.
    pub fn reference_certificates(&self) -> (ScalingCertificate, ScalingCertificate) {
        let (lo, hi) = match self.family.reduced() {
            Family::Stable { alpha } => (alpha / 2.0, alpha / 2.0),
            Family::Relativistic { alpha, .. } => (alpha / 2.0, 1.0),
            Family::SumStable { alpha, beta } => (alpha.min(beta) / 2.0, alpha.max(beta) / 2.0),
            Family::LogDamped { alpha, beta } => ((alpha - beta) / 2.0, alpha / 2.0),
            Family::LogBoosted { alpha, beta } => (alpha / 2.0, (alpha + beta) / 2.0),
            Family::Local => (1.0, 1.0),
        };
        let hi = if self.drift_b > 0.0 { 1.0 } else { hi };
        (
            ScalingCertificate::wlsc(lo, 1.0, 0.0),
            ScalingCertificate::wusc(hi, 1.0, 0.0),
        )
    }
}

impl fmt::Display for BernsteinSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut params: Vec<(&str, f64)> = match self.family {
            Family::Stable { alpha } => vec![("alpha", alpha)],
            Family::Relativistic { alpha, m } => vec![("alpha", alpha), ("m", m)],
            Family::SumStable { alpha, beta }
            | Family::LogDamped { alpha, beta }
            | Family::LogBoosted { alpha, beta } => vec![("alpha", alpha), ("beta", beta)],
            Family::Local => vec![],
        };
        if self.drift_b != 0.0 {
            params.push(("b", self.drift_b));
        }
        write!(f, "{}", self.family.name())?;
        for (i, (k, v)) in params.iter().enumerate() {
            write!(f, "{}{k}={v}", if i == 0 { ':' } else { ',' })?;
        }
        if self.dimension_d != 1 {
            write!(f, "{}d={}", if params.is_empty() { ':' } else { ',' }, self.dimension_d)?;
        }
        Ok(())
    }
}

impl FromStr for BernsteinSpec {
    type Err = Error;

    /// Parses `family:key=value,...`, e.g. `stable:alpha=1.5` or
    /// `relativistic:alpha=1,m=1,b=0.1`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, rest) = match s.split_once(':') {
            Some((n, r)) => (n.trim(), r.trim()),
            None => (s, ""),
        };
        let mut alpha = None;
        let mut beta = None;
        let mut m = None;
        let mut b = 0.0;
        let mut d = 1u32;
        for item in rest.split(',').map(str::trim).filter(|x| !x.is_empty()) {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("expected key=value, got '{item}'")))?;
            let (k, v) = (k.trim(), v.trim());
            let num = || {
                v.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("'{k}': '{v}' is not a number")))
            };
            match k {
                "alpha" => alpha = Some(num()?),
                "beta" => beta = Some(num()?),
                "m" => m = Some(num()?),
                "b" => b = num()?,
                "d" => {
                    d = v
                        .parse()
                        .map_err(|_| Error::Parse(format!("'d': '{v}' is not an integer")))?
                }
                _ => return Err(Error::Parse(format!("unknown parameter '{k}' for {name}"))),
            }
        }
        let need = |x: Option<f64>, key: &str| {
            x.ok_or_else(|| Error::Parse(format!("{name} requires parameter '{key}'")))
        };
        let family = match name {
            "stable" => Family::Stable { alpha: need(alpha, "alpha")? },
            "relativistic" => Family::Relativistic {
                alpha: need(alpha, "alpha")?,
                m: need(m, "m")?,
            },
            "sum_stable" => Family::SumStable {
                alpha: need(alpha, "alpha")?,
                beta: need(beta, "beta")?,
            },
            "log_damped" => Family::LogDamped {
                alpha: need(alpha, "alpha")?,
                beta: need(beta, "beta")?,
            },
            "log_boosted" => Family::LogBoosted {
                alpha: need(alpha, "alpha")?,
                beta: need(beta, "beta")?,
            },
            "local" => Family::Local,
            other => return Err(Error::Parse(format!("unknown family '{other}'"))),
        };
        let mut spec = BernsteinSpec::new(family, b)?;
        spec.dimension_d = d;
        spec.validate()?;
        Ok(spec)
    }
}

impl Serialize for BernsteinSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for BernsteinSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// `Ψ(u)` for the given spec.
pub fn eval_psi(spec: &BernsteinSpec, u: f64) -> Result<f64> {
    spec.validate()?;
    spec.psi(u)
}

/// Computable stand-in for the renewal function: `V̂(r) = Ψ(r^{-2})^{-1/2}`.
/// Comparable to the true renewal function up to a universal constant.
pub fn renewal_surrogate(spec: &BernsteinSpec, r: f64) -> Result<f64> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::Domain(format!("renewal surrogate requires r > 0, got {r}")));
    }
    let p = spec.psi(1.0 / (r * r))?;
    if p <= 0.0 || !p.is_finite() {
        return Err(Error::Degenerate(format!(
            "Psi(r^-2) = {p} at r = {r}; surrogate undefined"
        )));
    }
    Ok(p.powf(-0.5))
}

// ---------------------------------------------------------------------------
// Scaling conditions

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScalingKind {
    Wlsc,
    Wusc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingCertificate {
    pub kind: ScalingKind,
    pub exponent: f64,
    pub constant: f64,
    pub threshold: f64,
}

impl ScalingCertificate {
    pub fn wlsc(exponent: f64, constant: f64, threshold: f64) -> Self {
        ScalingCertificate {
            kind: ScalingKind::Wlsc,
            exponent,
            constant,
            threshold,
        }
    }

    pub fn wusc(exponent: f64, constant: f64, threshold: f64) -> Self {
        ScalingCertificate {
            kind: ScalingKind::Wusc,
            exponent,
            constant,
            threshold,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            ScalingKind::Wlsc => {
                self.exponent > 0.0 && self.constant > 0.0 && self.constant <= 1.0
            }
            ScalingKind::Wusc => self.exponent > 0.0 && self.constant >= 1.0,
        } && self.threshold >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::ParameterDomain(format!("malformed certificate {self:?}")))
        }
    }
}

/// Log-spaced sample of `(u, γ)` on which a scaling inequality is checked.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingGrid {
    pub u_offset: f64,
    pub u_max: f64,
    pub n_u: usize,
    pub gamma_max: f64,
    pub n_gamma: usize,
}

impl Default for ScalingGrid {
    fn default() -> Self {
        ScalingGrid {
            u_offset: 1e-6,
            u_max: 1e6,
            n_u: 64,
            gamma_max: 1e3,
            n_gamma: 32,
        }
    }
}

pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n)
                .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
                .collect()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingReport {
    pub holds: bool,
    /// Smallest slack `±(Ψ(γu) − c γ^μ Ψ(u)) / Ψ(γu)` over the grid.
    pub min_slack: f64,
    pub worst_u: f64,
    pub worst_gamma: f64,
}

/// Relative slack below which a sampled inequality counts as violated.
const SCALING_ROUNDOFF: f64 = 1e-12;

/// Samples the WLSC/WUSC inequality of `cert` on `grid`.
pub fn check_scaling(
    spec: &BernsteinSpec,
    cert: &ScalingCertificate,
    grid: &ScalingGrid,
) -> Result<ScalingReport> {
    cert.validate()?;
    if grid.n_u == 0 || grid.n_gamma == 0 {
        return Err(Error::Usage("empty scaling grid".into()));
    }
    let us = logspace(cert.threshold + grid.u_offset, grid.u_max, grid.n_u);
    let gammas = logspace(1.0, grid.gamma_max, grid.n_gamma);
    let mut report = ScalingReport {
        holds: true,
        min_slack: f64::INFINITY,
        worst_u: f64::NAN,
        worst_gamma: f64::NAN,
    };
    for &u in &us {
        let base = spec.psi(u)?;
        for &g in &gammas {
            let scaled = spec.psi(g * u)?;
            let bound = cert.constant * g.powf(cert.exponent) * base;
            let slack = match cert.kind {
                ScalingKind::Wlsc => scaled - bound,
                ScalingKind::Wusc => bound - scaled,
            } / scaled.max(f64::MIN_POSITIVE);
            if slack < report.min_slack {
                report.min_slack = slack;
                report.worst_u = u;
                report.worst_gamma = g;
            }
        }
    }
    report.holds = report.min_slack >= -SCALING_ROUNDOFF;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Jump kernels

/// Radial density `r ↦ j(r)`.
pub trait RadialDensity {
    fn density(&self, r: f64) -> Result<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelRoute {
    Closed,
    Subordination,
    Spectral,
}

/// Jump kernel `j` of the subordinate Brownian motion for a spec.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevyKernel {
    pub spec: BernsteinSpec,
    pub route: KernelRoute,
    pub tail_index: f64,
}

impl LevyKernel {
    /// Closed form where available, otherwise the subordination integral,
    /// otherwise the spectral integral.
    pub fn new(spec: BernsteinSpec) -> Result<Self> {
        let route = match spec.family.reduced() {
            Family::Stable { .. } | Family::SumStable { .. } | Family::Local => KernelRoute::Closed,
            Family::Relativistic { .. } => KernelRoute::Subordination,
            Family::LogDamped { .. } | Family::LogBoosted { .. } => KernelRoute::Spectral,
        };
        Self::with_route(spec, route)
    }

    pub fn with_route(spec: BernsteinSpec, route: KernelRoute) -> Result<Self> {
        spec.validate()?;
        if spec.dimension_d != 1 {
            return Err(Error::ParameterDomain(format!(
                "jump kernels are implemented for d = 1 only (got d = {})",
                spec.dimension_d
            )));
        }
        let closed_ok = matches!(
            spec.family.reduced(),
            Family::Stable { .. } | Family::SumStable { .. } | Family::Local
        );
        if route == KernelRoute::Closed && !closed_ok {
            return Err(Error::Usage(format!("no closed-form kernel for {}", spec.family.name())));
        }
        if route == KernelRoute::Subordination && spec.levy_measure_density(1.0).is_none() {
            return Err(Error::Usage(format!(
                "no explicit Levy measure for {}",
                spec.family.name()
            )));
        }
        let tail_index = match spec.family.reduced() {
            Family::Stable { alpha } => 1.0 + alpha,
            Family::SumStable { alpha, beta } => 1.0 + alpha.min(beta),
            Family::Relativistic { .. } => f64::INFINITY,
            Family::LogDamped { alpha, beta } => 1.0 + alpha - beta,
            Family::LogBoosted { alpha, beta } => 1.0 + alpha + beta,
            Family::Local => f64::INFINITY,
        };
        Ok(LevyKernel {
            spec,
            route,
            tail_index,
        })
    }

    fn stable_alphas(&self) -> Vec<f64> {
        match self.spec.family.reduced() {
            Family::Stable { alpha } => vec![alpha],
            Family::SumStable { alpha, beta } => vec![alpha, beta],
            _ => vec![],
        }
        .into_iter()
        .filter(|&a| a < 2.0)
        .collect()
    }

    /// `Σ A(α) ∫_lo^hi y^p y^{-1-α} dy` over stable components.
    fn closed_power_moment(&self, p: f64, lo: f64, hi: f64) -> f64 {
        self.stable_alphas()
            .into_iter()
            .map(|alpha| {
                let a = stable_constant(alpha);
                let e = p - alpha;
                if e.abs() < 1e-14 {
                    a * (hi / lo).ln()
                } else if hi.is_infinite() {
                    // e < 0 for the tails we take.
                    -a * lo.powf(e) / e
                } else if lo == 0.0 {
                    a * hi.powf(e) / e
                } else {
                    a * (hi.powf(e) - lo.powf(e)) / e
                }
            })
            .sum()
    }

    fn spectral<F: Fn(f64) -> f64>(&self, weight: F, center_log: f64) -> Result<f64> {
        // Integrate over w with s = w²; breaks of the cut move to ln w = ln s / 2.
        let breaks: Vec<f64> = self.spec.cut_breaks_log().iter().map(|b| b / 2.0).collect();
        let r = integrate_positive_axis(
            |w| self.spec.cut_imag(w * w) * weight(w),
            center_log,
            &breaks,
            KERNEL_REL_TOL,
        )?;
        Ok(r.value / PI)
    }

    fn subordination<F: Fn(f64) -> f64>(&self, weight: F, center_log: f64) -> Result<f64> {
        let r = integrate_positive_axis(
            |t| self.spec.weighted_levy_measure(t, weight(t)).unwrap_or(0.0),
            center_log,
            &[],
            KERNEL_REL_TOL,
        )?;
        Ok(r.value)
    }

    fn check_r(r: f64, what: &str) -> Result<()> {
        if !(r > 0.0) || r.is_nan() {
            return Err(Error::Domain(format!("{what} requires r > 0, got {r}")));
        }
        Ok(())
    }

    /// `∫_R^∞ j(y) dy`.
    pub fn tail_mass(&self, radius: f64) -> Result<f64> {
        Self::check_r(radius, "tail mass")?;
        if !self.spec.has_jumps() {
            return Ok(0.0);
        }
        match self.route {
            KernelRoute::Closed => Ok(self.closed_power_moment(0.0, radius, f64::INFINITY)),
            KernelRoute::Subordination => self.subordination(
                |t| 0.5 * libm::erfc(radius / (2.0 * t.sqrt())),
                2.0 * radius.ln(),
            ),
            KernelRoute::Spectral => {
                self.spectral(|w| (-radius * w).exp() / w, -radius.ln())
            }
        }
    }

    /// `∫_0^R y² j(y) dy`.
    pub fn second_moment(&self, radius: f64) -> Result<f64> {
        Self::check_r(radius, "second moment")?;
        if !self.spec.has_jumps() {
            return Ok(0.0);
        }
        match self.route {
            KernelRoute::Closed => Ok(self.closed_power_moment(2.0, 0.0, radius)),
            KernelRoute::Subordination => self.subordination(
                |t| gaussian_second_moment(t, radius),
                2.0 * radius.ln(),
            ),
            KernelRoute::Spectral => self.spectral(
                |w| lower_gamma3(radius * w) / (w * w * w),
                -radius.ln(),
            ),
        }
    }

    /// Weight of the piecewise-linear hat centred at `k·h` (`k ≥ 1`)
    /// against `j`, restricted to `|y| ≥ h`.
    pub fn hat_weight(&self, k: usize, h: f64) -> Result<f64> {
        if k == 0 {
            return Err(Error::Usage("hat weights start at k = 1".into()));
        }
        if !self.spec.has_jumps() {
            return Ok(0.0);
        }
        let kf = k as f64;
        let lo = ((kf - 1.0) * h).max(h);
        let mid = kf * h;
        let hi = (kf + 1.0) * h;
        if self.route == KernelRoute::Closed {
            let mut w = ((kf + 1.0) * self.closed_power_moment(0.0, mid, hi)
                - self.closed_power_moment(1.0, mid, hi) / h)
                .max(0.0);
            if lo < mid {
                w += (self.closed_power_moment(1.0, lo, mid) / h
                    - (kf - 1.0) * self.closed_power_moment(0.0, lo, mid))
                .max(0.0);
            }
            return Ok(w);
        }
        let opts = QuadOptions {
            rel_tol: 1e-9,
            abs_tol: 0.0,
            max_segments: 200,
        };
        let mut err = None;
        let mut dens = |y: f64| match self.density(y) {
            Ok(v) => v,
            Err(e) => {
                err.get_or_insert(e);
                0.0
            }
        };
        let mut w = integrate(|y| (kf + 1.0 - y / h) * dens(y), mid, hi, opts)?.value;
        if lo < mid {
            w += integrate(|y| (y / h - (kf - 1.0)) * dens(y), lo, mid, opts)?.value;
        }
        match err {
            Some(e) => Err(e),
            None => Ok(w),
        }
    }
}

/// `∫_0^R y² (4πt)^{-1/2} e^{-y²/4t} dy`.
fn gaussian_second_moment(t: f64, radius: f64) -> f64 {
    let x = radius * radius / (4.0 * t);
    let norm = (4.0 * PI * t).sqrt().recip();
    if x < 0.1 {
        let mut sum = 0.0;
        let mut coef = radius.powi(3);
        for k in 0..16 {
            sum += coef / (2.0 * k as f64 + 3.0);
            coef *= -radius * radius / (4.0 * t) / (k as f64 + 1.0);
        }
        norm * sum
    } else {
        t * libm::erf(radius / (2.0 * t.sqrt())) - 2.0 * t * radius * norm * (-x).exp()
    }
}

impl RadialDensity for LevyKernel {
    /// `j(r)`.
    fn density(&self, r: f64) -> Result<f64> {
        Self::check_r(r, "Levy density")?;
        if !self.spec.has_jumps() {
            return Ok(0.0);
        }
        match self.route {
            KernelRoute::Closed => Ok(self
                .stable_alphas()
                .into_iter()
                .map(|alpha| stable_constant(alpha) * r.powf(-1.0 - alpha))
                .sum()),
            KernelRoute::Subordination => self.subordination(
                |t| (4.0 * PI * t).sqrt().recip() * (-r * r / (4.0 * t)).exp(),
                2.0 * r.ln(),
            ),
            KernelRoute::Spectral => self.spectral(|w| (-r * w).exp(), -r.ln()),
        }
    }
}

/// `j(r)` for the kernel; closed form or quadrature depending on the family.
pub fn levy_density(kernel: &LevyKernel, r: f64) -> Result<f64> {
    kernel.density(r)
}

/// Piecewise-linear radial density on a table, zero past the last node.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedDensity {
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
}

impl RadialDensity for TabulatedDensity {
    fn density(&self, r: f64) -> Result<f64> {
        if !(r > 0.0) {
            return Err(Error::Domain(format!("density requires r > 0, got {r}")));
        }
        let (rs, vs) = (&self.radii, &self.values);
        if rs.is_empty() || r > *rs.last().unwrap() {
            return Ok(0.0);
        }
        if r <= rs[0] {
            return Ok(vs[0]);
        }
        let i = rs.partition_point(|&x| x < r);
        let t = (r - rs[i - 1]) / (rs[i] - rs[i - 1]);
        Ok(vs[i - 1] + t * (vs[i] - vs[i - 1]))
    }
}

/// Infimum of `j(r+1)/j(r)` over `n_samples` points of `[1, r_max]`, or
/// `None` when some sampled ratio vanishes.
pub fn check_assumption_a21<K: RadialDensity + ?Sized>(
    kernel: &K,
    r_max: f64,
    n_samples: usize,
) -> Result<Option<f64>> {
    if !(r_max > 2.0) || n_samples < 2 {
        return Err(Error::Usage(format!(
            "need r_max > 2 and n_samples >= 2 (got {r_max}, {n_samples})"
        )));
    }
    let mut inf = f64::INFINITY;
    for i in 0..n_samples {
        let r = 1.0 + (r_max - 1.0) * i as f64 / (n_samples - 1) as f64;
        let num = kernel.density(r + 1.0)?;
        let den = kernel.density(r)?;
        if num <= 0.0 || den <= 0.0 {
            return Ok(None);
        }
        inf = inf.min(num / den);
    }
    Ok(if inf > 0.0 { Some(inf) } else { None })
}
