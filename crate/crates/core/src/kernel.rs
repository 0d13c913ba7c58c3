//! Lévy kernels of `(I-Δ)^log` and of the relativistic operators `(I-Δ)^s`.
//!
//! ```text
//! J(z)   = d_N ω(|z|) / |z|^N,               d_N   = π^{-N/2}
//! J_s(z) = -d_{N,s} ω_s(|z|) / |z|^{N+2s},   d_{N,s} = π^{-N/2} 4^s / Γ(-s)
//! ```

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature;
use crate::special_fn::{ln_omega_s, log_gamma};

/// Order of the operator: logarithmic, or relativistic `(I-Δ)^s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Order {
    Log,
    Frac(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    dim: usize,
    order: Order,
}

impl KernelSpec {
    pub fn new(dim: usize, order: Order) -> Result<Self> {
        if dim == 0 {
            return Err(Error::param("dimension", "must be at least 1"));
        }
        if let Order::Frac(s) = order {
            if !(s > 0.0 && s < 1.0) {
                return Err(Error::param("s", format!("must lie in (0, 1), got {s}")));
            }
        }
        Ok(Self { dim, order })
    }

    pub fn log(dim: usize) -> Result<Self> {
        Self::new(dim, Order::Log)
    }

    pub fn frac(dim: usize, s: f64) -> Result<Self> {
        Self::new(dim, Order::Frac(s))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> Order {
        self.order
    }

    pub fn constants(&self) -> KernelConstants {
        KernelConstants::new(self)
    }
}

/// Normalisation constants attached to a [`KernelSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelConstants {
    /// `π^{-N/2}`
    pub d_n: f64,
    /// `π^{-N/2} 4^s / Γ(-s)`, negative; `None` for the logarithmic order.
    pub d_ns: Option<f64>,
    /// `Γ(N/2) π^{-N/2}`
    pub c_n: f64,
    /// Surface measure of the unit sphere `S^{N-1}`.
    pub sphere_measure: f64,
}

impl KernelConstants {
    fn new(spec: &KernelSpec) -> Self {
        let n = spec.dim as f64;
        let half = 0.5 * n;
        let d_n = PI.powf(-half);
        let gamma_half = log_gamma(half).expect("N/2 > 0").exp();
        let d_ns = match spec.order {
            Order::Log => None,
            Order::Frac(s) => Some(d_n * 4f64.powf(s) / gamma_neg(s)),
        };
        Self {
            d_n,
            d_ns,
            c_n: gamma_half * d_n,
            sphere_measure: 2.0 * PI.powf(half) / gamma_half,
        }
    }
}

/// Γ(-s) for s ∈ (0, 1), via Γ(-s) = Γ(2-s) / ((-s)(1-s)).
pub fn gamma_neg(s: f64) -> f64 {
    let g = log_gamma(2.0 - s).expect("2 - s > 0").exp();
    g / (-s * (1.0 - s))
}

/// A kernel with its constants resolved, evaluated through the radius.
#[derive(Debug, Clone, Copy)]
pub struct Kernel {
    spec: KernelSpec,
    ln_prefactor: f64,
    /// N for Log, N + 2s for Frac.
    power: f64,
    s: f64,
}

impl Kernel {
    pub fn new(spec: KernelSpec) -> Self {
        let c = spec.constants();
        let n = spec.dim as f64;
        let (ln_prefactor, power, s) = match spec.order {
            Order::Log => (c.d_n.ln(), n, 0.0),
            Order::Frac(s) => ((-c.d_ns.expect("frac constant")).ln(), n + 2.0 * s, s),
        };
        Self {
            spec,
            ln_prefactor,
            power,
            s,
        }
    }

    pub fn spec(&self) -> KernelSpec {
        self.spec
    }

    /// Kernel value at radius `r > 0`.
    pub fn radial(&self, r: f64) -> f64 {
        debug_assert!(r > 0.0);
        let ln_w = ln_omega_s(self.spec.dim, self.s, r).expect("r > 0 checked by caller");
        (self.ln_prefactor + ln_w - self.power * r.ln()).exp()
    }

    pub fn try_radial(&self, r: f64) -> Result<f64> {
        if !(r > 0.0) {
            return Err(Error::Singularity(format!("kernel evaluated at radius {r}")));
        }
        Ok(self.radial(r))
    }

    /// Kernel value at a vector `z`; delegates to [`Kernel::radial`].
    pub fn eval(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.spec.dim {
            return Err(Error::domain(format!(
                "vector of length {} for a kernel in dimension {}",
                z.len(),
                self.spec.dim
            )));
        }
        self.try_radial(norm(z))
    }
}

pub(crate) fn norm(z: &[f64]) -> f64 {
    z.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `J(z) = d_N ω(|z|)/|z|^N`.
pub fn j_log(spec: &KernelSpec, z: &[f64]) -> Result<f64> {
    if spec.order != Order::Log {
        return Err(Error::domain("j_log requires the logarithmic order"));
    }
    Kernel::new(*spec).eval(z)
}

/// Positive kernel `-d_{N,s} ω_s(|z|)/|z|^{N+2s}` of `(I-Δ)^s`.
pub fn j_frac(spec: &KernelSpec, z: &[f64]) -> Result<f64> {
    if !matches!(spec.order, Order::Frac(_)) {
        return Err(Error::domain("j_frac requires a fractional order"));
    }
    Kernel::new(*spec).eval(z)
}

/// `∫_{|z| ≥ δ} J(z) dz` (or the same for `J_s`).
pub fn tail_mass(spec: &KernelSpec, delta: f64) -> Result<f64> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::domain(format!("tail_mass requires delta > 0, got {delta}")));
    }
    let kernel = Kernel::new(*spec);
    let n = spec.dim as i32;
    let sphere = spec.constants().sphere_measure;
    let mut total = 0.0;
    let far_start = delta.max(1.0);
    if delta < 1.0 {
        // r = e^x turns the r^{-1}-type endpoint behaviour into a smooth integrand.
        let est = quadrature::adaptive(
            |x: f64| {
                let r = x.exp();
                kernel.radial(r) * r.powi(n)
            },
            delta.ln(),
            0.0,
            1e-15,
            1e-13,
        )?;
        total += est.value;
    }
    // ω(r) ≤ C r^{(N-1)/2} e^{-r}: beyond 60 more units the remainder is below e^{-60}.
    let breaks = quadrature::uniform_breaks(far_start, far_start + 60.0, 5.0);
    let est = quadrature::adaptive_breaks(
        |r: f64| kernel.radial(r) * r.powi(n - 1),
        &breaks,
        1e-16,
        1e-13,
    )?;
    total += est.value;
    Ok(sphere * total)
}

/// Regime selector for [`kernel_asymptotic`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    NearZero,
    FarField,
}

/// Leading-order model of `J` near the origin or at infinity.
pub fn kernel_asymptotic(spec: &KernelSpec, z: &[f64], regime: Regime) -> Result<f64> {
    if spec.order != Order::Log {
        return Err(Error::domain("kernel_asymptotic requires the logarithmic order"));
    }
    if z.len() != spec.dim {
        return Err(Error::domain("vector length does not match dimension"));
    }
    let r = norm(z);
    if !(r > 0.0) {
        return Err(Error::Singularity("kernel_asymptotic at z = 0".into()));
    }
    Ok(asymptotic_radial(spec.dim, r, regime))
}

pub(crate) fn asymptotic_radial(dim: usize, r: f64, regime: Regime) -> f64 {
    let n = dim as f64;
    match regime {
        Regime::NearZero => {
            let c_n = log_gamma(0.5 * n).expect("N/2 > 0").exp() * PI.powf(-0.5 * n);
            c_n * r.powf(-n)
        }
        Regime::FarField => {
            let a = 0.5 * (n - 1.0);
            PI.powf(-a) * 2f64.powf(-a) * r.powf(-0.5 * (n + 1.0)) * (-r).exp()
        }
    }
}
