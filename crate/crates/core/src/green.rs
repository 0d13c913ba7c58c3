//! Heat kernel `q_t`, the Green function `G = ∫ q_t dt` (N ≥ 3) and Poisson
//! solvers on free space and periodic grids.

use std::f64::consts::{LN_2, PI};
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fourier_op::{self, eval_singular_integral, PeriodicField, QuadratureScheme};
use crate::kernel::{norm, KernelSpec};
use crate::quadrature::{self, GaussRule};
use crate::report::{Cell, Table};
use crate::special_fn::{ln_bessel_k, log_gamma};

fn check_dim(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::UnsupportedDimension {
            dim: n,
            what: "heat kernel".into(),
        });
    }
    Ok(())
}

/// `ln q_t(r)` for `r > 0`.
pub fn ln_heat_kernel_radial(n: usize, t: f64, r: f64) -> Result<f64> {
    check_dim(n)?;
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::domain(format!("heat kernel requires t > 0, got {t}")));
    }
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::Singularity(format!("heat kernel at radius {r}")));
    }
    let nf = n as f64;
    let nu = t - 0.5 * nf;
    if nu > LARGE_ORDER.max(25.0 * r * r) {
        return Ok(ln_heat_kernel_origin(n, t)? + large_time_factor(nu, r).ln());
    }
    Ok((1.0 - nf) * LN_2 - 0.5 * nf * PI.ln() - log_gamma(t)?
        + nu * (0.5 * r).ln()
        + ln_bessel_k(nu.abs(), r)?)
}

/// Above this order the direct form loses digits to cancellation between
/// `ln Γ(t)` and `ln K_ν`.
const LARGE_ORDER: f64 = 1000.0;

/// `q_t(r)/q_t(0) = Σ_k (-r²/4)^k / (k! (ν-1)(ν-2)…(ν-k))` up to `O((r/2)^{2ν})`.
fn large_time_factor(nu: f64, r: f64) -> f64 {
    let x = -0.25 * r * r;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..60 {
        let kf = k as f64;
        term *= x / (kf * (nu - kf));
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    sum
}

/// `ln Γ(t-a) - ln Γ(t)`, by the Stirling difference for large `t`.
fn ln_gamma_ratio(t: f64, a: f64) -> Result<f64> {
    if t < 100.0 {
        return Ok(log_gamma(t - a)? - log_gamma(t)?);
    }
    let z = t - a;
    let tail = |w: f64| 1.0 / (12.0 * w) - 1.0 / (360.0 * w * w * w) + 1.0 / (1260.0 * w.powi(5));
    Ok((z - 0.5) * (-a / t).ln_1p() - a * t.ln() + a + tail(z) - tail(t))
}

fn ln_heat_kernel_origin(n: usize, t: f64) -> Result<f64> {
    let nf = n as f64;
    Ok(-nf * LN_2 - 0.5 * nf * PI.ln() + ln_gamma_ratio(t, 0.5 * nf)?)
}

/// `q_t(0) = 2^{-N} π^{-N/2} Γ(t-N/2)/Γ(t)`, finite only for `t > N/2`.
pub fn heat_kernel_at_origin(n: usize, t: f64) -> Result<f64> {
    check_dim(n)?;
    let nf = n as f64;
    if !(t > 0.5 * nf) {
        return Err(Error::Singularity(format!(
            "q_t(0) is infinite for t = {t} <= N/2 = {}",
            0.5 * nf
        )));
    }
    Ok(ln_heat_kernel_origin(n, t)?.exp())
}

/// `q_t` at radius `r ≥ 0`.
pub fn heat_kernel_radial(n: usize, t: f64, r: f64) -> Result<f64> {
    if r == 0.0 {
        return heat_kernel_at_origin(n, t);
    }
    Ok(ln_heat_kernel_radial(n, t, r)?.exp())
}

/// Density of the symmetric variance gamma process at time `t`.
pub fn heat_kernel(n: usize, t: f64, x: &[f64]) -> Result<f64> {
    if x.len() != n {
        return Err(Error::domain("point dimension does not match N"));
    }
    heat_kernel_radial(n, t, norm(x))
}

fn sphere_measure(n: usize) -> f64 {
    let half = 0.5 * n as f64;
    2.0 * PI.powf(half) / log_gamma(half).expect("N/2 > 0").exp()
}

/// `∫_{R^N} q_t` by radial quadrature.
pub fn heat_kernel_mass(n: usize, t: f64) -> Result<f64> {
    check_dim(n)?;
    let p = n as i32 - 1;
    let mut f = |r: f64| ln_heat_kernel_radial(n, t, r).map_or(0.0, f64::exp) * r.powi(p);
    let near = quadrature::endpoint_singular(&mut f, 0.0, 1.0, 1e-15, 1e-13)?;
    let far = quadrature::exp_tail(&mut f, 1.0, 1e-15, 1e-13)?;
    Ok(sphere_measure(n) * (near.value + far.value))
}

/// Fourier transform `∫ q_t(x) e^{-iξ·x} dx` at `|ξ| = xi`, for N ∈ {1, 3}.
pub fn heat_kernel_fourier(n: usize, t: f64, xi: f64) -> Result<f64> {
    let q = |r: f64| ln_heat_kernel_radial(n, t, r).map_or(0.0, f64::exp);
    let mut f: Box<dyn FnMut(f64) -> f64> = match n {
        1 => Box::new(move |r: f64| 2.0 * q(r) * (xi * r).cos()),
        3 if xi == 0.0 => Box::new(move |r: f64| 4.0 * PI * q(r) * r * r),
        3 => Box::new(move |r: f64| 4.0 * PI * q(r) * r * (xi * r).sin() / xi),
        _ => {
            return Err(Error::UnsupportedDimension {
                dim: n,
                what: "radial Fourier transform".into(),
            })
        }
    };
    let near = quadrature::endpoint_singular(&mut f, 0.0, 1.0, 1e-15, 1e-13)?;
    let far = quadrature::exp_tail(&mut f, 1.0, 1e-15, 1e-13)?;
    Ok(near.value + far.value)
}

/// `(q_t * q_τ)(x)` on the line, integrating through both singular points.
pub fn heat_kernel_convolution_1d(t: f64, tau: f64, x: f64) -> Result<f64> {
    let x = x.abs();
    let q = |tt: f64, r: f64| ln_heat_kernel_radial(1, tt, r.abs()).map_or(0.0, f64::exp);
    let (abs, rel) = (1e-15, 1e-12);
    // y ≤ 0 and y ≥ x: both factors decay; each has one singular endpoint.
    let mut left = |y: f64| q(t, y) * q(tau, x + y);
    let mut right = |y: f64| q(t, x + y) * q(tau, y);
    let mut total = 0.0;
    for g in [&mut left as &mut dyn FnMut(f64) -> f64, &mut right] {
        total += quadrature::endpoint_singular(&mut *g, 0.0, 1.0, abs, rel)?.value;
        total += quadrature::exp_tail(&mut *g, 1.0, abs, rel)?.value;
    }
    if x > 0.0 {
        let mid = 0.5 * x;
        let mut inner = |y: f64| q(t, y) * q(tau, x - y);
        total += quadrature::endpoint_singular(&mut inner, 0.0, mid, abs, rel)?.value;
        total -= quadrature::endpoint_singular(&mut inner, x, mid, abs, rel)?.value;
    }
    Ok(total)
}

/// Subordination quadrature for `G = ∫_0^∞ q_t dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreenQuadrature {
    /// Below this time the integrand is replaced by its linear model in `t`.
    pub t_lower_cut: f64,
    /// Start of the mapped tail `t = T/v²`.
    pub t_upper_cut: f64,
    /// Growth factor of the geometric panels near 0 and above `N/2 + 2`.
    pub panel_ratio: f64,
    /// Width of the uniform panels on `[1/2, N/2 + 2]`.
    pub uniform_width: f64,
    pub rel_tol: f64,
}

impl Default for GreenQuadrature {
    fn default() -> Self {
        Self {
            t_lower_cut: 1e-6,
            t_upper_cut: 400.0,
            panel_ratio: 2.0,
            uniform_width: 0.25,
            rel_tol: 1e-11,
        }
    }
}

impl GreenQuadrature {
    fn validate(&self, n: usize) -> Result<()> {
        if !(self.t_lower_cut > 0.0 && self.t_lower_cut < 0.1) {
            return Err(Error::param("t_lower_cut", "must lie in (0, 0.1)"));
        }
        if !(self.t_upper_cut > 0.5 * n as f64 + 2.0) {
            return Err(Error::param("t_upper_cut", "must exceed N/2 + 2"));
        }
        if !(self.panel_ratio > 1.0) || !(self.uniform_width > 0.0) {
            return Err(Error::param("panels", "need panel_ratio > 1 and uniform_width > 0"));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::param("rel_tol", "must be positive"));
        }
        Ok(())
    }

    fn breaks(&self, n: usize) -> Vec<f64> {
        let mid = 0.5 * n as f64 + 2.0;
        let mut b = vec![self.t_lower_cut];
        let mut t = self.t_lower_cut;
        while t * self.panel_ratio < 0.5 {
            t *= self.panel_ratio;
            b.push(t);
        }
        b.extend(quadrature::uniform_breaks(0.5, mid, self.uniform_width));
        let mut t = mid;
        while t * self.panel_ratio < self.t_upper_cut {
            t *= self.panel_ratio;
            b.push(t);
        }
        b.push(self.t_upper_cut);
        b
    }
}

/// Pieces of one Green function evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreenEval {
    pub value: f64,
    /// Contribution of `[0, t_lower_cut]` (linear model).
    pub lower: f64,
    /// Contribution of `[t_upper_cut, ∞)`.
    pub tail: f64,
    pub error: f64,
}

/// Radial Green function with its quadrature breakdown.
pub fn green_radial_detail(n: usize, r: f64, quad: &GreenQuadrature) -> Result<GreenEval> {
    if n < 3 {
        return Err(Error::UnsupportedDimension {
            dim: n,
            what: "Green function (time integral diverges for N <= 2)".into(),
        });
    }
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::Singularity(format!("Green function at radius {r}")));
    }
    quad.validate(n)?;
    let q = |t: f64| ln_heat_kernel_radial(n, t, r).map_or(0.0, f64::exp);
    let body = quadrature::adaptive_breaks(q, &quad.breaks(n), 0.0, quad.rel_tol)?;
    let big_t = quad.t_upper_cut;
    let tail = quadrature::adaptive(
        |v: f64| {
            let t = big_t / (v * v);
            q(t) * 2.0 * big_t / (v * v * v)
        },
        0.0,
        1.0,
        0.0,
        quad.rel_tol,
    )?;
    // q_t = O(t) as t → 0⁺.
    let lower = 0.5 * quad.t_lower_cut * q(quad.t_lower_cut);
    let value = body.value + tail.value + lower;
    Ok(GreenEval {
        value,
        lower,
        tail: tail.value,
        error: body.error + tail.error + lower * quad.t_lower_cut,
    })
}

pub fn green_radial(n: usize, r: f64, quad: &GreenQuadrature) -> Result<f64> {
    Ok(green_radial_detail(n, r, quad)?.value)
}

pub fn green_fn(n: usize, x: &[f64], quad: &GreenQuadrature) -> Result<f64> {
    if x.len() != n {
        return Err(Error::domain("point dimension does not match N"));
    }
    green_radial(n, norm(x), quad)
}

/// Near-origin model `c_N r^{-N}` as stated for `G`.
pub fn green_near_model(n: usize, r: f64) -> f64 {
    let half = 0.5 * n as f64;
    log_gamma(half).expect("N/2 > 0").exp() * PI.powf(-half) * r.powf(-(n as f64))
}

/// Far-field model `c_N 2^{(N-1)/2} π^{1/2} r^{-(N+1)/2} e^{-r}` as stated for `G`.
pub fn green_far_model(n: usize, r: f64) -> f64 {
    let nf = n as f64;
    let c_n = log_gamma(0.5 * nf).expect("N/2 > 0").exp() * PI.powf(-0.5 * nf);
    c_n * 2f64.powf(0.5 * (nf - 1.0)) * PI.sqrt() * r.powf(-0.5 * (nf + 1.0)) * (-r).exp()
}

/// Newtonian far field `Γ(N/2-1)/(4π^{N/2}) r^{2-N}`: the symbol
/// `1/log(1+|ξ|²)` behaves like `1/|ξ|²` at the origin.
pub fn green_newtonian_model(n: usize, r: f64) -> f64 {
    let nf = n as f64;
    log_gamma(0.5 * nf - 1.0).expect("N >= 3").exp() / (4.0 * PI.powf(0.5 * nf)) * r.powf(2.0 - nf)
}

/// Rows `r,G,near_model,far_model`.
pub fn green_profile(n: usize, radii: &[f64], quad: &GreenQuadrature) -> Result<Table> {
    let values: Vec<f64> = radii
        .par_iter()
        .map(|&r| green_radial(n, r, quad))
        .collect::<Result<_>>()?;
    let mut table = Table::new(["r", "G", "near_model", "far_model"]);
    for (&r, &g) in radii.iter().zip(&values) {
        table.push(vec![
            Cell::Float(r),
            Cell::Float(g),
            Cell::Float(green_near_model(n, r)),
            Cell::Float(green_far_model(n, r)),
        ])?;
    }
    Ok(table)
}

/// Least-squares slope of `ys` against `xs`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Slope of `log G` against `log r` over `samples` log-spaced radii in `[a, b]`.
pub fn green_log_log_slope(n: usize, a: f64, b: f64, samples: usize, quad: &GreenQuadrature) -> Result<f64> {
    let radii = log_spaced(a, b, samples);
    let g: Vec<f64> = radii.iter().map(|&r| green_radial(n, r, quad)).collect::<Result<_>>()?;
    let xs: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
    let ys: Vec<f64> = g.iter().map(|v| v.ln()).collect();
    Ok(fit_slope(&xs, &ys))
}

/// Slope of `log G` against `r` over `samples` equispaced radii in `[a, b]`.
pub fn green_semilog_slope(n: usize, a: f64, b: f64, samples: usize, quad: &GreenQuadrature) -> Result<f64> {
    let radii: Vec<f64> = (0..samples)
        .map(|i| a + (b - a) * i as f64 / (samples - 1) as f64)
        .collect();
    let ys: Vec<f64> = radii
        .iter()
        .map(|&r| green_radial(n, r, quad).map(f64::ln))
        .collect::<Result<_>>()?;
    Ok(fit_slope(&radii, &ys))
}

pub fn log_spaced(a: f64, b: f64, samples: usize) -> Vec<f64> {
    if samples == 1 {
        return vec![a];
    }
    let (la, lb) = (a.ln(), b.ln());
    (0..samples)
        .map(|i| (la + (lb - la) * i as f64 / (samples - 1) as f64).exp())
        .collect()
}

/// `G` tabulated on log-spaced radii, interpolated by cubics in `(ln r, ln G)`.
#[derive(Debug, Clone)]
pub struct GreenTable {
    dim: usize,
    ln_r0: f64,
    step: f64,
    ln_g: Vec<f64>,
}

impl GreenTable {
    pub fn new(n: usize, r_min: f64, r_max: f64, per_decade: usize, quad: &GreenQuadrature) -> Result<Self> {
        if !(r_min > 0.0 && r_max > r_min) || per_decade < 4 {
            return Err(Error::param("table", "need 0 < r_min < r_max and per_decade >= 4"));
        }
        let step = std::f64::consts::LN_10 / per_decade as f64;
        let ln_r0 = r_min.ln() - step;
        let count = ((r_max.ln() - ln_r0) / step).ceil() as usize + 3;
        let ln_g = (0..count)
            .into_par_iter()
            .map(|i| green_radial(n, (ln_r0 + i as f64 * step).exp(), quad).map(f64::ln))
            .collect::<Result<_>>()?;
        Ok(Self {
            dim: n,
            ln_r0,
            step,
            ln_g,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn r_min(&self) -> f64 {
        (self.ln_r0 + self.step).exp()
    }

    pub fn r_max(&self) -> f64 {
        (self.ln_r0 + (self.ln_g.len() - 2) as f64 * self.step).exp()
    }

    /// Interpolated `G(r)`; outside the table the end cubic is extrapolated.
    pub fn eval(&self, r: f64) -> f64 {
        let x = (r.ln() - self.ln_r0) / self.step;
        let last = self.ln_g.len() - 3;
        let i = (x.floor() as isize).clamp(1, last as isize) as usize;
        let u = x - i as f64;
        let (a, b, c, d) = (
            self.ln_g[i - 1],
            self.ln_g[i],
            self.ln_g[i + 1],
            self.ln_g[i + 2],
        );
        // Four-point Lagrange on nodes -1, 0, 1, 2.
        let v = -a * u * (u - 1.0) * (u - 2.0) / 6.0 + b * (u + 1.0) * (u - 1.0) * (u - 2.0) / 2.0
            - c * (u + 1.0) * u * (u - 2.0) / 2.0
            + d * (u + 1.0) * u * (u - 1.0) / 6.0;
        v.exp()
    }
}

/// `∫_0^ε G(r) r^{N-1} dr` from the small-radius form `q_t ≈ C(t) r^{2t-N}`,
/// `C(t) = 2^{-2t} π^{-N/2} Γ(N/2-t)/Γ(t)`, integrated over `t ∈ (0, 1]`.
/// Larger times contribute `O(ε²)`.
fn green_small_ball_moment(n: usize, eps: f64) -> Result<f64> {
    let nf = n as f64;
    let le = eps.ln();
    let est = quadrature::adaptive(
        |t: f64| {
            // C(t) ε^{2t}/(2t) with Γ(t)·2t = 2Γ(t+1).
            let ln = -2.0 * t * LN_2 - 0.5 * nf * PI.ln() + log_gamma(0.5 * nf - t).unwrap_or(f64::NAN)
                - log_gamma(t + 1.0).unwrap_or(f64::NAN)
                + 2.0 * t * le;
            0.5 * ln.exp()
        },
        0.0,
        1.0,
        0.0,
        1e-12,
    )?;
    Ok(est.value)
}

/// Cube grid of `points` nodes per axis on `[-L, L]^3`, node spacing `2L/(points-1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubeGrid {
    half_extent: f64,
    points: usize,
}

impl CubeGrid {
    pub fn new(half_extent: f64, points: usize) -> Result<Self> {
        if !(half_extent > 0.0 && half_extent.is_finite()) {
            return Err(Error::param("half_extent", "must be positive"));
        }
        if points < 9 || points % 2 == 0 {
            return Err(Error::param("points", "must be odd and at least 9"));
        }
        Ok(Self { half_extent, points })
    }

    pub fn half_extent(&self) -> f64 {
        self.half_extent
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_extent / (self.points - 1) as f64
    }

    pub fn len(&self) -> usize {
        self.points.pow(3)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.points + j) * self.points + k
    }

    pub fn coord(&self, i: usize) -> f64 {
        -self.half_extent + i as f64 * self.spacing()
    }

    pub fn point(&self, flat: usize) -> [f64; 3] {
        let n = self.points;
        [self.coord(flat / (n * n)), self.coord((flat / n) % n), self.coord(flat % n)]
    }

    pub fn sample<F: Fn(&[f64]) -> f64 + Sync>(&self, f: F) -> Vec<f64> {
        (0..self.len()).into_par_iter().map(|i| f(&self.point(i))).collect()
    }
}

/// `sup e^{|x|}|u|` over the shell `|x| ∈ [0.6 L, 0.9 L]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayReport {
    pub sup_exp_weighted: f64,
    pub shell_bounds: (f64, f64),
    /// Suprema over the inner and outer halves of the shell.
    pub inner_sup: f64,
    pub outer_sup: f64,
    pub finite: bool,
    /// Finite and not growing from the inner to the outer half-shell.
    pub pass: bool,
}

impl DecayReport {
    pub fn to_json(&self) -> serde_json::Value {
        let num = |v: f64| serde_json::Number::from_f64(v).map_or(serde_json::Value::Null, Into::into);
        serde_json::json!({
            "sup_exp_weighted": num(self.sup_exp_weighted),
            "shell_bounds": [num(self.shell_bounds.0), num(self.shell_bounds.1)],
            "pass": self.pass,
        })
    }
}

/// Solution of the free-space Poisson problem on a [`CubeGrid`], with an
/// evaluator valid everywhere.
#[derive(Debug, Clone)]
pub struct FreeSpaceSolution {
    grid: CubeGrid,
    values: Vec<f64>,
    table: Arc<GreenTable>,
    far_sources: Vec<([f64; 3], f64)>,
    pub decay: DecayReport,
}

const FAR_BLOCK: usize = 4;

impl FreeSpaceSolution {
    pub fn grid(&self) -> &CubeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn table(&self) -> &GreenTable {
        &self.table
    }

    /// Tricubic interpolation of the grid values inside the grid; a point sum
    /// over block-aggregated sources outside it.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let h = self.grid.spacing();
        let l = self.grid.half_extent;
        let n = self.grid.points;
        let inside = x.iter().all(|v| v.abs() <= l - 1.5 * h);
        if !inside {
            return self
                .far_sources
                .iter()
                .map(|(c, w)| {
                    let d = [x[0] - c[0], x[1] - c[1], x[2] - c[2]];
                    w * self.table.eval(norm(&d).max(self.table.r_min()))
                })
                .sum();
        }
        let mut base = [0usize; 3];
        let mut wts = [[0.0; 4]; 3];
        for a in 0..3 {
            let s = (x[a] + l) / h;
            let i = (s.floor() as usize).clamp(1, n - 3);
            let u = s - i as f64;
            base[a] = i - 1;
            wts[a] = [
                -u * (u - 1.0) * (u - 2.0) / 6.0,
                (u + 1.0) * (u - 1.0) * (u - 2.0) / 2.0,
                -(u + 1.0) * u * (u - 2.0) / 2.0,
                (u + 1.0) * u * (u - 1.0) / 6.0,
            ];
        }
        let mut acc = 0.0;
        for (p, wp) in wts[0].iter().enumerate() {
            for (q, wq) in wts[1].iter().enumerate() {
                for (r, wr) in wts[2].iter().enumerate() {
                    let idx = self.grid.index(base[0] + p, base[1] + q, base[2] + r);
                    acc += wp * wq * wr * self.values[idx];
                }
            }
        }
        acc
    }
}

/// Cell integral of `G` over the cube of side `h` centred at `d·h`.
fn cell_weight(table: &GreenTable, d: [usize; 3], h: f64, self_cell: f64) -> f64 {
    if d == [0, 0, 0] {
        return self_cell;
    }
    let near = d.iter().all(|&v| v <= 2);
    let (sub, order) = if near { (2usize, 6usize) } else { (1, 3) };
    let rule = GaussRule::legendre(order);
    let hs = h / sub as f64;
    let mut acc = 0.0;
    let mut pts = [Vec::new(), Vec::new(), Vec::new()];
    for a in 0..3 {
        let lo = (d[a] as f64 - 0.5) * h;
        for s in 0..sub {
            let a0 = lo + s as f64 * hs;
            pts[a].extend(rule.mapped(a0, a0 + hs));
        }
    }
    for (x, wx) in &pts[0] {
        for (y, wy) in &pts[1] {
            for (z, wz) in &pts[2] {
                acc += wx * wy * wz * table.eval((x * x + y * y + z * z).sqrt());
            }
        }
    }
    acc
}

/// `∫` of `G` over the cube of side `h` centred at the origin, by summing the
/// six face pyramids: `6 (h/2) ∫_face Φ(|p|)/|p|³ dp`, `Φ(R) = ∫_0^R G r² dr`.
fn self_cell_weight(table: &GreenTable, h: f64) -> Result<f64> {
    let eps = table.r_min();
    let phi_eps = green_small_ball_moment(3, eps)?;
    let phi = |big_r: f64| -> Result<f64> {
        let est = quadrature::adaptive(
            |u: f64| {
                let r = u.exp();
                table.eval(r) * r * r * r
            },
            eps.ln(),
            big_r.ln(),
            0.0,
            1e-12,
        )?;
        Ok(phi_eps + est.value)
    };
    let a = 0.5 * h;
    let rule = GaussRule::legendre(12);
    let mut acc = 0.0;
    for (x, wx) in rule.mapped(0.0, a) {
        for (y, wy) in rule.mapped(0.0, a) {
            let p = (x * x + y * y + a * a).sqrt();
            acc += wx * wy * phi(p)? / (p * p * p);
        }
    }
    Ok(6.0 * a * 4.0 * acc)
}

/// `u = G * f` in `R^3` for `f` sampled on `grid` and vanishing on its boundary.
pub fn poisson_free_space(grid: &CubeGrid, f: &[f64], quad: &GreenQuadrature) -> Result<FreeSpaceSolution> {
    let n = grid.points;
    if f.len() != grid.len() {
        return Err(Error::domain("sample count does not match the grid"));
    }
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("source contains non-finite samples"));
    }
    let on_boundary = |flat: usize| {
        let (i, j, k) = (flat / (n * n), (flat / n) % n, flat % n);
        [i, j, k].iter().any(|&v| v == 0 || v == n - 1)
    };
    if (0..grid.len()).any(|p| on_boundary(p) && f[p] != 0.0) {
        return Err(Error::domain(
            "source is not compactly supported inside the grid (nonzero on its boundary)",
        ));
    }
    let h = grid.spacing();
    let r_max = (3f64.sqrt() * (2.0 * grid.half_extent + h)).max(40.0);
    let table = Arc::new(GreenTable::new(3, 1e-3 * h, r_max, 48, quad)?);
    let self_cell = self_cell_weight(&table, h)?;

    // Kernel on the doubled periodic grid: offset d stored at d mod m.
    let m = 2 * n;
    let mut kern = vec![Complex64::new(0.0, 0.0); m * m * m];
    let weights: Vec<f64> = (0..n * n * n)
        .into_par_iter()
        .map(|flat| cell_weight(&table, [flat / (n * n), (flat / n) % n, flat % n], h, self_cell))
        .collect();
    let wrap = |d: isize| (if d < 0 { d + m as isize } else { d }) as usize;
    for di in -(n as isize - 1)..(n as isize) {
        for dj in -(n as isize - 1)..(n as isize) {
            for dk in -(n as isize - 1)..(n as isize) {
                let w = weights[(di.unsigned_abs() * n + dj.unsigned_abs()) * n + dk.unsigned_abs()];
                kern[(wrap(di) * m + wrap(dj)) * m + wrap(dk)] = Complex64::new(w, 0.0);
            }
        }
    }
    let mut src = vec![Complex64::new(0.0, 0.0); m * m * m];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                src[(i * m + j) * m + k] = Complex64::new(f[grid.index(i, j, k)], 0.0);
            }
        }
    }
    fourier_op::fft_nd(&mut kern, 3, m, false);
    fourier_op::fft_nd(&mut src, 3, m, false);
    for (s, k) in src.iter_mut().zip(&kern) {
        *s *= k;
    }
    fourier_op::fft_nd(&mut src, 3, m, true);
    let mut values = vec![0.0; grid.len()];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                values[grid.index(i, j, k)] = src[(i * m + j) * m + k].re;
            }
        }
    }
    if f.iter().all(|&v| v == 0.0) {
        values.iter_mut().for_each(|v| *v = 0.0);
    }

    let far_sources = aggregate_sources(grid, f);
    let decay = decay_report(grid, &values);
    Ok(FreeSpaceSolution {
        grid: *grid,
        values,
        table,
        far_sources,
        decay,
    })
}

fn aggregate_sources(grid: &CubeGrid, f: &[f64]) -> Vec<([f64; 3], f64)> {
    let n = grid.points;
    let h = grid.spacing();
    let nb = n.div_ceil(FAR_BLOCK);
    let mut out = Vec::new();
    for bi in 0..nb {
        for bj in 0..nb {
            for bk in 0..nb {
                let mut w = 0.0;
                let mut any = false;
                let mut centre = [0.0; 3];
                let mut count = 0.0;
                for i in bi * FAR_BLOCK..((bi + 1) * FAR_BLOCK).min(n) {
                    for j in bj * FAR_BLOCK..((bj + 1) * FAR_BLOCK).min(n) {
                        for k in bk * FAR_BLOCK..((bk + 1) * FAR_BLOCK).min(n) {
                            let v = f[grid.index(i, j, k)];
                            any |= v != 0.0;
                            w += v * h * h * h;
                            centre[0] += grid.coord(i);
                            centre[1] += grid.coord(j);
                            centre[2] += grid.coord(k);
                            count += 1.0;
                        }
                    }
                }
                if any {
                    centre.iter_mut().for_each(|c| *c /= count);
                    out.push((centre, w));
                }
            }
        }
    }
    out
}

fn decay_report(grid: &CubeGrid, values: &[f64]) -> DecayReport {
    let l = grid.half_extent;
    let (lo, hi) = (0.6 * l, 0.9 * l);
    let mid = 0.5 * (lo + hi);
    let (mut inner, mut outer) = (0.0f64, 0.0f64);
    for (flat, u) in values.iter().enumerate() {
        let r = norm(&grid.point(flat));
        if r < lo || r > hi {
            continue;
        }
        let w = r.exp() * u.abs();
        if r < mid {
            inner = inner.max(w);
        } else {
            outer = outer.max(w);
        }
    }
    let sup = inner.max(outer);
    let finite = sup.is_finite();
    DecayReport {
        sup_exp_weighted: sup,
        shell_bounds: (lo, hi),
        inner_sup: inner,
        outer_sup: outer,
        finite,
        pass: finite && outer <= inner,
    }
}

/// One row of the operator-inverse check: `(I-Δ)^log u` against `f`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseCheck {
    pub point: [f64; 3],
    pub applied: f64,
    pub source: f64,
    pub rel_error: f64,
}

/// Applies the singular integral to the interpolated solution at `points`.
pub fn operator_inverse_check<F: Fn(&[f64]) -> f64 + Sync>(
    solution: &FreeSpaceSolution,
    f: F,
    points: &[[f64; 3]],
    scheme: &QuadratureScheme,
) -> Result<Vec<InverseCheck>> {
    points
        .par_iter()
        .map(|p| {
            let applied = eval_singular_integral(|y| solution.eval(y), p, scheme)?;
            let source = f(p);
            Ok(InverseCheck {
                point: *p,
                applied,
                source,
                rel_error: (applied - source).abs() / source.abs(),
            })
        })
        .collect()
}

/// `u` with `û = f̂/log(1+|ξ|²)` for `ξ ≠ 0` and `û(0) = 0`.
pub fn poisson_periodic(f: &PeriodicField) -> Result<PeriodicField> {
    let scale = f.max_abs();
    if f.mean().abs() > 1e-12 * scale {
        return Err(Error::domain(format!(
            "source has mean {:e}; the symbol vanishes on the zero mode ξ = 0",
            f.mean()
        )));
    }
    let _ = KernelSpec::log(f.grid().dim())?;
    fourier_op::multiply_symbol(f, |xi2| if xi2 == 0.0 { 0.0 } else { 1.0 / xi2.ln_1p() })
}
