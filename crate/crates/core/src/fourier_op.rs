//! `(I-Δ)^log` and `(I-Δ)^s` on periodic grids (symbol multiplication) and
//! pointwise through the singular integral (polar quadrature).

use std::f64::consts::PI;
use std::sync::OnceLock;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::kernel::{Kernel, KernelSpec, Order};
use crate::quadrature::{self, GaussRule};
use crate::report::{Cell, Table};

/// Uniform periodic grid on `[-L/2, L/2)^N` with `n` points per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodicGrid {
    dim: usize,
    extent: f64,
    points: usize,
}

impl PeriodicGrid {
    pub fn new(dim: usize, extent: f64, points: usize) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::UnsupportedDimension {
                dim,
                what: "periodic grid".into(),
            });
        }
        if !(extent > 0.0 && extent.is_finite()) {
            return Err(Error::param("extent", "must be positive"));
        }
        if points < 8 || points % 2 != 0 {
            return Err(Error::param("points", "must be an even integer >= 8"));
        }
        Ok(Self { dim, extent, points })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn spacing(&self) -> f64 {
        self.extent / self.points as f64
    }

    pub fn len(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Per-axis indices of a flat (row-major) index.
    pub fn multi_index(&self, flat: usize) -> [usize; 3] {
        let mut idx = [0usize; 3];
        let mut rem = flat;
        for axis in (0..self.dim).rev() {
            idx[axis] = rem % self.points;
            rem /= self.points;
        }
        idx
    }

    /// Coordinates of a flat index; the origin sits at index `n/2` per axis.
    pub fn coords(&self, flat: usize) -> [f64; 3] {
        let idx = self.multi_index(flat);
        let h = self.spacing();
        let mut x = [0.0; 3];
        for axis in 0..self.dim {
            x[axis] = -0.5 * self.extent + idx[axis] as f64 * h;
        }
        x
    }

    /// Angular frequency `2πk/L`, `k ∈ [-n/2, n/2)`, for an FFT bin.
    pub fn frequency(&self, bin: usize) -> f64 {
        let n = self.points as i64;
        let k = bin as i64;
        let k = if k < n / 2 { k } else { k - n };
        2.0 * PI * k as f64 / self.extent
    }

    /// `|ξ|²` for every coefficient, in storage order.
    pub fn frequency_norms_sq(&self) -> Vec<f64> {
        (0..self.len())
            .map(|flat| {
                let idx = self.multi_index(flat);
                (0..self.dim).map(|a| self.frequency(idx[a]).powi(2)).sum()
            })
            .collect()
    }
}

/// Samples on a [`PeriodicGrid`] with lazily computed DFT coefficients.
#[derive(Debug, Clone)]
pub struct PeriodicField {
    grid: PeriodicGrid,
    values: Vec<f64>,
    coeffs: OnceLock<Vec<Complex64>>,
}

impl PeriodicField {
    pub fn from_values(grid: PeriodicGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::domain(format!(
                "field has {} samples, grid needs {}",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("field contains non-finite samples"));
        }
        Ok(Self {
            grid,
            values,
            coeffs: OnceLock::new(),
        })
    }

    pub fn from_fn<F: Fn(&[f64]) -> f64>(grid: PeriodicGrid, f: F) -> Result<Self> {
        let values = (0..grid.len())
            .map(|i| {
                let x = grid.coords(i);
                f(&x[..grid.dim])
            })
            .collect();
        Self::from_values(grid, values)
    }

    /// Builds the field from DFT coefficients; the imaginary part of the
    /// inverse transform is discarded.
    pub fn from_coefficients(grid: PeriodicGrid, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.len() {
            return Err(Error::domain("coefficient count does not match grid"));
        }
        let mut work = coeffs.clone();
        fft_nd(&mut work, grid.dim, grid.points, true);
        let values = work.iter().map(|c| c.re).collect();
        let field = Self::from_values(grid, values)?;
        let _ = field.coeffs.set(coeffs);
        Ok(field)
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn coefficients(&self) -> &[Complex64] {
        self.coeffs.get_or_init(|| {
            let mut work: Vec<Complex64> =
                self.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
            fft_nd(&mut work, self.grid.dim, self.grid.points, false);
            work
        })
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Discrete L² inner product `Σ u v h^N`.
    pub fn inner(&self, other: &PeriodicField) -> f64 {
        let w = self.grid.spacing().powi(self.grid.dim as i32);
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            * w
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Rows `i0[,i1[,i2]],value`.
    pub fn to_table(&self) -> Table {
        let mut columns: Vec<String> = (0..self.grid.dim).map(|a| format!("i{a}")).collect();
        columns.push("value".into());
        let mut table = Table::new(columns);
        for (flat, v) in self.values.iter().enumerate() {
            let idx = self.grid.multi_index(flat);
            let mut row: Vec<Cell> = (0..self.grid.dim).map(|a| Cell::Int(idx[a] as i64)).collect();
            row.push(Cell::Float(*v));
            table.push(row).expect("row width matches");
        }
        table
    }
}

/// In-place N-dimensional DFT over a row-major cube; the inverse is normalised.
pub(crate) fn fft_nd(data: &mut [Complex64], dim: usize, n: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    for axis in 0..dim {
        let stride = n.pow((dim - 1 - axis) as u32);
        let block = stride * n;
        for start in (0..data.len()).step_by(block) {
            for offset in 0..stride {
                let base = start + offset;
                for (k, slot) in line.iter_mut().enumerate() {
                    *slot = data[base + k * stride];
                }
                fft.process(&mut line);
                for (k, v) in line.iter().enumerate() {
                    data[base + k * stride] = *v;
                }
            }
        }
    }
    if inverse {
        let scale = 1.0 / data.len() as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }
}

/// Fourier symbol at `|ξ|²`: `log(1+|ξ|²)` or `(1+|ξ|²)^s`.
pub fn symbol(order: Order, xi_sq: f64) -> f64 {
    match order {
        Order::Log => xi_sq.ln_1p(),
        Order::Frac(s) => (1.0 + xi_sq).powf(s),
    }
}

/// Multiplies the DFT coefficients of `field` by the operator symbol.
pub fn apply_symbol(field: &PeriodicField, spec: &KernelSpec) -> Result<PeriodicField> {
    if spec.dim() != field.grid.dim {
        return Err(Error::domain("kernel dimension does not match the grid"));
    }
    multiply_symbol(field, |xi2| symbol(spec.order(), xi2))
}

pub(crate) fn multiply_symbol<F: Fn(f64) -> f64>(
    field: &PeriodicField,
    m: F,
) -> Result<PeriodicField> {
    let norms = field.grid.frequency_norms_sq();
    let coeffs = field
        .coefficients()
        .iter()
        .zip(&norms)
        .map(|(c, &xi2)| c * m(xi2))
        .collect();
    PeriodicField::from_coefficients(field.grid, coeffs)
}

/// Polar quadrature parameters for the pointwise singular integrals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureScheme {
    /// Radius separating the graded inner panel from the outer panels.
    pub radial_split: f64,
    /// Gauss nodes per inner (graded) panel.
    pub inner_nodes: usize,
    /// Gauss nodes per unit-width outer panel.
    pub outer_nodes: usize,
    /// Angular resolution: circle nodes for N = 2, polar nodes for N = 3.
    pub angular_nodes: usize,
    pub radial_cutoff: f64,
    /// Allowed disagreement between the rule and its refinement.
    pub tolerance: f64,
}

impl Default for QuadratureScheme {
    fn default() -> Self {
        Self {
            radial_split: 1.0,
            inner_nodes: 16,
            outer_nodes: 16,
            angular_nodes: 32,
            radial_cutoff: 40.0,
            tolerance: 1e-8,
        }
    }
}

const INNER_RATIO: f64 = 0.2;
const INNER_LEVELS: usize = 14;

impl QuadratureScheme {
    fn validate(&self) -> Result<()> {
        if !(self.radial_split > 0.0 && self.radial_cutoff > self.radial_split) {
            return Err(Error::param("radial_cutoff", "need 0 < radial_split < radial_cutoff"));
        }
        if self.inner_nodes == 0 || self.outer_nodes == 0 || self.angular_nodes == 0 {
            return Err(Error::param("nodes", "node counts must be positive"));
        }
        Ok(())
    }

    fn refined(&self) -> Self {
        Self {
            inner_nodes: self.inner_nodes + self.inner_nodes / 2,
            outer_nodes: self.outer_nodes + self.outer_nodes / 2,
            angular_nodes: self.angular_nodes + self.angular_nodes / 2,
            ..*self
        }
    }

    /// Radial nodes and weights over `(0, radial_cutoff]`.
    fn radial_rule(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        let inner = GaussRule::legendre(self.inner_nodes);
        let breaks = quadrature::graded_breaks(0.0, self.radial_split, INNER_RATIO, INNER_LEVELS);
        for w in breaks.windows(2) {
            out.extend(inner.mapped(w[0], w[1]));
        }
        let outer = GaussRule::legendre(self.outer_nodes);
        let breaks = quadrature::uniform_breaks(self.radial_split, self.radial_cutoff, 1.0);
        for w in breaks.windows(2) {
            out.extend(outer.mapped(w[0], w[1]));
        }
        out
    }

    /// Unit directions covering half the sphere, with weights summing to the
    /// full sphere measure (integrands are even in the direction).
    fn directions(&self, dim: usize) -> Vec<([f64; 3], f64)> {
        match dim {
            1 => vec![([1.0, 0.0, 0.0], 2.0)],
            2 => {
                let m = self.angular_nodes;
                let w = 2.0 * PI / m as f64;
                (0..m)
                    .map(|j| {
                        let t = (j as f64 + 0.5) * PI / m as f64;
                        ([t.cos(), t.sin(), 0.0], w)
                    })
                    .collect()
            }
            _ => {
                let m = self.angular_nodes;
                let polar = GaussRule::legendre(m);
                let nphi = m;
                let wphi = 2.0 * PI / nphi as f64;
                let mut out = Vec::with_capacity(m * nphi);
                for (ct, wt) in polar.nodes.iter().zip(&polar.weights) {
                    let st = (1.0 - ct * ct).max(0.0).sqrt();
                    for j in 0..nphi {
                        // φ over [0, π) only; the antipodal half is covered by evenness.
                        let phi = (j as f64 + 0.5) * PI / nphi as f64;
                        out.push(([st * phi.cos(), st * phi.sin(), *ct], wt * wphi));
                    }
                }
                out
            }
        }
    }
}

/// `∫_{R^N} K(|y|) g(y) dy` for an even integrand `g`, by the polar rule.
fn polar_integral<K, G>(dim: usize, scheme: &QuadratureScheme, kernel: K, g: G) -> f64
where
    K: Fn(f64) -> f64,
    G: Fn(&[f64]) -> f64,
{
    let radial = scheme.radial_rule();
    let dirs = scheme.directions(dim);
    let mut y = [0.0; 3];
    let mut total = 0.0;
    for (r, wr) in radial {
        let kr = kernel(r) * r.powi(dim as i32 - 1);
        if kr == 0.0 {
            continue;
        }
        let mut shell = 0.0;
        for (theta, wt) in &dirs {
            for a in 0..dim {
                y[a] = r * theta[a];
            }
            shell += wt * g(&y[..dim]);
        }
        total += wr * kr * shell;
    }
    total
}

fn refined_polar<K, G>(dim: usize, scheme: &QuadratureScheme, what: &str, kernel: K, g: G) -> Result<f64>
where
    K: Fn(f64) -> f64,
    G: Fn(&[f64]) -> f64,
{
    scheme.validate()?;
    if !(1..=3).contains(&dim) {
        return Err(Error::UnsupportedDimension {
            dim,
            what: what.into(),
        });
    }
    let coarse = polar_integral(dim, scheme, &kernel, &g);
    let fine = polar_integral(dim, &scheme.refined(), &kernel, &g);
    let diff = (fine - coarse).abs();
    let tol = scheme.tolerance * fine.abs().max(1.0);
    if !(diff <= tol) {
        return Err(Error::Accuracy {
            what: what.into(),
            achieved: diff,
            requested: tol,
        });
    }
    Ok(fine)
}

fn second_difference<'a, U: Fn(&[f64]) -> f64>(
    u: &'a U,
    x: &'a [f64],
) -> impl Fn(&[f64]) -> f64 + 'a {
    let ux = u(x);
    move |y: &[f64]| {
        let mut p = [0.0; 3];
        let mut m = [0.0; 3];
        for a in 0..x.len() {
            p[a] = x[a] + y[a];
            m[a] = x[a] - y[a];
        }
        2.0 * ux - u(&p[..x.len()]) - u(&m[..x.len()])
    }
}

/// `(I-Δ)^log u(x)` through `(1/2)∫ (2u(x) - u(x+y) - u(x-y)) J(y) dy`.
pub fn eval_singular_integral<U: Fn(&[f64]) -> f64>(
    u: U,
    x: &[f64],
    scheme: &QuadratureScheme,
) -> Result<f64> {
    let kernel = Kernel::new(KernelSpec::log(x.len().max(1))?);
    let g = second_difference(&u, x);
    let v = refined_polar(x.len(), scheme, "singular integral", |r| kernel.radial(r), g)?;
    Ok(0.5 * v)
}

/// `((I-Δ)^s u(x) - u(x)) / s`, the hypersingular part divided by `s`.
pub fn difference_quotient<U: Fn(&[f64]) -> f64>(
    u: U,
    x: &[f64],
    s: f64,
    scheme: &QuadratureScheme,
) -> Result<f64> {
    let kernel = Kernel::new(KernelSpec::frac(x.len().max(1), s)?);
    let g = second_difference(&u, x);
    let v = refined_polar(x.len(), scheme, "difference quotient", |r| kernel.radial(r), g)?;
    Ok(0.5 * v / s)
}

/// `Λ(φ,ψ)(x) = ∫ (φ(x)-φ(x+y))(ψ(x)-ψ(x+y)) J(y) dy`.
pub fn interaction_term<P, Q>(phi: P, psi: Q, x: &[f64], scheme: &QuadratureScheme) -> Result<f64>
where
    P: Fn(&[f64]) -> f64,
    Q: Fn(&[f64]) -> f64,
{
    let dim = x.len();
    let kernel = Kernel::new(KernelSpec::log(dim.max(1))?);
    let (px, qx) = (phi(x), psi(x));
    let g = |y: &[f64]| {
        let mut p = [0.0; 3];
        let mut m = [0.0; 3];
        for a in 0..dim {
            p[a] = x[a] + y[a];
            m[a] = x[a] - y[a];
        }
        let (pp, pm) = (&p[..dim], &m[..dim]);
        0.5 * ((px - phi(pp)) * (qx - psi(pp)) + (px - phi(pm)) * (qx - psi(pm)))
    };
    refined_polar(dim, scheme, "interaction term", |r| kernel.radial(r), g)
}

/// Both sides of the product rule
/// `L(φψ) = φ L(ψ) + ψ L(φ) - Λ(φ,ψ)` at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProductRule {
    pub lhs: f64,
    pub rhs: f64,
    pub defect: f64,
}

pub fn product_rule_defect<P, Q>(
    phi: P,
    psi: Q,
    x: &[f64],
    scheme: &QuadratureScheme,
) -> Result<ProductRule>
where
    P: Fn(&[f64]) -> f64,
    Q: Fn(&[f64]) -> f64,
{
    let lhs = eval_singular_integral(|y| phi(y) * psi(y), x, scheme)?;
    let l_phi = eval_singular_integral(&phi, x, scheme)?;
    let l_psi = eval_singular_integral(&psi, x, scheme)?;
    let lambda = interaction_term(&phi, &psi, x, scheme)?;
    let rhs = phi(x) * l_psi + psi(x) * l_phi - lambda;
    Ok(ProductRule {
        lhs,
        rhs,
        defect: lhs - rhs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid1() -> PeriodicGrid {
        PeriodicGrid::new(1, 40.0, 256).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(PeriodicGrid::new(4, 10.0, 8).is_err());
        assert!(PeriodicGrid::new(1, 10.0, 7).is_err());
        assert!(PeriodicGrid::new(1, 10.0, 6).is_err());
        assert!(PeriodicGrid::new(1, -1.0, 8).is_err());
        let g = PeriodicGrid::new(2, 10.0, 8).unwrap();
        assert_eq!(g.len(), 64);
        assert_eq!(g.coords(4 * 8 + 4)[..2], [0.0, 0.0]);
    }

    #[test]
    fn round_trip_transform() {
        let g = PeriodicGrid::new(2, 20.0, 16).unwrap();
        let f = PeriodicField::from_fn(g, |x| (-(x[0] * x[0] + 0.5 * x[1] * x[1])).exp() + 0.1 * x[0])
            .unwrap();
        let back = PeriodicField::from_coefficients(g, f.coefficients().to_vec()).unwrap();
        let scale = f.max_abs();
        for (a, b) in f.values().iter().zip(back.values()) {
            assert!((a - b).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn hermitian_coefficients_for_real_fields() {
        let g = PeriodicGrid::new(2, 10.0, 8).unwrap();
        let f = PeriodicField::from_fn(g, |x| (x[0] - 0.3 * x[1]).sin() + x[1].cos()).unwrap();
        let c = f.coefficients();
        let n = 8;
        for i in 0..n {
            for j in 0..n {
                let a = c[i * n + j];
                let b = c[((n - i) % n) * n + (n - j) % n];
                assert!((a - b.conj()).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_fields() {
        let g = grid1();
        let f = PeriodicField::from_fn(g, |_| 3.0).unwrap();
        let log = apply_symbol(&f, &KernelSpec::log(1).unwrap()).unwrap();
        assert!(log.max_abs() < 1e-13);
        let frac = apply_symbol(&f, &KernelSpec::frac(1, 0.4).unwrap()).unwrap();
        for v in frac.values() {
            assert!((v - 3.0).abs() < 1e-13);
        }
    }

    #[test]
    fn plane_wave_eigenrelation() {
        let g = grid1();
        let xi = 2.0 * PI * 3.0 / g.extent();
        let f = PeriodicField::from_fn(g, |x| (xi * x[0]).cos()).unwrap();
        let out = apply_symbol(&f, &KernelSpec::log(1).unwrap()).unwrap();
        let m = (xi * xi).ln_1p();
        for (a, b) in f.values().iter().zip(out.values()) {
            assert!((m * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_has_zero_singular_integral() {
        let s = QuadratureScheme::default();
        assert_eq!(eval_singular_integral(|_| 1.0, &[0.3, -0.2], &s).unwrap(), 0.0);
        assert_eq!(difference_quotient(|_| 1.0, &[0.3], 0.2, &s).unwrap(), 0.0);
    }

    #[test]
    fn cosine_symbol_by_quadrature() {
        let s = QuadratureScheme::default();
        let v = eval_singular_integral(|x| (2.0 * x[0]).cos(), &[0.0], &s).unwrap();
        assert!((v - 5f64.ln()).abs() < 1e-6, "{v}");
    }

    #[test]
    fn difference_quotient_matches_scalar_symbol() {
        let s = QuadratureScheme::default();
        let q = difference_quotient(|x| x[0].cos(), &[0.0], 0.01, &s).unwrap();
        let want = (2f64.powf(0.01) - 1.0) / 0.01;
        assert!((q - want).abs() < 1e-6, "{q} vs {want}");
        assert!((want - 0.6956).abs() < 1e-4);
        assert!(((q - 2f64.ln()) - 2.4e-3).abs() < 1e-4);
    }

    #[test]
    fn two_dimensional_plane_wave() {
        let s = QuadratureScheme::default();
        let k = [1.0, 0.5];
        let v = eval_singular_integral(|x| (k[0] * x[0] + k[1] * x[1]).cos(), &[0.0, 0.0], &s).unwrap();
        assert!((v - 1.25f64.ln_1p()).abs() < 1e-6, "{v}");
    }

    #[test]
    fn interaction_of_a_function_with_itself_is_nonnegative() {
        let s = QuadratureScheme::default();
        let phi = |x: &[f64]| (-x[0] * x[0]).exp();
        for x in [-2.0, -0.5, 0.0, 0.7, 3.0] {
            assert!(interaction_term(phi, phi, &[x], &s).unwrap() >= 0.0);
        }
    }

    #[test]
    fn product_rule_with_zero_factor() {
        let s = QuadratureScheme::default();
        let pr = product_rule_defect(|_| 0.0, |x: &[f64]| x[0].sin(), &[0.2], &s).unwrap();
        assert_eq!(pr.lhs, 0.0);
        assert_eq!(pr.rhs, 0.0);
    }

    #[test]
    fn accuracy_failure_is_reported() {
        let coarse = QuadratureScheme {
            inner_nodes: 2,
            outer_nodes: 1,
            tolerance: 1e-14,
            ..Default::default()
        };
        let r = eval_singular_integral(|x| (7.0 * x[0]).cos(), &[0.0], &coarse);
        assert!(matches!(r, Err(Error::Accuracy { .. })));
    }
}
