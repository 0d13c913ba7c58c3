//! Piecewise-constant Galerkin discretisation of the Dirichlet forms on
//! bounded domains, and the resulting generalised eigenproblems.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::{tail_mass, Kernel, KernelSpec, Order};
use crate::quadrature::{self, GaussRule};
use crate::report::{Cell, Table};
use crate::special_fn::log_gamma;

type Indicator = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;

/// Bounded domain given by an indicator and a bounding box.
#[derive(Clone)]
pub struct DomainSpec {
    dim: usize,
    name: String,
    indicator: Indicator,
    lo: [f64; 3],
    hi: [f64; 3],
    measure_hint: Option<f64>,
}

impl fmt::Debug for DomainSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DomainSpec")
            .field("dim", &self.dim)
            .field("name", &self.name)
            .field("lo", &&self.lo[..self.dim])
            .field("hi", &&self.hi[..self.dim])
            .field("measure_hint", &self.measure_hint)
            .finish()
    }
}

impl DomainSpec {
    /// The indicator is clipped to the box, so it is never true outside it.
    pub fn new<F>(name: &str, lo: &[f64], hi: &[f64], measure_hint: Option<f64>, indicator: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> bool + Send + Sync + 'static,
    {
        let dim = lo.len();
        if !(1..=3).contains(&dim) || hi.len() != dim {
            return Err(Error::UnsupportedDimension {
                dim,
                what: "domain".into(),
            });
        }
        if lo.iter().zip(hi).any(|(a, b)| !(b > a) || !a.is_finite() || !b.is_finite()) {
            return Err(Error::param("bounding_box", "needs lo < hi on every axis"));
        }
        if let Some(m) = measure_hint {
            if !(m > 0.0) {
                return Err(Error::param("measure_hint", "must be positive"));
            }
        }
        let mut l = [0.0; 3];
        let mut u = [0.0; 3];
        l[..dim].copy_from_slice(lo);
        u[..dim].copy_from_slice(hi);
        let ind: Indicator = Arc::new(move |x: &[f64]| {
            (0..dim).all(|k| x[k] >= l[k] && x[k] <= u[k]) && indicator(x)
        });
        Ok(Self {
            dim,
            name: name.to_string(),
            indicator: ind,
            lo: l,
            hi: u,
            measure_hint,
        })
    }

    /// Open interval `(a, b)`.
    pub fn interval(a: f64, b: f64) -> Result<Self> {
        Self::new("interval", &[a], &[b], Some(b - a), move |x| x[0] > a && x[0] < b)
    }

    /// Open square of the given side centred at the origin.
    pub fn square(side: f64) -> Result<Self> {
        Self::rectangle(side, side).map(|d| d.renamed("square"))
    }

    /// Open rectangle `(-a/2, a/2) × (-b/2, b/2)`.
    pub fn rectangle(a: f64, b: f64) -> Result<Self> {
        let (ha, hb) = (0.5 * a, 0.5 * b);
        Self::new("rectangle", &[-ha, -hb], &[ha, hb], Some(a * b), move |x| {
            x[0].abs() < ha && x[1].abs() < hb
        })
    }

    /// Open disc of the given radius centred at the origin.
    pub fn disc(radius: f64) -> Result<Self> {
        let r2 = radius * radius;
        Self::new("disc", &[-radius; 2], &[radius; 2], Some(PI * r2), move |x| {
            x[0] * x[0] + x[1] * x[1] < r2
        })
    }

    /// Open ball in three dimensions centred at the origin.
    pub fn ball(radius: f64) -> Result<Self> {
        let r2 = radius * radius;
        Self::new("ball", &[-radius; 3], &[radius; 3], Some(4.0 / 3.0 * PI * r2 * radius), move |x| {
            x[0] * x[0] + x[1] * x[1] + x[2] * x[2] < r2
        })
    }

    /// Raster domain. Header line `N h origin_0 [.. origin_{N-1}]`, then rows
    /// of `0`/`1` characters (first row = lowest last-axis index is *not*
    /// assumed: row `j` covers `origin_1 + j·h`). For N = 3, slices along the
    /// third axis are separated by blank lines.
    pub fn from_raster(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim_start().starts_with('#'));
        let header = lines.next().ok_or_else(|| Error::param("raster", "empty file"))?;
        let fields: Vec<f64> = header
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| Error::param("raster", format!("bad header token `{t}`"))))
            .collect::<Result<_>>()?;
        if fields.is_empty() {
            return Err(Error::param("raster", "missing header"));
        }
        let dim = fields[0] as usize;
        if !(1..=3).contains(&dim) || fields.len() != 2 + dim {
            return Err(Error::param("raster", "header must be `N h origin...` with 1 <= N <= 3"));
        }
        let h = fields[1];
        if !(h > 0.0) {
            return Err(Error::param("raster", "pixel size must be positive"));
        }
        let origin: Vec<f64> = fields[2..].to_vec();
        let mut slices: Vec<Vec<Vec<bool>>> = vec![Vec::new()];
        for line in lines {
            let line = line.trim();
            if line.is_empty() {
                if !slices.last().expect("non-empty").is_empty() {
                    slices.push(Vec::new());
                }
                continue;
            }
            let row: Vec<bool> = line
                .chars()
                .filter(|c| !c.is_whitespace())
                .map(|c| match c {
                    '0' => Ok(false),
                    '1' => Ok(true),
                    other => Err(Error::param("raster", format!("unexpected character `{other}`"))),
                })
                .collect::<Result<_>>()?;
            slices.last_mut().expect("non-empty").push(row);
        }
        if slices.last().is_some_and(|s| s.is_empty()) {
            slices.pop();
        }
        let nz = slices.len();
        let ny = slices.first().map_or(0, |s| s.len());
        let nx = slices.first().and_then(|s| s.first()).map_or(0, |r| r.len());
        if nx == 0
            || slices.iter().any(|s| s.len() != ny || s.iter().any(|r| r.len() != nx))
            || (dim == 1 && (ny != 1 || nz != 1))
            || (dim == 2 && nz != 1)
        {
            return Err(Error::param("raster", "rows must be rectangular and match N"));
        }
        let cells = slices.iter().flatten().flatten().filter(|b| **b).count();
        let sizes = [nx, ny, nz];
        let mut hi = origin.clone();
        for k in 0..dim {
            hi[k] += sizes[k] as f64 * h;
        }
        let o = origin.clone();
        let grid = slices;
        Self::new("raster", &origin, &hi, Some(cells as f64 * h.powi(dim as i32)), move |x| {
            let mut idx = [0usize; 3];
            for k in 0..dim {
                let v = ((x[k] - o[k]) / h).floor();
                if v < 0.0 || v >= sizes[k] as f64 {
                    return false;
                }
                idx[k] = v as usize;
            }
            grid[idx[2]][idx[1]][idx[0]]
        })
    }

    fn renamed(mut self, name: &str) -> Self {
        self.name = name.to_string();
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo[..self.dim]
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi[..self.dim]
    }

    pub fn measure_hint(&self) -> Option<f64> {
        self.measure_hint
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        (self.indicator)(x)
    }
}

/// Congruent cubic cells of side `h` on the lattice anchored at the domain's
/// bounding-box corner, kept when their centre lies in the domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    dim: usize,
    h: f64,
    origin: [f64; 3],
    lattice: Vec<[i64; 3]>,
}

impl Mesh {
    /// Mesh from explicit lattice indices; cell `i` has centre
    /// `origin + (index + 1/2) h`. Cells are stored in lexicographic order.
    pub fn from_lattice(dim: usize, h: f64, origin: &[f64], mut lattice: Vec<[i64; 3]>) -> Result<Self> {
        if !(1..=3).contains(&dim) || origin.len() != dim {
            return Err(Error::UnsupportedDimension {
                dim,
                what: "mesh".into(),
            });
        }
        if !(h > 0.0) {
            return Err(Error::param("h", "must be positive"));
        }
        if lattice.is_empty() {
            return Err(Error::EmptyMesh);
        }
        lattice.sort_unstable();
        lattice.dedup();
        let mut o = [0.0; 3];
        o[..dim].copy_from_slice(origin);
        Ok(Self {
            dim,
            h,
            origin: o,
            lattice,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn len(&self) -> usize {
        self.lattice.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lattice.is_empty()
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin[..self.dim]
    }

    pub fn lattice(&self) -> &[[i64; 3]] {
        &self.lattice
    }

    pub fn center(&self, i: usize) -> [f64; 3] {
        let mut c = [0.0; 3];
        for k in 0..self.dim {
            c[k] = self.origin[k] + (self.lattice[i][k] as f64 + 0.5) * self.h;
        }
        c
    }

    pub fn centers(&self) -> Vec<[f64; 3]> {
        (0..self.len()).map(|i| self.center(i)).collect()
    }

    /// `M h^N`.
    pub fn measure(&self) -> f64 {
        self.len() as f64 * self.cell_volume()
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    /// Relative deviation of `M h^N` from `reference`.
    pub fn measure_deviation(&self, reference: f64) -> f64 {
        (self.measure() - reference) / reference
    }
}

pub fn build_mesh(domain: &DomainSpec, h: f64) -> Result<Mesh> {
    let dim = domain.dim;
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::param("h", "must be positive"));
    }
    let mut counts = [1i64; 3];
    for k in 0..dim {
        let extent = domain.hi[k] - domain.lo[k];
        if h > extent {
            return Err(Error::param("h", "larger than the bounding box"));
        }
        counts[k] = (extent / h).ceil() as i64;
    }
    let mut lattice = Vec::new();
    let mut x = [0.0; 3];
    for i in 0..counts[0] {
        for j in 0..counts[1] {
            for l in 0..counts[2] {
                let idx = [i, j, l];
                for k in 0..dim {
                    x[k] = domain.lo[k] + (idx[k] as f64 + 0.5) * h;
                }
                if domain.contains(&x[..dim]) {
                    lattice.push(idx);
                }
            }
        }
    }
    Mesh::from_lattice(dim, h, domain.lo(), lattice)
}

/// Quadrature parameters for the cell interaction integrals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairQuadrature {
    /// Gauss nodes per graded radial panel of the Duffy rule.
    pub duffy_radial_order: usize,
    /// Number of geometric radial panels towards the singular corner.
    pub duffy_levels: usize,
    pub duffy_ratio: f64,
    /// Gauss nodes per transverse Duffy coordinate.
    pub duffy_transverse_order: usize,
    /// Tensor rule for boxes within `near_distance` box widths of the origin.
    pub near_order: usize,
    pub near_distance: f64,
    pub far_order: usize,
}

impl Default for PairQuadrature {
    fn default() -> Self {
        Self {
            duffy_radial_order: 12,
            duffy_levels: 16,
            duffy_ratio: 0.15,
            duffy_transverse_order: 12,
            near_order: 10,
            near_distance: 2.0,
            far_order: 5,
        }
    }
}

/// `∫` over the box `∏ [0, s_k h]` with the origin as a corner, by splitting
/// it into `N` pyramids: `z_m = s_m h u`, `z_k = s_k h u v_k`.
fn corner_box<F: Fn(&[f64; 3]) -> f64>(f: &F, dim: usize, signs: [f64; 3], h: f64, q: &PairQuadrature) -> f64 {
    let radial = GaussRule::legendre(q.duffy_radial_order);
    let trans = GaussRule::legendre(q.duffy_transverse_order);
    let breaks = quadrature::graded_breaks(0.0, 1.0, q.duffy_ratio, q.duffy_levels);
    let u_nodes: Vec<(f64, f64)> = breaks.windows(2).flat_map(|w| radial.mapped(w[0], w[1])).collect();
    let v_nodes: Vec<(f64, f64)> = trans.mapped(0.0, 1.0).collect();
    let jac = h.powi(dim as i32);
    let mut total = 0.0;
    for m in 0..dim {
        let others: Vec<usize> = (0..dim).filter(|&k| k != m).collect();
        let combos = v_nodes.len().pow(others.len() as u32);
        for &(u, wu) in &u_nodes {
            let mut acc = 0.0;
            for c in 0..combos {
                let mut z = [0.0; 3];
                z[m] = signs[m] * h * u;
                let mut w = 1.0;
                let mut rem = c;
                for &k in &others {
                    let (v, wv) = v_nodes[rem % v_nodes.len()];
                    rem /= v_nodes.len();
                    z[k] = signs[k] * h * u * v;
                    w *= wv;
                }
                acc += w * f(&z);
            }
            total += wu * u.powi(dim as i32 - 1) * acc;
        }
    }
    jac * total
}

/// Tensor Gauss rule on an axis-aligned box, subdividing boxes that are close
/// to the origin relative to their size.
fn tensor_box<F: Fn(&[f64; 3]) -> f64>(f: &F, dim: usize, lo: [f64; 3], hi: [f64; 3], q: &PairQuadrature, depth: usize) -> f64 {
    let mut dist2 = 0.0;
    let mut width = 0.0f64;
    for k in 0..dim {
        let c = 0.0f64.clamp(lo[k], hi[k]);
        dist2 += c * c;
        width = width.max(hi[k] - lo[k]);
    }
    let ratio = dist2.sqrt() / width;
    if ratio < q.near_distance && depth < 3 {
        let mut total = 0.0;
        for corner in 0..(1usize << dim) {
            let mut l = lo;
            let mut u = hi;
            for k in 0..dim {
                let mid = 0.5 * (lo[k] + hi[k]);
                if corner >> k & 1 == 0 {
                    u[k] = mid;
                } else {
                    l[k] = mid;
                }
            }
            total += tensor_box(f, dim, l, u, q, depth + 1);
        }
        return total;
    }
    let order = if ratio < 2.0 * q.near_distance { q.near_order } else { q.far_order };
    let rule = GaussRule::legendre(order);
    let axes: Vec<Vec<(f64, f64)>> = (0..dim).map(|k| rule.mapped(lo[k], hi[k]).collect()).collect();
    let mut total = 0.0;
    let n = rule.len();
    for c in 0..n.pow(dim as u32) {
        let mut z = [0.0; 3];
        let mut w = 1.0;
        let mut rem = c;
        for (k, ax) in axes.iter().enumerate() {
            let (x, wx) = ax[rem % n];
            rem /= n;
            z[k] = x;
            w *= wx;
        }
        total += w * f(&z);
    }
    total
}

fn radius(z: &[f64; 3]) -> f64 {
    (z[0] * z[0] + z[1] * z[1] + z[2] * z[2]).sqrt()
}

/// `∫_{Q_0} ∫_{Q_d} J(x - y) dy dx` for the lattice offset `d` (`d ≠ 0`),
/// written as `∫ J(z) ∏_k (h - |z_k - d_k h|)_+ dz`.
pub fn cell_pair_offset(spec: &KernelSpec, h: f64, offset: &[i64], q: &PairQuadrature) -> Result<f64> {
    let dim = spec.dim();
    if offset.len() != dim {
        return Err(Error::domain("offset dimension does not match the kernel"));
    }
    if offset.iter().all(|&d| d == 0) {
        return Err(Error::domain("identical cells: the diagonal is the self-interaction σ(h)"));
    }
    if !(h > 0.0) {
        return Err(Error::param("h", "must be positive"));
    }
    check_order(spec)?;
    let kernel = Kernel::new(*spec);
    let mut d = [0.0; 3];
    for k in 0..dim {
        d[k] = offset[k] as f64 * h;
    }
    let f = |z: &[f64; 3]| {
        let r = radius(z);
        if r == 0.0 {
            return 0.0;
        }
        let mut w = 1.0;
        for k in 0..dim {
            w *= (h - (z[k] - d[k]).abs()).max(0.0);
        }
        if w == 0.0 {
            0.0
        } else {
            w * kernel.radial(r)
        }
    };
    let mut total = 0.0;
    for corner in 0..(1usize << dim) {
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        let mut at_origin = true;
        let mut signs = [1.0; 3];
        for k in 0..dim {
            let (a, b) = if corner >> k & 1 == 0 { (d[k] - h, d[k]) } else { (d[k], d[k] + h) };
            lo[k] = a;
            hi[k] = b;
            if a == 0.0 {
                signs[k] = 1.0;
            } else if b == 0.0 {
                signs[k] = -1.0;
            } else {
                at_origin = false;
            }
        }
        total += if at_origin {
            corner_box(&f, dim, signs, h, q)
        } else {
            tensor_box(&f, dim, lo, hi, q, 0)
        };
    }
    Ok(total)
}

/// Cell interaction for two cells of a mesh.
pub fn cell_pair_integral(spec: &KernelSpec, mesh: &Mesh, i: usize, j: usize) -> Result<f64> {
    let d = offset_between(mesh, i, j);
    cell_pair_offset(spec, mesh.h, &d[..mesh.dim], &PairQuadrature::default())
}

fn offset_between(mesh: &Mesh, i: usize, j: usize) -> [i64; 3] {
    let (a, b) = (mesh.lattice[i], mesh.lattice[j]);
    [b[0] - a[0], b[1] - a[1], b[2] - a[2]]
}

fn check_order(spec: &KernelSpec) -> Result<()> {
    if let Order::Frac(s) = spec.order() {
        if s >= 0.5 {
            return Err(Error::param(
                "s",
                "indicator cells have infinite energy for s >= 1/2; use s < 1/2",
            ));
        }
    }
    Ok(())
}

/// `σ(h) = ∫_Q ∫_{R^N∖Q} J`, the interaction of a cell with its complement.
pub fn self_interaction(spec: &KernelSpec, h: f64, q: &PairQuadrature) -> Result<f64> {
    check_order(spec)?;
    let dim = spec.dim();
    let kernel = Kernel::new(*spec);
    let vol = h.powi(dim as i32);
    // Inside [-h, h]^N: J(z) (h^N - ∏(h - |z_k|)), which vanishes at z = 0.
    let f = |z: &[f64; 3]| {
        let r = radius(z);
        if r == 0.0 {
            return 0.0;
        }
        let mut w = 1.0;
        for zk in z.iter().take(dim) {
            w *= h - zk.abs();
        }
        kernel.radial(r) * (vol - w)
    };
    let mut inner = 0.0;
    for corner in 0..(1usize << dim) {
        let mut signs = [1.0; 3];
        for (k, s) in signs.iter_mut().enumerate().take(dim) {
            if corner >> k & 1 == 1 {
                *s = -1.0;
            }
        }
        inner += corner_box(&f, dim, signs, h, q);
    }
    Ok(inner + vol * outside_cube_mass(spec, h)?)
}

/// `∫_{|z|_∞ > h} J(z) dz` via the face decomposition
/// `2N ∫_{face} h |p|^{-N} T(|p|) dp` with the radial tail `T(ρ) = ∫_ρ^∞ J r^{N-1} dr`.
fn outside_cube_mass(spec: &KernelSpec, h: f64) -> Result<f64> {
    let dim = spec.dim();
    let sphere = spec.constants().sphere_measure;
    if dim == 1 {
        return tail_mass(spec, h);
    }
    let rule = GaussRule::legendre(16);
    let nodes: Vec<(f64, f64)> = rule.mapped(0.0, h).collect();
    let m = dim - 1;
    let combos = nodes.len().pow(m as u32);
    let values: Vec<f64> = (0..combos)
        .into_par_iter()
        .map(|c| -> Result<f64> {
            let mut p2 = h * h;
            let mut w = 1.0;
            let mut rem = c;
            for _ in 0..m {
                let (y, wy) = nodes[rem % nodes.len()];
                rem /= nodes.len();
                p2 += y * y;
                w *= wy;
            }
            let p = p2.sqrt();
            Ok(w * h * p.powi(-(dim as i32)) * tail_mass(spec, p)? / sphere)
        })
        .collect::<Result<_>>()?;
    let quadrant = values.iter().sum::<f64>();
    Ok(2.0 * dim as f64 * (1u32 << m) as f64 * quadrant)
}

/// Dense stiffness matrix of `E_ω` (or `E_{ω,s}`) on a mesh.
#[derive(Debug, Clone)]
pub struct StiffnessMatrix {
    spec: KernelSpec,
    h: f64,
    matrix: DMatrix<f64>,
    sigma: f64,
}

impl StiffnessMatrix {
    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// `h^N`.
    pub fn mass_scale(&self) -> f64 {
        self.h.powi(self.spec.dim() as i32)
    }

    /// Diagonal of the nonlocal part, `σ(h)`.
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.nrows() == 0
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.matrix.row_iter().map(|r| r.sum()).collect()
    }

    pub fn max_asymmetry(&self) -> f64 {
        (&self.matrix - self.matrix.transpose()).amax()
    }

    pub fn max_off_diagonal(&self) -> f64 {
        let n = self.len();
        let mut m = f64::NEG_INFINITY;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    m = m.max(self.matrix[(i, j)]);
                }
            }
        }
        m
    }

    /// `uᵀ A u`.
    pub fn quadratic_form(&self, u: &[f64]) -> f64 {
        let v = DVector::from_column_slice(u);
        v.dot(&(&self.matrix * &v))
    }

    /// Solves `A u = b` by Cholesky.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let chol = self.matrix.clone().cholesky().ok_or_else(|| Error::Numeric {
            what: "stiffness solve".into(),
            detail: "matrix is not positive definite".into(),
        })?;
        Ok(chol.solve(&DVector::from_column_slice(b)).iter().copied().collect())
    }

    /// Rows `row,col,value` for every stored entry.
    pub fn to_coordinate_table(&self) -> Table {
        let mut t = Table::new(["row", "col", "value"]);
        for i in 0..self.len() {
            for j in 0..self.len() {
                t.push(vec![Cell::from(i), Cell::from(j), Cell::Float(self.matrix[(i, j)])])
                    .expect("three columns");
            }
        }
        t
    }
}

/// Assembles the stiffness matrix with the default pair quadrature.
pub fn assemble_stiffness(mesh: &Mesh, spec: &KernelSpec) -> Result<StiffnessMatrix> {
    assemble_stiffness_with(mesh, spec, &PairQuadrature::default())
}

fn canonical(d: [i64; 3]) -> [i64; 3] {
    let mut a = [d[0].abs(), d[1].abs(), d[2].abs()];
    a.sort_unstable();
    a
}

pub fn assemble_stiffness_with(mesh: &Mesh, spec: &KernelSpec, q: &PairQuadrature) -> Result<StiffnessMatrix> {
    if spec.dim() != mesh.dim {
        return Err(Error::domain("kernel dimension does not match the mesh"));
    }
    check_order(spec)?;
    let m = mesh.len();
    let mut keys: Vec<[i64; 3]> = Vec::new();
    {
        let mut seen = std::collections::HashSet::new();
        for i in 0..m {
            for j in (i + 1)..m {
                let k = canonical(offset_between(mesh, i, j));
                if seen.insert(k) {
                    keys.push(k);
                }
            }
        }
    }
    keys.sort_unstable();
    let dim = mesh.dim;
    let values: Vec<f64> = keys
        .par_iter()
        .map(|k| {
            // Canonical keys are sorted ascending; use the trailing `dim` entries.
            cell_pair_offset(spec, mesh.h, &k[3 - dim..], q)
        })
        .collect::<Result<_>>()?;
    let table: HashMap<[i64; 3], f64> = keys.into_iter().zip(values).collect();
    let sigma = self_interaction(spec, mesh.h, q)?;
    let vol = mesh.cell_volume();
    let identity = if matches!(spec.order(), Order::Frac(_)) { vol } else { 0.0 };
    let mut a = DMatrix::zeros(m, m);
    for i in 0..m {
        a[(i, i)] = sigma + identity;
        for j in (i + 1)..m {
            let v = -table[&canonical(offset_between(mesh, i, j))];
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    Ok(StiffnessMatrix {
        spec: *spec,
        h: mesh.h,
        matrix: a,
        sigma,
    })
}

/// Eigenpair of `A φ = λ h^N φ` with `Σ φ_i² h^N = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub k: usize,
    pub value: f64,
    pub vector: Vec<f64>,
    /// `‖A φ - λ h^N φ‖₂`.
    pub residual: f64,
}

/// Solver selection for [`solve_eigs_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenPolicy {
    /// Largest size solved by the dense symmetric eigensolver.
    pub dense_limit: usize,
    /// Relative residual accepted by the iterative solver.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for EigenPolicy {
    fn default() -> Self {
        Self {
            dense_limit: 4096,
            tolerance: 1e-10,
            max_iterations: 500,
        }
    }
}

pub fn solve_eigs(a: &StiffnessMatrix, k: usize) -> Result<Vec<EigenPair>> {
    solve_eigs_with(a, k, &EigenPolicy::default())
}

pub fn solve_eigs_with(a: &StiffnessMatrix, k: usize, policy: &EigenPolicy) -> Result<Vec<EigenPair>> {
    let m = a.len();
    if k == 0 || k > m {
        return Err(Error::param("k", format!("must lie in 1..={m}")));
    }
    let scale = a.mass_scale();
    let (values, vectors) = if m <= policy.dense_limit {
        dense_eigs(&a.matrix, k)
    } else {
        subspace_eigs(&a.matrix, k, policy)?
    };
    let norm_a = a.matrix.amax();
    let mut out = Vec::with_capacity(k);
    for (idx, (lambda, v)) in values.into_iter().zip(vectors).enumerate() {
        // Largest-magnitude entry positive; earliest index wins ties.
        let mut pivot = 0;
        for i in 0..m {
            if v[i].abs() > v[pivot].abs() * (1.0 + 1e-12) {
                pivot = i;
            }
        }
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        let phi: DVector<f64> = v * (sign / scale.sqrt());
        let value = lambda / scale;
        let r = &a.matrix * &phi - &phi * (value * scale);
        let residual = r.norm();
        if !residual.is_finite() || residual > 1e-6 * norm_a * phi.norm() {
            return Err(Error::Numeric {
                what: "eigensolver".into(),
                detail: format!("residual {residual:e} for eigenpair {}", idx + 1),
            });
        }
        out.push(EigenPair {
            k: idx + 1,
            value,
            vector: phi.iter().copied().collect(),
            residual,
        });
    }
    Ok(out)
}

/// Smallest `k` eigenpairs of a symmetric matrix (unit Euclidean vectors).
fn dense_eigs(a: &DMatrix<f64>, k: usize) -> (Vec<f64>, Vec<DVector<f64>>) {
    let eig = SymmetricEigen::new(a.clone());
    let mut order: Vec<usize> = (0..a.nrows()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    order
        .into_iter()
        .take(k)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors.column(i).into_owned()))
        .unzip()
}

/// Block inverse iteration with Rayleigh–Ritz on a Cholesky factorisation.
fn subspace_eigs(a: &DMatrix<f64>, k: usize, policy: &EigenPolicy) -> Result<(Vec<f64>, Vec<DVector<f64>>)> {
    let m = a.nrows();
    let p = (k + k.min(8) + 2).min(m);
    let chol = a.clone().cholesky().ok_or_else(|| Error::Numeric {
        what: "eigensolver".into(),
        detail: "matrix is not positive definite".into(),
    })?;
    // Deterministic start: smooth, mutually independent columns.
    let mut x = DMatrix::from_fn(m, p, |i, j| {
        let t = (i as f64 + 0.5) / m as f64;
        (PI * (j + 1) as f64 * t).sin() + 1e-3 * ((i * 7919 + j * 104_729) % 1000) as f64 / 1000.0
    });
    let norm_a = a.amax();
    let mut last = f64::INFINITY;
    for _ in 0..policy.max_iterations {
        x = chol.solve(&x);
        x = x.qr().q();
        let h = x.transpose() * a * &x;
        let eig = SymmetricEigen::new(h);
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let ritz = &x * &eig.eigenvectors;
        x = DMatrix::from_fn(m, p, |i, j| ritz[(i, order[j])]);
        let vals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let mut worst = 0.0f64;
        for j in 0..k {
            let v = x.column(j);
            let r = a * v - v * vals[j];
            worst = worst.max(r.norm());
        }
        last = worst;
        if worst <= policy.tolerance * norm_a {
            let vectors = (0..k).map(|j| x.column(j).into_owned()).collect();
            return Ok((vals[..k].to_vec(), vectors));
        }
    }
    Err(Error::Numeric {
        what: "subspace iteration".into(),
        detail: format!("worst residual {last:e} after {} iterations", policy.max_iterations),
    })
}

/// Rows `k,lambda,residual`.
pub fn eigenpairs_table(pairs: &[EigenPair]) -> Table {
    let mut t = Table::new(["k", "lambda", "residual"]);
    for p in pairs {
        t.push(vec![Cell::from(p.k), Cell::Float(p.value), Cell::Float(p.residual)])
            .expect("three columns");
    }
    t
}

/// Rows `cell,x0[,x1[,x2]],value` for one eigenvector.
pub fn eigenvector_table(mesh: &Mesh, pair: &EigenPair) -> Table {
    let mut cols = vec!["cell".to_string()];
    cols.extend((0..mesh.dim).map(|k| format!("x{k}")));
    cols.push("value".into());
    let mut t = Table::new(cols);
    for (i, v) in pair.vector.iter().enumerate() {
        let c = mesh.center(i);
        let mut row = vec![Cell::from(i)];
        row.extend(c[..mesh.dim].iter().map(|x| Cell::Float(*x)));
        row.push(Cell::Float(*v));
        t.push(row).expect("row width");
    }
    t
}

fn unit_ball_volume(n: usize) -> f64 {
    let half = 0.5 * n as f64;
    PI.powf(half) / log_gamma(half + 1.0).expect("positive").exp()
}

fn poincare_profile(measure: f64, n: usize, divisor: f64) -> Result<f64> {
    if !(measure > 0.0) || !measure.is_finite() {
        return Err(Error::param("measure", "must be positive"));
    }
    if n == 0 {
        return Err(Error::param("N", "must be positive"));
    }
    let nf = n as f64;
    let r_max = 2.0 * PI * (measure * unit_ball_volume(n)).powf(-1.0 / nf);
    let f = |r: f64| (r * r).ln_1p() * (1.0 - (r / r_max).powf(nf)) / divisor;
    // Golden-section search; the profile is unimodal on (0, r_max).
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (0.0, r_max);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
        if b - a < 1e-14 * r_max {
            break;
        }
    }
    Ok(f(0.5 * (a + b)))
}

/// Certified lower bound `max_R log(1+R²)(1 - (2π)^{-N} R^N |Ω| |B_1|)/4` for `λ_1`.
pub fn poincare_lower_bound(measure: f64, n: usize) -> Result<f64> {
    poincare_profile(measure, n, 4.0)
}

/// The same optimisation with the Plancherel step carried out exactly,
/// `‖u‖²(1 - (2π)^{-N}R^N|Ω||B_1|) ≤ E(u,u)/log(1+R²)`; four times larger.
pub fn poincare_lower_bound_sharp(measure: f64, n: usize) -> Result<f64> {
    poincare_profile(measure, n, 1.0)
}
