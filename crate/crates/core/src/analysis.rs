//! Experiments on the discrete eigenproblems: Faber–Krahn comparison,
//! rearrangement, small-order asymptotics, scalar bounds and the discrete
//! maximum principle.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::galerkin::{self, build_mesh, solve_eigs, DomainSpec, Mesh, StiffnessMatrix};
use crate::kernel::{Kernel, KernelSpec};
use crate::report::{Cell, Summary, Table};
use crate::{fourier_op, green, special_fn};

/// Seed used when a caller does not supply one.
pub const DEFAULT_SEED: u64 = 20_240_611;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `Σ h^N u_i²`, summed in ascending order of `|u_i|` so that the result is
/// invariant under permutations of `u`.
pub fn l2_norm_sq(mesh: &Mesh, u: &[f64]) -> f64 {
    let mut sq: Vec<f64> = u.iter().map(|v| v * v).collect();
    sq.sort_by(f64::total_cmp);
    mesh.cell_volume() * sq.iter().sum::<f64>()
}

/// The `count` lattice cells of `mesh`'s lattice whose centres are closest to
/// the centroid of `mesh` (snapped to a multiple of `h/64` from the lattice
/// origin); equal distances are taken in lexicographic index order. Returns
/// the mesh and the ball centre.
pub fn ball_mesh(mesh: &Mesh) -> Result<(Mesh, [f64; 3])> {
    let dim = mesh.dim();
    let h = mesh.h();
    let count = mesh.len();
    let origin = mesh.origin();
    // Centroid in lattice units, accumulated exactly on the integer indices.
    let mut sums = [0i64; 3];
    for idx in mesh.lattice() {
        for k in 0..dim {
            sums[k] += idx[k];
        }
    }
    let mut vertex_idx = [0i64; 3];
    let mut frac = [0.0; 3];
    let mut center = [0.0; 3];
    for k in 0..dim {
        let c = sums[k] as f64 / count as f64 + 0.5;
        let snapped = (c * 64.0).round() / 64.0;
        vertex_idx[k] = snapped.floor() as i64;
        frac[k] = snapped - vertex_idx[k] as f64;
        center[k] = origin[k] + snapped * h;
    }
    let unit_ball = PI.powf(0.5 * dim as f64) / special_fn::gamma(0.5 * dim as f64 + 1.0)?;
    let radius = (count as f64 / unit_ball).powf(1.0 / dim as f64) + 3.0;
    let reach = radius.ceil() as i64;
    let mut candidates: Vec<(f64, [i64; 3])> = Vec::new();
    let span = |k: usize| if k < dim { -reach..reach } else { 0..1 };
    for i in span(0) {
        for j in span(1) {
            for l in span(2) {
                let off = [i, j, l];
                // Distance in units of h from the centre to cell `vertex + off`.
                let d2: f64 = (0..dim).map(|k| (off[k] as f64 + 0.5 - frac[k]).powi(2)).sum();
                let mut idx = [0i64; 3];
                for k in 0..dim {
                    idx[k] = vertex_idx[k] + off[k];
                }
                candidates.push((d2, idx));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    if candidates.len() < count {
        return Err(Error::domain("ball candidate region too small"));
    }
    let lattice = candidates.into_iter().take(count).map(|(_, i)| i).collect();
    Ok((Mesh::from_lattice(dim, h, origin, lattice)?, center))
}

/// Symmetric decreasing rearrangement of `u` onto `target`, centred at `center`.
pub fn rearrange(u: &[f64], target: &Mesh, center: &[f64]) -> Result<Vec<f64>> {
    if u.len() != target.len() {
        return Err(Error::domain(format!(
            "cell count mismatch: {} values for {} target cells",
            u.len(),
            target.len()
        )));
    }
    let dim = target.dim();
    let mut values: Vec<f64> = u.iter().map(|v| v.abs()).collect();
    values.sort_by(|a, b| b.total_cmp(a));
    let mut order: Vec<(f64, usize)> = (0..target.len())
        .map(|i| {
            let c = target.center(i);
            let d2: f64 = (0..dim).map(|k| (c[k] - center[k]).powi(2)).sum();
            (d2, i)
        })
        .collect();
    // Cells are stored lexicographically, so index order breaks ties.
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut out = vec![0.0; u.len()];
    for ((_, i), v) in order.into_iter().zip(values) {
        out[i] = v;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RearrangementReport {
    pub energy_before: f64,
    pub energy_after: f64,
    pub l2_before: f64,
    pub l2_after: f64,
    pub pass: bool,
}

/// Relative slack allowed on `E(u*, u*) ≤ E(u, u)` at the discrete level.
pub const REARRANGEMENT_SLACK: f64 = 0.02;

pub fn rearrangement_report(
    source: &StiffnessMatrix,
    source_mesh: &Mesh,
    target: &StiffnessMatrix,
    target_mesh: &Mesh,
    center: &[f64],
    u: &[f64],
) -> Result<RearrangementReport> {
    let star = rearrange(u, target_mesh, center)?;
    let energy_before = source.quadratic_form(u);
    let energy_after = target.quadratic_form(&star);
    let l2_before = l2_norm_sq(source_mesh, u).sqrt();
    let l2_after = l2_norm_sq(target_mesh, &star).sqrt();
    Ok(RearrangementReport {
        energy_before,
        energy_after,
        l2_before,
        l2_after,
        pass: energy_after <= energy_before * (1.0 + REARRANGEMENT_SLACK) && l2_after == l2_before,
    })
}

/// Random nonnegative test function: a few Gaussian bumps plus cellwise noise.
pub fn random_nonnegative(mesh: &Mesh, rng: &mut impl Rng) -> Vec<f64> {
    let dim = mesh.dim();
    let centers = mesh.centers();
    let lo: Vec<f64> = (0..dim)
        .map(|k| centers.iter().map(|c| c[k]).fold(f64::INFINITY, f64::min))
        .collect();
    let hi: Vec<f64> = (0..dim)
        .map(|k| centers.iter().map(|c| c[k]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let bumps: Vec<([f64; 3], f64, f64)> = (0..rng.random_range(1..=4))
        .map(|_| {
            let mut c = [0.0; 3];
            for k in 0..dim {
                c[k] = rng.random_range(lo[k]..=hi[k]);
            }
            let width = rng.random_range(0.05..0.6) * (hi[0] - lo[0]).max(mesh.h());
            (c, width, rng.random_range(0.2..1.0))
        })
        .collect();
    let noise = rng.random_range(0.0..0.3);
    centers
        .iter()
        .map(|x| {
            let smooth: f64 = bumps
                .iter()
                .map(|(c, w, a)| {
                    let d2: f64 = (0..dim).map(|k| (x[k] - c[k]).powi(2)).sum();
                    a * (-d2 / (w * w)).exp()
                })
                .sum();
            smooth + noise * rng.random::<f64>()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolyaSzegoReport {
    pub trials: Vec<RearrangementReport>,
    pub violations: usize,
    /// Largest `E(u*, u*) / E(u, u)`.
    pub worst_ratio: f64,
    pub pass: bool,
}

pub fn polya_szego_check(domain: &DomainSpec, h: f64, trials: usize, seed: u64) -> Result<PolyaSzegoReport> {
    let spec = KernelSpec::log(domain.dim())?;
    let mesh = build_mesh(domain, h)?;
    let (ball, center) = ball_mesh(&mesh)?;
    let a = galerkin::assemble_stiffness(&mesh, &spec)?;
    let b = if ball == mesh { a.clone() } else { galerkin::assemble_stiffness(&ball, &spec)? };
    let mut rng = rng(seed);
    let mut reports = Vec::with_capacity(trials);
    for _ in 0..trials {
        let u = random_nonnegative(&mesh, &mut rng);
        reports.push(rearrangement_report(&a, &mesh, &b, &ball, &center[..mesh.dim()], &u)?);
    }
    let violations = reports.iter().filter(|r| !r.pass).count();
    let worst_ratio = reports
        .iter()
        .map(|r| r.energy_after / r.energy_before)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(PolyaSzegoReport {
        trials: reports,
        violations,
        worst_ratio,
        pass: violations == 0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaberKrahnReport {
    pub cells: usize,
    pub lambda_omega: f64,
    pub lambda_ball: f64,
    pub margin: f64,
}

/// Smallest mesh accepted by [`faber_krahn`].
pub const FABER_KRAHN_MIN_CELLS: usize = 100;

pub fn faber_krahn(domain: &DomainSpec, h: f64) -> Result<FaberKrahnReport> {
    let spec = KernelSpec::log(domain.dim())?;
    let mesh = build_mesh(domain, h)?;
    if mesh.len() < FABER_KRAHN_MIN_CELLS {
        return Err(Error::param(
            "h",
            format!("resolves the domain with {} cells; need at least {FABER_KRAHN_MIN_CELLS}", mesh.len()),
        ));
    }
    let (ball, _) = ball_mesh(&mesh)?;
    let lambda_omega = solve_eigs(&galerkin::assemble_stiffness(&mesh, &spec)?, 1)?[0].value;
    let lambda_ball = if ball == mesh {
        lambda_omega
    } else {
        solve_eigs(&galerkin::assemble_stiffness(&ball, &spec)?, 1)?[0].value
    };
    Ok(FaberKrahnReport {
        cells: mesh.len(),
        lambda_omega,
        lambda_ball,
        margin: lambda_omega - lambda_ball,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmallOrderRow {
    pub s: f64,
    pub lambda_ks: f64,
    /// `(λ_{k,s} - 1)/s`.
    pub quotient: f64,
    /// `λ_{k,log}` on the same mesh.
    pub reference: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmallOrderReport {
    pub k: usize,
    pub rows: Vec<SmallOrderRow>,
    /// `min_± ‖ψ_{k,s} ∓ ψ_{k,log}‖_{L²(h)}`, one per row.
    pub distances: Vec<f64>,
}

impl SmallOrderReport {
    /// Columns `s,lambda,quotient,reference,deviation`.
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(["s", "lambda", "quotient", "reference", "deviation"]);
        for r in &self.rows {
            t.push(vec![
                Cell::Float(r.s),
                Cell::Float(r.lambda_ks),
                Cell::Float(r.quotient),
                Cell::Float(r.reference),
                Cell::Float(r.deviation),
            ])
            .expect("five columns");
        }
        t
    }

    /// Ratios `deviation_i / deviation_{i+1}` between consecutive rows.
    pub fn deviation_ratios(&self) -> Vec<f64> {
        self.rows.windows(2).map(|w| w[0].deviation / w[1].deviation).collect()
    }
}

fn l2_distance_up_to_sign(mesh: &Mesh, a: &[f64], b: &[f64]) -> f64 {
    let plus: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let minus: f64 = a.iter().zip(b).map(|(x, y)| (x + y).powi(2)).sum();
    (mesh.cell_volume() * plus.min(minus)).sqrt()
}

pub fn small_order_sweep(domain: &DomainSpec, h: f64, s_list: &[f64], k: usize) -> Result<SmallOrderReport> {
    if !(1..=5).contains(&k) {
        return Err(Error::param("k", "must lie in 1..=5"));
    }
    if s_list.is_empty() {
        return Err(Error::param("s", "need at least one order"));
    }
    if s_list.iter().any(|s| !(*s > 0.0 && *s <= 0.5)) {
        return Err(Error::param("s", "orders must lie in (0, 1/2]"));
    }
    if s_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::param("s", "orders must be strictly descending"));
    }
    let mesh = build_mesh(domain, h)?;
    let dim = domain.dim();
    let log = solve_eigs(&galerkin::assemble_stiffness(&mesh, &KernelSpec::log(dim)?)?, k)?;
    let reference = &log[k - 1];
    let mut rows = Vec::new();
    let mut distances = Vec::new();
    for &s in s_list {
        let a = galerkin::assemble_stiffness(&mesh, &KernelSpec::frac(dim, s)?)?;
        let pair = &solve_eigs(&a, k)?[k - 1];
        let quotient = (pair.value - 1.0) / s;
        rows.push(SmallOrderRow {
            s,
            lambda_ks: pair.value,
            quotient,
            reference: reference.value,
            deviation: (quotient - reference.value).abs(),
        });
        distances.push(l2_distance_up_to_sign(&mesh, &pair.vector, &reference.vector));
    }
    Ok(SmallOrderReport { k, rows, distances })
}

/// `‖(A_s - h^N I)/s - A_log‖_max` for each `s`.
pub fn matrix_order_limit(mesh: &Mesh, s_list: &[f64]) -> Result<Vec<f64>> {
    let dim = mesh.dim();
    let log = galerkin::assemble_stiffness(mesh, &KernelSpec::log(dim)?)?;
    s_list
        .iter()
        .map(|&s| {
            let a = galerkin::assemble_stiffness(mesh, &KernelSpec::frac(dim, s)?)?;
            let mut m = a.matrix().clone();
            for i in 0..m.nrows() {
                m[(i, i)] -= mesh.cell_volume();
            }
            Ok((m / s - log.matrix()).amax())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarBoundsReport {
    pub samples: usize,
    pub violations: usize,
    /// Smallest `bound - lhs` for the first inequality, relative to the bound.
    pub worst_slack_first: f64,
    pub worst_slack_second: f64,
    pub pass: bool,
}

/// `((1+r²)^s - 1)/s`.
pub fn power_quotient(r: f64, s: f64) -> f64 {
    (s * (r * r).ln_1p()).exp_m1() / s
}

pub fn scalar_bounds_check(samples: usize, seed: u64) -> Result<ScalarBoundsReport> {
    if samples == 0 {
        return Err(Error::param("samples", "must be at least 1"));
    }
    let mut rng = rng(seed);
    let (mut violations, mut w1, mut w2) = (0, f64::INFINITY, f64::INFINITY);
    for _ in 0..samples {
        let r = 10f64.powf(rng.random_range(-3.0..=3.0));
        let s = loop {
            let s: f64 = rng.random();
            if s > 0.0 {
                break s;
            }
        };
        let q = power_quotient(r, s);
        let r4 = r.powi(4);
        let b1 = 2.0 * (1.0 + r4);
        let b2 = 2.0 * s * (1.0 + r4);
        let lhs2 = (q - (r * r).ln_1p()).abs();
        let (s1, s2) = ((b1 - q.abs()) / b1, (b2 - lhs2) / b2);
        if s1 < 0.0 || s2 < 0.0 || !q.is_finite() {
            violations += 1;
        }
        w1 = w1.min(s1);
        w2 = w2.min(s2);
    }
    Ok(ScalarBoundsReport {
        samples,
        violations,
        worst_slack_first: w1,
        worst_slack_second: w2,
        pass: violations == 0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxPrincipleReport {
    pub trials: usize,
    pub failures: usize,
    /// Most negative `min(u)/‖u‖_∞` seen.
    pub worst_ratio: f64,
    pub pass: bool,
}

/// Admissible undershoot relative to `‖u‖_∞`.
pub const MAX_PRINCIPLE_TOLERANCE: f64 = 1e-10;

/// Solves `A u = h^N f` for nonnegative `f` and checks `u ≥ 0` up to roundoff.
pub fn max_principle_check(stiff: &StiffnessMatrix, trials: usize, seed: u64) -> Result<MaxPrincipleReport> {
    let m = stiff.len();
    let chol = stiff.matrix().clone().cholesky().ok_or_else(|| Error::Numeric {
        what: "maximum principle".into(),
        detail: "stiffness matrix is not positive definite".into(),
    })?;
    let mut rng = rng(seed);
    let (mut failures, mut worst) = (0, f64::INFINITY);
    for t in 0..trials {
        let f: Vec<f64> = match t % 3 {
            0 => (0..m).map(|_| rng.random::<f64>()).collect(),
            1 => {
                let mut f = vec![0.0; m];
                f[rng.random_range(0..m)] = 1.0;
                f
            }
            _ => (0..m)
                .map(|_| if rng.random::<f64>() < 0.1 { rng.random::<f64>() } else { 0.0 })
                .collect(),
        };
        let b = nalgebra::DVector::from_iterator(m, f.iter().map(|v| v * stiff.mass_scale()));
        let u = chol.solve(&b);
        let sup = u.amax();
        let ratio = if sup > 0.0 { u.min() / sup } else { 0.0 };
        if ratio < -MAX_PRINCIPLE_TOLERANCE || !ratio.is_finite() {
            failures += 1;
        }
        worst = worst.min(ratio);
    }
    Ok(MaxPrincipleReport {
        trials,
        failures,
        worst_ratio: worst,
        pass: failures == 0,
    })
}

/// Outcome of one check in [`selfcheck`].
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

fn outcome(name: &str, result: Result<(bool, String)>) -> CheckOutcome {
    match result {
        Ok((pass, detail)) => CheckOutcome {
            name: name.into(),
            pass,
            detail,
        },
        Err(e) => CheckOutcome {
            name: name.into(),
            pass: false,
            detail: e.to_string(),
        },
    }
}

/// Quick invariant suite over every module, sized to run in seconds.
pub fn selfcheck(seed: u64) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    out.push(outcome("kernel_closed_form", (|| {
        let k = Kernel::new(KernelSpec::log(1)?);
        let worst = green::log_spaced(1e-3, 30.0, 50)
            .into_iter()
            .map(|r| ((k.radial(r) - (-r).exp() / r) / ((-r).exp() / r)).abs())
            .fold(0.0, f64::max);
        Ok((worst < 1e-10, format!("max rel error {worst:.3e}")))
    })()));
    out.push(outcome("bessel_half_order", (|| {
        let mut worst = 0.0f64;
        for r in green::log_spaced(1e-2, 50.0, 40) {
            let exact = (PI / (2.0 * r)).sqrt() * (-r).exp() * (1.0 + 1.0 / r);
            let v = special_fn::bessel_k(1.5, r)?.value;
            worst = worst.max(((v - exact) / exact).abs());
        }
        Ok((worst < 1e-10, format!("max rel error {worst:.3e}")))
    })()));
    out.push(outcome("plane_wave_symbol", (|| {
        let grid = fourier_op::PeriodicGrid::new(1, 2.0 * PI, 64)?;
        let field = fourier_op::PeriodicField::from_fn(grid, |x| (3.0 * x[0]).cos())?;
        let applied = fourier_op::apply_symbol(&field, &KernelSpec::log(1)?)?;
        let lambda = 10f64.ln();
        let err = applied
            .values()
            .iter()
            .zip(field.values())
            .map(|(a, u)| (a - lambda * u).abs())
            .fold(0.0, f64::max);
        Ok((err < 1e-12, format!("max error {err:.3e}")))
    })()));
    out.push(outcome("heat_kernel_unit_time", (|| {
        let mut worst = 0.0f64;
        for x in [0.1, 0.5, 1.0, 3.0] {
            let q = green::heat_kernel(1, 1.0, &[x])?;
            worst = worst.max((q - 0.5 * (-x).exp()).abs());
        }
        Ok((worst < 1e-10, format!("max error {worst:.3e}")))
    })()));
    out.push(outcome("galerkin_structure", (|| {
        let mesh = build_mesh(&DomainSpec::interval(-1.0, 1.0)?, 2.0 / 32.0)?;
        let a = galerkin::assemble_stiffness(&mesh, &KernelSpec::log(1)?)?;
        let min_row = a.row_sums().into_iter().fold(f64::INFINITY, f64::min);
        let pass = a.max_asymmetry() == 0.0 && a.max_off_diagonal() <= 0.0 && min_row > 0.0;
        Ok((pass, format!("min row sum {min_row:.6e}, max off-diagonal {:.3e}", a.max_off_diagonal())))
    })()));
    out.push(outcome("poincare_bound", (|| {
        let mesh = build_mesh(&DomainSpec::interval(-1.0, 1.0)?, 2.0 / 32.0)?;
        let a = galerkin::assemble_stiffness(&mesh, &KernelSpec::log(1)?)?;
        let lambda = solve_eigs(&a, 1)?[0].value;
        let bound = galerkin::poincare_lower_bound(mesh.measure(), 1)?;
        Ok((lambda >= bound, format!("lambda_1 {lambda:.6} >= bound {bound:.6}")))
    })()));
    out.push(outcome("max_principle", (|| {
        let mesh = build_mesh(&DomainSpec::interval(-1.0, 1.0)?, 2.0 / 32.0)?;
        let a = galerkin::assemble_stiffness(&mesh, &KernelSpec::log(1)?)?;
        let r = max_principle_check(&a, 10, seed)?;
        Ok((r.pass, format!("{} failures, worst min/sup {:.3e}", r.failures, r.worst_ratio)))
    })()));
    out.push(outcome("rearrangement", (|| {
        let r = polya_szego_check(&DomainSpec::disc(1.0)?, 0.25, 10, seed)?;
        Ok((r.pass, format!("{} violations, worst ratio {:.6}", r.violations, r.worst_ratio)))
    })()));
    out.push(outcome("scalar_bounds", (|| {
        let r = scalar_bounds_check(10_000, seed)?;
        Ok((r.pass, format!("{} violations of {}", r.violations, r.samples)))
    })()));
    out
}

/// JSON summary for a selfcheck run.
pub fn selfcheck_summary(outcomes: &[CheckOutcome], seed: u64) -> Summary {
    let mut s = Summary::new("selfcheck").param("seed", Value::from(seed));
    s.pass = outcomes.iter().all(|o| o.pass);
    for o in outcomes {
        s.metrics.insert(
            o.name.clone(),
            serde_json::json!({"pass": o.pass, "detail": o.detail}),
        );
    }
    s
}
