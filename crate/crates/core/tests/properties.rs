use std::sync::OnceLock;

use proptest::prelude::*;

use logop::analysis;
use logop::fourier_op::{apply_symbol, PeriodicField, PeriodicGrid};
use logop::galerkin::{self, build_mesh, DomainSpec, Mesh, StiffnessMatrix};
use logop::green::{self, GreenQuadrature};
use logop::kernel::{j_frac, j_log};
use logop::report::{format_float, Cell, Table};
use logop::special_fn::{bessel_k, ln_bessel_k, omega, omega_s};
use logop::{Kernel, KernelSpec};

fn interval_system() -> &'static (Mesh, StiffnessMatrix) {
    static CELL: OnceLock<(Mesh, StiffnessMatrix)> = OnceLock::new();
    CELL.get_or_init(|| {
        let mesh = build_mesh(&DomainSpec::interval(-1.0, 1.0).unwrap(), 2.0 / 24.0).unwrap();
        let a = galerkin::assemble_stiffness(&mesh, &KernelSpec::log(1).unwrap()).unwrap();
        (mesh, a)
    })
}

fn square_system() -> &'static (Mesh, StiffnessMatrix) {
    static CELL: OnceLock<(Mesh, StiffnessMatrix)> = OnceLock::new();
    CELL.get_or_init(|| {
        let mesh = build_mesh(&DomainSpec::square(1.0).unwrap(), 1.0 / 8.0).unwrap();
        let a = galerkin::assemble_stiffness(&mesh, &KernelSpec::log(2).unwrap()).unwrap();
        (mesh, a)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn bessel_increases_with_order(nu in 0.0f64..15.0, gap in 1e-3f64..5.0, lr in -3.0f64..1.69) {
        let r = 10f64.powf(lr);
        prop_assert!(ln_bessel_k(nu + gap, r).unwrap() > ln_bessel_k(nu, r).unwrap());
    }

    #[test]
    fn bessel_recurrence(nu in 0.5f64..20.0, lr in -2.0f64..1.69) {
        let r = 10f64.powf(lr);
        let k = |v: f64| bessel_k(v, r).unwrap().value;
        let (lo, mid, hi) = (k(nu - 1.0), k(nu), k(nu + 1.0));
        prop_assume!(hi.is_finite() && hi > 0.0);
        prop_assert!(((hi - lo - 2.0 * nu / r * mid) / hi).abs() <= 1e-8);
    }

    #[test]
    fn omega_decreases_in_r(n in 1usize..=3, r in 1e-3f64..40.0, step in 1e-3f64..5.0) {
        prop_assert!(omega(n, r + step).unwrap() < omega(n, r).unwrap());
    }

    #[test]
    fn kernel_positive_and_even(n in 1usize..=3, z in prop::collection::vec(-5.0f64..5.0, 3), s in 0.01f64..0.99) {
        let z = &z[..n];
        prop_assume!(z.iter().any(|v| v.abs() > 1e-6));
        let neg: Vec<f64> = z.iter().map(|v| -v).collect();
        let log = KernelSpec::log(n).unwrap();
        let frac = KernelSpec::frac(n, s).unwrap();
        let a = j_log(&log, z).unwrap();
        prop_assert!(a > 0.0 && a == j_log(&log, &neg).unwrap());
        let b = j_frac(&frac, z).unwrap();
        prop_assert!(b > 0.0 && b == j_frac(&frac, &neg).unwrap());
    }

    #[test]
    fn symbol_is_self_adjoint_and_nonnegative(
        u in prop::collection::vec(-1.0f64..1.0, 32),
        v in prop::collection::vec(-1.0f64..1.0, 32),
    ) {
        let grid = PeriodicGrid::new(1, 10.0, 32).unwrap();
        let spec = KernelSpec::log(1).unwrap();
        let fu = PeriodicField::from_values(grid, u).unwrap();
        let fv = PeriodicField::from_values(grid, v).unwrap();
        let au = apply_symbol(&fu, &spec).unwrap();
        let av = apply_symbol(&fv, &spec).unwrap();
        let (l, r) = (au.inner(&fv), fu.inner(&av));
        prop_assert!((l - r).abs() <= 1e-10 * l.abs().max(r.abs()).max(1e-300) + 1e-14);
        prop_assert!(au.inner(&fu) >= -1e-12);
    }

    #[test]
    fn green_decreases_along_rays(dir in prop::collection::vec(-1.0f64..1.0, 3), r in 0.05f64..20.0, step in 0.05f64..5.0) {
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assume!(norm > 1e-3);
        let q = GreenQuadrature::default();
        let at = |t: f64| {
            let x: Vec<f64> = dir.iter().map(|v| v / norm * t).collect();
            green::green_fn(3, &x, &q).unwrap()
        };
        let (a, b) = (at(r), at(r + step));
        prop_assert!(a > 0.0 && b > 0.0 && b < a);
    }

    #[test]
    fn modulus_does_not_increase_the_form(u in prop::collection::vec(-1.0f64..1.0, 24)) {
        let (_, a) = interval_system();
        let abs: Vec<f64> = u.iter().map(|v| v.abs()).collect();
        let (eu, ea) = (a.quadratic_form(&u), a.quadratic_form(&abs));
        prop_assert!(ea <= eu + 1e-12 * eu.abs());
    }

    #[test]
    fn form_is_positive(u in prop::collection::vec(-1.0f64..1.0, 64)) {
        let (_, a) = square_system();
        prop_assume!(u.iter().any(|v| v.abs() > 1e-6));
        prop_assert!(a.quadratic_form(&u) > 0.0);
    }

    #[test]
    fn nonnegative_sources_give_nonnegative_solutions(f in prop::collection::vec(0.0f64..1.0, 64)) {
        let (_, a) = square_system();
        let b: Vec<f64> = f.iter().map(|v| v * a.mass_scale()).collect();
        let u = a.solve(&b).unwrap();
        let sup = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(u.iter().all(|v| *v >= -1e-10 * sup));
    }

    #[test]
    fn rearrangement_is_an_equimeasurable_permutation(u in prop::collection::vec(-2.0f64..2.0, 24)) {
        let (mesh, _) = interval_system();
        let (ball, center) = analysis::ball_mesh(mesh).unwrap();
        let star = analysis::rearrange(&u, &ball, &center[..1]).unwrap();
        let mut a: Vec<f64> = u.iter().map(|v| v.abs()).collect();
        let mut b = star.clone();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        prop_assert_eq!(a, b);
        prop_assert_eq!(analysis::l2_norm_sq(mesh, &u.iter().map(|v| v.abs()).collect::<Vec<_>>()), analysis::l2_norm_sq(&ball, &star));
    }

    #[test]
    fn scalar_bounds_hold(lr in -3.0f64..3.0, s in 1e-6f64..1.0) {
        let r = 10f64.powf(lr);
        let q = analysis::power_quotient(r, s);
        let r4 = r.powi(4);
        prop_assert!(q.abs() <= 2.0 * (1.0 + r4));
        prop_assert!((q - (r * r).ln_1p()).abs() <= 2.0 * s * (1.0 + r4));
    }

    #[test]
    fn floats_round_trip_through_csv_and_json(x in prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO) {
        let text = format_float(x);
        prop_assert_eq!(text.parse::<f64>().unwrap().to_bits(), x.to_bits());
        let mut t = Table::new(["value"]);
        t.push(vec![Cell::Float(x)]).unwrap();
        let back = Table::from_csv(&t.to_csv()).unwrap();
        prop_assert_eq!(back.rows()[0][0].as_f64().unwrap().to_bits(), x.to_bits());
        let json: serde_json::Value = serde_json::from_str(&logop::report::to_json_string(&t.to_json_value())).unwrap();
        prop_assert_eq!(json[0]["value"].as_f64().unwrap().to_bits(), x.to_bits());
    }
}

#[test]
fn omega_s_converges_monotonically_to_omega() {
    for n in 1..=3 {
        for r in [0.01, 0.3, 1.0, 4.0, 15.0] {
            let base = omega(n, r).unwrap();
            let mut prev = f64::INFINITY;
            for s in [0.4, 0.2, 0.1, 0.05, 0.025, 0.0125] {
                let d = (omega_s(n, s, r).unwrap() - base).abs();
                assert!(d < prev, "N={n} r={r} s={s}");
                prev = d;
            }
            assert!(prev < 0.05 * base.max(1e-300) + 1e-12);
        }
    }
}

#[test]
fn kernel_near_origin_slope() {
    for n in 1..=3 {
        let k = Kernel::new(KernelSpec::log(n).unwrap());
        let slope = green::fit_slope(
            &[1e-4f64.ln(), 1e-3f64.ln()],
            &[k.radial(1e-4).ln(), k.radial(1e-3).ln()],
        );
        assert!(((slope + n as f64) / n as f64).abs() <= 0.01, "N={n}: {slope}");
    }
}

#[test]
fn levy_integrability() {
    for n in 1..=3 {
        let spec = KernelSpec::log(n).unwrap();
        let k = Kernel::new(spec);
        let sphere = spec.constants().sphere_measure;
        let inner = logop::quadrature::adaptive(|r| r * r * k.radial(r) * r.powi(n as i32 - 1), 0.0, 1.0, 1e-14, 1e-10)
            .unwrap()
            .value;
        let total = logop::kernel::tail_mass(&spec, 1.0).unwrap() + sphere * inner;
        assert!(total.is_finite() && total > 0.0);
    }
}

#[test]
fn small_order_kernel_limit_is_linear() {
    for n in 1..=3 {
        let log = KernelSpec::log(n).unwrap();
        let sup = |s: f64| {
            let frac = KernelSpec::frac(n, s).unwrap();
            green::log_spaced(1e-2, 10.0, 30)
                .into_iter()
                .map(|r| {
                    let mut z = vec![0.0; n];
                    z[0] = r;
                    let l = j_log(&log, &z).unwrap();
                    (j_frac(&frac, &z).unwrap() / s - l).abs() / l
                })
                .fold(0.0, f64::max)
        };
        let (a, b, c) = (sup(0.04), sup(0.02), sup(0.01));
        for ratio in [a / b, b / c] {
            assert!((1.6..=2.4).contains(&ratio), "N={n}: {a} {b} {c}");
        }
    }
}

#[test]
fn stiffness_is_an_m_matrix() {
    for (_, a) in [interval_system(), square_system()] {
        assert!(a.max_off_diagonal() <= 0.0);
        assert!(a.row_sums().iter().all(|s| *s > 0.0));
        assert_eq!(a.max_asymmetry(), 0.0);
    }
}

#[test]
fn nested_domains_have_ordered_first_eigenvalues() {
    let spec = KernelSpec::log(2).unwrap();
    let h = 1.0 / 10.0;
    let big = build_mesh(&DomainSpec::square(1.0).unwrap(), h).unwrap();
    // Same lattice, keep the cells whose centres lie in the inscribed disc.
    let kept: Vec<[i64; 3]> = big
        .lattice()
        .iter()
        .zip(big.centers())
        .filter(|(_, c)| c[0].hypot(c[1]) < 0.5)
        .map(|(l, _)| *l)
        .collect();
    let small = Mesh::from_lattice(2, h, big.origin(), kept).unwrap();
    assert!(small.len() < big.len());
    let l_big = galerkin::solve_eigs(&galerkin::assemble_stiffness(&big, &spec).unwrap(), 1).unwrap()[0].value;
    let l_small = galerkin::solve_eigs(&galerkin::assemble_stiffness(&small, &spec).unwrap(), 1).unwrap()[0].value;
    assert!(l_small >= l_big);
}

#[test]
fn eigen_structure_across_refinements() {
    let d = DomainSpec::interval(-1.0, 1.0).unwrap();
    let spec = KernelSpec::log(1).unwrap();
    let mut proxies = Vec::new();
    for n in [32usize, 64, 128] {
        let mesh = build_mesh(&d, 2.0 / n as f64).unwrap();
        let a = galerkin::assemble_stiffness(&mesh, &spec).unwrap();
        let pairs = galerkin::solve_eigs(&a, 2).unwrap();
        assert!(pairs[1].value > pairs[0].value);
        assert!(pairs[0].value >= galerkin::poincare_lower_bound(mesh.measure(), 1).unwrap());
        assert!(pairs[0].value >= galerkin::poincare_lower_bound_sharp(mesh.measure(), 1).unwrap());
        let sup = pairs[0].vector.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let l2 = analysis::l2_norm_sq(&mesh, &pairs[0].vector).sqrt();
        proxies.push(sup / l2);
    }
    let (lo, hi) = proxies.iter().fold((f64::INFINITY, 0.0f64), |(l, h), p| (l.min(*p), h.max(*p)));
    assert!(hi / lo <= 1.5, "{proxies:?}");
}

#[test]
fn faber_krahn_margins_are_nonnegative() {
    for d in [
        DomainSpec::square(1.0).unwrap(),
        DomainSpec::rectangle(1.5, 0.75).unwrap(),
        DomainSpec::disc(0.6).unwrap(),
    ] {
        let r = analysis::faber_krahn(&d, 1.0 / 12.0).unwrap();
        assert!(r.margin >= -1e-8, "{}: {r:?}", d.name());
    }
}
