//! Modified Bessel function of the second kind `K_ν` for real order, the
//! profile functions `ω_s`, and log-gamma.
//!
//! `K_ν` is evaluated for the fractional part `μ = ν - round(ν)` with Temme's
//! series (small argument) or Steed's continued fraction CF2 (large argument),
//! followed by forward recurrence in the order, which is stable for `K`.
//! Everything is carried as `ln(e^x K_ν(x))` so that neither the `e^{-x}` tail
//! nor the `x^{-ν}` blow-up at the origin leaves the floating point range
//! before the caller asks for a plain value. Orders above
//! [`DEBYE_MIN_ORDER`] use the uniform (Debye) expansion directly.

use std::f64::consts::{LN_2, PI};

use crate::error::{Error, Result};

/// Orders at or above this value are evaluated with the Debye expansion.
pub const DEBYE_MIN_ORDER: f64 = 200.0;

/// Evaluation regime switches for [`bessel_k_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BesselEvalPolicy {
    /// Arguments at or below this use Temme's series, above it CF2.
    pub small_arg_threshold: f64,
    pub target_rel_error: f64,
}

impl Default for BesselEvalPolicy {
    fn default() -> Self {
        Self {
            small_arg_threshold: 2.0,
            target_rel_error: 1e-10,
        }
    }
}

impl BesselEvalPolicy {
    pub fn new(small_arg_threshold: f64, target_rel_error: f64) -> Result<Self> {
        if !(small_arg_threshold > 0.0 && small_arg_threshold.is_finite()) {
            return Err(Error::param("small_arg_threshold", "must be positive and finite"));
        }
        if !(target_rel_error > 0.0 && target_rel_error <= 1e-6) {
            return Err(Error::param("target_rel_error", "must lie in (0, 1e-6]"));
        }
        Ok(Self {
            small_arg_threshold,
            target_rel_error,
        })
    }

    fn series_eps(&self) -> f64 {
        (self.target_rel_error * 1e-3).max(f64::EPSILON)
    }
}

/// A value of `K_ν(r)`; `underflow` is set when the true value is below the
/// smallest positive double and `value` has been flushed to zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BesselK {
    pub value: f64,
    pub underflow: bool,
}

/// `K_ν(r)` with the default policy.
pub fn bessel_k(nu: f64, r: f64) -> Result<BesselK> {
    bessel_k_with(&BesselEvalPolicy::default(), nu, r)
}

pub fn bessel_k_with(policy: &BesselEvalPolicy, nu: f64, r: f64) -> Result<BesselK> {
    let ln_k = ln_bessel_k_with(policy, nu, r)?;
    from_log(ln_k, "bessel_k")
}

/// `ln K_ν(r)`. Negative orders are folded with `K_{-ν} = K_ν`.
pub fn ln_bessel_k(nu: f64, r: f64) -> Result<f64> {
    ln_bessel_k_with(&BesselEvalPolicy::default(), nu, r)
}

pub fn ln_bessel_k_with(policy: &BesselEvalPolicy, nu: f64, r: f64) -> Result<f64> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::domain(format!("bessel_k requires r > 0, got {r}")));
    }
    if !nu.is_finite() {
        return Err(Error::domain(format!("bessel_k requires a finite order, got {nu}")));
    }
    let nu = nu.abs();
    if nu >= DEBYE_MIN_ORDER {
        return Ok(ln_k_debye(nu, r));
    }
    ln_k_scaled(policy, nu, r).map(|s| s - r)
}

/// `e^r K_ν(r)`.
pub fn bessel_k_scaled(nu: f64, r: f64) -> Result<f64> {
    let policy = BesselEvalPolicy::default();
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::domain(format!("bessel_k requires r > 0, got {r}")));
    }
    let nu = nu.abs();
    let ln_s = if nu >= DEBYE_MIN_ORDER {
        ln_k_debye(nu, r) + r
    } else {
        ln_k_scaled(&policy, nu, r)?
    };
    if ln_s > f64::MAX.ln() {
        return Err(Error::Overflow(format!("e^r K_{nu}({r}) exceeds f64 range")));
    }
    Ok(ln_s.exp())
}

fn from_log(ln_v: f64, what: &str) -> Result<BesselK> {
    if ln_v > f64::MAX.ln() {
        return Err(Error::Overflow(format!("{what} exceeds f64 range (ln = {ln_v})")));
    }
    let value = ln_v.exp();
    Ok(BesselK {
        value,
        underflow: value == 0.0 || value < f64::MIN_POSITIVE,
    })
}

// Taylor coefficients of 1/Γ(1+z) about z = 0.
const RGAMMA_1P: [f64; 31] = [
    1.0,
    0.577_215_664_901_532_861,
    -0.655_878_071_520_253_881,
    -0.042_002_635_034_095_235_5,
    0.166_538_611_382_291_49,
    -0.042_197_734_555_544_336_7,
    -0.009_621_971_527_876_973_56,
    0.007_218_943_246_663_099_54,
    -0.001_165_167_591_859_065_11,
    -0.000_215_241_674_114_950_973,
    0.000_128_050_282_388_116_186,
    -2.013_485_478_078_823_87e-5,
    -1.250_493_482_142_670_66e-6,
    1.133_027_231_981_695_88e-6,
    -2.056_338_416_977_607_1e-7,
    6.116_095_104_481_415_82e-9,
    5.002_007_644_469_222_93e-9,
    -1.181_274_570_487_020_14e-9,
    1.043_426_711_691_100_51e-10,
    7.782_263_439_905_071_25e-12,
    -3.696_805_618_642_205_71e-12,
    5.100_370_287_454_475_98e-13,
    -2.058_326_053_566_506_78e-14,
    -5.348_122_539_423_017_98e-15,
    1.226_778_628_238_260_79e-15,
    -1.181_259_301_697_458_77e-16,
    1.186_692_254_751_600_33e-18,
    1.412_380_655_318_031_78e-18,
    -2.298_745_684_435_370_21e-19,
    1.714_406_321_927_337_43e-20,
    1.337_351_730_493_693_11e-22,
];

/// Temme's auxiliary gamma functions for |μ| ≤ 1/2:
/// returns (Γ₁, Γ₂, 1/Γ(1+μ), 1/Γ(1-μ)).
fn temme_gammas(mu: f64) -> (f64, f64, f64, f64) {
    let mut gam1 = 0.0;
    let mut gam2 = 0.0;
    // Horner over the odd and even coefficient subsequences in μ².
    let mu2 = mu * mu;
    for k in (0..RGAMMA_1P.len()).rev() {
        if k % 2 == 0 {
            gam2 = gam2 * mu2 + RGAMMA_1P[k];
        } else {
            gam1 = gam1 * mu2 + RGAMMA_1P[k];
        }
    }
    gam1 = -gam1;
    (gam1, gam2, gam2 - mu * gam1, gam2 + mu * gam1)
}

/// ln of the scaled pair (e^x K_μ(x), e^x K_{μ+1}(x)), |μ| ≤ 1/2, small x.
fn temme_series(mu: f64, x: f64, eps: f64) -> Result<(f64, f64)> {
    let x2 = 0.5 * x;
    let pimu = PI * mu;
    let fact = if pimu.abs() < f64::EPSILON { 1.0 } else { pimu / pimu.sin() };
    let d = -x2.ln();
    let e = mu * d;
    let fact2 = if e.abs() < f64::EPSILON { 1.0 } else { e.sinh() / e };
    let (gam1, gam2, gampl, gammi) = temme_gammas(mu);
    let mut ff = fact * (gam1 * e.cosh() + gam2 * fact2 * d);
    let mut sum = ff;
    let ee = e.exp();
    let mut p = 0.5 * ee / gampl;
    let mut q = 0.5 / (ee * gammi);
    let mut c = 1.0;
    let dd = x2 * x2;
    let mut sum1 = p;
    let mu2 = mu * mu;
    let mut converged = false;
    for i in 1..=10_000 {
        let fi = i as f64;
        ff = (fi * ff + p + q) / (fi * fi - mu2);
        c *= dd / fi;
        p /= fi - mu;
        q /= fi + mu;
        let del = c * ff;
        sum += del;
        sum1 += c * (p - fi * ff);
        if del.abs() < sum.abs() * eps {
            converged = true;
            break;
        }
    }
    if !converged || !(sum > 0.0) || !(sum1 > 0.0) {
        return Err(Error::Numeric {
            what: "Temme series".into(),
            detail: format!("no convergence for mu={mu}, x={x}"),
        });
    }
    Ok((sum.ln() + x, sum1.ln() + (2.0 / x).ln() + x))
}

/// ln of the scaled pair via Steed's CF2 (Thompson–Barnett), |μ| ≤ 1/2.
fn steed_cf2(mu: f64, x: f64, eps: f64) -> Result<(f64, f64)> {
    let mut b = 2.0 * (1.0 + x);
    let mut d = 1.0 / b;
    let mut h = d;
    let mut delh = d;
    let mut q1 = 0.0;
    let mut q2 = 1.0;
    let a1 = 0.25 - mu * mu;
    let mut q = a1;
    let mut c = a1;
    let mut a = -a1;
    let mut s = 1.0 + q * delh;
    let mut converged = false;
    for i in 2..=50_000 {
        let fi = i as f64;
        a -= 2.0 * (fi - 1.0);
        c = -a * c / fi;
        let qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh = (b * d - 1.0) * delh;
        h += delh;
        let dels = q * delh;
        s += dels;
        if (dels / s).abs() < eps {
            converged = true;
            break;
        }
    }
    if !converged || !(s > 0.0) {
        return Err(Error::Numeric {
            what: "Steed CF2".into(),
            detail: format!("no convergence for mu={mu}, x={x}"),
        });
    }
    h *= a1;
    let kmu = (PI / (2.0 * x)).sqrt() / s;
    let kmu1 = kmu * (mu + x + 0.5 - h) / x;
    Ok((kmu.ln(), kmu1.ln()))
}

/// ln(e^x K_ν(x)) for 0 ≤ ν < DEBYE_MIN_ORDER.
fn ln_k_scaled(policy: &BesselEvalPolicy, nu: f64, x: f64) -> Result<f64> {
    let n = (nu + 0.5).floor();
    let mu = nu - n;
    let eps = policy.series_eps();
    let (ln_kmu, ln_kmu1) = if x <= policy.small_arg_threshold {
        temme_series(mu, x, eps)?
    } else {
        steed_cf2(mu, x, eps)?
    };
    let steps = n as usize;
    if steps == 0 {
        return Ok(ln_kmu);
    }
    // Forward recurrence K_{m+1} = K_{m-1} + (2m/x) K_m, carried relative
    // to K_μ with a running log scale.
    let mut log_scale = ln_kmu;
    let mut a = 1.0;
    let mut b = (ln_kmu1 - ln_kmu).exp();
    let limit = 1e300 * x / (2.0 * (nu + 1.0));
    for i in 0..steps {
        let m = mu + i as f64 + 1.0;
        let next = a + (2.0 * m / x) * b;
        a = b;
        b = next;
        if b > limit.max(1.0) || limit < 1.0 {
            log_scale += b.ln();
            a /= b;
            b = 1.0;
        }
    }
    Ok(a.ln() + log_scale)
}

/// Debye uniform expansion of ln K_ν(x) for large ν.
fn ln_k_debye(nu: f64, x: f64) -> f64 {
    let z = x / nu;
    let sq = (1.0 + z * z).sqrt();
    let eta = sq + (z / (1.0 + sq)).ln();
    let p = 1.0 / sq;
    let p2 = p * p;
    let u1 = p * (3.0 - 5.0 * p2) / 24.0;
    let u2 = p2 * (81.0 - 462.0 * p2 + 385.0 * p2 * p2) / 1152.0;
    let u3 = p * p2 * (30375.0 - 369_603.0 * p2 + 765_765.0 * p2 * p2 - 425_425.0 * p2 * p2 * p2)
        / 414_720.0;
    let u4 = p2
        * p2
        * (4_465_125.0 - 94_121_676.0 * p2 + 349_922_430.0 * p2 * p2
            - 446_185_740.0 * p2 * p2 * p2
            + 185_910_725.0 * p2 * p2 * p2 * p2)
        / 39_813_120.0;
    let inv = 1.0 / nu;
    let series = 1.0 - u1 * inv + u2 * inv * inv - u3 * inv.powi(3) + u4 * inv.powi(4);
    0.5 * (PI / (2.0 * nu)).ln() - nu * eta - 0.25 * (1.0 + z * z).ln() + series.ln()
}

/// ln ω_s(r) for dimension `n` and order `s ∈ [0, 1)`.
pub fn ln_omega_s(n: usize, s: f64, r: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::domain("omega_s requires N >= 1"));
    }
    if !(0.0..1.0).contains(&s) {
        return Err(Error::domain(format!("omega_s requires s in [0, 1), got {s}")));
    }
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::domain(format!("omega_s requires r > 0, got {r}")));
    }
    let a = 0.5 * (n as f64 + 2.0 * s);
    Ok((1.0 - a) * LN_2 + a * r.ln() + ln_bessel_k(a, r)?)
}

/// `ω_s(r) = 2^{1-(N+2s)/2} r^{(N+2s)/2} K_{(N+2s)/2}(r)`; `s = 0` gives `ω`.
pub fn omega_s(n: usize, s: f64, r: f64) -> Result<f64> {
    Ok(ln_omega_s(n, s, r)?.exp())
}

pub fn omega(n: usize, r: f64) -> Result<f64> {
    omega_s(n, 0.0, r)
}

pub fn log_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::domain(format!("log_gamma requires x > 0, got {x}")));
    }
    Ok(statrs::function::gamma::ln_gamma(x))
}

/// Γ(x) for x > 0.
pub fn gamma(x: f64) -> Result<f64> {
    Ok(log_gamma(x)?.exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k_half(r: f64) -> f64 {
        (PI / (2.0 * r)).sqrt() * (-r).exp()
    }

    #[test]
    fn half_order_closed_form() {
        let v = bessel_k(0.5, 1.0).unwrap().value;
        assert!((v - (PI / 2.0).sqrt() * (-1.0f64).exp()).abs() < 1e-15);
        assert!((v - 0.461_068_504).abs() < 1e-9);
    }

    #[test]
    fn three_halves_by_recurrence_oracle() {
        // K_{3/2} = K_{-1/2} + (1/r) K_{1/2} with K_{-1/2} = K_{1/2}.
        let r = 2.0;
        let oracle = k_half(r) * (1.0 + 1.0 / r);
        let v = bessel_k(1.5, r).unwrap().value;
        assert!(((v - oracle) / oracle).abs() < 1e-13, "{v} vs {oracle}");
    }

    #[test]
    fn order_zero_log_divergence() {
        let r = 1e-6;
        let ratio = bessel_k(0.0, r).unwrap().value / (1.0 / r).ln();
        assert!((ratio - 1.0).abs() < 0.05, "{ratio}");
    }

    #[test]
    fn seam_between_branches_is_continuous() {
        for &nu in &[0.0, 0.3, 0.5, 1.25, 7.5] {
            let below = ln_bessel_k(nu, 2.0).unwrap();
            let above = ln_bessel_k_with(&BesselEvalPolicy::new(1.999, 1e-10).unwrap(), nu, 2.0)
                .unwrap();
            assert!((below - above).abs() < 1e-12, "nu={nu}: {below} vs {above}");
        }
    }

    #[test]
    fn debye_agrees_with_recurrence() {
        for &x in &[0.5, 10.0, 150.0, 900.0] {
            let nu = 199.5;
            let rec = ln_k_scaled(&BesselEvalPolicy::default(), nu, x).unwrap() - x;
            let deb = ln_k_debye(nu, x);
            let rel = (rec - deb).abs() / rec.abs().max(1.0);
            assert!(rel < 1e-11, "x={x}: {rec} vs {deb}");
        }
    }

    #[test]
    fn underflow_is_flagged() {
        let k = bessel_k(1.0, 800.0).unwrap();
        assert!(k.underflow);
        assert_eq!(k.value, 0.0);
        assert!(ln_bessel_k(1.0, 800.0).unwrap() < -790.0);
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(bessel_k(1.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(bessel_k(1.0, -1.0), Err(Error::Domain(_))));
        assert!(matches!(omega_s(2, 0.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(log_gamma(0.0), Err(Error::Domain(_))));
        assert!(BesselEvalPolicy::new(0.0, 1e-10).is_err());
        assert!(BesselEvalPolicy::new(2.0, 1e-3).is_err());
    }

    #[test]
    fn omega_examples() {
        let v = omega_s(1, 0.0, 2.0).unwrap();
        assert!((v - PI.sqrt() * (-2.0f64).exp()).abs() < 1e-14);
        assert!((v - 0.239_875_543_936).abs() < 1e-12);
        let near = omega_s(3, 0.0, 1e-4).unwrap();
        let g = PI.sqrt() / 2.0;
        assert!(((near - g) / g).abs() < 1e-3);
        let (n, s, r): (f64, f64, f64) = (2.0, 0.3, 20.0);
        let a = (n + 2.0 * s - 1.0) / 2.0;
        let nu = a + 0.5;
        let far = PI.sqrt() * 2f64.powf(-a) * r.powf(a) * (-r).exp()
            * (1.0 + (4.0 * nu * nu - 1.0) / (8.0 * r));
        let got = omega_s(2, 0.3, r).unwrap();
        assert!(((got - far) / far).abs() < 1e-3, "{got} vs {far}");
    }

    #[test]
    fn log_gamma_values() {
        assert!(log_gamma(1.0).unwrap().abs() < 1e-15);
        assert!((log_gamma(0.5).unwrap() - 0.5 * PI.ln()).abs() < 1e-14);
        assert!((log_gamma(5.0).unwrap() - 24f64.ln()).abs() < 1e-13);
    }
}
