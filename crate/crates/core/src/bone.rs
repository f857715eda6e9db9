//! Numerical checks of the thinning ("bone") functional equation
//! `ψ_θ(at + 1 - a) = ψ_{h_a(θ)}(t)`, classification of power-series
//! families through the modified Cauchy equation
//! `f(s + t) - f(s) = f(h(s) t)`, and the atomic two-point counterexample.

use serde::{Deserialize, Serialize};

use crate::counting::{ln_choose, CountingLaw, NnpsFamily};
use crate::error::{invalid, Error, Result};

/// Residual tolerance for families with a closed-form (finite) series.
pub const CLOSED_FORM_TOLERANCE: f64 = 1e-10;
/// Residual tolerance for families evaluated by truncated series.
pub const SERIES_TOLERANCE: f64 = 1e-6;
/// Functional-equation tolerance used by [`cauchy_classify`].
pub const CAUCHY_TOLERANCE: f64 = 1e-6;
const ROOT_TOLERANCE: f64 = 1e-14;
const S_GRID_POINTS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoneClass {
    /// `log g(θ) = A θ`: Poisson-like.
    LinearLog,
    /// `log g(θ) = B log(1 + Aθ)` with `A < 0`: negative-binomial-like.
    PositiveLog,
    /// `log g(θ) = B log(1 + Aθ)` with `A > 0`: binomial-like.
    NegativeLog,
    NotBone,
}

impl BoneClass {
    pub fn is_bone(self) -> bool {
        self != BoneClass::NotBone
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FittedParams {
    pub a: f64,
    pub b: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoneVerdict {
    pub classification: BoneClass,
    /// Present only for bone classes.
    pub fitted_params: Option<FittedParams>,
    /// `+∞` when no candidate `h` exists.
    pub max_residual: f64,
    pub tolerance: f64,
    /// Candidate thinning image `h_a(θ)` from the `t = 1` slice.
    pub h: Option<f64>,
    pub notes: Vec<String>,
}

impl BoneVerdict {
    fn not_bone(max_residual: f64, tolerance: f64, h: Option<f64>, notes: Vec<String>) -> Self {
        Self { classification: BoneClass::NotBone, fitted_params: None, max_residual, tolerance, h, notes }
    }
}

/// `count` uniform points on `[0, 1]`.
pub fn uniform_grid(count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..count).map(|i| i as f64 / (count - 1) as f64).collect(),
    }
}

/// Default `t` grid: 101 uniform points on `[0, 1]`.
pub fn default_t_grid() -> Vec<f64> {
    uniform_grid(101)
}

/// `count` log-spaced points on `[s_max / 100, s_max]`.
pub fn log_grid(s_max: f64, count: usize) -> Vec<f64> {
    let lo = (s_max / 100.0).ln();
    let hi = s_max.ln();
    if count == 1 {
        return vec![s_max];
    }
    (0..count).map(|i| (lo + (hi - lo) * i as f64 / (count - 1) as f64).exp()).collect()
}

fn check_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.is_empty() {
        return Err(invalid("t_grid", "grid is empty"));
    }
    if t_grid.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(invalid("t_grid", "grid points must lie in [0, 1]"));
    }
    Ok(())
}

/// Max over the grid of `|ψ_θ(at + 1 - a) - ψ_{h_a(θ)}(t)|` together with
/// the alternate form `|ψ̃_θ(at) - ψ̃_{h_a(θ)}(t)|`.
pub fn bone_residual(law: &CountingLaw, a: f64, t_grid: &[f64]) -> Result<f64> {
    check_grid(t_grid)?;
    let thinned = law.thin_map(a)?;
    let mut worst: f64 = 0.0;
    for &t in t_grid {
        let direct = (law.pgf(a * t + (1.0 - a))? - thinned.pgf(t)?).abs();
        let alternate = (law.apgf(a * t)? - thinned.apgf(t)?).abs();
        worst = worst.max(direct).max(alternate);
    }
    Ok(worst)
}

fn g_or_inf(family: &NnpsFamily, x: f64) -> f64 {
    family.g(x).unwrap_or(f64::INFINITY)
}

/// Pgf-form residual `max_t |g((at+b)θ)/g(θ) - g(ht)/g(h)|`.
fn nnps_residual(family: &NnpsFamily, theta: f64, a: f64, h: f64, t_grid: &[f64]) -> Result<f64> {
    let g_theta = family.g(theta)?;
    let g_h = family.g(h)?;
    let b = 1.0 - a;
    let mut worst: f64 = 0.0;
    for &t in t_grid {
        let lhs = family.g((a * t + b) * theta)? / g_theta;
        let rhs = family.g(h * t)? / g_h;
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst)
}

/// Solves `g(h) = target` for `h ≥ 0`, `g` increasing.
fn solve_increasing(family: &NnpsFamily, target: f64) -> Option<f64> {
    let radius = family.radius();
    let mut hi = if radius.is_finite() {
        radius
    } else {
        let mut hi: f64 = 1.0;
        while g_or_inf(family, hi) < target {
            hi *= 2.0;
            if hi > 1e6 {
                return None;
            }
        }
        hi
    };
    let mut lo = 0.0;
    if radius.is_finite() {
        // the series must exceed the target strictly inside the domain
        let probe = radius * (1.0 - 1e-12);
        if g_or_inf(family, probe) < target {
            return None;
        }
        hi = probe;
    }
    while hi - lo > ROOT_TOLERANCE * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g_or_inf(family, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Minimizes a unimodal function on `[lo, hi]` by golden-section search.
fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, iters: usize) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..iters {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Tests whether the family `g` satisfies `g((at+b)θ) = g(bθ) g(h t)` for
/// some `h`, and classifies bone families by the shape of `log g`.
pub fn nnps_bone_test(family: &NnpsFamily, theta: f64, a: f64, t_grid: &[f64]) -> Result<BoneVerdict> {
    check_grid(t_grid)?;
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::Domain { value: a, domain: "(0, 1)" });
    }
    if !(theta > 0.0 && theta < family.radius()) {
        return Err(invalid("theta", format!("{theta} is outside (0, {})", family.radius())));
    }
    if !(family.coeff(1) > 0.0) {
        return Err(Error::HypothesisViolation(format!(
            "classification requires a_1 > 0 (family {} has a_1 = {})",
            family.name(),
            family.coeff(1)
        )));
    }
    let tolerance = if family.is_polynomial() { CLOSED_FORM_TOLERANCE } else { SERIES_TOLERANCE };
    let b = 1.0 - a;
    let target = family.g(theta)? / family.g(b * theta)?;
    let Some(h0) = solve_increasing(family, target) else {
        return Ok(BoneVerdict::not_bone(
            f64::INFINITY,
            tolerance,
            None,
            vec!["no h in the domain solves the t = 1 slice".into()],
        ));
    };
    let at_root = nnps_residual(family, theta, a, h0, t_grid)?;
    let upper = if family.radius().is_finite() { family.radius() * (1.0 - 1e-12) } else { 2.0 * h0 + 1.0 };
    let (_, at_opt) = golden_min(
        |h| nnps_residual(family, theta, a, h, t_grid).unwrap_or(f64::INFINITY),
        0.5 * h0,
        upper.min(2.0 * h0 + 1e-3),
        120,
    );
    let max_residual = at_root.min(at_opt);
    if !(max_residual <= tolerance) {
        return Ok(BoneVerdict::not_bone(max_residual, tolerance, Some(h0), Vec::new()));
    }

    let s_max = 0.45 * theta.min(family.radius());
    let log_g = |s: f64| family.g(s).map(f64::ln).unwrap_or(f64::NAN);
    let shape = cauchy_classify(&log_g, &log_grid(s_max, S_GRID_POINTS))?;
    let mut notes = shape.notes;
    if shape.classification == BoneClass::NotBone {
        notes.push(format!("thinning residual {max_residual:e} passed but log g failed the Cauchy check"));
        return Ok(BoneVerdict::not_bone(max_residual, tolerance, Some(h0), notes));
    }
    match (shape.classification, family.is_polynomial()) {
        (BoneClass::PositiveLog, true) => notes.push("finite support conflicts with a negative-binomial-like fit".into()),
        (BoneClass::NegativeLog, false) => notes.push("binomial-like fit on an infinite series".into()),
        _ => {}
    }
    Ok(BoneVerdict {
        classification: shape.classification,
        fitted_params: shape.fitted_params,
        max_residual,
        tolerance,
        h: Some(h0),
        notes,
    })
}

fn central_diff(f: &dyn Fn(f64) -> f64, s: f64) -> f64 {
    let step = 1e-6 * s.abs().max(1.0);
    (f(s + step) - f(s - step)) / (2.0 * step)
}

/// Profile least squares for `f(s) ≈ B log(1 + A s)` at fixed `A`.
fn log_fit_sse(a: f64, s: &[f64], y: &[f64]) -> (f64, f64) {
    let l: Vec<f64> = s.iter().map(|&x| (a * x).ln_1p()).collect();
    let ll: f64 = l.iter().map(|v| v * v).sum();
    let ly: f64 = l.iter().zip(y).map(|(a, b)| a * b).sum();
    let b = ly / ll;
    let sse = l.iter().zip(y).map(|(li, yi)| (yi - b * li).powi(2)).sum();
    (b, sse)
}

/// Checks `f(s + t) - f(s) = f(h(s) t)` with `h(s) = f'(s)/f'(0)` over the
/// grid, then fits `f(t) = A t` or `f(t) = B log(1 + A t)`.
///
/// A log fit with `A < 0` is reported as [`BoneClass::PositiveLog`]
/// (negative-binomial shape, finite domain), `A > 0` as
/// [`BoneClass::NegativeLog`] (binomial shape).
pub fn cauchy_classify(f: &dyn Fn(f64) -> f64, s_grid: &[f64]) -> Result<BoneVerdict> {
    if s_grid.is_empty() || s_grid.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(invalid("s_grid", "grid must be non-empty positive reals"));
    }
    let d0 = central_diff(f, 0.0);
    if !(d0 > 0.0) {
        return Err(Error::HypothesisViolation(format!("f'(0) = {d0} is not positive")));
    }
    let mut residual: f64 = 0.0;
    for &s in s_grid {
        let h = central_diff(f, s) / d0;
        let fs = f(s);
        for &t in s_grid {
            residual = residual.max((f(s + t) - fs - f(h * t)).abs());
        }
    }
    if !(residual <= CAUCHY_TOLERANCE) {
        return Ok(BoneVerdict::not_bone(residual, CAUCHY_TOLERANCE, None, Vec::new()));
    }

    let y: Vec<f64> = s_grid.iter().map(|&s| f(s)).collect();
    let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let ss: f64 = s_grid.iter().map(|s| s * s).sum();
    let a_lin = s_grid.iter().zip(&y).map(|(s, v)| s * v).sum::<f64>() / ss;
    let lin_err = s_grid.iter().zip(&y).fold(0.0f64, |m, (s, v)| m.max((v - a_lin * s).abs()));
    let verdict = |classification, fitted_params, notes| BoneVerdict {
        classification,
        fitted_params: Some(fitted_params),
        max_residual: residual,
        tolerance: CAUCHY_TOLERANCE,
        h: None,
        notes,
    };
    if lin_err <= 1e-9 * scale {
        return Ok(verdict(BoneClass::LinearLog, FittedParams { a: a_lin, b: None }, Vec::new()));
    }

    // f''(0)/f'(0) = -A for f = B log(1 + A t)
    let step = 1e-4;
    let d2 = (f(step) - 2.0 * f(0.0) + f(-step)) / (step * step);
    let a0 = -d2 / d0;
    let s_max = s_grid.iter().fold(0.0f64, |m, s| m.max(*s));
    let a_floor = -1.0 / s_max * (1.0 - 1e-9);
    let width = a0.abs().max(1e-3);
    let lo = (a0 - width).max(a_floor);
    let hi = a0 + width;
    let (a_fit, sse) = golden_min(|a| log_fit_sse(a, s_grid, &y).1, lo, hi, 200);
    let (b_fit, _) = log_fit_sse(a_fit, s_grid, &y);
    let notes = vec![format!(
        "log fit rms {:e}; sign pairing: A < 0 is negative-binomial-like, A > 0 binomial-like",
        (sse / s_grid.len() as f64).sqrt()
    )];
    let class = if a_fit < 0.0 { BoneClass::PositiveLog } else { BoneClass::NegativeLog };
    Ok(verdict(class, FittedParams { a: a_fit, b: Some(b_fit) }, notes))
}

/// Law on `{0, ..., n}` given by its probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct FinitePmf {
    probs: Vec<f64>,
}

impl FinitePmf {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(invalid("probs", "probabilities must lie in [0, 1]"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid("probs", format!("probabilities sum to {total}")));
        }
        Ok(Self { probs })
    }

    /// `K ≡ k`.
    pub fn point_mass(k: usize) -> Self {
        let mut probs = vec![0.0; k + 1];
        probs[k] = 1.0;
        Self { probs }
    }

    /// Truncates a counting law where the remaining tail is below `1e-17`.
    pub fn from_law(law: &CountingLaw) -> Result<Self> {
        let mut probs = Vec::new();
        let mut total = 0.0;
        let limit = law.support_max().unwrap_or(u64::MAX);
        let (c, d2) = law.moments()?;
        let bulk = c + 10.0 * d2.sqrt();
        let mut k = 0u64;
        loop {
            let p = law.pmf(k)?;
            probs.push(p);
            total += p;
            if k >= limit || (k as f64 > bulk && 1.0 - total < 1e-17) || k >= 100_000 {
                break;
            }
            k += 1;
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn pgf(&self, t: f64) -> f64 {
        self.probs.iter().rev().fold(0.0, |acc, p| acc * t + p)
    }

    /// Law of `Σ_{i ≤ K} ε_i` with fair coins `ε_i`.
    pub fn fair_thinning(&self) -> FinitePmf {
        let n = self.probs.len();
        let mut out = vec![0.0; n];
        for (k, &pk) in self.probs.iter().enumerate() {
            if pk == 0.0 {
                continue;
            }
            for (j, slot) in out.iter_mut().enumerate().take(k + 1) {
                *slot += pk * (ln_choose(k as u64, j as u64) - k as f64 * std::f64::consts::LN_2).exp();
            }
        }
        FinitePmf { probs: out }
    }
}

/// Both sides `(E((t+1)/2)^{K}, E t^{K'})` where `K'` is the fair-coin
/// thinning of `K`.
pub fn atomic_sides(base: &FinitePmf, t: f64) -> (f64, f64) {
    (base.pgf((t + 1.0) / 2.0), base.fair_thinning().pgf(t))
}

/// Max over the grid of the gap between the two sides of
/// `E((t+1)/2)^{K} = E t^{K'}`.
pub fn atomic_counterexample(base: &FinitePmf, t_grid: &[f64]) -> Result<f64> {
    check_grid(t_grid)?;
    let thinned = base.fair_thinning();
    Ok(t_grid
        .iter()
        .map(|&t| (base.pgf((t + 1.0) / 2.0) - thinned.pgf(t)).abs())
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn pt_residual_examples() {
        let grid = default_t_grid();
        assert!(bone_residual(&CountingLaw::poisson(2.0).unwrap(), 0.5, &grid).unwrap() < 1e-12);
        assert!(bone_residual(&CountingLaw::negative_binomial(3.0, 0.4).unwrap(), 0.25, &grid).unwrap() < 1e-12);
        assert_eq!(bone_residual(&CountingLaw::binomial(4, 0.3).unwrap(), 1.0, &grid).unwrap(), 0.0);
    }

    #[test]
    fn pt_residual_grid() {
        let grid = default_t_grid();
        for &a in &[0.1, 0.5, 0.9] {
            for &theta in &[0.05, 0.2, 0.4, 0.6, 0.85] {
                let laws = [
                    CountingLaw::poisson(10.0 * theta).unwrap(),
                    CountingLaw::binomial(12, theta).unwrap(),
                    CountingLaw::negative_binomial(2.5, theta).unwrap(),
                ];
                for law in &laws {
                    let r = bone_residual(law, a, &grid).unwrap();
                    assert!(r < 1e-12, "{law:?} a={a}: {r}");
                }
            }
        }
    }

    #[test]
    fn geometric_is_positive_log() {
        let v = nnps_bone_test(&NnpsFamily::geometric(), 0.5, 0.5, &default_t_grid()).unwrap();
        assert_eq!(v.classification, BoneClass::PositiveLog);
        assert!(v.max_residual < 1e-10);
        let p = v.fitted_params.unwrap();
        assert_relative_eq!(p.a, -1.0, max_relative = 1e-4);
        assert_relative_eq!(p.b.unwrap(), -1.0, max_relative = 1e-4);
        assert_relative_eq!(v.h.unwrap(), 1.0 / 3.0, epsilon = 1e-8);
    }

    #[test]
    fn exponential_is_linear_log() {
        let v = nnps_bone_test(&NnpsFamily::exponential(), 2.0, 0.3, &default_t_grid()).unwrap();
        assert_eq!(v.classification, BoneClass::LinearLog);
        assert_relative_eq!(v.h.unwrap(), 0.6, epsilon = 1e-8);
        assert_relative_eq!(v.fitted_params.unwrap().a, 1.0, max_relative = 1e-6);
    }

    #[test]
    fn binomial_coefficients_are_negative_log() {
        let v = nnps_bone_test(&NnpsFamily::binomial(5).unwrap(), 0.5, 0.4, &default_t_grid()).unwrap();
        assert_eq!(v.classification, BoneClass::NegativeLog);
        let p = v.fitted_params.unwrap();
        assert_relative_eq!(p.a, 1.0, max_relative = 1e-4);
        assert_relative_eq!(p.b.unwrap(), 5.0, max_relative = 1e-4);
    }

    #[test]
    fn non_pt_families_fail() {
        let cubic = NnpsFamily::from_coeffs("1+x+x^3", vec![1.0, 1.0, 0.0, 1.0]).unwrap();
        let v = nnps_bone_test(&cubic, 0.5, 0.5, &default_t_grid()).unwrap();
        assert_eq!(v.classification, BoneClass::NotBone);
        assert!(v.fitted_params.is_none());
        // optimal-h residual from an independent grid search
        assert!(v.max_residual > 3e-3 && v.max_residual < 5.4e-3, "{}", v.max_residual);
        let mix = nnps_bone_test(&NnpsFamily::poly_exp_mixture(), 0.5, 0.5, &default_t_grid()).unwrap();
        assert_eq!(mix.classification, BoneClass::NotBone);
        assert!(mix.max_residual > 5e-4);
    }

    #[test]
    fn fitted_h_matches_thin_map() {
        let grid = default_t_grid();
        for &(theta, a) in &[(0.3, 0.2), (0.5, 0.5), (0.7, 0.9)] {
            let v = nnps_bone_test(&NnpsFamily::negative_binomial(2.0).unwrap(), theta, a, &grid).unwrap();
            let h = CountingLaw::negative_binomial(2.0, theta).unwrap().thin_map(a).unwrap().theta();
            assert_relative_eq!(v.h.unwrap(), h, epsilon = 1e-8);
            // binomial odds: θ = p/(1-p) maps to a p/(1 - a p) odds
            let vb = nnps_bone_test(&NnpsFamily::binomial(6).unwrap(), theta, a, &grid).unwrap();
            let p = theta / (1.0 + theta);
            let q = CountingLaw::binomial(6, p).unwrap().thin_map(a).unwrap().theta();
            assert_relative_eq!(vb.h.unwrap(), q / (1.0 - q), epsilon = 1e-8);
            let ve = nnps_bone_test(&NnpsFamily::exponential(), 5.0 * theta, a, &grid).unwrap();
            assert_relative_eq!(ve.h.unwrap(), 5.0 * theta * a, epsilon = 1e-8);
        }
    }

    #[test]
    fn bone_test_rejects_a1_zero() {
        let f = NnpsFamily::from_coeffs("1+x^2", vec![1.0, 0.0, 1.0]).unwrap();
        assert!(matches!(nnps_bone_test(&f, 0.5, 0.5, &default_t_grid()), Err(Error::HypothesisViolation(_))));
    }

    #[test]
    fn cauchy_examples() {
        let grid = log_grid(0.5, 50);
        let lin = cauchy_classify(&|t| 2.0 * t, &grid).unwrap();
        assert_eq!(lin.classification, BoneClass::LinearLog);
        assert!(lin.max_residual < 1e-8);
        assert_relative_eq!(lin.fitted_params.unwrap().a, 2.0, max_relative = 1e-6);
        let log = cauchy_classify(&|t: f64| 3.0 * (0.5 * t).ln_1p(), &grid).unwrap();
        assert_eq!(log.classification, BoneClass::NegativeLog);
        let p = log.fitted_params.unwrap();
        assert_relative_eq!(p.a, 0.5, max_relative = 1e-4);
        assert_relative_eq!(p.b.unwrap(), 3.0, max_relative = 1e-4);
        assert!(matches!(cauchy_classify(&|t| t * t, &grid), Err(Error::HypothesisViolation(_))));
    }

    #[test]
    fn cauchy_rejects_non_solutions() {
        let v = cauchy_classify(&|t: f64| t + t * t * t, &log_grid(0.5, 50)).unwrap();
        assert_eq!(v.classification, BoneClass::NotBone);
        assert!(v.fitted_params.is_none());
    }

    #[test]
    fn atomic_examples() {
        let two = FinitePmf::point_mass(2);
        let (l, r) = atomic_sides(&two, 0.0);
        assert_relative_eq!(l, 0.25, epsilon = 1e-15);
        assert_relative_eq!(r, 0.25, epsilon = 1e-15);
        let (l, r) = atomic_sides(&two, 1.0);
        assert_relative_eq!(l, 1.0, epsilon = 1e-15);
        assert_relative_eq!(r, 1.0, epsilon = 1e-15);
        let pois = FinitePmf::from_law(&CountingLaw::poisson(1.0).unwrap()).unwrap();
        assert!(atomic_counterexample(&pois, &default_t_grid()).unwrap() < 1e-10);
        // thinned Poisson(1) is Poisson(1/2)
        let half = CountingLaw::poisson(0.5).unwrap();
        let thin = pois.fair_thinning();
        for k in 0..6 {
            assert_relative_eq!(thin.probs()[k], half.pmf(k as u64).unwrap(), epsilon = 1e-14);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn synthetic_linear_recovered(a in 0.05f64..20.0) {
            let v = cauchy_classify(&|t| a * t, &log_grid(0.5, 50)).unwrap();
            prop_assert_eq!(v.classification, BoneClass::LinearLog);
            let fit = v.fitted_params.unwrap().a;
            prop_assert!(((fit - a) / a).abs() < 1e-6);
        }

        #[test]
        fn synthetic_log_recovered(a in prop_oneof![-1.5f64..-0.1, 0.1f64..3.0], b in 0.2f64..10.0) {
            // f'(0) = A B must be positive
            let bb = if a < 0.0 { -b } else { b };
            let v = cauchy_classify(&|t: f64| bb * (a * t).ln_1p(), &log_grid(0.5, 50)).unwrap();
            let p = v.fitted_params.unwrap();
            prop_assert!(((p.a - a) / a).abs() < 1e-4, "A {} vs {}", p.a, a);
            prop_assert!(((p.b.unwrap() - bb) / bb).abs() < 1e-4, "B {:?} vs {}", p.b, bb);
        }
    }
}
