//! Counting laws: the three Poisson-type (PT) families and generic
//! non-negative power series (NNPS) families `p_k(θ) = a_k θ^k / g(θ)`.
//!
//! Every PT family is closed under thinning: keeping each of `K` points
//! independently with probability `a` yields a law of the same family with
//! parameter `h_a(θ)` (see [`CountingLaw::thin_map`]).

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::factorial::{factorial, ln_binomial, ln_factorial};
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, Error, Result};

/// Relative size of the last accepted term at which a series is truncated.
pub const SERIES_REL_TOL: f64 = 1e-15;
/// Hard cap on the number of series terms; exceeding it is a divergence.
pub const SERIES_MAX_TERMS: usize = 1_000_000;

type CoefficientFn = dyn Fn(usize) -> f64 + Send + Sync;

#[derive(Clone)]
enum Coefficients {
    Finite(Arc<[f64]>),
    Generated(Arc<CoefficientFn>),
}

/// A canonical (`a_0 = 1`) non-negative power series `g(θ) = Σ a_k θ^k`.
#[derive(Clone)]
pub struct NnpsFamily {
    name: String,
    coeffs: Coefficients,
    radius: f64,
}

impl fmt::Debug for NnpsFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.coeffs {
            Coefficients::Finite(c) => format!("finite({} terms)", c.len()),
            Coefficients::Generated(_) => "generated".to_string(),
        };
        f.debug_struct("NnpsFamily")
            .field("name", &self.name)
            .field("coeffs", &kind)
            .field("radius", &self.radius)
            .finish()
    }
}

/// Partial sums `Σ a_k x^k`, `Σ k a_k x^k`, `Σ k(k-1) a_k x^k`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SeriesSums {
    pub s0: f64,
    pub s1: f64,
    pub s2: f64,
    pub terms: usize,
}

impl NnpsFamily {
    /// Polynomial family from an explicit coefficient list.
    pub fn from_coeffs(name: impl Into<String>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(invalid("coeffs", "coefficient list is empty"));
        }
        if coeffs.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(invalid("coeffs", "coefficients must be finite and non-negative"));
        }
        if coeffs[0] != 1.0 {
            return Err(invalid("coeffs", format!("family is not canonical: a_0 = {}", coeffs[0])));
        }
        Ok(Self { name: name.into(), coeffs: Coefficients::Finite(coeffs.into()), radius: f64::INFINITY })
    }

    /// Infinite family with coefficients produced on demand; `radius` bounds
    /// the arguments at which the series is evaluated (may be infinite).
    pub fn generated<F>(name: impl Into<String>, radius: f64, coeff: F) -> Result<Self>
    where
        F: Fn(usize) -> f64 + Send + Sync + 'static,
    {
        if !(radius > 0.0) {
            return Err(invalid("radius_hint", "must be positive"));
        }
        if coeff(0) != 1.0 {
            return Err(invalid("coeffs", format!("family is not canonical: a_0 = {}", coeff(0))));
        }
        Ok(Self { name: name.into(), coeffs: Coefficients::Generated(Arc::new(coeff)), radius })
    }

    /// `a_k = 1`: `g(θ) = 1/(1-θ)`, the geometric family.
    pub fn geometric() -> Self {
        Self::generated("geometric", 1.0, |_| 1.0).expect("valid family")
    }

    /// `a_k = 1/k!`: `g(θ) = e^θ`, the Poisson family.
    pub fn exponential() -> Self {
        Self::generated("exponential", f64::INFINITY, inv_factorial).expect("valid family")
    }

    /// `a_k = C(n, k)`: `g(θ) = (1+θ)^n`, the binomial family in odds form.
    pub fn binomial(n: u64) -> Result<Self> {
        if n == 0 {
            return Err(invalid("n", "must be at least 1"));
        }
        let coeffs = (0..=n).map(|k| ln_choose(n, k).exp().round()).collect();
        Self::from_coeffs(format!("binomial({n})"), coeffs)
    }

    /// `a_k = Γ(k+r)/(Γ(r) k!)`: `g(θ) = (1-θ)^{-r}`, the negative binomial family.
    pub fn negative_binomial(r: f64) -> Result<Self> {
        if !(r > 0.0) || !r.is_finite() {
            return Err(invalid("r", "must be positive"));
        }
        let lg_r = ln_gamma(r);
        Self::generated(format!("negative_binomial({r})"), 1.0, move |k| {
            if k == 0 {
                1.0
            } else {
                (ln_gamma(k as f64 + r) - lg_r - ln_factorial(k as u64)).exp()
            }
        })
    }

    /// `g(θ) = (1+θ) e^θ`, i.e. `a_k = (1+k)/k!`; not thinning-closed.
    pub fn poly_exp_mixture() -> Self {
        Self::generated("poly_exp_mixture", f64::INFINITY, |k| (k as f64 + 1.0) * inv_factorial(k))
            .expect("valid family")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Radius hint (domain bound for θ); infinite for entire series.
    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Coefficient `a_k`.
    pub fn coeff(&self, k: usize) -> f64 {
        match &self.coeffs {
            Coefficients::Finite(c) => c.get(k).copied().unwrap_or(0.0),
            Coefficients::Generated(f) => f(k),
        }
    }

    /// Number of coefficients for polynomial families.
    pub fn finite_len(&self) -> Option<usize> {
        match &self.coeffs {
            Coefficients::Finite(c) => Some(c.len()),
            Coefficients::Generated(_) => None,
        }
    }

    pub fn is_polynomial(&self) -> bool {
        self.finite_len().is_some()
    }

    pub(crate) fn sums(&self, x: f64) -> Result<SeriesSums> {
        if !x.is_finite() {
            return Err(Error::DivergedSeries { terms: 0, at: x });
        }
        let mut s = SeriesSums { s0: 0.0, s1: 0.0, s2: 0.0, terms: 0 };
        match &self.coeffs {
            Coefficients::Finite(c) => {
                let mut xp = 1.0;
                for (k, a) in c.iter().enumerate() {
                    let term = a * xp;
                    let kf = k as f64;
                    s.s0 += term;
                    s.s1 += kf * term;
                    s.s2 += kf * (kf - 1.0) * term;
                    xp *= x;
                }
                s.terms = c.len();
            }
            Coefficients::Generated(f) => {
                if x.abs() >= self.radius {
                    return Err(Error::DivergedSeries { terms: 0, at: x });
                }
                if x == 0.0 {
                    return Ok(SeriesSums { s0: f(0), s1: 0.0, s2: 0.0, terms: 1 });
                }
                let mut xp = 1.0;
                for k in 0..SERIES_MAX_TERMS {
                    let a = f(k);
                    let term = a * xp;
                    if !term.is_finite() {
                        return Err(Error::DivergedSeries { terms: k, at: x });
                    }
                    let kf = k as f64;
                    s.s0 += term;
                    s.s1 += kf * term;
                    s.s2 += kf * (kf - 1.0) * term;
                    s.terms = k + 1;
                    if k >= 1 && a > 0.0 && term.abs() * kf.max(1.0).powi(2) <= SERIES_REL_TOL * s.s0.abs() {
                        return Ok(s);
                    }
                    xp *= x;
                }
                return Err(Error::DivergedSeries { terms: SERIES_MAX_TERMS, at: x });
            }
        }
        Ok(s)
    }

    /// `g(x) = Σ a_k x^k`, truncated per [`SERIES_REL_TOL`].
    pub fn g(&self, x: f64) -> Result<f64> {
        Ok(self.sums(x)?.s0)
    }
}

/// The three thinning-closed families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PtKind {
    Poisson,
    Binomial,
    NegativeBinomial,
}

/// Law of the total count `K`.
#[derive(Debug, Clone)]
pub enum CountingLaw {
    Poisson { lambda: f64 },
    Binomial { n: u64, p: f64 },
    /// pgf `((1-θ)/(1-tθ))^r`; `r = 1` is the geometric law.
    NegativeBinomial { r: f64, theta: f64 },
    Nnps { family: NnpsFamily, theta: f64 },
}

impl Serialize for CountingLaw {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = ser.serialize_struct("CountingLaw", 3)?;
        match self {
            CountingLaw::Poisson { lambda } => {
                st.serialize_field("kind", "poisson")?;
                st.serialize_field("lambda", lambda)?;
            }
            CountingLaw::Binomial { n, p } => {
                st.serialize_field("kind", "binomial")?;
                st.serialize_field("n", n)?;
                st.serialize_field("p", p)?;
            }
            CountingLaw::NegativeBinomial { r, theta } => {
                st.serialize_field("kind", "negative_binomial")?;
                st.serialize_field("r", r)?;
                st.serialize_field("theta", theta)?;
            }
            CountingLaw::Nnps { family, theta } => {
                st.serialize_field("kind", "nnps")?;
                st.serialize_field("family", family.name())?;
                st.serialize_field("theta", theta)?;
            }
        }
        st.end()
    }
}

impl PartialEq for CountingLaw {
    fn eq(&self, other: &Self) -> bool {
        use CountingLaw::*;
        match (self, other) {
            (Poisson { lambda: a }, Poisson { lambda: b }) => a == b,
            (Binomial { n: n1, p: p1 }, Binomial { n: n2, p: p2 }) => n1 == n2 && p1 == p2,
            (NegativeBinomial { r: r1, theta: t1 }, NegativeBinomial { r: r2, theta: t2 }) => r1 == r2 && t1 == t2,
            (Nnps { family: f1, theta: t1 }, Nnps { family: f2, theta: t2 }) => f1.name == f2.name && t1 == t2,
            _ => false,
        }
    }
}

pub(crate) fn ln_choose(n: u64, k: u64) -> f64 {
    ln_binomial(n, k)
}

/// `1/k!`, exact from the factorial table while it lasts.
fn inv_factorial(k: usize) -> f64 {
    if k <= 170 {
        1.0 / factorial(k as u64)
    } else {
        (-ln_factorial(k as u64)).exp()
    }
}

fn check_unit(name: &'static str, t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(invalid(name, format!("{t} is outside [0, 1]")))
    }
}

impl CountingLaw {
    pub fn poisson(lambda: f64) -> Result<Self> {
        let law = CountingLaw::Poisson { lambda };
        law.validate()?;
        Ok(law)
    }

    pub fn binomial(n: u64, p: f64) -> Result<Self> {
        let law = CountingLaw::Binomial { n, p };
        law.validate()?;
        Ok(law)
    }

    pub fn negative_binomial(r: f64, theta: f64) -> Result<Self> {
        let law = CountingLaw::NegativeBinomial { r, theta };
        law.validate()?;
        Ok(law)
    }

    pub fn nnps(family: NnpsFamily, theta: f64) -> Result<Self> {
        let law = CountingLaw::Nnps { family, theta };
        law.validate()?;
        Ok(law)
    }

    /// PT law with prescribed mean `c` and variance `δ²`.
    pub fn from_mean_variance(kind: PtKind, c: f64, delta2: f64) -> Result<Self> {
        if !(c > 0.0) || !(delta2 > 0.0) || !c.is_finite() || !delta2.is_finite() {
            return Err(invalid("mean/variance", "mean and variance must be positive and finite"));
        }
        match kind {
            PtKind::Poisson => {
                if (delta2 - c).abs() > 1e-12 * c {
                    return Err(invalid("variance", "Poisson requires variance equal to mean"));
                }
                Self::poisson(c)
            }
            PtKind::Binomial => {
                if delta2 >= c {
                    return Err(invalid("variance", "binomial requires variance below the mean"));
                }
                let p = 1.0 - delta2 / c;
                let n = c / p;
                let rounded = n.round();
                if rounded < 1.0 || (n - rounded).abs() > 1e-9 * n.max(1.0) {
                    return Err(invalid("mean/variance", format!("implied n = {n} is not an integer")));
                }
                Self::binomial(rounded as u64, c / rounded)
            }
            PtKind::NegativeBinomial => {
                if delta2 <= c {
                    return Err(invalid("variance", "negative binomial requires variance above the mean"));
                }
                let theta = 1.0 - c / delta2;
                Self::negative_binomial(c * (1.0 - theta) / theta, theta)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            CountingLaw::Poisson { lambda } => {
                if !(*lambda > 0.0) || !lambda.is_finite() {
                    return Err(invalid("lambda", "must be positive and finite"));
                }
            }
            CountingLaw::Binomial { n, p } => {
                if *n == 0 {
                    return Err(invalid("n", "must be at least 1"));
                }
                if !(*p > 0.0 && *p < 1.0) {
                    return Err(invalid("p", "must lie in (0, 1)"));
                }
            }
            CountingLaw::NegativeBinomial { r, theta } => {
                if !(*r > 0.0) || !r.is_finite() {
                    return Err(invalid("r", "must be positive and finite"));
                }
                if !(*theta > 0.0 && *theta < 1.0) {
                    return Err(invalid("theta", "must lie in (0, 1)"));
                }
            }
            CountingLaw::Nnps { family, theta } => {
                if !(*theta > 0.0) || !theta.is_finite() {
                    return Err(invalid("theta", "must be positive and finite"));
                }
                family.sums(*theta)?;
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> Option<PtKind> {
        match self {
            CountingLaw::Poisson { .. } => Some(PtKind::Poisson),
            CountingLaw::Binomial { .. } => Some(PtKind::Binomial),
            CountingLaw::NegativeBinomial { .. } => Some(PtKind::NegativeBinomial),
            CountingLaw::Nnps { .. } => None,
        }
    }

    pub fn is_pt(&self) -> bool {
        self.kind().is_some()
    }

    pub fn name(&self) -> String {
        match self {
            CountingLaw::Poisson { lambda } => format!("Poisson(lambda={lambda})"),
            CountingLaw::Binomial { n, p } => format!("Binomial(n={n}, p={p})"),
            CountingLaw::NegativeBinomial { r, theta } => format!("NegativeBinomial(r={r}, theta={theta})"),
            CountingLaw::Nnps { family, theta } => format!("Nnps({}, theta={theta})", family.name()),
        }
    }

    /// Largest value in the support, if finite.
    pub fn support_max(&self) -> Option<u64> {
        match self {
            CountingLaw::Binomial { n, .. } => Some(*n),
            CountingLaw::Nnps { family, .. } => family.finite_len().map(|l| l as u64 - 1),
            _ => None,
        }
    }

    /// Probability generating function `E t^K`.
    pub fn pgf(&self, t: f64) -> Result<f64> {
        check_unit("t", t)?;
        self.pgf_unchecked(t)
    }

    pub(crate) fn pgf_unchecked(&self, t: f64) -> Result<f64> {
        Ok(match self {
            CountingLaw::Poisson { lambda } => (lambda * (t - 1.0)).exp(),
            CountingLaw::Binomial { n, p } => (1.0 - p + p * t).powf(*n as f64),
            CountingLaw::NegativeBinomial { r, theta } => ((1.0 - theta) / (1.0 - t * theta)).powf(*r),
            CountingLaw::Nnps { family, theta } => {
                if t == 1.0 {
                    1.0
                } else {
                    family.g(theta * t)? / family.g(*theta)?
                }
            }
        })
    }

    /// Alternate pgf `E (1-t)^K`.
    pub fn apgf(&self, t: f64) -> Result<f64> {
        check_unit("t", t)?;
        self.pgf_unchecked(1.0 - t)
    }

    pub fn pmf(&self, k: u64) -> Result<f64> {
        let kf = k as f64;
        Ok(match self {
            CountingLaw::Poisson { lambda } => (kf * lambda.ln() - lambda - ln_factorial(k)).exp(),
            CountingLaw::Binomial { n, p } => {
                if k > *n {
                    0.0
                } else {
                    (ln_choose(*n, k) + kf * p.ln() + (*n - k) as f64 * (1.0 - p).ln()).exp()
                }
            }
            CountingLaw::NegativeBinomial { r, theta } => {
                (ln_gamma(kf + r) - ln_gamma(*r) - ln_factorial(k) + kf * theta.ln() + r * (1.0 - theta).ln())
                    .exp()
            }
            CountingLaw::Nnps { family, theta } => {
                let a = family.coeff(k as usize);
                if a == 0.0 {
                    0.0
                } else {
                    (a.ln() + kf * theta.ln()).exp() / family.g(*theta)?
                }
            }
        })
    }

    /// `(c, δ²)`: mean and variance of `K`.
    pub fn moments(&self) -> Result<(f64, f64)> {
        Ok(match self {
            CountingLaw::Poisson { lambda } => (*lambda, *lambda),
            CountingLaw::Binomial { n, p } => {
                let n = *n as f64;
                (n * p, n * p * (1.0 - p))
            }
            CountingLaw::NegativeBinomial { r, theta } => {
                let q = 1.0 - theta;
                (r * theta / q, r * theta / (q * q))
            }
            CountingLaw::Nnps { family, theta } => {
                let s = family.sums(*theta)?;
                let c = s.s1 / s.s0;
                (c, s.s2 / s.s0 + c - c * c)
            }
        })
    }

    /// Second factorial moment `E K(K - 1) = δ² + c² - c`.
    pub fn factorial_moment2(&self) -> Result<f64> {
        let (c, d2) = self.moments()?;
        Ok(d2 + c * c - c)
    }

    /// Probabilities `P(K = k)` for `k = 0, 1, ...` until the remaining
    /// tail mass is below `1e-14` (or the support ends).
    pub fn pmf_table(&self) -> Result<Vec<f64>> {
        let (c, d2) = self.moments()?;
        let limit = self.support_max().unwrap_or(u64::MAX);
        let bulk = c + 12.0 * d2.sqrt() + 10.0;
        let mut probs = Vec::new();
        let mut acc = 0.0;
        let mut k = 0u64;
        loop {
            let p = self.pmf(k)?;
            probs.push(p);
            acc += p;
            if k >= limit || (k as f64 > bulk && 1.0 - acc < 1e-14) || k >= 1_000_000 {
                break;
            }
            k += 1;
        }
        Ok(probs)
    }

    /// Law of the number of points kept when each point is retained
    /// independently with probability `a`.
    pub fn thin_map(&self, a: f64) -> Result<Self> {
        if !(a > 0.0 && a <= 1.0) {
            return Err(Error::Domain { value: a, domain: "(0, 1]" });
        }
        if let CountingLaw::Nnps { family, .. } = self {
            return Err(Error::UnsupportedFamily(format!("no thinning map for NNPS family `{}`", family.name())));
        }
        if a == 1.0 {
            return Ok(self.clone());
        }
        Ok(match self {
            CountingLaw::Poisson { lambda } => CountingLaw::Poisson { lambda: a * lambda },
            CountingLaw::Binomial { n, p } => CountingLaw::Binomial { n: *n, p: a * p },
            CountingLaw::NegativeBinomial { r, theta } => {
                CountingLaw::NegativeBinomial { r: *r, theta: a * theta / (1.0 - (1.0 - a) * theta) }
            }
            CountingLaw::Nnps { .. } => unreachable!(),
        })
    }

    /// The scalar parameter θ that the thinning map acts on.
    pub fn theta(&self) -> f64 {
        match self {
            CountingLaw::Poisson { lambda } => *lambda,
            CountingLaw::Binomial { p, .. } => *p,
            CountingLaw::NegativeBinomial { theta, .. } => *theta,
            CountingLaw::Nnps { theta, .. } => *theta,
        }
    }

    /// Prepared sampler; reuse it when drawing many counts.
    pub fn sampler(&self) -> Result<CountingSampler> {
        self.validate()?;
        Ok(match self {
            CountingLaw::Poisson { lambda } => CountingSampler::Poisson(Poisson::new(*lambda).map_err(numeric)?),
            CountingLaw::Binomial { n, p } => CountingSampler::Binomial(Binomial::new(*n, *p).map_err(numeric)?),
            CountingLaw::NegativeBinomial { r, theta } => {
                CountingSampler::GammaPoisson(Gamma::new(*r, theta / (1.0 - theta)).map_err(numeric)?)
            }
            CountingLaw::Nnps { family, theta } => {
                let s = family.sums(*theta)?;
                let mut cdf = Vec::with_capacity(s.terms);
                let mut acc = 0.0;
                let mut xp = 1.0;
                for k in 0..s.terms {
                    acc += family.coeff(k) * xp / s.s0;
                    cdf.push(acc);
                    xp *= theta;
                }
                CountingSampler::Inversion(cdf)
            }
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<u64> {
        Ok(self.sampler()?.sample(rng))
    }
}

fn numeric(err: impl fmt::Display) -> Error {
    Error::Numeric(err.to_string())
}

/// A counting law prepared for repeated sampling.
#[derive(Debug, Clone)]
pub enum CountingSampler {
    Poisson(Poisson<f64>),
    Binomial(Binomial),
    /// Negative binomial as a Poisson mixture with Gamma(r, θ/(1-θ)) intensity.
    GammaPoisson(Gamma<f64>),
    /// Cumulative pmf of a truncated NNPS law.
    Inversion(Vec<f64>),
}

impl CountingSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match self {
            CountingSampler::Poisson(d) => d.sample(rng) as u64,
            CountingSampler::Binomial(d) => d.sample(rng),
            CountingSampler::GammaPoisson(g) => {
                let lambda = g.sample(rng);
                if lambda > 0.0 {
                    Poisson::new(lambda).map(|p| p.sample(rng) as u64).unwrap_or(0)
                } else {
                    0
                }
            }
            CountingSampler::Inversion(cdf) => {
                let u: f64 = rng.random::<f64>() * cdf.last().copied().unwrap_or(1.0);
                cdf.partition_point(|&c| c <= u).min(cdf.len() - 1) as u64
            }
        }
    }
}

/// Draws one count from `law`.
pub fn sample_count<R: Rng + ?Sized>(law: &CountingLaw, rng: &mut R) -> Result<u64> {
    law.sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::stats::{chi_square_gof, histogram, mean};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn fd_first(law: &CountingLaw) -> f64 {
        // backward difference at t = 1 (pgf only defined on [0, 1])
        let h = 1e-5;
        let f = |t| law.pgf(t).unwrap();
        (3.0 * f(1.0) - 4.0 * f(1.0 - h) + f(1.0 - 2.0 * h)) / (2.0 * h)
    }

    fn fd_second(law: &CountingLaw) -> f64 {
        let h = 1e-4;
        let f = |t| law.pgf(t).unwrap();
        (2.0 * f(1.0) - 5.0 * f(1.0 - h) + 4.0 * f(1.0 - 2.0 * h) - f(1.0 - 3.0 * h)) / (h * h)
    }

    #[test]
    fn pgf_examples() {
        let p = CountingLaw::poisson(2.0).unwrap();
        assert_relative_eq!(p.pgf(0.0).unwrap(), 0.1353352832366127, epsilon = 1e-12);
        assert_eq!(p.pgf(1.0).unwrap(), 1.0);
        let g = CountingLaw::negative_binomial(1.0, 0.5).unwrap();
        assert_relative_eq!(g.pgf(0.5).unwrap(), 2.0 / 3.0, epsilon = 1e-15);
        let b = CountingLaw::binomial(3, 0.5).unwrap();
        assert_eq!(b.pgf(1.0).unwrap(), 1.0);
        assert!(p.pgf(1.5).is_err());
    }

    #[test]
    fn apgf_examples() {
        let p = CountingLaw::poisson(2.0).unwrap();
        assert_eq!(p.apgf(0.0).unwrap(), 1.0);
        assert_relative_eq!(p.apgf(1.0).unwrap(), (-2.0f64).exp(), epsilon = 1e-15);
        let b = CountingLaw::binomial(3, 0.5).unwrap();
        // direct expansion of E(1-t)^K at t = 0.5
        let direct: f64 = (0..=3).map(|k| b.pmf(k).unwrap() * 0.5f64.powi(k as i32)).sum();
        assert_relative_eq!(direct, 0.421875, epsilon = 1e-15);
        assert_relative_eq!(b.apgf(0.5).unwrap(), 0.421875, epsilon = 1e-15);
    }

    #[test]
    fn pmf_examples() {
        let p = CountingLaw::poisson(1.0).unwrap();
        assert_relative_eq!(p.pmf(0).unwrap(), (-1.0f64).exp(), epsilon = 1e-15);
        let b = CountingLaw::binomial(2, 0.5).unwrap();
        assert_relative_eq!(b.pmf(1).unwrap(), 0.5, epsilon = 1e-15);
        assert_eq!(b.pmf(3).unwrap(), 0.0);
        let geo = CountingLaw::nnps(NnpsFamily::geometric(), 0.5).unwrap();
        // g(θ) = 1/(1-θ): p_2 = θ²(1-θ)
        assert_relative_eq!(geo.pmf(2).unwrap(), 0.125, epsilon = 1e-14);
    }

    #[test]
    fn pmf_sums_to_one() {
        let laws = [
            CountingLaw::poisson(3.7).unwrap(),
            CountingLaw::binomial(12, 0.3).unwrap(),
            CountingLaw::negative_binomial(2.5, 0.6).unwrap(),
            CountingLaw::nnps(NnpsFamily::geometric(), 0.5).unwrap(),
            CountingLaw::nnps(NnpsFamily::exponential(), 2.0).unwrap(),
        ];
        for law in &laws {
            let total: f64 = (0..400).map(|k| law.pmf(k).unwrap()).sum();
            assert!(total <= 1.0 + 1e-12 && total >= 1.0 - 1e-10, "{} sums to {total}", law.name());
        }
    }

    #[test]
    fn moments_closed_forms_against_finite_differences() {
        let cases = [
            (CountingLaw::poisson(3.0).unwrap(), 3.0, 3.0),
            (CountingLaw::negative_binomial(2.0, 0.5).unwrap(), 2.0, 4.0),
            (CountingLaw::binomial(10, 0.2).unwrap(), 2.0, 1.6),
        ];
        for (law, c, d2) in cases {
            let (mc, md) = law.moments().unwrap();
            assert_relative_eq!(mc, c, epsilon = 1e-12);
            assert_relative_eq!(md, d2, epsilon = 1e-12);
            let c_fd = fd_first(&law);
            let fact2 = fd_second(&law);
            assert_relative_eq!(c_fd, c, epsilon = 1e-6);
            assert_relative_eq!(fact2 + c_fd - c_fd * c_fd, d2, epsilon = 1e-4);
        }
    }

    #[test]
    fn nnps_moments_match_closed_forms() {
        let nb = CountingLaw::nnps(NnpsFamily::negative_binomial(2.0).unwrap(), 0.5).unwrap();
        let (c, d2) = nb.moments().unwrap();
        assert_relative_eq!(c, 2.0, epsilon = 1e-12);
        assert_relative_eq!(d2, 4.0, epsilon = 1e-12);
        let bin = CountingLaw::nnps(NnpsFamily::binomial(10).unwrap(), 0.25).unwrap();
        let (c, d2) = bin.moments().unwrap();
        // odds 0.25 -> p = 0.2
        assert_relative_eq!(c, 2.0, epsilon = 1e-12);
        assert_relative_eq!(d2, 1.6, epsilon = 1e-12);
    }

    #[test]
    fn thin_map_examples() {
        let p = CountingLaw::poisson(2.0).unwrap();
        assert_eq!(p.thin_map(0.5).unwrap(), CountingLaw::Poisson { lambda: 1.0 });
        let g = CountingLaw::negative_binomial(1.0, 0.5).unwrap();
        match g.thin_map(0.5).unwrap() {
            CountingLaw::NegativeBinomial { r, theta } => {
                assert_eq!(r, 1.0);
                assert_relative_eq!(theta, 1.0 / 3.0, epsilon = 1e-15);
            }
            other => panic!("unexpected {other:?}"),
        }
        let b = CountingLaw::binomial(4, 0.3).unwrap();
        assert_eq!(b.thin_map(1.0).unwrap(), b);
    }

    #[test]
    fn thin_map_errors() {
        let p = CountingLaw::poisson(2.0).unwrap();
        assert!(matches!(p.thin_map(0.0), Err(Error::Domain { .. })));
        assert!(matches!(p.thin_map(1.5), Err(Error::Domain { .. })));
        let geo = CountingLaw::nnps(NnpsFamily::geometric(), 0.5).unwrap();
        assert!(matches!(geo.thin_map(0.5), Err(Error::UnsupportedFamily(_))));
    }

    #[test]
    fn validation() {
        assert!(CountingLaw::binomial(3, 1.0).is_err());
        assert!(CountingLaw::binomial(0, 0.5).is_err());
        assert!(CountingLaw::poisson(0.0).is_err());
        assert!(CountingLaw::negative_binomial(1.0, 1.0).is_err());
        assert!(matches!(
            CountingLaw::nnps(NnpsFamily::geometric(), 1.0),
            Err(Error::DivergedSeries { .. })
        ));
        assert!(NnpsFamily::from_coeffs("bad", vec![2.0, 1.0]).is_err());
    }

    #[test]
    fn diverged_series_names_bound() {
        let slow = NnpsFamily::generated("slow", f64::INFINITY, |k| if k == 0 { 1.0 } else { 1.0 / k as f64 }).unwrap();
        // radius is truly 1; at θ = 1 the terms decay only like 1/k
        match slow.g(1.0) {
            Err(Error::DivergedSeries { terms, .. }) => assert_eq!(terms, SERIES_MAX_TERMS),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn from_mean_variance_inverts_moments() {
        let nb = CountingLaw::from_mean_variance(PtKind::NegativeBinomial, 2.0, 4.0).unwrap();
        match nb {
            CountingLaw::NegativeBinomial { r, theta } => {
                assert_relative_eq!(r, 2.0, epsilon = 1e-12);
                assert_relative_eq!(theta, 0.5, epsilon = 1e-12);
            }
            _ => unreachable!(),
        }
        let b = CountingLaw::from_mean_variance(PtKind::Binomial, 2.0, 1.6).unwrap();
        assert_eq!(b.support_max(), Some(10));
        assert!(CountingLaw::from_mean_variance(PtKind::Binomial, 2.0, 2.0).is_err());
        assert!(CountingLaw::from_mean_variance(PtKind::Binomial, 2.0, 1.7).is_err());
        assert!(CountingLaw::from_mean_variance(PtKind::NegativeBinomial, 2.0, 1.0).is_err());
        assert!(CountingLaw::from_mean_variance(PtKind::Poisson, 2.0, 3.0).is_err());
        assert_eq!(CountingLaw::from_mean_variance(PtKind::Poisson, 2.0, 2.0).unwrap(), CountingLaw::Poisson { lambda: 2.0 });
    }

    #[test]
    fn binomial_samples_respect_support() {
        let law = CountingLaw::binomial(5, 0.7).unwrap();
        let s = law.sampler().unwrap();
        let mut rng = rng::stream(1, 0);
        assert!((0..10_000).all(|_| s.sample(&mut rng) <= 5));
    }

    #[test]
    fn poisson_sample_mean_clt() {
        let law = CountingLaw::poisson(4.0).unwrap();
        let s = law.sampler().unwrap();
        let mut rng = rng::stream(2024, 0);
        let xs: Vec<f64> = (0..1_000_000).map(|_| s.sample(&mut rng) as f64).collect();
        let m = mean(&xs);
        assert!((m.estimate - 4.0).abs() <= 3.0 * 2.0 / 1000.0, "mean {}", m.estimate);
    }

    #[test]
    fn nnps_inversion_matches_pmf() {
        let law = CountingLaw::nnps(NnpsFamily::geometric(), 0.5).unwrap();
        let s = law.sampler().unwrap();
        let mut rng = rng::stream(99, 0);
        let h = histogram((0..100_000).map(|_| s.sample(&mut rng)));
        let probs: Vec<f64> = (0..40).map(|k| law.pmf(k).unwrap()).collect();
        let out = chi_square_gof(&h, &probs);
        assert!(out.passed, "{out:?}");
    }

    #[test]
    fn negative_binomial_sampler_matches_pmf() {
        let law = CountingLaw::negative_binomial(2.0, 0.5).unwrap();
        let s = law.sampler().unwrap();
        let mut rng = rng::stream(5, 0);
        let h = histogram((0..100_000).map(|_| s.sample(&mut rng)));
        let probs: Vec<f64> = (0..60).map(|k| law.pmf(k).unwrap()).collect();
        assert!(chi_square_gof(&h, &probs).passed);
    }

    fn pt_law() -> impl Strategy<Value = CountingLaw> {
        prop_oneof![
            (0.05f64..50.0).prop_map(|l| CountingLaw::Poisson { lambda: l }),
            (1u64..60, 0.01f64..0.99).prop_map(|(n, p)| CountingLaw::Binomial { n, p }),
            (0.1f64..10.0, 0.01f64..0.95).prop_map(|(r, t)| CountingLaw::NegativeBinomial { r, theta: t }),
        ]
    }

    proptest! {
        #[test]
        fn thin_map_composes(law in pt_law(), a in 0.01f64..=1.0, b in 0.01f64..=1.0) {
            let two_step = law.thin_map(a).unwrap().thin_map(b).unwrap();
            let one_step = law.thin_map(a * b).unwrap();
            prop_assert_eq!(two_step.kind(), one_step.kind());
            prop_assert_eq!(two_step.support_max(), one_step.support_max());
            let (x, y) = (two_step.theta(), one_step.theta());
            prop_assert!((x - y).abs() <= 8.0 * f64::EPSILON * y.abs(), "{} vs {}", x, y);
        }

        #[test]
        fn thinned_moments_follow_scaling(law in pt_law(), a in 0.01f64..=1.0) {
            let (c, d2) = law.moments().unwrap();
            let thinned = law.thin_map(a).unwrap();
            let (ca, d2a) = thinned.moments().unwrap();
            prop_assert!((ca - a * c).abs() <= 1e-12 * (1.0 + a * c));
            let fact = d2a + ca * ca - ca;
            let target = a * a * (d2 + c * c - c);
            prop_assert!((fact - target).abs() <= 1e-9 * (1.0 + target.abs()));
        }

        #[test]
        fn apgf_is_reflected_pgf(law in pt_law(), i in 0usize..=100) {
            let t = i as f64 / 100.0;
            let lhs = law.apgf(t).unwrap();
            let rhs = law.pgf(1.0 - t).unwrap();
            prop_assert!((lhs - rhs).abs() <= 4.0 * f64::EPSILON);
        }

        #[test]
        fn pgf_monotone_convex(law in pt_law()) {
            let v: Vec<f64> = (0..=100).map(|i| law.pgf(i as f64 / 100.0).unwrap()).collect();
            for w in v.windows(3) {
                prop_assert!(w[1] >= w[0] - 1e-15);
                prop_assert!(w[2] - 2.0 * w[1] + w[0] >= -1e-12);
            }
            prop_assert_eq!(v[100], 1.0);
            prop_assert!(v.iter().all(|x| (0.0..=1.0).contains(x)));
        }
    }

    #[test]
    fn thinned_factorial_moment_via_pgf_second_derivative() {
        let law = CountingLaw::negative_binomial(3.0, 0.4).unwrap();
        let (c, d2) = law.moments().unwrap();
        for a in [0.25, 0.5, 0.9] {
            let thinned = law.thin_map(a).unwrap();
            assert_relative_eq!(fd_first(&thinned), a * c, epsilon = 1e-5);
            assert_relative_eq!(fd_second(&thinned), a * a * (d2 + c * c - c), max_relative = 1e-4);
        }
    }
}
