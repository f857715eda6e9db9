//! Compound PT processes for retail spend. Each customer is a triple
//! `(T, X, Y)`: arrival day, latent state and amount spent. Totals
//! `Z_B = Σ Y_i 1_B(T_i)` over day sets have closed-form moments.

use std::fmt;
use std::sync::Arc;

use rand::RngCore;
use rand_distr::{Distribution, Gamma, LogNormal};
use statrs::distribution::Continuous;
use serde::{Deserialize, Serialize};

use crate::counting::{CountingLaw, PtKind};
use crate::error::{invalid, Error, Result};
use crate::rng::{self, Stream};
use crate::stats::{self, Estimate};
use crate::stc::{self, integrate_unit, IntervalSet, Mark, MarkKernel, MeasureSpec, PointRef, SpatialLaw, TestFn};

/// Probability vector `(p^t_1, ..., p^t_s)` as a function of the day `t`.
#[derive(Clone)]
pub enum StateProbs {
    /// Rows apply on `(0, b_1], (b_1, b_2], ..., (b_{m-1}, n]`.
    Piecewise { breaks: Vec<f64>, rows: Vec<Vec<f64>> },
    Function(Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>),
}

impl fmt::Debug for StateProbs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StateProbs::Piecewise { breaks, rows } => {
                f.debug_struct("Piecewise").field("breaks", breaks).field("rows", rows).finish()
            }
            StateProbs::Function(_) => f.write_str("Function(..)"),
        }
    }
}

impl StateProbs {
    pub fn constant(row: Vec<f64>) -> Self {
        StateProbs::Piecewise { breaks: Vec::new(), rows: vec![row] }
    }

    pub fn at(&self, t: f64) -> Vec<f64> {
        match self {
            StateProbs::Piecewise { breaks, rows } => rows[breaks.partition_point(|&b| b < t)].clone(),
            StateProbs::Function(f) => f(t),
        }
    }

    fn breaks(&self) -> &[f64] {
        match self {
            StateProbs::Piecewise { breaks, .. } => breaks,
            StateProbs::Function(_) => &[],
        }
    }

    fn validate(&self, states: usize, horizon: f64) -> Result<()> {
        let check_row = |row: &[f64]| -> Result<()> {
            if row.len() != states {
                return Err(invalid("state_probs", format!("expected {states} probabilities, got {}", row.len())));
            }
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(invalid("state_probs", "probabilities must lie in [0, 1]"));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(invalid("state_probs", format!("probabilities sum to {total}")));
            }
            Ok(())
        };
        match self {
            StateProbs::Piecewise { breaks, rows } => {
                if rows.len() != breaks.len() + 1 {
                    return Err(invalid("state_probs", "need one more row than breaks"));
                }
                if breaks.windows(2).any(|w| w[0] >= w[1]) || breaks.iter().any(|b| !(*b > 0.0 && *b < horizon)) {
                    return Err(invalid("state_probs", "breaks must increase strictly inside the horizon"));
                }
                rows.iter().try_for_each(|r| check_row(r))
            }
            StateProbs::Function(f) => (0..=1000).try_for_each(|i| check_row(&f(horizon * i as f64 / 1000.0))),
        }
    }
}

/// Two-moment family used for `Y | X = x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpendFamily {
    #[default]
    Gamma,
    LogNormal,
}

#[derive(Debug, Clone, Copy)]
enum SpendDraw {
    Constant(f64),
    Gamma { dist: Gamma<f64>, shape: f64, rate: f64 },
    LogNormal { dist: LogNormal<f64>, mu: f64, sigma: f64 },
}

impl SpendDraw {
    fn new(family: SpendFamily, mean: f64, var: f64) -> Result<Self> {
        if var == 0.0 {
            return Ok(SpendDraw::Constant(mean));
        }
        let err = |e: String| invalid("spend", e);
        Ok(match family {
            SpendFamily::Gamma => {
                let (shape, rate) = (mean * mean / var, mean / var);
                SpendDraw::Gamma { dist: Gamma::new(shape, 1.0 / rate).map_err(|e| err(e.to_string()))?, shape, rate }
            }
            SpendFamily::LogNormal => {
                let s2 = (1.0 + var / (mean * mean)).ln();
                let (mu, sigma) = (mean.ln() - 0.5 * s2, s2.sqrt());
                SpendDraw::LogNormal { dist: LogNormal::new(mu, sigma).map_err(|e| err(e.to_string()))?, mu, sigma }
            }
        })
    }

    fn sample(&self, rng: &mut dyn RngCore) -> f64 {
        match self {
            SpendDraw::Constant(v) => *v,
            SpendDraw::Gamma { dist, .. } => dist.sample(rng),
            SpendDraw::LogNormal { dist, .. } => dist.sample(rng),
        }
    }
}

/// Store model over the horizon `(0, n]`.
#[derive(Debug, Clone)]
pub struct StoreModel {
    counting: CountingLaw,
    horizon: f64,
    arrival: SpatialLaw,
    state_probs: StateProbs,
    spend_mean: Vec<f64>,
    spend_var: Vec<f64>,
    spend_family: Vec<SpendFamily>,
}

impl StoreModel {
    /// Uniform arrivals over `(0, days]` and gamma spend per state.
    pub fn new(
        counting: CountingLaw,
        days: f64,
        state_probs: StateProbs,
        spend_mean: Vec<f64>,
        spend_var: Vec<f64>,
    ) -> Result<Self> {
        let arrival = SpatialLaw::uniform(0.0, days)?;
        let n = spend_mean.len();
        Self::with_arrival(counting, days, arrival, state_probs, spend_mean, spend_var, vec![SpendFamily::Gamma; n])
    }

    pub fn with_arrival(
        counting: CountingLaw,
        days: f64,
        arrival: SpatialLaw,
        state_probs: StateProbs,
        spend_mean: Vec<f64>,
        spend_var: Vec<f64>,
        spend_family: Vec<SpendFamily>,
    ) -> Result<Self> {
        counting.validate()?;
        match counting.kind() {
            Some(PtKind::Poisson) | Some(PtKind::NegativeBinomial) => {}
            _ => return Err(invalid("counting", "must be poisson or negative_binomial")),
        }
        if !(days > 0.0) || !days.is_finite() {
            return Err(invalid("days", "must be positive"));
        }
        let (lo, hi) = arrival.support();
        if lo < 0.0 || hi > days {
            return Err(invalid("arrival", format!("support ({lo}, {hi}] leaves the horizon (0, {days}]")));
        }
        let s = spend_mean.len();
        if s == 0 {
            return Err(invalid("spend_mean", "at least one state is required"));
        }
        if spend_var.len() != s || spend_family.len() != s {
            return Err(invalid("spend_var", "one entry per state is required"));
        }
        if spend_mean.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            return Err(invalid("spend_mean", "means must be positive"));
        }
        if spend_var.iter().any(|b| !(*b >= 0.0) || !b.is_finite()) {
            return Err(invalid("spend_var", "variances must be non-negative"));
        }
        state_probs.validate(s, days)?;
        Ok(Self { counting, horizon: days, arrival, state_probs, spend_mean, spend_var, spend_family })
    }

    pub fn counting(&self) -> &CountingLaw {
        &self.counting
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn states(&self) -> usize {
        self.spend_mean.len()
    }

    /// The whole horizon as a day set.
    pub fn all_days(&self) -> IntervalSet {
        IntervalSet::interval(0.0, self.horizon).expect("positive horizon")
    }

    fn check_days(&self, set: &IntervalSet) -> Result<()> {
        match (set.pieces().first(), set.pieces().last()) {
            (Some(first), Some(last)) if first.0 < 0.0 || last.1 > self.horizon => {
                Err(invalid("days", format!("day set leaves the horizon (0, {}]", self.horizon)))
            }
            _ => Ok(()),
        }
    }

    /// `∫_B ν(dt) Σ_x p^t_x w_x(t)` for a per-state weight.
    fn state_integral(&self, set: &IntervalSet, weight: impl Fn(usize) -> f64 + Copy) -> f64 {
        let mut bps: Vec<f64> = set.endpoints().collect();
        bps.extend_from_slice(self.state_probs.breaks());
        let phi = |t: f64| {
            if !set.contains(t) {
                return 0.0;
            }
            self.state_probs.at(t).iter().enumerate().map(|(x, p)| p * weight(x)).sum()
        };
        self.arrival.expectation(&phi, &bps)
    }

    fn first_moment(&self, set: &IntervalSet) -> f64 {
        self.state_integral(set, |x| self.spend_mean[x])
    }

    fn second_moment(&self, set: &IntervalSet) -> f64 {
        self.state_integral(set, |x| self.spend_mean[x].powi(2) + self.spend_var[x])
    }

    /// Marked measure `(κ, ν × Q × Q₂)`: state then spend.
    pub fn measure_spec(&self) -> Result<MeasureSpec> {
        let draws = self
            .spend_mean
            .iter()
            .zip(&self.spend_var)
            .zip(&self.spend_family)
            .map(|((&m, &v), &f)| SpendDraw::new(f, m, v))
            .collect::<Result<Vec<_>>>()?;
        Ok(MeasureSpec::new(self.counting.clone(), self.arrival.clone())?
            .mark(Arc::new(StateKernel { probs: self.state_probs.clone() }))
            .mark(Arc::new(SpendKernel { draws })))
    }
}

/// `Q(t, ·)`: state index drawn from `p^t`.
#[derive(Debug, Clone)]
struct StateKernel {
    probs: StateProbs,
}

impl MarkKernel for StateKernel {
    fn sample(&self, point: PointRef<'_>, rng: &mut dyn RngCore) -> Mark {
        let probs = self.probs.at(point.location);
        let u = rand::Rng::random::<f64>(rng);
        let mut acc = 0.0;
        for (x, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return Mark::Value(x as f64);
            }
        }
        Mark::Value((probs.len() - 1) as f64)
    }

    fn expect(&self, point: PointRef<'_>, g: &dyn Fn(Mark) -> f64, _breaks: &[f64]) -> Option<f64> {
        let probs = self.probs.at(point.location);
        Some(probs.iter().enumerate().filter(|(_, p)| **p > 0.0).map(|(x, p)| p * g(Mark::Value(x as f64))).sum())
    }

    fn location_breakpoints(&self) -> Vec<f64> {
        self.probs.breaks().to_vec()
    }
}

/// `Q₂(x, ·)`: spend given the state in the first mark.
#[derive(Debug, Clone)]
struct SpendKernel {
    draws: Vec<SpendDraw>,
}

impl SpendKernel {
    fn state(point: PointRef<'_>) -> usize {
        point.mark(0).map(|x| x as usize).expect("state mark precedes spend")
    }
}

impl MarkKernel for SpendKernel {
    fn sample(&self, point: PointRef<'_>, rng: &mut dyn RngCore) -> Mark {
        Mark::Value(self.draws[Self::state(point)].sample(rng))
    }

    fn expect(&self, point: PointRef<'_>, g: &dyn Fn(Mark) -> f64, breaks: &[f64]) -> Option<f64> {
        let draw = self.draws.get(point.mark(0).map(|x| x as usize).unwrap_or(0))?;
        match draw {
            SpendDraw::Constant(v) => Some(g(Mark::Value(*v))),
            SpendDraw::Gamma { shape, rate, .. } => {
                let d = statrs::distribution::Gamma::new(*shape, *rate).ok()?;
                Some(half_line_expectation(&|y| d.pdf(y), g, breaks))
            }
            SpendDraw::LogNormal { mu, sigma, .. } => {
                let d = statrs::distribution::LogNormal::new(*mu, *sigma).ok()?;
                Some(half_line_expectation(&|y| d.pdf(y), g, breaks))
            }
        }
    }
}

/// `∫_0^∞ g(y) p(y) dy` through `y = u/(1-u)`.
fn half_line_expectation(density: &dyn Fn(f64) -> f64, g: &dyn Fn(Mark) -> f64, breaks: &[f64]) -> f64 {
    let cuts: Vec<f64> = breaks.iter().filter(|b| **b > 0.0).map(|b| b / (1.0 + b)).collect();
    integrate_unit(
        &|u: f64| {
            if u >= 1.0 {
                return 0.0;
            }
            let y = u / (1.0 - u);
            let w = density(y) / ((1.0 - u) * (1.0 - u));
            if w == 0.0 || !w.is_finite() {
                0.0
            } else {
                g(Mark::Value(y)) * w
            }
        },
        &cuts,
    )
}

/// `(E Z_B, Var Z_B)`.
pub fn z_moments(model: &StoreModel, days: &IntervalSet) -> Result<(f64, f64)> {
    model.check_days(days)?;
    let (c, d2) = model.counting.moments()?;
    let m1 = model.first_moment(days);
    let m2 = model.second_moment(days);
    let out = (c * m1, c * m2 + (d2 - c) * m1 * m1);
    if !out.0.is_finite() || !out.1.is_finite() {
        return Err(Error::Numeric("quadrature failed".into()));
    }
    Ok(out)
}

/// `Cov(Z_A, Z_{A^c}) = (δ² - c) (∫_A ν Σ p α)(∫_{A^c} ν Σ p α)`.
pub fn z_covariance(model: &StoreModel, days: &IntervalSet) -> Result<f64> {
    model.check_days(days)?;
    let (c, d2) = model.counting.moments()?;
    if d2 == c {
        return Ok(0.0);
    }
    let complement = days.complement_within(0.0, model.horizon);
    Ok((d2 - c) * model.first_moment(days) * model.first_moment(&complement))
}

/// Split of the total over `A` and its complement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Decomposition {
    pub ez: f64,
    pub ez_a: f64,
    pub ez_ac: f64,
    pub var_z: f64,
    pub var_a: f64,
    pub var_ac: f64,
    pub cov: f64,
}

pub fn decompose_total(model: &StoreModel, days: &IntervalSet) -> Result<Decomposition> {
    let complement = days.complement_within(0.0, model.horizon);
    let (ez_a, var_a) = z_moments(model, days)?;
    let (ez_ac, var_ac) = z_moments(model, &complement)?;
    let cov = z_covariance(model, days)?;
    Ok(Decomposition { ez: ez_a + ez_ac, ez_a, ez_ac, var_z: var_a + var_ac + 2.0 * cov, var_a, var_ac, cov })
}

/// Empirical moments of `(Z, Z_A, Z_{A^c})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StoreSimulation {
    pub n_rep: usize,
    pub ez: Estimate,
    pub ez_a: Estimate,
    pub ez_ac: Estimate,
    pub var_z: Estimate,
    pub var_a: Estimate,
    pub var_ac: Estimate,
    pub cov: Estimate,
}

pub fn simulate_store(model: &StoreModel, days: &IntervalSet, n_rep: usize, seed: u64) -> Result<StoreSimulation> {
    if n_rep < 2 {
        return Err(invalid("n_rep", "at least two replicates are required"));
    }
    model.check_days(days)?;
    let spec = model.measure_spec()?;
    let sampler = spec.sampler()?;
    let spend_a = {
        let days = days.clone();
        TestFn::new(move |p| if days.contains(p.location) { p.mark(1).unwrap_or(0.0) } else { 0.0 })
    };
    let spend_all = TestFn::new(|p| p.mark(1).unwrap_or(0.0));
    let pairs = rng::replicate_map(seed, n_rep, |_, rng: &mut Stream| {
        let pattern = sampler.sample(rng);
        let z = stc::integrate(&pattern, &spend_all);
        let za = stc::integrate(&pattern, &spend_a);
        (z, za)
    });
    let z: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let za: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let zac: Vec<f64> = pairs.iter().map(|p| p.0 - p.1).collect();
    Ok(StoreSimulation {
        n_rep,
        ez: stats::mean(&z),
        ez_a: stats::mean(&za),
        ez_ac: stats::mean(&zac),
        var_z: stats::variance(&z),
        var_a: stats::variance(&za),
        var_ac: stats::variance(&zac),
        cov: stats::covariance(&za, &zac),
    })
}
