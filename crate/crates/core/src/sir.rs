//! Deterministic SIR epidemic read as a binomial random measure.
//!
//! The mass `1 - S_t` infected by time `t` is spread over infection times
//! with density `ν(x) = β I_x S_x / τ`; each infected individual recovers
//! after an `Exp(γ)` delay. With `K ~ Binomial(n, τ)` stones the counts of
//! susceptible, infected and recovered individuals at time `t` are
//! trinomial with probabilities `(S_t, τĨ_t, 1 - S_t - τĨ_t)`.

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;

use crate::counting::CountingLaw;
use crate::error::{invalid, Error, Result};
use crate::rng::{self, Stream};
use crate::stats::{self, ChiSquareOutcome, Estimate};
use crate::stc::{DensityTable, MeasureSpec, ShiftedExponential, SpatialLaw};

pub const DEFAULT_DT: f64 = 1e-3;
/// Infected mass below which the epidemic counts as extinct.
pub const EXTINCTION_LEVEL: f64 = 1e-8;
const CONSERVATION_TOLERANCE: f64 = 1e-6;
const TAIL_WARNING: f64 = 1e-6;
/// Tail mass beyond the horizon that makes `ν` unusable.
const TAIL_LIMIT: f64 = 1e-2;
const MAX_STEPS: usize = 50_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SirParams {
    pub beta: f64,
    pub gamma: f64,
    pub rho: f64,
}

impl SirParams {
    pub fn new(beta: f64, gamma: f64, rho: f64) -> Result<Self> {
        let p = Self { beta, gamma, rho };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("beta", self.beta), ("gamma", self.gamma), ("rho", self.rho)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(name, format!("{v} must be positive and finite")));
            }
        }
        if !(self.r0() > 1.0) {
            return Err(invalid("beta", format!("R0 = beta/gamma = {} must exceed 1", self.r0())));
        }
        Ok(())
    }

    pub fn r0(&self) -> f64 {
        self.beta / self.gamma
    }
}

/// Fixed-step solution on `t_j = j dt`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SirTrajectory {
    pub params: SirParams,
    pub dt: f64,
    pub t: Vec<f64>,
    pub s: Vec<f64>,
    pub i: Vec<f64>,
    pub r: Vec<f64>,
    pub tau: f64,
}

impl SirTrajectory {
    pub fn s_inf(&self) -> f64 {
        1.0 - self.tau
    }

    pub fn t_max(&self) -> f64 {
        *self.t.last().expect("non-empty trajectory")
    }

    /// Largest deviations from `S + I + R = 1 + ρ` and `S_t = e^{-R0 R_t}`
    /// over the grid.
    pub fn structure_residuals(&self) -> StructureResiduals {
        let total = 1.0 + self.params.rho;
        let r0 = self.params.r0();
        let mut out = StructureResiduals { conservation: 0.0, sir2: 0.0 };
        for j in 0..self.t.len() {
            out.conservation = out.conservation.max((self.s[j] + self.i[j] + self.r[j] - total).abs());
            out.sir2 = out.sir2.max((self.s[j] * (r0 * self.r[j]).exp() - 1.0).abs());
        }
        out
    }

    /// `(S_t, I_t, R_t)`, linear between grid points.
    pub fn at(&self, t: f64) -> Result<(f64, f64, f64)> {
        let t_max = self.t_max();
        if !(t >= 0.0) || t > t_max * (1.0 + 1e-12) {
            return Err(Error::Horizon(format!("t = {t} is outside [0, {t_max}]")));
        }
        let pos = (t / self.dt).min((self.t.len() - 1) as f64);
        let j = (pos.floor() as usize).min(self.t.len() - 2);
        let w = pos - j as f64;
        let lerp = |v: &[f64]| if w == 0.0 { v[j] } else { v[j] * (1.0 - w) + v[j + 1] * w };
        Ok((lerp(&self.s), lerp(&self.i), lerp(&self.r)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StructureResiduals {
    pub conservation: f64,
    /// `max |S_t e^{R0 R_t} - 1|`.
    pub sir2: f64,
}

fn rhs(p: &SirParams, s: f64, i: f64) -> (f64, f64, f64) {
    let inf = p.beta * i * s;
    let rec = p.gamma * i;
    (-inf, inf - rec, rec)
}

fn rk4_step(p: &SirParams, (s, i, r): (f64, f64, f64), dt: f64) -> (f64, f64, f64) {
    let k1 = rhs(p, s, i);
    let k2 = rhs(p, s + 0.5 * dt * k1.0, i + 0.5 * dt * k1.1);
    let k3 = rhs(p, s + 0.5 * dt * k2.0, i + 0.5 * dt * k2.1);
    let k4 = rhs(p, s + dt * k3.0, i + dt * k3.1);
    let step = |a: f64, b: f64, c: f64, d: f64| dt / 6.0 * (a + 2.0 * b + 2.0 * c + d);
    (
        s + step(k1.0, k2.0, k3.0, k4.0),
        i + step(k1.1, k2.1, k3.1, k4.1),
        r + step(k1.2, k2.2, k3.2, k4.2),
    )
}

fn integrate(params: &SirParams, dt: f64, mut done: impl FnMut(usize, f64) -> bool) -> Result<SirTrajectory> {
    params.validate()?;
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(invalid("dt", "must be positive"));
    }
    let tau = final_size(params.r0(), params.rho)?;
    let total = 1.0 + params.rho;
    let mut state = (1.0, params.rho, 0.0);
    let mut traj = SirTrajectory {
        params: *params,
        dt,
        t: vec![0.0],
        s: vec![1.0],
        i: vec![params.rho],
        r: vec![0.0],
        tau,
    };
    let mut j = 0;
    while !done(j, state.1) {
        if j >= MAX_STEPS {
            return Err(Error::Horizon(format!("no extinction within {MAX_STEPS} steps")));
        }
        state = rk4_step(params, state, dt);
        j += 1;
        let t = j as f64 * dt;
        let drift = (state.0 + state.1 + state.2 - total).abs();
        if drift > CONSERVATION_TOLERANCE {
            return Err(Error::StepSize { error: drift, time: t });
        }
        traj.t.push(t);
        traj.s.push(state.0);
        traj.i.push(state.1);
        traj.r.push(state.2);
    }
    Ok(traj)
}

/// RK4 on `(0, t_max]` with `round(t_max / dt)` steps of size `dt`.
pub fn solve_sir(params: &SirParams, t_max: f64, dt: f64) -> Result<SirTrajectory> {
    if !(t_max > 0.0) || !t_max.is_finite() {
        return Err(invalid("t_max", "must be positive"));
    }
    if !(dt > 0.0) {
        return Err(invalid("dt", "must be positive"));
    }
    let steps = (t_max / dt).round().max(1.0) as usize;
    if steps > MAX_STEPS {
        return Err(invalid("dt", format!("{steps} steps exceed the limit {MAX_STEPS}")));
    }
    let traj = integrate(params, dt, |j, _| j >= steps)?;
    let i_end = *traj.i.last().unwrap();
    if i_end >= EXTINCTION_LEVEL {
        log::warn!("I(t_max) = {i_end:e} is above {EXTINCTION_LEVEL:e}; the horizon may be too short");
    }
    Ok(traj)
}

/// Integrates until `I < 1e-8` after the peak.
pub fn solve_to_extinction(params: &SirParams, dt: f64) -> Result<SirTrajectory> {
    let mut peaked = false;
    let mut last = f64::NEG_INFINITY;
    integrate(params, dt, |_, i| {
        if i < last {
            peaked = true;
        }
        last = i;
        peaked && i < EXTINCTION_LEVEL
    })
}

/// Root of `1 - τ = e^{-R0(τ + ρ)}` in `(0, 1)`.
pub fn final_size(r0: f64, rho: f64) -> Result<f64> {
    if !(r0 > 1.0) || !r0.is_finite() {
        return Err(invalid("r0", format!("{r0} must exceed 1")));
    }
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(invalid("rho", format!("{rho} must be positive")));
    }
    // F is concave with F(0) > 0 > F(1): a single sign change
    let f = |x: f64| 1.0 - x - (-r0 * (x + rho)).exp();
    let df = |x: f64| -1.0 + r0 * (-r0 * (x + rho)).exp();
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut x = 1.0 - (-r0 * (1.0 + rho)).exp();
    for _ in 0..200 {
        let fx = f(x);
        if fx == 0.0 {
            return Ok(x);
        }
        if fx > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let d = df(x);
        let mut next = if d != 0.0 { x - fx / d } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-16 * x.max(1e-300) || hi - lo <= f64::EPSILON * hi {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}

/// Tabulated law of the infection time given infection.
///
/// Cell masses are the decrements `(S_j - S_{j+1}) / τ`, so that
/// `ν((0, t]) = (1 - S_t)/τ` at grid points; the mass `(S_{t_max} - 1 + τ)/τ`
/// beyond the horizon is folded into the last cell.
pub fn infection_density(traj: &SirTrajectory) -> Result<SpatialLaw> {
    if traj.t.len() < 2 {
        return Err(Error::Horizon("trajectory has a single point".into()));
    }
    let tau = traj.tau;
    let mut masses: Vec<f64> = traj.s.windows(2).map(|w| ((w[0] - w[1]) / tau).max(0.0)).collect();
    let tail = (traj.s.last().unwrap() - traj.s_inf()) / tau;
    if tail > TAIL_LIMIT {
        return Err(Error::Horizon(format!(
            "tail mass {tail:e} beyond t_max = {} is too large; extend the horizon",
            traj.t_max()
        )));
    }
    if tail.abs() > TAIL_WARNING {
        log::warn!("folding tail mass {tail:e} beyond t_max into the last cell");
    }
    let last = masses.last_mut().unwrap();
    *last = (*last + tail).max(0.0);
    Ok(SpatialLaw::Table(DensityTable::from_cell_masses(traj.t.clone(), &masses)?))
}

/// `y = x + Exp(γ)`.
pub fn recovery_kernel(params: &SirParams) -> Result<ShiftedExponential> {
    ShiftedExponential::new(params.gamma)
}

/// `(P(S), P(I), P(R)) = (S_t, τĨ_t, 1 - S_t - τĨ_t)` with
/// `τĨ_t = I_t - ρ e^{-γt}`.
pub fn label_probabilities(traj: &SirTrajectory, t: f64) -> Result<(f64, f64, f64)> {
    let (s, i, _) = traj.at(t)?;
    let mut p_i = i - traj.params.rho * (-traj.params.gamma * t).exp();
    if p_i < 0.0 {
        if p_i < -1e-12 {
            return Err(Error::Numeric(format!("τĨ_t = {p_i:e} is negative")));
        }
        p_i = 0.0;
    }
    let p_s = s.clamp(0.0, 1.0);
    let p_r = (1.0 - p_s - p_i).max(0.0);
    Ok((1.0 - p_i - p_r, p_i, p_r))
}

/// Trinomial probability of `k_I` infected and `k_R` recovered among `n`.
pub fn label_count_pmf(n: u64, traj: &SirTrajectory, t: f64, k_i: u64, k_r: u64) -> Result<f64> {
    if k_i + k_r > n {
        return Err(invalid("k_i", format!("k_i + k_r = {} exceeds n = {n}", k_i + k_r)));
    }
    let probs = label_probabilities(traj, t)?;
    Ok(trinomial(n, probs, k_i, k_r))
}

fn trinomial(n: u64, (p_s, p_i, p_r): (f64, f64, f64), k_i: u64, k_r: u64) -> f64 {
    let k_s = n - k_i - k_r;
    let mut log_p = ln_factorial(n) - ln_factorial(k_i) - ln_factorial(k_r) - ln_factorial(k_s);
    for (k, p) in [(k_i, p_i), (k_r, p_r), (k_s, p_s)] {
        if k > 0 {
            if p == 0.0 {
                return 0.0;
            }
            log_p += k as f64 * p.ln();
        }
    }
    log_p.exp()
}

/// Position of `(k_I, k_R)` in the row-major simplex enumeration.
fn simplex_index(n: u64, k_i: u64, k_r: u64) -> usize {
    // rows k_I = 0..k_i-1 hold n+1, n, ..., n-k_i+2 cells
    let before: u64 = (0..k_i).map(|a| n - a + 1).sum();
    (before + k_r) as usize
}

/// Empirical label counts at time `t` with `n` individuals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelSimulation {
    pub n: u64,
    pub t: f64,
    pub n_rep: usize,
    pub probabilities: (f64, f64, f64),
    /// Counts over `(k_I, k_R)`, row-major over the simplex.
    pub table: Vec<u64>,
    pub joint_fit: ChiSquareOutcome,
    /// `K_A`, the number infected by `t`, against `Binomial(n, 1 - S_t)`.
    pub k_a_fit: ChiSquareOutcome,
    pub k_a_mean: Estimate,
    pub k_a_var: Estimate,
    /// Per-individual label frequencies `(S, I, R)`.
    pub label_freq: (Estimate, Estimate, Estimate),
}

impl LabelSimulation {
    pub fn count(&self, k_i: u64, k_r: u64) -> u64 {
        self.table[simplex_index(self.n, k_i, k_r)]
    }
}

/// Stones `K ~ Binomial(n, τ)` with infection times from `ν` and recovery
/// marks; individuals are labelled by `x > t` (S), `x ≤ t < y` (I) or
/// `y ≤ t` (R).
pub fn simulate_labels(n: u64, traj: &SirTrajectory, t: f64, n_rep: usize, seed: u64) -> Result<LabelSimulation> {
    if n == 0 {
        return Err(invalid("n", "population must be positive"));
    }
    if n_rep < 2 {
        return Err(invalid("n_rep", "at least two replicates are required"));
    }
    let probs = label_probabilities(traj, t)?;
    let spec = MeasureSpec::new(CountingLaw::binomial(n, traj.tau)?, infection_density(traj)?)?
        .mark(std::sync::Arc::new(recovery_kernel(&traj.params)?));
    let sampler = spec.sampler()?;
    let draws: Vec<(u64, u64)> = rng::replicate_map(seed, n_rep, |_, rng: &mut Stream| {
        let pattern = sampler.sample(rng);
        let (mut k_i, mut k_r) = (0, 0);
        for p in pattern.iter() {
            if p.location <= t {
                if p.mark(0).expect("recovery mark") > t {
                    k_i += 1;
                } else {
                    k_r += 1;
                }
            }
        }
        (k_i, k_r)
    });

    let cells = simplex_index(n, n, 0) + 1;
    let mut table = vec![0u64; cells];
    let mut expected = vec![0.0; cells];
    for k_i in 0..=n {
        for k_r in 0..=(n - k_i) {
            expected[simplex_index(n, k_i, k_r)] = trinomial(n, probs, k_i, k_r);
        }
    }
    for &(k_i, k_r) in &draws {
        table[simplex_index(n, k_i, k_r)] += 1;
    }
    let joint_fit = stats::chi_square_gof(&table, &expected);

    let p_a = 1.0 - probs.0;
    let k_a_law = CountingLaw::binomial(n, p_a.min(1.0 - f64::EPSILON).max(f64::MIN_POSITIVE))?;
    let k_a_probs: Vec<f64> = (0..=n).map(|k| k_a_law.pmf(k)).collect::<Result<_>>()?;
    let k_a: Vec<f64> = draws.iter().map(|(a, b)| (a + b) as f64).collect();
    let k_a_fit = stats::chi_square_gof(&stats::histogram(draws.iter().map(|(a, b)| a + b)), &k_a_probs);

    let nf = n as f64;
    let freq = |f: &dyn Fn(&(u64, u64)) -> f64| stats::mean(&draws.iter().map(f).collect::<Vec<_>>());
    let label_freq = (
        freq(&|(a, b)| (nf - (*a + *b) as f64) / nf),
        freq(&|(a, _)| *a as f64 / nf),
        freq(&|(_, b)| *b as f64 / nf),
    );
    Ok(LabelSimulation {
        n,
        t,
        n_rep,
        probabilities: probs,
        table,
        joint_fit,
        k_a_fit,
        k_a_mean: stats::mean(&k_a),
        k_a_var: stats::variance(&k_a),
        label_freq,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::sync::OnceLock;

    /// `τ` for `R0 = 2, ρ = 0.01` by plain fixed-point iteration.
    fn tau_oracle(r0: f64, rho: f64) -> f64 {
        let mut x: f64 = 0.5;
        for _ in 0..10_000 {
            x = 1.0 - (-r0 * (x + rho)).exp();
        }
        x
    }

    fn base() -> &'static SirTrajectory {
        static TRAJ: OnceLock<SirTrajectory> = OnceLock::new();
        TRAJ.get_or_init(|| solve_to_extinction(&SirParams::new(2.0, 1.0, 0.01).unwrap(), DEFAULT_DT).unwrap())
    }

    #[test]
    fn final_size_examples() {
        let tau = final_size(2.0, 0.01).unwrap();
        assert_relative_eq!(tau, tau_oracle(2.0, 0.01), epsilon = 1e-12);
        assert_relative_eq!(tau, 0.8034699392638661, epsilon = 1e-12);
        assert!((1.0 - tau - (-2.0 * (tau + 0.01)).exp()).abs() < 1e-12);
        let mut prev = 0.0;
        for rho in [0.01, 0.1, 0.5, 1.0, 2.0, 5.0] {
            let t = final_size(2.0, rho).unwrap();
            assert!(t > prev && t < 1.0);
            prev = t;
        }
        assert!(prev > 0.9999);
        assert!(final_size(0.9, 0.1).is_err());
    }

    #[test]
    fn trajectory_invariants() {
        let tr = base();
        assert_eq!((tr.s[0], tr.i[0], tr.r[0]), (1.0, 0.01, 0.0));
        let r0 = tr.params.r0();
        for j in 0..tr.t.len() {
            assert!((tr.s[j] + tr.i[j] + tr.r[j] - 1.01).abs() < 1e-6);
            assert!((tr.s[j] * (r0 * tr.r[j]).exp() - 1.0).abs() < 1e-6);
            if j > 0 {
                assert!(tr.s[j] <= tr.s[j - 1] && tr.r[j] >= tr.r[j - 1]);
            }
        }
        assert!(*tr.i.last().unwrap() < EXTINCTION_LEVEL);
        assert!((tr.s.last().unwrap() - tr.s_inf()).abs() < 1e-6);
    }

    #[test]
    fn short_horizon_warns_and_density_rejects() {
        let p = SirParams::new(2.0, 1.0, 0.01).unwrap();
        let tr = solve_sir(&p, 3.0, 1e-2).unwrap();
        assert_eq!(tr.t.len(), 301);
        assert!(matches!(infection_density(&tr), Err(Error::Horizon(_))));
        assert!(SirParams::new(1.0, 1.0, 0.1).is_err());
    }

    #[test]
    fn infection_density_is_proper() {
        let tr = base();
        let nu = infection_density(tr).unwrap();
        let (lo, hi) = nu.support();
        assert_eq!(lo, 0.0);
        assert_relative_eq!(nu.cdf(hi), 1.0, epsilon = 1e-12);
        for &t in &[0.5, 1.0, 3.0, 7.25, 12.0] {
            let (s, _, _) = tr.at(t).unwrap();
            assert_relative_eq!(nu.cdf(t), (1.0 - s) / tr.tau, epsilon = 1e-6);
        }
        // trapezoid of βIS/τ against the decrement form
        let dens: Vec<f64> = tr.s.iter().zip(&tr.i).map(|(s, i)| 2.0 * i * s / tr.tau).collect();
        let trap = SpatialLaw::table(tr.t.clone(), &dens).unwrap();
        assert!((trap.cdf(5.0) - nu.cdf(5.0)).abs() < 1e-5);
    }

    #[test]
    fn label_probability_examples() {
        let tr = base();
        assert_eq!(label_probabilities(tr, 0.0).unwrap(), (1.0, 0.0, 0.0));
        let (s, i, r) = label_probabilities(tr, tr.t_max()).unwrap();
        assert!((s - (1.0 - tr.tau)).abs() < 1e-6);
        assert!(i.abs() < 1e-6);
        assert!((r - tr.tau).abs() < 1e-6);
        for &t in &[0.3, 2.0, 5.5, 9.0] {
            let (s, i, r) = label_probabilities(tr, t).unwrap();
            assert_eq!(s + i + r, 1.0);
            assert!([s, i, r].iter().all(|p| (0.0..=1.0).contains(p)));
        }
        assert!(label_probabilities(tr, tr.t_max() + 1.0).is_err());
    }

    #[test]
    fn infected_probability_matches_convolution() {
        // τĨ_t = τ ∫_0^t ν(x) e^{-γ(t-x)} dx, integrated over the table cells
        let tr = base();
        let t = 4.0;
        let j_end = (t / tr.dt).round() as usize;
        let mut conv = 0.0;
        for j in 0..j_end {
            let mass = tr.s[j] - tr.s[j + 1];
            let (a, b) = (tr.t[j], tr.t[j + 1]);
            // uniform within the cell: average of e^{-γ(t-x)} over (a, b]
            conv += mass * ((-(t - b)).exp() - (-(t - a)).exp()) / (b - a);
        }
        let (_, p_i, _) = label_probabilities(tr, t).unwrap();
        assert_relative_eq!(p_i, conv, epsilon = 1e-6);
    }

    #[test]
    fn label_pmf_examples() {
        let tr = base();
        let t = 3.0;
        let (s, _, _) = label_probabilities(tr, t).unwrap();
        assert_relative_eq!(label_count_pmf(20, tr, t, 0, 0).unwrap(), s.powi(20), max_relative = 1e-12);
        let mut total = 0.0;
        let mut marginal = vec![0.0; 21];
        for ki in 0..=20 {
            for kr in 0..=(20 - ki) {
                let p = label_count_pmf(20, tr, t, ki, kr).unwrap();
                total += p;
                marginal[(ki + kr) as usize] += p;
            }
        }
        assert_relative_eq!(total, 1.0, epsilon = 1e-12);
        let bin = CountingLaw::binomial(20, 1.0 - s).unwrap();
        for (k, m) in marginal.iter().enumerate() {
            assert_relative_eq!(*m, bin.pmf(k as u64).unwrap(), epsilon = 1e-12);
        }
        assert!(label_count_pmf(20, tr, t, 15, 6).is_err());
    }

    #[test]
    fn simplex_indexing_is_dense() {
        let n = 7;
        let mut seen = vec![false; simplex_index(n, n, 0) + 1];
        for a in 0..=n {
            for b in 0..=(n - a) {
                let i = simplex_index(n, a, b);
                assert!(!seen[i]);
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|s| *s));
    }

    #[test]
    fn simulated_labels_match() {
        let tr = base();
        for &t in &[1.0, 3.0, 10.0] {
            let sim = simulate_labels(20, tr, t, 100_000, 2024).unwrap();
            assert!(sim.joint_fit.passed, "t={t}: {:?}", sim.joint_fit);
            assert!(sim.k_a_fit.passed, "t={t}: {:?}", sim.k_a_fit);
            let s = sim.probabilities.0;
            assert!(sim.k_a_mean.within(20.0 * (1.0 - s), 4.0));
            assert!(sim.k_a_var.within(20.0 * s * (1.0 - s), 4.0));
            assert!(sim.label_freq.1.within(sim.probabilities.1, 4.0));
        }
    }
}
