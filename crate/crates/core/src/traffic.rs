//! Particle traffic: each stone carries a world line `Y_i(t)` in a box. The
//! snapshot `N_t(A) = Σ 1_A(Y_i(t))` is again a stone-throwing measure with
//! spatial law `μ_t`, so counts in disjoint regions inherit the covariance
//! sign of the counting law. In birth/death mode each stone also has an
//! arrival time from `η` and an optional exponential lifetime.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::counting::{CountingLaw, CountingSampler};
use crate::error::{invalid, Error, Result};
use crate::rng::{self, Stream};
use crate::stats::{self, ChiSquareOutcome, Estimate, STDERR_MULTIPLIER};
use crate::stc::{self, IntervalSet, MeasureSpec, SpatialLaw};

pub type Position = [f64; 3];

/// Axis-aligned box in one to three dimensions. As a state space it is
/// closed; as a query region each axis is half-open `(lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoxSerde", into = "BoxSerde")]
pub struct BoxRegion {
    dim: usize,
    lo: Position,
    hi: Position,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxSerde {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl TryFrom<BoxSerde> for BoxRegion {
    type Error = Error;
    fn try_from(b: BoxSerde) -> Result<Self> {
        BoxRegion::new(&b.lo, &b.hi)
    }
}

impl From<BoxRegion> for BoxSerde {
    fn from(b: BoxRegion) -> Self {
        BoxSerde { lo: b.lo[..b.dim].to_vec(), hi: b.hi[..b.dim].to_vec() }
    }
}

impl BoxRegion {
    pub fn new(lo: &[f64], hi: &[f64]) -> Result<Self> {
        if lo.is_empty() || lo.len() > 3 || lo.len() != hi.len() {
            return Err(invalid("box", "lo and hi need the same length between 1 and 3"));
        }
        let mut b = BoxRegion { dim: lo.len(), lo: [0.0; 3], hi: [0.0; 3] };
        for k in 0..lo.len() {
            if !(lo[k].is_finite() && hi[k].is_finite() && lo[k] < hi[k]) {
                return Err(invalid("box", format!("axis {k}: [{}, {}] is not a proper interval", lo[k], hi[k])));
            }
            b.lo[k] = lo[k];
            b.hi[k] = hi[k];
        }
        Ok(b)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo[..self.dim]
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi[..self.dim]
    }

    fn width(&self, k: usize) -> f64 {
        self.hi[k] - self.lo[k]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim).map(|k| self.width(k)).product()
    }

    /// Half-open membership used for query regions.
    pub fn contains(&self, p: &Position) -> bool {
        (0..self.dim).all(|k| p[k] > self.lo[k] && p[k] <= self.hi[k])
    }

    fn contains_closed(&self, p: &Position) -> bool {
        (0..self.dim).all(|k| p[k] >= self.lo[k] && p[k] <= self.hi[k])
    }

    pub fn intersect(&self, other: &BoxRegion) -> Option<BoxRegion> {
        let dim = self.dim.min(other.dim);
        let mut out = BoxRegion { dim, lo: [0.0; 3], hi: [0.0; 3] };
        for k in 0..dim {
            out.lo[k] = self.lo[k].max(other.lo[k]);
            out.hi[k] = self.hi[k].min(other.hi[k]);
            if !(out.lo[k] < out.hi[k]) {
                return None;
            }
        }
        Some(out)
    }

    pub fn is_disjoint(&self, other: &BoxRegion) -> bool {
        self.intersect(other).is_none()
    }

    fn axis_overlap(&self, other: &BoxRegion, k: usize) -> f64 {
        (self.hi[k].min(other.hi[k]) - self.lo[k].max(other.lo[k])).max(0.0)
    }

    fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Position {
        let mut p = [0.0; 3];
        for k in 0..self.dim {
            p[k] = self.lo[k] + self.width(k) * rng.random::<f64>();
        }
        p
    }
}

/// Initial law `ν` of the stones inside the state box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialLaw {
    UniformBox,
    UniformSubBox { region: BoxRegion },
    /// Uniform on the planar annulus `r_min ≤ |(x, y) - center| ≤ r_max`,
    /// uniform in `z` when the box is three-dimensional.
    UniformAnnulus { center: [f64; 2], r_min: f64, r_max: f64 },
}

/// Motion kernel `Q` generating world lines from the initial point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MotionKernel {
    Stationary,
    /// Straight legs to uniform waypoints at speeds uniform on
    /// `[speed_min, speed_max]`.
    RandomWaypoint { speed_min: f64, speed_max: f64 },
    /// Rotation about `center` at angular speed uniform on
    /// `[omega_min, omega_max]`; radius and phase come from the start point.
    CircularOrbit { center: [f64; 2], omega_min: f64, omega_max: f64 },
    /// Brownian motion with per-axis scale `sigma`, reflected at the walls.
    ReflectedBrownian { sigma: f64 },
}

/// Arrival-time law `η`, normalized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Arrivals {
    /// Uniform on `[start, end]`.
    Window { start: f64, end: f64 },
    At { time: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficConfig {
    pub counting: CountingLaw,
    pub state_space: BoxRegion,
    pub initial: InitialLaw,
    pub motion: MotionKernel,
    pub arrivals: Option<Arrivals>,
    /// Exponential death rate; birth/death mode only.
    pub lifetime_rate: Option<f64>,
    pub query_time: f64,
}

impl TrafficConfig {
    /// Immortal particles started from `ν` at time 0.
    pub fn immortal(
        counting: CountingLaw,
        state_space: BoxRegion,
        initial: InitialLaw,
        motion: MotionKernel,
        query_time: f64,
    ) -> Result<Self> {
        let c = Self { counting, state_space, initial, motion, arrivals: None, lifetime_rate: None, query_time };
        c.validate()?;
        Ok(c)
    }

    pub fn birth_death(mut self, arrivals: Arrivals, lifetime_rate: Option<f64>) -> Result<Self> {
        self.arrivals = Some(arrivals);
        self.lifetime_rate = lifetime_rate;
        self.validate()?;
        Ok(self)
    }

    pub fn at_time(&self, t: f64) -> Result<Self> {
        let mut c = self.clone();
        c.query_time = t;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.counting.validate()?;
        let e = &self.state_space;
        if !(self.query_time >= 0.0) || !self.query_time.is_finite() {
            return Err(invalid("query_time", "must be a non-negative time"));
        }
        match &self.initial {
            InitialLaw::UniformBox => {}
            InitialLaw::UniformSubBox { region } => {
                if region.dim != e.dim || !(0..e.dim).all(|k| region.lo[k] >= e.lo[k] && region.hi[k] <= e.hi[k]) {
                    return Err(invalid("initial", "sub-box must lie inside the state space"));
                }
            }
            InitialLaw::UniformAnnulus { center, r_min, r_max } => {
                if e.dim < 2 {
                    return Err(invalid("initial", "an annulus needs at least two dimensions"));
                }
                if !(*r_min >= 0.0 && r_max > r_min) {
                    return Err(invalid("initial", "need 0 <= r_min < r_max"));
                }
                if !circle_fits(e, center, *r_max) {
                    return Err(invalid("initial", "annulus leaves the state space"));
                }
            }
        }
        match &self.motion {
            MotionKernel::Stationary => {}
            MotionKernel::RandomWaypoint { speed_min, speed_max } => {
                if !(*speed_min > 0.0 && speed_max >= speed_min && speed_max.is_finite()) {
                    return Err(invalid("motion", "need 0 < speed_min <= speed_max"));
                }
            }
            MotionKernel::CircularOrbit { center, omega_min, omega_max } => {
                if !(omega_max >= omega_min && omega_min.is_finite() && omega_max.is_finite()) {
                    return Err(invalid("motion", "need omega_min <= omega_max"));
                }
                match &self.initial {
                    InitialLaw::UniformAnnulus { center: c, r_max, .. } if c == center && circle_fits(e, center, *r_max) => {}
                    _ => return Err(invalid("motion", "orbits need an annulus initial law with the same center")),
                }
            }
            MotionKernel::ReflectedBrownian { sigma } => {
                if !(*sigma > 0.0) || !sigma.is_finite() {
                    return Err(invalid("motion", "sigma must be positive"));
                }
            }
        }
        match (&self.arrivals, self.lifetime_rate) {
            (None, Some(_)) => return Err(invalid("lifetime_rate", "lifetimes need an arrival law")),
            (Some(Arrivals::Window { start, end }), _) if !(start < end && start.is_finite() && end.is_finite()) => {
                return Err(invalid("arrivals", "window needs start < end"))
            }
            (Some(Arrivals::At { time }), _) if !time.is_finite() => return Err(invalid("arrivals", "time must be finite")),
            _ => {}
        }
        if let Some(rate) = self.lifetime_rate {
            if !(rate > 0.0) || !rate.is_finite() {
                return Err(invalid("lifetime_rate", "must be positive"));
            }
        }
        Ok(())
    }

    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> Position {
        let e = &self.state_space;
        match &self.initial {
            InitialLaw::UniformBox => e.sample_uniform(rng),
            InitialLaw::UniformSubBox { region } => region.sample_uniform(rng),
            InitialLaw::UniformAnnulus { center, r_min, r_max } => {
                let u: f64 = rng.random();
                let r = (r_min * r_min + u * (r_max * r_max - r_min * r_min)).sqrt();
                let phi = std::f64::consts::TAU * rng.random::<f64>();
                let mut p = [center[0] + r * phi.cos(), center[1] + r * phi.sin(), 0.0];
                if e.dim == 3 {
                    p[2] = e.lo[2] + e.width(2) * rng.random::<f64>();
                }
                p
            }
        }
    }

    fn move_for<R: Rng + ?Sized>(&self, start: Position, age: f64, rng: &mut R) -> Position {
        if age <= 0.0 {
            return start;
        }
        let e = &self.state_space;
        match &self.motion {
            MotionKernel::Stationary => start,
            MotionKernel::RandomWaypoint { speed_min, speed_max } => {
                let mut pos = start;
                let mut left = age;
                while left > 0.0 {
                    let target = e.sample_uniform(rng);
                    let speed = speed_min + (speed_max - speed_min) * rng.random::<f64>();
                    let dist = (0..e.dim).map(|k| (target[k] - pos[k]).powi(2)).sum::<f64>().sqrt();
                    let leg = dist / speed;
                    if leg <= left {
                        pos = target;
                        left -= leg;
                    } else {
                        let w = left / leg;
                        for k in 0..e.dim {
                            pos[k] += (target[k] - pos[k]) * w;
                        }
                        left = 0.0;
                    }
                }
                pos
            }
            MotionKernel::CircularOrbit { center, omega_min, omega_max } => {
                let omega = omega_min + (omega_max - omega_min) * rng.random::<f64>();
                let (dx, dy) = (start[0] - center[0], start[1] - center[1]);
                let (s, c) = (omega * age).sin_cos();
                [center[0] + dx * c - dy * s, center[1] + dx * s + dy * c, start[2]]
            }
            MotionKernel::ReflectedBrownian { sigma } => {
                let scale = sigma * age.sqrt();
                let mut p = start;
                for k in 0..e.dim {
                    let z: f64 = rng.sample(StandardNormal);
                    p[k] = reflect(start[k] + scale * z, e.lo[k], e.hi[k]);
                }
                p
            }
        }
    }

    /// Position at the query time of one stone, `None` for the cemetery or
    /// a stone that has not yet arrived.
    fn sample_stone<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<Position> {
        let t = self.query_time;
        let x = self.sample_initial(rng);
        let age = match self.arrivals {
            None => t,
            Some(arr) => {
                let birth = match arr {
                    Arrivals::Window { start, end } => start + (end - start) * rng.random::<f64>(),
                    Arrivals::At { time } => time,
                };
                if birth > t {
                    return None;
                }
                let age = t - birth;
                if let Some(rate) = self.lifetime_rate {
                    let life: f64 = Exp::new(rate).expect("validated rate").sample(rng);
                    if life <= age {
                        return None;
                    }
                }
                age
            }
        };
        let y = self.move_for(x, age, rng);
        debug_assert!(self.state_space.contains_closed(&y), "world line left the state space");
        Some(y)
    }
}

fn circle_fits(e: &BoxRegion, center: &[f64; 2], r: f64) -> bool {
    center[0] - r >= e.lo[0] && center[0] + r <= e.hi[0] && center[1] - r >= e.lo[1] && center[1] + r <= e.hi[1]
}

/// Folds `x` into `[lo, hi]` by mirror reflection.
fn reflect(x: f64, lo: f64, hi: f64) -> f64 {
    let w = hi - lo;
    let y = (x - lo).rem_euclid(2.0 * w);
    lo + if y > w { 2.0 * w - y } else { y }
}

/// Survivors at the query time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub time: f64,
    pub survivors: Vec<Position>,
    pub count: usize,
}

impl Snapshot {
    pub fn count_in(&self, region: &BoxRegion) -> u64 {
        self.survivors.iter().filter(|p| region.contains(p)).count() as u64
    }
}

struct SnapshotSampler<'a> {
    config: &'a TrafficConfig,
    counting: CountingSampler,
}

impl SnapshotSampler<'_> {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Snapshot {
        let k = self.counting.sample(rng);
        let survivors: Vec<Position> = (0..k).filter_map(|_| self.config.sample_stone(rng)).collect();
        Snapshot { time: self.config.query_time, count: survivors.len(), survivors }
    }
}

fn snapshot_sampler(config: &TrafficConfig) -> Result<SnapshotSampler<'_>> {
    config.validate()?;
    Ok(SnapshotSampler { config, counting: config.counting.sampler()? })
}

pub fn simulate_snapshot<R: Rng + ?Sized>(config: &TrafficConfig, rng: &mut R) -> Result<Snapshot> {
    Ok(snapshot_sampler(config)?.sample(rng))
}

/// `n_rep` independent snapshots on the replicate streams of `seed`.
pub fn simulate_snapshots(config: &TrafficConfig, n_rep: usize, seed: u64) -> Result<Vec<Snapshot>> {
    let sampler = snapshot_sampler(config)?;
    Ok(rng::replicate_map(seed, n_rep, |_, rng: &mut Stream| sampler.sample(rng)))
}

/// CSV dump with columns `replicate,time,x,y,z`.
pub fn write_snapshots_csv<W: Write>(mut out: W, snapshots: &[Snapshot]) -> Result<()> {
    writeln!(out, "replicate,time,x,y,z")?;
    for (i, snap) in snapshots.iter().enumerate() {
        for p in &snap.survivors {
            writeln!(out, "{i},{},{},{},{}", snap.time, p[0], p[1], p[2])?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MassMethod {
    Analytic,
    MonteCarlo,
}

/// `μ_t(A)`: probability that one stone is alive and in `A` at the query
/// time, so that `E N_t(A) = c μ_t(A)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanMeasure {
    pub value: f64,
    pub stderr: f64,
    pub method: MassMethod,
}

/// Samples used by the Monte Carlo fallback of [`mean_measure`].
pub const MEAN_MEASURE_SAMPLES: usize = 200_000;
const MEAN_MEASURE_SEED: u64 = 0x6d75;

pub fn mean_measure(config: &TrafficConfig, region: &BoxRegion) -> Result<MeanMeasure> {
    mean_measure_with(config, region, MEAN_MEASURE_SAMPLES, MEAN_MEASURE_SEED)
}

pub fn mean_measure_with(config: &TrafficConfig, region: &BoxRegion, mc_samples: usize, seed: u64) -> Result<MeanMeasure> {
    config.validate()?;
    if region.dim != config.state_space.dim {
        return Err(invalid("region", "dimension differs from the state space"));
    }
    if let Some(value) = analytic_mean_measure(config, region) {
        return Ok(MeanMeasure { value, stderr: 0.0, method: MassMethod::Analytic });
    }
    if mc_samples < 2 {
        return Err(invalid("mc_samples", "at least two samples are required"));
    }
    log::info!("mean measure for {:?} has no closed form; using {mc_samples} Monte Carlo samples", config.motion);
    let hits = rng::replicate_map(seed, mc_samples, |_, rng: &mut Stream| match config.sample_stone(rng) {
        Some(p) if region.contains(&p) => 1.0,
        _ => 0.0,
    });
    let est = stats::mean(&hits);
    Ok(MeanMeasure { value: est.estimate, stderr: est.stderr, method: MassMethod::MonteCarlo })
}

fn analytic_mean_measure(config: &TrafficConfig, region: &BoxRegion) -> Option<f64> {
    let t = config.query_time;
    let survival = |age: f64| config.lifetime_rate.map_or(1.0, |rate| (-rate * age).exp());
    let stationary = initial_is_stationary(config);
    match config.arrivals {
        None => image_mass(config, region, t),
        Some(Arrivals::At { time }) => {
            if time > t {
                Some(0.0)
            } else {
                Some(survival(t - time) * image_mass(config, region, t - time)?)
            }
        }
        Some(Arrivals::Window { start, end }) => {
            let top = end.min(t);
            if top <= start {
                return Some(0.0);
            }
            let len = end - start;
            if stationary {
                // ∫_start^top e^{-λ(t-s)} ds / (end - start)
                let frac = match config.lifetime_rate {
                    None => (top - start) / len,
                    Some(rate) => ((-rate * (t - top)).exp() - (-rate * (t - start)).exp()) / (rate * len),
                };
                return Some(frac * image_mass(config, region, 0.0)?);
            }
            image_mass(config, region, 1.0)?;
            let value = quadrature::integrate(
                |s| survival(t - s) * image_mass(config, region, t - s).unwrap_or(0.0),
                start,
                top,
                1e-12,
            )
            .integral
                / len;
            Some(value)
        }
    }
}

/// Kernels for which `ν P_t = ν`.
fn initial_is_stationary(config: &TrafficConfig) -> bool {
    matches!(
        (&config.motion, &config.initial),
        (MotionKernel::Stationary, _)
            | (MotionKernel::ReflectedBrownian { .. }, InitialLaw::UniformBox)
            | (MotionKernel::CircularOrbit { .. }, InitialLaw::UniformAnnulus { .. })
    )
}

/// `ν P_age (A)` when a closed form is available.
fn image_mass(config: &TrafficConfig, region: &BoxRegion, age: f64) -> Option<f64> {
    if age <= 0.0 || initial_is_stationary(config) {
        return Some(initial_mass(config, region));
    }
    match (&config.motion, &config.initial) {
        (MotionKernel::ReflectedBrownian { sigma }, InitialLaw::UniformSubBox { region: start }) => {
            let e = &config.state_space;
            let s = sigma * age.sqrt();
            Some(
                (0..e.dim)
                    .map(|k| reflected_uniform_mass(start.lo[k], start.hi[k], region.lo[k], region.hi[k], e.lo[k], e.hi[k], s))
                    .product(),
            )
        }
        _ => None,
    }
}

/// `ν(A)`.
fn initial_mass(config: &TrafficConfig, region: &BoxRegion) -> f64 {
    let e = &config.state_space;
    match &config.initial {
        InitialLaw::UniformBox => (0..e.dim).map(|k| e.axis_overlap(region, k) / e.width(k)).product(),
        InitialLaw::UniformSubBox { region: sub } => {
            (0..e.dim).map(|k| sub.axis_overlap(region, k) / sub.width(k)).product()
        }
        InitialLaw::UniformAnnulus { center, r_min, r_max } => {
            let (x0, x1, y0, y1) = (region.lo[0], region.hi[0], region.lo[1], region.hi[1]);
            let area = disk_rect_area(center, *r_max, x0, x1, y0, y1) - disk_rect_area(center, *r_min, x0, x1, y0, y1);
            let planar = area / (std::f64::consts::PI * (r_max * r_max - r_min * r_min));
            let z = if e.dim == 3 { e.axis_overlap(region, 2) / e.width(2) } else { 1.0 };
            planar.clamp(0.0, 1.0) * z
        }
    }
}

/// Area of the disk of radius `r` about `c` inside `[x0, x1] × [y0, y1]`.
fn disk_rect_area(c: &[f64; 2], r: f64, x0: f64, x1: f64, y0: f64, y1: f64) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    let (a, b) = (x0.max(c[0] - r), x1.min(c[0] + r));
    if a >= b {
        return 0.0;
    }
    let chord = |x: f64| {
        let h = (r * r - (x - c[0]).powi(2)).max(0.0).sqrt();
        ((c[1] + h).min(y1) - (c[1] - h).max(y0)).max(0.0)
    };
    let mut nodes = vec![a, b];
    for yb in [y0, y1] {
        let d = yb - c[1];
        if d.abs() < r {
            let w = (r * r - d * d).sqrt();
            nodes.extend([c[0] - w, c[0] + w]);
        }
    }
    nodes.retain(|x| *x >= a && *x <= b);
    nodes.sort_by(f64::total_cmp);
    nodes.dedup();
    nodes.windows(2).map(|w| quadrature::integrate(chord, w[0], w[1], 1e-13).integral).sum()
}

fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Antiderivative of the standard normal cdf.
fn norm_cdf_integral(z: f64) -> f64 {
    z * norm_cdf(z) + (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `P(fold(X + sZ) ∈ (a, b])` for `X` uniform on `[u0, u1]`, reflected on
/// `[lo, hi]`, by summing over the images of `(a, b]`.
fn reflected_uniform_mass(u0: f64, u1: f64, a: f64, b: f64, lo: f64, hi: f64, s: f64) -> f64 {
    let (a, b) = (a.max(lo), b.min(hi));
    if a >= b {
        return 0.0;
    }
    let w = hi - lo;
    // ∫_{u0}^{u1} P(x + sZ ∈ (c, d]) dx / (u1 - u0)
    let band = |c: f64, d: f64| {
        let upper = s * (norm_cdf_integral((d - u0) / s) - norm_cdf_integral((d - u1) / s));
        let lower = s * (norm_cdf_integral((c - u0) / s) - norm_cdf_integral((c - u1) / s));
        (upper - lower) / (u1 - u0)
    };
    let reach = ((u1 - u0) + w + 12.0 * s) / (2.0 * w);
    let kmax = reach.ceil() as i64 + 1;
    let mut total = 0.0;
    for k in -kmax..=kmax {
        let shift = 2.0 * k as f64 * w;
        total += band(a + shift, b + shift);
        total += band(2.0 * lo - b + shift, 2.0 * lo - a + shift);
    }
    total.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceSign {
    Negative,
    Zero,
    Positive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovarianceExperiment {
    pub cov: Estimate,
    pub verdict: CovarianceSign,
    /// `(δ² - c) μ_t(A) μ_t(B)`.
    pub analytic: f64,
    /// `μ_t(A)/μ_t(E)` and `μ_t(B)/μ_t(E)`.
    pub normalized_masses: (f64, f64),
    pub mass_method: MassMethod,
    /// Empirical covariance within four standard errors of `analytic`.
    pub agrees: bool,
}

/// Empirical covariance of `(N_t(A), N_t(B))` for disjoint regions.
pub fn covariance_sign_experiment(
    config: &TrafficConfig,
    a: &BoxRegion,
    b: &BoxRegion,
    n_rep: usize,
    seed: u64,
) -> Result<CovarianceExperiment> {
    if !a.is_disjoint(b) {
        return Err(Error::NotDisjoint);
    }
    if n_rep < 10_000 {
        return Err(invalid("n_rep", "covariance experiments need at least 10^4 replicates"));
    }
    let sampler = snapshot_sampler(config)?;
    let pairs = rng::replicate_map(seed, n_rep, |_, rng: &mut Stream| {
        let snap = sampler.sample(rng);
        (snap.count_in(a) as f64, snap.count_in(b) as f64)
    });
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let cov = stats::covariance(&xs, &ys);
    let verdict = if cov.estimate.abs() <= STDERR_MULTIPLIER * cov.stderr {
        CovarianceSign::Zero
    } else if cov.estimate > 0.0 {
        CovarianceSign::Positive
    } else {
        CovarianceSign::Negative
    };

    let ma = mean_measure(config, a)?;
    let mb = mean_measure(config, b)?;
    let total = mean_measure(config, &config.state_space)?;
    // the same formula through the one-dimensional construction
    let unit = MeasureSpec::new(config.counting.clone(), SpatialLaw::uniform(0.0, 1.0)?)?;
    let analytic = stc::pair_covariance_analytic(
        &unit,
        &IntervalSet::interval(0.0, ma.value)?,
        &IntervalSet::interval(ma.value, (ma.value + mb.value).min(1.0))?,
    )?;
    let method = if ma.method == MassMethod::Analytic && mb.method == MassMethod::Analytic {
        MassMethod::Analytic
    } else {
        MassMethod::MonteCarlo
    };
    let normalized = if total.value > 0.0 { (ma.value / total.value, mb.value / total.value) } else { (0.0, 0.0) };
    Ok(CovarianceExperiment {
        agrees: cov.within(analytic, STDERR_MULTIPLIER),
        cov,
        verdict,
        analytic,
        normalized_masses: normalized,
        mass_method: method,
    })
}

/// Law of `N_t(A)`: the counting law thinned by `μ_t(A)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RestrictedTraffic {
    /// `μ_t(A)/μ_t(E)`.
    pub normalized_mass: f64,
    /// Law of the number of live stones `N_t(E)`.
    pub total_law: CountingLaw,
    /// `thin_map(total_law, normalized_mass)`.
    pub law: CountingLaw,
    pub region: BoxRegion,
    pub mass_method: MassMethod,
}

pub fn restrict_traffic(config: &TrafficConfig, region: &BoxRegion) -> Result<RestrictedTraffic> {
    if !config.counting.is_pt() {
        return Err(Error::UnsupportedFamily(format!("cannot restrict {}", config.counting.name())));
    }
    let m = mean_measure(config, region)?;
    let total = mean_measure(config, &config.state_space)?;
    if !(m.value > 0.0) || !(total.value > 0.0) {
        return Err(Error::NullRestriction);
    }
    let total_law = config.counting.thin_map(total.value.min(1.0))?;
    let normalized = (m.value / total.value).min(1.0);
    Ok(RestrictedTraffic {
        law: total_law.thin_map(normalized)?,
        total_law,
        normalized_mass: normalized,
        region: region.clone(),
        mass_method: if m.method == MassMethod::Analytic && total.method == MassMethod::Analytic {
            MassMethod::Analytic
        } else {
            MassMethod::MonteCarlo
        },
    })
}

/// Chi-square fit of simulated `N_t(A)` against the restricted law.
pub fn restriction_fit(config: &TrafficConfig, region: &BoxRegion, n_rep: usize, seed: u64) -> Result<(RestrictedTraffic, ChiSquareOutcome)> {
    let restricted = restrict_traffic(config, region)?;
    if n_rep < 2 {
        return Err(invalid("n_rep", "at least two replicates are required"));
    }
    let sampler = snapshot_sampler(config)?;
    let counts = rng::replicate_map(seed, n_rep, |_, rng: &mut Stream| sampler.sample(rng).count_in(region));
    let fit = stats::chi_square_gof(&stats::histogram(counts), &restricted.law.pmf_table()?);
    Ok((restricted, fit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_square() -> BoxRegion {
        BoxRegion::new(&[0.0, 0.0], &[1.0, 1.0]).unwrap()
    }

    fn left_right() -> (BoxRegion, BoxRegion) {
        (
            BoxRegion::new(&[0.0, 0.0], &[0.5, 1.0]).unwrap(),
            BoxRegion::new(&[0.5, 0.0], &[1.0, 1.0]).unwrap(),
        )
    }

    fn brownian(law: CountingLaw, t: f64) -> TrafficConfig {
        TrafficConfig::immortal(law, unit_square(), InitialLaw::UniformBox, MotionKernel::ReflectedBrownian { sigma: 0.3 }, t)
            .unwrap()
    }

    #[test]
    fn reflect_folds_into_box() {
        assert_relative_eq!(reflect(1.2, 0.0, 1.0), 0.8, epsilon = 1e-15);
        assert_relative_eq!(reflect(-0.3, 0.0, 1.0), 0.3, epsilon = 1e-15);
        assert_relative_eq!(reflect(2.4, 0.0, 1.0), 0.4, epsilon = 1e-14);
    }

    #[test]
    fn snapshot_at_time_zero_is_the_initial_law() {
        let sub = BoxRegion::new(&[0.2, 0.2], &[0.4, 0.9]).unwrap();
        let cfg = TrafficConfig::immortal(
            CountingLaw::poisson(5.0).unwrap(),
            unit_square(),
            InitialLaw::UniformSubBox { region: sub.clone() },
            MotionKernel::RandomWaypoint { speed_min: 0.5, speed_max: 1.0 },
            0.0,
        )
        .unwrap();
        let snaps = simulate_snapshots(&cfg, 20_000, 3).unwrap();
        assert!(snaps.iter().all(|s| s.count == s.survivors.len() && s.count_in(&sub) as usize == s.count));
        let fit = stats::chi_square_gof(
            &stats::histogram(snaps.iter().map(|s| s.count as u64)),
            &cfg.counting.pmf_table().unwrap(),
        );
        assert!(fit.passed, "{fit:?}");
        assert_eq!(mean_measure(&cfg, &sub).unwrap().value, 1.0);
    }

    #[test]
    fn orbits_keep_their_radius() {
        let center = [0.5, 0.5];
        let cfg = TrafficConfig::immortal(
            CountingLaw::poisson(8.0).unwrap(),
            unit_square(),
            InitialLaw::UniformAnnulus { center, r_min: 0.1, r_max: 0.4 },
            MotionKernel::CircularOrbit { center, omega_min: 0.5, omega_max: 2.0 },
            0.0,
        )
        .unwrap();
        let mut g = rng::stream(9, 0);
        for _ in 0..2000 {
            let x = cfg.sample_initial(&mut g);
            let rx = ((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2)).sqrt();
            for t in [0.3, 3.7, 40.0] {
                let y = cfg.move_for(x, t, &mut g);
                let ry = ((y[0] - 0.5).powi(2) + (y[1] - 0.5).powi(2)).sqrt();
                assert_relative_eq!(rx, ry, epsilon = 1e-12);
            }
        }
        let snap = simulate_snapshot(&cfg.at_time(3.7).unwrap(), &mut g).unwrap();
        for q in &snap.survivors {
            let r = ((q[0] - 0.5).powi(2) + (q[1] - 0.5).powi(2)).sqrt();
            assert!((0.1 - 1e-12..=0.4 + 1e-12).contains(&r));
        }
        let bad = TrafficConfig::immortal(
            CountingLaw::poisson(8.0).unwrap(),
            unit_square(),
            InitialLaw::UniformBox,
            MotionKernel::CircularOrbit { center, omega_min: 0.5, omega_max: 2.0 },
            0.0,
        );
        assert!(bad.is_err());
    }

    #[test]
    fn annulus_area_fraction() {
        let center = [0.5, 0.5];
        let cfg = TrafficConfig::immortal(
            CountingLaw::poisson(8.0).unwrap(),
            unit_square(),
            InitialLaw::UniformAnnulus { center, r_min: 0.1, r_max: 0.4 },
            MotionKernel::CircularOrbit { center, omega_min: 0.5, omega_max: 2.0 },
            2.0,
        )
        .unwrap();
        let (l, r) = left_right();
        assert_relative_eq!(mean_measure(&cfg, &l).unwrap().value, 0.5, epsilon = 1e-12);
        assert_relative_eq!(mean_measure(&cfg, &r).unwrap().value, 0.5, epsilon = 1e-12);
        // quadrant: a quarter of the annulus
        let q = BoxRegion::new(&[0.5, 0.5], &[1.0, 1.0]).unwrap();
        assert_relative_eq!(mean_measure(&cfg, &q).unwrap().value, 0.25, epsilon = 1e-12);
        // a strip (0.5, 0.7] x (0.5, 0.6]: compare with a fine midpoint grid
        let strip = BoxRegion::new(&[0.5, 0.5], &[0.7, 0.6]).unwrap();
        let m = 2000;
        let mut hits = 0.0;
        for i in 0..m {
            for j in 0..m {
                let x = 0.5 + 0.2 * (i as f64 + 0.5) / m as f64;
                let y = 0.5 + 0.1 * (j as f64 + 0.5) / m as f64;
                let rr = ((x - 0.5).powi(2) + (y - 0.5).powi(2)).sqrt();
                if (0.1..=0.4).contains(&rr) {
                    hits += 1.0;
                }
            }
        }
        let grid_area = hits * 0.02 / (m * m) as f64;
        let exact = mean_measure(&cfg, &strip).unwrap().value * std::f64::consts::PI * (0.16 - 0.01);
        assert_relative_eq!(exact, grid_area, epsilon = 2e-5);
    }

    #[test]
    fn mean_measure_examples() {
        let cfg = brownian(CountingLaw::poisson(3.0).unwrap(), 2.0);
        assert_eq!(mean_measure(&cfg, &unit_square()).unwrap().value, 1.0);
        let born = cfg.clone().birth_death(Arrivals::At { time: 1.0 }, Some(1.0)).unwrap();
        assert_relative_eq!(mean_measure(&born, &unit_square()).unwrap().value, (-1.0f64).exp(), epsilon = 1e-15);
        let late = cfg.clone().birth_death(Arrivals::Window { start: 3.0, end: 5.0 }, None).unwrap();
        assert_eq!(mean_measure(&late, &unit_square()).unwrap().value, 0.0);
        let snaps = simulate_snapshots(&late, 100, 1).unwrap();
        assert!(snaps.iter().all(|s| s.count == 0));
    }

    #[test]
    fn reflected_brownian_image_mass() {
        let sub = BoxRegion::new(&[0.0, 0.0], &[0.25, 0.5]).unwrap();
        let cfg = TrafficConfig::immortal(
            CountingLaw::poisson(3.0).unwrap(),
            unit_square(),
            InitialLaw::UniformSubBox { region: sub.clone() },
            MotionKernel::ReflectedBrownian { sigma: 0.4 },
            0.0,
        )
        .unwrap();
        let q = BoxRegion::new(&[0.5, 0.25], &[1.0, 0.75]).unwrap();
        assert_eq!(mean_measure(&cfg, &q).unwrap().value, 0.0);
        let later = cfg.at_time(0.7).unwrap();
        let analytic = mean_measure(&later, &q).unwrap();
        assert_eq!(analytic.method, MassMethod::Analytic);
        let hits = rng::replicate_map(77, 400_000, |_, r: &mut Stream| {
            if q.contains(&later.sample_stone(r).unwrap()) {
                1.0
            } else {
                0.0
            }
        });
        let est = stats::mean(&hits);
        assert!(est.within(analytic.value, 4.0), "{est:?} vs {}", analytic.value);
        // long times approach the uniform law
        let mixed = mean_measure(&cfg.at_time(50.0).unwrap(), &q).unwrap().value;
        assert_relative_eq!(mixed, 0.25, epsilon = 1e-9);
        assert_relative_eq!(mean_measure(&cfg.at_time(0.9).unwrap(), &unit_square()).unwrap().value, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn random_waypoint_uses_monte_carlo() {
        let cfg = TrafficConfig::immortal(
            CountingLaw::poisson(3.0).unwrap(),
            unit_square(),
            InitialLaw::UniformBox,
            MotionKernel::RandomWaypoint { speed_min: 0.2, speed_max: 0.6 },
            1.5,
        )
        .unwrap();
        let (l, _) = left_right();
        let m = mean_measure(&cfg, &l).unwrap();
        assert_eq!(m.method, MassMethod::MonteCarlo);
        // left-right symmetry of the box
        assert!(m.stderr > 0.0 && (m.value - 0.5).abs() <= 4.0 * m.stderr);
        let all = mean_measure(&cfg, &unit_square()).unwrap();
        assert_relative_eq!(all.value, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn covariance_signs() {
        let (l, r) = left_right();
        let cases = [
            (CountingLaw::poisson(10.0).unwrap(), CovarianceSign::Zero),
            (CountingLaw::binomial(20, 0.5).unwrap(), CovarianceSign::Negative),
            (CountingLaw::negative_binomial(2.0, 0.5).unwrap(), CovarianceSign::Positive),
        ];
        for (law, sign) in cases {
            let cfg = brownian(law.clone(), 1.0);
            let exp = covariance_sign_experiment(&cfg, &l, &r, 50_000, 11).unwrap();
            assert_eq!(exp.verdict, sign, "{law:?}: {exp:?}");
            assert!(exp.agrees, "{law:?}: {exp:?}");
        }
        let cfg = brownian(CountingLaw::poisson(1.0).unwrap(), 1.0);
        assert_eq!(covariance_sign_experiment(&cfg, &l, &unit_square(), 50_000, 1).unwrap_err(), Error::NotDisjoint);
        assert!(covariance_sign_experiment(&cfg, &l, &r, 100, 1).is_err());
    }

    #[test]
    fn birth_death_mean_count() {
        let rate = 0.5;
        let cfg = brownian(CountingLaw::negative_binomial(3.0, 0.6).unwrap(), 4.0)
            .birth_death(Arrivals::Window { start: 0.0, end: 6.0 }, Some(rate))
            .unwrap();
        // arrived by t = 4 and still alive: ∫_0^4 e^{-λ(4-s)} ds / 6
        let frac = (1.0 - (-rate * 4.0f64).exp()) / (rate * 6.0);
        let m = mean_measure(&cfg, &unit_square()).unwrap();
        assert_relative_eq!(m.value, frac, epsilon = 1e-14);
        let counts: Vec<f64> = simulate_snapshots(&cfg, 100_000, 4).unwrap().iter().map(|s| s.count as f64).collect();
        let c = cfg.counting.moments().unwrap().0;
        assert!(stats::mean(&counts).within(c * frac, 4.0));
    }

    #[test]
    fn birth_death_non_stationary_quadrature() {
        let sub = BoxRegion::new(&[0.0, 0.0], &[0.3, 1.0]).unwrap();
        let cfg = TrafficConfig::immortal(
            CountingLaw::poisson(6.0).unwrap(),
            unit_square(),
            InitialLaw::UniformSubBox { region: sub },
            MotionKernel::ReflectedBrownian { sigma: 0.5 },
            2.0,
        )
        .unwrap()
        .birth_death(Arrivals::Window { start: 0.0, end: 3.0 }, Some(0.3))
        .unwrap();
        let (_, r) = left_right();
        let m = mean_measure(&cfg, &r).unwrap();
        assert_eq!(m.method, MassMethod::Analytic);
        let hits = rng::replicate_map(8, 400_000, |_, g: &mut Stream| match cfg.sample_stone(g) {
            Some(p) if r.contains(&p) => 1.0,
            _ => 0.0,
        });
        assert!(stats::mean(&hits).within(m.value, 4.0));
    }

    #[test]
    fn restriction_examples() {
        let (l, _) = left_right();
        let whole = restrict_traffic(&brownian(CountingLaw::poisson(10.0).unwrap(), 1.0), &unit_square()).unwrap();
        assert_eq!(whole.law, CountingLaw::poisson(10.0).unwrap());
        let strip = BoxRegion::new(&[0.0, 0.0], &[0.3, 1.0]).unwrap();
        let (res, fit) = restriction_fit(&brownian(CountingLaw::poisson(10.0).unwrap(), 1.0), &strip, 20_000, 2).unwrap();
        assert_relative_eq!(res.law.theta(), 3.0, epsilon = 1e-12);
        assert!(fit.passed, "{fit:?}");
        let (res, fit) = restriction_fit(&brownian(CountingLaw::binomial(10, 0.4).unwrap(), 1.0), &l, 20_000, 2).unwrap();
        assert_relative_eq!(res.law.theta(), 0.2, epsilon = 1e-12);
        assert!(fit.passed, "{fit:?}");
        let empty = BoxRegion::new(&[2.0, 2.0], &[3.0, 3.0]).unwrap();
        assert_eq!(restrict_traffic(&brownian(CountingLaw::poisson(1.0).unwrap(), 1.0), &empty).unwrap_err(), Error::NullRestriction);
    }

    #[test]
    fn csv_dump() {
        let cfg = brownian(CountingLaw::binomial(3, 0.9).unwrap(), 0.5);
        let snaps = simulate_snapshots(&cfg, 4, 0).unwrap();
        let mut buf = Vec::new();
        write_snapshots_csv(&mut buf, &snaps).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "replicate,time,x,y,z");
        assert_eq!(lines.len(), 1 + snaps.iter().map(|s| s.count).sum::<usize>());
    }
}
