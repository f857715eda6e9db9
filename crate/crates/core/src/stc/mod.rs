//! Stone-throwing construction: a random counting measure `N = (κ, ν)` is
//! realized by drawing `K ~ κ` and then `K` iid locations from `ν`, so that
//! `N(A) = Σ_{i ≤ K} 1_A(X_i)`. Points may carry marks drawn from kernels
//! `Q(x, ·)`, giving a measure on the product space.
//!
//! Analytic companions (`laplace_analytic`, `moments_analytic`,
//! `pair_covariance_analytic`, `joint_pmf`) give the quantities the
//! Monte Carlo routines are checked against.

mod interval;
mod mark;
mod spatial;

use std::cell::RefCell;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use statrs::function::gamma::ln_gamma;

pub use interval::IntervalSet;
pub use mark::{integrate_unit, Defective, Mark, MarkKernel, PointRef, SamplerKernel, ShiftedExponential};
pub use spatial::{DensityTable, DiscreteLaw, SpatialLaw, DEFAULT_QUAD_CELLS};

use crate::counting::{CountingLaw, CountingSampler};
use crate::error::{invalid, Error, Result};
use crate::rng::{self, Stream};
use crate::stats::{self, Estimate};

/// A random measure `(κ, ν)` with an ordered list of mark kernels.
#[derive(Debug, Clone)]
pub struct MeasureSpec {
    pub counting: CountingLaw,
    pub spatial: SpatialLaw,
    pub marks: Vec<Arc<dyn MarkKernel>>,
}

impl MeasureSpec {
    pub fn new(counting: CountingLaw, spatial: SpatialLaw) -> Result<Self> {
        counting.validate()?;
        Ok(Self { counting, spatial, marks: Vec::new() })
    }

    pub fn n_marks(&self) -> usize {
        self.marks.len()
    }

    /// Appends a mark kernel; later kernels see the marks drawn before them.
    pub fn mark(&self, kernel: Arc<dyn MarkKernel>) -> MeasureSpec {
        let mut spec = self.clone();
        spec.marks.push(kernel);
        spec
    }

    pub fn sampler(&self) -> Result<PatternSampler<'_>> {
        Ok(PatternSampler { spec: self, counting: self.counting.sampler()? })
    }

    /// `∫ (ν × Q_1 × ... × Q_m)(dx, dy) φ(x, y)`, using the kernels'
    /// integrators for the marks. `φ` is taken as 0 on cemetery tuples.
    pub fn mean_functional(&self, phi: &TestFn) -> Result<f64> {
        self.mean_functional_inner(phi, false)
    }

    fn mean_functional_inner(&self, phi: &TestFn, strict: bool) -> Result<f64> {
        if let Some(i) = (0..self.marks.len()).find(|&i| {
            self.marks[i].expect(PointRef { location: 0.0, marks: &vec![Mark::Value(0.0); i] }, &|_| 0.0, &[]).is_none()
        }) {
            return Err(Error::AnalyticUnavailable(format!("mark kernel {i} ({:?}) has no integrator", self.marks[i])));
        }
        let failure: RefCell<Option<Error>> = RefCell::new(None);
        let outer = |x: f64| {
            let mut buf = Vec::with_capacity(self.marks.len());
            match nested_expect(&self.marks, x, &mut buf, phi, strict) {
                Some(v) => v,
                None => {
                    failure.borrow_mut().get_or_insert(Error::AnalyticUnavailable("kernel integrator failed".into()));
                    0.0
                }
            }
        };
        let mut breaks = phi.breakpoints.clone();
        breaks.extend(self.marks.iter().flat_map(|k| k.location_breakpoints()));
        let value = self.spatial.expectation(&outer, &breaks);
        match failure.into_inner() {
            Some(e) => Err(e),
            None if value.is_finite() => Ok(value),
            None => Err(Error::Numeric(format!("quadrature produced {value}"))),
        }
    }
}

fn nested_expect(kernels: &[Arc<dyn MarkKernel>], x: f64, buf: &mut Vec<Mark>, phi: &TestFn, strict: bool) -> Option<f64> {
    let depth = buf.len();
    if depth == kernels.len() {
        return Some(phi.eval_point(PointRef { location: x, marks: buf }, strict));
    }
    if buf.last() == Some(&Mark::Cemetery) {
        buf.push(Mark::Cemetery);
        let v = nested_expect(kernels, x, buf, phi, strict);
        buf.pop();
        return v;
    }
    let prefix = buf.clone();
    let failed = std::cell::Cell::new(false);
    let g = |m: Mark| {
        let mut inner = prefix.clone();
        inner.push(m);
        match nested_expect(kernels, x, &mut inner, phi, strict) {
            Some(v) => v,
            None => {
                failed.set(true);
                0.0
            }
        }
    };
    let v = kernels[depth].expect(PointRef { location: x, marks: &prefix }, &g, &phi.mark_breakpoints)?;
    if failed.get() {
        None
    } else {
        Some(v)
    }
}

/// One realized outcome: `K` point tuples stored column-wise.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointPattern {
    n_marks: usize,
    locations: Vec<f64>,
    marks: Vec<Mark>,
}

impl PointPattern {
    pub fn empty(n_marks: usize) -> Self {
        Self { n_marks, locations: Vec::new(), marks: Vec::new() }
    }

    /// Unmarked pattern from locations.
    pub fn from_locations(locations: Vec<f64>) -> Self {
        Self { n_marks: 0, locations, marks: Vec::new() }
    }

    pub fn push(&mut self, location: f64, marks: &[Mark]) {
        assert_eq!(marks.len(), self.n_marks, "mark arity mismatch");
        self.locations.push(location);
        self.marks.extend_from_slice(marks);
    }

    /// Realized count `K`.
    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn n_marks(&self) -> usize {
        self.n_marks
    }

    pub fn point(&self, i: usize) -> PointRef<'_> {
        let m = self.n_marks;
        PointRef { location: self.locations[i], marks: &self.marks[i * m..(i + 1) * m] }
    }

    pub fn iter(&self) -> impl Iterator<Item = PointRef<'_>> + '_ {
        (0..self.len()).map(move |i| self.point(i))
    }

    pub fn locations(&self) -> &[f64] {
        &self.locations
    }
}

/// A counting-law sampler bound to a spec.
pub struct PatternSampler<'a> {
    spec: &'a MeasureSpec,
    counting: CountingSampler,
}

impl PatternSampler<'_> {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> PointPattern {
        let k = self.counting.sample(rng) as usize;
        let m = self.spec.marks.len();
        let mut pattern = PointPattern {
            n_marks: m,
            locations: Vec::with_capacity(k),
            marks: Vec::with_capacity(k * m),
        };
        let mut buf: Vec<Mark> = Vec::with_capacity(m);
        for _ in 0..k {
            let x = self.spec.spatial.sample(rng);
            buf.clear();
            for kernel in &self.spec.marks {
                let mark = if buf.last() == Some(&Mark::Cemetery) {
                    Mark::Cemetery
                } else {
                    kernel.sample(PointRef { location: x, marks: &buf }, rng)
                };
                buf.push(mark);
            }
            pattern.locations.push(x);
            pattern.marks.extend_from_slice(&buf);
        }
        pattern
    }
}

/// Draws one pattern: `K`, then `K` locations, then marks kernel by kernel.
pub fn sample_pattern<R: Rng>(spec: &MeasureSpec, rng: &mut R) -> Result<PointPattern> {
    Ok(spec.sampler()?.sample(rng))
}

type PointFn = dyn Fn(PointRef<'_>) -> f64 + Send + Sync;

/// Non-negative test function on point tuples, with the positions of its
/// jumps in the location and mark coordinates so quadrature can split there.
#[derive(Clone)]
pub struct TestFn {
    f: Arc<PointFn>,
    breakpoints: Vec<f64>,
    mark_breakpoints: Vec<f64>,
}

impl fmt::Debug for TestFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFn").field("breakpoints", &self.breakpoints).finish_non_exhaustive()
    }
}

impl TestFn {
    pub fn new(f: impl Fn(PointRef<'_>) -> f64 + Send + Sync + 'static) -> Self {
        Self { f: Arc::new(f), breakpoints: Vec::new(), mark_breakpoints: Vec::new() }
    }

    /// Function of the location only.
    pub fn of_location(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::new(move |p| f(p.location))
    }

    pub fn with_breakpoints(mut self, bps: impl IntoIterator<Item = f64>) -> Self {
        self.breakpoints.extend(bps);
        self
    }

    pub fn with_mark_breakpoints(mut self, bps: impl IntoIterator<Item = f64>) -> Self {
        self.mark_breakpoints.extend(bps);
        self
    }

    pub fn constant(c: f64) -> Self {
        Self::new(move |_| c)
    }

    /// `value · 1_A(location)`.
    pub fn indicator(set: IntervalSet, value: f64) -> Self {
        let bps: Vec<f64> = set.endpoints().collect();
        Self::new(move |p| if set.contains(p.location) { value } else { 0.0 }).with_breakpoints(bps)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    /// Evaluates at a tuple; cemetery tuples give 0 unless `strict`.
    pub fn eval_point(&self, p: PointRef<'_>, strict: bool) -> f64 {
        if !strict && p.is_cemetery() {
            0.0
        } else {
            (self.f)(p)
        }
    }

    /// Pointwise transform, keeping the breakpoints.
    pub fn map(&self, g: impl Fn(f64) -> f64 + Send + Sync + 'static) -> TestFn {
        let f = self.f.clone();
        TestFn { f: Arc::new(move |p| g(f(p))), breakpoints: self.breakpoints.clone(), mark_breakpoints: self.mark_breakpoints.clone() }
    }

    /// `e^{-f}` as a test function; cemetery tuples keep `e^{-0} = 1`.
    fn exp_neg(&self) -> TestFn {
        let f = self.f.clone();
        TestFn {
            f: Arc::new(move |p| if p.is_cemetery() { 1.0 } else { (-f(p)).exp() }),
            breakpoints: self.breakpoints.clone(),
            mark_breakpoints: self.mark_breakpoints.clone(),
        }
    }
}

/// `N f = Σ_i f(X_i, Y_i)`; cemetery tuples contribute 0.
pub fn integrate(pattern: &PointPattern, f: &TestFn) -> f64 {
    pattern.iter().map(|p| f.eval_point(p, false)).sum()
}

/// Like [`integrate`] but evaluates `f` on cemetery tuples as well.
pub fn integrate_strict(pattern: &PointPattern, f: &TestFn) -> f64 {
    pattern.iter().map(|p| f.eval_point(p, true)).sum()
}

/// Restriction `N_A = (κ_{h_a(θ)}, ν_A)` with `a = ν(A)`; kernels are kept.
pub fn restrict(spec: &MeasureSpec, set: &IntervalSet) -> Result<MeasureSpec> {
    let a = spec.spatial.mass(set);
    if !(a > 0.0) {
        return Err(Error::NullRestriction);
    }
    if !spec.counting.is_pt() {
        return Err(Error::UnsupportedFamily(format!("cannot restrict {}", spec.counting.name())));
    }
    Ok(MeasureSpec {
        counting: spec.counting.thin_map(a)?,
        spatial: spec.spatial.restrict(set)?,
        marks: spec.marks.clone(),
    })
}

/// `E e^{-N f} = ψ(ν e^{-g})`, with `e^{-g(x)} = ∫ Q(x, dy) e^{-f(x, y)}`.
pub fn laplace_analytic(spec: &MeasureSpec, f: &TestFn) -> Result<f64> {
    // strict: cemetery tuples must see e^{-0} = 1 rather than 0
    let inner = spec.mean_functional_inner(&f.exp_neg(), true)?.clamp(0.0, 1.0);
    spec.counting.pgf(inner)
}

/// Monte Carlo estimate of `E e^{-N f}` over `n_rep` seeded replicates.
pub fn laplace_mc(spec: &MeasureSpec, f: &TestFn, n_rep: usize, seed: u64) -> Result<Estimate> {
    if n_rep < 100 {
        return Err(invalid("n_rep", "at least 100 replicates are required"));
    }
    let sampler = spec.sampler()?;
    let values = rng::replicate_map(seed, n_rep, |_, rng: &mut Stream| (-integrate(&sampler.sample(rng), f)).exp());
    Ok(stats::mean(&values))
}

/// `(E Nf, Var Nf) = (c νf, c νf² + (δ² - c)(νf)²)`.
pub fn moments_analytic(spec: &MeasureSpec, f: &TestFn) -> Result<(f64, f64)> {
    let (c, d2) = spec.counting.moments()?;
    let nu_f = spec.mean_functional(f)?;
    let nu_f2 = spec.mean_functional(&f.map(|v| v * v))?;
    Ok((c * nu_f, c * nu_f2 + (d2 - c) * nu_f * nu_f))
}

/// `Cov(N(A), N(B)) = (δ² - c) ν(A) ν(B)` for disjoint `A`, `B`.
pub fn pair_covariance_analytic(spec: &MeasureSpec, a: &IntervalSet, b: &IntervalSet) -> Result<f64> {
    if !a.is_disjoint(b) {
        return Err(Error::NotDisjoint);
    }
    let (c, d2) = spec.counting.moments()?;
    Ok((d2 - c) * spec.spatial.mass(a) * spec.spatial.mass(b))
}

/// Sample moments of `Nf` over seeded replicates. `factorial2` estimates
/// `E Nf(Nf - 1)`, which is the second factorial moment when `f` is an
/// indicator.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct EmpiricalMoments {
    pub n_rep: usize,
    pub mean: Estimate,
    pub variance: Estimate,
    pub factorial2: Estimate,
}

pub fn empirical_moments(spec: &MeasureSpec, f: &TestFn, n_rep: usize, seed: u64) -> Result<EmpiricalMoments> {
    if n_rep < 2 {
        return Err(invalid("n_rep", "at least two replicates are required"));
    }
    let sampler = spec.sampler()?;
    let values = rng::replicate_map(seed, n_rep, |_, rng: &mut Stream| integrate(&sampler.sample(rng), f));
    let mean = stats::mean(&values);
    let variance = stats::variance(&values);
    let fact: Vec<f64> = values.iter().map(|v| v * (v - 1.0)).collect();
    Ok(EmpiricalMoments { n_rep, mean, variance, factorial2: stats::mean(&fact) })
}

/// Chi-square fit of simulated `N(A)` against the restricted counting law.
pub fn restriction_fit(
    spec: &MeasureSpec,
    set: &IntervalSet,
    n_rep: usize,
    seed: u64,
) -> Result<(CountingLaw, stats::ChiSquareOutcome)> {
    if n_rep < 2 {
        return Err(invalid("n_rep", "at least two replicates are required"));
    }
    let law = restrict(spec, set)?.counting;
    let sampler = spec.sampler()?;
    let counts = rng::replicate_map(seed, n_rep, |_, rng: &mut Stream| {
        sampler.sample(rng).locations().iter().filter(|&&x| set.contains(x)).count() as u64
    });
    let fit = stats::chi_square_gof(&stats::histogram(counts), &law.pmf_table()?);
    Ok((law, fit))
}

/// Sample covariance of `(N(A), N(B))` with its delta-method standard error.
pub fn empirical_pair_covariance(
    spec: &MeasureSpec,
    a: &IntervalSet,
    b: &IntervalSet,
    n_rep: usize,
    seed: u64,
) -> Result<Estimate> {
    if n_rep < 2 {
        return Err(invalid("n_rep", "at least two replicates are required"));
    }
    let sampler = spec.sampler()?;
    let pairs = rng::replicate_map(seed, n_rep, |_, rng: &mut Stream| {
        let p = sampler.sample(rng);
        let na = p.locations().iter().filter(|&&x| a.contains(x)).count() as f64;
        let nb = p.locations().iter().filter(|&&x| b.contains(x)).count() as f64;
        (na, nb)
    });
    let (xa, xb): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    Ok(stats::covariance(&xa, &xb))
}

/// Disjoint cells covering the support of a spatial law.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    cells: Vec<IntervalSet>,
}

impl Partition {
    pub fn new(cells: Vec<IntervalSet>, law: &SpatialLaw) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::Partition("no cells".into()));
        }
        for i in 0..cells.len() {
            for j in i + 1..cells.len() {
                if !cells[i].is_disjoint(&cells[j]) {
                    return Err(Error::Partition(format!("cells {i} and {j} overlap")));
                }
            }
        }
        let (lo, hi) = law.support();
        let union = cells.iter().fold(IntervalSet::empty(), |acc, c| acc.union(c));
        if !union.covers(lo, hi) {
            return Err(Error::Partition(format!("cells do not cover the support ({lo}, {hi}]")));
        }
        Ok(Self { cells })
    }

    pub fn cells(&self) -> &[IntervalSet] {
        &self.cells
    }

    pub fn masses(&self, law: &SpatialLaw) -> Vec<f64> {
        self.cells.iter().map(|c| law.mass(c)).collect()
    }
}

/// Counts `(N(A_1), ..., N(A_m))` of one pattern.
pub fn partition_counts(pattern: &PointPattern, partition: &Partition) -> Result<Vec<u64>> {
    let mut counts = vec![0u64; partition.cells.len()];
    for &x in pattern.locations() {
        let cell = partition
            .cells
            .iter()
            .position(|c| c.contains(x))
            .ok_or_else(|| Error::Partition(format!("point {x} lies outside every cell")))?;
        counts[cell] += 1;
    }
    Ok(counts)
}

/// Largest total count considered when marginalizing an unbounded law.
const JOINT_PMF_MAX_EXTRA: u64 = 100_000;

/// `P(N(A_1) = i_1, ..., N(A_m) = i_m) = k!/(i_1!...i_m!) Π ν(A_j)^{i_j} P(K = k)`.
/// When the masses sum to less than one, the uncovered remainder is
/// marginalized out.
pub fn joint_pmf(law: &CountingLaw, masses: &[f64], counts: &[u64]) -> Result<f64> {
    if masses.len() != counts.len() {
        return Err(invalid("counts", "one count per mass is required"));
    }
    if masses.iter().any(|m| !(0.0..=1.0).contains(m)) {
        return Err(invalid("masses", "masses must lie in [0, 1]"));
    }
    let total_mass: f64 = masses.iter().sum();
    if total_mass > 1.0 + 1e-12 {
        return Err(invalid("masses", format!("masses sum to {total_mass} > 1")));
    }
    let k: u64 = counts.iter().sum();
    let mut log_term = 0.0;
    for (&m, &i) in masses.iter().zip(counts) {
        if i > 0 {
            if m == 0.0 {
                return Ok(0.0);
            }
            log_term += i as f64 * m.ln() - ln_gamma(i as f64 + 1.0);
        }
    }
    let rest = (1.0 - total_mass).max(0.0);
    if rest <= 1e-12 {
        return Ok((ln_gamma(k as f64 + 1.0) + log_term).exp() * law.pmf(k)?);
    }
    // sum over the unobserved remainder count j
    let mut total = 0.0;
    let max_extra = law.support_max().map(|n| n.saturating_sub(k)).unwrap_or(JOINT_PMF_MAX_EXTRA);
    let (c, d2) = law.moments()?;
    let beyond_bulk = (c + 12.0 * d2.sqrt() + 50.0) as u64;
    for j in 0..=max_extra {
        let kk = k + j;
        let p = law.pmf(kk)?;
        let term = (ln_gamma(kk as f64 + 1.0) + log_term + j as f64 * rest.ln() - ln_gamma(j as f64 + 1.0)).exp() * p;
        total += term;
        if kk > beyond_bulk && term < 1e-18 * total.max(1e-300) {
            break;
        }
    }
    Ok(total)
}
