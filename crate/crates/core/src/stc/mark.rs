use std::fmt;
use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Exp};

/// Mark attached to a point. `Cemetery` is the absorbing state of a
/// defective kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mark {
    Value(f64),
    Cemetery,
}

impl Mark {
    pub fn value(self) -> Option<f64> {
        match self {
            Mark::Value(v) => Some(v),
            Mark::Cemetery => None,
        }
    }
}

/// Borrowed view of one point tuple `(location, mark_1, ..., mark_m)`.
#[derive(Debug, Clone, Copy)]
pub struct PointRef<'a> {
    pub location: f64,
    pub marks: &'a [Mark],
}

impl PointRef<'_> {
    pub fn is_cemetery(&self) -> bool {
        self.marks.iter().any(|m| *m == Mark::Cemetery)
    }

    /// Value of mark `i`, `None` for cemetery or missing marks.
    pub fn mark(&self, i: usize) -> Option<f64> {
        self.marks.get(i).and_then(|m| m.value())
    }

    /// Number of components in the tuple.
    pub fn arity(&self) -> usize {
        1 + self.marks.len()
    }
}

/// Transition kernel `Q(x, ·)` from the tuple built so far to a new mark.
pub trait MarkKernel: Send + Sync + fmt::Debug {
    fn sample(&self, point: PointRef<'_>, rng: &mut dyn RngCore) -> Mark;

    /// Probability of sending the point to the cemetery.
    fn defective_mass(&self, _point: PointRef<'_>) -> f64 {
        0.0
    }

    /// `∫ Q(x, dy) g(y)` including the cemetery contribution, when the
    /// kernel can integrate analytically or by quadrature. `breaks` lists
    /// mark values where `g` may jump.
    fn expect(&self, _point: PointRef<'_>, _g: &dyn Fn(Mark) -> f64, _breaks: &[f64]) -> Option<f64> {
        None
    }

    /// Locations where `Q(x, ·)` changes discontinuously in `x`.
    fn location_breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
}

/// `∫_0^1 φ(v) dv` by double-exponential quadrature, split at `cuts`.
pub fn integrate_unit(phi: &dyn Fn(f64) -> f64, cuts: &[f64]) -> f64 {
    let mut nodes: Vec<f64> = cuts.iter().copied().filter(|c| *c > 0.0 && *c < 1.0).collect();
    nodes.push(0.0);
    nodes.push(1.0);
    nodes.sort_by(f64::total_cmp);
    nodes.dedup();
    nodes.windows(2).map(|w| quadrature::integrate(phi, w[0], w[1], 1e-12).integral).sum()
}

/// Mark `y = x + E` with `E ~ Exp(rate)`.
#[derive(Debug, Clone, Copy)]
pub struct ShiftedExponential {
    rate: f64,
    exp: Exp<f64>,
}

impl ShiftedExponential {
    pub fn new(rate: f64) -> crate::Result<Self> {
        let exp = Exp::new(rate).map_err(|e| crate::error::invalid("rate", e.to_string()))?;
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(crate::error::invalid("rate", "must be positive and finite"));
        }
        Ok(Self { rate, exp })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }
}

impl MarkKernel for ShiftedExponential {
    fn sample(&self, point: PointRef<'_>, rng: &mut dyn RngCore) -> Mark {
        Mark::Value(point.location + self.exp.sample(rng))
    }

    fn expect(&self, point: PointRef<'_>, g: &dyn Fn(Mark) -> f64, breaks: &[f64]) -> Option<f64> {
        // substitute v = exp(-rate u): E g(x + U) = ∫_0^1 g(x - ln(v)/rate) dv
        let x = point.location;
        let cuts: Vec<f64> = breaks.iter().map(|b| (-self.rate * (b - x)).exp()).collect();
        Some(integrate_unit(&|v: f64| g(Mark::Value(x - v.ln() / self.rate)), &cuts))
    }
}

/// Wraps a kernel, sending the point to the cemetery with probability
/// `defect(point)` and otherwise delegating.
#[derive(Clone)]
pub struct Defective {
    inner: Arc<dyn MarkKernel>,
    defect: Arc<dyn Fn(PointRef<'_>) -> f64 + Send + Sync>,
}

impl fmt::Debug for Defective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Defective").field("inner", &self.inner).finish_non_exhaustive()
    }
}

impl Defective {
    pub fn new(inner: Arc<dyn MarkKernel>, defect: impl Fn(PointRef<'_>) -> f64 + Send + Sync + 'static) -> Self {
        Self { inner, defect: Arc::new(defect) }
    }
}

impl MarkKernel for Defective {
    fn sample(&self, point: PointRef<'_>, rng: &mut dyn RngCore) -> Mark {
        let d = (self.defect)(point);
        if rng.random::<f64>() < d {
            Mark::Cemetery
        } else {
            self.inner.sample(point, rng)
        }
    }

    fn defective_mass(&self, point: PointRef<'_>) -> f64 {
        (self.defect)(point).clamp(0.0, 1.0)
    }

    fn expect(&self, point: PointRef<'_>, g: &dyn Fn(Mark) -> f64, breaks: &[f64]) -> Option<f64> {
        let d = self.defective_mass(point);
        let proper = self.inner.expect(point, g, breaks)?;
        Some(d * g(Mark::Cemetery) + (1.0 - d) * proper)
    }

    fn location_breakpoints(&self) -> Vec<f64> {
        self.inner.location_breakpoints()
    }
}

/// Kernel given only by a sampling closure; no analytic integrator.
#[derive(Clone)]
pub struct SamplerKernel {
    name: &'static str,
    sampler: Arc<dyn Fn(PointRef<'_>, &mut dyn RngCore) -> Mark + Send + Sync>,
}

impl SamplerKernel {
    pub fn new(name: &'static str, sampler: impl Fn(PointRef<'_>, &mut dyn RngCore) -> Mark + Send + Sync + 'static) -> Self {
        Self { name, sampler: Arc::new(sampler) }
    }
}

impl fmt::Debug for SamplerKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SamplerKernel").field("name", &self.name).finish()
    }
}

impl MarkKernel for SamplerKernel {
    fn sample(&self, point: PointRef<'_>, rng: &mut dyn RngCore) -> Mark {
        (self.sampler)(point, rng)
    }
}
