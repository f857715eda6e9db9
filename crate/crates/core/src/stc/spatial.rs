use std::sync::Arc;

use rand::Rng;

use super::interval::IntervalSet;
use crate::error::{invalid, Error, Result};

/// Cells used for quadrature over uniform laws.
pub const DEFAULT_QUAD_CELLS: usize = 1024;

/// Tabulated law on an increasing grid. Each cell `(g_j, g_{j+1}]` carries
/// the trapezoid mass of the supplied density and is uniform inside.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityTable {
    grid: Vec<f64>,
    cum: Vec<f64>,
}

impl DensityTable {
    /// Normalizes `density` (values at grid nodes) by the trapezoid rule.
    pub fn new(grid: Vec<f64>, density: &[f64]) -> Result<Self> {
        if grid.len() != density.len() {
            return Err(invalid("density", "grid and density lengths differ"));
        }
        if density.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(invalid("density", "values must be finite and non-negative"));
        }
        let masses: Vec<f64> = (0..grid.len().saturating_sub(1))
            .map(|j| 0.5 * (density[j] + density[j + 1]) * (grid[j + 1] - grid[j]))
            .collect();
        Self::from_cell_masses(grid, &masses)
    }

    /// Table with the given (unnormalized) mass in each grid cell.
    pub fn from_cell_masses(grid: Vec<f64>, masses: &[f64]) -> Result<Self> {
        if grid.len() < 2 || masses.len() + 1 != grid.len() {
            return Err(invalid("grid", "need at least two nodes and one mass per cell"));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) || grid.iter().any(|g| !g.is_finite()) {
            return Err(invalid("grid", "nodes must be finite and strictly increasing"));
        }
        if masses.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(invalid("density", "cell masses must be finite and non-negative"));
        }
        let total: f64 = masses.iter().sum();
        if !(total > 0.0) {
            return Err(invalid("density", "total mass is zero"));
        }
        let mut cum = Vec::with_capacity(grid.len());
        let mut acc = 0.0;
        cum.push(0.0);
        for m in masses {
            acc += m / total;
            cum.push(acc);
        }
        *cum.last_mut().unwrap() = 1.0;
        Ok(Self { grid, cum })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn cell_mass(&self, j: usize) -> f64 {
        self.cum[j + 1] - self.cum[j]
    }

    /// Piecewise-constant density at `x`.
    pub fn density_at(&self, x: f64) -> f64 {
        let n = self.grid.len();
        if x <= self.grid[0] || x > self.grid[n - 1] {
            return 0.0;
        }
        let j = self.grid.partition_point(|&g| g < x) - 1;
        self.cell_mass(j) / (self.grid[j + 1] - self.grid[j])
    }

    fn cdf(&self, x: f64) -> f64 {
        let n = self.grid.len();
        if x <= self.grid[0] {
            return 0.0;
        }
        if x >= self.grid[n - 1] {
            return 1.0;
        }
        let j = self.grid.partition_point(|&g| g <= x) - 1;
        let w = self.grid[j + 1] - self.grid[j];
        self.cum[j] + self.cell_mass(j) * (x - self.grid[j]) / w
    }

    fn quantile(&self, u: f64) -> f64 {
        let n = self.grid.len();
        if u <= 0.0 {
            return self.grid[0];
        }
        if u >= 1.0 {
            // last cell with positive mass
            let i = self.cum.partition_point(|&c| c < 1.0);
            return self.grid[i.min(n - 1)];
        }
        let i = self.cum.partition_point(|&c| c < u).clamp(1, n - 1);
        let j = i - 1;
        let m = self.cell_mass(j);
        let frac = if m > 0.0 { ((u - self.cum[j]) / m).clamp(0.0, 1.0) } else { 1.0 };
        self.grid[j] + frac * (self.grid[j + 1] - self.grid[j])
    }

    fn cells(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        (0..self.grid.len() - 1).map(move |j| (self.grid[j], self.grid[j + 1], self.cell_mass(j)))
    }
}

/// Law with finitely many atoms on the line.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteLaw {
    atoms: Vec<f64>,
    probs: Vec<f64>,
    cum: Vec<f64>,
}

impl DiscreteLaw {
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(invalid("atoms", "at least one atom is required"));
        }
        let mut atoms = atoms;
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        if atoms.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(invalid("atoms", "atom locations must be distinct"));
        }
        if atoms.iter().any(|(x, p)| !x.is_finite() || !p.is_finite() || *p < 0.0) {
            return Err(invalid("atoms", "atoms need finite locations and non-negative probabilities"));
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(invalid("atoms", format!("probabilities sum to {total}, not 1")));
        }
        let probs: Vec<f64> = atoms.iter().map(|a| a.1 / total).collect();
        let mut acc = 0.0;
        let cum = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(Self { atoms: atoms.into_iter().map(|a| a.0).collect(), probs, cum })
    }

    pub fn atoms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.atoms.iter().copied().zip(self.probs.iter().copied())
    }

    fn quantile(&self, u: f64) -> f64 {
        let i = self.cum.partition_point(|&c| c < u).min(self.atoms.len() - 1);
        self.atoms[i]
    }
}

/// Law `ν` of the iid point locations.
#[derive(Debug, Clone, PartialEq)]
pub enum SpatialLaw {
    /// Uniform on `(lo, hi]`.
    Uniform { lo: f64, hi: f64 },
    Table(DensityTable),
    /// Atomic law; allowed, but thinning uniqueness needs a diffuse law.
    Discrete(DiscreteLaw),
    /// Conditional law `ν_A(B) = ν(A ∩ B) / ν(A)`.
    Restricted { base: Arc<SpatialLaw>, set: IntervalSet, mass: f64 },
}

impl SpatialLaw {
    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(invalid("uniform", format!("({lo}, {hi}] is not a proper interval")));
        }
        Ok(SpatialLaw::Uniform { lo, hi })
    }

    pub fn table(grid: Vec<f64>, density: &[f64]) -> Result<Self> {
        Ok(SpatialLaw::Table(DensityTable::new(grid, density)?))
    }

    pub fn discrete(atoms: Vec<(f64, f64)>) -> Result<Self> {
        Ok(SpatialLaw::Discrete(DiscreteLaw::new(atoms)?))
    }

    pub fn is_atomic(&self) -> bool {
        match self {
            SpatialLaw::Discrete(_) => true,
            SpatialLaw::Restricted { base, .. } => base.is_atomic(),
            _ => false,
        }
    }

    /// Bounds `(lo, hi]` enclosing the support.
    pub fn support(&self) -> (f64, f64) {
        match self {
            SpatialLaw::Uniform { lo, hi } => (*lo, *hi),
            SpatialLaw::Table(t) => (t.grid[0], *t.grid.last().unwrap()),
            SpatialLaw::Discrete(d) => (d.atoms[0].next_down(), *d.atoms.last().unwrap()),
            SpatialLaw::Restricted { base, set, .. } => {
                let (lo, hi) = base.support();
                let p = set.pieces();
                (lo.max(p[0].0), hi.min(p[p.len() - 1].1))
            }
        }
    }

    /// `ν((-∞, x])`.
    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            SpatialLaw::Uniform { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
            SpatialLaw::Table(t) => t.cdf(x),
            SpatialLaw::Discrete(d) => {
                let i = d.atoms.partition_point(|&a| a <= x);
                if i == 0 {
                    0.0
                } else {
                    d.cum[i - 1]
                }
            }
            SpatialLaw::Restricted { base, set, mass } => {
                let below = IntervalSet::new([(f64::NEG_INFINITY, x)]).expect("valid half line");
                (base.mass(&set.intersect(&below)) / mass).clamp(0.0, 1.0)
            }
        }
    }

    /// `ν(A)`.
    pub fn mass(&self, set: &IntervalSet) -> f64 {
        set.pieces().iter().map(|&(a, b)| self.cdf(b) - self.cdf(a)).sum::<f64>().clamp(0.0, 1.0)
    }

    /// Smallest `x` with `cdf(x) >= u`, for `u` in `(0, 1]`.
    pub fn quantile(&self, u: f64) -> f64 {
        match self {
            SpatialLaw::Uniform { lo, hi } => lo + u * (hi - lo),
            SpatialLaw::Table(t) => t.quantile(u),
            SpatialLaw::Discrete(d) => d.quantile(u),
            SpatialLaw::Restricted { base, set, mass } => {
                let mut rem = u * mass;
                let pieces = set.pieces();
                for (i, &(a, b)) in pieces.iter().enumerate() {
                    let fa = base.cdf(a);
                    let m = base.cdf(b) - fa;
                    if rem <= m || i + 1 == pieces.len() {
                        let x = base.quantile((fa + rem.min(m)).min(1.0));
                        return x.clamp(a.next_up(), b);
                    }
                    rem -= m;
                }
                unreachable!("restricted law has at least one piece")
            }
        }
    }

    /// One draw from the law.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // u in (0, 1] so uniform draws land in (lo, hi]
        let u = 1.0 - rng.random::<f64>();
        self.quantile(u)
    }

    /// Conditional law given the set.
    pub fn restrict(&self, set: &IntervalSet) -> Result<SpatialLaw> {
        let mass = self.mass(set);
        if !(mass > 0.0) {
            return Err(Error::NullRestriction);
        }
        let (lo, hi) = self.support();
        let set = set.intersect(&IntervalSet::interval(lo, hi)?);
        if mass == 1.0 && set.covers(lo, hi) {
            return Ok(self.clone());
        }
        Ok(match self {
            SpatialLaw::Uniform { .. } if set.pieces().len() == 1 => {
                let (a, b) = set.pieces()[0];
                SpatialLaw::Uniform { lo: a, hi: b }
            }
            SpatialLaw::Discrete(d) => {
                let kept: Vec<(f64, f64)> = d.atoms().filter(|(x, _)| set.contains(*x)).map(|(x, p)| (x, p / mass)).collect();
                SpatialLaw::Discrete(DiscreteLaw::new(kept)?)
            }
            SpatialLaw::Restricted { base, set: inner, .. } => {
                let combined = inner.intersect(&set);
                let m = base.mass(&combined);
                if !(m > 0.0) {
                    return Err(Error::NullRestriction);
                }
                SpatialLaw::Restricted { base: base.clone(), set: combined, mass: m }
            }
            _ => SpatialLaw::Restricted { base: Arc::new(self.clone()), set, mass },
        })
    }

    /// `∫ φ dν` by the composite trapezoid rule on the law's cells, split at
    /// `breakpoints`. Cells are treated as `(l, r]`, so `φ` is evaluated just
    /// right of `l` and at `r`. Exact for constants and for step functions
    /// whose jumps are listed in `breakpoints`.
    pub fn expectation(&self, phi: &dyn Fn(f64) -> f64, breakpoints: &[f64]) -> f64 {
        self.expectation_with_cells(phi, breakpoints, DEFAULT_QUAD_CELLS)
    }

    pub fn expectation_with_cells(&self, phi: &dyn Fn(f64) -> f64, breakpoints: &[f64], cells: usize) -> f64 {
        let mut bps: Vec<f64> = breakpoints.iter().copied().filter(|b| b.is_finite()).collect();
        bps.sort_by(f64::total_cmp);
        bps.dedup();
        match self {
            SpatialLaw::Uniform { lo, hi } => {
                let n = cells.max(1);
                let w = (hi - lo) / n as f64;
                let it = (0..n).map(|j| {
                    let l = lo + j as f64 * w;
                    let r = if j + 1 == n { *hi } else { lo + (j + 1) as f64 * w };
                    (l, r, (r - l) / (hi - lo))
                });
                trapezoid(it, &bps, phi)
            }
            SpatialLaw::Table(t) => trapezoid(t.cells(), &bps, phi),
            SpatialLaw::Discrete(d) => d.atoms().map(|(x, p)| p * phi(x)).sum(),
            SpatialLaw::Restricted { base, set, mass } => {
                let mut all = bps;
                all.extend(set.endpoints());
                let inner = |x: f64| if set.contains(x) { phi(x) } else { 0.0 };
                base.expectation_with_cells(&inner, &all, cells) / mass
            }
        }
    }
}

fn trapezoid(cells: impl Iterator<Item = (f64, f64, f64)>, bps: &[f64], phi: &dyn Fn(f64) -> f64) -> f64 {
    let mut total = 0.0;
    let mut weight = 0.0;
    let mut k = 0;
    for (l, r, m) in cells {
        if m == 0.0 {
            continue;
        }
        while k < bps.len() && bps[k] <= l {
            k += 1;
        }
        let width = r - l;
        let mut left = l;
        let mut j = k;
        while j < bps.len() && bps[j] < r {
            let b = bps[j];
            let mm = m * (b - left) / width;
            total += mm * 0.5 * (phi(left.next_up()) + phi(b));
            weight += mm;
            left = b;
            j += 1;
        }
        let mm = m * (r - left) / width;
        total += mm * 0.5 * (phi(left.next_up()) + phi(r));
        weight += mm;
    }
    if weight > 0.0 {
        total / weight
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_relative_eq;

    #[test]
    fn uniform_mass_and_quantile() {
        let u = SpatialLaw::uniform(0.0, 2.0).unwrap();
        assert_relative_eq!(u.mass(&IntervalSet::interval(0.5, 1.0).unwrap()), 0.25);
        assert_eq!(u.quantile(1.0), 2.0);
        assert!(u.quantile(1e-300) > 0.0);
    }

    #[test]
    fn table_normalizes_and_inverts() {
        let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let dens: Vec<f64> = grid.iter().map(|x| 2.0 * x).collect();
        let t = SpatialLaw::table(grid, &dens).unwrap();
        assert_relative_eq!(t.cdf(1.0), 1.0);
        // piecewise-uniform cells reproduce F(x) = x² at the nodes
        assert_relative_eq!(t.cdf(0.5), 0.25, epsilon = 1e-12);
        for u in [0.1, 0.25, 0.7, 1.0] {
            assert_relative_eq!(t.cdf(t.quantile(u)), u, epsilon = 1e-12);
        }
    }

    #[test]
    fn expectation_exact_for_steps_and_constants() {
        let u = SpatialLaw::uniform(0.0, 1.0).unwrap();
        assert_eq!(u.expectation(&|_| 1.0, &[]), 1.0);
        let set = IntervalSet::interval(0.0, 0.3).unwrap();
        let ind = |x: f64| if set.contains(x) { 1.0 } else { 0.0 };
        let bps: Vec<f64> = set.endpoints().collect();
        assert_relative_eq!(u.expectation(&ind, &bps), 0.3, epsilon = 1e-14);
        assert_relative_eq!(u.expectation(&|x| x, &[]), 0.5, epsilon = 1e-14);
    }

    #[test]
    fn restriction_is_conditional_law() {
        let u = SpatialLaw::uniform(0.0, 1.0).unwrap();
        let half = IntervalSet::interval(0.0, 0.5).unwrap();
        assert_eq!(u.restrict(&half).unwrap(), SpatialLaw::Uniform { lo: 0.0, hi: 0.5 });
        let whole = IntervalSet::interval(-1.0, 2.0).unwrap();
        assert_eq!(u.restrict(&whole).unwrap(), u);
        let two = IntervalSet::new([(0.0, 0.25), (0.75, 1.0)]).unwrap();
        let r = u.restrict(&two).unwrap();
        assert_relative_eq!(r.mass(&IntervalSet::interval(0.0, 0.25).unwrap()), 0.5);
        assert_relative_eq!(r.expectation(&|x| x, &[]), 0.5, epsilon = 1e-12);
        let mut rng = rng::stream(3, 0);
        for _ in 0..1000 {
            assert!(two.contains(r.sample(&mut rng)));
        }
        assert_eq!(u.restrict(&IntervalSet::interval(2.0, 3.0).unwrap()), Err(Error::NullRestriction));
    }

    #[test]
    fn discrete_laws() {
        let d = SpatialLaw::discrete(vec![(0.0, 0.5), (1.0, 0.5)]).unwrap();
        assert!(d.is_atomic());
        assert_eq!(d.mass(&IntervalSet::interval(-0.5, 0.0).unwrap()), 0.5);
        assert_eq!(d.expectation(&|x| x, &[]), 0.5);
        let r = d.restrict(&IntervalSet::interval(0.5, 1.0).unwrap()).unwrap();
        assert_eq!(r.quantile(0.3), 1.0);
        assert!(SpatialLaw::discrete(vec![(0.0, 0.4)]).is_err());
    }
}
