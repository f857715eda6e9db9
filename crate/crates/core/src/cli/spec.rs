//! Config-file descriptions of laws, families and test functions.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::counting::{CountingLaw, NnpsFamily};
use crate::error::Result;
use crate::stc::{IntervalSet, MeasureSpec, ShiftedExponential, SpatialLaw, TestFn};

/// A counting law `κ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LawSpec {
    Poisson { lambda: f64 },
    Binomial { n: u64, p: f64 },
    NegativeBinomial { r: f64, theta: f64 },
    Nnps { family: FamilySpec, theta: f64 },
}

impl LawSpec {
    pub fn build(&self) -> Result<CountingLaw> {
        match self {
            LawSpec::Poisson { lambda } => CountingLaw::poisson(*lambda),
            LawSpec::Binomial { n, p } => CountingLaw::binomial(*n, *p),
            LawSpec::NegativeBinomial { r, theta } => CountingLaw::negative_binomial(*r, *theta),
            LawSpec::Nnps { family, theta } => CountingLaw::nnps(family.build()?, *theta),
        }
    }
}

/// A power-series family `g(θ) = Σ a_k θ^k`, named or by coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilySpec {
    Geometric,
    Exponential,
    Binomial { n: u64 },
    NegativeBinomial { r: f64 },
    /// `a_k = (k + 1)/k!`, i.e. `g(θ) = (1 + θ) e^θ`.
    PolyExpMixture,
    Coefficients {
        coeffs: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
    },
}

impl FamilySpec {
    pub fn build(&self) -> Result<NnpsFamily> {
        Ok(match self {
            FamilySpec::Geometric => NnpsFamily::geometric(),
            FamilySpec::Exponential => NnpsFamily::exponential(),
            FamilySpec::Binomial { n } => NnpsFamily::binomial(*n)?,
            FamilySpec::NegativeBinomial { r } => NnpsFamily::negative_binomial(*r)?,
            FamilySpec::PolyExpMixture => NnpsFamily::poly_exp_mixture(),
            FamilySpec::Coefficients { coeffs, name } => {
                NnpsFamily::from_coeffs(name.clone().unwrap_or_else(|| "coefficients".into()), coeffs.clone())?
            }
        })
    }
}

/// A location law `ν` on the line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpatialSpec {
    Uniform { lo: f64, hi: f64 },
    /// Piecewise-uniform law with the given cell masses on `grid`.
    Cells { grid: Vec<f64>, masses: Vec<f64> },
}

impl Default for SpatialSpec {
    fn default() -> Self {
        SpatialSpec::Uniform { lo: 0.0, hi: 1.0 }
    }
}

impl SpatialSpec {
    pub fn build(&self) -> Result<SpatialLaw> {
        match self {
            SpatialSpec::Uniform { lo, hi } => SpatialLaw::uniform(*lo, *hi),
            SpatialSpec::Cells { grid, masses } => {
                Ok(SpatialLaw::Table(crate::stc::DensityTable::from_cell_masses(grid.clone(), masses)?))
            }
        }
    }
}

/// A non-negative test function of the location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionSpec {
    /// `value · 1_A(x)`.
    Indicator { set: IntervalSet, value: f64 },
    /// `slope · x + intercept`.
    Linear { slope: f64, intercept: f64 },
    Constant { value: f64 },
}

impl FunctionSpec {
    pub fn build(&self) -> TestFn {
        match self {
            FunctionSpec::Indicator { set, value } => TestFn::indicator(set.clone(), *value),
            FunctionSpec::Linear { slope, intercept } => {
                let (s, c) = (*slope, *intercept);
                TestFn::of_location(move |x| s * x + c)
            }
            FunctionSpec::Constant { value } => TestFn::constant(*value),
        }
    }
}

/// A shifted-exponential mark `y = x + Exp(rate)` entering the test
/// function as `weight · (y - x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkSpec {
    pub rate: f64,
    pub weight: f64,
}

impl MarkSpec {
    /// Adds the kernel to `spec` and the mark term to `f`.
    pub fn apply(&self, spec: MeasureSpec, f: TestFn) -> Result<(MeasureSpec, TestFn)> {
        let kernel = ShiftedExponential::new(self.rate)?;
        let w = self.weight;
        let base = f.clone();
        let g = TestFn::new(move |p| base.eval_point(p, true) + w * (p.mark(0).unwrap_or(p.location) - p.location))
            .with_breakpoints(f.breakpoints().iter().copied());
        Ok((spec.mark(Arc::new(kernel)), g))
    }
}
