use std::path::PathBuf;

use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use super::report::Check;
use super::spec::{FamilySpec, FunctionSpec, LawSpec, MarkSpec, SpatialSpec};
use super::{config_error, ExperimentConfig, ExperimentKind};
use crate::bone::{self, BoneClass};
use crate::compound::{self, SpendFamily, StateProbs, StoreModel};
use crate::counting::NnpsFamily;
use crate::error::{Error, Result};
use crate::rng;
use crate::sir::{self, SirParams, SirTrajectory};
use crate::stats::{Estimate, STDERR_MULTIPLIER};
use crate::stc::{self, IntervalSet, MeasureSpec, SpatialLaw, TestFn};
use crate::traffic::{self, Arrivals, BoxRegion, InitialLaw, MotionKernel, TrafficConfig};

/// Residual a NotBone verdict must exceed to count as a refutation.
pub const REFUTATION_MARGIN: f64 = 1e-4;
/// Relative tolerance for `EZ = EZ_A + EZ_{A^c}`.
pub const ADDITIVITY_TOLERANCE: f64 = 1e-12;
pub const CONSERVATION_TOLERANCE: f64 = 1e-6;
pub const SIR2_TOLERANCE: f64 = 1e-6;
pub const TAU_TOLERANCE: f64 = 1e-12;

/// Validated inputs, built before anything is simulated.
pub(super) enum Prepared {
    Bone { family: NnpsFamily, theta: f64, a: f64, grid: Vec<f64>, expect: Option<BoneClass> },
    Thin { spec: MeasureSpec, set: IntervalSet, n_rep: usize },
    Laplace { spec: MeasureSpec, f: TestFn, n_rep: usize },
    Compound { model: StoreModel, observed: IntervalSet, n_rep: usize },
    Sir { traj: SirTrajectory, n: u64, times: Vec<f64>, trajectory_csv: Option<PathBuf>, n_rep: usize },
    Traffic(Box<TrafficPrepared>),
}

pub(super) struct TrafficPrepared {
    config: TrafficConfig,
    region_a: BoxRegion,
    region_b: BoxRegion,
    snapshot_csv: Option<PathBuf>,
    snapshot_replicates: usize,
    n_rep: usize,
}

/// Parameter-level errors are reported against `params.<name>`.
fn in_params(err: Error) -> Error {
    match err {
        Error::InvalidParameter { name: "n_rep", reason } => Error::Config { field: "replicates".into(), reason },
        Error::InvalidParameter { name, reason } => Error::Config { field: format!("params.{name}"), reason },
        other => other,
    }
}

fn params<T: DeserializeOwned>(config: &ExperimentConfig) -> Result<T> {
    T::deserialize(&config.params).map_err(|e| config_error("params", e))
}

/// Seed for the `k`-th independent sub-experiment of one config.
fn sub_seed(seed: u64, k: u64) -> u64 {
    rng::stream_seed(seed, u64::MAX - k)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BoneParams {
    family: FamilySpec,
    theta: f64,
    a: f64,
    #[serde(default = "default_t_points")]
    t_points: usize,
    #[serde(default)]
    expect: Option<BoneClass>,
}

fn default_t_points() -> usize {
    101
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ThinParams {
    law: LawSpec,
    a: f64,
    #[serde(default)]
    spatial: SpatialSpec,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LaplaceParams {
    law: LawSpec,
    #[serde(default)]
    spatial: SpatialSpec,
    f: FunctionSpec,
    #[serde(default)]
    mark: Option<MarkSpec>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CompoundParams {
    counting: LawSpec,
    days: f64,
    #[serde(default)]
    breaks: Vec<f64>,
    rows: Vec<Vec<f64>>,
    spend_mean: Vec<f64>,
    spend_var: Vec<f64>,
    #[serde(default)]
    spend_family: SpendFamily,
    observed: IntervalSet,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SirExperimentParams {
    beta: f64,
    gamma: f64,
    rho: f64,
    #[serde(default = "default_dt")]
    dt: f64,
    n: u64,
    times: Vec<f64>,
    #[serde(default)]
    trajectory_csv: Option<PathBuf>,
}

fn default_dt() -> f64 {
    sir::DEFAULT_DT
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrafficParams {
    counting: LawSpec,
    state_space: BoxRegion,
    #[serde(default = "default_initial")]
    initial: InitialLaw,
    motion: MotionKernel,
    #[serde(default)]
    arrivals: Option<Arrivals>,
    #[serde(default)]
    lifetime_rate: Option<f64>,
    time: f64,
    region_a: BoxRegion,
    region_b: BoxRegion,
    #[serde(default)]
    snapshot_csv: Option<PathBuf>,
    #[serde(default = "default_snapshot_replicates")]
    snapshot_replicates: usize,
}

fn default_initial() -> InitialLaw {
    InitialLaw::UniformBox
}

fn default_snapshot_replicates() -> usize {
    100
}

pub(super) fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    let n_rep = config.replicates()?;
    let prepared = match config.experiment {
        ExperimentKind::BoneCheck => {
            let p: BoneParams = params(config)?;
            if p.t_points < 2 {
                return Err(config_error("params.t_points", "at least two grid points are required"));
            }
            let family = p.family.build().map_err(in_params)?;
            if !(p.a > 0.0 && p.a < 1.0) {
                return Err(config_error("params.a", format!("{} is not in (0, 1)", p.a)));
            }
            if !(p.theta > 0.0 && p.theta < family.radius()) {
                return Err(config_error("params.theta", format!("{} is not in (0, {})", p.theta, family.radius())));
            }
            Prepared::Bone { family, theta: p.theta, a: p.a, grid: bone::uniform_grid(p.t_points), expect: p.expect }
        }
        ExperimentKind::ThinVerify => {
            let p: ThinParams = params(config)?;
            let law = p.law.build().map_err(in_params)?;
            let spatial = p.spatial.build().map_err(in_params)?;
            if !(p.a > 0.0 && p.a <= 1.0) {
                return Err(config_error("params.a", format!("{} is not in (0, 1]", p.a)));
            }
            if !law.is_pt() {
                return Err(config_error("params.law", format!("{} is not closed under thinning", law.name())));
            }
            let (lo, _) = spatial.support();
            let set = IntervalSet::interval(lo, spatial.quantile(p.a)).map_err(in_params)?;
            Prepared::Thin { spec: MeasureSpec::new(law, spatial).map_err(in_params)?, set, n_rep }
        }
        ExperimentKind::Laplace => {
            let p: LaplaceParams = params(config)?;
            let law = p.law.build().map_err(in_params)?;
            let spec = MeasureSpec::new(law, p.spatial.build().map_err(in_params)?).map_err(in_params)?;
            let f = p.f.build();
            let (spec, f) = match p.mark {
                Some(m) => m.apply(spec, f).map_err(in_params)?,
                None => (spec, f),
            };
            if n_rep < 100 {
                return Err(config_error("replicates", "laplace needs at least 100 replicates"));
            }
            Prepared::Laplace { spec, f, n_rep }
        }
        ExperimentKind::Compound => {
            let p: CompoundParams = params(config)?;
            let counting = p.counting.build().map_err(in_params)?;
            let arrival = SpatialLaw::uniform(0.0, p.days).map_err(in_params)?;
            let states = p.spend_mean.len();
            let model = StoreModel::with_arrival(
                counting,
                p.days,
                arrival,
                StateProbs::Piecewise { breaks: p.breaks, rows: p.rows },
                p.spend_mean,
                p.spend_var,
                vec![p.spend_family; states],
            )
            .map_err(in_params)?;
            if p.observed.is_empty() {
                return Err(config_error("params.observed", "the observed day set is empty"));
            }
            if n_rep < 2 {
                return Err(config_error("replicates", "compound needs at least two replicates"));
            }
            Prepared::Compound { model, observed: p.observed, n_rep }
        }
        ExperimentKind::Sir => {
            let p: SirExperimentParams = params(config)?;
            let sir_params = SirParams::new(p.beta, p.gamma, p.rho).map_err(in_params)?;
            if p.n == 0 {
                return Err(config_error("params.n", "population must be positive"));
            }
            if p.times.is_empty() || p.times.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
                return Err(config_error("params.times", "need finite non-negative label times"));
            }
            if !(p.dt > 0.0) || !p.dt.is_finite() {
                return Err(config_error("params.dt", "must be positive"));
            }
            if n_rep < 2 {
                return Err(config_error("replicates", "sir needs at least two replicates"));
            }
            let traj = sir::solve_to_extinction(&sir_params, p.dt).map_err(in_params)?;
            if let Some(t) = p.times.iter().find(|t| **t > traj.t_max()) {
                return Err(config_error("params.times", format!("{t} is past the extinction horizon {}", traj.t_max())));
            }
            Prepared::Sir { traj, n: p.n, times: p.times, trajectory_csv: p.trajectory_csv, n_rep }
        }
        ExperimentKind::Traffic => {
            let p: TrafficParams = params(config)?;
            let counting = p.counting.build().map_err(in_params)?;
            let mut tc = TrafficConfig::immortal(counting, p.state_space, p.initial, p.motion, p.time).map_err(in_params)?;
            match (p.arrivals, p.lifetime_rate) {
                (Some(arrivals), rate) => tc = tc.birth_death(arrivals, rate).map_err(in_params)?,
                (None, Some(_)) => return Err(config_error("params.lifetime_rate", "lifetimes need an arrival law")),
                (None, None) => {}
            }
            if !p.region_a.is_disjoint(&p.region_b) {
                return Err(config_error("params.region_b", "regions must be disjoint"));
            }
            if n_rep < 10_000 {
                return Err(config_error("replicates", "traffic covariance needs at least 10^4 replicates"));
            }
            Prepared::Traffic(Box::new(TrafficPrepared {
                config: tc,
                region_a: p.region_a,
                region_b: p.region_b,
                snapshot_csv: p.snapshot_csv,
                snapshot_replicates: p.snapshot_replicates,
                n_rep,
            }))
        }
    };
    Ok(prepared)
}

fn sign_label(x: f64) -> &'static str {
    if x > 0.0 {
        "positive"
    } else if x < 0.0 {
        "negative"
    } else {
        "zero"
    }
}

/// Sign of an estimate at four-standard-error resolution.
fn empirical_sign(e: &Estimate) -> &'static str {
    if e.estimate.abs() <= STDERR_MULTIPLIER * e.stderr {
        "zero"
    } else {
        sign_label(e.estimate)
    }
}

fn band(name: &str, analytic: f64, e: &Estimate) -> Check {
    Check::stderr_band(name, analytic, e.estimate, e.stderr, STDERR_MULTIPLIER)
}

fn to_value<T: serde::Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("result records serialize")
}

pub(super) fn execute(config: &ExperimentConfig, prepared: Prepared) -> Result<(Value, Vec<Check>)> {
    let seed = config.seed;
    match prepared {
        Prepared::Bone { family, theta, a, grid, expect } => {
            let verdict = bone::nnps_bone_test(&family, theta, a, &grid)?;
            let mut checks = vec![if verdict.classification.is_bone() {
                Check::at_most("max_residual", verdict.max_residual, verdict.tolerance)
            } else {
                Check::above("max_residual", verdict.max_residual, REFUTATION_MARGIN)
            }];
            if let Some(expected) = expect {
                checks.push(Check::verdict(
                    "classification",
                    to_value(&expected).as_str().unwrap_or_default(),
                    to_value(&verdict.classification).as_str().unwrap_or_default(),
                ));
            }
            Ok((json!({ "family": family.name(), "verdict": to_value(&verdict) }), checks))
        }
        Prepared::Thin { spec, set, n_rep } => {
            let restricted = stc::restrict(&spec, &set)?.counting;
            let (_, fit) = stc::restriction_fit(&spec, &set, n_rep, seed)?;
            let m = stc::empirical_moments(&spec, &TestFn::indicator(set.clone(), 1.0), n_rep, seed)?;
            let (c, d2) = restricted.moments()?;
            let checks = vec![
                Check::chi_square("count_distribution", &fit),
                band("mean", c, &m.mean),
                band("variance", d2, &m.variance),
                band("factorial_moment", restricted.factorial_moment2()?, &m.factorial2),
            ];
            let results = json!({
                "mass": spec.spatial.mass(&set),
                "region": to_value(&set),
                "restricted_law": to_value(&restricted),
                "chi_square": to_value(&fit),
                "moments": to_value(&m),
            });
            Ok((results, checks))
        }
        Prepared::Laplace { spec, f, n_rep } => {
            let analytic = stc::laplace_analytic(&spec, &f)?;
            let mc = stc::laplace_mc(&spec, &f, n_rep, seed)?;
            let (mean, var) = stc::moments_analytic(&spec, &f)?;
            let m = stc::empirical_moments(&spec, &f, n_rep, seed)?;
            let checks = vec![band("laplace", analytic, &mc), band("mean", mean, &m.mean), band("variance", var, &m.variance)];
            let results = json!({
                "law": to_value(&spec.counting),
                "marks": spec.n_marks(),
                "laplace": { "analytic": analytic, "empirical": to_value(&mc) },
                "moments": { "mean": mean, "variance": var, "empirical": to_value(&m) },
            });
            Ok((results, checks))
        }
        Prepared::Compound { model, observed, n_rep } => {
            let d = compound::decompose_total(&model, &observed)?;
            let sim = compound::simulate_store(&model, &observed, n_rep, seed)?;
            let additivity = (d.ez - d.ez_a - d.ez_ac).abs() / d.ez.abs().max(1.0);
            let checks = vec![
                Check::at_most("additivity", additivity, ADDITIVITY_TOLERANCE).with_analytic(d.ez),
                band("ez", d.ez, &sim.ez),
                band("ez_a", d.ez_a, &sim.ez_a),
                band("ez_ac", d.ez_ac, &sim.ez_ac),
                band("var_z", d.var_z, &sim.var_z),
                band("var_a", d.var_a, &sim.var_a),
                band("var_ac", d.var_ac, &sim.var_ac),
                band("cov", d.cov, &sim.cov),
                Check::verdict("cov_sign", sign_label(d.cov), empirical_sign(&sim.cov)),
            ];
            let results = json!({
                "law": to_value(model.counting()),
                "observed": to_value(&observed),
                "analytic": to_value(&d),
                "empirical": to_value(&sim),
            });
            Ok((results, checks))
        }
        Prepared::Sir { traj, n, times, trajectory_csv, n_rep } => {
            if let Some(path) = trajectory_csv {
                write_trajectory_csv(&path, &traj)?;
            }
            let res = traj.structure_residuals();
            let (r0, rho) = (traj.params.r0(), traj.params.rho);
            let tau_residual = (1.0 - traj.tau - (-r0 * (traj.tau + rho)).exp()).abs();
            let mut checks = vec![
                Check::at_most("conservation", res.conservation, CONSERVATION_TOLERANCE),
                Check::at_most("sir2_identity", res.sir2, SIR2_TOLERANCE),
                Check::at_most("tau_residual", tau_residual, TAU_TOLERANCE),
            ];
            let mut labels = Vec::new();
            for (k, &t) in times.iter().enumerate() {
                let sim = sir::simulate_labels(n, &traj, t, n_rep, sub_seed(seed, k as u64))?;
                let s_t = sim.probabilities.0;
                let nf = n as f64;
                let tag = |what: &str| format!("{what}@t={t}");
                checks.push(Check::chi_square(tag("k_a_binomial"), &sim.k_a_fit));
                checks.push(Check::chi_square(tag("label_counts"), &sim.joint_fit));
                checks.push(band(&tag("k_a_mean"), nf * (1.0 - s_t), &sim.k_a_mean));
                checks.push(band(&tag("k_a_variance"), nf * s_t * (1.0 - s_t), &sim.k_a_var));
                let (p, f) = (sim.probabilities, sim.label_freq);
                checks.push(band(&tag("p_susceptible"), p.0, &f.0));
                checks.push(band(&tag("p_infected"), p.1, &f.1));
                checks.push(band(&tag("p_recovered"), p.2, &f.2));
                labels.push(json!({
                    "t": t,
                    "probabilities": [p.0, p.1, p.2],
                    "k_a_mean": to_value(&sim.k_a_mean),
                    "k_a_variance": to_value(&sim.k_a_var),
                    "k_a_fit": to_value(&sim.k_a_fit),
                    "joint_fit": to_value(&sim.joint_fit),
                }));
            }
            let results = json!({
                "r0": r0,
                "tau": traj.tau,
                "s_inf": traj.s_inf(),
                "t_max": traj.t_max(),
                "steps": traj.t.len() - 1,
                "residuals": to_value(&res),
                "tau_residual": tau_residual,
                "labels": labels,
            });
            Ok((results, checks))
        }
        Prepared::Traffic(p) => {
            let TrafficPrepared { config: tc, region_a, region_b, snapshot_csv, snapshot_replicates, n_rep } = *p;
            if let Some(path) = snapshot_csv {
                let snaps = traffic::simulate_snapshots(&tc, snapshot_replicates.min(n_rep), seed)?;
                traffic::write_snapshots_csv(std::io::BufWriter::new(std::fs::File::create(path)?), &snaps)?;
            }
            let exp = traffic::covariance_sign_experiment(&tc, &region_a, &region_b, n_rep, seed)?;
            let (restricted, fit) = traffic::restriction_fit(&tc, &region_a, n_rep, sub_seed(seed, 1))?;
            let checks = vec![
                band("cov", exp.analytic, &exp.cov),
                Check::verdict("cov_sign", sign_label(exp.analytic), empirical_sign(&exp.cov)),
                Check::chi_square("restricted_count_distribution", &fit),
            ];
            let results = json!({
                "law": to_value(&tc.counting),
                "covariance": to_value(&exp),
                "restriction": to_value(&restricted),
                "restriction_fit": to_value(&fit),
            });
            Ok((results, checks))
        }
    }
}

/// Columns `t,S,I,R`, one row per grid point.
fn write_trajectory_csv(path: &std::path::Path, traj: &SirTrajectory) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "t,S,I,R")?;
    for j in 0..traj.t.len() {
        writeln!(out, "{},{},{},{}", traj.t[j], traj.s[j], traj.i[j], traj.r[j])?;
    }
    out.flush()?;
    Ok(())
}
