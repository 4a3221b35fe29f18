//! Simulation studies: a grid of dynamics, many replicated movies per grid
//! point, and the full estimate → connect → score pipeline on each.
//!
//! An experiment is described by a TOML file:
//!
//! ```toml
//! seed = 7
//! replications = 100
//! delta_t = 0.25          # frame interval (s)
//! warmup = 1200.0         # burn-in before each movie (s)
//! k_best = 1
//! params = ["true", "hat"]
//!
//! [geometry]
//! perimeter = 50.0        # or hidden_width = 35.2
//! height = 30.0
//!
//! [grid]
//! lambda = [0.08]
//! tau_d = [0.004]
//! speed = ["const"]
//! sigma = [0.2]
//! duration = [300.0]
//! ratio = [0.42]
//! ```
//!
//! Every replication draws from its own random stream keyed by
//! `(seed, grid point, replication)`, so results do not depend on the number
//! of worker threads.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    estimate_all, estimate_drift_diffusion, estimate_tau_alpha, estimate_tau_d,
    ArrivalRateEstimate, DeathRateEstimate, DriftDiffusion, EstimationReport,
};
use crate::evaluation::{
    adjusted_rand_index, configuration_to_partition, count_histogram, ground_truth_partition,
    rand_index, segments_per_cluster, true_rotations,
};
use crate::io::{self, SampleMeta, Table};
use crate::model::{CylinderGeometry, DynamicsParams};
use crate::rng::StreamSeed;
use crate::simulator::{
    counted_arrivals, observe, simulate, true_configuration, ObservedSample, SimulationConfig,
    SpeedLaw, Trajectory,
};
use crate::solver::{build_problem, solve_k_best, AssignmentProblem, SolverResult};
use crate::stats::{arrival_rate, CostModel};

/// Which parameter values drive the linking costs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ParamsSource {
    /// Every parameter at its true value.
    True,
    /// Rates from a long reference movie, true drift and diffusion.
    Tilde,
    /// Rates from the movie itself, true drift and diffusion.
    Mixed,
    /// Everything estimated from the movie itself.
    Hat,
    /// True rates, drift and diffusion estimated from the movie.
    TrueVhat,
    /// Reference-movie rates, drift and diffusion estimated from the movie.
    TildeVhat,
}

impl ParamsSource {
    pub const ALL: [ParamsSource; 6] = [
        ParamsSource::True,
        ParamsSource::Tilde,
        ParamsSource::Mixed,
        ParamsSource::Hat,
        ParamsSource::TrueVhat,
        ParamsSource::TildeVhat,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ParamsSource::True => "true",
            ParamsSource::Tilde => "tilde",
            ParamsSource::Mixed => "mixed",
            ParamsSource::Hat => "hat",
            ParamsSource::TrueVhat => "true-vhat",
            ParamsSource::TildeVhat => "tilde-vhat",
        }
    }

    pub fn needs_reference(self) -> bool {
        matches!(self, ParamsSource::Tilde | ParamsSource::TildeVhat)
    }

    pub fn needs_estimates(self) -> bool {
        !matches!(self, ParamsSource::True | ParamsSource::Tilde)
    }
}

impl fmt::Display for ParamsSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ParamsSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ParamsSource::ALL
            .into_iter()
            .find(|p| p.label() == s)
            .ok_or_else(|| {
                Error::param(format!(
                    "unknown params source `{s}` (expected one of true, tilde, mixed, hat, true-vhat, tilde-vhat)"
                ))
            })
    }
}

impl TryFrom<String> for ParamsSource {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ParamsSource> for String {
    fn from(p: ParamsSource) -> String {
        p.label().to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpeedMode {
    Const,
    Uniform,
}

impl SpeedMode {
    pub fn label(self) -> &'static str {
        match self {
            SpeedMode::Const => "const",
            SpeedMode::Uniform => "uniform",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySpec {
    /// Perimeter `L`; the observed width follows from the ratio `l / l_u`.
    pub perimeter: Option<f64>,
    /// Hidden width `l_u`, held fixed across ratios instead of `L`.
    pub hidden_width: Option<f64>,
    #[serde(default = "defaults::height")]
    pub height: f64,
}

impl Default for GeometrySpec {
    fn default() -> Self {
        GeometrySpec {
            perimeter: Some(defaults::PERIMETER),
            hidden_width: None,
            height: defaults::height(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub lambda: Vec<f64>,
    pub tau_d: Vec<f64>,
    #[serde(default = "defaults::speed")]
    pub speed: Vec<SpeedMode>,
    #[serde(default = "defaults::sigma")]
    pub sigma: Vec<f64>,
    /// Movie lengths `T_S` (s).
    #[serde(default = "defaults::duration")]
    pub duration: Vec<f64>,
    /// Ratios `l / l_u`.
    #[serde(default = "defaults::ratio")]
    pub ratio: Vec<f64>,
}

mod defaults {
    use super::{ParamsSource, SpeedMode};

    pub const PERIMETER: f64 = 50.0;

    pub fn height() -> f64 {
        30.0
    }
    pub fn speed() -> Vec<SpeedMode> {
        vec![SpeedMode::Const]
    }
    pub fn sigma() -> Vec<f64> {
        vec![0.2]
    }
    pub fn duration() -> Vec<f64> {
        vec![300.0]
    }
    pub fn ratio() -> Vec<f64> {
        vec![0.42]
    }
    pub fn delta_t() -> f64 {
        0.25
    }
    pub fn warmup() -> f64 {
        1200.0
    }
    pub fn ci_level() -> f64 {
        0.95
    }
    pub fn k_best() -> usize {
        1
    }
    pub fn v_x() -> f64 {
        0.6
    }
    pub fn v_y_ratio() -> f64 {
        0.01
    }
    pub fn uniform_speed() -> [f64; 2] {
        [0.4, 0.8]
    }
    pub fn reference_duration() -> f64 {
        1800.0
    }
    pub fn params() -> Vec<ParamsSource> {
        vec![ParamsSource::True, ParamsSource::Hat]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub seed: u64,
    pub replications: usize,
    #[serde(default = "defaults::delta_t")]
    pub delta_t: f64,
    #[serde(default = "defaults::warmup")]
    pub warmup: f64,
    #[serde(default = "defaults::ci_level")]
    pub ci_level: f64,
    /// Width of the border neighbourhoods; defaults to `v Δt + 3σ√Δt` with
    /// the fastest speed of the grid point.
    #[serde(default)]
    pub border_margin: Option<f64>,
    #[serde(default = "defaults::k_best")]
    pub k_best: usize,
    /// Circumferential speed (mean speed for the uniform law).
    #[serde(default = "defaults::v_x")]
    pub v_x: f64,
    /// `v_y = v_y_ratio · v_x`.
    #[serde(default = "defaults::v_y_ratio")]
    pub v_y_ratio: f64,
    #[serde(default = "defaults::uniform_speed")]
    pub uniform_speed: [f64; 2],
    /// Length of the reference movies behind the `tilde` rates (s).
    #[serde(default = "defaults::reference_duration")]
    pub reference_duration: f64,
    #[serde(default = "defaults::params")]
    pub params: Vec<ParamsSource>,
    #[serde(default)]
    pub geometry: GeometrySpec,
    pub grid: Grid,
}

/// One combination of grid values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub index: usize,
    pub lambda: f64,
    pub tau_d: f64,
    pub speed: SpeedMode,
    pub sigma: f64,
    pub duration: f64,
    pub ratio: f64,
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ExperimentSpec =
            toml::from_str(text).map_err(|e| Error::param(format!("experiment file: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io::io_err(path))?;
        ExperimentSpec::from_toml(&text).map_err(|e| Error::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment spec is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::param("replications must be >= 1"));
        }
        if self.k_best == 0 {
            return Err(Error::param("k_best must be >= 1"));
        }
        if self.params.is_empty() {
            return Err(Error::param("params must list at least one source"));
        }
        let g = &self.grid;
        for (name, values) in [
            ("lambda", &g.lambda),
            ("tau_d", &g.tau_d),
            ("sigma", &g.sigma),
            ("duration", &g.duration),
            ("ratio", &g.ratio),
        ] {
            if values.is_empty() {
                return Err(Error::param(format!("grid.{name} is empty")));
            }
            if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::param(format!(
                    "grid.{name} has a negative or non-finite value"
                )));
            }
        }
        if g.speed.is_empty() {
            return Err(Error::param("grid.speed is empty"));
        }
        if g.duration.contains(&0.0) || g.ratio.contains(&0.0) {
            return Err(Error::param("durations and ratios must be > 0"));
        }
        if !(self.delta_t > 0.0 && self.warmup >= 0.0) {
            return Err(Error::param("need delta_t > 0 and warmup >= 0"));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::param("ci_level must lie in (0, 1)"));
        }
        let [lo, hi] = self.uniform_speed;
        if !(lo > 0.0 && hi >= lo && self.v_x > 0.0) {
            return Err(Error::param(
                "speeds must be > 0 with uniform_speed = [low, high]",
            ));
        }
        if self.params.iter().any(|p| p.needs_reference()) && !(self.reference_duration > 0.0) {
            return Err(Error::param("tilde parameters need reference_duration > 0"));
        }
        match (self.geometry.perimeter, self.geometry.hidden_width) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => {
                return Err(Error::param(
                    "geometry needs exactly one of perimeter, hidden_width",
                ))
            }
        }
        for p in self.grid_points() {
            self.geometry_at(&p)?;
            self.true_params(&p).validate()?;
        }
        Ok(())
    }

    /// Cartesian product of the grid, in a fixed order.
    pub fn grid_points(&self) -> Vec<GridPoint> {
        let g = &self.grid;
        let mut out = Vec::new();
        for &lambda in &g.lambda {
            for &tau_d in &g.tau_d {
                for &speed in &g.speed {
                    for &sigma in &g.sigma {
                        for &duration in &g.duration {
                            for &ratio in &g.ratio {
                                out.push(GridPoint {
                                    index: out.len(),
                                    lambda,
                                    tau_d,
                                    speed,
                                    sigma,
                                    duration,
                                    ratio,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn geometry_at(&self, point: &GridPoint) -> Result<CylinderGeometry> {
        let h = self.geometry.height;
        match (self.geometry.perimeter, self.geometry.hidden_width) {
            (Some(l), _) => CylinderGeometry::from_perimeter(l, h, point.ratio),
            (None, Some(l_u)) => CylinderGeometry::from_hidden_width(l_u, h, point.ratio),
            (None, None) => Err(Error::param("geometry needs perimeter or hidden_width")),
        }
    }

    pub fn speed_law(&self, point: &GridPoint) -> SpeedLaw {
        match point.speed {
            SpeedMode::Const => SpeedLaw::Constant,
            SpeedMode::Uniform => SpeedLaw::Uniform {
                low: self.uniform_speed[0],
                high: self.uniform_speed[1],
            },
        }
    }

    /// True dynamics of a grid point; `τ_α` is left at zero until a geometry
    /// is known (see [`ExperimentSpec::true_params_with_arrival`]).
    pub fn true_params(&self, point: &GridPoint) -> DynamicsParams {
        DynamicsParams {
            v_x: self.v_x,
            v_y: self.v_y_ratio * self.v_x,
            sigma_x: point.sigma,
            sigma_y: point.sigma,
            lambda_birth: point.lambda,
            tau_d: point.tau_d,
            tau_alpha: 0.0,
        }
    }

    /// True dynamics with the stationary arrival rate of the geometry.
    pub fn true_params_with_arrival(&self, point: &GridPoint) -> Result<DynamicsParams> {
        let geometry = self.geometry_at(point)?;
        let mut p = self.true_params(point);
        p.tau_alpha = arrival_rate(&geometry, &p);
        Ok(p)
    }

    pub fn border_margin_at(&self, point: &GridPoint) -> f64 {
        self.border_margin.unwrap_or_else(|| {
            let fastest = match point.speed {
                SpeedMode::Const => self.v_x,
                SpeedMode::Uniform => self.uniform_speed[1],
            };
            DynamicsParams {
                v_x: fastest,
                ..self.true_params(point)
            }
            .border_margin(self.delta_t)
        })
    }

    fn simulation(&self, point: &GridPoint, duration: f64) -> Result<SimulationConfig> {
        Ok(SimulationConfig {
            geometry: self.geometry_at(point)?,
            params: self.true_params(point),
            speed: self.speed_law(point),
            delta_t: self.delta_t,
            warmup: self.warmup,
            duration,
        })
    }

    fn needs_reference(&self) -> bool {
        self.params.iter().any(|p| p.needs_reference())
    }
}

/// Name of the sample bundle of one replication.
pub fn sample_name(point: usize, replication: usize) -> String {
    format!("p{point:03}_r{replication:04}")
}

pub fn movie_seed(spec: &ExperimentSpec, point: &GridPoint, replication: usize) -> StreamSeed {
    StreamSeed::derive(
        spec.seed,
        &[point.index as u64, replication as u64],
        "movie",
    )
}

fn reference_seed(spec: &ExperimentSpec, point: &GridPoint, replication: usize) -> StreamSeed {
    StreamSeed::derive(
        spec.seed,
        &[point.index as u64, replication as u64],
        "reference",
    )
}

/// A simulated movie with its ground truth.
#[derive(Debug, Clone)]
pub struct Movie {
    pub trajectories: Vec<Trajectory>,
    pub sample: ObservedSample,
    pub meta: SampleMeta,
}

/// Simulates replication `replication` of a grid point, with the reference
/// rates when a `tilde` source is requested.
pub fn simulate_movie(
    spec: &ExperimentSpec,
    point: &GridPoint,
    replication: usize,
) -> Result<Movie> {
    let config = spec.simulation(point, point.duration)?;
    let margin = spec.border_margin_at(point);
    let trajectories = simulate(&config, &mut movie_seed(spec, point, replication).rng())?;
    let sample = observe(
        &trajectories,
        &config.geometry,
        config.delta_t,
        config.duration,
        margin,
    )?;
    let truth = spec.true_params_with_arrival(point)?;
    let (speed_low, speed_high) = match config.speed {
        SpeedLaw::Constant => (None, None),
        SpeedLaw::Uniform { low, high } => (Some(low), Some(high)),
    };
    let mut meta = SampleMeta {
        v_x: Some(truth.v_x),
        v_y: Some(truth.v_y),
        sigma_x: Some(truth.sigma_x),
        sigma_y: Some(truth.sigma_y),
        lambda_birth: Some(truth.lambda_birth),
        tau_d: Some(truth.tau_d),
        tau_alpha: Some(truth.tau_alpha),
        speed_low,
        speed_high,
        counted_tau_alpha: Some(counted_arrivals(&sample, &trajectories)? as f64 / config.duration),
        ..SampleMeta::for_sample(&sample)
    };
    if spec.needs_reference() {
        let reference = spec.simulation(point, spec.reference_duration)?;
        let trajs = simulate(
            &reference,
            &mut reference_seed(spec, point, replication).rng(),
        )?;
        let long = observe(
            &trajs,
            &reference.geometry,
            reference.delta_t,
            reference.duration,
            margin,
        )?;
        meta.reference_tau_d = estimate_tau_d(&long, margin, spec.ci_level)
            .ok()
            .map(|e| e.tau_d);
        meta.reference_tau_alpha = estimate_tau_alpha(&long, margin).ok().map(|e| e.tau_alpha);
    }
    Ok(Movie {
        trajectories,
        sample,
        meta,
    })
}

/// Parameters used for linking under a source.
pub fn resolve_params(
    source: ParamsSource,
    meta: &SampleMeta,
    estimates: Option<&EstimationReport>,
) -> Result<DynamicsParams> {
    let missing = |what: &str| Error::data(format!("`{source}` parameters need {what}"));
    let truth = || -> Result<DynamicsParams> {
        Ok(DynamicsParams {
            v_x: meta.v_x.ok_or_else(|| missing("the true dynamics"))?,
            v_y: meta.v_y.ok_or_else(|| missing("the true dynamics"))?,
            sigma_x: meta.sigma_x.ok_or_else(|| missing("the true dynamics"))?,
            sigma_y: meta.sigma_y.ok_or_else(|| missing("the true dynamics"))?,
            lambda_birth: meta.lambda_birth.unwrap_or(0.0),
            tau_d: meta.tau_d.ok_or_else(|| missing("the true dynamics"))?,
            tau_alpha: meta.tau_alpha.ok_or_else(|| missing("the true dynamics"))?,
        })
    };
    let estimated = || {
        estimates
            .map(EstimationReport::params)
            .ok_or_else(|| missing("estimates"))
    };
    let (rates, motion) = match source {
        ParamsSource::True => (truth()?, truth()?),
        ParamsSource::Tilde => (reference_rates(meta, missing)?, truth()?),
        ParamsSource::Mixed => (estimated()?, truth()?),
        ParamsSource::Hat => (estimated()?, estimated()?),
        ParamsSource::TrueVhat => (truth()?, estimated()?),
        ParamsSource::TildeVhat => (reference_rates(meta, missing)?, estimated()?),
    };
    Ok(DynamicsParams {
        tau_d: rates.tau_d,
        tau_alpha: rates.tau_alpha,
        lambda_birth: rates.lambda_birth,
        ..motion
    })
}

fn reference_rates(meta: &SampleMeta, missing: impl Fn(&str) -> Error) -> Result<DynamicsParams> {
    Ok(DynamicsParams {
        v_x: 1.0,
        v_y: 0.0,
        sigma_x: 0.0,
        sigma_y: 0.0,
        lambda_birth: meta.lambda_birth.unwrap_or(0.0),
        tau_d: meta
            .reference_tau_d
            .ok_or_else(|| missing("reference rates"))?,
        tau_alpha: meta
            .reference_tau_alpha
            .ok_or_else(|| missing("reference rates"))?,
    })
}

/// Ranked linkings of a sample under one parameter set.
#[derive(Debug, Clone)]
pub struct Linking {
    pub cost: CostModel,
    pub problem: AssignmentProblem,
    pub ranked: Vec<SolverResult>,
}

pub fn link(sample: &ObservedSample, params: &DynamicsParams, k_best: usize) -> Result<Linking> {
    let cost = CostModel::new(params, &sample.geometry)?;
    let problem = build_problem(&sample.outputs, &sample.inputs, &cost);
    let ranked = solve_k_best(&problem, k_best.max(1));
    Ok(Linking {
        cost,
        problem,
        ranked,
    })
}

/// Agreement of one linking with the ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub ari: Option<f64>,
    pub rand_index: Option<f64>,
    /// `K(true) - K(result)` under the same costs.
    pub k_gap: Option<f64>,
}

pub fn score(
    sample: &ObservedSample,
    problem: &AssignmentProblem,
    result: &SolverResult,
) -> Result<Score> {
    let truth = true_configuration(sample)?;
    let k_gap = Some(problem.objective(&truth) - result.objective);
    if sample.segments.len() < 2 {
        return Ok(Score {
            ari: None,
            rand_index: None,
            k_gap,
        });
    }
    let reference = ground_truth_partition(sample)?;
    let estimated = configuration_to_partition(&result.configuration, sample)?;
    Ok(Score {
        ari: Some(adjusted_rand_index(&reference, &estimated)?),
        rand_index: Some(rand_index(&reference, &estimated)?),
        k_gap,
    })
}

/// One ranked linking of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectionRow {
    pub point: usize,
    pub replication: usize,
    pub params: String,
    pub rank: Option<usize>,
    pub objective: Option<f64>,
    pub log_likelihood: Option<f64>,
    pub n_matches: Option<usize>,
    pub ari: Option<f64>,
    pub rand_index: Option<f64>,
    pub k_gap: Option<f64>,
    pub error: String,
}

impl Table for ConnectionRow {
    const HEADER: &'static str = "point,replication,params,rank,objective,log_likelihood,\
n_matches,ari,rand_index,k_gap,error";
}

/// Everything measured on one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRecord {
    pub point: GridPoint,
    pub replication: usize,
    pub seed: u64,
    pub error: Option<String>,
    pub n_segments: usize,
    pub n_outputs: usize,
    pub n_inputs: usize,
    pub tau_alpha_theory: f64,
    pub tau_alpha_counted: f64,
    pub estimates: std::result::Result<EstimationReport, String>,
    pub connections: Vec<ConnectionRow>,
    /// Rounded `v_x T_d / L` of each simulated particle.
    pub rotations_theory: BTreeMap<usize, usize>,
    /// Segments per true trajectory.
    pub rotations_truth: BTreeMap<usize, usize>,
    /// Segments per reconstructed trajectory (first params source, best rank).
    pub rotations_estimated: BTreeMap<usize, usize>,
}

pub fn run_replication(
    spec: &ExperimentSpec,
    point: &GridPoint,
    replication: usize,
) -> ReplicationRecord {
    let seed = movie_seed(spec, point, replication).short();
    let mut record = ReplicationRecord {
        point: *point,
        replication,
        seed,
        error: None,
        n_segments: 0,
        n_outputs: 0,
        n_inputs: 0,
        tau_alpha_theory: f64::NAN,
        tau_alpha_counted: f64::NAN,
        estimates: Err("not run".into()),
        connections: Vec::new(),
        rotations_theory: BTreeMap::new(),
        rotations_truth: BTreeMap::new(),
        rotations_estimated: BTreeMap::new(),
    };
    let movie = match simulate_movie(spec, point, replication) {
        Ok(m) => m,
        Err(e) => {
            record.error = Some(e.to_string());
            return record;
        }
    };
    let sample = &movie.sample;
    record.n_segments = sample.segments.len();
    record.n_outputs = sample.outputs.len();
    record.n_inputs = sample.inputs.len();
    record.tau_alpha_theory = movie.meta.tau_alpha.unwrap_or(f64::NAN);
    record.tau_alpha_counted = movie.meta.counted_tau_alpha.unwrap_or(f64::NAN);
    record.estimates =
        estimate_all(sample, sample.border_margin, spec.ci_level).map_err(|e| e.to_string());

    let turns: Vec<usize> = true_rotations(&movie.trajectories, &sample.geometry)
        .into_iter()
        .map(|r| r.round() as usize)
        .collect();
    record.rotations_theory = count_histogram(&turns);
    if let Ok(truth) = ground_truth_partition(sample) {
        record.rotations_truth = count_histogram(&segments_per_cluster(&truth));
    }

    for (k, &source) in spec.params.iter().enumerate() {
        let base = ConnectionRow {
            point: point.index,
            replication,
            params: source.to_string(),
            rank: None,
            objective: None,
            log_likelihood: None,
            n_matches: None,
            ari: None,
            rand_index: None,
            k_gap: None,
            error: String::new(),
        };
        let linking = resolve_params(source, &movie.meta, record.estimates.as_ref().ok())
            .and_then(|p| link(sample, &p, spec.k_best));
        let linking = match linking {
            Ok(l) => l,
            Err(e) => {
                let reason = match &record.estimates {
                    Err(est) if source.needs_estimates() => format!("{e}: {est}"),
                    _ => e.to_string(),
                };
                record.connections.push(ConnectionRow {
                    error: reason,
                    ..base
                });
                continue;
            }
        };
        for result in &linking.ranked {
            let mut row = ConnectionRow {
                rank: Some(result.rank),
                objective: Some(result.objective),
                log_likelihood: Some(result.log_likelihood(&linking.cost, sample.duration)),
                n_matches: Some(result.configuration.n_matches()),
                ..base.clone()
            };
            match score(sample, &linking.problem, result) {
                Ok(s) => {
                    row.ari = s.ari;
                    row.rand_index = s.rand_index;
                    row.k_gap = s.k_gap;
                }
                Err(e) => row.error = e.to_string(),
            }
            record.connections.push(row);
        }
        if k == 0 {
            if let Some(best) = linking.ranked.first() {
                if let Ok(p) = configuration_to_partition(&best.configuration, sample) {
                    record.rotations_estimated = count_histogram(&segments_per_cluster(&p));
                }
            }
        }
    }
    record
}

/// Runs every replication of every grid point on `threads` workers.
pub fn run_sweep(spec: &ExperimentSpec, threads: usize) -> Result<Vec<ReplicationRecord>> {
    spec.validate()?;
    let jobs: Vec<(GridPoint, usize)> = spec
        .grid_points()
        .into_iter()
        .flat_map(|p| (0..spec.replications).map(move |r| (p, r)))
        .collect();
    Ok(worker_pool(threads)?.install(|| {
        jobs.par_iter()
            .map(|(p, r)| run_replication(spec, p, *r))
            .collect()
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub sample: String,
    pub point: usize,
    pub replication: usize,
    pub lambda: f64,
    pub tau_d: f64,
    pub speed: String,
    pub sigma: f64,
    pub duration: f64,
    pub ratio: f64,
    pub seed: String,
    pub n_segments: usize,
    pub status: String,
}

impl Table for ManifestRow {
    const HEADER: &'static str =
        "sample,point,replication,lambda,tau_d,speed,sigma,duration,ratio,seed,n_segments,status";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauAlphaRatioRow {
    pub point: usize,
    pub replication: usize,
    pub ratio: f64,
    pub lambda: f64,
    pub tau_d: f64,
    pub duration: f64,
    pub counted: f64,
    pub estimate: Option<f64>,
    pub relative_error: Option<f64>,
}

impl Table for TauAlphaRatioRow {
    const HEADER: &'static str =
        "point,replication,ratio,lambda,tau_d,duration,counted,estimate,relative_error";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauAlphaDurationRow {
    pub point: usize,
    pub replication: usize,
    pub duration: f64,
    pub ratio: f64,
    pub lambda: f64,
    pub tau_d: f64,
    /// `counted` or `estimated`.
    pub kind: String,
    pub tau_alpha: Option<f64>,
}

impl Table for TauAlphaDurationRow {
    const HEADER: &'static str = "point,replication,duration,ratio,lambda,tau_d,kind,tau_alpha";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauAlphaRatesRow {
    pub point: usize,
    pub replication: usize,
    pub lambda: f64,
    pub tau_d: f64,
    pub duration: f64,
    pub theory: f64,
    pub counted: f64,
    pub estimate: Option<f64>,
}

impl Table for TauAlphaRatesRow {
    const HEADER: &'static str = "point,replication,lambda,tau_d,duration,theory,counted,estimate";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauDRow {
    pub point: usize,
    pub replication: usize,
    pub lambda: f64,
    pub tau_d: f64,
    pub duration: f64,
    pub estimate: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

impl Table for TauDRow {
    const HEADER: &'static str = "point,replication,lambda,tau_d,duration,estimate,ci_low,ci_high";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionRow {
    pub point: usize,
    pub replication: usize,
    pub speed: String,
    pub sigma: f64,
    pub lambda: f64,
    pub tau_d: f64,
    pub duration: f64,
    pub v_x: Option<f64>,
    pub v_y: Option<f64>,
    pub sigma_x: Option<f64>,
    pub sigma_y: Option<f64>,
}

impl Table for MotionRow {
    const HEADER: &'static str =
        "point,replication,speed,sigma,lambda,tau_d,duration,v_x,v_y,sigma_x,sigma_y";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AriRow {
    pub point: usize,
    pub replication: usize,
    pub lambda: f64,
    pub tau_d: f64,
    pub speed: String,
    pub sigma: f64,
    pub duration: f64,
    pub ratio: f64,
    pub params: String,
    pub n_segments: usize,
    pub ari: Option<f64>,
}

impl Table for AriRow {
    const HEADER: &'static str =
        "point,replication,lambda,tau_d,speed,sigma,duration,ratio,params,n_segments,ari";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub point: usize,
    pub replication: usize,
    pub lambda: f64,
    pub tau_d: f64,
    pub params: String,
    pub k_gap: Option<f64>,
    pub ari: Option<f64>,
}

impl Table for GapRow {
    const HEADER: &'static str = "point,replication,lambda,tau_d,params,k_gap,ari";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationRow {
    pub point: usize,
    pub lambda: f64,
    pub tau_d: f64,
    /// `theory`, `truth` or `estimated`.
    pub kind: String,
    pub rotations: usize,
    pub count: usize,
}

impl Table for RotationRow {
    const HEADER: &'static str = "point,lambda,tau_d,kind,rotations,count";
}

/// Files written by [`write_sweep`].
pub const SWEEP_FILES: [&str; 10] = [
    "manifest.csv",
    "connections.csv",
    "fig4_tau_alpha_vs_ratio.csv",
    "fig5_tau_alpha_vs_duration.csv",
    "fig6_tau_alpha_vs_rates.csv",
    "fig7_tau_d_vs_rates.csv",
    "fig8_v_sigma.csv",
    "fig9_ari_vs_rates.csv",
    "fig13_kgap_vs_ari.csv",
    "fig14_rotations.csv",
];

/// Writes the tidy per-figure tables of a sweep into `dir`.
pub fn write_sweep(dir: &Path, records: &[ReplicationRecord]) -> Result<()> {
    io::create_dir(dir)?;
    let est = |r: &ReplicationRecord| r.estimates.as_ref().ok().copied();
    let mut manifest = Vec::new();
    let mut connections = Vec::new();
    let mut fig4 = Vec::new();
    let mut fig5 = Vec::new();
    let mut fig6 = Vec::new();
    let mut fig7 = Vec::new();
    let mut fig8 = Vec::new();
    let mut fig9 = Vec::new();
    let mut fig13 = Vec::new();
    let mut rotations: BTreeMap<(usize, &'static str, usize), (GridPoint, usize)> = BTreeMap::new();
    for r in records {
        let p = &r.point;
        let status = match (&r.error, &r.estimates) {
            (Some(e), _) => e.clone(),
            (None, Err(e)) => format!("estimation: {e}"),
            (None, Ok(_)) => "ok".to_string(),
        };
        manifest.push(ManifestRow {
            sample: sample_name(p.index, r.replication),
            point: p.index,
            replication: r.replication,
            lambda: p.lambda,
            tau_d: p.tau_d,
            speed: p.speed.label().into(),
            sigma: p.sigma,
            duration: p.duration,
            ratio: p.ratio,
            seed: format!("{:016x}", r.seed),
            n_segments: r.n_segments,
            status,
        });
        connections.extend(r.connections.iter().cloned());
        if r.error.is_some() {
            continue;
        }
        let e = est(r);
        let tau_alpha = e.map(|e| e.arrival.tau_alpha);
        fig4.push(TauAlphaRatioRow {
            point: p.index,
            replication: r.replication,
            ratio: p.ratio,
            lambda: p.lambda,
            tau_d: p.tau_d,
            duration: p.duration,
            counted: r.tau_alpha_counted,
            estimate: tau_alpha,
            relative_error: tau_alpha
                .filter(|_| r.tau_alpha_counted > 0.0)
                .map(|t| (t - r.tau_alpha_counted) / r.tau_alpha_counted),
        });
        for (kind, value) in [
            ("counted", Some(r.tau_alpha_counted)),
            ("estimated", tau_alpha),
        ] {
            fig5.push(TauAlphaDurationRow {
                point: p.index,
                replication: r.replication,
                duration: p.duration,
                ratio: p.ratio,
                lambda: p.lambda,
                tau_d: p.tau_d,
                kind: kind.into(),
                tau_alpha: value,
            });
        }
        fig6.push(TauAlphaRatesRow {
            point: p.index,
            replication: r.replication,
            lambda: p.lambda,
            tau_d: p.tau_d,
            duration: p.duration,
            theory: r.tau_alpha_theory,
            counted: r.tau_alpha_counted,
            estimate: tau_alpha,
        });
        fig7.push(TauDRow {
            point: p.index,
            replication: r.replication,
            lambda: p.lambda,
            tau_d: p.tau_d,
            duration: p.duration,
            estimate: e.map(|e| e.death.tau_d),
            ci_low: e.map(|e| e.death.ci_low),
            ci_high: e.map(|e| e.death.ci_high),
        });
        fig8.push(MotionRow {
            point: p.index,
            replication: r.replication,
            speed: p.speed.label().into(),
            sigma: p.sigma,
            lambda: p.lambda,
            tau_d: p.tau_d,
            duration: p.duration,
            v_x: e.map(|e| e.drift.v_x),
            v_y: e.map(|e| e.drift.v_y),
            sigma_x: e.map(|e| e.drift.sigma_x),
            sigma_y: e.map(|e| e.drift.sigma_y),
        });
        for c in r
            .connections
            .iter()
            .filter(|c| c.rank.is_none_or(|k| k == 1))
        {
            fig9.push(AriRow {
                point: p.index,
                replication: r.replication,
                lambda: p.lambda,
                tau_d: p.tau_d,
                speed: p.speed.label().into(),
                sigma: p.sigma,
                duration: p.duration,
                ratio: p.ratio,
                params: c.params.clone(),
                n_segments: r.n_segments,
                ari: c.ari,
            });
            fig13.push(GapRow {
                point: p.index,
                replication: r.replication,
                lambda: p.lambda,
                tau_d: p.tau_d,
                params: c.params.clone(),
                k_gap: c.k_gap,
                ari: c.ari,
            });
        }
        for (kind, hist) in [
            ("theory", &r.rotations_theory),
            ("truth", &r.rotations_truth),
            ("estimated", &r.rotations_estimated),
        ] {
            for (&n, &count) in hist {
                rotations.entry((p.index, kind, n)).or_insert((*p, 0)).1 += count;
            }
        }
    }
    let fig14: Vec<RotationRow> = rotations
        .into_iter()
        .map(|((_, kind, n), (p, count))| RotationRow {
            point: p.index,
            lambda: p.lambda,
            tau_d: p.tau_d,
            kind: kind.into(),
            rotations: n,
            count,
        })
        .collect();
    let [f_manifest, f_conn, f4, f5, f6, f7, f8, f9, f13, f14] = SWEEP_FILES;
    io::write_rows(&dir.join(f_manifest), &manifest)?;
    io::write_rows(&dir.join(f_conn), &connections)?;
    io::write_rows(&dir.join(f4), &fig4)?;
    io::write_rows(&dir.join(f5), &fig5)?;
    io::write_rows(&dir.join(f6), &fig6)?;
    io::write_rows(&dir.join(f7), &fig7)?;
    io::write_rows(&dir.join(f8), &fig8)?;
    io::write_rows(&dir.join(f9), &fig9)?;
    io::write_rows(&dir.join(f13), &fig13)?;
    io::write_rows(&dir.join(f14), &fig14)
}

fn worker_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::param(format!("cannot start {threads} workers: {e}")))
}

/// Simulates every replication and writes one sample bundle per movie under
/// `dir/samples`, plus `experiment.toml` and `manifest.csv`.
pub fn write_samples(
    spec: &ExperimentSpec,
    dir: &Path,
    threads: usize,
) -> Result<Vec<ManifestRow>> {
    spec.validate()?;
    io::create_dir(dir)?;
    let config = dir.join("experiment.toml");
    std::fs::write(&config, spec.to_toml()).map_err(io::io_err(&config))?;
    let jobs: Vec<(GridPoint, usize)> = spec
        .grid_points()
        .into_iter()
        .flat_map(|p| (0..spec.replications).map(move |r| (p, r)))
        .collect();
    let rows = worker_pool(threads)?.install(|| {
        jobs.par_iter()
            .map(|(p, r)| -> Result<ManifestRow> {
                let name = sample_name(p.index, *r);
                let (n_segments, status) = match simulate_movie(spec, p, *r) {
                    Ok(movie) => {
                        io::write_sample(&io::sample_dir(dir, &name), &movie.sample, &movie.meta)?;
                        (movie.sample.segments.len(), "ok".to_string())
                    }
                    Err(e) if e.is_io() => return Err(e),
                    Err(e) => (0, e.to_string()),
                };
                Ok(ManifestRow {
                    sample: name,
                    point: p.index,
                    replication: *r,
                    lambda: p.lambda,
                    tau_d: p.tau_d,
                    speed: p.speed.label().into(),
                    sigma: p.sigma,
                    duration: p.duration,
                    ratio: p.ratio,
                    seed: format!("{:016x}", movie_seed(spec, p, *r).short()),
                    n_segments,
                    status,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    io::write_rows(&dir.join(SWEEP_FILES[0]), &rows)?;
    Ok(rows)
}

/// Sample bundles below `root`, sorted by name. `root` may be a bundle, a
/// directory of bundles, or an experiment directory with a `samples/` folder.
pub fn list_samples(root: &Path) -> Result<Vec<(String, std::path::PathBuf)>> {
    let name_of = |p: &Path| {
        p.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "sample".into())
    };
    if root.join(io::SEGMENTS_FILE).is_file() {
        return Ok(vec![(name_of(root), root.to_path_buf())]);
    }
    let nested = root.join("samples");
    let dir = if nested.is_dir() {
        nested
    } else {
        root.to_path_buf()
    };
    let mut out = Vec::new();
    for entry in std::fs::read_dir(&dir).map_err(io::io_err(&dir))? {
        let path = entry.map_err(io::io_err(&dir))?.path();
        if path.join(io::SEGMENTS_FILE).is_file() {
            out.push((name_of(&path), path));
        }
    }
    out.sort();
    Ok(out)
}

/// Report of the four estimators on one sample; a failing estimator leaves
/// its columns empty and is named in `error`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub sample: String,
    pub v_x: Option<f64>,
    pub v_y: Option<f64>,
    pub sigma_x: Option<f64>,
    pub sigma_y: Option<f64>,
    pub n_increments: Option<usize>,
    pub tau_d: Option<f64>,
    pub tau_d_ci_low: Option<f64>,
    pub tau_d_ci_high: Option<f64>,
    pub n_points: Option<usize>,
    pub n_deaths: Option<usize>,
    pub tau_alpha: Option<f64>,
    pub n_born: Option<usize>,
    pub n_crossing: Option<usize>,
    pub n_censored: Option<usize>,
    pub n_returned: Option<usize>,
    pub p_extension: Option<f64>,
    pub error: String,
}

impl Table for EstimateRow {
    const HEADER: &'static str = "sample,v_x,v_y,sigma_x,sigma_y,n_increments,tau_d,\
tau_d_ci_low,tau_d_ci_high,n_points,n_deaths,tau_alpha,n_born,n_crossing,n_censored,\
n_returned,p_extension,error";
}

pub fn estimate_sample(name: &str, sample: &ObservedSample, ci_level: f64) -> EstimateRow {
    let margin = sample.border_margin;
    fn keep<T>(errors: &mut Vec<String>, r: Result<T>) -> Option<T> {
        r.map_err(|e| errors.push(e.to_string())).ok()
    }
    let mut errors = Vec::new();
    let drift: Option<DriftDiffusion> = keep(
        &mut errors,
        estimate_drift_diffusion(&sample.segments, sample.delta_t, &sample.geometry),
    );
    let death: Option<DeathRateEstimate> =
        keep(&mut errors, estimate_tau_d(sample, margin, ci_level));
    let arrival: Option<ArrivalRateEstimate> =
        keep(&mut errors, estimate_tau_alpha(sample, margin));
    EstimateRow {
        sample: name.to_string(),
        v_x: drift.map(|d| d.v_x),
        v_y: drift.map(|d| d.v_y),
        sigma_x: drift.map(|d| d.sigma_x),
        sigma_y: drift.map(|d| d.sigma_y),
        n_increments: drift.map(|d| d.n_increments),
        tau_d: death.map(|d| d.tau_d),
        tau_d_ci_low: death.map(|d| d.ci_low),
        tau_d_ci_high: death.map(|d| d.ci_high),
        n_points: death.map(|d| d.n_points),
        n_deaths: death.map(|d| d.n_deaths),
        tau_alpha: arrival.map(|a| a.tau_alpha),
        n_born: arrival.map(|a| a.n_born),
        n_crossing: arrival.map(|a| a.n_crossing),
        n_censored: arrival.map(|a| a.n_censored),
        n_returned: arrival.map(|a| a.n_returned),
        p_extension: arrival.map(|a| a.p_extension),
        error: errors.join("; "),
    }
}

fn link_sample(
    sample: &ObservedSample,
    meta: &SampleMeta,
    source: ParamsSource,
    k_best: usize,
    ci_level: f64,
) -> Result<Linking> {
    let estimates = if source.needs_estimates() {
        Some(estimate_all(sample, sample.border_margin, ci_level)?)
    } else {
        None
    };
    let params = resolve_params(source, meta, estimates.as_ref())?;
    link(sample, &params, k_best)
}

/// Ranked configurations of one sample; failures give a single flagged row.
pub fn connect_sample(
    name: &str,
    sample: &ObservedSample,
    meta: &SampleMeta,
    source: ParamsSource,
    k_best: usize,
    ci_level: f64,
) -> Vec<io::ResultRow> {
    let base = io::ResultRow {
        sample: name.to_string(),
        params: source.to_string(),
        rank: None,
        objective: None,
        log_likelihood: None,
        n_matches: None,
        matches: String::new(),
        error: String::new(),
    };
    match link_sample(sample, meta, source, k_best, ci_level) {
        Ok(linking) => linking
            .ranked
            .iter()
            .map(|r| io::ResultRow {
                rank: Some(r.rank),
                objective: Some(r.objective),
                log_likelihood: Some(r.log_likelihood(&linking.cost, sample.duration)),
                n_matches: Some(r.configuration.n_matches()),
                matches: r.configuration.matches_string(),
                ..base.clone()
            })
            .collect(),
        Err(e) => vec![io::ResultRow {
            error: e.to_string(),
            ..base
        }],
    }
}

/// Scores of the ranked configurations of one sample against its ground truth.
pub fn evaluate_sample(
    name: &str,
    sample: &ObservedSample,
    meta: &SampleMeta,
    source: ParamsSource,
    k_best: usize,
    ci_level: f64,
) -> Vec<io::ScoreRow> {
    let base = io::ScoreRow {
        sample: name.to_string(),
        params: source.to_string(),
        rank: None,
        n_segments: sample.segments.len(),
        ari: None,
        rand_index: None,
        k_gap: None,
        error: String::new(),
    };
    let linking = match link_sample(sample, meta, source, k_best, ci_level) {
        Ok(l) => l,
        Err(e) => {
            return vec![io::ScoreRow {
                error: e.to_string(),
                ..base
            }]
        }
    };
    linking
        .ranked
        .iter()
        .map(|r| {
            let mut row = io::ScoreRow {
                rank: Some(r.rank),
                ..base.clone()
            };
            match score(sample, &linking.problem, r) {
                Ok(s) => {
                    row.ari = s.ari;
                    row.rand_index = s.rand_index;
                    row.k_gap = s.k_gap;
                }
                Err(e) => row.error = e.to_string(),
            }
            row
        })
        .collect()
}
