//! Benchmark scenarios, tracking metrics and file export.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::actuation::ActuationModel;
use crate::elastic::RodParams;
use crate::error::{Error, Result};
use crate::geometry::{tip_position, Vec3};
use crate::kinematics::ArcChain;
use crate::registry::{ControlSettings, GeneratorRegistry, InputPlan};
use crate::sim::{Plant, SimConfig, Trajectory};
use crate::trajgen::{control_stride, reference_configuration, TaskReference};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseKind {
    Asynchronous,
    SynchronousSame,
    SynchronousOpposite,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_name")]
    pub name: String,
    pub case_kind: CaseKind,
    /// Seconds.
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    /// Hz.
    #[serde(default = "default_control_rate")]
    pub control_rate: f64,
    /// Peak bend angle per segment, radians.
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    /// Simulator timestep, seconds.
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub rod: RodOverrides,
    #[serde(default)]
    pub actuation: ActuationConfig,
    #[serde(default)]
    pub gains: GainsConfig,
    #[serde(default)]
    pub plant_perturbation: Perturbation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom: Option<CustomReference>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inputs: Option<InputsConfig>,
}

fn default_name() -> String {
    "scenario".into()
}
fn default_horizon() -> f64 {
    10.0
}
fn default_control_rate() -> f64 {
    20.0
}
fn default_amplitude() -> f64 {
    0.6
}
fn default_dt() -> f64 {
    0.005
}
fn one() -> f64 {
    1.0
}
fn default_u_max() -> f64 {
    crate::trajgen::DEFAULT_U_MAX
}
fn default_omega() -> f64 {
    crate::trajgen::DEFAULT_OMEGA
}
fn default_zeta() -> f64 {
    crate::trajgen::DEFAULT_ZETA
}

/// Unset fields keep the fixture rod's values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RodOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment_nodes: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ea: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ei: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gj: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub damping_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActuationConfig {
    /// Diagonal of Λ; calibrated to a 45° bend per unit input when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Vec<f64>>,
    #[serde(default = "default_u_max")]
    pub u_max: f64,
}

impl Default for ActuationConfig {
    fn default() -> Self {
        Self {
            lambda: None,
            u_max: default_u_max(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsConfig {
    #[serde(default = "default_omega")]
    pub omega: f64,
    #[serde(default = "default_zeta")]
    pub zeta: f64,
}

impl Default for GainsConfig {
    fn default() -> Self {
        Self {
            omega: default_omega(),
            zeta: default_zeta(),
        }
    }
}

/// Plant-only changes relative to the models used for generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Perturbation {
    /// Factor on EA, EI and GJ.
    #[serde(default = "one")]
    pub stiffness: f64,
    /// Factor on the damping coefficients.
    #[serde(default = "one")]
    pub damping: f64,
    /// Relative amplitude of a seeded uniform jitter on node masses.
    #[serde(default)]
    pub mass_jitter: f64,
}

impl Default for Perturbation {
    fn default() -> Self {
        Self {
            stiffness: 1.0,
            damping: 1.0,
            mass_jitter: 0.0,
        }
    }
}

/// Reference samples for `case_kind = "custom"`, on the control grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomReference {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angles: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tips: Option<Vec<[f64; 3]>>,
}

/// An explicit input schedule for `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputsConfig {
    pub values: Vec<Vec<f64>>,
}

pub const SCHEMA: &str = r#"# Scenario file (TOML). Unknown keys are rejected.

name = "scenario"              # free text
case_kind = "asynchronous"     # required: asynchronous | synchronous_same
                               #   | synchronous_opposite | custom
horizon = 10.0                 # s, > 0, a whole number of control periods
control_rate = 20.0            # Hz, 1/control_rate must be a multiple of dt
amplitude = 0.6                # rad, peak bend of each segment
dt = 0.005                     # s, simulator timestep
seed = 0                       # drives plant_perturbation.mass_jitter

[rod]                          # every key optional, fixture values shown
segment_nodes = [8, 8]         # nodes per segment, each >= 3
length = 0.25                  # m
mass = 0.05                    # kg
ea = 20000.0                   # N/m
ei = 0.5                       # J
gj = 0.3                       # J
damping_rate = 10.0            # 1/s, damping = rate * mass

[actuation]
# lambda = [3.95, 3.95]        # diagonal of the input scaling, N per unit;
                               # default: calibrated to 45 deg per unit input
u_max = 10.0                   # symmetric input bound

[gains]
omega = 10.0                   # rad/s
zeta = 1.0

[plant_perturbation]           # applied to the executing plant only
stiffness = 1.0                # factor on ea, ei, gj, > 0
damping = 1.0                  # factor on damping, > 0
mass_jitter = 0.0              # in [0, 1): node masses * (1 + U(-j, j))

# [custom]                     # required when case_kind = "custom";
# angles = [[0.0, 0.0], ...]   # bend-angle pairs, or
# tips = [[0.25, 0.0, 0.0], ...] # tip targets (m), one per control sample

# [inputs]                     # optional, used by `simulate`
# values = [[0.0, 0.0], ...]   # one input per control period, last holds
"#;

impl Scenario {
    pub fn new(case_kind: CaseKind) -> Self {
        Self {
            name: default_name(),
            case_kind,
            horizon: default_horizon(),
            control_rate: default_control_rate(),
            amplitude: default_amplitude(),
            dt: default_dt(),
            seed: 0,
            rod: RodOverrides::default(),
            actuation: ActuationConfig::default(),
            gains: GainsConfig::default(),
            plant_perturbation: Perturbation::default(),
            custom: None,
            inputs: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn control_period(&self) -> f64 {
        1.0 / self.control_rate
    }

    /// Control instants including both endpoints.
    pub fn sample_count(&self) -> usize {
        (self.horizon * self.control_rate).round() as usize + 1
    }

    pub fn validate(&self) -> Result<()> {
        positive("horizon", self.horizon)?;
        positive("control_rate", self.control_rate)?;
        positive("dt", self.dt)?;
        if !self.amplitude.is_finite() {
            return Err(Error::validation("amplitude", "must be finite"));
        }
        let periods = self.horizon * self.control_rate;
        if (periods - periods.round()).abs() > 1e-9 * periods.max(1.0) || periods.round() < 2.0 {
            return Err(Error::validation(
                "horizon",
                "must span a whole number (at least 2) of control periods",
            ));
        }
        control_stride(self.control_period(), self.dt)?;
        let p = &self.plant_perturbation;
        positive("plant_perturbation.stiffness", p.stiffness)?;
        positive("plant_perturbation.damping", p.damping)?;
        if !(0.0..1.0).contains(&p.mass_jitter) {
            return Err(Error::validation("plant_perturbation.mass_jitter", "must lie in [0, 1)"));
        }
        positive("actuation.u_max", self.actuation.u_max)?;
        positive("gains.omega", self.gains.omega)?;
        if !(self.gains.zeta >= 0.0 && self.gains.zeta.is_finite()) {
            return Err(Error::validation("gains.zeta", "must be non-negative"));
        }
        let params = self.rod_params()?;
        let m = params.segment_nodes.len();
        if let Some(l) = &self.actuation.lambda {
            if l.len() != m {
                return Err(Error::validation("actuation.lambda", format!("expected {m} entries")));
            }
        }
        self.actuation_model(&params)?;
        if self.case_kind != CaseKind::Custom && m != 2 {
            return Err(Error::validation("rod.segment_nodes", "the benchmark cases need two segments"));
        }
        if self.case_kind == CaseKind::Custom {
            let c = self
                .custom
                .as_ref()
                .ok_or_else(|| Error::validation("custom", "required when case_kind is custom"))?;
            let n = match (&c.angles, &c.tips) {
                (Some(a), None) => {
                    if let Some(k) = a.iter().position(|row| row.len() != m) {
                        return Err(Error::validation(format!("custom.angles[{k}]"), format!("expected {m} angles")));
                    }
                    a.len()
                }
                (None, Some(t)) => t.len(),
                _ => return Err(Error::validation("custom", "give exactly one of angles or tips")),
            };
            if n != self.sample_count() {
                return Err(Error::validation(
                    "custom",
                    format!("expected {} samples (horizon * control_rate + 1), got {n}", self.sample_count()),
                ));
            }
        }
        if let Some(inputs) = &self.inputs {
            if inputs.values.is_empty() {
                return Err(Error::validation("inputs.values", "must not be empty"));
            }
            if let Some(k) = inputs.values.iter().position(|u| u.len() != m) {
                return Err(Error::validation(format!("inputs.values[{k}]"), format!("expected {m} inputs")));
            }
        }
        Ok(())
    }

    /// The nominal rod: the fixture with this scenario's overrides.
    pub fn rod_params(&self) -> Result<RodParams> {
        let r = &self.rod;
        let base = RodParams::fixture();
        let seg = r.segment_nodes.clone().unwrap_or_else(|| base.segment_nodes.clone());
        for (key, v) in [
            ("rod.length", r.length),
            ("rod.mass", r.mass),
            ("rod.ea", r.ea),
            ("rod.ei", r.ei),
            ("rod.gj", r.gj),
        ] {
            if let Some(v) = v {
                positive(key, v)?;
            }
        }
        if let Some(d) = r.damping_rate {
            if !(d >= 0.0 && d.is_finite()) {
                return Err(Error::validation("rod.damping_rate", "must be non-negative"));
            }
        }
        if seg.is_empty() || seg.iter().any(|&n| n < 3) {
            return Err(Error::validation("rod.segment_nodes", "every segment needs at least 3 nodes"));
        }
        let params = RodParams::uniform(
            seg,
            r.length.unwrap_or(FIXTURE_LENGTH),
            r.mass.unwrap_or(FIXTURE_MASS),
            r.ea.unwrap_or(base.ea),
            r.ei.unwrap_or(base.ei),
            r.gj.unwrap_or(base.gj),
            r.damping_rate.unwrap_or(FIXTURE_DAMPING_RATE),
        );
        params.validate()?;
        Ok(params)
    }

    pub fn actuation_model(&self, params: &RodParams) -> Result<ActuationModel> {
        match &self.actuation.lambda {
            None => Ok(ActuationModel::calibrated(params)),
            Some(d) => ActuationModel::new(
                params.segment_nodes.clone(),
                DMatrix::from_diagonal(&DVector::from_row_slice(d)),
            )
            .map_err(|e| match e {
                Error::SingularLambda => Error::validation("actuation.lambda", "must be invertible"),
                other => other,
            }),
        }
    }

    fn sim_config(&self) -> SimConfig {
        SimConfig {
            dt: self.dt,
            ..SimConfig::default()
        }
    }

    /// The plant the generators model.
    pub fn nominal_plant(&self) -> Result<Plant> {
        let params = self.rod_params()?;
        let actuation = self.actuation_model(&params)?;
        Ok(Plant {
            params,
            actuation,
            config: self.sim_config(),
        })
    }

    /// The plant the inputs are executed on, with the perturbation applied.
    pub fn perturbed_plant(&self) -> Result<Plant> {
        let mut plant = self.nominal_plant()?;
        let p = &self.plant_perturbation;
        plant.params.ea *= p.stiffness;
        plant.params.ei *= p.stiffness;
        plant.params.gj *= p.stiffness;
        for c in plant.params.damping.iter_mut() {
            *c *= p.damping;
        }
        if p.mass_jitter > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            for m in plant.params.node_masses.iter_mut() {
                *m *= 1.0 + rng.gen_range(-p.mass_jitter..p.mass_jitter);
            }
        }
        Ok(plant)
    }

    pub fn control_settings(&self) -> ControlSettings {
        ControlSettings {
            omega: self.gains.omega,
            zeta: self.gains.zeta,
            u_max: self.actuation.u_max,
        }
    }
}

const FIXTURE_LENGTH: f64 = 0.25;
const FIXTURE_MASS: f64 = 0.05;
const FIXTURE_DAMPING_RATE: f64 = 10.0;

fn positive(key: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::validation(key, "must be positive and finite"))
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    Scenario::from_toml(&fs::read_to_string(path)?)
}

/// Ramp up over the first quarter of `horizon`, hold for a quarter, return
/// over the third quarter, then rest. Each transition is cycloidal, so
/// velocity and acceleration vanish at both of its ends.
pub fn ramp_hold_return(t: f64, horizon: f64) -> f64 {
    let q = 0.25 * horizon;
    let cycloid = |x: f64| x - (std::f64::consts::TAU * x).sin() / std::f64::consts::TAU;
    if t <= 0.0 || t >= 3.0 * q {
        0.0
    } else if t < q {
        cycloid(t / q)
    } else if t <= 2.0 * q {
        1.0
    } else {
        1.0 - cycloid((t - 2.0 * q) / q)
    }
}

pub fn build_reference(scenario: &Scenario) -> Result<TaskReference> {
    let period = scenario.control_period();
    let (a, h) = (scenario.amplitude, scenario.horizon);
    let lag = 0.25 * h;
    let pair = |x: f64, y: f64| DVector::from_vec(vec![x, y]);
    let angles = (0..scenario.sample_count()).map(|k| {
        let t = k as f64 * period;
        let s = ramp_hold_return(t, h);
        match scenario.case_kind {
            CaseKind::Asynchronous => pair(a * s, a * ramp_hold_return(t - lag, h)),
            CaseKind::SynchronousSame => pair(a * s, a * s),
            CaseKind::SynchronousOpposite => pair(a * s, -a * s),
            CaseKind::Custom => unreachable!(),
        }
    });
    match scenario.case_kind {
        CaseKind::Custom => {
            let c = scenario
                .custom
                .as_ref()
                .ok_or_else(|| Error::validation("custom", "required when case_kind is custom"))?;
            if let Some(tips) = &c.tips {
                Ok(TaskReference::Tips {
                    period,
                    tips: tips.iter().map(|t| Vec3::new(t[0], t[1], t[2])).collect(),
                })
            } else {
                let angles = c.angles.as_ref().ok_or_else(|| Error::validation("custom", "angles or tips required"))?;
                Ok(TaskReference::BendAngles {
                    period,
                    angles: angles.iter().map(|a| DVector::from_row_slice(a)).collect(),
                })
            }
        }
        _ => Ok(TaskReference::BendAngles {
            period,
            angles: angles.collect(),
        }),
    }
}

/// Tracking statistics over a common time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub times: Vec<f64>,
    /// `‖r(t) − r̄(t)‖` at every sample.
    pub errors: Vec<f64>,
    pub mean: f64,
    pub mean_x: f64,
    pub mean_y: f64,
    pub std: f64,
    pub std_x: f64,
    pub std_y: f64,
    pub max: f64,
    pub max_x: f64,
    pub max_y: f64,
    pub saturation_fraction: f64,
}

impl MetricsReport {
    /// Time averages are trapezoidal over `[t_0, t_end]`; spreads are the
    /// root of the time-averaged squared deviation from the mean.
    pub fn from_tips(times: &[f64], actual: &[Vec3], reference: &[Vec3], saturation_fraction: f64) -> Result<Self> {
        if times.len() != actual.len() || times.len() != reference.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} times, {} tips and {} reference tips",
                times.len(),
                actual.len(),
                reference.len()
            )));
        }
        if times.is_empty() {
            return Err(Error::TooFewSamples { needed: 1, got: 0 });
        }
        let d: Vec<Vec3> = actual.iter().zip(reference).map(|(r, rb)| r - rb).collect();
        let errors: Vec<f64> = d.iter().map(|v| v.norm()).collect();
        let ex: Vec<f64> = d.iter().map(|v| v.x.abs()).collect();
        let ey: Vec<f64> = d.iter().map(|v| v.y.abs()).collect();
        let (mean, std) = trapezoid_stats(times, &errors);
        let (mean_x, std_x) = trapezoid_stats(times, &ex);
        let (mean_y, std_y) = trapezoid_stats(times, &ey);
        let max_of = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max);
        Ok(Self {
            times: times.to_vec(),
            mean,
            mean_x,
            mean_y,
            std,
            std_x,
            std_y,
            max: max_of(&errors),
            max_x: max_of(&ex),
            max_y: max_of(&ey),
            errors,
            saturation_fraction,
        })
    }
}

/// Trapezoidal time average and spread of `v`.
pub fn trapezoid_stats(t: &[f64], v: &[f64]) -> (f64, f64) {
    let span = t[t.len() - 1] - t[0];
    if t.len() < 2 || span <= 0.0 {
        return (v[0], 0.0);
    }
    let avg = |f: &dyn Fn(f64) -> f64| {
        t.windows(2)
            .zip(v.windows(2))
            .map(|(tw, vw)| 0.5 * (tw[1] - tw[0]) * (f(vw[0]) + f(vw[1])))
            .sum::<f64>()
            / span
    };
    let mean = avg(&|x| x);
    let var = avg(&|x| (x - mean) * (x - mean));
    (mean, var.max(0.0).sqrt())
}

/// One generator's inputs executed on the (perturbed) plant.
#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub plan: InputPlan,
    pub trajectory: Trajectory,
    pub metrics: MetricsReport,
}

pub fn execute_plan(plan: &InputPlan, plant: &Plant) -> Result<Execution> {
    let trajectory = plan.execute(plant)?;
    let metrics = MetricsReport::from_tips(
        &trajectory.times,
        &trajectory.tips,
        &plan.reference.tips,
        plan.saturation_fraction(),
    )?;
    Ok(Execution {
        plan: plan.clone(),
        trajectory,
        metrics,
    })
}

pub fn plan_inputs(scenario: &Scenario, generator: &str) -> Result<InputPlan> {
    let reference = build_reference(scenario)?;
    let registry = GeneratorRegistry::default();
    registry
        .get(generator)?
        .plan(&reference, &scenario.nominal_plant()?, &scenario.control_settings())
}

/// Execute the scenario's explicit `[inputs]` when present, otherwise the
/// inputs planned by `generator`, on the perturbed plant.
pub fn simulate_scenario(scenario: &Scenario, generator: &str) -> Result<Execution> {
    scenario.validate()?;
    let plant = scenario.perturbed_plant()?;
    let plan = match &scenario.inputs {
        None => plan_inputs(scenario, generator)?,
        Some(cfg) => {
            let chain = ArcChain::from_params(&plant.params)?;
            let reference = build_reference(scenario)?.resolve(&chain)?;
            let n = reference.len();
            let last = cfg.values.last().expect("validated non-empty");
            let inputs = (0..n)
                .map(|k| DVector::from_row_slice(cfg.values.get(k).unwrap_or(last)))
                .collect();
            // no model prediction: the reference configurations stand in
            let predicted = reference
                .angles
                .iter()
                .map(|a| reference_configuration(a.as_slice(), &plant.params, &plant.actuation))
                .collect::<Result<Vec<_>>>()?;
            InputPlan {
                generator: "inputs".into(),
                reference,
                inputs,
                predicted,
                saturated: vec![false; n],
            }
        }
    };
    execute_plan(&plan, &plant)
}

/// The generator's own prediction as a trajectory on the control grid,
/// with errors against the reference.
pub fn predicted_trajectory(plan: &InputPlan) -> Result<(Trajectory, MetricsReport)> {
    let times = plan.reference.times();
    let tips: Vec<Vec3> = plan.predicted.iter().map(tip_position).collect();
    let metrics = MetricsReport::from_tips(&times, &tips, &plan.reference.tips, plan.saturation_fraction())?;
    Ok((
        Trajectory {
            times,
            states: plan.predicted.clone(),
            inputs: plan.inputs.clone(),
            tips,
        },
        metrics,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub der: Execution,
    pub pcc: Execution,
}

/// Generate with both pipelines on the nominal model, then execute both
/// input sequences open loop on the perturbed plant.
pub fn run_comparison(scenario: &Scenario) -> Result<Comparison> {
    scenario.validate()?;
    let plant = scenario.perturbed_plant()?;
    Ok(Comparison {
        der: execute_plan(&plan_inputs(scenario, "der")?, &plant)?,
        pcc: execute_plan(&plan_inputs(scenario, "pcc")?, &plant)?,
    })
}

pub const SWEEP_FACTORS: [f64; 5] = [0.9, 0.95, 1.0, 1.05, 1.1];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub factors: Vec<f64>,
    pub der: Vec<MetricsReport>,
    pub pcc: Vec<MetricsReport>,
}

impl SweepReport {
    pub fn mean_der(&self) -> f64 {
        self.der.iter().map(|m| m.mean).sum::<f64>() / self.der.len() as f64
    }

    pub fn mean_pcc(&self) -> f64 {
        self.pcc.iter().map(|m| m.mean).sum::<f64>() / self.pcc.len() as f64
    }
}

/// The comparison repeated with the plant stiffness scaled by each factor
/// (on top of the scenario's own perturbation). Inputs are generated once.
pub fn run_sweep(scenario: &Scenario, factors: &[f64]) -> Result<SweepReport> {
    scenario.validate()?;
    let der = plan_inputs(scenario, "der")?;
    let pcc = plan_inputs(scenario, "pcc")?;
    let mut report = SweepReport {
        factors: factors.to_vec(),
        der: Vec::with_capacity(factors.len()),
        pcc: Vec::with_capacity(factors.len()),
    };
    for &f in factors {
        let mut s = scenario.clone();
        s.plant_perturbation.stiffness *= f;
        let plant = s.perturbed_plant()?;
        report.der.push(execute_plan(&der, &plant)?.metrics);
        report.pcc.push(execute_plan(&pcc, &plant)?.metrics);
    }
    Ok(report)
}

/// Header of the exported table for `n` nodes and `m` inputs.
pub fn table_header(n: usize, m: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for i in 0..n {
        for c in ["x", "y", "z"] {
            h.push(format!("{c}{i}"));
        }
    }
    h.extend((0..n - 1).map(|i| format!("phi{i}")));
    h.extend((0..m).map(|j| format!("u{j}")));
    h.extend(["tip_x", "tip_y", "tip_z", "err"].map(String::from));
    h
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportPaths {
    pub table: PathBuf,
    pub metrics: PathBuf,
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Write `<prefix>.csv` (one row per sample of `trajectory`) and
/// `<prefix>.metrics.csv` (mean, std and max rows, total/x/y columns).
pub fn export_trajectory(trajectory: &Trajectory, metrics: &MetricsReport, prefix: &Path) -> Result<ExportPaths> {
    if metrics.errors.len() != trajectory.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} samples but {} errors",
            trajectory.len(),
            metrics.errors.len()
        )));
    }
    let n = trajectory.states.first().map_or(0, |s| s.node_count());
    let m = trajectory.inputs.first().map_or(0, |u| u.len());
    let mut out = table_header(n, m).join(",");
    out.push('\n');
    for k in 0..trajectory.len() {
        let s = &trajectory.states[k];
        let tip = tip_position(s);
        let mut row: Vec<f64> = vec![trajectory.times[k]];
        row.extend(s.nodes.iter().flat_map(|x| [x.x, x.y, x.z]));
        row.extend(&s.twists);
        match trajectory.inputs.get(k) {
            Some(u) => row.extend(u.iter()),
            None => row.extend(std::iter::repeat_n(0.0, m)),
        }
        row.extend([tip.x, tip.y, tip.z, metrics.errors[k]]);
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    if let Some(dir) = prefix.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let paths = ExportPaths {
        table: with_suffix(prefix, ".csv"),
        metrics: with_suffix(prefix, ".metrics.csv"),
    };
    fs::write(&paths.table, out)?;
    fs::write(&paths.metrics, metrics_table(metrics))?;
    Ok(paths)
}

/// Mean, std and max rows with total, x and y columns, in metres.
pub fn metrics_table(m: &MetricsReport) -> String {
    let mut s = String::from("statistic,total,x,y\n");
    for (name, t, x, y) in [
        ("mean", m.mean, m.mean_x, m.mean_y),
        ("std", m.std, m.std_x, m.std_y),
        ("max", m.max, m.max_x, m.max_y),
    ] {
        let _ = writeln!(s, "{name},{t},{x},{y}");
    }
    let _ = writeln!(s, "saturation_fraction,{},,", m.saturation_fraction);
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_gets_defaults() {
        let s = Scenario::from_toml("case_kind = \"synchronous_same\"\n").unwrap();
        assert_eq!(s, Scenario::new(CaseKind::SynchronousSame));
        assert_eq!(s.sample_count(), 201);
    }

    #[test]
    fn negative_horizon_names_its_key() {
        let err = Scenario::from_toml("case_kind = \"asynchronous\"\nhorizon = -1.0\n").unwrap_err();
        assert!(matches!(err, Error::Validation { ref key, .. } if key == "horizon"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = Scenario::from_toml("case_kind = \"asynchronous\"\nhorizn = 3.0\n").unwrap_err();
        assert!(matches!(err, Error::Parse(_)));
        let err = Scenario::from_toml("case_kind = \"asynchronous\"\n[rod]\nstiff = 3.0\n").unwrap_err();
        assert!(matches!(err, Error::Parse(_)));
    }

    #[test]
    fn nested_validation_keys() {
        let err = Scenario::from_toml("case_kind = \"asynchronous\"\n[plant_perturbation]\nstiffness = 0.0\n").unwrap_err();
        assert!(matches!(err, Error::Validation { ref key, .. } if key == "plant_perturbation.stiffness"));
        let err = Scenario::from_toml("case_kind = \"custom\"\n").unwrap_err();
        assert!(matches!(err, Error::Validation { ref key, .. } if key == "custom"));
        let err = Scenario::from_toml("case_kind = \"asynchronous\"\ncontrol_rate = 30.0\n").unwrap_err();
        assert!(matches!(err, Error::Validation { ref key, .. } if key == "control_rate"));
    }

    #[test]
    fn toml_round_trip() {
        let mut s = Scenario::new(CaseKind::Asynchronous);
        s.rod.ei = Some(0.4);
        s.actuation.lambda = Some(vec![1.0, 2.0]);
        s.plant_perturbation.mass_jitter = 0.05;
        s.seed = 7;
        let back = Scenario::from_toml(&s.to_toml().unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn schema_example_parses() {
        let s = Scenario::from_toml(SCHEMA).unwrap();
        assert_eq!(s.case_kind, CaseKind::Asynchronous);
        assert_eq!(s.rod_params().unwrap(), RodParams::fixture());
    }

    #[test]
    fn profile_is_zero_at_both_ends() {
        assert_eq!(ramp_hold_return(0.0, 10.0), 0.0);
        assert_eq!(ramp_hold_return(10.0, 10.0), 0.0);
        assert_eq!(ramp_hold_return(4.0, 10.0), 1.0);
    }

    #[test]
    fn constant_offset_metrics() {
        let times: Vec<f64> = (0..11).map(|k| 0.1 * k as f64).collect();
        let r: Vec<Vec3> = times.iter().map(|t| Vec3::new(*t, t.sin(), 0.0)).collect();
        let d = Vec3::new(0.003, -0.004, 0.0);
        let a: Vec<Vec3> = r.iter().map(|x| x + d).collect();
        let m = MetricsReport::from_tips(&times, &a, &r, 0.0).unwrap();
        assert!((m.mean - 0.005).abs() < 1e-15 && m.std < 1e-15);
        assert!((m.mean_x - 0.003).abs() < 1e-15 && (m.mean_y - 0.004).abs() < 1e-15);
        assert!((m.max - 0.005).abs() < 1e-15);
    }

    #[test]
    fn header_column_count() {
        assert_eq!(table_header(16, 2).len(), 70);
    }
}
