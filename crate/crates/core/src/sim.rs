//! Implicit-Euler time stepping of `M q̈ = F_int(q) − C q̇ + B(q) Λ u`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::actuation::{external_force, ActuationModel};
use crate::elastic::{elastic_energy, force_jacobian, internal_forces, mass_matrix, RodParams};
use crate::error::{Error, Result};
use crate::geometry::{tip_position, RodState, Vec3};

/// Residual floor below which Newton stops regardless of the relative
/// tolerance; it sits just above the rounding noise of the residual.
const NEWTON_ABS_FLOOR: f64 = 1e-11;
const LINE_SEARCH_HALVINGS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    /// Relative residual tolerance.
    pub newton_tol: f64,
    pub newton_max_iters: usize,
    /// Coordinates held fixed with zero velocity.
    pub clamped_dofs: Vec<usize>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.005,
            newton_tol: 1e-9,
            newton_max_iters: 50,
            clamped_dofs: cantilever_clamp(),
        }
    }
}

/// Node 0, node 1 and the first twist: fixes the base position, base
/// tangent and base twist.
pub fn cantilever_clamp() -> Vec<usize> {
    (0..7).collect()
}

impl SimConfig {
    pub fn unclamped(dt: f64) -> Self {
        Self {
            dt,
            clamped_dofs: vec![],
            ..Self::default()
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::validation("sim.dt", "timestep must be positive"));
        }
        if !(self.newton_tol > 0.0) {
            return Err(Error::validation("sim.newton_tol", "tolerance must be positive"));
        }
        if self.newton_max_iters == 0 {
            return Err(Error::validation("sim.newton_max_iters", "must be at least 1"));
        }
        if let Some(bad) = self.clamped_dofs.iter().find(|&&d| d >= dim) {
            return Err(Error::validation("sim.clamped_dofs", format!("index {bad} out of range")));
        }
        Ok(())
    }

    pub fn free_dofs(&self, dim: usize) -> Vec<usize> {
        let mut clamped = vec![false; dim];
        for &d in &self.clamped_dofs {
            clamped[d] = true;
        }
        (0..dim).filter(|&d| !clamped[d]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub iterations: usize,
    pub residual: f64,
}

/// One implicit-Euler step. `B(q)` is frozen at the pre-step configuration
/// and damping acts on the end-of-step velocity.
pub fn step(
    state: &RodState,
    u: &DVector<f64>,
    params: &RodParams,
    actuation: &ActuationModel,
    config: &SimConfig,
) -> Result<RodState> {
    step_with_report(state, u, params, actuation, config).map(|(s, _)| s)
}

pub fn step_with_report(
    state: &RodState,
    u: &DVector<f64>,
    params: &RodParams,
    actuation: &ActuationModel,
    config: &SimConfig,
) -> Result<(RodState, StepReport)> {
    let dim = state.dof_len();
    config.validate(dim)?;
    let dt = config.dt;
    let q0 = state.dofs();
    let v0 = &state.velocity;
    let mass = mass_matrix(params);
    let damping = DVector::from_column_slice(&params.damping);
    if damping.len() != dim {
        return Err(Error::DimensionMismatch(format!("damping must have length {dim}")));
    }
    // actuation and gravity, evaluated once at the start of the step
    let f_ext = external_force(state, &DVector::zeros(dim), u, actuation, params)?;
    let free = config.free_dofs(dim);
    let zero_v = DVector::zeros(dim);

    let residual = |x: &DVector<f64>| -> Result<(DVector<f64>, RodState)> {
        let trial = state.with_dofs(x, zero_v.clone())?;
        let f_int = internal_forces(&trial, params)?;
        let r = DVector::from_iterator(
            free.len(),
            free.iter().map(|&k| {
                mass[k] * (x[k] - q0[k] - dt * v0[k]) / (dt * dt) + damping[k] * (x[k] - q0[k]) / dt
                    - f_int[k]
                    - f_ext[k]
            }),
        );
        Ok((r, trial))
    };

    let f_int0 = internal_forces(state, params)?;
    let scale = free
        .iter()
        .map(|&k| f_int0[k].abs().max(f_ext[k].abs()).max((mass[k] * v0[k] / dt).abs()))
        .fold(0.0, f64::max);
    let tol = (config.newton_tol * scale).max(NEWTON_ABS_FLOOR);

    let mut x = q0.clone();
    for &k in &free {
        x[k] += dt * v0[k];
    }
    let (mut r, mut trial) = residual(&x)?;
    let mut norm = r.amax();
    let mut iterations = 0;
    while norm > tol {
        if iterations == config.newton_max_iters {
            return Err(Error::NewtonDivergence { iterations, residual: norm });
        }
        iterations += 1;
        let k_full = force_jacobian(&trial, params)?;
        let jac = DMatrix::from_fn(free.len(), free.len(), |a, b| {
            let (i, j) = (free[a], free[b]);
            let diag = if i == j { mass[i] / (dt * dt) + damping[i] / dt } else { 0.0 };
            diag - k_full[(i, j)]
        });
        let delta = jac
            .lu()
            .solve(&(-&r))
            .ok_or(Error::NewtonDivergence { iterations, residual: norm })?;

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=LINE_SEARCH_HALVINGS {
            let mut xn = x.clone();
            for (a, &k) in free.iter().enumerate() {
                xn[k] += alpha * delta[a];
            }
            if let Ok((rn, tn)) = residual(&xn) {
                let nn = rn.amax();
                if nn < norm {
                    accepted = Some((xn, rn, tn, nn));
                    break;
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((xn, rn, tn, nn)) => {
                x = xn;
                r = rn;
                trial = tn;
                norm = nn;
            }
            None => return Err(Error::NewtonDivergence { iterations, residual: norm }),
        }
    }

    let mut velocity = DVector::zeros(dim);
    for &k in &free {
        velocity[k] = (x[k] - q0[k]) / dt;
    }
    let mut next = trial;
    next.velocity = velocity;
    Ok((next.with_transported_reference()?, StepReport { iterations, residual: norm }))
}

/// Piecewise-constant input sequence: `values[k]` holds on
/// `[k·period, (k+1)·period)`; the last value holds afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSchedule {
    pub period: f64,
    pub values: Vec<DVector<f64>>,
}

impl InputSchedule {
    pub fn new(period: f64, values: Vec<DVector<f64>>) -> Result<Self> {
        if !(period > 0.0) {
            return Err(Error::validation("schedule.period", "must be positive"));
        }
        if values.is_empty() {
            return Err(Error::TooFewSamples { needed: 1, got: 0 });
        }
        Ok(Self { period, values })
    }

    pub fn constant(u: DVector<f64>, period: f64) -> Self {
        Self {
            period,
            values: vec![u],
        }
    }

    pub fn horizon(&self) -> f64 {
        self.period * self.values.len() as f64
    }

    pub fn at(&self, t: f64) -> &DVector<f64> {
        let k = (t / self.period + 1e-9).floor().max(0.0) as usize;
        &self.values[k.min(self.values.len() - 1)]
    }
}

/// Time-indexed states with the input applied over each following step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<RodState>,
    pub inputs: Vec<DVector<f64>>,
    pub tips: Vec<Vec3>,
}

impl Trajectory {
    pub fn new(state: RodState, time: f64) -> Self {
        let tip = tip_position(&state);
        Self {
            times: vec![time],
            states: vec![state],
            inputs: vec![],
            tips: vec![tip],
        }
    }

    /// Record `u` as the input applied from the last sample, followed by the
    /// state it produced.
    pub fn push(&mut self, u: DVector<f64>, state: RodState, time: f64) {
        self.inputs.push(u);
        self.tips.push(tip_position(&state));
        self.states.push(state);
        self.times.push(time);
    }

    /// Give the final sample an input (the last one applied) so every
    /// column has the same length.
    pub fn close(&mut self, m: usize) {
        if self.inputs.len() < self.states.len() {
            let last = self.inputs.last().cloned().unwrap_or_else(|| DVector::zeros(m));
            self.inputs.push(last);
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn final_state(&self) -> &RodState {
        self.states.last().expect("trajectory has an initial state")
    }

    /// Every `stride`-th sample, starting with the first.
    pub fn subsample(&self, stride: usize) -> Trajectory {
        Trajectory {
            times: every(&self.times, stride),
            states: every(&self.states, stride),
            inputs: every(&self.inputs, stride),
            tips: every(&self.tips, stride),
        }
    }

    /// The applied inputs as a schedule with one entry per step.
    pub fn input_schedule(&self, dt: f64) -> InputSchedule {
        let steps = self.states.len().saturating_sub(1).max(1);
        InputSchedule {
            period: dt,
            values: self.inputs[..steps.min(self.inputs.len())].to_vec(),
        }
    }
}

fn every<T: Clone>(v: &[T], stride: usize) -> Vec<T> {
    v.iter().step_by(stride.max(1)).cloned().collect()
}

/// Open-loop simulation of `schedule` for `steps` steps from `state0`.
pub fn rollout(
    state0: &RodState,
    schedule: &InputSchedule,
    steps: usize,
    params: &RodParams,
    actuation: &ActuationModel,
    config: &SimConfig,
) -> Result<Trajectory> {
    let mut traj = Trajectory::new(state0.clone(), 0.0);
    let mut state = state0.clone();
    for k in 0..steps {
        let t = k as f64 * config.dt;
        let u = schedule.at(t).clone();
        state = step(&state, &u, params, actuation, config)?;
        traj.push(u, state.clone(), (k + 1) as f64 * config.dt);
    }
    traj.close(actuation.input_dim());
    Ok(traj)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergySplit {
    pub kinetic: f64,
    pub elastic: f64,
}

impl EnergySplit {
    pub fn total(&self) -> f64 {
        self.kinetic + self.elastic
    }
}

/// `½ q̇ᵀ M q̇` and `E_s + E_b + E_t`.
pub fn total_energy(state: &RodState, params: &RodParams) -> Result<EnergySplit> {
    let m = mass_matrix(params);
    if m.len() != state.velocity.len() {
        return Err(Error::DimensionMismatch("mass matrix and velocity lengths differ".into()));
    }
    let kinetic = 0.5 * state.velocity.iter().zip(m.iter()).map(|(v, m)| m * v * v).sum::<f64>();
    Ok(EnergySplit {
        kinetic,
        elastic: elastic_energy(state, params)?.total(),
    })
}

/// Model, actuation and integrator settings bundled together.
#[derive(Debug, Clone, PartialEq)]
pub struct Plant {
    pub params: RodParams,
    pub actuation: ActuationModel,
    pub config: SimConfig,
}

impl Plant {
    pub fn fixture() -> Self {
        let params = RodParams::fixture();
        let actuation = ActuationModel::calibrated(&params);
        Self {
            params,
            actuation,
            config: SimConfig::default(),
        }
    }

    pub fn rest_state(&self) -> Result<RodState> {
        RodState::straight(self.params.node_count(), self.params.rest_length)
    }

    pub fn step(&self, state: &RodState, u: &DVector<f64>) -> Result<RodState> {
        step(state, u, &self.params, &self.actuation, &self.config)
    }

    pub fn rollout(&self, state0: &RodState, schedule: &InputSchedule, steps: usize) -> Result<Trajectory> {
        rollout(state0, schedule, steps, &self.params, &self.actuation, &self.config)
    }
}
