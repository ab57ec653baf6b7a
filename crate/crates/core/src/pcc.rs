//! Piecewise-constant-curvature baseline in bend-angle coordinates.
//!
//! Each segment carries two point masses, at its arc midpoint and at its
//! end, each holding half the segment's mass. The model is
//! `M_p(θ) θ̈ + C_p(θ, θ̇) θ̇ + D_p θ̇ + K θ = τ`, with `C_p` built from
//! Christoffel symbols of finite-differenced `M_p`. Virtual torques are
//! mapped to inputs afterwards through `τ = Λ_τ u`, `Λ_τ = ē Λ`: a force
//! pair of magnitude `f` across an edge of length `ē` is a couple `f ē`.

use nalgebra::{DMatrix, DVector};

use crate::actuation::ActuationModel;
use crate::elastic::RodParams;
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::kinematics::{segment_bend_angles, ArcChain};
use crate::sim::{InputSchedule, Plant};
use crate::trajgen::{reference_derivatives, ReferencePath, TaskReference};

const CHRISTOFFEL_STEP: f64 = 1e-6;
/// RK4 substep bound for the PCC plant.
const PCC_MAX_DT: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct PccState {
    pub theta: DVector<f64>,
    pub theta_dot: DVector<f64>,
}

impl PccState {
    pub fn new(theta: DVector<f64>, theta_dot: DVector<f64>) -> Result<Self> {
        if theta.len() != theta_dot.len() {
            return Err(Error::DimensionMismatch("theta and theta_dot lengths differ".into()));
        }
        if theta.iter().chain(theta_dot.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("PCC state"));
        }
        Ok(Self { theta, theta_dot })
    }

    pub fn at_rest(theta: DVector<f64>) -> Self {
        let n = theta.len();
        Self {
            theta,
            theta_dot: DVector::zeros(n),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointMass {
    /// Arc length from the base.
    pub position: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PccParams {
    pub chain: ArcChain,
    pub masses: Vec<PointMass>,
    pub stiffness: DVector<f64>,
    pub damping: DVector<f64>,
}

/// Identified on `RodParams::fixture()` by [`identify`] with
/// [`identification_inputs`]; `tests` re-runs the fit.
const FIXTURE_STIFFNESS: [f64; 2] = [0.08255313196652486, 0.08310073695277492];
const FIXTURE_DAMPING: [f64; 2] = [0.017138049545120153, 0.00900735444977897];

impl PccParams {
    /// Lumped masses for `params`' layout with the given diagonal
    /// stiffness and damping.
    pub fn lumped(params: &RodParams, stiffness: DVector<f64>, damping: DVector<f64>) -> Result<Self> {
        let chain = ArcChain::from_params(params)?;
        let m = chain.segments();
        if stiffness.len() != m || damping.len() != m {
            return Err(Error::DimensionMismatch(format!("expected {m} stiffness and damping entries")));
        }
        if stiffness.iter().chain(damping.iter()).any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::validation("pcc", "stiffness and damping must be non-negative"));
        }
        let ell = chain.edge_length;
        let mut masses = Vec::with_capacity(2 * m);
        let mut first = 0;
        for &n in &chain.segment_nodes {
            let seg_mass: f64 = params.node_masses[first..first + n].iter().sum();
            let start = first as f64 * ell;
            let end = (first + n - 1) as f64 * ell;
            masses.push(PointMass {
                position: 0.5 * (start + end),
                mass: 0.5 * seg_mass,
            });
            masses.push(PointMass {
                position: end,
                mass: 0.5 * seg_mass,
            });
            first += n;
        }
        Ok(Self {
            chain,
            masses,
            stiffness,
            damping,
        })
    }

    /// The frozen identification for the fixture rod.
    pub fn fixture() -> Self {
        Self::lumped(
            &RodParams::fixture(),
            DVector::from_row_slice(&FIXTURE_STIFFNESS),
            DVector::from_row_slice(&FIXTURE_DAMPING),
        )
        .expect("fixture layout is valid")
    }

    /// Frozen constants for the fixture rod, a fresh identification
    /// against `plant` otherwise.
    pub fn for_plant(plant: &Plant) -> Result<Self> {
        if plant.params == RodParams::fixture() && plant.actuation == ActuationModel::calibrated(&plant.params) {
            return Ok(Self::fixture());
        }
        let (k, d) = identify(plant, &identification_inputs(plant.actuation.input_dim()), IDENTIFICATION_HORIZON)?;
        Self::lumped(&plant.params, k, d)
    }

    pub fn dim(&self) -> usize {
        self.chain.segments()
    }
}

pub fn pcc_forward_kinematics(theta: &[f64], chain: &ArcChain) -> Result<Vec3> {
    chain.tip(theta)
}

/// `M_p(θ) = Σ m_k J_kᵀ J_k`.
pub fn pcc_mass_matrix(theta: &[f64], pcc: &PccParams) -> Result<DMatrix<f64>> {
    let m = pcc.dim();
    let mut out = DMatrix::zeros(m, m);
    for pm in &pcc.masses {
        let cols = pcc.chain.point_jacobian(theta, pm.position)?;
        for a in 0..m {
            for b in 0..m {
                out[(a, b)] += pm.mass * cols[a].dot(&cols[b]);
            }
        }
    }
    Ok(out)
}

/// `C_p(θ, θ̇)` with `C_ij = Σ_k Γ_ijk θ̇_k`.
pub fn pcc_coriolis(theta: &[f64], theta_dot: &[f64], pcc: &PccParams) -> Result<DMatrix<f64>> {
    let m = pcc.dim();
    let h = CHRISTOFFEL_STEP;
    let dm: Vec<DMatrix<f64>> = (0..m)
        .map(|k| {
            let mut p = theta.to_vec();
            let mut q = theta.to_vec();
            p[k] += h;
            q[k] -= h;
            Ok((pcc_mass_matrix(&p, pcc)? - pcc_mass_matrix(&q, pcc)?) / (2.0 * h))
        })
        .collect::<Result<_>>()?;
    let mut c = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            c[(i, j)] = (0..m)
                .map(|k| 0.5 * (dm[k][(i, j)] + dm[j][(i, k)] - dm[i][(j, k)]) * theta_dot[k])
                .sum();
        }
    }
    Ok(c)
}

fn check_state(state: &PccState, pcc: &PccParams) -> Result<()> {
    let m = pcc.dim();
    if state.theta.len() != m || state.theta_dot.len() != m {
        return Err(Error::DimensionMismatch(format!("PCC state must have {m} coordinates")));
    }
    Ok(())
}

/// `θ̈` from the PCC equations of motion.
pub fn pcc_dynamics(state: &PccState, tau: &DVector<f64>, pcc: &PccParams) -> Result<DVector<f64>> {
    check_state(state, pcc)?;
    if tau.len() != pcc.dim() {
        return Err(Error::DimensionMismatch(format!("expected {} torques", pcc.dim())));
    }
    let th = state.theta.as_slice();
    let mass = pcc_mass_matrix(th, pcc)?;
    let c = pcc_coriolis(th, state.theta_dot.as_slice(), pcc)?;
    let rhs = tau
        - c * &state.theta_dot
        - pcc.damping.component_mul(&state.theta_dot)
        - pcc.stiffness.component_mul(&state.theta);
    let chol = mass.cholesky().ok_or(Error::SingularInertia)?;
    Ok(chol.solve(&rhs))
}

/// One classical Runge–Kutta step with `tau` held.
pub fn pcc_step(state: &PccState, tau: &DVector<f64>, pcc: &PccParams, dt: f64) -> Result<PccState> {
    rk4(state, dt, |_, s| pcc_dynamics(s, tau, pcc))
}

/// RK4 on `(θ, θ̇)` with accelerations from `accel(stage time, stage state)`.
fn rk4<F>(state: &PccState, dt: f64, mut accel: F) -> Result<PccState>
where
    F: FnMut(f64, &PccState) -> Result<DVector<f64>>,
{
    let mut f = |t: f64, th: &DVector<f64>, om: &DVector<f64>| -> Result<(DVector<f64>, DVector<f64>)> {
        let s = PccState {
            theta: th.clone(),
            theta_dot: om.clone(),
        };
        Ok((om.clone(), accel(t, &s)?))
    };
    let (th, om) = (&state.theta, &state.theta_dot);
    let (k1t, k1o) = f(0.0, th, om)?;
    let (k2t, k2o) = f(0.5, &(th + &k1t * (0.5 * dt)), &(om + &k1o * (0.5 * dt)))?;
    let (k3t, k3o) = f(0.5, &(th + &k2t * (0.5 * dt)), &(om + &k2o * (0.5 * dt)))?;
    let (k4t, k4o) = f(1.0, &(th + &k3t * dt), &(om + &k3o * dt))?;
    let theta = th + (k1t + k2t * 2.0 + k3t * 2.0 + k4t) * (dt / 6.0);
    let theta_dot = om + (k1o + k2o * 2.0 + k3o * 2.0 + k4o) * (dt / 6.0);
    PccState::new(theta, theta_dot)
}

/// Kinetic plus elastic energy of the PCC model.
pub fn pcc_energy(state: &PccState, pcc: &PccParams) -> Result<f64> {
    check_state(state, pcc)?;
    let mass = pcc_mass_matrix(state.theta.as_slice(), pcc)?;
    let kinetic = 0.5 * state.theta_dot.dot(&(mass * &state.theta_dot));
    let elastic = 0.5 * state.theta.dot(&pcc.stiffness.component_mul(&state.theta));
    Ok(kinetic + elastic)
}

/// Joint-space gains, scaled by `M_p` inside the computed-torque law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PccGains {
    pub kp: f64,
    pub kd: f64,
}

impl PccGains {
    pub fn critically_damped(omega: f64, zeta: f64) -> Self {
        Self {
            kp: omega * omega,
            kd: 2.0 * zeta * omega,
        }
    }
}

/// Reference angles with their first and second time derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleSample {
    pub theta: DVector<f64>,
    pub theta_dot: DVector<f64>,
    pub theta_ddot: DVector<f64>,
}

pub fn angle_samples(path: &ReferencePath) -> Result<Vec<AngleSample>> {
    let (vel, acc) = reference_derivatives(&path.angles, path.period)?;
    Ok(path
        .angles
        .iter()
        .zip(vel)
        .zip(acc)
        .map(|((theta, theta_dot), theta_ddot)| AngleSample {
            theta: theta.clone(),
            theta_dot,
            theta_ddot,
        })
        .collect())
}

/// Computed torque
/// `τ = M_p(θ̄)θ̄̈ + C_p(θ̄, θ̄̇)θ̄̇ + D_pθ̇ + Kθ + M_p(θ̄)(k_p(θ̄ − θ) + k_d(θ̄̇ − θ̇))`.
pub fn pcc_virtual_torque(reference: &AngleSample, state: &PccState, gains: &PccGains, pcc: &PccParams) -> Result<DVector<f64>> {
    check_state(state, pcc)?;
    let m = pcc.dim();
    if reference.theta.len() != m || reference.theta_dot.len() != m || reference.theta_ddot.len() != m {
        return Err(Error::DimensionMismatch(format!("reference must have {m} coordinates")));
    }
    let th = reference.theta.as_slice();
    let mass = pcc_mass_matrix(th, pcc)?;
    let c = pcc_coriolis(th, reference.theta_dot.as_slice(), pcc)?;
    let feedback = (&reference.theta - &state.theta) * gains.kp + (&reference.theta_dot - &state.theta_dot) * gains.kd;
    Ok(&mass * &reference.theta_ddot
        + c * &reference.theta_dot
        + pcc.damping.component_mul(&state.theta_dot)
        + pcc.stiffness.component_mul(&state.theta)
        + mass * feedback)
}

/// Least-squares `u` with `Λ u = τ`; the exact inverse for square,
/// invertible `Λ`.
pub fn pcc_input(tau: &DVector<f64>, lambda: &DMatrix<f64>) -> Result<DVector<f64>> {
    if tau.len() != lambda.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "expected {} torques, got {}",
            lambda.nrows(),
            tau.len()
        )));
    }
    let svd = lambda.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin <= 1e-12 * smax || lambda.ncols() > lambda.nrows() {
        return Err(Error::SingularLambda);
    }
    svd.solve(tau, 0.0).map_err(|_| Error::SingularLambda)
}

/// `Λ_τ = ē Λ`.
pub fn torque_scaling(params: &RodParams, actuation: &ActuationModel) -> DMatrix<f64> {
    &actuation.lambda * params.rest_edge_length()
}

/// Computed-torque synthesis on the PCC plant.
#[derive(Debug, Clone, PartialEq)]
pub struct PccGeneration {
    pub reference: ReferencePath,
    /// PCC plant angles at each control instant.
    pub angles: Vec<DVector<f64>>,
    pub torques: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub saturated: Vec<bool>,
}

impl PccGeneration {
    pub fn schedule(&self) -> Result<InputSchedule> {
        InputSchedule::new(self.reference.period, self.inputs.clone())
    }
}

/// Inverse kinematics, closed-loop computed torque on the PCC plant, and
/// the post-hoc mapping `u = Λ_τ⁺ τ` clamped to `|u| ≤ u_max`.
///
/// The lumped plant settles within milliseconds, far faster than the
/// control period, so the torque law acts continuously inside the
/// integrator against a linearly interpolated reference; the torques at the
/// control instants are the ones mapped to inputs.
pub fn pcc_generate(
    reference: &TaskReference,
    pcc: &PccParams,
    gains: &PccGains,
    lambda: &DMatrix<f64>,
    u_max: f64,
) -> Result<PccGeneration> {
    let path = reference.resolve(&pcc.chain)?;
    let samples = angle_samples(&path)?;
    let substeps = (path.period / PCC_MAX_DT).ceil().max(1.0) as usize;
    let h = path.period / substeps as f64;
    let mut state = PccState::at_rest(samples[0].theta.clone());
    let mut out = PccGeneration {
        reference: path.clone(),
        angles: Vec::with_capacity(samples.len()),
        torques: Vec::with_capacity(samples.len()),
        inputs: Vec::with_capacity(samples.len()),
        saturated: Vec::with_capacity(samples.len()),
    };
    for (k, sample) in samples.iter().enumerate() {
        let tau = pcc_virtual_torque(sample, &state, gains, pcc)?;
        let raw = pcc_input(&tau, lambda)?;
        out.saturated.push(raw.iter().any(|x| x.abs() > u_max));
        out.inputs.push(raw.map(|x| x.clamp(-u_max, u_max)));
        out.angles.push(state.theta.clone());
        out.torques.push(tau.clone());
        let Some(next) = samples.get(k + 1) else { break };
        for i in 0..substeps {
            let start = i as f64;
            state = rk4(&state, h, |stage, s| {
                let r = interpolate(sample, next, (start + stage) / substeps as f64);
                let tau = pcc_virtual_torque(&r, s, gains, pcc)?;
                pcc_dynamics(s, &tau, pcc)
            })?;
        }
    }
    Ok(out)
}

fn interpolate(a: &AngleSample, b: &AngleSample, s: f64) -> AngleSample {
    AngleSample {
        theta: a.theta.lerp(&b.theta, s),
        theta_dot: a.theta_dot.lerp(&b.theta_dot, s),
        theta_ddot: a.theta_ddot.lerp(&b.theta_ddot, s),
    }
}

pub const IDENTIFICATION_HORIZON: f64 = 3.0;

/// Step inputs used to identify the fixture: each segment alone, then both.
pub fn identification_inputs(m: usize) -> Vec<DVector<f64>> {
    let mut out: Vec<DVector<f64>> = (0..m)
        .map(|j| {
            let mut u = DVector::zeros(m);
            u[j] = 0.5;
            u
        })
        .collect();
    out.push(DVector::from_element(m, 0.5));
    out
}

/// Least-squares fit of diagonal `K` and `D` to DER step responses:
/// for every coordinate, `τ_j − (M_p θ̈ + C_p θ̇)_j = D_j θ̇_j + K_j θ_j`
/// over all interior samples of all experiments.
pub fn identify(plant: &Plant, steps: &[DVector<f64>], horizon: f64) -> Result<(DVector<f64>, DVector<f64>)> {
    let m = plant.actuation.input_dim();
    let lumped = PccParams::lumped(&plant.params, DVector::zeros(m), DVector::zeros(m))?;
    let lambda_tau = torque_scaling(&plant.params, &plant.actuation);
    let dt = plant.config.dt;
    let n_steps = (horizon / dt).round() as usize;
    let mut rows: Vec<Vec<(f64, f64, f64)>> = vec![Vec::new(); m];
    for u in steps {
        let tau = &lambda_tau * u;
        let traj = plant.rollout(&plant.rest_state()?, &InputSchedule::constant(u.clone(), dt), n_steps)?;
        let angles = traj
            .states
            .iter()
            .map(|s| segment_bend_angles(s, &plant.params.segment_nodes).map(DVector::from_vec))
            .collect::<Result<Vec<_>>>()?;
        let (vel, acc) = reference_derivatives(&angles, dt)?;
        for k in 1..angles.len() - 1 {
            let th = angles[k].as_slice();
            let inertial =
                pcc_mass_matrix(th, &lumped)? * &acc[k] + pcc_coriolis(th, vel[k].as_slice(), &lumped)? * &vel[k];
            for j in 0..m {
                rows[j].push((vel[k][j], angles[k][j], tau[j] - inertial[j]));
            }
        }
    }
    let mut stiffness = DVector::zeros(m);
    let mut damping = DVector::zeros(m);
    for (j, r) in rows.iter().enumerate() {
        let a = DMatrix::from_fn(r.len(), 2, |i, c| if c == 0 { r[i].0 } else { r[i].1 });
        let b = DVector::from_iterator(r.len(), r.iter().map(|x| x.2));
        let sol = (a.transpose() * &a)
            .cholesky()
            .ok_or_else(|| Error::validation("pcc.identification", "step responses do not excite the model"))?
            .solve(&(a.transpose() * b));
        damping[j] = sol[0].max(0.0);
        stiffness[j] = sol[1].max(0.0);
    }
    Ok((stiffness, damping))
}
