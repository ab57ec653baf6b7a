//! Model-based trajectory generation on the discrete elastic rod.
//!
//! A task-space reference is turned into bend angles by two-arc inverse
//! kinematics, sampled onto the rod as a nodal reference `q̄(t)`, and tracked
//! in closed loop with
//! `u = (BΛ)⁺ (M q̈̄ − F_int(q̄) + K_p(q̄ − q) + K_d(q̄̇ − q̇) + C q̇)`.
//! Because every input is applied to the same simulator that produced the
//! state it was computed from, the recorded inputs replay exactly.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use crate::actuation::{build_b, ActuationModel};
use crate::elastic::{internal_forces, mass_matrix, RodParams};
use crate::error::{Error, Result};
use crate::geometry::{build_state, tip_position, RodState, Vec3};
use crate::kinematics::ArcChain;
use crate::sim::{Plant, SimConfig, Trajectory};

pub const DEFAULT_OMEGA: f64 = 10.0;
pub const DEFAULT_ZETA: f64 = 1.0;
pub const DEFAULT_U_MAX: f64 = 10.0;

const IK_TOL: f64 = 1e-12;
const IK_MAX_ITERS: usize = 200;

/// Diagonal feedback gains on the generalized coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Gains {
    pub kp: DVector<f64>,
    pub kd: DVector<f64>,
}

impl Gains {
    pub fn new(kp: DVector<f64>, kd: DVector<f64>) -> Result<Self> {
        if kp.len() != kd.len() {
            return Err(Error::DimensionMismatch("kp and kd lengths differ".into()));
        }
        for (key, v) in [("gains.kp", &kp), ("gains.kd", &kd)] {
            if v.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
                return Err(Error::validation(key, "gains must be finite and non-negative"));
            }
        }
        Ok(Self { kp, kd })
    }

    /// `K_p = ω² M`, `K_d = 2ζω M`, zero on the clamped coordinates.
    pub fn mass_scaled(params: &RodParams, omega: f64, zeta: f64, clamped: &[usize]) -> Self {
        let m = mass_matrix(params);
        let mut kp = m.clone() * omega * omega;
        let mut kd = m * (2.0 * zeta * omega);
        for &d in clamped {
            kp[d] = 0.0;
            kd[d] = 0.0;
        }
        Self { kp, kd }
    }

    pub fn with_kp_scale(&self, factor: f64) -> Self {
        Self {
            kp: &self.kp * factor,
            kd: self.kd.clone(),
        }
    }
}

/// Two-arc inverse kinematics by Levenberg–Marquardt on the planar tip map.
///
/// With a previous solution the solver continues from it; otherwise, or if
/// that fails, it starts from a grid of seeds and keeps the converged
/// solution closest to `previous` (smallest norm when there is none).
pub fn pcc_ik(target: &Vec3, chain: &ArcChain, previous: Option<[f64; 2]>) -> Result<[f64; 2]> {
    if chain.segments() != 2 {
        return Err(Error::DimensionMismatch(format!(
            "inverse kinematics needs two segments, got {}",
            chain.segments()
        )));
    }
    if !target.iter().all(|c| c.is_finite()) {
        return Err(Error::NonFinite("tip target"));
    }
    let reach = Vector2::new(target.x, target.y).norm();
    if target.z.abs() > 1e-12 * chain.length() || reach > chain.length() * (1.0 + 1e-12) {
        return Err(Error::Unreachable {
            x: target.x,
            y: target.y,
            z: target.z,
        });
    }
    let goal = Vector2::new(target.x, target.y);
    if let Some(prev) = previous {
        if let Ok(sol) = levenberg_marquardt(chain, &goal, prev) {
            return Ok(sol);
        }
    }

    let mut best: Option<([f64; 2], f64)> = None;
    let mut worst_residual = f64::INFINITY;
    let anchor = previous.unwrap_or([0.0, 0.0]);
    for a in seed_grid() {
        for b in seed_grid() {
            match levenberg_marquardt(chain, &goal, [a, b]) {
                Ok(sol) => {
                    let d = (sol[0] - anchor[0]).hypot(sol[1] - anchor[1]);
                    if best.is_none_or(|(_, bd)| d < bd - 1e-12) {
                        best = Some((sol, d));
                    }
                }
                Err(r) => worst_residual = worst_residual.min(r),
            }
        }
    }
    best.map(|(s, _)| s).ok_or(Error::IkDivergence {
        residual: worst_residual,
    })
}

fn seed_grid() -> impl Iterator<Item = f64> {
    (-7..=7).map(|k| 0.4 * k as f64)
}

fn planar_residual(chain: &ArcChain, theta: [f64; 2], goal: &Vector2<f64>) -> Vector2<f64> {
    let tip = chain.tip(&theta).expect("two finite angles");
    Vector2::new(tip.x, tip.y) - goal
}

/// Converged angles, or the best residual reached.
fn levenberg_marquardt(chain: &ArcChain, goal: &Vector2<f64>, seed: [f64; 2]) -> std::result::Result<[f64; 2], f64> {
    let mut theta = seed;
    let mut r = planar_residual(chain, theta, goal);
    let mut mu = 1e-3;
    for _ in 0..IK_MAX_ITERS {
        if r.norm() < IK_TOL {
            return Ok(theta);
        }
        let cols = chain.tip_jacobian(&theta).expect("two finite angles");
        let j = Matrix2::new(cols[0].x, cols[1].x, cols[0].y, cols[1].y);
        let jtj = j.transpose() * j;
        let g = j.transpose() * r;
        let mut accepted = false;
        while mu < 1e12 {
            let damped = jtj + Matrix2::from_diagonal(&(jtj.diagonal() * mu)) + Matrix2::identity() * (1e-30 + mu * 1e-12);
            let Some(step) = damped.try_inverse().map(|inv| -(inv * g)) else {
                mu *= 10.0;
                continue;
            };
            let cand = [theta[0] + step[0], theta[1] + step[1]];
            if cand.iter().all(|t| t.abs() < std::f64::consts::PI) {
                let rc = planar_residual(chain, cand, goal);
                if rc.norm() < r.norm() {
                    theta = cand;
                    r = rc;
                    mu = (mu / 10.0).max(1e-15);
                    accepted = true;
                    break;
                }
            }
            mu *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    if r.norm() < IK_TOL {
        Ok(theta)
    } else {
        Err(r.norm())
    }
}

/// Rod state sampling the arc chain `theta` on the rod's nodes, with zero
/// twist and velocity.
pub fn reference_configuration(theta: &[f64], params: &RodParams, actuation: &ActuationModel) -> Result<RodState> {
    if actuation.segment_nodes != params.segment_nodes {
        return Err(Error::LayoutMismatch(
            "actuation and rod disagree on the segment layout".into(),
        ));
    }
    let chain = ArcChain::from_params(params)?;
    let nodes = chain.nodes(theta)?;
    let n = nodes.len();
    build_state(nodes, vec![0.0; n - 1], None)
}

/// Velocity and acceleration sequences.
pub type Derivatives = (Vec<DVector<f64>>, Vec<DVector<f64>>);

/// Velocities and accelerations of uniformly sampled coordinate vectors:
/// central differences inside, three-point one-sided stencils at the ends.
pub fn reference_derivatives(samples: &[DVector<f64>], dt: f64) -> Result<Derivatives> {
    let n = samples.len();
    if n < 3 {
        return Err(Error::TooFewSamples { needed: 3, got: n });
    }
    if !(dt > 0.0) {
        return Err(Error::validation("dt", "must be positive"));
    }
    let dim = samples[0].len();
    if samples.iter().any(|s| s.len() != dim) {
        return Err(Error::DimensionMismatch("reference samples differ in length".into()));
    }
    let q = samples;
    let mut vel = Vec::with_capacity(n);
    let mut acc = Vec::with_capacity(n);
    for k in 0..n {
        let (v, a) = if k == 0 {
            (
                (&q[1] * 4.0 - &q[0] * 3.0 - &q[2]) / (2.0 * dt),
                (&q[0] - &q[1] * 2.0 + &q[2]) / (dt * dt),
            )
        } else if k == n - 1 {
            (
                (&q[k] * 3.0 - &q[k - 1] * 4.0 + &q[k - 2]) / (2.0 * dt),
                (&q[k] - &q[k - 1] * 2.0 + &q[k - 2]) / (dt * dt),
            )
        } else {
            (
                (&q[k + 1] - &q[k - 1]) / (2.0 * dt),
                (&q[k + 1] - &q[k] * 2.0 + &q[k - 1]) / (dt * dt),
            )
        };
        vel.push(v);
        acc.push(a);
    }
    Ok((vel, acc))
}

/// Tip targets or bend-angle schedules on a uniform control grid.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskReference {
    Tips { period: f64, tips: Vec<Vec3> },
    BendAngles { period: f64, angles: Vec<DVector<f64>> },
}

impl TaskReference {
    pub fn period(&self) -> f64 {
        match self {
            TaskReference::Tips { period, .. } | TaskReference::BendAngles { period, .. } => *period,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TaskReference::Tips { tips, .. } => tips.len(),
            TaskReference::BendAngles { angles, .. } => angles.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Bend angles and tips for every sample, running inverse kinematics
    /// sample by sample when only tips are given.
    pub fn resolve(&self, chain: &ArcChain) -> Result<ReferencePath> {
        let period = self.period();
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::validation("reference.period", "must be positive"));
        }
        let (angles, tips) = match self {
            TaskReference::Tips { tips, .. } => {
                let mut angles = Vec::with_capacity(tips.len());
                let mut prev = None;
                for tip in tips {
                    let th = pcc_ik(tip, chain, prev)?;
                    prev = Some(th);
                    angles.push(DVector::from_row_slice(&th));
                }
                (angles, tips.clone())
            }
            TaskReference::BendAngles { angles, .. } => {
                let tips = angles
                    .iter()
                    .map(|a| chain.tip(a.as_slice()))
                    .collect::<Result<Vec<_>>>()?;
                (angles.clone(), tips)
            }
        };
        Ok(ReferencePath { period, angles, tips })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePath {
    pub period: f64,
    pub angles: Vec<DVector<f64>>,
    pub tips: Vec<Vec3>,
}

impl ReferencePath {
    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|k| k as f64 * self.period).collect()
    }
}

/// One nodal reference sample: `q̄` and `q̄̇` in `state`, plus `q̄̈`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSample {
    pub state: RodState,
    pub acceleration: DVector<f64>,
}

pub fn reference_samples(path: &ReferencePath, params: &RodParams, actuation: &ActuationModel) -> Result<Vec<ReferenceSample>> {
    let states = path
        .angles
        .iter()
        .map(|a| reference_configuration(a.as_slice(), params, actuation))
        .collect::<Result<Vec<_>>>()?;
    let q: Vec<DVector<f64>> = states.iter().map(RodState::dofs).collect();
    let (vel, acc) = reference_derivatives(&q, path.period)?;
    states
        .into_iter()
        .zip(vel)
        .zip(acc)
        .map(|((s, v), a)| {
            Ok(ReferenceSample {
                state: build_state(s.nodes, s.twists, Some(v))?,
                acceleration: a,
            })
        })
        .collect()
}

/// Full-length right-hand side
/// `w = M q̈̄ − F_int(q̄) + K_p(q̄ − q) + K_d(q̄̇ − q̇) + C q̇`.
pub fn control_rhs(reference: &ReferenceSample, state: &RodState, gains: &Gains, params: &RodParams) -> Result<DVector<f64>> {
    let dim = state.dof_len();
    let lens = [
        reference.state.dof_len(),
        reference.acceleration.len(),
        gains.kp.len(),
        gains.kd.len(),
        params.dof_len(),
    ];
    if lens.iter().any(|&l| l != dim) {
        return Err(Error::DimensionMismatch(format!(
            "control terms must all have length {dim}, got {lens:?}"
        )));
    }
    let m = mass_matrix(params);
    let f_ref = internal_forces(&reference.state, params)?;
    let dq = reference.state.dofs() - state.dofs();
    let dv = &reference.state.velocity - &state.velocity;
    Ok(m.component_mul(&reference.acceleration) - f_ref
        + gains.kp.component_mul(&dq)
        + gains.kd.component_mul(&dv)
        + DVector::from_column_slice(&params.damping).component_mul(&state.velocity))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub u: DVector<f64>,
    /// The regularized solution before clamping to the actuator bounds.
    pub unclamped: DVector<f64>,
    pub saturated: bool,
}

/// Damped least-squares input for the free coordinates:
/// `u = (AᵀA + λ²I)⁻¹ Aᵀ w`, `A = B(q)Λ`, `λ = 10⁻⁶ ‖A‖_F`.
pub fn control_input(
    reference: &ReferenceSample,
    state: &RodState,
    gains: &Gains,
    params: &RodParams,
    actuation: &ActuationModel,
    config: &SimConfig,
    u_max: f64,
) -> Result<ControlOutput> {
    let w = control_rhs(reference, state, gains, params)?;
    let free = config.free_dofs(w.len());
    let a_full = build_b(state, actuation)? * &actuation.lambda;
    let a = a_full.select_rows(&free);
    let w = w.select_rows(&free);
    let unclamped = regularized_solve(&a, &w);
    let saturated = unclamped.iter().any(|x| x.abs() > u_max);
    let u = unclamped.map(|x| x.clamp(-u_max, u_max));
    Ok(ControlOutput {
        u,
        unclamped,
        saturated,
    })
}

fn regularized_solve(a: &DMatrix<f64>, w: &DVector<f64>) -> DVector<f64> {
    let scale = a.norm();
    if scale == 0.0 {
        return DVector::zeros(a.ncols());
    }
    let lambda = 1e-6 * scale;
    let normal = a.transpose() * a + DMatrix::identity(a.ncols(), a.ncols()) * (lambda * lambda);
    let rhs = a.transpose() * w;
    normal
        .cholesky()
        .map(|c| c.solve(&rhs))
        .expect("regularized normal matrix is positive definite")
}

/// Closed-loop synthesis output: every simulator step, plus the reference
/// on the control grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub trajectory: Trajectory,
    /// Simulator steps per control interval.
    pub stride: usize,
    pub reference: ReferencePath,
    /// Whether the input at each control instant hit the actuator bounds.
    pub saturated: Vec<bool>,
}

impl Generation {
    pub fn control_samples(&self) -> Trajectory {
        self.trajectory.subsample(self.stride)
    }

    pub fn control_inputs(&self) -> Vec<DVector<f64>> {
        self.trajectory.inputs.iter().step_by(self.stride).cloned().collect()
    }

    pub fn saturation_fraction(&self) -> f64 {
        if self.saturated.is_empty() {
            return 0.0;
        }
        self.saturated.iter().filter(|s| **s).count() as f64 / self.saturated.len() as f64
    }
}

/// Simulator steps per control interval; the control period must be an
/// integer multiple of the timestep.
pub fn control_stride(period: f64, dt: f64) -> Result<usize> {
    let ratio = period / dt;
    let stride = ratio.round();
    if stride < 1.0 || (ratio - stride).abs() > 1e-9 * ratio {
        return Err(Error::validation(
            "control_rate",
            format!("control period {period} is not a multiple of the timestep {dt}"),
        ));
    }
    Ok(stride as usize)
}

/// Track `reference` on `plant`, holding each input over one control
/// interval. Starts from the first reference configuration at rest.
pub fn generate(reference: &TaskReference, plant: &Plant, gains: &Gains, u_max: f64) -> Result<Generation> {
    if !(u_max > 0.0) {
        return Err(Error::validation("actuation.u_max", "must be positive"));
    }
    let chain = ArcChain::from_params(&plant.params)?;
    let path = reference.resolve(&chain)?;
    let samples = reference_samples(&path, &plant.params, &plant.actuation)?;
    let stride = control_stride(path.period, plant.config.dt)?;
    let first = &samples[0].state;
    let mut state = build_state(first.nodes.clone(), first.twists.clone(), None)?;
    let mut trajectory = Trajectory::new(state.clone(), 0.0);
    let mut saturated = Vec::with_capacity(samples.len());
    let mut step = 0usize;
    for sample in &samples[..samples.len() - 1] {
        let out = control_input(sample, &state, gains, &plant.params, &plant.actuation, &plant.config, u_max)?;
        saturated.push(out.saturated);
        for _ in 0..stride {
            state = plant.step(&state, &out.u)?;
            step += 1;
            trajectory.push(out.u.clone(), state.clone(), step as f64 * plant.config.dt);
        }
    }
    let last = control_input(samples.last().unwrap(), &state, gains, &plant.params, &plant.actuation, &plant.config, u_max)?;
    saturated.push(last.saturated);
    trajectory.inputs.push(last.u);
    Ok(Generation {
        trajectory,
        stride,
        reference: path,
        saturated,
    })
}

/// Tip errors `‖r(t_k) − r̄(t_k)‖` on the control grid.
pub fn tracking_errors(generation: &Generation) -> Vec<f64> {
    generation
        .control_samples()
        .states
        .iter()
        .zip(&generation.reference.tips)
        .map(|(s, r)| (tip_position(s) - r).norm())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn chain() -> ArcChain {
        ArcChain::from_params(&RodParams::fixture()).unwrap()
    }

    #[test]
    fn ik_of_straight_tip_is_zero() {
        let th = pcc_ik(&Vec3::new(0.25, 0.0, 0.0), &chain(), None).unwrap();
        assert!(th[0].abs() < 1e-12 && th[1].abs() < 1e-12, "{th:?}");
    }

    #[test]
    fn ik_round_trips_quarter_bends() {
        let c = chain();
        let p = c.tip(&[FRAC_PI_2, FRAC_PI_2]).unwrap();
        let th = pcc_ik(&p, &c, None).unwrap();
        assert!((th[0] - FRAC_PI_2).abs() < 1e-8 && (th[1] - FRAC_PI_2).abs() < 1e-8, "{th:?}");
    }

    #[test]
    fn ik_rejects_targets_beyond_full_extension() {
        let err = pcc_ik(&Vec3::new(0.25 + 1e-6, 0.0, 0.0), &chain(), None).unwrap_err();
        assert!(matches!(err, Error::Unreachable { .. }));
        let err = pcc_ik(&Vec3::new(0.1, 0.0, 0.01), &chain(), None).unwrap_err();
        assert!(matches!(err, Error::Unreachable { .. }));
    }

    #[test]
    fn ik_follows_previous_branch() {
        let c = chain();
        let p = c.tip(&[1.0, -0.5]).unwrap();
        let near = pcc_ik(&p, &c, Some([1.05, -0.45])).unwrap();
        assert!((near[0] - 1.0).abs() < 1e-8 && (near[1] + 0.5).abs() < 1e-8);
    }

    #[test]
    fn straight_reference_configuration() {
        let params = RodParams::fixture();
        let act = ActuationModel::calibrated(&params);
        let s = reference_configuration(&[0.0, 0.0], &params, &act).unwrap();
        let ell = params.rest_edge_length();
        for (i, x) in s.nodes.iter().enumerate() {
            assert!((x - Vec3::new(i as f64 * ell, 0.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn derivatives_of_quadratic_path() {
        let dt = 0.1;
        let a = 3.0;
        let q: Vec<_> = (0..6)
            .map(|k| {
                let t = k as f64 * dt;
                DVector::from_vec(vec![0.5 * a * t * t, 2.0 * t, 1.0])
            })
            .collect();
        let (v, acc) = reference_derivatives(&q, dt).unwrap();
        for k in 0..6 {
            let t = k as f64 * dt;
            assert!((v[k][0] - a * t).abs() < 1e-12);
            assert!((v[k][1] - 2.0).abs() < 1e-12 && v[k][2] == 0.0);
            assert!((acc[k][0] - a).abs() < 1e-9 && acc[k][1].abs() < 1e-9);
        }
        assert!(matches!(
            reference_derivatives(&q[..2], dt),
            Err(Error::TooFewSamples { needed: 3, got: 2 })
        ));
    }

    #[test]
    fn rest_reference_needs_no_input() {
        let plant = Plant::fixture();
        let gains = Gains::mass_scaled(&plant.params, DEFAULT_OMEGA, DEFAULT_ZETA, &plant.config.clamped_dofs);
        let rest = plant.rest_state().unwrap();
        let sample = ReferenceSample {
            acceleration: DVector::zeros(rest.dof_len()),
            state: rest.clone(),
        };
        let out = control_input(&sample, &rest, &gains, &plant.params, &plant.actuation, &plant.config, 10.0).unwrap();
        assert!(out.u.norm() < 1e-12 && !out.saturated);
    }

    #[test]
    fn control_stride_requires_integer_ratio() {
        assert_eq!(control_stride(0.05, 0.005).unwrap(), 10);
        assert!(control_stride(0.05, 0.003).is_err());
    }
}
