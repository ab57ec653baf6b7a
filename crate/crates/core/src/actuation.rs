//! Control-affine actuation: `F_ext = −C q̇ + B(q) Λ u`.
//!
//! Each segment is driven by one scalar input that applies two
//! equal-and-opposite force pairs, one across the segment's first edge and
//! one across its last edge, each orthogonal to that edge. The resulting
//! `B(q)` is block diagonal and zero on every twist coordinate.

use nalgebra::{DMatrix, DVector};

use crate::elastic::{internal_forces, RodParams};
use crate::error::{Error, Result};
use crate::geometry::{build_state, dof_count, e3, node_dof, strains_of, RodState, Vec3};

/// Segment layout and input scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct ActuationModel {
    pub segment_nodes: Vec<usize>,
    /// `m × m` scaling from inputs to force magnitudes (N per input unit).
    pub lambda: DMatrix<f64>,
}

impl ActuationModel {
    pub fn new(segment_nodes: Vec<usize>, lambda: DMatrix<f64>) -> Result<Self> {
        let model = Self {
            segment_nodes,
            lambda,
        };
        model.validate()?;
        Ok(model)
    }

    /// Diagonal scaling calibrated so that a unit input holds a segment of
    /// the given rod at a 45° total bend.
    pub fn calibrated(params: &RodParams) -> Self {
        let diag: Vec<f64> = params
            .segment_nodes
            .iter()
            .map(|&nj| unit_input_force(params, std::f64::consts::FRAC_PI_4, nj))
            .collect();
        Self {
            segment_nodes: params.segment_nodes.clone(),
            lambda: DMatrix::from_diagonal(&DVector::from_vec(diag)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.segment_nodes.len()
    }

    pub fn node_count(&self) -> usize {
        self.segment_nodes.iter().sum()
    }

    /// First node of every segment (`s_1 = 0`).
    pub fn segment_offsets(&self) -> Vec<usize> {
        self.segment_nodes
            .iter()
            .scan(0, |acc, &n| {
                let s = *acc;
                *acc += n;
                Some(s)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.segment_nodes.len();
        if m == 0 || self.segment_nodes.iter().any(|&n| n < 3) {
            return Err(Error::validation("actuation.segment_nodes", "each segment needs at least 3 nodes"));
        }
        if self.lambda.nrows() != m || self.lambda.ncols() != m {
            return Err(Error::validation(
                "actuation.lambda",
                format!("expected a {m}×{m} matrix, got {}×{}", self.lambda.nrows(), self.lambda.ncols()),
            ));
        }
        let sv = self.lambda.singular_values();
        let (max, min) = (sv.max(), sv.min());
        if !(min > 1e-12 * max && max.is_finite()) {
            return Err(Error::validation("actuation.lambda", "scaling matrix must be invertible"));
        }
        Ok(())
    }

    fn check_rod(&self, n: usize) -> Result<()> {
        if self.node_count() != n {
            return Err(Error::LayoutMismatch(format!(
                "segments cover {} nodes, rod has {n}",
                self.node_count()
            )));
        }
        Ok(())
    }
}

/// Force magnitude that holds one segment of `nodes` nodes at a uniform arc
/// with total bend `bend`.
///
/// For joint angle `α` the boundary bending force of a uniform arc has
/// magnitude `EI · 2 tan(α/2) · sec²(α/2) / ē`.
pub fn unit_input_force(params: &RodParams, bend: f64, nodes: usize) -> f64 {
    let alpha = bend / (nodes - 2) as f64;
    let half = 0.5 * alpha;
    params.ei * 2.0 * half.tan() / (half.cos().powi(2) * params.rest_edge_length())
}

/// `B(q)`: one column per segment, nonzero only on the translational rows
/// of the segment's two boundary node pairs.
pub fn build_b(state: &RodState, model: &ActuationModel) -> Result<DMatrix<f64>> {
    let n = state.node_count();
    model.check_rod(n)?;
    let tangents = state.tangents()?;
    let mut b = DMatrix::zeros(dof_count(n), model.input_dim());
    for (j, (&s, &nj)) in model.segment_offsets().iter().zip(&model.segment_nodes).enumerate() {
        let first = e3().cross(&tangents[s]);
        let last = -e3().cross(&tangents[s + nj - 2]);
        for (node, row) in [(s, first), (s + 1, -first), (s + nj - 2, last), (s + nj - 1, -last)] {
            b.fixed_view_mut::<3, 1>(node_dof(node), j).copy_from(&row);
        }
    }
    Ok(b)
}

/// `−C q̇ + B(q) Λ u` plus constant nodal gravity when configured.
pub fn external_force(
    state: &RodState,
    velocity: &DVector<f64>,
    u: &DVector<f64>,
    model: &ActuationModel,
    params: &RodParams,
) -> Result<DVector<f64>> {
    let dim = state.dof_len();
    if velocity.len() != dim || params.damping.len() != dim {
        return Err(Error::DimensionMismatch(format!(
            "velocity and damping must have length {dim}"
        )));
    }
    if u.len() != model.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "expected {} inputs, got {}",
            model.input_dim(),
            u.len()
        )));
    }
    let mut f = actuation_force(state, u, model)?;
    for k in 0..dim {
        f[k] -= params.damping[k] * velocity[k];
    }
    let g = Vec3::from(params.gravity);
    if g != Vec3::zeros() {
        for (i, m) in params.node_masses.iter().enumerate() {
            let mut row = f.fixed_rows_mut::<3>(node_dof(i));
            row += g * *m;
        }
    }
    Ok(f)
}

/// `B(q) Λ u`.
pub fn actuation_force(state: &RodState, u: &DVector<f64>, model: &ActuationModel) -> Result<DVector<f64>> {
    if u.len() != model.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "expected {} inputs, got {}",
            model.input_dim(),
            u.len()
        )));
    }
    Ok(build_b(state, model)? * (&model.lambda * u))
}

/// Bending-only internal forces (stretching and twisting stiffness zeroed).
pub fn bending_forces(state: &RodState, params: &RodParams) -> Result<DVector<f64>> {
    let bend_only = RodParams {
        ea: 0.0,
        gj: 0.0,
        ..params.clone()
    };
    internal_forces(state, &bend_only)
}

fn node_force(f: &DVector<f64>, i: usize) -> Vec3 {
    f.fixed_rows::<3>(node_dof(i)).into_owned()
}

/// Force-localization measures for one segment. Residuals are divided by
/// the largest boundary force norm.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentLocalization {
    pub first_node: usize,
    pub nodes: usize,
    /// max interior ‖F_b‖ / max boundary ‖F_b‖
    pub interior_ratio: f64,
    /// Set when every boundary force vanishes; the ratios are then reported as 0.
    pub zero_boundary: bool,
    /// ‖F_{b,0} + F_{b,1}‖, normalized
    pub start_pair_residual: f64,
    /// ‖F_{b,n−1} + F_{b,n−2}‖, normalized
    pub end_pair_residual: f64,
    /// |F_{b,0}·t_0| / ‖F_{b,0}‖
    pub start_orthogonality: f64,
    /// |F_{b,n−1}·t_{n−2}| / ‖F_{b,n−1}‖
    pub end_orthogonality: f64,
    pub start_magnitude: f64,
    pub end_magnitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationDiagnostics {
    pub segments: Vec<SegmentLocalization>,
}

impl LocalizationDiagnostics {
    pub fn worst_interior_ratio(&self) -> f64 {
        self.segments.iter().map(|s| s.interior_ratio).fold(0.0, f64::max)
    }
}

const ZERO_FORCE: f64 = 1e-300;

/// Measures how closely the bending forces of `state` follow the boundary
/// localization pattern of a piecewise-constant-curvature rod.
pub fn localization_report(state: &RodState, params: &RodParams) -> Result<LocalizationDiagnostics> {
    let fb = bending_forces(state, params)?;
    let tangents = state.tangents()?;
    let mut segments = Vec::new();
    let mut s = 0;
    for &n in &params.segment_nodes {
        let f = |local: usize| node_force(&fb, s + local);
        let boundary = [f(0), f(1), f(n - 2), f(n - 1)];
        let bmax = boundary.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let imax = (2..n.saturating_sub(2)).map(|i| f(i).norm()).fold(0.0, f64::max);
        let zero_boundary = bmax <= ZERO_FORCE;
        let ratio = |num: f64, den: f64| if den <= ZERO_FORCE { 0.0 } else { num / den };
        segments.push(SegmentLocalization {
            first_node: s,
            nodes: n,
            interior_ratio: ratio(imax, bmax),
            zero_boundary,
            start_pair_residual: ratio((boundary[0] + boundary[1]).norm(), bmax),
            end_pair_residual: ratio((boundary[3] + boundary[2]).norm(), bmax),
            start_orthogonality: ratio(boundary[0].dot(&tangents[s]).abs(), boundary[0].norm()),
            end_orthogonality: ratio(boundary[3].dot(&tangents[s + n - 2]).abs(), boundary[3].norm()),
            start_magnitude: boundary[0].norm(),
            end_magnitude: boundary[3].norm(),
        });
        s += n;
    }
    Ok(LocalizationDiagnostics { segments })
}

/// Measures of force-level independence between adjacent segments.
#[derive(Debug, Clone, PartialEq)]
pub struct DecouplingDiagnostics {
    /// Largest |κ| at the nodes on either side of each junction edge.
    pub junction_curvature: f64,
    /// max over nodes of ‖F_b(full rod) − Σ F_b(isolated segments)‖,
    /// divided by the largest boundary force.
    pub coupling_residual: f64,
    /// Per segment: largest deviation of its boundary forces from the same
    /// segment simulated alone, divided by that segment's largest boundary force.
    pub boundary_deviation: Vec<f64>,
}

/// Compares the bending forces of a multi-segment rod with those of each
/// segment taken as a rod on its own.
pub fn decoupling_report(state: &RodState, params: &RodParams) -> Result<DecouplingDiagnostics> {
    let full = bending_forces(state, params)?;
    let strains = strains_of(state)?;
    let dim = state.dof_len();
    let mut assembled = DVector::zeros(dim);
    let mut boundary_deviation = Vec::new();
    let mut junction_curvature: f64 = 0.0;
    let mut bmax_all: f64 = 0.0;

    let mut s = 0;
    for (j, &n) in params.segment_nodes.iter().enumerate() {
        if j > 0 {
            // nodes s−1 and s straddle the junction edge; curvature index = node − 1
            for node in [s - 1, s] {
                let k = strains.curvatures[node - 1];
                junction_curvature = junction_curvature.max(k[0].hypot(k[1]));
            }
        }
        let nodes = state.nodes[s..s + n].to_vec();
        let twists = state.twists[s..s + n - 1].to_vec();
        let sub_state = build_state(nodes, twists, None)?;
        let sub_params = RodParams {
            segment_nodes: vec![n],
            rest_length: params.rest_edge_length() * (n - 1) as f64,
            node_masses: params.node_masses[s..s + n].to_vec(),
            edge_inertias: params.edge_inertias[s..s + n - 1].to_vec(),
            damping: vec![0.0; dof_count(n)],
            ..params.clone()
        };
        let iso = bending_forces(&sub_state, &sub_params)?;
        let mut seg = assembled.rows_mut(node_dof(s), dof_count(n));
        seg += &iso;

        let locals = [0, 1, n - 2, n - 1];
        let bmax = locals.iter().map(|&i| node_force(&iso, i).norm()).fold(0.0, f64::max);
        bmax_all = bmax_all.max(bmax);
        let dev = locals
            .iter()
            .map(|&i| (node_force(&iso, i) - node_force(&full, s + i)).norm())
            .fold(0.0, f64::max);
        boundary_deviation.push(if bmax <= ZERO_FORCE { dev } else { dev / bmax });
        s += n;
    }
    let coupling = (0..state.node_count())
        .map(|i| (node_force(&full, i) - node_force(&assembled, i)).norm())
        .fold(0.0, f64::max);
    Ok(DecouplingDiagnostics {
        junction_curvature,
        coupling_residual: if bmax_all <= ZERO_FORCE { coupling } else { coupling / bmax_all },
        boundary_deviation,
    })
}
