//! Rod state, frames and discrete strains.
//!
//! Generalized coordinates are interleaved as
//! `q = [x_0, φ_0, x_1, φ_1, …, x_{N-2}, φ_{N-2}, x_{N-1}]`, giving `4N - 1`
//! degrees of freedom. Every state also carries the reference frames its twist
//! angles are measured against; they are advanced by time-parallel transport
//! between steps and are not degrees of freedom themselves.

use nalgebra::{DVector, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Out-of-plane director. Planar motion happens in the x-y plane.
pub fn e3() -> Vec3 {
    Vec3::z()
}

/// Number of generalized coordinates for `n` nodes.
pub const fn dof_count(n: usize) -> usize {
    4 * n - 1
}

/// Index of the first coordinate of node `i`.
pub const fn node_dof(i: usize) -> usize {
    4 * i
}

/// Index of the twist coordinate of edge `i`.
pub const fn twist_dof(i: usize) -> usize {
    4 * i + 3
}

/// Smallest `1 + t_{i-1}·t_i` accepted before the binormal is declared singular.
const ANTIPODAL_EPS: f64 = 1e-12;

/// Per-edge reference directors together with the tangents they were built for.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceFrames {
    pub tangents: Vec<Vec3>,
    pub a1: Vec<Vec3>,
}

impl ReferenceFrames {
    /// Space-parallel transport along the rod, starting from `a1_0 = E3 × t_0`.
    ///
    /// For a planar rod with zero twist this reproduces `m_1 = t × (−E3)` on
    /// every edge.
    pub fn space_parallel(tangents: &[Vec3]) -> Self {
        let mut a1 = Vec::with_capacity(tangents.len());
        if let Some(t0) = tangents.first() {
            a1.push(perpendicular_seed(t0));
            for w in tangents.windows(2) {
                let prev = *a1.last().unwrap();
                a1.push(orthonormalize(&parallel_transport(&prev, &w[0], &w[1]), &w[1]));
            }
        }
        Self {
            tangents: tangents.to_vec(),
            a1,
        }
    }

    /// Time-parallel transport of these frames onto a new set of tangents.
    pub fn transport_to(&self, tangents: &[Vec3]) -> Self {
        let a1 = self
            .a1
            .iter()
            .zip(&self.tangents)
            .zip(tangents)
            .map(|((a, from), to)| orthonormalize(&parallel_transport(a, from, to), to))
            .collect();
        Self {
            tangents: tangents.to_vec(),
            a1,
        }
    }
}

fn perpendicular_seed(t: &Vec3) -> Vec3 {
    let a = e3().cross(t);
    if a.norm() > 1e-8 {
        a.normalize()
    } else {
        // tangent along E3; any perpendicular works
        orthonormalize(&Vec3::x(), t)
    }
}

fn orthonormalize(a: &Vec3, t: &Vec3) -> Vec3 {
    (a - t * a.dot(t)).normalize()
}

/// Rotate `v` by the minimal rotation carrying unit vector `from` onto `to`.
pub fn parallel_transport(v: &Vec3, from: &Vec3, to: &Vec3) -> Vec3 {
    let b = from.cross(to);
    let s = b.norm();
    let c = from.dot(to);
    if s < 1e-300 {
        return *v;
    }
    let k = b / s;
    v * c + k.cross(v) * s + k * k.dot(v) * (1.0 - c)
}

/// Generalized coordinates and velocities of a discrete elastic rod.
#[derive(Debug, Clone, PartialEq)]
pub struct RodState {
    pub nodes: Vec<Vec3>,
    pub twists: Vec<f64>,
    pub velocity: DVector<f64>,
    pub reference: ReferenceFrames,
}

/// Validate and assemble a rod state. Reference frames are initialized by
/// space-parallel transport.
pub fn build_state(
    nodes: Vec<Vec3>,
    twists: Vec<f64>,
    velocity: Option<DVector<f64>>,
) -> Result<RodState> {
    let n = nodes.len();
    if n < 3 {
        return Err(Error::DimensionMismatch(format!(
            "a rod needs at least 3 nodes, got {n}"
        )));
    }
    if twists.len() != n - 1 {
        return Err(Error::DimensionMismatch(format!(
            "expected {} twist angles, got {}",
            n - 1,
            twists.len()
        )));
    }
    let velocity = match velocity {
        Some(v) if v.len() != dof_count(n) => {
            return Err(Error::DimensionMismatch(format!(
                "expected velocity of length {}, got {}",
                dof_count(n),
                v.len()
            )))
        }
        Some(v) => v,
        None => DVector::zeros(dof_count(n)),
    };
    let tangents = validated_tangents(&nodes, &twists, &velocity)?;
    Ok(RodState {
        reference: ReferenceFrames::space_parallel(&tangents),
        nodes,
        twists,
        velocity,
    })
}

fn validated_tangents(nodes: &[Vec3], twists: &[f64], velocity: &DVector<f64>) -> Result<Vec<Vec3>> {
    if nodes.iter().any(|x| !x.iter().all(|c| c.is_finite())) {
        return Err(Error::NonFinite("node positions"));
    }
    if twists.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite("twist angles"));
    }
    if velocity.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("velocity"));
    }
    edge_tangents(nodes)
}

fn edge_tangents(nodes: &[Vec3]) -> Result<Vec<Vec3>> {
    nodes
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let e = w[1] - w[0];
            let len = e.norm();
            if len == 0.0 {
                Err(Error::DegenerateEdge { edge: i })
            } else {
                Ok(e / len)
            }
        })
        .collect()
}

impl RodState {
    /// A straight rod at rest along +x starting at the origin.
    pub fn straight(n: usize, length: f64) -> Result<Self> {
        if n < 2 {
            return build_state(vec![Vec3::zeros(); n], vec![], None);
        }
        let h = length / (n - 1) as f64;
        let nodes = (0..n).map(|i| Vec3::new(i as f64 * h, 0.0, 0.0)).collect();
        build_state(nodes, vec![0.0; n - 1], None)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn dof_len(&self) -> usize {
        dof_count(self.nodes.len())
    }

    /// Flattened generalized coordinates.
    pub fn dofs(&self) -> DVector<f64> {
        let n = self.nodes.len();
        let mut q = DVector::zeros(dof_count(n));
        for (i, x) in self.nodes.iter().enumerate() {
            q.fixed_rows_mut::<3>(node_dof(i)).copy_from(x);
        }
        for (i, phi) in self.twists.iter().enumerate() {
            q[twist_dof(i)] = *phi;
        }
        q
    }

    /// New state at coordinates `q` sharing this state's reference frames.
    pub fn with_dofs(&self, q: &DVector<f64>, velocity: DVector<f64>) -> Result<Self> {
        let n = self.nodes.len();
        if q.len() != dof_count(n) || velocity.len() != dof_count(n) {
            return Err(Error::DimensionMismatch(format!(
                "expected {} coordinates, got {} and {}",
                dof_count(n),
                q.len(),
                velocity.len()
            )));
        }
        let nodes: Vec<Vec3> = (0..n).map(|i| q.fixed_rows::<3>(node_dof(i)).into_owned()).collect();
        let twists: Vec<f64> = (0..n - 1).map(|i| q[twist_dof(i)]).collect();
        validated_tangents(&nodes, &twists, &velocity)?;
        Ok(Self {
            nodes,
            twists,
            velocity,
            reference: self.reference.clone(),
        })
    }

    /// Same state with reference frames time-parallel transported onto the
    /// current tangents.
    pub fn with_transported_reference(mut self) -> Result<Self> {
        let tangents = edge_tangents(&self.nodes)?;
        self.reference = self.reference.transport_to(&tangents);
        Ok(self)
    }

    /// Same state with reference frames rebuilt by space-parallel transport.
    pub fn with_fresh_reference(mut self) -> Result<Self> {
        let tangents = edge_tangents(&self.nodes)?;
        self.reference = ReferenceFrames::space_parallel(&tangents);
        Ok(self)
    }

    pub fn tangents(&self) -> Result<Vec<Vec3>> {
        edge_tangents(&self.nodes)
    }
}

/// End-effector readout: the last node.
pub fn tip_position(state: &RodState) -> Vec3 {
    *state.nodes.last().expect("validated state has nodes")
}

/// Tangents, reference directors and material directors of every edge.
#[derive(Debug, Clone)]
pub struct FrameSet {
    pub tangents: Vec<Vec3>,
    pub edge_lengths: Vec<f64>,
    pub a1: Vec<Vec3>,
    pub a2: Vec<Vec3>,
    pub m1: Vec<Vec3>,
    pub m2: Vec<Vec3>,
    /// Reference twist at each interior node: signed angle, about `t_i`, from
    /// the transported `a1_{i-1}` to `a1_i`.
    pub reference_twist: Vec<f64>,
}

/// Frames of `state`. Reference directors come from `prev` when given,
/// otherwise from the frames stored on the state, transported onto the
/// current tangents.
pub fn compute_frames(state: &RodState, prev: Option<&ReferenceFrames>) -> Result<FrameSet> {
    let (tangents, edge_lengths): (Vec<Vec3>, Vec<f64>) = state
        .nodes
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let e = w[1] - w[0];
            let len = e.norm();
            if len == 0.0 {
                Err(Error::DegenerateEdge { edge: i })
            } else {
                Ok((e / len, len))
            }
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();

    let reference = prev.unwrap_or(&state.reference);
    if reference.a1.len() != tangents.len() {
        return Err(Error::DimensionMismatch(format!(
            "reference frames cover {} edges, rod has {}",
            reference.a1.len(),
            tangents.len()
        )));
    }
    let a1 = reference.transport_to(&tangents).a1;
    let a2: Vec<Vec3> = tangents.iter().zip(&a1).map(|(t, a)| t.cross(a)).collect();

    let mut m1 = Vec::with_capacity(a1.len());
    let mut m2 = Vec::with_capacity(a1.len());
    for ((a, b), phi) in a1.iter().zip(&a2).zip(&state.twists) {
        let (s, c) = phi.sin_cos();
        m1.push(a * c + b * s);
        m2.push(b * c - a * s);
    }

    let reference_twist = (1..tangents.len())
        .map(|i| {
            let u = parallel_transport(&a1[i - 1], &tangents[i - 1], &tangents[i]);
            signed_angle(&u, &a1[i], &tangents[i])
        })
        .collect();

    Ok(FrameSet {
        tangents,
        edge_lengths,
        a1,
        a2,
        m1,
        m2,
        reference_twist,
    })
}

fn signed_angle(from: &Vec3, to: &Vec3, axis: &Vec3) -> f64 {
    from.cross(to).dot(axis).atan2(from.dot(to))
}

/// Curvature binormal `2 t_a × t_b / (1 + t_a·t_b)`.
pub fn curvature_binormal(ta: &Vec3, tb: &Vec3, node: usize) -> Result<Vec3> {
    let chi = 1.0 + ta.dot(tb);
    if chi <= ANTIPODAL_EPS {
        return Err(Error::AntipodalTangents { node });
    }
    Ok(ta.cross(tb) * (2.0 / chi))
}

/// Discrete strains. Curvature, twist and turn angle arrays are indexed by
/// interior node: entry `k` belongs to node `k + 1`.
#[derive(Debug, Clone)]
pub struct DiscreteStrains {
    pub edge_lengths: Vec<f64>,
    pub curvatures: Vec<[f64; 2]>,
    pub twists: Vec<f64>,
    pub turn_angles: Vec<f64>,
    pub binormals: Vec<Vec3>,
}

/// Edge lengths, material curvatures, twists and turn angles.
///
/// Curvature components project the binormal onto the averaged material
/// directors without a sign flip on the second component:
/// `κ_1 = ½(m2_{i-1} + m2_i)·(κb)_i`, `κ_2 = ½(m1_{i-1} + m1_i)·(κb)_i`.
/// With `m1 = t × (−E3)` a planar rod has `κ_2 = 0` and `κ_1 > 0` for a
/// counter-clockwise turn. Energies only see `‖κ‖²` because rest curvature
/// is zero.
pub fn compute_strains(state: &RodState, frames: &FrameSet) -> Result<DiscreteStrains> {
    let n_int = frames.tangents.len().saturating_sub(1);
    let mut curvatures = Vec::with_capacity(n_int);
    let mut twists = Vec::with_capacity(n_int);
    let mut turn_angles = Vec::with_capacity(n_int);
    let mut binormals = Vec::with_capacity(n_int);
    for k in 0..n_int {
        let (ta, tb) = (&frames.tangents[k], &frames.tangents[k + 1]);
        let kb = curvature_binormal(ta, tb, k + 1)?;
        let m1 = (frames.m1[k] + frames.m1[k + 1]) * 0.5;
        let m2 = (frames.m2[k] + frames.m2[k + 1]) * 0.5;
        curvatures.push([m2.dot(&kb), m1.dot(&kb)]);
        twists.push(state.twists[k + 1] - state.twists[k] + frames.reference_twist[k]);
        turn_angles.push(ta.cross(tb).norm().atan2(ta.dot(tb)));
        binormals.push(kb);
    }
    Ok(DiscreteStrains {
        edge_lengths: frames.edge_lengths.clone(),
        curvatures,
        twists,
        turn_angles,
        binormals,
    })
}

/// Frames and strains of `state` against its own stored reference frames.
pub fn strains_of(state: &RodState) -> Result<DiscreteStrains> {
    compute_strains(state, &compute_frames(state, None)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn planar_arc(n: usize, edge: f64, turn: f64) -> RodState {
        let mut nodes = vec![Vec3::zeros()];
        let mut angle: f64 = 0.0;
        for i in 0..n - 1 {
            if i > 0 {
                angle += turn;
            }
            let last = *nodes.last().unwrap();
            nodes.push(last + Vec3::new(angle.cos(), angle.sin(), 0.0) * edge);
        }
        build_state(nodes, vec![0.0; n - 1], None).unwrap()
    }

    #[test]
    fn build_state_accepts_three_collinear_nodes() {
        let nodes = vec![Vec3::zeros(), Vec3::new(0.1, 0.0, 0.0), Vec3::new(0.2, 0.0, 0.0)];
        let s = build_state(nodes, vec![0.0, 0.0], None).unwrap();
        assert_eq!(s.node_count(), 3);
        assert_eq!(s.dof_len(), 11);
        assert_eq!(s.dofs().len(), 11);
    }

    #[test]
    fn build_state_rejects_bad_input() {
        let two = vec![Vec3::zeros(), Vec3::x()];
        assert!(matches!(build_state(two, vec![0.0], None), Err(Error::DimensionMismatch(_))));

        let coincident = vec![Vec3::zeros(), Vec3::x(), Vec3::x()];
        assert!(matches!(
            build_state(coincident, vec![0.0, 0.0], None),
            Err(Error::DegenerateEdge { edge: 1 })
        ));

        let nan = vec![Vec3::zeros(), Vec3::x(), Vec3::new(f64::NAN, 0.0, 0.0)];
        assert!(matches!(build_state(nan, vec![0.0, 0.0], None), Err(Error::NonFinite(_))));

        let nodes = vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0];
        assert!(matches!(build_state(nodes.clone(), vec![0.0], None), Err(Error::DimensionMismatch(_))));
        assert!(matches!(
            build_state(nodes, vec![0.0, 0.0], Some(DVector::zeros(10))),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn dofs_roundtrip_through_with_dofs() {
        let s = planar_arc(5, 0.1, 0.3);
        let mut q = s.dofs();
        q[twist_dof(2)] = 0.25;
        let t = s.with_dofs(&q, DVector::zeros(q.len())).unwrap();
        assert_eq!(t.twists[2], 0.25);
        assert_eq!(t.dofs(), q);
    }

    #[test]
    fn straight_rod_frames_follow_planar_convention() {
        let s = RodState::straight(4, 0.3).unwrap();
        let f = compute_frames(&s, None).unwrap();
        for i in 0..3 {
            // t × (−E3) with t = x: x × (−z) = y
            assert!((f.m1[i] - Vec3::y()).norm() < 1e-15);
            assert!((f.m2[i] - Vec3::z()).norm() < 1e-15);
            assert!((f.m1[i] - f.tangents[i].cross(&(-e3()))).norm() < 1e-15);
            assert!((f.m2[i] - f.tangents[i].cross(&f.m1[i])).norm() < 1e-15);
        }
    }

    #[test]
    fn twist_rotates_material_frame_about_tangent() {
        let mut s = RodState::straight(4, 0.3).unwrap();
        s.twists[1] = PI / 2.0;
        let f = compute_frames(&s, None).unwrap();
        let rotated = |v: &Vec3| Vec3::new(v.x, -v.z, v.y); // +90° about x
        assert!((f.m1[1] - rotated(&f.a1[1])).norm() < 1e-15);
        assert!((f.m2[1] - rotated(&f.a2[1])).norm() < 1e-15);
        assert!((f.m1[0] - f.a1[0]).norm() < 1e-15);
    }

    #[test]
    fn frames_rotate_with_the_rod_about_e3() {
        let s = planar_arc(6, 0.05, 0.4);
        let rot = nalgebra::Rotation3::from_axis_angle(&nalgebra::Vector3::z_axis(), 1.1);
        let nodes = s.nodes.iter().map(|x| rot * x).collect();
        let r = build_state(nodes, s.twists.clone(), None).unwrap();
        let (f, g) = (compute_frames(&s, None).unwrap(), compute_frames(&r, None).unwrap());
        for i in 0..5 {
            assert!((rot * f.m1[i] - g.m1[i]).norm() < 1e-12);
            assert!((rot * f.m2[i] - g.m2[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn straight_rod_has_zero_strain() {
        let s = RodState::straight(6, 0.25).unwrap();
        let st = strains_of(&s).unwrap();
        assert!(st.curvatures.iter().all(|k| k[0] == 0.0 && k[1] == 0.0));
        assert!(st.twists.iter().all(|t| *t == 0.0));
        assert!(st.turn_angles.iter().all(|t| *t == 0.0));
    }

    #[test]
    fn planar_arcs_match_tangent_half_angle_law() {
        for (turn, expected) in [(PI / 2.0, 2.0), (PI / 3.0, 1.154_700_538_379_251_5)] {
            let st = strains_of(&planar_arc(5, 0.1, turn)).unwrap();
            for k in &st.curvatures {
                assert!((k[0] - expected).abs() < 1e-12, "{} vs {}", k[0], expected);
                assert!(k[1].abs() < 1e-15);
            }
            for th in &st.turn_angles {
                assert!((th - turn).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn antipodal_tangents_are_an_error() {
        let nodes = vec![Vec3::zeros(), Vec3::x(), Vec3::zeros()];
        let s = build_state(nodes, vec![0.0, 0.0], None).unwrap();
        assert!(matches!(strains_of(&s), Err(Error::AntipodalTangents { node: 1 })));
    }

    #[test]
    fn tip_is_last_node_and_translates() {
        let s = RodState::straight(6, 0.25).unwrap();
        assert!((tip_position(&s) - Vec3::new(0.25, 0.0, 0.0)).norm() < 1e-15);
        let d = Vec3::new(0.1, -0.2, 0.3);
        let moved = build_state(s.nodes.iter().map(|x| x + d).collect(), s.twists.clone(), None).unwrap();
        assert!((tip_position(&moved) - tip_position(&s) - d).norm() < 1e-15);
    }

    #[test]
    fn space_parallel_frames_have_zero_reference_twist() {
        let nodes = vec![
            Vec3::zeros(),
            Vec3::new(0.1, 0.0, 0.0),
            Vec3::new(0.18, 0.05, 0.02),
            Vec3::new(0.22, 0.12, 0.07),
        ];
        let s = build_state(nodes, vec![0.0; 3], None).unwrap();
        let f = compute_frames(&s, None).unwrap();
        assert!(f.reference_twist.iter().all(|t| t.abs() < 1e-14));
    }
}
