//! Planar piecewise-constant-curvature chains sampled on the rod's nodes.
//!
//! Segment `j` bends by `θ_j`, split into equal turns at its `N_j − 2`
//! interior nodes. The first and last node of every segment carry no turn,
//! so the three tangents around each junction are colinear. Edge `e` then
//! points along `φ_e = Σ_j c_{e,j} θ_j` with
//! `c_{e,j} = clamp(e − s_j, 0, N_j − 2) / (N_j − 2)`.

use crate::elastic::RodParams;
use crate::error::{Error, Result};
use crate::geometry::{RodState, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct ArcChain {
    pub segment_nodes: Vec<usize>,
    pub edge_length: f64,
}

impl ArcChain {
    pub fn new(segment_nodes: Vec<usize>, edge_length: f64) -> Result<Self> {
        if segment_nodes.is_empty() {
            return Err(Error::validation("rod.segment_nodes", "at least one segment is required"));
        }
        if let Some(j) = segment_nodes.iter().position(|&n| n < 3) {
            return Err(Error::validation(
                format!("rod.segment_nodes[{j}]"),
                "a segment needs at least 3 nodes",
            ));
        }
        if !(edge_length > 0.0 && edge_length.is_finite()) {
            return Err(Error::validation("rod.rest_length", "must be positive and finite"));
        }
        Ok(Self {
            segment_nodes,
            edge_length,
        })
    }

    pub fn from_params(params: &RodParams) -> Result<Self> {
        Self::new(params.segment_nodes.clone(), params.rest_edge_length())
    }

    pub fn segments(&self) -> usize {
        self.segment_nodes.len()
    }

    pub fn node_count(&self) -> usize {
        self.segment_nodes.iter().sum()
    }

    pub fn edge_count(&self) -> usize {
        self.node_count() - 1
    }

    pub fn length(&self) -> f64 {
        self.edge_length * self.edge_count() as f64
    }

    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.segment_nodes
            .iter()
            .map(|&n| {
                let s = acc;
                acc += n;
                s
            })
            .collect()
    }

    fn check(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.segments() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} bend angles, got {}",
                self.segments(),
                theta.len()
            )));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("bend angles"));
        }
        Ok(())
    }

    /// `c_{e,j}` for one edge.
    pub fn coefficients(&self, edge: usize) -> Vec<f64> {
        self.offsets()
            .iter()
            .zip(&self.segment_nodes)
            .map(|(&s, &n)| {
                let turns = (n - 2) as f64;
                (edge as f64 - s as f64).clamp(0.0, turns) / turns
            })
            .collect()
    }

    pub fn edge_angles(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check(theta)?;
        Ok((0..self.edge_count())
            .map(|e| self.coefficients(e).iter().zip(theta).map(|(c, t)| c * t).sum())
            .collect())
    }

    /// Node positions by accumulating edges from the origin along +x.
    pub fn nodes(&self, theta: &[f64]) -> Result<Vec<Vec3>> {
        let angles = self.edge_angles(theta)?;
        let mut p = Vec3::zeros();
        let mut out = Vec::with_capacity(angles.len() + 1);
        out.push(p);
        for a in angles {
            p += self.edge_length * Vec3::new(a.cos(), a.sin(), 0.0);
            out.push(p);
        }
        Ok(out)
    }

    /// Endpoint from the closed-form geometric sums over each segment's
    /// edges plus the straight junction edges.
    pub fn tip(&self, theta: &[f64]) -> Result<Vec3> {
        self.check(theta)?;
        let m = self.segments();
        let (mut x, mut y) = (0.0, 0.0);
        let mut base = 0.0;
        for (j, (&n, &th)) in self.segment_nodes.iter().zip(theta).enumerate() {
            let alpha = th / (n - 2) as f64;
            let run = (n - 1) as f64;
            let gain = dirichlet(run, 0.5 * alpha);
            let mid = base + 0.5 * (run - 1.0) * alpha;
            x += gain * mid.cos();
            y += gain * mid.sin();
            base += th;
            if j + 1 < m {
                x += base.cos();
                y += base.sin();
            }
        }
        Ok(Vec3::new(self.edge_length * x, self.edge_length * y, 0.0))
    }

    /// `∂tip/∂θ_j`, one column per segment, summed edge by edge.
    pub fn tip_jacobian(&self, theta: &[f64]) -> Result<Vec<Vec3>> {
        self.point_jacobian(theta, self.length())
    }

    /// Point at arc length `s` from the base along the polyline.
    pub fn point(&self, theta: &[f64], s: f64) -> Result<Vec3> {
        let nodes = self.nodes(theta)?;
        let (e, frac) = self.locate(s);
        Ok(nodes[e] + frac * (nodes[e + 1] - nodes[e]))
    }

    pub fn point_jacobian(&self, theta: &[f64], s: f64) -> Result<Vec<Vec3>> {
        let angles = self.edge_angles(theta)?;
        let (last, frac) = self.locate(s);
        let mut cols = vec![Vec3::zeros(); self.segments()];
        for (e, a) in angles.iter().enumerate().take(last + 1) {
            let w = if e == last { frac } else { 1.0 };
            let d = w * self.edge_length * Vec3::new(-a.sin(), a.cos(), 0.0);
            for (col, c) in cols.iter_mut().zip(self.coefficients(e)) {
                *col += c * d;
            }
        }
        Ok(cols)
    }

    /// Edge index and fraction along it for arc length `s`.
    fn locate(&self, s: f64) -> (usize, f64) {
        let edges = self.edge_count();
        let x = (s / self.edge_length).clamp(0.0, edges as f64);
        let e = (x.floor() as usize).min(edges - 1);
        (e, x - e as f64)
    }
}

/// `sin(n x) / sin(x)` with its limit `n` at `x = 0`.
fn dirichlet(n: f64, x: f64) -> f64 {
    if x.abs() < 1e-12 {
        n
    } else {
        (n * x).sin() / x.sin()
    }
}

/// Signed total bend of each segment of a planar rod: the angle from the
/// segment's first edge to its last edge, unwrapped edge by edge.
pub fn segment_bend_angles(state: &RodState, segment_nodes: &[usize]) -> Result<Vec<f64>> {
    if segment_nodes.iter().sum::<usize>() != state.node_count() {
        return Err(Error::LayoutMismatch(format!(
            "segments cover {} nodes, rod has {}",
            segment_nodes.iter().sum::<usize>(),
            state.node_count()
        )));
    }
    let t = state.tangents()?;
    let mut out = Vec::with_capacity(segment_nodes.len());
    let mut s = 0;
    for &n in segment_nodes {
        let mut total = 0.0;
        for e in s..s + n - 2 {
            let (a, b) = (t[e], t[e + 1]);
            total += (a.x * b.y - a.y * b.x).atan2(a.x * b.x + a.y * b.y);
        }
        out.push(total);
        s += n;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn chain() -> ArcChain {
        ArcChain::new(vec![8, 8], 0.25 / 15.0).unwrap()
    }

    #[test]
    fn straight_chain_reaches_full_length() {
        let c = chain();
        let tip = c.tip(&[0.0, 0.0]).unwrap();
        assert!((tip - Vec3::new(0.25, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn closed_form_tip_matches_accumulated_nodes() {
        let c = chain();
        for th in [[0.3, -1.2], [PI / 2.0, PI / 2.0], [1e-14, 2.0], [-2.9, 0.7]] {
            let a = c.tip(&th).unwrap();
            let b = *c.nodes(&th).unwrap().last().unwrap();
            assert!((a - b).norm() < 1e-15, "{th:?}");
        }
    }

    #[test]
    fn junction_tangents_are_colinear() {
        let c = chain();
        let phi = c.edge_angles(&[0.9, -0.4]).unwrap();
        assert!((phi[6] - 0.9).abs() < 1e-15);
        assert_eq!(phi[6], phi[7]);
        assert_eq!(phi[7], phi[8]);
    }

    #[test]
    fn half_circle_then_straight() {
        let c = chain();
        let ell = c.edge_length;
        let tip = c.tip(&[PI, 0.0]).unwrap();
        // seven chords of a circle of radius r, symmetric about the y axis,
        // span a diameter-like height 2r·cos(π/12)
        let r = ell / (2.0 * (PI / 12.0).sin());
        let end1 = Vec3::new(0.0, 2.0 * r * (PI / 12.0).cos(), 0.0);
        let expected = end1 + Vec3::new(-8.0 * ell, 0.0, 0.0);
        assert!((tip - expected).norm() < 1e-14, "{tip:?} {expected:?}");
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let c = chain();
        let th = [0.7, -1.1];
        let j = c.tip_jacobian(&th).unwrap();
        let h = 1e-6;
        for k in 0..2 {
            let mut p = th;
            let mut m = th;
            p[k] += h;
            m[k] -= h;
            let fd = (c.tip(&p).unwrap() - c.tip(&m).unwrap()) / (2.0 * h);
            assert!((fd - j[k]).norm() < 1e-9);
        }
    }

    #[test]
    fn bend_angles_recover_sampled_arcs() {
        let c = chain();
        let nodes = c.nodes(&[0.8, -2.5]).unwrap();
        let s = crate::geometry::build_state(nodes, vec![0.0; 15], None).unwrap();
        let b = segment_bend_angles(&s, &c.segment_nodes).unwrap();
        assert!((b[0] - 0.8).abs() < 1e-13 && (b[1] + 2.5).abs() < 1e-13);
    }

    #[test]
    fn rejects_short_segments() {
        assert!(ArcChain::new(vec![8, 2], 0.1).is_err());
    }
}
