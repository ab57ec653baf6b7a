//! Self-checks of the rod model: force consistency, boundary localization
//! of bending forces, segment decoupling and the curvature identity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::actuation::{build_b, decoupling_report, localization_report, ActuationModel};
use crate::elastic::{internal_forces, internal_forces_fd, RodParams};
use crate::error::Result;
use crate::geometry::{build_state, strains_of, RodState, Vec3};
use crate::trajgen::reference_configuration;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.value <= self.tolerance
    }
}

/// Straight rod along +x perturbed by up to `jitter · ē` per coordinate,
/// with twists in `[−twist, twist]`.
pub fn jittered_state(params: &RodParams, rng: &mut impl Rng, jitter: f64, twist: f64) -> Result<RodState> {
    let n = params.node_count();
    let ell = params.rest_edge_length();
    let nodes = (0..n)
        .map(|i| {
            Vec3::new(i as f64 * ell, 0.0, 0.0)
                + ell * Vec3::new(rng.gen_range(-jitter..=jitter), rng.gen_range(-jitter..=jitter), rng.gen_range(-jitter..=jitter))
        })
        .collect();
    let twists = (0..n - 1).map(|_| rng.gen_range(-twist..=twist)).collect();
    build_state(nodes, twists, None)
}

/// Planar polyline with random turn angles in `(−max_turn, max_turn)` and
/// edge lengths in `[½ē, 1½ē]`.
pub fn random_planar_state(params: &RodParams, rng: &mut impl Rng, max_turn: f64) -> Result<RodState> {
    let n = params.node_count();
    let ell = params.rest_edge_length();
    let mut heading: f64 = 0.0;
    let mut p = Vec3::zeros();
    let mut nodes = vec![p];
    for e in 0..n - 1 {
        if e > 0 {
            heading += rng.gen_range(-max_turn..max_turn);
        }
        p += ell * rng.gen_range(0.5..=1.5) * Vec3::new(heading.cos(), heading.sin(), 0.0);
        nodes.push(p);
    }
    build_state(nodes, vec![0.0; n - 1], None)
}

/// Largest `‖F − F_fd‖_∞ / ‖F_fd‖_∞` over `count` jittered states.
pub fn gradient_check(params: &RodParams, count: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let s = jittered_state(params, &mut rng, 0.05, 0.2)?;
        let f = internal_forces(&s, params)?;
        let fd = internal_forces_fd(&s, params, 1e-6)?;
        worst = worst.max((&f - &fd).amax() / fd.amax().max(f64::MIN_POSITIVE));
    }
    Ok(worst)
}

/// Largest `|‖κ_i‖ − 2 tan(θ_i/2)|` over `count` random planar states.
pub fn curvature_identity_check(params: &RodParams, count: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let s = random_planar_state(params, &mut rng, 2.5)?;
        let strains = strains_of(&s)?;
        for (k, th) in strains.curvatures.iter().zip(&strains.turn_angles) {
            worst = worst.max((k[0].hypot(k[1]) - 2.0 * (0.5 * th).tan()).abs());
        }
    }
    Ok(worst)
}

pub fn verification_suite(params: &RodParams, actuation: &ActuationModel, seed: u64) -> Result<Vec<Check>> {
    let mut checks = vec![
        Check {
            name: "internal force vs finite-difference energy gradient (relative)",
            value: gradient_check(params, 10, seed)?,
            tolerance: 1e-5,
        },
        Check {
            name: "curvature magnitude vs 2 tan(turn/2) on planar states",
            value: curvature_identity_check(params, 100, seed)?,
            tolerance: 1e-10,
        },
    ];
    let m = params.segment_nodes.len();
    let angles: Vec<f64> = (0..m).map(|j| if j % 2 == 0 { 0.4 } else { -0.25 }).collect();
    let arc = reference_configuration(&angles, params, actuation)?;
    let loc = localization_report(&arc, params)?;
    let seg_max = |f: fn(&crate::actuation::SegmentLocalization) -> f64| loc.segments.iter().map(f).fold(0.0, f64::max);
    checks.push(Check {
        name: "interior / boundary bending force on constant-curvature segments",
        value: loc.worst_interior_ratio(),
        tolerance: 1e-9,
    });
    checks.push(Check {
        name: "boundary force pair residual",
        value: seg_max(|s| s.start_pair_residual.max(s.end_pair_residual)),
        tolerance: 1e-9,
    });
    checks.push(Check {
        name: "boundary force component along the boundary edge",
        value: seg_max(|s| s.start_orthogonality.max(s.end_orthogonality)),
        tolerance: 1e-9,
    });
    if m > 1 {
        let dec = decoupling_report(&arc, params)?;
        checks.push(Check {
            name: "curvature at junction nodes",
            value: dec.junction_curvature,
            tolerance: 1e-9,
        });
        checks.push(Check {
            name: "full rod vs isolated segments, bending forces",
            value: dec.coupling_residual,
            tolerance: 1e-9,
        });
    }
    let b = build_b(&arc, actuation)?;
    let net = (0..b.ncols())
        .map(|j| {
            let col = b.column(j);
            (0..params.node_count())
                .fold(Vec3::zeros(), |acc, i| acc + col.fixed_rows::<3>(4 * i).into_owned())
                .norm()
        })
        .fold(0.0, f64::max);
    checks.push(Check {
        name: "net force of each actuation column",
        value: net,
        tolerance: 1e-12,
    });
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_on_fixture() {
        let p = RodParams::fixture();
        let a = ActuationModel::calibrated(&p);
        for c in verification_suite(&p, &a, 1).unwrap() {
            assert!(c.passed(), "{} = {:e}", c.name, c.value);
        }
    }
}
