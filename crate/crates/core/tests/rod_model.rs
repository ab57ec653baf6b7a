//! Hand-derived values for the rod geometry, energies, actuation map and
//! simulator.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rodctl_core::actuation::{build_b, external_force, localization_report, ActuationModel};
use rodctl_core::elastic::{elastic_energy, force_jacobian, internal_forces, internal_forces_fd, mass_matrix, RodParams};
use rodctl_core::error::Error;
use rodctl_core::geometry::{build_state, compute_frames, node_dof, strains_of, tip_position, RodState, Vec3};
use rodctl_core::kinematics::segment_bend_angles;
use rodctl_core::sim::{total_energy, InputSchedule, Plant, SimConfig};
use rodctl_core::verify::jittered_state;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

/// Planar polyline with edges of length `ell` turning by `turn` at every
/// interior node.
fn planar_arc(n: usize, ell: f64, turn: f64) -> RodState {
    let mut p = Vec3::zeros();
    let mut nodes = vec![p];
    for e in 0..n - 1 {
        let h = e as f64 * turn;
        p += ell * Vec3::new(h.cos(), h.sin(), 0.0);
        nodes.push(p);
    }
    build_state(nodes, vec![0.0; n - 1], None).unwrap()
}

fn three_node_params(ea: f64) -> RodParams {
    RodParams::uniform(vec![3], 0.1, 0.01, ea, 1e-3, 1e-3, 0.0)
}

#[test]
fn three_collinear_nodes_make_eleven_coordinates() {
    let s = build_state(
        vec![Vec3::zeros(), Vec3::new(0.1, 0.0, 0.0), Vec3::new(0.2, 0.0, 0.0)],
        vec![0.0, 0.0],
        None,
    )
    .unwrap();
    assert_eq!(s.node_count(), 3);
    assert_eq!(s.dof_len(), 11);
}

#[test]
fn malformed_states_are_rejected() {
    let two = build_state(vec![Vec3::zeros(), Vec3::x()], vec![0.0], None);
    assert!(matches!(two, Err(Error::DimensionMismatch(_))));
    let repeated = build_state(vec![Vec3::zeros(), Vec3::x(), Vec3::x()], vec![0.0, 0.0], None);
    assert!(matches!(repeated, Err(Error::DegenerateEdge { edge: 1 })));
}

#[test]
fn straight_rod_directors() {
    let s = RodState::straight(5, 0.25).unwrap();
    let f = compute_frames(&s, None).unwrap();
    // t × (−E3) with t = x̂ is (0, 1, 0); t × m1 is ẑ
    for (m1, m2) in f.m1.iter().zip(&f.m2) {
        assert!((m1 - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
        assert!((m2 - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-15);
    }
}

#[test]
fn quarter_turn_directors_rotate_about_tangent() {
    let mut s = RodState::straight(4, 0.3).unwrap();
    s.twists[1] = std::f64::consts::FRAC_PI_2;
    let f = compute_frames(&s, None).unwrap();
    assert!((f.m1[1] - f.a2[1]).norm() < 1e-15);
    assert!((f.m2[1] + f.a1[1]).norm() < 1e-15);
}

#[test]
fn right_angle_turns_have_unit_tangent_half_angle() {
    for (turn, expected) in [(std::f64::consts::FRAC_PI_2, 2.0), (std::f64::consts::FRAC_PI_3, 1.1547005383792515)] {
        let s = planar_arc(4, 0.1, turn);
        for k in strains_of(&s).unwrap().curvatures {
            assert!(close(k[0], expected, 1e-12), "{k:?}");
            assert!(k[1].abs() < 1e-15);
        }
    }
}

#[test]
fn straight_and_translated_tips() {
    let s = RodState::straight(11, 0.25).unwrap();
    assert!((tip_position(&s) - Vec3::new(0.25, 0.0, 0.0)).norm() < 1e-15);
    let d = Vec3::new(0.1, -0.2, 0.3);
    let moved = build_state(s.nodes.iter().map(|x| x + d).collect(), s.twists.clone(), None).unwrap();
    assert!((tip_position(&moved) - Vec3::new(0.35, -0.2, 0.3)).norm() < 1e-15);
}

#[test]
fn single_stretched_edge() {
    let p = three_node_params(100.0);
    let s = build_state(
        vec![Vec3::zeros(), Vec3::new(0.05, 0.0, 0.0), Vec3::new(0.101, 0.0, 0.0)],
        vec![0.0; 2],
        None,
    )
    .unwrap();
    let e = elastic_energy(&s, &p).unwrap();
    assert!(close(e.stretch, 0.5 * 100.0 * 1e-6, 1e-15));
    // −∂/∂x of ½EA(x2 − x1 − ē)²: +EAδ on the near node, −EAδ on the far one
    for f in [internal_forces(&s, &p).unwrap(), internal_forces_fd(&s, &p, 1e-6).unwrap()] {
        assert!(close(f[node_dof(1)], 0.1, 1e-6));
        assert!(close(f[node_dof(2)], -0.1, 1e-6));
        assert!(f[node_dof(0)].abs() < 1e-6);
    }
}

#[test]
fn axial_stiffness_block_of_stretched_edge() {
    let p = three_node_params(100.0);
    let s = build_state(
        vec![Vec3::zeros(), Vec3::new(0.05, 0.0, 0.0), Vec3::new(0.1, 0.0, 0.0)],
        vec![0.0; 2],
        None,
    )
    .unwrap();
    let j = force_jacobian(&s, &p).unwrap();
    let (a, b) = (node_dof(1), node_dof(2));
    // −EA t tᵀ on the diagonal block of the shared edge, +EA t tᵀ across it
    assert!(close(j[(b, b)], -100.0, 1e-3));
    assert!(close(j[(a, b)], 100.0, 1e-3));
    assert!(j[(b + 1, b)].abs() < 1e-3);
}

#[test]
fn uniform_arc_bending_energy() {
    let mut p = RodParams::uniform(vec![12], 0.55, 0.05, 1.0, 1e-3, 1e-3, 0.0);
    p.ei = 1e-3;
    let s = planar_arc(12, 0.05, 0.3);
    let expected = 0.5 * 1e-3 * 10.0 * (2.0 * 0.15f64.tan()).powi(2);
    let e = elastic_energy(&s, &p).unwrap();
    assert!(close(e.bend, expected, 1e-15));
}

#[test]
fn rest_configuration_is_force_free() {
    let p = RodParams::fixture();
    let s = RodState::straight(p.node_count(), p.rest_length).unwrap();
    assert!(elastic_energy(&s, &p).unwrap().total() < 1e-25);
    assert!(internal_forces(&s, &p).unwrap().amax() < 1e-12);
    assert!(internal_forces_fd(&s, &p, 1e-6).unwrap().amax() <= 1e-8 * p.ea);
}

#[test]
fn mass_layout_interleaves_twist_inertia() {
    let p = RodParams {
        segment_nodes: vec![3],
        rest_length: 0.1,
        ea: 1.0,
        ei: 1.0,
        gj: 1.0,
        node_masses: vec![0.1, 0.2, 0.1],
        edge_inertias: vec![1e-6, 1e-6],
        damping: vec![0.0; 11],
        gravity: [0.0; 3],
    };
    let expected = [0.1, 0.1, 0.1, 1e-6, 0.2, 0.2, 0.2, 1e-6, 0.1, 0.1, 0.1];
    assert_eq!(mass_matrix(&p).as_slice(), &expected);
}

#[test]
fn half_edge_lumping() {
    let p = RodParams::uniform(vec![11], 0.25, 0.05, 1.0, 1.0, 1.0, 0.0);
    assert!(close(p.node_masses[0], 0.0025, 1e-15));
    assert!(close(p.node_masses[5], 0.005, 1e-15));
    assert!(close(p.node_masses[10], 0.0025, 1e-15));
    assert!(close(p.total_mass(), 0.05, 1e-15));
}

#[test]
fn force_jacobian_is_nearly_symmetric() {
    let p = RodParams::fixture();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5 {
        let s = jittered_state(&p, &mut rng, 0.05, 0.2).unwrap();
        let j = force_jacobian(&s, &p).unwrap();
        let asym = (&j - j.transpose()).norm() / j.norm();
        assert!(asym <= 1e-4, "{asym:e}");
    }
}

#[test]
fn straight_two_segment_actuation_rows() {
    let p = RodParams::fixture();
    let a = ActuationModel::calibrated(&p);
    let s = RodState::straight(16, 0.25).unwrap();
    let b = build_b(&s, &a).unwrap();
    let y = Vec3::new(0.0, 1.0, 0.0);
    let expected = [[(0, y), (1, -y), (6, -y), (7, y)], [(8, y), (9, -y), (14, -y), (15, y)]];
    for (j, rows) in expected.iter().enumerate() {
        for i in 0..16 {
            let row = b.fixed_view::<3, 1>(node_dof(i), j).into_owned();
            match rows.iter().find(|(n, _)| *n == i) {
                Some((_, v)) => assert_eq!(row, *v, "column {j}, node {i}"),
                None => assert_eq!(row, Vec3::zeros(), "column {j}, node {i}"),
            }
        }
    }
}

#[test]
fn external_force_terms() {
    let p = RodParams::fixture();
    let a = ActuationModel::new(p.segment_nodes.clone(), nalgebra::DMatrix::from_diagonal_element(2, 2, 2.0)).unwrap();
    let s = RodState::straight(16, 0.25).unwrap();
    let dim = s.dof_len();
    let zero_v = DVector::zeros(dim);
    assert_eq!(external_force(&s, &zero_v, &DVector::zeros(2), &a, &p).unwrap(), DVector::zeros(dim));

    let v = DVector::from_fn(dim, |k, _| (k as f64).sin());
    let f = external_force(&s, &v, &DVector::zeros(2), &a, &p).unwrap();
    for k in 0..dim {
        assert_eq!(f[k], -p.damping[k] * v[k]);
    }

    let f = external_force(&s, &zero_v, &DVector::from_vec(vec![1.0, 0.0]), &a, &p).unwrap();
    for i in 0..16 {
        let fi = f.fixed_rows::<3>(node_dof(i)).into_owned();
        if [0, 1, 6, 7].contains(&i) {
            assert!(close(fi.norm(), 2.0, 1e-15) && close(fi.y.abs(), 2.0, 1e-15));
        } else {
            assert_eq!(fi, Vec3::zeros());
        }
    }
}

#[test]
fn straight_rod_reports_zero_boundary() {
    let p = RodParams::fixture();
    let s = RodState::straight(16, 0.25).unwrap();
    for seg in localization_report(&s, &p).unwrap().segments {
        assert!(seg.zero_boundary);
        assert_eq!(seg.interior_ratio, 0.0);
    }
}

#[test]
fn unit_input_settles_at_the_calibrated_bend() {
    let base = Plant::fixture();
    // implicit Euler with a long step goes straight to the equilibrium
    let plant = Plant {
        config: SimConfig { dt: 0.05, ..base.config.clone() },
        ..base
    };
    let u = DVector::from_vec(vec![1.0, 0.0]);
    let traj = plant
        .rollout(&plant.rest_state().unwrap(), &InputSchedule::constant(u.clone(), 0.05), 400)
        .unwrap();
    let s = traj.final_state();
    let bend = segment_bend_angles(s, &plant.params.segment_nodes).unwrap();
    assert!(close(bend[0], std::f64::consts::FRAC_PI_4, 1e-6), "{bend:?}");
    assert!(bend[1].abs() < 1e-6, "{bend:?}");

    let actuation = build_b(s, &plant.actuation).unwrap() * (&plant.actuation.lambda * &u);
    let residual = internal_forces(s, &plant.params).unwrap() + &actuation;
    let free = plant.config.free_dofs(s.dof_len());
    let r = residual.select_rows(&free).norm();
    assert!(r <= 1e-8 * actuation.select_rows(&free).norm(), "{r:e}");
}

#[test]
fn rest_is_a_fixed_point_and_rollouts_repeat() {
    let plant = Plant::fixture();
    let rest = plant.rest_state().unwrap();
    let zero = InputSchedule::constant(DVector::zeros(2), 0.05);
    let traj = plant.rollout(&rest, &zero, 20).unwrap();
    assert!(traj.states.iter().all(|s| s.dofs() == rest.dofs()));

    let u = InputSchedule::new(0.05, vec![DVector::from_vec(vec![0.3, -0.2]), DVector::from_vec(vec![-0.1, 0.4])]).unwrap();
    let a = plant.rollout(&rest, &u, 30).unwrap();
    let b = plant.rollout(&rest, &u, 30).unwrap();
    assert_eq!(a, b);
}

#[test]
fn free_rod_translates_rigidly_without_damping() {
    let mut params = RodParams::fixture();
    params.damping = vec![0.0; params.dof_len()];
    let actuation = ActuationModel::calibrated(&params);
    let plant = Plant {
        params,
        actuation,
        config: SimConfig::unclamped(0.01),
    };
    let rest = plant.rest_state().unwrap();
    let v = Vec3::new(0.2, -0.1, 0.05);
    let vel = DVector::from_fn(rest.dof_len(), |k, _| if k % 4 == 3 { 0.0 } else { v[k % 4] });
    let s0 = build_state(rest.nodes.clone(), rest.twists.clone(), Some(vel.clone())).unwrap();

    let e = total_energy(&s0, &plant.params).unwrap();
    assert!(close(e.kinetic, 0.5 * plant.params.total_mass() * v.norm_squared(), 1e-15));
    assert!(e.elastic < 1e-25);

    let s1 = plant.step(&s0, &DVector::zeros(2)).unwrap();
    assert!((s1.dofs() - s0.dofs() - &vel * 0.01).amax() < 1e-12);
    assert!((&s1.velocity - &vel).amax() < 1e-10);
    assert!(internal_forces(&s1, &plant.params).unwrap().amax() < 1e-9);
}

#[test]
fn damping_slows_a_translating_rod() {
    let p = RodParams::fixture();
    let plant = Plant {
        actuation: ActuationModel::calibrated(&p),
        params: p,
        config: SimConfig::unclamped(0.01),
    };
    let rest = plant.rest_state().unwrap();
    let vel = DVector::from_fn(rest.dof_len(), |k, _| if k % 4 == 1 { 0.1 } else { 0.0 });
    let mut s = build_state(rest.nodes.clone(), rest.twists.clone(), Some(vel)).unwrap();
    let mut ke = total_energy(&s, &plant.params).unwrap().kinetic;
    for _ in 0..10 {
        s = plant.step(&s, &DVector::zeros(2)).unwrap();
        let next = total_energy(&s, &plant.params).unwrap().kinetic;
        assert!(next < ke);
        ke = next;
    }
}
