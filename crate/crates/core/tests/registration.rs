//! End-to-end registration through the public API: synthetic scenes in,
//! recovered poses and consistent diagnostics out.

use cfpnp::dynaweight::{dynaweight_register, AlternationConfig};
use cfpnp::metrics::{pose_difference, projection_residual, ResidualReference};
use cfpnp::objectives::{KernelConfig, LossKind};
use cfpnp::solvers::{dticp_register, irls_register, SolverConfig, Termination};
use cfpnp::synthlab::{make_tree_scene, perturb_pose, prune_branches, DisturbanceSpec};
use cfpnp::Pose;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn recovers_tree_pose_from_disturbed_start() {
    let scene = make_tree_scene(8, (500.0, 800.0), 23).expect("scene");
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let spec = DisturbanceSpec { sigma_translation: 2.0, sigma_rotation_deg: 1.0 };
    let t0 = perturb_pose(&scene.ground_truth, &spec, &mut rng);

    let result = irls_register(
        &scene.source,
        &scene.targets,
        &scene.camera,
        &t0,
        &KernelConfig::default(),
        &SolverConfig::default(),
    )
    .expect("registration");

    assert!(!matches!(result.termination, Termination::Degenerate));
    // Depth is weakly observable at this range, so the translation bound
    // is loose relative to the rotation bound.
    let (angle_deg, dist) = pose_difference(&result.pose, &scene.ground_truth);
    assert!(angle_deg < 0.2, "rotation off by {angle_deg} deg");
    assert!(dist < 2.0, "translation off by {dist}");

    // Width schedule never widens, and the trace ends near the targets.
    let ells: Vec<f64> = result.trace.iter().filter_map(|r| r.ell).collect();
    assert!(ells.windows(2).all(|w| w[1] <= w[0]));
    let last = result.trace.last().expect("nonempty trace");
    assert!(last.median_tre < 0.5, "final median error {}px", last.median_tre);

    let summary = projection_residual(
        &scene.source,
        &result.pose,
        &scene.camera,
        &ResidualReference::Known(&scene.targets),
    )
    .expect("residuals");
    assert!(summary.rmse < 0.5, "rmse {}px", summary.rmse);
    assert_eq!(summary.excluded, 0);
}

#[test]
fn baseline_and_alternation_handle_pruned_scene() {
    let scene = make_tree_scene(8, (500.0, 800.0), 17).expect("scene");
    let pruned = prune_branches(&scene, 5, 17).expect("pruned scene");
    assert!(pruned.targets.len() < scene.targets.len());
    assert_eq!(pruned.source.len(), scene.source.len());

    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let spec = DisturbanceSpec { sigma_translation: 2.0, sigma_rotation_deg: 1.0 };
    let t0 = perturb_pose(&scene.ground_truth, &spec, &mut rng);

    let euclid = dticp_register(
        &pruned.source,
        &pruned.targets,
        &scene.camera,
        &t0,
        LossKind::Squared,
        &SolverConfig::default(),
    )
    .expect("baseline registration");
    assert!(!matches!(euclid.termination, Termination::Degenerate));
    assert!(euclid.trace.iter().all(|r| r.ell.is_none()));

    let alternating = dynaweight_register(
        &pruned.source,
        &pruned.targets,
        &scene.camera,
        &t0,
        &KernelConfig::default(),
        &SolverConfig::default(),
        &AlternationConfig::default(),
    )
    .expect("alternating registration");
    // The reported pose is the best one seen, so the history can never
    // undercut it.
    assert!(alternating
        .tre_history
        .iter()
        .all(|&tre| tre >= alternating.median_tre));
    assert_eq!(alternating.tre_history.len(), alternating.alternations + 1);
}

#[test]
fn pose_serialization_round_trips() {
    let scene = make_tree_scene(6, (500.0, 800.0), 31).expect("scene");
    let json = serde_json::to_string(&scene.ground_truth).expect("serialize");
    let back: Pose = serde_json::from_str(&json).expect("deserialize");
    let (angle_deg, dist) = pose_difference(&back, &scene.ground_truth);
    assert_eq!(angle_deg, 0.0);
    assert_eq!(dist, 0.0);
    assert_eq!(serde_json::to_string(&back).expect("reserialize"), json);
}
