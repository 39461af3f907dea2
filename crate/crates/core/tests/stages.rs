use gsedit_core::deform::init_anchors;
use gsedit_core::loss::{photometric_loss, positional_loss};
use gsedit_core::optimize::{coarse_stage, fine_stage, FineMode, Target};
use gsedit_core::regularize::{mask_l1, MaskFamily, RigidityGraph};
use gsedit_core::render::render_forward;
use gsedit_core::toy::{gen_toy_scene, toy_config, ToyKind, ToySpec};

fn small_toy(kind: ToyKind) -> gsedit_core::toy::ToyScene {
    let spec = ToySpec {
        gaussians: 40,
        width: 32,
        height: 32,
        ..ToySpec::new(kind)
    };
    gen_toy_scene(&spec).unwrap()
}

#[test]
fn first_record_matches_independent_evaluation() {
    let toy = small_toy(ToyKind::TranslateCluster);
    let mut cfg = toy_config(&toy.spec);
    cfg.coarse.iterations = 2;
    let anchors = init_anchors(&toy.scene, &cfg.anchors).unwrap();
    let graph = RigidityGraph::build(
        gsedit_core::regularize::NodeKind::Anchors,
        &anchors.a_init,
        cfg.coarse.k_reg,
        cfg.coarse.gamma,
    )
    .unwrap();
    let out = coarse_stage(
        &toy.scene,
        anchors,
        Some(graph.clone()),
        Target::new(&toy.reference, &toy.camera),
        &cfg.coarse,
        &cfg.transport,
    )
    .unwrap();

    let render = render_forward(&toy.scene, &toy.camera);
    let c = &cfg.coarse;
    let photo = photometric_loss(&render.image, &toy.reference, c.lambda_l1, c.lambda_ssim, None).unwrap();
    let pos = positional_loss(&render.image, &toy.reference, &cfg.transport).unwrap();
    let expect = photo.total + c.lambda_pos * pos.value + c.lambda_mask * mask_l1(&graph).value;

    let rec = &out.log[0];
    assert!((rec.loss.total - expect).abs() < 1e-10, "{} vs {expect}", rec.loss.total);
    assert!((rec.loss.positional - pos.value).abs() < 1e-12);
    assert_eq!(rec.loss.arap, 0.0);
    for r in &out.log {
        assert!((r.loss.total - r.loss.weighted_sum(&c.weights())).abs() < 1e-10);
    }
}

#[test]
fn coarse_stage_reduces_the_loss() {
    let toy = small_toy(ToyKind::TranslateCluster);
    let mut cfg = toy_config(&toy.spec);
    cfg.coarse.iterations = 80;
    let anchors = init_anchors(&toy.scene, &cfg.anchors).unwrap();
    let out = coarse_stage(
        &toy.scene,
        anchors,
        None,
        Target::new(&toy.reference, &toy.camera),
        &cfg.coarse,
        &cfg.transport,
    )
    .unwrap();
    let first = out.log.first().unwrap().loss.total;
    let last = out.log.last().unwrap().loss.total;
    assert!(last < first, "{first} -> {last}");
    assert_eq!(out.iterations, 80);
}

#[test]
fn psnr_target_stops_early() {
    let toy = small_toy(ToyKind::TranslateCluster);
    let mut cfg = toy_config(&toy.spec);
    cfg.coarse.iterations = 50;
    cfg.coarse.psnr_target = Some(0.0);
    let anchors = init_anchors(&toy.scene, &cfg.anchors).unwrap();
    let out = coarse_stage(
        &toy.scene,
        anchors,
        None,
        Target::new(&toy.reference, &toy.camera),
        &cfg.coarse,
        &cfg.transport,
    )
    .unwrap();
    assert_eq!(out.reached_target, Some(0));
    assert_eq!(out.iterations, 0);
}

#[test]
fn mask_reset_on_the_last_iteration_leaves_masks_high() {
    let toy = small_toy(ToyKind::BendArm);
    let mut cfg = toy_config(&toy.spec);
    cfg.coarse.iterations = 20;
    cfg.coarse.mask_reset_period = 10;
    cfg.coarse.lr_mask = 0.5;
    let anchors = init_anchors(&toy.scene, &cfg.anchors).unwrap();
    let out = coarse_stage(
        &toy.scene,
        anchors,
        None,
        Target::new(&toy.reference, &toy.camera),
        &cfg.coarse,
        &cfg.transport,
    )
    .unwrap();
    for family in [MaskFamily::Arap, MaskFamily::Rotation, MaskFamily::Distance] {
        assert!(out.graph.mask_values(family).iter().all(|v| *v >= 0.99));
    }
}

#[test]
fn fine_modes_select_their_regularizers() {
    let toy = small_toy(ToyKind::TranslateCluster);
    let mut cfg = toy_config(&toy.spec);
    cfg.fine.iterations = 5;
    let target = Target::new(&toy.reference, &toy.camera);
    for mode in [FineMode::Geometry, FineMode::Texture, FineMode::Hybrid] {
        cfg.fine.mode = mode;
        let w = cfg.fine.weights();
        assert_eq!(w.scale > 0.0, mode != FineMode::Texture);
        assert_eq!(w.color > 0.0, mode != FineMode::Geometry);
        let out = fine_stage(&toy.scene, target, &cfg.fine, &cfg.transport).unwrap();
        assert_eq!(out.iterations, 5);
        assert_eq!(out.graph.node_count(), toy.scene.len());
        for r in &out.log {
            assert!((r.loss.total - r.loss.weighted_sum(&w)).abs() < 1e-10);
        }
        // the first iteration starts at the rest state
        assert_eq!(out.log[0].loss.scale, 0.0);
        assert_eq!(out.log[0].loss.color, 0.0);
        assert!(out.scene.gaussians.iter().zip(&toy.scene.gaussians).any(|(a, b)| a.mu != b.mu));
    }
}
