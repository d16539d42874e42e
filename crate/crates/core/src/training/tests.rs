use super::*;
use crate::geometry::{point_in_polygon, Point2};

fn small_synth(family: ShapeFamily, n: usize, seed: u64) -> SynthConfig {
    SynthConfig { n_instances: n, shape_family: family, seed, ..SynthConfig::default() }
}

fn tiny_train(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, milestones: vec![2, 4], ..TrainConfig::toy() }
}

fn samples(n: usize, cfg: &TrainConfig) -> Vec<TrainSample> {
    let inst = generate_dataset(&small_synth(ShapeFamily::Blob, n, 3)).unwrap();
    prepare_samples(&inst, &cfg.mda, cfg.image_size, &cfg.encoder).unwrap()
}

#[test]
fn generation_is_deterministic() {
    for fam in [ShapeFamily::Blob, ShapeFamily::Star, ShapeFamily::Rect, ShapeFamily::Ellipse] {
        let a = generate_dataset(&small_synth(fam, 20, 9)).unwrap();
        let b = generate_dataset(&small_synth(fam, 20, 9)).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&small_synth(fam, 20, 10)).unwrap();
        assert_ne!(a, c);
    }
}

#[test]
fn rects_are_quads_and_shapes_fit_the_image() {
    let d = generate_dataset(&small_synth(ShapeFamily::Rect, 30, 1)).unwrap();
    assert!(d.iter().all(|i| i.polygon.len() == 4));
    for fam in [ShapeFamily::Blob, ShapeFamily::Star, ShapeFamily::Ellipse] {
        for i in generate_dataset(&small_synth(fam, 30, 2)).unwrap() {
            let bb = i.polygon.bbox();
            assert!(bb.min.x >= 0.0 && bb.min.y >= 0.0 && bb.max.x <= 128.0 && bb.max.y <= 128.0);
            assert!(!crate::geometry::is_self_intersecting(i.polygon.vertices()));
        }
    }
}

#[test]
fn generation_exhausted() {
    // radius larger than the image: nothing fits
    let cfg = SynthConfig { radius_range: [0.9, 1.0], max_rejections: 50, ..small_synth(ShapeFamily::Blob, 5, 0) };
    assert!(matches!(generate_dataset(&cfg), Err(TrainError::GenerationExhausted { .. })));
}

#[test]
fn blob_labels_satisfy_invariants() {
    let inst = generate_dataset(&small_synth(ShapeFamily::Blob, 200, 4)).unwrap();
    let mda = crate::labeling::MdaConfig { n_vertices: 32, m_aligned: 4, ..Default::default() };
    for i in &inst {
        let l = build_label(&i.polygon, &mda).unwrap();
        let p = crate::geometry::normalize_orientation(&i.polygon).unwrap();
        assert!(point_in_polygon(p.vertices(), l.center));
        assert!(l.gt_contour.points().iter().all(|&v| p.boundary_distance(v) < 1e-9));
        for (j, &k) in mda.fixed_indices().iter().enumerate() {
            let d = l.gt_contour[k] - l.center;
            let err = (d.y.atan2(d.x) - mda.fixed_angle(j)).rem_euclid(std::f64::consts::TAU);
            assert!(err.min(std::f64::consts::TAU - err) < 1e-9);
        }
    }
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let cfg = TrainConfig { learning_rate: 0.0, eval_every: 0, ..tiny_train(3) };
    let data = samples(4, &cfg);
    let out = train(&data, None, &cfg).unwrap();
    let fresh = ModelParams::new(out.config.model.clone()).unwrap();
    assert_eq!(out.params, fresh);
    let l: Vec<f64> = out.history.iter().map(|r| r.l_overall).collect();
    assert!(l.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn recorded_lr_follows_milestones() {
    let cfg = TrainConfig { learning_rate: 1e-3, eval_every: 0, ..tiny_train(6) };
    let out = train(&samples(2, &cfg), None, &cfg).unwrap();
    let lrs: Vec<f64> = out.history.iter().map(|r| r.lr).collect();
    assert_eq!(lrs, vec![1e-3, 1e-3, 5e-4, 5e-4, 2.5e-4, 2.5e-4]);
}

#[test]
fn training_is_bit_reproducible() {
    let cfg = tiny_train(3);
    let data = samples(6, &cfg);
    let a = train(&data, None, &cfg).unwrap();
    let b = train(&data, None, &cfg).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.params, b.params);
}

#[test]
fn divergence_is_reported() {
    let cfg = TrainConfig { learning_rate: 1e6, optimizer: OptimizerKind::Sgd, eval_every: 0, ..tiny_train(20) };
    let r = train(&samples(4, &cfg), None, &cfg);
    assert!(matches!(r, Err(TrainError::DivergenceDetected { .. })), "{r:?}");
}

#[test]
fn evaluation_of_exact_and_degenerate_predictions() {
    let cfg = tiny_train(1).resolved().unwrap();
    let data = samples(3, &cfg);
    let params = ModelParams::new(cfg.model.clone()).unwrap();
    // zero heads: every stage collapses onto the center
    let r = evaluate(&params, &data, &EvalOptions::default()).unwrap();
    for (_, m) in r.stages() {
        assert_eq!(m.mask_iou, 0.0);
    }
    // a predictor that outputs the label: bias the init head to each label
    for s in &data {
        let mut p = params.clone();
        let sc = p.config.init_offset_scale;
        for (i, v) in s.label.gt_contour.points().iter().enumerate() {
            let d = (*v - s.label.center) * (1.0 / sc);
            p.init_out.bias.data[2 * i] = d.x;
            p.init_out.bias.data[2 * i + 1] = d.y;
        }
        // disable refinement offsets are already zero; global_out is zero
        let r = evaluate(&p, std::slice::from_ref(s), &EvalOptions::default()).unwrap();
        assert!(r.final_stage.vertex_l1 < 1e-9);
        // the label is a resampling of the polygon, so the masks nearly agree
        assert!(r.final_stage.mask_iou > 0.95, "{}", r.final_stage.mask_iou);
    }
}

#[test]
fn exact_polygon_prediction_scores_one() {
    // with N equal to the raw vertex count and M = N the label is the polygon itself
    let sq = crate::geometry::Polygon::new(
        [[40., 40.], [88., 40.], [88., 88.], [40., 88.]].map(Point2::from).to_vec(),
    )
    .unwrap();
    let mut cfg = TrainConfig::toy();
    cfg.mda.start_angle = std::f64::consts::FRAC_PI_4;
    let inst = vec![SyntheticInstance { id: 0, polygon: sq, shape_family: ShapeFamily::Rect }];
    let data = prepare_samples(&inst, &cfg.mda, cfg.image_size, &cfg.encoder).unwrap();
    let cfg = cfg.resolved().unwrap();
    let mut p = ModelParams::new(cfg.model.clone()).unwrap();
    let s = &data[0];
    for (i, v) in s.label.gt_contour.points().iter().enumerate() {
        let d = (*v - s.label.center) * (1.0 / p.config.init_offset_scale);
        p.init_out.bias.data[2 * i] = d.x;
        p.init_out.bias.data[2 * i + 1] = d.y;
    }
    let r = evaluate(&p, &data, &EvalOptions::default()).unwrap();
    assert_eq!(r.final_stage.mask_iou, 1.0);
    assert_eq!(r.final_stage.boundary_iou_d2, 1.0);
}

#[test]
fn history_csv_layout() {
    let cfg = TrainConfig { eval_every: 1, ..tiny_train(2) };
    let out = train(&samples(2, &cfg), None, &cfg).unwrap();
    let mut buf = Vec::new();
    write_history_csv(&mut buf, &serde_json::to_value(&out.config).unwrap(), &out.history).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# {"));
    assert_eq!(
        lines.next().unwrap(),
        "epoch,l_init,l_coarse,l_iter1,l_iter2,l_overall,lr,eval_iou_initial,eval_iou_coarse,eval_iou_final"
    );
    assert_eq!(lines.count(), 2);
}

#[test]
fn throughput_is_measured_per_stage() {
    let cfg = tiny_train(1).resolved().unwrap();
    let data = samples(10, &cfg);
    let p = ModelParams::new(cfg.model.clone()).unwrap();
    let t = measure_throughput(&p, &data, 3).unwrap();
    assert!(t.initial > 0.0 && t.coarse > 0.0 && t.final_stage > 0.0);
}
