use facewarp::estimator::{checkpoint, synth_generate, train, EstimatorConfig, Model};

fn tiny(epochs: usize) -> EstimatorConfig {
    EstimatorConfig {
        mesh_lon: 20,
        mesh_lat: 20,
        n_controls: 10,
        input_size: 32,
        channels: vec![4, 8],
        strides: vec![2, 2],
        hidden: 16,
        feature_block: 0,
        lm_hidden: 6,
        feature_dim: 8,
        init_focal: 100.0,
        batch_size: 1,
        phase1_epochs: epochs,
        phase2_epochs: 0,
        ..Default::default()
    }
}

#[test]
fn single_sample_is_memorized() {
    // no decay and no shape prior: the fidelity terms alone can reach zero
    let cfg = EstimatorConfig {
        lr_phase1: 0.1,
        lr_decay: 1.0,
        max_step: 0.05,
        w_reg: 0.0,
        max_displacement: 0.1,
        ..tiny(300)
    };
    let data = synth_generate(&cfg, 1, 11).unwrap();
    let mut model = Model::new(cfg).unwrap();
    let before = model.loss(&data[0]).unwrap().total;
    let log = train(&mut model, &data).unwrap();
    let after = model.loss(&data[0]).unwrap().total;
    assert_eq!(log.records.len(), 300);
    assert!(after < 0.01 * before, "loss {before} -> {after}");
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let cfg = tiny(3);
    let data = synth_generate(&cfg, 3, 5).unwrap();
    let mut model = Model::new(cfg).unwrap();
    train(&mut model, &data).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    checkpoint::save(&model, &path).unwrap();
    let back = checkpoint::load(&path).unwrap();
    let a = model.forward(&data[0].image).unwrap();
    let b = back.forward(&data[0].image).unwrap();
    assert_eq!(a.lm_refined.positions(), b.lm_refined.positions());
    assert_eq!(a.camera, b.camera);
}
