use green_surrogate::{
    l2_norm, load_checkpoint, train, CheckpointSink, CoefficientSpec, Dataset, DatasetSpec, Error, Grid, InputVariant, KStrategy,
    LossKind, RectDomain, ReferenceSolver, SourceConfig, StencilCoeffs, TrainConfig, UNet, UNetConfig,
};

fn setup(n_train: usize, variant: InputVariant, train_refs: bool) -> (StencilCoeffs, Dataset, UNetConfig) {
    let g = Grid::new(RectDomain::unit_square_sym(), 16, 16).unwrap();
    let st = StencilCoeffs::assemble(&g, &CoefficientSpec::Laplace).unwrap();
    let spec = DatasetSpec {
        n_train,
        n_val: 20,
        variant,
        source: SourceConfig {
            seed: 4,
            ..Default::default()
        },
        train_references: train_refs,
        reference: ReferenceSolver::Direct,
    };
    let ds = Dataset::generate(&st, &spec).unwrap();
    let cfg = UNetConfig {
        in_channels: variant.channels(),
        first_channels: 4,
        depth: 2,
        n: 16,
        m: 16,
    };
    (st, ds, cfg)
}

#[test]
fn data_loss_benchmark_drops_tenfold() {
    let (st, ds, ucfg) = setup(200, InputVariant::Source, true);
    let tc = TrainConfig {
        epochs: 30,
        loss: LossKind::Data,
        ..Default::default()
    };
    let out = train::<f32>(&st, &ds, ucfg, &tc, &CheckpointSink::default(), |_| {}).unwrap();
    let first = out.history.records[0].val_loss;
    assert!(first / out.best_val >= 10.0, "{first:e} -> {:e}", out.best_val);
    assert_eq!(out.history.records[0].sweeps, 0);
}

#[test]
fn best_checkpoint_matches_history_minimum() {
    let (st, ds, ucfg) = setup(30, InputVariant::CoordsSource, false);
    let dir = tempfile::tempdir().unwrap();
    let tc = TrainConfig {
        epochs: 6,
        k_strategy: KStrategy::constant(5),
        ..Default::default()
    };
    let sink = CheckpointSink {
        dir: Some(dir.path().to_path_buf()),
        problem: None,
    };
    let out = train::<f32>(&st, &ds, ucfg, &tc, &sink, |_| {}).unwrap();
    let best = out.history.best().unwrap();
    let ck = load_checkpoint::<f32>(&CheckpointSink::best_path(dir.path())).unwrap();
    assert_eq!(ck.meta.val_metric, Some(best.val_loss));
    assert_eq!(ck.meta.epoch, best.epoch);
    assert_eq!(ck.net.params, out.best.params);
    let last = load_checkpoint::<f64>(&CheckpointSink::last_path(dir.path())).unwrap();
    assert_eq!(last.meta.epoch, 6);
    let sweeps: Vec<u64> = out.history.records.iter().map(|r| r.sweeps).collect();
    assert_eq!(sweeps, (1..=6).map(|e| e * 30 * 5).collect::<Vec<u64>>());
}

#[test]
fn runaway_learning_rate_is_reported_as_divergence() {
    let (st, ds, ucfg) = setup(12, InputVariant::Source, false);
    let mut tc = TrainConfig {
        epochs: 20,
        loss: LossKind::Residual,
        ..Default::default()
    };
    tc.optimizer.lr = 1e12;
    match train::<f32>(&st, &ds, ucfg, &tc, &CheckpointSink::default(), |_| {}) {
        Err(Error::Diverged { .. }) => {}
        other => panic!("expected divergence, got {:?}", other.map(|o| o.history)),
    }
}

#[test]
fn init_output_is_bounded() {
    let (_, ds, ucfg) = setup(4, InputVariant::DistanceSource, false);
    for seed in 0..4 {
        let net = UNet::<f32>::init(ucfg, seed).unwrap();
        let out = net.forward(&ds.val[0].input).unwrap();
        assert!(out.is_finite());
        let rms = l2_norm(&out) / 2.0;
        assert!(rms < 10.0, "seed {seed}: rms {rms}");
        assert_eq!(out.boundary_max_abs(), 0.0);
    }
}
