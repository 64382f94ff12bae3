//! Epoch loop: shuffled mini-batches, selected loss, reverse pass, Adam
//! update, validation against converged references, k-schedule update and
//! best-checkpoint tracking.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Field;
use crate::losses::{sample_loss, update_k, KScheduleState, KStrategy, LossKind};
use crate::model::{save_checkpoint, Checkpoint, CheckpointMeta, ProblemInfo, UNet, UNetConfig};
use crate::operator::StencilCoeffs;
use crate::optim::{Adam, AdamConfig};
use crate::scalar::Scalar;
use crate::source::{Dataset, SourceSample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub loss: LossKind,
    pub k_strategy: KStrategy,
    /// Seeds initialization and per-epoch shuffling.
    pub seed: u64,
    /// Ordered reductions only; results independent of thread count.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            batch_size: 6,
            optimizer: AdamConfig::default(),
            loss: LossKind::Jacobi,
            k_strategy: KStrategy::adaptive(),
            seed: 0,
            deterministic: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::InvalidTraining("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidTraining("batch_size must be at least 1".into()));
        }
        self.optimizer.validate()?;
        self.k_strategy.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// One-based epoch number.
    pub epoch: usize,
    /// Mean per-sample training loss of the selected kind.
    pub train_loss: f64,
    /// Mean mesh-weighted squared L2 error against the validation references.
    pub val_loss: f64,
    /// Sweep count used during this epoch.
    pub k: usize,
    pub seconds: f64,
    /// Cumulative Jacobi sweeps spent on targets so far.
    pub sweeps: u64,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.records
            .iter()
            .min_by(|a, b| a.val_loss.total_cmp(&b.val_loss))
    }

    /// CSV with columns `epoch,train_loss,val_loss,k,seconds,sweeps`.
    /// With `with_timing = false` the seconds column is written as `0` so
    /// the file depends only on the computation.
    pub fn to_csv(&self, with_timing: bool) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,k,seconds,sweeps\n");
        for r in &self.records {
            let secs = if with_timing { r.seconds } else { 0.0 };
            let _ = writeln!(
                s,
                "{},{:e},{:e},{},{:.3},{}",
                r.epoch, r.train_loss, r.val_loss, r.k, secs, r.sweeps
            );
        }
        s
    }

    pub fn timing_csv(&self) -> String {
        let mut s = String::from("epoch,seconds\n");
        for r in &self.records {
            let _ = writeln!(s, "{},{:.3}", r.epoch, r.seconds);
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub best: UNet<T>,
    pub last: UNet<T>,
    pub history: TrainHistory,
    pub best_epoch: usize,
    pub best_val: f64,
    pub final_k_state: KScheduleState,
}

/// Where and how to persist checkpoints during training.
#[derive(Debug, Clone, Default)]
pub struct CheckpointSink {
    pub dir: Option<PathBuf>,
    pub problem: Option<ProblemInfo>,
}

impl CheckpointSink {
    pub fn best_path(dir: &Path) -> PathBuf {
        dir.join("best.ck")
    }

    pub fn last_path(dir: &Path) -> PathBuf {
        dir.join("last.ck")
    }
}

fn to_field<T: Scalar>(template: &Field, y: &[T]) -> Field {
    Field::from_vec(*template.grid(), y.iter().map(|v| v.as_f64()).collect()).expect("shape fixed by network")
}

/// Mean over samples of `h1 h2 sum (forward - reference)^2`.
pub fn validate<T: Scalar>(net: &UNet<T>, val: &[SourceSample]) -> Result<f64> {
    if val.is_empty() {
        return Err(Error::InvalidTraining("empty validation set".into()));
    }
    let per: Vec<f64> = val
        .par_iter()
        .enumerate()
        .map(|(idx, s)| {
            let r = s.reference.as_ref().ok_or(Error::MissingReference(idx))?;
            let g = net.forward(&s.input)?;
            let e = crate::grid::l2_error(&g, r)?;
            Ok(e * e)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(1 + epoch as u64);
    order.shuffle(&mut rng);
    order
}

/// Trains from the seeded initialization.
pub fn train<T: Scalar>(
    stencil: &StencilCoeffs,
    dataset: &Dataset,
    unet: UNetConfig,
    cfg: &TrainConfig,
    sink: &CheckpointSink,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    let net = UNet::<T>::init(unet, cfg.seed)?;
    train_from(stencil, dataset, net, cfg, sink, on_epoch)
}

pub fn train_from<T: Scalar>(
    stencil: &StencilCoeffs,
    dataset: &Dataset,
    mut net: UNet<T>,
    cfg: &TrainConfig,
    sink: &CheckpointSink,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    stencil.grid().check_same(&dataset.grid)?;
    if !net.grid_matches(&dataset.grid) {
        return Err(Error::ShapeMismatch("network grid differs from dataset grid".into()));
    }
    if net.config().in_channels != dataset.spec.variant.channels() {
        return Err(Error::ShapeMismatch(format!(
            "network takes {} channels, dataset variant provides {}",
            net.config().in_channels,
            dataset.spec.variant.channels()
        )));
    }
    if dataset.train.is_empty() {
        return Err(Error::InvalidTraining("empty training set".into()));
    }
    if let Some(idx) = dataset.val.iter().position(|s| s.reference.is_none()) {
        return Err(Error::MissingReference(idx));
    }
    if cfg.loss == LossKind::Data {
        if let Some(idx) = dataset.train.iter().position(|s| s.reference.is_none()) {
            return Err(Error::MissingReference(idx));
        }
    }
    if let Some(dir) = &sink.dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let template = Field::zeros(dataset.grid);
    let np = net.param_count();
    let mut opt = Adam::<T>::new(cfg.optimizer, np);
    let mut kstate = KScheduleState::new(cfg.k_strategy);
    let mut history = TrainHistory::default();
    let mut best = net.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut sweeps: u64 = 0;
    let n_train = dataset.train.len();

    for epoch in 0..cfg.epochs {
        let t0 = Instant::now();
        let order = epoch_order(n_train, cfg.seed, epoch);
        let k = kstate.current_k;
        let mut loss_sum = 0.0;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let per_sample = |&idx: &usize| -> Result<(f64, usize, Vec<T>)> {
                let s = &dataset.train[idx];
                let x = net.to_tensor(&s.input)?;
                let (y, cache) = net.forward_tensor(x, true);
                let g = to_field(&template, &y);
                let sl = sample_loss(cfg.loss, stencil, &g, &s.rho, s.reference.as_ref(), k)?;
                let up: Vec<T> = sl.grad.values().iter().map(|v| T::of(*v)).collect();
                let mut grads = vec![T::zero(); np];
                net.backward(cache.as_ref().unwrap(), &up, &mut grads);
                Ok((sl.value, sl.sweeps, grads))
            };
            let (batch_loss, batch_sweeps, grads) = if cfg.deterministic {
                let parts = batch.par_iter().map(per_sample).collect::<Result<Vec<_>>>()?;
                let mut total = vec![T::zero(); np];
                let mut l = 0.0;
                let mut sw = 0;
                for (v, s, g) in parts {
                    l += v;
                    sw += s;
                    for (a, b) in total.iter_mut().zip(&g) {
                        *a += *b;
                    }
                }
                (l, sw, total)
            } else {
                batch
                    .par_iter()
                    .map(per_sample)
                    .try_reduce(
                        || (0.0, 0, vec![T::zero(); np]),
                        |mut a, b| {
                            a.0 += b.0;
                            a.1 += b.1;
                            for (x, y) in a.2.iter_mut().zip(&b.2) {
                                *x += *y;
                            }
                            Ok(a)
                        },
                    )?
            };
            if !batch_loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    epoch: epoch + 1,
                    step,
                    loss: batch_loss,
                });
            }
            loss_sum += batch_loss;
            sweeps += batch_sweeps as u64;
            opt.step(&mut net.params, &grads);
        }
        let val = validate(&net, &dataset.val)?;
        if !val.is_finite() {
            return Err(Error::Diverged {
                epoch: epoch + 1,
                step: order.len().div_ceil(cfg.batch_size),
                loss: val,
            });
        }
        let rec = EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / n_train as f64,
            val_loss: val,
            k,
            seconds: t0.elapsed().as_secs_f64(),
            sweeps,
            steps: opt.steps(),
        };
        kstate = update_k(&kstate, val);
        if val < best_val {
            best_val = val;
            best_epoch = epoch + 1;
            best = net.clone();
            if let Some(dir) = &sink.dir {
                let meta = meta_for(epoch + 1, cfg.seed, &kstate, val, sink);
                save_checkpoint(&CheckpointSink::best_path(dir), &Checkpoint { net: best.clone(), meta })?;
            }
        }
        on_epoch(&rec);
        history.records.push(rec);
    }
    if let Some(dir) = &sink.dir {
        let last_val = history.records.last().map(|r| r.val_loss).unwrap_or(f64::NAN);
        let meta = meta_for(cfg.epochs, cfg.seed, &kstate, last_val, sink);
        save_checkpoint(&CheckpointSink::last_path(dir), &Checkpoint { net: net.clone(), meta })?;
    }
    Ok(TrainOutcome {
        best,
        last: net,
        history,
        best_epoch,
        best_val,
        final_k_state: kstate,
    })
}

fn meta_for(epoch: usize, seed: u64, k: &KScheduleState, val: f64, sink: &CheckpointSink) -> CheckpointMeta {
    CheckpointMeta {
        epoch,
        seed,
        k_state: Some(*k),
        val_metric: Some(val),
        problem: sink.problem.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Grid, RectDomain};
    use crate::operator::CoefficientSpec;
    use crate::source::{DatasetSpec, InputVariant, ReferenceSolver, SourceConfig};

    fn tiny() -> (StencilCoeffs, Dataset, UNetConfig) {
        let g = Grid::new(RectDomain::unit_square_sym(), 8, 8).unwrap();
        let st = StencilCoeffs::assemble(&g, &CoefficientSpec::Laplace).unwrap();
        let spec = DatasetSpec {
            n_train: 13,
            n_val: 3,
            variant: InputVariant::Source,
            source: SourceConfig {
                sigma_factor: 1.0,
                margin_cells: 1,
                seed: 3,
            },
            train_references: true,
            reference: ReferenceSolver::Direct,
        };
        let ds = Dataset::generate(&st, &spec).unwrap();
        let cfg = UNetConfig {
            in_channels: 1,
            first_channels: 2,
            depth: 2,
            n: 8,
            m: 8,
        };
        (st, ds, cfg)
    }

    #[test]
    fn one_epoch_contract() {
        let (st, ds, ucfg) = tiny();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 5,
            k_strategy: KStrategy::constant(3),
            ..Default::default()
        };
        let out = train::<f64>(&st, &ds, ucfg, &cfg, &CheckpointSink::default(), |_| {}).unwrap();
        assert_eq!(out.history.records.len(), 1);
        assert_eq!(out.history.records[0].steps, 3);
        assert_eq!(out.history.records[0].sweeps, 13 * 3);
    }

    #[test]
    fn rejects_zero_epochs_and_batch() {
        let (st, ds, ucfg) = tiny();
        for cfg in [
            TrainConfig { epochs: 0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
        ] {
            assert!(train::<f32>(&st, &ds, ucfg, &cfg, &CheckpointSink::default(), |_| {}).is_err());
        }
    }

    #[test]
    fn data_loss_needs_train_references() {
        let (st, mut ds, ucfg) = tiny();
        ds.train[4].reference = None;
        let cfg = TrainConfig {
            loss: LossKind::Data,
            epochs: 1,
            ..Default::default()
        };
        assert!(matches!(
            train::<f32>(&st, &ds, ucfg, &cfg, &CheckpointSink::default(), |_| {}),
            Err(Error::MissingReference(4))
        ));
    }

    #[test]
    fn validate_properties() {
        let (_, ds, ucfg) = tiny();
        let net = UNet::<f64>::init(ucfg, 0).unwrap();
        let v = validate(&net, &ds.val).unwrap();
        assert!(v > 0.0 && v.is_finite());
        let mut rev = ds.val.clone();
        rev.reverse();
        let w = validate(&net, &rev).unwrap();
        assert!((v - w).abs() <= 1e-15 * v);
        // a network whose output is identically zero matches zero references
        let zero = UNet::<f64>::from_params(ucfg, vec![0.0; net.param_count()]).unwrap();
        let mut zval = ds.val.clone();
        for s in &mut zval {
            s.reference = Some(Field::zeros(ds.grid));
        }
        assert_eq!(validate(&zero, &zval).unwrap(), 0.0);
        zval[1].reference = None;
        assert!(matches!(validate(&zero, &zval), Err(Error::MissingReference(1))));
    }

    #[test]
    fn csv_layout() {
        let h = TrainHistory {
            records: vec![EpochRecord {
                epoch: 1,
                train_loss: 0.5,
                val_loss: 0.25,
                k: 40,
                seconds: 1.23456,
                sweeps: 80,
                steps: 2,
            }],
        };
        assert_eq!(h.to_csv(true), "epoch,train_loss,val_loss,k,seconds,sweeps\n1,5e-1,2.5e-1,40,1.235,80\n");
        assert!(h.to_csv(false).ends_with(",0.000,80\n"));
    }
}
