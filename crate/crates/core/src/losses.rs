//! Residual-type, Jacobi-type and data-driven losses, and the schedules
//! that pick the Jacobi sweep count `k` per epoch.
//!
//! All losses are plain sums over batch and nodes. Jacobi targets are
//! constants with respect to the network parameters: the gradient of the
//! Jacobi loss flows through the prediction only.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Field;
use crate::operator::StencilCoeffs;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Residual,
    Jacobi,
    Data,
}

impl FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "residual" => Ok(Self::Residual),
            "jacobi" => Ok(Self::Jacobi),
            "data" => Ok(Self::Data),
            other => Err(Error::InvalidTraining(format!(
                "unknown loss '{other}' (expected residual, jacobi or data)"
            ))),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Residual => "residual",
            Self::Jacobi => "jacobi",
            Self::Data => "data",
        })
    }
}

fn check_batch(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch(format!("batch sizes differ: {a} vs {b}")));
    }
    Ok(())
}

fn sq_dist(a: &Field, b: &Field) -> Result<f64> {
    a.grid().check_same(b.grid())?;
    Ok(a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y) * (x - y))
        .sum())
}

/// `sum_batch sum_interior (L_h G - rho)^2`.
pub fn loss_residual(stencil: &StencilCoeffs, g_batch: &[Field], rho_batch: &[Field]) -> Result<f64> {
    check_batch(g_batch.len(), rho_batch.len())?;
    let mut total = 0.0;
    for (g, rho) in g_batch.iter().zip(rho_batch) {
        let r = stencil.residual(g, rho)?;
        total += r.values().iter().map(|v| v * v).sum::<f64>();
    }
    Ok(total)
}

/// `k` Jacobi sweeps started from the prediction itself.
pub fn jacobi_target(stencil: &StencilCoeffs, g: &Field, rho: &Field, k: usize) -> Result<Field> {
    if k < 1 {
        return Err(Error::InvalidTraining("Jacobi target needs k >= 1".into()));
    }
    stencil.jacobi_k(g, rho, k)
}

/// `sum_batch ||G - J^k(G)||^2`.
pub fn loss_jacobi(stencil: &StencilCoeffs, g_batch: &[Field], rho_batch: &[Field], k: usize) -> Result<f64> {
    check_batch(g_batch.len(), rho_batch.len())?;
    let mut total = 0.0;
    for (g, rho) in g_batch.iter().zip(rho_batch) {
        total += sq_dist(g, &jacobi_target(stencil, g, rho, k)?)?;
    }
    Ok(total)
}

/// `sum_batch ||G - G_ref||^2`.
pub fn loss_data(g_batch: &[Field], ref_batch: &[Field]) -> Result<f64> {
    check_batch(g_batch.len(), ref_batch.len())?;
    let mut total = 0.0;
    for (g, r) in g_batch.iter().zip(ref_batch) {
        total += sq_dist(g, r)?;
    }
    Ok(total)
}

/// Per-sample loss value and its gradient with respect to the prediction.
#[derive(Debug, Clone)]
pub struct SampleLoss {
    pub value: f64,
    pub grad: Field,
    /// Jacobi sweeps spent on the target.
    pub sweeps: usize,
}

pub fn sample_loss(
    kind: LossKind,
    stencil: &StencilCoeffs,
    g: &Field,
    rho: &Field,
    reference: Option<&Field>,
    k: usize,
) -> Result<SampleLoss> {
    match kind {
        LossKind::Data => {
            let r = reference.ok_or(Error::MissingReference(0))?;
            let grad = g.axpy(-1.0, r)?.scaled(2.0);
            Ok(SampleLoss {
                value: sq_dist(g, r)?,
                grad,
                sweeps: 0,
            })
        }
        LossKind::Jacobi => {
            let t = jacobi_target(stencil, g, rho, k)?;
            Ok(SampleLoss {
                value: sq_dist(g, &t)?,
                grad: g.axpy(-1.0, &t)?.scaled(2.0),
                sweeps: k,
            })
        }
        LossKind::Residual => {
            let r = stencil.residual(g, rho)?;
            let value = r.values().iter().map(|v| v * v).sum();
            // the interior matrix is symmetric, so A^T r = A r
            let mut grad = stencil.apply(&r)?.scaled(2.0);
            grad.zero_boundary();
            Ok(SampleLoss { value, grad, sweeps: 0 })
        }
    }
}

/// Policy for the Jacobi sweep count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum KStrategy {
    Constant {
        k: usize,
    },
    /// `k = max(floor, k0 - step * floor(epoch / every))`.
    Dynamic {
        k0: usize,
        step: usize,
        every: usize,
        floor: usize,
    },
    /// `k_init` for the first epoch; afterwards doubled when the validation
    /// metric grows by more than `up_ratio`, halved when it shrinks below
    /// `down_ratio`, and clamped to `[k_min, k_max]`.
    Adaptive {
        k_init: usize,
        k_min: usize,
        k_max: usize,
        up_ratio: f64,
        down_ratio: f64,
    },
}

impl KStrategy {
    pub fn constant(k: usize) -> Self {
        Self::Constant { k }
    }

    pub fn dynamic() -> Self {
        Self::Dynamic {
            k0: 40,
            step: 10,
            every: 20,
            floor: 10,
        }
    }

    pub fn adaptive() -> Self {
        Self::Adaptive {
            k_init: 40,
            k_min: 1,
            k_max: 20,
            up_ratio: 1.2,
            down_ratio: 0.8,
        }
    }

    /// Builds a strategy from a CLI-style name; `k` overrides the constant
    /// value or the starting value of the other two.
    pub fn from_name(name: &str, k: Option<usize>) -> Result<Self> {
        let mut s = match name {
            "constant" => Self::constant(20),
            "dynamic" => Self::dynamic(),
            "adaptive" => Self::adaptive(),
            other => {
                return Err(Error::InvalidTraining(format!(
                    "unknown k strategy '{other}' (expected constant, dynamic or adaptive)"
                )))
            }
        };
        if let Some(v) = k {
            match &mut s {
                Self::Constant { k } => *k = v,
                Self::Dynamic { k0, .. } => *k0 = v,
                Self::Adaptive { k_init, .. } => *k_init = v,
            }
        }
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Constant { k } => k >= 1,
            Self::Dynamic { k0, every, floor, .. } => k0 >= 1 && every >= 1 && floor >= 1,
            Self::Adaptive {
                k_init,
                k_min,
                k_max,
                up_ratio,
                down_ratio,
            } => k_init >= 1 && k_min >= 1 && k_min <= k_max && up_ratio > down_ratio && down_ratio > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidTraining(format!("invalid k strategy {self:?}")))
        }
    }
}

/// `current_k` is the sweep count for epoch `epoch` (zero-based).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KScheduleState {
    pub strategy: KStrategy,
    pub current_k: usize,
    pub prev_val_loss: Option<f64>,
    pub epoch: usize,
}

impl KScheduleState {
    pub fn new(strategy: KStrategy) -> Self {
        let current_k = match strategy {
            KStrategy::Constant { k } => k,
            KStrategy::Dynamic { .. } => dynamic_k(&strategy, 0),
            KStrategy::Adaptive { k_init, .. } => k_init,
        };
        Self {
            strategy,
            current_k,
            prev_val_loss: None,
            epoch: 0,
        }
    }
}

fn dynamic_k(s: &KStrategy, epoch: usize) -> usize {
    match *s {
        KStrategy::Dynamic { k0, step, every, floor } => {
            let dec = step.saturating_mul(epoch / every);
            k0.saturating_sub(dec).max(floor)
        }
        _ => unreachable!(),
    }
}

/// Advances the schedule past the epoch that produced `val_loss_cur`.
pub fn update_k(state: &KScheduleState, val_loss_cur: f64) -> KScheduleState {
    let epoch = state.epoch + 1;
    let current_k = match state.strategy {
        KStrategy::Constant { k } => k,
        KStrategy::Dynamic { .. } => dynamic_k(&state.strategy, epoch),
        KStrategy::Adaptive {
            k_min,
            k_max,
            up_ratio,
            down_ratio,
            ..
        } => {
            let mut k = state.current_k;
            if let Some(prev) = state.prev_val_loss {
                if val_loss_cur > up_ratio * prev {
                    k = k.saturating_mul(2);
                } else if val_loss_cur < down_ratio * prev {
                    k /= 2;
                }
            }
            k.clamp(k_min, k_max)
        }
    };
    KScheduleState {
        strategy: state.strategy,
        current_k,
        prev_val_loss: Some(val_loss_cur),
        epoch,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Grid, RectDomain};
    use crate::operator::CoefficientSpec;
    use crate::source::gaussian_source;

    fn setup(n: usize) -> (StencilCoeffs, Field, Field) {
        let g = Grid::new(RectDomain::unit_square_sym(), n, n).unwrap();
        let st = StencilCoeffs::assemble(&g, &CoefficientSpec::Laplace).unwrap();
        let rho = gaussian_source(&g, (0.1, -0.2), 0.3).unwrap();
        let exact = st.direct_solve(&rho).unwrap();
        (st, rho, exact)
    }

    #[test]
    fn losses_vanish_on_exact_solution() {
        let (st, rho, exact) = setup(9);
        let gb = vec![exact.clone()];
        let rb = vec![rho.clone()];
        assert!(loss_residual(&st, &gb, &rb).unwrap() <= 1e-18);
        assert!(loss_jacobi(&st, &gb, &rb, 5).unwrap() <= 1e-24);
        assert_eq!(loss_data(&gb, &[exact.clone()]).unwrap(), 0.0);
        let t = jacobi_target(&st, &exact, &rho, 3).unwrap();
        assert!(t.max_abs_diff(&exact).unwrap() < 1e-13);
    }

    #[test]
    fn residual_of_zero_is_rho_energy() {
        let (st, rho, _) = setup(9);
        let g = Field::zeros(*st.grid());
        let mut interior = rho.clone();
        interior.zero_boundary();
        let expect: f64 = interior.values().iter().map(|v| v * v).sum();
        let got = loss_residual(&st, &[g], &[rho]).unwrap();
        assert!((got - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn single_node_perturbation() {
        let (_, _, exact) = setup(9);
        let mut g = exact.clone();
        g.set(3, 4, g.get(3, 4) + 1e-3);
        let l = loss_data(&[g], &[exact]).unwrap();
        assert!((l - 1e-6).abs() < 1e-15);
    }

    #[test]
    fn k1_is_one_step() {
        let (st, rho, _) = setup(9);
        let mut g = Field::from_fn(*st.grid(), |x, y| (x * 2.0).cos() * y);
        g.zero_boundary();
        assert_eq!(jacobi_target(&st, &g, &rho, 1).unwrap(), st.jacobi_step(&g, &rho).unwrap());
        assert!(jacobi_target(&st, &g, &rho, 0).is_err());
    }

    #[test]
    fn batch_mismatch() {
        let (st, rho, exact) = setup(5);
        assert!(loss_jacobi(&st, &[exact.clone(), exact.clone()], &[rho], 2).is_err());
        assert!(loss_data(&[exact], &[]).is_err());
    }

    #[test]
    fn missing_reference_for_data_loss() {
        let (st, rho, exact) = setup(5);
        assert!(matches!(
            sample_loss(LossKind::Data, &st, &exact, &rho, None, 1),
            Err(Error::MissingReference(_))
        ));
    }

    #[test]
    fn sample_gradients_match_finite_differences() {
        let (st, rho, _) = setup(7);
        let mut g = Field::from_fn(*st.grid(), |x, y| 0.05 * (x + 2.0 * y).sin());
        g.zero_boundary();
        let reference = st.direct_solve(&rho).unwrap();
        for kind in [LossKind::Residual, LossKind::Data] {
            let base = sample_loss(kind, &st, &g, &rho, Some(&reference), 3).unwrap();
            let (i, j) = (2, 4);
            let eps = 1e-6;
            let mut gp = g.clone();
            gp.set(i, j, g.get(i, j) + eps);
            let mut gm = g.clone();
            gm.set(i, j, g.get(i, j) - eps);
            let lp = sample_loss(kind, &st, &gp, &rho, Some(&reference), 3).unwrap().value;
            let lm = sample_loss(kind, &st, &gm, &rho, Some(&reference), 3).unwrap().value;
            let fd = (lp - lm) / (2.0 * eps);
            let an = base.grad.get(i, j);
            assert!((fd - an).abs() <= 1e-5 * an.abs().max(1.0), "{kind}: fd {fd} vs {an}");
        }
    }

    #[test]
    fn adaptive_rules() {
        let mut s = KScheduleState::new(KStrategy::adaptive());
        s.current_k = 8;
        s.prev_val_loss = Some(1.0);
        assert_eq!(update_k(&s, 1.3).current_k, 16);
        assert_eq!(update_k(&s, 0.5).current_k, 4);
        assert_eq!(update_k(&s, 1.0).current_k, 8);
        s.current_k = 16;
        assert_eq!(update_k(&s, 2.0).current_k, 20);
        s.current_k = 1;
        assert_eq!(update_k(&s, 0.1).current_k, 1);
    }

    #[test]
    fn adaptive_first_epoch_then_clamp() {
        let s0 = KScheduleState::new(KStrategy::adaptive());
        assert_eq!(s0.current_k, 40);
        let s1 = update_k(&s0, 5.0);
        assert_eq!(s1.current_k, 20);
        assert_eq!(s1.prev_val_loss, Some(5.0));
        assert_eq!(s1.epoch, 1);
    }

    #[test]
    fn dynamic_sequence() {
        let mut s = KScheduleState::new(KStrategy::dynamic());
        let mut ks = vec![s.current_k];
        for e in 0..99 {
            s = update_k(&s, e as f64);
            ks.push(s.current_k);
        }
        for (e, k) in ks.iter().enumerate() {
            let expect = match e {
                0..=19 => 40,
                20..=39 => 30,
                40..=59 => 20,
                _ => 10,
            };
            assert_eq!(*k, expect, "epoch {e}");
        }
    }

    #[test]
    fn constant_never_moves() {
        let s = KScheduleState::new(KStrategy::constant(7));
        let s = update_k(&update_k(&s, 1.0), 100.0);
        assert_eq!(s.current_k, 7);
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!(KStrategy::from_name("constant", Some(5)).unwrap(), KStrategy::constant(5));
        assert!(KStrategy::from_name("constant", Some(0)).is_err());
        assert!(KStrategy::from_name("cosine", None).is_err());
        let json = serde_json::to_string(&KStrategy::adaptive()).unwrap();
        assert!(json.contains("\"kind\":\"adaptive\""));
        assert_eq!("jacobi".parse::<LossKind>().unwrap(), LossKind::Jacobi);
    }
}
