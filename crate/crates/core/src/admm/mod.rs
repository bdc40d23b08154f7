//! ADMM-BP: backpropagation interleaved with multiplier and penalty updates
//! that tie the feature layer `F` to its manifold projection `F̂`.
//!
//! The augmented objective over one batch is
//!
//! ```text
//! J_{λ,σ} = J_λ(F̂) + ⟨R, F̂ − F⟩ + (σ/2)·‖F̂ − F‖²
//! ```
//!
//! Each iteration projects the batch features, takes one gradient step on the
//! head (penalty terms do not involve `θ`) and one on the trunk with the
//! penalty gradient injected at the feature layer, then measures the drift of
//! `F̂` on a fixed anchor batch and runs the accept/reject penalty schedule.

mod modes;
mod trainer;

pub use modes::{modes, train_step, BaselineMode, StepData, StmnMode, TrainMode};
pub use trainer::{
    extract_features, train, Batch, BatchSampler, FeatureChain, SequenceFeatures, TrainData,
    Trainer, TrainerCheckpoint,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::manifold::ManifoldConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdmmConfig {
    /// Registered training mode, `stmn` or `baseline`.
    pub mode: String,
    /// Registered projector used by `stmn`.
    pub projector: String,
    pub alpha: f64,
    pub lambda_reg: f64,
    pub sigma0: f64,
    pub eta: f64,
    /// Upper bound on the penalty; doubling saturates here. Set to infinity
    /// for unbounded doubling.
    pub sigma_max: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub batch_size: usize,
    /// Evaluate train loss and validation accuracy every this many iterations (0 = never).
    pub eval_every: usize,
    /// Descend along `+σ(F̂ − F) + R` exactly as printed instead of the `F`-derivative.
    pub paper_literal_sign: bool,
    pub manifold: ManifoldConfig,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            mode: "stmn".into(),
            projector: "lle".into(),
            alpha: 0.001,
            lambda_reg: 0.001,
            sigma0: 0.01,
            eta: 1.0,
            sigma_max: 1.0,
            max_iter: 1000,
            tol: 0.001,
            batch_size: 50,
            eval_every: 0,
            paper_literal_sign: false,
            manifold: ManifoldConfig::default(),
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.lambda_reg >= 0.0 && self.lambda_reg.is_finite()) {
            return bad(format!("lambda_reg must be >= 0, got {}", self.lambda_reg));
        }
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return bad(format!("sigma0 must be positive, got {}", self.sigma0));
        }
        if !(self.sigma_max >= self.sigma0) {
            return bad(format!("sigma_max must be >= sigma0, got {}", self.sigma_max));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return bad(format!("eta must lie in (0, 1], got {}", self.eta));
        }
        if !(self.tol > 0.0) {
            return bad(format!("tol must be positive, got {}", self.tol));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.mode != "baseline" {
            self.manifold.validate(self.batch_size)?;
        }
        Ok(())
    }
}

mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Multipliers, penalty and residual bookkeeping carried across iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmmState {
    /// One row per training sample.
    pub multipliers: Matrix,
    pub sigma: f64,
    #[serde(with = "inf_as_null")]
    pub eps_best: f64,
    pub k: usize,
    pub rejected: usize,
    /// `F̂` on the anchor batch from the previous iteration.
    pub prev_anchor: Option<Matrix>,
}

impl AdmmState {
    pub fn new(num_samples: usize, feature_dim: usize, sigma0: f64) -> Self {
        Self {
            multipliers: Matrix::zeros(num_samples, feature_dim),
            sigma: sigma0,
            eps_best: f64::INFINITY,
            k: 0,
            rejected: 0,
            prev_anchor: None,
        }
    }

    pub fn multipliers_for(&self, ids: &[usize]) -> Matrix {
        self.multipliers.select_rows(ids)
    }

    /// Accept/reject step of the penalty schedule; returns whether the iteration was accepted.
    ///
    /// Accepted (`eps < eta·eps_best`): multipliers of the batch samples move by
    /// `σ(F̂ − F)`, `σ` stays, `eps_best ← eps`. Rejected: multipliers frozen,
    /// `σ` doubles (capped at `sigma_max`). `k` advances either way.
    pub fn penalty_schedule(
        &mut self,
        eps: f64,
        eta: f64,
        sigma_max: f64,
        fhat: &Matrix,
        features: &Matrix,
        ids: &[usize],
    ) -> Result<bool> {
        if !(eps >= 0.0) {
            return Err(Error::input(format!("residual must be >= 0, got {eps}")));
        }
        if ids.len() != features.rows() {
            return Err(Error::input("sample ids and features differ in length"));
        }
        let accepted = eps < eta * self.eps_best;
        if accepted {
            let r = self.multipliers_for(ids);
            let updated = update_multiplier(&r, self.sigma, fhat, features)?;
            for (row, &id) in ids.iter().enumerate() {
                self.multipliers.row_mut(id).copy_from_slice(updated.row(row));
            }
            self.eps_best = eps;
        } else {
            self.sigma = (2.0 * self.sigma).min(sigma_max);
            self.rejected += 1;
        }
        self.k += 1;
        Ok(accepted)
    }
}

/// `J + ⟨R, F̂ − F⟩ + (σ/2)‖F̂ − F‖²`.
pub fn augmented_objective(
    j_lambda: f64,
    features: &Matrix,
    fhat: &Matrix,
    multipliers: &Matrix,
    sigma: f64,
) -> Result<f64> {
    let gap = fhat.zip_map(features, |a, b| a - b)?;
    let linear = multipliers.inner(&gap)?;
    Ok(j_lambda + linear + 0.5 * sigma * gap.frobenius_sq())
}

/// Gradient injected into the trunk at the feature layer.
///
/// Default: `∂J/∂F̂ + σ(F − F̂) − R`, the derivative of the augmented objective
/// with respect to `F` when `∂J/∂F̂` is passed straight through. With
/// `literal_sign`: `∂J/∂F̂ + σ(F̂ − F) + R`.
pub fn feature_gradient(
    loss_grad: &Matrix,
    features: &Matrix,
    fhat: &Matrix,
    multipliers: &Matrix,
    sigma: f64,
    literal_sign: bool,
) -> Result<Matrix> {
    loss_grad.same_shape(features, "feature gradient")?;
    fhat.same_shape(features, "feature gradient")?;
    multipliers.same_shape(features, "feature gradient")?;
    let sign = if literal_sign { 1.0 } else { -1.0 };
    let mut out = loss_grad.clone();
    for (((o, &f), &fh), &r) in out
        .data_mut()
        .iter_mut()
        .zip(features.data())
        .zip(fhat.data())
        .zip(multipliers.data())
    {
        *o += sign * (sigma * (fh - f) + r);
    }
    Ok(out)
}

/// `R + σ(F̂ − F)`.
pub fn update_multiplier(
    multipliers: &Matrix,
    sigma: f64,
    fhat: &Matrix,
    features: &Matrix,
) -> Result<Matrix> {
    fhat.same_shape(features, "multiplier update")?;
    multipliers.same_shape(features, "multiplier update")?;
    let mut out = multipliers.clone();
    for ((o, &fh), &f) in out.data_mut().iter_mut().zip(fhat.data()).zip(features.data()) {
        *o += sigma * (fh - f);
    }
    Ok(out)
}

/// One line of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    /// `J_λ` of the network output on the batch, before the update.
    pub loss: f64,
    /// `J_λ` of the head applied to `F̂` (equal to `loss` for the baseline).
    pub projected_loss: f64,
    /// Augmented objective on the batch, before the update.
    pub augmented_loss: f64,
    pub eps: f64,
    /// Penalty in effect during this iteration.
    pub sigma: f64,
    pub accepted: bool,
    /// Batch accuracy before the update.
    pub train_acc: f64,
    /// Full training-set `J_λ` after the update, on evaluation iterations.
    pub eval_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<IterationRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serialises"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(s: &str) -> Result<Self> {
        let records = s
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l)
                    .map_err(|e| Error::Format(format!("history line {}: {e}", i + 1)))
            })
            .collect::<Result<_>>()?;
        Ok(Self { records })
    }

    /// First evaluated iteration reaching the best validation accuracy.
    pub fn peak_validation(&self) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for r in &self.records {
            if let Some(acc) = r.val_acc {
                if best.is_none_or(|(_, b)| acc > b) {
                    best = Some((r.k, acc));
                }
            }
        }
        best
    }

    /// Evaluated training loss at the evaluation point closest to iteration `k`.
    pub fn eval_loss_near(&self, k: usize) -> Option<f64> {
        self.records
            .iter()
            .filter_map(|r| r.eval_loss.map(|l| (r.k.abs_diff(k), l)))
            .min_by_key(|&(d, _)| d)
            .map(|(_, l)| l)
    }
}
