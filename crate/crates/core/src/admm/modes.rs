use std::sync::Arc;

use super::{augmented_objective, feature_gradient, AdmmConfig, AdmmState, Batch, IterationRecord};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::manifold::{projectors, Projector};
use crate::net::{
    accuracy, argmax_rows, descend_head, descend_trunk, forward, head_backward, objective_j_lambda,
    trunk_backward, NetParams,
};
use crate::registry::{Named, Registry};

/// Everything one iteration reads besides parameters and state.
pub struct StepData<'a> {
    pub batch: &'a Batch,
    /// Fixed batch on which the residual `ε` is measured.
    pub anchor: &'a Batch,
    pub config: &'a AdmmConfig,
    pub projector: &'a dyn Projector,
}

/// One training iteration strategy, selected by name.
pub trait TrainMode: Named + Send + Sync {
    /// What the residual compares between iterations on the anchor batch.
    fn anchor_target(&self, params: &NetParams, state: &AdmmState, data: &StepData) -> Result<Matrix>;

    fn step(
        &self,
        params: &mut NetParams,
        state: &mut AdmmState,
        data: &StepData,
    ) -> Result<IterationRecord>;
}

fn diverged(k: usize, reason: impl Into<String>) -> Error {
    Error::Diverged {
        iteration: k,
        reason: reason.into(),
    }
}

fn numeric_to_divergence(k: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Numeric(msg) => diverged(k, msg),
        other => other,
    }
}

fn residual(state: &mut AdmmState, current: Matrix) -> Result<f64> {
    let eps = match state.prev_anchor.as_ref() {
        Some(prev) => prev.zip_map(&current, |a, b| a - b)?.frobenius_sq(),
        None => f64::INFINITY,
    };
    state.prev_anchor = Some(current);
    Ok(eps)
}

/// Plain minibatch SGD on `J_λ`; no projection, multipliers stay zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct BaselineMode;

impl Named for BaselineMode {
    fn name(&self) -> &'static str {
        "baseline"
    }
}

impl TrainMode for BaselineMode {
    fn anchor_target(&self, params: &NetParams, _: &AdmmState, data: &StepData) -> Result<Matrix> {
        Ok(forward(params, &data.anchor.inputs)?.features().clone())
    }

    fn step(
        &self,
        params: &mut NetParams,
        state: &mut AdmmState,
        data: &StepData,
    ) -> Result<IterationRecord> {
        let k = state.k;
        let cfg = data.config;
        let batch = data.batch;
        if state.prev_anchor.is_none() {
            state.prev_anchor = Some(self.anchor_target(params, state, data)?);
        }
        let cache = forward(params, &batch.inputs).map_err(numeric_to_divergence(k))?;
        let head = head_backward(params, cache.features(), &batch.labels, cfg.lambda_reg)?;
        if !head.objective.is_finite() {
            return Err(diverged(k, "non-finite loss"));
        }
        let trunk = trunk_backward(params, &cache, &head.features)?;
        descend_trunk(params, &trunk, cfg.alpha)?;
        descend_head(params, &head.weights, &head.bias, cfg.alpha)?;

        let target = self
            .anchor_target(params, state, data)
            .map_err(numeric_to_divergence(k))?;
        let eps = residual(state, target)?;
        state.k += 1;
        Ok(IterationRecord {
            k,
            loss: head.objective,
            projected_loss: head.objective,
            augmented_loss: head.objective,
            eps,
            sigma: state.sigma,
            accepted: false,
            train_acc: accuracy(&argmax_rows(&cache.logits), &batch.labels),
            eval_loss: None,
            val_acc: None,
        })
    }
}

/// The manifold-constrained ADMM-BP iteration.
#[derive(Debug, Clone, Copy, Default)]
pub struct StmnMode;

impl Named for StmnMode {
    fn name(&self) -> &'static str {
        "stmn"
    }
}

impl TrainMode for StmnMode {
    fn anchor_target(&self, params: &NetParams, state: &AdmmState, data: &StepData) -> Result<Matrix> {
        let anchor = data.anchor;
        let features = forward(params, &anchor.inputs)?.features().clone();
        data.projector.project(
            &features,
            &state.multipliers_for(&anchor.ids),
            state.sigma,
            &anchor.labels,
            &data.config.manifold,
        )
    }

    fn step(
        &self,
        params: &mut NetParams,
        state: &mut AdmmState,
        data: &StepData,
    ) -> Result<IterationRecord> {
        let k = state.k;
        let cfg = data.config;
        let batch = data.batch;
        let sigma = state.sigma;
        if state.prev_anchor.is_none() {
            state.prev_anchor = Some(self.anchor_target(params, state, data)?);
        }

        let cache = forward(params, &batch.inputs).map_err(numeric_to_divergence(k))?;
        let features = cache.features();
        let multipliers = state.multipliers_for(&batch.ids);
        let fhat = data
            .projector
            .project(features, &multipliers, sigma, &batch.labels, &cfg.manifold)
            .map_err(numeric_to_divergence(k))?;

        // classification loss of P2 lives at F̂
        let head = head_backward(params, &fhat, &batch.labels, cfg.lambda_reg)?;
        let loss_at_f = objective_j_lambda(params, &cache, &batch.labels, cfg.lambda_reg)?;
        let augmented = augmented_objective(head.objective, features, &fhat, &multipliers, sigma)?;
        if !(head.objective.is_finite() && loss_at_f.is_finite() && augmented.is_finite()) {
            return Err(diverged(k, "non-finite loss"));
        }
        let into_trunk = feature_gradient(
            &head.features,
            features,
            &fhat,
            &multipliers,
            sigma,
            cfg.paper_literal_sign,
        )?;
        let trunk = trunk_backward(params, &cache, &into_trunk)?;
        descend_head(params, &head.weights, &head.bias, cfg.alpha)?;
        descend_trunk(params, &trunk, cfg.alpha)?;

        let target = self
            .anchor_target(params, state, data)
            .map_err(numeric_to_divergence(k))?;
        let eps = residual(state, target)?;
        if !eps.is_finite() {
            return Err(diverged(k, "non-finite residual"));
        }
        let accepted =
            state.penalty_schedule(eps, cfg.eta, cfg.sigma_max, &fhat, features, &batch.ids)?;
        Ok(IterationRecord {
            k,
            loss: loss_at_f,
            projected_loss: head.objective,
            augmented_loss: augmented,
            eps,
            sigma,
            accepted,
            train_acc: accuracy(&argmax_rows(&cache.logits), &batch.labels),
            eval_loss: None,
            val_acc: None,
        })
    }
}

/// All built-in training modes keyed by name.
pub fn modes() -> Registry<dyn TrainMode> {
    let baseline: Arc<dyn TrainMode> = Arc::new(BaselineMode);
    let stmn: Arc<dyn TrainMode> = Arc::new(StmnMode);
    Registry::new("training mode").with(baseline).with(stmn)
}

/// Functional form of one iteration: looks up the mode and projector named in
/// `config` and returns the updated parameters, state and record.
pub fn train_step(
    params: &NetParams,
    state: &AdmmState,
    batch: &Batch,
    anchor: &Batch,
    config: &AdmmConfig,
) -> Result<(NetParams, AdmmState, IterationRecord)> {
    let mode = modes().get(&config.mode)?;
    let projector = projectors().get(&config.projector)?;
    let mut params = params.clone();
    let mut state = state.clone();
    let data = StepData {
        batch,
        anchor,
        config,
        projector: projector.as_ref(),
    };
    let record = mode.step(&mut params, &mut state, &data)?;
    Ok((params, state, record))
}
