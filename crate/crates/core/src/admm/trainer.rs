use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{modes, AdmmConfig, AdmmState, IterationRecord, StepData, TrainHistory, TrainMode};
use crate::data::ClipBatch;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::manifold::{projectors, Projector};
use crate::net::{accuracy, argmax_rows, forward, objective_j_lambda, NetParams};
use crate::rng::SeedStreams;

/// Rows of the training set selected for one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// Training-sample ids (row indices into the training set).
    pub ids: Vec<usize>,
    pub inputs: Matrix,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn gather(data: &TrainData, ids: Vec<usize>) -> Self {
        Self {
            inputs: data.clips.select_rows(&ids),
            labels: ids.iter().map(|&i| data.labels[i]).collect(),
            ids,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

pub type TrainData = ClipBatch;

/// Class-balanced minibatches, reshuffled every epoch from a named seed stream.
///
/// Each epoch shuffles every class independently, interleaves the classes
/// round-robin and cuts the sequence into `batch_size` chunks (a short tail is
/// dropped unless it is the only batch).
#[derive(Debug, Clone)]
pub struct BatchSampler {
    by_class: Vec<Vec<usize>>,
    batch_size: usize,
    streams: SeedStreams,
    epoch: u64,
    cursor: usize,
    batches: Vec<Vec<usize>>,
}

impl BatchSampler {
    pub fn new(labels: &[usize], batch_size: usize, streams: SeedStreams) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::input("cannot sample batches from an empty dataset"));
        }
        if batch_size == 0 {
            return Err(Error::input("batch size must be positive"));
        }
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        let mut by_class = vec![Vec::new(); classes];
        for (i, &y) in labels.iter().enumerate() {
            by_class[y].push(i);
        }
        let mut sampler = Self {
            by_class,
            batch_size,
            streams,
            epoch: 0,
            cursor: 0,
            batches: Vec::new(),
        };
        sampler.batches = sampler.epoch_batches(0);
        Ok(sampler)
    }

    pub fn epoch_batches(&self, epoch: u64) -> Vec<Vec<usize>> {
        let mut rng = self.streams.indexed("shuffle", epoch);
        let mut pools: Vec<Vec<usize>> = self.by_class.clone();
        for pool in &mut pools {
            pool.shuffle(&mut rng);
        }
        let total: usize = pools.iter().map(Vec::len).sum();
        let mut order = Vec::with_capacity(total);
        let mut pos = 0;
        while order.len() < total {
            for pool in &pools {
                if let Some(&i) = pool.get(pos) {
                    order.push(i);
                }
            }
            pos += 1;
        }
        let mut batches: Vec<Vec<usize>> =
            order.chunks(self.batch_size).map(<[usize]>::to_vec).collect();
        if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < self.batch_size) {
            batches.pop();
        }
        batches
    }

    pub fn next_ids(&mut self) -> Vec<usize> {
        if self.cursor >= self.batches.len() {
            self.epoch += 1;
            self.cursor = 0;
            self.batches = self.epoch_batches(self.epoch);
        }
        self.cursor += 1;
        self.batches[self.cursor - 1].clone()
    }

    pub fn position(&self) -> (u64, usize) {
        (self.epoch, self.cursor)
    }

    pub fn seek(&mut self, epoch: u64, cursor: usize) {
        self.epoch = epoch;
        self.cursor = cursor;
        self.batches = self.epoch_batches(epoch);
    }
}

/// Everything needed to continue a run bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerCheckpoint {
    pub params: NetParams,
    pub state: AdmmState,
    pub epoch: u64,
    pub cursor: usize,
    pub history: TrainHistory,
}

/// Owns one network and its ADMM state and drives iterations over a training set.
pub struct Trainer {
    config: AdmmConfig,
    mode: Arc<dyn TrainMode>,
    projector: Arc<dyn Projector>,
    params: NetParams,
    state: AdmmState,
    train: TrainData,
    validation: Option<TrainData>,
    sampler: BatchSampler,
    anchor: Batch,
    history: TrainHistory,
    converged: bool,
}

impl Trainer {
    pub fn new(
        params: NetParams,
        train: &TrainData,
        validation: Option<&TrainData>,
        config: &AdmmConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mode = modes().get(&config.mode)?;
        let projector = projectors().get(&config.projector)?;
        for (what, data) in [("training", Some(train)), ("validation", validation)] {
            let Some(data) = data else { continue };
            if data.clips.cols() != params.input_dim() {
                return Err(Error::input(format!(
                    "{what} clips have {} values, network expects {}",
                    data.clips.cols(),
                    params.input_dim()
                )));
            }
            if data.labels.iter().any(|&y| y >= params.num_classes()) {
                return Err(Error::input(format!("{what} label exceeds the class count")));
            }
        }
        let sampler = BatchSampler::new(&train.labels, config.batch_size, SeedStreams::new(seed))?;
        let anchor = Batch::gather(train, sampler.epoch_batches(0)[0].clone());
        let state = AdmmState::new(train.len(), params.feature_dim(), config.sigma0);
        Ok(Self {
            config: config.clone(),
            mode,
            projector,
            params,
            state,
            train: train.clone(),
            validation: validation.cloned(),
            sampler,
            anchor,
            history: TrainHistory::default(),
            converged: false,
        })
    }

    pub fn resume(
        checkpoint: TrainerCheckpoint,
        train: &TrainData,
        validation: Option<&TrainData>,
        config: &AdmmConfig,
        seed: u64,
    ) -> Result<Self> {
        if checkpoint.state.multipliers.rows() != train.len() {
            return Err(Error::input("checkpoint multipliers do not match the training set"));
        }
        let mut t = Self::new(checkpoint.params, train, validation, config, seed)?;
        t.state = checkpoint.state;
        t.history = checkpoint.history;
        t.sampler.seek(checkpoint.epoch, checkpoint.cursor);
        Ok(t)
    }

    pub fn checkpoint(&self) -> TrainerCheckpoint {
        let (epoch, cursor) = self.sampler.position();
        TrainerCheckpoint {
            params: self.params.clone(),
            state: self.state.clone(),
            epoch,
            cursor,
            history: self.history.clone(),
        }
    }

    pub fn params(&self) -> &NetParams {
        &self.params
    }

    pub fn state(&self) -> &AdmmState {
        &self.state
    }

    pub fn history(&self) -> &TrainHistory {
        &self.history
    }

    pub fn anchor(&self) -> &Batch {
        &self.anchor
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn into_parts(self) -> (NetParams, TrainHistory) {
        (self.params, self.history)
    }

    /// Runs one iteration and records it.
    pub fn step(&mut self) -> Result<&IterationRecord> {
        let ids = self.sampler.next_ids();
        let batch = Batch::gather(&self.train, ids);
        let data = StepData {
            batch: &batch,
            anchor: &self.anchor,
            config: &self.config,
            projector: self.projector.as_ref(),
        };
        let mut record = self.mode.step(&mut self.params, &mut self.state, &data)?;
        let every = self.config.eval_every;
        if every > 0 && (record.k + 1) % every == 0 {
            let cache = forward(&self.params, &self.train.clips).map_err(|e| Error::Diverged {
                iteration: record.k,
                reason: e.to_string(),
            })?;
            record.eval_loss = Some(objective_j_lambda(
                &self.params,
                &cache,
                &self.train.labels,
                self.config.lambda_reg,
            )?);
            if let Some(val) = &self.validation {
                let logits = forward(&self.params, &val.clips)?.logits;
                record.val_acc = Some(accuracy(&argmax_rows(&logits), &val.labels));
            }
        }
        if record.eps <= self.config.tol {
            self.converged = true;
        }
        self.history.records.push(record);
        Ok(self.history.records.last().expect("just pushed"))
    }

    /// Iterates until `max_iter` iterations have run or the residual drops to `tol`.
    pub fn run(&mut self) -> Result<()> {
        while !self.converged && self.state.k < self.config.max_iter {
            self.step()?;
        }
        Ok(())
    }
}

/// Trains `initial` on `train` and returns the final parameters and the full history.
pub fn train(
    initial: NetParams,
    train: &TrainData,
    validation: Option<&TrainData>,
    config: &AdmmConfig,
    seed: u64,
) -> Result<(NetParams, TrainHistory)> {
    let mut trainer = Trainer::new(initial, train, validation, config, seed)?;
    trainer.run()?;
    Ok(trainer.into_parts())
}

/// Features of the clips of one source sequence, in clip order.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceFeatures {
    pub source_id: usize,
    pub label: usize,
    pub clip_index: Vec<usize>,
    pub features: Matrix,
}

/// Per-sequence chains of clip features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureChain {
    pub sequences: Vec<SequenceFeatures>,
}

impl FeatureChain {
    /// All clip features stacked in chain order, with their labels.
    pub fn stacked(&self) -> (Matrix, Vec<usize>) {
        let cols = self.sequences.first().map_or(0, |s| s.features.cols());
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for s in &self.sequences {
            data.extend_from_slice(s.features.data());
            labels.extend(std::iter::repeat_n(s.label, s.features.rows()));
        }
        let rows = labels.len();
        (
            Matrix::new(rows, cols, data).expect("features are finite"),
            labels,
        )
    }
}

/// Forward-only pass grouping clip features by source sequence.
pub fn extract_features(params: &NetParams, dataset: &ClipBatch) -> Result<FeatureChain> {
    if dataset.is_empty() {
        return Ok(FeatureChain {
            sequences: Vec::new(),
        });
    }
    let cache = forward(params, &dataset.clips)?;
    let features = cache.features();
    let mut order: Vec<usize> = Vec::new();
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (row, &src) in dataset.source_ids.iter().enumerate() {
        let rows = groups.entry(src).or_insert_with(|| {
            order.push(src);
            Vec::new()
        });
        rows.push(row);
    }
    let sequences = order
        .into_iter()
        .map(|src| {
            let mut rows = groups.remove(&src).expect("grouped");
            rows.sort_by_key(|&r| dataset.clip_index[r]);
            SequenceFeatures {
                source_id: src,
                label: dataset.labels[rows[0]],
                clip_index: rows.iter().map(|&r| dataset.clip_index[r]).collect(),
                features: features.select_rows(&rows),
            }
        })
        .collect();
    Ok(FeatureChain { sequences })
}
