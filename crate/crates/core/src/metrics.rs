//! Feature-quality instruments: intra-class pairwise-distance statistics, a
//! linear softmax probe and a 2-D PCA embedding.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, squared_distance, Matrix};
use crate::net::argmax_rows;
use crate::rng::SeedStreams;

/// Mean and population variance of a set of pairwise distances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub pairs: usize,
    pub mean: f64,
    pub variance: f64,
}

impl PairStats {
    fn of(distances: &[f64]) -> Option<Self> {
        if distances.is_empty() {
            return None;
        }
        let n = distances.len() as f64;
        let mean = distances.iter().sum::<f64>() / n;
        let variance = distances.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            pairs: distances.len(),
            mean,
            variance,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntraClassStats {
    /// Indexed by class; `None` for classes with fewer than two samples.
    pub per_class: Vec<Option<PairStats>>,
    /// Pooled over every intra-class pair.
    pub total: Option<PairStats>,
}

/// Statistics of the Euclidean distances between every pair of same-class rows.
pub fn intra_class_stats(features: &Matrix, labels: &[usize]) -> Result<IntraClassStats> {
    if labels.len() != features.rows() {
        return Err(Error::input("labels and features differ in length"));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut members = vec![Vec::new(); classes];
    for (i, &y) in labels.iter().enumerate() {
        members[y].push(i);
    }
    let mut pooled = Vec::new();
    let per_class = members
        .iter()
        .map(|rows| {
            let mut d = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
            for (a, &i) in rows.iter().enumerate() {
                for &j in &rows[a + 1..] {
                    d.push(squared_distance(features.row(i), features.row(j)).max(0.0).sqrt());
                }
            }
            pooled.extend_from_slice(&d);
            PairStats::of(&d)
        })
        .collect();
    Ok(IntraClassStats {
        per_class,
        total: PairStats::of(&pooled),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 0.1,
            batch_size: 32,
        }
    }
}

/// Trains a fresh linear softmax classifier on standardised train features
/// and returns its accuracy on the test features.
pub fn linear_probe(
    train_x: &Matrix,
    train_y: &[usize],
    test_x: &Matrix,
    test_y: &[usize],
    config: &ProbeConfig,
    seed: u64,
) -> Result<f64> {
    if train_x.rows() != train_y.len() || test_x.rows() != test_y.len() {
        return Err(Error::input("probe labels and features differ in length"));
    }
    if train_x.cols() != test_x.cols() {
        return Err(Error::input("train and test features differ in width"));
    }
    if train_y.is_empty() {
        return Err(Error::input("probe needs training samples"));
    }
    if test_y.is_empty() {
        return Ok(0.0);
    }
    let d = train_x.cols();
    let classes = train_y.iter().chain(test_y).max().map_or(0, |m| m + 1);
    let n = train_x.rows() as f64;

    let mut mean = vec![0.0; d];
    for row in train_x.iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / n;
        }
    }
    let mut scale = vec![0.0; d];
    for row in train_x.iter_rows() {
        for ((s, v), m) in scale.iter_mut().zip(row).zip(&mean) {
            *s += (v - m).powi(2) / n;
        }
    }
    for s in &mut scale {
        *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
    }
    let standardise = |x: &Matrix| {
        Matrix::from_fn(x.rows(), d, |i, k| (x[(i, k)] - mean[k]) / scale[k])
    };
    let xs = standardise(train_x);

    let mut w = Matrix::zeros(d, classes);
    let mut b = vec![0.0; classes];
    let mut order: Vec<usize> = (0..train_y.len()).collect();
    let streams = SeedStreams::new(seed);
    let bs = config.batch_size.max(1);
    for epoch in 0..config.epochs {
        order.shuffle(&mut streams.indexed("probe", epoch as u64));
        for chunk in order.chunks(bs) {
            let mut gw = Matrix::zeros(d, classes);
            let mut gb = vec![0.0; classes];
            let mut p = vec![0.0; classes];
            for &i in chunk {
                let x = xs.row(i);
                for c in 0..classes {
                    p[c] = b[c] + (0..d).map(|k| x[k] * w[(k, c)]).sum::<f64>();
                }
                let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for v in p.iter_mut() {
                    *v = (*v - max).exp();
                    z += *v;
                }
                for (c, v) in p.iter().enumerate() {
                    let g = v / z - if c == train_y[i] { 1.0 } else { 0.0 };
                    gb[c] += g;
                    for k in 0..d {
                        gw[(k, c)] += g * x[k];
                    }
                }
            }
            let step = config.lr / chunk.len() as f64;
            for (wv, g) in w.data_mut().iter_mut().zip(gw.data()) {
                *wv -= step * g;
            }
            for (bv, g) in b.iter_mut().zip(&gb) {
                *bv -= step * g;
            }
        }
    }
    let mut logits = standardise(test_x).matmul(&w)?;
    for i in 0..logits.rows() {
        for (l, bv) in logits.row_mut(i).iter_mut().zip(&b) {
            *l += bv;
        }
    }
    if !logits.is_finite() {
        return Err(Error::Numeric("probe diverged".into()));
    }
    let pred = argmax_rows(&logits);
    let hits = pred.iter().zip(test_y).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / test_y.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaEmbedding {
    /// n × 2 coordinates on the top two principal directions.
    pub coords: Matrix,
    /// Fraction of total variance captured by each direction.
    pub explained: [f64; 2],
}

fn top_eigenvector(cov: &Matrix, against: Option<&[f64]>) -> Option<(Vec<f64>, f64)> {
    let d = cov.rows();
    let scale = cov.trace();
    let start = (0..d).max_by(|&i, &j| cov[(i, i)].total_cmp(&cov[(j, j)]))?;
    if cov[(start, start)] <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return None;
    }
    let orthogonalise = |v: &mut Vec<f64>| {
        if let Some(u) = against {
            let p = dot(v, u);
            for (x, y) in v.iter_mut().zip(u) {
                *x -= p * y;
            }
        }
    };
    let normalise = |v: &mut Vec<f64>| {
        let n = dot(v, v).sqrt();
        if n > 0.0 {
            v.iter_mut().for_each(|x| *x /= n);
        }
        n
    };
    let mut v: Vec<f64> = cov.row(start).to_vec();
    orthogonalise(&mut v);
    if normalise(&mut v) == 0.0 {
        return None;
    }
    for _ in 0..10_000 {
        let mut next: Vec<f64> = (0..d).map(|i| dot(cov.row(i), &v)).collect();
        orthogonalise(&mut next);
        if normalise(&mut next) == 0.0 {
            return None;
        }
        let delta = squared_distance(&next, &v).sqrt();
        v = next;
        if delta < 1e-13 {
            break;
        }
    }
    // fix the sign: largest-magnitude component positive
    let pivot = (0..d).max_by(|&i, &j| v[i].abs().total_cmp(&v[j].abs()))?;
    if v[pivot] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    let cv: Vec<f64> = (0..d).map(|i| dot(cov.row(i), &v)).collect();
    let lambda = dot(&v, &cv).max(0.0);
    Some((v, lambda))
}

/// Projection of the centred rows onto the top two principal directions,
/// found by power iteration with deflation.
pub fn pca_embed_2d(features: &Matrix) -> Result<PcaEmbedding> {
    let (n, d) = features.shape();
    if n < 2 {
        return Err(Error::input("PCA needs at least two rows"));
    }
    let mut mean = vec![0.0; d];
    for row in features.iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centred = Matrix::from_fn(n, d, |i, k| features[(i, k)] - mean[k]);
    let cov = centred.t_matmul(&centred)?.map(|v| v / n as f64);
    let total = cov.trace();
    let mut coords = Matrix::zeros(n, 2);
    let mut explained = [0.0; 2];
    if !(total > 0.0) {
        return Ok(PcaEmbedding { coords, explained });
    }
    let first = top_eigenvector(&cov, None);
    let second = first.as_ref().and_then(|(v1, l1)| {
        let deflated = Matrix::from_fn(d, d, |i, j| cov[(i, j)] - l1 * v1[i] * v1[j]);
        top_eigenvector(&deflated, Some(v1))
    });
    for (c, comp) in [first, second].into_iter().enumerate() {
        if let Some((v, lambda)) = comp {
            explained[c] = (lambda / total).min(1.0);
            for i in 0..n {
                coords[(i, c)] = dot(centred.row(i), &v);
            }
        }
    }
    Ok(PcaEmbedding { coords, explained })
}
