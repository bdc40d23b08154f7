//! Intra-class neighbourhoods, LLE reconstruction weights and the projection
//! of (shifted) features onto the locally linear class manifold.
//!
//! For sample `i` the projector forms `z_i = F_i − R_i/σ`, finds the `H`
//! nearest same-class rows of the current batch `F` (excluding `i`), solves the
//! LLE weights `ω` reconstructing `z_i` from them, and returns
//! `F̂_i = Σ_j ω_j F_{n_j}`. When the class has too few members the
//! unconstrained minimiser `F̂_i = z_i` is used instead.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{solve_linear, squared_distance, Matrix, Vector};
use crate::registry::{Named, Registry};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ManifoldConfig {
    /// Neighbourhood size `H`.
    pub h: usize,
    /// Relative Tikhonov term for the local Gram solve (scaled by `trace(C)/H`).
    pub ridge: f64,
    pub intra_class_only: bool,
}

impl Default for ManifoldConfig {
    fn default() -> Self {
        Self {
            h: 5,
            ridge: 1e-6,
            intra_class_only: true,
        }
    }
}

impl ManifoldConfig {
    pub fn validate(&self, batch_size: usize) -> Result<()> {
        if self.h == 0 {
            return Err(Error::Config("manifold.h must be at least 1".into()));
        }
        if self.h >= batch_size {
            return Err(Error::Config(format!(
                "manifold.h = {} must be smaller than the batch size {}",
                self.h, batch_size
            )));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::Config("manifold.ridge must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Neighbour indices and their reconstruction weights for one query point.
#[derive(Debug, Clone, PartialEq)]
pub struct LleWeights {
    pub neighbor_ids: Vec<usize>,
    pub omega: Vector,
}

/// The `H` nearest rows of `features` to `query`, skipping `exclude`.
///
/// With `intra_class_only` only rows labelled `label` are candidates. Ties in
/// distance go to the lower index.
pub fn nearest_neighbors(
    features: &Matrix,
    query: &[f64],
    exclude: usize,
    labels: &[usize],
    label: usize,
    config: &ManifoldConfig,
) -> Result<Vec<usize>> {
    if labels.len() != features.rows() {
        return Err(Error::input("labels and features differ in length"));
    }
    if query.len() != features.cols() {
        return Err(Error::input("query dimension differs from features"));
    }
    let mut candidates: Vec<(f64, usize)> = (0..features.rows())
        .filter(|&j| j != exclude && (!config.intra_class_only || labels[j] == label))
        .map(|j| (squared_distance(features.row(j), query), j))
        .collect();
    if candidates.len() < config.h {
        return Err(Error::ManifoldUnavailable {
            index: exclude,
            available: candidates.len(),
            required: config.h,
        });
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(candidates[..config.h].iter().map(|&(_, j)| j).collect())
}

/// Nearest neighbours of row `query_index` itself.
pub fn knn(
    features: &Matrix,
    query_index: usize,
    labels: &[usize],
    config: &ManifoldConfig,
) -> Result<Vec<usize>> {
    if query_index >= features.rows() {
        return Err(Error::input(format!("query index {query_index} out of range")));
    }
    nearest_neighbors(
        features,
        features.row(query_index),
        query_index,
        labels,
        labels[query_index],
        config,
    )
}

/// Affine weights (summing to one) that best reconstruct `query` from the rows of `neighbors`.
pub fn lle_weights(query: &[f64], neighbors: &Matrix, ridge: f64) -> Result<Vector> {
    let h = neighbors.rows();
    if h == 0 {
        return Err(Error::input("lle_weights needs at least one neighbour"));
    }
    if neighbors.cols() != query.len() {
        return Err(Error::input("query dimension differs from neighbours"));
    }
    if query.iter().any(|v| !v.is_finite()) || !neighbors.is_finite() {
        return Err(Error::input("non-finite LLE input"));
    }
    let diffs = Matrix::from_fn(h, query.len(), |j, k| query[k] - neighbors[(j, k)]);
    let gram = diffs.matmul_t(&diffs)?;
    let raw = solve_linear(&gram, &vec![1.0; h], ridge)?;
    let total: f64 = raw.iter().sum();
    if !(total.abs() > 0.0) || !total.is_finite() {
        return Err(Error::Numeric("LLE weights do not normalise".into()));
    }
    Ok(raw.iter().map(|w| w / total).collect::<Vec<_>>().into())
}

/// Neighbours of `query` plus the LLE weights over them.
pub fn lle_fit(
    features: &Matrix,
    query: &[f64],
    exclude: usize,
    labels: &[usize],
    label: usize,
    config: &ManifoldConfig,
) -> Result<LleWeights> {
    let neighbor_ids = nearest_neighbors(features, query, exclude, labels, label, config)?;
    let omega = lle_weights(query, &features.select_rows(&neighbor_ids), config.ridge)?;
    Ok(LleWeights {
        neighbor_ids,
        omega,
    })
}

/// `z = F − R/σ`, the unconstrained minimiser.
pub fn shifted(features: &Matrix, multipliers: &Matrix, sigma: f64) -> Result<Matrix> {
    if !(sigma > 0.0) {
        return Err(Error::input(format!("sigma must be positive, got {sigma}")));
    }
    features.zip_map(multipliers, |f, r| f - r / sigma)
}

/// Strategy computing `F̂` from the batch features, multipliers and penalty.
pub trait Projector: Named + Send + Sync {
    fn project(
        &self,
        features: &Matrix,
        multipliers: &Matrix,
        sigma: f64,
        labels: &[usize],
        config: &ManifoldConfig,
    ) -> Result<Matrix>;
}

/// Locally linear projection onto same-class batch neighbourhoods.
#[derive(Debug, Clone, Copy, Default)]
pub struct LleProjector;

impl Named for LleProjector {
    fn name(&self) -> &'static str {
        "lle"
    }
}

impl Projector for LleProjector {
    fn project(
        &self,
        features: &Matrix,
        multipliers: &Matrix,
        sigma: f64,
        labels: &[usize],
        config: &ManifoldConfig,
    ) -> Result<Matrix> {
        if labels.len() != features.rows() {
            return Err(Error::input("labels and features differ in length"));
        }
        let z = shifted(features, multipliers, sigma)?;
        let mut out = Matrix::zeros(features.rows(), features.cols());
        for i in 0..features.rows() {
            let target = out.row_mut(i);
            match lle_fit(features, z.row(i), i, labels, labels[i], config) {
                Ok(fit) => {
                    for (&j, &w) in fit.neighbor_ids.iter().zip(fit.omega.iter()) {
                        for (t, &f) in target.iter_mut().zip(features.row(j)) {
                            *t += w * f;
                        }
                    }
                }
                Err(Error::ManifoldUnavailable { .. }) => target.copy_from_slice(z.row(i)),
                Err(e) => return Err(e),
            }
        }
        if !out.is_finite() {
            return Err(Error::Numeric("projection produced non-finite features".into()));
        }
        Ok(out)
    }
}

/// No manifold: `F̂ = F − R/σ`.
#[derive(Debug, Clone, Copy, Default)]
pub struct UnconstrainedProjector;

impl Named for UnconstrainedProjector {
    fn name(&self) -> &'static str {
        "unconstrained"
    }
}

impl Projector for UnconstrainedProjector {
    fn project(
        &self,
        features: &Matrix,
        multipliers: &Matrix,
        sigma: f64,
        _labels: &[usize],
        _config: &ManifoldConfig,
    ) -> Result<Matrix> {
        shifted(features, multipliers, sigma)
    }
}

/// All built-in projectors keyed by name.
pub fn projectors() -> Registry<dyn Projector> {
    let lle: Arc<dyn Projector> = Arc::new(LleProjector);
    let unconstrained: Arc<dyn Projector> = Arc::new(UnconstrainedProjector);
    Registry::new("projector").with(lle).with(unconstrained)
}

/// LLE projection `F̂ = A_M(F − R/σ)`.
pub fn project(
    features: &Matrix,
    multipliers: &Matrix,
    sigma: f64,
    labels: &[usize],
    config: &ManifoldConfig,
) -> Result<Matrix> {
    LleProjector.project(features, multipliers, sigma, labels, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(h: usize) -> ManifoldConfig {
        ManifoldConfig {
            h,
            ridge: 1e-9,
            intra_class_only: true,
        }
    }

    #[test]
    fn nearest_point_on_a_line() {
        let f = Matrix::from_rows(&[[0.0], [1.0], [5.0], [6.0]]).unwrap();
        assert_eq!(knn(&f, 0, &[0, 0, 0, 0], &cfg(1)).unwrap(), vec![1]);
    }

    #[test]
    fn ties_prefer_lower_index() {
        let f = Matrix::from_rows(&[[0.0], [1.0], [-1.0]]).unwrap();
        assert_eq!(knn(&f, 0, &[0, 0, 0], &cfg(1)).unwrap(), vec![1]);
        let f = Matrix::from_rows(&[[1.0], [-1.0], [0.0]]).unwrap();
        assert_eq!(knn(&f, 2, &[0, 0, 0], &cfg(1)).unwrap(), vec![0]);
    }

    #[test]
    fn knn_respects_classes() {
        let f = Matrix::from_rows(&[[0.0], [0.1], [3.0], [4.0]]).unwrap();
        let labels = [0, 1, 0, 0];
        assert_eq!(knn(&f, 0, &labels, &cfg(2)).unwrap(), vec![2, 3]);
        let err = knn(&f, 1, &labels, &cfg(1)).unwrap_err();
        assert!(matches!(err, Error::ManifoldUnavailable { available: 0, .. }));
        let any = ManifoldConfig {
            intra_class_only: false,
            ..cfg(1)
        };
        assert_eq!(knn(&f, 1, &labels, &any).unwrap(), vec![0]);
    }

    #[test]
    fn knn_matches_full_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = Matrix::from_fn(20, 3, |_, _| rng.random_range(-1.0..1.0));
        let labels = vec![0; 20];
        for q in [0, 7, 19] {
            let mut all: Vec<(f64, usize)> = (0..20)
                .filter(|&j| j != q)
                .map(|j| {
                    let d: f64 = (0..3).map(|k| (f[(j, k)] - f[(q, k)]).powi(2)).sum();
                    (d.sqrt(), j)
                })
                .collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut expected: Vec<usize> = all[..5].iter().map(|p| p.1).collect();
            let mut got = knn(&f, q, &labels, &cfg(5)).unwrap();
            expected.sort();
            got.sort();
            assert_eq!(got, expected);
            assert!(!got.contains(&q));
        }
    }

    #[test]
    fn midpoint_weights() {
        let n = Matrix::from_rows(&[[0.0, 0.0], [2.0, 0.0]]).unwrap();
        let w = lle_weights(&[1.0, 0.0], &n, 1e-9).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-12 && (w[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn unique_affine_solution() {
        let n = Matrix::from_rows(&[[0.0, 0.0], [2.0, 0.0], [0.0, 2.0]]).unwrap();
        // three points in the plane: the Gram matrix has rank 2, the affine solution is unique
        assert!(matches!(lle_weights(&[1.0, 1.0], &n, 0.0), Err(Error::Singular)));
        let w = lle_weights(&[1.0, 1.0], &n, 1e-9).unwrap();
        for (got, want) in w.iter().zip([0.0, 0.5, 0.5]) {
            assert!((got - want).abs() < 1e-8, "{w:?}");
        }
    }

    #[test]
    fn query_on_a_neighbour() {
        let n = Matrix::from_rows(&[[1.0, 2.0], [3.0, -1.0], [0.5, 0.5]]).unwrap();
        let w = lle_weights(&[3.0, -1.0], &n, 1e-9).unwrap();
        assert!(w[1] >= 1.0 - 1e-6, "{w:?}");
    }

    #[test]
    fn singular_gram_without_ridge() {
        let n = Matrix::from_rows(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]).unwrap();
        assert!(matches!(
            lle_weights(&[0.5, 0.0], &n, 0.0),
            Err(Error::Singular)
        ));
        assert!(lle_weights(&[0.5, 0.0], &n, 1e-9).is_ok());
    }

    #[test]
    fn projection_fixed_point() {
        // every point is an affine combination of the others on a line
        let f = Matrix::from_rows(&[[0.0, 1.0], [1.0, 2.0], [2.0, 3.0], [3.0, 4.0]]).unwrap();
        let r = Matrix::zeros(4, 2);
        let fhat = project(&f, &r, 1.0, &[0, 0, 0, 0], &cfg(2)).unwrap();
        for (a, b) in fhat.data().iter().zip(f.data()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn projection_fallback_without_neighbours() {
        let f = Matrix::from_rows(&[[3.0, 3.0], [0.0, 0.0]]).unwrap();
        let r = Matrix::from_rows(&[[2.0, 2.0], [0.0, 0.0]]).unwrap();
        let fhat = project(&f, &r, 2.0, &[0, 1], &cfg(1)).unwrap();
        assert_eq!(fhat.row(0), &[2.0, 2.0]);
        assert_eq!(fhat.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn registry_has_builtins() {
        let reg = projectors();
        assert_eq!(reg.names(), vec!["lle", "unconstrained"]);
        let f = Matrix::from_rows(&[[1.0], [2.0]]).unwrap();
        let r = Matrix::from_rows(&[[2.0], [0.0]]).unwrap();
        let out = reg
            .get("unconstrained")
            .unwrap()
            .project(&f, &r, 4.0, &[0, 0], &cfg(1))
            .unwrap();
        assert_eq!(out.data(), &[0.5, 2.0]);
    }

    proptest! {
        #[test]
        fn weights_sum_to_one(h in 1usize..8, d in 1usize..6, seed in any::<u64>(), ridge in prop_oneof![Just(0.0), Just(1e-9), Just(1e-3), Just(1.0)]) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = Matrix::from_fn(h, d, |_, _| rng.random_range(-1.0..1.0));
            let q: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            match lle_weights(&q, &n, ridge) {
                Ok(w) => prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9),
                Err(Error::Singular) => prop_assert_eq!(ridge, 0.0),
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            }
        }

        #[test]
        fn projection_stays_in_class_affine_hull(seed in any::<u64>()) {
            // classes live on disjoint coordinate blocks; an affine combination of
            // same-class rows keeps the other block exactly zero
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 12;
            let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
            let f = Matrix::from_fn(n, 4, |i, k| {
                if (k < 2) == (labels[i] == 0) { rng.random_range(-1.0..1.0) } else { 0.0 }
            });
            let r = Matrix::from_fn(n, 4, |_, _| rng.random_range(-0.1..0.1));
            let fhat = project(&f, &r, 1.0, &labels, &cfg(3)).unwrap();
            for i in 0..n {
                let off = if labels[i] == 0 { 2..4 } else { 0..2 };
                for k in off {
                    prop_assert!(fhat[(i, k)].abs() < 1e-12);
                }
            }
        }
    }
}
