#![allow(dead_code)]

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stmn_core::data::ClipBatch;
use stmn_core::linalg::Matrix;
use stmn_core::net::{Activation, LayerSpec, NetParams};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

pub fn net(dims: &[usize], classes: usize, act: Activation, seed: u64) -> NetParams {
    let layers: Vec<LayerSpec> = dims
        .windows(2)
        .map(|w| LayerSpec::new(w[0], w[1], act))
        .collect();
    NetParams::init(&layers, classes, &mut rng(seed)).unwrap()
}

/// Gaussian blobs, one per class, `per_class` rows each, class-major.
pub fn blobs(classes: usize, per_class: usize, dim: usize, spread: f64, seed: u64) -> ClipBatch {
    let mut r = rng(seed);
    let centres: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dim).map(|_| r.random_range(-2.0..2.0)).collect())
        .collect();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (c, centre) in centres.iter().enumerate() {
        for _ in 0..per_class {
            rows.push(centre.iter().map(|m| m + spread * r.random_range(-1.0..1.0)).collect::<Vec<_>>());
            labels.push(c);
        }
    }
    let n = labels.len();
    ClipBatch {
        clips: Matrix::from_rows(&rows).unwrap(),
        labels,
        source_ids: (0..n).collect(),
        clip_index: vec![0; n],
    }
}

/// Central differences of `f` over every entry of `x`.
pub fn numeric_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest `|a − n| / max(|a|, |n|, floor)` over paired entries.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Plain minibatch SGD on softmax cross-entropy plus `(λ/2)‖θ‖²`, written
/// against nested `Vec`s with no shared code. Summation runs in ascending
/// index order everywhere.
pub struct PlainSgd {
    pub layers: Vec<(Vec<Vec<f64>>, Vec<f64>, Activation)>,
    pub head: Vec<Vec<f64>>,
    pub head_bias: Vec<f64>,
}

fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.iter_rows().map(|r| r.to_vec()).collect()
}

fn act(a: Activation, x: f64) -> f64 {
    match a {
        Activation::Relu => {
            if x > 0.0 {
                x
            } else {
                0.0
            }
        }
        Activation::Tanh => x.tanh(),
        Activation::Identity => x,
    }
}

fn act_grad(a: Activation, z: f64, y: f64) -> f64 {
    match a {
        Activation::Relu => {
            if z > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Tanh => 1.0 - y * y,
        Activation::Identity => 1.0,
    }
}

fn layer(x: &[Vec<f64>], w: &[Vec<f64>], b: &[f64]) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| {
            (0..b.len())
                .map(|j| {
                    let mut s = 0.0;
                    for k in 0..row.len() {
                        s += row[k] * w[k][j];
                    }
                    s + b[j]
                })
                .collect()
        })
        .collect()
}

impl PlainSgd {
    pub fn from_params(p: &NetParams) -> Self {
        Self {
            layers: p
                .hidden()
                .iter()
                .zip(p.layers())
                .map(|(d, s)| (to_rows(&d.weights), d.bias.to_vec(), s.activation))
                .collect(),
            head: to_rows(p.head_weights()),
            head_bias: p.head_bias().to_vec(),
        }
    }

    pub fn step(&mut self, x: &[Vec<f64>], y: &[usize], alpha: f64, lambda: f64) -> f64 {
        let n = x.len();
        let mut zs = Vec::new();
        let mut hs = vec![x.to_vec()];
        for (w, b, a) in &self.layers {
            let z = layer(hs.last().unwrap(), w, b);
            let h: Vec<Vec<f64>> = z.iter().map(|r| r.iter().map(|&v| act(*a, v)).collect()).collect();
            zs.push(z);
            hs.push(h);
        }
        let feats = hs.last().unwrap().clone();
        let logits = layer(&feats, &self.head, &self.head_bias);
        let m = self.head_bias.len();
        let mut dlog = vec![vec![0.0; m]; n];
        let mut loss = 0.0;
        for i in 0..n {
            let mx = logits[i].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for j in 0..m {
                dlog[i][j] = (logits[i][j] - mx).exp();
                s += dlog[i][j];
            }
            loss += s.ln() - (logits[i][y[i]] - mx);
            for j in 0..m {
                let t = if j == y[i] { 1.0 } else { 0.0 };
                dlog[i][j] = (dlog[i][j] / s - t) / n as f64;
            }
        }
        let mut norm = 0.0;
        for row in &self.head {
            for v in row {
                norm += v * v;
            }
        }
        let objective = loss / n as f64 + 0.5 * lambda * norm;

        let d = feats[0].len();
        let mut g_head = vec![vec![0.0; m]; d];
        for i in 0..n {
            for k in 0..d {
                for j in 0..m {
                    g_head[k][j] += feats[i][k] * dlog[i][j];
                }
            }
        }
        for k in 0..d {
            for j in 0..m {
                g_head[k][j] += lambda * self.head[k][j];
            }
        }
        let mut g_hb = vec![0.0; m];
        for i in 0..n {
            for j in 0..m {
                g_hb[j] += dlog[i][j];
            }
        }
        let mut delta: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..d)
                    .map(|k| {
                        let mut s = 0.0;
                        for j in 0..m {
                            s += dlog[i][j] * self.head[k][j];
                        }
                        s
                    })
                    .collect()
            })
            .collect();

        let mut grads = Vec::new();
        for l in (0..self.layers.len()).rev() {
            let (w, _, a) = &self.layers[l];
            let z = &zs[l];
            let h = &hs[l + 1];
            for i in 0..n {
                for j in 0..delta[i].len() {
                    delta[i][j] *= act_grad(*a, z[i][j], h[i][j]);
                }
            }
            let input = &hs[l];
            let (din, dout) = (w.len(), w[0].len());
            let mut gw = vec![vec![0.0; dout]; din];
            for i in 0..n {
                for k in 0..din {
                    for j in 0..dout {
                        gw[k][j] += input[i][k] * delta[i][j];
                    }
                }
            }
            let mut gb = vec![0.0; dout];
            for i in 0..n {
                for j in 0..dout {
                    gb[j] += delta[i][j];
                }
            }
            let next: Vec<Vec<f64>> = (0..n)
                .map(|i| {
                    (0..din)
                        .map(|k| {
                            let mut s = 0.0;
                            for j in 0..dout {
                                s += delta[i][j] * w[k][j];
                            }
                            s
                        })
                        .collect()
                })
                .collect();
            grads.push((gw, gb));
            delta = next;
        }
        grads.reverse();

        for ((w, b, _), (gw, gb)) in self.layers.iter_mut().zip(grads) {
            for (wr, gr) in w.iter_mut().zip(gw) {
                for (v, g) in wr.iter_mut().zip(gr) {
                    *v -= alpha * g;
                }
            }
            for (v, g) in b.iter_mut().zip(gb) {
                *v -= alpha * g;
            }
        }
        for (wr, gr) in self.head.iter_mut().zip(g_head) {
            for (v, g) in wr.iter_mut().zip(gr) {
                *v -= alpha * g;
            }
        }
        for (v, g) in self.head_bias.iter_mut().zip(g_hb) {
            *v -= alpha * g;
        }
        objective
    }

    /// Every parameter as raw bits, layer by layer, then the head.
    pub fn bits(&self) -> Vec<u64> {
        let mut out = Vec::new();
        for (w, b, _) in &self.layers {
            out.extend(w.iter().flatten().map(|v| v.to_bits()));
            out.extend(b.iter().map(|v| v.to_bits()));
        }
        out.extend(self.head.iter().flatten().map(|v| v.to_bits()));
        out.extend(self.head_bias.iter().map(|v| v.to_bits()));
        out
    }
}

pub fn param_bits(p: &NetParams) -> Vec<u64> {
    let mut out = Vec::new();
    for d in p.hidden() {
        out.extend(d.weights.data().iter().map(|v| v.to_bits()));
        out.extend(d.bias.iter().map(|v| v.to_bits()));
    }
    out.extend(p.head_weights().data().iter().map(|v| v.to_bits()));
    out.extend(p.head_bias().iter().map(|v| v.to_bits()));
    out
}

/// Every trainable parameter, layer by layer, then the head.
pub fn flatten(p: &NetParams) -> Vec<f64> {
    let mut out = Vec::new();
    for d in p.hidden() {
        out.extend_from_slice(d.weights.data());
        out.extend_from_slice(&d.bias);
    }
    out.extend_from_slice(p.head_weights().data());
    out.extend_from_slice(p.head_bias());
    out
}

pub fn unflatten(template: &NetParams, flat: &[f64]) -> NetParams {
    let mut p = template.clone();
    let mut at = 0;
    let mut take = |dst: &mut [f64]| {
        dst.copy_from_slice(&flat[at..at + dst.len()]);
        at += dst.len();
    };
    for d in p.hidden_mut() {
        take(d.weights.data_mut());
        take(&mut d.bias);
    }
    take(p.head_weights_mut().data_mut());
    take(p.head_bias_mut());
    p
}

fn flatten_grads(hidden: &[stmn_core::net::Dense], head_w: &Matrix, head_b: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    for d in hidden {
        out.extend_from_slice(d.weights.data());
        out.extend_from_slice(&d.bias);
    }
    out.extend_from_slice(head_w.data());
    out.extend_from_slice(head_b);
    out
}

/// Relative-error floor: entries whose gradient magnitude is below this are
/// compared absolutely, since central differences carry ~1e-10 noise.
pub const GRAD_FLOOR: f64 = 1e-6;

/// Maximum relative errors of analytic against central-difference gradients
/// on an 8→16→8 tanh trunk with a 4-class head and a 20-sample batch:
/// `(J_λ w.r.t. all parameters, augmented objective w.r.t. all parameters and F)`.
/// The augmented objective holds F̂ (an H = 4 LLE projection), R and σ fixed.
pub fn gradient_errors(seed: u64) -> (f64, f64) {
    use stmn_core::admm::{augmented_objective, feature_gradient};
    use stmn_core::manifold::{project, ManifoldConfig};
    use stmn_core::net::{backward, forward, head_backward, objective_j_lambda, trunk_backward};

    let params = net(&[8, 16, 8], 4, Activation::Tanh, seed);
    let data = blobs(4, 5, 8, 1.0, seed.wrapping_add(10_000));
    let labels = &data.labels;
    let mut r = rng(seed.wrapping_add(20_000));
    let lambda = r.random_range(0.0..0.1);
    let h = 1e-5;

    let cache = forward(&params, &data.clips).unwrap();
    let g = backward(&params, &cache, labels, lambda, None).unwrap();
    let analytic = flatten_grads(&g.hidden, &g.head_weights, &g.head_bias);
    let numeric = numeric_gradient(&flatten(&params), h, |x| {
        let p = unflatten(&params, x);
        let c = forward(&p, &data.clips).unwrap();
        objective_j_lambda(&p, &c, labels, lambda).unwrap()
    });
    let j_err = max_relative_error(&analytic, &numeric, GRAD_FLOOR);

    let features = cache.features().clone();
    let sigma = r.random_range(0.5..2.0);
    let multipliers = random_matrix(features.rows(), features.cols(), 0.1, &mut r);
    let cfg = ManifoldConfig {
        h: 4,
        ..ManifoldConfig::default()
    };
    let fhat = project(&features, &multipliers, sigma, labels, &cfg).unwrap();

    let head = head_backward(&params, &features, labels, lambda).unwrap();
    let into = feature_gradient(&head.features, &features, &fhat, &multipliers, sigma, false).unwrap();
    let trunk = trunk_backward(&params, &cache, &into).unwrap();
    let analytic = flatten_grads(&trunk, &head.weights, &head.bias);
    let numeric = numeric_gradient(&flatten(&params), h, |x| {
        let p = unflatten(&params, x);
        let c = forward(&p, &data.clips).unwrap();
        let j = objective_j_lambda(&p, &c, labels, lambda).unwrap();
        augmented_objective(j, c.features(), &fhat, &multipliers, sigma).unwrap()
    });
    let params_err = max_relative_error(&analytic, &numeric, GRAD_FLOOR);

    let zero = Matrix::zeros(features.rows(), features.cols());
    let analytic = feature_gradient(&zero, &features, &fhat, &multipliers, sigma, false).unwrap();
    let numeric = numeric_gradient(features.data(), h, |x| {
        let f = Matrix::new(features.rows(), features.cols(), x.to_vec()).unwrap();
        augmented_objective(0.0, &f, &fhat, &multipliers, sigma).unwrap()
    });
    let f_err = max_relative_error(analytic.data(), &numeric, GRAD_FLOOR);
    (j_err, params_err.max(f_err))
}

/// Runs `steps` baseline iterations through the trainer and through
/// [`PlainSgd`] on the same batches; returns the number of parameters whose
/// bits differ afterwards.
pub fn baseline_oracle_mismatches(seed: u64, steps: usize) -> usize {
    use stmn_core::admm::{AdmmConfig, BatchSampler, Trainer};
    use stmn_core::rng::SeedStreams;

    let data = blobs(3, 12, 6, 0.8, seed);
    let params = net(&[6, 10, 5], 3, Activation::Relu, seed.wrapping_add(1));
    let config = AdmmConfig {
        mode: "baseline".into(),
        alpha: 0.05,
        lambda_reg: 0.01,
        batch_size: 9,
        max_iter: steps,
        tol: f64::MIN_POSITIVE,
        ..AdmmConfig::default()
    };
    let mut trainer = Trainer::new(params.clone(), &data, None, &config, seed).unwrap();
    trainer.run().unwrap();
    assert_eq!(trainer.history().len(), steps);

    let mut oracle = PlainSgd::from_params(&params);
    let mut sampler = BatchSampler::new(&data.labels, config.batch_size, SeedStreams::new(seed)).unwrap();
    for _ in 0..steps {
        let ids = sampler.next_ids();
        let x: Vec<Vec<f64>> = ids.iter().map(|&i| data.clips.row(i).to_vec()).collect();
        let y: Vec<usize> = ids.iter().map(|&i| data.labels[i]).collect();
        oracle.step(&x, &y, config.alpha, config.lambda_reg);
    }
    let ours = param_bits(trainer.params());
    let theirs = oracle.bits();
    assert_eq!(ours.len(), theirs.len());
    ours.iter().zip(&theirs).filter(|(a, b)| a != b).count()
}
