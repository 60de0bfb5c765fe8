//! Minimal fully-connected networks in plain `f64`.
//!
//! Everything downstream (the trigger augmentor and both victim detectors)
//! is a small MLP trained with vanilla SGD, so one hand-rolled implementation
//! with ReLU hidden layers, a sigmoid/BCE or softmax/CE head, and exact
//! analytic gradients covers all of them. No autodiff, no BLAS: the models
//! are a few hundred KB and train in seconds, and keeping the arithmetic
//! explicit makes the gradient checks in the tests meaningful.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Output head: scalar sigmoid with binary cross-entropy, or a softmax with
/// cross-entropy over class logits. Both have the convenient property that
/// the gradient at the logits is `prediction - target`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    SigmoidBce,
    SoftmaxCe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    /// Layer widths, input first. `[512, 32, 2]` is one hidden layer of 32.
    pub sizes: Vec<usize>,
    /// Row-major weight matrices, one per non-input layer: `weights[l]`
    /// holds `sizes[l + 1] * sizes[l]` entries, output index major.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub head: Head,
}

/// All per-layer values from one forward pass, kept for backprop and for
/// reading hidden activations out as features.
pub struct Forward {
    /// `acts[0]` is the input; `acts[l]` for hidden layers is post-ReLU;
    /// the last entry is the head output (probabilities).
    pub acts: Vec<Vec<f64>>,
    /// Pre-activation values for each non-input layer.
    pub zs: Vec<Vec<f64>>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn softmax(zs: &[f64]) -> Vec<f64> {
    let m = zs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = zs.iter().map(|z| (z - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Clamped log so a saturated probability yields a large finite loss
/// instead of infinity. NaN passes through (`clamp` propagates it), which is
/// what lets [`train_sgd`] notice exploded weights.
fn ln_clamped(p: f64) -> f64 {
    p.clamp(1e-12, 1.0).ln()
}

impl Mlp {
    /// He-normal initialization (std `sqrt(2 / fan_in)`) from the caller's
    /// RNG stream. The scale matters here: the corpus labeling rule has no
    /// linear component, so hidden units must break symmetry on their own,
    /// and fan-average (Xavier) weights start too small for that to happen
    /// within the short fixed training budgets used downstream.
    pub fn new(sizes: &[usize], head: Head, rng: &mut ChaCha8Rng) -> Mlp {
        assert!(sizes.len() >= 2, "need at least input and output layers");
        if head == Head::SigmoidBce {
            assert_eq!(sizes[sizes.len() - 1], 1, "sigmoid head is scalar");
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..sizes.len() - 1 {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let std = (2.0 / fan_in as f64).sqrt();
            weights.push(
                (0..fan_in * fan_out)
                    .map(|_| std * rng.sample::<f64, _>(rand_distr::StandardNormal))
                    .collect(),
            );
            biases.push(vec![0.0; fan_out]);
        }
        Mlp { sizes: sizes.to_vec(), weights, biases, head }
    }

    pub fn n_in(&self) -> usize {
        self.sizes[0]
    }

    pub fn n_out(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn forward_full(&self, x: &[f64]) -> Forward {
        assert_eq!(x.len(), self.n_in(), "input width mismatch");
        let mut acts = vec![x.to_vec()];
        let mut zs = Vec::new();
        let last = self.sizes.len() - 2;
        for l in 0..self.sizes.len() - 1 {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let a_prev = &acts[l];
            let mut z = self.biases[l].clone();
            for o in 0..n_out {
                let row = &self.weights[l][o * n_in..(o + 1) * n_in];
                z[o] += row.iter().zip(a_prev).map(|(w, a)| w * a).sum::<f64>();
            }
            let a = if l == last {
                match self.head {
                    Head::SigmoidBce => vec![sigmoid(z[0])],
                    Head::SoftmaxCe => softmax(&z),
                }
            } else {
                z.iter().map(|v| v.max(0.0)).collect()
            };
            zs.push(z);
            acts.push(a);
        }
        Forward { acts, zs }
    }

    /// Head output only: class probabilities (softmax) or `[p]` (sigmoid).
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_full(x).acts.last().unwrap().clone()
    }

    /// Post-ReLU activations of the last hidden layer.
    pub fn penultimate(&self, x: &[f64]) -> Vec<f64> {
        let f = self.forward_full(x);
        f.acts[f.acts.len() - 2].clone()
    }

    /// Loss for one example; `y` is the class index (0/1 for sigmoid).
    pub fn loss(&self, x: &[f64], y: usize) -> f64 {
        let p = self.forward(x);
        match self.head {
            Head::SigmoidBce => {
                let t = y as f64;
                -(t * ln_clamped(p[0]) + (1.0 - t) * ln_clamped(1.0 - p[0]))
            }
            Head::SoftmaxCe => -ln_clamped(p[y]),
        }
    }

    /// Flatten all parameters, weights before biases per layer.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in 0..self.weights.len() {
            out.extend_from_slice(&self.weights[l]);
            out.extend_from_slice(&self.biases[l]);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        let mut i = 0;
        for l in 0..self.weights.len() {
            let nw = self.weights[l].len();
            self.weights[l].copy_from_slice(&flat[i..i + nw]);
            i += nw;
            let nb = self.biases[l].len();
            self.biases[l].copy_from_slice(&flat[i..i + nb]);
            i += nb;
        }
        assert_eq!(i, flat.len(), "parameter count mismatch");
    }
}

/// Gradient of the mean loss over a batch, flattened like [`Mlp::params`].
/// Returns `(mean_loss, grad)`.
pub fn batch_gradient(model: &Mlp, xs: &[&[f64]], ys: &[usize]) -> (f64, Vec<f64>) {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mut gw: Vec<Vec<f64>> = model.weights.iter().map(|w| vec![0.0; w.len()]).collect();
    let mut gb: Vec<Vec<f64>> = model.biases.iter().map(|b| vec![0.0; b.len()]).collect();
    let mut loss = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let f = model.forward_full(x);
        let p = f.acts.last().unwrap();
        loss += match model.head {
            Head::SigmoidBce => {
                let t = y as f64;
                -(t * ln_clamped(p[0]) + (1.0 - t) * ln_clamped(1.0 - p[0]))
            }
            Head::SoftmaxCe => -ln_clamped(p[y]),
        };
        // Head delta at the output logits is prediction minus target for
        // both heads.
        let mut delta: Vec<f64> = match model.head {
            Head::SigmoidBce => vec![p[0] - y as f64],
            Head::SoftmaxCe => {
                let mut d = p.clone();
                d[y] -= 1.0;
                d
            }
        };
        for l in (0..model.weights.len()).rev() {
            let (n_in, n_out) = (model.sizes[l], model.sizes[l + 1]);
            let a_prev = &f.acts[l];
            for o in 0..n_out {
                gb[l][o] += delta[o];
                let row = &mut gw[l][o * n_in..(o + 1) * n_in];
                for i in 0..n_in {
                    row[i] += delta[o] * a_prev[i];
                }
            }
            if l > 0 {
                let mut prev = vec![0.0; n_in];
                for o in 0..n_out {
                    let row = &model.weights[l][o * n_in..(o + 1) * n_in];
                    for i in 0..n_in {
                        prev[i] += row[i] * delta[o];
                    }
                }
                // ReLU gate from the stored pre-activations.
                for i in 0..n_in {
                    if f.zs[l - 1][i] <= 0.0 {
                        prev[i] = 0.0;
                    }
                }
                delta = prev;
            }
        }
    }
    let mut flat = Vec::new();
    for l in 0..gw.len() {
        flat.extend(gw[l].iter().map(|g| g / n));
        flat.extend(gb[l].iter().map(|g| g / n));
    }
    (loss / n, flat)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
}

/// Plain mini-batch SGD with a fresh shuffle each epoch. Returns the mean
/// loss per epoch; a non-finite epoch loss aborts (exploded weights would
/// otherwise silently poison every later measurement).
pub fn train_sgd(
    model: &mut Mlp,
    xs: &[Vec<f64>],
    ys: &[usize],
    cfg: &SgdConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    if xs.is_empty() {
        return Err(Error::EmptySet("training set"));
    }
    assert_eq!(xs.len(), ys.len());
    assert!(cfg.batch > 0 && cfg.lr > 0.0);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        let mut batches = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let bx: Vec<&[f64]> = chunk.iter().map(|&i| xs[i].as_slice()).collect();
            let by: Vec<usize> = chunk.iter().map(|&i| ys[i]).collect();
            let (loss, grad) = batch_gradient(model, &bx, &by);
            epoch_loss += loss;
            batches += 1.0;
            let mut params = model.params();
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= cfg.lr * g;
            }
            model.set_params(&params);
        }
        let mean = epoch_loss / batches;
        if !mean.is_finite() {
            return Err(Error::NonFiniteLoss(epoch));
        }
        losses.push(mean);
    }
    Ok(losses)
}

/// Index of the most probable class.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > probs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    fn toy_batch(rng: &mut ChaCha8Rng, n: usize, dim: usize, classes: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
        let xs = (0..n)
            .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let ys = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        (xs, ys)
    }

    /// Compare the analytic batch gradient against central differences.
    fn check_gradients(head: Head, sizes: &[usize], classes: usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut model = Mlp::new(sizes, head, &mut rng);
        let (xs, ys) = toy_batch(&mut rng, 5, sizes[0], classes);
        let bx: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let (_, grad) = batch_gradient(&model, &bx, &ys);
        let params = model.params();
        let eps = 1e-6;
        for k in (0..params.len()).step_by(7) {
            let mut plus = params.clone();
            plus[k] += eps;
            model.set_params(&plus);
            let lp: f64 = xs.iter().zip(&ys).map(|(x, &y)| model.loss(x, y)).sum::<f64>() / 5.0;
            let mut minus = params.clone();
            minus[k] -= eps;
            model.set_params(&minus);
            let lm: f64 = xs.iter().zip(&ys).map(|(x, &y)| model.loss(x, y)).sum::<f64>() / 5.0;
            let numeric = (lp - lm) / (2.0 * eps);
            let analytic = grad[k];
            let denom = numeric.abs().max(analytic.abs()).max(1e-8);
            assert!(
                (numeric - analytic).abs() / denom < 1e-4,
                "param {k}: analytic {analytic} vs numeric {numeric}"
            );
        }
    }

    #[test]
    fn gradients_match_central_differences_sigmoid() {
        check_gradients(Head::SigmoidBce, &[3, 5, 1], 2);
    }

    #[test]
    fn gradients_match_central_differences_softmax() {
        check_gradients(Head::SoftmaxCe, &[4, 6, 3], 3);
    }

    #[test]
    fn heads_produce_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let soft = Mlp::new(&[4, 8, 3], Head::SoftmaxCe, &mut rng);
        let p = soft.forward(&[0.3, -1.0, 0.5, 2.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        let sig = Mlp::new(&[4, 8, 1], Head::SigmoidBce, &mut rng);
        let p = sig.forward(&[0.3, -1.0, 0.5, 2.0]);
        assert!(p.len() == 1 && (0.0..=1.0).contains(&p[0]));
    }

    #[test]
    fn learns_xor() {
        let xs: Vec<Vec<f64>> = vec![
            vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0],
        ];
        let ys = vec![0usize, 1, 1, 0];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut model = Mlp::new(&[2, 8, 2], Head::SoftmaxCe, &mut rng);
        let cfg = SgdConfig { lr: 0.5, epochs: 500, batch: 4 };
        let losses = train_sgd(&mut model, &xs, &ys, &cfg, &mut rng).unwrap();
        assert!(losses.last().unwrap() < &0.05, "final loss {}", losses.last().unwrap());
        for (x, &y) in xs.iter().zip(&ys) {
            assert_eq!(argmax(&model.forward(x)), y);
        }
    }

    #[test]
    fn training_is_deterministic_in_the_seed() {
        let mut rng_data = ChaCha8Rng::seed_from_u64(11);
        let (xs, ys) = toy_batch(&mut rng_data, 32, 6, 2);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let mut m = Mlp::new(&[6, 10, 2], Head::SoftmaxCe, &mut rng);
            train_sgd(&mut m, &xs, &ys, &SgdConfig { lr: 0.1, epochs: 5, batch: 8 }, &mut rng)
                .unwrap();
            m.params()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn exploded_weights_abort_with_nonfinite_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut model = Mlp::new(&[2, 4, 2], Head::SoftmaxCe, &mut rng);
        let huge: Vec<f64> = model.params().iter().map(|_| 1e308).collect();
        model.set_params(&huge);
        let xs = vec![vec![1.0, 1.0]];
        let ys = vec![0usize];
        let r = train_sgd(&mut model, &xs, &ys, &SgdConfig { lr: 0.1, epochs: 1, batch: 1 }, &mut rng);
        assert!(matches!(r, Err(Error::NonFiniteLoss(0))));
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut model = Mlp::new(&[2, 4, 2], Head::SoftmaxCe, &mut rng);
        let r = train_sgd(&mut model, &[], &[], &SgdConfig { lr: 0.1, epochs: 1, batch: 1 }, &mut rng);
        assert!(matches!(r, Err(Error::EmptySet(_))));
    }

    #[test]
    fn params_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = Mlp::new(&[3, 4, 2], Head::SoftmaxCe, &mut rng);
        let mut copy = model.clone();
        let p = model.params();
        assert_eq!(p.len(), 3 * 4 + 4 + 4 * 2 + 2);
        copy.set_params(&p);
        assert_eq!(copy, model);
    }

    #[test]
    fn penultimate_is_post_relu() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = Mlp::new(&[3, 6, 2], Head::SoftmaxCe, &mut rng);
        let h = model.penultimate(&[1.0, -2.0, 0.5]);
        assert_eq!(h.len(), 6);
        assert!(h.iter().all(|v| *v >= 0.0));
    }
}
