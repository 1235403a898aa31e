use rand::Rng as _;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::model::{affine, softmax_in_place, ModelParams};
use crate::rng::Rng;

/// A full-parameter gradient with the same layout as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Gradients {
            weights: params.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: params.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.weights.iter().chain(&self.biases).map(Vec::as_slice)
    }

    fn slices_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.weights.iter_mut().chain(self.biases.iter_mut())
    }

    pub fn fill_zero(&mut self) {
        for s in self.slices_mut() {
            s.fill(0.0);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// `self += factor * other`
    pub fn add_scaled(&mut self, other: &Gradients, factor: f64) {
        for (a, b) in self.slices_mut().zip(other.slices()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += factor * y;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        self.slices().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Gradients) -> f64 {
        self.slices().flatten().zip(other.slices().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Scales by `min(1, max_norm / ‖g‖)`; returns the norm before clipping.
    pub fn clip_to_norm(&mut self, max_norm: f64) -> f64 {
        let n = self.norm();
        if n > max_norm {
            self.scale(max_norm / n);
        }
        n
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.slices().flatten()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.slices_mut().flat_map(|v| v.iter_mut())
    }
}

/// Forward pass that keeps what backpropagation needs.
#[derive(Debug, Default)]
pub(crate) struct Tape {
    /// Input of each layer after dropout.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each layer; the last entry holds the logits.
    pre: Vec<Vec<f64>>,
    /// Scaled dropout mask applied to `inputs[l]`, if any.
    masks: Vec<Option<Vec<f64>>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Tape {
    pub(crate) fn record(params: &ModelParams, x: &[f64], rng: Option<&mut Rng>) -> Self {
        let mut t = Tape::default();
        t.run(params, x, rng);
        t
    }

    /// Records a forward pass. Dropout is sampled only when `rng` is given.
    pub(crate) fn run(&mut self, params: &ModelParams, x: &[f64], mut rng: Option<&mut Rng>) {
        let n_layers = params.num_layers();
        let sizes = params.layer_sizes();
        self.inputs.resize_with(n_layers, Vec::new);
        self.pre.resize_with(n_layers, Vec::new);
        self.masks.resize_with(n_layers, || None);
        for l in 0..n_layers {
            let mut input = std::mem::take(&mut self.inputs[l]);
            input.clear();
            if l == 0 {
                input.extend_from_slice(x);
            } else {
                let act = params.activation();
                input.extend(self.pre[l - 1].iter().map(|&z| act.apply(z)));
            }
            let rate = params.dropout_rates()[l];
            self.masks[l] = match rng.as_deref_mut() {
                Some(rng) if rate > 0.0 => {
                    let keep_scale = if rate < 1.0 { 1.0 / (1.0 - rate) } else { 0.0 };
                    let mask: Vec<f64> = (0..input.len()).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep_scale }).collect();
                    for (v, m) in input.iter_mut().zip(&mask) {
                        *v *= m;
                    }
                    Some(mask)
                }
                _ => None,
            };
            let pre = &mut self.pre[l];
            pre.clear();
            pre.resize(sizes[l + 1], 0.0);
            affine(&params.weights[l], &params.biases[l], &input, sizes[l], pre);
            self.inputs[l] = input;
        }
    }

    pub(crate) fn logits(&self) -> &[f64] {
        self.pre.last().expect("recorded tape")
    }

    /// Accumulates `scale * dL/dθ` into `grads`, given `dL/dlogits`.
    pub(crate) fn backward(&mut self, params: &ModelParams, dlogits: &[f64], scale: f64, grads: &mut Gradients) {
        let sizes = params.layer_sizes();
        self.delta.clear();
        self.delta.extend(dlogits.iter().map(|d| d * scale));
        for l in (0..params.num_layers()).rev() {
            let n_in = sizes[l];
            let input = &self.inputs[l];
            let gw = &mut grads.weights[l];
            for (row, &d) in gw.chunks_exact_mut(n_in).zip(&self.delta) {
                if d != 0.0 {
                    for (g, a) in row.iter_mut().zip(input) {
                        *g += d * a;
                    }
                }
            }
            for (g, d) in grads.biases[l].iter_mut().zip(&self.delta) {
                *g += d;
            }
            if l == 0 {
                break;
            }
            self.delta_prev.clear();
            self.delta_prev.resize(n_in, 0.0);
            for (row, &d) in params.weights[l].chunks_exact(n_in).zip(&self.delta) {
                if d != 0.0 {
                    for (p, w) in self.delta_prev.iter_mut().zip(row) {
                        *p += d * w;
                    }
                }
            }
            let act = params.activation();
            for (j, p) in self.delta_prev.iter_mut().enumerate() {
                *p *= act.derivative(self.pre[l - 1][j]);
                if let Some(mask) = &self.masks[l] {
                    *p *= mask[j];
                }
            }
            std::mem::swap(&mut self.delta, &mut self.delta_prev);
        }
    }
}

/// Cross-entropy of `logits` against `label`; writes `softmax - onehot` into `dlogits`.
pub(crate) fn cross_entropy_grad(logits: &[f64], label: usize, dlogits: &mut Vec<f64>) -> f64 {
    dlogits.clear();
    dlogits.extend_from_slice(logits);
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    softmax_in_place(dlogits);
    dlogits[label] -= 1.0;
    lse - logits[label]
}

pub(crate) fn check_compatible(params: &ModelParams, data: &Dataset) -> Result<()> {
    use crate::nn::Predictor;
    if data.dim() != params.input_dim() {
        return Err(Error::shape(format!("data has {} features, model expects {}", data.dim(), params.input_dim())));
    }
    if data.num_classes() > params.num_classes() {
        return Err(Error::data(format!(
            "labels range over {} classes but the model has {} outputs",
            data.num_classes(),
            params.num_classes()
        )));
    }
    Ok(())
}

/// Mean cross-entropy gradient over `indices` (dropout off). Returns `(mean loss, gradient)`.
pub fn minibatch_gradient(params: &ModelParams, data: &Dataset, indices: &[usize]) -> Result<(f64, Gradients)> {
    check_compatible(params, data)?;
    if indices.is_empty() {
        return Err(Error::data("empty batch"));
    }
    let mut grads = Gradients::zeros_like(params);
    let mut tape = Tape::default();
    let mut dlogits = Vec::new();
    let scale = 1.0 / indices.len() as f64;
    let mut loss = 0.0;
    for &i in indices {
        tape.run(params, data.row(i), None);
        loss += cross_entropy_grad(tape.logits(), data.label(i), &mut dlogits);
        tape.backward(params, &dlogits, scale, &mut grads);
    }
    Ok((loss * scale, grads))
}

/// One cross-entropy gradient per example of `indices`, in order (dropout off).
pub fn per_example_gradients(params: &ModelParams, data: &Dataset, indices: &[usize]) -> Result<Vec<Gradients>> {
    check_compatible(params, data)?;
    if indices.is_empty() {
        return Err(Error::data("empty batch"));
    }
    let mut tape = Tape::default();
    let mut dlogits = Vec::new();
    Ok(indices
        .iter()
        .map(|&i| {
            let mut g = Gradients::zeros_like(params);
            tape.run(params, data.row(i), None);
            cross_entropy_grad(tape.logits(), data.label(i), &mut dlogits);
            tape.backward(params, &dlogits, 1.0, &mut g);
            g
        })
        .collect())
}

/// Mean cross-entropy loss over `indices` (dropout off).
pub fn mean_loss(params: &ModelParams, data: &Dataset, indices: &[usize]) -> Result<f64> {
    check_compatible(params, data)?;
    if indices.is_empty() {
        return Err(Error::data("empty index set"));
    }
    let mut scratch = crate::nn::model::Scratch::default();
    let mut total = 0.0;
    for &i in indices {
        params.logits_into(data.row(i), &mut scratch);
        let z = &scratch.logits;
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - z[data.label(i)];
    }
    Ok(total / indices.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_blobs;
    use crate::nn::{init_model, Activation};

    /// Central finite differences of the mean loss, one coordinate at a time.
    fn numeric_gradient(params: &ModelParams, data: &Dataset, idx: &[usize], h: f64) -> Gradients {
        let mut g = Gradients::zeros_like(params);
        let mut p = params.clone();
        for l in 0..params.num_layers() {
            for k in 0..params.weights(l).len() {
                let orig = p.weights[l][k];
                p.weights[l][k] = orig + h;
                let up = mean_loss(&p, data, idx).unwrap();
                p.weights[l][k] = orig - h;
                let down = mean_loss(&p, data, idx).unwrap();
                p.weights[l][k] = orig;
                g.weights[l][k] = (up - down) / (2.0 * h);
            }
            for k in 0..params.biases(l).len() {
                let orig = p.biases[l][k];
                p.biases[l][k] = orig + h;
                let up = mean_loss(&p, data, idx).unwrap();
                p.biases[l][k] = orig - h;
                let down = mean_loss(&p, data, idx).unwrap();
                p.biases[l][k] = orig;
                g.biases[l][k] = (up - down) / (2.0 * h);
            }
        }
        g
    }

    #[test]
    fn analytic_matches_finite_differences() {
        let data = generate_blobs(3, 4, 4, 1.0, 5).unwrap();
        for (seed, act) in [(1, Activation::Tanh), (2, Activation::Relu)] {
            let params = init_model(&[4, 6, 5, 3], act, seed).unwrap();
            let idx = [0, 3, 5, 8, 11];
            let (_, analytic) = minibatch_gradient(&params, &data, &idx).unwrap();
            let numeric = numeric_gradient(&params, &data, &idx, 1e-5);
            let rel = analytic.max_abs_diff(&numeric) / numeric.norm().max(1e-12);
            assert!(rel < 1e-4, "relative error {rel}");
        }
    }

    #[test]
    fn mean_of_per_example_is_minibatch() {
        let data = generate_blobs(3, 4, 10, 1.0, 5).unwrap();
        let params = init_model(&[4, 8, 3], Activation::Relu, 9).unwrap();
        let idx = [1, 4, 7, 12, 15, 20, 22, 29];
        let per = per_example_gradients(&params, &data, &idx).unwrap();
        let mut mean = Gradients::zeros_like(&params);
        for g in &per {
            mean.add_scaled(g, 1.0 / idx.len() as f64);
        }
        let (_, batch) = minibatch_gradient(&params, &data, &idx).unwrap();
        assert!(mean.max_abs_diff(&batch) < 1e-9);
    }

    #[test]
    fn single_example_batch_is_exact() {
        let data = generate_blobs(2, 3, 3, 1.0, 5).unwrap();
        let params = init_model(&[3, 4, 2], Activation::Tanh, 2).unwrap();
        let per = per_example_gradients(&params, &data, &[2]).unwrap();
        let (_, batch) = minibatch_gradient(&params, &data, &[2]).unwrap();
        assert_eq!(per[0], batch);
        let dup = per_example_gradients(&params, &data, &[2, 2]).unwrap();
        assert_eq!(dup[0], dup[1]);
    }

    #[test]
    fn clipping_scales_to_norm() {
        let params = init_model(&[3, 4, 2], Activation::Tanh, 2).unwrap();
        let mut g = Gradients::zeros_like(&params);
        g.weights[0][0] = 6.0;
        g.biases[1][1] = 8.0;
        assert_eq!(g.clip_to_norm(1.0), 10.0);
        assert!((g.norm() - 1.0).abs() < 1e-15);
        let mut small = Gradients::zeros_like(&params);
        small.weights[0][1] = 0.3;
        let before = small.clone();
        small.clip_to_norm(1.0);
        assert_eq!(small, before);
    }

    #[test]
    fn empty_batch_is_an_error() {
        let data = generate_blobs(2, 3, 3, 1.0, 5).unwrap();
        let params = init_model(&[3, 2], Activation::Tanh, 2).unwrap();
        assert!(per_example_gradients(&params, &data, &[]).is_err());
        let wrong = init_model(&[4, 2], Activation::Tanh, 2).unwrap();
        assert!(matches!(minibatch_gradient(&wrong, &data, &[0]), Err(Error::Shape(_))));
    }
}
