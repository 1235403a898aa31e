use std::io::{Read, Write};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Hidden-layer nonlinearity. The output layer is always linear followed by softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub(crate) fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z`.
    #[inline]
    pub(crate) fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }

    fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Tanh),
            other => Err(Error::data(format!("unknown activation code {other}"))),
        }
    }
}

/// Parameters of a dense feed-forward classifier.
///
/// Layer `l` maps `layer_sizes[l]` inputs to `layer_sizes[l + 1]` outputs with
/// a row-major `(out, in)` weight matrix. `dropout_rates[i]` applies to the
/// activations of layer `i` (index 0 is the input); the output entry must be 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    layer_sizes: Vec<usize>,
    activation: Activation,
    dropout_rates: Vec<f64>,
    pub(crate) weights: Vec<Vec<f64>>,
    pub(crate) biases: Vec<Vec<f64>>,
}

/// A probability vector over classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Posterior(Vec<f64>);

impl Posterior {
    /// Wraps a vector, checking nonnegativity and normalization (1e-9).
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::shape("empty posterior"));
        }
        if probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::data("posterior entries must be nonnegative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::data(format!("posterior sums to {total}")));
        }
        Ok(Posterior(probs))
    }

    pub(crate) fn from_raw(probs: Vec<f64>) -> Self {
        Posterior(probs)
    }

    pub fn uniform(classes: usize) -> Self {
        Posterior(vec![1.0 / classes as f64; classes])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Lowest index of the maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    out
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in v.iter_mut() {
        *x /= total;
    }
}

/// Anything that maps a feature vector to a class posterior.
pub trait Predictor {
    fn input_dim(&self) -> usize;
    fn num_classes(&self) -> usize;
    fn posterior(&self, x: &[f64]) -> Result<Posterior>;
}

/// Xavier-uniform initialization from a dedicated seeded stream.
///
/// Biases start at zero and dropout is disabled.
pub fn init_model(layer_sizes: &[usize], activation: Activation, seed: u64) -> Result<ModelParams> {
    if layer_sizes.len() < 2 {
        return Err(Error::config(format!("need at least input and output layer, got {layer_sizes:?}")));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::config(format!("layer sizes must be positive: {layer_sizes:?}")));
    }
    let mut rng = rng::seeded(seed, rng::stream::INIT);
    let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
    let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
    for pair in layer_sizes.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect();
        weights.push(w);
        biases.push(vec![0.0; fan_out]);
    }
    Ok(ModelParams { layer_sizes: layer_sizes.to_vec(), activation, dropout_rates: vec![0.0; layer_sizes.len()], weights, biases })
}

impl ModelParams {
    /// All-zero network (uniform posteriors everywhere).
    pub fn zeros(layer_sizes: &[usize], activation: Activation) -> Result<Self> {
        let mut p = init_model(layer_sizes, activation, 0)?;
        p.map_params(|_| 0.0);
        Ok(p)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn dropout_rates(&self) -> &[f64] {
        &self.dropout_rates
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        &self.weights[layer]
    }

    pub fn biases(&self, layer: usize) -> &[f64] {
        &self.biases[layer]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.weights[layer]
    }

    pub fn biases_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.biases[layer]
    }

    /// Total number of weight entries (biases excluded).
    pub fn num_weights(&self) -> usize {
        self.weights.iter().map(Vec::len).sum()
    }

    pub fn num_params(&self) -> usize {
        self.num_weights() + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Replaces the per-layer dropout rates.
    pub fn with_dropout(mut self, rates: &[f64]) -> Result<Self> {
        validate_dropout(&self.layer_sizes, rates)?;
        self.dropout_rates = rates.to_vec();
        Ok(self)
    }

    pub(crate) fn map_params(&mut self, mut f: impl FnMut(f64) -> f64) {
        for layer in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            for v in layer.iter_mut() {
                *v = f(*v);
            }
        }
    }

    /// Exact equality of every parameter bit pattern and of the metadata.
    pub fn bit_eq(&self, other: &ModelParams) -> bool {
        fn same(a: &[Vec<f64>], b: &[Vec<f64>]) -> bool {
            a.len() == b.len()
                && a.iter().zip(b).all(|(x, y)| x.len() == y.len() && x.iter().zip(y).all(|(u, v)| u.to_bits() == v.to_bits()))
        }
        self.layer_sizes == other.layer_sizes
            && self.activation == other.activation
            && self.dropout_rates.iter().map(|r| r.to_bits()).eq(other.dropout_rates.iter().map(|r| r.to_bits()))
            && same(&self.weights, &other.weights)
            && same(&self.biases, &other.biases)
    }

    pub(crate) fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.layer_sizes[0] {
            return Err(Error::shape(format!("input has {} features, model expects {}", x.len(), self.layer_sizes[0])));
        }
        Ok(())
    }

    /// Eval-mode forward pass into caller-provided scratch; returns logits in `scratch.logits`.
    pub(crate) fn logits_into(&self, x: &[f64], scratch: &mut Scratch) {
        scratch.a.clear();
        scratch.a.extend_from_slice(x);
        let last = self.weights.len() - 1;
        for l in 0..=last {
            let n_in = self.layer_sizes[l];
            let n_out = self.layer_sizes[l + 1];
            scratch.z.clear();
            scratch.z.resize(n_out, 0.0);
            affine(&self.weights[l], &self.biases[l], &scratch.a, n_in, &mut scratch.z);
            if l < last {
                scratch.a.clear();
                let act = self.activation;
                scratch.a.extend(scratch.z.iter().map(|&z| act.apply(z)));
            }
        }
        std::mem::swap(&mut scratch.logits, &mut scratch.z);
    }

    /// Writes the checkpoint: magic, version, activation, layer sizes,
    /// dropout rates, then weights and biases layer by layer, all little-endian.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&[self.activation.code()])?;
        w.write_all(&(self.layer_sizes.len() as u32).to_le_bytes())?;
        for &s in &self.layer_sizes {
            w.write_all(&(s as u64).to_le_bytes())?;
        }
        for &r in &self.dropout_rates {
            w.write_all(&r.to_le_bytes())?;
        }
        for (wl, bl) in self.weights.iter().zip(&self.biases) {
            for v in wl.iter().chain(bl) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::data("not a model checkpoint"));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::data(format!("unsupported checkpoint version {version}")));
        }
        let mut code = [0u8; 1];
        r.read_exact(&mut code)?;
        let activation = Activation::from_code(code[0])?;
        let n = read_u32(&mut r)? as usize;
        if !(2..=1024).contains(&n) {
            return Err(Error::data(format!("implausible layer count {n}")));
        }
        let mut layer_sizes = Vec::with_capacity(n);
        for _ in 0..n {
            layer_sizes.push(read_u64(&mut r)? as usize);
        }
        let mut dropout_rates = Vec::with_capacity(n);
        for _ in 0..n {
            dropout_rates.push(read_f64(&mut r)?);
        }
        let mut params = init_model(&layer_sizes, activation, 0)?.with_dropout(&dropout_rates)?;
        for l in 0..params.weights.len() {
            for v in params.weights[l].iter_mut() {
                *v = read_f64(&mut r)?;
            }
            for v in params.biases[l].iter_mut() {
                *v = read_f64(&mut r)?;
            }
        }
        Ok(params)
    }
}

impl Predictor for ModelParams {
    fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    fn num_classes(&self) -> usize {
        *self.layer_sizes.last().expect("validated layer sizes")
    }

    fn posterior(&self, x: &[f64]) -> Result<Posterior> {
        forward(self, x, false, None)
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"ULCK";
const CHECKPOINT_VERSION: u32 = 1;

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub(crate) fn validate_dropout(layer_sizes: &[usize], rates: &[f64]) -> Result<()> {
    if rates.len() != layer_sizes.len() {
        return Err(Error::config(format!("{} dropout rates for {} layers", rates.len(), layer_sizes.len())));
    }
    if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(Error::config(format!("dropout rates must lie in [0, 1]: {rates:?}")));
    }
    if *rates.last().expect("non-empty") != 0.0 {
        return Err(Error::config("dropout on the output layer is not supported"));
    }
    Ok(())
}

#[inline]
pub(crate) fn affine(w: &[f64], b: &[f64], a: &[f64], n_in: usize, out: &mut [f64]) {
    for (o, (row, bias)) in out.iter_mut().zip(w.chunks_exact(n_in).zip(b)) {
        let mut s = *bias;
        for (wi, ai) in row.iter().zip(a) {
            s += wi * ai;
        }
        *o = s;
    }
}

/// Reusable buffers for eval-mode forward passes.
#[derive(Debug, Default)]
pub(crate) struct Scratch {
    a: Vec<f64>,
    z: Vec<f64>,
    pub(crate) logits: Vec<f64>,
}

/// Pre-softmax outputs of the final layer (eval mode).
pub fn raw_logits(params: &ModelParams, x: &[f64]) -> Result<Vec<f64>> {
    params.check_input(x)?;
    let mut scratch = Scratch::default();
    params.logits_into(x, &mut scratch);
    Ok(scratch.logits)
}

/// Softmax posterior. With `train_mode` the configured dropout is sampled
/// from `rng` (inverted dropout); otherwise dropout is the identity.
pub fn forward(params: &ModelParams, x: &[f64], train_mode: bool, rng: Option<&mut Rng>) -> Result<Posterior> {
    params.check_input(x)?;
    let uses_dropout = train_mode && params.dropout_rates.iter().any(|&r| r > 0.0);
    if !uses_dropout {
        let mut logits = raw_logits(params, x)?;
        softmax_in_place(&mut logits);
        return Ok(Posterior(logits));
    }
    let rng = rng.ok_or_else(|| Error::config("train-mode dropout needs a random stream"))?;
    let tape = crate::nn::grad::Tape::record(params, x, Some(rng));
    Ok(Posterior(softmax(tape.logits())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic() {
        let a = init_model(&[4, 3], Activation::Relu, 7).unwrap();
        let b = init_model(&[4, 3], Activation::Relu, 7).unwrap();
        assert!(a.bit_eq(&b));
        let c = init_model(&[4, 3], Activation::Relu, 8).unwrap();
        assert!(!a.bit_eq(&c));
    }

    #[test]
    fn init_shapes_chain() {
        let p = init_model(&[4, 8, 3], Activation::Tanh, 1).unwrap();
        assert_eq!(p.weights(0).len(), 8 * 4);
        assert_eq!(p.biases(0).len(), 8);
        assert_eq!(p.weights(1).len(), 3 * 8);
        assert_eq!(p.biases(1).len(), 3);
        assert_eq!(p.num_params(), 32 + 8 + 24 + 3);
    }

    #[test]
    fn init_rejects_single_layer() {
        assert!(matches!(init_model(&[4], Activation::Relu, 0), Err(Error::Config(_))));
        assert!(matches!(init_model(&[], Activation::Relu, 0), Err(Error::Config(_))));
        assert!(matches!(init_model(&[4, 0, 2], Activation::Relu, 0), Err(Error::Config(_))));
    }

    #[test]
    fn zero_network_is_uniform() {
        let p = ModelParams::zeros(&[5, 7, 4], Activation::Relu).unwrap();
        let post = forward(&p, &[1.0, -2.0, 3.0, 0.5, 9.0], false, None).unwrap();
        for v in post.probs() {
            assert_eq!(*v, 0.25);
        }
        assert_eq!(raw_logits(&p, &[0.0; 5]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn closed_form_softmax() {
        let s = softmax(&[0.0, 3f64.ln()]);
        assert!((s[0] - 0.25).abs() < 1e-15);
        assert!((s[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let z = [0.3, -1.2, 2.5, 0.0];
        let shifted: Vec<f64> = z.iter().map(|v| v + 123.4).collect();
        for (a, b) in softmax(&z).iter().zip(softmax(&shifted)) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn forward_matches_softmax_of_logits() {
        let p = init_model(&[3, 6, 5, 4], Activation::Tanh, 3).unwrap();
        let x = [0.2, -0.7, 1.1];
        let post = forward(&p, &x, false, None).unwrap();
        let s = softmax(&raw_logits(&p, &x).unwrap());
        for (a, b) in post.probs().iter().zip(&s) {
            assert!((a - b).abs() < 1e-12);
        }
        Posterior::new(post.into_vec()).unwrap();
    }

    #[test]
    fn full_dropout_gives_uniform_output() {
        let mut p = init_model(&[3, 6, 4], Activation::Relu, 3).unwrap();
        // zero output biases so that dead hidden units imply zero logits
        p.biases_mut(1).fill(0.0);
        let p = p.with_dropout(&[0.0, 1.0, 0.0]).unwrap();
        let mut rng = rng::seeded(1, 0);
        let post = forward(&p, &[1.0, 2.0, 3.0], true, Some(&mut rng)).unwrap();
        for v in post.probs() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn eval_mode_ignores_dropout() {
        let p = init_model(&[3, 6, 4], Activation::Relu, 3).unwrap();
        let q = p.clone().with_dropout(&[0.0, 0.95, 0.0]).unwrap();
        let x = [0.5, 0.1, -0.3];
        assert_eq!(forward(&p, &x, false, None).unwrap(), forward(&q, &x, false, None).unwrap());
    }

    #[test]
    fn dropout_validation() {
        let p = init_model(&[3, 6, 4], Activation::Relu, 3).unwrap();
        assert!(p.clone().with_dropout(&[0.0, 1.5, 0.0]).is_err());
        assert!(p.clone().with_dropout(&[0.0, 0.5]).is_err());
        assert!(p.with_dropout(&[0.0, 0.5, 0.5]).is_err());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let p = init_model(&[3, 4], Activation::Relu, 0).unwrap();
        assert!(matches!(forward(&p, &[1.0], false, None), Err(Error::Shape(_))));
        assert!(matches!(raw_logits(&p, &[1.0; 4]), Err(Error::Shape(_))));
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.25, 0.25, 0.25, 0.25]), 0);
        assert_eq!(argmax(&[0.1, 0.45, 0.45]), 1);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let p = init_model(&[5, 9, 3], Activation::Tanh, 11).unwrap().with_dropout(&[0.1, 0.5, 0.0]).unwrap();
        let mut buf = Vec::new();
        p.write_checkpoint(&mut buf).unwrap();
        let q = ModelParams::read_checkpoint(buf.as_slice()).unwrap();
        assert!(p.bit_eq(&q));
        assert!(ModelParams::read_checkpoint(&b"nope"[..]).is_err());
    }
}
