use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{minibatch_gradient, ModelParams};

/// Full-batch gradient ascent on the forget-set cross-entropy:
/// `θ ← θ + lr · ∇L(θ; forget)`, repeated `steps` times.
pub fn gradient_ascent_unlearn(params: &ModelParams, data: &Dataset, forget: &[usize], steps: usize, lr: f64) -> Result<ModelParams> {
    if forget.is_empty() {
        return Err(Error::data("gradient ascent needs a non-empty forget set"));
    }
    let mut p = params.clone();
    for _ in 0..steps {
        let (_, g) = minibatch_gradient(&p, data, forget)?;
        for (pl, gl) in p.weights.iter_mut().zip(&g.weights).chain(p.biases.iter_mut().zip(&g.biases)) {
            for (v, d) in pl.iter_mut().zip(gl) {
                *v += lr * d;
            }
        }
    }
    Ok(p)
}
