//! Dense-network substrate: ELU MLPs with exact backward passes, an
//! L2-normalized output option for latent encoders, a diagonal Gaussian
//! policy head and Adam.

mod activation;
mod adam;
mod gaussian;
mod mlp;

pub use activation::{elu, elu_derivative, Activation};
pub use adam::Adam;
pub use gaussian::{DiagGaussian, HALF_LOG_TWO_PI};
pub use mlp::{dot, normalization_backward, normalize_in_place, BackwardFault, ForwardCache, Mlp, MlpSpec, NORM_EPSILON};

/// Global L2 norm of a gradient vector.
pub fn grad_norm(grads: &[f64]) -> f64 {
    grads.iter().map(|g| g * g).sum::<f64>().sqrt()
}

/// Rescales `grads` so that its global norm is at most `max_norm`; returns the pre-clip norm.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= scale);
    }
    norm
}
