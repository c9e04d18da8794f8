//! Scalar loss formulas shared by the update and the tests.

/// Importance ratio `exp(new - old)`.
pub fn ppo_ratio(new_log_prob: f64, old_log_prob: f64) -> f64 {
    (new_log_prob - old_log_prob).exp()
}

/// Per-row PPO-clip objective `min(r A, clip(r, 1-eps, 1+eps) A)` (to maximize).
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip_range: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip_range, 1.0 + clip_range);
    (ratio * advantage).min(clipped * advantage)
}

/// Derivative of [`clipped_surrogate`] with respect to the log-prob.
/// Zero where the clipped branch is selected.
pub fn clipped_surrogate_grad(ratio: f64, advantage: f64, clip_range: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip_range, 1.0 + clip_range);
    if ratio * advantage <= clipped * advantage {
        ratio * advantage
    } else {
        0.0
    }
}

/// Mean over rows of `(V - R)^2`.
pub fn value_loss(values: &[f64], returns: &[f64]) -> f64 {
    assert_eq!(values.len(), returns.len());
    if values.is_empty() {
        return 0.0;
    }
    values.iter().zip(returns).map(|(v, r)| (v - r).powi(2)).sum::<f64>() / values.len() as f64
}

/// `||z_s - z_t||^2` for one row.
pub fn reconstruction_error(student: &[f64], teacher: &[f64]) -> f64 {
    student.iter().zip(teacher).map(|(a, b)| (a - b).powi(2)).sum()
}

/// Mean over rows of the summed squared error; rows are `dim`-wide.
pub fn mean_row_squared_error(prediction: &[f64], target: &[f64], dim: usize) -> f64 {
    assert_eq!(prediction.len(), target.len());
    if prediction.is_empty() || dim == 0 {
        return 0.0;
    }
    let rows = prediction.len() / dim;
    prediction.iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / rows as f64
}

/// KL-adaptive step size: shrink by 1.5 above twice the target, grow by 1.5
/// below half of it, then clamp.
pub fn adaptive_lr(current_lr: f64, measured_kl: f64, desired_kl: f64, min_lr: f64, max_lr: f64) -> f64 {
    let lr = if measured_kl > 2.0 * desired_kl {
        current_lr / 1.5
    } else if measured_kl < desired_kl / 2.0 {
        current_lr * 1.5
    } else {
        current_lr
    };
    lr.clamp(min_lr, max_lr)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_values() {
        assert_eq!(ppo_ratio(-1.3, -1.3), 1.0);
        assert!((ppo_ratio(2f64.ln(), 0.0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clipped_surrogate(1.0, 1.0, 0.2), 1.0);
        assert!((clipped_surrogate(1.5, 1.0, 0.2) - 1.2).abs() < 1e-15);
        assert!((clipped_surrogate(0.5, -1.0, 0.2) + 0.8).abs() < 1e-15);
        assert_eq!(clipped_surrogate_grad(1.5, 1.0, 0.2), 0.0);
        assert_eq!(clipped_surrogate_grad(1.1, 1.0, 0.2), 1.1);
    }

    #[test]
    fn value_loss_examples() {
        assert_eq!(value_loss(&[0.3, 0.4], &[0.3, 0.4]), 0.0);
        assert_eq!(value_loss(&[0.0, 0.0], &[1.0, -1.0]), 1.0);
        assert_eq!(value_loss(&[0.0, 0.0, 0.0, 0.0], &[1.0, -1.0, 1.0, -1.0]), 1.0);
    }

    #[test]
    fn reconstruction_examples() {
        let z = [0.6, 0.8];
        assert_eq!(reconstruction_error(&z, &z), 0.0);
        assert!((reconstruction_error(&z, &[-0.6, -0.8]) - 4.0).abs() < 1e-15);
    }

    #[test]
    fn estimator_zero_prediction() {
        assert_eq!(mean_row_squared_error(&[0.0; 6], &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0], 3), 1.0);
    }

    #[test]
    fn adaptive_lr_examples() {
        assert_eq!(adaptive_lr(1e-3, 0.01, 0.01, 1e-5, 1e-2), 1e-3);
        assert!((adaptive_lr(1e-3, 0.03, 0.01, 1e-5, 1e-2) - 6.666_666_666_666_667e-4).abs() < 1e-18);
        assert_eq!(adaptive_lr(1e-2, 0.001, 0.01, 1e-5, 1e-2), 1e-2);
        assert_eq!(adaptive_lr(1e-5, 1.0, 0.01, 1e-5, 1e-2), 1e-5);
    }
}
