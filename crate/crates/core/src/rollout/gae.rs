/// Generalized advantage estimation over one environment's trajectory.
///
/// `bootstrap` is the value of the state after the last transition; it is
/// ignored when the last transition is terminal.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert!(values.len() == n && dones.len() == n, "GAE inputs must have equal length");
    let mut advantages = vec![0.0; n];
    let mut next_value = bootstrap;
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        advantages[t] = next_adv;
        next_value = values[t];
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    (advantages, returns)
}

/// Shifts and scales `values[i]` for the selected indices to zero mean and unit variance.
pub fn normalize_subset(values: &mut [f64], indices: &[usize]) {
    if indices.len() < 2 {
        return;
    }
    let n = indices.len() as f64;
    let mean = indices.iter().map(|&i| values[i]).sum::<f64>() / n;
    let var = indices.iter().map(|&i| (values[i] - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let std = var.sqrt() + 1e-8;
    for &i in indices {
        values[i] = (values[i] - mean) / std;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_step_hand_recursion() {
        let (a, r) = compute_gae(&[1.0, 1.0], &[0.0, 0.0], &[false, false], 0.0, 1.0, 1.0);
        assert_eq!(a, vec![2.0, 1.0]);
        assert_eq!(r, vec![2.0, 1.0]);
    }

    #[test]
    fn zeros_stay_zero() {
        let (a, r) = compute_gae(&[0.0; 5], &[0.0; 5], &[false; 5], 0.0, 0.99, 0.95);
        assert!(a.iter().chain(&r).all(|&x| x == 0.0));
    }

    #[test]
    fn lambda_zero_is_td_error() {
        let rewards = [0.3, -1.0, 2.0];
        let values = [0.5, 0.1, -0.2];
        let (a, _) = compute_gae(&rewards, &values, &[false, true, false], 0.7, 0.9, 0.0);
        assert_eq!(a[0], 0.3 + 0.9 * 0.1 - 0.5);
        assert_eq!(a[1], -1.0 - 0.1);
        assert_eq!(a[2], 2.0 + 0.9 * 0.7 + 0.2);
    }

    #[test]
    fn subset_normalization() {
        let mut v = vec![1.0, 100.0, 3.0, -7.0];
        normalize_subset(&mut v, &[0, 2]);
        assert_eq!(v[1], 100.0);
        assert!((v[0] + v[2]).abs() < 1e-12);
        assert!((v[0] * v[0] + v[2] * v[2] - 1.0).abs() < 1e-6);
    }
}
