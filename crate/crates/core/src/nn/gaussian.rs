//! Diagonal Gaussian action distribution with a state-independent log-std.

use rand::Rng;
use rand_distr::StandardNormal;

pub const HALF_LOG_TWO_PI: f64 = 0.918_938_533_204_672_7;

#[derive(Clone, Copy, Debug)]
pub struct DiagGaussian<'a> {
    pub mean: &'a [f64],
    pub log_std: &'a [f64],
}

impl<'a> DiagGaussian<'a> {
    pub fn new(mean: &'a [f64], log_std: &'a [f64]) -> Self {
        debug_assert_eq!(mean.len(), log_std.len());
        Self { mean, log_std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.mean
            .iter()
            .zip(self.log_std)
            .map(|(&mu, &ls)| {
                let eps: f64 = rng.sample(StandardNormal);
                mu + ls.exp() * eps
            })
            .collect()
    }

    pub fn log_prob(&self, action: &[f64]) -> f64 {
        self.mean
            .iter()
            .zip(self.log_std)
            .zip(action)
            .map(|((&mu, &ls), &a)| {
                let z = (a - mu) * (-ls).exp();
                -0.5 * z * z - ls - HALF_LOG_TWO_PI
            })
            .sum()
    }

    pub fn entropy(&self) -> f64 {
        self.log_std.iter().map(|&ls| 0.5 + HALF_LOG_TWO_PI + ls).sum()
    }

    /// Analytic `KL(self || other)`.
    pub fn kl_to(&self, other: &DiagGaussian<'_>) -> f64 {
        self.mean
            .iter()
            .zip(self.log_std)
            .zip(other.mean.iter().zip(other.log_std))
            .map(|((&mp, &lp), (&mq, &lq))| {
                let var_p = (2.0 * lp).exp();
                let var_q = (2.0 * lq).exp();
                lq - lp + (var_p + (mp - mq).powi(2)) / (2.0 * var_q) - 0.5
            })
            .sum()
    }

    /// Gradients of `log_prob(action)` with respect to the mean and the log-std.
    pub fn log_prob_grads(&self, action: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut d_mean = Vec::with_capacity(self.dim());
        let mut d_log_std = Vec::with_capacity(self.dim());
        for ((&mu, &ls), &a) in self.mean.iter().zip(self.log_std).zip(action) {
            let inv_var = (-2.0 * ls).exp();
            let diff = a - mu;
            d_mean.push(diff * inv_var);
            d_log_std.push(diff * diff * inv_var - 1.0);
        }
        (d_mean, d_log_std)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn log_prob_at_mean_unit_std() {
        let d = DiagGaussian::new(&[0.3], &[0.0]);
        assert!((d.log_prob(&[0.3]) + 0.918_938_533_204_672_7).abs() < 1e-15);
    }

    #[test]
    fn entropy_two_dims_unit_std() {
        let d = DiagGaussian::new(&[0.0, 1.0], &[0.0, 0.0]);
        assert!((d.entropy() - 2.837_877_066_409_345).abs() < 1e-14);
    }

    #[test]
    fn self_kl_is_zero() {
        let d = DiagGaussian::new(&[0.1, -2.0], &[-0.5, 0.7]);
        assert!(d.kl_to(&d).abs() < 1e-15);
        let e = DiagGaussian::new(&[0.3, -2.0], &[-0.4, 0.7]);
        assert!(d.kl_to(&e) > 0.0);
    }

    #[test]
    fn log_prob_grads_match_finite_differences() {
        let mean = [0.2, -0.4];
        let log_std = [-0.3, 0.1];
        let a = [0.5, 0.9];
        let (dm, ds) = DiagGaussian::new(&mean, &log_std).log_prob_grads(&a);
        let h = 1e-6;
        for i in 0..2 {
            let (mut mp, mut mm) = (mean, mean);
            mp[i] += h;
            mm[i] -= h;
            let fd = (DiagGaussian::new(&mp, &log_std).log_prob(&a)
                - DiagGaussian::new(&mm, &log_std).log_prob(&a))
                / (2.0 * h);
            assert!((fd - dm[i]).abs() < 1e-8);
            let (mut sp, mut sm) = (log_std, log_std);
            sp[i] += h;
            sm[i] -= h;
            let fd = (DiagGaussian::new(&mean, &sp).log_prob(&a)
                - DiagGaussian::new(&mean, &sm).log_prob(&a))
                / (2.0 * h);
            assert!((fd - ds[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let d = DiagGaussian::new(&[0.0, 0.0], &[0.0, -1.0]);
        let mut r1 = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut r2 = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        assert_eq!(d.sample(&mut r1), d.sample(&mut r2));
    }
}
