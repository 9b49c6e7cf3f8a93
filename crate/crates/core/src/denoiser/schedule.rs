use serde::{Deserialize, Serialize};

use crate::denoiser::Latent;
use crate::error::{FrapError, Result};

/// Cumulative signal levels `alpha_bar[t]` for `t = 0..=T`, strictly
/// decreasing in `t`; index 0 is the cleanest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    alpha_bar: Vec<f64>,
}

pub const DEFAULT_STEPS: usize = 50;
const CLEANEST: f64 = 0.9991;
const NOISIEST: f64 = 0.02;

impl Default for Schedule {
    fn default() -> Self {
        Self::linear(DEFAULT_STEPS, CLEANEST, NOISIEST).expect("default schedule is valid")
    }
}

impl Schedule {
    /// Linear ramp from `cleanest` at `t = 0` to `noisiest` at `t = steps`.
    pub fn linear(steps: usize, cleanest: f64, noisiest: f64) -> Result<Self> {
        if steps == 0 {
            return Err(FrapError::config("schedule needs at least one step"));
        }
        let alpha_bar = (0..=steps)
            .map(|t| cleanest + (noisiest - cleanest) * t as f64 / steps as f64)
            .collect();
        Self::from_alpha_bar(alpha_bar)
    }

    pub fn from_alpha_bar(alpha_bar: Vec<f64>) -> Result<Self> {
        if alpha_bar.len() < 2 {
            return Err(FrapError::config("schedule needs at least two levels"));
        }
        if alpha_bar.iter().any(|&a| !(a > 0.0 && a <= 1.0)) {
            return Err(FrapError::config("alpha_bar values must lie in (0, 1]"));
        }
        if alpha_bar.windows(2).any(|w| w[1] >= w[0]) {
            return Err(FrapError::config("alpha_bar must strictly decrease with t"));
        }
        Ok(Self { alpha_bar })
    }

    /// Number of denoising steps `T`.
    pub fn steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    /// Deterministic update from step `t` to `t - 1`.
    pub fn step(&self, z: &Latent, t: usize, noise: &Latent) -> Result<Latent> {
        if t == 0 || t > self.steps() {
            return Err(FrapError::StepOutOfRange { t, steps: self.steps() });
        }
        z.require_same_shape(noise)?;
        let values = ddim_update(z.values(), noise.values(), self.alpha_bar[t], self.alpha_bar[t - 1]);
        Ok(z.with_values(values))
    }
}

/// `x0 = (z - sqrt(1 - a) * eps) / sqrt(a)`, `z' = sqrt(a') * x0 + sqrt(1 - a') * eps`,
/// regrouped as `z' = sqrt(a'/a) * z + (sqrt(1 - a') - sqrt(1 - a) * sqrt(a'/a)) * eps`
/// so equal levels leave `z` untouched bit for bit.
pub fn ddim_update(z: &[f64], eps: &[f64], alpha_bar: f64, alpha_bar_prev: f64) -> Vec<f64> {
    let ratio = (alpha_bar_prev / alpha_bar).sqrt();
    let noise_coef = (1.0 - alpha_bar_prev).sqrt() - (1.0 - alpha_bar).sqrt() * ratio;
    z.iter()
        .zip(eps)
        .map(|(&zi, &ei)| ratio * zi + noise_coef * ei)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule_shape() {
        let s = Schedule::default();
        assert_eq!(s.steps(), 50);
        assert_eq!(s.alpha_bar(0), 0.9991);
        assert!((s.alpha_bar(50) - 0.02).abs() < 1e-15);
    }

    #[test]
    fn equal_levels_are_identity() {
        let z = [0.3, -1.2, 4.0];
        let e = [1.0, 2.0, -0.5];
        assert_eq!(ddim_update(&z, &e, 0.37, 0.37), z.to_vec());
    }

    #[test]
    fn zero_noise_rescales() {
        let z = [0.3, -1.2, 4.0];
        let out = ddim_update(&z, &[0.0; 3], 0.2, 0.5);
        for (o, zi) in out.iter().zip(z) {
            assert_eq!(*o, (0.5f64 / 0.2).sqrt() * zi);
        }
    }

    #[test]
    fn recovers_clean_signal_path() {
        let (a, a_prev): (f64, f64) = (0.3, 0.55);
        let x = [0.7, -0.1, 1.9];
        let eps = [-0.4, 1.3, 0.05];
        let z: Vec<f64> = x
            .iter()
            .zip(&eps)
            .map(|(xi, ei)| a.sqrt() * xi + (1.0 - a).sqrt() * ei)
            .collect();
        let out = ddim_update(&z, &eps, a, a_prev);
        for i in 0..3 {
            let want = a_prev.sqrt() * x[i] + (1.0 - a_prev).sqrt() * eps[i];
            assert!((out[i] - want).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_levels_and_steps() {
        assert!(Schedule::from_alpha_bar(vec![0.9, 0.9]).is_err());
        assert!(Schedule::from_alpha_bar(vec![1.2, 0.5]).is_err());
        let s = Schedule::default();
        let z = Latent::zeros(2, 1);
        assert!(matches!(s.step(&z, 0, &z), Err(FrapError::StepOutOfRange { .. })));
        assert!(s.step(&z, 51, &z).is_err());
        assert!(s.step(&z, 50, &z).is_ok());
    }
}
