use crate::error::{Error, Result};

use super::UMode;

/// Sharpness and interpolation schedule settings for binarized layers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BinarizeConfig {
    pub zeta_initial: f64,
    pub zeta_final: f64,
    /// Fraction of training after which zeta starts rising.
    pub zeta_ramp_start_fraction: f64,
    /// Fraction of training over which alpha rises from 0 to 1; 0 disables
    /// the interpolation (alpha is 1 throughout).
    pub t_alpha: f64,
    pub u_mode: UMode,
}

impl Default for BinarizeConfig {
    fn default() -> Self {
        BinarizeConfig {
            zeta_initial: 1.0,
            zeta_final: 12.0,
            zeta_ramp_start_fraction: 0.9,
            t_alpha: 0.9,
            u_mode: UMode::Identity,
        }
    }
}

impl BinarizeConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.zeta_initial,
            self.zeta_final,
            self.zeta_ramp_start_fraction,
            self.t_alpha,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("binarize config values must be finite"));
        }
        if self.zeta_initial < 0.0 {
            return Err(Error::invalid("zeta_initial must be >= 0"));
        }
        if self.zeta_final < self.zeta_initial {
            return Err(Error::invalid(format!(
                "zeta_final ({}) must be >= zeta_initial ({})",
                self.zeta_final, self.zeta_initial
            )));
        }
        if !(0.0..=1.0).contains(&self.zeta_ramp_start_fraction) {
            return Err(Error::invalid("zeta_ramp_start_fraction must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.t_alpha) {
            return Err(Error::invalid("t_alpha must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Interpolation weight at step `t` of `total`: `min(t / (t_alpha * total), 1)`,
/// or 1 when `t_alpha` is 0.
pub fn alpha_at_step(t: u64, total: u64, t_alpha: f64) -> f64 {
    if t_alpha <= 0.0 {
        return 1.0;
    }
    let horizon = t_alpha * total.max(1) as f64;
    (t as f64 / horizon).min(1.0)
}

/// Sharpness at step `t` of `total`: constant `zeta_initial` before
/// `zeta_ramp_start_fraction * total`, then rising linearly each step to reach
/// `zeta_final` at `t = total`.
pub fn zeta_at_step(t: u64, total: u64, config: &BinarizeConfig) -> f64 {
    let total = total.max(1) as f64;
    let t = t as f64;
    let start = config.zeta_ramp_start_fraction * total;
    if t < start {
        return config.zeta_initial;
    }
    let span = total - start;
    if span <= 0.0 {
        return config.zeta_final;
    }
    let frac = ((t - start) / span).min(1.0);
    config.zeta_initial + (config.zeta_final - config.zeta_initial) * frac
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_examples() {
        assert_eq!(alpha_at_step(0, 1000, 0.0), 1.0);
        assert_eq!(alpha_at_step(731, 1000, 0.0), 1.0);
        assert_eq!(alpha_at_step(0, 1000, 0.9), 0.0);
        assert!((alpha_at_step(450, 1000, 0.9) - 0.5).abs() < 1e-15);
        assert_eq!(alpha_at_step(900, 1000, 0.9), 1.0);
        assert_eq!(alpha_at_step(1000, 1000, 0.9), 1.0);
    }

    #[test]
    fn zeta_examples() {
        let cfg = BinarizeConfig::default();
        assert_eq!(zeta_at_step(500, 1000, &cfg), 1.0);
        assert_eq!(zeta_at_step(899, 1000, &cfg), 1.0);
        assert_eq!(zeta_at_step(900, 1000, &cfg), 1.0);
        assert!((zeta_at_step(950, 1000, &cfg) - 6.5).abs() < 1e-12);
        assert_eq!(zeta_at_step(1000, 1000, &cfg), 12.0);
    }

    #[test]
    fn zeta_is_monotone() {
        let cfg = BinarizeConfig::default();
        let values: Vec<f64> = (0..=1000).map(|t| zeta_at_step(t, 1000, &cfg)).collect();
        assert!(values.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn validation() {
        assert!(BinarizeConfig::default().validate().is_ok());
        let bad = BinarizeConfig {
            zeta_final: 0.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = BinarizeConfig {
            t_alpha: 1.2,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
