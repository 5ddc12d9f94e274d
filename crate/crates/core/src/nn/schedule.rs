//! Slanted triangular learning-rate envelope with discriminative
//! per-layer scaling: the rate rises linearly to `base_lr` at the cut,
//! decays linearly to `base_lr / ratio` at the final step, and each layer
//! below the top is divided by a further `decay_factor` (2.6 per layer).

use serde::{Deserialize, Serialize};

use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub base_lr: f64,
    /// Fraction of total steps spent rising, in (0, 1).
    pub cut_fraction: f64,
    /// Peak-to-floor ratio of the envelope, ≥ 1.
    pub ratio: f64,
    /// Per-layer discriminative decay, > 1.
    pub decay_factor: f64,
    pub total_steps: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            base_lr: 2e-5,
            cut_fraction: 0.1,
            ratio: 32.0,
            decay_factor: 2.6,
            total_steps: 100,
        }
    }
}

impl ScheduleConfig {
    pub fn with_total_steps(mut self, total_steps: usize) -> Self {
        self.total_steps = total_steps;
        self
    }

    fn validate(&self) -> Result<(), NnError> {
        if !(0.0 < self.cut_fraction && self.cut_fraction < 1.0) {
            return Err(NnError::Config(format!(
                "cut_fraction must lie in (0, 1), got {}",
                self.cut_fraction
            )));
        }
        if self.ratio < 1.0 {
            return Err(NnError::Config(format!("ratio must be ≥ 1, got {}", self.ratio)));
        }
        if self.decay_factor <= 1.0 {
            return Err(NnError::Config(format!(
                "decay_factor must exceed 1, got {}",
                self.decay_factor
            )));
        }
        if self.total_steps == 0 {
            return Err(NnError::Config("total_steps must be positive".into()));
        }
        Ok(())
    }
}

/// Learning rate at `step` for `layer_index` (the top layer is
/// `num_layers − 1` and gets the undivided envelope).
pub fn schedule_lr(
    step: usize,
    layer_index: usize,
    num_layers: usize,
    cfg: &ScheduleConfig,
) -> Result<f64, NnError> {
    cfg.validate()?;
    if step > cfg.total_steps {
        return Err(NnError::Config(format!(
            "step {step} exceeds total_steps {}",
            cfg.total_steps
        )));
    }
    if layer_index >= num_layers {
        return Err(NnError::Config(format!(
            "layer_index {layer_index} out of range for {num_layers} layers"
        )));
    }
    let total = cfg.total_steps as f64;
    let cut = (cfg.cut_fraction * total).floor().max(1.0);
    let t = step as f64;
    let progress = if t <= cut {
        t / cut
    } else {
        1.0 - (t - cut) / (total - cut).max(1.0)
    };
    let envelope = cfg.base_lr * (1.0 + progress * (cfg.ratio - 1.0)) / cfg.ratio;
    let depth = (num_layers - 1 - layer_index) as i32;
    Ok(envelope / cfg.decay_factor.powi(depth))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(total: usize) -> ScheduleConfig {
        ScheduleConfig::default().with_total_steps(total)
    }

    #[test]
    fn peak_at_cut_is_base_lr() {
        let c = cfg(100);
        let cut = (c.cut_fraction * 100.0).floor() as usize;
        let lr = schedule_lr(cut, 3, 4, &c).unwrap();
        assert!((lr - 2e-5).abs() < 1e-18);
    }

    #[test]
    fn layer_below_top_is_divided_by_decay() {
        let c = cfg(100);
        let cut = (c.cut_fraction * 100.0).floor() as usize;
        let top = schedule_lr(cut, 3, 4, &c).unwrap();
        let below = schedule_lr(cut, 2, 4, &c).unwrap();
        assert!((below - top / 2.6).abs() < 1e-18);
        assert!((below - 7.6923e-6).abs() < 1e-9);
    }

    #[test]
    fn envelope_is_monotone_around_cut() {
        let c = cfg(200);
        let cut = (c.cut_fraction * 200.0).floor() as usize;
        let mut prev = schedule_lr(0, 0, 1, &c).unwrap();
        for step in 1..=cut {
            let lr = schedule_lr(step, 0, 1, &c).unwrap();
            assert!(lr >= prev, "rising phase must be non-decreasing");
            prev = lr;
        }
        for step in cut + 1..=200 {
            let lr = schedule_lr(step, 0, 1, &c).unwrap();
            assert!(lr <= prev, "decay phase must be non-increasing");
            prev = lr;
        }
    }

    #[test]
    fn floor_is_base_over_ratio() {
        let c = cfg(50);
        let end = schedule_lr(50, 0, 1, &c).unwrap();
        assert!((end - c.base_lr / c.ratio).abs() < 1e-18);
        let start = schedule_lr(0, 0, 1, &c).unwrap();
        assert!((start - c.base_lr / c.ratio).abs() < 1e-18);
    }

    #[test]
    fn out_of_range_inputs_are_config_errors() {
        let c = cfg(10);
        assert!(schedule_lr(11, 0, 1, &c).is_err());
        assert!(schedule_lr(5, 2, 2, &c).is_err());
        let bad = ScheduleConfig {
            cut_fraction: 1.5,
            ..cfg(10)
        };
        assert!(schedule_lr(0, 0, 1, &bad).is_err());
    }
}
