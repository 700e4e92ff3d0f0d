use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleKind {
    Linear,
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScheduleKind::Linear => f.write_str("linear"),
        }
    }
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ScheduleKind::Linear),
            other => Err(Error::invalid(format!("unknown schedule kind '{other}'"))),
        }
    }
}

/// Per-timestep DDPM coefficients for timesteps `0..steps`.
///
/// Timestep `t` is the noise level reached after `t + 1` forward steps, so
/// `alpha_bar(0) = 1 - beta(0)`. Clean data sits just before timestep 0.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    beta_start: f64,
    beta_end: f64,
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma: Vec<f64>,
    loss_weight: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(steps: usize, beta_start: f64, beta_end: f64, kind: ScheduleKind) -> Result<Self> {
        if steps < 2 {
            return Err(Error::invalid(format!(
                "schedule needs at least 2 steps, got {steps}"
            )));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::invalid(format!(
                "betas must satisfy 0 < start <= end < 1, got start={beta_start} end={beta_end}"
            )));
        }
        let beta: Vec<f64> = match kind {
            ScheduleKind::Linear => (0..steps)
                .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
                .collect(),
        };
        let mut alpha_bar = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for b in &beta {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        let sigma = alpha_bar.iter().map(|a| (1.0 - a).sqrt()).collect();
        Ok(NoiseSchedule {
            kind,
            beta_start,
            beta_end,
            beta,
            alpha_bar,
            sigma,
            loss_weight: vec![1.0; steps],
        })
    }

    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        Self::new(steps, beta_start, beta_end, ScheduleKind::Linear)
    }

    /// DDPM defaults: 1000 steps, betas from 1e-4 to 2e-2.
    pub fn ddpm_default() -> Self {
        Self::linear(1000, 1e-4, 2e-2).expect("default schedule is valid")
    }

    pub fn with_loss_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.steps() {
            return Err(Error::invalid(format!(
                "expected {} loss weights, got {}",
                self.steps(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid(
                "loss weights must be finite and nonnegative",
            ));
        }
        self.loss_weight = weights;
        Ok(self)
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn beta_start(&self) -> f64 {
        self.beta_start
    }

    pub fn beta_end(&self) -> f64 {
        self.beta_end
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.beta[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    /// `alpha_bar` one step earlier; clean data has `alpha_bar = 1`.
    pub fn alpha_bar_prev(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t]
    }

    pub fn loss_weight(&self, t: usize) -> f64 {
        self.loss_weight[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// Variance of the DDPM posterior `q(x_{t-1} | x_t, x_0)`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar_prev(t)) / (1.0 - self.alpha_bar[t]) * self.beta[t]
    }

    pub fn check(&self, t: usize) -> Result<()> {
        if t >= self.steps() {
            return Err(Error::TimestepOutOfRange {
                t,
                steps: self.steps(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_first_alpha_bar() {
        let s = NoiseSchedule::ddpm_default();
        assert_eq!(s.steps(), 1000);
        assert!((s.alpha_bar(0) - (1.0 - 1e-4)).abs() < 1e-15);
        assert!(s.alpha_bar(999) < 1e-4);
    }

    #[test]
    fn two_step_cumulative_product() {
        let s = NoiseSchedule::linear(2, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bars(), &[0.5, 0.25]);
    }

    #[test]
    fn beta_end_of_one_is_rejected() {
        assert!(NoiseSchedule::linear(10, 1e-4, 1.0).is_err());
        assert!(NoiseSchedule::linear(1, 1e-4, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 0.03, 0.02).is_err());
    }

    #[test]
    fn invariants_hold() {
        let s = NoiseSchedule::linear(200, 1e-4, 2e-2).unwrap();
        for t in 1..s.steps() {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
        }
        for t in 0..s.steps() {
            assert_eq!(s.sigma(t), (1.0 - s.alpha_bar(t)).sqrt());
        }
        assert!(s.check(200).is_err());
    }

    #[test]
    fn posterior_variance_vanishes_at_first_step() {
        let s = NoiseSchedule::linear(50, 1e-3, 2e-2).unwrap();
        assert_eq!(s.posterior_variance(0), 0.0);
        assert!(s.posterior_variance(10) < s.beta(10));
    }
}
