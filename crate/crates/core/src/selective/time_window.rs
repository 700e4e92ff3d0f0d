use rand::Rng;

use crate::error::{Error, Result};

/// Non-uniform timestep distribution that concentrates mass `1 - k` on the
/// window `[t1, t2)` and spreads the residual `k` over the other timesteps.
///
/// The window is half-open so it holds exactly `t2 - t1` timesteps and the
/// complement holds `steps - (t2 - t1)`. When the window covers every
/// timestep the distribution is uniform regardless of `k`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeWindowConfig {
    k: f64,
    t1: usize,
    t2: usize,
    steps: usize,
}

impl TimeWindowConfig {
    pub fn new(k: f64, t1: usize, t2: usize, steps: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&k) {
            return Err(Error::invalid(format!(
                "suppression intensity k={k} outside [0, 1]"
            )));
        }
        if t1 >= t2 || t2 > steps {
            return Err(Error::invalid(format!(
                "window [{t1}, {t2}) must satisfy 0 <= t1 < t2 <= {steps}"
            )));
        }
        Ok(TimeWindowConfig { k, t1, t2, steps })
    }

    /// Uniform over all timesteps.
    pub fn full(steps: usize) -> Result<Self> {
        Self::new(0.0, 0, steps, steps)
    }

    /// Window given as fractions of the step count, e.g. `(0.25, 0.75)`.
    pub fn from_fractions(k: f64, lo: f64, hi: f64, steps: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) {
            return Err(Error::invalid(format!(
                "window fractions ({lo}, {hi}) outside [0, 1]"
            )));
        }
        let t1 = (lo * steps as f64).round() as usize;
        let t2 = (hi * steps as f64).round() as usize;
        Self::new(k, t1, t2, steps)
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn t1(&self) -> usize {
        self.t1
    }

    pub fn t2(&self) -> usize {
        self.t2
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// True when the window spans every timestep, so sampling is uniform.
    pub fn is_full(&self) -> bool {
        self.t1 == 0 && self.t2 == self.steps
    }

    pub fn contains(&self, t: usize) -> bool {
        (self.t1..self.t2).contains(&t)
    }

    fn inside_count(&self) -> usize {
        self.t2 - self.t1
    }

    fn outside_count(&self) -> usize {
        self.steps - self.inside_count()
    }

    /// Probability mass of timestep `t`.
    pub fn pdf(&self, t: usize) -> Result<f64> {
        if t >= self.steps {
            return Err(Error::TimestepOutOfRange {
                t,
                steps: self.steps,
            });
        }
        let outside = self.outside_count();
        Ok(if outside == 0 {
            1.0 / self.steps as f64
        } else if self.contains(t) {
            (1.0 - self.k) / self.inside_count() as f64
        } else {
            self.k / outside as f64
        })
    }

    /// Draws a timestep. With `k = 0` (or a full window) this consumes the
    /// random stream exactly like a uniform draw over the window.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let outside = self.outside_count();
        if outside == 0 || self.k == 0.0 {
            return rng.random_range(self.t1..self.t2);
        }
        let pick_outside = self.k == 1.0 || rng.random::<f64>() < self.k;
        if pick_outside {
            let j = rng.random_range(0..outside);
            if j < self.t1 {
                j
            } else {
                j + self.inside_count()
            }
        } else {
            rng.random_range(self.t1..self.t2)
        }
    }
}

pub fn sample_timestep<R: Rng + ?Sized>(cfg: &TimeWindowConfig, rng: &mut R) -> usize {
    cfg.sample(rng)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn hard_window_masses() {
        let cfg = TimeWindowConfig::new(0.0, 250, 750, 1000).unwrap();
        assert_eq!(cfg.pdf(500).unwrap(), 1.0 / 500.0);
        assert_eq!(cfg.pdf(100).unwrap(), 0.0);
        assert_eq!(cfg.pdf(750).unwrap(), 0.0);
    }

    #[test]
    fn soft_window_masses() {
        let cfg = TimeWindowConfig::new(0.2, 250, 750, 1000).unwrap();
        assert!((cfg.pdf(400).unwrap() - 1.6e-3).abs() < 1e-15);
        assert!((cfg.pdf(900).unwrap() - 4e-4).abs() < 1e-15);
    }

    #[test]
    fn full_window_is_uniform_for_any_k() {
        let cfg = TimeWindowConfig::new(1.0, 0, 1000, 1000).unwrap();
        for t in [0, 10, 999] {
            assert_eq!(cfg.pdf(t).unwrap(), 1e-3);
        }
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(TimeWindowConfig::new(-0.1, 0, 10, 10).is_err());
        assert!(TimeWindowConfig::new(0.5, 5, 5, 10).is_err());
        assert!(TimeWindowConfig::new(0.5, 0, 11, 10).is_err());
        let cfg = TimeWindowConfig::full(10).unwrap();
        assert!(cfg.pdf(10).is_err());
    }

    #[test]
    fn zero_k_never_leaves_window() {
        let cfg = TimeWindowConfig::new(0.0, 250, 750, 1000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100_000 {
            assert!(cfg.contains(cfg.sample(&mut rng)));
        }
    }

    #[test]
    fn unit_k_never_enters_window() {
        let cfg = TimeWindowConfig::new(1.0, 10, 40, 50).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10_000 {
            assert!(!cfg.contains(cfg.sample(&mut rng)));
        }
    }

    #[test]
    fn fixed_seed_reproduces() {
        let cfg = TimeWindowConfig::new(0.3, 10, 40, 50).unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..64).map(|_| cfg.sample(&mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(11), draw(11));
    }

    #[test]
    fn fractions_scale_with_steps() {
        let cfg = TimeWindowConfig::from_fractions(0.0, 0.25, 0.75, 200).unwrap();
        assert_eq!((cfg.t1(), cfg.t2()), (50, 150));
    }
}
