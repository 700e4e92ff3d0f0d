use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};

use super::filter::{low_pass_rows, FrequencyFilterConfig};
use super::spectrum::ImageShape;
use super::time_window::TimeWindowConfig;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::objectives::{LossContext, LossOutput, Objective};

/// Which branches of an objective see low-pass filtered inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FilterRoute {
    #[default]
    ForgetOnly,
    ForgetAndRetain,
}

impl fmt::Display for FilterRoute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FilterRoute::ForgetOnly => "forget-only",
            FilterRoute::ForgetAndRetain => "forget-and-retain",
        })
    }
}

impl FromStr for FilterRoute {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forget-only" => Ok(FilterRoute::ForgetOnly),
            "forget-and-retain" => Ok(FilterRoute::ForgetAndRetain),
            other => Err(Error::invalid(format!("unknown filter route '{other}'"))),
        }
    }
}

/// Whether the regression target is filtered along with the noisy input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum TargetMode {
    #[default]
    InputOnly,
    InputAndTarget,
}

impl fmt::Display for TargetMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TargetMode::InputOnly => "filter-input-only",
            TargetMode::InputAndTarget => "filter-input-and-target",
        })
    }
}

impl FromStr for TargetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "filter-input-only" => Ok(TargetMode::InputOnly),
            "filter-input-and-target" => Ok(TargetMode::InputAndTarget),
            other => Err(Error::invalid(format!("unknown target mode '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrequencySelection {
    pub filter: FrequencyFilterConfig,
    /// `None` for point data, where filtering is the identity.
    pub image: Option<ImageShape>,
    pub route: FilterRoute,
    pub target: TargetMode,
}

impl FrequencySelection {
    pub fn new(filter: FrequencyFilterConfig, image: Option<ImageShape>) -> Self {
        FrequencySelection {
            filter,
            image,
            route: FilterRoute::default(),
            target: TargetMode::default(),
        }
    }

    pub fn route(mut self, route: FilterRoute) -> Self {
        self.route = route;
        self
    }

    pub fn target(mut self, target: TargetMode) -> Self {
        self.target = target;
        self
    }

    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        match self.image {
            Some(shape) => low_pass_rows(x, shape, &self.filter),
            None => Ok(x.clone()),
        }
    }
}

/// Time and frequency selection applied by objectives while drawing their
/// noisy inputs. The default selects nothing: uniform timesteps, no filter.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Selection {
    pub time: Option<TimeWindowConfig>,
    pub freq: Option<FrequencySelection>,
    /// Retain-branch timesteps also follow the window instead of covering
    /// the whole schedule.
    pub windowed_retain: bool,
}

impl Selection {
    pub fn none() -> Self {
        Self::default()
    }

    /// Timestep for a forget-branch draw.
    pub fn forget_timestep(&self, steps: usize, rng: &mut dyn RngCore) -> Result<usize> {
        match &self.time {
            Some(cfg) => {
                if cfg.steps() != steps {
                    return Err(Error::invalid(format!(
                        "time window built for {} steps, schedule has {steps}",
                        cfg.steps()
                    )));
                }
                Ok(cfg.sample(rng))
            }
            None => Ok(rng.random_range(0..steps)),
        }
    }

    /// Timestep for a retain-branch draw.
    pub fn retain_timestep(&self, steps: usize, rng: &mut dyn RngCore) -> Result<usize> {
        if self.windowed_retain {
            self.forget_timestep(steps, rng)
        } else {
            Ok(rng.random_range(0..steps))
        }
    }

    pub fn filters_forget(&self) -> bool {
        self.freq
            .is_some_and(|f| f.image.is_some() && !f.filter.is_identity())
    }

    pub fn filters_retain(&self) -> bool {
        self.filters_forget()
            && self
                .freq
                .is_some_and(|f| f.route == FilterRoute::ForgetAndRetain)
    }

    fn filters_targets(&self) -> bool {
        self.freq
            .is_some_and(|f| f.target == TargetMode::InputAndTarget)
    }

    pub fn forget_input(&self, x: &Tensor) -> Result<Tensor> {
        match (&self.freq, self.filters_forget()) {
            (Some(f), true) => f.apply(x),
            _ => Ok(x.clone()),
        }
    }

    pub fn retain_input(&self, x: &Tensor) -> Result<Tensor> {
        match (&self.freq, self.filters_retain()) {
            (Some(f), true) => f.apply(x),
            _ => Ok(x.clone()),
        }
    }

    pub fn forget_target(&self, eps: &Tensor) -> Result<Tensor> {
        if self.filters_targets() {
            self.forget_input(eps)
        } else {
            Ok(eps.clone())
        }
    }

    pub fn retain_target(&self, eps: &Tensor) -> Result<Tensor> {
        if self.filters_targets() {
            self.retain_input(eps)
        } else {
            Ok(eps.clone())
        }
    }
}

/// An objective evaluated under a fixed [`Selection`].
#[derive(Clone, Debug)]
pub struct Selective<O> {
    inner: O,
    selection: Selection,
}

impl<O> Selective<O> {
    pub fn selection(&self) -> &Selection {
        &self.selection
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }

    /// Makes retain terms draw their timesteps from the window as well.
    pub fn with_windowed_retain(mut self, on: bool) -> Self {
        self.selection.windowed_retain = on;
        self
    }
}

impl<O: Objective> Objective for Selective<O> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn loss(&self, ctx: &mut LossContext<'_>) -> Result<LossOutput> {
        let mut inner = ctx.with_selection(&self.selection);
        self.inner.loss(&mut inner)
    }
}

/// Wraps `objective` so its forget timesteps follow `time` and its noisy
/// inputs pass through the low-pass filter described by `freq`.
pub fn selective_wrap<O: Objective>(
    objective: O,
    time: Option<TimeWindowConfig>,
    freq: Option<FrequencySelection>,
) -> Selective<O> {
    Selective {
        inner: objective,
        selection: Selection {
            time,
            freq,
            windowed_retain: false,
        },
    }
}
