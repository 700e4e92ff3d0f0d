//! Flat `key = value` run configuration.
//!
//! Keys carry dotted section prefixes (`dataset.kind`, `unlearn.steps`, ...).
//! `#` starts a comment. Serialization emits every key in a fixed order, so
//! `RunConfig::parse(&cfg.to_text())` reproduces `cfg` exactly.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::diffusion::{Activation, Arch, NoiseSchedule, ScheduleKind};
use crate::error::{Error, Result};
use crate::metrics::{Denominator, SscdNormConfig};
use crate::objectives::SissConfig;
use crate::selective::{FilterRoute, FrequencyFilterConfig, TargetMode, TimeWindowConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    TwoMoons,
    Gaussians,
    ImageDir,
    SyntheticTextures,
}

impl DatasetKind {
    pub fn is_image(self) -> bool {
        matches!(self, DatasetKind::ImageDir | DatasetKind::SyntheticTextures)
    }
}

/// Which retain points take part in unlearning when `retain_subset` is set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RetainPick {
    /// Those closest to the forget set.
    Nearest,
    /// Evenly spaced through the retain split.
    Spread,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForgetMode {
    /// The `forget_count` points nearest to an anchor point.
    Cluster,
    /// `forget_count` indices drawn without replacement.
    Random,
    /// The explicit `forget_indices` list.
    Indices,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObjectiveKind {
    Ga,
    EraseDiff,
    Siss,
    Dpo,
    Kto,
}

macro_rules! string_enum {
    ($ty:ty, $what:literal, { $($variant:path => $text:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $text),+ })
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($variant),)+
                    other => Err(Error::Config(format!("unknown {} '{other}'", $what))),
                }
            }
        }
    };
}

string_enum!(DatasetKind, "dataset kind", {
    DatasetKind::TwoMoons => "two-moons",
    DatasetKind::Gaussians => "gaussians",
    DatasetKind::ImageDir => "image-dir",
    DatasetKind::SyntheticTextures => "synthetic-textures",
});

string_enum!(ForgetMode, "forget selection", {
    ForgetMode::Cluster => "cluster",
    ForgetMode::Random => "random",
    ForgetMode::Indices => "indices",
});

string_enum!(RetainPick, "retain pick", {
    RetainPick::Nearest => "nearest",
    RetainPick::Spread => "spread",
});

string_enum!(ObjectiveKind, "objective", {
    ObjectiveKind::Ga => "ga",
    ObjectiveKind::EraseDiff => "erasediff",
    ObjectiveKind::Siss => "siss",
    ObjectiveKind::Dpo => "dpo",
    ObjectiveKind::Kto => "kto",
});

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub n_samples: usize,
    pub noise: f64,
    pub seed: u64,
    /// Side length of square images.
    pub image_size: usize,
    /// Directory for `image-dir`.
    pub path: Option<PathBuf>,
    pub forget: ForgetMode,
    pub forget_count: usize,
    /// Cluster anchor; `None` picks one from the dataset seed.
    pub forget_anchor: Option<usize>,
    pub forget_indices: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub temb_dim: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub kind: ScheduleKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Upper bound on optimizer steps.
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Plateau window; 0 disables early stopping.
    pub plateau_window: usize,
    pub plateau_tol: f64,
    /// No plateau check before this many steps.
    pub min_steps: usize,
    pub log_every: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnlearnConfig {
    pub objective: ObjectiveKind,
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub clip_norm: Option<f64>,
    /// Number of retain points used during unlearning, chosen per
    /// `retain_pick`; 0 uses the whole retain split.
    pub retain_subset: usize,
    pub retain_pick: RetainPick,
    pub retain_weight: f64,
    pub beta_retain: f64,
    pub siss_lambda: f64,
    pub siss_beta: f64,
    pub siss_importance_sampling: bool,
    pub pref_beta: f64,
    pub kto_w_desirable: f64,
    pub kto_w_undesirable: f64,
}

/// Time window as fractions of `T`.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowConfig {
    pub k: f64,
    pub start: f64,
    pub end: f64,
    /// Retain terms draw timesteps from the window too.
    pub retain: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FreqConfig {
    pub enabled: bool,
    pub r_t: f64,
    pub s: f64,
    pub route: FilterRoute,
    pub target: TargetMode,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbeddingKind {
    FlattenCosine,
    PatchHistogram,
}

string_enum!(EmbeddingKind, "embedding", {
    EmbeddingKind::FlattenCosine => "flatten-cosine",
    EmbeddingKind::PatchHistogram => "patch-histogram",
});

#[derive(Clone, Debug, PartialEq)]
pub struct EvalPlan {
    /// Reconstruction start points as fractions of `T`.
    pub t_start: Vec<f64>,
    /// Evaluate every `cadence` unlearning steps; 0 only at start and end.
    pub cadence: usize,
    /// Fresh samples for toy hit-rate and coverage.
    pub samples: usize,
    pub hit_radius: f64,
    pub coverage_radius: f64,
    pub grad_draws: usize,
    pub psd_bins: usize,
    pub freq_cutoff: f64,
    /// Per-group cap on evaluated images.
    pub max_per_group: usize,
    pub embedding: EmbeddingKind,
    /// `None` scales the default radius to the image size.
    pub sscd_rho: Option<f64>,
    pub sscd_denominator: Denominator,
    /// Metric families to emit; empty means all that apply.
    pub metrics: Vec<String>,
}

impl EvalPlan {
    pub fn wants(&self, family: &str) -> bool {
        self.metrics.is_empty() || self.metrics.iter().any(|m| m == family)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub model: ModelConfig,
    pub schedule: ScheduleConfig,
    pub train: TrainConfig,
    pub unlearn: UnlearnConfig,
    pub time_window: WindowConfig,
    pub freq_filter: FreqConfig,
    pub eval: EvalPlan,
}

/// Metric families understood by the evaluation suite.
pub const METRIC_FAMILIES: &[&str] = &[
    "loss",
    "hit_rate",
    "coverage",
    "grad_norm",
    "freq_grad_norm",
    "sscd",
    "psd",
];

impl Default for RunConfig {
    /// Two-moons toy setup with `T = 200`.
    fn default() -> Self {
        RunConfig {
            seed: 0,
            dataset: DatasetSpec {
                kind: DatasetKind::TwoMoons,
                n_samples: 1000,
                noise: 0.05,
                seed: 0,
                image_size: 28,
                path: None,
                forget: ForgetMode::Cluster,
                forget_count: 6,
                forget_anchor: None,
                forget_indices: Vec::new(),
            },
            model: ModelConfig {
                hidden: vec![128, 128, 128],
                activation: Activation::Silu,
                temb_dim: 16,
            },
            schedule: ScheduleConfig {
                steps: 200,
                beta_start: 1e-4,
                beta_end: 0.02,
                kind: ScheduleKind::Linear,
            },
            train: TrainConfig {
                steps: 15000,
                lr: 2e-3,
                batch_size: 128,
                plateau_window: 200,
                plateau_tol: 1e-3,
                min_steps: 12000,
                log_every: 100,
            },
            unlearn: UnlearnConfig {
                objective: ObjectiveKind::Ga,
                steps: 100,
                lr: 5e-4,
                batch_size: 32,
                clip_norm: Some(1.0),
                retain_subset: 50,
                retain_pick: RetainPick::Nearest,
                retain_weight: 1.0,
                beta_retain: 1.0,
                siss_lambda: 0.5,
                siss_beta: 0.1,
                siss_importance_sampling: true,
                pref_beta: 10.0,
                kto_w_desirable: 1.0,
                kto_w_undesirable: 1.0,
            },
            time_window: WindowConfig {
                k: 0.0,
                start: 0.25,
                end: 0.75,
                retain: true,
            },
            freq_filter: FreqConfig {
                enabled: false,
                r_t: 0.1,
                s: 0.0,
                route: FilterRoute::ForgetOnly,
                target: TargetMode::InputOnly,
            },
            eval: EvalPlan {
                t_start: vec![0.25, 0.5],
                cadence: 0,
                samples: 2000,
                hit_radius: 0.1,
                coverage_radius: 0.1,
                grad_draws: 16,
                psd_bins: 8,
                freq_cutoff: 0.1,
                max_per_group: 6,
                embedding: EmbeddingKind::FlattenCosine,
                sscd_rho: None,
                sscd_denominator: Denominator::SquaredNorm,
                metrics: Vec::new(),
            },
        }
    }
}

fn list<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| parse_value(key, s.trim())).collect()
}

fn opt<T: ToString>(v: &Option<T>, none: &str) -> String {
    v.as_ref().map_or_else(|| none.to_string(), T::to_string)
}

fn parse_opt<T: FromStr>(key: &str, v: &str, none: &str) -> Result<Option<T>> {
    if v == none {
        Ok(None)
    } else {
        parse_value(key, v).map(Some)
    }
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("invalid value '{v}' for key '{key}'")))
}

impl RunConfig {
    /// Preset for the small-image track: 28×28 synthetic textures.
    pub fn image_default() -> Self {
        let mut cfg = RunConfig::default();
        cfg.dataset.kind = DatasetKind::SyntheticTextures;
        cfg.dataset.n_samples = 64;
        cfg.dataset.forget = ForgetMode::Random;
        cfg.model.hidden = vec![256, 256];
        cfg.schedule = ScheduleConfig {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            kind: ScheduleKind::Linear,
        };
        cfg.train.steps = 1500;
        cfg.train.batch_size = 32;
        cfg.train.min_steps = 1000;
        cfg.unlearn.steps = 50;
        cfg.unlearn.lr = 1e-3;
        cfg.unlearn.retain_subset = 0;
        cfg.eval.metrics = vec![
            "loss".into(),
            "grad_norm".into(),
            "freq_grad_norm".into(),
            "sscd".into(),
            "psd".into(),
        ];
        cfg
    }

    /// Every key with its serialized value, in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let d = &self.dataset;
        let m = &self.model;
        let s = &self.schedule;
        let t = &self.train;
        let u = &self.unlearn;
        let w = &self.time_window;
        let f = &self.freq_filter;
        let e = &self.eval;
        vec![
            ("seed", self.seed.to_string()),
            ("dataset.kind", d.kind.to_string()),
            ("dataset.n_samples", d.n_samples.to_string()),
            ("dataset.noise", d.noise.to_string()),
            ("dataset.seed", d.seed.to_string()),
            ("dataset.image_size", d.image_size.to_string()),
            (
                "dataset.path",
                d.path
                    .as_ref()
                    .map_or_else(String::new, |p| p.display().to_string()),
            ),
            ("dataset.forget", d.forget.to_string()),
            ("dataset.forget_count", d.forget_count.to_string()),
            ("dataset.forget_anchor", opt(&d.forget_anchor, "auto")),
            ("dataset.forget_indices", list(&d.forget_indices)),
            ("model.hidden", list(&m.hidden)),
            ("model.activation", m.activation.to_string()),
            ("model.temb_dim", m.temb_dim.to_string()),
            ("schedule.steps", s.steps.to_string()),
            ("schedule.beta_start", s.beta_start.to_string()),
            ("schedule.beta_end", s.beta_end.to_string()),
            ("schedule.kind", s.kind.to_string()),
            ("train.steps", t.steps.to_string()),
            ("train.lr", t.lr.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.plateau_window", t.plateau_window.to_string()),
            ("train.plateau_tol", t.plateau_tol.to_string()),
            ("train.min_steps", t.min_steps.to_string()),
            ("train.log_every", t.log_every.to_string()),
            ("unlearn.objective", u.objective.to_string()),
            ("unlearn.steps", u.steps.to_string()),
            ("unlearn.lr", u.lr.to_string()),
            ("unlearn.batch_size", u.batch_size.to_string()),
            ("unlearn.clip_norm", opt(&u.clip_norm, "none")),
            ("unlearn.retain_subset", u.retain_subset.to_string()),
            ("unlearn.retain_pick", u.retain_pick.to_string()),
            ("unlearn.retain_weight", u.retain_weight.to_string()),
            ("unlearn.beta_retain", u.beta_retain.to_string()),
            ("unlearn.siss_lambda", u.siss_lambda.to_string()),
            ("unlearn.siss_beta", u.siss_beta.to_string()),
            (
                "unlearn.siss_importance_sampling",
                u.siss_importance_sampling.to_string(),
            ),
            ("unlearn.pref_beta", u.pref_beta.to_string()),
            ("unlearn.kto_w_desirable", u.kto_w_desirable.to_string()),
            ("unlearn.kto_w_undesirable", u.kto_w_undesirable.to_string()),
            ("time_window.k", w.k.to_string()),
            ("time_window.start", w.start.to_string()),
            ("time_window.end", w.end.to_string()),
            ("time_window.retain", w.retain.to_string()),
            ("freq_filter.enabled", f.enabled.to_string()),
            ("freq_filter.r_t", f.r_t.to_string()),
            ("freq_filter.s", f.s.to_string()),
            ("freq_filter.route", f.route.to_string()),
            ("freq_filter.target", f.target.to_string()),
            ("eval.t_start", list(&e.t_start)),
            ("eval.cadence", e.cadence.to_string()),
            ("eval.samples", e.samples.to_string()),
            ("eval.hit_radius", e.hit_radius.to_string()),
            ("eval.coverage_radius", e.coverage_radius.to_string()),
            ("eval.grad_draws", e.grad_draws.to_string()),
            ("eval.psd_bins", e.psd_bins.to_string()),
            ("eval.freq_cutoff", e.freq_cutoff.to_string()),
            ("eval.max_per_group", e.max_per_group.to_string()),
            ("eval.embedding", e.embedding.to_string()),
            ("eval.sscd_rho", opt(&e.sscd_rho, "auto")),
            ("eval.sscd_denominator", e.sscd_denominator.to_string()),
            ("eval.metrics", e.metrics.join(",")),
        ]
    }

    /// Assigns one key. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let d = &mut self.dataset;
        let m = &mut self.model;
        let s = &mut self.schedule;
        let t = &mut self.train;
        let u = &mut self.unlearn;
        let w = &mut self.time_window;
        let f = &mut self.freq_filter;
        let e = &mut self.eval;
        match key {
            "seed" => self.seed = parse_value(key, v)?,
            "dataset.kind" => d.kind = v.parse()?,
            "dataset.n_samples" => d.n_samples = parse_value(key, v)?,
            "dataset.noise" => d.noise = parse_value(key, v)?,
            "dataset.seed" => d.seed = parse_value(key, v)?,
            "dataset.image_size" => d.image_size = parse_value(key, v)?,
            "dataset.path" => d.path = (!v.is_empty()).then(|| PathBuf::from(v)),
            "dataset.forget" => d.forget = v.parse()?,
            "dataset.forget_count" => d.forget_count = parse_value(key, v)?,
            "dataset.forget_anchor" => d.forget_anchor = parse_opt(key, v, "auto")?,
            "dataset.forget_indices" => d.forget_indices = parse_list(key, v)?,
            "model.hidden" => m.hidden = parse_list(key, v)?,
            "model.activation" => m.activation = v.parse()?,
            "model.temb_dim" => m.temb_dim = parse_value(key, v)?,
            "schedule.steps" => s.steps = parse_value(key, v)?,
            "schedule.beta_start" => s.beta_start = parse_value(key, v)?,
            "schedule.beta_end" => s.beta_end = parse_value(key, v)?,
            "schedule.kind" => s.kind = v.parse()?,
            "train.steps" => t.steps = parse_value(key, v)?,
            "train.lr" => t.lr = parse_value(key, v)?,
            "train.batch_size" => t.batch_size = parse_value(key, v)?,
            "train.plateau_window" => t.plateau_window = parse_value(key, v)?,
            "train.plateau_tol" => t.plateau_tol = parse_value(key, v)?,
            "train.min_steps" => t.min_steps = parse_value(key, v)?,
            "train.log_every" => t.log_every = parse_value(key, v)?,
            "unlearn.objective" => u.objective = v.parse()?,
            "unlearn.steps" => u.steps = parse_value(key, v)?,
            "unlearn.lr" => u.lr = parse_value(key, v)?,
            "unlearn.batch_size" => u.batch_size = parse_value(key, v)?,
            "unlearn.clip_norm" => u.clip_norm = parse_opt(key, v, "none")?,
            "unlearn.retain_subset" => u.retain_subset = parse_value(key, v)?,
            "unlearn.retain_pick" => u.retain_pick = v.parse()?,
            "unlearn.retain_weight" => u.retain_weight = parse_value(key, v)?,
            "unlearn.beta_retain" => u.beta_retain = parse_value(key, v)?,
            "unlearn.siss_lambda" => u.siss_lambda = parse_value(key, v)?,
            "unlearn.siss_beta" => u.siss_beta = parse_value(key, v)?,
            "unlearn.siss_importance_sampling" => u.siss_importance_sampling = parse_value(key, v)?,
            "unlearn.pref_beta" => u.pref_beta = parse_value(key, v)?,
            "unlearn.kto_w_desirable" => u.kto_w_desirable = parse_value(key, v)?,
            "unlearn.kto_w_undesirable" => u.kto_w_undesirable = parse_value(key, v)?,
            "time_window.k" => w.k = parse_value(key, v)?,
            "time_window.start" => w.start = parse_value(key, v)?,
            "time_window.end" => w.end = parse_value(key, v)?,
            "time_window.retain" => w.retain = parse_value(key, v)?,
            "freq_filter.enabled" => f.enabled = parse_value(key, v)?,
            "freq_filter.r_t" => f.r_t = parse_value(key, v)?,
            "freq_filter.s" => f.s = parse_value(key, v)?,
            "freq_filter.route" => f.route = v.parse()?,
            "freq_filter.target" => f.target = v.parse()?,
            "eval.t_start" => e.t_start = parse_list(key, v)?,
            "eval.cadence" => e.cadence = parse_value(key, v)?,
            "eval.samples" => e.samples = parse_value(key, v)?,
            "eval.hit_radius" => e.hit_radius = parse_value(key, v)?,
            "eval.coverage_radius" => e.coverage_radius = parse_value(key, v)?,
            "eval.grad_draws" => e.grad_draws = parse_value(key, v)?,
            "eval.psd_bins" => e.psd_bins = parse_value(key, v)?,
            "eval.freq_cutoff" => e.freq_cutoff = parse_value(key, v)?,
            "eval.max_per_group" => e.max_per_group = parse_value(key, v)?,
            "eval.embedding" => e.embedding = v.parse()?,
            "eval.sscd_rho" => e.sscd_rho = parse_opt(key, v, "auto")?,
            "eval.sscd_denominator" => {
                e.sscd_denominator = v
                    .parse()
                    .map_err(|err: Error| Error::Config(err.to_string()))?
            }
            "eval.metrics" => e.metrics = parse_list(key, v)?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Applies `key=value` text lines on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected 'key = value', got '{line}'",
                    lineno + 1
                ))
            })?;
            self.set(key.trim(), value)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{kv}' is not key=value")))?;
        self.set(key.trim(), value)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_file(path)?;
        Ok(cfg)
    }

    /// Applies a config file on top of the current values.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Hex SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn run_id(&self) -> String {
        format!("{}-s{}", &self.hash()[..12], self.seed)
    }

    pub fn arch(&self) -> Arch {
        Arch {
            data_dim: self.data_dim(),
            hidden: self.model.hidden.clone(),
            activation: self.model.activation,
            temb_dim: self.model.temb_dim,
        }
    }

    pub fn data_dim(&self) -> usize {
        if self.dataset.kind.is_image() {
            self.dataset.image_size * self.dataset.image_size
        } else {
            2
        }
    }

    pub fn noise_schedule(&self) -> Result<NoiseSchedule> {
        let s = &self.schedule;
        NoiseSchedule::new(s.steps, s.beta_start, s.beta_end, s.kind)
    }

    pub fn time_window_config(&self) -> Result<TimeWindowConfig> {
        let w = &self.time_window;
        TimeWindowConfig::from_fractions(w.k, w.start, w.end, self.schedule.steps)
    }

    pub fn frequency_filter(&self) -> Result<Option<FrequencyFilterConfig>> {
        let f = &self.freq_filter;
        f.enabled
            .then(|| FrequencyFilterConfig::new(f.r_t, f.s))
            .transpose()
    }

    pub fn sscd_config(&self) -> SscdNormConfig {
        let mut cfg = SscdNormConfig::for_numel(self.data_dim());
        if let Some(rho) = self.eval.sscd_rho {
            cfg.rho = rho;
        }
        cfg.denominator = self.eval.sscd_denominator;
        cfg
    }

    /// Reconstruction start points in forward steps.
    pub fn t_starts(&self) -> Vec<usize> {
        self.eval
            .t_start
            .iter()
            .map(|f| (f * self.schedule.steps as f64).round() as usize)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if d.n_samples == 0 {
            return Err(Error::Config("dataset.n_samples must be positive".into()));
        }
        if !(d.noise >= 0.0 && d.noise.is_finite()) {
            return Err(Error::Config(
                "dataset.noise must be finite and nonnegative".into(),
            ));
        }
        if d.kind.is_image() && d.image_size < 2 {
            return Err(Error::Config(
                "dataset.image_size must be at least 2".into(),
            ));
        }
        if d.kind == DatasetKind::ImageDir && d.path.is_none() {
            return Err(Error::Config(
                "dataset.path is required for image-dir".into(),
            ));
        }
        if d.forget != ForgetMode::Indices && d.forget_count == 0 {
            return Err(Error::Config(
                "dataset.forget_count must be positive".into(),
            ));
        }
        self.arch().validate()?;
        self.noise_schedule()?;
        self.time_window_config()?;
        self.frequency_filter()?;
        let t = &self.train;
        if t.batch_size == 0 || !(t.lr > 0.0) {
            return Err(Error::Config(
                "train.batch_size and train.lr must be positive".into(),
            ));
        }
        let u = &self.unlearn;
        if u.batch_size == 0 || !(u.lr > 0.0) {
            return Err(Error::Config(
                "unlearn.batch_size and unlearn.lr must be positive".into(),
            ));
        }
        if let Some(c) = u.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config(
                    "unlearn.clip_norm must be positive or none".into(),
                ));
            }
        }
        if u.objective == ObjectiveKind::Siss {
            SissConfig::new(u.siss_lambda, u.siss_beta, u.siss_importance_sampling)?;
        }
        if matches!(u.objective, ObjectiveKind::Dpo | ObjectiveKind::Kto) && !(u.pref_beta > 0.0) {
            return Err(Error::Config("unlearn.pref_beta must be positive".into()));
        }
        let e = &self.eval;
        if e.t_start.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::Config(
                "eval.t_start fractions must lie in [0, 1]".into(),
            ));
        }
        if !(e.hit_radius > 0.0 && e.coverage_radius > 0.0) {
            return Err(Error::Config("eval radii must be positive".into()));
        }
        if e.grad_draws == 0 || e.psd_bins < 2 || !(e.freq_cutoff > 0.0 && e.freq_cutoff < 1.0) {
            return Err(Error::Config(
                "eval.grad_draws >= 1, eval.psd_bins >= 2, eval.freq_cutoff in (0, 1)".into(),
            ));
        }
        if let Some(bad) = e
            .metrics
            .iter()
            .find(|m| !METRIC_FAMILIES.contains(&m.as_str()))
        {
            return Err(Error::Config(format!("unknown metric family '{bad}'")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_validate() {
        for cfg in [RunConfig::default(), RunConfig::image_default()] {
            cfg.validate().unwrap();
            assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
        }
    }

    #[test]
    fn comments_overrides_and_errors() {
        let cfg = RunConfig::parse("# toy\nunlearn.steps = 7 # inline\n\nseed=3\n").unwrap();
        assert_eq!((cfg.unlearn.steps, cfg.seed), (7, 3));
        let mut c = cfg.clone();
        c.apply_override("time_window.start=0.5").unwrap();
        assert_eq!(c.time_window.start, 0.5);
        assert!(c.apply_override("nope=1").is_err());
        assert!(RunConfig::parse("unlearn.steps").is_err());
        let err = RunConfig::parse("unlearn.steps = many")
            .unwrap_err()
            .to_string();
        assert!(err.contains("unlearn.steps"), "{err}");
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.unlearn.lr = 2e-3;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.run_id(), RunConfig::default().run_id());
    }

    #[test]
    fn invalid_values_rejected() {
        let mut c = RunConfig::default();
        c.time_window.start = 0.9;
        c.time_window.end = 0.1;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.eval.metrics = vec!["fid".into()];
        assert!(c.validate().is_err());
    }
}
