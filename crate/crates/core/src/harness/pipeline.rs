//! Train, unlearn and evaluate.
//!
//! Each phase draws from its own ChaCha stream of the run seed, so changing
//! one phase's settings never shifts another phase's random numbers. The
//! evaluation stream restarts at every evaluation, which makes successive
//! evaluations use identical noise and differ only through the model.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use super::config::{ObjectiveKind, RunConfig};
use super::dataset::{make_dataset, Dataset};
use super::io::{metrics_csv, write_samples, write_text, MetricRow, RunDir};
use crate::diffusion::{
    checkpoint, denoise_from, epsilon_loss, sample, train_step, Denoiser, EpsModel, NoiseSchedule,
};
use crate::error::{Error, Result};
use crate::metrics::{
    forget_hit_rate, freq_decomposed_grad_norm, grad_norm_of, psd_radial_slice, retain_coverage,
    sscd_norm, sscd_plain, Embedding, FlattenCosine, PatchHistogram,
};
use crate::numerics::{Adam, Graph, Tensor};
use crate::objectives::{
    unlearn_step, Dpo, EraseDiff, GradientAscent, Kto, Objective, PreferenceConfig, Siss,
    SissConfig, UnlearnRun,
};
use crate::selective::{selective_wrap, FrequencySelection};
use crate::SeededRng;

#[derive(Clone, Copy, Debug)]
enum Phase {
    Init = 1,
    Train = 2,
    Unlearn = 3,
    Eval = 4,
}

fn phase_rng(seed: u64, phase: Phase) -> SeededRng {
    let mut rng = crate::seeded_rng(seed);
    rng.set_stream(phase as u64);
    rng
}

/// Everything one pipeline phase produced.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub run_id: String,
    pub config: RunConfig,
    pub checkpoints: Vec<PathBuf>,
    pub rows: Vec<MetricRow>,
    /// Wall-clock seconds per phase. Kept out of the metrics file so that
    /// file stays byte-reproducible.
    pub phase_seconds: Vec<(String, f64)>,
}

impl RunRecord {
    fn new(cfg: &RunConfig) -> Self {
        RunRecord {
            run_id: cfg.run_id(),
            config: cfg.clone(),
            checkpoints: Vec::new(),
            rows: Vec::new(),
            phase_seconds: Vec::new(),
        }
    }

    /// Last value of `metric` for `sample_id`.
    pub fn last(&self, metric: &str, sample_id: &str) -> Option<f64> {
        self.rows
            .iter()
            .rev()
            .find(|r| r.metric == metric && r.sample_id == sample_id)
            .map(|r| r.value)
    }

    /// Rows of `metric` at `step`.
    pub fn at_step<'a>(
        &'a self,
        metric: &'a str,
        step: usize,
    ) -> impl Iterator<Item = &'a MetricRow> + 'a {
        self.rows
            .iter()
            .filter(move |r| r.metric == metric && r.step == step)
    }

    fn push(&mut self, step: usize, sample_id: &str, metric: &str, value: f64) {
        self.rows
            .push(MetricRow::new(&self.run_id, step, sample_id, metric, value));
    }
}

/// Trains a fresh denoiser on the whole dataset (forget samples included)
/// until the loss plateaus or `train.steps` is reached. With `out` the
/// checkpoint lands in `out/checkpoints/base.ckpt`.
pub fn train_base(
    cfg: &RunConfig,
    data: &Dataset,
    out: Option<&RunDir>,
) -> Result<(Denoiser, RunRecord)> {
    cfg.validate()?;
    let started = Instant::now();
    let mut record = RunRecord::new(cfg);
    let sched = cfg.noise_schedule()?;
    let mut model = Denoiser::new(cfg.arch(), &mut phase_rng(cfg.seed, Phase::Init))?;
    let mut rng = phase_rng(cfg.seed, Phase::Train);
    let t = &cfg.train;
    let mut opt = Adam::new(t.lr);
    let mut losses = Vec::with_capacity(t.steps);
    let mut prev_window: Option<f64> = None;
    for step in 0..t.steps {
        let loss = train_step(
            &mut model,
            &mut opt,
            &data.data,
            t.batch_size,
            &sched,
            &mut rng,
        )
        .map_err(|e| Error::Aborted {
            step,
            source: Box::new(e),
        })?;
        if !loss.is_finite() {
            return Err(Error::Aborted {
                step,
                source: Box::new(Error::NonFinite(format!("training loss {loss}"))),
            });
        }
        losses.push(loss);
        let done = step + 1;
        if t.log_every > 0 && done % t.log_every == 0 {
            record.push(done, "-", "train_loss", mean(&losses[done - t.log_every..]));
        }
        if t.plateau_window > 0 && done % t.plateau_window == 0 {
            let cur = mean(&losses[done - t.plateau_window..]);
            if let Some(prev) = prev_window {
                if done >= t.min_steps
                    && (prev - cur) / prev.abs().max(f64::MIN_POSITIVE) < t.plateau_tol
                {
                    break;
                }
            }
            prev_window = Some(cur);
        }
    }
    record.push(losses.len(), "-", "train_steps", losses.len() as f64);
    if let Some(dir) = out {
        let path = dir.checkpoint("base");
        checkpoint::save(&path, &model, &sched)?;
        record.checkpoints.push(path);
    }
    record
        .phase_seconds
        .push(("train".into(), started.elapsed().as_secs_f64()));
    Ok((model, record))
}

/// The configured objective, wrapped in the configured time window and
/// frequency filter. Preference objectives use `base` as the frozen reference.
pub fn build_objective(
    cfg: &RunConfig,
    base: &Denoiser,
    data: &Dataset,
) -> Result<Box<dyn Objective>> {
    let u = &cfg.unlearn;
    let inner: Box<dyn Objective> = match u.objective {
        ObjectiveKind::Ga => Box::new(GradientAscent {
            retain_weight: u.retain_weight,
        }),
        ObjectiveKind::EraseDiff => Box::new(EraseDiff {
            beta_retain: u.beta_retain,
        }),
        ObjectiveKind::Siss => Box::new(Siss {
            config: SissConfig::new(u.siss_lambda, u.siss_beta, u.siss_importance_sampling)?,
        }),
        ObjectiveKind::Dpo | ObjectiveKind::Kto => {
            let config = PreferenceConfig::new(u.pref_beta, Some(Arc::new(base.clone())))?
                .with_kto_weights(u.kto_w_desirable, u.kto_w_undesirable);
            if u.objective == ObjectiveKind::Dpo {
                Box::new(Dpo { config })
            } else {
                Box::new(Kto { config })
            }
        }
    };
    let window = cfg.time_window_config()?;
    let time = (!window.is_full()).then_some(window);
    let freq = cfg.frequency_filter()?.map(|filter| {
        FrequencySelection::new(filter, data.image)
            .route(cfg.freq_filter.route)
            .target(cfg.freq_filter.target)
    });
    if time.is_none() && freq.is_none() {
        return Ok(inner);
    }
    Ok(Box::new(
        selective_wrap(inner, time, freq).with_windowed_retain(cfg.time_window.retain),
    ))
}

/// Fine-tunes a copy of `base` with the configured objective, evaluating at
/// step 0, every `eval.cadence` steps and at the end.
pub fn run_unlearn(
    cfg: &RunConfig,
    base: &Denoiser,
    data: &Dataset,
    out: Option<&RunDir>,
) -> Result<(Denoiser, RunRecord)> {
    cfg.validate()?;
    let started = Instant::now();
    let mut record = RunRecord::new(cfg);
    let sched = cfg.noise_schedule()?;
    let u = &cfg.unlearn;
    let objective = build_objective(cfg, base, data)?;
    let mut run = UnlearnRun::new(
        base.clone(),
        sched.clone(),
        objective,
        data.forget(),
        data.retain_subset(u.retain_subset, u.retain_pick),
        u.lr,
        u.batch_size,
    );
    run.clip_norm = u.clip_norm;
    let mut rng = phase_rng(cfg.seed, Phase::Unlearn);

    record
        .rows
        .extend(eval_suite(&run.model, base, data, cfg, 0)?);
    for step in 1..=u.steps {
        let m = unlearn_step(&mut run, &mut rng).map_err(|e| Error::Aborted {
            step,
            source: Box::new(e),
        })?;
        record.push(step, "-", "unlearn_loss", m.loss);
        record.push(step, "-", "unlearn_grad_norm", m.grad_norm);
        let cadence_hit = cfg.eval.cadence > 0 && step % cfg.eval.cadence == 0;
        if cadence_hit || step == u.steps {
            record
                .rows
                .extend(eval_suite(&run.model, base, data, cfg, step)?);
        }
    }
    if let Some(dir) = out {
        let path = dir.checkpoint("final");
        checkpoint::save(&path, &run.model, &sched)?;
        record.checkpoints.push(path);
    }
    record
        .phase_seconds
        .push(("unlearn".into(), started.elapsed().as_secs_f64()));
    Ok((run.model, record))
}

fn embedding(cfg: &RunConfig, data: &Dataset) -> Box<dyn Embedding> {
    match (cfg.eval.embedding, data.image) {
        (super::config::EmbeddingKind::PatchHistogram, Some(shape)) => {
            Box::new(PatchHistogram::new(shape))
        }
        _ => Box::new(FlattenCosine),
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Mean ε-matching loss over `x` with `draws` noise draws per row.
fn mean_eps_loss(
    model: &Denoiser,
    x: &Tensor,
    sched: &NoiseSchedule,
    draws: usize,
    rng: &mut SeededRng,
) -> Result<f64> {
    use rand::Rng;
    let idx: Vec<usize> = (0..x.rows())
        .flat_map(|i| std::iter::repeat_n(i, draws))
        .collect();
    let x0 = x.select_rows(&idx);
    let t: Vec<usize> = (0..idx.len())
        .map(|_| rng.random_range(0..sched.steps()))
        .collect();
    let eps = Tensor::randn(x0.shape(), rng);
    let mut g = Graph::new();
    let params: Vec<_> = model
        .bind(&mut g)
        .into_iter()
        .map(|p| {
            let v = g.value(p).clone();
            g.constant(v)
        })
        .collect();
    let loss = epsilon_loss(&mut g, model, &params, &x0, &t, &eps, sched)?;
    Ok(g.value(loss).item())
}

/// Metric rows for `model` at `step`, with `base` as the pre-unlearning
/// reference for deltas.
pub fn eval_suite(
    model: &Denoiser,
    base: &Denoiser,
    data: &Dataset,
    cfg: &RunConfig,
    step: usize,
) -> Result<Vec<MetricRow>> {
    let run_id = cfg.run_id();
    let sched = cfg.noise_schedule()?;
    let e = &cfg.eval;
    let mut rng = phase_rng(cfg.seed, Phase::Eval);
    let mut rows = Vec::new();
    let mut push = |sample_id: &str, metric: &str, value: f64| {
        rows.push(MetricRow::new(&run_id, step, sample_id, metric, value));
    };

    let forget = data.forget();
    let retain = data.retain();
    let n_retain = e.max_per_group.min(data.retain_idx.len());
    let groups: Vec<(String, Tensor)> = data
        .forget_idx
        .iter()
        .map(|&i| (format!("forget:{i}"), data.data.select_rows(&[i])))
        .chain(
            data.retain_idx[..n_retain]
                .iter()
                .map(|&i| (format!("retain:{i}"), data.data.select_rows(&[i]))),
        )
        .collect();

    if e.wants("loss") {
        push(
            "-",
            "forget_loss",
            mean_eps_loss(model, &forget, &sched, e.grad_draws, &mut rng)?,
        );
        let retain_probe = retain.select_rows(&(0..retain.rows().min(256)).collect::<Vec<_>>());
        push(
            "-",
            "retain_loss",
            mean_eps_loss(model, &retain_probe, &sched, e.grad_draws, &mut rng)?,
        );
    }

    if data.image.is_none() && (e.wants("hit_rate") || e.wants("coverage")) {
        let samples = sample(model, cfg.data_dim(), &sched, e.samples, &mut rng)?;
        if e.wants("hit_rate") {
            push(
                "-",
                "forget_hit_rate",
                forget_hit_rate(&samples, &forget, e.hit_radius)?,
            );
        }
        if e.wants("coverage") {
            push(
                "-",
                "retain_coverage",
                retain_coverage(&samples, &retain, e.coverage_radius)?,
            );
        }
    }

    if e.wants("grad_norm") {
        for (id, x0) in &groups {
            let state = rng.clone();
            let after = grad_norm_of(model, x0, &sched, e.grad_draws, None, &mut rng)?;
            let before = grad_norm_of(base, x0, &sched, e.grad_draws, None, &mut state.clone())?;
            push(id, "grad_norm", after);
            push(id, "grad_norm_delta", after - before);
        }
    }

    let Some(shape) = data.image else {
        return Ok(rows);
    };

    if e.wants("freq_grad_norm") {
        for (id, x0) in &groups {
            let state = rng.clone();
            let after = freq_decomposed_grad_norm(
                model,
                x0,
                shape,
                &sched,
                e.freq_cutoff,
                e.grad_draws,
                None,
                &mut rng,
            )?;
            let before = freq_decomposed_grad_norm(
                base,
                x0,
                shape,
                &sched,
                e.freq_cutoff,
                e.grad_draws,
                None,
                &mut state.clone(),
            )?;
            push(id, "grad_norm_low", after.low);
            push(id, "grad_norm_high", after.high);
            push(id, "grad_norm_low_delta", after.low - before.low);
            push(id, "grad_norm_high_delta", after.high - before.high);
        }
    }

    if e.wants("sscd") || e.wants("psd") {
        let embed = embedding(cfg, data);
        let sscd_cfg = cfg.sscd_config();
        for (id, x0) in &groups {
            for &ts in &cfg.t_starts() {
                let recon = denoise_from(model, x0, ts, &sched, &mut rng)?;
                if e.wants("sscd") {
                    push(
                        id,
                        &format!("sscd_plain_t{ts}"),
                        sscd_plain(x0.data(), recon.data(), embed.as_ref())?,
                    );
                    push(
                        id,
                        &format!("sscd_norm_t{ts}"),
                        sscd_norm(x0.data(), recon.data(), embed.as_ref(), &sscd_cfg)?,
                    );
                }
                if e.wants("psd") {
                    let a = psd_radial_slice(&centered(x0.data()), shape, e.psd_bins)?;
                    let b = psd_radial_slice(&centered(recon.data()), shape, e.psd_bins)?;
                    let delta = a
                        .log10()
                        .iter()
                        .zip(b.log10())
                        .skip(1)
                        .map(|(x, y)| (y - x).abs())
                        .sum::<f64>()
                        / (e.psd_bins - 1) as f64;
                    push(id, &format!("psd_log_delta_t{ts}"), delta);
                }
            }
        }
    }
    Ok(rows)
}

fn centered(x: &[f64]) -> Vec<f64> {
    let m = mean(x);
    x.iter().map(|v| v - m).collect()
}

/// Full `unlearn` pipeline: dataset, base model (loaded or trained), then
/// unlearning. Writes the snapshot, checkpoints and `metrics.csv` into `out`.
pub fn run_pipeline(
    cfg: &RunConfig,
    base_checkpoint: Option<&Path>,
    out: &Path,
) -> Result<RunRecord> {
    cfg.validate()?;
    let dir = RunDir::create(out)?;
    write_text(&dir.snapshot(), &cfg.to_text())?;
    let data = make_dataset(&cfg.dataset)?;
    let (base, mut record) = match base_checkpoint {
        Some(path) => (load_compatible(cfg, path)?, RunRecord::new(cfg)),
        None => train_base(cfg, &data, Some(&dir))?,
    };
    let (_, unlearn) = run_unlearn(cfg, &base, &data, Some(&dir))?;
    record.rows.extend(unlearn.rows);
    record.checkpoints.extend(unlearn.checkpoints);
    record.phase_seconds.extend(unlearn.phase_seconds);
    write_text(&dir.metrics(), &metrics_csv(&record.rows))?;
    Ok(record)
}

/// Loads a checkpoint and checks it matches the configured architecture
/// and noise schedule.
pub fn load_compatible(cfg: &RunConfig, path: &Path) -> Result<Denoiser> {
    let (model, sched) = checkpoint::load(path)?;
    if model.arch() != &cfg.arch() {
        return Err(Error::Checkpoint(format!(
            "{}: architecture {:?} does not match the config's {:?}",
            path.display(),
            model.arch(),
            cfg.arch()
        )));
    }
    let want = cfg.noise_schedule()?;
    if sched.steps() != want.steps()
        || sched.beta_start() != want.beta_start()
        || sched.beta_end() != want.beta_end()
    {
        return Err(Error::Checkpoint(format!(
            "{}: noise schedule does not match the config",
            path.display()
        )));
    }
    Ok(model)
}

/// One window of the toy time-window study.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowOutcome {
    pub name: String,
    pub start: f64,
    pub end: f64,
    pub forget_hit_rate: f64,
    pub retain_coverage: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyFigure {
    pub base: WindowOutcome,
    pub windows: Vec<WindowOutcome>,
    pub samples: Vec<(String, Tensor)>,
}

impl ToyFigure {
    pub fn window(&self, name: &str) -> Option<&WindowOutcome> {
        self.windows.iter().find(|w| w.name == name)
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("window,start,end,forget_hit_rate,retain_coverage\n");
        for w in std::iter::once(&self.base).chain(&self.windows) {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                w.name, w.start, w.end, w.forget_hit_rate, w.retain_coverage
            ));
        }
        out
    }
}

/// Early, middle and late windows as fractions of `T`.
pub const TOY_WINDOWS: [(&str, f64, f64); 3] = [
    ("early", 0.0, 0.25),
    ("middle", 0.25, 0.75),
    ("late", 0.75, 1.0),
];

fn toy_outcome(
    name: &str,
    start: f64,
    end: f64,
    samples: &Tensor,
    data: &Dataset,
    cfg: &RunConfig,
) -> Result<WindowOutcome> {
    Ok(WindowOutcome {
        name: name.into(),
        start,
        end,
        forget_hit_rate: forget_hit_rate(samples, &data.forget(), cfg.eval.hit_radius)?,
        retain_coverage: retain_coverage(samples, &data.retain(), cfg.eval.coverage_radius)?,
    })
}

/// The time-window study on point data: one base model, then the configured
/// objective restricted to each window in turn. Every window is scored on
/// samples drawn with the same evaluation noise.
pub fn toy_figure(cfg: &RunConfig, out: Option<&Path>) -> Result<ToyFigure> {
    cfg.validate()?;
    if cfg.dataset.kind.is_image() {
        return Err(Error::Config(
            "toyfig needs a point dataset (two-moons or gaussians)".into(),
        ));
    }
    let dir = out.map(RunDir::create).transpose()?;
    if let Some(d) = &dir {
        write_text(&d.snapshot(), &cfg.to_text())?;
    }
    let data = make_dataset(&cfg.dataset)?;
    let (base, _) = train_base(cfg, &data, dir.as_ref())?;
    let sched = cfg.noise_schedule()?;
    let draw = |model: &Denoiser| -> Result<Tensor> {
        let mut rng = phase_rng(cfg.seed, Phase::Eval);
        sample(model, cfg.data_dim(), &sched, cfg.eval.samples, &mut rng)
    };
    let base_samples = draw(&base)?;
    let base_outcome = toy_outcome("base", 0.0, 0.0, &base_samples, &data, cfg)?;

    let mut windows = Vec::new();
    let mut samples = Vec::new();
    for (name, start, end) in TOY_WINDOWS {
        let mut wcfg = cfg.clone();
        wcfg.time_window.start = start;
        wcfg.time_window.end = end;
        // hit rate and coverage come from the shared draw below
        wcfg.eval.metrics = vec!["loss".into()];
        let (model, _) = run_unlearn(&wcfg, &base, &data, None)?;
        let s = draw(&model)?;
        windows.push(toy_outcome(name, start, end, &s, &data, cfg)?);
        if let Some(d) = &dir {
            write_samples(&d.samples(name), &s)?;
        }
        samples.push((name.to_string(), s));
    }
    let fig = ToyFigure {
        base: base_outcome,
        windows,
        samples,
    };
    if let Some(d) = &dir {
        write_text(&d.root.join("summary.csv"), &fig.summary_csv())?;
    }
    Ok(fig)
}
