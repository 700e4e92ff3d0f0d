use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::config::RunConfig;
use super::dataset::make_dataset;
use super::io::{metrics_csv, write_samples, write_text, RunDir};
use super::pipeline::{eval_suite, load_compatible, run_pipeline, toy_figure, train_base};
use crate::diffusion::{denoise_from, sample};
use crate::error::{Error, Result};
use crate::metrics::psd_radial_mean;
use crate::numerics::Tensor;

#[derive(Parser, Debug)]
#[command(
    name = "selforget",
    version,
    about = "Selective unlearning for small diffusion models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug, Default)]
enum Preset {
    /// Two-moons points.
    #[default]
    Toy,
    /// Small synthetic texture images.
    Image,
}

#[derive(Args, Debug)]
struct Common {
    /// Defaults the config file and overrides start from.
    #[arg(long, value_enum, default_value_t)]
    preset: Preset,
    /// Flat key = value config file; the preset supplies absent keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    /// key=value applied after the config file; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match self.preset {
            Preset::Toy => RunConfig::default(),
            Preset::Image => RunConfig::image_default(),
        };
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        for kv in &self.overrides {
            cfg.apply_override(kv)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the base model.
    Train(Common),
    /// Train (or load) the base model, then unlearn the forget set.
    Unlearn {
        #[command(flatten)]
        common: Common,
        /// Start from this checkpoint instead of training.
        #[arg(long)]
        base: Option<PathBuf>,
    },
    /// Draw samples from a checkpoint.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to eval.samples.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Evaluate a checkpoint against a base checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to the evaluated checkpoint itself.
        #[arg(long)]
        base: Option<PathBuf>,
    },
    /// Radial power spectra of originals and, with a checkpoint, reconstructions.
    Psd {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Early, middle and late window study on point data.
    Toyfig(Common),
}

/// Runs the command line and returns the process exit code.
pub fn cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let parsed = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(parsed.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Train(common) => {
            let cfg = common.config()?;
            let dir = prepare(&cfg, &common.out)?;
            let data = make_dataset(&cfg.dataset)?;
            let (_, record) = train_base(&cfg, &data, Some(&dir))?;
            write_text(&dir.metrics(), &metrics_csv(&record.rows))
        }
        Command::Unlearn { common, base } => {
            let cfg = common.config()?;
            run_pipeline(&cfg, base.as_deref(), &common.out).map(drop)
        }
        Command::Sample {
            common,
            checkpoint,
            n,
        } => {
            let cfg = common.config()?;
            let dir = prepare(&cfg, &common.out)?;
            let model = load_compatible(&cfg, &checkpoint)?;
            let mut rng = crate::seeded_rng(cfg.seed);
            let x = sample(
                &model,
                cfg.data_dim(),
                &cfg.noise_schedule()?,
                n.unwrap_or(cfg.eval.samples),
                &mut rng,
            )?;
            write_samples(&dir.samples("samples"), &x)
        }
        Command::Eval {
            common,
            checkpoint,
            base,
        } => {
            let cfg = common.config()?;
            let dir = prepare(&cfg, &common.out)?;
            let model = load_compatible(&cfg, &checkpoint)?;
            let base = match base {
                Some(p) => load_compatible(&cfg, &p)?,
                None => model.clone(),
            };
            let data = make_dataset(&cfg.dataset)?;
            let rows = eval_suite(&model, &base, &data, &cfg, 0)?;
            write_text(&dir.metrics(), &metrics_csv(&rows))
        }
        Command::Psd { common, checkpoint } => {
            let cfg = common.config()?;
            let dir = prepare(&cfg, &common.out)?;
            write_text(
                &dir.root.join("psd.csv"),
                &psd_table(&cfg, checkpoint.as_deref())?,
            )
        }
        Command::Toyfig(common) => {
            let cfg = common.config()?;
            let fig = toy_figure(&cfg, Some(&common.out))?;
            print!("{}", fig.summary_csv());
            Ok(())
        }
    }
}

fn prepare(cfg: &RunConfig, out: &Path) -> Result<RunDir> {
    let dir = RunDir::create(out)?;
    write_text(&dir.snapshot(), &cfg.to_text())?;
    Ok(dir)
}

/// Mean-subtracted radial spectra per group, averaged over the group.
fn psd_table(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<String> {
    let data = make_dataset(&cfg.dataset)?;
    let shape = data
        .image
        .ok_or_else(|| Error::Config("psd needs an image dataset".into()))?;
    let model = checkpoint.map(|p| load_compatible(cfg, p)).transpose()?;
    let sched = cfg.noise_schedule()?;
    let mut rng = crate::seeded_rng(cfg.seed);
    let bins = cfg.eval.psd_bins;
    let mut out = String::from("source,group,t_start,bin,radius,power\n");
    for (group, x) in [("forget", data.forget()), ("retain", data.retain())] {
        let x = x.select_rows(&(0..x.rows().min(cfg.eval.max_per_group)).collect::<Vec<_>>());
        let mut emit = |source: &str, t_start: usize, batch: &Tensor| -> Result<()> {
            let curve = psd_radial_mean(batch, shape, bins, true)?;
            for (b, (r, p)) in curve.radius.iter().zip(&curve.power).enumerate() {
                let _ = writeln!(out, "{source},{group},{t_start},{b},{r},{p}");
            }
            Ok(())
        };
        emit("original", 0, &x)?;
        if let Some(m) = &model {
            for ts in cfg.t_starts() {
                let recon = denoise_from(m, &x, ts, &sched, &mut rng)?;
                emit("reconstruction", ts, &recon)?;
            }
        }
    }
    Ok(out)
}
