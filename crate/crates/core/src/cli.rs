//! Command-line front end of the `fremim` binary.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::metrics::SegReport;
use crate::pipeline::{self, Init, Phase, TrainConfig};
use crate::spectral::{self, FilterKind, FilterSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "fremim", version, about = "Frequency-domain masked image modeling at desk scale")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic phantom dataset.
    GenData(GenDataArgs),
    /// Masked-image pretraining of encoder and decoder.
    Pretrain(TrainArgs),
    /// Cross-validated fine-tuning for segmentation.
    Finetune(FinetuneArgs),
    /// Score a fine-tuned checkpoint.
    Eval(EvalArgs),
    /// Run an ablation table or grid.
    Ablate(AblateArgs),
    /// Write log-magnitude spectra of an image as PGM files.
    PlotSpectrum(PlotArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub n: usize,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 4)]
    pub channels: usize,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// JSON config merged over the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Named recipe: desk, paper-brats2019, paper-isic2018, paper-acdc2017.
    #[arg(long, default_value = "desk")]
    pub preset: String,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dotted config override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self, phase: Phase, extra: &[(String, Value)]) -> Result<TrainConfig> {
        let mut overrides = self
            .set
            .iter()
            .map(|s| pipeline::parse_override(s))
            .collect::<Result<Vec<_>>>()?;
        if let Some(seed) = self.seed {
            overrides.push(("seed".into(), json!(seed)));
        }
        overrides.extend_from_slice(extra);
        if let Some(p) = &self.config {
            if !p.is_file() {
                return Err(Error::Config(format!("config file {} does not exist", p.display())));
            }
        }
        pipeline::resolve_config(phase, &self.preset, self.config.as_deref(), &overrides)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Pretrained checkpoint; shorthand for `--set init=PATH`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Held-out fold to score; all samples when absent.
    #[arg(long)]
    pub fold: Option<usize>,
    /// Split seed; defaults to the checkpoint's training seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Standard table: target, strategy, ratio, alpha, pb, samples, decoder-loss.
    #[arg(long, conflicts_with = "grid")]
    pub table: Option<String>,
    /// Grid axis `KEY=V1,V2,...` over pretraining keys, repeatable.
    #[arg(long, value_name = "KEY=V1,V2")]
    pub grid: Vec<String>,
    /// Pretraining config (the ablated phase).
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Fine-tuning config shared by every cell.
    #[arg(long)]
    pub finetune_config: Option<PathBuf>,
    /// Fine-tuning override, repeatable.
    #[arg(long = "finetune-set", value_name = "KEY=VALUE")]
    pub finetune_set: Vec<String>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Image tensor container.
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10.0)]
    pub pb: f64,
}

/// Runs the CLI on `args` and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e}");
            eprintln!("run `fremim help` for usage");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e, cfg)) => {
            eprintln!("error: {e}");
            if let Some(cfg) = cfg {
                eprintln!("config:\n{}", serde_json::to_string_pretty(&cfg).unwrap_or_default());
            }
            EXIT_RUNTIME
        }
    }
}

enum Failure {
    Usage(Error),
    Runtime(Error, Option<Value>),
}

fn usage(e: Error) -> Failure {
    Failure::Usage(e)
}

fn runtime(cfg: Option<&TrainConfig>) -> impl FnOnce(Error) -> Failure + '_ {
    move |e| Failure::Runtime(e, cfg.map(TrainConfig::to_value))
}

fn load_data(dir: &Path) -> std::result::Result<Dataset, Failure> {
    if !dir.join("manifest.json").is_file() {
        return Err(usage(Error::Config(format!("{} is not a dataset directory", dir.display()))));
    }
    data::load_dataset(dir).map_err(runtime(None))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn dispatch(cmd: &Command) -> std::result::Result<(), Failure> {
    match cmd {
        Command::GenData(a) => {
            let ds = data::gen_dataset(a.n, a.size, a.channels, a.classes, a.seed).map_err(usage)?;
            data::write_dataset(&ds, &a.out).map_err(runtime(None))?;
            println!("wrote {} samples to {}", ds.len(), a.out.display());
            Ok(())
        }
        Command::Pretrain(a) => {
            let cfg = a.cfg.resolve(Phase::Pretrain, &[]).map_err(usage)?;
            let ds = load_data(&a.data)?;
            let (mut rec, model) = pipeline::pretrain(&cfg, &ds).map_err(runtime(Some(&cfg)))?;
            pipeline::save_pretrain(&a.out, &cfg, &mut rec, &model).map_err(runtime(Some(&cfg)))?;
            println!(
                "pretrain: {} steps, loss {:.4e} -> {:.4e}, checkpoint {}",
                rec.steps(),
                rec.losses.first().copied().unwrap_or(f64::NAN),
                rec.losses.last().copied().unwrap_or(f64::NAN),
                a.out.join(pipeline::CHECKPOINT_FILE).display()
            );
            Ok(())
        }
        Command::Finetune(a) => {
            let extra: Vec<(String, Value)> = a
                .checkpoint
                .iter()
                .map(|p| ("init".to_string(), json!(p.to_string_lossy())))
                .collect();
            let cfg = a.cfg.resolve(Phase::Finetune, &extra).map_err(usage)?;
            let ds = load_data(&a.data)?;
            let init = Init::resolve(&cfg).map_err(runtime(Some(&cfg)))?;
            let mut res = pipeline::finetune(&cfg, &ds, &init).map_err(runtime(Some(&cfg)))?;
            pipeline::save_finetune(&a.out, &cfg, &mut res).map_err(runtime(Some(&cfg)))?;
            print!("{}", res.mean.to_table());
            Ok(())
        }
        Command::Eval(a) => {
            let ds = load_data(&a.data)?;
            let ckpt = data::read_checkpoint(&a.checkpoint).map_err(runtime(None))?;
            let model = pipeline::load_seg_model(&ckpt).map_err(runtime(None))?;
            let indices: Vec<usize> = match a.fold {
                None => (0..ds.len()).collect(),
                Some(f) if f >= data::N_FOLDS => {
                    return Err(usage(Error::Config(format!("fold {f} outside 0..{}", data::N_FOLDS))))
                }
                Some(f) => {
                    let seed = match a.seed {
                        Some(s) => s,
                        None => ckpt
                            .metadata
                            .get("seed")
                            .and_then(Value::as_u64)
                            .ok_or_else(|| runtime(None)(Error::Checkpoint("metadata lacks seed".into())))?,
                    };
                    data::make_splits(ds.len(), seed).map_err(runtime(None))?[f].clone()
                }
            };
            let report: SegReport = pipeline::evaluate(&model, &ds, &indices).map_err(runtime(None))?;
            let table = report.to_table();
            if let Some(out) = &a.out {
                std::fs::create_dir_all(out).map_err(|e| runtime(None)(Error::io(out, e)))?;
                let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
                write_text(&out.join("report.json"), &text).map_err(runtime(None))?;
                write_text(&out.join("report.txt"), &table).map_err(runtime(None))?;
            }
            print!("{table}");
            Ok(())
        }
        Command::Ablate(a) => {
            let pre = a.cfg.resolve(Phase::Pretrain, &[]).map_err(usage)?;
            let ft_over = a
                .finetune_set
                .iter()
                .map(|s| pipeline::parse_override(s))
                .collect::<Result<Vec<_>>>()
                .map_err(usage)?;
            let mut ft_over_all = vec![("seed".to_string(), json!(pre.seed))];
            ft_over_all.extend(ft_over);
            let ft = pipeline::resolve_config(Phase::Finetune, &a.cfg.preset, a.finetune_config.as_deref(), &ft_over_all)
                .map_err(usage)?;
            let spec = match &a.table {
                Some(t) => pipeline::ablation_preset(t).map_err(usage)?,
                None => {
                    let axes = a
                        .grid
                        .iter()
                        .map(|s| pipeline::parse_axis(s))
                        .collect::<Result<Vec<_>>>()
                        .map_err(usage)?;
                    pipeline::grid_spec(&axes)
                }
            };
            for c in &spec.cells {
                pipeline::with_overrides(&pre, &c.overrides).map_err(usage)?;
            }
            if a.jobs == 0 {
                return Err(usage(Error::Config("--jobs must be positive".into())));
            }
            let ds = load_data(&a.data)?;
            let report =
                pipeline::run_ablation(&spec, &pre, &ft, &ds, a.jobs, Some(&a.out)).map_err(runtime(Some(&pre)))?;
            print!("{}", report.to_table());
            Ok(())
        }
        Command::PlotSpectrum(a) => {
            if !a.image.is_file() {
                return Err(usage(Error::Config(format!("image {} does not exist", a.image.display()))));
            }
            let paths = plot_spectrum(&a.image, &a.out, a.pb).map_err(runtime(None))?;
            for p in paths {
                println!("{}", p.display());
            }
            Ok(())
        }
    }
}

/// Writes `c{k}_all.pgm`, `c{k}_low.pgm` and `c{k}_high.pgm` per channel.
pub fn plot_spectrum(image: &Path, out: &Path, pb: f64) -> Result<Vec<PathBuf>> {
    let img = data::read_image(image)?;
    let spec = spectral::center(&spectral::dft2(&img)?)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let bands = [
        ("all", spec.clone()),
        ("low", spectral::band_filter(&spec, FilterSpec::new(FilterKind::LowPass, pb))?),
        ("high", spectral::band_filter(&spec, FilterSpec::new(FilterKind::HighPass, pb))?),
    ];
    let mut written = Vec::new();
    for c in 0..img.channels() {
        for (name, s) in &bands {
            let p = out.join(format!("c{c}_{name}.pgm"));
            std::fs::write(&p, spectral::log_magnitude_pgm(s, c)?).map_err(|e| Error::io(&p, e))?;
            written.push(p);
        }
    }
    Ok(written)
}
