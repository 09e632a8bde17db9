//! `flexup`: synthesize data, train, upsample, evaluate and gradient-check.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data error,
//! 4 failed check.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flexup_core::autodiff::Fault;
use flexup_core::config::TrainConfig;
use flexup_core::losses::LossWeights;
use flexup_core::metrics::EvalOptions;
use flexup_core::net::{ParamStore, Upsampler};
use flexup_core::pipeline::{evaluate_clouds, parse_metrics, upsample_cloud};
use flexup_core::synth::{read_dataset, write_dataset, DatasetSpec, SurfaceSpec};
use flexup_core::train::{model_gradcheck, train, Objective};
use flexup_core::{xyz, Error};

#[derive(Parser)]
#[command(name = "flexup", version, about = "Flexible-factor point cloud upsampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample analytic surfaces into a training/evaluation dataset.
    Synth(SynthArgs),
    /// Train a model with randomly drawn upsampling factors.
    Train(TrainArgs),
    /// Upsample an XYZ cloud by an integer factor.
    Upsample(UpsampleArgs),
    /// Compare a predicted cloud with ground truth.
    Eval(EvalArgs),
    /// Check analytic against finite-difference gradients of the training loss.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct Ablations {
    /// Skip the self-attention refinement stage.
    #[arg(long)]
    no_refine: bool,
    /// Drop the coarse Chamfer term.
    #[arg(long)]
    no_coarse_loss: bool,
    /// Drop the projection term.
    #[arg(long)]
    no_pro_loss: bool,
    /// Drop the uniform term.
    #[arg(long)]
    no_uni_loss: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// Dataset root directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated surfaces: plane, sphere, torus, bump.
    #[arg(long, default_value = "bump,sphere,torus")]
    surfaces: String,
    /// Shapes per surface.
    #[arg(long, default_value_t = 4)]
    shapes: usize,
    /// Points in each sparse input.
    #[arg(long, default_value_t = 512)]
    points: usize,
    /// Comma-separated factors with dense ground truth.
    #[arg(long, default_value = "2,4,8")]
    factors: String,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset root written by `synth`.
    #[arg(long)]
    data: PathBuf,
    /// Output checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// `key=value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rmax: Option<usize>,
    #[arg(long)]
    patch_size: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    /// CSV loss log; defaults to standard output.
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    ablations: Ablations,
}

#[derive(Args)]
struct UpsampleArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    factor: usize,
    #[arg(long, default_value_t = 64)]
    patch_size: usize,
    /// FPS anchors; defaults to ceil(2M / N).
    #[arg(long)]
    coverage: Option<usize>,
    #[arg(long)]
    no_refine: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Surface description (`surface.txt`), needed for p2f.
    #[arg(long)]
    surface: Option<PathBuf>,
    /// Comma-separated: cd, hd, jsd, p2f, nuc.
    #[arg(long, default_value = "cd,hd,jsd")]
    metrics: String,
    /// JSON report path; `metric=value` lines always go to standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    ablations: Ablations,
    #[arg(long, hide = true)]
    inject_fault: bool,
}

enum Failure {
    Core(Error),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Core(Error::Io(e))
    }
}

fn parse_list(s: &str) -> Result<Vec<usize>, Error> {
    s.split(',')
        .map(|x| x.trim().parse().map_err(|e| Error::Config(format!("bad factor {x:?}: {e}"))))
        .collect()
}

fn synth(a: SynthArgs) -> Result<(), Failure> {
    let spec = DatasetSpec {
        surfaces: a.surfaces.split(',').map(|s| s.trim().to_string()).collect(),
        shapes_per_surface: a.shapes,
        sparse_count: a.points,
        factors: parse_list(&a.factors)?,
        seed: a.seed,
    };
    let dirs = write_dataset(&a.out, &spec)?;
    println!("wrote {} shapes under {}", dirs.len(), a.out.display());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<(), Failure> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::from_file(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(r) = a.rmax {
        cfg.net.r_max = r;
    }
    if let Some(n) = a.patch_size {
        cfg.patch_size = n;
    }
    if a.iterations.is_some() {
        cfg.iterations = a.iterations;
    }
    let ab = &a.ablations;
    cfg.use_refinement &= !ab.no_refine;
    cfg.coarse_loss &= !ab.no_coarse_loss;
    cfg.pro_loss &= !ab.no_pro_loss;
    cfg.uni_loss &= !ab.no_uni_loss;
    cfg.validate()?;
    let data = read_dataset(&a.data)?;
    let model = match &a.log {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            let m = train(&cfg, &data, &mut w)?;
            w.flush()?;
            m
        }
        None => train(&cfg, &data, &mut io::stdout().lock())?,
    };
    write_checkpoint(&model.params, &a.out)
}

fn write_checkpoint(params: &ParamStore, path: &Path) -> Result<(), Failure> {
    let mut w = BufWriter::new(File::create(path)?);
    params.save(&mut w)?;
    w.flush()?;
    Ok(())
}

fn upsample(a: UpsampleArgs) -> Result<(), Failure> {
    let params = ParamStore::load(io::BufReader::new(File::open(&a.checkpoint)?))?;
    let mut model = Upsampler::new(params);
    model.use_refinement = !a.no_refine;
    let r_max = model.config().r_max;
    if a.factor < 2 || a.factor > r_max {
        return Err(Error::Range(format!(
            "factor {} outside [2, {r_max}]; checkpoint {} has R_max = {r_max}",
            a.factor,
            a.checkpoint.display()
        ))
        .into());
    }
    let input = xyz::read(&a.input)?;
    let out = upsample_cloud(&model, &input.points, a.factor, a.patch_size, a.coverage)?;
    xyz::write(&a.out, &out.points, None)?;
    Ok(())
}

fn eval(a: EvalArgs) -> Result<(), Failure> {
    let metrics = parse_metrics(&a.metrics)?;
    let pred = xyz::read(&a.pred)?.points;
    let gt = xyz::read(&a.gt)?.points;
    let surface = match &a.surface {
        Some(p) => Some(fs::read_to_string(p)?.parse::<SurfaceSpec>()?),
        None => None,
    };
    let report = evaluate_clouds(&pred, &gt, surface.as_ref(), &metrics, &EvalOptions::default())?;
    print!("{}", report.to_text(&metrics));
    if let Some(p) = &a.out {
        fs::write(p, report.to_json(&metrics))?;
    }
    Ok(())
}

fn gradcheck_cmd(a: GradcheckArgs) -> Result<(), Failure> {
    let ab = &a.ablations;
    let d = LossWeights::default();
    let obj = Objective {
        weights: LossWeights {
            alpha: d.alpha,
            beta: if ab.no_coarse_loss { 0.0 } else { d.beta },
            gamma: if ab.no_pro_loss { 0.0 } else { d.gamma },
            zeta: if ab.no_uni_loss { 0.0 } else { d.zeta },
        },
        uniform: flexup_core::losses::UniformConfig { p: 0.05, max_seeds: 64 },
        use_refinement: !ab.no_refine,
    };
    let fault = a.inject_fault.then_some(Fault::ReluGradScale(1.5));
    let r = model_gradcheck(a.seed, &obj, fault)?;
    println!("checked={}", r.checked);
    println!("loss={}", r.value);
    println!("max_rel_error={:e}", r.max_rel_error);
    println!("tolerance={:e}", r.tolerance);
    if r.passed() {
        println!("result=pass");
        Ok(())
    } else {
        println!("result=fail");
        Err(Failure::Check(format!(
            "max relative error {:e} at {:?} (analytic {}, numeric {})",
            r.max_rel_error, r.worst, r.analytic_at_worst, r.numeric_at_worst
        )))
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Range(_) => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Upsample(a) => upsample(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Core(e)) => {
            eprintln!("flexup: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Check(msg)) => {
            eprintln!("flexup: check failed: {msg}");
            ExitCode::from(4)
        }
    }
}
