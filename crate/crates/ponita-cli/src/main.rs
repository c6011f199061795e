//! Command-line front end for the `ponita` library.
//!
//! Subcommands: `grid` (orientation-grid generation), `audit` (the
//! invariance/equivariance property battery), `gradcheck` (finite-difference
//! gradient checks), `nbody gen|train|eval` and `toy-energy gen|train|eval`
//! (the two desk-scale regression tasks), and `infer` (run a trained
//! checkpoint on a point-cloud file).
//!
//! Exit codes: 0 on success, 1 on runtime failure or a failed audit,
//! 2 on a command-line usage error (clap's default).

use std::fs::File;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use ponita::data::{load_clouds, save_clouds, CloudTargets, PointCloudFile};
use ponita::grids::{
    cached_repulsion_grid, min_pairwise_angle, repulsion_grid_default, save_grid, SphereGrid,
};
use ponita::layers::{Conditioning, Ponita, PonitaConfig, ReadoutKind};
use ponita::nbody::{
    cloud_to_sample, cloud_to_state, nbody_generate, sample_to_cloud, NBodyConfig,
};
use ponita::tensor::Scalar;
use ponita::train::{
    cloud_to_energy_inputs, cloud_to_energy_sample, evaluate_displacement, evaluate_energy,
    load_model, matched_distance_only_config, predict_displacement, predict_energy, save_model,
    split_train_val, toy_energy_generate, train_displacement, train_energy, EnergySample,
    TrainConfig, TrainOutcome,
};

/// Orientation grids used by models are always derived from this seed, so a
/// checkpoint's grid can be rebuilt from its `config.json` alone.
const MODEL_GRID_SEED: u64 = 0;

type CliError = Box<dyn std::error::Error>;

#[derive(Parser)]
#[command(
    name = "ponita",
    version,
    about = "Equivariant point-cloud networks: grids, audits, training, inference",
    subcommand_required = true,
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a repulsion-optimized orientation grid and write it to disk
    Grid(GridArgs),
    /// Run the invariance/equivariance property battery
    Audit(AuditArgs),
    /// Run finite-difference gradient checks on every layer and network
    Gradcheck(GradcheckArgs),
    /// Charged-particle displacement task
    Nbody {
        #[command(subcommand)]
        action: TaskCmd,
    },
    /// Pairwise-potential energy and force task
    #[command(name = "toy-energy")]
    ToyEnergy {
        #[command(subcommand)]
        action: TaskCmd,
    },
    /// Run a trained checkpoint on a point-cloud file
    Infer(InferArgs),
}

#[derive(Args)]
struct GridArgs {
    /// Ambient dimension (the grid covers the unit sphere in this space)
    #[arg(long, default_value_t = 3)]
    dim: usize,
    /// Number of grid points
    #[arg(long, default_value_t = 12)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory the grid file is written into
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct AuditArgs {
    /// Random trials per invariance check
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum TaskCmd {
    /// Generate a synthetic labelled dataset
    Gen(GenArgs),
    /// Train a model and write a checkpoint directory
    Train(TrainArgs),
    /// Evaluate a checkpoint on a labelled dataset
    Eval(EvalArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Number of samples
    #[arg(long, default_value_t = 2000)]
    count: usize,
    /// Particles per sample
    #[arg(long, default_value_t = 5)]
    particles: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output JSON file
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Labelled dataset (JSON point clouds)
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint directory to write (params.ckpt, config.json, metrics.csv)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    layers: usize,
    #[arg(long, default_value_t = 64)]
    channels: usize,
    /// Orientation-grid resolution
    #[arg(long, default_value_t = 12)]
    n: usize,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 5e-4)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Train in single precision (master weights stay f64)
    #[arg(long = "f32")]
    use_f32: bool,
    /// Swap in the distance-only baseline with a matched parameter budget
    #[arg(long)]
    baseline: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Labelled dataset (JSON point clouds)
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint directory written by `train`
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    /// Evaluate in single precision
    #[arg(long = "f32")]
    use_f32: bool,
}

#[derive(Args)]
struct InferArgs {
    /// Point-cloud file (targets optional; ignored if present)
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint directory written by `train`
    #[arg(long)]
    checkpoint: PathBuf,
    /// Write predictions as a point-cloud file (targets filled in)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Predict in single precision
    #[arg(long = "f32")]
    use_f32: bool,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Task {
    Nbody,
    ToyEnergy,
}

impl Task {
    fn name(self) -> &'static str {
        match self {
            Task::Nbody => "nbody",
            Task::ToyEnergy => "toy-energy",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<ExitCode, CliError> {
    match command {
        Command::Grid(args) => cmd_grid(&args).map(|()| ExitCode::SUCCESS),
        Command::Audit(args) => cmd_audit(&args),
        Command::Gradcheck(args) => cmd_gradcheck(&args),
        Command::Nbody { action } => cmd_task(Task::Nbody, action).map(|()| ExitCode::SUCCESS),
        Command::ToyEnergy { action } => {
            cmd_task(Task::ToyEnergy, action).map(|()| ExitCode::SUCCESS)
        }
        Command::Infer(args) => cmd_infer(&args).map(|()| ExitCode::SUCCESS),
    }
}

// ---------------------------------------------------------------------------
// grid / audit / gradcheck
// ---------------------------------------------------------------------------

fn cmd_grid(args: &GridArgs) -> Result<(), CliError> {
    let grid = repulsion_grid_default(args.dim, args.n, args.seed)?;
    std::fs::create_dir_all(&args.out)?;
    let path = save_grid(&grid, &args.out)?;
    println!(
        "wrote {} ({} points on S^{}, min pairwise angle {:.3}°)",
        path.display(),
        grid.len(),
        args.dim - 1,
        min_pairwise_angle(&grid).to_degrees()
    );
    Ok(())
}

fn cmd_audit(args: &AuditArgs) -> Result<ExitCode, CliError> {
    let report = ponita::audit::run_audit(args.trials, args.seed)?;
    println!("{report}");
    Ok(if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<ExitCode, CliError> {
    let report = ponita::audit::run_gradcheck(args.seed)?;
    println!("{report}");
    Ok(if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

// ---------------------------------------------------------------------------
// gen / train / eval
// ---------------------------------------------------------------------------

fn cmd_task(task: Task, action: TaskCmd) -> Result<(), CliError> {
    match action {
        TaskCmd::Gen(args) => cmd_gen(task, &args),
        TaskCmd::Train(args) if args.use_f32 => cmd_train::<f32>(task, &args),
        TaskCmd::Train(args) => cmd_train::<f64>(task, &args),
        TaskCmd::Eval(args) if args.use_f32 => cmd_eval::<f32>(task, &args),
        TaskCmd::Eval(args) => cmd_eval::<f64>(task, &args),
    }
}

fn cmd_gen(task: Task, args: &GenArgs) -> Result<(), CliError> {
    let clouds: Vec<PointCloudFile> = match task {
        Task::Nbody => {
            let config = NBodyConfig {
                particles: args.particles,
                ..NBodyConfig::default()
            };
            nbody_generate(args.count, args.seed, &config)
                .iter()
                .map(sample_to_cloud)
                .collect()
        }
        Task::ToyEnergy => toy_energy_generate(args.count, args.particles, args.seed),
    };
    if let Some(dir) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    save_clouds(&clouds, &args.out)?;
    println!(
        "wrote {} samples ({} particles each) to {}",
        clouds.len(),
        args.particles,
        args.out.display()
    );
    Ok(())
}

/// The full anisotropic model for either task at the CLI's scale knobs.
fn model_config(task: Task, args: &TrainArgs, scalar_width: usize) -> PonitaConfig {
    let (scalar_in, vector_in, edge_extra, readout) = match task {
        Task::Nbody => (2, 2, 1, ReadoutKind::Vector),
        Task::ToyEnergy => (scalar_width, 0, 0, ReadoutKind::Scalar),
    };
    PonitaConfig {
        dim: 3,
        num_ori: args.n,
        channels: args.channels,
        layers: args.layers,
        basis_dim: 32,
        degree: 3,
        widen: 2,
        length_scale: 1.0,
        scalar_in,
        vector_in,
        edge_extra,
        readout,
        conditioning: Conditioning::Anisotropic,
        mean_aggregation: false,
    }
}

fn train_config(args: &TrainArgs) -> TrainConfig {
    TrainConfig {
        epochs: args.epochs,
        batch: args.batch,
        lr: args.lr,
        warmup: (args.epochs / 10).max(1),
        seed: args.seed,
        ..TrainConfig::default()
    }
}

fn cmd_train<T: Scalar>(task: Task, args: &TrainArgs) -> Result<(), CliError> {
    let clouds = load_clouds(&args.data)?;
    let out_dir = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("runs/{}", task.name())));
    std::fs::create_dir_all(&out_dir)?;
    let grid = cached_repulsion_grid(3, args.n, MODEL_GRID_SEED)?;
    let config = train_config(args);

    // Resolve the model configuration, optionally swapping in the
    // parameter-matched distance-only baseline.
    let build = |full: PonitaConfig| -> (Ponita, String) {
        if args.baseline {
            let (cfg, mismatch) = matched_distance_only_config(&full);
            (
                Ponita::new(cfg, args.seed),
                format!(
                    " (distance-only baseline, parameter mismatch {:.2}%)",
                    mismatch * 100.0
                ),
            )
        } else {
            (Ponita::new(full, args.seed), String::new())
        }
    };

    let started = Instant::now();
    let outcome = match task {
        Task::Nbody => {
            let samples = clouds
                .iter()
                .map(cloud_to_sample)
                .collect::<Result<Vec<_>, _>>()?;
            let (train, val) = split_train_val(samples, 0.1, args.seed);
            let (mut model, note) = build(model_config(task, args, 0));
            announce::<T>(&model, &note, train.len(), val.len(), args);
            let log = Progress::new(File::create(out_dir.join("metrics.csv"))?, args.epochs);
            let outcome = train_displacement::<T>(&mut model, &grid, &train, &val, &config, log)?;
            save_model(&out_dir, &model)?;
            outcome
        }
        Task::ToyEnergy => {
            let samples = clouds
                .iter()
                .map(cloud_to_energy_sample)
                .collect::<Result<Vec<_>, _>>()?;
            let width = samples
                .first()
                .map(|s| s.scalar_width)
                .ok_or("empty dataset")?;
            let (train, val) = split_train_val(samples, 0.1, args.seed);
            let (mut model, note) = build(model_config(task, args, width));
            announce::<T>(&model, &note, train.len(), val.len(), args);
            let log = Progress::new(File::create(out_dir.join("metrics.csv"))?, args.epochs);
            let outcome = train_energy::<T>(&mut model, &grid, &train, &val, &config, log)?;
            save_model(&out_dir, &model)?;
            outcome
        }
    };
    std::fs::write(
        out_dir.join("train_config.json"),
        serde_json::to_string_pretty(&config)? + "\n",
    )?;
    report_outcome(&outcome, started.elapsed().as_secs_f64());
    println!("checkpoint written to {}", out_dir.display());
    Ok(())
}

fn announce<T: Scalar>(model: &Ponita, note: &str, train: usize, val: usize, args: &TrainArgs) {
    println!(
        "training{note}: {} parameters, {train} train / {val} val samples, {} epochs, batch {}, {}",
        model.param_count(),
        args.epochs,
        args.batch,
        T::NAME,
    );
}

fn report_outcome(outcome: &TrainOutcome, secs: f64) {
    println!(
        "done in {secs:.1}s: train loss {:.6e} -> {:.6e}, validation loss {:.6e}",
        outcome.initial_train_loss, outcome.final_train_loss, outcome.final_val_loss
    );
}

fn cmd_eval<T: Scalar>(task: Task, args: &EvalArgs) -> Result<(), CliError> {
    let model = load_model(&args.checkpoint)?;
    let grid = model_grid(&model)?;
    let clouds = load_clouds(&args.data)?;
    match task {
        Task::Nbody => {
            expect_readout(&model, ReadoutKind::Vector, "nbody eval")?;
            let samples = clouds
                .iter()
                .map(cloud_to_sample)
                .collect::<Result<Vec<_>, _>>()?;
            let mse = evaluate_displacement::<T>(&model, &grid, &samples, args.batch)?;
            println!("displacement MSE over {} samples: {mse:.6e}", samples.len());
        }
        Task::ToyEnergy => {
            expect_readout(&model, ReadoutKind::Scalar, "toy-energy eval")?;
            let samples = clouds
                .iter()
                .map(cloud_to_energy_sample)
                .collect::<Result<Vec<_>, _>>()?;
            let lambda = TrainConfig::default().lambda_force;
            let (loss, e_mse, f_mse) =
                evaluate_energy::<T>(&model, &grid, &samples, args.batch, lambda)?;
            println!(
                "over {} samples: weighted loss {loss:.6e}, energy MSE {e_mse:.6e}, force MSE {f_mse:.6e}",
                samples.len()
            );
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// infer
// ---------------------------------------------------------------------------

fn model_grid(model: &Ponita) -> Result<SphereGrid, CliError> {
    Ok(cached_repulsion_grid(
        model.config.dim,
        model.config.num_ori,
        MODEL_GRID_SEED,
    )?)
}

fn expect_readout(model: &Ponita, wanted: ReadoutKind, what: &str) -> Result<(), CliError> {
    if model.config.readout != wanted {
        return Err(format!(
            "{what} needs a {wanted:?}-readout checkpoint, found {:?}",
            model.config.readout
        )
        .into());
    }
    Ok(())
}

fn cmd_infer(args: &InferArgs) -> Result<(), CliError> {
    let model = load_model(&args.checkpoint)?;
    let grid = model_grid(&model)?;
    let clouds = load_clouds(&args.data)?;
    let rows = |flat: &[f64]| -> Vec<Vec<f64>> { flat.chunks(3).map(<[f64]>::to_vec).collect() };
    let mut predicted = Vec::with_capacity(clouds.len());
    for (idx, cloud) in clouds.iter().enumerate() {
        let mut out = cloud.clone();
        match model.config.readout {
            // Vector readout: the model predicts per-particle displacements;
            // the output target is the predicted final positions.
            ReadoutKind::Vector => {
                let state = cloud_to_state(cloud)?;
                let disp = if args.use_f32 {
                    predict_displacement::<f32>(&model, &grid, &state)?
                } else {
                    predict_displacement::<f64>(&model, &grid, &state)?
                };
                let finals: Vec<f64> = state
                    .positions
                    .iter()
                    .zip(&disp)
                    .map(|(p, d)| p + d)
                    .collect();
                let mean_disp = disp
                    .chunks(3)
                    .map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt())
                    .sum::<f64>()
                    / state.particles() as f64;
                println!("cloud {idx}: mean predicted displacement {mean_disp:.4}");
                out.targets = Some(CloudTargets {
                    scalar: None,
                    node_vector: Some(rows(&finals)),
                });
            }
            // Scalar readout: the model predicts an energy; forces are its
            // negative position gradient.
            ReadoutKind::Scalar => {
                let sample: EnergySample = cloud_to_energy_inputs(cloud)?;
                let (energy, forces) = if args.use_f32 {
                    predict_energy::<f32>(&model, &grid, &sample)?
                } else {
                    predict_energy::<f64>(&model, &grid, &sample)?
                };
                println!("cloud {idx}: predicted energy {energy:.6}");
                out.targets = Some(CloudTargets {
                    scalar: Some(energy),
                    node_vector: Some(rows(&forces)),
                });
            }
        }
        predicted.push(out);
    }
    if let Some(path) = &args.out {
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        save_clouds(&predicted, path)?;
        println!("predictions written to {}", path.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// progress logging
// ---------------------------------------------------------------------------

/// Forwards the CSV metric stream to the log file and echoes every
/// `every`-th line to stderr so long runs show progress.
struct Progress<W: Write> {
    inner: W,
    every: usize,
    lines: usize,
    buf: Vec<u8>,
}

impl<W: Write> Progress<W> {
    fn new(inner: W, epochs: usize) -> Self {
        Self {
            inner,
            every: (epochs / 10).max(1),
            lines: 0,
            buf: Vec::new(),
        }
    }
}

impl<W: Write> Write for Progress<W> {
    fn write(&mut self, data: &[u8]) -> std::io::Result<usize> {
        for &b in data {
            if b == b'\n' {
                // Line 0 is the CSV header; echo it and then every
                // `every`-th epoch row.
                if self.lines == 0 || (self.lines - 1).is_multiple_of(self.every) {
                    eprintln!("  {}", String::from_utf8_lossy(&self.buf));
                }
                self.lines += 1;
                self.buf.clear();
            } else {
                self.buf.push(b);
            }
        }
        self.inner.write_all(data)?;
        Ok(data.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}
