use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use learnquad::fem::{Mesh, MeshLevel};
use learnquad::flow::config::{ModelKind, TrainConfig};
use learnquad::flow::{map_nodes, FlowModel};
use learnquad::hermite::smolyak_rule;
use learnquad::pipeline::{self, ErrorRecord, ExperimentConfig, Experiment, PdeReport, RandomField};
use learnquad::rng::{derive_seed, stream};
use learnquad::{Error, Result};

/// Learned sparse-grid quadrature experiments.
#[derive(Parser)]
#[command(name = "learnquad", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment configuration (TOML); built-in desk defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ExperimentArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::desk(),
        };
        if let Some(s) = self.seed {
            c.seed = s;
        }
        Ok(c)
    }
}

#[derive(Args)]
struct ModelArgs {
    /// Trained model; trained from the configuration if omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Training-set size recorded for a supplied model.
    #[arg(long)]
    trainsize: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw modal coefficient samples.
    Sample {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Number of samples.
        #[arg(long, short = 'n', default_value_t = 10_000)]
        n: usize,
    },
    /// Train a generative model on a coefficient dataset.
    Train {
        #[arg(long, default_value = "acf")]
        model: ModelKind,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Path noise level of flow matching.
        #[arg(long)]
        sigma: Option<f64>,
        /// RK4 steps for generation.
        #[arg(long)]
        steps: Option<usize>,
        /// Use the full-size architecture.
        #[arg(long)]
        full: bool,
        /// Write the per-epoch loss here.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Push sparse-grid nodes through a trained model.
    MapNodes {
        #[arg(long)]
        model: PathBuf,
        /// Sparse-grid level.
        #[arg(long)]
        level: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monomial error study.
    Monomials {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Flow-cell flux study.
    Pde {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Per-sample Monte Carlo flux values.
    McReference {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long, default_value = "coarse")]
        mesh: MeshLevel,
    },
    /// Mesh self-convergence study.
    FemConvergence {
        #[command(flatten)]
        exp: ExperimentArgs,
    },
    /// Modal truncation study.
    Truncation {
        #[command(flatten)]
        exp: ExperimentArgs,
    },
    /// Retrain over training-set sizes.
    TrainsizeSweep {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Flux study output.
        #[arg(long)]
        pde_out: Option<PathBuf>,
    },
    /// Print configuration defaults.
    Config {
        #[arg(long)]
        dump: bool,
        /// Full-size settings instead of desk defaults.
        #[arg(long)]
        full: bool,
    },
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_records(path: Option<&Path>, experiment: Experiment, records: &[ErrorRecord]) -> Result<()> {
    let mut out = output(path)?;
    pipeline::write_records(&mut out, experiment, records)?;
    out.flush()?;
    Ok(())
}

fn load_model(path: &Path) -> Result<FlowModel<f64>> {
    FlowModel::read_from(BufReader::new(File::open(path)?))
}

/// A supplied model, or one trained on `train_samples` fresh samples.
fn obtain_model(config: &ExperimentConfig, field: &RandomField, args: &ModelArgs) -> Result<(FlowModel<f64>, usize)> {
    if let Some(p) = &args.model {
        let model = load_model(p)?;
        if model.dim() != field.dim() {
            return Err(Error::InvalidArgument(format!(
                "model dimension {} does not match {} modes",
                model.dim(),
                field.dim()
            )));
        }
        return Ok((model, args.trainsize.unwrap_or(0)));
    }
    let n = config.sweep.train_samples;
    let data = pipeline::generate_dataset(field, n, config.seed)?;
    let seed = derive_seed(config.seed, stream::TRAINING, 0);
    let (model, log) = pipeline::train_model(config.model, &config.train, &data, seed)?;
    eprintln!(
        "trained {} on {n} samples: loss {:.4e} -> {:.4e}",
        config.model,
        log.first().unwrap_or(f64::NAN),
        log.last().unwrap_or(f64::NAN)
    );
    Ok((model, n))
}

fn report_skipped(report: &PdeReport) {
    for s in &report.skipped {
        eprintln!("skipped node {} (weight {:e}) at level {} on {} mesh: {}", s.node, s.weight, s.level, s.mesh, s.reason);
    }
    if !report.skipped.is_empty() {
        eprintln!("warning: {} quadrature nodes skipped", report.skipped.len());
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sample { exp, n } => {
            let c = exp.load()?;
            let field = RandomField::new(&c.law, &c.field)?;
            let data = pipeline::generate_dataset(&field, n, c.seed)?;
            let mut out = output(exp.out.as_deref())?;
            pipeline::write_dataset(&mut out, &data)?;
            out.flush()?;
        }
        Command::Train { model, data, out, seed, epochs, batch, lr, sigma, steps, full, log } => {
            let mut cfg = if full { TrainConfig::full(model) } else { TrainConfig::desk(model) };
            cfg.epochs = epochs.unwrap_or(cfg.epochs);
            cfg.batch_size = batch.unwrap_or(cfg.batch_size);
            cfg.learning_rate = lr.unwrap_or(cfg.learning_rate);
            cfg.cfm_sigma = sigma.unwrap_or(cfg.cfm_sigma);
            cfg.rk4_steps = steps.unwrap_or(cfg.rk4_steps);
            cfg.validate()?;
            let data = pipeline::read_dataset(BufReader::new(File::open(&data)?))?;
            let (trained, losses) = pipeline::train_model(model, &cfg, &data, seed)?;
            let mut w = BufWriter::new(File::create(&out)?);
            trained.write_to(&mut w)?;
            w.flush()?;
            if let Some(p) = log {
                let mut w = BufWriter::new(File::create(p)?);
                losses.write_csv(&mut w)?;
                w.flush()?;
            }
        }
        Command::MapNodes { model, level, out } => {
            let model = load_model(&model)?;
            let rule = map_nodes(&model, &smolyak_rule::<f64>(model.dim(), level)?)?;
            let mut w = output(out.as_deref())?;
            rule.write_csv(&mut w)?;
            w.flush()?;
        }
        Command::Monomials { exp, model } => {
            let c = exp.load()?;
            let field = RandomField::new(&c.law, &c.field)?;
            let (m, n) = obtain_model(&c, &field, &model)?;
            let reference = pipeline::reference_samples(&field, c.sweep.mc_samples, c.seed)?;
            let records = pipeline::monomial_experiment(&c, &m, &reference, n)?;
            write_records(exp.out.as_deref(), Experiment::Monomials, &records)?;
        }
        Command::Pde { exp, model } => {
            let c = exp.load()?;
            let field = RandomField::new(&c.law, &c.field)?;
            let (m, n) = obtain_model(&c, &field, &model)?;
            let reference = pipeline::reference_samples(&field, c.sweep.mc_samples, c.seed)?;
            let report = pipeline::pde_experiment(&c, &field, &m, &reference, n)?;
            report_skipped(&report);
            write_records(exp.out.as_deref(), Experiment::Pde, &report.records)?;
        }
        Command::McReference { exp, mesh } => {
            let c = exp.load()?;
            let field = RandomField::new(&c.law, &c.field)?;
            let reference = pipeline::reference_samples(&field, c.sweep.mc_samples, c.seed)?;
            let m = Mesh::for_level(mesh);
            let q = pipeline::reference_qoi(&field, &reference, &m)?;
            let (mean, hw) = pipeline::mc_estimate(&q)?;
            let mut w = output(exp.out.as_deref())?;
            writeln!(w, "seed,mesh_level,Q")?;
            for (i, v) in q.iter().enumerate() {
                writeln!(w, "{},{mesh},{v}", derive_seed(c.seed, stream::MC_REFERENCE, i as u64))?;
            }
            w.flush()?;
            eprintln!("mean {mean} +- {hw} ({} samples, {mesh} mesh)", q.len());
        }
        Command::FemConvergence { exp } => {
            let c = exp.load()?;
            let records = pipeline::fem_convergence_study(&c)?;
            if let Some(rate) = pipeline::convergence_rate(&records) {
                eprintln!("fitted rate {rate:.3}");
            }
            write_records(exp.out.as_deref(), Experiment::Convergence, &records)?;
        }
        Command::Truncation { exp } => {
            let c = exp.load()?;
            write_records(exp.out.as_deref(), Experiment::Truncation, &pipeline::truncation_study(&c)?)?;
        }
        Command::TrainsizeSweep { exp, pde_out } => {
            let c = exp.load()?;
            let report = pipeline::training_size_study(&c)?;
            report_skipped(&report.pde);
            write_records(exp.out.as_deref(), Experiment::Monomials, &report.monomials)?;
            if let Some(p) = pde_out {
                write_records(Some(&p), Experiment::Pde, &report.pde.records)?;
            }
        }
        Command::Config { dump, full } => {
            if !dump {
                return Err(Error::InvalidArgument("nothing to do; pass --dump".into()));
            }
            let c = if full { ExperimentConfig::full() } else { ExperimentConfig::desk() };
            print!("{}", c.to_toml());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}

