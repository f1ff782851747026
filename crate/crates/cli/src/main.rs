use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};

use xnormaj::binlayers::NetworkConfig;
use xnormaj::costmodel::{network_cost, pareto_points, parse_accuracy_csv, write_pareto_csv, Device};
use xnormaj::dataset::{load_idx_dir, Dataset};
use xnormaj::hdlgen::{emit_popcount_tree, emit_xnorfa_unit, emit_xnormaj_unit, HdlTreeSpec, HdlUnitSpec};
use xnormaj::selfcheck;
use xnormaj::trainer::{evaluate, history_csv, train, Checkpoint, Loss, Optimizer, TrainConfig, TrainError};

#[derive(Parser)]
#[command(name = "xnormaj", version, about = "Binarized networks with majority-compressed neurons")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network and write a checkpoint plus history.csv.
    Train {
        #[arg(long)]
        net: PathBuf,
        /// Directory with train-* and t10k-* IDX files.
        #[arg(long)]
        data: PathBuf,
        /// B/M string for the eligible layers; defaults to the network file.
        #[arg(long)]
        config: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        /// Multiplier applied to the learning rate after every epoch.
        #[arg(long, default_value_t = 1.0)]
        lr_decay: f64,
        #[arg(long, default_value_t = 100)]
        batch_size: usize,
        #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
        optimizer: OptimizerArg,
        #[arg(long, value_enum, default_value_t = LossArg::SquaredHinge)]
        loss: LossArg,
        /// Fraction of the training file held out for validation.
        #[arg(long, default_value_t = 0.1)]
        val_fraction: f64,
    },
    /// Print the deployment-path error rate of a checkpoint.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        #[arg(long, default_value_t = 0.1)]
        val_fraction: f64,
    },
    /// Per-layer LUT estimate as CSV.
    Estimate {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        config: Option<String>,
        #[arg(long, default_value = "xilinx")]
        device: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pareto front of LUT cost against error rate as CSV.
    Pareto {
        #[arg(long)]
        net: PathBuf,
        /// CSV with header `config,error_percent`.
        #[arg(long)]
        acc: PathBuf,
        #[arg(long, default_value = "xilinx")]
        device: String,
        /// Emit every configuration, not only the front.
        #[arg(long)]
        all: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a Verilog unit: xnorfa, maj:M or tree:N:W.
    EmitHdl {
        #[arg(long)]
        unit: String,
        /// Register the unit inputs and outputs.
        #[arg(long)]
        registered: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the packed-versus-oracle suites.
    Selfcheck {
        #[arg(long, default_value_t = selfcheck::DEFAULT_SEED)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        cases: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    SquaredHinge,
    CrossEntropy,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

/// Error with the exit code it maps to: 1 for runtime failures, 2 for
/// usage and parse errors.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn usage(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 2, error: error.into() }
}

fn runtime(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 1, error: error.into() }
}

fn train_failure(e: TrainError) -> Failure {
    match e {
        TrainError::Config(_) | TrainError::Shape(_) => usage(e),
        _ => runtime(e),
    }
}

fn load_net(path: &Path, config: Option<&str>) -> Result<NetworkConfig, Failure> {
    let net = NetworkConfig::load(path).with_context(|| format!("loading {}", path.display())).map_err(usage)?;
    match config {
        None => Ok(net),
        Some(s) => {
            let cfg = net.parse_config(s).with_context(|| format!("configuration '{s}'")).map_err(usage)?;
            net.with_config(&cfg).map_err(usage)
        }
    }
}

fn parse_device(s: &str) -> Result<Device, Failure> {
    s.parse::<Device>().map_err(usage)
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())).map_err(runtime),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_split(dir: &Path, val_fraction: f64, split: SplitArg) -> Result<Dataset, Failure> {
    let splits = load_idx_dir(dir, val_fraction).with_context(|| format!("loading {}", dir.display())).map_err(runtime)?;
    Ok(match split {
        SplitArg::Train => splits.train,
        SplitArg::Val => splits.val,
        SplitArg::Test => splits.test,
    })
}

fn parse_unit(unit: &str, registered: bool) -> Result<String, Failure> {
    let parts: Vec<&str> = unit.split(':').collect();
    let number = |s: &str| s.parse::<usize>().map_err(|_| usage(anyhow!("'{s}' in unit '{unit}' is not a number")));
    let text = match parts.as_slice() {
        ["xnorfa"] if !registered => emit_xnorfa_unit(),
        ["xnorfa"] => return Err(usage(anyhow!("xnorfa has no registered variant"))),
        ["maj", m] => {
            let mut spec = HdlUnitSpec::xnormaj(number(m)?);
            if registered {
                spec = spec.registered();
            }
            emit_xnormaj_unit(&spec).map_err(usage)?
        }
        ["tree", n, w] if !registered => {
            let w = u32::try_from(number(w)?).map_err(usage)?;
            emit_popcount_tree(&HdlTreeSpec::new(number(n)?, w).map_err(usage)?).map_err(usage)?
        }
        ["tree", ..] if registered => return Err(usage(anyhow!("popcount trees have no registered variant"))),
        _ => return Err(usage(anyhow!("unknown unit '{unit}': expected xnorfa, maj:M or tree:N:W"))),
    };
    Ok(text)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train {
            net,
            data,
            config,
            seed,
            out,
            epochs,
            lr,
            lr_decay,
            batch_size,
            optimizer,
            loss,
            val_fraction,
        } => {
            let net = load_net(&net, config.as_deref())?;
            let cfg = TrainConfig {
                lr,
                lr_decay,
                epochs,
                batch_size,
                seed,
                optimizer: match optimizer {
                    OptimizerArg::Adam => Optimizer::Adam,
                    OptimizerArg::Sgd => Optimizer::SgdMomentum,
                },
                loss: match loss {
                    LossArg::SquaredHinge => Loss::SquaredHinge,
                    LossArg::CrossEntropy => Loss::CrossEntropy,
                },
                ..TrainConfig::default()
            };
            cfg.validate().map_err(usage)?;
            let splits =
                load_idx_dir(&data, val_fraction).with_context(|| format!("loading {}", data.display())).map_err(runtime)?;
            let val = (!splits.val.is_empty()).then_some(&splits.val);
            let result = train(&net, &splits.train, val, &cfg).map_err(train_failure)?;
            let ckpt = Checkpoint { net, weights: result.weights, seed, epoch: epochs };
            ckpt.save(&out).map_err(runtime)?;
            let history = out.join("history.csv");
            fs::write(&history, history_csv(&result.history))
                .with_context(|| format!("writing {}", history.display()))
                .map_err(runtime)?;
            if let Some(last) = result.history.last() {
                println!(
                    "epoch {}: loss {:.4} train_acc {:.4} val_acc {:.4}",
                    last.epoch, last.loss, last.train_acc, last.val_acc
                );
            }
            println!("checkpoint written to {}", out.display());
            Ok(())
        }
        Command::Eval { ckpt, data, split, val_fraction } => {
            let ck = Checkpoint::load(&ckpt).with_context(|| format!("loading {}", ckpt.display())).map_err(runtime)?;
            let data = load_split(&data, val_fraction, split)?;
            let acc = evaluate(&ck.net, &ck.weights, &data).map_err(train_failure)?;
            let wrong = data.len() - (acc * data.len() as f64).round() as usize;
            println!("error: {:.2}% ({wrong}/{} misclassified)", 100.0 * (1.0 - acc), data.len());
            Ok(())
        }
        Command::Estimate { net, config, device, out } => {
            let device = parse_device(&device)?;
            let net = load_net(&net, config.as_deref())?;
            let report = network_cost(&net, device).map_err(usage)?;
            write_output(out.as_deref(), &report.to_csv())
        }
        Command::Pareto { net, acc, device, all, out } => {
            let device = parse_device(&device)?;
            let net = load_net(&net, None)?;
            let text = fs::read_to_string(&acc).with_context(|| format!("reading {}", acc.display())).map_err(runtime)?;
            let table = parse_accuracy_csv(&text, &net).with_context(|| acc.display().to_string()).map_err(usage)?;
            let mut points = pareto_points(&net, device, &table).map_err(usage)?;
            if !all {
                points.retain(|p| p.on_front);
            }
            write_output(out.as_deref(), &write_pareto_csv(&points))
        }
        Command::EmitHdl { unit, registered, out } => write_output(out.as_deref(), &parse_unit(&unit, registered)?),
        Command::Selfcheck { seed, cases } => {
            let report = selfcheck::run_all(seed, cases);
            println!("{report}");
            if report.passed() {
                Ok(())
            } else {
                Err(runtime(anyhow!("self-check failed")))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
