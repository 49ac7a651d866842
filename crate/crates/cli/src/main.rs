use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use atst::belief::{optimal_values_with_budget, write_oracle_csv, ActionMatrixSet, DEFAULT_NODE_BUDGET};
use atst::eval::{run_experiment, ExperimentConfig};
use atst::feature::{check_admissible, sample_pairs, PsiEngine};
use atst::model::load_model;
use atst::offpolicy::{estimate_engine, sample_dataset, save_dataset, uniform_dist};
use atst::sim::{purpose, RunSeed};
use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

const EXIT_ERROR: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_CHECK_FAILED: u8 = 3;

#[derive(Parser)]
#[command(name = "atst", version, about = "Planning and learning with action-triggered observations")]
struct Cli {
    /// More log output (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a model file against every model invariant.
    ValidateModel { file: PathBuf },
    /// Estimate action matrices from a simulated off-policy dataset and
    /// write the resulting feature-map engine.
    Estimate {
        model: PathBuf,
        /// Dataset size.
        #[arg(long)]
        n: usize,
        /// Use the model's burst probabilities instead of estimating them.
        #[arg(long)]
        beta_known: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Failure probability of the error certificate.
        #[arg(long, default_value_t = 0.05)]
        p: f64,
        /// Constant of the ridge error bound.
        #[arg(long, default_value_t = 1.0)]
        c: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(short, long, default_value = "engine.json")]
        out: PathBuf,
        /// Also write the raw estimates and certificate.
        #[arg(long)]
        estimates: Option<PathBuf>,
        /// Also write the sampled dataset as CSV.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Check an engine against the exact map of a model on sampled inputs.
    Certify {
        engine: PathBuf,
        #[arg(long)]
        eps: f64,
        /// Model providing the exact reference map.
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 500)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a learning experiment described by a TOML file.
    Learn {
        config: PathBuf,
        /// Exit with status 3 unless the regret curves look sublinear.
        #[arg(long)]
        check: bool,
    },
    /// Print optimal values and greedy first actions as CSV.
    Oracle {
        model: PathBuf,
        /// Value-iteration rounds.
        #[arg(long)]
        depth: usize,
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_NODE_BUDGET)]
        node_budget: usize,
    },
}

enum Failure {
    Lib(atst::Error),
    Check(String),
}

impl From<atst::Error> for Failure {
    fn from(e: atst::Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Lib(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Lib(e.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(level)))
        .with_writer(io::stderr)
        .init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(EXIT_CHECK_FAILED)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { EXIT_INVALID } else { EXIT_ERROR })
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::ValidateModel { file } => {
            let m = load_model(&file)?;
            println!(
                "ok: {} states, {} actions, d = {}, gamma = {}, beta = {:?}",
                m.num_states(),
                m.num_actions(),
                m.dim(),
                m.gamma(),
                m.betas()
            );
        }
        Command::Estimate {
            model,
            n,
            beta_known,
            seed,
            p,
            c,
            lambda,
            out,
            estimates,
            dataset,
        } => {
            let m = load_model(&model)?;
            let mut rng = RunSeed::new(seed, 0).rng(purpose::DATASET, 0);
            let data = sample_dataset(&m, &uniform_dist(m.num_states(), m.num_actions()), n, &mut rng)?;
            if let Some(path) = dataset {
                save_dataset(&data, path)?;
            }
            let est = estimate_engine(&m, &data, p, c, beta_known, lambda)?;
            if !est.normalized() {
                eprintln!(
                    "warning: certified matrix error {:.4} is too large to normalize; wrote the unnormalized map",
                    est.certificate.eps
                );
            }
            est.engine.save(&out)?;
            if let Some(path) = estimates {
                est.estimate_file().save(path)?;
            }
            println!("{}", serde_json::to_string_pretty(&est.certificate)?);
        }
        Command::Certify {
            engine,
            eps,
            model,
            samples,
            seed,
        } => {
            let candidate = PsiEngine::load(&engine)?;
            let m = load_model(&model)?;
            if candidate.num_states() != m.num_states()
                || candidate.num_actions() != m.num_actions()
                || candidate.dim() != m.dim()
            {
                return Err(atst::Error::Dimension("engine does not match the model".into()).into());
            }
            let reference = PsiEngine::exact(&m)?;
            let mut rng = RunSeed::new(seed, 0).rng(purpose::SAMPLES, 0);
            let pairs = sample_pairs(m.num_states(), m.num_actions(), samples, 6, &mut rng);
            let report = check_admissible(&candidate, &reference, &pairs, eps);
            println!("{}", serde_json::to_string_pretty(&report)?);
            if !report.passed {
                return Err(Failure::Check(format!(
                    "{} violation(s); worst error {:.3e} against target {eps:.3e}",
                    report.violations.len(),
                    report.max_error
                )));
            }
        }
        Command::Learn { config, check } => {
            let cfg = ExperimentConfig::load(&config)?;
            let summary = run_experiment(&cfg)?;
            for s in &summary.seeds {
                match s.regret {
                    Some(r) => println!(
                        "seed {}: cumulative regret {:.2}, first/last mean {:.4}/{:.4}, sqrt fit {:.3}, sublinear {}",
                        s.seed, r.cumulative, r.mean_first, r.mean_last, r.sqrt_fit, r.sublinear
                    ),
                    None => println!("seed {}: mean realized reward {:.4}", s.seed, s.realized_reward_mean),
                }
            }
            println!(
                "{} of {} seeds sublinear; outputs in {}",
                summary.sublinear_seeds,
                summary.seeds.len(),
                cfg.output_dir.display()
            );
            if check && !summary.sublinear {
                return Err(Failure::Check("regret does not look sublinear".into()));
            }
        }
        Command::Oracle {
            model,
            depth,
            out,
            node_budget,
        } => {
            let m = load_model(&model)?;
            let ams = ActionMatrixSet::from_model(&m)?;
            let plan = optimal_values_with_budget(&m, &ams, depth, depth, node_budget)?;
            eprintln!("error bound {:.3e}", plan.error_bound());
            match out {
                Some(path) => write_oracle_csv(&m, &plan, BufWriter::new(File::create(path)?))?,
                None => {
                    let stdout = io::stdout();
                    write_oracle_csv(&m, &plan, stdout.lock())?;
                    io::stdout().flush()?;
                }
            }
        }
    }
    Ok(())
}
