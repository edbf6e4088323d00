use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fedakd_cli::{
    cmd_analyze, cmd_gen_data, cmd_run, cmd_validate_theory, CliError, ExperimentConfig, Overrides,
};
use fedakd_core::Algorithm;

#[derive(Parser)]
#[command(
    name = "fedakd",
    version,
    about = "Federated asynchronous knowledge distillation simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate and write per-client datasets with a manifest
    GenData(Common),
    /// Train standalone and federated models and summarize fairness and accuracy
    Run(Common),
    /// Compare refitted Gaussian KL against its shift approximation
    ValidateTheory(Common),
    /// Right/wrong sample divergence after federated training
    Analyze(Common),
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated algorithms, e.g. fedakd,fedavg
    #[arg(long, value_delimiter = ',')]
    algo: Option<Vec<Algorithm>>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, CliError> {
        let cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        cfg.apply(&Overrides {
            seed: self.seed,
            out_dir: self.out.clone(),
            algos: self.algo.clone(),
        })
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData(c) => {
            let cfg = c.load()?;
            let m = cmd_gen_data(&cfg)?;
            println!(
                "wrote {} clients to {}",
                m.clients,
                cfg.out_dir.join("data").display()
            );
        }
        Command::Run(c) => {
            let cfg = c.load()?;
            let report = cmd_run(&cfg)?;
            for s in &report.summaries {
                let cf =
                    s.cf.map(|(m, sd)| format!("{m:.2} ± {sd:.2}"))
                        .unwrap_or_else(|| "undefined".into());
                println!(
                    "{:<15} cf {cf:<16} max_acc {:.4} ± {:.4}  avg_acc {:.4} ± {:.4}",
                    s.algo.name(),
                    s.max_acc.0,
                    s.max_acc.1,
                    s.avg_acc.0,
                    s.avg_acc.1
                );
            }
            println!("summary: {}", report.summary_csv.display());
            if report.undefined_cf() > 0 {
                return Err(CliError::UndefinedMetric(format!(
                    "CF undefined in {} run(s); see {}",
                    report.undefined_cf(),
                    report.summary_csv.display()
                )));
            }
        }
        Command::ValidateTheory(c) => {
            let cfg = c.load()?;
            let r = cmd_validate_theory(&cfg)?;
            println!("fitting term {:.6e}", r.fitting_term);
            for (c, real, approx, random) in r.means {
                println!("C {c:<6} real {real:.6e}  approx {approx:.6e}  random {random:.6e}");
            }
        }
        Command::Analyze(c) => {
            let cfg = c.load()?;
            for run in cmd_analyze(&cfg)? {
                println!(
                    "seed {:<6} mean kl_right {:.4}  mean kl_wrong {:.4}",
                    run.seed,
                    run.report.mean_kl_right(),
                    run.report.mean_kl_wrong()
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
