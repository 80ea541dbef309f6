use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use attrdis::analysis::HeadConfig;
use attrdis::datagen::write_dataset;
use attrdis::harness::{
    ablate_ndsi, analyze_dir, audit_dir, compare_modes, generate_data, robust_experiment,
    train_run, write_comparison, write_run, Comparison, Mode, RunConfig,
};
use attrdis::Error;
use clap::{Args, Parser, Subcommand};

/// Attribute-disentangled multi-label experiments on synthetic data.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run config; every field has a default.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `mode`.
    #[arg(long)]
    mode: Option<Mode>,
}

impl ConfigArgs {
    fn load(&self) -> anyhow::Result<RunConfig> {
        let mut config = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                RunConfig::from_toml(&text)?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if let Some(m) = self.mode {
            config.mode = m;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct SeedArgs {
    /// Number of seeds, starting at the config seed.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

impl SeedArgs {
    fn list(&self, first: u64) -> Vec<u64> {
        (first..first + self.seeds).collect()
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the train and test splits of a config.
    Generate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Train one run and write its artifacts.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Train several modes over several seeds.
    Compare {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        seeds: SeedArgs,
        /// Comma-separated modes.
        #[arg(long, value_delimiter = ',', default_value = "baseline,eq3,eq4,mixup_input")]
        modes: Vec<Mode>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// eq3 and eq4, each with and without NDSI.
    AblateNdsi {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        seeds: SeedArgs,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Compare group accuracy of plain thresholding, Robust-A and Robust-B.
    Robust {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        seeds: SeedArgs,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Recompute metrics, MI and anchors of a run directory.
    Analyze {
        run: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Recompute a run directory and diff it against the files on disk.
    Audit { run: PathBuf },
}

enum Outcome {
    Ok,
    AuditMismatch,
}

fn print_summary(cmp: &Comparison) {
    for a in &cmp.arms {
        println!(
            "{:<16} train mA {:.4}  test mA {:.4}",
            a.arm.label,
            a.mean_train_ma(),
            a.mean_test_ma()
        );
    }
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    match cli.command {
        Command::Generate { config, out } => {
            let config = config.load()?;
            let (train, test) = generate_data(&config)?;
            fs::create_dir_all(&out)?;
            for (name, ds) in [("train.txt", &train), ("test.txt", &test)] {
                write_dataset(BufWriter::new(fs::File::create(out.join(name))?), ds)?;
            }
            fs::write(out.join("config.resolved"), config.to_toml())?;
        }
        Command::Train { config, out } => {
            let config = config.load()?;
            let record = train_run(&config)?;
            write_run(&out, &record)?;
            println!(
                "train mA {:.4}  test mA {:.4}  ({:.1}s)",
                record.train.ma,
                record.test.ma,
                record.wall_clock.as_secs_f64()
            );
        }
        Command::Compare {
            config,
            seeds,
            modes,
            out,
        } => {
            let config = config.load()?;
            let cmp = compare_modes(&config, &modes, &seeds.list(config.seed), seeds.threads)?;
            write_comparison(&out, &cmp)?;
            print_summary(&cmp);
        }
        Command::AblateNdsi { config, seeds, out } => {
            let config = config.load()?;
            let cmp = ablate_ndsi(&config, &seeds.list(config.seed), seeds.threads)?;
            write_comparison(&out, &cmp)?;
            print_summary(&cmp);
        }
        Command::Robust { config, seeds, out } => {
            let config = config.load()?;
            let rows = robust_experiment(&config, &seeds.list(config.seed), &HeadConfig::default())?;
            let body: Vec<String> = rows
                .iter()
                .map(|r| {
                    format!(
                        "{},{},{},{},{}",
                        r.seed,
                        attrdis::format::real(r.ours),
                        attrdis::format::real(r.robust_a),
                        attrdis::format::real(r.robust_b),
                        r.excluded
                    )
                })
                .collect();
            fs::create_dir_all(&out)?;
            fs::write(
                out.join("robust.csv"),
                attrdis::analysis::csv("seed,ours,robust_a,robust_b,excluded", &body),
            )?;
            for r in &rows {
                println!(
                    "seed {}: ours {:.4}  robust-a {:.4}  robust-b {:.4}",
                    r.seed, r.ours, r.robust_a, r.robust_b
                );
            }
        }
        Command::Analyze { run, out } => {
            for name in analyze_dir(&run, &out)? {
                println!("{}", out.join(name).display());
            }
        }
        Command::Audit { run } => return audit(&run),
    }
    Ok(Outcome::Ok)
}

fn audit(dir: &Path) -> anyhow::Result<Outcome> {
    let report = audit_dir(dir)?;
    for (name, line) in &report.mismatches {
        println!("MISMATCH {name} line {line}");
    }
    for p in &report.problems {
        println!("MISMATCH {p}");
    }
    println!("checked {} files, {} mismatches", report.checked.len(), report.mismatches.len());
    Ok(if report.is_clean() {
        Outcome::Ok
    } else {
        Outcome::AuditMismatch
    })
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config { .. }) => 2,
        Some(Error::NonFinite(_)) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::AuditMismatch) => ExitCode::from(4),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
