use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use lod_cli::commands::{self, CliError, CliResult, ExportRequest, ExportWhat, CSV_HEADER};
use lod_cli::config::{self, EllChoice, ExperimentConfig, Family};

#[derive(Parser)]
#[command(name = "lod", version, about = "Stabilized high-order LOD experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Generator seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 for one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override any config key, e.g. --set p=0,1.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    A1,
    A2,
}

#[derive(Clone, Copy, ValueEnum)]
enum WhatArg {
    Basis,
    Bubble,
    Coefficient,
    Solution,
}

#[derive(Subcommand)]
enum Command {
    /// Error against the fine reference for every configured combination.
    Convergence,
    /// Localization error against the whole-domain basis, with f = 1.
    Decay,
    /// Write one field as a binary grid dump.
    Export {
        #[arg(long, value_enum)]
        what: WhatArg,
        /// Coarse element as i,j.
        #[arg(long, default_value = "0,0")]
        element: String,
        /// Legendre index.
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        path: PathBuf,
    },
    /// Generate a coefficient file and print its bounds.
    GenCoefficient {
        #[arg(long, value_enum)]
        family: FamilyArg,
        #[arg(long, default_value_t = 5)]
        level: u32,
        #[arg(long)]
        path: PathBuf,
    },
    /// One multiscale solve; prints a CSV row.
    Solve {
        /// Also dump the solution field.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
}

fn load_config(c: &Common) -> CliResult<ExperimentConfig> {
    let mut sets = c.set.clone();
    if let Some(s) = c.seed {
        sets.push(format!("seed={s}"));
    }
    if let Some(t) = c.threads {
        sets.push(format!("threads={t}"));
    }
    if let Some(o) = &c.out {
        sets.push(format!("out={}", o.display()));
    }
    Ok(config::resolve(c.config.as_deref(), std::env::vars(), &sets)?)
}

fn create(dir: &Path, name: &str) -> CliResult<BufWriter<File>> {
    std::fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn parse_element(s: &str) -> CliResult<(usize, usize)> {
    let bad = || CliError::Usage(format!("element must be i,j, got '{s}'"));
    let (i, j) = s.split_once(',').ok_or_else(bad)?;
    Ok((i.trim().parse().map_err(|_| bad())?, j.trim().parse().map_err(|_| bad())?))
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = load_config(&cli.common)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    pool.install(|| match cli.command {
        Command::Convergence => {
            let mut out = create(&cfg.out, "convergence.csv")?;
            let rows = commands::convergence(&cfg, &mut out);
            out.flush()?;
            let rows = rows?;
            println!("{} rows written to {}", rows.len(), cfg.out.join("convergence.csv").display());
            Ok(())
        }
        Command::Decay => {
            let mut out = create(&cfg.out, "decay.csv")?;
            let ells = match cfg.ell.as_slice() {
                [EllChoice::Rule] => (1..=4).map(EllChoice::Fixed).collect(),
                other => other.to_vec(),
            };
            let rows = commands::decay(&cfg, &ells, &mut out)?;
            out.flush()?;
            println!("{} rows written to {}", rows.len(), cfg.out.join("decay.csv").display());
            Ok(())
        }
        Command::Export {
            what,
            element,
            index,
            path,
        } => {
            let req = ExportRequest {
                what: match what {
                    WhatArg::Basis => ExportWhat::Basis,
                    WhatArg::Bubble => ExportWhat::Bubble,
                    WhatArg::Coefficient => ExportWhat::Coefficient,
                    WhatArg::Solution => ExportWhat::Solution,
                },
                element: parse_element(&element)?,
                index,
            };
            let d = commands::export(&cfg, &req, &path)?;
            println!("{} x {} values written to {}", d.rows, d.cols, path.display());
            Ok(())
        }
        Command::GenCoefficient { family, level, path } => {
            let family = match family {
                FamilyArg::A1 => Family::A1,
                FamilyArg::A2 => Family::A2,
            };
            let a = commands::gen_coefficient(family, cfg.seed, level, &path)?;
            println!(
                "level={} seed={} alpha={} beta={} path={}",
                a.level(),
                a.seed(),
                a.alpha(),
                a.beta(),
                path.display()
            );
            Ok(())
        }
        Command::Solve { dump } => {
            let row = commands::solve(&cfg, dump.as_deref())?;
            println!("{CSV_HEADER}\n{}", row.to_csv());
            Ok(())
        }
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lod: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
