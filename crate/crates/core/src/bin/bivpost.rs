use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bivpost::dataio::{write_forecasts, write_observations, CovariateSet};
use bivpost::pipeline::{self, Dataset, ModelTag, RunConfig};
use bivpost::simulate::{simulate, write_truth, Generator, SyntheticSpec};
use bivpost::{Error, Result};

#[derive(Parser)]
#[command(name = "bivpost", version, about = "Bivariate postprocessing of wind-vector ensemble forecasts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic forecasts, observations and ground truth.
    Simulate(SimulateArgs),
    /// Derive covariate tables from the raw forecasts.
    Derive {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Fit the configured models on the training period.
    Fit {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Write predictive distributions for the test period.
    Predict {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Score the predictions.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Summary tables, skill scores, DM matrix, selection and family counts.
    Report {
        #[command(flatten)]
        run: RunArgs,
    },
    /// fit, predict, evaluate and report in one go.
    Run {
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON synthetic-data spec; defaults apply to missing fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    stations: Option<u32>,
    #[arg(long)]
    days: Option<u32>,
    #[arg(long)]
    generator: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
    /// Comma-separated model tags.
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<String>>,
    #[arg(long)]
    reference: Option<String>,
    /// C or Cplus.
    #[arg(long)]
    covariates: Option<String>,
    #[arg(long)]
    score_samples: Option<usize>,
    #[arg(long)]
    n_emb: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    bandwidth_scale: Option<f64>,
    #[arg(long)]
    max_k: Option<usize>,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(j) = self.jobs {
            cfg.jobs = Some(j);
        }
        if let Some(m) = &self.models {
            cfg.models = m.iter().map(|t| t.parse()).collect::<Result<Vec<ModelTag>>>()?;
        }
        if let Some(r) = &self.reference {
            cfg.reference = r.parse()?;
        }
        if let Some(c) = &self.covariates {
            cfg.covariates = c.parse()?;
        }
        if let Some(n) = self.score_samples {
            cfg.score_samples = n;
        }
        if let Some(n) = self.n_emb {
            cfg.drn.n_emb = n;
        }
        if let Some(h) = self.hidden {
            cfg.drn.hidden = h;
        }
        if let Some(e) = self.epochs {
            cfg.drn.epochs = e;
        }
        if let Some(b) = self.bandwidth_scale {
            cfg.yvine.bandwidth_scale = b;
        }
        if let Some(k) = self.max_k {
            cfg.yvine.max_k = k;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let mut spec: SyntheticSpec = match &a.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => SyntheticSpec::default(),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(s) = a.stations {
        spec.stations = s;
    }
    if let Some(d) = a.days {
        spec.days = d;
    }
    if let Some(g) = &a.generator {
        spec.generator = g.parse::<Generator>()?;
    }
    let data = simulate(&spec)?;
    let out = &a.out;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_forecasts(&out.join("forecasts.csv"), &data.records)?;
    write_observations(&out.join("observations.csv"), &data.observations)?;
    write_truth(&out.join("truth.csv"), spec.generator, &data.truth)?;
    let spec_path = out.join("spec.json");
    std::fs::write(&spec_path, serde_json::to_string_pretty(&spec)?).map_err(|e| Error::io(&spec_path, e))?;
    eprintln!("wrote {} records for {} stations to {}", data.records.len(), spec.stations, out.display());
    Ok(())
}

fn print_written(dir: &Path) {
    eprintln!("wrote {}", dir.display());
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Derive { run } => {
            let cfg = run.config()?;
            let set = run.covariates.as_deref().map(str::parse::<CovariateSet>).transpose()?;
            for p in pipeline::derive(&cfg, set)? {
                print_written(&p);
            }
            Ok(())
        }
        Command::Fit { run } => {
            let cfg = run.config()?;
            let data = Dataset::load(&cfg)?;
            for (m, s) in pipeline::fit(&cfg, &data)? {
                eprintln!("{m}: {s:.1} s");
            }
            Ok(())
        }
        Command::Predict { run } => {
            let cfg = run.config()?;
            let data = Dataset::load(&cfg)?;
            pipeline::predict(&cfg, &data)?;
            print_written(&cfg.output_dir.join("predictions"));
            Ok(())
        }
        Command::Evaluate { run } => {
            let cfg = run.config()?;
            pipeline::evaluate(&cfg)?;
            print_written(&cfg.output_dir.join("scores"));
            Ok(())
        }
        Command::Report { run } => {
            let cfg = run.config()?;
            let r = pipeline::report(&cfg)?;
            print!("{}", pipeline::format_table(&cfg, &r)?);
            Ok(())
        }
        Command::Run { run } => {
            let cfg = run.config()?;
            let r = pipeline::run_all(&cfg)?;
            print!("{}", pipeline::format_table(&cfg, &r)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
