use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use async_blockopt::engine::{DelayModel, Trace};
use async_blockopt::experiment::{self, ExperimentConfig, InstanceSpec};
use async_blockopt::netflow::RegularizationChoice;
use async_blockopt::problem::NormOrder;
use async_blockopt::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_VIOLATIONS: u8 = 3;

#[derive(Parser)]
#[command(
    name = "async-blockopt",
    version,
    about = "Simulate and certify asynchronous block-based optimization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation and write trace, certificate and error-curve files.
    Run(RunArgs),
    /// Re-check an existing trace file against the cycle bound.
    Certify {
        trace: PathBuf,
        /// Certification tolerance (default 1e-9·(1 + D0)).
        #[arg(long)]
        tol: Option<f64>,
        /// Write the certificate table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare finished runs (one output directory each) by regularization size.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DelayArg {
    Instant,
    Queued,
}

#[derive(Args)]
struct RunArgs {
    /// TOML config file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use the published routing instance with this regularization (A1, A2, A3).
    #[arg(long)]
    paper: Option<RegularizationChoice>,
    /// Route table for a custom routing instance.
    #[arg(long, requires_all = ["alphas", "weights", "norms"])]
    routes: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    /// Norm orders; `inf` for the max-abs norm.
    #[arg(long, value_delimiter = ',')]
    norms: Option<Vec<String>>,
    #[arg(long)]
    edges: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    ticks: Option<u64>,
    #[arg(long)]
    stride: Option<u64>,
    #[arg(long)]
    p_update: Option<f64>,
    #[arg(long)]
    p_comm: Option<f64>,
    #[arg(long, value_enum)]
    delay: Option<DelayArg>,
    #[arg(long)]
    max_latency: Option<u64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn into_config(self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match (&self.config, self.paper) {
            (Some(path), _) => ExperimentConfig::from_file(path)?,
            (None, Some(choice)) => ExperimentConfig::paper(choice),
            (None, None) if self.routes.is_some() => {
                ExperimentConfig::paper(RegularizationChoice::A1)
            }
            (None, None) => return Err(Error::Config("give --config, --paper or --routes".into())),
        };
        if let Some(choice) = self.paper {
            cfg.instance = InstanceSpec::Paper {
                regularization: choice,
            };
        }
        if let Some(route_file) = self.routes {
            let norms = self
                .norms
                .unwrap_or_default()
                .iter()
                .map(|s| {
                    let p = if s.trim().eq_ignore_ascii_case("inf") {
                        f64::INFINITY
                    } else {
                        s.trim()
                            .parse()
                            .map_err(|_| Error::Config(format!("bad norm order {s:?}")))?
                    };
                    NormOrder::new(p).map_err(|e| Error::Config(e.to_string()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            cfg.instance = InstanceSpec::Custom {
                routes: None,
                route_file: Some(route_file),
                edges: self.edges.unwrap_or(async_blockopt::netflow::PAPER_EDGES),
                alphas: self.alphas.unwrap_or_default(),
                weights: self.weights.unwrap_or_default(),
                norms,
                scale_local: async_blockopt::netflow::DEFAULT_SCALE_LOCAL,
                scale_coupling: async_blockopt::netflow::DEFAULT_SCALE_COUPLING,
                box_upper: async_blockopt::netflow::BOX_UPPER,
            };
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.ticks {
            cfg.ticks = v;
        }
        if let Some(v) = self.stride {
            cfg.snapshot_stride = v;
        }
        if let Some(v) = self.p_update {
            cfg.p_update = v;
        }
        if let Some(v) = self.p_comm {
            cfg.p_comm = v;
        }
        match (self.delay, self.max_latency) {
            (Some(DelayArg::Instant), _) => cfg.delay = DelayModel::Instant,
            (Some(DelayArg::Queued), lat) => {
                cfg.delay = DelayModel::Queued {
                    max_latency: lat.unwrap_or(4),
                }
            }
            (None, Some(lat)) => cfg.delay = DelayModel::Queued { max_latency: lat },
            (None, None) => {}
        }
        if self.gamma.is_some() {
            cfg.gamma = self.gamma;
        }
        if let Some(out) = self.out {
            cfg.output_dir = out;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn fail(err: Error) -> ExitCode {
    eprintln!("error: {err}");
    match err {
        Error::Config(_) => ExitCode::from(EXIT_INVALID),
        _ => ExitCode::from(EXIT_FAILURE),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => {
            let cfg = match args.into_config() {
                Ok(cfg) => cfg,
                Err(e) => return fail(e),
            };
            let (outcome, files) = match experiment::run_experiment(&cfg) {
                Ok(r) => r,
                Err(e) => return fail(e),
            };
            let s = &outcome.summary;
            println!(
                "{}: {} ticks, {} cycles, q = {:.9}, D0 = {:.6}, final errors {:.4e} (regularized) {:.4e} (unregularized)",
                s.label, s.final_tick, s.cycles, s.q, s.d0, s.final_regularized_error, s.final_unregularized_error
            );
            println!("wrote {}", files.dir.display());
            if s.violations > 0 {
                eprintln!(
                    "certificate: {} violations, worst by {:e}",
                    s.violations, outcome.certificate.max_violation
                );
                return ExitCode::from(EXIT_VIOLATIONS);
            }
            ExitCode::SUCCESS
        }
        Command::Certify { trace, tol, out } => {
            let trace = match File::open(&trace)
                .map_err(Error::from)
                .and_then(|f| Trace::read_jsonl(BufReader::new(f)))
            {
                Ok(t) => t,
                Err(e) => return fail(e),
            };
            let (rate, cert) = match experiment::certify_trace(&trace, tol) {
                Ok(r) => r,
                Err(e) => return fail(e),
            };
            let written = match &out {
                Some(path) => File::create(path)
                    .map_err(Error::from)
                    .and_then(|f| cert.write_csv(f)),
                None => cert.write_csv(std::io::stdout().lock()),
            };
            if let Err(e) = written {
                return fail(e);
            }
            eprintln!(
                "q = {:.9}, D0 = {:.6}, {} cycles, {} snapshots, {} violations",
                rate.q,
                rate.d0,
                cert.total_cycles,
                cert.rows.len(),
                cert.violations
            );
            if cert.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_VIOLATIONS)
            }
        }
        Command::Report { runs, csv } => {
            let summaries = match runs
                .iter()
                .map(|d| experiment::load_summary(d))
                .collect::<Result<Vec<_>, _>>()
            {
                Ok(s) => s,
                Err(e) => return fail(e),
            };
            let report = match experiment::emit_report(&summaries) {
                Ok(r) => r,
                Err(e) => return fail(e),
            };
            print!("{report}");
            if let Some(path) = csv {
                if let Err(e) = File::create(&path)
                    .map_err(Error::from)
                    .and_then(|f| report.write_csv(f))
                {
                    return fail(e);
                }
            }
            ExitCode::SUCCESS
        }
    }
}
