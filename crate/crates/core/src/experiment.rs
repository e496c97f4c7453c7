//! Declarative experiments: config parsing, end-to-end runs that write trace,
//! certificate and error-curve files, and the cross-run comparison report.
//!
//! Artifact files written by [`run_experiment`] into the output directory:
//!
//! | file              | contents                                                         |
//! |-------------------|------------------------------------------------------------------|
//! | `config.toml`     | the resolved config                                              |
//! | `trace.jsonl`     | trace records (see [`crate::engine::Trace::write_jsonl`])        |
//! | `certificate.csv` | `tick,cycles,bound,observed,pass`                                |
//! | `errors.csv`      | `tick,cycles,regularized_error,unregularized_error,bound`        |
//! | `summary.json`    | final errors and rate constants, read back by [`load_summary`]   |
//!
//! Errors in `errors.csv` are agent 1's full local view measured in the
//! block-maximum norm, against `x̂_A` and against the unregularized `x̂`.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::blocknorm::max_norm_distance;
use crate::certify::{
    check_theorem3, compute_d0, solve_reference, Certificate, RateData, DEFAULT_REFERENCE_TOL,
};
use crate::engine::{init_world, replay, run, DelayModel, Schedule, Trace};
use crate::netflow::{self, RegularizationChoice};
use crate::problem::{BlockLayout, Interval, Lipschitz, NormOrder, Problem, Regularization};
use crate::{Error, Result};

pub const TRACE_FILE: &str = "trace.jsonl";
pub const CERTIFICATE_FILE: &str = "certificate.csv";
pub const ERRORS_FILE: &str = "errors.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const SUMMARY_FILE: &str = "summary.json";

fn default_seed() -> u64 {
    42
}
fn default_ticks() -> u64 {
    20_000
}
fn default_stride() -> u64 {
    1
}
fn default_probability() -> f64 {
    0.1
}
fn default_delay() -> DelayModel {
    DelayModel::Instant
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}
fn default_edges() -> usize {
    netflow::PAPER_EDGES
}
fn default_scale_local() -> f64 {
    netflow::DEFAULT_SCALE_LOCAL
}
fn default_scale_coupling() -> f64 {
    netflow::DEFAULT_SCALE_COUPLING
}
fn default_box_upper() -> f64 {
    netflow::BOX_UPPER
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InstanceSpec {
    /// The published routing instance with one of its regularizations.
    Paper {
        regularization: RegularizationChoice,
    },
    /// A routing instance over user-supplied routes and parameters.
    Custom {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        routes: Option<Vec<Vec<usize>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        route_file: Option<PathBuf>,
        #[serde(default = "default_edges")]
        edges: usize,
        alphas: Vec<f64>,
        weights: Vec<f64>,
        norms: Vec<NormOrder>,
        #[serde(default = "default_scale_local")]
        scale_local: f64,
        #[serde(default = "default_scale_coupling")]
        scale_coupling: f64,
        #[serde(default = "default_box_upper")]
        box_upper: f64,
    },
}

impl InstanceSpec {
    fn label(&self) -> String {
        match self {
            InstanceSpec::Paper { regularization } => regularization.to_string(),
            InstanceSpec::Custom { .. } => "custom".into(),
        }
    }

    /// Replaces a route file reference by its parsed contents.
    fn inline_routes(&self) -> Result<InstanceSpec> {
        let mut out = self.clone();
        if let InstanceSpec::Custom {
            routes, route_file, ..
        } = &mut out
        {
            if let Some(path) = route_file.take() {
                let text = fs::read_to_string(&path).map_err(|e| {
                    Error::Config(format!("cannot read route file {}: {e}", path.display()))
                })?;
                *routes = Some(netflow::parse_route_table(&text)?);
            }
        }
        Ok(out)
    }

    /// Builds the problem and the per-agent regularization weights.
    pub fn build(&self) -> Result<(Problem, Vec<f64>)> {
        match self.inline_routes()? {
            InstanceSpec::Paper { regularization } => {
                Ok((netflow::paper_problem(), regularization.diagonal().to_vec()))
            }
            InstanceSpec::Custom {
                routes,
                edges,
                alphas,
                weights,
                norms,
                scale_local,
                scale_coupling,
                box_upper,
                ..
            } => {
                let routes = routes.ok_or_else(|| {
                    Error::Config("custom instance needs `routes` or `route_file`".into())
                })?;
                let agents = routes.len();
                for (name, len) in [
                    ("alphas", alphas.len()),
                    ("weights", weights.len()),
                    ("norms", norms.len()),
                ] {
                    if len != agents {
                        return Err(Error::Config(format!(
                            "{name} has {len} entries for {agents} agents"
                        )));
                    }
                }
                if !(box_upper > 0.0 && box_upper.is_finite()) {
                    return Err(Error::Config(format!(
                        "box_upper = {box_upper} must be positive"
                    )));
                }
                let layout = BlockLayout::scalar(&weights, &norms)
                    .map_err(|e| Error::Config(e.to_string()))?;
                let c = netflow::build_connection_matrix(&routes, edges)?;
                let problem = netflow::build_problem(
                    &c,
                    layout,
                    scale_local,
                    scale_coupling,
                    Interval::new(0.0, box_upper),
                )?;
                Ok((problem, alphas))
            }
        }
    }
}

/// Everything needed to reproduce one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_ticks")]
    pub ticks: u64,
    #[serde(default = "default_stride")]
    pub snapshot_stride: u64,
    #[serde(default = "default_probability")]
    pub p_update: f64,
    #[serde(default = "default_probability")]
    pub p_comm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "default_delay")]
    pub delay: DelayModel,
    pub instance: InstanceSpec,
}

impl ExperimentConfig {
    pub fn paper(choice: RegularizationChoice) -> Self {
        ExperimentConfig {
            seed: default_seed(),
            ticks: default_ticks(),
            snapshot_stride: default_stride(),
            p_update: default_probability(),
            p_comm: default_probability(),
            gamma: None,
            output_dir: default_output(),
            delay: default_delay(),
            instance: InstanceSpec::Paper {
                regularization: choice,
            },
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        Ok(cfg)
    }

    /// Reads a config file; a relative `route_file` is resolved against the
    /// config's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let InstanceSpec::Custom {
            route_file: Some(f),
            ..
        } = &mut cfg.instance
        {
            if f.is_relative() {
                if let Some(dir) = path.parent() {
                    *f = dir.join(&*f);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn schedule(&self) -> Result<Schedule> {
        Schedule::new(self.p_update, self.p_comm, self.delay)
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule()?;
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::Config(format!("gamma = {g} must be positive")));
            }
        }
        self.instance.build().map_err(|e| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        })?;
        Ok(())
    }
}

/// Final numbers of one run, as used by [`emit_report`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    /// `‖A‖₂ = max_i α_i`.
    pub a_norm: f64,
    pub seed: u64,
    pub final_tick: u64,
    pub cycles: u64,
    pub q: f64,
    pub d0: f64,
    pub final_regularized_error: f64,
    pub final_unregularized_error: f64,
    pub violations: usize,
    pub clamp_activations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorPoint {
    pub tick: u64,
    pub cycles: u64,
    pub regularized_error: f64,
    pub unregularized_error: f64,
    pub bound: f64,
}

/// In-memory result of a run; [`write_artifacts`] persists it.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub config: ExperimentConfig,
    pub trace: Trace,
    pub rate: RateData,
    pub x_hat: Vec<f64>,
    pub certificate: Certificate,
    pub errors: Vec<ErrorPoint>,
    pub summary: RunSummary,
}

/// Runs the configured simulation and certifies it without touching disk.
pub fn simulate(config: &ExperimentConfig) -> Result<RunOutcome> {
    config.validate()?;
    let instance = config.instance.inline_routes()?;
    let (problem, alphas) = instance.build()?;
    let lip = crate::certify::lipschitz_for(&problem, &alphas)?;
    let reg = Regularization::new(alphas, config.gamma.unwrap_or(1.0 / lip.max()))?;
    reg.check_rate_range(&lip)
        .map_err(|e| Error::Config(e.to_string()))?;
    let x0 = vec![0.0; problem.dim()];

    let x_hat_a = solve_reference(&problem, &reg, DEFAULT_REFERENCE_TOL)?;
    let unreg = Regularization::unregularized(problem.agents(), reg.gamma())?;
    let x_hat = solve_reference(&problem, &unreg, DEFAULT_REFERENCE_TOL)?;
    let d0 = compute_d0(&[&x0], &x_hat_a, problem.layout())?;
    let rate = RateData::new(&reg, &lip, x_hat_a, d0)?;

    let mut world = init_world(
        problem.clone(),
        reg.clone(),
        x0,
        config.seed,
        config.schedule()?,
    )?;
    let mut trace = run(&mut world, config.ticks, config.snapshot_stride)?;
    trace.header.meta =
        Some(serde_json::to_value(&instance).map_err(|e| Error::Trace(e.to_string()))?);

    let certificate = check_theorem3(&trace, &rate, None)?;
    let errors = error_curve(
        &trace,
        &certificate,
        problem.layout(),
        &rate.x_hat_a,
        &x_hat,
    )?;
    let last = errors.last().copied().expect("a run always has a snapshot");
    let summary = RunSummary {
        label: instance.label(),
        a_norm: reg.norm(),
        seed: config.seed,
        final_tick: last.tick,
        cycles: certificate.total_cycles,
        q: rate.q,
        d0: rate.d0,
        final_regularized_error: last.regularized_error,
        final_unregularized_error: last.unregularized_error,
        violations: certificate.violations,
        clamp_activations: trace.clamp_activations(),
    };
    let mut config = config.clone();
    config.instance = instance;
    Ok(RunOutcome {
        config,
        trace,
        rate,
        x_hat,
        certificate,
        errors,
        summary,
    })
}

fn error_curve(
    trace: &Trace,
    cert: &Certificate,
    layout: &BlockLayout,
    x_hat_a: &[f64],
    x_hat: &[f64],
) -> Result<Vec<ErrorPoint>> {
    trace
        .snapshots
        .iter()
        .zip(&cert.rows)
        .map(|(snap, row)| {
            let agent1 = &snap.views[0];
            Ok(ErrorPoint {
                tick: snap.tick,
                cycles: row.cycles,
                regularized_error: max_norm_distance(layout, agent1, x_hat_a)?,
                unregularized_error: max_norm_distance(layout, agent1, x_hat)?,
                bound: row.bound,
            })
        })
        .collect()
}

/// Paths of the files written for one run.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub dir: PathBuf,
    pub trace: PathBuf,
    pub certificate: PathBuf,
    pub errors: PathBuf,
    pub config: PathBuf,
    pub summary: PathBuf,
}

/// Validates, simulates, certifies and writes every artifact file.
pub fn run_experiment(config: &ExperimentConfig) -> Result<(RunOutcome, Artifacts)> {
    let outcome = simulate(config)?;
    let artifacts = write_artifacts(&outcome, &config.output_dir)?;
    Ok((outcome, artifacts))
}

pub fn write_artifacts(outcome: &RunOutcome, dir: &Path) -> Result<Artifacts> {
    fs::create_dir_all(dir)?;
    let trace = write_atomic(dir, TRACE_FILE, |w| outcome.trace.write_jsonl(w))?;
    let certificate = write_atomic(dir, CERTIFICATE_FILE, |w| outcome.certificate.write_csv(w))?;
    let errors = write_atomic(dir, ERRORS_FILE, |w| write_error_csv(&outcome.errors, w))?;
    let config = write_atomic(dir, CONFIG_FILE, |w| {
        Ok(w.write_all(outcome.config.to_toml()?.as_bytes())?)
    })?;
    let summary = write_atomic(dir, SUMMARY_FILE, |w| {
        serde_json::to_writer_pretty(&mut *w, &outcome.summary)
            .map_err(|e| Error::Trace(e.to_string()))?;
        Ok(w.write_all(b"\n")?)
    })?;
    Ok(Artifacts {
        dir: dir.to_path_buf(),
        trace,
        certificate,
        errors,
        config,
        summary,
    })
}

pub fn write_error_csv<W: Write>(points: &[ErrorPoint], mut out: W) -> Result<()> {
    writeln!(
        out,
        "tick,cycles,regularized_error,unregularized_error,bound"
    )?;
    for p in points {
        writeln!(
            out,
            "{},{},{:e},{:e},{:e}",
            p.tick, p.cycles, p.regularized_error, p.unregularized_error, p.bound
        )?;
    }
    Ok(())
}

fn write_atomic<F>(dir: &Path, name: &str, body: F) -> Result<PathBuf>
where
    F: FnOnce(&mut std::io::BufWriter<&mut tempfile::NamedTempFile>) -> Result<()>,
{
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = std::io::BufWriter::new(&mut tmp);
        body(&mut w)?;
        w.flush()?;
    }
    let path = dir.join(name);
    tmp.persist(&path).map_err(|e| Error::Io(e.error))?;
    Ok(path)
}

pub fn load_summary(dir: &Path) -> Result<RunSummary> {
    let path = dir.join(SUMMARY_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Report(format!("missing run at {}: {e}", dir.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Report(format!("{}: {e}", path.display())))
}

/// Re-certifies a trace file on its own: rebuilds the problem from the trace
/// header, checks that replaying the event log reproduces the last snapshot
/// bit for bit, and evaluates the cycle bound at every snapshot.
pub fn certify_trace(trace: &Trace, tol: Option<f64>) -> Result<(RateData, Certificate)> {
    let meta = trace
        .header
        .meta
        .clone()
        .ok_or_else(|| Error::Trace("trace header does not describe its instance".into()))?;
    let instance: InstanceSpec =
        serde_json::from_value(meta).map_err(|e| Error::Trace(e.to_string()))?;
    let (problem, alphas) = instance.build()?;
    if alphas != trace.header.alphas {
        return Err(Error::Trace(
            "regularization in header disagrees with the instance".into(),
        ));
    }
    let reg = Regularization::new(alphas, trace.header.gamma)?;
    let lip: Lipschitz = crate::certify::lipschitz_for(&problem, reg.alphas())?;

    if let Some(last) = trace.snapshots.last() {
        let upto = trace.events.partition_point(|e| e.tick() <= last.tick);
        let views = replay(&problem, &reg, &trace.header.x0, &trace.events[..upto])?;
        if views.iter().zip(&last.views).any(|(v, s)| &v.state != s) {
            return Err(Error::Trace(format!(
                "replaying the log does not reproduce the snapshot at tick {}",
                last.tick
            )));
        }
    }

    let x_hat_a = solve_reference(&problem, &reg, DEFAULT_REFERENCE_TOL)?;
    let d0 = compute_d0(&[&trace.header.x0], &x_hat_a, problem.layout())?;
    let rate = RateData::new(&reg, &lip, x_hat_a, d0)?;
    let cert = check_theorem3(trace, &rate, tol)?;
    Ok((rate, cert))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    /// Rows sorted by increasing `‖A‖`.
    pub rows: Vec<RunSummary>,
}

/// Builds the regularization comparison table and checks that the final
/// unregularized error grows strictly with `‖A‖`.
pub fn emit_report(runs: &[RunSummary]) -> Result<Report> {
    if runs.len() < 3 {
        return Err(Error::Report(format!(
            "need runs for A1, A2 and A3, got {}",
            runs.len()
        )));
    }
    let mut rows = runs.to_vec();
    rows.sort_by(|a, b| a.a_norm.total_cmp(&b.a_norm));
    for pair in rows.windows(2) {
        let (lo, hi) = (&pair[0], &pair[1]);
        if !(hi.final_unregularized_error > lo.final_unregularized_error) || hi.a_norm == lo.a_norm
        {
            return Err(Error::Report(format!(
                "unregularized error is not strictly increasing in ||A||: {} (||A|| = {}) has {:e}, {} (||A|| = {}) has {:e}",
                lo.label, lo.a_norm, lo.final_unregularized_error, hi.label, hi.a_norm, hi.final_unregularized_error
            )));
        }
    }
    Ok(Report { rows })
}

impl Report {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "label,a_norm,final_regularized_error,final_unregularized_error,final_tick,cycles"
        )?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{:e},{:e},{},{}",
                r.label,
                r.a_norm,
                r.final_regularized_error,
                r.final_unregularized_error,
                r.final_tick,
                r.cycles
            )?;
        }
        Ok(())
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "# errors of agent 1's local copy in the block-maximum norm"
        )?;
        writeln!(
            f,
            "{:<8} {:>8} {:>16} {:>18}",
            "run", "||A||", "regularized", "unregularized"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<8} {:>8} {:>16.4e} {:>18.4e}",
                r.label, r.a_norm, r.final_regularized_error, r.final_unregularized_error
            )?;
        }
        Ok(())
    }
}
