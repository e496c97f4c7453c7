//! Rate theory objects and trace certification.
//!
//! With `q = max{ max_i |1 − γα_i|, max_i |1 − γL_i| }` and
//! `D₀ = max_i ‖xⁱ(0) − x̂_A‖_max`, the level sets
//! `X(s) = { y ∈ X : ‖y − x̂_A‖_max ≤ qˢ D₀ }` are nested, and after `c(k)`
//! completed communication cycles every agent's copy satisfies
//! `‖xⁱ(k) − x̂_A‖_max ≤ q^{c(k)} D₀`. This module computes those objects and
//! checks the bound on recorded traces.

use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::blocknorm::max_norm_distance;
use crate::engine::{Event, Trace};
use crate::problem::{BlockLayout, Lipschitz, Problem, Regularization};
use crate::{Error, Result};

pub const DEFAULT_REFERENCE_TOL: f64 = 1e-12;
pub const REFERENCE_MAX_ITERS: u64 = 10_000_000;
const LIPSCHITZ_SAMPLES: usize = 2_000;
const LIPSCHITZ_SEED: u64 = 0x5eed;

/// `q = max{ max_i |1 − γα_i|, max_i |1 − γL_i| }`.
pub fn compute_q(gamma: f64, alphas: &[f64], lipschitz: &[f64]) -> Result<f64> {
    if alphas.is_empty() || lipschitz.is_empty() {
        return Err(Error::InvalidParameter(
            "compute_q needs at least one agent".into(),
        ));
    }
    let worst = |vals: &[f64]| {
        vals.iter()
            .map(|v| (1.0 - gamma * v).abs())
            .fold(0.0, f64::max)
    };
    Ok(worst(alphas).max(worst(lipschitz)))
}

/// `D₀`: the worst initial block-max distance to `x̂_A` over all agents' copies.
pub fn compute_d0<V: AsRef<[f64]>>(
    views: &[V],
    x_hat_a: &[f64],
    layout: &BlockLayout,
) -> Result<f64> {
    views.iter().try_fold(0.0_f64, |acc, v| {
        Ok(acc.max(max_norm_distance(layout, v.as_ref(), x_hat_a)?))
    })
}

/// Lipschitz data for `reg`'s weights: analytic when the cost model has it,
/// otherwise sampled with a fixed seed so results are reproducible.
pub fn lipschitz_for(problem: &Problem, alphas: &[f64]) -> Result<Lipschitz> {
    let mut rng = ChaCha8Rng::seed_from_u64(LIPSCHITZ_SEED);
    Lipschitz::resolve(problem, alphas, LIPSCHITZ_SAMPLES, &mut rng)
}

/// `x̂_A = argmin_{x∈X} f_A(x)` by synchronous projected gradient with
/// stepsize `1/L_max`, stopped when successive iterates differ by less than
/// `tol` in max-abs norm.
pub fn solve_reference(problem: &Problem, reg: &Regularization, tol: f64) -> Result<Vec<f64>> {
    let lip = lipschitz_for(problem, reg.alphas())?;
    solve_reference_with_step(problem, reg, 1.0 / lip.max(), tol, REFERENCE_MAX_ITERS)
}

/// Projected gradient from the box projection of the origin with a fixed step.
pub fn solve_reference_with_step(
    problem: &Problem,
    reg: &Regularization,
    step: f64,
    tol: f64,
    max_iters: u64,
) -> Result<Vec<f64>> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tolerance {tol} must be > 0"
        )));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidParameter(format!("step {step} must be > 0")));
    }
    let mut x = vec![0.0; problem.dim()];
    problem.clamp(&mut x);
    let mut residual = f64::INFINITY;
    for _ in 0..max_iters {
        let g = problem.grad(reg, &x)?;
        let mut next: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - step * gi).collect();
        problem.clamp(&mut next);
        residual = x
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        x = next;
        if residual < tol {
            return Ok(x);
        }
    }
    Err(Error::IterationCap {
        iterations: max_iters,
        residual,
    })
}

/// `‖x − clamp(x − γ∇f_A(x))‖_∞`, zero exactly at fixed points.
pub fn fixed_point_residual(
    problem: &Problem,
    reg: &Regularization,
    x: &[f64],
    step: f64,
) -> Result<f64> {
    let g = problem.grad(reg, x)?;
    let mut y: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - step * b).collect();
    problem.clamp(&mut y);
    Ok(x.iter()
        .zip(&y)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateData {
    pub q: f64,
    pub d0: f64,
    pub x_hat_a: Vec<f64>,
    pub gamma: f64,
    pub alphas: Vec<f64>,
    pub lipschitz: Vec<f64>,
}

impl RateData {
    pub fn new(reg: &Regularization, lip: &Lipschitz, x_hat_a: Vec<f64>, d0: f64) -> Result<Self> {
        if !(d0 >= 0.0) {
            return Err(Error::InvalidParameter(format!("D0 = {d0} must be >= 0")));
        }
        Ok(RateData {
            q: compute_q(reg.gamma(), reg.alphas(), &lip.per_block)?,
            d0,
            x_hat_a,
            gamma: reg.gamma(),
            alphas: reg.alphas().to_vec(),
            lipschitz: lip.per_block.clone(),
        })
    }

    /// Resolves Lipschitz data, solves for `x̂_A` and measures `D₀` from the
    /// given initial views.
    pub fn for_problem<V: AsRef<[f64]>>(
        problem: &Problem,
        reg: &Regularization,
        initial_views: &[V],
    ) -> Result<Self> {
        let lip = lipschitz_for(problem, reg.alphas())?;
        let x_hat_a = solve_reference(problem, reg, DEFAULT_REFERENCE_TOL)?;
        let d0 = compute_d0(initial_views, &x_hat_a, problem.layout())?;
        Self::new(reg, &lip, x_hat_a, d0)
    }

    /// Radius `qˢ D₀` of the level set `X(s)`.
    pub fn level_radius(&self, s: u64) -> f64 {
        self.q.powf(s as f64) * self.d0
    }

    /// The default certification tolerance `1e-9·(1 + D₀)`.
    pub fn default_tol(&self) -> f64 {
        1e-9 * (1.0 + self.d0)
    }
}

/// Nondecreasing cycle counter `c(k)`, stored as the ticks at which cycles
/// completed.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CycleCount {
    pub completions: Vec<u64>,
}

impl CycleCount {
    /// `c(tick)`.
    pub fn at(&self, tick: u64) -> u64 {
        self.completions.partition_point(|&t| t <= tick) as u64
    }

    pub fn total(&self) -> u64 {
        self.completions.len() as u64
    }
}

/// Counts communication cycles in an ordered event log.
///
/// A cycle opened after tick `t₀` completes at the first tick `t` by which
/// (a) every agent `i` has updated at some `u_i ∈ (t₀, t]` and (b) every
/// ordered pair `j → i` has seen a delivery carrying `τ ≥ u_j`, with `u_j`
/// the first such update. The next cycle then opens after `t`; updates logged
/// later in the completing tick belong to no cycle. The first cycle also
/// admits updates at tick 0.
pub fn count_cycles(events: &[Event], agents: usize) -> Result<CycleCount> {
    if agents == 0 {
        return Err(Error::MalformedLog("log describes zero agents".into()));
    }
    let mut first_update: Vec<Option<u64>> = vec![None; agents];
    let mut updated = 0usize;
    let mut satisfied = vec![false; agents * agents];
    let pairs = agents * (agents - 1);
    let mut satisfied_count = 0usize;
    let mut opened_after: Option<u64> = None;
    let mut last_tick = 0;
    let mut out = CycleCount::default();

    for e in events {
        let tick = e.tick();
        if tick < last_tick {
            return Err(Error::MalformedLog(format!(
                "tick {tick} follows tick {last_tick}"
            )));
        }
        last_tick = tick;
        let in_window = |t: u64| opened_after.is_none_or(|t0| t > t0);
        match *e {
            Event::Update { agent, .. } => {
                if agent >= agents {
                    return Err(Error::MalformedLog(format!(
                        "update by unknown agent {agent}"
                    )));
                }
                if in_window(tick) && first_update[agent].is_none() {
                    first_update[agent] = Some(tick);
                    updated += 1;
                }
            }
            Event::Deliver { from, to, tau, .. } => {
                if from >= agents || to >= agents {
                    return Err(Error::MalformedLog(format!(
                        "delivery {from} -> {to} names an unknown agent"
                    )));
                }
                if from == to {
                    return Err(Error::MalformedLog(format!("self delivery by {from}")));
                }
                if tau > tick {
                    return Err(Error::MalformedLog(format!(
                        "delivery at tick {tick} carries tau {tau}"
                    )));
                }
                let pair = from * agents + to;
                if let Some(u) = first_update[from] {
                    if tau >= u && !satisfied[pair] {
                        satisfied[pair] = true;
                        satisfied_count += 1;
                    }
                }
            }
        }
        if updated == agents && satisfied_count == pairs {
            out.completions.push(tick);
            opened_after = Some(tick);
            first_update.iter_mut().for_each(|u| *u = None);
            satisfied.iter_mut().for_each(|s| *s = false);
            updated = 0;
            satisfied_count = 0;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateRow {
    pub tick: u64,
    pub cycles: u64,
    pub bound: f64,
    pub observed: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub rows: Vec<CertificateRow>,
    pub tol: f64,
    pub total_cycles: u64,
    pub violations: usize,
    /// Largest `observed − bound` over failing rows, zero when none fail.
    pub max_violation: f64,
}

impl Certificate {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    /// Comma-separated table with header `tick,cycles,bound,observed,pass`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "tick,cycles,bound,observed,pass")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{:e},{:e},{}",
                r.tick, r.cycles, r.bound, r.observed, r.pass
            )?;
        }
        Ok(())
    }
}

/// `max_i ‖xⁱ − x̂_A‖_max` over a set of views.
pub fn worst_view_error<V: AsRef<[f64]>>(
    views: &[V],
    x_hat_a: &[f64],
    layout: &BlockLayout,
) -> Result<f64> {
    compute_d0(views, x_hat_a, layout)
}

/// Checks `max_i ‖xⁱ(k) − x̂_A‖_max ≤ q^{c(k)} D₀ + tol` at every snapshot.
/// Violations are reported in the certificate, not as errors.
pub fn check_theorem3(trace: &Trace, rate: &RateData, tol: Option<f64>) -> Result<Certificate> {
    let tol = tol.unwrap_or_else(|| rate.default_tol());
    let layout = &trace.header.layout;
    let cycles = count_cycles(&trace.events, trace.header.agents)?;
    let mut rows = Vec::with_capacity(trace.snapshots.len());
    let mut violations = 0;
    let mut max_violation = 0.0_f64;
    for snap in &trace.snapshots {
        let c = cycles.at(snap.tick);
        let bound = rate.level_radius(c);
        let observed = worst_view_error(&snap.views, &rate.x_hat_a, layout)?;
        let pass = observed <= bound + tol;
        if !pass {
            violations += 1;
            max_violation = max_violation.max(observed - bound);
        }
        rows.push(CertificateRow {
            tick: snap.tick,
            cycles: c,
            bound,
            observed,
            pass,
        });
    }
    Ok(Certificate {
        rows,
        tol,
        total_cycles: cycles.total(),
        violations,
        max_violation,
    })
}

/// Whether one synchronous step `θ_i(y) = y_i − γ∇_i f_A(y)` maps a point of
/// `X(s)` into `X_i(s+1)` for every block.
pub fn check_assumption4_step(
    problem: &Problem,
    reg: &Regularization,
    y: &[f64],
    s: u64,
    rate: &RateData,
    tol: f64,
) -> Result<bool> {
    let layout = problem.layout();
    let dist = max_norm_distance(layout, y, &rate.x_hat_a)?;
    if dist > rate.level_radius(s) + tol {
        return Err(Error::Precondition(format!(
            "point is at distance {dist:e} from x_hat_A, outside X({s}) of radius {:e}",
            rate.level_radius(s)
        )));
    }
    let next = rate.level_radius(s + 1) + tol;
    for i in 0..problem.agents() {
        let g = problem.grad_block(reg, y, i)?;
        let r = layout.range(i);
        let diff: Vec<f64> = y[r.clone()]
            .iter()
            .zip(&g)
            .zip(&rate.x_hat_a[r])
            .map(|((yi, gi), xi)| yi - reg.gamma() * gi - xi)
            .collect();
        let blk = layout.block(i);
        if blk.order.norm(&diff) / blk.weight > next {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Random feasible point of `X(s)`.
///
/// Each block is placed in a random direction from `x̂_A` at a weighted
/// `p_i`-distance up to `qˢ D₀` (exactly on the boundary half the time), then
/// projected onto the box, which can only shrink its distance.
pub fn sample_level_set<R: Rng + ?Sized>(
    problem: &Problem,
    rate: &RateData,
    s: u64,
    rng: &mut R,
) -> Vec<f64> {
    let layout = problem.layout();
    let radius = rate.level_radius(s);
    let mut y = rate.x_hat_a.clone();
    for (i, blk) in layout.blocks().iter().enumerate() {
        let r = layout.range(i);
        let dir: Vec<f64> = r.clone().map(|_| rng.sample(StandardNormal)).collect();
        let norm = blk.order.norm(&dir);
        if norm == 0.0 {
            continue;
        }
        let frac = if rng.random_bool(0.5) {
            1.0
        } else {
            rng.random::<f64>()
        };
        let scale = frac * radius * blk.weight / norm;
        for (yk, d) in y[r].iter_mut().zip(&dir) {
            *yk += scale * d;
        }
    }
    problem.clamp(&mut y);
    y
}
