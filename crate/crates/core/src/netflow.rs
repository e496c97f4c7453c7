//! Multi-agent flow routing: eight users route one flow each over a
//! nine-edge network. Agent `i` values its flow through
//! `f_i(x_i) = −s_l·log(1 + x_i)` and all agents share the congestion cost
//! `c(x) = s_c·xᵀCᵀCx`, where `C` is the edge-by-flow connection matrix.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::blocknorm::spectral_norm;
use crate::engine::{init_world, Schedule, World};
use crate::problem::{
    BlockLayout, CostModel, Interval, Lipschitz, NormOrder, Problem, Regularization,
};
use crate::{Error, Result};

pub const PAPER_EDGES: usize = 9;

/// Edges (1-based) traversed by each agent's flow.
pub const PAPER_ROUTES: [&[usize]; 8] = [
    &[1, 3, 6],
    &[4, 7, 8],
    &[2, 4, 7, 5],
    &[3, 4, 7],
    &[1, 3, 6, 7, 5],
    &[2, 4, 9],
    &[5, 8, 9, 6],
    &[7, 4],
];

pub const PAPER_WEIGHTS: [f64; 8] = [12.0, 8.0, 6.0, 7.0, 6.0, 10.0, 9.0, 10.0];
pub const PAPER_NORMS: [f64; 8] = [f64::INFINITY, 20.0, 3.0, 90.0, 6.0, 12.0, 2.0, 9.0];

pub const DEFAULT_SCALE_LOCAL: f64 = 100.0;
pub const DEFAULT_SCALE_COUPLING: f64 = 1.0 / 20.0;

/// Upper end of every flow's box `[0, BOX_UPPER]`. Large enough that the
/// regularized and unregularized minimizers are interior for all three
/// regularization choices.
pub const BOX_UPPER: f64 = 20.0;

/// The three published regularization diagonals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegularizationChoice {
    A1,
    A2,
    A3,
}

impl RegularizationChoice {
    pub const ALL: [RegularizationChoice; 3] = [Self::A1, Self::A2, Self::A3];

    pub fn diagonal(self) -> [f64; 8] {
        match self {
            Self::A1 => [3e-4, 1e-4, 9e-4, 2e-4, 1e-3, 1e-3, 5e-4, 4e-4],
            Self::A2 => [0.01, 0.01, 0.003, 0.005, 0.002, 0.01, 0.005, 0.002],
            Self::A3 => [0.08, 0.1, 0.1, 0.09, 0.009, 0.1, 0.08, 0.04],
        }
    }
}

impl fmt::Display for RegularizationChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for RegularizationChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A1" => Ok(Self::A1),
            "A2" => Ok(Self::A2),
            "A3" => Ok(Self::A3),
            other => Err(Error::Config(format!(
                "unknown regularization {other:?}, expected A1, A2 or A3"
            ))),
        }
    }
}

/// `C[k][i] = 1` iff flow `i` traverses edge `k` (edges are 1-based in `routes`).
pub fn build_connection_matrix<R: AsRef<[usize]>>(
    routes: &[R],
    edges: usize,
) -> Result<DMatrix<f64>> {
    let mut c = DMatrix::zeros(edges, routes.len());
    for (i, route) in routes.iter().enumerate() {
        for &e in route.as_ref() {
            if e == 0 || e > edges {
                return Err(Error::InvalidParameter(format!(
                    "agent {} uses edge {e}, outside 1..={edges}",
                    i + 1
                )));
            }
            c[(e - 1, i)] = 1.0;
        }
    }
    Ok(c)
}

/// Parses a route table: one line per agent, `agent edge edge ...`, tokens
/// separated by whitespace or commas, edges optionally written `e3`.
/// Blank lines and `#` comments are ignored. Agents are numbered from 1.
pub fn parse_route_table(text: &str) -> Result<Vec<Vec<usize>>> {
    let mut rows: Vec<(usize, Vec<usize>)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let bad = |tok: &str| {
            Error::Config(format!(
                "route table line {}: bad token {tok:?}",
                lineno + 1
            ))
        };
        let mut toks = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty());
        let agent_tok = toks.next().unwrap();
        let agent: usize = agent_tok.parse().map_err(|_| bad(agent_tok))?;
        let edges = toks
            .map(|t| {
                t.trim_start_matches(['e', 'E'])
                    .parse::<usize>()
                    .map_err(|_| bad(t))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((agent, edges));
    }
    rows.sort_by_key(|(a, _)| *a);
    for (k, (a, _)) in rows.iter().enumerate() {
        if *a != k + 1 {
            return Err(Error::Config(format!(
                "route table must list agents 1..={} exactly once",
                rows.len()
            )));
        }
    }
    Ok(rows.into_iter().map(|(_, e)| e).collect())
}

pub fn paper_routes() -> Vec<Vec<usize>> {
    PAPER_ROUTES.iter().map(|r| r.to_vec()).collect()
}

pub fn paper_layout() -> BlockLayout {
    let orders: Vec<NormOrder> = PAPER_NORMS
        .iter()
        .map(|&p| NormOrder::new(p).unwrap())
        .collect();
    BlockLayout::scalar(&PAPER_WEIGHTS, &orders).unwrap()
}

/// Log utilities plus quadratic congestion over scalar flows.
#[derive(Debug, Clone)]
pub struct RoutingCost {
    gram: DMatrix<f64>,
    scale_local: f64,
    scale_coupling: f64,
    lambda_max: f64,
    curvature: Vec<f64>,
}

impl RoutingCost {
    /// `λ_max(CᵀC)`.
    pub fn gram_lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }
}

impl CostModel for RoutingCost {
    fn local_cost(&self, _agent: usize, block: &[f64]) -> f64 {
        block.iter().map(|x| -self.scale_local * x.ln_1p()).sum()
    }

    fn local_grad(&self, _agent: usize, block: &[f64], out: &mut [f64]) {
        for (o, x) in out.iter_mut().zip(block) {
            *o = -self.scale_local / (1.0 + x);
        }
    }

    fn coupling_cost(&self, x: &[f64]) -> f64 {
        let n = x.len();
        let mut acc = 0.0;
        for r in 0..n {
            let row: f64 = (0..n).map(|k| self.gram[(r, k)] * x[k]).sum();
            acc += x[r] * row;
        }
        self.scale_coupling * acc
    }

    fn coupling_grad(&self, x: &[f64], rows: std::ops::Range<usize>, out: &mut [f64]) {
        for (o, r) in out.iter_mut().zip(rows) {
            let row: f64 = x
                .iter()
                .enumerate()
                .map(|(k, xk)| self.gram[(r, k)] * xk)
                .sum();
            *o = 2.0 * self.scale_coupling * row;
        }
    }

    fn block_curvature_bound(&self, agent: usize) -> Option<f64> {
        Some(self.curvature[agent])
    }

    fn gradient_lipschitz(&self) -> Option<f64> {
        self.curvature.iter().cloned().reduce(f64::max)
    }
}

/// Routing problem over flows in `[lo, hi]` with the given layout (one
/// scalar block per column of `c`).
pub fn build_problem(
    c: &DMatrix<f64>,
    layout: BlockLayout,
    scale_local: f64,
    scale_coupling: f64,
    box_range: Interval,
) -> Result<Problem> {
    if c.iter().any(|v| *v != 0.0 && *v != 1.0) {
        return Err(Error::InvalidParameter(
            "connection matrix must be 0/1".into(),
        ));
    }
    if layout.dim() != c.ncols() || layout.agents() != c.ncols() {
        return Err(Error::DimensionMismatch {
            expected: c.ncols(),
            found: layout.dim(),
        });
    }
    if !(scale_local >= 0.0
        && scale_coupling >= 0.0
        && scale_local.is_finite()
        && scale_coupling.is_finite())
    {
        return Err(Error::InvalidParameter(
            "cost scales must be finite and >= 0".into(),
        ));
    }
    if box_range.lo <= -1.0 {
        return Err(Error::InvalidParameter(
            "flows must stay above -1 for log(1 + x)".into(),
        ));
    }
    let gram = c.transpose() * c;
    let lambda_max = spectral_norm(c).powi(2);
    let local_curv = scale_local / (1.0 + box_range.lo).powi(2);
    let curvature = vec![local_curv + 2.0 * scale_coupling * lambda_max; c.ncols()];
    let cost = RoutingCost {
        gram,
        scale_local,
        scale_coupling,
        lambda_max,
        curvature,
    };
    let n = layout.dim();
    Problem::new(layout, Arc::new(cost), vec![box_range; n])
}

/// The published instance: routes, layout, unit scales and boxes `[0, BOX_UPPER]`.
pub fn paper_problem() -> Problem {
    let c = build_connection_matrix(&PAPER_ROUTES, PAPER_EDGES).unwrap();
    build_problem(
        &c,
        paper_layout(),
        DEFAULT_SCALE_LOCAL,
        DEFAULT_SCALE_COUPLING,
        Interval::new(0.0, BOX_UPPER),
    )
    .unwrap()
}

/// Regularization for `problem` with the given weights and `γ = 1/L_max`
/// unless overridden. Fails outside `γ < 2/L_max`, `α_i < L_max`.
pub fn regularization_for(
    problem: &Problem,
    alphas: &[f64],
    gamma: Option<f64>,
) -> Result<(Regularization, Lipschitz)> {
    let lip = crate::certify::lipschitz_for(problem, alphas)?;
    let reg = Regularization::new(alphas.to_vec(), gamma.unwrap_or(1.0 / lip.max()))?;
    reg.check_rate_range(&lip)?;
    Ok((reg, lip))
}

/// Fully configured world for one of the published runs: `γ = 1/L_max`,
/// `x0 = 0`, update and communication probabilities 0.1, instant delivery.
pub fn paper_instance(choice: RegularizationChoice, seed: u64) -> Result<World> {
    let problem = paper_problem();
    let (reg, _) = regularization_for(&problem, &choice.diagonal(), None)?;
    let x0 = vec![0.0; problem.dim()];
    init_world(problem, reg, x0, seed, Schedule::default())
}
