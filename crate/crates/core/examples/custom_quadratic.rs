// A user-defined cost model with multi-dimensional blocks of mixed norms.

use std::error::Error;
use std::ops::Range;
use std::sync::Arc;

use async_blockopt::certify::{check_theorem3, RateData};
use async_blockopt::engine::{self, init_world, DelayModel, Schedule};
use async_blockopt::problem::{Block, BlockLayout, CostModel, NormOrder, Problem, Regularization};

/// Each agent tracks a private target; neighbours in a ring pull towards each other.
struct RingTracking {
    layout: BlockLayout,
    targets: Vec<f64>,
    coupling: f64,
}

impl RingTracking {
    fn neighbour(&self, k: usize) -> usize {
        (k + 1) % self.targets.len()
    }
}

impl CostModel for RingTracking {
    fn local_cost(&self, agent: usize, block: &[f64]) -> f64 {
        let t = &self.targets[self.layout.range(agent)];
        0.5 * block
            .iter()
            .zip(t)
            .map(|(x, t)| (x - t).powi(2))
            .sum::<f64>()
    }

    fn local_grad(&self, agent: usize, block: &[f64], out: &mut [f64]) {
        let t = &self.targets[self.layout.range(agent)];
        for ((o, x), t) in out.iter_mut().zip(block).zip(t) {
            *o = x - t;
        }
    }

    fn coupling_cost(&self, x: &[f64]) -> f64 {
        let n = x.len();
        0.5 * self.coupling
            * (0..n)
                .map(|k| (x[k] - x[self.neighbour(k)]).powi(2))
                .sum::<f64>()
    }

    fn coupling_grad(&self, x: &[f64], rows: Range<usize>, out: &mut [f64]) {
        let n = x.len();
        for (o, k) in out.iter_mut().zip(rows) {
            let prev = (k + n - 1) % n;
            *o = self.coupling * (2.0 * x[k] - x[self.neighbour(k)] - x[prev]);
        }
    }

    fn block_curvature_bound(&self, _agent: usize) -> Option<f64> {
        Some(1.0 + 4.0 * self.coupling)
    }
}

pub fn run() -> Result<(), Box<dyn Error>> {
    let layout = BlockLayout::new(vec![
        Block {
            dim: 3,
            order: NormOrder::Finite(2.0),
            weight: 1.0,
        },
        Block {
            dim: 2,
            order: NormOrder::Infinity,
            weight: 2.0,
        },
        Block {
            dim: 4,
            order: NormOrder::Finite(1.0),
            weight: 3.0,
        },
    ])?;
    let targets = vec![1.0, -1.0, 2.0, 0.5, 0.0, -2.0, 1.5, 0.25, -0.75];
    let cost = RingTracking {
        layout: layout.clone(),
        targets,
        coupling: 0.2,
    };
    let problem = Problem::with_uniform_box(layout, Arc::new(cost), -3.0, 3.0)?;

    let reg = Regularization::new(vec![0.05, 0.1, 0.02], 0.5)?;
    let x0 = vec![0.0; problem.dim()];
    let schedule = Schedule::new(0.3, 0.3, DelayModel::Queued { max_latency: 2 })?;
    let mut world = init_world(problem.clone(), reg.clone(), x0.clone(), 11, schedule)?;
    let trace = engine::run(&mut world, 3_000, 500)?;

    let rate = RateData::for_problem(&problem, &reg, &[x0])?;
    let cert = check_theorem3(&trace, &rate, None)?;
    println!(
        "q = {:.6}, D0 = {:.4}, {} cycles",
        rate.q, rate.d0, cert.total_cycles
    );
    for row in &cert.rows {
        println!(
            "tick {:>5}: observed {:.3e} ≤ bound {:.3e}: {}",
            row.tick, row.observed, row.bound, row.pass
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run()
}
