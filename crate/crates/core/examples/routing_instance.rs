// The eight-route network utility problem: routes, edge loads and Lipschitz data.

use std::error::Error;

use async_blockopt::certify::{lipschitz_for, solve_reference, DEFAULT_REFERENCE_TOL};
use async_blockopt::netflow::{self, RegularizationChoice};
use async_blockopt::problem::Regularization;

pub fn run() -> Result<(), Box<dyn Error>> {
    let c = netflow::build_connection_matrix(&netflow::PAPER_ROUTES, netflow::PAPER_EDGES)?;
    println!("connection matrix (edges × routes):{c}");
    let p = netflow::paper_problem();
    let ones = vec![1.0; p.dim()];
    println!("f(1) = {:.10}", p.eval_f(&ones)?);

    for choice in RegularizationChoice::ALL {
        let lip = lipschitz_for(&p, &choice.diagonal())?;
        println!("{choice}: L_max = {:.6}, M = {:.6}", lip.max(), lip.m());
    }

    let unreg = Regularization::unregularized(p.agents(), 1.0)?;
    let x_hat = solve_reference(&p, &unreg, DEFAULT_REFERENCE_TOL)?;
    let pretty: Vec<String> = x_hat.iter().map(|v| format!("{v:.4}")).collect();
    println!("unregularized optimum: [{}]", pretty.join(", "));
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run()
}
