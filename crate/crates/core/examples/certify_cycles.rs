// Count communication cycles and check the observed error against q^c(k)·D₀.

use std::error::Error;

use async_blockopt::certify::{check_theorem3, count_cycles, RateData};
use async_blockopt::engine;
use async_blockopt::netflow::{self, RegularizationChoice};

pub fn run() -> Result<(), Box<dyn Error>> {
    let mut world = netflow::paper_instance(RegularizationChoice::A3, 3)?;
    let trace = engine::run(&mut world, 8_000, 1_000)?;
    let rate = RateData::for_problem(
        world.problem(),
        world.regularization(),
        &trace.snapshots[0].views,
    )?;
    println!("q = {:.10}, D0 = {:.6}", rate.q, rate.d0);

    let cycles = count_cycles(&trace.events, world.agents())?;
    let first: Vec<u64> = cycles.completions.iter().take(5).copied().collect();
    println!(
        "{} cycles, first completed at ticks {first:?}",
        cycles.total()
    );

    let cert = check_theorem3(&trace, &rate, None)?;
    cert.write_csv(std::io::stdout().lock())?;
    println!("violations: {}", cert.violations);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run()
}
