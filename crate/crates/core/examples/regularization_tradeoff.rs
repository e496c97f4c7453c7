// Compare the three regularizations: speed of convergence against bias.

use std::error::Error;

use async_blockopt::experiment::{emit_report, simulate, ExperimentConfig};
use async_blockopt::netflow::RegularizationChoice;

pub fn run() -> Result<(), Box<dyn Error>> {
    let mut summaries = Vec::new();
    for choice in RegularizationChoice::ALL {
        let mut cfg = ExperimentConfig::paper(choice);
        cfg.seed = 1;
        cfg.snapshot_stride = 0;
        summaries.push(simulate(&cfg)?.summary);
    }
    print!("{}", emit_report(&summaries)?);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run()
}
