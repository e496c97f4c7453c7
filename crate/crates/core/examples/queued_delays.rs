// Messages with random latency: fewer cycles, same certificate.

use std::error::Error;

use async_blockopt::engine::DelayModel;
use async_blockopt::experiment::{simulate, ExperimentConfig};
use async_blockopt::netflow::RegularizationChoice;

pub fn run() -> Result<(), Box<dyn Error>> {
    for delay in [
        DelayModel::Instant,
        DelayModel::Queued { max_latency: 5 },
        DelayModel::Queued { max_latency: 50 },
    ] {
        let mut cfg = ExperimentConfig::paper(RegularizationChoice::A3);
        cfg.delay = delay;
        cfg.ticks = 10_000;
        cfg.snapshot_stride = 100;
        let s = simulate(&cfg)?.summary;
        println!(
            "{delay:?}: {} cycles, final error {:.3e}, {} violations",
            s.cycles, s.final_regularized_error, s.violations
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run()
}
