// Run the asynchronous simulator and replay its event log.

use std::error::Error;

use async_blockopt::engine::{self, replay, Event};
use async_blockopt::netflow::{self, RegularizationChoice};

pub fn run() -> Result<(), Box<dyn Error>> {
    let mut world = netflow::paper_instance(RegularizationChoice::A2, 7)?;
    let trace = engine::run(&mut world, 5_000, 1_000)?;

    let updates = trace
        .events
        .iter()
        .filter(|e| matches!(e, Event::Update { .. }))
        .count();
    println!(
        "{} ticks, {updates} updates, {} deliveries",
        world.tick(),
        trace.events.len() - updates
    );
    for view in world.views().iter().take(3) {
        println!("agent {} holds τ = {:?}", view.id + 1, view.tau);
    }
    println!("trace digest {}", trace.digest());

    let views = replay(
        world.problem(),
        world.regularization(),
        world.x0(),
        world.log(),
    )?;
    println!("replay matches live views: {}", views == world.views());
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run()
}
