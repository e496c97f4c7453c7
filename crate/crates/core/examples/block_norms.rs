// Weighted block-maximum norms and the Euclidean bound on induced matrix norms.

use std::error::Error;

use async_blockopt::blocknorm::{
    brute_force_euclid_to_max, brute_force_induced_norm, lemma1_bound, max_norm, spectral_norm,
    BlockVectorView,
};
use async_blockopt::problem::{Block, BlockLayout, NormOrder};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run() -> Result<(), Box<dyn Error>> {
    let layout = BlockLayout::new(vec![
        Block {
            dim: 2,
            order: NormOrder::Finite(1.0),
            weight: 2.0,
        },
        Block {
            dim: 3,
            order: NormOrder::Infinity,
            weight: 1.0,
        },
        Block {
            dim: 1,
            order: NormOrder::new(3.0)?,
            weight: 4.0,
        },
    ])?;
    let x = [1.0, -2.0, 0.5, -0.25, 0.75, 6.0];
    let view = BlockVectorView::new(&x, &layout)?;
    let norms: Vec<f64> = view.block_norms().collect();
    println!("block norms ‖x_i‖/w_i = {norms:?}");
    println!("‖x‖_max = {}", max_norm(&layout, &x)?);

    let b = DMatrix::from_fn(6, 6, |i, j| 1.0 / (1.0 + i as f64 + 2.0 * j as f64));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    println!("‖B‖₂ = {:.6}", spectral_norm(&b));
    println!(
        "Euclidean bound          = {:.6}",
        lemma1_bound(&b, &layout)?
    );
    println!(
        "sup over ‖x‖₂ = 1 (est.)  = {:.6}",
        brute_force_euclid_to_max(&b, &layout, 5000, &mut rng)?
    );
    println!(
        "sup over ‖x‖_max = 1 (est.) = {:.6}",
        brute_force_induced_norm(&b, &layout, 5000, &mut rng)?
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run()
}
