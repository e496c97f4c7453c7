//! Weighted block-maximum norm `‖x‖_max = max_i ‖x_i‖_{p_i} / w_i` and the
//! Euclidean upper bound on its induced matrix norm.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::problem::BlockLayout;
use crate::{Error, Result};

const POWER_TOL: f64 = 1e-12;
const POWER_MAX_ITERS: usize = 10_000;

/// A vector read through a block layout.
#[derive(Debug, Clone, Copy)]
pub struct BlockVectorView<'a> {
    data: &'a [f64],
    layout: &'a BlockLayout,
}

impl<'a> BlockVectorView<'a> {
    pub fn new(data: &'a [f64], layout: &'a BlockLayout) -> Result<Self> {
        layout.check_len(data)?;
        Ok(BlockVectorView { data, layout })
    }

    pub fn block(&self, i: usize) -> &'a [f64] {
        &self.data[self.layout.range(i)]
    }

    /// `‖x_i‖_{p_i} / w_i` for every block.
    pub fn block_norms(&self) -> impl Iterator<Item = f64> + '_ {
        self.layout
            .blocks()
            .iter()
            .enumerate()
            .map(|(i, b)| b.order.norm(self.block(i)) / b.weight)
    }
}

pub fn block_max_norm(x: BlockVectorView<'_>) -> Result<f64> {
    if x.layout.agents() == 0 {
        return Err(Error::InvalidLayout("layout has no blocks".into()));
    }
    if x.data.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("block vector"));
    }
    Ok(x.block_norms().fold(0.0, f64::max))
}

/// `‖x‖_max` for a plain slice.
pub fn max_norm(layout: &BlockLayout, x: &[f64]) -> Result<f64> {
    block_max_norm(BlockVectorView::new(x, layout)?)
}

/// `‖x − y‖_max`.
pub fn max_norm_distance(layout: &BlockLayout, x: &[f64], y: &[f64]) -> Result<f64> {
    layout.check_len(y)?;
    let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    max_norm(layout, &diff)
}

/// Spectral norm `‖B‖₂` by power iteration on `BᵀB`.
///
/// Stops once the eigen-residual `‖BᵀBv − λv‖` drops below `1e-12·λ`.
pub fn spectral_norm(b: &DMatrix<f64>) -> f64 {
    let cols = b.ncols();
    if cols == 0 || b.amax() == 0.0 {
        return 0.0;
    }
    let gram = b.transpose() * b;
    // irrational offsets keep the start vector away from symmetric null spaces
    let mut v = DVector::from_fn(cols, |k, _| {
        1.0 + ((k as f64 + 1.0) * 0.618_033_988_749_895).fract()
    });
    v.normalize_mut();
    if (&gram * &v).norm() == 0.0 {
        // start fell in the null space; pick the column of largest norm instead
        let k = (0..cols)
            .max_by(|&a, &c| gram[(a, a)].total_cmp(&gram[(c, c)]))
            .unwrap();
        v = DVector::zeros(cols);
        v[k] = 1.0;
    }
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let w = &gram * &v;
        lambda = v.dot(&w);
        let residual = (&w - lambda * &v).norm();
        let wn = w.norm();
        if wn == 0.0 {
            return 0.0;
        }
        v = w / wn;
        if residual <= POWER_TOL * lambda {
            break;
        }
    }
    lambda.max(0.0).sqrt()
}

/// Euclidean upper bound on the induced block-maximum matrix norm:
/// `n^(1/p_min − 1/2)·‖B‖₂/w_min` when `p_min < 2`, else `‖B‖₂/w_min`.
pub fn lemma1_bound(b: &DMatrix<f64>, layout: &BlockLayout) -> Result<f64> {
    if b.nrows() != b.ncols() {
        return Err(Error::NotSquare {
            rows: b.nrows(),
            cols: b.ncols(),
        });
    }
    if b.nrows() != layout.dim() {
        return Err(Error::DimensionMismatch {
            expected: layout.dim(),
            found: b.nrows(),
        });
    }
    let base = spectral_norm(b) / layout.w_min();
    let inv_p = layout.p_min().reciprocal();
    if inv_p > 0.5 {
        Ok((layout.dim() as f64).powf(inv_p - 0.5) * base)
    } else {
        Ok(base)
    }
}

/// Lower estimate of `sup_{‖x‖_max = 1} ‖Bx‖_max` by random search.
///
/// Each trial draws every block from a Gaussian or a random sign pattern,
/// scales it onto (or inside) its weighted `p_i`-sphere, then rescales the
/// whole vector to unit block-max norm.
pub fn brute_force_induced_norm<R: Rng + ?Sized>(
    b: &DMatrix<f64>,
    layout: &BlockLayout,
    trials: usize,
    rng: &mut R,
) -> Result<f64> {
    check_square_trials(b, layout, trials)?;
    let mut best = 0.0_f64;
    let mut x = vec![0.0; layout.dim()];
    for t in 0..trials {
        let signs = t % 2 == 1;
        for (i, blk) in layout.blocks().iter().enumerate() {
            let r = layout.range(i);
            for v in &mut x[r.clone()] {
                *v = if signs {
                    if rng.random_bool(0.5) {
                        1.0
                    } else {
                        -1.0
                    }
                } else {
                    rng.sample(StandardNormal)
                };
            }
            let norm = blk.order.norm(&x[r.clone()]);
            let radius = if rng.random_bool(0.5) {
                1.0
            } else {
                rng.random::<f64>()
            };
            let scale = if norm > 0.0 {
                radius * blk.weight / norm
            } else {
                0.0
            };
            x[r].iter_mut().for_each(|v| *v *= scale);
        }
        let nx = max_norm(layout, &x)?;
        if nx == 0.0 {
            continue;
        }
        x.iter_mut().for_each(|v| *v /= nx);
        best = best.max(image_norm(b, layout, &x)?);
    }
    Ok(best)
}

/// Lower estimate of `sup_{‖x‖₂ = 1} ‖Bx‖_max`, the mixed operator norm that
/// [`lemma1_bound`] provably dominates.
pub fn brute_force_euclid_to_max<R: Rng + ?Sized>(
    b: &DMatrix<f64>,
    layout: &BlockLayout,
    trials: usize,
    rng: &mut R,
) -> Result<f64> {
    check_square_trials(b, layout, trials)?;
    let mut best = 0.0_f64;
    let mut x = vec![0.0; layout.dim()];
    for _ in 0..trials {
        x.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        let n2 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n2 == 0.0 {
            continue;
        }
        x.iter_mut().for_each(|v| *v /= n2);
        best = best.max(image_norm(b, layout, &x)?);
    }
    Ok(best)
}

fn check_square_trials(b: &DMatrix<f64>, layout: &BlockLayout, trials: usize) -> Result<()> {
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be positive".into()));
    }
    if b.nrows() != b.ncols() {
        return Err(Error::NotSquare {
            rows: b.nrows(),
            cols: b.ncols(),
        });
    }
    layout.check_len(b.column(0).as_slice())
}

fn image_norm(b: &DMatrix<f64>, layout: &BlockLayout, x: &[f64]) -> Result<f64> {
    let bx = b * DVector::from_column_slice(x);
    max_norm(layout, bx.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{Block, NormOrder};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn paper_layout() -> BlockLayout {
        let w = [12.0, 8.0, 6.0, 7.0, 6.0, 10.0, 9.0, 10.0];
        let p = [f64::INFINITY, 20.0, 3.0, 90.0, 6.0, 12.0, 2.0, 9.0];
        let orders: Vec<_> = p.iter().map(|&v| NormOrder::new(v).unwrap()).collect();
        BlockLayout::scalar(&w, &orders).unwrap()
    }

    #[test]
    fn hand_norms() {
        let layout = BlockLayout::new(vec![
            Block {
                dim: 2,
                order: NormOrder::Finite(2.0),
                weight: 1.0,
            },
            Block {
                dim: 1,
                order: NormOrder::Finite(1.0),
                weight: 2.0,
            },
        ])
        .unwrap();
        assert_eq!(max_norm(&layout, &[3.0, 4.0, -2.0]).unwrap(), 5.0);
        assert_eq!(max_norm(&layout, &[0.0; 3]).unwrap(), 0.0);
        assert!(max_norm(&layout, &[0.0, f64::NAN, 0.0]).is_err());
        assert!(max_norm(&layout, &[0.0; 2]).is_err());

        let mut x = [0.0; 8];
        x[0] = 12.0;
        assert_eq!(max_norm(&paper_layout(), &x).unwrap(), 1.0);
    }

    #[test]
    fn infinity_branch_is_exact() {
        let layout = BlockLayout::uniform(1, 3, NormOrder::Infinity, 1.0).unwrap();
        assert_eq!(max_norm(&layout, &[1.0, -7.5, 7.0]).unwrap(), 7.5);
    }

    #[test]
    fn lemma1_formula_cases() {
        let eye = DMatrix::<f64>::identity(4, 4);
        let two = BlockLayout::uniform(4, 1, NormOrder::Finite(2.0), 1.0).unwrap();
        assert!((lemma1_bound(&eye, &two).unwrap() - 1.0).abs() < 1e-12);
        let one = BlockLayout::uniform(4, 1, NormOrder::Finite(1.0), 1.0).unwrap();
        assert!((lemma1_bound(&eye, &one).unwrap() - 2.0).abs() < 1e-12);
        assert!(matches!(
            lemma1_bound(&DMatrix::zeros(4, 3), &one),
            Err(Error::NotSquare { rows: 4, cols: 3 })
        ));
    }

    #[test]
    fn spectral_norm_known_values() {
        assert_eq!(spectral_norm(&DMatrix::zeros(3, 3)), 0.0);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -3.0, 2.0]));
        assert!((spectral_norm(&d) - 3.0).abs() < 1e-12);
        // rank one with a start vector orthogonal to the row space
        let b = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 0.0, 0.0]);
        assert!((spectral_norm(&b) - 2.0_f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn brute_force_scalar_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let layout = BlockLayout::new(vec![
            Block {
                dim: 2,
                order: NormOrder::Finite(3.0),
                weight: 2.0,
            },
            Block {
                dim: 1,
                order: NormOrder::Infinity,
                weight: 5.0,
            },
        ])
        .unwrap();
        let zero = DMatrix::<f64>::zeros(3, 3);
        assert_eq!(
            brute_force_induced_norm(&zero, &layout, 50, &mut rng).unwrap(),
            0.0
        );
        let three = DMatrix::<f64>::identity(3, 3) * 3.0;
        let v = brute_force_induced_norm(&three, &layout, 7, &mut rng).unwrap();
        assert!((v - 3.0).abs() < 1e-12, "{v}");
        assert!(brute_force_induced_norm(&three, &layout, 0, &mut rng).is_err());
    }

    #[test]
    fn brute_force_diagonal_approaches_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let layout = BlockLayout::uniform(2, 1, NormOrder::Finite(2.0), 1.0).unwrap();
        let b = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
        let v = brute_force_induced_norm(&b, &layout, 200, &mut rng).unwrap();
        assert!(v <= 2.0 + 1e-12 && v > 1.99, "{v}");
    }

    // A row-sum matrix under the max-abs norm has induced norm 2 while its
    // spectral norm is sqrt(2): the Euclidean bound does not dominate the
    // norm induced by block-max unit inputs.
    #[test]
    fn induced_norm_can_exceed_euclidean_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layout = BlockLayout::uniform(2, 1, NormOrder::Infinity, 1.0).unwrap();
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]);
        let bound = lemma1_bound(&b, &layout).unwrap();
        let induced = brute_force_induced_norm(&b, &layout, 100, &mut rng).unwrap();
        assert!((bound - 2.0_f64.sqrt()).abs() < 1e-12);
        assert!((induced - 2.0).abs() < 1e-12, "{induced}");
        let euclid = brute_force_euclid_to_max(&b, &layout, 2000, &mut rng).unwrap();
        assert!(euclid <= bound + 1e-12);
    }
}
