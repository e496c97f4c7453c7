//! Problem data: block layouts, cost models, feasible boxes and the
//! per-agent Tikhonov regularization.
//!
//! The aggregate cost is `f(x) = c(x) + Σ_i f_i(x_i)` and its regularized form
//! is `f_A(x) = f(x) + ½ Σ_i α_i ‖x_i‖²`. Gradients are always supplied
//! analytically by a [`CostModel`]; finite differences only appear in tests.

use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::blocknorm::spectral_norm;
use crate::{Error, Result};

/// Safety factor applied to sampled Lipschitz estimates.
pub const LIPSCHITZ_SAFETY: f64 = 1.1;

/// Order `p ∈ [1, ∞]` of the norm a block is measured in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormOrder {
    Finite(f64),
    Infinity,
}

impl NormOrder {
    pub fn new(p: f64) -> Result<Self> {
        if p == f64::INFINITY {
            Ok(NormOrder::Infinity)
        } else if p.is_finite() && p >= 1.0 {
            Ok(NormOrder::Finite(p))
        } else {
            Err(Error::InvalidLayout(format!(
                "norm order {p} is not in [1, inf]"
            )))
        }
    }

    /// `1/p`, zero for the max-abs norm.
    pub fn reciprocal(self) -> f64 {
        match self {
            NormOrder::Finite(p) => 1.0 / p,
            NormOrder::Infinity => 0.0,
        }
    }

    pub fn as_f64(self) -> f64 {
        match self {
            NormOrder::Finite(p) => p,
            NormOrder::Infinity => f64::INFINITY,
        }
    }

    /// The `p`-norm of `v`. Finite orders are evaluated on `v / max|v|` so large
    /// exponents do not overflow.
    pub fn norm(self, v: &[f64]) -> f64 {
        let peak = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        match self {
            NormOrder::Infinity => peak,
            _ if peak == 0.0 => 0.0,
            _ if v.len() == 1 => peak,
            NormOrder::Finite(1.0) => v.iter().map(|x| x.abs()).sum(),
            NormOrder::Finite(2.0) => {
                peak * v.iter().map(|x| (x / peak).powi(2)).sum::<f64>().sqrt()
            }
            NormOrder::Finite(p) => {
                peak * v
                    .iter()
                    .map(|x| (x.abs() / peak).powf(p))
                    .sum::<f64>()
                    .powf(1.0 / p)
            }
        }
    }
}

impl fmt::Display for NormOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NormOrder::Finite(p) => write!(f, "{p}"),
            NormOrder::Infinity => f.write_str("inf"),
        }
    }
}

// Infinity is written as the string "inf" so the value survives JSON.
impl Serialize for NormOrder {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            NormOrder::Finite(p) => s.serialize_f64(*p),
            NormOrder::Infinity => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for NormOrder {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        let p = match Raw::deserialize(d)? {
            Raw::Num(p) => p,
            Raw::Text(s) => match s.trim().to_ascii_lowercase().as_str() {
                "inf" | "infinity" | "∞" => f64::INFINITY,
                other => other
                    .parse()
                    .map_err(|_| serde::de::Error::custom(format!("bad norm order {s:?}")))?,
            },
        };
        NormOrder::new(p).map_err(serde::de::Error::custom)
    }
}

/// One agent's block: dimension `n_i`, norm order `p_i` and weight `w_i ≥ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Block {
    pub dim: usize,
    pub order: NormOrder,
    pub weight: f64,
}

/// Contiguous partition of the ensemble vector into agents' blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockLayout {
    blocks: Vec<Block>,
    offsets: Vec<usize>,
}

impl BlockLayout {
    pub fn new(blocks: Vec<Block>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidLayout("layout has no blocks".into()));
        }
        let mut offsets = Vec::with_capacity(blocks.len() + 1);
        offsets.push(0);
        for (i, b) in blocks.iter().enumerate() {
            if b.dim == 0 {
                return Err(Error::InvalidLayout(format!("block {i} has dimension 0")));
            }
            if !(b.weight.is_finite() && b.weight >= 1.0) {
                return Err(Error::InvalidLayout(format!(
                    "block {i} weight {} is not a finite value >= 1",
                    b.weight
                )));
            }
            // re-validate in case the block was built by hand
            NormOrder::new(b.order.as_f64())?;
            offsets.push(offsets[i] + b.dim);
        }
        Ok(BlockLayout { blocks, offsets })
    }

    /// Layout of scalar blocks, one per `(weight, order)` pair.
    pub fn scalar(weights: &[f64], orders: &[NormOrder]) -> Result<Self> {
        if weights.len() != orders.len() {
            return Err(Error::DimensionMismatch {
                expected: weights.len(),
                found: orders.len(),
            });
        }
        Self::new(
            weights
                .iter()
                .zip(orders)
                .map(|(&weight, &order)| Block {
                    dim: 1,
                    order,
                    weight,
                })
                .collect(),
        )
    }

    pub fn uniform(agents: usize, dim: usize, order: NormOrder, weight: f64) -> Result<Self> {
        Self::new(vec![Block { dim, order, weight }; agents])
    }

    /// Number of blocks (agents).
    pub fn agents(&self) -> usize {
        self.blocks.len()
    }

    /// Total dimension `n`.
    pub fn dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, i: usize) -> &Block {
        &self.blocks[i]
    }

    pub fn range(&self, i: usize) -> Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn p_min(&self) -> NormOrder {
        self.blocks
            .iter()
            .map(|b| b.order)
            .min_by(|a, b| a.as_f64().total_cmp(&b.as_f64()))
            .unwrap()
    }

    pub fn w_min(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.weight)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn check_index(&self, i: usize) -> Result<()> {
        if i < self.agents() {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                index: i,
                len: self.agents(),
            })
        }
    }

    pub fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() == self.dim() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            })
        }
    }
}

impl Serialize for BlockLayout {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.blocks.serialize(s)
    }
}

impl<'de> Deserialize<'de> for BlockLayout {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        BlockLayout::new(Vec::<Block>::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

/// Local objectives `f_i` and the coupling cost `c`, with analytic gradients.
///
/// Implementations must be pure: the same inputs always give bit-identical
/// outputs.
pub trait CostModel: Send + Sync {
    fn local_cost(&self, agent: usize, block: &[f64]) -> f64;

    /// Writes `∇f_i(x_i)` into `out`.
    fn local_grad(&self, agent: usize, block: &[f64], out: &mut [f64]);

    fn coupling_cost(&self, x: &[f64]) -> f64;

    /// Writes the `rows` slice of `∇c(x)` into `out`.
    fn coupling_grad(&self, x: &[f64], rows: Range<usize>, out: &mut [f64]);

    /// Lipschitz constant of `∇_i f` (unregularized) over the feasible box,
    /// when known in closed form.
    fn block_curvature_bound(&self, _agent: usize) -> Option<f64> {
        None
    }

    /// Lipschitz constant `L` of the full gradient `∇f`, when known.
    fn gradient_lipschitz(&self) -> Option<f64> {
        None
    }
}

/// Quadratic costs: `f_i(x_i) = ½ Σ_k d_k (x_k − z_k)²` over the block's
/// coordinates and `c(x) = ½ xᵀ Q x` with `Q` symmetric positive semidefinite.
#[derive(Debug, Clone)]
pub struct QuadraticCost {
    layout: BlockLayout,
    curvature: Vec<f64>,
    centers: Vec<f64>,
    coupling: Option<DMatrix<f64>>,
}

impl QuadraticCost {
    pub fn new(
        layout: BlockLayout,
        curvature: Vec<f64>,
        centers: Vec<f64>,
        coupling: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let n = layout.dim();
        layout.check_len(&curvature)?;
        layout.check_len(&centers)?;
        if curvature.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::InvalidParameter(
                "curvatures must be finite and >= 0".into(),
            ));
        }
        if let Some(q) = &coupling {
            if q.nrows() != n || q.ncols() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: q.nrows().max(q.ncols()),
                });
            }
            if (q - q.transpose()).amax() > 1e-12 * (1.0 + q.amax()) {
                return Err(Error::InvalidParameter(
                    "coupling matrix must be symmetric".into(),
                ));
            }
        }
        Ok(QuadraticCost {
            layout,
            curvature,
            centers,
            coupling,
        })
    }

    /// `f ≡ 0` and `c ≡ 0`.
    pub fn zero(layout: BlockLayout) -> Self {
        let n = layout.dim();
        QuadraticCost {
            layout,
            curvature: vec![0.0; n],
            centers: vec![0.0; n],
            coupling: None,
        }
    }
}

impl CostModel for QuadraticCost {
    fn local_cost(&self, agent: usize, block: &[f64]) -> f64 {
        let r = self.layout.range(agent);
        block
            .iter()
            .zip(&self.curvature[r.clone()])
            .zip(&self.centers[r])
            .map(|((x, d), z)| 0.5 * d * (x - z) * (x - z))
            .sum()
    }

    fn local_grad(&self, agent: usize, block: &[f64], out: &mut [f64]) {
        let r = self.layout.range(agent);
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.curvature[r.start + k] * (block[k] - self.centers[r.start + k]);
        }
    }

    fn coupling_cost(&self, x: &[f64]) -> f64 {
        match &self.coupling {
            None => 0.0,
            Some(q) => {
                let v = nalgebra::DVector::from_column_slice(x);
                0.5 * v.dot(&(q * &v))
            }
        }
    }

    fn coupling_grad(&self, x: &[f64], rows: Range<usize>, out: &mut [f64]) {
        match &self.coupling {
            None => out.fill(0.0),
            Some(q) => {
                for (o, r) in out.iter_mut().zip(rows) {
                    *o = q.row(r).iter().zip(x).map(|(a, b)| a * b).sum();
                }
            }
        }
    }

    fn block_curvature_bound(&self, agent: usize) -> Option<f64> {
        let r = self.layout.range(agent);
        let local = self.curvature[r.clone()]
            .iter()
            .cloned()
            .fold(0.0, f64::max);
        let coupling = match &self.coupling {
            None => 0.0,
            Some(q) => spectral_norm(&q.rows(r.start, r.len()).into_owned()),
        };
        Some(local + coupling)
    }
}

/// Lower/upper bounds of one coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }
}

/// A fully specified optimization problem. Immutable and cheap to clone.
#[derive(Clone)]
pub struct Problem {
    layout: BlockLayout,
    cost: Arc<dyn CostModel>,
    boxes: Vec<Interval>,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("layout", &self.layout)
            .field("boxes", &self.boxes)
            .finish_non_exhaustive()
    }
}

impl Problem {
    pub fn new(
        layout: BlockLayout,
        cost: Arc<dyn CostModel>,
        boxes: Vec<Interval>,
    ) -> Result<Self> {
        if boxes.len() != layout.dim() {
            return Err(Error::DimensionMismatch {
                expected: layout.dim(),
                found: boxes.len(),
            });
        }
        for (k, b) in boxes.iter().enumerate() {
            if !(b.lo.is_finite() && b.hi.is_finite() && b.lo <= b.hi) {
                return Err(Error::InvalidParameter(format!(
                    "box of coordinate {k} is [{}, {}]; boxes must be non-empty and bounded",
                    b.lo, b.hi
                )));
            }
        }
        Ok(Problem {
            layout,
            cost,
            boxes,
        })
    }

    /// Every coordinate constrained to the same interval.
    pub fn with_uniform_box(
        layout: BlockLayout,
        cost: Arc<dyn CostModel>,
        lo: f64,
        hi: f64,
    ) -> Result<Self> {
        let n = layout.dim();
        Self::new(layout, cost, vec![Interval::new(lo, hi); n])
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn agents(&self) -> usize {
        self.layout.agents()
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn boxes(&self) -> &[Interval] {
        &self.boxes
    }

    pub fn cost(&self) -> &dyn CostModel {
        self.cost.as_ref()
    }

    /// Errors unless `x` has length `n`, is finite and lies inside the boxes.
    pub fn check_feasible(&self, x: &[f64]) -> Result<()> {
        self.check_input(x)?;
        for (k, (v, b)) in x.iter().zip(&self.boxes).enumerate() {
            if *v < b.lo || *v > b.hi {
                return Err(Error::OutsideBox {
                    coordinate: k,
                    value: *v,
                    lo: b.lo,
                    hi: b.hi,
                });
            }
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        self.layout.check_len(x)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ensemble vector"));
        }
        Ok(())
    }

    /// Projects block `i` of an ensemble vector onto its box in place.
    /// Returns whether any coordinate moved.
    pub fn clamp_block(&self, i: usize, block: &mut [f64]) -> bool {
        let r = self.layout.range(i);
        let mut moved = false;
        for (v, b) in block.iter_mut().zip(&self.boxes[r]) {
            let c = b.clamp(*v);
            moved |= c != *v;
            *v = c;
        }
        moved
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (v, b) in x.iter_mut().zip(&self.boxes) {
            *v = b.clamp(*v);
        }
    }

    /// `f(x) = c(x) + Σ_i f_i(x_i)`.
    pub fn eval_f(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        let local: f64 = (0..self.agents())
            .map(|i| self.cost.local_cost(i, &x[self.layout.range(i)]))
            .sum();
        Ok(self.cost.coupling_cost(x) + local)
    }

    /// `f_A(x) = f(x) + ½ Σ_i α_i ‖x_i‖²`.
    pub fn eval_f_a(&self, reg: &Regularization, x: &[f64]) -> Result<f64> {
        self.check_reg(reg)?;
        let f = self.eval_f(x)?;
        let quad: f64 = (0..self.agents())
            .map(|i| reg.alphas[i] * x[self.layout.range(i)].iter().map(|v| v * v).sum::<f64>())
            .sum();
        Ok(f + 0.5 * quad)
    }

    /// `∇_i f_A(x) = ∇_i c(x) + ∇f_i(x_i) + α_i x_i`.
    pub fn grad_block(&self, reg: &Regularization, x: &[f64], i: usize) -> Result<Vec<f64>> {
        self.layout.check_index(i)?;
        self.check_reg(reg)?;
        self.check_input(x)?;
        let mut out = vec![0.0; self.layout.block(i).dim];
        self.grad_block_unchecked(reg.alphas[i], x, i, &mut out);
        if out.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("block gradient"));
        }
        Ok(out)
    }

    pub(crate) fn grad_block_unchecked(&self, alpha: f64, x: &[f64], i: usize, out: &mut [f64]) {
        let r = self.layout.range(i);
        let mut local = vec![0.0; r.len()];
        self.cost.coupling_grad(x, r.clone(), out);
        self.cost.local_grad(i, &x[r.clone()], &mut local);
        for ((o, l), xi) in out.iter_mut().zip(&local).zip(&x[r]) {
            *o += l + alpha * xi;
        }
    }

    /// The full gradient `∇f_A(x)`, block by block.
    pub fn grad(&self, reg: &Regularization, x: &[f64]) -> Result<Vec<f64>> {
        self.check_reg(reg)?;
        self.check_input(x)?;
        let mut g = vec![0.0; self.dim()];
        for i in 0..self.agents() {
            let r = self.layout.range(i);
            self.grad_block_unchecked(reg.alphas[i], x, i, &mut g[r]);
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        Ok(g)
    }

    /// A point drawn uniformly from the feasible box.
    pub fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.boxes
            .iter()
            .map(|b| {
                if b.lo == b.hi {
                    b.lo
                } else {
                    rng.random_range(b.lo..=b.hi)
                }
            })
            .collect()
    }

    fn check_reg(&self, reg: &Regularization) -> Result<()> {
        if reg.alphas.len() == self.agents() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.agents(),
                found: reg.alphas.len(),
            })
        }
    }
}

/// Per-agent regularization weights `α_i` and the common stepsize `γ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regularization {
    alphas: Vec<f64>,
    gamma: f64,
}

impl Regularization {
    pub fn new(alphas: Vec<f64>, gamma: f64) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::InvalidParameter("no regularization weights".into()));
        }
        if let Some(a) = alphas.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
            return Err(Error::InvalidParameter(format!("alpha {a} must be > 0")));
        }
        Self::check_gamma(gamma)?;
        Ok(Regularization { alphas, gamma })
    }

    /// All `α_i = 0`: the unregularized cost, used for reference comparisons.
    pub fn unregularized(agents: usize, gamma: f64) -> Result<Self> {
        Self::check_gamma(gamma)?;
        Ok(Regularization {
            alphas: vec![0.0; agents],
            gamma,
        })
    }

    fn check_gamma(gamma: f64) -> Result<()> {
        if gamma.is_finite() && gamma > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "stepsize {gamma} must be > 0"
            )))
        }
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha(&self, i: usize) -> f64 {
        self.alphas[i]
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::check_gamma(gamma)?;
        Ok(Regularization {
            alphas: self.alphas.clone(),
            gamma,
        })
    }

    /// The largest diagonal entry of `A`, i.e. its spectral norm.
    pub fn norm(&self) -> f64 {
        self.alphas.iter().cloned().fold(0.0, f64::max)
    }

    /// Checks `γ ∈ (0, 2/L_max)` and `α_i ∈ (0, L_max)` for every agent.
    pub fn check_rate_range(&self, lip: &Lipschitz) -> Result<()> {
        let l_max = lip.max();
        if self.gamma >= 2.0 / l_max {
            return Err(Error::InvalidParameter(format!(
                "stepsize {} is not below 2/L_max = {}",
                self.gamma,
                2.0 / l_max
            )));
        }
        if let Some(a) = self.alphas.iter().find(|a| !(**a > 0.0 && **a < l_max)) {
            return Err(Error::InvalidParameter(format!(
                "alpha {a} is not in (0, L_max = {l_max})"
            )));
        }
        Ok(())
    }
}

/// Lipschitz data for the regularized gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lipschitz {
    /// `L_i`, the Lipschitz constant of `∇_i f_A`.
    pub per_block: Vec<f64>,
    /// `L`, the Lipschitz constant of `∇f`, if known. Recorded only.
    pub global: Option<f64>,
}

impl Lipschitz {
    pub fn new(per_block: Vec<f64>) -> Result<Self> {
        if per_block.is_empty() || per_block.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::InvalidParameter(
                "Lipschitz constants must be positive and finite".into(),
            ));
        }
        Ok(Lipschitz {
            per_block,
            global: None,
        })
    }

    /// Analytic `L_i = α_i + bound_i` when the cost model supplies curvature
    /// bounds, otherwise a sampled estimate with the safety factor applied.
    pub fn resolve<R: Rng + ?Sized>(
        problem: &Problem,
        alphas: &[f64],
        samples: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if alphas.len() != problem.agents() {
            return Err(Error::DimensionMismatch {
                expected: problem.agents(),
                found: alphas.len(),
            });
        }
        let mut per_block = Vec::with_capacity(problem.agents());
        for (i, a) in alphas.iter().enumerate() {
            let l = match problem.cost().block_curvature_bound(i) {
                Some(b) => a + b,
                None => estimate_block_lipschitz(problem, alphas, i, samples, rng)?,
            };
            per_block.push(l);
        }
        let mut lip = Lipschitz::new(per_block)?;
        lip.global = problem.cost().gradient_lipschitz();
        Ok(lip)
    }

    /// `L_max`.
    pub fn max(&self) -> f64 {
        self.per_block.iter().cloned().fold(0.0, f64::max)
    }

    /// `M = sqrt(Σ L_i²)`, the Lipschitz constant of the stacked gradient.
    pub fn m(&self) -> f64 {
        self.per_block.iter().map(|l| l * l).sum::<f64>().sqrt()
    }
}

/// Sampled upper estimate of `L_i`: the largest difference quotient
/// `‖∇_i f_A(x) − ∇_i f_A(y)‖₂ / ‖x − y‖₂` over random feasible pairs,
/// inflated by [`LIPSCHITZ_SAFETY`].
pub fn estimate_block_lipschitz<R: Rng + ?Sized>(
    problem: &Problem,
    alphas: &[f64],
    i: usize,
    samples: usize,
    rng: &mut R,
) -> Result<f64> {
    if samples == 0 {
        return Err(Error::InvalidParameter("samples must be positive".into()));
    }
    problem.layout().check_index(i)?;
    let reg = Regularization {
        alphas: alphas.to_vec(),
        gamma: 1.0,
    };
    let mut best = 0.0_f64;
    for _ in 0..samples {
        let x = problem.sample_point(rng);
        let y = problem.sample_point(rng);
        let dist = euclid(&x, &y);
        if dist == 0.0 {
            continue;
        }
        let gx = problem.grad_block(&reg, &x, i)?;
        let gy = problem.grad_block(&reg, &y, i)?;
        best = best.max(euclid(&gx, &gy) / dist);
    }
    Ok(LIPSCHITZ_SAFETY * best)
}

pub(crate) fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_layout(k: usize) -> BlockLayout {
        BlockLayout::uniform(k, 1, NormOrder::Finite(2.0), 1.0).unwrap()
    }

    #[test]
    fn layout_offsets_are_contiguous() {
        let layout = BlockLayout::new(vec![
            Block {
                dim: 2,
                order: NormOrder::Infinity,
                weight: 1.0,
            },
            Block {
                dim: 3,
                order: NormOrder::Finite(1.5),
                weight: 4.0,
            },
            Block {
                dim: 1,
                order: NormOrder::Finite(2.0),
                weight: 2.0,
            },
        ])
        .unwrap();
        assert_eq!(layout.dim(), 6);
        assert_eq!(layout.range(0), 0..2);
        assert_eq!(layout.range(1), 2..5);
        assert_eq!(layout.range(2), 5..6);
        assert_eq!(layout.p_min(), NormOrder::Finite(1.5));
        assert_eq!(layout.w_min(), 1.0);
    }

    #[test]
    fn layout_rejects_bad_blocks() {
        let bad = |b: Block| BlockLayout::new(vec![b]).is_err();
        assert!(bad(Block {
            dim: 0,
            order: NormOrder::Infinity,
            weight: 1.0
        }));
        assert!(bad(Block {
            dim: 1,
            order: NormOrder::Infinity,
            weight: 0.5
        }));
        assert!(bad(Block {
            dim: 1,
            order: NormOrder::Finite(0.5),
            weight: 1.0
        }));
        assert!(BlockLayout::new(vec![]).is_err());
        assert!(NormOrder::new(f64::NAN).is_err());
        assert_eq!(NormOrder::new(f64::INFINITY).unwrap(), NormOrder::Infinity);
    }

    #[test]
    fn norm_order_serde_keeps_infinity_distinct() {
        let orders = vec![NormOrder::Infinity, NormOrder::Finite(20.0)];
        let text = serde_json::to_string(&orders).unwrap();
        assert_eq!(text, r#"["inf",20.0]"#);
        let back: Vec<NormOrder> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, orders);
        assert!(serde_json::from_str::<NormOrder>("0.3").is_err());
    }

    #[test]
    fn large_order_norm_does_not_overflow() {
        let v = [1e10, 2e10, -3e10];
        let n = NormOrder::Finite(90.0).norm(&v);
        assert!(n >= 3e10 && n < 3.0001e10, "{n}");
    }

    #[test]
    fn separable_toy_value() {
        let layout = scalar_layout(2);
        let cost =
            QuadraticCost::new(layout.clone(), vec![2.0, 2.0], vec![0.0, 0.0], None).unwrap();
        let p = Problem::with_uniform_box(layout, Arc::new(cost), -5.0, 5.0).unwrap();
        assert_eq!(p.eval_f(&[1.0, 2.0]).unwrap(), 5.0);
        assert!(matches!(
            p.eval_f(&[1.0]),
            Err(Error::DimensionMismatch {
                expected: 2,
                found: 1
            })
        ));
    }

    #[test]
    fn pure_regularizer_value_and_gradient() {
        let layout = BlockLayout::uniform(3, 2, NormOrder::Finite(2.0), 1.0).unwrap();
        let p = Problem::with_uniform_box(
            layout.clone(),
            Arc::new(QuadraticCost::zero(layout)),
            -5.0,
            5.0,
        )
        .unwrap();
        let reg = Regularization::new(vec![2.0; 3], 0.1).unwrap();
        assert_eq!(p.eval_f_a(&reg, &[1.0; 6]).unwrap(), 6.0);
        assert_eq!(
            p.eval_f_a(&reg, &[0.0; 6]).unwrap(),
            p.eval_f(&[0.0; 6]).unwrap()
        );

        let reg1 = Regularization::new(vec![1.0; 3], 0.1).unwrap();
        let x = [0.5, -1.0, 2.0, 3.0, -4.0, 0.25];
        for i in 0..3 {
            assert_eq!(
                p.grad_block(&reg1, &x, i).unwrap(),
                x[2 * i..2 * i + 2].to_vec()
            );
        }
        assert!(matches!(
            p.grad_block(&reg1, &x, 3),
            Err(Error::IndexOutOfRange { .. })
        ));
        let mut bad = x;
        bad[1] = f64::NAN;
        assert!(matches!(
            p.grad_block(&reg1, &bad, 0),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn regularization_validation() {
        assert!(Regularization::new(vec![0.1, 0.0], 0.1).is_err());
        assert!(Regularization::new(vec![0.1], 0.0).is_err());
        assert!(Regularization::new(vec![0.1], f64::NAN).is_err());
        let lip = Lipschitz::new(vec![1.0, 2.0]).unwrap();
        let ok = Regularization::new(vec![0.1, 0.5], 0.9).unwrap();
        ok.check_rate_range(&lip).unwrap();
        assert!(ok.with_gamma(1.0).unwrap().check_rate_range(&lip).is_err());
        let big_alpha = Regularization::new(vec![0.1, 2.0], 0.5).unwrap();
        assert!(big_alpha.check_rate_range(&lip).is_err());
        assert_eq!(lip.m(), 5.0_f64.sqrt());
    }

    #[test]
    fn sampled_lipschitz_of_constant_curvature() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layout = scalar_layout(1);
        let lambda = 3.0;
        let cost = QuadraticCost::new(layout.clone(), vec![lambda], vec![0.0], None).unwrap();
        let p = Problem::with_uniform_box(layout.clone(), Arc::new(cost), -1.0, 1.0).unwrap();
        let est = estimate_block_lipschitz(&p, &[1e-9], 0, 50, &mut rng).unwrap();
        assert!(
            est >= lambda && est <= 1.1 * (lambda + 1e-9) + 1e-12,
            "{est}"
        );

        let zero = Problem::with_uniform_box(
            layout.clone(),
            Arc::new(QuadraticCost::zero(layout)),
            -1.0,
            1.0,
        )
        .unwrap();
        let est = estimate_block_lipschitz(&zero, &[0.5], 0, 20, &mut rng).unwrap();
        assert!((est - 0.55).abs() < 1e-12, "{est}");
        assert!(estimate_block_lipschitz(&zero, &[0.5], 0, 0, &mut rng).is_err());
    }

    #[test]
    fn problem_rejects_unbounded_boxes() {
        let layout = scalar_layout(1);
        let cost = Arc::new(QuadraticCost::zero(layout.clone()));
        assert!(
            Problem::with_uniform_box(layout.clone(), cost.clone(), 0.0, f64::INFINITY).is_err()
        );
        assert!(Problem::with_uniform_box(layout, cost, 1.0, 0.0).is_err());
    }
}
