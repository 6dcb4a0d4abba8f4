//! Conditional affine flows: masked autoregressive (MAF) and affine coupling
//! blocks, stacked with fixed permutations over a standard-normal base.
//!
//! A block maps `x` to `z = (x - mu) * exp(alpha)` where `mu` and `alpha`
//! come from a masked one-hidden-layer network over `(x, d)`. The masks make
//! output `i` depend on `x` only through coordinates the block is allowed to
//! read, so the Jacobian is triangular and `log|det| = sum_i alpha_i`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{uniform_init, Module};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// `0.5 * ln(2π)`.
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowKind {
    Maf,
    Coupling,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub kind: FlowKind,
    pub blocks: usize,
    /// Data dimension `D`.
    pub input_dim: usize,
    /// Condition dimension.
    pub cond_dim: usize,
    pub hidden: usize,
    /// Scales are squashed as `s * tanh(alpha / s)`.
    pub alpha_clamp: f64,
}

impl FlowConfig {
    pub fn maf(input_dim: usize, cond_dim: usize) -> Self {
        FlowConfig {
            kind: FlowKind::Maf,
            blocks: 6,
            input_dim,
            cond_dim,
            hidden: 32,
            alpha_clamp: 5.0,
        }
    }
}

/// Masked shift/log-scale network shared by both block types.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedConditioner {
    pub w_in: Tensor,
    pub w_cond: Tensor,
    pub b_in: Tensor,
    pub w_out: Tensor,
    pub b_out: Tensor,
    in_mask: Tensor,
    out_mask: Tensor,
    /// 1 for coordinates this block transforms, 0 for pass-through.
    dim_mask: Tensor,
    clamp: f64,
}

impl MaskedConditioner {
    fn new(
        in_mask: Tensor,
        out_mask: Tensor,
        dim_mask: Tensor,
        cond_dim: usize,
        clamp: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let (dim, hidden) = (in_mask.shape()[0], in_mask.shape()[1]);
        let bound = 1.0 / ((dim + cond_dim).max(1) as f64).sqrt();
        MaskedConditioner {
            w_in: uniform_init(&[dim, hidden], bound, rng),
            w_cond: uniform_init(&[cond_dim, hidden], bound, rng),
            b_in: uniform_init(&[hidden], bound, rng),
            // zero head: every block starts as the identity
            w_out: Tensor::zeros(&[hidden, 2 * dim]),
            b_out: Tensor::zeros(&[2 * dim]),
            in_mask,
            out_mask,
            dim_mask,
            clamp,
        }
    }

    fn dim(&self) -> usize {
        self.in_mask.shape()[0]
    }

    /// Returns `(mu, alpha)`, each `[rows, D]`, with `alpha` already clamped.
    fn forward(&self, tape: &mut Tape, p: &[Var], x: Var, cond: Var) -> Result<(Var, Var)> {
        let d = self.dim();
        let in_mask = tape.constant(self.in_mask.clone());
        let out_mask = tape.constant(self.out_mask.clone());
        let w_in = tape.mul(p[0], in_mask)?;
        let xs = tape.matmul(x, w_in)?;
        let cs = tape.matmul(cond, p[1])?;
        let pre = tape.add(xs, cs)?;
        let pre = tape.add(pre, p[2])?;
        let hid = tape.tanh(pre);
        let w_out = tape.mul(p[3], out_mask)?;
        let out = tape.matmul(hid, w_out)?;
        let out = tape.add(out, p[4])?;
        let mut mu = tape.slice(out, 1, 0, d)?;
        let raw = tape.slice(out, 1, d, 2 * d)?;
        let squashed = tape.scale(raw, 1.0 / self.clamp);
        let squashed = tape.tanh(squashed);
        let mut alpha = tape.scale(squashed, self.clamp);
        if self.dim_mask.data().iter().any(|&m| m == 0.0) {
            let dm = tape.constant(self.dim_mask.clone());
            mu = tape.mul(mu, dm)?;
            alpha = tape.mul(alpha, dm)?;
        }
        Ok((mu, alpha))
    }

    /// Plain-value evaluation used by the sequential inverse.
    fn values(&self, x: &Tensor, cond: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let p: Vec<Var> = self.params().into_iter().map(|(_, t)| tape.constant(t.clone())).collect();
        let xv = tape.constant(x.clone());
        let cv = tape.constant(cond.clone());
        let (mu, alpha) = self.forward(&mut tape, &p, xv, cv)?;
        Ok((tape.value(mu).clone(), tape.value(alpha).clone()))
    }
}

impl Module for MaskedConditioner {
    fn params(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("w_in".into(), &self.w_in),
            ("w_cond".into(), &self.w_cond),
            ("b_in".into(), &self.b_in),
            ("w_out".into(), &self.w_out),
            ("b_out".into(), &self.b_out),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w_in, &mut self.w_cond, &mut self.b_in, &mut self.w_out, &mut self.b_out]
    }
}

/// MAF block: output `i` reads `x_1..x_{i-1}` and the full condition.
#[derive(Clone, Debug, PartialEq)]
pub struct MafBlock {
    pub net: MaskedConditioner,
}

impl MafBlock {
    pub fn new(dim: usize, cond_dim: usize, hidden: usize, clamp: f64, rng: &mut impl Rng) -> Self {
        // Hidden unit k has degree k mod D and may read x_j (1-based) iff j <= degree;
        // output i may read hidden k iff degree < i. Degree-0 units see only the condition.
        let degree = |k: usize| k % dim;
        let mut in_mask = Tensor::zeros(&[dim, hidden]);
        let mut out_mask = Tensor::zeros(&[hidden, 2 * dim]);
        for k in 0..hidden {
            for j in 0..dim {
                if j < degree(k) {
                    in_mask.set(j, k, 1.0);
                }
            }
            for i in 0..dim {
                if degree(k) <= i {
                    out_mask.set(k, i, 1.0);
                    out_mask.set(k, dim + i, 1.0);
                }
            }
        }
        let dim_mask = Tensor::full(&[dim], 1.0);
        MafBlock { net: MaskedConditioner::new(in_mask, out_mask, dim_mask, cond_dim, clamp, rng) }
    }
}

/// Affine coupling block: frozen coordinates pass through unchanged and
/// condition the transform of the rest.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingBlock {
    pub frozen: Vec<bool>,
    pub net: MaskedConditioner,
}

impl CouplingBlock {
    pub fn new(
        frozen: Vec<bool>,
        cond_dim: usize,
        hidden: usize,
        clamp: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let dim = frozen.len();
        let mut in_mask = Tensor::zeros(&[dim, hidden]);
        for (j, &f) in frozen.iter().enumerate() {
            if f {
                for k in 0..hidden {
                    in_mask.set(j, k, 1.0);
                }
            }
        }
        let out_mask = Tensor::full(&[hidden, 2 * dim], 1.0);
        let dim_mask = Tensor::vector(frozen.iter().map(|&f| if f { 0.0 } else { 1.0 }).collect());
        let net = MaskedConditioner::new(in_mask, out_mask, dim_mask, cond_dim, clamp, rng);
        CouplingBlock { frozen, net }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum FlowBlock {
    Maf(MafBlock),
    Coupling(CouplingBlock),
}

impl FlowBlock {
    pub fn net(&self) -> &MaskedConditioner {
        match self {
            FlowBlock::Maf(b) => &b.net,
            FlowBlock::Coupling(b) => &b.net,
        }
    }

    fn net_mut(&mut self) -> &mut MaskedConditioner {
        match self {
            FlowBlock::Maf(b) => &mut b.net,
            FlowBlock::Coupling(b) => &mut b.net,
        }
    }

    /// `z = (x - mu) * exp(alpha)`; returns `(z, alpha)` with `alpha` `[rows, D]`.
    pub fn forward(&self, tape: &mut Tape, p: &[Var], x: Var, cond: Var) -> Result<(Var, Var)> {
        let (mu, alpha) = self.net().forward(tape, p, x, cond)?;
        let centered = tape.sub(x, mu)?;
        let scale = tape.exp(alpha);
        let z = tape.mul(centered, scale)?;
        Ok((z, alpha))
    }

    /// Solves `forward(x) = z` for `x`, row-wise.
    pub fn inverse(&self, z: &Tensor, cond: &Tensor) -> Result<Tensor> {
        let dim = self.net().dim();
        let rows = z.shape()[0];
        let solve_coord = |x: &mut Tensor, mu: &Tensor, alpha: &Tensor, i: usize| {
            for r in 0..rows {
                let v = z.at(r, i) * (-alpha.at(r, i)).exp() + mu.at(r, i);
                x.set(r, i, v);
            }
        };
        match self {
            FlowBlock::Maf(b) => {
                let mut x = Tensor::zeros(&[rows, dim]);
                for i in 0..dim {
                    let (mu, alpha) = b.net.values(&x, cond)?;
                    solve_coord(&mut x, &mu, &alpha, i);
                }
                Ok(x)
            }
            FlowBlock::Coupling(b) => {
                let mut x = z.clone();
                let (mu, alpha) = b.net.values(&x, cond)?;
                for (i, &f) in b.frozen.iter().enumerate() {
                    if !f {
                        solve_coord(&mut x, &mu, &alpha, i);
                    }
                }
                Ok(x)
            }
        }
    }
}

/// Blocks applied in order, with a coordinate reversal after every MAF
/// block but the last. Base distribution is `N(0, I)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowStack {
    pub config: FlowConfig,
    pub blocks: Vec<FlowBlock>,
}

/// Output of a stack forward pass.
#[derive(Clone, Copy, Debug)]
pub struct FlowOutput {
    /// Base-space point `[rows, D]`.
    pub z: Var,
    /// Per-coordinate log-density contributions `[rows, D]` in input
    /// coordinates; their row sums are the log-densities.
    pub contributions: Var,
    /// `log p(x | d)` per row, `[rows]`.
    pub log_prob: Var,
}

impl FlowStack {
    pub fn new(config: FlowConfig, rng: &mut impl Rng) -> Result<Self> {
        if config.blocks == 0 || config.input_dim == 0 || config.hidden == 0 {
            return Err(Error::Config("flow needs blocks, input_dim and hidden > 0".into()));
        }
        if config.alpha_clamp <= 0.0 {
            return Err(Error::Config("alpha_clamp must be positive".into()));
        }
        let (d, c, h, s) = (config.input_dim, config.cond_dim, config.hidden, config.alpha_clamp);
        let blocks = (0..config.blocks)
            .map(|b| match config.kind {
                FlowKind::Maf => FlowBlock::Maf(MafBlock::new(d, c, h, s, rng)),
                FlowKind::Coupling => {
                    let frozen = (0..d).map(|j| j % 2 == b % 2).collect();
                    FlowBlock::Coupling(CouplingBlock::new(frozen, c, h, s, rng))
                }
            })
            .collect();
        Ok(FlowStack { config, blocks })
    }

    pub fn dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn cond_dim(&self) -> usize {
        self.config.cond_dim
    }

    fn permutes(&self) -> bool {
        self.config.kind == FlowKind::Maf && self.dim() > 1
    }

    fn reversal(&self) -> Tensor {
        let d = self.dim();
        let mut r = Tensor::zeros(&[d, d]);
        for i in 0..d {
            r.set(i, d - 1 - i, 1.0);
        }
        r
    }

    /// Forward pass over `x: [rows, D]` with condition `cond: [rows, cond_dim]`.
    pub fn forward(&self, tape: &mut Tape, p: &[Var], x: Var, cond: Var) -> Result<FlowOutput> {
        let d = self.dim();
        let xs = tape.value(x).shape().to_vec();
        let cs = tape.value(cond).shape().to_vec();
        if xs.len() != 2 || xs[1] != d || cs.len() != 2 || cs[1] != self.cond_dim() || cs[0] != xs[0]
        {
            return Err(Error::Shape(format!(
                "flow expects x [rows, {d}] and condition [rows, {}], got {xs:?} and {cs:?}",
                self.cond_dim()
            )));
        }
        let per_block = self.param_count() / self.blocks.len();
        let rev = if self.permutes() { Some(tape.constant(self.reversal())) } else { None };
        let mut h = x;
        let mut reversed = false;
        let mut alphas = Vec::with_capacity(self.blocks.len());
        for (b, block) in self.blocks.iter().enumerate() {
            let (z, alpha) = block.forward(tape, &p[b * per_block..(b + 1) * per_block], h, cond)?;
            if let Some(bad) = tape.value(z).first_non_finite() {
                return Err(Error::Numeric(format!(
                    "flow block {b} produced a non-finite output at flat index {bad}"
                )));
            }
            // alpha is in the block's coordinates; map back to input order
            alphas.push(if reversed { tape.matmul(alpha, rev.unwrap())? } else { alpha });
            h = z;
            if let Some(r) = rev {
                if b + 1 < self.blocks.len() {
                    h = tape.matmul(h, r)?;
                    reversed = !reversed;
                }
            }
        }
        let z = h;
        let sq = tape.square(z);
        let base = tape.scale(sq, -0.5);
        let mut base = tape.add_scalar(base, -HALF_LN_2PI);
        if reversed {
            base = tape.matmul(base, rev.unwrap())?;
        }
        let mut contributions = base;
        for a in alphas {
            contributions = tape.add(contributions, a)?;
        }
        let log_prob = tape.sum_last(contributions)?;
        Ok(FlowOutput { z, contributions, log_prob })
    }

    /// Binds parameters as non-differentiable constants and evaluates
    /// `log p(x | d)` for every row of `x`.
    pub fn log_prob_rows(&self, x: &Tensor, cond: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let cv = tape.constant(cond.clone());
        let out = self.forward(&mut tape, &p, xv, cv)?;
        Ok(tape.value(out.log_prob).data().to_vec())
    }

    /// `log p(x | d)` for a single point.
    pub fn log_prob(&self, x: &[f64], cond: &[f64]) -> Result<f64> {
        let xt = Tensor::new(vec![1, x.len()], x.to_vec())?;
        let ct = Tensor::new(vec![1, cond.len()], cond.to_vec())?;
        Ok(self.log_prob_rows(&xt, &ct)?[0])
    }

    /// Forward map only: `(z, total log-det)` per row.
    pub fn transform(&self, x: &Tensor, cond: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let cv = tape.constant(cond.clone());
        let out = self.forward(&mut tape, &p, xv, cv)?;
        let z = tape.value(out.z).clone();
        let base: Vec<f64> = z
            .data()
            .chunks(self.dim())
            .map(|r| r.iter().map(|v| -0.5 * v * v - HALF_LN_2PI).sum())
            .collect();
        let logdet = tape.value(out.log_prob).data().iter().zip(&base).map(|(lp, b)| lp - b).collect();
        Ok((z, logdet))
    }

    /// Inverse map `x = f^{-1}(z; d)`, row-wise.
    pub fn inverse(&self, z: &Tensor, cond: &Tensor) -> Result<Tensor> {
        let rev = self.reversal();
        let mut h = z.clone();
        for (b, block) in self.blocks.iter().enumerate().rev() {
            if self.permutes() && b + 1 < self.blocks.len() {
                h = h.matmul(&rev)?;
            }
            h = block.inverse(&h, cond)?;
        }
        Ok(h)
    }

    /// Draws `count` samples `x = f^{-1}(z; d)` with `z ~ N(0, I)`.
    pub fn sample(&self, count: usize, cond: &[f64], seed: u64) -> Result<Vec<Vec<f64>>> {
        if cond.len() != self.cond_dim() {
            return Err(Error::Shape(format!(
                "condition has {} entries, flow expects {}",
                cond.len(),
                self.cond_dim()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.dim();
        let z: Vec<f64> = (0..count * d).map(|_| rng.sample(StandardNormal)).collect();
        let z = Tensor::new(vec![count, d], z)?;
        let c = Tensor::new(vec![count, cond.len()], cond.repeat(count))?;
        let x = self.inverse(&z, &c)?;
        Ok(x.data().chunks(d.max(1)).map(<[f64]>::to_vec).collect())
    }
}

impl Module for FlowStack {
    fn params(&self) -> Vec<(String, &Tensor)> {
        self.blocks
            .iter()
            .enumerate()
            .flat_map(|(b, blk)| {
                blk.net().params().into_iter().map(move |(n, t)| (format!("{b}.{n}"), t))
            })
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.blocks.iter_mut().flat_map(|b| b.net_mut().params_mut()).collect()
    }
}
