//! Shared LSTM over every series plus the one-layer graph convolution
//!
//! `D_t = ReLU(A H_t W1 + H_{t-1} W2) W3`
//!
//! that turns parent states and own history into flow conditions.
//!
//! Batched tensors use rows ordered `(b, i)` within a step and `(t, b, i)`
//! across steps.

use rand::Rng;

use crate::data::MultiSeriesWindow;
use crate::error::{Error, Result};
use crate::params::{uniform_init, Module};
use crate::tape::{Tape, Var};
use crate::tensor::{square_extent, Tensor};

/// Single-layer LSTM; gate blocks ordered input, forget, cell, output.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCell {
    /// `[D, 4d]`
    pub w_x: Tensor,
    /// `[d, 4d]`
    pub w_h: Tensor,
    /// `[4d]`
    pub bias: Tensor,
}

impl LstmCell {
    pub fn new(input_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        LstmCell {
            w_x: uniform_init(&[input_dim, 4 * hidden], bound, rng),
            w_h: uniform_init(&[hidden, 4 * hidden], bound, rng),
            bias: uniform_init(&[4 * hidden], bound, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_x.shape()[0]
    }

    pub fn hidden(&self) -> usize {
        self.w_h.shape()[0]
    }

    /// Runs the recurrence from a zero state over `xs[t]: [rows, D]` and
    /// returns `h_t: [rows, d]` per step. `n` is only used to locate
    /// non-finite states (rows are `(b, i)`).
    pub fn unroll(&self, tape: &mut Tape, p: &[Var], xs: &[Var], n: usize) -> Result<Vec<Var>> {
        let d = self.hidden();
        let mut state: Option<(Var, Var)> = None;
        let mut out = Vec::with_capacity(xs.len());
        for (t, &x) in xs.iter().enumerate() {
            let mut gates = tape.matmul(x, p[0])?;
            if let Some((h, _)) = state {
                let hh = tape.matmul(h, p[1])?;
                gates = tape.add(gates, hh)?;
            }
            let gates = tape.add(gates, p[2])?;
            let i = tape.slice(gates, 1, 0, d)?;
            let i = tape.sigmoid(i);
            let g = tape.slice(gates, 1, 2 * d, 3 * d)?;
            let g = tape.tanh(g);
            let o = tape.slice(gates, 1, 3 * d, 4 * d)?;
            let o = tape.sigmoid(o);
            let mut c = tape.mul(i, g)?;
            if let Some((_, c_prev)) = state {
                let f = tape.slice(gates, 1, d, 2 * d)?;
                let f = tape.sigmoid(f);
                let keep = tape.mul(f, c_prev)?;
                c = tape.add(keep, c)?;
            }
            let tc = tape.tanh(c);
            let h = tape.mul(o, tc)?;
            if let Some(bad) = tape.value(h).first_non_finite() {
                let row = bad / d.max(1);
                return Err(Error::Numeric(format!(
                    "non-finite hidden state at series {}, step {t} (batch item {})",
                    row % n.max(1),
                    row / n.max(1)
                )));
            }
            state = Some((h, c));
            out.push(h);
        }
        Ok(out)
    }
}

impl Module for LstmCell {
    fn params(&self) -> Vec<(String, &Tensor)> {
        vec![("w_x".into(), &self.w_x), ("w_h".into(), &self.w_h), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w_x, &mut self.w_h, &mut self.bias]
    }
}

/// `W1`, `W2`, `W3`, each `d x d`.
#[derive(Clone, Debug, PartialEq)]
pub struct DependencyEncoder {
    pub w1: Tensor,
    pub w2: Tensor,
    pub w3: Tensor,
}

impl DependencyEncoder {
    pub fn new(hidden: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        DependencyEncoder {
            w1: uniform_init(&[hidden, hidden], bound, rng),
            w2: uniform_init(&[hidden, hidden], bound, rng),
            w3: uniform_init(&[hidden, hidden], bound, rng),
        }
    }

    /// Dependency vectors `[T * B * n, d]` for hidden states `hs[t]: [B * n, d]`.
    /// `adj` is the prepared (masked) `n x n` matrix; `None` drops the parent
    /// term entirely.
    pub fn forward(&self, tape: &mut Tape, p: &[Var], hs: &[Var], adj: Option<Var>, batch: usize, n: usize) -> Result<Var> {
        let steps = hs.len();
        if steps == 0 {
            return Err(Error::Shape("dependency encoder needs at least one step".into()));
        }
        let d = tape.value(hs[0]).shape()[1];
        let rows = batch * n;
        let h_all = tape.concat(hs, 0)?;
        let mut prev: Vec<Var> = Vec::with_capacity(steps);
        prev.push(tape.constant(Tensor::zeros(&[rows, d])));
        prev.extend_from_slice(&hs[..steps - 1]);
        let h_prev = tape.concat(&prev, 0)?;
        let mut pre = tape.matmul(h_prev, p[1])?;
        if let Some(a) = adj {
            let grouped = tape.reshape(h_all, &[steps * batch, n, d])?;
            let mixed = tape.matmul(a, grouped)?;
            let mixed = tape.reshape(mixed, &[steps * rows, d])?;
            let parent = tape.matmul(mixed, p[0])?;
            pre = tape.add(parent, pre)?;
        }
        let act = tape.relu(pre);
        tape.matmul(act, p[2])
    }
}

impl Module for DependencyEncoder {
    fn params(&self) -> Vec<(String, &Tensor)> {
        vec![("w1".into(), &self.w1), ("w2".into(), &self.w2), ("w3".into(), &self.w3)]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w1, &mut self.w2, &mut self.w3]
    }
}

/// Copy of `a` with the diagonal zeroed.
pub fn masked_diag(a: &Tensor) -> Result<Tensor> {
    let n = square_extent(a)?;
    let mut out = a.clone();
    for i in 0..n {
        out.set(i, i, 0.0);
    }
    Ok(out)
}

/// `1 - I`.
pub fn off_diagonal_mask(n: usize) -> Tensor {
    Tensor::full(&[n, n], 1.0).zip_map(&Tensor::eye(n), |one, e| one - e)
}

/// Masks the diagonal of `a` on the tape and, if asked, divides row `i` by
/// `1 + sum_j |A_ij|`.
pub fn prepare_adjacency(tape: &mut Tape, a: Var, normalize: bool) -> Result<Var> {
    let n = square_extent(tape.value(a))?;
    let mask = tape.constant(off_diagonal_mask(n));
    let masked = tape.mul(a, mask)?;
    if !normalize {
        return Ok(masked);
    }
    let mag = tape.abs(masked);
    let rows = tape.sum_last(mag)?;
    let rows = tape.add_scalar(rows, 1.0);
    let inv = tape.recip(rows)?;
    // scale rows through the transpose so the factor broadcasts
    let t = tape.transpose(masked)?;
    let t = tape.mul(t, inv)?;
    tape.transpose(t)
}

fn window_steps(tape: &mut Tape, x: &MultiSeriesWindow) -> Result<Vec<Var>> {
    if let Some(bad) = x.values.iter().position(|v| !v.is_finite()) {
        let (i, t) = (bad / (x.len * x.d), (bad / x.d) % x.len);
        return Err(Error::Numeric(format!("non-finite input at series {i}, step {t}")));
    }
    (0..x.len)
        .map(|t| {
            let mut rows = Vec::with_capacity(x.n * x.d);
            for i in 0..x.n {
                rows.extend_from_slice(&x.values[x.idx(i, t, 0)..x.idx(i, t, 0) + x.d]);
            }
            Ok(tape.constant(Tensor::new(vec![x.n, x.d], rows)?))
        })
        .collect()
}

/// Rows `(t, i)` of `[T * n, d]` to an `[n, T, d]` tensor.
fn steps_to_series(v: &Tensor, n: usize, steps: usize) -> Tensor {
    let d = v.shape()[1];
    let mut out = Tensor::zeros(&[n, steps, d]);
    for t in 0..steps {
        for i in 0..n {
            let src = (t * n + i) * d;
            let dst = (i * steps + t) * d;
            out.data_mut()[dst..dst + d].copy_from_slice(&v.data()[src..src + d]);
        }
    }
    out
}

/// Hidden states `[n, T, d]` of every series of one window.
pub fn encode_hidden(cell: &LstmCell, x: &MultiSeriesWindow) -> Result<Tensor> {
    if x.d != cell.input_dim() {
        return Err(Error::Shape(format!("window has D = {}, cell expects {}", x.d, cell.input_dim())));
    }
    let mut tape = Tape::new();
    let p = cell.bind(&mut tape, false);
    let xs = window_steps(&mut tape, x)?;
    let hs = cell.unroll(&mut tape, &p, &xs, x.n)?;
    let all = tape.concat(&hs, 0)?;
    Ok(steps_to_series(tape.value(all), x.n, x.len))
}

/// Dependency vectors `[n, T, d]` from hidden states `[n, T, d]`.
pub fn encode_dependencies(enc: &DependencyEncoder, h: &Tensor, a: &Tensor) -> Result<Tensor> {
    let n = square_extent(a)?;
    let s = h.shape();
    let d = enc.w1.shape()[0];
    if s.len() != 3 || s[0] != n || s[2] != d {
        return Err(Error::Shape(format!("hidden states {s:?} do not match n = {n}, d = {d}")));
    }
    if let Some(i) = (0..n).find(|&i| a.at(i, i) != 0.0) {
        return Err(Error::Contract(format!("diag(A) must be zero, A[{i}][{i}] = {}", a.at(i, i))));
    }
    let steps = s[1];
    let mut tape = Tape::new();
    let p = enc.bind(&mut tape, false);
    let mut hs = Vec::with_capacity(steps);
    for t in 0..steps {
        let mut rows = Vec::with_capacity(n * d);
        for i in 0..n {
            let k = (i * steps + t) * d;
            rows.extend_from_slice(&h.data()[k..k + d]);
        }
        hs.push(tape.constant(Tensor::new(vec![n, d], rows)?));
    }
    let av = tape.constant(a.clone());
    let out = enc.forward(&mut tape, &p, &hs, Some(av), 1, n)?;
    Ok(steps_to_series(tape.value(out), n, steps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    fn window(n: usize, t: usize, d: usize, seed: u64) -> MultiSeriesWindow {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..n * t * d).map(|_| r.random_range(-1.0..1.0)).collect();
        MultiSeriesWindow::new(n, t, d, v).unwrap()
    }

    fn random_adj(n: usize, seed: u64) -> Tensor {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut a = Tensor::zeros(&[n, n]);
        for i in 0..n {
            for j in 0..n {
                if i != j && r.random_bool(0.5) {
                    a.set(i, j, r.random_range(-1.0..1.0));
                }
            }
        }
        a
    }

    #[test]
    fn masked_diag_examples() {
        assert_eq!(masked_diag(&Tensor::eye(3)).unwrap(), Tensor::zeros(&[3, 3]));
        assert_eq!(masked_diag(&Tensor::zeros(&[2, 2])).unwrap(), Tensor::zeros(&[2, 2]));
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let want = Tensor::from_rows(&[vec![0.0, 2.0], vec![3.0, 0.0]]).unwrap();
        assert_eq!(masked_diag(&a).unwrap(), want);
    }

    #[test]
    fn zero_cell_is_bounded_and_shared() {
        let mut cell = LstmCell::new(2, 4, &mut rng());
        for t in cell.params_mut() {
            t.data_mut().fill(0.0);
        }
        let mut x = window(3, 5, 2, 1);
        let s0 = x.series(0).to_vec();
        x.series_mut(2).copy_from_slice(&s0);
        let h = encode_hidden(&cell, &x).unwrap();
        assert!(h.data().iter().all(|v| v.abs() < 1.0));
        let w = 5 * 4;
        assert_eq!(h.data()[..w], h.data()[2 * w..3 * w]);
    }

    #[test]
    fn identical_series_identical_states() {
        let cell = LstmCell::new(2, 6, &mut rng());
        let mut x = window(2, 7, 2, 2);
        let s0 = x.series(0).to_vec();
        x.series_mut(1).copy_from_slice(&s0);
        let h = encode_hidden(&cell, &x).unwrap();
        assert_eq!(h.data()[..42], h.data()[42..]);
    }

    #[test]
    fn single_step_matches_manual_cell() {
        let cell = LstmCell::new(2, 3, &mut rng());
        let x = window(1, 1, 2, 3);
        let h = encode_hidden(&cell, &x).unwrap();
        let sig = crate::tape::sigmoid;
        for k in 0..3 {
            let gate = |blk: usize| {
                let c = blk * 3 + k;
                cell.bias.data()[c] + x.values[0] * cell.w_x.at(0, c) + x.values[1] * cell.w_x.at(1, c)
            };
            let c = sig(gate(0)) * gate(2).tanh();
            let want = sig(gate(3)) * c.tanh();
            assert!((h.data()[k] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn nan_input_located() {
        let cell = LstmCell::new(1, 2, &mut rng());
        let mut x = window(3, 4, 1, 4);
        x.set(2, 1, 0, f64::NAN);
        let err = encode_hidden(&cell, &x).unwrap_err().to_string();
        assert!(err.contains("series 2") && err.contains("step 1"), "{err}");
    }

    #[test]
    fn zero_graph_uses_only_history() {
        let mut r = rng();
        let enc = DependencyEncoder::new(4, &mut r);
        let h = uniform_init(&[3, 5, 4], 1.0, &mut r);
        let dm = encode_dependencies(&enc, &h, &Tensor::zeros(&[3, 3])).unwrap();
        for i in 0..3 {
            for t in 0..5 {
                let prev: Vec<f64> = if t == 0 {
                    vec![0.0; 4]
                } else {
                    h.data()[(i * 5 + t - 1) * 4..(i * 5 + t) * 4].to_vec()
                };
                for c in 0..4 {
                    let mut want = 0.0;
                    for k in 0..4 {
                        let pre: f64 = (0..4).map(|m| prev[m] * enc.w2.at(m, k)).sum();
                        want += pre.max(0.0) * enc.w3.at(k, c);
                    }
                    assert!((dm.data()[(i * 5 + t) * 4 + c] - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn diag_contract() {
        let enc = DependencyEncoder::new(2, &mut rng());
        let h = Tensor::zeros(&[2, 3, 2]);
        let err = encode_dependencies(&enc, &h, &Tensor::eye(2)).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn single_edge_structure() {
        let mut r = rng();
        let enc = DependencyEncoder::new(3, &mut r);
        let a = Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let h = uniform_init(&[2, 4, 3], 1.0, &mut r);
        let base = encode_dependencies(&enc, &h, &a).unwrap();
        let mut h2 = h.clone();
        // perturb node 0 at step 2, and node 1 at step 2
        h2.data_mut()[(2) * 3] += 0.5;
        h2.data_mut()[(4 + 2) * 3 + 1] += 0.5;
        let moved = encode_dependencies(&enc, &h2, &a).unwrap();
        let node0 = |m: &Tensor| m.data()[2 * 3..3 * 3].to_vec();
        assert_eq!(node0(&base), node0(&moved));
    }

    #[test]
    fn parent_term_is_linear_in_a_rows() {
        let mut r = rng();
        let hidden = 3;
        let h = uniform_init(&[1, hidden], 1.0, &mut r);
        let hp = uniform_init(&[1, hidden], 1.0, &mut r);
        let a = Tensor::from_rows(&[vec![0.0, 0.7], vec![-0.4, 0.0]]).unwrap();
        let h_t = Tensor::new(vec![2, hidden], [h.data(), hp.data()].concat()).unwrap();
        let w1 = uniform_init(&[hidden, hidden], 1.0, &mut r);
        let term = |a: &Tensor| a.matmul(&h_t).unwrap().matmul(&w1).unwrap();
        let mut a2 = a.clone();
        a2.set(1, 0, 2.0 * a.at(1, 0));
        let (t1, t2) = (term(&a), term(&a2));
        for c in 0..hidden {
            assert!((t2.at(1, c) - 2.0 * t1.at(1, c)).abs() < 1e-14);
            assert_eq!(t2.at(0, c), t1.at(0, c));
        }
    }

    #[test]
    fn parent_locality_by_perturbation() {
        let mut r = rng();
        let (n, steps, d) = (5, 4, 3);
        let cell = LstmCell::new(1, d, &mut r);
        let enc = DependencyEncoder::new(d, &mut r);
        for trial in 0..5 {
            let a = random_adj(n, trial);
            let x = window(n, steps, 1, 100 + trial);
            let base = encode_dependencies(&enc, &encode_hidden(&cell, &x).unwrap(), &a).unwrap();
            for j in 0..n {
                let t = 2;
                let mut xp = x.clone();
                xp.set(j, t, 0, x.get(j, t, 0) + 0.3);
                let moved = encode_dependencies(&enc, &encode_hidden(&cell, &xp).unwrap(), &a).unwrap();
                for i in 0..n {
                    if i == j {
                        continue;
                    }
                    let k = (i * steps + t) * d;
                    let changed = base.data()[k..k + d] != moved.data()[k..k + d];
                    if a.at(i, j) == 0.0 {
                        assert!(!changed, "trial {trial}: node {i} moved by non-parent {j}");
                    }
                }
            }
        }
    }

    #[test]
    fn causal_in_time() {
        let mut r = rng();
        let (n, steps, d) = (3, 6, 4);
        let cell = LstmCell::new(2, d, &mut r);
        let enc = DependencyEncoder::new(d, &mut r);
        let a = random_adj(n, 9);
        let x = window(n, steps, 2, 5);
        let h = encode_hidden(&cell, &x).unwrap();
        let dm = encode_dependencies(&enc, &h, &a).unwrap();
        let mut xp = x.clone();
        xp.set(1, 4, 1, 9.0);
        let hp = encode_hidden(&cell, &xp).unwrap();
        let dp = encode_dependencies(&enc, &hp, &a).unwrap();
        for i in 0..n {
            for t in 0..4 {
                let k = (i * steps + t) * d;
                assert_eq!(h.data()[k..k + d], hp.data()[k..k + d]);
                assert_eq!(dm.data()[k..k + d], dp.data()[k..k + d]);
            }
        }
    }

    #[test]
    fn permutation_equivariance() {
        let mut r = rng();
        let (n, steps, d) = (4, 5, 3);
        let cell = LstmCell::new(1, d, &mut r);
        let enc = DependencyEncoder::new(d, &mut r);
        let a = random_adj(n, 3);
        let x = window(n, steps, 1, 8);
        let perm = [2, 0, 3, 1];
        let mut xp = x.clone();
        let mut ap = Tensor::zeros(&[n, n]);
        for i in 0..n {
            xp.series_mut(i).copy_from_slice(x.series(perm[i]));
            for j in 0..n {
                ap.set(i, j, a.at(perm[i], perm[j]));
            }
        }
        let h = encode_hidden(&cell, &x).unwrap();
        let dm = encode_dependencies(&enc, &h, &a).unwrap();
        let hp = encode_hidden(&cell, &xp).unwrap();
        let dp = encode_dependencies(&enc, &hp, &ap).unwrap();
        let w = steps * d;
        for i in 0..n {
            let (src, dst) = (perm[i] * w, i * w);
            assert_eq!(h.data()[src..src + w], hp.data()[dst..dst + w]);
            for k in 0..w {
                assert!((dm.data()[src + k] - dp.data()[dst + k]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn row_normalization() {
        let mut tape = Tape::new();
        let a = Tensor::from_rows(&[vec![5.0, 1.0, -2.0], vec![0.0, 0.0, 0.0], vec![0.5, 0.5, 0.0]]).unwrap();
        let av = tape.constant(a);
        let out = prepare_adjacency(&mut tape, av, true).unwrap();
        let want = Tensor::from_rows(&[vec![0.0, 0.25, -0.5], vec![0.0; 3], vec![0.25, 0.25, 0.0]]).unwrap();
        assert_eq!(tape.value(out), &want);
    }
}
