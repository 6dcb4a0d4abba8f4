//! The graph-augmented flow: LSTM encoder, dependency encoder, adjacency
//! and a conditional flow, evaluated as
//!
//! `log p(X) = sum_i sum_t log q(x_t^i | d_t^i)`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::MultiSeriesWindow;
use crate::encoder::{off_diagonal_mask, prepare_adjacency, DependencyEncoder, LstmCell};
use crate::error::{Error, Result};
use crate::flow::{FlowConfig, FlowKind, FlowStack};
use crate::params::Module;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Which density the model represents.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Parents through a learned `A`.
    #[default]
    Graph,
    /// `A` fixed at zero: every series conditioned on its own history only.
    NoGraph,
    /// One flow over all `n * D` attributes at once; `A` unused.
    FullChain,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Graph, Mode::NoGraph, Mode::FullChain];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Graph => "graph",
            Mode::NoGraph => "no-graph",
            Mode::FullChain => "full-chain",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?}; expected graph, no-graph or full-chain")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub mode: Mode,
    /// `n`
    pub n_series: usize,
    /// `D`
    pub n_attrs: usize,
    /// LSTM and dependency width `d`.
    pub hidden: usize,
    pub flow_kind: FlowKind,
    pub flow_blocks: usize,
    pub flow_hidden: usize,
    pub alpha_clamp: f64,
    /// Divide row `i` of `A` by `1 + sum_j |A_ij|` before aggregation.
    pub normalize_adjacency: bool,
    /// Off-diagonal `A` starts `Uniform(-b, b)`.
    pub a_init_bound: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            mode: Mode::Graph,
            n_series: 1,
            n_attrs: 1,
            hidden: 32,
            flow_kind: FlowKind::Maf,
            flow_blocks: 6,
            flow_hidden: 32,
            alpha_clamp: 5.0,
            normalize_adjacency: false,
            a_init_bound: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_series", self.n_series),
            ("n_attrs", self.n_attrs),
            ("hidden", self.hidden),
            ("flow_blocks", self.flow_blocks),
            ("flow_hidden", self.flow_hidden),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(self.alpha_clamp > 0.0) {
            return Err(Error::Config("alpha_clamp must be positive".into()));
        }
        if !(self.a_init_bound >= 0.0) {
            return Err(Error::Config("a_init_bound must be non-negative".into()));
        }
        Ok(())
    }

    /// Series seen by the encoder and flow: 1 in full-chain mode.
    pub fn flow_series(&self) -> usize {
        if self.mode == Mode::FullChain { 1 } else { self.n_series }
    }

    /// Flow input dimension: `n * D` in full-chain mode.
    pub fn flow_dim(&self) -> usize {
        if self.mode == Mode::FullChain { self.n_series * self.n_attrs } else { self.n_attrs }
    }
}

/// Log-densities of one window with `total = sum(per_series) = sum(per_step)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub total: f64,
    pub per_series: Vec<f64>,
    /// `[series][step]`
    pub per_step: Vec<Vec<f64>>,
}

impl DensityReport {
    fn from_steps(per_step: Vec<Vec<f64>>) -> Self {
        let per_series: Vec<f64> = per_step.iter().map(|s| s.iter().sum()).collect();
        let total = per_series.iter().sum();
        DensityReport { total, per_series, per_step }
    }

    /// Negative total log-density.
    pub fn score(&self) -> f64 {
        -self.total
    }

    pub fn series_scores(&self) -> Vec<f64> {
        self.per_series.iter().map(|v| -v).collect()
    }
}

/// Tape handles of a batched forward pass.
#[derive(Clone, Copy, Debug)]
pub struct BatchForward {
    /// `[T * B * n']`, rows `(t, b, i)`.
    pub log_prob: Var,
    /// `[T * B * n', D']`
    pub contributions: Var,
    /// Diagonal-masked `A`, present in graph mode.
    pub adjacency: Option<Var>,
    pub batch: usize,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GanfModel {
    pub config: ModelConfig,
    /// `n x n`, `A[i][j] != 0` when `j` is a parent of `i`.
    pub a: Tensor,
    pub cell: LstmCell,
    pub deps: DependencyEncoder,
    pub flow: FlowStack,
}

impl GanfModel {
    pub fn new(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let n = config.n_series;
        let mut a = Tensor::zeros(&[n, n]);
        if config.mode == Mode::Graph && config.a_init_bound > 0.0 {
            let b = config.a_init_bound;
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        a.set(i, j, rng.random_range(-b..=b));
                    }
                }
            }
        }
        let cell = LstmCell::new(config.flow_dim(), config.hidden, rng);
        let deps = DependencyEncoder::new(config.hidden, rng);
        let flow = FlowStack::new(
            FlowConfig {
                kind: config.flow_kind,
                blocks: config.flow_blocks,
                input_dim: config.flow_dim(),
                cond_dim: config.hidden,
                hidden: config.flow_hidden,
                alpha_clamp: config.alpha_clamp,
            },
            rng,
        )?;
        Ok(GanfModel { config, a, cell, deps, flow })
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    /// `A` with its diagonal zeroed.
    pub fn adjacency(&self) -> Tensor {
        self.a.zip_map(&off_diagonal_mask(self.config.n_series), |a, m| a * m)
    }

    /// Binds parameters; `A` only needs a gradient in graph mode.
    pub fn bind_trainable(&self, tape: &mut Tape) -> Vec<Var> {
        let mut p = self.bind(tape, true);
        if self.mode() != Mode::Graph {
            p[0] = tape.constant(self.a.clone());
        }
        p
    }

    /// Rejects windows whose `(n, D)` differ from the model's.
    pub fn check_window(&self, x: &MultiSeriesWindow) -> Result<()> {
        let (n, t, d) = x.shape();
        if n != self.config.n_series {
            return Err(Error::Shape(format!("window has n = {n} series, model expects {}", self.config.n_series)));
        }
        if d != self.config.n_attrs {
            return Err(Error::Shape(format!("window has D = {d} attributes, model expects {}", self.config.n_attrs)));
        }
        if t == 0 {
            return Err(Error::Shape("window has T = 0 steps".into()));
        }
        Ok(())
    }

    /// Flow inputs per step, `[B * n', D']` with rows `(b, i)`.
    fn step_inputs(&self, windows: &[&MultiSeriesWindow], t: usize) -> Result<Tensor> {
        let (n, d) = (self.config.n_series, self.config.n_attrs);
        let mut data = Vec::with_capacity(windows.len() * n * d);
        for w in windows {
            for i in 0..n {
                let k = w.idx(i, t, 0);
                data.extend_from_slice(&w.values[k..k + d]);
            }
        }
        let rows = windows.len() * self.config.flow_series();
        Tensor::new(vec![rows, self.config.flow_dim()], data)
    }

    /// Batched forward pass. All windows must share `T`.
    pub fn forward(&self, tape: &mut Tape, p: &[Var], windows: &[&MultiSeriesWindow]) -> Result<BatchForward> {
        let first = windows.first().ok_or_else(|| Error::Shape("empty batch".into()))?;
        let steps = first.len;
        for w in windows {
            self.check_window(w)?;
            if w.len != steps {
                return Err(Error::Shape(format!("batch mixes T = {steps} and T = {}", w.len)));
            }
            if let Some(bad) = w.values.iter().position(|v| !v.is_finite()) {
                let (i, t) = (bad / (w.len * w.d), (bad / w.d) % w.len);
                return Err(Error::Numeric(format!(
                    "non-finite input at series {i}, step {t} of window starting {}",
                    w.start_index
                )));
            }
        }
        let batch = windows.len();
        let n_eff = self.config.flow_series();
        let xs: Vec<Tensor> = (0..steps).map(|t| self.step_inputs(windows, t)).collect::<Result<_>>()?;
        let x_vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let x_all = tape.constant(Tensor::new(
            vec![steps * batch * n_eff, self.config.flow_dim()],
            xs.into_iter().flat_map(Tensor::into_data).collect(),
        )?);

        let (pa, rest) = p.split_first().ok_or_else(|| Error::State("no parameters bound".into()))?;
        let (pc, rest) = rest.split_at(3);
        let (pd, pf) = rest.split_at(3);

        let hs = self.cell.unroll(tape, pc, &x_vars, n_eff)?;
        let (adjacency, agg) = match self.mode() {
            Mode::Graph => {
                let mask = tape.constant(off_diagonal_mask(self.config.n_series));
                let masked = tape.mul(*pa, mask)?;
                let agg = prepare_adjacency(tape, *pa, self.config.normalize_adjacency)?;
                (Some(masked), Some(agg))
            }
            _ => (None, None),
        };
        let cond = self.deps.forward(tape, pd, &hs, agg, batch, n_eff)?;
        let out = self.flow.forward(tape, pf, x_all, cond)?;
        if let Some(bad) = tape.value(out.log_prob).first_non_finite() {
            let (t, rem) = (bad / (batch * n_eff), bad % (batch * n_eff));
            return Err(Error::Numeric(format!(
                "non-finite log-density at series {}, step {t} of batch item {}",
                rem % n_eff,
                rem / n_eff
            )));
        }
        Ok(BatchForward { log_prob: out.log_prob, contributions: out.contributions, adjacency, batch, steps })
    }

    /// Splits a batched forward pass into per-window reports.
    pub fn reports(&self, tape: &Tape, fwd: &BatchForward) -> Vec<DensityReport> {
        let n = self.config.n_series;
        let (batch, steps) = (fwd.batch, fwd.steps);
        let mut per_step = vec![vec![vec![0.0; steps]; n]; batch];
        match self.mode() {
            Mode::FullChain => {
                let d = self.config.n_attrs;
                let c = tape.value(fwd.contributions).data();
                let width = n * d;
                for t in 0..steps {
                    for (b, rep) in per_step.iter_mut().enumerate() {
                        let row = &c[(t * batch + b) * width..(t * batch + b + 1) * width];
                        for (i, s) in rep.iter_mut().enumerate() {
                            s[t] = row[i * d..(i + 1) * d].iter().sum();
                        }
                    }
                }
            }
            _ => {
                let lp = tape.value(fwd.log_prob).data();
                for t in 0..steps {
                    for (b, rep) in per_step.iter_mut().enumerate() {
                        for (i, s) in rep.iter_mut().enumerate() {
                            s[t] = lp[(t * batch + b) * n + i];
                        }
                    }
                }
            }
        }
        per_step.into_iter().map(DensityReport::from_steps).collect()
    }

    /// Reports for windows sharing `T`, evaluated as one batch.
    pub fn log_density_batch(&self, windows: &[&MultiSeriesWindow]) -> Result<Vec<DensityReport>> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let fwd = self.forward(&mut tape, &p, windows)?;
        Ok(self.reports(&tape, &fwd))
    }

    pub fn log_density(&self, x: &MultiSeriesWindow) -> Result<DensityReport> {
        Ok(self.log_density_batch(&[x])?.remove(0))
    }

    /// `-log p(X)`; higher is more anomalous.
    pub fn anomaly_score(&self, x: &MultiSeriesWindow) -> Result<f64> {
        Ok(self.log_density(x)?.score())
    }

    /// `-log p(X^i | pa(X^i))` per series.
    pub fn per_series_scores(&self, x: &MultiSeriesWindow) -> Result<Vec<f64>> {
        Ok(self.log_density(x)?.series_scores())
    }

    /// Reports for many windows, in order, evaluated in chunks of `chunk`
    /// on the current rayon pool. Each window's result does not depend on
    /// how the work is split.
    pub fn score_windows(&self, windows: &[MultiSeriesWindow], chunk: usize) -> Result<Vec<DensityReport>> {
        let chunk = chunk.max(1);
        let parts: Vec<Result<Vec<DensityReport>>> = windows
            .par_chunks(chunk)
            .map(|c| {
                let refs: Vec<&MultiSeriesWindow> = c.iter().collect();
                if refs.iter().all(|w| w.len == refs[0].len) {
                    self.log_density_batch(&refs)
                } else {
                    refs.iter().map(|w| self.log_density(w)).collect()
                }
            })
            .collect();
        let mut out = Vec::with_capacity(windows.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }
}

impl Module for GanfModel {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("A".to_string(), &self.a)];
        out.extend(self.cell.params().into_iter().map(|(k, v)| (format!("rnn.{k}"), v)));
        out.extend(self.deps.params().into_iter().map(|(k, v)| (format!("encoder.{k}"), v)));
        out.extend(self.flow.params().into_iter().map(|(k, v)| (format!("flow.{k}"), v)));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.a];
        out.extend(self.cell.params_mut());
        out.extend(self.deps.params_mut());
        out.extend(self.flow.params_mut());
        out
    }
}
