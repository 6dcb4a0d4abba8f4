//! Augmented-Lagrangian training: Adam on
//! `L_c = mean NLL + lambda * h(A) + c/2 * h(A)^2` for a fixed budget of
//! epochs, then a dual/penalty update, until `|h(A)| < h_tol`.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dag::{acyclicity, dual_penalty_update, LagrangianState, PenaltySchedule};
use crate::data::MultiSeriesWindow;
use crate::error::{Error, Result};
use crate::flow::FlowKind;
use crate::model::{GanfModel, Mode, ModelConfig};
use crate::params::Module;
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClipMode {
    /// Rescale all gradients together when their joint norm exceeds the clip.
    #[default]
    GlobalNorm,
    /// Clamp each entry to `[-clip, clip]`.
    Elementwise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    pub lr: f64,
    pub lr_decay: f64,
    /// Stale validation epochs before the learning rate decays.
    pub plateau_patience: usize,
    pub grad_clip: f64,
    pub clip_mode: ClipMode,
    pub flow_kind: FlowKind,
    pub flow_blocks: usize,
    pub flow_hidden: usize,
    pub hidden_dim: usize,
    pub alpha_clamp: f64,
    pub normalize_adjacency: bool,
    pub a_init_bound: f64,
    pub batch_size: usize,
    pub inner_epochs: usize,
    pub max_outer_iters: usize,
    pub h_tol: f64,
    pub eta: f64,
    pub gamma: f64,
    pub c_init: f64,
    pub c_bootstrap: f64,
    /// Fixed initial multiplier; drawn `Uniform(0, 1)` when absent.
    pub lambda_init: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::Graph,
            lr: 1e-3,
            lr_decay: 0.1,
            plateau_patience: 3,
            grad_clip: 1.0,
            clip_mode: ClipMode::GlobalNorm,
            flow_kind: FlowKind::Maf,
            flow_blocks: 6,
            flow_hidden: 32,
            hidden_dim: 32,
            alpha_clamp: 5.0,
            normalize_adjacency: false,
            a_init_bound: 0.1,
            batch_size: 32,
            inner_epochs: 10,
            max_outer_iters: 20,
            h_tol: 1e-8,
            eta: 10.0,
            gamma: 0.5,
            c_init: 0.0,
            c_bootstrap: 1.0,
            lambda_init: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() { Ok(()) } else { Err(Error::Config(format!("{name} must be positive, got {v}"))) }
        };
        pos("lr", self.lr)?;
        pos("grad_clip", self.grad_clip)?;
        pos("h_tol", self.h_tol)?;
        pos("c_bootstrap", self.c_bootstrap)?;
        pos("alpha_clamp", self.alpha_clamp)?;
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!("lr_decay must lie in (0, 1], got {}", self.lr_decay)));
        }
        if !(self.eta > 1.0) {
            return Err(Error::Config(format!("eta must exceed 1, got {}", self.eta)));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if !(self.c_init >= 0.0) {
            return Err(Error::Config("c_init must be non-negative".into()));
        }
        let counts = [
            ("batch_size", self.batch_size),
            ("inner_epochs", self.inner_epochs),
            ("max_outer_iters", self.max_outer_iters),
            ("plateau_patience", self.plateau_patience),
            ("flow_blocks", self.flow_blocks),
            ("flow_hidden", self.flow_hidden),
            ("hidden_dim", self.hidden_dim),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        Ok(())
    }

    pub fn model_config(&self, n_series: usize, n_attrs: usize) -> ModelConfig {
        ModelConfig {
            mode: self.mode,
            n_series,
            n_attrs,
            hidden: self.hidden_dim,
            flow_kind: self.flow_kind,
            flow_blocks: self.flow_blocks,
            flow_hidden: self.flow_hidden,
            alpha_clamp: self.alpha_clamp,
            normalize_adjacency: self.normalize_adjacency,
            a_init_bound: self.a_init_bound,
        }
    }

    pub fn schedule(&self) -> PenaltySchedule {
        PenaltySchedule { eta: self.eta, gamma: self.gamma, c_bootstrap: self.c_bootstrap }
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(shapes: &[&Tensor]) -> Self {
        let zeros: Vec<Tensor> = shapes.iter().map(|t| Tensor::zeros(t.shape())).collect();
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }

    /// One update; `None` gradients leave their parameter untouched.
    pub fn update(&mut self, params: Vec<&mut Tensor>, grads: &[Option<Tensor>], lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, p) in params.into_iter().enumerate() {
            let Some(g) = &grads[k] else { continue };
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let gj = g.data()[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                *w -= lr * (m[j] / bc1) / ((v[j] / bc2).sqrt() + self.eps);
            }
        }
    }
}

/// Clips in place and returns the norm before clipping.
pub fn clip_gradients(grads: &mut [Option<Tensor>], clip: f64, mode: ClipMode) -> f64 {
    let norm = grads.iter().flatten().flat_map(|g| g.data()).map(|v| v * v).sum::<f64>().sqrt();
    match mode {
        ClipMode::GlobalNorm => {
            if norm > clip {
                let s = clip / norm;
                for g in grads.iter_mut().flatten() {
                    g.data_mut().iter_mut().for_each(|v| *v *= s);
                }
            }
        }
        ClipMode::Elementwise => {
            for g in grads.iter_mut().flatten() {
                g.data_mut().iter_mut().for_each(|v| *v = v.clamp(-clip, clip));
            }
        }
    }
    norm
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub outer: usize,
    pub epoch: usize,
    /// Mean of `-log p` per window over the epoch's minibatches.
    pub train_nll: f64,
    /// Mean augmented Lagrangian over the epoch's minibatches.
    pub train_loss: f64,
    /// Mean validation log-density per window.
    pub val_log_density: f64,
    pub h: f64,
    pub lambda: f64,
    pub c: f64,
    pub lr: f64,
    pub lr_decayed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    pub outer: usize,
    pub h: f64,
    pub lambda: f64,
    pub c: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum HistoryRecord {
    Epoch(EpochRecord),
    Outer(OuterRecord),
    Summary {
        converged: bool,
        final_h: f64,
        outer_iters: usize,
        epochs: usize,
        best_val_log_density: Option<f64>,
        warning: Option<String>,
    },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub records: Vec<HistoryRecord>,
}

impl History {
    pub fn epochs(&self) -> impl Iterator<Item = &EpochRecord> {
        self.records.iter().filter_map(|r| match r {
            HistoryRecord::Epoch(e) => Some(e),
            _ => None,
        })
    }

    pub fn outers(&self) -> impl Iterator<Item = &OuterRecord> {
        self.records.iter().filter_map(|r| match r {
            HistoryRecord::Outer(o) => Some(o),
            _ => None,
        })
    }

    pub fn warning(&self) -> Option<&str> {
        self.records.iter().rev().find_map(|r| match r {
            HistoryRecord::Summary { warning, .. } => warning.as_deref(),
            _ => None,
        })
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for r in &self.records {
            serde_json::to_writer(&mut f, r)?;
            f.write_all(b"\n")?;
        }
        f.flush()?;
        Ok(())
    }
}

/// Everything the driver mutates.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: GanfModel,
    pub lagrangian: LagrangianState,
    pub adam: Adam,
    pub lr: f64,
    pub epoch: usize,
    pub outer: usize,
    /// Best validation log-density among constraint-satisfying states.
    pub best: Option<(f64, GanfModel)>,
    /// Model after the last epoch that finished with a finite loss.
    pub last_good: GanfModel,
    plateau_best: f64,
    stale: usize,
    shuffle: ChaCha8Rng,
}

impl TrainState {
    pub fn new(n_series: usize, n_attrs: usize, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = GanfModel::new(config.model_config(n_series, n_attrs), &mut rng)?;
        let lambda = config.lambda_init.unwrap_or_else(|| rng.random_range(0.0..1.0));
        let adam = Adam::new(&model.params().into_iter().map(|(_, t)| t).collect::<Vec<_>>());
        Ok(TrainState {
            last_good: model.clone(),
            model,
            lagrangian: LagrangianState::new(lambda, config.c_init),
            adam,
            lr: config.lr,
            epoch: 0,
            outer: 0,
            best: None,
            plateau_best: f64::NEG_INFINITY,
            stale: 0,
            shuffle: ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9e37_79b9_7f4a_7c15)),
        })
    }

    /// `h` of the current masked adjacency; zero outside graph mode.
    pub fn h(&self) -> Result<f64> {
        if self.model.mode() == Mode::Graph { acyclicity(&self.model.adjacency()) } else { Ok(0.0) }
    }

    /// One minibatch step; returns `(nll per window, loss)`.
    pub fn step(&mut self, batch: &[&MultiSeriesWindow], config: &TrainConfig) -> Result<(f64, f64)> {
        let obj = objective(&self.model, &self.lagrangian, batch).map_err(|e| match e {
            Error::Numeric(m) => Error::Numeric(format!(
                "{m} at outer iteration {}, epoch {}; last good state is from the end of epoch {}",
                self.outer,
                self.epoch,
                self.epoch.saturating_sub(1)
            )),
            other => other,
        })?;
        let mut grads = obj.grads;
        clip_gradients(&mut grads, config.grad_clip, config.clip_mode);
        self.adam.update(self.model.params_mut(), &grads, self.lr);
        if self.model.mode() == Mode::Graph {
            self.model.a = self.model.adjacency();
        }
        Ok((obj.nll, obj.loss))
    }
}

/// Value and gradients of `L_c` on one minibatch.
#[derive(Clone, Debug)]
pub struct Objective {
    /// Mean negative log-density per window.
    pub nll: f64,
    /// `nll + lambda * h + c/2 * h^2`.
    pub loss: f64,
    /// Aligned with `model.params()`; `None` for frozen parameters.
    pub grads: Vec<Option<Tensor>>,
}

pub fn objective(model: &GanfModel, lagrangian: &LagrangianState, batch: &[&MultiSeriesWindow]) -> Result<Objective> {
    let mut tape = Tape::new();
    let p = model.bind_trainable(&mut tape);
    let fwd = model.forward(&mut tape, &p, batch)?;
    let total = tape.sum(fwd.log_prob);
    let nll = tape.scale(total, -1.0 / batch.len() as f64);
    let mut loss = nll;
    if let Some(a) = fwd.adjacency {
        let h = tape.acyclicity(a)?;
        let h2 = tape.square(h);
        let lin = tape.scale(h, lagrangian.lambda);
        let quad = tape.scale(h2, 0.5 * lagrangian.c);
        loss = tape.add(loss, lin)?;
        loss = tape.add(loss, quad)?;
    }
    let (nll_v, loss_v) = (tape.value(nll).item(), tape.value(loss).item());
    if !loss_v.is_finite() {
        return Err(Error::Numeric("non-finite loss".into()));
    }
    tape.backward(loss)?;
    let grads = p.iter().map(|&v| tape.requires_grad(v).then(|| tape.grad(v).cloned()).flatten()).collect();
    Ok(Objective { nll: nll_v, loss: loss_v, grads })
}

/// Mean log-density per window.
pub fn mean_log_density(model: &GanfModel, windows: &[MultiSeriesWindow]) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::Data("no windows to evaluate".into()));
    }
    let reports = model.score_windows(windows, 64)?;
    Ok(reports.iter().map(|r| r.total).sum::<f64>() / windows.len() as f64)
}

/// Runs `inner_epochs` epochs of shuffled minibatch Adam on the current
/// subproblem, appending one record per epoch. The learning rate restarts
/// from `config.lr` and decays on validation plateaus within the call.
pub fn inner_optimize(
    state: &mut TrainState,
    train: &[MultiSeriesWindow],
    validation: &[MultiSeriesWindow],
    config: &TrainConfig,
    history: &mut History,
) -> Result<()> {
    if train.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    state.plateau_best = f64::NEG_INFINITY;
    state.stale = 0;
    state.lr = config.lr;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for _ in 0..config.inner_epochs {
        order.shuffle(&mut state.shuffle);
        let (mut nll_sum, mut loss_sum, mut batches) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&MultiSeriesWindow> = chunk.iter().map(|&k| &train[k]).collect();
            let (nll, loss) = state.step(&batch, config)?;
            nll_sum += nll;
            loss_sum += loss;
            batches += 1;
        }
        let train_nll = nll_sum / batches as f64;
        let val = if validation.is_empty() { -train_nll } else { mean_log_density(&state.model, validation)? };
        let h = state.h()?;

        let mut decayed = false;
        if val > state.plateau_best {
            state.plateau_best = val;
            state.stale = 0;
        } else {
            state.stale += 1;
            if state.stale >= config.plateau_patience {
                state.lr *= config.lr_decay;
                state.stale = 0;
                decayed = true;
            }
        }
        if h.abs() < config.h_tol && state.best.as_ref().is_none_or(|(b, _)| val > *b) {
            state.best = Some((val, state.model.clone()));
        }
        history.records.push(HistoryRecord::Epoch(EpochRecord {
            outer: state.outer,
            epoch: state.epoch,
            train_nll,
            train_loss: loss_sum / batches as f64,
            val_log_density: val,
            h,
            lambda: state.lagrangian.lambda,
            c: state.lagrangian.c,
            lr: state.lr,
            lr_decayed: decayed,
        }));
        log::debug!(
            "outer {} epoch {}: nll {train_nll:.4} val {val:.4} h {h:.3e} lr {:.1e}",
            state.outer,
            state.epoch,
            state.lr
        );
        state.last_good = state.model.clone();
        state.epoch += 1;
    }
    Ok(())
}

/// Result of a full run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Best constraint-satisfying validation snapshot, or the final state
    /// when none satisfied the tolerance.
    pub model: GanfModel,
    /// Masked adjacency of `model`.
    pub adjacency: Tensor,
    pub history: History,
    pub converged: bool,
    pub final_h: f64,
}

/// Outer loop: subproblem, constraint check, dual/penalty update.
pub fn train(train: &[MultiSeriesWindow], validation: &[MultiSeriesWindow], config: &TrainConfig) -> Result<TrainOutcome> {
    let first = train.first().ok_or_else(|| Error::Data("empty training set".into()))?;
    let (n, _, d) = first.shape();
    let mut state = TrainState::new(n, d, config)?;
    train_from(&mut state, train, validation, config)
}

/// As [`train`], continuing from an existing state.
pub fn train_from(
    state: &mut TrainState,
    train: &[MultiSeriesWindow],
    validation: &[MultiSeriesWindow],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut history = History::default();
    let schedule = config.schedule();
    let mut h = state.h()?;
    let mut converged = false;
    for _ in 0..config.max_outer_iters {
        inner_optimize(state, train, validation, config, &mut history)?;
        h = state.h()?;
        history.records.push(HistoryRecord::Outer(OuterRecord {
            outer: state.outer,
            h,
            lambda: state.lagrangian.lambda,
            c: state.lagrangian.c,
        }));
        log::info!("outer {}: h {h:.3e} lambda {:.3} c {:.1e}", state.outer, state.lagrangian.lambda, state.lagrangian.c);
        state.outer += 1;
        if h.abs() < config.h_tol {
            converged = true;
            break;
        }
        state.lagrangian = dual_penalty_update(&state.lagrangian, h, &schedule);
    }
    let warning = (!converged).then(|| {
        format!("constraint not satisfied after {} outer iterations: |h(A)| = {:.3e}", config.max_outer_iters, h.abs())
    });
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    let (best_val, model) = match &state.best {
        Some((v, m)) => (Some(*v), m.clone()),
        None => (None, state.model.clone()),
    };
    let final_h = if model.mode() == Mode::Graph { acyclicity(&model.adjacency())? } else { 0.0 };
    history.records.push(HistoryRecord::Summary {
        converged,
        final_h,
        outer_iters: state.outer,
        epochs: state.epoch,
        best_val_log_density: best_val,
        warning,
    });
    Ok(TrainOutcome { adjacency: model.adjacency(), model, history, converged, final_h })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_windows(count: usize, n: usize, t: usize, seed: u64) -> Vec<MultiSeriesWindow> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let mut vals = vec![0.0; n * t];
                for step in 0..t {
                    let base: f64 = r.random_range(-1.0..1.0);
                    for i in 0..n {
                        vals[i * t + step] = base * (i as f64 + 1.0) + 0.1 * r.random_range(-1.0..1.0);
                    }
                }
                MultiSeriesWindow::new(n, t, 1, vals).unwrap()
            })
            .collect()
    }

    fn small(mode: Mode) -> TrainConfig {
        TrainConfig {
            mode,
            lr: 1e-2,
            hidden_dim: 4,
            flow_hidden: 4,
            flow_blocks: 2,
            batch_size: 4,
            inner_epochs: 3,
            max_outer_iters: 2,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig { gamma: 1.0, ..TrainConfig::default() };
        assert!(bad.validate().unwrap_err().to_string().contains("gamma"));
        let bad = TrainConfig { eta: 1.0, ..TrainConfig::default() };
        assert!(bad.validate().unwrap_err().to_string().contains("eta"));
        let bad = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        assert!(bad.validate().unwrap_err().to_string().contains("batch_size"));
        let js = serde_json::to_string(&TrainConfig::default()).unwrap();
        assert_eq!(serde_json::from_str::<TrainConfig>(&js).unwrap(), TrainConfig::default());
        assert!(serde_json::from_str::<TrainConfig>(r#"{"learning_rate": 1}"#).is_err());
    }

    #[test]
    fn global_clip_scales_to_norm() {
        let mut g = vec![Some(Tensor::vector(vec![6.0, 8.0])), None];
        let norm = clip_gradients(&mut g, 1.0, ClipMode::GlobalNorm);
        assert_eq!(norm, 10.0);
        let c = g[0].as_ref().unwrap().data();
        assert!((c[0] - 0.6).abs() < 1e-15 && (c[1] - 0.8).abs() < 1e-15);
        let mut g = vec![Some(Tensor::vector(vec![0.3, -0.4]))];
        clip_gradients(&mut g, 1.0, ClipMode::GlobalNorm);
        assert_eq!(g[0].as_ref().unwrap().data(), &[0.3, -0.4]);
        let mut g = vec![Some(Tensor::vector(vec![3.0, -0.5, -2.0]))];
        clip_gradients(&mut g, 1.0, ClipMode::Elementwise);
        assert_eq!(g[0].as_ref().unwrap().data(), &[1.0, -0.5, -1.0]);
    }

    #[test]
    fn adam_first_step_is_lr_sign() {
        let mut p = Tensor::vector(vec![1.0, 1.0]);
        let mut adam = Adam::new(&[&p]);
        adam.update(vec![&mut p], &[Some(Tensor::vector(vec![0.5, -2.0]))], 0.1);
        assert!((p.data()[0] - 0.9).abs() < 1e-6);
        assert!((p.data()[1] - 1.1).abs() < 1e-6);
    }

    #[test]
    fn single_series_exits_after_one_outer() {
        let data = tiny_windows(8, 1, 5, 1);
        let cfg = TrainConfig { max_outer_iters: 5, ..small(Mode::Graph) };
        let out = train(&data, &data[..2], &cfg).unwrap();
        assert!(out.converged);
        assert_eq!(out.history.outers().count(), 1);
        assert_eq!(out.final_h, 0.0);
    }

    #[test]
    fn deterministic() {
        let data = tiny_windows(10, 3, 5, 2);
        let a = train(&data, &data[..3], &small(Mode::Graph)).unwrap();
        let b = train(&data, &data[..3], &small(Mode::Graph)).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn no_graph_keeps_a_zero() {
        let data = tiny_windows(10, 3, 5, 3);
        let out = train(&data, &data[..3], &small(Mode::NoGraph)).unwrap();
        assert_eq!(out.model.a, Tensor::zeros(&[3, 3]));
        assert!(out.history.epochs().all(|e| e.h == 0.0));
        assert!(out.converged);
    }

    #[test]
    fn diagonal_stays_masked() {
        let data = tiny_windows(10, 3, 5, 4);
        let out = train(&data, &data[..3], &small(Mode::Graph)).unwrap();
        for i in 0..3 {
            assert_eq!(out.model.a.at(i, i), 0.0);
        }
    }

    #[test]
    fn maximum_likelihood_smoke() {
        let data = tiny_windows(10, 2, 6, 6);
        let cfg = TrainConfig {
            lambda_init: Some(0.0),
            inner_epochs: 8,
            max_outer_iters: 1,
            batch_size: 5,
            ..small(Mode::NoGraph)
        };
        let out = train(&data, &[], &cfg).unwrap();
        let nll: Vec<f64> = out.history.epochs().map(|e| e.train_nll).collect();
        for w in nll.windows(2) {
            assert!(w[1] <= w[0] + 0.05 * w[0].abs(), "{nll:?}");
        }
        assert!(nll.last().unwrap() < &nll[0]);
    }

    #[test]
    fn history_jsonl_lines() {
        let data = tiny_windows(6, 2, 4, 7);
        let out = train(&data, &data[..2], &small(Mode::Graph)).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        out.history.write_jsonl(f.path()).unwrap();
        let text = std::fs::read_to_string(f.path()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), out.history.records.len());
        for l in lines {
            let r: HistoryRecord = serde_json::from_str(l).unwrap();
            let _ = r;
        }
        assert!(text.lines().last().unwrap().contains("\"kind\":\"summary\""));
    }
}
