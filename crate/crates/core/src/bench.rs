//! Wall-time of one training iteration as a function of `(n, T)`.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::MultiSeriesWindow;
use crate::error::{Error, Result};
use crate::train::{TrainConfig, TrainState};

/// One grid point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingCell {
    pub n: usize,
    pub t: usize,
    pub d: usize,
    pub batch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub cell: ScalingCell,
    /// Median over the timed iterations.
    pub seconds_per_iter: f64,
    pub iters: usize,
}

/// Gaussian windows of the cell's shape.
pub fn random_batch(cell: &ScalingCell, seed: u64) -> Vec<MultiSeriesWindow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..cell.batch)
        .map(|b| {
            let vals = (0..cell.n * cell.t * cell.d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let mut w = MultiSeriesWindow::new(cell.n, cell.t, cell.d, vals).expect("sized");
            w.start_index = b * cell.t;
            w
        })
        .collect()
}

/// Times `iters` optimizer steps (after one warm-up step) on a fixed batch.
pub fn iteration_time(cell: ScalingCell, config: &TrainConfig, iters: usize) -> Result<Timing> {
    if cell.n == 0 || cell.t == 0 || cell.d == 0 || cell.batch == 0 || iters == 0 {
        return Err(Error::Config(format!("degenerate bench cell {cell:?} with {iters} iterations")));
    }
    let windows = random_batch(&cell, config.seed);
    let batch: Vec<&MultiSeriesWindow> = windows.iter().collect();
    let mut state = TrainState::new(cell.n, cell.d, config)?;
    state.lagrangian.c = 1.0;
    state.step(&batch, config)?;
    let mut times = Vec::with_capacity(iters);
    for _ in 0..iters {
        let t0 = Instant::now();
        state.step(&batch, config)?;
        times.push(t0.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    Ok(Timing { cell, seconds_per_iter: times[iters / 2], iters })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cell() {
        let cfg = TrainConfig { hidden_dim: 4, flow_hidden: 4, flow_blocks: 1, ..TrainConfig::default() };
        let cell = ScalingCell { n: 3, t: 4, d: 1, batch: 2 };
        let t = iteration_time(cell, &cfg, 3).unwrap();
        assert!(t.seconds_per_iter > 0.0);
        assert!(iteration_time(ScalingCell { n: 0, ..cell }, &cfg, 3).is_err());
    }
}
