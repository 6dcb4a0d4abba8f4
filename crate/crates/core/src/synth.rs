//! Synthetic multiple time series from a linear-Gaussian structural equation
//! model with an AR(1) term, plus anomaly injection with exact labels.
//!
//! Each attribute evolves independently as
//! `x_t^i = rho * x_{t-1}^i + sum_j W_ij * x_t^j + eps`, `eps ~ N(0, sigma^2)`,
//! with parents evaluated first in topological order.

use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dag::{topological_order, Edge};
use crate::data::{MultiSeriesWindow, SeriesTable};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnomalyKind {
    /// `+m * sigma` at one step.
    Spike,
    /// `+m * sigma` over the whole window.
    LevelShift,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalySpec {
    /// Fraction of windows perturbed.
    pub rate: f64,
    /// Perturbation size in units of the series' standard deviation.
    pub magnitude: f64,
    pub kind: AnomalyKind,
}

impl Default for AnomalySpec {
    fn default() -> Self {
        AnomalySpec { rate: 0.05, magnitude: 10.0, kind: AnomalyKind::Spike }
    }
}

/// Directed edge `parent -> child` with its structural weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthEdge {
    pub parent: usize,
    pub child: usize,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_series: usize,
    pub n_attrs: usize,
    pub edges: Vec<SynthEdge>,
    pub ar_coef: f64,
    pub noise_std: f64,
    /// Labels are assigned to disjoint windows of this length.
    pub window_len: usize,
    pub anomaly: AnomalySpec,
    pub length: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    /// Five series, one attribute, four strong edges including a collider.
    fn default() -> Self {
        let e = |parent, child, weight| SynthEdge { parent, child, weight };
        SynthSpec {
            n_series: 5,
            n_attrs: 1,
            edges: vec![e(0, 1, 0.9), e(1, 2, -0.8), e(3, 2, 0.8), e(3, 4, 1.0)],
            ar_coef: 0.5,
            noise_std: 1.0,
            window_len: 20,
            anomaly: AnomalySpec::default(),
            length: 10_000,
            seed: 0,
        }
    }
}

impl SynthSpec {
    /// A random DAG over `n` nodes: strictly lower-triangular on a random
    /// relabeling, each pair linked with probability `edge_prob`, weights of
    /// magnitude in `[w_min, w_max]` with random sign.
    pub fn random_graph(n: usize, edge_prob: f64, w_min: f64, w_max: f64, seed: u64) -> Vec<SynthEdge> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut labels: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(labels.as_mut_slice(), &mut rng);
        let mut edges = Vec::new();
        for child in 0..n {
            for parent in 0..child {
                if rng.random::<f64>() < edge_prob {
                    let mag = rng.random_range(w_min..=w_max);
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    edges.push(SynthEdge { parent: labels[parent], child: labels[child], weight: sign * mag });
                }
            }
        }
        edges
    }

    /// Ground-truth adjacency, `A[child][parent] = weight`.
    pub fn adjacency(&self) -> Tensor {
        let n = self.n_series;
        let mut a = Tensor::zeros(&[n, n]);
        for e in &self.edges {
            a.set(e.child, e.parent, e.weight);
        }
        a
    }

    pub fn truth_edges(&self) -> Vec<Edge> {
        self.edges.iter().map(|e| Edge { from: e.parent, to: e.child, weight: e.weight }).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_series;
        if n == 0 || self.n_attrs == 0 || self.window_len == 0 {
            return Err(Error::Config("n_series, n_attrs and window_len must be positive".into()));
        }
        if !(self.noise_std > 0.0) {
            return Err(Error::Config("noise_std must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.anomaly.rate) {
            return Err(Error::Config("anomaly.rate must lie in [0, 1)".into()));
        }
        for e in &self.edges {
            if e.parent >= n || e.child >= n {
                return Err(Error::Config(format!("edge {} -> {} out of range", e.parent, e.child)));
            }
            if e.parent == e.child {
                return Err(Error::Config(format!("self-loop on node {}", e.parent)));
            }
        }
        if topological_order(n, &self.truth_edges()).is_none() {
            return Err(Error::Config("spec graph is cyclic".into()));
        }
        Ok(())
    }
}

/// Generated series with exact window labels.
#[derive(Clone, Debug)]
pub struct SynthData {
    pub series: SeriesTable,
    /// Series before anomaly injection.
    pub clean: SeriesTable,
    /// `(window_start, label)` for every disjoint window.
    pub labels: Vec<(usize, u8)>,
    /// Perturbed node of each labeled window, aligned with `labels`.
    pub anomalous_nodes: Vec<Option<usize>>,
    pub adjacency: Tensor,
}

const BURN_IN: usize = 200;

/// Draws `length` steps of the structural model and injects anomalies into
/// `floor(rate * windows)` disjoint windows.
pub fn synth_generate(spec: &SynthSpec, length: usize, seed: u64) -> Result<SynthData> {
    spec.validate()?;
    let (n, d) = (spec.n_series, spec.n_attrs);
    let order = topological_order(n, &spec.truth_edges()).expect("validated acyclic");
    let mut parents: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for e in &spec.edges {
        parents[e.child].push((e.parent, e.weight));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::Config(e.to_string()))?;

    let ids: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
    let mut table = SeriesTable::zeros(ids, length, d);
    let mut prev = vec![0.0; n * d];
    let mut cur = vec![0.0; n * d];
    for step in 0..BURN_IN + length {
        for &i in &order {
            for a in 0..d {
                let mut v = spec.ar_coef * prev[i * d + a] + noise.sample(&mut rng);
                for &(j, w) in &parents[i] {
                    v += w * cur[j * d + a];
                }
                cur[i * d + a] = v;
            }
        }
        if step >= BURN_IN {
            let t = step - BURN_IN;
            for i in 0..n {
                for a in 0..d {
                    table.set(i, t, a, cur[i * d + a]);
                }
            }
        }
        std::mem::swap(&mut prev, &mut cur);
    }

    let clean = table.clone();
    let sigma = series_std(&table);
    let windows = length / spec.window_len;
    let count = (spec.anomaly.rate * windows as f64).floor() as usize;
    let mut labels: Vec<(usize, u8)> = (0..windows).map(|k| (k * spec.window_len, 0)).collect();
    let mut nodes = vec![None; windows];
    let mut chosen = sample(&mut rng, windows, count).into_vec();
    chosen.sort_unstable();
    for k in chosen {
        let node = rng.random_range(0..n);
        let start = k * spec.window_len;
        let at = rng.random_range(0..spec.window_len);
        for a in 0..d {
            let bump = spec.anomaly.magnitude * sigma[node * d + a];
            match spec.anomaly.kind {
                AnomalyKind::Spike => {
                    let v = table.get(node, start + at, a) + bump;
                    table.set(node, start + at, a, v);
                }
                AnomalyKind::LevelShift => {
                    for t in start..start + spec.window_len {
                        let v = table.get(node, t, a) + bump;
                        table.set(node, t, a, v);
                    }
                }
            }
        }
        labels[k].1 = 1;
        nodes[k] = Some(node);
    }
    Ok(SynthData { series: table, clean, labels, anomalous_nodes: nodes, adjacency: spec.adjacency() })
}

fn series_std(t: &SeriesTable) -> Vec<f64> {
    let (n, len, d) = t.shape();
    let mut out = vec![0.0; n * d];
    for i in 0..n {
        for a in 0..d {
            let vals: Vec<f64> = (0..len).map(|s| t.get(i, s, a)).collect();
            out[i * d + a] = std_of(&vals);
        }
    }
    out
}

fn std_of(vals: &[f64]) -> f64 {
    let m = vals.iter().sum::<f64>() / vals.len().max(1) as f64;
    (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len().max(1) as f64).sqrt()
}

/// Windows after injection, with exact labels.
#[derive(Clone, Debug)]
pub struct Injection {
    pub windows: Vec<MultiSeriesWindow>,
    pub labels: Vec<u8>,
    /// Perturbed series per window, `None` for clean windows.
    pub nodes: Vec<Option<usize>>,
}

/// Perturbs `floor(rate * windows.len())` windows, each in one randomly
/// chosen series. The scale `sigma` is the per series-attribute standard
/// deviation over all given windows.
pub fn inject_anomalies(windows: &[MultiSeriesWindow], spec: &AnomalySpec, seed: u64) -> Result<Injection> {
    if !(0.0..1.0).contains(&spec.rate) {
        return Err(Error::Config("anomaly rate must lie in [0, 1)".into()));
    }
    let mut out = windows.to_vec();
    let mut labels = vec![0u8; windows.len()];
    let mut nodes = vec![None; windows.len()];
    let count = (spec.rate * windows.len() as f64).floor() as usize;
    if count == 0 {
        return Ok(Injection { windows: out, labels, nodes });
    }
    let (n, t_len, d) = windows[0].shape();
    let mut sigma = vec![0.0; n * d];
    for i in 0..n {
        for a in 0..d {
            let vals: Vec<f64> =
                windows.iter().flat_map(|w| (0..t_len).map(move |t| w.get(i, t, a))).collect();
            sigma[i * d + a] = std_of(&vals);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = sample(&mut rng, windows.len(), count).into_vec();
    chosen.sort_unstable();
    for k in chosen {
        let node = rng.random_range(0..n);
        let at = rng.random_range(0..t_len);
        let w = &mut out[k];
        for a in 0..d {
            let bump = spec.magnitude * sigma[node * d + a];
            match spec.kind {
                AnomalyKind::Spike => {
                    let v = w.get(node, at, a) + bump;
                    w.set(node, at, a, v);
                }
                AnomalyKind::LevelShift => {
                    for t in 0..t_len {
                        let v = w.get(node, t, a) + bump;
                        w.set(node, t, a, v);
                    }
                }
            }
        }
        labels[k] = 1;
        nodes[k] = Some(node);
    }
    Ok(Injection { windows: out, labels, nodes })
}

/// Writes `window_start,label` rows.
pub fn write_labels(path: &Path, labels: &[(usize, u8)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["window_start", "label"])?;
    for (s, l) in labels {
        w.write_record([s.to_string(), l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `window_start,label` rows; labels may be fractional probabilities.
pub fn read_labels(path: &Path) -> Result<Vec<(usize, f64)>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != ["window_start", "label"] {
        return Err(Error::Data(format!("{}: header must be `window_start,label`", path.display())));
    }
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = || Error::Data(format!("{} row {}: malformed label row", path.display(), line + 2));
        let s: usize = rec[0].trim().parse().map_err(|_| bad())?;
        let l: f64 = rec[1].trim().parse().map_err(|_| bad())?;
        if !(0.0..=1.0).contains(&l) {
            return Err(bad());
        }
        out.push((s, l));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dag::acyclicity;
    use crate::data::make_windows;

    fn spec() -> SynthSpec {
        SynthSpec { length: 2000, ..SynthSpec::default() }
    }

    #[test]
    fn independent_noise_has_target_std() {
        let s = SynthSpec { edges: vec![], ar_coef: 0.0, noise_std: 2.0, ..spec() };
        let d = synth_generate(&s, 10_000, 1).unwrap();
        for (i, sd) in series_std(&d.clean).iter().enumerate() {
            assert!((sd / 2.0 - 1.0).abs() < 0.05, "series {i}: {sd}");
        }
    }

    #[test]
    fn ground_truth_is_acyclic() {
        let s = spec();
        assert_eq!(acyclicity(&s.adjacency()).unwrap(), 0.0);
        let r = SynthSpec { edges: SynthSpec::random_graph(8, 0.5, 0.8, 1.5, 3), n_series: 8, ..spec() };
        r.validate().unwrap();
        assert!(acyclicity(&r.adjacency()).unwrap().abs() < 1e-12);
    }

    #[test]
    fn cyclic_spec_rejected() {
        let mut s = spec();
        s.edges.push(SynthEdge { parent: 2, child: 0, weight: 0.5 });
        assert!(s.validate().unwrap_err().to_string().contains("cyclic"));
        assert!(synth_generate(&s, 100, 0).is_err());
    }

    #[test]
    fn label_count_is_floor_of_rate() {
        let s = SynthSpec { window_len: 10, ..spec() };
        let d = synth_generate(&s, 10_000, 4).unwrap();
        assert_eq!(d.labels.len(), 1000);
        assert_eq!(d.labels.iter().filter(|l| l.1 == 1).count(), 50);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = synth_generate(&spec(), 500, 9).unwrap();
        let b = synth_generate(&spec(), 500, 9).unwrap();
        assert_eq!(a.series, b.series);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn injection_rate_zero_is_noop() {
        let d = synth_generate(&spec(), 400, 2).unwrap();
        let w = make_windows(&d.clean, 20, 20).unwrap();
        let inj = inject_anomalies(&w, &AnomalySpec { rate: 0.0, ..AnomalySpec::default() }, 1).unwrap();
        assert_eq!(inj.windows, w);
        assert!(inj.labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn injection_touches_one_node() {
        let d = synth_generate(&spec(), 2000, 2).unwrap();
        let w = make_windows(&d.clean, 20, 20).unwrap();
        let s = AnomalySpec { rate: 0.3, kind: AnomalyKind::LevelShift, ..AnomalySpec::default() };
        let inj = inject_anomalies(&w, &s, 5).unwrap();
        assert_eq!(inj.labels.iter().filter(|&&l| l == 1).count(), 30);
        for (k, (orig, new)) in w.iter().zip(&inj.windows).enumerate() {
            let changed: Vec<usize> = (0..orig.n).filter(|&i| orig.series(i) != new.series(i)).collect();
            match inj.nodes[k] {
                Some(node) => assert_eq!(changed, vec![node]),
                None => assert!(changed.is_empty()),
            }
        }
        let again = inject_anomalies(&w, &s, 5).unwrap();
        assert_eq!(again.windows, inj.windows);
    }

    #[test]
    fn labels_roundtrip() {
        let f = tempfile::NamedTempFile::new().unwrap();
        write_labels(f.path(), &[(0, 0), (20, 1)]).unwrap();
        assert_eq!(read_labels(f.path()).unwrap(), vec![(0, 0.0), (20, 1.0)]);
    }
}
