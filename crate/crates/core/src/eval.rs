//! Detection and structure metrics: ROC/AUC with hard or probabilistic
//! labels, Gaussian label smoothing, SHD, histograms, score files.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dag::Edge;
use crate::error::{Error, Result};

pub const DEFAULT_SIGMA: f64 = 6.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelMode {
    #[default]
    Hard,
    Smoothed,
}

/// Anomaly onsets and how to turn them into per-window label probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelTrack {
    pub starts: Vec<f64>,
    pub sigma: f64,
    pub mode: LabelMode,
}

/// `p(t) = max_i exp(-(t - t_i)^2 / sigma^2)`; in hard mode `p(t)` is 1 on
/// an onset and 0 elsewhere.
pub fn smooth_labels(window_starts: &[f64], track: &LabelTrack) -> Result<Vec<f64>> {
    if !(track.sigma > 0.0 && track.sigma.is_finite()) {
        return Err(Error::Contract(format!("sigma must be positive, got {}", track.sigma)));
    }
    let s2 = track.sigma * track.sigma;
    Ok(window_starts
        .iter()
        .map(|&t| match track.mode {
            LabelMode::Hard => {
                if track.starts.contains(&t) { 1.0 } else { 0.0 }
            }
            LabelMode::Smoothed => {
                track.starts.iter().map(|&ti| (-(t - ti) * (t - ti) / s2).exp()).fold(0.0, f64::max)
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocResult {
    /// Descending; the first entry is `+inf` (nothing flagged).
    pub thresholds: Vec<f64>,
    pub tpr: Vec<f64>,
    pub fpr: Vec<f64>,
    pub auc: f64,
}

/// ROC over scores where larger means more anomalous. Label `p` contributes
/// `p` to the positive mass and `1 - p` to the negative mass; tied scores
/// share one threshold.
pub fn roc_auc(scores: &[f64], labels: &[f64]) -> Result<RocResult> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores but {} labels", scores.len(), labels.len())));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Numeric(format!("score {i} is {}", scores[i])));
    }
    if let Some(i) = labels.iter().position(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Contract(format!("label {i} = {} outside [0, 1]", labels[i])));
    }
    let pos: f64 = labels.iter().sum();
    let neg: f64 = labels.iter().map(|p| 1.0 - p).sum();
    if pos <= 0.0 || neg <= 0.0 {
        return Err(Error::UndefinedAuc(format!(
            "positive mass {pos} and negative mass {neg}; both must be nonzero"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut thresholds = vec![f64::INFINITY];
    let (mut tpr, mut fpr) = (vec![0.0], vec![0.0]);
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        while k < order.len() && scores[order[k]] == s {
            tp += labels[order[k]];
            fp += 1.0 - labels[order[k]];
            k += 1;
        }
        thresholds.push(s);
        tpr.push(tp / pos);
        fpr.push(fp / neg);
    }
    let auc = fpr.windows(2).zip(tpr.windows(2)).map(|(f, t)| (f[1] - f[0]) * (t[0] + t[1]) / 2.0).sum();
    Ok(RocResult { thresholds, tpr, fpr, auc })
}

/// Structural Hamming distance on `n` nodes. Per unordered pair the
/// symmetric difference of directed edges is counted, except that a lone
/// reversed edge costs 1.
pub fn shd(pred: &[Edge], truth: &[Edge], n: usize) -> usize {
    let p: HashSet<(usize, usize)> = pred.iter().map(|e| (e.from, e.to)).collect();
    let t: HashSet<(usize, usize)> = truth.iter().map(|e| (e.from, e.to)).collect();
    let mut total = 0;
    for u in 0..n {
        for v in u + 1..n {
            let pe = (p.contains(&(u, v)), p.contains(&(v, u)));
            let te = (t.contains(&(u, v)), t.contains(&(v, u)));
            if pe == te {
                continue;
            }
            let reversed = (pe == (true, false) && te == (false, true)) || (pe == (false, true) && te == (true, false));
            total += if reversed { 1 } else { usize::from(pe.0 != te.0) + usize::from(pe.1 != te.1) };
        }
    }
    total
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` ascending edges; the last bin is closed on the right.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["bin_lo", "bin_hi", "count"])?;
        for (k, c) in self.counts.iter().enumerate() {
            w.write_record([self.edges[k].to_string(), self.edges[k + 1].to_string(), c.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Equal-width bins spanning the finite values; a constant input gets the
/// unit range around its value.
pub fn density_histogram(values: &[f64], bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::Contract("bins must be at least 1".into()));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("value {i} is {}", values[i])));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = match (lo.is_finite(), lo < hi) {
        (false, _) => (0.0, 1.0),
        (true, false) => (lo - 0.5, lo + 0.5),
        (true, true) => (lo, hi),
    };
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|k| if k == bins { hi } else { lo + width * k as f64 }).collect();
    let mut counts = vec![0; bins];
    for &v in values {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    Ok(Histogram { edges, counts })
}

/// One row of a scores file.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRow {
    pub window_start: usize,
    pub score: f64,
    pub per_series: Vec<f64>,
}

/// `window_start,score,<entity>...` with one row per window.
pub fn write_scores(path: &Path, entities: &[String], rows: &[ScoreRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["window_start".to_string(), "score".to_string()];
    header.extend(entities.iter().cloned());
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.window_start.to_string(), format!("{:?}", r.score)];
        rec.extend(r.per_series.iter().map(|v| format!("{v:?}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.len() < 2 || &header[0] != "window_start" || &header[1] != "score" {
        return Err(Error::Data(format!("{}: header must start with `window_start,score`", path.display())));
    }
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = || Error::Data(format!("{} row {}: malformed score row", path.display(), line + 2));
        let window_start = rec[0].trim().parse().map_err(|_| bad())?;
        let vals: Vec<f64> = rec.iter().skip(1).map(|s| s.trim().parse()).collect::<Result<_, _>>().map_err(|_| bad())?;
        out.push(ScoreRow { window_start, score: vals[0], per_series: vals[1..].to_vec() });
    }
    Ok(out)
}

/// Contents of `metrics.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc: f64,
    pub label_mode: LabelMode,
    pub sigma: Option<f64>,
    pub windows: usize,
    pub positive_mass: f64,
    /// `(fpr, tpr)` pairs.
    pub roc: Vec<(f64, f64)>,
    pub histogram: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn e(from: usize, to: usize) -> Edge {
        Edge { from, to, weight: 1.0 }
    }

    #[test]
    fn four_point_examples() {
        let s = [4.0, 3.0, 2.0, 1.0];
        assert_eq!(roc_auc(&s, &[1.0, 1.0, 0.0, 0.0]).unwrap().auc, 1.0);
        assert_eq!(roc_auc(&s, &[1.0, 0.0, 1.0, 0.0]).unwrap().auc, 0.75);
        assert_eq!(roc_auc(&s, &[0.0, 0.0, 1.0, 1.0]).unwrap().auc, 0.0);
        let r = roc_auc(&s, &[1.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(r.tpr, vec![0.0, 0.5, 0.5, 1.0, 1.0]);
        assert_eq!(r.fpr, vec![0.0, 0.0, 0.5, 0.5, 1.0]);
    }

    #[test]
    fn ties_share_a_threshold() {
        let r = roc_auc(&[1.0, 1.0, 1.0, 1.0], &[1.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(r.thresholds.len(), 2);
        assert_eq!(r.auc, 0.5);
        let r = roc_auc(&[2.0, 1.0, 1.0], &[1.0, 1.0, 0.0]).unwrap();
        assert_eq!(r.auc, 0.75);
    }

    #[test]
    fn undefined_auc() {
        assert!(matches!(roc_auc(&[1.0, 2.0], &[0.0, 0.0]), Err(Error::UndefinedAuc(_))));
        assert!(matches!(roc_auc(&[1.0, 2.0], &[1.0, 1.0]), Err(Error::UndefinedAuc(_))));
        assert!(matches!(roc_auc(&[1.0], &[1.0, 0.0]), Err(Error::Shape(_))));
        assert!(matches!(roc_auc(&[1.0, 2.0], &[1.5, 0.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn random_scores_give_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
        let l: Vec<f64> = (0..10_000).map(|_| f64::from(u8::from(rng.random_bool(0.3)))).collect();
        assert!((roc_auc(&s, &l).unwrap().auc - 0.5).abs() < 0.02);
    }

    #[test]
    fn probabilistic_labels_use_mass() {
        // weighted Mann-Whitney; a window ties with itself
        let s = [0.9, 0.7, 0.4, 0.2, 0.1];
        let p = [0.8, 0.3, 0.6, 0.0, 0.1];
        let (mut num, mut pos, mut neg) = (0.0, 0.0, 0.0);
        for i in 0..5 {
            pos += p[i];
            neg += 1.0 - p[i];
            for j in 0..5 {
                let w = if s[i] > s[j] { 1.0 } else if s[i] == s[j] { 0.5 } else { 0.0 };
                num += w * p[i] * (1.0 - p[j]);
            }
        }
        let auc = roc_auc(&s, &p).unwrap().auc;
        assert!((auc - num / (pos * neg)).abs() < 1e-12);
    }

    #[test]
    fn smoothing_values() {
        let track = LabelTrack { starts: vec![10.0, 40.0], sigma: DEFAULT_SIGMA, mode: LabelMode::Smoothed };
        let p = smooth_labels(&[10.0, 16.0, 4.0, 1000.0], &track).unwrap();
        assert_eq!(p[0], 1.0);
        assert!((p[1] - (-1f64).exp()).abs() < 1e-12);
        assert!((p[2] - (-1f64).exp()).abs() < 1e-12);
        assert_eq!(p[3], 0.0);
        let empty = LabelTrack { starts: vec![], ..track.clone() };
        assert_eq!(smooth_labels(&[1.0, 2.0], &empty).unwrap(), vec![0.0, 0.0]);
        assert!(smooth_labels(&[1.0], &LabelTrack { sigma: 0.0, ..track }).is_err());
    }

    #[test]
    fn shd_examples() {
        let g = vec![e(0, 1), e(1, 2)];
        assert_eq!(shd(&g, &g, 3), 0);
        assert_eq!(shd(&[e(0, 1), e(1, 2), e(0, 2)], &g, 3), 1);
        assert_eq!(shd(&[e(1, 0), e(1, 2)], &g, 3), 1);
        assert_eq!(shd(&[], &g, 3), 2);
        assert_eq!(shd(&[e(0, 1), e(1, 0), e(1, 2)], &g, 3), 1);
    }

    #[test]
    fn histogram_examples() {
        let h = density_histogram(&[2.0; 7], 10).unwrap();
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(h.counts.iter().sum::<usize>(), 7);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut v: Vec<f64> = (0..100_000).map(|_| rng.random()).collect();
        v.push(0.0);
        v.push(1.0);
        let h = density_histogram(&v, 10).unwrap();
        assert_eq!(h.counts.iter().sum::<usize>(), v.len());
        assert!(h.counts.iter().all(|&c| (c as f64 - 10_000.0).abs() <= 500.0), "{:?}", h.counts);
        assert!(density_histogram(&v, 0).is_err());
    }

    #[test]
    fn score_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let rows = vec![
            ScoreRow { window_start: 0, score: 1.0 / 3.0, per_series: vec![0.1, -2.5e-7] },
            ScoreRow { window_start: 5, score: -4.0, per_series: vec![1e300, 0.0] },
        ];
        write_scores(&path, &["a".into(), "b".into()], &rows).unwrap();
        assert_eq!(read_scores(&path).unwrap(), rows);
    }

    proptest::proptest! {
        #[test]
        fn auc_bounds_and_monotone_curve(s in proptest::collection::vec(-5.0f64..5.0, 2..40), seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut p: Vec<f64> = s.iter().map(|_| rng.random()).collect();
            p[0] = 1.0;
            p[1] = 0.0;
            let r = roc_auc(&s, &p).unwrap();
            proptest::prop_assert!((0.0..=1.0).contains(&r.auc));
            for k in 1..r.tpr.len() {
                proptest::prop_assert!(r.tpr[k] >= r.tpr[k - 1] && r.fpr[k] >= r.fpr[k - 1]);
            }
        }
    }
}
