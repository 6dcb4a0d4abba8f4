use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ganf_core::bench::iteration_time;
use ganf_core::checkpoint::{load, load_for, save_model, Checkpoint};
use ganf_core::dag::{threshold_dag, GraphExport};
use ganf_core::data::{load_csv, make_windows, CsvSchema, DatasetSplit, NormStats, SplitConfig};
use ganf_core::eval::{
    density_histogram, read_scores, roc_auc, smooth_labels, write_scores, LabelMode, LabelTrack, MetricsReport,
    ScoreRow, DEFAULT_SIGMA,
};
use ganf_core::synth::{read_labels, synth_generate, write_labels, SynthSpec};
use ganf_core::train::train as run_training;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{ensure_dir, load_layered, write_json, BenchGrid, RunConfig};
use crate::{BenchArgs, EvalArgs, ExportArgs, ScoreArgs, SynthArgs, TrainArgs, Usage};

const CHECKPOINT: &str = "checkpoint.ganf";

/// What a checkpoint carries besides the model.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
struct CheckpointMeta {
    entities: Vec<String>,
    window_len: usize,
    norm: Option<NormStats>,
}

fn meta_of(ck: &Checkpoint) -> Result<CheckpointMeta> {
    if ck.meta.is_null() {
        return Ok(CheckpointMeta {
            entities: (0..ck.n_series).map(|i| format!("s{i}")).collect(),
            ..CheckpointMeta::default()
        });
    }
    serde_json::from_value(ck.meta.clone()).context("checkpoint metadata")
}

fn existing(path: &Path, flag: &str) -> Result<()> {
    if !path.is_file() {
        bail!(Usage(format!("{flag}: no such file {}", path.display())));
    }
    Ok(())
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let mut spec: SynthSpec = load_layered(a.config.as_deref())?;
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(t) = a.window_len {
        spec.window_len = t;
    }
    let data = synth_generate(&spec, spec.length, spec.seed)?;
    ensure_dir(&a.out)?;
    data.series.write_csv(&a.out.join("series.csv"))?;
    write_labels(&a.out.join("labels.csv"), &data.labels)?;
    let graph = json!({
        "nodes": data.series.entity_ids.to_vec(),
        "edges": spec.truth_edges(),
        "adjacency": (0..spec.n_series)
            .map(|i| (0..spec.n_series).map(|j| data.adjacency.at(i, j)).collect::<Vec<_>>())
            .collect::<Vec<_>>(),
    });
    write_json(&a.out.join("graph.json"), &graph)?;
    let manifest = json!({
        "seed": spec.seed,
        "length": spec.length,
        "files": ["series.csv", "labels.csv", "graph.json"],
        "anomalous_windows": data.labels.iter().filter(|(_, l)| *l == 1).count(),
        "spec": spec,
    });
    write_json(&a.out.join("manifest.json"), &manifest)?;
    log::info!("wrote synthetic dataset to {}", a.out.display());
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut cfg: RunConfig = load_layered(a.config.as_deref())?;
    if let Some(d) = a.data {
        cfg.data = Some(d);
    }
    if let Some(m) = a.mode {
        cfg.train.mode = m;
    }
    if let Some(t) = a.window_len {
        cfg.window_len = t;
    }
    if let Some(s) = a.stride {
        cfg.stride = Some(s);
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    let data = cfg.data.clone().ok_or_else(|| Usage("missing data path: pass --data or set `data` in --config".into()))?;
    existing(&data, "--data")?;
    cfg.train.validate()?;

    let table = load_csv(&data, &CsvSchema { max_gap: cfg.max_gap, ..CsvSchema::default() })?;
    let split_cfg = SplitConfig {
        window_len: cfg.window_len,
        train_stride: cfg.stride.unwrap_or(cfg.window_len),
        val_stride: cfg.window_len,
        test_stride: 1,
        train_frac: cfg.train_frac,
        val_frac: cfg.val_frac,
    };
    let mut split = DatasetSplit::chronological(&table, &split_cfg)?;
    if cfg.normalize {
        split = split.normalize()?;
    }
    ensure_dir(&a.out)?;
    write_json(&a.out.join("config.json"), &cfg)?;
    log::info!(
        "training on {} windows ({} validation), n = {}, D = {}, mode {}",
        split.train.len(),
        split.validation.len(),
        table.n,
        table.d,
        cfg.train.mode
    );
    let outcome = run_training(&split.train, &split.validation, &cfg.train)?;
    outcome.history.write_jsonl(&a.out.join("history.jsonl"))?;
    let meta = CheckpointMeta { entities: table.entity_ids.to_vec(), window_len: cfg.window_len, norm: split.stats };
    save_model(&outcome.model, &cfg.train, serde_json::to_value(&meta)?, &a.out.join(CHECKPOINT))?;
    write_json(
        &a.out.join("summary.json"),
        &json!({
            "converged": outcome.converged,
            "final_h": outcome.final_h,
            "warning": outcome.history.warning(),
        }),
    )?;
    if let Some(w) = outcome.history.warning() {
        eprintln!("warning: {w}");
    }
    Ok(())
}

pub fn score(a: ScoreArgs) -> Result<()> {
    existing(&a.checkpoint, "--checkpoint")?;
    existing(&a.data, "--data")?;
    let table = load_csv(&a.data, &CsvSchema::default())?;
    let ck = load_for(&a.checkpoint, table.n, table.d)?;
    let meta = meta_of(&ck)?;
    let t_len = a.window_len.unwrap_or(meta.window_len);
    if t_len == 0 {
        bail!(Usage("window length unknown: pass --window-len".into()));
    }
    if table.len < t_len {
        bail!("series of length {} is shorter than the window length T = {t_len}", table.len);
    }
    if a.stride == 0 {
        bail!(Usage("--stride must be positive".into()));
    }
    let mut windows = make_windows(&table, t_len, a.stride)?;
    if let Some(norm) = &meta.norm {
        windows.iter_mut().for_each(|w| norm.apply(w));
    }
    let reports = ck.model.score_windows(&windows, 64)?;
    let rows: Vec<ScoreRow> = windows
        .iter()
        .zip(&reports)
        .map(|(w, r)| ScoreRow { window_start: w.start_index, score: r.score(), per_series: r.series_scores() })
        .collect();
    ensure_dir(&a.out)?;
    write_scores(&a.out.join("scores.csv"), &table.entity_ids, &rows)?;
    write_json(
        &a.out.join("config.json"),
        &json!({
            "checkpoint": a.checkpoint,
            "data": a.data,
            "window_len": t_len,
            "stride": a.stride,
            "normalized": meta.norm.is_some(),
        }),
    )?;
    log::info!("scored {} windows", rows.len());
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    existing(&a.scores, "--scores")?;
    existing(&a.labels, "--labels")?;
    let scores = read_scores(&a.scores)?;
    let labels = read_labels(&a.labels)?;
    if scores.len() != labels.len() {
        bail!("misaligned inputs: {} score rows but {} label rows", scores.len(), labels.len());
    }
    if let Some(k) = scores.iter().zip(&labels).position(|(s, l)| s.window_start != l.0) {
        bail!(
            "misaligned inputs at row {}: score window_start {} but label window_start {}",
            k + 2,
            scores[k].window_start,
            labels[k].0
        );
    }
    let smoothed = a.smoothed || a.sigma.is_some();
    let sigma = a.sigma.unwrap_or(DEFAULT_SIGMA);
    let probs: Vec<f64> = if smoothed {
        let track = LabelTrack {
            starts: labels.iter().filter(|(_, p)| *p >= 0.5).map(|(s, _)| *s as f64).collect(),
            sigma,
            mode: LabelMode::Smoothed,
        };
        let starts: Vec<f64> = scores.iter().map(|s| s.window_start as f64).collect();
        smooth_labels(&starts, &track)?
    } else {
        labels.iter().map(|(_, p)| *p).collect()
    };
    let s: Vec<f64> = scores.iter().map(|r| r.score).collect();
    let roc = roc_auc(&s, &probs)?;
    ensure_dir(&a.out)?;
    let hist = density_histogram(&s.iter().map(|v| -v).collect::<Vec<_>>(), a.bins)?;
    let hist_path = a.out.join("histogram.csv");
    hist.write_csv(&hist_path)?;
    let report = MetricsReport {
        auc: roc.auc,
        label_mode: if smoothed { LabelMode::Smoothed } else { LabelMode::Hard },
        sigma: smoothed.then_some(sigma),
        windows: s.len(),
        positive_mass: probs.iter().sum(),
        roc: roc.fpr.iter().copied().zip(roc.tpr.iter().copied()).collect(),
        histogram: hist_path.display().to_string(),
    };
    write_json(&a.out.join("metrics.json"), &report)?;
    write_json(
        &a.out.join("config.json"),
        &json!({
            "scores": a.scores,
            "labels": a.labels,
            "label_mode": report.label_mode,
            "sigma": report.sigma,
            "bins": a.bins,
        }),
    )?;
    println!("AUC {:.6}", roc.auc);
    Ok(())
}

fn named_graph(ck: &Checkpoint, epsilon: f64) -> Result<GraphExport> {
    let mut g = threshold_dag(&ck.model.adjacency(), epsilon)?;
    let meta = meta_of(ck)?;
    if meta.entities.len() == g.nodes.len() {
        g.nodes = meta.entities;
    }
    Ok(g)
}

pub fn export_graph(a: ExportArgs) -> Result<()> {
    if !(a.epsilon > 0.0) {
        bail!(Usage(format!("--epsilon must be positive, got {}", a.epsilon)));
    }
    for p in &a.checkpoint {
        existing(p, "--checkpoint")?;
    }
    ensure_dir(&a.out)?;
    let cks: Vec<Checkpoint> =
        a.checkpoint.iter().map(|p| load(p).with_context(|| p.display().to_string())).collect::<Result<_>>()?;
    let single = cks.len() == 1;
    for (k, ck) in cks.iter().enumerate() {
        let g = named_graph(ck, a.epsilon)?;
        let stem = if single { "graph".to_string() } else { format!("graph_{k}") };
        write_json(&a.out.join(format!("{stem}.json")), &g)?;
        std::fs::write(a.out.join(format!("{stem}.dot")), g.to_dot())?;
        log::info!("{}: {} edges, acyclic {}", a.checkpoint[k].display(), g.edges.len(), g.acyclic);
    }
    if !single {
        let n = cks[0].n_series;
        if let Some(bad) = cks.iter().position(|c| c.n_series != n) {
            bail!("checkpoint {} has n = {} but the first has n = {n}", a.checkpoint[bad].display(), cks[bad].n_series);
        }
        let names = meta_of(&cks[0])?.entities;
        let pairs: Vec<(usize, usize)> =
            (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|(i, j)| i != j).collect();
        let mut w = csv::Writer::from_path(a.out.join("edge_weights.csv"))?;
        let mut header = vec!["checkpoint".to_string()];
        header.extend(pairs.iter().map(|&(i, j)| format!("{}->{}", names[j], names[i])));
        w.write_record(&header)?;
        for (p, ck) in a.checkpoint.iter().zip(&cks) {
            let adj = ck.model.adjacency();
            let mut rec = vec![p.display().to_string()];
            rec.extend(pairs.iter().map(|&(i, j)| format!("{:?}", adj.at(i, j))));
            w.write_record(&rec)?;
        }
        w.flush()?;
    }
    write_json(
        &a.out.join("config.json"),
        &json!({ "checkpoints": a.checkpoint, "epsilon": a.epsilon }),
    )?;
    Ok(())
}

pub fn bench(a: BenchArgs) -> Result<()> {
    let mut grid: BenchGrid = load_layered(a.config.as_deref())?;
    if let Some(n) = a.n {
        grid.n = n;
    }
    if let Some(t) = a.t {
        grid.t = t;
    }
    if let Some(s) = a.seed {
        grid.train.seed = s;
    }
    grid.train.validate()?;
    ensure_dir(&a.out)?;
    write_json(&a.out.join("config.json"), &grid)?;
    let path: PathBuf = a.out.join("timing.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["n", "t", "d", "batch", "iters", "seconds_per_iter"])?;
    for cell in grid.cells() {
        let t = iteration_time(cell, &grid.train, grid.iters)?;
        log::info!("n {} T {}: {:.4} s/iter", cell.n, cell.t, t.seconds_per_iter);
        w.write_record([
            cell.n.to_string(),
            cell.t.to_string(),
            cell.d.to_string(),
            cell.batch.to_string(),
            t.iters.to_string(),
            format!("{:?}", t.seconds_per_iter),
        ])?;
    }
    w.flush()?;
    Ok(())
}
