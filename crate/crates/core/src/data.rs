//! Long-format CSV ingestion, windowing, chronological splits and z-score
//! normalization.

use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense `n x L x D` array of aligned series.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesTable {
    pub entity_ids: Arc<[String]>,
    /// Global step index of column 0.
    pub offset: usize,
    pub n: usize,
    pub len: usize,
    pub d: usize,
    /// Indexed `[entity][step][attr]`.
    pub values: Vec<f64>,
}

impl SeriesTable {
    pub fn zeros(entity_ids: Vec<String>, len: usize, d: usize) -> Self {
        let n = entity_ids.len();
        SeriesTable { entity_ids: entity_ids.into(), offset: 0, n, len, d, values: vec![0.0; n * len * d] }
    }

    pub fn idx(&self, i: usize, t: usize, a: usize) -> usize {
        (i * self.len + t) * self.d + a
    }

    pub fn get(&self, i: usize, t: usize, a: usize) -> f64 {
        self.values[self.idx(i, t, a)]
    }

    pub fn set(&mut self, i: usize, t: usize, a: usize, v: f64) {
        let k = self.idx(i, t, a);
        self.values[k] = v;
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.n, self.len, self.d)
    }

    /// Columns `start..end` as a new table.
    pub fn segment(&self, start: usize, end: usize) -> Result<SeriesTable> {
        if start > end || end > self.len {
            return Err(Error::Data(format!("segment {start}..{end} of length {}", self.len)));
        }
        let mut out = SeriesTable {
            entity_ids: self.entity_ids.clone(),
            offset: self.offset + start,
            n: self.n,
            len: end - start,
            d: self.d,
            values: Vec::with_capacity(self.n * (end - start) * self.d),
        };
        for i in 0..self.n {
            let a = self.idx(i, start, 0);
            let b = a + (end - start) * self.d;
            out.values.extend_from_slice(&self.values[a..b]);
        }
        Ok(out)
    }

    /// Writes the table in the long CSV schema with timestamps
    /// `offset + step`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(csv_header(self.d))?;
        for t in 0..self.len {
            for i in 0..self.n {
                let mut rec = vec![(self.offset + t).to_string(), self.entity_ids[i].clone()];
                rec.extend((0..self.d).map(|a| format_value(self.get(i, t, a))));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Shortest representation that round-trips through `f64` parsing.
pub fn format_value(v: f64) -> String {
    format!("{v:?}")
}

pub fn csv_header(d: usize) -> Vec<String> {
    let mut h = vec!["timestamp".to_string(), "entity".to_string()];
    h.extend((1..=d).map(|a| format!("attr_{a}")));
    h
}

/// Expectations applied while reading a long-format CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    /// Required attribute count; inferred from the header when `None`.
    pub attrs: Option<usize>,
    /// Required entity count.
    pub entities: Option<usize>,
    /// Longest run of missing steps that is forward-filled.
    pub max_gap: usize,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema { attrs: None, entities: None, max_gap: 5 }
    }
}

/// Reads `timestamp,entity,attr_1,...,attr_D` rows into a dense table.
///
/// Timestamps are integers on a uniform grid. Missing rows, and empty or
/// `nan` cells, are forward-filled when the run is at most
/// `schema.max_gap` steps long.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<SeriesTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let d = header.len().saturating_sub(2);
    if d == 0 || header != csv_header(d) {
        return Err(Error::Data(format!(
            "{}: header must be `timestamp,entity,attr_1,...,attr_D`, got `{}`",
            path.display(),
            header.join(",")
        )));
    }
    if let Some(want) = schema.attrs {
        if want != d {
            return Err(Error::Data(format!("expected {want} attributes, header has {d}")));
        }
    }

    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<(i64, Vec<Option<f64>>)>> = HashMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let at = || format!("{} row {}", path.display(), line + 2);
        let ts: i64 = rec[0]
            .trim()
            .parse()
            .map_err(|_| Error::Data(format!("{}: bad timestamp `{}`", at(), &rec[0])))?;
        let entity = rec[1].to_string();
        let mut vals = Vec::with_capacity(d);
        for a in 0..d {
            let cell = rec[2 + a].trim();
            let v = if cell.is_empty() || cell.eq_ignore_ascii_case("nan") {
                None
            } else {
                let v: f64 = cell
                    .parse()
                    .map_err(|_| Error::Data(format!("{}: bad value `{cell}`", at())))?;
                v.is_finite().then_some(v)
            };
            vals.push(v);
        }
        if !rows.contains_key(&entity) {
            order.push(entity.clone());
        }
        rows.entry(entity).or_default().push((ts, vals));
    }
    if order.is_empty() {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }
    if let Some(want) = schema.entities {
        if want != order.len() {
            return Err(Error::Data(format!(
                "expected {want} entities, found {}: {}",
                order.len(),
                order.join(",")
            )));
        }
    }

    let mut step = i64::MAX;
    for e in &order {
        let r = &rows[e];
        for w in r.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::Data(format!(
                    "non-monotone timestamps for entity `{e}`: {} follows {}",
                    w[1].0, w[0].0
                )));
            }
            step = step.min(w[1].0 - w[0].0);
        }
    }
    if step == i64::MAX {
        step = 1;
    }
    let start = order.iter().map(|e| rows[e][0].0).min().unwrap_or(0);
    let end = order.iter().map(|e| rows[e].last().map_or(start, |r| r.0)).max().unwrap_or(start);
    let len = ((end - start) / step + 1) as usize;

    let mut table = SeriesTable::zeros(order.clone(), len, d);
    let g = schema.max_gap;
    for (i, e) in order.iter().enumerate() {
        let r = &rows[e];
        if r[0].0 != start {
            return Err(Error::Data(format!(
                "entity `{e}` starts at {} but the series starts at {start}",
                r[0].0
            )));
        }
        let mut last: Vec<Option<f64>> = vec![None; d];
        let mut last_pos = vec![0usize; d];
        let mut prev_pos = 0usize;
        for (k, (ts, vals)) in r.iter().enumerate() {
            if (ts - start) % step != 0 {
                return Err(Error::Data(format!("entity `{e}`: timestamp {ts} is off the sampling grid")));
            }
            let pos = ((ts - start) / step) as usize;
            if k > 0 && pos - prev_pos - 1 > g {
                return Err(Error::Data(format!(
                    "entity `{e}`: gap of {} steps after timestamp {} exceeds {g}",
                    pos - prev_pos - 1,
                    r[k - 1].0
                )));
            }
            // forward-fill skipped rows
            for t in prev_pos + 1..pos {
                for a in 0..d {
                    table.set(i, t, a, last[a].expect("row k>0 has a previous reading"));
                }
            }
            for a in 0..d {
                match vals[a] {
                    Some(v) => {
                        last[a] = Some(v);
                        last_pos[a] = pos;
                    }
                    None => {
                        if last[a].is_none() || pos - last_pos[a] > g {
                            return Err(Error::Data(format!(
                                "entity `{e}`: attribute attr_{} missing at timestamp {ts} with no reading within {g} steps",
                                a + 1
                            )));
                        }
                    }
                }
                table.set(i, pos, a, last[a].expect("checked above"));
            }
            prev_pos = pos;
        }
        let trailing = len - 1 - prev_pos;
        if trailing > g {
            return Err(Error::Data(format!("entity `{e}`: last {trailing} steps missing (limit {g})")));
        }
        for t in prev_pos + 1..len {
            for a in 0..d {
                table.set(i, t, a, last[a].expect("at least one reading"));
            }
        }
    }
    Ok(table)
}

/// One instance: `n` series x `T` steps x `D` attributes.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiSeriesWindow {
    pub n: usize,
    pub len: usize,
    pub d: usize,
    /// Indexed `[series][step][attr]`.
    pub values: Vec<f64>,
    /// Global step index of the first step.
    pub start_index: usize,
    pub entity_ids: Arc<[String]>,
}

impl MultiSeriesWindow {
    pub fn new(n: usize, len: usize, d: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * len * d {
            return Err(Error::Shape(format!(
                "window ({n}, {len}, {d}) needs {} values, got {}",
                n * len * d,
                values.len()
            )));
        }
        let ids: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
        Ok(MultiSeriesWindow { n, len, d, values, start_index: 0, entity_ids: ids.into() })
    }

    pub fn idx(&self, i: usize, t: usize, a: usize) -> usize {
        (i * self.len + t) * self.d + a
    }

    pub fn get(&self, i: usize, t: usize, a: usize) -> f64 {
        self.values[self.idx(i, t, a)]
    }

    pub fn set(&mut self, i: usize, t: usize, a: usize, v: f64) {
        let k = self.idx(i, t, a);
        self.values[k] = v;
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.n, self.len, self.d)
    }

    /// Values of series `i`, `[step][attr]`.
    pub fn series(&self, i: usize) -> &[f64] {
        &self.values[i * self.len * self.d..(i + 1) * self.len * self.d]
    }

    pub fn series_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.len * self.d;
        &mut self.values[i * w..(i + 1) * w]
    }
}

/// Windows of length `t_len` every `stride` steps: `floor((L - T) / stride) + 1`
/// of them, window `k` starting at step `k * stride`.
pub fn make_windows(series: &SeriesTable, t_len: usize, stride: usize) -> Result<Vec<MultiSeriesWindow>> {
    if t_len == 0 || stride == 0 {
        return Err(Error::Config("window length and stride must be positive".into()));
    }
    if series.len < t_len {
        return Err(Error::Data(format!("series length {} is shorter than window {t_len}", series.len)));
    }
    let count = (series.len - t_len) / stride + 1;
    let (n, d) = (series.n, series.d);
    Ok((0..count)
        .map(|k| {
            let s = k * stride;
            let mut values = Vec::with_capacity(n * t_len * d);
            for i in 0..n {
                let a = series.idx(i, s, 0);
                values.extend_from_slice(&series.values[a..a + t_len * d]);
            }
            MultiSeriesWindow {
                n,
                len: t_len,
                d,
                values,
                start_index: series.offset + s,
                entity_ids: series.entity_ids.clone(),
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

/// Per entity-attribute mean and standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    /// Indexed `[entity * D + attr]`.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Attributes whose standard deviation was floored.
    pub floored: Vec<bool>,
    /// Which split the statistics were computed from.
    pub source: SplitName,
}

pub const STD_FLOOR: f64 = 1e-6;

impl NormStats {
    /// Statistics over the distinct time steps covered by `windows`.
    pub fn fit(windows: &[MultiSeriesWindow], source: SplitName) -> Result<Self> {
        let first = windows.first().ok_or_else(|| Error::Data("no windows to fit statistics on".into()))?;
        let (n, t_len, d) = first.shape();
        let mut seen = HashSet::new();
        let mut sum = vec![0.0; n * d];
        let mut count = 0usize;
        let mut cols: Vec<(usize, usize)> = Vec::new();
        for (w_idx, w) in windows.iter().enumerate() {
            if w.shape() != (n, t_len, d) {
                return Err(Error::Shape("windows of mixed shape".into()));
            }
            for t in 0..t_len {
                if seen.insert(w.start_index + t) {
                    cols.push((w_idx, t));
                    count += 1;
                    for i in 0..n {
                        for a in 0..d {
                            sum[i * d + a] += w.get(i, t, a);
                        }
                    }
                }
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut ss = vec![0.0; n * d];
        for &(w_idx, t) in &cols {
            let w = &windows[w_idx];
            for i in 0..n {
                for a in 0..d {
                    let dv = w.get(i, t, a) - mean[i * d + a];
                    ss[i * d + a] += dv * dv;
                }
            }
        }
        let raw: Vec<f64> = ss.iter().map(|s| (s / count as f64).sqrt()).collect();
        let floored: Vec<bool> = raw.iter().map(|&s| s < STD_FLOOR).collect();
        let std = raw.iter().map(|&s| s.max(STD_FLOOR)).collect();
        Ok(NormStats { mean, std, floored, source })
    }

    pub fn apply(&self, w: &mut MultiSeriesWindow) {
        let d = w.d;
        for i in 0..w.n {
            for t in 0..w.len {
                for a in 0..d {
                    let k = i * d + a;
                    let v = (w.get(i, t, a) - self.mean[k]) / self.std[k];
                    w.set(i, t, a, v);
                }
            }
        }
    }
}

/// Window-construction parameters for a chronological split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub window_len: usize,
    pub train_stride: usize,
    pub val_stride: usize,
    pub test_stride: usize,
    /// Train and validation fractions; the test split takes the rest.
    pub train_frac: f64,
    pub val_frac: f64,
}

impl SplitConfig {
    pub fn new(window_len: usize) -> Self {
        SplitConfig { window_len, train_stride: window_len, val_stride: window_len, test_stride: 1, train_frac: 0.6, val_frac: 0.2 }
    }
}

/// Chronological train/validation/test windows.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<MultiSeriesWindow>,
    pub validation: Vec<MultiSeriesWindow>,
    pub test: Vec<MultiSeriesWindow>,
    pub stats: Option<NormStats>,
}

impl DatasetSplit {
    /// Cuts the series into contiguous train/validation/test segments and
    /// windows each with its own stride.
    pub fn chronological(series: &SeriesTable, cfg: &SplitConfig) -> Result<Self> {
        let ok = |f: f64| (0.0..=1.0).contains(&f);
        if !ok(cfg.train_frac) || !ok(cfg.val_frac) || cfg.train_frac + cfg.val_frac > 1.0 {
            return Err(Error::Config("split fractions must lie in [0, 1] and sum to at most 1".into()));
        }
        let l = series.len;
        let a = (l as f64 * cfg.train_frac).round() as usize;
        let b = (l as f64 * (cfg.train_frac + cfg.val_frac)).round() as usize;
        let t = cfg.window_len;
        let part = |s: usize, e: usize, stride: usize| -> Result<Vec<MultiSeriesWindow>> {
            if e - s < t {
                return Ok(Vec::new());
            }
            make_windows(&series.segment(s, e)?, t, stride)
        };
        let train = part(0, a, cfg.train_stride)?;
        if train.is_empty() {
            return Err(Error::Data(format!("train segment of {a} steps holds no window of length {t}")));
        }
        Ok(DatasetSplit {
            train,
            validation: part(a, b, cfg.val_stride)?,
            test: part(b, l, cfg.test_stride)?,
            stats: None,
        })
    }

    /// Z-scores every split with statistics fitted on the train windows only.
    pub fn normalize(mut self) -> Result<Self> {
        let stats = NormStats::fit(&self.train, SplitName::Train)?;
        for w in self.train.iter_mut().chain(&mut self.validation).chain(&mut self.test) {
            stats.apply(w);
        }
        self.stats = Some(stats);
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn two_entity_csv(skip: Option<(usize, &str)>) -> String {
        let mut s = String::from("timestamp,entity,attr_1\n");
        for t in 0..10 {
            for e in ["a", "b"] {
                if skip == Some((t, e)) {
                    continue;
                }
                s.push_str(&format!("{t},{e},{}\n", t as f64 + if e == "b" { 100.0 } else { 0.0 }));
            }
        }
        s
    }

    fn table(len: usize) -> SeriesTable {
        let mut t = SeriesTable::zeros(vec!["x".into(), "y".into()], len, 1);
        for s in 0..len {
            t.set(0, s, 0, s as f64);
            t.set(1, s, 0, -(s as f64));
        }
        t
    }

    #[test]
    fn csv_shape_contract() {
        let f = write(&two_entity_csv(None));
        let t = load_csv(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(t.shape(), (2, 10, 1));
        assert_eq!(&*t.entity_ids, &["a".to_string(), "b".to_string()]);
        assert_eq!(t.get(1, 3, 0), 103.0);
    }

    #[test]
    fn missing_row_is_forward_filled() {
        let f = write(&two_entity_csv(Some((4, "b"))));
        let schema = CsvSchema { max_gap: 2, ..CsvSchema::default() };
        let t = load_csv(f.path(), &schema).unwrap();
        assert_eq!(t.get(1, 4, 0), t.get(1, 3, 0));
        assert_eq!(t.get(1, 5, 0), 105.0);
    }

    #[test]
    fn gap_beyond_limit_errors() {
        let mut s = String::from("timestamp,entity,attr_1\n");
        for t in [0, 1, 2, 6, 7] {
            s.push_str(&format!("{t},a,1.0\n"));
        }
        let f = write(&s);
        let schema = CsvSchema { max_gap: 2, ..CsvSchema::default() };
        let err = load_csv(f.path(), &schema).unwrap_err().to_string();
        assert!(err.contains("gap of 3"), "{err}");
    }

    #[test]
    fn shuffled_timestamps_name_the_entity() {
        let f = write("timestamp,entity,attr_1\n0,a,1\n0,b,1\n2,b,1\n1,b,1\n1,a,1\n2,a,1\n");
        let err = load_csv(f.path(), &CsvSchema::default()).unwrap_err().to_string();
        assert!(err.contains("non-monotone") && err.contains("`b`"), "{err}");
    }

    #[test]
    fn header_must_match_exactly() {
        let f = write("time,entity,attr_1\n0,a,1\n");
        assert!(load_csv(f.path(), &CsvSchema::default()).is_err());
        let f = write("timestamp,entity,attr_2\n0,a,1\n");
        assert!(load_csv(f.path(), &CsvSchema::default()).is_err());
    }

    #[test]
    fn entity_count_mismatch() {
        let f = write(&two_entity_csv(None));
        let schema = CsvSchema { entities: Some(3), ..CsvSchema::default() };
        assert!(load_csv(f.path(), &schema).unwrap_err().to_string().contains("expected 3 entities"));
    }

    #[test]
    fn csv_roundtrip() {
        let t = table(7);
        let f = tempfile::NamedTempFile::new().unwrap();
        t.write_csv(f.path()).unwrap();
        let back = load_csv(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(back.values, t.values);
    }

    #[test]
    fn window_counts() {
        let t = table(10);
        let w = make_windows(&t, 5, 5).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!((w[0].start_index, w[1].start_index), (0, 5));
        assert_eq!(make_windows(&t, 5, 1).unwrap().len(), 6);
        assert!(make_windows(&t, 11, 1).is_err());
    }

    #[test]
    fn disjoint_windows_reconstruct_series() {
        let t = table(12);
        let w = make_windows(&t, 4, 4).unwrap();
        for i in 0..2 {
            let joined: Vec<f64> = w.iter().flat_map(|w| w.series(i).to_vec()).collect();
            let a = t.idx(i, 0, 0);
            assert_eq!(joined, t.values[a..a + 12]);
        }
    }

    #[test]
    fn constant_attribute_is_flagged() {
        let mut t = table(10);
        for s in 0..10 {
            t.set(1, s, 0, 3.0);
        }
        let w = make_windows(&t, 5, 5).unwrap();
        let stats = NormStats::fit(&w, SplitName::Train).unwrap();
        assert_eq!(stats.floored, vec![false, true]);
        let mut w0 = w[0].clone();
        stats.apply(&mut w0);
        assert!(w0.series(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_stats_are_identity() {
        let t = table(6);
        let mut w = make_windows(&t, 3, 3).unwrap().remove(0);
        let before = w.clone();
        let stats = NormStats {
            mean: vec![0.0, 0.0],
            std: vec![1.0, 1.0],
            floored: vec![false, false],
            source: SplitName::Train,
        };
        stats.apply(&mut w);
        assert_eq!(w, before);
    }

    #[test]
    fn chronological_split_uses_train_statistics() {
        let t = table(100);
        let split = DatasetSplit::chronological(&t, &SplitConfig::new(10)).unwrap().normalize().unwrap();
        assert_eq!(split.train.len(), 6);
        let last_train = split.train.iter().map(|w| w.start_index + w.len).max().unwrap();
        assert!(split.test.iter().all(|w| w.start_index >= last_train));
        let stats = split.stats.as_ref().unwrap();
        assert_eq!(stats.source, SplitName::Train);
        // train covers steps 0..60, so entity 0 has mean 29.5
        assert!((stats.mean[0] - 29.5).abs() < 1e-12);
        for i in 0..2 {
            let vals: Vec<f64> = split.train.iter().flat_map(|w| w.series(i).to_vec()).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let sd = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
            assert!(m.abs() < 1e-10);
            assert!((sd - 1.0).abs() < 1e-10);
        }
    }
}
