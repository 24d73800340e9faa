//! Dataset ingestion (CSV / libsvm), standardization, stratified k-fold
//! splitting and persistence of experiment results.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::Dataset;
use crate::error::{Error, Result};

/// Loads an RFC-4180 CSV file with a header row. The label column is mapped
/// onto {+1, -1} with `positive_label` becoming +1; the remaining columns are
/// parsed as real features.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str, positive_label: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::InvalidConfig(format!("label column '{label_column}' not found")))?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != label_idx)
        .map(|(_, h)| h.to_string())
        .collect();

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut raw_labels: Vec<String> = Vec::new();
    for (line0, record) in reader.records().enumerate() {
        let line = line0 + 2; // 1-based, after the header
        let record = record.map_err(csv_err)?;
        let mut row = Vec::with_capacity(headers.len().saturating_sub(1));
        for (field, value) in record.iter().enumerate() {
            if field == label_idx {
                raw_labels.push(value.to_string());
                continue;
            }
            if value.is_empty() {
                return Err(Error::MissingValue { line, field });
            }
            let parsed: f64 = value.parse().map_err(|_| Error::Parse {
                line,
                field,
                msg: format!("'{value}' is not a number"),
            })?;
            row.push(parsed);
        }
        if row.len() + 1 != headers.len() {
            return Err(Error::Parse {
                line,
                field: row.len(),
                msg: "wrong number of fields".into(),
            });
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }

    let mut distinct: BTreeMap<&str, usize> = BTreeMap::new();
    for l in &raw_labels {
        *distinct.entry(l.as_str()).or_insert(0) += 1;
    }
    if distinct.len() != 2 {
        return Err(Error::NotBinary {
            found: distinct.len(),
        });
    }
    if !distinct.contains_key(positive_label) {
        return Err(Error::InvalidConfig(format!(
            "positive label '{positive_label}' does not occur in column '{label_column}'"
        )));
    }

    let m = rows.len();
    let n = rows[0].len();
    let x = DMatrix::from_fn(m, n, |i, j| rows[i][j]);
    let y = DVector::from_fn(m, |i, _| {
        if raw_labels[i] == positive_label {
            1.0
        } else {
            -1.0
        }
    });
    Dataset::new(x, y, Some(feature_names), path.display().to_string())
}

fn csv_err(e: csv::Error) -> Error {
    let line = e
        .position()
        .map(|p| p.line() as usize)
        .unwrap_or_default();
    Error::Parse {
        line,
        field: 0,
        msg: e.to_string(),
    }
}

/// Loads a libsvm/svmlight file: `<label> <idx>:<value> ...` with 1-based
/// sparse indices. Width is the maximum index seen, or `n_hint` when given;
/// absent entries are zero.
pub fn load_libsvm(path: impl AsRef<Path>, n_hint: Option<usize>) -> Result<Dataset> {
    let path = path.as_ref();
    let content = std::fs::read_to_string(path)?;
    let mut samples: Vec<(f64, Vec<(usize, f64)>)> = Vec::new();
    let mut max_idx = 0usize;
    for (line0, raw) in content.lines().enumerate() {
        let line = line0 + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut parts = trimmed.split_whitespace();
        let label_tok = parts.next().expect("non-empty line has a first token");
        let label: f64 = match label_tok {
            "+1" | "1" => 1.0,
            "-1" => -1.0,
            "0" => -1.0,
            other => other.parse().map_err(|_| Error::Parse {
                line,
                field: 0,
                msg: format!("'{other}' is not a label"),
            })?,
        };
        let label = if label > 0.0 { 1.0 } else { -1.0 };
        let mut entries = Vec::new();
        for (field0, tok) in parts.enumerate() {
            let field = field0 + 1;
            let (idx_s, val_s) = tok.split_once(':').ok_or_else(|| Error::Parse {
                line,
                field,
                msg: format!("'{tok}' is not idx:value"),
            })?;
            let idx: usize = idx_s.parse().map_err(|_| Error::Parse {
                line,
                field,
                msg: format!("'{idx_s}' is not an index"),
            })?;
            if idx == 0 {
                return Err(Error::Parse {
                    line,
                    field,
                    msg: "indices are 1-based".into(),
                });
            }
            let val: f64 = val_s.parse().map_err(|_| Error::Parse {
                line,
                field,
                msg: format!("'{val_s}' is not a number"),
            })?;
            if let Some(hint) = n_hint {
                if idx > hint {
                    return Err(Error::IndexOutOfRange {
                        index: idx,
                        bound: hint,
                    });
                }
            }
            max_idx = max_idx.max(idx);
            entries.push((idx - 1, val));
        }
        samples.push((label, entries));
    }
    if samples.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let n = n_hint.unwrap_or(max_idx);
    if n == 0 {
        return Err(Error::InvalidConfig("no feature indices seen".into()));
    }
    let m = samples.len();
    let mut x = DMatrix::zeros(m, n);
    let mut y = DVector::zeros(m);
    for (i, (label, entries)) in samples.iter().enumerate() {
        y[i] = *label;
        for &(j, v) in entries {
            x[(i, j)] = v;
        }
    }
    Dataset::new(x, y, None, path.display().to_string())
}

/// The affine map produced by standardization, replayable on held-out data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingRecord {
    pub means: Vec<f64>,
    /// Population standard deviations; 1.0 is stored for constant columns.
    pub sds: Vec<f64>,
    pub constant_columns: Vec<bool>,
}

impl ScalingRecord {
    /// Applies the identical affine map to another matrix of the same width.
    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.means.len() {
            return Err(Error::Dimension {
                what: "scaling record",
                expected: self.means.len(),
                got: x.ncols(),
            });
        }
        let mut out = x.clone();
        for j in 0..out.ncols() {
            for i in 0..out.nrows() {
                out[(i, j)] = if self.constant_columns[j] {
                    0.0
                } else {
                    (x[(i, j)] - self.means[j]) / self.sds[j]
                };
            }
        }
        Ok(out)
    }
}

/// Centers each column to mean zero and scales to unit population standard
/// deviation. Constant columns map to all-zeros and are flagged: they can
/// never be selected.
pub fn standardize(data: &Dataset) -> Result<(Dataset, ScalingRecord)> {
    let m = data.m();
    if m < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: m });
    }
    let n = data.n();
    let mut means = vec![0.0; n];
    let mut sds = vec![1.0; n];
    let mut constant = vec![false; n];
    for j in 0..n {
        let col = data.x().column(j);
        let mean = col.sum() / m as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m as f64;
        means[j] = mean;
        if var <= 1e-24 {
            constant[j] = true;
        } else {
            sds[j] = var.sqrt();
        }
    }
    let record = ScalingRecord {
        means,
        sds,
        constant_columns: constant,
    };
    let x = record.apply(data.x())?;
    let standardized = Dataset::new(
        x,
        data.y().clone(),
        data.feature_names().map(|ns| ns.to_vec()),
        format!("{} [standardized]", data.provenance()),
    )?;
    Ok((standardized, record))
}

/// A deterministic assignment of samples to k folds.
#[derive(Debug, Clone)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub seed: u64,
    pub stratified: bool,
}

impl FoldPlan {
    /// Train/validation index split for one fold.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut val = Vec::new();
        for (i, &f) in self.assignments.iter().enumerate() {
            if f == fold {
                val.push(i);
            } else {
                train.push(i);
            }
        }
        (train, val)
    }
}

/// Stratified k-fold plan: within each class, indices are shuffled with the
/// seeded generator and dealt round-robin, so per-fold class counts differ by
/// at most one sample from the even split.
pub fn stratified_folds(data: &Dataset, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("k must be >= 2, got {k}")));
    }
    let (pos, neg) = data.class_counts();
    if k > pos.min(neg) {
        return Err(Error::TooFewSamples {
            needed: k,
            got: pos.min(neg),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = vec![0usize; data.m()];
    for class in [1.0, -1.0] {
        let mut idx: Vec<usize> = (0..data.m())
            .filter(|&i| data.y()[i] == class)
            .collect();
        idx.shuffle(&mut rng);
        for (pos_in_class, &i) in idx.iter().enumerate() {
            assignments[i] = pos_in_class % k;
        }
    }
    Ok(FoldPlan {
        k,
        assignments,
        seed,
        stratified: true,
    })
}

/// One persisted solve outcome; mirrors the summary tables the suite emits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultRecord {
    pub dataset: String,
    pub method: String,
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "B")]
    pub budget: usize,
    #[serde(rename = "M")]
    pub big_m: Option<f64>,
    pub obj: Option<f64>,
    pub lb: Option<f64>,
    pub ub: Option<f64>,
    pub gap: Option<f64>,
    pub time_s: f64,
    pub features: Vec<usize>,
    pub acc_train: Option<f64>,
    pub acc_val: Option<f64>,
    pub schema: u32,
}

impl ResultRecord {
    pub fn new(dataset: impl Into<String>, method: impl Into<String>, c: f64, budget: usize) -> Self {
        Self {
            dataset: dataset.into(),
            method: method.into(),
            c,
            budget,
            big_m: None,
            obj: None,
            lb: None,
            ub: None,
            gap: None,
            time_s: 0.0,
            features: Vec::new(),
            acc_train: None,
            acc_val: None,
            schema: 1,
        }
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(file, self)
            .map_err(|e| Error::InvalidConfig(format!("json write failed: {e}")))?;
        Ok(())
    }

    /// Appends one line to a CSV summary, writing the header on first use.
    pub fn append_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let fresh = !path.exists();
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        if fresh {
            writeln!(
                file,
                "dataset,method,C,B,M,obj,lb,ub,gap,time_s,features,acc_train,acc_val,schema"
            )?;
        }
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.10e}")).unwrap_or_default();
        writeln!(
            file,
            "{},{},{},{},{},{},{},{},{},{:.3},{},{},{},{}",
            self.dataset,
            self.method,
            self.c,
            self.budget,
            fmt(self.big_m),
            fmt(self.obj),
            fmt(self.lb),
            fmt(self.ub),
            fmt(self.gap),
            self.time_s,
            self.features
                .iter()
                .map(|f| f.to_string())
                .collect::<Vec<_>>()
                .join(";"),
            fmt(self.acc_train),
            fmt(self.acc_val),
            self.schema,
        )?;
        Ok(())
    }
}

/// Deterministic synthetic classification data used by the test harness and
/// demos: a planted sparse hyperplane with label noise, both classes
/// guaranteed present.
pub fn synth_dataset(m: usize, n: usize, seed: u64) -> Dataset {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let planted: Vec<f64> = (0..n)
        .map(|j| {
            if j < (n / 2).max(1) {
                rng.gen_range(0.5..1.5) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 }
            } else {
                0.0
            }
        })
        .collect();
    loop {
        let x = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
        let mut y = DVector::zeros(m);
        for i in 0..m {
            let score: f64 = (0..n).map(|j| planted[j] * x[(i, j)]).sum();
            let noisy = score + rng.gen_range(-0.3..0.3);
            y[i] = if noisy >= 0.0 { 1.0 } else { -1.0 };
        }
        let pos = y.iter().filter(|&&v| v == 1.0).count();
        if pos == 0 || pos == m {
            continue; // resample until both classes appear
        }
        let data = Dataset::new(x, y, None, format!("synth(m={m},n={n},seed={seed})")).unwrap();
        let (standardized, _) = standardize(&data).unwrap();
        return standardized;
    }
}

/// Writes a dataset as CSV with a `cls` label column (`pos`/`neg`).
pub fn write_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    let names: Vec<String> = match data.feature_names() {
        Some(ns) => ns.to_vec(),
        None => (0..data.n()).map(|j| format!("f{j}")).collect(),
    };
    writeln!(file, "{},cls", names.join(","))?;
    for i in 0..data.m() {
        let row: Vec<String> = (0..data.n())
            .map(|j| format!("{:.12e}", data.x()[(i, j)]))
            .collect();
        let label = if data.y()[i] > 0.0 { "pos" } else { "neg" };
        writeln!(file, "{},{}", row.join(","), label)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write as _;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_two_rows() {
        let f = write_temp("f1,f2,cls\n1,0,A\n-1,0,B\n");
        let data = load_csv(f.path(), "cls", "A").unwrap();
        assert_eq!(data.m(), 2);
        assert_eq!(data.n(), 2);
        assert_eq!(data.x()[(0, 0)], 1.0);
        assert_eq!(data.x()[(1, 0)], -1.0);
        assert_eq!(data.y()[0], 1.0);
        assert_eq!(data.y()[1], -1.0);
        assert_eq!(data.feature_names().unwrap(), &["f1", "f2"]);
    }

    #[test]
    fn csv_three_label_values_rejected() {
        let f = write_temp("f1,cls\n1,A\n2,B\n3,C\n");
        let err = load_csv(f.path(), "cls", "A").unwrap_err();
        assert!(matches!(err, Error::NotBinary { found: 3 }));
    }

    #[test]
    fn csv_missing_value() {
        let f = write_temp("f1,f2,cls\n1,,A\n-1,0,B\n");
        let err = load_csv(f.path(), "cls", "A").unwrap_err();
        assert!(matches!(err, Error::MissingValue { line: 2, .. }));
    }

    #[test]
    fn libsvm_examples() {
        let f = write_temp("+1 1:1\n-1 1:-1\n");
        let data = load_libsvm(f.path(), None).unwrap();
        assert_eq!((data.m(), data.n()), (2, 1));
        assert_eq!(data.x()[(0, 0)], 1.0);

        let f = write_temp("+1 3:2\n");
        let err = load_libsvm(f.path(), Some(2)).unwrap_err();
        assert!(matches!(err, Error::IndexOutOfRange { index: 3, bound: 2 }));

        // width from hint, missing entries zero; single label line is fine at
        // the parse level (Dataset::new then rejects the single class)
        let f = write_temp("-1 2:0.5\n+1 1:1\n");
        let data = load_libsvm(f.path(), None).unwrap();
        assert_eq!(data.y()[0], -1.0);
        assert_eq!(data.x()[(0, 0)], 0.0);
        assert_eq!(data.x()[(0, 1)], 0.5);
    }

    #[test]
    fn standardize_examples() {
        let data = Dataset::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 5.0, -1.0, 5.0]),
            DVector::from_vec(vec![1.0, -1.0]),
            None,
            "t",
        )
        .unwrap();
        let (std_data, record) = standardize(&data).unwrap();
        // column (1, -1): mean 0, population sd 1 -> unchanged
        assert!((std_data.x()[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((std_data.x()[(1, 0)] + 1.0).abs() < 1e-15);
        // constant column -> zeros + flag
        assert_eq!(std_data.x()[(0, 1)], 0.0);
        assert!(record.constant_columns[1]);
        // replay is bit-for-bit
        let replayed = record.apply(data.x()).unwrap();
        assert_eq!(replayed, *std_data.x());
    }

    #[test]
    fn folds_balanced_ten() {
        let x = DMatrix::from_fn(10, 1, |i, _| i as f64);
        let y = DVector::from_fn(10, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 });
        let data = Dataset::new(x, y, None, "t").unwrap();
        let plan = stratified_folds(&data, 5, 7).unwrap();
        let mut counts = vec![0usize; 5];
        for &f in &plan.assignments {
            counts[f] += 1;
        }
        assert!(counts.iter().all(|&c| c == 2));
        // determinism
        let plan2 = stratified_folds(&data, 5, 7).unwrap();
        assert_eq!(plan.assignments, plan2.assignments);
    }

    #[test]
    fn folds_respect_stratification() {
        let m = 100;
        let x = DMatrix::from_fn(m, 2, |i, j| (i * 31 + j * 17 % 13) as f64);
        let y = DVector::from_fn(m, |i, _| if i < 65 { 1.0 } else { -1.0 });
        let data = Dataset::new(x, y, None, "t").unwrap();
        let plan = stratified_folds(&data, 10, 3).unwrap();
        for fold in 0..10 {
            let (_, val) = plan.split(fold);
            let pos = val.iter().filter(|&&i| data.y()[i] == 1.0).count();
            let neg = val.len() - pos;
            assert!((6..=7).contains(&pos), "fold {fold}: {pos} positives");
            assert!((3..=4).contains(&neg), "fold {fold}: {neg} negatives");
        }
    }

    #[test]
    fn fold_too_few_samples() {
        let x = DMatrix::from_fn(4, 1, |i, _| i as f64);
        let y = DVector::from_vec(vec![1.0, 1.0, 1.0, -1.0]);
        let data = Dataset::new(x, y, None, "t").unwrap();
        assert!(matches!(
            stratified_folds(&data, 2, 0),
            Err(Error::TooFewSamples { .. })
        ));
    }

    #[test]
    fn record_json_fields() {
        let mut rec = ResultRecord::new("demo", "cop", 1.0, 2);
        rec.obj = Some(0.5);
        let json = serde_json::to_value(&rec).unwrap();
        for key in [
            "dataset", "method", "C", "B", "M", "obj", "lb", "ub", "gap", "time_s", "features",
            "acc_train", "acc_val", "schema",
        ] {
            assert!(json.get(key).is_some(), "missing key {key}");
        }
        assert_eq!(json["schema"], 1);
    }

    proptest! {
        #[test]
        fn folds_partition_everything(m_half in 3usize..20, k in 2usize..4, seed in 0u64..50) {
            let m = 2 * m_half;
            let x = DMatrix::from_fn(m, 1, |i, _| i as f64);
            let y = DVector::from_fn(m, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 });
            let data = Dataset::new(x, y, None, "t").unwrap();
            prop_assume!(k <= m_half);
            let plan = stratified_folds(&data, k, seed).unwrap();
            let mut seen = vec![false; m];
            for fold in 0..k {
                let (train, val) = plan.split(fold);
                prop_assert!(!val.is_empty());
                prop_assert_eq!(train.len() + val.len(), m);
                for &i in &val {
                    prop_assert!(!seen[i]);
                    seen[i] = true;
                }
            }
            prop_assert!(seen.iter().all(|&s| s));
        }
    }
}
