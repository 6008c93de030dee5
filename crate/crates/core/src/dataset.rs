//! Tabular data loading, validation, standardization, group-wise splitting
//! and correlation-based candidate ranking.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone)]
pub struct Column {
    pub name: String,
    pub values: Vec<f64>,
    pub kind: ColumnKind,
}

/// Column-named feature matrix with a label vector and per-row group
/// (patient) ids. All columns have identical length and contain no
/// NaN/Inf values.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub columns: Vec<Column>,
    pub label_name: String,
    pub labels: Vec<f64>,
    pub group_ids: Vec<u64>,
}

/// Per-column standardization parameters, kept for the inverse transform
/// and for standardizing prediction inputs.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ScalingParams {
    pub per_column: BTreeMap<String, (f64, f64)>,
}

impl ScalingParams {
    pub fn get(&self, name: &str) -> Option<(f64, f64)> {
        self.per_column.get(name).copied()
    }
}

/// Candidate features for detection, ordered by descending |Pearson r|
/// with the target.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateSet {
    pub features: Vec<String>,
    pub correlations: Vec<f64>,
}

/// Guard on the exhaustive subset search: at most 2^8 - 1 fits.
pub const MAX_CANDIDATES: usize = 8;

impl Dataset {
    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if n == 0 {
            return Err(Error::Data("dataset has no rows".into()));
        }
        if self.group_ids.len() != n {
            return Err(Error::Data("group id length mismatch".into()));
        }
        for c in &self.columns {
            if c.values.len() != n {
                return Err(Error::Data(format!("column '{}' length mismatch", c.name)));
            }
            if c.kind == ColumnKind::Binary && c.values.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::Data(format!(
                    "binary column '{}' contains values outside {{0, 1}}",
                    c.name
                )));
            }
        }
        Ok(())
    }
}

fn infer_kind(values: &[f64]) -> ColumnKind {
    if values.iter().all(|&v| v == 0.0 || v == 1.0) {
        ColumnKind::Binary
    } else {
        ColumnKind::Continuous
    }
}

/// Load an RFC-4180 style CSV with a mandatory header row. The named label
/// and group columns are removed from the feature set; binary columns are
/// inferred by their value set. Rows containing NaN/Inf are dropped and
/// counted.
pub fn load_csv(path: &Path, label_name: &str, group_name: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;

    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Data(format!("missing header row: {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.is_empty() {
        return Err(Error::Data("empty file".into()));
    }
    let label_idx = headers
        .iter()
        .position(|h| h == label_name)
        .ok_or_else(|| Error::Config(format!("label column '{label_name}' not found")))?;
    let group_idx = headers
        .iter()
        .position(|h| h == group_name)
        .ok_or_else(|| Error::Config(format!("group column '{group_name}' not found")))?;

    let mut raw: Vec<Vec<f64>> = vec![Vec::new(); headers.len()];
    let mut dropped = 0usize;
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Data(format!("malformed record: {e}")))?;
        if record.len() != headers.len() {
            return Err(Error::Data(format!(
                "row {} has {} fields, expected {}",
                row_idx + 1,
                record.len(),
                headers.len()
            )));
        }
        let mut row = Vec::with_capacity(headers.len());
        for (col_idx, cell) in record.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                row: row_idx + 1,
                col: headers[col_idx].clone(),
                msg: format!("non-numeric cell '{cell}'"),
            })?;
            row.push(v);
        }
        if row.iter().any(|v| !v.is_finite()) {
            dropped += 1;
            continue;
        }
        for (col_idx, v) in row.into_iter().enumerate() {
            raw[col_idx].push(v);
        }
    }
    if dropped > 0 {
        eprintln!("warning: dropped {dropped} rows containing NaN/Inf values");
    }
    if raw[label_idx].is_empty() {
        return Err(Error::Data("no data rows after filtering".into()));
    }

    let group_ids = raw[group_idx].iter().map(|&v| v as u64).collect();
    let labels = raw[label_idx].clone();
    let mut columns = Vec::new();
    for (idx, name) in headers.iter().enumerate() {
        if idx == label_idx || idx == group_idx {
            continue;
        }
        let values = std::mem::take(&mut raw[idx]);
        let kind = infer_kind(&values);
        columns.push(Column {
            name: name.clone(),
            values,
            kind,
        });
    }

    let d = Dataset {
        columns,
        label_name: label_name.to_string(),
        labels,
        group_ids,
    };
    d.validate()?;
    Ok(d)
}

/// Write a dataset back to CSV with features first, then label, then group
/// column. Values are emitted with full f64 round-trip precision so a write
/// followed by a load reproduces the dataset exactly.
pub fn write_csv(d: &Dataset, path: &Path, group_name: &str) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut header: Vec<&str> = d.columns.iter().map(|c| c.name.as_str()).collect();
    header.push(&d.label_name);
    header.push(group_name);
    writeln!(out, "{}", header.join(","))?;
    for i in 0..d.n_rows() {
        let mut fields: Vec<String> = d
            .columns
            .iter()
            .map(|c| format_number(c.values[i]))
            .collect();
        fields.push(format_number(d.labels[i]));
        fields.push(d.group_ids[i].to_string());
        writeln!(out, "{}", fields.join(","))?;
    }
    out.flush()?;
    Ok(())
}

fn format_number(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        // shortest representation that round-trips
        format!("{v}")
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (denominator n - 1).
pub fn sample_sd(values: &[f64]) -> f64 {
    let m = mean(values);
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// Standardize every continuous column to mean 0, sample sd 1. Binary
/// columns are left unchanged. Returns the transformed dataset together
/// with the per-column parameters needed to invert the transform.
pub fn standardize(d: &Dataset) -> Result<(Dataset, ScalingParams)> {
    let mut out = d.clone();
    let mut params = ScalingParams::default();
    for c in &mut out.columns {
        if c.kind == ColumnKind::Binary {
            continue;
        }
        let m = mean(&c.values);
        let sd = sample_sd(&c.values);
        if sd <= 0.0 {
            return Err(Error::DegenerateColumn(c.name.clone()));
        }
        for v in &mut c.values {
            *v = (*v - m) / sd;
        }
        params.per_column.insert(c.name.clone(), (m, sd));
    }
    Ok((out, params))
}

/// Apply previously computed scaling parameters to a dataset (used when
/// standardizing evaluation data with training-set parameters).
pub fn apply_scaling(d: &Dataset, params: &ScalingParams) -> Dataset {
    let mut out = d.clone();
    for c in &mut out.columns {
        if let Some((m, sd)) = params.get(&c.name) {
            for v in &mut c.values {
                *v = (*v - m) / sd;
            }
        }
    }
    out
}

/// Split rows into train/test partitions with disjoint group-id sets.
/// Groups are shuffled deterministically by seed and assigned to the test
/// partition until its row share reaches `test_fraction`.
pub fn split_by_group(d: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let mut groups: Vec<u64> = {
        let mut g = d.group_ids.clone();
        g.sort_unstable();
        g.dedup();
        g
    };
    if groups.len() < 2 {
        return Err(Error::Split(format!(
            "need at least 2 distinct groups, found {}",
            groups.len()
        )));
    }
    let mut rows_per_group: BTreeMap<u64, usize> = BTreeMap::new();
    for &g in &d.group_ids {
        *rows_per_group.entry(g).or_insert(0) += 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    groups.shuffle(&mut rng);

    let target = (d.n_rows() as f64 * test_fraction).round() as usize;
    let mut test_groups = std::collections::BTreeSet::new();
    let mut test_rows = 0usize;
    for &g in &groups {
        if test_rows >= target {
            break;
        }
        test_groups.insert(g);
        test_rows += rows_per_group[&g];
    }
    // never consume every group
    if test_groups.len() == groups.len() {
        let last = *groups.last().unwrap();
        test_groups.remove(&last);
    }

    let take = |want_test: bool| -> Dataset {
        let keep: Vec<usize> = (0..d.n_rows())
            .filter(|&i| test_groups.contains(&d.group_ids[i]) == want_test)
            .collect();
        Dataset {
            columns: d
                .columns
                .iter()
                .map(|c| Column {
                    name: c.name.clone(),
                    values: keep.iter().map(|&i| c.values[i]).collect(),
                    kind: c.kind,
                })
                .collect(),
            label_name: d.label_name.clone(),
            labels: keep.iter().map(|&i| d.labels[i]).collect(),
            group_ids: keep.iter().map(|&i| d.group_ids[i]).collect(),
        }
    };
    Ok((take(false), take(true)))
}

/// Pearson product-moment correlation. Zero-variance inputs yield 0.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = mean(x);
    let my = mean(y);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    (sxy / n) / ((sxx / n).sqrt() * (syy / n).sqrt())
}

/// Rank features by |Pearson r| against a target vector and keep the top m.
/// Zero-variance features get r = 0 with a warning and sink to the bottom.
pub fn pearson_rank(d: &Dataset, target: &[f64], m: usize) -> Result<CandidateSet> {
    if target.len() != d.n_rows() {
        return Err(Error::Data("target length does not match dataset rows".into()));
    }
    if m == 0 {
        return Err(Error::Config("candidate count m must be at least 1".into()));
    }
    let m = m.min(MAX_CANDIDATES);
    let mut scored: Vec<(String, f64)> = d
        .columns
        .iter()
        .map(|c| {
            let r = pearson(&c.values, target);
            if r == 0.0 && sample_sd(&c.values) == 0.0 {
                eprintln!("warning: feature '{}' has zero variance, r set to 0", c.name);
            }
            (c.name.clone(), r)
        })
        .collect();
    scored.sort_by(|a, b| {
        b.1.abs()
            .partial_cmp(&a.1.abs())
            .unwrap()
            .then_with(|| a.0.cmp(&b.0))
    });
    scored.truncate(m);
    Ok(CandidateSet {
        features: scored.iter().map(|(n, _)| n.clone()).collect(),
        correlations: scored.iter().map(|(_, r)| *r).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::io::Write as _;

    fn mini_dataset() -> Dataset {
        Dataset {
            columns: vec![
                Column {
                    name: "a".into(),
                    values: vec![1.0, 2.0, 3.0, 4.0],
                    kind: ColumnKind::Continuous,
                },
                Column {
                    name: "b".into(),
                    values: vec![0.0, 1.0, 1.0, 0.0],
                    kind: ColumnKind::Binary,
                },
            ],
            label_name: "y".into(),
            labels: vec![2.0, 4.0, 6.0, 8.1],
            group_ids: vec![1, 1, 2, 2],
        }
    }

    #[test]
    fn load_csv_infers_binary_kind() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "bili,infection,label,pid").unwrap();
        writeln!(f, "0.4,0,0,1").unwrap();
        writeln!(f, "2.3,1,2,1").unwrap();
        writeln!(f, "1.1,1,0,2").unwrap();
        let d = load_csv(f.path(), "label", "pid").unwrap();
        assert_eq!(d.columns.len(), 2);
        assert_eq!(d.n_rows(), 3);
        assert_eq!(d.column("infection").unwrap().kind, ColumnKind::Binary);
        assert_eq!(d.column("bili").unwrap().kind, ColumnKind::Continuous);
    }

    #[test]
    fn load_csv_reports_parse_location() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "x,label,pid").unwrap();
        writeln!(f, "1.0,0,1").unwrap();
        writeln!(f, "abc,1,1").unwrap();
        let err = load_csv(f.path(), "label", "pid").unwrap_err();
        match err {
            Error::Parse { row, col, .. } => {
                assert_eq!(row, 2);
                assert_eq!(col, "x");
            }
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn load_csv_missing_label_is_config_error() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "x,pid").unwrap();
        writeln!(f, "1.0,1").unwrap();
        assert!(matches!(
            load_csv(f.path(), "label", "pid").unwrap_err(),
            Error::Config(_)
        ));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let d = mini_dataset();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_csv(&d, f.path(), "pid").unwrap();
        let d2 = load_csv(f.path(), "y", "pid").unwrap();
        assert_eq!(d2.labels, d.labels);
        assert_eq!(d2.group_ids, d.group_ids);
        for (c, c2) in d.columns.iter().zip(&d2.columns) {
            assert_eq!(c.values, c2.values);
            assert_eq!(c.kind, c2.kind);
        }
    }

    #[test]
    fn standardize_z_scores() {
        let mut d = mini_dataset();
        d.columns[0].values = vec![1.0, 2.0, 3.0];
        d.labels = vec![0.0, 0.0, 0.0];
        d.group_ids = vec![1, 1, 2];
        d.columns[1].values = vec![0.0, 1.0, 1.0];
        let (s, params) = standardize(&d).unwrap();
        let a = &s.column("a").unwrap().values;
        assert_abs_diff_eq!(a[0], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a[2], 1.0, epsilon = 1e-12);
        assert_eq!(params.get("a").unwrap(), (2.0, 1.0));
        // binary column untouched, no params recorded
        assert_eq!(s.column("b").unwrap().values, vec![0.0, 1.0, 1.0]);
        assert!(params.get("b").is_none());
    }

    #[test]
    fn standardize_rejects_constant_column() {
        let mut d = mini_dataset();
        d.columns[0].values = vec![5.0, 5.0, 5.0, 5.0];
        match standardize(&d).unwrap_err() {
            Error::DegenerateColumn(name) => assert_eq!(name, "a"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn standardize_is_idempotent() {
        let d = mini_dataset();
        let (s1, _) = standardize(&d).unwrap();
        let (s2, _) = standardize(&s1).unwrap();
        for (c1, c2) in s1.columns.iter().zip(&s2.columns) {
            for (a, b) in c1.values.iter().zip(&c2.values) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn split_disjoint_and_deterministic() {
        // 40 groups x 5 rows
        let n_groups = 40;
        let mut d = mini_dataset();
        d.columns = vec![Column {
            name: "x".into(),
            values: (0..n_groups * 5).map(|i| i as f64).collect(),
            kind: ColumnKind::Continuous,
        }];
        d.labels = vec![0.0; n_groups * 5];
        d.group_ids = (0..n_groups as u64).flat_map(|g| [g; 5]).collect();

        let (train, test) = split_by_group(&d, 0.2, 7).unwrap();
        assert_eq!(train.n_rows() + test.n_rows(), d.n_rows());
        let tg: std::collections::BTreeSet<_> = train.group_ids.iter().collect();
        let eg: std::collections::BTreeSet<_> = test.group_ids.iter().collect();
        assert!(tg.is_disjoint(&eg));
        let share = test.n_rows() as f64 / d.n_rows() as f64;
        assert!((share - 0.2).abs() <= 0.05, "share {share}");

        let (train2, test2) = split_by_group(&d, 0.2, 7).unwrap();
        assert_eq!(train.group_ids, train2.group_ids);
        assert_eq!(test.group_ids, test2.group_ids);
    }

    #[test]
    fn split_single_group_fails() {
        let mut d = mini_dataset();
        d.group_ids = vec![3, 3, 3, 3];
        assert!(matches!(
            split_by_group(&d, 0.2, 0).unwrap_err(),
            Error::Split(_)
        ));
    }

    #[test]
    fn pearson_self_correlation() {
        let d = mini_dataset();
        let target = d.column("a").unwrap().values.clone();
        let cand = pearson_rank(&d, &target, 2).unwrap();
        assert_eq!(cand.features[0], "a");
        assert_abs_diff_eq!(cand.correlations[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn pearson_near_linear() {
        let r = pearson(&[1.0, 2.0, 3.0, 4.0], &[2.0, 4.0, 6.0, 8.1]);
        // oracle: direct product-moment formula
        assert!(r > 0.9995 && r < 1.0, "r = {r}");
    }

    #[test]
    fn pearson_zero_variance_is_zero() {
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), 0.0);
    }
}
