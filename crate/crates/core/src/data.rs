//! Observational data model: covariates `V`, surrogates `S`, a continuous
//! treatment `A`, and a primary outcome `Y` that is observed only on labeled
//! rows (`R = 1`).
//!
//! A [`Dataset`] is immutable once built. Covariates and surrogates are
//! stored together row-major as `X = (V, S)`, so `x(i)` hands out the full
//! row and `v(i)` its leading covariate block without copying.

use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    p: usize,
    q: usize,
    x: Vec<f64>,
    treatment: Vec<f64>,
    outcome: Vec<Option<f64>>,
    names: ColumnNames,
}

/// Column names carried along for CSV output.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnNames {
    pub covariates: Vec<String>,
    pub surrogates: Vec<String>,
    pub treatment: String,
    pub outcome: String,
}

impl ColumnNames {
    pub fn generic(p: usize, q: usize) -> Self {
        ColumnNames {
            covariates: (1..=p).map(|j| format!("V{j}")).collect(),
            surrogates: (1..=q).map(|j| format!("S{j}")).collect(),
            treatment: "A".into(),
            outcome: "Y".into(),
        }
    }
}

impl Dataset {
    /// Builds a dataset from row-major covariate (`n x p`) and surrogate
    /// (`n x q`) blocks. A row is labeled exactly when its outcome is `Some`.
    pub fn from_parts(
        covariates: &[f64],
        p: usize,
        surrogates: &[f64],
        q: usize,
        treatment: Vec<f64>,
        outcome: Vec<Option<f64>>,
    ) -> Result<Self> {
        let n = treatment.len();
        if outcome.len() != n {
            return Err(Error::Size(format!(
                "outcome has {} rows but treatment has {n}",
                outcome.len()
            )));
        }
        if covariates.len() != n * p {
            return Err(Error::Size(format!(
                "covariate block has {} values, expected {n} x {p}",
                covariates.len()
            )));
        }
        if surrogates.len() != n * q {
            return Err(Error::Size(format!(
                "surrogate block has {} values, expected {n} x {q}",
                surrogates.len()
            )));
        }
        let width = p + q;
        let mut x = Vec::with_capacity(n * width);
        for i in 0..n {
            x.extend_from_slice(&covariates[i * p..(i + 1) * p]);
            x.extend_from_slice(&surrogates[i * q..(i + 1) * q]);
        }
        let data = Dataset {
            n,
            p,
            q,
            x,
            treatment,
            outcome,
            names: ColumnNames::generic(p, q),
        };
        data.check_finite()?;
        Ok(data)
    }

    pub fn with_names(mut self, names: ColumnNames) -> Result<Self> {
        if names.covariates.len() != self.p || names.surrogates.len() != self.q {
            return Err(Error::Schema(
                "column name lists do not match data dimensions".into(),
            ));
        }
        self.names = names;
        Ok(self)
    }

    fn check_finite(&self) -> Result<()> {
        for i in 0..self.n {
            let bad = !self.treatment[i].is_finite()
                || self.x(i).iter().any(|v| !v.is_finite())
                || self.outcome[i].is_some_and(|y| !y.is_finite());
            if bad {
                return Err(Error::Consistency {
                    row: i,
                    message: "non-finite value".into(),
                });
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of covariates `V`.
    pub fn p(&self) -> usize {
        self.p
    }

    /// Number of surrogates `S`.
    pub fn q(&self) -> usize {
        self.q
    }

    pub fn names(&self) -> &ColumnNames {
        &self.names
    }

    /// Full row `X_i = (V_i, S_i)`.
    #[inline]
    pub fn x(&self, i: usize) -> &[f64] {
        let w = self.p + self.q;
        &self.x[i * w..(i + 1) * w]
    }

    #[inline]
    pub fn v(&self, i: usize) -> &[f64] {
        let w = self.p + self.q;
        &self.x[i * w..i * w + self.p]
    }

    #[inline]
    pub fn s(&self, i: usize) -> &[f64] {
        let w = self.p + self.q;
        &self.x[i * w + self.p..(i + 1) * w]
    }

    #[inline]
    pub fn a(&self, i: usize) -> f64 {
        self.treatment[i]
    }

    #[inline]
    pub fn y(&self, i: usize) -> Option<f64> {
        self.outcome[i]
    }

    #[inline]
    pub fn is_labeled(&self, i: usize) -> bool {
        self.outcome[i].is_some()
    }

    pub fn treatments(&self) -> &[f64] {
        &self.treatment
    }

    pub fn n_labeled(&self) -> usize {
        self.outcome.iter().filter(|y| y.is_some()).count()
    }

    pub fn labeled_rows(&self) -> Vec<usize> {
        (0..self.n).filter(|&i| self.is_labeled(i)).collect()
    }

    /// `(min, max)` of the treatment, `None` for an empty dataset.
    pub fn treatment_range(&self) -> Option<(f64, f64)> {
        let mut it = self.treatment.iter().copied();
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), a| (lo.min(a), hi.max(a))))
    }

    /// New dataset holding the given rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let w = self.p + self.q;
        let mut x = Vec::with_capacity(rows.len() * w);
        for &i in rows {
            x.extend_from_slice(self.x(i));
        }
        Dataset {
            n: rows.len(),
            p: self.p,
            q: self.q,
            x,
            treatment: rows.iter().map(|&i| self.treatment[i]).collect(),
            outcome: rows.iter().map(|&i| self.outcome[i]).collect(),
            names: self.names.clone(),
        }
    }

    /// Same rows with surrogates removed (`X = V`).
    pub fn without_surrogates(&self) -> Dataset {
        let mut x = Vec::with_capacity(self.n * self.p);
        for i in 0..self.n {
            x.extend_from_slice(self.v(i));
        }
        let mut names = self.names.clone();
        names.surrogates.clear();
        Dataset {
            n: self.n,
            p: self.p,
            q: 0,
            x,
            treatment: self.treatment.clone(),
            outcome: self.outcome.clone(),
            names,
        }
    }
}

/// Which CSV columns play which role.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CsvSchema {
    pub treatment: String,
    pub outcome: String,
    pub covariates: Vec<String>,
    pub surrogates: Vec<String>,
    /// Optional explicit label column (0/1). Absent: inferred from missing `Y`.
    pub label: Option<String>,
}

impl CsvSchema {
    /// Schema matching the column names `save_csv` writes for `data`.
    pub fn for_dataset(data: &Dataset) -> Self {
        CsvSchema {
            treatment: data.names.treatment.clone(),
            outcome: data.names.outcome.clone(),
            covariates: data.names.covariates.clone(),
            surrogates: data.names.surrogates.clone(),
            label: None,
        }
    }
}

fn is_missing_marker(cell: &str) -> bool {
    cell.is_empty() || cell == "NA"
}

fn parse_cell(cell: &str, row: usize, column: &str) -> Result<f64> {
    match cell.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Parse {
            row,
            column: column.to_string(),
            value: cell.to_string(),
        }),
    }
}

/// Reads a dataset from a headed CSV file. Rows are numbered from 1, the
/// header being row 0, in error messages.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file, schema)
}

pub fn read_csv<R: std::io::Read>(reader: R, schema: &CsvSchema) -> Result<Dataset> {
    if schema.covariates.is_empty() {
        return Err(Error::Schema("at least one covariate column is required".into()));
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let find = |name: &str, role: &str| -> Result<usize> {
        index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Schema(format!("{role} column '{name}' not found in header")))
    };
    let t_col = find(&schema.treatment, "treatment")?;
    let y_col = find(&schema.outcome, "outcome")?;
    let v_cols = schema
        .covariates
        .iter()
        .map(|c| find(c, "covariate"))
        .collect::<Result<Vec<_>>>()?;
    let s_cols = schema
        .surrogates
        .iter()
        .map(|c| find(c, "surrogate"))
        .collect::<Result<Vec<_>>>()?;
    let r_col = schema
        .label
        .as_deref()
        .map(|c| find(c, "label"))
        .transpose()?;

    let (p, q) = (v_cols.len(), s_cols.len());
    let mut covariates = Vec::new();
    let mut surrogates = Vec::new();
    let mut treatment = Vec::new();
    let mut outcome = Vec::new();

    for (idx, record) in rdr.records().enumerate() {
        let record = record?;
        let row = idx + 1;
        let cell = |c: usize| record.get(c).unwrap_or("").trim();
        for (&c, name) in v_cols.iter().zip(&schema.covariates) {
            covariates.push(parse_cell(cell(c), row, name)?);
        }
        for (&c, name) in s_cols.iter().zip(&schema.surrogates) {
            surrogates.push(parse_cell(cell(c), row, name)?);
        }
        treatment.push(parse_cell(cell(t_col), row, &schema.treatment)?);

        let y_cell = cell(y_col);
        let y = if is_missing_marker(y_cell) {
            None
        } else {
            Some(parse_cell(y_cell, row, &schema.outcome)?)
        };
        let y = match r_col {
            None => y,
            Some(rc) => {
                let label_name = schema.label.as_deref().unwrap_or_default();
                match cell(rc) {
                    "1" => match y {
                        Some(v) => Some(v),
                        None => {
                            return Err(Error::Consistency {
                                row,
                                message: format!(
                                    "label column '{label_name}' is 1 but outcome is missing"
                                ),
                            })
                        }
                    },
                    // an explicit R = 0 hides any outcome value present
                    "0" => None,
                    other => {
                        return Err(Error::Parse {
                            row,
                            column: label_name.to_string(),
                            value: other.to_string(),
                        })
                    }
                }
            }
        };
        outcome.push(y);
    }

    let names = ColumnNames {
        covariates: schema.covariates.clone(),
        surrogates: schema.surrogates.clone(),
        treatment: schema.treatment.clone(),
        outcome: schema.outcome.clone(),
    };
    Dataset::from_parts(&covariates, p, &surrogates, q, treatment, outcome)?.with_names(names)
}

/// Writes covariates, surrogates, treatment and outcome (`NA` when missing).
pub fn save_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_csv(data, file)
}

pub fn write_csv<W: std::io::Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let names = &data.names;
    let mut header: Vec<&str> = names.covariates.iter().map(String::as_str).collect();
    header.extend(names.surrogates.iter().map(String::as_str));
    header.push(&names.treatment);
    header.push(&names.outcome);
    wtr.write_record(&header)?;
    let mut rec = Vec::with_capacity(header.len());
    for i in 0..data.n {
        rec.clear();
        rec.extend(data.x(i).iter().map(|v| v.to_string()));
        rec.push(data.a(i).to_string());
        rec.push(data.y(i).map_or_else(|| "NA".to_string(), |y| y.to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|source| Error::Io {
        path: "<csv writer>".into(),
        source,
    })?;
    Ok(())
}

/// Fold label; with two folds only `D1` and `D2` are used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Fold {
    D1,
    D2,
    T,
}

impl Fold {
    pub fn from_index(i: usize) -> Fold {
        match i {
            0 => Fold::D1,
            1 => Fold::D2,
            _ => Fold::T,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Fold::D1 => 0,
            Fold::D2 => 1,
            Fold::T => 2,
        }
    }
}

/// Random partition of `0..n` into `k` near-equal folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    folds: Vec<Fold>,
    k: usize,
    seed: u64,
}

impl FoldAssignment {
    /// Seeded Fisher-Yates shuffle of the row indices, then contiguous
    /// blocks. The first `n % k` blocks get one extra row.
    pub fn new(n: usize, k: usize, seed: u64) -> Result<Self> {
        if !(2..=3).contains(&k) {
            return Err(Error::Size(format!("fold count must be 2 or 3, got {k}")));
        }
        if n < k {
            return Err(Error::Size(format!("cannot split {n} rows into {k} folds")));
        }
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);

        let mut folds = vec![Fold::D1; n];
        let (base, extra) = (n / k, n % k);
        let mut start = 0;
        for f in 0..k {
            let len = base + usize::from(f < extra);
            for &row in &order[start..start + len] {
                folds[row] = Fold::from_index(f);
            }
            start += len;
        }
        Ok(FoldAssignment { folds, k, seed })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn fold_of(&self, row: usize) -> Fold {
        self.folds[row]
    }

    /// Rows of one fold in ascending order.
    pub fn rows(&self, fold: Fold) -> Vec<usize> {
        (0..self.folds.len())
            .filter(|&i| self.folds[i] == fold)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        (0..self.k)
            .map(|f| {
                self.folds
                    .iter()
                    .filter(|&&g| g == Fold::from_index(f))
                    .count()
            })
            .collect()
    }
}

pub fn split_folds(data: &Dataset, seed: u64, k: usize) -> Result<FoldAssignment> {
    FoldAssignment::new(data.n(), k, seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationFlag {
    pub fatal: bool,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub n: usize,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub p: usize,
    pub q: usize,
    pub treatment_range: Option<(f64, f64)>,
    pub label_rate: f64,
    pub flags: Vec<ValidationFlag>,
}

impl ValidationReport {
    pub fn is_fatal(&self) -> bool {
        self.flags.iter().any(|f| f.fatal)
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "n={} labeled={} unlabeled={} p={} q={} label_rate={:.4}",
            self.n, self.n_labeled, self.n_unlabeled, self.p, self.q, self.label_rate
        )?;
        if let Some((lo, hi)) = self.treatment_range {
            write!(f, " A in [{lo}, {hi}]")?;
        }
        for flag in &self.flags {
            let tag = if flag.fatal { "FATAL" } else { "warn" };
            write!(f, "\n  [{tag}] {}", flag.message)?;
        }
        Ok(())
    }
}

pub fn validate(data: &Dataset) -> ValidationReport {
    let n = data.n();
    let n_labeled = data.n_labeled();
    let mut flags = Vec::new();
    if n == 0 {
        flags.push(ValidationFlag {
            fatal: true,
            message: "empty dataset".into(),
        });
    } else if n_labeled == 0 {
        flags.push(ValidationFlag {
            fatal: true,
            message: "no labeled rows".into(),
        });
    }
    let non_finite = (0..n)
        .filter(|&i| {
            !data.a(i).is_finite()
                || data.x(i).iter().any(|v| !v.is_finite())
                || data.y(i).is_some_and(|y| !y.is_finite())
        })
        .count();
    if non_finite > 0 {
        flags.push(ValidationFlag {
            fatal: true,
            message: format!("{non_finite} rows with non-finite values"),
        });
    }
    if let Some((lo, hi)) = data.treatment_range() {
        if lo == hi {
            flags.push(ValidationFlag {
                fatal: true,
                message: "treatment is constant".into(),
            });
        }
    }
    ValidationReport {
        n,
        n_labeled,
        n_unlabeled: n - n_labeled,
        p: data.p(),
        q: data.q(),
        treatment_range: data.treatment_range(),
        label_rate: if n == 0 { 0.0 } else { n_labeled as f64 / n as f64 },
        flags,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn schema(label: Option<&str>) -> CsvSchema {
        CsvSchema {
            treatment: "A".into(),
            outcome: "Y".into(),
            covariates: vec!["V1".into()],
            surrogates: vec!["S1".into()],
            label: label.map(Into::into),
        }
    }

    #[test]
    fn all_outcomes_present_means_all_labeled() {
        let csv = "V1,S1,A,Y\n1,2,0.5,3\n2,3,0.1,4\n0,0,1.5,5\n";
        let d = read_csv(csv.as_bytes(), &schema(None)).unwrap();
        assert_eq!(d.n(), 3);
        assert_eq!(d.n_labeled(), 3);
        assert!((0..3).all(|i| d.is_labeled(i)));
    }

    #[test]
    fn empty_outcome_cell_marks_unlabeled() {
        let csv = "V1,S1,A,Y\n1,2,0.5,\n2,3,0.1,NA\n0,0,1.5,5\n";
        let d = read_csv(csv.as_bytes(), &schema(None)).unwrap();
        assert!(!d.is_labeled(0));
        assert!(!d.is_labeled(1));
        assert_eq!(d.y(2), Some(5.0));
    }

    #[test]
    fn bad_treatment_cell_names_row_and_column() {
        let csv = "V1,S1,A,Y\n1,2,abc,1\n";
        let err = read_csv(csv.as_bytes(), &schema(None)).unwrap_err();
        match err {
            Error::Parse { row, column, value } => {
                assert_eq!(row, 1);
                assert_eq!(column, "A");
                assert_eq!(value, "abc");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn junk_in_outcome_is_a_parse_error() {
        let csv = "V1,S1,A,Y\n1,2,0.3,missing\n";
        assert!(matches!(
            read_csv(csv.as_bytes(), &schema(None)),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn label_one_with_missing_outcome_is_inconsistent() {
        let csv = "V1,S1,A,Y,R\n1,2,0.3,,1\n";
        assert!(matches!(
            read_csv(csv.as_bytes(), &schema(Some("R"))),
            Err(Error::Consistency { row: 1, .. })
        ));
    }

    #[test]
    fn missing_covariate_is_rejected() {
        let csv = "V1,S1,A,Y\n,2,0.3,1\n";
        assert!(matches!(
            read_csv(csv.as_bytes(), &schema(None)),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn missing_column_is_schema_error() {
        let csv = "V1,S1,Y\n1,2,1\n";
        let err = read_csv(csv.as_bytes(), &schema(None)).unwrap_err();
        assert!(err.to_string().contains("treatment column 'A'"));
    }

    #[test]
    fn fold_sizes() {
        let f = FoldAssignment::new(9, 3, 1).unwrap();
        assert_eq!(f.sizes(), vec![3, 3, 3]);
        let mut s = FoldAssignment::new(10, 3, 1).unwrap().sizes();
        s.sort();
        assert_eq!(s, vec![3, 3, 4]);
        assert!(FoldAssignment::new(2, 3, 1).is_err());
    }

    #[test]
    fn folds_are_deterministic() {
        assert_eq!(
            FoldAssignment::new(57, 3, 42).unwrap(),
            FoldAssignment::new(57, 3, 42).unwrap()
        );
        assert_ne!(
            FoldAssignment::new(57, 3, 42).unwrap(),
            FoldAssignment::new(57, 3, 43).unwrap()
        );
    }

    #[test]
    fn validation_flags() {
        let empty = Dataset::from_parts(&[], 1, &[], 0, vec![], vec![]).unwrap();
        let r = validate(&empty);
        assert_eq!(r.n, 0);
        assert!(r.is_fatal());

        let d = Dataset::from_parts(&[1.0, 2.0], 1, &[], 0, vec![0.1, 0.2], vec![None, None])
            .unwrap();
        let r = validate(&d);
        assert!(r.is_fatal());
        assert!(r.flags.iter().any(|f| f.message == "no labeled rows"));
    }

    #[test]
    fn no_surrogates_is_supported() {
        let d = Dataset::from_parts(&[1.0, 2.0], 1, &[], 0, vec![0.1, 0.2], vec![Some(1.0), None])
            .unwrap();
        assert_eq!(d.x(1), d.v(1));
        assert!(d.s(1).is_empty());
    }

    proptest! {
        #[test]
        fn fold_partition_properties(n in 3usize..400, k in 2usize..=3, seed in any::<u64>()) {
            let f = FoldAssignment::new(n, k, seed).unwrap();
            let mut seen = vec![0u8; n];
            for fold in 0..k {
                for r in f.rows(Fold::from_index(fold)) {
                    seen[r] += 1;
                }
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
            let sizes = f.sizes();
            let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
            prop_assert!(hi - lo <= 1);
        }

        #[test]
        fn csv_round_trip(
            rows in prop::collection::vec(
                (-1e6f64..1e6, -1e3f64..1e3, -50f64..50.0, prop::option::of(-1e9f64..1e9)),
                1..40,
            )
        ) {
            let cov: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let sur: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let a: Vec<f64> = rows.iter().map(|r| r.2).collect();
            let y: Vec<Option<f64>> = rows.iter().map(|r| r.3).collect();
            let d = Dataset::from_parts(&cov, 1, &sur, 1, a, y).unwrap();
            let mut buf = Vec::new();
            write_csv(&d, &mut buf).unwrap();
            let back = read_csv(buf.as_slice(), &CsvSchema::for_dataset(&d)).unwrap();
            prop_assert_eq!(back, d);
        }
    }
}
