//! Tabular datasets, CSV ingestion and the disjoint train/reference/holdout split.
//!
//! Input CSVs are expected to be pre-cleaned: every cell present, numeric
//! columns finite. Empty cells are rejected rather than imputed.

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("input has no header row")]
    Empty,
    #[error("cannot open {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row} has {found} fields, header has {expected}")]
    Ragged {
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("row {row}, column '{column}': empty cell")]
    MissingValue { row: usize, column: String },
    #[error("row {row}, column '{column}': '{value}' is not a finite number")]
    NotNumeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}, column '{column}': category '{value}' not in schema")]
    UnknownCategory {
        row: usize,
        column: String,
        value: String,
    },
    #[error("header does not match schema: {0}")]
    HeaderMismatch(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("cannot draw three disjoint sets of {n} from {available} rows")]
pub struct InsufficientRows {
    pub n: usize,
    pub available: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
    /// Sorted, duplicate-free labels. Empty for numeric columns.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
}

impl ColumnSchema {
    pub fn numeric(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Numeric,
            categories: Vec::new(),
        }
    }

    /// Categorical column; labels are sorted and deduplicated.
    pub fn categorical<S: Into<String>>(
        name: impl Into<String>,
        labels: impl IntoIterator<Item = S>,
    ) -> Self {
        let set: BTreeSet<String> = labels.into_iter().map(Into::into).collect();
        Self {
            name: name.into(),
            kind: ColumnKind::Categorical,
            categories: set.into_iter().collect(),
        }
    }

    pub fn category_code(&self, label: &str) -> Option<u32> {
        self.categories
            .binary_search_by(|c| c.as_str().cmp(label))
            .ok()
            .map(|i| i as u32)
    }
}

/// Ordered list of columns with unique names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ColumnSchema>", into = "Vec<ColumnSchema>")]
pub struct Schema {
    columns: Vec<ColumnSchema>,
}

impl Schema {
    pub fn new(columns: Vec<ColumnSchema>) -> Result<Self, IngestError> {
        let mut seen = HashSet::new();
        for c in &columns {
            if !seen.insert(c.name.as_str()) {
                return Err(IngestError::InvalidSchema(format!(
                    "duplicate column name '{}'",
                    c.name
                )));
            }
            match c.kind {
                ColumnKind::Categorical => {
                    if c.categories.is_empty() {
                        return Err(IngestError::InvalidSchema(format!(
                            "categorical column '{}' has no categories",
                            c.name
                        )));
                    }
                    if c.categories.windows(2).any(|w| w[0] >= w[1]) {
                        return Err(IngestError::InvalidSchema(format!(
                            "categories of '{}' must be sorted and distinct",
                            c.name
                        )));
                    }
                }
                ColumnKind::Numeric => {
                    if !c.categories.is_empty() {
                        return Err(IngestError::InvalidSchema(format!(
                            "numeric column '{}' lists categories",
                            c.name
                        )));
                    }
                }
            }
        }
        Ok(Self { columns })
    }

    pub fn columns(&self) -> &[ColumnSchema] {
        &self.columns
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }
}

impl TryFrom<Vec<ColumnSchema>> for Schema {
    type Error = IngestError;
    fn try_from(columns: Vec<ColumnSchema>) -> Result<Self, Self::Error> {
        Schema::new(columns)
    }
}

impl From<Schema> for Vec<ColumnSchema> {
    fn from(s: Schema) -> Self {
        s.columns
    }
}

/// A single cell. Categories are stored as their index into the column's
/// sorted label list.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    Numeric(f64),
    Category(u32),
}

impl Value {
    pub fn as_numeric(&self) -> Option<f64> {
        match *self {
            Value::Numeric(v) => Some(v),
            Value::Category(_) => None,
        }
    }

    pub fn as_category(&self) -> Option<u32> {
        match *self {
            Value::Category(c) => Some(c),
            Value::Numeric(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    schema: Schema,
    rows: Vec<Vec<Value>>,
}

impl TabularDataset {
    /// Validates every row against the schema.
    pub fn new(schema: Schema, rows: Vec<Vec<Value>>) -> Result<Self, IngestError> {
        for (i, row) in rows.iter().enumerate() {
            if row.len() != schema.len() {
                return Err(IngestError::Ragged {
                    row: i,
                    found: row.len(),
                    expected: schema.len(),
                });
            }
            for (v, col) in row.iter().zip(schema.columns()) {
                match (v, col.kind) {
                    (Value::Numeric(x), ColumnKind::Numeric) if x.is_finite() => {}
                    (Value::Category(c), ColumnKind::Categorical)
                        if (*c as usize) < col.categories.len() => {}
                    _ => {
                        return Err(IngestError::InvalidRecord(format!(
                            "row {i}, column '{}': {v:?} does not fit a {:?} column",
                            col.name, col.kind
                        )))
                    }
                }
            }
        }
        Ok(Self { schema, rows })
    }

    pub fn empty(schema: Schema) -> Self {
        Self {
            schema,
            rows: Vec::new(),
        }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn rows(&self) -> &[Vec<Value>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> TabularDataset {
        TabularDataset {
            schema: self.schema.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// Rows of `self` followed by rows of `other`; schemas must be equal.
    pub fn concat(&self, other: &TabularDataset) -> Result<TabularDataset, IngestError> {
        if self.schema != other.schema {
            return Err(IngestError::HeaderMismatch(
                "cannot concatenate datasets with different schemas".into(),
            ));
        }
        let mut rows = self.rows.clone();
        rows.extend(other.rows.iter().cloned());
        Ok(TabularDataset {
            schema: self.schema.clone(),
            rows,
        })
    }

    /// Values of numeric column `j` (panics if it is categorical).
    pub fn numeric_column(&self, j: usize) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r[j].as_numeric().expect("numeric column"))
            .collect()
    }

    /// Applies `f(column_index, value)` to every numeric cell.
    pub fn map_numeric(&self, mut f: impl FnMut(usize, f64) -> f64) -> TabularDataset {
        let rows = self
            .rows
            .iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .map(|(j, v)| match *v {
                        Value::Numeric(x) => Value::Numeric(f(j, x)),
                        c => c,
                    })
                    .collect()
            })
            .collect();
        TabularDataset {
            schema: self.schema.clone(),
            rows,
        }
    }

    /// Writes header plus rows. Numbers use Rust's shortest round-trip formatting.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), IngestError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.schema.names())?;
        for row in &self.rows {
            let cells = row
                .iter()
                .zip(self.schema.columns())
                .map(|(v, col)| match *v {
                    Value::Numeric(x) => format!("{x:?}"),
                    Value::Category(c) => col.categories[c as usize].clone(),
                });
            w.write_record(cells)?;
        }
        w.flush().map_err(|e| IngestError::Csv(e.into()))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), IngestError> {
        let file = File::create(path).map_err(|source| IngestError::Io {
            path: path.to_owned(),
            source,
        })?;
        self.write_csv(file)
    }
}

/// Unparsed CSV contents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub fn read_raw_csv<R: Read>(reader: R) -> Result<RawTable, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let header: Vec<String> = match records.next() {
        Some(h) => h?.iter().map(str::to_owned).collect(),
        None => return Err(IngestError::Empty),
    };
    let mut rows = Vec::new();
    for (i, rec) in records.enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(IngestError::Ragged {
                row: i,
                found: rec.len(),
                expected: header.len(),
            });
        }
        rows.push(rec.iter().map(str::to_owned).collect());
    }
    Ok(RawTable { header, rows })
}

pub fn read_raw_csv_file(path: &Path) -> Result<RawTable, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.to_owned(),
        source,
    })?;
    read_raw_csv(file)
}

fn parse_finite(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// A column is numeric iff every non-empty cell parses as a finite number;
/// otherwise it is categorical over the sorted distinct cell values.
pub fn infer_schema<S: AsRef<str>>(
    header: &[String],
    rows: &[Vec<S>],
) -> Result<Schema, IngestError> {
    if header.is_empty() {
        return Err(IngestError::Empty);
    }
    for (i, r) in rows.iter().enumerate() {
        if r.len() != header.len() {
            return Err(IngestError::Ragged {
                row: i,
                found: r.len(),
                expected: header.len(),
            });
        }
    }
    let columns = header
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let cells = rows.iter().map(|r| r[j].as_ref()).filter(|c| !c.is_empty());
            let numeric = cells.clone().all(|c| parse_finite(c).is_some());
            if numeric {
                ColumnSchema::numeric(name.clone())
            } else {
                ColumnSchema::categorical(name.clone(), cells)
            }
        })
        .collect();
    Schema::new(columns)
}

/// Parses raw rows against `schema`. The header must list the schema's
/// columns in order.
pub fn parse_table(raw: &RawTable, schema: &Schema) -> Result<TabularDataset, IngestError> {
    if !raw.header.iter().map(String::as_str).eq(schema.names()) {
        return Err(IngestError::HeaderMismatch(format!(
            "expected [{}], found [{}]",
            schema.names().collect::<Vec<_>>().join(","),
            raw.header.join(",")
        )));
    }
    let mut rows = Vec::with_capacity(raw.rows.len());
    for (i, r) in raw.rows.iter().enumerate() {
        let mut row = Vec::with_capacity(r.len());
        for (cell, col) in r.iter().zip(schema.columns()) {
            if cell.is_empty() {
                return Err(IngestError::MissingValue {
                    row: i,
                    column: col.name.clone(),
                });
            }
            let v = match col.kind {
                ColumnKind::Numeric => {
                    Value::Numeric(parse_finite(cell).ok_or_else(|| IngestError::NotNumeric {
                        row: i,
                        column: col.name.clone(),
                        value: cell.clone(),
                    })?)
                }
                ColumnKind::Categorical => Value::Category(col.category_code(cell).ok_or_else(
                    || IngestError::UnknownCategory {
                        row: i,
                        column: col.name.clone(),
                        value: cell.clone(),
                    },
                )?),
            };
            row.push(v);
        }
        rows.push(row);
    }
    Ok(TabularDataset {
        schema: schema.clone(),
        rows,
    })
}

/// Loads a CSV file, inferring the schema when none is supplied.
pub fn load_csv(path: &Path, schema: Option<&Schema>) -> Result<TabularDataset, IngestError> {
    let raw = read_raw_csv_file(path)?;
    match schema {
        Some(s) => parse_table(&raw, s),
        None => {
            let s = infer_schema(&raw.header, &raw.rows)?;
            parse_table(&raw, &s)
        }
    }
}

/// Loads several CSVs that must share one header, inferring a single schema
/// over the union of their rows.
pub fn load_csv_group(paths: &[&Path]) -> Result<Vec<TabularDataset>, IngestError> {
    let raws = paths
        .iter()
        .map(|p| read_raw_csv_file(p))
        .collect::<Result<Vec<_>, _>>()?;
    let Some(first) = raws.first() else {
        return Ok(Vec::new());
    };
    for (raw, path) in raws.iter().zip(paths).skip(1) {
        if raw.header != first.header {
            return Err(IngestError::HeaderMismatch(format!(
                "{} has header [{}], expected [{}]",
                path.display(),
                raw.header.join(","),
                first.header.join(",")
            )));
        }
    }
    let all_rows: Vec<&Vec<String>> = raws.iter().flat_map(|r| r.rows.iter()).collect();
    let all_rows: Vec<Vec<&str>> = all_rows
        .iter()
        .map(|r| r.iter().map(String::as_str).collect())
        .collect();
    let schema = infer_schema(&first.header, &all_rows)?;
    raws.iter().map(|r| parse_table(r, &schema)).collect()
}

/// Training, reference and holdout sets with the source-row indices each was
/// drawn from.
#[derive(Debug, Clone)]
pub struct SplitTriple {
    pub train: TabularDataset,
    pub reference: TabularDataset,
    pub holdout: TabularDataset,
    pub train_rows: Vec<usize>,
    pub reference_rows: Vec<usize>,
    pub holdout_rows: Vec<usize>,
}

/// Draws three disjoint sets of `n` rows from a seeded permutation of the dataset.
pub fn split_disjoint(
    dataset: &TabularDataset,
    n: usize,
    seed: u64,
) -> Result<SplitTriple, InsufficientRows> {
    if n == 0 || 3 * n > dataset.len() {
        return Err(InsufficientRows {
            n,
            available: dataset.len(),
        });
    }
    let mut perm: Vec<usize> = (0..dataset.len()).collect();
    perm.shuffle(&mut rng::seeded_stream(seed, rng::Stream::Split));
    let train_rows = perm[..n].to_vec();
    let reference_rows = perm[n..2 * n].to_vec();
    let holdout_rows = perm[2 * n..3 * n].to_vec();
    Ok(SplitTriple {
        train: dataset.select(&train_rows),
        reference: dataset.select(&reference_rows),
        holdout: dataset.select(&holdout_rows),
        train_rows,
        reference_rows,
        holdout_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hdr(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    fn col(cells: &[&str]) -> Vec<Vec<String>> {
        cells.iter().map(|c| vec![c.to_string()]).collect()
    }

    #[test]
    fn infers_numeric() {
        let s = infer_schema(&hdr(&["x"]), &col(&["1.5", "2", "3e1"])).unwrap();
        assert_eq!(s.columns()[0].kind, ColumnKind::Numeric);
    }

    #[test]
    fn infers_categorical() {
        let s = infer_schema(&hdr(&["x"]), &col(&["a", "b", "a"])).unwrap();
        assert_eq!(s.columns()[0], ColumnSchema::categorical("x", ["a", "b"]));
    }

    #[test]
    fn one_bad_cell_forces_categorical() {
        let s = infer_schema(&hdr(&["x"]), &col(&["1", "x"])).unwrap();
        assert_eq!(s.columns()[0].categories, vec!["1", "x"]);
    }

    #[test]
    fn non_finite_cells_are_not_numeric() {
        let s = infer_schema(&hdr(&["x"]), &col(&["1", "inf"])).unwrap();
        assert_eq!(s.columns()[0].kind, ColumnKind::Categorical);
    }

    #[test]
    fn infer_rejects_ragged_and_empty() {
        let rows = vec![vec!["1".to_string(), "2".to_string()], vec!["3".to_string()]];
        assert!(matches!(
            infer_schema(&hdr(&["a", "b"]), &rows),
            Err(IngestError::Ragged { row: 1, .. })
        ));
        assert!(matches!(
            infer_schema::<String>(&[], &[]),
            Err(IngestError::Empty)
        ));
    }

    #[test]
    fn schema_rejects_duplicates() {
        let err = Schema::new(vec![ColumnSchema::numeric("a"), ColumnSchema::numeric("a")]);
        assert!(matches!(err, Err(IngestError::InvalidSchema(_))));
    }

    #[test]
    fn load_three_rows() {
        let raw = read_raw_csv("a,b\n1,x\n2,y\n3,\"x\"\n".as_bytes()).unwrap();
        let s = infer_schema(&raw.header, &raw.rows).unwrap();
        let ds = parse_table(&raw, &s).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.rows()[2], vec![Value::Numeric(3.0), Value::Category(0)]);
    }

    #[test]
    fn provided_numeric_schema_rejects_text() {
        let raw = read_raw_csv("a\n1\nzz\n".as_bytes()).unwrap();
        let s = Schema::new(vec![ColumnSchema::numeric("a")]).unwrap();
        assert!(matches!(
            parse_table(&raw, &s),
            Err(IngestError::NotNumeric { row: 1, .. })
        ));
    }

    #[test]
    fn provided_schema_rejects_unknown_category() {
        let raw = read_raw_csv("c\nq\n".as_bytes()).unwrap();
        let s = Schema::new(vec![ColumnSchema::categorical("c", ["a"])]).unwrap();
        assert!(matches!(
            parse_table(&raw, &s),
            Err(IngestError::UnknownCategory { .. })
        ));
    }

    #[test]
    fn empty_numeric_cell_is_an_error() {
        let raw = read_raw_csv("a,b\n1,2\n,3\n".as_bytes()).unwrap();
        let s = infer_schema(&raw.header, &raw.rows).unwrap();
        assert!(matches!(
            parse_table(&raw, &s),
            Err(IngestError::MissingValue { row: 1, .. })
        ));
    }

    #[test]
    fn header_only_is_a_valid_empty_dataset() {
        let raw = read_raw_csv("a,b\n".as_bytes()).unwrap();
        let s = infer_schema(&raw.header, &raw.rows).unwrap();
        let ds = parse_table(&raw, &s).unwrap();
        assert_eq!(ds.len(), 0);
        assert_eq!(ds.schema().len(), 2);
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_csv(Path::new("/definitely/not/here.csv"), None).unwrap_err();
        assert!(matches!(err, IngestError::Io { .. }));
    }

    fn numbered(n: usize) -> TabularDataset {
        let schema = Schema::new(vec![ColumnSchema::numeric("id")]).unwrap();
        let rows = (0..n).map(|i| vec![Value::Numeric(i as f64)]).collect();
        TabularDataset::new(schema, rows).unwrap()
    }

    #[test]
    fn split_twelve_into_fours() {
        let ds = numbered(12);
        let t = split_disjoint(&ds, 4, 3).unwrap();
        let mut all: Vec<usize> = [&t.train_rows, &t.reference_rows, &t.holdout_rows]
            .iter()
            .flat_map(|v| v.iter().copied())
            .collect();
        all.sort();
        assert_eq!(all, (0..12).collect::<Vec<_>>());
        assert_eq!(t.train.len(), 4);
        let again = split_disjoint(&ds, 4, 3).unwrap();
        assert_eq!(t.train_rows, again.train_rows);
        assert_eq!(t.holdout, again.holdout);
    }

    #[test]
    fn split_insufficient() {
        assert_eq!(
            split_disjoint(&numbered(10), 4, 0).unwrap_err(),
            InsufficientRows { n: 4, available: 10 }
        );
    }

    proptest! {
        #[test]
        fn split_is_disjoint(total in 3usize..200, frac in 0.0f64..1.0, seed: u64) {
            let n = 1 + ((total / 3 - 1) as f64 * frac) as usize;
            let t = split_disjoint(&numbered(total), n, seed).unwrap();
            let mut set = HashSet::new();
            for i in t.train_rows.iter().chain(&t.reference_rows).chain(&t.holdout_rows) {
                prop_assert!(set.insert(*i));
            }
            prop_assert_eq!(set.len(), 3 * n);
        }

        #[test]
        fn inference_ignores_row_order(cells in proptest::collection::vec("[a-c0-9.]{1,3}", 1..30), seed: u64) {
            let rows: Vec<Vec<String>> = cells.iter().map(|c| vec![c.clone()]).collect();
            let mut shuffled = rows.clone();
            shuffled.shuffle(&mut rng::seeded(seed));
            let h = hdr(&["c"]);
            prop_assert_eq!(infer_schema(&h, &rows).unwrap(), infer_schema(&h, &shuffled).unwrap());
        }

        #[test]
        fn csv_round_trip(values in proptest::collection::vec((-1e6f64..1e6, 0u32..3), 0..40)) {
            let schema = Schema::new(vec![
                ColumnSchema::numeric("x"),
                ColumnSchema::categorical("c", ["a b", "q,\"r\"", "z"]),
            ]).unwrap();
            let rows = values.iter().map(|&(x, c)| vec![Value::Numeric(x), Value::Category(c)]).collect();
            let ds = TabularDataset::new(schema.clone(), rows).unwrap();
            let mut buf = Vec::new();
            ds.write_csv(&mut buf).unwrap();
            let back = parse_table(&read_raw_csv(buf.as_slice()).unwrap(), &schema).unwrap();
            prop_assert_eq!(back, ds);
        }
    }
}
