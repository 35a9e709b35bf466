//! Funnel datasets: a dense feature matrix where each row only observes the
//! columns of the stages it reached, plus CSV ingestion and export.
//!
//! Reserved CSV columns:
//!
//! * `__depth` — last stage the row reached (`0..=S`).
//! * `__outcome` — `pass` or `reject` at that stage; empty for depth 0.
//! * `__outcome_1 .. __outcome_S` — optional explicit per-stage outcomes.
//! * `__row_id` — optional stable identifier; defaults to the data row index.
//!
//! Cells of stages beyond a row's depth are ignored on input and written
//! empty on output.

use std::collections::BTreeSet;
use std::io::Read;
use std::ops::Range;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Result, StageError};
use crate::labels::{known_entries_consistent, to_label_matrix, FillPolicy, LabelMatrix};
use crate::schema::{ColumnKind, RawKind, SchemaFile, StageSchema, StageSpec};
use crate::util::atomic_write;

pub const DEPTH_COLUMN: &str = "__depth";
pub const OUTCOME_COLUMN: &str = "__outcome";
pub const ROW_ID_COLUMN: &str = "__row_id";

pub fn stage_outcome_column(stage: usize) -> String {
    format!("__outcome_{stage}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Pass,
    Reject,
}

impl Outcome {
    pub(crate) fn parse(text: &str) -> Option<Option<Outcome>> {
        match text.trim() {
            "" => Some(None),
            "pass" => Some(Some(Outcome::Pass)),
            "reject" => Some(Some(Outcome::Reject)),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Pass => "pass",
            Outcome::Reject => "reject",
        }
    }
}

/// Per-row bookkeeping shared by raw and completed datasets.
#[derive(Debug, Clone, PartialEq)]
pub struct RowOutcomes {
    pub row_ids: Vec<usize>,
    pub depth: Vec<usize>,
    pub outcome: Vec<Option<Outcome>>,
    /// Explicit per-stage labels over {+1, 0, -1}, when the source recorded them.
    pub explicit: Option<Array2<i8>>,
}

impl RowOutcomes {
    pub fn new(
        row_ids: Vec<usize>,
        depth: Vec<usize>,
        outcome: Vec<Option<Outcome>>,
        explicit: Option<Array2<i8>>,
    ) -> Result<Self> {
        let n = depth.len();
        if row_ids.len() != n || outcome.len() != n {
            return Err(StageError::shape(format!(
                "row metadata lengths differ: {} ids, {} depths, {} outcomes",
                row_ids.len(),
                n,
                outcome.len()
            )));
        }
        for (i, (d, o)) in depth.iter().zip(&outcome).enumerate() {
            if *d >= 1 && o.is_none() && explicit.is_none() {
                return Err(StageError::validation(format!(
                    "row {} reached stage {d} but has no outcome",
                    row_ids[i]
                )));
            }
        }
        if let Some(e) = &explicit {
            if e.nrows() != n {
                return Err(StageError::shape("explicit label rows differ from row count"));
            }
            for (i, row) in e.rows().into_iter().enumerate() {
                if !known_entries_consistent(row) {
                    return Err(StageError::validation(format!(
                        "row {} has an approval recorded after a rejection",
                        row_ids[i]
                    )));
                }
            }
        }
        Ok(Self {
            row_ids,
            depth,
            outcome,
            explicit,
        })
    }

    pub fn len(&self) -> usize {
        self.depth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depth.is_empty()
    }

    pub fn explicit_row(&self, i: usize) -> Option<ArrayView1<'_, i8>> {
        self.explicit.as_ref().map(|e| e.row(i))
    }

    pub fn select(&self, rows: &[usize]) -> RowOutcomes {
        RowOutcomes {
            row_ids: rows.iter().map(|&i| self.row_ids[i]).collect(),
            depth: rows.iter().map(|&i| self.depth[i]).collect(),
            outcome: rows.iter().map(|&i| self.outcome[i]).collect(),
            explicit: self.explicit.as_ref().map(|e| e.select(Axis(0), rows)),
        }
    }

    /// Permutation that sorts rows by depth, stable.
    fn depth_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by_key(|&i| self.depth[i]);
        order
    }

    pub fn label_matrix(&self, num_stages: usize, policy: FillPolicy) -> LabelMatrix {
        to_label_matrix(self, num_stages, policy)
    }
}

/// Feature matrix of `n` rows by `d^S` columns with per-row observation depth.
///
/// Rows are kept sorted by depth, so the rows that reached stage `s` form the
/// contiguous tail `n - n^s .. n`. Unobserved cells hold 0.
#[derive(Debug, Clone, PartialEq)]
pub struct FunnelDataset {
    schema: StageSchema,
    features: Array2<f64>,
    rows: RowOutcomes,
}

impl FunnelDataset {
    pub fn new(schema: StageSchema, features: Array2<f64>, rows: RowOutcomes) -> Result<Self> {
        if features.ncols() != schema.total_width() {
            return Err(StageError::shape(format!(
                "features have {} columns, schema expects {}",
                features.ncols(),
                schema.total_width()
            )));
        }
        if features.nrows() != rows.len() {
            return Err(StageError::shape(format!(
                "{} feature rows but {} row records",
                features.nrows(),
                rows.len()
            )));
        }
        let s_max = schema.num_stages();
        if let Some((i, d)) = rows.depth.iter().enumerate().find(|(_, d)| **d > s_max) {
            return Err(StageError::validation(format!(
                "row {} has depth {d}, outside 0..={s_max}",
                rows.row_ids[i]
            )));
        }
        if let Some(e) = &rows.explicit {
            if e.ncols() != s_max {
                return Err(StageError::shape("explicit labels do not have one column per stage"));
            }
        }
        let order = rows.depth_order();
        let mut features = features.select(Axis(0), &order);
        let rows = rows.select(&order);
        for (i, mut row) in features.rows_mut().into_iter().enumerate() {
            let w = schema.width(rows.depth[i]);
            row.slice_mut(ndarray::s![w..]).fill(0.0);
        }
        if let Some(j) = (0..features.ncols()).find(|&j| {
            features
                .column(j)
                .iter()
                .enumerate()
                .any(|(i, v)| !v.is_finite() && j < schema.width(rows.depth[i]))
        }) {
            return Err(StageError::Numeric(format!("column {j} holds a non-finite value")));
        }
        Ok(Self {
            schema,
            features,
            rows,
        })
    }

    pub fn schema(&self) -> &StageSchema {
        &self.schema
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    #[cfg(test)]
    pub(crate) fn features_mut(&mut self) -> &mut Array2<f64> {
        &mut self.features
    }

    pub fn rows(&self) -> &RowOutcomes {
        &self.rows
    }

    pub fn observed_depth(&self) -> &[usize] {
        &self.rows.depth
    }

    pub fn outcomes(&self) -> &[Option<Outcome>] {
        &self.rows.outcome
    }

    pub fn row_ids(&self) -> &[usize] {
        &self.rows.row_ids
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn num_stages(&self) -> usize {
        self.schema.num_stages()
    }

    pub fn is_observed(&self, row: usize, col: usize) -> bool {
        col < self.schema.width(self.rows.depth[row])
    }

    pub fn observation_mask(&self) -> Array2<bool> {
        let mut mask = Array2::from_elem(self.features.raw_dim(), false);
        for (i, mut row) in mask.rows_mut().into_iter().enumerate() {
            let w = self.schema.width(self.rows.depth[i]);
            row.slice_mut(ndarray::s![..w]).fill(true);
        }
        mask
    }

    /// `n^s`: rows that reached stage `s`.
    pub fn population(&self, stage: usize) -> usize {
        self.rows.depth.iter().filter(|d| **d >= stage).count()
    }

    /// Populations `n^0 ..= n^S`.
    pub fn populations(&self) -> Vec<usize> {
        (0..=self.num_stages()).map(|s| self.population(s)).collect()
    }

    /// Index range of the rows that reached stage `s`.
    pub fn rows_reaching(&self, stage: usize) -> Range<usize> {
        let start = self.rows.depth.partition_point(|d| *d < stage);
        start..self.len()
    }

    pub fn label_matrix(&self, policy: FillPolicy) -> LabelMatrix {
        self.rows.label_matrix(self.num_stages(), policy)
    }

    /// Subset of rows (re-sorted by depth).
    pub fn select(&self, rows: &[usize]) -> Result<FunnelDataset> {
        FunnelDataset::new(
            self.schema.clone(),
            self.features.select(Axis(0), rows),
            self.rows.select(rows),
        )
    }

    /// Write the dataset as CSV in the ingestion layout.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        atomic_write(path, |w| self.write_csv_to(w))
    }

    pub fn write_csv_to(&self, w: &mut dyn std::io::Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let s_max = self.num_stages();
        let mut header: Vec<String> = self.schema.column_names().to_vec();
        header.push(DEPTH_COLUMN.into());
        header.push(OUTCOME_COLUMN.into());
        if self.rows.explicit.is_some() {
            header.extend((1..=s_max).map(stage_outcome_column));
        }
        header.push(ROW_ID_COLUMN.into());
        out.write_record(&header)?;
        for i in 0..self.len() {
            let w = self.schema.width(self.rows.depth[i]);
            let mut rec: Vec<String> = self
                .features
                .row(i)
                .iter()
                .enumerate()
                .map(|(j, v)| if j < w { format_value(*v) } else { String::new() })
                .collect();
            rec.push(self.rows.depth[i].to_string());
            rec.push(self.rows.outcome[i].map(|o| o.as_str()).unwrap_or("").into());
            if let Some(e) = &self.rows.explicit {
                rec.extend(e.row(i).iter().map(|v| match *v {
                    1 => "pass".to_string(),
                    -1 => "reject".to_string(),
                    _ => String::new(),
                }));
            }
            rec.push(self.rows.row_ids[i].to_string());
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Shortest representation that parses back to the same `f64`.
pub(crate) fn format_value(v: f64) -> String {
    format!("{v}")
}

#[derive(Debug, Clone, PartialEq)]
pub enum RawCell {
    Missing,
    Number(f64),
    Text(String),
}

/// Parsed but not yet encoded table: raw cell values in schema column order.
#[derive(Debug, Clone)]
pub struct RawTable {
    schema: SchemaFile,
    cells: Vec<Vec<RawCell>>,
    rows: RowOutcomes,
}

impl RawTable {
    pub fn new(schema: SchemaFile, cells: Vec<Vec<RawCell>>, rows: RowOutcomes) -> Result<Self> {
        schema.validate()?;
        if cells.len() != rows.len() {
            return Err(StageError::shape("cell rows differ from row records"));
        }
        Ok(Self {
            schema,
            cells,
            rows,
        })
    }

    pub fn read_csv(path: impl AsRef<Path>, schema: &SchemaFile) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_reader(file, schema)
    }

    pub fn from_reader<R: Read>(reader: R, schema: &SchemaFile) -> Result<Self> {
        schema.validate()?;
        let mut rdr = csv::ReaderBuilder::new()
            .flexible(true)
            .has_headers(false)
            .from_reader(reader);
        let mut records = rdr.records();
        let header = match records.next() {
            Some(h) => h?,
            None => {
                return Err(StageError::Parse {
                    row: 0,
                    column: String::new(),
                    message: "empty file".into(),
                })
            }
        };
        let header: Vec<String> = header.iter().map(|h| h.trim().to_string()).collect();
        let find = |name: &str| header.iter().position(|h| h == name);

        let columns = schema.ordered_columns();
        let mut col_idx = Vec::with_capacity(columns.len());
        for c in &columns {
            match find(&c.name) {
                Some(i) => col_idx.push(i),
                None => {
                    return Err(StageError::validation(format!(
                        "declared column `{}` missing from header",
                        c.name
                    )))
                }
            }
        }
        let depth_idx = find(DEPTH_COLUMN).ok_or_else(|| {
            StageError::validation(format!("reserved column `{DEPTH_COLUMN}` missing"))
        })?;
        let outcome_idx = find(OUTCOME_COLUMN).ok_or_else(|| {
            StageError::validation(format!("reserved column `{OUTCOME_COLUMN}` missing"))
        })?;
        let row_id_idx = find(ROW_ID_COLUMN);
        let s_max = schema.num_stages();
        let stage_idx: Vec<Option<usize>> =
            (1..=s_max).map(|s| find(&stage_outcome_column(s))).collect();
        let has_explicit = stage_idx.iter().any(Option::is_some);
        if has_explicit && stage_idx.iter().any(Option::is_none) {
            return Err(StageError::validation(
                "per-stage outcome columns must be present for every stage or none",
            ));
        }

        let mut cells = Vec::new();
        let mut ids = Vec::new();
        let mut depths = Vec::new();
        let mut outcomes = Vec::new();
        let mut explicit: Vec<i8> = Vec::new();
        for (r, rec) in records.enumerate() {
            let rec = rec?;
            let line = r + 1;
            if rec.len() != header.len() {
                return Err(StageError::Parse {
                    row: line,
                    column: String::new(),
                    message: format!("expected {} fields, found {}", header.len(), rec.len()),
                });
            }
            let depth_text = rec[depth_idx].trim();
            let depth: i64 = depth_text.parse().map_err(|_| StageError::Parse {
                row: line,
                column: DEPTH_COLUMN.into(),
                message: format!("`{depth_text}` is not an integer"),
            })?;
            if depth < 0 || depth as usize > s_max {
                return Err(StageError::validation(format!(
                    "row {line}: depth {depth} outside 0..={s_max}"
                )));
            }
            let depth = depth as usize;
            let outcome = Outcome::parse(&rec[outcome_idx]).ok_or_else(|| StageError::Parse {
                row: line,
                column: OUTCOME_COLUMN.into(),
                message: format!("`{}` is not pass/reject", &rec[outcome_idx]),
            })?;
            if depth >= 1 && outcome.is_none() && !has_explicit {
                return Err(StageError::Parse {
                    row: line,
                    column: OUTCOME_COLUMN.into(),
                    message: format!("row reached stage {depth} but has no outcome"),
                });
            }
            if has_explicit {
                for (s, idx) in stage_idx.iter().enumerate() {
                    let idx = idx.expect("checked above");
                    let v = Outcome::parse(&rec[idx]).ok_or_else(|| StageError::Parse {
                        row: line,
                        column: stage_outcome_column(s + 1),
                        message: format!("`{}` is not pass/reject", &rec[idx]),
                    })?;
                    explicit.push(match v {
                        Some(Outcome::Pass) => 1,
                        Some(Outcome::Reject) => -1,
                        None => 0,
                    });
                }
            }
            let id = match row_id_idx {
                Some(idx) => rec[idx].trim().parse().map_err(|_| StageError::Parse {
                    row: line,
                    column: ROW_ID_COLUMN.into(),
                    message: format!("`{}` is not a row id", &rec[idx]),
                })?,
                None => r,
            };
            let mut row = Vec::with_capacity(columns.len());
            for (c, &idx) in columns.iter().zip(&col_idx) {
                let text = rec[idx].trim();
                if c.stage > depth {
                    row.push(RawCell::Missing);
                    continue;
                }
                let parse_err = |message: String| StageError::Parse {
                    row: line,
                    column: c.name.clone(),
                    message,
                };
                if text.is_empty() {
                    return Err(parse_err("observed cell is empty".into()));
                }
                let cell = match c.kind {
                    RawKind::Continuous => match text.parse::<f64>() {
                        Ok(v) if v.is_finite() => RawCell::Number(v),
                        _ => return Err(parse_err(format!("`{text}` is not a finite number"))),
                    },
                    RawKind::Binary => match text {
                        "0" | "0.0" | "false" => RawCell::Number(0.0),
                        "1" | "1.0" | "true" => RawCell::Number(1.0),
                        _ => return Err(parse_err(format!("`{text}` is not binary (0/1)"))),
                    },
                    RawKind::Categorical => RawCell::Text(text.to_string()),
                };
                row.push(cell);
            }
            cells.push(row);
            ids.push(id);
            depths.push(depth);
            outcomes.push(outcome);
        }
        if cells.is_empty() {
            return Err(StageError::Parse {
                row: 1,
                column: String::new(),
                message: "no data rows".into(),
            });
        }
        let n = cells.len();
        let explicit = if has_explicit {
            Some(Array2::from_shape_vec((n, s_max), explicit).expect("row-major fill"))
        } else {
            None
        };
        let rows = RowOutcomes::new(ids, depths, outcomes, explicit)?;
        let mut ordered = schema.clone();
        ordered.columns = columns.into_iter().cloned().collect();
        Ok(Self {
            schema: ordered,
            cells,
            rows,
        })
    }

    pub fn schema(&self) -> &SchemaFile {
        &self.schema
    }

    pub fn rows(&self) -> &RowOutcomes {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Treat the named columns as categorical.
    pub fn mark_categorical(&mut self, names: &[String]) -> Result<()> {
        for name in names {
            let col = self
                .schema
                .columns
                .iter_mut()
                .position(|c| &c.name == name)
                .ok_or_else(|| StageError::validation(format!("one-hot column `{name}` not in schema")))?;
            self.schema.columns[col].kind = RawKind::Categorical;
            for row in &mut self.cells {
                if let RawCell::Number(v) = row[col] {
                    row[col] = RawCell::Text(format_value(v));
                }
            }
        }
        Ok(())
    }

    /// Stable digest of the table content.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.schema).unwrap_or_default());
        for (i, row) in self.cells.iter().enumerate() {
            h.update(self.rows.row_ids[i].to_le_bytes());
            h.update(self.rows.depth[i].to_le_bytes());
            h.update([match self.rows.outcome[i] {
                None => 0u8,
                Some(Outcome::Pass) => 1,
                Some(Outcome::Reject) => 2,
            }]);
            if let Some(e) = self.rows.explicit_row(i) {
                h.update(e.iter().map(|v| *v as u8).collect::<Vec<u8>>());
            }
            for c in row {
                match c {
                    RawCell::Missing => h.update([0u8]),
                    RawCell::Number(v) => {
                        h.update([1u8]);
                        h.update(v.to_bits().to_le_bytes());
                    }
                    RawCell::Text(t) => {
                        h.update([2u8]);
                        h.update(t.as_bytes());
                        h.update([0u8]);
                    }
                }
            }
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ColumnPlan {
    Continuous { mean: f64, scale: f64 },
    Binary,
    Categorical { categories: Vec<String> },
}

/// Fitted column encoding: one-hot vocabularies and standardisation
/// statistics. Fit on training rows, then applied to any rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEncoder {
    source: SchemaFile,
    plans: Vec<ColumnPlan>,
    schema: StageSchema,
}

impl FeatureEncoder {
    /// Fit on `rows` of `raw`. Standardisation statistics use observed
    /// entries only.
    pub fn fit(raw: &RawTable, rows: &[usize], standardize: bool) -> Result<Self> {
        let source = raw.schema.clone();
        let mut plans = Vec::with_capacity(source.columns.len());
        for (j, col) in source.columns.iter().enumerate() {
            let plan = match col.kind {
                RawKind::Continuous => {
                    let vals: Vec<f64> = rows
                        .iter()
                        .filter_map(|&i| match raw.cells[i][j] {
                            RawCell::Number(v) => Some(v),
                            _ => None,
                        })
                        .collect();
                    if standardize && !vals.is_empty() {
                        let m = vals.iter().sum::<f64>() / vals.len() as f64;
                        let var =
                            vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64;
                        let sd = var.sqrt();
                        ColumnPlan::Continuous {
                            mean: m,
                            scale: if sd > 0.0 { sd } else { 1.0 },
                        }
                    } else {
                        ColumnPlan::Continuous { mean: 0.0, scale: 1.0 }
                    }
                }
                RawKind::Binary => ColumnPlan::Binary,
                RawKind::Categorical => {
                    let cats: BTreeSet<String> = rows
                        .iter()
                        .filter_map(|&i| match &raw.cells[i][j] {
                            RawCell::Text(t) => Some(t.clone()),
                            _ => None,
                        })
                        .collect();
                    if cats.is_empty() {
                        return Err(StageError::validation(format!(
                            "categorical column `{}` has no observed values to build a vocabulary",
                            col.name
                        )));
                    }
                    ColumnPlan::Categorical {
                        categories: cats.into_iter().collect(),
                    }
                }
            };
            plans.push(plan);
        }
        let schema = expanded_schema(&source, &plans)?;
        Ok(Self {
            source,
            plans,
            schema,
        })
    }

    /// Schema after one-hot expansion.
    pub fn schema(&self) -> &StageSchema {
        &self.schema
    }

    pub fn source_schema(&self) -> &SchemaFile {
        &self.source
    }

    /// Encode `rows` of `raw`. Categories unseen during fitting map to the
    /// all-zeros code.
    pub fn encode(&self, raw: &RawTable, rows: &[usize]) -> Result<FunnelDataset> {
        if raw.schema.columns.len() != self.source.columns.len()
            || raw
                .schema
                .columns
                .iter()
                .zip(&self.source.columns)
                .any(|(a, b)| a.name != b.name || a.stage != b.stage)
        {
            return Err(StageError::validation(
                "table columns do not match the columns the encoder was fit on",
            ));
        }
        let d = self.schema.total_width();
        let mut features = Array2::<f64>::zeros((rows.len(), d));
        for (r, &i) in rows.iter().enumerate() {
            let mut out = 0;
            for (j, plan) in self.plans.iter().enumerate() {
                let cell = &raw.cells[i][j];
                match plan {
                    ColumnPlan::Continuous { mean, scale } => {
                        if let RawCell::Number(v) = cell {
                            features[(r, out)] = (v - mean) / scale;
                        } else if let RawCell::Text(t) = cell {
                            return Err(StageError::Parse {
                                row: i + 1,
                                column: self.source.columns[j].name.clone(),
                                message: format!("`{t}` is not numeric"),
                            });
                        }
                        out += 1;
                    }
                    ColumnPlan::Binary => {
                        if let RawCell::Number(v) = cell {
                            features[(r, out)] = *v;
                        }
                        out += 1;
                    }
                    ColumnPlan::Categorical { categories } => {
                        let text = match cell {
                            RawCell::Text(t) => Some(t.clone()),
                            RawCell::Number(v) => Some(format_value(*v)),
                            RawCell::Missing => None,
                        };
                        if let Some(t) = text {
                            if let Ok(k) = categories.binary_search(&t) {
                                features[(r, out + k)] = 1.0;
                            }
                        }
                        out += categories.len();
                    }
                }
            }
        }
        FunnelDataset::new(self.schema.clone(), features, raw.rows.select(rows))
    }
}

fn expanded_schema(source: &SchemaFile, plans: &[ColumnPlan]) -> Result<StageSchema> {
    let mut names = Vec::new();
    let mut kinds = Vec::new();
    let mut per_stage = vec![0usize; source.stages.len()];
    for (col, plan) in source.columns.iter().zip(plans) {
        match plan {
            ColumnPlan::Continuous { .. } => {
                names.push(col.name.clone());
                kinds.push(ColumnKind::Continuous);
                per_stage[col.stage] += 1;
            }
            ColumnPlan::Binary => {
                names.push(col.name.clone());
                kinds.push(ColumnKind::Binary);
                per_stage[col.stage] += 1;
            }
            ColumnPlan::Categorical { categories } => {
                for c in categories {
                    names.push(format!("{}={}", col.name, c));
                    kinds.push(ColumnKind::Binary);
                }
                per_stage[col.stage] += categories.len();
            }
        }
    }
    let mut acc = 0;
    let stages = source
        .stages
        .iter()
        .zip(&per_stage)
        .map(|(s, n)| {
            acc += n;
            StageSpec {
                name: s.name.clone(),
                cumulative_features: acc,
            }
        })
        .collect();
    StageSchema::new(
        stages,
        names,
        kinds,
        source.positive_label.clone().unwrap_or_else(|| "pass".into()),
    )
}

#[derive(Debug, Clone, Default)]
pub struct IngestOptions {
    pub onehot_columns: Vec<String>,
    pub standardize: bool,
}

/// Read, one-hot expand and (optionally) standardise a funnel CSV.
pub fn ingest_csv(
    path: impl AsRef<Path>,
    schema: &SchemaFile,
    options: &IngestOptions,
) -> Result<FunnelDataset> {
    ingest_csv_with_encoder(path, schema, options).map(|(ds, _)| ds)
}

/// Like [`ingest_csv`], also returning the fitted encoder so the same
/// encoding can be applied to other files.
pub fn ingest_csv_with_encoder(
    path: impl AsRef<Path>,
    schema: &SchemaFile,
    options: &IngestOptions,
) -> Result<(FunnelDataset, FeatureEncoder)> {
    let mut raw = RawTable::read_csv(path, schema)?;
    raw.mark_categorical(&options.onehot_columns)?;
    let all: Vec<usize> = (0..raw.len()).collect();
    let encoder = FeatureEncoder::fit(&raw, &all, options.standardize)?;
    let ds = encoder.encode(&raw, &all)?;
    Ok((ds, encoder))
}

/// Column view of the observed entries of column `j`.
pub fn observed_column(ds: &FunnelDataset, j: usize) -> Vec<f64> {
    let f: ArrayView2<f64> = ds.features().view();
    (0..ds.len())
        .filter(|&i| ds.is_observed(i, j))
        .map(|i| f[(i, j)])
        .collect()
}
