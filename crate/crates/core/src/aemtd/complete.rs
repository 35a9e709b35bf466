use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use ndarray::{s, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::model::AemtdModel;
use crate::dataset::{
    format_value, stage_outcome_column, FunnelDataset, Outcome, RowOutcomes, DEPTH_COLUMN,
    OUTCOME_COLUMN, ROW_ID_COLUMN,
};
use crate::error::{Result, StageError};
use crate::labels::{FillPolicy, LabelMatrix};
use crate::util::atomic_write;

pub const GENERATED_COLUMN: &str = "__generated_cols";

/// What fills the observed part of a completed row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplicePolicy {
    /// Observed columns from the reconstruction head, the rest from the
    /// future head.
    #[default]
    PaperFaithful,
    /// Observed columns keep their original values.
    KeepObserved,
}

impl FromStr for SplicePolicy {
    type Err = StageError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" | "paper_faithful" | "paper-faithful" => Ok(SplicePolicy::PaperFaithful),
            "keep" | "keep_observed" | "keep-observed" => Ok(SplicePolicy::KeepObserved),
            _ => Err(StageError::validation(format!("unknown splice policy `{s}`"))),
        }
    }
}

/// Every row with all `d^S` columns filled. `provenance[(i, j)]` is true when
/// the cell was originally observed.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletedDataset {
    pub column_names: Vec<String>,
    pub features: Array2<f64>,
    pub provenance: Array2<bool>,
    pub rows: RowOutcomes,
    pub num_stages: usize,
}

impl CompletedDataset {
    pub fn new(
        column_names: Vec<String>,
        features: Array2<f64>,
        provenance: Array2<bool>,
        rows: RowOutcomes,
        num_stages: usize,
    ) -> Result<Self> {
        if features.ncols() != column_names.len() || provenance.dim() != features.dim() {
            return Err(StageError::shape("completed features, names and provenance differ"));
        }
        if rows.len() != features.nrows() {
            return Err(StageError::shape("completed row metadata differs from row count"));
        }
        if let Some((i, _)) = features.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(StageError::Completion { row: rows.row_ids[i.0] });
        }
        if rows.depth.iter().any(|&d| d > num_stages) {
            return Err(StageError::validation("row depth beyond the stage count"));
        }
        Ok(Self {
            column_names,
            features,
            provenance,
            rows,
            num_stages,
        })
    }

    /// Fully observed data used as-is.
    pub fn from_observed(ds: &FunnelDataset) -> Self {
        Self {
            column_names: ds.schema().column_names().to_vec(),
            features: ds.features().clone(),
            provenance: ds.observation_mask(),
            rows: ds.rows().clone(),
            num_stages: ds.num_stages(),
        }
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn width(&self) -> usize {
        self.features.ncols()
    }

    pub fn label_matrix(&self, policy: FillPolicy) -> LabelMatrix {
        self.rows.label_matrix(self.num_stages, policy)
    }

    pub fn select(&self, rows: &[usize]) -> CompletedDataset {
        CompletedDataset {
            column_names: self.column_names.clone(),
            features: self.features.select(Axis(0), rows),
            provenance: self.provenance.select(Axis(0), rows),
            rows: self.rows.select(rows),
            num_stages: self.num_stages,
        }
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        atomic_write(path, |w| self.write_csv_to(w))
    }

    pub fn write_csv_to(&self, w: &mut dyn std::io::Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = self.column_names.clone();
        header.push(DEPTH_COLUMN.into());
        header.push(OUTCOME_COLUMN.into());
        if self.rows.explicit.is_some() {
            header.extend((1..=self.num_stages).map(stage_outcome_column));
        }
        header.push(ROW_ID_COLUMN.into());
        header.push(GENERATED_COLUMN.into());
        out.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.features.row(i).iter().map(|v| format_value(*v)).collect();
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
            let generated: Vec<String> = self
                .provenance
                .row(i)
                .iter()
                .enumerate()
                .filter(|(_, &o)| !o)
                .map(|(j, _)| j.to_string())
                .collect();
            rec.push(generated.join(";"));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    /// Parse the layout written by [`CompletedDataset::write_csv`]. Feature
    /// columns are every column whose name does not start with `__`.
    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let find = |name: &str| header.iter().position(|h| h == name);
        let feature_idx: Vec<usize> = (0..header.len()).filter(|&i| !header[i].starts_with("__")).collect();
        if feature_idx.is_empty() {
            return Err(StageError::validation("completed data has no feature columns"));
        }
        let depth_idx = find(DEPTH_COLUMN)
            .ok_or_else(|| StageError::validation(format!("reserved column `{DEPTH_COLUMN}` missing")))?;
        let outcome_idx = find(OUTCOME_COLUMN);
        let row_id_idx = find(ROW_ID_COLUMN);
        let generated_idx = find(GENERATED_COLUMN);
        let mut stage_idx = Vec::new();
        while let Some(i) = find(&stage_outcome_column(stage_idx.len() + 1)) {
            stage_idx.push(i);
        }

        let d = feature_idx.len();
        let mut values = Vec::new();
        let mut provenance = Vec::new();
        let mut ids = Vec::new();
        let mut depths = Vec::new();
        let mut outcomes = Vec::new();
        let mut explicit = Vec::new();
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = r + 1;
            let perr = |column: &str, message: String| StageError::Parse {
                row: line,
                column: column.to_string(),
                message,
            };
            for &j in &feature_idx {
                let text = rec[j].trim();
                match text.parse::<f64>() {
                    Ok(v) if v.is_finite() => values.push(v),
                    _ => return Err(perr(&header[j], format!("`{text}` is not a finite number"))),
                }
            }
            let mut observed = vec![true; d];
            if let Some(g) = generated_idx {
                for part in rec[g].split(';').map(str::trim).filter(|p| !p.is_empty()) {
                    match part.parse::<usize>() {
                        Ok(j) if j < d => observed[j] = false,
                        _ => return Err(perr(GENERATED_COLUMN, format!("`{part}` is not a column index"))),
                    }
                }
            }
            provenance.extend(observed);
            let depth_text = rec[depth_idx].trim();
            depths.push(
                depth_text
                    .parse::<usize>()
                    .map_err(|_| perr(DEPTH_COLUMN, format!("`{depth_text}` is not a depth")))?,
            );
            let outcome = match outcome_idx {
                Some(o) => Outcome::parse(&rec[o])
                    .ok_or_else(|| perr(OUTCOME_COLUMN, format!("`{}` is not pass/reject", &rec[o])))?,
                None => None,
            };
            outcomes.push(outcome);
            for (s, &k) in stage_idx.iter().enumerate() {
                let v = Outcome::parse(&rec[k])
                    .ok_or_else(|| perr(&stage_outcome_column(s + 1), format!("`{}` is not pass/reject", &rec[k])))?;
                explicit.push(match v {
                    Some(Outcome::Pass) => 1i8,
                    Some(Outcome::Reject) => -1,
                    None => 0,
                });
            }
            ids.push(match row_id_idx {
                Some(k) => rec[k]
                    .trim()
                    .parse()
                    .map_err(|_| perr(ROW_ID_COLUMN, format!("`{}` is not a row id", &rec[k])))?,
                None => r,
            });
        }
        let n = ids.len();
        if n == 0 {
            return Err(StageError::Parse {
                row: 1,
                column: String::new(),
                message: "no data rows".into(),
            });
        }
        let max_depth = depths.iter().copied().max().unwrap_or(0);
        let num_stages = if stage_idx.is_empty() { max_depth } else { stage_idx.len() };
        let explicit = if stage_idx.is_empty() {
            None
        } else {
            Some(Array2::from_shape_vec((n, stage_idx.len()), explicit).expect("row-major fill"))
        };
        let rows = RowOutcomes::new(ids, depths, outcomes, explicit)?;
        Self::new(
            feature_idx.iter().map(|&j| header[j].clone()).collect(),
            Array2::from_shape_vec((n, d), values).expect("row-major fill"),
            Array2::from_shape_vec((n, d), provenance).expect("row-major fill"),
            rows,
            num_stages,
        )
    }
}

/// Complete every row: encode its observed prefix at the mean embedding,
/// decode, and splice per `policy`.
pub fn complete(model: &AemtdModel, ds: &FunnelDataset, policy: SplicePolicy) -> Result<CompletedDataset> {
    if model.schema() != ds.schema() {
        return Err(StageError::validation("model schema differs from the dataset schema"));
    }
    let schema = ds.schema();
    let mut out = ds.features().clone();
    for s in 0..=ds.num_stages() {
        let range = ds.rows_reaching(s);
        let rows: Vec<usize> = range.filter(|&i| ds.observed_depth()[i] == s).collect();
        if rows.is_empty() {
            continue;
        }
        let w = schema.width(s);
        let mut input = ds.features().select(Axis(0), &rows);
        input.slice_mut(s![.., w..]).fill(0.0);
        let (mu, _) = model.encode(input.view())?;
        let (rec, fut) = model.decode(mu.view())?;
        for (k, &i) in rows.iter().enumerate() {
            if rec.row(k).iter().chain(fut.row(k).iter()).any(|v| !v.is_finite()) {
                return Err(StageError::Completion { row: ds.row_ids()[i] });
            }
            let mut target = out.row_mut(i);
            if policy == SplicePolicy::PaperFaithful {
                target.slice_mut(s![..w]).assign(&rec.slice(s![k, ..w]));
            }
            target.slice_mut(s![w..]).assign(&fut.slice(s![k, w..]));
        }
    }
    CompletedDataset::new(
        schema.column_names().to_vec(),
        out,
        ds.observation_mask(),
        ds.rows().clone(),
        ds.num_stages(),
    )
}
