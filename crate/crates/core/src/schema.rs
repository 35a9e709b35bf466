//! Stage layout of a funnel: which feature columns become available at
//! which stage.
//!
//! Stages are indexed `0..=S`. Stage 0 is the intake stage: its features are
//! known for every row but it carries no decision. Stages `1..=S` each carry a
//! pass/reject decision, so a label row has `S` entries. Column ranges are
//! cumulative: stage `s` exposes columns `0..d^s`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, StageError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub name: String,
    /// Cumulative feature count `d^s`.
    pub cumulative_features: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSchema {
    stages: Vec<StageSpec>,
    column_names: Vec<String>,
    column_kinds: Vec<ColumnKind>,
    positive_label: String,
}

impl StageSchema {
    pub fn new(
        stages: Vec<StageSpec>,
        column_names: Vec<String>,
        column_kinds: Vec<ColumnKind>,
        positive_label: impl Into<String>,
    ) -> Result<Self> {
        if stages.len() < 2 {
            return Err(StageError::validation(
                "a schema needs an intake stage and at least one decision stage",
            ));
        }
        if stages[0].cumulative_features == 0 {
            return Err(StageError::validation("stage 0 must expose at least one feature"));
        }
        for w in stages.windows(2) {
            if w[1].cumulative_features <= w[0].cumulative_features {
                return Err(StageError::validation(format!(
                    "stage `{}` does not add features (d = {} after {})",
                    w[1].name, w[1].cumulative_features, w[0].cumulative_features
                )));
            }
        }
        let total = stages.last().map(|s| s.cumulative_features).unwrap_or(0);
        if column_kinds.len() != total || column_names.len() != total {
            return Err(StageError::validation(format!(
                "schema declares {total} features but lists {} kinds and {} names",
                column_kinds.len(),
                column_names.len()
            )));
        }
        Ok(Self {
            stages,
            column_names,
            column_kinds,
            positive_label: positive_label.into(),
        })
    }

    /// Schema with only continuous columns, named `f0, f1, ...`.
    pub fn continuous(widths_per_stage: &[usize]) -> Result<Self> {
        let mut stages = Vec::with_capacity(widths_per_stage.len());
        let mut acc = 0;
        for (s, w) in widths_per_stage.iter().enumerate() {
            acc += w;
            stages.push(StageSpec {
                name: format!("stage{s}"),
                cumulative_features: acc,
            });
        }
        let names = (0..acc).map(|j| format!("f{j}")).collect();
        Self::new(stages, names, vec![ColumnKind::Continuous; acc], "pass")
    }

    /// Number of decision stages `S`.
    pub fn num_stages(&self) -> usize {
        self.stages.len() - 1
    }

    /// Cumulative width `d^s` for `s` in `0..=S`.
    pub fn width(&self, stage: usize) -> usize {
        self.stages[stage].cumulative_features
    }

    /// `d^S`.
    pub fn total_width(&self) -> usize {
        self.stages.last().map(|s| s.cumulative_features).unwrap_or(0)
    }

    pub fn stages(&self) -> &[StageSpec] {
        &self.stages
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn column_kinds(&self) -> &[ColumnKind] {
        &self.column_kinds
    }

    pub fn positive_label(&self) -> &str {
        &self.positive_label
    }

    /// Stage at which column `j` becomes available.
    pub fn stage_of_column(&self, j: usize) -> usize {
        self.stages
            .iter()
            .position(|s| j < s.cumulative_features)
            .unwrap_or(self.stages.len() - 1)
    }

    /// Schema in the on-disk layout (no categorical columns left).
    pub fn to_file(&self) -> SchemaFile {
        let mut prev = 0;
        let stages = self
            .stages
            .iter()
            .map(|s| {
                let n = s.cumulative_features - prev;
                prev = s.cumulative_features;
                StageEntry {
                    name: s.name.clone(),
                    num_features: n,
                }
            })
            .collect();
        let columns = self
            .column_names
            .iter()
            .zip(&self.column_kinds)
            .enumerate()
            .map(|(j, (name, kind))| ColumnEntry {
                name: name.clone(),
                kind: match kind {
                    ColumnKind::Continuous => RawKind::Continuous,
                    ColumnKind::Binary => RawKind::Binary,
                },
                stage: self.stage_of_column(j),
            })
            .collect();
        SchemaFile {
            stages,
            columns,
            positive_label: Some(self.positive_label.clone()),
        }
    }
}

/// Column kind as written in a schema file. Categorical columns are one-hot
/// expanded at ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RawKind {
    Continuous,
    Binary,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageEntry {
    pub name: String,
    pub num_features: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnEntry {
    pub name: String,
    pub kind: RawKind,
    pub stage: usize,
}

/// JSON schema file: `stages` with per-stage raw column counts and `columns`
/// with name, kind and owning stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaFile {
    pub stages: Vec<StageEntry>,
    pub columns: Vec<ColumnEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive_label: Option<String>,
}

impl SchemaFile {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: SchemaFile = serde_json::from_str(&text)?;
        file.validate()?;
        Ok(file)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.len() < 2 {
            return Err(StageError::validation(
                "schema file needs at least two stages (intake plus one decision stage)",
            ));
        }
        let mut counts = vec![0usize; self.stages.len()];
        for c in &self.columns {
            if c.stage >= self.stages.len() {
                return Err(StageError::validation(format!(
                    "column `{}` refers to stage {} but only {} stages exist",
                    c.name,
                    c.stage,
                    self.stages.len()
                )));
            }
            counts[c.stage] += 1;
        }
        for (s, (entry, n)) in self.stages.iter().zip(&counts).enumerate() {
            if entry.num_features != *n {
                return Err(StageError::validation(format!(
                    "stage {s} (`{}`) declares {} features but {} columns reference it",
                    entry.name, entry.num_features, n
                )));
            }
            if *n == 0 {
                return Err(StageError::validation(format!(
                    "stage {s} (`{}`) has no features",
                    entry.name
                )));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for c in &self.columns {
            if c.name.starts_with("__") {
                return Err(StageError::validation(format!(
                    "column name `{}` uses the reserved `__` prefix",
                    c.name
                )));
            }
            if !seen.insert(c.name.as_str()) {
                return Err(StageError::validation(format!("duplicate column `{}`", c.name)));
            }
        }
        Ok(())
    }

    /// Columns ordered by stage, keeping file order within a stage.
    pub fn ordered_columns(&self) -> Vec<&ColumnEntry> {
        let mut cols: Vec<&ColumnEntry> = self.columns.iter().collect();
        cols.sort_by_key(|c| c.stage);
        cols
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len() - 1
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::util::atomic_write(path, |w| {
            serde_json::to_writer_pretty(w, self)?;
            Ok(())
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cumulative_widths_must_increase() {
        let stages = vec![
            StageSpec { name: "a".into(), cumulative_features: 2 },
            StageSpec { name: "b".into(), cumulative_features: 2 },
        ];
        let err = StageSchema::new(
            stages,
            vec!["x".into(), "y".into()],
            vec![ColumnKind::Continuous; 2],
            "pass",
        )
        .unwrap_err();
        assert!(matches!(err, StageError::Validation(_)));
    }

    #[test]
    fn kinds_must_cover_every_column() {
        let stages = vec![
            StageSpec { name: "a".into(), cumulative_features: 1 },
            StageSpec { name: "b".into(), cumulative_features: 3 },
        ];
        assert!(StageSchema::new(stages, vec!["x".into(); 3], vec![ColumnKind::Binary; 2], "p")
            .is_err());
    }

    #[test]
    fn stage_of_column_follows_ranges() {
        let s = StageSchema::continuous(&[2, 1, 3]).unwrap();
        assert_eq!(s.num_stages(), 2);
        assert_eq!(s.total_width(), 6);
        let stages: Vec<usize> = (0..6).map(|j| s.stage_of_column(j)).collect();
        assert_eq!(stages, vec![0, 0, 1, 2, 2, 2]);
    }

    #[test]
    fn schema_file_round_trip() {
        let s = StageSchema::continuous(&[2, 1]).unwrap();
        let file = s.to_file();
        file.validate().unwrap();
        let text = serde_json::to_string(&file).unwrap();
        let back: SchemaFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back, file);
    }

    #[test]
    fn schema_file_count_mismatch_is_rejected() {
        let file = SchemaFile {
            stages: vec![
                StageEntry { name: "a".into(), num_features: 1 },
                StageEntry { name: "b".into(), num_features: 2 },
            ],
            columns: vec![
                ColumnEntry { name: "x".into(), kind: RawKind::Continuous, stage: 0 },
                ColumnEntry { name: "y".into(), kind: RawKind::Continuous, stage: 1 },
            ],
            positive_label: None,
        };
        assert!(file.validate().is_err());
    }
}
