use ndarray::Array2;

use crate::error::{Result, StageError};
use crate::labels::{FillPolicy, LabelMatrix, APPROVE, REJECT};

/// Last-stage reading of a row's history.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MulticlassLabel {
    /// Rejected at stage `c`, `1 <= c <= S`.
    RejectedAt(usize),
    /// Passed every stage.
    ApprovedAll,
    /// Still in the process after passing `passed` stages.
    InProgress { passed: usize },
}

impl MulticlassLabel {
    /// Integer class with stages 1-indexed: `c` for rejected at `c`, `S + 1`
    /// for approved everywhere.
    pub fn from_class(class: usize, num_stages: usize) -> Result<Self> {
        match class {
            c if c == num_stages + 1 => Ok(MulticlassLabel::ApprovedAll),
            c if (1..=num_stages).contains(&c) => Ok(MulticlassLabel::RejectedAt(c)),
            c => Err(StageError::validation(format!(
                "class {c} outside 1..={} for {num_stages} stages",
                num_stages + 1
            ))),
        }
    }
}

/// Turn multiclass histories into multi-label rows over `{+1, 0, -1}`.
pub fn tml(labels: &[MulticlassLabel], num_stages: usize, policy: FillPolicy) -> Result<LabelMatrix> {
    let mut values = Array2::<i8>::zeros((labels.len(), num_stages));
    for (i, label) in labels.iter().enumerate() {
        let mut row = values.row_mut(i);
        match *label {
            MulticlassLabel::ApprovedAll => row.fill(APPROVE),
            MulticlassLabel::RejectedAt(c) => {
                if !(1..=num_stages).contains(&c) {
                    return Err(StageError::validation(format!(
                        "row {i}: rejection stage {c} outside 1..={num_stages}"
                    )));
                }
                for s in 0..c - 1 {
                    row[s] = APPROVE;
                }
                row[c - 1] = REJECT;
                if policy == FillPolicy::PropagateReject {
                    for s in c..num_stages {
                        row[s] = REJECT;
                    }
                }
            }
            MulticlassLabel::InProgress { passed } => {
                if passed > num_stages {
                    return Err(StageError::validation(format!(
                        "row {i}: passed {passed} of {num_stages} stages"
                    )));
                }
                for s in 0..passed {
                    row[s] = APPROVE;
                }
            }
        }
    }
    LabelMatrix::new(values)
}
