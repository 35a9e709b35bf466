//! Per-stage label matrices over {+1, 0, -1} and the sequence rules that
//! valid label rows obey.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::dataset::{Outcome, RowOutcomes};
use crate::error::{Result, StageError};

pub const APPROVE: i8 = 1;
pub const MISSING: i8 = 0;
pub const REJECT: i8 = -1;

/// How stages after a rejection are filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillPolicy {
    /// A rejection at stage `k` implies a rejection at every later stage.
    #[default]
    PropagateReject,
    /// Stages after the rejecting one stay missing.
    MaskAfterEvent,
}

impl std::str::FromStr for FillPolicy {
    type Err = StageError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "propagate" | "propagate_reject" => Ok(FillPolicy::PropagateReject),
            "mask" | "mask_after_event" => Ok(FillPolicy::MaskAfterEvent),
            other => Err(StageError::validation(format!("unknown fill policy `{other}`"))),
        }
    }
}

/// `n x S` matrix of approve (+1), missing (0) and reject (-1) entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatrix {
    values: Array2<i8>,
}

impl LabelMatrix {
    pub fn new(values: Array2<i8>) -> Result<Self> {
        for (a, row) in values.rows().into_iter().enumerate() {
            if let Some(v) = row.iter().find(|v| !matches!(**v, -1..=1)) {
                return Err(StageError::validation(format!(
                    "label row {a} contains {v}, expected one of -1, 0, 1"
                )));
            }
            if !known_entries_consistent(row) {
                return Err(StageError::validation(format!(
                    "label row {a} has an approval after a rejection: {:?}",
                    row.to_vec()
                )));
            }
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Array2<i8> {
        &self.values
    }

    pub fn known_mask(&self) -> Array2<bool> {
        self.values.mapv(|v| v != MISSING)
    }

    pub fn num_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_stages(&self) -> usize {
        self.values.ncols()
    }

    /// Labels as `f64` for loss computations.
    pub fn as_f64(&self) -> Array2<f64> {
        self.values.mapv(f64::from)
    }

    pub fn select_rows(&self, rows: &[usize]) -> LabelMatrix {
        LabelMatrix {
            values: self.values.select(ndarray::Axis(0), rows),
        }
    }

    /// Number of known entries in stage column `s` (0-based).
    pub fn known_count(&self, s: usize) -> usize {
        self.values.column(s).iter().filter(|v| **v != MISSING).count()
    }
}

/// No known -1 is followed by a known +1.
pub fn known_entries_consistent(row: ArrayView1<i8>) -> bool {
    let mut seen_reject = false;
    for &v in row {
        match v {
            REJECT => seen_reject = true,
            APPROVE if seen_reject => return false,
            _ => {}
        }
    }
    true
}

/// Whether a fully signed row is a thermometer string `+1..+1 -1..-1`.
pub fn is_thermometer(row: &[i8]) -> bool {
    row.iter().all(|v| *v == APPROVE || *v == REJECT)
        && known_entries_consistent(ArrayView1::from(row))
}

/// Keep approvals up to the first rejection and reject everything after it.
pub fn repair_thermometer(row: &mut [i8]) {
    let mut rejected = false;
    for v in row.iter_mut() {
        if *v != APPROVE {
            rejected = true;
        }
        if rejected {
            *v = REJECT;
        }
    }
}

/// Thermometer row for multiclass class `c`: +1 on the first `c` stages,
/// -1 from stage `c` on.
pub fn thermometer_from_class(class: usize, num_stages: usize) -> Vec<i8> {
    (0..num_stages)
        .map(|s| if s < class { APPROVE } else { REJECT })
        .collect()
}

/// Class of a label row when it determines one: the number of leading
/// approvals, provided every later stage is known or follows a rejection.
pub fn class_of_row(row: ArrayView1<i8>) -> Option<usize> {
    let mut passed = 0;
    for &v in row {
        match v {
            APPROVE => passed += 1,
            REJECT => return Some(passed),
            _ => return None,
        }
    }
    Some(passed)
}

/// Label matrix implied by each row's observation depth and outcomes.
///
/// A row of depth `k` that passed gets `+1` on stages `1..=k`; one rejected
/// at depth `k` gets `+1` before `k`, `-1` at `k`, and the fill policy decides
/// the rest. Depth-0 rows were never evaluated. Rows carrying explicit
/// per-stage outcomes use those, with the same fill policy after the first
/// rejection.
pub fn to_label_matrix(rows: &RowOutcomes, num_stages: usize, policy: FillPolicy) -> LabelMatrix {
    let n = rows.len();
    let mut values = Array2::<i8>::zeros((n, num_stages));
    for i in 0..n {
        let mut row = values.row_mut(i);
        if let Some(explicit) = rows.explicit_row(i) {
            row.assign(&explicit);
        } else {
            let depth = rows.depth[i];
            if depth == 0 {
                continue;
            }
            match rows.outcome[i] {
                Some(Outcome::Pass) => {
                    for s in 0..depth {
                        row[s] = APPROVE;
                    }
                }
                Some(Outcome::Reject) | None => {
                    for s in 0..depth - 1 {
                        row[s] = APPROVE;
                    }
                    row[depth - 1] = REJECT;
                }
            }
        }
        if policy == FillPolicy::PropagateReject {
            let mut rejected = false;
            for v in row.iter_mut() {
                if *v == REJECT {
                    rejected = true;
                } else if rejected {
                    *v = REJECT;
                }
            }
        }
    }
    LabelMatrix { values }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn one_row(depth: usize, outcome: Option<Outcome>, policy: FillPolicy) -> Vec<i8> {
        let rows = RowOutcomes::new(vec![0], vec![depth], vec![outcome], None).unwrap();
        to_label_matrix(&rows, 4, policy).values().row(0).to_vec()
    }

    #[test]
    fn pass_rows_are_approved_up_to_depth() {
        assert_eq!(
            one_row(2, Some(Outcome::Pass), FillPolicy::PropagateReject),
            vec![1, 1, 0, 0]
        );
    }

    #[test]
    fn rejection_propagates_or_masks() {
        assert_eq!(
            one_row(2, Some(Outcome::Reject), FillPolicy::PropagateReject),
            vec![1, -1, -1, -1]
        );
        assert_eq!(
            one_row(2, Some(Outcome::Reject), FillPolicy::MaskAfterEvent),
            vec![1, -1, 0, 0]
        );
    }

    #[test]
    fn depth_zero_is_unlabelled() {
        assert_eq!(one_row(0, None, FillPolicy::PropagateReject), vec![0, 0, 0, 0]);
    }

    #[test]
    fn matrix_rejects_approval_after_rejection() {
        assert!(LabelMatrix::new(array![[-1i8, 1]]).is_err());
        assert!(LabelMatrix::new(array![[-1i8, 0, 1]]).is_err());
        assert!(LabelMatrix::new(array![[1i8, 0, -1]]).is_ok());
        assert!(LabelMatrix::new(array![[2i8, 0]]).is_err());
    }

    #[test]
    fn known_mask_tracks_nonzero() {
        let m = LabelMatrix::new(array![[1i8, 0], [-1, -1]]).unwrap();
        assert_eq!(m.known_mask(), array![[true, false], [true, true]]);
        assert_eq!(m.known_count(1), 1);
    }

    #[test]
    fn repair_keeps_longest_valid_prefix() {
        let mut r = vec![1i8, -1, 1, 1];
        repair_thermometer(&mut r);
        assert_eq!(r, vec![1, -1, -1, -1]);
        let mut r = vec![-1i8, 1];
        repair_thermometer(&mut r);
        assert_eq!(r, vec![-1, -1]);
    }

    #[test]
    fn class_round_trips_through_thermometer() {
        for c in 0..=4 {
            let row = thermometer_from_class(c, 4);
            assert!(is_thermometer(&row));
            assert_eq!(class_of_row(ArrayView1::from(&row[..])), Some(c));
        }
        assert_eq!(class_of_row(ArrayView1::from(&[1i8, 0, 0][..])), None);
        assert_eq!(class_of_row(ArrayView1::from(&[1i8, -1, 0][..])), Some(1));
    }
}
