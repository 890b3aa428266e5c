//! Partitioning prediction points into train/val/eval splits.

use super::{PredictionPoint, TimebaseError};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Cut the globally ordered point list at the fraction boundaries.
    #[default]
    Chronological,
    /// Assign whole slices to splits greedily, in chronological order.
    BySlice,
}

/// Disjoint ordered point lists; their union is the input list.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<PredictionPoint>,
    pub val: Vec<PredictionPoint>,
    pub eval: Vec<PredictionPoint>,
    pub fractions: [f64; 3],
    pub mode: SplitMode,
}

impl SplitAssignment {
    pub fn of(&self, split: Split) -> &[PredictionPoint] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Eval => &self.eval,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.eval.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Splits an ordered point list by fractions (train, val, eval).
///
/// Chronological mode takes the first ⌊f_train·n⌋ points, then the next
/// ⌊f_val·n⌋, and the remainder. By-slice mode walks slices in order,
/// filling each split until its point budget (f·n) is met. A non-zero
/// fraction that ends up with zero points is an error.
pub fn split_points(
    points: &[PredictionPoint],
    fractions: (f64, f64, f64),
    mode: SplitMode,
) -> Result<SplitAssignment, TimebaseError> {
    let f = [fractions.0, fractions.1, fractions.2];
    if f.iter().any(|&x| x < 0.0) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(TimebaseError::BadFractions(f));
    }
    let n = points.len();
    let mut parts: [Vec<PredictionPoint>; 3] = Default::default();

    match mode {
        SplitMode::Chronological => {
            let n_train = (f[0] * n as f64).floor() as usize;
            let n_val = (f[1] * n as f64).floor() as usize;
            parts[0] = points[..n_train].to_vec();
            parts[1] = points[n_train..n_train + n_val].to_vec();
            parts[2] = points[n_train + n_val..].to_vec();
        }
        SplitMode::BySlice => {
            let budgets = [f[0] * n as f64, f[1] * n as f64];
            let mut i = 0;
            while i < n {
                // the next whole slice's worth of points
                let slice = points[i].slice;
                let mut j = i;
                while j < n && points[j].slice == slice {
                    j += 1;
                }
                let dest = if (parts[0].len() as f64) < budgets[0] {
                    0
                } else if (parts[1].len() as f64) < budgets[1] {
                    1
                } else {
                    2
                };
                parts[dest].extend_from_slice(&points[i..j]);
                i = j;
            }
        }
    }

    for (part, (&frac, name)) in parts
        .iter()
        .zip(f.iter().zip(["train", "val", "eval"]))
    {
        if frac > 0.0 && part.is_empty() {
            return Err(TimebaseError::DegenerateSplit(name));
        }
    }

    let [train, val, eval] = parts;
    Ok(SplitAssignment {
        train,
        val,
        eval,
        fractions: f,
        mode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(per_slice: &[usize]) -> Vec<PredictionPoint> {
        per_slice
            .iter()
            .enumerate()
            .flat_map(|(slice, &n)| (0..n).map(move |t| PredictionPoint { slice, t }))
            .collect()
    }

    #[test]
    fn chronological_fraction_cut() {
        let points = pts(&[10]);
        let s = split_points(&points, (0.6, 0.2, 0.2), SplitMode::Chronological).unwrap();
        assert_eq!(s.train.len(), 6);
        assert_eq!(s.val.len(), 2);
        assert_eq!(s.eval.len(), 2);
        assert_eq!(s.train[5].t, 5);
        assert_eq!(s.val[0].t, 6);
        assert_eq!(s.eval[1].t, 9);
    }

    #[test]
    fn all_train_permits_empty_others() {
        let points = pts(&[7]);
        let s = split_points(&points, (1.0, 0.0, 0.0), SplitMode::Chronological).unwrap();
        assert_eq!(s.train.len(), 7);
        assert!(s.val.is_empty() && s.eval.is_empty());
    }

    #[test]
    fn by_slice_greedy_budgets() {
        // slices of 50/30/20 points at (0.5, 0.25, 0.25):
        // slice 1 fills train, slice 2 fills val, slice 3 goes to eval
        let points = pts(&[50, 30, 20]);
        let s = split_points(&points, (0.5, 0.25, 0.25), SplitMode::BySlice).unwrap();
        assert!(s.train.iter().all(|p| p.slice == 0) && s.train.len() == 50);
        assert!(s.val.iter().all(|p| p.slice == 1) && s.val.len() == 30);
        assert!(s.eval.iter().all(|p| p.slice == 2) && s.eval.len() == 20);
    }

    #[test]
    fn splits_partition_the_input() {
        let cases = [
            (pts(&[13, 8, 21]), (0.7, 0.2, 0.1), SplitMode::Chronological),
            (pts(&[20, 12, 8]), (0.5, 0.3, 0.2), SplitMode::BySlice),
        ];
        for (points, fractions, mode) in cases {
            let s = split_points(&points, fractions, mode).unwrap();
            let mut merged = s.train.clone();
            merged.extend_from_slice(&s.val);
            merged.extend_from_slice(&s.eval);
            merged.sort();
            assert_eq!(merged, points);
        }
    }

    #[test]
    fn by_slice_overshoot_starves_later_splits() {
        // one huge final slice exhausts the train budget past the cut,
        // leaving val empty — reported rather than silently accepted
        let points = pts(&[13, 8, 21]);
        let e = split_points(&points, (0.7, 0.2, 0.1), SplitMode::BySlice);
        assert!(matches!(e, Err(TimebaseError::DegenerateSplit("val"))));
    }

    #[test]
    fn degenerate_split_is_rejected() {
        let points = pts(&[1]);
        let e = split_points(&points, (0.5, 0.25, 0.25), SplitMode::Chronological);
        assert!(matches!(e, Err(TimebaseError::DegenerateSplit(_))));
    }

    #[test]
    fn bad_fractions_rejected() {
        let points = pts(&[4]);
        assert!(matches!(
            split_points(&points, (0.5, 0.6, 0.2), SplitMode::Chronological),
            Err(TimebaseError::BadFractions(_))
        ));
        assert!(matches!(
            split_points(&points, (1.2, -0.4, 0.2), SplitMode::Chronological),
            Err(TimebaseError::BadFractions(_))
        ));
    }
}
