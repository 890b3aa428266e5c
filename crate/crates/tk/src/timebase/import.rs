//! Table import: gap detection, grid validation, and gap interpolation.

use super::{ComponentDesc, Slice, TimeSeriesDataset, TimebaseError};
use crate::matrix::Matrix;
use chrono::{DateTime, NaiveDate, NaiveDateTime};
use std::collections::BTreeSet;
use std::path::Path;

/// A parsed timestamp-keyed numeric table, not yet validated against a grid.
#[derive(Debug, Clone)]
pub struct RawTable {
    /// UTC epoch seconds, as parsed (order not yet checked).
    pub timestamps: Vec<i64>,
    /// Named columns, each as long as `timestamps`.
    pub columns: Vec<(String, Vec<f64>)>,
}

/// Parses an ISO-8601 timestamp (offset or naive-UTC) to epoch seconds.
pub(crate) fn parse_timestamp(s: &str) -> Option<i64> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Some(d.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp());
    }
    None
}

/// Reads a CSV with header `timestamp,<component>,...` into a [`RawTable`].
pub fn read_csv_table(path: &Path) -> Result<RawTable, TimebaseError> {
    let mut reader = csv::Reader::from_path(path).map_err(io_of_csv)?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(io_of_csv)?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.first().map(String::as_str) != Some("timestamp") {
        return Err(TimebaseError::CorruptStore(
            "first CSV column must be `timestamp`".into(),
        ));
    }
    let names: Vec<String> = headers[1..].to_vec();
    let mut timestamps = Vec::new();
    let mut columns: Vec<(String, Vec<f64>)> =
        names.iter().map(|n| (n.clone(), Vec::new())).collect();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(io_of_csv)?;
        let ts_str = record.get(0).unwrap_or("");
        let ts = parse_timestamp(ts_str).ok_or_else(|| TimebaseError::BadTimestamp {
            row,
            value: ts_str.to_string(),
        })?;
        timestamps.push(ts);
        for (i, (name, col)) in columns.iter_mut().enumerate() {
            let cell = record.get(i + 1).unwrap_or("");
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| TimebaseError::NonNumericValue {
                    row,
                    column: name.clone(),
                    value: cell.to_string(),
                })?;
            if !v.is_finite() {
                return Err(TimebaseError::NonNumericValue {
                    row,
                    column: name.clone(),
                    value: cell.to_string(),
                });
            }
            col.push(v);
        }
    }
    Ok(RawTable {
        timestamps,
        columns,
    })
}

fn io_of_csv(e: csv::Error) -> TimebaseError {
    TimebaseError::Io(std::io::Error::other(e))
}

/// Validates the table against the declared grid and cuts it into slices.
///
/// Consecutive timestamps must advance by an exact positive multiple of
/// `delta`; a multiple > 1 starts a new slice, anything else is rejected.
pub fn import_dataset(
    table: &RawTable,
    name: &str,
    delta: i64,
    components: &[ComponentDesc],
) -> Result<TimeSeriesDataset, TimebaseError> {
    if delta <= 0 {
        return Err(TimebaseError::NonPositiveDelta(delta));
    }
    if table.timestamps.is_empty() {
        return Err(TimebaseError::EmptyTable);
    }
    // map declared components onto table columns
    let mut col_of = Vec::with_capacity(components.len());
    for c in components {
        let idx = table
            .columns
            .iter()
            .position(|(n, _)| *n == c.name)
            .ok_or_else(|| TimebaseError::MissingComponent(c.name.clone()))?;
        col_of.push(idx);
    }

    let n = table.timestamps.len();
    let n_comp = components.len();
    let mut slices = Vec::new();
    let mut slice_start = 0usize; // row index where the current slice began
    for row in 1..=n {
        let boundary = if row == n {
            true
        } else {
            let diff = table.timestamps[row] - table.timestamps[row - 1];
            if diff <= 0 {
                return Err(TimebaseError::NonMonotonicTimestamps { row });
            }
            if diff % delta != 0 {
                return Err(TimebaseError::OffGridTimestamp { row, delta });
            }
            diff > delta
        };
        if boundary {
            let rows = slice_start..row;
            let mut values = Matrix::zeros(rows.len(), n_comp);
            for (local, src) in rows.clone().enumerate() {
                for (comp, &col) in col_of.iter().enumerate() {
                    values.set(local, comp, table.columns[col].1[src]);
                }
            }
            slices.push(Slice {
                start_ts: table.timestamps[slice_start],
                values,
                synthetic_rows: BTreeSet::new(),
            });
            slice_start = row;
        }
    }

    let ds = TimeSeriesDataset {
        name: name.to_string(),
        components: components.to_vec(),
        delta,
        slices,
    };
    ds.validate()?;
    Ok(ds)
}

/// How synthesized rows are filled when closing a gap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterpMethod {
    /// Linear interpolation between the bracketing rows.
    Linear,
    /// Repeat the last row before the gap.
    Hold,
}

/// Merges adjacent slices separated by at most `max_gap` missing steps,
/// synthesizing the missing rows. Larger gaps are left untouched. The
/// synthesized row indices are recorded on the merged slice.
pub fn interpolate_gaps(
    ds: &TimeSeriesDataset,
    max_gap: usize,
    method: InterpMethod,
) -> TimeSeriesDataset {
    let n_comp = ds.n_components();
    let mut out: Vec<Slice> = Vec::with_capacity(ds.slices.len());
    for next in &ds.slices {
        let Some(prev) = out.last_mut() else {
            out.push(next.clone());
            continue;
        };
        let prev_end = prev.start_ts + (prev.len() as i64 - 1) * ds.delta;
        let missing = ((next.start_ts - prev_end) / ds.delta - 1) as usize;
        if missing == 0 || missing > max_gap {
            out.push(next.clone());
            continue;
        }
        // merge: prev rows, `missing` synthesized rows, next rows
        let before = prev.len();
        let mut values = Matrix::zeros(before + missing + next.len(), n_comp);
        for r in 0..before {
            for c in 0..n_comp {
                values.set(r, c, prev.values.get(r, c));
            }
        }
        for s in 1..=missing {
            for c in 0..n_comp {
                let lo = prev.values.get(before - 1, c);
                let v = match method {
                    InterpMethod::Hold => lo,
                    InterpMethod::Linear => {
                        let hi = next.values.get(0, c);
                        lo + (hi - lo) * s as f64 / (missing + 1) as f64
                    }
                };
                values.set(before - 1 + s, c, v);
            }
        }
        for r in 0..next.len() {
            for c in 0..n_comp {
                values.set(before + missing + r, c, next.values.get(r, c));
            }
        }
        let mut synthetic_rows = prev.synthetic_rows.clone();
        synthetic_rows.extend(before..before + missing);
        synthetic_rows.extend(next.synthetic_rows.iter().map(|r| r + before + missing));
        *prev = Slice {
            start_ts: prev.start_ts,
            values,
            synthetic_rows,
        };
    }
    TimeSeriesDataset {
        name: ds.name.clone(),
        components: ds.components.clone(),
        delta: ds.delta,
        slices: out,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timebase::ComponentRole;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn comps(names: &[&str]) -> Vec<ComponentDesc> {
        names
            .iter()
            .map(|n| ComponentDesc {
                name: n.to_string(),
                role: ComponentRole::Both,
            })
            .collect()
    }

    fn table(timestamps: Vec<i64>, x: Vec<f64>) -> RawTable {
        RawTable {
            timestamps,
            columns: vec![("x".into(), x)],
        }
    }

    #[test]
    fn hourly_gap_makes_two_slices() {
        // stamps 00:00, 01:00, 02:00, 05:00, 06:00 at delta = 1h
        let ts: Vec<i64> = [0, 1, 2, 5, 6].iter().map(|h| h * 3600).collect();
        let ds = import_dataset(
            &table(ts, vec![1.0, 2.0, 3.0, 4.0, 5.0]),
            "d",
            3600,
            &comps(&["x"]),
        )
        .unwrap();
        let lens: Vec<usize> = ds.slices.iter().map(Slice::len).collect();
        assert_eq!(lens, vec![3, 2]);
        assert_eq!(ds.slices[1].start_ts, 5 * 3600);
    }

    #[test]
    fn single_timestamp_is_one_slice() {
        let ds = import_dataset(&table(vec![0], vec![7.0]), "d", 60, &comps(&["x"])).unwrap();
        assert_eq!(ds.slices.len(), 1);
        assert_eq!(ds.slices[0].len(), 1);
    }

    #[test]
    fn random_gaps_match_scan_oracle() {
        // 500 stamps on a 1-minute grid with exactly 7 gaps
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut gap_after: Vec<usize> = (0..499).collect();
        gap_after.shuffle(&mut rng);
        gap_after.truncate(7);
        gap_after.sort_unstable();

        let mut ts = Vec::with_capacity(500);
        let mut t = 0i64;
        for i in 0..500 {
            ts.push(t);
            let step = if gap_after.contains(&i) {
                60 * (2 + rng.random_range(0..5))
            } else {
                60
            };
            t += step;
        }
        // independent oracle: count crossings where the step exceeds delta
        let oracle_slices = 1 + ts.windows(2).filter(|w| w[1] - w[0] > 60).count();
        assert_eq!(oracle_slices, 8);

        let x: Vec<f64> = (0..500).map(|i| i as f64).collect();
        let ds = import_dataset(&table(ts, x), "d", 60, &comps(&["x"])).unwrap();
        assert_eq!(ds.slices.len(), 8);
        assert_eq!(ds.n_total(), 500);
        // slice partition property: concatenation reproduces imported rows
        let mut seen = Vec::new();
        for s in &ds.slices {
            for r in 0..s.len() {
                seen.push(s.values.get(r, 0));
            }
        }
        assert_eq!(seen, (0..500).map(|i| i as f64).collect::<Vec<_>>());
    }

    #[test]
    fn rejects_non_monotonic_and_off_grid() {
        let e = import_dataset(&table(vec![0, 60, 60], vec![0.0; 3]), "d", 60, &comps(&["x"]));
        assert!(matches!(
            e,
            Err(TimebaseError::NonMonotonicTimestamps { row: 2 })
        ));
        let e = import_dataset(&table(vec![0, 60, 150], vec![0.0; 3]), "d", 60, &comps(&["x"]));
        assert!(matches!(e, Err(TimebaseError::OffGridTimestamp { row: 2, .. })));
    }

    #[test]
    fn rejects_missing_component() {
        let e = import_dataset(&table(vec![0], vec![0.0]), "d", 60, &comps(&["x", "y"]));
        assert!(matches!(e, Err(TimebaseError::MissingComponent(n)) if n == "y"));
    }

    #[test]
    fn linear_interpolation_fills_midpoint() {
        // [... 1.0] gap of one step [3.0 ...] -> inserted 2.0
        let ts = vec![0, 60, 180, 240];
        let ds = import_dataset(
            &table(ts, vec![0.5, 1.0, 3.0, 3.5]),
            "d",
            60,
            &comps(&["x"]),
        )
        .unwrap();
        assert_eq!(ds.slices.len(), 2);
        let merged = interpolate_gaps(&ds, 1, InterpMethod::Linear);
        assert_eq!(merged.slices.len(), 1);
        let s = &merged.slices[0];
        assert_eq!(s.len(), 5);
        assert_eq!(s.values.get(2, 0), 2.0);
        assert_eq!(s.synthetic_rows.iter().copied().collect::<Vec<_>>(), vec![2]);
    }

    #[test]
    fn gap_beyond_max_is_untouched() {
        // five missing steps, max_gap = 2 -> slices unchanged
        let ts = vec![0, 60, 60 * 7];
        let ds = import_dataset(&table(ts, vec![1.0, 2.0, 9.0]), "d", 60, &comps(&["x"])).unwrap();
        let out = interpolate_gaps(&ds, 2, InterpMethod::Linear);
        assert_eq!(out.slices.len(), 2);
        assert_eq!(out.n_total(), 3);
    }

    #[test]
    fn hold_replicates_last_row() {
        // gap of two steps after 4.0 -> inserted rows [4.0, 4.0]
        let ts = vec![0, 60 * 3];
        let ds = import_dataset(&table(ts, vec![4.0, 8.0]), "d", 60, &comps(&["x"])).unwrap();
        let out = interpolate_gaps(&ds, 2, InterpMethod::Hold);
        assert_eq!(out.slices.len(), 1);
        let s = &out.slices[0];
        assert_eq!(s.values.get(1, 0), 4.0);
        assert_eq!(s.values.get(2, 0), 4.0);
        assert_eq!(s.values.get(3, 0), 8.0);
    }

    #[test]
    fn interpolation_chains_across_consecutive_gaps() {
        let ts = vec![0, 120, 240];
        let ds = import_dataset(&table(ts, vec![0.0, 2.0, 4.0]), "d", 60, &comps(&["x"])).unwrap();
        assert_eq!(ds.slices.len(), 3);
        let out = interpolate_gaps(&ds, 1, InterpMethod::Linear);
        assert_eq!(out.slices.len(), 1);
        let got: Vec<f64> = (0..5).map(|r| out.slices[0].values.get(r, 0)).collect();
        assert_eq!(got, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(
            out.slices[0].synthetic_rows.iter().copied().collect::<Vec<_>>(),
            vec![1, 3]
        );
    }

    #[test]
    fn timestamp_parsing_accepts_common_iso_forms() {
        assert_eq!(parse_timestamp("1970-01-01T00:00:00Z"), Some(0));
        assert_eq!(parse_timestamp("1970-01-01T01:00:00+01:00"), Some(0));
        assert_eq!(parse_timestamp("1970-01-01T00:01:00"), Some(60));
        assert_eq!(parse_timestamp("1970-01-02"), Some(86400));
        assert_eq!(parse_timestamp("not a date"), None);
    }
}
