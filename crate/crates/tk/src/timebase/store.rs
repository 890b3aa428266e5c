//! On-disk dataset format: JSON manifest + binary column store.
//!
//! `manifest.json` carries the structure (components, slice offsets,
//! synthetic rows); `data.bin` holds the values as little-endian f64,
//! one column after another within each slice, slices in order.

use super::{ComponentDesc, Slice, TimeSeriesDataset, TimebaseError};
use crate::matrix::Matrix;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

#[derive(Serialize, Deserialize)]
struct SliceMeta {
    start_ts: i64,
    length: usize,
    synthetic_rows: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    name: String,
    delta_seconds: i64,
    components: Vec<ComponentDesc>,
    slices: Vec<SliceMeta>,
    n_total: usize,
}

pub fn save_dataset(ds: &TimeSeriesDataset, dir: &Path) -> Result<(), TimebaseError> {
    fs::create_dir_all(dir)?;
    let manifest = Manifest {
        name: ds.name.clone(),
        delta_seconds: ds.delta,
        components: ds.components.clone(),
        slices: ds
            .slices
            .iter()
            .map(|s| SliceMeta {
                start_ts: s.start_ts,
                length: s.len(),
                synthetic_rows: s.synthetic_rows.iter().copied().collect(),
            })
            .collect(),
        n_total: ds.n_total(),
    };
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    fs::write(dir.join("manifest.json"), json)?;

    let n_comp = ds.n_components();
    let mut bytes = Vec::with_capacity(ds.n_total() * n_comp * 8);
    for s in &ds.slices {
        for comp in 0..n_comp {
            for r in 0..s.len() {
                bytes.extend_from_slice(&s.values.get(r, comp).to_le_bytes());
            }
        }
    }
    fs::write(dir.join("data.bin"), bytes)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<TimeSeriesDataset, TimebaseError> {
    let manifest: Manifest =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let bytes = fs::read(dir.join("data.bin"))?;
    let n_comp = manifest.components.len();
    let expected = manifest.n_total * n_comp * 8;
    if bytes.len() != expected {
        return Err(TimebaseError::CorruptStore(format!(
            "data.bin holds {} bytes, manifest implies {expected}",
            bytes.len()
        )));
    }

    let mut offset = 0usize;
    let mut slices = Vec::with_capacity(manifest.slices.len());
    for meta in &manifest.slices {
        let mut values = Matrix::zeros(meta.length, n_comp);
        for comp in 0..n_comp {
            for r in 0..meta.length {
                let v = f64::from_le_bytes(bytes[offset..offset + 8].try_into().unwrap());
                values.set(r, comp, v);
                offset += 8;
            }
        }
        slices.push(Slice {
            start_ts: meta.start_ts,
            values,
            synthetic_rows: meta.synthetic_rows.iter().copied().collect::<BTreeSet<_>>(),
        });
    }

    let ds = TimeSeriesDataset {
        name: manifest.name,
        components: manifest.components,
        delta: manifest.delta_seconds,
        slices,
    };
    ds.validate()?;
    Ok(ds)
}
