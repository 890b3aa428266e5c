//! Synthetic dataset generation: seeded input components, a linear lag rule
//! producing the target, Gaussian noise, and declared gaps — the recipe
//! behind `tk synth` and the ground truth for recovery experiments.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use super::config::DatasetMeta;
use super::{usage, validate_name, ExperimentError};
use crate::timebase::{ComponentDesc, ComponentRole};

/// One term of the generating rule: `coeff · <component>[t − lag]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleTerm {
    pub lag: usize,
    pub component: String,
    pub coeff: f64,
}

/// A gap in the timestamp grid: after row `after_row`, `missing` grid steps
/// are skipped before the next row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapSpec {
    pub after_row: usize,
    #[serde(default = "default_missing")]
    pub missing: usize,
}

fn default_missing() -> usize {
    1
}

/// How input components are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    /// Independent standard Gaussian draws per step.
    #[default]
    Gaussian,
    /// A seeded mixture of three sinusoids per component.
    Sine,
}

/// Recipe for a synthetic dataset: `target[t] = Σ coeff·input[t−lag] + ε`,
/// with `ε ~ N(0, noise_std²)`.
///
/// Rows earlier than the largest lag have no full history; their target is
/// noise only (zero when `noise_std` is 0). Gaps split the series into
/// separate slices on import without dropping any rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Dataset name; becomes the directory name under `custom_datasets/`.
    pub name: String,
    /// Number of rows.
    pub n: usize,
    /// Input component names.
    #[serde(default = "default_inputs")]
    pub inputs: Vec<String>,
    /// Target component name.
    #[serde(default = "default_target")]
    pub target: String,
    #[serde(default)]
    pub input_kind: InputKind,
    /// The generating rule; every term must reference an input component.
    pub rule: Vec<RuleTerm>,
    /// Standard deviation of the additive Gaussian noise ε.
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub gaps: Vec<GapSpec>,
    #[serde(default)]
    pub seed: u64,
    /// Grid step in seconds.
    #[serde(default = "default_delta")]
    pub delta_seconds: i64,
    /// RFC 3339 timestamp of the first row.
    #[serde(default = "default_start")]
    pub start: String,
}

fn default_inputs() -> Vec<String> {
    vec!["x".to_string()]
}

fn default_target() -> String {
    "y".to_string()
}

fn default_delta() -> i64 {
    60
}

fn default_start() -> String {
    "2024-01-01T00:00:00Z".to_string()
}

impl SyntheticSpec {
    /// The largest lag in the rule; rows before it carry noise only.
    pub fn max_lag(&self) -> usize {
        self.rule.iter().map(|t| t.lag).max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        validate_name("dataset", &self.name)?;
        if self.n < 2 {
            return Err(usage("synthetic spec: n must be at least 2"));
        }
        if self.inputs.is_empty() {
            return Err(usage("synthetic spec: at least one input component"));
        }
        for name in &self.inputs {
            validate_name("component", name)?;
            if name == &self.target {
                return Err(usage(format!(
                    "synthetic spec: input {name:?} collides with the target name"
                )));
            }
            if self.inputs.iter().filter(|n| *n == name).count() > 1 {
                return Err(usage(format!(
                    "synthetic spec: duplicate input component {name:?}"
                )));
            }
        }
        validate_name("component", &self.target)?;
        if self.rule.is_empty() {
            return Err(usage("synthetic spec: the rule needs at least one term"));
        }
        for term in &self.rule {
            if !term.coeff.is_finite() {
                return Err(usage(format!(
                    "synthetic spec: non-finite coefficient for lag {}",
                    term.lag
                )));
            }
            if !self.inputs.contains(&term.component) {
                return Err(usage(format!(
                    "synthetic spec: rule references {:?}, which is not an input component",
                    term.component
                )));
            }
            if term.lag >= self.n {
                return Err(usage(format!(
                    "synthetic spec: lag {} exceeds the series history (n = {})",
                    term.lag, self.n
                )));
            }
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(usage("synthetic spec: noise_std must be finite and >= 0"));
        }
        if self.delta_seconds < 1 {
            return Err(usage("synthetic spec: delta_seconds must be positive"));
        }
        parse_start(&self.start)?;
        let mut prev: Option<usize> = None;
        for gap in &self.gaps {
            if gap.missing == 0 {
                return Err(usage("synthetic spec: gaps must skip at least one step"));
            }
            if gap.after_row + 1 >= self.n {
                return Err(usage(format!(
                    "synthetic spec: gap after row {} falls past the last row",
                    gap.after_row
                )));
            }
            if prev.is_some_and(|p| gap.after_row <= p) {
                return Err(usage(
                    "synthetic spec: gaps must be sorted by strictly increasing after_row",
                ));
            }
            prev = Some(gap.after_row);
        }
        Ok(())
    }

    /// Dataset metadata matching the generated CSV's column order.
    pub fn meta(&self) -> DatasetMeta {
        let mut components: Vec<ComponentDesc> = self
            .inputs
            .iter()
            .map(|name| ComponentDesc {
                name: name.clone(),
                role: ComponentRole::Input,
            })
            .collect();
        components.push(ComponentDesc {
            name: self.target.clone(),
            role: ComponentRole::Output,
        });
        DatasetMeta {
            name: self.name.clone(),
            delta_seconds: self.delta_seconds,
            components,
            interpolate: None,
        }
    }
}

fn parse_start(s: &str) -> Result<i64, ExperimentError> {
    chrono::DateTime::parse_from_rfc3339(s)
        .map(|dt| dt.timestamp())
        .map_err(|e| usage(format!("synthetic spec: start {s:?} is not RFC 3339: {e}")))
}

/// A generated table, ready to serialize as an import CSV.
#[derive(Debug, Clone)]
pub struct Generated {
    /// UTC epoch seconds, gaps applied.
    pub timestamps: Vec<i64>,
    /// Input columns in declared order, then the target column.
    pub columns: Vec<(String, Vec<f64>)>,
}

impl Generated {
    /// The import CSV: `timestamp,<inputs...>,<target>` header, RFC 3339
    /// timestamps, shortest round-trip float formatting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("timestamp");
        for (name, _) in &self.columns {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (row, &ts) in self.timestamps.iter().enumerate() {
            let stamp = chrono::DateTime::from_timestamp(ts, 0)
                .expect("generated timestamp in range")
                .to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
            out.push_str(&stamp);
            for (_, values) in &self.columns {
                let _ = write!(out, ",{}", values[row]);
            }
            out.push('\n');
        }
        out
    }
}

/// Generates the table: inputs first (component by component), then the
/// noise column, all from one ChaCha8 stream seeded with `spec.seed`.
pub fn generate(spec: &SyntheticSpec) -> Result<Generated, ExperimentError> {
    spec.validate()?;
    let n = spec.n;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut columns: Vec<(String, Vec<f64>)> = Vec::with_capacity(spec.inputs.len() + 1);
    for name in &spec.inputs {
        let values = match spec.input_kind {
            InputKind::Gaussian => (0..n).map(|_| rng.sample(StandardNormal)).collect(),
            InputKind::Sine => sine_mixture(&mut rng, n),
        };
        columns.push((name.clone(), values));
    }

    let max_lag = spec.max_lag();
    let mut target = vec![0.0; n];
    for (t, y) in target.iter_mut().enumerate().skip(max_lag) {
        for term in &spec.rule {
            let col = spec
                .inputs
                .iter()
                .position(|name| name == &term.component)
                .expect("validated component");
            *y += term.coeff * columns[col].1[t - term.lag];
        }
    }
    if spec.noise_std > 0.0 {
        let noise = Normal::new(0.0, spec.noise_std).expect("validated std");
        for y in &mut target {
            *y += rng.sample(noise);
        }
    }
    columns.push((spec.target.clone(), target));

    let start = parse_start(&spec.start)?;
    let mut timestamps = Vec::with_capacity(n);
    let mut offset: i64 = 0;
    let mut gaps = spec.gaps.iter().peekable();
    for t in 0..n {
        timestamps.push(start + (t as i64 + offset) * spec.delta_seconds);
        if gaps.peek().is_some_and(|g| g.after_row == t) {
            offset += gaps.next().expect("peeked").missing as i64;
        }
    }

    Ok(Generated {
        timestamps,
        columns,
    })
}

/// Three seeded sinusoids summed: amplitudes in [0.5, 1), frequencies in
/// [0.002, 0.1) cycles per step, phases in [0, 2π).
fn sine_mixture(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let params: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            let amp = 0.5 + 0.5 * rng.random::<f64>();
            let freq = 0.002 + 0.098 * rng.random::<f64>();
            let phase = std::f64::consts::TAU * rng.random::<f64>();
            (amp, freq, phase)
        })
        .collect();
    (0..n)
        .map(|t| {
            params
                .iter()
                .map(|(a, f, p)| a * (std::f64::consts::TAU * f * t as f64 + p).sin())
                .sum()
        })
        .collect()
}
