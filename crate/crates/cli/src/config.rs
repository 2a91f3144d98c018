//! Experiment configuration: parsing, defaults and validation.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use wyf_core::flow::FlowConfig;
use wyf_core::geometry::BackgroundSpec;
use wyf_core::rates::{Series, Window};
use wyf_core::reduction::{ReductionConfig, SymTensor};
use wyf_core::slowflow::Mode;
use wyf_core::spectral::DEFAULT_TOL_KERNEL;

use crate::CliError;

/// Version of the output layout; bumped whenever a file format changes.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub background: BackgroundSpec,
    pub params: ParamsSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow: Option<FlowSection>,
    #[serde(default)]
    pub spectral: SpectralSection,
    #[serde(default)]
    pub reduction: ReductionConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slowflow: Option<SlowflowSection>,
    #[serde(default)]
    pub rates: RatesSection,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSection {
    pub m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSection {
    #[serde(default = "d_scheme")]
    pub scheme: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub t_end: f64,
    #[serde(default)]
    pub renormalize: bool,
    #[serde(default = "d_record_every")]
    pub record_every: usize,
    #[serde(default = "d_safety")]
    pub safety: f64,
    #[serde(default)]
    pub snapshot_every: usize,
    /// Initial conformal factor in the `expr:`/`fourier:` grammar; constant 1
    /// when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u0: Option<String>,
}

fn d_scheme() -> String {
    "rk4".into()
}
fn d_record_every() -> usize {
    10
}
fn d_safety() -> f64 {
    0.8
}

impl FlowSection {
    pub fn flow_config(&self) -> FlowConfig {
        FlowConfig {
            scheme: self.scheme.clone(),
            dt: self.dt,
            t_end: self.t_end,
            renormalize: self.renormalize,
            record_every: self.record_every,
            safety: self.safety,
            snapshot_every: self.snapshot_every,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralSection {
    #[serde(default = "d_tol_kernel")]
    pub tol_kernel: f64,
}

fn d_tol_kernel() -> f64 {
    DEFAULT_TOL_KERNEL
}

impl Default for SpectralSection {
    fn default() -> Self {
        Self {
            tol_kernel: DEFAULT_TOL_KERNEL,
        }
    }
}

/// Symmetric tensor given by its entries on sorted multi-indices, e.g.
/// `[[[0, 0, 0], 1.0], [[0, 1, 1], -0.5]]`; unlisted entries are zero.
pub type TensorEntries = Vec<(Vec<usize>, f64)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlowflowSection {
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(rename = "T")]
    pub t_shift: f64,
    #[serde(default = "d_horizon")]
    pub horizon: f64,
    #[serde(default = "d_per_decade")]
    pub per_decade: usize,
    #[serde(default = "d_max_iter")]
    pub max_iter: usize,
    #[serde(default = "d_tol")]
    pub tol: f64,
    #[serde(default = "d_restarts")]
    pub restarts: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fp: Option<TensorEntries>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fp1: Option<TensorEntries>,
    #[serde(default)]
    pub deltas: Vec<f64>,
    #[serde(default)]
    pub coupling: Vec<f64>,
    /// Time window `[t_lo, t_hi]` of the rate sandwich and fit.
    #[serde(default = "d_window")]
    pub window: [f64; 2],
}

fn d_horizon() -> f64 {
    1e6
}
fn d_per_decade() -> usize {
    64
}
fn d_max_iter() -> usize {
    200
}
fn d_tol() -> f64 {
    1e-8
}
fn d_restarts() -> usize {
    50
}
fn d_window() -> [f64; 2] {
    [1.0, 1e4]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesSection {
    #[serde(default)]
    pub window: Window,
    #[serde(default = "d_series")]
    pub series: Series,
}

fn d_series() -> Series {
    Series::SupDev
}

impl Default for RatesSection {
    fn default() -> Self {
        Self {
            window: Window::Default,
            series: d_series(),
        }
    }
}

/// Builds a symmetric tensor from its sorted-index entries.
pub fn tensor_from_entries(k: usize, p: usize, entries: &TensorEntries) -> Result<SymTensor, CliError> {
    let mut table = BTreeMap::new();
    for (idx, value) in entries {
        if idx.len() != p || idx.iter().any(|i| *i >= k) {
            return Err(CliError::Validation(format!(
                "tensor entry {idx:?} does not fit k = {k}, order {p}"
            )));
        }
        let mut key = idx.clone();
        key.sort_unstable();
        if table.insert(key, *value).is_some() {
            return Err(CliError::Validation(format!("tensor entry {idx:?} given twice")));
        }
    }
    Ok(SymTensor::from_sorted(k, p, |idx| table.get(idx).copied().unwrap_or(0.0)))
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Config =
            serde_json::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Applies the seed override and propagates shared settings, then
    /// validates every section.
    pub fn resolve(mut self, seed: Option<u64>) -> Result<Self, CliError> {
        if let Some(s) = seed {
            self.seed = s;
        }
        let tol = self.spectral.tol_kernel;
        if !(tol > 0.0 && tol < 1.0) {
            return Err(CliError::Validation(format!("spectral.tol_kernel must lie in (0, 1), got {tol}")));
        }
        if self.reduction.tol_kernel != DEFAULT_TOL_KERNEL && self.reduction.tol_kernel != tol {
            return Err(CliError::Validation(
                "set the kernel threshold in spectral.tol_kernel only".into(),
            ));
        }
        self.reduction.tol_kernel = tol;
        self.reduction.seed = self.seed;
        self.reduction.validate()?;
        if let Some(f) = &self.flow {
            f.flow_config().validate()?;
        }
        if let Some(s) = &self.slowflow {
            if !(s.window[0] < s.window[1]) {
                return Err(CliError::Validation(format!("slowflow.window {:?} is empty", s.window)));
            }
            if s.max_iter == 0 || s.per_decade < 8 || !(s.tol > 0.0) {
                return Err(CliError::Validation(
                    "slowflow needs max_iter > 0, per_decade >= 8 and tol > 0".into(),
                ));
            }
            if s.deltas.len() != s.coupling.len() {
                return Err(CliError::Validation("slowflow.deltas and coupling differ in length".into()));
            }
        }
        Ok(self)
    }

    /// Canonical JSON of the resolved configuration.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn sha256(&self) -> String {
        hex_digest(self.canonical_json().as_bytes())
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const TORUS: &str = r#"{
        "background": {"kind": "torus", "n": 2, "grid": [16, 16], "phi0": "expr:0.3*cos(x1)"},
        "params": {"m": 2},
        "flow": {"dt": 1e-3, "t_end": 0.1}
    }"#;

    #[test]
    fn defaults_and_hash_are_stable() {
        let a = Config::from_json(TORUS).unwrap().resolve(None).unwrap();
        let b = Config::from_json(TORUS).unwrap().resolve(None).unwrap();
        assert_eq!(a.sha256(), b.sha256());
        assert_eq!(a.flow.as_ref().unwrap().scheme, "rk4");
        let c = Config::from_json(TORUS).unwrap().resolve(Some(7)).unwrap();
        assert_eq!(c.reduction.seed, 7);
        assert_ne!(a.sha256(), c.sha256());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = TORUS.replace("\"t_end\"", "\"t_final\": 1, \"t_end\"");
        assert!(matches!(Config::from_json(&bad), Err(CliError::Validation(_))));
        let bad = TORUS.replace("\"params\"", "\"extra\": 1, \"params\"");
        assert!(matches!(Config::from_json(&bad), Err(CliError::Validation(_))));
    }

    #[test]
    fn bad_values_are_validation_errors() {
        let bad = TORUS.replace("\"dt\": 1e-3", "\"dt\": -1");
        let err = Config::from_json(&bad).unwrap().resolve(None).unwrap_err();
        assert!(matches!(err, CliError::Module(wyf_core::WyfError::InvalidConfig(_))), "{err:?}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn tensor_entries_are_symmetrized() {
        let t = tensor_from_entries(2, 3, &vec![(vec![1, 0, 0], 2.0), (vec![1, 1, 1], 1.0)]).unwrap();
        assert_eq!(t.get(&[0, 1, 0]), 2.0);
        assert_eq!(t.get(&[0, 0, 1]), 2.0);
        assert_eq!(t.get(&[0, 1, 1]), 0.0);
        assert!(tensor_from_entries(2, 3, &vec![(vec![0, 0, 1], 1.0), (vec![1, 0, 0], 1.0)]).is_err());
        assert!(tensor_from_entries(2, 3, &vec![(vec![0, 2, 1], 1.0)]).is_err());
    }
}
