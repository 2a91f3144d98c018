//! Batch experiment runner for the `wyf` command line tool.
//!
//! Each subcommand reads one JSON configuration, runs the corresponding
//! numerical module and writes its CSV/JSON files into an output directory,
//! together with a `manifest.json` that records the schema version, the
//! resolved configuration, its SHA-256 and a digest of every file written.

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde_json::{json, Value};
use thiserror::Error;
use wyf_core::flow::{curvature_deviation, dissipation_mismatch, run, SchemeRegistry, Trajectory};
use wyf_core::geometry::{BackgroundRegistry, Phi0Spec};
use wyf_core::rates::{fit_rate, fit_trajectory, lojasiewicz_probe, lojasiewicz_probe_series, Window};
use wyf_core::reduction::{as3_certificate, detect_order_and_tensor, Order, Reduction, SymTensor};
use wyf_core::slowflow::{contract, ContractionReport, GeometricTerms, Mode, SlowModel, SyntheticTerms};
use wyf_core::smms::{Base, Params, Smms};
use wyf_core::spectral::eigendecompose;
use wyf_core::WyfError;

pub use config::{Config, SCHEMA_VERSION};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Module(WyfError),
    #[error("cannot write {path}: {message}")]
    Io { path: String, message: String },
}

impl From<WyfError> for CliError {
    fn from(e: WyfError) -> Self {
        CliError::Module(e)
    }
}

impl CliError {
    /// 2 for invalid input, 3 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Module(e) if !e.is_validation() => 3,
            _ => 2,
        }
    }

    fn kind(&self) -> String {
        match self {
            CliError::Validation(_) => "Validation".into(),
            CliError::Io { .. } => "Io".into(),
            CliError::Module(e) => {
                let dbg = format!("{e:?}");
                dbg.split(|c: char| !c.is_alphanumeric()).next().unwrap_or("").to_string()
            }
        }
    }
}

/// Subcommands driven by a configuration file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Flow,
    Spectrum,
    Reduce,
    Slowmodel,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Flow => "flow",
            Command::Spectrum => "spectrum",
            Command::Reduce => "reduce",
            Command::Slowmodel => "slowmodel",
        }
    }
}

/// Files written by one run, in order, with their digests.
struct Output {
    dir: PathBuf,
    command: &'static str,
    provenance: Value,
    files: Vec<(String, String)>,
}

impl Output {
    fn new(dir: &Path, command: &'static str, provenance: Value) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            command,
            provenance,
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
        self.files.push((name.to_string(), config::hex_digest(bytes)));
        Ok(())
    }

    /// JSON file with the provenance header merged in front of `payload`.
    fn write_json(&mut self, name: &str, payload: Value) -> Result<(), CliError> {
        let mut obj = self.header();
        if let Value::Object(p) = payload {
            obj.extend(p);
        }
        let text = serde_json::to_string_pretty(&Value::Object(obj)).expect("json") + "\n";
        self.write(name, text.as_bytes())
    }

    fn header(&self) -> serde_json::Map<String, Value> {
        let mut m = serde_json::Map::new();
        m.insert("schema_version".into(), json!(SCHEMA_VERSION));
        m.insert("command".into(), json!(self.command));
        if let Value::Object(p) = &self.provenance {
            m.extend(p.clone());
        }
        m
    }

    fn finish(mut self) -> Result<Vec<PathBuf>, CliError> {
        let files: serde_json::Map<String, Value> =
            self.files.iter().map(|(n, h)| (n.clone(), json!(h))).collect();
        let manifest = json!({ "files": files });
        self.write_json("manifest.json", manifest)?;
        Ok(self.files.iter().map(|(n, _)| self.dir.join(n)).collect())
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn provenance(cfg: &Config) -> Value {
    json!({
        "config": serde_json::to_value(cfg).expect("config serializes"),
        "config_sha256": cfg.sha256(),
    })
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).expect("writing to memory");
    buf
}

/// Finite floats as numbers, everything else as `null`.
fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

pub fn build_base(cfg: &Config) -> Result<Arc<Base>, CliError> {
    let params = Params::new(cfg.background.n, cfg.params.m)?;
    let bg = BackgroundRegistry::default().build(&cfg.background, cfg.params.m)?;
    Ok(Base::new(bg, params)?)
}

/// Samples the configured initial factor on the nodes.
pub fn initial_factor(base: &Base, spec: Option<&str>) -> Result<Vec<f64>, CliError> {
    let n = base.node_count();
    let Some(src) = spec else {
        return Ok(vec![1.0; n]);
    };
    let f = Phi0Spec::parse(src)?;
    let coords = base.bg().coords();
    let u = (0..n)
        .map(|i| f.eval(coords.get(i).map_or(&[][..], |x| &x[..])))
        .collect::<Result<Vec<f64>, _>>()?;
    if let Some((i, v)) = u.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
        return Err(CliError::Validation(format!("flow.u0 is not positive at node {i} (value {v})")));
    }
    Ok(u)
}

pub fn cmd_flow(cfg: &Config, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let section = cfg
        .flow
        .as_ref()
        .ok_or_else(|| CliError::Validation("the flow command needs a `flow` section".into()))?;
    let base = build_base(cfg)?;
    let u0 = initial_factor(&base, section.u0.as_deref())?;
    let s0 = Smms::new(base.clone(), u0)?;
    let traj = run(&s0, &section.flow_config(), &SchemeRegistry::default())?;
    let mut o = Output::new(out, "flow", provenance(cfg))?;
    o.write("trajectory.csv", &csv_bytes(|w| traj.write_csv(w)))?;
    o.write("snapshots.csv", &csv_bytes(|w| traj.write_snapshots_csv(w)))?;
    let v0 = traj.volumes[0];
    let drift = traj.volumes.iter().fold(0.0f64, |a, v| a.max((v / v0 - 1.0).abs()));
    let max_increase = traj.r_values.windows(2).fold(f64::NEG_INFINITY, |a, w| a.max(w[1] - w[0]));
    let max_rel_increase = traj.r_values.windows(2).fold(f64::NEG_INFINITY, |a, w| a.max((w[1] - w[0]) / w[0].abs()));
    let last = traj.states.last().expect("at least one record");
    o.write_json(
        "summary.json",
        json!({
            "records": traj.len(),
            "t_end": traj.times.last(),
            "r_initial": traj.r_values[0],
            "r_final": traj.r_values.last(),
            "volume_drift": drift,
            "max_r_increase": num(max_increase),
            "max_r_increase_relative": num(max_rel_increase),
            "dissipation_mismatch": traj_dissipation(&traj),
            "final_curvature_deviation": num(curvature_deviation(&base, last)),
            "rejections": traj.rejections,
        }),
    )?;
    o.finish()
}

fn traj_dissipation(traj: &Trajectory) -> Value {
    dissipation_mismatch(traj).map_or(Value::Null, num)
}

pub fn cmd_spectrum(cfg: &Config, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let base = build_base(cfg)?;
    let sd = eigendecompose(&base, cfg.spectral.tol_kernel)?;
    let mut o = Output::new(out, "spectrum", provenance(cfg))?;
    o.write_json(
        "spectrum.json",
        json!({
            "eigenvalues": sd.eigenvalues,
            "kernel_dim": sd.kernel_dim(),
            "kernel_indices": sd.kernel_indices,
            "up_count": sd.up_indices.len(),
            "down_count": sd.down_indices.len(),
            "tol_kernel_absolute": sd.tol_kernel,
            "flags": {
                "degenerate": sd.kernel_dim() > 0 && !sd.kernel_is_scale_only,
                "kernel_is_scale_only": sd.kernel_is_scale_only,
            },
            "kernel_check": sd.kernel_check,
            "symmetry_defect": sd.symmetry_defect,
            "orthonormality_defect": sd.orthonormality_defect(),
        }),
    )?;
    o.finish()
}

fn tensor_json(t: &SymTensor) -> Value {
    let mut entries = Vec::new();
    for flat in 0..t.data.len() {
        let idx = t.multi(flat);
        if idx.windows(2).all(|w| w[0] <= w[1]) && t.data[flat] != 0.0 {
            entries.push(json!([idx, t.data[flat]]));
        }
    }
    json!({ "k": t.k, "p": t.p, "entries": entries })
}

pub fn cmd_reduce(cfg: &Config, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let base = build_base(cfg)?;
    let red = Reduction::new(base, cfg.reduction.clone())?;
    let model = detect_order_and_tensor(&red)?;
    let p = match model.order {
        Order::Integrable => json!("integrable"),
        Order::Finite(p) => json!(p),
    };
    let f3_factor = if model.f3_ratios.is_empty() {
        Value::Null
    } else {
        let mut r = model.f3_ratios.clone();
        r.sort_by(f64::total_cmp);
        let median = r[r.len() / 2];
        let spread = r.iter().fold(0.0f64, |a, x| a.max((x / median - 1.0).abs()));
        json!({ "median": median, "max_relative_spread": spread, "ratios": model.f3_ratios })
    };
    let mut o = Output::new(out, "reduce", provenance(cfg))?;
    o.write_json(
        "reduction.json",
        json!({
            "kernel_dim": model.kernel_dim,
            "f0": model.f0,
            "p": p,
            "tensor": model.tensor.as_ref().map(tensor_json),
            "v_hat": model.v_hat,
            "fp_max": model.fp_max,
            "as_p": model.as_p,
            "residuals": {
                "max_graph_map_residual": model.max_residual,
                "max_constant_component": model.max_constant_component,
                "samples": model.samples.len(),
            },
            "ray_slopes": model.ray_slopes,
            "f3_factor": f3_factor,
        }),
    )?;
    o.finish()
}

/// Slow model together with the source of its error terms.
pub enum SlowSetup {
    Synthetic(SlowModel, SyntheticTerms),
    Geometric(SlowModel, Box<Reduction>),
}

impl SlowSetup {
    pub fn model(&self) -> &SlowModel {
        match self {
            SlowSetup::Synthetic(m, _) | SlowSetup::Geometric(m, _) => m,
        }
    }

    pub fn contract(&self, max_iter: usize, tol: f64) -> Result<ContractionReport, CliError> {
        Ok(match self {
            SlowSetup::Synthetic(m, terms) => contract(m, terms, max_iter, tol)?,
            SlowSetup::Geometric(m, red) => contract(m, &GeometricTerms::new(red), max_iter, tol)?,
        })
    }
}

/// Builds the slow model and its error terms from the configuration.
pub fn slow_setup(cfg: &Config) -> Result<SlowSetup, CliError> {
    let s = cfg
        .slowflow
        .as_ref()
        .ok_or_else(|| CliError::Validation("the slowmodel command needs a `slowflow` section".into()))?;
    let kappa = Params::new(cfg.background.n, cfg.params.m)?.kappa();
    let build = |fp: SymTensor| {
        SlowModel::new(kappa, fp, s.gamma, s.t_shift, s.horizon, s.per_decade, s.restarts, cfg.seed)
    };
    match s.mode {
        Mode::Synthetic => {
            let (p, k) = match (s.p, s.k) {
                (Some(p), Some(k)) => (p, k),
                _ => return Err(CliError::Validation("synthetic mode needs slowflow.p and slowflow.k".into())),
            };
            let entries = s
                .fp
                .as_ref()
                .ok_or_else(|| CliError::Validation("synthetic mode needs slowflow.fp".into()))?;
            let fp = config::tensor_from_entries(k, p, entries)?;
            let fp1 = s
                .fp1
                .as_ref()
                .map(|e| config::tensor_from_entries(k, p + 1, e))
                .transpose()?;
            let model = build(fp)?;
            let terms = SyntheticTerms::new(k, p, fp1, s.deltas.clone(), s.coupling.clone())?;
            Ok(SlowSetup::Synthetic(model, terms))
        }
        Mode::Geometric => {
            if s.fp.is_some() || s.fp1.is_some() || !s.deltas.is_empty() {
                return Err(CliError::Validation(
                    "geometric mode takes F_p and the deltas from the background; remove fp, fp1, deltas".into(),
                ));
            }
            let red = Reduction::new(build_base(cfg)?, cfg.reduction.clone())?;
            let reduced = detect_order_and_tensor(&red)?;
            let fp = reduced.tensor.ok_or_else(|| {
                CliError::Validation("the critical point is integrable; there is no slow solution".into())
            })?;
            for (name, want, got) in [("p", s.p, fp.p), ("k", s.k, fp.k)] {
                if let Some(w) = want.filter(|w| *w != got) {
                    return Err(CliError::Validation(format!(
                        "slowflow.{name} = {w} but the background has {name} = {got}"
                    )));
                }
            }
            let model = build(fp)?;
            Ok(SlowSetup::Geometric(model, Box::new(red)))
        }
    }
}

pub fn cmd_slowmodel(cfg: &Config, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let s = cfg
        .slowflow
        .as_ref()
        .ok_or_else(|| CliError::Validation("the slowmodel command needs a `slowflow` section".into()))?;
    let setup = slow_setup(cfg)?;
    let model = setup.model();
    let rep = setup.contract(s.max_iter, s.tol)?;
    let traj = &rep.trajectory;
    let exponent = 1.0 / (model.p as f64 - 2.0);
    let [t_lo, t_hi] = s.window;
    let sandwich = traj.sandwich(&rep.grid, t_lo, t_hi, exponent).map(|(c1, c2)| {
        json!({ "t_lo": t_lo, "t_hi": t_hi, "c1": c1, "c2": c2, "ratio": c2 / c1 })
    });
    let fit = fit_rate(&traj.times, &traj.dev_sup, Window::Time { t_lo, t_hi });
    let loj = lojasiewicz_probe_series(&traj.times, &traj.energy, &traj.gradient_norm);
    let mut o = Output::new(out, "slowmodel", provenance(cfg))?;
    o.write("slowflow.csv", &csv_bytes(|w| traj.write_csv(w)))?;
    o.write_json(
        "fit.json",
        json!({
            "p": model.p,
            "k": model.k,
            "predicted_exponent": exponent,
            "gamma": model.gamma,
            "v_hat": model.v_hat,
            "fp_vhat": model.fp_vhat,
            "amplitude": model.amplitude,
            "mu": model.mu,
            "kernel_exponents": model.exponents(),
            "T": model.t_shift,
            "horizon": rep.grid.horizon(),
            "horizon_extended": rep.horizon_extended,
            "rho": rep.rho,
            "iterations": rep.iterations,
            "differences": rep.differences,
            "norms": rep.norms,
            "in_ball": rep.in_ball,
            "tail_fraction": rep.tail_fraction,
            "residuals": { "kernel": rep.residuals.0, "perp": rep.residuals.1 },
            "sandwich": sandwich,
            "fit": fit.as_ref().ok(),
            "fit_error": fit.as_ref().err().map(|e| e.to_string()),
            "lojasiewicz": loj.as_ref().ok(),
            "lojasiewicz_error": loj.as_ref().err().map(|e| e.to_string()),
        }),
    )?;
    o.finish()
}

/// Fits the rate and the Łojasiewicz exponent of a flow CSV.
pub fn cmd_rates(input: &Path, cfg: Option<&Config>, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let bytes = fs::read(input)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", input.display())))?;
    let traj = Trajectory::read_csv(&bytes[..])?;
    let section = cfg.map(|c| c.rates.clone()).unwrap_or_default();
    let fit = fit_trajectory(&traj, section.series, section.window)?;
    let loj = lojasiewicz_probe(&traj);
    let mut prov = match cfg {
        Some(c) => provenance(c),
        None => json!({ "config": { "rates": section } }),
    };
    prov["input"] = json!(input.display().to_string());
    prov["input_sha256"] = json!(config::hex_digest(&bytes));
    let mut o = Output::new(out, "rates", prov)?;
    o.write_json(
        "fit.json",
        json!({
            "series": section.series,
            "kind": fit.kind,
            "delta_or_exponent": fit.rate,
            "constant": fit.constant,
            "r2": fit.r2,
            "window": fit.window,
            "samples": fit.samples,
            "theta": loj.as_ref().ok().map(|l| l.theta),
            "C": loj.as_ref().ok().map(|l| l.constant),
            "lojasiewicz": loj.as_ref().ok(),
            "lojasiewicz_error": loj.as_ref().err().map(|e| e.to_string()),
            "models": { "exponential": fit.exponential, "polynomial": fit.polynomial },
        }),
    )?;
    o.finish()
}

/// Text report of the product-manifold certificate.
pub fn cmd_certify_as3(n1: usize, n2: usize, m: f64, base_volume: f64, v3: f64, out: Option<&Path>) -> Result<String, CliError> {
    let rep = as3_certificate(n1, n2, m, base_volume, v3)?;
    let text = format!(
        "M^{n1} x CP^{n2}, m = {m}, n = {}\n\
         lambda1 = {}\n\
         R_FS = {}\n\
         required R^m = {}\n\
         weighted volume of M = {}\n\
         integral of v^3 = {}\n\
         F3 = {}\n\
         AS_3 = {}\n\
         {}\n",
        rep.n, rep.lambda1, rep.r_fs, rep.required_rm, rep.base_weighted_volume, rep.v3_integral, rep.f3, rep.as3, rep.explanation
    );
    if let Some(dir) = out {
        let prov = json!({ "config": { "n1": n1, "n2": n2, "m": m, "base_volume": base_volume, "v3": v3 } });
        let mut o = Output::new(dir, "certify-as3", prov)?;
        o.write_json("certificate.json", serde_json::to_value(&rep).expect("report serializes"))?;
        o.finish()?;
    }
    Ok(text)
}

/// Loads, resolves and runs one configuration.
pub fn run_config(cmd: Command, path: &Path, out: &Path, seed: Option<u64>) -> Result<Vec<PathBuf>, CliError> {
    let cfg = Config::load(path)?.resolve(seed)?;
    match cmd {
        Command::Flow => cmd_flow(&cfg, out),
        Command::Spectrum => cmd_spectrum(&cfg, out),
        Command::Reduce => cmd_reduce(&cfg, out),
        Command::Slowmodel => cmd_slowmodel(&cfg, out),
    }
}

/// Writes `error.json` (best effort) and returns the exit code.
pub fn report_error(err: &CliError, out: &Path) -> i32 {
    let body = json!({
        "schema_version": SCHEMA_VERSION,
        "exit_code": err.exit_code(),
        "kind": err.kind(),
        "message": err.to_string(),
    });
    if fs::create_dir_all(out).is_ok() {
        let _ = fs::write(out.join("error.json"), serde_json::to_string_pretty(&body).expect("json") + "\n");
    }
    err.exit_code()
}

/// Runs one config, or every `*.json` in a directory on `jobs` threads
/// (each into `out/<stem>/`). Returns the largest exit code.
pub fn run_batch(cmd: Command, path: &Path, out: &Path, seed: Option<u64>, jobs: usize) -> i32 {
    if !path.is_dir() {
        return match run_config(cmd, path, out, seed) {
            Ok(_) => 0,
            Err(e) => {
                eprintln!("wyf {}: {e}", cmd.name());
                report_error(&e, out)
            }
        };
    }
    let mut configs: Vec<PathBuf> = match fs::read_dir(path) {
        Ok(rd) => rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect(),
        Err(e) => {
            let err = CliError::Validation(format!("cannot list {}: {e}", path.display()));
            eprintln!("wyf {}: {err}", cmd.name());
            return report_error(&err, out);
        }
    };
    configs.sort();
    let next = AtomicUsize::new(0);
    let codes = Mutex::new(vec![0; configs.len()]);
    std::thread::scope(|scope| {
        for _ in 0..jobs.max(1).min(configs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(cfg) = configs.get(i) else { break };
                let stem = cfg.file_stem().map_or("run".into(), |s| s.to_string_lossy().into_owned());
                let dir = out.join(stem);
                let code = match run_config(cmd, cfg, &dir, seed) {
                    Ok(_) => 0,
                    Err(e) => {
                        eprintln!("wyf {} {}: {e}", cmd.name(), cfg.display());
                        report_error(&e, &dir)
                    }
                };
                codes.lock().expect("lock")[i] = code;
            });
        }
    });
    codes.into_inner().expect("lock").into_iter().max().unwrap_or(0)
}
