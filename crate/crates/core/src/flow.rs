//! Time integration of the conformal-factor evolution
//! `du/dt = ((n+m-2)/4) (r - R^m_phi) u`.
//!
//! Steppers implement [`Stepper`] and are selected by name through
//! [`SchemeRegistry`]. [`run`] adds step control, recording and the
//! deviation series.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::energy::numerator;
use crate::error::{Result, WyfError};
use crate::geometry::Field;
use crate::smms::{Base, Smms};

/// Maximal number of consecutive step halvings.
pub const MAX_REJECTIONS: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    #[serde(default = "default_scheme")]
    pub scheme: String,
    /// Nominal step; `None` selects a CFL-style step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub t_end: f64,
    #[serde(default)]
    pub renormalize: bool,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default = "default_safety")]
    pub safety: f64,
    /// Keep every k-th record as a snapshot (0: first and last only).
    #[serde(default)]
    pub snapshot_every: usize,
}

fn default_scheme() -> String {
    "rk4".into()
}
fn default_record_every() -> usize {
    10
}
fn default_safety() -> f64 {
    0.8
}

impl FlowConfig {
    pub fn new(scheme: &str, dt: Option<f64>, t_end: f64, record_every: usize) -> Self {
        Self {
            scheme: scheme.into(),
            dt,
            t_end,
            renormalize: false,
            record_every,
            safety: default_safety(),
            snapshot_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(WyfError::InvalidConfig(format!("dt must be positive, got {dt}")));
            }
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(WyfError::InvalidConfig(format!(
                "t_end must be positive, got {}",
                self.t_end
            )));
        }
        if !(self.safety > 0.0 && self.safety <= 1.0) {
            return Err(WyfError::InvalidConfig(format!(
                "safety must lie in (0, 1], got {}",
                self.safety
            )));
        }
        if self.record_every == 0 {
            return Err(WyfError::InvalidConfig("record_every must be positive".into()));
        }
        Ok(())
    }
}

/// Right-hand side `((n+m-2)/4)(r u - (-a Delta u + R^m u) u^{-q_lin})` with
/// `r = N/V`.
pub fn rhs(base: &Base, u: &[f64]) -> Field {
    let p = base.params();
    let c = p.kappa() / 4.0;
    let ql = p.q_lin();
    let q = p.q_vol();
    let vol = base
        .bg()
        .integrate(&u.iter().map(|x| x.powf(q)).collect::<Vec<_>>(), true);
    let r = base.quadratic_form(u, u) / vol;
    let lu = base.conformal_laplacian(u);
    let mut out: Field = lu
        .iter()
        .zip(u)
        .map(|(l, u)| c * (r * u - l * u.powf(-ql)))
        .collect();
    base.bg().dealias(&mut out);
    out
}

/// One time step of a scheme.
pub trait Stepper: Send + Sync {
    fn name(&self) -> &'static str;
    fn step(&self, base: &Base, u: &[f64], dt: f64) -> Result<Field>;
}

fn axpy(u: &[f64], a: f64, k: &[f64]) -> Field {
    u.iter().zip(k).map(|(u, k)| u + a * k).collect()
}

fn positive(u: &[f64]) -> bool {
    u.iter().all(|x| *x > 0.0 && x.is_finite())
}

/// Classical four-stage Runge–Kutta with `r` recomputed at every stage.
pub struct Rk4;

impl Stepper for Rk4 {
    fn name(&self) -> &'static str {
        "rk4"
    }

    fn step(&self, base: &Base, u: &[f64], dt: f64) -> Result<Field> {
        let stage = |v: &[f64]| -> Result<Field> {
            if !positive(v) {
                let (index, value) = v
                    .iter()
                    .copied()
                    .enumerate()
                    .find(|(_, x)| !(*x > 0.0))
                    .unwrap_or((0, f64::NAN));
                return Err(WyfError::NonPositive { index, value });
            }
            Ok(rhs(base, v))
        };
        let k1 = stage(u)?;
        let k2 = stage(&axpy(u, dt / 2.0, &k1))?;
        let k3 = stage(&axpy(u, dt / 2.0, &k2))?;
        let k4 = stage(&axpy(u, dt, &k3))?;
        Ok(u
            .iter()
            .enumerate()
            .map(|(i, u)| u + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect())
    }
}

/// Backward Euler on the diffusion part `(n+m-1) u0^{-q_lin} Delta_{phi0}`,
/// frozen at the step start, explicit on the remainder.
///
/// `I - dt D Delta_{phi0}` is symmetric positive definite in the inner
/// product with weights `mass e^{-phi0} / D`, where conjugate gradients runs.
pub struct ImexBackwardEuler {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ImexBackwardEuler {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 2000,
        }
    }
}

impl Stepper for ImexBackwardEuler {
    fn name(&self) -> &'static str {
        "imex_be"
    }

    fn step(&self, base: &Base, u: &[f64], dt: f64) -> Result<Field> {
        let p = base.params();
        let ql = p.q_lin();
        let d: Field = u.iter().map(|x| p.nm1() * x.powf(-ql)).collect();
        let bg = base.bg();
        let lap_u = bg.weighted_laplacian(u);
        let f = rhs(base, u);
        let b: Field = (0..u.len())
            .map(|i| u[i] + dt * (f[i] - d[i] * lap_u[i]))
            .collect();
        let w: Field = bg
            .mass()
            .iter()
            .zip(bg.density())
            .zip(&d)
            .map(|((m, e), d)| m * e / d)
            .collect();
        let apply = |x: &[f64]| -> Field {
            let l = bg.weighted_laplacian(x);
            (0..x.len()).map(|i| x[i] - dt * d[i] * l[i]).collect()
        };
        let dot = |a: &[f64], b: &[f64]| -> f64 {
            a.iter().zip(b).zip(&w).map(|((a, b), w)| a * b * w).sum()
        };
        let mut x = u.to_vec();
        let ax = apply(&x);
        let mut r: Field = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let mut pdir = r.clone();
        let bnorm = dot(&b, &b).sqrt().max(f64::MIN_POSITIVE);
        let mut rr = dot(&r, &r);
        let mut it = 0;
        while rr.sqrt() > self.tol * bnorm {
            if it == self.max_iter {
                return Err(WyfError::LinearSolver {
                    residual: rr.sqrt() / bnorm,
                    iterations: it,
                });
            }
            let ap = apply(&pdir);
            let alpha = rr / dot(&pdir, &ap);
            for i in 0..x.len() {
                x[i] += alpha * pdir[i];
                r[i] -= alpha * ap[i];
            }
            let rr_new = dot(&r, &r);
            let beta = rr_new / rr;
            for i in 0..x.len() {
                pdir[i] = r[i] + beta * pdir[i];
            }
            rr = rr_new;
            it += 1;
        }
        if !positive(&x) {
            let (index, value) = x
                .iter()
                .copied()
                .enumerate()
                .find(|(_, v)| !(*v > 0.0))
                .unwrap_or((0, f64::NAN));
            return Err(WyfError::NonPositive { index, value });
        }
        Ok(x)
    }
}

/// Name-indexed set of time-stepping schemes.
pub struct SchemeRegistry {
    schemes: BTreeMap<&'static str, Box<dyn Stepper>>,
}

impl Default for SchemeRegistry {
    fn default() -> Self {
        let mut r = Self {
            schemes: BTreeMap::new(),
        };
        r.register(Box::new(Rk4));
        r.register(Box::new(ImexBackwardEuler::default()));
        r
    }
}

impl SchemeRegistry {
    pub fn register(&mut self, s: Box<dyn Stepper>) {
        self.schemes.insert(s.name(), s);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.schemes.keys().copied().collect()
    }

    pub fn get(&self, name: &str) -> Result<&dyn Stepper> {
        self.schemes.get(name).map(|b| b.as_ref()).ok_or_else(|| {
            WyfError::InvalidConfig(format!(
                "unknown scheme `{name}` (known: {})",
                self.names().join(", ")
            ))
        })
    }
}

/// `r(u2) - r(u1)` evaluated without cancellation.
pub fn r_increment(base: &Base, u1: &[f64], u2: &[f64]) -> f64 {
    let q = base.params().q_vol();
    let bg = base.bg();
    let delta: Field = u2.iter().zip(u1).map(|(a, b)| a - b).collect();
    let sum: Field = u2.iter().zip(u1).map(|(a, b)| a + b).collect();
    let dn = base.quadratic_form(&delta, &sum);
    let v1 = bg.integrate(&u1.iter().map(|x| x.powf(q)).collect::<Vec<_>>(), true);
    let dv_density: Field = u1
        .iter()
        .zip(&delta)
        .map(|(a, d)| a.powf(q) * (q * (d / a).ln_1p()).exp_m1())
        .collect();
    let dv = bg.integrate(&dv_density, true);
    let v2 = v1 + dv;
    let n1 = base.quadratic_form(u1, u1);
    dn / v2 - n1 * dv / (v1 * v2)
}

/// Energy dissipation rate `((n+m-2)/2) integral (R - r)^2 u^{q_vol} e^{-phi0} / V`.
pub fn dissipation_rate(base: &Base, u: &[f64]) -> f64 {
    let p = base.params();
    let q = p.q_vol();
    let qc = p.q_curv();
    let bg = base.bg();
    let w: Field = u.iter().map(|x| x.powf(q)).collect();
    let vol = bg.integrate(&w, true);
    let r = base.quadratic_form(u, u) / vol;
    let lu = base.conformal_laplacian(u);
    let integrand: Field = lu
        .iter()
        .zip(u)
        .zip(&w)
        .map(|((l, u), w)| {
            let dev = l / u.powf(qc) - r;
            dev * dev * w
        })
        .collect();
    p.kappa() / 2.0 * bg.integrate(&integrand, true) / vol
}

/// Recorded flow history.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub r_values: Vec<f64>,
    pub volumes: Vec<f64>,
    pub de_l2: Vec<f64>,
    pub sup_dev: Vec<f64>,
    pub h1_dev: Vec<f64>,
    /// `r_k - r_{k-1}` computed stably (0 for the first record).
    pub r_increments: Vec<f64>,
    /// Dissipation rate at each record.
    pub dissipation: Vec<f64>,
    /// Sparse snapshots `(t, u)`.
    pub snapshots: Vec<(f64, Field)>,
    /// Conformal factor at every record (not serialized).
    pub states: Vec<Field>,
    /// Number of rejected steps.
    pub rejections: usize,
}

pub const CSV_HEADER: &str = "t,r_m,volume,de_l2,sup_dev,h1_dev";

/// 17 significant decimal digits.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for i in 0..self.len() {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                fmt17(self.times[i]),
                fmt17(self.r_values[i]),
                fmt17(self.volumes[i]),
                fmt17(self.de_l2[i]),
                fmt17(self.sup_dev[i]),
                fmt17(self.h1_dev[i])
            )?;
        }
        Ok(())
    }

    /// One row per snapshot: `t` followed by node samples.
    pub fn write_snapshots_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let n = self.snapshots.first().map_or(0, |s| s.1.len());
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((0..n).map(|i| format!("u{i}")))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for (t, u) in &self.snapshots {
            let row: Vec<String> = std::iter::once(fmt17(*t))
                .chain(u.iter().map(|x| fmt17(*x)))
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Reads the series written by [`Trajectory::write_csv`].
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| WyfError::InvalidConfig("empty trajectory file".into()))?
            .map_err(|e| WyfError::InvalidConfig(e.to_string()))?;
        if header.trim() != CSV_HEADER {
            return Err(WyfError::InvalidConfig(format!(
                "unexpected trajectory header `{header}`"
            )));
        }
        let mut t = Trajectory::default();
        for (k, line) in lines.enumerate() {
            let line = line.map_err(|e| WyfError::InvalidConfig(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| WyfError::InvalidConfig(format!("row {}: {e}", k + 2)))?;
            if vals.len() != 6 {
                return Err(WyfError::InvalidConfig(format!(
                    "row {} has {} columns",
                    k + 2,
                    vals.len()
                )));
            }
            t.times.push(vals[0]);
            t.r_values.push(vals[1]);
            t.volumes.push(vals[2]);
            t.de_l2.push(vals[3]);
            t.sup_dev.push(vals[4]);
            t.h1_dev.push(vals[5]);
        }
        Ok(t)
    }
}

/// `||2 (R - r) u^{q_curv}||` in the base weighted L² norm.
fn de_norm(base: &Base, u: &[f64], r: f64) -> f64 {
    let qc = base.params().q_curv();
    let lu = base.conformal_laplacian(u);
    let g: Field = lu
        .iter()
        .zip(u)
        .map(|(l, u)| 2.0 * (l - r * u.powf(qc)))
        .collect();
    base.norm(&g)
}

/// CFL-style step for explicit schemes.
pub fn cfl_dt(base: &Base, u: &[f64], safety: f64) -> f64 {
    let p = base.params();
    let umin = u.iter().copied().fold(f64::INFINITY, f64::min);
    let coeff = p.nm1() * umin.powf(-p.q_lin()) * base.bg().spectral_radius();
    2.5 * safety / coeff.max(f64::MIN_POSITIVE)
}

/// Integrates the flow from `s0` and records the diagnostics.
pub fn run(s0: &Smms, cfg: &FlowConfig, schemes: &SchemeRegistry) -> Result<Trajectory> {
    cfg.validate()?;
    let stepper = schemes.get(&cfg.scheme)?;
    let base = s0.base().clone();
    let dt = cfg.dt.unwrap_or_else(|| cfl_dt(&base, s0.u(), cfg.safety));
    let steps = (cfg.t_end / dt).round().max(1.0) as usize;
    let dt = cfg.t_end / steps as f64;
    let q = base.params().q_vol();

    let mut traj = Trajectory::default();
    let mut u = s0.u().to_vec();
    let mut prev: Option<Field> = None;
    let record = |traj: &mut Trajectory, t: f64, u: &[f64], prev: &Option<Field>| {
        let vol = base
            .bg()
            .integrate(&u.iter().map(|x| x.powf(q)).collect::<Vec<_>>(), true);
        let r = base.quadratic_form(u, u) / vol;
        traj.times.push(t);
        traj.r_values.push(r);
        traj.volumes.push(vol);
        traj.de_l2.push(de_norm(&base, u, r));
        traj.dissipation.push(dissipation_rate(&base, u));
        traj.r_increments
            .push(prev.as_ref().map_or(0.0, |p| r_increment(&base, p, u)));
        traj.states.push(u.to_vec());
    };
    record(&mut traj, 0.0, &u, &prev);
    let mut r_last = traj.r_values[0];
    for k in 1..=steps {
        let (next, rejected) = advance(stepper, &base, &u, dt, 0)?;
        traj.rejections += rejected;
        u = next;
        let t = k as f64 * dt;
        let r_now = numerator_ratio(&base, &u);
        let increase = r_now - r_last;
        if increase > 1e-6 * r_last.abs().max(1e-12) {
            return Err(WyfError::NonMonotone { t, increase });
        }
        r_last = r_now;
        if k % cfg.record_every == 0 || k == steps {
            prev = traj.states.last().cloned();
            if cfg.renormalize {
                // Record the drifted state, then renormalize.
                record(&mut traj, t, &u, &prev);
                let c = Smms::new(base.clone(), u.clone())?.normalization_factor();
                u.iter_mut().for_each(|x| *x *= c);
                r_last = numerator_ratio(&base, &u);
            } else {
                record(&mut traj, t, &u, &prev);
            }
        }
    }
    finish_deviations(&base, &mut traj, cfg.snapshot_every);
    Ok(traj)
}

fn numerator_ratio(base: &Base, u: &[f64]) -> f64 {
    base.quadratic_form(u, u) / volume_of(base, u)
}

/// Largest relative volume change accepted in one step; the exact flow
/// conserves the volume, so a jump signals an unstable step.
const VOLUME_JUMP: f64 = 1e-4;

/// One nominal step; on positivity loss, an increase of `r` or a volume
/// jump the interval is split into two half steps, recursively.
fn advance(
    stepper: &dyn Stepper,
    base: &Base,
    u: &[f64],
    dt: f64,
    depth: usize,
) -> Result<(Field, usize)> {
    let r0 = numerator_ratio(base, u);
    let v0 = volume_of(base, u);
    match stepper.step(base, u, dt) {
        Ok(next) => {
            let r1 = numerator_ratio(base, &next);
            let v1 = volume_of(base, &next);
            let jump = !((v1 / v0 - 1.0).abs() <= VOLUME_JUMP);
            if r1 - r0 <= 1e-9 * r0.abs() + 1e-14 && !jump {
                return Ok((next, 0));
            }
        }
        Err(WyfError::NonPositive { .. }) => {}
        Err(e) => return Err(e),
    }
    if depth >= MAX_REJECTIONS {
        return Err(WyfError::StiffnessFailure {
            t: f64::NAN,
            rejections: depth,
        });
    }
    let (half, a) = advance(stepper, base, u, dt / 2.0, depth + 1)?;
    let (full, b) = advance(stepper, base, &half, dt / 2.0, depth + 1)?;
    Ok((full, 1 + a + b))
}

fn volume_of(base: &Base, u: &[f64]) -> f64 {
    let q = base.params().q_vol();
    base.bg()
        .integrate(&u.iter().map(|x| x.powf(q)).collect::<Vec<_>>(), true)
}

fn finish_deviations(base: &Base, traj: &mut Trajectory, snapshot_every: usize) {
    let uref = traj.states.last().cloned().unwrap_or_default();
    let n = traj.states.len();
    for (k, u) in traj.states.iter().enumerate() {
        let d: Field = u.iter().zip(&uref).map(|(a, b)| a - b).collect();
        let sup = d.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let g = base.bg().weighted_gradient_inner(&d, &d);
        let h1: Field = g.iter().zip(&d).map(|(g, d)| g + d * d).collect();
        traj.sup_dev.push(sup);
        traj.h1_dev
            .push(base.bg().integrate(&h1, true).max(0.0).sqrt());
        let keep = k == 0 || k + 1 == n || (snapshot_every > 0 && k % snapshot_every == 0);
        if keep {
            traj.snapshots.push((traj.times[k], u.clone()));
        }
    }
}

/// Final `sup |R^m_phi - r|` of a state.
pub fn curvature_deviation(base: &Base, u: &[f64]) -> f64 {
    let s = match Smms::new(std::sync::Arc::new(base.clone()), u.to_vec()) {
        Ok(s) => s,
        Err(_) => return f64::INFINITY,
    };
    let r = numerator(&s) / s.weighted_volume();
    s.weighted_scalar_curvature()
        .iter()
        .fold(0.0f64, |a, x| a.max((x - r).abs()))
}

/// Increments below this fraction of `r` are at the roundoff level of the
/// stable difference and are not compared.
pub const INCREMENT_FLOOR: f64 = 1e-10;

/// Worst relative mismatch between `r_{k+1} - r_{k-1}` and the Simpson
/// integral of `-dissipation` over the same two record intervals. Pairs of
/// unequal intervals are skipped. `None` if nothing was compared.
pub fn dissipation_mismatch(traj: &Trajectory) -> Option<f64> {
    let t = &traj.times;
    let mut worst: Option<f64> = None;
    for k in 1..traj.len().saturating_sub(1) {
        let (h0, h1) = (t[k] - t[k - 1], t[k + 1] - t[k]);
        if (h0 - h1).abs() > 1e-9 * h0 {
            continue;
        }
        let inc = traj.r_increments[k] + traj.r_increments[k + 1];
        if inc.abs() < INCREMENT_FLOOR * traj.r_values[k].abs() {
            continue;
        }
        let d = &traj.dissipation;
        let simpson = -(h0 / 3.0) * (d[k - 1] + 4.0 * d[k] + d[k + 1]);
        let rel = (inc - simpson).abs() / simpson.abs().max(f64::MIN_POSITIVE);
        worst = Some(worst.map_or(rel, |w| w.max(rel)));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_sphere_background, build_torus_background, Phi0Spec};
    use crate::smms::Params;
    use std::sync::Arc;

    fn torus(grid: usize) -> Arc<Base> {
        let spec = Phi0Spec::parse("expr:0.3*cos(x1)").unwrap();
        let bg = build_torus_background(2, &[grid, grid], &spec, false).unwrap();
        Base::new(bg, Params::new(2, 2.0).unwrap()).unwrap()
    }

    fn initial(base: &Arc<Base>) -> Smms {
        let u = base
            .bg()
            .coords()
            .iter()
            .map(|x| 1.0 + 0.1 * x[1].cos())
            .collect();
        Smms::new(base.clone(), u).unwrap().normalize_volume()
    }

    #[test]
    fn stationary_sphere() {
        let bg = build_sphere_background(3, 32)
            .unwrap()
            .with_unit_weighted_volume()
            .unwrap();
        let base = Base::new(bg, Params::new(3, 0.0).unwrap()).unwrap();
        let u = vec![1.0; 32];
        for s in SchemeRegistry::default().names() {
            let next = SchemeRegistry::default()
                .get(s)
                .unwrap()
                .step(&base, &u, 1e-4)
                .unwrap();
            assert!(next.iter().all(|x| (x - 1.0).abs() < 1e-12), "{s}");
        }
        let cfg = FlowConfig::new("rk4", Some(1e-4), 0.01, 10);
        let traj = run(&base.unit(), &cfg, &SchemeRegistry::default()).unwrap();
        assert!(traj.sup_dev.iter().all(|x| *x == 0.0));
        assert!(traj.h1_dev.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn constant_factor_stays_constant() {
        let bg = build_sphere_background(3, 32)
            .unwrap()
            .with_unit_weighted_volume()
            .unwrap();
        let base = Base::new(bg, Params::new(3, 1.0).unwrap()).unwrap();
        let s = Smms::new(base.clone(), vec![1.7; 32]).unwrap();
        let mut cfg = FlowConfig::new("rk4", Some(1e-4), 0.01, 50);
        cfg.renormalize = true;
        let traj = run(&s, &cfg, &SchemeRegistry::default()).unwrap();
        let last = traj.states.last().unwrap();
        let spread = last.iter().fold(0.0f64, |a, x| a.max((x - last[0]).abs()));
        assert!(spread < 1e-12);
        let c = Smms::new(base, last.clone()).unwrap().normalization_factor();
        assert!(last.iter().all(|x| (x * c - 1.0).abs() < 1e-12));
    }

    #[test]
    fn step_halving_self_convergence() {
        let base = torus(16);
        let s = initial(&base);
        let reg = SchemeRegistry::default();
        let a = run(&s, &FlowConfig::new("rk4", Some(1e-3), 1.0, 100), &reg).unwrap();
        let b = run(&s, &FlowConfig::new("rk4", Some(5e-4), 1.0, 200), &reg).unwrap();
        let (ua, ub) = (a.states.last().unwrap(), b.states.last().unwrap());
        let d = ua.iter().zip(ub).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(d < 1e-7, "{d:e}");
        assert!(a.r_values.windows(2).all(|w| w[1] <= w[0] + 1e-9 * w[0].abs()));
    }

    #[test]
    fn imex_tracks_rk4() {
        let base = torus(16);
        let s = initial(&base);
        let reg = SchemeRegistry::default();
        let a = run(&s, &FlowConfig::new("rk4", Some(1e-3), 0.2, 200), &reg).unwrap();
        let b = run(&s, &FlowConfig::new("imex_be", Some(1e-4), 0.2, 2000), &reg).unwrap();
        let (ua, ub) = (a.states.last().unwrap(), b.states.last().unwrap());
        let d = ua.iter().zip(ub).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(d < 1e-4, "{d:e}");
        let v = &b.volumes;
        assert!((v[v.len() - 1] - v[0]).abs() < 1e-3);
    }

    #[test]
    fn imex_tolerates_large_steps() {
        let base = torus(16);
        let s = initial(&base);
        let reg = SchemeRegistry::default();
        let traj = run(&s, &FlowConfig::new("imex_be", Some(0.05), 2.0, 1), &reg).unwrap();
        assert!(traj.r_values.windows(2).all(|w| w[1] <= w[0] + 1e-9 * w[0].abs()));
        assert!(traj.sup_dev[0] > 0.0);
    }

    #[test]
    fn stable_increment_matches_direct_difference() {
        let base = torus(16);
        let s = initial(&base);
        let u1 = s.u().to_vec();
        let u2: Field = u1.iter().enumerate().map(|(i, x)| x + 1e-3 * ((i % 7) as f64 - 3.0)).collect();
        let direct = numerator_ratio(&base, &u2) - numerator_ratio(&base, &u1);
        let stable = r_increment(&base, &u1, &u2);
        assert!((direct - stable).abs() < 1e-12 * direct.abs().max(1e-3));
    }

    #[test]
    fn csv_round_trip() {
        let base = torus(16);
        let s = initial(&base);
        let traj = run(&s, &FlowConfig::new("rk4", Some(1e-3), 0.05, 10), &SchemeRegistry::default()).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(CSV_HEADER));
        let back = Trajectory::read_csv(io::Cursor::new(buf)).unwrap();
        assert_eq!(back.times, traj.times);
        assert_eq!(back.r_values, traj.r_values);
        assert_eq!(back.h1_dev, traj.h1_dev);
    }

    #[test]
    fn config_validation() {
        let mut c = FlowConfig::new("rk4", Some(-1.0), 1.0, 1);
        assert!(c.validate().is_err());
        c.dt = Some(1e-3);
        c.safety = 1.5;
        assert!(c.validate().is_err());
        assert!(SchemeRegistry::default().get("euler").is_err());
    }
}
