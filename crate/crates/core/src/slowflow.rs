//! Slowly converging solutions near a degenerate critical point.
//!
//! The flow is split as `u = 1 + phi + w_top + Phi(phi + w_top) + w_perp`
//! where `phi` is the explicit ansatz along the maximizer `v_hat` of the
//! leading term `F_p`. The remainder `w` is the fixed point of a map built
//! from two linear solvers: a kernel ODE with `1/(T+t)` damping and a
//! heat equation on the complement of the kernel.
//!
//! Paths are stored time-major: `path[i]` is the vector at `grid.times()[i]`.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::energy::differential;
use crate::geometry::gauss_jacobi;
use crate::geometry::Field;
use crate::rates::line_fit;
use crate::reduction::{check_as_p, Reduction, SymTensor};
use crate::smms::Smms;
use crate::{Result, WyfError};

pub type Path = Vec<Vec<f64>>;

/// Relative tail share above which the horizon is extended once.
pub const TAIL_TOLERANCE: f64 = 1e-10;
/// Slack allowed on the measured forcing envelope before rejecting it.
pub const ENVELOPE_SLACK: f64 = 0.05;
/// Minimal distance between `gamma` and every `b_i`.
pub const GAMMA_SEPARATION: f64 = 1e-6;

const GL_POINTS: usize = 8;
const STENCIL_INTERP: usize = 6;
const STENCIL_DIFF: usize = 9;
// Distances from the kernel peak, in units of 1/|delta|.
const HEAT_BREAKS: [f64; 14] = [
    0.0, 0.25, 0.5, 1.0, 2.0, 3.0, 4.0, 6.0, 8.0, 12.0, 16.0, 24.0, 32.0, 48.0,
];

fn lagrange_weights(nodes: &[f64], x: f64) -> Vec<f64> {
    (0..nodes.len())
        .map(|j| {
            let mut w = 1.0;
            for (m, xm) in nodes.iter().enumerate() {
                if m != j {
                    w *= (x - xm) / (nodes[j] - xm);
                }
            }
            w
        })
        .collect()
}

fn lagrange_derivative_weights(nodes: &[f64], x: f64) -> Vec<f64> {
    (0..nodes.len())
        .map(|j| {
            let mut total = 0.0;
            for (m, xm) in nodes.iter().enumerate() {
                if m == j {
                    continue;
                }
                let mut prod = 1.0 / (nodes[j] - xm);
                for (l, xl) in nodes.iter().enumerate() {
                    if l != j && l != m {
                        prod *= (x - xl) / (nodes[j] - xl);
                    }
                }
                total += prod;
            }
            total
        })
        .collect()
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Time grid, uniform either in `ln(T+t)` or in `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    t: Vec<f64>,
    x: Vec<f64>,
    hx: f64,
    shift: f64,
    log: bool,
}

impl TimeGrid {
    /// Points uniform in `ln(T+t)` on `[0, horizon]`.
    pub fn geometric(shift: f64, horizon: f64, per_decade: usize) -> Result<Self> {
        if !(shift > 0.0 && horizon > 0.0 && per_decade >= 4) {
            return Err(WyfError::InvalidConfig(format!(
                "geometric grid needs T > 0, horizon > 0 and at least 4 points per decade (T = {shift}, horizon = {horizon}, per_decade = {per_decade})"
            )));
        }
        let (x0, x1) = (shift.ln(), (shift + horizon).ln());
        let decades = (x1 - x0) / std::f64::consts::LN_10;
        let n = ((decades * per_decade as f64).ceil() as usize + 1).max(STENCIL_DIFF + 1);
        let hx = (x1 - x0) / (n - 1) as f64;
        let x: Vec<f64> = (0..n).map(|i| x0 + i as f64 * hx).collect();
        let mut t: Vec<f64> = x.iter().map(|x| x.exp() - shift).collect();
        t[0] = 0.0;
        t[n - 1] = horizon;
        Ok(Self {
            t,
            x,
            hx,
            shift,
            log: true,
        })
    }

    /// `n` equispaced points on `[0, t_end]`; `shift` enters only through `T+t`.
    pub fn uniform(shift: f64, t_end: f64, n: usize) -> Result<Self> {
        if !(shift > 0.0 && t_end > 0.0 && n > STENCIL_DIFF) {
            return Err(WyfError::InvalidConfig(format!(
                "uniform grid needs T > 0, t_end > 0 and more than {STENCIL_DIFF} points"
            )));
        }
        let hx = t_end / (n - 1) as f64;
        let t: Vec<f64> = (0..n).map(|i| i as f64 * hx).collect();
        Ok(Self {
            x: t.clone(),
            t,
            hx,
            shift,
            log: false,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.t
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn horizon(&self) -> f64 {
        self.t[self.t.len() - 1]
    }

    pub fn is_geometric(&self) -> bool {
        self.log
    }

    fn natural(&self, t: f64) -> f64 {
        if self.log {
            (self.shift + t).ln()
        } else {
            t
        }
    }

    fn time_of(&self, x: f64) -> f64 {
        if self.log {
            x.exp() - self.shift
        } else {
            x
        }
    }

    fn jacobian(&self, t: f64) -> f64 {
        if self.log {
            self.shift + t
        } else {
            1.0
        }
    }

    fn stencil_start(&self, interval: usize, width: usize) -> usize {
        let n = self.len();
        (interval + 1).saturating_sub(width / 2).min(n - width)
    }

    /// Interpolation weights on the stencil attached to `interval`.
    fn interp_on(&self, interval: usize, t: f64) -> (usize, Vec<f64>) {
        let start = self.stencil_start(interval, STENCIL_INTERP);
        let nodes = &self.x[start..start + STENCIL_INTERP];
        (start, lagrange_weights(nodes, self.natural(t)))
    }

    fn interval_of(&self, t: f64) -> usize {
        let j = ((self.natural(t) - self.x[0]) / self.hx).floor();
        (j.max(0.0) as usize).min(self.len() - 2)
    }

    /// Six-point Lagrange interpolation in the natural coordinate.
    pub fn interpolate(&self, y: &[f64], t: f64) -> f64 {
        let (start, w) = self.interp_on(self.interval_of(t), t);
        w.iter().zip(&y[start..]).map(|(w, y)| w * y).sum()
    }

    /// Eighth-order difference approximation of `dy/dt`.
    pub fn derivative(&self, y: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let start = i.saturating_sub(STENCIL_DIFF / 2).min(n - STENCIL_DIFF);
                let nodes = &self.x[start..start + STENCIL_DIFF];
                let w = lagrange_derivative_weights(nodes, self.x[i]);
                let dydx: f64 = w.iter().zip(&y[start..]).map(|(w, y)| w * y).sum();
                dydx / self.jacobian(self.t[i])
            })
            .collect()
    }

    /// Componentwise derivative of a path.
    pub fn path_derivative(&self, path: &Path) -> Path {
        let dim = path.first().map_or(0, |v| v.len());
        let mut out = vec![vec![0.0; dim]; self.len()];
        for c in 0..dim {
            let series: Vec<f64> = path.iter().map(|v| v[c]).collect();
            for (o, d) in out.iter_mut().zip(self.derivative(&series)) {
                o[c] = d;
            }
        }
        out
    }

    /// Measured decay exponent `q` of `|y| ~ (T+t)^{-q}` over the last decade
    /// of the grid; `None` when the series vanishes there.
    pub fn envelope_exponent(&self, y: &[f64]) -> Option<f64> {
        let end = self.shift + self.horizon();
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for (t, v) in self.t.iter().zip(y) {
            let inside = if self.log {
                self.shift + t >= end / 10.0
            } else {
                *t >= 0.9 * self.horizon()
            };
            if inside && v.abs() > 0.0 {
                xs.push((self.shift + t).ln());
                ys.push(v.abs().ln());
            }
        }
        if xs.len() < 3 {
            return None;
        }
        Some(-line_fit(&xs, &ys).slope)
    }
}

/// Power `s` such that `(T+t)^s e` is nearly flat, fitted over the whole
/// geometric grid; zero on uniform grids.
fn flattening_exponent(grid: &TimeGrid, e: &[f64]) -> f64 {
    if !grid.log {
        return 0.0;
    }
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (t, v) in grid.t.iter().zip(e) {
        if v.abs() > 0.0 {
            xs.push((grid.shift + t).ln());
            ys.push(v.abs().ln());
        }
    }
    if xs.len() < 3 {
        return 0.0;
    }
    let s = -line_fit(&xs, &ys).slope;
    if s.is_finite() {
        s
    } else {
        0.0
    }
}

/// Interpolant of `e` built on the flattened samples.
struct Forcing<'a> {
    grid: &'a TimeGrid,
    flat: Vec<f64>,
    s: f64,
}

impl<'a> Forcing<'a> {
    fn new(grid: &'a TimeGrid, e: &[f64]) -> Self {
        let s = flattening_exponent(grid, e);
        let flat = grid.t.iter().zip(e).map(|(t, e)| (grid.shift + t).powf(s) * e).collect();
        Self { grid, flat, s }
    }

    fn at(&self, interval: usize, t: f64) -> f64 {
        let (start, w) = self.grid.interp_on(interval, t);
        let f: f64 = w.iter().zip(&self.flat[start..]).map(|(a, b)| a * b).sum();
        f * (self.grid.shift + t).powf(-self.s)
    }
}

fn gl_rule() -> (Vec<f64>, Vec<f64>) {
    let (nodes, weights, _, _) = gauss_jacobi(GL_POINTS, 0.0);
    (nodes, weights)
}

fn column(path: &Path, c: usize) -> Vec<f64> {
    path.iter().map(|v| v[c]).collect()
}

/// Result of the kernel solver.
#[derive(Debug, Clone)]
pub struct KernelSolution {
    pub v: Path,
    /// Exact derivative from the equation.
    pub dv: Path,
    /// Share of the horizon tail in the backward integrals at `t = 0`.
    pub tail_fraction: f64,
}

/// Solves `v' + b v/(T+t) = (kappa/8) e` for one component.
///
/// Backward integral when `gamma > b`, forward from `v(0) = 0` otherwise.
fn kernel_component(grid: &TimeGrid, e: &[f64], b: f64, backward: bool, kappa: f64) -> Result<(Vec<f64>, f64)> {
    let (nodes, weights) = gl_rule();
    let n = grid.len();
    let shift = grid.shift;
    let f = Forcing::new(grid, e);
    let mut pieces = vec![0.0; n - 1];
    for (j, piece) in pieces.iter_mut().enumerate() {
        let (xa, xb) = (grid.x[j], grid.x[j + 1]);
        let (mid, half) = (0.5 * (xa + xb), 0.5 * (xb - xa));
        let mut acc = 0.0;
        for (z, w) in nodes.iter().zip(&weights) {
            let t = grid.time_of(mid + half * z);
            acc += w * (shift + t).powf(b) * f.at(j, t) * grid.jacobian(t);
        }
        *piece = acc * half;
    }
    let scale = kappa / 8.0;
    let mut v = vec![0.0; n];
    if backward {
        let eh = e[n - 1];
        let tail = if eh == 0.0 {
            0.0
        } else {
            let q = grid.envelope_exponent(e).unwrap_or(f64::INFINITY);
            if q <= b + 1.0 {
                return Err(WyfError::IllPosed(format!(
                    "forcing decays like (T+t)^-{q:.3}, too slowly for the backward integral with b = {b:.3}"
                )));
            }
            if q.is_finite() {
                eh * (shift + grid.horizon()).powf(b + 1.0) / (q - b - 1.0)
            } else {
                0.0
            }
        };
        let mut acc = tail;
        v[n - 1] = -scale * (shift + grid.t[n - 1]).powf(-b) * acc;
        for j in (0..n - 1).rev() {
            acc += pieces[j];
            v[j] = -scale * (shift + grid.t[j]).powf(-b) * acc;
        }
        let frac = if acc != 0.0 { (tail / acc).abs() } else { 0.0 };
        Ok((v, frac))
    } else {
        let mut acc = 0.0;
        for j in 0..n - 1 {
            acc += pieces[j];
            v[j + 1] = scale * (shift + grid.t[j + 1]).powf(-b) * acc;
        }
        Ok((v, 0.0))
    }
}

/// Solves `u' + delta u = e` for one component with the decaying choice of
/// constant: forward from `u(0) = 0` for `delta > 0`, backward for `delta < 0`.
fn heat_component(grid: &TimeGrid, e: &[f64], delta: f64) -> Vec<f64> {
    let (nodes, weights) = gl_rule();
    let n = grid.len();
    let lambda = delta.abs();
    let f = Forcing::new(grid, e);
    let forcing = |j: usize, t: f64| f.at(j, t);
    // Integral of exp(-lambda * dist) e over one interval, dist measured
    // from the peak end.
    let piece = |j: usize, peak_at_right: bool| -> f64 {
        let (a, b) = (grid.t[j], grid.t[j + 1]);
        let h = b - a;
        let mut cuts: Vec<f64> = HEAT_BREAKS
            .iter()
            .map(|m| m / lambda)
            .take_while(|d| *d < h)
            .collect();
        cuts.push(h);
        let mut acc = 0.0;
        for w2 in cuts.windows(2) {
            let (d0, d1) = (w2[0], w2[1]);
            let (mid, half) = (0.5 * (d0 + d1), 0.5 * (d1 - d0));
            for (z, w) in nodes.iter().zip(&weights) {
                let d = mid + half * z;
                let t = if peak_at_right { b - d } else { a + d };
                acc += w * half * (-lambda * d).exp() * forcing(j, t);
            }
        }
        acc
    };
    let mut u = vec![0.0; n];
    if delta > 0.0 {
        for j in 0..n - 1 {
            let h = grid.t[j + 1] - grid.t[j];
            u[j + 1] = (-lambda * h).exp() * u[j] + piece(j, true);
        }
    } else {
        let eh = e[n - 1];
        let q = grid.envelope_exponent(e).filter(|q| q.is_finite()).unwrap_or(0.0);
        u[n - 1] = -eh / (lambda + q / (grid.shift + grid.horizon()));
        for j in (0..n - 1).rev() {
            let h = grid.t[j + 1] - grid.t[j];
            u[j] = (-lambda * h).exp() * u[j + 1] - piece(j, false);
        }
    }
    u
}

/// Orthogonal heat solver `u' = L_inf u + E` in eigencoordinates, where
/// `L_inf e_i = -delta_i e_i`.
pub fn solve_orthogonal_heat(grid: &TimeGrid, deltas: &[f64], forcing: &Path) -> Result<Path> {
    if let Some(d) = deltas.iter().find(|d| **d == 0.0 || !d.is_finite()) {
        return Err(WyfError::InvalidConfig(format!(
            "orthogonal eigenvalue {d} is zero or not finite; zero modes belong to the kernel"
        )));
    }
    check_path(grid, forcing, deltas.len())?;
    let mut out = vec![vec![0.0; deltas.len()]; grid.len()];
    for (c, d) in deltas.iter().enumerate() {
        let u = heat_component(grid, &column(forcing, c), *d);
        for (o, x) in out.iter_mut().zip(u) {
            o[c] = x;
        }
    }
    Ok(out)
}

fn check_path(grid: &TimeGrid, path: &Path, dim: usize) -> Result<()> {
    if path.len() != grid.len() {
        return Err(WyfError::ShapeMismatch {
            expected: grid.len(),
            got: path.len(),
        });
    }
    for v in path {
        if v.len() != dim {
            return Err(WyfError::ShapeMismatch {
                expected: dim,
                got: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(WyfError::IllPosed("forcing is not finite on the grid".into()));
        }
    }
    Ok(())
}

/// Weighted sup norms on a time grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedNorms {
    pub gamma: f64,
    /// `sup (T+t)^gamma |w_top|`.
    pub kernel_c0: f64,
    /// `kernel_c0 + sup (T+t)^{1+gamma} |w_top'|`.
    pub kernel_c1: f64,
    /// `sup (T+t)^{1+gamma} (sum (1+|delta_i|)^2 w_i^2)^{1/2}`.
    pub perp: f64,
    /// `kernel_c1 + perp`.
    pub star: f64,
}

pub fn weighted_norms(grid: &TimeGrid, gamma: f64, wtop: &Path, wperp: &Path, deltas: &[f64]) -> WeightedNorms {
    let dtop = grid.path_derivative(wtop);
    let (mut c0, mut c1, mut perp) = (0.0f64, 0.0f64, 0.0f64);
    for (i, t) in grid.times().iter().enumerate() {
        let s = grid.shift + t;
        c0 = c0.max(s.powf(gamma) * norm2(&wtop[i]));
        c1 = c1.max(s.powf(1.0 + gamma) * norm2(&dtop[i]));
        let p: f64 = wperp[i]
            .iter()
            .zip(deltas)
            .map(|(w, d)| ((1.0 + d.abs()) * w).powi(2))
            .sum::<f64>()
            .sqrt();
        perp = perp.max(s.powf(1.0 + gamma) * p);
    }
    WeightedNorms {
        gamma,
        kernel_c0: c0,
        kernel_c1: c0 + c1,
        perp,
        star: c0 + c1 + perp,
    }
}

/// `sup (T+t)^{q} |E(t)|`.
pub fn forcing_norm(grid: &TimeGrid, q: f64, path: &Path) -> f64 {
    grid.times()
        .iter()
        .zip(path)
        .fold(0.0f64, |a, (t, v)| a.max((grid.shift + t).powf(q) * norm2(v)))
}

/// `(int |(T+t)^q u|^2 dt/(T+t))^{1/2}` by the trapezoid rule.
pub fn l2q_norm(grid: &TimeGrid, q: f64, path: &Path) -> f64 {
    let f: Vec<f64> = grid
        .times()
        .iter()
        .zip(path)
        .map(|(t, v)| ((grid.shift + t).powf(q) * norm2(v)).powi(2))
        .collect();
    let s: Vec<f64> = grid.times().iter().map(|t| (grid.shift + t).ln()).collect();
    let mut acc = 0.0;
    for i in 0..f.len() - 1 {
        acc += 0.5 * (f[i] + f[i + 1]) * (s[i + 1] - s[i]);
    }
    acc.sqrt()
}

/// Reduced model around the ansatz.
#[derive(Debug, Clone)]
pub struct SlowModel {
    pub kappa: f64,
    pub k: usize,
    pub p: usize,
    pub fp: SymTensor,
    pub v_hat: Vec<f64>,
    pub fp_vhat: f64,
    /// `(8/(kappa p (p-2) F_p(v_hat)))^{1/(p-2)}`.
    pub amplitude: f64,
    /// Row-major `k x k`.
    pub d_matrix: Vec<f64>,
    pub mu: Vec<f64>,
    pub d_vectors: Vec<Vec<f64>>,
    pub gamma: f64,
    pub t_shift: f64,
    pub horizon: f64,
    pub per_decade: usize,
}

/// Lagrange–Newton polish of a critical point of `F_p` on the unit sphere.
fn polish_maximizer(t: &SymTensor, v: &[f64]) -> Vec<f64> {
    let k = t.k;
    let mut v = v.to_vec();
    let mut lambda = t.p as f64 * t.eval(&v);
    for _ in 0..50 {
        let g = t.gradient(&v);
        let h = t.hessian(&v);
        let mut res = DVector::zeros(k + 1);
        for i in 0..k {
            res[i] = g[i] - lambda * v[i];
        }
        res[k] = 0.5 * (dot(&v, &v) - 1.0);
        if res.norm() < 1e-15 * (1.0 + lambda.abs()) {
            break;
        }
        let jac = DMatrix::from_fn(k + 1, k + 1, |i, j| match (i < k, j < k) {
            (true, true) => h[i * k + j] - if i == j { lambda } else { 0.0 },
            (true, false) => -v[i],
            (false, true) => v[j],
            (false, false) => 0.0,
        });
        let Some(step) = jac.lu().solve(&res) else {
            break;
        };
        for i in 0..k {
            v[i] -= step[i];
        }
        lambda -= step[k];
    }
    let n = norm2(&v);
    v.iter_mut().for_each(|x| *x /= n);
    v
}

impl SlowModel {
    /// Builds the model from the leading tensor. `gamma = None` picks the
    /// window midpoint `1.5/(p-2)`.
    pub fn new(
        kappa: f64,
        fp: SymTensor,
        gamma: Option<f64>,
        t_shift: f64,
        horizon: f64,
        per_decade: usize,
        restarts: usize,
        seed: u64,
    ) -> Result<Self> {
        let (k, p) = (fp.k, fp.p);
        if p < 3 {
            return Err(WyfError::InvalidConfig(format!("order p must be at least 3, got {p}")));
        }
        if !(kappa > 0.0) {
            return Err(WyfError::InvalidConfig(format!("n + m - 2 must be positive, got {kappa}")));
        }
        if !(t_shift > 0.0 && horizon > 0.0) {
            return Err(WyfError::InvalidConfig(format!(
                "T and horizon must be positive (T = {t_shift}, horizon = {horizon})"
            )));
        }
        let defect = fp.symmetry_defect();
        if defect > 1e-12 * fp.scale().max(1e-300) {
            return Err(WyfError::InvalidConfig(format!("F_p tensor is not symmetric (defect {defect:e})")));
        }
        let (ok, v0, value) = check_as_p(&fp, restarts.max(1), seed);
        if !ok {
            return Err(WyfError::NotAdamsSimon { value });
        }
        let v_hat = if k == 1 { v0 } else { polish_maximizer(&fp, &v0) };
        let fp_vhat = fp.eval(&v_hat);
        if !(fp_vhat > 0.0) {
            return Err(WyfError::NotAdamsSimon { value: fp_vhat });
        }
        let pf = p as f64;
        let coef = 8.0 / (kappa * pf * (pf - 2.0) * fp_vhat);
        let amplitude = coef.powf(1.0 / (pf - 2.0));
        let d_matrix: Vec<f64> = fp.hessian(&v_hat).iter().map(|h| coef * h).collect();
        let dm = DMatrix::from_fn(k, k, |i, j| 0.5 * (d_matrix[i * k + j] + d_matrix[j * k + i]));
        let eig = SymmetricEigen::new(dm);
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let mu: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let d_vectors: Vec<Vec<f64>> = order
            .iter()
            .map(|&i| (0..k).map(|r| eig.eigenvectors[(r, i)]).collect())
            .collect();
        let gamma = gamma.unwrap_or(1.5 / (pf - 2.0));
        let (lo, hi) = (1.0 / (pf - 2.0), 2.0 / (pf - 2.0));
        if !(gamma > lo && gamma < hi) {
            return Err(WyfError::InvalidConfig(format!(
                "gamma = {gamma} must lie strictly inside ({lo}, {hi})"
            )));
        }
        for m in &mu {
            let b = kappa * m / 8.0;
            if (gamma - b).abs() < GAMMA_SEPARATION {
                return Err(WyfError::InvalidConfig(format!(
                    "gamma = {gamma} is resonant with the kernel exponent {b}"
                )));
            }
        }
        Ok(Self {
            kappa,
            k,
            p,
            fp,
            v_hat,
            fp_vhat,
            amplitude,
            d_matrix,
            mu,
            d_vectors,
            gamma,
            t_shift,
            horizon,
            per_decade,
        })
    }

    /// Exponents `b_i = kappa mu_i / 8` of the kernel equations.
    pub fn exponents(&self) -> Vec<f64> {
        self.mu.iter().map(|m| self.kappa * m / 8.0).collect()
    }

    /// Indices of eigendirections solved forward with zero initial value.
    pub fn pi0(&self) -> Vec<usize> {
        self.exponents()
            .iter()
            .enumerate()
            .filter(|(_, b)| self.gamma < **b)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::geometric(self.t_shift, self.horizon, self.per_decade)
    }

    /// `phi(t) = A (T+t)^{-1/(p-2)} v_hat`.
    pub fn ansatz_phi(&self, t: f64) -> Vec<f64> {
        let s = self.amplitude * (self.t_shift + t).powf(-1.0 / (self.p as f64 - 2.0));
        self.v_hat.iter().map(|v| s * v).collect()
    }

    pub fn ansatz_derivative(&self, t: f64) -> Vec<f64> {
        let e = 1.0 / (self.p as f64 - 2.0);
        let s = -e * self.amplitude * (self.t_shift + t).powf(-e - 1.0);
        self.v_hat.iter().map(|v| s * v).collect()
    }

    /// Largest `|(8/kappa) phi' + DF_p(phi)| / |DF_p(phi)|` on the grid.
    pub fn ansatz_residual(&self, grid: &TimeGrid) -> f64 {
        let mut worst = 0.0f64;
        for t in grid.times() {
            let phi = self.ansatz_phi(*t);
            let g = self.fp.gradient(&phi);
            let d = self.ansatz_derivative(*t);
            let r: Vec<f64> = d.iter().zip(&g).map(|(d, g)| 8.0 / self.kappa * d + g).collect();
            worst = worst.max(norm2(&r) / norm2(&g));
        }
        worst
    }

    fn to_eigen(&self, v: &[f64]) -> Vec<f64> {
        self.d_vectors.iter().map(|e| dot(e, v)).collect()
    }

    fn from_eigen(&self, c: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.k];
        for (c, e) in c.iter().zip(&self.d_vectors) {
            out.iter_mut().zip(e).for_each(|(o, e)| *o += c * e);
        }
        out
    }

    /// Kernel ODE `(8/kappa) v' + D v/(T+t) = E` with the decaying choice of
    /// constants in each eigendirection of `D`.
    pub fn solve_kernel_ode(&self, grid: &TimeGrid, forcing: &Path) -> Result<KernelSolution> {
        check_path(grid, forcing, self.k)?;
        let q = forcing
            .iter()
            .map(|v| norm2(v))
            .collect::<Vec<f64>>();
        if let Some(q) = grid.envelope_exponent(&q) {
            if grid.is_geometric() && q < 1.0 + self.gamma - ENVELOPE_SLACK {
                return Err(WyfError::IllPosed(format!(
                    "forcing decays like (T+t)^-{q:.3}, slower than (T+t)^-(1+gamma) = (T+t)^-{:.3}",
                    1.0 + self.gamma
                )));
            }
        }
        let eig: Path = forcing.iter().map(|v| self.to_eigen(v)).collect();
        let b = self.exponents();
        let mut coords = vec![vec![0.0; self.k]; grid.len()];
        let mut tail_fraction = 0.0f64;
        for c in 0..self.k {
            let (v, frac) = kernel_component(grid, &column(&eig, c), b[c], self.gamma > b[c], self.kappa)?;
            tail_fraction = tail_fraction.max(frac);
            for (o, x) in coords.iter_mut().zip(v) {
                o[c] = x;
            }
        }
        let mut v = Vec::with_capacity(grid.len());
        let mut dv = Vec::with_capacity(grid.len());
        for (i, t) in grid.times().iter().enumerate() {
            let dc: Vec<f64> = (0..self.k)
                .map(|c| self.kappa / 8.0 * eig[i][c] - b[c] * coords[i][c] / (self.t_shift + t))
                .collect();
            v.push(self.from_eigen(&coords[i]));
            dv.push(self.from_eigen(&dc));
        }
        Ok(KernelSolution { v, dv, tail_fraction })
    }

    /// `D^2 F_p(x) w`.
    pub fn hessian_apply(&self, x: &[f64], w: &[f64]) -> Vec<f64> {
        let h = self.fp.hessian(x);
        (0..self.k)
            .map(|i| (0..self.k).map(|j| h[i * self.k + j] * w[j]).sum())
            .collect()
    }

    /// Pointwise residuals of the kernel and orthogonal equations along a
    /// path, relative to the forcing scale. Points whose difference stencil
    /// reaches below `skip_before` are left out.
    pub fn equation_residuals(
        &self,
        grid: &TimeGrid,
        wtop: &Path,
        wperp: &Path,
        deltas: &[f64],
        etop: &Path,
        eperp: &Path,
        skip_before: f64,
    ) -> (f64, f64) {
        let dtop = grid.path_derivative(wtop);
        let dperp = grid.path_derivative(wperp);
        let (mut r1, mut s1, mut r2, mut s2) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for (i, t) in grid.times().iter().enumerate() {
            if skip_before > 0.0 && (i < STENCIL_DIFF / 2 || grid.times()[i - STENCIL_DIFF / 2] < skip_before) {
                continue;
            }
            let phi = self.ansatz_phi(*t);
            let hw = self.hessian_apply(&phi, &wtop[i]);
            let res: Vec<f64> = (0..self.k)
                .map(|c| 8.0 / self.kappa * dtop[i][c] + hw[c] - etop[i][c])
                .collect();
            r1 = r1.max(norm2(&res));
            s1 = s1.max(norm2(&etop[i])).max(norm2(&hw));
            let res2: Vec<f64> = (0..deltas.len())
                .map(|c| dperp[i][c] + deltas[c] * wperp[i][c] - eperp[i][c])
                .collect();
            r2 = r2.max(norm2(&res2));
            s2 = s2.max(norm2(&eperp[i]));
        }
        let rel = |r: f64, s: f64| if s > 0.0 { r / s } else { r };
        (rel(r1, s1), rel(r2, s2))
    }
}

/// Time after which the transients `exp(-delta t)` of the down modes started
/// from zero are below `1e-12`.
pub fn initial_layer(deltas: &[f64]) -> f64 {
    deltas
        .iter()
        .filter(|d| **d > 0.0)
        .fold(0.0f64, |a, d| a.max(28.0 / d))
}

/// Observed quantities of an assembled slow solution.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SlowTrajectory {
    pub times: Vec<f64>,
    pub dev_sup: Vec<f64>,
    pub phi_norm: Vec<f64>,
    pub wtop_norm: Vec<f64>,
    pub wperp_norm: Vec<f64>,
    /// Energy along the solution.
    pub energy: Vec<f64>,
    /// Norm of the energy gradient.
    pub gradient_norm: Vec<f64>,
}

pub const CSV_HEADER: &str = "t,dev_sup,phi_norm,wtop_norm,wperp_norm";

impl SlowTrajectory {
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        use crate::flow::fmt17;
        writeln!(w, "{CSV_HEADER}")?;
        for i in 0..self.times.len() {
            writeln!(
                w,
                "{},{},{},{},{}",
                fmt17(self.times[i]),
                fmt17(self.dev_sup[i]),
                fmt17(self.phi_norm[i]),
                fmt17(self.wtop_norm[i]),
                fmt17(self.wperp_norm[i])
            )?;
        }
        Ok(())
    }

    /// Smallest and largest value of `dev_sup (1+t)^exponent` on `[t_lo, t_hi]`.
    /// The endpoints are included by interpolation on `grid` (the grid the
    /// trajectory was sampled on), since geometric grids are coarse near 0.
    pub fn sandwich(&self, grid: &TimeGrid, t_lo: f64, t_hi: f64, exponent: f64) -> Option<(f64, f64)> {
        let (first, last) = (*self.times.first()?, *self.times.last()?);
        if grid.len() != self.times.len() || t_lo < first || t_hi > last || !(t_lo < t_hi) {
            return None;
        }
        let weighted = |t: f64, d: f64| d * (1.0 + t).powf(exponent);
        let vals: Vec<f64> = self
            .times
            .iter()
            .zip(&self.dev_sup)
            .filter(|(t, _)| **t > t_lo && **t < t_hi)
            .map(|(t, d)| weighted(*t, *d))
            .chain([t_lo, t_hi].map(|t| weighted(t, grid.interpolate(&self.dev_sup, t))))
            .collect();
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(0.0, f64::max);
        Some((lo, hi))
    }
}

/// Error functionals of the split flow.
pub trait ErrorTerms {
    /// Eigenvalues `delta_i` of `-L_inf` on the orthogonal part.
    fn perp_deltas(&self) -> Vec<f64>;
    /// `(E_top, E_perp)` along `w`.
    fn forcing(&self, model: &SlowModel, grid: &TimeGrid, wtop: &Path, wperp: &Path) -> Result<(Path, Path)>;
    /// Assembles `u` and records the observables.
    fn observe(&self, model: &SlowModel, grid: &TimeGrid, wtop: &Path, wperp: &Path) -> Result<SlowTrajectory>;
}

/// Vanishing error terms: the fixed point is `w = 0`.
#[derive(Debug, Clone)]
pub struct ZeroTerms {
    pub deltas: Vec<f64>,
}

impl ErrorTerms for ZeroTerms {
    fn perp_deltas(&self) -> Vec<f64> {
        self.deltas.clone()
    }

    fn forcing(&self, model: &SlowModel, grid: &TimeGrid, _: &Path, _: &Path) -> Result<(Path, Path)> {
        let n = grid.len();
        Ok((vec![vec![0.0; model.k]; n], vec![vec![0.0; self.deltas.len()]; n]))
    }

    fn observe(&self, model: &SlowModel, grid: &TimeGrid, wtop: &Path, wperp: &Path) -> Result<SlowTrajectory> {
        SyntheticTerms {
            fp1: None,
            deltas: self.deltas.clone(),
            coupling: vec![0.0; self.deltas.len()],
        }
        .observe(model, grid, wtop, wperp)
    }
}

/// Finite-dimensional model flow: gradient flow of
/// `F_p(x) + F_{p+1}(x) + (4/kappa) sum delta_i y_i^2 - (8/kappa)(c.y) F_p(x)`
/// for the metric `(8/kappa) I`, with `x = phi + w_top` and `y = w_perp`.
#[derive(Debug, Clone)]
pub struct SyntheticTerms {
    pub fp1: Option<SymTensor>,
    pub deltas: Vec<f64>,
    pub coupling: Vec<f64>,
}

impl SyntheticTerms {
    pub fn new(k: usize, p: usize, fp1: Option<SymTensor>, deltas: Vec<f64>, coupling: Vec<f64>) -> Result<Self> {
        if deltas.len() != coupling.len() {
            return Err(WyfError::ShapeMismatch {
                expected: deltas.len(),
                got: coupling.len(),
            });
        }
        if let Some(t) = &fp1 {
            if t.k != k || t.p != p + 1 {
                return Err(WyfError::InvalidConfig(format!(
                    "higher-order tensor must have k = {k} and order {}, got k = {} and order {}",
                    p + 1,
                    t.k,
                    t.p
                )));
            }
        }
        Ok(Self { fp1, deltas, coupling })
    }

    /// Model energy at `(x, y)`.
    pub fn energy(&self, model: &SlowModel, x: &[f64], y: &[f64]) -> f64 {
        let fp = model.fp.eval(x);
        let f1 = self.fp1.as_ref().map_or(0.0, |t| t.eval(x));
        let quad: f64 = self.deltas.iter().zip(y).map(|(d, y)| d * y * y).sum();
        fp + f1 + 4.0 / model.kappa * quad - 8.0 / model.kappa * dot(&self.coupling, y) * fp
    }

    /// Euclidean gradient `(d_x, d_y)` of the energy.
    pub fn gradient(&self, model: &SlowModel, x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let g = model.fp.gradient(x);
        let g1 = self.fp1.as_ref().map(|t| t.gradient(x));
        let cy = dot(&self.coupling, y);
        let gx: Vec<f64> = (0..model.k)
            .map(|i| g[i] + g1.as_ref().map_or(0.0, |g1| g1[i]) - 8.0 / model.kappa * cy * g[i])
            .collect();
        let fp = model.fp.eval(x);
        let gy: Vec<f64> = self
            .deltas
            .iter()
            .zip(y)
            .zip(&self.coupling)
            .map(|((d, y), c)| 8.0 / model.kappa * (d * y - c * fp))
            .collect();
        (gx, gy)
    }

    /// Model flow `(8/kappa)(x, y)' = -grad`, integrated by RK4 with step
    /// `dt`; states are returned at `times` (ascending, first is 0).
    pub fn integrate(&self, model: &SlowModel, x0: &[f64], y0: &[f64], times: &[f64], dt: f64) -> Vec<(Vec<f64>, Vec<f64>)> {
        let k = model.k;
        let rhs = |z: &[f64]| -> Vec<f64> {
            let (gx, gy) = self.gradient(model, &z[..k], &z[k..]);
            gx.iter().chain(&gy).map(|g| -model.kappa / 8.0 * g).collect()
        };
        let mut z: Vec<f64> = x0.iter().chain(y0).copied().collect();
        let mut t = 0.0;
        let mut out = Vec::with_capacity(times.len());
        for &target in times {
            while t < target {
                let h = dt.min(target - t);
                let k1 = rhs(&z);
                let z2: Vec<f64> = z.iter().zip(&k1).map(|(a, b)| a + 0.5 * h * b).collect();
                let k2 = rhs(&z2);
                let z3: Vec<f64> = z.iter().zip(&k2).map(|(a, b)| a + 0.5 * h * b).collect();
                let k3 = rhs(&z3);
                let z4: Vec<f64> = z.iter().zip(&k3).map(|(a, b)| a + h * b).collect();
                let k4 = rhs(&z4);
                for i in 0..z.len() {
                    z[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
                t += h;
                if (target - t).abs() < 1e-12 * target.max(1.0) {
                    t = target;
                }
            }
            out.push((z[..k].to_vec(), z[k..].to_vec()));
        }
        out
    }
}

impl ErrorTerms for SyntheticTerms {
    fn perp_deltas(&self) -> Vec<f64> {
        self.deltas.clone()
    }

    fn forcing(&self, model: &SlowModel, grid: &TimeGrid, wtop: &Path, wperp: &Path) -> Result<(Path, Path)> {
        let mut etop = Vec::with_capacity(grid.len());
        let mut eperp = Vec::with_capacity(grid.len());
        for (i, t) in grid.times().iter().enumerate() {
            let phi = model.ansatz_phi(*t);
            let x: Vec<f64> = phi.iter().zip(&wtop[i]).map(|(a, b)| a + b).collect();
            let y = &wperp[i];
            let gphi = model.fp.gradient(&phi);
            let hw = model.hessian_apply(&phi, &wtop[i]);
            let (gx, _) = self.gradient(model, &x, y);
            etop.push((0..model.k).map(|c| gphi[c] + hw[c] - gx[c]).collect());
            let fp = model.fp.eval(&x);
            eperp.push(self.coupling.iter().map(|c| c * fp).collect());
        }
        Ok((etop, eperp))
    }

    fn observe(&self, model: &SlowModel, grid: &TimeGrid, wtop: &Path, wperp: &Path) -> Result<SlowTrajectory> {
        let mut tr = SlowTrajectory::default();
        for (i, t) in grid.times().iter().enumerate() {
            let phi = model.ansatz_phi(*t);
            let x: Vec<f64> = phi.iter().zip(&wtop[i]).map(|(a, b)| a + b).collect();
            let y = &wperp[i];
            let dev = x.iter().chain(y).fold(0.0f64, |a, v| a.max(v.abs()));
            let (gx, gy) = self.gradient(model, &x, y);
            tr.times.push(*t);
            tr.dev_sup.push(dev);
            tr.phi_norm.push(norm2(&phi));
            tr.wtop_norm.push(norm2(&wtop[i]));
            tr.wperp_norm.push(norm2(y));
            tr.energy.push(self.energy(model, &x, y));
            tr.gradient_norm.push((dot(&gx, &gx) + dot(&gy, &gy)).sqrt());
        }
        Ok(tr)
    }
}

/// Error terms of the weighted Yamabe flow around a degenerate base.
pub struct GeometricTerms<'a> {
    red: &'a Reduction,
    perp: Vec<usize>,
    deltas: Vec<f64>,
}

impl<'a> GeometricTerms<'a> {
    pub fn new(red: &'a Reduction) -> Self {
        let sd = red.spectral();
        let kernel: BTreeSet<usize> = sd.kernel_indices.iter().copied().collect();
        let perp: Vec<usize> = (0..sd.len()).filter(|i| !kernel.contains(i)).collect();
        let deltas = perp.iter().map(|&i| sd.eigenvalues[i]).collect();
        Self { red, perp, deltas }
    }

    /// Field with the given orthogonal coefficients.
    pub fn perp_field(&self, coeffs: &[f64]) -> Field {
        let sd = self.red.spectral();
        let mut out = vec![0.0; self.red.base().node_count()];
        for (c, &i) in coeffs.iter().zip(&self.perp) {
            out.iter_mut().zip(&sd.eigenfields[i]).for_each(|(o, e)| *o += c * e);
        }
        out
    }

    fn perp_coefficients(&self, f: &[f64]) -> Vec<f64> {
        let sd = self.red.spectral();
        self.perp.iter().map(|&i| sd.inner(f, &sd.eigenfields[i])).collect()
    }

    /// Splits flow states `u(t_i)` into `(w_top, w_perp)` relative to the
    /// ansatz of `model`.
    pub fn decompose(&self, model: &SlowModel, grid: &TimeGrid, states: &[Field]) -> Result<(Path, Path)> {
        let sd = self.red.spectral();
        let mut wtop = Vec::with_capacity(states.len());
        let mut wperp = Vec::with_capacity(states.len());
        for (t, u) in grid.times().iter().zip(states) {
            let dev: Field = u.iter().map(|u| u - 1.0).collect();
            let x = sd.kernel_coordinates(&dev);
            let gp = self.red.solve_graph_map(&x)?;
            let rest: Field = dev
                .iter()
                .zip(&sd.kernel_field(&x))
                .zip(&gp.phi)
                .map(|((d, v), p)| d - v - p)
                .collect();
            let phi = model.ansatz_phi(*t);
            wtop.push(x.iter().zip(&phi).map(|(a, b)| a - b).collect());
            wperp.push(self.perp_coefficients(&rest));
        }
        Ok((wtop, wperp))
    }

    /// `2 (L u - r u^{q_curv})` and `u`.
    fn flow_gradient(&self, u: Field) -> Result<(Field, Smms)> {
        let s = Smms::new(self.red.base().clone(), u)?;
        let vb = s.weighted_volume().powf(s.params().beta());
        let g = differential(&s).iter().map(|g| g * vb).collect();
        Ok((g, s))
    }

    /// Kernel coordinates of `E_0 = DE(u)(u^{-4/kappa} - 1)` along `w`.
    pub fn e0_kernel(&self, model: &SlowModel, grid: &TimeGrid, wtop: &Path, wperp: &Path) -> Result<Path> {
        let sd = self.red.spectral();
        let qlin = 4.0 / model.kappa;
        let (us, _) = self.assemble(model, grid, wtop, wperp)?;
        us.into_iter()
            .map(|u| {
                let (g, s) = self.flow_gradient(u)?;
                let e0: Field = g.iter().zip(s.u()).map(|(g, u)| g * (u.powf(-qlin) - 1.0)).collect();
                Ok(sd.kernel_coordinates(&e0))
            })
            .collect()
    }

    fn assemble(&self, model: &SlowModel, grid: &TimeGrid, wtop: &Path, wperp: &Path) -> Result<(Vec<Field>, Vec<Field>)> {
        let sd = self.red.spectral();
        let mut us = Vec::with_capacity(grid.len());
        let mut phis = Vec::with_capacity(grid.len());
        for (i, t) in grid.times().iter().enumerate() {
            let phi = model.ansatz_phi(*t);
            let x: Vec<f64> = phi.iter().zip(&wtop[i]).map(|(a, b)| a + b).collect();
            let gp = self.red.solve_graph_map(&x)?;
            let wp = self.perp_field(&wperp[i]);
            let v = sd.kernel_field(&x);
            let u: Field = (0..v.len()).map(|j| 1.0 + v[j] + gp.phi[j] + wp[j]).collect();
            us.push(u);
            phis.push(gp.phi);
        }
        Ok((us, phis))
    }
}

impl ErrorTerms for GeometricTerms<'_> {
    fn perp_deltas(&self) -> Vec<f64> {
        self.deltas.clone()
    }

    fn forcing(&self, model: &SlowModel, grid: &TimeGrid, wtop: &Path, wperp: &Path) -> Result<(Path, Path)> {
        let sd = self.red.spectral();
        let kappa = model.kappa;
        let (us, phis) = self.assemble(model, grid, wtop, wperp)?;
        let nodes = us.first().map_or(0, |u| u.len());
        let mut dphi = vec![vec![0.0; nodes]; grid.len()];
        for j in 0..nodes {
            let series: Vec<f64> = phis.iter().map(|p| p[j]).collect();
            for (d, v) in dphi.iter_mut().zip(grid.derivative(&series)) {
                d[j] = v;
            }
        }
        let qlin = 4.0 / kappa;
        let mut etop = Vec::with_capacity(grid.len());
        let mut eperp = Vec::with_capacity(grid.len());
        for (i, (t, u)) in grid.times().iter().zip(us).enumerate() {
            let (g, s) = self.flow_gradient(u)?;
            let e0: Field = g.iter().zip(s.u()).map(|(g, u)| g * (u.powf(-qlin) - 1.0)).collect();
            let phi = model.ansatz_phi(*t);
            let gphi = model.fp.gradient(&phi);
            let hw = model.hessian_apply(&phi, &wtop[i]);
            let kg = sd.kernel_coordinates(&g);
            let ke = sd.kernel_coordinates(&e0);
            etop.push((0..model.k).map(|c| gphi[c] + hw[c] - kg[c] - ke[c]).collect());
            let pg = self.perp_coefficients(&g);
            let pe = self.perp_coefficients(&e0);
            let pd = self.perp_coefficients(&dphi[i]);
            eperp.push(
                (0..self.perp.len())
                    .map(|c| -kappa / 8.0 * (pg[c] + pe[c]) - pd[c] + self.deltas[c] * wperp[i][c])
                    .collect(),
            );
        }
        Ok((etop, eperp))
    }

    fn observe(&self, model: &SlowModel, grid: &TimeGrid, wtop: &Path, wperp: &Path) -> Result<SlowTrajectory> {
        let (us, _) = self.assemble(model, grid, wtop, wperp)?;
        let mut tr = SlowTrajectory::default();
        for (i, (t, u)) in grid.times().iter().zip(us).enumerate() {
            let dev = u.iter().fold(0.0f64, |a, u| a.max((u - 1.0).abs()));
            let (g, s) = self.flow_gradient(u)?;
            tr.times.push(*t);
            tr.dev_sup.push(dev);
            tr.phi_norm.push(norm2(&model.ansatz_phi(*t)));
            tr.wtop_norm.push(norm2(&wtop[i]));
            tr.wperp_norm.push(norm2(&wperp[i]));
            tr.energy.push(crate::energy::numerator(&s) / s.weighted_volume());
            tr.gradient_norm.push(self.red.base().norm(&g));
        }
        Ok(tr)
    }
}

/// Which error functionals drive the contraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Synthetic,
    Geometric,
}

/// Outcome of the fixed point iteration.
#[derive(Debug, Clone)]
pub struct ContractionReport {
    pub grid: TimeGrid,
    pub wtop: Path,
    pub wperp: Path,
    /// Largest ratio of successive differences.
    pub rho: f64,
    pub iterations: usize,
    pub differences: Vec<f64>,
    pub norms: WeightedNorms,
    pub in_ball: bool,
    pub tail_fraction: f64,
    pub horizon_extended: bool,
    /// Equation residuals along the fixed point.
    pub residuals: (f64, f64),
    pub trajectory: SlowTrajectory,
}

fn iterate(
    model: &SlowModel,
    terms: &dyn ErrorTerms,
    grid: &TimeGrid,
    max_iter: usize,
    tol: f64,
) -> Result<ContractionReport> {
    let deltas = terms.perp_deltas();
    let n = grid.len();
    let mut wtop = vec![vec![0.0; model.k]; n];
    let mut wperp = vec![vec![0.0; deltas.len()]; n];
    let mut differences = Vec::new();
    let mut rho = 0.0f64;
    let mut tail_fraction = 0.0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let (etop, eperp) = terms.forcing(model, grid, &wtop, &wperp)?;
        let ks = model.solve_kernel_ode(grid, &etop)?;
        let np = solve_orthogonal_heat(grid, &deltas, &eperp)?;
        tail_fraction = ks.tail_fraction;
        let dtop: Path = ks.v.iter().zip(&wtop).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect()).collect();
        let dperp: Path = np.iter().zip(&wperp).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect()).collect();
        let diff = weighted_norms(grid, model.gamma, &dtop, &dperp, &deltas).star;
        if let Some(prev) = differences.last().copied() {
            if prev > 1e-13 {
                rho = rho.max(diff / prev);
            }
        }
        differences.push(diff);
        wtop = ks.v;
        wperp = np;
        if diff < tol {
            converged = true;
            break;
        }
        if differences.len() >= 3 && rho >= 1.0 {
            return Err(WyfError::NoContraction { rho });
        }
    }
    if !converged {
        return Err(WyfError::IterationCap {
            iterations,
            difference: differences.last().copied().unwrap_or(f64::NAN),
        });
    }
    if rho >= 1.0 {
        return Err(WyfError::NoContraction { rho });
    }
    let norms = weighted_norms(grid, model.gamma, &wtop, &wperp, &deltas);
    let (etop, eperp) = terms.forcing(model, grid, &wtop, &wperp)?;
    let residuals = model.equation_residuals(grid, &wtop, &wperp, &deltas, &etop, &eperp, initial_layer(&deltas));
    let trajectory = terms.observe(model, grid, &wtop, &wperp)?;
    Ok(ContractionReport {
        grid: grid.clone(),
        wtop,
        wperp,
        rho,
        iterations,
        differences,
        norms,
        in_ball: norms.star <= 1.0,
        tail_fraction,
        horizon_extended: false,
        residuals,
        trajectory,
    })
}

/// Fixed point of `w -> S(w)` from `w = 0`, stopping at `|S(w) - w|* < tol`.
/// The horizon is extended tenfold once when the tail share exceeds
/// [`TAIL_TOLERANCE`].
pub fn contract(model: &SlowModel, terms: &dyn ErrorTerms, max_iter: usize, tol: f64) -> Result<ContractionReport> {
    let grid = model.grid()?;
    let report = iterate(model, terms, &grid, max_iter, tol)?;
    if report.tail_fraction <= TAIL_TOLERANCE {
        return Ok(report);
    }
    let mut wide = model.clone();
    wide.horizon *= 10.0;
    let mut report = iterate(&wide, terms, &wide.grid()?, max_iter, tol)?;
    report.horizon_extended = true;
    Ok(report)
}
