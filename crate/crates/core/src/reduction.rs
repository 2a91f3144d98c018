//! Lyapunov–Schmidt reduction at a degenerate CWSC base.
//!
//! For a kernel field `v` the graph map `Phi(v)` solves
//! `P' DE(1 + v + Phi(v)) = 0`, where `P'` projects onto the weighted
//! orthogonal complement of the kernel and of the constants and `Phi(v)`
//! lies in that complement. Since `E` is scale invariant, the scale is fixed
//! by this choice rather than by the volume; the unit-volume representative
//! is reported alongside. The reduced functional is
//! `F(v) = E(1 + v + Phi(v))`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::energy::{differential, energy};
use crate::error::{Result, WyfError};
use crate::geometry::Field;
use crate::smms::{Base, Smms};
use crate::spectral::{eigendecompose, SpectralData, Subspace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReductionConfig {
    /// Trust radius for `||v||`.
    #[serde(default = "d_epsilon")]
    pub epsilon: f64,
    #[serde(default = "d_newton_tol")]
    pub newton_tol: f64,
    #[serde(default = "d_newton_max_iter")]
    pub newton_max_iter: usize,
    /// Base step of the polarization stencil.
    #[serde(default = "d_fd_step")]
    pub fd_step: f64,
    /// Number of Richardson levels (1 or 2).
    #[serde(default = "d_richardson")]
    pub richardson: usize,
    /// Kernel threshold relative to the largest eigenvalue.
    #[serde(default = "d_tol_kernel")]
    pub tol_kernel: f64,
    /// Random restarts of the sphere maximization.
    #[serde(default = "d_restarts")]
    pub restarts: usize,
    #[serde(default)]
    pub seed: u64,
}

fn d_epsilon() -> f64 {
    0.1
}
fn d_newton_tol() -> f64 {
    1e-10
}
fn d_newton_max_iter() -> usize {
    100
}
fn d_fd_step() -> f64 {
    1e-2
}
fn d_richardson() -> usize {
    2
}
fn d_tol_kernel() -> f64 {
    crate::spectral::DEFAULT_TOL_KERNEL
}
fn d_restarts() -> usize {
    200
}

impl Default for ReductionConfig {
    fn default() -> Self {
        Self {
            epsilon: d_epsilon(),
            newton_tol: d_newton_tol(),
            newton_max_iter: d_newton_max_iter(),
            fd_step: d_fd_step(),
            richardson: d_richardson(),
            tol_kernel: d_tol_kernel(),
            restarts: d_restarts(),
            seed: 0,
        }
    }
}

impl ReductionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(WyfError::InvalidConfig(m));
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon must lie in (0, 1), got {}", self.epsilon));
        }
        if !(self.newton_tol > 0.0) {
            return bad(format!("newton_tol must be positive, got {}", self.newton_tol));
        }
        if !(self.fd_step > 0.0 && self.fd_step <= 0.05) {
            return bad(format!("fd_step must lie in (0, 0.05], got {}", self.fd_step));
        }
        if !(1..=2).contains(&self.richardson) {
            return bad(format!("richardson must be 1 or 2, got {}", self.richardson));
        }
        if self.newton_max_iter == 0 || self.restarts == 0 {
            return bad("newton_max_iter and restarts must be positive".into());
        }
        Ok(())
    }
}

/// Fully symmetric order-`p` array on `R^k`, stored densely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymTensor {
    pub k: usize,
    pub p: usize,
    pub data: Vec<f64>,
}

impl SymTensor {
    pub fn zeros(k: usize, p: usize) -> Self {
        Self {
            k,
            p,
            data: vec![0.0; k.pow(p as u32)],
        }
    }

    /// Builds the tensor from its values on sorted multi-indices.
    pub fn from_sorted(k: usize, p: usize, mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let mut t = Self::zeros(k, p);
        for flat in 0..t.data.len() {
            let mut idx = t.multi(flat);
            idx.sort_unstable();
            if t.flat(&idx) == flat {
                t.data[flat] = f(&idx);
            }
        }
        for flat in 0..t.data.len() {
            let mut idx = t.multi(flat);
            idx.sort_unstable();
            t.data[flat] = t.data[t.flat(&idx)];
        }
        t
    }

    pub fn multi(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.p];
        for slot in (0..self.p).rev() {
            idx[slot] = flat % self.k;
            flat /= self.k;
        }
        idx
    }

    pub fn flat(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |a, i| a * self.k + i)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.flat(idx)]
    }

    /// Contracts the last `p - r` slots with `v`, giving an order-`r` tensor.
    pub fn contract(&self, v: &[f64], r: usize) -> SymTensor {
        let mut cur = self.data.clone();
        let mut order = self.p;
        while order > r {
            let inner = self.k.pow(order as u32 - 1);
            cur = (0..inner)
                .map(|i| (0..self.k).map(|j| cur[i * self.k + j] * v[j]).sum())
                .collect();
            order -= 1;
        }
        SymTensor {
            k: self.k,
            p: r,
            data: cur,
        }
    }

    /// `T(v, ..., v)`.
    pub fn eval(&self, v: &[f64]) -> f64 {
        self.contract(v, 0).data[0]
    }

    /// Gradient of `v -> T(v, ..., v)`.
    pub fn gradient(&self, v: &[f64]) -> Vec<f64> {
        let p = self.p as f64;
        self.contract(v, 1).data.iter().map(|x| p * x).collect()
    }

    /// Hessian of `v -> T(v, ..., v)`, row-major `k x k`.
    pub fn hessian(&self, v: &[f64]) -> Vec<f64> {
        let c = (self.p * (self.p - 1)) as f64;
        if self.p < 2 {
            return vec![0.0; self.k * self.k];
        }
        self.contract(v, 2).data.iter().map(|x| c * x).collect()
    }

    pub fn scale(&self) -> f64 {
        self.data.iter().fold(0.0f64, |a, x| a.max(x.abs()))
    }

    /// Largest difference between entries related by a permutation.
    pub fn symmetry_defect(&self) -> f64 {
        let mut d = 0.0f64;
        for flat in 0..self.data.len() {
            let mut idx = self.multi(flat);
            idx.sort_unstable();
            d = d.max((self.data[flat] - self.get(&idx)).abs());
        }
        d
    }
}

/// Result of one graph-map solve.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphPoint {
    /// Kernel coordinates of `v`.
    pub coords: Vec<f64>,
    pub phi: Field,
    /// `1 + v + Phi(v)`.
    pub psi: Field,
    /// `psi` rescaled to unit weighted volume.
    pub psi_unit: Field,
    /// `||P' DE(Psi)||`.
    pub residual: f64,
    /// Component of `DE(Psi)` along the normalized constant.
    pub constant_component: f64,
    pub iterations: usize,
    pub value: f64,
}

/// Graph-map solver bound to a base and its spectral data.
pub struct Reduction {
    base: Arc<Base>,
    sd: Arc<SpectralData>,
    cfg: ReductionConfig,
    one_norm: f64,
}

impl Reduction {
    pub fn new(base: Arc<Base>, cfg: ReductionConfig) -> Result<Self> {
        cfg.validate()?;
        let sd = eigendecompose(&base, cfg.tol_kernel)?;
        Self::from_parts(base, Arc::new(sd), cfg)
    }

    pub fn from_parts(base: Arc<Base>, sd: Arc<SpectralData>, cfg: ReductionConfig) -> Result<Self> {
        cfg.validate()?;
        if sd.kernel_is_scale_only {
            return Err(WyfError::ScaleOnlyKernel);
        }
        if sd.kernel_dim() == 0 {
            return Err(WyfError::EmptyKernel);
        }
        let one_norm = base.bg().weighted_volume().sqrt();
        Ok(Self {
            base,
            sd,
            cfg,
            one_norm,
        })
    }

    pub fn base(&self) -> &Arc<Base> {
        &self.base
    }

    pub fn spectral(&self) -> &Arc<SpectralData> {
        &self.sd
    }

    pub fn config(&self) -> &ReductionConfig {
        &self.cfg
    }

    pub fn kernel_dim(&self) -> usize {
        self.sd.kernel_dim()
    }

    /// `E(1) = R^m`.
    pub fn f0(&self) -> f64 {
        energy(&self.base.unit())
    }

    fn mean(&self, f: &[f64]) -> f64 {
        self.base.bg().integrate(f, true) / (self.one_norm * self.one_norm)
    }

    /// `P'` of a field.
    fn project_perp(&self, g: &[f64]) -> Field {
        let mut out = self.sd.project(g, Subspace::KernelPerp);
        let c = self.mean(&out);
        out.iter_mut().for_each(|x| *x -= c);
        out
    }

    fn residual_of(&self, psi: &[f64]) -> Result<(f64, f64, Field)> {
        let s = Smms::new(self.base.clone(), psi.to_vec())?;
        let g = differential(&s);
        let res = self.project_perp(&g);
        let constant = self.mean(&g) * self.one_norm;
        Ok((self.base.norm(&res), constant, res))
    }

    /// Newton direction for the frozen Jacobian `-(8/(n+m-2)) L_inf` on
    /// the range of `P'`.
    fn newton_direction(&self, res: &[f64]) -> Field {
        let kappa = self.base.params().kappa();
        let mut out = vec![0.0; res.len()];
        let kernel: std::collections::BTreeSet<usize> = self.sd.kernel_indices.iter().copied().collect();
        for (i, (e, d)) in self.sd.eigenfields.iter().zip(&self.sd.eigenvalues).enumerate() {
            if kernel.contains(&i) {
                continue;
            }
            let c = self.sd.inner(res, e);
            let a = -kappa * c / (8.0 * d);
            out.iter_mut().zip(e).for_each(|(o, e)| *o += a * e);
        }
        self.project_perp(&out)
    }

    /// Solves for `Phi(v)` at kernel coordinates `coords`.
    pub fn solve_graph_map(&self, coords: &[f64]) -> Result<GraphPoint> {
        if coords.len() != self.kernel_dim() {
            return Err(WyfError::ShapeMismatch {
                expected: self.kernel_dim(),
                got: coords.len(),
            });
        }
        let norm = coords.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm > self.cfg.epsilon * (1.0 + 1e-12) {
            return Err(WyfError::TrustRadius {
                norm,
                radius: self.cfg.epsilon,
            });
        }
        let v = self.sd.kernel_field(coords);
        let one_plus_v: Field = v.iter().map(|x| 1.0 + x).collect();
        let mut chi = vec![0.0; v.len()];
        let assemble = |chi: &[f64]| -> Result<Field> {
            Ok(one_plus_v.iter().zip(chi).map(|(a, b)| a + b).collect())
        };
        let mut psi = assemble(&chi)?;
        let (mut rnorm, mut constant, mut res) = self.residual_of(&psi)?;
        let mut iterations = 0;
        while rnorm >= self.cfg.newton_tol {
            if iterations == self.cfg.newton_max_iter {
                return Err(WyfError::NewtonDivergence {
                    residual: rnorm,
                    iterations,
                });
            }
            let dir = self.newton_direction(&res);
            let mut lambda = 1.0;
            let mut accepted = false;
            for _ in 0..=5 {
                let trial: Field = chi.iter().zip(&dir).map(|(c, d)| c + lambda * d).collect();
                if let Ok(tpsi) = assemble(&trial) {
                    if let Ok((tn, tc, tr)) = self.residual_of(&tpsi) {
                        if tn < rnorm {
                            chi = trial;
                            psi = tpsi;
                            rnorm = tn;
                            constant = tc;
                            res = tr;
                            accepted = true;
                            break;
                        }
                    }
                }
                lambda *= 0.5;
            }
            iterations += 1;
            if !accepted {
                return Err(WyfError::NewtonDivergence {
                    residual: rnorm,
                    iterations,
                });
            }
        }
        let s = Smms::new(self.base.clone(), psi.clone())?;
        let value = energy(&s);
        let psi_unit = s.normalize_volume().into_u();
        Ok(GraphPoint {
            coords: coords.to_vec(),
            phi: chi,
            psi,
            psi_unit,
            residual: rnorm,
            constant_component: constant,
            iterations,
            value,
        })
    }

    /// `F(v) = E(1 + v + Phi(v))`.
    pub fn reduced_functional(&self, coords: &[f64]) -> Result<f64> {
        Ok(self.solve_graph_map(coords)?.value)
    }

    /// Kernel coordinates of `DE(Psi(v))`.
    pub fn kernel_gradient(&self, coords: &[f64]) -> Result<Vec<f64>> {
        let gp = self.solve_graph_map(coords)?;
        let s = Smms::new(self.base.clone(), gp.psi)?;
        Ok(self.sd.kernel_coordinates(&differential(&s)))
    }

    /// Central-difference gradient of `F` in kernel coordinates.
    pub fn fd_gradient(&self, coords: &[f64], h: f64) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(coords.len());
        for i in 0..coords.len() {
            let mut a = coords.to_vec();
            let mut b = coords.to_vec();
            a[i] += h;
            b[i] -= h;
            let (fa, fb) = (self.reduced_functional(&a)?, self.reduced_functional(&b)?);
            let mut a2 = coords.to_vec();
            let mut b2 = coords.to_vec();
            a2[i] += 2.0 * h;
            b2[i] -= 2.0 * h;
            let (fa2, fb2) = (self.reduced_functional(&a2)?, self.reduced_functional(&b2)?);
            out.push((8.0 * (fa - fb) - (fa2 - fb2)) / (12.0 * h));
        }
        Ok(out)
    }

    /// Mixed central difference of order `dirs.len()` of `F` at 0.
    fn mixed_difference(&self, dirs: &[Vec<f64>], h: f64, cache: &mut Vec<(Vec<f64>, f64)>) -> Result<f64> {
        let p = dirs.len();
        let k = self.kernel_dim();
        let mut acc = 0.0;
        for mask in 0..(1usize << p) {
            let mut point = vec![0.0; k];
            let mut sign = 1.0;
            for (j, d) in dirs.iter().enumerate() {
                let s = if mask >> j & 1 == 1 { 1.0 } else { -1.0 };
                sign *= s;
                point.iter_mut().zip(d).for_each(|(x, d)| *x += s * h * d);
            }
            let key: Vec<f64> = point.iter().map(|x| if *x == 0.0 { 0.0 } else { *x }).collect();
            let value = match cache.iter().find(|(c, _)| *c == key) {
                Some((_, f)) => *f,
                None => {
                    let f = self.reduced_functional(&key)?;
                    cache.push((key, f));
                    f
                }
            };
            acc += sign * value;
        }
        Ok(acc / (2.0 * h).powi(p as i32))
    }

    /// `D^p F(0)[e_{i_1}, ..., e_{i_p}] / p!` as a symmetric tensor.
    pub fn polarized_tensor(&self, p: usize) -> Result<SymTensor> {
        let k = self.kernel_dim();
        let h = self.cfg.fd_step;
        let mut cache = Vec::new();
        let mut err = None;
        let fact: f64 = (1..=p).map(|x| x as f64).product();
        let t = SymTensor::from_sorted(k, p, |idx| {
            if err.is_some() {
                return 0.0;
            }
            let dirs: Vec<Vec<f64>> = idx
                .iter()
                .map(|&i| {
                    let mut e = vec![0.0; k];
                    e[i] = 1.0;
                    e
                })
                .collect();
            let coarse = self.mixed_difference(&dirs, h, &mut cache);
            let value = match (self.cfg.richardson, coarse) {
                (_, Err(e)) => Err(e),
                (1, Ok(c)) => Ok(c),
                (_, Ok(c)) => self
                    .mixed_difference(&dirs, h / 2.0, &mut cache)
                    .map(|f| (4.0 * f - c) / 3.0),
            };
            match value {
                Ok(v) => v / fact,
                Err(e) => {
                    err = Some(e);
                    0.0
                }
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Order {
    Integrable,
    Finite(usize),
}

/// Log-log slope of one sampled ray.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaySlope {
    pub direction: Vec<f64>,
    pub slope: f64,
    /// `(F(s d) - F(0)) / s^p` at the smallest sample.
    pub leading: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedModel {
    pub kernel_dim: usize,
    pub f0: f64,
    pub order: Order,
    pub tensor: Option<SymTensor>,
    pub v_hat: Option<Vec<f64>>,
    pub fp_max: Option<f64>,
    pub as_p: Option<bool>,
    pub samples: Vec<(Vec<f64>, f64)>,
    pub ray_slopes: Vec<RaySlope>,
    pub max_residual: f64,
    pub max_constant_component: f64,
    /// For `p = 3`: measured `F_3(d)` divided by the closed form
    /// `-(8(n+m+2)/(n+m-2)^2) R^m integral d^3`, per ray direction.
    pub f3_ratios: Vec<f64>,
}

fn ray_directions(k: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for i in 0..k {
        for sign in [1.0, -1.0] {
            let mut e = vec![0.0; k];
            e[i] = sign;
            out.push(e);
        }
    }
    let r = std::f64::consts::FRAC_1_SQRT_2;
    for i in 0..k {
        for j in i + 1..k {
            for (a, b) in [(r, r), (r, -r), (-r, r), (-r, -r)] {
                let mut e = vec![0.0; k];
                e[i] = a;
                e[j] = b;
                out.push(e);
            }
        }
    }
    out
}

fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..count)
        .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Closed form `-(8(n+m+2)/(n+m-2)^2) R^m integral v^3 e^{-phi0}`.
pub fn cubic_closed_form(base: &Base, v: &[f64]) -> f64 {
    let p = base.params();
    let r = base.bg().integrate(base.rm(), true) / base.bg().weighted_volume();
    let cube: Field = v.iter().map(|x| x * x * x).collect();
    -8.0 * (p.n as f64 + p.m + 2.0) / (p.kappa() * p.kappa()) * r * base.bg().integrate(&cube, true)
}

/// Samples `F` on rays, detects the order, recovers `F_p` by polarization
/// and checks the Adams–Simon condition.
pub fn detect_order_and_tensor(red: &Reduction) -> Result<ReducedModel> {
    let k = red.kernel_dim();
    let f0 = red.f0();
    let eps = red.config().epsilon;
    let grid = log_grid(1e-3, 1e-1_f64.min(eps), 9);
    let mut samples = vec![(vec![0.0; k], f0)];
    let mut max_residual = 0.0f64;
    let mut max_constant = 0.0f64;
    let mut rays = Vec::new();
    let mut flat = true;
    for d in ray_directions(k) {
        let mut ys = Vec::new();
        for &s in &grid {
            let c: Vec<f64> = d.iter().map(|x| x * s).collect();
            let gp = red.solve_graph_map(&c)?;
            max_residual = max_residual.max(gp.residual);
            max_constant = max_constant.max(gp.constant_component.abs());
            let diff = gp.value - f0;
            if diff.abs() >= 1e-11 * (1.0 + f0.abs()) {
                flat = false;
            }
            ys.push(diff);
            samples.push((c, gp.value));
        }
        rays.push((d, ys));
    }
    if flat {
        return Ok(ReducedModel {
            kernel_dim: k,
            f0,
            order: Order::Integrable,
            tensor: None,
            v_hat: None,
            fp_max: None,
            as_p: None,
            samples,
            ray_slopes: Vec::new(),
            max_residual,
            max_constant_component: max_constant,
            f3_ratios: Vec::new(),
        });
    }
    let lx: Vec<f64> = grid.iter().map(|s| s.ln()).collect();
    let mut slopes = Vec::new();
    for (d, ys) in &rays {
        if ys.iter().any(|y| y.abs() < 1e-13 * (1.0 + f0.abs())) {
            continue;
        }
        let ly: Vec<f64> = ys.iter().map(|y| y.abs().ln()).collect();
        slopes.push((d.clone(), slope(&lx, &ly), ys[0]));
    }
    let smin = slopes
        .iter()
        .map(|s| s.1)
        .fold(f64::INFINITY, f64::min);
    let p = smin.round();
    if !smin.is_finite() || (smin - p).abs() > 0.1 || p < 3.0 {
        return Err(WyfError::OrderDetection(format!(
            "smallest ray slope {smin:.4} is not within 0.1 of an integer >= 3"
        )));
    }
    let p = p as usize;
    let tensor = red.polarized_tensor(p)?;
    let (as_p, v_hat, fp_max) = check_as_p(&tensor, red.config().restarts, red.config().seed);
    let ray_slopes = slopes
        .into_iter()
        .map(|(direction, slope, y0)| RaySlope {
            leading: y0 / grid[0].powi(p as i32),
            direction,
            slope,
        })
        .collect();
    let f3_ratios = if p == 3 {
        ray_directions(k)
            .iter()
            .map(|d| {
                let v = red.spectral().kernel_field(d);
                tensor.eval(d) / cubic_closed_form(red.base(), &v)
            })
            .collect()
    } else {
        Vec::new()
    };
    Ok(ReducedModel {
        kernel_dim: k,
        f0,
        order: Order::Finite(p),
        tensor: Some(tensor),
        v_hat: Some(v_hat),
        fp_max: Some(fp_max),
        as_p: Some(as_p),
        samples,
        ray_slopes,
        max_residual,
        max_constant_component: max_constant,
        f3_ratios,
    })
}

/// Maximizes the form on the unit sphere; returns `(as_p, v_hat, max)`.
pub fn check_as_p(t: &SymTensor, restarts: usize, seed: u64) -> (bool, Vec<f64>, f64) {
    let scale = t.scale();
    if t.k == 1 {
        let (a, b) = (t.eval(&[1.0]), t.eval(&[-1.0]));
        let (v, m) = if a >= b { (vec![1.0], a) } else { (vec![-1.0], b) };
        return (m > 1e-10 * scale, v, m);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normalize = |v: &mut Vec<f64>| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
    };
    let mut best = (vec![0.0; t.k], f64::NEG_INFINITY);
    for _ in 0..restarts {
        let mut v: Vec<f64> = (0..t.k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        normalize(&mut v);
        let mut f = t.eval(&v);
        let mut step = 1.0 / scale.max(1e-300);
        for _ in 0..500 {
            let g = t.gradient(&v);
            let radial: f64 = g.iter().zip(&v).map(|(a, b)| a * b).sum();
            let tangent: Vec<f64> = g.iter().zip(&v).map(|(a, b)| a - radial * b).collect();
            let tn = tangent.iter().map(|x| x * x).sum::<f64>().sqrt();
            if tn < 1e-14 * scale {
                break;
            }
            let mut improved = false;
            while step * tn > 1e-15 {
                let mut w: Vec<f64> = v.iter().zip(&tangent).map(|(a, b)| a + step * b).collect();
                normalize(&mut w);
                let fw = t.eval(&w);
                if fw > f {
                    v = w;
                    f = fw;
                    improved = true;
                    step *= 1.5;
                    break;
                }
                step *= 0.5;
            }
            if !improved {
                break;
            }
        }
        if f > best.1 {
            best = (v, f);
        }
    }
    (best.1 > 1e-10 * scale, best.0, best.1)
}

/// Data of the product-manifold certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct As3Report {
    pub n1: usize,
    pub n2: usize,
    pub m: f64,
    pub n: usize,
    pub lambda1: f64,
    pub r_fs: f64,
    pub required_rm: f64,
    pub base_weighted_volume: f64,
    pub v3_integral: f64,
    pub f3: f64,
    pub as3: bool,
    pub explanation: String,
}

/// Evaluates the cubic term for `M^{n1} x CP^{n2}` with the first
/// eigenfunction of the Fubini–Study factor.
pub fn as3_certificate(n1: usize, n2: usize, m: f64, base_weighted_volume: f64, v3_integral: f64) -> Result<As3Report> {
    if n2 < 1 {
        return Err(WyfError::InvalidConfig("n2 must be at least 1".into()));
    }
    let n = n1 + 2 * n2;
    let nm = n as f64 + m;
    if !(m >= 0.0 && m.is_finite()) || nm <= 2.0 {
        return Err(WyfError::InvalidConfig(format!("need m >= 0 and n + m > 2, got n = {n}, m = {m}")));
    }
    if !(base_weighted_volume > 0.0 && base_weighted_volume.is_finite()) || !v3_integral.is_finite() {
        return Err(WyfError::InvalidConfig("volume must be positive and v3 finite".into()));
    }
    let lambda1 = 4.0 * (n2 as f64 + 1.0);
    let r_fs = 4.0 * n2 as f64 * (n2 as f64 + 1.0);
    let required_rm = lambda1 * (nm - 1.0);
    let kappa = nm - 2.0;
    let f3 = -8.0 * (nm + 2.0) * (nm - 1.0) / (kappa * kappa) * lambda1 * base_weighted_volume * v3_integral;
    let as3 = v3_integral != 0.0;
    let explanation = if as3 {
        "cubic term nonzero: order of integrability 3, AS_3 holds".to_string()
    } else {
        "integral of v^3 vanishes: the cubic term is zero and AS_3 cannot be concluded".to_string()
    };
    Ok(As3Report {
        n1,
        n2,
        m,
        n,
        lambda1,
        r_fs,
        required_rm,
        base_weighted_volume,
        v3_integral,
        f3,
        as3,
        explanation,
    })
}
