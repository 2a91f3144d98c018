use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{Background, BackgroundKind, Backend, Field, Phi0Spec};
use crate::error::{Result, WyfError};

/// Pseudospectral operators on the flat torus `[0, 2pi)^n`.
///
/// First derivatives drop the Nyquist wavenumber, which keeps them real and
/// skew-adjoint. The Laplacian restores it through the projections `P_j`
/// onto the Nyquist plane of each axis,
/// `Delta = sum_j (d_j d_j - (N_j/2)^2 P_j)`, and the gradient pairing
/// carries the matching term `(N_j/2)^2 P_j f P_j h`, so the Green identity
/// holds exactly and every grid mode has its true eigenvalue.
pub struct TorusBackend {
    dims: Vec<usize>,
    strides: Vec<usize>,
    fwd: Vec<Arc<dyn Fft<f64>>>,
    inv: Vec<Arc<dyn Fft<f64>>>,
    /// `wave[axis][flat index]`, Nyquist zeroed.
    wave: Vec<Vec<f64>>,
    /// `|k|^2` per flat index, Nyquist included.
    k2: Vec<f64>,
    /// `nyquist[axis][flat]`: the flat index lies on the Nyquist plane.
    nyquist: Vec<Vec<bool>>,
    /// True where some axis exceeds two thirds of its Nyquist wavenumber.
    high: Vec<bool>,
    dealias: bool,
}

impl TorusBackend {
    pub fn new(dims: &[usize], dealias: bool) -> Self {
        let n_total: usize = dims.iter().product();
        let mut strides = vec![1; dims.len()];
        for j in (0..dims.len().saturating_sub(1)).rev() {
            strides[j] = strides[j + 1] * dims[j + 1];
        }
        let mut planner = FftPlanner::new();
        let fwd = dims.iter().map(|&d| planner.plan_fft_forward(d)).collect();
        let inv = dims.iter().map(|&d| planner.plan_fft_inverse(d)).collect();
        let mut wave = vec![vec![0.0; n_total]; dims.len()];
        let mut high = vec![false; n_total];
        let mut nyquist = vec![vec![false; n_total]; dims.len()];
        let mut k2 = vec![0.0; n_total];
        for flat in 0..n_total {
            for (j, &d) in dims.iter().enumerate() {
                let idx = (flat / strides[j]) % d;
                let k = if idx < d / 2 {
                    idx as f64
                } else if idx == d / 2 {
                    0.0
                } else {
                    idx as f64 - d as f64
                };
                wave[j][flat] = k;
                let kabs = if idx <= d / 2 { idx } else { d - idx };
                nyquist[j][flat] = idx == d / 2;
                k2[flat] += (kabs * kabs) as f64;
                if 3 * kabs > d {
                    high[flat] = true;
                }
            }
        }
        Self {
            dims: dims.to_vec(),
            strides,
            fwd,
            inv,
            wave,
            k2,
            nyquist,
            high,
            dealias,
        }
    }

    fn n_total(&self) -> usize {
        self.k2.len()
    }

    fn transform(&self, data: &mut [Complex64], forward: bool) {
        let n = self.n_total();
        for (j, &d) in self.dims.iter().enumerate() {
            let plan = if forward { &self.fwd[j] } else { &self.inv[j] };
            let stride = self.strides[j];
            let mut line = vec![Complex64::new(0.0, 0.0); d];
            let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
            for start in 0..n {
                if (start / stride) % d != 0 {
                    continue;
                }
                for (t, l) in line.iter_mut().enumerate() {
                    *l = data[start + t * stride];
                }
                plan.process_with_scratch(&mut line, &mut scratch);
                for (t, l) in line.iter().enumerate() {
                    data[start + t * stride] = *l;
                }
            }
        }
        if !forward {
            let s = 1.0 / n as f64;
            data.iter_mut().for_each(|z| *z *= s);
        }
    }

    /// Discrete Fourier coefficients (unnormalized forward transform).
    pub fn spectrum(&self, f: &[f64]) -> Vec<Complex64> {
        let mut c: Vec<Complex64> = f.iter().map(|x| Complex64::new(*x, 0.0)).collect();
        self.transform(&mut c, true);
        c
    }

    fn physical(&self, mut c: Vec<Complex64>) -> Field {
        self.transform(&mut c, false);
        c.into_iter().map(|z| z.re).collect()
    }

    /// Partial derivatives of `f` along each axis.
    pub fn gradient(&self, f: &[f64]) -> Vec<Field> {
        let c = self.spectrum(f);
        self.wave
            .iter()
            .map(|w| {
                let d = c
                    .iter()
                    .zip(w)
                    .map(|(z, k)| z * Complex64::new(0.0, *k))
                    .collect();
                self.physical(d)
            })
            .collect()
    }

    /// `((N_j/2)^2, P_j f)` for each axis.
    fn nyquist_parts(&self, f: &[f64]) -> Vec<(f64, Field)> {
        let c = self.spectrum(f);
        self.nyquist
            .iter()
            .zip(&self.dims)
            .map(|(mask, &d)| {
                let h = (d / 2) as f64;
                let masked = c
                    .iter()
                    .zip(mask)
                    .map(|(z, m)| if *m { *z } else { Complex64::new(0.0, 0.0) })
                    .collect();
                (h * h, self.physical(masked))
            })
            .collect()
    }

    /// Fraction of spectral energy in the top third of the resolved band.
    pub fn high_mode_fraction(&self, f: &[f64]) -> f64 {
        let c = self.spectrum(f);
        let total: f64 = c.iter().map(|z| z.norm_sqr()).sum();
        if total == 0.0 {
            return 0.0;
        }
        let top: f64 = c
            .iter()
            .zip(&self.high)
            .filter(|(_, h)| **h)
            .map(|(z, _)| z.norm_sqr())
            .sum();
        top / total
    }
}

impl Backend for TorusBackend {
    fn name(&self) -> &'static str {
        "torus"
    }

    fn laplacian(&self, f: &[f64]) -> Field {
        let c = self
            .spectrum(f)
            .into_iter()
            .zip(&self.k2)
            .map(|(z, k2)| -z * *k2)
            .collect();
        self.physical(c)
    }

    fn gradient_inner(&self, f: &[f64], h: &[f64]) -> Field {
        let gf = self.gradient(f);
        let gh = if std::ptr::eq(f, h) {
            gf.clone()
        } else {
            self.gradient(h)
        };
        let mut out = vec![0.0; f.len()];
        for (a, b) in gf.iter().zip(&gh) {
            for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
                *o += x * y;
            }
        }
        let pf = self.nyquist_parts(f);
        let ph = if std::ptr::eq(f, h) {
            pf.clone()
        } else {
            self.nyquist_parts(h)
        };
        for ((c, a), (_, b)) in pf.iter().zip(&ph) {
            for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
                *o += c * x * y;
            }
        }
        out
    }

    /// Smooth part as in [`Backend::gradient_inner`]; the Nyquist term acts
    /// on `e^{-phi/2} f` and carries the factor `e^{phi}`.
    fn weighted_gradient_inner(&self, phi: &[f64], f: &[f64], h: &[f64]) -> Field {
        if phi.iter().all(|p| *p == 0.0) {
            return self.gradient_inner(f, h);
        }
        let gf = self.gradient(f);
        let gh = self.gradient(h);
        let mut out = vec![0.0; f.len()];
        for (a, b) in gf.iter().zip(&gh) {
            for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
                *o += x * y;
            }
        }
        let tilt = |g: &[f64]| -> Field { g.iter().zip(phi).map(|(g, p)| g * (-p / 2.0).exp()).collect() };
        let pf = self.nyquist_parts(&tilt(f));
        let ph = self.nyquist_parts(&tilt(h));
        for ((c, a), (_, b)) in pf.iter().zip(&ph) {
            for (((o, x), y), p) in out.iter_mut().zip(a).zip(b).zip(phi) {
                *o += c * x * y * p.exp();
            }
        }
        out
    }

    /// `e^{phi} sum_j d_j (e^{-phi} d_j f) - sum_j (N_j/2)^2 e^{phi/2} P_j(e^{-phi/2} f)`.
    fn weighted_laplacian(&self, phi: &[f64], f: &[f64]) -> Field {
        if phi.iter().all(|p| *p == 0.0) {
            return self.laplacian(f);
        }
        let grads = self.gradient(f);
        let mut acc = vec![Complex64::new(0.0, 0.0); f.len()];
        for (j, g) in grads.iter().enumerate() {
            let flux: Field = g.iter().zip(phi).map(|(g, p)| g * (-p).exp()).collect();
            let c = self.spectrum(&flux);
            for ((a, z), k) in acc.iter_mut().zip(&c).zip(&self.wave[j]) {
                *a += z * Complex64::new(0.0, *k);
            }
        }
        let mut out: Field = self
            .physical(acc)
            .into_iter()
            .zip(phi)
            .map(|(d, p)| d * p.exp())
            .collect();
        let tilted: Field = f.iter().zip(phi).map(|(f, p)| f * (-p / 2.0).exp()).collect();
        for (c, part) in self.nyquist_parts(&tilted) {
            for ((o, x), p) in out.iter_mut().zip(&part).zip(phi) {
                *o -= c * x * (p / 2.0).exp();
            }
        }
        out
    }

    fn spectral_radius(&self) -> f64 {
        self.dims
            .iter()
            .map(|&d| {
                let k = (d / 2) as f64;
                k * k
            })
            .sum()
    }

    fn dealias(&self, f: &mut [f64]) {
        if !self.dealias {
            return;
        }
        let mut c = self.spectrum(f);
        for (z, h) in c.iter_mut().zip(&self.high) {
            if *h {
                *z = Complex64::new(0.0, 0.0);
            }
        }
        f.copy_from_slice(&self.physical(c));
    }
}

/// Flat torus `[0, 2pi)^n` with uniform quadrature and spectral operators.
pub fn build_torus_background(
    n: usize,
    grid: &[usize],
    phi0: &Phi0Spec,
    dealias: bool,
) -> Result<Background> {
    if n == 0 || grid.len() != n {
        return Err(WyfError::InvalidConfig(format!(
            "torus of dimension {n} needs {n} grid sizes, got {}",
            grid.len()
        )));
    }
    if let Some(d) = grid.iter().find(|&&d| d < 8 || d % 2 != 0) {
        return Err(WyfError::GridTooSmall(format!(
            "torus grid sizes must be even and at least 8, got {d}"
        )));
    }
    let backend = TorusBackend::new(grid, dealias);
    let total = backend.n_total();
    let coords: Vec<Vec<f64>> = (0..total)
        .map(|flat| {
            grid.iter()
                .enumerate()
                .map(|(j, &d)| 2.0 * PI * ((flat / backend.strides[j]) % d) as f64 / d as f64)
                .collect()
        })
        .collect();
    let phi: Field = coords
        .iter()
        .map(|x| phi0.eval(x))
        .collect::<Result<_>>()?;
    let fraction = backend.high_mode_fraction(&phi);
    if fraction > 1e-8 {
        return Err(WyfError::Aliasing { fraction });
    }
    let w = (2.0 * PI).powi(n as i32) / total as f64;
    Background::from_parts(
        BackgroundKind::Torus,
        n,
        vec![w; total],
        vec![0.0; total],
        phi,
        coords,
        Arc::new(backend),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(n: usize, grid: &[usize]) -> Background {
        build_torus_background(n, grid, &Phi0Spec::Zero, false).unwrap()
    }

    #[test]
    fn constants_are_harmonic() {
        let bg = flat(1, &[16]);
        let lap = bg.laplacian(&vec![3.0; 16]);
        assert!(lap.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn cosine_is_eigenfunction() {
        let bg = flat(2, &[32, 32]);
        let f: Field = bg.coords().iter().map(|x| x[0].cos()).collect();
        let lap = bg.laplacian(&f);
        for (l, f) in lap.iter().zip(&f) {
            assert!((l + f).abs() < 1e-12);
        }
    }

    #[test]
    fn resolved_modes_are_exact() {
        let bg = flat(2, &[16, 16]);
        for k1 in -7i32..=7 {
            for k2 in [-7i32, -3, 0, 5] {
                let kk = (k1 * k1 + k2 * k2) as f64;
                for phase in [0.0, 1.0] {
                    let f: Field = bg
                        .coords()
                        .iter()
                        .map(|x| (k1 as f64 * x[0] + k2 as f64 * x[1] + phase).cos())
                        .collect();
                    let lap = bg.laplacian(&f);
                    for (l, f) in lap.iter().zip(&f) {
                        assert!((l + kk * f).abs() < 1e-12 * (1.0 + kk));
                    }
                }
            }
        }
    }

    #[test]
    fn nyquist_mode_has_its_eigenvalue() {
        let bg = flat(2, &[8, 8]);
        let f: Field = bg.coords().iter().map(|x| (4.0 * x[0]).cos() * x[1].cos()).collect();
        let lap = bg.laplacian(&f);
        for (l, f) in lap.iter().zip(&f) {
            assert!((l + 17.0 * f).abs() < 1e-11);
        }
        let g = bg.gradient_inner(&f, &f);
        let lhs = bg.integrate(&g, false);
        let rhs = -bg.integrate(&f.iter().zip(&lap).map(|(a, b)| a * b).collect::<Vec<_>>(), false);
        assert!((lhs - rhs).abs() < 1e-10 * rhs.abs());
    }

    #[test]
    fn weighted_green_identity_on_rough_fields() {
        let spec = Phi0Spec::parse("expr:0.4*sin(x1)+0.2*cos(x2)").unwrap();
        let bg = build_torus_background(2, &[8, 8], &spec, false).unwrap();
        let f: Field = (0..64).map(|i| ((i * 37 % 11) as f64).sin()).collect();
        let h: Field = (0..64).map(|i| ((i * 13 % 7) as f64).cos()).collect();
        let lhs = bg.integrate(&bg.weighted_gradient_inner(&f, &h), true);
        let lh = bg.weighted_laplacian(&h);
        let rhs = -bg.integrate(&f.iter().zip(&lh).map(|(a, b)| a * b).collect::<Vec<_>>(), true);
        assert!((lhs - rhs).abs() < 1e-11 * lhs.abs().max(1.0));
        let gff = bg.weighted_gradient_inner(&f, &f);
        assert!(gff.iter().all(|x| *x >= 0.0));
    }

    #[test]
    fn rejects_small_or_odd_grids() {
        assert!(build_torus_background(1, &[6], &Phi0Spec::Zero, false).is_err());
        assert!(build_torus_background(1, &[9], &Phi0Spec::Zero, false).is_err());
        assert!(build_torus_background(2, &[8], &Phi0Spec::Zero, false).is_err());
    }

    #[test]
    fn detects_aliased_density() {
        let spec = Phi0Spec::parse("expr:cos(7*x1)").unwrap();
        let err = build_torus_background(1, &[16], &spec, false).unwrap_err();
        assert!(matches!(err, WyfError::Aliasing { .. }));
    }

    #[test]
    fn dealias_filter_removes_top_third() {
        let bg = build_torus_background(1, &[16], &Phi0Spec::Zero, true).unwrap();
        let mut f: Field = bg
            .coords()
            .iter()
            .map(|x| x[0].cos() + (7.0 * x[0]).cos())
            .collect();
        bg.dealias(&mut f);
        for (v, x) in f.iter().zip(bg.coords()) {
            assert!((v - x[0].cos()).abs() < 1e-13);
        }
    }
}
