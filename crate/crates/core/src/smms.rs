//! Weighted-geometry parameters, conformal factors and the conformal-change
//! formulas for the weighted scalar curvature.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Result, WyfError};
use crate::geometry::{Background, BackgroundKind, Backend, Field};

/// Dimension `n` and dimensional parameter `m` with the derived exponents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub n: usize,
    pub m: f64,
}

impl Params {
    pub fn new(n: usize, m: f64) -> Result<Self> {
        if n == 0 {
            return Err(WyfError::InvalidConfig("n must be at least 1".into()));
        }
        if !m.is_finite() || m < 0.0 {
            return Err(WyfError::InvalidConfig(format!(
                "m must be a finite real >= 0, got {m}"
            )));
        }
        if n as f64 + m <= 2.0 {
            return Err(WyfError::InvalidConfig(format!(
                "n + m must exceed 2, got n = {n}, m = {m}"
            )));
        }
        Ok(Self { n, m })
    }

    /// `n + m - 2`.
    pub fn kappa(&self) -> f64 {
        self.n as f64 + self.m - 2.0
    }
    /// `4(n+m-1)/(n+m-2)`.
    pub fn a(&self) -> f64 {
        4.0 * (self.n as f64 + self.m - 1.0) / self.kappa()
    }
    /// `(n+m+2)/(n+m-2)`.
    pub fn q_curv(&self) -> f64 {
        (self.n as f64 + self.m + 2.0) / self.kappa()
    }
    /// `2(n+m)/(n+m-2)`.
    pub fn q_vol(&self) -> f64 {
        2.0 * (self.n as f64 + self.m) / self.kappa()
    }
    /// `4/(n+m-2)`.
    pub fn q_lin(&self) -> f64 {
        4.0 / self.kappa()
    }
    /// Volume exponent of the normalized energy, `(n+m-2)/(n+m)`.
    pub fn beta(&self) -> f64 {
        self.kappa() / (self.n as f64 + self.m)
    }
    /// `n + m - 1`, the diffusion coefficient of the linearized operator.
    pub fn nm1(&self) -> f64 {
        self.n as f64 + self.m - 1.0
    }
}

/// `R^m_phi = R + 2 Delta phi - ((m+1)/m) |grad phi|^2` on the background;
/// for `m = 0` the density must vanish and the result is `R`.
pub fn base_weighted_scalar_curvature(bg: &Background, params: &Params) -> Result<Field> {
    if params.m == 0.0 {
        if !bg.phi0_is_zero() {
            return Err(WyfError::InvalidConfig(
                "m = 0 requires phi0 = 0".into(),
            ));
        }
        return Ok(bg.base_scalar_curvature().to_vec());
    }
    if bg.phi0_is_zero() {
        return Ok(bg.base_scalar_curvature().to_vec());
    }
    let phi = bg.phi0();
    let lap = bg.laplacian(phi);
    let grad2 = bg.gradient_inner(phi, phi);
    let c = (params.m + 1.0) / params.m;
    Ok(bg
        .base_scalar_curvature()
        .iter()
        .zip(&lap)
        .zip(&grad2)
        .map(|((r, l), g)| r + 2.0 * l - c * g)
        .collect())
}

/// A background together with `(n, m)` and its cached weighted curvature.
#[derive(Debug, Clone)]
pub struct Base {
    bg: Arc<Background>,
    params: Params,
    rm: Field,
}

impl Base {
    pub fn new(bg: Background, params: Params) -> Result<Arc<Self>> {
        Self::from_arc(Arc::new(bg), params)
    }

    pub fn from_arc(bg: Arc<Background>, params: Params) -> Result<Arc<Self>> {
        let rm = base_weighted_scalar_curvature(&bg, &params)?;
        Ok(Arc::new(Self { bg, params, rm }))
    }

    pub fn bg(&self) -> &Background {
        &self.bg
    }
    pub fn bg_arc(&self) -> &Arc<Background> {
        &self.bg
    }
    pub fn params(&self) -> &Params {
        &self.params
    }
    /// `R^m_{phi0}` samples.
    pub fn rm(&self) -> &[f64] {
        &self.rm
    }
    pub fn node_count(&self) -> usize {
        self.bg.node_count()
    }

    /// Weighted L² inner product of the base measure.
    pub fn inner(&self, f: &[f64], h: &[f64]) -> f64 {
        self.bg.inner(f, h)
    }
    pub fn norm(&self, f: &[f64]) -> f64 {
        self.bg.norm(f)
    }

    /// `Q(f, h) = integral of (a <grad f, grad h> + R^m f h) e^{-phi0}`.
    pub fn quadratic_form(&self, f: &[f64], h: &[f64]) -> f64 {
        let a = self.params.a();
        let g = self.bg.weighted_gradient_inner(f, h);
        let integrand: Field = g
            .iter()
            .zip(&self.rm)
            .zip(f.iter().zip(h))
            .map(|((g, r), (f, h))| a * g + r * f * h)
            .collect();
        self.bg.integrate(&integrand, true)
    }

    /// Weighted conformal Laplacian `-a Delta_{phi0} f + R^m f`.
    pub fn conformal_laplacian(&self, f: &[f64]) -> Field {
        let a = self.params.a();
        self.bg
            .weighted_laplacian(f)
            .iter()
            .zip(&self.rm)
            .zip(f)
            .map(|((l, r), f)| -a * l + r * f)
            .collect()
    }

    /// Smms with conformal factor one.
    pub fn unit(self: &Arc<Self>) -> Smms {
        Smms {
            base: self.clone(),
            u: vec![1.0; self.node_count()],
        }
    }
}

/// A positive conformal factor over a base.
#[derive(Debug, Clone)]
pub struct Smms {
    base: Arc<Base>,
    u: Field,
}

impl Smms {
    pub fn new(base: Arc<Base>, u: Field) -> Result<Self> {
        base.bg().check_field(&u)?;
        check_positive(&u)?;
        Ok(Self { base, u })
    }

    pub fn base(&self) -> &Arc<Base> {
        &self.base
    }
    pub fn params(&self) -> &Params {
        &self.base.params
    }
    pub fn bg(&self) -> &Background {
        &self.base.bg
    }
    pub fn u(&self) -> &[f64] {
        &self.u
    }
    pub fn into_u(self) -> Field {
        self.u
    }

    /// Same base, new conformal factor.
    pub fn with_u(&self, u: Field) -> Result<Self> {
        Self::new(self.base.clone(), u)
    }

    /// `R^m_phi = u^{-q_curv} (-a Delta_{phi0} u + R^m_{phi0} u)`.
    pub fn weighted_scalar_curvature(&self) -> Field {
        let qc = self.params().q_curv();
        self.base
            .conformal_laplacian(&self.u)
            .iter()
            .zip(&self.u)
            .map(|(l, u)| l * u.powf(-qc))
            .collect()
    }

    /// Samples of `u^{q_vol}`.
    pub fn volume_density(&self) -> Field {
        let q = self.params().q_vol();
        self.u.iter().map(|u| u.powf(q)).collect()
    }

    /// `integral of u^{q_vol} e^{-phi0} dV`.
    pub fn weighted_volume(&self) -> f64 {
        self.bg().integrate(&self.volume_density(), true)
    }

    /// Mean of the weighted scalar curvature against `e^{-phi} dV_g`.
    pub fn mean_curvature(&self) -> f64 {
        let r = self.weighted_scalar_curvature();
        let w = self.volume_density();
        let num: Field = r.iter().zip(&w).map(|(r, w)| r * w).collect();
        self.bg().integrate(&num, true) / self.bg().integrate(&w, true)
    }

    /// Factor `c` such that `c u` has unit weighted volume.
    pub fn normalization_factor(&self) -> f64 {
        self.weighted_volume().powf(-1.0 / self.params().q_vol())
    }

    pub fn normalize_volume(&self) -> Self {
        let c = self.normalization_factor();
        Self {
            base: self.base.clone(),
            u: self.u.iter().map(|u| u * c).collect(),
        }
    }

    /// Density of the conformally changed structure,
    /// `phi = phi0 - (2m/(n+m-2)) ln u`.
    pub fn phi_of(&self) -> Field {
        let c = 2.0 * self.params().m / self.params().kappa();
        self.bg()
            .phi0()
            .iter()
            .zip(&self.u)
            .map(|(p, u)| if c == 0.0 { *p } else { p - c * u.ln() })
            .collect()
    }

    /// The conformally changed structure `(u^{4/(n+m-2)} g0, phi(u))` as a
    /// background of its own.
    pub fn conformal_background(&self) -> Result<Background> {
        let bg = self.bg();
        let n = bg.dim() as f64;
        let psi: Field = self
            .u
            .iter()
            .map(|u| 2.0 / self.params().kappa() * u.ln())
            .collect();
        let e2: Field = psi.iter().map(|p| (-2.0 * p).exp()).collect();
        let lap_psi = bg.laplacian(&psi);
        let grad_psi = bg.gradient_inner(&psi, &psi);
        let r0: Field = bg
            .base_scalar_curvature()
            .iter()
            .zip(&lap_psi)
            .zip(grad_psi.iter().zip(&e2))
            .map(|((r, l), (g, e))| e * (r - 2.0 * (n - 1.0) * l - (n - 2.0) * (n - 1.0) * g))
            .collect();
        let mass: Field = bg
            .mass()
            .iter()
            .zip(&psi)
            .map(|(m, p)| m * (n * p).exp())
            .collect();
        let ops = ConformalBackend {
            inner: bg.backend().clone(),
            psi,
            e2,
            n,
        };
        Background::from_parts(
            BackgroundKind::Conformal,
            bg.dim(),
            mass,
            r0,
            self.phi_of(),
            bg.coords().to_vec(),
            Arc::new(ops),
        )
    }
}

fn check_positive(u: &[f64]) -> Result<()> {
    if let Some((index, value)) = u
        .iter()
        .enumerate()
        .find(|(_, u)| !(**u > 0.0 && u.is_finite()))
    {
        return Err(WyfError::NonPositive {
            index,
            value: *value,
        });
    }
    Ok(())
}

/// Operators of `e^{2 psi} g` expressed through those of `g`.
struct ConformalBackend {
    inner: Arc<dyn Backend>,
    psi: Field,
    e2: Field,
    n: f64,
}

impl Backend for ConformalBackend {
    fn name(&self) -> &'static str {
        "conformal"
    }

    fn laplacian(&self, f: &[f64]) -> Field {
        let lap = self.inner.laplacian(f);
        let g = self.inner.gradient_inner(&self.psi, f);
        lap.iter()
            .zip(&g)
            .zip(&self.e2)
            .map(|((l, g), e)| e * (l + (self.n - 2.0) * g))
            .collect()
    }

    fn gradient_inner(&self, f: &[f64], h: &[f64]) -> Field {
        self.inner
            .gradient_inner(f, h)
            .iter()
            .zip(&self.e2)
            .map(|(g, e)| g * e)
            .collect()
    }

    fn spectral_radius(&self) -> f64 {
        let emax = self.e2.iter().copied().fold(0.0, f64::max);
        self.inner.spectral_radius() * emax
    }

    fn dealias(&self, f: &mut [f64]) {
        self.inner.dealias(f)
    }
}
