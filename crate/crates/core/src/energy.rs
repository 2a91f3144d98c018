//! The normalized energy `E(u) = N(u) / V(u)^beta` and its variations.
//!
//! `N(u) = integral of (a |grad u|^2 + R^m_{phi0} u^2) e^{-phi0}` and
//! `V(u) = integral of u^{q_vol} e^{-phi0}`. Besides the closed forms at a
//! constant-weighted-scalar-curvature base, exact first, second and third
//! variations at arbitrary `u` follow from the product rule; a
//! finite-difference oracle covers all orders up to three.

use serde::{Deserialize, Serialize};

use crate::error::{Result, WyfError};
use crate::geometry::Field;
use crate::smms::{Base, Smms};

/// Default CWSC tolerance, relative to `|r|`.
pub const TOL_CWSC: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    /// `E(u)`.
    pub value: f64,
    /// `DE` at the volume-normalized factor, as an element of weighted L².
    pub gradient: Field,
    pub numerator: f64,
    pub denominator: f64,
    /// `c` such that `c u` has unit volume; `DE(u) = c DE(c u)`.
    pub normalization: f64,
    /// Sup distance between the two gradient forms.
    pub form_gap: f64,
}

/// `N(u)`.
pub fn numerator(s: &Smms) -> f64 {
    s.base().quadratic_form(s.u(), s.u())
}

/// `E(u)`.
pub fn energy(s: &Smms) -> f64 {
    let v = s.weighted_volume();
    numerator(s) / v.powf(s.params().beta())
}

/// Differential of `E` at `s` (any volume) as an element of weighted L²:
/// `2 V^{-beta} (R^m_phi - r) u^{q_curv}`.
pub fn differential(s: &Smms) -> Field {
    let p = s.params();
    let vol = s.weighted_volume();
    let r = numerator(s) / vol;
    let lu = s.base().conformal_laplacian(s.u());
    let c = 2.0 * vol.powf(-p.beta());
    let qc = p.q_curv();
    lu.iter()
        .zip(s.u())
        .map(|(l, u)| c * (l - r * u.powf(qc)))
        .collect()
}

/// Full report at the volume-normalized factor. The gradient is computed in
/// the pointwise curvature form `2 (R - r) u^{q_curv}` and checked against
/// the conformal-Laplacian form `2(-a Delta u + R^m u - r u^{q_curv})`.
pub fn first_variation(s: &Smms) -> Result<EnergyReport> {
    let c = s.normalization_factor();
    let sn = s.normalize_volume();
    let p = *sn.params();
    let qc = p.q_curv();
    let curv = sn.weighted_scalar_curvature();
    let r_mean = sn.mean_curvature();
    let gradient: Field = curv
        .iter()
        .zip(sn.u())
        .map(|(rr, u)| 2.0 * (rr - r_mean) * u.powf(qc))
        .collect();
    let num = numerator(&sn);
    let den = sn.weighted_volume();
    let r_ibp = num / den;
    let other: Field = sn
        .base()
        .conformal_laplacian(sn.u())
        .iter()
        .zip(sn.u())
        .map(|(l, u)| 2.0 * (l - r_ibp * u.powf(qc)))
        .collect();
    let form_gap = gradient
        .iter()
        .zip(&other)
        .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
    Ok(EnergyReport {
        value: num / den.powf(p.beta()),
        gradient,
        numerator: num,
        denominator: den,
        normalization: c,
        form_gap,
    })
}

/// `L_inf v = (n+m-1) Delta_{phi0} v + R^m v`.
pub fn linearized_apply(base: &Base, v: &[f64]) -> Field {
    let c = base.params().nm1();
    base.bg()
        .weighted_laplacian(v)
        .iter()
        .zip(base.rm())
        .zip(v)
        .map(|((l, r), v)| c * l + r * v)
        .collect()
}

/// Checks that the base (`u = 1`) has constant weighted scalar curvature
/// and unit weighted volume; returns the curvature value.
pub fn check_cwsc_unit(base: &Base, tol: f64) -> Result<f64> {
    let vol = base.bg().weighted_volume();
    if (vol - 1.0).abs() > 1e-10 {
        return Err(WyfError::NotUnitVolume { volume: vol });
    }
    let rm = base.rm();
    let r = base.bg().integrate(rm, true) / vol;
    let deviation = rm.iter().fold(0.0f64, |a, x| a.max((x - r).abs()));
    let tolerance = tol * r.abs().max(f64::MIN_POSITIVE);
    if deviation > tolerance {
        return Err(WyfError::NotCwsc {
            deviation,
            tolerance,
        });
    }
    Ok(r)
}

/// `D²E(1)[v, w] = -(8/(n+m-2)) integral of w L_inf v e^{-phi0}`.
pub fn second_variation_at_base(base: &Base, v: &[f64], w: &[f64]) -> Result<f64> {
    check_cwsc_unit(base, TOL_CWSC)?;
    base.bg().check_field(v)?;
    base.bg().check_field(w)?;
    let lv = linearized_apply(base, v);
    Ok(-8.0 / base.params().kappa() * base.inner(w, &lv))
}

/// Scale used to judge kernel membership: a bound for `|L_inf|`.
pub fn linearized_scale(base: &Base) -> f64 {
    let rmax = base.rm().iter().fold(0.0f64, |a, r| a.max(r.abs()));
    base.params().nm1() * base.bg().spectral_radius() + rmax
}

/// `D³E(1)[v, w, z] = -(8(n+m+2)/(n+m-2)^2) R^m integral of v w z e^{-phi0}`
/// for kernel directions.
pub fn third_variation_at_base(base: &Base, v: &[f64], w: &[f64], z: &[f64]) -> Result<f64> {
    let r = check_cwsc_unit(base, TOL_CWSC)?;
    let scale = linearized_scale(base);
    for f in [v, w, z] {
        base.bg().check_field(f)?;
        let nf = base.norm(f);
        if nf == 0.0 {
            return Ok(0.0);
        }
        let residual = base.norm(&linearized_apply(base, f)) / (scale * nf);
        if residual > 1e-8 {
            return Err(WyfError::NotInKernel { residual });
        }
    }
    let p = base.params();
    let triple: Field = v.iter().zip(w).zip(z).map(|((a, b), c)| a * b * c).collect();
    let c = -8.0 * (p.n as f64 + p.m + 2.0) / (p.kappa() * p.kappa());
    Ok(c * r * base.bg().integrate(&triple, true))
}

/// Derivatives of `V` and `V^{-beta}` used by the exact variations.
struct VolumeJet {
    vol: f64,
    beta: f64,
    q: f64,
}

impl VolumeJet {
    fn h(&self, k: usize) -> f64 {
        // k-th derivative of x -> x^{-beta} at vol.
        let b = self.beta;
        let mut c = 1.0;
        for j in 0..k {
            c *= -(b + j as f64);
        }
        c * self.vol.powf(-b - k as f64)
    }
}

fn moment(s: &Smms, power: f64, dirs: &[&[f64]]) -> f64 {
    let integrand: Field = (0..s.u().len())
        .map(|i| {
            let mut x = s.u()[i].powf(power);
            for d in dirs {
                x *= d[i];
            }
            x
        })
        .collect();
    s.bg().integrate(&integrand, true)
}

/// Exact second variation `D²E(u)[v, w]` at any `u`.
pub fn hessian(s: &Smms, v: &[f64], w: &[f64]) -> f64 {
    let p = s.params();
    let q = p.q_vol();
    let jet = VolumeJet {
        vol: s.weighted_volume(),
        beta: p.beta(),
        q,
    };
    let base = s.base();
    let u = s.u();
    let n0 = base.quadratic_form(u, u);
    let n1v = 2.0 * base.quadratic_form(u, v);
    let n1w = 2.0 * base.quadratic_form(u, w);
    let n2 = 2.0 * base.quadratic_form(v, w);
    let v1v = jet.q * moment(s, q - 1.0, &[v]);
    let v1w = jet.q * moment(s, q - 1.0, &[w]);
    let v2 = jet.q * (q - 1.0) * moment(s, q - 2.0, &[v, w]);
    let h0 = jet.h(0);
    let h1v = jet.h(1) * v1v;
    let h1w = jet.h(1) * v1w;
    let h2 = jet.h(2) * v1v * v1w + jet.h(1) * v2;
    n2 * h0 + n1v * h1w + n1w * h1v + n0 * h2
}

/// Exact third variation `D³E(u)[v, w, z]` at any `u`.
pub fn third_variation(s: &Smms, v: &[f64], w: &[f64], z: &[f64]) -> f64 {
    let p = s.params();
    let q = p.q_vol();
    let jet = VolumeJet {
        vol: s.weighted_volume(),
        beta: p.beta(),
        q,
    };
    let base = s.base();
    let u = s.u();
    let n0 = base.quadratic_form(u, u);
    let n1 = |a: &[f64]| 2.0 * base.quadratic_form(u, a);
    let n2 = |a: &[f64], b: &[f64]| 2.0 * base.quadratic_form(a, b);
    let v1 = |a: &[f64]| q * moment(s, q - 1.0, &[a]);
    let v2 = |a: &[f64], b: &[f64]| q * (q - 1.0) * moment(s, q - 2.0, &[a, b]);
    let v3 = q * (q - 1.0) * (q - 2.0) * moment(s, q - 3.0, &[v, w, z]);
    let (dv, dw, dz) = (v1(v), v1(w), v1(z));
    let (dvw, dvz, dwz) = (v2(v, w), v2(v, z), v2(w, z));
    let h1 = |d: f64| jet.h(1) * d;
    let h2 = |da: f64, db: f64, dab: f64| jet.h(2) * da * db + jet.h(1) * dab;
    let h3 = jet.h(3) * dv * dw * dz
        + jet.h(2) * (dvw * dz + dvz * dw + dwz * dv)
        + jet.h(1) * v3;
    n2(v, w) * h1(dz)
        + n2(v, z) * h1(dw)
        + n2(w, z) * h1(dv)
        + n1(v) * h2(dw, dz, dwz)
        + n1(w) * h2(dv, dz, dvz)
        + n1(z) * h2(dv, dw, dvw)
        + n0 * h3
}

/// Centered finite-difference directional derivative of `E` of order
/// `dirs.len()` (1 to 3), Richardson-extrapolated from steps `h` and `h/2`.
pub fn fd_variation(s: &Smms, dirs: &[&[f64]], h: f64) -> Result<f64> {
    let order = dirs.len();
    if !(1..=3).contains(&order) {
        return Err(WyfError::InvalidConfig(format!(
            "finite-difference order must be 1..3, got {order}"
        )));
    }
    if !(1e-6..=1e-2).contains(&h) {
        return Err(WyfError::InvalidConfig(format!(
            "finite-difference step must lie in [1e-6, 1e-2], got {h}"
        )));
    }
    for d in dirs {
        s.bg().check_field(d)?;
    }
    let umax = s.u().iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let dmax = dirs
        .iter()
        .map(|d| d.iter().fold(0.0f64, |a, x| a.max(x.abs())))
        .fold(f64::INFINITY, f64::min);
    let floor = 1e3 * f64::EPSILON * umax;
    if h * dmax < floor {
        return Err(WyfError::StepUnderflow {
            diff: h * dmax,
            floor,
        });
    }
    let coarse = mixed_difference(s, dirs, h)?;
    let fine = mixed_difference(s, dirs, h / 2.0)?;
    Ok((4.0 * fine - coarse) / 3.0)
}

fn mixed_difference(s: &Smms, dirs: &[&[f64]], h: f64) -> Result<f64> {
    let order = dirs.len();
    let mut acc = 0.0;
    for mask in 0..(1usize << order) {
        let mut sign = 1.0;
        let mut u = s.u().to_vec();
        for (j, d) in dirs.iter().enumerate() {
            let e = if mask & (1 << j) != 0 { 1.0 } else { -1.0 };
            sign *= e;
            for (ui, di) in u.iter_mut().zip(d.iter()) {
                *ui += e * h * di;
            }
        }
        acc += sign * energy(&s.with_u(u)?);
    }
    Ok(acc / (2.0 * h).powi(order as i32))
}
