use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use statrs::function::gamma::gamma;

use super::{Background, BackgroundKind, Backend, Field};
use crate::error::{Result, WyfError};

/// Zonal fields on the round unit sphere `S^n`, sampled at Gauss–Jacobi
/// nodes in `x = cos(theta)`.
///
/// Fields are represented by their degree `N-1` interpolant in the
/// Gegenbauer basis `C_k^{(n-1)/2}`, where the Laplacian is diagonal with
/// eigenvalue `-k(k+n-1)`. The quadrature weight `(1-x^2)^{(n-2)/2}` makes
/// the Green identity exact for every node field.
pub struct SphereBackend {
    lap: DMatrix<f64>,
    diff: DMatrix<f64>,
    one_minus_x2: Vec<f64>,
    radius: f64,
}

impl SphereBackend {
    /// Derivative in `x = cos(theta)` of the interpolant.
    pub fn d_dx(&self, f: &[f64]) -> Field {
        (&self.diff * DVector::from_column_slice(f)).as_slice().to_vec()
    }
}

impl Backend for SphereBackend {
    fn name(&self) -> &'static str {
        "sphere_symmetric"
    }

    fn laplacian(&self, f: &[f64]) -> Field {
        (&self.lap * DVector::from_column_slice(f))
            .as_slice()
            .to_vec()
    }

    fn gradient_inner(&self, f: &[f64], h: &[f64]) -> Field {
        let df = self.d_dx(f);
        let dh = if std::ptr::eq(f, h) {
            df.clone()
        } else {
            self.d_dx(h)
        };
        df.iter()
            .zip(&dh)
            .zip(&self.one_minus_x2)
            .map(|((a, b), s)| s * a * b)
            .collect()
    }

    fn spectral_radius(&self) -> f64 {
        self.radius
    }
}

/// Nodes and weights of the Gauss rule for `(1-x^2)^alpha` on `[-1, 1]`,
/// together with the three-term recurrence coefficients of the orthonormal
/// polynomials.
pub fn gauss_jacobi(count: usize, alpha: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>, f64) {
    let b: Vec<f64> = (1..count)
        .map(|k| {
            let k = k as f64;
            (k * (k + 2.0 * alpha) / ((2.0 * k + 2.0 * alpha).powi(2) - 1.0)).sqrt()
        })
        .collect();
    let jac = DMatrix::from_fn(count, count, |i, j| {
        if i + 1 == j {
            b[i]
        } else if j + 1 == i {
            b[j]
        } else {
            0.0
        }
    });
    let mu0 = PI.sqrt() * gamma(alpha + 1.0) / gamma(alpha + 1.5);
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..count)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], mu0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let nodes = pairs.iter().map(|p| p.0).collect();
    let weights = pairs.iter().map(|p| p.1).collect();
    (nodes, weights, b, mu0)
}

/// Round unit sphere `S^n` restricted to zonal fields.
pub fn build_sphere_background(n: usize, node_count: usize) -> Result<Background> {
    if n < 2 {
        return Err(WyfError::InvalidConfig(format!(
            "sphere dimension must be at least 2, got {n}"
        )));
    }
    if node_count < 32 {
        return Err(WyfError::GridTooSmall(format!(
            "sphere needs at least 32 nodes, got {node_count}"
        )));
    }
    let alpha = (n as f64 - 2.0) / 2.0;
    let (x, w, b, mu0) = gauss_jacobi(node_count, alpha);
    let nn = node_count;
    // Orthonormal polynomials and their derivatives at the nodes.
    let mut p = DMatrix::zeros(nn, nn);
    let mut dp = DMatrix::zeros(nn, nn);
    for i in 0..nn {
        let xi = x[i];
        p[(0, i)] = 1.0 / mu0.sqrt();
        if nn > 1 {
            p[(1, i)] = xi * p[(0, i)] / b[0];
            dp[(1, i)] = p[(0, i)] / b[0];
        }
        for k in 1..nn - 1 {
            p[(k + 1, i)] = (xi * p[(k, i)] - b[k - 1] * p[(k - 1, i)]) / b[k];
            dp[(k + 1, i)] =
                (p[(k, i)] + xi * dp[(k, i)] - b[k - 1] * dp[(k - 1, i)]) / b[k];
        }
    }
    let pw = DMatrix::from_fn(nn, nn, |k, i| p[(k, i)] * w[i]);
    let eig = DMatrix::from_diagonal(&DVector::from_fn(nn, |k, _| {
        let k = k as f64;
        -k * (k + n as f64 - 1.0)
    }));
    let mut lap = p.transpose() * eig * &pw;
    let mut diff = dp.transpose() * &pw;
    // Both operators annihilate constants; remove the roundoff in the row sums.
    for op in [&mut lap, &mut diff] {
        for i in 0..nn {
            let s: f64 = op.row(i).iter().sum();
            op[(i, i)] -= s;
        }
    }
    let area = 2.0 * PI.powf(n as f64 / 2.0) / gamma(n as f64 / 2.0);
    let mass: Field = w.iter().map(|w| w * area).collect();
    let coords = x.iter().map(|x| vec![x.acos()]).collect();
    let radius = ((nn - 1) * (nn + n - 2)) as f64;
    let backend = SphereBackend {
        lap,
        diff,
        one_minus_x2: x.iter().map(|x| 1.0 - x * x).collect(),
        radius,
    };
    let r0 = (n * (n - 1)) as f64;
    Background::from_parts(
        BackgroundKind::SphereSymmetric,
        n,
        mass,
        vec![r0; nn],
        vec![0.0; nn],
        coords,
        Arc::new(backend),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(bg: &Background, f: impl Fn(f64) -> f64) -> Field {
        bg.coords().iter().map(|c| f(c[0])).collect()
    }

    #[test]
    fn area_of_two_sphere() {
        let bg = build_sphere_background(2, 32).unwrap();
        let v = bg.integrate(&vec![1.0; 32], false);
        assert!((v - 4.0 * PI).abs() < 1e-10);
    }

    #[test]
    fn volume_of_three_sphere() {
        let bg = build_sphere_background(3, 40).unwrap();
        let v = bg.integrate(&vec![1.0; 40], false);
        assert!((v - 2.0 * PI * PI).abs() < 1e-10);
    }

    #[test]
    fn first_harmonic() {
        let bg = build_sphere_background(3, 32).unwrap();
        let f = field(&bg, f64::cos);
        for (l, f) in bg.laplacian(&f).iter().zip(&f) {
            assert!((l + 3.0 * f).abs() < 1e-10);
        }
    }

    #[test]
    fn second_zonal_harmonic_of_three_sphere() {
        // The degree-2 zonal harmonic of S^3 is cos^2 - 1/4; cos^2 - 1/3
        // belongs to S^2 and picks up a constant defect of -2/3 here.
        let bg = build_sphere_background(3, 32).unwrap();
        let f = field(&bg, |t| t.cos().powi(2) - 0.25);
        for (l, f) in bg.laplacian(&f).iter().zip(&f) {
            assert!((l + 8.0 * f).abs() < 1e-8);
        }
        let g = field(&bg, |t| t.cos().powi(2) - 1.0 / 3.0);
        for (l, g) in bg.laplacian(&g).iter().zip(&g) {
            assert!((l + 8.0 * g + 2.0 / 3.0).abs() < 1e-8);
        }
    }

    #[test]
    fn matches_finite_difference_form() {
        // f'' + (n-1) cot(theta) f' for a smooth zonal field, by central
        // differences in theta.
        let n = 4.0;
        let bg = build_sphere_background(4, 48).unwrap();
        let g = |t: f64| (0.3 * t.cos()).exp() + t.cos().powi(3);
        let f = field(&bg, g);
        let lap = bg.laplacian(&f);
        let h = 1e-4;
        for (c, l) in bg.coords().iter().zip(&lap) {
            let t = c[0];
            let d1 = (g(t + h) - g(t - h)) / (2.0 * h);
            let d2 = (g(t + h) - 2.0 * g(t) + g(t - h)) / (h * h);
            let fd = d2 + (n - 1.0) * t.cos() / t.sin() * d1;
            assert!((l - fd).abs() < 1e-5 * (1.0 + fd.abs()), "{l} vs {fd}");
        }
    }

    #[test]
    fn gradient_pairing_is_dual_to_laplacian() {
        let bg = build_sphere_background(3, 36).unwrap();
        let f = field(&bg, |t| (t.cos() * 2.0).sin());
        let h = field(&bg, |t| 1.0 / (1.5 + t.cos()));
        let lhs = bg.integrate(&bg.gradient_inner(&f, &h), false);
        let lh = bg.laplacian(&h);
        let rhs: f64 = -bg.integrate(&f.iter().zip(&lh).map(|(a, b)| a * b).collect::<Vec<_>>(), false);
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }
}
