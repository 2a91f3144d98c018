//! Discretized base manifolds.
//!
//! A [`Background`] bundles quadrature weights, base scalar curvature and
//! base density with a [`Backend`] that applies the Laplacian and the
//! gradient inner product to node samples. Backends are trait objects,
//! selected by name through [`BackgroundRegistry`].

mod matrix;
mod phi0;
mod sphere;
mod torus;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Result, WyfError};

pub use matrix::{
    build_matrix_background, degenerate_circulant, degenerate_random_graph, MatrixBackend,
};
pub use phi0::Phi0Spec;
pub use sphere::{build_sphere_background, gauss_jacobi, SphereBackend};
pub use torus::{build_torus_background, TorusBackend};

/// Node-sampled field.
pub type Field = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundKind {
    Torus,
    SphereSymmetric,
    Matrix,
    Conformal,
}

/// Differential operators of a discretized manifold acting on node samples.
pub trait Backend: Send + Sync {
    fn name(&self) -> &'static str;

    /// Action of the Laplace–Beltrami operator.
    fn laplacian(&self, f: &[f64]) -> Field;

    /// Pointwise inner product of gradients.
    fn gradient_inner(&self, f: &[f64], h: &[f64]) -> Field;

    /// Weighted Laplacian for the density `phi`.
    fn weighted_laplacian(&self, phi: &[f64], f: &[f64]) -> Field {
        let lap = self.laplacian(f);
        let g = self.gradient_inner(phi, f);
        lap.iter().zip(&g).map(|(a, b)| a - b).collect()
    }

    /// Gradient pairing whose weighted integral is dual to
    /// [`Backend::weighted_laplacian`] for the density `phi`.
    fn weighted_gradient_inner(&self, _phi: &[f64], f: &[f64], h: &[f64]) -> Field {
        self.gradient_inner(f, h)
    }

    /// Upper bound for the spectral radius of the Laplacian.
    fn spectral_radius(&self) -> f64;

    /// Optional 2/3 filter applied to nonlinear products.
    fn dealias(&self, _f: &mut [f64]) {}
}

/// Multiplies a backend's operators by a constant, which realizes the
/// metric rescaling `g -> lambda g` with `inverse = 1/lambda`.
struct ScaledBackend {
    inner: Arc<dyn Backend>,
    inverse: f64,
}

impl Backend for ScaledBackend {
    fn name(&self) -> &'static str {
        self.inner.name()
    }
    fn laplacian(&self, f: &[f64]) -> Field {
        scale(self.inner.laplacian(f), self.inverse)
    }
    fn gradient_inner(&self, f: &[f64], h: &[f64]) -> Field {
        scale(self.inner.gradient_inner(f, h), self.inverse)
    }
    fn weighted_laplacian(&self, phi: &[f64], f: &[f64]) -> Field {
        scale(self.inner.weighted_laplacian(phi, f), self.inverse)
    }
    fn weighted_gradient_inner(&self, phi: &[f64], f: &[f64], h: &[f64]) -> Field {
        scale(self.inner.weighted_gradient_inner(phi, f, h), self.inverse)
    }
    fn spectral_radius(&self) -> f64 {
        self.inner.spectral_radius() * self.inverse
    }
    fn dealias(&self, f: &mut [f64]) {
        self.inner.dealias(f)
    }
}

fn scale(mut v: Field, c: f64) -> Field {
    v.iter_mut().for_each(|x| *x *= c);
    v
}

/// A discretized base manifold `(M, g0, e^{-phi0} dV)`.
#[derive(Clone)]
pub struct Background {
    kind: BackgroundKind,
    dim: usize,
    mass: Field,
    scalar_curvature: Field,
    phi0: Field,
    density: Field,
    coords: Vec<Vec<f64>>,
    ops: Arc<dyn Backend>,
}

impl fmt::Debug for Background {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Background")
            .field("kind", &self.kind)
            .field("dim", &self.dim)
            .field("node_count", &self.mass.len())
            .field("backend", &self.ops.name())
            .finish()
    }
}

impl Background {
    /// Assembles a background from its parts; `coords` may be empty.
    pub fn from_parts(
        kind: BackgroundKind,
        dim: usize,
        mass: Field,
        scalar_curvature: Field,
        phi0: Field,
        coords: Vec<Vec<f64>>,
        ops: Arc<dyn Backend>,
    ) -> Result<Self> {
        let n = mass.len();
        if n == 0 {
            return Err(WyfError::InvalidConfig("background has no nodes".into()));
        }
        check_len(&scalar_curvature, n)?;
        check_len(&phi0, n)?;
        if let Some((i, m)) = mass.iter().enumerate().find(|(_, m)| !(**m > 0.0)) {
            return Err(WyfError::InvalidConfig(format!(
                "mass weight {i} is not positive ({m})"
            )));
        }
        let density = phi0.iter().map(|p| (-p).exp()).collect();
        Ok(Self {
            kind,
            dim,
            mass,
            scalar_curvature,
            phi0,
            density,
            coords,
            ops,
        })
    }

    pub fn kind(&self) -> BackgroundKind {
        self.kind
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn node_count(&self) -> usize {
        self.mass.len()
    }
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }
    pub fn base_scalar_curvature(&self) -> &[f64] {
        &self.scalar_curvature
    }
    pub fn phi0(&self) -> &[f64] {
        &self.phi0
    }
    /// Samples of `e^{-phi0}`.
    pub fn density(&self) -> &[f64] {
        &self.density
    }
    /// Node coordinates (angles on the torus, polar angle on the sphere).
    pub fn coords(&self) -> &[Vec<f64>] {
        &self.coords
    }
    pub fn backend(&self) -> &Arc<dyn Backend> {
        &self.ops
    }

    pub fn check_field(&self, f: &[f64]) -> Result<()> {
        check_len(f, self.node_count())
    }

    /// True when `phi0` vanishes identically.
    pub fn phi0_is_zero(&self) -> bool {
        self.phi0.iter().all(|p| *p == 0.0)
    }

    pub fn laplacian(&self, f: &[f64]) -> Field {
        self.ops.laplacian(f)
    }

    pub fn gradient_inner(&self, f: &[f64], h: &[f64]) -> Field {
        self.ops.gradient_inner(f, h)
    }

    /// `Delta_{phi0} f`.
    pub fn weighted_laplacian(&self, f: &[f64]) -> Field {
        self.ops.weighted_laplacian(&self.phi0, f)
    }

    /// Gradient pairing dual to [`Background::weighted_laplacian`] under
    /// the weighted measure.
    pub fn weighted_gradient_inner(&self, f: &[f64], h: &[f64]) -> Field {
        self.ops.weighted_gradient_inner(&self.phi0, f, h)
    }

    pub fn spectral_radius(&self) -> f64 {
        self.ops.spectral_radius()
    }

    pub fn dealias(&self, f: &mut [f64]) {
        self.ops.dealias(f)
    }

    /// `sum_i mass_i f_i (e^{-phi0_i} if weighted)`.
    pub fn integrate(&self, f: &[f64], weighted: bool) -> f64 {
        if weighted {
            f.iter()
                .zip(&self.mass)
                .zip(&self.density)
                .map(|((f, m), d)| f * m * d)
                .sum()
        } else {
            f.iter().zip(&self.mass).map(|(f, m)| f * m).sum()
        }
    }

    /// Weighted L² inner product.
    pub fn inner(&self, f: &[f64], h: &[f64]) -> f64 {
        f.iter()
            .zip(h)
            .zip(self.mass.iter().zip(&self.density))
            .map(|((f, h), (m, d))| f * h * m * d)
            .sum()
    }

    /// Weighted L² norm.
    pub fn norm(&self, f: &[f64]) -> f64 {
        self.inner(f, f).max(0.0).sqrt()
    }

    /// Weighted volume of the base, `integral of e^{-phi0}`.
    pub fn weighted_volume(&self) -> f64 {
        self.mass.iter().zip(&self.density).map(|(m, d)| m * d).sum()
    }

    /// The same manifold with metric `lambda g0`: volumes scale by
    /// `lambda^{n/2}`, Laplacian, gradient pairing and curvature by `1/lambda`.
    pub fn with_metric_scale(&self, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(WyfError::InvalidConfig(format!(
                "metric scale must be positive, got {lambda}"
            )));
        }
        let vol = lambda.powf(self.dim as f64 / 2.0);
        let inverse = 1.0 / lambda;
        let ops: Arc<dyn Backend> = Arc::new(ScaledBackend {
            inner: self.ops.clone(),
            inverse,
        });
        Self::from_parts(
            self.kind,
            self.dim,
            scale(self.mass.clone(), vol),
            scale(self.scalar_curvature.clone(), inverse),
            self.phi0.clone(),
            self.coords.clone(),
            ops,
        )
    }

    /// Rescales the metric so that the weighted volume equals one.
    pub fn with_unit_weighted_volume(&self) -> Result<Self> {
        let v = self.weighted_volume();
        self.with_metric_scale(v.powf(-2.0 / self.dim as f64))
    }
}

fn check_len(f: &[f64], n: usize) -> Result<()> {
    if f.len() != n {
        return Err(WyfError::ShapeMismatch {
            expected: n,
            got: f.len(),
        });
    }
    Ok(())
}

/// Explicit matrix data or a synthetic degenerate generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stiffness: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degenerate: Option<DegenerateSpec>,
}

/// Synthetic background whose linearized operator has a prescribed kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegenerateSpec {
    /// `random` (simple kernel) or `circulant` (two-dimensional kernel).
    pub graph: String,
    pub nodes: usize,
    /// Index of the generalized eigenvalue placed in the kernel.
    pub mode: usize,
    #[serde(default)]
    pub seed: u64,
}

/// Background section of an experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackgroundSpec {
    pub kind: String,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi0: Option<String>,
    #[serde(default)]
    pub dealias: bool,
    /// Rescale the metric to unit weighted volume after construction.
    #[serde(default)]
    pub unit_volume: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<MatrixSpec>,
}

/// Constructs a background from a configuration section.
pub trait BackgroundBuilder: Send + Sync {
    fn name(&self) -> &'static str;
    /// `m` is needed by generators that tune curvature to create a kernel.
    fn build(&self, spec: &BackgroundSpec, m: f64) -> Result<Background>;
}

struct TorusBuilder;
struct SphereBuilder;
struct MatrixBuilder;

impl BackgroundBuilder for TorusBuilder {
    fn name(&self) -> &'static str {
        "torus"
    }
    fn build(&self, spec: &BackgroundSpec, _m: f64) -> Result<Background> {
        let grid = spec
            .grid
            .clone()
            .ok_or_else(|| WyfError::InvalidConfig("torus needs `grid`".into()))?;
        let phi0 = match &spec.phi0 {
            Some(s) => Phi0Spec::parse(s)?,
            None => Phi0Spec::Zero,
        };
        build_torus_background(spec.n, &grid, &phi0, spec.dealias)
    }
}

impl BackgroundBuilder for SphereBuilder {
    fn name(&self) -> &'static str {
        "sphere_symmetric"
    }
    fn build(&self, spec: &BackgroundSpec, _m: f64) -> Result<Background> {
        if spec.phi0.is_some() {
            return Err(WyfError::InvalidConfig(
                "sphere_symmetric carries phi0 = 0; remove `phi0`".into(),
            ));
        }
        let nodes = spec
            .node_count
            .ok_or_else(|| WyfError::InvalidConfig("sphere needs `node_count`".into()))?;
        build_sphere_background(spec.n, nodes)
    }
}

impl BackgroundBuilder for MatrixBuilder {
    fn name(&self) -> &'static str {
        "matrix"
    }
    fn build(&self, spec: &BackgroundSpec, m: f64) -> Result<Background> {
        let ms = spec
            .matrix
            .as_ref()
            .ok_or_else(|| WyfError::InvalidConfig("matrix kind needs `matrix`".into()))?;
        if let Some(d) = &ms.degenerate {
            return match d.graph.as_str() {
                "random" => degenerate_random_graph(d.nodes, d.seed, spec.n, m, d.mode),
                "circulant" => degenerate_circulant(d.nodes, spec.n, m, d.mode),
                other => Err(WyfError::InvalidConfig(format!(
                    "unknown degenerate graph `{other}`"
                ))),
            };
        }
        let (mass, stiff) = match (&ms.mass, &ms.stiffness) {
            (Some(a), Some(b)) => (a.clone(), b.clone()),
            _ => {
                return Err(WyfError::InvalidConfig(
                    "matrix needs `mass` and `stiffness` or `degenerate`".into(),
                ))
            }
        };
        let n = mass.len();
        if stiff.len() != n || stiff.iter().any(|r| r.len() != n) {
            return Err(WyfError::InvalidConfig("stiffness must be N x N".into()));
        }
        let k = nalgebra::DMatrix::from_fn(n, n, |i, j| stiff[i][j]);
        let r0 = ms.r0.clone().unwrap_or_else(|| vec![0.0; n]);
        let phi0 = ms.phi0.clone().unwrap_or_else(|| vec![0.0; n]);
        build_matrix_background(spec.n, mass, k, r0, phi0)
    }
}

/// Name-indexed set of background builders.
pub struct BackgroundRegistry {
    builders: BTreeMap<&'static str, Box<dyn BackgroundBuilder>>,
}

impl Default for BackgroundRegistry {
    fn default() -> Self {
        let mut r = Self {
            builders: BTreeMap::new(),
        };
        r.register(Box::new(TorusBuilder));
        r.register(Box::new(SphereBuilder));
        r.register(Box::new(MatrixBuilder));
        r
    }
}

impl BackgroundRegistry {
    pub fn register(&mut self, b: Box<dyn BackgroundBuilder>) {
        self.builders.insert(b.name(), b);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.builders.keys().copied().collect()
    }

    pub fn build(&self, spec: &BackgroundSpec, m: f64) -> Result<Background> {
        let b = self.builders.get(spec.kind.as_str()).ok_or_else(|| {
            WyfError::InvalidConfig(format!(
                "unknown background kind `{}` (known: {})",
                spec.kind,
                self.names().join(", ")
            ))
        })?;
        let bg = b.build(spec, m)?;
        if spec.unit_volume {
            bg.with_unit_weighted_volume()
        } else {
            Ok(bg)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_scale_rescales_volume_and_curvature() {
        let bg = build_sphere_background(3, 32).unwrap();
        let s = bg.with_metric_scale(4.0).unwrap();
        let ratio = s.weighted_volume() / bg.weighted_volume();
        assert!((ratio - 8.0).abs() < 1e-12);
        assert!((s.base_scalar_curvature()[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn unit_volume_rescaling() {
        let bg = build_sphere_background(3, 32)
            .unwrap()
            .with_unit_weighted_volume()
            .unwrap();
        assert!((bg.weighted_volume() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn registry_rejects_unknown_kind() {
        let spec = BackgroundSpec {
            kind: "klein_bottle".into(),
            n: 2,
            grid: None,
            node_count: None,
            phi0: None,
            dealias: false,
            unit_volume: false,
            matrix: None,
        };
        let err = BackgroundRegistry::default().build(&spec, 1.0).unwrap_err();
        assert!(err.is_validation());
    }
}
