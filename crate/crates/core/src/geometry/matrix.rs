use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Background, BackgroundKind, Backend, Field};
use crate::error::{Result, WyfError};

/// Graph Laplacian `Delta = -M^{-1} K` from a lumped mass and a stiffness
/// matrix with zero row sums and nonpositive off-diagonal entries.
pub struct MatrixBackend {
    mass: Vec<f64>,
    /// Off-diagonal couplings `(i, j, -K_ij)` with `-K_ij > 0`, both orders.
    edges: Vec<Vec<(usize, f64)>>,
    radius: f64,
}

impl MatrixBackend {
    fn new(mass: &[f64], k: &DMatrix<f64>) -> Self {
        let n = mass.len();
        let mut edges = vec![Vec::new(); n];
        for i in 0..n {
            for j in 0..n {
                if i != j && k[(i, j)] != 0.0 {
                    edges[i].push((j, -k[(i, j)]));
                }
            }
        }
        // Gershgorin bound for M^{-1} K.
        let radius = (0..n)
            .map(|i| 2.0 * k[(i, i)].abs() / mass[i])
            .fold(0.0, f64::max);
        Self {
            mass: mass.to_vec(),
            edges,
            radius,
        }
    }
}

impl Backend for MatrixBackend {
    fn name(&self) -> &'static str {
        "matrix"
    }

    fn laplacian(&self, f: &[f64]) -> Field {
        self.edges
            .iter()
            .zip(&self.mass)
            .enumerate()
            .map(|(i, (row, m))| row.iter().map(|(j, c)| c * (f[*j] - f[i])).sum::<f64>() / m)
            .collect()
    }

    /// Carré du champ `(Delta(fh) - f Delta h - h Delta f) / 2`, written in
    /// edge form so it is nonnegative on the diagonal.
    fn gradient_inner(&self, f: &[f64], h: &[f64]) -> Field {
        self.edges
            .iter()
            .zip(&self.mass)
            .enumerate()
            .map(|(i, (row, m))| {
                0.5 * row
                    .iter()
                    .map(|(j, c)| c * (f[*j] - f[i]) * (h[*j] - h[i]))
                    .sum::<f64>()
                    / m
            })
            .collect()
    }

    /// Symmetric weighted form `e^{phi_i} M^{-1} sum_j c_ij e^{-(phi_i+phi_j)/2} (f_j - f_i)`.
    fn weighted_laplacian(&self, phi: &[f64], f: &[f64]) -> Field {
        self.edges
            .iter()
            .zip(&self.mass)
            .enumerate()
            .map(|(i, (row, m))| {
                let s: f64 = row
                    .iter()
                    .map(|(j, c)| c * (-(phi[i] + phi[*j]) / 2.0).exp() * (f[*j] - f[i]))
                    .sum();
                phi[i].exp() * s / m
            })
            .collect()
    }

    fn weighted_gradient_inner(&self, phi: &[f64], f: &[f64], h: &[f64]) -> Field {
        self.edges
            .iter()
            .zip(&self.mass)
            .enumerate()
            .map(|(i, (row, m))| {
                let s: f64 = row
                    .iter()
                    .map(|(j, c)| {
                        c * (-(phi[i] + phi[*j]) / 2.0).exp() * (f[*j] - f[i]) * (h[*j] - h[i])
                    })
                    .sum();
                0.5 * phi[i].exp() * s / m
            })
            .collect()
    }

    fn spectral_radius(&self) -> f64 {
        self.radius
    }
}

/// Background from user matrices; `dim` is the manifold dimension entering
/// the curvature exponents.
pub fn build_matrix_background(
    dim: usize,
    mass: Vec<f64>,
    stiffness: DMatrix<f64>,
    r0: Field,
    phi0: Field,
) -> Result<Background> {
    let n = mass.len();
    if stiffness.nrows() != n || stiffness.ncols() != n {
        return Err(WyfError::BadStiffness(format!(
            "expected {n} x {n}, got {} x {}",
            stiffness.nrows(),
            stiffness.ncols()
        )));
    }
    let scale = stiffness.amax().max(f64::MIN_POSITIVE);
    for i in 0..n {
        for j in 0..i {
            if (stiffness[(i, j)] - stiffness[(j, i)]).abs() > 1e-12 * scale {
                return Err(WyfError::BadStiffness(format!(
                    "asymmetric entries ({i},{j})"
                )));
            }
        }
        let row: f64 = stiffness.row(i).iter().sum();
        if row.abs() > 1e-10 * scale.max(1.0) {
            return Err(WyfError::BadStiffness(format!(
                "row {i} sums to {row:e}, constants are not annihilated"
            )));
        }
        for j in 0..n {
            if i != j && stiffness[(i, j)] > 1e-12 * scale {
                return Err(WyfError::BadStiffness(format!(
                    "positive off-diagonal entry ({i},{j}); the carré du champ would not be a pointwise square"
                )));
            }
        }
    }
    let backend = MatrixBackend::new(&mass, &stiffness);
    Background::from_parts(
        BackgroundKind::Matrix,
        dim,
        mass,
        r0,
        phi0,
        Vec::new(),
        Arc::new(backend),
    )
}

/// Generalized eigenvalues of `K v = lambda M v`, ascending.
fn generalized_eigenvalues(mass: &[f64], k: &DMatrix<f64>) -> Vec<f64> {
    let n = mass.len();
    let s = DMatrix::from_fn(n, n, |i, j| k[(i, j)] / (mass[i] * mass[j]).sqrt());
    let mut ev: Vec<f64> = SymmetricEigen::new(s).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

fn check_exponents(n: usize, m: f64) -> Result<()> {
    if !(n as f64 + m > 2.0) || m < 0.0 {
        return Err(WyfError::InvalidConfig(format!(
            "need n + m > 2 and m >= 0, got n = {n}, m = {m}"
        )));
    }
    Ok(())
}

/// Seeded random weighted graph with unit total mass, `phi0 = 0` and
/// constant curvature tuned so that the `mode`-th generalized eigenvector
/// spans the kernel of the linearized operator.
pub fn degenerate_random_graph(
    nodes: usize,
    seed: u64,
    n: usize,
    m: f64,
    mode: usize,
) -> Result<Background> {
    check_exponents(n, m)?;
    if nodes < 4 || mode == 0 || mode >= nodes {
        return Err(WyfError::InvalidConfig(format!(
            "random degenerate graph needs nodes >= 4 and 1 <= mode < nodes (got {nodes}, {mode})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut k = DMatrix::zeros(nodes, nodes);
    let connect = |k: &mut DMatrix<f64>, i: usize, j: usize, w: f64| {
        k[(i, j)] -= w;
        k[(j, i)] -= w;
        k[(i, i)] += w;
        k[(j, j)] += w;
    };
    for i in 0..nodes {
        let w = rng.gen_range(0.5..1.5);
        connect(&mut k, i, (i + 1) % nodes, w);
    }
    for i in 0..nodes {
        for j in i + 2..nodes {
            if (i == 0 && j == nodes - 1) || !rng.gen_bool(0.25) {
                continue;
            }
            let w = rng.gen_range(0.2..1.0);
            connect(&mut k, i, j, w);
        }
    }
    let raw: Vec<f64> = (0..nodes).map(|_| rng.gen_range(0.5..1.5)).collect();
    let total: f64 = raw.iter().sum();
    let mass: Vec<f64> = raw.iter().map(|x| x / total).collect();
    let ev = generalized_eigenvalues(&mass, &k);
    let lam = ev[mode];
    let gap = ev[mode] - ev[mode - 1];
    let gap_up = ev.get(mode + 1).map_or(f64::INFINITY, |e| e - lam);
    if gap.min(gap_up) < 1e-6 * ev[nodes - 1] {
        return Err(WyfError::InvalidConfig(format!(
            "eigenvalue {mode} of the random graph is not simple; change the seed"
        )));
    }
    let r0 = (n as f64 + m - 1.0) * lam;
    build_matrix_background(n, mass, k, vec![r0; nodes], vec![0.0; nodes])
}

/// Circulant graph on `nodes` vertices with uniform mass; wavenumber `mode`
/// is placed in the kernel, which is then two-dimensional (cosine and sine).
pub fn degenerate_circulant(nodes: usize, n: usize, m: f64, mode: usize) -> Result<Background> {
    check_exponents(n, m)?;
    const WEIGHTS: [f64; 3] = [1.0, 0.35, 0.12];
    if nodes < 8 || mode == 0 || 2 * mode >= nodes {
        return Err(WyfError::InvalidConfig(format!(
            "circulant graph needs nodes >= 8 and 1 <= mode < nodes/2 (got {nodes}, {mode})"
        )));
    }
    let mut k = DMatrix::zeros(nodes, nodes);
    for i in 0..nodes {
        for (d, w) in WEIGHTS.iter().enumerate() {
            let j = (i + d + 1) % nodes;
            k[(i, j)] -= w;
            k[(j, i)] -= w;
            k[(i, i)] += w;
            k[(j, j)] += w;
        }
    }
    let mass = vec![1.0 / nodes as f64; nodes];
    let lam_of = |j: usize| -> f64 {
        WEIGHTS
            .iter()
            .enumerate()
            .map(|(d, w)| {
                2.0 * w * (1.0 - (2.0 * PI * (j * (d + 1)) as f64 / nodes as f64).cos())
            })
            .sum::<f64>()
            * nodes as f64
    };
    let lam = lam_of(mode);
    for j in 0..=nodes / 2 {
        if j != mode && (lam_of(j) - lam).abs() < 1e-8 * lam {
            return Err(WyfError::InvalidConfig(format!(
                "wavenumbers {j} and {mode} are degenerate on this circulant graph"
            )));
        }
    }
    let r0 = (n as f64 + m - 1.0) * lam;
    let coords = (0..nodes)
        .map(|i| vec![2.0 * PI * i as f64 / nodes as f64])
        .collect();
    let backend = MatrixBackend::new(&mass, &k);
    Background::from_parts(
        BackgroundKind::Matrix,
        n,
        mass,
        vec![r0; nodes],
        vec![0.0; nodes],
        coords,
        Arc::new(backend),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path4() -> DMatrix<f64> {
        DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, -1.0, 0.0, 0.0, -1.0, 2.0, -1.0, 0.0, 0.0, -1.0, 2.0, -1.0, 0.0, 0.0, -1.0,
                1.0,
            ],
        )
    }

    #[test]
    fn zero_stiffness_is_trivial() {
        let bg = build_matrix_background(
            2,
            vec![1.0; 3],
            DMatrix::zeros(3, 3),
            vec![0.0; 3],
            vec![0.0; 3],
        )
        .unwrap();
        let f = [1.0, -2.0, 0.5];
        assert!(bg.laplacian(&f).iter().all(|x| *x == 0.0));
        assert!(bg.gradient_inner(&f, &f).iter().all(|x| *x == 0.0));
    }

    #[test]
    fn path_graph_matches_matrix_product() {
        let k = path4();
        let bg =
            build_matrix_background(2, vec![1.0; 4], k.clone(), vec![0.0; 4], vec![0.0; 4]).unwrap();
        let lap = bg.laplacian(&[1.0, 0.0, 0.0, 0.0]);
        for i in 0..4 {
            assert!((lap[i] + k[(i, 0)]).abs() < 1e-15);
        }
    }

    #[test]
    fn carre_du_champ_matches_definition() {
        let k = path4();
        let mass = vec![0.5, 1.0, 2.0, 1.5];
        let bg = build_matrix_background(2, mass, k, vec![0.0; 4], vec![0.0; 4]).unwrap();
        let f = [0.3, -1.0, 2.0, 0.7];
        let h = [1.1, 0.4, -0.2, 0.9];
        let fh: Vec<f64> = f.iter().zip(&h).map(|(a, b)| a * b).collect();
        let (lfh, lf, lh) = (bg.laplacian(&fh), bg.laplacian(&f), bg.laplacian(&h));
        let g = bg.gradient_inner(&f, &h);
        for i in 0..4 {
            let expect = 0.5 * (lfh[i] - f[i] * lh[i] - h[i] * lf[i]);
            assert!((g[i] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_bad_stiffness() {
        let mut k = path4();
        k[(0, 1)] = -0.5;
        assert!(build_matrix_background(2, vec![1.0; 4], k, vec![0.0; 4], vec![0.0; 4]).is_err());
        let mut k = path4();
        k[(0, 0)] += 1.0;
        assert!(build_matrix_background(2, vec![1.0; 4], k, vec![0.0; 4], vec![0.0; 4]).is_err());
        let k = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]);
        assert!(build_matrix_background(2, vec![1.0; 2], k, vec![0.0; 2], vec![0.0; 2]).is_err());
    }

    #[test]
    fn degenerate_generators_have_unit_mass() {
        let bg = degenerate_random_graph(20, 7, 3, 1.0, 1).unwrap();
        assert!((bg.mass().iter().sum::<f64>() - 1.0).abs() < 1e-14);
        let bg = degenerate_circulant(24, 3, 1.0, 8).unwrap();
        assert!((bg.mass().iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }
}
