//! Undirected graph matrices of a case: adjacency, degree, Laplacian, and the
//! rescaled Laplacian used by the Chebyshev recursion.

use crate::case::NetworkCase;
use crate::linalg::{lu_solve, norm2, Mat};

/// Graph matrices derived from the branch topology. Immutable once built.
#[derive(Debug, Clone)]
pub struct GraphMatrices {
    pub adjacency: Mat,
    pub degree: Vec<f64>,
    pub laplacian: Mat,
    /// (2 / lambda_max) * L - I, spectrum inside [-1, 1].
    pub laplacian_scaled: Mat,
    pub lambda_max: f64,
}

/// Assemble adjacency/Laplacian matrices for a validated case.
pub fn build_matrices(case: &NetworkCase) -> GraphMatrices {
    let n = case.n_buses();
    let mut adjacency = Mat::zeros(n, n);
    for br in &case.branches {
        adjacency.set(br.from, br.to, 1.0);
        adjacency.set(br.to, br.from, 1.0);
    }
    let degree: Vec<f64> = (0..n).map(|i| adjacency.row(i).iter().sum()).collect();

    let mut laplacian = Mat::zeros(n, n);
    for i in 0..n {
        laplacian.set(i, i, degree[i]);
        for j in 0..n {
            if adjacency.get(i, j) != 0.0 {
                laplacian.add_to(i, j, -1.0);
            }
        }
    }

    let lambda_max = largest_eigenvalue(&laplacian);
    let mut laplacian_scaled = laplacian.scale(2.0 / lambda_max);
    for i in 0..n {
        laplacian_scaled.add_to(i, i, -1.0);
    }

    GraphMatrices {
        adjacency,
        degree,
        laplacian,
        laplacian_scaled,
        lambda_max,
    }
}

/// Largest eigenvalue of a symmetric PSD matrix. Power iteration with a
/// Rayleigh-quotient polish for near-degenerate top eigenpairs, where plain
/// power iteration stalls on chain-like feeder graphs.
fn largest_eigenvalue(m: &Mat) -> f64 {
    let n = m.rows();
    if n == 1 {
        return m.get(0, 0).max(f64::MIN_POSITIVE);
    }

    // Deterministic pseudo-random start; a structured start (ones, ramps)
    // can be orthogonal to the top eigenvector on path graphs.
    let mut state = 0x9e3779b97f4a7c15_u64;
    let mut v: Vec<f64> = (0..n)
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        })
        .collect();
    normalize(&mut v);

    let tol = 1e-10;
    let mut lambda = 0.0;
    for _ in 0..10_000 {
        let mut w = m.matvec(&v);
        lambda = dot(&v, &w);
        // Residual ||Mv - lambda v||.
        let mut res = 0.0;
        for (wi, vi) in w.iter().zip(&v) {
            let r = wi - lambda * vi;
            res += r * r;
        }
        if res.sqrt() < tol {
            return lambda;
        }
        normalize(&mut w);
        v = w;
    }

    // Rayleigh-quotient iteration: shifted inverse steps converge cubically
    // from the power-iteration warm start.
    for _ in 0..20 {
        let mut shifted = m.clone();
        for i in 0..n {
            shifted.add_to(i, i, -(lambda + 1e-12));
        }
        let Some(mut u) = lu_solve(&shifted, &v) else {
            break; // shift hit the eigenvalue exactly
        };
        normalize(&mut u);
        let mu = dot(&u, &m.matvec(&u));
        let mut res = 0.0;
        let mu_v = m.matvec(&u);
        for (wi, ui) in mu_v.iter().zip(&u) {
            let r = wi - mu * ui;
            res += r * r;
        }
        v = u;
        lambda = mu;
        if res.sqrt() < 1e-12 {
            break;
        }
    }
    lambda
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) {
    let n = norm2(v);
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::{Branch, Bus, NetworkCase};

    fn path_case(n: usize) -> NetworkCase {
        NetworkCase {
            name: format!("path{n}"),
            base_mva: 100.0,
            base_kv: 1.0,
            buses: (0..n)
                .map(|i| Bus {
                    id: i,
                    load_p: 0.0,
                    load_q: 0.0,
                    v_min: 0.9,
                    v_max: 1.1,
                    is_slack: i == 0,
                })
                .collect(),
            branches: (0..n - 1)
                .map(|i| Branch {
                    from: i,
                    to: i + 1,
                    r: 0.01,
                    x: 0.01,
                    s_max: 1.0,
                })
                .collect(),
            generators: vec![],
            slack_bus: 0,
        }
    }

    #[test]
    fn path_graph_adjacency_and_degrees() {
        let gm = build_matrices(&path_case(3));
        let expected = [[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]];
        for r in 0..3 {
            for c in 0..3 {
                assert_eq!(gm.adjacency.get(r, c), expected[r][c]);
            }
        }
        assert_eq!(gm.degree, vec![1.0, 2.0, 1.0]);
    }

    #[test]
    fn laplacian_rows_sum_to_zero() {
        let gm = build_matrices(&path_case(12));
        for r in 0..12 {
            let s: f64 = gm.laplacian.row(r).iter().sum();
            assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn scaled_laplacian_is_symmetric() {
        let gm = build_matrices(&path_case(9));
        let diff = gm.laplacian_scaled.sub(&gm.laplacian_scaled.transpose());
        assert!(diff.max_abs() < 1e-12);
    }

    #[test]
    fn path_lambda_max_matches_closed_form() {
        // Path graph Laplacian eigenvalues: 4 sin^2(k pi / (2n)).
        for n in [3usize, 10, 33] {
            let gm = build_matrices(&path_case(n));
            let k = (n - 1) as f64;
            let expected = 4.0 * ((k * std::f64::consts::PI) / (2.0 * n as f64)).sin().powi(2);
            assert!(
                (gm.lambda_max - expected).abs() < 1e-9,
                "n={n}: {} vs {}",
                gm.lambda_max,
                expected
            );
        }
    }
}
