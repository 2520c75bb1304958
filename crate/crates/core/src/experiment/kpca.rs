//! RBF kernel PCA with an orthogonal-iteration eigensolver.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numeric::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelPcaConfig {
    /// RBF width; the median pairwise distance when unset.
    pub bandwidth: Option<f64>,
    pub max_rows: usize,
    pub max_iterations: usize,
    /// Residual `|Kv - θv|` relative to the leading eigenvalue.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for KernelPcaConfig {
    fn default() -> Self {
        Self {
            bandwidth: None,
            max_rows: 2000,
            max_iterations: 2000,
            tolerance: 1e-9,
            seed: 0,
        }
    }
}

/// Two-dimensional embedding of (a subsample of) the input rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// Source row of each projected point.
    pub rows: Vec<usize>,
    /// `rows.len() x 2`.
    pub coords: Matrix,
    pub eigenvalues: [f64; 2],
    pub bandwidth: f64,
}

/// Sorted row subset of size `min(n, max_rows)`.
pub fn subsample_rows(n: usize, max_rows: usize, seed: u64) -> Vec<usize> {
    if n <= max_rows {
        return (0..n).collect();
    }
    let mut idx = sample(&mut ChaCha8Rng::seed_from_u64(seed), n, max_rows).into_vec();
    idx.sort_unstable();
    idx
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

/// Median over all pairs `i < j`.
pub fn median_pairwise_distance(x: &Matrix) -> f64 {
    let n = x.rows();
    let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d.push(sq_dist(x.row(i), x.row(j)).sqrt());
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    *m
}

/// Double-centered RBF Gram matrix, row-major `n x n`.
pub fn centered_rbf_kernel(x: &Matrix, bandwidth: f64) -> Vec<f64> {
    let n = x.rows();
    let g = 1.0 / (2.0 * bandwidth * bandwidth);
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        k[i * n + i] = 1.0;
        for j in i + 1..n {
            let v = (-g * sq_dist(x.row(i), x.row(j))).exp();
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    let row_mean: Vec<f64> = (0..n).map(|i| k[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64).collect();
    let all = row_mean.iter().sum::<f64>() / n as f64;
    for i in 0..n {
        for j in 0..n {
            k[i * n + j] += all - row_mean[i] - row_mean[j];
        }
    }
    k
}

fn matvec(a: &[f64], n: usize, v: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = a[i * n..(i + 1) * n].iter().zip(v).map(|(x, y)| x * y).sum();
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Modified Gram-Schmidt in place.
fn orthonormalize(vs: &mut [Vec<f64>]) {
    for i in 0..vs.len() {
        for j in 0..i {
            let (done, rest) = vs.split_at_mut(i);
            let p = dot(&rest[0], &done[j]);
            rest[0].iter_mut().zip(&done[j]).for_each(|(x, q)| *x -= p * q);
        }
        let norm = dot(&vs[i], &vs[i]).sqrt();
        if norm > 0.0 {
            vs[i].iter_mut().for_each(|x| *x /= norm);
        }
    }
}

/// Eigen-decomposition of a small symmetric matrix by cyclic Jacobi.
/// Returns eigenvalues and column eigenvectors (`v[r][c]`).
fn jacobi(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let k = a.len();
    let mut v: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| (i == j) as u8 as f64).collect()).collect();
    for _ in 0..100 {
        let off: f64 = (0..k).flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j].powi(2)).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..k {
            for q in p + 1..k {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..k {
                    let (arp, arq) = (a[r][p], a[r][q]);
                    a[r][p] = c * arp - s * arq;
                    a[r][q] = s * arp + c * arq;
                }
                for r in 0..k {
                    let (apr, aqr) = (a[p][r], a[q][r]);
                    a[p][r] = c * apr - s * aqr;
                    a[q][r] = s * apr + c * aqr;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    ((0..k).map(|i| a[i][i]).collect(), v)
}

/// Leading `k` eigenpairs of a symmetric PSD matrix by orthogonal iteration
/// with Rayleigh-Ritz, largest first. Eigenvectors are sign-normalized so
/// their largest-magnitude entry is positive.
pub fn top_eigenpairs(
    a: &[f64],
    n: usize,
    k: usize,
    max_iterations: usize,
    tolerance: f64,
    seed: u64,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    check_dim("eigensolver matrix", n * n, a.len())?;
    if k == 0 || k > n {
        return Err(Error::Config(format!("cannot extract {k} eigenpairs from a {n}x{n} matrix")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vs: Vec<Vec<f64>> = (0..k).map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
    orthonormalize(&mut vs);
    let mut av = vec![vec![0.0; n]; k];
    let mut residual = f64::INFINITY;
    for _ in 0..max_iterations {
        for (v, o) in vs.iter().zip(av.iter_mut()) {
            matvec(a, n, v, o);
        }
        // Rayleigh-Ritz on the current basis.
        let t: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| dot(&vs[i], &av[j])).collect()).collect();
        let (theta, y) = jacobi(t);
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&i, &j| theta[j].total_cmp(&theta[i]));
        let ritz = |src: &[Vec<f64>], c: usize| -> Vec<f64> {
            let mut out = vec![0.0; n];
            for (r, s) in src.iter().enumerate() {
                out.iter_mut().zip(s).for_each(|(o, x)| *o += y[r][c] * x);
            }
            out
        };
        let u: Vec<Vec<f64>> = order.iter().map(|&c| ritz(&vs, c)).collect();
        let au: Vec<Vec<f64>> = order.iter().map(|&c| ritz(&av, c)).collect();
        let lam: Vec<f64> = order.iter().map(|&c| theta[c]).collect();
        let scale = lam[0].abs().max(f64::MIN_POSITIVE);
        residual = (0..k)
            .map(|i| au[i].iter().zip(&u[i]).map(|(x, v)| (x - lam[i] * v).powi(2)).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
            / scale;
        if residual <= tolerance {
            let mut u = u;
            for v in u.iter_mut() {
                let big = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
                if big < 0.0 {
                    v.iter_mut().for_each(|x| *x = -*x);
                }
            }
            return Ok((lam, u));
        }
        vs = au;
        orthonormalize(&mut vs);
    }
    Err(Error::NoConvergence {
        iterations: max_iterations,
        residual,
    })
}

/// Projects every row of `x`: centered RBF kernel, top two eigenvectors,
/// coordinates scaled by the square roots of their eigenvalues.
pub fn kernel_pca(x: &Matrix, cfg: &KernelPcaConfig) -> Result<Projection> {
    let n = x.rows();
    if n < 3 {
        return Err(Error::Config(format!("kernel PCA needs at least 3 rows, got {n}")));
    }
    if !x.is_finite() {
        return Err(Error::Config("kernel PCA input is not finite".into()));
    }
    let bandwidth = match cfg.bandwidth {
        Some(b) => b,
        None => median_pairwise_distance(x),
    };
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::Config(format!("kernel bandwidth {bandwidth} must be positive")));
    }
    let k = centered_rbf_kernel(x, bandwidth);
    let (lam, vecs) = top_eigenpairs(&k, n, 2, cfg.max_iterations, cfg.tolerance, cfg.seed)?;
    let s: Vec<f64> = lam.iter().map(|l| l.max(0.0).sqrt()).collect();
    let data = (0..n).flat_map(|i| [vecs[0][i] * s[0], vecs[1][i] * s[1]]).collect();
    Ok(Projection {
        rows: (0..n).collect(),
        coords: Matrix::from_vec(n, 2, data)?,
        eigenvalues: [lam[0], lam[1]],
        bandwidth,
    })
}

/// Kernel PCA of a seeded subsample of at most `cfg.max_rows` rows.
pub fn project_rows(x: &Matrix, cfg: &KernelPcaConfig) -> Result<Projection> {
    let rows = subsample_rows(x.rows(), cfg.max_rows, cfg.seed);
    let mut p = kernel_pca(&x.select_rows(&rows), cfg)?;
    p.rows = rows;
    Ok(p)
}

/// Distance between the group centroids over the mean of the two groups'
/// average distances to their own centroid.
pub fn group_separation(coords: &Matrix, group: &[u8]) -> Result<f64> {
    check_dim("separation groups", coords.rows(), group.len())?;
    let d = coords.cols();
    let mut centroids = [vec![0.0; d], vec![0.0; d]];
    let mut counts = [0usize; 2];
    for (row, &g) in coords.iter_rows().zip(group) {
        let g = (g == 1) as usize;
        counts[g] += 1;
        centroids[g].iter_mut().zip(row).for_each(|(c, v)| *c += v);
    }
    if counts.contains(&0) {
        return Err(Error::Metric("group separation needs both groups".into()));
    }
    for g in 0..2 {
        centroids[g].iter_mut().for_each(|c| *c /= counts[g] as f64);
    }
    let mut spread = [0.0; 2];
    for (row, &g) in coords.iter_rows().zip(group) {
        let g = (g == 1) as usize;
        spread[g] += sq_dist(row, &centroids[g]).sqrt();
    }
    let within = 0.5 * (spread[0] / counts[0] as f64 + spread[1] / counts[1] as f64);
    let between = sq_dist(&centroids[0], &centroids[1]).sqrt();
    if within == 0.0 {
        return Err(Error::Metric("both groups collapse to single points".into()));
    }
    Ok(between / within)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random(n: usize, d: usize, seed: u64) -> Matrix {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_vec(n, d, (0..n * d).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn eigensolver_matches_diagonal_oracle() {
        let n = 6;
        let diag = [0.5, 3.0, 0.1, 2.0, 0.0, 1.0];
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + i] = diag[i];
        }
        let (lam, v) = top_eigenpairs(&a, n, 2, 500, 1e-12, 1).unwrap();
        assert!((lam[0] - 3.0).abs() < 1e-10 && (lam[1] - 2.0).abs() < 1e-10, "{lam:?}");
        assert!((v[0][1] - 1.0).abs() < 1e-6 && (v[1][3] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn non_convergence_is_reported() {
        let n = 4;
        let mut a = vec![0.0; n * n];
        for (i, d) in [1.0, 0.999, 0.998, 0.997].iter().enumerate() {
            a[i * n + i] = *d;
        }
        let e = top_eigenpairs(&a, n, 2, 2, 1e-14, 0).unwrap_err();
        assert!(matches!(e, Error::NoConvergence { iterations: 2, .. }), "{e}");
    }

    #[test]
    fn columns_are_centered() {
        let p = kernel_pca(&random(120, 3, 2), &KernelPcaConfig::default()).unwrap();
        for j in 0..2 {
            let m = p.coords.column(j).iter().sum::<f64>() / 120.0;
            assert!(m.abs() < 1e-8, "{m}");
        }
        assert!(p.eigenvalues[0] >= p.eigenvalues[1] && p.eigenvalues[1] > 0.0);
    }

    #[test]
    fn duplicate_rows_share_coordinates() {
        let mut x = random(50, 2, 3);
        let copy = x.row(7).to_vec();
        x.row_mut(31).copy_from_slice(&copy);
        let p = kernel_pca(&x, &KernelPcaConfig::default()).unwrap();
        assert_eq!(p.coords.row(7), p.coords.row(31));
    }

    /// Wide kernels approach the linear kernel, whose kernel PCA is plain PCA.
    #[test]
    fn wide_kernel_agrees_with_linear_pca() {
        let n = 200;
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let (u, v): (f64, f64) = (StandardNormal.sample(&mut r), StandardNormal.sample(&mut r));
                vec![3.0 * u + 0.5 * v, 0.5 * u - v]
            })
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let med = median_pairwise_distance(&x);
        let p = kernel_pca(
            &x,
            &KernelPcaConfig {
                bandwidth: Some(100.0 * med),
                ..Default::default()
            },
        )
        .unwrap();
        // Closed-form principal axes of the 2x2 covariance.
        let m: Vec<f64> = (0..2).map(|j| x.column(j).iter().sum::<f64>() / n as f64).collect();
        let c = |a: usize, b: usize| x.iter_rows().map(|r| (r[a] - m[a]) * (r[b] - m[b])).sum::<f64>();
        let (sxx, sxy, syy) = (c(0, 0), c(0, 1), c(1, 1));
        let angle = 0.5 * (2.0 * sxy).atan2(sxx - syy);
        let axes = [[angle.cos(), angle.sin()], [-angle.sin(), angle.cos()]];
        for (k, ax) in axes.iter().enumerate() {
            let scores: Vec<f64> = x.iter_rows().map(|r| (r[0] - m[0]) * ax[0] + (r[1] - m[1]) * ax[1]).collect();
            let r = crate::experiment::stats::pearson(&scores, &p.coords.column(k)).unwrap();
            assert!(r.abs() >= 0.99, "component {k}: {r}");
        }
    }

    #[test]
    fn subsample_is_capped_and_sorted() {
        let s = subsample_rows(5000, 2000, 1);
        assert_eq!(s.len(), 2000);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(subsample_rows(10, 2000, 1), (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn separation_score_orders_layouts() {
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let group: Vec<u8> = (0..200).map(|i| (i % 2) as u8).collect();
        let make = |shift: f64, r: &mut ChaCha8Rng| {
            let rows: Vec<Vec<f64>> = group
                .iter()
                .map(|&g| vec![g as f64 * shift + r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)])
                .collect();
            Matrix::from_rows(&rows).unwrap()
        };
        let apart = group_separation(&make(5.0, &mut r), &group).unwrap();
        let mixed = group_separation(&make(0.0, &mut r), &group).unwrap();
        assert!(apart > 5.0 && mixed < 0.5, "{apart} {mixed}");
        assert!(group_separation(&make(1.0, &mut r), &[0; 200]).is_err());
    }
}
