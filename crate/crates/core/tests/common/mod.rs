#![allow(dead_code)]

use dbrf_core::data::{generate_synthetic, inject_label_bias, ColumnKind, CorruptionSpec, GroupSelector, SyntheticSpec};
use dbrf_core::model::{
    objective_with_weights, supervision_weights, umi_terms, ArchConfig, Batch, BatchNoise, ModelParams, TermWeights,
};
use dbrf_core::numeric::grad_check;
use dbrf_core::Exec;
use dbrf_core::numeric::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    let v = (0..rows * cols).map(|_| r.random_range(lo..hi)).collect();
    Matrix::from_vec(rows, cols, v).unwrap()
}

pub fn small_kinds() -> Vec<ColumnKind> {
    vec![
        ColumnKind::Continuous,
        ColumnKind::Continuous,
        ColumnKind::Continuous,
        ColumnKind::OneHot,
        ColumnKind::OneHot,
    ]
}

/// Three continuous and two one-hot columns, two sensitive bits.
pub fn small_model(seed: u64, arch: ArchConfig) -> ModelParams {
    ModelParams::new(&small_kinds(), 2, arch, &mut rng(seed)).unwrap()
}

pub fn small_arch() -> ArchConfig {
    ArchConfig {
        d_z: 3,
        d_b: 2,
        hidden: 8,
        dropout: 0.2,
    }
}

pub fn random_batch(seed: u64, n: usize) -> Batch {
    let mut r = rng(seed);
    let mut x = uniform_matrix(&mut r, n, 5, -2.0, 2.0);
    for i in 0..n {
        let hot = r.random_range(0..2);
        x.set(i, 3, (hot == 0) as u8 as f64);
        x.set(i, 4, (hot == 1) as u8 as f64);
    }
    let y = (0..n).map(|_| r.random_range(0..2) as f64).collect();
    let a = Matrix::from_vec(n, 2, (0..2 * n).map(|_| r.random_range(0..2) as f64).collect()).unwrap();
    Batch::new(x, y, a).unwrap()
}

pub fn noise(params: &ModelParams, n: usize, seed: u64) -> BatchNoise {
    BatchNoise::sample(params, n, &mut rng(seed))
}

/// Max relative gradient error of the weighted objective on a 16-row batch.
pub fn objective_check(w: TermWeights, seed: u64) -> f64 {
    let params = small_model(seed, small_arch());
    let mut batch = random_batch(seed + 100, 16);
    let noise = noise(&params, 16, seed + 200);
    // w_b is a constant during differentiation, so the oracle holds it fixed.
    batch.w_b = Some(supervision_weights(&params, &batch, &noise).unwrap());
    let f = |flat: &[f64]| {
        let mut p = params.clone();
        p.unflatten_model(flat)?;
        let (l, g) = objective_with_weights(&p, &batch, &noise, &w, Exec::Sequential, true)?;
        Ok((l.total, g.unwrap().flatten_model()))
    };
    grad_check(f, &params.flatten_model(), 1e-6).unwrap().max_relative_error
}

/// Weights selecting a single breakdown term.
pub fn only(i: usize) -> TermWeights {
    let mut v = [0.0; 7];
    v[i] = 1.0;
    TermWeights {
        recon_x: v[0],
        recon_a: v[1],
        kl: v[2],
        tc: v[3],
        h_y_given_rm: v[4],
        h_y_given_b: v[5],
        supervised: v[6],
    }
}

pub fn entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum()
}

/// Exhaustive 2x2x2 joint over (y, r_m, b) given as integer cell counts
/// indexed `[y][r][b]`.
pub fn ib_minus_umi(counts: [[[u32; 2]; 2]; 2], xi: f64, beta: f64) -> (f64, f64) {
    let n: u32 = counts.iter().flatten().flatten().sum();
    let nf = n as f64;
    let p = |y: usize, r: usize, b: usize| counts[y][r][b] as f64 / nf;
    let py: Vec<f64> = (0..2).map(|y| (0..4).map(|i| p(y, i / 2, i % 2)).sum()).collect();
    let pyr: Vec<f64> = (0..4).map(|i| (0..2).map(|b| p(i / 2, i % 2, b)).sum()).collect();
    let pyb: Vec<f64> = (0..4).map(|i| (0..2).map(|r| p(i / 2, r, i % 2)).sum()).collect();
    let pr: Vec<f64> = (0..2).map(|r| pyr[r] + pyr[2 + r]).collect();
    let pb: Vec<f64> = (0..2).map(|b| pyb[b] + pyb[2 + b]).collect();
    let h_y = entropy(&py);
    let h_y_r = entropy(&pyr) - entropy(&pr);
    let h_y_b = entropy(&pyb) - entropy(&pb);
    let l_ib = xi * h_y_r + beta * h_y_b - (xi + beta) * h_y;

    // Batch of n rows whose head logits are the Bayes posteriors.
    let logit = |p1: f64| (p1 / (1.0 - p1)).ln();
    let (mut rm, mut bl, mut y) = (Vec::new(), Vec::new(), Vec::new());
    for yi in 0..2 {
        for r in 0..2 {
            for b in 0..2 {
                for _ in 0..counts[yi][r][b] {
                    rm.push(logit(pyr[2 + r] / pr[r]));
                    bl.push(logit(pyb[2 + b] / pb[b]));
                    y.push(yi as f64);
                }
            }
        }
    }
    let (h_rm, h_b) = umi_terms(&rm, &bl, &y).unwrap();
    let l_umi = xi * h_rm + beta * h_b;
    (l_ib - l_umi, -(xi + beta) * h_y)
}

/// 99th percentile of chi-square with 40 degrees of freedom.
pub const CHI2_40_99: f64 = 63.691;

pub struct CellCounts {
    pub eligible: usize,
    pub flipped: usize,
}

/// Flip counts for the (a=1, y=1) and (a=0, y=0) cells, and the number of
/// changed labels outside them.
pub fn flip_counts(rho: f64, seed: u64) -> ([CellCounts; 2], usize) {
    let d = generate_synthetic(&SyntheticSpec { seed, ..Default::default() }).unwrap();
    let c = inject_label_bias(&d, &CorruptionSpec::symmetric(rho, seed + 1000), GroupSelector::Column(0)).unwrap();
    let a = d.protected(GroupSelector::Column(0)).unwrap();
    let ideal = d.ideal_labels().unwrap();
    let mut cells = [CellCounts { eligible: 0, flipped: 0 }, CellCounts { eligible: 0, flipped: 0 }];
    let mut stray = 0;
    for i in 0..d.len() {
        let changed = c.observed_labels()[i] != ideal[i];
        match (a[i], ideal[i]) {
            (1, 1) => {
                cells[0].eligible += 1;
                cells[0].flipped += changed as usize;
            }
            (0, 0) => {
                cells[1].eligible += 1;
                cells[1].flipped += changed as usize;
            }
            _ => stray += changed as usize,
        }
    }
    (cells, stray)
}

/// Counts indexed `[group][label][prediction]`.
pub fn contingency(p: &[u8], l: &[u8], g: &[u8]) -> [[[u64; 2]; 2]; 2] {
    let mut t = [[[0u64; 2]; 2]; 2];
    for i in 0..p.len() {
        t[g[i] as usize][l[i] as usize][p[i] as usize] += 1;
    }
    t
}

/// Brute-force `(delta_dp, deo, accuracy)`.
pub fn metric_oracle(p: &[u8], l: &[u8], g: &[u8]) -> (f64, f64, f64) {
    let t = contingency(p, l, g);
    let ppr = |a: usize| {
        let pos = t[a][0][1] + t[a][1][1];
        let all = pos + t[a][0][0] + t[a][1][0];
        pos as f64 / all as f64
    };
    let tpr = |a: usize| t[a][1][1] as f64 / (t[a][1][1] + t[a][1][0]) as f64;
    let correct: u64 = (0..2).map(|a| t[a][0][0] + t[a][1][1]).sum();
    (
        (ppr(0) - ppr(1)).abs(),
        (tpr(0) - tpr(1)).abs(),
        correct as f64 / p.len() as f64,
    )
}
