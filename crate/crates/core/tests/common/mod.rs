//! Dense reference implementations used as independent oracles.
//!
//! Everything here works on `Vec<Vec<f64>>` with textbook algorithms and does
//! not touch the crate's linear-algebra code.

#![allow(dead_code, clippy::needless_range_loop)]

use debias_ate::GPHyperParams;
use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Dense = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn to_dense(m: &Mat<f64>) -> Dense {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn rows(m: &Mat<f64>) -> Vec<Vec<f64>> {
    to_dense(m)
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn inverse(a: &Dense) -> Dense {
    let n = a.len();
    let mut m: Dense = a
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = r.clone();
            row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    for c in 0..n {
        let p = (c..n).max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs())).unwrap();
        m.swap(c, p);
        let piv = m[c][c];
        for v in m[c].iter_mut() {
            *v /= piv;
        }
        for r in 0..n {
            if r != c {
                let f = m[r][c];
                if f != 0.0 {
                    for k in 0..2 * n {
                        m[r][k] -= f * m[c][k];
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// Determinant by Gaussian elimination.
pub fn determinant(a: &Dense) -> f64 {
    let n = a.len();
    let mut m = a.clone();
    let mut det = 1.0;
    for c in 0..n {
        let p = (c..n).max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs())).unwrap();
        if p != c {
            m.swap(c, p);
            det = -det;
        }
        det *= m[c][c];
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            for k in c..n {
                m[r][k] -= f * m[c][k];
            }
        }
    }
    det
}

pub fn matmul(a: &Dense, b: &Dense) -> Dense {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    (0..n)
        .map(|i| (0..m).map(|j| (0..k).map(|l| a[i][l] * b[l][j]).sum()).collect())
        .collect()
}

pub fn matvec(a: &Dense, v: &[f64]) -> Vec<f64> {
    a.iter().map(|r| r.iter().zip(v).map(|(x, y)| x * y).sum()).collect()
}

pub fn transpose(a: &Dense) -> Dense {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

/// `ρ² exp(−½ Σ (a−b)²/ℓ²)` written out directly.
pub fn kernel(p: &GPHyperParams, a: &[f64], b: &[f64]) -> f64 {
    let s: f64 = a
        .iter()
        .zip(b)
        .zip(&p.length_scales)
        .map(|((x, y), l)| ((x - y) / l).powi(2))
        .sum();
    p.signal_var * (-0.5 * s).exp()
}

/// `K(A,B) + ν² w_A w_Bᵀ`.
pub fn gram(p: &GPHyperParams, a: &[Vec<f64>], b: &[Vec<f64>], wa: Option<&[f64]>, wb: Option<&[f64]>) -> Dense {
    let nu2 = p.nu * p.nu;
    a.iter()
        .enumerate()
        .map(|(i, ai)| {
            b.iter()
                .enumerate()
                .map(|(j, bj)| {
                    let extra = match (wa, wb) {
                        (Some(u), Some(v)) => nu2 * u[i] * v[j],
                        _ => 0.0,
                    };
                    kernel(p, ai, bj) + extra
                })
                .collect()
        })
        .collect()
}

/// Log marginal likelihood by explicit inverse and determinant.
pub fn dense_log_ml(p: &GPHyperParams, z: &[Vec<f64>], y: &[f64], w: Option<&[f64]>) -> f64 {
    let n = z.len();
    let mut k = gram(p, z, z, w, w);
    for (i, row) in k.iter_mut().enumerate() {
        row[i] += p.noise_var;
    }
    let kinv = inverse(&k);
    let a = matvec(&kinv, y);
    let fit: f64 = y.iter().zip(&a).map(|(u, v)| u * v).sum();
    -0.5 * fit - 0.5 * determinant(&k).ln() - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
}

/// Textbook GP posterior at `zs` given training `z`, with optional corrected kernel.
pub fn dense_posterior(
    p: &GPHyperParams,
    z: &[Vec<f64>],
    zs: &[Vec<f64>],
    y: &[f64],
    w: Option<(&[f64], &[f64])>,
) -> (Vec<f64>, Dense) {
    let (wf, ws) = match w {
        Some((a, b)) => (Some(a), Some(b)),
        None => (None, None),
    };
    let mut k = gram(p, z, z, wf, wf);
    for (i, row) in k.iter_mut().enumerate() {
        row[i] += p.noise_var;
    }
    let kinv = inverse(&k);
    let ksz = gram(p, zs, z, ws, wf);
    let kss = gram(p, zs, zs, ws, ws);
    let mu = matvec(&matmul(&ksz, &kinv), y);
    let reduce = matmul(&matmul(&ksz, &kinv), &transpose(&ksz));
    let sigma = kss
        .iter()
        .zip(&reduce)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
        .collect();
    (mu, sigma)
}

pub fn random_matrix<R: Rng>(rng: &mut R, n: usize, d: usize) -> Mat<f64> {
    Mat::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0))
}

/// Random treatment vector with both labels present.
pub fn random_treatment<R: Rng>(rng: &mut R, n: usize) -> Vec<bool> {
    let mut r: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
    r[0] = true;
    r[n - 1] = false;
    r
}

pub fn random_params<R: Rng>(rng: &mut R, d1: usize, nu: f64) -> GPHyperParams {
    GPHyperParams::new(
        (0..d1).map(|_| rng.random_range(0.5..2.0)).collect(),
        rng.random_range(0.5..2.0),
        rng.random_range(0.05..0.5),
        nu,
    )
    .unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs()))
}

/// Lower Cholesky factor by the textbook column recurrence.
pub fn cholesky(a: &Dense) -> Dense {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for j in 0..n {
        let s: f64 = (0..j).map(|k| l[j][k] * l[j][k]).sum();
        l[j][j] = (a[j][j] - s).sqrt();
        for i in j + 1..n {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            l[i][j] = (a[i][j] - s) / l[j][j];
        }
    }
    l
}

/// Standard normal by Box-Muller.
pub fn normal<R: Rng>(rng: &mut R) -> f64 {
    let u: f64 = rng.random_range(f64::EPSILON..1.0);
    let v: f64 = rng.random();
    (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
}
