//! Independent reference implementations used by the test suites. Each one
//! takes the slowest obvious route so it shares no code path with the crate.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn coords(dims: [usize; 3]) -> Vec<[usize; 3]> {
    let mut out = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                out.push([x, y, z]);
            }
        }
    }
    out
}

/// Nearest opposite-class voxel by exhaustive search; positive inside.
pub fn brute_sdt(dims: [usize; 3], inside: &[bool]) -> Vec<f64> {
    let pts = coords(dims);
    let all_same = inside.iter().all(|&b| b == inside[0]);
    if all_same {
        return vec![0.0; inside.len()];
    }
    pts.iter()
        .enumerate()
        .map(|(i, p)| {
            let mut best = f64::INFINITY;
            for (j, q) in pts.iter().enumerate() {
                if inside[j] != inside[i] {
                    let d2: f64 = (0..3).map(|a| (p[a] as f64 - q[a] as f64).powi(2)).sum();
                    best = best.min(d2);
                }
            }
            if inside[i] {
                best.sqrt()
            } else {
                -best.sqrt()
            }
        })
        .collect()
}

/// Cyclic Jacobi rotations until the off-diagonal mass vanishes; returns
/// eigenvalues sorted descending.
pub fn jacobi_eigenvalues(m: [[f64; 3]; 3]) -> [f64; 3] {
    let mut a = m;
    for _sweep in 0..100 {
        let off: f64 = a[0][1].powi(2) + a[0][2].powi(2) + a[1][2].powi(2);
        let scale: f64 = a.iter().flatten().map(|v| v * v).sum();
        if off <= 1e-36 * scale || off == 0.0 {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if a[p][q] == 0.0 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            let mut r = [[0.0; 3]; 3];
            for (i, row) in r.iter_mut().enumerate() {
                row[i] = 1.0;
            }
            r[p][p] = c;
            r[q][q] = c;
            r[p][q] = s;
            r[q][p] = -s;
            // a <- r^T a r
            let mut tmp = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    tmp[i][j] = (0..3).map(|k| a[i][k] * r[k][j]).sum();
                }
            }
            for i in 0..3 {
                for j in 0..3 {
                    a[i][j] = (0..3).map(|k| r[k][i] * tmp[k][j]).sum();
                }
            }
        }
    }
    let mut e = [a[0][0], a[1][1], a[2][2]];
    e.sort_by(|x, y| y.partial_cmp(x).unwrap());
    e
}

pub fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

pub fn frobenius(m: &[[f64; 3]; 3]) -> f64 {
    m.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
}

/// Random rotation from a normalized random quaternion.
pub fn random_rotation(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|v| v / n);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
        [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
        [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

pub fn conjugate(r: &[[f64; 3]; 3], m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut s = 0.0;
            for k in 0..3 {
                for l in 0..3 {
                    s += r[i][k] * m[k][l] * r[j][l];
                }
            }
            out[i][j] = s;
        }
    }
    // exact symmetry so the input validator sees a symmetric matrix
    for i in 0..3 {
        for j in i + 1..3 {
            let avg = 0.5 * (out[i][j] + out[j][i]);
            out[i][j] = avg;
            out[j][i] = avg;
        }
    }
    out
}

/// Random symmetric matrix at a log-uniform scale; every fourth one has a
/// repeated eigenvalue.
pub fn random_symmetric(rng: &mut ChaCha8Rng, k: usize) -> [[f64; 3]; 3] {
    let scale = 10f64.powf(rng.random_range(-3.0..3.0));
    if k % 4 == 3 {
        let a = rng.random_range(-1.0..1.0) * scale;
        let b = rng.random_range(-1.0..1.0) * scale;
        let d = [[a, 0.0, 0.0], [0.0, a, 0.0], [0.0, 0.0, b]];
        return conjugate(&random_rotation(rng), &d);
    }
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in i..3 {
            let v = rng.random_range(-1.0..1.0) * scale;
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    m
}

/// Weighted centroid and covariance by nested loops over (x, y, z), with
/// naive accumulation.
pub fn brute_moments(dims: [usize; 3], plane: &[f64]) -> ([f64; 3], [[f64; 3]; 3]) {
    let mut mass = 0.0;
    let mut first = [0.0; 3];
    let mut idx = 0;
    let mut samples = Vec::new();
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let w = plane[idx];
                let p = [x as f64, y as f64, z as f64];
                mass += w;
                for a in 0..3 {
                    first[a] += w * p[a];
                }
                samples.push((w, p));
                idx += 1;
            }
        }
    }
    let mu = first.map(|s| s / mass);
    let mut cov = [[0.0; 3]; 3];
    for (w, p) in samples {
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] += w * (p[i] - mu[i]) * (p[j] - mu[j]);
            }
        }
    }
    for row in cov.iter_mut() {
        for v in row.iter_mut() {
            *v /= mass;
        }
    }
    (mu, cov)
}

/// `exp(s_i / tau) / sum exp(s_j / tau)` computed directly (inputs kept small).
pub fn naive_softmax(scores: &[f64], tau: f64) -> Vec<f64> {
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| ((s - m) / tau).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Attention read-out `sum_i softmax(cos(f, v_i) + b_i) v_i` for one row.
pub fn naive_attention(row: &[f64], tokens: &[Vec<f64>], bias: &[f64], tau: f64) -> Vec<f64> {
    let nf = row.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scores: Vec<f64> = tokens
        .iter()
        .zip(bias)
        .map(|(t, b)| {
            let nt = t.iter().map(|v| v * v).sum::<f64>().sqrt();
            let c = if nf == 0.0 || nt == 0.0 {
                0.0
            } else {
                row.iter().zip(t).map(|(a, b)| a * b).sum::<f64>() / (nf * nt)
            };
            c + b
        })
        .collect();
    let w = naive_softmax(&scores, tau);
    let mut out = vec![0.0; row.len()];
    for (wi, t) in w.iter().zip(tokens) {
        for (o, x) in out.iter_mut().zip(t) {
            *o += wi * x;
        }
    }
    out
}

pub fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub fn random_mask(rng: &mut ChaCha8Rng, n: usize) -> Vec<bool> {
    let density = rng.random_range(0.05..0.95);
    (0..n).map(|_| rng.random_bool(density)).collect()
}

pub fn random_dims(rng: &mut ChaCha8Rng, max: usize) -> [usize; 3] {
    std::array::from_fn(|_| rng.random_range(1..=max))
}
