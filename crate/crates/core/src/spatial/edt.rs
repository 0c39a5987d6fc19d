//! Exact Euclidean distance transform by separable lower envelopes of
//! parabolas, one pass per axis.

use rayon::prelude::*;

use crate::error::Result;
use crate::field::{pairwise_mean, VoxelGrid};

/// Signed distance map plus the all-inside / all-outside flag.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedDistance {
    pub grid: VoxelGrid,
    pub degenerate: bool,
}

/// One-dimensional squared distance transform of a sampled function `f`.
/// Entries of `f` that are infinite are not parabola sites.
fn lower_envelope(f: &[f64], out: &mut [f64], sites: &mut Vec<usize>, bounds: &mut Vec<f64>) {
    sites.clear();
    bounds.clear();
    for (q, &fq) in f.iter().enumerate() {
        if !fq.is_finite() {
            continue;
        }
        let qf = q as f64;
        loop {
            let Some(&p) = sites.last() else {
                sites.push(q);
                bounds.push(f64::NEG_INFINITY);
                break;
            };
            let pf = p as f64;
            let s = ((fq + qf * qf) - (f[p] + pf * pf)) / (2.0 * qf - 2.0 * pf);
            if s <= *bounds.last().expect("bounds tracks sites") {
                sites.pop();
                bounds.pop();
            } else {
                sites.push(q);
                bounds.push(s);
                break;
            }
        }
    }
    if sites.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    bounds.push(f64::INFINITY);
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        let qf = q as f64;
        while bounds[k + 1] < qf {
            k += 1;
        }
        let d = qf - sites[k] as f64;
        *o = d * d + f[sites[k]];
    }
}

/// Squared Euclidean distance from every voxel centre to the nearest voxel
/// with `seeds[v] == true`; infinite when there are no seeds.
pub fn squared_edt(dims: [usize; 3], seeds: &[bool]) -> Vec<f64> {
    let mut dist: Vec<f64> = seeds
        .iter()
        .map(|&s| if s { 0.0 } else { f64::INFINITY })
        .collect();
    let strides = [1, dims[0], dims[0] * dims[1]];
    for axis in 0..3 {
        let len = dims[axis];
        let stride = strides[axis];
        let starts: Vec<usize> = (0..dist.len())
            .filter(|&v| (v / stride) % len == 0)
            .collect();
        let lines: Vec<Vec<f64>> = starts
            .par_iter()
            .map_init(
                || (Vec::new(), Vec::new(), vec![0.0; len]),
                |(sites, bounds, buf), &start| {
                    for (i, b) in buf.iter_mut().enumerate() {
                        *b = dist[start + i * stride];
                    }
                    let mut out = vec![0.0; len];
                    lower_envelope(buf, &mut out, sites, bounds);
                    out
                },
            )
            .collect();
        for (start, line) in starts.iter().zip(lines) {
            for (i, d) in line.into_iter().enumerate() {
                dist[start + i * stride] = d;
            }
        }
    }
    dist
}

/// Signed center-to-center distance: positive inside the mask (distance to
/// the nearest outside voxel), negative outside (distance to the nearest
/// inside voxel). Returns all zeros flagged degenerate when the mask is
/// all-inside or all-outside.
pub fn signed_distance_from_mask(dims: [usize; 3], inside: &[bool]) -> (Vec<f64>, bool) {
    let n_inside = inside.iter().filter(|&&b| b).count();
    if n_inside == 0 || n_inside == inside.len() {
        return (vec![0.0; inside.len()], true);
    }
    let outside: Vec<bool> = inside.iter().map(|&b| !b).collect();
    let to_outside = squared_edt(dims, &outside);
    let to_inside = squared_edt(dims, inside);
    let sdt = inside
        .iter()
        .enumerate()
        .map(|(v, &b)| {
            if b {
                to_outside[v].sqrt()
            } else {
                -to_inside[v].sqrt()
            }
        })
        .collect();
    (sdt, false)
}

/// SDT of a single-channel mask grid; voxels with value >= 0.5 are inside.
pub fn signed_distance_transform(mask: &VoxelGrid) -> Result<SignedDistance> {
    if mask.channels() != 1 {
        return Err(crate::error::UmcfError::mismatch(format!(
            "mask must have 1 channel, got {}",
            mask.channels()
        )));
    }
    let inside: Vec<bool> = mask.data().iter().map(|&v| v >= 0.5).collect();
    let (sdt, degenerate) = signed_distance_from_mask(mask.dims(), &inside);
    Ok(SignedDistance {
        grid: VoxelGrid::scalar(mask.dims(), sdt)?,
        degenerate,
    })
}

pub fn mean_sdt(sdt: &VoxelGrid) -> f64 {
    pairwise_mean(sdt.data())
}
