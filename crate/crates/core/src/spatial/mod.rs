//! Probability-weighted spatial statistics and the spatial token set.
//!
//! Coordinates are integer voxel indices. Masks are obtained by hardening a
//! class probability map at a threshold (default 0.5, inclusive).

mod edt;
mod eigen;

pub use edt::{mean_sdt, signed_distance_from_mask, signed_distance_transform, squared_edt, SignedDistance};
pub use eigen::{sym3_eigenvalues, SymMat3};

use serde::{Deserialize, Serialize};

use crate::error::{Result, UmcfError};
use crate::field::{l2_normalize, pairwise_mean, pairwise_sum, voxel_coords, UnitVector, VoxelGrid};
use crate::tokens::{project_embeddings, Modality, TokenSet};

/// Mass below which a class map is treated as empty.
pub const MASS_EPS: f64 = 1e-8;

pub const DEFAULT_HARD_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TumorClass {
    #[serde(rename = "ET")]
    Et,
    #[serde(rename = "TC")]
    Tc,
    #[serde(rename = "WT")]
    Wt,
}

impl TumorClass {
    /// Channel order of [`ProbMaps`]: innermost region first.
    pub const ALL: [TumorClass; 3] = [TumorClass::Et, TumorClass::Tc, TumorClass::Wt];

    pub fn channel(self) -> usize {
        match self {
            TumorClass::Et => 0,
            TumorClass::Tc => 1,
            TumorClass::Wt => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TumorClass::Et => "ET",
            TumorClass::Tc => "TC",
            TumorClass::Wt => "WT",
        }
    }
}

/// Per-class probability volumes stored as a 3-channel grid (ET, TC, WT).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMaps {
    grid: VoxelGrid,
}

impl ProbMaps {
    pub fn new(grid: VoxelGrid) -> Result<Self> {
        if grid.channels() != 3 {
            return Err(UmcfError::mismatch(format!(
                "probability maps need 3 channels (ET, TC, WT), got {}",
                grid.channels()
            )));
        }
        if let Some(i) = grid.data().iter().position(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(UmcfError::invalid(format!(
                "probability {} at flat index {i} outside [0, 1]",
                grid.data()[i]
            )));
        }
        Ok(Self { grid })
    }

    pub fn from_planes(dims: [usize; 3], et: &[f64], tc: &[f64], wt: &[f64]) -> Result<Self> {
        let mut data = Vec::with_capacity(et.len() * 3);
        data.extend_from_slice(et);
        data.extend_from_slice(tc);
        data.extend_from_slice(wt);
        Self::new(VoxelGrid::new(dims, 3, data)?)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims()
    }

    pub fn voxel_count(&self) -> usize {
        self.grid.voxel_count()
    }

    pub fn class(&self, c: TumorClass) -> &[f64] {
        self.grid.channel(c.channel())
    }

    pub fn grid(&self) -> &VoxelGrid {
        &self.grid
    }

    pub fn into_grid(self) -> VoxelGrid {
        self.grid
    }

    pub fn hardened(&self, c: TumorClass, threshold: f64) -> Vec<bool> {
        self.class(c).iter().map(|&p| p >= threshold).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Centroid {
    pub mu: [f64; 3],
    pub mass: f64,
    pub degenerate: bool,
}

pub fn volume_center(dims: [usize; 3]) -> [f64; 3] {
    dims.map(|d| (d as f64 - 1.0) / 2.0)
}

pub fn weighted_centroid(p: &ProbMaps, c: TumorClass) -> Centroid {
    let dims = p.dims();
    let plane = p.class(c);
    let mass = pairwise_sum(plane);
    if mass < MASS_EPS {
        return Centroid {
            mu: volume_center(dims),
            mass,
            degenerate: true,
        };
    }
    let mut weighted = vec![0.0; plane.len()];
    let mu = [0, 1, 2].map(|axis| {
        for (v, w) in weighted.iter_mut().enumerate() {
            *w = plane[v] * voxel_coords(dims, v)[axis] as f64;
        }
        pairwise_sum(&weighted) / mass
    });
    Centroid {
        mu,
        mass,
        degenerate: false,
    }
}

/// Probability-weighted covariance about `centroid`; zero when degenerate.
pub fn weighted_covariance(p: &ProbMaps, c: TumorClass, centroid: &Centroid) -> SymMat3 {
    if centroid.degenerate || centroid.mass < MASS_EPS {
        return SymMat3::ZERO;
    }
    let dims = p.dims();
    let plane = p.class(c);
    let offsets: Vec<[f64; 3]> = (0..plane.len())
        .map(|v| {
            let x = voxel_coords(dims, v);
            [0, 1, 2].map(|a| x[a] as f64 - centroid.mu[a])
        })
        .collect();
    let mut m = [[0.0; 3]; 3];
    let mut terms = vec![0.0; plane.len()];
    for i in 0..3 {
        for j in i..3 {
            for (v, t) in terms.iter_mut().enumerate() {
                *t = plane[v] * offsets[v][i] * offsets[v][j];
            }
            let s = pairwise_sum(&terms) / centroid.mass;
            m[i][j] = s;
            m[j][i] = s;
        }
    }
    SymMat3(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpatialStats {
    pub centroid: [f64; 3],
    pub mass: f64,
    pub covariance: [[f64; 3]; 3],
    pub eigenvalues: [f64; 3],
    pub mean_sdt: f64,
    pub degenerate: bool,
}

pub fn spatial_stats(p: &ProbMaps, c: TumorClass, threshold: f64) -> Result<SpatialStats> {
    let centroid = weighted_centroid(p, c);
    if centroid.degenerate {
        return Ok(SpatialStats {
            centroid: centroid.mu,
            mass: centroid.mass,
            covariance: [[0.0; 3]; 3],
            eigenvalues: [0.0; 3],
            mean_sdt: 0.0,
            degenerate: true,
        });
    }
    let cov = weighted_covariance(p, c, &centroid);
    let eigenvalues = sym3_eigenvalues(&cov)?;
    let (sdt, _) = signed_distance_from_mask(p.dims(), &p.hardened(c, threshold));
    Ok(SpatialStats {
        centroid: centroid.mu,
        mass: centroid.mass,
        covariance: cov.0,
        eigenvalues,
        mean_sdt: pairwise_mean(&sdt),
        degenerate: false,
    })
}

/// `l2_normalize([mu, lambda_1..3, mean_sdt])`, a 7-vector.
pub fn hier_token(stats: &SpatialStats) -> Result<UnitVector> {
    let [mx, my, mz] = stats.centroid;
    let [l1, l2, l3] = stats.eigenvalues;
    l2_normalize(&[mx, my, mz, l1, l2, l3, stats.mean_sdt])
}

/// Per-voxel mean absolute difference to the existing 6-neighbors (0 for a
/// voxel with no neighbors).
pub fn local_abs_diff(dims: [usize; 3], values: &[f64]) -> Vec<f64> {
    let strides = [1, dims[0], dims[0] * dims[1]];
    (0..values.len())
        .map(|v| {
            let x = voxel_coords(dims, v);
            let mut sum = 0.0;
            let mut count = 0usize;
            for axis in 0..3 {
                if x[axis] > 0 {
                    sum += (values[v] - values[v - strides[axis]]).abs();
                    count += 1;
                }
                if x[axis] + 1 < dims[axis] {
                    sum += (values[v] - values[v + strides[axis]]).abs();
                    count += 1;
                }
            }
            if count == 0 {
                0.0
            } else {
                sum / count as f64
            }
        })
        .collect()
}

/// Central-difference gradient magnitude, one-sided at the volume edges.
pub fn gradient_magnitude(dims: [usize; 3], values: &[f64]) -> Vec<f64> {
    let strides = [1, dims[0], dims[0] * dims[1]];
    (0..values.len())
        .map(|v| {
            let x = voxel_coords(dims, v);
            let mut sq = 0.0;
            for axis in 0..3 {
                let n = dims[axis];
                let s = strides[axis];
                let g = if n < 2 {
                    0.0
                } else if x[axis] == 0 {
                    values[v + s] - values[v]
                } else if x[axis] == n - 1 {
                    values[v] - values[v - s]
                } else {
                    (values[v + s] - values[v - s]) / 2.0
                };
                sq += g * g;
            }
            sq.sqrt()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TopoFeatures {
    pub smoothness: f64,
    pub boundary_gradient: f64,
    pub surface_to_volume: f64,
    /// Hardened mask is empty, so `surface_to_volume` is undefined (0).
    pub degenerate: bool,
}

pub fn topo_features(p: &ProbMaps, c: TumorClass, threshold: f64) -> TopoFeatures {
    let dims = p.dims();
    let plane = p.class(c);
    let smoothness = pairwise_mean(&local_abs_diff(dims, plane));

    let mask = p.hardened(c, threshold);
    let (sdt, _) = signed_distance_from_mask(dims, &mask);
    let grad = gradient_magnitude(dims, plane);
    let band: Vec<f64> = grad
        .iter()
        .zip(&sdt)
        .filter(|(_, s)| s.abs() <= 2.0)
        .map(|(g, _)| *g)
        .collect();
    let boundary_gradient = pairwise_mean(&band);

    let strides = [1, dims[0], dims[0] * dims[1]];
    let mut volume = 0usize;
    let mut surface = 0usize;
    for (v, &inside) in mask.iter().enumerate() {
        if !inside {
            continue;
        }
        volume += 1;
        let x = voxel_coords(dims, v);
        let exposed = (0..3).any(|a| {
            (x[a] > 0 && !mask[v - strides[a]]) || (x[a] + 1 < dims[a] && !mask[v + strides[a]])
        });
        if exposed {
            surface += 1;
        }
    }
    let (surface_to_volume, degenerate) = if volume == 0 {
        (0.0, true)
    } else {
        (surface as f64 / volume as f64, false)
    };
    TopoFeatures {
        smoothness,
        boundary_gradient,
        surface_to_volume,
        degenerate,
    }
}

/// Six tokens in the order ET-hier, TC-hier, WT-hier, ET-topo, TC-topo,
/// WT-topo, embedded into `dim` channels with a fixed seeded projection.
/// Classes with zero mass contribute zero-fallback tokens.
pub fn build_spatial_tokens(p: &ProbMaps, dim: usize, seed: u64, threshold: f64) -> Result<TokenSet> {
    let mut hier = Vec::with_capacity(3);
    let mut topo = Vec::with_capacity(3);
    for c in TumorClass::ALL {
        let stats = spatial_stats(p, c, threshold)?;
        if stats.degenerate {
            hier.push(vec![0.0; 7]);
            topo.push(vec![0.0; 3]);
            continue;
        }
        hier.push(hier_token(&stats)?.into_values());
        let t = topo_features(p, c, threshold);
        topo.push(
            l2_normalize(&[t.smoothness, t.boundary_gradient, t.surface_to_volume])?.into_values(),
        );
    }
    let mut vectors = project_embeddings(&hier, dim, seed)?.vectors;
    vectors.extend(project_embeddings(&topo, dim, seed)?.vectors);
    let labels = ["hier", "topo"]
        .iter()
        .flat_map(|kind| TumorClass::ALL.iter().map(move |c| format!("{}-{kind}", c.name())))
        .collect();
    TokenSet::from_vectors(Modality::Spatial, dim, &vectors, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn maps_from(dims: [usize; 3], f: impl Fn([usize; 3]) -> [f64; 3]) -> ProbMaps {
        ProbMaps::new(VoxelGrid::from_fn(dims, 3, |p, c| f(p)[c]).unwrap()).unwrap()
    }

    #[test]
    fn rejects_out_of_range_probabilities() {
        let g = VoxelGrid::new([1, 1, 1], 3, vec![0.2, 1.2, 0.5]).unwrap();
        assert!(ProbMaps::new(g).is_err());
        let g = VoxelGrid::new([1, 1, 1], 2, vec![0.2, 0.5]).unwrap();
        assert!(ProbMaps::new(g).is_err());
    }

    #[test]
    fn centroid_examples() {
        let p = maps_from([5, 5, 5], |_| [1.0; 3]);
        let c = weighted_centroid(&p, TumorClass::Wt);
        assert_eq!(c.mu, [2.0, 2.0, 2.0]);

        let p = maps_from([4, 4, 4], |x| if x == [1, 2, 3] { [1.0; 3] } else { [0.0; 3] });
        let c = weighted_centroid(&p, TumorClass::Et);
        assert_eq!(c.mu, [1.0, 2.0, 3.0]);
        assert_eq!(weighted_covariance(&p, TumorClass::Et, &c), SymMat3::ZERO);

        let p = maps_from([4, 6, 2], |_| [0.0; 3]);
        let c = weighted_centroid(&p, TumorClass::Tc);
        assert!(c.degenerate);
        assert_eq!(c.mu, [1.5, 2.5, 0.5]);
        assert_eq!(weighted_covariance(&p, TumorClass::Tc, &c), SymMat3::ZERO);
    }

    #[test]
    fn covariance_of_two_masses() {
        let p = maps_from([3, 1, 1], |x| if x[0] != 1 { [1.0; 3] } else { [0.0; 3] });
        let c = weighted_centroid(&p, TumorClass::Et);
        assert_eq!(c.mu, [1.0, 0.0, 0.0]);
        let cov = weighted_covariance(&p, TumorClass::Et, &c);
        assert_eq!(cov.0, [[1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]);
    }

    #[test]
    fn degenerate_stats_use_volume_center() {
        let p = maps_from([3, 3, 3], |_| [0.0; 3]);
        let s = spatial_stats(&p, TumorClass::Et, 0.5).unwrap();
        assert!(s.degenerate);
        assert_eq!(s.centroid, [1.0, 1.0, 1.0]);
        assert_eq!(s.eigenvalues, [0.0; 3]);
        assert_eq!(s.mean_sdt, 0.0);
    }

    #[test]
    fn hier_token_examples() {
        let mut s = SpatialStats {
            centroid: [0.0; 3],
            mass: 1.0,
            covariance: [[0.0; 3]; 3],
            eigenvalues: [0.0; 3],
            mean_sdt: 1.0,
            degenerate: false,
        };
        assert_eq!(hier_token(&s).unwrap().values(), &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        s.centroid = [3.0, 0.0, 0.0];
        s.eigenvalues = [4.0, 0.0, 0.0];
        s.mean_sdt = 0.0;
        let t = hier_token(&s).unwrap();
        assert!((t.values()[0] - 0.6).abs() < 1e-15);
        assert!((t.values()[3] - 0.8).abs() < 1e-15);
        s.centroid = [0.0; 3];
        s.eigenvalues = [0.0; 3];
        assert!(hier_token(&s).unwrap().is_degenerate());
    }

    #[test]
    fn topo_constant_and_full_mask() {
        let p = maps_from([4, 4, 4], |_| [0.7; 3]);
        let t = topo_features(&p, TumorClass::Tc, 0.5);
        assert_eq!(t.smoothness, 0.0);
        assert_eq!(t.boundary_gradient, 0.0);
        assert_eq!(t.surface_to_volume, 0.0);
        assert!(!t.degenerate);

        let p = maps_from([4, 4, 4], |_| [0.2; 3]);
        let t = topo_features(&p, TumorClass::Tc, 0.5);
        assert!(t.degenerate);
        assert_eq!(t.surface_to_volume, 0.0);
    }

    #[test]
    fn surface_to_volume_of_a_cube() {
        // 3x3x3 cube in a 5^3 volume: 26 of 27 voxels touch the outside
        let p = maps_from([5, 5, 5], |x| {
            if x.iter().all(|&v| (1..=3).contains(&v)) {
                [1.0; 3]
            } else {
                [0.0; 3]
            }
        });
        let t = topo_features(&p, TumorClass::Wt, 0.5);
        assert!((t.surface_to_volume - 26.0 / 27.0).abs() < 1e-15);
        assert!(t.boundary_gradient > 0.0);
    }

    #[test]
    fn local_abs_diff_checkerboard() {
        let dims = [3, 3, 3];
        let v: Vec<f64> = (0..27)
            .map(|i| {
                let x = voxel_coords(dims, i);
                ((x[0] + x[1] + x[2]) % 2) as f64
            })
            .collect();
        assert!(local_abs_diff(dims, &v).iter().all(|&d| d == 1.0));
        assert_eq!(local_abs_diff([1, 1, 1], &[0.3]), vec![0.0]);
    }

    #[test]
    fn spatial_tokens_shape() {
        let p = maps_from([6, 6, 6], |x| {
            let r2 = x.iter().map(|&v| (v as f64 - 2.5).powi(2)).sum::<f64>();
            [
                if r2 < 2.0 { 1.0 } else { 0.0 },
                if r2 < 4.0 { 1.0 } else { 0.0 },
                if r2 < 7.0 { 1.0 } else { 0.0 },
            ]
        });
        let set = build_spatial_tokens(&p, 16, 1, 0.5).unwrap();
        assert_eq!(set.len(), 6);
        assert_eq!(set.labels()[0], "ET-hier");
        assert_eq!(set.labels()[5], "WT-topo");
        for t in set.tokens() {
            assert!(!t.is_degenerate());
            let n: f64 = t.values().iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
        // small target dim goes through the orthonormal projection
        let set = build_spatial_tokens(&p, 2, 1, 0.5).unwrap();
        assert_eq!(set.dim(), 2);
    }

    #[test]
    fn spatial_tokens_all_degenerate() {
        let p = maps_from([4, 4, 4], |_| [0.0; 3]);
        let set = build_spatial_tokens(&p, 8, 1, 0.5).unwrap();
        assert_eq!(set.len(), 6);
        assert!(set.tokens().iter().all(|t| t.is_degenerate()));
        assert!(set.prototype().is_degenerate());
    }
}
