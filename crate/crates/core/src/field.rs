//! Voxel grids, unit vectors and the normalized-similarity kernels shared by
//! every other module.
//!
//! Grids are stored with `x` fastest, then `y`, then `z`, then channel, so a
//! single channel is one contiguous plane. All reductions over voxels go
//! through [`pairwise_sum`] in lexicographic order, which keeps results
//! independent of how work is split across threads.

use crate::error::{Result, UmcfError};

/// Norm below which a vector is treated as zero by [`l2_normalize`].
pub const NORM_EPS: f64 = 1e-12;

const PAIRWISE_BLOCK: usize = 8;

/// Deterministic tree summation in index order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= PAIRWISE_BLOCK {
        return values.iter().fold(0.0, |acc, v| acc + v);
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Arithmetic mean through [`pairwise_sum`]; zero for an empty slice.
pub fn pairwise_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        pairwise_sum(values) / values.len() as f64
    }
}

/// Dense 3D scalar field with `channels` planes.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    dims: [usize; 3],
    channels: usize,
    data: Vec<f64>,
}

impl VoxelGrid {
    pub fn new(dims: [usize; 3], channels: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(dims, channels)?;
        let expected = dims[0] * dims[1] * dims[2] * channels;
        if data.len() != expected {
            return Err(UmcfError::mismatch(format!(
                "grid {}x{}x{}x{} needs {} values, got {}",
                dims[0],
                dims[1],
                dims[2],
                channels,
                expected,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(UmcfError::invalid(format!(
                "non-finite value at flat index {i}"
            )));
        }
        Ok(Self {
            dims,
            channels,
            data,
        })
    }

    /// Single-channel grid.
    pub fn scalar(dims: [usize; 3], data: Vec<f64>) -> Result<Self> {
        Self::new(dims, 1, data)
    }

    pub fn zeros(dims: [usize; 3], channels: usize) -> Result<Self> {
        check_dims(dims, channels)?;
        Ok(Self {
            dims,
            channels,
            data: vec![0.0; dims[0] * dims[1] * dims[2] * channels],
        })
    }

    pub fn from_fn(
        dims: [usize; 3],
        channels: usize,
        mut f: impl FnMut([usize; 3], usize) -> f64,
    ) -> Result<Self> {
        check_dims(dims, channels)?;
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2] * channels);
        for c in 0..channels {
            for z in 0..dims[2] {
                for y in 0..dims[1] {
                    for x in 0..dims[0] {
                        data.push(f([x, y, z], c));
                    }
                }
            }
        }
        Self::new(dims, channels, data)
    }

    /// Builds a grid from voxel-major rows (`rows[v * channels + c]`).
    pub fn from_rows(dims: [usize; 3], channels: usize, rows: &[f64]) -> Result<Self> {
        check_dims(dims, channels)?;
        let n = dims[0] * dims[1] * dims[2];
        if rows.len() != n * channels {
            return Err(UmcfError::mismatch(format!(
                "expected {} row values, got {}",
                n * channels,
                rows.len()
            )));
        }
        let mut data = vec![0.0; rows.len()];
        for v in 0..n {
            for c in 0..channels {
                data[c * n + v] = rows[v * channels + c];
            }
        }
        Self::new(dims, channels, data)
    }

    /// Voxel-major copy of the data: one contiguous `channels`-vector per voxel.
    pub fn to_rows(&self) -> Vec<f64> {
        let n = self.voxel_count();
        let mut rows = vec![0.0; self.data.len()];
        for c in 0..self.channels {
            let plane = self.channel(c);
            for v in 0..n {
                rows[v * self.channels + c] = plane[v];
            }
        }
        rows
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Linear voxel index of `(x, y, z)`.
    pub fn voxel_index(&self, p: [usize; 3]) -> usize {
        voxel_index(self.dims, p)
    }

    pub fn get(&self, p: [usize; 3], c: usize) -> f64 {
        self.data[c * self.voxel_count() + self.voxel_index(p)]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.voxel_count();
        &self.data[c * n..(c + 1) * n]
    }

    /// Channel vector at linear voxel index `v`.
    pub fn voxel(&self, v: usize) -> Vec<f64> {
        let n = self.voxel_count();
        (0..self.channels).map(|c| self.data[c * n + v]).collect()
    }
}

fn check_dims(dims: [usize; 3], channels: usize) -> Result<()> {
    if dims.iter().any(|&d| d == 0) || channels == 0 {
        return Err(UmcfError::invalid(format!(
            "grid dims must be positive, got {dims:?} with {channels} channels"
        )));
    }
    dims.iter()
        .chain(std::iter::once(&channels))
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| UmcfError::invalid("grid size overflows usize"))?;
    Ok(())
}

pub fn voxel_index(dims: [usize; 3], p: [usize; 3]) -> usize {
    p[0] + dims[0] * (p[1] + dims[1] * p[2])
}

pub fn voxel_coords(dims: [usize; 3], v: usize) -> [usize; 3] {
    let x = v % dims[0];
    let rest = v / dims[0];
    [x, rest % dims[1], rest / dims[1]]
}

/// Unit-norm vector, or the all-zero fallback with `degenerate` set.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector {
    values: Vec<f64>,
    degenerate: bool,
}

impl UnitVector {
    pub fn zero(dim: usize) -> Self {
        Self {
            values: vec![0.0; dim],
            degenerate: true,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Strictly positive softmax / logistic temperature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(tau: f64) -> Result<Self> {
        if tau.is_finite() && tau > 0.0 {
            Ok(Self(tau))
        } else {
            Err(UmcfError::config(format!("tau must be > 0, got {tau}")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

pub fn l2_normalize(v: &[f64]) -> Result<UnitVector> {
    if v.is_empty() {
        return Err(UmcfError::invalid("cannot normalize an empty vector"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(UmcfError::invalid("cannot normalize a non-finite vector"));
    }
    let norm = dot(v, v).sqrt();
    if norm < NORM_EPS {
        return Ok(UnitVector::zero(v.len()));
    }
    Ok(UnitVector {
        values: v.iter().map(|x| x / norm).collect(),
        degenerate: false,
    })
}

pub fn cosine_sim(a: &UnitVector, b: &UnitVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(UmcfError::mismatch(format!(
            "cosine_sim on dims {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(dot(a.values(), b.values()).clamp(-1.0, 1.0))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

pub fn tempered_softmax(scores: &[f64], tau: Temperature) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(UmcfError::invalid("softmax over an empty score vector"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(UmcfError::invalid("softmax over non-finite scores"));
    }
    let mut out = vec![0.0; scores.len()];
    softmax_into(scores, tau.get(), &mut out);
    Ok(out)
}

/// Max-subtracted softmax of `scores / tau` written into `out`.
pub(crate) fn softmax_into(scores: &[f64], tau: f64, out: &mut [f64]) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for (o, s) in out.iter_mut().zip(scores) {
        *o = ((s - max) / tau).exp();
    }
    let total = pairwise_sum(out);
    for o in out.iter_mut() {
        *o /= total;
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Axis-aligned box of voxels `origin .. origin + extent`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockRegion {
    pub origin: [usize; 3],
    pub extent: [usize; 3],
}

impl BlockRegion {
    pub fn len(&self) -> usize {
        self.extent.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Linear voxel indices inside the block, lexicographic (`x` fastest).
    pub fn voxels(&self, dims: [usize; 3]) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.len());
        for z in self.origin[2]..self.origin[2] + self.extent[2] {
            for y in self.origin[1]..self.origin[1] + self.extent[1] {
                for x in self.origin[0]..self.origin[0] + self.extent[0] {
                    out.push(voxel_index(dims, [x, y, z]));
                }
            }
        }
        out
    }

    /// Mean of a per-voxel scalar field over the block.
    pub fn mean_of(&self, dims: [usize; 3], values: &[f64]) -> f64 {
        let gathered: Vec<f64> = self.voxels(dims).into_iter().map(|v| values[v]).collect();
        pairwise_mean(&gathered)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PooledBlock {
    pub index: [usize; 3],
    pub region: BlockRegion,
    pub mean: Vec<f64>,
}

/// Non-overlapping cubic blocks of side `block` in lexicographic block order;
/// blocks at the upper edge of an axis are truncated, never padded.
pub fn block_regions(dims: [usize; 3], block: usize) -> Result<Vec<([usize; 3], BlockRegion)>> {
    if block == 0 {
        return Err(UmcfError::invalid("block size must be >= 1"));
    }
    let counts = dims.map(|d| d.div_ceil(block));
    let mut out = Vec::with_capacity(counts.iter().product());
    for bz in 0..counts[2] {
        for by in 0..counts[1] {
            for bx in 0..counts[0] {
                let index = [bx, by, bz];
                let origin = index.map(|b| b * block);
                let extent = [0, 1, 2].map(|a| block.min(dims[a] - origin[a]));
                out.push((index, BlockRegion { origin, extent }));
            }
        }
    }
    Ok(out)
}

pub fn block_pool(grid: &VoxelGrid, block: usize) -> Result<Vec<PooledBlock>> {
    let dims = grid.dims();
    block_regions(dims, block)?
        .into_iter()
        .map(|(index, region)| {
            let voxels = region.voxels(dims);
            let mean = (0..grid.channels())
                .map(|c| {
                    let plane = grid.channel(c);
                    let vals: Vec<f64> = voxels.iter().map(|&v| plane[v]).collect();
                    pairwise_mean(&vals)
                })
                .collect();
            Ok(PooledBlock {
                index,
                region,
                mean,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn normalize_examples() {
        let u = l2_normalize(&[3.0, 4.0, 0.0]).unwrap();
        assert!(close(u.values()[0], 0.6, 1e-15));
        assert!(close(u.values()[1], 0.8, 1e-15));
        assert!(!u.is_degenerate());

        let u = l2_normalize(&[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(u.values(), &[1.0, 0.0, 0.0]);

        let u = l2_normalize(&[1e-15, 0.0, 0.0]).unwrap();
        assert!(u.is_degenerate());
        assert_eq!(u.values(), &[0.0, 0.0, 0.0]);

        assert!(l2_normalize(&[f64::NAN, 1.0]).is_err());
        assert!(l2_normalize(&[]).is_err());
    }

    #[test]
    fn cosine_examples() {
        let a = l2_normalize(&[0.3, -0.2, 0.9]).unwrap();
        assert!(close(cosine_sim(&a, &a).unwrap(), 1.0, 1e-15));
        let x = l2_normalize(&[1.0, 0.0]).unwrap();
        let y = l2_normalize(&[0.0, 1.0]).unwrap();
        let nx = l2_normalize(&[-1.0, 0.0]).unwrap();
        assert_eq!(cosine_sim(&x, &y).unwrap(), 0.0);
        assert_eq!(cosine_sim(&x, &nx).unwrap(), -1.0);
        assert!(cosine_sim(&x, &a).is_err());
        // degenerate partner gives 0
        assert_eq!(cosine_sim(&x, &UnitVector::zero(2)).unwrap(), 0.0);
    }

    #[test]
    fn softmax_examples() {
        let tau = Temperature::new(0.7).unwrap();
        let w = tempered_softmax(&[2.0, 2.0, 2.0], tau).unwrap();
        for v in w {
            assert!(close(v, 1.0 / 3.0, 1e-15));
        }
        let w = tempered_softmax(&[1.0, 0.0], Temperature::new(1.0).unwrap()).unwrap();
        let e = std::f64::consts::E;
        assert!(close(w[0], e / (e + 1.0), 1e-15));
        assert!(close(w[1], 1.0 / (e + 1.0), 1e-15));
        assert!(close(w[0], 0.7311, 1e-4));

        let w = tempered_softmax(&[1.0, 0.0], Temperature::new(1e-3).unwrap()).unwrap();
        assert!(w[0] > 1.0 - 1e-12);

        assert!(tempered_softmax(&[], tau).is_err());
        assert!(Temperature::new(0.0).is_err());
        assert!(Temperature::new(-1.0).is_err());
    }

    #[test]
    fn softmax_does_not_overflow() {
        let w = tempered_softmax(&[1e4, 0.0], Temperature::new(1e-3).unwrap()).unwrap();
        assert_eq!(w, vec![1.0, 0.0]);
    }

    #[test]
    fn logistic_examples() {
        assert_eq!(logistic(0.0), 0.5);
        assert!(close(logistic(50.0), 1.0, 1e-9));
        for x in [-30.0, -1.3, 0.2, 4.0, 700.0] {
            assert!(close(logistic(x) + logistic(-x), 1.0, 1e-15));
        }
        assert!(logistic(-800.0) >= 0.0);
    }

    #[test]
    fn block_pool_examples() {
        let g = VoxelGrid::new([2, 2, 2], 1, vec![5.0; 8]).unwrap();
        let b = block_pool(&g, 2).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].mean, vec![5.0]);

        let g = VoxelGrid::new([2, 1, 1], 1, vec![2.0, 4.0]).unwrap();
        let b = block_pool(&g, 2).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].mean, vec![3.0]);

        // block larger than every axis collapses to one block
        let b = block_pool(&g, 10).unwrap();
        assert_eq!(b.len(), 1);
        assert!(block_pool(&g, 0).is_err());
    }

    #[test]
    fn block_pool_truncates_edges() {
        let g = VoxelGrid::from_fn([3, 3, 3], 2, |p, c| (p[0] + 3 * p[1] + 9 * p[2] + 100 * c) as f64)
            .unwrap();
        let blocks = block_pool(&g, 2).unwrap();
        assert_eq!(blocks.len(), 8);
        assert_eq!(blocks[0].region.extent, [2, 2, 2]);
        assert_eq!(blocks[7].region.extent, [1, 1, 1]);
        assert_eq!(blocks[1].index, [1, 0, 0]);
        // last block is the single corner voxel (2,2,2)
        assert_eq!(blocks[7].mean, vec![26.0, 126.0]);
    }

    #[test]
    fn grid_layout_and_rows() {
        let g = VoxelGrid::from_fn([2, 3, 4], 2, |p, c| (p[0] * 1000 + p[1] * 100 + p[2] * 10 + c) as f64)
            .unwrap();
        assert_eq!(g.get([1, 2, 3], 1), 1231.0);
        assert_eq!(g.data()[1], 1000.0);
        assert_eq!(g.data()[2], 100.0);
        let rows = g.to_rows();
        let back = VoxelGrid::from_rows([2, 3, 4], 2, &rows).unwrap();
        assert_eq!(back, g);
        assert_eq!(g.voxel(voxel_index([2, 3, 4], [1, 1, 1])), vec![1110.0, 1111.0]);
        assert_eq!(voxel_coords([2, 3, 4], voxel_index([2, 3, 4], [1, 2, 3])), [1, 2, 3]);
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(VoxelGrid::new([2, 2, 2], 1, vec![0.0; 7]).is_err());
        assert!(VoxelGrid::new([0, 2, 2], 1, vec![]).is_err());
        let mut d = vec![0.0; 8];
        d[3] = f64::INFINITY;
        assert!(VoxelGrid::new([2, 2, 2], 1, d).is_err());
    }

    #[test]
    fn pairwise_sum_matches_naive_on_integers() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 499_500.0);
        assert_eq!(pairwise_mean(&[]), 0.0);
    }
}
