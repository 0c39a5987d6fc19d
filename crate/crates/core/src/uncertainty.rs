//! Per-voxel uncertainty fields in [0, 1] that drive the gated fusion.

use std::f64::consts::LN_2;

use crate::error::{Result, UmcfError};
use crate::field::VoxelGrid;
use crate::spatial::{local_abs_diff, ProbMaps, TumorClass};

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyFields {
    pub u_v: VoxelGrid,
    pub u_t: VoxelGrid,
    pub u_s: VoxelGrid,
    pub u_ts: VoxelGrid,
}

impl UncertaintyFields {
    pub fn compute(p: &ProbMaps, phi_t: &VoxelGrid) -> Result<Self> {
        let u_t = u_text(phi_t)?;
        let u_s = u_spatial(p)?;
        let u_ts = u_joint(&u_t, &u_s)?;
        Ok(Self {
            u_v: u_visual(p)?,
            u_t,
            u_s,
            u_ts,
        })
    }

    /// Fields in stream order V, T, S, TS.
    pub fn as_array(&self) -> [&VoxelGrid; 4] {
        [&self.u_v, &self.u_t, &self.u_s, &self.u_ts]
    }
}

/// Binary entropy in nats with `0 log 0 = 0`.
fn binary_entropy(p: f64) -> f64 {
    let term = |x: f64| if x > 0.0 { -x * x.ln() } else { 0.0 };
    term(p) + term(1.0 - p)
}

/// Mean per-class binary entropy, scaled by `1 / ln 2`.
pub fn u_visual(p: &ProbMaps) -> Result<VoxelGrid> {
    let [et, tc, wt] = TumorClass::ALL.map(|c| p.class(c));
    let data = (0..p.voxel_count())
        .map(|v| {
            let h = binary_entropy(et[v]) + binary_entropy(tc[v]) + binary_entropy(wt[v]);
            (h / (3.0 * LN_2)).clamp(0.0, 1.0)
        })
        .collect();
    VoxelGrid::scalar(p.dims(), data)
}

pub fn u_text(phi_t: &VoxelGrid) -> Result<VoxelGrid> {
    check_scalar(phi_t, "phi_T")?;
    VoxelGrid::scalar(
        phi_t.dims(),
        phi_t.data().iter().map(|&f| (1.0 - f).clamp(0.0, 1.0)).collect(),
    )
}

/// Local total variation of the class maps, averaged over classes.
pub fn u_spatial(p: &ProbMaps) -> Result<VoxelGrid> {
    let tv = mean_local_tv(p);
    VoxelGrid::scalar(p.dims(), tv.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
}

pub(crate) fn mean_local_tv(p: &ProbMaps) -> Vec<f64> {
    let per_class = TumorClass::ALL.map(|c| local_abs_diff(p.dims(), p.class(c)));
    (0..p.voxel_count())
        .map(|v| (per_class[0][v] + per_class[1][v] + per_class[2][v]) / 3.0)
        .collect()
}

pub fn u_joint(u_t: &VoxelGrid, u_s: &VoxelGrid) -> Result<VoxelGrid> {
    check_scalar(u_t, "u_T")?;
    check_scalar(u_s, "u_S")?;
    if u_t.dims() != u_s.dims() {
        return Err(UmcfError::mismatch(format!(
            "u_T dims {:?} vs u_S dims {:?}",
            u_t.dims(),
            u_s.dims()
        )));
    }
    VoxelGrid::scalar(
        u_t.dims(),
        u_t.data().iter().zip(u_s.data()).map(|(a, b)| (a + b) / 2.0).collect(),
    )
}

fn check_scalar(g: &VoxelGrid, name: &str) -> Result<()> {
    if g.channels() != 1 {
        return Err(UmcfError::mismatch(format!(
            "{name} must be a scalar grid, got {} channels",
            g.channels()
        )));
    }
    Ok(())
}
