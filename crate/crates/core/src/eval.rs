//! Synthetic nested-ellipsoid phantoms and segmentation metrics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, UmcfError};
use crate::field::{l2_normalize, voxel_coords, VoxelGrid};
use crate::io::{TokenEntry, TokenFile};
use crate::spatial::{ProbMaps, TumorClass};
use crate::tokens::Modality;

/// Phantom parameters; class-indexed arrays are ordered ET, TC, WT.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    /// Ellipsoid centre offsets from the volume centre, in voxels.
    pub center_offsets: [[f64; 3]; 3],
    pub semi_axes: [[f64; 3]; 3],
    pub feature_dim: usize,
    pub anchor_seed: u64,
    /// Std-dev of the Gaussian noise added to class anchors.
    pub feature_noise: f64,
    /// Half-width of the box blur applied to indicator maps.
    pub blur_radius: usize,
    /// Fraction of voxels whose ET and TC probabilities are swapped.
    pub violation_rate: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dims: [32, 32, 32],
            center_offsets: [[0.0; 3]; 3],
            semi_axes: [[4.0, 3.5, 3.5], [7.0, 6.5, 6.0], [11.0, 10.0, 9.0]],
            feature_dim: 16,
            anchor_seed: 7,
            feature_noise: 0.5,
            blur_radius: 1,
            violation_rate: 0.0,
            seed: 42,
        }
    }
}

impl PhantomSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    fn center(&self, c: TumorClass) -> [f64; 3] {
        let off = self.center_offsets[c.channel()];
        [0, 1, 2].map(|a| (self.dims[a] as f64 - 1.0) / 2.0 + off[a])
    }

    fn contains(&self, c: TumorClass, x: [usize; 3]) -> bool {
        let ctr = self.center(c);
        let axes = self.semi_axes[c.channel()];
        (0..3)
            .map(|a| ((x[a] as f64 - ctr[a]) / axes[a]).powi(2))
            .sum::<f64>()
            <= 1.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(UmcfError::invalid("phantom dims must be positive"));
        }
        if self.feature_dim == 0 {
            return Err(UmcfError::invalid("feature_dim must be >= 1"));
        }
        if !(self.feature_noise.is_finite() && self.feature_noise >= 0.0) {
            return Err(UmcfError::invalid("feature_noise must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.violation_rate) {
            return Err(UmcfError::invalid("violation_rate must lie in [0, 1]"));
        }
        let axes = &self.semi_axes;
        if axes.iter().flatten().any(|a| !(a.is_finite() && *a > 0.0))
            || self.center_offsets.iter().flatten().any(|o| !o.is_finite())
        {
            return Err(UmcfError::invalid("semi-axes must be positive and offsets finite"));
        }
        for a in 0..3 {
            if !(axes[0][a] < axes[1][a] && axes[1][a] < axes[2][a]) {
                return Err(UmcfError::invalid(format!(
                    "semi-axes along axis {a} must strictly increase ET < TC < WT"
                )));
            }
        }
        // containment on the voxel lattice, which is all the masks ever see
        let n = self.dims.iter().product::<usize>();
        for v in 0..n {
            let x = voxel_coords(self.dims, v);
            for (inner, outer) in [(TumorClass::Et, TumorClass::Tc), (TumorClass::Tc, TumorClass::Wt)] {
                if self.contains(inner, x) && !self.contains(outer, x) {
                    return Err(UmcfError::invalid(format!(
                        "ellipsoids not nestable: voxel {x:?} is in {} but not {}",
                        inner.name(),
                        outer.name()
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub spec: PhantomSpec,
    /// Binary ground-truth masks as a 3-channel map.
    pub ground_truth: ProbMaps,
    pub features: VoxelGrid,
    pub probmaps: ProbMaps,
    /// Semantic phrases built from the tumor-region anchors.
    pub tokens: TokenFile,
    /// Unit anchors for background, edema, core and enhancing tissue.
    pub anchors: [Vec<f64>; 4],
}

fn gaussian_unit(rng: &mut ChaCha8Rng, d: usize) -> Result<Vec<f64>> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let u = l2_normalize(&v)?;
        if !u.is_degenerate() {
            return Ok(u.into_values());
        }
    }
}

/// Separable box blur with windows clipped at the volume edges.
fn box_blur(dims: [usize; 3], values: &[f64], radius: usize) -> Vec<f64> {
    if radius == 0 {
        return values.to_vec();
    }
    let strides = [1, dims[0], dims[0] * dims[1]];
    let mut cur = values.to_vec();
    for axis in 0..3 {
        let mut next = vec![0.0; cur.len()];
        for (v, out) in next.iter_mut().enumerate() {
            let x = voxel_coords(dims, v)[axis];
            let lo = x.saturating_sub(radius);
            let hi = (x + radius).min(dims[axis] - 1);
            let base = v - x * strides[axis];
            let sum: f64 = (lo..=hi).map(|i| cur[base + i * strides[axis]]).sum();
            *out = sum / (hi - lo + 1) as f64;
        }
        cur = next;
    }
    cur.into_iter().map(|p| p.clamp(0.0, 1.0)).collect()
}

pub fn generate_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let dims = spec.dims;
    let n = dims.iter().product::<usize>();
    let d = spec.feature_dim;

    let mut anchor_rng = ChaCha8Rng::seed_from_u64(spec.anchor_seed);
    let anchors: [Vec<f64>; 4] = [
        gaussian_unit(&mut anchor_rng, d)?,
        gaussian_unit(&mut anchor_rng, d)?,
        gaussian_unit(&mut anchor_rng, d)?,
        gaussian_unit(&mut anchor_rng, d)?,
    ];

    let membership: Vec<[bool; 3]> = (0..n)
        .map(|v| {
            let x = voxel_coords(dims, v);
            TumorClass::ALL.map(|c| spec.contains(c, x))
        })
        .collect();
    let indicator = |c: TumorClass| -> Vec<f64> {
        membership.iter().map(|m| if m[c.channel()] { 1.0 } else { 0.0 }).collect()
    };
    let truth = TumorClass::ALL.map(indicator);
    let ground_truth = ProbMaps::from_planes(dims, &truth[0], &truth[1], &truth[2])?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut rows = Vec::with_capacity(n * d);
    for m in &membership {
        // innermost region wins: 3 = enhancing, 2 = core, 1 = edema, 0 = background
        let label = if m[0] {
            3
        } else if m[1] {
            2
        } else if m[2] {
            1
        } else {
            0
        };
        let noisy: Vec<f64> = anchors[label]
            .iter()
            .map(|a| {
                let g: f64 = StandardNormal.sample(&mut rng);
                a + spec.feature_noise * g
            })
            .collect();
        rows.extend(l2_normalize(&noisy)?.into_values());
    }
    let features = VoxelGrid::from_rows(dims, d, &rows)?;

    let mut planes = truth.map(|t| box_blur(dims, &t, spec.blur_radius));
    let mut swap_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
    for v in 0..n {
        if swap_rng.random_bool(spec.violation_rate) {
            let (et, tc) = planes.split_at_mut(1);
            std::mem::swap(&mut et[0][v], &mut tc[0][v]);
        }
    }
    let probmaps = ProbMaps::from_planes(dims, &planes[0], &planes[1], &planes[2])?;

    let mut word_rng = ChaCha8Rng::seed_from_u64(spec.anchor_seed.wrapping_add(1));
    let phrases = [
        ("enhancing tumor", 3),
        ("necrotic core", 2),
        ("peritumoral edema", 1),
    ];
    let mut entries = Vec::with_capacity(phrases.len());
    for (label, anchor) in phrases {
        let words = (0..2)
            .map(|_| {
                anchors[anchor]
                    .iter()
                    .map(|a| {
                        let g: f64 = StandardNormal.sample(&mut word_rng);
                        a + 0.1 * g
                    })
                    .collect()
            })
            .collect();
        entries.push(TokenEntry {
            label: label.to_string(),
            values: None,
            words: Some(words),
        });
    }
    let tokens = TokenFile {
        dim: d,
        modality: Modality::Semantic,
        tokens: entries,
    };

    Ok(Phantom {
        spec: spec.clone(),
        ground_truth,
        features,
        probmaps,
        tokens,
        anchors,
    })
}

/// `2|a and b| / (|a| + |b|)`, defined as 1 when both masks are empty.
pub fn dice(a: &[bool], b: &[bool]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(UmcfError::mismatch(format!(
            "dice on masks of {} and {} voxels",
            a.len(),
            b.len()
        )));
    }
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        na += x as usize;
        nb += y as usize;
        inter += (x && y) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

/// Fraction of voxels whose hardened labels break ET <= TC or TC <= WT.
pub fn hierarchy_violation_rate(p: &ProbMaps, threshold: f64) -> f64 {
    let [et, tc, wt] = TumorClass::ALL.map(|c| p.hardened(c, threshold));
    let bad = (0..p.voxel_count())
        .filter(|&v| (et[v] && !tc[v]) || (tc[v] && !wt[v]))
        .count();
    bad as f64 / p.voxel_count() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> PhantomSpec {
        PhantomSpec {
            dims: [16, 16, 16],
            semi_axes: [[2.0, 2.0, 2.0], [4.0, 4.0, 3.5], [6.5, 6.0, 6.0]],
            ..PhantomSpec::default()
        }
    }

    #[test]
    fn dice_examples() {
        let a = vec![true, true, false, false];
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        let b = vec![false, false, true, true];
        assert_eq!(dice(&a, &b).unwrap(), 0.0);
        assert_eq!(dice(&[false; 3], &[false; 3]).unwrap(), 1.0);
        let mut x = vec![false; 200];
        let mut y = vec![false; 200];
        x[..100].iter_mut().for_each(|v| *v = true);
        y[50..150].iter_mut().for_each(|v| *v = true);
        assert_eq!(dice(&x, &y).unwrap(), 0.5);
        assert!(dice(&x, &y[..10]).is_err());
    }

    #[test]
    fn violation_rate_examples() {
        let nested = ProbMaps::from_planes([4, 1, 1], &[0.0, 0.0, 1.0, 0.0], &[0.0, 1.0, 1.0, 0.0], &[1.0, 1.0, 1.0, 0.0])
            .unwrap();
        assert_eq!(hierarchy_violation_rate(&nested, 0.5), 0.0);
        let broken = ProbMaps::from_planes([4, 1, 1], &[1.0, 1.0, 0.0, 0.0], &[0.0, 0.0, 0.0, 0.0], &[1.0, 1.0, 0.0, 0.0])
            .unwrap();
        assert_eq!(hierarchy_violation_rate(&broken, 0.5), 0.5);
    }

    #[test]
    fn clean_phantom_equals_truth() {
        let spec = PhantomSpec {
            feature_noise: 0.0,
            blur_radius: 0,
            violation_rate: 0.0,
            ..small_spec()
        };
        let ph = generate_phantom(&spec).unwrap();
        assert_eq!(ph.probmaps, ph.ground_truth);
        assert_eq!(hierarchy_violation_rate(&ph.probmaps, 0.5), 0.0);
        // noiseless features are exactly the anchors
        let centre = ph.features.voxel(crate::field::voxel_index(spec.dims, [7, 7, 7]));
        for (a, b) in centre.iter().zip(&ph.anchors[3]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn phantom_is_deterministic_and_nested() {
        let spec = PhantomSpec {
            violation_rate: 0.1,
            ..small_spec()
        };
        let a = generate_phantom(&spec).unwrap();
        let b = generate_phantom(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(hierarchy_violation_rate(&a.ground_truth, 0.5), 0.0);
        assert!(hierarchy_violation_rate(&a.probmaps, 0.5) > 0.0);
        let c = generate_phantom(&PhantomSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a.features, c.features);
    }

    #[test]
    fn rejects_non_nestable_specs() {
        let mut spec = small_spec();
        spec.semi_axes[0] = [5.0, 1.0, 1.0];
        assert!(generate_phantom(&spec).is_err());
        let mut spec = small_spec();
        spec.center_offsets[0] = [3.0, 0.0, 0.0];
        assert!(generate_phantom(&spec).is_err());
        let spec = PhantomSpec {
            violation_rate: 2.0,
            ..small_spec()
        };
        assert!(generate_phantom(&spec).is_err());
    }

    #[test]
    fn blur_preserves_constants() {
        let v = vec![0.25; 27];
        let b = box_blur([3, 3, 3], &v, 2);
        assert!(b.iter().all(|&x| (x - 0.25).abs() < 1e-15));
    }
}
