//! Voxel-wise kernels of one fusion step. Every kernel maps voxels
//! independently, so parallel evaluation is bit-identical to serial.

use rayon::prelude::*;

use crate::error::{Result, UmcfError};
use crate::field::{dot, l2_normalize, logistic, pairwise_sum, softmax_into, Temperature, UnitVector, VoxelGrid};
use crate::spatial::{local_abs_diff, ProbMaps, TumorClass, MASS_EPS};
use crate::tokens::{Modality, TokenSet};
use crate::uncertainty::UncertaintyFields;

use super::config::GateMode;

/// The four message streams, in the order used by every `[_; 4]` array.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    V,
    T,
    S,
    TS,
}

impl Stream {
    pub const ALL: [Stream; 4] = [Stream::V, Stream::T, Stream::S, Stream::TS];

    pub fn name(self) -> &'static str {
        match self {
            Stream::V => "m_V",
            Stream::T => "m_T",
            Stream::S => "m_S",
            Stream::TS => "m_TS",
        }
    }
}

/// Per-voxel messages; `None` marks an ablated stream.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MessageStreams {
    pub m_v: Option<VoxelGrid>,
    pub m_t: Option<VoxelGrid>,
    pub m_s: Option<VoxelGrid>,
    pub m_ts: Option<VoxelGrid>,
}

impl MessageStreams {
    pub fn as_array(&self) -> [Option<&VoxelGrid>; 4] {
        [
            self.m_v.as_ref(),
            self.m_t.as_ref(),
            self.m_s.as_ref(),
            self.m_ts.as_ref(),
        ]
    }

    pub fn enabled(&self) -> [bool; 4] {
        self.as_array().map(|s| s.is_some())
    }
}

fn map_rows(
    field: &VoxelGrid,
    out_dim: usize,
    f: impl Fn(usize, &[f64], &mut [f64]) + Sync + Send,
) -> Result<VoxelGrid> {
    let d = field.channels();
    let rows = field.to_rows();
    let mut out = vec![0.0; field.voxel_count() * out_dim];
    out.par_chunks_mut(out_dim)
        .zip(rows.par_chunks(d))
        .enumerate()
        .for_each(|(v, (o, row))| f(v, row, o));
    VoxelGrid::from_rows(field.dims(), out_dim, &out)
}

fn check_dim(field: &VoxelGrid, dim: usize, what: &str) -> Result<()> {
    if field.channels() != dim {
        return Err(UmcfError::mismatch(format!(
            "{what} has dim {dim}, latent field has {} channels",
            field.channels()
        )));
    }
    Ok(())
}

fn check_same_dims(a: [usize; 3], b: [usize; 3], what: &str) -> Result<()> {
    if a != b {
        return Err(UmcfError::mismatch(format!(
            "{what}: volume {}x{}x{} vs {}x{}x{}",
            a[0], a[1], a[2], b[0], b[1], b[2]
        )));
    }
    Ok(())
}

#[inline]
fn sim(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticField {
    pub phi: VoxelGrid,
    /// Prototype was degenerate; `phi` is the neutral 0.5 everywhere.
    pub degenerate: bool,
}

/// `phi_T(x) = logistic(sim(F(x), t_bar) / tau)`.
pub fn semantic_field(f: &VoxelGrid, t_bar: &UnitVector, tau: Temperature) -> Result<SemanticField> {
    check_dim(f, t_bar.dim(), "semantic prototype")?;
    if t_bar.is_degenerate() {
        return Ok(SemanticField {
            phi: VoxelGrid::scalar(f.dims(), vec![0.5; f.voxel_count()])?,
            degenerate: true,
        });
    }
    let t = t_bar.values();
    let tau = tau.get();
    let phi = map_rows(f, 1, |_, row, o| o[0] = logistic(sim(row, t) / tau))?;
    Ok(SemanticField {
        phi,
        degenerate: false,
    })
}

/// Hinge violation of ET <= TC <= WT, scaled by `w_hier`.
pub fn hier_penalty(p: &ProbMaps, w_hier: f64) -> Result<VoxelGrid> {
    let [et, tc, wt] = TumorClass::ALL.map(|c| p.class(c));
    let data = (0..p.voxel_count())
        .map(|v| w_hier * ((et[v] - tc[v]).max(0.0) + (tc[v] - wt[v]).max(0.0)))
        .collect();
    VoxelGrid::scalar(p.dims(), data)
}

/// Local total variation (mean 6-neighbor absolute difference), averaged
/// over classes and scaled by `w_topo`.
pub fn topo_penalty(p: &ProbMaps, w_topo: f64) -> Result<VoxelGrid> {
    let per_class = TumorClass::ALL.map(|c| local_abs_diff(p.dims(), p.class(c)));
    let data = (0..p.voxel_count())
        .map(|v| w_topo * (per_class[0][v] + per_class[1][v] + per_class[2][v]) / 3.0)
        .collect();
    VoxelGrid::scalar(p.dims(), data)
}

/// Prior bias of every visual token, evaluated over the token's source
/// block: `log(1 + mean phi_T) - mean r_hier - mean r_topo`.
pub fn visual_bias(
    visual: &TokenSet,
    phi_t: &VoxelGrid,
    r_hier: &VoxelGrid,
    r_topo: &VoxelGrid,
) -> Result<Vec<f64>> {
    if visual.modality() != Modality::Visual || visual.regions().len() != visual.len() {
        return Err(UmcfError::invalid("visual bias needs visual tokens with source blocks"));
    }
    let dims = phi_t.dims();
    check_same_dims(dims, r_hier.dims(), "r_hier")?;
    check_same_dims(dims, r_topo.dims(), "r_topo")?;
    Ok(visual
        .regions()
        .iter()
        .map(|region| {
            (1.0 + region.mean_of(dims, phi_t.data())).ln()
                - region.mean_of(dims, r_hier.data())
                - region.mean_of(dims, r_topo.data())
        })
        .collect())
}

/// Attention of one field row over `tokens`:
/// `softmax_i((sim(row, V_i) + bias_i) / tau)`.
pub fn attention_weights(row: &[f64], tokens: &[UnitVector], bias: &[f64], tau: Temperature) -> Vec<f64> {
    let scores: Vec<f64> = tokens
        .iter()
        .zip(bias)
        .map(|(t, b)| sim(row, t.values()) + b)
        .collect();
    let mut w = vec![0.0; scores.len()];
    softmax_into(&scores, tau.get(), &mut w);
    w
}

fn weighted_token_sum(weights: &[f64], tokens: &[&[f64]], out: &mut [f64]) {
    out.fill(0.0);
    for (w, t) in weights.iter().zip(tokens) {
        for (o, x) in out.iter_mut().zip(t.iter()) {
            *o += w * x;
        }
    }
}

/// Biased visual attention: `m_V(x) = sum_i alpha_{x,i} V_i`.
pub fn varw(f: &VoxelGrid, visual: &TokenSet, bias: &[f64], tau: Temperature) -> Result<VoxelGrid> {
    if visual.is_empty() {
        return Err(UmcfError::invalid("visual attention over an empty token set"));
    }
    check_dim(f, visual.dim(), "visual tokens")?;
    if bias.len() != visual.len() {
        return Err(UmcfError::mismatch(format!(
            "{} bias terms for {} visual tokens",
            bias.len(),
            visual.len()
        )));
    }
    if bias.iter().any(|b| !b.is_finite()) {
        return Err(UmcfError::invalid("non-finite visual bias"));
    }
    let tokens: Vec<&[f64]> = visual.tokens().iter().map(|t| t.values()).collect();
    let tau = tau.get();
    map_rows(f, visual.dim(), |_, row, out| {
        let scores: Vec<f64> = tokens.iter().zip(bias).map(|(t, b)| sim(row, t) + b).collect();
        let mut w = vec![0.0; scores.len()];
        softmax_into(&scores, tau, &mut w);
        weighted_token_sum(&w, &tokens, out);
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub grid: VoxelGrid,
    /// No usable tokens; `grid` is all zeros.
    pub degenerate: bool,
}

/// Similarity-softmax aggregation of semantic or spatial tokens.
/// Degenerate tokens take no part in the softmax.
pub fn ssam(f: &VoxelGrid, tokens: &TokenSet, tau: Temperature) -> Result<Message> {
    if tokens.modality() == Modality::Visual {
        return Err(UmcfError::invalid("ssam aggregates semantic or spatial tokens"));
    }
    check_dim(f, tokens.dim(), "ssam tokens")?;
    let live: Vec<&[f64]> = tokens
        .tokens()
        .iter()
        .filter(|t| !t.is_degenerate())
        .map(|t| t.values())
        .collect();
    if live.is_empty() {
        return Ok(Message {
            grid: VoxelGrid::zeros(f.dims(), f.channels())?,
            degenerate: true,
        });
    }
    let tau = tau.get();
    let grid = map_rows(f, tokens.dim(), |_, row, out| {
        let scores: Vec<f64> = live.iter().map(|t| sim(row, t)).collect();
        let mut w = vec![0.0; scores.len()];
        softmax_into(&scores, tau, &mut w);
        weighted_token_sum(&w, &live, out);
    })?;
    Ok(Message {
        grid,
        degenerate: false,
    })
}

/// Channel gate `m_TS(x) = (t_bar * s_bar) * F(x)`, element-wise.
pub fn zscm(t_bar: &UnitVector, s_bar: &UnitVector, f: &VoxelGrid) -> Result<VoxelGrid> {
    if t_bar.dim() != s_bar.dim() {
        return Err(UmcfError::mismatch(format!(
            "prototypes have dims {} and {}",
            t_bar.dim(),
            s_bar.dim()
        )));
    }
    check_dim(f, t_bar.dim(), "prototypes")?;
    let gate: Vec<f64> = t_bar.values().iter().zip(s_bar.values()).map(|(a, b)| a * b).collect();
    map_rows(f, gate.len(), |_, row, out| {
        for ((o, x), g) in out.iter_mut().zip(row).zip(&gate) {
            *o = g * x;
        }
    })
}

fn exp_neg_softmax(u: &[f64; 4], members: &[usize]) -> [f64; 4] {
    let mut w = [0.0; 4];
    // u in [0, 1], so exp(-u) cannot under- or overflow
    let total: f64 = members.iter().map(|&q| (-u[q]).exp()).sum();
    for &q in members {
        w[q] = (-u[q]).exp() / total;
    }
    w
}

/// Effective linear weight of every stream at one voxel. Disabled streams
/// get weight 0 and are excluded from every normalization.
pub fn fusion_weights(u: [f64; 4], enabled: [bool; 4], mode: GateMode) -> Result<[f64; 4]> {
    let members: Vec<usize> = (0..4).filter(|&q| enabled[q]).collect();
    if members.is_empty() {
        return Err(UmcfError::config("all streams disabled"));
    }
    if let Some(bad) = u.iter().zip(enabled).find(|(x, e)| *e && !(0.0..=1.0).contains(*x)) {
        return Err(UmcfError::invalid(format!("uncertainty {} outside [0, 1]", bad.0)));
    }
    Ok(match mode {
        GateMode::Joint => exp_neg_softmax(&u, &members),
        GateMode::Mean => {
            let mut w = [0.0; 4];
            for &q in &members {
                w[q] = 1.0 / members.len() as f64;
            }
            w
        }
        GateMode::Pairwise => {
            if members.len() == 1 {
                return fusion_weights(u, enabled, GateMode::Joint);
            }
            let mut w = [0.0; 4];
            let mut pairs = 0usize;
            for (i, &a) in members.iter().enumerate() {
                for &b in &members[i + 1..] {
                    let pw = exp_neg_softmax(&u, &[a, b]);
                    w[a] += pw[a];
                    w[b] += pw[b];
                    pairs += 1;
                }
            }
            for x in w.iter_mut() {
                *x /= pairs as f64;
            }
            w
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatedMessage {
    pub fused: VoxelGrid,
    /// Voxel-averaged effective weight of each stream.
    pub mean_weights: [f64; 4],
}

/// Fuses the enabled streams with per-voxel weights from [`fusion_weights`].
/// [`GateMode::Joint`] is the uncertainty gate
/// `sum_q exp(-u_q) m_q / sum_p exp(-u_p)`.
pub fn gate_streams(streams: &MessageStreams, u: &UncertaintyFields, mode: GateMode) -> Result<GatedMessage> {
    let grids = streams.as_array();
    let enabled = streams.enabled();
    let first = grids
        .iter()
        .flatten()
        .next()
        .ok_or_else(|| UmcfError::config("all streams disabled"))?;
    let dims = first.dims();
    let d = first.channels();
    for g in grids.iter().flatten() {
        check_same_dims(dims, g.dims(), "message stream")?;
        check_dim(g, d, "message stream")?;
    }
    for g in u.as_array() {
        check_same_dims(dims, g.dims(), "uncertainty field")?;
    }
    let rows: Vec<Option<Vec<f64>>> = grids.iter().map(|g| g.map(VoxelGrid::to_rows)).collect();
    let [uv, ut, us, uts] = u.as_array().map(VoxelGrid::data);
    let n = first.voxel_count();
    let weights: Vec<[f64; 4]> = (0..n)
        .into_par_iter()
        .map(|v| fusion_weights([uv[v], ut[v], us[v], uts[v]], enabled, mode))
        .collect::<Result<_>>()?;
    let mut out = vec![0.0; n * d];
    out.par_chunks_mut(d).enumerate().for_each(|(v, o)| {
        for (q, r) in rows.iter().enumerate() {
            if let Some(r) = r {
                let w = weights[v][q];
                for (x, m) in o.iter_mut().zip(&r[v * d..(v + 1) * d]) {
                    *x += w * m;
                }
            }
        }
    });
    let mean_weights = [0, 1, 2, 3].map(|q| {
        let col: Vec<f64> = weights.iter().map(|w| w[q]).collect();
        pairwise_sum(&col) / n as f64
    });
    Ok(GatedMessage {
        fused: VoxelGrid::from_rows(dims, d, &out)?,
        mean_weights,
    })
}

/// Joint uncertainty gating over the enabled streams.
pub fn pfug(streams: &MessageStreams, u: &UncertaintyFields) -> Result<GatedMessage> {
    gate_streams(streams, u, GateMode::Joint)
}

/// `F_{t+1} = (1 - lambda) F_t + lambda m`.
pub fn convex_update(f_t: &VoxelGrid, m: &VoxelGrid, lambda: f64) -> Result<VoxelGrid> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(UmcfError::config(format!("lambda must lie in (0, 1), got {lambda}")));
    }
    check_same_dims(f_t.dims(), m.dims(), "convex update")?;
    check_dim(m, f_t.channels(), "fused message")?;
    let data = f_t
        .data()
        .iter()
        .zip(m.data())
        .map(|(a, b)| (1.0 - lambda) * a + lambda * b)
        .collect();
    VoxelGrid::new(f_t.dims(), f_t.channels(), data)
}

/// Per-voxel L2 normalization of the channel vector; zero rows stay zero.
pub fn renormalize_rows(f: &VoxelGrid) -> Result<VoxelGrid> {
    map_rows(f, f.channels(), |_, row, out| {
        let n = dot(row, row).sqrt();
        if n < crate::field::NORM_EPS {
            out.fill(0.0);
        } else {
            for (o, x) in out.iter_mut().zip(row) {
                *o = x / n;
            }
        }
    })
}

/// Relative change `|F_next - F| / |F|` (absolute when `|F| = 0`).
pub fn field_residual(prev: &VoxelGrid, next: &VoxelGrid) -> f64 {
    let diff: Vec<f64> = prev
        .data()
        .iter()
        .zip(next.data())
        .map(|(a, b)| (b - a) * (b - a))
        .collect();
    let sq: Vec<f64> = prev.data().iter().map(|a| a * a).collect();
    let num = pairwise_sum(&diff).sqrt();
    let den = pairwise_sum(&sq).sqrt();
    if den > 0.0 {
        num / den
    } else {
        num
    }
}

/// Mass-weighted, normalized mean of the field over each class's soft support.
pub fn class_anchors(f: &VoxelGrid, p: &ProbMaps) -> Result<[UnitVector; 3]> {
    check_same_dims(f.dims(), p.dims(), "class anchors")?;
    let d = f.channels();
    let mut out = Vec::with_capacity(3);
    for c in TumorClass::ALL {
        let w = p.class(c);
        let mass = pairwise_sum(w);
        if mass < MASS_EPS {
            out.push(UnitVector::zero(d));
            continue;
        }
        let mut terms = vec![0.0; w.len()];
        let mean: Vec<f64> = (0..d)
            .map(|ch| {
                for ((t, x), wv) in terms.iter_mut().zip(f.channel(ch)).zip(w) {
                    *t = wv * x;
                }
                pairwise_sum(&terms) / mass
            })
            .collect();
        out.push(l2_normalize(&mean)?);
    }
    Ok(out.try_into().expect("three classes"))
}

/// Cumulative max up the hierarchy so that `P_ET <= P_TC <= P_WT`.
pub fn project_hierarchy(p: &ProbMaps) -> Result<ProbMaps> {
    let [et, tc, wt] = TumorClass::ALL.map(|c| p.class(c));
    let tc2: Vec<f64> = tc.iter().zip(et).map(|(a, b)| a.max(*b)).collect();
    let wt2: Vec<f64> = wt.iter().zip(&tc2).map(|(a, b)| a.max(*b)).collect();
    ProbMaps::from_planes(p.dims(), et, &tc2, &wt2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefreshedMaps {
    pub maps: ProbMaps,
    /// Probe output before the hierarchy projection.
    pub pre_projection: ProbMaps,
    /// Classes whose anchor was degenerate and kept their previous map.
    pub retained: [bool; 3],
}

/// Linear probe `P_c(x) = logistic(sim(F(x), anchor_c) / tau)` followed by
/// [`project_hierarchy`].
pub fn refresh_probmaps(
    f: &VoxelGrid,
    anchors: &[UnitVector; 3],
    tau: Temperature,
    previous: &ProbMaps,
) -> Result<RefreshedMaps> {
    check_same_dims(f.dims(), previous.dims(), "probability refresh")?;
    let tau = tau.get();
    let mut planes: Vec<Vec<f64>> = Vec::with_capacity(3);
    let mut retained = [false; 3];
    for (c, anchor) in TumorClass::ALL.into_iter().zip(anchors) {
        check_dim(f, anchor.dim(), "class anchor")?;
        if anchor.is_degenerate() {
            retained[c.channel()] = true;
            planes.push(previous.class(c).to_vec());
            continue;
        }
        let a = anchor.values();
        let probe = map_rows(f, 1, |_, row, o| o[0] = logistic(sim(row, a) / tau))?;
        planes.push(probe.into_data());
    }
    let pre_projection = ProbMaps::from_planes(f.dims(), &planes[0], &planes[1], &planes[2])?;
    Ok(RefreshedMaps {
        maps: project_hierarchy(&pre_projection)?,
        pre_projection,
        retained,
    })
}
