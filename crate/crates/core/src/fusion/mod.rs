//! The coherent-field iteration: semantic field, biased visual attention,
//! token messages, channel gating, uncertainty-gated fusion and the convex
//! field update.

mod config;
mod kernels;

pub use config::{FusionConfig, GateMode};
pub use kernels::{
    attention_weights, class_anchors, convex_update, field_residual, fusion_weights, gate_streams,
    hier_penalty, pfug, project_hierarchy, refresh_probmaps, renormalize_rows, semantic_field, ssam,
    topo_penalty, varw, visual_bias, zscm, GatedMessage, Message, MessageStreams, RefreshedMaps,
    SemanticField, Stream,
};

use serde::Serialize;

use crate::error::{Result, UmcfError};
use crate::eval::hierarchy_violation_rate;
use crate::field::{pairwise_mean, VoxelGrid};
use crate::spatial::{build_spatial_tokens, ProbMaps};
use crate::tokens::{build_visual_tokens, TokenSet};
use crate::uncertainty::UncertaintyFields;

/// Iteration aborts when a residual grows past this multiple of the first.
pub const DIVERGENCE_FACTOR: f64 = 10.0;

#[derive(Debug, Clone)]
pub struct FusionInputs {
    /// Initial latent field, `d` channels. Rows are L2-normalized on entry.
    pub features: VoxelGrid,
    pub semantic: TokenSet,
    pub probmaps: ProbMaps,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `|F(t+1) - F(t)| / |F(t)|` over the whole field.
    pub residual: f64,
    /// Voxel-averaged effective gate weight per stream (V, T, S, TS).
    pub mean_gate_weights: [f64; 4],
    pub mean_phi_t: f64,
    /// Mean unweighted nesting hinge of the maps this iteration consumed.
    pub mean_r_hier: f64,
    /// Mean unweighted nesting hinge of the refreshed probe before projection.
    pub pre_projection_r_hier: Option<f64>,
    pub degenerate_streams: [bool; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FusionDiagnostics {
    pub mode: GateMode,
    pub enabled_streams: [bool; 4],
    pub visual_tokens: usize,
    pub iterations: Vec<IterationRecord>,
    pub violation_rate_before: f64,
    pub violation_rate_after: f64,
}

impl FusionDiagnostics {
    pub fn residuals(&self) -> Vec<f64> {
        self.iterations.iter().map(|r| r.residual).collect()
    }

    /// JSON-per-line report: one `iteration` line per step, then a `summary`.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for rec in &self.iterations {
            let line = serde_json::json!({ "kind": "iteration", "record": rec });
            out.push_str(&line.to_string());
            out.push('\n');
        }
        let summary = serde_json::json!({
            "kind": "summary",
            "mode": self.mode,
            "enabled_streams": self.enabled_streams,
            "visual_tokens": self.visual_tokens,
            "residuals": self.residuals(),
            "violation_rate_before": self.violation_rate_before,
            "violation_rate_after": self.violation_rate_after,
        });
        out.push_str(&summary.to_string());
        out.push('\n');
        out
    }
}

#[derive(Debug, Clone)]
pub struct FusionOutput {
    pub field: VoxelGrid,
    pub probmaps: ProbMaps,
    pub diagnostics: FusionDiagnostics,
}

fn mean_hinge(p: &ProbMaps) -> Result<f64> {
    Ok(pairwise_mean(hier_penalty(p, 1.0)?.data()))
}

/// Runs the configured number of fusion iterations.
pub fn run_fusion(inputs: &FusionInputs, cfg: &FusionConfig) -> Result<FusionOutput> {
    cfg.validate()?;
    let tau = cfg.temperature()?;
    let features = &inputs.features;
    let d = features.channels();
    if inputs.probmaps.dims() != features.dims() {
        let (a, b) = (features.dims(), inputs.probmaps.dims());
        return Err(UmcfError::mismatch(format!(
            "features are {}x{}x{}x{d}, probmaps are {}x{}x{}x3",
            a[0], a[1], a[2], b[0], b[1], b[2]
        )));
    }
    if inputs.semantic.dim() != d {
        return Err(UmcfError::mismatch(format!(
            "semantic tokens have dim {}, features have {d} channels",
            inputs.semantic.dim()
        )));
    }
    let enabled = cfg.enabled();
    let mode = cfg.gate_mode();
    let t_bar = inputs.semantic.prototype();
    let visual = build_visual_tokens(features, cfg.block, d)?;

    let mut field = renormalize_rows(features)?;
    let mut maps = inputs.probmaps.clone();
    let mut spatial = build_spatial_tokens(&maps, d, cfg.projection_seed, cfg.hard_threshold)?;
    let mut diagnostics = FusionDiagnostics {
        mode,
        enabled_streams: enabled,
        visual_tokens: visual.len(),
        iterations: Vec::with_capacity(cfg.iterations),
        violation_rate_before: hierarchy_violation_rate(&maps, cfg.hard_threshold),
        violation_rate_after: 0.0,
    };

    for iteration in 0..cfg.iterations {
        if iteration > 0 && cfg.refresh_probmaps {
            spatial = build_spatial_tokens(&maps, d, cfg.projection_seed, cfg.hard_threshold)?;
        }
        let semantic = semantic_field(&field, t_bar, tau)?;
        let mut degenerate = [false; 4];
        let mut streams = MessageStreams::default();

        if enabled[0] {
            let bias = if cfg.disable_prior_bias {
                vec![0.0; visual.len()]
            } else {
                let r_hier = hier_penalty(&maps, cfg.w_hier)?;
                let r_topo = topo_penalty(&maps, cfg.w_topo)?;
                visual_bias(&visual, &semantic.phi, &r_hier, &r_topo)?
            };
            streams.m_v = Some(varw(&field, &visual, &bias, tau)?);
        }
        if enabled[1] {
            let m = ssam(&field, &inputs.semantic, tau)?;
            degenerate[1] = m.degenerate;
            streams.m_t = Some(m.grid);
        }
        if enabled[2] {
            let m = ssam(&field, &spatial, tau)?;
            degenerate[2] = m.degenerate;
            streams.m_s = Some(m.grid);
        }
        if enabled[3] {
            degenerate[3] = t_bar.is_degenerate() || spatial.prototype().is_degenerate();
            streams.m_ts = Some(zscm(t_bar, spatial.prototype(), &field)?);
        }

        let mut u = UncertaintyFields::compute(&maps, &semantic.phi)?;
        let ones = || VoxelGrid::scalar(field.dims(), vec![1.0; field.voxel_count()]);
        if degenerate[1] {
            u.u_t = ones()?;
        }
        if degenerate[2] {
            u.u_s = ones()?;
        }
        if degenerate[3] {
            u.u_ts = ones()?;
        }
        let gated = gate_streams(&streams, &u, mode)?;

        let mut next = convex_update(&field, &gated.fused, cfg.lambda)?;
        if cfg.renormalize_each_iter {
            next = renormalize_rows(&next)?;
        }
        let residual = field_residual(&field, &next);
        field = next;

        let mean_r_hier = mean_hinge(&maps)?;
        let mut pre_projection_r_hier = None;
        if cfg.refresh_probmaps {
            let anchors = class_anchors(&field, &maps)?;
            let refreshed = refresh_probmaps(&field, &anchors, tau, &maps)?;
            pre_projection_r_hier = Some(mean_hinge(&refreshed.pre_projection)?);
            maps = refreshed.maps;
        }

        diagnostics.iterations.push(IterationRecord {
            iteration,
            residual,
            mean_gate_weights: gated.mean_weights,
            mean_phi_t: pairwise_mean(semantic.phi.data()),
            mean_r_hier,
            pre_projection_r_hier,
            degenerate_streams: degenerate,
        });

        let initial = diagnostics.iterations[0].residual;
        if iteration > 0 && residual > DIVERGENCE_FACTOR * initial {
            return Err(UmcfError::Diverged {
                iteration,
                residual,
                initial,
                diagnostics: Box::new(diagnostics),
            });
        }
    }

    diagnostics.violation_rate_after = hierarchy_violation_rate(&maps, cfg.hard_threshold);
    Ok(FusionOutput {
        field,
        probmaps: maps,
        diagnostics,
    })
}
