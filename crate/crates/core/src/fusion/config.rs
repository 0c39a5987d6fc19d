use serde::{Deserialize, Serialize};

use crate::error::{Result, UmcfError};
use crate::field::Temperature;
use crate::spatial::DEFAULT_HARD_THRESHOLD;

use super::Stream;

/// Every free parameter of the fusion iteration. Field names match the JSON
/// config document; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub tau: f64,
    pub lambda: f64,
    pub iterations: usize,
    pub block: usize,
    pub w_hier: f64,
    pub w_topo: f64,
    pub refresh_probmaps: bool,
    pub renormalize_each_iter: bool,
    #[serde(rename = "disable_mV")]
    pub disable_m_v: bool,
    #[serde(rename = "disable_mT")]
    pub disable_m_t: bool,
    #[serde(rename = "disable_mS")]
    pub disable_m_s: bool,
    #[serde(rename = "disable_mTS")]
    pub disable_m_ts: bool,
    /// Replace uncertainty gating by an equal-weight mean of enabled streams.
    pub disable_pfug: bool,
    /// Gate streams two at a time and average the pair results.
    pub pairwise_mode: bool,
    /// Zero the medical-prior bias inside visual attention.
    pub disable_prior_bias: bool,
    /// Threshold that hardens probability maps into masks.
    pub hard_threshold: f64,
    /// Seed of the fixed projection used for spatial tokens and
    /// mismatched embedding dims.
    pub projection_seed: u64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            tau: 0.1,
            lambda: 0.5,
            iterations: 3,
            block: 8,
            w_hier: 1.0,
            w_topo: 0.5,
            refresh_probmaps: true,
            renormalize_each_iter: true,
            disable_m_v: false,
            disable_m_t: false,
            disable_m_s: false,
            disable_m_ts: false,
            disable_pfug: false,
            pairwise_mode: false,
            disable_prior_bias: false,
            hard_threshold: DEFAULT_HARD_THRESHOLD,
            projection_seed: 0,
        }
    }
}

/// How enabled message streams are combined into one message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GateMode {
    /// `exp(-u)` softmax over all enabled streams at once.
    Joint,
    /// `exp(-u)` softmax within every pair of enabled streams, pair results
    /// averaged with equal weight.
    Pairwise,
    /// Equal-weight mean, ignoring uncertainty.
    Mean,
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        Temperature::new(self.tau)?;
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(UmcfError::config(format!(
                "lambda must lie in (0, 1), got {}",
                self.lambda
            )));
        }
        if self.iterations == 0 {
            return Err(UmcfError::config("iterations must be >= 1"));
        }
        if self.block == 0 {
            return Err(UmcfError::config("block must be >= 1"));
        }
        for (name, w) in [("w_hier", self.w_hier), ("w_topo", self.w_topo)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(UmcfError::config(format!("{name} must be >= 0, got {w}")));
            }
        }
        if !(self.hard_threshold > 0.0 && self.hard_threshold <= 1.0) {
            return Err(UmcfError::config(format!(
                "hard_threshold must lie in (0, 1], got {}",
                self.hard_threshold
            )));
        }
        if !self.enabled().iter().any(|&e| e) {
            return Err(UmcfError::config("all streams disabled"));
        }
        Ok(())
    }

    pub fn temperature(&self) -> Result<Temperature> {
        Temperature::new(self.tau)
    }

    /// Enabled flags in stream order V, T, S, TS.
    pub fn enabled(&self) -> [bool; 4] {
        [
            !self.disable_m_v,
            !self.disable_m_t,
            !self.disable_m_s,
            !self.disable_m_ts,
        ]
    }

    pub fn disable(&mut self, stream: Stream) {
        match stream {
            Stream::V => self.disable_m_v = true,
            Stream::T => self.disable_m_t = true,
            Stream::S => self.disable_m_s = true,
            Stream::TS => self.disable_m_ts = true,
        }
    }

    pub fn gate_mode(&self) -> GateMode {
        if self.pairwise_mode {
            GateMode::Pairwise
        } else if self.disable_pfug {
            GateMode::Mean
        } else {
            GateMode::Joint
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: FusionConfig =
            serde_json::from_str(text).map_err(|e| UmcfError::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
