//! Coherent-field fusion of visual, semantic and spatial tokens over
//! volumetric tumor segmentations.

pub mod cli;
pub mod error;
pub mod eval;
pub mod field;
pub mod fusion;
pub mod io;
pub mod spatial;
pub mod tokens;
pub mod uncertainty;

pub use error::{Result, UmcfError};
pub use eval::{dice, generate_phantom, hierarchy_violation_rate, Phantom, PhantomSpec};
pub use field::{UnitVector, VoxelGrid};
pub use fusion::{run_fusion, FusionConfig, FusionDiagnostics, FusionInputs, FusionOutput, GateMode};
pub use spatial::{ProbMaps, TumorClass};
pub use tokens::{Modality, TokenSet};
