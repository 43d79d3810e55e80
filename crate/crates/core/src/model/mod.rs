//! CRN masking networks and their complexity accounting.

mod complexity;
mod config;
mod inference;
mod network;

pub use complexity::{ComplexityEntry, ComplexityReport, EntryKind};
pub use config::{apply_ablation, AblationStage, Bottleneck, CrnConfig};
pub use inference::{enhance, network_masks, DEFAULT_CHUNK_FRAMES};
pub use network::{Crn, RecurrentState};
