//! Echo scene synthesis: loudspeaker nonlinearities, image-method room
//! responses, mixing at prescribed SER/SNR and condition-structured datasets.

mod dataset;
mod mix;
mod nonlinearity;
mod rir;
mod source;

pub use dataset::{
    build_condition_set, build_training_set, classify_activity, derive_seed, make_condition_file, make_training_file,
    remix_epoch, ComponentOrigin, ComponentPaths, Condition, ConditionRecipe, ConditionSection, Dataset, DatasetStyle,
    Manifest, ManifestEntry, NonlinearityMenu, RoomRecipe, Scene, SceneMeta, SignalBundle, TrainRecipe, MANIFEST_FILE,
};
pub use mix::{convolve, mean_power, mix_scene, power_ratio_db, ratio_gain, SILENCE_POWER};
pub use nonlinearity::{arctan_nonlinearity, sef_nonlinearity, Nonlinearity};
pub use rir::{simulate_rir, RoomSpec, SPEED_OF_SOUND};
pub use source::SourceCatalog;
