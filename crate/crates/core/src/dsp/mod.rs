//! Framing, transform, masking and overlap-add front-end shared by every model.

mod features;
mod frame;
mod mask;
mod wav;

pub use features::{assemble_features, crop_mask, INPUT_CHANNELS, MASK_CHANNELS};
pub use frame::{analyze, sqrt_hann, synthesize, FrameParams, SpectralSequence, Stft, SAMPLE_RATE};
pub use mask::{apply_mask, compress_input, mask_gain, MASK_EPSILON};
pub use wav::{read_wav, write_wav};
