//! Propagation links: geometry, path loss, radiation pattern, Rician fading
//! and the cascaded transmitter–surface–user channel.

mod propagation;
mod scenario;
mod synth;

pub use propagation::{
    classify_field, effective_area_mask, hop_amplitude, near_field_spot_area, path_loss,
    radiation_gain, radiation_gain_toward, rayleigh_distance, FieldRegion,
};
pub use scenario::{BaseStation, PathlossMode, Scenario, Surface, TableSource, User, Vec3};
pub use synth::{
    cascaded_channel, omni_combiner, omni_combiners, synthesize_cells, synthesize_channels,
    synthesize_for, CascadeModel, ChannelSet, Fading, UserCascade,
};
pub(crate) use synth::complex_normal;
