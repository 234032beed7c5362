//! Fourier neural operator over the space–time target window.
//!
//! Layout: lifted input `(B, C_in, S_x·K)` → affine lift to `width` channels
//! → `layers` × `gelu(W·v + K(v) + b)` with `K` the truncated spectral
//! convolution → `width → hidden → 1` projection.

mod lift;
mod model;

pub use lift::{
    coordinate_count, input_channels, lift_batch, lift_inputs, lift_raw, parameter_channels, parameter_field_count,
    parameter_tangents, ParamChannel,
};
pub use model::{desk_config, BoundModel, OperatorConfig, OperatorModel};
