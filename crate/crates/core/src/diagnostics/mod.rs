//! Measurements taken around a parameter point: sharpness, subset gradient
//! agreement, linearity, loss landscapes and the backward-cost model.

mod cost;
mod landscape;
mod sharpness;

pub use cost::{
    skip_probability_closed_form, swp_skip_probability, timing_fit, TimingMeasurement, TimingModel,
};
pub use landscape::{
    adversarial_directions, evaluate_plane, gaussian_directions, grid_axis, landscape, LandscapeGrid,
    LandscapeMode, LandscapeOptions,
};
pub use sharpness::{
    cosine, linearity, sharpness, split_losses, subset_gradient_cosines, SplitLosses, SubsetCosines,
};
