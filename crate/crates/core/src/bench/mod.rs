//! Wild-test composition: image statistics, extreme-value selection across
//! pose, expression and image quality, and label-noise candidate flagging.

mod noise;
mod select;
mod stats;

pub use noise::{flag_label_noise, NoiseCategory, NoiseConfig, NoiseFlag, NoiseInput};
pub use select::{
    compose_wild, percentile_select, select_extreme, Breakdown, Composition, ExpressionQuota, Extreme,
    PercentileRule, Selection, SelectionCriteria, Stat,
};
pub use stats::{expression_intensity, image_stats, pose_norm, ImageStats};
