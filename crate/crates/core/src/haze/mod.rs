//! Haze imaging features: dark channel, transmission-derived depth, sky
//! blueness, local contrast, local entropy and gradient smoothness.

mod features;
mod image;
mod stack;

pub use features::{
    blueness, blueness_map, dark_channel, depth_proxy, depth_proxy_raw, entropy, estimate_airlight,
    gradient_magnitude, otsu_threshold, rgb_to_hsv, rms_contrast, smoothness, transmission, Otsu,
    Smoothness,
};
pub use image::{bin256, BinaryMask, GrayImage, RgbImage};
pub use stack::{
    build_feature_stack, Airlight, ChannelStats, Diagnostics, FeatureConfig, FeatureStack,
    CHANNELS, CHANNEL_NAMES,
};
