//! Deterministic ray-traced ISAC simulation.
//!
//! The crate traces multipath propagation through an animated triangle-mesh
//! scene, turns every traced path into a complex gain with Doppler, builds
//! OFDM MIMO channel frames from the resulting path ensemble and runs
//! radar-style processing on them: range/Doppler periodogram, 2D range-azimuth
//! MUSIC, two clutter-removal procedures and four detection metrics.
//!
//! Pipeline stages map onto modules:
//!
//! | stage            | module          |
//! |------------------|-----------------|
//! | scene document   | [`scene`]       |
//! | ray launching    | [`raytracer`]   |
//! | per-path losses  | [`propagation`] |
//! | OFDM frames      | [`channel`]     |
//! | radar images     | [`sensing`]     |
//! | clutter removal  | [`clutter`]     |
//! | detection scores | [`metrics`]     |
//! | persistence      | [`dataset`]     |
//! | orchestration    | [`pipeline`]    |

pub mod channel;
pub mod clutter;
pub mod consts;
pub mod dataset;
pub mod metrics;
pub mod pipeline;
pub mod propagation;
pub mod raytracer;
pub mod scene;
pub mod sensing;

pub use channel::{ChannelFrame, ChannelPath, GroundTruth, PathEnsemble};
pub use metrics::{MetricReport, Peak};
pub use propagation::{PathGain, RadioConfig};
pub use raytracer::{InteractionEvent, InteractionKind, PropPath, TracerConfig};
pub use scene::{Material, RadioEndpoint, Scene, SceneObject};
pub use sensing::{MusicConfig, RadarImage, RangeMapping};

pub use nalgebra::Vector3;
pub use num_complex::Complex64;
