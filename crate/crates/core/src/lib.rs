//! Head-fixation saliency prediction for omnidirectional images.
//!
//! The pipeline ingests head-movement trajectories on the sphere, splits them
//! into fixations and saccades, trains a multi-stream imitation policy whose
//! reward is learned adversarially, rolls the policy out over new images and
//! turns the predicted fixations into equirectangular saliency maps.
//!
//! Hot loops (map rendering, metric batches, stream rollouts, split-half
//! repetitions) run on rayon when the `parallel` feature is enabled and an
//! [`ExecMode::Parallel`] is requested; every reduction happens in a fixed
//! order so results are bit-identical to the sequential path.

pub mod analysis;
pub mod env;
pub mod error;
pub mod exec;
pub mod gail;
pub mod image;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod salmap;
pub mod sphere;
pub mod synth;
pub mod trajectory;

pub use error::{Error, Result};
pub use exec::ExecMode;
pub use image::EquirectImage;
pub use salmap::SaliencyMap;
pub use sphere::{PixelCoord, SpherePoint, ViewportSpec};
