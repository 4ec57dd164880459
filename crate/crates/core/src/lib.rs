//! One-shot photorealistic color style transfer.
//!
//! Given exactly one content photo and one style photo, a small shared
//! encoder learns per-pixel simplex "abundance" rows over a bank of
//! learned color bases, with an affine decoder branch per image and a
//! per-pixel critic encouraging matched representations. Stylization
//! whitens the content abundance distribution and colors it with the
//! style's, then decodes through the style branch.
//!
//! Everything is CPU-side `f64`; training is full-batch, deterministic
//! per seed.

pub mod checkpoint;
pub mod diffgraph;
pub mod error;
pub mod imageio;
pub mod losses;
pub mod matrix;
pub mod model;
pub mod pipeline;
pub mod wct;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use error::{Error, Result};
pub use imageio::{load_image, resize_max_side, save_image, ImageTensor};
pub use losses::{LossBreakdown, LossWeights};
pub use matrix::Matrix;
pub use model::{init_params, Branch, ModelParams, NUM_BASES};
pub use pipeline::{
    export_abundance, preprocess, psnr, reconstruct, stylize, train, train_traced, Checkpoint,
    TrainConfig,
};
pub use wct::{compute_stats, sym_eig, wct_transfer, wct_transfer_opts, WctStats};
