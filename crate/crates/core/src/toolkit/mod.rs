//! Image I/O, resizing, metrics, synthetic data and run configuration.

pub mod config;
pub mod dataset;
pub mod image_io;
pub mod metrics;
pub mod resize;
pub mod synth;

pub use dataset::PairedDataset;
pub use image_io::{read_png, write_png};
pub use metrics::{avg_gradient, psnr, ssim, MetricReport};
pub use resize::{bicubic_resize, make_lr_pair};
pub use synth::{synth_dataset, DatasetSpec, Family};
