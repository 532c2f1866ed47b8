mod dataset;
mod image;
mod io;
pub mod synth;

pub use self::dataset::{make_episode, synthetic_dataset, Dataset, Episode, Sample, SynthConfig};
pub use self::image::Image;
pub use self::io::{export_directory, load_directory, ImageFormat, Loaded, MANIFEST};
