//! Synthetic two-contrast data, k-space degradation and image files.

mod dataset;
pub mod io;
mod kspace;
mod phantom;

pub use dataset::{bicubic_baseline, load_manifest, make_dataset, make_pair, save_dataset, ImagePair, ManifestEntry};
pub use kspace::{kspace_truncate, kspace_truncate_with_residue, kspace_upsample};
pub use phantom::{generate_phantom, PhantomSpec, Tissue};
