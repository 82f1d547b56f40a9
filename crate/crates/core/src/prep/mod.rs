//! Spectral reduction, patch extraction and stratified splitting.

mod patches;
mod pca;
mod split;

pub use patches::{extract_patches, BorderMode, PatchSet};
pub use pca::{pca_reduce, pca_reduce_with, PcaOptions, ReducedCube};
pub use split::{split_counts, stratified_split, ClassSplit, Fractions, SplitAssignment};
