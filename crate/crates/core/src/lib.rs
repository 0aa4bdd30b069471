//! Deterministic data-pipeline and evaluation algorithms for a multi-crop
//! vision-language model.
//!
//! - [`image_layout`]: overlapping multi-crop tiling and the vision-token sequence.
//! - [`connector`]: layer concatenation and 2x2 attention pooling of patch features.
//! - [`points`]: the HTML-like point annotation format.
//! - [`point_eval`]: pointing precision/recall with optimal assignment, count extraction.
//! - [`ranking`]: Bradley-Terry fits on pairwise preferences, mapped to Elo.
//! - [`caption`]: caption F1 aggregation and length-hint conditioning.
//! - [`mixture`]: mixture rates, style tags, annotation packing, loss-token weights.

pub mod caption;
pub mod connector;
pub mod image_layout;
pub mod mask;
pub mod mixture;
pub mod point_eval;
pub mod points;
pub mod ranking;

pub mod assignment;
