//! Stroke-level explainability for vector sketch classifiers.
//!
//! Sketches are decomposed stroke by stroke into an order index, a
//! location-free shape sequence and an absolute location. A transformer
//! classifier consumes the three parts, and stroke location inversion
//! moves strokes by gradient descent on their locations to recover or
//! transfer a category.

pub mod analysis;
pub mod dataset;
pub mod error;
pub mod model;
pub mod quickdraw;
pub mod rdp;
pub mod render;
pub mod repr;
pub mod sketch;
pub mod sli;
pub mod synth;

pub use error::{Error, Result};
pub use model::{Checkpoint, ClassScores, ModelConfig, SketchClassifier};
pub use repr::{decompose, recompose, tokenize, DecomposedStroke, PenState, TokenizedSketch};
pub use sketch::{Point, Sketch, Stroke};
pub use sli::{run_sli, SliConfig, TaskKind, Trajectory};

/// Category list used for the 30-class analysis experiments.
pub const PAPER_CATEGORIES: [&str; 30] = [
    "airplane",
    "apple",
    "baseball_bat",
    "bed",
    "bicycle",
    "book",
    "bread",
    "broom",
    "camera",
    "car",
    "cell_phone",
    "chair",
    "clock",
    "cloud",
    "eye",
    "eyeglasses",
    "face",
    "flower",
    "headphones",
    "hot_dog",
    "laptop",
    "pants",
    "shorts",
    "smiley_face",
    "snake",
    "spider",
    "star",
    "sun",
    "table",
    "tree",
];
