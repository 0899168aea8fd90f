//! Slow, independent references for the slidenet test suites.
//!
//! Everything here recomputes from first principles in `f64` and reads only the
//! plain data of the library's types (architecture fields, tensors, boxes).

mod geometry;
mod grad;
mod merge;
mod naive;
pub mod suite;
mod window;

pub use geometry::{pixel_overlap, PixelOverlap};
pub use grad::finite_diff;
pub use merge::merge_simulator;
pub use naive::{naive_conv2d, naive_linear, naive_max_pool, Map};
pub use window::{enumerate_windows, naive_window_forward, Window, WindowEnumeration, WindowOutput};

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("window at ({y}, {x}) with extent {h}x{w} leaves the {ih}x{iw} input")]
    OutOfBounds {
        y: usize,
        x: usize,
        h: usize,
        w: usize,
        ih: usize,
        iw: usize,
    },
    #[error("missing weight tensor `{0}`")]
    MissingWeight(String),
    #[error("{0}")]
    Shape(String),
}
