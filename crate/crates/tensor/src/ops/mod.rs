mod attention;
pub(crate) mod linalg;
mod nn;
pub(crate) mod pointwise;
pub(crate) mod shape;

pub use shape::rotate_rows;
