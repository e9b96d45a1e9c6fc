//! Linear measurement processes `y = P(mask) T x + eps`.

mod fourier;
mod mask;
mod operator;
mod radon;
mod transform;

pub use fourier::{Dct2d, Dft2d};
pub use mask::{cartesian_columns, make_mask, sparse_view_angles, Mask, MaskKind};
pub use operator::MeasurementOperator;
pub use radon::Radon;
pub use transform::{real_part, to_complex, DenseTransform, Field, Transform, C64};
