//! Small numeric kernels shared by the quadrature, residual and
//! boundary-value machinery.

pub mod banded;
pub mod gauss;
pub mod spline;

pub use banded::BandedMatrix;
pub use gauss::gauss_legendre;
pub use spline::CubicSpline;
