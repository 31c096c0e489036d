pub mod grid;
pub mod nonlinearity;
mod quadrature;
pub mod rearrange;
pub mod linalg;
pub mod solver;
pub mod star;
pub mod forcing;
pub mod compare;
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
