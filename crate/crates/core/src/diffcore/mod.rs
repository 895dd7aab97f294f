//! Differentiable-array substrate: dense arrays, a closed primitive set with
//! reverse-mode gradients, parameter storage, and the finite-difference oracle.

pub mod array;
pub mod fd;
pub mod store;
pub mod tape;

pub use array::{Dtype, Element, NdArray};
pub use fd::{finite_difference_gradient, max_relative_deviation};
pub use store::ParameterStore;
pub use tape::{Gradients, Tape, Var};

/// Shared scalar algebra so geometric formulas (harmonics, envelopes,
/// polynomials) are written once and evaluated either on plain floats or on
/// tape variables.
pub trait Algebra: Clone {
    fn add(&self, other: &Self) -> Self;
    fn sub(&self, other: &Self) -> Self;
    fn mul(&self, other: &Self) -> Self;
    fn scale(&self, c: f64) -> Self;
    fn add_const(&self, c: f64) -> Self;
}

impl Algebra for f64 {
    fn add(&self, other: &Self) -> Self {
        self + other
    }
    fn sub(&self, other: &Self) -> Self {
        self - other
    }
    fn mul(&self, other: &Self) -> Self {
        self * other
    }
    fn scale(&self, c: f64) -> Self {
        self * c
    }
    fn add_const(&self, c: f64) -> Self {
        self + c
    }
}

impl<'t, E: Element> Algebra for Var<'t, E> {
    fn add(&self, other: &Self) -> Self {
        Var::add(self, other).expect("algebra add: shapes match by construction")
    }
    fn sub(&self, other: &Self) -> Self {
        Var::sub(self, other).expect("algebra sub: shapes match by construction")
    }
    fn mul(&self, other: &Self) -> Self {
        Var::mul(self, other).expect("algebra mul: shapes match by construction")
    }
    fn scale(&self, c: f64) -> Self {
        Var::scale(self, c).expect("algebra scale")
    }
    fn add_const(&self, c: f64) -> Self {
        Var::add_scalar(self, c).expect("algebra add_const")
    }
}

#[cfg(test)]
mod gradcheck;
