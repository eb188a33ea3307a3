//! Bernstein-Bezier bases for the full polynomial de Rham complex
//! (H1 → H(curl) → H(div) → L2) on tetrahedra, with quadrature-free element
//! mass and stiffness matrices and desk-scale mixed/eigenvalue experiments.

pub mod bases;
pub mod combinatorics;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod sampling;
pub mod local_assembly;
pub mod mesh;
pub mod quadrature;
pub mod solvers;
pub mod system;
pub mod verify;

pub use error::{Error, Result};
