//! Semiclassical ℏ-expansion of quantum propagators for smooth electric and
//! magnetic systems on `R^n`.
//!
//! The pipeline: solve the classical two-point boundary value problem
//! ([`classical`]), build Jacobi fields and the fluctuation Green's function
//! ([`jacobi`]), enumerate closed marked Feynman diagrams ([`diagram`]),
//! integrate them ([`evaluate`]) and assemble the truncated series
//! `V = -S + (iℏ)·½ log|det ∂²(-S)/∂q₀∂q₁| + Σ (iℏ)^λ F/|Aut|` ([`series`]).
//! [`verify`] checks the result against the Schrödinger equation and the
//! short-time and composition laws by finite differences.

pub mod classical;
pub mod diagram;
pub mod error;
pub mod evaluate;
pub mod jacobi;
pub mod ode;
pub mod potential;
pub mod quadrature;
pub mod series;
pub mod verify;

pub use error::{Error, Result};
pub use potential::{required_order, Potential, PotentialSpec, Term};
