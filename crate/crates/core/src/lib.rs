//! Thermal spread function toolkit.
//!
//! Forward-simulates the surface temperature response of a flat slab heated by
//! a Gaussian beam ([`forward`]), differentiates the frame-matching loss with an
//! exact discrete adjoint ([`adjoint`]), recovers diffusivity and absorption
//! maps from surface-only measurements ([`inverse`]), provides the image-based
//! curve-fitting baseline ([`baseline2d`]) and classifies materials from the
//! recovered maps ([`classify`]). File formats live in [`io`].

pub mod adjoint;
pub mod baseline2d;
pub mod classify;
pub mod domain;
pub mod error;
pub mod forward;
pub mod inverse;
pub mod io;
pub mod rng;

pub use domain::{
    diffusivity_from_bulk, eps_prime_from_components, true_temp_from_camera, CaptureConfig,
    EmissivityComponents, Field3, GridSpec, Map2, ParamMaps, SourceModel, TempMode, TemperatureField, TsfStack,
};
pub use error::{Result, TsfError};
