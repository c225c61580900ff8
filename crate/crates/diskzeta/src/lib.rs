//! Dirichlet dynamical zeta series for planar disk billiards.
//!
//! The crate builds the series Σ a_n e^{-λ_n s} attached to the billiard
//! flow outside a family of disjoint disks from first principles: periodic
//! itineraries are enumerated symbolically, each is realized as a periodic
//! ray by minimizing the polygonal length functional, the transverse
//! monodromy supplies the weight |det(Id - P)|^{1/2}, and the resulting
//! frequency/coefficient data feeds abscissa estimates, remainder
//! diagnostics, and the frequency-clustering criteria scanners.

pub mod analysis;
pub mod config;
pub mod criteria;
pub mod geometry;
pub mod linearization;
pub mod orbit;
pub mod orbitdb;
pub mod pipeline;
pub mod spectrum;
pub mod sum;
pub mod symbolic;
pub mod vec2;

pub use geometry::{Configuration, Disk};
pub use orbit::PeriodicOrbit;
pub use spectrum::Spectrum;
pub use symbolic::Word;
pub use vec2::Vec2;
