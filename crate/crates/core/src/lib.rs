pub mod drift;
pub mod dynamics;
pub mod experiments;
pub mod fft;
pub mod heatflow;
pub mod lattice_field;
pub mod lie_core;
pub mod noise;
pub mod norms;
pub mod observables;
pub mod stats;
