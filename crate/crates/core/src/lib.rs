//! Single-molecule zero-phonon-line photon source: photophysics, photon-stream
//! simulation, coincidence correlation, fitting and solid-immersion-lens optics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod emission_sim;
pub mod estimators;
pub mod hbt_correlator;
pub mod photophysics;
pub mod sil_optics;
