//! Discrete-event simulator for infrared perception and directional
//! communication in a swarm of cubic-centimeter robots.
//!
//! The crate is layered bottom-up:
//!
//! * [`world`] — 2D geometry: poses, segment obstacles, ray and cone casts.
//! * [`ir`] — transducer physics: radiation patterns, the ADC transfer
//!   curve, distance-dependent noise, ambient-light effects.
//! * [`codec`] — the pulse-width code carrying frames and control bursts.
//! * [`channel`] — directional multi-channel links, board blind arcs,
//!   interference classification.
//! * [`protocol`] — the per-robot controller: autonomy cycle, confirmed and
//!   unconfirmed delivery, relaying.
//! * [`scan`] — rotational range scanning and obstacle classification.
//! * [`sim`] — the deterministic event engine, scenario configs, and the
//!   reproducible experiment suite.

pub mod channel;
pub mod codec;
pub mod error;
pub mod ir;
pub mod protocol;
pub mod rngutil;
pub mod scan;
pub mod sim;
pub mod world;

pub use error::{Result, SimError};
