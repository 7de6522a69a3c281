//! Core engine of the Crypto Probing System (CPS), a workbench for studying
//! how command sequences from concurrent smartcard applications interleave
//! on cards they were never meant for.
//!
//! Everything in this crate is deterministic and IO-free: byte-exact APDU
//! encoding ([`apdu`]), rule-driven simulated cards ([`card`]), a routing
//! middleware that classifies every executed command against the
//! straight-line program it belongs to ([`router`]), and an explorer that
//! enumerates and evaluates interleavings of two such programs
//! ([`explore`]).
//!
//! The crate is `no_std` (with `alloc`). The companion `cps` crate carries
//! the CLI, the TCP daemon and the on-disk file formats.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod apdu;
pub mod card;
pub mod explore;
pub mod program;
pub mod router;
pub mod stream;
