//! IO layer of the Crypto Probing System: the on-disk file formats, the
//! run/replay drivers and the TCP daemon. All engine behavior lives in
//! `cps-core`; this crate only moves bytes in and out of it.

pub mod cmdfile;
pub mod daemon;
pub mod driver;
pub mod faultfile;
pub mod profilefile;
pub mod programfile;
pub mod reportfile;
pub mod tracefile;
