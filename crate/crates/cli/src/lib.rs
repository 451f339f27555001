//! Sweep configuration, CSV tables and the grid runner behind the
//! `vblast` binary.  The binary is a thin argument-parsing shell;
//! everything worth testing lives here.

pub mod config;
pub mod csv;
pub mod sweep;
