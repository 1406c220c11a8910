//! Host driver for hawk-core: CSV datasets, the host worker pool, device
//! selection, benchmark reports and the command-line interface.

pub mod bench;
pub mod cli;
pub mod csvio;
pub mod device;
pub mod pool;
pub mod report;
