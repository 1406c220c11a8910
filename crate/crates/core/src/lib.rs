//! Core of the hawk query compiler.
//!
//! SQL text is parsed into a logical plan, split into pipeline programs,
//! specialised by variant configurations, lowered to a small kernel IR and
//! executed either by the interpreter on a host launcher or by a cost
//! simulator that models a parallel device.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod codegen;
pub mod hash;
pub mod ir;
pub mod kernel;
pub mod logical;
pub mod optimizer;
pub mod planner;
pub mod query;
pub mod reference;
pub mod result;
pub mod runtime;
pub mod sql;
pub mod storage;
