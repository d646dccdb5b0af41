//! Command-line drivers and the chat service.

pub mod data;
pub mod service;
