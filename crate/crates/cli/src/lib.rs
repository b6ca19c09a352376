//! Command-line tool and HTTP service for the `novact` library.

pub mod cli;
pub mod service;
