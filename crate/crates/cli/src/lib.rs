//! Command-line tool and HTTP session service over the `derplace` library.

pub mod cli;
pub mod server;
pub mod store;
