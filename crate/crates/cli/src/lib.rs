//! Library surface of the CLI: file schemas and SVG rendering, shared by
//! the binary and its integration tests.

pub mod schema;
pub mod svg;
