//! Numerical laboratory for controlled fully coupled FBSDEs and their HJB
//! equation with an embedded algebra equation.

pub mod algebra;
pub mod assumptions;
pub mod bench;
pub mod config;
pub mod error;
pub mod expr;
pub mod fbsde;
pub mod grid;
pub mod hjb;
pub mod paths;
pub mod problem;
pub mod value;
pub mod verify;

pub use error::{Error, Result};
