pub mod error;
pub mod linalg;
pub mod lq;
pub mod measures;
pub mod riccati;
pub mod mkvsde;
pub mod bsde;
pub mod verify;
pub mod config;
pub mod cli;
