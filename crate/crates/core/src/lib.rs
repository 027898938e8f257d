pub mod autodiff;
pub mod blocks;
pub mod config;
pub mod data;
pub mod geometry;
pub mod gradsuite;
pub mod losses;
pub mod metrics;
pub mod train;
