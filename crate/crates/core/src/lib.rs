pub mod availability;
pub mod codec;
pub mod placement;
pub mod membership;
pub mod config;
pub mod node;
pub mod client;
pub mod cluster;
pub mod simharness;
