pub mod config;
pub mod equiv;
pub mod eval;
pub mod export;
pub mod graph;
pub mod inserter;
pub mod miner;
pub mod netlist;
pub mod patterns;
pub mod pipeline;
pub mod policy;
pub mod scoap;
pub mod sim;
pub mod synthetic;
pub mod templates;
