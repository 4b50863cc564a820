pub mod ast;
pub mod events;
pub mod mvm;
pub mod jumptab;
pub mod symex;
pub mod slicer;
pub mod solver;
pub mod verifier;
pub mod inverter;
pub mod samples;
pub mod config;
pub mod pipeline;
pub mod bench;
