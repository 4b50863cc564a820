//! The mini VM: instruction set, assembler, program container and a
//! deterministic multi-threaded interpreter.

mod asm;
mod container;
mod isa;
mod machine;

pub use asm::{assemble, parse_reg, AsmError};
pub use container::{decode_program, encode_program, ContainerError, MAGIC as CONTAINER_MAGIC};
pub use isa::*;
pub use machine::{
    alu, run_concrete, schedule_next, spawn_concrete, BranchKind, BranchRecord, BranchTrace, ExitStatus, Machine,
    Memory, RunConfig, RunOutcome, ThreadState, Trap, DEFAULT_BUDGET, DEFAULT_QUANTUM,
};
