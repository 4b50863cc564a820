//! Sample programs shipped with the engine, each with a seed input.

use crate::mvm::{assemble, AsmError, Program};

#[derive(Clone, Copy, Debug)]
pub struct Sample {
    pub name: &'static str,
    pub source: &'static str,
    pub about: &'static str,
    seed: fn() -> Vec<u8>,
}

impl Sample {
    pub fn program(&self) -> Result<Program, AsmError> {
        assemble(self.source)
    }

    pub fn seed(&self) -> Vec<u8> {
        (self.seed)()
    }
}

fn padded(prefix: &[u8], len: usize) -> Vec<u8> {
    let mut v = prefix.to_vec();
    v.resize(len, 0);
    v
}

/// Twenty ints with minimum 90.
pub const MINSEARCH_VALUES: [i32; 20] = [
    300, 250, 400, 120, 500, 90, 700, 800, 150, 260, 330, 410, 205, 610, 180, 999, 101, 140, 222, 175,
];

pub const SAMPLES: &[Sample] = &[
    Sample {
        name: "slicing",
        source: include_str!("../samples/slicing.masm"),
        about: "comparison chain with a concretized string lookup",
        seed: || vec![0; 24],
    },
    Sample {
        name: "minsearch",
        source: include_str!("../samples/minsearch.masm"),
        about: "minimum search over four worker threads",
        seed: || MINSEARCH_VALUES.iter().flat_map(|v| v.to_le_bytes()).collect(),
    },
    Sample {
        name: "switch8",
        source: include_str!("../samples/switch8.masm"),
        about: "switch through a table of code addresses",
        seed: || vec![3],
    },
    Sample {
        name: "switch_off",
        source: include_str!("../samples/switch_off.masm"),
        about: "switch through a table of relative offsets",
        seed: || vec![1],
    },
    Sample {
        name: "store_reload",
        source: include_str!("../samples/store_reload.masm"),
        about: "bytewise stores reloaded as wider words",
        seed: || vec![0x10, 0x20, 0x30, 0x40, 1, 2, 3, 4],
    },
    Sample {
        name: "kill_ops",
        source: include_str!("../samples/kill_ops.masm"),
        about: "operations that discard their symbolic operands",
        seed: || vec![0; 4],
    },
    Sample {
        name: "tlv",
        source: include_str!("../samples/tlv.masm"),
        about: "type-length-value record parser",
        seed: || padded(&[b'T', b'L', 2, 1, 2, 0x34, 0x02, 2, 1, 0x07], 32),
    },
    Sample {
        name: "imghdr",
        source: include_str!("../samples/imghdr.masm"),
        about: "image header validator",
        seed: || padded(b"IMG1\x10\x00\x10\x00\x08\x00\x10", 16),
    },
];

pub fn find(name: &str) -> Option<&'static Sample> {
    SAMPLES.iter().find(|s| s.name == name)
}

/// The multi-branch parsers.
pub const PARSERS: &[&str] = &["tlv", "imghdr"];
