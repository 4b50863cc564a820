//! Replay check for generated inputs: the candidate's branch trace must match
//! the seed's up to the inverted branch and go the other way there.

use std::fmt;

use crate::events::NullSink;
use crate::mvm::{run_concrete, BranchKind, BranchTrace, ExitStatus, Program, RunConfig, RunOutcome};

/// What the inverted branch should do on the candidate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Expectation {
    /// The conditional branch goes the other way.
    Flip,
    /// The indirect jump reaches this target.
    Target(u64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Verdict {
    Correct,
    /// Index of the first trace entry that differs (or where the run trapped).
    Divergent(usize),
    /// The candidate finished before reaching the target entry.
    TooShort,
    /// The target entry was reached but went the seed's way.
    TargetNotInverted,
}

impl Verdict {
    pub fn is_correct(self) -> bool {
        self == Verdict::Correct
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Correct => write!(f, "correct"),
            Verdict::Divergent(i) => write!(f, "divergent@{i}"),
            Verdict::TooShort => write!(f, "too-short"),
            Verdict::TargetNotInverted => write!(f, "not-inverted"),
        }
    }
}

/// Compares a candidate run against the seed trace. `target` indexes the full
/// trace, including branches before the first input read.
pub fn compare(seed: &BranchTrace, candidate: &RunOutcome, target: usize, expect: Expectation) -> Verdict {
    let cand = &candidate.trace.entries;
    let trapped = matches!(candidate.status, ExitStatus::Trapped(_));
    let limit = target.min(seed.entries.len());
    for i in 0..limit {
        match cand.get(i) {
            Some(c) if *c == seed.entries[i] => {}
            Some(_) => return Verdict::Divergent(i),
            None if trapped => return Verdict::Divergent(cand.len()),
            None => return Verdict::TooShort,
        }
    }
    let Some(c) = cand.get(target) else {
        return if trapped { Verdict::Divergent(cand.len()) } else { Verdict::TooShort };
    };
    let Some(s) = seed.entries.get(target) else {
        return Verdict::TooShort;
    };
    if c.site != s.site || c.tid != s.tid {
        return Verdict::Divergent(target);
    }
    match (expect, c.kind) {
        (Expectation::Flip, BranchKind::Conditional { taken }) => {
            if s.kind == (BranchKind::Conditional { taken: !taken }) {
                Verdict::Correct
            } else {
                Verdict::TargetNotInverted
            }
        }
        (Expectation::Target(t), BranchKind::Indirect { target: got }) => {
            if got == t {
                Verdict::Correct
            } else if c.kind == s.kind {
                Verdict::TargetNotInverted
            } else {
                Verdict::Divergent(target)
            }
        }
        _ => Verdict::Divergent(target),
    }
}

/// Replays `candidate` and checks it against the seed trace.
pub fn verify(
    program: &Program,
    seed: &BranchTrace,
    candidate: &[u8],
    target: usize,
    expect: Expectation,
    run: &RunConfig,
) -> (Verdict, RunOutcome) {
    let out = run_concrete(program, candidate, run, &mut NullSink);
    (compare(seed, &out, target, expect), out)
}
