//! Shared inputs for the benchmarks.

use phyloalive::{parse_newick, stream, LgssConfig, LgssProgram, Tree};

pub const SYNTHETIC20: &str = include_str!("../../core/tests/data/synthetic20.nwk");

pub fn synthetic20() -> Tree {
    parse_newick(SYNTHETIC20).expect("fixture parses")
}

pub fn lgss(steps: usize) -> LgssProgram {
    LgssProgram::new(LgssConfig::unit(0.9).simulate(steps, &mut stream(2024))).expect("valid")
}
