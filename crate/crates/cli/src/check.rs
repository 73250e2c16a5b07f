//! Bounded model checking of one automaton.

use std::path::Path;

use hcap_core::model::{explore, ExplorationReport, ExploreOptions, Model, Mutation};
use hcap_core::sa::{FragmentStrategy, SecurityAutomaton};

use crate::CliError;

pub const EXIT_CLEAN: i32 = 0;
pub const EXIT_BAD_INPUT: i32 = 1;
pub const EXIT_INCOMPLETE: i32 = 2;
pub const EXIT_VIOLATIONS: i32 = 3;

#[derive(Clone, Copy, Debug)]
pub struct CheckOptions {
    pub depth: usize,
    pub strategy: FragmentStrategy,
    pub mutation: Mutation,
    pub max_states: usize,
    pub liveness: bool,
}

impl Default for CheckOptions {
    fn default() -> Self {
        let e = ExploreOptions::default();
        CheckOptions {
            depth: e.depth,
            strategy: FragmentStrategy::Full,
            mutation: Mutation::None,
            max_states: e.max_states,
            liveness: e.liveness,
        }
    }
}

pub fn load_automaton(path: &Path) -> Result<SecurityAutomaton, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(path.to_owned(), e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse(path.display().to_string(), e.to_string()))
}

pub fn check(m: &SecurityAutomaton, opts: CheckOptions) -> Result<ExplorationReport, CliError> {
    let model = Model::new(m, opts.strategy).map_err(|e| CliError::Config(e.to_string()))?.with_mutation(opts.mutation);
    Ok(explore(&model, ExploreOptions { depth: opts.depth, max_states: opts.max_states, liveness: opts.liveness }))
}

/// Violations win over an incomplete search.
pub fn exit_code(r: &ExplorationReport) -> i32 {
    if !r.violations.is_empty() {
        EXIT_VIOLATIONS
    } else if !r.complete {
        EXIT_INCOMPLETE
    } else {
        EXIT_CLEAN
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use hcap_core::catalog;

    #[test]
    fn exit_codes() {
        let m = catalog::complete(2);
        let opts = CheckOptions { depth: 4, ..CheckOptions::default() };
        assert_eq!(exit_code(&check(&m, opts).unwrap()), EXIT_CLEAN);
        let tight = CheckOptions { max_states: 10, ..opts };
        assert_eq!(exit_code(&check(&m, tight).unwrap()), EXIT_INCOMPLETE);
        let bad = CheckOptions { mutation: Mutation::SkipReqtAppend, ..opts };
        assert_eq!(exit_code(&check(&m, bad).unwrap()), EXIT_VIOLATIONS);
    }
}
