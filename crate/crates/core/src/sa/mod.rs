//! Security automata, exception lists, and the fragments carried in capabilities.

mod automaton;
mod build;
mod compress;
mod exception;
mod fragment;
mod safety;
mod types;

pub use automaton::SecurityAutomaton;
pub use build::{build_fragment, state_name, FragmentStrategy};
pub use compress::compress_exception;
pub use exception::{ExceptionList, Exercise};
pub use fragment::{Defs, FragOutcome, NameDef, SAFragment, Target};
pub use safety::{is_safe_for, lemma1_check, Lemma1Clause, Lemma1Report};
pub use types::{Name, Permission, StateId, Timestamp};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SaError {
    #[error("invalid permission: {0}")]
    InvalidPermission(String),
    #[error("invalid automaton: {0}")]
    InvalidAutomaton(String),
    #[error("invalid fragment: {0}")]
    InvalidFragment(String),
    #[error("invalid fragment strategy {0:?}")]
    InvalidStrategy(String),
    #[error("unknown state {0}")]
    UnknownState(StateId),
    #[error("permission {0} is not in the alphabet")]
    UnknownPermission(Permission),
    #[error("timestamp {next} does not follow {prev}")]
    NonIncreasingTimestamp { prev: Timestamp, next: Timestamp },
    #[error("timestamp {0} does not occur in the history")]
    TimeNotInHistory(Timestamp),
    #[error("fragment is not safe for the automaton in state {0}")]
    UnsafeFragment(StateId),
    #[error("history cannot be replayed on its fragment at {0}")]
    CorruptHistory(Timestamp),
}
