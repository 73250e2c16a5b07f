//! Automata used by the experiments, scenarios, and tests.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::sa::{Permission, SecurityAutomaton, StateId};

fn perm(s: &str) -> Permission {
    s.parse().expect("catalog permission is well formed")
}

fn q(i: usize) -> StateId {
    StateId(format!("q{i}"))
}

/// `GET coap://rs/p{j}`.
pub fn complete_perm(j: usize) -> Permission {
    perm(&format!("GET coap://rs/p{j}"))
}

/// `GET coap://rs{j % servers}/p{j}`.
pub fn complete_perm_on(j: usize, servers: usize) -> Permission {
    perm(&format!("GET coap://rs{}/p{j}", j % servers))
}

fn complete_with(n: usize, p: impl Fn(usize) -> Permission) -> SecurityAutomaton {
    assert!(n >= 1);
    let ps: Vec<_> = (0..n).map(&p).collect();
    SecurityAutomaton::new(
        ps.clone(),
        (0..n).map(q),
        q(0),
        (0..n).flat_map(|i| ps.iter().enumerate().map(move |(j, pj)| (q(i), pj.clone(), q(j)))),
    )
    .expect("complete automaton is well formed")
}

/// `M_n`: states `q0..q{n-1}`, permissions `p0..p{n-1}`, `δ(qi, pj) = qj`.
pub fn complete(n: usize) -> SecurityAutomaton {
    complete_with(n, complete_perm)
}

/// `M_n` with permission `pj` served by `rs{j % servers}`.
pub fn complete_on(n: usize, servers: usize) -> SecurityAutomaton {
    complete_with(n, |j| complete_perm_on(j, servers))
}

/// Two states; `p0` is stationary everywhere and `p1` toggles between them.
pub fn oscillator() -> SecurityAutomaton {
    let (p0, p1) = (complete_perm(0), complete_perm(1));
    SecurityAutomaton::new(
        [p0.clone(), p1.clone()],
        [q(0), q(1)],
        q(0),
        [
            (q(0), p0.clone(), q(0)),
            (q(0), p1.clone(), q(1)),
            (q(1), p0, q(1)),
            (q(1), p1, q(0)),
        ],
    )
    .expect("oscillator is well formed")
}

/// One state where every one of `n` permissions is stationary.
pub fn single_state(n: usize) -> SecurityAutomaton {
    let ps: Vec<_> = (0..n).map(complete_perm).collect();
    SecurityAutomaton::new(ps.clone(), [q(0)], q(0), ps.into_iter().map(|p| (q(0), p, q(0))))
        .expect("single-state automaton is well formed")
}

/// `POST coap://rs/door/{d}`.
pub fn door_perm(d: &str) -> Permission {
    perm(&format!("POST coap://rs/door/{d}"))
}

/// Doors must be opened in order A, B, C; a door stays usable once reached.
pub fn door_chain() -> SecurityAutomaton {
    let doors = ["A", "B", "C"];
    let mut t = Vec::new();
    for (i, _) in doors.iter().enumerate().chain([(3, &"")]) {
        for (j, d) in doors.iter().enumerate() {
            if j < i {
                t.push((q(i), door_perm(d), q(i)));
            } else if j == i {
                t.push((q(i), door_perm(d), q(i + 1)));
            }
        }
    }
    SecurityAutomaton::new(doors.map(door_perm), (0..4).map(q), q(0), t).expect("door chain is well formed")
}

/// `GET coap://rs/w{i}` for `i` in 1..=3.
pub fn workflow_perm(i: usize) -> Permission {
    perm(&format!("GET coap://rs/w{i}"))
}

/// `w1` may not be used once `w3` has been used.
pub fn workflow() -> SecurityAutomaton {
    let p = workflow_perm;
    SecurityAutomaton::new(
        [p(1), p(2), p(3)],
        [q(0), q(1)],
        q(0),
        [
            (q(0), p(1), q(0)),
            (q(0), p(2), q(0)),
            (q(0), p(3), q(1)),
            (q(1), p(2), q(1)),
            (q(1), p(3), q(1)),
        ],
    )
    .expect("workflow is well formed")
}

/// A random deterministic automaton with up to `max_states` states and
/// `max_perms` permissions, each transition present with probability one half.
/// Permissions are spread over `servers` authorities.
pub fn random<R: Rng>(rng: &mut R, max_states: usize, max_perms: usize, servers: usize) -> SecurityAutomaton {
    let n = rng.gen_range(1..=max_states);
    let k = rng.gen_range(1..=max_perms);
    let ps: Vec<_> = (0..k).map(|j| complete_perm_on(j, servers.max(1))).collect();
    let states: Vec<_> = (0..n).map(q).collect();
    let mut t = Vec::new();
    for s in &states {
        for p in &ps {
            if rng.gen_bool(0.5) {
                t.push((s.clone(), p.clone(), states.choose(rng).unwrap().clone()));
            }
        }
    }
    SecurityAutomaton::new(ps, states, q(0), t).expect("random automaton is well formed")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn door_chain_shape() {
        let m = door_chain();
        assert_eq!(m.transition_count(), 1 + 2 + 3 + 3);
        assert_eq!(m.step(&q(3), &door_perm("C")).unwrap(), Some(&q(3)));
    }

    #[test]
    fn complete_on_servers() {
        let m = complete_on(2, 2);
        let auths: Vec<_> = m.alphabet().iter().map(|p| p.authority().to_owned()).collect();
        assert_eq!(auths, ["rs0", "rs1"]);
    }
}
