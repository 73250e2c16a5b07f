use std::collections::HashMap;

use super::{Exercise, ExceptionList, FragOutcome, Name, SAFragment, SaError};

/// Loop elimination over the fragment names an exception visits.
///
/// `f.current()` is the name at the exception's base timestamp. The
/// names reached after each entry are tracked; when a name recurs, the
/// entries of the loop are dropped and the entry that first reached the
/// name takes the timestamp of the later occurrence. The base, the most
/// recent timestamp, and the final name are preserved, and the result
/// has at most `|defs|` entries.
///
/// A final step to `∘` is allowed (its name is unknown and never part of
/// a loop); an undefined step, or `∘` before the last entry, is a corrupt
/// history.
pub fn compress_exception(e: &ExceptionList, f: &SAFragment) -> Result<ExceptionList, SaError> {
    let entries = e.chronological();
    let mut kept: Vec<(Exercise, Option<Name>)> = Vec::with_capacity(entries.len().min(f.name_count()));
    let mut position: HashMap<Name, usize> = HashMap::new();
    let mut cur = FragOutcome::Fragment(f.clone());
    for (i, x) in entries.iter().enumerate() {
        cur = cur.then(&x.permission);
        let name = match &cur {
            FragOutcome::Fragment(next) => Some(next.current().clone()),
            FragOutcome::Unknown if i + 1 == entries.len() => None,
            _ => return Err(SaError::CorruptHistory(x.at)),
        };
        match name.as_ref().and_then(|n| position.get(n).copied()) {
            Some(k) => {
                for (_, dropped) in kept.drain(k + 1..) {
                    if let Some(d) = dropped {
                        position.remove(&d);
                    }
                }
                kept[k].0.at = x.at;
            }
            None => {
                if let Some(n) = &name {
                    position.insert(n.clone(), kept.len());
                }
                kept.push((x.clone(), name));
            }
        }
    }
    Ok(ExceptionList::from_parts_unchecked(
        e.base(),
        kept.into_iter().map(|(x, _)| x).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{self, complete_perm};
    use crate::sa::{build_fragment, FragmentStrategy, StateId, Timestamp};

    fn exc(base: u64, chrono: &[(usize, u64)]) -> ExceptionList {
        ExceptionList::from_chronological(
            Timestamp(base),
            chrono.iter().map(|&(i, t)| (complete_perm(i), Timestamp(t))),
        )
        .unwrap()
    }

    #[test]
    fn loop_free_unchanged() {
        let m = catalog::complete(3);
        let f = build_fragment(&m, &"q0".into(), FragmentStrategy::Full);
        let e = exc(1, &[(1, 3), (2, 4)]);
        assert_eq!(compress_exception(&e, &f).unwrap(), e);
    }

    #[test]
    fn oscillation_on_two_states() {
        let m = catalog::complete(2);
        let f = build_fragment(&m, &"q0".into(), FragmentStrategy::Full);
        // Oldest first: (p1,5) (p0,7) (p1,9); visits q1, q0, q1.
        let e = exc(1, &[(1, 5), (0, 7), (1, 9)]);
        let c = compress_exception(&e, &f).unwrap();
        assert_eq!(c, exc(1, &[(1, 9)]));
        let q0 = StateId::from("q0");
        assert_eq!(m.run(&q0, &c).unwrap(), m.run(&q0, &e).unwrap());
    }

    #[test]
    fn returning_to_start_keeps_head() {
        let m = catalog::complete(2);
        let f = build_fragment(&m, &"q0".into(), FragmentStrategy::Full);
        let e = exc(1, &[(1, 5), (0, 7)]);
        let c = compress_exception(&e, &f).unwrap();
        assert_eq!(c, e);
        assert_eq!(c.ts_last(), Timestamp(7));
    }

    #[test]
    fn final_unknown_is_kept() {
        let m = catalog::complete(3);
        let f = build_fragment(&m, &"q0".into(), FragmentStrategy::Radius(1));
        let e = exc(1, &[(1, 2), (0, 3), (1, 4), (2, 5)]);
        let c = compress_exception(&e, &f).unwrap();
        assert_eq!(c.ts_last(), Timestamp(5));
        assert!(c.len() <= f.name_count());
        assert_eq!(m.run(&"q0".into(), &c).unwrap(), m.run(&"q0".into(), &e).unwrap());
    }

    #[test]
    fn undefined_replay_is_corrupt() {
        let m = catalog::complete(2);
        let f = build_fragment(&m, &"q0".into(), FragmentStrategy::Minimal);
        let e = exc(1, &[(1, 5), (0, 7)]);
        assert!(matches!(compress_exception(&e, &f), Err(SaError::CorruptHistory(_))));
    }
}
