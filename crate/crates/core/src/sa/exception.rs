use serde::{Deserialize, Serialize};

use super::{Permission, SaError, Timestamp};

/// One exercised transitioning permission.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Exercise {
    pub permission: Permission,
    pub at: Timestamp,
}

/// History of transitioning permissions exercised since the last
/// synchronization: `e ::= Nil(t) | (p, t)·e`.
///
/// Entries are kept oldest-first in memory; the encoded form lists them
/// most-recent-first. Timestamps strictly increase from the base through
/// every entry.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "ExceptionRepr", into = "ExceptionRepr")]
pub struct ExceptionList {
    base: Timestamp,
    entries: Vec<Exercise>,
}

impl ExceptionList {
    pub fn nil(base: Timestamp) -> Self {
        ExceptionList { base, entries: Vec::new() }
    }

    pub fn from_chronological(
        base: Timestamp,
        entries: impl IntoIterator<Item = (Permission, Timestamp)>,
    ) -> Result<Self, SaError> {
        let mut e = ExceptionList::nil(base);
        for (p, t) in entries {
            e.push(p, t)?;
        }
        Ok(e)
    }

    /// `e ← (p, t)·e`. Rejects `t ≤ TSLast(e)`.
    pub fn push(&mut self, permission: Permission, at: Timestamp) -> Result<(), SaError> {
        let last = self.ts_last();
        if at <= last {
            return Err(SaError::NonIncreasingTimestamp { prev: last, next: at });
        }
        self.entries.push(Exercise { permission, at });
        Ok(())
    }

    pub fn base(&self) -> Timestamp {
        self.base
    }

    pub fn ts_first(&self) -> Timestamp {
        self.base
    }

    pub fn ts_last(&self) -> Timestamp {
        self.entries.last().map_or(self.base, |x| x.at)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_nil(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn head(&self) -> Option<&Exercise> {
        self.entries.last()
    }

    pub fn chronological(&self) -> &[Exercise] {
        &self.entries
    }

    pub fn most_recent_first(&self) -> impl Iterator<Item = &Exercise> {
        self.entries.iter().rev()
    }

    /// `Times(e)`, including the base timestamp.
    pub fn times(&self) -> impl Iterator<Item = Timestamp> + '_ {
        std::iter::once(self.base).chain(self.entries.iter().map(|x| x.at))
    }

    pub fn contains_time(&self, t: Timestamp) -> bool {
        t == self.base || self.entries.binary_search_by_key(&t, |x| x.at).is_ok()
    }

    /// Entries with timestamp `≤ t` and entries with timestamp `> t`.
    pub fn split_at_time(&self, t: Timestamp) -> (&[Exercise], &[Exercise]) {
        let k = self.entries.partition_point(|x| x.at <= t);
        self.entries.split_at(k)
    }

    pub(crate) fn from_parts_unchecked(base: Timestamp, entries: Vec<Exercise>) -> Self {
        debug_assert!(entries.windows(2).all(|w| w[0].at < w[1].at));
        debug_assert!(entries.first().map_or(true, |x| x.at > base));
        ExceptionList { base, entries }
    }
}

#[derive(Serialize, Deserialize)]
struct ExceptionRepr {
    base: u64,
    entries: Vec<(Permission, u64)>,
}

impl TryFrom<ExceptionRepr> for ExceptionList {
    type Error = SaError;

    fn try_from(r: ExceptionRepr) -> Result<Self, Self::Error> {
        ExceptionList::from_chronological(
            Timestamp(r.base),
            r.entries.into_iter().rev().map(|(p, t)| (p, Timestamp(t))),
        )
    }
}

impl From<ExceptionList> for ExceptionRepr {
    fn from(e: ExceptionList) -> Self {
        ExceptionRepr {
            base: e.base.0,
            entries: e.entries.into_iter().rev().map(|x| (x.permission, x.at.0)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Permission {
        format!("GET coap://rs/{s}").parse().unwrap()
    }

    #[test]
    fn first_and_last() {
        let nil = ExceptionList::nil(Timestamp(4));
        assert_eq!(nil.ts_first(), Timestamp(4));
        assert_eq!(nil.ts_last(), Timestamp(4));
        let e = ExceptionList::from_chronological(Timestamp(1), [(p("a"), Timestamp(5)), (p("b"), Timestamp(9))])
            .unwrap();
        assert_eq!(e.ts_first(), Timestamp(1));
        assert_eq!(e.ts_last(), Timestamp(9));
        assert_eq!(e.times().collect::<Vec<_>>(), vec![Timestamp(1), Timestamp(5), Timestamp(9)]);
        assert!(e.contains_time(Timestamp(5)));
        assert!(!e.contains_time(Timestamp(6)));
    }

    #[test]
    fn rejects_non_increasing() {
        assert!(ExceptionList::from_chronological(Timestamp(5), [(p("a"), Timestamp(5))]).is_err());
        let mut e = ExceptionList::nil(Timestamp(1));
        e.push(p("a"), Timestamp(3)).unwrap();
        assert!(matches!(e.push(p("b"), Timestamp(2)), Err(SaError::NonIncreasingTimestamp { .. })));
    }

    #[test]
    fn encodes_most_recent_first() {
        let e = ExceptionList::from_chronological(Timestamp(1), [(p("a"), Timestamp(5)), (p("b"), Timestamp(9))])
            .unwrap();
        let json = serde_json::to_string(&e).unwrap();
        assert_eq!(
            json,
            r#"{"base":1,"entries":[["GET coap://rs/b",9],["GET coap://rs/a",5]]}"#
        );
        let back: ExceptionList = serde_json::from_str(&json).unwrap();
        assert_eq!(back, e);
        let bad = r#"{"base":1,"entries":[["GET coap://rs/a",5],["GET coap://rs/b",9]]}"#;
        assert!(serde_json::from_str::<ExceptionList>(bad).is_err());
    }

    #[test]
    fn split() {
        let e = ExceptionList::from_chronological(Timestamp(1), [(p("a"), Timestamp(5)), (p("b"), Timestamp(9))])
            .unwrap();
        let (lo, hi) = e.split_at_time(Timestamp(5));
        assert_eq!(lo.len(), 1);
        assert_eq!(hi.len(), 1);
        let (lo, hi) = e.split_at_time(Timestamp(1));
        assert!(lo.is_empty());
        assert_eq!(hi.len(), 2);
    }
}
