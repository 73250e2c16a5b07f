use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::ser::SerializeStruct;
use serde::{Deserialize, Serialize, Serializer};

use super::{Exercise, ExceptionList, Name, Permission, SaError, Timestamp};

/// Target of a fragment transition: a named state, or `∘` (unknown).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Target {
    Name(Name),
    Unknown,
}

/// Transitions emanating from one named state of a fragment.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NameDef {
    pub stationary: BTreeSet<Permission>,
    pub trans: BTreeMap<Permission, Target>,
}

pub type Defs = BTreeMap<Name, NameDef>;

/// Partial transition diagram plus a current state name.
///
/// The diagram is shared, so stepping a fragment only swaps the current
/// name.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Deserialize)]
#[serde(try_from = "FragmentRepr")]
pub struct SAFragment {
    defs: Arc<Defs>,
    current: Name,
}

/// Result of stepping a fragment: a fragment, `∘`, or undefined.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum FragOutcome {
    Fragment(SAFragment),
    Unknown,
    Undefined,
}

impl FragOutcome {
    pub fn fragment(&self) -> Option<&SAFragment> {
        match self {
            FragOutcome::Fragment(f) => Some(f),
            _ => None,
        }
    }

    pub fn into_fragment(self) -> Option<SAFragment> {
        match self {
            FragOutcome::Fragment(f) => Some(f),
            _ => None,
        }
    }

    /// Fragment or `∘`.
    pub fn is_defined(&self) -> bool {
        !matches!(self, FragOutcome::Undefined)
    }

    /// Steps further; `∘` and undefined absorb.
    pub fn then(self, p: &Permission) -> FragOutcome {
        match self {
            FragOutcome::Fragment(f) => f.step(p),
            _ => FragOutcome::Undefined,
        }
    }

    fn fold<'a>(self, entries: impl IntoIterator<Item = &'a Exercise>) -> FragOutcome {
        entries.into_iter().fold(self, |acc, x| acc.then(&x.permission))
    }
}

impl SAFragment {
    pub fn new(defs: Defs, current: Name) -> Result<Self, SaError> {
        Self::from_shared(Arc::new(defs), current)
    }

    pub fn from_shared(defs: Arc<Defs>, current: Name) -> Result<Self, SaError> {
        if !defs.contains_key(&current) {
            return Err(SaError::InvalidFragment(format!("current name {current} is not defined")));
        }
        for (n, def) in defs.iter() {
            if let Some(p) = def.stationary.iter().find(|p| def.trans.contains_key(*p)) {
                return Err(SaError::InvalidFragment(format!("{p} is both stationary and transitioning at {n}")));
            }
            for t in def.trans.values() {
                if let Target::Name(m) = t {
                    if !defs.contains_key(m) {
                        return Err(SaError::InvalidFragment(format!("{n} points to undefined name {m}")));
                    }
                }
            }
        }
        Ok(SAFragment { defs, current })
    }

    pub fn defs(&self) -> &Defs {
        &self.defs
    }

    pub fn shared_defs(&self) -> &Arc<Defs> {
        &self.defs
    }

    pub fn current(&self) -> &Name {
        &self.current
    }

    pub fn current_def(&self) -> &NameDef {
        &self.defs[&self.current]
    }

    pub fn name_count(&self) -> usize {
        self.defs.len()
    }

    /// Same diagram, different current name.
    pub fn at(&self, name: &Name) -> Option<SAFragment> {
        self.defs
            .contains_key(name)
            .then(|| SAFragment { defs: Arc::clone(&self.defs), current: name.clone() })
    }

    /// `F ⊳ p`.
    pub fn step(&self, p: &Permission) -> FragOutcome {
        let def = self.current_def();
        if def.stationary.contains(p) {
            return FragOutcome::Fragment(self.clone());
        }
        match def.trans.get(p) {
            Some(Target::Name(n)) => FragOutcome::Fragment(SAFragment { defs: Arc::clone(&self.defs), current: n.clone() }),
            Some(Target::Unknown) => FragOutcome::Unknown,
            None => FragOutcome::Undefined,
        }
    }

    /// `F ⊳ e`, all entries oldest-first.
    pub fn run(&self, e: &ExceptionList) -> FragOutcome {
        FragOutcome::Fragment(self.clone()).fold(e.chronological())
    }

    /// `F ⊳≤t e`: only entries with timestamp `≤ t`.
    pub fn run_upto(&self, t: Timestamp, e: &ExceptionList) -> Result<FragOutcome, SaError> {
        if !e.contains_time(t) {
            return Err(SaError::TimeNotInHistory(t));
        }
        Ok(FragOutcome::Fragment(self.clone()).fold(e.split_at_time(t).0))
    }

    /// `F ⊳>t e`: only entries with timestamp `> t`.
    pub fn run_after(&self, t: Timestamp, e: &ExceptionList) -> Result<FragOutcome, SaError> {
        if !e.contains_time(t) {
            return Err(SaError::TimeNotInHistory(t));
        }
        Ok(FragOutcome::Fragment(self.clone()).fold(e.split_at_time(t).1))
    }

    pub fn transition_count(&self) -> usize {
        self.defs.values().map(|d| d.stationary.len() + d.trans.len()).sum()
    }
}

#[derive(Deserialize)]
struct NameDefRepr {
    sp: Vec<Permission>,
    trans: BTreeMap<Permission, Option<Name>>,
}

#[derive(Deserialize)]
struct FragmentRepr {
    current: Name,
    defs: BTreeMap<Name, NameDefRepr>,
}

impl TryFrom<FragmentRepr> for SAFragment {
    type Error = SaError;

    fn try_from(r: FragmentRepr) -> Result<Self, Self::Error> {
        let defs = r
            .defs
            .into_iter()
            .map(|(n, d)| {
                let trans = d
                    .trans
                    .into_iter()
                    .map(|(p, t)| (p, t.map_or(Target::Unknown, Target::Name)))
                    .collect();
                (n, NameDef { stationary: d.sp.into_iter().collect(), trans })
            })
            .collect();
        SAFragment::new(defs, r.current)
    }
}

/// Writes the same shape as [`FragmentRepr`] without copying the diagram.
impl Serialize for SAFragment {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut m = s.serialize_struct("SAFragment", 2)?;
        m.serialize_field("current", &self.current)?;
        m.serialize_field("defs", &DefsOut(&self.defs))?;
        m.end()
    }
}

struct DefsOut<'a>(&'a Defs);

impl Serialize for DefsOut<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_map(self.0.iter().map(|(n, d)| (n, NameDefOut(d))))
    }
}

struct NameDefOut<'a>(&'a NameDef);

impl Serialize for NameDefOut<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut m = s.serialize_struct("NameDef", 2)?;
        m.serialize_field("sp", &self.0.stationary)?;
        m.serialize_field("trans", &TransOut(&self.0.trans))?;
        m.end()
    }
}

struct TransOut<'a>(&'a BTreeMap<Permission, Target>);

impl Serialize for TransOut<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_map(self.0.iter().map(|(p, t)| {
            let t = match t {
                Target::Name(m) => Some(m),
                Target::Unknown => None,
            };
            (p, t)
        }))
    }
}
