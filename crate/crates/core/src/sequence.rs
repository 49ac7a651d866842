//! Augmented states and infinite action sequences.
//!
//! An [`AugmentedState`] is what the agent actually knows between
//! observations: the last observed state and every action executed since.
//! An [`ActionSequence`] is a finite prefix plus a rule that extends it to an
//! infinite sequence, which is all the learner ever commits to.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Last observed state plus the actions executed since, or the termination
/// sentinel (`anchor == None`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AugmentedState {
    anchor: Option<usize>,
    tail: Vec<usize>,
}

impl AugmentedState {
    /// A freshly observed state with no pending actions.
    pub fn observed(state: usize) -> Self {
        Self {
            anchor: Some(state),
            tail: Vec::new(),
        }
    }

    pub fn with_tail(state: usize, tail: Vec<usize>) -> Self {
        Self {
            anchor: Some(state),
            tail,
        }
    }

    /// The termination sentinel.
    pub fn terminal() -> Self {
        Self {
            anchor: None,
            tail: Vec::new(),
        }
    }

    pub fn anchor(&self) -> Option<usize> {
        self.anchor
    }

    pub fn tail(&self) -> &[usize] {
        &self.tail
    }

    /// Number of actions executed since the last observation.
    pub fn depth(&self) -> usize {
        self.tail.len()
    }

    pub fn is_terminal(&self) -> bool {
        self.anchor.is_none()
    }

    /// `x ⊕ a`. The sentinel absorbs every action.
    pub fn push(&self, action: usize) -> Self {
        if self.is_terminal() {
            return self.clone();
        }
        let mut tail = self.tail.clone();
        tail.push(action);
        Self {
            anchor: self.anchor,
            tail,
        }
    }
}

impl fmt::Display for AugmentedState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.anchor {
            None => write!(f, "∅"),
            Some(s) => {
                write!(f, "({s}")?;
                for (i, a) in self.tail.iter().enumerate() {
                    write!(f, "{}{a}", if i == 0 { "; " } else { ", " })?;
                }
                write!(f, ")")
            }
        }
    }
}

/// How a finite prefix is extended to an infinite sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Continuation {
    /// The last prefix action is repeated forever.
    RepeatLast,
    /// The prefix is repeated periodically.
    CyclePrefix,
}

/// A finite prefix with an infinite continuation rule.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionSequence {
    prefix: Vec<usize>,
    continuation: Continuation,
}

impl ActionSequence {
    pub fn new(prefix: Vec<usize>, continuation: Continuation) -> Result<Self> {
        if prefix.is_empty() {
            return Err(Error::invalid("prefix", "action sequences need at least one action"));
        }
        Ok(Self {
            prefix,
            continuation,
        })
    }

    /// `prefix` followed by its last action forever.
    ///
    /// # Panics
    /// If `prefix` is empty.
    pub fn repeat_last(prefix: Vec<usize>) -> Self {
        Self::new(prefix, Continuation::RepeatLast).expect("non-empty prefix")
    }

    /// `prefix` repeated periodically.
    ///
    /// # Panics
    /// If `prefix` is empty.
    pub fn cycle(prefix: Vec<usize>) -> Self {
        Self::new(prefix, Continuation::CyclePrefix).expect("non-empty prefix")
    }

    /// The constant sequence `(a, a, a, ...)`.
    pub fn constant(action: usize) -> Self {
        Self::repeat_last(vec![action])
    }

    pub fn prefix(&self) -> &[usize] {
        &self.prefix
    }

    pub fn continuation(&self) -> Continuation {
        self.continuation
    }

    pub fn first(&self) -> usize {
        self.prefix[0]
    }

    /// Element `k` (zero-based) of the infinite sequence.
    pub fn action_at(&self, k: usize) -> usize {
        let len = self.prefix.len();
        if k < len {
            return self.prefix[k];
        }
        match self.continuation {
            Continuation::RepeatLast => self.prefix[len - 1],
            Continuation::CyclePrefix => self.prefix[k % len],
        }
    }

    /// The sequence with its first `n` elements dropped.
    pub fn shifted(&self, n: usize) -> Self {
        let len = self.prefix.len();
        match self.continuation {
            Continuation::RepeatLast => {
                let start = n.min(len - 1);
                Self::repeat_last(self.prefix[start..].to_vec())
            }
            Continuation::CyclePrefix => {
                let r = n % len;
                let mut prefix = self.prefix[r..].to_vec();
                prefix.extend_from_slice(&self.prefix[..r]);
                Self::cycle(prefix)
            }
        }
    }

    /// The sequence without its first action.
    pub fn tail(&self) -> Self {
        self.shifted(1)
    }

    /// Iterator over the infinite sequence.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..).map(move |k| self.action_at(k))
    }

    /// Shortest equivalent representation. Trailing repeats of a
    /// repeat-last prefix are dropped and cycles are reduced to their period.
    pub fn canonical(&self) -> Self {
        match self.continuation {
            Continuation::RepeatLast => {
                let mut prefix = self.prefix.clone();
                while prefix.len() > 1 && prefix[prefix.len() - 1] == prefix[prefix.len() - 2] {
                    prefix.pop();
                }
                Self::repeat_last(prefix)
            }
            Continuation::CyclePrefix => {
                let len = self.prefix.len();
                let period = (1..=len)
                    .find(|&p| len.is_multiple_of(p) && (p..len).all(|i| self.prefix[i] == self.prefix[i - p]))
                    .unwrap_or(len);
                if period == 1 {
                    Self::constant(self.prefix[0])
                } else {
                    Self::cycle(self.prefix[..period].to_vec())
                }
            }
        }
    }

    /// Renders the sequence with the given action names, e.g. `"left right…"`.
    pub fn display_with(&self, names: &[String]) -> String {
        let body: Vec<&str> = self.prefix.iter().map(|&a| names[a].as_str()).collect();
        match self.continuation {
            Continuation::RepeatLast => format!("{}…", body.join(" ")),
            Continuation::CyclePrefix => format!("({})*", body.join(" ")),
        }
    }
}

impl fmt::Display for ActionSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let body: Vec<String> = self.prefix.iter().map(ToString::to_string).collect();
        match self.continuation {
            Continuation::RepeatLast => write!(f, "{}…", body.join(" ")),
            Continuation::CyclePrefix => write!(f, "({})*", body.join(" ")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_prefix_rejected() {
        assert!(ActionSequence::new(vec![], Continuation::RepeatLast).is_err());
    }

    #[test]
    fn continuations() {
        let r = ActionSequence::repeat_last(vec![0, 1]);
        assert_eq!(r.iter().take(5).collect::<Vec<_>>(), vec![0, 1, 1, 1, 1]);
        let c = ActionSequence::cycle(vec![0, 1, 2]);
        assert_eq!(c.iter().take(7).collect::<Vec<_>>(), vec![0, 1, 2, 0, 1, 2, 0]);
    }

    #[test]
    fn canonical_forms() {
        assert_eq!(
            ActionSequence::repeat_last(vec![2, 0, 0, 0]).canonical(),
            ActionSequence::repeat_last(vec![2, 0])
        );
        assert_eq!(
            ActionSequence::cycle(vec![1, 0, 1, 0]).canonical(),
            ActionSequence::cycle(vec![1, 0])
        );
        assert_eq!(ActionSequence::cycle(vec![3, 3]).canonical(), ActionSequence::constant(3));
    }

    #[test]
    fn augmented_push_and_sentinel() {
        let x = AugmentedState::observed(2).push(0).push(1);
        assert_eq!(x.depth(), 2);
        assert_eq!(x.to_string(), "(2; 0, 1)");
        let t = AugmentedState::terminal();
        assert_eq!(t.push(3), t);
        assert_eq!(t.to_string(), "∅");
    }

    fn seq_strategy() -> impl Strategy<Value = ActionSequence> {
        (prop::collection::vec(0usize..4, 1..6), any::<bool>()).prop_map(|(p, cyc)| {
            if cyc {
                ActionSequence::cycle(p)
            } else {
                ActionSequence::repeat_last(p)
            }
        })
    }

    proptest! {
        #[test]
        fn shift_agrees_with_indexing(seq in seq_strategy(), n in 0usize..12) {
            let shifted = seq.shifted(n);
            for k in 0..20 {
                prop_assert_eq!(shifted.action_at(k), seq.action_at(n + k));
            }
        }

        #[test]
        fn canonical_is_equivalent(seq in seq_strategy()) {
            let c = seq.canonical();
            for k in 0..30 {
                prop_assert_eq!(c.action_at(k), seq.action_at(k));
            }
            prop_assert!(c.prefix().len() <= seq.prefix().len());
        }
    }
}
