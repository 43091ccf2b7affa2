use std::cmp::Ordering;
use std::collections::BTreeMap;

use super::weights::quality_cmp;
use crate::problems::Candidate;
use crate::Scalar;

/// Best candidate seen so far for each training instance.
#[derive(Debug, Clone, PartialEq)]
pub struct LookupTable<S> {
    eps: S,
    entries: BTreeMap<usize, Candidate<S>>,
}

impl<S: Scalar> LookupTable<S> {
    pub fn new(eps: S) -> Self {
        Self { eps, entries: BTreeMap::new() }
    }

    pub fn get(&self, key: usize) -> Option<&Candidate<S>> {
        self.entries.get(&key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Candidate<S>)> {
        self.entries.iter().map(|(&k, v)| (k, v))
    }

    /// Offers a candidate; it replaces the entry only if strictly better.
    /// Returns whether the table changed.
    pub fn offer(&mut self, key: usize, cand: &Candidate<S>) -> bool {
        match self.entries.get(&key) {
            Some(cur) if quality_cmp(cand, cur, self.eps) != Ordering::Greater => false,
            _ => {
                self.entries.insert(key, cand.clone());
                true
            }
        }
    }

    /// Offers every candidate and keeps the best.
    pub fn offer_all<'a>(&mut self, key: usize, cands: impl IntoIterator<Item = &'a Candidate<S>>) -> bool
    where
        S: 'a,
    {
        let mut changed = false;
        for c in cands {
            changed |= self.offer(key, c);
        }
        changed
    }

    /// Best feasible objective stored for `key`.
    pub fn feasible_objective(&self, key: usize) -> Option<S> {
        self.entries.get(&key).filter(|c| c.is_feasible(self.eps)).map(|c| c.objective)
    }
}
