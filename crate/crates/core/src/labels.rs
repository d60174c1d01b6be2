use crate::data::InteractionRecord;
use crate::error::{Error, Result};
use crate::graph::BipartiteGraph;

/// Held-out relevant items per user (validation or test ground truth).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EvalLabels {
    per_user: Vec<Vec<usize>>,
}

impl EvalLabels {
    pub fn new(mut per_user: Vec<Vec<usize>>) -> Self {
        for items in &mut per_user {
            items.sort_unstable();
            items.dedup();
        }
        EvalLabels { per_user }
    }

    /// Maps held-out records onto the graph's index spaces.
    pub fn from_records(graph: &BipartiteGraph, records: &[InteractionRecord]) -> Result<Self> {
        let mut per_user = vec![Vec::new(); graph.num_users()];
        for r in records {
            let u = graph.user_index(&r.user).ok_or_else(|| {
                Error::InvalidArgument(format!("held-out user {} not in graph", r.user))
            })?;
            let i = graph.item_index(&r.item).ok_or_else(|| {
                Error::InvalidArgument(format!("held-out item {} not in graph", r.item))
            })?;
            per_user[u].push(i);
        }
        Ok(Self::new(per_user))
    }

    pub fn num_users(&self) -> usize {
        self.per_user.len()
    }

    /// Relevant items of `u`, ascending.
    pub fn items(&self, u: usize) -> &[usize] {
        self.per_user.get(u).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn has_relevant(&self, u: usize) -> bool {
        !self.items(u).is_empty()
    }

    pub fn is_relevant(&self, u: usize, item: usize) -> bool {
        self.items(u).binary_search(&item).is_ok()
    }

    /// Users with at least one relevant item.
    pub fn users_with_relevant(&self) -> Vec<usize> {
        (0..self.per_user.len())
            .filter(|&u| self.has_relevant(u))
            .collect()
    }

    pub fn set_items(&mut self, u: usize, mut items: Vec<usize>) {
        items.sort_unstable();
        items.dedup();
        self.per_user[u] = items;
    }
}
