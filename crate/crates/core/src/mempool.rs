use std::collections::{BTreeMap, HashMap, HashSet};

use crate::types::{Block, Command};

pub type RequestId = (u64, u64);

/// Pending client commands in arrival order, with exactly-once filtering on
/// `(client_id, sequence)`.
#[derive(Clone, Debug, Default)]
pub struct Mempool {
    pending: BTreeMap<u64, Command>,
    index: HashMap<RequestId, u64>,
    committed: HashSet<RequestId>,
    next: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Admission {
    Added,
    AlreadyPending,
    AlreadyCommitted,
}

impl Mempool {
    pub fn push(&mut self, cmd: Command) -> Admission {
        let id = cmd.request_id();
        if self.committed.contains(&id) {
            return Admission::AlreadyCommitted;
        }
        if self.index.contains_key(&id) {
            return Admission::AlreadyPending;
        }
        self.index.insert(id, self.next);
        self.pending.insert(self.next, cmd);
        self.next += 1;
        Admission::Added
    }

    /// Removes and returns up to `max` commands, oldest first.
    pub fn take(&mut self, max: usize) -> Vec<Command> {
        let keys: Vec<u64> = self.pending.keys().take(max).copied().collect();
        keys.into_iter()
            .filter_map(|k| self.pending.remove(&k))
            .inspect(|c| {
                self.index.remove(&c.request_id());
            })
            .collect()
    }

    /// Returns up to `max` pending commands not in `skip`, leaving them queued.
    pub fn peek(&self, max: usize, skip: &HashSet<RequestId>) -> Vec<Command> {
        self.pending
            .values()
            .filter(|c| !skip.contains(&c.request_id()))
            .take(max)
            .cloned()
            .collect()
    }

    /// Drops the block's commands from the queue and remembers them as
    /// committed.
    pub fn mark_committed(&mut self, block: &Block) {
        self.commit_commands(&block.commands);
    }

    pub fn commit_commands(&mut self, commands: &[Command]) {
        for c in commands {
            self.remove(c.request_id());
            self.committed.insert(c.request_id());
        }
    }

    /// Drops a pending command without marking it committed.
    pub fn remove(&mut self, id: RequestId) -> bool {
        match self.index.remove(&id) {
            Some(k) => self.pending.remove(&k).is_some(),
            None => false,
        }
    }

    pub fn is_committed(&self, id: RequestId) -> bool {
        self.committed.contains(&id)
    }

    pub fn contains(&self, id: RequestId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }
}
