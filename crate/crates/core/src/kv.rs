use std::collections::BTreeMap;

use crate::types::Block;

/// Single-version key-value map that committed blocks are applied to.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KvStore {
    map: BTreeMap<Vec<u8>, Vec<u8>>,
    applied: u64,
}

impl KvStore {
    pub fn apply(&mut self, block: &Block) {
        for cmd in &block.commands {
            self.map.insert(cmd.key.clone(), cmd.value.clone());
            self.applied += 1;
        }
    }

    pub fn get(&self, key: &[u8]) -> Option<&[u8]> {
        self.map.get(key).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Number of commands applied, overwrites included.
    pub fn applied(&self) -> u64 {
        self.applied
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Command, NodeId};

    #[test]
    fn later_writes_win() {
        let g = Block::genesis();
        let b = Block::child_of(
            &g,
            vec![
                Command::new(1, 1, b"a".to_vec(), b"1".to_vec()),
                Command::new(1, 2, b"a".to_vec(), b"2".to_vec()),
            ],
            NodeId(0),
            0,
        );
        let mut kv = KvStore::default();
        kv.apply(&b);
        assert_eq!(kv.get(b"a"), Some(&b"2"[..]));
        assert_eq!((kv.len(), kv.applied()), (1, 2));
    }
}
