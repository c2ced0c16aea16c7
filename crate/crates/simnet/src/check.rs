use qlab_core::{Block, Digest};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AgreementReport {
    pub ok: bool,
    /// First `(node_a, node_b, height)` where two chains diverge.
    pub conflict: Option<(usize, usize, u64)>,
    pub min_height: u64,
    pub max_height: u64,
}

/// Checks that every pair of included chains agrees on every height both
/// have committed, i.e. each is a prefix of the other.
pub fn chains_prefix_consistent(chains: &[Vec<Block>], include: &[bool]) -> AgreementReport {
    let hashes: Vec<(usize, Vec<Digest>)> = chains
        .iter()
        .enumerate()
        .filter(|(i, _)| include.get(*i).copied().unwrap_or(true))
        .map(|(i, c)| (i, c.iter().map(Block::hash).collect()))
        .collect();
    let heights: Vec<u64> = hashes.iter().map(|(_, h)| h.len() as u64).collect();
    let mut conflict = None;
    // comparing every chain against the longest is enough for prefix order
    if let Some((li, longest)) = hashes
        .iter()
        .max_by_key(|(i, h)| (h.len(), std::cmp::Reverse(*i)))
    {
        'outer: for (i, h) in &hashes {
            for (k, d) in h.iter().enumerate() {
                if longest[k] != *d {
                    conflict = Some((*li.min(i), *li.max(i), k as u64 + 1));
                    break 'outer;
                }
            }
        }
    }
    AgreementReport {
        ok: conflict.is_none(),
        conflict,
        min_height: heights.iter().copied().min().unwrap_or(0),
        max_height: heights.iter().copied().max().unwrap_or(0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use qlab_core::{Command, NodeId};

    fn chain(tags: &[u64]) -> Vec<Block> {
        let mut parent = Block::genesis();
        tags.iter()
            .map(|&t| {
                let b = Block::child_of(
                    &parent,
                    vec![Command::new(t, 0, vec![], vec![])],
                    NodeId(0),
                    0,
                );
                parent = b.clone();
                b
            })
            .collect()
    }

    #[test]
    fn prefixes_agree() {
        let r = chains_prefix_consistent(&[chain(&[1, 2, 3]), chain(&[1, 2]), vec![]], &[true; 3]);
        assert!(r.ok);
        assert_eq!((r.min_height, r.max_height), (0, 3));
    }

    #[test]
    fn divergence_detected_and_excludable() {
        let chains = [chain(&[1, 2, 3]), chain(&[1, 9])];
        let r = chains_prefix_consistent(&chains, &[true, true]);
        assert_eq!(r.conflict, Some((0, 1, 2)));
        assert!(chains_prefix_consistent(&chains, &[true, false]).ok);
    }
}
