use std::collections::HashSet;

use proptest::prelude::*;

use qlab_core::mempool::Admission;
use qlab_core::{
    codec, quorum_sizes, Authenticator, Block, Command, FaultModel, KvStore, Mempool, NodeId,
    QuorumCertificate, Vote, VoteKind,
};

fn cmd(client: u64, seq: u64) -> Command {
    Command::new(
        client,
        seq,
        format!("k{client}").into_bytes(),
        seq.to_le_bytes().to_vec(),
    )
}

fn chain(len: usize) -> Vec<Block> {
    let mut out = vec![Block::genesis()];
    for h in 1..=len as u64 {
        let parent = out.last().unwrap().clone();
        out.push(Block::child_of(
            &parent,
            vec![cmd(h, 0)],
            NodeId((h % 4) as u32),
            h,
        ));
    }
    out
}

proptest! {
    #[test]
    fn byzantine_quorums_share_an_honest_node(n in 4usize..200) {
        let q = quorum_sizes(n, FaultModel::Byzantine).unwrap();
        prop_assert!(n > 3 * q.f);
        // any two quorums overlap in at least f + 1 nodes
        prop_assert!(2 * q.byzantine_quorum > n + q.f);
        prop_assert!(q.byzantine_quorum <= n - q.f);
    }

    #[test]
    fn majority_quorums_intersect(n in 1usize..200) {
        let q = quorum_sizes(n, FaultModel::Crash).unwrap();
        prop_assert!(2 * q.majority_quorum > n);
        prop_assert!(q.majority_quorum <= n - q.f);
    }

    #[test]
    fn blocks_survive_the_codec(len in 1usize..20, payload in proptest::collection::vec(any::<u8>(), 0..64)) {
        let mut c = chain(len);
        let tip = c.pop().unwrap();
        let tip = Block { commands: vec![Command::new(9, 9, payload.clone(), payload)], ..tip };
        let back: Block = codec::decode(&codec::encode(&tip)).unwrap();
        prop_assert_eq!(back.hash(), tip.hash());
        prop_assert_eq!(back, tip);
    }

    #[test]
    fn mempool_never_returns_a_request_twice(ops in proptest::collection::vec((0u64..5, 0u64..5, any::<bool>()), 1..100)) {
        let mut pool = Mempool::default();
        let mut seen = HashSet::new();
        for (client, seq, take) in ops {
            pool.push(cmd(client, seq));
            if take {
                for c in pool.take(2) {
                    prop_assert!(seen.insert(c.request_id()));
                    pool.commit_commands(std::slice::from_ref(&c));
                }
            }
        }
    }
}

#[test]
fn chain_links_by_hash() {
    let c = chain(5);
    for w in c.windows(2) {
        assert_eq!(w[1].parent_hash, w[0].hash());
        assert_eq!(w[1].height, w[0].height + 1);
    }
    let forked = Block::child_of(&c[2], vec![cmd(99, 0)], NodeId(1), 3);
    assert_ne!(forked.hash(), c[3].hash());
}

#[test]
fn certificates_need_distinct_matching_votes() {
    let q = quorum_sizes(4, FaultModel::Byzantine).unwrap();
    let auth = Authenticator::hashed(3);
    let b = chain(1).pop().unwrap();
    let votes: Vec<Vote> = (0..3)
        .map(|i| Vote::new(VoteKind::Prepare, b.hash(), 1, NodeId(i), &auth))
        .collect();
    assert!(votes.iter().all(|v| v.verify(&auth)));
    let qc = QuorumCertificate::from_votes(&votes, q.byzantine_quorum).unwrap();
    assert!(qc.is_valid(&q));
    assert!(QuorumCertificate::from_votes(&votes[..2], q.byzantine_quorum).is_err());
    let dup = vec![votes[0].clone(), votes[1].clone(), votes[1].clone()];
    assert!(QuorumCertificate::from_votes(&dup, q.byzantine_quorum).is_err());
    let mut mixed = votes.clone();
    mixed[2] = Vote::new(VoteKind::Prepare, b.hash(), 2, NodeId(2), &auth);
    assert!(QuorumCertificate::from_votes(&mixed, q.byzantine_quorum).is_err());
    let forged = Vote {
        voter: NodeId(3),
        ..votes[0].clone()
    };
    assert!(!forged.verify(&auth));
}

#[test]
fn committed_requests_are_not_readmitted() {
    let mut pool = Mempool::default();
    let b = Block::child_of(&Block::genesis(), vec![cmd(1, 1)], NodeId(0), 1);
    assert_eq!(pool.push(cmd(1, 1)), Admission::Added);
    assert_eq!(pool.push(cmd(1, 1)), Admission::AlreadyPending);
    pool.mark_committed(&b);
    assert!(pool.is_empty());
    assert_eq!(pool.push(cmd(1, 1)), Admission::AlreadyCommitted);
}

#[test]
fn store_applies_blocks_in_order() {
    let mut kv = KvStore::default();
    let g = Block::genesis();
    let b1 = Block::child_of(
        &g,
        vec![Command::new(1, 0, b"x".to_vec(), b"1".to_vec())],
        NodeId(0),
        1,
    );
    let b2 = Block::child_of(
        &b1,
        vec![Command::new(2, 0, b"x".to_vec(), b"2".to_vec())],
        NodeId(1),
        2,
    );
    kv.apply(&b1);
    kv.apply(&b2);
    assert_eq!(kv.get(b"x"), Some(&b"2"[..]));
    assert_eq!((kv.len(), kv.applied()), (1, 2));
}
