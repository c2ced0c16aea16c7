use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::auth::{AuthTag, Authenticator};
use crate::codec;
use crate::quorum::QuorumConfig;
use crate::{Error, Result};

/// Index of a validator in the roster, in `[0, n)`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub type ClientId = u32;

/// 32-byte SHA-256 digest.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0; 32]);

    pub fn of(bytes: &[u8]) -> Digest {
        let out = Sha256::digest(bytes);
        let mut d = [0u8; 32];
        d.copy_from_slice(&out);
        Digest(d)
    }

    pub fn is_zero(&self) -> bool {
        *self == Digest::ZERO
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0[..4] {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

/// A client request. `(client_id, sequence)` identifies it within a run.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Command {
    pub key: Vec<u8>,
    pub value: Vec<u8>,
    pub client_id: u64,
    pub sequence: u64,
}

impl Command {
    pub fn new(client_id: u64, sequence: u64, key: Vec<u8>, value: Vec<u8>) -> Self {
        Self {
            key,
            value,
            client_id,
            sequence,
        }
    }

    pub fn request_id(&self) -> (u64, u64) {
        (self.client_id, self.sequence)
    }
}

impl fmt::Debug for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cmd(c{}#{})", self.client_id, self.sequence)
    }
}

/// A batch of commands at a height, hash-chained to its parent.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    pub parent_hash: Digest,
    pub commands: Vec<Command>,
    pub proposer: NodeId,
    pub view: u64,
}

impl Block {
    pub fn genesis() -> Block {
        Block {
            height: 0,
            parent_hash: Digest::ZERO,
            commands: Vec::new(),
            proposer: NodeId(0),
            view: 0,
        }
    }

    /// A block at `parent.height + 1` pointing at `parent`.
    pub fn child_of(parent: &Block, commands: Vec<Command>, proposer: NodeId, view: u64) -> Block {
        Block {
            height: parent.height + 1,
            parent_hash: parent.hash(),
            commands,
            proposer,
            view,
        }
    }

    /// Deterministic digest over every field.
    pub fn hash(&self) -> Digest {
        Digest::of(&codec::encode(self))
    }

    pub fn is_genesis(&self) -> bool {
        self.height == 0 && self.parent_hash.is_zero() && self.commands.is_empty()
    }
}

impl fmt::Debug for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Block(h={} v={} by {:?} {:?} cmds={})",
            self.height,
            self.view,
            self.proposer,
            self.hash(),
            self.commands.len()
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VoteKind {
    Prepare,
    PreCommit,
    Commit,
    Notarize,
    Ack,
}

/// A signed vote. A nil vote carries [`Digest::ZERO`] as its block hash.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vote {
    pub kind: VoteKind,
    pub block_hash: Digest,
    pub view: u64,
    pub voter: NodeId,
    pub auth: AuthTag,
}

impl Vote {
    pub fn new(
        kind: VoteKind,
        block_hash: Digest,
        view: u64,
        voter: NodeId,
        auth: &Authenticator,
    ) -> Vote {
        let bytes = Self::signing_bytes(kind, block_hash, view, voter);
        Vote {
            kind,
            block_hash,
            view,
            voter,
            auth: auth.authenticate(&bytes, voter),
        }
    }

    fn signing_bytes(kind: VoteKind, block_hash: Digest, view: u64, voter: NodeId) -> Vec<u8> {
        codec::encode(&(kind, block_hash, view, voter))
    }

    pub fn verify(&self, auth: &Authenticator) -> bool {
        let bytes = Self::signing_bytes(self.kind, self.block_hash, self.view, self.voter);
        auth.verify(&self.auth, &bytes, self.voter)
    }

    pub fn is_nil(&self) -> bool {
        self.block_hash.is_zero()
    }
}

/// Matching votes of one kind meeting a quorum threshold. Voters are kept
/// sorted and distinct.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuorumCertificate {
    pub kind: VoteKind,
    pub block_hash: Digest,
    pub view: u64,
    pub voters: Vec<NodeId>,
}

impl QuorumCertificate {
    /// Certificate with no voters; stands for the genesis block.
    pub fn genesis(kind: VoteKind) -> Self {
        QuorumCertificate {
            kind,
            block_hash: Block::genesis().hash(),
            view: 0,
            voters: Vec::new(),
        }
    }

    pub fn is_genesis(&self) -> bool {
        self.voters.is_empty() && self.view == 0
    }

    /// Builds a certificate from votes, checking that they match and that
    /// enough distinct voters are present.
    pub fn from_votes(votes: &[Vote], threshold: usize) -> Result<Self> {
        let first = votes
            .first()
            .ok_or_else(|| Error::Certificate("no votes".into()))?;
        let mut voters = BTreeSet::new();
        for v in votes {
            if v.kind != first.kind || v.block_hash != first.block_hash || v.view != first.view {
                return Err(Error::Certificate("votes do not match".into()));
            }
            if !voters.insert(v.voter) {
                return Err(Error::Certificate(format!("duplicate voter {:?}", v.voter)));
            }
        }
        if voters.len() < threshold {
            return Err(Error::Certificate(format!(
                "{} voters below threshold {threshold}",
                voters.len()
            )));
        }
        Ok(QuorumCertificate {
            kind: first.kind,
            block_hash: first.block_hash,
            view: first.view,
            voters: voters.into_iter().collect(),
        })
    }

    /// Structural validity against a roster: distinct, in range, at least
    /// the byzantine quorum.
    pub fn is_valid(&self, quorum: &QuorumConfig) -> bool {
        if self.is_genesis() {
            return true;
        }
        let distinct = self.voters.windows(2).all(|w| w[0] < w[1]);
        distinct
            && self.voters.iter().all(|v| (v.0 as usize) < quorum.n)
            && self.voters.len() >= quorum.byzantine_quorum
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cmd(c: u64, s: u64) -> Command {
        Command::new(c, s, b"k".to_vec(), b"v".to_vec())
    }

    #[test]
    fn genesis_is_fixed() {
        let g = Block::genesis();
        assert_eq!(g.height, 0);
        assert!(g.parent_hash.is_zero());
        assert!(g.is_genesis());
        assert_eq!(g.hash(), Block::genesis().hash());
    }

    #[test]
    fn hash_covers_every_field() {
        let g = Block::genesis();
        let b = Block::child_of(&g, vec![cmd(1, 1)], NodeId(0), 1);
        assert_eq!(b.parent_hash, g.hash());
        let mut other = b.clone();
        other.view = 2;
        assert_ne!(b.hash(), other.hash());
        let mut other = b.clone();
        other.proposer = NodeId(1);
        assert_ne!(b.hash(), other.hash());
        let mut other = b.clone();
        other.commands[0].value = b"w".to_vec();
        assert_ne!(b.hash(), other.hash());
    }

    #[test]
    fn certificate_from_votes() {
        let auth = Authenticator::hashed(7);
        let h = Block::genesis().hash();
        let votes: Vec<Vote> = (0..3)
            .map(|i| Vote::new(VoteKind::Prepare, h, 1, NodeId(i), &auth))
            .collect();
        let qc = QuorumCertificate::from_votes(&votes, 3).unwrap();
        assert_eq!(qc.voters, vec![NodeId(0), NodeId(1), NodeId(2)]);
        assert!(qc.is_valid(&crate::quorum_sizes(4, crate::FaultModel::Byzantine).unwrap()));
        assert!(QuorumCertificate::from_votes(&votes, 4).is_err());

        let mut dup = votes.clone();
        dup[2] = votes[0].clone();
        assert!(QuorumCertificate::from_votes(&dup, 2).is_err());

        let mut mixed = votes.clone();
        mixed[1] = Vote::new(VoteKind::Commit, h, 1, NodeId(1), &auth);
        assert!(QuorumCertificate::from_votes(&mixed, 2).is_err());
    }

    #[test]
    fn vote_auth_roundtrip() {
        let auth = Authenticator::hashed(3);
        let v = Vote::new(VoteKind::Commit, Digest::of(b"x"), 4, NodeId(2), &auth);
        assert!(v.verify(&auth));
        let mut forged = v.clone();
        forged.voter = NodeId(1);
        assert!(!forged.verify(&auth));
        let mut forged = v;
        forged.view = 5;
        assert!(!forged.verify(&auth));
    }
}
