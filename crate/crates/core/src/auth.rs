//! Simulated message authentication.
//!
//! `Hashed` tags are a keyed SHA-256 over `(key, signer, payload)`. Every node
//! shares the run key, so a tag proves nothing to a third party; the
//! simulator's delivery layer is trusted not to forge identities. `Noop`
//! produces empty tags and isolates pure protocol cost.

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::types::NodeId;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub struct AuthTag(pub Vec<u8>);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Authenticator {
    Noop,
    Hashed { key: [u8; 32] },
}

impl Authenticator {
    /// Keyed-digest backend with a key derived from `seed`.
    pub fn hashed(seed: u64) -> Self {
        let mut h = Sha256::new();
        h.update(b"qlab-auth");
        h.update(seed.to_be_bytes());
        let mut key = [0u8; 32];
        key.copy_from_slice(&h.finalize());
        Authenticator::Hashed { key }
    }

    pub fn authenticate(&self, payload: &[u8], signer: NodeId) -> AuthTag {
        match self {
            Authenticator::Noop => AuthTag::default(),
            Authenticator::Hashed { key } => AuthTag(Self::mac(key, payload, signer).to_vec()),
        }
    }

    pub fn verify(&self, tag: &AuthTag, payload: &[u8], signer: NodeId) -> bool {
        match self {
            Authenticator::Noop => true,
            Authenticator::Hashed { key } => tag.0 == Self::mac(key, payload, signer),
        }
    }

    fn mac(key: &[u8; 32], payload: &[u8], signer: NodeId) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(key);
        h.update(signer.0.to_be_bytes());
        h.update(payload);
        let mut out = [0u8; 32];
        out.copy_from_slice(&h.finalize());
        out
    }
}
