//! Consensus engines. Each one is a deterministic [`qlab_core::Engine`].
//!
//! | engine | leader | normal path |
//! |---|---|---|
//! | [`paxos::Paxos`] | stable, ballot takeover | accept / accepted / commit |
//! | [`pbft::Pbft`] | stable, view change | pre-prepare / prepare / commit |
//! | [`tendermint::Tendermint`] | stake-weighted rotation | proposal / prevote / precommit, plus a star variant |
//! | [`hotstuff::HotStuff`] | rotating per view | chained proposal / vote |
//! | [`hotstuff_basic::BasicHotStuff`] | rotating per view | new-view / prepare / pre-commit / commit / decide |
//! | [`streamlet::Streamlet`] | hashed per epoch | proposal / vote with echo |
//! | [`snowball::Snowball`] | none | repeated k-sampling |

mod common;
pub mod hotstuff;
pub mod hotstuff_basic;
pub mod paxos;
pub mod pbft;
pub mod snowball;
pub mod streamlet;
pub mod tendermint;

pub use common::{fork_commands, is_designated_replier};
