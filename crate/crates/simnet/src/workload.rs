use serde::{Deserialize, Serialize};

use qlab_core::{ClientId, Command, NodeId, Time};

/// A single scripted request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub at: Time,
    pub client: ClientId,
    pub command: Command,
    /// Overrides the client policy's routing when set.
    pub target: Option<NodeId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Workload {
    None,
    Scripted(Vec<Submission>),
    /// Each client keeps exactly one request outstanding.
    ClosedLoop {
        clients: u32,
        payload_bytes: usize,
        start: Time,
        max_per_client: Option<u64>,
    },
    /// Each client submits every `interval` regardless of replies.
    OpenLoop {
        clients: u32,
        interval: Time,
        payload_bytes: usize,
        start: Time,
        max_per_client: Option<u64>,
    },
}

impl Workload {
    pub fn client_count(&self) -> u32 {
        match self {
            Workload::None => 0,
            Workload::Scripted(s) => s.iter().map(|x| x.client + 1).max().unwrap_or(0),
            Workload::ClosedLoop { clients, .. } | Workload::OpenLoop { clients, .. } => *clients,
        }
    }
}

/// Synthetic command: a per-client key and a deterministic value of
/// `payload_bytes` bytes.
pub fn synthetic_command(client: ClientId, sequence: u64, payload_bytes: usize) -> Command {
    let key = format!("key-{client:05}").into_bytes();
    let value = (0..payload_bytes)
        .map(|i| (sequence as usize).wrapping_add(i).wrapping_mul(31) as u8)
        .collect();
    Command::new(client as u64, sequence, key, value)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClientRoute {
    /// Send to one node; after a retry timeout the client switches to
    /// broadcasting for the rest of the run.
    Leader(NodeId),
    All,
}

/// How clients talk to the roster and when they consider a request done.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientPolicy {
    pub route: ClientRoute,
    /// Distinct node replies needed before accepting.
    pub replies_needed: usize,
    /// Accept when a node the request was sent to commits any block.
    pub accept_on_commit: bool,
    /// Rebroadcast to every node after this long without acceptance.
    pub retry_after: Option<Time>,
}

impl ClientPolicy {
    pub fn leader(replies_needed: usize) -> Self {
        Self {
            route: ClientRoute::Leader(NodeId(0)),
            replies_needed,
            accept_on_commit: false,
            retry_after: None,
        }
    }

    pub fn all(replies_needed: usize) -> Self {
        Self {
            route: ClientRoute::All,
            replies_needed,
            accept_on_commit: false,
            retry_after: None,
        }
    }

    pub fn with_retry(mut self, after: Time) -> Self {
        self.retry_after = Some(after);
        self
    }
}

impl Default for ClientPolicy {
    fn default() -> Self {
        Self::leader(1)
    }
}
