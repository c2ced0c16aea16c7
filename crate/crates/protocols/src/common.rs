use qlab_core::{Command, NodeId};

/// Client id reserved for the marker command that makes a forked proposal
/// differ from the original.
pub const FORK_CLIENT: u64 = u64::MAX;

/// A batch that differs from `commands`, used by equivocating leaders.
pub fn fork_commands(commands: &[Command]) -> Vec<Command> {
    let mut out = commands.to_vec();
    let seq = commands.len() as u64;
    out.push(Command::new(FORK_CLIENT, seq, b"fork".to_vec(), Vec::new()));
    out
}

/// Whether `me` is one of the `count` nodes starting at `first` (mod `n`)
/// that answer the client.
pub fn is_designated_replier(me: NodeId, first: NodeId, count: usize, n: usize) -> bool {
    let offset = (me.index() + n - first.index() % n) % n;
    offset < count
}

/// Reply actions for the client commands of a batch (marker commands are
/// skipped).
pub fn replies<M>(commands: &[Command]) -> impl Iterator<Item = qlab_core::Action<M>> + '_ {
    commands
        .iter()
        .filter(|c| c.client_id != FORK_CLIENT && c.client_id <= u32::MAX as u64)
        .map(|c| qlab_core::Action::ReplyToClient {
            client: c.client_id as u32,
            sequence: c.sequence,
        })
}
