//! Delivery tracking for relay commands.

use std::collections::HashMap;

use tokio::sync::oneshot;

/// How a dispatched command ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DispatchOutcome {
    Delivered,
    TimedOut,
    NotConnected,
}

#[derive(Debug)]
struct Pending {
    deadline_ms: u64,
    notify: Option<oneshot::Sender<DispatchOutcome>>,
}

/// Commands awaiting an `ACK`. A command that sees no ACK within the
/// timeout (three cadence intervals by default) resolves as timed out.
#[derive(Debug)]
pub struct CommandTracker {
    timeout_ms: u64,
    pending: HashMap<u64, Pending>,
}

impl CommandTracker {
    pub fn new(timeout_ms: u64) -> Self {
        CommandTracker {
            timeout_ms,
            pending: HashMap::new(),
        }
    }

    pub fn timeout_ms(&self) -> u64 {
        self.timeout_ms
    }

    /// Starts tracking `cmd_id`, issued at `now_ms`.
    pub fn register(&mut self, cmd_id: u64, now_ms: u64) -> oneshot::Receiver<DispatchOutcome> {
        let (tx, rx) = oneshot::channel();
        self.pending.insert(
            cmd_id,
            Pending {
                deadline_ms: now_ms + self.timeout_ms,
                notify: Some(tx),
            },
        );
        rx
    }

    /// Resolves `cmd_id` as delivered. False if it was not pending.
    pub fn ack(&mut self, cmd_id: u64) -> bool {
        match self.pending.remove(&cmd_id) {
            Some(mut p) => {
                if let Some(tx) = p.notify.take() {
                    let _ = tx.send(DispatchOutcome::Delivered);
                }
                true
            }
            None => false,
        }
    }

    /// Times out every command whose deadline is at or before `now_ms` and
    /// returns their ids.
    pub fn sweep(&mut self, now_ms: u64) -> Vec<u64> {
        let expired: Vec<u64> = self
            .pending
            .iter()
            .filter(|(_, p)| p.deadline_ms <= now_ms)
            .map(|(id, _)| *id)
            .collect();
        for id in &expired {
            if let Some(mut p) = self.pending.remove(id) {
                if let Some(tx) = p.notify.take() {
                    let _ = tx.send(DispatchOutcome::TimedOut);
                }
            }
        }
        expired
    }

    pub fn is_pending(&self, cmd_id: u64) -> bool {
        self.pending.contains_key(&cmd_id)
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }
}
