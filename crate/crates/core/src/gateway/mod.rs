//! The gateway: terminates node links, persists readings, hosts the control
//! engine and serves the HTTP API.
//!
//! Nodes and API clients never talk to each other directly. Node sessions
//! push readings into [`Gateway::ingest`]; API handlers go through the
//! engine and the datastore; commands travel back to the node through the
//! session's outbound queue.

pub mod api;
pub mod commands;
pub mod session;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::Serialize;
use tokio::sync::{broadcast, mpsc};
use tokio_util::sync::CancellationToken;

use crate::clock::VirtualClock;
use crate::control::{Actuation, ControlEngine, Thresholds};
use crate::model::{Action, ActuationEvent, Actuator, ActuatorFlags, ControlMode, Mode, RelayCommand, SensorReading};
use crate::store::{AppendError, Store, StoreError, VisitRecord, VisitSnapshot};

pub use commands::{CommandTracker, DispatchOutcome};
pub use session::{LineOutcome, NodeSession};

/// One entry of the live event stream.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum StreamEvent {
    Reading(SensorReading),
    Actuation(ActuationEvent),
    Mode(ControlMode),
}

impl StreamEvent {
    pub fn name(&self) -> &'static str {
        match self {
            StreamEvent::Reading(_) => "reading",
            StreamEvent::Actuation(_) => "actuation",
            StreamEvent::Mode(_) => "mode",
        }
    }
}

/// Current state as served by `GET /api/v1/snapshot`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApiSnapshot {
    pub temp_c: Option<f64>,
    pub moisture_adc: Option<u16>,
    pub lux: Option<u32>,
    pub reading_ts_ms: Option<u64>,
    pub actuators: ActuatorFlags,
    pub mode: Mode,
    pub stale: bool,
    /// Gateway virtual time the snapshot was taken at.
    pub now_ms: u64,
}

/// Outcome of a manual actuator request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManualOutcome {
    /// Sent to the node; `None` when the regulator was already in that state.
    Accepted { cmd_id: Option<u64> },
    /// Refused because automation is active.
    Rejected,
    NotConnected,
}

/// Result of handing a reading to the gateway.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ingest {
    Stored { id: u64 },
    Duplicate,
    Failed,
}

struct SessionHandle {
    session_id: String,
    tx: mpsc::UnboundedSender<RelayCommand>,
    cancel: CancellationToken,
}

pub struct Gateway {
    store: Arc<Store>,
    engine: Mutex<ControlEngine>,
    sessions: Mutex<HashMap<String, SessionHandle>>,
    active_node: Mutex<Option<String>>,
    tracker: Mutex<CommandTracker>,
    events: broadcast::Sender<StreamEvent>,
    clock: VirtualClock,
    cadence_ms: u64,
    next_session: AtomicU64,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("cadence_ms", &self.cadence_ms).finish_non_exhaustive()
    }
}

impl Gateway {
    /// Builds a gateway over `store`. The commanded regulator state is
    /// restored from the event log; the mode starts at `initial_mode`, which
    /// is logged when it differs from the last logged mode.
    pub fn new(
        store: Arc<Store>,
        thresholds: Thresholds,
        initial_mode: Mode,
        clock: VirtualClock,
        cadence_ms: u64,
    ) -> Result<Arc<Gateway>, StoreError> {
        let now = clock.now_ms();
        let mut flags = ActuatorFlags::ALL_OFF;
        let mut last_event_ts = 0;
        for e in store.events() {
            flags.set(e.actuator, e.action.is_on());
            last_event_ts = last_event_ts.max(e.ts_ms);
        }
        let last_mode = store.last_mode();
        let mode = match last_mode {
            Some(m) if m.mode == initial_mode => m,
            _ => {
                let floor = last_mode.as_ref().map_or(0, |m| m.changed_at_ms);
                let m = ControlMode {
                    mode: initial_mode,
                    changed_at_ms: now.max(floor).max(last_event_ts + u64::from(last_event_ts > 0)),
                    changed_by: "system".into(),
                };
                store.append_mode(&m)?;
                m
            }
        };
        let mut engine = ControlEngine::new(thresholds, mode);
        engine.restore(flags, (last_event_ts > 0).then_some(last_event_ts));
        if let Some(latest) = store.latest_reading() {
            engine.remember(latest);
        }
        let (events, _) = broadcast::channel(1024);
        Ok(Arc::new(Gateway {
            store,
            engine: Mutex::new(engine),
            sessions: Mutex::new(HashMap::new()),
            active_node: Mutex::new(None),
            tracker: Mutex::new(CommandTracker::new(3 * cadence_ms)),
            events,
            clock,
            cadence_ms,
            next_session: AtomicU64::new(1),
        }))
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn clock(&self) -> &VirtualClock {
        &self.clock
    }

    pub fn cadence_ms(&self) -> u64 {
        self.cadence_ms
    }

    pub fn now_ms(&self) -> u64 {
        self.clock.now_ms()
    }

    pub fn subscribe(&self) -> broadcast::Receiver<StreamEvent> {
        self.events.subscribe()
    }

    fn publish(&self, event: StreamEvent) {
        // No subscribers is fine.
        let _ = self.events.send(event);
    }

    pub fn mode(&self) -> ControlMode {
        self.engine.lock().unwrap().mode().clone()
    }

    pub fn flags(&self) -> ActuatorFlags {
        self.engine.lock().unwrap().flags()
    }

    pub fn thresholds(&self) -> Thresholds {
        *self.engine.lock().unwrap().thresholds()
    }

    /// Node id currently receiving commands: the most recently connected.
    pub fn active_node(&self) -> Option<String> {
        self.active_node.lock().unwrap().clone()
    }

    pub fn is_connected(&self) -> bool {
        let active = self.active_node();
        active.is_some_and(|id| self.sessions.lock().unwrap().contains_key(&id))
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().unwrap().len()
    }

    /// Logs, publishes and sends engine decisions. Called with the engine
    /// lock held so the log order is the decision order.
    fn apply_actuations(&self, actuations: Vec<Actuation>) {
        for a in actuations {
            if let Err(e) = self.store.append_event(&a.event) {
                tracing::error!(error = %e, "failed to log actuation");
            }
            self.publish(StreamEvent::Actuation(a.event.clone()));
            let _ = self.send_command(a.command);
        }
    }

    /// Persists a reading, publishes it and runs the automation on it.
    pub fn ingest(&self, reading: SensorReading) -> Ingest {
        let mut engine = self.engine.lock().unwrap();
        let id = match self.store.append_reading(&reading) {
            Ok(id) => id,
            Err(AppendError::Duplicate { .. }) => return Ingest::Duplicate,
            Err(AppendError::Store(e)) => {
                tracing::error!(error = %e, "failed to persist reading");
                return Ingest::Failed;
            }
        };
        self.publish(StreamEvent::Reading(reading.clone()));
        let actuations = engine.on_reading(&reading);
        self.apply_actuations(actuations);
        Ingest::Stored { id }
    }

    /// Switches mode; entering AUTO applies the resulting corrections.
    pub fn set_mode(&self, mode: Mode, by: &str) -> Result<ControlMode, StoreError> {
        let mut engine = self.engine.lock().unwrap();
        let outcome = engine.set_mode(mode, by, self.clock.now_ms());
        if let Some(changed) = &outcome.changed {
            self.store.append_mode(changed)?;
            self.publish(StreamEvent::Mode(changed.clone()));
        }
        self.apply_actuations(outcome.actuations);
        Ok(engine.mode().clone())
    }

    /// An operator's actuator request.
    pub fn manual(&self, target: Actuator, action: Action) -> ManualOutcome {
        let mut engine = self.engine.lock().unwrap();
        if engine.mode().mode == Mode::Auto {
            return ManualOutcome::Rejected;
        }
        if !self.is_connected() {
            return ManualOutcome::NotConnected;
        }
        match engine.manual_command(target, action, self.clock.now_ms()) {
            Err(_) => ManualOutcome::Rejected,
            Ok(None) => ManualOutcome::Accepted { cmd_id: None },
            Ok(Some(a)) => {
                let cmd_id = a.command.cmd_id;
                self.apply_actuations(vec![a]);
                ManualOutcome::Accepted { cmd_id: Some(cmd_id) }
            }
        }
    }

    /// Queues `cmd` on the active node's link and tracks its ACK.
    pub fn send_command(&self, cmd: RelayCommand) -> Option<tokio::sync::oneshot::Receiver<DispatchOutcome>> {
        let node = self.active_node()?;
        let sessions = self.sessions.lock().unwrap();
        let handle = sessions.get(&node)?;
        let rx = self.tracker.lock().unwrap().register(cmd.cmd_id, self.clock.now_ms());
        if handle.tx.send(cmd).is_err() {
            return None;
        }
        Some(rx)
    }

    /// Sends `cmd` and waits for its outcome: delivered on ACK, timed out
    /// after three cadence intervals, or not connected at once.
    pub async fn dispatch_command(&self, cmd: RelayCommand) -> DispatchOutcome {
        match self.send_command(cmd) {
            None => DispatchOutcome::NotConnected,
            Some(rx) => rx.await.unwrap_or(DispatchOutcome::TimedOut),
        }
    }

    /// Times out overdue commands.
    pub fn sweep_commands(&self) -> Vec<u64> {
        let expired = self.tracker.lock().unwrap().sweep(self.clock.now_ms());
        for id in &expired {
            tracing::warn!(cmd_id = id, "command not acknowledged");
        }
        expired
    }

    /// Resolves a pending command as delivered.
    pub fn ack(&self, cmd_id: u64) -> bool {
        self.tracker.lock().unwrap().ack(cmd_id)
    }

    pub fn pending_commands(&self) -> usize {
        self.tracker.lock().unwrap().len()
    }

    /// Registers a node session, closing any older session of the same node.
    /// Returns the session id, the session's command queue and a token that
    /// fires when a newer session replaces this one.
    pub fn register_session(&self, node_id: &str) -> (String, mpsc::UnboundedReceiver<RelayCommand>, CancellationToken) {
        let session_id = format!("s-{}", self.next_session.fetch_add(1, Ordering::Relaxed));
        let (tx, rx) = mpsc::unbounded_channel();
        let cancel = CancellationToken::new();
        let old = self.sessions.lock().unwrap().insert(
            node_id.to_string(),
            SessionHandle {
                session_id: session_id.clone(),
                tx,
                cancel: cancel.clone(),
            },
        );
        if let Some(old) = old {
            tracing::info!(node_id, old = %old.session_id, new = %session_id, "replacing session");
            old.cancel.cancel();
        }
        *self.active_node.lock().unwrap() = Some(node_id.to_string());
        (session_id, rx, cancel)
    }

    pub fn unregister_session(&self, node_id: &str, session_id: &str) {
        let mut sessions = self.sessions.lock().unwrap();
        if sessions.get(node_id).is_some_and(|h| h.session_id == session_id) {
            sessions.remove(node_id);
        }
    }

    /// Re-sends the commanded regulator state to a freshly connected node.
    pub fn resync_node(&self) {
        let mut engine = self.engine.lock().unwrap();
        let flags = engine.flags();
        for target in Actuator::ALL {
            let cmd = RelayCommand {
                cmd_id: engine.allocate_cmd_id(),
                target,
                action: Action::from_bool(flags.get(target)),
            };
            let _ = self.send_command(cmd);
        }
    }

    pub fn snapshot(&self) -> ApiSnapshot {
        let engine = self.engine.lock().unwrap();
        let now = self.clock.now_ms();
        let latest = engine.latest();
        ApiSnapshot {
            temp_c: latest.map(|r| r.temp_c),
            moisture_adc: latest.map(|r| r.moisture_adc),
            lux: latest.map(|r| r.lux),
            reading_ts_ms: latest.map(|r| r.timestamp_ms),
            actuators: engine.flags(),
            mode: engine.mode().mode,
            stale: latest.is_none_or(|r| now.saturating_sub(r.timestamp_ms) > 3 * self.cadence_ms),
            now_ms: now,
        }
    }

    /// Records a visit at the current virtual time with the current values.
    /// `None` when there is no reading to record yet.
    pub fn record_visit(&self, user: &str) -> Result<Option<VisitRecord>, StoreError> {
        let snap = self.snapshot();
        let (Some(temp_c), Some(moisture_adc), Some(lux)) = (snap.temp_c, snap.moisture_adc, snap.lux) else {
            return Ok(None);
        };
        let snapshot = VisitSnapshot {
            temp_c,
            moisture_adc,
            lux,
        };
        self.store.record_visit(user, snap.now_ms, snapshot)?;
        Ok(self.store.last_visit(user))
    }
}

/// Listening sockets of a running gateway.
#[derive(Debug, Clone, Copy)]
pub struct GatewayAddrs {
    pub node: std::net::SocketAddr,
    pub api: std::net::SocketAddr,
}

/// Times out unacknowledged commands, checking five times per cadence
/// interval, until `shutdown` fires.
pub async fn run_sweeper(gateway: Arc<Gateway>, shutdown: CancellationToken) {
    let period = gateway.clock.wall_duration(gateway.cadence_ms / 5).max(std::time::Duration::from_millis(1));
    let mut tick = tokio::time::interval(period);
    loop {
        tokio::select! {
            _ = shutdown.cancelled() => break,
            _ = tick.tick() => { gateway.sweep_commands(); }
        }
    }
}

/// Serves node links and the HTTP API until `shutdown` fires.
pub async fn serve(
    gateway: Arc<Gateway>,
    node_listener: tokio::net::TcpListener,
    api_listener: tokio::net::TcpListener,
    ui_dir: Option<std::path::PathBuf>,
    shutdown: CancellationToken,
) -> std::io::Result<()> {
    let sweeper = tokio::spawn(run_sweeper(gateway.clone(), shutdown.clone()));
    let nodes = tokio::spawn(session::accept_loop(gateway.clone(), node_listener, shutdown.clone()));
    let app = api::router(gateway.clone(), ui_dir, shutdown.clone());
    let token = shutdown.clone();
    let http = axum::serve(api_listener, app).with_graceful_shutdown(async move { token.cancelled().await });
    let result = http.await;
    shutdown.cancel();
    let _ = nodes.await;
    let _ = sweeper.await;
    result
}
