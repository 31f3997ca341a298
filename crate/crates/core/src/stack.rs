//! Wiring for the deployable pieces: gateway, node and the embedded chamber.

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use tokio::net::TcpListener;
use tokio::task::JoinHandle;
use tokio_util::sync::CancellationToken;

use crate::clock::VirtualClock;
use crate::config::Config;
use crate::gateway::{self, Gateway, GatewayAddrs};
use crate::model::SensorReading;
use crate::node::{run_loop, NodeStats, SensorNode, TcpConnector};
use crate::sim::{Chamber, EnvState, SimConfigError};
use crate::store::{Store, StoreError};

#[derive(Debug, thiserror::Error)]
pub enum StackError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error(transparent)]
    Sim(#[from] SimConfigError),
}

/// A gateway serving on its two listeners.
#[derive(Debug)]
pub struct GatewayHandle {
    pub gateway: Arc<Gateway>,
    pub addrs: GatewayAddrs,
    pub task: JoinHandle<std::io::Result<()>>,
}

async fn bind(addr: &str) -> Result<TcpListener, StackError> {
    TcpListener::bind(addr).await.map_err(|source| StackError::Bind {
        addr: addr.to_string(),
        source,
    })
}

/// Virtual time to resume from: the newest persisted reading, or zero.
pub fn resume_ms(store: &Store) -> u64 {
    store.latest_reading().map_or(0, |r| r.timestamp_ms)
}

/// Opens the datastore, binds both listeners and starts serving.
pub async fn start_gateway(
    cfg: &Config,
    store: Arc<Store>,
    clock: VirtualClock,
    shutdown: CancellationToken,
) -> Result<GatewayHandle, StackError> {
    let node_listener = bind(&cfg.net.node_listen).await?;
    let api_listener = bind(&cfg.net.api_listen).await?;
    let addrs = GatewayAddrs {
        node: local(&node_listener),
        api: local(&api_listener),
    };
    let gw = Gateway::new(
        store,
        cfg.control.thresholds,
        cfg.control.initial_mode,
        clock,
        cfg.node.cadence_ms,
    )?;
    let task = tokio::spawn(gateway::serve(
        gw.clone(),
        node_listener,
        api_listener,
        cfg.net.ui_dir.clone(),
        shutdown,
    ));
    Ok(GatewayHandle { gateway: gw, addrs, task })
}

fn local(l: &TcpListener) -> SocketAddr {
    l.local_addr().expect("bound listener has an address")
}

/// Initial chamber state at `start_ms`. When resuming, temperature and
/// moisture continue from the last reading.
pub fn initial_state(cfg: &Config, start_ms: u64, last: Option<&SensorReading>) -> EnvState {
    let mut state = cfg.sim.initial_state(start_ms);
    if let Some(r) = last {
        state.temp_c = r.temp_c;
        state.moisture = f64::from(r.moisture_adc);
    }
    state
}

/// A running sensor node and the chamber it samples.
#[derive(Debug)]
pub struct NodeHandle {
    pub chamber: Arc<Mutex<Chamber>>,
    pub task: JoinHandle<NodeStats>,
}

/// Starts a node dialing `gateway_addr`.
pub fn spawn_node(
    cfg: &Config,
    gateway_addr: String,
    clock: VirtualClock,
    initial: EnvState,
    shutdown: CancellationToken,
) -> Result<NodeHandle, StackError> {
    let chamber = Chamber::new(initial, cfg.sim.ambient, cfg.sim.effects)?;
    let chamber = Arc::new(Mutex::new(chamber));
    let mut node = SensorNode::new(cfg.node.id.clone(), cfg.node.cadence_ms, initial.sim_time_ms);
    let shared = chamber.clone();
    let task = tokio::spawn(async move {
        run_loop(&mut node, shared, clock, TcpConnector { addr: gateway_addr }, shutdown).await
    });
    Ok(NodeHandle { chamber, task })
}

/// Everything `run` starts: gateway plus an embedded node.
#[derive(Debug)]
pub struct Stack {
    pub gateway: GatewayHandle,
    pub node: NodeHandle,
    pub clock: VirtualClock,
}

/// Starts the whole stack in-process, resuming the timeline from the
/// datastore.
pub async fn start(cfg: &Config, shutdown: CancellationToken) -> Result<Stack, StackError> {
    let store = Arc::new(Store::open(&cfg.store.dir, cfg.store.mem_window_h)?);
    let last = store.latest_reading();
    let start_ms = resume_ms(&store);
    let clock = VirtualClock::new(start_ms, cfg.net.time_scale);
    let gateway = start_gateway(cfg, store, clock.clone(), shutdown.clone()).await?;
    let initial = initial_state(cfg, start_ms, last.as_ref());
    let node = spawn_node(cfg, gateway.addrs.node.to_string(), clock.clone(), initial, shutdown)?;
    Ok(Stack { gateway, node, clock })
}

impl Stack {
    /// Waits for both halves to stop after shutdown.
    pub async fn join(self) -> std::io::Result<NodeStats> {
        let stats = self.node.task.await.unwrap_or_default();
        match self.gateway.task.await {
            Ok(r) => r.map(|_| stats),
            Err(e) => Err(std::io::Error::other(e)),
        }
    }
}
