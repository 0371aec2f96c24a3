//! `shiftctl`: run a hub, a simulated fleet, a scripted scenario, or manage
//! snapshots.
//!
//! Exit codes: 0 success, 1 domain error, 2 usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::{Duration, Instant};

use clap::{Parser, Subcommand, ValueEnum};

use teleshift_core::{canonical_json, Role, SessionMode, SnapshotMeta, SubstructureId};
use teleshift_hub::client::{ClientError, HubClient};
use teleshift_hub::envelope::{SnapshotListing, SnapshotRestore, SnapshotRestored, SnapshotSave, SnapshotSaved};
use teleshift_hub::server::{serve, ServerConfig};
use teleshift_hub::{Hub, Kind, SessionId, SessionStore};
use teleshift_sim::live::LiveDevice;
use teleshift_sim::{DeviceClient, DeviceConfig, LinkState, NetProfile, Scenario, ScenarioError, World};

const REPLY_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Parser)]
#[command(name = "shiftctl", version, about = "Shape-sync hub, device simulator and scenario runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Collab,
    Present,
}

impl From<ModeArg> for SessionMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Collab => SessionMode::Collaboration,
            ModeArg::Present => SessionMode::Presentation,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum RoleArg {
    Presenter,
}

#[derive(Subcommand)]
enum Command {
    /// Serve a hub until killed.
    Hub {
        #[arg(long, env = "TELESHIFT_LISTEN", default_value = "127.0.0.1:7070")]
        listen: String,
        /// Also accept WebSocket clients here.
        #[arg(long, env = "TELESHIFT_WS_LISTEN")]
        ws_listen: Option<String>,
        /// Persist sessions under this directory.
        #[arg(long, env = "TELESHIFT_DATA_DIR")]
        data_dir: Option<PathBuf>,
        #[arg(long, env = "TELESHIFT_HEARTBEAT_MS", default_value_t = 5000, value_parser = clap::value_parser!(u64).range(1..))]
        heartbeat_ms: u64,
    },
    /// Connect a fleet of simulated devices to a hub.
    Sim {
        #[arg(long, env = "TELESHIFT_HUB")]
        hub: String,
        #[arg(long, value_parser = parse_session)]
        session: SessionId,
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
        devices: u32,
        /// The first device presents; the rest follow.
        #[arg(long, value_enum)]
        role: Option<RoleArg>,
        /// latency_ms,jitter_ms,drop_prob,seed
        #[arg(long, value_parser = parse_net)]
        net: Option<NetProfile>,
        /// Substructure every device mirrors.
        #[arg(long, default_value = "S1", value_parser = parse_substructure)]
        substructure: SubstructureId,
        /// Stop after this many milliseconds instead of running until killed.
        #[arg(long)]
        duration_ms: Option<u64>,
    },
    /// Execute a scenario file and print its report.
    Run {
        scenario: PathBuf,
        /// Pace the virtual clock by the wall clock.
        #[arg(long)]
        realtime: bool,
        /// With --realtime, serve the scenario's hub for live viewers.
        #[arg(long, requires = "realtime")]
        listen: Option<String>,
        #[arg(long, requires = "realtime")]
        ws_listen: Option<String>,
    },
    /// Save, list or restore session snapshots.
    Snapshot {
        #[arg(long, env = "TELESHIFT_HUB")]
        hub: String,
        #[arg(long, value_parser = parse_session)]
        session: SessionId,
        /// Machine-readable output.
        #[arg(long)]
        json: bool,
        #[command(subcommand)]
        op: SnapshotOp,
    },
}

#[derive(Subcommand)]
enum SnapshotOp {
    Save { label: String },
    List,
    Restore { snapshot_id: String },
}

fn parse_session(s: &str) -> Result<SessionId, String> {
    SessionId::new(s).map_err(|e| e.to_string())
}

fn parse_net(s: &str) -> Result<NetProfile, String> {
    NetProfile::parse_cli(s).map_err(|e| e.to_string())
}

fn parse_substructure(s: &str) -> Result<SubstructureId, String> {
    s.parse().map_err(|e: teleshift_core::IdentError| e.to_string())
}

/// A failure worth exit code 1, printed to stderr.
struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Hub {
            listen,
            ws_listen,
            data_dir,
            heartbeat_ms,
        } => cmd_hub(listen, ws_listen, data_dir, heartbeat_ms),
        Command::Sim {
            hub,
            session,
            mode,
            devices,
            role,
            net,
            substructure,
            duration_ms,
        } => cmd_sim(&hub, &session, mode.into(), devices, role.is_some(), net, substructure, duration_ms),
        Command::Run {
            scenario,
            realtime,
            listen,
            ws_listen,
        } => cmd_run(&scenario, realtime, listen, ws_listen),
        Command::Snapshot {
            hub,
            session,
            json,
            op,
        } => cmd_snapshot(&hub, &session, json, op),
    };
    match result {
        Ok(code) => code,
        Err(Failure(message)) => {
            eprintln!("{message}");
            ExitCode::FAILURE
        }
    }
}

fn cmd_hub(listen: String, ws_listen: Option<String>, data_dir: Option<PathBuf>, heartbeat_ms: u64) -> Result<ExitCode, Failure> {
    let hub = match data_dir {
        Some(dir) => {
            let store = SessionStore::open(&dir)?;
            let (hub, skipped) = Hub::with_store(store).map_err(|e| Failure(format!("BadDataDir: {}: {e}", dir.display())))?;
            for (path, err) in skipped {
                eprintln!("skipping {}: {err}", path.display());
            }
            hub
        }
        None => Hub::new(),
    };
    let config = ServerConfig {
        listen,
        ws_listen,
        heartbeat: Duration::from_millis(heartbeat_ms),
    };
    let handle = serve(Arc::new(hub), &config).map_err(|e| match e.kind() {
        std::io::ErrorKind::AddrInUse => Failure(format!("AddressInUse: {e}")),
        _ => Failure(format!("cannot listen: {e}")),
    })?;
    println!("READY {}", handle.local_addr());
    if let Some(ws) = handle.ws_addr() {
        println!("WS {ws}");
    }
    handle.wait();
    Ok(ExitCode::SUCCESS)
}

#[allow(clippy::too_many_arguments)]
fn cmd_sim(
    hub: &str,
    session: &SessionId,
    mode: SessionMode,
    count: u32,
    presenter: bool,
    net: Option<NetProfile>,
    substructure: SubstructureId,
    duration_ms: Option<u64>,
) -> Result<ExitCode, Failure> {
    let net = net.unwrap_or_else(NetProfile::ideal);
    let stop = Arc::new(AtomicBool::new(false));
    let mut threads = Vec::new();
    for i in 0..count {
        let id = format!("{session}-d{i}");
        let mut cfg = DeviceConfig::new(id.parse()?, session.to_string(), substructure.clone());
        cfg.mode = Some(mode);
        cfg.role = match (mode, presenter, i) {
            (SessionMode::Collaboration, true, _) => Some(Role::Presenter),
            (SessionMode::Collaboration, false, _) => Some(Role::Peer),
            (SessionMode::Presentation, true, 0) => Some(Role::Presenter),
            (SessionMode::Presentation, _, _) => Some(Role::Follower),
        };
        let mut device = LiveDevice::new(DeviceClient::new(cfg), hub).map_err(|e| Failure(format!("HubUnreachable: {hub}: {e}")))?;
        device.profile = NetProfile { seed: net.seed.wrapping_add(u64::from(i)), ..net };
        let joined = device
            .join(REPLY_TIMEOUT)
            .map_err(|e| Failure(format!("HubUnreachable: {hub}: {e}")))?;
        if let LinkState::Rejected(code) = device.client.link() {
            let message = device.client.errors().last().map(|e| e.message.clone()).unwrap_or_default();
            stop.store(true, Ordering::SeqCst);
            return Err(Failure(format!("{code}: {message}")));
        }
        let role = device.client.role().map(|r| format!("{r:?}").to_lowercase()).unwrap_or_default();
        println!("READY {id} session={session} role={role} net={net}");
        let (_tx, rx) = mpsc::channel();
        let stop = stop.clone();
        threads.push(thread::spawn(move || {
            let _keep = _tx;
            device.run(joined, stop, rx)
        }));
    }
    let started = Instant::now();
    while duration_ms.is_none_or(|d| started.elapsed() < Duration::from_millis(d)) {
        thread::sleep(Duration::from_millis(50));
    }
    stop.store(true, Ordering::SeqCst);
    for t in threads {
        let _ = t.join();
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_run(path: &Path, realtime: bool, listen: Option<String>, ws_listen: Option<String>) -> Result<ExitCode, Failure> {
    let scenario = Scenario::load(path)?;
    let hub = Arc::new(Hub::new());
    let server = match (&listen, &ws_listen) {
        (None, None) => None,
        _ => {
            let config = ServerConfig {
                listen: listen.unwrap_or_else(|| "127.0.0.1:0".into()),
                ws_listen,
                ..ServerConfig::default()
            };
            let handle = serve(hub.clone(), &config)?;
            eprintln!("serving on {}", handle.local_addr());
            if let Some(ws) = handle.ws_addr() {
                eprintln!("websocket on {ws}");
            }
            Some(handle)
        }
    };
    let mut world = World::with_hub(scenario, hub);
    if realtime {
        world = world.realtime();
    }
    let report = world.run().map_err(|e| match e {
        ScenarioError::Io(io) => Failure(format!("reading {}: {io}", path.display())),
        other => Failure(other.to_string()),
    })?;
    if let Some(server) = server {
        server.shutdown();
    }
    print!("{}", report.to_json());
    Ok(if report.converged {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn hub_failure(e: ClientError) -> Failure {
    Failure(e.to_string())
}

fn cmd_snapshot(hub: &str, session: &SessionId, json: bool, op: SnapshotOp) -> Result<ExitCode, Failure> {
    let me = format!("shiftctl-{}", std::process::id());
    let mut client = HubClient::connect(hub, session.as_str(), &me).map_err(hub_failure)?;
    client.hello(None, None, Vec::new(), REPLY_TIMEOUT).map_err(hub_failure)?;
    match op {
        SnapshotOp::Save { label } => {
            let saved: SnapshotSaved = client
                .request(Kind::SnapshotSave, SnapshotSave { label }, Kind::SnapshotSave, REPLY_TIMEOUT)
                .map_err(hub_failure)?;
            print_snapshots(&[saved.snapshot], json)?;
        }
        SnapshotOp::List => {
            let listing: SnapshotListing = client
                .request(Kind::SnapshotList, serde_json::json!({}), Kind::SnapshotList, REPLY_TIMEOUT)
                .map_err(hub_failure)?;
            print_snapshots(&listing.snapshots, json)?;
        }
        SnapshotOp::Restore { snapshot_id } => {
            let restored: SnapshotRestored = client
                .request(Kind::SnapshotRestore, SnapshotRestore { snapshot_id }, Kind::SnapshotRestore, REPLY_TIMEOUT)
                .map_err(hub_failure)?;
            if json {
                println!("{}", canonical_json(&restored)?);
            } else {
                println!("restored {} ({} arms)", restored.snapshot_id, restored.updates.len());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn print_snapshots(metas: &[SnapshotMeta], json: bool) -> Result<(), Failure> {
    if json {
        println!("{}", canonical_json(&metas)?);
        return Ok(());
    }
    let width = metas.iter().map(|m| m.label.len()).max().unwrap_or(0).max("LABEL".len());
    println!("{:<10}  {:<width$}  CREATED_AT", "ID", "LABEL");
    for m in metas {
        println!("{:<10}  {:<width$}  {}", m.snapshot_id, m.label, m.created_at);
    }
    Ok(())
}
