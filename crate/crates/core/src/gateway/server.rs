//! TCP front end for one gateway: a planner listener and an admin listener,
//! plus the matching client helpers.
//!
//! The two channels are physically separate sockets on purpose. The planner
//! channel only ever judges commands; a RULE_UPDATE arriving there is
//! refused and audited, whatever it carries. Rule updates are accepted
//! solely on the admin channel, and even there only after signature and
//! version checks in the core.
//!
//! Per planner command the server answers with a VERDICT frame followed by
//! a STATE frame carrying the post-actuation world state, so the planner
//! always plans against reality as the gateway sees it.

use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crate::crypto::hash;
use crate::engine::{Command, WorldState};
use crate::schema::Schema;

use super::audit::{append_shared, AuditKind};
use super::core::GatewayCore;
use super::wire::{
    self, Frame, WireError, WireVerdict, MSG_COMMAND, MSG_RULE_UPDATE, MSG_STATE,
    MSG_UPDATE_ACK, MSG_UPDATE_NACK, MSG_VERDICT,
};

const POLL_INTERVAL: Duration = Duration::from_millis(10);
const PEEK_TIMEOUT: Duration = Duration::from_millis(100);
const FRAME_TIMEOUT: Duration = Duration::from_secs(5);

/// A running gateway server. Dropping the handle shuts it down.
pub struct ServerHandle {
    pub planner_addr: SocketAddr,
    pub admin_addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
    core: Arc<Mutex<GatewayCore>>,
}

impl ServerHandle {
    /// Shared access to the core, e.g. to inspect the audit log or actuator
    /// trace while the server runs.
    pub fn core(&self) -> Arc<Mutex<GatewayCore>> {
        Arc::clone(&self.core)
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        for thread in self.threads.drain(..) {
            let _ = thread.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Binds both listeners on loopback ephemeral ports and serves until the
/// handle shuts down. Connections are handled one at a time per channel.
pub fn spawn(core: GatewayCore) -> io::Result<ServerHandle> {
    let planner = TcpListener::bind("127.0.0.1:0")?;
    let admin = TcpListener::bind("127.0.0.1:0")?;
    let planner_addr = planner.local_addr()?;
    let admin_addr = admin.local_addr()?;
    let core = Arc::new(Mutex::new(core));
    let shutdown = Arc::new(AtomicBool::new(false));

    let mut threads = Vec::new();
    {
        let core = Arc::clone(&core);
        let shutdown = Arc::clone(&shutdown);
        threads.push(thread::spawn(move || {
            accept_loop(planner, &shutdown, |stream| serve_planner(stream, &core, &shutdown));
        }));
    }
    {
        let core = Arc::clone(&core);
        let shutdown = Arc::clone(&shutdown);
        threads.push(thread::spawn(move || {
            accept_loop(admin, &shutdown, |stream| serve_admin(stream, &core, &shutdown));
        }));
    }

    Ok(ServerHandle {
        planner_addr,
        admin_addr,
        shutdown,
        threads,
        core,
    })
}

fn accept_loop(listener: TcpListener, shutdown: &AtomicBool, mut serve: impl FnMut(TcpStream)) {
    if listener.set_nonblocking(true).is_err() {
        return;
    }
    while !shutdown.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                if stream.set_nonblocking(false).is_ok() {
                    serve(stream);
                }
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(POLL_INTERVAL),
            Err(_) => break,
        }
    }
}

/// Blocks until the stream has bytes, hit EOF, or shutdown was requested.
/// Returns Ok(true) when a frame read should proceed.
fn wait_readable(stream: &TcpStream, shutdown: &AtomicBool) -> io::Result<bool> {
    stream.set_read_timeout(Some(PEEK_TIMEOUT))?;
    let mut probe = [0u8; 1];
    loop {
        if shutdown.load(Ordering::SeqCst) {
            return Ok(false);
        }
        match stream.peek(&mut probe) {
            Ok(0) => return Ok(false),
            Ok(_) => {
                stream.set_read_timeout(Some(FRAME_TIMEOUT))?;
                return Ok(true);
            }
            Err(e)
                if e.kind() == io::ErrorKind::WouldBlock
                    || e.kind() == io::ErrorKind::TimedOut => {}
            Err(e) => return Err(e),
        }
    }
}

fn send_nack(stream: &mut TcpStream, reason: &str) -> io::Result<()> {
    wire::write_frame(
        stream,
        &Frame::new(MSG_UPDATE_NACK, wire::encode_update_nack(reason)),
    )
}

fn serve_planner(mut stream: TcpStream, core: &Mutex<GatewayCore>, shutdown: &AtomicBool) {
    loop {
        match wait_readable(&stream, shutdown) {
            Ok(true) => {}
            _ => return,
        }
        let frame = match wire::read_frame(&mut stream) {
            Ok(frame) => frame,
            Err(WireError::UnknownMessageType(t)) => {
                let _ = send_nack(&mut stream, &format!("unknown message type 0x{t:02x}"));
                continue;
            }
            Err(_) => return,
        };
        match frame.msg_type {
            MSG_COMMAND => {
                let core = core.lock().expect("gateway lock");
                let Some(schema) = core.active_schema() else {
                    append_shared(
                        core.audit(),
                        AuditKind::CommandDenied,
                        hash(&frame.payload),
                        "no active rule set",
                    );
                    let _ = send_nack(&mut stream, "no active rule set");
                    continue;
                };
                let command = match wire::decode_command(&frame.payload, schema) {
                    Ok(command) => command,
                    Err(e) => {
                        append_shared(
                            core.audit(),
                            AuditKind::CommandDenied,
                            hash(&frame.payload),
                            &format!("malformed command: {e}"),
                        );
                        let _ = send_nack(&mut stream, &e.to_string());
                        continue;
                    }
                };
                match core.handle_command(&command) {
                    Ok(verdict) => {
                        let reply = WireVerdict::from(&verdict);
                        let state = core.actuator().observe();
                        drop(core);
                        if wire::write_frame(
                            &mut stream,
                            &Frame::new(MSG_VERDICT, wire::encode_verdict(&reply)),
                        )
                        .is_err()
                        {
                            return;
                        }
                        if wire::write_frame(
                            &mut stream,
                            &Frame::new(MSG_STATE, wire::encode_state(&state)),
                        )
                        .is_err()
                        {
                            return;
                        }
                    }
                    Err(e) => {
                        drop(core);
                        let _ = send_nack(&mut stream, &e.to_string());
                    }
                }
            }
            MSG_RULE_UPDATE => {
                let core = core.lock().expect("gateway lock");
                append_shared(
                    core.audit(),
                    AuditKind::UpdateRejected,
                    hash(&frame.payload),
                    "rule update on planner channel",
                );
                drop(core);
                let _ = send_nack(&mut stream, "rule updates are refused on the planner channel");
            }
            other => {
                let _ = send_nack(&mut stream, &format!("unexpected message type 0x{other:02x}"));
            }
        }
    }
}

fn serve_admin(mut stream: TcpStream, core: &Mutex<GatewayCore>, shutdown: &AtomicBool) {
    loop {
        match wait_readable(&stream, shutdown) {
            Ok(true) => {}
            _ => return,
        }
        let frame = match wire::read_frame(&mut stream) {
            Ok(frame) => frame,
            Err(WireError::UnknownMessageType(t)) => {
                let _ = send_nack(&mut stream, &format!("unknown message type 0x{t:02x}"));
                continue;
            }
            Err(_) => return,
        };
        match frame.msg_type {
            MSG_RULE_UPDATE => {
                let mut core = core.lock().expect("gateway lock");
                let outcome = core.install_bundle(&frame.payload);
                drop(core);
                let reply = match outcome {
                    Ok(version) => Frame::new(MSG_UPDATE_ACK, wire::encode_update_ack(version)),
                    Err(e) => Frame::new(MSG_UPDATE_NACK, wire::encode_update_nack(&e.to_string())),
                };
                if wire::write_frame(&mut stream, &reply).is_err() {
                    return;
                }
            }
            other => {
                let _ = send_nack(
                    &mut stream,
                    &format!("message type 0x{other:02x} is not accepted on the admin channel"),
                );
            }
        }
    }
}

// ---------------------------------------------------------------------------
// clients

/// Outcome of proposing one command over the planner channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProposalOutcome {
    /// The gateway judged the command; here is the verdict and the world
    /// state after any actuation.
    Judged {
        verdict: WireVerdict,
        state: WorldState,
    },
    /// The gateway refused to judge it (protocol error, no rules, ...).
    Refused(String),
}

/// Planner-side connection.
pub struct PlannerClient {
    stream: TcpStream,
    schema: Schema,
}

impl PlannerClient {
    pub fn connect(addr: SocketAddr, schema: Schema) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(PlannerClient { stream, schema })
    }

    pub fn propose(&mut self, command: &Command) -> Result<ProposalOutcome, WireError> {
        wire::write_frame(
            &mut self.stream,
            &Frame::new(MSG_COMMAND, wire::encode_command(command)),
        )?;
        let first = wire::read_frame(&mut self.stream)?;
        match first.msg_type {
            MSG_VERDICT => {
                let verdict = wire::decode_verdict(&first.payload, &self.schema)?;
                let second = wire::read_frame(&mut self.stream)?;
                if second.msg_type != MSG_STATE {
                    return Err(WireError::Malformed(format!(
                        "expected STATE after VERDICT, got 0x{:02x}",
                        second.msg_type
                    )));
                }
                let state = wire::decode_state(&second.payload, &self.schema)?;
                Ok(ProposalOutcome::Judged { verdict, state })
            }
            MSG_UPDATE_NACK => Ok(ProposalOutcome::Refused(wire::decode_update_nack(
                &first.payload,
            )?)),
            other => Err(WireError::Malformed(format!(
                "unexpected reply type 0x{other:02x}"
            ))),
        }
    }

    /// Sends a raw frame, for exercising the server's refusal paths.
    pub fn send_raw(&mut self, frame: &Frame) -> io::Result<()> {
        wire::write_frame(&mut self.stream, frame)
    }

    pub fn read_reply(&mut self) -> Result<Frame, WireError> {
        wire::read_frame(&mut self.stream)
    }
}

/// Governance-side connection.
pub struct AdminClient {
    stream: TcpStream,
}

impl AdminClient {
    pub fn connect(addr: SocketAddr) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(AdminClient { stream })
    }

    /// Submits rule bundle bytes. `Ok(Ok(version))` on acceptance,
    /// `Ok(Err(reason))` on a NACK.
    pub fn send_update(&mut self, bundle_bytes: &[u8]) -> Result<Result<u64, String>, WireError> {
        wire::write_frame(
            &mut self.stream,
            &Frame::new(MSG_RULE_UPDATE, bundle_bytes.to_vec()),
        )?;
        let reply = wire::read_frame(&mut self.stream)?;
        match reply.msg_type {
            MSG_UPDATE_ACK => Ok(Ok(wire::decode_update_ack(&reply.payload)?)),
            MSG_UPDATE_NACK => Ok(Err(wire::decode_update_nack(&reply.payload)?)),
            other => Err(WireError::Malformed(format!(
                "unexpected reply type 0x{other:02x}"
            ))),
        }
    }
}
