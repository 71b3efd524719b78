//! Line protocol spoken by provider endpoints over TCP.
//!
//! ```text
//! OFFER <task>\n        -> <descriptor line>\n | ERR <reason>\n
//! CALL <task> <b64>\n   -> OK <b64>\n | ERR <reason>\n
//! ```
//!
//! One request per connection.

use std::io::{BufRead, BufReader, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use thiserror::Error;

use super::descriptor::{emit_descriptor, parse_descriptor, DescriptorError};
use super::provider::SimulatedProvider;
use crate::model::{ServiceDescriptor, TaskId};

#[derive(Debug, Error)]
pub enum WireError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("provider answered with error: {0}")]
    Remote(String),
    #[error("bad response: {0}")]
    BadResponse(String),
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
}

/// Serves a set of simulated providers, one per task, on one socket.
pub struct ProviderServer {
    addr: SocketAddr,
    providers: Arc<Mutex<Vec<SimulatedProvider>>>,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl ProviderServer {
    pub fn bind(addr: impl ToSocketAddrs, providers: Vec<SimulatedProvider>) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let providers = Arc::new(Mutex::new(providers));
        let stop = Arc::new(AtomicBool::new(false));
        let (p, s) = (providers.clone(), stop.clone());
        let handle = std::thread::spawn(move || accept_loop(listener, p, s));
        Ok(ProviderServer { addr, providers, stop, handle: Some(handle) })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Replaces the descriptor served for its task, e.g. to simulate drift.
    pub fn publish(&self, descriptor: ServiceDescriptor) {
        let mut ps = self.providers.lock().expect("provider lock");
        if let Some(p) = ps.iter_mut().find(|p| p.descriptor.task == descriptor.task) {
            p.descriptor = descriptor;
        }
    }
}

impl Drop for ProviderServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn accept_loop(listener: TcpListener, providers: Arc<Mutex<Vec<SimulatedProvider>>>, stop: Arc<AtomicBool>) {
    while !stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, _)) => {
                let providers = providers.clone();
                std::thread::spawn(move || {
                    let _ = handle_conn(stream, &providers);
                });
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(5)),
            Err(_) => break,
        }
    }
}

fn handle_conn(stream: TcpStream, providers: &Mutex<Vec<SimulatedProvider>>) -> std::io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(Duration::from_secs(10)))?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let reply = respond(line.trim_end_matches(['\r', '\n']), providers);
    let mut stream = stream;
    stream.write_all(reply.as_bytes())?;
    stream.write_all(b"\n")?;
    stream.shutdown(Shutdown::Write)
}

fn respond(request: &str, providers: &Mutex<Vec<SimulatedProvider>>) -> String {
    let mut parts = request.splitn(3, ' ');
    let verb = parts.next().unwrap_or("");
    let Some(task) = parts.next().map(TaskId::new) else {
        return "ERR missing task".into();
    };
    let ps = providers.lock().expect("provider lock");
    let Some(p) = ps.iter().find(|p| p.descriptor.task == task) else {
        return format!("ERR unknown task {task}");
    };
    match verb {
        "OFFER" => emit_descriptor(&p.descriptor),
        "CALL" => match B64.decode(parts.next().unwrap_or("")) {
            Ok(input) => format!("OK {}", B64.encode(p.invoke(&input))),
            Err(e) => format!("ERR bad payload: {e}"),
        },
        other => format!("ERR unknown verb {other}"),
    }
}

fn request(addr: SocketAddr, line: &str, timeout: Duration) -> Result<String, WireError> {
    let mut stream = TcpStream::connect_timeout(&addr, timeout)?;
    stream.set_read_timeout(Some(timeout))?;
    stream.set_write_timeout(Some(timeout))?;
    stream.write_all(line.as_bytes())?;
    stream.write_all(b"\n")?;
    let mut reply = String::new();
    BufReader::new(stream).read_line(&mut reply)?;
    let reply = reply.trim_end_matches(['\r', '\n']).to_string();
    match reply.strip_prefix("ERR ") {
        Some(reason) => Err(WireError::Remote(reason.to_string())),
        None => Ok(reply),
    }
}

/// Asks a provider for its current descriptor. Also returns the round-trip
/// time, which [`super::rtt_metric`] turns into a metric.
pub fn fetch_offer(addr: SocketAddr, task: &TaskId, timeout: Duration) -> Result<(ServiceDescriptor, Duration), WireError> {
    let start = Instant::now();
    let reply = request(addr, &format!("OFFER {task}"), timeout)?;
    let rtt = start.elapsed();
    Ok((parse_descriptor(&reply)?, rtt))
}

pub fn call(addr: SocketAddr, task: &TaskId, input: &[u8], timeout: Duration) -> Result<Vec<u8>, WireError> {
    let reply = request(addr, &format!("CALL {task} {}", B64.encode(input)), timeout)?;
    let payload = reply.strip_prefix("OK ").ok_or_else(|| WireError::BadResponse(reply.clone()))?;
    B64.decode(payload).map_err(|e| WireError::BadResponse(e.to_string()))
}
