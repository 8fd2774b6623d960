//! Blocking TCP plumbing for framed request/response exchanges.

use std::collections::HashMap;
use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::emulator::frame::{read_frame, write_frame};

#[derive(Debug, thiserror::Error)]
pub enum CallError {
    #[error("cannot connect to {addr}: {source}")]
    Connect { addr: String, source: io::Error },
    #[error("no response within {0:?}")]
    Timeout(Duration),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
}

/// Keeps idle connections per peer so request/response pairs reuse sockets.
#[derive(Debug, Default)]
pub struct ConnPool {
    idle: Mutex<HashMap<String, Vec<TcpStream>>>,
}

impl ConnPool {
    pub fn new() -> Self {
        Self::default()
    }

    fn checkout(&self, addr: &str, timeout: Duration) -> Result<TcpStream, CallError> {
        if let Some(stream) = self.idle.lock().unwrap().get_mut(addr).and_then(Vec::pop) {
            return Ok(stream);
        }
        let connect_err = |source| CallError::Connect { addr: addr.to_string(), source };
        let sock: SocketAddr = addr
            .to_socket_addrs()
            .map_err(connect_err)?
            .next()
            .ok_or_else(|| connect_err(io::Error::new(io::ErrorKind::NotFound, "unresolvable")))?;
        let stream = TcpStream::connect_timeout(&sock, timeout).map_err(connect_err)?;
        stream.set_nodelay(true).ok();
        Ok(stream)
    }

    /// One request frame out, one response frame back.
    pub fn call<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        addr: &str,
        request: &Req,
        timeout: Duration,
    ) -> Result<Resp, CallError> {
        let mut stream = self.checkout(addr, timeout)?;
        stream.set_read_timeout(Some(timeout))?;
        stream.set_write_timeout(Some(timeout))?;
        write_frame(&mut stream, request)?;
        match read_frame(&mut stream) {
            Ok(resp) => {
                self.idle.lock().unwrap().entry(addr.to_string()).or_default().push(stream);
                Ok(resp)
            }
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                Err(CallError::Timeout(timeout))
            }
            Err(e) => Err(CallError::Io(e)),
        }
    }
}

/// Accept loop answering framed requests with `handler` until shut down.
pub struct FrameServer {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl FrameServer {
    pub fn bind<Req, Resp, F>(addr: &str, handler: F) -> io::Result<FrameServer>
    where
        Req: DeserializeOwned + Send + 'static,
        Resp: Serialize + Send + 'static,
        F: Fn(Req) -> Option<Resp> + Send + Sync + 'static,
    {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let local = listener.local_addr()?;
        let shutdown = Arc::new(AtomicBool::new(false));
        let handler = Arc::new(handler);
        let stop = shutdown.clone();
        let thread = std::thread::Builder::new()
            .name(format!("frame-server-{}", local.port()))
            .spawn(move || accept_loop(listener, handler, stop))?;
        Ok(FrameServer { addr: local, shutdown, thread: Some(thread) })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for FrameServer {
    fn drop(&mut self) {
        self.stop();
    }
}

fn accept_loop<Req, Resp, F>(listener: TcpListener, handler: Arc<F>, stop: Arc<AtomicBool>)
where
    Req: DeserializeOwned + Send + 'static,
    Resp: Serialize + Send + 'static,
    F: Fn(Req) -> Option<Resp> + Send + Sync + 'static,
{
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let handler = handler.clone();
                let stop = stop.clone();
                std::thread::spawn(move || serve_connection(stream, handler, stop));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(2)),
            Err(e) => {
                log::warn!("accept failed: {e}");
                std::thread::sleep(Duration::from_millis(2));
            }
        }
    }
}

fn serve_connection<Req, Resp, F>(mut stream: TcpStream, handler: Arc<F>, stop: Arc<AtomicBool>)
where
    Req: DeserializeOwned,
    Resp: Serialize,
    F: Fn(Req) -> Option<Resp>,
{
    stream.set_nonblocking(false).ok();
    stream.set_nodelay(true).ok();
    // Periodic wakeups let idle connections notice shutdown.
    let mut probe = [0u8; 1];
    while !stop.load(Ordering::SeqCst) {
        stream.set_read_timeout(Some(Duration::from_millis(200))).ok();
        match stream.peek(&mut probe) {
            Ok(0) => return,
            Ok(_) => {}
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => continue,
            Err(_) => return,
        }
        // A frame has started; read it whole.
        stream.set_read_timeout(Some(Duration::from_secs(30))).ok();
        let request: Req = match read_frame(&mut stream) {
            Ok(r) => r,
            Err(_) => return,
        };
        match handler(request) {
            Some(resp) => {
                if write_frame(&mut stream, &resp).is_err() {
                    return;
                }
            }
            None => return,
        }
    }
}
