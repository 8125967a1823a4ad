//! Thread-per-connection TCP serving of a request/response [`Handler`].

use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use crate::wire::{Connection, ErrorCode, Message};

pub const ADDR_ENV: &str = "EBTREE_ADDR";
pub const DEFAULT_PORT: u16 = 7474;

pub fn default_addr() -> String {
    std::env::var(ADDR_ENV).unwrap_or_else(|_| format!("127.0.0.1:{DEFAULT_PORT}"))
}

pub trait Handler: Send + Sync + 'static {
    fn handle(&self, msg: Message) -> Message;
}

fn serve_connection(stream: TcpStream, handler: &dyn Handler) {
    stream.set_nodelay(true).ok();
    let Ok(mut conn) = Connection::new(stream) else { return };
    while let Ok(Some(line)) = conn.recv_line() {
        let reply = match Message::from_line(&line) {
            Ok(msg) => handler.handle(msg),
            Err(e) => Message::err(ErrorCode::Malformed, e.to_string()),
        };
        if conn.send(&reply).is_err() {
            break;
        }
    }
}

/// Accepts connections until `stop` is set, one thread per connection.
pub fn serve(listener: TcpListener, handler: Arc<dyn Handler>, stop: Arc<AtomicBool>) -> io::Result<()> {
    for stream in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let stream = match stream {
            Ok(s) => s,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        };
        let handler = handler.clone();
        thread::spawn(move || serve_connection(stream, handler.as_ref()));
    }
    Ok(())
}

/// A service running on a background thread.
pub struct ServiceHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<io::Result<()>>>,
}

impl ServiceHandle {
    pub fn spawn(addr: &str, handler: Arc<dyn Handler>) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let thread = thread::spawn(move || serve(listener, handler, flag));
        Ok(ServiceHandle { addr, stop, thread: Some(thread) })
    }

    pub fn addr(&self) -> String {
        self.addr.to_string()
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the accept loop.
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}
