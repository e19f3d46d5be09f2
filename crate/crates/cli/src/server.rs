//! HTTP server speaking the backend wire protocol, for any backend.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use eviprompt::backend::wire::dispatch;
use eviprompt::backend::SegmenterBackend;
use tiny_http::{Header, Method, Response, Server};
use tracing::{debug, warn};

use crate::CliError;

pub struct BridgeServer {
    server: Arc<Server>,
    addr: SocketAddr,
    worker: Option<JoinHandle<()>>,
}

impl BridgeServer {
    /// Binds `addr` (port 0 picks a free port) and serves on a background thread.
    pub fn start(backend: Arc<dyn SegmenterBackend>, addr: &str) -> Result<Self, CliError> {
        let server = Server::http(addr).map_err(|e| CliError::Other(format!("bind {addr}: {e}")))?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| CliError::Other("server is not bound to an IP address".into()))?;
        let server = Arc::new(server);
        let s = Arc::clone(&server);
        let worker = std::thread::spawn(move || {
            for mut req in s.incoming_requests() {
                let mut body = Vec::new();
                let (status, payload) = if let Err(e) = req.as_reader().read_to_end(&mut body) {
                    (400, format!("{{\"error\":\"unreadable body: {e}\"}}").into_bytes())
                } else if *req.method() != Method::Post {
                    (405, br#"{"error":"only POST is supported"}"#.to_vec())
                } else {
                    dispatch(backend.as_ref(), req.url(), &body)
                };
                debug!(url = req.url(), status, "bridge request served");
                let header = Header::from_bytes("Content-Type", "application/json").expect("static header");
                let resp = Response::from_data(payload).with_status_code(status).with_header(header);
                if let Err(e) = req.respond(resp) {
                    warn!(error = %e, "failed to send response");
                }
            }
        });
        Ok(Self {
            server,
            addr,
            worker: Some(worker),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the server stops.
    pub fn wait(mut self) {
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

impl Drop for BridgeServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}
