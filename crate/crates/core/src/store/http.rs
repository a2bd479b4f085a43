//! HTTP surface over a backend.
//!
//! Read-only endpoints:
//!
//! ```text
//! GET /rooms                                 ["kitchen", ...]
//! GET /rooms/{room}/fields                   ["flame", "gas"]
//! GET /series?room=R&field=F&from=T0&to=T1   [{"timestamp":..,"value":..}, ...]
//! ```
//!
//! The mock remote server additionally accepts `POST /batches` and
//! `GET /query` (full records).

use std::net::{SocketAddr, TcpListener, ToSocketAddrs};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};
use socket2::{Domain, Protocol, Socket, Type};
use tiny_http::{Header, Method, Request, Response, Server};

use super::{parse_field, parse_room, SeriesPoint, StorageBackend, StoreError};
use crate::gateway::SensorRecord;

const WORKERS: usize = 4;

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub(crate) enum ErrorBody {
    BadRequest { message: String },
    NotFound { message: String },
    UnknownRoom { room: String },
    UnknownField { room: String, field: String },
    Unavailable { message: String },
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct BatchBody {
    pub batch_id: u64,
    pub records: Vec<SensorRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct InsertedBody {
    pub inserted: usize,
}

pub(crate) struct Reply {
    pub status: u16,
    pub body: String,
}

impl Reply {
    fn json<T: Serialize>(value: &T) -> Self {
        Reply { status: 200, body: serde_json::to_string(value).expect("response serializes") }
    }

    pub fn error(status: u16, body: ErrorBody) -> Self {
        Reply { status, body: serde_json::to_string(&body).expect("error serializes") }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::error(400, ErrorBody::BadRequest { message: message.into() })
    }
}

fn from_store_error(e: StoreError) -> Reply {
    match e {
        StoreError::UnknownRoom(room) => Reply::error(404, ErrorBody::UnknownRoom { room }),
        StoreError::UnknownField { room, field } => Reply::error(404, ErrorBody::UnknownField { room, field }),
        e @ (StoreError::InvalidRange { .. } | StoreError::InvalidRecord(_)) => Reply::bad_request(e.to_string()),
        e => Reply::error(503, ErrorBody::Unavailable { message: e.to_string() }),
    }
}

struct RangeQuery {
    room: String,
    field: String,
    from: u64,
    to: u64,
}

fn parse_range(query: &str) -> Result<RangeQuery, Reply> {
    let mut room = None;
    let mut field = None;
    let mut from = None;
    let mut to = None;
    for (k, v) in form_urlencoded::parse(query.as_bytes()) {
        let slot = match k.as_ref() {
            "room" => &mut room,
            "field" => &mut field,
            "from" => &mut from,
            "to" => &mut to,
            _ => continue,
        };
        if slot.replace(v.into_owned()).is_some() {
            return Err(Reply::bad_request(format!("parameter {k} given twice")));
        }
    }
    let need = |v: Option<String>, name: &str| v.ok_or_else(|| Reply::bad_request(format!("missing parameter {name}")));
    let ts = |v: String, name: &str| {
        v.parse::<u64>().map_err(|_| Reply::bad_request(format!("{name} must be a non-negative integer, got {v:?}")))
    };
    let room = need(room, "room")?;
    let field = need(field, "field")?;
    let from = ts(need(from, "from")?, "from")?;
    let to = ts(need(to, "to")?, "to")?;
    if from > to {
        return Err(Reply::bad_request(format!("from {from} > to {to}")));
    }
    Ok(RangeQuery { room, field, from, to })
}

fn range_records(backend: &dyn StorageBackend, query: &str) -> Result<Vec<SensorRecord>, Reply> {
    let q = parse_range(query)?;
    let room = parse_room(&q.room).map_err(from_store_error)?;
    let field = parse_field(room, &q.field).map_err(from_store_error)?;
    backend.query(room, field, q.from, q.to).map_err(from_store_error)
}

/// Answers one request. `writable` enables the mock-server endpoints.
pub(crate) fn handle(backend: &dyn StorageBackend, method: &Method, url: &str, body: &[u8], writable: bool) -> Reply {
    let (path, query) = url.split_once('?').unwrap_or((url, ""));
    let segments: Vec<String> = path
        .trim_matches('/')
        .split('/')
        .map(|s| percent_encoding::percent_decode_str(s).decode_utf8_lossy().into_owned())
        .collect();
    let segs: Vec<&str> = segments.iter().map(String::as_str).collect();
    let result = match (method, segs.as_slice()) {
        (Method::Get, ["rooms"]) => backend
            .list_rooms()
            .map(|rooms| Reply::json(&rooms))
            .map_err(from_store_error),
        (Method::Get, ["rooms", room, "fields"]) => parse_room(room)
            .and_then(|r| backend.list_fields(r))
            .map(|fields| Reply::json(&fields))
            .map_err(from_store_error),
        (Method::Get, ["series"]) => range_records(backend, query)
            .map(|recs| Reply::json(&recs.iter().map(SeriesPoint::from).collect::<Vec<_>>())),
        (Method::Get, ["query"]) if writable => range_records(backend, query).map(|recs| Reply::json(&recs)),
        (Method::Post, ["batches"]) if writable => serde_json::from_slice::<BatchBody>(body)
            .map_err(|e| Reply::bad_request(format!("invalid batch body: {e}")))
            .and_then(|b| backend.insert_batch(&b.records, b.batch_id).map_err(from_store_error))
            .map(|inserted| Reply::json(&InsertedBody { inserted })),
        _ => Err(Reply::error(404, ErrorBody::NotFound { message: format!("no route for {method} {path}") })),
    };
    result.unwrap_or_else(|e| e)
}

pub(crate) fn respond(request: Request, reply: Reply) {
    let header = Header::from_bytes("Content-Type", "application/json").expect("static header");
    let response = Response::from_string(reply.body).with_status_code(reply.status).with_header(header);
    // The client may have gone away; nothing to do about it.
    let _ = request.respond(response);
}

pub(crate) fn read_body(request: &mut Request) -> Vec<u8> {
    let mut body = Vec::new();
    let _ = request.as_reader().read_to_end(&mut body);
    body
}

/// tiny_http flushes responses in 1 KiB pieces; with Nagle on, every reply
/// larger than that stalls on the peer's delayed ACK. Accepted sockets
/// inherit the option from the listener.
fn nodelay_listener(bind: &str) -> std::io::Result<TcpListener> {
    let addr = bind
        .to_socket_addrs()?
        .next()
        .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidInput, "no address"))?;
    let socket = Socket::new(Domain::for_address(addr), Type::STREAM, Some(Protocol::TCP))?;
    socket.set_reuse_address(true)?;
    socket.set_nodelay(true)?;
    socket.bind(&addr.into())?;
    socket.listen(128)?;
    Ok(socket.into())
}

/// A running HTTP server; stops when dropped.
pub struct HttpServer {
    addr: SocketAddr,
    server: Arc<Server>,
    workers: Vec<JoinHandle<()>>,
}

impl HttpServer {
    pub(crate) fn start<F>(bind: &str, handler: F) -> Result<Self, StoreError>
    where
        F: Fn(Request) + Send + Sync + 'static,
    {
        let listener = nodelay_listener(bind).map_err(|e| StoreError::Io(format!("cannot bind {bind}: {e}")))?;
        let server =
            Server::from_listener(listener, None).map_err(|e| StoreError::Io(format!("cannot serve {bind}: {e}")))?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| StoreError::Io(format!("{bind} is not an IP address")))?;
        let server = Arc::new(server);
        let handler = Arc::new(handler);
        let workers = (0..WORKERS)
            .map(|_| {
                let server = Arc::clone(&server);
                let handler = Arc::clone(&handler);
                std::thread::spawn(move || {
                    while let Ok(request) = server.recv() {
                        handler(request);
                    }
                })
            })
            .collect();
        Ok(Self { addr, server, workers })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the server stops.
    pub fn wait(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for HttpServer {
    fn drop(&mut self) {
        for _ in 0..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

/// Serves the read-only query endpoints for `backend` on `bind`
/// (e.g. `127.0.0.1:8080`; port 0 picks a free port).
pub fn serve(backend: Arc<dyn StorageBackend>, bind: &str) -> Result<HttpServer, StoreError> {
    HttpServer::start(bind, move |mut request| {
        let body = read_body(&mut request);
        let reply = handle(backend.as_ref(), request.method(), request.url(), &body, false);
        respond(request, reply);
    })
}
