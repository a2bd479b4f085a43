//! HTTP JSON document-store client and an in-process reference server.
//!
//! Protocol (all bodies JSON):
//!
//! ```text
//! POST /batches  {"batch_id":N,"records":[..]}   -> {"inserted":n}
//! GET  /query?room&field&from&to                 -> [record, ..]
//! GET  /rooms                                    -> ["kitchen", ..]
//! GET  /rooms/{room}/fields                      -> ["gas", ..]
//! ```
//!
//! Errors come back as `{"error":"unknown_room","room":..}` and similar;
//! 5xx responses and transport failures are retried.

// ureq's error type is large, but it never escapes this module.
#![allow(clippy::result_large_err)]

use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;

use super::http::{handle, read_body, respond, BatchBody, ErrorBody, HttpServer, InsertedBody, Reply};
use super::{check_query, check_records, BatchId, MemoryStore, StorageBackend, StoreError};
use crate::gateway::SensorRecord;
use crate::nodes::{Field, RoomId};

pub const STORE_URL_ENV: &str = "WSN_STORE_URL";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub backoff_base_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 3, backoff_base_ms: 100 }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0-based): base * 2^retry.
    pub fn delay_ms(&self, retry: u32) -> u64 {
        self.backoff_base_ms.saturating_mul(1u64.checked_shl(retry).unwrap_or(u64::MAX))
    }
}

#[derive(Debug)]
pub struct RemoteStoreClient {
    base_url: String,
    agent: ureq::Agent,
    retry: RetryPolicy,
    backoffs: Mutex<Vec<u64>>,
}

impl RemoteStoreClient {
    pub fn new(base_url: impl Into<String>, timeout_ms: u64, retry: RetryPolicy) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(Duration::from_millis(timeout_ms)).build();
        Self { base_url: base_url.into().trim_end_matches('/').to_string(), agent, retry, backoffs: Mutex::new(Vec::new()) }
    }

    /// Client for the URL in `WSN_STORE_URL`, if set.
    pub fn from_env() -> Option<Self> {
        let url = std::env::var(STORE_URL_ENV).ok().filter(|u| !u.is_empty())?;
        Some(Self::new(url, 5000, RetryPolicy::default()))
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    /// Every backoff delay slept so far, in ms.
    pub fn backoff_log(&self) -> Vec<u64> {
        self.backoffs.lock().expect("backoff lock").clone()
    }

    fn call<T: DeserializeOwned>(
        &self,
        send: impl Fn(&ureq::Agent, &str) -> Result<ureq::Response, ureq::Error>,
    ) -> Result<T, StoreError> {
        let mut attempts = 0;
        loop {
            attempts += 1;
            let failure = match send(&self.agent, &self.base_url) {
                Ok(resp) => {
                    return resp.into_json::<T>().map_err(|e| StoreError::StoreUnavailable {
                        attempts,
                        message: format!("unreadable response: {e}"),
                    })
                }
                Err(ureq::Error::Status(code, resp)) if code < 500 => return Err(decode_error(code, resp, attempts)),
                Err(e) => e.to_string(),
            };
            if attempts > self.retry.max_retries {
                return Err(StoreError::StoreUnavailable { attempts, message: failure });
            }
            let delay = self.retry.delay_ms(attempts - 1);
            self.backoffs.lock().expect("backoff lock").push(delay);
            std::thread::sleep(Duration::from_millis(delay));
        }
    }
}

fn decode_error(code: u16, resp: ureq::Response, attempts: u32) -> StoreError {
    match resp.into_json::<ErrorBody>() {
        Ok(ErrorBody::UnknownRoom { room }) => StoreError::UnknownRoom(room),
        Ok(ErrorBody::UnknownField { room, field }) => StoreError::UnknownField { room, field },
        Ok(ErrorBody::BadRequest { message }) => StoreError::InvalidRecord(message),
        Ok(ErrorBody::NotFound { message } | ErrorBody::Unavailable { message }) => {
            StoreError::StoreUnavailable { attempts, message }
        }
        Err(_) => StoreError::StoreUnavailable { attempts, message: format!("HTTP {code}") },
    }
}

impl StorageBackend for RemoteStoreClient {
    fn insert_batch(&self, records: &[SensorRecord], batch_id: BatchId) -> Result<usize, StoreError> {
        check_records(records)?;
        let body = BatchBody { batch_id, records: records.to_vec() };
        let r: InsertedBody = self.call(|agent, base| agent.post(&format!("{base}/batches")).send_json(&body))?;
        Ok(r.inserted)
    }

    fn query(&self, room: RoomId, field: Field, from: u64, to: u64) -> Result<Vec<SensorRecord>, StoreError> {
        check_query(room, field, from, to)?;
        let (from, to) = (from.to_string(), to.to_string());
        self.call(|agent, base| {
            agent
                .get(&format!("{base}/query"))
                .query("room", room.as_str())
                .query("field", field.as_str())
                .query("from", &from)
                .query("to", &to)
                .call()
        })
    }

    fn list_rooms(&self) -> Result<Vec<RoomId>, StoreError> {
        self.call(|agent, base| agent.get(&format!("{base}/rooms")).call())
    }

    fn list_fields(&self, room: RoomId) -> Result<Vec<Field>, StoreError> {
        self.call(|agent, base| agent.get(&format!("{base}/rooms/{room}/fields")).call())
    }
}

#[derive(Debug, Default)]
struct Faults {
    fail_next: AtomicU32,
    drop_ack_next: AtomicU32,
    requests: AtomicU64,
}

fn take_one(counter: &AtomicU32) -> bool {
    counter.fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1)).is_ok()
}

/// Reference implementation of the remote protocol over a [`MemoryStore`],
/// with failure injection for tests.
pub struct MockServer {
    store: Arc<MemoryStore>,
    faults: Arc<Faults>,
    http: HttpServer,
}

impl MockServer {
    /// Starts on an ephemeral localhost port.
    pub fn start() -> Result<Self, StoreError> {
        Self::bind("127.0.0.1:0")
    }

    pub fn bind(addr: &str) -> Result<Self, StoreError> {
        let store = Arc::new(MemoryStore::new());
        let faults = Arc::new(Faults::default());
        let (s, f) = (Arc::clone(&store), Arc::clone(&faults));
        let http = HttpServer::start(addr, move |mut request| {
            f.requests.fetch_add(1, Ordering::SeqCst);
            let body = read_body(&mut request);
            if take_one(&f.fail_next) {
                let reply = Reply::error(503, ErrorBody::Unavailable { message: "injected failure".into() });
                return respond(request, reply);
            }
            let is_batch = request.url() == "/batches";
            let mut reply = handle(s.as_ref(), request.method(), request.url(), &body, true);
            if is_batch && reply.status == 200 && take_one(&f.drop_ack_next) {
                reply = Reply::error(503, ErrorBody::Unavailable { message: "acknowledgement lost".into() });
            }
            respond(request, reply);
        })?;
        Ok(Self { store, faults, http })
    }

    pub fn url(&self) -> String {
        self.http.url()
    }

    pub fn store(&self) -> &MemoryStore {
        &self.store
    }

    /// The next `n` requests fail with 503 without reaching the store.
    pub fn fail_next(&self, n: u32) {
        self.faults.fail_next.store(n, Ordering::SeqCst);
    }

    /// The next `n` batch inserts are applied but answered with 503.
    pub fn drop_ack_next(&self, n: u32) {
        self.faults.drop_ack_next.store(n, Ordering::SeqCst);
    }

    pub fn requests(&self) -> u64 {
        self.faults.requests.load(Ordering::SeqCst)
    }
}
