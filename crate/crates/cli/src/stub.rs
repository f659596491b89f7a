//! Scripted stand-in for an inference server, speaking the same wire format
//! as the remote backend.

use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use semobs_core::backend::{InferWireRequest, InferWireResponse};
use tiny_http::{Header, Method, Response, Server};

#[derive(Debug, Clone, PartialEq)]
pub struct StubScript {
    /// Text returned for every request.
    pub answer: String,
    /// Artificial processing time per request.
    pub delay: Duration,
    /// Status code for `/infer`; non-2xx responses carry no body.
    pub status: u16,
}

impl Default for StubScript {
    fn default() -> Self {
        StubScript {
            answer: "Normal".into(),
            delay: Duration::ZERO,
            status: 200,
        }
    }
}

pub struct StubServer {
    server: Arc<Server>,
    url: String,
    handle: Option<JoinHandle<()>>,
}

impl StubServer {
    /// Binds `addr` (use port 0 for an ephemeral port) and serves in a
    /// background thread until dropped.
    pub fn start(addr: &str, script: StubScript) -> std::io::Result<Self> {
        let server = Arc::new(Server::http(addr).map_err(std::io::Error::other)?);
        let url = format!(
            "http://{}",
            server.server_addr().to_ip().ok_or_else(|| std::io::Error::other("not an IP listener"))?
        );
        let worker = Arc::clone(&server);
        let handle = std::thread::spawn(move || serve(&worker, &script));
        Ok(StubServer {
            server,
            url,
            handle: Some(handle),
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    /// Blocks until the server stops.
    pub fn join(mut self) {
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn json_header() -> Header {
    Header::from_bytes("Content-Type", "application/json").expect("static header")
}

fn serve(server: &Server, script: &StubScript) {
    for mut request in server.incoming_requests() {
        let script = script.clone();
        // One thread per request so a slow answer never blocks the next call.
        std::thread::spawn(move || {
            let reply = match (request.method(), request.url()) {
                (Method::Get, "/health") => Response::from_string("ok").with_status_code(200),
                (Method::Post, "/infer") => {
                    let mut body = String::new();
                    let parsed = request
                        .as_reader()
                        .read_to_string(&mut body)
                        .ok()
                        .and_then(|_| serde_json::from_str::<InferWireRequest>(&body).ok());
                    match parsed {
                        None => Response::from_string("bad request").with_status_code(400),
                        Some(_) => {
                            std::thread::sleep(script.delay);
                            if (200..300).contains(&script.status) {
                                let wire = InferWireResponse {
                                    text: script.answer.clone(),
                                    tokens_generated: script.answer.split_whitespace().count() as u32,
                                    infer_ms: script.delay.as_secs_f64() * 1000.0,
                                };
                                Response::from_string(serde_json::to_string(&wire).expect("serializes"))
                                    .with_header(json_header())
                                    .with_status_code(script.status)
                            } else {
                                Response::from_string("").with_status_code(script.status)
                            }
                        }
                    }
                }
                _ => Response::from_string("not found").with_status_code(404),
            };
            let _ = request.respond(reply);
        });
    }
}
