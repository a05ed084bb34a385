//! Newline-delimited JSON inference service over TCP.
//!
//! One request object per line, one response line per request. The loaded
//! checkpoint's tensors and normalizer are immutable and shared read-only
//! across connections; each connection owns an optional RNG seeded from a
//! `seed` field for reproducible sampled-mode responses. Malformed input
//! produces an error response on that line and the connection stays open.

use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;

use crate::mdp::{Observation, RunningNormalizer, SCAN_FRAMES};
use crate::net::{NetConfig, PolicyParams};
use crate::rng::derive_stream;

fn default_true() -> bool {
    true
}

#[derive(Debug, Deserialize)]
pub struct InferenceRequest {
    /// `SCAN_FRAMES` scan frames, each with the checkpoint's beam count.
    pub scan: Vec<Vec<f64>>,
    /// (distance, angle) of the goal in the robot frame.
    pub goal: [f64; 2],
    /// Current (v, w).
    pub vel: [f64; 2],
    #[serde(default = "default_true")]
    pub deterministic: bool,
    /// Reseeds this connection's sampling stream before handling.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize)]
#[serde(untagged)]
pub enum InferenceResponse {
    Ok { v: f64, w: f64 },
    Err { error: String, msg: String },
}

/// Immutable inference context shared by all connections.
pub struct PolicyService {
    pub policy: PolicyParams,
    pub net: NetConfig,
    pub normalizer: RunningNormalizer,
}

impl PolicyService {
    pub fn from_checkpoint(path: &std::path::Path) -> Result<Self, crate::CheckpointError> {
        let state = crate::ppo::load_checkpoint(path)?;
        Ok(PolicyService {
            policy: state.policy,
            net: state.net,
            normalizer: state.normalizer,
        })
    }

    /// Handle one request line; always returns a response line.
    pub fn handle_line(&self, line: &str, rng: &mut rand_chacha::ChaCha8Rng) -> String {
        let response = match serde_json::from_str::<InferenceRequest>(line) {
            Ok(req) => self.handle_request(req, rng),
            Err(e) => InferenceResponse::Err {
                error: "parse".into(),
                msg: e.to_string(),
            },
        };
        serde_json::to_string(&response).expect("response serializes")
    }

    fn handle_request(
        &self,
        req: InferenceRequest,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> InferenceResponse {
        if req.scan.len() != SCAN_FRAMES {
            return InferenceResponse::Err {
                error: "shape".into(),
                msg: format!("expected {SCAN_FRAMES} scan frames, got {}", req.scan.len()),
            };
        }
        let beams = self.net.n_beams;
        for frame in &req.scan {
            if frame.len() != beams {
                return InferenceResponse::Err {
                    error: "beam_mismatch".into(),
                    msg: format!(
                        "checkpoint expects {beams} beams per frame, got {}",
                        frame.len()
                    ),
                };
            }
        }
        if !req
            .scan
            .iter()
            .flatten()
            .chain(req.goal.iter())
            .chain(req.vel.iter())
            .all(|x| x.is_finite())
        {
            return InferenceResponse::Err {
                error: "parse".into(),
                msg: "non-finite values in request".into(),
            };
        }
        if let Some(seed) = req.seed {
            *rng = derive_stream(seed, 0);
        }
        let obs = Observation {
            scan_stack: req.scan,
            goal_polar: req.goal,
            velocity: req.vel,
        };
        let action = crate::eval::infer_action(
            &self.policy,
            &self.net,
            &self.normalizer,
            &obs,
            req.deterministic,
            rng,
        );
        InferenceResponse::Ok {
            v: action[0],
            w: action[1],
        }
    }
}

/// A bound listener ready to serve.
pub struct Server {
    listener: TcpListener,
    service: Arc<PolicyService>,
}

impl Server {
    pub fn bind(service: PolicyService, addr: &str) -> std::io::Result<Self> {
        Ok(Server {
            listener: TcpListener::bind(addr)?,
            service: Arc::new(service),
        })
    }

    pub fn local_addr(&self) -> std::io::Result<std::net::SocketAddr> {
        self.listener.local_addr()
    }

    /// Accept loop; one thread per connection. Runs until the process exits.
    pub fn run(&self) -> std::io::Result<()> {
        for stream in self.listener.incoming() {
            match stream {
                Ok(stream) => {
                    let service = Arc::clone(&self.service);
                    std::thread::spawn(move || handle_connection(service, stream));
                }
                Err(e) => eprintln!("accept error: {e}"),
            }
        }
        Ok(())
    }
}

fn handle_connection(service: Arc<PolicyService>, stream: TcpStream) {
    let peer = stream.peer_addr().ok();
    let mut writer = match stream.try_clone() {
        Ok(w) => w,
        Err(_) => return,
    };
    let reader = BufReader::new(stream);
    // Connection-local sampling stream; reseeded by a request's seed field.
    let mut rng = derive_stream(0, 0);
    for line in reader.split(b'\n') {
        let Ok(raw) = line else { break };
        let text = String::from_utf8_lossy(&raw);
        let trimmed = text.trim_end_matches('\r');
        let response = service.handle_line(trimmed, &mut rng);
        if writer
            .write_all(response.as_bytes())
            .and_then(|_| writer.write_all(b"\n"))
            .is_err()
        {
            break;
        }
    }
    let _ = peer;
}

/// Load a checkpoint and serve it until killed.
pub fn serve(checkpoint: &std::path::Path, addr: &str) -> Result<(), crate::TrainError> {
    let service = PolicyService::from_checkpoint(checkpoint)?;
    let server = Server::bind(service, addr).map_err(crate::TrainError::Io)?;
    eprintln!(
        "serving {} on {}",
        checkpoint.display(),
        server.local_addr().map_err(crate::TrainError::Io)?
    );
    server.run().map_err(crate::TrainError::Io)
}
