//! The origin server: attests enclaves, accepts signed submissions and
//! answers trusted XHR, and anchors the storage revision.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::cryptowire::{open_envelope, seal_envelope, Channel, CryptoError, Origin, ServerIdentity, ServerSession};
use crate::enclave::messages::{OriginRequest, SignedEnvelope};
use crate::script::XhrResponse;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ServerError {
    #[error("no attested session on connection {0}")]
    UnknownSession(usize),
    #[error("enclave signature does not verify")]
    BadSignature,
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error("request body is not an origin request")]
    BadRequest,
    #[error("revision {offered} does not advance {current}")]
    RevisionRegression { offered: u64, current: u64 },
}

impl ServerError {
    /// Short name used in detection signals.
    pub fn signal(&self) -> String {
        match self {
            ServerError::UnknownSession(_) => "UnknownSession".into(),
            ServerError::BadSignature => "AuthFailure".into(),
            ServerError::Crypto(e) => crypto_signal(e).into(),
            ServerError::BadRequest => "BadRequest".into(),
            ServerError::RevisionRegression { .. } => "RevisionRegression".into(),
        }
    }
}

pub(crate) fn crypto_signal(e: &CryptoError) -> &'static str {
    match e {
        CryptoError::InvalidOrigin(_) => "InvalidOrigin",
        CryptoError::Malformed(_) => "Malformed",
        CryptoError::StreamMismatch => "StreamMismatch",
        CryptoError::CounterExhausted => "CounterExhausted",
        CryptoError::ReplayDetected { .. } => "ReplayDetected",
        CryptoError::OriginMismatch { .. } => "OriginMismatch",
        CryptoError::AuthFailure => "AuthFailure",
        CryptoError::CrossOriginSeal { .. } => "CrossOriginSeal",
        CryptoError::RollbackDetected { .. } => "RollbackDetected",
        CryptoError::RevisionMismatch { .. } => "RevisionMismatch",
        CryptoError::MeasurementMismatch => "MeasurementMismatch",
        CryptoError::OriginKeyInvalid => "OriginKeyInvalid",
        CryptoError::TranscriptTampered => "TranscriptTampered",
    }
}

/// Data the server accepted from an enclave.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Submission {
    Form { tick: u64, form: String, action: String, body: String },
    Xhr { tick: u64, method: String, path: String, body: String },
}

#[derive(Debug)]
pub struct OriginServer {
    identity: ServerIdentity,
    rng: ChaCha20Rng,
    sessions: BTreeMap<usize, ServerSession>,
    submissions: Vec<Submission>,
    rejected: u64,
    null_cipher: bool,
}

impl OriginServer {
    pub fn new(identity: ServerIdentity, seed: u64) -> Self {
        OriginServer {
            identity,
            rng: ChaCha20Rng::seed_from_u64(seed),
            sessions: BTreeMap::new(),
            submissions: Vec::new(),
            rejected: 0,
            null_cipher: false,
        }
    }

    /// Negative-control hook: sessions established from now on use plaintext.
    pub fn disable_encryption_for_control(&mut self) {
        self.null_cipher = true;
    }

    pub fn origin(&self) -> &Origin {
        &self.identity.origin
    }

    pub fn revision(&self) -> u64 {
        self.identity.revision
    }

    pub fn submissions(&self) -> &[Submission] {
        &self.submissions
    }

    pub fn rejected(&self) -> u64 {
        self.rejected
    }

    /// Answers an attestation quote arriving on connection `conn`.
    pub fn attest(&mut self, conn: usize, quote: &[u8]) -> Result<Vec<u8>, ServerError> {
        let r = self.identity.respond(quote, &mut self.rng);
        let (mut session, hello) = r.inspect_err(|_| self.rejected += 1)?;
        if self.null_cipher {
            session.keys.send.disable_encryption_for_control();
            session.keys.recv.disable_encryption_for_control();
        }
        self.sessions.insert(conn, session);
        Ok(hello)
    }

    /// Handles one signed envelope; XHR requests get a sealed reply.
    pub fn handle(&mut self, now: u64, conn: usize, bytes: &[u8]) -> Result<Option<Vec<u8>>, ServerError> {
        let r = self.handle_inner(now, conn, bytes);
        if r.is_err() {
            self.rejected += 1;
        }
        r
    }

    fn handle_inner(&mut self, now: u64, conn: usize, bytes: &[u8]) -> Result<Option<Vec<u8>>, ServerError> {
        let session = self.sessions.get_mut(&conn).ok_or(ServerError::UnknownSession(conn))?;
        let signed = SignedEnvelope::from_bytes(bytes)?;
        if !signed.verify(&session.enclave_sign_key) {
            return Err(ServerError::BadSignature);
        }
        let origin = self.identity.origin.clone();
        let plain = open_envelope(&mut session.keys.recv, &origin, &signed.envelope)?;
        let req: OriginRequest = serde_json::from_slice(&plain).map_err(|_| ServerError::BadRequest)?;
        match req {
            OriginRequest::Submit { form, action, body, .. } => {
                self.submissions.push(Submission::Form { tick: now, form, action, body });
                Ok(None)
            }
            OriginRequest::Xhr { request } => {
                self.submissions.push(Submission::Xhr {
                    tick: now,
                    method: request.method,
                    path: request.path,
                    body: request.body,
                });
                let reply = serde_json::to_vec(&XhrResponse { status: 200, body: "ok".into() }).expect("reply serializes");
                let env = seal_envelope(&mut session.keys.send, Channel::OriginToEnclave, &origin, &reply)?;
                Ok(Some(env.to_bytes()))
            }
            OriginRequest::Revision { revision } => {
                let current = self.identity.revision;
                if revision <= current {
                    return Err(ServerError::RevisionRegression { offered: revision, current });
                }
                self.identity.revision = revision;
                Ok(None)
            }
        }
    }
}
