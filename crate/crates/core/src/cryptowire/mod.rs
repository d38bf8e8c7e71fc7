//! Cryptographic primitives and the envelope wire format shared by every
//! channel: AEAD envelopes, content signatures, sealing, device pairing and
//! the simulated attestation handshake.

mod attest;
mod envelope;
mod origin;
mod pairing;
mod seal;
mod sign;

pub use attest::{
    attest_and_exchange, attest_and_exchange_with, measure, AttestationQuote, EnclaveHandshake, EnclaveSession,
    HandshakeLeg, OriginSession, Platform, ServerIdentity, ServerSession, WEB_ENCLAVE_CODE_IDENTITY,
};
pub(crate) use envelope::Reader;
pub use envelope::{
    open_envelope, seal_envelope, Channel, Direction, Envelope, KeyMaterial, StreamId, ENVELOPE_VERSION, NONCE_LEN,
    TAG_LEN,
};
pub use origin::Origin;
pub use pairing::{CounterPair, DeviceMasterKey, DevicePairing, StreamCounters};
pub use seal::{seal_data, unseal_data, SealedRecord, SealingKey};
pub use sign::{
    sign_content, verify_content, KeyId, KeypairFixture, SignedBlob, SigningKey, VerifyingKey, PUBLIC_KEY_LEN,
    SIGNATURE_LEN,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CryptoError {
    #[error("invalid origin: {0}")]
    InvalidOrigin(String),
    #[error("malformed encoding: {0}")]
    Malformed(&'static str),
    #[error("key does not belong to this stream")]
    StreamMismatch,
    #[error("counter space exhausted; stream must be rekeyed")]
    CounterExhausted,
    #[error("replayed counter {counter} (last accepted {last_accepted})")]
    ReplayDetected { counter: u64, last_accepted: u64 },
    #[error("origin mismatch: expected {expected}, found {found}")]
    OriginMismatch { expected: String, found: String },
    #[error("authentication failure")]
    AuthFailure,
    #[error("sealed record belongs to {found}, not {expected}")]
    CrossOriginSeal { expected: String, found: String },
    #[error("rollback detected: record revision {found} < expected {expected}")]
    RollbackDetected { found: u64, expected: u64 },
    #[error("revision mismatch: record revision {found} > expected {expected}")]
    RevisionMismatch { found: u64, expected: u64 },
    #[error("enclave measurement does not match the expected value")]
    MeasurementMismatch,
    #[error("server could not prove the origin identity")]
    OriginKeyInvalid,
    #[error("attestation transcript was tampered with")]
    TranscriptTampered,
}
