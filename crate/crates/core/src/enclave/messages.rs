//! Plaintexts exchanged between the enclave, the devices and the origin.

use serde::{Deserialize, Serialize};

use crate::cryptowire::{CryptoError, Envelope, Reader, SigningKey, VerifyingKey, SIGNATURE_LEN};
use crate::script::XhrRequest;

pub const ENTER_TRUSTED: &[u8] = b"FIDELIUS:ENTER";
pub const EXIT_TRUSTED: &[u8] = b"FIDELIUS:EXIT";
pub const KEY_RECORD_LEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModeCommand {
    EnterTrusted,
    ExitTrusted,
}

impl ModeCommand {
    pub fn as_bytes(self) -> &'static [u8] {
        match self {
            ModeCommand::EnterTrusted => ENTER_TRUSTED,
            ModeCommand::ExitTrusted => EXIT_TRUSTED,
        }
    }

    pub fn from_bytes(b: &[u8]) -> Option<Self> {
        match b {
            ENTER_TRUSTED => Some(ModeCommand::EnterTrusted),
            EXIT_TRUSTED => Some(ModeCommand::ExitTrusted),
            _ => None,
        }
    }
}

/// One keyboard frame: `type | code u32 BE | 3 bytes padding`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyEvent {
    Dummy,
    Char(char),
    Backspace,
    Tab,
    Enter,
}

impl KeyEvent {
    pub fn to_record(self) -> [u8; KEY_RECORD_LEN] {
        let (ty, code) = match self {
            KeyEvent::Dummy => (0, 0),
            KeyEvent::Char(c) => (1, c as u32),
            KeyEvent::Backspace => (2, 0),
            KeyEvent::Tab => (3, 0),
            KeyEvent::Enter => (4, 0),
        };
        let mut r = [0u8; KEY_RECORD_LEN];
        r[0] = ty;
        r[1..5].copy_from_slice(&code.to_be_bytes());
        r
    }

    pub fn from_record(b: &[u8]) -> Option<KeyEvent> {
        if b.len() != KEY_RECORD_LEN || b[5..] != [0, 0, 0] {
            return None;
        }
        let code = u32::from_be_bytes(b[1..5].try_into().unwrap());
        match (b[0], code) {
            (0, 0) => Some(KeyEvent::Dummy),
            (1, c) => char::from_u32(c).map(KeyEvent::Char),
            (2, 0) => Some(KeyEvent::Backspace),
            (3, 0) => Some(KeyEvent::Tab),
            (4, 0) => Some(KeyEvent::Enter),
            _ => None,
        }
    }

    pub fn is_real(self) -> bool {
        self != KeyEvent::Dummy
    }
}

/// What the enclave sends its origin, before sealing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OriginRequest {
    Submit { form: String, action: String, method: String, body: String },
    Xhr { request: XhrRequest },
    Revision { revision: u64 },
}

/// An envelope plus the session key's signature over its bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedEnvelope {
    pub envelope: Envelope,
    pub signature: [u8; SIGNATURE_LEN],
}

impl SignedEnvelope {
    pub fn sign(envelope: Envelope, key: &SigningKey) -> Self {
        let signature = key.sign_raw(&envelope.to_bytes());
        SignedEnvelope { envelope, signature }
    }

    pub fn verify(&self, key: &VerifyingKey) -> bool {
        key.verify_raw(&self.envelope.to_bytes(), &self.signature)
    }

    /// `len u32 | envelope | signature`
    pub fn to_bytes(&self) -> Vec<u8> {
        let env = self.envelope.to_bytes();
        let mut out = Vec::with_capacity(4 + env.len() + SIGNATURE_LEN);
        out.extend_from_slice(&(env.len() as u32).to_be_bytes());
        out.extend_from_slice(&env);
        out.extend_from_slice(&self.signature);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let mut r = Reader::new(bytes);
        let n = r.u32()? as usize;
        let envelope = Envelope::from_bytes(r.take(n)?)?;
        let signature = r.take(SIGNATURE_LEN)?.try_into().unwrap();
        r.finish()?;
        Ok(SignedEnvelope { envelope, signature })
    }
}
