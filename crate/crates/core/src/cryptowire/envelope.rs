//! AEAD envelopes with counter and origin binding.
//!
//! Wire layout (all integers big-endian):
//!
//! ```text
//! version u8 | channel u8 | origin_len u16 | origin utf-8 | counter u64 | nonce [12] | ciphertext || tag
//! ```
//!
//! Everything up to and including the counter is the associated data.

use std::fmt;

use aes_gcm::aead::{Aead, KeyInit, Payload};
use aes_gcm::{Aes256Gcm, Nonce};
use serde::{Deserialize, Serialize};

use super::{CryptoError, Origin};

pub const ENVELOPE_VERSION: u8 = 1;
pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    KeyboardToEnclave,
    EnclaveToDisplay,
    EnclaveToOrigin,
    OriginToEnclave,
}

impl Channel {
    pub const ALL: [Channel; 4] = [
        Channel::KeyboardToEnclave,
        Channel::EnclaveToDisplay,
        Channel::EnclaveToOrigin,
        Channel::OriginToEnclave,
    ];

    pub fn tag(self) -> u8 {
        match self {
            Channel::KeyboardToEnclave => 0x01,
            Channel::EnclaveToDisplay => 0x02,
            Channel::EnclaveToOrigin => 0x03,
            Channel::OriginToEnclave => 0x04,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Channel::ALL.into_iter().find(|c| c.tag() == tag)
    }
}

/// Flow direction relative to the channel's name. `Reverse` on
/// `KeyboardToEnclave` is the enclave-to-keyboard command stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Reverse,
}

impl Direction {
    pub fn flag(self) -> u8 {
        match self {
            Direction::Forward => 0x00,
            Direction::Reverse => 0x01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StreamId {
    pub channel: Channel,
    pub origin: Origin,
    pub direction: Direction,
}

impl StreamId {
    pub fn new(channel: Channel, origin: Origin, direction: Direction) -> Self {
        Self { channel, origin, direction }
    }

    /// Nonce for `counter` on this stream: channel tag, direction flag, two
    /// zero bytes, then the counter.
    pub fn nonce(&self, counter: u64) -> [u8; NONCE_LEN] {
        let mut n = [0u8; NONCE_LEN];
        n[0] = self.channel.tag();
        n[1] = self.direction.flag();
        n[4..].copy_from_slice(&counter.to_be_bytes());
        n
    }
}

/// One endpoint's view of a unidirectional stream: the key plus both
/// counters. Counter 0 means "nothing sent / nothing accepted yet".
#[derive(Clone, PartialEq, Eq)]
pub struct KeyMaterial {
    aead_key: [u8; 32],
    stream: StreamId,
    last_counter_sent: u64,
    last_counter_accepted: u64,
    null_cipher: bool,
}

impl fmt::Debug for KeyMaterial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyMaterial")
            .field("stream", &self.stream)
            .field("last_counter_sent", &self.last_counter_sent)
            .field("last_counter_accepted", &self.last_counter_accepted)
            .finish_non_exhaustive()
    }
}

impl KeyMaterial {
    pub fn new(aead_key: [u8; 32], stream: StreamId) -> Self {
        Self { aead_key, stream, last_counter_sent: 0, last_counter_accepted: 0, null_cipher: false }
    }

    pub fn stream(&self) -> &StreamId {
        &self.stream
    }

    pub fn last_counter_sent(&self) -> u64 {
        self.last_counter_sent
    }

    pub fn last_counter_accepted(&self) -> u64 {
        self.last_counter_accepted
    }

    /// Restores persisted counters (e.g. from sealed pairing state).
    pub fn with_counters(mut self, sent: u64, accepted: u64) -> Self {
        self.last_counter_sent = sent;
        self.last_counter_accepted = accepted;
        self
    }

    /// Negative-control hook: envelopes sealed with this key carry the
    /// plaintext in place of ciphertext. Never set outside control scenarios.
    #[doc(hidden)]
    pub fn disable_encryption_for_control(&mut self) {
        self.null_cipher = true;
    }

    #[cfg(test)]
    pub(crate) fn key_bytes(&self) -> &[u8; 32] {
        &self.aead_key
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Envelope {
    pub version: u8,
    pub channel: Channel,
    pub origin: Origin,
    pub counter: u64,
    pub nonce: [u8; NONCE_LEN],
    pub ciphertext: Vec<u8>,
}

impl Envelope {
    /// Associated data: the serialized header through the counter.
    pub fn aad(&self) -> Vec<u8> {
        header_bytes(self.version, self.channel, &self.origin, self.counter)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.aad();
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&self.ciphertext);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let mut r = Reader::new(bytes);
        let version = r.u8()?;
        let channel = Channel::from_tag(r.u8()?).ok_or(CryptoError::Malformed("channel tag"))?;
        let origin_len = r.u16()? as usize;
        let origin = Origin::from_wire(r.take(origin_len)?)?;
        let counter = r.u64()?;
        let nonce: [u8; NONCE_LEN] = r.take(NONCE_LEN)?.try_into().expect("length checked");
        let ciphertext = r.rest().to_vec();
        if ciphertext.len() < TAG_LEN {
            return Err(CryptoError::Malformed("ciphertext shorter than tag"));
        }
        Ok(Self { version, channel, origin, counter, nonce, ciphertext })
    }

    /// Length of the plaintext this envelope carries.
    pub fn plaintext_len(&self) -> usize {
        self.ciphertext.len() - TAG_LEN
    }
}

fn header_bytes(version: u8, channel: Channel, origin: &Origin, counter: u64) -> Vec<u8> {
    let origin = origin.canonical();
    let mut out = Vec::with_capacity(12 + origin.len());
    out.push(version);
    out.push(channel.tag());
    out.extend_from_slice(&(origin.len() as u16).to_be_bytes());
    out.extend_from_slice(origin.as_bytes());
    out.extend_from_slice(&counter.to_be_bytes());
    out
}

pub(crate) fn aead_seal(key: &[u8; 32], nonce: &[u8; NONCE_LEN], aad: &[u8], msg: &[u8]) -> Vec<u8> {
    Aes256Gcm::new(key.into())
        .encrypt(&Nonce::from(*nonce), Payload { msg, aad })
        .expect("AES-GCM encryption is infallible for in-memory buffers")
}

pub(crate) fn aead_open(
    key: &[u8; 32],
    nonce: &[u8; NONCE_LEN],
    aad: &[u8],
    ct: &[u8],
) -> Result<Vec<u8>, CryptoError> {
    Aes256Gcm::new(key.into())
        .decrypt(&Nonce::from(*nonce), Payload { msg: ct, aad })
        .map_err(|_| CryptoError::AuthFailure)
}

pub fn seal_envelope(
    key: &mut KeyMaterial,
    channel: Channel,
    origin: &Origin,
    plaintext: &[u8],
) -> Result<Envelope, CryptoError> {
    if key.stream.channel != channel || &key.stream.origin != origin {
        return Err(CryptoError::StreamMismatch);
    }
    let counter = key.last_counter_sent.checked_add(1).ok_or(CryptoError::CounterExhausted)?;
    let nonce = key.stream.nonce(counter);
    let mut env = Envelope {
        version: ENVELOPE_VERSION,
        channel,
        origin: origin.clone(),
        counter,
        nonce,
        ciphertext: Vec::new(),
    };
    env.ciphertext = if key.null_cipher {
        let mut v = plaintext.to_vec();
        v.extend_from_slice(&[0u8; TAG_LEN]);
        v
    } else {
        aead_seal(&key.aead_key, &nonce, &env.aad(), plaintext)
    };
    key.last_counter_sent = counter;
    Ok(env)
}

pub fn open_envelope(
    key: &mut KeyMaterial,
    expected_origin: &Origin,
    env: &Envelope,
) -> Result<Vec<u8>, CryptoError> {
    if &key.stream.origin != expected_origin {
        return Err(CryptoError::StreamMismatch);
    }
    if env.version != ENVELOPE_VERSION || env.channel != key.stream.channel {
        return Err(CryptoError::AuthFailure);
    }
    if &env.origin != expected_origin {
        return Err(CryptoError::OriginMismatch {
            expected: expected_origin.canonical(),
            found: env.origin.canonical(),
        });
    }
    if env.counter <= key.last_counter_accepted {
        return Err(CryptoError::ReplayDetected {
            counter: env.counter,
            last_accepted: key.last_counter_accepted,
        });
    }
    if env.nonce != key.stream.nonce(env.counter) {
        return Err(CryptoError::AuthFailure);
    }
    let plaintext = if key.null_cipher {
        let body = env.ciphertext.len().checked_sub(TAG_LEN).ok_or(CryptoError::AuthFailure)?;
        if env.ciphertext[body..] != [0u8; TAG_LEN] {
            return Err(CryptoError::AuthFailure);
        }
        env.ciphertext[..body].to_vec()
    } else {
        aead_open(&key.aead_key, &env.nonce, &env.aad(), &env.ciphertext)?
    };
    key.last_counter_accepted = env.counter;
    Ok(plaintext)
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], CryptoError> {
        if self.buf.len() - self.pos < n {
            return Err(CryptoError::Malformed("truncated"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8, CryptoError> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16, CryptoError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32, CryptoError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, CryptoError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn rest(&mut self) -> &'a [u8] {
        let s = &self.buf[self.pos..];
        self.pos = self.buf.len();
        s
    }

    pub(crate) fn finish(&self) -> Result<(), CryptoError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(CryptoError::Malformed("trailing bytes"))
        }
    }
}
