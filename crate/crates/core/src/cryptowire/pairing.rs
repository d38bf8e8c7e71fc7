//! Pre-shared device keys from the trusted setup phase.

use std::collections::BTreeMap;
use std::fmt;

use hkdf::Hkdf;
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use super::{Channel, Direction, KeyMaterial, Origin, StreamId};

#[derive(Clone, PartialEq, Eq)]
pub struct DeviceMasterKey([u8; 32]);

impl fmt::Debug for DeviceMasterKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("DeviceMasterKey(..)")
    }
}

impl DeviceMasterKey {
    pub fn from_bytes(key: [u8; 32]) -> Self {
        Self(key)
    }

    pub fn from_label(label: &str) -> Self {
        use sha2::Digest;
        let mut h = Sha256::new();
        h.update(b"fidelius-sim device master\0");
        h.update(label.as_bytes());
        Self(h.finalize().into())
    }

    /// Per-stream key: HKDF-SHA256 with info `channel | direction | origin`.
    pub fn stream_key(&self, stream: &StreamId) -> KeyMaterial {
        let hk = Hkdf::<Sha256>::new(Some(b"fidelius-sim device stream"), &self.0);
        let mut info = vec![stream.channel.tag(), stream.direction.flag()];
        info.extend_from_slice(stream.origin.canonical().as_bytes());
        let mut key = [0u8; 32];
        hk.expand(&info, &mut key).expect("32 bytes is a valid HKDF length");
        KeyMaterial::new(key, stream.clone())
    }
}

/// Keys established between the enclave platform and both dongles.
#[derive(Clone, Debug)]
pub struct DevicePairing {
    pub keyboard: DeviceMasterKey,
    pub display: DeviceMasterKey,
}

impl DevicePairing {
    pub fn from_label(label: &str) -> Self {
        Self {
            keyboard: DeviceMasterKey::from_label(&format!("{label}/keyboard")),
            display: DeviceMasterKey::from_label(&format!("{label}/display")),
        }
    }

    pub fn master_for(&self, channel: Channel) -> Option<&DeviceMasterKey> {
        match channel {
            Channel::KeyboardToEnclave => Some(&self.keyboard),
            Channel::EnclaveToDisplay => Some(&self.display),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterPair {
    pub sent: u64,
    pub accepted: u64,
}

/// Enclave-side counters for device streams, kept alongside the sealed
/// pairing keys so a new enclave session continues where the last stopped.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StreamCounters(BTreeMap<StreamId, CounterPair>);

impl StreamCounters {
    pub fn get(&self, stream: &StreamId) -> CounterPair {
        self.0.get(stream).copied().unwrap_or_default()
    }

    pub fn record(&mut self, key: &KeyMaterial) {
        self.0.insert(
            key.stream().clone(),
            CounterPair { sent: key.last_counter_sent(), accepted: key.last_counter_accepted() },
        );
    }

    pub fn key_for(&self, pairing: &DevicePairing, channel: Channel, origin: &Origin, direction: Direction) -> KeyMaterial {
        let stream = StreamId::new(channel, origin.clone(), direction);
        let master = pairing.master_for(channel).expect("device channel");
        let c = self.get(&stream);
        master.stream_key(&stream).with_counters(c.sent, c.accepted)
    }
}
