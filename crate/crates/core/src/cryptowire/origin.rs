use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::CryptoError;

/// A web origin reduced to `host:port`.
///
/// Hosts are stored lowercase; equality is equality of the canonical string.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Origin {
    host: String,
    port: u16,
}

impl Origin {
    pub fn new(host: impl AsRef<str>, port: u16) -> Result<Self, CryptoError> {
        let host = host.as_ref();
        if host.is_empty() {
            return Err(CryptoError::InvalidOrigin("empty host".into()));
        }
        if !host.is_ascii() || host.chars().any(|c| c.is_ascii_whitespace() || c.is_ascii_control()) {
            return Err(CryptoError::InvalidOrigin(format!("bad host {host:?}")));
        }
        if host.contains(':') || host.contains('/') {
            return Err(CryptoError::InvalidOrigin(format!("bad host {host:?}")));
        }
        if port == 0 {
            return Err(CryptoError::InvalidOrigin("port 0".into()));
        }
        Ok(Self { host: host.to_ascii_lowercase(), port })
    }

    pub fn host(&self) -> &str {
        &self.host
    }

    pub fn port(&self) -> u16 {
        self.port
    }

    /// `host:port`, the form bound into every envelope and sealed record.
    pub fn canonical(&self) -> String {
        format!("{}:{}", self.host, self.port)
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.host, self.port)
    }
}

impl Origin {
    /// Decodes an origin from a wire header. Only the canonical spelling is
    /// accepted, so each origin has exactly one encoding.
    pub(crate) fn from_wire(bytes: &[u8]) -> Result<Origin, CryptoError> {
        let s = std::str::from_utf8(bytes).map_err(|_| CryptoError::Malformed("origin utf-8"))?;
        let o: Origin = s.parse()?;
        if o.canonical() != s {
            return Err(CryptoError::Malformed("origin not in canonical form"));
        }
        Ok(o)
    }
}

impl FromStr for Origin {
    type Err = CryptoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (host, port) = s
            .rsplit_once(':')
            .ok_or_else(|| CryptoError::InvalidOrigin(format!("missing port in {s:?}")))?;
        let port = port
            .parse::<u16>()
            .map_err(|_| CryptoError::InvalidOrigin(format!("bad port in {s:?}")))?;
        Origin::new(host, port)
    }
}

impl Serialize for Origin {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.canonical())
    }
}

impl<'de> Deserialize<'de> for Origin {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
