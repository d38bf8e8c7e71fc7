//! Origin-bound sealed storage with revision numbers.

use std::fmt;

use hkdf::Hkdf;
use rand::{CryptoRng, RngCore};
use sha2::Sha256;

use super::envelope::{aead_open, aead_seal, Reader, NONCE_LEN, TAG_LEN};
use super::{CryptoError, Origin};

/// Per-enclave-identity key; every instance of the same enclave code on the
/// same platform derives the same value.
#[derive(Clone, PartialEq, Eq)]
pub struct SealingKey([u8; 32]);

impl fmt::Debug for SealingKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SealingKey(..)")
    }
}

impl SealingKey {
    pub fn derive(platform_secret: &[u8], measurement: &[u8; 32]) -> Self {
        let hk = Hkdf::<Sha256>::new(Some(b"fidelius-sim sealing"), platform_secret);
        let mut key = [0u8; 32];
        hk.expand(measurement, &mut key).expect("32 bytes is a valid HKDF length");
        SealingKey(key)
    }

    pub fn from_bytes(key: [u8; 32]) -> Self {
        SealingKey(key)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SealedRecord {
    pub origin: Origin,
    pub revision: u64,
    pub nonce: [u8; NONCE_LEN],
    pub ciphertext: Vec<u8>,
}

fn record_aad(origin: &Origin, revision: u64) -> Vec<u8> {
    let o = origin.canonical();
    let mut aad = Vec::with_capacity(10 + o.len());
    aad.extend_from_slice(&(o.len() as u16).to_be_bytes());
    aad.extend_from_slice(o.as_bytes());
    aad.extend_from_slice(&revision.to_be_bytes());
    aad
}

impl SealedRecord {
    /// `origin_len u16 | origin | revision u64 | nonce | ciphertext || tag`
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = record_aad(&self.origin, self.revision);
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&self.ciphertext);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let mut r = Reader::new(bytes);
        let len = r.u16()? as usize;
        let origin = Origin::from_wire(r.take(len)?)?;
        let revision = r.u64()?;
        let nonce = r.take(NONCE_LEN)?.try_into().unwrap();
        let ciphertext = r.rest().to_vec();
        if ciphertext.len() < TAG_LEN {
            return Err(CryptoError::Malformed("ciphertext shorter than tag"));
        }
        Ok(Self { origin, revision, nonce, ciphertext })
    }
}

pub fn seal_data<R: RngCore + CryptoRng>(
    key: &SealingKey,
    origin: &Origin,
    revision: u64,
    payload: &[u8],
    rng: &mut R,
) -> SealedRecord {
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    let ciphertext = aead_seal(&key.0, &nonce, &record_aad(origin, revision), payload);
    SealedRecord { origin: origin.clone(), revision, nonce, ciphertext }
}

/// Authenticates the record under its own header first, then applies the
/// origin policy and the revision check.
pub fn unseal_data(
    key: &SealingKey,
    origin: &Origin,
    expected_revision: u64,
    rec: &SealedRecord,
) -> Result<Vec<u8>, CryptoError> {
    let payload = aead_open(&key.0, &rec.nonce, &record_aad(&rec.origin, rec.revision), &rec.ciphertext)?;
    if &rec.origin != origin {
        return Err(CryptoError::CrossOriginSeal {
            expected: origin.canonical(),
            found: rec.origin.canonical(),
        });
    }
    if rec.revision < expected_revision {
        return Err(CryptoError::RollbackDetected { found: rec.revision, expected: expected_revision });
    }
    if rec.revision > expected_revision {
        return Err(CryptoError::RevisionMismatch { found: rec.revision, expected: expected_revision });
    }
    Ok(payload)
}
