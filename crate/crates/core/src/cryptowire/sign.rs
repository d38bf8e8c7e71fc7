//! ECDSA P-256 content signatures and key fixtures.

use std::fmt;

use p256::ecdsa::signature::{Signer, Verifier};
use p256::ecdsa::{Signature, SigningKey as EcdsaSigningKey, VerifyingKey as EcdsaVerifyingKey};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CryptoError, Origin};

pub const SIGNATURE_LEN: usize = 64;
pub const PUBLIC_KEY_LEN: usize = 33;

/// SHA-256 of the compressed SEC1 public key.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct KeyId(pub [u8; 32]);

impl fmt::Debug for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyId({})", hex::encode(&self.0[..8]))
    }
}

#[derive(Clone)]
pub struct SigningKey(EcdsaSigningKey);

impl fmt::Debug for SigningKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("SigningKey").field(&self.verifying_key().id()).finish()
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub struct VerifyingKey(EcdsaVerifyingKey);

impl fmt::Debug for VerifyingKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("VerifyingKey").field(&self.id()).finish()
    }
}

impl SigningKey {
    /// Deterministic key from a label; used for fixtures and the simulated
    /// platform key.
    pub fn from_label(label: &str) -> Self {
        let mut ctr = 0u32;
        loop {
            let mut h = Sha256::new();
            h.update(b"fidelius-sim key fixture\0");
            h.update(label.as_bytes());
            h.update(ctr.to_be_bytes());
            if let Ok(k) = EcdsaSigningKey::from_bytes(&h.finalize()) {
                return SigningKey(k);
            }
            ctr += 1;
        }
    }

    pub fn random<R: rand::RngCore + rand::CryptoRng>(rng: &mut R) -> Self {
        SigningKey(EcdsaSigningKey::random(rng))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        EcdsaSigningKey::from_slice(bytes)
            .map(SigningKey)
            .map_err(|_| CryptoError::Malformed("signing key"))
    }

    pub fn to_bytes(&self) -> [u8; 32] {
        self.0.to_bytes().into()
    }

    pub fn verifying_key(&self) -> VerifyingKey {
        VerifyingKey(*self.0.verifying_key())
    }

    /// Raw 64-byte `r || s` signature (RFC 6979 nonces, so deterministic).
    pub fn sign_raw(&self, payload: &[u8]) -> [u8; SIGNATURE_LEN] {
        let sig: Signature = self.0.sign(payload);
        sig.to_bytes().into()
    }
}

impl VerifyingKey {
    pub fn from_sec1(bytes: &[u8]) -> Result<Self, CryptoError> {
        EcdsaVerifyingKey::from_sec1_bytes(bytes)
            .map(VerifyingKey)
            .map_err(|_| CryptoError::Malformed("public key"))
    }

    /// Compressed SEC1 encoding.
    pub fn to_sec1(&self) -> [u8; PUBLIC_KEY_LEN] {
        let pt = self.0.to_encoded_point(true);
        pt.as_bytes().try_into().expect("compressed point is 33 bytes")
    }

    pub fn id(&self) -> KeyId {
        KeyId(Sha256::digest(self.to_sec1()).into())
    }

    /// False on any malformed signature encoding.
    pub fn verify_raw(&self, payload: &[u8], signature: &[u8]) -> bool {
        match Signature::from_slice(signature) {
            Ok(sig) => self.0.verify(payload, &sig).is_ok(),
            Err(_) => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SignedBlob {
    pub payload: Vec<u8>,
    pub signature: Vec<u8>,
    pub signer: KeyId,
}

pub fn sign_content(key: &SigningKey, payload: &[u8]) -> SignedBlob {
    SignedBlob {
        payload: payload.to_vec(),
        signature: key.sign_raw(payload).to_vec(),
        signer: key.verifying_key().id(),
    }
}

pub fn verify_content(pubkey: &VerifyingKey, blob: &SignedBlob) -> bool {
    blob.signer == pubkey.id() && pubkey.verify_raw(&blob.payload, &blob.signature)
}

/// JSON key fixture: `{ "origin": "...", "secret_key": hex, "public_key": hex }`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KeypairFixture {
    pub origin: Origin,
    pub secret_key: String,
    pub public_key: String,
}

impl KeypairFixture {
    pub fn from_key(origin: Origin, key: &SigningKey) -> Self {
        Self {
            origin,
            secret_key: hex::encode(key.to_bytes()),
            public_key: hex::encode(key.verifying_key().to_sec1()),
        }
    }

    pub fn signing_key(&self) -> Result<SigningKey, CryptoError> {
        let bytes = hex::decode(&self.secret_key).map_err(|_| CryptoError::Malformed("secret key hex"))?;
        let key = SigningKey::from_bytes(&bytes)?;
        if hex::encode(key.verifying_key().to_sec1()) != self.public_key.to_ascii_lowercase() {
            return Err(CryptoError::Malformed("public key does not match secret key"));
        }
        Ok(key)
    }

    pub fn verifying_key(&self) -> Result<VerifyingKey, CryptoError> {
        let bytes = hex::decode(&self.public_key).map_err(|_| CryptoError::Malformed("public key hex"))?;
        VerifyingKey::from_sec1(&bytes)
    }
}
