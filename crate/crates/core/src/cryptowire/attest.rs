//! Simulated remote attestation and origin key exchange.
//!
//! The enclave asks the platform to sign a quote over its measurement, its
//! ephemeral ECDH public value and a per-session ECDSA key. The origin
//! server checks the quote, answers with its own ECDH value signed by its
//! long-term origin key, and both sides run HKDF over the shared secret with
//! the transcript hash as salt. The server's current storage revision comes
//! back as the first protected message on the origin-to-enclave stream.
//!
//! ```text
//! quote: origin_len u16 | origin | measurement[32] | dh_pub[33] | sign_pub[33] | platform_sig[64]
//! hello: server_pub[33] | server_dh_pub[33] | origin_sig[64] | env_len u32 | revision envelope
//! ```

use hkdf::Hkdf;
use p256::ecdh::EphemeralSecret;
use p256::PublicKey;
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};

use super::envelope::Reader;
use super::sign::{PUBLIC_KEY_LEN, SIGNATURE_LEN};
use super::{
    open_envelope, seal_envelope, Channel, CryptoError, Direction, Envelope, KeyMaterial, Origin,
    SealingKey, SigningKey, StreamId, VerifyingKey,
};

/// Code identity string hashed into the web enclave's measurement.
pub const WEB_ENCLAVE_CODE_IDENTITY: &str = "fidelius-web-enclave/1.0 tcb=forms+script+xhr+storage";

pub fn measure(code_identity: &str) -> [u8; 32] {
    Sha256::digest(code_identity.as_bytes()).into()
}

/// The simulated attestation platform: holds the quoting key and the root
/// secret from which sealing keys are derived.
#[derive(Clone, Debug)]
pub struct Platform {
    quoting_key: SigningKey,
    sealing_root: [u8; 32],
}

impl Platform {
    /// The well-known fixture platform.
    pub fn fixture() -> Self {
        Self {
            quoting_key: SigningKey::from_label("simulated platform quoting key"),
            sealing_root: Sha256::digest(b"simulated platform sealing root").into(),
        }
    }

    pub fn verifying_key(&self) -> VerifyingKey {
        self.quoting_key.verifying_key()
    }

    pub fn sealing_key(&self, measurement: &[u8; 32]) -> SealingKey {
        SealingKey::derive(&self.sealing_root, measurement)
    }

    pub fn quote(&self, origin: &Origin, measurement: [u8; 32], dh_public: [u8; 33], sign_public: [u8; 33]) -> AttestationQuote {
        let mut q = AttestationQuote {
            origin: origin.clone(),
            measurement,
            enclave_dh_public: dh_public,
            enclave_sign_public: sign_public,
            quote_sig: [0; SIGNATURE_LEN],
        };
        q.quote_sig = self.quoting_key.sign_raw(&q.signed_bytes());
        q
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttestationQuote {
    pub origin: Origin,
    pub measurement: [u8; 32],
    pub enclave_dh_public: [u8; PUBLIC_KEY_LEN],
    pub enclave_sign_public: [u8; PUBLIC_KEY_LEN],
    pub quote_sig: [u8; SIGNATURE_LEN],
}

impl AttestationQuote {
    fn signed_bytes(&self) -> Vec<u8> {
        let o = self.origin.canonical();
        let mut out = Vec::with_capacity(2 + o.len() + 32 + 66);
        out.extend_from_slice(&(o.len() as u16).to_be_bytes());
        out.extend_from_slice(o.as_bytes());
        out.extend_from_slice(&self.measurement);
        out.extend_from_slice(&self.enclave_dh_public);
        out.extend_from_slice(&self.enclave_sign_public);
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.signed_bytes();
        out.extend_from_slice(&self.quote_sig);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let mut r = Reader::new(bytes);
        let len = r.u16()? as usize;
        let origin = Origin::from_wire(r.take(len)?)?;
        let q = AttestationQuote {
            origin,
            measurement: r.take(32)?.try_into().unwrap(),
            enclave_dh_public: r.take(PUBLIC_KEY_LEN)?.try_into().unwrap(),
            enclave_sign_public: r.take(PUBLIC_KEY_LEN)?.try_into().unwrap(),
            quote_sig: r.take(SIGNATURE_LEN)?.try_into().unwrap(),
        };
        r.finish()?;
        Ok(q)
    }

    pub fn verify(&self, platform: &VerifyingKey) -> bool {
        platform.verify_raw(&self.signed_bytes(), &self.quote_sig)
    }
}

/// The enclave <-> origin stream keys seen from one side.
#[derive(Clone, Debug)]
pub struct OriginSession {
    pub origin: Origin,
    pub send: KeyMaterial,
    pub recv: KeyMaterial,
}

/// What the origin server needs to take part in the handshake.
#[derive(Clone, Debug)]
pub struct ServerIdentity {
    pub origin: Origin,
    pub signing_key: SigningKey,
    pub expected_measurement: [u8; 32],
    pub platform_key: VerifyingKey,
    pub revision: u64,
}

/// Server-side result of a successful handshake.
#[derive(Clone, Debug)]
pub struct ServerSession {
    pub keys: OriginSession,
    pub enclave_sign_key: VerifyingKey,
}

/// Enclave-side result of a successful handshake.
#[derive(Clone, Debug)]
pub struct EnclaveSession {
    pub keys: OriginSession,
    pub sign_key: SigningKey,
    pub revision: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HandshakeLeg {
    Quote,
    ServerHello,
}

/// Enclave side between sending the quote and receiving the server hello.
pub struct EnclaveHandshake {
    origin: Origin,
    dh_secret: EphemeralSecret,
    sign_key: SigningKey,
    quote_bytes: Vec<u8>,
}

impl std::fmt::Debug for EnclaveHandshake {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EnclaveHandshake").field("origin", &self.origin).finish_non_exhaustive()
    }
}

fn transcript_hash(quote_bytes: &[u8], server_pub: &[u8], server_dh: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"fidelius-sim attestation transcript\0");
    h.update((quote_bytes.len() as u32).to_be_bytes());
    h.update(quote_bytes);
    h.update(server_pub);
    h.update(server_dh);
    h.finalize().into()
}

fn derive_origin_keys(shared: &[u8], transcript: &[u8; 32]) -> ([u8; 32], [u8; 32]) {
    let hk = Hkdf::<Sha256>::new(Some(transcript), shared);
    let mut to_origin = [0u8; 32];
    let mut from_origin = [0u8; 32];
    hk.expand(b"enclave-to-origin", &mut to_origin).expect("valid length");
    hk.expand(b"origin-to-enclave", &mut from_origin).expect("valid length");
    (to_origin, from_origin)
}

fn stream(channel: Channel, origin: &Origin) -> StreamId {
    StreamId::new(channel, origin.clone(), Direction::Forward)
}

fn dh_public_bytes(secret: &EphemeralSecret) -> [u8; PUBLIC_KEY_LEN] {
    use p256::elliptic_curve::sec1::ToEncodedPoint;
    secret.public_key().to_encoded_point(true).as_bytes().try_into().unwrap()
}

impl EnclaveHandshake {
    pub fn begin<R: RngCore + CryptoRng>(
        platform: &Platform,
        code_identity: &str,
        origin: &Origin,
        rng: &mut R,
    ) -> (Self, Vec<u8>) {
        let dh_secret = EphemeralSecret::random(rng);
        let sign_key = SigningKey::random(rng);
        let quote = platform.quote(
            origin,
            measure(code_identity),
            dh_public_bytes(&dh_secret),
            sign_key.verifying_key().to_sec1(),
        );
        let quote_bytes = quote.to_bytes();
        (Self { origin: origin.clone(), dh_secret, sign_key, quote_bytes: quote_bytes.clone() }, quote_bytes)
    }

    pub fn origin(&self) -> &Origin {
        &self.origin
    }

    pub fn finish(self, hello: &[u8], pinned_origin_key: &VerifyingKey) -> Result<EnclaveSession, CryptoError> {
        let mut r = Reader::new(hello);
        let tampered = |_| CryptoError::TranscriptTampered;
        let server_pub = r.take(PUBLIC_KEY_LEN).map_err(tampered)?;
        let server_dh = r.take(PUBLIC_KEY_LEN).map_err(tampered)?;
        let sig = r.take(SIGNATURE_LEN).map_err(tampered)?;
        let env_len = r.u32().map_err(tampered)? as usize;
        let env_bytes = r.take(env_len).map_err(tampered)?;
        r.finish().map_err(tampered)?;

        if server_pub != pinned_origin_key.to_sec1() {
            return Err(CryptoError::OriginKeyInvalid);
        }
        let th = transcript_hash(&self.quote_bytes, server_pub, server_dh);
        if !pinned_origin_key.verify_raw(&th, sig) {
            return Err(CryptoError::TranscriptTampered);
        }
        let server_dh = PublicKey::from_sec1_bytes(server_dh).map_err(|_| CryptoError::TranscriptTampered)?;
        let shared = self.dh_secret.diffie_hellman(&server_dh);
        let (to_origin, from_origin) = derive_origin_keys(shared.raw_secret_bytes(), &th);
        let mut recv = KeyMaterial::new(from_origin, stream(Channel::OriginToEnclave, &self.origin));
        let send = KeyMaterial::new(to_origin, stream(Channel::EnclaveToOrigin, &self.origin));

        let env = Envelope::from_bytes(env_bytes).map_err(tampered)?;
        let revision = open_envelope(&mut recv, &self.origin, &env).map_err(tampered)?;
        let revision: [u8; 8] = revision.try_into().map_err(|_| CryptoError::TranscriptTampered)?;
        Ok(EnclaveSession {
            keys: OriginSession { origin: self.origin, send, recv },
            sign_key: self.sign_key,
            revision: u64::from_be_bytes(revision),
        })
    }
}

impl ServerIdentity {
    /// Verifies a quote and produces the server hello plus server-side keys.
    pub fn respond<R: RngCore + CryptoRng>(&self, quote_bytes: &[u8], rng: &mut R) -> Result<(ServerSession, Vec<u8>), CryptoError> {
        let quote = AttestationQuote::from_bytes(quote_bytes).map_err(|_| CryptoError::TranscriptTampered)?;
        if !quote.verify(&self.platform_key) {
            return Err(CryptoError::TranscriptTampered);
        }
        if quote.measurement != self.expected_measurement {
            return Err(CryptoError::MeasurementMismatch);
        }
        if quote.origin != self.origin {
            return Err(CryptoError::TranscriptTampered);
        }
        let enclave_dh = PublicKey::from_sec1_bytes(&quote.enclave_dh_public).map_err(|_| CryptoError::TranscriptTampered)?;
        let enclave_sign_key = VerifyingKey::from_sec1(&quote.enclave_sign_public).map_err(|_| CryptoError::TranscriptTampered)?;

        let dh_secret = EphemeralSecret::random(rng);
        let server_dh = dh_public_bytes(&dh_secret);
        let server_pub = self.signing_key.verifying_key().to_sec1();
        let th = transcript_hash(quote_bytes, &server_pub, &server_dh);
        let sig = self.signing_key.sign_raw(&th);

        let shared = dh_secret.diffie_hellman(&enclave_dh);
        let (to_origin, from_origin) = derive_origin_keys(shared.raw_secret_bytes(), &th);
        let mut send = KeyMaterial::new(from_origin, stream(Channel::OriginToEnclave, &self.origin));
        let recv = KeyMaterial::new(to_origin, stream(Channel::EnclaveToOrigin, &self.origin));
        let env = seal_envelope(&mut send, Channel::OriginToEnclave, &self.origin, &self.revision.to_be_bytes())?;
        let env = env.to_bytes();

        let mut hello = Vec::with_capacity(134 + env.len());
        hello.extend_from_slice(&server_pub);
        hello.extend_from_slice(&server_dh);
        hello.extend_from_slice(&sig);
        hello.extend_from_slice(&(env.len() as u32).to_be_bytes());
        hello.extend_from_slice(&env);
        Ok((
            ServerSession { keys: OriginSession { origin: self.origin.clone(), send, recv }, enclave_sign_key },
            hello,
        ))
    }
}

/// Honest end-to-end handshake.
pub fn attest_and_exchange<R: RngCore + CryptoRng>(
    platform: &Platform,
    code_identity: &str,
    server: &ServerIdentity,
    pinned_origin_key: &VerifyingKey,
    origin: &Origin,
    rng: &mut R,
) -> Result<(EnclaveSession, ServerSession, u64), CryptoError> {
    attest_and_exchange_with(platform, code_identity, server, pinned_origin_key, origin, rng, |_, _| {})
}

/// Handshake with a hook that may rewrite each leg in flight.
pub fn attest_and_exchange_with<R, F>(
    platform: &Platform,
    code_identity: &str,
    server: &ServerIdentity,
    pinned_origin_key: &VerifyingKey,
    origin: &Origin,
    rng: &mut R,
    mut tamper: F,
) -> Result<(EnclaveSession, ServerSession, u64), CryptoError>
where
    R: RngCore + CryptoRng,
    F: FnMut(HandshakeLeg, &mut Vec<u8>),
{
    let (hs, mut quote) = EnclaveHandshake::begin(platform, code_identity, origin, rng);
    tamper(HandshakeLeg::Quote, &mut quote);
    let (server_session, mut hello) = server.respond(&quote, rng)?;
    tamper(HandshakeLeg::ServerHello, &mut hello);
    let enclave_session = hs.finish(&hello, pinned_origin_key)?;
    let revision = enclave_session.revision;
    Ok((enclave_session, server_session, revision))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cryptowire::open_envelope;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn server(revision: u64) -> ServerIdentity {
        let platform = Platform::fixture();
        ServerIdentity {
            origin: "pay.site.com:443".parse().unwrap(),
            signing_key: SigningKey::from_label("pay.site.com:443"),
            expected_measurement: measure(WEB_ENCLAVE_CODE_IDENTITY),
            platform_key: platform.verifying_key(),
            revision,
        }
    }

    #[test]
    fn honest_handshake_derives_matching_keys() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let s = server(7);
        let pinned = s.signing_key.verifying_key();
        let (mut e, mut sv, rev) =
            attest_and_exchange(&Platform::fixture(), WEB_ENCLAVE_CODE_IDENTITY, &s, &pinned, &s.origin, &mut rng)
                .unwrap();
        assert_eq!(rev, 7);
        assert_eq!(e.keys.send.key_bytes(), sv.keys.recv.key_bytes());
        assert_eq!(e.keys.recv.key_bytes(), sv.keys.send.key_bytes());
        assert_ne!(e.keys.send.key_bytes(), e.keys.recv.key_bytes());

        let env = seal_envelope(&mut e.keys.send, Channel::EnclaveToOrigin, &s.origin, b"hi").unwrap();
        assert_eq!(open_envelope(&mut sv.keys.recv, &s.origin, &env).unwrap(), b"hi");
        let msg = b"payload";
        let sig = e.sign_key.sign_raw(msg);
        assert!(sv.enclave_sign_key.verify_raw(msg, &sig));
    }

    #[test]
    fn wrong_code_is_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let s = server(0);
        let pinned = s.signing_key.verifying_key();
        let err = attest_and_exchange(&Platform::fixture(), "patched enclave", &s, &pinned, &s.origin, &mut rng)
            .unwrap_err();
        assert_eq!(err, CryptoError::MeasurementMismatch);
    }

    #[test]
    fn unpinned_server_key_is_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let s = server(0);
        let pinned = SigningKey::from_label("someone else").verifying_key();
        let err = attest_and_exchange(&Platform::fixture(), WEB_ENCLAVE_CODE_IDENTITY, &s, &pinned, &s.origin, &mut rng)
            .unwrap_err();
        assert_eq!(err, CryptoError::OriginKeyInvalid);
    }

    #[test]
    fn every_single_byte_flip_is_detected() {
        let s = server(3);
        let pinned = s.signing_key.verifying_key();
        let platform = Platform::fixture();
        let mut rng = ChaCha20Rng::seed_from_u64(14);
        let (_, quote) = EnclaveHandshake::begin(&platform, WEB_ENCLAVE_CODE_IDENTITY, &s.origin, &mut rng);
        let (_, hello) = s.respond(&quote, &mut rng).unwrap();
        for (leg, len) in [(HandshakeLeg::Quote, quote.len()), (HandshakeLeg::ServerHello, hello.len())] {
            for i in 0..len {
                let mut rng = ChaCha20Rng::seed_from_u64(15);
                let r = attest_and_exchange_with(
                    &platform,
                    WEB_ENCLAVE_CODE_IDENTITY,
                    &s,
                    &pinned,
                    &s.origin,
                    &mut rng,
                    |l, bytes| {
                        if l == leg {
                            bytes[i] ^= 0x01;
                        }
                    },
                );
                assert!(r.is_err(), "{leg:?} byte {i} flip went unnoticed");
            }
        }
    }
}
