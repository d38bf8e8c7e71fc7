use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::messages::*;
use super::*;
use crate::cryptowire::{ServerIdentity, ServerSession, SigningKey};
use crate::page::sign_page;

const PAGE: &str = include_str!("../../fixtures/pages/payment.unsigned.html");
const VALIDATOR: &str = include_str!("../../fixtures/scripts/validator.js");

fn origin() -> Origin {
    "pay.site.com:443".parse().unwrap()
}

fn origin_key() -> SigningKey {
    SigningKey::from_label("test origin key")
}

fn pairing() -> DevicePairing {
    DevicePairing::from_label("test desk")
}

fn signed_page(key: &SigningKey) -> String {
    let url = PageUrl::parse("https://pay.site.com/checkout").unwrap();
    sign_page(PAGE, &url, key, |src| (src == "validator.js").then(|| VALIDATOR.as_bytes().to_vec())).unwrap()
}

fn load_payload(html: &str) -> Vec<u8> {
    json_payload(&LoadTagsPayload {
        page_url: "https://pay.site.com/checkout".into(),
        html: html.into(),
        scripts: BTreeMap::from([("validator.js".to_string(), VALIDATOR.to_string())]),
    })
}

struct Rig {
    enclave: WebEnclave,
    server: ServerIdentity,
    session: Option<ServerSession>,
    rng: ChaCha20Rng,
    kb: KeyMaterial,
}

impl Rig {
    fn new(revision: u64) -> Rig {
        let platform = Platform::fixture();
        let pinned = BTreeMap::from([(origin(), origin_key().verifying_key())]);
        let enclave = WebEnclave::new(
            platform.clone(),
            pinned,
            pairing(),
            StreamCounters::default(),
            EnclaveConfig::default(),
            7,
        );
        let server = ServerIdentity {
            origin: origin(),
            signing_key: origin_key(),
            expected_measurement: measure(WEB_ENCLAVE_CODE_IDENTITY),
            platform_key: platform.verifying_key(),
            revision,
        };
        let kb = StreamCounters::default().key_for(&pairing(), Channel::KeyboardToEnclave, &origin(), Direction::Forward);
        Rig { enclave, server, session: None, rng: ChaCha20Rng::seed_from_u64(1), kb }
    }

    fn call(&mut self, kind: EcallKind, payload: &[u8]) -> Result<EcallResult, EnclaveError> {
        self.enclave.ecall(kind, payload, &mut NoNetwork)
    }

    fn attest(&mut self) {
        let r = self.call(EcallKind::Attest, &attest_begin_payload(&origin())).unwrap();
        let [EnclaveOutput::Quote(q)] = &r.outputs[..] else { panic!("{r:?}") };
        let (session, hello) = self.server.respond(q, &mut self.rng).unwrap();
        self.session = Some(session);
        self.call(EcallKind::Attest, &attest_complete_payload(&hello)).unwrap();
    }

    fn ready() -> Rig {
        let mut rig = Rig::new(0);
        rig.attest();
        let page = signed_page(&origin_key());
        rig.call(EcallKind::LoadTags, &load_payload(&page)).unwrap();
        rig.call(EcallKind::VerifySignatures, &[]).unwrap();
        assert_eq!(rig.enclave.state(), EnclaveState::Ready);
        rig
    }

    fn key(&mut self, k: KeyEvent) -> Vec<u8> {
        seal_envelope(&mut self.kb, Channel::KeyboardToEnclave, &origin(), &k.to_record()).unwrap().to_bytes()
    }

    fn open_at_server(&mut self, bytes: &[u8]) -> Result<OriginRequest, CryptoError> {
        let s = self.session.as_mut().unwrap();
        let signed = SignedEnvelope::from_bytes(bytes)?;
        if !signed.verify(&s.enclave_sign_key) {
            return Err(CryptoError::AuthFailure);
        }
        let plain = open_envelope(&mut s.keys.recv, &origin(), &signed.envelope)?;
        Ok(serde_json::from_slice(&plain).unwrap())
    }
}

fn focus(form: &str, input: &str) -> Vec<u8> {
    json_payload(&FieldRef { form: form.into(), input: input.into() })
}

#[test]
fn honest_sequence_reaches_ready() {
    let rig = Rig::ready();
    assert_eq!(rig.enclave.origin(), Some(&origin()));
    assert_eq!(rig.enclave.form_values("payment").unwrap().keys().collect::<Vec<_>>(), ["holder", "card", "exp", "cvv"]);
}

#[test]
fn focus_typing_and_blur() {
    let mut rig = Rig::ready();
    let r = rig.call(EcallKind::Focus, &focus("payment", "card")).unwrap();
    assert!(matches!(&r.outputs[..], [EnclaveOutput::ToKeyboard(_), EnclaveOutput::ToDisplay(_), EnclaveOutput::ToDisplay(_)]));
    assert_eq!(rig.enclave.render_overlay().unwrap().banner_text(), "pay.site.com  card");

    for k in [KeyEvent::Char('4'), KeyEvent::Dummy, KeyEvent::Char('1'), KeyEvent::Backspace, KeyEvent::Tab, KeyEvent::Enter] {
        let env = rig.key(k);
        let r = rig.call(EcallKind::Keystroke, &env).unwrap();
        assert!(matches!(&r.outputs[..], [EnclaveOutput::ToDisplay(_)]));
    }
    assert_eq!(rig.enclave.form_values("payment").unwrap()["card"], "4");

    let r = rig.call(EcallKind::Blur, &[]).unwrap();
    assert_eq!(r.outputs.len(), 3);
    assert_eq!(rig.enclave.render_overlay().unwrap().banner_focus_label, None);
    // Exit-delay dummies still get an overlay each.
    let env = rig.key(KeyEvent::Dummy);
    assert_eq!(rig.call(EcallKind::Keystroke, &env).unwrap().outputs.len(), 1);
    let env = rig.key(KeyEvent::Char('9'));
    assert_eq!(rig.call(EcallKind::Keystroke, &env), Err(EnclaveError::KeystrokeWithoutFocus));
    assert_eq!(rig.enclave.state(), EnclaveState::Fail);
}

#[test]
fn replayed_keystroke_fails() {
    let mut rig = Rig::ready();
    rig.call(EcallKind::Focus, &focus("payment", "card")).unwrap();
    let env = rig.key(KeyEvent::Char('4'));
    rig.call(EcallKind::Keystroke, &env).unwrap();
    assert!(matches!(rig.call(EcallKind::Keystroke, &env), Err(EnclaveError::Crypto(CryptoError::ReplayDetected { .. }))));
    assert_eq!(rig.enclave.state(), EnclaveState::Fail);
    assert_eq!(rig.enclave.focus(), None);
}

#[test]
fn unknown_field_fails() {
    let mut rig = Rig::ready();
    assert!(matches!(rig.call(EcallKind::Focus, &focus("payment", "pin")), Err(EnclaveError::UnknownField { .. })));
    assert_eq!(rig.enclave.state(), EnclaveState::Fail);
}

#[test]
fn tampered_page_fails_verification() {
    let mut rig = Rig::new(0);
    rig.attest();
    let page = signed_page(&origin_key()).replace("name=\"cvv\"", "name=\"cvc\"");
    rig.call(EcallKind::LoadTags, &load_payload(&page)).unwrap();
    assert!(matches!(rig.call(EcallKind::VerifySignatures, &[]), Err(EnclaveError::SignatureInvalid(_))));
    assert_eq!(rig.enclave.state(), EnclaveState::Fail);

    let mut rig = Rig::new(0);
    rig.attest();
    let page = signed_page(&SigningKey::from_label("someone else"));
    rig.call(EcallKind::LoadTags, &load_payload(&page)).unwrap();
    assert!(rig.call(EcallKind::VerifySignatures, &[]).is_err());
}

#[test]
fn page_for_another_origin_is_refused() {
    let mut rig = Rig::new(0);
    rig.attest();
    let page = signed_page(&origin_key()).replace("action=\"submit_data\"", "action=\"https://evil.example/steal\"");
    assert!(matches!(rig.call(EcallKind::LoadTags, &load_payload(&page)), Err(EnclaveError::Page(PageError::MixedOrigins(_)))));
}

#[test]
fn unpinned_origin_cannot_attest() {
    let mut rig = Rig::new(0);
    let other: Origin = "evil.example:443".parse().unwrap();
    assert!(matches!(
        rig.call(EcallKind::Attest, &attest_begin_payload(&other)),
        Err(EnclaveError::Crypto(CryptoError::OriginKeyInvalid))
    ));
}

#[test]
fn submit_is_sealed_and_signed() {
    let mut rig = Rig::ready();
    rig.call(EcallKind::Focus, &focus("payment", "holder")).unwrap();
    for c in "Ann Lee".chars() {
        let env = rig.key(KeyEvent::Char(c));
        rig.call(EcallKind::Keystroke, &env).unwrap();
    }
    let r = rig.call(EcallKind::Submit, &json_payload(&SubmitPayload { form: "payment".into() })).unwrap();
    let [EnclaveOutput::ToOrigin(bytes)] = &r.outputs[..] else { panic!() };
    assert!(!bytes.windows(7).any(|w| w == b"Ann Lee" || w == b"Ann+Lee"));
    let req = rig.open_at_server(bytes).unwrap();
    assert_eq!(
        req,
        OriginRequest::Submit {
            form: "payment".into(),
            action: "https://pay.site.com/submit_data".into(),
            method: "POST".into(),
            body: "holder=Ann+Lee&card=&exp=&cvv=".into(),
        }
    );

    let mut flipped = bytes.clone();
    let n = flipped.len() - 70;
    flipped[n] ^= 1;
    assert_eq!(rig.open_at_server(&flipped), Err(CryptoError::AuthFailure));
}

#[test]
fn store_and_rollback() {
    let mut rig = Rig::new(3);
    rig.attest();
    rig.call(EcallKind::VerifySignatures, &[]).unwrap();
    assert_eq!(rig.enclave.revision(), 3);
    let store = |k: &str| json_payload(&StorePayload { key: k.into(), value: "v".into() });
    let r = rig.call(EcallKind::Store, &store("a")).unwrap();
    let [EnclaveOutput::Sealed(old), EnclaveOutput::ToOrigin(update)] = &r.outputs[..] else { panic!() };
    assert_eq!(old.revision, 4);
    assert_eq!(rig.open_at_server(update).unwrap(), OriginRequest::Revision { revision: 4 });
    let r = rig.call(EcallKind::Store, &store("b")).unwrap();
    let EnclaveOutput::Sealed(new) = &r.outputs[0] else { panic!() };
    assert_eq!(new.revision, 5);
    rig.call(EcallKind::Load, &new.to_bytes()).unwrap();
    assert_eq!(rig.enclave.local_storage().len(), 2);
    assert!(matches!(
        rig.call(EcallKind::Load, &old.to_bytes()),
        Err(EnclaveError::Crypto(CryptoError::RollbackDetected { found: 4, expected: 5 }))
    ));
}

#[test]
fn run_script_listing_effects() {
    struct Server<'a>(&'a mut ServerSession, Vec<OriginRequest>);
    impl Ocall for Server<'_> {
        fn send_to_origin(&mut self, req: Vec<u8>) -> Option<Vec<u8>> {
            let signed = SignedEnvelope::from_bytes(&req).ok()?;
            assert!(signed.verify(&self.0.enclave_sign_key));
            let plain = open_envelope(&mut self.0.keys.recv, &origin(), &signed.envelope).ok()?;
            self.1.push(serde_json::from_slice(&plain).unwrap());
            let reply = serde_json::to_vec(&XhrResponse { status: 200, body: "ok".into() }).unwrap();
            Some(seal_envelope(&mut self.0.keys.send, Channel::OriginToEnclave, &origin(), &reply).unwrap().to_bytes())
        }
    }

    let mut rig = Rig::ready();
    let values = [("holder", "Ann Lee"), ("card", "4111111111111111"), ("exp", "12/27"), ("cvv", "123")];
    for (input, text) in values {
        rig.call(EcallKind::Focus, &focus("payment", input)).unwrap();
        for c in text.chars() {
            let env = rig.key(KeyEvent::Char(c));
            rig.call(EcallKind::Keystroke, &env).unwrap();
        }
    }
    let mut session = rig.session.take().unwrap();
    let mut server = Server(&mut session, Vec::new());
    let payload = json_payload(&RunScriptPayload::Call { function: "doPay".into(), args: vec![] });
    let r = rig.enclave.ecall(EcallKind::RunScript, &payload, &mut server).unwrap();
    assert_eq!(r.value, Some(serde_json::json!(true)));
    assert_eq!(r.script_error, None);
    let OriginRequest::Xhr { request } = &server.1[0] else { panic!() };
    assert_eq!(request.path, "/submit_data");
    assert_eq!(
        serde_json::from_str::<serde_json::Value>(&request.body).unwrap(),
        serde_json::json!({"holder": "Ann Lee", "card": "4111111111111111", "exp": "12/27", "cvv": "123"})
    );
    assert_eq!(rig.enclave.local_storage().keys().collect::<Vec<_>>(), ["cc", "cvv", "exp", "holder"]);
    assert_eq!(rig.enclave.revision(), 1);
    assert!(matches!(&r.outputs[..], [EnclaveOutput::Sealed(_), EnclaveOutput::ToOrigin(_)]));

    let payload = json_payload(&RunScriptPayload::Message { message: serde_json::json!({"cmd": "validate"}) });
    let r = rig.enclave.ecall(EcallKind::RunScript, &payload, &mut server).unwrap();
    assert_eq!(r.outputs, vec![EnclaveOutput::ToUntrusted(serde_json::json!({"valid": true}))]);
}

#[test]
fn dropped_network_is_a_script_error() {
    let mut rig = Rig::ready();
    let payload = json_payload(&RunScriptPayload::Call { function: "nosuch".into(), args: vec![] });
    let r = rig.call(EcallKind::RunScript, &payload).unwrap();
    assert_eq!(r.script_error, Some(ScriptError::UnknownFunction("nosuch".into())));
    assert_eq!(rig.enclave.state(), EnclaveState::Ready);
}

/// Puts a rig into `state` by honest means.
fn rig_in(state: EnclaveState) -> Rig {
    match state {
        EnclaveState::Initial => Rig::new(0),
        EnclaveState::Authenticated => {
            let mut rig = Rig::new(0);
            rig.attest();
            rig
        }
        EnclaveState::Ready => Rig::ready(),
        EnclaveState::End => {
            let mut rig = Rig::ready();
            rig.call(EcallKind::Close, &[]).unwrap();
            rig
        }
        EnclaveState::Fail => {
            let mut rig = Rig::new(0);
            let _ = rig.call(EcallKind::Close, &[]);
            rig
        }
    }
}

/// A well-formed payload for `kind` given the rig's current position.
fn valid_payload(rig: &mut Rig, kind: EcallKind) -> Vec<u8> {
    match kind {
        EcallKind::Attest => attest_begin_payload(&origin()),
        EcallKind::LoadTags => load_payload(&signed_page(&origin_key())),
        EcallKind::VerifySignatures | EcallKind::Blur | EcallKind::Close => Vec::new(),
        EcallKind::Focus => focus("payment", "card"),
        EcallKind::Keystroke => rig.key(KeyEvent::Dummy),
        EcallKind::Submit => json_payload(&SubmitPayload { form: "payment".into() }),
        EcallKind::RunScript => {
            json_payload(&RunScriptPayload::Call { function: "cardNumberHasWhiteSpaces".into(), args: vec![] })
        }
        EcallKind::Store => json_payload(&StorePayload { key: "k".into(), value: "v".into() }),
        // Seal a fresh record through the rig itself so its revision matches.
        EcallKind::Load => match rig.call(EcallKind::Store, &json_payload(&StorePayload { key: "k".into(), value: "v".into() })) {
            Ok(EcallResult { outputs, .. }) => match &outputs[0] {
                EnclaveOutput::Sealed(rec) => rec.to_bytes(),
                _ => unreachable!(),
            },
            Err(_) => Vec::new(),
        },
    }
}

fn expected_next(state: EnclaveState, kind: EcallKind) -> EnclaveState {
    use EcallKind::*;
    use EnclaveState::*;
    match (state, kind) {
        (End, _) => End,
        (Fail, _) => Fail,
        (s, k) if !s.accepts(k) => Fail,
        (Initial, Attest) => Initial,
        (Authenticated, LoadTags) => Authenticated,
        (Authenticated, VerifySignatures) => Ready,
        (Ready, Close) => End,
        (s, _) => s,
    }
}

#[test]
fn fsm_matches_accept_table() {
    let mut cases = 0;
    for state in EnclaveState::ALL {
        for kind in EcallKind::ALL {
            let mut rig = rig_in(state);
            assert_eq!(rig.enclave.state(), state);
            let payload = if state.accepts(kind) { valid_payload(&mut rig, kind) } else { b"{}".to_vec() };
            let r = rig.call(kind, &payload);
            assert_eq!(rig.enclave.state(), expected_next(state, kind), "{state:?} x {kind:?}: {r:?}");
            match state {
                EnclaveState::Fail => assert_eq!(r, Err(EnclaveError::EnclaveFailed)),
                EnclaveState::End => assert_eq!(r, Err(EnclaveError::EnclaveClosed)),
                s if !s.accepts(kind) => assert_eq!(r, Err(EnclaveError::InvalidEcall { state, kind })),
                _ => assert!(r.is_ok(), "{state:?} x {kind:?}: {r:?}"),
            }
            cases += 1;
        }
    }
    assert_eq!(cases, 55);
}

#[test]
fn fail_is_absorbing() {
    let mut rng = ChaCha20Rng::seed_from_u64(99);
    for _ in 0..40 {
        let mut rig = rig_in(EnclaveState::Fail);
        for _ in 0..30 {
            let kind = EcallKind::ALL[rng.gen_range(0..11)];
            let payload = valid_payload(&mut rig, kind);
            assert_eq!(rig.call(kind, &payload), Err(EnclaveError::EnclaveFailed));
            assert_eq!(rig.enclave.state(), EnclaveState::Fail);
        }
    }
}

#[test]
fn overlay_size_is_bounded_by_display() {
    let rig = Rig::ready();
    assert!(matches!(rig.enclave.render_overlay_at(640, 240), Err(EnclaveError::Overlay(OverlayError::TooLarge(..)))));
    let a = rig.enclave.render_overlay().unwrap().to_bytes();
    assert_eq!(a, rig.enclave.render_overlay().unwrap().to_bytes());
}
