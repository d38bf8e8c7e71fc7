//! The web enclave: a five-state machine driven by ECALLs from the
//! untrusted browser, holding form values, running trusted script and
//! talking to one origin and the two trusted devices.

pub mod messages;
pub mod overlay;

use std::collections::BTreeMap;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::cryptowire::{
    measure, open_envelope, seal_data, seal_envelope, unseal_data, Channel, CryptoError, Direction, DevicePairing,
    EnclaveHandshake, EnclaveSession, Envelope, KeyMaterial, Origin, Platform, SealedRecord, SealingKey, StreamCounters,
    VerifyingKey, WEB_ENCLAVE_CODE_IDENTITY,
};
use crate::page::{encode_form_submission, parse_page_with, verify_tag, PageDoc, PageError, PageUrl, SecureFormSpec, TagRef};
use crate::script::{
    bridge_receive, eval_call, parse_script, HostEnvironment, Program, ScriptError, Value, XhrRequest, XhrResponse,
    XhrTransport,
};
use messages::{KeyEvent, ModeCommand, OriginRequest, SignedEnvelope};
use overlay::{FieldView, Overlay, OverlayError};

pub const MAX_FIELD_LEN: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnclaveState {
    Initial,
    Authenticated,
    Ready,
    End,
    Fail,
}

impl EnclaveState {
    pub const ALL: [EnclaveState; 5] =
        [EnclaveState::Initial, EnclaveState::Authenticated, EnclaveState::Ready, EnclaveState::End, EnclaveState::Fail];

    pub fn accepts(self, kind: EcallKind) -> bool {
        use EcallKind::*;
        match self {
            EnclaveState::Initial => matches!(kind, Attest),
            EnclaveState::Authenticated => matches!(kind, LoadTags | VerifySignatures),
            EnclaveState::Ready => {
                matches!(kind, Focus | Blur | Keystroke | Submit | RunScript | Store | Load | Close)
            }
            EnclaveState::End | EnclaveState::Fail => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EcallKind {
    Attest,
    LoadTags,
    VerifySignatures,
    Focus,
    Blur,
    Keystroke,
    Submit,
    RunScript,
    Store,
    Load,
    Close,
}

impl EcallKind {
    pub const ALL: [EcallKind; 11] = [
        EcallKind::Attest,
        EcallKind::LoadTags,
        EcallKind::VerifySignatures,
        EcallKind::Focus,
        EcallKind::Blur,
        EcallKind::Keystroke,
        EcallKind::Submit,
        EcallKind::RunScript,
        EcallKind::Store,
        EcallKind::Load,
        EcallKind::Close,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EnclaveError {
    #[error("ECALL {kind:?} is not accepted in state {state:?}")]
    InvalidEcall { state: EnclaveState, kind: EcallKind },
    #[error("enclave has failed")]
    EnclaveFailed,
    #[error("enclave session has ended")]
    EnclaveClosed,
    #[error("malformed ECALL payload: {0}")]
    BadPayload(String),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Page(#[from] PageError),
    #[error("trusted script rejected: {0}")]
    Script(ScriptError),
    #[error("page talks to {page}, but the session is bound to {session}")]
    OriginMismatch { page: String, session: String },
    #[error("signature check failed for {0}")]
    SignatureInvalid(String),
    #[error("no secure input {form}.{input}")]
    UnknownField { form: String, input: String },
    #[error("no secure form {0}")]
    UnknownForm(String),
    #[error("key event arrived with no focused input")]
    KeystrokeWithoutFocus,
    #[error(transparent)]
    Overlay(#[from] OverlayError),
}

/// Everything the enclave hands back to the untrusted side.
#[derive(Debug, Clone, PartialEq)]
pub enum EnclaveOutput {
    ToKeyboard(Envelope),
    ToDisplay(Envelope),
    /// A `SignedEnvelope` for the origin.
    ToOrigin(Vec<u8>),
    Sealed(SealedRecord),
    Quote(Vec<u8>),
    /// A `postMessage` copy for untrusted page script.
    ToUntrusted(serde_json::Value),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EcallResult {
    pub outputs: Vec<EnclaveOutput>,
    pub value: Option<serde_json::Value>,
    pub script_error: Option<ScriptError>,
}

/// Synchronous calls out of the enclave.
pub trait Ocall {
    /// Sends a signed request to the origin and returns the sealed reply,
    /// if the network delivered one.
    fn send_to_origin(&mut self, request: Vec<u8>) -> Option<Vec<u8>>;
}

pub struct NoNetwork;

impl Ocall for NoNetwork {
    fn send_to_origin(&mut self, _: Vec<u8>) -> Option<Vec<u8>> {
        None
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoadTagsPayload {
    pub page_url: String,
    pub html: String,
    /// Bodies of external scripts keyed by their `src` attribute.
    #[serde(default)]
    pub scripts: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldRef {
    pub form: String,
    pub input: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubmitPayload {
    pub form: String,
}

/// Either a named function call or a message for the listener.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RunScriptPayload {
    Call {
        function: String,
        #[serde(default)]
        args: Vec<serde_json::Value>,
    },
    Message {
        message: serde_json::Value,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StorePayload {
    pub key: String,
    pub value: String,
}

pub fn attest_begin_payload(origin: &Origin) -> Vec<u8> {
    let mut p = vec![0];
    p.extend_from_slice(origin.canonical().as_bytes());
    p
}

pub fn attest_complete_payload(hello: &[u8]) -> Vec<u8> {
    let mut p = vec![1];
    p.extend_from_slice(hello);
    p
}

pub fn json_payload<T: Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec(v).expect("payload types serialize")
}

#[derive(Debug, Clone)]
pub struct EnclaveConfig {
    pub display_width: u32,
    pub display_height: u32,
    pub code_identity: String,
}

impl Default for EnclaveConfig {
    fn default() -> Self {
        EnclaveConfig { display_width: 320, display_height: 240, code_identity: WEB_ENCLAVE_CODE_IDENTITY.to_string() }
    }
}

#[derive(Debug, Clone)]
pub struct FormState {
    pub spec: SecureFormSpec,
    pub values: IndexMap<String, String>,
}

#[derive(Clone)]
struct DeviceKeys {
    kb_in: KeyMaterial,
    kb_cmd: KeyMaterial,
    display: KeyMaterial,
}

pub struct WebEnclave {
    state: EnclaveState,
    config: EnclaveConfig,
    platform: Platform,
    pinned: BTreeMap<Origin, VerifyingKey>,
    pairing: DevicePairing,
    counters: StreamCounters,
    sealing_key: SealingKey,
    rng: ChaCha20Rng,
    handshake: Option<EnclaveHandshake>,
    session: Option<EnclaveSession>,
    devices: Option<DeviceKeys>,
    doc: Option<PageDoc>,
    forms: IndexMap<String, FormState>,
    program: Program,
    focus: Option<(String, String)>,
    revision: u64,
    local_storage: BTreeMap<String, String>,
    null_cipher: bool,
}

impl std::fmt::Debug for WebEnclave {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WebEnclave")
            .field("state", &self.state)
            .field("origin", &self.origin())
            .field("focus", &self.focus)
            .field("revision", &self.revision)
            .finish_non_exhaustive()
    }
}

impl WebEnclave {
    pub fn new(
        platform: Platform,
        pinned: BTreeMap<Origin, VerifyingKey>,
        pairing: DevicePairing,
        counters: StreamCounters,
        config: EnclaveConfig,
        seed: u64,
    ) -> Self {
        let sealing_key = platform.sealing_key(&measure(&config.code_identity));
        WebEnclave {
            state: EnclaveState::Initial,
            config,
            platform,
            pinned,
            pairing,
            counters,
            sealing_key,
            rng: ChaCha20Rng::seed_from_u64(seed),
            handshake: None,
            session: None,
            devices: None,
            doc: None,
            forms: IndexMap::new(),
            program: Program::default(),
            focus: None,
            revision: 0,
            local_storage: BTreeMap::new(),
            null_cipher: false,
        }
    }

    /// A full copy, keys included, for exploring several continuations
    /// from one state. `None` mid-attestation: the ephemeral DH secret
    /// cannot be copied.
    pub fn snapshot(&self) -> Option<WebEnclave> {
        if self.handshake.is_some() {
            return None;
        }
        Some(WebEnclave {
            state: self.state,
            config: self.config.clone(),
            platform: self.platform.clone(),
            pinned: self.pinned.clone(),
            pairing: self.pairing.clone(),
            counters: self.counters.clone(),
            sealing_key: self.sealing_key.clone(),
            rng: self.rng.clone(),
            handshake: None,
            session: self.session.clone(),
            devices: self.devices.clone(),
            doc: self.doc.clone(),
            forms: self.forms.clone(),
            program: self.program.clone(),
            focus: self.focus.clone(),
            revision: self.revision,
            local_storage: self.local_storage.clone(),
            null_cipher: self.null_cipher,
        })
    }

    pub fn state(&self) -> EnclaveState {
        self.state
    }

    pub fn origin(&self) -> Option<&Origin> {
        self.session.as_ref().map(|s| &s.keys.origin)
    }

    pub fn focus(&self) -> Option<(&str, &str)> {
        self.focus.as_ref().map(|(f, i)| (f.as_str(), i.as_str()))
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn form_values(&self, form: &str) -> Option<&IndexMap<String, String>> {
        self.forms.get(form).map(|f| &f.values)
    }

    pub fn local_storage(&self) -> &BTreeMap<String, String> {
        &self.local_storage
    }

    /// Device stream counters to persist for the next session.
    pub fn device_counters(&self) -> StreamCounters {
        let mut c = self.counters.clone();
        if let Some(d) = &self.devices {
            c.record(&d.kb_in);
            c.record(&d.kb_cmd);
            c.record(&d.display);
        }
        c
    }

    /// Negative-control hook: every envelope the enclave seals or opens
    /// from now on is plaintext. Only the leak-scanner control uses it.
    #[doc(hidden)]
    pub fn disable_encryption_for_control(&mut self) {
        self.null_cipher = true;
        self.apply_null_cipher();
    }

    fn apply_null_cipher(&mut self) {
        if !self.null_cipher {
            return;
        }
        if let Some(s) = &mut self.session {
            s.keys.send.disable_encryption_for_control();
            s.keys.recv.disable_encryption_for_control();
        }
        if let Some(d) = &mut self.devices {
            d.kb_in.disable_encryption_for_control();
            d.kb_cmd.disable_encryption_for_control();
            d.display.disable_encryption_for_control();
        }
    }

    pub fn ecall(&mut self, kind: EcallKind, payload: &[u8], ocall: &mut dyn Ocall) -> Result<EcallResult, EnclaveError> {
        match self.state {
            EnclaveState::Fail => return Err(EnclaveError::EnclaveFailed),
            EnclaveState::End => return Err(EnclaveError::EnclaveClosed),
            s if !s.accepts(kind) => {
                self.fail();
                return Err(EnclaveError::InvalidEcall { state: s, kind });
            }
            _ => {}
        }
        let r = match kind {
            EcallKind::Attest => self.attest(payload),
            EcallKind::LoadTags => self.load_tags(payload),
            EcallKind::VerifySignatures => self.verify_signatures(),
            EcallKind::Focus => self.focus_ecall(payload),
            EcallKind::Blur => self.blur(),
            EcallKind::Keystroke => self.keystroke(payload),
            EcallKind::Submit => self.submit(payload),
            EcallKind::RunScript => self.run_script(payload, ocall),
            EcallKind::Store => self.store(payload),
            EcallKind::Load => self.load(payload),
            EcallKind::Close => self.close(),
        };
        if r.is_err() {
            self.fail();
        }
        r
    }

    fn fail(&mut self) {
        self.state = EnclaveState::Fail;
        self.focus = None;
        self.handshake = None;
    }

    fn attest(&mut self, payload: &[u8]) -> Result<EcallResult, EnclaveError> {
        let (&tag, rest) = payload.split_first().ok_or_else(|| bad("empty attest payload"))?;
        match (tag, self.handshake.take()) {
            (0, None) => {
                let origin: Origin = std::str::from_utf8(rest).map_err(|_| bad("origin is not UTF-8"))?.parse()?;
                if !self.pinned.contains_key(&origin) {
                    return Err(CryptoError::OriginKeyInvalid.into());
                }
                let (hs, quote) = EnclaveHandshake::begin(&self.platform, &self.config.code_identity, &origin, &mut self.rng);
                self.handshake = Some(hs);
                Ok(EcallResult { outputs: vec![EnclaveOutput::Quote(quote)], ..Default::default() })
            }
            (1, Some(hs)) => {
                let origin = hs.origin().clone();
                let session = hs.finish(rest, &self.pinned[&origin])?;
                self.revision = session.revision;
                let key = |ch, dir| self.counters.key_for(&self.pairing, ch, &origin, dir);
                self.devices = Some(DeviceKeys {
                    kb_in: key(Channel::KeyboardToEnclave, Direction::Forward),
                    kb_cmd: key(Channel::KeyboardToEnclave, Direction::Reverse),
                    display: key(Channel::EnclaveToDisplay, Direction::Forward),
                });
                self.session = Some(session);
                self.apply_null_cipher();
                self.state = EnclaveState::Authenticated;
                Ok(EcallResult::default())
            }
            _ => Err(bad("attestation steps out of order")),
        }
    }

    fn session_origin(&self) -> Origin {
        self.session.as_ref().expect("state implies a session").keys.origin.clone()
    }

    fn load_tags(&mut self, payload: &[u8]) -> Result<EcallResult, EnclaveError> {
        if self.doc.is_some() {
            return Err(bad("tags already loaded"));
        }
        let p: LoadTagsPayload = parse_json(payload)?;
        let url = PageUrl::parse(&p.page_url)?;
        let doc = parse_page_with(&p.html, &url, |src| p.scripts.get(src).map(|s| s.as_bytes().to_vec()))?;
        let page_origin = doc.enclave_origin()?;
        let origin = self.session_origin();
        if page_origin != origin {
            return Err(EnclaveError::OriginMismatch { page: page_origin.canonical(), session: origin.canonical() });
        }
        self.doc = Some(doc);
        Ok(EcallResult::default())
    }

    fn verify_signatures(&mut self) -> Result<EcallResult, EnclaveError> {
        let origin = self.session_origin();
        let key = self.pinned[&origin];
        let Some(doc) = &self.doc else {
            self.state = EnclaveState::Ready;
            return Ok(EcallResult::default());
        };
        let tags = doc.secure_forms.iter().map(TagRef::Form).chain(doc.secure_scripts.iter().map(TagRef::Script));
        for tag in tags {
            if !verify_tag(tag, &key) {
                return Err(EnclaveError::SignatureInvalid(tag.describe()));
            }
        }
        let mut units = Vec::new();
        for s in &doc.secure_scripts {
            let src = std::str::from_utf8(&s.code).map_err(|_| bad("script is not UTF-8"))?;
            units.push(parse_script(src).map_err(EnclaveError::Script)?);
        }
        self.program = Program::merged(&units);
        self.forms = doc
            .secure_forms
            .iter()
            .map(|f| {
                let values = f.inputs.iter().map(|i| (i.name.clone(), String::new())).collect();
                (f.name.clone(), FormState { spec: f.clone(), values })
            })
            .collect();
        self.state = EnclaveState::Ready;
        Ok(EcallResult::default())
    }

    fn focus_ecall(&mut self, payload: &[u8]) -> Result<EcallResult, EnclaveError> {
        let p: FieldRef = parse_json(payload)?;
        let known = self.forms.get(&p.form).is_some_and(|f| f.values.contains_key(&p.input));
        if !known {
            return Err(EnclaveError::UnknownField { form: p.form, input: p.input });
        }
        self.focus = Some((p.form, p.input));
        let mut outputs = self.mode_commands(ModeCommand::EnterTrusted)?;
        outputs.push(self.overlay_output()?);
        Ok(EcallResult { outputs, ..Default::default() })
    }

    fn blur(&mut self) -> Result<EcallResult, EnclaveError> {
        if self.focus.take().is_none() {
            return Ok(EcallResult::default());
        }
        let mut outputs = vec![self.overlay_output()?];
        outputs.extend(self.mode_commands(ModeCommand::ExitTrusted)?);
        Ok(EcallResult { outputs, ..Default::default() })
    }

    fn mode_commands(&mut self, cmd: ModeCommand) -> Result<Vec<EnclaveOutput>, EnclaveError> {
        let origin = self.session_origin();
        let d = self.devices.as_mut().expect("state implies device keys");
        Ok(vec![
            EnclaveOutput::ToKeyboard(seal_envelope(&mut d.kb_cmd, Channel::KeyboardToEnclave, &origin, cmd.as_bytes())?),
            EnclaveOutput::ToDisplay(seal_envelope(&mut d.display, Channel::EnclaveToDisplay, &origin, cmd.as_bytes())?),
        ])
    }

    /// Renders the current state at the configured display size.
    pub fn render_overlay(&self) -> Result<Overlay, EnclaveError> {
        self.render_overlay_at(self.config.display_width, self.config.display_height)
    }

    pub fn render_overlay_at(&self, width: u32, height: u32) -> Result<Overlay, EnclaveError> {
        if width > self.config.display_width || height > self.config.display_height {
            return Err(OverlayError::TooLarge(width, height, self.config.display_width, self.config.display_height).into());
        }
        let origin = self.origin().ok_or_else(|| bad("no session"))?;
        let mut fields = Vec::new();
        for f in self.forms.values() {
            for input in &f.spec.inputs {
                if input.input_type == "hidden" {
                    continue;
                }
                fields.push(FieldView {
                    label: &input.name,
                    text: &f.values[&input.name],
                    masked: input.input_type == "password",
                });
            }
        }
        let label = self.focus.as_ref().map(|(_, i)| i.as_str());
        let banner = overlay::banner_origin_text(origin.host(), origin.port());
        Ok(overlay::render(&fields, &banner, label, width, height)?)
    }

    fn overlay_output(&mut self) -> Result<EnclaveOutput, EnclaveError> {
        let bytes = self.render_overlay()?.to_bytes();
        let origin = self.session_origin();
        let d = self.devices.as_mut().expect("state implies device keys");
        Ok(EnclaveOutput::ToDisplay(seal_envelope(&mut d.display, Channel::EnclaveToDisplay, &origin, &bytes)?))
    }

    fn keystroke(&mut self, payload: &[u8]) -> Result<EcallResult, EnclaveError> {
        let env = Envelope::from_bytes(payload)?;
        let origin = self.session_origin();
        let d = self.devices.as_mut().expect("state implies device keys");
        let record = open_envelope(&mut d.kb_in, &origin, &env)?;
        let event = KeyEvent::from_record(&record).ok_or_else(|| bad("bad key record"))?;
        if event.is_real() {
            let Some((form, input)) = &self.focus else {
                return Err(EnclaveError::KeystrokeWithoutFocus);
            };
            let value = self.forms.get_mut(form).and_then(|f| f.values.get_mut(input)).expect("focus is a known field");
            match event {
                KeyEvent::Char(c) if (' '..='~').contains(&c) && value.len() < MAX_FIELD_LEN => value.push(c),
                KeyEvent::Backspace => {
                    value.pop();
                }
                _ => {}
            }
        }
        Ok(EcallResult { outputs: vec![self.overlay_output()?], ..Default::default() })
    }

    fn signed_to_origin(&mut self, req: &OriginRequest) -> Result<Vec<u8>, EnclaveError> {
        let s = self.session.as_mut().expect("state implies a session");
        let plain = serde_json::to_vec(req).expect("requests serialize");
        let env = seal_envelope(&mut s.keys.send, Channel::EnclaveToOrigin, &s.keys.origin.clone(), &plain)?;
        Ok(SignedEnvelope::sign(env, &s.sign_key).to_bytes())
    }

    fn submit(&mut self, payload: &[u8]) -> Result<EcallResult, EnclaveError> {
        let p: SubmitPayload = parse_json(payload)?;
        let form = self.forms.get(&p.form).ok_or_else(|| EnclaveError::UnknownForm(p.form.clone()))?;
        let fields: Vec<(&str, &str)> = form.values.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
        let body = String::from_utf8(encode_form_submission(&fields)).expect("urlencoding is ASCII");
        let req = OriginRequest::Submit {
            form: p.form.clone(),
            action: form.spec.action_url.clone(),
            method: form.spec.method.clone(),
            body,
        };
        let out = self.signed_to_origin(&req)?;
        Ok(EcallResult { outputs: vec![EnclaveOutput::ToOrigin(out)], ..Default::default() })
    }

    /// Bumps the revision, seals the whole store and tells the origin.
    fn persist(&mut self) -> Result<Vec<EnclaveOutput>, EnclaveError> {
        self.revision += 1;
        let origin = self.session_origin();
        let blob = serde_json::to_vec(&self.local_storage).expect("string map serializes");
        let rec = seal_data(&self.sealing_key, &origin, self.revision, &blob, &mut self.rng);
        let update = self.signed_to_origin(&OriginRequest::Revision { revision: self.revision })?;
        Ok(vec![EnclaveOutput::Sealed(rec), EnclaveOutput::ToOrigin(update)])
    }

    fn store(&mut self, payload: &[u8]) -> Result<EcallResult, EnclaveError> {
        let p: StorePayload = parse_json(payload)?;
        self.local_storage.insert(p.key, p.value);
        Ok(EcallResult { outputs: self.persist()?, ..Default::default() })
    }

    fn load(&mut self, payload: &[u8]) -> Result<EcallResult, EnclaveError> {
        let rec = SealedRecord::from_bytes(payload)?;
        let origin = self.session_origin();
        let blob = unseal_data(&self.sealing_key, &origin, self.revision, &rec)?;
        self.local_storage = serde_json::from_slice(&blob).map_err(|e| bad(&e.to_string()))?;
        Ok(EcallResult::default())
    }

    fn close(&mut self) -> Result<EcallResult, EnclaveError> {
        let mut outputs = Vec::new();
        if self.focus.take().is_some() {
            outputs = self.mode_commands(ModeCommand::ExitTrusted)?;
        }
        self.state = EnclaveState::End;
        Ok(EcallResult { outputs, ..Default::default() })
    }

    fn run_script(&mut self, payload: &[u8], ocall: &mut dyn Ocall) -> Result<EcallResult, EnclaveError> {
        let p: RunScriptPayload = parse_json(payload)?;
        let origin = self.session_origin();
        let session = self.session.as_mut().expect("state implies a session");
        let mut link = OriginLink { session, ocall, rejected: None };
        let mut env = HostEnvironment::new(origin).with_transport(&mut link);
        env.forms = self.forms.iter().map(|(k, f)| (k.clone(), f.values.clone())).collect();
        env.local_storage = self.local_storage.clone();
        let r = match &p {
            RunScriptPayload::Call { function, args } => args
                .iter()
                .map(Value::from_json)
                .collect::<Result<Vec<_>, _>>()
                .and_then(|args| eval_call(&self.program, &mut env, function, args)),
            RunScriptPayload::Message { message } => bridge_receive(&self.program, &mut env, message),
        };
        let HostEnvironment { forms, local_storage, outbox, .. } = env;
        let dirty = local_storage != self.local_storage;
        if let Some(e) = link.rejected {
            return Err(e.into());
        }
        for (name, values) in forms {
            if let Some(f) = self.forms.get_mut(&name) {
                for (k, v) in values {
                    if let Some(slot) = f.values.get_mut(&k) {
                        *slot = v.chars().take(MAX_FIELD_LEN).collect();
                    }
                }
            }
        }
        let mut out = EcallResult {
            outputs: outbox.into_iter().map(EnclaveOutput::ToUntrusted).collect(),
            ..Default::default()
        };
        if dirty {
            self.local_storage = local_storage;
            out.outputs.extend(self.persist()?);
        }
        match r {
            Ok(v) => out.value = v.to_json().ok().flatten(),
            Err(ScriptError::StepBudgetExceeded) => {
                out.outputs.extend(self.close()?.outputs);
                out.script_error = Some(ScriptError::StepBudgetExceeded);
            }
            Err(e) => out.script_error = Some(e),
        }
        Ok(out)
    }
}

/// XHR transport that seals requests for the origin and opens replies.
struct OriginLink<'s> {
    session: &'s mut EnclaveSession,
    ocall: &'s mut dyn Ocall,
    rejected: Option<CryptoError>,
}

impl XhrTransport for OriginLink<'_> {
    fn send(&mut self, req: &XhrRequest) -> Result<XhrResponse, ScriptError> {
        let keys = &mut self.session.keys;
        let plain = serde_json::to_vec(&OriginRequest::Xhr { request: req.clone() }).expect("requests serialize");
        let env = seal_envelope(&mut keys.send, Channel::EnclaveToOrigin, &keys.origin.clone(), &plain)
            .map_err(|e| ScriptError::Runtime(e.to_string()))?;
        let reply = self
            .ocall
            .send_to_origin(SignedEnvelope::sign(env, &self.session.sign_key).to_bytes())
            .ok_or(ScriptError::NetworkDropped)?;
        let opened = Envelope::from_bytes(&reply)
            .and_then(|env| open_envelope(&mut keys.recv, &keys.origin.clone(), &env))
            .and_then(|p| serde_json::from_slice::<XhrResponse>(&p).map_err(|_| CryptoError::Malformed("reply")));
        match opened {
            Ok(resp) => Ok(resp),
            Err(e) => {
                self.rejected.get_or_insert(e);
                Err(ScriptError::NetworkDropped)
            }
        }
    }
}

fn bad(msg: &str) -> EnclaveError {
    EnclaveError::BadPayload(msg.to_string())
}

fn parse_json<T: serde::de::DeserializeOwned>(payload: &[u8]) -> Result<T, EnclaveError> {
    serde_json::from_slice(payload).map_err(|e| bad(&e.to_string()))
}

#[cfg(test)]
mod tests;
