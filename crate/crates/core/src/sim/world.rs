//! The discrete-event world. Components never talk to each other directly:
//! every message is posted to the broker and delivered from its queue.

use std::collections::BTreeMap;

use serde::Serialize;

use super::broker::{AdversaryAction, Broker, Dest, Link, Message, TranscriptEntry};
use super::scenario::{ConcurrentSession, FixtureSource, OriginFixture, Scenario, SimConfig};
use super::server::{crypto_signal, OriginServer, Submission};
use super::user::{AbortReason, UserAction, UserModel, UserView};
use super::SimError;
use crate::cryptowire::{
    measure, Envelope, KeypairFixture, Origin, Platform, SealedRecord, ServerIdentity, StreamCounters, VerifyingKey,
    DevicePairing, WEB_ENCLAVE_CODE_IDENTITY,
};
use crate::devices::{DeviceMode, DisplayDongle, Frame, KeyboardDongle, KeyboardOutput};
use crate::enclave::messages::KeyEvent;
use crate::enclave::{
    attest_begin_payload, json_payload, EcallKind, EnclaveConfig, EnclaveError, EnclaveOutput, EnclaveState, FieldRef,
    LoadTagsPayload, Ocall, RunScriptPayload, StorePayload, SubmitPayload, WebEnclave,
};
use crate::page::PageError;

/// Something a component noticed and refused.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Detection {
    pub tick: u64,
    pub by: String,
    pub signal: String,
    pub detail: String,
}

impl Detection {
    /// `by:signal`, the form scenario assertions use.
    pub fn label(&self) -> String {
        format!("{}:{}", self.by, self.signal)
    }
}

pub fn enclave_signal(e: &EnclaveError) -> Option<&'static str> {
    Some(match e {
        EnclaveError::InvalidEcall { .. } => "InvalidEcall",
        EnclaveError::EnclaveFailed | EnclaveError::EnclaveClosed => return None,
        EnclaveError::BadPayload(_) => "BadPayload",
        EnclaveError::Crypto(c) => crypto_signal(c),
        EnclaveError::Page(PageError::Parse(_)) => "PageParse",
        EnclaveError::Page(PageError::BadOriginUrl(_)) => "BadOriginUrl",
        EnclaveError::Page(PageError::MixedOrigins(_)) => "MixedOrigins",
        EnclaveError::Script(_) => "ScriptRejected",
        EnclaveError::OriginMismatch { .. } => "OriginMismatch",
        EnclaveError::SignatureInvalid(_) => "SignatureInvalid",
        EnclaveError::UnknownField { .. } => "UnknownField",
        EnclaveError::UnknownForm(_) => "UnknownForm",
        EnclaveError::KeystrokeWithoutFocus => "KeystrokeWithoutFocus",
        EnclaveError::Overlay(_) => "Overlay",
    })
}

/// A web origin: the page it serves and its server.
struct Site {
    origin: Origin,
    page_url: String,
    html: String,
    scripts: BTreeMap<String, String>,
    server: OriginServer,
}

struct Slot {
    enclave: WebEnclave,
    site: usize,
    /// Cleared once the browser sees the enclave fail or end.
    live: bool,
}

/// Everything the verdict engine needs from a finished run.
#[derive(Debug)]
pub struct Outcome {
    pub transcript: Vec<TranscriptEntry>,
    pub detections: Vec<Detection>,
    pub ticks: u64,
    pub timed_out: bool,
    /// Per tick from 1: whether the keyboard was in a trusted mode when it ticked.
    pub keyboard_trusted: Vec<bool>,
    pub submissions: Vec<Submission>,
    pub servers: Vec<ServerSummary>,
    pub enclaves: Vec<EnclaveSummary>,
    pub primary_state: Option<EnclaveState>,
    pub user_aborted: Option<AbortReason>,
    pub user_finished: bool,
    pub secret_chars_typed: usize,
    pub keys_pressed: usize,
    pub frames: u64,
    pub last_frame: Frame,
    pub script_errors: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ServerSummary {
    pub origin: String,
    pub revision: u64,
    pub accepted: usize,
    pub rejected: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EnclaveSummary {
    pub origin: String,
    pub state: EnclaveState,
    pub revision: u64,
}

pub struct World {
    cfg: SimConfig,
    seed: u64,
    now: u64,
    broker: Broker,
    platform: Platform,
    pairing: DevicePairing,
    pinned: BTreeMap<Origin, VerifyingKey>,
    sites: Vec<Site>,
    slots: Vec<Slot>,
    primary: Option<usize>,
    keyboard: KeyboardDongle,
    display: DisplayDongle,
    storage: Vec<SealedRecord>,
    user: UserModel,
    actions: Vec<AdversaryAction>,
    concurrent: Option<ConcurrentSession>,
    detections: Vec<Detection>,
    alarms_seen: (usize, usize),
    keyboard_trusted: Vec<bool>,
    last_frame: Frame,
    frames: u64,
    script_errors: u64,
}

fn load_site(fx: &dyn FixtureSource, o: &OriginFixture, seed: u64, platform: &Platform) -> Result<(Site, VerifyingKey), SimError> {
    let key: KeypairFixture = serde_json::from_str(&fx.read(&o.key)?)
        .map_err(|e| SimError::Fixture(format!("{}: {e}", o.key)))?;
    let signing = key.signing_key().map_err(|e| SimError::Fixture(format!("{}: {e}", o.key)))?;
    let verifying = key.verifying_key().map_err(|e| SimError::Fixture(format!("{}: {e}", o.key)))?;
    let html = fx.read(&o.page)?;
    let mut scripts = BTreeMap::new();
    for (src, path) in &o.scripts {
        scripts.insert(src.clone(), fx.read(path)?);
    }
    let identity = ServerIdentity {
        origin: key.origin.clone(),
        signing_key: signing,
        expected_measurement: measure(WEB_ENCLAVE_CODE_IDENTITY),
        platform_key: platform.verifying_key(),
        revision: o.revision,
    };
    let site = Site {
        origin: key.origin.clone(),
        page_url: o.page_url.clone(),
        html,
        scripts,
        server: OriginServer::new(identity, seed),
    };
    Ok((site, verifying))
}

/// Independent streams derived from the run seed.
fn sub_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03)
}

impl World {
    pub fn new(scenario: &Scenario, fx: &dyn FixtureSource, cfg: SimConfig, seed: u64) -> Result<World, SimError> {
        let platform = Platform::fixture();
        let mut sites = Vec::new();
        let mut pinned = BTreeMap::new();
        for (i, o) in std::iter::once(&scenario.origin).chain(&scenario.other_origins).enumerate() {
            let (site, key) = load_site(fx, o, sub_seed(seed, 100 + i as u64), &platform)?;
            if pinned.insert(site.origin.clone(), key).is_some() {
                return Err(SimError::Config(format!("origin {} listed twice", site.origin)));
            }
            sites.push(site);
        }
        let site_of = |origin: &str| -> Result<usize, SimError> {
            let o: Origin = origin.parse().map_err(|e| SimError::Config(format!("{origin}: {e}")))?;
            sites.iter().position(|s| s.origin == o).ok_or_else(|| SimError::Config(format!("no fixture for origin {o}")))
        };
        for a in &scenario.adversary {
            if let AdversaryAction::NavigateMalicious { origin } = a {
                site_of(origin)?;
            }
        }
        if let Some(c) = &scenario.concurrent_session {
            site_of(&c.origin)?;
        }
        let pairing = DevicePairing::from_label("fidelius-sim desk");
        let d = cfg.exit_delay_ticks;
        let mut keyboard = KeyboardDongle::new(pairing.keyboard.clone(), d);
        let mut display = DisplayDongle::new(pairing.display.clone(), cfg.width, cfg.height, d);
        if cfg.disable_encryption {
            keyboard.disable_encryption_for_control();
            display.disable_encryption_for_control();
            for s in &mut sites {
                s.server.disable_encryption_for_control();
            }
        }
        Ok(World {
            keyboard,
            display,
            last_frame: Frame::filled(cfg.width, cfg.height, [0, 0, 0]),
            cfg,
            seed,
            now: 0,
            broker: Broker::new(&scenario.adversary),
            platform,
            pairing,
            pinned,
            sites,
            slots: Vec::new(),
            primary: None,
            storage: Vec::new(),
            user: UserModel::new(scenario.user.clone(), sub_seed(seed, 1)),
            actions: scenario.adversary.clone(),
            concurrent: scenario.concurrent_session.clone(),
            detections: Vec::new(),
            alarms_seen: (0, 0),
            keyboard_trusted: Vec::new(),
            frames: 0,
            script_errors: 0,
        })
    }

    fn site_index(&self, origin: &str) -> usize {
        let o: Origin = origin.parse().expect("checked in World::new");
        self.sites.iter().position(|s| s.origin == o).expect("checked in World::new")
    }

    fn detect(&mut self, by: &str, signal: &str, detail: String) {
        self.detections.push(Detection { tick: self.now, by: by.into(), signal: signal.into(), detail });
    }

    fn skipped(&self, kind: EcallKind) -> bool {
        self.actions.iter().any(|a| matches!(a, AdversaryAction::SkipEcall { kind: k } if *k == kind))
    }

    fn new_slot(&mut self, site: usize, counters: StreamCounters) -> usize {
        let config = EnclaveConfig {
            display_width: self.cfg.width,
            display_height: self.cfg.height,
            code_identity: WEB_ENCLAVE_CODE_IDENTITY.to_string(),
        };
        let seed = sub_seed(self.seed, 1000 + self.slots.len() as u64);
        let mut enclave =
            WebEnclave::new(self.platform.clone(), self.pinned.clone(), self.pairing.clone(), counters, config, seed);
        if self.cfg.disable_encryption {
            enclave.disable_encryption_for_control();
        }
        self.slots.push(Slot { enclave, site, live: true });
        self.slots.len() - 1
    }

    /// The browser issues an ECALL, unless the adversary suppresses it or
    /// the enclave is known to be gone.
    fn browser_ecall(&mut self, slot: usize, kind: EcallKind, payload: Vec<u8>) {
        if self.skipped(kind) || !self.slots[slot].live {
            return;
        }
        self.broker.post(self.now, Message::ecall(Link::Ecall, slot, kind, payload));
    }

    fn drain(&mut self) {
        while let Some(msgs) = self.broker.pop_due(self.now) {
            for m in msgs {
                self.deliver(m);
            }
        }
        self.sync_alarms();
    }

    fn sync_alarms(&mut self) {
        let (k, d) = self.alarms_seen;
        let fresh: Vec<_> =
            self.keyboard.alarms()[k..].iter().chain(&self.display.alarms()[d..]).cloned().collect();
        self.alarms_seen = (self.keyboard.alarms().len(), self.display.alarms().len());
        for a in fresh {
            let signal = serde_json::to_value(a.kind).expect("alarm kinds serialize");
            let signal = camel(signal.as_str().unwrap_or_default());
            self.detections.push(Detection { tick: self.now, by: a.device.into(), signal, detail: a.detail });
        }
    }

    fn deliver(&mut self, m: Message) {
        match m.dest {
            Dest::Enclave(slot) => {
                // Nothing in the browser can push unsolicited bytes into an enclave.
                if let Some(kind) = m.ecall {
                    self.run_ecall(slot, kind, &m.bytes);
                }
            }
            Dest::Keyboard => match Envelope::from_bytes(&m.bytes) {
                Ok(env) => self.keyboard.handle_command(&env),
                Err(e) => self.detect("keyboard", "Malformed", e.to_string()),
            },
            Dest::Display => match Envelope::from_bytes(&m.bytes) {
                Ok(env) => self.display.handle_envelope(&env),
                Err(e) => self.detect("display", "Malformed", e.to_string()),
            },
            Dest::Server { origin, conn } => {
                if m.link == Link::Attestation {
                    match self.sites[origin].server.attest(conn, &m.bytes) {
                        Ok(hello) => {
                            let payload = crate::enclave::attest_complete_payload(&hello);
                            self.broker.post(self.now, Message::ecall(Link::Attestation, conn, EcallKind::Attest, payload));
                        }
                        Err(e) => self.detect("server", &e.signal(), e.to_string()),
                    }
                    return;
                }
                let now = self.now;
                // Replies to replayed requests have nowhere to go.
                if let Err(e) = self.sites[origin].server.handle(now, conn, &m.bytes) {
                    self.detect("server", &e.signal(), e.to_string());
                }
            }
            Dest::Storage => match SealedRecord::from_bytes(&m.bytes) {
                Ok(rec) => self.storage.push(rec),
                Err(e) => self.detect("os", "Malformed", e.to_string()),
            },
            Dest::Page => {}
        }
    }

    fn run_ecall(&mut self, slot: usize, kind: EcallKind, payload: &[u8]) {
        if !self.slots[slot].live {
            return;
        }
        let site = self.slots[slot].site;
        let mut ocall = SyncOcall {
            now: self.now,
            conn: slot,
            site,
            broker: &mut self.broker,
            server: &mut self.sites[site].server,
            detections: &mut self.detections,
        };
        let r = self.slots[slot].enclave.ecall(kind, payload, &mut ocall);
        match r {
            Ok(res) => {
                if res.script_error.is_some() {
                    self.script_errors += 1;
                }
                for out in res.outputs {
                    self.route(slot, site, out);
                }
                if let Some(v) = res.value {
                    let bytes = serde_json::to_vec(&v).expect("json serializes");
                    self.broker.post(self.now, Message::new(Link::EnclaveToPage, Dest::Page, bytes));
                }
            }
            Err(e) => {
                if let Some(signal) = enclave_signal(&e) {
                    self.detect("enclave", signal, e.to_string());
                }
            }
        }
        if matches!(self.slots[slot].enclave.state(), EnclaveState::Fail | EnclaveState::End) {
            self.slots[slot].live = false;
        }
    }

    fn route(&mut self, slot: usize, site: usize, out: EnclaveOutput) {
        let server = Dest::Server { origin: site, conn: slot };
        let msg = match out {
            EnclaveOutput::ToKeyboard(env) => Message::new(Link::EnclaveToKeyboard, Dest::Keyboard, env.to_bytes()),
            EnclaveOutput::ToDisplay(env) => Message::new(Link::EnclaveToDisplay, Dest::Display, env.to_bytes()),
            EnclaveOutput::ToOrigin(bytes) => Message::new(Link::EnclaveToOrigin, server, bytes),
            EnclaveOutput::Sealed(rec) => Message::new(Link::SealedStorage, Dest::Storage, rec.to_bytes()),
            EnclaveOutput::Quote(q) => Message::new(Link::Attestation, server, q),
            EnclaveOutput::ToUntrusted(v) => {
                Message::new(Link::EnclaveToPage, Dest::Page, serde_json::to_vec(&v).expect("json serializes"))
            }
        };
        self.broker.post(self.now, msg);
    }

    /// Attest, load and verify the page, then restore sealed state.
    fn boot(&mut self, slot: usize) {
        let site = self.slots[slot].site;
        let origin = self.sites[site].origin.clone();
        self.browser_ecall(slot, EcallKind::Attest, attest_begin_payload(&origin));
        self.drain();
        if self.slots[slot].enclave.state() != EnclaveState::Authenticated {
            return;
        }
        let page_site = self
            .actions
            .iter()
            .find_map(|a| match a {
                AdversaryAction::NavigateMalicious { origin } if slot == self.primary.unwrap_or(usize::MAX) => {
                    Some(self.site_index(origin))
                }
                _ => None,
            })
            .unwrap_or(site);
        let s = &self.sites[page_site];
        let payload = json_payload(&LoadTagsPayload { page_url: s.page_url.clone(), html: s.html.clone(), scripts: s.scripts.clone() });
        self.browser_ecall(slot, EcallKind::LoadTags, payload);
        self.drain();
        self.browser_ecall(slot, EcallKind::VerifySignatures, Vec::new());
        self.drain();
        if let Some(rec) = self.record_to_load(&origin) {
            self.browser_ecall(slot, EcallKind::Load, rec.to_bytes());
            self.drain();
        }
    }

    fn record_to_load(&self, origin: &Origin) -> Option<SealedRecord> {
        let mine = self.storage.iter().filter(|r| &r.origin == origin);
        let rollback = self.actions.iter().find_map(|a| match a {
            AdversaryAction::RollbackStorage { to_revision } => Some(*to_revision),
            _ => None,
        });
        match rollback {
            Some(rev) => {
                let old = self.storage.iter().find(|r| &r.origin == origin && r.revision == rev);
                old.or_else(|| mine.max_by_key(|r| r.revision)).cloned()
            }
            None => mine.max_by_key(|r| r.revision).cloned(),
        }
    }

    fn restart(&mut self) {
        let Some(old) = self.primary else { return };
        self.browser_ecall(old, EcallKind::Close, Vec::new());
        self.drain();
        let counters = self.slots[old].enclave.device_counters();
        let slot = self.new_slot(self.slots[old].site, counters);
        self.primary = Some(slot);
        self.boot(slot);
    }

    fn swapped(&self, form: &str, input: String) -> String {
        for a in &self.actions {
            if let AdversaryAction::SwapUntrustedLabels { form: f, a, b } = a {
                if f == form && *a == input {
                    return b.clone();
                }
                if f == form && *b == input {
                    return a.clone();
                }
            }
        }
        input
    }

    fn user_action(&mut self, action: UserAction, keys: &mut Vec<KeyEvent>) {
        if let UserAction::Press(k) = action {
            keys.push(k);
            return;
        }
        if let UserAction::Restart = action {
            return self.restart();
        }
        let Some(slot) = self.primary else {
            // A fake page swallows clicks without any ECALL.
            return;
        };
        let (kind, payload) = match action {
            UserAction::Focus { form, input } => {
                let input = self.swapped(&form, input);
                (EcallKind::Focus, json_payload(&FieldRef { form, input }))
            }
            UserAction::Blur => (EcallKind::Blur, Vec::new()),
            UserAction::Submit { form } => (EcallKind::Submit, json_payload(&SubmitPayload { form })),
            UserAction::RunScript { function, args } => {
                (EcallKind::RunScript, json_payload(&RunScriptPayload::Call { function, args }))
            }
            UserAction::Message(message) => (EcallKind::RunScript, json_payload(&RunScriptPayload::Message { message })),
            UserAction::Store { key, value } => (EcallKind::Store, json_payload(&StorePayload { key, value })),
            UserAction::Press(_) | UserAction::Restart => unreachable!("handled above"),
        };
        self.browser_ecall(slot, kind, payload);
    }

    fn scheduled_attacks(&mut self) {
        let now = self.now;
        for a in self.actions.clone() {
            match a {
                AdversaryAction::InjectEcall { at, kind, payload } if at == now => {
                    if let Some(slot) = self.primary {
                        self.broker.inject(now, Message::ecall(Link::Ecall, slot, kind, payload.into_bytes()));
                    }
                }
                AdversaryAction::SwitchFocus { at, form, input } if at == now => {
                    if let Some(slot) = self.primary {
                        self.browser_ecall(slot, EcallKind::Focus, json_payload(&FieldRef { form, input }));
                    }
                }
                AdversaryAction::RapidModeSwitch { period, start } if now >= start && (now - start).is_multiple_of(period.max(1)) => {
                    for m in [self.broker.last_keyboard_cmd.clone(), self.broker.last_display_cmd.clone()].into_iter().flatten() {
                        self.broker.inject(now, m);
                    }
                }
                _ => {}
            }
        }
        if let Some(c) = self.concurrent.clone().filter(|c| c.at == now) {
            let site = self.site_index(&c.origin);
            let slot = self.new_slot(site, StreamCounters::default());
            self.boot(slot);
            self.browser_ecall(slot, EcallKind::Focus, json_payload(&c.focus));
        }
        self.drain();
    }

    fn keyboard_tick(&mut self, keys: &[KeyEvent]) {
        self.keyboard_trusted.push(self.keyboard.mode() != DeviceMode::Untrusted);
        for out in self.keyboard.tick(keys) {
            let msg = match out {
                KeyboardOutput::Plain(k) => Message::new(Link::KeyboardToOs, Dest::Page, plain_key_bytes(k)),
                KeyboardOutput::Sealed(env) => {
                    let slot = self.slots.iter().rposition(|s| self.sites[s.site].origin == env.origin);
                    match slot {
                        Some(slot) => Message::ecall(Link::KeyboardToEnclave, slot, EcallKind::Keystroke, env.to_bytes()),
                        None => Message::new(Link::KeyboardToEnclave, Dest::Page, env.to_bytes()),
                    }
                }
            };
            self.broker.post(self.now, msg);
        }
        self.drain();
    }

    pub fn run(mut self) -> Outcome {
        let fake = self.actions.iter().find_map(|a| match a {
            AdversaryAction::FakeEnclave { banner } => Some(banner.clone()),
            _ => None,
        });
        match fake {
            Some(banner) => {
                let mut frame = Frame::filled(self.cfg.width, self.cfg.height, [40, 40, 48]);
                frame.banner = banner;
                self.display.ingest(frame);
            }
            None => {
                let slot = self.new_slot(0, StreamCounters::default());
                self.primary = Some(slot);
                self.boot(slot);
            }
        }
        self.last_frame = self.display.composite();

        let mut closing_at = None;
        let mut timed_out = true;
        while self.now < self.cfg.tick_limit {
            self.now += 1;
            self.drain();
            self.scheduled_attacks();
            let banner = self.last_frame.banner.clone();
            let view = UserView { led: self.keyboard.led(), banner: banner.as_deref() };
            let mut keys = Vec::new();
            if let Some(action) = self.user.step(self.now, view) {
                self.user_action(action, &mut keys);
                self.drain();
            }
            self.keyboard_tick(&keys);
            self.last_frame = self.display.tick();
            self.frames += 1;
            self.sync_alarms();

            if self.user.finished() && closing_at.is_none() {
                if let Some(reason) = self.user.aborted().cloned() {
                    let detail = serde_json::to_string(&reason).expect("reasons serialize");
                    self.detect("user", reason.signal(), detail);
                }
                for slot in 0..self.slots.len() {
                    self.browser_ecall(slot, EcallKind::Close, Vec::new());
                }
                self.drain();
                closing_at = Some(self.now);
            }
            if let Some(c) = closing_at {
                let settled = self.keyboard.mode() == DeviceMode::Untrusted && self.display.mode() == DeviceMode::Untrusted;
                let waited = self.now >= c + u64::from(self.cfg.exit_delay_ticks) + 5;
                if self.broker.is_idle() && (waited || (settled && self.now >= c + 2)) {
                    timed_out = false;
                    break;
                }
            }
        }

        let primary_site = 0;
        Outcome {
            detections: self.detections,
            ticks: self.now,
            timed_out,
            keyboard_trusted: self.keyboard_trusted,
            submissions: self.sites[primary_site].server.submissions().to_vec(),
            servers: self
                .sites
                .iter()
                .map(|s| ServerSummary {
                    origin: s.origin.canonical(),
                    revision: s.server.revision(),
                    accepted: s.server.submissions().len(),
                    rejected: s.server.rejected(),
                })
                .collect(),
            enclaves: self
                .slots
                .iter()
                .map(|s| EnclaveSummary {
                    origin: self.sites[s.site].origin.canonical(),
                    state: s.enclave.state(),
                    revision: s.enclave.revision(),
                })
                .collect(),
            primary_state: self.primary.map(|p| self.slots[p].enclave.state()),
            user_aborted: self.user.aborted().cloned(),
            user_finished: self.user.finished(),
            secret_chars_typed: self.user.secret_chars_typed(),
            keys_pressed: self.user.keys_pressed(),
            frames: self.frames,
            last_frame: self.last_frame,
            script_errors: self.script_errors,
            transcript: self.broker.into_transcript(),
        }
    }
}

/// What the OS receives for a key typed in untrusted mode.
fn plain_key_bytes(k: KeyEvent) -> Vec<u8> {
    match k {
        KeyEvent::Char(c) => c.to_string().into_bytes(),
        KeyEvent::Backspace => vec![8],
        KeyEvent::Tab => vec![b'\t'],
        KeyEvent::Enter => vec![b'\n'],
        KeyEvent::Dummy => Vec::new(),
    }
}

fn camel(snake: &str) -> String {
    snake
        .split('_')
        .map(|w| {
            let mut c = w.chars();
            c.next().map(|f| f.to_ascii_uppercase().to_string() + c.as_str()).unwrap_or_default()
        })
        .collect()
}

/// Synchronous XHR: the request and reply pass through the broker inline.
struct SyncOcall<'w> {
    now: u64,
    conn: usize,
    site: usize,
    broker: &'w mut Broker,
    server: &'w mut OriginServer,
    detections: &'w mut Vec<Detection>,
}

impl Ocall for SyncOcall<'_> {
    fn send_to_origin(&mut self, request: Vec<u8>) -> Option<Vec<u8>> {
        let dest = Dest::Server { origin: self.site, conn: self.conn };
        let mut reply = None;
        for m in self.broker.intercept(self.now, Message::new(Link::EnclaveToOrigin, dest, request)) {
            match self.server.handle(self.now, self.conn, &m.bytes) {
                Ok(r) => reply = reply.or(r),
                Err(e) => self.detections.push(Detection {
                    tick: self.now,
                    by: "server".into(),
                    signal: e.signal(),
                    detail: e.to_string(),
                }),
            }
        }
        let back = Message::new(Link::OriginToEnclave, Dest::Enclave(self.conn), reply?);
        self.broker.intercept(self.now, back).into_iter().next().map(|m| m.bytes)
    }
}
