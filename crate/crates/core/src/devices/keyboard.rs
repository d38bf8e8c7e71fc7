use std::collections::{BTreeMap, VecDeque};

use super::{alarms_to_jsonl, Alarm, AlarmKind, DeviceMode, ModeState};
use crate::cryptowire::{open_envelope, seal_envelope, Channel, DeviceMasterKey, Direction, Envelope, KeyMaterial, Origin, StreamId};
use crate::enclave::messages::{KeyEvent, ModeCommand};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KeyboardOutput {
    /// A sealed 8-byte key record for the bound enclave.
    Sealed(Envelope),
    /// Ordinary typing, visible to the OS.
    Plain(KeyEvent),
}

#[derive(Debug)]
struct OriginKeys {
    send: KeyMaterial,
    recv: KeyMaterial,
}

#[derive(Debug)]
pub struct KeyboardDongle {
    master: DeviceMasterKey,
    state: ModeState,
    keys: BTreeMap<Origin, OriginKeys>,
    queue: VecDeque<KeyEvent>,
    alarms: Vec<Alarm>,
    now: u64,
    null_cipher: bool,
}

impl KeyboardDongle {
    pub fn new(master: DeviceMasterKey, exit_delay: u32) -> Self {
        KeyboardDongle {
            master,
            state: ModeState::new(exit_delay),
            keys: BTreeMap::new(),
            queue: VecDeque::new(),
            alarms: Vec::new(),
            now: 0,
            null_cipher: false,
        }
    }

    /// Negative-control hook matching the enclave's: plaintext frames.
    #[doc(hidden)]
    pub fn disable_encryption_for_control(&mut self) {
        self.null_cipher = true;
        self.keys.clear();
    }

    pub fn mode(&self) -> DeviceMode {
        self.state.mode
    }

    pub fn led(&self) -> bool {
        self.state.mode != DeviceMode::Untrusted
    }

    pub fn bound_origin(&self) -> Option<&Origin> {
        self.state.bound.as_ref()
    }

    pub fn alarms(&self) -> &[Alarm] {
        &self.alarms
    }

    pub fn alarms_jsonl(&self) -> String {
        alarms_to_jsonl(&self.alarms)
    }

    pub fn queued(&self) -> usize {
        self.queue.len()
    }

    fn keys_for(&mut self, origin: &Origin) -> &mut OriginKeys {
        let (master, null) = (&self.master, self.null_cipher);
        self.keys.entry(origin.clone()).or_insert_with(|| {
            let key = |dir| {
                let mut k = master.stream_key(&StreamId::new(Channel::KeyboardToEnclave, origin.clone(), dir));
                if null {
                    k.disable_encryption_for_control();
                }
                k
            };
            OriginKeys { send: key(Direction::Forward), recv: key(Direction::Reverse) }
        })
    }

    fn alarm(&mut self, kind: AlarmKind, origin: &Origin, detail: impl Into<String>) {
        self.alarms.push(Alarm { device: "keyboard", tick: self.now, kind, origin: origin.canonical(), detail: detail.into() });
    }

    /// Applies a mode command from an enclave; anything that does not
    /// authenticate is ignored and logged.
    pub fn handle_command(&mut self, env: &Envelope) {
        let origin = env.origin.clone();
        let plain = match open_envelope(&mut self.keys_for(&origin).recv, &origin, env) {
            Ok(p) => p,
            Err(e) => return self.alarm(AlarmKind::of(&e), &origin, e.to_string()),
        };
        let Some(cmd) = ModeCommand::from_bytes(&plain) else {
            return self.alarm(AlarmKind::UnknownCommand, &origin, "not a mode command");
        };
        if self.state.conflicts(&origin) {
            let bound = self.state.bound.as_ref().map(Origin::canonical).unwrap_or_default();
            return self.alarm(AlarmKind::SessionConflict, &origin, format!("bound to {bound}"));
        }
        match cmd {
            ModeCommand::EnterTrusted => self.state.enter(&origin),
            ModeCommand::ExitTrusted => {
                // Keys still queued belong to a field that just lost focus.
                self.queue.clear();
                self.state.exit();
            }
        }
    }

    /// One clock tick with the keys the user pressed during it. Trusted
    /// modes emit exactly one sealed frame; extra keys wait in the queue.
    pub fn tick(&mut self, keys: &[KeyEvent]) -> Vec<KeyboardOutput> {
        self.now += 1;
        match self.state.mode {
            DeviceMode::Untrusted => keys.iter().copied().map(KeyboardOutput::Plain).collect(),
            DeviceMode::Trusted => {
                self.queue.extend(keys);
                let event = self.queue.pop_front().unwrap_or(KeyEvent::Dummy);
                vec![self.seal(event)]
            }
            DeviceMode::ExitPending(_) => {
                let out = self.seal(KeyEvent::Dummy);
                self.state.countdown();
                vec![out]
            }
        }
    }

    fn seal(&mut self, event: KeyEvent) -> KeyboardOutput {
        let origin = self.state.bound.clone().expect("trusted modes are bound");
        let env = seal_envelope(&mut self.keys_for(&origin).send, Channel::KeyboardToEnclave, &origin, &event.to_record())
            .expect("dongle keys match their stream");
        KeyboardOutput::Sealed(env)
    }
}
