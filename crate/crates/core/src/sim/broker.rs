//! The untrusted OS and browser: every message between components is
//! routed here, logged to the transcript and exposed to the adversary.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::enclave::EcallKind;

/// A named wire between two components, as the OS sees it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    /// Browser-issued ECALL payloads.
    Ecall,
    /// Sealed key frames, handed to the enclave as Keystroke ECALLs.
    KeyboardToEnclave,
    /// Plain keystrokes delivered to the OS in untrusted mode.
    KeyboardToOs,
    EnclaveToKeyboard,
    EnclaveToDisplay,
    EnclaveToOrigin,
    OriginToEnclave,
    /// Quotes and server hellos.
    Attestation,
    /// Sealed records written to and read from disk.
    SealedStorage,
    /// postMessage copies and ECALL return values.
    EnclaveToPage,
}

impl Link {
    pub const ALL: [Link; 10] = [
        Link::Ecall,
        Link::KeyboardToEnclave,
        Link::KeyboardToOs,
        Link::EnclaveToKeyboard,
        Link::EnclaveToDisplay,
        Link::EnclaveToOrigin,
        Link::OriginToEnclave,
        Link::Attestation,
        Link::SealedStorage,
        Link::EnclaveToPage,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Link::Ecall => "ecall",
            Link::KeyboardToEnclave => "keyboard_to_enclave",
            Link::KeyboardToOs => "keyboard_to_os",
            Link::EnclaveToKeyboard => "enclave_to_keyboard",
            Link::EnclaveToDisplay => "enclave_to_display",
            Link::EnclaveToOrigin => "enclave_to_origin",
            Link::OriginToEnclave => "origin_to_enclave",
            Link::Attestation => "attestation",
            Link::SealedStorage => "sealed_storage",
            Link::EnclaveToPage => "enclave_to_page",
        }
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Selects messages by link, optionally by ECALL kind and by ordinal
/// (0-based, counted among messages the selector would otherwise match).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Match {
    pub link: Link,
    #[serde(default)]
    pub ecall: Option<EcallKind>,
    #[serde(default)]
    pub nth: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum ByteEdit {
    Xor { offset: usize, xor: u8 },
    /// Replaces the first occurrence of `find`.
    Replace { find: String, replace: String },
}

impl ByteEdit {
    fn apply(&self, bytes: &mut Vec<u8>) {
        match self {
            ByteEdit::Xor { offset, xor } => {
                if let Some(b) = bytes.get_mut(*offset) {
                    *b ^= xor;
                }
            }
            ByteEdit::Replace { find, replace } => {
                let f = find.as_bytes();
                if f.is_empty() {
                    return;
                }
                if let Some(at) = bytes.windows(f.len()).position(|w| w == f) {
                    bytes.splice(at..at + f.len(), replace.bytes());
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum AdversaryAction {
    Drop {
        on: Match,
    },
    Modify {
        on: Match,
        edits: Vec<ByteEdit>,
    },
    /// Delivers the message, then a copy `delay` ticks later.
    Replay {
        on: Match,
        delay: u64,
    },
    /// Holds `first` back until `second` has been delivered.
    Reorder {
        first: Match,
        second: Match,
    },
    InjectEcall {
        at: u64,
        kind: EcallKind,
        #[serde(default)]
        payload: String,
    },
    /// No enclave is started; the untrusted page draws a look-alike form
    /// and, if given, a fake banner.
    FakeEnclave {
        #[serde(default)]
        banner: Option<String>,
    },
    SkipEcall {
        kind: EcallKind,
    },
    /// The browser moves trusted focus on its own at tick `at`.
    SwitchFocus {
        at: u64,
        form: String,
        input: String,
    },
    /// The untrusted page swaps the captions of inputs `a` and `b`, so the
    /// user's click lands on the other field.
    SwapUntrustedLabels {
        form: String,
        a: String,
        b: String,
    },
    /// The browser loads an older sealed record at enclave start.
    RollbackStorage {
        to_revision: u64,
    },
    /// The browser loads another origin's page into the user's enclave.
    NavigateMalicious {
        origin: String,
    },
    /// Every `period` ticks from `start`, replays the latest captured mode
    /// commands to both devices.
    RapidModeSwitch {
        period: u64,
        #[serde(default)]
        start: u64,
    },
}

/// Where a routed message is headed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dest {
    /// An ECALL into the enclave in this slot.
    Enclave(usize),
    Keyboard,
    Display,
    /// The origin server, on the connection of an enclave slot.
    Server { origin: usize, conn: usize },
    Storage,
    Page,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub link: Link,
    pub ecall: Option<EcallKind>,
    pub bytes: Vec<u8>,
    pub dest: Dest,
}

impl Message {
    pub fn new(link: Link, dest: Dest, bytes: Vec<u8>) -> Self {
        Message { link, ecall: None, bytes, dest }
    }

    pub fn ecall(link: Link, slot: usize, kind: EcallKind, bytes: Vec<u8>) -> Self {
        Message { link, ecall: Some(kind), bytes, dest: Dest::Enclave(slot) }
    }
}

/// One message as the untrusted side saw it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TranscriptEntry {
    pub tick: u64,
    pub seq: u64,
    pub link: Link,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ecall: Option<EcallKind>,
    /// Produced or altered by the adversary rather than an honest party.
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub adversary: bool,
    #[serde(with = "hex_bytes")]
    pub bytes: Vec<u8>,
}

mod hex_bytes {
    use serde::Serializer;

    pub fn serialize<S: Serializer>(b: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(b))
    }
}

pub fn transcript_jsonl(entries: &[TranscriptEntry]) -> String {
    entries.iter().map(|e| serde_json::to_string(e).expect("entries serialize") + "\n").collect()
}

pub fn transcript_digest(entries: &[TranscriptEntry]) -> String {
    hex::encode(Sha256::digest(transcript_jsonl(entries).as_bytes()))
}

#[derive(Debug, Clone)]
struct Pending {
    msg: Message,
    /// Injected copies are logged but never matched again.
    injected: bool,
}

/// Message queue, transcript and the routing half of the adversary.
#[derive(Debug, Default)]
pub struct Broker {
    queue: BTreeMap<(u64, u64), Pending>,
    next_seq: u64,
    transcript: Vec<TranscriptEntry>,
    rules: Vec<AdversaryAction>,
    seen: BTreeMap<(Link, Option<EcallKind>), usize>,
    held: VecDeque<(usize, Message)>,
    /// Latest honest mode commands, kept for the rapid-switch attack.
    pub(crate) last_keyboard_cmd: Option<Message>,
    pub(crate) last_display_cmd: Option<Message>,
}

impl Broker {
    /// Keeps the message-level actions (drop, modify, replay, reorder).
    pub fn new(actions: &[AdversaryAction]) -> Self {
        let rules = actions
            .iter()
            .filter(|a| {
                matches!(
                    a,
                    AdversaryAction::Drop { .. }
                        | AdversaryAction::Modify { .. }
                        | AdversaryAction::Replay { .. }
                        | AdversaryAction::Reorder { .. }
                )
            })
            .cloned()
            .collect();
        Broker { rules, ..Default::default() }
    }

    pub fn transcript(&self) -> &[TranscriptEntry] {
        &self.transcript
    }

    pub fn into_transcript(self) -> Vec<TranscriptEntry> {
        self.transcript
    }

    pub fn is_idle(&self) -> bool {
        self.queue.is_empty()
    }

    fn seq(&mut self) -> u64 {
        self.next_seq += 1;
        self.next_seq
    }

    /// Queues an honest message for delivery at tick `due`.
    pub fn post(&mut self, due: u64, msg: Message) {
        let seq = self.seq();
        self.queue.insert((due, seq), Pending { msg, injected: false });
    }

    /// Queues an adversary-made message.
    pub fn inject(&mut self, due: u64, msg: Message) {
        let seq = self.seq();
        self.queue.insert((due, seq), Pending { msg, injected: true });
    }

    /// Next message due at or before `now` after interception, in
    /// (time, sequence) order. Several messages may come out of one.
    pub fn pop_due(&mut self, now: u64) -> Option<Vec<Message>> {
        let (&key, _) = self.queue.iter().next().filter(|((t, _), _)| *t <= now)?;
        let p = self.queue.remove(&key).expect("key was just seen");
        if p.injected {
            self.log(now, &p.msg, true);
            return Some(vec![p.msg]);
        }
        Some(self.intercept(now, p.msg))
    }

    /// Logs an honest message and runs the adversary's rules over it.
    /// Returns what actually gets delivered right now.
    pub fn intercept(&mut self, now: u64, msg: Message) -> Vec<Message> {
        self.log(now, &msg, false);
        let mut bump = |key| {
            let n = self.seen.entry(key).or_insert(0);
            *n += 1;
            *n - 1
        };
        let by_link = bump((msg.link, None));
        let by_kind = msg.ecall.map(|k| bump((msg.link, Some(k))));
        let hits = |m: &Match| -> bool {
            if m.link != msg.link || (m.ecall.is_some() && m.ecall != msg.ecall) {
                return false;
            }
            let ord = if m.ecall.is_some() { by_kind.unwrap_or(0) } else { by_link };
            m.nth.is_none_or(|n| n == ord)
        };

        match msg.dest {
            Dest::Keyboard => self.last_keyboard_cmd = Some(msg.clone()),
            Dest::Display if is_mode_command_sized(&msg.bytes) => self.last_display_cmd = Some(msg.clone()),
            _ => {}
        }

        let mut out = msg.clone();
        let mut dropped = false;
        let mut release = Vec::new();
        for (i, rule) in self.rules.clone().iter().enumerate() {
            match rule {
                AdversaryAction::Drop { on } if hits(on) => dropped = true,
                AdversaryAction::Modify { on, edits } if hits(on) => {
                    for e in edits {
                        e.apply(&mut out.bytes);
                    }
                }
                AdversaryAction::Replay { on, delay } if hits(on) => {
                    let seq = self.seq();
                    self.queue.insert((now + delay, seq), Pending { msg: msg.clone(), injected: true });
                }
                AdversaryAction::Reorder { first, second } => {
                    if hits(first) {
                        self.held.push_back((i, msg.clone()));
                        dropped = true;
                    } else if hits(second) {
                        while let Some(pos) = self.held.iter().position(|(r, _)| *r == i) {
                            release.push(self.held.remove(pos).expect("position is valid").1);
                        }
                    }
                }
                _ => {}
            }
        }
        let mut delivered = Vec::new();
        if !dropped {
            if out.bytes != msg.bytes {
                self.log(now, &out, true);
            }
            delivered.push(out);
        }
        for m in release {
            self.log(now, &m, true);
            delivered.push(m);
        }
        delivered
    }

    fn log(&mut self, now: u64, msg: &Message, adversary: bool) {
        let seq = self.transcript.len() as u64;
        self.transcript.push(TranscriptEntry {
            tick: now,
            seq,
            link: msg.link,
            ecall: msg.ecall,
            adversary,
            bytes: msg.bytes.clone(),
        });
    }
}

/// Mode commands are short; overlays are kilobytes. The OS can tell them
/// apart by size alone.
fn is_mode_command_sized(bytes: &[u8]) -> bool {
    bytes.len() < 256
}
