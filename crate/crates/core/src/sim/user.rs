//! The person at the keyboard, following a script and watching the LED
//! and the trusted banner before typing anything secret.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use super::scenario::{UserSpec, UserStep};
use crate::enclave::messages::KeyEvent;

/// What the user can see of the trusted path this tick.
#[derive(Debug, Clone, Copy)]
pub struct UserView<'a> {
    pub led: bool,
    pub banner: Option<&'a str>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum UserAction {
    Press(KeyEvent),
    Focus { form: String, input: String },
    Blur,
    Submit { form: String },
    RunScript { function: String, args: Vec<serde_json::Value> },
    Message(serde_json::Value),
    Store { key: String, value: String },
    Restart,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum AbortReason {
    /// The keyboard LED never came on.
    IndicatorOff,
    /// The banner named the wrong origin or field.
    BannerMismatch { seen: String, expected: String },
}

impl AbortReason {
    pub fn signal(&self) -> &'static str {
        match self {
            AbortReason::IndicatorOff => "IndicatorOff",
            AbortReason::BannerMismatch { .. } => "BannerMismatch",
        }
    }
}

#[derive(Debug)]
pub struct UserModel {
    spec: UserSpec,
    rng: ChaCha20Rng,
    step: usize,
    char_idx: usize,
    next_at: u64,
    waiting_since: Option<u64>,
    label: Option<String>,
    aborted: Option<AbortReason>,
    secret_chars_typed: usize,
    keys_pressed: usize,
}

impl UserModel {
    pub fn new(spec: UserSpec, seed: u64) -> Self {
        UserModel {
            spec,
            rng: ChaCha20Rng::seed_from_u64(seed),
            step: 0,
            char_idx: 0,
            next_at: 0,
            waiting_since: None,
            label: None,
            aborted: None,
            secret_chars_typed: 0,
            keys_pressed: 0,
        }
    }

    pub fn finished(&self) -> bool {
        self.aborted.is_some() || self.step >= self.spec.steps.len()
    }

    pub fn aborted(&self) -> Option<&AbortReason> {
        self.aborted.as_ref()
    }

    pub fn secret_chars_typed(&self) -> usize {
        self.secret_chars_typed
    }

    pub fn keys_pressed(&self) -> usize {
        self.keys_pressed
    }

    /// Texts the user considers secret.
    pub fn secrets(&self) -> Vec<String> {
        secrets_of(&self.spec)
    }

    fn expected_banner(&self) -> String {
        match &self.label {
            Some(l) => format!("{}  {}", self.spec.expected_origin, l),
            None => self.spec.expected_origin.clone(),
        }
    }

    fn gap(&mut self) -> u64 {
        let j = if self.spec.jitter > 0 { self.rng.gen_range(0..=self.spec.jitter) } else { 0 };
        self.spec.type_interval.max(1) + j
    }

    fn advance(&mut self, now: u64) {
        self.step += 1;
        self.char_idx = 0;
        self.next_at = now + self.gap();
    }

    /// At most one intention per tick.
    pub fn step(&mut self, now: u64, view: UserView<'_>) -> Option<UserAction> {
        if self.finished() || now < self.next_at {
            return None;
        }
        let step = self.spec.steps[self.step].clone();
        let action = match step {
            UserStep::Wait { ticks } => {
                self.step += 1;
                self.next_at = now + ticks;
                return None;
            }
            UserStep::Type { text, secret } => return self.type_char(now, view, &text, secret),
            UserStep::Focus { form, input } => {
                self.label = Some(input.clone());
                UserAction::Focus { form, input }
            }
            UserStep::Blur => {
                self.label = None;
                UserAction::Blur
            }
            UserStep::Submit { form } => UserAction::Submit { form },
            UserStep::RunScript { function, args } => UserAction::RunScript { function, args },
            UserStep::Message { message } => UserAction::Message(message),
            UserStep::Store { key, value } => UserAction::Store { key, value },
            UserStep::Restart => {
                self.label = None;
                UserAction::Restart
            }
        };
        self.advance(now);
        Some(action)
    }

    fn type_char(&mut self, now: u64, view: UserView<'_>, text: &str, secret: bool) -> Option<UserAction> {
        let Some(c) = text.chars().nth(self.char_idx) else {
            self.advance(now);
            return None;
        };
        if secret && self.spec.guard {
            let expected = self.expected_banner();
            let ok = view.led && view.banner == Some(expected.as_str());
            if !ok {
                let since = *self.waiting_since.get_or_insert(now);
                if now - since >= self.spec.patience {
                    self.aborted = Some(match view.banner {
                        Some(seen) if view.led => AbortReason::BannerMismatch { seen: seen.to_string(), expected },
                        _ => AbortReason::IndicatorOff,
                    });
                }
                return None;
            }
        }
        self.waiting_since = None;
        self.char_idx += 1;
        self.keys_pressed += 1;
        if secret {
            self.secret_chars_typed += 1;
        }
        if self.char_idx >= text.chars().count() {
            self.advance(now);
        } else {
            self.next_at = now + self.gap();
        }
        Some(UserAction::Press(KeyEvent::Char(c)))
    }
}

pub fn secrets_of(spec: &UserSpec) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for s in &spec.steps {
        if let UserStep::Type { text, secret: true } = s {
            if !out.contains(text) {
                out.push(text.clone());
            }
        }
    }
    out
}
