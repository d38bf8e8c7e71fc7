//! Keyboard and display dongles sitting between the peripherals and the
//! untrusted computer.

mod display;
mod keyboard;

use serde::Serialize;

use crate::cryptowire::{CryptoError, Origin};

pub use display::{DisplayDongle, Frame, Rgb};
pub use keyboard::{KeyboardDongle, KeyboardOutput};

pub const DEFAULT_EXIT_DELAY_TICKS: u32 = 20;
pub const DEFAULT_TICK_MS: u64 = 50;
pub const DEFAULT_WIDTH: u32 = 320;
pub const DEFAULT_HEIGHT: u32 = 240;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "mode", content = "remaining", rename_all = "snake_case")]
pub enum DeviceMode {
    Untrusted,
    Trusted,
    ExitPending(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AlarmKind {
    AuthFailure,
    ReplayDetected,
    OriginMismatch,
    SessionConflict,
    MalformedOverlay,
    UnknownCommand,
}

/// Something hostile reached a device; it was ignored and logged.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Alarm {
    pub device: &'static str,
    pub tick: u64,
    pub kind: AlarmKind,
    pub origin: String,
    pub detail: String,
}

impl AlarmKind {
    fn of(e: &CryptoError) -> AlarmKind {
        match e {
            CryptoError::ReplayDetected { .. } => AlarmKind::ReplayDetected,
            CryptoError::OriginMismatch { .. } => AlarmKind::OriginMismatch,
            _ => AlarmKind::AuthFailure,
        }
    }
}

/// Shared mode-switch bookkeeping for both dongles.
#[derive(Debug, Clone)]
struct ModeState {
    mode: DeviceMode,
    bound: Option<Origin>,
    exit_delay: u32,
}

impl ModeState {
    fn new(exit_delay: u32) -> Self {
        ModeState { mode: DeviceMode::Untrusted, bound: None, exit_delay }
    }

    fn enter(&mut self, origin: &Origin) {
        self.mode = DeviceMode::Trusted;
        self.bound = Some(origin.clone());
    }

    /// Returns true if the device left trusted mode right away.
    fn exit(&mut self) -> bool {
        if self.mode == DeviceMode::Trusted {
            self.mode = DeviceMode::ExitPending(self.exit_delay);
            if self.exit_delay == 0 {
                self.release();
                return true;
            }
        }
        false
    }

    /// Counts down one exit-delay tick; true when the device just released.
    fn countdown(&mut self) -> bool {
        if let DeviceMode::ExitPending(n) = self.mode {
            if n <= 1 {
                self.release();
                return true;
            }
            self.mode = DeviceMode::ExitPending(n - 1);
        }
        false
    }

    fn release(&mut self) {
        self.mode = DeviceMode::Untrusted;
        self.bound = None;
    }

    /// A different origin may not drive a bound device.
    fn conflicts(&self, origin: &Origin) -> bool {
        self.bound.as_ref().is_some_and(|b| b != origin)
    }
}

fn alarms_to_jsonl(alarms: &[Alarm]) -> String {
    alarms.iter().map(|a| serde_json::to_string(a).expect("alarms serialize") + "\n").collect()
}
