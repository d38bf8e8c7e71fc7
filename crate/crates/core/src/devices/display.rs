use std::collections::BTreeMap;
use std::io::Write;

use super::{alarms_to_jsonl, Alarm, AlarmKind, DeviceMode, ModeState};
use crate::cryptowire::{open_envelope, Channel, DeviceMasterKey, Direction, Envelope, KeyMaterial, Origin, StreamId};
use crate::enclave::messages::ModeCommand;
use crate::enclave::overlay::{banner_rect, Overlay, BANNER_HEIGHT};

pub type Rgb = [u8; 3];

const BLACK: Rgb = [0, 0, 0];
const WHITE: Rgb = [255, 255, 255];

/// An RGB frame plus the banner text a viewer would read off it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<Rgb>,
    pub banner: Option<String>,
}

impl Frame {
    pub fn filled(width: u32, height: u32, color: Rgb) -> Self {
        Frame { width, height, pixels: vec![color; (width * height) as usize], banner: None }
    }

    pub fn get(&self, x: u32, y: u32) -> Rgb {
        self.pixels[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, c: Rgb) {
        self.pixels[(y * self.width + x) as usize] = c;
    }

    pub fn write_ppm(&self, mut w: impl Write) -> std::io::Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        for p in &self.pixels {
            w.write_all(p)?;
        }
        Ok(())
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_ppm(&mut out).expect("writing to a Vec cannot fail");
        out
    }
}

#[derive(Debug)]
pub struct DisplayDongle {
    master: DeviceMasterKey,
    width: u32,
    height: u32,
    state: ModeState,
    keys: BTreeMap<Origin, KeyMaterial>,
    framebuffer: Frame,
    overlay: Option<Overlay>,
    alarms: Vec<Alarm>,
    now: u64,
    null_cipher: bool,
}

impl DisplayDongle {
    pub fn new(master: DeviceMasterKey, width: u32, height: u32, exit_delay: u32) -> Self {
        DisplayDongle {
            master,
            width,
            height,
            state: ModeState::new(exit_delay),
            keys: BTreeMap::new(),
            framebuffer: Frame::filled(width, height, [40, 40, 48]),
            overlay: None,
            alarms: Vec::new(),
            now: 0,
            null_cipher: false,
        }
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

    pub fn overlay(&self) -> Option<&Overlay> {
        self.overlay.as_ref()
    }

    pub fn alarms(&self) -> &[Alarm] {
        &self.alarms
    }

    pub fn alarms_jsonl(&self) -> String {
        alarms_to_jsonl(&self.alarms)
    }

    /// Negative-control hook matching the enclave's: plaintext overlays.
    #[doc(hidden)]
    pub fn disable_encryption_for_control(&mut self) {
        self.null_cipher = true;
        self.keys.clear();
    }

    pub fn strip_height(&self) -> u32 {
        BANNER_HEIGHT
    }

    fn alarm(&mut self, kind: AlarmKind, origin: &Origin, detail: impl Into<String>) {
        self.alarms.push(Alarm { device: "display", tick: self.now, kind, origin: origin.canonical(), detail: detail.into() });
    }

    /// Replaces the untrusted picture coming from the GPU.
    pub fn ingest(&mut self, frame: Frame) {
        if frame.width == self.width && frame.height == self.height {
            self.framebuffer = frame;
        }
    }

    pub fn handle_envelope(&mut self, env: &Envelope) {
        let origin = env.origin.clone();
        let (master, null) = (&self.master, self.null_cipher);
        let key = self.keys.entry(origin.clone()).or_insert_with(|| {
            let mut k = master.stream_key(&StreamId::new(Channel::EnclaveToDisplay, origin.clone(), Direction::Forward));
            if null {
                k.disable_encryption_for_control();
            }
            k
        });
        let plain = match open_envelope(key, &origin, env) {
            Ok(p) => p,
            Err(e) => return self.alarm(AlarmKind::of(&e), &origin, e.to_string()),
        };
        if self.state.conflicts(&origin) {
            let bound = self.state.bound.as_ref().map(Origin::canonical).unwrap_or_default();
            return self.alarm(AlarmKind::SessionConflict, &origin, format!("bound to {bound}"));
        }
        if let Some(cmd) = ModeCommand::from_bytes(&plain) {
            match cmd {
                ModeCommand::EnterTrusted => self.state.enter(&origin),
                ModeCommand::ExitTrusted => {
                    if self.state.exit() {
                        self.overlay = None;
                    }
                }
            }
            return;
        }
        if !Overlay::is_overlay_bytes(&plain) {
            return self.alarm(AlarmKind::UnknownCommand, &origin, "neither a command nor an overlay");
        }
        if self.state.mode == DeviceMode::Untrusted {
            return;
        }
        match Overlay::from_bytes(&plain) {
            Ok(ov) if ov.width == self.width && ov.height == self.height => self.overlay = Some(ov),
            Ok(ov) => {
                self.overlay = None;
                let detail = format!("overlay is {}x{}, display is {}x{}", ov.width, ov.height, self.width, self.height);
                self.alarm(AlarmKind::MalformedOverlay, &origin, detail);
            }
            Err(e) => {
                self.overlay = None;
                self.alarm(AlarmKind::MalformedOverlay, &origin, e.to_string());
            }
        }
    }

    /// Produces the frame the monitor shows for this tick.
    pub fn tick(&mut self) -> Frame {
        self.now += 1;
        let out = self.composite();
        if self.state.countdown() {
            self.overlay = None;
        }
        out
    }

    pub fn composite(&self) -> Frame {
        let mut out = self.framebuffer.clone();
        if self.state.mode == DeviceMode::Untrusted {
            return out;
        }
        let strip = banner_rect(self.width, self.height);
        for y in strip.y..self.height {
            for x in 0..self.width {
                out.set(x, y, WHITE);
            }
        }
        out.banner = None;
        if let Some(ov) = &self.overlay {
            for y in 0..self.height {
                for x in 0..self.width {
                    if let Some(ink) = ov.pixel(x, y) {
                        out.set(x, y, if ink { BLACK } else { WHITE });
                    }
                }
            }
            out.banner = Some(ov.banner_text());
        }
        out
    }
}
