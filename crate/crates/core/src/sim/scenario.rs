//! Scenario files and the fixtures they reference.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::broker::{AdversaryAction, Link};
use super::SimError;
use crate::enclave::{EnclaveState, FieldRef};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackClass {
    EnclaveOmission,
    EnclaveMisuse,
    PageTampering,
    Redirection,
    StorageTampering,
    ModeSwitching,
    Replay,
    InputManipulation,
    Timing,
}

impl AttackClass {
    pub const ALL: [AttackClass; 9] = [
        AttackClass::EnclaveOmission,
        AttackClass::EnclaveMisuse,
        AttackClass::PageTampering,
        AttackClass::Redirection,
        AttackClass::StorageTampering,
        AttackClass::ModeSwitching,
        AttackClass::Replay,
        AttackClass::InputManipulation,
        AttackClass::Timing,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackClass::EnclaveOmission => "enclave-omission",
            AttackClass::EnclaveMisuse => "enclave-misuse",
            AttackClass::PageTampering => "page-tampering",
            AttackClass::Redirection => "redirection",
            AttackClass::StorageTampering => "storage-tampering",
            AttackClass::ModeSwitching => "mode-switching",
            AttackClass::Replay => "replay",
            AttackClass::InputManipulation => "input-manipulation",
            AttackClass::Timing => "timing",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    #[serde(default)]
    pub attack_class: Option<AttackClass>,
    /// Control runs exist to show the leak scanner fires.
    #[serde(default)]
    pub control: bool,
    /// The origin the user is dealing with.
    pub origin: OriginFixture,
    /// Further origins with a pinned key and a server (attacker-run sites).
    #[serde(default)]
    pub other_origins: Vec<OriginFixture>,
    pub user: UserSpec,
    #[serde(default)]
    pub adversary: Vec<AdversaryAction>,
    #[serde(default)]
    pub concurrent_session: Option<ConcurrentSession>,
    #[serde(default)]
    pub config: ConfigOverrides,
    pub assertions: Vec<AssertionSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OriginFixture {
    /// Keypair file, relative to the fixture root.
    pub key: String,
    pub page: String,
    pub page_url: String,
    /// Script `src` attribute to fixture path.
    #[serde(default)]
    pub scripts: BTreeMap<String, String>,
    /// Revision the server starts with.
    #[serde(default)]
    pub revision: u64,
}

/// A second enclave session started by the attacker while the first runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConcurrentSession {
    pub origin: String,
    pub at: u64,
    pub focus: FieldRef,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSpec {
    /// Origin text the user expects in the trusted banner.
    pub expected_origin: String,
    pub steps: Vec<UserStep>,
    /// Ticks the user waits on a failing indicator check before giving up.
    #[serde(default = "default_patience")]
    pub patience: u64,
    /// Ticks between key presses.
    #[serde(default = "default_type_interval")]
    pub type_interval: u64,
    /// Up to this many extra ticks are added to each gap, drawn from the seed.
    #[serde(default)]
    pub jitter: u64,
    /// Whether the user checks the LED and banner before typing secrets.
    #[serde(default = "yes")]
    pub guard: bool,
    #[serde(default)]
    pub intent: Option<Intent>,
}

fn default_patience() -> u64 {
    40
}

fn default_type_interval() -> u64 {
    2
}

fn yes() -> bool {
    true
}

/// What the server should end up with if nothing goes wrong.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intent {
    pub form: String,
    pub values: IndexMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "do", rename_all = "snake_case", deny_unknown_fields)]
pub enum UserStep {
    Focus {
        form: String,
        input: String,
    },
    Type {
        text: String,
        #[serde(default)]
        secret: bool,
    },
    Blur,
    Submit {
        form: String,
    },
    RunScript {
        function: String,
        #[serde(default)]
        args: Vec<serde_json::Value>,
    },
    Message {
        message: serde_json::Value,
    },
    Store {
        key: String,
        value: String,
    },
    /// Closes the enclave and opens a fresh session for the same page.
    Restart,
    Wait {
        ticks: u64,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    pub tick_ms: Option<u64>,
    pub exit_delay_ticks: Option<u32>,
    /// `WIDTHxHEIGHT`
    pub resolution: Option<String>,
    pub tick_limit: Option<u64>,
    /// Negative control: the enclave sends plaintext.
    pub disable_encryption: Option<bool>,
}

impl ConfigOverrides {
    /// Fields set in `other` win.
    pub fn merged(&self, other: &ConfigOverrides) -> ConfigOverrides {
        ConfigOverrides {
            tick_ms: other.tick_ms.or(self.tick_ms),
            exit_delay_ticks: other.exit_delay_ticks.or(self.exit_delay_ticks),
            resolution: other.resolution.clone().or_else(|| self.resolution.clone()),
            tick_limit: other.tick_limit.or(self.tick_limit),
            disable_encryption: other.disable_encryption.or(self.disable_encryption),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SimConfig {
    pub tick_ms: u64,
    pub exit_delay_ticks: u32,
    pub width: u32,
    pub height: u32,
    pub tick_limit: u64,
    pub disable_encryption: bool,
}

pub fn parse_resolution(s: &str) -> Result<(u32, u32), SimError> {
    let bad = || SimError::Config(format!("resolution must look like 320x240, got {s:?}"));
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let w: u32 = w.trim().parse().map_err(|_| bad())?;
    let h: u32 = h.trim().parse().map_err(|_| bad())?;
    if !(64..=4096).contains(&w) || !(64..=4096).contains(&h) {
        return Err(SimError::Config(format!("resolution {w}x{h} is outside 64..=4096")));
    }
    Ok((w, h))
}

impl SimConfig {
    pub fn resolve(o: &ConfigOverrides) -> Result<SimConfig, SimError> {
        let (width, height) = match &o.resolution {
            Some(r) => parse_resolution(r)?,
            None => (crate::devices::DEFAULT_WIDTH, crate::devices::DEFAULT_HEIGHT),
        };
        let tick_ms = o.tick_ms.unwrap_or(crate::devices::DEFAULT_TICK_MS);
        if tick_ms == 0 {
            return Err(SimError::Config("tick period must be positive".into()));
        }
        Ok(SimConfig {
            tick_ms,
            exit_delay_ticks: o.exit_delay_ticks.unwrap_or(crate::devices::DEFAULT_EXIT_DELAY_TICKS),
            width,
            height,
            tick_limit: o.tick_limit.unwrap_or(100_000),
            disable_encryption: o.disable_encryption.unwrap_or(false),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssertionSpec {
    pub id: String,
    #[serde(flatten)]
    pub check: Check,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case")]
pub enum Check {
    SecrecyHeld,
    IntegrityHeld,
    /// Passes if any detection matches one of `signals` (`by:Signal`).
    AttackDetected { signals: Vec<String> },
    /// Control scenarios: the leak scanner must fire.
    Violation,
    /// Keyboard frames are one per tick with a single length while trusted.
    ConstantRate,
    EnclaveState { state: EnclaveState },
    LinkSilent { link: Link },
}

/// Where scenario, page, key and script files come from.
pub trait FixtureSource {
    fn read(&self, path: &str) -> Result<String, SimError>;
}

/// Files under a directory on disk.
#[derive(Debug, Clone)]
pub struct DirFixtures(pub PathBuf);

impl DirFixtures {
    /// `$FIDELIUS_SIM_FIXTURES` if set, otherwise the parent of the
    /// directory holding the scenario file.
    pub fn for_scenario(scenario: &Path) -> DirFixtures {
        if let Some(root) = std::env::var_os("FIDELIUS_SIM_FIXTURES") {
            return DirFixtures(root.into());
        }
        let dir = scenario.parent().unwrap_or(Path::new("."));
        DirFixtures(dir.parent().unwrap_or(Path::new(".")).to_path_buf())
    }
}

impl FixtureSource for DirFixtures {
    fn read(&self, path: &str) -> Result<String, SimError> {
        let full = self.0.join(path);
        std::fs::read_to_string(&full).map_err(|e| SimError::FixtureMissing(format!("{}: {e}", full.display())))
    }
}

macro_rules! embedded {
    ($($path:literal),* $(,)?) => {
        &[$(($path, include_str!(concat!("../../fixtures/", $path)))),*]
    };
}

static EMBEDDED: &[(&str, &str)] = embedded![
    "keys/pay.site.com.json",
    "keys/mal.example.json",
    "keys/impostor.json",
    "pages/payment.html",
    "pages/payment.unsigned.html",
    "pages/mal.html",
    "scripts/validator.js",
    "scenarios/honest.json",
    "scenarios/enclave-omission.json",
    "scenarios/enclave-misuse.json",
    "scenarios/page-tampering.json",
    "scenarios/redirection.json",
    "scenarios/storage-tampering.json",
    "scenarios/mode-switching.json",
    "scenarios/replay.json",
    "scenarios/input-manipulation.json",
    "scenarios/timing.json",
    "scenarios/multi-enclave.json",
    "scenarios/negative-control.json",
    "scenarios/positive-control.json",
];

/// The fixture set compiled into the library.
#[derive(Debug, Clone, Copy, Default)]
pub struct EmbeddedFixtures;

impl FixtureSource for EmbeddedFixtures {
    fn read(&self, path: &str) -> Result<String, SimError> {
        EMBEDDED
            .iter()
            .find(|(p, _)| *p == path)
            .map(|(_, s)| s.to_string())
            .ok_or_else(|| SimError::FixtureMissing(path.to_string()))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CatalogEntry {
    pub name: String,
    pub path: String,
    pub attack_class: Option<AttackClass>,
    pub description: String,
}

/// Built-in scenarios in a stable order: the nine attack classes, then the
/// honest run and the controls.
pub fn catalog() -> Vec<CatalogEntry> {
    let mut out: Vec<CatalogEntry> = EMBEDDED
        .iter()
        .filter(|(p, _)| p.starts_with("scenarios/"))
        .map(|(p, src)| {
            let s = parse_scenario(src).expect("built-in scenarios parse");
            CatalogEntry { name: s.name, path: p.to_string(), attack_class: s.attack_class, description: s.description }
        })
        .collect();
    out.sort_by_key(|e| (e.attack_class.is_none(), e.attack_class, builtin_rank(&e.name)));
    out
}

fn builtin_rank(name: &str) -> usize {
    ["honest", "multi-enclave", "negative-control", "positive-control"].iter().position(|n| *n == name).unwrap_or(99)
}

pub fn parse_scenario(src: &str) -> Result<Scenario, SimError> {
    serde_json::from_str(src).map_err(|e| SimError::ScenarioParse(e.to_string()))
}
