//! Deterministic simulation of a user, an untrusted OS under attacker
//! control, the enclave, both dongles and the origin servers.
//!
//! A run is a pure function of the scenario, the fixtures and the seed.

pub mod broker;
pub mod report;
pub mod scenario;
pub mod server;
pub mod user;
pub mod world;

use std::path::Path;

pub use broker::{transcript_digest, transcript_jsonl, AdversaryAction, ByteEdit, Link, Match, TranscriptEntry};
pub use report::{build_report, leak_scan, Leak, LeakForm, LeakScan, Report, Verdict};
pub use scenario::{
    catalog, parse_resolution, parse_scenario, AttackClass, CatalogEntry, Check, ConfigOverrides, DirFixtures,
    EmbeddedFixtures, FixtureSource, Scenario, SimConfig,
};
pub use world::{Detection, Outcome, World};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("scenario does not parse: {0}")]
    ScenarioParse(String),
    #[error("fixture missing: {0}")]
    FixtureMissing(String),
    #[error("bad fixture: {0}")]
    Fixture(String),
    #[error("bad configuration: {0}")]
    Config(String),
}

/// A finished run: the report and the full transcript behind it.
#[derive(Debug)]
pub struct RunOutput {
    pub report: Report,
    pub transcript: Vec<TranscriptEntry>,
    pub last_frame: crate::devices::Frame,
}

pub fn run_scenario(
    scenario: &Scenario,
    fixtures: &dyn FixtureSource,
    seed: u64,
    overrides: &ConfigOverrides,
) -> Result<RunOutput, SimError> {
    let cfg = SimConfig::resolve(&scenario.config.merged(overrides))?;
    let secrets = user::secrets_of(&scenario.user);
    let world = World::new(scenario, fixtures, cfg.clone(), seed)?;
    let mut out = world.run();
    let report = build_report(scenario, cfg, seed, &secrets, &out);
    let frame = std::mem::replace(&mut out.last_frame, crate::devices::Frame::filled(1, 1, [0, 0, 0]));
    Ok(RunOutput { report, transcript: out.transcript, last_frame: frame })
}

/// Reads a scenario file; fixtures come from `$FIDELIUS_SIM_FIXTURES` or
/// the directory above the scenario's.
pub fn run_scenario_file(path: &Path, seed: u64, overrides: &ConfigOverrides) -> Result<RunOutput, SimError> {
    let src = std::fs::read_to_string(path).map_err(|e| SimError::FixtureMissing(format!("{}: {e}", path.display())))?;
    let scenario = parse_scenario(&src)?;
    run_scenario(&scenario, &DirFixtures::for_scenario(path), seed, overrides)
}

/// Runs a built-in scenario by name against the embedded fixtures.
pub fn run_builtin(name: &str, seed: u64, overrides: &ConfigOverrides) -> Result<RunOutput, SimError> {
    let entry = catalog().into_iter().find(|e| e.name == name).ok_or_else(|| SimError::FixtureMissing(name.to_string()))?;
    let scenario = parse_scenario(&EmbeddedFixtures.read(&entry.path)?)?;
    run_scenario(&scenario, &EmbeddedFixtures, seed, overrides)
}
