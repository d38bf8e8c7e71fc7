//! Verdicts: the leak scanner, assertion checks and the run report.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use super::broker::{transcript_digest, Link, TranscriptEntry};
use super::scenario::{AssertionSpec, AttackClass, Check, Intent, Scenario, SimConfig};
use super::server::Submission;
use super::world::{Detection, EnclaveSummary, Outcome, ServerSummary};
use crate::page::{encode_form_submission, urlencode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LeakForm {
    Raw,
    Urlencoded,
}

/// Where a secret showed up in adversary-visible bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Leak {
    pub secret: String,
    pub form: LeakForm,
    pub link: Link,
    /// Transcript sequence number, or `None` when the hit only appears in
    /// the concatenation of all messages on the link.
    pub seq: Option<u64>,
    pub tick: Option<u64>,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum LeakScan {
    SecrecyHeld,
    Violation { leaks: Vec<Leak> },
}

/// Secrets shorter than this are skipped: they turn up in random
/// ciphertext often enough to swamp the signal.
pub const MIN_SECRET_LEN: usize = 4;

fn find(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}

/// Looks for every secret, raw and urlencoded, in every transcript entry
/// and in each link's byte stream taken as a whole (a secret typed one
/// key at a time only shows up that way).
pub fn leak_scan(transcript: &[TranscriptEntry], secrets: &[String]) -> LeakScan {
    let mut leaks = Vec::new();
    let mut streams: BTreeMap<Link, Vec<u8>> = BTreeMap::new();
    for e in transcript {
        streams.entry(e.link).or_default().extend_from_slice(&e.bytes);
    }
    for s in secrets.iter().filter(|s| s.len() >= MIN_SECRET_LEN) {
        let raw = s.as_bytes().to_vec();
        let enc = urlencode(s.as_bytes());
        let forms: Vec<(LeakForm, &[u8])> = if enc == raw {
            vec![(LeakForm::Raw, &raw)]
        } else {
            vec![(LeakForm::Raw, &raw), (LeakForm::Urlencoded, &enc)]
        };
        for (form, needle) in forms {
            let mut hit_links = Vec::new();
            for e in transcript {
                if let Some(offset) = find(&e.bytes, needle) {
                    hit_links.push(e.link);
                    leaks.push(Leak { secret: s.clone(), form, link: e.link, seq: Some(e.seq), tick: Some(e.tick), offset });
                }
            }
            for (link, bytes) in &streams {
                if hit_links.contains(link) {
                    continue;
                }
                if let Some(offset) = find(bytes, needle) {
                    leaks.push(Leak { secret: s.clone(), form, link: *link, seq: None, tick: None, offset });
                }
            }
        }
    }
    if leaks.is_empty() {
        LeakScan::SecrecyHeld
    } else {
        LeakScan::Violation { leaks }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    SecrecyHeld,
    IntegrityHeld,
    AttackDetected { attack: Option<AttackClass>, signal: String },
    Violation { leaks: Vec<Leak> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AssertionResult {
    pub id: String,
    pub check: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UserSummary {
    pub finished: bool,
    pub aborted: Option<String>,
    pub keys_pressed: usize,
    pub secret_chars_typed: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Report {
    pub scenario: String,
    pub attack_class: Option<AttackClass>,
    pub control: bool,
    pub seed: u64,
    pub config: SimConfig,
    pub ticks: u64,
    pub timed_out: bool,
    /// All assertions held and no secret leaked.
    pub pass: bool,
    pub verdicts: Vec<Verdict>,
    pub assertions: Vec<AssertionResult>,
    pub transcript_digest: String,
    pub event_counts: BTreeMap<String, u64>,
    pub detections: Vec<Detection>,
    pub submissions: Vec<Submission>,
    pub servers: Vec<ServerSummary>,
    pub enclaves: Vec<EnclaveSummary>,
    pub user: UserSummary,
}

impl Report {
    pub fn has_violation(&self) -> bool {
        self.verdicts.iter().any(|v| matches!(v, Verdict::Violation { .. }))
    }

    pub fn assertions_hold(&self) -> bool {
        self.assertions.iter().all(|a| a.pass)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize") + "\n"
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let class = self.attack_class.map(AttackClass::name).unwrap_or(if self.control { "control" } else { "-" });
        let _ = writeln!(s, "scenario   {} ({class})", self.scenario);
        let _ = writeln!(s, "seed       {}", self.seed);
        let _ = writeln!(s, "ticks      {}{}", self.ticks, if self.timed_out { " (tick limit reached)" } else { "" });
        let _ = writeln!(s, "transcript {}", self.transcript_digest);
        let _ = writeln!(s, "verdicts");
        for v in &self.verdicts {
            let line = match v {
                Verdict::SecrecyHeld => "SecrecyHeld".to_string(),
                Verdict::IntegrityHeld => "IntegrityHeld".to_string(),
                Verdict::AttackDetected { attack, signal } => {
                    format!("AttackDetected({}) by {signal}", attack.map(AttackClass::name).unwrap_or("-"))
                }
                Verdict::Violation { leaks } => {
                    let first = &leaks[0];
                    format!("Violation: {} leak(s), first on {} ({:?})", leaks.len(), first.link, first.form)
                }
            };
            let _ = writeln!(s, "  {line}");
        }
        let _ = writeln!(s, "assertions");
        for a in &self.assertions {
            let _ = writeln!(s, "  [{}] {} {}: {}", if a.pass { "pass" } else { "FAIL" }, a.id, a.check, a.detail);
        }
        if !self.detections.is_empty() {
            let _ = writeln!(s, "detections");
            for d in &self.detections {
                let _ = writeln!(s, "  t={:<5} {:<28} {}", d.tick, d.label(), d.detail);
            }
        }
        let _ = writeln!(s, "events");
        for (k, v) in &self.event_counts {
            let _ = writeln!(s, "  {k:<28} {v}");
        }
        let _ = writeln!(s, "result     {}", if self.pass { "PASS" } else if self.has_violation() { "VIOLATION" } else { "FAIL" });
        s
    }
}

/// Accepted data matches what the user meant to send, and at least one
/// submission arrived.
fn integrity(intent: Option<&Intent>, subs: &[Submission]) -> Result<String, String> {
    let intent = intent.ok_or("scenario declares no user intent")?;
    let fields: Vec<(&str, &str)> = intent.values.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
    let expected_body = String::from_utf8(encode_form_submission(&fields)).expect("urlencoding is ASCII");
    let expected_map: BTreeMap<&str, &str> = fields.iter().copied().collect();
    let mut matched = 0;
    for sub in subs {
        match sub {
            Submission::Form { form, body, .. } if *form == intent.form => {
                if *body != expected_body {
                    return Err(format!("server received {body:?}, user meant {expected_body:?}"));
                }
                matched += 1;
            }
            Submission::Xhr { body, .. } => {
                let got: BTreeMap<String, String> =
                    serde_json::from_str(body).map_err(|_| format!("XHR body is not a flat object: {body:?}"))?;
                let got: BTreeMap<&str, &str> = got.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
                if got != expected_map {
                    return Err(format!("server received {body:?} by XHR"));
                }
                matched += 1;
            }
            _ => {}
        }
    }
    if matched == 0 {
        return Err("server accepted no submission".into());
    }
    Ok(format!("{matched} submission(s) equal to the user's data"))
}

/// One sealed keyboard frame per trusted tick, none otherwise, all the
/// same length.
fn constant_rate(out: &Outcome) -> Result<String, String> {
    let mut per_tick: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for e in out.transcript.iter().filter(|e| e.link == Link::KeyboardToEnclave && !e.adversary) {
        per_tick.entry(e.tick).or_default().push(e.bytes.len());
    }
    let mut lens = std::collections::BTreeSet::new();
    let mut trusted_ticks = 0;
    for (i, trusted) in out.keyboard_trusted.iter().enumerate() {
        let tick = i as u64 + 1;
        let n = per_tick.get(&tick).map_or(0, Vec::len);
        let want = usize::from(*trusted);
        if n != want {
            return Err(format!("tick {tick}: {n} keyboard frames, expected {want}"));
        }
        trusted_ticks += want;
        lens.extend(per_tick.get(&tick).into_iter().flatten().copied());
    }
    match lens.len() {
        0 => Err("keyboard never entered trusted mode".into()),
        1 => Ok(format!("{trusted_ticks} trusted ticks, one {}-byte frame each", lens.first().expect("one length"))),
        _ => Err(format!("frame lengths vary: {lens:?}")),
    }
}

fn check_name(c: &Check) -> String {
    let v = serde_json::to_value(c).expect("checks serialize");
    v["check"].as_str().unwrap_or_default().to_string()
}

fn evaluate(a: &AssertionSpec, scenario: &Scenario, out: &Outcome, scan: &LeakScan) -> AssertionResult {
    let r: Result<String, String> = match &a.check {
        Check::SecrecyHeld => match scan {
            LeakScan::SecrecyHeld => Ok(if out.secret_chars_typed == 0 {
                "no secret was typed".into()
            } else {
                "no secret in adversary-visible bytes".into()
            }),
            LeakScan::Violation { leaks } => Err(format!("{} leak(s)", leaks.len())),
        },
        Check::IntegrityHeld => integrity(scenario.user.intent.as_ref(), &out.submissions),
        Check::AttackDetected { signals } => out
            .detections
            .iter()
            .find(|d| signals.contains(&d.label()))
            .map(|d| format!("{} at tick {}", d.label(), d.tick))
            .ok_or_else(|| {
                let seen: Vec<String> = out.detections.iter().map(Detection::label).collect();
                format!("none of {signals:?} fired; saw {seen:?}")
            }),
        Check::Violation => match scan {
            LeakScan::Violation { leaks } => Ok(format!("scanner fired {} time(s)", leaks.len())),
            LeakScan::SecrecyHeld => Err("expected the scanner to find a leak".into()),
        },
        Check::ConstantRate => constant_rate(out),
        Check::EnclaveState { state } => match out.primary_state {
            Some(s) if s == *state => Ok(format!("{s:?}")),
            other => Err(format!("enclave ended in {other:?}")),
        },
        Check::LinkSilent { link } => {
            let n = out.transcript.iter().filter(|e| e.link == *link).count();
            if n == 0 {
                Ok(format!("nothing on {link}"))
            } else {
                Err(format!("{n} message(s) on {link}"))
            }
        }
    };
    let (pass, detail) = match r {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    AssertionResult { id: a.id.clone(), check: check_name(&a.check), pass, detail }
}

pub fn build_report(scenario: &Scenario, cfg: SimConfig, seed: u64, secrets: &[String], out: &Outcome) -> Report {
    let scan = leak_scan(&out.transcript, secrets);
    let assertions: Vec<AssertionResult> = scenario.assertions.iter().map(|a| evaluate(a, scenario, out, &scan)).collect();

    let mut verdicts = Vec::new();
    match &scan {
        LeakScan::SecrecyHeld => verdicts.push(Verdict::SecrecyHeld),
        LeakScan::Violation { leaks } => verdicts.push(Verdict::Violation { leaks: leaks.clone() }),
    }
    if integrity(scenario.user.intent.as_ref(), &out.submissions).is_ok() {
        verdicts.push(Verdict::IntegrityHeld);
    }
    for a in &scenario.assertions {
        if let Check::AttackDetected { signals } = &a.check {
            if let Some(d) = out.detections.iter().find(|d| signals.contains(&d.label())) {
                verdicts.push(Verdict::AttackDetected { attack: scenario.attack_class, signal: d.label() });
            }
        }
    }

    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for e in &out.transcript {
        *counts.entry(format!("link.{}", e.link)).or_default() += 1;
        if let Some(k) = e.ecall {
            let k = serde_json::to_value(k).expect("kinds serialize");
            *counts.entry(format!("ecall.{}", k.as_str().unwrap_or_default())).or_default() += 1;
        }
        if e.adversary {
            *counts.entry("adversary_messages".into()).or_default() += 1;
        }
    }
    counts.insert("transcript_entries".into(), out.transcript.len() as u64);
    counts.insert("transcript_bytes".into(), out.transcript.iter().map(|e| e.bytes.len() as u64).sum());
    counts.insert("ticks".into(), out.ticks);
    counts.insert("frames".into(), out.frames);
    counts.insert("keys_pressed".into(), out.keys_pressed as u64);
    counts.insert("detections".into(), out.detections.len() as u64);
    counts.insert("script_errors".into(), out.script_errors);

    let has_violation = matches!(scan, LeakScan::Violation { .. });
    let pass = !has_violation && assertions.iter().all(|a| a.pass);
    Report {
        scenario: scenario.name.clone(),
        attack_class: scenario.attack_class,
        control: scenario.control,
        seed,
        config: cfg,
        ticks: out.ticks,
        timed_out: out.timed_out,
        pass,
        verdicts,
        assertions,
        transcript_digest: transcript_digest(&out.transcript),
        event_counts: counts,
        detections: out.detections.clone(),
        submissions: out.submissions.clone(),
        servers: out.servers.clone(),
        enclaves: out.enclaves.clone(),
        user: UserSummary {
            finished: out.user_finished,
            aborted: out.user_aborted.as_ref().map(|r| r.signal().to_string()),
            keys_pressed: out.keys_pressed,
            secret_chars_typed: out.secret_chars_typed,
        },
    }
}
