//! Interpreter for the JavaScript subset that runs inside the enclave.
//!
//! Functions see their own parameters and locals plus the globals; there
//! are no closures, prototypes or `this`. Every call starts from freshly
//! built globals: top-level statements of each loaded unit run first, then
//! the requested function.

mod interp;
mod lexer;
mod parser;
pub mod regex;
mod value;

use std::collections::BTreeMap;
use std::rc::Rc;

use indexmap::IndexMap;
use serde::Serialize;

use crate::cryptowire::Origin;
use interp::Interp;
pub use parser::FunctionDef;
use parser::Stmt;
pub use value::{Builtin, Native, Value};

pub const DEFAULT_STEP_BUDGET: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScriptError {
    #[error("script parse error at {line}:{col}: {message}")]
    Parse { line: u32, col: u32, message: String },
    #[error("script error: {0}")]
    Runtime(String),
    #[error("step budget exceeded")]
    StepBudgetExceeded,
    #[error("request to {url} leaves session origin {session_origin}")]
    CrossOriginXhr { url: String, session_origin: String },
    #[error("network request dropped")]
    NetworkDropped,
    #[error("value cannot cross the trust boundary: {0}")]
    NonSerializableMessage(String),
    #[error("no function named {0}")]
    UnknownFunction(String),
    #[error("no message listener registered")]
    NoMessageHandler,
}

/// One or more parsed script units sharing a global namespace.
#[derive(Debug, Clone, Default)]
pub struct Program {
    units: Vec<Rc<Vec<Stmt>>>,
    functions: Vec<String>,
}

pub fn parse_script(source: &str) -> Result<Program, ScriptError> {
    let body = parser::parse(source)?;
    let functions = body
        .iter()
        .filter_map(|s| match s {
            Stmt::Function(def) => def.name.clone(),
            _ => None,
        })
        .collect();
    Ok(Program { units: vec![Rc::new(body)], functions })
}

impl Program {
    /// Concatenates programs in load order; later definitions win.
    pub fn merged<'p>(parts: impl IntoIterator<Item = &'p Program>) -> Program {
        let mut out = Program::default();
        for p in parts {
            out.units.extend(p.units.iter().cloned());
            for f in &p.functions {
                if !out.functions.contains(f) {
                    out.functions.push(f.clone());
                }
            }
        }
        out
    }

    /// Names of the top-level functions, in definition order.
    pub fn functions(&self) -> &[String] {
        &self.functions
    }

    pub fn has_function(&self, name: &str) -> bool {
        self.functions.iter().any(|f| f == name)
    }

    fn units(&self) -> impl Iterator<Item = &Rc<Vec<Stmt>>> {
        self.units.iter()
    }
}

/// Plaintext of a secure XHR, before the enclave seals it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct XhrRequest {
    pub method: String,
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct XhrResponse {
    pub status: u16,
    pub body: String,
}

/// Carries a request out of the enclave and returns the decrypted reply.
pub trait XhrTransport {
    fn send(&mut self, req: &XhrRequest) -> Result<XhrResponse, ScriptError>;
}

/// Side effects of a call, in the order they happened.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Effect {
    FormWrite { form: String, input: String, value: String },
    StorageWrite { key: String, value: String },
    StorageRemove { key: String },
    Xhr(XhrRequest),
    Post(serde_json::Value),
}

/// Everything trusted script can reach.
pub struct HostEnvironment<'a> {
    pub origin: Origin,
    /// Form name, then input name, to current value, in document order.
    pub forms: IndexMap<String, IndexMap<String, String>>,
    pub local_storage: BTreeMap<String, String>,
    pub outbox: Vec<serde_json::Value>,
    pub effects: Vec<Effect>,
    pub step_budget: u64,
    pub xhr: Option<&'a mut dyn XhrTransport>,
}

impl<'a> HostEnvironment<'a> {
    pub fn new(origin: Origin) -> Self {
        HostEnvironment {
            origin,
            forms: IndexMap::new(),
            local_storage: BTreeMap::new(),
            outbox: Vec::new(),
            effects: Vec::new(),
            step_budget: DEFAULT_STEP_BUDGET,
            xhr: None,
        }
    }

    pub fn with_transport(mut self, t: &'a mut dyn XhrTransport) -> Self {
        self.xhr = Some(t);
        self
    }

    pub fn storage_dirty(&self) -> bool {
        self.effects.iter().any(|e| matches!(e, Effect::StorageWrite { .. } | Effect::StorageRemove { .. }))
    }
}

pub fn eval_call(prog: &Program, env: &mut HostEnvironment<'_>, function: &str, args: Vec<Value>) -> Result<Value, ScriptError> {
    let mut it = Interp::load(prog, env)?;
    let f = match it.global(function) {
        Some(f @ Value::Function(_)) => f.clone(),
        _ => return Err(ScriptError::UnknownFunction(function.to_string())),
    };
    it.call(&f, args)
}

/// Delivers a message from untrusted code to the registered listener.
pub fn bridge_receive(prog: &Program, env: &mut HostEnvironment<'_>, message: &serde_json::Value) -> Result<Value, ScriptError> {
    let arg = Value::from_json(message).map_err(|_| ScriptError::NonSerializableMessage("unsupported JSON".into()))?;
    let mut it = Interp::load(prog, env)?;
    let handler = it.handler.clone().ok_or(ScriptError::NoMessageHandler)?;
    it.call(&handler, vec![arg])
}

/// Queues a message for untrusted code as a serialized copy.
pub fn bridge_post(env: &mut HostEnvironment<'_>, message: &Value) -> Result<(), ScriptError> {
    let json = message
        .to_json()?
        .ok_or_else(|| ScriptError::NonSerializableMessage("undefined".into()))?;
    env.outbox.push(json.clone());
    env.effects.push(Effect::Post(json));
    Ok(())
}

/// Names visible to trusted code before any script runs.
pub fn builtin_global_names() -> Vec<String> {
    interp::builtin_globals().into_keys().collect()
}
