use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use indexmap::IndexMap;

use super::parser::FunctionDef;
use super::regex::Regex;
use super::ScriptError;

pub type ObjectRef = Rc<RefCell<IndexMap<String, Value>>>;

#[derive(Clone)]
pub enum Value {
    Undefined,
    Null,
    Bool(bool),
    Number(f64),
    String(Rc<str>),
    Object(ObjectRef),
    Function(Rc<FunctionDef>),
    Builtin(Builtin),
    Native(Native),
    Regex(Rc<Regex>),
}

/// Free functions provided by the host.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Builtin {
    ToDict,
    PostMessage,
    AddEventListener,
    SecureXmlHttpRequest,
    ParseInt,
    ParseFloat,
    IsNaN,
    String,
}

/// Host objects whose properties are resolved against the environment.
#[derive(Debug, Clone, PartialEq)]
pub enum Native {
    Forms,
    Form(Rc<str>),
    LocalStorage,
    Json,
    Xhr(usize),
}

impl Value {
    pub fn str(s: impl Into<Rc<str>>) -> Value {
        Value::String(s.into())
    }

    pub fn object(entries: impl IntoIterator<Item = (String, Value)>) -> Value {
        Value::Object(Rc::new(RefCell::new(entries.into_iter().collect())))
    }

    pub fn truthy(&self) -> bool {
        match self {
            Value::Undefined | Value::Null => false,
            Value::Bool(b) => *b,
            Value::Number(n) => *n != 0.0 && !n.is_nan(),
            Value::String(s) => !s.is_empty(),
            _ => true,
        }
    }

    pub fn type_of(&self) -> &'static str {
        match self {
            Value::Undefined => "undefined",
            Value::Null | Value::Object(_) | Value::Native(_) | Value::Regex(_) => "object",
            Value::Bool(_) => "boolean",
            Value::Number(_) => "number",
            Value::String(_) => "string",
            Value::Function(_) | Value::Builtin(_) => "function",
        }
    }

    pub fn to_number(&self) -> f64 {
        match self {
            Value::Undefined => f64::NAN,
            Value::Null => 0.0,
            Value::Bool(b) => f64::from(u8::from(*b)),
            Value::Number(n) => *n,
            Value::String(s) => string_to_number(s),
            _ => f64::NAN,
        }
    }

    pub fn to_js_string(&self) -> Rc<str> {
        match self {
            Value::String(s) => s.clone(),
            other => other.to_string().into(),
        }
    }

    /// Strict equality.
    pub fn strict_eq(&self, other: &Value) -> bool {
        match (self, other) {
            (Value::Undefined, Value::Undefined) | (Value::Null, Value::Null) => true,
            (Value::Bool(a), Value::Bool(b)) => a == b,
            (Value::Number(a), Value::Number(b)) => a == b,
            (Value::String(a), Value::String(b)) => a == b,
            (Value::Object(a), Value::Object(b)) => Rc::ptr_eq(a, b),
            (Value::Function(a), Value::Function(b)) => Rc::ptr_eq(a, b),
            (Value::Regex(a), Value::Regex(b)) => Rc::ptr_eq(a, b),
            (Value::Builtin(a), Value::Builtin(b)) => a == b,
            (Value::Native(a), Value::Native(b)) => a == b,
            _ => false,
        }
    }

    /// Loose equality, limited to the primitive coercions.
    pub fn loose_eq(&self, other: &Value) -> bool {
        use Value::*;
        match (self, other) {
            (Undefined | Null, Undefined | Null) => true,
            (Undefined | Null, _) | (_, Undefined | Null) => false,
            (Number(_), String(_)) | (String(_), Number(_)) | (Bool(_), _) | (_, Bool(_)) => {
                self.to_number() == other.to_number()
            }
            _ => self.strict_eq(other),
        }
    }

    /// Deep copy into a JSON value; rejects functions, host objects and cycles.
    pub fn to_json(&self) -> Result<Option<serde_json::Value>, ScriptError> {
        let mut stack = Vec::new();
        to_json_inner(self, &mut stack)
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Value, ScriptError> {
        Ok(match v {
            serde_json::Value::Null => Value::Null,
            serde_json::Value::Bool(b) => Value::Bool(*b),
            serde_json::Value::Number(n) => Value::Number(n.as_f64().unwrap_or(f64::NAN)),
            serde_json::Value::String(s) => Value::str(s.as_str()),
            serde_json::Value::Object(m) => Value::object(
                m.iter().map(|(k, v)| Ok((k.clone(), Value::from_json(v)?))).collect::<Result<Vec<_>, ScriptError>>()?,
            ),
            serde_json::Value::Array(_) => return Err(ScriptError::Runtime("arrays are not supported".into())),
        })
    }
}

fn to_json_inner(v: &Value, stack: &mut Vec<*const ()>) -> Result<Option<serde_json::Value>, ScriptError> {
    Ok(Some(match v {
        Value::Undefined => return Ok(None),
        Value::Null => serde_json::Value::Null,
        Value::Bool(b) => serde_json::Value::Bool(*b),
        Value::Number(n) => number_to_json(*n),
        Value::String(s) => serde_json::Value::String(s.to_string()),
        Value::Object(o) => {
            let ptr = Rc::as_ptr(o) as *const ();
            if stack.contains(&ptr) {
                return Err(ScriptError::NonSerializableMessage("cyclic object".into()));
            }
            stack.push(ptr);
            let mut map = serde_json::Map::new();
            for (k, v) in o.borrow().iter() {
                if let Some(j) = to_json_inner(v, stack)? {
                    map.insert(k.clone(), j);
                }
            }
            stack.pop();
            serde_json::Value::Object(map)
        }
        Value::Function(_) | Value::Builtin(_) => {
            return Err(ScriptError::NonSerializableMessage("function value".into()))
        }
        Value::Native(n) => return Err(ScriptError::NonSerializableMessage(format!("host object {n:?}"))),
        Value::Regex(_) => serde_json::Value::Object(serde_json::Map::new()),
    }))
}

fn number_to_json(n: f64) -> serde_json::Value {
    if !n.is_finite() {
        serde_json::Value::Null
    } else if n.fract() == 0.0 && n.abs() < 9.007_199_254_740_992e15 {
        serde_json::Value::from(n as i64)
    } else {
        serde_json::Value::from(n)
    }
}

pub fn number_to_string(n: f64) -> String {
    if n.is_nan() {
        "NaN".into()
    } else if n.is_infinite() {
        if n > 0.0 { "Infinity" } else { "-Infinity" }.into()
    } else if n == 0.0 {
        "0".into()
    } else {
        // Rust's float formatting is already the shortest round-trip form.
        format!("{n}")
    }
}

fn string_to_number(s: &str) -> f64 {
    let t = s.trim_matches(|c: char| c.is_whitespace());
    if t.is_empty() {
        return 0.0;
    }
    match t {
        "Infinity" | "+Infinity" => f64::INFINITY,
        "-Infinity" => f64::NEG_INFINITY,
        _ if t.chars().all(|c| c.is_ascii_digit() || matches!(c, '.' | 'e' | 'E' | '+' | '-')) => {
            t.parse().unwrap_or(f64::NAN)
        }
        _ => f64::NAN,
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Undefined => f.write_str("undefined"),
            Value::Null => f.write_str("null"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Number(n) => f.write_str(&number_to_string(*n)),
            Value::String(s) => f.write_str(s),
            Value::Object(_) | Value::Native(_) => f.write_str("[object Object]"),
            Value::Function(d) => write!(f, "function {}() {{ ... }}", d.name.as_deref().unwrap_or("")),
            Value::Builtin(b) => write!(f, "function {b:?}() {{ [native code] }}"),
            Value::Regex(r) => write!(f, "{r}"),
        }
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::String(s) => write!(f, "{s:?}"),
            Value::Object(o) => f.debug_map().entries(o.borrow().iter()).finish(),
            other => write!(f, "{other}"),
        }
    }
}

impl PartialEq for Value {
    /// Structural equality (objects compared by contents), for tests.
    fn eq(&self, other: &Value) -> bool {
        match (self, other) {
            (Value::Number(a), Value::Number(b)) => a == b || a.is_nan() && b.is_nan(),
            (Value::Object(a), Value::Object(b)) => Rc::ptr_eq(a, b) || *a.borrow() == *b.borrow(),
            _ => self.strict_eq(other),
        }
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Value {
        Value::Bool(b)
    }
}

impl From<f64> for Value {
    fn from(n: f64) -> Value {
        Value::Number(n)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Value {
        Value::str(s)
    }
}
