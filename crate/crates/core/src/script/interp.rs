use std::rc::Rc;

use indexmap::IndexMap;

use super::parser::{BinOp, Expr, FunctionDef, Stmt, UnOp};
use super::value::{Builtin, Native, Value};
use super::{Effect, HostEnvironment, Program, ScriptError, XhrRequest};
use crate::cryptowire::Origin;
use crate::page::origin_of;

const MAX_CALL_DEPTH: usize = 96;

type R<T> = Result<T, ScriptError>;

enum Flow {
    Normal,
    Return(Value),
    Break,
    Continue,
}

#[derive(Default)]
struct XhrState {
    method: Option<String>,
    url: Option<url::Url>,
    headers: Vec<(String, String)>,
    ready_state: u8,
    status: u16,
    response: Option<String>,
}

enum Place {
    Var(String),
    Prop(Value, String),
}

pub(super) struct Interp<'e, 'a> {
    env: &'e mut HostEnvironment<'a>,
    globals: IndexMap<String, Value>,
    frames: Vec<IndexMap<String, Value>>,
    steps: u64,
    xhrs: Vec<XhrState>,
    pub(super) handler: Option<Value>,
}

pub(super) fn builtin_globals() -> IndexMap<String, Value> {
    let mut g = IndexMap::new();
    g.insert("forms".into(), Value::Native(Native::Forms));
    g.insert("localStorage".into(), Value::Native(Native::LocalStorage));
    g.insert("JSON".into(), Value::Native(Native::Json));
    for (name, b) in [
        ("SecureXMLHttpRequest", Builtin::SecureXmlHttpRequest),
        ("toDict", Builtin::ToDict),
        ("postMessage", Builtin::PostMessage),
        ("addEventListener", Builtin::AddEventListener),
        ("parseInt", Builtin::ParseInt),
        ("parseFloat", Builtin::ParseFloat),
        ("isNaN", Builtin::IsNaN),
        ("String", Builtin::String),
    ] {
        g.insert(name.into(), Value::Builtin(b));
    }
    g.insert("undefined".into(), Value::Undefined);
    g.insert("NaN".into(), Value::Number(f64::NAN));
    g.insert("Infinity".into(), Value::Number(f64::INFINITY));
    g
}

fn rt(msg: impl Into<String>) -> ScriptError {
    ScriptError::Runtime(msg.into())
}

impl<'e, 'a> Interp<'e, 'a> {
    /// Builds fresh globals and runs every unit's top-level code.
    pub(super) fn load(prog: &Program, env: &'e mut HostEnvironment<'a>) -> R<Self> {
        let steps = env.step_budget;
        let mut it = Interp { env, globals: builtin_globals(), frames: Vec::new(), steps, xhrs: Vec::new(), handler: None };
        for body in prog.units() {
            for stmt in body.iter() {
                if let Stmt::Function(def) = stmt {
                    it.globals.insert(def.name.clone().unwrap_or_default(), Value::Function(def.clone()));
                }
            }
        }
        for body in prog.units() {
            for stmt in body.iter() {
                if !matches!(stmt, Stmt::Function(_)) {
                    it.exec(stmt)?;
                }
            }
        }
        Ok(it)
    }

    pub(super) fn global(&self, name: &str) -> Option<&Value> {
        self.globals.get(name)
    }

    fn tick(&mut self) -> R<()> {
        self.steps = self.steps.checked_sub(1).ok_or(ScriptError::StepBudgetExceeded)?;
        Ok(())
    }

    pub(super) fn call(&mut self, callee: &Value, args: Vec<Value>) -> R<Value> {
        match callee {
            Value::Function(def) => self.call_function(def, args),
            Value::Builtin(b) => self.call_builtin(*b, args),
            other => Err(rt(format!("{} is not a function", other.type_of()))),
        }
    }

    fn call_function(&mut self, def: &Rc<FunctionDef>, args: Vec<Value>) -> R<Value> {
        self.tick()?;
        if self.frames.len() >= MAX_CALL_DEPTH {
            return Err(rt("maximum call depth exceeded"));
        }
        let mut frame = IndexMap::new();
        let mut args = args.into_iter();
        for p in &def.params {
            frame.insert(p.clone(), args.next().unwrap_or(Value::Undefined));
        }
        for stmt in &def.body {
            if let Stmt::Function(inner) = stmt {
                frame.insert(inner.name.clone().unwrap_or_default(), Value::Function(inner.clone()));
            }
        }
        self.frames.push(frame);
        let mut result = Ok(Value::Undefined);
        for stmt in &def.body {
            match self.exec(stmt) {
                Ok(Flow::Normal) => {}
                Ok(Flow::Return(v)) => {
                    result = Ok(v);
                    break;
                }
                Ok(Flow::Break | Flow::Continue) => unreachable!("rejected by the parser"),
                Err(e) => {
                    result = Err(e);
                    break;
                }
            }
        }
        self.frames.pop();
        result
    }

    fn exec_block(&mut self, body: &[Stmt]) -> R<Flow> {
        for s in body {
            match self.exec(s)? {
                Flow::Normal => {}
                other => return Ok(other),
            }
        }
        Ok(Flow::Normal)
    }

    fn exec(&mut self, stmt: &Stmt) -> R<Flow> {
        self.tick()?;
        match stmt {
            Stmt::Empty | Stmt::Function(_) => {}
            Stmt::Var(decls) => {
                for (name, init) in decls {
                    let v = match init {
                        Some(e) => self.eval(e)?,
                        None => Value::Undefined,
                    };
                    match self.frames.last_mut() {
                        Some(f) => f.insert(name.clone(), v),
                        None => self.globals.insert(name.clone(), v),
                    };
                }
            }
            Stmt::If(c, a, b) => {
                if self.eval(c)?.truthy() {
                    return self.exec(a);
                } else if let Some(b) = b {
                    return self.exec(b);
                }
            }
            Stmt::While(c, body) => {
                while self.eval(c)?.truthy() {
                    match self.exec(body)? {
                        Flow::Break => break,
                        Flow::Return(v) => return Ok(Flow::Return(v)),
                        Flow::Normal | Flow::Continue => {}
                    }
                }
            }
            Stmt::For(init, cond, step, body) => {
                if let Some(init) = init {
                    self.exec(init)?;
                }
                loop {
                    if let Some(c) = cond {
                        if !self.eval(c)?.truthy() {
                            break;
                        }
                    }
                    match self.exec(body)? {
                        Flow::Break => break,
                        Flow::Return(v) => return Ok(Flow::Return(v)),
                        Flow::Normal | Flow::Continue => {}
                    }
                    if let Some(s) = step {
                        self.eval(s)?;
                    }
                    self.tick()?;
                }
            }
            Stmt::Return(e) => {
                let v = match e {
                    Some(e) => self.eval(e)?,
                    None => Value::Undefined,
                };
                return Ok(Flow::Return(v));
            }
            Stmt::Break => return Ok(Flow::Break),
            Stmt::Continue => return Ok(Flow::Continue),
            Stmt::Block(body) => return self.exec_block(body),
            Stmt::Expr(e) => {
                self.eval(e)?;
            }
        }
        Ok(Flow::Normal)
    }

    fn lookup(&self, name: &str) -> R<Value> {
        if let Some(v) = self.frames.last().and_then(|f| f.get(name)) {
            return Ok(v.clone());
        }
        self.globals.get(name).cloned().ok_or_else(|| rt(format!("{name} is not defined")))
    }

    fn eval(&mut self, e: &Expr) -> R<Value> {
        self.tick()?;
        Ok(match e {
            Expr::Num(n) => Value::Number(*n),
            Expr::Str(s) => Value::String(s.clone()),
            Expr::Bool(b) => Value::Bool(*b),
            Expr::Null => Value::Null,
            Expr::Ident(name) => self.lookup(name)?,
            Expr::Regex(r) => Value::Regex(r.clone()),
            Expr::Function(def) => Value::Function(def.clone()),
            Expr::Object(props) => {
                let mut map = IndexMap::new();
                for (k, v) in props {
                    let v = self.eval(v)?;
                    map.insert(k.clone(), v);
                }
                Value::object(map)
            }
            Expr::Unary(op, x) => {
                let v = self.eval(x)?;
                match op {
                    UnOp::Not => Value::Bool(!v.truthy()),
                    UnOp::Neg => Value::Number(-v.to_number()),
                    UnOp::Plus => Value::Number(v.to_number()),
                    UnOp::TypeOf => Value::str(v.type_of()),
                }
            }
            Expr::Binary(op, a, b) => {
                let a = self.eval(a)?;
                let b = self.eval(b)?;
                binary(*op, &a, &b)
            }
            Expr::And(a, b) => {
                let a = self.eval(a)?;
                if a.truthy() {
                    self.eval(b)?
                } else {
                    a
                }
            }
            Expr::Or(a, b) => {
                let a = self.eval(a)?;
                if a.truthy() {
                    a
                } else {
                    self.eval(b)?
                }
            }
            Expr::Cond(c, a, b) => {
                if self.eval(c)?.truthy() {
                    self.eval(a)?
                } else {
                    self.eval(b)?
                }
            }
            Expr::Assign(op, target, value) => {
                let place = self.place(target)?;
                let v = match op {
                    None => self.eval(value)?,
                    Some(op) => {
                        let old = self.read(&place)?;
                        let rhs = self.eval(value)?;
                        binary(*op, &old, &rhs)
                    }
                };
                self.write(place, v.clone())?;
                v
            }
            Expr::Update(delta, prefix, target) => {
                let place = self.place(target)?;
                let old = self.read(&place)?.to_number();
                self.write(place, Value::Number(old + delta))?;
                Value::Number(if *prefix { old + delta } else { old })
            }
            Expr::Member(obj, name) => {
                let o = self.eval(obj)?;
                self.get_property(&o, name)?
            }
            Expr::Index(obj, key) => {
                let o = self.eval(obj)?;
                let k = self.eval(key)?.to_js_string();
                self.get_property(&o, &k)?
            }
            Expr::Call(callee, args) => match &**callee {
                Expr::Member(obj, name) => {
                    let o = self.eval(obj)?;
                    let args = self.eval_args(args)?;
                    self.call_method(o, name, args)?
                }
                Expr::Index(obj, key) => {
                    let o = self.eval(obj)?;
                    let k = self.eval(key)?.to_js_string();
                    let args = self.eval_args(args)?;
                    self.call_method(o, &k, args)?
                }
                other => {
                    let f = self.eval(other)?;
                    let args = self.eval_args(args)?;
                    self.call(&f, args)?
                }
            },
            Expr::New(callee, args) => {
                let c = self.eval(callee)?;
                let args = self.eval_args(args)?;
                match c {
                    Value::Builtin(Builtin::SecureXmlHttpRequest) => {
                        if !args.is_empty() {
                            return Err(rt("SecureXMLHttpRequest takes no arguments"));
                        }
                        self.xhrs.push(XhrState::default());
                        Value::Native(Native::Xhr(self.xhrs.len() - 1))
                    }
                    other => return Err(rt(format!("{} is not a constructor", other.type_of()))),
                }
            }
        })
    }

    fn eval_args(&mut self, args: &[Expr]) -> R<Vec<Value>> {
        args.iter().map(|a| self.eval(a)).collect()
    }

    fn place(&mut self, target: &Expr) -> R<Place> {
        Ok(match target {
            Expr::Ident(name) => Place::Var(name.clone()),
            Expr::Member(obj, name) => Place::Prop(self.eval(obj)?, name.clone()),
            Expr::Index(obj, key) => {
                let o = self.eval(obj)?;
                Place::Prop(o, self.eval(key)?.to_js_string().to_string())
            }
            _ => return Err(rt("invalid assignment target")),
        })
    }

    fn read(&mut self, place: &Place) -> R<Value> {
        match place {
            Place::Var(name) => self.lookup(name),
            Place::Prop(o, k) => self.get_property(o, k),
        }
    }

    fn write(&mut self, place: Place, v: Value) -> R<()> {
        match place {
            Place::Var(name) => {
                if let Some(slot) = self.frames.last_mut().and_then(|f| f.get_mut(&name)) {
                    *slot = v;
                } else {
                    self.globals.insert(name, v);
                }
                Ok(())
            }
            Place::Prop(o, k) => self.set_property(&o, k, v),
        }
    }

    fn get_property(&mut self, o: &Value, key: &str) -> R<Value> {
        Ok(match o {
            Value::Undefined | Value::Null => return Err(rt(format!("cannot read property '{key}' of {o}"))),
            Value::Object(map) => map.borrow().get(key).cloned().unwrap_or(Value::Undefined),
            Value::String(s) => match key {
                "length" => Value::Number(s.chars().count() as f64),
                _ => match key.parse::<usize>() {
                    Ok(i) => s.chars().nth(i).map_or(Value::Undefined, |c| Value::str(c.to_string())),
                    Err(_) => Value::Undefined,
                },
            },
            Value::Regex(r) if key == "source" => Value::str(r.source()),
            Value::Native(Native::Forms) => match self.env.forms.contains_key(key) {
                true => Value::Native(Native::Form(key.into())),
                false => Value::Undefined,
            },
            Value::Native(Native::Form(form)) => self.env.forms[&**form]
                .get(key)
                .map_or(Value::Undefined, |v| Value::str(v.as_str())),
            Value::Native(Native::LocalStorage) => match key {
                "length" => Value::Number(self.env.local_storage.len() as f64),
                _ => self.env.local_storage.get(key).map_or(Value::Undefined, |v| Value::str(v.as_str())),
            },
            Value::Native(Native::Xhr(id)) => {
                let x = &self.xhrs[*id];
                match key {
                    "readyState" => Value::Number(f64::from(x.ready_state)),
                    "status" => Value::Number(f64::from(x.status)),
                    "responseText" => x.response.as_deref().map_or(Value::str(""), Value::str),
                    _ => Value::Undefined,
                }
            }
            _ => Value::Undefined,
        })
    }

    fn set_property(&mut self, o: &Value, key: String, v: Value) -> R<()> {
        match o {
            Value::Object(map) => {
                map.borrow_mut().insert(key, v);
            }
            Value::Native(Native::Form(form)) => {
                let inputs = self.env.forms.get_mut(&**form).expect("form handle refers to a loaded form");
                let slot = inputs
                    .get_mut(&key)
                    .ok_or_else(|| rt(format!("form {form} has no input named {key}")))?;
                let value = v.to_js_string().to_string();
                slot.clone_from(&value);
                self.env.effects.push(Effect::FormWrite { form: form.to_string(), input: key, value });
            }
            Value::Native(Native::LocalStorage) => self.storage_set(key, v.to_js_string().to_string()),
            other => return Err(rt(format!("cannot set property '{key}' on {}", other.type_of()))),
        }
        Ok(())
    }

    fn storage_set(&mut self, key: String, value: String) {
        self.env.local_storage.insert(key.clone(), value.clone());
        self.env.effects.push(Effect::StorageWrite { key, value });
    }

    fn call_method(&mut self, recv: Value, name: &str, args: Vec<Value>) -> R<Value> {
        self.tick()?;
        let arg = |i: usize| args.get(i).cloned().unwrap_or(Value::Undefined);
        Ok(match (&recv, name) {
            (Value::Regex(re), "test") => {
                let s = arg(0).to_js_string();
                match re.test(&s, &mut self.steps) {
                    Some(b) => Value::Bool(b),
                    None => return Err(ScriptError::StepBudgetExceeded),
                }
            }
            (Value::String(s), _) => string_method(s, name, &args)?,
            (Value::Native(Native::Json), "stringify") => match arg(0).to_json()? {
                Some(j) => Value::str(j.to_string()),
                None => Value::Undefined,
            },
            (Value::Native(Native::Json), "parse") => {
                let text = arg(0).to_js_string();
                let j: serde_json::Value =
                    serde_json::from_str(&text).map_err(|e| rt(format!("JSON.parse: {e}")))?;
                Value::from_json(&j)?
            }
            (Value::Native(Native::LocalStorage), "getItem") => {
                self.env.local_storage.get(&*arg(0).to_js_string()).map_or(Value::Null, |v| Value::str(v.as_str()))
            }
            (Value::Native(Native::LocalStorage), "setItem") => {
                self.storage_set(arg(0).to_js_string().to_string(), arg(1).to_js_string().to_string());
                Value::Undefined
            }
            (Value::Native(Native::LocalStorage), "removeItem") => {
                let key = arg(0).to_js_string().to_string();
                if self.env.local_storage.remove(&key).is_some() {
                    self.env.effects.push(Effect::StorageRemove { key });
                }
                Value::Undefined
            }
            (Value::Native(Native::Xhr(id)), _) => self.xhr_method(*id, name, &args)?,
            (Value::Object(map), _) => {
                let f = map.borrow().get(name).cloned().unwrap_or(Value::Undefined);
                self.call(&f, args)?
            }
            (Value::Undefined | Value::Null, _) => return Err(rt(format!("cannot read property '{name}' of {recv}"))),
            _ => return Err(rt(format!("{}.{name} is not a function", recv.type_of()))),
        })
    }

    fn xhr_method(&mut self, id: usize, name: &str, args: &[Value]) -> R<Value> {
        let arg = |i: usize| args.get(i).cloned().unwrap_or(Value::Undefined);
        match name {
            "open" => {
                if args.len() < 3 || arg(2).truthy() {
                    return Err(rt("SecureXMLHttpRequest supports only synchronous requests"));
                }
                let url = resolve_against(&self.env.origin, &arg(1).to_js_string())?;
                let target = origin_of(&url).map_err(|e| rt(e.to_string()))?;
                if target != self.env.origin {
                    return Err(ScriptError::CrossOriginXhr {
                        url: url.to_string(),
                        session_origin: self.env.origin.canonical(),
                    });
                }
                let x = &mut self.xhrs[id];
                *x = XhrState {
                    method: Some(arg(0).to_js_string().to_ascii_uppercase()),
                    url: Some(url),
                    ready_state: 1,
                    ..XhrState::default()
                };
            }
            "setRequestHeader" => {
                let x = &mut self.xhrs[id];
                if x.ready_state != 1 {
                    return Err(rt("setRequestHeader before open"));
                }
                x.headers.push((arg(0).to_js_string().to_string(), arg(1).to_js_string().to_string()));
            }
            "send" => {
                let x = &self.xhrs[id];
                let (Some(method), Some(url), 1) = (&x.method, &x.url, x.ready_state) else {
                    return Err(rt("send without a pending open"));
                };
                let path = match url.query() {
                    Some(q) => format!("{}?{q}", url.path()),
                    None => url.path().to_string(),
                };
                let body = match arg(0) {
                    Value::Undefined | Value::Null => String::new(),
                    v => v.to_js_string().to_string(),
                };
                let req = XhrRequest { method: method.clone(), path, headers: x.headers.clone(), body };
                self.env.effects.push(Effect::Xhr(req.clone()));
                let transport = self.env.xhr.as_deref_mut().ok_or(ScriptError::NetworkDropped)?;
                let resp = transport.send(&req)?;
                let x = &mut self.xhrs[id];
                x.ready_state = 4;
                x.status = resp.status;
                x.response = Some(resp.body);
            }
            "getResponseHeader" => return Ok(Value::Null),
            _ => return Err(rt(format!("SecureXMLHttpRequest.{name} is not a function"))),
        }
        Ok(Value::Undefined)
    }

    fn call_builtin(&mut self, b: Builtin, args: Vec<Value>) -> R<Value> {
        self.tick()?;
        let arg = |i: usize| args.get(i).cloned().unwrap_or(Value::Undefined);
        Ok(match b {
            Builtin::ToDict => match arg(0) {
                Value::Native(Native::Form(form)) => Value::object(
                    self.env.forms[&*form].iter().map(|(k, v)| (k.clone(), Value::str(v.as_str()))),
                ),
                other => return Err(rt(format!("toDict expects a form, got {}", other.type_of()))),
            },
            Builtin::PostMessage => {
                super::bridge_post(self.env, &arg(0))?;
                Value::Undefined
            }
            Builtin::AddEventListener => {
                if &*arg(0).to_js_string() != "message" {
                    return Err(rt("only 'message' listeners are supported"));
                }
                match arg(1) {
                    f @ Value::Function(_) => self.handler = Some(f),
                    other => return Err(rt(format!("listener must be a function, got {}", other.type_of()))),
                }
                Value::Undefined
            }
            Builtin::SecureXmlHttpRequest => return Err(rt("SecureXMLHttpRequest must be called with new")),
            Builtin::ParseInt => {
                let radix = match arg(1) {
                    Value::Undefined => 10,
                    r => r.to_number() as u32,
                };
                Value::Number(parse_int(&arg(0).to_js_string(), radix))
            }
            Builtin::ParseFloat => Value::Number(parse_float(&arg(0).to_js_string())),
            Builtin::IsNaN => Value::Bool(arg(0).to_number().is_nan()),
            Builtin::String => Value::String(arg(0).to_js_string()),
        })
    }
}

fn resolve_against(origin: &Origin, reference: &str) -> R<url::Url> {
    let base = match origin.port() {
        443 => format!("https://{}/", origin.host()),
        80 => format!("http://{}/", origin.host()),
        p => format!("https://{}:{p}/", origin.host()),
    };
    let base = url::Url::parse(&base).map_err(|e| rt(e.to_string()))?;
    base.join(reference).map_err(|e| rt(format!("bad URL {reference:?}: {e}")))
}

fn binary(op: BinOp, a: &Value, b: &Value) -> Value {
    use BinOp::*;
    let num = |f: fn(f64, f64) -> f64| Value::Number(f(a.to_number(), b.to_number()));
    let is_stringy = |v: &Value| matches!(v, Value::String(_) | Value::Object(_) | Value::Native(_));
    match op {
        Add if is_stringy(a) || is_stringy(b) => {
            Value::str(format!("{}{}", a.to_js_string(), b.to_js_string()))
        }
        Add => num(|x, y| x + y),
        Sub => num(|x, y| x - y),
        Mul => num(|x, y| x * y),
        Div => num(|x, y| x / y),
        Rem => num(|x, y| x % y),
        Eq => Value::Bool(a.loose_eq(b)),
        Ne => Value::Bool(!a.loose_eq(b)),
        StrictEq => Value::Bool(a.strict_eq(b)),
        StrictNe => Value::Bool(!a.strict_eq(b)),
        Lt | Le | Gt | Ge => {
            let ord = match (a, b) {
                (Value::String(x), Value::String(y)) => Some(x.cmp(y)),
                _ => a.to_number().partial_cmp(&b.to_number()),
            };
            Value::Bool(match ord {
                None => false,
                Some(o) => match op {
                    Lt => o.is_lt(),
                    Le => o.is_le(),
                    Gt => o.is_gt(),
                    _ => o.is_ge(),
                },
            })
        }
    }
}

fn string_method(s: &Rc<str>, name: &str, args: &[Value]) -> R<Value> {
    let arg = |i: usize| args.get(i).cloned().unwrap_or(Value::Undefined);
    let chars: Vec<char> = s.chars().collect();
    let clamp = |v: Value, default: usize| match v {
        Value::Undefined => default,
        v => {
            let n = v.to_number();
            if n.is_nan() || n < 0.0 {
                0
            } else {
                (n as usize).min(chars.len())
            }
        }
    };
    Ok(match name {
        "charAt" => Value::str(chars.get(clamp(arg(0), 0)).map(|c| c.to_string()).unwrap_or_default()),
        "indexOf" => {
            let needle: Vec<char> = arg(0).to_js_string().chars().collect();
            let pos = (0..=chars.len().saturating_sub(needle.len()))
                .find(|&i| chars.len() >= needle.len() && chars[i..i + needle.len()] == needle[..]);
            Value::Number(pos.map_or(-1.0, |p| p as f64))
        }
        "substring" => {
            let (a, b) = (clamp(arg(0), 0), clamp(arg(1), chars.len()));
            let (a, b) = (a.min(b), a.max(b));
            Value::str(chars[a..b].iter().collect::<String>())
        }
        "toUpperCase" => Value::str(s.to_uppercase()),
        "toLowerCase" => Value::str(s.to_lowercase()),
        "trim" => Value::str(s.trim()),
        "toString" => Value::String(s.clone()),
        _ => return Err(rt(format!("string.{name} is not a function"))),
    })
}

fn parse_int(s: &str, radix: u32) -> f64 {
    if !(2..=36).contains(&radix) {
        return f64::NAN;
    }
    let t = s.trim();
    let (neg, digits) = match t.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, t.strip_prefix('+').unwrap_or(t)),
    };
    let mut v: Option<f64> = None;
    for c in digits.chars() {
        match c.to_digit(radix) {
            Some(d) => v = Some(v.unwrap_or(0.0) * f64::from(radix) + f64::from(d)),
            None => break,
        }
    }
    match v {
        Some(v) if neg => -v,
        Some(v) => v,
        None => f64::NAN,
    }
}

fn parse_float(s: &str) -> f64 {
    let t = s.trim_start();
    (1..=t.len())
        .rev()
        .filter(|&i| t.is_char_boundary(i))
        .find_map(|i| t[..i].parse::<f64>().ok().filter(|_| !t[..i].contains(|c: char| c.is_alphabetic() && c != 'e' && c != 'E')))
        .unwrap_or(f64::NAN)
}
