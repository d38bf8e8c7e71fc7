//! Secure-tag extraction from the HTML subset, origin derivation, signing
//! canonicalization and form encoding.

mod encode;
pub(crate) use self::encode::urlencode;
pub mod html;
mod url;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::Serialize;

pub use self::encode::encode_form_submission;
pub use self::url::{origin_of, PageUrl};
use crate::cryptowire::{Origin, SigningKey, VerifyingKey, SIGNATURE_LEN};
use html::{StartTag, Token};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PageError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("bad origin URL: {0}")]
    BadOriginUrl(String),
    #[error("secure tags span several origins: {0:?}")]
    MixedOrigins(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SecureInputSpec {
    pub name: String,
    pub input_type: String,
    pub placeholder_value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SecureFormSpec {
    pub name: String,
    /// Literal `action` attribute.
    pub action: String,
    /// `action` resolved against the page URL.
    pub action_url: String,
    pub method: String,
    pub inputs: Vec<SecureInputSpec>,
    pub sign_attr: String,
}

impl SecureFormSpec {
    pub fn input(&self, name: &str) -> Option<&SecureInputSpec> {
        self.inputs.iter().find(|i| i.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SecureScriptSpec {
    pub src: String,
    pub src_url: String,
    #[serde(serialize_with = "serialize_lossy")]
    pub code: Vec<u8>,
    pub sign_attr: String,
}

fn serialize_lossy<S: serde::Serializer>(b: &[u8], s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&String::from_utf8_lossy(b))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PageDoc {
    pub page_url: PageUrl,
    pub secure_forms: Vec<SecureFormSpec>,
    pub secure_scripts: Vec<SecureScriptSpec>,
    pub has_secure_content: bool,
}

impl PageDoc {
    pub fn form(&self, name: &str) -> Option<&SecureFormSpec> {
        self.secure_forms.iter().find(|f| f.name == name)
    }

    /// The single origin every secure tag talks to; pages with no secure
    /// tags use the page origin.
    pub fn enclave_origin(&self) -> Result<Origin, PageError> {
        let mut origins: Vec<Origin> = self
            .secure_forms
            .iter()
            .map(|f| derive_origin(TagRef::Form(f), &self.page_url))
            .chain(self.secure_scripts.iter().map(|s| derive_origin(TagRef::Script(s), &self.page_url)))
            .collect::<Result<_, _>>()?;
        origins.sort();
        origins.dedup();
        match origins.len() {
            0 => Ok(self.page_url.origin()),
            1 => Ok(origins.pop().unwrap()),
            _ => Err(PageError::MixedOrigins(origins.iter().map(Origin::canonical).collect())),
        }
    }
}

/// A borrowed secure tag of either kind.
#[derive(Debug, Clone, Copy)]
pub enum TagRef<'a> {
    Form(&'a SecureFormSpec),
    Script(&'a SecureScriptSpec),
}

impl TagRef<'_> {
    pub fn sign_attr(&self) -> &str {
        match self {
            TagRef::Form(f) => &f.sign_attr,
            TagRef::Script(s) => &s.sign_attr,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            TagRef::Form(f) => format!("form {:?}", f.name),
            TagRef::Script(s) => format!("script {:?}", s.src),
        }
    }
}

fn is_secure(tag: &StartTag) -> bool {
    matches!(tag.attr("secure").map(str::trim), Some("true" | "True"))
}

fn check_sign_attr(tag: &StartTag) -> Result<String, PageError> {
    let sign = tag.attr("sign").unwrap_or("").trim().to_string();
    if !sign.is_empty() {
        match B64.decode(&sign) {
            Ok(b) if b.len() == SIGNATURE_LEN => {}
            _ => return Err(PageError::Parse(format!("<{}> sign attribute is not a signature", tag.name))),
        }
    }
    Ok(sign)
}

fn reject_malformed(tag: &StartTag) -> Result<(), PageError> {
    match &tag.malformed {
        Some(why) => Err(PageError::Parse(format!("secure <{}>: {why}", tag.name))),
        None => Ok(()),
    }
}

struct FormBuilder {
    spec: SecureFormSpec,
}

/// Parses a page whose secure scripts are all inline.
pub fn parse_page(html: &str, page_url: &PageUrl) -> Result<PageDoc, PageError> {
    parse_page_with(html, page_url, |_| None)
}

/// Parses a page; `fetch` supplies the body of a secure script whose tag is
/// empty, keyed by the literal `src` value.
pub fn parse_page_with<F>(html: &str, page_url: &PageUrl, fetch: F) -> Result<PageDoc, PageError>
where
    F: Fn(&str) -> Option<Vec<u8>>,
{
    let mut forms: Vec<SecureFormSpec> = Vec::new();
    let mut scripts = Vec::new();
    let mut open_form: Option<FormBuilder> = None;
    let mut tokens = html::tokenize(html).into_iter().peekable();

    while let Some(tok) = tokens.next() {
        match tok {
            Token::Start(tag) if tag.name == "form" => {
                if open_form.is_some() {
                    return Err(PageError::Parse("form nested inside a secure form".into()));
                }
                if !is_secure(&tag) {
                    continue;
                }
                reject_malformed(&tag)?;
                if tag.self_closing {
                    return Err(PageError::Parse("secure form is self-closing".into()));
                }
                let name = tag.attr("name").unwrap_or("").trim().to_string();
                if name.is_empty() {
                    return Err(PageError::Parse("secure form without a name".into()));
                }
                if forms.iter().any(|f| f.name == name) {
                    return Err(PageError::Parse(format!("duplicate secure form name {name:?}")));
                }
                let action = tag.attr("action").unwrap_or("").trim().to_string();
                let action_url = page_url.resolve(&action).map_err(|e| PageError::Parse(e.to_string()))?;
                open_form = Some(FormBuilder {
                    spec: SecureFormSpec {
                        name,
                        action,
                        action_url: action_url.to_string(),
                        method: tag.attr("method").unwrap_or("GET").trim().to_ascii_uppercase(),
                        inputs: Vec::new(),
                        sign_attr: check_sign_attr(&tag)?,
                    },
                });
            }
            Token::Start(tag) if tag.name == "input" => {
                let Some(form) = open_form.as_mut() else { continue };
                reject_malformed(&tag)?;
                let name = tag.attr("name").unwrap_or("").trim().to_string();
                if name.is_empty() {
                    return Err(PageError::Parse(format!("input without a name in form {:?}", form.spec.name)));
                }
                if form.spec.input(&name).is_some() {
                    return Err(PageError::Parse(format!("duplicate input {name:?} in form {:?}", form.spec.name)));
                }
                form.spec.inputs.push(SecureInputSpec {
                    name,
                    input_type: tag.attr("type").unwrap_or("text").trim().to_ascii_lowercase(),
                    placeholder_value: tag.attr("value").unwrap_or("").to_string(),
                });
            }
            Token::End { name } if name == "form" => {
                if let Some(form) = open_form.take() {
                    forms.push(form.spec);
                }
            }
            Token::Start(tag) if tag.name == "script" => {
                let body = match tokens.peek() {
                    Some(Token::RawText { .. }) => match tokens.next() {
                        Some(Token::RawText { text, terminated }) => Some((text, terminated)),
                        _ => unreachable!(),
                    },
                    _ => None,
                };
                if !is_secure(&tag) {
                    continue;
                }
                reject_malformed(&tag)?;
                let (text, terminated) = body.unwrap_or_default();
                if !terminated && !tag.self_closing {
                    return Err(PageError::Parse("secure script is not closed".into()));
                }
                let src = tag.attr("src").unwrap_or("").trim().to_string();
                let src_url = page_url.resolve(&src).map_err(|e| PageError::Parse(e.to_string()))?;
                let code = if text.trim().is_empty() && !src.is_empty() {
                    fetch(&src).unwrap_or_default()
                } else {
                    text.into_bytes()
                };
                scripts.push(SecureScriptSpec { src, src_url: src_url.to_string(), code, sign_attr: check_sign_attr(&tag)? });
            }
            _ => {}
        }
    }
    if let Some(form) = open_form {
        return Err(PageError::Parse(format!("secure form {:?} is not closed", form.spec.name)));
    }
    let has_secure_content = !forms.is_empty() || !scripts.is_empty();
    Ok(PageDoc { page_url: page_url.clone(), secure_forms: forms, secure_scripts: scripts, has_secure_content })
}

/// Origin a secure tag communicates with.
pub fn derive_origin(tag: TagRef<'_>, page_url: &PageUrl) -> Result<Origin, PageError> {
    let reference = match tag {
        TagRef::Form(f) => &f.action,
        TagRef::Script(s) => &s.src,
    };
    origin_of(&page_url.resolve(reference)?)
}

const US: u8 = 0x1f;

/// Bytes covered by a tag's `sign` attribute.
pub fn canonical_signing_bytes(tag: TagRef<'_>) -> Vec<u8> {
    let mut out = Vec::new();
    match tag {
        TagRef::Form(f) => {
            for part in ["form", &f.name, &f.action_url, &f.method] {
                out.extend_from_slice(part.as_bytes());
                out.push(b'\n');
            }
            for input in &f.inputs {
                out.extend_from_slice(input.input_type.as_bytes());
                out.push(US);
                out.extend_from_slice(input.name.as_bytes());
                out.push(US);
                out.extend_from_slice(input.placeholder_value.as_bytes());
                out.push(b'\n');
            }
        }
        TagRef::Script(s) => {
            out.extend_from_slice(b"script\n");
            out.extend_from_slice(s.src_url.as_bytes());
            out.push(b'\n');
            out.extend_from_slice(&s.code);
        }
    }
    out
}

pub fn verify_tag(tag: TagRef<'_>, key: &VerifyingKey) -> bool {
    match B64.decode(tag.sign_attr()) {
        Ok(sig) => key.verify_raw(&canonical_signing_bytes(tag), &sig),
        Err(_) => false,
    }
}

pub fn sign_tag(tag: TagRef<'_>, key: &SigningKey) -> String {
    B64.encode(key.sign_raw(&canonical_signing_bytes(tag)))
}

/// Fills in (or replaces) the `sign` attribute of every secure form and
/// script. Signing is deterministic, so re-signing is idempotent.
pub fn sign_page<F>(html: &str, page_url: &PageUrl, key: &SigningKey, fetch: F) -> Result<String, PageError>
where
    F: Fn(&str) -> Option<Vec<u8>>,
{
    let doc = parse_page_with(html, page_url, &fetch)?;
    let mut sigs = doc
        .secure_forms
        .iter()
        .map(|f| sign_tag(TagRef::Form(f), key))
        .collect::<Vec<_>>()
        .into_iter();
    let mut script_sigs = doc
        .secure_scripts
        .iter()
        .map(|s| sign_tag(TagRef::Script(s), key))
        .collect::<Vec<_>>()
        .into_iter();

    let mut edits: Vec<(std::ops::Range<usize>, String)> = Vec::new();
    let mut in_secure_form = false;
    for tok in html::tokenize(html) {
        let Token::Start(tag) = tok else {
            if matches!(tok, Token::End { ref name } if name == "form") {
                in_secure_form = false;
            }
            continue;
        };
        let sig = match tag.name.as_str() {
            "form" if is_secure(&tag) && !in_secure_form => {
                in_secure_form = true;
                sigs.next()
            }
            "script" if is_secure(&tag) => script_sigs.next(),
            _ => None,
        };
        let Some(sig) = sig else { continue };
        let attr = format!("sign=\"{sig}\"");
        match tag.attribute("sign") {
            Some(existing) => edits.push((existing.span.clone(), attr)),
            None => {
                let close = if tag.self_closing { tag.span.end - 2 } else { tag.span.end - 1 };
                edits.push((close..close, format!(" {attr}")));
            }
        }
    }
    let mut out = html.to_string();
    for (range, text) in edits.into_iter().rev() {
        out.replace_range(range, &text);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const PAYMENT_PAGE: &str = r#"<html>
 <head> <title>checkout</title> </head>
 <body>
  <form action="submit_data"
        name="payment"
        method="POST"
        secure="True">
    <input type="text"
           value="Holder" name="holder" />
    <input type="text"
           value="Card Number" name="card"/>
    <input type="text"
           value="MM/YY" name="exp"/>
    <input type="text"
           value="CVV" name="cvv"/>
  </form>
  <div class="btn"><p>Place order</p></div>
  <div class="btn"><p>Cancel</p></div>
  <script type="text/JavaScript"
          src="validator.js"
          secure="True">
  </script>
 </body>
</html>"#;

    fn url() -> PageUrl {
        PageUrl::parse("https://pay.site.com/checkout").unwrap()
    }

    #[test]
    fn payment_listing() {
        let doc = parse_page(PAYMENT_PAGE, &url()).unwrap();
        assert!(doc.has_secure_content);
        assert_eq!(doc.secure_forms.len(), 1);
        let f = &doc.secure_forms[0];
        assert_eq!(f.name, "payment");
        assert_eq!(f.method, "POST");
        let names: Vec<_> = f.inputs.iter().map(|i| i.name.as_str()).collect();
        assert_eq!(names, ["holder", "card", "exp", "cvv"]);
        assert_eq!(f.inputs[1].placeholder_value, "Card Number");
        assert_eq!(doc.secure_scripts.len(), 1);
        assert_eq!(doc.secure_scripts[0].src, "validator.js");
        assert_eq!(doc.enclave_origin().unwrap().canonical(), "pay.site.com:443");
    }

    #[test]
    fn no_secure_content() {
        let doc = parse_page("<html><body><form name=a><input name=b></form><script>x()</script></body></html>", &url())
            .unwrap();
        assert!(!doc.has_secure_content);
        assert!(doc.secure_forms.is_empty() && doc.secure_scripts.is_empty());
    }

    #[test]
    fn empty_secure_form() {
        let doc = parse_page(r#"<form name="e" secure="true" action="/go"></form>"#, &url()).unwrap();
        assert!(doc.secure_forms[0].inputs.is_empty());
        let bytes = canonical_signing_bytes(TagRef::Form(&doc.secure_forms[0]));
        assert_eq!(bytes, b"form\ne\nhttps://pay.site.com/go\nGET\n");
    }

    #[test]
    fn structural_errors() {
        let u = url();
        for bad in [
            r#"<form name="a" secure="True"><input name="x">"#,
            r#"<form name="a" secure="True"><form name="b"></form></form>"#,
            r#"<form secure="True"></form>"#,
            r#"<form name="a" secure="True"><input value="x"></form>"#,
            r#"<form name="a" secure="True" action="x></form>"#,
            r#"<form name="a" secure="True" sign="nope"></form>"#,
            r#"<form name="a" secure="True"></form><form name="a" secure="True"></form>"#,
            r#"<script secure="True" src="a.js">never closed"#,
            r#"<form name="a" secure="True" secure="True"></form>"#,
        ] {
            assert!(matches!(parse_page(bad, &u), Err(PageError::Parse(_))), "accepted {bad}");
        }
    }

    #[test]
    fn malformed_untrusted_markup_is_ignored() {
        let doc = parse_page(r#"<div class="x><p <<a href='y>z</p><form name="a" secure="True"></form>"#, &url());
        // The unterminated quote swallows the rest of the document; whatever
        // remains must parse without panicking.
        assert!(doc.is_ok() || matches!(doc, Err(PageError::Parse(_))));
        let doc = parse_page(r#"<p <<a =b><form name="a" secure="True"></form>"#, &url()).unwrap();
        assert_eq!(doc.secure_forms.len(), 1);
    }

    #[test]
    fn origins() {
        let u = url();
        let form = |action: &str| SecureFormSpec {
            name: "f".into(),
            action: action.into(),
            action_url: String::new(),
            method: "POST".into(),
            inputs: vec![],
            sign_attr: String::new(),
        };
        let o = |a: &str| derive_origin(TagRef::Form(&form(a)), &u).map(|o| o.canonical());
        assert_eq!(o("submit_data").unwrap(), "pay.site.com:443");
        assert_eq!(o("").unwrap(), "pay.site.com:443");
        assert_eq!(o("https://cdn.site.com:8443/v.js").unwrap(), "cdn.site.com:8443");
        assert_eq!(o("http://a.b/x").unwrap(), "a.b:80");
        assert!(matches!(o("http://"), Err(PageError::BadOriginUrl(_))));
    }

    #[test]
    fn mixed_origin_page_is_rejected() {
        let html = r#"<form name="a" secure="True" action="http://a.b/x"></form><script secure="True" src="v.js"></script>"#;
        let doc = parse_page(html, &url()).unwrap();
        assert!(matches!(doc.enclave_origin(), Err(PageError::MixedOrigins(_))));
    }

    #[test]
    fn payment_canonical_prefix() {
        let doc = parse_page(PAYMENT_PAGE, &url()).unwrap();
        let bytes = canonical_signing_bytes(TagRef::Form(&doc.secure_forms[0]));
        assert!(bytes.starts_with(b"form\npayment\nhttps://pay.site.com/submit_data\nPOST\n"));
    }

    #[test]
    fn whitespace_does_not_change_canonical_bytes() {
        let a = r#"<form name="p" action="s" method="post" secure="True"><input name="c" value="C"></form>"#;
        let b = "<form\n  name = 'p'\taction=s\n method=POST   secure=True >\n\n <input\nvalue=\"C\"   name=c />\n</form>";
        let da = parse_page(a, &url()).unwrap();
        let db = parse_page(b, &url()).unwrap();
        assert_eq!(
            canonical_signing_bytes(TagRef::Form(&da.secure_forms[0])),
            canonical_signing_bytes(TagRef::Form(&db.secure_forms[0]))
        );
    }

    #[test]
    fn sign_then_verify_and_idempotence() {
        let key = SigningKey::from_label("pay.site.com:443");
        let fetch = |src: &str| (src == "validator.js").then(|| b"function v(){return 1;}".to_vec());
        let signed = sign_page(PAYMENT_PAGE, &url(), &key, fetch).unwrap();
        let again = sign_page(&signed, &url(), &key, fetch).unwrap();
        assert_eq!(signed, again);
        let doc = parse_page_with(&signed, &url(), fetch).unwrap();
        let vk = key.verifying_key();
        assert!(verify_tag(TagRef::Form(&doc.secure_forms[0]), &vk));
        assert!(verify_tag(TagRef::Script(&doc.secure_scripts[0]), &vk));

        let tampered = signed.replace(r#"name="card""#, r#"name="cvv2""#);
        let doc = parse_page_with(&tampered, &url(), fetch).unwrap();
        assert!(!verify_tag(TagRef::Form(&doc.secure_forms[0]), &vk));

        let other = SigningKey::from_label("evil").verifying_key();
        let doc = parse_page_with(&signed, &url(), fetch).unwrap();
        assert!(!verify_tag(TagRef::Form(&doc.secure_forms[0]), &other));
    }
}
