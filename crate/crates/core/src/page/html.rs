//! Lenient tokenizer for the HTML subset. It never fails: problems are
//! recorded on the token so the caller can decide whether they matter
//! (inside a secure tag) or not (attacker-controlled untrusted markup).

use std::ops::Range;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attribute {
    pub name: String,
    pub value: String,
    /// Byte span of the whole `name="value"` text in the source.
    pub span: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StartTag {
    pub name: String,
    pub attrs: Vec<Attribute>,
    pub self_closing: bool,
    /// Byte span from `<` through `>`.
    pub span: Range<usize>,
    /// Set when an attribute was malformed or duplicated, or the tag never closed.
    pub malformed: Option<String>,
}

impl StartTag {
    pub fn attr(&self, name: &str) -> Option<&str> {
        self.attrs.iter().find(|a| a.name == name).map(|a| a.value.as_str())
    }

    pub fn attribute(&self, name: &str) -> Option<&Attribute> {
        self.attrs.iter().find(|a| a.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Token {
    Start(StartTag),
    End { name: String },
    /// Raw body of a `<script>` element; `terminated` is false when no
    /// closing tag was found.
    RawText { text: String, terminated: bool },
    Text,
}

pub fn tokenize(src: &str) -> Vec<Token> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'<' {
            let next = memchr(b'<', &bytes[i..]).map_or(bytes.len(), |n| i + n);
            out.push(Token::Text);
            i = next;
            continue;
        }
        if src[i..].starts_with("<!--") {
            i = src[i + 4..].find("-->").map_or(bytes.len(), |n| i + 4 + n + 3);
            continue;
        }
        if src[i..].starts_with("<!") || src[i..].starts_with("<?") {
            i = memchr(b'>', &bytes[i..]).map_or(bytes.len(), |n| i + n + 1);
            continue;
        }
        if src[i..].starts_with("</") {
            let (inner_end, end) = match memchr(b'>', &bytes[i..]) {
                Some(n) => (i + n, i + n + 1),
                None => (bytes.len(), bytes.len()),
            };
            let name: String = src[i + 2..inner_end]
                .trim()
                .chars()
                .take_while(|c| !c.is_whitespace())
                .collect::<String>()
                .to_ascii_lowercase();
            out.push(Token::End { name });
            i = end;
            continue;
        }
        let name_start = i + 1;
        let name_len = src[name_start..]
            .find(|c: char| c.is_whitespace() || c == '>' || c == '/')
            .unwrap_or(src.len() - name_start);
        if name_len == 0 || !bytes[name_start].is_ascii_alphabetic() {
            // A stray '<' in text.
            out.push(Token::Text);
            i += 1;
            continue;
        }
        let (tag, end) = start_tag(src, i, name_start + name_len);
        i = end;
        let is_script = tag.name == "script" && !tag.self_closing;
        out.push(Token::Start(tag));
        if is_script {
            let lower = src[i..].to_ascii_lowercase();
            match lower.find("</script") {
                Some(n) => {
                    out.push(Token::RawText { text: src[i..i + n].to_string(), terminated: true });
                    i += n;
                }
                None => {
                    out.push(Token::RawText { text: src[i..].to_string(), terminated: false });
                    i = bytes.len();
                }
            }
        }
    }
    out
}

fn memchr(needle: u8, hay: &[u8]) -> Option<usize> {
    hay.iter().position(|&b| b == needle)
}

fn start_tag(src: &str, lt: usize, name_end: usize) -> (StartTag, usize) {
    let bytes = src.as_bytes();
    let mut tag = StartTag {
        name: src[lt + 1..name_end].to_ascii_lowercase(),
        attrs: Vec::new(),
        self_closing: false,
        span: lt..lt,
        malformed: None,
    };
    let mut i = name_end;
    loop {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i >= bytes.len() {
            tag.malformed.get_or_insert_with(|| "unterminated tag".into());
            break;
        }
        match bytes[i] {
            b'>' => {
                i += 1;
                break;
            }
            b'/' => {
                if bytes.get(i + 1) == Some(&b'>') {
                    tag.self_closing = true;
                    i += 2;
                    break;
                }
                i += 1;
                continue;
            }
            b'<' => {
                tag.malformed.get_or_insert_with(|| "'<' inside tag".into());
                break;
            }
            _ => {}
        }
        let attr_start = i;
        while i < bytes.len() && !matches!(bytes[i], b'=' | b'>' | b'/' | b'<') && !bytes[i].is_ascii_whitespace() {
            if matches!(bytes[i], b'"' | b'\'') {
                tag.malformed.get_or_insert_with(|| "quote in attribute name".into());
            }
            i += 1;
        }
        let name = src[attr_start..i].to_ascii_lowercase();
        if name.is_empty() {
            // '=' with no name.
            tag.malformed.get_or_insert_with(|| "empty attribute name".into());
            i += 1;
            continue;
        }
        let mut j = i;
        while j < bytes.len() && bytes[j].is_ascii_whitespace() {
            j += 1;
        }
        let mut value = String::new();
        if j < bytes.len() && bytes[j] == b'=' {
            j += 1;
            while j < bytes.len() && bytes[j].is_ascii_whitespace() {
                j += 1;
            }
            match bytes.get(j) {
                Some(&q @ (b'"' | b'\'')) => match memchr(q, &bytes[j + 1..]) {
                    Some(n) => {
                        value = decode_entities(&src[j + 1..j + 1 + n]);
                        j = j + 1 + n + 1;
                    }
                    None => {
                        tag.malformed.get_or_insert_with(|| format!("unterminated quote in {name}"));
                        value = decode_entities(&src[j + 1..]);
                        j = bytes.len();
                    }
                },
                Some(_) => {
                    let start = j;
                    while j < bytes.len() && !bytes[j].is_ascii_whitespace() && bytes[j] != b'>' {
                        if matches!(bytes[j], b'"' | b'\'' | b'<' | b'=' | b'`') {
                            tag.malformed.get_or_insert_with(|| format!("bad unquoted value for {name}"));
                        }
                        j += 1;
                    }
                    value = decode_entities(&src[start..j]);
                }
                None => {
                    tag.malformed.get_or_insert_with(|| format!("missing value for {name}"));
                }
            }
            i = j;
        }
        if tag.attrs.iter().any(|a| a.name == name) {
            tag.malformed.get_or_insert_with(|| format!("duplicate attribute {name}"));
        } else {
            tag.attrs.push(Attribute { name, value, span: attr_start..i });
        }
    }
    tag.span = lt..i;
    (tag, i)
}

/// Decodes the handful of character references that appear in attribute
/// values. Unknown references are kept verbatim.
pub fn decode_entities(s: &str) -> String {
    if !s.contains('&') {
        return s.to_string();
    }
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(pos) = rest.find('&') {
        out.push_str(&rest[..pos]);
        rest = &rest[pos..];
        let Some(semi) = rest.bytes().take(12).position(|b| b == b';') else {
                out.push('&');
            rest = &rest[1..];
            continue;
        };
        let entity = &rest[1..semi];
        let decoded = match entity {
            "amp" => Some('&'),
            "lt" => Some('<'),
            "gt" => Some('>'),
            "quot" => Some('"'),
            "apos" => Some('\''),
            _ if entity.starts_with("#x") || entity.starts_with("#X") => {
                u32::from_str_radix(&entity[2..], 16).ok().and_then(char::from_u32)
            }
            _ if entity.starts_with('#') => entity[1..].parse::<u32>().ok().and_then(char::from_u32),
            _ => None,
        };
        match decoded {
            Some(c) => {
                out.push(c);
                rest = &rest[semi + 1..];
            }
            None => {
                out.push('&');
                rest = &rest[1..];
            }
        }
    }
    out.push_str(rest);
    out
}
