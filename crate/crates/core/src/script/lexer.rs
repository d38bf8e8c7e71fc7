use super::ScriptError;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Num(f64),
    Str(String),
    Ident(String),
    Punct(&'static str),
    Regex { pattern: String, flags: String },
    Eof,
}

#[derive(Debug, Clone)]
pub struct Token {
    pub tok: Tok,
    pub line: u32,
    pub col: u32,
}

const PUNCTS: &[&str] = &[
    "===", "!==", "==", "!=", "<=", ">=", "&&", "||", "++", "--", "+=", "-=", "*=", "/=", "%=", "{", "}", "(", ")",
    "[", "]", ";", ",", ".", "?", ":", "=", "<", ">", "+", "-", "*", "/", "%", "!",
];

// After these keywords an expression starts, so '/' opens a regex.
const EXPR_KEYWORDS: &[&str] = &["return", "typeof", "case", "do", "else", "in", "new", "delete", "void"];

pub fn tokenize(src: &str) -> Result<Vec<Token>, ScriptError> {
    let mut lx = Lexer { chars: src.chars().collect(), pos: 0, line: 1, col: 1 };
    let mut out: Vec<Token> = Vec::new();
    loop {
        lx.skip_trivia()?;
        let (line, col) = (lx.line, lx.col);
        let Some(c) = lx.peek(0) else {
            out.push(Token { tok: Tok::Eof, line, col });
            return Ok(out);
        };
        let tok = if c.is_ascii_digit() || c == '.' && lx.peek(1).is_some_and(|d| d.is_ascii_digit()) {
            lx.number()?
        } else if c == '"' || c == '\'' {
            lx.string(c)?
        } else if c.is_alphabetic() || c == '_' || c == '$' {
            let mut s = String::new();
            while let Some(c) = lx.peek(0).filter(|c| c.is_alphanumeric() || *c == '_' || *c == '$') {
                s.push(c);
                lx.bump();
            }
            Tok::Ident(s)
        } else if c == '/' && regex_allowed(out.last()) {
            lx.regex()?
        } else {
            let p = PUNCTS
                .iter()
                .find(|p| p.chars().enumerate().all(|(i, pc)| lx.peek(i) == Some(pc)))
                .ok_or_else(|| lx.err(format!("unexpected character {c:?}")))?;
            for _ in 0..p.len() {
                lx.bump();
            }
            Tok::Punct(p)
        };
        out.push(Token { tok, line, col });
    }
}

fn regex_allowed(prev: Option<&Token>) -> bool {
    match prev.map(|t| &t.tok) {
        None => true,
        Some(Tok::Num(_) | Tok::Str(_) | Tok::Regex { .. }) => false,
        Some(Tok::Ident(id)) => EXPR_KEYWORDS.contains(&id.as_str()),
        Some(Tok::Punct(p)) => !matches!(*p, ")" | "]" | "++" | "--"),
        Some(Tok::Eof) => false,
    }
}

struct Lexer {
    chars: Vec<char>,
    pos: usize,
    line: u32,
    col: u32,
}

impl Lexer {
    fn peek(&self, ahead: usize) -> Option<char> {
        self.chars.get(self.pos + ahead).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek(0)?;
        self.pos += 1;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn err(&self, message: impl Into<String>) -> ScriptError {
        ScriptError::Parse { line: self.line, col: self.col, message: message.into() }
    }

    fn skip_trivia(&mut self) -> Result<(), ScriptError> {
        loop {
            match (self.peek(0), self.peek(1)) {
                (Some(c), _) if c.is_whitespace() => {
                    self.bump();
                }
                (Some('/'), Some('/')) => {
                    while self.peek(0).is_some_and(|c| c != '\n') {
                        self.bump();
                    }
                }
                (Some('/'), Some('*')) => {
                    self.bump();
                    self.bump();
                    loop {
                        match (self.peek(0), self.peek(1)) {
                            (Some('*'), Some('/')) => {
                                self.bump();
                                self.bump();
                                break;
                            }
                            (Some(_), _) => {
                                self.bump();
                            }
                            (None, _) => return Err(self.err("unterminated comment")),
                        }
                    }
                }
                _ => return Ok(()),
            }
        }
    }

    fn number(&mut self) -> Result<Tok, ScriptError> {
        let mut s = String::new();
        if self.peek(0) == Some('0') && matches!(self.peek(1), Some('x' | 'X')) {
            self.bump();
            self.bump();
            while let Some(c) = self.peek(0).filter(char::is_ascii_hexdigit) {
                s.push(c);
                self.bump();
            }
            return u64::from_str_radix(&s, 16)
                .map(|v| Tok::Num(v as f64))
                .map_err(|_| self.err("bad hex literal"));
        }
        while let Some(c) = self.peek(0) {
            let exp_sign = matches!(c, '+' | '-') && s.ends_with(['e', 'E']);
            if c.is_ascii_digit() || c == '.' || c == 'e' || c == 'E' || exp_sign {
                s.push(c);
                self.bump();
            } else {
                break;
            }
        }
        if self.peek(0).is_some_and(|c| c.is_alphabetic() || c == '_') {
            return Err(self.err("identifier directly after number"));
        }
        s.parse::<f64>().map(Tok::Num).map_err(|_| self.err(format!("bad number {s:?}")))
    }

    fn string(&mut self, quote: char) -> Result<Tok, ScriptError> {
        self.bump();
        let mut s = String::new();
        loop {
            let c = self.bump().ok_or_else(|| self.err("unterminated string"))?;
            match c {
                c if c == quote => return Ok(Tok::Str(s)),
                '\n' => return Err(self.err("newline in string literal")),
                '\\' => {
                    let e = self.bump().ok_or_else(|| self.err("unterminated string"))?;
                    match e {
                        'n' => s.push('\n'),
                        't' => s.push('\t'),
                        'r' => s.push('\r'),
                        'b' => s.push('\x08'),
                        'f' => s.push('\x0c'),
                        'v' => s.push('\x0b'),
                        '0' => s.push('\0'),
                        'x' => s.push(self.hex_escape(2)?),
                        'u' => s.push(self.hex_escape(4)?),
                        '\n' => {}
                        other => s.push(other),
                    }
                }
                c => s.push(c),
            }
        }
    }

    fn hex_escape(&mut self, n: usize) -> Result<char, ScriptError> {
        let mut v = 0u32;
        for _ in 0..n {
            let d = self.bump().and_then(|c| c.to_digit(16)).ok_or_else(|| self.err("bad escape"))?;
            v = v * 16 + d;
        }
        char::from_u32(v).ok_or_else(|| self.err("escape is not a scalar value"))
    }

    fn regex(&mut self) -> Result<Tok, ScriptError> {
        self.bump();
        let mut pattern = String::new();
        let mut in_class = false;
        loop {
            let c = self.bump().ok_or_else(|| self.err("unterminated regex"))?;
            match c {
                '\n' => return Err(self.err("unterminated regex")),
                '\\' => {
                    pattern.push(c);
                    pattern.push(self.bump().ok_or_else(|| self.err("unterminated regex"))?);
                }
                '[' => {
                    in_class = true;
                    pattern.push(c);
                }
                ']' => {
                    in_class = false;
                    pattern.push(c);
                }
                '/' if !in_class => break,
                c => pattern.push(c),
            }
        }
        let mut flags = String::new();
        while let Some(c) = self.peek(0).filter(|c| c.is_ascii_alphabetic()) {
            flags.push(c);
            self.bump();
        }
        Ok(Tok::Regex { pattern, flags })
    }
}
