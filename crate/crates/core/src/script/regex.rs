//! Backtracking matcher for the regex subset used by validation code:
//! literals, `.`, `\s \d \w` (and negations), `[...]` classes, groups with
//! `|`, the quantifiers `* + ? {n} {n,} {n,m}`, and the anchors `^ $`.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
enum Atom {
    Char(char),
    Any,
    Class { items: Vec<ClassItem>, negated: bool },
    Start,
    End,
    Group(Vec<Vec<Node>>),
}

#[derive(Debug, Clone, PartialEq)]
enum ClassItem {
    Char(char),
    Range(char, char),
    Space(bool),
    Digit(bool),
    Word(bool),
}

#[derive(Debug, Clone, PartialEq)]
struct Node {
    atom: Atom,
    min: u32,
    max: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Regex {
    source: String,
    flags: String,
    alts: Vec<Vec<Node>>,
    ignore_case: bool,
}

/// The whitespace class used by `\s`.
pub fn is_space(c: char) -> bool {
    matches!(c, ' ' | '\t' | '\n' | '\r' | '\x0c' | '\x0b')
}

fn is_word(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

impl Regex {
    pub fn new(source: &str, flags: &str) -> Result<Regex, String> {
        let mut ignore_case = false;
        for f in flags.chars() {
            match f {
                'g' => {}
                'i' => ignore_case = true,
                other => return Err(format!("unsupported regex flag '{other}'")),
            }
        }
        let chars: Vec<char> = source.chars().collect();
        let mut p = RegexParser { chars: &chars, pos: 0, depth: 0 };
        let alts = p.alternation()?;
        if p.pos != chars.len() {
            return Err(format!("unbalanced ')' in /{source}/"));
        }
        Ok(Regex { source: source.to_string(), flags: flags.to_string(), alts, ignore_case })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// True when the pattern matches anywhere in `text`. `steps` is charged
    /// once per match attempt of a single atom; returns `None` once it runs out.
    pub fn test(&self, text: &str, steps: &mut u64) -> Option<bool> {
        let chars: Vec<char> = text.chars().collect();
        let m = Matcher { chars: &chars, ignore_case: self.ignore_case };
        for start in 0..=chars.len() {
            if m.alts(&self.alts, start, steps, &mut |_, _| Some(true))? {
                return Some(true);
            }
        }
        Some(false)
    }
}

impl fmt::Display for Regex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "/{}/{}", self.source, self.flags)
    }
}

struct RegexParser<'a> {
    chars: &'a [char],
    pos: usize,
    depth: usize,
}

impl RegexParser<'_> {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn alternation(&mut self) -> Result<Vec<Vec<Node>>, String> {
        let mut alts = vec![self.sequence()?];
        while self.peek() == Some('|') {
            self.pos += 1;
            alts.push(self.sequence()?);
        }
        Ok(alts)
    }

    fn sequence(&mut self) -> Result<Vec<Node>, String> {
        let mut seq = Vec::new();
        while let Some(c) = self.peek() {
            if c == '|' || c == ')' {
                break;
            }
            let atom = self.atom()?;
            let (min, max) = self.quantifier()?;
            if (min, max) != (1, Some(1)) && matches!(atom, Atom::Start | Atom::End) {
                return Err("quantified anchor".into());
            }
            seq.push(Node { atom, min, max });
        }
        Ok(seq)
    }

    fn atom(&mut self) -> Result<Atom, String> {
        let c = self.peek().ok_or("unexpected end of pattern")?;
        self.pos += 1;
        Ok(match c {
            '.' => Atom::Any,
            '^' => Atom::Start,
            '$' => Atom::End,
            '(' => {
                if self.chars.get(self.pos..self.pos + 2) == Some(&['?', ':']) {
                    self.pos += 2;
                }
                self.depth += 1;
                if self.depth > 32 {
                    return Err("groups nested too deeply".into());
                }
                let alts = self.alternation()?;
                self.depth -= 1;
                if self.peek() != Some(')') {
                    return Err("missing ')'".into());
                }
                self.pos += 1;
                Atom::Group(alts)
            }
            '[' => self.class()?,
            '\\' => match self.escape()? {
                ClassItem::Char(c) => Atom::Char(c),
                other => Atom::Class { items: vec![other], negated: false },
            },
            '*' | '+' | '?' | '{' => return Err(format!("nothing to repeat before '{c}'")),
            other => Atom::Char(other),
        })
    }

    fn escape(&mut self) -> Result<ClassItem, String> {
        let c = self.peek().ok_or("trailing backslash")?;
        self.pos += 1;
        Ok(match c {
            's' => ClassItem::Space(true),
            'S' => ClassItem::Space(false),
            'd' => ClassItem::Digit(true),
            'D' => ClassItem::Digit(false),
            'w' => ClassItem::Word(true),
            'W' => ClassItem::Word(false),
            'n' => ClassItem::Char('\n'),
            't' => ClassItem::Char('\t'),
            'r' => ClassItem::Char('\r'),
            'f' => ClassItem::Char('\x0c'),
            'v' => ClassItem::Char('\x0b'),
            c if c.is_ascii_alphanumeric() => return Err(format!("unsupported escape \\{c}")),
            c => ClassItem::Char(c),
        })
    }

    fn class(&mut self) -> Result<Atom, String> {
        let negated = self.peek() == Some('^');
        if negated {
            self.pos += 1;
        }
        let mut items = Vec::new();
        loop {
            let c = self.peek().ok_or("missing ']'")?;
            self.pos += 1;
            let item = match c {
                ']' => break,
                '\\' => self.escape()?,
                c => ClassItem::Char(c),
            };
            if let ClassItem::Char(lo) = item {
                if self.peek() == Some('-') && self.chars.get(self.pos + 1).is_some_and(|&n| n != ']') {
                    self.pos += 1;
                    let hi = match self.peek() {
                        Some('\\') => {
                            self.pos += 1;
                            match self.escape()? {
                                ClassItem::Char(h) => h,
                                _ => return Err("class shorthand used as range bound".into()),
                            }
                        }
                        Some(h) => {
                            self.pos += 1;
                            h
                        }
                        None => return Err("missing ']'".into()),
                    };
                    if hi < lo {
                        return Err(format!("range out of order {lo}-{hi}"));
                    }
                    items.push(ClassItem::Range(lo, hi));
                    continue;
                }
            }
            items.push(item);
        }
        Ok(Atom::Class { items, negated })
    }

    fn quantifier(&mut self) -> Result<(u32, Option<u32>), String> {
        let q = match self.peek() {
            Some('*') => (0, None),
            Some('+') => (1, None),
            Some('?') => (0, Some(1)),
            Some('{') => {
                let close = self.chars[self.pos..]
                    .iter()
                    .position(|&c| c == '}')
                    .ok_or("missing '}'")?;
                let body: String = self.chars[self.pos + 1..self.pos + close].iter().collect();
                let num = |s: &str| s.trim().parse::<u32>().map_err(|_| format!("bad repeat {{{body}}}"));
                let q = match body.split_once(',') {
                    None => {
                        let n = num(&body)?;
                        (n, Some(n))
                    }
                    Some((a, "")) => (num(a)?, None),
                    Some((a, b)) => (num(a)?, Some(num(b)?)),
                };
                if q.1.is_some_and(|m| m < q.0) || q.0 > 1000 {
                    return Err(format!("bad repeat {{{body}}}"));
                }
                self.pos += close;
                q
            }
            _ => return Ok((1, Some(1))),
        };
        self.pos += 1;
        if matches!(self.peek(), Some('*' | '+' | '?' | '{')) {
            return Err("stacked quantifiers".into());
        }
        Ok(q)
    }
}

struct Matcher<'a> {
    chars: &'a [char],
    ignore_case: bool,
}

type Cont<'c> = dyn FnMut(usize, &mut u64) -> Option<bool> + 'c;

impl Matcher<'_> {
    fn alts(&self, alts: &[Vec<Node>], pos: usize, steps: &mut u64, k: &mut Cont<'_>) -> Option<bool> {
        for seq in alts {
            if self.seq(seq, pos, steps, k)? {
                return Some(true);
            }
        }
        Some(false)
    }

    fn seq(&self, seq: &[Node], pos: usize, steps: &mut u64, k: &mut Cont<'_>) -> Option<bool> {
        match seq.split_first() {
            None => k(pos, steps),
            Some((node, rest)) => self.repeat(node, 0, pos, steps, &mut |p, s| self.seq(rest, p, s, k)),
        }
    }

    // Greedy: try one more repetition first, then fall back to stopping.
    fn repeat(&self, node: &Node, count: u32, pos: usize, steps: &mut u64, k: &mut Cont<'_>) -> Option<bool> {
        *steps = steps.checked_sub(1)?;
        if node.max.is_none_or(|m| count < m) {
            let more = self.atom(&node.atom, pos, steps, &mut |p, s| {
                if p == pos && count >= node.min {
                    // Zero-width iteration: stop looping.
                    return Some(false);
                }
                self.repeat(node, count + 1, p, s, k)
            })?;
            if more {
                return Some(true);
            }
        }
        if count >= node.min {
            return k(pos, steps);
        }
        Some(false)
    }

    fn atom(&self, atom: &Atom, pos: usize, steps: &mut u64, k: &mut Cont<'_>) -> Option<bool> {
        match atom {
            Atom::Start => return if pos == 0 { k(pos, steps) } else { Some(false) },
            Atom::End => return if pos == self.chars.len() { k(pos, steps) } else { Some(false) },
            Atom::Group(alts) => return self.alts(alts, pos, steps, k),
            _ => {}
        }
        let Some(&c) = self.chars.get(pos) else { return Some(false) };
        let ok = match atom {
            Atom::Char(want) => self.eq(*want, c),
            Atom::Any => c != '\n' && c != '\r',
            Atom::Class { items, negated } => items.iter().any(|i| self.class_has(i, c)) != *negated,
            Atom::Start | Atom::End | Atom::Group(_) => unreachable!(),
        };
        if ok {
            k(pos + 1, steps)
        } else {
            Some(false)
        }
    }

    fn eq(&self, a: char, b: char) -> bool {
        a == b || self.ignore_case && a.to_lowercase().eq(b.to_lowercase())
    }

    fn class_has(&self, item: &ClassItem, c: char) -> bool {
        match *item {
            ClassItem::Char(x) => self.eq(x, c),
            ClassItem::Range(lo, hi) => {
                (lo..=hi).contains(&c)
                    || self.ignore_case
                        && c.to_lowercase().chain(c.to_uppercase()).any(|v| (lo..=hi).contains(&v))
            }
            ClassItem::Space(pos) => is_space(c) == pos,
            ClassItem::Digit(pos) => c.is_ascii_digit() == pos,
            ClassItem::Word(pos) => is_word(c) == pos,
        }
    }
}
