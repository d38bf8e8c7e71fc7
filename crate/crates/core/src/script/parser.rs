use std::rc::Rc;

use super::lexer::{tokenize, Tok, Token};
use super::regex::Regex;
use super::ScriptError;

#[derive(Debug, PartialEq)]
pub struct FunctionDef {
    pub name: Option<String>,
    pub params: Vec<String>,
    pub body: Vec<Stmt>,
}

#[derive(Debug, PartialEq)]
pub enum Stmt {
    Var(Vec<(String, Option<Expr>)>),
    Function(Rc<FunctionDef>),
    If(Expr, Box<Stmt>, Option<Box<Stmt>>),
    While(Expr, Box<Stmt>),
    For(Option<Box<Stmt>>, Option<Expr>, Option<Expr>, Box<Stmt>),
    Return(Option<Expr>),
    Break,
    Continue,
    Block(Vec<Stmt>),
    Expr(Expr),
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Eq,
    Ne,
    StrictEq,
    StrictNe,
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnOp {
    Not,
    Neg,
    Plus,
    TypeOf,
}

#[derive(Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    Str(Rc<str>),
    Bool(bool),
    Null,
    Ident(String),
    Regex(Rc<Regex>),
    Object(Vec<(String, Expr)>),
    Function(Rc<FunctionDef>),
    Unary(UnOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Cond(Box<Expr>, Box<Expr>, Box<Expr>),
    /// `target op= value`; `None` is plain assignment.
    Assign(Option<BinOp>, Box<Expr>, Box<Expr>),
    /// `++x`, `x--`, ...: (delta, prefix, target).
    Update(f64, bool, Box<Expr>),
    Member(Box<Expr>, String),
    Index(Box<Expr>, Box<Expr>),
    Call(Box<Expr>, Vec<Expr>),
    New(Box<Expr>, Vec<Expr>),
}

const MAX_DEPTH: usize = 128;

pub fn parse(src: &str) -> Result<Vec<Stmt>, ScriptError> {
    let mut p = Parser { toks: tokenize(src)?, pos: 0, depth: 0, loops: 0, in_function: false };
    let mut body = Vec::new();
    while !p.at_eof() {
        body.push(p.statement()?);
    }
    Ok(body)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    depth: usize,
    loops: usize,
    in_function: bool,
}

impl Parser {
    fn tok(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn at_eof(&self) -> bool {
        matches!(self.tok(), Tok::Eof)
    }

    fn err(&self, message: impl Into<String>) -> ScriptError {
        let t = &self.toks[self.pos];
        ScriptError::Parse { line: t.line, col: t.col, message: message.into() }
    }

    fn advance(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if !self.at_eof() {
            self.pos += 1;
        }
        t
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.tok(), Tok::Punct(q) if *q == p)
    }

    fn is_keyword(&self, k: &str) -> bool {
        matches!(self.tok(), Tok::Ident(id) if id == k)
    }

    fn eat(&mut self, p: &str) -> bool {
        if self.is_punct(p) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, p: &str) -> Result<(), ScriptError> {
        if self.eat(p) {
            Ok(())
        } else {
            Err(self.err(format!("expected '{p}', found {}", describe(self.tok()))))
        }
    }

    fn ident(&mut self) -> Result<String, ScriptError> {
        match self.tok() {
            Tok::Ident(id) if !is_reserved(id) => {
                let id = id.clone();
                self.pos += 1;
                Ok(id)
            }
            other => Err(self.err(format!("expected identifier, found {}", describe(other)))),
        }
    }

    fn enter(&mut self) -> Result<(), ScriptError> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return Err(self.err("nesting too deep"));
        }
        Ok(())
    }

    fn end_statement(&mut self) -> Result<(), ScriptError> {
        if self.eat(";") || self.is_punct("}") || self.at_eof() {
            return Ok(());
        }
        // Automatic semicolon insertion across a line break.
        if self.pos > 0 && self.toks[self.pos - 1].line < self.toks[self.pos].line {
            return Ok(());
        }
        Err(self.err(format!("expected ';', found {}", describe(self.tok()))))
    }

    fn statement(&mut self) -> Result<Stmt, ScriptError> {
        self.enter()?;
        let s = self.statement_inner();
        self.depth -= 1;
        s
    }

    fn statement_inner(&mut self) -> Result<Stmt, ScriptError> {
        if self.eat(";") {
            return Ok(Stmt::Empty);
        }
        if self.eat("{") {
            return Ok(Stmt::Block(self.block_rest()?));
        }
        let keyword = match self.tok() {
            Tok::Ident(id) => id.clone(),
            _ => String::new(),
        };
        match keyword.as_str() {
            "var" | "let" | "const" => {
                self.pos += 1;
                let s = self.var_list()?;
                self.end_statement()?;
                Ok(s)
            }
            "function" => {
                self.pos += 1;
                let name = self.ident()?;
                Ok(Stmt::Function(self.function_rest(Some(name))?))
            }
            "if" => {
                self.pos += 1;
                self.expect("(")?;
                let cond = self.expression()?;
                self.expect(")")?;
                let then = Box::new(self.statement()?);
                let other = if self.is_keyword("else") {
                    self.pos += 1;
                    Some(Box::new(self.statement()?))
                } else {
                    None
                };
                Ok(Stmt::If(cond, then, other))
            }
            "while" => {
                self.pos += 1;
                self.expect("(")?;
                let cond = self.expression()?;
                self.expect(")")?;
                Ok(Stmt::While(cond, Box::new(self.loop_body()?)))
            }
            "for" => {
                self.pos += 1;
                self.expect("(")?;
                let init = if self.is_punct(";") {
                    None
                } else if self.is_keyword("var") || self.is_keyword("let") {
                    self.pos += 1;
                    Some(Box::new(self.var_list()?))
                } else {
                    Some(Box::new(Stmt::Expr(self.expression()?)))
                };
                self.expect(";")?;
                let cond = if self.is_punct(";") { None } else { Some(self.expression()?) };
                self.expect(";")?;
                let step = if self.is_punct(")") { None } else { Some(self.expression()?) };
                self.expect(")")?;
                Ok(Stmt::For(init, cond, step, Box::new(self.loop_body()?)))
            }
            "return" => {
                if !self.in_function {
                    return Err(self.err("return outside a function"));
                }
                let line = self.toks[self.pos].line;
                self.pos += 1;
                let value = if self.is_punct(";") || self.is_punct("}") || self.at_eof() || self.toks[self.pos].line > line
                {
                    None
                } else {
                    Some(self.expression()?)
                };
                self.end_statement()?;
                Ok(Stmt::Return(value))
            }
            "break" | "continue" => {
                if self.loops == 0 {
                    return Err(self.err(format!("{keyword} outside a loop")));
                }
                self.pos += 1;
                self.end_statement()?;
                Ok(if keyword == "break" { Stmt::Break } else { Stmt::Continue })
            }
            _ => {
                let e = self.expression()?;
                self.end_statement()?;
                Ok(Stmt::Expr(e))
            }
        }
    }

    fn loop_body(&mut self) -> Result<Stmt, ScriptError> {
        self.loops += 1;
        let body = self.statement();
        self.loops -= 1;
        body
    }

    fn block_rest(&mut self) -> Result<Vec<Stmt>, ScriptError> {
        let mut body = Vec::new();
        while !self.eat("}") {
            if self.at_eof() {
                return Err(self.err("expected '}' before end of input"));
            }
            body.push(self.statement()?);
        }
        Ok(body)
    }

    fn var_list(&mut self) -> Result<Stmt, ScriptError> {
        let mut decls = Vec::new();
        loop {
            let name = self.ident()?;
            let init = if self.eat("=") { Some(self.assignment()?) } else { None };
            decls.push((name, init));
            if !self.eat(",") {
                return Ok(Stmt::Var(decls));
            }
        }
    }

    fn function_rest(&mut self, name: Option<String>) -> Result<Rc<FunctionDef>, ScriptError> {
        self.expect("(")?;
        let mut params = Vec::new();
        if !self.eat(")") {
            loop {
                params.push(self.ident()?);
                if self.eat(")") {
                    break;
                }
                self.expect(",")?;
            }
        }
        self.expect("{")?;
        let saved = (self.in_function, self.loops);
        self.in_function = true;
        self.loops = 0;
        let body = self.block_rest();
        (self.in_function, self.loops) = saved;
        Ok(Rc::new(FunctionDef { name, params, body: body? }))
    }

    fn expression(&mut self) -> Result<Expr, ScriptError> {
        self.assignment()
    }

    fn assignment(&mut self) -> Result<Expr, ScriptError> {
        self.enter()?;
        let lhs = self.conditional();
        self.depth -= 1;
        let lhs = lhs?;
        let op = match self.tok() {
            Tok::Punct("=") => None,
            Tok::Punct("+=") => Some(BinOp::Add),
            Tok::Punct("-=") => Some(BinOp::Sub),
            Tok::Punct("*=") => Some(BinOp::Mul),
            Tok::Punct("/=") => Some(BinOp::Div),
            Tok::Punct("%=") => Some(BinOp::Rem),
            _ => return Ok(lhs),
        };
        if !matches!(lhs, Expr::Ident(_) | Expr::Member(..) | Expr::Index(..)) {
            return Err(self.err("invalid assignment target"));
        }
        self.pos += 1;
        self.enter()?;
        let rhs = self.assignment();
        self.depth -= 1;
        Ok(Expr::Assign(op, Box::new(lhs), Box::new(rhs?)))
    }

    fn conditional(&mut self) -> Result<Expr, ScriptError> {
        let cond = self.binary(0)?;
        if !self.eat("?") {
            return Ok(cond);
        }
        let a = self.assignment()?;
        self.expect(":")?;
        let b = self.assignment()?;
        Ok(Expr::Cond(Box::new(cond), Box::new(a), Box::new(b)))
    }

    fn binary(&mut self, min_prec: u8) -> Result<Expr, ScriptError> {
        let mut lhs = self.unary()?;
        while let Tok::Punct(p) = *self.tok() {
            let Some(prec) = precedence(p) else { break };
            if prec < min_prec {
                break;
            }
            self.pos += 1;
            self.enter()?;
            let rhs = self.binary(prec + 1);
            self.depth -= 1;
            let rhs = Box::new(rhs?);
            let lhs_box = Box::new(lhs);
            lhs = match p {
                "||" => Expr::Or(lhs_box, rhs),
                "&&" => Expr::And(lhs_box, rhs),
                _ => Expr::Binary(binop(p), lhs_box, rhs),
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ScriptError> {
        let op = match self.tok() {
            Tok::Punct("!") => UnOp::Not,
            Tok::Punct("-") => UnOp::Neg,
            Tok::Punct("+") => UnOp::Plus,
            Tok::Ident(k) if k == "typeof" => UnOp::TypeOf,
            Tok::Punct(p @ ("++" | "--")) => {
                let delta = if *p == "++" { 1.0 } else { -1.0 };
                self.pos += 1;
                let target = self.unary()?;
                return self.update(delta, true, target);
            }
            _ => return self.postfix(),
        };
        self.pos += 1;
        self.enter()?;
        let operand = self.unary();
        self.depth -= 1;
        Ok(Expr::Unary(op, Box::new(operand?)))
    }

    fn update(&self, delta: f64, prefix: bool, target: Expr) -> Result<Expr, ScriptError> {
        if !matches!(target, Expr::Ident(_) | Expr::Member(..) | Expr::Index(..)) {
            return Err(self.err("invalid increment target"));
        }
        Ok(Expr::Update(delta, prefix, Box::new(target)))
    }

    fn postfix(&mut self) -> Result<Expr, ScriptError> {
        let mut e = self.call_chain()?;
        if let Tok::Punct(p @ ("++" | "--")) = *self.tok() {
            if self.toks[self.pos - 1].line == self.toks[self.pos].line {
                self.pos += 1;
                e = self.update(if p == "++" { 1.0 } else { -1.0 }, false, e)?;
            }
        }
        Ok(e)
    }

    fn call_chain(&mut self) -> Result<Expr, ScriptError> {
        let mut e = if self.is_keyword("new") {
            self.pos += 1;
            let mut callee = self.primary()?;
            while self.eat(".") {
                callee = Expr::Member(Box::new(callee), self.property_name()?);
            }
            let args = if self.eat("(") { self.arguments()? } else { Vec::new() };
            Expr::New(Box::new(callee), args)
        } else {
            self.primary()?
        };
        loop {
            if self.eat(".") {
                e = Expr::Member(Box::new(e), self.property_name()?);
            } else if self.eat("[") {
                let key = self.expression()?;
                self.expect("]")?;
                e = Expr::Index(Box::new(e), Box::new(key));
            } else if self.eat("(") {
                e = Expr::Call(Box::new(e), self.arguments()?);
            } else {
                return Ok(e);
            }
        }
    }

    fn property_name(&mut self) -> Result<String, ScriptError> {
        match self.advance() {
            Tok::Ident(id) => Ok(id),
            other => Err(self.err(format!("expected property name, found {}", describe(&other)))),
        }
    }

    fn arguments(&mut self) -> Result<Vec<Expr>, ScriptError> {
        let mut args = Vec::new();
        if self.eat(")") {
            return Ok(args);
        }
        loop {
            args.push(self.assignment()?);
            if self.eat(")") {
                return Ok(args);
            }
            self.expect(",")?;
        }
    }

    fn primary(&mut self) -> Result<Expr, ScriptError> {
        let at = self.pos;
        match self.advance() {
            Tok::Num(n) => Ok(Expr::Num(n)),
            Tok::Str(s) => Ok(Expr::Str(s.into())),
            Tok::Regex { pattern, flags } => match Regex::new(&pattern, &flags) {
                Ok(re) => Ok(Expr::Regex(Rc::new(re))),
                Err(msg) => {
                    self.pos = at;
                    Err(self.err(msg))
                }
            },
            Tok::Punct("(") => {
                let e = self.expression()?;
                self.expect(")")?;
                Ok(e)
            }
            Tok::Punct("{") => self.object_literal(),
            Tok::Ident(id) => match id.as_str() {
                "true" => Ok(Expr::Bool(true)),
                "false" => Ok(Expr::Bool(false)),
                "null" => Ok(Expr::Null),
                "function" => {
                    let name = if matches!(self.tok(), Tok::Ident(_)) { Some(self.ident()?) } else { None };
                    Ok(Expr::Function(self.function_rest(name)?))
                }
                _ if is_reserved(&id) => {
                    self.pos = at;
                    Err(self.err(format!("unexpected keyword '{id}'")))
                }
                _ => Ok(Expr::Ident(id)),
            },
            other => {
                self.pos = at;
                Err(self.err(format!("unexpected {}", describe(&other))))
            }
        }
    }

    fn object_literal(&mut self) -> Result<Expr, ScriptError> {
        let mut props = Vec::new();
        while !self.eat("}") {
            let key = match self.advance() {
                Tok::Ident(id) => id,
                Tok::Str(s) => s,
                Tok::Num(n) => super::value::number_to_string(n),
                other => return Err(self.err(format!("bad property key {}", describe(&other)))),
            };
            self.expect(":")?;
            props.push((key, self.assignment()?));
            if !self.eat(",") {
                self.expect("}")?;
                break;
            }
        }
        Ok(Expr::Object(props))
    }
}

fn precedence(p: &str) -> Option<u8> {
    Some(match p {
        "||" => 1,
        "&&" => 2,
        "==" | "!=" | "===" | "!==" => 3,
        "<" | "<=" | ">" | ">=" => 4,
        "+" | "-" => 5,
        "*" | "/" | "%" => 6,
        _ => return None,
    })
}

fn binop(p: &str) -> BinOp {
    match p {
        "+" => BinOp::Add,
        "-" => BinOp::Sub,
        "*" => BinOp::Mul,
        "/" => BinOp::Div,
        "%" => BinOp::Rem,
        "==" => BinOp::Eq,
        "!=" => BinOp::Ne,
        "===" => BinOp::StrictEq,
        "!==" => BinOp::StrictNe,
        "<" => BinOp::Lt,
        "<=" => BinOp::Le,
        ">" => BinOp::Gt,
        ">=" => BinOp::Ge,
        _ => unreachable!("not a binary operator: {p}"),
    }
}

fn is_reserved(id: &str) -> bool {
    matches!(
        id,
        "var" | "let" | "const" | "function" | "if" | "else" | "while" | "for" | "return" | "break" | "continue"
            | "new" | "typeof" | "true" | "false" | "null"
    )
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Num(n) => format!("number {n}"),
        Tok::Str(_) => "string literal".into(),
        Tok::Ident(id) => format!("'{id}'"),
        Tok::Punct(p) => format!("'{p}'"),
        Tok::Regex { .. } => "regex literal".into(),
        Tok::Eof => "end of input".into(),
    }
}
