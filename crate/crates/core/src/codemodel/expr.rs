//! The built-in predictive-expression dialect.
//!
//! A program is a sequence of `let` bindings followed by one expression that
//! yields the probability of label 1 for a single feature row:
//!
//! ```text
//! program     = { binding } expr [ ";" ] ;
//! binding     = "let" ident "=" expr ";" ;
//! expr        = conditional | sum ;
//! conditional = "if" comparison "then" expr "else" expr ;
//! comparison  = sum ( "<" | "<=" | ">" | ">=" | "==" | "!=" ) sum ;
//! sum         = product { ( "+" | "-" ) product } ;
//! product     = unary { ( "*" | "/" ) unary } ;
//! unary       = ( "-" | "+" ) unary | atom ;
//! atom        = number | ident | feature_ref | call | "(" expr ")" ;
//! feature_ref = "row" "[" string "]" ;
//! call        = func "(" expr { "," expr } ")" ;
//! func        = "abs" | "exp" | "sigmoid" | "clamp" | "min" | "max" ;
//! ```
//!
//! `#` starts a comment running to the end of the line. A bare identifier
//! names an earlier binding or, failing that, a feature; `row['name']`
//! always names a feature and accepts any characters except the quote.
//! `abs`, `exp`, `sigmoid` and `clamp` take one argument; `min` and `max`
//! take one or more.

use std::fmt;

use serde::{Deserialize, Serialize};

/// What a division does when its denominator is exactly zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivisionGuard {
    /// Stop evaluation with [`EvalFault::DivisionByZero`].
    #[default]
    Fault,
    /// Follow IEEE-754 (±inf or NaN).
    Ieee,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Abs,
    Exp,
    Sigmoid,
    Clamp,
    Min,
    Max,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "abs" => Func::Abs,
            "exp" => Func::Exp,
            "sigmoid" => Func::Sigmoid,
            "clamp" => Func::Clamp,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Abs => "abs",
            Func::Exp => "exp",
            Func::Sigmoid => "sigmoid",
            Func::Clamp => "clamp",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    fn is_variadic(self) -> bool {
        matches!(self, Func::Min | Func::Max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div(DivisionGuard),
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div(_) => "/",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl CmpOp {
    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
        }
    }

    fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            CmpOp::Lt => lhs < rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Gt => lhs > rhs,
            CmpOp::Ge => lhs >= rhs,
            CmpOp::Eq => lhs == rhs,
            CmpOp::Ne => lhs != rhs,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    /// Index into the program's declared feature names.
    Feature(usize),
    /// Index of an earlier `let` binding.
    Binding(usize),
    Neg(Box<Expr>),
    Binary { op: BinOp, lhs: Box<Expr>, rhs: Box<Expr> },
    Call { func: Func, args: Vec<Expr> },
    If { cmp: CmpOp, lhs: Box<Expr>, rhs: Box<Expr>, then: Box<Expr>, otherwise: Box<Expr> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalFault {
    DivisionByZero,
}

impl fmt::Display for EvalFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalFault::DivisionByZero => f.write_str("division by zero"),
        }
    }
}

pub fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

pub fn clamp_unit(v: f64) -> f64 {
    1.0f64.min(0.0f64.max(v))
}

impl Expr {
    fn eval(&self, features: &[f64], bindings: &[f64]) -> Result<f64, EvalFault> {
        Ok(match self {
            Expr::Const(c) => *c,
            Expr::Feature(j) => features[*j],
            Expr::Binding(k) => bindings[*k],
            Expr::Neg(inner) => -inner.eval(features, bindings)?,
            Expr::Binary { op, lhs, rhs } => {
                let a = lhs.eval(features, bindings)?;
                let b = rhs.eval(features, bindings)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div(DivisionGuard::Fault) if b == 0.0 => return Err(EvalFault::DivisionByZero),
                    BinOp::Div(_) => a / b,
                }
            }
            Expr::Call { func, args } => {
                let first = args[0].eval(features, bindings)?;
                match func {
                    Func::Abs => first.abs(),
                    Func::Exp => first.exp(),
                    Func::Sigmoid => sigmoid(first),
                    Func::Clamp => clamp_unit(first),
                    Func::Min | Func::Max => {
                        let mut acc = first;
                        for arg in &args[1..] {
                            let v = arg.eval(features, bindings)?;
                            // NaN-propagating, unlike f64::min/max
                            acc = if acc.is_nan() || v.is_nan() {
                                f64::NAN
                            } else if (*func == Func::Min) == (v < acc) {
                                v
                            } else {
                                acc
                            };
                        }
                        acc
                    }
                }
            }
            Expr::If { cmp, lhs, rhs, then, otherwise } => {
                if cmp.holds(lhs.eval(features, bindings)?, rhs.eval(features, bindings)?) {
                    then.eval(features, bindings)?
                } else {
                    otherwise.eval(features, bindings)?
                }
            }
        })
    }

    fn fmt_with(&self, f: &mut fmt::Formatter<'_>, program: &ExprProgram) -> fmt::Result {
        match self {
            Expr::Const(c) if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) => write!(f, "({c})"),
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Feature(j) => {
                let name = &program.features[*j];
                if is_plain_identifier(name) && !program.bindings.iter().any(|(b, _)| b == name) {
                    f.write_str(name)
                } else if name.contains('\'') {
                    write!(f, "row[\"{name}\"]")
                } else {
                    write!(f, "row['{name}']")
                }
            }
            Expr::Binding(k) => f.write_str(&program.bindings[*k].0),
            Expr::Neg(inner) => {
                f.write_str("(-")?;
                inner.fmt_with(f, program)?;
                f.write_str(")")
            }
            Expr::Binary { op, lhs, rhs } => {
                f.write_str("(")?;
                lhs.fmt_with(f, program)?;
                write!(f, " {} ", op.symbol())?;
                rhs.fmt_with(f, program)?;
                f.write_str(")")
            }
            Expr::Call { func, args } => {
                write!(f, "{}(", func.name())?;
                for (i, arg) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    arg.fmt_with(f, program)?;
                }
                f.write_str(")")
            }
            Expr::If { cmp, lhs, rhs, then, otherwise } => {
                f.write_str("(if ")?;
                lhs.fmt_with(f, program)?;
                write!(f, " {} ", cmp.symbol())?;
                rhs.fmt_with(f, program)?;
                f.write_str(" then ")?;
                then.fmt_with(f, program)?;
                f.write_str(" else ")?;
                otherwise.fmt_with(f, program)?;
                f.write_str(")")
            }
        }
    }

    fn max_feature(&self) -> Option<usize> {
        match self {
            Expr::Feature(j) => Some(*j),
            Expr::Const(_) | Expr::Binding(_) => None,
            Expr::Neg(inner) => inner.max_feature(),
            Expr::Binary { lhs, rhs, .. } => lhs.max_feature().max(rhs.max_feature()),
            Expr::Call { args, .. } => args.iter().filter_map(Expr::max_feature).max(),
            Expr::If { lhs, rhs, then, otherwise, .. } => [lhs, rhs, then, otherwise]
                .iter()
                .filter_map(|e| e.max_feature())
                .max(),
        }
    }
}

const KEYWORDS: [&str; 5] = ["let", "if", "then", "else", "row"];

fn is_plain_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    let head_ok = chars.next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_');
    head_ok
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !KEYWORDS.contains(&name)
        && Func::from_name(name).is_none()
}

/// A parsed expression-dialect program bound to a feature-name list.
#[derive(Debug, Clone, PartialEq)]
pub struct ExprProgram {
    features: Vec<String>,
    bindings: Vec<(String, Expr)>,
    body: Expr,
}

impl ExprProgram {
    pub fn features(&self) -> &[String] {
        &self.features
    }

    pub fn bindings(&self) -> &[(String, Expr)] {
        &self.bindings
    }

    pub fn body(&self) -> &Expr {
        &self.body
    }

    /// Evaluates the program on one row laid out in `features()` order.
    pub fn try_eval(&self, row: &[f64]) -> Result<f64, EvalFault> {
        let mut values = Vec::with_capacity(self.bindings.len());
        for (_, expr) in &self.bindings {
            let v = expr.eval(row, &values)?;
            values.push(v);
        }
        self.body.eval(row, &values)
    }

    /// Like [`ExprProgram::try_eval`] but maps a division fault to NaN.
    pub fn eval(&self, row: &[f64]) -> f64 {
        self.try_eval(row).unwrap_or(f64::NAN)
    }

    /// Number of leading row values the program reads.
    pub fn required_width(&self) -> usize {
        self.bindings
            .iter()
            .map(|(_, e)| e)
            .chain(std::iter::once(&self.body))
            .filter_map(Expr::max_feature)
            .max()
            .map_or(0, |j| j + 1)
    }
}

impl fmt::Display for ExprProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, expr) in &self.bindings {
            write!(f, "let {name} = ")?;
            expr.fmt_with(f, self)?;
            f.write_str(";\n")?;
        }
        self.body.fmt_with(f, self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExprError {
    #[error("syntax error at {line}:{column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("unknown feature `{name}` at {line}:{column}")]
    UnknownFeature { line: usize, column: usize, name: String },
}

/// Parses `source` against the declared feature names. Divisions use the
/// default [`DivisionGuard::Fault`] policy.
pub fn parse_expression_model(source: &str, feature_names: &[String]) -> Result<ExprProgram, ExprError> {
    parse_with_guard(source, feature_names, DivisionGuard::default())
}

pub fn parse_with_guard(
    source: &str,
    feature_names: &[String],
    guard: DivisionGuard,
) -> Result<ExprProgram, ExprError> {
    let tokens = lex(source)?;
    let mut parser = Parser { tokens, pos: 0, features: feature_names, bindings: Vec::new(), guard };
    let mut bindings = Vec::new();
    while parser.peek_is(&Tok::Ident("let".into())) {
        parser.pos += 1;
        let (name, at) = parser.ident()?;
        if KEYWORDS.contains(&name.as_str()) || Func::from_name(&name).is_some() {
            return Err(at.syntax(format!("`{name}` is reserved")));
        }
        if parser.bindings.contains(&name) {
            return Err(at.syntax(format!("`{name}` is already bound")));
        }
        parser.expect(&Tok::Assign)?;
        let expr = parser.expr()?;
        parser.expect(&Tok::Semi)?;
        parser.bindings.push(name.clone());
        bindings.push((name, expr));
    }
    let body = parser.expr()?;
    if parser.peek_is(&Tok::Semi) {
        parser.pos += 1;
    }
    if let Some(tok) = parser.tokens.get(parser.pos) {
        return Err(tok.at.syntax(format!("unexpected {}", tok.tok)));
    }
    Ok(ExprProgram { features: feature_names.to_vec(), bindings, body })
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Str(String),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Semi,
    Assign,
    Cmp(CmpOp),
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Num(v) => write!(f, "number {v}"),
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Str(s) => write!(f, "string '{s}'"),
            Tok::Plus => f.write_str("`+`"),
            Tok::Minus => f.write_str("`-`"),
            Tok::Star => f.write_str("`*`"),
            Tok::Slash => f.write_str("`/`"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::LBracket => f.write_str("`[`"),
            Tok::RBracket => f.write_str("`]`"),
            Tok::Comma => f.write_str("`,`"),
            Tok::Semi => f.write_str("`;`"),
            Tok::Assign => f.write_str("`=`"),
            Tok::Cmp(op) => write!(f, "`{}`", op.symbol()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Pos {
    line: usize,
    column: usize,
}

impl Pos {
    fn syntax(self, message: impl Into<String>) -> ExprError {
        ExprError::Syntax { line: self.line, column: self.column, message: message.into() }
    }
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    at: Pos,
}

fn lex(source: &str) -> Result<Vec<Token>, ExprError> {
    let chars: Vec<char> = source.chars().collect();
    let mut tokens = Vec::new();
    let (mut i, mut line, mut line_start) = (0, 1, 0);
    while i < chars.len() {
        let c = chars[i];
        let at = Pos { line, column: i - line_start + 1 };
        if c == '\n' {
            line += 1;
            line_start = i + 1;
            i += 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let next = chars.get(i + 1).copied();
        let (tok, len) = match c {
            '+' => (Tok::Plus, 1),
            '-' => (Tok::Minus, 1),
            '*' => (Tok::Star, 1),
            '/' => (Tok::Slash, 1),
            '(' => (Tok::LParen, 1),
            ')' => (Tok::RParen, 1),
            '[' => (Tok::LBracket, 1),
            ']' => (Tok::RBracket, 1),
            ',' => (Tok::Comma, 1),
            ';' => (Tok::Semi, 1),
            '<' if next == Some('=') => (Tok::Cmp(CmpOp::Le), 2),
            '<' => (Tok::Cmp(CmpOp::Lt), 1),
            '>' if next == Some('=') => (Tok::Cmp(CmpOp::Ge), 2),
            '>' => (Tok::Cmp(CmpOp::Gt), 1),
            '=' if next == Some('=') => (Tok::Cmp(CmpOp::Eq), 2),
            '=' => (Tok::Assign, 1),
            '!' if next == Some('=') => (Tok::Cmp(CmpOp::Ne), 2),
            '\'' | '"' => {
                let end = chars[i + 1..]
                    .iter()
                    .position(|&d| d == c || d == '\n')
                    .map(|p| p + i + 1)
                    .filter(|&e| chars[e] == c)
                    .ok_or_else(|| at.syntax("unterminated string"))?;
                (Tok::Str(chars[i + 1..end].iter().collect()), end - i + 1)
            }
            c if c.is_ascii_digit() || (c == '.' && next.is_some_and(|d| d.is_ascii_digit())) => {
                let len = number_len(&chars[i..]);
                let text: String = chars[i..i + len].iter().collect();
                let value: f64 = text.parse().map_err(|_| at.syntax(format!("bad number `{text}`")))?;
                (Tok::Num(value), len)
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let len = chars[i..]
                    .iter()
                    .take_while(|d| d.is_ascii_alphanumeric() || **d == '_')
                    .count();
                (Tok::Ident(chars[i..i + len].iter().collect()), len)
            }
            other => return Err(at.syntax(format!("unexpected character `{other}`"))),
        };
        tokens.push(Token { tok, at });
        i += len;
    }
    Ok(tokens)
}

fn number_len(chars: &[char]) -> usize {
    let digits = |from: usize| chars[from..].iter().take_while(|c| c.is_ascii_digit()).count();
    let mut len = digits(0);
    if chars.get(len) == Some(&'.') {
        len += 1 + digits(len + 1);
    }
    if matches!(chars.get(len), Some('e' | 'E')) {
        let mut exp = len + 1;
        if matches!(chars.get(exp), Some('+' | '-')) {
            exp += 1;
        }
        let exp_digits = digits(exp);
        if exp_digits > 0 {
            len = exp + exp_digits;
        }
    }
    len
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    features: &'a [String],
    bindings: Vec<String>,
    guard: DivisionGuard,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|t| &t.tok)
    }

    fn peek_is(&self, tok: &Tok) -> bool {
        self.peek() == Some(tok)
    }

    fn here(&self) -> Pos {
        self.tokens
            .get(self.pos)
            .or_else(|| self.tokens.last())
            .map_or(Pos { line: 1, column: 1 }, |t| t.at)
    }

    fn unexpected(&self, wanted: &str) -> ExprError {
        match self.tokens.get(self.pos) {
            Some(t) => t.at.syntax(format!("expected {wanted}, found {}", t.tok)),
            None => self.here().syntax(format!("expected {wanted}, found end of input")),
        }
    }

    fn expect(&mut self, tok: &Tok) -> Result<(), ExprError> {
        if self.peek_is(tok) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.unexpected(&tok.to_string()))
        }
    }

    fn ident(&mut self) -> Result<(String, Pos), ExprError> {
        match self.tokens.get(self.pos) {
            Some(Token { tok: Tok::Ident(name), at }) => {
                let out = (name.clone(), *at);
                self.pos += 1;
                Ok(out)
            }
            _ => Err(self.unexpected("identifier")),
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        if self.peek_is(&Tok::Ident("if".into())) {
            self.pos += 1;
            let lhs = self.sum()?;
            let cmp = match self.peek() {
                Some(Tok::Cmp(op)) => *op,
                _ => return Err(self.unexpected("comparison operator")),
            };
            self.pos += 1;
            let rhs = self.sum()?;
            self.expect(&Tok::Ident("then".into()))?;
            let then = self.expr()?;
            self.expect(&Tok::Ident("else".into()))?;
            let otherwise = self.expr()?;
            return Ok(Expr::If {
                cmp,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
                then: Box::new(then),
                otherwise: Box::new(otherwise),
            });
        }
        self.sum()
    }

    fn sum(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.product()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => BinOp::Add,
                Some(Tok::Minus) => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.product()?;
            lhs = Expr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) };
        }
    }

    fn product(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Star) => BinOp::Mul,
                Some(Tok::Slash) => BinOp::Div(self.guard),
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) };
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            Some(Tok::Minus) => {
                self.pos += 1;
                Ok(match self.unary()? {
                    Expr::Const(c) => Expr::Const(-c),
                    other => Expr::Neg(Box::new(other)),
                })
            }
            Some(Tok::Plus) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.atom(),
        }
    }

    fn feature(&self, name: &str, at: Pos) -> Result<Expr, ExprError> {
        self.features
            .iter()
            .position(|f| f == name)
            .map(Expr::Feature)
            .ok_or_else(|| ExprError::UnknownFeature { line: at.line, column: at.column, name: name.to_string() })
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        let Some(token) = self.tokens.get(self.pos).cloned() else {
            return Err(self.unexpected("expression"));
        };
        self.pos += 1;
        match token.tok {
            Tok::Num(v) => Ok(Expr::Const(v)),
            Tok::LParen => {
                let inner = self.expr()?;
                self.expect(&Tok::RParen)?;
                Ok(inner)
            }
            Tok::Ident(name) if name == "row" => {
                self.expect(&Tok::LBracket)?;
                let (key, at) = match self.tokens.get(self.pos) {
                    Some(Token { tok: Tok::Str(s), at }) => (s.clone(), *at),
                    _ => return Err(self.unexpected("quoted feature name")),
                };
                self.pos += 1;
                self.expect(&Tok::RBracket)?;
                self.feature(&key, at)
            }
            Tok::Ident(name) => {
                if let Some(func) = Func::from_name(&name) {
                    return self.call(func, token.at);
                }
                if KEYWORDS.contains(&name.as_str()) {
                    return Err(token.at.syntax(format!("unexpected keyword `{name}`")));
                }
                if let Some(k) = self.bindings.iter().position(|b| *b == name) {
                    return Ok(Expr::Binding(k));
                }
                self.feature(&name, token.at)
            }
            other => {
                self.pos -= 1;
                Err(token.at.syntax(format!("expected expression, found {other}")))
            }
        }
    }

    fn call(&mut self, func: Func, at: Pos) -> Result<Expr, ExprError> {
        self.expect(&Tok::LParen)?;
        let mut args = vec![self.expr()?];
        while self.peek_is(&Tok::Comma) {
            self.pos += 1;
            args.push(self.expr()?);
        }
        self.expect(&Tok::RParen)?;
        if !func.is_variadic() && args.len() != 1 {
            return Err(at.syntax(format!("{} takes one argument, got {}", func.name(), args.len())));
        }
        Ok(Expr::Call { func, args })
    }
}
