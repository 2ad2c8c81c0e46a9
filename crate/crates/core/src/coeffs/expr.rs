//! Coefficient expressions: a tiny arithmetic language over `x`, torus
//! coordinates `w1..wd`, the driver amplitude `s`, and the constant `pi`.
//!
//! Grammar (EBNF, whitespace insensitive):
//!
//! ```text
//! expr   := term { ("+" | "-") term }
//! term   := unary { ("*" | "/") unary }
//! unary  := "-" unary | power
//! power  := atom [ "^" unary ]
//! atom   := number | name "(" expr ")" | name | "(" expr ")"
//! number := digit {digit} ["." {digit}] [("e" | "E") ["+" | "-"] digit {digit}]
//! name   := letter {letter | digit | "_"}
//! ```
//!
//! `+ - * /` associate left, `^` associates right and binds tighter than
//! unary minus. Functions: `sin`, `cos`, `exp`, `abs`, `neg`. Evaluation is
//! total on finite inputs except division by an exactly zero denominator.

use std::fmt;

use thiserror::Error;

/// Parsed expression tree. Construction goes through [`parse_expression`];
/// the tree is immutable afterwards.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(f64),
    /// Spatial variable `x`.
    X,
    /// Torus coordinate `w{i+1}` (zero-based index internally).
    W(usize),
    /// Driver amplitude variable `s`.
    Amp,
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Exp(Box<Expr>),
    Abs(Box<Expr>),
}

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("empty expression")]
    Empty,
    #[error("unexpected character '{ch}' at position {pos}")]
    UnexpectedChar { pos: usize, ch: char },
    #[error("invalid number literal '{text}' at position {pos}")]
    InvalidNumber { pos: usize, text: String },
    #[error("unknown identifier '{name}' at position {pos}")]
    UnknownIdentifier { pos: usize, name: String },
    #[error("expected {expected} at position {pos}, found '{found}'")]
    UnexpectedToken {
        pos: usize,
        found: String,
        expected: &'static str,
    },
    #[error("expected {expected}, found end of input")]
    UnexpectedEnd { expected: &'static str },
    #[error("trailing input starting at position {pos}")]
    TrailingInput { pos: usize },
}

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("variable {name} is not provided by the attached driver")]
    UnboundVariable { name: String },
}

/// Values the variables take at one evaluation site.
#[derive(Clone, Copy, Debug)]
pub struct EvalContext<'a> {
    pub x: f64,
    /// Torus coordinates, `w[0]` is `w1`.
    pub w: &'a [f64],
    /// Driver amplitude bound to `s`.
    pub amp: f64,
}

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let mut out = Vec::new();
    let chars: Vec<char> = src.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let pos = i;
        match c {
            '+' => {
                out.push((pos, Tok::Plus));
                i += 1;
            }
            '-' => {
                out.push((pos, Tok::Minus));
                i += 1;
            }
            '*' => {
                out.push((pos, Tok::Star));
                i += 1;
            }
            '/' => {
                out.push((pos, Tok::Slash));
                i += 1;
            }
            '^' => {
                out.push((pos, Tok::Caret));
                i += 1;
            }
            '(' => {
                out.push((pos, Tok::LParen));
                i += 1;
            }
            ')' => {
                out.push((pos, Tok::RParen));
                i += 1;
            }
            _ if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                // Exponent part only when followed by digits (optionally signed).
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        i = j;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text: String = chars[start..i].iter().collect();
                let value: f64 = text.parse().map_err(|_| ParseError::InvalidNumber {
                    pos: start,
                    text: text.clone(),
                })?;
                if !value.is_finite() {
                    return Err(ParseError::InvalidNumber { pos: start, text });
                }
                out.push((start, Tok::Num(value)));
            }
            _ if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len()
                    && (chars[i].is_ascii_alphanumeric() || chars[i] == '_')
                {
                    i += 1;
                }
                out.push((start, Tok::Ident(chars[start..i].iter().collect())));
            }
            _ => return Err(ParseError::UnexpectedChar { pos, ch: c }),
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Recursive-descent parser
// ---------------------------------------------------------------------------

struct Parser {
    toks: Vec<(usize, Tok)>,
    at: usize,
}

impl Parser {
    fn peek(&self) -> Option<&(usize, Tok)> {
        self.toks.get(self.at)
    }

    fn bump(&mut self) -> Option<(usize, Tok)> {
        let t = self.toks.get(self.at).cloned();
        if t.is_some() {
            self.at += 1;
        }
        t
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        while let Some((_, tok)) = self.peek() {
            let op = match tok {
                Tok::Plus => true,
                Tok::Minus => false,
                _ => break,
            };
            self.bump();
            let rhs = self.term()?;
            lhs = if op {
                Expr::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Some((_, tok)) = self.peek() {
            let mul = match tok {
                Tok::Star => true,
                Tok::Slash => false,
                _ => break,
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = if mul {
                Expr::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if let Some((_, Tok::Minus)) = self.peek() {
            self.bump();
            let inner = self.unary()?;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if let Some((_, Tok::Caret)) = self.peek() {
            self.bump();
            // Right associative; the exponent may carry a unary minus.
            let exponent = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let (pos, tok) = match self.bump() {
            Some(t) => t,
            None => return Err(ParseError::UnexpectedEnd { expected: "an operand" }),
        };
        match tok {
            Tok::Num(v) => Ok(Expr::Const(v)),
            Tok::LParen => {
                let inner = self.expr()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                if let Some((_, Tok::LParen)) = self.peek() {
                    let func = match name.as_str() {
                        "sin" | "cos" | "exp" | "abs" | "neg" => name.clone(),
                        _ => return Err(ParseError::UnknownIdentifier { pos, name }),
                    };
                    self.bump();
                    let arg = Box::new(self.expr()?);
                    self.expect_rparen()?;
                    Ok(match func.as_str() {
                        "sin" => Expr::Sin(arg),
                        "cos" => Expr::Cos(arg),
                        "exp" => Expr::Exp(arg),
                        "abs" => Expr::Abs(arg),
                        _ => Expr::Neg(arg),
                    })
                } else {
                    resolve_variable(&name, pos)
                }
            }
            other => Err(ParseError::UnexpectedToken {
                pos,
                found: tok_text(&other),
                expected: "an operand",
            }),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ParseError> {
        match self.bump() {
            Some((_, Tok::RParen)) => Ok(()),
            Some((pos, other)) => Err(ParseError::UnexpectedToken {
                pos,
                found: tok_text(&other),
                expected: "')'",
            }),
            None => Err(ParseError::UnexpectedEnd { expected: "')'" }),
        }
    }
}

fn tok_text(t: &Tok) -> String {
    match t {
        Tok::Num(v) => format!("{v}"),
        Tok::Ident(s) => s.clone(),
        Tok::Plus => "+".into(),
        Tok::Minus => "-".into(),
        Tok::Star => "*".into(),
        Tok::Slash => "/".into(),
        Tok::Caret => "^".into(),
        Tok::LParen => "(".into(),
        Tok::RParen => ")".into(),
    }
}

fn resolve_variable(name: &str, pos: usize) -> Result<Expr, ParseError> {
    match name {
        "x" => return Ok(Expr::X),
        "s" => return Ok(Expr::Amp),
        "pi" => return Ok(Expr::Const(std::f64::consts::PI)),
        _ => {}
    }
    if let Some(rest) = name.strip_prefix('w') {
        if !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()) {
            let idx: usize = rest.parse().map_err(|_| ParseError::UnknownIdentifier {
                pos,
                name: name.to_string(),
            })?;
            if idx >= 1 {
                return Ok(Expr::W(idx - 1));
            }
        }
    }
    Err(ParseError::UnknownIdentifier {
        pos,
        name: name.to_string(),
    })
}

/// Parses a coefficient expression. Errors carry the character position.
pub fn parse_expression(src: &str) -> Result<Expr, ParseError> {
    let toks = lex(src)?;
    if toks.is_empty() {
        return Err(ParseError::Empty);
    }
    let mut p = Parser { toks, at: 0 };
    let e = p.expr()?;
    if let Some((pos, _)) = p.peek() {
        return Err(ParseError::TrailingInput { pos: *pos });
    }
    Ok(e)
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

impl Expr {
    /// Evaluates the tree left to right. IEEE semantics throughout except
    /// that a denominator equal to 0.0 raises [`EvalError::DivisionByZero`].
    pub fn eval(&self, ctx: &EvalContext<'_>) -> Result<f64, EvalError> {
        Ok(match self {
            Expr::Const(v) => *v,
            Expr::X => ctx.x,
            Expr::W(i) => {
                if *i < ctx.w.len() {
                    ctx.w[*i]
                } else {
                    return Err(EvalError::UnboundVariable {
                        name: format!("w{}", i + 1),
                    });
                }
            }
            Expr::Amp => ctx.amp,
            Expr::Neg(a) => -a.eval(ctx)?,
            Expr::Add(a, b) => a.eval(ctx)? + b.eval(ctx)?,
            Expr::Sub(a, b) => a.eval(ctx)? - b.eval(ctx)?,
            Expr::Mul(a, b) => a.eval(ctx)? * b.eval(ctx)?,
            Expr::Div(a, b) => {
                let num = a.eval(ctx)?;
                let den = b.eval(ctx)?;
                if den == 0.0 {
                    return Err(EvalError::DivisionByZero);
                }
                num / den
            }
            Expr::Pow(a, b) => a.eval(ctx)?.powf(b.eval(ctx)?),
            Expr::Sin(a) => a.eval(ctx)?.sin(),
            Expr::Cos(a) => a.eval(ctx)?.cos(),
            Expr::Exp(a) => a.eval(ctx)?.exp(),
            Expr::Abs(a) => a.eval(ctx)?.abs(),
        })
    }

    /// Largest torus coordinate index referenced (1-based), 0 when none.
    pub fn max_w_index(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::X | Expr::Amp => 0,
            Expr::W(i) => i + 1,
            Expr::Neg(a) | Expr::Sin(a) | Expr::Cos(a) | Expr::Exp(a) | Expr::Abs(a) => {
                a.max_w_index()
            }
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b) => a.max_w_index().max(b.max_w_index()),
        }
    }

    /// True when the spatial variable `x` occurs.
    pub fn references_x(&self) -> bool {
        match self {
            Expr::X => true,
            Expr::Const(_) | Expr::W(_) | Expr::Amp => false,
            Expr::Neg(a) | Expr::Sin(a) | Expr::Cos(a) | Expr::Exp(a) | Expr::Abs(a) => {
                a.references_x()
            }
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b) => a.references_x() || b.references_x(),
        }
    }

    /// True when the amplitude variable `s` occurs.
    pub fn references_amp(&self) -> bool {
        match self {
            Expr::Amp => true,
            Expr::Const(_) | Expr::W(_) | Expr::X => false,
            Expr::Neg(a) | Expr::Sin(a) | Expr::Cos(a) | Expr::Exp(a) | Expr::Abs(a) => {
                a.references_amp()
            }
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b) => a.references_amp() || b.references_amp(),
        }
    }

    /// Substitutes the driver values for `w*` and `s` and folds every subtree
    /// that no longer depends on `x`. Folding performs the same operations in
    /// the same order as [`Expr::eval`], so the result evaluates bit-identically.
    /// Division by a known zero is left unfolded so evaluation still reports it.
    pub fn bind_driver(&self, w: &[f64], amp: f64) -> Expr {
        match self {
            Expr::Const(v) => Expr::Const(*v),
            Expr::X => Expr::X,
            Expr::W(i) => {
                if *i < w.len() {
                    Expr::Const(w[*i])
                } else {
                    Expr::W(*i)
                }
            }
            Expr::Amp => Expr::Const(amp),
            Expr::Neg(a) => fold1(a.bind_driver(w, amp), |v| -v, Expr::Neg),
            Expr::Sin(a) => fold1(a.bind_driver(w, amp), f64::sin, Expr::Sin),
            Expr::Cos(a) => fold1(a.bind_driver(w, amp), f64::cos, Expr::Cos),
            Expr::Exp(a) => fold1(a.bind_driver(w, amp), f64::exp, Expr::Exp),
            Expr::Abs(a) => fold1(a.bind_driver(w, amp), f64::abs, Expr::Abs),
            Expr::Add(a, b) => fold2(
                a.bind_driver(w, amp),
                b.bind_driver(w, amp),
                |x, y| x + y,
                Expr::Add,
            ),
            Expr::Sub(a, b) => fold2(
                a.bind_driver(w, amp),
                b.bind_driver(w, amp),
                |x, y| x - y,
                Expr::Sub,
            ),
            Expr::Mul(a, b) => fold2(
                a.bind_driver(w, amp),
                b.bind_driver(w, amp),
                |x, y| x * y,
                Expr::Mul,
            ),
            Expr::Pow(a, b) => fold2(
                a.bind_driver(w, amp),
                b.bind_driver(w, amp),
                f64::powf,
                Expr::Pow,
            ),
            Expr::Div(a, b) => {
                let fa = a.bind_driver(w, amp);
                let fb = b.bind_driver(w, amp);
                match (&fa, &fb) {
                    (Expr::Const(x), Expr::Const(y)) if *y != 0.0 => Expr::Const(x / y),
                    _ => Expr::Div(Box::new(fa), Box::new(fb)),
                }
            }
        }
    }
}

fn fold1(a: Expr, f: impl Fn(f64) -> f64, wrap: impl Fn(Box<Expr>) -> Expr) -> Expr {
    match a {
        Expr::Const(v) => Expr::Const(f(v)),
        other => wrap(Box::new(other)),
    }
}

fn fold2(
    a: Expr,
    b: Expr,
    f: impl Fn(f64, f64) -> f64,
    wrap: impl Fn(Box<Expr>, Box<Expr>) -> Expr,
) -> Expr {
    match (a, b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(f(x, y)),
        (fa, fb) => wrap(Box::new(fa), Box::new(fb)),
    }
}

/// Fully parenthesized rendering; parses back to an identically evaluating
/// tree as long as every constant is finite.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(v) => {
                if *v < 0.0 || v.is_sign_negative() {
                    // "-3" re-parses as unary minus; keep it inside parens.
                    write!(f, "(0 - {})", -v)
                } else {
                    write!(f, "{v}")
                }
            }
            Expr::X => write!(f, "x"),
            Expr::W(i) => write!(f, "w{}", i + 1),
            Expr::Amp => write!(f, "s"),
            Expr::Neg(a) => write!(f, "neg({a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, b) => write!(f, "({a} ^ {b})"),
            Expr::Sin(a) => write!(f, "sin({a})"),
            Expr::Cos(a) => write!(f, "cos({a})"),
            Expr::Exp(a) => write!(f, "exp({a})"),
            Expr::Abs(a) => write!(f, "abs({a})"),
        }
    }
}

// ---------------------------------------------------------------------------
// Compiled form for hot loops
// ---------------------------------------------------------------------------

/// Postfix program equivalent to an [`Expr`]; evaluation avoids pointer
/// chasing inside assembly loops. Instruction order matches the left-to-right
/// evaluation order of the tree, so results are bit-identical to [`Expr::eval`].
#[derive(Clone, Debug)]
pub struct Program {
    code: Vec<OpCode>,
}

#[derive(Clone, Copy, Debug)]
enum OpCode {
    Push(f64),
    LoadX,
    LoadW(u32),
    LoadAmp,
    Neg,
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Sin,
    Cos,
    Exp,
    Abs,
}

impl Program {
    pub fn compile(e: &Expr) -> Program {
        let mut code = Vec::new();
        fn emit(e: &Expr, code: &mut Vec<OpCode>) {
            match e {
                Expr::Const(v) => code.push(OpCode::Push(*v)),
                Expr::X => code.push(OpCode::LoadX),
                Expr::W(i) => code.push(OpCode::LoadW(*i as u32)),
                Expr::Amp => code.push(OpCode::LoadAmp),
                Expr::Neg(a) => {
                    emit(a, code);
                    code.push(OpCode::Neg);
                }
                Expr::Sin(a) => {
                    emit(a, code);
                    code.push(OpCode::Sin);
                }
                Expr::Cos(a) => {
                    emit(a, code);
                    code.push(OpCode::Cos);
                }
                Expr::Exp(a) => {
                    emit(a, code);
                    code.push(OpCode::Exp);
                }
                Expr::Abs(a) => {
                    emit(a, code);
                    code.push(OpCode::Abs);
                }
                Expr::Add(a, b) => {
                    emit(a, code);
                    emit(b, code);
                    code.push(OpCode::Add);
                }
                Expr::Sub(a, b) => {
                    emit(a, code);
                    emit(b, code);
                    code.push(OpCode::Sub);
                }
                Expr::Mul(a, b) => {
                    emit(a, code);
                    emit(b, code);
                    code.push(OpCode::Mul);
                }
                Expr::Div(a, b) => {
                    emit(a, code);
                    emit(b, code);
                    code.push(OpCode::Div);
                }
                Expr::Pow(a, b) => {
                    emit(a, code);
                    emit(b, code);
                    code.push(OpCode::Pow);
                }
            }
        }
        emit(e, &mut code);
        Program { code }
    }

    /// Evaluates with a caller-provided stack buffer (cleared on entry).
    pub fn eval_with_stack(
        &self,
        ctx: &EvalContext<'_>,
        stack: &mut Vec<f64>,
    ) -> Result<f64, EvalError> {
        stack.clear();
        for op in &self.code {
            match op {
                OpCode::Push(v) => stack.push(*v),
                OpCode::LoadX => stack.push(ctx.x),
                OpCode::LoadW(i) => {
                    let i = *i as usize;
                    if i < ctx.w.len() {
                        stack.push(ctx.w[i]);
                    } else {
                        return Err(EvalError::UnboundVariable {
                            name: format!("w{}", i + 1),
                        });
                    }
                }
                OpCode::LoadAmp => stack.push(ctx.amp),
                OpCode::Neg => {
                    let a = stack.last_mut().expect("stack underflow");
                    *a = -*a;
                }
                OpCode::Sin => {
                    let a = stack.last_mut().expect("stack underflow");
                    *a = a.sin();
                }
                OpCode::Cos => {
                    let a = stack.last_mut().expect("stack underflow");
                    *a = a.cos();
                }
                OpCode::Exp => {
                    let a = stack.last_mut().expect("stack underflow");
                    *a = a.exp();
                }
                OpCode::Abs => {
                    let a = stack.last_mut().expect("stack underflow");
                    *a = a.abs();
                }
                OpCode::Add | OpCode::Sub | OpCode::Mul | OpCode::Div | OpCode::Pow => {
                    let b = stack.pop().expect("stack underflow");
                    let a = stack.last_mut().expect("stack underflow");
                    *a = match op {
                        OpCode::Add => *a + b,
                        OpCode::Sub => *a - b,
                        OpCode::Mul => *a * b,
                        OpCode::Div => {
                            if b == 0.0 {
                                return Err(EvalError::DivisionByZero);
                            }
                            *a / b
                        }
                        _ => a.powf(b),
                    };
                }
            }
        }
        debug_assert_eq!(stack.len(), 1);
        Ok(stack[0])
    }

    pub fn eval(&self, ctx: &EvalContext<'_>) -> Result<f64, EvalError> {
        let mut stack = Vec::with_capacity(16);
        self.eval_with_stack(ctx, &mut stack)
    }
}
