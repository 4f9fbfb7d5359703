//! Model description language.
//!
//! One statement per logical line (or `;`-separated), `#` starts a comment.
//!
//! ```text
//! eta1 =~ y1 + y2 + y3          # latent variable measured by y1..y3
//! eta3 <~ 1*y7 + y8 + y9        # composite formed by y7..y9
//! eta4 ~ eta1 + b*eta3          # regression, `b` labels the coefficient
//! eta1 ~~ eta3                  # covariance
//! ```
//!
//! A term may carry premultiplied modifiers: a number fixes the parameter,
//! the reserved token `free` releases a default fixing, and any other name
//! is a label. Parameters sharing a label are constrained equal.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Operator {
    /// `=~`
    MeasuredBy,
    /// `<~`
    ComposedOf,
    /// `~`
    RegressedOn,
    /// `~~`
    CovariesWith,
}

impl Operator {
    pub fn symbol(self) -> &'static str {
        match self {
            Operator::MeasuredBy => "=~",
            Operator::ComposedOf => "<~",
            Operator::RegressedOn => "~",
            Operator::CovariesWith => "~~",
        }
    }

    fn from_symbol(s: &str) -> Option<Self> {
        match s {
            "=~" => Some(Operator::MeasuredBy),
            "<~" => Some(Operator::ComposedOf),
            "~" => Some(Operator::RegressedOn),
            "~~" => Some(Operator::CovariesWith),
            _ => None,
        }
    }

    /// Whether the statement defines a construct through its indicators.
    pub fn is_measurement(self) -> bool {
        matches!(self, Operator::MeasuredBy | Operator::ComposedOf)
    }
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub name: String,
    pub fixed: Option<f64>,
    pub label: Option<String>,
    pub free: bool,
}

impl Term {
    pub fn plain(name: impl Into<String>) -> Self {
        Term {
            name: name.into(),
            fixed: None,
            label: None,
            free: false,
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(v) = self.fixed {
            write!(f, "{v}*")?;
        }
        if self.free {
            f.write_str("free*")?;
        }
        if let Some(l) = &self.label {
            write!(f, "{l}*")?;
        }
        f.write_str(&self.name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Statement {
    pub lhs: String,
    pub op: Operator,
    pub rhs: Vec<Term>,
}

impl fmt::Display for Statement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} ", self.lhs, self.op)?;
        for (i, t) in self.rhs.iter().enumerate() {
            if i > 0 {
                f.write_str(" + ")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelSpec {
    pub statements: Vec<Statement>,
}

impl ModelSpec {
    /// Statements defining constructs through indicators, in source order.
    pub fn measurement(&self) -> impl Iterator<Item = &Statement> {
        self.statements.iter().filter(|s| s.op.is_measurement())
    }

    pub fn is_empty(&self) -> bool {
        self.statements.is_empty()
    }
}

/// Canonical text: one statement per line.
impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.statements {
            writeln!(f, "{s}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    Op(String),
    Plus,
    Minus,
    Star,
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    col: usize,
}

fn is_name_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_' || c == '.'
}

fn is_name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.'
}

fn is_op_char(c: char) -> bool {
    matches!(c, '=' | '<' | '>' | '~' | ':' | '|' | '!' | '@' | '%' | '^' | '/')
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Syntax {
        line,
        column,
        message: message.into(),
    }
}

/// Tokenizes one statement. `offset` is the 1-based column of `chars[0]`.
fn lex(chars: &[char], line: usize, offset: usize) -> Result<Vec<Spanned>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = offset + i;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let starts_number =
            c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()));
        if starts_number {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
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
            if i < chars.len() && is_name_char(chars[i]) {
                return Err(syntax(line, col, "names must not begin with a digit"));
            }
            let text: String = chars[start..i].iter().collect();
            let value: f64 = text
                .parse()
                .map_err(|_| syntax(line, col, format!("invalid number `{text}`")))?;
            if !value.is_finite() {
                return Err(syntax(line, col, format!("number `{text}` is out of range")));
            }
            out.push(Spanned {
                tok: Tok::Number(value),
                col,
            });
        } else if is_name_start(c) {
            let start = i;
            while i < chars.len() && is_name_char(chars[i]) {
                i += 1;
            }
            out.push(Spanned {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                col,
            });
        } else if is_op_char(c) {
            let start = i;
            while i < chars.len() && is_op_char(chars[i]) {
                i += 1;
            }
            out.push(Spanned {
                tok: Tok::Op(chars[start..i].iter().collect()),
                col,
            });
        } else {
            let tok = match c {
                '+' => Tok::Plus,
                '-' => Tok::Minus,
                '*' => Tok::Star,
                _ => return Err(syntax(line, col, format!("unexpected character `{c}`"))),
            };
            out.push(Spanned { tok, col });
            i += 1;
        }
    }
    Ok(out)
}

struct StatementParser<'a> {
    toks: &'a [Spanned],
    pos: usize,
    line: usize,
    end_col: usize,
}

enum Atom {
    Name(String),
    Number(f64),
}

impl StatementParser<'_> {
    fn peek(&self) -> Option<&Spanned> {
        self.toks.get(self.pos)
    }

    fn col(&self) -> usize {
        self.peek().map_or(self.end_col, |t| t.col)
    }

    fn err(&self, message: impl Into<String>) -> Error {
        syntax(self.line, self.col(), message)
    }

    fn parse(mut self) -> Result<Statement> {
        let lhs = match self.peek().map(|t| &t.tok) {
            Some(Tok::Ident(n)) => n.clone(),
            _ => return Err(self.err("expected a variable name")),
        };
        self.pos += 1;
        let op = match self.peek() {
            Some(Spanned {
                tok: Tok::Op(s),
                col,
            }) => Operator::from_symbol(s).ok_or_else(|| Error::UnknownOperator {
                operator: s.clone(),
                line: self.line,
                column: *col,
            })?,
            _ => return Err(self.err("expected an operator (=~, <~, ~, ~~)")),
        };
        self.pos += 1;

        let mut rhs: Vec<Term> = Vec::new();
        loop {
            let col = self.col();
            let term = self.term()?;
            if rhs.iter().any(|t| t.name == term.name) {
                return Err(syntax(
                    self.line,
                    col,
                    format!("`{}` appears twice in the same statement", term.name),
                ));
            }
            rhs.push(term);
            match self.peek().map(|t| &t.tok) {
                None => break,
                Some(Tok::Plus) => self.pos += 1,
                Some(_) => return Err(self.err("expected `+` or end of statement")),
            }
        }
        Ok(Statement { lhs, op, rhs })
    }

    fn atom(&mut self) -> Result<Atom> {
        let negative = matches!(self.peek().map(|t| &t.tok), Some(Tok::Minus));
        if negative {
            self.pos += 1;
        }
        match self.peek().map(|t| t.tok.clone()) {
            Some(Tok::Number(v)) => {
                self.pos += 1;
                Ok(Atom::Number(if negative { -v } else { v }))
            }
            Some(Tok::Ident(n)) if !negative => {
                self.pos += 1;
                Ok(Atom::Name(n))
            }
            _ if negative => Err(self.err("expected a number after `-`")),
            _ => Err(self.err("expected a term")),
        }
    }

    fn term(&mut self) -> Result<Term> {
        let start_col = self.col();
        let mut fixed = None;
        let mut free = false;
        let mut label: Option<String> = None;
        loop {
            let atom_col = self.col();
            let atom = self.atom()?;
            let is_modifier = matches!(self.peek().map(|t| &t.tok), Some(Tok::Star));
            if !is_modifier {
                return match atom {
                    Atom::Name(name) => {
                        if fixed.is_some() && free {
                            Err(syntax(
                                self.line,
                                start_col,
                                "a term cannot be both fixed and free",
                            ))
                        } else {
                            Ok(Term {
                                name,
                                fixed,
                                label,
                                free,
                            })
                        }
                    }
                    Atom::Number(_) => Err(syntax(
                        self.line,
                        atom_col,
                        "expected a variable name after the modifiers",
                    )),
                };
            }
            self.pos += 1;
            let dup = |what: &str| syntax(self.line, atom_col, format!("{what} given twice"));
            match atom {
                Atom::Number(v) => {
                    if fixed.replace(v).is_some() {
                        return Err(dup("fixed value"));
                    }
                }
                Atom::Name(n) if n.eq_ignore_ascii_case("free") => {
                    if free {
                        return Err(dup("`free`"));
                    }
                    free = true;
                }
                Atom::Name(n) => {
                    if label.replace(n).is_some() {
                        return Err(dup("label"));
                    }
                }
            }
        }
    }
}

/// Parses model source text into a [`ModelSpec`].
pub fn parse_model(source: &str) -> Result<ModelSpec> {
    let mut statements = Vec::new();
    // construct -> (line, operator) of its measurement statement
    let mut defined: HashMap<String, (usize, Operator)> = HashMap::new();
    // indicator -> (line, operator, construct)
    let mut indicator_of: HashMap<String, (usize, Operator, String)> = HashMap::new();

    for (line_idx, raw) in source.lines().enumerate() {
        let line = line_idx + 1;
        let chars: Vec<char> = raw.chars().collect();
        let code_len = chars.iter().position(|&c| c == '#').unwrap_or(chars.len());
        let code = &chars[..code_len];

        let mut seg_start = 0;
        for seg_end in (0..=code.len()).filter(|&i| i == code.len() || code[i] == ';') {
            let seg = &code[seg_start..seg_end];
            let offset = seg_start + 1;
            seg_start = seg_end + 1;
            let toks = lex(seg, line, offset)?;
            if toks.is_empty() {
                continue;
            }
            let stmt = StatementParser {
                toks: &toks,
                pos: 0,
                line,
                end_col: offset + seg.len(),
            }
            .parse()?;

            if stmt.op.is_measurement() {
                if let Some((first_line, _)) = defined.get(&stmt.lhs) {
                    return Err(Error::DuplicateDefinition {
                        name: stmt.lhs.clone(),
                        line,
                        first_line: *first_line,
                    });
                }
                defined.insert(stmt.lhs.clone(), (line, stmt.op));
                for t in &stmt.rhs {
                    match indicator_of.get(&t.name) {
                        Some((l, op, c)) if *op != stmt.op || stmt.op == Operator::ComposedOf => {
                            return Err(Error::InvalidModel(format!(
                                "line {line}: indicator `{}` of `{}` is already used by `{c}` ({op}) on line {l}; \
                                 an indicator may form only one composite and cannot serve both a latent variable and a composite",
                                t.name, stmt.lhs
                            )));
                        }
                        Some(_) => {}
                        None => {
                            indicator_of.insert(t.name.clone(), (line, stmt.op, stmt.lhs.clone()));
                        }
                    }
                }
            }
            statements.push(stmt);
        }
    }
    Ok(ModelSpec { statements })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn measured_by_block() {
        let spec = parse_model("eta1 =~ y1 + y2 + y3").unwrap();
        assert_eq!(spec.statements.len(), 1);
        let s = &spec.statements[0];
        assert_eq!(s.lhs, "eta1");
        assert_eq!(s.op, Operator::MeasuredBy);
        let names: Vec<_> = s.rhs.iter().map(|t| t.name.as_str()).collect();
        assert_eq!(names, ["y1", "y2", "y3"]);
        assert!(s.rhs.iter().all(|t| t.fixed.is_none() && !t.free && t.label.is_none()));
    }

    #[test]
    fn composite_with_fixed_first_weight() {
        let spec = parse_model("eta3 <~ 1*y7 + y8 + y9").unwrap();
        let s = &spec.statements[0];
        assert_eq!(s.op, Operator::ComposedOf);
        assert_eq!(s.rhs[0].fixed, Some(1.0));
        assert_eq!(s.rhs[1].fixed, None);
    }

    #[test]
    fn empty_source() {
        assert!(parse_model("").unwrap().is_empty());
        assert!(parse_model("  # only a comment\n\n ; ;").unwrap().is_empty());
    }

    #[test]
    fn regression_terms() {
        let spec = parse_model("eta2 ~ eta1 + eta3 + eta4").unwrap();
        let s = &spec.statements[0];
        assert_eq!(s.op, Operator::RegressedOn);
        assert_eq!(s.rhs.len(), 3);
        assert!(s.rhs.iter().all(|t| t.fixed.is_none()));
    }

    #[test]
    fn modifiers() {
        let spec = parse_model("f =~ FREE*x1 + a*x2 + -0.5*x3 + 2e-1*b*x4; f ~~ .5*f").unwrap();
        let t = &spec.statements[0].rhs;
        assert!(t[0].free);
        assert_eq!(t[1].label.as_deref(), Some("a"));
        assert_eq!(t[2].fixed, Some(-0.5));
        assert_eq!(t[3].fixed, Some(0.2));
        assert_eq!(t[3].label.as_deref(), Some("b"));
        assert_eq!(spec.statements[1].op, Operator::CovariesWith);
        assert_eq!(spec.statements[1].rhs[0].fixed, Some(0.5));
    }

    #[test]
    fn whitespace_insensitive() {
        let a = parse_model("f=~x1+2*x2").unwrap();
        let b = parse_model("  f   =~   x1 +  2 * x2  ").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn semicolons_and_comments() {
        let spec = parse_model("f =~ a + b; g =~ c + d # trailing\ng ~ f").unwrap();
        assert_eq!(spec.statements.len(), 3);
    }

    #[test]
    fn unknown_operator() {
        match parse_model("f := a + b") {
            Err(Error::UnknownOperator {
                operator,
                line,
                column,
            }) => {
                assert_eq!(operator, ":=");
                assert_eq!((line, column), (1, 3));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn syntax_errors_carry_position() {
        let cases = [
            ("f =~ a +", 1, 9),
            ("\nf =~ a b", 2, 8),
            ("f a", 1, 3),
            ("f =~ 1x", 1, 6),
            ("f =~ 1*2", 1, 8),
            ("f =~ 1*free*a", 1, 6),
            ("f =~ a + a", 1, 10),
            ("f =~ a $ b", 1, 8),
        ];
        for (src, line, column) in cases {
            match parse_model(src) {
                Err(Error::Syntax {
                    line: l, column: c, ..
                }) => assert_eq!((l, c), (line, column), "{src}"),
                other => panic!("{src}: {other:?}"),
            }
        }
    }

    #[test]
    fn duplicate_definition() {
        let err = parse_model("f =~ a + b\nf <~ c + d").unwrap_err();
        assert_eq!(
            err,
            Error::DuplicateDefinition {
                name: "f".into(),
                line: 2,
                first_line: 1
            }
        );
    }

    #[test]
    fn indicator_in_latent_and_composite() {
        let err = parse_model("f =~ a + b\nc <~ b + d").unwrap_err();
        assert!(matches!(err, Error::InvalidModel(_)));
    }

    #[test]
    fn cross_block_weights_rejected() {
        let err = parse_model("c1 <~ a + b\nc2 <~ b + d").unwrap_err();
        assert!(matches!(err, Error::InvalidModel(_)));
    }

    #[test]
    fn cross_loadings_parse() {
        // flagged later by the identification checks
        assert!(parse_model("f =~ a + b + c\ng =~ c + d + e").is_ok());
    }

    fn name() -> impl Strategy<Value = String> {
        "[a-zA-Z_][a-zA-Z0-9_.]{0,6}".prop_filter("reserved", |s| !s.eq_ignore_ascii_case("free"))
    }

    fn term() -> impl Strategy<Value = Term> {
        (
            name(),
            prop_oneof![
                Just((None, false)),
                (-1e3f64..1e3).prop_map(|v| (Some(v), false)),
                Just((None, true)),
            ],
            proptest::option::of(name()),
        )
            .prop_map(|(name, (fixed, free), label)| Term {
                name,
                fixed,
                label,
                free,
            })
    }

    fn statement() -> impl Strategy<Value = Statement> {
        (
            name(),
            prop_oneof![Just(Operator::RegressedOn), Just(Operator::CovariesWith)],
            proptest::collection::vec(term(), 1..5),
        )
            .prop_map(|(lhs, op, mut rhs)| {
                let mut seen = std::collections::HashSet::new();
                rhs.retain(|t| seen.insert(t.name.clone()));
                Statement { lhs, op, rhs }
            })
    }

    proptest! {
        #[test]
        fn canonical_text_round_trips(stmts in proptest::collection::vec(statement(), 0..6)) {
            let spec = ModelSpec { statements: stmts };
            let text = spec.to_string();
            let reparsed = parse_model(&text).unwrap();
            prop_assert_eq!(reparsed, spec);
        }
    }
}
