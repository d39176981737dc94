//! Structured model-output grammar: `<task_prompt> {results} </task_prompt>`.
//!
//! Three task prompts are registered:
//!
//! * `<s_feasibility> 0|1 </s_feasibility>`
//! * `<s_completeness> 0|1 </s_completeness>`
//! * `<locate_element> <x_min> N </x_min> <y_min> N </y_min> <x_max> N </x_max> <y_max> N </y_max> </locate_element>`
//!
//! Emission is single-space separated. Parsing accepts any amount of
//! whitespace (including none) between tokens and nothing else.

use std::fmt;

use thiserror::Error;

use crate::screen::BBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskKind {
    Feasibility,
    Completeness,
    Locate,
}

impl TaskKind {
    pub fn tag(self) -> &'static str {
        match self {
            TaskKind::Feasibility => "s_feasibility",
            TaskKind::Completeness => "s_completeness",
            TaskKind::Locate => "locate_element",
        }
    }

    fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "s_feasibility" => Some(TaskKind::Feasibility),
            "s_completeness" => Some(TaskKind::Completeness),
            "locate_element" => Some(TaskKind::Locate),
            _ => None,
        }
    }
}

/// Binary verdict bit. `1` is feasible / complete.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Bit(bool);

impl Bit {
    pub const ZERO: Bit = Bit(false);
    pub const ONE: Bit = Bit(true);

    pub fn from_bool(b: bool) -> Self {
        Bit(b)
    }

    pub fn is_one(self) -> bool {
        self.0
    }
}

impl fmt::Display for Bit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(if self.0 { "1" } else { "0" })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StructuredResult {
    Feasibility(Bit),
    Completeness(Bit),
    Locate(BBox),
}

impl StructuredResult {
    /// Fails only for a degenerate locate box.
    pub fn locate(bbox: BBox) -> Result<Self, CodecError> {
        if bbox.is_proper() {
            Ok(StructuredResult::Locate(bbox))
        } else {
            Err(CodecError::DegenerateBBox(bbox))
        }
    }

    pub fn kind(&self) -> TaskKind {
        match self {
            StructuredResult::Feasibility(_) => TaskKind::Feasibility,
            StructuredResult::Completeness(_) => TaskKind::Completeness,
            StructuredResult::Locate(_) => TaskKind::Locate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("empty input")]
    Empty,
    #[error("input is not valid UTF-8")]
    InvalidUtf8,
    #[error("unknown task tag <{0}>")]
    UnknownTag(String),
    #[error("expected an opening task tag, found {0:?}")]
    ExpectedOpenTag(String),
    #[error("mismatched closing tag: opened <{open}>, closed </{close}>")]
    MismatchedClose { open: String, close: String },
    #[error("payload {0:?} is not in {{0,1}}")]
    PayloadDomain(String),
    #[error("bbox sub-tag <{0}> is missing")]
    MissingSubtag(&'static str),
    #[error("bbox sub-tag <{0}> appears more than once")]
    DuplicateSubtag(String),
    #[error("bbox sub-tag <{found}> out of order, expected <{expected}>")]
    SubtagOutOfOrder { expected: &'static str, found: String },
    #[error("invalid coordinate {0:?}")]
    InvalidCoordinate(String),
    #[error("degenerate bbox {0:?}")]
    DegenerateBBox(BBox),
    #[error("unexpected token {0:?}")]
    UnexpectedToken(String),
    #[error("unexpected end of input")]
    UnexpectedEnd,
    #[error("trailing input after closing tag: {0:?}")]
    Trailing(String),
}

const SUBTAGS: [&str; 4] = ["x_min", "y_min", "x_max", "y_max"];

pub fn emit(result: &StructuredResult) -> String {
    match result {
        StructuredResult::Feasibility(b) | StructuredResult::Completeness(b) => {
            let tag = result.kind().tag();
            format!("<{tag}> {b} </{tag}>")
        }
        StructuredResult::Locate(b) => {
            let vals = [b.x_min, b.y_min, b.x_max, b.y_max];
            let inner: Vec<String> = SUBTAGS.iter().zip(vals).map(|(t, v)| format!("<{t}> {v} </{t}>")).collect();
            format!("<locate_element> {} </locate_element>", inner.join(" "))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Token<'a> {
    Open(&'a str),
    Close(&'a str),
    Word(&'a str),
}

impl Token<'_> {
    fn render(&self) -> String {
        match self {
            Token::Open(t) => format!("<{t}>"),
            Token::Close(t) => format!("</{t}>"),
            Token::Word(w) => (*w).to_string(),
        }
    }
}

fn tokenize(text: &str) -> Result<Vec<Token<'_>>, CodecError> {
    let mut out = Vec::new();
    let mut rest = text;
    loop {
        rest = rest.trim_start();
        if rest.is_empty() {
            return Ok(out);
        }
        if let Some(after) = rest.strip_prefix('<') {
            let end = after.find('>').ok_or_else(|| CodecError::UnexpectedToken(rest.chars().take(32).collect()))?;
            let body = &after[..end];
            let (closing, name) = match body.strip_prefix('/') {
                Some(n) => (true, n),
                None => (false, body),
            };
            if name.is_empty() || !name.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_') {
                return Err(CodecError::UnexpectedToken(format!("<{body}>")));
            }
            out.push(if closing { Token::Close(name) } else { Token::Open(name) });
            rest = &after[end + 1..];
        } else {
            let end = rest.find(|c: char| c.is_whitespace() || c == '<').unwrap_or(rest.len());
            out.push(Token::Word(&rest[..end]));
            rest = &rest[end..];
        }
    }
}

struct Tokens<'a> {
    toks: Vec<Token<'a>>,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn next(&mut self) -> Result<Token<'a>, CodecError> {
        let t = self.toks.get(self.pos).cloned().ok_or(CodecError::UnexpectedEnd)?;
        self.pos += 1;
        Ok(t)
    }

    fn peek(&self) -> Option<&Token<'a>> {
        self.toks.get(self.pos)
    }
}

pub fn parse_bytes(bytes: &[u8]) -> Result<StructuredResult, CodecError> {
    let text = std::str::from_utf8(bytes).map_err(|_| CodecError::InvalidUtf8)?;
    parse(text)
}

pub fn parse(text: &str) -> Result<StructuredResult, CodecError> {
    let toks = tokenize(text)?;
    if toks.is_empty() {
        return Err(CodecError::Empty);
    }
    let mut ts = Tokens { toks, pos: 0 };
    let open = match ts.next()? {
        Token::Open(tag) => tag,
        other => return Err(CodecError::ExpectedOpenTag(other.render())),
    };
    let kind = TaskKind::from_tag(open).ok_or_else(|| CodecError::UnknownTag(open.to_string()))?;
    let result = match kind {
        TaskKind::Feasibility | TaskKind::Completeness => {
            let bit = parse_bit(&mut ts)?;
            if kind == TaskKind::Feasibility {
                StructuredResult::Feasibility(bit)
            } else {
                StructuredResult::Completeness(bit)
            }
        }
        TaskKind::Locate => StructuredResult::Locate(parse_bbox(&mut ts)?),
    };
    match ts.next()? {
        Token::Close(c) if c == open => {}
        Token::Close(c) => return Err(CodecError::MismatchedClose { open: open.to_string(), close: c.to_string() }),
        other => return Err(CodecError::UnexpectedToken(other.render())),
    }
    if let Some(t) = ts.peek() {
        return Err(CodecError::Trailing(t.render()));
    }
    Ok(result)
}

fn parse_bit(ts: &mut Tokens<'_>) -> Result<Bit, CodecError> {
    match ts.next()? {
        Token::Word("0") => Ok(Bit::ZERO),
        Token::Word("1") => Ok(Bit::ONE),
        Token::Word(w) => Err(CodecError::PayloadDomain(w.to_string())),
        other => Err(CodecError::UnexpectedToken(other.render())),
    }
}

fn parse_bbox(ts: &mut Tokens<'_>) -> Result<BBox, CodecError> {
    let mut vals = [0u32; 4];
    for (slot, expected) in SUBTAGS.iter().enumerate() {
        let tag = match ts.peek() {
            Some(Token::Open(t)) => *t,
            _ => return Err(CodecError::MissingSubtag(expected)),
        };
        if tag != *expected {
            return Err(match SUBTAGS.iter().position(|s| *s == tag) {
                Some(p) if p < slot => CodecError::DuplicateSubtag(tag.to_string()),
                Some(_) => CodecError::SubtagOutOfOrder { expected, found: tag.to_string() },
                None => CodecError::UnexpectedToken(format!("<{tag}>")),
            });
        }
        ts.next()?;
        vals[slot] = match ts.next()? {
            Token::Word(w) => parse_coord(w)?,
            other => return Err(CodecError::UnexpectedToken(other.render())),
        };
        match ts.next()? {
            Token::Close(c) if c == *expected => {}
            Token::Close(c) => {
                return Err(CodecError::MismatchedClose { open: expected.to_string(), close: c.to_string() })
            }
            other => return Err(CodecError::UnexpectedToken(other.render())),
        }
    }
    if let Some(Token::Open(t)) = ts.peek() {
        if SUBTAGS.contains(t) {
            return Err(CodecError::DuplicateSubtag(t.to_string()));
        }
    }
    let bbox = BBox::from(vals);
    if !bbox.is_proper() {
        return Err(CodecError::DegenerateBBox(bbox));
    }
    Ok(bbox)
}

fn parse_coord(w: &str) -> Result<u32, CodecError> {
    if w.is_empty() || !w.bytes().all(|b| b.is_ascii_digit()) {
        return Err(CodecError::InvalidCoordinate(w.to_string()));
    }
    w.parse().map_err(|_| CodecError::InvalidCoordinate(w.to_string()))
}
