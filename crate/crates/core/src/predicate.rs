//! Subscription predicates: a conjunction of typed attribute constraints.
//!
//! Surface syntax (keywords and enumeration names are case-insensitive,
//! whitespace is insignificant):
//!
//! ```text
//! pred   := "" | clause ( "and" clause )*
//! clause := "kind" "=" KIND ("," KIND)*
//!         | "value" CMP NUMBER            CMP := < | <= | = | != | >= | >
//!         | "publisher" "=" STRING        quoted "..." or a bare token
//!         | "geo" "in" "[" NUM "," NUM "," NUM "," NUM "]"
//!         | "activity" "=" STATE ("," STATE)*
//!         | "confidence" ">=" INT
//! ```
//!
//! The geo box is `min_lat, min_lon, max_lat, max_lon`, inclusive on every
//! edge, with no antimeridian wrap.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::model::{ActivityState, SensorEvent, SensorKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Lt,
    Le,
    Eq,
    Ne,
    Ge,
    Gt,
}

impl CmpOp {
    pub const ALL: [CmpOp; 6] = [CmpOp::Lt, CmpOp::Le, CmpOp::Eq, CmpOp::Ne, CmpOp::Ge, CmpOp::Gt];

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Ge => ">=",
            CmpOp::Gt => ">",
        }
    }

    pub fn apply(self, lhs: f64, rhs: f64) -> bool {
        match self {
            CmpOp::Lt => lhs < rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Eq => lhs == rhs,
            CmpOp::Ne => lhs != rhs,
            CmpOp::Ge => lhs >= rhs,
            CmpOp::Gt => lhs > rhs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub min_lat: f64,
    pub min_lon: f64,
    pub max_lat: f64,
    pub max_lon: f64,
}

impl BoundingBox {
    pub fn new(min_lat: f64, min_lon: f64, max_lat: f64, max_lon: f64) -> Result<Self, String> {
        let bbox = Self {
            min_lat,
            min_lon,
            max_lat,
            max_lon,
        };
        bbox.check()?;
        Ok(bbox)
    }

    pub fn check(&self) -> Result<(), String> {
        let lat_ok = |v: f64| v.is_finite() && (-90.0..=90.0).contains(&v);
        let lon_ok = |v: f64| v.is_finite() && (-180.0..=180.0).contains(&v);
        if !(lat_ok(self.min_lat) && lat_ok(self.max_lat)) {
            return Err("latitude outside [-90, 90]".into());
        }
        if !(lon_ok(self.min_lon) && lon_ok(self.max_lon)) {
            return Err("longitude outside [-180, 180]".into());
        }
        if self.min_lat > self.max_lat || self.min_lon > self.max_lon {
            return Err("bounding box minimum exceeds maximum".into());
        }
        Ok(())
    }

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        lat >= self.min_lat && lat <= self.max_lat && lon >= self.min_lon && lon <= self.max_lon
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AtomicConstraint {
    KindIs(BTreeSet<SensorKind>),
    /// Compares the scalar value, or the vector magnitude for the accelerometer.
    ValueCmp {
        op: CmpOp,
        threshold: f64,
    },
    PublisherIs(String),
    GeoWithin(BoundingBox),
    ActivityIs(BTreeSet<ActivityState>),
    MinConfidence(u8),
}

impl AtomicConstraint {
    pub fn holds(&self, event: &SensorEvent) -> bool {
        match self {
            AtomicConstraint::KindIs(kinds) => kinds.contains(&event.kind),
            AtomicConstraint::ValueCmp { op, threshold } => op.apply(event.scalar(), *threshold),
            AtomicConstraint::PublisherIs(id) => event.publisher_id == *id,
            AtomicConstraint::GeoWithin(bbox) => bbox.contains(event.position.lat, event.position.lon),
            AtomicConstraint::ActivityIs(states) => event.activity.is_some_and(|a| states.contains(&a.state)),
            AtomicConstraint::MinConfidence(min) => event.activity.is_some_and(|a| a.confidence >= *min),
        }
    }

    fn check(&self) -> Result<(), String> {
        match self {
            AtomicConstraint::KindIs(k) if k.is_empty() => Err("empty kind set".into()),
            AtomicConstraint::ActivityIs(a) if a.is_empty() => Err("empty activity set".into()),
            AtomicConstraint::ValueCmp { threshold, .. } if !threshold.is_finite() => {
                Err("threshold must be finite".into())
            }
            AtomicConstraint::GeoWithin(b) => b.check(),
            AtomicConstraint::MinConfidence(c) if *c > 100 => Err("confidence must be within 0..=100".into()),
            AtomicConstraint::PublisherIs(id) => crate::model::validate_id("publisher", id).map_err(|e| e.to_string()),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for AtomicConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn list<T: fmt::Display>(items: impl Iterator<Item = T>) -> String {
            items.map(|i| i.to_string()).collect::<Vec<_>>().join(",")
        }
        match self {
            AtomicConstraint::KindIs(k) => write!(f, "kind={}", list(k.iter())),
            AtomicConstraint::ValueCmp { op, threshold } => {
                write!(f, "value{}{}", op.symbol(), threshold)
            }
            AtomicConstraint::PublisherIs(id) => {
                let escaped = id.replace('\\', "\\\\").replace('"', "\\\"");
                write!(f, "publisher=\"{escaped}\"")
            }
            AtomicConstraint::GeoWithin(b) => {
                write!(f, "geo in [{},{},{},{}]", b.min_lat, b.min_lon, b.max_lat, b.max_lon)
            }
            AtomicConstraint::ActivityIs(a) => write!(f, "activity={}", list(a.iter())),
            AtomicConstraint::MinConfidence(c) => write!(f, "confidence>={c}"),
        }
    }
}

/// A conjunction of constraints. The empty predicate matches every event.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Predicate {
    constraints: Vec<AtomicConstraint>,
}

impl Predicate {
    pub fn match_all() -> Self {
        Self::default()
    }

    pub fn new(constraints: Vec<AtomicConstraint>) -> Result<Self, ParseError> {
        for c in &constraints {
            c.check()
                .map_err(|message| ParseError::InvalidConstraint { offset: 0, message })?;
        }
        Ok(Self { constraints })
    }

    pub fn constraints(&self) -> &[AtomicConstraint] {
        &self.constraints
    }

    pub fn is_match_all(&self) -> bool {
        self.constraints.is_empty()
    }

    /// Conjunction with one more constraint.
    pub fn and(mut self, constraint: AtomicConstraint) -> Result<Self, ParseError> {
        constraint
            .check()
            .map_err(|message| ParseError::InvalidConstraint { offset: 0, message })?;
        self.constraints.push(constraint);
        Ok(self)
    }

    pub fn matches(&self, event: &SensorEvent) -> bool {
        self.constraints.iter().all(|c| c.holds(event))
    }

    pub fn parse(text: &str) -> Result<Self, ParseError> {
        Parser::new(text).predicate()
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.constraints.iter().enumerate() {
            if i > 0 {
                f.write_str(" and ")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

impl FromStr for Predicate {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubscriptionPredicate {
    pub subscription_id: String,
    pub predicate: Predicate,
}

impl SubscriptionPredicate {
    pub fn new(subscription_id: impl Into<String>, predicate: Predicate) -> Self {
        Self {
            subscription_id: subscription_id.into(),
            predicate,
        }
    }

    pub fn matches(&self, event: &SensorEvent) -> bool {
        self.predicate.matches(event)
    }
}

/// Ids of every registered predicate that matches `event`, by linear scan.
pub fn match_all(registry: &[SubscriptionPredicate], event: &SensorEvent) -> BTreeSet<String> {
    registry
        .iter()
        .filter(|p| p.matches(event))
        .map(|p| p.subscription_id.clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: {message}")]
    SyntaxError { offset: usize, message: String },
    #[error("unknown field {name:?} at byte {offset}")]
    UnknownField { offset: usize, name: String },
    #[error("unknown sensor kind {name:?} at byte {offset}")]
    UnknownKind { offset: usize, name: String },
    #[error("unknown activity state {name:?} at byte {offset}")]
    UnknownActivity { offset: usize, name: String },
    #[error("malformed number {text:?} at byte {offset}")]
    MalformedNumber { offset: usize, text: String },
    #[error("invalid constraint at byte {offset}: {message}")]
    InvalidConstraint { offset: usize, message: String },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::SyntaxError { offset, .. }
            | ParseError::UnknownField { offset, .. }
            | ParseError::UnknownKind { offset, .. }
            | ParseError::UnknownActivity { offset, .. }
            | ParseError::MalformedNumber { offset, .. }
            | ParseError::InvalidConstraint { offset, .. } => *offset,
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Self { src, pos: 0 }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.src.len() - trimmed.len();
    }

    fn at_end(&mut self) -> bool {
        self.skip_ws();
        self.pos == self.src.len()
    }

    fn syntax(&self, message: impl Into<String>) -> ParseError {
        ParseError::SyntaxError {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn word(&mut self) -> Option<(usize, &'a str)> {
        self.skip_ws();
        let start = self.pos;
        let len = self
            .rest()
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(self.rest().len());
        if len == 0 {
            return None;
        }
        self.pos += len;
        Some((start, &self.src[start..start + len]))
    }

    fn expect_char(&mut self, c: char) -> Result<(), ParseError> {
        self.skip_ws();
        if self.rest().starts_with(c) {
            self.pos += c.len_utf8();
            Ok(())
        } else {
            Err(self.syntax(format!("expected '{c}'")))
        }
    }

    fn eat_char(&mut self, c: char) -> bool {
        self.skip_ws();
        if self.rest().starts_with(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn cmp_op(&mut self) -> Result<CmpOp, ParseError> {
        self.skip_ws();
        let rest = self.rest();
        let (op, len) = if rest.starts_with("<=") {
            (CmpOp::Le, 2)
        } else if rest.starts_with(">=") {
            (CmpOp::Ge, 2)
        } else if rest.starts_with("!=") {
            (CmpOp::Ne, 2)
        } else if rest.starts_with('<') {
            (CmpOp::Lt, 1)
        } else if rest.starts_with('>') {
            (CmpOp::Gt, 1)
        } else if rest.starts_with('=') {
            (CmpOp::Eq, 1)
        } else {
            return Err(self.syntax("expected comparison operator"));
        };
        self.pos += len;
        Ok(op)
    }

    fn number(&mut self) -> Result<f64, ParseError> {
        self.skip_ws();
        let start = self.pos;
        let len = self
            .rest()
            .find(|c: char| !(c.is_ascii_alphanumeric() || matches!(c, '.' | '+' | '-')))
            .unwrap_or(self.rest().len());
        if len == 0 {
            return Err(self.syntax("expected number"));
        }
        let text = &self.src[start..start + len];
        self.pos += len;
        let numeric = text
            .bytes()
            .all(|b| b.is_ascii_digit() || matches!(b, b'.' | b'+' | b'-' | b'e' | b'E'))
            && text.bytes().any(|b| b.is_ascii_digit());
        match text.parse::<f64>() {
            Ok(v) if numeric && v.is_finite() => Ok(v),
            _ => Err(ParseError::MalformedNumber {
                offset: start,
                text: text.to_string(),
            }),
        }
    }

    fn integer(&mut self) -> Result<(usize, u64), ParseError> {
        self.skip_ws();
        let start = self.pos;
        let len = self
            .rest()
            .find(|c: char| !(c.is_ascii_alphanumeric() || matches!(c, '.' | '+' | '-')))
            .unwrap_or(self.rest().len());
        if len == 0 {
            return Err(self.syntax("expected integer"));
        }
        let text = &self.src[start..start + len];
        self.pos += len;
        if !text.bytes().all(|b| b.is_ascii_digit()) {
            return Err(ParseError::MalformedNumber {
                offset: start,
                text: text.to_string(),
            });
        }
        text.parse::<u64>()
            .map(|v| (start, v))
            .map_err(|_| ParseError::MalformedNumber {
                offset: start,
                text: text.to_string(),
            })
    }

    fn string(&mut self) -> Result<String, ParseError> {
        self.skip_ws();
        if self.rest().starts_with('"') {
            let start = self.pos;
            self.pos += 1;
            let mut out = String::new();
            let mut chars = self.rest().char_indices();
            while let Some((i, c)) = chars.next() {
                match c {
                    '"' => {
                        self.pos += i + 1;
                        return Ok(out);
                    }
                    '\\' => match chars.next() {
                        Some((_, e @ ('"' | '\\'))) => out.push(e),
                        _ => {
                            return Err(ParseError::SyntaxError {
                                offset: self.pos + i,
                                message: "invalid escape".into(),
                            })
                        }
                    },
                    c => out.push(c),
                }
            }
            Err(ParseError::SyntaxError {
                offset: start,
                message: "unterminated string".into(),
            })
        } else {
            let len = self
                .rest()
                .find(|c: char| c.is_whitespace() || matches!(c, ',' | '[' | ']' | '"'))
                .unwrap_or(self.rest().len());
            if len == 0 {
                return Err(self.syntax("expected publisher id"));
            }
            let text = &self.src[self.pos..self.pos + len];
            self.pos += len;
            Ok(text.to_string())
        }
    }

    fn kind_list(&mut self) -> Result<BTreeSet<SensorKind>, ParseError> {
        let mut kinds = BTreeSet::new();
        loop {
            let (offset, name) = self.word().ok_or_else(|| self.syntax("expected sensor kind"))?;
            let kind = SensorKind::parse_loose(name).ok_or_else(|| ParseError::UnknownKind {
                offset,
                name: name.to_string(),
            })?;
            kinds.insert(kind);
            if !self.eat_char(',') {
                return Ok(kinds);
            }
        }
    }

    fn activity_list(&mut self) -> Result<BTreeSet<ActivityState>, ParseError> {
        let mut states = BTreeSet::new();
        loop {
            let (offset, name) = self.word().ok_or_else(|| self.syntax("expected activity state"))?;
            let state = ActivityState::parse_loose(name).ok_or_else(|| ParseError::UnknownActivity {
                offset,
                name: name.to_string(),
            })?;
            states.insert(state);
            if !self.eat_char(',') {
                return Ok(states);
            }
        }
    }

    fn clause(&mut self) -> Result<AtomicConstraint, ParseError> {
        let (offset, field) = self.word().ok_or_else(|| self.syntax("expected field name"))?;
        let constraint = match field.to_ascii_lowercase().as_str() {
            "kind" => {
                self.expect_char('=')?;
                AtomicConstraint::KindIs(self.kind_list()?)
            }
            "value" => {
                let op = self.cmp_op()?;
                let threshold = self.number()?;
                AtomicConstraint::ValueCmp { op, threshold }
            }
            "publisher" => {
                self.expect_char('=')?;
                AtomicConstraint::PublisherIs(self.string()?)
            }
            "geo" => {
                match self.word() {
                    Some((_, w)) if w.eq_ignore_ascii_case("in") => {}
                    _ => return Err(self.syntax("expected 'in'")),
                }
                self.expect_char('[')?;
                let mut v = [0.0; 4];
                for (i, slot) in v.iter_mut().enumerate() {
                    if i > 0 {
                        self.expect_char(',')?;
                    }
                    *slot = self.number()?;
                }
                self.expect_char(']')?;
                AtomicConstraint::GeoWithin(BoundingBox {
                    min_lat: v[0],
                    min_lon: v[1],
                    max_lat: v[2],
                    max_lon: v[3],
                })
            }
            "activity" => {
                self.expect_char('=')?;
                AtomicConstraint::ActivityIs(self.activity_list()?)
            }
            "confidence" => {
                self.skip_ws();
                if !self.rest().starts_with(">=") {
                    return Err(self.syntax("expected '>='"));
                }
                self.pos += 2;
                let (at, value) = self.integer()?;
                if value > 100 {
                    return Err(ParseError::InvalidConstraint {
                        offset: at,
                        message: "confidence must be within 0..=100".into(),
                    });
                }
                AtomicConstraint::MinConfidence(value as u8)
            }
            _ => {
                return Err(ParseError::UnknownField {
                    offset,
                    name: field.to_string(),
                })
            }
        };
        constraint
            .check()
            .map_err(|message| ParseError::InvalidConstraint { offset, message })?;
        Ok(constraint)
    }

    fn predicate(&mut self) -> Result<Predicate, ParseError> {
        let mut constraints = Vec::new();
        if self.at_end() {
            return Ok(Predicate { constraints });
        }
        loop {
            constraints.push(self.clause()?);
            if self.at_end() {
                return Ok(Predicate { constraints });
            }
            match self.word() {
                Some((_, w)) if w.eq_ignore_ascii_case("and") => {}
                Some((offset, _)) => {
                    return Err(ParseError::SyntaxError {
                        offset,
                        message: "expected 'and'".into(),
                    })
                }
                None => return Err(self.syntax("expected 'and'")),
            }
        }
    }
}
