//! Text form of service descriptors:
//!
//! ```text
//! [IP=131.12.10.1, PORT=63150, TASK_ID=25376, METRIC=0, PAR_LIST=[PRICE, BANDWITH, DISKSIZE], PRO_ID=10]
//! ```
//!
//! Keys are case-insensitive and whitespace around `=` and `,` is ignored.
//! Offers ride along in an `OFFERS=[{IDX=0, PRICE=50, ...}, ...]` key or come
//! from a separate offers file with one `{PRO_ID=.., TASK_ID=.., IDX=.., ...}`
//! record per line. Literal values cannot contain `,`, `=`, `[`, `]`, `{`, `}`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::model::{Offer, ParamName, ProviderId, ServiceDescriptor, TaskId, Value};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DescriptorError {
    #[error("missing key {0}")]
    MissingKey(&'static str),
    #[error("malformed value for {key}: {reason}")]
    MalformedValue { key: String, reason: String },
    #[error("metric {0} is outside [0,1]")]
    MetricOutOfRange(f64),
    #[error("syntax error at byte {pos}: {reason}")]
    Syntax { pos: usize, reason: String },
    #[error("line {line}: {source}")]
    Line { line: usize, source: Box<DescriptorError> },
    #[error("offer for provider {provider} task {task} has no matching descriptor")]
    OrphanOffer { provider: ProviderId, task: TaskId },
}

#[derive(Debug, Clone, PartialEq)]
enum Raw {
    Scalar(String),
    List(Vec<Raw>),
    Record(Vec<(String, Raw)>),
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Parser { src: src.as_bytes(), pos: 0 }
    }

    fn err<T>(&self, reason: impl Into<String>) -> Result<T, DescriptorError> {
        Err(DescriptorError::Syntax { pos: self.pos, reason: reason.into() })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, b: u8) -> Result<(), DescriptorError> {
        if self.peek() == Some(b) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected '{}'", b as char))
        }
    }

    fn scalar(&mut self) -> Result<String, DescriptorError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && !matches!(self.src[self.pos], b',' | b'=' | b'[' | b']' | b'{' | b'}') {
            self.pos += 1;
        }
        let s = std::str::from_utf8(&self.src[start..self.pos]).expect("split at ASCII delimiters").trim();
        if s.is_empty() {
            return self.err("empty value");
        }
        Ok(s.to_string())
    }

    fn value(&mut self) -> Result<Raw, DescriptorError> {
        match self.peek() {
            Some(b'[') => {
                self.pos += 1;
                let mut items = Vec::new();
                if self.peek() == Some(b']') {
                    self.pos += 1;
                    return Ok(Raw::List(items));
                }
                loop {
                    items.push(self.value()?);
                    match self.peek() {
                        Some(b',') => self.pos += 1,
                        Some(b']') => {
                            self.pos += 1;
                            return Ok(Raw::List(items));
                        }
                        _ => return self.err("expected ',' or ']'"),
                    }
                }
            }
            Some(b'{') => {
                self.pos += 1;
                Ok(Raw::Record(self.fields(b'}')?))
            }
            _ => Ok(Raw::Scalar(self.scalar()?)),
        }
    }

    /// `key=value, ...` up to and including `close`.
    fn fields(&mut self, close: u8) -> Result<Vec<(String, Raw)>, DescriptorError> {
        let mut out = Vec::new();
        if self.peek() == Some(close) {
            self.pos += 1;
            return Ok(out);
        }
        loop {
            let key = self.scalar()?;
            self.expect(b'=')?;
            let value = self.value()?;
            out.push((key, value));
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(c) if c == close => {
                    self.pos += 1;
                    return Ok(out);
                }
                _ => return self.err(format!("expected ',' or '{}'", close as char)),
            }
        }
    }

    fn record(mut self, open: u8, close: u8) -> Result<Vec<(String, Raw)>, DescriptorError> {
        self.expect(open)?;
        let fields = self.fields(close)?;
        if self.peek().is_some() {
            return self.err("trailing input after record");
        }
        Ok(fields)
    }
}

/// Upper-cased key with LaTeX-style `\_` escapes removed.
fn normalize_key(key: &str) -> String {
    key.replace('\\', "").to_ascii_uppercase()
}

struct Fields(BTreeMap<String, Raw>);

impl Fields {
    fn from_raw(raw: Vec<(String, Raw)>) -> Result<Fields, DescriptorError> {
        let mut map = BTreeMap::new();
        for (k, v) in raw {
            let key = normalize_key(&k);
            if map.insert(key.clone(), v).is_some() {
                return Err(DescriptorError::MalformedValue { key, reason: "duplicate key".into() });
            }
        }
        Ok(Fields(map))
    }

    fn take(&mut self, key: &'static str) -> Option<Raw> {
        self.0.remove(key)
    }

    fn scalar(&mut self, key: &'static str) -> Result<String, DescriptorError> {
        match self.take(key) {
            Some(Raw::Scalar(s)) => Ok(s),
            Some(_) => Err(DescriptorError::MalformedValue { key: key.into(), reason: "expected a scalar".into() }),
            None => Err(DescriptorError::MissingKey(key)),
        }
    }

    fn parsed<T: std::str::FromStr>(&mut self, key: &'static str) -> Result<T, DescriptorError> {
        let s = self.scalar(key)?;
        s.parse().map_err(|_| DescriptorError::MalformedValue { key: key.into(), reason: format!("cannot parse {s:?}") })
    }
}

fn parse_metric(s: &str) -> Result<f64, DescriptorError> {
    match Value::parse(s) {
        Value::Number(m) if (0.0..=1.0).contains(&m) => Ok(m),
        Value::Number(m) => Err(DescriptorError::MetricOutOfRange(m)),
        Value::Literal(_) => Err(DescriptorError::MalformedValue { key: "METRIC".into(), reason: format!("not a number: {s:?}") }),
    }
}

fn parse_offer_fields(raw: Vec<(String, Raw)>, provider: ProviderId, task: &TaskId, position: usize) -> Result<Offer, DescriptorError> {
    let mut offer = Offer::new(provider, task.clone(), position as u32);
    for (k, v) in raw {
        let Raw::Scalar(s) = v else {
            return Err(DescriptorError::MalformedValue { key: k, reason: "offer values must be scalars".into() });
        };
        if normalize_key(&k) == "IDX" {
            offer.index = s.parse().map_err(|_| DescriptorError::MalformedValue { key: "IDX".into(), reason: format!("cannot parse {s:?}") })?;
            continue;
        }
        let name = ParamName::new(k.trim());
        if offer.values.insert(name, Value::parse(&s)).is_some() {
            return Err(DescriptorError::MalformedValue { key: k, reason: "duplicate parameter".into() });
        }
    }
    Ok(offer)
}

/// Parses one bracketed descriptor record.
pub fn parse_descriptor(text: &str) -> Result<ServiceDescriptor, DescriptorError> {
    let mut f = Fields::from_raw(Parser::new(text).record(b'[', b']')?)?;
    let address = f.scalar("IP")?;
    let port: u16 = f.parsed("PORT")?;
    let task = TaskId::new(f.scalar("TASK_ID")?);
    let metric = parse_metric(&f.scalar("METRIC")?)?;
    let par_list = match f.take("PAR_LIST") {
        Some(Raw::List(items)) => items
            .into_iter()
            .map(|i| match i {
                Raw::Scalar(s) => Ok(ParamName::new(s)),
                _ => Err(DescriptorError::MalformedValue { key: "PAR_LIST".into(), reason: "expected names".into() }),
            })
            .collect::<Result<Vec<_>, _>>()?,
        Some(_) => return Err(DescriptorError::MalformedValue { key: "PAR_LIST".into(), reason: "expected a list".into() }),
        None => return Err(DescriptorError::MissingKey("PAR_LIST")),
    };
    let provider = ProviderId(f.parsed("PRO_ID")?);
    let offers = match f.take("OFFERS") {
        None => Vec::new(),
        Some(Raw::List(items)) => items
            .into_iter()
            .enumerate()
            .map(|(i, item)| match item {
                Raw::Record(fields) => parse_offer_fields(fields, provider, &task, i),
                _ => Err(DescriptorError::MalformedValue { key: "OFFERS".into(), reason: "expected {...} records".into() }),
            })
            .collect::<Result<Vec<_>, _>>()?,
        Some(_) => return Err(DescriptorError::MalformedValue { key: "OFFERS".into(), reason: "expected a list".into() }),
    };
    Ok(ServiceDescriptor { address, port, task, metric, par_list, provider, offers })
}

/// Writes a descriptor in the record syntax accepted by [`parse_descriptor`].
pub fn emit_descriptor(d: &ServiceDescriptor) -> String {
    let mut out = String::new();
    let pars: Vec<&str> = d.par_list.iter().map(ParamName::as_str).collect();
    write!(
        out,
        "[IP={}, PORT={}, TASK_ID={}, METRIC={}, PAR_LIST=[{}], PRO_ID={}",
        d.address,
        d.port,
        d.task,
        d.metric,
        pars.join(", "),
        d.provider
    )
    .unwrap();
    if !d.offers.is_empty() {
        out.push_str(", OFFERS=[");
        for (i, o) in d.offers.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            write!(out, "{{IDX={}", o.index).unwrap();
            for (k, v) in &o.values {
                write!(out, ", {k}={v}").unwrap();
            }
            out.push('}');
        }
        out.push(']');
    }
    out.push(']');
    out
}

fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn at_line(line: usize) -> impl Fn(DescriptorError) -> DescriptorError {
    move |e| DescriptorError::Line { line, source: Box::new(e) }
}

/// Parses a descriptor file: one record per line, `#` comments allowed.
pub fn parse_descriptor_file(text: &str) -> Result<Vec<ServiceDescriptor>, DescriptorError> {
    lines(text).map(|(n, l)| parse_descriptor(l).map_err(at_line(n))).collect()
}

pub fn emit_descriptor_file(descriptors: &[ServiceDescriptor]) -> String {
    descriptors.iter().map(|d| emit_descriptor(d) + "\n").collect()
}

/// Parses an offers file and appends each offer to the descriptor with the
/// same provider and task.
pub fn attach_offers(descriptors: &mut [ServiceDescriptor], text: &str) -> Result<usize, DescriptorError> {
    let mut n = 0;
    for (line, l) in lines(text) {
        let mut raw = Parser::new(l).record(b'{', b'}').map_err(at_line(line))?;
        let mut take = |key: &'static str| -> Result<String, DescriptorError> {
            let pos = raw.iter().position(|(k, _)| normalize_key(k) == key).ok_or(DescriptorError::MissingKey(key))?;
            match raw.remove(pos).1 {
                Raw::Scalar(s) => Ok(s),
                _ => Err(DescriptorError::MalformedValue { key: key.into(), reason: "expected a scalar".into() }),
            }
        };
        let provider = take("PRO_ID")
            .and_then(|s| s.parse().map(ProviderId).map_err(|_| DescriptorError::MalformedValue { key: "PRO_ID".into(), reason: s }))
            .map_err(at_line(line))?;
        let task = TaskId::new(take("TASK_ID").map_err(at_line(line))?);
        let d = descriptors
            .iter_mut()
            .find(|d| d.provider == provider && d.task == task)
            .ok_or_else(|| at_line(line)(DescriptorError::OrphanOffer { provider, task: task.clone() }))?;
        let offer = parse_offer_fields(raw, provider, &task, d.offers.len()).map_err(at_line(line))?;
        d.offers.push(offer);
        n += 1;
    }
    Ok(n)
}
