//! Host↔node serial protocol.
//!
//! Frames are `:ML:<len>:<body>\n` where `<len>` is the decimal byte length
//! of the escaped body. Inside a body, `\` is written as `\\` and a newline
//! as `\n`, so the terminator never appears in a body.
//!
//! Frame bodies carry one of:
//! - an application message `<flow name,level,payload>` (host → node)
//! - an allocation message `MFEA:[{'PS': .., 'N': .., 'PE': .., 'MF': .., 'CL': ..}, ..]`
//! - a control message: `<INFO:RE-ALLOC:INIT>`, `<INFO:RE-ALLOC:ACCEPTED>`,
//!   `<ACK:flow>`, `<ERR:flow:NOT-ALLOCATED>`, `<ERR:flow:NOT-DELIVERED>`

use std::fmt;

use serde::Serialize;

use crate::flows::{CriticalityLevel, Period};
use crate::scalar::{format_rational, parse_rational};

pub const HEADER: &[u8] = b":ML:";
/// Largest accepted escaped body.
pub const MAX_BODY_LEN: usize = 1 << 20;
const MAX_LEN_DIGITS: usize = 7;

fn escape_into(out: &mut Vec<u8>, raw: &[u8]) {
    for &b in raw {
        match b {
            b'\\' => out.extend_from_slice(b"\\\\"),
            b'\n' => out.extend_from_slice(b"\\n"),
            _ => out.push(b),
        }
    }
}

/// Escapes a body so that it contains no raw newline.
pub fn escape_body(raw: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(raw.len());
    escape_into(&mut out, raw);
    out
}

/// Inverse of [`escape_body`]; on error returns the offset of the bad escape.
pub fn unescape_body(escaped: &[u8]) -> Result<Vec<u8>, usize> {
    let mut out = Vec::with_capacity(escaped.len());
    let mut i = 0;
    while i < escaped.len() {
        if escaped[i] == b'\\' {
            match escaped.get(i + 1) {
                Some(b'\\') => out.push(b'\\'),
                Some(b'n') => out.push(b'\n'),
                _ => return Err(i),
            }
            i += 2;
        } else {
            out.push(escaped[i]);
            i += 1;
        }
    }
    Ok(out)
}

pub fn encode_frame(body: &[u8]) -> Vec<u8> {
    let escaped = escape_body(body);
    let mut out = Vec::with_capacity(escaped.len() + 16);
    out.extend_from_slice(HEADER);
    out.extend_from_slice(escaped.len().to_string().as_bytes());
    out.push(b':');
    out.extend_from_slice(&escaped);
    out.push(b'\n');
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Frame {
    pub body: Vec<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum MalformedReason {
    /// Bytes that do not start a frame header.
    Garbage,
    BadLength,
    TooLong,
    /// A newline appeared before the declared length was reached.
    LengthMismatch,
    MissingTerminator,
    BadEscape,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
#[error("malformed frame at byte {offset}: {reason:?}")]
pub struct MalformedFrame {
    /// Absolute stream offset where the malformed region starts.
    pub offset: u64,
    pub reason: MalformedReason,
}

/// Incremental frame decoder.
///
/// Output depends only on the byte sequence, never on how it was chunked.
/// After a malformed region one error is reported and the decoder skips to
/// the next `:ML:`.
#[derive(Clone, Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
    /// Absolute offset of `buf[0]`.
    offset: u64,
    resyncing: bool,
}

enum Step {
    Wait,
    Frame(Frame, usize),
    Malformed(MalformedReason),
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Bytes received but not yet part of a complete frame.
    pub fn pending(&self) -> &[u8] {
        &self.buf
    }

    fn consume(&mut self, n: usize) {
        self.buf.drain(..n);
        self.offset += n as u64;
    }

    pub fn push(&mut self, chunk: &[u8]) -> Vec<Result<Frame, MalformedFrame>> {
        self.buf.extend_from_slice(chunk);
        let mut out = Vec::new();
        loop {
            if self.resyncing {
                match find(&self.buf, HEADER) {
                    Some(pos) => {
                        self.consume(pos);
                        self.resyncing = false;
                    }
                    None => {
                        let keep = partial_header_suffix(&self.buf);
                        self.consume(self.buf.len() - keep);
                        break;
                    }
                }
            }
            match self.step() {
                Step::Wait => break,
                Step::Frame(frame, used) => {
                    self.consume(used);
                    out.push(Ok(frame));
                }
                Step::Malformed(reason) => {
                    out.push(Err(MalformedFrame { offset: self.offset, reason }));
                    self.consume(1);
                    self.resyncing = true;
                }
            }
        }
        out
    }

    fn step(&self) -> Step {
        let buf = &self.buf;
        if buf.is_empty() {
            return Step::Wait;
        }
        let head = buf.len().min(HEADER.len());
        if buf[..head] != HEADER[..head] {
            return Step::Malformed(MalformedReason::Garbage);
        }
        if buf.len() < HEADER.len() {
            return Step::Wait;
        }
        let digits_start = HEADER.len();
        let mut i = digits_start;
        while i < buf.len() && buf[i].is_ascii_digit() {
            i += 1;
            if i - digits_start > MAX_LEN_DIGITS {
                return Step::Malformed(MalformedReason::BadLength);
            }
        }
        if i == buf.len() {
            return Step::Wait;
        }
        if buf[i] != b':' || i == digits_start {
            return Step::Malformed(MalformedReason::BadLength);
        }
        let len: usize = std::str::from_utf8(&buf[digits_start..i])
            .expect("ascii digits")
            .parse()
            .expect("bounded digit count");
        if len > MAX_BODY_LEN {
            return Step::Malformed(MalformedReason::TooLong);
        }
        let body_start = i + 1;
        let body_end = body_start + len;
        let available = buf.len().min(body_end);
        if buf[body_start.min(available)..available].contains(&b'\n') {
            return Step::Malformed(MalformedReason::LengthMismatch);
        }
        if buf.len() <= body_end {
            return Step::Wait;
        }
        if buf[body_end] != b'\n' {
            return Step::Malformed(MalformedReason::MissingTerminator);
        }
        match unescape_body(&buf[body_start..body_end]) {
            Ok(body) => Step::Frame(Frame { body }, body_end + 1),
            Err(_) => Step::Malformed(MalformedReason::BadEscape),
        }
    }
}

fn find(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

/// Length of the longest suffix of `buf` that is a proper prefix of the header.
fn partial_header_suffix(buf: &[u8]) -> usize {
    (1..HEADER.len())
        .rev()
        .find(|&k| buf.len() >= k && buf[buf.len() - k..] == HEADER[..k])
        .unwrap_or(0)
}

/// Decodes one chunk with `decoder`, returning complete frames and errors in
/// stream order. The incomplete remainder stays in the decoder.
pub fn decode_stream(decoder: &mut FrameDecoder, chunk: &[u8]) -> Vec<Result<Frame, MalformedFrame>> {
    decoder.push(chunk)
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("parse error at byte {offset}: {message}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

impl ParseError {
    fn new(offset: usize, message: impl Into<String>) -> Self {
        ParseError { offset, message: message.into() }
    }
}

/// A message written by a flow generator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AppMessage {
    pub flow_name: String,
    pub level: CriticalityLevel,
    pub payload: Vec<u8>,
}

pub fn encode_app(msg: &AppMessage) -> Vec<u8> {
    let mut out = Vec::with_capacity(msg.flow_name.len() + msg.payload.len() + 8);
    out.push(b'<');
    out.extend_from_slice(msg.flow_name.as_bytes());
    out.push(b',');
    out.extend_from_slice(msg.level.get().to_string().as_bytes());
    out.push(b',');
    out.extend_from_slice(&msg.payload);
    out.push(b'>');
    out
}

pub fn decode_app(bytes: &[u8]) -> Result<AppMessage, ParseError> {
    if bytes.first() != Some(&b'<') {
        return Err(ParseError::new(0, "expected `<`"));
    }
    if bytes.len() < 2 || bytes.last() != Some(&b'>') {
        return Err(ParseError::new(bytes.len(), "expected trailing `>`"));
    }
    let inner = &bytes[1..bytes.len() - 1];
    let c1 = inner
        .iter()
        .position(|&b| b == b',')
        .ok_or_else(|| ParseError::new(1, "missing `,` after flow name"))?;
    let rest = &inner[c1 + 1..];
    let c2 = rest
        .iter()
        .position(|&b| b == b',')
        .ok_or_else(|| ParseError::new(c1 + 2, "missing `,` after level"))?;
    let name = std::str::from_utf8(&inner[..c1])
        .map_err(|_| ParseError::new(1, "flow name is not UTF-8"))?;
    if name.is_empty() {
        return Err(ParseError::new(1, "empty flow name"));
    }
    let level_text = std::str::from_utf8(&rest[..c2]).unwrap_or("");
    let level = level_text
        .parse::<u8>()
        .ok()
        .and_then(CriticalityLevel::new)
        .ok_or_else(|| ParseError::new(c1 + 2, "invalid criticality level"))?;
    Ok(AppMessage {
        flow_name: name.to_string(),
        level,
        payload: rest[c2 + 1..].to_vec(),
    })
}

/// One element of an allocation message.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MfeaEntry {
    /// `PS`: payload size in bytes.
    pub payload_size: u32,
    /// `N`: network name.
    pub network: String,
    /// `PE`: period in seconds.
    pub period: Period,
    /// `MF`: message flow name.
    pub flow: String,
    /// `CL`: criticality level.
    pub level: CriticalityLevel,
}

fn quote(s: &str) -> String {
    // Python repr quoting: single quotes unless the text has one and no double.
    let q = if s.contains('\'') && !s.contains('"') { '"' } else { '\'' };
    let mut out = String::with_capacity(s.len() + 2);
    out.push(q);
    for c in s.chars() {
        if c == '\\' || c == q {
            out.push('\\');
        }
        out.push(c);
    }
    out.push(q);
    out
}

pub fn encode_mfea(entries: &[MfeaEntry]) -> String {
    let records: Vec<String> = entries
        .iter()
        .map(|e| {
            format!(
                "{{'PS': {}, 'N': {}, 'PE': {}, 'MF': {}, 'CL': {}}}",
                e.payload_size,
                quote(&e.network),
                format_rational(&e.period.seconds()),
                quote(&e.flow),
                e.level
            )
        })
        .collect();
    format!("MFEA:[{}]", records.join(", "))
}

struct Cursor<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, msg: &str) -> ParseError {
        ParseError::new(self.pos, msg)
    }

    fn rest(&self) -> &'a str {
        &self.text[self.pos..]
    }

    fn ws(&mut self) {
        let trimmed = self.rest().trim_start_matches([' ', '\t']);
        self.pos = self.text.len() - trimmed.len();
    }

    fn eat(&mut self, token: &str) -> bool {
        if self.rest().starts_with(token) {
            self.pos += token.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, token: &str) -> Result<(), ParseError> {
        if self.eat(token) {
            Ok(())
        } else {
            Err(self.err(&format!("expected `{token}`")))
        }
    }

    fn string(&mut self) -> Result<String, ParseError> {
        let q = match self.rest().chars().next() {
            Some(c @ ('\'' | '"')) => c,
            _ => return Err(self.err("expected quoted string")),
        };
        self.pos += 1;
        let mut out = String::new();
        let mut chars = self.rest().char_indices();
        while let Some((i, c)) = chars.next() {
            if c == '\\' {
                match chars.next() {
                    Some((_, e)) => out.push(e),
                    None => {
                        self.pos += i;
                        return Err(self.err("dangling escape"));
                    }
                }
            } else if c == q {
                self.pos += i + 1;
                return Ok(out);
            } else {
                out.push(c);
            }
        }
        self.pos = self.text.len();
        Err(self.err("unterminated string"))
    }

    fn number_token(&mut self) -> Result<&'a str, ParseError> {
        let rest = self.rest();
        let len = rest
            .find(|c: char| !(c.is_ascii_digit() || c == '.' || c == '/'))
            .unwrap_or(rest.len());
        if len == 0 {
            return Err(self.err("expected number"));
        }
        self.pos += len;
        Ok(&rest[..len])
    }
}

pub fn decode_mfea(text: &str) -> Result<Vec<MfeaEntry>, ParseError> {
    let mut cur = Cursor { text, pos: 0 };
    cur.ws();
    cur.expect("MFEA:")?;
    cur.ws();
    cur.expect("[")?;
    cur.ws();
    let mut entries = Vec::new();
    if !cur.eat("]") {
        loop {
            cur.ws();
            entries.push(decode_record(&mut cur)?);
            cur.ws();
            if cur.eat("]") {
                break;
            }
            cur.expect(",")?;
        }
    }
    cur.ws();
    if !cur.rest().is_empty() {
        return Err(cur.err("trailing characters"));
    }
    Ok(entries)
}

fn decode_record(cur: &mut Cursor<'_>) -> Result<MfeaEntry, ParseError> {
    let start = cur.pos;
    cur.expect("{")?;
    let (mut ps, mut n, mut pe, mut mf, mut cl) = (None, None, None, None, None);
    loop {
        cur.ws();
        let key_at = cur.pos;
        let key = cur.string()?;
        cur.ws();
        cur.expect(":")?;
        cur.ws();
        let value_at = cur.pos;
        let dup = |k: &str| ParseError::new(key_at, format!("duplicate key `{k}`"));
        match key.as_str() {
            "PS" => {
                let v = cur.number_token()?.parse::<u32>().map_err(|_| ParseError::new(value_at, "PS must be an integer"))?;
                if ps.replace(v).is_some() {
                    return Err(dup("PS"));
                }
            }
            "N" => {
                if n.replace(cur.string()?).is_some() {
                    return Err(dup("N"));
                }
            }
            "PE" => {
                let v = parse_rational(cur.number_token()?)
                    .and_then(Period::new)
                    .ok_or_else(|| ParseError::new(value_at, "PE must be a positive number"))?;
                if pe.replace(v).is_some() {
                    return Err(dup("PE"));
                }
            }
            "MF" => {
                if mf.replace(cur.string()?).is_some() {
                    return Err(dup("MF"));
                }
            }
            "CL" => {
                let v = cur
                    .number_token()?
                    .parse::<u8>()
                    .ok()
                    .and_then(CriticalityLevel::new)
                    .ok_or_else(|| ParseError::new(value_at, "CL must be a level >= 1"))?;
                if cl.replace(v).is_some() {
                    return Err(dup("CL"));
                }
            }
            other => return Err(ParseError::new(key_at, format!("unknown key `{other}`"))),
        }
        cur.ws();
        if cur.eat("}") {
            break;
        }
        cur.expect(",")?;
    }
    let missing = |k: &str| ParseError::new(start, format!("record missing `{k}`"));
    Ok(MfeaEntry {
        payload_size: ps.ok_or_else(|| missing("PS"))?,
        network: n.ok_or_else(|| missing("N"))?,
        period: pe.ok_or_else(|| missing("PE"))?,
        flow: mf.ok_or_else(|| missing("MF"))?,
        level: cl.ok_or_else(|| missing("CL"))?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum ErrorReason {
    NotAllocated,
    NotDelivered,
}

impl ErrorReason {
    fn token(self) -> &'static str {
        match self {
            ErrorReason::NotAllocated => "NOT-ALLOCATED",
            ErrorReason::NotDelivered => "NOT-DELIVERED",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ControlMessage {
    ReallocInit,
    ReallocAccepted,
    Ack(String),
    Err(String, ErrorReason),
}

pub fn encode_control(msg: &ControlMessage) -> String {
    match msg {
        ControlMessage::ReallocInit => "<INFO:RE-ALLOC:INIT>".into(),
        ControlMessage::ReallocAccepted => "<INFO:RE-ALLOC:ACCEPTED>".into(),
        ControlMessage::Ack(flow) => format!("<ACK:{flow}>"),
        ControlMessage::Err(flow, reason) => format!("<ERR:{flow}:{}>", reason.token()),
    }
}

pub fn parse_control(text: &str) -> Result<ControlMessage, ParseError> {
    match text {
        "<INFO:RE-ALLOC:INIT>" => return Ok(ControlMessage::ReallocInit),
        "<INFO:RE-ALLOC:ACCEPTED>" => return Ok(ControlMessage::ReallocAccepted),
        _ => {}
    }
    let inner = text
        .strip_prefix('<')
        .ok_or_else(|| ParseError::new(0, "expected `<`"))?
        .strip_suffix('>')
        .ok_or_else(|| ParseError::new(text.len(), "expected trailing `>`"))?;
    if let Some(flow) = inner.strip_prefix("ACK:") {
        if flow.is_empty() || flow.contains(':') {
            return Err(ParseError::new(5, "invalid flow name in ACK"));
        }
        return Ok(ControlMessage::Ack(flow.to_string()));
    }
    if let Some(rest) = inner.strip_prefix("ERR:") {
        let (flow, reason) = rest
            .rsplit_once(':')
            .ok_or_else(|| ParseError::new(5, "ERR needs `flow:reason`"))?;
        if flow.is_empty() || flow.contains(':') {
            return Err(ParseError::new(5, "invalid flow name in ERR"));
        }
        let reason = match reason {
            "NOT-ALLOCATED" => ErrorReason::NotAllocated,
            "NOT-DELIVERED" => ErrorReason::NotDelivered,
            _ => return Err(ParseError::new(5 + flow.len() + 1, "unknown error reason")),
        };
        return Ok(ControlMessage::Err(flow.to_string(), reason));
    }
    Err(ParseError::new(1, "unknown control message"))
}

/// Anything the node writes to the host.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NodeMessage {
    Mfea(Vec<MfeaEntry>),
    Control(ControlMessage),
}

impl NodeMessage {
    pub fn encode(&self) -> Vec<u8> {
        match self {
            NodeMessage::Mfea(entries) => encode_mfea(entries).into_bytes(),
            NodeMessage::Control(c) => encode_control(c).into_bytes(),
        }
    }

    pub fn decode(body: &[u8]) -> Result<Self, ParseError> {
        let text = std::str::from_utf8(body).map_err(|e| ParseError::new(e.valid_up_to(), "not UTF-8"))?;
        if text.starts_with("MFEA:") {
            decode_mfea(text).map(NodeMessage::Mfea)
        } else {
            parse_control(text).map(NodeMessage::Control)
        }
    }
}

/// Anything the host writes to the node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum HostMessage {
    App(AppMessage),
    Control(ControlMessage),
}

impl HostMessage {
    pub fn encode(&self) -> Vec<u8> {
        match self {
            HostMessage::App(m) => encode_app(m),
            HostMessage::Control(c) => encode_control(c).into_bytes(),
        }
    }

    pub fn decode(body: &[u8]) -> Result<Self, ParseError> {
        // Flow names never contain `:`, so `<INFO:` cannot open an app message.
        if body.starts_with(b"<INFO:") {
            let text = std::str::from_utf8(body).map_err(|e| ParseError::new(e.valid_up_to(), "not UTF-8"))?;
            parse_control(text).map(HostMessage::Control)
        } else {
            decode_app(body).map(HostMessage::App)
        }
    }
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&String::from_utf8_lossy(&self.body))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lvl(v: u8) -> CriticalityLevel {
        CriticalityLevel::new(v).unwrap()
    }

    fn bodies(results: Vec<Result<Frame, MalformedFrame>>) -> Vec<Result<Vec<u8>, MalformedReason>> {
        results.into_iter().map(|r| r.map(|f| f.body).map_err(|e| e.reason)).collect()
    }

    #[test]
    fn encode_frame_examples() {
        assert_eq!(encode_frame(b"HELLO"), b":ML:5:HELLO\n");
        assert_eq!(encode_frame(b""), b":ML:0:\n");
        assert_eq!(encode_frame(b"a\nb"), b":ML:4:a\\nb\n");
        assert_eq!(encode_frame(b"a\\b"), b":ML:4:a\\\\b\n");
    }

    #[test]
    fn decode_two_frames_in_one_chunk() {
        let mut d = FrameDecoder::new();
        let out = bodies(d.push(b":ML:5:HELLO\n:ML:2:HI\n"));
        assert_eq!(out, vec![Ok(b"HELLO".to_vec()), Ok(b"HI".to_vec())]);
        assert!(d.pending().is_empty());
    }

    #[test]
    fn decode_split_mid_frame() {
        let mut d = FrameDecoder::new();
        assert!(d.push(b":ML:5:HE").is_empty());
        assert_eq!(d.pending(), b":ML:5:HE");
        let out = bodies(d.push(b"LLO\n:ML:2:HI\n"));
        assert_eq!(out, vec![Ok(b"HELLO".to_vec()), Ok(b"HI".to_vec())]);
    }

    #[test]
    fn garbage_then_resync() {
        let mut d = FrameDecoder::new();
        let out = d.push(b"garbage:ML:2:HI\n");
        assert_eq!(out.len(), 2);
        assert_eq!(out[0], Err(MalformedFrame { offset: 0, reason: MalformedReason::Garbage }));
        assert_eq!(out[1].as_ref().unwrap().body, b"HI");
    }

    #[test]
    fn malformed_variants() {
        let cases: [(&[u8], MalformedReason); 5] = [
            (b":ML:x:HI\n", MalformedReason::BadLength),
            (b":ML::HI\n", MalformedReason::BadLength),
            (b":ML:5:HI\n", MalformedReason::LengthMismatch),
            (b":ML:1:HI\n", MalformedReason::MissingTerminator),
            (b":ML:2:\\q\n", MalformedReason::BadEscape),
        ];
        for (input, reason) in cases {
            let mut d = FrameDecoder::new();
            let mut stream = input.to_vec();
            stream.extend_from_slice(b":ML:2:OK\n");
            let out = bodies(d.push(&stream));
            assert_eq!(out, vec![Err(reason), Ok(b"OK".to_vec())], "{:?}", String::from_utf8_lossy(input));
        }
    }

    #[test]
    fn oversized_length_rejected() {
        let mut d = FrameDecoder::new();
        let out = bodies(d.push(b":ML:99999999:x"));
        assert_eq!(out, vec![Err(MalformedReason::BadLength)]);
    }

    #[test]
    fn mfea_paper_sample() {
        let entry = MfeaEntry {
            payload_size: 41,
            network: "Wi-Fi".into(),
            period: Period::from_secs(10).unwrap(),
            flow: "Kitchen Sensor".into(),
            level: lvl(1),
        };
        let text = encode_mfea(std::slice::from_ref(&entry));
        assert_eq!(text, "MFEA:[{'PS': 41, 'N': 'Wi-Fi', 'PE': 10, 'MF': 'Kitchen Sensor', 'CL': 1}]");
        assert_eq!(decode_mfea(&text).unwrap(), vec![entry]);
    }

    #[test]
    fn mfea_empty_and_two_entries() {
        assert_eq!(encode_mfea(&[]), "MFEA:[]");
        assert_eq!(decode_mfea("MFEA:[]").unwrap(), vec![]);
        let a = MfeaEntry {
            payload_size: 10,
            network: "Sigfox".into(),
            period: Period::new(num_rational::Ratio::new(21, 2)).unwrap(),
            flow: "fall detection".into(),
            level: lvl(3),
        };
        let b = MfeaEntry { flow: "it's".into(), ..a.clone() };
        let text = encode_mfea(&[a.clone(), b.clone()]);
        assert_eq!(
            text,
            "MFEA:[{'PS': 10, 'N': 'Sigfox', 'PE': 10.5, 'MF': 'fall detection', 'CL': 3}, \
             {'PS': 10, 'N': 'Sigfox', 'PE': 10.5, 'MF': \"it's\", 'CL': 3}]"
        );
        assert_eq!(decode_mfea(&text).unwrap(), vec![a, b]);
    }

    #[test]
    fn mfea_accepts_double_quotes() {
        let text = r#"MFEA:[{"PS": 41, "N": "Wi-Fi", "PE": 10, "MF": "Kitchen Sensor", "CL": 1}]"#;
        assert_eq!(decode_mfea(text).unwrap()[0].flow, "Kitchen Sensor");
    }

    #[test]
    fn mfea_errors_carry_offsets() {
        let e = decode_mfea("MFEA:[{'PS': 41}]").unwrap_err();
        assert_eq!(e.offset, 6);
        let e = decode_mfea("MFEA:[{'XX': 1}]").unwrap_err();
        assert_eq!(e.offset, 7);
        assert!(decode_mfea("MFEA:[] extra").is_err());
        assert!(decode_mfea("MFEA:[{'PS': 1, 'N': 'a', 'PE': 0, 'MF': 'b', 'CL': 1}]").is_err());
    }

    #[test]
    fn control_forms() {
        assert_eq!(parse_control("<INFO:RE-ALLOC:INIT>").unwrap(), ControlMessage::ReallocInit);
        assert_eq!(parse_control("<INFO:RE-ALLOC:ACCEPTED>").unwrap(), ControlMessage::ReallocAccepted);
        assert_eq!(
            parse_control("<ERR:fall detection:NOT-ALLOCATED>").unwrap(),
            ControlMessage::Err("fall detection".into(), ErrorReason::NotAllocated)
        );
        assert_eq!(parse_control("<ACK:heart monitoring>").unwrap(), ControlMessage::Ack("heart monitoring".into()));
        assert_eq!(
            encode_control(&ControlMessage::Err("x".into(), ErrorReason::NotDelivered)),
            "<ERR:x:NOT-DELIVERED>"
        );
        assert!(parse_control("<INFO:RE-ALLOC:MAYBE>").is_err());
        assert!(parse_control("<ERR:x:LOST>").is_err());
        assert!(parse_control("ACK:x").is_err());
    }

    #[test]
    fn app_message_with_delimiters_in_payload() {
        let msg = AppMessage { flow_name: "heart monitoring".into(), level: lvl(2), payload: b"a,b>c\n".to_vec() };
        let bytes = encode_app(&msg);
        assert_eq!(&bytes[..21], b"<heart monitoring,2,a");
        assert_eq!(decode_app(&bytes).unwrap(), msg);
        assert!(decode_app(b"<x,0,>").is_err());
        assert!(decode_app(b"<,1,>").is_err());
    }

    fn name_strategy() -> impl Strategy<Value = String> {
        "[A-Za-z0-9 _'\"/\\\\.-]{1,20}"
    }

    proptest! {
        #[test]
        fn frame_round_trip(body in proptest::collection::vec(any::<u8>(), 0..64)) {
            let encoded = encode_frame(&body);
            let declared: usize = std::str::from_utf8(&encoded[4..encoded.iter().skip(4).position(|&b| b == b':').unwrap() + 4])
                .unwrap().parse().unwrap();
            prop_assert_eq!(declared, escape_body(&body).len());
            let mut d = FrameDecoder::new();
            let out = d.push(&encoded);
            prop_assert_eq!(out, vec![Ok(Frame { body })]);
        }

        #[test]
        fn chunking_invariance(
            bodies in proptest::collection::vec(proptest::collection::vec(any::<u8>(), 0..16), 0..5),
            noise in proptest::collection::vec(any::<u8>(), 0..8),
            split in any::<proptest::sample::Index>(),
        ) {
            let mut stream = noise.clone();
            for b in &bodies {
                stream.extend(encode_frame(b));
            }
            let mut whole = FrameDecoder::new();
            let expected = whole.push(&stream);
            let at = split.index(stream.len() + 1);
            let mut parts = FrameDecoder::new();
            let mut got = parts.push(&stream[..at]);
            got.extend(parts.push(&stream[at..]));
            prop_assert_eq!(got, expected);
            prop_assert_eq!(parts.pending(), whole.pending());
        }

        #[test]
        fn mfea_round_trip(
            entries in proptest::collection::vec(
                (any::<u32>(), name_strategy(), 1i128..100_000, 1i128..1000, name_strategy(), 1u8..10),
                0..4,
            )
        ) {
            let entries: Vec<MfeaEntry> = entries
                .into_iter()
                .map(|(ps, n, num, den, mf, cl)| MfeaEntry {
                    payload_size: ps,
                    network: n,
                    period: Period::new(num_rational::Ratio::new(num, den)).unwrap(),
                    flow: mf,
                    level: lvl(cl),
                })
                .collect();
            prop_assert_eq!(decode_mfea(&encode_mfea(&entries)).unwrap(), entries);
        }
    }
}
