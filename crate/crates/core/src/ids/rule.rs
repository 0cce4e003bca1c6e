use std::fmt;
use std::net::Ipv4Addr;

use thiserror::Error;

use crate::netcore::TcpFlags;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("rule parse error at byte {offset}: {reason}")]
pub struct ParseError {
    pub offset: usize,
    pub reason: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AddrSpec {
    Any,
    Ip(Ipv4Addr),
}

impl AddrSpec {
    pub fn matches(&self, ip: Ipv4Addr) -> bool {
        match self {
            AddrSpec::Any => true,
            AddrSpec::Ip(a) => *a == ip,
        }
    }
}

impl fmt::Display for AddrSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AddrSpec::Any => f.write_str("any"),
            AddrSpec::Ip(a) => write!(f, "{a}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PortSpec {
    Any,
    Port(u16),
}

impl PortSpec {
    pub fn matches(&self, port: u16) -> bool {
        match self {
            PortSpec::Any => true,
            PortSpec::Port(p) => *p == port,
        }
    }
}

impl fmt::Display for PortSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PortSpec::Any => f.write_str("any"),
            PortSpec::Port(p) => write!(f, "{p}"),
        }
    }
}

/// `threshold: type threshold, track by_dst, count N, seconds S`. The only
/// supported type and track are implied.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Threshold {
    pub count: u32,
    pub seconds: u32,
}

/// One parsed detection rule. Action is always `alert` and protocol always `tcp`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdsRule {
    pub src: AddrSpec,
    /// Absent when the rule header omits the source port.
    pub src_port: Option<PortSpec>,
    pub dst: AddrSpec,
    pub dst_port: PortSpec,
    pub msg: String,
    /// Required-set: a segment matches if it carries at least these flags.
    pub flags: TcpFlags,
    pub threshold: Option<Threshold>,
    pub sid: u32,
}

impl IdsRule {
    pub fn render(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for IdsRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "alert tcp {}", self.src)?;
        if let Some(p) = self.src_port {
            write!(f, " {p}")?;
        }
        write!(f, " -> {} {} (msg:\"", self.dst, self.dst_port)?;
        for c in self.msg.chars() {
            if c == '"' || c == '\\' {
                f.write_str("\\")?;
            }
            write!(f, "{c}")?;
        }
        f.write_str("\";")?;
        if !self.flags.is_empty() {
            f.write_str(" flags:")?;
            for (flag, letter) in FLAG_LETTERS {
                if self.flags.contains(flag) {
                    write!(f, "{letter}.")?;
                }
            }
            f.write_str(";")?;
        }
        if let Some(t) = self.threshold {
            write!(
                f,
                " threshold: type threshold, track by_dst, count {}, seconds {};",
                t.count, t.seconds
            )?;
        }
        write!(f, " sid:{};)", self.sid)
    }
}

const FLAG_LETTERS: [(TcpFlags, char); 5] = [
    (TcpFlags::FIN, 'F'),
    (TcpFlags::SYN, 'S'),
    (TcpFlags::RST, 'R'),
    (TcpFlags::PSH, 'P'),
    (TcpFlags::ACK, 'A'),
];

struct Cursor<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err<T>(&self, at: usize, reason: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError {
            offset: at,
            reason: reason.into(),
        })
    }

    fn rest(&self) -> &'a str {
        &self.text[self.pos..]
    }

    fn skip_ws(&mut self) {
        let r = self.rest();
        self.pos += r.len() - r.trim_start().len();
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<(), ParseError> {
        self.skip_ws();
        if self.eat(c) {
            Ok(())
        } else {
            self.err(self.pos, format!("expected `{c}`"))
        }
    }

    /// Header token: run of non-whitespace stopping before `(`.
    fn word(&mut self) -> (usize, &'a str) {
        self.skip_ws();
        let start = self.pos;
        let r = self.rest();
        let len = r.find(|c: char| c.is_whitespace() || c == '(').unwrap_or(r.len());
        self.pos += len;
        (start, &self.text[start..self.pos])
    }

    fn ident(&mut self) -> (usize, &'a str) {
        self.skip_ws();
        let start = self.pos;
        let r = self.rest();
        let len = r
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(r.len());
        self.pos += len;
        (start, &self.text[start..self.pos])
    }

    /// Raw option value up to (not including) the terminating `;`.
    fn value(&mut self) -> Result<(usize, &'a str), ParseError> {
        self.skip_ws();
        let start = self.pos;
        match self.rest().find(';') {
            Some(n) => {
                self.pos += n;
                Ok((start, self.text[start..self.pos].trim_end()))
            }
            None => self.err(start, "option not terminated by `;`"),
        }
    }

    fn quoted(&mut self) -> Result<String, ParseError> {
        self.skip_ws();
        let open = self.pos;
        if !self.eat('"') {
            return self.err(open, "expected quoted string");
        }
        let mut out = String::new();
        loop {
            match self.peek() {
                None => return self.err(open, "unterminated string"),
                Some('"') => {
                    self.pos += 1;
                    return Ok(out);
                }
                Some('\\') => {
                    self.pos += 1;
                    match self.peek() {
                        Some(c @ ('"' | '\\')) => {
                            out.push(c);
                            self.pos += 1;
                        }
                        _ => return self.err(self.pos, "bad escape"),
                    }
                }
                Some(c) => {
                    out.push(c);
                    self.pos += c.len_utf8();
                }
            }
        }
    }
}

fn parse_addr(at: usize, tok: &str) -> Result<AddrSpec, ParseError> {
    if tok == "any" {
        return Ok(AddrSpec::Any);
    }
    tok.parse().map(AddrSpec::Ip).map_err(|_| ParseError {
        offset: at,
        reason: format!("bad address `{tok}`"),
    })
}

fn parse_port(at: usize, tok: &str) -> Result<PortSpec, ParseError> {
    if tok == "any" {
        return Ok(PortSpec::Any);
    }
    tok.parse().map(PortSpec::Port).map_err(|_| ParseError {
        offset: at,
        reason: format!("bad port `{tok}`"),
    })
}

fn parse_u32(at: usize, tok: &str, what: &str) -> Result<u32, ParseError> {
    tok.trim().parse().map_err(|_| ParseError {
        offset: at,
        reason: format!("bad {what} `{}`", tok.trim()),
    })
}

fn parse_flags(at: usize, val: &str) -> Result<TcpFlags, ParseError> {
    let mut flags = TcpFlags::empty();
    for (i, c) in val.char_indices() {
        let flag = match c {
            '.' => continue,
            'F' => TcpFlags::FIN,
            'S' => TcpFlags::SYN,
            'R' => TcpFlags::RST,
            'P' => TcpFlags::PSH,
            'A' => TcpFlags::ACK,
            _ => {
                return Err(ParseError {
                    offset: at + i,
                    reason: format!("unsupported flag `{c}`"),
                })
            }
        };
        flags |= flag;
    }
    if flags.is_empty() {
        return Err(ParseError {
            offset: at,
            reason: "empty flags".into(),
        });
    }
    Ok(flags)
}

fn parse_threshold(at: usize, val: &str) -> Result<Threshold, ParseError> {
    let (mut ty, mut track, mut count, mut seconds) = (None, None, None, None);
    let mut off = at;
    for part in val.split(',') {
        let here = off + (part.len() - part.trim_start().len());
        off += part.len() + 1;
        let mut it = part.split_whitespace();
        let (Some(key), Some(v), None) = (it.next(), it.next(), it.next()) else {
            return Err(ParseError {
                offset: here,
                reason: format!("bad threshold clause `{}`", part.trim()),
            });
        };
        let slot = match key {
            "type" => &mut ty,
            "track" => &mut track,
            "count" => &mut count,
            "seconds" => &mut seconds,
            _ => {
                return Err(ParseError {
                    offset: here,
                    reason: format!("unknown threshold key `{key}`"),
                })
            }
        };
        if slot.replace((here, v)).is_some() {
            return Err(ParseError {
                offset: here,
                reason: format!("duplicate threshold key `{key}`"),
            });
        }
    }
    let missing = |k: &str| ParseError {
        offset: at,
        reason: format!("threshold missing `{k}`"),
    };
    let (p, ty) = ty.ok_or_else(|| missing("type"))?;
    if ty != "threshold" {
        return Err(ParseError {
            offset: p,
            reason: format!("unsupported threshold type `{ty}`"),
        });
    }
    let (p, track) = track.ok_or_else(|| missing("track"))?;
    if track != "by_dst" {
        return Err(ParseError {
            offset: p,
            reason: format!("unsupported track `{track}`"),
        });
    }
    let (p, c) = count.ok_or_else(|| missing("count"))?;
    let count = parse_u32(p, c, "count")?;
    let (p, s) = seconds.ok_or_else(|| missing("seconds"))?;
    let seconds = parse_u32(p, s, "seconds")?;
    if count == 0 || seconds == 0 {
        return Err(ParseError {
            offset: at,
            reason: "count and seconds must be at least 1".into(),
        });
    }
    Ok(Threshold { count, seconds })
}

/// Parse one rule. Newlines count as whitespace.
pub fn parse_rule(text: &str) -> Result<IdsRule, ParseError> {
    let mut c = Cursor { text, pos: 0 };
    let (at, action) = c.word();
    if action != "alert" {
        return c.err(at, format!("unsupported action `{action}`"));
    }
    let (at, proto) = c.word();
    if proto != "tcp" {
        return c.err(at, format!("unsupported protocol `{proto}`"));
    }
    let (at, src) = c.word();
    let src = parse_addr(at, src)?;
    let (at, tok) = c.word();
    let src_port = if tok == "->" {
        None
    } else {
        let p = parse_port(at, tok)?;
        let (at, arrow) = c.word();
        if arrow != "->" {
            return c.err(at, "expected `->`");
        }
        Some(p)
    };
    let (at, dst) = c.word();
    let dst = parse_addr(at, dst)?;
    let (at, dport) = c.word();
    let dst_port = parse_port(at, dport)?;
    c.expect('(')?;

    let (mut msg, mut flags, mut threshold, mut sid) = (None, None, None, None);
    loop {
        c.skip_ws();
        if c.eat(')') {
            break;
        }
        let (at, name) = c.ident();
        if name.is_empty() {
            return c.err(at, "expected option name or `)`");
        }
        c.skip_ws();
        let dup = |c: &Cursor| c.err::<IdsRule>(at, format!("duplicate option `{name}`"));
        if c.eat(':') {
            match name {
                "msg" => {
                    if msg.is_some() {
                        return dup(&c);
                    }
                    msg = Some(c.quoted()?);
                }
                "flags" => {
                    let (p, v) = c.value()?;
                    if flags.replace(parse_flags(p, v)?).is_some() {
                        return dup(&c);
                    }
                }
                "threshold" => {
                    let (p, v) = c.value()?;
                    if threshold.replace(parse_threshold(p, v)?).is_some() {
                        return dup(&c);
                    }
                }
                "sid" => {
                    let (p, v) = c.value()?;
                    if sid.replace(parse_u32(p, v, "sid")?).is_some() {
                        return dup(&c);
                    }
                }
                _ => return c.err(at, format!("unsupported option `{name}`")),
            }
        } else if let Some(digits) = name.strip_prefix("sid").filter(|d| !d.is_empty()) {
            // Colon-less spelling, e.g. `sid1000001`.
            if sid.replace(parse_u32(at + 3, digits, "sid")?).is_some() {
                return dup(&c);
            }
        } else {
            return c.err(c.pos, format!("expected `:` after `{name}`"));
        }
        c.expect(';')?;
    }
    c.skip_ws();
    if c.pos != text.len() {
        return c.err(c.pos, "trailing text after rule");
    }
    let Some(sid) = sid else {
        return c.err(text.len(), "missing sid");
    };
    Ok(IdsRule {
        src,
        src_port,
        dst,
        dst_port,
        msg: msg.unwrap_or_default(),
        flags: flags.unwrap_or(TcpFlags::empty()),
        threshold,
        sid,
    })
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RulesetError {
    #[error("line {line}: {source}")]
    Parse { line: usize, source: ParseError },
    #[error("line {line}: duplicate sid {sid}")]
    DuplicateSid { line: usize, sid: u32 },
}

/// Parse a ruleset file body: one rule per line, `#` starts a comment line.
pub fn parse_ruleset(text: &str) -> Result<Vec<IdsRule>, RulesetError> {
    let mut rules: Vec<IdsRule> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let rule = parse_rule(t).map_err(|source| RulesetError::Parse { line: i + 1, source })?;
        if rules.iter().any(|r| r.sid == rule.sid) {
            return Err(RulesetError::DuplicateSid {
                line: i + 1,
                sid: rule.sid,
            });
        }
        rules.push(rule);
    }
    Ok(rules)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) const LISTING: &str = "alert tcp any -> 10.0.0.2 \nany (msg: \"MIGRATE\"; flags: P.A.;\nthreshold: type threshold, track\nby_dst, count 5, seconds 120; sid1000001;)";

    #[test]
    fn listing_rule_parses() {
        let r = parse_rule(LISTING).unwrap();
        assert_eq!(r.msg, "MIGRATE");
        assert_eq!(r.flags, TcpFlags::PSH | TcpFlags::ACK);
        assert_eq!(r.threshold, Some(Threshold { count: 5, seconds: 120 }));
        assert_eq!(r.sid, 1_000_001);
        assert_eq!(r.src, AddrSpec::Any);
        assert_eq!(r.src_port, None);
        assert_eq!(r.dst, AddrSpec::Ip(Ipv4Addr::new(10, 0, 0, 2)));
        assert_eq!(r.dst_port, PortSpec::Any);
    }

    #[test]
    fn minimal_rule() {
        let r = parse_rule("alert tcp any -> any any (msg:\"X\"; sid:1;)").unwrap();
        assert_eq!(r.msg, "X");
        assert_eq!(r.threshold, None);
        assert_eq!(r.sid, 1);
        assert!(r.flags.is_empty());
    }

    #[test]
    fn errors_carry_offsets() {
        let e = parse_rule("alert tcp any -> any any (msg:\"X\";)").unwrap_err();
        assert!(e.reason.contains("missing sid"));
        let e = parse_rule("alert udp any -> any any (sid:1;)").unwrap_err();
        assert_eq!(e.offset, 6);
        let e = parse_rule("alert tcp any -> any any (content:\"x\"; sid:1;)").unwrap_err();
        assert_eq!(e.offset, 26);
        let e = parse_rule("alert tcp any -> any any (flags: PX; sid:1;)").unwrap_err();
        assert_eq!(e.offset, 34);
    }

    #[test]
    fn unsupported_constructs_rejected() {
        for bad in [
            "drop tcp any -> any any (sid:1;)",
            "alert tcp any -> any any (threshold: type limit, track by_dst, count 1, seconds 1; sid:1;)",
            "alert tcp any -> any any (threshold: type threshold, track by_src, count 1, seconds 1; sid:1;)",
            "alert tcp any -> any any (threshold: type threshold, track by_dst, count 0, seconds 1; sid:1;)",
            "alert tcp any -> any any (threshold: type threshold, track by_dst, count 2; sid:1;)",
            "alert tcp any -> any any (sid:1; sid:2;)",
            "alert tcp any -> any any (sid:1;) extra",
            "alert tcp any <- any any (sid:1;)",
            "alert tcp 10.0.0.300 -> any any (sid:1;)",
            "alert tcp any -> any any (msg:\"unterminated; sid:1;)",
            "alert tcp any -> any any (sid:1)",
        ] {
            assert!(parse_rule(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn msg_with_semicolon_and_escapes() {
        let r = parse_rule(r#"alert tcp any -> any 80 (msg:"a;b \"q\" \\"; sid:9;)"#).unwrap();
        assert_eq!(r.msg, r#"a;b "q" \"#);
        assert_eq!(parse_rule(&r.render()).unwrap(), r);
    }

    #[test]
    fn corpus_round_trips() {
        let corpus = [
            LISTING,
            "alert tcp any -> any any (msg:\"X\"; sid:1;)",
            "alert tcp 10.0.0.1 4000 -> 10.0.0.2 80 (msg:\"full\"; flags:S; sid:2;)",
            "alert tcp any any -> any 22 (flags: F.R.; threshold: seconds 10, count 3, track by_dst, type threshold; sid:3;)",
            "alert tcp any -> any any (sid:4;)",
        ];
        for text in corpus {
            let r = parse_rule(text).unwrap();
            assert_eq!(parse_rule(&r.render()).unwrap(), r, "{text}");
        }
    }

    #[test]
    fn ruleset_comments_and_duplicates() {
        let text = "# header\n\nalert tcp any -> any any (sid:1;)\n  # indented\nalert tcp any -> any 80 (sid:2;)\n";
        assert_eq!(parse_ruleset(text).unwrap().len(), 2);
        let dup = "alert tcp any -> any any (sid:1;)\nalert tcp any -> any 80 (sid:1;)\n";
        assert_eq!(
            parse_ruleset(dup).unwrap_err(),
            RulesetError::DuplicateSid { line: 2, sid: 1 }
        );
        assert!(matches!(
            parse_ruleset("alert tcp any -> any any ()").unwrap_err(),
            RulesetError::Parse { line: 1, .. }
        ));
    }

    fn addr_spec() -> impl Strategy<Value = AddrSpec> {
        prop_oneof![
            Just(AddrSpec::Any),
            any::<[u8; 4]>().prop_map(|o| AddrSpec::Ip(o.into()))
        ]
    }

    fn port_spec() -> impl Strategy<Value = PortSpec> {
        prop_oneof![Just(PortSpec::Any), any::<u16>().prop_map(PortSpec::Port)]
    }

    fn rule() -> impl Strategy<Value = IdsRule> {
        (
            addr_spec(),
            prop::option::of(port_spec()),
            addr_spec(),
            port_spec(),
            "[ -~]{0,20}",
            0u8..32,
            prop::option::of((1u32..1000, 1u32..10_000)),
            any::<u32>(),
        )
            .prop_map(|(src, src_port, dst, dst_port, msg, f, th, sid)| IdsRule {
                src,
                src_port,
                dst,
                dst_port,
                msg,
                flags: TcpFlags::from_bits_truncate(f),
                threshold: th.map(|(count, seconds)| Threshold { count, seconds }),
                sid,
            })
    }

    proptest! {
        #[test]
        fn render_parse_round_trip(r in rule()) {
            prop_assert_eq!(parse_rule(&r.render()).unwrap(), r);
        }
    }
}
