//! Text format for topologies (`.camp` files).
//!
//! ```text
//! # comment
//! platform ec2_vm { provider = amazon; os = ubuntu 14.04; image_name = ami-0f9cf087c1f27d9b1; }
//! component mysql_db { kind = database; dbengine = mysql; }
//! mysql_db hostedOn ec2_vm;
//! mysql_db migrateTo os2 with migration=stateful;
//! ```
//!
//! Attribute keys inside blocks are open; block types and relation verbs
//! are closed.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::model::{
    ComponentKind, ComponentNode, MigrationType, ModelError, OsType, PlatformNode, Provider, RelationKind,
    Relationship, Topology,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceSpan {
    pub file: String,
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for SourceSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.file, self.line, self.column)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseErrorKind {
    Syntax,
    DuplicateId,
    UnknownNodeRef,
    UnknownKeyword,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{span}: {message}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub span: SourceSpan,
    pub message: String,
}

/// Name used in spans when parsing text that did not come from a file.
pub const ANONYMOUS_SOURCE: &str = "<input>";

const COMPONENT_FIELDS: [&str; 2] = ["kind", "source"];
const PLATFORM_FIELDS: [&str; 10] = [
    "provider",
    "os",
    "image_name",
    "flavor",
    "network",
    "security_group",
    "key_name",
    "instance_count",
    "address",
    "os_version",
];
const RESERVED: [&str; 3] = ["component", "platform", "with"];

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Word(String),
    Str(String),
    LBrace,
    RBrace,
    Eq,
    Semi,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Word(w) => format!("`{w}`"),
            Tok::Str(s) => format!("string \"{s}\""),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::Eq => "`=`".into(),
            Tok::Semi => "`;`".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

fn is_word_char(c: char) -> bool {
    !c.is_whitespace() && !matches!(c, '{' | '}' | '=' | ';' | '"' | '#')
}

struct Lexer<'a> {
    file: &'a str,
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
    column: usize,
}

impl<'a> Lexer<'a> {
    fn new(file: &'a str, text: &'a str) -> Self {
        Lexer { file, chars: text.chars().peekable(), line: 1, column: 1 }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    fn err(&self, line: usize, column: usize, message: impl Into<String>) -> ParseError {
        ParseError {
            kind: ParseErrorKind::Syntax,
            span: SourceSpan { file: self.file.to_string(), line, column },
            message: message.into(),
        }
    }

    fn tokens(mut self) -> Result<Vec<Token>, ParseError> {
        let mut out = Vec::new();
        while let Some(&c) = self.chars.peek() {
            let (line, column) = (self.line, self.column);
            let tok = match c {
                '#' => {
                    while let Some(&c) = self.chars.peek() {
                        if c == '\n' {
                            break;
                        }
                        self.bump();
                    }
                    continue;
                }
                c if c.is_whitespace() => {
                    self.bump();
                    continue;
                }
                '{' => {
                    self.bump();
                    Tok::LBrace
                }
                '}' => {
                    self.bump();
                    Tok::RBrace
                }
                '=' => {
                    self.bump();
                    Tok::Eq
                }
                ';' => {
                    self.bump();
                    Tok::Semi
                }
                '"' => {
                    self.bump();
                    Tok::Str(self.string(line, column)?)
                }
                _ => {
                    let mut word = String::new();
                    while let Some(&c) = self.chars.peek() {
                        if !is_word_char(c) {
                            break;
                        }
                        word.push(c);
                        self.bump();
                    }
                    Tok::Word(word)
                }
            };
            out.push(Token { tok, line, column });
        }
        Ok(out)
    }

    fn string(&mut self, line: usize, column: usize) -> Result<String, ParseError> {
        let mut s = String::new();
        loop {
            let (l, c) = (self.line, self.column);
            match self.bump() {
                None | Some('\n') => return Err(self.err(line, column, "unterminated string")),
                Some('"') => return Ok(s),
                Some('\\') => match self.bump() {
                    Some('"') => s.push('"'),
                    Some('\\') => s.push('\\'),
                    Some('n') => s.push('\n'),
                    Some('t') => s.push('\t'),
                    Some('r') => s.push('\r'),
                    other => {
                        let shown = other.map(|c| c.to_string()).unwrap_or_default();
                        return Err(self.err(l, c, format!("invalid escape `\\{shown}`")));
                    }
                },
                Some(ch) => s.push(ch),
            }
        }
    }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

fn is_attribute_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase())
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

struct Parser<'a> {
    file: &'a str,
    tokens: Vec<Token>,
    pos: usize,
    eof: (usize, usize),
}

/// A relationship waiting for endpoint resolution; forward references are allowed.
struct PendingRelation {
    rel: Relationship,
    source_at: (usize, usize),
    target_at: (usize, usize),
    verb_at: (usize, usize),
}

struct Entry {
    key: String,
    key_at: (usize, usize),
    values: Vec<(String, (usize, usize))>,
}

impl<'a> Parser<'a> {
    fn span(&self, at: (usize, usize)) -> SourceSpan {
        SourceSpan { file: self.file.to_string(), line: at.0, column: at.1 }
    }

    fn error(&self, kind: ParseErrorKind, at: (usize, usize), message: impl Into<String>) -> ParseError {
        ParseError { kind, span: self.span(at), message: message.into() }
    }

    fn syntax(&self, at: (usize, usize), message: impl Into<String>) -> ParseError {
        self.error(ParseErrorKind::Syntax, at, message)
    }

    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self, expected: &str) -> Result<Token, ParseError> {
        match self.tokens.get(self.pos) {
            Some(t) => {
                self.pos += 1;
                Ok(t.clone())
            }
            None => Err(self.syntax(self.eof, format!("unexpected end of input, expected {expected}"))),
        }
    }

    fn expect(&mut self, want: Tok, expected: &str) -> Result<Token, ParseError> {
        let t = self.next(expected)?;
        if t.tok != want {
            return Err(self.syntax((t.line, t.column), format!("expected {expected}, found {}", t.tok.describe())));
        }
        Ok(t)
    }

    fn ident(&mut self, what: &str) -> Result<(String, (usize, usize)), ParseError> {
        let t = self.next(what)?;
        let at = (t.line, t.column);
        match t.tok {
            Tok::Word(w) if is_identifier(&w) && !RESERVED.contains(&w.as_str()) => Ok((w, at)),
            Tok::Word(w) => Err(self.syntax(at, format!("`{w}` is not a valid {what}"))),
            other => Err(self.syntax(at, format!("expected {what}, found {}", other.describe()))),
        }
    }

    fn parse(mut self) -> Result<Topology, ParseError> {
        let mut topology = Topology::new();
        let mut pending = Vec::new();
        while let Some(first) = self.peek().cloned() {
            let at = (first.line, first.column);
            let word = match &first.tok {
                Tok::Word(w) => w.clone(),
                other => return Err(self.syntax(at, format!("expected a declaration, found {}", other.describe()))),
            };
            match word.as_str() {
                "component" => {
                    self.pos += 1;
                    let (id, id_at) = self.ident("component id")?;
                    let entries = self.block()?;
                    let node = self.component(id.clone(), id_at, entries)?;
                    topology
                        .add_component(node)
                        .map_err(|_| self.error(ParseErrorKind::DuplicateId, id_at, format!("duplicate id `{id}`")))?;
                }
                "platform" => {
                    self.pos += 1;
                    let (id, id_at) = self.ident("platform id")?;
                    let entries = self.block()?;
                    let node = self.platform(id.clone(), id_at, entries)?;
                    topology
                        .add_platform(node)
                        .map_err(|_| self.error(ParseErrorKind::DuplicateId, id_at, format!("duplicate id `{id}`")))?;
                }
                _ => {
                    // `<word> <id> {` is a block with an unknown type.
                    if matches!(self.tokens.get(self.pos + 2), Some(Token { tok: Tok::LBrace, .. })) {
                        return Err(self.error(
                            ParseErrorKind::UnknownKeyword,
                            at,
                            format!("unknown block type `{word}`"),
                        ));
                    }
                    pending.push(self.relation()?);
                }
            }
        }

        for p in pending {
            for (end, end_at) in [(&p.rel.source, p.source_at), (&p.rel.target, p.target_at)] {
                if !topology.contains(end) {
                    return Err(self.error(
                        ParseErrorKind::UnknownNodeRef,
                        end_at,
                        format!("`{end}` is not a declared component or platform"),
                    ));
                }
            }
            let label = p.rel.label();
            topology.add_relationship(p.rel).map_err(|e| match e {
                ModelError::DuplicateRelationship(_) => {
                    self.syntax(p.verb_at, format!("duplicate relationship `{label}`"))
                }
                other => self.syntax(p.verb_at, other.to_string()),
            })?;
        }
        Ok(topology)
    }

    fn block(&mut self) -> Result<Vec<Entry>, ParseError> {
        self.expect(Tok::LBrace, "`{`")?;
        let mut entries: Vec<Entry> = Vec::new();
        loop {
            let t = self.next("an attribute or `}`")?;
            let key_at = (t.line, t.column);
            let key = match t.tok {
                Tok::RBrace => break,
                Tok::Word(w) if is_attribute_name(&w) => w,
                Tok::Word(w) => {
                    return Err(self.syntax(key_at, format!("`{w}` is not a valid attribute name")));
                }
                other => {
                    return Err(self.syntax(key_at, format!("expected an attribute name, found {}", other.describe())));
                }
            };
            if entries.iter().any(|e| e.key == key) {
                return Err(self.syntax(key_at, format!("duplicate attribute `{key}`")));
            }
            self.expect(Tok::Eq, "`=`")?;
            let mut values = Vec::new();
            loop {
                let t = self.next("a value or `;`")?;
                let at = (t.line, t.column);
                match t.tok {
                    Tok::Semi => break,
                    Tok::Word(w) | Tok::Str(w) => {
                        if w.is_empty() {
                            return Err(self.syntax(at, format!("attribute `{key}` has an empty value")));
                        }
                        values.push((w, at));
                    }
                    other => return Err(self.syntax(at, format!("expected a value, found {}", other.describe()))),
                }
            }
            if values.is_empty() {
                return Err(self.syntax(key_at, format!("attribute `{key}` has no value")));
            }
            entries.push(Entry { key, key_at, values });
        }
        // Optional trailing `;` after a block.
        if matches!(self.peek(), Some(Token { tok: Tok::Semi, .. })) {
            self.pos += 1;
        }
        Ok(entries)
    }

    fn single(&self, entry: &Entry) -> Result<String, ParseError> {
        match entry.values.as_slice() {
            [(v, _)] => Ok(v.clone()),
            [_, (_, at), ..] => Err(self.syntax(*at, format!("attribute `{}` takes a single value", entry.key))),
            [] => unreachable!("block() rejects empty values"),
        }
    }

    fn component(&self, id: String, id_at: (usize, usize), entries: Vec<Entry>) -> Result<ComponentNode, ParseError> {
        let mut kind = None;
        let mut node = ComponentNode::new(id.clone(), ComponentKind::Web);
        for e in &entries {
            let value = self.single(e)?;
            match e.key.as_str() {
                "kind" => {
                    if !is_attribute_name(&value) {
                        return Err(self.syntax(e.values[0].1, format!("`{value}` is not a valid component kind")));
                    }
                    kind = Some(value.parse::<ComponentKind>().unwrap_or_else(|never| match never {}));
                }
                "source" => node.source_ref = Some(value),
                key => {
                    node.attributes.insert(key.to_string(), value);
                }
            }
        }
        node.kind = kind.ok_or_else(|| self.syntax(id_at, format!("component `{id}` has no `kind`")))?;
        Ok(node)
    }

    fn platform(&self, id: String, id_at: (usize, usize), entries: Vec<Entry>) -> Result<PlatformNode, ParseError> {
        let mut provider = None;
        let mut os: Option<(OsType, String)> = None;
        let mut node = PlatformNode::new(id.clone(), Provider::OpenStack, OsType::Ubuntu, "");
        for e in &entries {
            if e.key == "os" {
                let [(ty, ty_at), (version, _)] = e.values.as_slice() else {
                    return Err(self.syntax(e.key_at, "`os` takes a type and a version, e.g. `os = ubuntu 16.04;`"));
                };
                let ty = ty.parse::<OsType>().map_err(|err| self.syntax(*ty_at, err.to_string()))?;
                os = Some((ty, version.clone()));
                continue;
            }
            let value = self.single(e)?;
            let value_at = e.values[0].1;
            match e.key.as_str() {
                "provider" => {
                    provider = Some(value.parse::<Provider>().map_err(|err| self.syntax(value_at, err.to_string()))?)
                }
                "image_name" => node.image_name = Some(value),
                "flavor" => node.flavor = Some(value),
                "network" => node.network = Some(value),
                "security_group" => node.security_group = Some(value),
                "key_name" => node.key_name = Some(value),
                "address" => node.address = Some(value),
                "instance_count" => {
                    node.instance_count = match value.parse::<u32>() {
                        Ok(n) if n >= 1 => n,
                        _ => return Err(self.syntax(value_at, "`instance_count` must be a positive integer")),
                    }
                }
                "os_version" => return Err(self.syntax(e.key_at, "use `os = <type> <version>;`")),
                key => {
                    node.attributes.insert(key.to_string(), value);
                }
            }
        }
        node.provider = provider.ok_or_else(|| self.syntax(id_at, format!("platform `{id}` has no `provider`")))?;
        let (os_type, os_version) = os.ok_or_else(|| self.syntax(id_at, format!("platform `{id}` has no `os`")))?;
        node.os_type = os_type;
        node.os_version = os_version;
        match (node.provider, node.address.is_some()) {
            (Provider::PreDeployed, false) => {
                return Err(self.syntax(id_at, format!("pre-deployed platform `{id}` needs an `address`")))
            }
            (p, true) if p != Provider::PreDeployed => {
                return Err(self.syntax(id_at, format!("`address` is only valid for pre-deployed platforms ({id} is {p})")))
            }
            _ => {}
        }
        Ok(node)
    }

    fn relation(&mut self) -> Result<PendingRelation, ParseError> {
        let (source, source_at) = self.ident("node id")?;
        let t = self.next("a relation verb")?;
        let verb_at = (t.line, t.column);
        let kind = match &t.tok {
            Tok::Word(v) => RelationKind::from_verb(v).ok_or_else(|| {
                self.error(ParseErrorKind::UnknownKeyword, verb_at, format!("unknown relation `{v}`"))
            })?,
            other => return Err(self.syntax(verb_at, format!("expected a relation verb, found {}", other.describe()))),
        };
        let (target, target_at) = self.ident("node id")?;
        let mut rel = Relationship::new(kind, &source, &target);

        let t = self.next("`;` or `with`")?;
        let mut at = (t.line, t.column);
        match t.tok {
            Tok::Semi => {}
            Tok::Word(w) if w == "with" => {
                let mut seen = BTreeSet::new();
                loop {
                    let t = self.next("`key=value` or `;`")?;
                    at = (t.line, t.column);
                    let key = match t.tok {
                        Tok::Semi if !seen.is_empty() => break,
                        Tok::Word(k) => k,
                        other => return Err(self.syntax(at, format!("expected `key=value`, found {}", other.describe()))),
                    };
                    if key != "migration" || kind != RelationKind::MigrateTo {
                        return Err(self.error(
                            ParseErrorKind::UnknownKeyword,
                            at,
                            format!("`{key}` is not a valid option for `{}`", kind.verb()),
                        ));
                    }
                    if !seen.insert(key.clone()) {
                        return Err(self.syntax(at, format!("duplicate option `{key}`")));
                    }
                    self.expect(Tok::Eq, "`=`")?;
                    let v = self.next("a migration type")?;
                    let v_at = (v.line, v.column);
                    let value = match v.tok {
                        Tok::Word(w) | Tok::Str(w) => w,
                        other => return Err(self.syntax(v_at, format!("expected a value, found {}", other.describe()))),
                    };
                    rel.migration_type = Some(value.parse::<MigrationType>().map_err(|e| self.syntax(v_at, e.to_string()))?);
                }
            }
            other => return Err(self.syntax(at, format!("expected `;`, found {}", other.describe()))),
        }
        if kind == RelationKind::MigrateTo && rel.migration_type.is_none() {
            return Err(self.syntax(verb_at, "`migrateTo` needs `with migration=stateful|stateless`"));
        }
        Ok(PendingRelation { rel, source_at, target_at, verb_at })
    }
}

/// Parses topology text. Spans name [`ANONYMOUS_SOURCE`] as the file.
pub fn parse(text: &str) -> Result<Topology, ParseError> {
    parse_named(ANONYMOUS_SOURCE, text)
}

pub fn parse_named(file: &str, text: &str) -> Result<Topology, ParseError> {
    let tokens = Lexer::new(file, text).tokens()?;
    let eof = tokens.last().map(|t| (t.line, t.column)).unwrap_or((1, 1));
    Parser { file, tokens, pos: 0, eof }.parse()
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Parse(#[from] ParseError),
}

pub fn parse_file(path: &Path) -> Result<Topology, LoadError> {
    let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io { path: path.display().to_string(), source })?;
    Ok(parse_named(&path.display().to_string(), &text)?)
}

fn needs_quotes(value: &str) -> bool {
    value.is_empty() || value.chars().any(|c| !is_word_char(c) || c == '\\' || c.is_control())
}

fn quote(value: &str) -> String {
    if !needs_quotes(value) {
        return value.to_string();
    }
    let mut out = String::with_capacity(value.len() + 2);
    out.push('"');
    for c in value.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Renders a topology as canonical text: platforms then components, each in
/// id order, then relationships in declaration order. Empty topologies
/// render as an empty document.
pub fn serialize(topology: &Topology) -> String {
    let mut sections: Vec<String> = Vec::new();
    for p in topology.platforms() {
        let mut s = format!("platform {} {{\n", p.id);
        s += &format!("    provider = {};\n", p.provider);
        s += &format!("    os = {} {};\n", p.os_type, quote(&p.os_version));
        let fields = [
            ("image_name", &p.image_name),
            ("flavor", &p.flavor),
            ("network", &p.network),
            ("security_group", &p.security_group),
            ("key_name", &p.key_name),
            ("address", &p.address),
        ];
        for (key, value) in fields {
            if let Some(v) = value {
                s += &format!("    {key} = {};\n", quote(v));
            }
        }
        if p.instance_count != 1 {
            s += &format!("    instance_count = {};\n", p.instance_count);
        }
        for (k, v) in &p.attributes {
            s += &format!("    {k} = {};\n", quote(v));
        }
        s += "}\n";
        sections.push(s);
    }
    for c in topology.components() {
        let mut s = format!("component {} {{\n", c.id);
        s += &format!("    kind = {};\n", c.kind);
        if let Some(src) = &c.source_ref {
            s += &format!("    source = {};\n", quote(src));
        }
        for (k, v) in &c.attributes {
            s += &format!("    {k} = {};\n", quote(v));
        }
        s += "}\n";
        sections.push(s);
    }
    if !topology.relationships().is_empty() {
        let mut s = String::new();
        for r in topology.relationships() {
            s += &format!("{} {} {}", r.source, r.kind.verb(), r.target);
            if let Some(m) = r.migration_type {
                s += &format!(" with migration={}", m.as_str());
            }
            s += ";\n";
        }
        sections.push(s);
    }
    sections.join("\n")
}

/// Keys a generator must not use as free-form attributes because the parser
/// maps them onto typed fields.
pub fn reserved_keys() -> (&'static [&'static str], &'static [&'static str]) {
    (&COMPONENT_FIELDS, &PLATFORM_FIELDS)
}
