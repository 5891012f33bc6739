//! Scenario config text: lexer, parser and include resolution.
//!
//! ```text
//! file    := line*
//! line    := [ section | include | entry ] [ comment ] NEWLINE
//! section := '[' IDENT ']'
//! include := 'include' STRING
//! entry   := IDENT '=' value
//! value   := STRING | INT | FLOAT | BOOL | IDENT | list
//! list    := '[' [ value { ',' value } [ ',' ] ] ']'
//! comment := '#' <anything to end of line>
//! ```
//!
//! `IDENT` is `[A-Za-z_][A-Za-z0-9_-]*`. Integers are `[+-]?[0-9]+`; floats
//! also carry a fraction and/or an exponent (`1.5`, `-2e-3`, `100.0`). `BOOL`
//! is `true` or `false`. Strings are double quoted with the escapes `\"`,
//! `\\`, `\n`, `\t`. Lists are inline (one line) and may nest.
//!
//! Every entry belongs to the most recent section header. An included file is
//! parsed on its own, relative to the including file, and its entries merge
//! into the same document; a key defined twice anywhere is an error.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Location {
    pub source: String,
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.source, self.line, self.column)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Lexical,
    Syntactic,
    Semantic,
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Lexical => "lexical error",
            Self::Syntactic => "syntax error",
            Self::Semantic => "semantic error",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError {
    pub kind: ErrorKind,
    pub location: Location,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}: {}", self.location, self.kind, self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Int(i64),
    Float(f64),
    Bool(bool),
    Str(String),
    Ident(String),
    List(Vec<Value>),
}

impl Value {
    pub fn type_name(&self) -> &'static str {
        match self {
            Self::Int(_) => "integer",
            Self::Float(_) => "float",
            Self::Bool(_) => "boolean",
            Self::Str(_) => "string",
            Self::Ident(_) => "identifier",
            Self::List(_) => "list",
        }
    }
}

impl fmt::Display for Value {
    /// Writes the value in config syntax; floats keep their shortest
    /// round-trip representation.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Int(i) => write!(f, "{i}"),
            Self::Float(x) => write!(f, "{x:?}"),
            Self::Bool(b) => write!(f, "{b}"),
            Self::Str(s) => {
                f.write_str("\"")?;
                for c in s.chars() {
                    match c {
                        '"' => f.write_str("\\\"")?,
                        '\\' => f.write_str("\\\\")?,
                        '\n' => f.write_str("\\n")?,
                        '\t' => f.write_str("\\t")?,
                        c => write!(f, "{c}")?,
                    }
                }
                f.write_str("\"")
            }
            Self::Ident(s) => f.write_str(s),
            Self::List(items) => {
                f.write_str("[")?;
                for (i, v) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{v}")?;
                }
                f.write_str("]")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub value: Value,
    pub key_at: Location,
    pub value_at: Location,
}

/// Parsed config: `section -> key -> entry`, plus where each section first
/// appeared.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Document {
    pub sections: BTreeMap<String, BTreeMap<String, Entry>>,
    pub section_at: BTreeMap<String, Location>,
    /// Directory of the top-level source, for resolving data files.
    pub base_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    LBracket,
    RBracket,
    Comma,
    Equals,
    Int(i64),
    Float(f64),
    Str(String),
    Word(String),
}

struct Lexer<'a> {
    chars: Vec<char>,
    pos: usize,
    line: usize,
    source: &'a str,
}

impl<'a> Lexer<'a> {
    fn at(&self, column: usize) -> Location {
        Location {
            source: self.source.to_string(),
            line: self.line,
            column,
        }
    }

    fn err(&self, column: usize, message: impl Into<String>) -> ConfigError {
        ConfigError {
            kind: ErrorKind::Lexical,
            location: self.at(column),
            message: message.into(),
        }
    }

    fn tokens(mut self) -> Result<Vec<(Tok, Location)>, ConfigError> {
        let mut out = Vec::new();
        while self.pos < self.chars.len() {
            let c = self.chars[self.pos];
            let col = self.pos + 1;
            match c {
                ' ' | '\t' | '\r' => self.pos += 1,
                '#' => break,
                '[' | ']' | ',' | '=' => {
                    self.pos += 1;
                    let t = match c {
                        '[' => Tok::LBracket,
                        ']' => Tok::RBracket,
                        ',' => Tok::Comma,
                        _ => Tok::Equals,
                    };
                    out.push((t, self.at(col)));
                }
                '"' => {
                    let s = self.string(col)?;
                    out.push((Tok::Str(s), self.at(col)));
                }
                c if c.is_ascii_digit() || c == '+' || c == '-' || c == '.' => {
                    let t = self.number(col)?;
                    out.push((t, self.at(col)));
                }
                c if c.is_ascii_alphabetic() || c == '_' => {
                    let start = self.pos;
                    while self.pos < self.chars.len() {
                        let d = self.chars[self.pos];
                        if d.is_ascii_alphanumeric() || d == '_' || d == '-' {
                            self.pos += 1;
                        } else {
                            break;
                        }
                    }
                    let w: String = self.chars[start..self.pos].iter().collect();
                    out.push((Tok::Word(w), self.at(col)));
                }
                c => return Err(self.err(col, format!("unexpected character {c:?}"))),
            }
        }
        Ok(out)
    }

    fn string(&mut self, col: usize) -> Result<String, ConfigError> {
        self.pos += 1;
        let mut s = String::new();
        while self.pos < self.chars.len() {
            let c = self.chars[self.pos];
            self.pos += 1;
            match c {
                '"' => return Ok(s),
                '\\' => {
                    let Some(&e) = self.chars.get(self.pos) else {
                        break;
                    };
                    self.pos += 1;
                    s.push(match e {
                        '"' => '"',
                        '\\' => '\\',
                        'n' => '\n',
                        't' => '\t',
                        e => return Err(self.err(self.pos - 1, format!("unknown escape \\{e}"))),
                    });
                }
                c => s.push(c),
            }
        }
        Err(self.err(col, "unterminated string"))
    }

    fn number(&mut self, col: usize) -> Result<Tok, ConfigError> {
        let start = self.pos;
        while self.pos < self.chars.len() {
            let c = self.chars[self.pos];
            let sign_after_exp = (c == '+' || c == '-')
                && self.pos > start
                && matches!(self.chars[self.pos - 1], 'e' | 'E');
            let leading_sign = (c == '+' || c == '-') && self.pos == start;
            if c.is_ascii_alphanumeric() || c == '.' || c == '_' || sign_after_exp || leading_sign {
                self.pos += 1;
            } else {
                break;
            }
        }
        let text: String = self.chars[start..self.pos].iter().collect();
        let digits = text.trim_start_matches(['+', '-']);
        let well_formed = !digits.is_empty()
            && digits.chars().all(|c| c.is_ascii_digit() || matches!(c, '.' | 'e' | 'E' | '+' | '-'))
            && digits.starts_with(|c: char| c.is_ascii_digit() || c == '.');
        if well_formed && digits.chars().all(|c| c.is_ascii_digit()) {
            return text
                .parse::<i64>()
                .map(Tok::Int)
                .map_err(|_| self.err(col, format!("integer {text} out of range")));
        }
        match text.parse::<f64>() {
            Ok(x) if well_formed && x.is_finite() => Ok(Tok::Float(x)),
            _ => Err(self.err(col, format!("malformed number {text:?}"))),
        }
    }
}

fn syntax(location: Location, message: impl Into<String>) -> ConfigError {
    ConfigError {
        kind: ErrorKind::Syntactic,
        location,
        message: message.into(),
    }
}

pub(crate) fn semantic(location: Location, message: impl Into<String>) -> ConfigError {
    ConfigError {
        kind: ErrorKind::Semantic,
        location,
        message: message.into(),
    }
}

/// Parses a value starting at `toks[*i]`.
fn value(toks: &[(Tok, Location)], i: &mut usize, eol: &Location) -> Result<Value, ConfigError> {
    let Some((tok, at)) = toks.get(*i) else {
        return Err(syntax(eol.clone(), "expected a value"));
    };
    *i += 1;
    Ok(match tok {
        Tok::Int(v) => Value::Int(*v),
        Tok::Float(v) => Value::Float(*v),
        Tok::Str(s) => Value::Str(s.clone()),
        Tok::Word(w) if w == "true" => Value::Bool(true),
        Tok::Word(w) if w == "false" => Value::Bool(false),
        Tok::Word(w) => Value::Ident(w.clone()),
        Tok::LBracket => {
            let mut items = Vec::new();
            loop {
                match toks.get(*i) {
                    Some((Tok::RBracket, _)) => {
                        *i += 1;
                        break;
                    }
                    None => return Err(syntax(at.clone(), "unclosed list")),
                    _ => {}
                }
                items.push(value(toks, i, eol)?);
                match toks.get(*i) {
                    Some((Tok::Comma, _)) => *i += 1,
                    Some((Tok::RBracket, _)) => {}
                    Some((_, loc)) => return Err(syntax(loc.clone(), "expected ',' or ']' in list")),
                    None => return Err(syntax(at.clone(), "unclosed list")),
                }
            }
            Value::List(items)
        }
        _ => return Err(syntax(at.clone(), "expected a value")),
    })
}

fn is_ident(w: &str) -> bool {
    w != "true" && w != "false" && w != "include"
}

/// Reads an included file. Tests substitute an in-memory loader.
pub trait Loader {
    fn load(&self, path: &Path) -> std::io::Result<String>;
}

pub struct FsLoader;

impl Loader for FsLoader {
    fn load(&self, path: &Path) -> std::io::Result<String> {
        std::fs::read_to_string(path)
    }
}

struct Parser<'l> {
    loader: &'l dyn Loader,
    doc: Document,
    stack: Vec<PathBuf>,
}

impl Parser<'_> {
    fn parse_source(&mut self, text: &str, source: &str, dir: Option<&Path>) -> Result<(), ConfigError> {
        let mut section: Option<String> = None;
        for (n, raw) in text.lines().enumerate() {
            let lexer = Lexer {
                chars: raw.chars().collect(),
                pos: 0,
                line: n + 1,
                source,
            };
            let eol = Location {
                source: source.to_string(),
                line: n + 1,
                column: raw.chars().count() + 1,
            };
            let toks = lexer.tokens()?;
            let Some((first, first_at)) = toks.first() else {
                continue;
            };
            match first {
                Tok::LBracket => {
                    let name = match toks.get(1) {
                        Some((Tok::Word(w), _)) if is_ident(w) => w.clone(),
                        Some((_, at)) => return Err(syntax(at.clone(), "expected a section name")),
                        None => return Err(syntax(eol, "expected a section name")),
                    };
                    match toks.get(2) {
                        Some((Tok::RBracket, _)) => {}
                        Some((_, at)) => return Err(syntax(at.clone(), "expected ']'")),
                        None => return Err(syntax(eol, "expected ']'")),
                    }
                    if let Some((_, at)) = toks.get(3) {
                        return Err(syntax(at.clone(), "unexpected text after section header"));
                    }
                    self.doc.sections.entry(name.clone()).or_default();
                    self.doc
                        .section_at
                        .entry(name.clone())
                        .or_insert_with(|| first_at.clone());
                    section = Some(name);
                }
                Tok::Word(w) if w == "include" => {
                    let target = match toks.get(1) {
                        Some((Tok::Str(s), _)) => s.clone(),
                        Some((_, at)) => return Err(syntax(at.clone(), "include expects a quoted path")),
                        None => return Err(syntax(eol, "include expects a quoted path")),
                    };
                    if let Some((_, at)) = toks.get(2) {
                        return Err(syntax(at.clone(), "unexpected text after include"));
                    }
                    self.include(&target, dir, first_at)?;
                }
                Tok::Word(key) if is_ident(key) => {
                    match toks.get(1) {
                        Some((Tok::Equals, _)) => {}
                        Some((_, at)) => return Err(syntax(at.clone(), format!("expected '=' after {key}"))),
                        None => return Err(syntax(eol, format!("expected '=' after {key}"))),
                    }
                    let value_at = toks.get(2).map_or_else(|| eol.clone(), |t| t.1.clone());
                    let mut i = 2;
                    let v = value(&toks, &mut i, &eol)?;
                    if let Some((_, at)) = toks.get(i) {
                        return Err(syntax(at.clone(), "unexpected text after value"));
                    }
                    let Some(sec) = &section else {
                        return Err(syntax(first_at.clone(), format!("key {key} appears before any [section]")));
                    };
                    let table = self.doc.sections.get_mut(sec).expect("section registered");
                    if let Some(prev) = table.get(key) {
                        return Err(semantic(
                            first_at.clone(),
                            format!("duplicate key {sec}.{key}; first defined at {}", prev.key_at),
                        ));
                    }
                    table.insert(
                        key.clone(),
                        Entry {
                            value: v,
                            key_at: first_at.clone(),
                            value_at,
                        },
                    );
                }
                _ => return Err(syntax(first_at.clone(), "expected a [section], an include or key = value")),
            }
        }
        Ok(())
    }

    fn include(&mut self, target: &str, dir: Option<&Path>, at: &Location) -> Result<(), ConfigError> {
        let path = match dir {
            Some(d) => d.join(target),
            None => PathBuf::from(target),
        };
        let canonical = path.canonicalize().unwrap_or_else(|_| path.clone());
        if self.stack.contains(&canonical) {
            return Err(semantic(at.clone(), format!("include cycle through {}", path.display())));
        }
        let text = self
            .loader
            .load(&path)
            .map_err(|e| semantic(at.clone(), format!("cannot include {}: {e}", path.display())))?;
        self.stack.push(canonical);
        let source = path.display().to_string();
        let result = self.parse_source(&text, &source, path.parent());
        self.stack.pop();
        result
    }
}

/// Parses config text. `source` names it in error locations; `dir` anchors
/// relative include and data paths.
pub fn parse_document(
    text: &str,
    source: &str,
    dir: Option<&Path>,
    loader: &dyn Loader,
) -> Result<Document, ConfigError> {
    let mut p = Parser {
        loader,
        doc: Document {
            base_dir: dir.map(Path::to_path_buf),
            ..Document::default()
        },
        stack: Vec::new(),
    };
    p.parse_source(text, source, dir)?;
    Ok(p.doc)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct NoFiles;

    impl Loader for NoFiles {
        fn load(&self, path: &Path) -> std::io::Result<String> {
            Err(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                path.display().to_string(),
            ))
        }
    }

    fn parse(text: &str) -> Result<Document, ConfigError> {
        parse_document(text, "t.cfg", None, &NoFiles)
    }

    #[test]
    fn scalars_and_lists() {
        let d = parse(
            "# header\n[a]\nx = 1\ny = -2.5e-3 # trailing\nz = \"q\\\"s\"\nb = true\nk = cubic-ramp\nl = [1, 2.0, [3]]\n",
        )
        .unwrap();
        let a = &d.sections["a"];
        assert_eq!(a["x"].value, Value::Int(1));
        assert_eq!(a["y"].value, Value::Float(-2.5e-3));
        assert_eq!(a["z"].value, Value::Str("q\"s".into()));
        assert_eq!(a["b"].value, Value::Bool(true));
        assert_eq!(a["k"].value, Value::Ident("cubic-ramp".into()));
        assert_eq!(
            a["l"].value,
            Value::List(vec![
                Value::Int(1),
                Value::Float(2.0),
                Value::List(vec![Value::Int(3)])
            ])
        );
        assert_eq!(a["y"].value_at.column, 5);
    }

    #[test]
    fn display_round_trips_values() {
        for v in [
            Value::Float(0.1 + 0.2),
            Value::Float(1e-10),
            Value::Float(100.0),
            Value::Str("a\\b\n".into()),
            Value::List(vec![Value::Float(-0.0), Value::Int(-7)]),
        ] {
            let d = parse(&format!("[s]\nk = {v}\n")).unwrap();
            assert_eq!(d.sections["s"]["k"].value, v);
        }
    }

    #[test]
    fn error_classes_and_locations() {
        let e = parse("[s]\nk = 1.2.3\n").unwrap_err();
        assert_eq!((e.kind, e.location.line, e.location.column), (ErrorKind::Lexical, 2, 5));
        let e = parse("[s]\nk = \"open\n").unwrap_err();
        assert_eq!(e.kind, ErrorKind::Lexical);
        let e = parse("[s]\nk = @\n").unwrap_err();
        assert_eq!(e.kind, ErrorKind::Lexical);
        let e = parse("[s]\nk 1\n").unwrap_err();
        assert_eq!((e.kind, e.location.column), (ErrorKind::Syntactic, 3));
        let e = parse("[s]\nk = [1, 2\n").unwrap_err();
        assert_eq!(e.kind, ErrorKind::Syntactic);
        let e = parse("k = 1\n").unwrap_err();
        assert_eq!(e.kind, ErrorKind::Syntactic);
        let e = parse("[s]\nk =\n").unwrap_err();
        assert_eq!(e.kind, ErrorKind::Syntactic);
    }

    #[test]
    fn duplicate_key_names_both_locations() {
        let e = parse("[s]\nk = 1\n\n[s]\n  k = 2\n").unwrap_err();
        assert_eq!(e.kind, ErrorKind::Semantic);
        assert_eq!((e.location.line, e.location.column), (5, 3));
        assert!(e.message.contains("t.cfg:2:1"), "{}", e.message);
    }

    #[test]
    fn includes_merge_and_detect_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("base.cfg"), "[solver]\nn_interior = 500\n").unwrap();
        let d = parse_document(
            "include \"base.cfg\"\n[solver]\nl_max = 2\n",
            "main.cfg",
            Some(dir.path()),
            &FsLoader,
        )
        .unwrap();
        assert_eq!(d.sections["solver"].len(), 2);
        let e = parse_document(
            "include \"base.cfg\"\n[solver]\nn_interior = 600\n",
            "main.cfg",
            Some(dir.path()),
            &FsLoader,
        )
        .unwrap_err();
        assert!(e.message.contains("base.cfg:2:1"), "{}", e.message);
        std::fs::write(dir.path().join("loop.cfg"), "include \"loop.cfg\"\n").unwrap();
        let e = parse_document("include \"loop.cfg\"\n", "main.cfg", Some(dir.path()), &FsLoader)
            .unwrap_err();
        assert!(e.message.contains("cycle"));
        let e = parse("include \"missing.cfg\"\n").unwrap_err();
        assert_eq!(e.kind, ErrorKind::Semantic);
    }
}
