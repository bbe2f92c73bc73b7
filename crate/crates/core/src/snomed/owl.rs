//! Parser for the OWL functional-syntax profile used by the SNOMED CT OWL
//! expression refset: `SubClassOf`, `EquivalentClasses`,
//! `ObjectIntersectionOf`, `ObjectSomeValuesFrom` and `:<digits>` classes.

use std::fmt::{self, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tsv::{self, Header};

/// SNOMED CT "Role group" attribute.
pub const ROLE_GROUP: u64 = 609_096_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassExpr {
    NamedClass(u64),
    Intersection(Vec<ClassExpr>),
    SomeValuesFrom { property: u64, filler: Box<ClassExpr> },
    /// `ObjectSomeValuesFrom(:609096000 ...)`, with an intersection filler
    /// flattened into the member list.
    RoleGroup(Vec<ClassExpr>),
}

impl ClassExpr {
    /// Every concept id mentioned, including attribute ids.
    pub fn concept_ids(&self, out: &mut Vec<u64>) {
        match self {
            ClassExpr::NamedClass(id) => out.push(*id),
            ClassExpr::Intersection(items) => items.iter().for_each(|e| e.concept_ids(out)),
            ClassExpr::SomeValuesFrom { property, filler } => {
                out.push(*property);
                filler.concept_ids(out);
            }
            ClassExpr::RoleGroup(members) => {
                out.push(ROLE_GROUP);
                members.iter().for_each(|e| e.concept_ids(out));
            }
        }
    }

    fn write_functional(&self, out: &mut String) {
        match self {
            ClassExpr::NamedClass(id) => {
                let _ = write!(out, ":{id}");
            }
            ClassExpr::Intersection(items) => {
                out.push_str("ObjectIntersectionOf(");
                write_list(items, out);
                out.push(')');
            }
            ClassExpr::SomeValuesFrom { property, filler } => {
                let _ = write!(out, "ObjectSomeValuesFrom(:{property} ");
                filler.write_functional(out);
                out.push(')');
            }
            ClassExpr::RoleGroup(members) => {
                let _ = write!(out, "ObjectSomeValuesFrom(:{ROLE_GROUP} ");
                if let [only @ (ClassExpr::NamedClass(_)
                | ClassExpr::SomeValuesFrom { .. }
                | ClassExpr::RoleGroup(_))] = members.as_slice()
                {
                    only.write_functional(out);
                } else {
                    out.push_str("ObjectIntersectionOf(");
                    write_list(members, out);
                    out.push(')');
                }
                out.push(')');
            }
        }
    }

    pub fn to_functional(&self) -> String {
        let mut s = String::new();
        self.write_functional(&mut s);
        s
    }
}

fn write_list(items: &[ClassExpr], out: &mut String) {
    for (i, e) in items.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        e.write_functional(out);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxiomKind {
    SubClassOf,
    EquivalentClasses,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OwlAxiom {
    pub subject_id: u64,
    pub kind: AxiomKind,
    pub expression: ClassExpr,
}

impl OwlAxiom {
    pub fn to_functional(&self) -> String {
        let head = match self.kind {
            AxiomKind::SubClassOf => "SubClassOf",
            AxiomKind::EquivalentClasses => "EquivalentClasses",
        };
        format!("{head}(:{} {})", self.subject_id, self.expression.to_functional())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OwlParseError {
    Unbalanced,
    /// A construct, token, or axiom shape outside the supported profile.
    Unsupported(String),
    Syntax(String),
}

impl fmt::Display for OwlParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OwlParseError::Unbalanced => f.write_str("unbalanced parentheses"),
            OwlParseError::Unsupported(what) => write!(f, "unsupported construct {what}"),
            OwlParseError::Syntax(msg) => write!(f, "syntax error: {msg}"),
        }
    }
}

impl std::error::Error for OwlParseError {}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Token<'a> {
    Open,
    Close,
    Ident(&'a str),
    Class(u64),
}

fn tokenize(s: &str) -> Result<Vec<Token<'_>>, OwlParseError> {
    let bytes = s.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b'(' => {
                out.push(Token::Open);
                i += 1;
            }
            b')' => {
                out.push(Token::Close);
                i += 1;
            }
            c if c.is_ascii_whitespace() => i += 1,
            b':' => {
                let start = i + 1;
                let mut end = start;
                while end < bytes.len() && bytes[end].is_ascii_digit() {
                    end += 1;
                }
                let id = s[start..end]
                    .parse()
                    .map_err(|_| OwlParseError::Unsupported(format!("name at byte {i}")))?;
                out.push(Token::Class(id));
                i = end;
            }
            c if c.is_ascii_alphabetic() => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_alphanumeric() {
                    i += 1;
                }
                out.push(Token::Ident(&s[start..i]));
            }
            _ => {
                let ch = s[i..].chars().next().unwrap_or('?');
                return Err(OwlParseError::Unsupported(format!("token {ch:?}")));
            }
        }
    }
    Ok(out)
}

fn balanced(s: &str) -> bool {
    let mut depth: i64 = 0;
    for c in s.chars() {
        match c {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth < 0 {
                    return false;
                }
            }
            _ => {}
        }
    }
    depth == 0
}

struct Parser<'a> {
    tokens: Vec<Token<'a>>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn next(&mut self) -> Option<Token<'a>> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn peek(&self) -> Option<&Token<'a>> {
        self.tokens.get(self.pos)
    }

    fn expect_open(&mut self) -> Result<(), OwlParseError> {
        match self.next() {
            Some(Token::Open) => Ok(()),
            other => Err(OwlParseError::Syntax(format!("expected '(', found {other:?}"))),
        }
    }

    fn expect_close(&mut self) -> Result<(), OwlParseError> {
        match self.next() {
            Some(Token::Close) => Ok(()),
            other => Err(OwlParseError::Syntax(format!("expected ')', found {other:?}"))),
        }
    }

    fn class(&mut self) -> Result<u64, OwlParseError> {
        match self.next() {
            Some(Token::Class(id)) => Ok(id),
            other => Err(OwlParseError::Syntax(format!("expected class name, found {other:?}"))),
        }
    }

    fn expr(&mut self) -> Result<ClassExpr, OwlParseError> {
        match self.next() {
            Some(Token::Class(id)) => Ok(ClassExpr::NamedClass(id)),
            Some(Token::Ident("ObjectIntersectionOf")) => {
                self.expect_open()?;
                let mut items = Vec::new();
                while !matches!(self.peek(), Some(Token::Close) | None) {
                    items.push(self.expr()?);
                }
                self.expect_close()?;
                if items.is_empty() {
                    return Err(OwlParseError::Syntax("empty ObjectIntersectionOf".into()));
                }
                Ok(ClassExpr::Intersection(items))
            }
            Some(Token::Ident("ObjectSomeValuesFrom")) => {
                self.expect_open()?;
                let property = self.class()?;
                let filler = self.expr()?;
                self.expect_close()?;
                Ok(if property == ROLE_GROUP {
                    match filler {
                        ClassExpr::Intersection(members) => ClassExpr::RoleGroup(members),
                        other => ClassExpr::RoleGroup(vec![other]),
                    }
                } else {
                    ClassExpr::SomeValuesFrom {
                        property,
                        filler: Box::new(filler),
                    }
                })
            }
            Some(Token::Ident(name)) => Err(OwlParseError::Unsupported(name.to_owned())),
            other => Err(OwlParseError::Syntax(format!("unexpected {other:?}"))),
        }
    }

    fn axiom(&mut self) -> Result<OwlAxiom, OwlParseError> {
        let kind = match self.next() {
            Some(Token::Ident("SubClassOf")) => AxiomKind::SubClassOf,
            Some(Token::Ident("EquivalentClasses")) => AxiomKind::EquivalentClasses,
            Some(Token::Ident(name)) => return Err(OwlParseError::Unsupported(name.to_owned())),
            other => return Err(OwlParseError::Syntax(format!("expected axiom, found {other:?}"))),
        };
        self.expect_open()?;
        let subject = self.expr()?;
        let expression = self.expr()?;
        self.expect_close()?;
        if self.pos != self.tokens.len() {
            return Err(OwlParseError::Syntax("trailing tokens after axiom".into()));
        }
        match subject {
            ClassExpr::NamedClass(subject_id) => Ok(OwlAxiom {
                subject_id,
                kind,
                expression,
            }),
            _ => Err(OwlParseError::Unsupported("non-atomic axiom subject".into())),
        }
    }
}

pub fn parse_axiom(s: &str) -> Result<OwlAxiom, OwlParseError> {
    if !balanced(s) {
        return Err(OwlParseError::Unbalanced);
    }
    Parser {
        tokens: tokenize(s)?,
        pos: 0,
    }
    .axiom()
}

pub fn parse_expression(s: &str) -> Result<ClassExpr, OwlParseError> {
    if !balanced(s) {
        return Err(OwlParseError::Unbalanced);
    }
    let mut p = Parser {
        tokens: tokenize(s)?,
        pos: 0,
    };
    let e = p.expr()?;
    if p.pos != p.tokens.len() {
        return Err(OwlParseError::Syntax("trailing tokens".into()));
    }
    Ok(e)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedAxiom {
    pub line: usize,
    pub reason: String,
}

/// Parsed refset rows: every data row lands in exactly one of the two lists.
#[derive(Debug, Clone, Default)]
pub struct OwlRefset {
    pub axioms: Vec<OwlAxiom>,
    pub skipped: Vec<SkippedAxiom>,
}

impl OwlRefset {
    pub fn rows(&self) -> usize {
        self.axioms.len() + self.skipped.len()
    }

    pub fn unbalanced_count(&self) -> usize {
        self.skipped
            .iter()
            .filter(|s| s.reason == OwlParseError::Unbalanced.to_string())
            .count()
    }
}

/// Reads an OWL expression refset. Rows with `active` = 0 (when that column
/// exists) and rows that fail to parse are counted in `skipped`.
pub fn parse_owl_refset(path: &Path) -> Result<OwlRefset> {
    let mut rows = tsv::rows(path)?;
    let mut out = OwlRefset::default();
    let Some(first) = rows.next().transpose()? else {
        return Ok(out);
    };
    let header = Header::new(&first.cells);
    let expr_col = header.require(path, "owlExpression")?;
    let active_col = header.position("active");
    for row in rows {
        let row = row?;
        let skip = |reason: String| {
            log::warn!("{}:{}: axiom skipped: {reason}", path.display(), row.line);
            SkippedAxiom {
                line: row.line,
                reason,
            }
        };
        if let Some(c) = active_col {
            if row.cells.get(c).map(|s| s.trim()) != Some("1") {
                out.skipped.push(skip("inactive".into()));
                continue;
            }
        }
        let Some(expr) = row.cells.get(expr_col) else {
            out.skipped.push(skip("missing owlExpression cell".into()));
            continue;
        };
        match parse_axiom(expr) {
            Ok(axiom) => out.axioms.push(axiom),
            Err(e) => out.skipped.push(skip(e.to_string())),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) const EDENTULOUS: &str = "SubClassOf(:278650002 ObjectIntersectionOf(:404684003 \
        ObjectSomeValuesFrom(:609096000 ObjectIntersectionOf(\
        ObjectSomeValuesFrom(:363714003 :278652005) \
        ObjectSomeValuesFrom(:363713009 :2667000) \
        ObjectSomeValuesFrom(:363698007 :1162715001)))))";

    fn some(property: u64, filler: u64) -> ClassExpr {
        ClassExpr::SomeValuesFrom {
            property,
            filler: Box::new(ClassExpr::NamedClass(filler)),
        }
    }

    #[test]
    fn minimal_axiom() {
        let a = parse_axiom("SubClassOf(:278650002 :123)").unwrap();
        assert_eq!(a.subject_id, 278650002);
        assert_eq!(a.kind, AxiomKind::SubClassOf);
        assert_eq!(a.expression, ClassExpr::NamedClass(123));
    }

    #[test]
    fn edentulous_axiom_structure() {
        let a = parse_axiom(EDENTULOUS).unwrap();
        assert_eq!(
            a.expression,
            ClassExpr::Intersection(vec![
                ClassExpr::NamedClass(404684003),
                ClassExpr::RoleGroup(vec![
                    some(363714003, 278652005),
                    some(363713009, 2667000),
                    some(363698007, 1162715001),
                ]),
            ])
        );
        let mut ids = Vec::new();
        a.expression.concept_ids(&mut ids);
        for id in [ROLE_GROUP, 278652005, 2667000, 1162715001] {
            assert!(ids.contains(&id), "{id}");
        }
    }

    #[test]
    fn equivalent_classes() {
        let a = parse_axiom("EquivalentClasses(:1 ObjectIntersectionOf(:2 ObjectSomeValuesFrom(:3 :4)))")
            .unwrap();
        assert_eq!(a.kind, AxiomKind::EquivalentClasses);
        assert_eq!(a.to_functional(), "EquivalentClasses(:1 ObjectIntersectionOf(:2 ObjectSomeValuesFrom(:3 :4)))");
    }

    #[test]
    fn malformed_and_unsupported() {
        assert_eq!(
            parse_axiom("SubClassOf(:1 ObjectIntersectionOf(:2").unwrap_err(),
            OwlParseError::Unbalanced
        );
        assert!(matches!(
            parse_axiom("SubClassOf(:1 ObjectUnionOf(:2 :3))"),
            Err(OwlParseError::Unsupported(c)) if c == "ObjectUnionOf"
        ));
        assert!(matches!(
            parse_axiom("SubObjectPropertyOf(:1 :2)"),
            Err(OwlParseError::Unsupported(_))
        ));
        assert!(matches!(
            parse_axiom("Prefix(:=<http://snomed.info/id/>)"),
            Err(OwlParseError::Unsupported(_))
        ));
        assert!(matches!(
            parse_axiom("SubClassOf(ObjectIntersectionOf(:1 :2) :3)"),
            Err(OwlParseError::Unsupported(_))
        ));
        assert!(matches!(
            parse_axiom("SubClassOf(:1 ObjectSomeValuesFrom(:2 \"x\"^^xsd:int))"),
            Err(OwlParseError::Unsupported(_))
        ));
        assert!(matches!(parse_axiom("SubClassOf(:1)"), Err(OwlParseError::Syntax(_))));
    }

    #[test]
    fn refset_counts_every_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("owl.tsv");
        let body = format!(
            "id\teffectiveTime\tactive\tmoduleId\trefsetId\treferencedComponentId\towlExpression\n\
             a\t20240101\t1\tm\tr\t278650002\t{EDENTULOUS}\n\
             b\t20240101\t1\tm\tr\t1\tSubClassOf(:1 ObjectIntersectionOf(:2\n\
             c\t20240101\t0\tm\tr\t5\tSubClassOf(:5 :6)\n\
             d\t20240101\t1\tm\tr\t7\tTransitiveObjectProperty(:7)\n"
        );
        std::fs::write(&path, body).unwrap();
        let refset = parse_owl_refset(&path).unwrap();
        assert_eq!(refset.axioms.len(), 1);
        assert_eq!(refset.skipped.len(), 3);
        assert_eq!(refset.rows(), 4);
        assert_eq!(refset.unbalanced_count(), 1);
        assert_eq!(refset.skipped[0].line, 3);
    }

    #[test]
    fn refset_requires_expression_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("owl.tsv");
        std::fs::write(&path, "id\tactive\n1\t1\n").unwrap();
        let err = parse_owl_refset(&path).unwrap_err();
        assert!(err.to_string().contains("owlExpression"));
    }

    fn arb_expr() -> impl Strategy<Value = String> {
        let leaf = (1u64..2_000_000_000).prop_map(|id| format!(":{id}"));
        leaf.prop_recursive(4, 32, 4, |inner| {
            prop_oneof![
                proptest::collection::vec(inner.clone(), 1..4)
                    .prop_map(|v| format!("ObjectIntersectionOf({})", v.join(" "))),
                (prop_oneof![Just(ROLE_GROUP), 1u64..1_000_000_000], inner)
                    .prop_map(|(p, f)| format!("ObjectSomeValuesFrom(:{p} {f})")),
            ]
        })
    }

    proptest! {
        #[test]
        fn serialize_then_reparse_is_identity(subject in 1u64..u64::MAX / 2, body in arb_expr(), equiv in any::<bool>()) {
            let head = if equiv { "EquivalentClasses" } else { "SubClassOf" };
            let parsed = parse_axiom(&format!("{head}(:{subject} {body})")).unwrap();
            let reparsed = parse_axiom(&parsed.to_functional()).unwrap();
            prop_assert_eq!(parsed, reparsed);
        }
    }
}
