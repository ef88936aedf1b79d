//! Operator families with their invariant subspaces, stored as data, and a
//! batch runner that checks random rational members of each family.
//!
//! The file format is TOML; see `docs/corpus-format.md` for the schema.
//! Entries whose printed form is known to fail carry
//! `expect = "not-invariant"`; negative controls are derived from an entry
//! by adding a term to one operator part.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use num_traits::{Signed, Zero};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;
use thiserror::Error;
use toml::Spanned;

use crate::crdop::{CRDOperator, UPoly};
use crate::expr::{parse, Expr};
use crate::funcalg::{Axis, Bindings, Q};
use crate::invariance::{check_invariance_mode, numeric_invariance_probe, psi_digest, Mode};
use crate::report::Report;
use crate::subspace::{build_type1, build_type2, LinearODE, SubspaceBasis};

/// Residual tolerance for entries checked in floating point.
pub const CORPUS_NUMERIC_TOL: f64 = 1e-9;
/// Draws rejected before an entry is reported as unsatisfiable.
pub const MAX_REJECTIONS: usize = 1000;

const PART_NAMES: [&str; 5] = ["A1", "A2", "B1", "B2", "C"];

/// Corpus files shipped with the crate, by short name.
pub const SHIPPED: [(&str, &str); 2] = [
    ("tables_2_15", include_str!("../data/tables_2_15.toml")),
    ("tables_17_27", include_str!("../data/tables_17_27.toml")),
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CorpusError {
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error("{source_name}: {msg}")]
    Syntax { source_name: String, msg: String },
    #[error("{source_name}:{line}: entry `{id}`, field `{field}`: {msg}")]
    Field { source_name: String, line: usize, id: String, field: String, msg: String },
    #[error("trials must be at least 1")]
    Trials,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EquationClass {
    /// Convection, diffusion and reaction.
    Full,
    /// No reaction term.
    ConvectionDiffusion,
    /// No convection terms.
    ReactionDiffusion,
    /// Diffusion only.
    Diffusion,
}

impl EquationClass {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "full" => EquationClass::Full,
            "convection-diffusion" => EquationClass::ConvectionDiffusion,
            "reaction-diffusion" => EquationClass::ReactionDiffusion,
            "diffusion" => EquationClass::Diffusion,
            _ => return None,
        })
    }

    /// Operator parts that must vanish for this class.
    fn zero_parts(self) -> &'static [usize] {
        match self {
            EquationClass::Full => &[],
            EquationClass::ConvectionDiffusion => &[4],
            EquationClass::ReactionDiffusion => &[2, 3],
            EquationClass::Diffusion => &[2, 3, 4],
        }
    }
}

impl fmt::Display for EquationClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EquationClass::Full => "full",
            EquationClass::ConvectionDiffusion => "convection-diffusion",
            EquationClass::ReactionDiffusion => "reaction-diffusion",
            EquationClass::Diffusion => "diffusion",
        })
    }
}

/// Sampling range of a free symbol.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Range {
    /// ±p/q with p, q in 1..=9.
    Any,
    Positive,
    Negative,
}

impl Range {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "any" | "nonzero" => Range::Any,
            "positive" => Range::Positive,
            "negative" => Range::Negative,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Expect {
    Invariant,
    NotInvariant,
}

impl fmt::Display for Expect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Expect::Invariant => "invariant",
            Expect::NotInvariant => "not-invariant",
        })
    }
}

/// How residuals are tested.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorpusMode {
    /// Exact zero; entries that need irrational numbers still go numeric.
    Rational,
    /// Everything in floating point with [`CORPUS_NUMERIC_TOL`].
    Numeric,
}

impl CorpusMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rational" | "exact" => Some(CorpusMode::Rational),
            "numeric" => Some(CorpusMode::Numeric),
            _ => None,
        }
    }
}

impl fmt::Display for CorpusMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorpusMode::Rational => "rational",
            CorpusMode::Numeric => "numeric",
        })
    }
}

/// Source text together with its parse.
#[derive(Clone, Debug, PartialEq)]
pub struct Formula {
    pub src: String,
    pub expr: Expr,
}

impl Formula {
    pub fn new(src: &str) -> Result<Self, String> {
        let expr = parse(src).map_err(|e| e.to_string())?;
        Ok(Formula { src: src.to_string(), expr })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Relation {
    /// `name = expr`, evaluated after the free symbols are drawn.
    Define { name: String, value: Formula },
    /// `lhs = rhs` that every draw must satisfy.
    Equal { lhs: Formula, rhs: Formula },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Requirement {
    Positive(Formula),
    NonZero(Formula),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpaceType {
    /// Products of the two kernels.
    I,
    /// Sum of the two kernels.
    II,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SubspaceRecipe {
    Ode { kind: SpaceType, x1: Vec<Formula>, x2: Vec<Formula> },
    Members(Vec<Formula>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusEntry {
    pub id: String,
    pub class: EquationClass,
    /// A1, A2, B1, B2, C as polynomials in `u`.
    pub parts: [Formula; 5],
    pub subspace: SubspaceRecipe,
    pub free: BTreeMap<String, Range>,
    pub constraints: Vec<Relation>,
    pub require: Vec<Requirement>,
    pub mode: CorpusMode,
    pub expect: Expect,
    pub note: Option<String>,
    /// Set for negative controls: the entry they were derived from.
    pub control_of: Option<String>,
}

/// Result of [`load_corpus`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LoadedCorpus {
    pub entries: Vec<CorpusEntry>,
    pub warnings: Vec<String>,
}

// ---------------------------------------------------------------- raw schema

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    #[serde(default)]
    free: BTreeMap<String, String>,
    #[serde(default)]
    entry: Vec<Spanned<RawEntry>>,
    #[serde(default)]
    control: Vec<Spanned<RawControl>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    id: String,
    class: String,
    #[serde(rename = "A1")]
    a1: Option<Spanned<String>>,
    #[serde(rename = "A2")]
    a2: Option<Spanned<String>>,
    #[serde(rename = "B1")]
    b1: Option<Spanned<String>>,
    #[serde(rename = "B2")]
    b2: Option<Spanned<String>>,
    #[serde(rename = "C")]
    c: Option<Spanned<String>>,
    subspace: RawSubspace,
    #[serde(default)]
    free: BTreeMap<String, String>,
    #[serde(default)]
    constraints: Vec<String>,
    #[serde(default)]
    require: Vec<String>,
    mode: Option<String>,
    expect: Option<String>,
    note: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSubspace {
    #[serde(rename = "type")]
    kind: Option<String>,
    x1: Option<Vec<String>>,
    x2: Option<Vec<String>>,
    members: Option<Vec<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawControl {
    id: String,
    base: String,
    part: String,
    add: String,
    note: Option<String>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

struct Ctx<'a> {
    name: &'a str,
    text: &'a str,
}

impl Ctx<'_> {
    fn err(&self, offset: usize, id: &str, field: &str, msg: impl Into<String>) -> CorpusError {
        CorpusError::Field {
            source_name: self.name.to_string(),
            line: line_of(self.text, offset),
            id: id.to_string(),
            field: field.to_string(),
            msg: msg.into(),
        }
    }
}

fn parse_relation(src: &str) -> Result<Relation, String> {
    let (l, r) = src.split_once('=').ok_or_else(|| format!("`{src}` is not of the form lhs = rhs"))?;
    let lhs = Formula::new(l.trim())?;
    let rhs = Formula::new(r.trim())?;
    Ok(match &lhs.expr {
        Expr::Sym(name) => Relation::Define { name: name.clone(), value: rhs },
        _ => Relation::Equal { lhs, rhs },
    })
}

fn parse_requirement(src: &str) -> Result<Requirement, String> {
    if let Some((l, r)) = src.split_once("!=") {
        if r.trim() != "0" {
            return Err(format!("`{src}`: only `expr != 0` is supported"));
        }
        return Ok(Requirement::NonZero(Formula::new(l.trim())?));
    }
    if let Some((l, r)) = src.split_once('>') {
        if r.trim() != "0" {
            return Err(format!("`{src}`: only `expr > 0` is supported"));
        }
        return Ok(Requirement::Positive(Formula::new(l.trim())?));
    }
    Err(format!("`{src}` is neither `expr > 0` nor `expr != 0`"))
}

fn build_entry(
    ctx: &Ctx,
    raw: &Spanned<RawEntry>,
    file_free: &BTreeMap<String, Range>,
) -> Result<CorpusEntry, CorpusError> {
    let off = raw.span().start;
    let r = raw.get_ref();
    let id = r.id.trim().to_string();
    if id.is_empty() {
        return Err(ctx.err(off, "", "id", "empty id"));
    }
    let err = |o: usize, field: &str, msg: String| ctx.err(o, &id, field, msg);

    let class =
        EquationClass::parse(&r.class).ok_or_else(|| err(off, "class", format!("unknown class `{}`", r.class)))?;
    let raw_parts = [&r.a1, &r.a2, &r.b1, &r.b2, &r.c];
    let mut parts = Vec::with_capacity(5);
    for (k, p) in raw_parts.iter().enumerate() {
        let (src, o) = match p {
            Some(s) => (s.get_ref().as_str(), s.span().start),
            None => ("0", off),
        };
        let f = Formula::new(src).map_err(|m| err(o, PART_NAMES[k], m))?;
        if class.zero_parts().contains(&k) && f.expr != Expr::Num(Q::zero()) {
            return Err(err(o, PART_NAMES[k], format!("must be 0 for class {class}")));
        }
        parts.push(f);
    }
    let parts: [Formula; 5] = parts.try_into().expect("five parts");

    let subspace = match (&r.subspace.members, &r.subspace.x1, &r.subspace.x2) {
        (Some(m), None, None) => {
            if r.subspace.kind.is_some() {
                return Err(err(off, "subspace.type", "`type` applies to ODE pairs only".into()));
            }
            if m.is_empty() {
                return Err(err(off, "subspace.members", "empty member list".into()));
            }
            let ms = m.iter().map(|s| Formula::new(s)).collect::<Result<Vec<_>, _>>();
            SubspaceRecipe::Members(ms.map_err(|e| err(off, "subspace.members", e))?)
        }
        (None, Some(x1), Some(x2)) => {
            let kind = match r.subspace.kind.as_deref() {
                Some("I") => SpaceType::I,
                Some("II") => SpaceType::II,
                other => return Err(err(off, "subspace.type", format!("expected \"I\" or \"II\", got {other:?}"))),
            };
            let conv = |v: &Vec<String>, f: &str| -> Result<Vec<Formula>, CorpusError> {
                if v.is_empty() || v.len() > 4 {
                    return Err(err(off, f, format!("ODE order must be 1..=4, got {}", v.len())));
                }
                v.iter().map(|s| Formula::new(s).map_err(|e| err(off, f, e))).collect()
            };
            SubspaceRecipe::Ode { kind, x1: conv(x1, "subspace.x1")?, x2: conv(x2, "subspace.x2")? }
        }
        _ => return Err(err(off, "subspace", "give either `members` or both `x1` and `x2`".into())),
    };

    let mut local_free = BTreeMap::new();
    for (k, v) in &r.free {
        let range = Range::parse(v).ok_or_else(|| err(off, "free", format!("unknown range `{v}` for `{k}`")))?;
        local_free.insert(k.clone(), range);
    }
    let constraints = r
        .constraints
        .iter()
        .map(|s| parse_relation(s))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| err(off, "constraints", e))?;
    let require = r
        .require
        .iter()
        .map(|s| parse_requirement(s))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| err(off, "require", e))?;
    let mode = match r.mode.as_deref() {
        None => CorpusMode::Rational,
        Some(m) => CorpusMode::parse(m).ok_or_else(|| err(off, "mode", format!("unknown mode `{m}`")))?,
    };
    let expect = match r.expect.as_deref() {
        None | Some("invariant") => Expect::Invariant,
        Some("not-invariant") => Expect::NotInvariant,
        Some(o) => return Err(err(off, "expect", format!("unknown expectation `{o}`"))),
    };

    // symbol bookkeeping: every symbol is drawn or defined
    let defined: BTreeSet<String> = constraints
        .iter()
        .filter_map(|c| match c {
            Relation::Define { name, .. } => Some(name.clone()),
            _ => None,
        })
        .collect();
    let mut used: Vec<(String, &'static str)> = Vec::new();
    for (k, p) in parts.iter().enumerate() {
        used.extend(p.expr.symbols().into_iter().filter(|s| s != "u").map(|s| (s, PART_NAMES[k])));
    }
    match &subspace {
        SubspaceRecipe::Ode { x1, x2, .. } => {
            for f in x1.iter().chain(x2) {
                used.extend(f.expr.symbols().into_iter().map(|s| (s, "subspace")));
            }
        }
        SubspaceRecipe::Members(ms) => {
            for f in ms {
                used.extend(f.expr.symbols().into_iter().filter(|s| s != "x1" && s != "x2").map(|s| (s, "subspace")));
            }
        }
    }
    for c in &constraints {
        match c {
            Relation::Define { value, .. } => used.extend(value.expr.symbols().into_iter().map(|s| (s, "constraints"))),
            Relation::Equal { lhs, rhs } => {
                used.extend(lhs.expr.symbols().into_iter().map(|s| (s, "constraints")));
                used.extend(rhs.expr.symbols().into_iter().map(|s| (s, "constraints")));
            }
        }
    }
    for q in &require {
        let (Requirement::Positive(f) | Requirement::NonZero(f)) = q;
        used.extend(f.expr.symbols().into_iter().map(|s| (s, "require")));
    }
    let mut free = BTreeMap::new();
    for (s, field) in used {
        if defined.contains(&s) {
            continue;
        }
        match local_free.get(&s).or_else(|| file_free.get(&s)) {
            Some(r) => {
                free.insert(s, *r);
            }
            None => {
                let o = match field {
                    "A1" | "A2" | "B1" | "B2" | "C" => raw_parts[PART_NAMES.iter().position(|p| *p == field).unwrap()]
                        .as_ref()
                        .map_or(off, |s| s.span().start),
                    _ => off,
                };
                return Err(err(
                    o,
                    field,
                    format!("unknown symbol `{s}` (declare it under `free` or define it in `constraints`)"),
                ));
            }
        }
    }
    for name in &defined {
        if free.contains_key(name) || local_free.contains_key(name) {
            return Err(err(off, "constraints", format!("`{name}` is both free and defined")));
        }
    }

    Ok(CorpusEntry {
        id,
        class,
        parts,
        subspace,
        free,
        constraints,
        require,
        mode,
        expect,
        note: r.note.clone(),
        control_of: None,
    })
}

/// Parse corpus text; `name` is used in diagnostics.
pub fn parse_corpus(text: &str, name: &str) -> Result<LoadedCorpus, CorpusError> {
    let ctx = Ctx { name, text };
    if text.trim().is_empty() {
        return Ok(LoadedCorpus { entries: vec![], warnings: vec![format!("{name}: empty corpus file")] });
    }
    let raw: RawFile = toml::from_str(text).map_err(|e| CorpusError::Syntax {
        source_name: name.to_string(),
        msg: match e.span() {
            Some(s) => format!("line {}: {}", line_of(text, s.start), e.message()),
            None => e.message().to_string(),
        },
    })?;
    let mut file_free = BTreeMap::new();
    for (k, v) in &raw.free {
        let r = Range::parse(v).ok_or_else(|| ctx.err(0, "", "free", format!("unknown range `{v}` for `{k}`")))?;
        file_free.insert(k.clone(), r);
    }
    let mut entries = Vec::with_capacity(raw.entry.len() + raw.control.len());
    let mut seen = BTreeSet::new();
    for e in &raw.entry {
        let entry = build_entry(&ctx, e, &file_free)?;
        if !seen.insert(entry.id.clone()) {
            return Err(ctx.err(e.span().start, &entry.id, "id", "duplicate id"));
        }
        entries.push(entry);
    }
    for c in &raw.control {
        let off = c.span().start;
        let rc = c.get_ref();
        let base = entries
            .iter()
            .find(|e| e.id == rc.base && e.control_of.is_none())
            .ok_or_else(|| ctx.err(off, &rc.id, "base", format!("no entry `{}`", rc.base)))?;
        let k = PART_NAMES
            .iter()
            .position(|p| *p == rc.part)
            .ok_or_else(|| ctx.err(off, &rc.id, "part", format!("unknown part `{}`", rc.part)))?;
        let add = Formula::new(&rc.add).map_err(|m| ctx.err(off, &rc.id, "add", m))?;
        if add.expr.symbols().iter().any(|s| s != "u") {
            return Err(ctx.err(off, &rc.id, "add", "the added term may only use `u`"));
        }
        let mut entry = base.clone();
        let src = format!("({}) + ({})", base.parts[k].src, rc.add);
        entry.parts[k] = Formula::new(&src).map_err(|m| ctx.err(off, &rc.id, "add", m))?;
        entry.id = rc.id.clone();
        entry.expect = Expect::NotInvariant;
        entry.note = rc.note.clone();
        entry.control_of = Some(rc.base.clone());
        if !seen.insert(entry.id.clone()) {
            return Err(ctx.err(off, &entry.id, "id", "duplicate id"));
        }
        entries.push(entry);
    }
    let mut warnings = vec![];
    if entries.is_empty() {
        warnings.push(format!("{name}: no entries"));
    }
    Ok(LoadedCorpus { entries, warnings })
}

#[derive(Deserialize)]
struct RawSingle {
    entry: Spanned<RawEntry>,
}

/// The `[entry]` table of a larger document, with `declared` symbols taken
/// as free. Other top-level tables are ignored.
pub fn parse_entry_table(text: &str, name: &str, declared: &BTreeSet<String>) -> Result<CorpusEntry, CorpusError> {
    let raw: RawSingle = toml::from_str(text).map_err(|e| CorpusError::Syntax {
        source_name: name.to_string(),
        msg: match e.span() {
            Some(s) => format!("line {}: {}", line_of(text, s.start), e.message()),
            None => e.message().to_string(),
        },
    })?;
    let free = declared.iter().map(|s| (s.clone(), Range::Any)).collect();
    build_entry(&Ctx { name, text }, &raw.entry, &free)
}

/// Load a corpus file. A path that does not exist but names a shipped corpus
/// (`tables_2_15`, `tables_17_27`) loads the built-in copy.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<LoadedCorpus, CorpusError> {
    let path = path.as_ref();
    let name = path.display().to_string();
    match std::fs::read_to_string(path) {
        Ok(text) => parse_corpus(&text, &name),
        Err(e) => {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
            match SHIPPED.iter().find(|(n, _)| *n == stem) {
                Some((n, text)) if !path.exists() => parse_corpus(text, n),
                _ => Err(CorpusError::Io { path: name, msg: e.to_string() }),
            }
        }
    }
}

// ---------------------------------------------------------------- instances

fn sample(rng: &mut ChaCha8Rng, range: Range) -> Q {
    let n: i64 = rng.gen_range(1..=9);
    let d: i64 = rng.gen_range(1..=9);
    let positive = match range {
        Range::Any => rng.gen_bool(0.5),
        Range::Positive => true,
        Range::Negative => false,
    };
    let v = Q::new(n.into(), d.into());
    if positive {
        v
    } else {
        -v
    }
}

/// A family member: operator and subspace at one parameter draw.
#[derive(Clone, Debug)]
pub struct Instance {
    pub values: BTreeMap<String, Q>,
    pub operator: CRDOperator,
    pub basis: SubspaceBasis,
}

impl Instance {
    /// Exact unless asked otherwise or the basis carries irrational symbols.
    pub fn check_mode(&self, numeric: bool) -> Mode {
        if numeric || self.basis.bindings.iter().next().is_some() {
            Mode::Numeric { bindings: self.basis.bindings.clone(), tol: CORPUS_NUMERIC_TOL }
        } else {
            Mode::Exact
        }
    }
}

impl CorpusEntry {
    /// Instance at fixed values of the free symbols. Defined symbols are
    /// computed; failed checks and requirements are errors.
    pub fn resolve(&self, values: &BTreeMap<String, Q>) -> Result<Instance, String> {
        let mut env = BTreeMap::new();
        for name in self.free.keys() {
            let v = values.get(name).ok_or_else(|| format!("no value for `{name}`"))?;
            env.insert(name.clone(), v.clone());
        }
        let env = self.complete(env)?.ok_or_else(|| "the values violate a constraint or requirement".to_string())?;
        self.instantiate(&env)
    }

    /// Values for the defined symbols and the side checks; `None` rejects.
    fn complete(&self, mut env: BTreeMap<String, Q>) -> Result<Option<BTreeMap<String, Q>>, String> {
        for c in &self.constraints {
            match c {
                Relation::Define { name, value } => match value.expr.eval_q(&env) {
                    Ok(v) => {
                        env.insert(name.clone(), v);
                    }
                    Err(crate::expr::ExprError::DivisionByZero) => return Ok(None),
                    Err(e) => return Err(format!("constraint `{name} = {}`: {e}", value.src)),
                },
                Relation::Equal { lhs, rhs } => {
                    let l = lhs.expr.eval_q(&env);
                    let r = rhs.expr.eval_q(&env);
                    match (l, r) {
                        (Ok(l), Ok(r)) if l == r => {}
                        (Ok(_), Ok(_)) => return Ok(None),
                        _ => return Ok(None),
                    }
                }
            }
        }
        for q in &self.require {
            let ok = match q {
                Requirement::Positive(f) => f.expr.eval_q(&env).map(|v| v.is_positive()),
                Requirement::NonZero(f) => f.expr.eval_q(&env).map(|v| !v.is_zero()),
            };
            if !ok.unwrap_or(false) {
                return Ok(None);
            }
        }
        Ok(Some(env))
    }

    /// Operator and subspace at the given symbol values.
    pub fn instantiate(&self, values: &BTreeMap<String, Q>) -> Result<Instance, String> {
        let mut polys = Vec::with_capacity(5);
        for (k, p) in self.parts.iter().enumerate() {
            let coeffs = p.expr.to_poly_in("u", values).map_err(|e| format!("{}: {e}", PART_NAMES[k]))?;
            for c in &coeffs {
                if c.as_constant().is_none() {
                    return Err(format!("{}: unbound symbols in `{c}`", PART_NAMES[k]));
                }
            }
            polys.push(UPoly::new(coeffs).map_err(|e| format!("{}: {e}", PART_NAMES[k]))?);
        }
        let [a1, a2, b1, b2, c]: [UPoly; 5] = polys.try_into().expect("five parts");
        let operator = CRDOperator::new(a1, a2, b1, b2, c);
        let basis = match &self.subspace {
            SubspaceRecipe::Members(ms) => {
                let m = ms
                    .iter()
                    .map(|f| f.expr.to_symexpr(values).map_err(|e| format!("member `{}`: {e}", f.src)))
                    .collect::<Result<Vec<_>, _>>()?;
                SubspaceBasis::custom(m).map_err(|e| e.to_string())?
            }
            SubspaceRecipe::Ode { kind, x1, x2 } => {
                let ode = |axis: Axis, fs: &[Formula]| -> Result<LinearODE, String> {
                    let c = fs
                        .iter()
                        .map(|f| f.expr.eval_q(values).map_err(|e| format!("ODE coefficient `{}`: {e}", f.src)))
                        .collect::<Result<Vec<_>, _>>()?;
                    LinearODE::rational(axis, &c).map_err(|e| e.to_string())
                };
                let (o1, o2) = (ode(Axis::X1, x1)?, ode(Axis::X2, x2)?);
                match kind {
                    SpaceType::I => build_type1(&o1, &o2),
                    SpaceType::II => build_type2(&o1, &o2),
                }
                .map_err(|e| e.to_string())?
            }
        };
        Ok(Instance { values: values.clone(), operator, basis })
    }

    /// A random admissible instance.
    pub fn draw(&self, rng: &mut ChaCha8Rng) -> Result<Instance, String> {
        let mut last = String::from("every draw was rejected");
        for _ in 0..MAX_REJECTIONS {
            let env: BTreeMap<String, Q> = self.free.iter().map(|(k, r)| (k.clone(), sample(rng, *r))).collect();
            let Some(env) = self.complete(env)? else { continue };
            match self.instantiate(&env) {
                Ok(inst) => return Ok(inst),
                // degenerate draws (zero denominators, collapsing rates) are resampled
                Err(e) => last = e,
            }
        }
        Err(format!("no admissible draw in {MAX_REJECTIONS} attempts: {last}"))
    }
}

// ---------------------------------------------------------------- runner

#[derive(Clone, Debug, PartialEq)]
pub enum Verdict {
    Invariant,
    NotInvariant,
    /// Draws disagreed.
    Mixed,
    Error(String),
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Invariant => f.write_str("invariant"),
            Verdict::NotInvariant => f.write_str("not-invariant"),
            Verdict::Mixed => f.write_str("mixed"),
            Verdict::Error(e) => write!(f, "error: {e}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntryResult {
    pub id: String,
    pub class: EquationClass,
    pub expect: Expect,
    pub control_of: Option<String>,
    pub verdict: Verdict,
    pub trials: usize,
    /// Whether any draw was checked in floating point.
    pub numeric: bool,
    /// Largest relative residual over the draws (0 or ∞ in exact mode).
    pub max_residual: f64,
    /// The pointwise probe agreed with the symbolic verdict on every draw.
    pub probe_agrees: bool,
    /// Ψ digest per invariant draw.
    pub digests: Vec<String>,
    /// κ values exposing the residual on the first failing draw.
    pub witness: Option<String>,
}

impl EntryResult {
    pub fn as_expected(&self) -> bool {
        matches!(
            (&self.verdict, self.expect),
            (Verdict::Invariant, Expect::Invariant) | (Verdict::NotInvariant, Expect::NotInvariant)
        )
    }

    pub fn is_control(&self) -> bool {
        self.control_of.is_some()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusReport {
    pub mode: CorpusMode,
    pub trials: usize,
    pub seed: u64,
    /// Sorted by id.
    pub entries: Vec<EntryResult>,
}

impl CorpusReport {
    /// Entries expected invariant.
    pub fn positives(&self) -> impl Iterator<Item = &EntryResult> {
        self.entries.iter().filter(|e| e.expect == Expect::Invariant)
    }

    pub fn controls(&self) -> impl Iterator<Item = &EntryResult> {
        self.entries.iter().filter(|e| e.is_control())
    }

    /// Printed rows known to fail, kept for the record.
    pub fn errata(&self) -> impl Iterator<Item = &EntryResult> {
        self.entries.iter().filter(|e| e.expect == Expect::NotInvariant && !e.is_control())
    }

    /// Entries whose verdict differs from the expectation.
    pub fn discrepancies(&self) -> Vec<&EntryResult> {
        self.entries.iter().filter(|e| !e.as_expected()).collect()
    }

    pub fn all_as_expected(&self) -> bool {
        self.entries.iter().all(EntryResult::as_expected)
    }

    pub fn verdicts(&self) -> Vec<(String, Verdict)> {
        self.entries.iter().map(|e| (e.id.clone(), e.verdict.clone())).collect()
    }

    pub fn to_report(&self) -> Report {
        let mut r = Report::new();
        r.push("report", "corpus");
        r.push("mode", self.mode);
        r.push("trials", self.trials);
        r.push("seed", self.seed);
        r.push("entries", self.entries.len());
        r.push("positives", self.positives().count());
        r.push("positives.invariant", self.positives().filter(|e| e.verdict == Verdict::Invariant).count());
        r.push("controls", self.controls().count());
        r.push("controls.flagged", self.controls().filter(|e| e.verdict == Verdict::NotInvariant).count());
        r.push("errata", self.errata().count());
        r.push("discrepancies", self.discrepancies().len());
        r.push("probe_disagreements", self.entries.iter().filter(|e| !e.probe_agrees).count());
        for e in &self.entries {
            let p = format!("entry.{}", e.id);
            r.push(format!("{p}.class"), e.class);
            r.push(format!("{p}.expect"), e.expect);
            r.push(format!("{p}.verdict"), &e.verdict);
            r.push(format!("{p}.as_expected"), e.as_expected());
            r.push(format!("{p}.checked"), if e.numeric { "numeric" } else { "exact" });
            r.push_f64(format!("{p}.max_residual"), e.max_residual);
            r.push(format!("{p}.probe_agrees"), e.probe_agrees);
            if let Some(w) = &e.witness {
                r.push(format!("{p}.witness"), w);
            }
            if !e.digests.is_empty() {
                r.push(format!("{p}.psi"), e.digests.join(","));
            }
        }
        r.push("status", if self.all_as_expected() { "PASS" } else { "FAIL" });
        r
    }
}

fn entry_seed(seed: u64, id: &str) -> u64 {
    // FNV-1a over the id, mixed with the run seed
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn run_entry(entry: &CorpusEntry, trials: usize, mode: CorpusMode, seed: u64) -> EntryResult {
    let mut rng = ChaCha8Rng::seed_from_u64(entry_seed(seed, &entry.id));
    let mut result = EntryResult {
        id: entry.id.clone(),
        class: entry.class,
        expect: entry.expect,
        control_of: entry.control_of.clone(),
        verdict: Verdict::Error("no draws".into()),
        trials,
        numeric: false,
        max_residual: 0.0,
        probe_agrees: true,
        digests: vec![],
        witness: None,
    };
    let mut verdicts = Vec::with_capacity(trials);
    for _ in 0..trials {
        let outcome = (|| -> Result<bool, String> {
            let inst = entry.draw(&mut rng)?;
            let m = inst.check_mode(mode == CorpusMode::Numeric || entry.mode == CorpusMode::Numeric);
            let numeric = matches!(m, Mode::Numeric { .. });
            let rep = check_invariance_mode(&inst.operator, &inst.basis, &m).map_err(|e| e.to_string())?;
            let probe = numeric_invariance_probe(&inst.operator, &inst.basis, &Bindings::new(), rng.next_u64())
                .map_err(|e| e.to_string())?;
            result.numeric |= numeric;
            result.max_residual = result.max_residual.max(rep.max_residual);
            result.probe_agrees &= probe.invariant == rep.invariant;
            if rep.invariant {
                result.digests.push(psi_digest(&rep.psi));
            } else if result.witness.is_none() {
                result.witness = rep.witness.map(|w| w.iter().map(|q| q.to_string()).collect::<Vec<_>>().join(","));
            }
            Ok(rep.invariant)
        })();
        match outcome {
            Ok(v) => verdicts.push(v),
            Err(e) => {
                result.verdict = Verdict::Error(e);
                return result;
            }
        }
    }
    result.verdict = if verdicts.iter().all(|v| *v) {
        Verdict::Invariant
    } else if verdicts.iter().all(|v| !*v) {
        Verdict::NotInvariant
    } else {
        Verdict::Mixed
    };
    result
}

/// Check every entry on `trials` random draws. Entries run in parallel; the
/// report is sorted by id and depends only on the inputs and `seed`.
pub fn run_corpus(
    entries: &[CorpusEntry],
    trials: usize,
    mode: CorpusMode,
    seed: u64,
) -> Result<CorpusReport, CorpusError> {
    if trials == 0 {
        return Err(CorpusError::Trials);
    }
    let mut results: Vec<EntryResult> = entries.par_iter().map(|e| run_entry(e, trials, mode, seed)).collect();
    results.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(CorpusReport { mode, trials, seed, entries: results })
}
