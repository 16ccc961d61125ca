/*! Formula syntax for team logics.

Formulas are in negation normal form: negation occurs only inside
first-order literals, and the dependency atoms ([`TeamAtom`]) are never
negated. The concrete grammar is:

```text
formula := disj
disj    := conj ("|" conj)*
conj    := quant ("&" quant)*
quant   := ("A" var "." | "E" var ".") quant | unit
unit    := atom | literal | "(" formula ")"
atom    := "dep(" varlist? ";" var ")"
         | "ind(" varlist? ";" varlist ";" varlist ")"
         | "inc(" varlist ";" varlist ")"
literal := ["!"] ident "(" varlist ")" | var ("=" | "!=") var
varlist := var (" " var)*
var, ident := [a-zA-Z][a-zA-Z0-9_]*
```

Quantifiers bind tighter than `&`, which binds tighter than `|`, so
`A x. P(x) & Q(y)` is a conjunction whose left conjunct is quantified.
`ind(x; y; z)` states that `y` and `z` are independent given `x`;
`inc(x; y)` states that every value of `x` occurs as a value of `y`.

Printing and parsing are mutually inverse on abstract syntax trees.
*/

use std::borrow::Borrow;
use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

mod parse;

pub use parse::{parse_formula, ParseError};

/// A variable name. Valid names match `[a-zA-Z][a-zA-Z0-9_]*`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(String);

impl Var {
    pub fn new<S: Into<String>>(name: S) -> Self {
        Var(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Var {
    fn from(name: &str) -> Self {
        Var::new(name)
    }
}

impl Borrow<str> for Var {
    fn borrow(&self) -> &str {
        &self.0
    }
}

/// Shorthand constructor for a [`Var`].
pub fn var(name: &str) -> Var {
    Var::new(name)
}

/// A first-order literal, evaluated pointwise on each assignment.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Literal {
    /// A possibly negated relation application `R(x1 .. xn)`.
    Pred {
        positive: bool,
        name: String,
        args: Vec<Var>,
    },
    /// An equality `x = y` or inequality `x != y`.
    Eq { positive: bool, left: Var, right: Var },
}

/// Dependence atom `dep(condition; value)`: within the team, the values
/// of `condition` determine the value of `value`. An empty condition
/// asserts that `value` is constant.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DepAtom {
    pub condition: Vec<Var>,
    pub value: Var,
}

/// Independence atom `ind(condition; left; right)`: rows that agree on
/// `condition` combine freely, i.e. for any two such rows there is a row
/// with the first one's `left` values and the second one's `right`
/// values.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct IndAtom {
    pub condition: Vec<Var>,
    pub left: Vec<Var>,
    pub right: Vec<Var>,
}

/// Inclusion atom `inc(left; right)`: every tuple of `left` values in the
/// team also occurs as a tuple of `right` values. Both sides have the
/// same width.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct IncAtom {
    pub left: Vec<Var>,
    pub right: Vec<Var>,
}

/// An atom interpreted at the team level rather than pointwise.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TeamAtom {
    Dep(DepAtom),
    Ind(IndAtom),
    Inc(IncAtom),
}

/// A formula in negation normal form.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Formula {
    Literal(Literal),
    Atom(TeamAtom),
    Conj(Box<Formula>, Box<Formula>),
    Disj(Box<Formula>, Box<Formula>),
    Exists(Var, Box<Formula>),
    Forall(Var, Box<Formula>),
}

/// Positive relation literal `name(args)`.
pub fn pred(name: &str, args: &[&str]) -> Formula {
    Formula::Literal(Literal::Pred {
        positive: true,
        name: name.into(),
        args: args.iter().map(|a| var(a)).collect(),
    })
}

/// Negated relation literal `!name(args)`.
pub fn npred(name: &str, args: &[&str]) -> Formula {
    Formula::Literal(Literal::Pred {
        positive: false,
        name: name.into(),
        args: args.iter().map(|a| var(a)).collect(),
    })
}

/// Equality literal `left = right`.
pub fn eq(left: &str, right: &str) -> Formula {
    Formula::Literal(Literal::Eq {
        positive: true,
        left: var(left),
        right: var(right),
    })
}

/// Inequality literal `left != right`.
pub fn neq(left: &str, right: &str) -> Formula {
    Formula::Literal(Literal::Eq {
        positive: false,
        left: var(left),
        right: var(right),
    })
}

/// Dependence atom `dep(condition; value)`.
pub fn dep(condition: &[&str], value: &str) -> Formula {
    Formula::Atom(TeamAtom::Dep(DepAtom {
        condition: condition.iter().map(|v| var(v)).collect(),
        value: var(value),
    }))
}

/// Independence atom `ind(condition; left; right)`.
pub fn ind(condition: &[&str], left: &[&str], right: &[&str]) -> Formula {
    Formula::Atom(TeamAtom::Ind(IndAtom {
        condition: condition.iter().map(|v| var(v)).collect(),
        left: left.iter().map(|v| var(v)).collect(),
        right: right.iter().map(|v| var(v)).collect(),
    }))
}

/// Inclusion atom `inc(left; right)`. Panics if the widths differ.
pub fn inc(left: &[&str], right: &[&str]) -> Formula {
    assert_eq!(left.len(), right.len(), "inclusion atom sides must have equal width");
    Formula::Atom(TeamAtom::Inc(IncAtom {
        left: left.iter().map(|v| var(v)).collect(),
        right: right.iter().map(|v| var(v)).collect(),
    }))
}

pub fn conj(left: Formula, right: Formula) -> Formula {
    Formula::Conj(Box::new(left), Box::new(right))
}

pub fn disj(left: Formula, right: Formula) -> Formula {
    Formula::Disj(Box::new(left), Box::new(right))
}

pub fn exists(v: &str, body: Formula) -> Formula {
    Formula::Exists(var(v), Box::new(body))
}

pub fn forall(v: &str, body: Formula) -> Formula {
    Formula::Forall(var(v), Box::new(body))
}

/// Left-nested conjunction of a nonempty list of formulas.
///
/// Panics on an empty list; the grammar has no nullary truth constant.
pub fn conj_all<I: IntoIterator<Item = Formula>>(parts: I) -> Formula {
    let mut it = parts.into_iter();
    let first = it.next().expect("conj_all needs at least one conjunct");
    it.fold(first, conj)
}

impl TeamAtom {
    /// All variables of the atom in order of first occurrence, with
    /// duplicates removed.
    pub fn variables(&self) -> Vec<Var> {
        let mut out = Vec::new();
        let mut push = |v: &Var| {
            if !out.contains(v) {
                out.push(v.clone());
            }
        };
        match self {
            TeamAtom::Dep(a) => {
                a.condition.iter().for_each(&mut push);
                push(&a.value);
            }
            TeamAtom::Ind(a) => {
                a.condition.iter().for_each(&mut push);
                a.left.iter().for_each(&mut push);
                a.right.iter().for_each(&mut push);
            }
            TeamAtom::Inc(a) => {
                a.left.iter().for_each(&mut push);
                a.right.iter().for_each(&mut push);
            }
        }
        out
    }
}

/// Errors from the structural analyses in this module.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum SyntaxError {
    #[error("path step {step} does not match the formula shape at that point")]
    InvalidPath { step: usize },
    #[error("formula is not a dependency atom")]
    NotAnAtom,
}

/// One step from a formula node to a child.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathStep {
    /// Left child of a conjunction or disjunction.
    Left,
    /// Right child of a conjunction or disjunction.
    Right,
    /// Body of a quantifier.
    Body,
}

/// A sequence of child selectors addressing a subformula occurrence.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SubformulaPath(pub Vec<PathStep>);

impl SubformulaPath {
    pub fn root() -> Self {
        SubformulaPath(Vec::new())
    }
}

/// The subformula of `phi` at `path`.
pub fn subformula_at<'a>(phi: &'a Formula, path: &SubformulaPath) -> Result<&'a Formula, SyntaxError> {
    let mut node = phi;
    for (i, step) in path.0.iter().enumerate() {
        node = match (node, step) {
            (Formula::Conj(l, _), PathStep::Left) | (Formula::Disj(l, _), PathStep::Left) => l,
            (Formula::Conj(_, r), PathStep::Right) | (Formula::Disj(_, r), PathStep::Right) => r,
            (Formula::Exists(_, b), PathStep::Body) | (Formula::Forall(_, b), PathStep::Body) => b,
            _ => return Err(SyntaxError::InvalidPath { step: i }),
        };
    }
    Ok(node)
}

/// The scope of the occurrence at `path`: the free variables of `phi`
/// followed by the variables quantified on the way down, outermost
/// first. Extensions of a team evaluated at that occurrence are defined
/// over exactly these variables.
pub fn subformula_scope(phi: &Formula, path: &SubformulaPath) -> Result<Vec<Var>, SyntaxError> {
    let mut scope: Vec<Var> = free_variables(phi).into_iter().collect();
    let mut node = phi;
    for (i, step) in path.0.iter().enumerate() {
        node = match (node, step) {
            (Formula::Conj(l, _), PathStep::Left) | (Formula::Disj(l, _), PathStep::Left) => l,
            (Formula::Conj(_, r), PathStep::Right) | (Formula::Disj(_, r), PathStep::Right) => r,
            (Formula::Exists(v, b), PathStep::Body) | (Formula::Forall(v, b), PathStep::Body) => {
                if !scope.contains(v) {
                    scope.push(v.clone());
                }
                b
            }
            _ => return Err(SyntaxError::InvalidPath { step: i }),
        };
    }
    Ok(scope)
}

/// Free variables of a formula. Every variable of a dependency atom or a
/// literal is free in it; quantifiers bind as usual.
pub fn free_variables(phi: &Formula) -> BTreeSet<Var> {
    match phi {
        Formula::Literal(Literal::Pred { args, .. }) => args.iter().cloned().collect(),
        Formula::Literal(Literal::Eq { left, right, .. }) => {
            [left.clone(), right.clone()].into_iter().collect()
        }
        Formula::Atom(atom) => atom.variables().into_iter().collect(),
        Formula::Conj(l, r) | Formula::Disj(l, r) => {
            let mut fv = free_variables(l);
            fv.extend(free_variables(r));
            fv
        }
        Formula::Exists(v, body) | Formula::Forall(v, body) => {
            let mut fv = free_variables(body);
            fv.remove(v);
            fv
        }
    }
}

/// All variables occurring in the formula, free or bound.
pub fn all_variables(phi: &Formula) -> BTreeSet<Var> {
    match phi {
        Formula::Literal(_) | Formula::Atom(_) => free_variables(phi),
        Formula::Conj(l, r) | Formula::Disj(l, r) => {
            let mut vs = all_variables(l);
            vs.extend(all_variables(r));
            vs
        }
        Formula::Exists(v, body) | Formula::Forall(v, body) => {
            let mut vs = all_variables(body);
            vs.insert(v.clone());
            vs
        }
    }
}

/// The variables of an atom whose columns are introduced afresh when the
/// atom is compiled into prenex form: the determined variable of `dep`,
/// both sides of `ind`, and all variables of `inc`. Returned in order of
/// first occurrence, deduplicated.
pub fn nonconditional_variables(phi: &Formula) -> Result<Vec<Var>, SyntaxError> {
    let atom = match phi {
        Formula::Atom(atom) => atom,
        _ => return Err(SyntaxError::NotAnAtom),
    };
    let mut out = Vec::new();
    let mut push = |v: &Var| {
        if !out.contains(v) {
            out.push(v.clone());
        }
    };
    match atom {
        TeamAtom::Dep(a) => push(&a.value),
        TeamAtom::Ind(a) => {
            a.left.iter().for_each(&mut push);
            a.right.iter().for_each(&mut push);
        }
        TeamAtom::Inc(a) => {
            a.left.iter().for_each(&mut push);
            a.right.iter().for_each(&mut push);
        }
    }
    Ok(out)
}

/// True if the formula contains no dependency atoms.
pub fn is_first_order(phi: &Formula) -> bool {
    match phi {
        Formula::Literal(_) => true,
        Formula::Atom(_) => false,
        Formula::Conj(l, r) | Formula::Disj(l, r) => is_first_order(l) && is_first_order(r),
        Formula::Exists(_, b) | Formula::Forall(_, b) => is_first_order(b),
    }
}

/// True if the formula contains no quantifiers.
pub fn is_quantifier_free(phi: &Formula) -> bool {
    match phi {
        Formula::Literal(_) | Formula::Atom(_) => true,
        Formula::Conj(l, r) | Formula::Disj(l, r) => is_quantifier_free(l) && is_quantifier_free(r),
        Formula::Exists(..) | Formula::Forall(..) => false,
    }
}

/// Syntactic size measures used for fragment membership.
///
/// `max_ind_distinct_vars` is the maximum, over independence atoms, of
/// the number of distinct variables in the atom minus one, so an atom
/// over at most `k + 1` distinct variables contributes `k`.
/// `max_dep_condition_arity` is the widest dependence condition and
/// `max_inc_width` the widest inclusion side. Fields default to zero
/// when no atom of the kind occurs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FragmentProfile {
    pub universal_count: usize,
    pub max_dep_condition_arity: usize,
    pub max_ind_distinct_vars: usize,
    pub max_inc_width: usize,
    pub quantified_exactly_once: bool,
    pub is_sentence: bool,
}

impl fmt::Display for FragmentProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "universal_count={}", self.universal_count)?;
        writeln!(f, "max_dep_condition_arity={}", self.max_dep_condition_arity)?;
        writeln!(f, "max_ind_distinct_vars={}", self.max_ind_distinct_vars)?;
        writeln!(f, "max_inc_width={}", self.max_inc_width)?;
        writeln!(f, "quantified_exactly_once={}", self.quantified_exactly_once)?;
        write!(f, "is_sentence={}", self.is_sentence)
    }
}

/// Computes the [`FragmentProfile`] of a formula.
pub fn classify_fragment(phi: &Formula) -> FragmentProfile {
    let mut profile = FragmentProfile {
        universal_count: 0,
        max_dep_condition_arity: 0,
        max_ind_distinct_vars: 0,
        max_inc_width: 0,
        quantified_exactly_once: true,
        is_sentence: free_variables(phi).is_empty(),
    };
    let mut bound: Vec<Var> = Vec::new();
    let mut rebound = false;
    scan(phi, &mut profile, &mut bound, &mut rebound);
    let free = free_variables(phi);
    profile.quantified_exactly_once = !rebound && bound.iter().all(|v| !free.contains(v));
    return profile;

    fn scan(phi: &Formula, p: &mut FragmentProfile, bound: &mut Vec<Var>, rebound: &mut bool) {
        match phi {
            Formula::Literal(_) => {}
            Formula::Atom(TeamAtom::Dep(a)) => {
                p.max_dep_condition_arity = p.max_dep_condition_arity.max(a.condition.len());
            }
            Formula::Atom(atom @ TeamAtom::Ind(_)) => {
                let distinct = atom.variables().len();
                p.max_ind_distinct_vars = p.max_ind_distinct_vars.max(distinct.saturating_sub(1));
            }
            Formula::Atom(TeamAtom::Inc(a)) => {
                p.max_inc_width = p.max_inc_width.max(a.left.len());
            }
            Formula::Conj(l, r) | Formula::Disj(l, r) => {
                scan(l, p, bound, rebound);
                scan(r, p, bound, rebound);
            }
            Formula::Exists(v, body) | Formula::Forall(v, body) => {
                if matches!(phi, Formula::Forall(..)) {
                    p.universal_count += 1;
                }
                if bound.contains(v) {
                    *rebound = true;
                } else {
                    bound.push(v.clone());
                }
                scan(body, p, bound, rebound);
            }
        }
    }
}

/// Returns a variable not in `avoid`, trying `x_0`, `x_1`, ... in order.
/// Deterministic: equal `avoid` sets give equal results.
pub fn fresh_variable(avoid: &BTreeSet<Var>) -> Var {
    fresh_named("x", avoid)
}

/// Returns `base_0`, `base_1`, ... — the first such name not in `avoid`.
pub fn fresh_named(base: &str, avoid: &BTreeSet<Var>) -> Var {
    for i in 0.. {
        let candidate = Var::new(format!("{base}_{i}"));
        if !avoid.contains(&candidate) {
            return candidate;
        }
    }
    unreachable!("the candidate space is infinite")
}

/// A mutable pool of used names for drawing several fresh variables.
#[derive(Debug, Clone, Default)]
pub struct FreshPool {
    used: BTreeSet<Var>,
}

impl FreshPool {
    /// A pool that avoids every variable occurring in `phi`.
    pub fn for_formula(phi: &Formula) -> Self {
        FreshPool { used: all_variables(phi) }
    }

    /// Marks a name as used.
    pub fn reserve(&mut self, v: Var) {
        self.used.insert(v);
    }

    /// Draws a fresh variable with the given base name and reserves it.
    pub fn fresh(&mut self, base: &str) -> Var {
        let v = fresh_named(base, &self.used);
        self.used.insert(v.clone());
        v
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Pred { positive, name, args } => {
                if !positive {
                    write!(f, "!")?;
                }
                write!(f, "{name}(")?;
                write_vars(f, args)?;
                write!(f, ")")
            }
            Literal::Eq { positive, left, right } => {
                write!(f, "{left} {} {right}", if *positive { "=" } else { "!=" })
            }
        }
    }
}

impl fmt::Display for TeamAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TeamAtom::Dep(a) => {
                write!(f, "dep(")?;
                write_vars(f, &a.condition)?;
                write!(f, "; {})", a.value)
            }
            TeamAtom::Ind(a) => {
                write!(f, "ind(")?;
                write_vars(f, &a.condition)?;
                write!(f, "; ")?;
                write_vars(f, &a.left)?;
                write!(f, "; ")?;
                write_vars(f, &a.right)?;
                write!(f, ")")
            }
            TeamAtom::Inc(a) => {
                write!(f, "inc(")?;
                write_vars(f, &a.left)?;
                write!(f, "; ")?;
                write_vars(f, &a.right)?;
                write!(f, ")")
            }
        }
    }
}

fn write_vars(f: &mut fmt::Formatter<'_>, vars: &[Var]) -> fmt::Result {
    for (i, v) in vars.iter().enumerate() {
        if i > 0 {
            write!(f, " ")?;
        }
        write!(f, "{v}")?;
    }
    Ok(())
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt_disj(self, f)
    }
}

// The three printing levels mirror the grammar levels. A right-nested
// disjunction or conjunction is parenthesized because the parser folds
// chains to the left.
fn fmt_disj(phi: &Formula, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match phi {
        Formula::Disj(l, r) => {
            fmt_disj(l, f)?;
            write!(f, " | ")?;
            fmt_conj(r, f)
        }
        _ => fmt_conj(phi, f),
    }
}

fn fmt_conj(phi: &Formula, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match phi {
        Formula::Disj(..) => {
            write!(f, "(")?;
            fmt_disj(phi, f)?;
            write!(f, ")")
        }
        Formula::Conj(l, r) => {
            fmt_conj(l, f)?;
            write!(f, " & ")?;
            fmt_quant(r, f)
        }
        _ => fmt_quant(phi, f),
    }
}

fn fmt_quant(phi: &Formula, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match phi {
        Formula::Forall(v, body) => {
            write!(f, "A {v}. ")?;
            fmt_quant(body, f)
        }
        Formula::Exists(v, body) => {
            write!(f, "E {v}. ")?;
            fmt_quant(body, f)
        }
        Formula::Conj(..) | Formula::Disj(..) => {
            write!(f, "(")?;
            fmt_disj(phi, f)?;
            write!(f, ")")
        }
        Formula::Literal(lit) => write!(f, "{lit}"),
        Formula::Atom(atom) => write!(f, "{atom}"),
    }
}
