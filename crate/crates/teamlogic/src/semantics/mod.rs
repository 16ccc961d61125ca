/*! Team evaluation under strict and lax semantics.

The evaluator decides whether a structure satisfies a formula on a team
by exhaustive search over the witnesses the semantics quantifies over:
disjunction splits (disjoint under [`SemanticsMode::Strict`], arbitrary
covers under [`SemanticsMode::Lax`]) and existential choice functions
(single-valued or set-valued). Universal quantification is deterministic
team extension. A sentence is true in a structure when it holds on the
team containing only the empty assignment.

Search is guarded by [`EvalLimits`]; exceeding a limit is reported as an
[`EvalError`], never as a verdict. A successful evaluation can record an
[`EvalTrace`] of the splits and extensions it chose, and [`replay_trace`]
re-derives the verdict from such a trace without searching.

[`TableSentence`] is a fast decision path for strict sentences of the
shape `A..A E..E (atoms & first-order)`: it searches directly for the
team the quantifier prefix would build, one row per universal valuation.
*/

mod search;

pub use search::{TableSentence, WitnessTable};

use std::collections::hash_map::Entry;
use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use thiserror::Error;

use crate::model::{Assignment, Element, Structure, Team};
use crate::syntax::{Formula, Literal, TeamAtom, Var};

/// Which clauses govern disjunction splits and existential witnesses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SemanticsMode {
    /// Disjunction splits are disjoint; existential witnesses pick one
    /// value per assignment.
    Strict,
    /// Disjunction splits may overlap; existential witnesses pick a
    /// nonempty set of values per assignment.
    Lax,
}

impl fmt::Display for SemanticsMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SemanticsMode::Strict => write!(f, "strict"),
            SemanticsMode::Lax => write!(f, "lax"),
        }
    }
}

/// Caps on the witness search. `None` means unlimited.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalLimits {
    /// Disjunction split candidates examined across one evaluation.
    pub max_split_candidates: Option<u64>,
    /// Existential witness candidates examined across one evaluation.
    pub max_witness_functions: Option<u64>,
    /// Rows of any team built by quantifier extension.
    pub max_team_rows: Option<usize>,
}

impl Default for EvalLimits {
    fn default() -> Self {
        EvalLimits {
            max_split_candidates: Some(1_000_000),
            max_witness_functions: Some(2_000_000),
            max_team_rows: Some(4096),
        }
    }
}

impl EvalLimits {
    pub fn unlimited() -> Self {
        EvalLimits {
            max_split_candidates: None,
            max_witness_functions: None,
            max_team_rows: None,
        }
    }
}

/// Evaluation configuration beyond the mode itself.
#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    pub mode: SemanticsMode,
    pub limits: EvalLimits,
    /// Decide first-order subformulas by pointwise evaluation instead of
    /// split and witness search. Never changes verdicts; off by default.
    pub flatness_shortcut: bool,
    /// Record the successful splits and extensions.
    pub record_trace: bool,
}

impl Default for SemanticsMode {
    fn default() -> Self {
        SemanticsMode::Strict
    }
}

/// Errors surfaced by evaluation. Limit errors mean the search gave up,
/// not that the formula is false.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("variable `{0}` is not in the team's domain")]
    UnknownVariable(Var),
    #[error("unknown predicate `{0}`")]
    UnknownPredicate(String),
    #[error("predicate `{name}` has arity {expected}, applied to {found} variables")]
    PredicateArity { name: String, expected: usize, found: usize },
    #[error("team value {element} is outside the domain of size {domain_size}")]
    ValueOutOfRange { element: Element, domain_size: usize },
    #[error("the formula is not first-order")]
    NotFirstOrder,
    #[error("split search exceeded {0} candidates")]
    SplitLimit(u64),
    #[error("witness search exceeded {0} candidates")]
    WitnessLimit(u64),
    #[error("a quantifier extension exceeded {0} rows")]
    TeamRowsLimit(usize),
    #[error("search space too large to enumerate: {0}")]
    SearchSpace(String),
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
}

/// The witnesses a successful evaluation chose.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EvalTrace {
    /// A literal or team atom checked directly on the team.
    Leaf,
    /// A first-order subformula decided pointwise.
    Flat,
    Conj(Box<EvalTrace>, Box<EvalTrace>),
    Disj {
        left_team: Team,
        right_team: Team,
        left: Box<EvalTrace>,
        right: Box<EvalTrace>,
    },
    Exists {
        extension: Team,
        body: Box<EvalTrace>,
    },
    Forall {
        extension: Team,
        body: Box<EvalTrace>,
    },
}

/// An evaluation verdict, with the trace when one was requested and the
/// formula holds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Evaluation {
    pub holds: bool,
    pub trace: Option<EvalTrace>,
}

/// Decides whether the structure satisfies the formula on the team.
pub fn evaluate(
    structure: &Structure,
    team: &Team,
    formula: &Formula,
    mode: SemanticsMode,
    limits: &EvalLimits,
) -> Result<bool, EvalError> {
    let options =
        EvalOptions { mode, limits: limits.clone(), ..EvalOptions::default() };
    Ok(evaluate_with(structure, team, formula, &options)?.holds)
}

/// [`evaluate`] with full configuration and optional trace recording.
pub fn evaluate_with(
    structure: &Structure,
    team: &Team,
    formula: &Formula,
    options: &EvalOptions,
) -> Result<Evaluation, EvalError> {
    validate(structure, team, formula)?;
    let mut evaluator = Evaluator {
        structure,
        mode: options.mode,
        limits: &options.limits,
        flatness_shortcut: options.flatness_shortcut,
        record_trace: options.record_trace,
        splits: 0,
        witnesses: 0,
    };
    let (holds, trace) = evaluator.eval(formula, team)?;
    Ok(Evaluation { holds, trace })
}

/// Decides a single team atom on a team by its defining condition.
pub fn evaluate_atom(
    structure: &Structure,
    team: &Team,
    atom: &TeamAtom,
) -> Result<bool, EvalError> {
    validate_rows(structure, team)?;
    let rows: Vec<&[Element]> = team.rows().collect();
    atom_holds(atom, team, &rows)
}

/// Decides a first-order formula on a team by checking every assignment
/// pointwise. Errors on formulas containing a team atom; agrees with
/// [`evaluate`] in both modes on its domain.
pub fn check_flatness_shortcut(
    structure: &Structure,
    team: &Team,
    formula: &Formula,
) -> Result<bool, EvalError> {
    if !crate::syntax::is_first_order(formula) {
        return Err(EvalError::NotFirstOrder);
    }
    validate(structure, team, formula)?;
    holds_pointwise(structure, team, formula)
}

/// Single-assignment satisfaction of a first-order formula.
pub fn evaluate_pointwise(
    structure: &Structure,
    assignment: &Assignment,
    formula: &Formula,
) -> Result<bool, EvalError> {
    match formula {
        Formula::Literal(literal) => literal_pointwise(structure, assignment, literal),
        Formula::Atom(_) => Err(EvalError::NotFirstOrder),
        Formula::Conj(left, right) => Ok(evaluate_pointwise(structure, assignment, left)?
            && evaluate_pointwise(structure, assignment, right)?),
        Formula::Disj(left, right) => Ok(evaluate_pointwise(structure, assignment, left)?
            || evaluate_pointwise(structure, assignment, right)?),
        Formula::Exists(v, body) => {
            for e in structure.elements() {
                if evaluate_pointwise(structure, &assignment.clone().set(v.clone(), e), body)? {
                    return Ok(true);
                }
            }
            Ok(false)
        }
        Formula::Forall(v, body) => {
            for e in structure.elements() {
                if !evaluate_pointwise(structure, &assignment.clone().set(v.clone(), e), body)? {
                    return Ok(false);
                }
            }
            Ok(true)
        }
    }
}

/// Re-derives a `true` verdict from a recorded trace without searching.
/// Returns false when the trace's leaves fail; malformed traces error.
pub fn replay_trace(
    structure: &Structure,
    team: &Team,
    formula: &Formula,
    trace: &EvalTrace,
    mode: SemanticsMode,
) -> Result<bool, EvalError> {
    validate(structure, team, formula)?;
    replay(structure, team, formula, trace, mode)
}

fn validate(structure: &Structure, team: &Team, formula: &Formula) -> Result<(), EvalError> {
    for v in crate::syntax::free_variables(formula) {
        if team.col(&v).is_none() {
            return Err(EvalError::UnknownVariable(v));
        }
    }
    validate_rows(structure, team)?;
    validate_predicates(structure, formula)
}

fn validate_rows(structure: &Structure, team: &Team) -> Result<(), EvalError> {
    let n = structure.domain_size();
    for row in team.rows() {
        if let Some(&element) = row.iter().find(|&&e| e >= n) {
            return Err(EvalError::ValueOutOfRange { element, domain_size: n });
        }
    }
    Ok(())
}

fn validate_predicates(structure: &Structure, formula: &Formula) -> Result<(), EvalError> {
    match formula {
        Formula::Literal(Literal::Pred { name, args, .. }) => match structure.relation(name) {
            None => Err(EvalError::UnknownPredicate(name.clone())),
            Some(rel) if rel.arity() != args.len() => Err(EvalError::PredicateArity {
                name: name.clone(),
                expected: rel.arity(),
                found: args.len(),
            }),
            Some(_) => Ok(()),
        },
        Formula::Literal(Literal::Eq { .. }) | Formula::Atom(_) => Ok(()),
        Formula::Conj(left, right) | Formula::Disj(left, right) => {
            validate_predicates(structure, left)?;
            validate_predicates(structure, right)
        }
        Formula::Exists(_, body) | Formula::Forall(_, body) => {
            validate_predicates(structure, body)
        }
    }
}

fn literal_pointwise(
    structure: &Structure,
    assignment: &Assignment,
    literal: &Literal,
) -> Result<bool, EvalError> {
    let value = |v: &Var| {
        assignment.get(v).ok_or_else(|| EvalError::UnknownVariable(v.clone()))
    };
    match literal {
        Literal::Pred { positive, name, args } => {
            let rel = structure
                .relation(name)
                .ok_or_else(|| EvalError::UnknownPredicate(name.clone()))?;
            if rel.arity() != args.len() {
                return Err(EvalError::PredicateArity {
                    name: name.clone(),
                    expected: rel.arity(),
                    found: args.len(),
                });
            }
            let tuple: Vec<Element> = args.iter().map(value).collect::<Result<_, _>>()?;
            Ok(rel.contains(&tuple) == *positive)
        }
        Literal::Eq { positive, left, right } => {
            Ok((value(left)? == value(right)?) == *positive)
        }
    }
}

fn holds_pointwise(
    structure: &Structure,
    team: &Team,
    formula: &Formula,
) -> Result<bool, EvalError> {
    for assignment in team.assignments() {
        if !evaluate_pointwise(structure, &assignment, formula)? {
            return Ok(false);
        }
    }
    Ok(true)
}

fn atom_holds(atom: &TeamAtom, team: &Team, rows: &[&[Element]]) -> Result<bool, EvalError> {
    let cols = |vars: &[Var]| -> Result<Vec<usize>, EvalError> {
        vars.iter()
            .map(|v| team.col(v).ok_or_else(|| EvalError::UnknownVariable(v.clone())))
            .collect()
    };
    match atom {
        TeamAtom::Dep(dep) => {
            let condition = cols(&dep.condition)?;
            let value = cols(std::slice::from_ref(&dep.value))?[0];
            Ok(dep_holds(rows, &condition, value))
        }
        TeamAtom::Ind(ind) => {
            let condition = cols(&ind.condition)?;
            let left = cols(&ind.left)?;
            let right = cols(&ind.right)?;
            Ok(ind_holds(rows, &condition, &left, &right))
        }
        TeamAtom::Inc(inc) => {
            let left = cols(&inc.left)?;
            let right = cols(&inc.right)?;
            Ok(inc_holds(rows, &left, &right))
        }
    }
}

/// Rows agreeing on the condition columns agree on the value column.
pub(crate) fn dep_holds(rows: &[&[Element]], condition: &[usize], value: usize) -> bool {
    let mut seen: HashMap<Vec<Element>, Element> = HashMap::new();
    for row in rows {
        let key: Vec<Element> = condition.iter().map(|&c| row[c]).collect();
        match seen.entry(key) {
            Entry::Occupied(entry) => {
                if *entry.get() != row[value] {
                    return false;
                }
            }
            Entry::Vacant(entry) => {
                entry.insert(row[value]);
            }
        }
    }
    true
}

/// Within each class of rows agreeing on the condition columns, every
/// left-value combines with every right-value in some row of the class.
pub(crate) fn ind_holds(
    rows: &[&[Element]],
    condition: &[usize],
    left: &[usize],
    right: &[usize],
) -> bool {
    type Group = (HashSet<Vec<Element>>, HashSet<Vec<Element>>, HashSet<(Vec<Element>, Vec<Element>)>);
    let mut groups: HashMap<Vec<Element>, Group> = HashMap::new();
    for row in rows {
        let key: Vec<Element> = condition.iter().map(|&c| row[c]).collect();
        let left_values: Vec<Element> = left.iter().map(|&c| row[c]).collect();
        let right_values: Vec<Element> = right.iter().map(|&c| row[c]).collect();
        let (lefts, rights, pairs) = groups.entry(key).or_default();
        lefts.insert(left_values.clone());
        rights.insert(right_values.clone());
        pairs.insert((left_values, right_values));
    }
    // Realized pairs always sit inside lefts x rights, so the product is
    // covered exactly when the cardinalities multiply out.
    groups
        .values()
        .all(|(lefts, rights, pairs)| lefts.len() * rights.len() == pairs.len())
}

/// Every left-column tuple also occurs as a right-column tuple.
pub(crate) fn inc_holds(rows: &[&[Element]], left: &[usize], right: &[usize]) -> bool {
    let available: HashSet<Vec<Element>> = rows
        .iter()
        .map(|row| right.iter().map(|&c| row[c]).collect())
        .collect();
    rows.iter().all(|row| {
        let needed: Vec<Element> = left.iter().map(|&c| row[c]).collect();
        available.contains(&needed)
    })
}

struct Evaluator<'a> {
    structure: &'a Structure,
    mode: SemanticsMode,
    limits: &'a EvalLimits,
    flatness_shortcut: bool,
    record_trace: bool,
    splits: u64,
    witnesses: u64,
}

type Outcome = (bool, Option<EvalTrace>);

impl Evaluator<'_> {
    fn eval(&mut self, formula: &Formula, team: &Team) -> Result<Outcome, EvalError> {
        if self.flatness_shortcut
            && crate::syntax::is_first_order(formula)
            && !matches!(formula, Formula::Literal(_))
        {
            let holds = holds_pointwise(self.structure, team, formula)?;
            return Ok((holds, self.leaf(holds, EvalTrace::Flat)));
        }
        match formula {
            Formula::Literal(_) => {
                let holds = holds_pointwise(self.structure, team, formula)?;
                Ok((holds, self.leaf(holds, EvalTrace::Leaf)))
            }
            Formula::Atom(atom) => {
                let rows: Vec<&[Element]> = team.rows().collect();
                let holds = atom_holds(atom, team, &rows)?;
                Ok((holds, self.leaf(holds, EvalTrace::Leaf)))
            }
            Formula::Conj(left, right) => {
                let (left_holds, left_trace) = self.eval(left, team)?;
                if !left_holds {
                    return Ok((false, None));
                }
                let (right_holds, right_trace) = self.eval(right, team)?;
                if !right_holds {
                    return Ok((false, None));
                }
                let trace = left_trace.zip(right_trace).map(|(l, r)| {
                    EvalTrace::Conj(Box::new(l), Box::new(r))
                });
                Ok((true, trace))
            }
            Formula::Disj(left, right) => self.eval_disj(left, right, team),
            Formula::Exists(v, body) => self.eval_exists(v, body, team),
            Formula::Forall(v, body) => {
                let n = self.structure.domain_size();
                let all: Vec<Element> = (0..n).collect();
                let per_row = vec![all; team.len()];
                let extension = team.choice_extension(v, &per_row);
                self.check_rows(extension.len())?;
                let (holds, body_trace) = self.eval(body, &extension)?;
                let trace = body_trace.map(|t| EvalTrace::Forall {
                    extension: extension.clone(),
                    body: Box::new(t),
                });
                Ok((holds, trace))
            }
        }
    }

    fn eval_disj(
        &mut self,
        left: &Formula,
        right: &Formula,
        team: &Team,
    ) -> Result<Outcome, EvalError> {
        let rows = team.len();
        match self.mode {
            SemanticsMode::Strict => {
                if rows > 127 {
                    return Err(EvalError::SearchSpace(format!("2^{rows} disjoint splits")));
                }
                // Bit i of the mask sends row i to the left part.
                for mask in 0u128..1 << rows {
                    self.tick_split()?;
                    let left_team = team.subteam(|i| mask >> i & 1 == 1);
                    let right_team = team.subteam(|i| mask >> i & 1 == 0);
                    if let Some(outcome) =
                        self.try_split(left, right, left_team, right_team)?
                    {
                        return Ok(outcome);
                    }
                }
                Ok((false, None))
            }
            SemanticsMode::Lax => {
                // Each row is labeled left-only, right-only, or both.
                let mut labels = vec![0u64; rows];
                loop {
                    self.tick_split()?;
                    let left_team = team.subteam(|i| labels[i] != 1);
                    let right_team = team.subteam(|i| labels[i] != 0);
                    if let Some(outcome) =
                        self.try_split(left, right, left_team, right_team)?
                    {
                        return Ok(outcome);
                    }
                    if !next_digits(&mut labels, 3) {
                        return Ok((false, None));
                    }
                }
            }
        }
    }

    fn try_split(
        &mut self,
        left: &Formula,
        right: &Formula,
        left_team: Team,
        right_team: Team,
    ) -> Result<Option<Outcome>, EvalError> {
        let (left_holds, left_trace) = self.eval(left, &left_team)?;
        if !left_holds {
            return Ok(None);
        }
        let (right_holds, right_trace) = self.eval(right, &right_team)?;
        if !right_holds {
            return Ok(None);
        }
        let trace = left_trace.zip(right_trace).map(|(l, r)| EvalTrace::Disj {
            left_team,
            right_team,
            left: Box::new(l),
            right: Box::new(r),
        });
        Ok(Some((true, trace)))
    }

    fn eval_exists(
        &mut self,
        v: &Var,
        body: &Formula,
        team: &Team,
    ) -> Result<Outcome, EvalError> {
        let n = self.structure.domain_size();
        let rows = team.len();
        let base = match self.mode {
            SemanticsMode::Strict => n as u64,
            SemanticsMode::Lax => {
                if n > 24 {
                    return Err(EvalError::SearchSpace(format!(
                        "2^{n} value sets per assignment"
                    )));
                }
                (1u64 << n) - 1
            }
        };
        let mut digits = vec![0u64; rows];
        loop {
            self.tick_witness()?;
            let per_row: Vec<Vec<Element>> = digits
                .iter()
                .map(|&d| match self.mode {
                    SemanticsMode::Strict => vec![d as Element],
                    // Digit d encodes the nonempty value set with bitmask d+1.
                    SemanticsMode::Lax => {
                        (0..n).filter(|e| (d + 1) >> e & 1 == 1).collect()
                    }
                })
                .collect();
            let extension = team.choice_extension(v, &per_row);
            self.check_rows(extension.len())?;
            let (holds, body_trace) = self.eval(body, &extension)?;
            if holds {
                let trace = body_trace.map(|t| EvalTrace::Exists {
                    extension,
                    body: Box::new(t),
                });
                return Ok((true, trace));
            }
            if !next_digits(&mut digits, base) {
                return Ok((false, None));
            }
        }
    }

    fn leaf(&self, holds: bool, leaf: EvalTrace) -> Option<EvalTrace> {
        (holds && self.record_trace).then_some(leaf)
    }

    fn tick_split(&mut self) -> Result<(), EvalError> {
        self.splits += 1;
        match self.limits.max_split_candidates {
            Some(limit) if self.splits > limit => Err(EvalError::SplitLimit(limit)),
            _ => Ok(()),
        }
    }

    fn tick_witness(&mut self) -> Result<(), EvalError> {
        self.witnesses += 1;
        match self.limits.max_witness_functions {
            Some(limit) if self.witnesses > limit => Err(EvalError::WitnessLimit(limit)),
            _ => Ok(()),
        }
    }

    fn check_rows(&self, rows: usize) -> Result<(), EvalError> {
        match self.limits.max_team_rows {
            Some(limit) if rows > limit => Err(EvalError::TeamRowsLimit(limit)),
            _ => Ok(()),
        }
    }
}

/// Advances a mixed-radix counter with the last digit fastest; returns
/// false when it wraps back to all zeros.
fn next_digits(digits: &mut [u64], base: u64) -> bool {
    for d in digits.iter_mut().rev() {
        *d += 1;
        if *d < base {
            return true;
        }
        *d = 0;
    }
    false
}

fn replay(
    structure: &Structure,
    team: &Team,
    formula: &Formula,
    trace: &EvalTrace,
    mode: SemanticsMode,
) -> Result<bool, EvalError> {
    match (formula, trace) {
        (_, EvalTrace::Flat) => {
            if !crate::syntax::is_first_order(formula) {
                return Err(EvalError::InvalidTrace(
                    "pointwise leaf on a non-first-order formula".into(),
                ));
            }
            holds_pointwise(structure, team, formula)
        }
        (Formula::Literal(_), EvalTrace::Leaf) => holds_pointwise(structure, team, formula),
        (Formula::Atom(atom), EvalTrace::Leaf) => {
            let rows: Vec<&[Element]> = team.rows().collect();
            atom_holds(atom, team, &rows)
        }
        (Formula::Conj(left, right), EvalTrace::Conj(left_trace, right_trace)) => {
            Ok(replay(structure, team, left, left_trace, mode)?
                && replay(structure, team, right, right_trace, mode)?)
        }
        (
            Formula::Disj(left, right),
            EvalTrace::Disj { left_team, right_team, left: left_trace, right: right_trace },
        ) => {
            if left_team.vars() != team.vars() || right_team.vars() != team.vars() {
                return Err(EvalError::InvalidTrace("split changes the variable domain".into()));
            }
            let union: BTreeSet<&[Element]> =
                left_team.rows().chain(right_team.rows()).collect();
            if union != team.rows().collect() {
                return Err(EvalError::InvalidTrace("split does not cover the team".into()));
            }
            if mode == SemanticsMode::Strict {
                let left_rows: BTreeSet<&[Element]> = left_team.rows().collect();
                if right_team.rows().any(|r| left_rows.contains(r)) {
                    return Err(EvalError::InvalidTrace("strict split parts overlap".into()));
                }
            }
            Ok(replay(structure, left_team, left, left_trace, mode)?
                && replay(structure, right_team, right, right_trace, mode)?)
        }
        (Formula::Exists(v, body), EvalTrace::Exists { extension, body: body_trace }) => {
            check_existential_extension(team, extension, v, mode)?;
            replay(structure, extension, body, body_trace, mode)
        }
        (Formula::Forall(v, body), EvalTrace::Forall { extension, body: body_trace }) => {
            let n = structure.domain_size();
            let all: Vec<Element> = (0..n).collect();
            let expected = team.choice_extension(v, &vec![all; team.len()]);
            if *extension != expected {
                return Err(EvalError::InvalidTrace(
                    "universal extension does not match the team".into(),
                ));
            }
            replay(structure, extension, body, body_trace, mode)
        }
        _ => Err(EvalError::InvalidTrace("trace shape does not match the formula".into())),
    }
}

/// Checks that `extension` arises from `team` by a choice function for
/// `v`: grouping rows by their values outside `v`, a class is populated
/// in the extension exactly when it is populated in the team, and under
/// strict semantics a class cannot gain rows.
fn check_existential_extension(
    team: &Team,
    extension: &Team,
    v: &Var,
    mode: SemanticsMode,
) -> Result<(), EvalError> {
    let mut expected_vars: Vec<Var> = team.vars().to_vec();
    if team.col(v).is_none() {
        expected_vars.push(v.clone());
        expected_vars.sort();
    }
    if extension.vars() != expected_vars {
        return Err(EvalError::InvalidTrace(
            "existential extension has the wrong variable domain".into(),
        ));
    }
    let class_of = |team: &Team, row: &[Element]| -> Vec<Element> {
        team.vars()
            .iter()
            .zip(row)
            .filter(|(var, _)| *var != v)
            .map(|(_, &e)| e)
            .collect()
    };
    let mut classes: HashMap<Vec<Element>, (usize, usize)> = HashMap::new();
    for row in team.rows() {
        classes.entry(class_of(team, row)).or_default().0 += 1;
    }
    for row in extension.rows() {
        classes.entry(class_of(extension, row)).or_default().1 += 1;
    }
    for (sources, images) in classes.values() {
        if (*sources > 0) != (*images > 0) {
            return Err(EvalError::InvalidTrace(
                "existential extension changes which assignments exist".into(),
            ));
        }
        if mode == SemanticsMode::Strict && images > sources {
            return Err(EvalError::InvalidTrace(
                "strict existential extension duplicates an assignment".into(),
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_team;
    use crate::syntax::{
        conj, dep, disj, eq, exists, forall, inc, ind, neq, npred, pred, var, DepAtom, IncAtom,
        IndAtom,
    };
    use proptest::prelude::*;

    fn bare(domain_size: usize) -> Structure {
        Structure::new(domain_size).unwrap()
    }

    /// Domain {0,1,2}; rows (u,v,w) = (0,1,2), (1,0,1), (2,1,0).
    fn running_team() -> Team {
        parse_team("vars u v w\nrow 0 1 2\nrow 1 0 1\nrow 2 1 0\n").unwrap()
    }

    fn running_disjunction() -> Formula {
        disj(inc(&["u"], &["v"]), inc(&["w"], &["v"]))
    }

    #[test]
    fn three_row_disjunction_fails_strictly_but_not_laxly() {
        let structure = bare(3);
        let team = running_team();
        let psi = running_disjunction();
        let limits = EvalLimits::default();
        assert!(!evaluate(&structure, &team, &psi, SemanticsMode::Strict, &limits).unwrap());
        assert!(evaluate(&structure, &team, &psi, SemanticsMode::Lax, &limits).unwrap());
    }

    #[test]
    fn overlapping_cover_witnesses_the_lax_verdict() {
        // The first two rows satisfy the left disjunct, the last two the
        // right one; the middle row sits in both parts.
        let team = running_team();
        let structure = bare(3);
        let rows: Vec<Vec<Element>> = team.rows().map(|r| r.to_vec()).collect();
        let vars = [var("u"), var("v"), var("w")];
        let left = Team::from_rows(&vars, [rows[0].clone(), rows[1].clone()]).unwrap();
        let right = Team::from_rows(&vars, [rows[1].clone(), rows[2].clone()]).unwrap();
        let left_atom = TeamAtom::Inc(IncAtom { left: vec![var("u")], right: vec![var("v")] });
        let right_atom = TeamAtom::Inc(IncAtom { left: vec![var("w")], right: vec![var("v")] });
        assert!(evaluate_atom(&structure, &left, &left_atom).unwrap());
        assert!(evaluate_atom(&structure, &right, &right_atom).unwrap());
    }

    #[test]
    fn universal_extension_restores_the_strict_disjunction() {
        let structure = bare(3);
        let team = running_team();
        let formula = forall("x", conj(inc(&["w"], &["x"]), running_disjunction()));
        let limits = EvalLimits::default();
        assert!(evaluate(&structure, &team, &formula, SemanticsMode::Strict, &limits).unwrap());
    }

    #[test]
    fn empty_team_satisfies_everything() {
        let structure = bare(2).with_relation("P", 1, [[0]]).unwrap();
        let team = Team::empty([var("x"), var("y")]).unwrap();
        let formulas = [
            npred("P", &["x"]),
            dep(&["x"], "y"),
            disj(pred("P", &["x"]), neq("x", "y")),
            exists("z", eq("z", "x")),
            forall("z", pred("P", &["z"])),
        ];
        for formula in &formulas {
            for mode in [SemanticsMode::Strict, SemanticsMode::Lax] {
                assert!(
                    evaluate(&structure, &team, formula, mode, &EvalLimits::default()).unwrap(),
                    "{formula} should hold on the empty team"
                );
            }
        }
    }

    #[test]
    fn atom_checks_match_their_definitions() {
        let structure = bare(3);
        let team = running_team();
        let inc_atom = TeamAtom::Inc(IncAtom { left: vec![var("u")], right: vec![var("v")] });
        // u takes three values, v only two.
        assert!(!evaluate_atom(&structure, &team, &inc_atom).unwrap());

        let square =
            Team::from_rows(&[var("x"), var("y")], [[0, 0], [0, 1], [1, 0], [1, 1]]).unwrap();
        let ind_atom = TeamAtom::Ind(IndAtom {
            condition: vec![],
            left: vec![var("x")],
            right: vec![var("y")],
        });
        assert!(evaluate_atom(&bare(2), &square, &ind_atom).unwrap());
        let dented = Team::from_rows(&[var("x"), var("y")], [[0, 0], [0, 1], [1, 0]]).unwrap();
        assert!(!evaluate_atom(&bare(2), &dented, &ind_atom).unwrap());

        let two = Team::from_rows(&[var("x"), var("y")], [[0, 1], [0, 2]]).unwrap();
        let dep_atom =
            TeamAtom::Dep(DepAtom { condition: vec![var("x")], value: var("y") });
        assert!(!evaluate_atom(&bare(3), &two, &dep_atom).unwrap());
    }

    #[test]
    fn repeated_variables_in_independence_require_agreement() {
        // ind(; x; x) forces x to be constant across the team.
        let atom = TeamAtom::Ind(IndAtom {
            condition: vec![],
            left: vec![var("x")],
            right: vec![var("x")],
        });
        let constant = Team::from_rows(&[var("x")], [[1], [1]]).unwrap();
        let varied = Team::from_rows(&[var("x")], [[0], [1]]).unwrap();
        assert!(evaluate_atom(&bare(2), &constant, &atom).unwrap());
        assert!(!evaluate_atom(&bare(2), &varied, &atom).unwrap());
    }

    #[test]
    fn flatness_shortcut_matches_pointwise_truth() {
        let structure = bare(2).with_relation("P", 1, [[0]]).unwrap();
        let team = Team::from_rows(&[var("x")], [[0], [1]]).unwrap();
        assert!(check_flatness_shortcut(&structure, &team, &eq("x", "x")).unwrap());
        assert!(!check_flatness_shortcut(&structure, &team, &pred("P", &["x"])).unwrap());
        let singleton = Team::from_rows(&[var("x")], [[0]]).unwrap();
        assert!(check_flatness_shortcut(&structure, &singleton, &pred("P", &["x"])).unwrap());
        assert_eq!(
            check_flatness_shortcut(&structure, &team, &dep(&[], "x")),
            Err(EvalError::NotFirstOrder)
        );
    }

    #[test]
    fn quantifying_an_existing_variable_rebinds_its_column() {
        let structure = bare(2).with_relation("P", 1, [[0]]).unwrap();
        // x is 1 everywhere, yet E x. P(x) rebinds it to 0.
        let team = Team::from_rows(&[var("x")], [[1]]).unwrap();
        let formula = exists("x", pred("P", &["x"]));
        let limits = EvalLimits::default();
        assert!(evaluate(&structure, &team, &formula, SemanticsMode::Strict, &limits).unwrap());
        let forall_version = forall("x", pred("P", &["x"]));
        assert!(!evaluate(&structure, &team, &forall_version, SemanticsMode::Strict, &limits)
            .unwrap());
    }

    #[test]
    fn limit_errors_are_not_verdicts() {
        let structure = bare(2).with_relation("P", 1, Vec::<Vec<Element>>::new()).unwrap();
        let team = Team::from_rows(&[var("x")], [[0], [1]]).unwrap();
        // P is empty, so every split and witness is tried and the caps hit.
        let split_heavy = disj(pred("P", &["x"]), pred("P", &["x"]));
        let tight = EvalLimits { max_split_candidates: Some(2), ..EvalLimits::unlimited() };
        assert_eq!(
            evaluate(&structure, &team, &split_heavy, SemanticsMode::Strict, &tight),
            Err(EvalError::SplitLimit(2))
        );

        let witness_heavy = exists("y", pred("P", &["y"]));
        let tight = EvalLimits { max_witness_functions: Some(3), ..EvalLimits::unlimited() };
        assert_eq!(
            evaluate(&structure, &team, &witness_heavy, SemanticsMode::Strict, &tight),
            Err(EvalError::WitnessLimit(3))
        );

        let wide = forall("y", eq("y", "y"));
        let tight = EvalLimits { max_team_rows: Some(3), ..EvalLimits::unlimited() };
        assert_eq!(
            evaluate(&structure, &team, &wide, SemanticsMode::Strict, &tight),
            Err(EvalError::TeamRowsLimit(3))
        );
    }

    #[test]
    fn evaluation_reports_domain_and_vocabulary_errors() {
        let structure = bare(2);
        let team = Team::from_rows(&[var("x")], [[0]]).unwrap();
        let limits = EvalLimits::default();
        assert_eq!(
            evaluate(&structure, &team, &pred("P", &["x"]), SemanticsMode::Strict, &limits),
            Err(EvalError::UnknownPredicate("P".into()))
        );
        assert_eq!(
            evaluate(&structure, &team, &eq("x", "y"), SemanticsMode::Strict, &limits),
            Err(EvalError::UnknownVariable(var("y")))
        );
        let with_p = bare(2).with_relation("P", 1, [[0]]).unwrap();
        assert_eq!(
            evaluate(&with_p, &team, &pred("P", &["x", "x"]), SemanticsMode::Strict, &limits),
            Err(EvalError::PredicateArity { name: "P".into(), expected: 1, found: 2 })
        );
        let out_of_range = Team::from_rows(&[var("x")], [[5]]).unwrap();
        assert_eq!(
            evaluate(&with_p, &out_of_range, &pred("P", &["x"]), SemanticsMode::Strict, &limits),
            Err(EvalError::ValueOutOfRange { element: 5, domain_size: 2 })
        );
    }

    #[test]
    fn traces_replay_to_true() {
        let structure = bare(3);
        let team = running_team();
        let formula = forall("x", conj(inc(&["w"], &["x"]), running_disjunction()));
        let options = EvalOptions {
            mode: SemanticsMode::Strict,
            record_trace: true,
            ..EvalOptions::default()
        };
        let evaluation = evaluate_with(&structure, &team, &formula, &options).unwrap();
        assert!(evaluation.holds);
        let trace = evaluation.trace.expect("a true verdict records a trace");
        assert!(replay_trace(&structure, &team, &formula, &trace, SemanticsMode::Strict).unwrap());
    }

    #[test]
    fn tampered_traces_are_rejected() {
        let structure = bare(2);
        let team = Team::from_rows(&[var("x")], [[0], [1]]).unwrap();
        let formula = disj(eq("x", "x"), eq("x", "x"));
        let options = EvalOptions {
            mode: SemanticsMode::Strict,
            record_trace: true,
            ..EvalOptions::default()
        };
        let trace = evaluate_with(&structure, &team, &formula, &options).unwrap().trace.unwrap();
        // Shrinking a part of the cover invalidates the split.
        if let EvalTrace::Disj { left_team, right_team, left, right } = trace {
            let tampered = EvalTrace::Disj {
                left_team: left_team.select(&[var("x")], &[0]).unwrap(),
                right_team: right_team.select(&[var("x")], &[0]).unwrap(),
                left,
                right,
            };
            let result =
                replay_trace(&structure, &team, &formula, &tampered, SemanticsMode::Strict);
            assert!(matches!(result, Err(EvalError::InvalidTrace(_))));
        } else {
            panic!("expected a disjunction trace");
        }
    }

    // Generators for small formulas over x and y with P/1 and E/2.

    fn small_structure() -> impl Strategy<Value = Structure> {
        (0u8..4, 0u8..16).prop_map(|(p_bits, e_bits)| {
            let p = (0..2).filter(|i| p_bits >> i & 1 == 1).map(|i| vec![i]);
            let e = (0..4).filter(|i| e_bits >> i & 1 == 1).map(|i| vec![i / 2, i % 2]);
            Structure::new(2)
                .unwrap()
                .with_relation("P", 1, p)
                .unwrap()
                .with_relation("E", 2, e)
                .unwrap()
        })
    }

    fn small_team() -> impl Strategy<Value = Team> {
        (0u8..16).prop_map(|bits| {
            let rows = (0..4usize).filter(|i| bits >> i & 1 == 1).map(|i| vec![i / 2, i % 2]);
            Team::from_rows(&[var("x"), var("y")], rows).unwrap()
        })
    }

    fn a_var() -> impl Strategy<Value = &'static str> {
        prop_oneof![Just("x"), Just("y")]
    }

    fn a_literal() -> impl Strategy<Value = Formula> {
        prop_oneof![
            (any::<bool>(), a_var()).prop_map(|(pos, v)| {
                if pos {
                    pred("P", &[v])
                } else {
                    npred("P", &[v])
                }
            }),
            (any::<bool>(), a_var(), a_var()).prop_map(|(pos, l, r)| {
                if pos {
                    pred("E", &[l, r])
                } else {
                    npred("E", &[l, r])
                }
            }),
            (any::<bool>(), a_var(), a_var()).prop_map(|(pos, l, r)| {
                if pos {
                    eq(l, r)
                } else {
                    neq(l, r)
                }
            }),
        ]
    }

    #[derive(Clone, Copy)]
    enum AtomPolicy {
        None,
        DepOnly,
        All,
    }

    fn an_atom(policy: AtomPolicy) -> BoxedStrategy<Formula> {
        let dep_atom = (proptest::collection::vec(a_var(), 0..2), a_var())
            .prop_map(|(cond, v)| dep(&cond, v));
        match policy {
            AtomPolicy::None => unreachable!("literal generator used instead"),
            AtomPolicy::DepOnly => dep_atom.boxed(),
            AtomPolicy::All => {
                let inc_atom = (a_var(), a_var()).prop_map(|(l, r)| inc(&[l], &[r]));
                let ind_atom = (proptest::collection::vec(a_var(), 0..2), a_var(), a_var())
                    .prop_map(|(cond, l, r)| ind(&cond, &[l], &[r]));
                prop_oneof![dep_atom, inc_atom, ind_atom].boxed()
            }
        }
    }

    fn a_formula(policy: AtomPolicy) -> BoxedStrategy<Formula> {
        let leaf = match policy {
            AtomPolicy::None => a_literal().boxed(),
            _ => prop_oneof![a_literal(), an_atom(policy)].boxed(),
        };
        leaf.prop_recursive(3, 12, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(l, r)| conj(l, r)),
                (inner.clone(), inner.clone()).prop_map(|(l, r)| disj(l, r)),
                inner.clone().prop_map(|f| exists("z", f)),
                inner.prop_map(|f| forall("z", f)),
            ]
        })
        .boxed()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(96))]

        #[test]
        fn first_order_formulas_are_flat(
            structure in small_structure(),
            team in small_team(),
            formula in a_formula(AtomPolicy::None),
        ) {
            let limits = EvalLimits::unlimited();
            let strict =
                evaluate(&structure, &team, &formula, SemanticsMode::Strict, &limits).unwrap();
            let lax =
                evaluate(&structure, &team, &formula, SemanticsMode::Lax, &limits).unwrap();
            let pointwise = check_flatness_shortcut(&structure, &team, &formula).unwrap();
            prop_assert_eq!(strict, pointwise);
            prop_assert_eq!(lax, pointwise);
            let shortcut = EvalOptions {
                mode: SemanticsMode::Strict,
                flatness_shortcut: true,
                ..EvalOptions::default()
            };
            prop_assert_eq!(
                evaluate_with(&structure, &team, &formula, &shortcut).unwrap().holds,
                pointwise
            );
        }

        #[test]
        fn strict_truth_implies_lax_truth(
            structure in small_structure(),
            team in small_team(),
            formula in a_formula(AtomPolicy::All),
        ) {
            let limits = EvalLimits::unlimited();
            let strict =
                evaluate(&structure, &team, &formula, SemanticsMode::Strict, &limits).unwrap();
            if strict {
                prop_assert!(
                    evaluate(&structure, &team, &formula, SemanticsMode::Lax, &limits).unwrap()
                );
            }
        }

        #[test]
        fn the_empty_team_satisfies_generated_formulas(
            structure in small_structure(),
            formula in a_formula(AtomPolicy::All),
        ) {
            let team = Team::empty([var("x"), var("y")]).unwrap();
            let limits = EvalLimits::unlimited();
            for mode in [SemanticsMode::Strict, SemanticsMode::Lax] {
                prop_assert!(evaluate(&structure, &team, &formula, mode, &limits).unwrap());
            }
        }

        #[test]
        fn dependence_formulas_are_downward_closed_and_mode_agnostic(
            structure in small_structure(),
            team in small_team(),
            formula in a_formula(AtomPolicy::DepOnly),
        ) {
            let limits = EvalLimits::unlimited();
            let strict =
                evaluate(&structure, &team, &formula, SemanticsMode::Strict, &limits).unwrap();
            let lax =
                evaluate(&structure, &team, &formula, SemanticsMode::Lax, &limits).unwrap();
            prop_assert_eq!(strict, lax);
            if strict {
                // Dropping any single row preserves satisfaction.
                let rows: Vec<Vec<Element>> = team.rows().map(|r| r.to_vec()).collect();
                for skip in 0..rows.len() {
                    let rest = rows
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| *i != skip)
                        .map(|(_, r)| r.clone());
                    let subteam = Team::from_rows(team.vars(), rest).unwrap();
                    prop_assert!(
                        evaluate(&structure, &subteam, &formula, SemanticsMode::Strict, &limits)
                            .unwrap()
                    );
                }
            }
        }

        #[test]
        fn recorded_traces_certify_their_verdicts(
            structure in small_structure(),
            team in small_team(),
            formula in a_formula(AtomPolicy::All),
            strict in any::<bool>(),
        ) {
            let mode = if strict { SemanticsMode::Strict } else { SemanticsMode::Lax };
            let options = EvalOptions {
                mode,
                limits: EvalLimits::unlimited(),
                record_trace: true,
                ..EvalOptions::default()
            };
            let evaluation = evaluate_with(&structure, &team, &formula, &options).unwrap();
            if evaluation.holds {
                let trace = evaluation.trace.expect("trace recorded for a true verdict");
                prop_assert!(replay_trace(&structure, &team, &formula, &trace, mode).unwrap());
            } else {
                prop_assert!(evaluation.trace.is_none());
            }
        }
    }
}
