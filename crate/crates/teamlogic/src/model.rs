/*! Finite structures, assignments and teams.

A [`Structure`] interprets relation and constant symbols over the domain
`{0, .., n-1}`. A [`Team`] is a finite set of assignments that share a
variable domain; it is stored as a sorted variable list plus a set of
value rows aligned with that list, so teams compare and iterate
deterministically.

Both types have a line-oriented text format, written by their `Display`
implementations and read back by [`parse_structure`] and [`parse_team`]:

```text
# structure
domain = 3
constant c = 1
relation P/1 = {0, 2}
relation E/2 = {(0,1), (1,2)}
```

```text
# team
vars u v w
row 0 1 2
row 1 0 1
```

`#` starts a comment, blank lines are skipped, and spacing within a line
is free. Unary relation tuples may be written without parentheses.
*/

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::syntax::Var;

/// A domain element of a finite structure with domain `{0, .., n-1}`.
pub type Element = usize;

/// Errors from structure and team construction, access and parsing.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("domain size must be at least 1")]
    EmptyDomain,
    #[error("relation arity must be at least 1")]
    ZeroArity,
    #[error("duplicate symbol `{0}`")]
    DuplicateSymbol(String),
    #[error("tuple of width {found} in relation `{name}` of arity {arity}")]
    TupleArity { name: String, arity: usize, found: usize },
    #[error("element {element} is outside the domain of size {domain_size}")]
    ElementOutOfRange { element: Element, domain_size: usize },
    #[error("variable `{0}` is not in the team's domain")]
    UnknownVariable(Var),
    #[error("variable `{0}` occurs twice in the team's domain")]
    DuplicateVariable(Var),
    #[error("variable `{0}` is already in the team's domain")]
    VariablePresent(Var),
    #[error("row of width {found} in a team over {expected} variables")]
    RowWidth { expected: usize, found: usize },
    #[error("lax choice function returned an empty set")]
    EmptyLaxChoice,
    #[error("selection tuple of width {values} for {variables} variables")]
    SelectionWidth { variables: usize, values: usize },
    #[error("enumeration of {0} candidates exceeds the supported bound")]
    CombinatorialLimit(String),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
}

/// An interpreted relation: a set of tuples of a fixed arity.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Relation {
    arity: usize,
    tuples: BTreeSet<Vec<Element>>,
}

impl Relation {
    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn tuples(&self) -> &BTreeSet<Vec<Element>> {
        &self.tuples
    }

    pub fn contains(&self, tuple: &[Element]) -> bool {
        self.tuples.contains(tuple)
    }
}

/// A finite first-order structure with named relations and constants.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Structure {
    domain_size: usize,
    relations: BTreeMap<String, Relation>,
    constants: BTreeMap<String, Element>,
}

impl Structure {
    /// A structure with the given domain size and no symbols.
    pub fn new(domain_size: usize) -> Result<Self, ModelError> {
        if domain_size == 0 {
            return Err(ModelError::EmptyDomain);
        }
        Ok(Structure { domain_size, relations: BTreeMap::new(), constants: BTreeMap::new() })
    }

    /// Adds a relation, validating arity and element bounds.
    pub fn with_relation<I, T>(mut self, name: &str, arity: usize, tuples: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = T>,
        T: Into<Vec<Element>>,
    {
        if arity == 0 {
            return Err(ModelError::ZeroArity);
        }
        if self.relations.contains_key(name) || self.constants.contains_key(name) {
            return Err(ModelError::DuplicateSymbol(name.to_string()));
        }
        let mut set = BTreeSet::new();
        for tuple in tuples {
            let tuple = tuple.into();
            if tuple.len() != arity {
                return Err(ModelError::TupleArity {
                    name: name.to_string(),
                    arity,
                    found: tuple.len(),
                });
            }
            if let Some(&element) = tuple.iter().find(|&&e| e >= self.domain_size) {
                return Err(ModelError::ElementOutOfRange { element, domain_size: self.domain_size });
            }
            set.insert(tuple);
        }
        self.relations.insert(name.to_string(), Relation { arity, tuples: set });
        Ok(self)
    }

    /// Adds a named constant.
    pub fn with_constant(mut self, name: &str, value: Element) -> Result<Self, ModelError> {
        if value >= self.domain_size {
            return Err(ModelError::ElementOutOfRange { element: value, domain_size: self.domain_size });
        }
        if self.relations.contains_key(name) || self.constants.contains_key(name) {
            return Err(ModelError::DuplicateSymbol(name.to_string()));
        }
        self.constants.insert(name.to_string(), value);
        Ok(self)
    }

    pub fn domain_size(&self) -> usize {
        self.domain_size
    }

    /// Domain elements in ascending order.
    pub fn elements(&self) -> impl Iterator<Item = Element> {
        0..self.domain_size
    }

    pub fn relation(&self, name: &str) -> Option<&Relation> {
        self.relations.get(name)
    }

    pub fn relations(&self) -> impl Iterator<Item = (&str, &Relation)> {
        self.relations.iter().map(|(n, r)| (n.as_str(), r))
    }

    pub fn constant(&self, name: &str) -> Option<Element> {
        self.constants.get(name).copied()
    }

    pub fn constants(&self) -> impl Iterator<Item = (&str, Element)> {
        self.constants.iter().map(|(n, &e)| (n.as_str(), e))
    }

    /// The vocabulary of this structure.
    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary {
            relations: self.relations.iter().map(|(n, r)| (n.clone(), r.arity)).collect(),
            constants: self.constants.keys().cloned().collect(),
        }
    }
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "domain = {}", self.domain_size)?;
        for (name, value) in &self.constants {
            write!(f, "\nconstant {name} = {value}")?;
        }
        for (name, rel) in &self.relations {
            write!(f, "\nrelation {name}/{} = {{", rel.arity)?;
            for (i, tuple) in rel.tuples.iter().enumerate() {
                if i > 0 {
                    write!(f, ", ")?;
                }
                if rel.arity == 1 {
                    write!(f, "{}", tuple[0])?;
                } else {
                    write!(f, "(")?;
                    for (j, e) in tuple.iter().enumerate() {
                        if j > 0 {
                            write!(f, ",")?;
                        }
                        write!(f, "{e}")?;
                    }
                    write!(f, ")")?;
                }
            }
            write!(f, "}}")?;
        }
        Ok(())
    }
}

/// Relation and constant symbols, with relation arities.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    relations: Vec<(String, usize)>,
    constants: Vec<String>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Vocabulary::default()
    }

    pub fn with_relation(mut self, name: &str, arity: usize) -> Result<Self, ModelError> {
        if arity == 0 {
            return Err(ModelError::ZeroArity);
        }
        if self.relations.iter().any(|(n, _)| n == name) || self.constants.iter().any(|n| n == name) {
            return Err(ModelError::DuplicateSymbol(name.to_string()));
        }
        self.relations.push((name.to_string(), arity));
        Ok(self)
    }

    pub fn with_constant(mut self, name: &str) -> Result<Self, ModelError> {
        if self.relations.iter().any(|(n, _)| n == name) || self.constants.iter().any(|n| n == name) {
            return Err(ModelError::DuplicateSymbol(name.to_string()));
        }
        self.constants.push(name.to_string());
        Ok(self)
    }

    pub fn relations(&self) -> &[(String, usize)] {
        &self.relations
    }

    pub fn constants(&self) -> &[String] {
        &self.constants
    }
}

/// A finite mapping from variables to domain elements.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Assignment(BTreeMap<Var, Element>);

impl Assignment {
    /// The empty assignment.
    pub fn new() -> Self {
        Assignment::default()
    }

    pub fn get(&self, v: &Var) -> Option<Element> {
        self.0.get(v).copied()
    }

    /// Returns the extended assignment; an existing binding is replaced.
    pub fn set(mut self, v: Var, e: Element) -> Self {
        self.0.insert(v, e);
        self
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Var, Element)> {
        self.0.iter().map(|(v, &e)| (v, e))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromIterator<(Var, Element)> for Assignment {
    fn from_iter<I: IntoIterator<Item = (Var, Element)>>(iter: I) -> Self {
        Assignment(iter.into_iter().collect())
    }
}

/// A team: a set of assignments over a shared variable domain.
///
/// Variables are kept sorted and rows are value vectors aligned with the
/// sorted variable list, so two teams are equal exactly when they have
/// the same domain and the same assignments.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Team {
    vars: Vec<Var>,
    rows: BTreeSet<Vec<Element>>,
}

impl Team {
    /// The empty team over the given variables.
    pub fn empty<I: IntoIterator<Item = Var>>(vars: I) -> Result<Self, ModelError> {
        let mut vars: Vec<Var> = vars.into_iter().collect();
        vars.sort();
        if let Some(pair) = vars.windows(2).find(|w| w[0] == w[1]) {
            return Err(ModelError::DuplicateVariable(pair[0].clone()));
        }
        Ok(Team { vars, rows: BTreeSet::new() })
    }

    /// The team over no variables containing only the empty assignment.
    /// Sentences are true in a structure when they hold on this team.
    pub fn initial() -> Self {
        Team { vars: Vec::new(), rows: [Vec::new()].into_iter().collect() }
    }

    /// A team from rows given in the order of `vars`. Rows are
    /// deduplicated; a width mismatch is an error.
    pub fn from_rows<I, T>(vars: &[Var], rows: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = T>,
        T: Into<Vec<Element>>,
    {
        let mut team = Team::empty(vars.to_vec())?;
        // Rows arrive ordered like `vars`; store them in sorted-var order.
        let order: Vec<usize> = {
            let mut idx: Vec<usize> = (0..vars.len()).collect();
            idx.sort_by(|&a, &b| vars[a].cmp(&vars[b]));
            idx
        };
        for row in rows {
            let row = row.into();
            if row.len() != vars.len() {
                return Err(ModelError::RowWidth { expected: vars.len(), found: row.len() });
            }
            team.rows.insert(order.iter().map(|&i| row[i]).collect());
        }
        Ok(team)
    }

    /// A team from assignments, which must be defined on exactly `vars`.
    pub fn from_assignments<I>(vars: &[Var], assignments: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = Assignment>,
    {
        let mut team = Team::empty(vars.to_vec())?;
        for s in assignments {
            let mut row = Vec::with_capacity(team.vars.len());
            for v in &team.vars {
                row.push(s.get(v).ok_or_else(|| ModelError::UnknownVariable(v.clone()))?);
            }
            if s.len() != team.vars.len() {
                let extra = s
                    .iter()
                    .map(|(v, _)| v)
                    .find(|v| !team.vars.contains(v))
                    .expect("some variable is outside the team domain")
                    .clone();
                return Err(ModelError::UnknownVariable(extra));
            }
            team.rows.insert(row);
        }
        Ok(team)
    }

    /// The team's variable domain, sorted ascending.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Value rows aligned with [`Team::vars`], in lexicographic order.
    pub fn rows(&self) -> impl Iterator<Item = &[Element]> {
        self.rows.iter().map(|r| r.as_slice())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// The position of a variable in the sorted domain.
    pub fn col(&self, v: &Var) -> Option<usize> {
        self.vars.binary_search(v).ok()
    }

    /// The assignments of the team, in row order.
    pub fn assignments(&self) -> impl Iterator<Item = Assignment> + '_ {
        self.rows.iter().map(move |row| {
            self.vars.iter().cloned().zip(row.iter().copied()).collect()
        })
    }

    fn columns(&self, vs: &[Var]) -> Result<Vec<usize>, ModelError> {
        vs.iter()
            .map(|v| self.col(v).ok_or_else(|| ModelError::UnknownVariable(v.clone())))
            .collect()
    }

    /// `X[M/v]`: every row extended with every domain element at `v`.
    /// The variable must be new.
    pub fn universal_extension(&self, v: &Var, domain_size: usize) -> Result<Team, ModelError> {
        let (vars, at) = self.extended_vars(v)?;
        let mut rows = BTreeSet::new();
        for row in &self.rows {
            for e in 0..domain_size {
                let mut extended = row.clone();
                extended.insert(at, e);
                rows.insert(extended);
            }
        }
        Ok(Team { vars, rows })
    }

    /// `X[F/v]`: every row extended with the single value `F` chooses for
    /// it. The variable must be new. Keeps the number of rows.
    pub fn strict_extension<F>(&self, v: &Var, mut choose: F) -> Result<Team, ModelError>
    where
        F: FnMut(&Assignment) -> Element,
    {
        let (vars, at) = self.extended_vars(v)?;
        let mut rows = BTreeSet::new();
        for (row, s) in self.rows.iter().zip(self.assignments()) {
            let mut extended = row.clone();
            extended.insert(at, choose(&s));
            rows.insert(extended);
        }
        Ok(Team { vars, rows })
    }

    /// `X[H/v]`: every row extended with each value from the nonempty set
    /// `H` chooses for it. The variable must be new.
    pub fn lax_extension<H>(&self, v: &Var, mut choose: H) -> Result<Team, ModelError>
    where
        H: FnMut(&Assignment) -> BTreeSet<Element>,
    {
        let (vars, at) = self.extended_vars(v)?;
        let mut rows = BTreeSet::new();
        for (row, s) in self.rows.iter().zip(self.assignments()) {
            let choices = choose(&s);
            if choices.is_empty() {
                return Err(ModelError::EmptyLaxChoice);
            }
            for e in choices {
                let mut extended = row.clone();
                extended.insert(at, e);
                rows.insert(extended);
            }
        }
        Ok(Team { vars, rows })
    }

    /// The subteam of rows whose index (in row order) is kept.
    pub(crate) fn subteam(&self, mut keep: impl FnMut(usize) -> bool) -> Team {
        let rows = self
            .rows
            .iter()
            .enumerate()
            .filter(|(i, _)| keep(*i))
            .map(|(_, row)| row.clone())
            .collect();
        Team { vars: self.vars.clone(), rows }
    }

    /// Extends or overwrites the column of `v`: the i-th row (in row
    /// order) is replaced by one copy per value in `per_row[i]`. Unlike
    /// the public extensions this supports re-binding a variable the
    /// team already has, which quantification over an in-domain
    /// variable requires.
    pub(crate) fn choice_extension(&self, v: &Var, per_row: &[Vec<Element>]) -> Team {
        debug_assert_eq!(per_row.len(), self.rows.len());
        let (vars, at, overwrite) = match self.vars.binary_search(v) {
            Ok(at) => (self.vars.clone(), at, true),
            Err(at) => {
                let mut vars = self.vars.clone();
                vars.insert(at, v.clone());
                (vars, at, false)
            }
        };
        let mut rows = BTreeSet::new();
        for (row, choices) in self.rows.iter().zip(per_row) {
            for &e in choices {
                let mut extended = row.clone();
                if overwrite {
                    extended[at] = e;
                } else {
                    extended.insert(at, e);
                }
                rows.insert(extended);
            }
        }
        Team { vars, rows }
    }

    fn extended_vars(&self, v: &Var) -> Result<(Vec<Var>, usize), ModelError> {
        match self.vars.binary_search(v) {
            Ok(_) => Err(ModelError::VariablePresent(v.clone())),
            Err(at) => {
                let mut vars = self.vars.clone();
                vars.insert(at, v.clone());
                Ok((vars, at))
            }
        }
    }

    /// `X restricted to vs`: drops all other columns and collapses equal
    /// rows. Every requested variable must be in the domain.
    pub fn restrict(&self, vs: &[Var]) -> Result<Team, ModelError> {
        let mut keep: Vec<Var> = vs.to_vec();
        keep.sort();
        keep.dedup();
        let cols = self.columns(&keep)?;
        let rows = self
            .rows
            .iter()
            .map(|row| cols.iter().map(|&c| row[c]).collect())
            .collect();
        Ok(Team { vars: keep, rows })
    }

    /// The subteam of rows whose `vs` values equal `values`.
    pub fn select(&self, vs: &[Var], values: &[Element]) -> Result<Team, ModelError> {
        if vs.len() != values.len() {
            return Err(ModelError::SelectionWidth { variables: vs.len(), values: values.len() });
        }
        let cols = self.columns(vs)?;
        let rows = self
            .rows
            .iter()
            .filter(|row| cols.iter().zip(values).all(|(&c, &e)| row[c] == e))
            .cloned()
            .collect();
        Ok(Team { vars: self.vars.clone(), rows })
    }

    /// `X(vs)`: the tuples the team assigns to the listed variables.
    /// Variables may repeat.
    pub fn project(&self, vs: &[Var]) -> Result<BTreeSet<Vec<Element>>, ModelError> {
        let cols = self.columns_allow_repeats(vs)?;
        Ok(self
            .rows
            .iter()
            .map(|row| cols.iter().map(|&c| row[c]).collect())
            .collect())
    }

    fn columns_allow_repeats(&self, vs: &[Var]) -> Result<Vec<usize>, ModelError> {
        vs.iter()
            .map(|v| self.col(v).ok_or_else(|| ModelError::UnknownVariable(v.clone())))
            .collect()
    }
}

impl fmt::Display for Team {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "vars")?;
        for v in &self.vars {
            write!(f, " {v}")?;
        }
        for row in &self.rows {
            write!(f, "\nrow")?;
            for e in row {
                write!(f, " {e}")?;
            }
        }
        Ok(())
    }
}

/// All assignments of `width` values below `domain_size`, in
/// lexicographic order.
pub fn all_rows(domain_size: usize, width: usize) -> Result<Vec<Vec<Element>>, ModelError> {
    if domain_size == 0 {
        return Ok(if width == 0 { vec![Vec::new()] } else { Vec::new() });
    }
    let count = (domain_size as u128)
        .checked_pow(width as u32)
        .filter(|&c| c <= 1 << 24)
        .ok_or_else(|| ModelError::CombinatorialLimit(format!("{domain_size}^{width} assignments")))?;
    let mut rows = Vec::with_capacity(count as usize);
    let mut row = vec![0; width];
    'outer: loop {
        rows.push(row.clone());
        // Mixed-radix increment, least significant digit last.
        let mut i = width;
        loop {
            if i == 0 {
                break 'outer;
            }
            i -= 1;
            row[i] += 1;
            if row[i] < domain_size {
                break;
            }
            row[i] = 0;
        }
    }
    Ok(rows)
}

/// Every structure over the vocabulary with domain size `2..=max_size`,
/// smaller sizes first; within one size the enumeration is lexicographic
/// over relation tuple sets and constant values.
pub fn enumerate_structures(
    vocab: &Vocabulary,
    max_size: usize,
) -> impl Iterator<Item = Structure> {
    let vocab = vocab.clone();
    (2..=max_size).flat_map(move |n| {
        let vocab = vocab.clone();
        // Per relation: all subsets of the n^arity candidate tuples,
        // encoded as bitmasks with tuples in lexicographic order.
        let mut axes: Vec<Vec<StructurePart>> = Vec::new();
        for (name, arity) in vocab.relations() {
            let tuples = all_rows(n, *arity).expect("relation axis too large to enumerate");
            assert!(tuples.len() <= 24, "relation `{name}` has too many candidate tuples");
            let parts = (0u64..1 << tuples.len())
                .map(|mask| {
                    let chosen: Vec<Vec<Element>> = tuples
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| mask >> i & 1 == 1)
                        .map(|(_, t)| t.clone())
                        .collect();
                    StructurePart::Relation(name.clone(), *arity, chosen)
                })
                .collect();
            axes.push(parts);
        }
        for name in vocab.constants() {
            axes.push((0..n).map(|e| StructurePart::Constant(name.clone(), e)).collect());
        }
        cartesian(axes).into_iter().map(move |parts| {
            let mut structure = Structure::new(n).expect("size is at least 2");
            for part in parts {
                structure = match part {
                    StructurePart::Relation(name, arity, tuples) => structure
                        .with_relation(&name, arity, tuples)
                        .expect("enumerated tuples are valid"),
                    StructurePart::Constant(name, e) => {
                        structure.with_constant(&name, e).expect("enumerated constants are valid")
                    }
                };
            }
            structure
        })
    })
}

#[derive(Clone)]
enum StructurePart {
    Relation(String, usize, Vec<Vec<Element>>),
    Constant(String, Element),
}

// The product of the axes, first axis slowest. An empty axis list yields
// one empty combination.
fn cartesian<T: Clone>(axes: Vec<Vec<T>>) -> Vec<Vec<T>> {
    let mut combos: Vec<Vec<T>> = vec![Vec::new()];
    for axis in axes {
        let mut next = Vec::with_capacity(combos.len() * axis.len());
        for combo in &combos {
            for item in &axis {
                let mut extended = combo.clone();
                extended.push(item.clone());
                next.push(extended);
            }
        }
        combos = next;
    }
    combos
}

/// Every team over the given variables with rows drawn from a domain of
/// `domain_size` elements, the empty team included. With `max_rows` set,
/// only teams of at most that many rows are produced, ordered by row
/// count; otherwise teams are ordered by the bitmask of included
/// assignments.
pub fn enumerate_teams(
    domain_size: usize,
    vars: &[Var],
    max_rows: Option<usize>,
) -> Result<Vec<Team>, ModelError> {
    let mut sorted: Vec<Var> = vars.to_vec();
    sorted.sort();
    if let Some(pair) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(ModelError::DuplicateVariable(pair[0].clone()));
    }
    let rows = all_rows(domain_size, sorted.len())?;
    let count = rows.len();
    match max_rows {
        None => {
            if count > 24 {
                return Err(ModelError::CombinatorialLimit(format!("2^{count} teams")));
            }
            Ok((0u64..1 << count)
                .map(|mask| {
                    let chosen = rows
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| mask >> i & 1 == 1)
                        .map(|(_, r)| r.clone());
                    Team { vars: sorted.clone(), rows: chosen.collect() }
                })
                .collect())
        }
        Some(max_rows) => {
            let max_rows = max_rows.min(count);
            let mut total: u128 = 0;
            let mut binomial: u128 = 1;
            for size in 0..=max_rows {
                total += binomial;
                if total > 1 << 24 {
                    return Err(ModelError::CombinatorialLimit(format!(
                        "teams of up to {max_rows} of {count} assignments"
                    )));
                }
                binomial = binomial * (count - size) as u128 / (size + 1) as u128;
            }
            let mut teams = Vec::with_capacity(total as usize);
            let mut chosen: Vec<usize> = Vec::new();
            subsets_up_to(count, max_rows, 0, &mut chosen, &mut |subset| {
                teams.push(Team {
                    vars: sorted.clone(),
                    rows: subset.iter().map(|&i| rows[i].clone()).collect(),
                });
            });
            Ok(teams)
        }
    }
}

fn subsets_up_to(
    n: usize,
    max: usize,
    from: usize,
    chosen: &mut Vec<usize>,
    emit: &mut impl FnMut(&[usize]),
) {
    emit(chosen);
    if chosen.len() == max {
        return;
    }
    for i in from..n {
        chosen.push(i);
        subsets_up_to(n, max, i + 1, chosen, emit);
        chosen.pop();
    }
}

/// Reads a structure from the text format.
pub fn parse_structure(text: &str) -> Result<Structure, ModelError> {
    let mut structure: Option<Structure> = None;
    for (line_no, raw) in text.lines().enumerate() {
        let line_no = line_no + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| ModelError::Format { line: line_no, message };
        if let Some(rest) = line.strip_prefix("domain") {
            let value = rest
                .trim()
                .strip_prefix('=')
                .ok_or_else(|| err("expected `domain = N`".into()))?;
            let n: usize = value.trim().parse().map_err(|_| err("invalid domain size".into()))?;
            if structure.is_some() {
                return Err(err("duplicate `domain` line".into()));
            }
            structure = Some(Structure::new(n)?);
        } else if let Some(rest) = line.strip_prefix("constant") {
            let structure = structure.as_mut().ok_or_else(|| err("`domain` must come first".into()))?;
            let (name, value) = rest.split_once('=').ok_or_else(|| err("expected `constant c = i`".into()))?;
            let value: Element =
                value.trim().parse().map_err(|_| err("invalid constant value".into()))?;
            *structure = structure.clone().with_constant(name.trim(), value)?;
        } else if let Some(rest) = line.strip_prefix("relation") {
            let structure = structure.as_mut().ok_or_else(|| err("`domain` must come first".into()))?;
            let (head, body) =
                rest.split_once('=').ok_or_else(|| err("expected `relation R/k = {..}`".into()))?;
            let (name, arity) =
                head.trim().split_once('/').ok_or_else(|| err("expected `R/k` before `=`".into()))?;
            let arity: usize = arity.trim().parse().map_err(|_| err("invalid arity".into()))?;
            let tuples = parse_tuple_set(body.trim(), arity).map_err(|m| err(m))?;
            *structure = structure.clone().with_relation(name.trim(), arity, tuples)?;
        } else {
            return Err(err(format!("unrecognized line `{line}`")));
        }
    }
    structure.ok_or(ModelError::Format { line: 0, message: "missing `domain` line".into() })
}

fn parse_tuple_set(body: &str, arity: usize) -> Result<Vec<Vec<Element>>, String> {
    let inner = body
        .strip_prefix('{')
        .and_then(|b| b.strip_suffix('}'))
        .ok_or_else(|| "expected a `{..}` tuple set".to_string())?
        .trim();
    let mut tuples = Vec::new();
    let mut rest = inner;
    while !rest.is_empty() {
        rest = rest.trim_start();
        if rest.is_empty() {
            break;
        }
        if let Some(stripped) = rest.strip_prefix('(') {
            let (tuple_text, after) =
                stripped.split_once(')').ok_or_else(|| "unclosed `(` in tuple".to_string())?;
            let tuple: Vec<Element> = tuple_text
                .split(',')
                .map(|p| p.trim().parse().map_err(|_| format!("invalid element `{}`", p.trim())))
                .collect::<Result<_, _>>()?;
            tuples.push(tuple);
            rest = after.trim_start().strip_prefix(',').unwrap_or(after.trim_start());
        } else {
            // A bare element; only meaningful for unary relations.
            let end = rest.find(',').unwrap_or(rest.len());
            let part = rest[..end].trim();
            if arity != 1 {
                return Err(format!("tuple `{part}` must be parenthesized for arity {arity}"));
            }
            let e: Element = part.parse().map_err(|_| format!("invalid element `{part}`"))?;
            tuples.push(vec![e]);
            rest = if end < rest.len() { &rest[end + 1..] } else { "" };
        }
    }
    Ok(tuples)
}

/// Reads a team from the text format. Duplicate rows collapse.
pub fn parse_team(text: &str) -> Result<Team, ModelError> {
    let mut vars: Option<Vec<Var>> = None;
    let mut rows: Vec<Vec<Element>> = Vec::new();
    for (line_no, raw) in text.lines().enumerate() {
        let line_no = line_no + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| ModelError::Format { line: line_no, message };
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("vars") => {
                if vars.is_some() {
                    return Err(err("duplicate `vars` line".into()));
                }
                vars = Some(parts.map(Var::new).collect());
            }
            Some("row") => {
                if vars.is_none() {
                    return Err(err("`vars` must come before rows".into()));
                }
                let row: Vec<Element> = parts
                    .map(|p| p.parse().map_err(|_| err(format!("invalid element `{p}`"))))
                    .collect::<Result<_, _>>()?;
                rows.push(row);
            }
            Some(other) => return Err(err(format!("unrecognized line `{other}`"))),
            None => unreachable!("blank lines were skipped"),
        }
    }
    let vars = vars.ok_or(ModelError::Format { line: 0, message: "missing `vars` line".into() })?;
    Team::from_rows(&vars, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::var;

    fn team_uvw() -> Team {
        Team::from_rows(
            &[var("u"), var("v"), var("w")],
            [[0, 1, 2], [1, 0, 1], [2, 1, 0]],
        )
        .unwrap()
    }

    #[test]
    fn structures_validate_bounds() {
        assert_eq!(Structure::new(0), Err(ModelError::EmptyDomain));
        let err = Structure::new(2).unwrap().with_relation("P", 1, [[2]]);
        assert_eq!(err, Err(ModelError::ElementOutOfRange { element: 2, domain_size: 2 }));
        let err = Structure::new(2).unwrap().with_relation("P", 1, [vec![0, 1]]);
        assert_eq!(err, Err(ModelError::TupleArity { name: "P".into(), arity: 1, found: 2 }));
    }

    #[test]
    fn teams_deduplicate_and_sort() {
        let team = Team::from_rows(&[var("y"), var("x")], [[0, 1], [0, 1], [1, 0]]).unwrap();
        assert_eq!(team.vars(), &[var("x"), var("y")]);
        // Rows were given in (y, x) order.
        let rows: Vec<&[Element]> = team.rows().collect();
        assert_eq!(rows, vec![&[0, 1][..], &[1, 0][..]]);
        assert_eq!(team.len(), 2);
    }

    #[test]
    fn universal_extension_multiplies_rows() {
        let team = team_uvw();
        let extended = team.universal_extension(&var("x"), 3).unwrap();
        assert_eq!(extended.len(), 9);
        assert_eq!(extended.vars(), &[var("u"), var("v"), var("w"), var("x")]);
        assert_eq!(
            team.universal_extension(&var("u"), 3),
            Err(ModelError::VariablePresent(var("u")))
        );
    }

    #[test]
    fn strict_extension_keeps_cardinality() {
        let team = team_uvw();
        let extended = team.strict_extension(&var("x"), |s| s.get(&var("u")).unwrap()).unwrap();
        assert_eq!(extended.len(), team.len());
        // Each row got its own u value at the new column.
        for row in extended.rows() {
            assert_eq!(row[3], row[0]);
        }
    }

    #[test]
    fn lax_extension_rejects_empty_choices() {
        let team = team_uvw();
        let err = team.lax_extension(&var("x"), |_| BTreeSet::new());
        assert_eq!(err, Err(ModelError::EmptyLaxChoice));
        let both = team
            .lax_extension(&var("x"), |_| [0, 1].into_iter().collect())
            .unwrap();
        assert_eq!(both.len(), 6);
    }

    #[test]
    fn restrict_select_project() {
        let team = team_uvw();
        let restricted = team.restrict(&[var("u")]).unwrap();
        assert_eq!(restricted.len(), 3);
        assert_eq!(
            team.restrict(&[var("q")]),
            Err(ModelError::UnknownVariable(var("q")))
        );

        let selected = team.select(&[var("w")], &[1]).unwrap();
        assert_eq!(selected.len(), 1);
        assert_eq!(selected.rows().next().unwrap(), &[1, 0, 1]);

        assert_eq!(
            team.project(&[var("u")]).unwrap(),
            [vec![0], vec![1], vec![2]].into_iter().collect()
        );
        assert_eq!(
            team.project(&[var("v")]).unwrap(),
            [vec![0], vec![1]].into_iter().collect()
        );
        // Projections may repeat variables.
        assert!(team.project(&[var("v"), var("v")]).unwrap().contains(&vec![1, 1]));
    }

    #[test]
    fn projection_restriction_identity() {
        let team = team_uvw();
        let vs = [var("u"), var("v")];
        assert_eq!(
            team.restrict(&vs).unwrap().project(&vs).unwrap(),
            team.project(&vs).unwrap()
        );
    }

    #[test]
    fn select_partitions_the_team() {
        let team = team_uvw();
        let total: usize = (0..3)
            .map(|e| team.select(&[var("v")], &[e]).unwrap().len())
            .sum();
        assert_eq!(total, team.len());
    }

    #[test]
    fn enumerate_structures_counts() {
        let unary = Vocabulary::new().with_relation("P", 1).unwrap();
        assert_eq!(enumerate_structures(&unary, 2).count(), 4);

        let empty = Vocabulary::new();
        assert_eq!(enumerate_structures(&empty, 3).count(), 2);

        let binary = Vocabulary::new().with_relation("E", 2).unwrap();
        assert_eq!(enumerate_structures(&binary, 2).count(), 16);

        // Sizes come out ascending.
        let sizes: Vec<usize> = enumerate_structures(&empty, 3).map(|m| m.domain_size()).collect();
        assert_eq!(sizes, vec![2, 3]);
    }

    #[test]
    fn enumerate_teams_counts() {
        let teams = enumerate_teams(2, &[var("x"), var("y")], None).unwrap();
        assert_eq!(teams.len(), 16);
        assert!(teams[0].is_empty());

        let no_vars = enumerate_teams(2, &[], None).unwrap();
        assert_eq!(no_vars.len(), 2);
        assert_eq!(no_vars[1], Team::initial());

        let three = enumerate_teams(2, &[var("x"), var("y"), var("z")], None).unwrap();
        assert_eq!(three.len(), 256);

        let capped = enumerate_teams(2, &[var("x"), var("y")], Some(1)).unwrap();
        assert_eq!(capped.len(), 5);
    }

    #[test]
    fn structure_text_round_trip() {
        let text = "\n# a structure\ndomain = 3\nconstant c = 1\nrelation P/1 = {0, 2}\nrelation E/2 = {(0,1), (1,2)}\nrelation Z/1 = {}\n";
        let structure = parse_structure(text).unwrap();
        assert_eq!(structure.domain_size(), 3);
        assert_eq!(structure.constant("c"), Some(1));
        assert!(structure.relation("P").unwrap().contains(&[2]));
        assert!(structure.relation("E").unwrap().contains(&[1, 2]));
        assert!(structure.relation("Z").unwrap().tuples().is_empty());
        let reparsed = parse_structure(&structure.to_string()).unwrap();
        assert_eq!(structure, reparsed);
    }

    #[test]
    fn structure_text_rejects_garbage() {
        assert!(parse_structure("domain = 0").is_err());
        assert!(parse_structure("relation P/1 = {0}").is_err());
        assert!(parse_structure("domain = 2\nrelation P/2 = {0}").is_err());
        assert!(parse_structure("domain = 2\nrelation P/1 = 0").is_err());
        assert!(parse_structure("domain = 2\nnonsense").is_err());
        assert!(parse_structure("").is_err());
    }

    #[test]
    fn team_text_round_trip() {
        let text = "# the running example\nvars u v w\nrow 0 1 2\nrow 1 0 1\nrow 2 1 0\nrow 1 0 1\n";
        let team = parse_team(text).unwrap();
        assert_eq!(team, team_uvw());
        let reparsed = parse_team(&team.to_string()).unwrap();
        assert_eq!(team, reparsed);
    }

    #[test]
    fn team_text_edge_cases() {
        let initial = parse_team("vars\nrow\n").unwrap();
        assert_eq!(initial, Team::initial());
        let empty = parse_team("vars x y\n").unwrap();
        assert!(empty.is_empty());
        assert!(parse_team("row 0\nvars x").is_err());
        assert!(parse_team("vars x\nrow 0 1").is_err());
        assert!(parse_team("vars x x\nrow 0 0").is_err());
        assert!(parse_team("").is_err());
    }

    #[test]
    fn all_rows_is_lexicographic() {
        let rows = all_rows(2, 2).unwrap();
        assert_eq!(rows, vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
        assert_eq!(all_rows(3, 0).unwrap(), vec![Vec::<Element>::new()]);
    }
}
