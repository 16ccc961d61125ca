//! Direct witness-table search for strict `A..A E..E` sentences.
//!
//! For a sentence `A x1..xk. E y1..ym. (atoms & first-order)` under
//! strict semantics, the team reached by the quantifier prefix has
//! exactly one row per universal valuation, with the existential columns
//! filled by choice. Instead of enumerating choice functions level by
//! level, the search assigns existential values row by row, pruning with
//! the first-order conjuncts as soon as their columns are filled and
//! with dependence atoms against the rows already committed. Inclusion
//! and independence atoms are checked on the completed table.

use std::collections::hash_map::Entry;
use std::collections::HashMap;

use crate::model::{all_rows, Element, ModelError, Relation, Structure, Team};
use crate::syntax::{Formula, Literal, TeamAtom, Var};

use super::{dep_holds, inc_holds, ind_holds, EvalError, EvalLimits};

/// A strict sentence in the shape the table search can decide: a
/// universal prefix, an existential prefix, and a quantifier-free matrix
/// that is a conjunction of team atoms and first-order parts.
#[derive(Debug, Clone)]
pub struct TableSentence {
    universals: Vec<Var>,
    existentials: Vec<Var>,
    atoms: Vec<TeamAtom>,
    clauses: Vec<Formula>,
}

/// A satisfying assignment of the existential columns: one row per
/// universal valuation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WitnessTable {
    universals: Vec<Var>,
    existentials: Vec<Var>,
    rows: Vec<Vec<Element>>,
}

impl WitnessTable {
    pub fn universals(&self) -> &[Var] {
        &self.universals
    }

    pub fn existentials(&self) -> &[Var] {
        &self.existentials
    }

    /// Rows as universal values followed by existential values, ordered
    /// lexicographically by the universal part.
    pub fn rows(&self) -> &[Vec<Element>] {
        &self.rows
    }

    /// The table as a team over all prefix variables.
    pub fn team(&self) -> Team {
        let vars: Vec<Var> =
            self.universals.iter().chain(&self.existentials).cloned().collect();
        Team::from_rows(&vars, self.rows.iter().cloned())
            .expect("table rows are aligned with the prefix variables")
    }
}

impl TableSentence {
    /// Recognizes a sentence of the searchable shape. Returns `None`
    /// when the sentence does not fit (the general evaluator applies).
    pub fn of(sentence: &Formula) -> Option<TableSentence> {
        if !crate::syntax::free_variables(sentence).is_empty() {
            return None;
        }
        let mut universals = Vec::new();
        let mut rest = sentence;
        while let Formula::Forall(v, body) = rest {
            universals.push(v.clone());
            rest = body;
        }
        let mut existentials = Vec::new();
        while let Formula::Exists(v, body) = rest {
            existentials.push(v.clone());
            rest = body;
        }
        let mut bound: Vec<&Var> = universals.iter().chain(&existentials).collect();
        bound.sort();
        if bound.windows(2).any(|w| w[0] == w[1]) {
            return None;
        }
        let mut atoms = Vec::new();
        let mut clauses = Vec::new();
        if !split_matrix(rest, &mut atoms, &mut clauses) {
            return None;
        }
        Some(TableSentence { universals, existentials, atoms, clauses })
    }

    pub fn universals(&self) -> &[Var] {
        &self.universals
    }

    pub fn existentials(&self) -> &[Var] {
        &self.existentials
    }

    /// Searches for a witness table. `Ok(None)` means the sentence is
    /// false in the structure under strict semantics.
    pub fn search(
        &self,
        structure: &Structure,
        limits: &EvalLimits,
    ) -> Result<Option<WitnessTable>, EvalError> {
        let k = self.universals.len();
        let m = self.existentials.len();
        let rows = all_rows(structure.domain_size(), k).map_err(|e| match e {
            ModelError::CombinatorialLimit(what) => EvalError::SearchSpace(what),
            other => EvalError::SearchSpace(other.to_string()),
        })?;
        if let Some(limit) = limits.max_team_rows {
            if rows.len() > limit {
                return Err(EvalError::TeamRowsLimit(limit));
            }
        }

        let mut columns: HashMap<&Var, usize> = HashMap::new();
        for (i, v) in self.universals.iter().chain(&self.existentials).enumerate() {
            columns.insert(v, i);
        }

        // First-order conjuncts, grouped by how many existential columns
        // they need. Depth-0 clauses depend on universal columns only.
        let mut clauses_by_depth: Vec<Vec<CompiledClause>> = (0..=m).map(|_| Vec::new()).collect();
        for clause in &self.clauses {
            let compiled = compile_clause(clause, structure, &columns)?;
            let depth = clause_depth(&compiled, k);
            clauses_by_depth[depth].push(compiled);
        }

        let mut dep_atoms: Vec<DepColumns> = Vec::new();
        let mut end_atoms: Vec<EndAtom> = Vec::new();
        for atom in &self.atoms {
            let cols = |vars: &[Var]| -> Vec<usize> {
                vars.iter()
                    .map(|v| *columns.get(v).expect("atom variables are prefix-bound"))
                    .collect()
            };
            match atom {
                TeamAtom::Dep(dep) => {
                    let condition = cols(&dep.condition);
                    let value = cols(std::slice::from_ref(&dep.value))[0];
                    let max = condition.iter().chain([&value]).copied().max().unwrap_or(0);
                    let depth = if max < k { 0 } else { max - k + 1 };
                    dep_atoms.push(DepColumns { condition, value, depth });
                }
                TeamAtom::Ind(ind) => end_atoms.push(EndAtom::Ind {
                    condition: cols(&ind.condition),
                    left: cols(&ind.left),
                    right: cols(&ind.right),
                }),
                TeamAtom::Inc(inc) => end_atoms.push(EndAtom::Inc {
                    left: cols(&inc.left),
                    right: cols(&inc.right),
                }),
            }
        }

        // A universal-only conjunct failing on any row refutes the
        // sentence outright: every row is in the team.
        for row in &rows {
            for clause in &clauses_by_depth[0] {
                if !eval_clause(clause, row) {
                    return Ok(None);
                }
            }
        }

        let mut search = Search {
            domain_size: structure.domain_size(),
            k,
            m,
            universal_rows: &rows,
            clauses_by_depth: &clauses_by_depth,
            dep_atoms: &dep_atoms,
            end_atoms: &end_atoms,
            maps: vec![HashMap::new(); dep_atoms.len()],
            table: Vec::with_capacity(rows.len()),
            current: vec![0; k + m],
            candidates: 0,
            max_candidates: limits.max_witness_functions,
        };
        if search.visit_row(0)? {
            Ok(Some(WitnessTable {
                universals: self.universals.clone(),
                existentials: self.existentials.clone(),
                rows: search.table,
            }))
        } else {
            Ok(None)
        }
    }
}

fn split_matrix<'a>(
    formula: &'a Formula,
    atoms: &mut Vec<TeamAtom>,
    clauses: &mut Vec<Formula>,
) -> bool {
    match formula {
        Formula::Conj(left, right) => {
            split_matrix(left, atoms, clauses) && split_matrix(right, atoms, clauses)
        }
        Formula::Atom(atom) => {
            atoms.push(atom.clone());
            true
        }
        other if crate::syntax::is_quantifier_free(other) && crate::syntax::is_first_order(other) => {
            clauses.push(other.clone());
            true
        }
        _ => false,
    }
}

enum CompiledClause<'a> {
    Pred { positive: bool, relation: &'a Relation, cols: Vec<usize> },
    Eq { positive: bool, left: usize, right: usize },
    And(Box<CompiledClause<'a>>, Box<CompiledClause<'a>>),
    Or(Box<CompiledClause<'a>>, Box<CompiledClause<'a>>),
}

struct DepColumns {
    condition: Vec<usize>,
    value: usize,
    depth: usize,
}

enum EndAtom {
    Ind { condition: Vec<usize>, left: Vec<usize>, right: Vec<usize> },
    Inc { left: Vec<usize>, right: Vec<usize> },
}

fn compile_clause<'a>(
    formula: &Formula,
    structure: &'a Structure,
    columns: &HashMap<&Var, usize>,
) -> Result<CompiledClause<'a>, EvalError> {
    let col = |v: &Var| *columns.get(v).expect("clause variables are prefix-bound");
    match formula {
        Formula::Literal(Literal::Pred { positive, name, args }) => {
            let relation = structure
                .relation(name)
                .ok_or_else(|| EvalError::UnknownPredicate(name.clone()))?;
            if relation.arity() != args.len() {
                return Err(EvalError::PredicateArity {
                    name: name.clone(),
                    expected: relation.arity(),
                    found: args.len(),
                });
            }
            Ok(CompiledClause::Pred {
                positive: *positive,
                relation,
                cols: args.iter().map(col).collect(),
            })
        }
        Formula::Literal(Literal::Eq { positive, left, right }) => Ok(CompiledClause::Eq {
            positive: *positive,
            left: col(left),
            right: col(right),
        }),
        Formula::Conj(left, right) => Ok(CompiledClause::And(
            Box::new(compile_clause(left, structure, columns)?),
            Box::new(compile_clause(right, structure, columns)?),
        )),
        Formula::Disj(left, right) => Ok(CompiledClause::Or(
            Box::new(compile_clause(left, structure, columns)?),
            Box::new(compile_clause(right, structure, columns)?),
        )),
        _ => unreachable!("table clauses are quantifier-free and atom-free"),
    }
}

fn eval_clause(clause: &CompiledClause, values: &[Element]) -> bool {
    match clause {
        CompiledClause::Pred { positive, relation, cols } => {
            let tuple: Vec<Element> = cols.iter().map(|&c| values[c]).collect();
            relation.contains(&tuple) == *positive
        }
        CompiledClause::Eq { positive, left, right } => {
            (values[*left] == values[*right]) == *positive
        }
        CompiledClause::And(left, right) => {
            eval_clause(left, values) && eval_clause(right, values)
        }
        CompiledClause::Or(left, right) => {
            eval_clause(left, values) || eval_clause(right, values)
        }
    }
}

/// The number of existential columns a clause needs before it can be
/// evaluated.
fn clause_depth(clause: &CompiledClause, k: usize) -> usize {
    fn max_col(clause: &CompiledClause) -> Option<usize> {
        match clause {
            CompiledClause::Pred { cols, .. } => cols.iter().copied().max(),
            CompiledClause::Eq { left, right, .. } => Some(*left.max(right)),
            CompiledClause::And(l, r) | CompiledClause::Or(l, r) => {
                max_col(l).max(max_col(r))
            }
        }
    }
    match max_col(clause) {
        Some(c) if c >= k => c - k + 1,
        _ => 0,
    }
}

struct Search<'a> {
    domain_size: usize,
    k: usize,
    m: usize,
    universal_rows: &'a [Vec<Element>],
    clauses_by_depth: &'a [Vec<CompiledClause<'a>>],
    dep_atoms: &'a [DepColumns],
    end_atoms: &'a [EndAtom],
    /// Per dependence atom: condition tuple to forced value, over the
    /// committed rows.
    maps: Vec<HashMap<Vec<Element>, Element>>,
    table: Vec<Vec<Element>>,
    current: Vec<Element>,
    candidates: u64,
    max_candidates: Option<u64>,
}

impl Search<'_> {
    fn visit_row(&mut self, r: usize) -> Result<bool, EvalError> {
        if r == self.universal_rows.len() {
            return Ok(self.end_check());
        }
        self.current[..self.k].copy_from_slice(&self.universal_rows[r]);
        if !self.deps_consistent(0) {
            return Ok(false);
        }
        self.assign_column(r, 0)
    }

    fn assign_column(&mut self, r: usize, depth: usize) -> Result<bool, EvalError> {
        if depth == self.m {
            return self.commit_row(r);
        }
        for e in 0..self.domain_size {
            self.tick()?;
            self.current[self.k + depth] = e;
            if self.clauses_hold(depth + 1) && self.deps_consistent(depth + 1) {
                if self.assign_column(r, depth + 1)? {
                    return Ok(true);
                }
            }
        }
        Ok(false)
    }

    fn commit_row(&mut self, r: usize) -> Result<bool, EvalError> {
        let mut inserted: Vec<(usize, Vec<Element>)> = Vec::new();
        for (i, dep) in self.dep_atoms.iter().enumerate() {
            let key: Vec<Element> =
                dep.condition.iter().map(|&c| self.current[c]).collect();
            match self.maps[i].entry(key) {
                Entry::Occupied(entry) => {
                    debug_assert_eq!(*entry.get(), self.current[dep.value]);
                }
                Entry::Vacant(entry) => {
                    inserted.push((i, entry.key().clone()));
                    entry.insert(self.current[dep.value]);
                }
            }
        }
        self.table.push(self.current.clone());
        if self.visit_row(r + 1)? {
            return Ok(true);
        }
        // The deeper rows clobbered the shared value buffer; restore this
        // row's values so the caller's loop can continue from them.
        let row = self.table.pop().expect("this row was just pushed");
        self.current.copy_from_slice(&row);
        for (i, key) in inserted {
            self.maps[i].remove(&key);
        }
        Ok(false)
    }

    fn clauses_hold(&self, depth: usize) -> bool {
        self.clauses_by_depth[depth]
            .iter()
            .all(|clause| eval_clause(clause, &self.current))
    }

    fn deps_consistent(&self, depth: usize) -> bool {
        self.dep_atoms.iter().enumerate().all(|(i, dep)| {
            if dep.depth != depth {
                return true;
            }
            let key: Vec<Element> =
                dep.condition.iter().map(|&c| self.current[c]).collect();
            match self.maps[i].get(&key) {
                Some(&forced) => forced == self.current[dep.value],
                None => true,
            }
        })
    }

    fn end_check(&self) -> bool {
        let rows: Vec<&[Element]> = self.table.iter().map(|r| r.as_slice()).collect();
        self.end_atoms.iter().all(|atom| match atom {
            EndAtom::Ind { condition, left, right } => {
                ind_holds(&rows, condition, left, right)
            }
            EndAtom::Inc { left, right } => inc_holds(&rows, left, right),
        }) && self
            .dep_atoms
            .iter()
            .all(|dep| dep_holds(&rows, &dep.condition, dep.value))
    }

    fn tick(&mut self) -> Result<(), EvalError> {
        self.candidates += 1;
        match self.max_candidates {
            Some(limit) if self.candidates > limit => Err(EvalError::WitnessLimit(limit)),
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantics::{evaluate, evaluate_atom, SemanticsMode};
    use crate::syntax::{conj, conj_all, dep, disj, eq, exists, forall, inc, ind, neq, pred};
    use proptest::prelude::*;

    fn sentence(universals: &[&str], existentials: &[&str], matrix: Formula) -> Formula {
        let mut formula = matrix;
        for v in existentials.iter().rev() {
            formula = exists(v, formula);
        }
        for v in universals.iter().rev() {
            formula = forall(v, formula);
        }
        formula
    }

    #[test]
    fn recognizes_only_the_searchable_shape() {
        let good = sentence(&["x"], &["y"], conj(dep(&["x"], "y"), pred("P", &["y"])));
        assert!(TableSentence::of(&good).is_some());

        // Atom under a disjunction: not a conjunction of atoms and
        // first-order parts.
        let bad = sentence(&["x"], &["y"], disj(dep(&["x"], "y"), pred("P", &["y"])));
        assert!(TableSentence::of(&bad).is_none());

        // Open formulas and inner quantifiers do not fit.
        assert!(TableSentence::of(&pred("P", &["x"])).is_none());
        let inner = forall("x", exists("y", forall("z", eq("z", "z"))));
        assert!(TableSentence::of(&inner).is_none());

        // Re-quantified variables do not fit.
        let shadowed = forall("x", exists("x", eq("x", "x")));
        assert!(TableSentence::of(&shadowed).is_none());
    }

    #[test]
    fn finds_witnesses_for_total_relations_only() {
        let formula = sentence(&["x"], &["y"], pred("E", &["x", "y"]));
        let table_sentence = TableSentence::of(&formula).unwrap();
        let limits = EvalLimits::unlimited();

        let total =
            Structure::new(2).unwrap().with_relation("E", 2, [[0, 0], [1, 0]]).unwrap();
        let table = table_sentence.search(&total, &limits).unwrap().unwrap();
        assert_eq!(table.rows(), &[vec![0, 0], vec![1, 0]]);
        assert_eq!(table.team().len(), 2);

        let partial = Structure::new(2).unwrap().with_relation("E", 2, [[0, 0]]).unwrap();
        assert!(table_sentence.search(&partial, &limits).unwrap().is_none());
    }

    #[test]
    fn constant_dependence_forces_a_single_column_value() {
        let formula = sentence(&["x"], &["y"], conj(dep(&[], "y"), pred("P", &["y"])));
        let table_sentence = TableSentence::of(&formula).unwrap();
        let structure = Structure::new(3).unwrap().with_relation("P", 1, [[1]]).unwrap();
        let table =
            table_sentence.search(&structure, &EvalLimits::unlimited()).unwrap().unwrap();
        assert!(table.rows().iter().all(|row| row[1] == 1));
    }

    #[test]
    fn limit_stops_a_large_search() {
        let formula = sentence(
            &["x1", "x2"],
            &["y1", "y2"],
            conj(inc(&["y1"], &["y2"]), pred("P", &["y1"])),
        );
        let table_sentence = TableSentence::of(&formula).unwrap();
        let structure = Structure::new(3).unwrap().with_relation("P", 1, [[1]]).unwrap();
        let tight = EvalLimits { max_witness_functions: Some(5), ..EvalLimits::unlimited() };
        assert_eq!(table_sentence.search(&structure, &tight), Err(EvalError::WitnessLimit(5)));
    }

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

    /// A searchable sentence with at most one universal and up to two
    /// existentials, its matrix drawn from literals and team atoms over
    /// the bound variables.
    fn table_shaped_sentence() -> impl Strategy<Value = Formula> {
        (0usize..=1, 1usize..=2).prop_flat_map(|(k, m)| {
            let names: Vec<&'static str> = match (k, m) {
                (0, 1) => vec!["y0"],
                (0, 2) => vec!["y0", "y1"],
                (1, 1) => vec!["x0", "y0"],
                (1, 2) => vec!["x0", "y0", "y1"],
                _ => unreachable!(),
            };
            let pick = {
                let names = names.clone();
                (0..names.len()).prop_map(move |i| names[i])
            };
            let item = prop_oneof![
                pick.clone().prop_map(|v| pred("P", &[v])),
                (pick.clone(), pick.clone()).prop_map(|(l, r)| pred("E", &[l, r])),
                (pick.clone(), pick.clone()).prop_map(|(l, r)| eq(l, r)),
                (pick.clone(), pick.clone()).prop_map(|(l, r)| disj(eq(l, r), neq(l, r))),
                (proptest::collection::vec(pick.clone(), 0..2), pick.clone())
                    .prop_map(|(cond, v)| dep(&cond, v)),
                (pick.clone(), pick.clone()).prop_map(|(l, r)| inc(&[l], &[r])),
                (pick.clone(), pick.clone(), pick.clone())
                    .prop_map(|(c, l, r)| ind(&[c], &[l], &[r])),
            ];
            proptest::collection::vec(item, 1..=3).prop_map(move |items| {
                let (universals, existentials): (&[&str], &[&str]) = match (k, m) {
                    (0, _) => (&[], &names[..]),
                    (1, _) => (&names[..1], &names[1..]),
                    _ => unreachable!(),
                };
                sentence(universals, existentials, conj_all(items))
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn search_agrees_with_the_general_evaluator(
            structure in small_structure(),
            formula in table_shaped_sentence(),
        ) {
            let table_sentence =
                TableSentence::of(&formula).expect("generated sentences fit the shape");
            let limits = EvalLimits::unlimited();
            let found = table_sentence.search(&structure, &limits).unwrap();
            let verdict = evaluate(
                &structure,
                &Team::initial(),
                &formula,
                SemanticsMode::Strict,
                &limits,
            )
            .unwrap();
            prop_assert_eq!(found.is_some(), verdict);
            if let Some(table) = found {
                // The table is a genuine team witness: every atom of the
                // matrix holds on it.
                let team = table.team();
                for atom in &table_sentence.atoms {
                    prop_assert!(evaluate_atom(&structure, &team, atom).unwrap());
                }
            }
        }
    }
}

