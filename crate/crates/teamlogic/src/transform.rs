/*! Formula-to-formula rewrites: variable renaming, atom relativization,
independence contraction, the dependence-to-independence translation,
and a compiler from sentences to prenex normal form.

The prenex compiler turns any sentence into the shape
`A x1...xm. E y1...yn. (chi & theta)` where `chi` is a conjunction of
team atoms whose non-conditional variables are all existentially
quantified and `theta` is quantifier-free and first-order. The result
is equivalent to the input under strict semantics on every structure
with at least two elements; the disjunction encoding pins two marker
variables to distinct constant values and so needs a domain of size two
or more. The number of universal quantifiers never increases, so the
compiler stays within the same universal-count fragment. */

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::syntax::{
    all_variables, conj, conj_all, disj, eq, exists, forall, free_variables, is_first_order,
    is_quantifier_free, neq, nonconditional_variables, DepAtom, Formula, FreshPool, IncAtom,
    IndAtom, Literal, TeamAtom, Var,
};

/// Errors from the rewrites in this module.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum TransformError {
    /// The operation needs a sentence but the formula has a free
    /// variable.
    #[error("formula is not a sentence: variable `{0}` occurs free")]
    FreeVariable(Var),
    /// The renaming target already occurs in the formula, so replacing
    /// the source would identify two distinct variables.
    #[error("variable `{0}` already occurs in the formula")]
    VariableOccurs(Var),
}

/// A sentence in prenex normal form: a universal prefix, an existential
/// prefix, and a matrix split into a conjunction `chi` of team atoms
/// and a quantifier-free first-order part `theta`.
///
/// Invariants: each prefix variable is quantified exactly once, every
/// non-conditional variable of every atom in `chi` is in the
/// existential prefix, and `theta` contains no team atoms. Either part
/// of the matrix may be absent, but not both.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrenexSentence {
    universals: Vec<Var>,
    existentials: Vec<Var>,
    chi: Vec<TeamAtom>,
    theta: Option<Formula>,
}

impl PrenexSentence {
    pub fn universals(&self) -> &[Var] {
        &self.universals
    }

    pub fn existentials(&self) -> &[Var] {
        &self.existentials
    }

    /// The team atoms of the matrix, in prefix order of introduction.
    pub fn chi(&self) -> &[TeamAtom] {
        &self.chi
    }

    /// The first-order part of the matrix, if any.
    pub fn theta(&self) -> Option<&Formula> {
        self.theta.as_ref()
    }

    /// The sentence as a plain formula: quantifier prefixes wrapped
    /// around `chi & theta`.
    pub fn to_formula(&self) -> Formula {
        let chi: Vec<Formula> = self.chi.iter().map(|a| Formula::Atom(a.clone())).collect();
        let matrix = match (chi.is_empty(), &self.theta) {
            (false, Some(theta)) => conj(conj_all(chi), theta.clone()),
            (false, None) => conj_all(chi),
            (true, Some(theta)) => theta.clone(),
            (true, None) => unreachable!("a prenex sentence has a nonempty matrix"),
        };
        let mut out = matrix;
        for v in self.existentials.iter().rev() {
            out = exists(v.as_str(), out);
        }
        for v in self.universals.iter().rev() {
            out = forall(v.as_str(), out);
        }
        out
    }

    /// Checks every structural invariant, returning a description of
    /// the first violation.
    pub fn validate(&self) -> Result<(), String> {
        let mut seen: BTreeSet<&Var> = BTreeSet::new();
        for v in self.universals.iter().chain(&self.existentials) {
            if !seen.insert(v) {
                return Err(format!("variable `{v}` is quantified twice"));
            }
        }
        if let Some(theta) = &self.theta {
            if !is_first_order(theta) {
                return Err("theta contains a team atom".to_string());
            }
            if !is_quantifier_free(theta) {
                return Err("theta contains a quantifier".to_string());
            }
        }
        let existentials: BTreeSet<&Var> = self.existentials.iter().collect();
        for atom in &self.chi {
            let formula = Formula::Atom(atom.clone());
            let nc = nonconditional_variables(&formula).expect("chi holds atoms");
            for v in &nc {
                if !existentials.contains(v) {
                    return Err(format!(
                        "non-conditional variable `{v}` of `{atom}` is not existentially quantified"
                    ));
                }
            }
        }
        if let Some(v) = free_variables(&self.to_formula()).into_iter().next() {
            return Err(format!("variable `{v}` occurs free"));
        }
        Ok(())
    }
}

impl std::fmt::Display for PrenexSentence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.to_formula().fmt(f)
    }
}

/// Replaces every occurrence of `from` by `to`, binders included. Errors
/// if `to` already occurs anywhere in the formula, since the renamed
/// formula would then conflate two variables.
pub fn rename_variable(phi: &Formula, from: &str, to: &str) -> Result<Formula, TransformError> {
    let target = Var::new(to);
    if all_variables(phi).contains(&target) {
        return Err(TransformError::VariableOccurs(target));
    }
    let mut map = BTreeMap::new();
    map.insert(Var::new(from), target);
    Ok(substitute(phi, &map))
}

/// Prefixes every team atom by the guard variables `guards`: the
/// condition of a dependence or independence atom and both sides of an
/// inclusion atom are extended by the guards, so the atom holds exactly
/// when the original holds separately on each selection of the team by
/// a guard value. First-order parts are untouched.
pub fn relativize(guards: &[&str], phi: &Formula) -> Formula {
    let guards: Vec<Var> = guards.iter().map(|g| Var::new(*g)).collect();
    map_atoms(phi, &|atom| relativize_atom(&guards, atom))
}

/// Splits every independence atom with a side of two or more variables
/// into a conjunction of atoms with single-variable sides: the last
/// variable of the wide side moves into the condition of one conjunct
/// and becomes the whole side of the other. The rewrite preserves the
/// verdict on every team in both semantics.
pub fn contract_independence(phi: &Formula) -> Formula {
    match phi {
        Formula::Atom(TeamAtom::Ind(atom)) => contract_atom(atom),
        Formula::Literal(_) | Formula::Atom(_) => phi.clone(),
        Formula::Conj(l, r) => conj(contract_independence(l), contract_independence(r)),
        Formula::Disj(l, r) => disj(contract_independence(l), contract_independence(r)),
        Formula::Exists(v, b) => exists(v.as_str(), contract_independence(b)),
        Formula::Forall(v, b) => forall(v.as_str(), contract_independence(b)),
    }
}

/// Replaces every dependence atom `dep(u; v)` by the equivalent
/// independence atom `ind(u; v; v)`: a variable independent of itself
/// given the condition is determined by the condition.
pub fn dep_to_independence(phi: &Formula) -> Formula {
    map_atoms(phi, &|atom| match atom {
        TeamAtom::Dep(a) => TeamAtom::Ind(IndAtom {
            condition: a.condition.clone(),
            left: vec![a.value.clone()],
            right: vec![a.value.clone()],
        }),
        other => other.clone(),
    })
}

/// Compiles a sentence into prenex normal form.
///
/// Shadowed quantifiers are renamed apart first, so any sentence is
/// accepted. The output is equivalent to the input under strict
/// semantics on structures with at least two elements, uses at most as
/// many universal quantifiers, and satisfies every [`PrenexSentence`]
/// invariant.
pub fn to_prenex_normal_form(phi: &Formula) -> Result<PrenexSentence, TransformError> {
    if let Some(v) = free_variables(phi).into_iter().next() {
        return Err(TransformError::FreeVariable(v));
    }
    let mut pool = FreshPool::for_formula(phi);
    let normalized = uniquify_binders(phi, &mut BTreeSet::new(), &mut pool);
    let mut kinds = BTreeMap::new();
    binder_kinds(&normalized, &mut kinds);
    let mut compiler = Compiler { kinds, pool };
    let part = compiler.compile(&normalized, &[], &BTreeSet::new());
    Ok(PrenexSentence {
        universals: part.universals,
        existentials: part.existentials,
        chi: part.chi,
        theta: part.theta,
    })
}

/// Applies `map` to every team atom, leaving the rest of the tree
/// intact.
fn map_atoms(phi: &Formula, map: &dyn Fn(&TeamAtom) -> TeamAtom) -> Formula {
    match phi {
        Formula::Literal(_) => phi.clone(),
        Formula::Atom(atom) => Formula::Atom(map(atom)),
        Formula::Conj(l, r) => conj(map_atoms(l, map), map_atoms(r, map)),
        Formula::Disj(l, r) => disj(map_atoms(l, map), map_atoms(r, map)),
        Formula::Exists(v, b) => exists(v.as_str(), map_atoms(b, map)),
        Formula::Forall(v, b) => forall(v.as_str(), map_atoms(b, map)),
    }
}

fn relativize_atom(guards: &[Var], atom: &TeamAtom) -> TeamAtom {
    let prefixed = |vs: &[Var]| -> Vec<Var> {
        guards.iter().chain(vs).cloned().collect()
    };
    match atom {
        TeamAtom::Dep(a) => TeamAtom::Dep(DepAtom {
            condition: prefixed(&a.condition),
            value: a.value.clone(),
        }),
        TeamAtom::Ind(a) => TeamAtom::Ind(IndAtom {
            condition: prefixed(&a.condition),
            left: a.left.clone(),
            right: a.right.clone(),
        }),
        TeamAtom::Inc(a) => TeamAtom::Inc(IncAtom {
            left: prefixed(&a.left),
            right: prefixed(&a.right),
        }),
    }
}

fn contract_atom(atom: &IndAtom) -> Formula {
    if atom.left.len() >= 2 {
        let (rest, last) = atom.left.split_at(atom.left.len() - 1);
        let mut condition = atom.condition.clone();
        condition.push(last[0].clone());
        let narrowed = IndAtom {
            condition,
            left: rest.to_vec(),
            right: atom.right.clone(),
        };
        let split_off = IndAtom {
            condition: atom.condition.clone(),
            left: last.to_vec(),
            right: atom.right.clone(),
        };
        conj(contract_atom(&narrowed), contract_atom(&split_off))
    } else if atom.right.len() >= 2 {
        let (rest, last) = atom.right.split_at(atom.right.len() - 1);
        let mut condition = atom.condition.clone();
        condition.push(last[0].clone());
        let narrowed = IndAtom {
            condition,
            left: atom.left.clone(),
            right: rest.to_vec(),
        };
        let split_off = IndAtom {
            condition: atom.condition.clone(),
            left: atom.left.clone(),
            right: last.to_vec(),
        };
        conj(contract_atom(&narrowed), contract_atom(&split_off))
    } else {
        Formula::Atom(TeamAtom::Ind(atom.clone()))
    }
}

/// Replaces variables through `map` everywhere, binders included.
/// Callers guarantee the replacement cannot capture: targets are fresh
/// or the formula is quantifier-free in the renamed variables.
fn substitute(phi: &Formula, map: &BTreeMap<Var, Var>) -> Formula {
    let rename = |v: &Var| -> Var { map.get(v).cloned().unwrap_or_else(|| v.clone()) };
    match phi {
        Formula::Literal(Literal::Pred { positive, name, args }) => {
            Formula::Literal(Literal::Pred {
                positive: *positive,
                name: name.clone(),
                args: args.iter().map(rename).collect(),
            })
        }
        Formula::Literal(Literal::Eq { positive, left, right }) => {
            Formula::Literal(Literal::Eq {
                positive: *positive,
                left: rename(left),
                right: rename(right),
            })
        }
        Formula::Atom(atom) => Formula::Atom(substitute_atom(atom, map)),
        Formula::Conj(l, r) => conj(substitute(l, map), substitute(r, map)),
        Formula::Disj(l, r) => disj(substitute(l, map), substitute(r, map)),
        Formula::Exists(v, b) => exists(rename(v).as_str(), substitute(b, map)),
        Formula::Forall(v, b) => forall(rename(v).as_str(), substitute(b, map)),
    }
}

fn substitute_atom(atom: &TeamAtom, map: &BTreeMap<Var, Var>) -> TeamAtom {
    let rename = |vs: &[Var]| -> Vec<Var> {
        vs.iter().map(|v| map.get(v).cloned().unwrap_or_else(|| v.clone())).collect()
    };
    match atom {
        TeamAtom::Dep(a) => TeamAtom::Dep(DepAtom {
            condition: rename(&a.condition),
            value: map.get(&a.value).cloned().unwrap_or_else(|| a.value.clone()),
        }),
        TeamAtom::Ind(a) => TeamAtom::Ind(IndAtom {
            condition: rename(&a.condition),
            left: rename(&a.left),
            right: rename(&a.right),
        }),
        TeamAtom::Inc(a) => TeamAtom::Inc(IncAtom {
            left: rename(&a.left),
            right: rename(&a.right),
        }),
    }
}

/// Replaces free occurrences of `from` by `to`, stopping at any inner
/// binder of `from`. `to` must be fresh for the formula.
fn substitute_free(phi: &Formula, from: &Var, to: &Var) -> Formula {
    match phi {
        Formula::Exists(v, _) | Formula::Forall(v, _) if v == from => phi.clone(),
        Formula::Exists(v, b) => exists(v.as_str(), substitute_free(b, from, to)),
        Formula::Forall(v, b) => forall(v.as_str(), substitute_free(b, from, to)),
        Formula::Conj(l, r) => {
            conj(substitute_free(l, from, to), substitute_free(r, from, to))
        }
        Formula::Disj(l, r) => {
            disj(substitute_free(l, from, to), substitute_free(r, from, to))
        }
        Formula::Literal(_) | Formula::Atom(_) => {
            let mut map = BTreeMap::new();
            map.insert(from.clone(), to.clone());
            substitute(phi, &map)
        }
    }
}

/// Renames re-used binders apart so every variable is quantified
/// exactly once. The first binder of each name keeps it; later ones
/// draw fresh names from the pool.
fn uniquify_binders(phi: &Formula, seen: &mut BTreeSet<Var>, pool: &mut FreshPool) -> Formula {
    match phi {
        Formula::Literal(_) | Formula::Atom(_) => phi.clone(),
        Formula::Conj(l, r) => {
            let l = uniquify_binders(l, seen, pool);
            let r = uniquify_binders(r, seen, pool);
            conj(l, r)
        }
        Formula::Disj(l, r) => {
            let l = uniquify_binders(l, seen, pool);
            let r = uniquify_binders(r, seen, pool);
            disj(l, r)
        }
        Formula::Exists(v, body) | Formula::Forall(v, body) => {
            let (v, body) = if seen.contains(v) {
                let fresh = pool.fresh(v.as_str());
                (fresh.clone(), substitute_free(body, v, &fresh))
            } else {
                (v.clone(), (**body).clone())
            };
            seen.insert(v.clone());
            let body = uniquify_binders(&body, seen, pool);
            match phi {
                Formula::Exists(..) => exists(v.as_str(), body),
                _ => forall(v.as_str(), body),
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinderKind {
    Universal,
    Existential,
}

fn binder_kinds(phi: &Formula, out: &mut BTreeMap<Var, BinderKind>) {
    match phi {
        Formula::Literal(_) | Formula::Atom(_) => {}
        Formula::Conj(l, r) | Formula::Disj(l, r) => {
            binder_kinds(l, out);
            binder_kinds(r, out);
        }
        Formula::Exists(v, b) => {
            out.insert(v.clone(), BinderKind::Existential);
            binder_kinds(b, out);
        }
        Formula::Forall(v, b) => {
            out.insert(v.clone(), BinderKind::Universal);
            binder_kinds(b, out);
        }
    }
}

/// The prenex form of one subformula during compilation.
struct Part {
    universals: Vec<Var>,
    existentials: Vec<Var>,
    chi: Vec<TeamAtom>,
    theta: Option<Formula>,
}

struct Compiler {
    kinds: BTreeMap<Var, BinderKind>,
    pool: FreshPool,
}

impl Compiler {
    /// Compiles `psi` bottom-up. `path` lists the variables quantified
    /// above `psi` in the sentence, outermost first; `crossed` holds
    /// the path variables with a disjunction between their binder and
    /// `psi`.
    fn compile(&mut self, psi: &Formula, path: &[Var], crossed: &BTreeSet<Var>) -> Part {
        match psi {
            Formula::Literal(_) => Part {
                universals: Vec::new(),
                existentials: Vec::new(),
                chi: Vec::new(),
                theta: Some(psi.clone()),
            },
            Formula::Atom(atom) => self.compile_atom(psi, atom, crossed),
            Formula::Forall(x, body) => {
                let mut below = path.to_vec();
                below.push(x.clone());
                let mut part = self.compile(body, &below, crossed);
                part.universals.insert(0, x.clone());
                part
            }
            Formula::Exists(x, body) => {
                let mut below = path.to_vec();
                below.push(x.clone());
                let mut part = self.compile(body, &below, crossed);
                // Hoisting the existential over the universal prefix is
                // only sound if its choice cannot see the universals,
                // which the dependence atom pins down. Without a
                // universal prefix nothing moves and no atom is needed.
                if !part.universals.is_empty() {
                    part.chi.insert(
                        0,
                        TeamAtom::Dep(DepAtom { condition: path.to_vec(), value: x.clone() }),
                    );
                }
                part.existentials.insert(0, x.clone());
                part
            }
            Formula::Conj(l, r) => {
                let left = self.compile(l, path, crossed);
                let right = self.compile(r, path, crossed);
                let shared = longer_prefix(&left, &right);
                let left = align(left, &shared, path);
                let right = align(right, &shared, path);
                let mut chi = left.chi;
                chi.extend(right.chi);
                let mut existentials = left.existentials;
                existentials.extend(right.existentials);
                Part {
                    universals: shared,
                    existentials,
                    chi,
                    theta: merge_theta(left.theta, right.theta),
                }
            }
            Formula::Disj(l, r) => {
                let mut crossed = crossed.clone();
                crossed.extend(path.iter().cloned());
                let left = self.compile(l, path, &crossed);
                let right = self.compile(r, path, &crossed);
                self.compile_disjunction(left, right, path)
            }
        }
    }

    fn compile_atom(&mut self, psi: &Formula, atom: &TeamAtom, crossed: &BTreeSet<Var>) -> Part {
        // A universally quantified non-conditional variable would break
        // the prenex invariant, and one separated from its existential
        // binder by a disjunction would leak into the other disjunct's
        // side of the split; both get an existentially quantified copy
        // pinned to the original by an equality.
        let noncond = nonconditional_variables(psi).expect("node is an atom");
        let to_copy: Vec<Var> = noncond
            .into_iter()
            .filter(|v| {
                self.kinds.get(v) == Some(&BinderKind::Universal) || crossed.contains(v)
            })
            .collect();
        if to_copy.is_empty() {
            return Part {
                universals: Vec::new(),
                existentials: Vec::new(),
                chi: vec![atom.clone()],
                theta: None,
            };
        }
        let map: BTreeMap<Var, Var> =
            to_copy.iter().map(|v| (v.clone(), self.pool.fresh(v.as_str()))).collect();
        let copies: Vec<Var> = to_copy.iter().map(|v| map[v].clone()).collect();
        let equalities: Vec<Formula> =
            to_copy.iter().map(|v| eq(map[v].as_str(), v.as_str())).collect();
        Part {
            universals: Vec::new(),
            existentials: copies,
            chi: vec![substitute_atom(atom, &map)],
            theta: Some(conj_all(equalities)),
        }
    }

    fn compile_disjunction(&mut self, left: Part, right: Part, path: &[Var]) -> Part {
        let shared = longer_prefix(&left, &right);
        let left = align(left, &shared, path);
        let right = align(right, &shared, path);
        let selector = self.pool.fresh("a");
        let left_marker = self.pool.fresh("b");
        let right_marker = self.pool.fresh("c");

        let mut chi = Vec::new();
        if !shared.is_empty() {
            // The three fresh existentials conceptually precede the
            // universal prefix; hoisting them inside it pins each to
            // the variables quantified before the disjunction.
            let mut condition = path.to_vec();
            for v in [&selector, &left_marker, &right_marker] {
                chi.push(TeamAtom::Dep(DepAtom {
                    condition: condition.clone(),
                    value: v.clone(),
                }));
                condition.push(v.clone());
            }
        }
        for marker in [&left_marker, &right_marker] {
            chi.push(TeamAtom::Dep(DepAtom { condition: Vec::new(), value: marker.clone() }));
        }
        let guard = [selector.clone()];
        chi.extend(left.chi.iter().map(|a| relativize_atom(&guard, a)));
        chi.extend(right.chi.iter().map(|a| relativize_atom(&guard, a)));

        // Rows choose a side by steering the selector onto one of the
        // two constant markers; each side's first-order part is guarded
        // by its marker equation.
        let pick_left = eq(selector.as_str(), left_marker.as_str());
        let pick_right = eq(selector.as_str(), right_marker.as_str());
        let left_branch = match left.theta {
            Some(theta) => conj(theta, pick_left),
            None => pick_left,
        };
        let right_branch = match right.theta {
            Some(theta) => conj(theta, pick_right),
            None => pick_right,
        };
        let theta = conj(
            neq(left_marker.as_str(), right_marker.as_str()),
            disj(left_branch, right_branch),
        );

        let mut existentials = vec![selector, left_marker, right_marker];
        existentials.extend(left.existentials);
        existentials.extend(right.existentials);
        Part { universals: shared, existentials, chi, theta: Some(theta) }
    }
}

/// The universal prefix of whichever side has more universals, the left
/// side on ties.
fn longer_prefix(left: &Part, right: &Part) -> Vec<Var> {
    if left.universals.len() >= right.universals.len() {
        left.universals.clone()
    } else {
        right.universals.clone()
    }
}

/// Renames a side's universal prefix onto the shared one and, when that
/// extends the prefix, pins every existential of the side to the
/// variables it could originally see: the path above the connective
/// plus the side's own universals.
fn align(part: Part, shared: &[Var], path: &[Var]) -> Part {
    let own = part.universals.len();
    let map: BTreeMap<Var, Var> =
        part.universals.iter().cloned().zip(shared.iter().cloned()).collect();
    let mut chi: Vec<TeamAtom> =
        part.chi.iter().map(|a| substitute_atom(a, &map)).collect();
    let theta = part.theta.map(|t| substitute(&t, &map));
    if shared.len() > own {
        let mut condition: Vec<Var> = path.to_vec();
        condition.extend_from_slice(&shared[..own]);
        for y in &part.existentials {
            chi.push(TeamAtom::Dep(DepAtom {
                condition: condition.clone(),
                value: y.clone(),
            }));
        }
    }
    Part { universals: Vec::new(), existentials: part.existentials, chi, theta }
}

fn merge_theta(left: Option<Formula>, right: Option<Formula>) -> Option<Formula> {
    match (left, right) {
        (Some(l), Some(r)) => Some(conj(l, r)),
        (Some(l), None) => Some(l),
        (None, Some(r)) => Some(r),
        (None, None) => None,
    }
}
