/*! Workbench for logics of dependence, independence and inclusion under
team semantics.

A *team* is a finite set of assignments sharing a variable domain, and a
formula is evaluated against a whole team rather than a single assignment.
The crate provides:

- [`syntax`]: formulas in negation normal form with dependence,
  independence and inclusion atoms, a text grammar, and fragment
  classification;
- [`model`]: finite structures, teams, and exhaustive enumeration of both;
- [`semantics`]: strict and lax team evaluation by exhaustive witness
  search, with resource limits and replayable traces;
- [`transform`]: variable renaming, relativization, independence-atom
  contraction, and a prenex normal form compiler;
- [`eso`]: existential second-order sentences with function quantifiers,
  translations to and from team logics, and Skolem normal form
  diagnostics;
- [`oracle`]: equivalence checking over enumerated structures and teams,
  seeded corpus generation, and a registry of semantic property checks.
*/

pub mod eso;
pub mod model;
pub mod oracle;
pub mod semantics;
pub mod syntax;
pub mod transform;
