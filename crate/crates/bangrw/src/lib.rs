//! Diagram rewriting for traced symmetric monoidal theories.
//!
//! This crate represents morphisms of a traced symmetric monoidal category
//! as *string graphs*: directed graphs with two sorts of vertices, where
//! *node-vertices* stand for the generators of a theory and *wire-vertices*
//! stand for points along the wires connecting them.  Wires may be
//! subdivided freely, so equality of diagrams is equality of graphs up to
//! *wire homeomorphism* — a bijective correspondence of node-vertices,
//! boundary points, and whole wires.
//!
//! On top of plain string graphs sit *pattern graphs*: string graphs
//! decorated with `!`-vertices ("bang boxes") marking subgraphs that may be
//! replicated any number of times.  A single pattern graph thereby stands
//! for an infinite family of concrete diagrams, obtained by repeatedly
//! copying or discarding the boxed material.  Equations between pattern
//! graphs support a sound equational logic, including an induction
//! principle for reasoning about a box's contents "one copy at a time".
//!
//! The main pieces:
//!
//! - [`signature`]: monoidal signatures with fixed- and variable-arity
//!   generator ports, and the derived typing graphs used to classify
//!   vertices and edges.
//! - [`graph`]: typed directed graphs, morphisms between them, and the
//!   pushout constructions behind double-pushout rewriting.
//! - [`stringgraph`]: string graph validation, wire decomposition, wire
//!   homeomorphism, and the normal forms used by the matcher.
//! - [`banggraph`]: pattern graphs, the box operations (copy, drop, kill,
//!   expand, fix, merge, box), and expansion normal forms.
//! - [`rewrite`]: equations between pattern graphs and double-pushout
//!   rewriting at a matching.
//! - [`matching`]: enumeration of matchings of a pattern graph onto a
//!   concrete string graph, with certificates naming the instantiation
//!   used.
//! - [`logic`]: a proof checker for the equational logic, including the
//!   induction rule.
//! - [`semantics`]: numerical evaluation of concrete diagrams as complex
//!   matrices, for soundness checks against a model.
//! - [`corpus`]: built-in example theories (the ZX-calculus and
//!   commutative Frobenius algebras) used by the test suite and the
//!   command-line tool.

pub mod error;
pub mod signature;
pub mod graph;
pub mod canon;
pub mod stringgraph;
pub mod banggraph;
pub mod rewrite;
pub mod matching;
pub mod semantics;
pub mod logic;
pub mod corpus;
pub mod cli;

pub use error::{Error, Result};
