//! Monoidal signatures with variable-arity ports, and their typing graphs.
//!
//! A signature declares a set of wire types (*objects*) and a set of
//! generators (*morphisms*), each with an ordered list of input and output
//! ports.  A port is either *fixed* — connecting exactly one wire — or
//! *variable* — connecting any number of wires of the given type.  A
//! generator with a variable port stands for the whole family of
//! generators obtained by choosing a concrete count for that port;
//! [`expand_signature`] enumerates that family up to a cutoff.
//!
//! From a signature we derive a small *typegraph* whose vertices are the
//! object and morphism symbols and whose edges describe the legal
//! incidences: a self-loop `mid` on each object (wire segments), and one
//! `in`/`out` edge per port of each morphism.  A graph "typed by" the
//! signature is then exactly a graph morphism into this typegraph; see
//! the `graph` module.  The banged variant of the typegraph adds a `!`
//! vertex with edges to everything, typing the replication markers of
//! pattern graphs.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whether a port connects exactly one wire or any number of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arity {
    Fixed,
    Variable,
}

/// Direction of a port or port edge, from the perspective of the
/// generator: `In` ports make up its domain, `Out` ports its codomain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dir {
    In,
    Out,
}

/// One port of a generator: the wire type it accepts and whether it is
/// fixed or variable.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortSpec {
    pub object: String,
    pub arity: Arity,
}

/// Domain and codomain port lists of a generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MorphismType {
    pub dom: Vec<PortSpec>,
    pub cod: Vec<PortSpec>,
}

/// A monoidal signature: object symbols and generator symbols with their
/// port lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Signature {
    pub objects: BTreeSet<String>,
    pub morphisms: BTreeMap<String, MorphismType>,
}

impl MorphismType {
    /// The ports in the given direction.
    pub fn ports(&self, dir: Dir) -> &[PortSpec] {
        match dir {
            Dir::In => &self.dom,
            Dir::Out => &self.cod,
        }
    }
}

impl Signature {
    /// Look up a generator, erroring with the symbol name if absent.
    pub fn morphism(&self, name: &str) -> Result<&MorphismType> {
        self.morphisms
            .get(name)
            .ok_or_else(|| Error::InvalidSignature(format!("unknown morphism symbol {name}")))
    }

    /// The port of `morphism` addressed by direction and 1-based index.
    pub fn port(&self, morphism: &str, dir: Dir, index: usize) -> Result<&PortSpec> {
        let mt = self.morphism(morphism)?;
        let ports = mt.ports(dir);
        if index == 0 || index > ports.len() {
            return Err(Error::InvalidSignature(format!(
                "morphism {morphism} has no {} port {index}",
                match dir {
                    Dir::In => "in",
                    Dir::Out => "out",
                }
            )));
        }
        Ok(&ports[index - 1])
    }
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Check the structural invariants of a signature, returning one
/// diagnostic string per violation (empty means valid).
pub fn validate_signature(sig: &Signature) -> Vec<String> {
    let mut diags = Vec::new();
    for o in &sig.objects {
        if !valid_name(o) {
            diags.push(format!("object name {o:?} is not a nonempty word over [A-Za-z0-9_]"));
        }
    }
    for (m, mt) in &sig.morphisms {
        if !valid_name(m) {
            diags.push(format!("morphism name {m:?} is not a nonempty word over [A-Za-z0-9_]"));
        }
        if sig.objects.contains(m) {
            diags.push(format!("name {m} is declared as both an object and a morphism"));
        }
        for (dir, ports) in [("in", &mt.dom), ("out", &mt.cod)] {
            for (i, p) in ports.iter().enumerate() {
                if !sig.objects.contains(&p.object) {
                    diags.push(format!(
                        "morphism {m} references undeclared object {} at {dir} port {}",
                        p.object,
                        i + 1
                    ));
                }
            }
        }
    }
    diags
}

fn require_valid(sig: &Signature) -> Result<()> {
    let diags = validate_signature(sig);
    match diags.into_iter().next() {
        None => Ok(()),
        Some(d) => Err(Error::InvalidSignature(d)),
    }
}

/// A vertex of the typegraph: an object symbol, a morphism symbol, or
/// the replication marker `!`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum TgVertex {
    Object(String),
    Morphism(String),
    Bang,
}

/// An edge of the typegraph.
///
/// `Mid(X)` is the self-loop on object `X` typing wire-to-wire edges;
/// `Port` edges type the attachment of a wire to a generator port;
/// `BangSelf` is the self-loop on `!` typing edges between replication
/// markers; `BangTo(v)` types edges from a marker to a vertex typed `v`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum TgEdge {
    Mid(String),
    Port {
        morphism: String,
        dir: Dir,
        index: usize,
        object: String,
        arity: Arity,
    },
    BangSelf,
    BangTo(Box<TgVertex>),
}

impl TgEdge {
    /// Source vertex of this edge in the typegraph.
    pub fn src(&self) -> TgVertex {
        match self {
            TgEdge::Mid(x) => TgVertex::Object(x.clone()),
            TgEdge::Port { morphism, dir, object, .. } => match dir {
                Dir::In => TgVertex::Object(object.clone()),
                Dir::Out => TgVertex::Morphism(morphism.clone()),
            },
            TgEdge::BangSelf | TgEdge::BangTo(_) => TgVertex::Bang,
        }
    }

    /// Target vertex of this edge in the typegraph.
    pub fn tgt(&self) -> TgVertex {
        match self {
            TgEdge::Mid(x) => TgVertex::Object(x.clone()),
            TgEdge::Port { morphism, dir, object, .. } => match dir {
                Dir::In => TgVertex::Morphism(morphism.clone()),
                Dir::Out => TgVertex::Object(object.clone()),
            },
            TgEdge::BangSelf => TgVertex::Bang,
            TgEdge::BangTo(v) => (**v).clone(),
        }
    }
}

/// The typegraph derived from a signature.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeGraph {
    pub vertices: BTreeSet<TgVertex>,
    pub edges: BTreeSet<TgEdge>,
}

/// Derive the typegraph of a signature: one vertex per symbol, a `mid`
/// self-loop per object, and one port edge per generator port.  With
/// `banged` set, a `!` vertex is added along with its self-loop and one
/// edge to every other vertex.
pub fn derive_typegraph(sig: &Signature, banged: bool) -> Result<TypeGraph> {
    require_valid(sig)?;
    let mut vertices = BTreeSet::new();
    let mut edges = BTreeSet::new();
    for o in &sig.objects {
        vertices.insert(TgVertex::Object(o.clone()));
        edges.insert(TgEdge::Mid(o.clone()));
    }
    for (m, mt) in &sig.morphisms {
        vertices.insert(TgVertex::Morphism(m.clone()));
        for dir in [Dir::In, Dir::Out] {
            for (i, p) in mt.ports(dir).iter().enumerate() {
                edges.insert(TgEdge::Port {
                    morphism: m.clone(),
                    dir,
                    index: i + 1,
                    object: p.object.clone(),
                    arity: p.arity,
                });
            }
        }
    }
    if banged {
        edges.insert(TgEdge::BangSelf);
        for v in &vertices {
            edges.insert(TgEdge::BangTo(Box::new(v.clone())));
        }
        vertices.insert(TgVertex::Bang);
    }
    Ok(TypeGraph { vertices, edges })
}

/// One member of the expansion of a signature: a generator symbol
/// together with a chosen count for each of its variable ports (in
/// declaration order, domain ports before codomain ports) and the
/// resulting concrete object lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpandedEntry {
    pub symbol: String,
    pub counts: Vec<usize>,
    pub dom: Vec<String>,
    pub cod: Vec<String>,
}

fn concrete_objects(ports: &[PortSpec], counts: &mut std::slice::Iter<usize>) -> Vec<String> {
    let mut out = Vec::new();
    for p in ports {
        let n = match p.arity {
            Arity::Fixed => 1,
            Arity::Variable => *counts.next().copied().as_ref().unwrap(),
        };
        for _ in 0..n {
            out.push(p.object.clone());
        }
    }
    out
}

/// Enumerate the expansion of a signature, truncated at `max_arity`:
/// every assignment of a count in `0..=max_arity` to every variable
/// port, ordered lexicographically by (symbol, counts).  Generators
/// without variable ports contribute exactly one entry each.
pub fn expand_signature(sig: &Signature, max_arity: usize) -> Result<Vec<ExpandedEntry>> {
    require_valid(sig)?;
    let mut out = Vec::new();
    for (m, mt) in &sig.morphisms {
        let nvar = mt
            .dom
            .iter()
            .chain(mt.cod.iter())
            .filter(|p| p.arity == Arity::Variable)
            .count();
        let mut counts = vec![0usize; nvar];
        loop {
            let mut it = counts.iter();
            let dom = concrete_objects(&mt.dom, &mut it);
            let cod = concrete_objects(&mt.cod, &mut it);
            out.push(ExpandedEntry {
                symbol: m.clone(),
                counts: counts.clone(),
                dom,
                cod,
            });
            // lexicographic successor over [0, max_arity]^nvar
            let mut k = nvar;
            while k > 0 && counts[k - 1] == max_arity {
                counts[k - 1] = 0;
                k -= 1;
            }
            if k == 0 {
                break;
            }
            counts[k - 1] += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(objects: &[&str], morphisms: &[(&str, &[(&str, Arity)], &[(&str, Arity)])]) -> Signature {
        Signature {
            objects: objects.iter().map(|s| s.to_string()).collect(),
            morphisms: morphisms
                .iter()
                .map(|(name, dom, cod)| {
                    let mk = |ports: &[(&str, Arity)]| {
                        ports
                            .iter()
                            .map(|(o, a)| PortSpec { object: o.to_string(), arity: *a })
                            .collect()
                    };
                    (name.to_string(), MorphismType { dom: mk(dom), cod: mk(cod) })
                })
                .collect(),
        }
    }

    #[test]
    fn spider_signature_is_valid() {
        let s = sig(
            &["A"],
            &[
                ("Z", &[("A", Arity::Variable)], &[("A", Arity::Variable)]),
                ("X", &[("A", Arity::Variable)], &[("A", Arity::Variable)]),
            ],
        );
        assert!(validate_signature(&s).is_empty());
    }

    #[test]
    fn empty_signature_is_valid() {
        let s = sig(&[], &[]);
        assert!(validate_signature(&s).is_empty());
    }

    #[test]
    fn undeclared_object_is_diagnosed() {
        let s = sig(&["A"], &[("f", &[("B", Arity::Fixed)], &[])]);
        let diags = validate_signature(&s);
        assert_eq!(diags.len(), 1);
        assert!(diags[0].contains('f') && diags[0].contains('B'));
    }

    #[test]
    fn object_morphism_name_collision_is_diagnosed() {
        let s = sig(&["A", "f"], &[("f", &[("A", Arity::Fixed)], &[])]);
        let diags = validate_signature(&s);
        assert!(diags.iter().any(|d| d.contains("both an object and a morphism")));
    }

    #[test]
    fn typegraph_of_two_morphism_signature() {
        let s = sig(
            &["A", "B"],
            &[
                ("f", &[("A", Arity::Variable)], &[("A", Arity::Fixed), ("A", Arity::Fixed)]),
                ("g", &[("A", Arity::Fixed), ("B", Arity::Variable)], &[("A", Arity::Fixed)]),
            ],
        );
        let tg = derive_typegraph(&s, false).unwrap();
        let vs: BTreeSet<_> = [
            TgVertex::Object("A".into()),
            TgVertex::Object("B".into()),
            TgVertex::Morphism("f".into()),
            TgVertex::Morphism("g".into()),
        ]
        .into_iter()
        .collect();
        assert_eq!(tg.vertices, vs);
        let port = |m: &str, dir, index, object: &str, arity| TgEdge::Port {
            morphism: m.into(),
            dir,
            index,
            object: object.into(),
            arity,
        };
        let es: BTreeSet<_> = [
            TgEdge::Mid("A".into()),
            TgEdge::Mid("B".into()),
            port("f", Dir::In, 1, "A", Arity::Variable),
            port("f", Dir::Out, 1, "A", Arity::Fixed),
            port("f", Dir::Out, 2, "A", Arity::Fixed),
            port("g", Dir::In, 1, "A", Arity::Fixed),
            port("g", Dir::In, 2, "B", Arity::Variable),
            port("g", Dir::Out, 1, "A", Arity::Fixed),
        ]
        .into_iter()
        .collect();
        assert_eq!(tg.edges, es);
    }

    #[test]
    fn banged_typegraph_adds_marker_edges_only() {
        let s = sig(
            &["A", "B"],
            &[
                ("f", &[("A", Arity::Variable)], &[("A", Arity::Fixed), ("A", Arity::Fixed)]),
                ("g", &[("A", Arity::Fixed), ("B", Arity::Variable)], &[("A", Arity::Fixed)]),
            ],
        );
        let plain = derive_typegraph(&s, false).unwrap();
        let banged = derive_typegraph(&s, true).unwrap();
        let mut expect_vs = plain.vertices.clone();
        let mut expect_es = plain.edges.clone();
        expect_es.insert(TgEdge::BangSelf);
        for v in &expect_vs.clone() {
            expect_es.insert(TgEdge::BangTo(Box::new(v.clone())));
        }
        expect_vs.insert(TgVertex::Bang);
        assert_eq!(banged.vertices, expect_vs);
        assert_eq!(banged.edges, expect_es);
    }

    #[test]
    fn empty_banged_typegraph_is_marker_and_loop() {
        let tg = derive_typegraph(&sig(&[], &[]), true).unwrap();
        assert_eq!(tg.vertices, [TgVertex::Bang].into_iter().collect());
        assert_eq!(tg.edges, [TgEdge::BangSelf].into_iter().collect());
    }

    #[test]
    fn expansion_of_one_variable_port() {
        let s = sig(&["A"], &[("f", &[("A", Arity::Variable)], &[("A", Arity::Fixed), ("A", Arity::Fixed)])]);
        let entries = expand_signature(&s, 2).unwrap();
        let a = |n: usize| vec!["A".to_string(); n];
        assert_eq!(entries.len(), 3);
        for (i, e) in entries.iter().enumerate() {
            assert_eq!(e.symbol, "f");
            assert_eq!(e.counts, vec![i]);
            assert_eq!(e.dom, a(i));
            assert_eq!(e.cod, a(2));
        }
    }

    #[test]
    fn expansion_without_variable_ports_is_singleton() {
        let s = sig(&["A"], &[("f", &[("A", Arity::Fixed)], &[("A", Arity::Fixed)])]);
        let entries = expand_signature(&s, 5).unwrap();
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].counts, Vec::<usize>::new());
        assert_eq!(entries[0].dom, vec!["A".to_string()]);
    }

    #[test]
    fn expansion_of_spider_at_cutoff_one() {
        let s = sig(&["A"], &[("Z", &[("A", Arity::Variable)], &[("A", Arity::Variable)])]);
        let entries = expand_signature(&s, 1).unwrap();
        assert_eq!(entries.len(), 4);
        let counts: Vec<_> = entries.iter().map(|e| e.counts.clone()).collect();
        assert_eq!(counts, vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
        for e in &entries {
            assert!(e.dom.len() <= 1 && e.cod.len() <= 1);
            assert_eq!(e.dom.len(), e.counts[0]);
            assert_eq!(e.cod.len(), e.counts[1]);
        }
    }

    #[test]
    fn expansion_count_is_power_of_cutoff_plus_one() {
        // three variable ports, cutoff 3: (3+1)^3 entries
        let s = sig(
            &["A"],
            &[(
                "h",
                &[("A", Arity::Variable), ("A", Arity::Fixed), ("A", Arity::Variable)],
                &[("A", Arity::Variable)],
            )],
        );
        let entries = expand_signature(&s, 3).unwrap();
        assert_eq!(entries.len(), 4usize.pow(3));
        // lexicographic by counts
        let mut sorted = entries.clone();
        sorted.sort_by(|a, b| a.counts.cmp(&b.counts));
        assert_eq!(
            entries.iter().map(|e| &e.counts).collect::<Vec<_>>(),
            sorted.iter().map(|e| &e.counts).collect::<Vec<_>>()
        );
    }

    #[test]
    fn expansion_all_fixed_is_bijective_with_morphisms() {
        let s = sig(
            &["A", "B"],
            &[
                ("f", &[("A", Arity::Fixed)], &[("B", Arity::Fixed)]),
                ("g", &[], &[("A", Arity::Fixed), ("A", Arity::Fixed)]),
                ("h", &[("B", Arity::Fixed)], &[]),
            ],
        );
        let entries = expand_signature(&s, 7).unwrap();
        let symbols: Vec<_> = entries.iter().map(|e| e.symbol.as_str()).collect();
        assert_eq!(symbols, vec!["f", "g", "h"]);
        assert!(entries.iter().all(|e| e.counts.is_empty()));
    }

    #[test]
    fn derive_typegraph_rejects_invalid_signature() {
        let s = sig(&["A"], &[("f", &[("B", Arity::Fixed)], &[])]);
        assert!(matches!(derive_typegraph(&s, false), Err(Error::InvalidSignature(_))));
    }
}
