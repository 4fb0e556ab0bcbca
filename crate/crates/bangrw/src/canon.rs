//! Exact graph canonicalization for isomorphism checks.
//!
//! [`canonical_form`] produces a certificate string such that two graphs
//! over the same signature receive equal certificates exactly when they
//! are isomorphic (as typed graphs, respecting vertex sorts, fixing
//! tags, and port annotations).  The algorithm is classical
//! individualization–refinement: iterated colour refinement by local
//! structure, with backtracking over the members of the first
//! non-singleton colour class, keeping the lexicographically least
//! certificate over all leaves.  Exponential in the worst case, but the
//! graphs handled here are small; a hard vertex cap keeps accidental
//! misuse from hanging (default [`DEFAULT_CANON_CAP`]).
//!
//! The machinery is exposed in two layers: [`LabeledGraph`] works on
//! bare vertex/edge label strings (used by the wire-homeomorphism search
//! on contracted graphs), and the [`canonical_form`] family wraps it for
//! typed [`Graph`]s.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::graph::{Graph, VType};
use crate::signature::Dir;

/// Default vertex cap for canonicalization.
pub const DEFAULT_CANON_CAP: usize = 64;

/// A finite directed multigraph with string labels, the raw input of the
/// canonicalization search.
#[derive(Debug, Clone)]
pub struct LabeledGraph {
    pub vlabels: Vec<String>,
    /// (source index, target index, label)
    pub edges: Vec<(usize, usize, String)>,
}

struct CanonGraph {
    /// Initial (label-derived) colour id per vertex.
    init: Vec<u32>,
    /// Sorted distinct vertex label strings (the id dictionary).
    vdict: Vec<String>,
    /// Sorted distinct edge label strings.
    edict: Vec<String>,
    /// Edges as (src index, tgt index, colour id).
    edges: Vec<(usize, usize, u32)>,
    /// Per vertex: (outgoing?, edge colour, other endpoint).
    adj: Vec<Vec<(bool, u32, usize)>>,
}

fn build(lg: &LabeledGraph) -> CanonGraph {
    let n = lg.vlabels.len();
    let mut vdict = lg.vlabels.clone();
    vdict.sort();
    vdict.dedup();
    let init: Vec<u32> =
        lg.vlabels.iter().map(|s| vdict.binary_search(s).unwrap() as u32).collect();

    let mut edict: Vec<String> = lg.edges.iter().map(|(_, _, l)| l.clone()).collect();
    edict.sort();
    edict.dedup();

    let mut edges = Vec::with_capacity(lg.edges.len());
    let mut adj = vec![Vec::new(); n];
    for (s, t, l) in &lg.edges {
        let c = edict.binary_search(l).unwrap() as u32;
        edges.push((*s, *t, c));
        adj[*s].push((true, c, *t));
        adj[*t].push((false, c, *s));
    }
    CanonGraph { init, vdict, edict, edges, adj }
}

/// Split colour classes by local structure until stable, renormalizing
/// colours to ranks after every pass.
fn refine(cg: &CanonGraph, colours: &mut Vec<u32>) {
    let mut distinct = colours.iter().collect::<std::collections::BTreeSet<_>>().len();
    loop {
        let mut sigs: Vec<(u32, Vec<(bool, u32, u32)>)> = colours
            .iter()
            .enumerate()
            .map(|(v, &c)| {
                let mut nb: Vec<(bool, u32, u32)> =
                    cg.adj[v].iter().map(|&(out, ec, u)| (out, ec, colours[u])).collect();
                nb.sort();
                (c, nb)
            })
            .collect();
        let mut sorted = sigs.clone();
        sorted.sort();
        sorted.dedup();
        for (v, sig) in sigs.drain(..).enumerate() {
            colours[v] = sorted.binary_search(&sig).unwrap() as u32;
        }
        if sorted.len() == distinct {
            return;
        }
        distinct = sorted.len();
    }
}

/// Certificate plus the canonical position of each vertex, for a
/// discrete colouring.
fn certificate(cg: &CanonGraph, colours: &[u32]) -> (String, Vec<usize>) {
    let n = colours.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&v| colours[v]);
    let mut pos = vec![0usize; n];
    for (p, &v) in order.iter().enumerate() {
        pos[v] = p;
    }
    let mut vline: Vec<u32> = vec![0; n];
    for v in 0..n {
        vline[pos[v]] = cg.init[v];
    }
    let mut eline: Vec<(usize, usize, u32)> =
        cg.edges.iter().map(|&(s, t, c)| (pos[s], pos[t], c)).collect();
    eline.sort();
    let mut out = String::new();
    write!(out, "D{:?};E{:?};V{vline:?};", cg.vdict, cg.edict).unwrap();
    write!(out, "G{eline:?}").unwrap();
    (out, pos)
}

fn search(cg: &CanonGraph, colours: Vec<u32>, best: &mut Option<(String, Vec<usize>)>) {
    let mut colours = colours;
    refine(cg, &mut colours);

    let mut classes: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (v, &c) in colours.iter().enumerate() {
        classes.entry(c).or_default().push(v);
    }
    let target = classes.values().find(|vs| vs.len() > 1);
    match target {
        None => {
            let (cert, pos) = certificate(cg, &colours);
            if best.as_ref().map_or(true, |(b, _)| cert < *b) {
                *best = Some((cert, pos));
            }
        }
        Some(vs) => {
            // Twin pruning: when the class members are pairwise
            // non-adjacent and have pointwise-identical neighbourhoods
            // outside the class (and identical self-loop profiles), any
            // transposition of two members is an automorphism, so a
            // single branch suffices.  This covers isolated vertices,
            // one-vertex circles, and parallel legs on one generator.
            let class: std::collections::BTreeSet<usize> = vs.iter().copied().collect();
            let profile = |v: usize| -> Option<(Vec<(bool, u32, usize)>, Vec<(bool, u32)>)> {
                let mut ext = Vec::new();
                let mut loops = Vec::new();
                for &(out, ec, u) in &cg.adj[v] {
                    if u == v {
                        loops.push((out, ec));
                    } else if class.contains(&u) {
                        return None;
                    } else {
                        ext.push((out, ec, u));
                    }
                }
                ext.sort();
                loops.sort();
                Some((ext, loops))
            };
            let twins = {
                let p0 = profile(vs[0]);
                p0.is_some() && vs.iter().all(|&v| profile(v) == p0)
            };
            let members: &[usize] = if twins { &vs[..1] } else { &vs[..] };
            let fresh = colours.iter().max().copied().unwrap_or(0) + 1;
            for &v in members {
                let mut branch = colours.clone();
                branch[v] = fresh;
                search(cg, branch, best);
            }
        }
    }
}

/// Canonical certificate and canonical vertex positions of a labeled
/// graph, with an explicit vertex cap.
pub fn canonical_labeled_capped(lg: &LabeledGraph, cap: usize) -> Result<(String, Vec<usize>)> {
    if lg.vlabels.len() > cap {
        return Err(Error::SizeLimit { size: lg.vlabels.len(), cap });
    }
    let cg = build(lg);
    let mut best = None;
    search(&cg, cg.init.clone(), &mut best);
    Ok(best.unwrap_or_else(|| certificate(&cg, &[])))
}

/// An isomorphism between labeled graphs as a vertex mapping
/// (`a`-index to `b`-index), or `None` if they are not isomorphic.
pub fn isomorphism_labeled(
    a: &LabeledGraph,
    b: &LabeledGraph,
    cap: usize,
) -> Result<Option<Vec<usize>>> {
    if a.vlabels.len() != b.vlabels.len() || a.edges.len() != b.edges.len() {
        return Ok(None);
    }
    let (cert_a, pos_a) = canonical_labeled_capped(a, cap)?;
    let (cert_b, pos_b) = canonical_labeled_capped(b, cap)?;
    if cert_a != cert_b {
        return Ok(None);
    }
    // map via canonical positions: v in a ↦ the b-vertex at the same
    // canonical position
    let n = a.vlabels.len();
    let mut at_pos_b = vec![0usize; n];
    for (v, &p) in pos_b.iter().enumerate() {
        at_pos_b[p] = v;
    }
    Ok(Some(pos_a.iter().map(|&p| at_pos_b[p]).collect()))
}

fn vertex_colour(d: &crate::graph::VData) -> String {
    let base = match &d.vtype {
        VType::Wire(o) => format!("W:{o}"),
        VType::Node(m) => format!("N:{m}"),
        VType::Bang => "B".to_string(),
    };
    match &d.fixed {
        Some(t) => format!("{base}#{t}"),
        None => base,
    }
}

fn edge_colour(d: &crate::graph::EData) -> String {
    match d.port {
        None => "-".to_string(),
        Some(p) => format!(
            "{}:{}",
            match p.dir {
                Dir::In => "i",
                Dir::Out => "o",
            },
            p.index
        ),
    }
}

/// View a typed graph as a labeled graph (vertex order = name order).
pub fn to_labeled(g: &Graph) -> LabeledGraph {
    let idx: BTreeMap<&String, usize> =
        g.vertices.keys().enumerate().map(|(i, v)| (v, i)).collect();
    LabeledGraph {
        vlabels: g.vertices.values().map(vertex_colour).collect(),
        edges: g
            .edges
            .values()
            .map(|d| (idx[&d.src], idx[&d.tgt], edge_colour(d)))
            .collect(),
    }
}

/// Canonical certificate with an explicit vertex cap.
pub fn canonical_form_capped(g: &Graph, cap: usize) -> Result<String> {
    Ok(canonical_labeled_capped(&to_labeled(g), cap)?.0)
}

/// Canonical certificate of a graph: equal certificates exactly when the
/// graphs are isomorphic over the same signature.
pub fn canonical_form(g: &Graph) -> Result<String> {
    canonical_form_capped(g, DEFAULT_CANON_CAP)
}

/// Isomorphism test via certificates.
pub fn isomorphic(a: &Graph, b: &Graph) -> Result<bool> {
    if a.sig != b.sig {
        return Ok(false);
    }
    if a.vertices.len() != b.vertices.len() || a.edges.len() != b.edges.len() {
        return Ok(false);
    }
    Ok(canonical_form(a)? == canonical_form(b)?)
}

/// A name-level isomorphism between two typed graphs, or `None`.
pub fn graph_isomorphism(a: &Graph, b: &Graph) -> Result<Option<BTreeMap<String, String>>> {
    if a.sig != b.sig {
        return Ok(None);
    }
    let map = match isomorphism_labeled(&to_labeled(a), &to_labeled(b), DEFAULT_CANON_CAP)? {
        None => return Ok(None),
        Some(m) => m,
    };
    let names_a: Vec<&String> = a.vertices.keys().collect();
    let names_b: Vec<&String> = b.vertices.keys().collect();
    Ok(Some(
        map.into_iter()
            .enumerate()
            .map(|(i, j)| (names_a[i].clone(), names_b[j].clone()))
            .collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{EData, Graph, VData};
    use crate::signature::{Arity, MorphismType, PortSpec, Signature};
    use std::collections::BTreeMap;
    use std::sync::Arc;

    fn sig() -> Arc<Signature> {
        let mut morphisms = BTreeMap::new();
        morphisms.insert(
            "Z".to_string(),
            MorphismType {
                dom: vec![PortSpec { object: "A".into(), arity: Arity::Variable }],
                cod: vec![PortSpec { object: "A".into(), arity: Arity::Variable }],
            },
        );
        Arc::new(Signature { objects: ["A".to_string()].into_iter().collect(), morphisms })
    }

    fn cycle(names: &[&str]) -> Graph {
        let mut g = Graph::empty(sig());
        for w in names {
            g.vertices.insert(w.to_string(), VData::wire("A"));
        }
        for (i, w) in names.iter().enumerate() {
            let next = names[(i + 1) % names.len()];
            g.edges.insert(
                format!("e{i}"),
                EData { src: w.to_string(), tgt: next.to_string(), port: None },
            );
        }
        g
    }

    #[test]
    fn renaming_preserves_certificate() {
        let g = cycle(&["w1", "w2", "w3", "w4"]);
        let h = cycle(&["zz", "aa", "q", "m"]);
        assert_eq!(canonical_form(&g).unwrap(), canonical_form(&h).unwrap());
        let iso = graph_isomorphism(&g, &h).unwrap().unwrap();
        // the witness is a real isomorphism: edges carry over
        for d in g.edges.values() {
            let s = &iso[&d.src];
            let t = &iso[&d.tgt];
            assert!(h.edges.values().any(|hd| &hd.src == s && &hd.tgt == t));
        }
    }

    #[test]
    fn one_cycle_differs_from_two_cycles() {
        // same vertex count, edge count, and degree sequence
        let g = cycle(&["w1", "w2", "w3", "w4"]);
        let mut h = cycle(&["a1", "a2"]);
        let h2 = cycle(&["b1", "b2"]);
        for (v, d) in h2.vertices {
            h.vertices.insert(v, d);
        }
        for (i, (_, d)) in h2.edges.into_iter().enumerate() {
            h.edges.insert(format!("f{i}"), d);
        }
        assert_ne!(canonical_form(&g).unwrap(), canonical_form(&h).unwrap());
        assert!(!isomorphic(&g, &h).unwrap());
        assert!(graph_isomorphism(&g, &h).unwrap().is_none());
    }

    #[test]
    fn two_small_graphs_differ() {
        let mut g = Graph::empty(sig());
        g.vertices.insert("a".into(), VData::wire("A"));
        g.vertices.insert("b".into(), VData::wire("A"));
        g.edges.insert("e".into(), EData { src: "a".into(), tgt: "b".into(), port: None });
        let mut h = g.clone();
        h.edges.clear(); // two isolated vertices
        assert_ne!(canonical_form(&g).unwrap(), canonical_form(&h).unwrap());
    }

    #[test]
    fn spider_leg_labels_are_interchangeable() {
        use crate::graph::Port;
        use crate::signature::Dir;
        let mk = |first: &str, second: &str| {
            let mut g = Graph::empty(sig());
            g.vertices.insert("s".into(), VData::node("Z"));
            g.vertices.insert(first.into(), VData::wire("A"));
            g.vertices.insert(second.into(), VData::wire("A"));
            g.edges.insert(
                "e1".into(),
                EData {
                    src: first.into(),
                    tgt: "s".into(),
                    port: Some(Port { dir: Dir::In, index: 1 }),
                },
            );
            g.edges.insert(
                "e2".into(),
                EData {
                    src: second.into(),
                    tgt: "s".into(),
                    port: Some(Port { dir: Dir::In, index: 1 }),
                },
            );
            g
        };
        assert_eq!(
            canonical_form(&mk("a", "b")).unwrap(),
            canonical_form(&mk("b", "a")).unwrap()
        );
    }

    #[test]
    fn fixing_tags_distinguish() {
        let mut g = Graph::empty(sig());
        g.vertices.insert("b".into(), VData::bang());
        let mut h = Graph::empty(sig());
        h.vertices
            .insert("b".into(), VData { vtype: crate::graph::VType::Bang, fixed: Some("x".into()) });
        assert_ne!(canonical_form(&g).unwrap(), canonical_form(&h).unwrap());
    }

    #[test]
    fn parallel_edges_are_counted() {
        let mut g = Graph::empty(sig());
        g.vertices.insert("b1".into(), VData::bang());
        g.vertices.insert("b2".into(), VData::bang());
        g.edges.insert("e1".into(), EData { src: "b1".into(), tgt: "b2".into(), port: None });
        let mut h = g.clone();
        h.edges.insert("e2".into(), EData { src: "b1".into(), tgt: "b2".into(), port: None });
        assert_ne!(canonical_form(&g).unwrap(), canonical_form(&h).unwrap());
    }

    #[test]
    fn size_cap_is_enforced() {
        let mut g = Graph::empty(sig());
        for i in 0..65 {
            g.vertices.insert(format!("w{i}"), VData::wire("A"));
        }
        assert!(matches!(canonical_form(&g), Err(Error::SizeLimit { size: 65, cap: 64 })));
        assert!(canonical_form_capped(&g, 65).is_ok());
    }

    #[test]
    fn many_identical_circles_canonicalize_quickly() {
        let mut g = Graph::empty(sig());
        for i in 0..20 {
            let w = format!("w{i}");
            g.vertices.insert(w.clone(), VData::wire("A"));
            g.edges.insert(format!("e{i}"), EData { src: w.clone(), tgt: w, port: None });
        }
        let c1 = canonical_form(&g).unwrap();
        let mut h = Graph::empty(sig());
        for i in 0..20 {
            let w = format!("u{i}x");
            h.vertices.insert(w.clone(), VData::wire("A"));
            h.edges.insert(format!("d{i}"), EData { src: w.clone(), tgt: w, port: None });
        }
        assert_eq!(c1, canonical_form(&h).unwrap());
    }

    #[test]
    fn empty_graph_has_a_certificate() {
        let g = Graph::empty(sig());
        assert_eq!(canonical_form(&g).unwrap(), canonical_form(&g.clone()).unwrap());
    }
}
