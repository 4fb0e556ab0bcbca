//! String graphs: wires, boundaries, homeomorphism, and normal forms.
//!
//! A *string graph* is a typed graph whose wire-vertices have at most
//! one incoming and one outgoing (non-membership) edge, and whose
//! node-vertices carry exactly one edge per fixed port.  Maximal paths
//! through wire-vertices are *wires*; a wire is a `circle` (closed
//! loop), `interior` (node to node), `bare` (boundary to boundary),
//! `input` (boundary to node), or `output` (node to boundary).  The
//! *boundary* consists of the wire-vertices with a missing in-edge
//! (inputs) or out-edge (outputs); membership edges from replication
//! markers are ignored throughout, so these functions apply equally to
//! the string-graph part of a pattern graph.
//!
//! Two graphs related by subdividing or un-subdividing wires denote the
//! same morphism; [`wire_homeomorphism`] decides that relation exactly
//! by contracting every wire to a single labeled vertex and solving
//! graph isomorphism on the contracted forms.  [`normalize`] re-subdivides
//! every wire to a prescribed vertex count; the matching machinery uses
//! two different normal forms, and `minimal` is the compact form used
//! for display and post-processing.

use std::collections::{BTreeMap, BTreeSet};

use crate::canon::{isomorphism_labeled, LabeledGraph, DEFAULT_CANON_CAP};
use crate::error::{Error, Result};
use crate::graph::{EData, Graph, VType};
use crate::signature::{Arity, Dir};

/// The five kinds of wire, classified by endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum WireKind {
    Circle,
    Interior,
    Bare,
    Input,
    Output,
}

/// One wire: a maximal path through wire-vertices.
///
/// `vertices` lists the wire-vertices along the path from source to
/// target (for circles, the whole cycle starting at the
/// lexicographically least vertex).  Boundary endpoints of bare, input,
/// and output wires are included; node endpoints are not (they are
/// `source`/`target`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Wire {
    pub vertices: Vec<String>,
    pub edges: Vec<String>,
    pub kind: WireKind,
    pub wiretype: String,
    pub source: Option<String>,
    pub target: Option<String>,
}

impl Wire {
    /// The wire's own vertices: everything strictly between its
    /// endpoints, or the whole cycle for circles.  Boundary endpoints
    /// belong to the boundary, not to the wire.
    pub fn internal_vertices(&self) -> &[String] {
        if self.kind == WireKind::Circle {
            return &self.vertices;
        }
        let mut lo = 0;
        let mut hi = self.vertices.len();
        if matches!(self.kind, WireKind::Bare | WireKind::Input) {
            lo += 1; // source is a boundary vertex
        }
        if matches!(self.kind, WireKind::Bare | WireKind::Output) {
            hi -= 1; // target is a boundary vertex
        }
        &self.vertices[lo..hi]
    }
}

/// The full decomposition of a graph into nodes, wires, and boundary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireDecomposition {
    pub wires: Vec<Wire>,
    /// Wire-vertices with no incoming string edge.
    pub inputs: BTreeSet<String>,
    /// Wire-vertices with no outgoing string edge.
    pub outputs: BTreeSet<String>,
    /// Wire-vertices with no string edges at all (in both sets above).
    pub isolated: BTreeSet<String>,
}

impl WireDecomposition {
    /// The boundary: inputs and outputs together.
    pub fn boundary(&self) -> BTreeSet<String> {
        self.inputs.union(&self.outputs).cloned().collect()
    }
}

/// Drop all `!`-vertices and membership edges, leaving the underlying
/// string graph.
pub fn string_part(g: &Graph) -> Graph {
    let mut out = g.clone();
    out.vertices.retain(|_, d| d.vtype != VType::Bang);
    out.edges.retain(|_, d| !g.is_bang(&d.src));
    out
}

/// In- and out-edges of each vertex, restricted to string (non-membership)
/// edges.
fn string_adjacency(g: &Graph) -> (BTreeMap<String, Vec<String>>, BTreeMap<String, Vec<String>>) {
    let mut ins: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut outs: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (e, d) in &g.edges {
        if g.is_bang(&d.src) {
            continue;
        }
        outs.entry(d.src.clone()).or_default().push(e.clone());
        ins.entry(d.tgt.clone()).or_default().push(e.clone());
    }
    (ins, outs)
}

/// Check the string-graph conditions, returning one diagnostic per
/// violation.  Typing problems are included; `!`-vertices are rejected
/// (validate the pattern-graph conditions instead for those).
pub fn validate_string_graph(g: &Graph) -> Vec<String> {
    let mut diags = crate::graph::validate_typing(g);
    for (v, d) in &g.vertices {
        if d.vtype == VType::Bang {
            diags.push(format!("vertex {v} is a bang vertex (not part of a string graph)"));
        }
    }
    diags.extend(structural_string_diags(g));
    diags
}

/// The structural half of the string-graph conditions — simplicity, wire
/// degrees, and fixed-port arity — without the typing pass.  The
/// pattern-graph validator composes this with full-graph typing.
pub(crate) fn structural_string_diags(g: &Graph) -> Vec<String> {
    let mut diags = Vec::new();
    let (ins, outs) = string_adjacency(g);
    let mut seen_pairs: BTreeSet<(&String, &String)> = BTreeSet::new();
    for d in g.edges.values() {
        if !seen_pairs.insert((&d.src, &d.tgt)) {
            diags.push(format!("parallel edges between {} and {}", d.src, d.tgt));
        }
    }
    for (v, d) in &g.vertices {
        match &d.vtype {
            VType::Wire(_) => {
                let i = ins.get(v).map_or(0, |e| e.len());
                let o = outs.get(v).map_or(0, |e| e.len());
                if i > 1 {
                    diags.push(format!("wire-vertex {v} has {i} incoming edges"));
                }
                if o > 1 {
                    diags.push(format!("wire-vertex {v} has {o} outgoing edges"));
                }
            }
            VType::Node(m) => {
                let mt = match g.sig.morphisms.get(m) {
                    Some(mt) => mt,
                    None => continue, // typing diagnostic already emitted
                };
                for dir in [Dir::In, Dir::Out] {
                    for (i, spec) in mt.ports(dir).iter().enumerate() {
                        if spec.arity != Arity::Fixed {
                            continue;
                        }
                        let count = g
                            .edges
                            .values()
                            .filter(|d| {
                                d.port == Some(crate::graph::Port { dir, index: i + 1 })
                                    && (if dir == Dir::In { &d.tgt } else { &d.src }) == v
                            })
                            .count();
                        if count != 1 {
                            diags.push(format!(
                                "node-vertex {v} has {count} edges on fixed {} port {}",
                                match dir {
                                    Dir::In => "in",
                                    Dir::Out => "out",
                                },
                                i + 1
                            ));
                        }
                    }
                }
            }
            VType::Bang => {}
        }
    }
    diags
}

/// Decompose a graph into its wires, inputs, outputs, and isolated
/// wire-vertices.  Membership edges and `!`-vertices are ignored.  The
/// graph's string part must be a valid string graph.
pub fn wires(g: &Graph) -> WireDecomposition {
    let (ins, outs) = string_adjacency(g);
    let mut inputs = BTreeSet::new();
    let mut outputs = BTreeSet::new();
    let mut isolated = BTreeSet::new();
    for (v, d) in &g.vertices {
        if !matches!(d.vtype, VType::Wire(_)) {
            continue;
        }
        let has_in = ins.get(v).is_some_and(|e| !e.is_empty());
        let has_out = outs.get(v).is_some_and(|e| !e.is_empty());
        if !has_in {
            inputs.insert(v.clone());
        }
        if !has_out {
            outputs.insert(v.clone());
        }
        if !has_in && !has_out {
            isolated.insert(v.clone());
        }
    }

    let mut unused: BTreeSet<String> = g
        .edges
        .iter()
        .filter(|(_, d)| !g.is_bang(&d.src))
        .map(|(e, _)| e.clone())
        .collect();
    let mut result = Vec::new();
    while let Some(e0) = unused.iter().next().cloned() {
        unused.remove(&e0);
        let mut chain = std::collections::VecDeque::new();
        chain.push_back(e0.clone());
        let mut circle = false;
        // walk backward
        loop {
            let front_src = g.edges[chain.front().unwrap()].src.clone();
            if !g.is_wire(&front_src) {
                break;
            }
            let ein = match ins.get(&front_src).and_then(|v| v.first()) {
                Some(e) => e.clone(),
                None => break,
            };
            if &ein == chain.back().unwrap() {
                circle = true;
                break;
            }
            unused.remove(&ein);
            chain.push_front(ein);
        }
        if !circle {
            // walk forward
            loop {
                let back_tgt = g.edges[chain.back().unwrap()].tgt.clone();
                if !g.is_wire(&back_tgt) {
                    break;
                }
                let eout = match outs.get(&back_tgt).and_then(|v| v.first()) {
                    Some(e) => e.clone(),
                    None => break,
                };
                unused.remove(&eout);
                chain.push_back(eout);
            }
        }

        let chain: Vec<String> = chain.into_iter().collect();
        let start = g.edges[&chain[0]].src.clone();
        let end = g.edges[chain.last().unwrap()].tgt.clone();

        if circle {
            // cycle vertices in order, rotated to start at the least name
            let mut vs: Vec<String> = chain.iter().map(|e| g.edges[e].src.clone()).collect();
            let k = vs
                .iter()
                .enumerate()
                .min_by_key(|(_, v)| (*v).clone())
                .map(|(i, _)| i)
                .unwrap();
            vs.rotate_left(k);
            let mut es = chain;
            es.rotate_left(k);
            let wiretype = match &g.vertices[&vs[0]].vtype {
                VType::Wire(o) => o.clone(),
                _ => unreachable!("circle through non-wire vertex"),
            };
            result.push(Wire {
                vertices: vs,
                edges: es,
                kind: WireKind::Circle,
                wiretype,
                source: None,
                target: None,
            });
            continue;
        }

        let mut vs = Vec::new();
        if g.is_wire(&start) {
            vs.push(start.clone());
        }
        for e in &chain[..chain.len() - 1] {
            vs.push(g.edges[e].tgt.clone());
        }
        if g.is_wire(&end) {
            vs.push(end.clone());
        }
        let kind = match (g.is_wire(&start), g.is_wire(&end)) {
            (false, false) => WireKind::Interior,
            (true, true) => WireKind::Bare,
            (true, false) => WireKind::Input,
            (false, true) => WireKind::Output,
        };
        let wiretype = match vs.first().map(|v| &g.vertices[v].vtype) {
            Some(VType::Wire(o)) => o.clone(),
            _ => unreachable!("wire without wire-vertices"),
        };
        result.push(Wire {
            vertices: vs,
            edges: chain,
            kind,
            wiretype,
            source: Some(start),
            target: Some(end),
        });
    }
    WireDecomposition { wires: result, inputs, outputs, isolated }
}

/// A witness of wire homeomorphism: bijections on node-vertices,
/// boundary vertices, `!`-vertices, and wires (the latter as index pairs
/// into the two decompositions' wire lists).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireHomeo {
    pub node_map: BTreeMap<String, String>,
    pub boundary_map: BTreeMap<String, String>,
    pub bang_map: BTreeMap<String, String>,
    pub wire_map: Vec<(usize, usize)>,
}

fn port_label(g: &Graph, edge: &str) -> String {
    match g.edges[edge].port {
        None => "-".to_string(),
        Some(p) => format!(
            "{}{}",
            match p.dir {
                Dir::In => "i",
                Dir::Out => "o",
            },
            p.index
        ),
    }
}

/// The contracted view of a graph used by the homeomorphism search:
/// node-vertices, boundary vertices, and `!`-vertices survive; each wire
/// becomes a single labeled vertex attached to its endpoints.  Returns
/// the labeled graph, the names backing each contracted vertex (wires
/// get synthetic names), and the index of the first wire vertex.
struct Contracted {
    lg: LabeledGraph,
    /// role and backing name per contracted vertex
    names: Vec<(char, String)>,
    /// wire list index per contracted wire vertex (usize::MAX otherwise)
    wire_of: Vec<usize>,
}

fn contract(g: &Graph, dec: &WireDecomposition) -> Contracted {
    let bound = dec.boundary();
    let mut vlabels = Vec::new();
    let mut names = Vec::new();
    let mut wire_of = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();

    for (v, d) in &g.vertices {
        let (role, label) = match &d.vtype {
            VType::Node(m) => ('N', format!("N:{m}")),
            VType::Bang => ('!', format!("!:{}", d.fixed.clone().unwrap_or_default())),
            VType::Wire(o) if bound.contains(v) => ('B', format!("B:{o}")),
            VType::Wire(_) => continue, // internal wire-vertices are absorbed into wires
        };
        index.insert(v.clone(), vlabels.len());
        vlabels.push(label);
        names.push((role, v.clone()));
        wire_of.push(usize::MAX);
    }

    let mut edges = Vec::new();
    for (wi, w) in dec.wires.iter().enumerate() {
        let srcport = match w.kind {
            WireKind::Interior | WireKind::Output => port_label(g, &w.edges[0]),
            _ => "-".to_string(),
        };
        let tgtport = match w.kind {
            WireKind::Interior | WireKind::Input => port_label(g, w.edges.last().unwrap()),
            _ => "-".to_string(),
        };
        let label = format!("W:{:?}:{}:{srcport}:{tgtport}", w.kind, w.wiretype);
        let wv = vlabels.len();
        vlabels.push(label);
        names.push(('W', format!("wire#{wi}")));
        wire_of.push(wi);
        if let Some(s) = &w.source {
            edges.push((index[s], wv, "s".to_string()));
        }
        if let Some(t) = &w.target {
            edges.push((wv, index[t], "t".to_string()));
        }
        // whole-wire coverage by boxes matters only where the wire has
        // vertices of its own that are not boundary vertices; for bare,
        // input, and output wires the pointwise boundary conditions
        // together with openness already pin coverage.
        if matches!(w.kind, WireKind::Circle | WireKind::Interior) {
            let internals: BTreeSet<&String> = w.internal_vertices().iter().collect();
            if !internals.is_empty() {
                for b in g.bang_vertices() {
                    let covers = internals.iter().all(|v| {
                        g.edges.values().any(|d| d.src == b && &&d.tgt == v)
                    });
                    if covers {
                        edges.push((index[&b], wv, "pw".to_string()));
                    }
                }
            }
        }
    }
    // pointwise membership edges to surviving vertices
    for d in g.edges.values() {
        if !g.is_bang(&d.src) {
            continue;
        }
        if let (Some(&s), Some(&t)) = (index.get(&d.src), index.get(&d.tgt)) {
            let label = if g.is_bang(&d.tgt) { "pb" } else { "p" };
            edges.push((s, t, label.to_string()));
        }
    }

    Contracted { lg: LabeledGraph { vlabels, edges }, names, wire_of }
}

/// Decide wire homeomorphism between two graphs (string graphs or
/// pattern graphs over the same signature), returning a witness if one
/// exists.  Exact; the contracted graphs are subject to the
/// canonicalization size cap.
pub fn wire_homeomorphism(g: &Graph, h: &Graph) -> Result<Option<WireHomeo>> {
    if g.sig != h.sig {
        return Ok(None);
    }
    let dec_g = wires(g);
    let dec_h = wires(h);
    if dec_g.isolated.len() != dec_h.isolated.len() || dec_g.wires.len() != dec_h.wires.len() {
        return Ok(None);
    }
    let cg = contract(g, &dec_g);
    let ch = contract(h, &dec_h);
    let iso = match isomorphism_labeled(&cg.lg, &ch.lg, DEFAULT_CANON_CAP)? {
        None => return Ok(None),
        Some(m) => m,
    };
    let mut out = WireHomeo {
        node_map: BTreeMap::new(),
        boundary_map: BTreeMap::new(),
        bang_map: BTreeMap::new(),
        wire_map: Vec::new(),
    };
    for (i, &j) in iso.iter().enumerate() {
        let (role, name) = &cg.names[i];
        let (_, hname) = &ch.names[j];
        match role {
            'N' => {
                out.node_map.insert(name.clone(), hname.clone());
            }
            'B' => {
                out.boundary_map.insert(name.clone(), hname.clone());
            }
            '!' => {
                out.bang_map.insert(name.clone(), hname.clone());
            }
            'W' => out.wire_map.push((cg.wire_of[i], ch.wire_of[j])),
            _ => unreachable!(),
        }
    }
    out.wire_map.sort();
    Ok(Some(out))
}

/// The wire subdivision schemes.
///
/// The two parameterized modes implement the reference scheme where a
/// pattern with `n` bare wires forces every target wire to carry enough
/// spare vertices for any placement of those bare wires; the matcher
/// modes implement the leaner interleaved scheme where bare wires are
/// placed by splitting edges on demand; `minimal` is the compact display
/// form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalizeMode {
    Pattern(usize),
    Target(usize),
    MatcherPattern,
    MatcherTarget,
    Minimal,
}

fn wire_vertex_count(mode: NormalizeMode, kind: WireKind) -> usize {
    use NormalizeMode::*;
    use WireKind::*;
    match (mode, kind) {
        (Pattern(n), Circle) => (2 * n).max(1),
        (Pattern(n), Interior) => 2 * n + 2,
        (Pattern(_), Bare) => 2,
        (Pattern(_), Input | Output) => 1,
        (Target(n), Circle) => (2 * n).max(1),
        (Target(n), Interior) => 2 * n + 2,
        (Target(n), Bare) => (2 * n).max(2),
        (Target(n), Input | Output) => 2 * n + 1,
        (MatcherPattern, Circle) => 1,
        (MatcherPattern, Interior) => 2,
        (MatcherPattern, Bare) => 2,
        (MatcherPattern, Input | Output) => 1,
        (MatcherTarget, Circle) => 1,
        (MatcherTarget, Interior) => 2,
        (MatcherTarget, Bare) => 2,
        (MatcherTarget, Input | Output) => 2,
        (Minimal, Circle | Interior | Input | Output) => 1,
        (Minimal, Bare) => 2,
    }
}

/// Re-subdivide every wire of `g` to the vertex count prescribed by
/// `mode`.  Boundary vertices keep their names; internal names and edge
/// names are reused in path order where possible.  Box membership of a
/// wire's internal vertices is carried over to the rebuilt internals.
/// The result is wire-homeomorphic to the input.  Isolated wire-vertices
/// are untouched.
pub fn normalize(g: &Graph, mode: NormalizeMode) -> Graph {
    let dec = wires(g);
    let mut out = g.clone();
    for w in &dec.wires {
        let want_total = wire_vertex_count(mode, w.kind);
        // how many of the wanted vertices are boundary endpoints that
        // must stay
        let fixed_ends = match w.kind {
            WireKind::Bare => 2,
            WireKind::Input | WireKind::Output => 1,
            WireKind::Circle | WireKind::Interior => 0,
        };
        assert!(want_total >= fixed_ends, "scheme keeps boundary vertices");
        let want_internal = want_total - fixed_ends;

        let old_internal: Vec<String> = w.internal_vertices().to_vec();
        // boxes covering this wire.  Openness forces a box to contain a
        // wire wholly or not at all, so any hit on the wire's own
        // vertices (boundary ends included) counts.
        let covering: BTreeSet<String> = out
            .edges
            .values()
            .filter(|d| out.is_bang(&d.src) && w.vertices.contains(&d.tgt))
            .map(|d| d.src.clone())
            .collect();

        // tear out the wire's own vertices and all its edges
        for v in &old_internal {
            out.vertices.remove(v);
        }
        out.edges.retain(|e, d| {
            !w.edges.contains(e)
                && !old_internal.contains(&d.src)
                && !old_internal.contains(&d.tgt)
        });

        // rebuild: the chain of way-points from source to target
        let wiretype = w.wiretype.clone();
        let vdata = crate::graph::VData::wire(wiretype);
        let mut internals = Vec::with_capacity(want_internal);
        for i in 0..want_internal {
            let name = match old_internal.get(i) {
                Some(n) => n.clone(),
                None => {
                    let base = old_internal.last().cloned().unwrap_or_else(|| {
                        // wire had no internals: derive from an endpoint
                        w.vertices.first().cloned().unwrap_or_else(|| "w".to_string())
                    });
                    out.fresh_name(&base)
                }
            };
            out.vertices.insert(name.clone(), vdata.clone());
            internals.push(name);
        }

        // way-points: source endpoint, internals, target endpoint (a
        // circle closes back on its first internal vertex)
        let mut points: Vec<String> = Vec::new();
        if w.kind == WireKind::Circle {
            points.extend(internals.iter().cloned());
            points.push(internals[0].clone());
        } else {
            points.push(w.source.clone().unwrap());
            points.extend(internals.iter().cloned());
            points.push(w.target.clone().unwrap());
        }

        // edge ports: first edge keeps the original first-edge port (for
        // output/interior wires out of a node), last edge keeps the
        // original last-edge port (into a node)
        let first_port = out_port_of(g, w);
        let last_port = in_port_of(g, w);
        let seg_count = points.len() - 1;
        for i in 0..seg_count {
            let port = if i == 0 && first_port.is_some() {
                first_port
            } else if i == seg_count - 1 && last_port.is_some() {
                last_port
            } else {
                None
            };
            let base = w.edges.get(i).cloned().unwrap_or_else(|| w.edges[0].clone());
            let name = out.fresh_name(&base);
            out.edges.insert(
                name,
                EData { src: points[i].clone(), tgt: points[i + 1].clone(), port },
            );
        }

        // restore box membership on the rebuilt internals
        for b in &covering {
            for v in &internals {
                let name = out.fresh_name(&format!("p_{b}_{v}"));
                out.edges.insert(name, EData { src: b.clone(), tgt: v.clone(), port: None });
            }
        }
    }
    out
}

fn out_port_of(g: &Graph, w: &Wire) -> Option<crate::graph::Port> {
    // port of the edge leaving a node source
    match w.kind {
        WireKind::Interior | WireKind::Output => g.edges[&w.edges[0]].port,
        _ => None,
    }
}

fn in_port_of(g: &Graph, w: &Wire) -> Option<crate::graph::Port> {
    // port of the edge entering a node target
    match w.kind {
        WireKind::Interior | WireKind::Input => g.edges[w.edges.last().unwrap()].port,
        _ => None,
    }
}

/// Openness of a vertex set within `g`: no edge (in either direction)
/// between a member and an outside wire-vertex, and no outside
/// fixed-port edge incident to a member.  Membership edges are ignored.
pub fn is_open_vertex_set(g: &Graph, vs: &BTreeSet<String>) -> Result<bool> {
    for v in vs {
        g.vertex(v)?;
    }
    for d in g.edges.values() {
        if g.is_bang(&d.src) {
            continue;
        }
        let s_in = vs.contains(&d.src);
        let t_in = vs.contains(&d.tgt);
        if s_in == t_in {
            continue;
        }
        let outside = if s_in { &d.tgt } else { &d.src };
        if g.is_wire(outside) {
            return Ok(false);
        }
        // outside endpoint is a node-vertex: permitted only through a
        // variable port
        if let (Some(p), VType::Node(m)) = (&d.port, &g.vertex(outside)?.vtype) {
            let spec = g.sig.port(m, p.dir, p.index).map_err(|_| {
                Error::NotSubgraph(format!("edge addresses a missing port on {m}"))
            })?;
            if spec.arity == Arity::Fixed {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Openness of a subgraph: `sub` must be a full-on-its-vertices subgraph
/// of `g` (same data, and every `g`-edge between `sub` vertices present).
pub fn is_open_subgraph(g: &Graph, sub: &Graph) -> Result<bool> {
    g.check_subgraph(sub)?;
    let vs: BTreeSet<String> = sub.vertices.keys().cloned().collect();
    for (e, d) in &g.edges {
        if vs.contains(&d.src) && vs.contains(&d.tgt) && !sub.edges.contains_key(e) {
            return Err(Error::NotSubgraph(format!(
                "subgraph is not full: edge {e} is missing"
            )));
        }
    }
    is_open_vertex_set(g, &vs)
}
