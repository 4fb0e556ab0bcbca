//! Typed graphs, graph morphisms, and pushout constructions.
//!
//! A [`Graph`] is a finite directed graph whose vertices and edges are
//! typed over the typegraph of a [`Signature`]: each vertex is a
//! *wire-vertex* (typed by an object), a *node-vertex* (typed by a
//! generator), or a *`!`-vertex* (a replication marker), and each edge is
//! typed by how its endpoints meet — a wire-to-wire segment, a port edge
//! attaching a wire to a generator port, or a membership edge out of a
//! `!`-vertex.  The typing is stored implicitly: vertex sorts plus the
//! optional port annotation on node-incident edges determine the
//! typegraph image uniquely, and [`validate_typing`] checks that this
//! image is well defined.
//!
//! Morphisms between graphs over the same signature preserve structure
//! and typing.  [`check_morphism`] computes the properties the rewriting
//! machinery cares about: injectivity, arity-matching on fixed ports,
//! local isomorphism on generator neighbourhoods, and reflection of box
//! membership.  [`pushout`] and [`pushout_complement`] are the two halves
//! of double-pushout rewriting.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signature::{Arity, Dir, Signature};

/// The sort of a vertex: a wire point of some object type, a generator
/// occurrence, or a replication marker.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum VType {
    Wire(String),
    Node(String),
    Bang,
}

/// Per-vertex data: its sort and, for `!`-vertices, an optional
/// fixing tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VData {
    pub vtype: VType,
    pub fixed: Option<String>,
}

impl VData {
    pub fn wire(object: impl Into<String>) -> Self {
        VData { vtype: VType::Wire(object.into()), fixed: None }
    }
    pub fn node(morphism: impl Into<String>) -> Self {
        VData { vtype: VType::Node(morphism.into()), fixed: None }
    }
    pub fn bang() -> Self {
        VData { vtype: VType::Bang, fixed: None }
    }
}

/// A port address on a generator: direction and 1-based index into the
/// corresponding port list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Port {
    pub dir: Dir,
    pub index: usize,
}

/// Per-edge data.  `port` is present exactly on edges incident to a
/// node-vertex (it selects the generator port); wire-to-wire and
/// `!`-membership edges carry none.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EData {
    pub src: String,
    pub tgt: String,
    pub port: Option<Port>,
}

/// A finite directed graph typed over a signature.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    pub sig: Arc<Signature>,
    pub vertices: BTreeMap<String, VData>,
    pub edges: BTreeMap<String, EData>,
}

impl Graph {
    /// The empty graph over a signature.
    pub fn empty(sig: Arc<Signature>) -> Self {
        Graph { sig, vertices: BTreeMap::new(), edges: BTreeMap::new() }
    }

    /// Vertex data, erroring with the name if absent.
    pub fn vertex(&self, name: &str) -> Result<&VData> {
        self.vertices.get(name).ok_or_else(|| Error::UnknownVertex(name.to_string()))
    }

    pub fn is_wire(&self, name: &str) -> bool {
        matches!(self.vertices.get(name), Some(VData { vtype: VType::Wire(_), .. }))
    }

    pub fn is_node(&self, name: &str) -> bool {
        matches!(self.vertices.get(name), Some(VData { vtype: VType::Node(_), .. }))
    }

    pub fn is_bang(&self, name: &str) -> bool {
        matches!(self.vertices.get(name), Some(VData { vtype: VType::Bang, .. }))
    }

    /// Names of all `!`-vertices.
    pub fn bang_vertices(&self) -> Vec<String> {
        self.vertices
            .iter()
            .filter(|(_, d)| d.vtype == VType::Bang)
            .map(|(n, _)| n.clone())
            .collect()
    }

    /// True if the graph contains no `!`-vertices.
    pub fn is_concrete(&self) -> bool {
        self.vertices.values().all(|d| d.vtype != VType::Bang)
    }

    /// Whether an edge is a `!`-membership edge (source is a
    /// `!`-vertex).
    pub fn is_bang_edge(&self, e: &EData) -> bool {
        self.is_bang(&e.src)
    }

    /// Whether an edge connects two wire-vertices.
    pub fn is_wire_edge(&self, e: &EData) -> bool {
        self.is_wire(&e.src) && self.is_wire(&e.tgt)
    }

    /// Whether an edge attaches a wire to a generator port.
    pub fn is_port_edge(&self, e: &EData) -> bool {
        !self.is_bang(&e.src) && (self.is_node(&e.src) || self.is_node(&e.tgt))
    }

    /// A name not yet used by any vertex or edge: `base` itself if free,
    /// otherwise `base.1`, `base.2`, ... (first free suffix).
    pub fn fresh_name(&self, base: &str) -> String {
        if !self.vertices.contains_key(base) && !self.edges.contains_key(base) {
            return base.to_string();
        }
        for k in 1.. {
            let cand = format!("{base}.{k}");
            if !self.vertices.contains_key(&cand) && !self.edges.contains_key(&cand) {
                return cand;
            }
        }
        unreachable!()
    }

    /// Insert an edge under a fresh name derived from `base`, returning
    /// the name used.
    pub fn add_edge(&mut self, base: &str, data: EData) -> String {
        let name = self.fresh_name(base);
        self.edges.insert(name.clone(), data);
        name
    }

    /// The full subgraph on a set of vertices: those vertices plus every
    /// edge with both endpoints among them.
    pub fn full_subgraph(&self, vs: &BTreeSet<String>) -> Result<Graph> {
        let mut g = Graph::empty(self.sig.clone());
        for v in vs {
            g.vertices.insert(v.clone(), self.vertex(v)?.clone());
        }
        for (e, d) in &self.edges {
            if vs.contains(&d.src) && vs.contains(&d.tgt) {
                g.edges.insert(e.clone(), d.clone());
            }
        }
        Ok(g)
    }

    /// Check that `sub`'s vertices and edges all occur in `self` with
    /// identical data, i.e. that the name-preserving inclusion is a
    /// morphism.
    pub fn check_subgraph(&self, sub: &Graph) -> Result<()> {
        for (v, d) in &sub.vertices {
            match self.vertices.get(v) {
                Some(d2) if d2 == d => {}
                Some(_) => return Err(Error::NotSubgraph(format!("vertex {v} differs"))),
                None => return Err(Error::NotSubgraph(format!("vertex {v} is absent"))),
            }
        }
        for (e, d) in &sub.edges {
            match self.edges.get(e) {
                Some(d2) if d2 == d => {}
                Some(_) => return Err(Error::NotSubgraph(format!("edge {e} differs"))),
                None => return Err(Error::NotSubgraph(format!("edge {e} is absent"))),
            }
        }
        Ok(())
    }

    /// The name-preserving inclusion morphism of a subgraph.
    pub fn inclusion_from(&self, sub: &Graph) -> Result<Morphism> {
        self.check_subgraph(sub)?;
        Ok(Morphism {
            dom: sub.clone(),
            cod: self.clone(),
            vmap: sub.vertices.keys().map(|v| (v.clone(), v.clone())).collect(),
            emap: sub.edges.keys().map(|e| (e.clone(), e.clone())).collect(),
        })
    }

    /// Remove a set of vertices and every edge incident to one of them.
    pub fn without_vertices(&self, vs: &BTreeSet<String>) -> Graph {
        let mut g = self.clone();
        g.vertices.retain(|v, _| !vs.contains(v));
        g.edges.retain(|_, d| !vs.contains(&d.src) && !vs.contains(&d.tgt));
        g
    }

    /// Disjoint union; names from `other` are suffixed on clash, with
    /// `other`'s vertices processed in name order.
    pub fn disjoint_union(&self, other: &Graph) -> Result<(Graph, Morphism, Morphism)> {
        let empty = Graph::empty(self.sig.clone());
        let left = Morphism {
            dom: empty.clone(),
            cod: self.clone(),
            vmap: BTreeMap::new(),
            emap: BTreeMap::new(),
        };
        let right = Morphism {
            dom: empty,
            cod: other.clone(),
            vmap: BTreeMap::new(),
            emap: BTreeMap::new(),
        };
        pushout(&right, &left)
    }
}

/// JSON form of a vertex: `{"type": "Z"}` for wire- and node-vertices
/// (resolved against the signature), or `{"kind": "bang"}` with an
/// optional `"fixed"` tag for `!`-vertices.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VertexJson {
    #[serde(rename = "type", skip_serializing_if = "Option::is_none", default)]
    pub vtype: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fixed: Option<String>,
}

/// JSON form of an edge.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeJson {
    pub src: String,
    pub tgt: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub port: Option<Port>,
}

/// JSON form of a graph.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphJson {
    #[serde(default)]
    pub vertices: BTreeMap<String, VertexJson>,
    #[serde(default)]
    pub edges: BTreeMap<String, EdgeJson>,
}

impl Graph {
    /// Resolve a JSON graph against a signature.  Fails where the typing
    /// cannot even be resolved (unknown type names, unknown endpoints,
    /// port index 0); all other typing violations are left to
    /// [`validate_typing`] so they can be reported together.
    pub fn from_json(sig: Arc<Signature>, json: &GraphJson) -> Result<Graph> {
        let mut g = Graph::empty(sig.clone());
        for (name, vj) in &json.vertices {
            let vtype = match (&vj.kind, &vj.vtype) {
                (Some(k), rest) => {
                    if k != "bang" {
                        return Err(Error::InvalidGraph(format!(
                            "vertex {name} has unknown kind {k:?}"
                        )));
                    }
                    if rest.is_some() {
                        return Err(Error::InvalidGraph(format!(
                            "vertex {name} has both a kind and a type"
                        )));
                    }
                    VType::Bang
                }
                (None, Some(t)) if sig.objects.contains(t) => VType::Wire(t.clone()),
                (None, Some(t)) if sig.morphisms.contains_key(t) => VType::Node(t.clone()),
                (None, Some(t)) => {
                    return Err(Error::InvalidGraph(format!(
                        "vertex {name} has type {t} which is neither an object nor a morphism"
                    )))
                }
                (None, None) => {
                    return Err(Error::InvalidGraph(format!("vertex {name} has neither kind nor type")))
                }
            };
            if vj.fixed.is_some() && vtype != VType::Bang {
                return Err(Error::InvalidGraph(format!(
                    "vertex {name} carries a fixing tag but is not a bang vertex"
                )));
            }
            g.vertices.insert(name.clone(), VData { vtype, fixed: vj.fixed.clone() });
        }
        for (name, ej) in &json.edges {
            for end in [&ej.src, &ej.tgt] {
                if !g.vertices.contains_key(end) {
                    return Err(Error::InvalidGraph(format!(
                        "edge {name} references unknown vertex {end}"
                    )));
                }
            }
            if let Some(p) = &ej.port {
                if p.index == 0 {
                    return Err(Error::InvalidGraph(format!("edge {name} has port index 0")));
                }
            }
            g.edges.insert(
                name.clone(),
                EData { src: ej.src.clone(), tgt: ej.tgt.clone(), port: ej.port },
            );
        }
        Ok(g)
    }

    pub fn to_json(&self) -> GraphJson {
        GraphJson {
            vertices: self
                .vertices
                .iter()
                .map(|(n, d)| {
                    let vj = match &d.vtype {
                        VType::Wire(o) => VertexJson { vtype: Some(o.clone()), kind: None, fixed: None },
                        VType::Node(m) => VertexJson { vtype: Some(m.clone()), kind: None, fixed: None },
                        VType::Bang => VertexJson {
                            vtype: None,
                            kind: Some("bang".to_string()),
                            fixed: d.fixed.clone(),
                        },
                    };
                    (n.clone(), vj)
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|(n, d)| {
                    (n.clone(), EdgeJson { src: d.src.clone(), tgt: d.tgt.clone(), port: d.port })
                })
                .collect(),
        }
    }
}

/// Check that a graph is well typed over its signature's typegraph,
/// returning one diagnostic per violation (empty means well typed).
pub fn validate_typing(g: &Graph) -> Vec<String> {
    let mut diags = Vec::new();
    for (v, d) in &g.vertices {
        match &d.vtype {
            VType::Wire(o) if !g.sig.objects.contains(o) => {
                diags.push(format!("vertex {v} has undeclared object type {o}"));
            }
            VType::Node(m) if !g.sig.morphisms.contains_key(m) => {
                diags.push(format!("vertex {v} has undeclared morphism type {m}"));
            }
            _ => {}
        }
        if d.fixed.is_some() && d.vtype != VType::Bang {
            diags.push(format!("vertex {v} carries a fixing tag but is not a bang vertex"));
        }
    }
    for (e, d) in &g.edges {
        let (src, tgt) = match (g.vertices.get(&d.src), g.vertices.get(&d.tgt)) {
            (Some(s), Some(t)) => (s, t),
            _ => {
                diags.push(format!("edge {e} references an unknown vertex"));
                continue;
            }
        };
        match (&src.vtype, &tgt.vtype) {
            (VType::Bang, _) => {
                if d.port.is_some() {
                    diags.push(format!("membership edge {e} carries a port"));
                }
            }
            (_, VType::Bang) => {
                diags.push(format!("edge {e} enters a bang vertex from a non-bang vertex"));
            }
            (VType::Wire(a), VType::Wire(b)) => {
                if d.port.is_some() {
                    diags.push(format!("wire edge {e} carries a port"));
                } else if a != b {
                    diags.push(format!("wire edge {e} joins different object types {a} and {b}"));
                }
            }
            (VType::Node(_), VType::Node(_)) => {
                diags.push(format!("edge {e} directly connects two node-vertices"));
            }
            (VType::Wire(o), VType::Node(m)) | (VType::Node(m), VType::Wire(o)) => {
                let into_node = matches!(&src.vtype, VType::Wire(_));
                match d.port {
                    None => diags.push(format!("edge {e} touches node-vertex but has no port")),
                    Some(p) => {
                        let want = if into_node { Dir::In } else { Dir::Out };
                        if p.dir != want {
                            diags.push(format!(
                                "edge {e} has port direction inconsistent with its orientation"
                            ));
                            continue;
                        }
                        match g.sig.port(m, p.dir, p.index) {
                            Err(_) => diags.push(format!(
                                "edge {e} addresses missing port {}:{} on {m}",
                                match p.dir {
                                    Dir::In => "in",
                                    Dir::Out => "out",
                                },
                                p.index
                            )),
                            Ok(spec) => {
                                if &spec.object != o {
                                    diags.push(format!(
                                        "edge {e} connects a {o} wire to a {} port",
                                        spec.object
                                    ));
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    diags
}

/// A graph morphism: vertex and edge maps between graphs over one
/// signature.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Morphism {
    pub dom: Graph,
    pub cod: Graph,
    pub vmap: BTreeMap<String, String>,
    pub emap: BTreeMap<String, String>,
}

impl Morphism {
    pub fn identity(g: &Graph) -> Morphism {
        Morphism {
            dom: g.clone(),
            cod: g.clone(),
            vmap: g.vertices.keys().map(|v| (v.clone(), v.clone())).collect(),
            emap: g.edges.keys().map(|e| (e.clone(), e.clone())).collect(),
        }
    }

    /// Composition `g ∘ self` (apply `self` first).
    pub fn then(&self, g: &Morphism) -> Result<Morphism> {
        let vmap = self
            .vmap
            .iter()
            .map(|(a, b)| {
                g.vmap
                    .get(b)
                    .map(|c| (a.clone(), c.clone()))
                    .ok_or_else(|| Error::UnknownVertex(b.clone()))
            })
            .collect::<Result<_>>()?;
        let emap = self
            .emap
            .iter()
            .map(|(a, b)| {
                g.emap
                    .get(b)
                    .map(|c| (a.clone(), c.clone()))
                    .ok_or_else(|| Error::NotSubgraph(format!("edge {b} has no image")))
            })
            .collect::<Result<_>>()?;
        Ok(Morphism { dom: self.dom.clone(), cod: g.cod.clone(), vmap, emap })
    }

    /// Image of a vertex, erroring if unmapped.
    pub fn v(&self, name: &str) -> Result<&String> {
        self.vmap.get(name).ok_or_else(|| Error::UnknownVertex(name.to_string()))
    }

    pub fn vertex_image(&self) -> BTreeSet<String> {
        self.vmap.values().cloned().collect()
    }

    pub fn edge_image(&self) -> BTreeSet<String> {
        self.emap.values().cloned().collect()
    }
}

/// The properties of a morphism that the rewriting machinery inspects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MorphismFlags {
    /// Total, structure-preserving, and typing-preserving.
    pub valid: bool,
    /// Injective on vertices and edges.
    pub mono: bool,
    /// Restricts to a bijection on every fixed-port neighbourhood of
    /// every node-vertex.
    pub arity_matching: bool,
    /// Restricts to a bijection on the full edge neighbourhood of every
    /// node-vertex.
    pub local_iso: bool,
    /// Every membership edge of the codomain whose target lies in the
    /// image is itself in the image.
    pub reflects_bbox_containment: bool,
}

fn etype_key(g: &Graph, e: &EData) -> (i8, Option<Port>) {
    // A small discriminant of the typegraph edge an instance edge maps
    // to; endpoints' vertex types are compared separately.
    let sort = if g.is_bang(&e.src) {
        0
    } else if g.is_port_edge(e) {
        1
    } else {
        2
    };
    (sort, e.port)
}

/// Compute the [`MorphismFlags`] of a morphism.  Errors if the two
/// graphs are over different signatures.
pub fn check_morphism(f: &Morphism) -> Result<MorphismFlags> {
    if f.dom.sig != f.cod.sig {
        return Err(Error::TypegraphMismatch(
            "morphism endpoints are typed over different signatures".to_string(),
        ));
    }
    let mut valid = true;

    // totality and image existence
    if f.vmap.len() != f.dom.vertices.len() || f.emap.len() != f.dom.edges.len() {
        valid = false;
    }
    for (a, b) in &f.vmap {
        match (f.dom.vertices.get(a), f.cod.vertices.get(b)) {
            (Some(da), Some(db)) => {
                if da.vtype != db.vtype {
                    valid = false;
                }
            }
            _ => valid = false,
        }
    }
    for (a, b) in &f.emap {
        match (f.dom.edges.get(a), f.cod.edges.get(b)) {
            (Some(da), Some(db)) => {
                if f.vmap.get(&da.src) != Some(&db.src) || f.vmap.get(&da.tgt) != Some(&db.tgt) {
                    valid = false;
                }
                if etype_key(&f.dom, da) != etype_key(&f.cod, db) {
                    valid = false;
                }
            }
            _ => valid = false,
        }
    }

    let mono = valid
        && f.vmap.values().collect::<BTreeSet<_>>().len() == f.vmap.len()
        && f.emap.values().collect::<BTreeSet<_>>().len() == f.emap.len();

    // port-edge neighbourhoods of node-vertices
    let port_edges_at = |g: &Graph, v: &str| -> Vec<String> {
        g.edges
            .iter()
            .filter(|(_, d)| {
                g.is_port_edge(d)
                    && ((d.src == v && g.is_node(&d.src)) || (d.tgt == v && g.is_node(&d.tgt)))
            })
            .map(|(e, _)| e.clone())
            .collect()
    };

    let mut arity_matching = valid;
    let mut local_iso = valid;
    if valid {
        for (v, d) in &f.dom.vertices {
            let m = match &d.vtype {
                VType::Node(m) => m,
                _ => continue,
            };
            let fv = &f.vmap[v];
            let dom_edges = port_edges_at(&f.dom, v);
            let cod_edges: BTreeSet<String> = port_edges_at(&f.cod, fv).into_iter().collect();
            // full neighbourhood: injective and surjective
            let images: BTreeSet<&String> = dom_edges.iter().map(|e| &f.emap[e]).collect();
            if images.len() != dom_edges.len() || images.len() != cod_edges.len() {
                local_iso = false;
            }
            // fixed ports only
            let mt = match f.dom.sig.morphisms.get(m) {
                Some(mt) => mt,
                None => {
                    arity_matching = false;
                    local_iso = false;
                    continue;
                }
            };
            for dir in [Dir::In, Dir::Out] {
                for (i, spec) in mt.ports(dir).iter().enumerate() {
                    if spec.arity != Arity::Fixed {
                        continue;
                    }
                    let port = Port { dir, index: i + 1 };
                    let at_port = |g: &Graph, w: &str, es: &[String]| -> BTreeSet<String> {
                        es.iter()
                            .filter(|e| {
                                let d = &g.edges[*e];
                                d.port == Some(port)
                                    && (if port.dir == Dir::In { &d.tgt } else { &d.src }) == w
                            })
                            .cloned()
                            .collect()
                    };
                    let dp = at_port(&f.dom, v, &dom_edges);
                    let cp = at_port(&f.cod, fv, &cod_edges.iter().cloned().collect::<Vec<_>>());
                    let imgs: BTreeSet<&String> = dp.iter().map(|e| &f.emap[e]).collect();
                    if imgs.len() != dp.len() || imgs.len() != cp.len() {
                        arity_matching = false;
                    }
                }
            }
        }
    }

    // membership reflection
    let mut reflects = valid;
    if valid {
        let vimage = f.vertex_image();
        let eimage = f.edge_image();
        for (e, d) in &f.cod.edges {
            if f.cod.is_bang(&d.src) && vimage.contains(&d.tgt) && !eimage.contains(e) {
                reflects = false;
                break;
            }
        }
    }

    Ok(MorphismFlags {
        valid,
        mono,
        arity_matching,
        local_iso,
        reflects_bbox_containment: reflects,
    })
}

fn require_mono(f: &Morphism, which: &str) -> Result<()> {
    let flags = check_morphism(f)?;
    if !flags.valid {
        return Err(Error::NotMono(format!("{which} leg is not a graph morphism")));
    }
    if !flags.mono {
        return Err(Error::NotMono(format!("{which} leg is not injective")));
    }
    Ok(())
}

/// Pushout of a span of monos `b ← a → c`.  The result keeps every name
/// of the right leg's codomain; material only in the left leg's codomain
/// is carried over in name order, suffixed on clash.  Returns the result
/// and the two injections.
pub fn pushout(f: &Morphism, g: &Morphism) -> Result<(Graph, Morphism, Morphism)> {
    if f.dom != g.dom {
        return Err(Error::NotMono("span legs have different apexes".to_string()));
    }
    require_mono(f, "left")?;
    require_mono(g, "right")?;

    let b = &f.cod;
    let c = &g.cod;
    let mut p = c.clone();

    // invert the left leg to find, for each shared item, its apex name
    let f_vinv: BTreeMap<&String, &String> = f.vmap.iter().map(|(a, b)| (b, a)).collect();
    let f_einv: BTreeMap<&String, &String> = f.emap.iter().map(|(a, b)| (b, a)).collect();

    let mut vmap_b: BTreeMap<String, String> = BTreeMap::new();
    for (v, d) in &b.vertices {
        match f_vinv.get(v) {
            Some(a) => {
                vmap_b.insert(v.clone(), g.vmap[*a].clone());
            }
            None => {
                let name = p.fresh_name(v);
                p.vertices.insert(name.clone(), d.clone());
                vmap_b.insert(v.clone(), name);
            }
        }
    }
    let mut emap_b: BTreeMap<String, String> = BTreeMap::new();
    for (e, d) in &b.edges {
        match f_einv.get(e) {
            Some(a) => {
                emap_b.insert(e.clone(), g.emap[*a].clone());
            }
            None => {
                let name = p.fresh_name(e);
                p.edges.insert(
                    name.clone(),
                    EData { src: vmap_b[&d.src].clone(), tgt: vmap_b[&d.tgt].clone(), port: d.port },
                );
                emap_b.insert(e.clone(), name);
            }
        }
    }

    let inj_b = Morphism { dom: b.clone(), cod: p.clone(), vmap: vmap_b, emap: emap_b };
    let inj_c = Morphism {
        dom: c.clone(),
        cod: p.clone(),
        vmap: c.vertices.keys().map(|v| (v.clone(), v.clone())).collect(),
        emap: c.edges.keys().map(|e| (e.clone(), e.clone())).collect(),
    };
    Ok((p, inj_b, inj_c))
}

/// Pushout complement of composable monos `a → b → c`: the subgraph `d`
/// of `c` obtained by removing the image of `g` outside the image of
/// `g ∘ f`, together with the monos `a → d` and `d → c`.  Fails with the
/// first dangling edge (in name order) if an edge outside the removed
/// image is incident to a removed vertex.
pub fn pushout_complement(f: &Morphism, g: &Morphism) -> Result<(Graph, Morphism, Morphism)> {
    require_mono(f, "inner")?;
    require_mono(g, "outer")?;
    if f.cod != g.dom {
        return Err(Error::NotMono("legs are not composable".to_string()));
    }
    let gf = f.then(g)?;

    let keep_v: BTreeSet<String> = gf.vertex_image();
    let keep_e: BTreeSet<String> = gf.edge_image();
    let removed_v: BTreeSet<String> =
        g.vertex_image().difference(&keep_v).cloned().collect();
    let removed_e: BTreeSet<String> = g.edge_image().difference(&keep_e).cloned().collect();

    for (e, d) in &g.cod.edges {
        if removed_e.contains(e) {
            continue;
        }
        if removed_v.contains(&d.src) || removed_v.contains(&d.tgt) {
            return Err(Error::NoComplement(e.clone()));
        }
    }

    let mut dgr = g.cod.clone();
    dgr.vertices.retain(|v, _| !removed_v.contains(v));
    dgr.edges.retain(|e, _| !removed_e.contains(e));

    let into_d = Morphism { dom: f.dom.clone(), cod: dgr.clone(), vmap: gf.vmap, emap: gf.emap };
    let from_d = g.cod.inclusion_from(&dgr)?;
    Ok((dgr, into_d, from_d))
}

/// For graphs where any two vertices are joined by at most one edge of a
/// given port annotation, a vertex map determines at most one compatible
/// edge map; compute it, or `None` if some edge has no image.
pub fn induced_emap(
    dom: &Graph,
    cod: &Graph,
    vmap: &BTreeMap<String, String>,
) -> Option<BTreeMap<String, String>> {
    let mut by_ends: BTreeMap<(&String, &String, Option<Port>), &String> = BTreeMap::new();
    for (e, d) in &cod.edges {
        by_ends.insert((&d.src, &d.tgt, d.port), e);
    }
    let mut emap = BTreeMap::new();
    for (e, d) in &dom.edges {
        let s = vmap.get(&d.src)?;
        let t = vmap.get(&d.tgt)?;
        let img = by_ends.get(&(s, t, d.port))?;
        emap.insert(e.clone(), (*img).clone());
    }
    Some(emap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signature::{MorphismType, PortSpec};

    pub fn test_sig() -> Arc<Signature> {
        // one object, one fixed 1→1 generator, one variable-arity generator
        let mut morphisms = BTreeMap::new();
        morphisms.insert(
            "h".to_string(),
            MorphismType {
                dom: vec![PortSpec { object: "A".into(), arity: Arity::Fixed }],
                cod: vec![PortSpec { object: "A".into(), arity: Arity::Fixed }],
            },
        );
        morphisms.insert(
            "Z".to_string(),
            MorphismType {
                dom: vec![PortSpec { object: "A".into(), arity: Arity::Variable }],
                cod: vec![PortSpec { object: "A".into(), arity: Arity::Variable }],
            },
        );
        Arc::new(Signature { objects: ["A".to_string()].into_iter().collect(), morphisms })
    }

    fn wire_to_node(sig: Arc<Signature>) -> Graph {
        let mut g = Graph::empty(sig);
        g.vertices.insert("w1".into(), VData::wire("A"));
        g.vertices.insert("n".into(), VData::node("h"));
        g.vertices.insert("w2".into(), VData::wire("A"));
        g.edges.insert(
            "e1".into(),
            EData { src: "w1".into(), tgt: "n".into(), port: Some(Port { dir: Dir::In, index: 1 }) },
        );
        g.edges.insert(
            "e2".into(),
            EData { src: "n".into(), tgt: "w2".into(), port: Some(Port { dir: Dir::Out, index: 1 }) },
        );
        g
    }

    #[test]
    fn json_round_trip() {
        let g = wire_to_node(test_sig());
        let j = g.to_json();
        let text = serde_json::to_string(&j).unwrap();
        let back: GraphJson = serde_json::from_str(&text).unwrap();
        let g2 = Graph::from_json(g.sig.clone(), &back).unwrap();
        assert_eq!(g, g2);
    }

    #[test]
    fn from_json_rejects_unknown_type() {
        let text = r#"{"vertices": {"v": {"type": "Q"}}, "edges": {}}"#;
        let j: GraphJson = serde_json::from_str(text).unwrap();
        assert!(matches!(Graph::from_json(test_sig(), &j), Err(Error::InvalidGraph(_))));
    }

    #[test]
    fn typing_diagnostics() {
        let sig = test_sig();
        let mut g = wire_to_node(sig);
        assert!(validate_typing(&g).is_empty());

        // port on a wire edge
        g.vertices.insert("w3".into(), VData::wire("A"));
        g.edges.insert(
            "bad1".into(),
            EData { src: "w2".into(), tgt: "w3".into(), port: Some(Port { dir: Dir::In, index: 1 }) },
        );
        // missing port on a node edge
        g.edges.insert("bad2".into(), EData { src: "w3".into(), tgt: "n".into(), port: None });
        // port index out of range
        g.edges.insert(
            "bad3".into(),
            EData { src: "w3".into(), tgt: "n".into(), port: Some(Port { dir: Dir::In, index: 2 }) },
        );
        // membership edge into a bang from a wire
        g.vertices.insert("b".into(), VData::bang());
        g.edges.insert("bad4".into(), EData { src: "w3".into(), tgt: "b".into(), port: None });
        // fixing tag on a wire
        g.vertices.insert(
            "w4".into(),
            VData { vtype: VType::Wire("A".into()), fixed: Some("x".into()) },
        );
        let diags = validate_typing(&g);
        assert_eq!(diags.len(), 5, "{diags:?}");
    }

    #[test]
    fn identity_has_all_flags() {
        let g = wire_to_node(test_sig());
        let flags = check_morphism(&Morphism::identity(&g)).unwrap();
        assert!(flags.valid && flags.mono && flags.arity_matching && flags.local_iso);
        assert!(flags.reflects_bbox_containment);
    }

    #[test]
    fn collapsing_wire_vertices_is_valid_not_mono() {
        let sig = test_sig();
        // dom: w1 -> w2 -> w3 (wire path); cod: u1 -> u1 (self-loop circle)
        let mut dom = Graph::empty(sig.clone());
        for w in ["w1", "w2", "w3"] {
            dom.vertices.insert(w.into(), VData::wire("A"));
        }
        dom.edges.insert("e1".into(), EData { src: "w1".into(), tgt: "w2".into(), port: None });
        dom.edges.insert("e2".into(), EData { src: "w2".into(), tgt: "w3".into(), port: None });
        let mut cod = Graph::empty(sig);
        cod.vertices.insert("u1".into(), VData::wire("A"));
        cod.vertices.insert("u2".into(), VData::wire("A"));
        cod.edges.insert("d1".into(), EData { src: "u1".into(), tgt: "u2".into(), port: None });
        cod.edges.insert("d2".into(), EData { src: "u2".into(), tgt: "u1".into(), port: None });
        let f = Morphism {
            dom,
            cod,
            vmap: [("w1", "u1"), ("w2", "u2"), ("w3", "u1")]
                .into_iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect(),
            emap: [("e1", "d1"), ("e2", "d2")]
                .into_iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect(),
        };
        let flags = check_morphism(&f).unwrap();
        assert!(flags.valid);
        assert!(!flags.mono);
    }

    #[test]
    fn missing_fixed_edge_breaks_arity_matching() {
        let sig = test_sig();
        // dom: node n with only its out-edge; cod: full h occurrence
        let cod = wire_to_node(sig.clone());
        let mut dom = Graph::empty(sig);
        dom.vertices.insert("n".into(), VData::node("h"));
        dom.vertices.insert("w2".into(), VData::wire("A"));
        dom.edges.insert(
            "e2".into(),
            EData { src: "n".into(), tgt: "w2".into(), port: Some(Port { dir: Dir::Out, index: 1 }) },
        );
        let f = cod.inclusion_from(&dom).unwrap();
        let flags = check_morphism(&f).unwrap();
        assert!(flags.valid && flags.mono);
        assert!(!flags.arity_matching);
        assert!(!flags.local_iso);
    }

    #[test]
    fn variable_port_superset_is_arity_matching_but_not_local_iso() {
        let sig = test_sig();
        // cod: spider with two in-wires; dom: same spider with one
        let mut cod = Graph::empty(sig.clone());
        cod.vertices.insert("s".into(), VData::node("Z"));
        cod.vertices.insert("a".into(), VData::wire("A"));
        cod.vertices.insert("b".into(), VData::wire("A"));
        for (e, w) in [("e1", "a"), ("e2", "b")] {
            cod.edges.insert(
                e.into(),
                EData { src: w.into(), tgt: "s".into(), port: Some(Port { dir: Dir::In, index: 1 }) },
            );
        }
        let mut dom = Graph::empty(sig);
        dom.vertices.insert("s".into(), VData::node("Z"));
        dom.vertices.insert("a".into(), VData::wire("A"));
        dom.edges.insert(
            "e1".into(),
            EData { src: "a".into(), tgt: "s".into(), port: Some(Port { dir: Dir::In, index: 1 }) },
        );
        let f = cod.inclusion_from(&dom).unwrap();
        let flags = check_morphism(&f).unwrap();
        assert!(flags.valid && flags.mono);
        assert!(flags.arity_matching, "no fixed ports on Z, vacuously arity-matching");
        assert!(!flags.local_iso, "e2 has no preimage");
    }

    #[test]
    fn membership_reflection_flag() {
        let sig = test_sig();
        let mut cod = Graph::empty(sig.clone());
        cod.vertices.insert("b".into(), VData::bang());
        cod.vertices.insert("w".into(), VData::wire("A"));
        cod.edges.insert("pb".into(), EData { src: "b".into(), tgt: "b".into(), port: None });
        cod.edges.insert("pw".into(), EData { src: "b".into(), tgt: "w".into(), port: None });
        // subgraph containing just w: the membership edge pw is not
        // reflected
        let mut dom = Graph::empty(sig);
        dom.vertices.insert("w".into(), VData::wire("A"));
        let f = cod.inclusion_from(&dom).unwrap();
        let flags = check_morphism(&f).unwrap();
        assert!(flags.valid && flags.mono);
        assert!(!flags.reflects_bbox_containment);
        // the full graph reflects
        let idf = Morphism::identity(&cod);
        assert!(check_morphism(&idf).unwrap().reflects_bbox_containment);
    }

    #[test]
    fn pushout_along_identity_gives_other_leg() {
        let g = wire_to_node(test_sig());
        let mut h = g.clone();
        h.vertices.insert("extra".into(), VData::wire("A"));
        let f = Morphism::identity(&g); // apex = G, left leg iso
        let inc = h.inclusion_from(&g).unwrap();
        let (p, _, inj_c) = pushout(&f, &inc).unwrap();
        assert_eq!(p, h);
        assert_eq!(inj_c.vmap.len(), h.vertices.len());
    }

    #[test]
    fn pushout_disjoint_apex_is_additive() {
        let g = wire_to_node(test_sig());
        let (u, inj_g, inj_h) = g.disjoint_union(&g).unwrap();
        assert_eq!(u.vertices.len(), 2 * g.vertices.len());
        assert_eq!(u.edges.len(), 2 * g.edges.len());
        // injections land disjointly
        let i1: BTreeSet<_> = inj_g.vmap.values().collect();
        let i2: BTreeSet<_> = inj_h.vmap.values().collect();
        assert!(i1.is_disjoint(&i2));
    }

    #[test]
    fn pushout_glues_on_shared_boundary() {
        let sig = test_sig();
        // apex: single wire-vertex w2; legs: two copies of w1->w2 path
        let mut apex = Graph::empty(sig.clone());
        apex.vertices.insert("m".into(), VData::wire("A"));
        let mut left = Graph::empty(sig.clone());
        left.vertices.insert("m".into(), VData::wire("A"));
        left.vertices.insert("l".into(), VData::wire("A"));
        left.edges.insert("el".into(), EData { src: "l".into(), tgt: "m".into(), port: None });
        let mut right = Graph::empty(sig);
        right.vertices.insert("m".into(), VData::wire("A"));
        right.vertices.insert("r".into(), VData::wire("A"));
        right.edges.insert("er".into(), EData { src: "m".into(), tgt: "r".into(), port: None });
        let f = left.inclusion_from(&apex).unwrap();
        let g = right.inclusion_from(&apex).unwrap();
        let (p, inj_l, inj_r) = pushout(&f, &g).unwrap();
        assert_eq!(p.vertices.len(), 3);
        assert_eq!(p.edges.len(), 2);
        assert_eq!(inj_l.vmap["m"], inj_r.vmap["m"]);
        assert_ne!(inj_l.vmap["l"], inj_r.vmap["r"]);
    }

    #[test]
    fn pushout_renames_clashes_deterministically() {
        let sig = test_sig();
        // both legs add a vertex named "x" not in the apex
        let apex = Graph::empty(sig.clone());
        let mut left = Graph::empty(sig.clone());
        left.vertices.insert("x".into(), VData::wire("A"));
        let mut right = Graph::empty(sig);
        right.vertices.insert("x".into(), VData::wire("A"));
        let f = Morphism {
            dom: apex.clone(),
            cod: left.clone(),
            vmap: BTreeMap::new(),
            emap: BTreeMap::new(),
        };
        let g = Morphism { dom: apex, cod: right, vmap: BTreeMap::new(), emap: BTreeMap::new() };
        let (p, inj_l, inj_r) = pushout(&f, &g).unwrap();
        assert_eq!(inj_r.vmap["x"], "x", "right-leg names kept");
        assert_eq!(inj_l.vmap["x"], "x.1", "left-leg clash suffixed");
        assert_eq!(p.vertices.len(), 2);
    }

    #[test]
    fn complement_of_iso_outer_is_apex_shaped() {
        let g = wire_to_node(test_sig());
        let mut sub = Graph::empty(g.sig.clone());
        sub.vertices.insert("w1".into(), VData::wire("A"));
        let f = g.inclusion_from(&sub).unwrap();
        let idg = Morphism::identity(&g);
        let (d, into_d, from_d) = pushout_complement(&f, &idg).unwrap();
        assert_eq!(d, sub, "iso outer leg collapses the complement to the apex");
        assert!(check_morphism(&into_d).unwrap().mono);
        assert!(check_morphism(&from_d).unwrap().mono);
    }

    #[test]
    fn complement_removes_interior() {
        let g = wire_to_node(test_sig());
        // remove the node and its edges, keeping the boundary wires
        let mut boundary = Graph::empty(g.sig.clone());
        boundary.vertices.insert("w1".into(), VData::wire("A"));
        boundary.vertices.insert("w2".into(), VData::wire("A"));
        let f = g.inclusion_from(&boundary).unwrap(); // boundary -> G
        let idg = Morphism::identity(&g);
        let (d, _, _) = pushout_complement(&f, &idg).unwrap();
        assert_eq!(d.vertices.len(), 2);
        assert!(d.edges.is_empty());
    }

    #[test]
    fn complement_reports_first_dangling_edge() {
        let g = wire_to_node(test_sig());
        // try to remove just the node: both port edges dangle, e1 first
        let mut mid = Graph::empty(g.sig.clone());
        mid.vertices.insert("n".into(), VData::node("h"));
        let sub_in_g = g.inclusion_from(&mid).unwrap();
        let empty = Graph::empty(g.sig.clone());
        let f = Morphism {
            dom: empty,
            cod: mid.clone(),
            vmap: BTreeMap::new(),
            emap: BTreeMap::new(),
        };
        let gm = Morphism {
            dom: mid,
            cod: g,
            vmap: sub_in_g.vmap,
            emap: sub_in_g.emap,
        };
        match pushout_complement(&f, &gm) {
            Err(Error::NoComplement(e)) => assert_eq!(e, "e1"),
            other => panic!("expected NoComplement, got {other:?}"),
        }
    }

    #[test]
    fn pushout_then_complement_round_trips() {
        let sig = test_sig();
        let mut apex = Graph::empty(sig.clone());
        apex.vertices.insert("m".into(), VData::wire("A"));
        let mut left = Graph::empty(sig.clone());
        left.vertices.insert("m".into(), VData::wire("A"));
        left.vertices.insert("l".into(), VData::wire("A"));
        left.edges.insert("el".into(), EData { src: "l".into(), tgt: "m".into(), port: None });
        let mut right = Graph::empty(sig);
        right.vertices.insert("m".into(), VData::wire("A"));
        right.vertices.insert("r".into(), VData::wire("A"));
        right.edges.insert("er".into(), EData { src: "m".into(), tgt: "r".into(), port: None });
        let f = left.inclusion_from(&apex).unwrap();
        let g = right.inclusion_from(&apex).unwrap();
        let (_, inj_l, inj_r) = pushout(&f, &g).unwrap();
        // complement of (apex -> left -> P) should recover right's shape
        let (d, _, _) = pushout_complement(&f, &inj_l).unwrap();
        assert_eq!(d.vertices.len(), right.vertices.len());
        assert_eq!(d.edges.len(), right.edges.len());
        let (d2, _, _) = pushout_complement(&g, &inj_r).unwrap();
        assert_eq!(d2.vertices.len(), left.vertices.len());
        assert_eq!(d2.edges.len(), left.edges.len());
    }

    #[test]
    fn induced_emap_matches_inclusion() {
        let g = wire_to_node(test_sig());
        let mut sub = Graph::empty(g.sig.clone());
        sub.vertices.insert("w1".into(), VData::wire("A"));
        sub.vertices.insert("n".into(), VData::node("h"));
        sub.edges.insert(
            "e1x".into(),
            EData { src: "w1".into(), tgt: "n".into(), port: Some(Port { dir: Dir::In, index: 1 }) },
        );
        let vmap: BTreeMap<String, String> =
            [("w1", "w1"), ("n", "n")].into_iter().map(|(a, b)| (a.into(), b.into())).collect();
        let emap = induced_emap(&sub, &g, &vmap).unwrap();
        assert_eq!(emap["e1x"], "e1");
    }
}
