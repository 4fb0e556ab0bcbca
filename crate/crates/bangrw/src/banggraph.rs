//! Pattern graphs: `!`-boxes, their operations, and instantiation.
//!
//! A pattern graph is a string graph extended with `!`-vertices.  An
//! edge from a `!`-vertex `b` to a vertex `v` records that `v` lies in
//! the box of `b`; the box `B(b)` is the full subgraph on `b` and its
//! successors.  Validity asks for four things: the underlying string
//! graph (everything except `!`-material) is valid; the containment
//! relation between `!`-vertices is simple, reflexive, antisymmetric,
//! and transitive (self-loops are stored explicitly); every box is open
//! in the underlying string graph; and boxes are closed under nesting.
//!
//! The operations Copy, Drop, Kill, Exp, Fix, CFix, Box, and Merge
//! transform pattern graphs; a sequence of them is an instantiation.
//! Each application also yields an origin map relating the result to
//! the source, which is what lets operations be transported along
//! morphisms ([`transport_op`]) and reordered by depth
//! ([`depth_order`]).  A concrete instantiation can be renormalized to
//! use only top-level Exp and Kill steps ([`to_enf`]).

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::canon::canonical_form;
use crate::error::{Error, Result};
use crate::graph::{
    check_morphism, induced_emap, validate_typing, EData, Graph, Morphism, VData, VType,
};
use crate::stringgraph::{
    is_open_vertex_set, string_part, structural_string_diags, wires, WireKind,
};

/// The vertices of `B(b)`: `b` itself and every vertex its membership
/// edges point at.  No closure is computed here — the containment
/// relation is stored transitively, so the direct successors already
/// are the whole box.
pub fn bang_box(g: &Graph, b: &str) -> Result<BTreeSet<String>> {
    if !g.is_bang(b) {
        return Err(Error::UnknownVertex(format!("{b} is not a bang vertex")));
    }
    let mut out: BTreeSet<String> = g
        .edges
        .values()
        .filter(|d| d.src == b)
        .map(|d| d.tgt.clone())
        .collect();
    out.insert(b.to_string());
    Ok(out)
}

/// The `!`-vertices whose boxes contain `b`, including `b` itself.
pub fn bang_up(g: &Graph, b: &str) -> Result<BTreeSet<String>> {
    if !g.is_bang(b) {
        return Err(Error::UnknownVertex(format!("{b} is not a bang vertex")));
    }
    let mut out: BTreeSet<String> = g
        .edges
        .values()
        .filter(|d| d.tgt == b && g.is_bang(&d.src))
        .map(|d| d.src.clone())
        .collect();
    out.insert(b.to_string());
    Ok(out)
}

/// Proper parents of `b`: `!`-vertices other than `b` with an edge to
/// it.
pub fn bang_parents(g: &Graph, b: &str) -> Result<BTreeSet<String>> {
    let mut up = bang_up(g, b)?;
    up.remove(b);
    Ok(up)
}

/// Check the pattern-graph conditions, returning one diagnostic per
/// violation.
pub fn validate_bang_graph(g: &Graph) -> Vec<String> {
    let sp = string_part(g);
    let mut diags = validate_typing(g);
    diags.extend(structural_string_diags(&sp));
    // simplicity of the containment relation
    let mut seen: BTreeSet<(&String, &String)> = BTreeSet::new();
    for d in g.edges.values() {
        if g.is_bang(&d.src) && !seen.insert((&d.src, &d.tgt)) {
            diags.push(format!("parallel membership edges from {} to {}", d.src, d.tgt));
        }
    }
    let bangs: BTreeSet<String> = g.bang_vertices().into_iter().collect();
    let boxes: BTreeMap<String, BTreeSet<String>> = bangs
        .iter()
        .map(|b| (b.clone(), bang_box(g, b).expect("b is a bang vertex")))
        .collect();
    for b in &bangs {
        if !g.edges.values().any(|d| &d.src == b && &d.tgt == b) {
            diags.push(format!("bang vertex {b} has no self-loop"));
        }
        for c in &boxes[b] {
            if !g.is_bang(c) || c == b {
                continue;
            }
            // antisymmetry, and nesting (which doubles as transitivity
            // on the bang vertices themselves)
            if boxes[c].contains(b) {
                diags.push(format!("bang vertices {b} and {c} contain each other"));
            } else if let Some(missing) = boxes[c].difference(&boxes[b]).next() {
                diags.push(format!(
                    "box of {c} is not inside box of {b} (missing {missing})"
                ));
            }
        }
        let u_box: BTreeSet<String> =
            boxes[b].iter().filter(|v| !g.is_bang(v)).cloned().collect();
        match is_open_vertex_set(&sp, &u_box) {
            Ok(true) => {}
            Ok(false) => diags.push(format!("box of {b} is not open")),
            Err(e) => diags.push(format!("box of {b} cannot be checked: {e}")),
        }
    }
    diags
}

/// The nesting depth of `b`: zero when it has no unfixed parents, else
/// one more than the deepest unfixed parent.  Fixed parents do not
/// count.
pub fn depth(g: &Graph, b: &str) -> Result<usize> {
    fn go(g: &Graph, b: &str, memo: &mut BTreeMap<String, Option<usize>>) -> Result<usize> {
        match memo.get(b) {
            Some(Some(d)) => return Ok(*d),
            Some(None) => {
                return Err(Error::InvalidGraph(format!(
                    "membership cycle through bang vertex {b}"
                )))
            }
            None => {}
        }
        memo.insert(b.to_string(), None);
        let mut d = 0;
        for p in bang_parents(g, b)? {
            if g.vertex(&p)?.fixed.is_none() {
                d = d.max(1 + go(g, &p, memo)?);
            }
        }
        memo.insert(b.to_string(), Some(d));
        Ok(d)
    }
    go(g, b, &mut BTreeMap::new())
}

/// Whether `b` has no parents at all, fixed or otherwise.  The proof
/// rules for fixing and induction demand this stronger property; the
/// operations themselves only ask for depth zero.
pub fn is_top_level(g: &Graph, b: &str) -> Result<bool> {
    Ok(bang_parents(g, b)?.is_empty())
}

/// One `!`-box operation, identified by the vertex it acts on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase", deny_unknown_fields)]
pub enum BBoxOp {
    Copy { bbox: String },
    Drop { bbox: String },
    Kill { bbox: String },
    Exp { bbox: String },
    Fix { bbox: String, tag: String },
    CFix { bbox: String, tag: String },
    Box { bbox: String },
    Merge { bbox: String, second: String },
}

impl BBoxOp {
    /// The `!`-vertex the operation acts on (for Box, the name of the
    /// vertex it creates).
    pub fn bbox(&self) -> &str {
        match self {
            BBoxOp::Copy { bbox }
            | BBoxOp::Drop { bbox }
            | BBoxOp::Kill { bbox }
            | BBoxOp::Exp { bbox }
            | BBoxOp::Fix { bbox, .. }
            | BBoxOp::CFix { bbox, .. }
            | BBoxOp::Box { bbox }
            | BBoxOp::Merge { bbox, .. } => bbox,
        }
    }

    /// The same operation aimed at a different vertex.
    fn with_bbox(&self, bbox: &str) -> BBoxOp {
        let mut op = self.clone();
        match &mut op {
            BBoxOp::Copy { bbox: t }
            | BBoxOp::Drop { bbox: t }
            | BBoxOp::Kill { bbox: t }
            | BBoxOp::Exp { bbox: t }
            | BBoxOp::Fix { bbox: t, .. }
            | BBoxOp::CFix { bbox: t, .. }
            | BBoxOp::Box { bbox: t }
            | BBoxOp::Merge { bbox: t, .. } => *t = bbox.to_string(),
        }
        op
    }
}

/// A sequence of `!`-box operations.
pub type Instantiation = Vec<BBoxOp>;

/// Reserved fixing tag used by the match search to freeze the copies it
/// peels off with CFix.  A vertex frozen this way behaves like an
/// unfixed one for matching purposes, and [`strip_scratch_tags`] removes
/// the tag once instantiation is complete.  User-supplied tags must not
/// use this name.
pub const SCRATCH_TAG: &str = "*";

/// Remove every fixing tag equal to [`SCRATCH_TAG`], leaving real tags
/// alone.
pub fn strip_scratch_tags(g: &mut Graph) {
    for d in g.vertices.values_mut() {
        if d.fixed.as_deref() == Some(SCRATCH_TAG) {
            d.fixed = None;
        }
    }
}

/// Which way the origin map points: subtractive and duplicating
/// operations map the result back onto the source; Fix, Box, and Merge
/// embed the source into the result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OriginDir {
    Backward,
    Forward,
}

/// The origin map of one operation: which element each result element
/// was derived from.  For duplicating operations (Copy/Exp/CFix) the
/// `sides` map tags each result vertex with the copy it belongs to
/// (1 = the fresh copy, 0 = everything else).
#[derive(Debug, Clone)]
pub struct OriginMap {
    pub dir: OriginDir,
    pub map: Morphism,
    pub sides: BTreeMap<String, u8>,
}

impl OriginMap {
    /// The origin of a result vertex (Backward maps only).
    fn origin_of(&self, v: &str) -> &str {
        debug_assert_eq!(self.dir, OriginDir::Backward);
        &self.map.vmap[v]
    }

    fn side_of(&self, v: &str) -> u8 {
        self.sides.get(v).copied().unwrap_or(0)
    }
}

fn require_unfixed_bang(g: &Graph, b: &str) -> Result<()> {
    if !g.is_bang(b) {
        return Err(Error::UnknownVertex(format!("{b} is not a bang vertex")));
    }
    if let Some(tag) = &g.vertex(b)?.fixed {
        return Err(Error::FixedVertex(format!("{b} is fixed with tag {tag}")));
    }
    Ok(())
}

fn require_depth_zero(g: &Graph, b: &str) -> Result<()> {
    if depth(g, b)? != 0 {
        return Err(Error::FixedVertex(format!(
            "{b} has unfixed parents and cannot be fixed"
        )));
    }
    Ok(())
}

/// Copy: duplicate `B(b)`.  Duplicated `!`-vertices are renamed with a
/// `.0` suffix on the original side; the copy side takes `.1` suffixes
/// throughout; everything else keeps its name, and kept edges keep
/// theirs.  Fresh names avoid the source's entire namespace, so the
/// original names of duplicated `!`-vertices stay free (Exp and CFix
/// restore them) and no copy name can shadow a not-yet-processed source
/// edge.
fn copy_impl(g: &Graph, b: &str) -> Result<(Graph, OriginMap)> {
    require_unfixed_bang(g, b)?;
    let boxset = bang_box(g, b)?;

    let mut out = Graph::empty(g.sig.clone());
    let fresh = |out: &Graph, base: &str| -> String {
        let taken = |n: &str| {
            out.vertices.contains_key(n)
                || out.edges.contains_key(n)
                || g.vertices.contains_key(n)
                || g.edges.contains_key(n)
        };
        if !taken(base) {
            return base.to_string();
        }
        for k in 1.. {
            let cand = format!("{base}.{k}");
            if !taken(&cand) {
                return cand;
            }
        }
        unreachable!()
    };

    for (v, d) in &g.vertices {
        if !boxset.contains(v) {
            out.vertices.insert(v.clone(), d.clone());
        }
    }
    let mut kept: BTreeMap<String, String> = BTreeMap::new();
    for v in &boxset {
        let name = if g.is_bang(v) { fresh(&out, &format!("{v}.0")) } else { v.clone() };
        out.vertices.insert(name.clone(), g.vertices[v].clone());
        kept.insert(v.clone(), name);
    }
    let mut copy: BTreeMap<String, String> = BTreeMap::new();
    for v in &boxset {
        let name = fresh(&out, &format!("{v}.1"));
        out.vertices.insert(name.clone(), g.vertices[v].clone());
        copy.insert(v.clone(), name);
    }

    let mut vmap: BTreeMap<String, String> = BTreeMap::new();
    let mut sides: BTreeMap<String, u8> = BTreeMap::new();
    for v in out.vertices.keys() {
        vmap.insert(v.clone(), v.clone());
    }
    for (v, k) in &kept {
        vmap.insert(k.clone(), v.clone());
    }
    for (v, c) in &copy {
        vmap.insert(c.clone(), v.clone());
        sides.insert(c.clone(), 1);
    }

    let rename = |m: &BTreeMap<String, String>, v: &String| -> String {
        m.get(v).cloned().unwrap_or_else(|| v.clone())
    };
    let mut emap: BTreeMap<String, String> = BTreeMap::new();
    for (e, d) in &g.edges {
        if !boxset.contains(&d.src) && !boxset.contains(&d.tgt) {
            out.edges.insert(e.clone(), d.clone());
            emap.insert(e.clone(), e.clone());
            continue;
        }
        // the kept version keeps the name; edges touching the box are
        // duplicated, with any outside endpoint shared
        out.edges.insert(
            e.clone(),
            EData { src: rename(&kept, &d.src), tgt: rename(&kept, &d.tgt), port: d.port },
        );
        emap.insert(e.clone(), e.clone());
        let copy_name = fresh(&out, &format!("{e}.1"));
        out.edges.insert(
            copy_name.clone(),
            EData { src: rename(&copy, &d.src), tgt: rename(&copy, &d.tgt), port: d.port },
        );
        emap.insert(copy_name, e.clone());
    }

    let origin = OriginMap {
        dir: OriginDir::Backward,
        map: Morphism { dom: out.clone(), cod: g.clone(), vmap, emap },
        sides,
    };
    Ok((out, origin))
}

fn inclusion_origin(g: &Graph, result: Graph) -> OriginMap {
    let map = g.inclusion_from(&result).expect("subtraction result is a subgraph");
    OriginMap { dir: OriginDir::Backward, map, sides: BTreeMap::new() }
}

/// Rename the kept-side copies of the duplicated `!`-vertices back to
/// their original names; used by Exp and CFix, whose results contain
/// the source graph intact under its own names.
fn restore_kept_bangs(
    g: Graph,
    kept_bangs: &BTreeMap<String, String>, // original name -> kept-copy name
) -> Graph {
    let rename: BTreeMap<String, String> =
        kept_bangs.iter().map(|(orig, k)| (k.clone(), orig.clone())).collect();
    let mut out = Graph::empty(g.sig.clone());
    for (v, d) in &g.vertices {
        let name = rename.get(v).cloned().unwrap_or_else(|| v.clone());
        assert!(
            out.vertices.insert(name, d.clone()).is_none(),
            "restored bang name collides"
        );
    }
    for (e, d) in &g.edges {
        out.edges.insert(
            e.clone(),
            EData {
                src: rename.get(&d.src).cloned().unwrap_or_else(|| d.src.clone()),
                tgt: rename.get(&d.tgt).cloned().unwrap_or_else(|| d.tgt.clone()),
                port: d.port,
            },
        );
    }
    out
}

/// Shared tail of Exp and CFix: copy `B(b)`, act on the fresh copy of
/// `b` (drop it or fix it), rename the kept side back, and rebuild the
/// origin map of the composite.
fn copy_then(g: &Graph, bbox: &str, fix_tag: Option<&str>) -> Result<(Graph, OriginMap)> {
    let (copied, origin) = copy_impl(g, bbox)?;
    let kept_bangs: BTreeMap<String, String> = copied
        .vertices
        .keys()
        .filter(|v| copied.is_bang(v) && origin.side_of(v) == 0)
        .filter(|v| origin.origin_of(v) != v.as_str())
        .map(|v| (origin.origin_of(v).to_string(), v.clone()))
        .collect();
    let copy_b = copied
        .vertices
        .keys()
        .find(|v| origin.side_of(v) == 1 && origin.origin_of(v) == bbox)
        .cloned()
        .expect("copy of the target exists");
    let acted = match fix_tag {
        None => copied.without_vertices(&std::iter::once(copy_b).collect()),
        Some(tag) => {
            let mut fixed = copied;
            fixed.vertices.get_mut(&copy_b).expect("present").fixed = Some(tag.to_string());
            fixed
        }
    };
    let restored = restore_kept_bangs(acted, &kept_bangs);
    let mut vmap = BTreeMap::new();
    let mut sides = BTreeMap::new();
    for v in restored.vertices.keys() {
        // undo the restoring rename, then take the copy's origin
        let in_copied = kept_bangs.get(v).cloned().unwrap_or_else(|| v.clone());
        vmap.insert(v.clone(), origin.origin_of(&in_copied).to_string());
        if origin.side_of(&in_copied) == 1 {
            sides.insert(v.clone(), 1);
        }
    }
    let emap = induced_emap(&restored, g, &vmap)
        .expect("every surviving copy edge has a source counterpart");
    let map = Morphism { dom: restored.clone(), cod: g.clone(), vmap, emap };
    Ok((restored, OriginMap { dir: OriginDir::Backward, map, sides }))
}

/// Apply one `!`-box operation, returning the new graph and the origin
/// map.
pub fn apply_op(g: &Graph, op: &BBoxOp) -> Result<(Graph, OriginMap)> {
    let (out, om) = apply_op_inner(g, op)?;
    #[cfg(debug_assertions)]
    {
        let flags = check_morphism(&om.map)?;
        debug_assert!(flags.valid, "origin map of {op:?} is not a valid morphism");
        debug_assert!(
            match om.dir {
                OriginDir::Backward => om.map.dom == out && om.map.cod == *g,
                OriginDir::Forward => om.map.dom == *g && om.map.cod == out,
            },
            "origin map of {op:?} has the wrong endpoints"
        );
    }
    Ok((out, om))
}

fn apply_op_inner(g: &Graph, op: &BBoxOp) -> Result<(Graph, OriginMap)> {
    match op {
        BBoxOp::Copy { bbox } => copy_impl(g, bbox),
        BBoxOp::Drop { bbox } => {
            require_unfixed_bang(g, bbox)?;
            let vs: BTreeSet<String> = std::iter::once(bbox.clone()).collect();
            let r = g.without_vertices(&vs);
            let o = inclusion_origin(g, r.clone());
            Ok((r, o))
        }
        BBoxOp::Kill { bbox } => {
            require_unfixed_bang(g, bbox)?;
            let vs = bang_box(g, bbox)?;
            let r = g.without_vertices(&vs);
            let o = inclusion_origin(g, r.clone());
            Ok((r, o))
        }
        BBoxOp::Exp { bbox } => {
            require_unfixed_bang(g, bbox)?;
            copy_then(g, bbox, None)
        }
        BBoxOp::Fix { bbox, tag } => {
            require_unfixed_bang(g, bbox)?;
            require_depth_zero(g, bbox)?;
            let mut out = g.clone();
            out.vertices.get_mut(bbox).expect("checked above").fixed = Some(tag.clone());
            let map = Morphism {
                dom: g.clone(),
                cod: out.clone(),
                vmap: g.vertices.keys().map(|v| (v.clone(), v.clone())).collect(),
                emap: g.edges.keys().map(|e| (e.clone(), e.clone())).collect(),
            };
            Ok((out, OriginMap { dir: OriginDir::Forward, map, sides: BTreeMap::new() }))
        }
        BBoxOp::CFix { bbox, tag } => {
            require_unfixed_bang(g, bbox)?;
            require_depth_zero(g, bbox)?;
            copy_then(g, bbox, Some(tag))
        }
        BBoxOp::Box { bbox } => {
            if g.vertices.contains_key(bbox) || g.edges.contains_key(bbox) {
                return Err(Error::NameClash(format!("name {bbox} is already in use")));
            }
            let mut out = g.clone();
            out.vertices.insert(bbox.clone(), VData::bang());
            let targets: Vec<String> = out.vertices.keys().cloned().collect();
            for v in targets {
                let e = format!("p_{bbox}_{v}");
                out.add_edge(&e, EData { src: bbox.clone(), tgt: v, port: None });
            }
            let map = out.inclusion_from(g).expect("g is a subgraph of the result");
            Ok((out, OriginMap { dir: OriginDir::Forward, map, sides: BTreeMap::new() }))
        }
        BBoxOp::Merge { bbox, second } => merge_impl(g, bbox, second),
    }
}

fn merge_impl(g: &Graph, b: &str, c: &str) -> Result<(Graph, OriginMap)> {
    for v in [b, c] {
        if !g.is_bang(v) {
            return Err(Error::UnknownVertex(format!("{v} is not a bang vertex")));
        }
    }
    if b == c {
        return Err(Error::NotMergable(format!("{b} cannot be merged with itself")));
    }
    // the quotient identifies b and c, so their fixing must agree; the
    // proof rule is stricter and demands both unfixed
    if g.vertex(b)?.fixed != g.vertex(c)?.fixed {
        return Err(Error::NotMergable(format!(
            "{b} and {c} carry different fixing tags"
        )));
    }
    let bb = bang_box(g, b)?;
    let bc = bang_box(g, c)?;
    if let Some(v) = bb.intersection(&bc).next() {
        return Err(Error::NotMergable(format!("boxes of {b} and {c} overlap at {v}")));
    }
    let mut pb = bang_parents(g, b)?;
    let mut pc = bang_parents(g, c)?;
    pb.remove(c);
    pc.remove(b);
    if pb != pc {
        return Err(Error::NotMergable(format!("{b} and {c} have different parents")));
    }

    let mut out = Graph::empty(g.sig.clone());
    for (v, d) in &g.vertices {
        if v != c {
            out.vertices.insert(v.clone(), d.clone());
        }
    }
    let redirect = |v: &String| -> String {
        if v == c {
            b.to_string()
        } else {
            v.clone()
        }
    };
    let mut emap: BTreeMap<String, String> = BTreeMap::new();
    let mut by_shape: BTreeMap<(String, String, Option<crate::graph::Port>), String> =
        BTreeMap::new();
    for (e, d) in &g.edges {
        let (s, t) = (redirect(&d.src), redirect(&d.tgt));
        if let Some(existing) = by_shape.get(&(s.clone(), t.clone(), d.port)) {
            emap.insert(e.clone(), existing.clone());
            continue;
        }
        out.edges.insert(e.clone(), EData { src: s.clone(), tgt: t.clone(), port: d.port });
        by_shape.insert((s, t, d.port), e.clone());
        emap.insert(e.clone(), e.clone());
    }
    let vmap: BTreeMap<String, String> =
        g.vertices.keys().map(|v| (v.clone(), redirect(v))).collect();
    let origin = OriginMap {
        dir: OriginDir::Forward,
        map: Morphism { dom: g.clone(), cod: out.clone(), vmap, emap },
        sides: BTreeMap::new(),
    };
    Ok((out, origin))
}

/// Fold a sequence of operations over a graph.
pub fn instantiate(g: &Graph, s: &[BBoxOp]) -> Result<Graph> {
    let mut cur = g.clone();
    for op in s {
        cur = apply_op(&cur, op)?.0;
    }
    Ok(cur)
}

/// Transport an operation along a morphism.  The operation targets a
/// `!`-vertex of the codomain; if that vertex lies in the image, the
/// corresponding operation is applied to the domain as well, otherwise
/// the domain is untouched.  (Box, which creates its vertex, applies to
/// both sides; Merge applies to the domain only when both its boxes lie
/// in the image.)  The returned morphism connects the two results and
/// is checked to be mono and to reflect box membership, like the input.
pub fn transport_op(f: &Morphism, op: &BBoxOp) -> Result<Morphism> {
    let flags = check_morphism(f)?;
    if !flags.valid || !flags.mono {
        return Err(Error::NotMono("transport requires a mono morphism".to_string()));
    }
    if !flags.reflects_bbox_containment {
        return Err(Error::DoesNotReflect(
            "transport requires the morphism to reflect box membership".to_string(),
        ));
    }
    let preimage = |name: &str| -> Option<String> {
        f.vmap
            .iter()
            .find(|(_, img)| img.as_str() == name)
            .map(|(v, _)| v.clone())
    };

    let (cod_applied, cod_origin) = apply_op(&f.cod, op)?;
    let dom_op: Option<BBoxOp> = match op {
        BBoxOp::Box { .. } => Some(op.clone()),
        BBoxOp::Merge { bbox, second } => match (preimage(bbox), preimage(second)) {
            (Some(a), Some(a2)) => Some(BBoxOp::Merge { bbox: a, second: a2 }),
            // with at most one box in the image, nothing needs merging
            // on the domain side
            _ => None,
        },
        other => preimage(other.bbox()).map(|a| other.with_bbox(&a)),
    };
    let (dom_applied, dom_origin) = match &dom_op {
        Some(o) => {
            let (d2, od) = apply_op(&f.dom, o)?;
            (d2, Some(od))
        }
        None => (f.dom.clone(), None),
    };

    // vertex map of the transported morphism
    let mut vmap: BTreeMap<String, String> = BTreeMap::new();
    match &dom_origin {
        None => {
            // domain untouched; every image vertex is disjoint from the
            // affected box (membership reflection), so it survives
            for (v, img) in &f.vmap {
                let target = match cod_origin.dir {
                    OriginDir::Backward => {
                        if !cod_applied.vertices.contains_key(img) {
                            return Err(Error::DoesNotReflect(format!(
                                "image vertex {img} was removed by an operation outside the image"
                            )));
                        }
                        img.clone()
                    }
                    OriginDir::Forward => cod_origin.map.vmap[img].clone(),
                };
                vmap.insert(v.clone(), target);
            }
        }
        Some(od) => match od.dir {
            OriginDir::Backward => {
                // match result vertices across the two applications by
                // (origin, side)
                let mut index: BTreeMap<(String, u8), String> = BTreeMap::new();
                for v in cod_applied.vertices.keys() {
                    index.insert(
                        (cod_origin.origin_of(v).to_string(), cod_origin.side_of(v)),
                        v.clone(),
                    );
                }
                for v in dom_applied.vertices.keys() {
                    let key = (f.vmap[od.origin_of(v)].clone(), od.side_of(v));
                    let img = index.get(&key).ok_or_else(|| {
                        Error::DoesNotReflect(format!(
                            "no codomain counterpart for transported vertex {v}"
                        ))
                    })?;
                    vmap.insert(v.clone(), img.clone());
                }
            }
            OriginDir::Forward => {
                for v in dom_applied.vertices.keys() {
                    // Fix and Merge keep domain names (Merge folds the
                    // second onto the first); Box adds its vertex under
                    // the same name on both sides
                    let pre = od
                        .map
                        .vmap
                        .iter()
                        .find(|(_, img)| img.as_str() == v.as_str())
                        .map(|(s, _)| s.clone());
                    let target = match pre {
                        Some(s) => cod_origin.map.vmap[&f.vmap[&s]].clone(),
                        None => v.clone(),
                    };
                    vmap.insert(v.clone(), target);
                }
            }
        },
    }

    let emap = induced_emap(&dom_applied, &cod_applied, &vmap).ok_or_else(|| {
        Error::DoesNotReflect("a transported edge has no codomain counterpart".to_string())
    })?;
    let out = Morphism { dom: dom_applied, cod: cod_applied, vmap, emap };
    let out_flags = check_morphism(&out)?;
    if !out_flags.valid || !out_flags.mono {
        return Err(Error::NotMono("transported morphism is not mono".to_string()));
    }
    if !out_flags.reflects_bbox_containment {
        return Err(Error::DoesNotReflect(
            "transported morphism does not reflect box membership".to_string(),
        ));
    }
    // the square with the two origin maps must commute
    if let Some(od) = &dom_origin {
        let ok = match od.dir {
            OriginDir::Backward => out
                .dom
                .vertices
                .keys()
                .all(|v| f.vmap[od.origin_of(v)] == cod_origin.map.vmap[&out.vmap[v]]),
            OriginDir::Forward => od
                .map
                .vmap
                .iter()
                .all(|(v, v2)| cod_origin.map.vmap[&f.vmap[v]] == out.vmap[v2]),
        };
        assert!(ok, "transported operation does not commute with the origin maps");
    }
    Ok(out)
}

/// The input-, output-, and full boundaries of a pattern graph, each
/// packaged with all `!`-vertices.  The first two are full subgraphs;
/// the third keeps only membership edges, so a bare wire between two
/// boundary vertices does not leak into it.
pub fn bang_boundary(g: &Graph) -> (Graph, Graph, Graph) {
    let dec = wires(g);
    let bangs: BTreeSet<String> = g.bang_vertices().into_iter().collect();
    let mut in_set = bangs.clone();
    in_set.extend(dec.inputs.iter().cloned());
    let mut out_set = bangs.clone();
    out_set.extend(dec.outputs.iter().cloned());
    let in_ = g.full_subgraph(&in_set).expect("vertices exist");
    let out_ = g.full_subgraph(&out_set).expect("vertices exist");

    let mut bound_set = bangs;
    bound_set.extend(dec.boundary());
    let mut bound = Graph::empty(g.sig.clone());
    for v in &bound_set {
        bound.vertices.insert(v.clone(), g.vertices[v].clone());
    }
    for (e, d) in &g.edges {
        if g.is_bang(&d.src) && bound_set.contains(&d.src) && bound_set.contains(&d.tgt) {
            bound.edges.insert(e.clone(), d.clone());
        }
    }
    (in_, out_, bound)
}

// ---------------------------------------------------------------------
// Depth ordering
// ---------------------------------------------------------------------

/// Cap on the working sequence length and on reordering iterations; the
/// reordering recurrence can blow up exponentially by design.
pub const DEPTH_ORDER_CAP: usize = 10_000;

/// Per-step vertex bookkeeping for replayed pipelines.
struct StepTrace {
    origin: BTreeMap<String, String>, // result vertex -> source vertex
    sides: BTreeMap<String, u8>,
}

fn step(g: &Graph, op: &BBoxOp) -> Result<(Graph, StepTrace)> {
    let (out, om) = apply_op(g, op)?;
    assert_eq!(om.dir, OriginDir::Backward, "depth ordering uses subtractive/copy ops only");
    let origin = out
        .vertices
        .keys()
        .map(|v| (v.clone(), om.origin_of(v).to_string()))
        .collect();
    Ok((out, StepTrace { origin, sides: om.sides }))
}

/// Run a pipeline, tracking each surviving vertex's origin in the
/// initial graph together with the side it took at every step.
fn pipeline_traces(
    start: &Graph,
    ops: &[BBoxOp],
) -> Result<(Graph, BTreeMap<String, (String, Vec<u8>)>)> {
    let mut cur = start.clone();
    let mut traces: BTreeMap<String, (String, Vec<u8>)> =
        cur.vertices.keys().map(|v| (v.clone(), (v.clone(), Vec::new()))).collect();
    for op in ops {
        let (next, tr) = step(&cur, op)?;
        let mut new_traces = BTreeMap::new();
        for v in next.vertices.keys() {
            let o = &tr.origin[v];
            let (root, mut sides) = traces[o].clone();
            sides.push(tr.sides.get(v).copied().unwrap_or(0));
            new_traces.insert(v.clone(), (root, sides));
        }
        traces = new_traces;
        cur = next;
    }
    Ok((cur, traces))
}

/// Build the vertex bijection between two pipelines from the same
/// graph, given a translation from old side-vectors to new ones, and
/// assert that it is structure-preserving.
fn match_pipelines(
    old_final: &Graph,
    old_traces: &BTreeMap<String, (String, Vec<u8>)>,
    new_final: &Graph,
    new_traces: &BTreeMap<String, (String, Vec<u8>)>,
    translate: impl Fn(&str, &[u8]) -> (String, Vec<u8>),
) -> BTreeMap<String, String> {
    let mut index: BTreeMap<(String, Vec<u8>), String> = BTreeMap::new();
    for (v, key) in new_traces {
        index.insert(key.clone(), v.clone());
    }
    let mut psi = BTreeMap::new();
    for (v, (root, sides)) in old_traces {
        let key = translate(root, sides);
        let img = index
            .get(&key)
            .unwrap_or_else(|| panic!("no counterpart for {v} under reordering"));
        psi.insert(v.clone(), img.clone());
    }
    assert_eq!(psi.len(), old_final.vertices.len());
    assert_eq!(new_final.vertices.len(), old_final.vertices.len());
    let image: BTreeSet<&String> = psi.values().collect();
    assert_eq!(image.len(), psi.len(), "reordering map is not injective");
    for (v, w) in &psi {
        assert_eq!(old_final.vertices[v], new_final.vertices[w]);
    }
    for d in old_final.edges.values() {
        let (s, t) = (&psi[&d.src], &psi[&d.tgt]);
        assert!(
            new_final
                .edges
                .values()
                .any(|d2| &d2.src == s && &d2.tgt == t && d2.port == d.port),
            "reordering does not preserve an edge"
        );
    }
    psi
}

/// Retarget a tail of operations through a vertex bijection, extending
/// the bijection one step at a time.
fn rewrite_tail(
    mut old_state: Graph,
    mut new_state: Graph,
    mut psi: BTreeMap<String, String>,
    tail: &[(BBoxOp, bool)],
) -> Result<Vec<(BBoxOp, bool)>> {
    let mut out = Vec::with_capacity(tail.len());
    for (op, marked) in tail {
        let new_op = op.with_bbox(&psi[op.bbox()]);
        let (os, otr) = step(&old_state, op)?;
        let (ns, ntr) = step(&new_state, &new_op)?;
        let mut index: BTreeMap<(String, u8), String> = BTreeMap::new();
        for v in ns.vertices.keys() {
            index.insert(
                (ntr.origin[v].clone(), ntr.sides.get(v).copied().unwrap_or(0)),
                v.clone(),
            );
        }
        let mut next_psi = BTreeMap::new();
        for v in os.vertices.keys() {
            let key =
                (psi[&otr.origin[v]].clone(), otr.sides.get(v).copied().unwrap_or(0));
            next_psi.insert(v.clone(), index[&key].clone());
        }
        psi = next_psi;
        old_state = os;
        new_state = ns;
        out.push((new_op, *marked));
    }
    Ok(out)
}

/// Reorder an instantiation so that no operation is preceded by one of
/// strictly greater depth, preserving the resulting graph up to
/// isomorphism.  Exp steps are expanded into their Copy/Drop form
/// first.  Only Copy/Drop/Kill/Exp sequences are supported; the worst
/// case grows exponentially, so the working sequence is capped at
/// [`DEPTH_ORDER_CAP`].
pub fn depth_order(g: &Graph, s: &[BBoxOp]) -> Result<Instantiation> {
    for op in s {
        if !matches!(
            op,
            BBoxOp::Copy { .. } | BBoxOp::Drop { .. } | BBoxOp::Kill { .. } | BBoxOp::Exp { .. }
        ) {
            return Err(Error::InvalidGraph(
                "depth ordering applies to copy/drop/kill/exp sequences".to_string(),
            ));
        }
    }
    let reference = canonical_form(&instantiate(g, s)?)?;

    // expand Exp into Copy followed by Drop of the fresh copy, keeping
    // later targets aligned across the renaming this introduces
    let mut ops: Vec<(BBoxOp, bool)> = Vec::new();
    {
        let mut old_state = g.clone(); // as the input sequence sees it
        let mut new_state = g.clone(); // as the expanded sequence sees it
        let mut psi: BTreeMap<String, String> =
            g.vertices.keys().map(|v| (v.clone(), v.clone())).collect();
        for op in s {
            let target = psi[op.bbox()].clone();
            let expansion: Vec<BBoxOp> = match op {
                BBoxOp::Exp { .. } => {
                    let (copied, om) = copy_impl(&new_state, &target)?;
                    let copy_b = copied
                        .vertices
                        .keys()
                        .find(|v| om.side_of(v) == 1 && om.origin_of(v) == target)
                        .cloned()
                        .expect("copy of the target exists");
                    vec![BBoxOp::Copy { bbox: target }, BBoxOp::Drop { bbox: copy_b }]
                }
                other => vec![other.with_bbox(&target)],
            };
            let (os, otr) = step(&old_state, op)?;
            let (ns, ntraces) = pipeline_traces(&new_state, &expansion)?;
            // the expansion's side vectors collapse to the copy side
            let mut index: BTreeMap<(String, u8), String> = BTreeMap::new();
            for (v, (root, sides)) in &ntraces {
                let side = sides.iter().copied().max().unwrap_or(0);
                index.insert((root.clone(), side), v.clone());
            }
            let mut next_psi = BTreeMap::new();
            for v in os.vertices.keys() {
                let key =
                    (psi[&otr.origin[v]].clone(), otr.sides.get(v).copied().unwrap_or(0));
                next_psi.insert(v.clone(), index[&key].clone());
            }
            for e in expansion {
                ops.push((e, false));
            }
            psi = next_psi;
            old_state = os;
            new_state = ns;
        }
    }

    let mut iterations = 0usize;
    loop {
        iterations += 1;
        if iterations > DEPTH_ORDER_CAP || ops.len() > DEPTH_ORDER_CAP {
            return Err(Error::SizeLimit {
                size: ops.len().max(iterations),
                cap: DEPTH_ORDER_CAP,
            });
        }
        let Some(i) = ops.iter().rposition(|(_, marked)| !marked) else {
            break;
        };
        let mut gi = g.clone();
        for (op, _) in &ops[..i] {
            gi = apply_op(&gi, op)?.0;
        }
        let b = ops[i].0.bbox().to_string();
        let d_b = depth(&gi, &b)?;
        let (gi1, om1) = apply_op(&gi, &ops[i].0)?;
        if i + 1 == ops.len() {
            ops[i].1 = true; // nothing to the right
            continue;
        }
        let bp = ops[i + 1].0.bbox().to_string();
        let d_bp = depth(&gi1, &bp)?;
        if d_b <= d_bp {
            ops[i].1 = true; // already in order here
            continue;
        }
        // the next operation acts strictly shallower: move it left
        let fbp = om1.origin_of(&bp).to_string();
        assert_ne!(fbp, b, "a copy of the target cannot act shallower than it");
        let is_ancestor = gi.edges.values().any(|d| d.src == fbp && d.tgt == b);

        let old_pipeline = [ops[i].0.clone(), ops[i + 1].0.clone()];
        let (old_final, old_traces) = pipeline_traces(&gi, &old_pipeline)?;

        let (replacement, psi): (Vec<(BBoxOp, bool)>, BTreeMap<String, String>) =
            if !is_ancestor || matches!(ops[i + 1].0, BBoxOp::Drop { .. }) {
                // independent boxes, or a drop of an ancestor: the two
                // operations commute as they are
                let new_pipeline = [ops[i + 1].0.with_bbox(&fbp), ops[i].0.clone()];
                let (new_final, new_traces) = pipeline_traces(&gi, &new_pipeline)?;
                let psi = match_pipelines(
                    &old_final,
                    &old_traces,
                    &new_final,
                    &new_traces,
                    |root, sides| (root.to_string(), vec![sides[1], sides[0]]),
                );
                (
                    vec![(new_pipeline[0].clone(), true), (new_pipeline[1].clone(), false)],
                    psi,
                )
            } else if matches!(ops[i + 1].0, BBoxOp::Kill { .. }) {
                // killing an ancestor swallows the earlier operation
                let new_pipeline = [ops[i + 1].0.with_bbox(&fbp)];
                let (new_final, new_traces) = pipeline_traces(&gi, &new_pipeline)?;
                let psi = match_pipelines(
                    &old_final,
                    &old_traces,
                    &new_final,
                    &new_traces,
                    |root, _| (root.to_string(), vec![0]),
                );
                (vec![(new_pipeline[0].clone(), true)], psi)
            } else {
                // copying an ancestor: the earlier operation recurs on
                // both copies of its box
                let (copied, om) = copy_impl(&gi, &fbp)?;
                let n0 = copied
                    .vertices
                    .keys()
                    .find(|v| om.side_of(v) == 0 && om.origin_of(v) == b)
                    .cloned()
                    .expect("kept copy of the target");
                let n1 = copied
                    .vertices
                    .keys()
                    .find(|v| om.side_of(v) == 1 && om.origin_of(v) == b)
                    .cloned()
                    .expect("fresh copy of the target");
                let new_pipeline = [
                    BBoxOp::Copy { bbox: fbp.clone() },
                    ops[i].0.with_bbox(&n0),
                    ops[i].0.with_bbox(&n1),
                ];
                let (new_final, new_traces) = pipeline_traces(&gi, &new_pipeline)?;
                let psi = match_pipelines(
                    &old_final,
                    &old_traces,
                    &new_final,
                    &new_traces,
                    |root, sides| {
                        let (sa, sb) = (sides[0], sides[1]);
                        let (t2, t3) = if sb == 0 { (sa, 0) } else { (0, sa) };
                        (root.to_string(), vec![sb, t2, t3])
                    },
                );
                (
                    vec![
                        (new_pipeline[0].clone(), true),
                        (new_pipeline[1].clone(), false),
                        (new_pipeline[2].clone(), false),
                    ],
                    psi,
                )
            };

        let replacement_ops: Vec<BBoxOp> =
            replacement.iter().map(|(o, _)| o.clone()).collect();
        let tail = rewrite_tail(
            old_final,
            instantiate(&gi, &replacement_ops)?,
            psi,
            &ops[i + 2..],
        )?;
        ops.truncate(i);
        ops.extend(replacement);
        ops.extend(tail);
    }

    let result: Instantiation = ops.into_iter().map(|(op, _)| op).collect();
    let check = canonical_form(&instantiate(g, &result)?)?;
    assert_eq!(check, reference, "depth ordering changed the resulting graph");
    Ok(result)
}

// ---------------------------------------------------------------------
// Expansion-normal form
// ---------------------------------------------------------------------

/// Cap on the number of search states explored by [`to_enf`].
pub const ENF_SEARCH_CAP: usize = 100_000;

/// A cheap state fingerprint: vertex names and data plus edge shapes.
/// Edge names are deliberately left out — operations target vertices,
/// so states differing only in edge names are interchangeable.
fn state_key(g: &Graph) -> String {
    let mut s = String::new();
    for (v, d) in &g.vertices {
        s.push_str(&format!("{v}:{d:?};"));
    }
    for d in g.edges.values() {
        s.push_str(&format!("{}>{}:{:?};", d.src, d.tgt, d.port));
    }
    s
}

/// Rewrite a concrete instantiation into one made only of depth-zero
/// Exp and Kill steps with the same result up to isomorphism.  Searches
/// breadth-first over Exp/Kill sequences, pruning states whose material
/// outside all boxes already exceeds the target's node or circle
/// counts (that material can only grow).
pub fn to_enf(g: &Graph, s: &[BBoxOp]) -> Result<Instantiation> {
    let target = instantiate(g, s)?;
    if !target.is_concrete() {
        return Err(Error::NotConcrete(
            "the instantiation does not produce a concrete graph".to_string(),
        ));
    }
    let target_form = canonical_form(&target)?;
    let count_nodes = |g: &Graph| -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        for d in g.vertices.values() {
            if let VType::Node(t) = &d.vtype {
                *m.entry(t.clone()).or_insert(0) += 1;
            }
        }
        m
    };
    let circle_count = |g: &Graph| -> usize {
        wires(g).wires.iter().filter(|w| w.kind == WireKind::Circle).count()
    };
    let target_nodes = count_nodes(&target);
    let target_circles = circle_count(&target);

    let exceeds = |g: &Graph| -> bool {
        let boxed: BTreeSet<String> = g
            .edges
            .values()
            .filter(|d| g.is_bang(&d.src) && d.src != d.tgt)
            .map(|d| d.tgt.clone())
            .collect();
        let surface = string_part(g).without_vertices(&boxed);
        for (t, n) in count_nodes(&surface) {
            if n > *target_nodes.get(&t).unwrap_or(&0) {
                return true;
            }
        }
        circle_count(&surface) > target_circles
    };

    let mut queue: VecDeque<(Graph, Vec<BBoxOp>)> = VecDeque::new();
    queue.push_back((g.clone(), Vec::new()));
    let mut seen: BTreeSet<String> = BTreeSet::new();
    seen.insert(state_key(g));
    let mut explored = 0usize;
    while let Some((cur, ops)) = queue.pop_front() {
        explored += 1;
        if explored > ENF_SEARCH_CAP {
            return Err(Error::SizeLimit { size: explored, cap: ENF_SEARCH_CAP });
        }
        if cur.is_concrete() {
            if canonical_form(&cur)? == target_form {
                return Ok(ops);
            }
            continue;
        }
        for b in cur.bang_vertices() {
            if cur.vertices[&b].fixed.is_some() || depth(&cur, &b)? != 0 {
                continue;
            }
            for op in [BBoxOp::Exp { bbox: b.clone() }, BBoxOp::Kill { bbox: b.clone() }] {
                let next = apply_op(&cur, &op)?.0;
                if exceeds(&next) || !seen.insert(state_key(&next)) {
                    continue;
                }
                let mut next_ops = ops.clone();
                next_ops.push(op);
                queue.push_back((next, next_ops));
            }
        }
    }
    Err(Error::NotConcrete(
        "no expansion-normal instantiation reaches the target".to_string(),
    ))
}
