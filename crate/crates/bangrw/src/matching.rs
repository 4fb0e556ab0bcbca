//! Matching pattern graphs onto targets.
//!
//! A pattern graph matches a target when some instance of it — obtained by
//! repeatedly killing, expanding, or freezing its `!`-boxes — embeds into
//! the target as a monic local isomorphism, up to subdividing wires.  A
//! [`Matching`] certificate records both halves: the box operations that
//! produced the instance, and the morphism from the (normalized) instance
//! into the (normalized) target.  Certificates re-validate independently
//! with [`check_morphism`] and plug directly into
//! [`rewrite_dpo`](crate::rewrite::rewrite_dpo).
//!
//! The search interleaves instantiation with embedding.  Concrete material
//! is matched eagerly by a wire-walking subroutine (circles first, then
//! node neighborhoods wire by wire), and only when no concrete work
//! remains does the search branch over box operations: `Kill` and `Exp`
//! always, plus `CFix` with the reserved [`SCRATCH_TAG`] when the target
//! itself has `!`-vertices.  Boxes frozen by `CFix` — and boxes the user
//! fixed — are matched one-to-one against target boxes with the same
//! ancestry and tag.  Bare wires are placed last, by splicing two fresh
//! wire-vertices into a target edge, because they constrain nothing until
//! everything else is settled.
//!
//! [`find_matches`] handles concrete targets, [`find_matches_bg`] arbitrary
//! ones; both have `_jobs` variants that fan the branch exploration out
//! over a thread pool without changing the result order.
//! [`oracle_matches`] is a deliberately naive reference implementation —
//! enumerate instances, try every injective vertex assignment, filter by
//! the morphism checks — used to cross-check the engine on small inputs.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rayon::prelude::*;

use crate::banggraph::{
    apply_op, bang_box, bang_up, depth, strip_scratch_tags, validate_bang_graph, BBoxOp,
    Instantiation, SCRATCH_TAG,
};
use crate::canon::canonical_form;
use crate::error::{Error, Result};
use crate::graph::{check_morphism, induced_emap, EData, Graph, Morphism, Port, VData, VType};
use crate::signature::Dir;
use crate::stringgraph::{normalize, wires, NormalizeMode, Wire, WireKind};

/// Knobs for the match search.
#[derive(Debug, Clone, Default)]
pub struct MatchConfig {
    /// Cap on instantiation length.  Defaults to the a-priori bound from
    /// [`length_bound`], which is finite for every pattern/target pair.
    pub max_expansions: Option<usize>,
    /// Kill wild boxes on sight instead of rejecting the pattern.
    pub kill_wild: bool,
    /// Keep at most this many matchings (applied after deduplication, in
    /// the canonical result order).
    pub max_results: Option<usize>,
}

/// One way a pattern matches a target: the box operations that produced
/// the instance, and where the instance landed.
///
/// `morphism.dom` is the instance, normalized like the pattern and with
/// the search's scratch fixing tags already stripped; `morphism.cod` is
/// the normalized target, possibly with extra wire-vertices where bare
/// wires were spliced in.  The instantiation replays left to right over
/// the normalized pattern with [`apply_op`]; operations the search chose
/// act on boxes of revised depth zero, while the kills recorded for wild
/// boxes (under [`MatchConfig::kill_wild`]) may act deeper.
#[derive(Debug, Clone)]
pub struct Matching {
    pub instantiation: Instantiation,
    pub morphism: Morphism,
}

impl Matching {
    /// A canonical fingerprint of this matching: the instance graph
    /// relabeled by where each vertex landed in the target.
    ///
    /// Two matchings get the same key exactly when they differ only by an
    /// isomorphism of the instance or by which target circle an instance
    /// circle was assigned to — the two redundancies the result list
    /// collapses.  Circle vertices are replaced by positional tokens
    /// (grouped by wire type and box membership) instead of their target
    /// names, which erases the circle choice.
    pub fn key(&self) -> String {
        let dom = &self.morphism.dom;
        let mut circle_tok: BTreeMap<String, String> = BTreeMap::new();
        let mut groups: BTreeMap<(String, String), usize> = BTreeMap::new();
        for w in wires(dom).wires.iter().filter(|w| w.kind == WireKind::Circle) {
            let c = &w.vertices[0];
            let boxes: Vec<String> = dom
                .edges
                .values()
                .filter(|d| dom.is_bang(&d.src) && d.tgt == *c)
                .map(|d| self.morphism.vmap[&d.src].clone())
                .collect();
            let group = (w.wiretype.clone(), boxes.join(","));
            let n = groups.entry(group.clone()).or_insert(0);
            circle_tok.insert(c.clone(), format!("~circle[{}|{}]{}", group.0, group.1, n));
            *n += 1;
        }
        let tok = |v: &String| -> String {
            circle_tok.get(v).cloned().unwrap_or_else(|| self.morphism.vmap[v].clone())
        };
        let mut lines: Vec<String> = Vec::new();
        for (v, d) in &dom.vertices {
            lines.push(format!("v {} {:?} {:?}", tok(v), d.vtype, d.fixed));
        }
        for d in dom.edges.values() {
            lines.push(format!("e {} {} {:?}", tok(&d.src), tok(&d.tgt), d.port));
        }
        lines.sort();
        lines.join("\n")
    }
}

/// Vertex → the `!`-vertices whose box contains it (membership self-loops
/// excluded, so a box is not its own container).
fn boxes_map(g: &Graph) -> BTreeMap<String, BTreeSet<String>> {
    let mut m: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for d in g.edges.values() {
        if g.is_bang(&d.src) && d.src != d.tgt {
            m.entry(d.tgt.clone()).or_default().insert(d.src.clone());
        }
    }
    m
}

fn boxes_of(m: &BTreeMap<String, BTreeSet<String>>, v: &str) -> BTreeSet<String> {
    m.get(v).cloned().unwrap_or_default()
}

/// A vertex's fixing tag as the matcher compares it: the scratch tag the
/// search uses for its own `CFix` operations counts as no tag at all.
fn match_tag<'g>(g: &'g Graph, v: &str) -> Option<&'g str> {
    match g.vertices[v].fixed.as_deref() {
        Some(t) if t == SCRATCH_TAG => None,
        t => t,
    }
}

/// The `!`-boxes whose expansion no count can bound.
///
/// A box is *wild* when, once every other unfixed box has been killed,
/// its contents are nothing but bare-wire material: no node-vertices, no
/// circles, no fixed `!`-vertices, and no wire-vertex of a node-anchored
/// wire.  Expanding such a box only multiplies free-floating strands,
/// which a single target wire can absorb any number of times, so a
/// pattern with a wild box has infinitely many matchings onto some
/// targets.  Fixed boxes are never wild: they are matched one-to-one, not
/// expanded.
pub fn detect_wild(g: &Graph) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for b in g.bang_vertices() {
        if g.vertices[&b].fixed.is_some() {
            continue;
        }
        let keep = bang_up(g, &b)?;
        let mut removed = BTreeSet::new();
        for c in g.bang_vertices() {
            if keep.contains(&c) || g.vertices[&c].fixed.is_some() {
                continue;
            }
            removed.extend(bang_box(g, &c)?);
        }
        debug_assert!(!removed.contains(&b), "ancestors of {b} are never killed");
        let surv = g.without_vertices(&removed);
        let dec = wires(&surv);
        let mut bare_like: BTreeSet<&String> = dec.isolated.iter().collect();
        for w in &dec.wires {
            if w.kind == WireKind::Bare {
                bare_like.extend(w.vertices.iter());
            }
        }
        let anchored = bang_box(&surv, &b)?.iter().any(|v| {
            v != &b
                && (surv.is_node(v)
                    || (surv.is_bang(v) && surv.vertices[v].fixed.is_some())
                    || (surv.is_wire(v) && !bare_like.contains(v)))
        });
        if !anchored {
            out.push(b);
        }
    }
    Ok(out)
}

/// The part of the graph every instance keeps: everything outside the
/// unfixed boxes.  Killing an unfixed box never shrinks this, and
/// expanding or freezing one only grows it.
pub fn match_surface(g: &Graph) -> Result<Graph> {
    let mut removed = BTreeSet::new();
    for b in g.bang_vertices() {
        if g.vertices[&b].fixed.is_none() {
            removed.extend(bang_box(g, &b)?);
        }
    }
    Ok(g.without_vertices(&removed))
}

/// (node-vertices, circles, fixed `!`-vertices) of the match surface —
/// the three quantities wire homeomorphism preserves, and hence the
/// counts an instance may not exceed if it is to embed in the target.
fn surface_counts(g: &Graph) -> Result<(usize, usize, usize)> {
    let s = match_surface(g)?;
    let nodes = s.vertices.values().filter(|d| matches!(d.vtype, VType::Node(_))).count();
    let circles = wires(&s).wires.iter().filter(|w| w.kind == WireKind::Circle).count();
    let fixed = s.bang_vertices().len();
    Ok((nodes, circles, fixed))
}

/// The a-priori cap on instantiation length when matching `pattern` onto
/// `target`: with `x` node-vertices and `y` circles in the target and `z`
/// boxes in the pattern, no useful instantiation is longer than
/// `x + y + z·2^(x+y)` — each expansion must be paid for by surface
/// material, and kills cannot outnumber the boxes those expansions
/// create.
pub fn length_bound(pattern: &Graph, target: &Graph) -> usize {
    let z = pattern.bang_vertices().len();
    let x = target.vertices.values().filter(|d| matches!(d.vtype, VType::Node(_))).count();
    let y = wires(target).wires.iter().filter(|w| w.kind == WireKind::Circle).count();
    let xy = x + y;
    let pow = if xy >= usize::BITS as usize { usize::MAX } else { 1usize << xy };
    xy.saturating_add(z.saturating_mul(pow))
}

fn validate_pair(pattern: &Graph, target: &Graph) -> Result<()> {
    if pattern.sig != target.sig {
        return Err(Error::NotShared("pattern and target use different signatures".into()));
    }
    for (role, g) in [("pattern", pattern), ("target", target)] {
        let diags = validate_bang_graph(g);
        if let Some(d) = diags.first() {
            return Err(Error::InvalidGraph(format!("{role}: {d}")));
        }
        if let Some(v) = wires(g).isolated.first() {
            return Err(Error::InvalidGraph(format!("{role}: isolated wire-vertex {v}")));
        }
    }
    Ok(())
}

/// Reject the pattern's wild boxes, or — per `cfg.kill_wild` — kill them
/// and record the kills, so instantiations stay replayable from the
/// pattern as given.
fn resolve_wild(pattern: &Graph, cfg: &MatchConfig) -> Result<(Graph, Instantiation)> {
    let mut p = pattern.clone();
    let mut ops = Vec::new();
    loop {
        let ws = detect_wild(&p)?;
        let Some(b) = ws.first() else { return Ok((p, ops)) };
        if !cfg.kill_wild {
            return Err(Error::WildBangBox(b.clone()));
        }
        let op = BBoxOp::Kill { bbox: b.clone() };
        let (next, _) = apply_op(&p, &op)?;
        ops.push(op);
        p = next;
    }
}

/// All instances of `pattern` reachable by `Kill`/`Exp`/`CFix` operations
/// on depth-zero boxes, up to the length cap, pruned to those whose match
/// surface could still embed in `target`.
///
/// Instances are deduplicated up to isomorphism (first — and hence
/// shortest — instantiation wins) and listed in breadth-first order
/// starting from the pattern itself.  `CFix` is offered only when the
/// target has `!`-vertices, and always carries the scratch tag; callers
/// that go on to build morphisms should strip it with
/// [`strip_scratch_tags`].
pub fn enumerate_instances(
    pattern: &Graph,
    target: &Graph,
    cfg: &MatchConfig,
) -> Result<Vec<(Instantiation, Graph)>> {
    validate_pair(pattern, target)?;
    let (p, prefix) = resolve_wild(pattern, cfg)?;
    let bound =
        prefix.len() + cfg.max_expansions.unwrap_or_else(|| length_bound(&p, target));
    let t_nodes = target.vertices.values().filter(|d| matches!(d.vtype, VType::Node(_))).count();
    let t_circles = wires(target).wires.iter().filter(|w| w.kind == WireKind::Circle).count();
    let t_bangs = target.bang_vertices().len();
    let with_cfix = t_bangs > 0;

    let (n0, c0, f0) = surface_counts(&p)?;
    if n0 > t_nodes || c0 > t_circles || f0 > t_bangs {
        return Ok(Vec::new());
    }
    let mut seen: BTreeSet<String> = BTreeSet::new();
    seen.insert(canonical_form(&p)?);
    let mut queue: VecDeque<(Instantiation, Graph)> = VecDeque::new();
    queue.push_back((prefix, p));
    let mut out = Vec::new();
    while let Some((ops, g)) = queue.pop_front() {
        out.push((ops.clone(), g.clone()));
        if ops.len() >= bound {
            continue;
        }
        for b in g.bang_vertices() {
            if g.vertices[&b].fixed.is_some() || depth(&g, &b)? != 0 {
                continue;
            }
            let mut branch_ops = vec![
                BBoxOp::Kill { bbox: b.clone() },
                BBoxOp::Exp { bbox: b.clone() },
            ];
            if with_cfix {
                branch_ops.push(BBoxOp::CFix { bbox: b.clone(), tag: SCRATCH_TAG.to_string() });
            }
            for op in branch_ops {
                let (next, _) = apply_op(&g, &op)?;
                let (n, c, f) = surface_counts(&next)?;
                if n > t_nodes || c > t_circles || f > t_bangs {
                    continue;
                }
                if seen.insert(canonical_form(&next)?) {
                    let mut next_ops = ops.clone();
                    next_ops.push(op);
                    queue.push_back((next_ops, next));
                }
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// The interleaved search
// ---------------------------------------------------------------------------

/// One branch of the match search.
///
/// `instance` is the pattern after the operations in `ops`, still
/// normalized; `map` is the partial vertex embedding built so far and
/// `image` its range.  The remaining fields are the worklists the search
/// maintains between rounds: the unmatched concrete material
/// (`unmatched_*`), the matched nodes whose neighborhoods are not yet
/// fully covered (`partial`) and the subset queued for another visit
/// (`scheduled`), the target vertices still available (`matchable`), the
/// fixed boxes awaiting a target box (`pending_fixed`), the unfixed
/// depth-zero boxes available for branching (`copyable`), and the boxes
/// expanded at least once (`expanded`).  Fixing tags live on the vertices
/// themselves rather than in a separate table.  The pattern and target
/// graphs are carried by the search context, not cloned per branch.
#[derive(Debug, Clone)]
pub struct MatchState {
    pub instance: Graph,
    pub ops: Instantiation,
    pub map: BTreeMap<String, String>,
    pub image: BTreeSet<String>,
    pub unmatched_circles: BTreeSet<String>,
    pub unmatched_wires: BTreeSet<String>,
    pub unmatched_nodes: BTreeSet<String>,
    pub partial: BTreeSet<String>,
    pub scheduled: BTreeSet<String>,
    pub matchable: BTreeSet<String>,
    pub pending_fixed: BTreeSet<String>,
    pub copyable: BTreeSet<String>,
    pub expanded: BTreeSet<String>,
}

impl MatchState {
    fn seed(instance: Graph) -> MatchState {
        MatchState {
            instance,
            ops: Vec::new(),
            map: BTreeMap::new(),
            image: BTreeSet::new(),
            unmatched_circles: BTreeSet::new(),
            unmatched_wires: BTreeSet::new(),
            unmatched_nodes: BTreeSet::new(),
            partial: BTreeSet::new(),
            scheduled: BTreeSet::new(),
            matchable: BTreeSet::new(),
            pending_fixed: BTreeSet::new(),
            copyable: BTreeSet::new(),
            expanded: BTreeSet::new(),
        }
    }
}

fn bind(st: &mut MatchState, v: &str, t: &str) {
    st.map.insert(v.to_string(), t.to_string());
    st.image.insert(t.to_string());
    st.matchable.remove(t);
    st.unmatched_circles.remove(v);
    st.unmatched_wires.remove(v);
    st.unmatched_nodes.remove(v);
}

/// One string edge as seen from a chosen endpoint.
#[derive(Debug, Clone)]
struct Inc {
    edge: String,
    other: String,
    outgoing: bool,
    port: Option<Port>,
}

/// String-edge incidences at every vertex, in edge-name order.
/// Self-loops (circles) appear once, as outgoing.
fn incidences(g: &Graph) -> BTreeMap<String, Vec<Inc>> {
    let mut m: BTreeMap<String, Vec<Inc>> =
        g.vertices.keys().map(|v| (v.clone(), Vec::new())).collect();
    for (e, d) in &g.edges {
        if g.is_bang(&d.src) {
            continue;
        }
        m.get_mut(&d.src).expect("edge endpoints exist").push(Inc {
            edge: e.clone(),
            other: d.tgt.clone(),
            outgoing: true,
            port: d.port,
        });
        if d.src != d.tgt {
            m.get_mut(&d.tgt).expect("edge endpoints exist").push(Inc {
                edge: e.clone(),
                other: d.src.clone(),
                outgoing: false,
                port: d.port,
            });
        }
    }
    m
}

/// Per-subroutine view of the instance: recomputed whenever the instance
/// graph changes (which only box operations do).
struct SubCtx {
    i_adj: BTreeMap<String, Vec<Inc>>,
    i_boxes: BTreeMap<String, BTreeSet<String>>,
}

impl SubCtx {
    fn new(instance: &Graph) -> SubCtx {
        SubCtx { i_adj: incidences(instance), i_boxes: boxes_map(instance) }
    }
}

/// Debug-build snapshot for the subroutine's exit assertions.
struct Snap {
    dom: BTreeSet<String>,
    image: BTreeSet<String>,
    unmatched: BTreeSet<String>,
    matchable: BTreeSet<String>,
    instance: Graph,
    ops: Instantiation,
}

impl Snap {
    fn take(st: &MatchState) -> Snap {
        let mut unmatched = st.unmatched_circles.clone();
        unmatched.extend(st.unmatched_wires.iter().cloned());
        unmatched.extend(st.unmatched_nodes.iter().cloned());
        Snap {
            dom: st.map.keys().cloned().collect(),
            image: st.image.clone(),
            unmatched,
            matchable: st.matchable.clone(),
            instance: st.instance.clone(),
            ops: st.ops.clone(),
        }
    }
}

/// Variant assertion gate: `Some(prev)` asserts the termination variant
/// dropped below `prev` by the next checkpoint.
type Gate = Option<isize>;

fn mapped_boxes(
    map: &BTreeMap<String, String>,
    boxes: &BTreeSet<String>,
) -> Option<BTreeSet<String>> {
    boxes.iter().map(|b| map.get(b).cloned()).collect()
}

struct Engine<'a> {
    target: &'a Graph,
    t_adj: BTreeMap<String, Vec<Inc>>,
    t_boxes: BTreeMap<String, BTreeSet<String>>,
    t_bare: BTreeSet<String>,
    t_circle_verts: BTreeSet<String>,
    /// (src, tgt, port) → edge name, for every target edge.  Unique in a
    /// valid graph, since wires take at most one edge per direction.
    t_edge_names: BTreeMap<(String, String, Option<Port>), String>,
    t_nodes: usize,
    t_circles: usize,
    t_bangs: usize,
    cap: usize,
    bg: bool,
}

impl<'a> Engine<'a> {
    fn new(target: &'a Graph, cap: usize, bg: bool) -> Engine<'a> {
        let dec = wires(target);
        let mut t_bare = BTreeSet::new();
        let mut t_circle_verts = BTreeSet::new();
        let mut t_circles = 0;
        for w in &dec.wires {
            match w.kind {
                WireKind::Bare => t_bare.extend(w.vertices.iter().cloned()),
                WireKind::Circle => {
                    t_circles += 1;
                    t_circle_verts.extend(w.vertices.iter().cloned());
                }
                _ => {}
            }
            if cfg!(debug_assertions) {
                let want = match w.kind {
                    WireKind::Circle => 1,
                    WireKind::Interior | WireKind::Bare | WireKind::Input | WireKind::Output => 2,
                };
                debug_assert_eq!(
                    w.vertices.len(),
                    want,
                    "target not normalized for matching ({:?} wire)",
                    w.kind
                );
            }
        }
        Engine {
            target,
            t_adj: incidences(target),
            t_boxes: boxes_map(target),
            t_bare,
            t_circle_verts,
            t_edge_names: target
                .edges
                .iter()
                .map(|(e, d)| ((d.src.clone(), d.tgt.clone(), d.port), e.clone()))
                .collect(),
            t_nodes: target.vertices.values().filter(|d| matches!(d.vtype, VType::Node(_))).count(),
            t_circles,
            t_bangs: target.bang_vertices().len(),
            cap,
            bg,
        }
    }

    /// All string neighbors of target vertex `t` already have a preimage.
    fn complete_at(&self, image: &BTreeSet<String>, t: &str) -> bool {
        self.t_adj[t].iter().all(|i| image.contains(&i.other))
    }

    /// The Appendix-style termination variant: target size plus unmatched
    /// instance size minus matched size.  Strictly decreasing across the
    /// outer iterations that consume or produce matched material.
    fn variant(&self, st: &MatchState) -> isize {
        (self.target.vertices.len() + st.instance.vertices.len()) as isize
            - 2 * st.map.len() as isize
    }

    /// Rebuild the round's worklists from the instance and the partial
    /// map.  Returns `None` when the branch is already dead: some wire
    /// that can never disappear needs to attach to a target vertex whose
    /// neighborhood is fully used.
    fn prep(&self, mut st: MatchState) -> Result<Option<MatchState>> {
        let g = &st.instance;
        let i_boxes = boxes_map(g);
        let released = |v: &str| {
            boxes_of(&i_boxes, v)
                .iter()
                .all(|b| g.vertices[b].fixed.is_some() && st.map.contains_key(b))
        };
        let permanent =
            |v: &str| boxes_of(&i_boxes, v).iter().all(|b| g.vertices[b].fixed.is_some());

        let mut u_circles = BTreeSet::new();
        let mut u_wires = BTreeSet::new();
        let mut u_nodes = BTreeSet::new();
        let mut scheduled = BTreeSet::new();
        for w in &wires(g).wires {
            let matched_any = w.vertices.iter().any(|v| st.map.contains_key(v));
            if matched_any {
                debug_assert!(
                    w.vertices.iter().all(|v| st.map.contains_key(v)),
                    "wires are matched whole"
                );
                continue;
            }
            match w.kind {
                WireKind::Bare => {}
                WireKind::Circle => {
                    if w.vertices.iter().all(|v| released(v)) {
                        u_circles.extend(w.vertices.iter().cloned());
                    }
                }
                _ => {
                    let ends: Vec<&String> =
                        [w.source.as_ref(), w.target.as_ref()].into_iter().flatten().collect();
                    // an unmatched wire anchored at a node whose image is
                    // already saturated can never be placed — unless the
                    // wire sits in an unfixed box and so might be killed
                    if w.vertices.iter().all(|v| permanent(v)) {
                        for n in &ends {
                            if let Some(tn) = st.map.get(*n) {
                                if self.complete_at(&st.image, tn) {
                                    return Ok(None);
                                }
                            }
                        }
                    }
                    if !w.vertices.iter().all(|v| released(v)) {
                        continue;
                    }
                    for n in &ends {
                        debug_assert!(
                            st.map.contains_key(*n) || released(n),
                            "anchors of a released wire are matched or released"
                        );
                        if st.map.contains_key(*n) {
                            debug_assert!(st.partial.contains(*n));
                            scheduled.insert((*n).clone());
                        }
                    }
                    u_wires.extend(w.vertices.iter().cloned());
                }
            }
        }
        for (v, d) in &g.vertices {
            if matches!(d.vtype, VType::Node(_)) && !st.map.contains_key(v) && released(v) {
                u_nodes.insert(v.clone());
            }
        }
        for v in &st.partial {
            if self.complete_at(&st.image, &st.map[v]) {
                scheduled.insert(v.clone());
            }
        }

        let matchable: BTreeSet<String> = self
            .target
            .vertices
            .iter()
            .filter(|(t, d)| {
                d.vtype != VType::Bang
                    && !self.t_bare.contains(*t)
                    && !st.image.contains(*t)
                    && boxes_of(&self.t_boxes, t).iter().all(|b| st.image.contains(b))
            })
            .map(|(t, _)| t.clone())
            .collect();

        let mut pending_fixed = BTreeSet::new();
        let mut copyable = BTreeSet::new();
        for b in g.bang_vertices() {
            if st.map.contains_key(&b) {
                continue;
            }
            if g.vertices[&b].fixed.is_some() {
                pending_fixed.insert(b);
            } else if depth(g, &b)? == 0 {
                copyable.insert(b);
            }
        }

        st.unmatched_circles = u_circles;
        st.unmatched_wires = u_wires;
        st.unmatched_nodes = u_nodes;
        st.scheduled = scheduled;
        st.matchable = matchable;
        st.pending_fixed = pending_fixed;
        st.copyable = copyable;
        Ok(Some(st))
    }

    // -- debug-build instrumentation ------------------------------------

    /// Invariants that hold at every checkpoint: the map is an injective,
    /// type- and tag-respecting vertex correspondence whose matched edges
    /// exist in the target, and the partially-matched set tracks exactly
    /// the matched nodes with uncovered neighborhoods.
    fn check_globals(&self, st: &MatchState) {
        let mut seen = BTreeSet::new();
        for (v, t) in &st.map {
            assert!(seen.insert(t.clone()), "map must be injective");
            assert_eq!(
                st.instance.vertices[v].vtype, self.target.vertices[t].vtype,
                "map must respect vertex types"
            );
            assert_eq!(
                match_tag(&st.instance, v),
                match_tag(self.target, t),
                "map must respect fixing tags"
            );
        }
        assert_eq!(seen, st.image, "image set tracks the map");
        for d in st.instance.edges.values() {
            if let (Some(ms), Some(mt)) = (st.map.get(&d.src), st.map.get(&d.tgt)) {
                assert!(
                    self.t_edge_names.contains_key(&(ms.clone(), mt.clone(), d.port)),
                    "edges between matched vertices must be matched"
                );
            }
        }
        for v in &st.partial {
            assert!(st.map.contains_key(v) && st.instance.is_node(v), "partial set tracks the map");
        }
        for (v, t) in &st.map {
            if st.instance.is_node(v) && !st.partial.contains(v) {
                assert!(
                    self.complete_at(&st.image, t),
                    "matched nodes outside the partial set are completely matched"
                );
            }
        }
    }

    /// The matching subroutine's entry preconditions.
    fn check_entry(&self, st: &MatchState) {
        // (i) the instance stays normalized under box operations
        for w in wires(&st.instance).wires {
            let want = match w.kind {
                WireKind::Circle => 1,
                WireKind::Interior | WireKind::Bare => 2,
                WireKind::Input | WireKind::Output => 1,
            };
            assert_eq!(w.vertices.len(), want, "instance not normalized ({:?} wire)", w.kind);
        }
        // (ii) the worklists hold unmatched vertices only
        for v in st
            .unmatched_circles
            .iter()
            .chain(st.unmatched_wires.iter())
            .chain(st.unmatched_nodes.iter())
        {
            assert!(!st.map.contains_key(v), "unmatched sets and map are disjoint");
        }
        let ctx = SubCtx::new(&st.instance);
        // (iii) every pending wire-vertex can be reached from a node that
        // will be visited
        for v in &st.unmatched_wires {
            assert!(
                ctx.i_adj[v].iter().any(|i| st.unmatched_nodes.contains(&i.other)
                    || st.scheduled.contains(&i.other)
                    || st.unmatched_wires.contains(&i.other)),
                "pending wire-vertex {v} is unreachable"
            );
        }
        // (iv) nodes whose image filled up elsewhere are queued for a revisit
        for v in &st.partial {
            if self.complete_at(&st.image, &st.map[v]) {
                assert!(st.scheduled.contains(v), "complete partial node {v} must be scheduled");
            }
        }
        // (v) wires enter the worklist whole
        for w in wires(&st.instance).wires {
            if w.vertices.iter().any(|v| st.unmatched_wires.contains(v)) {
                assert!(
                    w.vertices.iter().all(|v| st.unmatched_wires.contains(v)),
                    "wires enter the worklist whole"
                );
            }
        }
        // (vi) matched wire-vertices have fully matched neighborhoods
        for (v, _) in &st.map {
            if st.instance.is_wire(v) {
                for i in &ctx.i_adj[v] {
                    assert!(
                        st.map.contains_key(&i.other),
                        "matched wire-vertex {v} has unmatched neighbor"
                    );
                }
            }
        }
        // (vii) available target wire-vertices neighbor only available,
        // used, or still-boxed vertices
        for t in &st.matchable {
            if self.target.is_wire(t) {
                for i in &self.t_adj[t] {
                    let o = &i.other;
                    assert!(
                        st.matchable.contains(o)
                            || st.image.contains(o)
                            || !boxes_of(&self.t_boxes, o)
                                .iter()
                                .all(|b| st.image.contains(b)),
                        "target wire-vertex {t} neighbors unusable vertex {o}"
                    );
                }
            }
        }
        // (viii) nothing is both available and used
        assert!(st.matchable.is_disjoint(&st.image), "matchable and image are disjoint");
    }

    /// The matching subroutine's exit postconditions, against the entry
    /// snapshot.
    fn check_exit(&self, st: &MatchState, snap: &Snap) {
        assert!(
            st.unmatched_circles.is_empty()
                && st.unmatched_wires.is_empty()
                && st.unmatched_nodes.is_empty()
                && st.scheduled.is_empty(),
            "every vertex marked for matching was handled"
        );
        let dom: BTreeSet<String> = st.map.keys().cloned().collect();
        let want: BTreeSet<String> = snap.dom.union(&snap.unmatched).cloned().collect();
        assert_eq!(dom, want, "exactly the marked vertices were matched");
        assert!(
            st.image.difference(&snap.image).all(|t| snap.matchable.contains(t)),
            "new images come from the entry's available set"
        );
        for (v, t) in &st.map {
            if st.instance.is_node(v) {
                assert_eq!(
                    st.partial.contains(v),
                    !self.complete_at(&st.image, t),
                    "partial set is exactly the incompletely matched nodes"
                );
            }
        }
        assert!(st.instance == snap.instance && st.ops == snap.ops, "subroutine leaves the instance alone");
    }

    // -- the string graph subroutine ------------------------------------

    /// Match every circle, wire, and node the current round released.
    /// Returns the extended states (one per embedding choice); an empty
    /// list means the branch died.
    fn subroutine(&self, mut st: MatchState) -> Result<Vec<MatchState>> {
        if cfg!(debug_assertions) {
            self.check_entry(&st);
            self.check_globals(&st);
        }
        let snap = if cfg!(debug_assertions) { Some(Snap::take(&st)) } else { None };
        let ctx = SubCtx::new(&st.instance);
        // circles first: they are interchangeable under rewriting, so the
        // first compatible target circle serves for all of them and no
        // branching is needed
        let circles: Vec<String> = st.unmatched_circles.iter().cloned().collect();
        for c in circles {
            let Some(want) = mapped_boxes(&st.map, &boxes_of(&ctx.i_boxes, &c)) else {
                return Ok(Vec::new());
            };
            let ty = st.instance.vertices[&c].vtype.clone();
            let tag = match_tag(&st.instance, &c).map(str::to_string);
            let cand = st
                .matchable
                .iter()
                .find(|t| {
                    self.t_circle_verts.contains(*t)
                        && self.target.vertices[*t].vtype == ty
                        && match_tag(self.target, t) == tag.as_deref()
                        && boxes_of(&self.t_boxes, t) == want
                })
                .cloned();
            match cand {
                Some(t) => bind(&mut st, &c, &t),
                None => return Ok(Vec::new()),
            }
        }
        let mut out = Vec::new();
        self.step(&ctx, st, None, &mut out)?;
        if let Some(s) = &snap {
            for r in &out {
                self.check_exit(r, s);
                self.check_globals(r);
            }
        }
        Ok(out)
    }

    /// Take the next queued node (revisits first), or the next fresh node,
    /// and walk its wires; recurse until both worklists empty.
    fn step(
        &self,
        ctx: &SubCtx,
        mut st: MatchState,
        prev: Option<usize>,
        out: &mut Vec<MatchState>,
    ) -> Result<()> {
        let val =
            2 * st.unmatched_nodes.len() + st.scheduled.len() + st.unmatched_wires.len();
        debug_assert!(prev.map_or(true, |p| val < p), "subroutine failed to make progress");
        if let Some(v) = st.scheduled.pop_first() {
            return self.wire_loop(ctx, v, st, None, Some(val), out);
        }
        if let Some(v) = st.unmatched_nodes.pop_first() {
            let Some(want) = mapped_boxes(&st.map, &boxes_of(&ctx.i_boxes, &v)) else {
                return Ok(());
            };
            let ty = st.instance.vertices[&v].vtype.clone();
            let tag = match_tag(&st.instance, &v).map(str::to_string);
            let cands: Vec<String> = st
                .matchable
                .iter()
                .filter(|t| {
                    self.target.is_node(t)
                        && self.target.vertices[*t].vtype == ty
                        && match_tag(self.target, t) == tag.as_deref()
                        && boxes_of(&self.t_boxes, t) == want
                })
                .cloned()
                .collect();
            for t in cands {
                let mut child = st.clone();
                bind(&mut child, &v, &t);
                child.partial.insert(v.clone());
                child.scheduled.insert(v.clone());
                self.step(ctx, child, Some(val), out)?;
            }
            return Ok(());
        }
        out.push(st);
        Ok(())
    }

    /// Attach the unmatched wires at matched node `v`, one at a time,
    /// branching over the target edges that can carry each.
    fn wire_loop(
        &self,
        ctx: &SubCtx,
        v: String,
        st: MatchState,
        prev_pending: Option<usize>,
        step_val: Option<usize>,
        out: &mut Vec<MatchState>,
    ) -> Result<()> {
        let mut pending: Vec<&Inc> = ctx.i_adj[&v]
            .iter()
            .filter(|i| st.unmatched_wires.contains(&i.other))
            .collect();
        pending.sort_by(|a, b| (&a.other, &a.edge).cmp(&(&b.other, &b.edge)));
        debug_assert!(
            prev_pending.map_or(true, |p| pending.len() < p),
            "wire loop failed to shrink"
        );
        let Some(inc_vw) = pending.first().map(|i| (*i).clone()) else {
            let mut st = st;
            let tv = st.map[&v].clone();
            if self.complete_at(&st.image, &tv) {
                st.partial.remove(&v);
            }
            return self.step(ctx, st, step_val, out);
        };
        let n_pending = pending.len();
        let w = inc_vw.other.clone();
        let m_v = st.map[&v].clone();
        let Some(want_w) = mapped_boxes(&st.map, &boxes_of(&ctx.i_boxes, &w)) else {
            return Ok(());
        };
        let w_ty = st.instance.vertices[&w].vtype.clone();
        let w_tag = match_tag(&st.instance, &w).map(str::to_string);
        let cands: Vec<Inc> = self.t_adj[&m_v]
            .iter()
            .filter(|i| {
                i.outgoing == inc_vw.outgoing
                    && i.port == inc_vw.port
                    && st.matchable.contains(&i.other)
                    && self.target.is_wire(&i.other)
                    && self.target.vertices[&i.other].vtype == w_ty
                    && match_tag(self.target, &i.other) == w_tag.as_deref()
                    && boxes_of(&self.t_boxes, &i.other) == want_w
            })
            .cloned()
            .collect();
        let w_incs = &ctx.i_adj[&w];
        match w_incs.len() {
            // boundary wire-vertex: one edge, so the candidate is the match
            1 => {
                for c in cands {
                    let mut child = st.clone();
                    bind(&mut child, &w, &c.other);
                    self.wire_loop(ctx, v.clone(), child, Some(n_pending), step_val, out)?;
                }
            }
            // interior wire: follow it across its second vertex to the far
            // node, and require the target wire to run the same course
            2 => {
                let e2 = w_incs.iter().find(|i| i.edge != inc_vw.edge).expect("second incidence");
                let w2 = e2.other.clone();
                debug_assert!(st.instance.is_wire(&w2), "interior wires have two wire-vertices");
                let w2_incs = &ctx.i_adj[&w2];
                debug_assert_eq!(w2_incs.len(), 2, "interior wires have anchored ends");
                let e3 =
                    w2_incs.iter().find(|i| i.edge != e2.edge).expect("second incidence").clone();
                let u = e3.other.clone();
                let Some(want_w2) = mapped_boxes(&st.map, &boxes_of(&ctx.i_boxes, &w2)) else {
                    return Ok(());
                };
                let w2_ty = st.instance.vertices[&w2].vtype.clone();
                let w2_tag = match_tag(&st.instance, &w2).map(str::to_string);
                for c in cands {
                    let t = c.other.clone();
                    let conts: Vec<Inc> = self.t_adj[&t]
                        .iter()
                        .filter(|i| {
                            i.edge != c.edge
                                && i.outgoing == e2.outgoing
                                && i.port == e2.port
                                && i.other != t
                                && self.target.is_wire(&i.other)
                                && st.matchable.contains(&i.other)
                                && self.target.vertices[&i.other].vtype == w2_ty
                                && match_tag(self.target, &i.other) == w2_tag.as_deref()
                                && boxes_of(&self.t_boxes, &i.other) == want_w2
                        })
                        .cloned()
                        .collect();
                    for c2 in conts {
                        let t2 = c2.other.clone();
                        let enders: Vec<&Inc> = self.t_adj[&t2]
                            .iter()
                            .filter(|i| {
                                i.edge != c2.edge
                                    && i.outgoing == e3.outgoing
                                    && i.port == e3.port
                            })
                            .collect();
                        if let Some(m_u) = st.map.get(&u) {
                            if enders.iter().any(|i| &i.other == m_u) {
                                let mut child = st.clone();
                                bind(&mut child, &w, &t);
                                bind(&mut child, &w2, &t2);
                                child.scheduled.insert(u.clone());
                                self.wire_loop(
                                    ctx,
                                    v.clone(),
                                    child,
                                    Some(n_pending),
                                    step_val,
                                    out,
                                )?;
                            }
                        } else if st.unmatched_nodes.contains(&u) {
                            let Some(want_u) = mapped_boxes(&st.map, &boxes_of(&ctx.i_boxes, &u))
                            else {
                                continue;
                            };
                            let u_ty = st.instance.vertices[&u].vtype.clone();
                            let u_tag = match_tag(&st.instance, &u).map(str::to_string);
                            let far: Vec<String> = enders
                                .iter()
                                .filter(|i| {
                                    self.target.is_node(&i.other)
                                        && st.matchable.contains(&i.other)
                                        && self.target.vertices[&i.other].vtype == u_ty
                                        && match_tag(self.target, &i.other) == u_tag.as_deref()
                                        && boxes_of(&self.t_boxes, &i.other) == want_u
                                })
                                .map(|i| i.other.clone())
                                .collect();
                            for n in far {
                                let mut child = st.clone();
                                bind(&mut child, &w, &t);
                                bind(&mut child, &w2, &t2);
                                bind(&mut child, &u, &n);
                                child.partial.insert(u.clone());
                                child.scheduled.insert(u.clone());
                                self.wire_loop(
                                    ctx,
                                    v.clone(),
                                    child,
                                    Some(n_pending),
                                    step_val,
                                    out,
                                )?;
                            }
                        } else {
                            debug_assert!(false, "eligible wire has an unready far node {u}");
                        }
                    }
                }
            }
            n => debug_assert!(false, "wire-vertex {w} has {n} incidences"),
        }
        Ok(())
    }

    // -- the outer loop ---------------------------------------------------

    /// A fixed box whose every ancestor is fixed and matched is ready to
    /// be paired with a target box.
    fn ready_fixed(
        &self,
        st: &MatchState,
        i_boxes: &BTreeMap<String, BTreeSet<String>>,
    ) -> Option<String> {
        st.pending_fixed
            .iter()
            .find(|b| {
                boxes_of(i_boxes, b).iter().all(|c| {
                    st.instance.vertices[c].fixed.is_some() && st.map.contains_key(c)
                })
            })
            .cloned()
    }

    /// Whether everything directly inside `b` is concrete, non-bare
    /// material that the next round must match — the condition under
    /// which expanding `b` provably shrinks the termination variant.
    fn exp_pays_off(&self, g: &Graph, b: &str) -> Result<bool> {
        let bb = bang_box(g, b)?;
        let bare: BTreeSet<String> = wires(g)
            .wires
            .iter()
            .filter(|w| w.kind == WireKind::Bare)
            .flat_map(|w| w.vertices.iter().cloned())
            .collect();
        let i_boxes = boxes_map(g);
        let mut any = false;
        for v in bb.iter().filter(|v| *v != b) {
            if g.is_bang(v) || bare.contains(v) {
                return Ok(false);
            }
            if boxes_of(&i_boxes, v) != BTreeSet::from([b.to_string()]) {
                return Ok(false);
            }
            any = true;
        }
        Ok(any)
    }

    /// One outer iteration: rebuild the worklists, run the subroutine,
    /// then either pair a ready fixed box, branch over the operations on
    /// the first free box, or finish via bare-wire placement.
    fn advance(&self, st: MatchState, gate: Gate) -> Result<(Vec<(MatchState, Gate)>, Vec<Matching>)> {
        let mut children = Vec::new();
        let mut found = Vec::new();
        let Some(st) = self.prep(st)? else {
            return Ok((children, found));
        };
        for res in self.subroutine(st)? {
            let val = self.variant(&res);
            debug_assert!(gate.map_or(true, |p| val < p), "termination variant failed to decrease");
            let i_boxes = boxes_map(&res.instance);
            if let Some(b) = self.ready_fixed(&res, &i_boxes) {
                let want = mapped_boxes(&res.map, &boxes_of(&i_boxes, &b))
                    .expect("ancestors of a ready box are matched");
                let tag = match_tag(&res.instance, &b).map(str::to_string);
                for b2 in self.target.bang_vertices() {
                    if res.image.contains(&b2)
                        || boxes_of(&self.t_boxes, &b2) != want
                        || match_tag(self.target, &b2) != tag.as_deref()
                    {
                        continue;
                    }
                    let mut child = res.clone();
                    bind(&mut child, &b, &b2);
                    children.push((child, Some(val)));
                }
            } else if let Some(b) = res.copyable.first().cloned() {
                // one free box at a time suffices: the operations on
                // distinct boxes commute, and instance isomorphism
                // deduplication absorbs the rest
                if res.ops.len() >= self.cap {
                    continue;
                }
                let pays = self.exp_pays_off(&res.instance, &b)?;
                let mut branch_ops = vec![
                    BBoxOp::Kill { bbox: b.clone() },
                    BBoxOp::Exp { bbox: b.clone() },
                ];
                if self.bg {
                    branch_ops.push(BBoxOp::CFix { bbox: b.clone(), tag: SCRATCH_TAG.to_string() });
                }
                for op in branch_ops {
                    let (next, _) = apply_op(&res.instance, &op)?;
                    let (n, c, f) = surface_counts(&next)?;
                    if n > self.t_nodes || c > self.t_circles || f > self.t_bangs {
                        continue;
                    }
                    let kill = matches!(op, BBoxOp::Kill { .. });
                    let exp = matches!(op, BBoxOp::Exp { .. });
                    let mut child = res.clone();
                    child.instance = next;
                    if exp {
                        child.expanded.insert(b.clone());
                    }
                    child.ops.push(op);
                    let g = if kill || (exp && pays) { Some(val) } else { None };
                    children.push((child, g));
                }
            } else {
                debug_assert!(
                    res.pending_fixed.is_empty(),
                    "a fixed box outlived every chance to become ready"
                );
                if !res.partial.is_empty() {
                    // leftover target edges at a matched node can never be
                    // covered now — not even by bare wires, which only
                    // subdivide edges, never absorb them
                    continue;
                }
                found.extend(self.bare_phase(res)?);
            }
        }
        Ok((children, found))
    }

    // -- bare wires and finish --------------------------------------------

    fn bare_phase(&self, st: MatchState) -> Result<Vec<Matching>> {
        debug_assert!(st.partial.is_empty() && st.pending_fixed.is_empty());
        let i_boxes = boxes_map(&st.instance);
        let mut bares: Vec<Wire> = wires(&st.instance)
            .wires
            .into_iter()
            .filter(|w| w.kind == WireKind::Bare)
            .collect();
        bares.sort_by(|a, b| a.vertices[0].cmp(&b.vertices[0]));
        // edges already carrying a match may not be subdivided
        let mut consumed = BTreeSet::new();
        for d in st.instance.edges.values() {
            if let (Some(ms), Some(mt)) = (st.map.get(&d.src), st.map.get(&d.tgt)) {
                let name = self
                    .t_edge_names
                    .get(&(ms.clone(), mt.clone(), d.port))
                    .expect("edges between matched vertices are matched");
                consumed.insert(name.clone());
            }
        }
        let mut out = Vec::new();
        self.place_bares(
            st,
            self.target.clone(),
            self.t_boxes.clone(),
            consumed,
            &bares,
            &i_boxes,
            0,
            &mut out,
        )?;
        Ok(out)
    }

    #[allow(clippy::too_many_arguments)]
    fn place_bares(
        &self,
        st: MatchState,
        work: Graph,
        wboxes: BTreeMap<String, BTreeSet<String>>,
        consumed: BTreeSet<String>,
        bares: &[Wire],
        i_boxes: &BTreeMap<String, BTreeSet<String>>,
        idx: usize,
        out: &mut Vec<Matching>,
    ) -> Result<()> {
        if idx == bares.len() {
            if let Some(m) = self.finish(st, work)? {
                out.push(m);
            }
            return Ok(());
        }
        let wire = &bares[idx];
        debug_assert_eq!(wire.vertices.len(), 2, "bare wires are normalized to two vertices");
        let s = &wire.vertices[0];
        let t = &wire.vertices[1];
        let ty = st.instance.vertices[s].vtype.clone();
        let Some(want) = mapped_boxes(&st.map, &boxes_of(i_boxes, s)) else {
            return Ok(());
        };
        for e in bare_candidates(&work, &consumed, &wboxes, &ty, &want) {
            let mut work2 = work.clone();
            let mut wboxes2 = wboxes.clone();
            let mut consumed2 = consumed.clone();
            let (s1, s2, mid) = subdivide(&mut work2, &mut wboxes2, &e, &ty, &want);
            consumed2.remove(&e);
            consumed2.insert(mid);
            let mut st2 = st.clone();
            bind(&mut st2, s, &s1);
            bind(&mut st2, t, &s2);
            self.place_bares(st2, work2, wboxes2, consumed2, bares, i_boxes, idx + 1, out)?;
        }
        Ok(())
    }

    /// Assemble and validate the certificate.  The engine should only
    /// reach this point with an embedding that passes every check; the
    /// validation is an independent safety net, not a filter.
    fn finish(&self, st: MatchState, final_target: Graph) -> Result<Option<Matching>> {
        let mut dom = st.instance.clone();
        strip_scratch_tags(&mut dom);
        let r = build_matching(&dom, final_target, &st.map, &st.ops)?;
        debug_assert!(r.is_some(), "engine produced an embedding that fails validation");
        Ok(r)
    }

    // -- drivers -----------------------------------------------------------

    fn drain(&self, seed: (MatchState, Gate)) -> Result<Vec<Matching>> {
        let mut found = Vec::new();
        let mut stack = vec![seed];
        while let Some((st, gate)) = stack.pop() {
            let (children, fin) = self.advance(st, gate)?;
            found.extend(fin);
            stack.extend(children);
        }
        Ok(found)
    }

    fn search(&self, seed: MatchState, jobs: usize) -> Result<Vec<Matching>> {
        if jobs <= 1 {
            return self.drain((seed, None));
        }
        // grow a frontier breadth-first until there is enough independent
        // work, then let the pool drain the branches; the final ordering
        // pass makes the split invisible
        let mut found = Vec::new();
        let mut frontier: VecDeque<(MatchState, Gate)> = VecDeque::new();
        frontier.push_back((seed, None));
        while !frontier.is_empty() && frontier.len() < jobs * 4 {
            let (st, gate) = frontier.pop_front().expect("nonempty");
            let (children, fin) = self.advance(st, gate)?;
            found.extend(fin);
            frontier.extend(children);
        }
        let branches: Vec<(MatchState, Gate)> = frontier.into_iter().collect();
        let results: Result<Vec<Vec<Matching>>> =
            match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
                Ok(pool) => pool
                    .install(|| branches.into_par_iter().map(|b| self.drain(b)).collect()),
                Err(_) => branches.into_iter().map(|b| self.drain(b)).collect(),
            };
        for r in results? {
            found.extend(r);
        }
        Ok(found)
    }
}

/// Target edges a bare wire of type `ty` in boxes `want` can subdivide:
/// any unconsumed string edge whose wire-vertex endpoints all carry that
/// type and whose box memberships add up to exactly `want`.
fn bare_candidates(
    work: &Graph,
    consumed: &BTreeSet<String>,
    wboxes: &BTreeMap<String, BTreeSet<String>>,
    ty: &VType,
    want: &BTreeSet<String>,
) -> Vec<String> {
    let mut out = Vec::new();
    for (e, d) in &work.edges {
        if consumed.contains(e) || work.is_bang(&d.src) {
            continue;
        }
        let mut ends: Vec<&String> = Vec::new();
        if work.is_wire(&d.src) {
            ends.push(&d.src);
        }
        if work.is_wire(&d.tgt) && d.tgt != d.src {
            ends.push(&d.tgt);
        }
        if ends.is_empty() || !ends.iter().all(|v| work.vertices[*v].vtype == *ty) {
            continue;
        }
        let mut boxes = BTreeSet::new();
        for v in ends {
            boxes.extend(boxes_of(wboxes, v));
        }
        if boxes == *want {
            out.push(e.clone());
        }
    }
    out
}

/// Replace edge `e` with vertex–edge–vertex, preserving the node-side
/// ports, and put the new wire-vertices into `boxes`.  Returns the two
/// new vertices and the middle edge.
fn subdivide(
    work: &mut Graph,
    wboxes: &mut BTreeMap<String, BTreeSet<String>>,
    e: &str,
    ty: &VType,
    boxes: &BTreeSet<String>,
) -> (String, String, String) {
    let d = work.edges.get(e).expect("candidate edge exists").clone();
    work.edges.remove(e);
    let s1 = work.fresh_name(&format!("{e}.a"));
    work.vertices.insert(s1.clone(), VData { vtype: ty.clone(), fixed: None });
    let s2 = work.fresh_name(&format!("{e}.b"));
    work.vertices.insert(s2.clone(), VData { vtype: ty.clone(), fixed: None });
    let p_src = d.port.filter(|p| p.dir == Dir::Out);
    let p_tgt = d.port.filter(|p| p.dir == Dir::In);
    work.add_edge(&format!("{e}.l"), EData { src: d.src.clone(), tgt: s1.clone(), port: p_src });
    let mid = work.add_edge(&format!("{e}.m"), EData { src: s1.clone(), tgt: s2.clone(), port: None });
    work.add_edge(&format!("{e}.r"), EData { src: s2.clone(), tgt: d.tgt.clone(), port: p_tgt });
    for b in boxes {
        work.add_edge(&format!("{e}.pa"), EData { src: b.clone(), tgt: s1.clone(), port: None });
        work.add_edge(&format!("{e}.pb"), EData { src: b.clone(), tgt: s2.clone(), port: None });
    }
    wboxes.insert(s1.clone(), boxes.clone());
    wboxes.insert(s2.clone(), boxes.clone());
    (s1, s2, mid)
}

/// Build the certificate for a completed vertex assignment, or `None` if
/// the assignment fails any of the matching conditions: monomorphism,
/// local isomorphism at node-vertices, box-membership reflection, and
/// exact fixing-tag agreement.
fn build_matching(
    dom: &Graph,
    cod: Graph,
    vmap: &BTreeMap<String, String>,
    ops: &[BBoxOp],
) -> Result<Option<Matching>> {
    let Some(emap) = induced_emap(dom, &cod, vmap) else {
        return Ok(None);
    };
    let mo = Morphism { dom: dom.clone(), cod, vmap: vmap.clone(), emap };
    let flags = check_morphism(&mo)?;
    let tags_ok =
        mo.vmap.iter().all(|(v, t)| mo.dom.vertices[v].fixed == mo.cod.vertices[t].fixed);
    if flags.valid && flags.mono && flags.local_iso && flags.reflects_bbox_containment && tags_ok {
        Ok(Some(Matching { instantiation: ops.to_vec(), morphism: mo }))
    } else {
        Ok(None)
    }
}

/// Canonical result order, duplicate collapse, and the result cap.
fn sort_dedup(found: Vec<Matching>, max_results: Option<usize>) -> Vec<Matching> {
    let mut keyed: Vec<(String, String, Matching)> = found
        .into_iter()
        .map(|m| {
            let k = m.key();
            let ops = serde_json::to_string(&m.instantiation).expect("operations serialize");
            (k, ops, m)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    keyed.dedup_by(|a, b| a.0 == b.0);
    let mut out: Vec<Matching> = keyed.into_iter().map(|t| t.2).collect();
    if let Some(k) = max_results {
        out.truncate(k);
    }
    out
}

fn run_search(
    pattern: &Graph,
    target: &Graph,
    cfg: &MatchConfig,
    jobs: usize,
    require_concrete: bool,
) -> Result<Vec<Matching>> {
    validate_pair(pattern, target)?;
    if require_concrete && !target.is_concrete() {
        return Err(Error::NotConcrete("the match target must be concrete".into()));
    }
    let p_n = normalize(pattern, NormalizeMode::MatcherPattern);
    let (p_w, prefix) = resolve_wild(&p_n, cfg)?;
    let t_n = normalize(target, NormalizeMode::MatcherTarget);
    let cap = prefix.len() + cfg.max_expansions.unwrap_or_else(|| length_bound(&p_w, &t_n));
    let bg = !t_n.bang_vertices().is_empty();
    let engine = Engine::new(&t_n, cap, bg);
    let mut seed = MatchState::seed(p_w);
    seed.ops = prefix;
    let found = engine.search(seed, jobs.max(1))?;
    Ok(sort_dedup(found, cfg.max_results))
}

/// Every way `pattern` matches the concrete graph `target`, deduplicated
/// up to instance isomorphism and choice of circles, in a deterministic
/// order.
pub fn find_matches(pattern: &Graph, target: &Graph, cfg: &MatchConfig) -> Result<Vec<Matching>> {
    run_search(pattern, target, cfg, 1, true)
}

/// [`find_matches`], with the branch exploration spread over `jobs`
/// threads.  The result is identical for every job count.
pub fn find_matches_jobs(
    pattern: &Graph,
    target: &Graph,
    cfg: &MatchConfig,
    jobs: usize,
) -> Result<Vec<Matching>> {
    run_search(pattern, target, cfg, jobs, true)
}

/// Every way `pattern` matches the pattern graph `target`.  On top of
/// [`find_matches`], the pattern's boxes may be frozen with `CFix` and
/// paired one-to-one with target boxes that share the same ancestry, and
/// fixed boxes only ever pair with equally-tagged fixed boxes.  On a
/// concrete target this coincides with [`find_matches`].
pub fn find_matches_bg(pattern: &Graph, target: &Graph, cfg: &MatchConfig) -> Result<Vec<Matching>> {
    run_search(pattern, target, cfg, 1, false)
}

/// [`find_matches_bg`] over `jobs` threads; same results, any job count.
pub fn find_matches_bg_jobs(
    pattern: &Graph,
    target: &Graph,
    cfg: &MatchConfig,
    jobs: usize,
) -> Result<Vec<Matching>> {
    run_search(pattern, target, cfg, jobs, false)
}

// ---------------------------------------------------------------------------
// Reference implementation
// ---------------------------------------------------------------------------

struct OracleCtx<'a> {
    dom: &'a Graph,
    d_boxes: BTreeMap<String, BTreeSet<String>>,
    target: &'a Graph,
    t_bare: &'a BTreeSet<String>,
    t_boxes: &'a BTreeMap<String, BTreeSet<String>>,
    t_edge_names: &'a BTreeMap<(String, String, Option<Port>), String>,
    bares: Vec<Wire>,
    ops: &'a [BBoxOp],
}

impl OracleCtx<'_> {
    fn assign(
        &self,
        order: &[String],
        idx: usize,
        map: &mut BTreeMap<String, String>,
        used: &mut BTreeSet<String>,
        out: &mut Vec<Matching>,
    ) -> Result<()> {
        if idx == order.len() {
            let mut consumed = BTreeSet::new();
            for d in self.dom.edges.values() {
                if let (Some(ms), Some(mt)) = (map.get(&d.src), map.get(&d.tgt)) {
                    if let Some(e) = self.t_edge_names.get(&(ms.clone(), mt.clone(), d.port)) {
                        consumed.insert(e.clone());
                    }
                }
            }
            return self.place(
                self.target.clone(),
                self.t_boxes.clone(),
                consumed,
                0,
                map,
                out,
            );
        }
        let v = &order[idx];
        let vd = &self.dom.vertices[v];
        for (t, td) in &self.target.vertices {
            if used.contains(t)
                || self.t_bare.contains(t)
                || td.vtype != vd.vtype
                || td.fixed != vd.fixed
            {
                continue;
            }
            let consistent = self.dom.edges.values().all(|d| {
                let touches = d.src == *v || d.tgt == *v;
                if !touches {
                    return true;
                }
                let src = if d.src == *v { Some(t) } else { map.get(&d.src) };
                let tgt = if d.tgt == *v { Some(t) } else { map.get(&d.tgt) };
                match (src, tgt) {
                    (Some(a), Some(b)) => {
                        self.t_edge_names.contains_key(&((*a).clone(), (*b).clone(), d.port))
                    }
                    _ => true,
                }
            });
            if !consistent {
                continue;
            }
            map.insert(v.clone(), t.clone());
            used.insert(t.clone());
            self.assign(order, idx + 1, map, used, out)?;
            map.remove(v);
            used.remove(t);
        }
        Ok(())
    }

    fn place(
        &self,
        work: Graph,
        wboxes: BTreeMap<String, BTreeSet<String>>,
        consumed: BTreeSet<String>,
        idx: usize,
        map: &BTreeMap<String, String>,
        out: &mut Vec<Matching>,
    ) -> Result<()> {
        if idx == self.bares.len() {
            if let Some(m) = build_matching(self.dom, work, map, self.ops)? {
                out.push(m);
            }
            return Ok(());
        }
        let wire = &self.bares[idx];
        let s = &wire.vertices[0];
        let t = &wire.vertices[1];
        let ty = self.dom.vertices[s].vtype.clone();
        let Some(want) = mapped_boxes(map, &boxes_of(&self.d_boxes, s)) else {
            return Ok(());
        };
        for e in bare_candidates(&work, &consumed, &wboxes, &ty, &want) {
            let mut work2 = work.clone();
            let mut wboxes2 = wboxes.clone();
            let mut consumed2 = consumed.clone();
            let (s1, s2, mid) = subdivide(&mut work2, &mut wboxes2, &e, &ty, &want);
            consumed2.remove(&e);
            consumed2.insert(mid);
            let mut map2 = map.clone();
            map2.insert(s.clone(), s1);
            map2.insert(t.clone(), s2);
            self.place(work2, wboxes2, consumed2, idx + 1, &map2, out)?;
        }
        Ok(())
    }
}

/// Brute-force matcher for cross-checking [`find_matches`] and
/// [`find_matches_bg`] on small inputs: enumerate every instance within
/// `bound` operations, try every injective vertex assignment, keep the
/// ones that validate, and collapse duplicates exactly like the engine.
/// Rejects inputs past a small size cap.
pub fn oracle_matches(pattern: &Graph, target: &Graph, bound: usize) -> Result<Vec<Matching>> {
    const CAP: usize = 128;
    validate_pair(pattern, target)?;
    if let Some(b) = detect_wild(pattern)?.first() {
        return Err(Error::WildBangBox(b.clone()));
    }
    let size = pattern.vertices.len().max(target.vertices.len());
    if size > CAP {
        return Err(Error::SizeLimit { size, cap: CAP });
    }
    let p_n = normalize(pattern, NormalizeMode::MatcherPattern);
    let t_n = normalize(target, NormalizeMode::MatcherTarget);
    let cfg =
        MatchConfig { max_expansions: Some(bound), kill_wild: false, max_results: None };
    let instances = enumerate_instances(&p_n, &t_n, &cfg)?;
    let t_bare: BTreeSet<String> = wires(&t_n)
        .wires
        .iter()
        .filter(|w| w.kind == WireKind::Bare)
        .flat_map(|w| w.vertices.iter().cloned())
        .collect();
    let t_boxes = boxes_map(&t_n);
    let t_edge_names: BTreeMap<(String, String, Option<Port>), String> = t_n
        .edges
        .iter()
        .map(|(e, d)| ((d.src.clone(), d.tgt.clone(), d.port), e.clone()))
        .collect();
    let mut found = Vec::new();
    for (ops, inst) in instances {
        if inst.bang_vertices().iter().any(|b| inst.vertices[b].fixed.is_none()) {
            continue;
        }
        let mut dom = inst;
        strip_scratch_tags(&mut dom);
        let mut bares: Vec<Wire> =
            wires(&dom).wires.into_iter().filter(|w| w.kind == WireKind::Bare).collect();
        bares.sort_by(|a, b| a.vertices[0].cmp(&b.vertices[0]));
        let bare_verts: BTreeSet<&String> =
            bares.iter().flat_map(|w| w.vertices.iter()).collect();
        let order: Vec<String> =
            dom.vertices.keys().filter(|v| !bare_verts.contains(v)).cloned().collect();
        let ctx = OracleCtx {
            dom: &dom,
            d_boxes: boxes_map(&dom),
            target: &t_n,
            t_bare: &t_bare,
            t_boxes: &t_boxes,
            t_edge_names: &t_edge_names,
            bares,
            ops: &ops,
        };
        ctx.assign(&order, 0, &mut BTreeMap::new(), &mut BTreeSet::new(), &mut found)?;
    }
    Ok(sort_dedup(found, None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::banggraph::instantiate;
    use crate::signature::{Arity, MorphismType, PortSpec, Signature};
    use std::sync::Arc;

    fn sig() -> Arc<Signature> {
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

    fn wire(g: &mut Graph, name: &str) {
        g.vertices.insert(name.into(), VData::wire("A"));
    }

    fn edge(g: &mut Graph, name: &str, src: &str, tgt: &str, port: Option<Port>) {
        g.edges.insert(name.into(), EData { src: src.into(), tgt: tgt.into(), port });
    }

    fn bang(g: &mut Graph, name: &str, members: &[&str]) {
        g.vertices.insert(name.into(), VData::bang());
        edge(g, &format!("p_{name}_{name}"), name, name, None);
        for m in members {
            edge(g, &format!("p_{name}_{m}"), name, m, None);
        }
    }

    fn p(dir: Dir, index: usize) -> Option<Port> {
        Some(Port { dir, index })
    }

    /// `in -> [h] -> out`, vertices prefixed so copies can share a graph.
    fn h_gadget(g: &mut Graph, pre: &str) {
        g.vertices.insert(format!("{pre}n"), VData::node("h"));
        wire(g, &format!("{pre}i"));
        wire(g, &format!("{pre}o"));
        edge(g, &format!("{pre}ei"), &format!("{pre}i"), &format!("{pre}n"), p(Dir::In, 1));
        edge(g, &format!("{pre}eo"), &format!("{pre}n"), &format!("{pre}o"), p(Dir::Out, 1));
    }

    /// A spider with one boxed input leg and one plain output leg.
    fn boxed_leg() -> Graph {
        let mut g = Graph::empty(sig());
        g.vertices.insert("s".into(), VData::node("Z"));
        wire(&mut g, "leg");
        edge(&mut g, "e", "leg", "s", p(Dir::In, 1));
        wire(&mut g, "out");
        edge(&mut g, "eo", "s", "out", p(Dir::Out, 1));
        bang(&mut g, "b", &["leg"]);
        g
    }

    /// A spider with `k` plain input legs and one output leg.
    fn spider(k: usize) -> Graph {
        let mut g = Graph::empty(sig());
        g.vertices.insert("z".into(), VData::node("Z"));
        for j in 1..=k {
            wire(&mut g, &format!("w{j}"));
            edge(&mut g, &format!("e{j}"), &format!("w{j}"), "z", p(Dir::In, 1));
        }
        wire(&mut g, "out");
        edge(&mut g, "eo", "z", "out", p(Dir::Out, 1));
        g
    }

    fn keys(ms: &[Matching]) -> Vec<String> {
        ms.iter().map(Matching::key).collect()
    }

    /// The certificates agree with a replay of their instantiations.
    fn check_replay(pattern: &Graph, ms: &[Matching]) {
        let p_n = normalize(pattern, NormalizeMode::MatcherPattern);
        for m in ms {
            let mut inst = instantiate(&p_n, &m.instantiation).expect("replayable");
            strip_scratch_tags(&mut inst);
            assert_eq!(inst, m.morphism.dom, "instantiation must replay to the match domain");
            let flags = check_morphism(&m.morphism).expect("checkable");
            assert!(
                flags.valid
                    && flags.mono
                    && flags.local_iso
                    && flags.reflects_bbox_containment,
                "certificate must re-validate"
            );
        }
    }

    #[test]
    fn bound_counts_target_material_per_pattern_box() {
        let mut pat = Graph::empty(sig());
        bang(&mut pat, "b1", &[]);
        bang(&mut pat, "b2", &[]);
        let mut tgt = Graph::empty(sig());
        h_gadget(&mut tgt, "a_");
        h_gadget(&mut tgt, "b_");
        wire(&mut tgt, "c");
        edge(&mut tgt, "cc", "c", "c", None);
        // 2 nodes + 1 circle and two boxes: 3 + 2 * 2^3
        assert_eq!(length_bound(&pat, &tgt), 19);
    }

    #[test]
    fn concrete_pattern_has_exactly_its_own_instance() {
        let mut pat = Graph::empty(sig());
        h_gadget(&mut pat, "");
        let mut tgt = Graph::empty(sig());
        h_gadget(&mut tgt, "t_");
        let out = enumerate_instances(&pat, &tgt, &MatchConfig::default()).unwrap();
        assert_eq!(out.len(), 1);
        assert!(out[0].0.is_empty());
        assert_eq!(out[0].1, pat);
    }

    #[test]
    fn instances_stop_at_the_target_size() {
        let mut pat = Graph::empty(sig());
        h_gadget(&mut pat, "");
        bang(&mut pat, "b", &["i", "n", "o"]);
        let mut tgt = Graph::empty(sig());
        h_gadget(&mut tgt, "a_");
        h_gadget(&mut tgt, "b_");
        let out = enumerate_instances(&pat, &tgt, &MatchConfig::default()).unwrap();
        // nothing, kill, one copy (boxed or not), two copies (boxed or not):
        // a third surface copy would overshoot the two target nodes
        assert_eq!(out.len(), 6);
        let lens: Vec<usize> = out.iter().map(|(ops, _)| ops.len()).collect();
        assert_eq!(lens, vec![0, 1, 1, 2, 2, 3]);
        for (ops, inst) in &out {
            assert!(validate_bang_graph(inst).is_empty());
            assert_eq!(&instantiate(&pat, ops).unwrap(), inst, "instances replay");
            let (n, _, _) = surface_counts(inst).unwrap();
            assert!(n <= 2);
        }
    }

    #[test]
    fn wildness_is_about_unanchored_content() {
        // an empty box multiplies nothing at all
        let mut g = Graph::empty(sig());
        bang(&mut g, "b", &[]);
        assert_eq!(detect_wild(&g).unwrap(), vec!["b"]);

        // a boxed bare wire multiplies material no count can see
        let mut g = Graph::empty(sig());
        wire(&mut g, "u");
        wire(&mut g, "v");
        edge(&mut g, "e", "u", "v", None);
        bang(&mut g, "b", &["u", "v"]);
        assert_eq!(detect_wild(&g).unwrap(), vec!["b"]);

        // a boxed spider leg is anchored: each copy must claim an edge at
        // the spider's image, so expansion is bounded by the target
        assert_eq!(detect_wild(&boxed_leg()).unwrap(), Vec::<String>::new());

        // circles count as material
        let mut g = Graph::empty(sig());
        wire(&mut g, "c");
        edge(&mut g, "cc", "c", "c", None);
        bang(&mut g, "b", &["c"]);
        assert_eq!(detect_wild(&g).unwrap(), Vec::<String>::new());

        // node content counts as material
        let mut g = Graph::empty(sig());
        h_gadget(&mut g, "");
        bang(&mut g, "b", &["i", "n", "o"]);
        assert_eq!(detect_wild(&g).unwrap(), Vec::<String>::new());

        // fixed boxes are never wild, and fixed content anchors its box
        let mut g = Graph::empty(sig());
        wire(&mut g, "u");
        wire(&mut g, "v");
        edge(&mut g, "e", "u", "v", None);
        bang(&mut g, "b", &["u", "v"]);
        g.vertices.get_mut("b").unwrap().fixed = Some("x".into());
        assert_eq!(detect_wild(&g).unwrap(), Vec::<String>::new());

        // the verdict is taken after killing every other unfixed box,
        // the box's own children included: once the nested spider is
        // gone, only the bare wire is left, and the outer box is wild
        let mut g = Graph::empty(sig());
        g.vertices.insert("z".into(), VData::node("Z"));
        wire(&mut g, "w");
        edge(&mut g, "e", "w", "z", p(Dir::In, 1));
        wire(&mut g, "out");
        edge(&mut g, "eo", "z", "out", p(Dir::Out, 1));
        wire(&mut g, "u");
        wire(&mut g, "v");
        edge(&mut g, "uv", "u", "v", None);
        bang(&mut g, "c", &["z", "w", "out"]);
        bang(&mut g, "b", &["c", "z", "w", "out", "u", "v"]);
        let diags = validate_bang_graph(&g);
        assert!(diags.is_empty(), "{diags:?}");
        assert_eq!(detect_wild(&g).unwrap(), vec!["b"]);
    }

    #[test]
    fn wild_patterns_are_rejected_or_killed() {
        let mut pat = Graph::empty(sig());
        h_gadget(&mut pat, "");
        wire(&mut pat, "u");
        wire(&mut pat, "v");
        edge(&mut pat, "e", "u", "v", None);
        bang(&mut pat, "b", &["u", "v"]);
        let mut tgt = Graph::empty(sig());
        h_gadget(&mut tgt, "t_");
        let err = find_matches(&pat, &tgt, &MatchConfig::default()).unwrap_err();
        assert!(matches!(err, Error::WildBangBox(b) if b == "b"));

        let cfg = MatchConfig { kill_wild: true, ..Default::default() };
        let ms = find_matches(&pat, &tgt, &cfg).unwrap();
        assert_eq!(ms.len(), 1);
        assert_eq!(ms[0].instantiation, vec![BBoxOp::Kill { bbox: "b".into() }]);
        check_replay(&pat, &ms);
    }

    #[test]
    fn a_node_matches_its_own_shape_once() {
        let mut pat = Graph::empty(sig());
        h_gadget(&mut pat, "");
        let mut tgt = Graph::empty(sig());
        h_gadget(&mut tgt, "t_");
        let ms = find_matches(&pat, &tgt, &MatchConfig::default()).unwrap();
        assert_eq!(ms.len(), 1);
        assert_eq!(ms[0].morphism.vmap["n"], "t_n");
        assert!(ms[0].instantiation.is_empty());
        check_replay(&pat, &ms);
    }

    #[test]
    fn the_empty_pattern_matches_everything_once() {
        let pat = Graph::empty(sig());
        let mut tgt = Graph::empty(sig());
        h_gadget(&mut tgt, "t_");
        assert_eq!(find_matches(&pat, &tgt, &MatchConfig::default()).unwrap().len(), 1);
        let empty = Graph::empty(sig());
        assert_eq!(find_matches(&pat, &empty, &MatchConfig::default()).unwrap().len(), 1);
    }

    #[test]
    fn a_smaller_spider_does_not_match_a_bigger_one() {
        let pat = spider(1);
        let tgt = spider(2);
        assert!(find_matches(&pat, &tgt, &MatchConfig::default()).unwrap().is_empty());
        let bound = length_bound(&pat, &tgt);
        assert!(oracle_matches(&pat, &tgt, bound).unwrap().is_empty());
    }

    #[test]
    fn chains_match_end_to_end() {
        let chain = |pre: &str| {
            let mut g = Graph::empty(sig());
            g.vertices.insert(format!("{pre}n1"), VData::node("h"));
            g.vertices.insert(format!("{pre}n2"), VData::node("h"));
            wire(&mut g, &format!("{pre}i"));
            wire(&mut g, &format!("{pre}m"));
            wire(&mut g, &format!("{pre}o"));
            edge(&mut g, &format!("{pre}e1"), &format!("{pre}i"), &format!("{pre}n1"), p(Dir::In, 1));
            edge(&mut g, &format!("{pre}e2"), &format!("{pre}n1"), &format!("{pre}m"), p(Dir::Out, 1));
            edge(&mut g, &format!("{pre}e3"), &format!("{pre}m"), &format!("{pre}n2"), p(Dir::In, 1));
            edge(&mut g, &format!("{pre}e4"), &format!("{pre}n2"), &format!("{pre}o"), p(Dir::Out, 1));
            g
        };
        let pat = chain("");
        let tgt = chain("t_");
        let ms = find_matches(&pat, &tgt, &MatchConfig::default()).unwrap();
        assert_eq!(ms.len(), 1);
        assert_eq!(ms[0].morphism.vmap["n1"], "t_n1");
        assert_eq!(ms[0].morphism.vmap["n2"], "t_n2");
        check_replay(&pat, &ms);
    }

    #[test]
    fn bare_wires_subdivide_target_edges() {
        let mut pat = Graph::empty(sig());
        wire(&mut pat, "u");
        wire(&mut pat, "v");
        edge(&mut pat, "e", "u", "v", None);

        // onto another bare wire: one edge, one placement
        let mut tgt = Graph::empty(sig());
        wire(&mut tgt, "a");
        wire(&mut tgt, "b");
        edge(&mut tgt, "t", "a", "b", None);
        let ms = find_matches(&pat, &tgt, &MatchConfig::default()).unwrap();
        assert_eq!(ms.len(), 1);
        check_replay(&pat, &ms);

        // onto a gadget: the normalized legs offer four edges
        let mut tgt = Graph::empty(sig());
        h_gadget(&mut tgt, "t_");
        let ms = find_matches(&pat, &tgt, &MatchConfig::default()).unwrap();
        assert_eq!(ms.len(), 4);
        check_replay(&pat, &ms);
        let bound = length_bound(&pat, &tgt);
        assert_eq!(keys(&oracle_matches(&pat, &tgt, bound).unwrap()), keys(&ms));
    }

    #[test]
    fn a_boxed_leg_grows_to_the_target_degree() {
        let pat = boxed_leg();
        let tgt = spider(2);
        let ms = find_matches(&pat, &tgt, &MatchConfig::default()).unwrap();
        assert_eq!(ms.len(), 1);
        assert_eq!(
            ms[0].instantiation,
            vec![
                BBoxOp::Exp { bbox: "b".into() },
                BBoxOp::Exp { bbox: "b".into() },
                BBoxOp::Kill { bbox: "b".into() },
            ]
        );
        assert_eq!(ms[0].morphism.vmap["s"], "z");
        check_replay(&pat, &ms);

        // degree zero is reached by killing the box outright
        let ms = find_matches(&pat, &spider(0), &MatchConfig::default()).unwrap();
        assert_eq!(ms.len(), 1);
        assert_eq!(ms[0].instantiation, vec![BBoxOp::Kill { bbox: "b".into() }]);

        // the default length cap assumes boxes hold nodes or circles; a
        // box holding only anchored wires can need more operations, and
        // raising the cap is the way to let it grow further
        assert!(find_matches(&pat, &spider(3), &MatchConfig::default()).unwrap().is_empty());
        let cfg = MatchConfig { max_expansions: Some(4), ..Default::default() };
        let ms = find_matches(&pat, &spider(3), &cfg).unwrap();
        assert_eq!(ms.len(), 1);
        assert_eq!(ms[0].instantiation.len(), 4);
        check_replay(&pat, &ms);
    }

    #[test]
    fn circles_match_without_branching() {
        let circle = |g: &mut Graph, name: &str| {
            wire(g, name);
            edge(g, &format!("{name}_loop"), name, name, None);
        };
        let mut pat = Graph::empty(sig());
        circle(&mut pat, "c1");
        circle(&mut pat, "c2");
        let mut tgt = Graph::empty(sig());
        circle(&mut tgt, "t1");
        circle(&mut tgt, "t2");
        h_gadget(&mut tgt, "t_");
        let ms = find_matches(&pat, &tgt, &MatchConfig::default()).unwrap();
        assert_eq!(ms.len(), 1, "circle choices are interchangeable");
        check_replay(&pat, &ms);
        let bound = length_bound(&pat, &tgt);
        assert_eq!(keys(&oracle_matches(&pat, &tgt, bound).unwrap()), keys(&ms));
    }

    #[test]
    fn a_boxed_spider_matches_a_pair_of_spiders_four_ways() {
        let mut pat = Graph::empty(sig());
        pat.vertices.insert("z".into(), VData::node("Z"));
        bang(&mut pat, "b", &["z"]);
        let mut tgt = Graph::empty(sig());
        tgt.vertices.insert("z1".into(), VData::node("Z"));
        tgt.vertices.insert("z2".into(), VData::node("Z"));
        let ms = find_matches(&pat, &tgt, &MatchConfig::default()).unwrap();
        // kill; one copy on either spider; a copy on each
        assert_eq!(ms.len(), 4);
        check_replay(&pat, &ms);
        let bound = length_bound(&pat, &tgt);
        assert_eq!(keys(&oracle_matches(&pat, &tgt, bound).unwrap()), keys(&ms));
    }

    #[test]
    fn fixed_boxes_pair_by_tag() {
        let fix = |g: &mut Graph, b: &str, tag: &str| {
            g.vertices.get_mut(b).unwrap().fixed = Some(tag.into());
        };
        let mut pat = boxed_leg();
        fix(&mut pat, "b", "x");
        let mut tgt = boxed_leg();
        fix(&mut tgt, "b", "y");
        assert!(find_matches_bg(&pat, &tgt, &MatchConfig::default()).unwrap().is_empty());
        let mut tgt = boxed_leg();
        fix(&mut tgt, "b", "x");
        let ms = find_matches_bg(&pat, &tgt, &MatchConfig::default()).unwrap();
        assert_eq!(ms.len(), 1);
        assert_eq!(ms[0].morphism.vmap["b"], "b");
        assert!(ms[0].instantiation.is_empty());
        check_replay(&pat, &ms);
    }

    #[test]
    fn a_free_box_freezes_onto_a_target_box() {
        let pat = boxed_leg();
        let tgt = boxed_leg();
        let err = find_matches(&pat, &tgt, &MatchConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NotConcrete(_)));
        let ms = find_matches_bg(&pat, &tgt, &MatchConfig::default()).unwrap();
        assert_eq!(ms.len(), 1);
        // freezing copies the box, so the unfixed original still needs
        // its own kill; the frozen copy is what lands on the target box
        assert_eq!(
            ms[0].instantiation,
            vec![
                BBoxOp::CFix { bbox: "b".into(), tag: SCRATCH_TAG.into() },
                BBoxOp::Kill { bbox: "b".into() },
            ]
        );
        assert_eq!(ms[0].morphism.vmap["b.1"], "b");
        let leg_image = &ms[0].morphism.vmap["leg.1"];
        let cod = &ms[0].morphism.cod;
        assert!(cod.is_wire(leg_image));
        assert_eq!(boxes_of(&boxes_map(cod), leg_image), BTreeSet::from(["b".to_string()]));
        check_replay(&pat, &ms);
    }

    #[test]
    fn box_matching_agrees_with_plain_matching_on_concrete_targets() {
        let pat = boxed_leg();
        let tgt = spider(2);
        let plain = find_matches(&pat, &tgt, &MatchConfig::default()).unwrap();
        let boxed = find_matches_bg(&pat, &tgt, &MatchConfig::default()).unwrap();
        assert_eq!(keys(&plain), keys(&boxed));
        assert_eq!(
            plain.iter().map(|m| &m.instantiation).collect::<Vec<_>>(),
            boxed.iter().map(|m| &m.instantiation).collect::<Vec<_>>()
        );
    }

    #[test]
    fn parallel_search_matches_the_serial_one() {
        let mut pat = Graph::empty(sig());
        pat.vertices.insert("z".into(), VData::node("Z"));
        bang(&mut pat, "b", &["z"]);
        let mut tgt = Graph::empty(sig());
        for j in 1..=3 {
            tgt.vertices.insert(format!("z{j}"), VData::node("Z"));
        }
        let serial = find_matches(&pat, &tgt, &MatchConfig::default()).unwrap();
        let parallel = find_matches_jobs(&pat, &tgt, &MatchConfig::default(), 4).unwrap();
        assert_eq!(keys(&serial), keys(&parallel));
    }

    #[test]
    fn the_result_cap_truncates_the_canonical_order() {
        let mut pat = Graph::empty(sig());
        pat.vertices.insert("z".into(), VData::node("Z"));
        bang(&mut pat, "b", &["z"]);
        let mut tgt = Graph::empty(sig());
        tgt.vertices.insert("z1".into(), VData::node("Z"));
        tgt.vertices.insert("z2".into(), VData::node("Z"));
        let all = find_matches(&pat, &tgt, &MatchConfig::default()).unwrap();
        let cfg = MatchConfig { max_results: Some(2), ..Default::default() };
        let capped = find_matches(&pat, &tgt, &cfg).unwrap();
        assert_eq!(keys(&capped), keys(&all)[..2].to_vec());
    }

    #[test]
    fn isolated_wire_vertices_are_rejected() {
        let mut pat = Graph::empty(sig());
        wire(&mut pat, "w");
        let tgt = Graph::empty(sig());
        assert!(matches!(
            find_matches(&pat, &tgt, &MatchConfig::default()),
            Err(Error::InvalidGraph(_))
        ));
        let pat = Graph::empty(sig());
        let mut tgt = Graph::empty(sig());
        wire(&mut tgt, "w");
        assert!(matches!(
            find_matches(&pat, &tgt, &MatchConfig::default()),
            Err(Error::InvalidGraph(_))
        ));
    }

    #[test]
    fn the_engine_agrees_with_the_oracle() {
        let mut h_pat = Graph::empty(sig());
        h_gadget(&mut h_pat, "");
        let mut h_tgt = Graph::empty(sig());
        h_gadget(&mut h_tgt, "t_");
        let mut two_h = Graph::empty(sig());
        h_gadget(&mut two_h, "a_");
        h_gadget(&mut two_h, "b_");
        let mut boxed_h = Graph::empty(sig());
        h_gadget(&mut boxed_h, "");
        bang(&mut boxed_h, "b", &["i", "n", "o"]);
        let cases: Vec<(Graph, Graph)> = vec![
            (h_pat.clone(), h_tgt.clone()),
            (h_pat.clone(), two_h.clone()),
            (boxed_h, two_h),
            (spider(1), spider(1)),
            (spider(2), spider(2)),
            (boxed_leg(), spider(2)),
            (boxed_leg(), spider(3)),
        ];
        for (pat, tgt) in cases {
            let bound = length_bound(
                &normalize(&pat, NormalizeMode::MatcherPattern),
                &normalize(&tgt, NormalizeMode::MatcherTarget),
            );
            let cfg = MatchConfig { max_expansions: Some(bound), ..Default::default() };
            let fast = find_matches(&pat, &tgt, &cfg).unwrap();
            let slow = oracle_matches(&pat, &tgt, bound).unwrap();
            assert_eq!(keys(&fast), keys(&slow), "engine and oracle disagree");
            check_replay(&pat, &fast);
        }
    }
}
