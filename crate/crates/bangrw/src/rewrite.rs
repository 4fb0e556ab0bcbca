//! Equations between pattern graphs and double-pushout rewriting.
//!
//! An equation is a pair of pattern graphs with correlated inputs,
//! outputs, and `!`-vertices.  Formally the correlation is a span of
//! monos whose apex identifies the `!`-boundaries of the two sides; here
//! the apex is kept implicit through a *shared-name convention*: a
//! vertex belongs to the interface exactly when it is an input, an
//! output, or a `!`-vertex, and then the same name must denote a vertex
//! of the same kind, type, and box membership on the other side.
//! Coinciding names of interior vertices carry no meaning.
//!
//! The `!`-box operations extend to equations by acting on both sides
//! at once ([`apply_op_to_equation`]).  Fresh names produced on the two
//! sides are re-aligned afterwards so that duplicated interface
//! vertices again share names; the left side is kept exactly as
//! [`apply_op`] produced it, so instantiating an equation and
//! instantiating its left side alone agree literally.
//!
//! Rewriting ([`rewrite_dpo`]) takes a directed equation, a target
//! graph, a matching of the instantiated left side onto the target, and
//! the instantiation itself.  It removes the matched material outside
//! the interface (a pushout complement), glues in the right side (a
//! pushout), and returns the result together with a *derived rule*: the
//! whole step restated as an equation between the target and the
//! result, which is again a valid equation and can itself be
//! specialized further with `!`-box operations.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::banggraph::{
    apply_op, bang_boundary, bang_box, strip_scratch_tags, validate_bang_graph, BBoxOp,
    Instantiation, OriginDir, OriginMap,
};
use crate::error::{Error, Result};
use crate::graph::{
    check_morphism, induced_emap, pushout, pushout_complement, EData, Graph, GraphJson, Morphism,
};
use crate::signature::Signature;
use crate::stringgraph::wires;

/// An equation between two pattern graphs.  The interface is carried by
/// shared names: inputs, outputs, and `!`-vertices of one side are
/// identified with the equally named vertices of the other.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphEquation {
    pub lhs: Graph,
    pub rhs: Graph,
}

/// On-disk form of an equation: two graphs over one signature.  Shared
/// vertex names define the interface; nothing else is recorded, and
/// validation recomputes every condition rather than trusting the file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquationJson {
    pub lhs: GraphJson,
    pub rhs: GraphJson,
}

impl GraphEquation {
    pub fn from_json(sig: Arc<Signature>, j: &EquationJson) -> Result<GraphEquation> {
        Ok(GraphEquation {
            lhs: Graph::from_json(sig.clone(), &j.lhs)?,
            rhs: Graph::from_json(sig, &j.rhs)?,
        })
    }

    pub fn to_json(&self) -> EquationJson {
        EquationJson { lhs: self.lhs.to_json(), rhs: self.rhs.to_json() }
    }

    /// The interface vertex names — inputs, outputs, and `!`-vertices —
    /// as computed from the left side.  On a valid equation the right
    /// side yields the same set.
    pub fn interface(&self) -> BTreeSet<String> {
        let dec = wires(&self.lhs);
        let mut set = dec.boundary();
        set.extend(self.lhs.bang_vertices());
        set
    }

    /// The same equation read right-to-left.
    pub fn swapped(&self) -> GraphEquation {
        GraphEquation { lhs: self.rhs.clone(), rhs: self.lhs.clone() }
    }
}

/// A directed equation: occurrences of one side are to be replaced by
/// the other.  `reversed` selects which way round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RewriteRule {
    pub equation: GraphEquation,
    pub reversed: bool,
}

impl RewriteRule {
    pub fn forward(equation: GraphEquation) -> RewriteRule {
        RewriteRule { equation, reversed: false }
    }

    pub fn backward(equation: GraphEquation) -> RewriteRule {
        RewriteRule { equation, reversed: true }
    }

    /// The equation with its sides arranged so that `lhs` is the side
    /// being matched and removed.
    pub fn oriented(&self) -> GraphEquation {
        if self.reversed {
            self.equation.swapped()
        } else {
            self.equation.clone()
        }
    }
}

/// Everything produced by one double-pushout rewrite step.
#[derive(Debug, Clone)]
pub struct RewriteOutcome {
    pub result: Graph,
    /// The step restated as an equation `target = result`, with the
    /// target's boundary and `!`-vertices as interface.
    pub derived_rule: GraphEquation,
    pub match_used: Morphism,
    pub instantiation_used: Instantiation,
}

// ---------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------

fn set_mismatches(
    diags: &mut Vec<String>,
    what: &str,
    l: &BTreeSet<String>,
    r: &BTreeSet<String>,
) {
    for v in l.difference(r) {
        diags.push(format!("{what} {v} of the left side has no counterpart on the right"));
    }
    for v in r.difference(l) {
        diags.push(format!("{what} {v} of the right side has no counterpart on the left"));
    }
}

/// Check an equation.  Returns an empty list exactly when both sides
/// are valid pattern graphs without isolated wire-vertices and the
/// shared names realize a correct interface: the input, output, and
/// `!`-vertex name sets of the two sides coincide, equally named
/// interface vertices carry the same data, and each shared `!`-box
/// contains the same interface vertices on both sides.
pub fn validate_equation(eq: &GraphEquation) -> Vec<String> {
    let mut diags = Vec::new();
    for (side, g) in [("lhs", &eq.lhs), ("rhs", &eq.rhs)] {
        for d in validate_bang_graph(g) {
            diags.push(format!("{side}: {d}"));
        }
    }
    if !diags.is_empty() {
        return diags; // the interface checks assume well-formed sides
    }
    if eq.lhs.sig != eq.rhs.sig {
        return vec!["the sides are typed over different signatures".to_string()];
    }

    let ldec = wires(&eq.lhs);
    let rdec = wires(&eq.rhs);
    for (side, dec) in [("lhs", &ldec), ("rhs", &rdec)] {
        for v in &dec.isolated {
            diags.push(format!("{side}: isolated wire-vertex {v}"));
        }
    }

    let lb: BTreeSet<String> = eq.lhs.bang_vertices().into_iter().collect();
    let rb: BTreeSet<String> = eq.rhs.bang_vertices().into_iter().collect();
    set_mismatches(&mut diags, "input", &ldec.inputs, &rdec.inputs);
    set_mismatches(&mut diags, "output", &ldec.outputs, &rdec.outputs);
    set_mismatches(&mut diags, "`!`-vertex", &lb, &rb);

    // data agreement on names both sides treat as interface
    let li: BTreeSet<String> = ldec.boundary().union(&lb).cloned().collect();
    let ri: BTreeSet<String> = rdec.boundary().union(&rb).cloned().collect();
    let shared: BTreeSet<&String> = li.intersection(&ri).collect();
    for v in &shared {
        if eq.lhs.vertices[*v] != eq.rhs.vertices[*v] {
            diags.push(format!("interface vertex {v} carries different data on the two sides"));
        }
    }

    // box membership agreement, restricted to the interface
    for b in lb.intersection(&rb) {
        let bl = bang_box(&eq.lhs, b).expect("valid side");
        let br = bang_box(&eq.rhs, b).expect("valid side");
        for v in &shared {
            if bl.contains(*v) != br.contains(*v) {
                diags.push(format!(
                    "membership of {v} in the box of {b} differs between the sides"
                ));
            }
        }
    }
    diags
}

// ---------------------------------------------------------------------
// Operations on equations
// ---------------------------------------------------------------------

fn require_shared_bang(eq: &GraphEquation, b: &str) -> Result<()> {
    if !(eq.lhs.is_bang(b) && eq.rhs.is_bang(b)) {
        return Err(Error::NotShared(format!("{b} is not a `!`-vertex of both sides")));
    }
    Ok(())
}

fn fresh_over(taken: &BTreeSet<String>, base: &str) -> String {
    if !taken.contains(base) {
        return base.to_string();
    }
    for k in 1.. {
        let cand = format!("{base}.{k}");
        if !taken.contains(&cand) {
            return cand;
        }
    }
    unreachable!()
}

/// Rebuild a graph with vertices renamed by `map` (identity where
/// absent).  Edge names are kept.
fn rename_vertices(g: &Graph, map: &BTreeMap<String, String>) -> Graph {
    let rn = |n: &String| map.get(n).unwrap_or(n).clone();
    let mut out = Graph::empty(g.sig.clone());
    for (v, d) in &g.vertices {
        out.vertices.insert(rn(v), d.clone());
    }
    for (e, d) in &g.edges {
        out.edges.insert(e.clone(), EData { src: rn(&d.src), tgt: rn(&d.tgt), port: d.port });
    }
    out
}

/// Rename the fresh vertices of the right-side result so that interface
/// copies match the names chosen on the left.  Each side freshens
/// against its own namespace, so the two results of a duplicating
/// operation may suffix the same interface vertex differently; the
/// origin maps say which result vertex came from which source vertex
/// and copy, which is enough to re-align them.  Right-side vertices
/// whose names would collide with the re-aligned ones are displaced to
/// names fresh for both sides.
fn align_side(
    eq: &GraphEquation,
    lhs2: &Graph,
    om_l: &OriginMap,
    rhs2: Graph,
    om_r: &OriginMap,
) -> Result<Graph> {
    let interface = eq.interface();
    let mut by_key: BTreeMap<(&str, u8), &str> = BTreeMap::new();
    for v in lhs2.vertices.keys() {
        let origin = om_l.map.vmap[v].as_str();
        let side = om_l.sides.get(v).copied().unwrap_or(0);
        by_key.insert((origin, side), v.as_str());
    }

    let mut rename: BTreeMap<String, String> = BTreeMap::new();
    for v in rhs2.vertices.keys() {
        let origin = &om_r.map.vmap[v];
        if !interface.contains(origin) {
            continue;
        }
        let side = om_r.sides.get(v).copied().unwrap_or(0);
        let counterpart = by_key.get(&(origin.as_str(), side)).ok_or_else(|| {
            Error::NotShared(format!(
                "interface vertex {origin} has no matching copy in the left result"
            ))
        })?;
        if *counterpart != v.as_str() {
            rename.insert(v.clone(), counterpart.to_string());
        }
    }
    if rename.is_empty() {
        return Ok(rhs2);
    }

    let mut taken: BTreeSet<String> = rhs2.vertices.keys().chain(rhs2.edges.keys()).cloned().collect();
    taken.extend(lhs2.vertices.keys().cloned());
    taken.extend(lhs2.edges.keys().cloned());
    taken.extend(eq.lhs.vertices.keys().cloned());
    taken.extend(eq.lhs.edges.keys().cloned());
    taken.extend(eq.rhs.vertices.keys().cloned());
    taken.extend(eq.rhs.edges.keys().cloned());

    let targets: BTreeSet<&String> = rename.values().collect();
    let mut displaced: BTreeMap<String, String> = BTreeMap::new();
    for v in rhs2.vertices.keys() {
        if targets.contains(v) && !rename.contains_key(v) {
            let f = fresh_over(&taken, v);
            taken.insert(f.clone());
            displaced.insert(v.clone(), f);
        }
    }
    rename.extend(displaced);
    Ok(rename_vertices(&rhs2, &rename))
}

/// Apply a `!`-box operation to both sides of an equation.  The target
/// must be a shared `!`-vertex (for Box, a name free on both sides; for
/// Merge, both vertices must be shared).  The left result is exactly
/// what [`apply_op`] returns, so instantiating an equation agrees with
/// instantiating its left side alone; the right result is renamed so
/// that interface copies share names with the left again.
pub fn apply_op_to_equation(eq: &GraphEquation, op: &BBoxOp) -> Result<GraphEquation> {
    match op {
        BBoxOp::Box { .. } => {}
        BBoxOp::Merge { bbox, second } => {
            require_shared_bang(eq, bbox)?;
            require_shared_bang(eq, second)?;
        }
        _ => require_shared_bang(eq, op.bbox())?,
    }
    let (lhs, om_l) = apply_op(&eq.lhs, op)?;
    let (rhs, om_r) = apply_op(&eq.rhs, op)?;
    let rhs = match om_r.dir {
        // Fix, Box, and Merge never introduce fresh names that need
        // re-alignment: they keep every surviving vertex's name.
        OriginDir::Forward => rhs,
        OriginDir::Backward => align_side(eq, &lhs, &om_l, rhs, &om_r)?,
    };
    let out = GraphEquation { lhs, rhs };
    debug_assert_eq!(validate_equation(&out), Vec::<String>::new());
    Ok(out)
}

/// Fold a sequence of operations over an equation.
pub fn instantiate_equation(eq: &GraphEquation, ops: &[BBoxOp]) -> Result<GraphEquation> {
    let mut out = eq.clone();
    for op in ops {
        out = apply_op_to_equation(&out, op)?;
    }
    Ok(out)
}

// ---------------------------------------------------------------------
// Double-pushout rewriting
// ---------------------------------------------------------------------

/// Rewrite `target` at the matching `m` of the rule's instantiated
/// left side.
///
/// The rule is first oriented and specialized by `inst`; `m` must then
/// be a morphism from the instantiated left side onto `target` that is
/// injective, a local isomorphism around node-vertices, reflects
/// `!`-box membership, and preserves fixing tags.  The matched material
/// outside the interface is removed by a pushout complement — an edge
/// left dangling surfaces as [`Error::NoComplement`] — and the right
/// side is glued onto the remainder by a pushout that keeps the
/// target's names, freshening only the genuinely new material.
///
/// Tags equal to [`banggraph::SCRATCH_TAG`](crate::banggraph::SCRATCH_TAG)
/// are stripped from the instantiated sides before anything else: a CFix
/// with that tag freezes a copy only for the duration of a match search,
/// so the match certificates produced by the matching module line up
/// with the instantiated rule here.
///
/// Besides the rewritten graph, the outcome carries the step as a
/// derived equation `target = result` over the target's boundary and
/// `!`-vertices, which is itself a valid equation.
pub fn rewrite_dpo(
    rule: &RewriteRule,
    target: &Graph,
    m: &Morphism,
    inst: &[BBoxOp],
) -> Result<RewriteOutcome> {
    if let Some(d) = validate_equation(&rule.equation).first() {
        return Err(Error::InvalidGraph(format!("rule: {d}")));
    }
    if let Some(d) = validate_bang_graph(target).first() {
        return Err(Error::InvalidGraph(format!("target: {d}")));
    }
    if let Some(v) = wires(target).isolated.first() {
        return Err(Error::InvalidGraph(format!("target: isolated wire-vertex {v}")));
    }

    let mut eq = instantiate_equation(&rule.oriented(), inst)?;
    strip_scratch_tags(&mut eq.lhs);
    strip_scratch_tags(&mut eq.rhs);

    if m.dom != eq.lhs {
        return Err(Error::NotAMatching(
            "the domain is not the instantiated left side of the rule".to_string(),
        ));
    }
    if m.cod != *target {
        return Err(Error::NotAMatching("the codomain is not the target".to_string()));
    }
    let flags = check_morphism(m)?;
    if !flags.valid {
        return Err(Error::NotAMatching("not a graph morphism".to_string()));
    }
    if !flags.mono {
        return Err(Error::NotAMatching("not injective".to_string()));
    }
    if !flags.local_iso {
        return Err(Error::NotAMatching(
            "not a local isomorphism around node-vertices".to_string(),
        ));
    }
    if !flags.reflects_bbox_containment {
        return Err(Error::NotAMatching(
            "does not reflect `!`-box membership".to_string(),
        ));
    }
    for (v, img) in &m.vmap {
        if eq.lhs.vertices[v].fixed != target.vertices[img].fixed {
            return Err(Error::NotAMatching(format!(
                "the fixing tag of {v} changes under the map"
            )));
        }
    }

    // The interface, included into both sides.
    let (_, _, bound) = bang_boundary(&eq.lhs);
    let i1 = eq.lhs.inclusion_from(&bound)?;
    let vmap: BTreeMap<String, String> =
        bound.vertices.keys().map(|v| (v.clone(), v.clone())).collect();
    let emap = induced_emap(&bound, &eq.rhs, &vmap)
        .expect("a valid equation shares its interface edges");
    let i2 = Morphism { dom: bound, cod: eq.rhs.clone(), vmap, emap };

    // Remove the matched material outside the interface, then glue the
    // right side onto what is left.  The pushout keeps the names of its
    // right leg, i.e. of the target's surviving part.
    let (d_graph, d_incl, _) = pushout_complement(&i1, m)?;
    let (mut result, _, _) = pushout(&i2, &d_incl)?;

    // Fresh right-side material may reuse the name of a vertex the
    // complement removed; such a coincidence would read as an interface
    // identification in the derived equation, so rename it away.
    let d_names: BTreeSet<&String> = d_graph.vertices.keys().collect();
    let mut taken: BTreeSet<String> =
        result.vertices.keys().chain(result.edges.keys()).cloned().collect();
    taken.extend(target.vertices.keys().cloned());
    taken.extend(target.edges.keys().cloned());
    let mut rename = BTreeMap::new();
    for v in result.vertices.keys() {
        if !d_names.contains(v)
            && (target.vertices.contains_key(v) || target.edges.contains_key(v))
        {
            let f = fresh_over(&taken, v);
            taken.insert(f.clone());
            rename.insert(v.clone(), f);
        }
    }
    if !rename.is_empty() {
        result = rename_vertices(&result, &rename);
    }

    debug_assert_eq!(validate_bang_graph(&result), Vec::<String>::new());
    let derived_rule = GraphEquation { lhs: target.clone(), rhs: result.clone() };
    debug_assert_eq!(validate_equation(&derived_rule), Vec::<String>::new());
    Ok(RewriteOutcome {
        result,
        derived_rule,
        match_used: m.clone(),
        instantiation_used: inst.to_vec(),
    })
}
