//! Metric multigraphs with delta-type vertex couplings.
//!
//! A [`MetricGraph`] is the single source of geometric truth for every other
//! module: vertices carry a coupling constant and an optional semi-infinite
//! lead, compact edges carry a length. Loops and parallel edges are allowed
//! since contraction produces both.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VertexRecord", into = "VertexRecord")]
pub struct Vertex {
    pub id: String,
    pub coupling: Complex64,
    /// Number of leads attached. Admissible graphs have at most one; the
    /// count only exceeds one transiently, after contracting an edge between
    /// two external vertices.
    pub leads: u32,
}

impl Vertex {
    pub fn new(id: impl Into<String>, coupling: f64, lead: bool) -> Self {
        Self {
            id: id.into(),
            coupling: Complex64::new(coupling, 0.0),
            leads: u32::from(lead),
        }
    }

    pub fn has_lead(&self) -> bool {
        self.leads > 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub id: String,
    pub u: String,
    pub v: String,
    pub length: f64,
}

impl Edge {
    pub fn new(id: impl Into<String>, u: impl Into<String>, v: impl Into<String>, length: f64) -> Self {
        Self {
            id: id.into(),
            u: u.into(),
            v: v.into(),
            length,
        }
    }

    pub fn is_loop(&self) -> bool {
        self.u == self.v
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum CouplingRecord {
    Pair([f64; 2]),
    Real(f64),
}

#[derive(Serialize, Deserialize)]
struct VertexRecord {
    id: String,
    coupling: CouplingRecord,
    #[serde(default)]
    lead: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    leads: Option<u32>,
}

impl From<VertexRecord> for Vertex {
    fn from(r: VertexRecord) -> Self {
        let coupling = match r.coupling {
            CouplingRecord::Pair([re, im]) => Complex64::new(re, im),
            CouplingRecord::Real(re) => Complex64::new(re, 0.0),
        };
        let leads = r.leads.unwrap_or(u32::from(r.lead));
        Self {
            id: r.id,
            coupling,
            leads,
        }
    }
}

impl From<Vertex> for VertexRecord {
    fn from(v: Vertex) -> Self {
        Self {
            id: v.id,
            coupling: CouplingRecord::Pair([v.coupling.re, v.coupling.im]),
            lead: v.leads > 0,
            leads: (v.leads > 1).then_some(v.leads),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    Empty,
    DuplicateVertex(String),
    DuplicateEdge(String),
    UnknownEndpoint { edge: String, vertex: String },
    NonpositiveLength { edge: String, length: f64 },
    MultipleLeads { vertex: String, count: u32 },
    NonfiniteCoupling(String),
    IsolatedVertex(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Empty => write!(f, "graph has no vertices"),
            Violation::DuplicateVertex(id) => write!(f, "duplicate vertex id `{id}`"),
            Violation::DuplicateEdge(id) => write!(f, "duplicate edge id `{id}`"),
            Violation::UnknownEndpoint { edge, vertex } => {
                write!(f, "edge `{edge}` references unknown vertex `{vertex}`")
            }
            Violation::NonpositiveLength { edge, length } => {
                write!(f, "nonpositive length {length} on edge `{edge}`")
            }
            Violation::MultipleLeads { vertex, count } => {
                write!(f, "multiple leads ({count}) at vertex `{vertex}`")
            }
            Violation::NonfiniteCoupling(id) => write!(f, "nonfinite coupling at vertex `{id}`"),
            Violation::IsolatedVertex(id) => {
                write!(f, "vertex `{id}` has neither edges nor a lead")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "ok");
        }
        let parts: Vec<String> = self.violations.iter().map(ToString::to_string).collect();
        write!(f, "{}", parts.join("; "))
    }
}

/// Compact degree of every vertex: non-loop endpoints plus two per loop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DegreeTable {
    pub degrees: Vec<usize>,
}

impl DegreeTable {
    pub fn get(&self, index: usize) -> usize {
        self.degrees[index]
    }

    pub fn total(&self) -> usize {
        self.degrees.iter().sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricGraph {
    pub vertices: Vec<Vertex>,
    pub edges: Vec<Edge>,
}

impl MetricGraph {
    pub fn new(vertices: Vec<Vertex>, edges: Vec<Edge>) -> Self {
        Self { vertices, edges }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn vertex_index(&self, id: &str) -> Option<usize> {
        self.vertices.iter().position(|v| v.id == id)
    }

    pub fn require_vertex(&self, id: &str) -> Result<usize> {
        self.vertex_index(id)
            .ok_or_else(|| Error::UnknownVertex(id.to_string()))
    }

    pub fn edge(&self, id: &str) -> Result<&Edge> {
        self.edges
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| Error::UnknownEdge(id.to_string()))
    }

    /// Endpoint indices of an edge.
    pub fn endpoints(&self, edge: &Edge) -> Result<(usize, usize)> {
        Ok((self.require_vertex(&edge.u)?, self.require_vertex(&edge.v)?))
    }

    pub fn couplings(&self) -> Vec<Complex64> {
        self.vertices.iter().map(|v| v.coupling).collect()
    }

    pub fn with_couplings(&self, couplings: &[Complex64]) -> Result<Self> {
        if couplings.len() != self.vertices.len() {
            return Err(Error::Dimension(format!(
                "{} couplings for {} vertices",
                couplings.len(),
                self.vertices.len()
            )));
        }
        let mut g = self.clone();
        for (v, a) in g.vertices.iter_mut().zip(couplings) {
            v.coupling = *a;
        }
        Ok(g)
    }

    /// Indices of vertices carrying a lead, in vertex order.
    pub fn external_indices(&self) -> Vec<usize> {
        self.vertices
            .iter()
            .enumerate()
            .filter(|(_, v)| v.has_lead())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn internal_indices(&self) -> Vec<usize> {
        self.vertices
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.has_lead())
            .map(|(i, _)| i)
            .collect()
    }

    /// The same graph with every lead removed.
    pub fn compact_part(&self) -> Self {
        let mut g = self.clone();
        for v in &mut g.vertices {
            v.leads = 0;
        }
        g
    }

    pub fn lead_count(&self) -> u32 {
        self.vertices.iter().map(|v| v.leads).sum()
    }

    pub fn total_length(&self) -> f64 {
        self.edges.iter().map(|e| e.length).sum()
    }

    pub fn min_length(&self) -> Option<f64> {
        self.edges.iter().map(|e| e.length).reduce(f64::min)
    }

    pub fn degrees(&self) -> DegreeTable {
        let mut degrees = vec![0; self.vertices.len()];
        for e in &self.edges {
            if let (Some(u), Some(v)) = (self.vertex_index(&e.u), self.vertex_index(&e.v)) {
                degrees[u] += 1;
                degrees[v] += 1;
            }
        }
        DegreeTable { degrees }
    }

    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        if self.vertices.is_empty() {
            violations.push(Violation::Empty);
        }
        let mut seen = HashMap::new();
        for v in &self.vertices {
            if seen.insert(v.id.as_str(), ()).is_some() {
                violations.push(Violation::DuplicateVertex(v.id.clone()));
            }
            if v.leads > 1 {
                violations.push(Violation::MultipleLeads {
                    vertex: v.id.clone(),
                    count: v.leads,
                });
            }
            if !(v.coupling.re.is_finite() && v.coupling.im.is_finite()) {
                violations.push(Violation::NonfiniteCoupling(v.id.clone()));
            }
        }
        let mut seen_edges = HashMap::new();
        for e in &self.edges {
            if seen_edges.insert(e.id.as_str(), ()).is_some() {
                violations.push(Violation::DuplicateEdge(e.id.clone()));
            }
            for end in [&e.u, &e.v] {
                if self.vertex_index(end).is_none() {
                    violations.push(Violation::UnknownEndpoint {
                        edge: e.id.clone(),
                        vertex: end.clone(),
                    });
                }
            }
            if !(e.length.is_finite() && e.length > 0.0) {
                violations.push(Violation::NonpositiveLength {
                    edge: e.id.clone(),
                    length: e.length,
                });
            }
        }
        let degrees = self.degrees();
        for (i, v) in self.vertices.iter().enumerate() {
            if degrees.get(i) == 0 && v.leads == 0 {
                violations.push(Violation::IsolatedVertex(v.id.clone()));
            }
        }
        ValidationReport { violations }
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let report = self.validate();
        if report.is_ok() {
            Ok(())
        } else {
            Err(Error::InvalidGraph(report))
        }
    }

    /// Connectivity of the compact part (leads ignored).
    pub fn is_compact_connected(&self) -> bool {
        let n = self.vertices.len();
        if n == 0 {
            return false;
        }
        let adjacency = self.adjacency();
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(x) = stack.pop() {
            for &(y, _) in &adjacency[x] {
                if !seen[y] {
                    seen[y] = true;
                    stack.push(y);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Non-loop adjacency as (neighbour, edge index), in edge order.
    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adjacency = vec![Vec::new(); self.vertices.len()];
        for (k, e) in self.edges.iter().enumerate() {
            if e.is_loop() {
                continue;
            }
            if let (Some(u), Some(v)) = (self.vertex_index(&e.u), self.vertex_index(&e.v)) {
                adjacency[u].push((v, k));
                adjacency[v].push((u, k));
            }
        }
        adjacency
    }

    /// SHA-256 over vertex ids, lead flags and edges; couplings excluded.
    pub fn geometry_hash(&self) -> String {
        #[derive(Serialize)]
        struct Geometry<'a> {
            vertices: Vec<(&'a str, u32)>,
            edges: Vec<(&'a str, &'a str, &'a str, u64)>,
        }
        let geometry = Geometry {
            vertices: self.vertices.iter().map(|v| (v.id.as_str(), v.leads)).collect(),
            edges: self
                .edges
                .iter()
                .map(|e| (e.id.as_str(), e.u.as_str(), e.v.as_str(), e.length.to_bits()))
                .collect(),
        };
        let bytes = serde_json::to_vec(&geometry).expect("geometry serialises");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Glue the endpoints of a non-loop edge into one vertex.
///
/// The merged vertex takes the position of the lower-indexed endpoint and the
/// id `(V+W)`; its coupling is the sum of the two couplings and it carries
/// both endpoints' leads. Remaining edges between the two endpoints become
/// loops of the same length.
pub fn contract_edge(g: &MetricGraph, edge_id: &str) -> Result<MetricGraph> {
    contract_edge_tracked(g, edge_id).map(|(g, _)| g)
}

/// [`contract_edge`], also returning the merged vertex's index.
pub fn contract_edge_tracked(g: &MetricGraph, edge_id: &str) -> Result<(MetricGraph, usize)> {
    let edge = g.edge(edge_id)?;
    if edge.is_loop() {
        return Err(Error::ContractLoop(edge_id.to_string()));
    }
    let (iu, iv) = g.endpoints(edge)?;
    let (keep, drop) = (iu.min(iv), iu.max(iv));
    let (u_id, v_id) = (edge.u.clone(), edge.v.clone());

    let mut merged_id = format!("({u_id}+{v_id})");
    while g
        .vertices
        .iter()
        .any(|v| v.id == merged_id && v.id != u_id && v.id != v_id)
    {
        merged_id.push('\'');
    }

    let mut vertices = Vec::with_capacity(g.vertices.len() - 1);
    for (i, v) in g.vertices.iter().enumerate() {
        if i == drop {
            continue;
        }
        if i == keep {
            vertices.push(Vertex {
                id: merged_id.clone(),
                coupling: g.vertices[iu].coupling + g.vertices[iv].coupling,
                leads: g.vertices[iu].leads + g.vertices[iv].leads,
            });
        } else {
            vertices.push(v.clone());
        }
    }
    let rename = |id: &str| {
        if id == u_id || id == v_id {
            merged_id.clone()
        } else {
            id.to_string()
        }
    };
    let edges = g
        .edges
        .iter()
        .filter(|e| e.id != edge_id)
        .map(|e| Edge {
            id: e.id.clone(),
            u: rename(&e.u),
            v: rename(&e.v),
            length: e.length,
        })
        .collect();
    Ok((MetricGraph { vertices, edges }, keep))
}

/// Tree path from the root to one vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreePath {
    pub target: String,
    /// Vertex ids from the root to `target`, inclusive.
    pub vertices: Vec<String>,
    /// Edge ids in order from the root.
    pub edges: Vec<String>,
    pub lengths: Vec<f64>,
}

impl TreePath {
    /// N⁽ᵐ⁾: vertices on the path, root included.
    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSet {
    pub root: String,
    /// Ordered so that edge counts are non-decreasing; the root's own empty
    /// path comes first.
    pub paths: Vec<TreePath>,
}

impl PathSet {
    pub fn path_to(&self, vertex: &str) -> Option<&TreePath> {
        self.paths.iter().find(|p| p.target == vertex)
    }
}

/// Breadth-first spanning tree of the compact part rooted at `root`.
pub fn spanning_tree_paths(g: &MetricGraph, root: &str) -> Result<PathSet> {
    let root_index = g.require_vertex(root)?;
    let adjacency = g.adjacency();
    let n = g.vertices.len();
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; n];
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::from([root_index]);
    visited[root_index] = true;
    while let Some(x) = queue.pop_front() {
        order.push(x);
        for &(y, k) in &adjacency[x] {
            if !visited[y] {
                visited[y] = true;
                parent[y] = Some((x, k));
                queue.push_back(y);
            }
        }
    }
    if order.len() != n {
        return Err(Error::Disconnected);
    }
    let mut paths: Vec<TreePath> = order
        .iter()
        .map(|&target| {
            let mut vertices = vec![target];
            let mut edges = Vec::new();
            let mut cursor = target;
            while let Some((p, k)) = parent[cursor] {
                edges.push(k);
                vertices.push(p);
                cursor = p;
            }
            vertices.reverse();
            edges.reverse();
            TreePath {
                target: g.vertices[target].id.clone(),
                vertices: vertices.iter().map(|&i| g.vertices[i].id.clone()).collect(),
                edges: edges.iter().map(|&k| g.edges[k].id.clone()).collect(),
                lengths: edges.iter().map(|&k| g.edges[k].length).collect(),
            }
        })
        .collect();
    paths.sort_by_key(|p| p.edges.len());
    Ok(PathSet {
        root: root.to_string(),
        paths,
    })
}

/// A pair of compact edges whose length ratio is numerically rational.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommensuratePair {
    pub longer: String,
    pub shorter: String,
    pub ratio: f64,
    pub p: u64,
    pub q: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationalityReport {
    pub qmax: u64,
    pub tolerance: f64,
    pub flagged: Vec<CommensuratePair>,
}

impl RationalityReport {
    pub fn is_clear(&self) -> bool {
        self.flagged.is_empty()
    }
}

pub const DEFAULT_QMAX: u64 = 1000;
pub const RATIONAL_TOL: f64 = 1e-9;

/// Best rational approximation p/q of `ratio` with q <= `qmax` that lies
/// within `tol`, scanning continued-fraction convergents.
///
/// For tol well below 1/(2 qmax²) any such p/q is necessarily a convergent,
/// so the scan is exhaustive.
pub fn near_rational(ratio: f64, qmax: u64, tol: f64) -> Option<(u64, u64)> {
    if !ratio.is_finite() || ratio <= 0.0 {
        return None;
    }
    let (mut h_prev, mut h) = (0u64, 1u64);
    let (mut k_prev, mut k) = (1u64, 0u64);
    let mut x = ratio;
    for _ in 0..64 {
        let a = x.floor();
        if a > 1e15 {
            break;
        }
        let a = a as u64;
        let h_next = a.checked_mul(h)?.checked_add(h_prev)?;
        let k_next = a.checked_mul(k)?.checked_add(k_prev)?;
        if k_next > qmax {
            break;
        }
        (h_prev, h, k_prev, k) = (h, h_next, k, k_next);
        if (ratio - h as f64 / k as f64).abs() <= tol {
            return Some((h, k));
        }
        let frac = x - a as f64;
        if frac <= f64::EPSILON {
            break;
        }
        x = 1.0 / frac;
    }
    None
}

/// Advisory commensurability check over all pairs of compact lengths.
pub fn rational_independence_check(g: &MetricGraph, qmax: u64) -> RationalityReport {
    let mut flagged = Vec::new();
    for (i, a) in g.edges.iter().enumerate() {
        for b in &g.edges[i + 1..] {
            let (longer, shorter) = if a.length >= b.length { (a, b) } else { (b, a) };
            let ratio = longer.length / shorter.length;
            if let Some((p, q)) = near_rational(ratio, qmax, RATIONAL_TOL) {
                flagged.push(CommensuratePair {
                    longer: longer.id.clone(),
                    shorter: shorter.id.clone(),
                    ratio,
                    p,
                    q,
                });
            }
        }
    }
    RationalityReport {
        qmax,
        tolerance: RATIONAL_TOL,
        flagged,
    }
}

/// Vertex-id → index map, handy for callers that address by id.
pub fn index_map(g: &MetricGraph) -> BTreeMap<String, usize> {
    g.vertices
        .iter()
        .enumerate()
        .map(|(i, v)| (v.id.clone(), i))
        .collect()
}
