//! Radial feeder model: parsing, validation and topology queries.
//!
//! A feeder file is a JSON document:
//!
//! ```json
//! {
//!   "s_base_kva": 1000.0, "v_base_kv": 4.16, "substation": "s0",
//!   "nodes": [{"id": "s0", "phases": "ABC"}, {"id": "n1", "phases": "A", "pos": [1.0, 0.0]}],
//!   "lines": [{"from": "s0", "to": "n1", "phases": "A", "r": 0.05, "x": 0.1}]
//! }
//! ```
//!
//! `r` and `x` are either full 3×3 per-unit blocks (phase order A, B, C) or a
//! single number, which is placed on the diagonal entry of every listed phase.
//! The substation may be omitted from `nodes`, in which case it is added as a
//! three-phase node at the front.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Block3 = [[f64; 3]; 3];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeederError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("duplicate id: {0}")]
    DuplicateId(String),
    #[error("not radial: line {from}-{to} closes a cycle")]
    NotRadial { from: String, to: String },
    #[error("disconnected node: {0} is not reachable from the substation")]
    Disconnected(String),
    #[error("not radial: {lines} lines for {nodes} nodes")]
    LineCount { nodes: usize, lines: usize },
    #[error("phase mismatch: line {from}-{to} carries phases {line_phases} not present at node {node}")]
    PhaseMismatch {
        from: String,
        to: String,
        line_phases: String,
        node: String,
    },
    #[error("unknown node id: {0}")]
    UnknownNode(String),
    #[error("invalid phases {0:?}: expected a non-empty subset of \"ABC\"")]
    InvalidPhases(String),
    #[error("invalid impedance on line {from}-{to}: {reason}")]
    InvalidImpedance {
        from: String,
        to: String,
        reason: String,
    },
    #[error("invalid base values: {0}")]
    InvalidBase(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Phase> {
        Phase::ALL.get(i).copied()
    }

    pub fn letter(self) -> char {
        match self {
            Phase::A => 'A',
            Phase::B => 'B',
            Phase::C => 'C',
        }
    }
}

/// Subset of {A, B, C}, stored as a bit mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct PhaseSet(u8);

impl PhaseSet {
    pub const ABC: PhaseSet = PhaseSet(0b111);
    pub const EMPTY: PhaseSet = PhaseSet(0);

    pub fn single(p: Phase) -> Self {
        PhaseSet(1 << p.index())
    }

    pub fn contains(self, p: Phase) -> bool {
        self.0 & (1 << p.index()) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_subset(self, other: PhaseSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn intersection(self, other: PhaseSet) -> PhaseSet {
        PhaseSet(self.0 & other.0)
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = Phase> {
        Phase::ALL.into_iter().filter(move |p| self.contains(*p))
    }
}

impl FromStr for PhaseSet {
    type Err = FeederError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut mask = 0u8;
        for ch in s.chars() {
            let bit = match ch.to_ascii_uppercase() {
                'A' => 1,
                'B' => 2,
                'C' => 4,
                _ => return Err(FeederError::InvalidPhases(s.to_string())),
            };
            if mask & bit != 0 {
                return Err(FeederError::InvalidPhases(s.to_string()));
            }
            mask |= bit;
        }
        if mask == 0 {
            return Err(FeederError::InvalidPhases(s.to_string()));
        }
        Ok(PhaseSet(mask))
    }
}

impl fmt::Display for PhaseSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in self.iter() {
            write!(f, "{}", p.letter())?;
        }
        Ok(())
    }
}

impl Serialize for PhaseSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PhaseSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    pub phases: PhaseSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub from: String,
    pub to: String,
    pub phases: PhaseSet,
    pub r: Block3,
    pub x: Block3,
}

/// Topological position of a node, used for placement tallies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeClass {
    Substation,
    Edge,
    NearEdge,
    Fork,
    Middle,
}

/// Maximal run of degree-2 nodes between two endpoints (substation, fork or edge).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Branch {
    pub start: String,
    pub end: String,
    pub nodes: Vec<String>,
}

impl Branch {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.nodes.iter().any(|n| n == id)
    }
}

/// Validated radial feeder. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Feeder {
    pub s_base_kva: f64,
    pub v_base_kv: f64,
    pub substation: String,
    pub nodes: Vec<Node>,
    pub lines: Vec<Line>,
    pub positions: BTreeMap<String, (f64, f64)>,
    index: HashMap<String, usize>,
    /// (parent node index, line index) for every node but the substation.
    parent: Vec<Option<(usize, usize)>>,
    depth: Vec<usize>,
    adjacency: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    root: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum ImpedanceSpec {
    Scalar(f64),
    Block(Block3),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NodeRecord {
    id: String,
    phases: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pos: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LineRecord {
    from: String,
    to: String,
    phases: String,
    r: ImpedanceSpec,
    x: ImpedanceSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FeederFile {
    s_base_kva: f64,
    v_base_kv: f64,
    substation: String,
    nodes: Vec<NodeRecord>,
    lines: Vec<LineRecord>,
}

fn expand_block(spec: &ImpedanceSpec, phases: PhaseSet) -> Block3 {
    match spec {
        ImpedanceSpec::Scalar(v) => {
            let mut b = [[0.0; 3]; 3];
            for p in phases.iter() {
                b[p.index()][p.index()] = *v;
            }
            b
        }
        ImpedanceSpec::Block(b) => *b,
    }
}

impl Feeder {
    /// Parses and validates a feeder JSON document.
    pub fn parse(text: &str) -> Result<Feeder, FeederError> {
        let file: FeederFile =
            serde_json::from_str(text).map_err(|e| FeederError::Syntax(e.to_string()))?;
        Self::from_file(file)
    }

    fn from_file(file: FeederFile) -> Result<Feeder, FeederError> {
        if !(file.s_base_kva.is_finite() && file.s_base_kva > 0.0) {
            return Err(FeederError::InvalidBase("s_base_kva must be positive".into()));
        }
        if !(file.v_base_kv.is_finite() && file.v_base_kv > 0.0) {
            return Err(FeederError::InvalidBase("v_base_kv must be positive".into()));
        }
        let mut nodes = Vec::with_capacity(file.nodes.len() + 1);
        let mut positions = BTreeMap::new();
        if !file.nodes.iter().any(|n| n.id == file.substation) {
            nodes.push(Node {
                id: file.substation.clone(),
                phases: PhaseSet::ABC,
            });
        }
        for rec in &file.nodes {
            let phases: PhaseSet = rec.phases.parse()?;
            if let Some([x, y]) = rec.pos {
                positions.insert(rec.id.clone(), (x, y));
            }
            nodes.push(Node {
                id: rec.id.clone(),
                phases,
            });
        }
        let mut lines = Vec::with_capacity(file.lines.len());
        for rec in &file.lines {
            let phases: PhaseSet = rec.phases.parse()?;
            let r = expand_block(&rec.r, phases);
            let x = expand_block(&rec.x, phases);
            lines.push(Line {
                from: rec.from.clone(),
                to: rec.to.clone(),
                phases,
                r,
                x,
            });
        }
        Self::new(
            file.s_base_kva,
            file.v_base_kv,
            file.substation,
            nodes,
            lines,
            positions,
        )
    }

    /// Builds a feeder from parts, checking every structural invariant.
    pub fn new(
        s_base_kva: f64,
        v_base_kv: f64,
        substation: String,
        nodes: Vec<Node>,
        lines: Vec<Line>,
        positions: BTreeMap<String, (f64, f64)>,
    ) -> Result<Feeder, FeederError> {
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if n.phases.is_empty() {
                return Err(FeederError::InvalidPhases(String::new()));
            }
            if index.insert(n.id.clone(), i).is_some() {
                return Err(FeederError::DuplicateId(n.id.clone()));
            }
        }
        let root = *index
            .get(&substation)
            .ok_or_else(|| FeederError::UnknownNode(substation.clone()))?;
        for id in positions.keys() {
            if !index.contains_key(id) {
                return Err(FeederError::UnknownNode(id.clone()));
            }
        }

        // Union-find catches cycles before the count check so that a loop is
        // reported as such rather than as a count mismatch.
        let mut uf: Vec<usize> = (0..nodes.len()).collect();
        fn find(uf: &mut [usize], mut a: usize) -> usize {
            while uf[a] != a {
                uf[a] = uf[uf[a]];
                a = uf[a];
            }
            a
        }
        let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
        let mut incident: Vec<Vec<(usize, usize)>> = vec![Vec::new(); nodes.len()];
        for (li, line) in lines.iter().enumerate() {
            let a = *index
                .get(&line.from)
                .ok_or_else(|| FeederError::UnknownNode(line.from.clone()))?;
            let b = *index
                .get(&line.to)
                .ok_or_else(|| FeederError::UnknownNode(line.to.clone()))?;
            for (end, id) in [(a, &line.from), (b, &line.to)] {
                if !line.phases.is_subset(nodes[end].phases) {
                    return Err(FeederError::PhaseMismatch {
                        from: line.from.clone(),
                        to: line.to.clone(),
                        line_phases: line.phases.to_string(),
                        node: id.clone(),
                    });
                }
            }
            check_impedance(line)?;
            let (ra, rb) = (find(&mut uf, a), find(&mut uf, b));
            if ra == rb {
                return Err(FeederError::NotRadial {
                    from: line.from.clone(),
                    to: line.to.clone(),
                });
            }
            uf[ra] = rb;
            adjacency[a].push(b);
            adjacency[b].push(a);
            incident[a].push((b, li));
            incident[b].push((a, li));
        }

        let mut parent = vec![None; nodes.len()];
        let mut depth = vec![usize::MAX; nodes.len()];
        let mut children = vec![Vec::new(); nodes.len()];
        depth[root] = 0;
        let mut queue = VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            for &(v, li) in &incident[u] {
                if depth[v] == usize::MAX {
                    depth[v] = depth[u] + 1;
                    parent[v] = Some((u, li));
                    children[u].push(v);
                    queue.push_back(v);
                }
            }
        }
        if let Some(i) = depth.iter().position(|d| *d == usize::MAX) {
            return Err(FeederError::Disconnected(nodes[i].id.clone()));
        }
        if lines.len() + 1 != nodes.len() {
            return Err(FeederError::LineCount {
                nodes: nodes.len(),
                lines: lines.len(),
            });
        }

        Ok(Feeder {
            s_base_kva,
            v_base_kv,
            substation,
            nodes,
            lines,
            positions,
            index,
            parent,
            depth,
            adjacency,
            children,
            root,
        })
    }

    /// Serializes to the feeder file format (full 3×3 blocks).
    pub fn to_json(&self) -> String {
        let file = FeederFile {
            s_base_kva: self.s_base_kva,
            v_base_kv: self.v_base_kv,
            substation: self.substation.clone(),
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeRecord {
                    id: n.id.clone(),
                    phases: n.phases.to_string(),
                    pos: self.positions.get(&n.id).map(|&(x, y)| [x, y]),
                })
                .collect(),
            lines: self
                .lines
                .iter()
                .map(|l| LineRecord {
                    from: l.from.clone(),
                    to: l.to.clone(),
                    phases: l.phases.to_string(),
                    r: ImpedanceSpec::Block(l.r),
                    x: ImpedanceSpec::Block(l.x),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("feeder serializes")
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    fn require(&self, id: &str) -> Result<usize, FeederError> {
        self.node_index(id)
            .ok_or_else(|| FeederError::UnknownNode(id.to_string()))
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.node_index(id).map(|i| &self.nodes[i])
    }

    pub fn substation_index(&self) -> usize {
        self.root
    }

    pub fn is_substation(&self, id: &str) -> bool {
        id == self.substation
    }

    /// Nodes other than the substation, in file order.
    pub fn load_nodes(&self) -> impl Iterator<Item = &Node> {
        let root = self.root;
        self.nodes
            .iter()
            .enumerate()
            .filter(move |(i, _)| *i != root)
            .map(|(_, n)| n)
    }

    pub fn degree(&self, id: &str) -> Result<usize, FeederError> {
        Ok(self.adjacency[self.require(id)?].len())
    }

    pub fn neighbors(&self, id: &str) -> Result<Vec<&str>, FeederError> {
        let i = self.require(id)?;
        Ok(self.adjacency[i]
            .iter()
            .map(|&j| self.nodes[j].id.as_str())
            .collect())
    }

    pub fn parent_of(&self, id: &str) -> Result<Option<&str>, FeederError> {
        let i = self.require(id)?;
        Ok(self.parent[i].map(|(p, _)| self.nodes[p].id.as_str()))
    }

    pub fn children_of(&self, id: &str) -> Result<Vec<&str>, FeederError> {
        let i = self.require(id)?;
        Ok(self.children[i]
            .iter()
            .map(|&j| self.nodes[j].id.as_str())
            .collect())
    }

    /// Indices into `lines` on the unique path from `id` up to the substation,
    /// ordered from `id` upward.
    pub fn path_line_indices(&self, id: &str) -> Result<Vec<usize>, FeederError> {
        let mut cur = self.require(id)?;
        let mut out = Vec::with_capacity(self.depth[cur]);
        while let Some((p, li)) = self.parent[cur] {
            out.push(li);
            cur = p;
        }
        Ok(out)
    }

    /// The unique line sequence from `id` to the substation.
    pub fn path_to_substation(&self, id: &str) -> Result<Vec<&Line>, FeederError> {
        Ok(self
            .path_line_indices(id)?
            .into_iter()
            .map(|li| &self.lines[li])
            .collect())
    }

    /// Hop count to the substation.
    pub fn nodal_distance(&self, id: &str) -> Result<usize, FeederError> {
        Ok(self.depth[self.require(id)?])
    }

    fn is_edge_idx(&self, i: usize) -> bool {
        i != self.root && self.adjacency[i].len() == 1
    }

    pub fn classify_node(&self, id: &str) -> Result<NodeClass, FeederError> {
        let i = self.require(id)?;
        let deg = self.adjacency[i].len();
        Ok(if i == self.root {
            NodeClass::Substation
        } else if deg == 1 {
            NodeClass::Edge
        } else if deg >= 3 {
            NodeClass::Fork
        } else if self.adjacency[i].iter().any(|&j| self.is_edge_idx(j)) {
            NodeClass::NearEdge
        } else {
            NodeClass::Middle
        })
    }

    /// Node ids from the substation down to `id`.
    fn root_path_nodes(&self, mut i: usize) -> Vec<usize> {
        let mut out = vec![i];
        while let Some((p, _)) = self.parent[i] {
            out.push(p);
            i = p;
        }
        out.reverse();
        out
    }

    /// Substation-to-edge path with the most laterals branching off it.
    ///
    /// Laterals are off-path nodes adjacent to a path node. Ties go to the
    /// longer path, then to the lexicographically smallest edge-node id.
    pub fn main_branch(&self) -> Vec<String> {
        let mut best: Option<(usize, usize, &str, Vec<usize>)> = None;
        for leaf in 0..self.nodes.len() {
            if !self.is_edge_idx(leaf) {
                continue;
            }
            let path = self.root_path_nodes(leaf);
            let mut on_path = vec![false; self.nodes.len()];
            for &v in &path {
                on_path[v] = true;
            }
            let laterals = path
                .iter()
                .flat_map(|&v| self.adjacency[v].iter())
                .filter(|&&w| !on_path[w])
                .count();
            let id = self.nodes[leaf].id.as_str();
            let better = match &best {
                None => true,
                Some((bl, blen, bid, _)) => {
                    (laterals, path.len()) > (*bl, *blen)
                        || ((laterals, path.len()) == (*bl, *blen) && id < *bid)
                }
            };
            if better {
                best = Some((laterals, path.len(), id, path));
            }
        }
        match best {
            Some((_, _, _, path)) => path.into_iter().map(|i| self.nodes[i].id.clone()).collect(),
            None => vec![self.substation.clone()],
        }
    }

    /// Decomposes the tree into maximal paths whose interior nodes have degree 2.
    ///
    /// Branches are listed in depth-first order from the substation; each
    /// branch starts at the substation or a fork and runs downstream.
    pub fn branches(&self) -> Vec<Branch> {
        let mut out = Vec::new();
        let mut stack = vec![self.root];
        while let Some(start) = stack.pop() {
            for &child in self.children[start].iter().rev() {
                let mut nodes = vec![start, child];
                let mut cur = child;
                while self.children[cur].len() == 1 {
                    cur = self.children[cur][0];
                    nodes.push(cur);
                }
                if self.children[cur].len() > 1 {
                    stack.push(cur);
                }
                out.push(Branch {
                    start: self.nodes[start].id.clone(),
                    end: self.nodes[cur].id.clone(),
                    nodes: nodes.iter().map(|&i| self.nodes[i].id.clone()).collect(),
                });
            }
        }
        out
    }

    /// Depth-first preorder of node indices from the substation, children in file order.
    pub(crate) fn preorder(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![self.root];
        while let Some(u) = stack.pop() {
            out.push(u);
            stack.extend(self.children[u].iter().rev());
        }
        out
    }

    pub(crate) fn depth_of_index(&self, i: usize) -> usize {
        self.depth[i]
    }

    pub(crate) fn children_of_index(&self, i: usize) -> &[usize] {
        &self.children[i]
    }
}

fn check_impedance(line: &Line) -> Result<(), FeederError> {
    let bad = |reason: String| FeederError::InvalidImpedance {
        from: line.from.clone(),
        to: line.to.clone(),
        reason,
    };
    for row in line.r.iter().chain(line.x.iter()) {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite value".into()));
        }
    }
    for p in line.phases.iter() {
        let k = p.index();
        if line.x[k][k] <= 0.0 {
            return Err(bad(format!("reactance on phase {} must be positive", p.letter())));
        }
    }
    for i in 0..3 {
        for j in 0..3 {
            let inside =
                line.phases.contains(Phase::ALL[i]) && line.phases.contains(Phase::ALL[j]);
            if !inside && (line.r[i][j] != 0.0 || line.x[i][j] != 0.0) {
                return Err(bad(format!("entry ({i},{j}) on an absent phase is non-zero")));
            }
            if line.r[i][j] != line.r[j][i] || line.x[i][j] != line.x[j][i] {
                return Err(bad("block is not symmetric".into()));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(n: usize) -> Feeder {
        // s0 - n1 - ... - n{n-1}
        let mut nodes = vec![r#"{"id":"s0","phases":"A"}"#.to_string()];
        let mut lines = Vec::new();
        for i in 1..n {
            nodes.push(format!(r#"{{"id":"n{i}","phases":"A"}}"#));
            let from = if i == 1 { "s0".to_string() } else { format!("n{}", i - 1) };
            lines.push(format!(
                r#"{{"from":"{from}","to":"n{i}","phases":"A","r":0.05,"x":0.1}}"#
            ));
        }
        let text = format!(
            r#"{{"s_base_kva":1000,"v_base_kv":4.16,"substation":"s0","nodes":[{}],"lines":[{}]}}"#,
            nodes.join(","),
            lines.join(",")
        );
        Feeder::parse(&text).unwrap()
    }

    #[test]
    fn minimal_two_node_feeder() {
        let f = chain(2);
        assert_eq!(f.load_nodes().count(), 1);
        assert_eq!(f.lines.len(), 1);
        assert_eq!(f.lines[0].r[0][0], 0.05);
        assert_eq!(f.lines[0].x[0][0], 0.1);
        assert_eq!(f.lines[0].x[1][1], 0.0);
    }

    #[test]
    fn duplicate_id_rejected() {
        let text = r#"{"s_base_kva":1,"v_base_kv":1,"substation":"s0",
            "nodes":[{"id":"s0","phases":"A"},{"id":"n1","phases":"A"},{"id":"n1","phases":"A"}],
            "lines":[{"from":"s0","to":"n1","phases":"A","r":0.1,"x":0.1}]}"#;
        let err = Feeder::parse(text).unwrap_err();
        assert!(err.to_string().contains("duplicate id"), "{err}");
    }

    #[test]
    fn loop_rejected_as_not_radial() {
        let text = r#"{"s_base_kva":1,"v_base_kv":1,"substation":"s0",
            "nodes":[{"id":"s0","phases":"A"},{"id":"n1","phases":"A"},{"id":"n2","phases":"A"}],
            "lines":[{"from":"s0","to":"n1","phases":"A","r":0.1,"x":0.1},
                     {"from":"n1","to":"n2","phases":"A","r":0.1,"x":0.1},
                     {"from":"n2","to":"s0","phases":"A","r":0.1,"x":0.1}]}"#;
        let err = Feeder::parse(text).unwrap_err();
        assert!(err.to_string().contains("not radial"), "{err}");
    }

    #[test]
    fn disconnected_and_phase_errors() {
        let text = r#"{"s_base_kva":1,"v_base_kv":1,"substation":"s0",
            "nodes":[{"id":"s0","phases":"A"},{"id":"n1","phases":"A"},{"id":"n2","phases":"A"}],
            "lines":[{"from":"s0","to":"n1","phases":"A","r":0.1,"x":0.1}]}"#;
        assert!(matches!(Feeder::parse(text), Err(FeederError::Disconnected(id)) if id == "n2"));

        let text = r#"{"s_base_kva":1,"v_base_kv":1,"substation":"s0",
            "nodes":[{"id":"s0","phases":"ABC"},{"id":"n1","phases":"A"}],
            "lines":[{"from":"s0","to":"n1","phases":"AB","r":0.1,"x":0.1}]}"#;
        assert!(matches!(Feeder::parse(text), Err(FeederError::PhaseMismatch { .. })));

        let text = r#"{"s_base_kva":1,"v_base_kv":1,"substation":"s0",
            "nodes":[{"id":"n1","phases":"A"}],
            "lines":[{"from":"s0","to":"n1","phases":"A","r":0.1,"x":0.0}]}"#;
        assert!(matches!(Feeder::parse(text), Err(FeederError::InvalidImpedance { .. })));

        assert!(matches!(Feeder::parse("{"), Err(FeederError::Syntax(_))));
        assert!(matches!(
            "AA".parse::<PhaseSet>(),
            Err(FeederError::InvalidPhases(_))
        ));
    }

    #[test]
    fn asymmetric_or_stray_block_rejected() {
        let text = r#"{"s_base_kva":1,"v_base_kv":1,"substation":"s0",
            "nodes":[{"id":"n1","phases":"AB"}],
            "lines":[{"from":"s0","to":"n1","phases":"AB",
              "r":[[0.1,0.01,0],[0.02,0.1,0],[0,0,0]],"x":[[0.1,0,0],[0,0.1,0],[0,0,0]]}]}"#;
        assert!(matches!(Feeder::parse(text), Err(FeederError::InvalidImpedance { .. })));
        let text = r#"{"s_base_kva":1,"v_base_kv":1,"substation":"s0",
            "nodes":[{"id":"n1","phases":"AB"}],
            "lines":[{"from":"s0","to":"n1","phases":"AB",
              "r":[[0.1,0,0],[0,0.1,0],[0,0,0.3]],"x":[[0.1,0,0],[0,0.1,0],[0,0,0]]}]}"#;
        assert!(matches!(Feeder::parse(text), Err(FeederError::InvalidImpedance { .. })));
    }

    #[test]
    fn implicit_substation_and_round_trip() {
        let text = r#"{"s_base_kva":1,"v_base_kv":1,"substation":"s0",
            "nodes":[{"id":"n1","phases":"B","pos":[1.5,2.0]}],
            "lines":[{"from":"n1","to":"s0","phases":"B","r":0.1,"x":0.2}]}"#;
        let f = Feeder::parse(text).unwrap();
        assert_eq!(f.nodes[0].id, "s0");
        assert_eq!(f.nodes[0].phases, PhaseSet::ABC);
        assert_eq!(f.positions["n1"], (1.5, 2.0));
        assert_eq!(f.lines[0].x[1][1], 0.2);
        let again = Feeder::parse(&f.to_json()).unwrap();
        assert_eq!(again, f);
    }

    #[test]
    fn chain_paths_and_distances() {
        let f = chain(3);
        let path = f.path_to_substation("n2").unwrap();
        assert_eq!(path.len(), 2);
        assert_eq!((path[0].from.as_str(), path[0].to.as_str()), ("n1", "n2"));
        assert_eq!((path[1].from.as_str(), path[1].to.as_str()), ("s0", "n1"));
        assert!(f.path_to_substation("s0").unwrap().is_empty());
        assert_eq!(f.nodal_distance("s0").unwrap(), 0);
        assert_eq!(f.nodal_distance("n2").unwrap(), 2);
        assert!(matches!(f.nodal_distance("zz"), Err(FeederError::UnknownNode(_))));
        assert!(matches!(f.path_to_substation("zz"), Err(FeederError::UnknownNode(_))));
    }

    #[test]
    fn classification() {
        let f = chain(3);
        assert_eq!(f.classify_node("n2").unwrap(), NodeClass::Edge);
        assert_eq!(f.classify_node("s0").unwrap(), NodeClass::Substation);
        let f = chain(4);
        assert_eq!(f.classify_node("n2").unwrap(), NodeClass::NearEdge);
        assert_eq!(f.classify_node("n1").unwrap(), NodeClass::Middle);
        assert!(f.classify_node("q").is_err());

        let star = r#"{"s_base_kva":1,"v_base_kv":1,"substation":"s0",
            "nodes":[{"id":"c","phases":"A"},{"id":"a","phases":"A"},{"id":"b","phases":"A"},{"id":"d","phases":"A"},
                     {"id":"e","phases":"A"}],
            "lines":[{"from":"s0","to":"c","phases":"A","r":0.1,"x":0.1},
                     {"from":"c","to":"a","phases":"A","r":0.1,"x":0.1},
                     {"from":"c","to":"b","phases":"A","r":0.1,"x":0.1},
                     {"from":"c","to":"d","phases":"A","r":0.1,"x":0.1},
                     {"from":"d","to":"e","phases":"A","r":0.1,"x":0.1}]}"#;
        let f = Feeder::parse(star).unwrap();
        // c is a fork and also adjacent to edges: fork wins.
        assert_eq!(f.classify_node("c").unwrap(), NodeClass::Fork);
        assert_eq!(f.classify_node("d").unwrap(), NodeClass::NearEdge);
    }

    #[test]
    fn chain_is_single_branch_and_main_branch() {
        let f = chain(4);
        let b = f.branches();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].len(), 4);
        assert_eq!((b[0].start.as_str(), b[0].end.as_str()), ("s0", "n3"));
        assert_eq!(f.main_branch(), vec!["s0", "n1", "n2", "n3"]);
    }

    #[test]
    fn single_node_feeder() {
        let text = r#"{"s_base_kva":1,"v_base_kv":1,"substation":"s0","nodes":[],"lines":[]}"#;
        let f = Feeder::parse(text).unwrap();
        assert!(f.branches().is_empty());
        assert_eq!(f.main_branch(), vec!["s0"]);
    }
}
