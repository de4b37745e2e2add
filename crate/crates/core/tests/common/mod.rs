//! Random radial feeders and small fixtures shared by the integration tests.
#![allow(dead_code)]

use proptest::prelude::*;
use serde_json::json;

/// Single-phase (phase A) tree: node `i + 1` hangs off `parent[i]`, where 0 is
/// the substation `s0` and node k > 0 is `n{k}`.
#[derive(Debug, Clone)]
pub struct RandomTree {
    pub parent: Vec<usize>,
    pub r: Vec<f64>,
    pub x: Vec<f64>,
}

pub fn id(k: usize) -> String {
    if k == 0 {
        "s0".into()
    } else {
        format!("n{k}")
    }
}

impl RandomTree {
    /// Number of non-substation nodes.
    pub fn n(&self) -> usize {
        self.parent.len()
    }

    pub fn to_json(&self) -> String {
        let mut nodes = vec![json!({"id": "s0", "phases": "A"})];
        let mut lines = Vec::new();
        for k in 1..=self.n() {
            nodes.push(json!({"id": id(k), "phases": "A"}));
            lines.push(json!({
                "from": id(self.parent[k - 1]),
                "to": id(k),
                "phases": "A",
                "r": self.r[k - 1],
                "x": self.x[k - 1],
            }));
        }
        json!({"s_base_kva": 1000.0, "v_base_kv": 4.16, "substation": "s0",
               "nodes": nodes, "lines": lines})
        .to_string()
    }

    /// Line indices (line of node k is k - 1) from node k up to the substation.
    pub fn path(&self, mut k: usize) -> Vec<usize> {
        let mut out = Vec::new();
        while k != 0 {
            out.push(k - 1);
            k = self.parent[k - 1];
        }
        out
    }
}

/// Trees with `lo..=hi` nodes counting the substation; r, x in [0.01, 0.2].
pub fn tree(lo: usize, hi: usize) -> impl Strategy<Value = RandomTree> {
    (lo - 1..hi).prop_flat_map(|n| {
        let parents: Vec<_> = (0..n).map(|i| 0..=i).collect();
        (
            parents,
            prop::collection::vec(0.01f64..0.2, n),
            prop::collection::vec(0.01f64..0.2, n),
        )
            .prop_map(|(parent, r, x)| RandomTree { parent, r, x })
    })
}

pub const TWO_NODE: &str = r#"{"s_base_kva":1000,"v_base_kv":4.16,"substation":"s0",
    "nodes":[{"id":"s0","phases":"A"},{"id":"n1","phases":"A"}],
    "lines":[{"from":"s0","to":"n1","phases":"A","r":0.05,"x":0.1}]}"#;

pub const CHAIN3: &str = r#"{"s_base_kva":1000,"v_base_kv":4.16,"substation":"s0",
    "nodes":[{"id":"s0","phases":"A"},{"id":"n1","phases":"A"},{"id":"n2","phases":"A"}],
    "lines":[{"from":"s0","to":"n1","phases":"A","r":0.05,"x":0.1},
             {"from":"n1","to":"n2","phases":"A","r":0.03,"x":0.06}]}"#;

/// Feeder from `(parent, child)` pairs with uniform single-phase lines.
pub fn topology(edges: &[(&str, &str)]) -> String {
    let mut ids = vec!["s0".to_string()];
    for (a, b) in edges {
        for v in [a, b] {
            if !ids.iter().any(|i| i == v) {
                ids.push(v.to_string());
            }
        }
    }
    let nodes: Vec<_> = ids.iter().map(|i| json!({"id": i, "phases": "A"})).collect();
    let lines: Vec<_> = edges
        .iter()
        .map(|(a, b)| json!({"from": a, "to": b, "phases": "A", "r": 0.05, "x": 0.1}))
        .collect();
    json!({"s_base_kva": 1000.0, "v_base_kv": 4.16, "substation": "s0",
           "nodes": nodes, "lines": lines})
    .to_string()
}
