mod common;

use std::collections::{HashSet, VecDeque};

use common::*;
use derplace::{Feeder, NodeClass};
use proptest::prelude::*;

#[test]
fn two_node_file() {
    let f = Feeder::parse(TWO_NODE).unwrap();
    assert_eq!(f.load_nodes().count(), 1);
    assert_eq!(f.lines.len(), 1);
}

#[test]
fn duplicate_and_loop_errors() {
    let dup = topology(&[("s0", "n1")]).replace(r#"{"id":"s0","phases":"A"}"#, r#"{"id":"n1","phases":"A"}"#);
    let err = Feeder::parse(&dup).unwrap_err().to_string();
    assert!(err.contains("duplicate id"), "{err}");
    let looped = topology(&[("s0", "n1"), ("n1", "n2"), ("n2", "s0")]);
    let err = Feeder::parse(&looped).unwrap_err().to_string();
    assert!(err.contains("not radial"), "{err}");
}

#[test]
fn chain_paths() {
    let f = Feeder::parse(CHAIN3).unwrap();
    let p: Vec<_> = f
        .path_to_substation("n2")
        .unwrap()
        .iter()
        .map(|l| (l.from.as_str(), l.to.as_str()))
        .collect();
    assert_eq!(p, vec![("n1", "n2"), ("s0", "n1")]);
    assert!(f.path_to_substation("s0").unwrap().is_empty());
    assert!(f.path_to_substation("zz").is_err());
    assert_eq!(f.nodal_distance("s0").unwrap(), 0);
    assert_eq!(f.nodal_distance("n2").unwrap(), 2);
}

#[test]
fn five_node_tree_leaf_path() {
    // s0 - a - b - c, a - d
    let f = Feeder::parse(&topology(&[("s0", "a"), ("a", "b"), ("b", "c"), ("a", "d")])).unwrap();
    let p: Vec<_> = f.path_to_substation("c").unwrap().iter().map(|l| l.to.clone()).collect();
    assert_eq!(p, vec!["c", "b", "a"]);
}

#[test]
fn classification_examples() {
    let f = Feeder::parse(CHAIN3).unwrap();
    assert_eq!(f.classify_node("n2").unwrap(), NodeClass::Edge);
    let star = Feeder::parse(&topology(&[("s0", "c"), ("c", "a"), ("c", "b"), ("c", "d")])).unwrap();
    assert_eq!(star.classify_node("c").unwrap(), NodeClass::Fork);
    let chain4 = Feeder::parse(&topology(&[("s0", "n1"), ("n1", "n2"), ("n2", "n3")])).unwrap();
    assert_eq!(chain4.classify_node("n2").unwrap(), NodeClass::NearEdge);
    assert_eq!(chain4.classify_node("n1").unwrap(), NodeClass::Middle);
    assert!(chain4.classify_node("zz").is_err());
}

#[test]
fn main_branch_examples() {
    let chain = Feeder::parse(&topology(&[("s0", "n1"), ("n1", "n2"), ("n2", "n3")])).unwrap();
    assert_eq!(chain.main_branch(), vec!["s0", "n1", "n2", "n3"]);
    let comb = Feeder::parse(&topology(&[
        ("s0", "p1"),
        ("p1", "p2"),
        ("p2", "p3"),
        ("p1", "t1"),
        ("p2", "t2"),
        ("p3", "t3"),
    ]))
    .unwrap();
    assert_eq!(comb.main_branch(), vec!["s0", "p1", "p2", "p3", "t3"]);
    let binary = Feeder::parse(&topology(&[
        ("s0", "a"),
        ("s0", "b"),
        ("a", "a2"),
        ("a", "a1"),
        ("b", "b1"),
        ("b", "b2"),
    ]))
    .unwrap();
    assert_eq!(binary.main_branch(), vec!["s0", "a", "a1"]);
}

#[test]
fn branch_examples() {
    let chain = Feeder::parse(&topology(&[("s0", "n1"), ("n1", "n2"), ("n2", "n3")])).unwrap();
    let b = chain.branches();
    assert_eq!(b.len(), 1);
    assert_eq!(b[0].len(), 4);

    // Fork f with three arms of two nodes: the substation arm and two leaves.
    let y = Feeder::parse(&topology(&[
        ("s0", "u"),
        ("u", "f"),
        ("f", "a1"),
        ("a1", "a2"),
        ("f", "b1"),
        ("b1", "b2"),
    ]))
    .unwrap();
    let b = y.branches();
    assert_eq!(b.len(), 3);
    assert!(b.iter().all(|br| br.contains("f")));
    assert!(b.iter().all(|br| br.len() == 3));

    let comb = Feeder::parse(&topology(&[
        ("s0", "p1"),
        ("p1", "p2"),
        ("p2", "p3"),
        ("p1", "t1"),
        ("p2", "t2"),
        ("p3", "t3"),
    ]))
    .unwrap();
    let mut got: Vec<(String, String, usize)> = comb
        .branches()
        .into_iter()
        .map(|b| (b.start.clone(), b.end.clone(), b.len()))
        .collect();
    got.sort();
    let mut want = vec![
        ("s0".to_string(), "p1".to_string(), 2),
        ("p1".into(), "p2".into(), 2),
        ("p1".into(), "t1".into(), 2),
        ("p2".into(), "p3".into(), 2),
        ("p2".into(), "t2".into(), 2),
        ("p3".into(), "t3".into(), 2),
    ];
    want.sort();
    // p3 has a single child, so the last spine segment runs through to t3.
    want.retain(|w| w.1 != "p3" && w.1 != "t3");
    want.push(("p2".into(), "t3".into(), 3));
    want.sort();
    assert_eq!(got, want);
}

fn bfs_depth(t: &RandomTree) -> Vec<usize> {
    let n = t.n() + 1;
    let mut adj = vec![Vec::new(); n];
    for k in 1..n {
        adj[k].push(t.parent[k - 1]);
        adj[t.parent[k - 1]].push(k);
    }
    let mut depth = vec![usize::MAX; n];
    depth[0] = 0;
    let mut q = VecDeque::from([0]);
    while let Some(u) = q.pop_front() {
        for &v in &adj[u] {
            if depth[v] == usize::MAX {
                depth[v] = depth[u] + 1;
                q.push_back(v);
            }
        }
    }
    depth
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shared_path_is_lca_path(t in tree(2, 10)) {
        let f = Feeder::parse(&t.to_json()).unwrap();
        for i in 0..=t.n() {
            for j in 0..=t.n() {
                let pi: HashSet<usize> = f.path_line_indices(&id(i)).unwrap().into_iter().collect();
                let pj: HashSet<usize> = f.path_line_indices(&id(j)).unwrap().into_iter().collect();
                let shared: HashSet<usize> = pi.intersection(&pj).copied().collect();
                // LCA by brute force: deepest common node on both ancestor chains.
                let anc = |mut k: usize| {
                    let mut v = vec![k];
                    while k != 0 { k = t.parent[k - 1]; v.push(k); }
                    v
                };
                let ai = anc(i);
                let lca = anc(j).into_iter().find(|a| ai.contains(a)).unwrap();
                let pl: HashSet<usize> = f.path_line_indices(&id(lca)).unwrap().into_iter().collect();
                prop_assert_eq!(shared, pl);
            }
        }
    }

    #[test]
    fn distances_match_bfs(t in tree(2, 20)) {
        let f = Feeder::parse(&t.to_json()).unwrap();
        let d = bfs_depth(&t);
        for (k, dk) in d.iter().enumerate() {
            prop_assert_eq!(f.nodal_distance(&id(k)).unwrap(), *dk);
        }
    }

    #[test]
    fn branches_cover_nodes(t in tree(2, 16)) {
        let f = Feeder::parse(&t.to_json()).unwrap();
        let b = f.branches();
        let total: usize = b.iter().map(|br| br.len()).sum();
        let mut seen = HashSet::new();
        for br in &b {
            for nd in &br.nodes { seen.insert(nd.clone()); }
        }
        prop_assert_eq!(seen.len(), f.nodes.len());
        // Every branch but the first repeats exactly one node: its start.
        prop_assert_eq!(total - (b.len() - 1), f.nodes.len());
    }

    #[test]
    fn round_trip(t in tree(2, 12)) {
        let f = Feeder::parse(&t.to_json()).unwrap();
        let g = Feeder::parse(&f.to_json()).unwrap();
        prop_assert_eq!(f, g);
    }

    #[test]
    fn main_branch_is_root_to_edge(t in tree(2, 14)) {
        let f = Feeder::parse(&t.to_json()).unwrap();
        let mb = f.main_branch();
        prop_assert_eq!(mb[0].as_str(), "s0");
        let last = mb.last().unwrap();
        prop_assert!(f.children_of(last).unwrap().is_empty());
        for w in mb.windows(2) {
            prop_assert_eq!(f.parent_of(&w[1]).unwrap(), Some(w[0].as_str()));
        }
    }
}
