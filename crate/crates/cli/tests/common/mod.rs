#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const TWO_NODE: &str = r#"{"s_base_kva":1000,"v_base_kv":4.16,"substation":"s0",
  "nodes":[{"id":"s0","phases":"A"},{"id":"n1","phases":"A"}],
  "lines":[{"from":"s0","to":"n1","phases":"A","r":0.05,"x":0.1}]}"#;

pub const CHAIN3: &str = r#"{"s_base_kva":1000,"v_base_kv":4.16,"substation":"s0",
  "nodes":[{"id":"s0","phases":"A"},{"id":"n1","phases":"A"},{"id":"n2","phases":"A"}],
  "lines":[{"from":"s0","to":"n1","phases":"A","r":0.05,"x":0.1},
           {"from":"n1","to":"n2","phases":"A","r":0.03,"x":0.06}]}"#;

/// s0-x1-x2-x3 and s0-y1: x-nodes cannot track y1 (zero shared path).
pub const TWO_ARMS: &str = r#"{"s_base_kva":1000,"v_base_kv":4.16,"substation":"s0",
  "nodes":[{"id":"s0","phases":"A"},{"id":"x1","phases":"A"},{"id":"x2","phases":"A"},
           {"id":"x3","phases":"A"},{"id":"y1","phases":"A"}],
  "lines":[{"from":"s0","to":"x1","phases":"A","r":0.05,"x":0.1},
           {"from":"x1","to":"x2","phases":"A","r":0.05,"x":0.1},
           {"from":"x2","to":"x3","phases":"A","r":0.05,"x":0.1},
           {"from":"s0","to":"y1","phases":"A","r":0.05,"x":0.1}]}"#;

pub fn synthetic() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data/synthetic25.json")
}

pub fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

pub fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

pub fn derplace<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    Command::new(env!("CARGO_BIN_EXE_derplace"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn stdout_json(o: &Output) -> serde_json::Value {
    assert!(
        o.status.success(),
        "exit {:?}: {}",
        o.status.code(),
        String::from_utf8_lossy(&o.stderr)
    );
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}
