//! Squared-voltage and angle sensitivity matrices of a radial feeder.
//!
//! Entry `(i, j)` of R (X) is twice the resistance (reactance) summed over the
//! lines shared by the substation paths of `i` and `j`. Every node is expanded
//! into three phase slots; node `i` (file order, substation excluded) and phase
//! `φ` map to row `3i + φ`. Slots for phases a node does not have stay zero.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::feeder::{Block3, Feeder, Phase};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityMode {
    /// Each phase is an independent single-phase network; mutual terms dropped.
    SinglePhaseEquivalent,
    /// Coupled three-phase form with the balanced phase-shift operator.
    #[default]
    Multiphase,
}

impl FromStr for SensitivityMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sp" | "single_phase_equivalent" => Ok(SensitivityMode::SinglePhaseEquivalent),
            "mp" | "multiphase" => Ok(SensitivityMode::Multiphase),
            other => Err(format!("unknown sensitivity mode {other:?} (expected sp or mp)")),
        }
    }
}

impl fmt::Display for SensitivityMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SensitivityMode::SinglePhaseEquivalent => "sp",
            SensitivityMode::Multiphase => "mp",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityMatrices<T: Scalar> {
    pub r: DMatrix<T>,
    pub x: DMatrix<T>,
    pub mode: SensitivityMode,
    /// Node ids in state order (file order without the substation).
    pub nodes: Vec<String>,
    /// Sorted full indices whose (node, phase) exists.
    pub active: Vec<usize>,
    position: Vec<Option<usize>>,
}

impl<T: Scalar> SensitivityMatrices<T> {
    /// Full 3n index of `(node, phase)`, whether or not the phase exists there.
    pub fn index_of(&self, node: &str, phase: Phase) -> Option<usize> {
        self.nodes
            .iter()
            .position(|n| n == node)
            .map(|i| 3 * i + phase.index())
    }

    /// Position of a full index inside the active list.
    pub fn active_position(&self, full: usize) -> Option<usize> {
        self.position.get(full).copied().flatten()
    }

    /// Position of `(node, phase)` among the active indices.
    pub fn active_index_of(&self, node: &str, phase: Phase) -> Option<usize> {
        self.index_of(node, phase)
            .and_then(|i| self.active_position(i))
    }

    pub fn n_active(&self) -> usize {
        self.active.len()
    }

    /// (node id, phase) of a full index.
    pub fn label(&self, full: usize) -> (&str, Phase) {
        (
            self.nodes[full / 3].as_str(),
            Phase::from_index(full % 3).expect("phase slot"),
        )
    }

    pub fn r_active(&self) -> DMatrix<T> {
        self.r.select_rows(&self.active).select_columns(&self.active)
    }

    pub fn x_active(&self) -> DMatrix<T> {
        self.x.select_rows(&self.active).select_columns(&self.active)
    }
}

/// Real and imaginary parts of γ = ααᴴ with α = [1, e^{-j2π/3}, e^{j2π/3}].
fn gamma() -> ([[f64; 3]; 3], [[f64; 3]; 3]) {
    let theta = [0.0, -2.0 * PI / 3.0, 2.0 * PI / 3.0];
    let mut re = [[0.0; 3]; 3];
    let mut im = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            if i == j {
                re[i][j] = 1.0;
            } else {
                let d = theta[i] - theta[j];
                re[i][j] = d.cos();
                im[i][j] = d.sin();
            }
        }
    }
    (re, im)
}

/// Per-line contribution blocks (already including the factor 2).
fn line_blocks(r: &Block3, x: &Block3, mode: SensitivityMode) -> (Block3, Block3) {
    let mut gr = [[0.0; 3]; 3];
    let mut gx = [[0.0; 3]; 3];
    match mode {
        SensitivityMode::SinglePhaseEquivalent => {
            for k in 0..3 {
                gr[k][k] = 2.0 * r[k][k];
                gx[k][k] = 2.0 * x[k][k];
            }
        }
        SensitivityMode::Multiphase => {
            let (re, im) = gamma();
            for i in 0..3 {
                for j in 0..3 {
                    gr[i][j] = 2.0 * (re[i][j] * r[i][j] + im[i][j] * x[i][j]);
                    gx[i][j] = 2.0 * (re[i][j] * x[i][j] - im[i][j] * r[i][j]);
                }
            }
        }
    }
    (gr, gx)
}

/// Builds R and X for `feeder`.
///
/// Uses cumulative path sums: the block for `(i, j)` is the running sum down
/// to the lowest common ancestor of `i` and `j`.
pub fn build_rx<T: Scalar>(feeder: &Feeder, mode: SensitivityMode) -> SensitivityMatrices<T> {
    let root = feeder.substation_index();
    let order: Vec<usize> = (0..feeder.nodes.len()).filter(|&i| i != root).collect();
    let n = order.len();
    let state_pos: Vec<Option<usize>> = {
        let mut v = vec![None; feeder.nodes.len()];
        for (k, &i) in order.iter().enumerate() {
            v[i] = Some(k);
        }
        v
    };

    // Cumulative blocks from the substation to every node, in preorder.
    let mut cum_r = vec![[[0.0; 3]; 3]; feeder.nodes.len()];
    let mut cum_x = vec![[[0.0; 3]; 3]; feeder.nodes.len()];
    let mut ancestors: Vec<Vec<usize>> = vec![Vec::new(); feeder.nodes.len()];
    for u in feeder.preorder() {
        for &c in feeder.children_of_index(u) {
            let li = *feeder
                .path_line_indices(&feeder.nodes[c].id)
                .expect("known node")
                .first()
                .expect("non-root node has a parent line");
            let line = &feeder.lines[li];
            let (gr, gx) = line_blocks(&line.r, &line.x, mode);
            for a in 0..3 {
                for b in 0..3 {
                    cum_r[c][a][b] = cum_r[u][a][b] + gr[a][b];
                    cum_x[c][a][b] = cum_x[u][a][b] + gx[a][b];
                }
            }
            let mut anc = ancestors[u].clone();
            anc.push(u);
            ancestors[c] = anc;
        }
    }

    let lca = |i: usize, j: usize| -> usize {
        let (mut ci, mut cj) = (i, j);
        // Walk the deeper node up first, then both together.
        let (mut di, mut dj) = (feeder.depth_of_index(ci), feeder.depth_of_index(cj));
        while di > dj {
            ci = ancestors[ci][di - 1];
            di -= 1;
        }
        while dj > di {
            cj = ancestors[cj][dj - 1];
            dj -= 1;
        }
        while ci != cj {
            ci = ancestors[ci][di - 1];
            cj = ancestors[cj][di - 1];
            di -= 1;
        }
        ci
    };

    let mut active = Vec::new();
    for (k, &i) in order.iter().enumerate() {
        for p in feeder.nodes[i].phases.iter() {
            active.push(3 * k + p.index());
        }
    }
    let mut is_active = vec![false; 3 * n];
    for &a in &active {
        is_active[a] = true;
    }

    let mut r = DMatrix::<T>::zeros(3 * n, 3 * n);
    let mut x = DMatrix::<T>::zeros(3 * n, 3 * n);
    for &i in &order {
        let bi = state_pos[i].unwrap();
        for &j in &order {
            let bj = state_pos[j].unwrap();
            let l = lca(i, j);
            for a in 0..3 {
                for b in 0..3 {
                    let (row, col) = (3 * bi + a, 3 * bj + b);
                    if is_active[row] && is_active[col] {
                        r[(row, col)] = T::lit(cum_r[l][a][b]);
                        x[(row, col)] = T::lit(cum_x[l][a][b]);
                    }
                }
            }
        }
    }

    let mut position = vec![None; 3 * n];
    for (k, &a) in active.iter().enumerate() {
        position[a] = Some(k);
    }
    SensitivityMatrices {
        r,
        x,
        mode,
        nodes: order.iter().map(|&i| feeder.nodes[i].id.clone()).collect(),
        active,
        position,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PdReport {
    pub r_pd: bool,
    pub x_pd: bool,
    /// Smallest eigenvalue of the symmetric part of the active R; `None` when empty.
    pub r_min_eig: Option<f64>,
    pub x_min_eig: Option<f64>,
}

impl PdReport {
    pub fn all_pd(&self) -> bool {
        self.r_pd && self.x_pd
    }
}

pub const PD_TOL: f64 = 1e-10;

/// Smallest eigenvalue of (M + Mᵀ)/2, i.e. the infimum of xᵀMx over unit x.
pub fn min_sym_eig<T: Scalar>(m: &DMatrix<T>) -> Option<T> {
    if m.nrows() == 0 {
        return None;
    }
    let half = T::lit(0.5);
    let sym = (m + m.transpose()) * half;
    sym.symmetric_eigenvalues().iter().copied().reduce(|a, b| a.min(b))
}

/// Positive-definiteness of the active R and X blocks.
///
/// Multiphase blocks need not be symmetric, so the test is applied to the
/// symmetric part.
pub fn check_pd<T: Scalar>(s: &SensitivityMatrices<T>) -> PdReport {
    let r_min = min_sym_eig(&s.r_active()).map(T::to_f64_lossy);
    let x_min = min_sym_eig(&s.x_active()).map(T::to_f64_lossy);
    PdReport {
        r_pd: r_min.is_none_or(|v| v > PD_TOL),
        x_pd: x_min.is_none_or(|v| v > PD_TOL),
        r_min_eig: r_min,
        x_min_eig: x_min,
    }
}
