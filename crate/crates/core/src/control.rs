//! Controller configurations, gain structure and closed-loop assembly.
//!
//! States are `[e_v; e_δ]` (squared-magnitude and angle tracking errors) and
//! inputs are `[u_q; u_p]` (per-step changes of reactive and real injection),
//! both restricted to the active phase slots. The integrator law `u = -F x`
//! closes the loop as `x⁺ = (I - B F) x`.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feeder::{Feeder, Phase, PhaseSet};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::sensitivity::SensitivityMatrices;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("unknown node id: {0}")]
    UnknownNode(String),
    #[error("phase {phase} is not present at node {node}")]
    PhaseNotPresent { node: String, phase: char },
    #[error("pair {actuator}->{performance} has no phases")]
    NoPhases { actuator: String, performance: String },
    #[error("the substation {0} cannot host an actuator or performance node")]
    Substation(String),
    #[error("actuator {node} phase {phase} is assigned to more than one target")]
    DuplicateActuatorPhase { node: String, phase: char },
    #[error("non-positive actuation sensitivity for {actuator}->{performance} phase {phase}")]
    NonPositiveSensitivity {
        actuator: String,
        performance: String,
        phase: char,
    },
    #[error("configuration is empty")]
    EmptyConfiguration,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Actuator-performance node pair: the actuator injects p and q to track the
/// performance node's phasor on the listed phases.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Apnp {
    pub actuator: String,
    pub performance: String,
    pub phases: PhaseSet,
}

impl Apnp {
    pub fn is_colocated(&self) -> bool {
        self.actuator == self.performance
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Configuration {
    pub pairs: Vec<Apnp>,
}

impl Configuration {
    pub fn new(pairs: Vec<Apnp>) -> Self {
        Configuration { pairs }
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    /// Actuator nodes, in placement order, deduplicated.
    pub fn actuator_nodes(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.pairs
            .iter()
            .filter(|p| seen.insert(p.actuator.as_str()))
            .map(|p| p.actuator.as_str())
            .collect()
    }

    pub fn hosts(&self, node: &str) -> bool {
        self.pairs.iter().any(|p| p.actuator == node)
    }

    /// Copy with one more pair appended.
    pub fn with(&self, pair: Apnp) -> Configuration {
        let mut pairs = self.pairs.clone();
        pairs.push(pair);
        Configuration { pairs }
    }

    /// Checks node existence, phase availability and that every actuator phase
    /// tracks a single target.
    pub fn validate(&self, feeder: &Feeder) -> Result<(), ControlError> {
        let mut used: HashSet<(&str, Phase)> = HashSet::new();
        for pair in &self.pairs {
            if pair.phases.is_empty() {
                return Err(ControlError::NoPhases {
                    actuator: pair.actuator.clone(),
                    performance: pair.performance.clone(),
                });
            }
            for id in [&pair.actuator, &pair.performance] {
                let node = feeder
                    .node(id)
                    .ok_or_else(|| ControlError::UnknownNode(id.clone()))?;
                if feeder.is_substation(id) {
                    return Err(ControlError::Substation(id.clone()));
                }
                if let Some(p) = pair.phases.iter().find(|p| !node.phases.contains(*p)) {
                    return Err(ControlError::PhaseNotPresent {
                        node: id.clone(),
                        phase: p.letter(),
                    });
                }
            }
            for p in pair.phases.iter() {
                if !used.insert((pair.actuator.as_str(), p)) {
                    return Err(ControlError::DuplicateActuatorPhase {
                        node: pair.actuator.clone(),
                        phase: p.letter(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// 0/1 mask of free gain entries. Ones sit at the same (actuator, performance)
/// positions inside the F11 and F22 blocks; F12 and F21 are zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructuralIdentity {
    /// Size of one block side (3n).
    pub block_size: usize,
    /// (row, col) in full 3n indexing within F11 (equivalently F22).
    pub entries: Vec<(usize, usize)>,
    /// Active full indices, used to restrict to the 2m state space.
    pub active: Vec<usize>,
}

impl StructuralIdentity {
    /// Dense 6n×6n mask.
    pub fn to_dense(&self) -> DMatrix<u8> {
        let n = self.block_size;
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        for &(r, c) in &self.entries {
            m[(r, c)] = 1;
            m[(n + r, n + c)] = 1;
        }
        m
    }

    /// Mask restricted to active slots, 2m×2m, as 0/1 scalars.
    pub fn active_mask<T: Scalar>(&self) -> DMatrix<T> {
        let m = self.active.len();
        let mut out = DMatrix::zeros(2 * m, 2 * m);
        for (r, c) in self.active_entries() {
            out[(r, c)] = T::one();
            out[(m + r, m + c)] = T::one();
        }
        out
    }

    /// Entries translated to active positions.
    pub fn active_entries(&self) -> Vec<(usize, usize)> {
        let pos = |full: usize| {
            self.active
                .binary_search(&full)
                .expect("structural entry on an inactive slot")
        };
        self.entries.iter().map(|&(r, c)| (pos(r), pos(c))).collect()
    }

    pub fn n_active(&self) -> usize {
        self.active.len()
    }
}

/// Derives the gain sparsity pattern implied by `config`.
pub fn structural_identity<T: Scalar>(
    config: &Configuration,
    feeder: &Feeder,
    s: &SensitivityMatrices<T>,
) -> Result<StructuralIdentity, ControlError> {
    config.validate(feeder)?;
    let mut entries = Vec::new();
    for pair in &config.pairs {
        for p in pair.phases.iter() {
            let row = s
                .index_of(&pair.actuator, p)
                .ok_or_else(|| ControlError::UnknownNode(pair.actuator.clone()))?;
            let col = s
                .index_of(&pair.performance, p)
                .ok_or_else(|| ControlError::UnknownNode(pair.performance.clone()))?;
            entries.push((row, col));
        }
    }
    Ok(StructuralIdentity {
        block_size: 3 * s.nodes.len(),
        entries,
        active: s.active.clone(),
    })
}

/// Input matrix `[[X, R], [-R/2, X/2]]` on the active slots.
pub fn assemble_b<T: Scalar>(s: &SensitivityMatrices<T>) -> DMatrix<T> {
    let r = s.r_active();
    let x = s.x_active();
    let m = r.nrows();
    let half = T::lit(0.5);
    let mut b = DMatrix::zeros(2 * m, 2 * m);
    b.view_mut((0, 0), (m, m)).copy_from(&x);
    b.view_mut((0, m), (m, m)).copy_from(&r);
    b.view_mut((m, 0), (m, m)).copy_from(&(&r * -half));
    b.view_mut((m, m), (m, m)).copy_from(&(&x * half));
    b
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainBounds<T> {
    pub fq_ub: T,
    pub fp_ub: T,
}

/// Upper ends of the sampled gain box.
///
/// The reactive bound is the reciprocal of the mean squared-voltage
/// sensitivity `X[act, perf]` over all pairs and phases; the real-power bound
/// uses the angle sensitivity `X/2` the same way.
pub fn gain_bounds<T: Scalar>(
    config: &Configuration,
    s: &SensitivityMatrices<T>,
) -> Result<GainBounds<T>, ControlError> {
    if config.is_empty() {
        return Err(ControlError::EmptyConfiguration);
    }
    let mut sum = T::zero();
    let mut count = 0usize;
    for pair in &config.pairs {
        for p in pair.phases.iter() {
            let (a, b) = (
                s.index_of(&pair.actuator, p)
                    .ok_or_else(|| ControlError::UnknownNode(pair.actuator.clone()))?,
                s.index_of(&pair.performance, p)
                    .ok_or_else(|| ControlError::UnknownNode(pair.performance.clone()))?,
            );
            let v = s.x[(a, b)];
            if v <= T::zero() {
                return Err(ControlError::NonPositiveSensitivity {
                    actuator: pair.actuator.clone(),
                    performance: pair.performance.clone(),
                    phase: p.letter(),
                });
            }
            sum += v;
            count += 1;
        }
    }
    if count == 0 {
        return Err(ControlError::EmptyConfiguration);
    }
    let s_q = sum / T::from_usize_lossy(count);
    let s_p = s_q * T::lit(0.5);
    Ok(GainBounds {
        fq_ub: T::one() / s_q,
        fp_ub: T::one() / s_p,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingScheme {
    #[default]
    Grid,
    #[serde(alias = "random")]
    UniformRandom,
}

impl FromStr for SamplingScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "grid" => Ok(SamplingScheme::Grid),
            "random" | "uniform_random" => Ok(SamplingScheme::UniformRandom),
            other => Err(format!("unknown sampling scheme {other:?} (expected grid or random)")),
        }
    }
}

impl fmt::Display for SamplingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplingScheme::Grid => "grid",
            SamplingScheme::UniformRandom => "random",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SamplingParams {
    pub scheme: SamplingScheme,
    pub count: usize,
    pub seed: u64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            scheme: SamplingScheme::Grid,
            count: 100,
            seed: 0,
        }
    }
}

/// Shared reactive and real-power gain applied to every free entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainSample<T> {
    pub f_q: T,
    pub f_p: T,
}

/// Samples the box (0, fq_ub] × (0, fp_ub].
///
/// `Grid` returns a ⌈√count⌉² lattice ordered by `f_q` then `f_p`;
/// `UniformRandom` returns `count` seeded i.i.d. points.
pub fn sample_gains<T: Scalar>(bounds: GainBounds<T>, params: SamplingParams) -> Vec<GainSample<T>> {
    let count = params.count.max(1);
    match params.scheme {
        SamplingScheme::Grid => {
            let mut k = (count as f64).sqrt().ceil() as usize;
            while k * k < count {
                k += 1;
            }
            let kt = T::from_usize_lossy(k);
            let mut out = Vec::with_capacity(k * k);
            for i in 1..=k {
                let f_q = bounds.fq_ub * T::from_usize_lossy(i) / kt;
                for j in 1..=k {
                    let f_p = bounds.fp_ub * T::from_usize_lossy(j) / kt;
                    out.push(GainSample { f_q, f_p });
                }
            }
            out
        }
        SamplingScheme::UniformRandom => {
            let mut rng = SeededRng::new(params.seed);
            (0..count)
                .map(|_| {
                    // 1 - u lies in (0, 1].
                    let uq = T::lit(1.0 - rng.unit_f64());
                    let up = T::lit(1.0 - rng.unit_f64());
                    GainSample {
                        f_q: bounds.fq_ub * uq,
                        f_p: bounds.fp_ub * up,
                    }
                })
                .collect()
        }
    }
}

/// Gain matrix on the active state space: `f_q` at every free F11 entry,
/// `f_p` at every free F22 entry.
pub fn build_f<T: Scalar>(iw: &StructuralIdentity, g: GainSample<T>) -> DMatrix<T> {
    let m = iw.n_active();
    let mut f = DMatrix::zeros(2 * m, 2 * m);
    for (r, c) in iw.active_entries() {
        f[(r, c)] = g.f_q;
        f[(m + r, m + c)] = g.f_p;
    }
    f
}

/// `A_cl = I - B F` and the tracked state indices (columns where F is nonzero).
pub fn closed_loop<T: Scalar>(
    b: &DMatrix<T>,
    f: &DMatrix<T>,
) -> Result<(DMatrix<T>, Vec<usize>), ControlError> {
    if !b.is_square() || b.shape() != f.shape() {
        return Err(ControlError::ShapeMismatch(format!(
            "B is {:?}, F is {:?}",
            b.shape(),
            f.shape()
        )));
    }
    let n = b.nrows();
    let a_cl = DMatrix::<T>::identity(n, n) - b * f;
    let tracked = tracked_columns(f);
    Ok((a_cl, tracked))
}

pub fn tracked_columns<T: Scalar>(f: &DMatrix<T>) -> Vec<usize> {
    (0..f.ncols())
        .filter(|&c| f.column(c).iter().any(|v| *v != T::zero()))
        .collect()
}

/// Assembled open- and closed-loop matrices for one gain choice.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace<T: Scalar> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    pub f: DMatrix<T>,
    pub a_cl: DMatrix<T>,
    pub tracked: Vec<usize>,
}

impl<T: Scalar> StateSpace<T> {
    pub fn new(s: &SensitivityMatrices<T>, iw: &StructuralIdentity, g: GainSample<T>) -> Self {
        let b = assemble_b(s);
        let f = build_f(iw, g);
        let (a_cl, tracked) = closed_loop(&b, &f).expect("shapes agree by construction");
        let n = b.nrows();
        StateSpace {
            a: DMatrix::identity(n, n),
            b,
            f,
            a_cl,
            tracked,
        }
    }
}
