//! Placement processes driven by stable-fraction heatmaps.
//!
//! A [`Session`] holds a growing core configuration and an event log. Every
//! mutating call appends one [`Event`]; [`Session::replay`] re-executes a log
//! and reproduces the same heatmaps and core.
//!
//! Three processes are supported:
//! * NPP: a planner picks a performance node, gets a heatmap over candidate
//!   actuators paired with it, and accepts a blue or yellow candidate.
//! * OCPP: co-located pairs are placed at seeded-random empty nodes until the
//!   first unstable draw.
//! * Auto-OCPP: like OCPP, but unstable draws are skipped until no remaining
//!   node admits a stable co-located pair.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{Apnp, Configuration, ControlError, SamplingParams};
use crate::feeder::{Feeder, NodeClass};
use crate::rng::SeededRng;
use crate::sensitivity::{build_rx, SensitivityMatrices, SensitivityMode};
use crate::stability::{has_stable_sample, stable_fraction, StabilityError, StableFraction, Tolerances};

pub const DEFAULT_THRESHOLD: f64 = 0.07;
pub const DEFAULT_MIN_BRANCH_LEN: usize = 4;
pub const COLOCATED: &str = "colocated";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlacementError {
    #[error("unknown node: {0}")]
    UnknownNode(String),
    #[error("the substation cannot host or be tracked by an APNP: {0}")]
    Substation(String),
    #[error("operation requires {expected} mode, session is {actual}")]
    WrongMode { expected: &'static str, actual: Mode },
    #[error("no current heatmap for context {0}")]
    NoHeatmap(String),
    #[error("heatmap for context {context} predates the last placement")]
    StaleHeatmap { context: String },
    #[error("candidate unstable: {0}")]
    CandidateUnstable(String),
    #[error("node already hosts an APNP: {0}")]
    Occupied(String),
    #[error("co-located modes require actuator == performance, got {actuator} -> {performance}")]
    NotColocated { actuator: String, performance: String },
    #[error("nothing to undo")]
    NothingToUndo,
    #[error(transparent)]
    Stability(#[from] StabilityError),
    #[error(transparent)]
    Control(#[from] ControlError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Npp,
    Ocpp,
    AutoOcpp,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Npp => "npp",
            Mode::Ocpp => "ocpp",
            Mode::AutoOcpp => "auto_ocpp",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "npp" => Ok(Mode::Npp),
            "ocpp" => Ok(Mode::Ocpp),
            "auto_ocpp" | "auto-ocpp" => Ok(Mode::AutoOcpp),
            other => Err(format!("unknown mode {other:?} (expected npp, ocpp or auto_ocpp)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Blue,
    Yellow,
    Red,
    Grey,
}

/// Grey for placed nodes, otherwise blue at or above `threshold`, yellow for
/// any smaller positive fraction and red for zero.
pub fn color_of(fraction: f64, placed: bool, threshold: f64) -> Color {
    if placed {
        Color::Grey
    } else if fraction >= threshold {
        Color::Blue
    } else if fraction > 0.0 {
        Color::Yellow
    } else {
        Color::Red
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapEntry {
    pub node: String,
    pub fraction: f64,
    pub n_stable: usize,
    pub n_samples: usize,
    pub color: Color,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    /// Core size when the heatmap was computed.
    pub step: usize,
    /// Performance node id, or `"colocated"`.
    pub context: String,
    pub entries: Vec<HeatmapEntry>,
}

impl Heatmap {
    pub fn entry(&self, node: &str) -> Option<&HeatmapEntry> {
        self.entries.iter().find(|e| e.node == node)
    }

    /// Entries that were evaluated, i.e. not grey.
    pub fn candidates(&self) -> impl Iterator<Item = &HeatmapEntry> {
        self.entries.iter().filter(|e| e.color != Color::Grey)
    }

    /// Candidate with the largest fraction; ties go to the earlier node.
    pub fn best(&self) -> Option<&HeatmapEntry> {
        self.candidates()
            .filter(|e| e.n_stable > 0)
            .fold(None, |best: Option<&HeatmapEntry>, e| match best {
                Some(b) if b.fraction >= e.fraction => Some(b),
                _ => Some(e),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub mode: Mode,
    #[serde(default)]
    pub sampling: SamplingParams,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Seed for OCPP and Auto-OCPP node draws.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sensitivity: SensitivityMode,
    #[serde(default)]
    pub tolerances: Tolerances<f64>,
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            mode: Mode::Npp,
            sampling: SamplingParams::default(),
            threshold: DEFAULT_THRESHOLD,
            seed: 0,
            sensitivity: SensitivityMode::default(),
            tolerances: Tolerances::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatmapContext {
    Performance(String),
    Colocated,
}

impl HeatmapContext {
    fn key(&self) -> &str {
        match self {
            HeatmapContext::Performance(p) => p,
            HeatmapContext::Colocated => COLOCATED,
        }
    }
}

/// One entry of the session log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    Heatmap {
        context: HeatmapContext,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        samples: Option<usize>,
    },
    Place {
        actuator: String,
        performance: String,
    },
    Undo,
    Ocpp,
    AutoOcpp {
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcppRun {
    pub seed: u64,
    pub placements: Vec<String>,
    /// Node whose draw ended the run, if any.
    pub stopped_at: Option<String>,
    pub heatmap: Heatmap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Tally {
    pub on_or_near_edge: usize,
    pub at_fork: usize,
    pub in_middle: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoTrialStats {
    pub seed: u64,
    pub total_placed: usize,
    pub placements: Vec<String>,
    pub last_four_distances: Vec<usize>,
    pub tally: Tally,
    pub percent_edge: f64,
    /// All remaining nodes were re-evaluated red after the run.
    pub certificate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchStat {
    pub start: String,
    pub end: String,
    pub length: usize,
    pub percent_stable: f64,
    pub n_used: usize,
    pub n_involving: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BranchStats {
    pub min_length: usize,
    /// Distinct NPP configurations evaluated so far.
    pub n_evaluated: usize,
    pub n_stable: usize,
    pub branches: Vec<BranchStat>,
}

#[derive(Debug, Clone)]
struct Snapshot {
    core: Configuration,
    current: Option<usize>,
}

/// Placement session over one feeder.
#[derive(Debug, Clone)]
pub struct Session {
    feeder: Arc<Feeder>,
    s: Arc<SensitivityMatrices<f64>>,
    config: SessionConfig,
    core: Configuration,
    heatmaps: Vec<Heatmap>,
    current: Option<usize>,
    log: Vec<Event>,
    undo: Vec<Snapshot>,
    /// NPP evaluations: configuration -> (candidate actuator, stable).
    evaluations: HashMap<Configuration, (String, bool)>,
}

impl Session {
    pub fn new(feeder: Arc<Feeder>, config: SessionConfig) -> Self {
        let s = Arc::new(build_rx(&feeder, config.sensitivity));
        Self::with_matrices(feeder, s, config)
    }

    /// Uses precomputed sensitivities; they must belong to `feeder` and `config.sensitivity`.
    pub fn with_matrices(
        feeder: Arc<Feeder>,
        s: Arc<SensitivityMatrices<f64>>,
        config: SessionConfig,
    ) -> Self {
        Session {
            feeder,
            s,
            config,
            core: Configuration::default(),
            heatmaps: Vec::new(),
            current: None,
            log: Vec::new(),
            undo: Vec::new(),
            evaluations: HashMap::new(),
        }
    }

    /// Rebuilds a session by re-executing `events` from the initial state.
    pub fn replay(
        feeder: Arc<Feeder>,
        config: SessionConfig,
        events: &[Event],
    ) -> Result<Self, PlacementError> {
        let mut s = Session::new(feeder, config);
        for e in events {
            s.apply(e.clone())?;
        }
        Ok(s)
    }

    /// Executes and logs one event.
    pub fn apply(&mut self, event: Event) -> Result<(), PlacementError> {
        match event {
            Event::Heatmap { context, samples } => {
                self.heatmap(context, samples)?;
            }
            Event::Place { actuator, performance } => self.accept_placement(&actuator, &performance)?,
            Event::Undo => self.undo()?,
            Event::Ocpp => {
                self.run_ocpp()?;
            }
            Event::AutoOcpp { seed } => {
                self.run_auto_ocpp(seed)?;
            }
        }
        Ok(())
    }

    pub fn feeder(&self) -> &Arc<Feeder> {
        &self.feeder
    }

    pub fn matrices(&self) -> &Arc<SensitivityMatrices<f64>> {
        &self.s
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn core(&self) -> &Configuration {
        &self.core
    }

    pub fn log(&self) -> &[Event] {
        &self.log
    }

    /// Every heatmap computed so far, in order.
    pub fn heatmaps(&self) -> &[Heatmap] {
        &self.heatmaps
    }

    /// Heatmap the planner is looking at; undo moves it back.
    pub fn current_heatmap(&self) -> Option<&Heatmap> {
        self.current.map(|i| &self.heatmaps[i])
    }

    /// Non-substation nodes without an actuator, in file order.
    pub fn empty_nodes(&self) -> Vec<&str> {
        self.feeder
            .load_nodes()
            .map(|n| n.id.as_str())
            .filter(|id| !self.core.hosts(id))
            .collect()
    }

    /// Stable fraction of the current core.
    pub fn core_fraction(&self) -> Result<StableFraction<f64>, PlacementError> {
        Ok(stable_fraction(
            &self.core,
            &self.feeder,
            &self.s,
            self.config.sampling,
            &self.config.tolerances,
        )?)
    }

    fn require(&self, ok: bool, expected: &'static str) -> Result<(), PlacementError> {
        if ok {
            Ok(())
        } else {
            Err(PlacementError::WrongMode {
                expected,
                actual: self.config.mode,
            })
        }
    }

    fn pair_for(&self, actuator: &str, context: &HeatmapContext) -> Result<Apnp, PlacementError> {
        let a = self
            .feeder
            .node(actuator)
            .ok_or_else(|| PlacementError::UnknownNode(actuator.to_string()))?;
        let (performance, phases) = match context {
            HeatmapContext::Colocated => (actuator.to_string(), a.phases),
            HeatmapContext::Performance(p) => {
                let pn = self
                    .feeder
                    .node(p)
                    .ok_or_else(|| PlacementError::UnknownNode(p.clone()))?;
                (p.clone(), a.phases.intersection(pn.phases))
            }
        };
        Ok(Apnp {
            actuator: actuator.to_string(),
            performance,
            phases,
        })
    }

    fn sampling(&self, samples: Option<usize>) -> SamplingParams {
        let mut p = self.config.sampling;
        if let Some(n) = samples {
            p.count = n;
        }
        p
    }

    /// Heatmap for NPP against `perf`.
    pub fn heatmap_npp(&mut self, perf: &str, samples: Option<usize>) -> Result<Heatmap, PlacementError> {
        self.heatmap(HeatmapContext::Performance(perf.to_string()), samples)
    }

    /// Heatmap of co-located candidates.
    pub fn heatmap_colocated(&mut self, samples: Option<usize>) -> Result<Heatmap, PlacementError> {
        self.heatmap(HeatmapContext::Colocated, samples)
    }

    pub fn heatmap(
        &mut self,
        context: HeatmapContext,
        samples: Option<usize>,
    ) -> Result<Heatmap, PlacementError> {
        match &context {
            HeatmapContext::Performance(p) => {
                self.require(self.config.mode == Mode::Npp, "npp")?;
                if self.feeder.node(p).is_none() {
                    return Err(PlacementError::UnknownNode(p.clone()));
                }
                if self.feeder.is_substation(p) {
                    return Err(PlacementError::Substation(p.clone()));
                }
            }
            HeatmapContext::Colocated => {
                self.require(self.config.mode != Mode::Npp, "ocpp or auto_ocpp")?;
            }
        }
        let (heatmap, evaluated) = self.compute_heatmap(&context, self.sampling(samples))?;
        if matches!(context, HeatmapContext::Performance(_)) {
            for (cfg, actuator, stable) in evaluated {
                self.evaluations.insert(cfg, (actuator, stable));
            }
        }
        self.heatmaps.push(heatmap.clone());
        self.current = Some(self.heatmaps.len() - 1);
        self.log.push(Event::Heatmap { context, samples });
        Ok(heatmap)
    }

    #[allow(clippy::type_complexity)]
    fn compute_heatmap(
        &self,
        context: &HeatmapContext,
        params: SamplingParams,
    ) -> Result<(Heatmap, Vec<(Configuration, String, bool)>), PlacementError> {
        let nodes: Vec<&str> = self.feeder.load_nodes().map(|n| n.id.as_str()).collect();
        let results = nodes
            .par_iter()
            .map(|&id| -> Result<_, PlacementError> {
                if self.core.hosts(id) {
                    return Ok((
                        HeatmapEntry {
                            node: id.to_string(),
                            fraction: 0.0,
                            n_stable: 0,
                            n_samples: 0,
                            color: Color::Grey,
                        },
                        None,
                    ));
                }
                let pair = self.pair_for(id, context)?;
                let cfg = self.core.with(pair.clone());
                let (fraction, n_stable, n_samples) = if pair.phases.is_empty() {
                    (0.0, 0, 0)
                } else {
                    match stable_fraction(&cfg, &self.feeder, &self.s, params, &self.config.tolerances) {
                        Ok(sf) => (sf.fraction, sf.n_stable, sf.n_samples),
                        // The actuator cannot move the target voltage at all.
                        Err(StabilityError::Control(ControlError::NonPositiveSensitivity { .. })) => {
                            (0.0, 0, 0)
                        }
                        Err(e) => return Err(e.into()),
                    }
                };
                let entry = HeatmapEntry {
                    node: id.to_string(),
                    fraction,
                    n_stable,
                    n_samples,
                    color: color_of(fraction, false, self.config.threshold),
                };
                Ok((entry, Some((cfg, id.to_string(), n_stable > 0))))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut entries = Vec::with_capacity(results.len());
        let mut evaluated = Vec::new();
        for (e, ev) in results {
            entries.push(e);
            evaluated.extend(ev);
        }
        Ok((
            Heatmap {
                step: self.core.len(),
                context: context.key().to_string(),
                entries,
            },
            evaluated,
        ))
    }

    /// Adds `(actuator, perf)` to the core. The current heatmap must be for
    /// this context, computed against the current core, and must not color
    /// the actuator red or grey.
    pub fn accept_placement(&mut self, actuator: &str, perf: &str) -> Result<(), PlacementError> {
        let context = if self.config.mode == Mode::Npp {
            HeatmapContext::Performance(perf.to_string())
        } else {
            if actuator != perf {
                return Err(PlacementError::NotColocated {
                    actuator: actuator.to_string(),
                    performance: perf.to_string(),
                });
            }
            HeatmapContext::Colocated
        };
        if self.feeder.node(actuator).is_none() {
            return Err(PlacementError::UnknownNode(actuator.to_string()));
        }
        if self.feeder.is_substation(actuator) {
            return Err(PlacementError::Substation(actuator.to_string()));
        }
        if self.core.hosts(actuator) {
            return Err(PlacementError::Occupied(actuator.to_string()));
        }
        let key = context.key().to_string();
        let heatmap = self
            .current_heatmap()
            .filter(|h| h.context == key)
            .ok_or_else(|| PlacementError::NoHeatmap(key.clone()))?;
        if heatmap.step != self.core.len() {
            return Err(PlacementError::StaleHeatmap { context: key });
        }
        let entry = heatmap
            .entry(actuator)
            .ok_or_else(|| PlacementError::UnknownNode(actuator.to_string()))?;
        match entry.color {
            Color::Red => return Err(PlacementError::CandidateUnstable(actuator.to_string())),
            Color::Grey => return Err(PlacementError::Occupied(actuator.to_string())),
            Color::Blue | Color::Yellow => {}
        }
        let pair = self.pair_for(actuator, &context)?;
        self.push_undo();
        self.core = self.core.with(pair);
        self.log.push(Event::Place {
            actuator: actuator.to_string(),
            performance: perf.to_string(),
        });
        Ok(())
    }

    fn push_undo(&mut self) {
        self.undo.push(Snapshot {
            core: self.core.clone(),
            current: self.current,
        });
    }

    /// Reverts the last placement step (single place, OCPP run or Auto-OCPP run).
    pub fn undo(&mut self) -> Result<(), PlacementError> {
        let snap = self.undo.pop().ok_or(PlacementError::NothingToUndo)?;
        self.core = snap.core;
        self.current = snap.current;
        self.log.push(Event::Undo);
        Ok(())
    }

    fn colocated_stable(&self, node: &str) -> Result<bool, PlacementError> {
        let pair = self.pair_for(node, &HeatmapContext::Colocated)?;
        Ok(has_stable_sample(
            &self.core.with(pair),
            &self.feeder,
            &self.s,
            self.config.sampling,
            &self.config.tolerances,
        )?)
    }

    /// Places co-located pairs at seeded-random empty nodes until a draw is
    /// unstable or no empty node is left, then emits the co-located heatmap.
    pub fn run_ocpp(&mut self) -> Result<OcppRun, PlacementError> {
        self.require(self.config.mode == Mode::Ocpp, "ocpp")?;
        let seed = self.config.seed;
        let mut rng = SeededRng::new(seed);
        let before = self.core.clone();
        let before_current = self.current;
        let mut placements = Vec::new();
        let mut stopped_at = None;
        loop {
            let empty = self.empty_nodes();
            if empty.is_empty() {
                break;
            }
            let node = empty[rng.index(empty.len())].to_string();
            if !self.colocated_stable(&node)? {
                stopped_at = Some(node);
                break;
            }
            let pair = self.pair_for(&node, &HeatmapContext::Colocated)?;
            self.core = self.core.with(pair);
            placements.push(node);
        }
        let (heatmap, _) = self.compute_heatmap(&HeatmapContext::Colocated, self.config.sampling)?;
        self.undo.push(Snapshot {
            core: before,
            current: before_current,
        });
        self.heatmaps.push(heatmap.clone());
        self.current = Some(self.heatmaps.len() - 1);
        self.log.push(Event::Ocpp);
        Ok(OcppRun {
            seed,
            placements,
            stopped_at,
            heatmap,
        })
    }

    /// Auto-OCPP: draws without replacement from the remaining empty nodes,
    /// places every stable draw and refills the pool after each placement.
    /// Ends when the pool is exhausted, so every remaining node was found
    /// unstable against the final core.
    pub fn run_auto_ocpp(&mut self, seed: u64) -> Result<AutoTrialStats, PlacementError> {
        self.require(self.config.mode == Mode::AutoOcpp, "auto_ocpp")?;
        let mut rng = SeededRng::new(seed);
        let before = self.core.clone();
        let before_current = self.current;
        let mut placements: Vec<String> = Vec::new();
        let mut pool: Vec<String> = self.empty_nodes().into_iter().map(String::from).collect();
        while !pool.is_empty() {
            let node = pool.remove(rng.index(pool.len()));
            if self.colocated_stable(&node)? {
                let pair = self.pair_for(&node, &HeatmapContext::Colocated)?;
                self.core = self.core.with(pair);
                placements.push(node);
                pool = self.empty_nodes().into_iter().map(String::from).collect();
            }
        }
        let (heatmap, _) = self.compute_heatmap(&HeatmapContext::Colocated, self.config.sampling)?;
        let certificate = heatmap.candidates().all(|e| e.color == Color::Red);
        self.undo.push(Snapshot {
            core: before,
            current: before_current,
        });
        self.heatmaps.push(heatmap);
        self.current = Some(self.heatmaps.len() - 1);
        self.log.push(Event::AutoOcpp { seed });

        let mut tally = Tally::default();
        for id in &placements {
            match self.feeder.classify_node(id).expect("placed node exists") {
                NodeClass::Edge | NodeClass::NearEdge => tally.on_or_near_edge += 1,
                NodeClass::Fork => tally.at_fork += 1,
                NodeClass::Middle | NodeClass::Substation => tally.in_middle += 1,
            }
        }
        let last_four_distances = placements[placements.len().saturating_sub(4)..]
            .iter()
            .map(|id| self.feeder.nodal_distance(id).expect("placed node exists"))
            .collect();
        let total = placements.len();
        Ok(AutoTrialStats {
            seed,
            total_placed: total,
            percent_edge: if total == 0 {
                0.0
            } else {
                100.0 * tally.on_or_near_edge as f64 / total as f64
            },
            placements,
            last_four_distances,
            tally,
            certificate,
        })
    }

    /// Per-branch success rate of NPP candidates, over branches with at least
    /// `min_length` nodes that saw an evaluation, best first.
    pub fn branch_stats(&self, min_length: usize) -> BranchStats {
        let mut branches: Vec<BranchStat> = self
            .feeder
            .branches()
            .into_iter()
            .filter(|b| b.len() >= min_length)
            .filter_map(|b| {
                let (mut n_involving, mut n_used) = (0, 0);
                for (actuator, stable) in self.evaluations.values() {
                    if b.contains(actuator) {
                        n_involving += 1;
                        n_used += usize::from(*stable);
                    }
                }
                (n_involving > 0).then(|| BranchStat {
                    length: b.len(),
                    start: b.start,
                    end: b.end,
                    percent_stable: 100.0 * n_used as f64 / n_involving as f64,
                    n_used,
                    n_involving,
                })
            })
            .collect();
        branches.sort_by(|a, b| b.percent_stable.total_cmp(&a.percent_stable));
        BranchStats {
            min_length,
            n_evaluated: self.evaluations.len(),
            n_stable: self.evaluations.values().filter(|(_, s)| *s).count(),
            branches,
        }
    }
}
