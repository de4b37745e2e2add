//! Closed-loop quasi-steady-state simulation.
//!
//! Iterates `x_{k+1} = A_cl x_k + c_k + d_k`, where `c_k` carries phasor
//! target changes and `d_k` the voltage effect of uncontrolled injection
//! changes. Offsets are zero except at scheduled event steps.

use std::collections::BTreeMap;
use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::sensitivity::SensitivityMatrices;

/// State magnitude beyond which a run is stopped and flagged as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e6;
pub const DEFAULT_CONVERGENCE_TOL: f64 = 1e-6;
pub const DEFAULT_WINDOW: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("{0} steps must be strictly increasing")]
    NotIncreasing(&'static str),
    #[error("state index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("step count must be at least 1")]
    NoSteps,
}

/// Step change of uncontrolled injections (per active slot, p.u.).
/// Empty vectors stand for zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionEvent<T> {
    pub step: usize,
    #[serde(default)]
    pub dp_other: Vec<T>,
    #[serde(default)]
    pub dq_other: Vec<T>,
}

/// Step change of phasor targets (squared magnitude and angle, per active slot).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEvent<T> {
    pub step: usize,
    #[serde(default)]
    pub dv_ref: Vec<T>,
    #[serde(default)]
    pub ddelta_ref: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DisturbanceSchedule<T> {
    #[serde(default)]
    pub events: Vec<InjectionEvent<T>>,
    #[serde(default)]
    pub target_events: Vec<TargetEvent<T>>,
}

fn or_zeros<T: Scalar>(v: &[T], m: usize, what: &str) -> Result<DVector<T>, SimError> {
    if v.is_empty() {
        Ok(DVector::zeros(m))
    } else if v.len() == m {
        Ok(DVector::from_column_slice(v))
    } else {
        Err(SimError::SizeMismatch(format!(
            "{what} has {} entries, expected {m}",
            v.len()
        )))
    }
}

impl<T: Scalar> DisturbanceSchedule<T> {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.events.windows(2).any(|w| w[0].step >= w[1].step) {
            return Err(SimError::NotIncreasing("disturbance event"));
        }
        if self.target_events.windows(2).any(|w| w[0].step >= w[1].step) {
            return Err(SimError::NotIncreasing("target event"));
        }
        Ok(())
    }

    /// Per-step offsets `c_k + d_k` on the 2m state vector.
    pub fn offsets(
        &self,
        s: &SensitivityMatrices<T>,
    ) -> Result<BTreeMap<usize, DVector<T>>, SimError> {
        self.validate()?;
        let m = s.n_active();
        let zero = DVector::zeros(m);
        let mut out: BTreeMap<usize, DVector<T>> = BTreeMap::new();
        for e in &self.events {
            let dp = or_zeros(&e.dp_other, m, "dp_other")?;
            let dq = or_zeros(&e.dq_other, m, "dq_other")?;
            let (c, d) = disturbance_offsets(&dp, &dq, &zero, &zero, s)?;
            *out.entry(e.step).or_insert_with(|| DVector::zeros(2 * m)) += c + d;
        }
        for e in &self.target_events {
            let dv = or_zeros(&e.dv_ref, m, "dv_ref")?;
            let dd = or_zeros(&e.ddelta_ref, m, "ddelta_ref")?;
            let (c, d) = disturbance_offsets(&zero, &zero, &dv, &dd, s)?;
            *out.entry(e.step).or_insert_with(|| DVector::zeros(2 * m)) += c + d;
        }
        Ok(out)
    }
}

/// Target offset `c = [-Δv_ref; -Δδ_ref]` (old minus new target) and
/// disturbance offset `d = [RΔp + XΔq; ½XΔp − ½RΔq]`.
pub fn disturbance_offsets<T: Scalar>(
    dp_other: &DVector<T>,
    dq_other: &DVector<T>,
    dv_ref: &DVector<T>,
    ddelta_ref: &DVector<T>,
    s: &SensitivityMatrices<T>,
) -> Result<(DVector<T>, DVector<T>), SimError> {
    let m = s.n_active();
    for (v, name) in [
        (dp_other, "dp_other"),
        (dq_other, "dq_other"),
        (dv_ref, "dv_ref"),
        (ddelta_ref, "ddelta_ref"),
    ] {
        if v.len() != m {
            return Err(SimError::SizeMismatch(format!(
                "{name} has {} entries, expected {m}",
                v.len()
            )));
        }
    }
    let r = s.r_active();
    let x = s.x_active();
    let half = T::lit(0.5);
    let mut c = DVector::zeros(2 * m);
    c.rows_mut(0, m).copy_from(&(-dv_ref));
    c.rows_mut(m, m).copy_from(&(-ddelta_ref));
    let mut d = DVector::zeros(2 * m);
    d.rows_mut(0, m).copy_from(&(&r * dp_other + &x * dq_other));
    d.rows_mut(m, m)
        .copy_from(&((&x * dp_other - &r * dq_other) * half));
    Ok((c, d))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T: Scalar> {
    /// x_0 .. x_K (fewer when diverged).
    pub states: Vec<DVector<T>>,
    /// u_k = -F x_k for every recorded state.
    pub inputs: Vec<DVector<T>>,
    /// Cumulative actuation before step k: Σ_{j<k} u_j, stacked [q_inv; p_inv].
    pub actuation: Vec<DVector<T>>,
    /// Step at which the state exceeded the divergence limit or went non-finite.
    pub diverged_at: Option<usize>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    pub fn last(&self) -> &DVector<T> {
        self.states.last().expect("trajectory holds x0")
    }

    /// Largest |x_k(i)| over the tracked indices.
    pub fn tracked_inf_norm(&self, k: usize, tracked: &[usize]) -> T {
        tracked
            .iter()
            .map(|&i| self.states[k][i].abs())
            .fold(T::zero(), |a, b| a.max(b))
    }

    /// Writes `step, <state columns>, <input columns>` as CSV.
    pub fn write_csv<W: Write>(
        &self,
        mut w: W,
        state_labels: &[String],
        input_labels: &[String],
    ) -> io::Result<()> {
        let mut header = vec!["step".to_string()];
        header.extend_from_slice(state_labels);
        header.extend_from_slice(input_labels);
        writeln!(w, "{}", header.join(","))?;
        for (k, (x, u)) in self.states.iter().zip(&self.inputs).enumerate() {
            let mut row = vec![k.to_string()];
            row.extend(x.iter().chain(u.iter()).map(|v| format!("{:e}", v.to_f64_lossy())));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Runs the closed loop for `steps` steps from `x0`.
pub fn simulate<T: Scalar>(
    a_cl: &DMatrix<T>,
    f: &DMatrix<T>,
    offsets: &BTreeMap<usize, DVector<T>>,
    x0: &DVector<T>,
    steps: usize,
) -> Result<Trajectory<T>, SimError> {
    let n = a_cl.nrows();
    if steps == 0 {
        return Err(SimError::NoSteps);
    }
    if !a_cl.is_square() || f.shape() != (n, n) || x0.len() != n {
        return Err(SimError::SizeMismatch(format!(
            "A_cl {:?}, F {:?}, x0 {}",
            a_cl.shape(),
            f.shape(),
            x0.len()
        )));
    }
    if let Some((k, v)) = offsets.iter().find(|(_, v)| v.len() != n) {
        return Err(SimError::SizeMismatch(format!(
            "offset at step {k} has {} entries, expected {n}",
            v.len()
        )));
    }
    let limit = T::lit(DIVERGENCE_LIMIT);
    let mut states = Vec::with_capacity(steps + 1);
    let mut inputs = Vec::with_capacity(steps + 1);
    let mut actuation = Vec::with_capacity(steps + 1);
    let mut x = x0.clone();
    let mut cum = DVector::zeros(n);
    let mut diverged_at = None;
    for k in 0..=steps {
        let u = -(f * &x);
        states.push(x.clone());
        inputs.push(u.clone());
        actuation.push(cum.clone());
        if x.iter().any(|v| !v.is_finite() || v.abs() > limit) {
            diverged_at = Some(k);
            break;
        }
        if k == steps {
            break;
        }
        cum += &u;
        let mut next = a_cl * &x;
        if let Some(off) = offsets.get(&k) {
            next += off;
        }
        x = next;
    }
    Ok(Trajectory {
        states,
        inputs,
        actuation,
        diverged_at,
    })
}

/// True iff the run did not diverge and the tracked states stayed below
/// `tol` (∞-norm) over the last `window` recorded steps.
pub fn tracking_converged<T: Scalar>(
    t: &Trajectory<T>,
    tracked: &[usize],
    tol: T,
    window: usize,
) -> Result<bool, SimError> {
    let dim = t.states.first().map_or(0, |x| x.len());
    if let Some(&index) = tracked.iter().find(|&&i| i >= dim) {
        return Err(SimError::IndexOutOfRange { index, dim });
    }
    if t.diverged() {
        return Ok(false);
    }
    let start = t.states.len().saturating_sub(window.max(1));
    Ok((start..t.states.len()).all(|k| t.tracked_inf_norm(k, tracked) < tol))
}
