//! Lyapunov-stability test for `x⁺ = M x` and gain-sample evaluation.
//!
//! A discrete LTI system is stable in the sense of Lyapunov (SISL) when every
//! eigenvalue lies in the closed unit disc and every eigenvalue on the circle
//! has only 1×1 Jordan blocks. The second condition is checked without a
//! Jordan form: the number of Jordan blocks of λ equals nullity(M − λI), so
//! the blocks are all 1×1 exactly when that nullity equals the algebraic
//! multiplicity of λ.

use nalgebra::{ComplexField, DMatrix, DVector, Schur};
use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{
    assemble_b, build_f, gain_bounds, sample_gains, structural_identity, ControlError,
    Configuration, GainBounds, GainSample, SamplingParams, StructuralIdentity,
};
use crate::feeder::Feeder;
use crate::scalar::Scalar;
use crate::sensitivity::SensitivityMatrices;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StabilityError {
    #[error("matrix is not square ({0}x{1})")]
    NotSquare(usize, usize),
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("state index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error(transparent)]
    Control(#[from] ControlError),
}

/// Largest tracked eigenvector component still treated as zero.
pub const SUPPORT_TOL: f64 = 1e-8;

/// Numerical tolerances for eigenvalue classification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances<T> {
    /// Slack on |λ| ≤ 1.
    pub lambda: T,
    /// Half-width of the on-circle band ||λ| − 1| ≤ unit.
    pub unit: T,
    /// Eigenvalues closer than this are grouped as one distinct eigenvalue.
    pub cluster: T,
    /// Relative singular-value threshold for nullity; `None` means dim·ε.
    pub rank: Option<T>,
}

impl<T: Scalar> Default for Tolerances<T> {
    fn default() -> Self {
        let eps = T::machine_eps();
        Tolerances {
            lambda: T::lit(1e-9).max(eps * T::lit(64.0)),
            unit: T::lit(1e-7).max(eps * T::lit(1e3)),
            cluster: T::lit(1e-7).max(eps * T::lit(1e3)),
            rank: None,
        }
    }
}

/// A distinct eigenvalue on the unit circle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnitEigen<T: Scalar> {
    pub value: Complex<T>,
    pub multiplicity: usize,
    pub nullity: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityVerdict<T: Scalar> {
    pub eigenvalues: Vec<Complex<T>>,
    pub max_abs: T,
    pub cond1_pass: bool,
    pub unit_set: Vec<UnitEigen<T>>,
    pub cond2_pass: bool,
    pub sisl: bool,
    pub tolerances: Tolerances<T>,
    /// Set when the eigen solver did not converge.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

struct Cluster<T: Scalar> {
    rep: Complex<T>,
    members: usize,
    spread: T,
}

struct Analysis<T: Scalar> {
    verdict: StabilityVerdict<T>,
    /// Orthonormal null-space bases of M − λI, one per on-circle cluster.
    unit_vectors: Vec<Vec<DVector<Complex<T>>>>,
}

fn validate<T: Scalar>(m: &DMatrix<T>) -> Result<(), StabilityError> {
    if !m.is_square() {
        return Err(StabilityError::NotSquare(m.nrows(), m.ncols()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(StabilityError::NonFinite);
    }
    Ok(())
}

/// Convergence threshold for the iterative solvers. At exactly one ulp the
/// QR sweeps can stall on matrices with many repeated unit eigenvalues.
fn solver_eps<T: Scalar>() -> T {
    T::machine_eps() * T::lit(16.0)
}

fn eigenvalues<T: Scalar>(m: &DMatrix<T>) -> Option<Vec<Complex<T>>> {
    let n = m.nrows();
    if n == 0 {
        return Some(Vec::new());
    }
    Schur::try_new(m.clone(), solver_eps::<T>(), 1000 * n.max(1))
        .map(|s| s.complex_eigenvalues().iter().copied().collect())
}

/// Single-linkage grouping of eigenvalues within `tol` of each other.
fn cluster<T: Scalar>(eigs: &[Complex<T>], tol: T) -> Vec<Cluster<T>> {
    let n = eigs.len();
    let mut label: Vec<usize> = (0..n).collect();
    fn find(l: &mut [usize], mut a: usize) -> usize {
        while l[a] != a {
            l[a] = l[l[a]];
            a = l[a];
        }
        a
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if (eigs[i] - eigs[j]).modulus() <= tol {
                let (a, b) = (find(&mut label, i), find(&mut label, j));
                if a != b {
                    label[a] = b;
                }
            }
        }
    }
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for i in 0..n {
        let root = find(&mut label, i);
        match groups.iter_mut().find(|(r, _)| *r == root) {
            Some((_, g)) => g.push(i),
            None => groups.push((root, vec![i])),
        }
    }
    groups
        .into_iter()
        .map(|(_, idx)| {
            let k = T::from_usize_lossy(idx.len());
            let sum = idx
                .iter()
                .fold(Complex::new(T::zero(), T::zero()), |acc, &i| acc + eigs[i]);
            let rep = Complex::new(sum.re / k, sum.im / k);
            let spread = idx
                .iter()
                .map(|&i| (eigs[i] - rep).modulus())
                .fold(T::zero(), |a, b| a.max(b));
            Cluster {
                rep,
                members: idx.len(),
                spread,
            }
        })
        .collect()
}

/// Snaps a cluster representative onto ±1 or the real axis when it is
/// within `tol`, so that M − λI is formed from an exact shift.
fn snap<T: Scalar>(z: Complex<T>, tol: T) -> Complex<T> {
    let one = Complex::new(T::one(), T::zero());
    if (z - one).modulus() <= tol {
        return one;
    }
    if (z + one).modulus() <= tol {
        return -one;
    }
    if z.im.abs() <= tol {
        return Complex::new(z.re, T::zero());
    }
    z
}

/// Column split of M. Columns equal to the matching unit vector (`u`) keep
/// their state fixed; ordering states as (t, u) makes M block lower
/// triangular with an identity block, so the spectrum is that of `M[t, t]`
/// plus a one for every such column.
struct Split<T: Scalar> {
    n: usize,
    t: Vec<usize>,
    u: Vec<usize>,
    m_tt: DMatrix<T>,
    m_ut: DMatrix<T>,
}

fn split<T: Scalar>(m: &DMatrix<T>) -> Split<T> {
    let n = m.nrows();
    let (u, t): (Vec<usize>, Vec<usize>) = (0..n).partition(|&j| {
        m.column(j)
            .iter()
            .enumerate()
            .all(|(i, v)| *v == if i == j { T::one() } else { T::zero() })
    });
    let m_tt = DMatrix::from_fn(t.len(), t.len(), |i, j| m[(t[i], t[j])]);
    let m_ut = DMatrix::from_fn(u.len(), t.len(), |i, j| m[(u[i], t[j])]);
    Split { n, t, u, m_tt, m_ut }
}

fn to_complex<T: Scalar>(m: &DMatrix<T>) -> DMatrix<Complex<T>> {
    m.map(|v| Complex::new(v, T::zero()))
}

/// Right singular vectors whose singular values fall below the nullity
/// threshold, as columns, smallest first.
fn small_singular_vectors<T: Scalar>(
    a: DMatrix<Complex<T>>,
    n: usize,
    spread: T,
    tol: &Tolerances<T>,
) -> Option<Vec<DVector<Complex<T>>>> {
    let k = a.ncols();
    if k == 0 {
        return Some(Vec::new());
    }
    let rel = tol
        .rank
        .unwrap_or_else(|| T::from_usize_lossy(n) * T::machine_eps());
    let svd = a.try_svd(false, true, solver_eps::<T>(), 1000 * n.max(1))?;
    let vt = svd.v_t.expect("requested V");
    let sigma: Vec<T> = svd.singular_values.iter().copied().collect();
    let sigma_max = sigma.iter().copied().fold(T::zero(), |a, b| a.max(b));
    let threshold = (rel * sigma_max).max(spread * T::lit(10.0));
    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&a, &b| sigma[a].partial_cmp(&sigma[b]).expect("finite singular values"));
    // A tall matrix has k singular values; a square one may be rank deficient
    // by construction, which the count below already covers.
    Some(
        order
            .into_iter()
            .filter(|&i| sigma[i] <= threshold)
            .map(|i| vt.row(i).transpose().map(|c| c.conj()))
            .collect(),
    )
}

/// Nullity of M − λI and a basis of its null space in full coordinates.
/// λ is an eigenvalue, so at least one vector is returned.
fn null_space<T: Scalar>(
    sp: &Split<T>,
    lambda: Complex<T>,
    spread: T,
    tol: &Tolerances<T>,
) -> Option<(usize, Vec<DVector<Complex<T>>>)> {
    let one = Complex::new(T::one(), T::zero());
    let zero = Complex::new(T::zero(), T::zero());
    let k = sp.t.len();
    let embed = |vt: &DVector<Complex<T>>, vu: Option<DVector<Complex<T>>>| {
        let mut v = DVector::from_element(sp.n, zero);
        for (i, &ti) in sp.t.iter().enumerate() {
            v[ti] = vt[i];
        }
        if let Some(vu) = vu {
            for (i, &ui) in sp.u.iter().enumerate() {
                v[ui] = vu[i];
            }
        }
        v
    };
    if lambda == one && !sp.u.is_empty() {
        // [M_tt − I, 0; M_ut, 0]: every u state is free, t states must
        // satisfy both block rows.
        let mut stacked = DMatrix::zeros(sp.n, k);
        stacked
            .view_mut((0, 0), (k, k))
            .copy_from(&(&sp.m_tt - DMatrix::identity(k, k)));
        stacked.view_mut((k, 0), (sp.u.len(), k)).copy_from(&sp.m_ut);
        let vs = small_singular_vectors(to_complex(&stacked), sp.n, spread, tol)?;
        let mut basis: Vec<DVector<Complex<T>>> = sp
            .u
            .iter()
            .map(|&ui| {
                let mut v = DVector::from_element(sp.n, zero);
                v[ui] = one;
                v
            })
            .collect();
        basis.extend(vs.iter().map(|v| embed(v, None)));
        return Some((basis.len(), basis));
    }
    // λ ≠ 1 (or nothing fixed): the u block (1 − λ)I is invertible, so null
    // vectors are determined by their t part.
    let shifted = to_complex(&sp.m_tt) - DMatrix::<Complex<T>>::identity(k, k) * lambda;
    let mut vs = small_singular_vectors(shifted.clone(), sp.n, spread, tol)?;
    if vs.is_empty() && k > 0 {
        // Keep the closest direction so the eigenvalue still owns a vector.
        let svd = shifted.try_svd(false, true, solver_eps::<T>(), 1000 * sp.n.max(1))?;
        let vt = svd.v_t.expect("requested V");
        let i = (0..k)
            .min_by(|&a, &b| {
                svd.singular_values[a]
                    .partial_cmp(&svd.singular_values[b])
                    .expect("finite singular values")
            })
            .expect("k > 0");
        vs.push(vt.row(i).transpose().map(|c| c.conj()));
    }
    let nullity = vs.len().max(1);
    let basis = vs
        .iter()
        .map(|vt| {
            let vu = (!sp.u.is_empty()).then(|| {
                let scale = one / (one - lambda);
                -(to_complex(&sp.m_ut) * vt) * scale
            });
            embed(vt, vu)
        })
        .collect();
    Some((nullity, basis))
}

fn analyze<T: Scalar>(m: &DMatrix<T>, tol: &Tolerances<T>) -> Result<Analysis<T>, StabilityError> {
    validate(m)?;
    let failed = |what: &str| Analysis {
        verdict: StabilityVerdict {
            eigenvalues: Vec::new(),
            max_abs: T::zero(),
            cond1_pass: false,
            unit_set: Vec::new(),
            cond2_pass: false,
            sisl: false,
            tolerances: *tol,
            diagnostic: Some(format!("{what} did not converge")),
        },
        unit_vectors: Vec::new(),
    };
    let sp = split(m);
    let Some(mut eigs) = eigenvalues(&sp.m_tt) else {
        return Ok(failed("eigenvalue solver"));
    };
    eigs.extend(std::iter::repeat_n(Complex::new(T::one(), T::zero()), sp.u.len()));
    let max_abs = eigs.iter().map(|z| z.modulus()).fold(T::zero(), |a, b| a.max(b));
    let cond1_pass = max_abs <= T::one() + tol.lambda;

    let mut unit_set = Vec::new();
    let mut unit_vectors = Vec::new();
    for c in cluster(&eigs, tol.cluster) {
        if (c.rep.modulus() - T::one()).abs() > tol.unit {
            continue;
        }
        let lambda = snap(c.rep, tol.cluster);
        let Some((nullity, basis)) = null_space(&sp, lambda, c.spread, tol) else {
            return Ok(failed("singular value decomposition"));
        };
        unit_set.push(UnitEigen {
            value: lambda,
            multiplicity: c.members,
            nullity,
        });
        unit_vectors.push(basis);
    }
    let cond2_pass = unit_set.iter().all(|u| u.nullity == u.multiplicity);
    Ok(Analysis {
        verdict: StabilityVerdict {
            eigenvalues: eigs,
            max_abs,
            cond1_pass,
            unit_set,
            cond2_pass,
            sisl: cond1_pass && cond2_pass,
            tolerances: *tol,
            diagnostic: None,
        },
        unit_vectors,
    })
}

/// Checks both eigenvalue conditions for `x⁺ = M x`.
pub fn check_sisl<T: Scalar>(
    m: &DMatrix<T>,
    tol: &Tolerances<T>,
) -> Result<StabilityVerdict<T>, StabilityError> {
    analyze(m, tol).map(|a| a.verdict)
}

fn support_of<T: Scalar>(vectors: &[Vec<DVector<Complex<T>>>], tracked: &[usize]) -> T {
    vectors
        .iter()
        .flatten()
        .flat_map(|v| {
            let norm = v.norm();
            tracked.iter().map(move |&i| v[i].modulus() / norm)
        })
        .fold(T::zero(), |a, b| a.max(b))
}

/// Largest tracked component of any unit-norm eigenvector belonging to an
/// on-circle eigenvalue. Zero when nothing is tracked or no eigenvalue is on
/// the circle.
pub fn unit_eigvec_support<T: Scalar>(
    a_cl: &DMatrix<T>,
    tracked: &[usize],
    tol: &Tolerances<T>,
) -> Result<T, StabilityError> {
    if let Some(&bad) = tracked.iter().find(|&&i| i >= a_cl.nrows()) {
        return Err(StabilityError::IndexOutOfRange {
            index: bad,
            dim: a_cl.nrows(),
        });
    }
    if tracked.is_empty() {
        validate(a_cl)?;
        return Ok(T::zero());
    }
    let a = analyze(a_cl, tol)?;
    Ok(support_of(&a.unit_vectors, tracked))
}

/// Verdict for one gain sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleOutcome<T: Scalar> {
    pub gains: GainSample<T>,
    pub sisl: bool,
    pub max_abs: T,
    pub support: T,
    /// SISL and every tracked state driven to zero.
    pub stable: bool,
}

/// Builds `A_cl` for one sample and evaluates SISL plus the tracking check.
pub fn evaluate_sample<T: Scalar>(
    b: &DMatrix<T>,
    iw: &StructuralIdentity,
    g: GainSample<T>,
    tol: &Tolerances<T>,
) -> Result<SampleOutcome<T>, StabilityError> {
    let f = build_f(iw, g);
    let (a_cl, tracked) = crate::control::closed_loop(b, &f)?;
    let a = analyze(&a_cl, tol)?;
    let support = if a.verdict.sisl {
        support_of(&a.unit_vectors, &tracked)
    } else {
        T::zero()
    };
    let stable = a.verdict.sisl && !tracked.is_empty() && support < T::lit(SUPPORT_TOL);
    Ok(SampleOutcome {
        gains: g,
        sisl: a.verdict.sisl,
        max_abs: a.verdict.max_abs,
        support,
        stable,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StableFraction<T: Scalar> {
    pub fraction: f64,
    pub n_stable: usize,
    pub n_samples: usize,
    /// First stable samples in sampling order (at most five).
    pub witnesses: Vec<GainSample<T>>,
    /// Set for configurations without any tracked state.
    pub no_tracked_states: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bounds: Option<GainBounds<T>>,
}

pub const MAX_WITNESSES: usize = 5;

/// Share of sampled gain pairs that make `config` SISL with tracking.
pub fn stable_fraction<T: Scalar>(
    config: &Configuration,
    feeder: &Feeder,
    s: &SensitivityMatrices<T>,
    params: SamplingParams,
    tol: &Tolerances<T>,
) -> Result<StableFraction<T>, StabilityError> {
    let iw = structural_identity(config, feeder, s)?;
    if iw.entries.is_empty() {
        return Ok(StableFraction {
            fraction: 0.0,
            n_stable: 0,
            n_samples: 0,
            witnesses: Vec::new(),
            no_tracked_states: true,
            bounds: None,
        });
    }
    let bounds = gain_bounds(config, s)?;
    let samples = sample_gains(bounds, params);
    let b = assemble_b(s);
    let outcomes = samples
        .par_iter()
        .map(|&g| evaluate_sample(&b, &iw, g, tol).map(|o| o.stable))
        .collect::<Result<Vec<bool>, _>>()?;
    let n_stable = outcomes.iter().filter(|s| **s).count();
    let witnesses = samples
        .iter()
        .zip(&outcomes)
        .filter(|(_, ok)| **ok)
        .map(|(g, _)| *g)
        .take(MAX_WITNESSES)
        .collect();
    Ok(StableFraction {
        fraction: n_stable as f64 / samples.len() as f64,
        n_stable,
        n_samples: samples.len(),
        witnesses,
        no_tracked_states: false,
        bounds: Some(bounds),
    })
}

/// True when at least one sample is stable with tracking; stops early.
pub fn has_stable_sample<T: Scalar>(
    config: &Configuration,
    feeder: &Feeder,
    s: &SensitivityMatrices<T>,
    params: SamplingParams,
    tol: &Tolerances<T>,
) -> Result<bool, StabilityError> {
    let iw = structural_identity(config, feeder, s)?;
    if iw.entries.is_empty() {
        return Ok(false);
    }
    let bounds = gain_bounds(config, s)?;
    let samples = sample_gains(bounds, params);
    let b = assemble_b(s);
    samples
        .par_iter()
        .map(|&g| evaluate_sample(&b, &iw, g, tol).map(|o| o.stable))
        .find_any(|r| !matches!(r, Ok(false)))
        .unwrap_or(Ok(false))
}
