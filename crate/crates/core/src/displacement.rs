//! Displacement between consecutive packets from per-path weight changes.
//!
//! For one AP, the least-squares weights of two consecutive packets relate as
//! `F2 = D F1` with `D` diagonal. Each `D_kk` carries the path's displacement
//! phase plus the common clock-phase change `nu_2 - nu_1`. Dividing by a
//! reference path's entry cancels the clock term exactly, leaving one linear
//! equation in the displacement per non-reference path. Equations from all
//! APs are stacked and solved by least squares.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::types::{ApId, Displacement, PathSet};

/// Largest accepted condition number of a steering matrix.
pub const STEERING_COND_MAX: f64 = 1e6;
/// Largest accepted condition number of the stacked displacement system.
pub const DISPLACEMENT_COND_MAX: f64 = 1e4;
/// Path weights below this fraction of the weight-vector norm count as vanished.
pub const WEAK_PATH_RATIO: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct PathWeights {
    pub ap: ApId,
    pub packet_index: u64,
    pub weights: DVector<Complex64>,
}

/// Diagonal of the per-path attenuation change between two packets.
#[derive(Debug, Clone, PartialEq)]
pub struct AttenuationChange {
    pub ap: ApId,
    pub diagonal: Vec<Complex64>,
}

/// One AP's contribution to the stacked system: `rows * delta ~= rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct ApSystem {
    pub ap: ApId,
    pub rows: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

/// How the per-path phase changes are turned into equations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClockModel {
    /// Differences against a reference path; immune to clock offsets.
    #[default]
    PathDifference,
    /// Treats every path phase change as pure displacement (ablation).
    AssumeSameClock,
}

fn condition_number(singular: &DVector<f64>) -> f64 {
    let max = singular.iter().copied().fold(0.0, f64::max);
    let min = singular.iter().copied().fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// Condition-number limits for the steering matrix and the stacked system.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ConditionGates {
    pub steering_cond_max: f64,
    pub displacement_cond_max: f64,
}

impl Default for ConditionGates {
    fn default() -> Self {
        Self {
            steering_cond_max: STEERING_COND_MAX,
            displacement_cond_max: DISPLACEMENT_COND_MAX,
        }
    }
}

impl ConditionGates {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("tracker.steering_cond_max", self.steering_cond_max),
            ("tracker.displacement_cond_max", self.displacement_cond_max),
        ] {
            if !(v >= 1.0) || v.is_nan() {
                return Err(Error::Config {
                    field: field.into(),
                    reason: format!("must be at least 1, got {v}"),
                });
            }
        }
        Ok(())
    }
}

/// Least-squares weights `A^+ H` of the paths in one packet's CSI.
pub fn path_weights(csi: &[Complex64], packet_index: u64, paths: &PathSet) -> Result<PathWeights> {
    path_weights_gated(csi, packet_index, paths, STEERING_COND_MAX)
}

/// [`path_weights`] with an explicit steering condition limit.
pub fn path_weights_gated(csi: &[Complex64], packet_index: u64, paths: &PathSet, max_cond: f64) -> Result<PathWeights> {
    let a = paths.steering_matrix();
    if csi.len() != a.nrows() {
        return Err(Error::InvalidInput(format!(
            "CSI length {} does not match {} antennas",
            csi.len(),
            a.nrows()
        )));
    }
    let svd = a.clone().svd(true, true);
    let cond = condition_number(&svd.singular_values);
    if !(cond < max_cond) {
        return Err(Error::DegenerateGeometry { cond });
    }
    let h = DVector::from_column_slice(csi);
    let weights = svd
        .solve(&h, 0.0)
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(PathWeights {
        ap: paths.ap,
        packet_index,
        weights,
    })
}

/// Closed-form minimizer of `||F2 - D F1||` over diagonal `D`:
/// `D_kk = F2_k conj(F1_k) / |F1_k|^2`.
pub fn attenuation_change(first: &PathWeights, second: &PathWeights) -> Result<AttenuationChange> {
    if first.weights.len() != second.weights.len() {
        return Err(Error::InvalidInput("path weight lengths differ".into()));
    }
    let floor = WEAK_PATH_RATIO * first.weights.norm();
    let diagonal = first
        .weights
        .iter()
        .zip(second.weights.iter())
        .enumerate()
        .map(|(k, (f1, f2))| {
            let mag = f1.norm();
            if !(mag > floor) {
                return Err(Error::WeakPath { path: k, magnitude: mag });
            }
            Ok(f2 * f1.conj() / f1.norm_sqr())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AttenuationChange {
        ap: first.ap,
        diagonal,
    })
}

/// Phases of `D_kk / D_ref` for every path except the reference, in path
/// order, each in `(-pi, pi]`.
pub fn offset_free_phases(change: &AttenuationChange, reference: usize) -> Result<Vec<f64>> {
    let l = change.diagonal.len();
    if l < 2 {
        return Err(Error::InsufficientPaths(l));
    }
    if reference >= l {
        return Err(Error::InvalidInput(format!("reference path {reference} out of {l}")));
    }
    let d_ref = change.diagonal[reference];
    // arg(a conj(b)) == arg(a / b) and keeps any common factor's phase out exactly
    // up to rounding of the product.
    Ok((0..l)
        .filter(|&k| k != reference)
        .map(|k| (change.diagonal[k] * d_ref.conj()).arg())
        .collect())
}

/// Rows `(-2 pi / lambda) [cos t_k - cos t_ref, sin t_k - sin t_ref]` matching
/// [`offset_free_phases`].
pub fn geometry_matrix(paths: &PathSet, reference: usize, wavelength: f64) -> Result<DMatrix<f64>> {
    let l = paths.len();
    if l < 2 {
        return Err(Error::InsufficientPaths(l));
    }
    if reference >= l {
        return Err(Error::InvalidInput(format!("reference path {reference} out of {l}")));
    }
    let t = paths.aods();
    let k = -TAU / wavelength;
    let (cr, sr) = (t[reference].cos(), t[reference].sin());
    let rows: Vec<[f64; 2]> = (0..l)
        .filter(|&i| i != reference)
        .map(|i| [k * (t[i].cos() - cr), k * (t[i].sin() - sr)])
        .collect();
    Ok(DMatrix::from_fn(rows.len(), 2, |r, c| rows[r][c]))
}

/// Path with the largest `min(|F1_k|, |F2_k|)`.
pub fn choose_reference(first: &PathWeights, second: &PathWeights) -> usize {
    first
        .weights
        .iter()
        .zip(second.weights.iter())
        .map(|(a, b)| a.norm().min(b.norm()))
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (k, m)| if m > best.1 { (k, m) } else { best })
        .0
}

/// Indices of paths whose first-packet weight is not vanishing.
fn usable_paths(first: &PathWeights) -> Vec<usize> {
    let floor = WEAK_PATH_RATIO * first.weights.norm();
    (0..first.weights.len())
        .filter(|&k| first.weights[k].norm() > floor)
        .collect()
}

fn restrict(w: &PathWeights, keep: &[usize]) -> PathWeights {
    PathWeights {
        ap: w.ap,
        packet_index: w.packet_index,
        weights: DVector::from_iterator(keep.len(), keep.iter().map(|&k| w.weights[k])),
    }
}

/// Builds one AP's equations from two packets' weights against the same
/// path set. Weak paths are dropped; fewer than two remaining paths is an
/// [`Error::InsufficientPaths`] for the path-difference model.
pub fn ap_system(
    paths: &PathSet,
    first: &PathWeights,
    second: &PathWeights,
    wavelength: f64,
    model: ClockModel,
) -> Result<ApSystem> {
    let keep = usable_paths(first);
    let (first, second) = (restrict(first, &keep), restrict(second, &keep));
    let paths = paths.permuted(&keep);
    let change = attenuation_change(&first, &second)?;
    match model {
        ClockModel::PathDifference => {
            let reference = choose_reference(&first, &second);
            let rhs = offset_free_phases(&change, reference)?;
            let rows = geometry_matrix(&paths, reference, wavelength)?;
            Ok(ApSystem {
                ap: paths.ap,
                rows,
                rhs: DVector::from_vec(rhs),
            })
        }
        ClockModel::AssumeSameClock => {
            if keep.is_empty() {
                return Err(Error::InsufficientPaths(0));
            }
            let k = -TAU / wavelength;
            let t = paths.aods();
            Ok(ApSystem {
                ap: paths.ap,
                rows: DMatrix::from_fn(t.len(), 2, |r, c| k * if c == 0 { t[r].cos() } else { t[r].sin() }),
                rhs: DVector::from_iterator(t.len(), change.diagonal.iter().map(|d| d.arg())),
            })
        }
    }
}

/// Solves the vertically stacked systems of all contributing APs.
pub fn estimate_displacement(systems: &[ApSystem]) -> Result<Displacement> {
    estimate_displacement_gated(systems, DISPLACEMENT_COND_MAX)
}

/// [`estimate_displacement`] with an explicit condition limit.
pub fn estimate_displacement_gated(systems: &[ApSystem], max_cond: f64) -> Result<Displacement> {
    let n: usize = systems.iter().map(|s| s.rows.nrows()).sum();
    if n < 2 {
        return Err(Error::UnobservableDisplacement {
            rows: n,
            cond: f64::INFINITY,
        });
    }
    let mut r = DMatrix::<f64>::zeros(n, 2);
    let mut s = DVector::<f64>::zeros(n);
    let mut at = 0;
    for sys in systems {
        let k = sys.rows.nrows();
        r.view_mut((at, 0), (k, 2)).copy_from(&sys.rows);
        s.rows_mut(at, k).copy_from(&sys.rhs);
        at += k;
    }
    if r.iter().chain(s.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite displacement system".into()));
    }
    let svd = r.svd(true, true);
    let cond = condition_number(&svd.singular_values);
    if !(cond < max_cond) {
        return Err(Error::UnobservableDisplacement { rows: n, cond });
    }
    let delta = svd
        .solve(&s, 0.0)
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(Displacement::new(delta[0], delta[1]))
}

/// Ablation: every path's raw phase change is read as displacement, ignoring
/// the clock offset.
pub fn estimate_displacement_assume_same_clock(
    pairs: &[(PathSet, PathWeights, PathWeights)],
    wavelength: f64,
) -> Result<Displacement> {
    let systems: Vec<ApSystem> = pairs
        .iter()
        .filter_map(|(p, a, b)| ap_system(p, a, b, wavelength, ClockModel::AssumeSameClock).ok())
        .collect();
    estimate_displacement(&systems)
}
