//! Transmitter array geometry and steering vectors.
//!
//! Antenna positions live in the transmitter's local planar frame. The
//! steering vector for a path at angle `theta` holds, per antenna, the phase
//! of the extra path length `(p_q - p_0) . r(theta)` relative to antenna 0:
//!
//! ```text
//! a_q(theta) = exp(-j 2 pi ((p_q - p_0) . r(theta)) / lambda),   r(theta) = (cos theta, sin theta)
//! ```
//!
//! For a uniform linear array along x this is the familiar
//! `[1, e^{-j2 pi d cos(theta)/lambda}, e^{-j4 pi d cos(theta)/lambda}, ...]`.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 5 GHz band carrier wavelength in meters.
pub const DEFAULT_WAVELENGTH: f64 = 0.06;

/// Edge length of the 3-antenna circular (equilateral) array, meters.
pub const CIRCULAR_ARRAY_SPACING: f64 = 0.026;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GeometryRepr", into = "GeometryRepr")]
pub struct ArrayGeometry {
    positions: Vec<[f64; 2]>,
    wavelength: f64,
}

#[derive(Serialize, Deserialize)]
struct GeometryRepr {
    antennas: Vec<[f64; 2]>,
    wavelength: f64,
}

impl TryFrom<GeometryRepr> for ArrayGeometry {
    type Error = Error;
    fn try_from(r: GeometryRepr) -> Result<Self> {
        ArrayGeometry::new(r.antennas, r.wavelength)
    }
}

impl From<ArrayGeometry> for GeometryRepr {
    fn from(g: ArrayGeometry) -> Self {
        GeometryRepr {
            antennas: g.positions,
            wavelength: g.wavelength,
        }
    }
}

impl ArrayGeometry {
    pub fn new(positions: Vec<[f64; 2]>, wavelength: f64) -> Result<Self> {
        if positions.len() < 2 {
            return Err(Error::InvalidGeometry(format!(
                "need at least 2 antennas, got {}",
                positions.len()
            )));
        }
        if !(wavelength.is_finite() && wavelength > 0.0) {
            return Err(Error::InvalidGeometry(format!(
                "wavelength must be positive, got {wavelength}"
            )));
        }
        for (i, p) in positions.iter().enumerate() {
            if !(p[0].is_finite() && p[1].is_finite()) {
                return Err(Error::InvalidGeometry(format!("antenna {i} position not finite")));
            }
            for (j, o) in positions[..i].iter().enumerate() {
                if (p[0] - o[0]).hypot(p[1] - o[1]) < 1e-12 {
                    return Err(Error::InvalidGeometry(format!(
                        "antennas {j} and {i} coincide"
                    )));
                }
            }
        }
        Ok(Self {
            positions,
            wavelength,
        })
    }

    /// Uniform linear array along the x axis.
    pub fn linear(count: usize, spacing: f64, wavelength: f64) -> Result<Self> {
        let positions = (0..count).map(|q| [q as f64 * spacing, 0.0]).collect();
        Self::new(positions, wavelength)
    }

    /// Regular polygon array with `spacing` between adjacent antennas.
    /// With three antennas every pair is `spacing` apart.
    pub fn circular(count: usize, spacing: f64, wavelength: f64) -> Result<Self> {
        if count < 2 {
            return Err(Error::InvalidGeometry("need at least 2 antennas".into()));
        }
        let radius = spacing / (2.0 * (PI / count as f64).sin());
        let positions = (0..count)
            .map(|q| {
                let phi = TAU * q as f64 / count as f64;
                [radius * phi.cos(), radius * phi.sin()]
            })
            .collect();
        Self::new(positions, wavelength)
    }

    /// The 3-antenna, 2.6 cm circular array at 6 cm wavelength.
    pub fn default_circular() -> Self {
        Self::circular(3, CIRCULAR_ARRAY_SPACING, DEFAULT_WAVELENGTH)
            .expect("default geometry is valid")
    }

    pub fn antennas(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub fn with_wavelength(&self, wavelength: f64) -> Result<Self> {
        Self::new(self.positions.clone(), wavelength)
    }

    /// True when every antenna lies on one line. Such arrays cannot tell
    /// `theta` from `-theta`, so angle searches are restricted to `[0, pi]`.
    pub fn is_collinear(&self) -> bool {
        let p0 = self.positions[0];
        let scale = self
            .positions
            .iter()
            .map(|p| (p[0] - p0[0]).hypot(p[1] - p0[1]))
            .fold(0.0, f64::max);
        let Some(far) = self
            .positions
            .iter()
            .find(|p| (p[0] - p0[0]).hypot(p[1] - p0[1]) > 0.5 * scale)
        else {
            return true;
        };
        let (ux, uy) = (far[0] - p0[0], far[1] - p0[1]);
        self.positions.iter().all(|p| {
            let cross = ux * (p[1] - p0[1]) - uy * (p[0] - p0[0]);
            cross.abs() <= 1e-9 * scale * scale
        })
    }

    /// Angular search span: full circle for planar arrays, half circle for
    /// collinear ones.
    pub fn angle_span(&self) -> f64 {
        if self.is_collinear() {
            PI
        } else {
            TAU
        }
    }

    pub fn steering_vector(&self, theta: f64) -> DVector<Complex64> {
        let (c, s) = (theta.cos(), theta.sin());
        let p0 = self.positions[0];
        let k = -TAU / self.wavelength;
        DVector::from_iterator(
            self.positions.len(),
            self.positions.iter().map(|p| {
                let proj = (p[0] - p0[0]) * c + (p[1] - p0[1]) * s;
                Complex64::from_polar(1.0, k * proj)
            }),
        )
    }

    /// Steering matrix whose k-th column is `steering_vector(thetas[k])`.
    pub fn steering_matrix(&self, thetas: &[f64]) -> DMatrix<Complex64> {
        let cols: Vec<_> = thetas.iter().map(|&t| self.steering_vector(t)).collect();
        if cols.is_empty() {
            return DMatrix::zeros(self.antennas(), 0);
        }
        DMatrix::from_columns(&cols)
    }
}

/// Unit vector along the direction of departure.
pub fn direction_unit_vector(theta: f64) -> [f64; 2] {
    [theta.cos(), theta.sin()]
}

/// Maps an angle into `[0, 2 pi)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let w = theta.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Maps a phase into `(-pi, pi]`.
pub fn wrap_phase(phi: f64) -> f64 {
    let w = (phi + PI).rem_euclid(TAU) - PI;
    if w <= -PI {
        w + TAU
    } else {
        w
    }
}

/// Smallest absolute angular distance between two angles.
pub fn angular_distance(a: f64, b: f64) -> f64 {
    wrap_phase(a - b).abs()
}
