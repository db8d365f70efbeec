//! Synthetic CSI for a moving transmitter in a static multipath channel.
//!
//! Each packet's CSI at an AP is `A D(offset) F e^{j nu_p} + noise`, optionally
//! quantized to signed 8-bit real/imaginary parts, where `D` carries the
//! displacement phase of every path and `nu_p` is the transmitter/receiver
//! clock phase (linear drift plus a random walk).

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{direction_unit_vector, ArrayGeometry};
use crate::types::{ApId, CsiRecord, Trajectory};

/// Largest frequency offset the WiFi standard tolerates, Hz.
pub const MAX_FREQUENCY_OFFSET: f64 = 200e3;
/// Typical frequency offset, Hz.
pub const TYPICAL_FREQUENCY_OFFSET: f64 = 20e3;
/// CSI reporting interval, seconds.
pub const DEFAULT_PACKET_INTERVAL: f64 = 0.006;
/// Random-walk step of the clock phase, radians per packet.
pub const DEFAULT_PHASE_JITTER: f64 = 0.05;

/// A propagation path: departure angle and complex gain at the reference position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathSpec {
    pub aod: f64,
    #[serde(with = "complex_pair")]
    pub gain: Complex64,
}

/// Clock phase model between transmitter and one receiver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffsetModel {
    pub initial_phase: f64,
    pub frequency_offset: f64,
    pub phase_jitter_std: f64,
}

impl OffsetModel {
    pub const NONE: OffsetModel = OffsetModel {
        initial_phase: 0.0,
        frequency_offset: 0.0,
        phase_jitter_std: 0.0,
    };

    pub fn validate(&self, field: &str) -> Result<()> {
        if !(self.frequency_offset.is_finite()
            && self.frequency_offset.abs() <= MAX_FREQUENCY_OFFSET)
        {
            return Err(Error::config(
                format!("{field}.frequency_offset"),
                format!("|offset| must be <= {MAX_FREQUENCY_OFFSET} Hz"),
            ));
        }
        if !(self.phase_jitter_std.is_finite() && self.phase_jitter_std >= 0.0) {
            return Err(Error::config(
                format!("{field}.phase_jitter_std"),
                "must be finite and non-negative",
            ));
        }
        if !self.initial_phase.is_finite() {
            return Err(Error::config(format!("{field}.initial_phase"), "must be finite"));
        }
        Ok(())
    }

    /// Unwrapped deterministic clock phase of packet `p`.
    pub fn deterministic_phase(&self, packet: u64, interval: f64) -> f64 {
        self.initial_phase + TAU * self.frequency_offset * packet as f64 * interval
    }

    /// The deterministic phase reduced modulo one cycle before scaling, which
    /// keeps trigonometric evaluation accurate for long streams.
    fn reduced_phase(&self, packet: u64, interval: f64) -> f64 {
        let cycles = self.frequency_offset * interval * packet as f64;
        self.initial_phase + TAU * (cycles - cycles.floor())
    }
}

/// Slow sinusoidal modulation of path magnitudes; phases are untouched.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeDrift {
    /// Relative modulation depth in `[0, 1)`.
    pub depth: f64,
    /// Period of the first path's modulation, seconds. Path `k` uses
    /// `period / (1 + k/2)` so paths never modulate in lockstep.
    pub period: f64,
}

impl AmplitudeDrift {
    fn factor(&self, path: usize, t: f64) -> f64 {
        let freq = (1.0 + 0.5 * path as f64) / self.period;
        1.0 + self.depth * (TAU * freq * t + 0.5 * TAU * path as f64 / 3.0).sin()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApChannel {
    pub id: ApId,
    pub paths: Vec<PathSpec>,
    pub offset: OffsetModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub geometry: ArrayGeometry,
    pub aps: Vec<ApChannel>,
    #[serde(default = "default_interval")]
    pub packet_interval: f64,
    /// Per-packet SNR in dB; `inf` disables noise.
    pub snr_db: f64,
    pub quantize: bool,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude_drift: Option<AmplitudeDrift>,
}

fn default_interval() -> f64 {
    DEFAULT_PACKET_INTERVAL
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.packet_interval.is_finite() && self.packet_interval > 0.0) {
            return Err(Error::config("sim.packet_interval", "must be positive"));
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(Error::config("sim.snr_db", "must be finite or +inf"));
        }
        if self.aps.is_empty() {
            return Err(Error::config("sim.aps", "at least one AP required"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (i, ap) in self.aps.iter().enumerate() {
            if !seen.insert(ap.id) {
                return Err(Error::config(format!("sim.aps[{i}].id"), format!("duplicate AP id {}", ap.id)));
            }
            if ap.paths.is_empty() {
                return Err(Error::config(format!("sim.aps[{i}].paths"), "need at least one path"));
            }
            for (k, p) in ap.paths.iter().enumerate() {
                if !p.aod.is_finite() {
                    return Err(Error::config(format!("sim.aps[{i}].paths[{k}].aod"), "must be finite"));
                }
                if !(p.gain.norm() > 0.0 && p.gain.norm().is_finite()) {
                    return Err(Error::config(format!("sim.aps[{i}].paths[{k}].gain"), "must be nonzero"));
                }
            }
            ap.offset.validate(&format!("sim.aps[{i}].offset"))?;
        }
        if let Some(d) = &self.amplitude_drift {
            if !(0.0..1.0).contains(&d.depth) || !(d.period.is_finite() && d.period > 0.0) {
                return Err(Error::config("sim.amplitude_drift", "depth in [0,1), period > 0"));
            }
        }
        Ok(())
    }

    /// Turns off noise, quantization, clock offsets and drift.
    pub fn ideal(mut self) -> Self {
        self.snr_db = f64::INFINITY;
        self.quantize = false;
        self.amplitude_drift = None;
        for ap in &mut self.aps {
            ap.offset = OffsetModel::NONE;
        }
        self
    }

    pub fn ap_ids(&self) -> Vec<ApId> {
        self.aps.iter().map(|a| a.id).collect()
    }
}

/// Noise-free channel `A D F` for a transmitter displaced by `offset` from the
/// reference position.
pub fn channel_at(paths: &[PathSpec], geometry: &ArrayGeometry, offset: [f64; 2]) -> DVector<Complex64> {
    let k = -TAU / geometry.wavelength();
    let mut h = DVector::zeros(geometry.antennas());
    for p in paths {
        let r = direction_unit_vector(p.aod);
        let shift = Complex64::from_polar(1.0, k * (r[0] * offset[0] + r[1] * offset[1]));
        h += geometry.steering_vector(p.aod) * (p.gain * shift);
    }
    h
}

/// Multiplies every antenna by the common clock phase `e^{j nu}`.
pub fn apply_offset(h: &DVector<Complex64>, nu: f64) -> DVector<Complex64> {
    h * Complex64::from_polar(1.0, nu)
}

/// Per-AP clock phase generator: deterministic drift plus random walk.
#[derive(Debug, Clone)]
pub struct OffsetProcess {
    model: OffsetModel,
    interval: f64,
    walk: f64,
}

impl OffsetProcess {
    pub fn new(model: OffsetModel, interval: f64) -> Self {
        Self {
            model,
            interval,
            walk: 0.0,
        }
    }

    /// Phase of packet `p`; call once per packet in order.
    pub fn next_phase<R: Rng>(&mut self, packet: u64, rng: &mut R) -> f64 {
        if packet > 0 && self.model.phase_jitter_std > 0.0 {
            let step: f64 = rng.sample(StandardNormal);
            self.walk += self.model.phase_jitter_std * step;
        }
        self.model.reduced_phase(packet, self.interval) + self.walk
    }
}

/// Adds circular complex Gaussian noise at `snr_db` (relative to the mean
/// per-antenna power of `h`) and optionally quantizes to signed 8-bit parts.
pub fn add_noise_and_quantize<R: Rng>(
    h: &DVector<Complex64>,
    snr_db: f64,
    quantize: bool,
    rng: &mut R,
) -> DVector<Complex64> {
    let mut out = h.clone();
    if snr_db.is_finite() {
        let power = h.iter().map(|z| z.norm_sqr()).sum::<f64>() / h.len() as f64;
        let sigma = (power / 10f64.powf(snr_db / 10.0) / 2.0).sqrt();
        for z in out.iter_mut() {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *z += Complex64::new(sigma * re, sigma * im);
        }
    }
    if quantize {
        quantize_8bit(&mut out);
    }
    out
}

/// Scales so the largest real or imaginary magnitude maps to 127, rounds, and
/// scales back.
pub fn quantize_8bit(v: &mut DVector<Complex64>) {
    let peak = v.iter().map(|z| z.re.abs().max(z.im.abs())).fold(0.0, f64::max);
    if peak == 0.0 || !peak.is_finite() {
        return;
    }
    let step = peak / 127.0;
    let q = |x: f64| (x / step).round().clamp(-128.0, 127.0) * step;
    for z in v.iter_mut() {
        *z = Complex64::new(q(z.re), q(z.im));
    }
}

/// Simulator output: one record stream per AP and the ground-truth
/// trajectory sampled at packet times.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub records: BTreeMap<ApId, Vec<CsiRecord>>,
    pub truth: Trajectory,
}

impl Simulation {
    /// All records, ordered by packet then AP.
    pub fn interleaved(&self) -> Vec<CsiRecord> {
        let mut all: Vec<CsiRecord> = self.records.values().flatten().cloned().collect();
        all.sort_by(|a, b| a.packet_index.cmp(&b.packet_index).then(a.ap.cmp(&b.ap)));
        all
    }
}

/// Resamples waypoints onto the packet grid starting at the first waypoint.
pub fn packet_grid(waypoints: &Trajectory, interval: f64) -> Result<Trajectory> {
    let pts = waypoints.points();
    let (Some(first), Some(last)) = (pts.first(), pts.last()) else {
        return Err(Error::InvalidInput("empty waypoint list".into()));
    };
    let count = ((last.t - first.t) / interval + 1e-9).floor() as u64 + 1;
    waypoints.resample((0..count).map(|p| first.t + p as f64 * interval))
}

pub fn simulate_trajectory(config: &SimConfig, waypoints: &Trajectory) -> Result<Simulation> {
    config.validate()?;
    let truth = packet_grid(waypoints, config.packet_interval)?;
    let origin = truth.points()[0];
    let mut records = BTreeMap::new();
    for ap in &config.aps {
        let mut rng = ap_rng(config.seed, ap.id);
        let mut clock = OffsetProcess::new(ap.offset, config.packet_interval);
        let mut stream = Vec::with_capacity(truth.len());
        for (p, pt) in truth.points().iter().enumerate() {
            let p = p as u64;
            let offset = [pt.x - origin.x, pt.y - origin.y];
            let paths: Vec<PathSpec> = match &config.amplitude_drift {
                Some(d) => ap
                    .paths
                    .iter()
                    .enumerate()
                    .map(|(k, s)| PathSpec {
                        aod: s.aod,
                        gain: s.gain * d.factor(k, pt.t - origin.t),
                    })
                    .collect(),
                None => ap.paths.clone(),
            };
            let h = channel_at(&paths, &config.geometry, offset);
            let nu = clock.next_phase(p, &mut rng);
            let h = add_noise_and_quantize(&apply_offset(&h, nu), config.snr_db, config.quantize, &mut rng);
            stream.push(CsiRecord {
                ap: ap.id,
                packet_index: p,
                timestamp: pt.t,
                csi: h.iter().copied().collect(),
            });
        }
        records.insert(ap.id, stream);
    }
    Ok(Simulation { records, truth })
}

/// Independent, reproducible RNG stream per AP.
pub fn ap_rng(seed: u64, ap: ApId) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(ap.0 as u64);
    rng
}

mod complex_pair {
    use num_complex::Complex64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(z: &Complex64, s: S) -> Result<S::Ok, S::Error> {
        [z.re, z.im].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Complex64, D::Error> {
        let [re, im] = <[f64; 2]>::deserialize(d)?;
        Ok(Complex64::new(re, im))
    }
}
