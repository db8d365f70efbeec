//! Streaming trajectory reconstruction.
//!
//! For every packet the tracker re-estimates each AP's paths from the packets
//! of the last `window_seconds`, weights the previous and current packet
//! against that same path set, turns the weight changes into offset-free
//! equations and integrates the stacked least-squares displacement.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::aod::{AodConfig, MusicEstimator};
use crate::displacement::{
    ap_system, estimate_displacement_gated, path_weights_gated, ApSystem, ClockModel, ConditionGates,
};
use crate::error::{Error, Result};
use crate::geometry::{angular_distance, ArrayGeometry};
use crate::io::PacketGroup;
use crate::types::{ApId, CsiRecord, Displacement, PathSet, Trajectory};

/// Which packets feed the angle estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AodMode {
    /// All packets of the trailing window.
    #[default]
    Window,
    /// Only the current packet (ablation).
    SinglePacket,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    #[serde(flatten)]
    pub aod: AodConfig,
    /// Re-estimate paths every `stride` packets.
    pub stride: usize,
    pub clock_model: ClockModel,
    pub aod_mode: AodMode,
    pub origin: [f64; 2],
    #[serde(flatten)]
    pub gates: ConditionGates,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            aod: AodConfig::default(),
            stride: 1,
            clock_model: ClockModel::PathDifference,
            aod_mode: AodMode::Window,
            origin: [0.0, 0.0],
            gates: ConditionGates::default(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self, antennas: usize) -> Result<()> {
        self.aod.validate(antennas)?;
        if self.stride == 0 {
            return Err(Error::config("tracker.stride", "must be at least 1"));
        }
        if !(self.origin[0].is_finite() && self.origin[1].is_finite()) {
            return Err(Error::config("tracker.origin", "must be finite"));
        }
        self.gates.validate()?;
        Ok(())
    }

    fn min_packets(&self) -> usize {
        match self.aod_mode {
            AodMode::Window => self.aod.min_packets,
            AodMode::SinglePacket => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleQuality {
    Ok,
    /// Too few usable equations; position carried over.
    Unobservable,
    /// Stream ended before the windows filled; position carried over.
    Warmup,
}

/// One trajectory update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackStep {
    pub packet_index: u64,
    pub timestamp: f64,
    pub displacement: Option<Displacement>,
    pub quality: SampleQuality,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackStats {
    pub accepted: usize,
    pub unobservable: usize,
    pub warmup: usize,
    /// AP contributions skipped because a path weight vanished or fewer than
    /// two paths remained.
    pub weak_paths: usize,
    /// AP contributions skipped because the steering matrix was ill-conditioned.
    pub degenerate_steering: usize,
    /// Path estimates whose spectrum had fewer peaks than paths.
    pub unresolved_paths: usize,
}

#[derive(Debug, Clone, Default)]
struct ApState {
    window: VecDeque<CsiRecord>,
    paths: Option<PathSet>,
    since_estimate: usize,
}

/// Relabels `current` so each path lines up with the closest path of
/// `previous`, minimizing the total angular distance over all permutations.
pub fn path_continuity(previous: &PathSet, current: &PathSet) -> PathSet {
    let l = current.len();
    if l != previous.len() || l < 2 {
        return current.clone();
    }
    let cost = |perm: &[usize]| -> f64 {
        perm.iter()
            .enumerate()
            .map(|(i, &j)| angular_distance(previous.aods()[i], current.aods()[j]))
            .sum()
    };
    let mut best: Vec<usize> = (0..l).collect();
    let mut best_cost = cost(&best);
    for_each_permutation(l, &mut |perm| {
        let c = cost(perm);
        if c < best_cost {
            best_cost = c;
            best = perm.to_vec();
        }
    });
    current.permuted(&best)
}

fn for_each_permutation(n: usize, f: &mut impl FnMut(&[usize])) {
    fn go(k: usize, perm: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        if k == perm.len() {
            f(perm);
            return;
        }
        for i in k..perm.len() {
            perm.swap(k, i);
            go(k + 1, perm, f);
            perm.swap(k, i);
        }
    }
    let mut perm: Vec<usize> = (0..n).collect();
    go(0, &mut perm, f);
}

#[derive(Debug, Clone)]
pub struct Tracker {
    config: TrackerConfig,
    music: MusicEstimator,
    aps: BTreeMap<ApId, ApState>,
    /// Groups received before every AP window filled.
    pending: Vec<PacketGroup>,
    previous: Option<PacketGroup>,
    warm: bool,
    position: [f64; 2],
    trajectory: Trajectory,
    quality: Vec<SampleQuality>,
    stats: TrackStats,
}

impl Tracker {
    pub fn new(geometry: ArrayGeometry, config: TrackerConfig) -> Result<Self> {
        config.validate(geometry.antennas())?;
        Ok(Self {
            music: MusicEstimator::new(geometry, config.aod.grid_step),
            config,
            aps: BTreeMap::new(),
            pending: Vec::new(),
            previous: None,
            warm: false,
            position: config.origin,
            trajectory: Trajectory::new(),
            quality: Vec::new(),
            stats: TrackStats::default(),
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.trajectory
    }

    /// Quality of each trajectory point; the origin counts as `Ok`.
    pub fn quality(&self) -> &[SampleQuality] {
        &self.quality
    }

    pub fn stats(&self) -> TrackStats {
        self.stats
    }

    pub fn position(&self) -> [f64; 2] {
        self.position
    }

    pub fn is_warm(&self) -> bool {
        self.warm
    }

    pub fn current_paths(&self, ap: ApId) -> Option<&PathSet> {
        self.aps.get(&ap).and_then(|s| s.paths.as_ref())
    }

    /// Feeds the records of one packet. Returns the trajectory updates this
    /// packet produced: none while warming up, the whole backlog once every
    /// window fills, one per packet afterwards.
    pub fn ingest(&mut self, group: PacketGroup) -> Result<Vec<TrackStep>> {
        let last = self
            .previous
            .as_ref()
            .or(self.pending.last())
            .map(|g| g.packet_index);
        if let Some(last) = last {
            if group.packet_index <= last {
                return Err(Error::StreamOrder {
                    last,
                    got: group.packet_index,
                });
            }
        }
        if group.records.is_empty() {
            return Ok(Vec::new());
        }
        let antennas = self.music.geometry().antennas();
        for r in group.records.values() {
            if r.csi.len() != antennas {
                return Err(Error::InvalidInput(format!(
                    "AP {} packet {} has {} antennas, geometry has {antennas}",
                    r.ap,
                    r.packet_index,
                    r.csi.len()
                )));
            }
        }
        if self.trajectory.is_empty() {
            self.trajectory
                .push(group.timestamp(), self.position[0], self.position[1])?;
            self.quality.push(SampleQuality::Ok);
        }
        self.push_window(&group);

        if !self.warm {
            self.pending.push(group);
            if !self.windows_full() {
                return Ok(Vec::new());
            }
            self.warm = true;
            let backlog = std::mem::take(&mut self.pending);
            self.refresh_paths(true)?;
            let mut steps = Vec::with_capacity(backlog.len());
            let mut iter = backlog.into_iter();
            let mut prev = iter.next().expect("pending holds the current group");
            for cur in iter {
                steps.push(self.step(&prev, &cur)?);
                prev = cur;
            }
            self.previous = Some(prev);
            return Ok(steps);
        }

        self.refresh_paths(false)?;
        let prev = self.previous.take().expect("warm tracker has a previous packet");
        let step = self.step(&prev, &group)?;
        self.previous = Some(group);
        Ok(vec![step])
    }

    /// Flushes a stream that ended before warming up: remaining packets are
    /// appended with the position carried over.
    pub fn finish(&mut self) -> Result<Vec<TrackStep>> {
        let backlog = std::mem::take(&mut self.pending);
        let mut steps = Vec::new();
        for g in backlog.into_iter().skip(1) {
            let t = g.timestamp();
            self.trajectory.push(t, self.position[0], self.position[1])?;
            self.quality.push(SampleQuality::Warmup);
            self.stats.warmup += 1;
            steps.push(TrackStep {
                packet_index: g.packet_index,
                timestamp: t,
                displacement: None,
                quality: SampleQuality::Warmup,
            });
            self.previous = Some(g);
        }
        Ok(steps)
    }

    fn push_window(&mut self, group: &PacketGroup) {
        let now = group.timestamp();
        let horizon = now - self.config.aod.window_seconds;
        let single = self.config.aod_mode == AodMode::SinglePacket;
        for r in group.records.values() {
            let state = self.aps.entry(r.ap).or_default();
            if single {
                state.window.clear();
            }
            state.window.push_back(r.clone());
        }
        for state in self.aps.values_mut() {
            while state.window.front().is_some_and(|r| r.timestamp < horizon) {
                state.window.pop_front();
            }
            if single && state.window.back().is_some_and(|r| r.packet_index != group.packet_index) {
                state.window.clear();
            }
        }
    }

    fn windows_full(&self) -> bool {
        let need = self.config.min_packets();
        !self.aps.is_empty() && self.aps.values().all(|s| s.window.len() >= need)
    }

    fn refresh_paths(&mut self, force: bool) -> Result<()> {
        let need = self.config.min_packets();
        for state in self.aps.values_mut() {
            state.since_estimate += 1;
            let due = force || state.paths.is_none() || state.since_estimate >= self.config.stride;
            if !due || state.window.len() < need {
                continue;
            }
            let records = state.window.make_contiguous();
            match self.music.estimate(records, &self.config.aod) {
                Ok(set) => {
                    if !set.resolved {
                        self.stats.unresolved_paths += 1;
                    }
                    let set = match &state.paths {
                        Some(prev) => path_continuity(prev, &set),
                        None => set,
                    };
                    state.paths = Some(set);
                    state.since_estimate = 0;
                }
                Err(Error::InvalidInput(_)) | Err(Error::WindowUnderfull { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }

    fn step(&mut self, prev: &PacketGroup, cur: &PacketGroup) -> Result<TrackStep> {
        let wavelength = self.music.geometry().wavelength();
        let mut systems: Vec<ApSystem> = Vec::new();
        for (ap, r2) in &cur.records {
            let Some(r1) = prev.records.get(ap) else { continue };
            if r2.packet_index != r1.packet_index + 1 {
                continue;
            }
            let Some(paths) = self.aps.get(ap).and_then(|s| s.paths.as_ref()) else {
                continue;
            };
            let gate = self.config.gates.steering_cond_max;
            let weights = path_weights_gated(&r1.csi, r1.packet_index, paths, gate)
                .and_then(|w1| Ok((w1, path_weights_gated(&r2.csi, r2.packet_index, paths, gate)?)));
            let (w1, w2) = match weights {
                Ok(w) => w,
                Err(Error::DegenerateGeometry { .. }) => {
                    self.stats.degenerate_steering += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            match ap_system(paths, &w1, &w2, wavelength, self.config.clock_model) {
                Ok(sys) => systems.push(sys),
                Err(Error::WeakPath { .. }) | Err(Error::InsufficientPaths(_)) => self.stats.weak_paths += 1,
                Err(e) => return Err(e),
            }
        }
        let t = cur.timestamp();
        let (displacement, quality) = match estimate_displacement_gated(&systems, self.config.gates.displacement_cond_max) {
            Ok(d) => {
                self.position[0] += d.dx;
                self.position[1] += d.dy;
                self.stats.accepted += 1;
                (Some(d), SampleQuality::Ok)
            }
            Err(Error::UnobservableDisplacement { .. }) | Err(Error::InvalidInput(_)) => {
                self.stats.unobservable += 1;
                (None, SampleQuality::Unobservable)
            }
            Err(e) => return Err(e),
        };
        self.trajectory.push(t, self.position[0], self.position[1])?;
        self.quality.push(quality);
        Ok(TrackStep {
            packet_index: cur.packet_index,
            timestamp: t,
            displacement,
            quality,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrackOutput {
    pub trajectory: Trajectory,
    pub quality: Vec<SampleQuality>,
    pub steps: Vec<TrackStep>,
    pub stats: TrackStats,
}

/// Runs a tracker over a complete, paired stream.
pub fn track(
    geometry: &ArrayGeometry,
    config: &TrackerConfig,
    groups: impl IntoIterator<Item = PacketGroup>,
) -> Result<TrackOutput> {
    let mut tracker = Tracker::new(geometry.clone(), *config)?;
    let mut steps = Vec::new();
    for g in groups {
        steps.extend(tracker.ingest(g)?);
    }
    steps.extend(tracker.finish()?);
    Ok(TrackOutput {
        trajectory: tracker.trajectory.clone(),
        quality: tracker.quality.clone(),
        steps,
        stats: tracker.stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::pair_streams;
    use crate::sim::{simulate_trajectory, ApChannel, OffsetModel, PathSpec, SimConfig};
    use crate::types::TrajectoryPoint;
    use num_complex::Complex64;
    use std::f64::consts::TAU;

    fn set(aods: &[f64]) -> PathSet {
        PathSet::new(ApId(0), aods, &ArrayGeometry::default_circular())
    }

    #[test]
    fn continuity_identity_and_reversal() {
        let prev = set(&[0.5, 2.0, 4.0]);
        assert_eq!(path_continuity(&prev, &prev).aods(), prev.aods());
        let rev = set(&[4.0, 2.0, 0.5]);
        assert_eq!(path_continuity(&prev, &rev).aods(), prev.aods());
    }

    #[test]
    fn continuity_handles_wraparound() {
        let prev = set(&[0.05, 3.0]);
        let cur = set(&[3.02, TAU - 0.02]);
        let out = path_continuity(&prev, &cur);
        assert!((out.aods()[0] - (TAU - 0.02)).abs() < 1e-12);
    }

    #[test]
    fn slowly_rotating_labels_stay_stable() {
        let mut labels = set(&[1.0, 2.5]);
        for w in 1..=100 {
            let drift = 0.02 * w as f64;
            // Estimator output is sorted, so labels swap once path 1 wraps past 2 pi.
            let mut sorted = [1.0 + drift, (2.5 + 2.0 * drift) % TAU];
            sorted.sort_by(f64::total_cmp);
            labels = path_continuity(&labels, &set(&sorted));
            assert!(angular_distance(labels.aods()[0], 1.0 + drift) < 1e-9, "window {w}");
            assert!(angular_distance(labels.aods()[1], 2.5 + 2.0 * drift) < 1e-9, "window {w}");
        }
    }

    fn four_ap_config(offsets: bool) -> SimConfig {
        let specs = [(0.6, 2.4), (2.3, 4.0), (3.9, 0.9), (5.4, 3.1)];
        SimConfig {
            geometry: ArrayGeometry::default_circular(),
            aps: specs
                .iter()
                .enumerate()
                .map(|(i, &(a, b))| ApChannel {
                    id: ApId(i as u32),
                    paths: vec![
                        PathSpec { aod: a, gain: Complex64::new(1.0, 0.1 * i as f64) },
                        PathSpec { aod: b, gain: Complex64::new(0.4, -0.3) },
                    ],
                    offset: if offsets {
                        OffsetModel { initial_phase: i as f64, frequency_offset: 19_000.0 + 700.0 * i as f64, phase_jitter_std: 0.05 }
                    } else {
                        OffsetModel::NONE
                    },
                })
                .collect(),
            packet_interval: 0.006,
            snr_db: f64::INFINITY,
            quantize: false,
            seed: 17,
            amplitude_drift: None,
        }
    }

    fn line(n: usize, v: [f64; 2]) -> Trajectory {
        Trajectory::from_points(
            (0..n)
                .map(|p| TrajectoryPoint { t: p as f64 * 0.006, x: v[0] * p as f64, y: v[1] * p as f64 })
                .collect(),
        )
        .unwrap()
    }

    fn run(cfg: &SimConfig, truth: &Trajectory, tc: TrackerConfig) -> TrackOutput {
        let sim = simulate_trajectory(cfg, truth).unwrap();
        let groups = pair_streams(&cfg.ap_ids(), sim.interleaved());
        track(&cfg.geometry, &tc, groups).unwrap()
    }

    #[test]
    fn stationary_noiseless_stays_at_origin() {
        let cfg = four_ap_config(false);
        let out = run(&cfg, &line(60, [0.0, 0.0]), TrackerConfig::default());
        assert_eq!(out.trajectory.len(), 60);
        for p in out.trajectory.points() {
            assert_eq!((p.x, p.y), (0.0, 0.0));
        }
    }

    #[test]
    fn straight_line_recovered_with_offsets() {
        let cfg = four_ap_config(true);
        let truth = line(120, [0.0008, -0.0005]);
        let out = run(&cfg, &truth, TrackerConfig::default());
        assert_eq!(out.stats.accepted, 119);
        for (e, t) in out.trajectory.points().iter().zip(truth.points()) {
            assert!((e.x - t.x).hypot(e.y - t.y) < 1e-6, "{e:?} vs {t:?}");
        }
    }

    #[test]
    fn configured_gates_apply() {
        let cfg = four_ap_config(true);
        let truth = line(40, [0.001, 0.0]);
        let tight = TrackerConfig {
            gates: ConditionGates {
                displacement_cond_max: 1.0,
                ..ConditionGates::default()
            },
            ..TrackerConfig::default()
        };
        let out = run(&cfg, &truth, tight);
        assert_eq!(out.stats.accepted, 0);
        assert_eq!(out.stats.unobservable, 39);
        let bad = TrackerConfig {
            gates: ConditionGates {
                steering_cond_max: 0.5,
                ..ConditionGates::default()
            },
            ..TrackerConfig::default()
        };
        assert!(matches!(bad.validate(3), Err(Error::Config { .. })));
    }

    #[test]
    fn telescoping_and_determinism() {
        let cfg = four_ap_config(true);
        let truth = line(80, [0.001, 0.0003]);
        let a = run(&cfg, &truth, TrackerConfig::default());
        let b = run(&cfg, &truth, TrackerConfig::default());
        assert_eq!(a.trajectory, b.trajectory);
        let mut sum = [0.0, 0.0];
        for s in &a.steps {
            if let Some(d) = s.displacement {
                sum[0] += d.dx;
                sum[1] += d.dy;
            }
        }
        let last = a.trajectory.points().last().unwrap();
        assert_eq!([last.x, last.y], sum);
    }

    #[test]
    fn silent_ap_is_tolerated() {
        let mut cfg = four_ap_config(true);
        let truth = line(100, [0.0006, 0.0009]);
        let sim = simulate_trajectory(&cfg, &truth).unwrap();
        let records: Vec<_> = sim.interleaved().into_iter().filter(|r| r.ap != ApId(2)).collect();
        cfg.aps.retain(|a| a.id != ApId(2));
        let groups = pair_streams(&[ApId(0), ApId(1), ApId(2), ApId(3)], records);
        let out = track(&cfg.geometry, &TrackerConfig::default(), groups).unwrap();
        assert_eq!(out.stats.accepted, 99);
        let (e, t) = (out.trajectory.points().last().unwrap(), truth.points().last().unwrap());
        assert!((e.x - t.x).hypot(e.y - t.y) < 1e-6);
    }

    #[test]
    fn single_ap_is_flagged_not_moved() {
        let mut cfg = four_ap_config(true);
        cfg.aps.truncate(1);
        let out = run(&cfg, &line(50, [0.001, 0.0]), TrackerConfig::default());
        assert_eq!(out.stats.accepted, 0);
        assert_eq!(out.stats.unobservable, 49);
        assert!(out.quality[1..].iter().all(|q| *q == SampleQuality::Unobservable));
        assert!(out.trajectory.points().iter().all(|p| p.x == 0.0 && p.y == 0.0));
    }

    #[test]
    fn short_stream_never_warms() {
        let cfg = four_ap_config(true);
        let out = run(&cfg, &line(10, [0.001, 0.0]), TrackerConfig::default());
        assert_eq!(out.trajectory.len(), 10);
        assert_eq!(out.stats.warmup, 9);
    }

    #[test]
    fn out_of_order_packet_rejected() {
        let cfg = four_ap_config(false);
        let sim = simulate_trajectory(&cfg, &line(5, [0.0, 0.0])).unwrap();
        let groups = pair_streams(&cfg.ap_ids(), sim.interleaved());
        let mut t = Tracker::new(cfg.geometry.clone(), TrackerConfig::default()).unwrap();
        t.ingest(groups[3].clone()).unwrap();
        assert!(matches!(t.ingest(groups[1].clone()), Err(Error::StreamOrder { last: 3, got: 1 })));
    }

    #[test]
    fn stride_reuses_paths() {
        let cfg = four_ap_config(true);
        let truth = line(100, [0.0007, 0.0002]);
        let tc = TrackerConfig { stride: 10, ..TrackerConfig::default() };
        let out = run(&cfg, &truth, tc);
        let (e, t) = (out.trajectory.points().last().unwrap(), truth.points().last().unwrap());
        assert!((e.x - t.x).hypot(e.y - t.y) < 1e-6);
    }
}
