//! Ground-truth movies: births, drifting Brownian motion on the cylinder,
//! deaths, and what the observation window sees of them.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    wrap_x, Configuration, CylinderGeometry, DynamicsParams, InputEvent, OutputEvent, Point,
    SegmentId, TrajectoryId,
};

/// How each particle's circumferential speed is chosen at birth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SpeedLaw {
    /// Every particle moves at `params.v_x`.
    Constant,
    /// `v_x ~ U(low, high)` per particle.
    Uniform { low: f64, high: f64 },
}

impl SpeedLaw {
    pub const DEFAULT_UNIFORM: SpeedLaw = SpeedLaw::Uniform {
        low: 0.4,
        high: 0.8,
    };

    pub fn label(&self) -> &'static str {
        match self {
            SpeedLaw::Constant => "const",
            SpeedLaw::Uniform { .. } => "uniform",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationConfig {
    pub geometry: CylinderGeometry,
    pub params: DynamicsParams,
    pub speed: SpeedLaw,
    pub delta_t: f64,
    /// Burn-in before the recorded window.
    pub warmup: f64,
    /// Length `T_S` of the recorded window.
    pub duration: f64,
}

impl SimulationConfig {
    pub const DEFAULT_WARMUP: f64 = 20.0 * 60.0;

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.params.validate()?;
        if !(self.delta_t > 0.0 && self.delta_t.is_finite()) {
            return Err(Error::param(format!(
                "delta_t must be > 0, got {}",
                self.delta_t
            )));
        }
        if !(self.warmup >= 0.0 && self.duration > 0.0) {
            return Err(Error::param("need warmup >= 0 and duration > 0"));
        }
        if let SpeedLaw::Uniform { low, high } = self.speed {
            if !(low > 0.0 && high >= low) {
                return Err(Error::param(format!(
                    "bad uniform speed law [{low}, {high}]"
                )));
            }
        }
        Ok(())
    }

    /// Index of the last frame; frames are `0..=n_frames` at times `kΔt`.
    pub fn n_frames(&self) -> usize {
        (self.duration / self.delta_t).round() as usize
    }
}

/// One simulated particle, restricted to the recorded window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: TrajectoryId,
    /// Birth and death times on the window clock (negative when born during
    /// the warm-up).
    pub birth_time: f64,
    pub death_time: f64,
    pub birth_x: f64,
    pub birth_y: f64,
    pub v_x: f64,
    /// Positions at the window frames the particle was alive for.
    pub points: Vec<Point>,
    /// Seam crossings since birth at each point (+1 per crossing at `x = 0`).
    pub laps: Vec<i32>,
}

impl Trajectory {
    pub fn lifetime(&self) -> f64 {
        self.death_time - self.birth_time
    }

    pub fn is_alive(&self, t: f64) -> bool {
        self.birth_time <= t && t < self.death_time
    }
}

/// Exact Gaussian increment of a drifting Brownian coordinate over `dt`.
pub fn brownian_increment<R: Rng + ?Sized>(rng: &mut R, drift: f64, sigma: f64, dt: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    drift * dt + sigma * dt.sqrt() * z
}

/// Time for a drifting Brownian coordinate started at 0 to first exceed
/// `distance`, monitored on a grid of step `dt`.
pub fn first_passage_time<R: Rng + ?Sized>(
    rng: &mut R,
    distance: f64,
    drift: f64,
    sigma: f64,
    dt: f64,
) -> f64 {
    let mut x = 0.0;
    let mut steps = 0u64;
    while x < distance {
        x += brownian_increment(rng, drift, sigma, dt);
        steps += 1;
    }
    steps as f64 * dt
}

/// Simulates the population and keeps every particle alive at some time of
/// the recorded window `[warmup, warmup + duration]`, re-timed to
/// `[0, duration]`.
pub fn simulate<R: Rng + ?Sized>(
    config: &SimulationConfig,
    rng: &mut R,
) -> Result<Vec<Trajectory>> {
    config.validate()?;
    let SimulationConfig {
        geometry,
        params,
        speed,
        delta_t: dt,
        warmup,
        ..
    } = *config;
    let first_frame = (warmup / dt).round() as i64;
    let last_frame = first_frame + config.n_frames() as i64;
    let window_start = first_frame as f64 * dt;
    let horizon = last_frame as f64 * dt;

    let mut out = Vec::new();
    if params.lambda_birth == 0.0 {
        return Ok(out);
    }
    let gaps = Exp::new(params.lambda_birth).map_err(|e| Error::param(e.to_string()))?;
    let lifetimes = if params.tau_d > 0.0 {
        Some(Exp::new(params.tau_d).map_err(|e| Error::param(e.to_string()))?)
    } else {
        None
    };

    let mut birth = 0.0;
    let mut next_id: TrajectoryId = 0;
    loop {
        birth += gaps.sample(rng);
        if birth > horizon {
            break;
        }
        let id = next_id;
        next_id += 1;
        let x0 = -geometry.perimeter * rng.random::<f64>();
        let y0 = geometry.height * rng.random::<f64>();
        let lifetime = lifetimes.map_or(f64::INFINITY, |d| d.sample(rng));
        let v_x = match speed {
            SpeedLaw::Constant => params.v_x,
            SpeedLaw::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
        };
        let death = birth + lifetime;
        if death < window_start {
            continue;
        }

        let k_start = ((birth / dt).ceil() as i64).max(first_frame);
        let k_end = if death.is_finite() {
            ((death / dt).floor() as i64).min(last_frame)
        } else {
            last_frame
        };
        let mut points = Vec::new();
        let mut laps = Vec::new();
        if k_start <= k_end {
            let n = (k_end - k_start + 1) as usize;
            points.reserve(n);
            laps.reserve(n);
            // jump straight from the birth to the first recorded frame
            let lead = k_start as f64 * dt - birth;
            let mut ux = x0 + brownian_increment(rng, v_x, params.sigma_x, lead);
            let mut y = y0 + brownian_increment(rng, params.v_y, params.sigma_y, lead);
            for k in k_start..=k_end {
                if k > k_start {
                    ux += brownian_increment(rng, v_x, params.sigma_x, dt);
                    y += brownian_increment(rng, params.v_y, params.sigma_y, dt);
                }
                let x = wrap_x(ux, &geometry);
                laps.push(((ux - x) / geometry.perimeter).round() as i32);
                points.push(Point {
                    t: (k - first_frame) as f64 * dt,
                    x,
                    y,
                });
            }
        }
        out.push(Trajectory {
            id,
            birth_time: birth - window_start,
            death_time: death - window_start,
            birth_x: x0,
            birth_y: y0,
            v_x,
            points,
            laps,
        });
    }
    Ok(out)
}

/// Number of particles alive at time `t`.
pub fn population_at(trajectories: &[Trajectory], t: f64) -> usize {
    trajectories.iter().filter(|tr| tr.is_alive(t)).count()
}

/// Population averaged over the frames `0..=n_frames`.
pub fn mean_population(trajectories: &[Trajectory], delta_t: f64, n_frames: usize) -> f64 {
    let mut counts = vec![0i64; n_frames + 2];
    for tr in trajectories {
        // frames k with birth <= kΔt < death
        let lo = (tr.birth_time / delta_t).ceil().max(0.0);
        let hi_excl = (tr.death_time / delta_t).ceil().min((n_frames + 1) as f64);
        if lo < hi_excl {
            counts[lo as usize] += 1;
            counts[hi_excl as usize] -= 1;
        }
    }
    let mut running = 0i64;
    let mut total = 0i64;
    for c in counts.iter().take(n_frames + 1) {
        running += c;
        total += running;
    }
    total as f64 / (n_frames + 1) as f64
}

/// A maximal run of consecutive frames of one particle inside the window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub id: SegmentId,
    pub points: Vec<Point>,
}

impl Segment {
    pub fn first(&self) -> &Point {
        &self.points[0]
    }

    pub fn last(&self) -> &Point {
        self.points.last().expect("segments are never empty")
    }
}

/// What the window records during one movie.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedSample {
    pub geometry: CylinderGeometry,
    pub delta_t: f64,
    pub duration: f64,
    pub border_margin: f64,
    pub segments: Vec<Segment>,
    /// Sorted by time, then segment id.
    pub outputs: Vec<OutputEvent>,
    /// Sorted by time, then segment id.
    pub inputs: Vec<InputEvent>,
    /// Segment → generating trajectory. Empty for real data.
    pub true_links: BTreeMap<SegmentId, TrajectoryId>,
}

impl ObservedSample {
    /// Builds events from segments using the border neighbourhoods.
    pub fn from_segments(
        geometry: CylinderGeometry,
        delta_t: f64,
        duration: f64,
        border_margin: f64,
        segments: Vec<Segment>,
        true_links: BTreeMap<SegmentId, TrajectoryId>,
    ) -> Result<Self> {
        if !(border_margin >= 0.0) {
            return Err(Error::param(format!(
                "border margin must be >= 0, got {border_margin}"
            )));
        }
        if segments.iter().any(|s| s.points.is_empty()) {
            return Err(Error::data("empty segment"));
        }
        let mut outputs = Vec::new();
        let mut inputs = Vec::new();
        for seg in &segments {
            let last = seg.last();
            if last.x > -border_margin {
                outputs.push(OutputEvent {
                    t: last.t,
                    y: last.y,
                    segment_id: seg.id,
                });
            }
            let first = seg.first();
            if first.x < -geometry.observed_width + border_margin {
                inputs.push(InputEvent {
                    t: first.t,
                    y: first.y,
                    segment_id: seg.id,
                });
            }
        }
        outputs.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.segment_id.cmp(&b.segment_id)));
        inputs.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.segment_id.cmp(&b.segment_id)));
        Ok(ObservedSample {
            geometry,
            delta_t,
            duration,
            border_margin,
            segments,
            outputs,
            inputs,
            true_links,
        })
    }

    pub fn n_frames(&self) -> usize {
        (self.duration / self.delta_t).round() as usize
    }

    pub fn segment_index(&self) -> HashMap<SegmentId, usize> {
        self.segments
            .iter()
            .enumerate()
            .map(|(k, s)| (s.id, k))
            .collect()
    }

    pub fn output_of_segment(&self) -> HashMap<SegmentId, usize> {
        self.outputs
            .iter()
            .enumerate()
            .map(|(k, o)| (o.segment_id, k))
            .collect()
    }

    pub fn input_of_segment(&self) -> HashMap<SegmentId, usize> {
        self.inputs
            .iter()
            .enumerate()
            .map(|(k, i)| (i.segment_id, k))
            .collect()
    }

    pub fn has_ground_truth(&self) -> bool {
        self.segments
            .iter()
            .all(|s| self.true_links.contains_key(&s.id))
    }
}

/// Cuts trajectories into window segments and derives input/output events.
///
/// A particle that steps out of the window and comes back through the same
/// border without completing a turn keeps its segment: the frames spent
/// outside are simply missing, as after a tracker's gap closing. Each turn
/// around the cylinder starts a new segment.
pub fn observe(
    trajectories: &[Trajectory],
    geometry: &CylinderGeometry,
    delta_t: f64,
    duration: f64,
    border_margin: f64,
) -> Result<ObservedSample> {
    let mut runs: Vec<(f64, TrajectoryId, Vec<Point>)> = Vec::new();
    for tr in trajectories {
        let mut current: Vec<Point> = Vec::new();
        let mut current_lap = None;
        let mut inside = false;
        for (p, &lap) in tr.points.iter().zip(&tr.laps) {
            if !geometry.is_observed(p.x) {
                inside = false;
                continue;
            }
            if !inside && current_lap.is_some_and(|c| c != lap) {
                runs.push((current[0].t, tr.id, std::mem::take(&mut current)));
            }
            inside = true;
            current_lap = Some(lap);
            current.push(*p);
        }
        if !current.is_empty() {
            runs.push((current[0].t, tr.id, current));
        }
    }
    runs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut true_links = BTreeMap::new();
    let segments = runs
        .into_iter()
        .enumerate()
        .map(|(k, (_, tid, points))| {
            let id = k as SegmentId;
            true_links.insert(id, tid);
            Segment { id, points }
        })
        .collect();
    ObservedSample::from_segments(
        *geometry,
        delta_t,
        duration,
        border_margin,
        segments,
        true_links,
    )
}

/// The linking that actually happened: each output is matched to the input of
/// the next segment of the same particle, when that segment starts with one.
pub fn true_configuration(sample: &ObservedSample) -> Result<Configuration> {
    if !sample.has_ground_truth() {
        return Err(Error::data("sample has no ground-truth links"));
    }
    let mut by_trajectory: BTreeMap<TrajectoryId, Vec<&Segment>> = BTreeMap::new();
    for seg in &sample.segments {
        by_trajectory
            .entry(sample.true_links[&seg.id])
            .or_default()
            .push(seg);
    }
    let mut next_segment: HashMap<SegmentId, SegmentId> = HashMap::new();
    for segs in by_trajectory.values_mut() {
        segs.sort_by(|a, b| a.first().t.total_cmp(&b.first().t));
        for w in segs.windows(2) {
            next_segment.insert(w[0].id, w[1].id);
        }
    }
    let input_of = sample.input_of_segment();
    let mut matches = Vec::new();
    for (oi, out) in sample.outputs.iter().enumerate() {
        let Some(next) = next_segment.get(&out.segment_id) else {
            continue;
        };
        if let Some(&ii) = input_of.get(next) {
            if sample.inputs[ii].t > out.t {
                matches.push((oi, ii));
            }
        }
    }
    Configuration::from_matches(sample.outputs.len(), sample.inputs.len(), matches)
}

/// Ground-truth count `N_{l_u}`: particles born less than `l_u` upstream of
/// the exit border whose first exit is recorded as an output.
pub fn counted_arrivals(sample: &ObservedSample, trajectories: &[Trajectory]) -> Result<usize> {
    if !sample.has_ground_truth() {
        return Err(Error::data("sample has no ground-truth links"));
    }
    let by_id: HashMap<TrajectoryId, &Trajectory> =
        trajectories.iter().map(|t| (t.id, t)).collect();
    let seg_index = sample.segment_index();
    let l_u = sample.geometry.hidden_width();
    let mut counted = std::collections::BTreeSet::new();
    for out in &sample.outputs {
        let tid = sample.true_links[&out.segment_id];
        let tr = by_id
            .get(&tid)
            .ok_or_else(|| Error::data(format!("trajectory {tid} missing")))?;
        if tr.birth_x <= -l_u {
            continue;
        }
        let last = sample.segments[seg_index[&out.segment_id]].last();
        let k = tr
            .points
            .iter()
            .position(|p| p.t == last.t)
            .ok_or_else(|| Error::data("segment point not on its trajectory"))?;
        if tr.laps[k] == 0 {
            counted.insert(tid);
        }
    }
    Ok(counted.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn geometry() -> CylinderGeometry {
        CylinderGeometry::from_perimeter(50.0, 30.0, 0.42).unwrap()
    }

    fn params(sigma: f64) -> DynamicsParams {
        DynamicsParams {
            v_x: 0.6,
            v_y: 0.006,
            sigma_x: sigma,
            sigma_y: sigma,
            lambda_birth: 0.03,
            tau_d: 0.005,
            tau_alpha: 0.0,
        }
    }

    fn config(sigma: f64) -> SimulationConfig {
        SimulationConfig {
            geometry: geometry(),
            params: params(sigma),
            speed: SpeedLaw::Constant,
            delta_t: 0.25,
            warmup: 600.0,
            duration: 300.0,
        }
    }

    fn line(id: TrajectoryId, x0: f64, t0: f64, frames: usize, step: f64, y: f64) -> Trajectory {
        // deterministic trajectory sampled at t0 + kΔt, Δt = 1
        let g = geometry();
        let mut points = Vec::new();
        let mut laps = Vec::new();
        for k in 0..frames {
            let u = x0 + step * k as f64;
            let x = wrap_x(u, &g);
            laps.push(((u - x) / g.perimeter).round() as i32);
            points.push(Point {
                t: t0 + k as f64,
                x,
                y,
            });
        }
        Trajectory {
            id,
            birth_time: t0,
            death_time: t0 + frames as f64 - 0.5,
            birth_x: x0,
            birth_y: y,
            v_x: step,
            points,
            laps,
        }
    }

    #[test]
    fn no_births_no_trajectories() {
        let mut c = config(0.2);
        c.params.lambda_birth = 0.0;
        assert!(simulate(&c, &mut rng_from_seed(1)).unwrap().is_empty());
    }

    #[test]
    fn deterministic_drift_steps() {
        let c = config(0.0);
        let trajs = simulate(&c, &mut rng_from_seed(3)).unwrap();
        assert!(!trajs.is_empty());
        for tr in &trajs {
            for w in tr.points.windows(2) {
                let dx = w[1].x - w[0].x;
                if dx > -25.0 {
                    assert!((dx - 0.15).abs() < 1e-9, "{dx}");
                }
            }
        }
    }

    #[test]
    fn invalid_params_rejected() {
        let mut c = config(0.2);
        c.delta_t = 0.0;
        assert!(simulate(&c, &mut rng_from_seed(1)).is_err());
        let mut c = config(0.2);
        c.params.v_x = -1.0;
        assert!(simulate(&c, &mut rng_from_seed(1)).is_err());
    }

    #[test]
    fn hidden_trajectory_has_no_segments() {
        let g = geometry();
        let tr = line(0, -45.0, 0.0, 10, 0.5, 3.0);
        let s = observe(&[tr], &g, 1.0, 20.0, 0.6).unwrap();
        assert!(s.segments.is_empty());
        assert!(true_configuration(&s).unwrap().matches.is_empty());
    }

    #[test]
    fn single_exit() {
        let g = geometry();
        let x0 = -g.observed_width / 2.0;
        let tr = line(0, x0, 0.0, 20, 0.5, 3.0);
        let s = observe(&[tr], &g, 1.0, 30.0, 0.6).unwrap();
        assert_eq!(s.segments.len(), 1);
        assert_eq!(s.outputs.len(), 1);
        assert!(s.inputs.is_empty());
    }

    #[test]
    fn two_rotations_chain() {
        let g = geometry();
        // born mid-window, exits, re-enters twice
        let x0 = -g.observed_width / 2.0;
        let frames = ((2.0 * g.perimeter + g.observed_width / 2.0 + 1.0) / 0.5) as usize;
        let tr = line(7, x0, 0.0, frames, 0.5, 3.0);
        let s = observe(&[tr], &g, 1.0, 400.0, 0.6).unwrap();
        assert_eq!(s.segments.len(), 3);
        let c = true_configuration(&s).unwrap();
        assert_eq!(c.matches.len(), 2);
        c.validate(&s.outputs, &s.inputs).unwrap();
        // matched input of the first pair belongs to the segment whose output
        // forms the second pair
        let (o0, i0) = c.matches[0];
        let (o1, _) = c.matches[1];
        assert!(s.outputs[o0].t < s.inputs[i0].t);
        assert_eq!(s.inputs[i0].segment_id, s.outputs[o1].segment_id);
    }

    #[test]
    fn death_in_hidden_band_leaves_dead_output() {
        let g = geometry();
        let x0 = -g.observed_width / 2.0;
        // survives the first exit, dies halfway through the hidden band
        let frames = ((g.observed_width / 2.0 + g.hidden_width() / 2.0) / 0.5) as usize;
        let dying = line(1, x0, 0.0, frames, 0.5, 10.0);
        let frames = ((g.perimeter + g.observed_width / 2.0 + 2.0) / 0.5) as usize;
        let crossing = line(2, x0, 5.0, frames, 0.5, 20.0);
        let s = observe(&[dying, crossing], &g, 1.0, 400.0, 0.6).unwrap();
        assert_eq!(s.outputs.len(), 3);
        assert_eq!(s.inputs.len(), 1);
        let c = true_configuration(&s).unwrap();
        assert_eq!(c.matches.len(), 1);
        assert_eq!(c.dead_outputs.len(), 2);
        let (o, i) = c.matches[0];
        assert_eq!(s.true_links[&s.outputs[o].segment_id], 2);
        assert_eq!(s.true_links[&s.inputs[i].segment_id], 2);
    }

    #[test]
    fn excursion_through_the_same_border_keeps_the_segment() {
        let g = geometry();
        // exits at 0, steps back in, then leaves for good
        let xs = [-1.0, -0.5, 0.1, -0.2, 0.3, 0.6];
        let mut tr = line(0, -1.0, 0.0, xs.len(), 0.0, 5.0);
        for (k, &u) in xs.iter().enumerate() {
            tr.points[k].x = wrap_x(u, &g);
            tr.laps[k] = if u > 0.0 { 1 } else { 0 };
        }
        let s = observe(&[tr], &g, 1.0, 30.0, 0.6).unwrap();
        assert_eq!(s.segments.len(), 1);
        assert_eq!(s.segments[0].points.len(), 3);
        assert_eq!(s.outputs.len(), 1);
        assert_eq!(s.outputs[0].t, 3.0);
    }

    #[test]
    fn empty_sample_empty_configuration() {
        let s = observe(&[], &geometry(), 0.25, 300.0, 0.45).unwrap();
        let c = true_configuration(&s).unwrap();
        assert_eq!(c, Configuration::empty(0, 0));
    }

    #[test]
    fn missing_links_is_an_error() {
        let g = geometry();
        let tr = line(0, -5.0, 0.0, 20, 0.5, 3.0);
        let mut s = observe(&[tr], &g, 1.0, 30.0, 0.6).unwrap();
        s.true_links.clear();
        assert!(true_configuration(&s).is_err());
    }

    #[test]
    fn simulated_segments_stay_in_window_and_sorted() {
        let c = config(0.2);
        let trajs = simulate(&c, &mut rng_from_seed(11)).unwrap();
        let s = observe(&trajs, &c.geometry, c.delta_t, c.duration, 0.45).unwrap();
        assert!(!s.segments.is_empty());
        for seg in &s.segments {
            for p in &seg.points {
                assert!(p.x >= -c.geometry.observed_width && p.x <= 0.0);
                assert!(p.t >= 0.0 && p.t <= c.duration + 1e-9);
            }
        }
        assert!(s.outputs.windows(2).all(|w| w[0].t <= w[1].t));
        assert!(s.inputs.windows(2).all(|w| w[0].t <= w[1].t));
        true_configuration(&s)
            .unwrap()
            .validate(&s.outputs, &s.inputs)
            .unwrap();
    }

    #[test]
    fn population_average_counts_frames() {
        let mut a = line(0, -1.0, 0.0, 1, 0.0, 0.0);
        a.birth_time = -5.0;
        a.death_time = 2.0; // alive at frames 0,1
        let mut b = a.clone();
        b.birth_time = 0.5;
        b.death_time = 100.0; // alive at frames 1..=3
        let m = mean_population(&[a, b], 1.0, 3);
        assert!((m - 5.0 / 4.0).abs() < 1e-12);
    }
}
