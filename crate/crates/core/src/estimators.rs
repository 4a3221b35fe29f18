//! Estimation of the dynamics from the observed strip alone.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CylinderGeometry, DynamicsParams, SegmentId};
use crate::simulator::{ObservedSample, Segment};
use crate::stats::special::normal_quantile;

/// Default confidence level of the death-rate interval.
pub const DEFAULT_CI_LEVEL: f64 = 0.95;

/// Segments split by the sign of their mean x-displacement.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DirectionClasses {
    pub rightward: Vec<SegmentId>,
    pub leftward: Vec<SegmentId>,
    /// Single-point segments, put in the majority class.
    pub flagged: Vec<SegmentId>,
}

/// Displacement taken the short way round the cylinder.
fn wrapped_dx(dx: f64, perimeter: f64) -> f64 {
    dx - perimeter * (dx / perimeter).round()
}

pub fn classify_direction(segments: &[Segment], geometry: &CylinderGeometry) -> DirectionClasses {
    let mut classes = DirectionClasses::default();
    for seg in segments {
        if seg.points.len() < 2 {
            classes.flagged.push(seg.id);
            continue;
        }
        let total: f64 = seg
            .points
            .windows(2)
            .map(|w| wrapped_dx(w[1].x - w[0].x, geometry.perimeter))
            .sum();
        if total >= 0.0 {
            classes.rightward.push(seg.id);
        } else {
            classes.leftward.push(seg.id);
        }
    }
    let majority = if classes.leftward.len() > classes.rightward.len() {
        &mut classes.leftward
    } else {
        &mut classes.rightward
    };
    majority.extend(classes.flagged.iter().copied());
    majority.sort_unstable();
    classes
}

/// Per-axis drift and diffusion from pooled one-frame increments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftDiffusion {
    pub v_x: f64,
    pub v_y: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub n_increments: usize,
}

/// Maximum-likelihood drift `mean(d)/Δt` and diffusion `var(d)/Δt` over all
/// increments between consecutive frames.
pub fn estimate_drift_diffusion(
    segments: &[Segment],
    delta_t: f64,
    geometry: &CylinderGeometry,
) -> Result<DriftDiffusion> {
    if !(delta_t > 0.0) {
        return Err(Error::param(format!("delta_t must be > 0, got {delta_t}")));
    }
    let mut dx = Vec::new();
    let mut dy = Vec::new();
    for seg in segments {
        for w in seg.points.windows(2) {
            if ((w[1].t - w[0].t) - delta_t).abs() > 1e-6 * delta_t {
                continue;
            }
            dx.push(wrapped_dx(w[1].x - w[0].x, geometry.perimeter));
            dy.push(w[1].y - w[0].y);
        }
    }
    if dx.is_empty() {
        return Err(Error::Estimation {
            estimator: "drift/diffusion",
            reason: "no increments between consecutive frames".into(),
        });
    }
    let moments = |d: &[f64]| {
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        (mean / delta_t, (var / delta_t).sqrt())
    };
    let (v_x, sigma_x) = moments(&dx);
    let (v_y, sigma_y) = moments(&dy);
    Ok(DriftDiffusion {
        v_x,
        v_y,
        sigma_x,
        sigma_y,
        n_increments: dx.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeathRateEstimate {
    pub tau_d: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// `|S_r|`: points in the restricted region.
    pub n_points: usize,
    /// Points of `S_r` that end their segment.
    pub n_deaths: usize,
}

/// Death rate from points of the interior strip `[-l + m, -m]` that end their
/// segment, with a normal-approximation interval.
pub fn estimate_tau_d(
    sample: &ObservedSample,
    border_margin: f64,
    ci_level: f64,
) -> Result<DeathRateEstimate> {
    if !(ci_level > 0.0 && ci_level < 1.0) {
        return Err(Error::param(format!(
            "ci_level must be in (0, 1), got {ci_level}"
        )));
    }
    let dt = sample.delta_t;
    let low = -sample.geometry.observed_width + border_margin;
    let high = -border_margin;
    let last_time = sample.duration - dt + 1e-6 * dt;
    let mut n_points = 0usize;
    let mut n_deaths = 0usize;
    for seg in &sample.segments {
        for (k, p) in seg.points.iter().enumerate() {
            if p.x < low || p.x > high || p.t > last_time {
                continue;
            }
            n_points += 1;
            if k + 1 == seg.points.len() {
                n_deaths += 1;
            }
        }
    }
    if n_points == 0 {
        return Err(Error::Estimation {
            estimator: "tau_d",
            reason: "no observed point in the restricted region".into(),
        });
    }
    let n = n_points as f64;
    let tau_d = n_deaths as f64 / (dt * n);
    let q = normal_quantile(0.5 * (1.0 + ci_level));
    let half = q * (tau_d * (1.0 / dt - tau_d) / n).max(0.0).sqrt();
    Ok(DeathRateEstimate {
        tau_d,
        ci_low: (tau_d - half).max(0.0),
        ci_high: tau_d + half,
        n_points,
        n_deaths,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrivalRateEstimate {
    pub tau_alpha: f64,
    /// Output segments whose first point is an interior birth.
    pub n_born: usize,
    /// Output segments entering through the entry border.
    pub n_crossing: usize,
    /// Output segments already present in the first frame.
    pub n_censored: usize,
    /// Output segments starting in the exit neighbourhood: particles that
    /// stepped back into the window right after leaving it.
    pub n_returned: usize,
    /// Estimated births (reaching the exit) in the whole window, `N_l`.
    pub births_in_window: f64,
    /// Estimated `p̂_{l_e}`.
    pub p_extension: f64,
}

/// Spontaneous-input rate from births observed in the window.
///
/// Particles born within `l_u` upstream of the exit reach it at the same rate
/// as hidden-born particles reach the entry. Those born in the window are
/// counted; those born in the extension `l_e` upstream of the entry are
/// estimated as a fraction `p̂_{l_e}` of the entering segments.
///
/// A segment is an interior birth when its first point lies in
/// `[-l + m, -m]` and is not in the first frame. Births in the two border
/// strips of width `m` cannot be told apart from crossings and are
/// extrapolated from the interior density. Output segments present in the
/// first frame have an unknown origin and are weighted like entering ones.
pub fn estimate_tau_alpha(
    sample: &ObservedSample,
    border_margin: f64,
) -> Result<ArrivalRateEstimate> {
    let geometry = &sample.geometry;
    let l = geometry.observed_width;
    let m = border_margin;
    if !(m >= 0.0 && 2.0 * m < l) {
        return Err(Error::param(format!(
            "border margin {m} leaves no interior in width {l}"
        )));
    }
    let input_of = sample.input_of_segment();
    let seg_index = sample.segment_index();
    let first_frame_end = 0.5 * sample.delta_t;

    let mut births = Vec::new();
    let (mut n_crossing, mut n_censored, mut n_returned) = (0usize, 0usize, 0usize);
    for out in &sample.outputs {
        let seg = &sample.segments[seg_index[&out.segment_id]];
        let first = seg.first();
        if input_of.contains_key(&seg.id) || first.x < -l + m {
            n_crossing += 1;
        } else if first.t < first_frame_end {
            n_censored += 1;
        } else if first.x > -m {
            n_returned += 1;
        } else {
            births.push(first.x);
        }
    }
    let n_born = births.len();
    let n_outputs = n_born + n_crossing;
    if n_outputs == 0 {
        return Err(Error::Estimation {
            estimator: "tau_alpha",
            reason: "no output segment; lengthen the movie".into(),
        });
    }
    // births per unit length, among particles that reach the exit
    let density = n_born as f64 / (l - 2.0 * m);
    let births_within = |x: f64| {
        if x <= m {
            density * x
        } else {
            density * m + births.iter().filter(|&&b| b > -x).count() as f64
        }
    };
    let births_in_window = n_born as f64 + 2.0 * m * density;
    let entering = (n_crossing as f64 - m * density).max(0.0);

    let extension = geometry.extension_width();
    let (numerator, p_extension) = if extension <= 0.0 {
        let direct = births_within(geometry.hidden_width());
        (direct * (1.0 + n_censored as f64 / n_outputs as f64), 0.0)
    } else {
        let p_l = births_in_window / n_outputs as f64;
        let mut rest = extension;
        let mut steps = 0;
        while rest >= l {
            rest -= l;
            steps += 1;
        }
        let mut p = births_within(rest) / n_outputs as f64;
        for _ in 0..steps {
            p = p_l + (1.0 - p_l) * p;
        }
        (births_in_window + p * (entering + n_censored as f64), p)
    };
    Ok(ArrivalRateEstimate {
        tau_alpha: numerator / sample.duration,
        n_born,
        n_crossing,
        n_censored,
        n_returned,
        births_in_window,
        p_extension,
    })
}

/// All estimates from one movie.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    pub drift: DriftDiffusion,
    pub death: DeathRateEstimate,
    pub arrival: ArrivalRateEstimate,
}

impl EstimationReport {
    /// Parameters for the linking costs. The birth rate is not estimated and
    /// is left at zero.
    pub fn params(&self) -> DynamicsParams {
        DynamicsParams {
            v_x: self.drift.v_x,
            v_y: self.drift.v_y,
            sigma_x: self.drift.sigma_x,
            sigma_y: self.drift.sigma_y,
            lambda_birth: 0.0,
            tau_d: self.death.tau_d,
            tau_alpha: self.arrival.tau_alpha,
        }
    }
}

pub fn estimate_all(
    sample: &ObservedSample,
    border_margin: f64,
    ci_level: f64,
) -> Result<EstimationReport> {
    Ok(EstimationReport {
        drift: estimate_drift_diffusion(&sample.segments, sample.delta_t, &sample.geometry)?,
        death: estimate_tau_d(sample, border_margin, ci_level)?,
        arrival: estimate_tau_alpha(sample, border_margin)?,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::model::Point;

    fn geometry() -> CylinderGeometry {
        CylinderGeometry::from_perimeter(50.0, 30.0, 0.42).unwrap()
    }

    fn segment(id: SegmentId, t0: f64, x0: f64, n: usize, step: f64) -> Segment {
        Segment {
            id,
            points: (0..n)
                .map(|k| Point {
                    t: t0 + k as f64,
                    x: x0 + step * k as f64,
                    y: 1.0 + 0.1 * k as f64,
                })
                .collect(),
        }
    }

    fn sample(segments: Vec<Segment>) -> ObservedSample {
        ObservedSample::from_segments(geometry(), 1.0, 100.0, 0.5, segments, BTreeMap::new())
            .unwrap()
    }

    #[test]
    fn classification_by_mean_step() {
        let g = geometry();
        let segs = vec![
            segment(0, 0.0, -10.0, 5, 0.5),
            segment(1, 0.0, -2.0, 5, -0.5),
            segment(2, 0.0, -5.0, 1, 0.0),
            segment(3, 0.0, -8.0, 3, 0.2),
        ];
        let c = classify_direction(&segs, &g);
        assert_eq!(c.rightward, vec![0, 2, 3]);
        assert_eq!(c.leftward, vec![1]);
        assert_eq!(c.flagged, vec![2]);

        let mirrored: Vec<Segment> = segs
            .iter()
            .map(|s| Segment {
                id: s.id,
                points: s
                    .points
                    .iter()
                    .map(|p| Point {
                        x: -g.observed_width - p.x,
                        ..*p
                    })
                    .collect(),
            })
            .collect();
        let m = classify_direction(&mirrored, &g);
        assert_eq!(m.leftward, vec![0, 2, 3]);
        assert_eq!(m.rightward, vec![1]);
    }

    #[test]
    fn deterministic_drift_is_exact() {
        let segs = vec![
            segment(0, 0.0, -14.0, 10, 0.15),
            segment(1, 3.0, -12.0, 20, 0.15),
        ];
        let d = estimate_drift_diffusion(&segs, 1.0, &geometry()).unwrap();
        assert!((d.v_x - 0.15).abs() < 1e-12);
        assert!((d.v_y - 0.1).abs() < 1e-12);
        assert!(d.sigma_x < 1e-7 && d.sigma_y < 1e-7);
        assert_eq!(d.n_increments, 9 + 19);
    }

    #[test]
    fn drift_needs_increments() {
        let segs = vec![segment(0, 0.0, -10.0, 1, 0.0)];
        assert!(estimate_drift_diffusion(&segs, 1.0, &geometry()).is_err());
    }

    #[test]
    fn death_rate_counts_terminal_interior_points() {
        // one segment dies mid-window after 10 interior points, the other
        // leaves through the exit
        let s = sample(vec![
            segment(0, 0.0, -12.0, 10, 0.1),
            segment(1, 0.0, -5.0, 30, 0.5),
        ]);
        let e = estimate_tau_d(&s, 1.0, 0.95).unwrap();
        // interior [-19.99 .., -1]: segment 1 has points at x <= -1, i.e. k <= 8
        assert_eq!(e.n_points, 10 + 9);
        assert_eq!(e.n_deaths, 1);
        assert!((e.tau_d - 1.0 / 19.0).abs() < 1e-12);
        assert!(e.ci_low <= e.tau_d && e.tau_d <= e.ci_high);
    }

    #[test]
    fn immortal_sample_has_zero_death_rate() {
        let s = sample(vec![segment(0, 0.0, -12.0, 40, 0.5)]);
        let e = estimate_tau_d(&s, 1.0, 0.95).unwrap();
        assert_eq!(e.tau_d, 0.0);
        assert_eq!((e.ci_low, e.ci_high), (0.0, 0.0));
    }

    #[test]
    fn death_rate_needs_points() {
        let s = sample(vec![]);
        assert!(estimate_tau_d(&s, 1.0, 0.95).is_err());
        let s = sample(vec![segment(0, 0.0, -12.0, 4, 0.5)]);
        assert!(estimate_tau_d(&s, 1.0, 1.5).is_err());
    }

    #[test]
    fn arrival_rate_counts_births_and_crossings() {
        let g = geometry();
        let l = g.observed_width;
        let segs = vec![
            // born near the exit
            segment(0, 5.0, -3.0, 10, 0.5),
            // born deep in the window
            segment(1, 6.0, -13.0, 40, 0.5),
            // crosses the whole window
            segment(2, 7.0, -l, 50, 0.5),
            // present in the first frame
            segment(3, 0.0, -10.0, 30, 0.5),
            // dies inside: not an output
            segment(4, 2.0, -10.0, 3, 0.5),
            // steps back in right after leaving
            segment(5, 9.0, -0.3, 3, 0.5),
        ];
        let s = sample(segs);
        let e = estimate_tau_alpha(&s, 0.5).unwrap();
        assert_eq!(
            (e.n_born, e.n_crossing, e.n_censored, e.n_returned),
            (2, 1, 1, 1)
        );
        let density = 2.0 / (l - 1.0);
        let born = 2.0 + density;
        assert!((e.births_in_window - born).abs() < 1e-12);
        // l_e - l is about 5.6: only the birth at -3 lies within it
        let rest = g.extension_width() - l;
        assert!(rest > 3.0 && rest < 13.0);
        let p_l = born / 3.0;
        let p = p_l + (1.0 - p_l) * (0.5 * density + 1.0) / 3.0;
        assert!((e.p_extension - p).abs() < 1e-12);
        let entering = 1.0 - 0.5 * density;
        assert!((e.tau_alpha - (born + p * (entering + 1.0)) / 100.0).abs() < 1e-12);
    }

    #[test]
    fn arrival_rate_direct_count_for_wide_windows() {
        // l >= l_u: no extension needed
        let g = CylinderGeometry::new(50.0, 30.0, 30.0).unwrap();
        let segs = vec![
            segment(0, 5.0, -3.0, 10, 0.5),
            segment(1, 5.0, -25.0, 60, 0.5),
        ];
        let s = ObservedSample::from_segments(g, 1.0, 100.0, 0.5, segs, BTreeMap::new()).unwrap();
        let e = estimate_tau_alpha(&s, 0.5).unwrap();
        assert_eq!(e.p_extension, 0.0);
        assert!((e.tau_alpha - (1.0 + 1.0 / 29.0) / 100.0).abs() < 1e-12);
    }

    #[test]
    fn arrival_rate_rejects_wide_margins() {
        let s = sample(vec![segment(0, 5.0, -3.0, 10, 0.5)]);
        assert!(estimate_tau_alpha(&s, 8.0).is_err());
    }

    #[test]
    fn arrival_rate_needs_outputs() {
        let s = sample(vec![segment(0, 5.0, -12.0, 3, 0.1)]);
        assert!(matches!(
            estimate_tau_alpha(&s, 0.5),
            Err(Error::Estimation { .. })
        ));
    }
}
