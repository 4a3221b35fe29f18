//! Domain types shared by every stage of the pipeline.
//!
//! Coordinates live on the unwrapped cylinder: `x ∈ (-L, 0]` runs around the
//! circumference and wraps at the seam, `y` runs along the axis and is not
//! periodic. The hidden band is `[-L, -l]`, the observed window `[-l, 0]`.
//! Particles drift towards `+x`: they leave the window through `x = 0` and come
//! back, after a trip through the hidden band, through `x = -l`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Opaque identifier of an observed segment.
pub type SegmentId = u64;

/// Opaque identifier of a simulated (ground-truth) trajectory.
pub type TrajectoryId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CylinderGeometry {
    pub perimeter: f64,
    pub height: f64,
    pub observed_width: f64,
}

impl CylinderGeometry {
    pub fn new(perimeter: f64, height: f64, observed_width: f64) -> Result<Self> {
        let geometry = CylinderGeometry {
            perimeter,
            height,
            observed_width,
        };
        geometry.validate()?;
        Ok(geometry)
    }

    /// Geometry with a given hidden width and observed/hidden ratio.
    pub fn from_hidden_width(hidden_width: f64, height: f64, ratio: f64) -> Result<Self> {
        let observed = ratio * hidden_width;
        Self::new(hidden_width + observed, height, observed)
    }

    /// Geometry with a given perimeter and observed/hidden ratio.
    pub fn from_perimeter(perimeter: f64, height: f64, ratio: f64) -> Result<Self> {
        Self::new(perimeter, height, perimeter * ratio / (1.0 + ratio))
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.perimeter, self.height, self.observed_width]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::param("geometry values must be finite"));
        }
        if self.height <= 0.0 {
            return Err(Error::param(format!(
                "height must be > 0, got {}",
                self.height
            )));
        }
        if !(self.observed_width > 0.0 && self.observed_width < self.perimeter) {
            return Err(Error::param(format!(
                "need 0 < observed width < perimeter, got l={} L={}",
                self.observed_width, self.perimeter
            )));
        }
        Ok(())
    }

    /// Width `l_u = L - l` of the hidden band.
    pub fn hidden_width(&self) -> f64 {
        self.perimeter - self.observed_width
    }

    /// Width `l_e = l_u - l` of the extension zone upstream of the entry border.
    /// Negative when the window is wider than the hidden band.
    pub fn extension_width(&self) -> f64 {
        self.hidden_width() - self.observed_width
    }

    pub fn ratio(&self) -> f64 {
        self.observed_width / self.hidden_width()
    }

    pub fn is_observed(&self, x: f64) -> bool {
        x >= -self.observed_width && x <= 0.0
    }
}

/// Maps any circumferential coordinate onto `(-L, 0]`.
///
/// The seam `-L` is identified with `0`.
pub fn wrap_x(x: f64, geometry: &CylinderGeometry) -> f64 {
    let perimeter = geometry.perimeter;
    let r = x.rem_euclid(perimeter);
    let w = r - perimeter;
    if r >= perimeter || w <= -perimeter {
        0.0
    } else {
        w
    }
}

/// Drift, diffusion and birth/death rates of the particle population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicsParams {
    pub v_x: f64,
    pub v_y: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub lambda_birth: f64,
    pub tau_d: f64,
    pub tau_alpha: f64,
}

impl DynamicsParams {
    /// Checks the domain of every field. Zero diffusion and zero death rate are
    /// accepted here (deterministic or immortal simulations); the likelihood
    /// machinery applies its own stricter checks.
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.v_x,
            self.v_y,
            self.sigma_x,
            self.sigma_y,
            self.lambda_birth,
            self.tau_d,
            self.tau_alpha,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("dynamics parameters must be finite"));
        }
        if self.v_x <= 0.0 {
            return Err(Error::param(format!("v_x must be > 0, got {}", self.v_x)));
        }
        if self.sigma_x < 0.0 || self.sigma_y < 0.0 {
            return Err(Error::param("diffusion coefficients must be >= 0"));
        }
        if self.lambda_birth < 0.0 || self.tau_d < 0.0 || self.tau_alpha < 0.0 {
            return Err(Error::param("rates must be >= 0"));
        }
        Ok(())
    }

    /// Neighbourhood of a border within which a particle may cross it in one
    /// frame: `v_x Δt + 3 σ_x √Δt`.
    pub fn border_margin(&self, delta_t: f64) -> f64 {
        self.v_x * delta_t + 3.0 * self.sigma_x * delta_t.sqrt()
    }
}

/// One observed position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

/// A segment leaving the window through `x = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputEvent {
    pub t: f64,
    pub y: f64,
    pub segment_id: SegmentId,
}

/// A segment entering the window through `x = -l`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputEvent {
    pub t: f64,
    pub y: f64,
    pub segment_id: SegmentId,
}

/// A linking hypothesis: which outputs re-enter as which inputs.
///
/// Indices refer to positions in the sample's output and input lists.
/// Outputs not matched died in the hidden band; inputs not matched are
/// spontaneous arrivals of particles born there.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Configuration {
    /// `(output, input)` pairs sorted by output index.
    pub matches: Vec<(usize, usize)>,
    pub dead_outputs: Vec<usize>,
    pub spontaneous_inputs: Vec<usize>,
}

impl Configuration {
    /// Builds the configuration over `outputs x inputs` induced by `matches`.
    pub fn from_matches(
        outputs: usize,
        inputs: usize,
        mut matches: Vec<(usize, usize)>,
    ) -> Result<Self> {
        matches.sort_unstable();
        let mut out_used = vec![false; outputs];
        let mut in_used = vec![false; inputs];
        for &(o, i) in &matches {
            if o >= outputs || i >= inputs {
                return Err(Error::data(format!(
                    "match ({o},{i}) out of range for {outputs}x{inputs}"
                )));
            }
            if std::mem::replace(&mut out_used[o], true) {
                return Err(Error::data(format!("output {o} matched twice")));
            }
            if std::mem::replace(&mut in_used[i], true) {
                return Err(Error::data(format!("input {i} matched twice")));
            }
        }
        Ok(Configuration {
            matches,
            dead_outputs: (0..outputs).filter(|&o| !out_used[o]).collect(),
            spontaneous_inputs: (0..inputs).filter(|&i| !in_used[i]).collect(),
        })
    }

    /// Everything dead, everything spontaneous.
    pub fn empty(outputs: usize, inputs: usize) -> Self {
        Configuration {
            matches: Vec::new(),
            dead_outputs: (0..outputs).collect(),
            spontaneous_inputs: (0..inputs).collect(),
        }
    }

    /// Checks the partition and ordering constraints against the events.
    pub fn validate(&self, outputs: &[OutputEvent], inputs: &[InputEvent]) -> Result<()> {
        let (p, q) = (outputs.len(), inputs.len());
        let mut out_seen = vec![false; p];
        let mut in_seen = vec![false; q];
        let mark = |seen: &mut Vec<bool>, idx: usize, what: &str| -> Result<()> {
            match seen.get_mut(idx) {
                None => Err(Error::data(format!("{what} index {idx} out of range"))),
                Some(s) if *s => Err(Error::data(format!("{what} {idx} used twice"))),
                Some(s) => {
                    *s = true;
                    Ok(())
                }
            }
        };
        for &(o, i) in &self.matches {
            mark(&mut out_seen, o, "output")?;
            mark(&mut in_seen, i, "input")?;
            if inputs[i].t <= outputs[o].t {
                return Err(Error::data(format!(
                    "match ({o},{i}) goes back in time: t_o={} t_i={}",
                    outputs[o].t, inputs[i].t
                )));
            }
        }
        for &o in &self.dead_outputs {
            mark(&mut out_seen, o, "output")?;
        }
        for &i in &self.spontaneous_inputs {
            mark(&mut in_seen, i, "input")?;
        }
        if out_seen.iter().any(|s| !s) || in_seen.iter().any(|s| !s) {
            return Err(Error::data("configuration does not cover every event"));
        }
        Ok(())
    }

    pub fn n_matches(&self) -> usize {
        self.matches.len()
    }

    /// The match list rendered as `o-i;o-i`.
    pub fn matches_string(&self) -> String {
        self.matches
            .iter()
            .map(|(o, i)| format!("{o}-{i}"))
            .collect::<Vec<_>>()
            .join(";")
    }

    pub fn parse_matches(text: &str) -> Result<Vec<(usize, usize)>> {
        if text.trim().is_empty() {
            return Ok(Vec::new());
        }
        text.split(';')
            .map(|pair| {
                let (o, i) = pair
                    .split_once('-')
                    .ok_or_else(|| Error::data(format!("bad match pair `{pair}`")))?;
                let parse = |s: &str| {
                    s.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::data(format!("bad match pair `{pair}`")))
                };
                Ok((parse(o)?, parse(i)?))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom() -> CylinderGeometry {
        CylinderGeometry::new(50.0, 30.0, 14.0).unwrap()
    }

    fn modulo_oracle(x: f64, l: f64) -> f64 {
        // shift by whole perimeters until inside (-L, 0]
        let mut v = x;
        while v > 0.0 {
            v -= l;
        }
        while v <= -l {
            v += l;
        }
        v
    }

    #[test]
    fn wrap_examples() {
        let g = geom();
        assert_eq!(wrap_x(-50.0, &g), 0.0);
        assert_eq!(wrap_x(-60.0, &g), -10.0);
        assert_eq!(wrap_x(5.0, &g), -45.0);
        assert_eq!(wrap_x(5.0, &g), modulo_oracle(5.0, 50.0));
        assert_eq!(wrap_x(0.0, &g), 0.0);
        assert_eq!(wrap_x(-1e-17, &g), wrap_x(wrap_x(-1e-17, &g), &g));
    }

    #[test]
    fn geometry_rules() {
        assert!(CylinderGeometry::new(50.0, 30.0, 50.0).is_err());
        assert!(CylinderGeometry::new(50.0, 30.0, 0.0).is_err());
        assert!(CylinderGeometry::new(50.0, 0.0, 10.0).is_err());
        let g = CylinderGeometry::from_perimeter(50.0, 30.0, 0.42).unwrap();
        assert!((g.hidden_width() - 35.211_267_605_633_8).abs() < 1e-9);
        assert!((g.ratio() - 0.42).abs() < 1e-12);
        assert!(g.extension_width() > 0.0);
        let wide = CylinderGeometry::new(50.0, 30.0, 30.0).unwrap();
        assert!(wide.extension_width() < 0.0);
    }

    #[test]
    fn configuration_from_matches_partitions() {
        let c = Configuration::from_matches(3, 2, vec![(2, 0)]).unwrap();
        assert_eq!(c.dead_outputs, vec![0, 1]);
        assert_eq!(c.spontaneous_inputs, vec![1]);
        assert!(Configuration::from_matches(3, 2, vec![(0, 0), (1, 0)]).is_err());
        assert!(Configuration::from_matches(3, 2, vec![(0, 5)]).is_err());
    }

    #[test]
    fn configuration_validate_checks_time_order() {
        let outs = [OutputEvent {
            t: 5.0,
            y: 1.0,
            segment_id: 0,
        }];
        let ins = [InputEvent {
            t: 4.0,
            y: 1.0,
            segment_id: 1,
        }];
        let c = Configuration::from_matches(1, 1, vec![(0, 0)]).unwrap();
        assert!(c.validate(&outs, &ins).is_err());
        Configuration::empty(1, 1).validate(&outs, &ins).unwrap();
        let broken = Configuration {
            matches: vec![],
            dead_outputs: vec![],
            spontaneous_inputs: vec![0],
        };
        assert!(broken.validate(&outs, &ins).is_err());
    }

    #[test]
    fn matches_text_roundtrip() {
        let c = Configuration::from_matches(4, 4, vec![(3, 1), (0, 2)]).unwrap();
        let text = c.matches_string();
        assert_eq!(text, "0-2;3-1");
        assert_eq!(Configuration::parse_matches(&text).unwrap(), c.matches);
        assert!(Configuration::parse_matches("").unwrap().is_empty());
        assert!(Configuration::parse_matches("1x2").is_err());
    }

    #[test]
    fn params_validation() {
        let p = DynamicsParams {
            v_x: 0.6,
            v_y: 0.006,
            sigma_x: 0.2,
            sigma_y: 0.2,
            lambda_birth: 0.03,
            tau_d: 0.005,
            tau_alpha: 0.0,
        };
        p.validate().unwrap();
        assert!(DynamicsParams { v_x: 0.0, ..p }.validate().is_err());
        assert!(DynamicsParams { sigma_y: -1.0, ..p }.validate().is_err());
        assert!((p.border_margin(0.25) - 0.45).abs() < 1e-12);
    }
}
