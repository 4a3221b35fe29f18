//! CSV formats: sample bundles, cost matrices and result tables.
//!
//! A sample bundle is a directory holding
//!
//! * `segments.csv`: `segment_id,t,x,y`, one row per observed point,
//! * `outputs.csv` / `inputs.csv`: `index,segment_id,t,y`,
//! * `links.csv`: `segment_id,trajectory_id` (ground truth, may be empty),
//! * `meta.csv`: one row with the geometry, sampling and, for simulated
//!   movies, the true dynamics.
//!
//! Events are always rebuilt from the segments and the border margin when a
//! bundle is read; the event files are written for inspection.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CylinderGeometry, Point, SegmentId, TrajectoryId};
use crate::simulator::{ObservedSample, Segment};
use crate::solver::AssignmentProblem;

pub const SEGMENTS_FILE: &str = "segments.csv";
pub const OUTPUTS_FILE: &str = "outputs.csv";
pub const INPUTS_FILE: &str = "inputs.csv";
pub const LINKS_FILE: &str = "links.csv";
pub const META_FILE: &str = "meta.csv";

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(io_err(path))
}

/// A CSV table row type with a fixed header.
pub trait Table: Serialize + DeserializeOwned {
    const HEADER: &'static str;
}

/// Writes `rows` under their header; an empty table still gets the header.
pub fn write_rows<T: Table>(path: &Path, rows: &[T]) -> Result<()> {
    if rows.is_empty() {
        return fs::write(path, format!("{}\n", T::HEADER)).map_err(io_err(path));
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for row in rows {
        w.serialize(row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_rows<T: Table>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize()
        .map(|row| row.map_err(csv_err(path)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointRow {
    pub segment_id: SegmentId,
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

impl Table for PointRow {
    const HEADER: &'static str = "segment_id,t,x,y";
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventRow {
    pub index: usize,
    pub segment_id: SegmentId,
    pub t: f64,
    pub y: f64,
}

impl Table for EventRow {
    const HEADER: &'static str = "index,segment_id,t,y";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkRow {
    pub segment_id: SegmentId,
    pub trajectory_id: TrajectoryId,
}

impl Table for LinkRow {
    const HEADER: &'static str = "segment_id,trajectory_id";
}

/// Geometry and sampling of a movie plus, when simulated, what generated it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub perimeter: f64,
    pub height: f64,
    pub observed_width: f64,
    pub delta_t: f64,
    pub duration: f64,
    pub border_margin: f64,
    pub v_x: Option<f64>,
    pub v_y: Option<f64>,
    pub sigma_x: Option<f64>,
    pub sigma_y: Option<f64>,
    pub lambda_birth: Option<f64>,
    pub tau_d: Option<f64>,
    pub tau_alpha: Option<f64>,
    /// Bounds of a uniform speed law; empty for constant speed.
    pub speed_low: Option<f64>,
    pub speed_high: Option<f64>,
    pub counted_tau_alpha: Option<f64>,
    /// Rates estimated on a long reference movie with the same dynamics.
    pub reference_tau_d: Option<f64>,
    pub reference_tau_alpha: Option<f64>,
}

impl Table for SampleMeta {
    const HEADER: &'static str = "perimeter,height,observed_width,delta_t,duration,border_margin,\
v_x,v_y,sigma_x,sigma_y,lambda_birth,tau_d,tau_alpha,speed_low,speed_high,counted_tau_alpha,\
reference_tau_d,reference_tau_alpha";
}

impl SampleMeta {
    pub fn for_sample(sample: &ObservedSample) -> Self {
        SampleMeta {
            perimeter: sample.geometry.perimeter,
            height: sample.geometry.height,
            observed_width: sample.geometry.observed_width,
            delta_t: sample.delta_t,
            duration: sample.duration,
            border_margin: sample.border_margin,
            v_x: None,
            v_y: None,
            sigma_x: None,
            sigma_y: None,
            lambda_birth: None,
            tau_d: None,
            tau_alpha: None,
            speed_low: None,
            speed_high: None,
            counted_tau_alpha: None,
            reference_tau_d: None,
            reference_tau_alpha: None,
        }
    }
}

pub fn write_sample(dir: &Path, sample: &ObservedSample, meta: &SampleMeta) -> Result<()> {
    create_dir(dir)?;
    let points: Vec<PointRow> = sample
        .segments
        .iter()
        .flat_map(|s| {
            s.points.iter().map(move |p| PointRow {
                segment_id: s.id,
                t: p.t,
                x: p.x,
                y: p.y,
            })
        })
        .collect();
    write_rows(&dir.join(SEGMENTS_FILE), &points)?;
    let outputs: Vec<EventRow> = sample
        .outputs
        .iter()
        .enumerate()
        .map(|(index, o)| EventRow {
            index,
            segment_id: o.segment_id,
            t: o.t,
            y: o.y,
        })
        .collect();
    write_rows(&dir.join(OUTPUTS_FILE), &outputs)?;
    let inputs: Vec<EventRow> = sample
        .inputs
        .iter()
        .enumerate()
        .map(|(index, i)| EventRow {
            index,
            segment_id: i.segment_id,
            t: i.t,
            y: i.y,
        })
        .collect();
    write_rows(&dir.join(INPUTS_FILE), &inputs)?;
    let links: Vec<LinkRow> = sample
        .true_links
        .iter()
        .map(|(&segment_id, &trajectory_id)| LinkRow {
            segment_id,
            trajectory_id,
        })
        .collect();
    write_rows(&dir.join(LINKS_FILE), &links)?;
    write_rows(&dir.join(META_FILE), std::slice::from_ref(meta))
}

pub fn read_sample(dir: &Path) -> Result<(ObservedSample, SampleMeta)> {
    let meta_path = dir.join(META_FILE);
    let metas: Vec<SampleMeta> = read_rows(&meta_path)?;
    let [meta] = metas.as_slice() else {
        return Err(Error::Config {
            path: meta_path,
            message: format!("expected exactly one row, found {}", metas.len()),
        });
    };
    let geometry = CylinderGeometry::new(meta.perimeter, meta.height, meta.observed_width)?;
    let rows: Vec<PointRow> = read_rows(&dir.join(SEGMENTS_FILE))?;
    let mut grouped: BTreeMap<SegmentId, Vec<Point>> = BTreeMap::new();
    for r in rows {
        grouped.entry(r.segment_id).or_default().push(Point {
            t: r.t,
            x: r.x,
            y: r.y,
        });
    }
    let mut segments: Vec<Segment> = grouped
        .into_iter()
        .map(|(id, mut points)| {
            points.sort_by(|a, b| a.t.total_cmp(&b.t));
            Segment { id, points }
        })
        .collect();
    segments.sort_by(|a, b| a.first().t.total_cmp(&b.first().t).then(a.id.cmp(&b.id)));
    let links_path = dir.join(LINKS_FILE);
    let true_links = if links_path.exists() {
        read_rows::<LinkRow>(&links_path)?
            .into_iter()
            .map(|l| (l.segment_id, l.trajectory_id))
            .collect()
    } else {
        BTreeMap::new()
    };
    let sample = ObservedSample::from_segments(
        geometry,
        meta.delta_t,
        meta.duration,
        meta.border_margin,
        segments,
        true_links,
    )?;
    Ok((sample, *meta))
}

/// Cost matrix with one row per output; an empty cell is a forbidden pair.
pub fn write_problem(path: &Path, problem: &AssignmentProblem) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let mut header = vec!["output".to_string()];
    header.extend((0..problem.n_inputs).map(|i| format!("input_{i}")));
    w.write_record(&header).map_err(csv_err(path))?;
    for o in 0..problem.n_outputs {
        let mut record = vec![o.to_string()];
        record.extend((0..problem.n_inputs).map(|i| {
            problem
                .cost(o, i)
                .map(|c| c.to_string())
                .unwrap_or_default()
        }));
        w.write_record(&record).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_problem(path: &Path) -> Result<AssignmentProblem> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let n_inputs = r.headers().map_err(csv_err(path))?.len().saturating_sub(1);
    let mut costs = Vec::new();
    let mut n_outputs = 0;
    let bad = |message: String| Error::Config {
        path: path.to_path_buf(),
        message,
    };
    for record in r.records() {
        let record = record.map_err(csv_err(path))?;
        if record.len() != n_inputs + 1 {
            return Err(bad(format!("row {n_outputs} has {} cells", record.len())));
        }
        for cell in record.iter().skip(1) {
            let cell = cell.trim();
            costs.push(if cell.is_empty() {
                None
            } else {
                Some(
                    cell.parse::<f64>()
                        .map_err(|_| bad(format!("bad cost `{cell}`")))?,
                )
            });
        }
        n_outputs += 1;
    }
    AssignmentProblem::new(n_outputs, n_inputs, costs)
}

/// One ranked configuration of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub sample: String,
    pub params: String,
    pub rank: Option<usize>,
    pub objective: Option<f64>,
    pub log_likelihood: Option<f64>,
    pub n_matches: Option<usize>,
    /// `o-i;o-i` over output and input indices.
    pub matches: String,
    pub error: String,
}

impl Table for ResultRow {
    const HEADER: &'static str =
        "sample,params,rank,objective,log_likelihood,n_matches,matches,error";
}

/// Score of one ranked configuration against the ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub sample: String,
    pub params: String,
    pub rank: Option<usize>,
    pub n_segments: usize,
    pub ari: Option<f64>,
    pub rand_index: Option<f64>,
    pub k_gap: Option<f64>,
    pub error: String,
}

impl Table for ScoreRow {
    const HEADER: &'static str = "sample,params,rank,n_segments,ari,rand_index,k_gap,error";
}

/// Path of a sample bundle inside an experiment directory.
pub fn sample_dir(root: &Path, name: &str) -> PathBuf {
    root.join("samples").join(name)
}
