//! Scores of a reconstruction against the ground truth.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::model::{Configuration, CylinderGeometry, DynamicsParams, SegmentId};
use crate::simulator::{ObservedSample, Trajectory};
use crate::solver::{AssignmentProblem, SolverResult};

/// Segment → cluster (reconstructed trajectory). Cluster ids are canonical:
/// clusters are numbered in order of their smallest segment id.
pub type Partition = BTreeMap<SegmentId, usize>;

fn canonical<L: Eq + std::hash::Hash + Copy>(
    labels: impl Iterator<Item = (SegmentId, L)>,
) -> Partition {
    let mut ids: HashMap<L, usize> = HashMap::new();
    let mut sorted: Vec<(SegmentId, L)> = labels.collect();
    sorted.sort_by_key(|(s, _)| *s);
    sorted
        .into_iter()
        .map(|(s, l)| {
            let next = ids.len();
            (s, *ids.entry(l).or_insert(next))
        })
        .collect()
}

/// Relabels any segment → label map canonically.
pub fn partition_from_labels(labels: &BTreeMap<SegmentId, u64>) -> Partition {
    canonical(labels.iter().map(|(&s, &l)| (s, l)))
}

/// Chains matched pairs through shared segments into clusters.
pub fn configuration_to_partition(
    config: &Configuration,
    sample: &ObservedSample,
) -> Result<Partition> {
    let index = sample.segment_index();
    let mut parent: Vec<usize> = (0..sample.segments.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for &(o, i) in &config.matches {
        let (Some(out), Some(inp)) = (sample.outputs.get(o), sample.inputs.get(i)) else {
            return Err(Error::data(format!("match ({o},{i}) out of range")));
        };
        let a = find(&mut parent, index[&out.segment_id]);
        let b = find(&mut parent, index[&inp.segment_id]);
        if a == b {
            return Err(Error::data(format!("match ({o},{i}) closes a cycle")));
        }
        parent[b] = a;
    }
    let roots: Vec<(SegmentId, usize)> = (0..sample.segments.len())
        .map(|k| (sample.segments[k].id, find(&mut parent, k)))
        .collect();
    Ok(canonical(roots.into_iter()))
}

/// Segments grouped by the particle that produced them.
pub fn ground_truth_partition(sample: &ObservedSample) -> Result<Partition> {
    if !sample.has_ground_truth() {
        return Err(Error::data("sample has no ground-truth links"));
    }
    Ok(canonical(
        sample
            .segments
            .iter()
            .map(|s| (s.id, sample.true_links[&s.id])),
    ))
}

struct PairCounts {
    both: f64,
    same_g: f64,
    same_k: f64,
    total: f64,
}

fn choose2(n: usize) -> f64 {
    let n = n as f64;
    n * (n - 1.0) / 2.0
}

fn pair_counts(g: &Partition, k: &Partition) -> Result<PairCounts> {
    if g.len() != k.len() || g.keys().zip(k.keys()).any(|(a, b)| a != b) {
        return Err(Error::data("partitions cover different segments"));
    }
    if g.len() < 2 {
        return Err(Error::data(format!(
            "need at least 2 segments, got {}",
            g.len()
        )));
    }
    let mut table: HashMap<(usize, usize), usize> = HashMap::new();
    let mut rows: HashMap<usize, usize> = HashMap::new();
    let mut cols: HashMap<usize, usize> = HashMap::new();
    for (s, &a) in g {
        let b = k[s];
        *table.entry((a, b)).or_default() += 1;
        *rows.entry(a).or_default() += 1;
        *cols.entry(b).or_default() += 1;
    }
    Ok(PairCounts {
        both: table.values().map(|&n| choose2(n)).sum(),
        same_g: rows.values().map(|&n| choose2(n)).sum(),
        same_k: cols.values().map(|&n| choose2(n)).sum(),
        total: choose2(g.len()),
    })
}

/// Fraction of segment pairs on which the two partitions agree.
pub fn rand_index(g: &Partition, k: &Partition) -> Result<f64> {
    let c = pair_counts(g, k)?;
    let apart = c.total - c.same_g - c.same_k + c.both;
    Ok((c.both + apart) / c.total)
}

/// Rand index corrected for chance under the permutation model. When the
/// correction is degenerate the score is 1 for identical partitions, else 0.
pub fn adjusted_rand_index(g: &Partition, k: &Partition) -> Result<f64> {
    let c = pair_counts(g, k)?;
    let expected = c.same_g * c.same_k / c.total;
    let max = 0.5 * (c.same_g + c.same_k);
    let denom = max - expected;
    if denom.abs() <= 1e-12 * c.total {
        return Ok(if canonical_eq(g, k) { 1.0 } else { 0.0 });
    }
    Ok((c.both - expected) / denom)
}

fn canonical_eq(g: &Partition, k: &Partition) -> bool {
    canonical(g.iter().map(|(&s, &l)| (s, l))) == canonical(k.iter().map(|(&s, &l)| (s, l)))
}

/// Optimality gap `K(true) - K(solved)` and the ARI of the solved partition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KGap {
    pub gap: f64,
    pub ari: f64,
}

pub fn k_gap(
    sample: &ObservedSample,
    problem: &AssignmentProblem,
    solved: &SolverResult,
    truth: &Configuration,
) -> Result<KGap> {
    let gap = problem.objective(truth) - solved.objective;
    let estimated = configuration_to_partition(&solved.configuration, sample)?;
    let reference = ground_truth_partition(sample)?;
    Ok(KGap {
        gap,
        ari: adjusted_rand_index(&reference, &estimated)?,
    })
}

/// Mean number of turns around the cylinder over a lifetime, `v_x/(τ_d L)`.
pub fn expected_rotations(geometry: &CylinderGeometry, params: &DynamicsParams) -> f64 {
    params.v_x / (params.tau_d * geometry.perimeter)
}

/// Turns `v_x T_d / L` of each simulated particle with a finite lifetime.
pub fn true_rotations(trajectories: &[Trajectory], geometry: &CylinderGeometry) -> Vec<f64> {
    trajectories
        .iter()
        .filter(|t| t.lifetime().is_finite())
        .map(|t| t.v_x * t.lifetime() / geometry.perimeter)
        .collect()
}

/// Number of segments in each cluster, the observable proxy of rotations.
pub fn segments_per_cluster(partition: &Partition) -> Vec<usize> {
    let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
    for &c in partition.values() {
        *sizes.entry(c).or_default() += 1;
    }
    sizes.into_values().collect()
}

/// Histogram of integer counts.
pub fn count_histogram(counts: &[usize]) -> BTreeMap<usize, usize> {
    let mut h = BTreeMap::new();
    for &c in counts {
        *h.entry(c).or_default() += 1;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn part(labels: &[usize]) -> Partition {
        labels
            .iter()
            .enumerate()
            .map(|(s, &l)| (s as SegmentId, l))
            .collect()
    }

    #[test]
    fn identical_partitions() {
        let g = part(&[0, 0, 1, 2, 2]);
        assert_eq!(rand_index(&g, &g).unwrap(), 1.0);
        assert_eq!(adjusted_rand_index(&g, &g).unwrap(), 1.0);
        let relabeled = part(&[7, 7, 3, 1, 1]);
        assert_eq!(adjusted_rand_index(&g, &relabeled).unwrap(), 1.0);
    }

    #[test]
    fn singletons_against_one_cluster() {
        let g = part(&[0, 1, 2]);
        let k = part(&[0, 0, 0]);
        assert_eq!(rand_index(&g, &k).unwrap(), 0.0);
        assert_eq!(adjusted_rand_index(&g, &k).unwrap(), 0.0);
        assert_eq!(adjusted_rand_index(&g, &g).unwrap(), 1.0);
        assert_eq!(adjusted_rand_index(&k, &k).unwrap(), 1.0);
    }

    #[test]
    fn three_pair_example() {
        let g = part(&[1, 1, 2]);
        let k = part(&[1, 2, 2]);
        assert!((rand_index(&g, &k).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn needs_two_common_elements() {
        assert!(rand_index(&part(&[0]), &part(&[0])).is_err());
        assert!(rand_index(&part(&[0, 1]), &part(&[0, 1, 1])).is_err());
    }

    #[test]
    fn rotations_formula() {
        let g = CylinderGeometry::from_perimeter(50.0, 30.0, 0.42).unwrap();
        let p = DynamicsParams {
            v_x: 0.6,
            v_y: 0.006,
            sigma_x: 0.2,
            sigma_y: 0.2,
            lambda_birth: 0.03,
            tau_d: 0.005,
            tau_alpha: 0.0,
        };
        assert!((expected_rotations(&g, &p) - 2.4).abs() < 1e-12);
        let t = Trajectory {
            id: 0,
            birth_time: 0.0,
            death_time: 50.0 / 0.6,
            birth_x: -1.0,
            birth_y: 0.0,
            v_x: 0.6,
            points: vec![],
            laps: vec![],
        };
        assert!((true_rotations(&[t], &g)[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cluster_sizes() {
        let p = part(&[0, 1, 0, 2, 0]);
        assert_eq!(segments_per_cluster(&p), vec![3, 1, 1]);
        let h = count_histogram(&segments_per_cluster(&p));
        assert_eq!(h[&1], 2);
        assert_eq!(h[&3], 1);
    }
}
