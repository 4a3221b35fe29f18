#![allow(dead_code)]

use cyltrack::rng::StreamRng;
use cyltrack::solver::{build_problem, AssignmentProblem};
use cyltrack::stats::{arrival_rate, CostModel};
use cyltrack::{CylinderGeometry, DynamicsParams, InputEvent, OutputEvent};
use rand::Rng;

pub fn default_geometry() -> CylinderGeometry {
    CylinderGeometry::from_perimeter(50.0, 30.0, 0.42).unwrap()
}

pub fn default_params(lambda: f64, tau_d: f64) -> DynamicsParams {
    let mut p = DynamicsParams {
        v_x: 0.6,
        v_y: 0.006,
        sigma_x: 0.2,
        sigma_y: 0.2,
        lambda_birth: lambda,
        tau_d,
        tau_alpha: 0.0,
    };
    p.tau_alpha = arrival_rate(&default_geometry(), &p);
    p
}

/// Uniform costs in `[-10, 10)` with a fifth of the pairs forbidden.
pub fn uniform_problem(rng: &mut StreamRng, p: usize, q: usize) -> AssignmentProblem {
    let costs = (0..p * q)
        .map(|_| (!rng.random_bool(0.2)).then(|| rng.random_range(-10.0..10.0)))
        .collect();
    AssignmentProblem::new(p, q, costs).unwrap()
}

/// Costs of random events in a short movie under the default dynamics.
pub fn model_problem(rng: &mut StreamRng, p: usize, q: usize) -> AssignmentProblem {
    let outputs: Vec<OutputEvent> = (0..p)
        .map(|k| OutputEvent {
            t: rng.random_range(0.0..120.0),
            y: rng.random_range(0.0..30.0),
            segment_id: k as u64,
        })
        .collect();
    let inputs: Vec<InputEvent> = (0..q)
        .map(|k| InputEvent {
            t: rng.random_range(40.0..180.0),
            y: rng.random_range(0.0..30.0),
            segment_id: (p + k) as u64,
        })
        .collect();
    let cost = CostModel::new(&default_params(0.08, 0.004), &default_geometry()).unwrap();
    build_problem(&outputs, &inputs, &cost)
}

/// Minimum objective by dynamic programming over the set of used inputs.
pub fn dp_minimum(problem: &AssignmentProblem) -> f64 {
    let (p, q) = (problem.n_outputs, problem.n_inputs);
    let mut best = vec![f64::INFINITY; 1 << q];
    best[0] = 0.0;
    for o in 0..p {
        let mut next = best.clone();
        for mask in 0..1usize << q {
            if !best[mask].is_finite() {
                continue;
            }
            for i in 0..q {
                if mask & (1 << i) != 0 {
                    continue;
                }
                if let Some(c) = problem.cost(o, i) {
                    let m = mask | (1 << i);
                    next[m] = next[m].min(best[mask] + c);
                }
            }
        }
        best = next;
    }
    best.into_iter().fold(f64::INFINITY, f64::min)
}

/// Every set partition of `m` elements as a restricted growth string.
pub fn set_partitions(m: usize) -> Vec<Vec<usize>> {
    fn grow(prefix: &mut Vec<usize>, m: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == m {
            out.push(prefix.clone());
            return;
        }
        let next = prefix.iter().max().map_or(0, |&x| x + 1);
        for label in 0..=next {
            prefix.push(label);
            grow(prefix, m, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    grow(&mut Vec::new(), m, &mut out);
    out
}

fn permutations(m: usize) -> Vec<Vec<usize>> {
    fn build(current: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if current.len() == used.len() {
            out.push(current.clone());
            return;
        }
        for k in 0..used.len() {
            if !used[k] {
                used[k] = true;
                current.push(k);
                build(current, used, out);
                current.pop();
                used[k] = false;
            }
        }
    }
    let mut out = Vec::new();
    build(&mut Vec::new(), &mut vec![false; m], &mut out);
    out
}

/// Pairs placed together by both labelings.
fn together(a: &[usize], b: &[usize], perm: &[usize]) -> usize {
    let m = a.len();
    let mut n = 0;
    for i in 0..m {
        for j in i + 1..m {
            if a[i] == a[j] && b[perm[i]] == b[perm[j]] {
                n += 1;
            }
        }
    }
    n
}

/// Pair-counting ARI whose chance term is the mean agreement over every
/// relabeling of the elements of `b`; 1 for equal partitions and 0 otherwise
/// when the normalizer vanishes.
pub struct PermutationAri {
    perms: Vec<Vec<usize>>,
}

impl PermutationAri {
    pub fn new(m: usize) -> Self {
        PermutationAri {
            perms: permutations(m),
        }
    }

    pub fn ari(&self, a: &[usize], b: &[usize]) -> f64 {
        let identity: Vec<usize> = (0..a.len()).collect();
        let index = together(a, b, &identity) as f64;
        let expected = self.perms.iter().map(|p| together(a, b, p)).sum::<usize>() as f64
            / self.perms.len() as f64;
        let same_a = together(a, a, &identity) as f64;
        let same_b = together(b, b, &identity) as f64;
        let max = 0.5 * (same_a + same_b);
        if (max - expected).abs() < 1e-12 {
            let equal =
                (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])));
            return if equal { 1.0 } else { 0.0 };
        }
        (index - expected) / (max - expected)
    }
}
