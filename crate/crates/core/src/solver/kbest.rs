//! Ranked enumeration of configurations by partitioning the solution space
//! on the choice made by each output row.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::assignment::Choice;
use super::{solve_restricted, to_configuration, AssignmentProblem, Restrictions, SolverResult};

struct Node {
    objective: f64,
    matches: Vec<(usize, usize)>,
    choices: Vec<Choice>,
    restrictions: Restrictions,
}

impl Node {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.objective
            .total_cmp(&other.objective)
            .then_with(|| self.matches.cmp(&other.matches))
    }
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.key_cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    // reversed: BinaryHeap pops the smallest objective first
    fn cmp(&self, other: &Self) -> Ordering {
        other.key_cmp(self)
    }
}

fn node(problem: &AssignmentProblem, restrictions: Restrictions) -> Option<Node> {
    let (choices, objective) = solve_restricted(problem, &restrictions)?;
    let matches = choices
        .iter()
        .enumerate()
        .filter_map(|(r, c)| c.map(|c| (r, c)))
        .collect();
    Some(Node {
        objective,
        matches,
        choices,
        restrictions,
    })
}

/// The `n_max` most likely configurations, best first. Returns fewer when the
/// configuration space is smaller.
pub fn solve_k_best(problem: &AssignmentProblem, n_max: usize) -> Vec<SolverResult> {
    let rows = problem.n_outputs;
    let mut heap = BinaryHeap::new();
    if let Some(root) = node(problem, Restrictions::none(rows)) {
        heap.push(root);
    }
    let mut out = Vec::new();
    while out.len() < n_max {
        let Some(best) = heap.pop() else { break };
        if out.len() + 1 == n_max {
            out.push(SolverResult {
                rank: n_max,
                configuration: to_configuration(problem, &best.choices),
                objective: best.objective,
            });
            break;
        }
        let mut fixed_so_far = best.restrictions.clone();
        for row in 0..rows {
            if best.restrictions.fixed[row].is_some() {
                continue;
            }
            let mut child = fixed_so_far.clone();
            child.banned[row].push(best.choices[row]);
            if let Some(n) = node(problem, child) {
                heap.push(n);
            }
            fixed_so_far.fixed[row] = Some(best.choices[row]);
        }
        out.push(SolverResult {
            rank: out.len() + 1,
            configuration: to_configuration(problem, &best.choices),
            objective: best.objective,
        });
    }
    out
}
