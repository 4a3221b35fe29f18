//! Maximum-likelihood linking of outputs to inputs.
//!
//! Maximizing `log Q` over configurations amounts to minimizing
//! `K(c) = Σ (γ - β - δ)` over matched pairs, a bipartite matching problem in
//! which every output may stay unmatched (it died) and every input may stay
//! unmatched (it was born hidden). The matching is solved exactly on a square
//! matrix where each output and each input gets a private zero-cost dummy
//! partner.

mod assignment;
mod brute;
mod kbest;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Configuration, InputEvent, OutputEvent};
use crate::stats::CostModel;
use assignment::{min_cost_assignment, Choice, SquareMatrix};

pub use brute::{brute_force, BRUTE_FORCE_LIMIT};
pub use kbest::solve_k_best;

/// Adjusted costs `γ - β - δ` of a sample; `None` marks pairs with `t_i <= t_o`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentProblem {
    pub n_outputs: usize,
    pub n_inputs: usize,
    /// Row-major `n_outputs x n_inputs`.
    pub costs: Vec<Option<f64>>,
}

impl AssignmentProblem {
    pub fn new(n_outputs: usize, n_inputs: usize, costs: Vec<Option<f64>>) -> Result<Self> {
        if costs.len() != n_outputs * n_inputs {
            return Err(Error::data(format!(
                "cost matrix has {} cells, expected {n_outputs}x{n_inputs}",
                costs.len()
            )));
        }
        if costs.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::data("allowed costs must be finite"));
        }
        Ok(AssignmentProblem {
            n_outputs,
            n_inputs,
            costs,
        })
    }

    pub fn cost(&self, output: usize, input: usize) -> Option<f64> {
        self.costs[output * self.n_inputs + input]
    }

    /// `K(c)`, or `+∞` if the configuration uses a forbidden pair.
    pub fn objective(&self, config: &Configuration) -> f64 {
        config
            .matches
            .iter()
            .map(|&(o, i)| self.cost(o, i).unwrap_or(f64::INFINITY))
            .sum()
    }
}

/// Cost matrix of a sample under a cost model.
pub fn build_problem(
    outputs: &[OutputEvent],
    inputs: &[InputEvent],
    cost: &CostModel,
) -> AssignmentProblem {
    let costs = outputs
        .iter()
        .flat_map(|o| inputs.iter().map(move |i| cost.adjusted(o, i)))
        .collect();
    AssignmentProblem {
        n_outputs: outputs.len(),
        n_inputs: inputs.len(),
        costs,
    }
}

/// One ranked configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverResult {
    /// 1 for the optimum.
    pub rank: usize,
    pub configuration: Configuration,
    pub objective: f64,
}

impl SolverResult {
    /// `log Q = -(qβ + pδ + τ_α T_S) - K`.
    pub fn log_likelihood(&self, cost: &CostModel, duration: f64) -> f64 {
        let p = self.configuration.matches.len() + self.configuration.dead_outputs.len();
        let q = self.configuration.matches.len() + self.configuration.spontaneous_inputs.len();
        -cost.baseline(p, q, duration) - self.objective
    }
}

/// Per-row restrictions used when partitioning the solution space.
#[derive(Debug, Clone, Default)]
pub(crate) struct Restrictions {
    /// Row fixed to a choice.
    pub fixed: Vec<Option<Choice>>,
    /// Choices a row may not take.
    pub banned: Vec<Vec<Choice>>,
}

impl Restrictions {
    pub fn none(rows: usize) -> Self {
        Restrictions {
            fixed: vec![None; rows],
            banned: vec![Vec::new(); rows],
        }
    }

    fn allows(&self, row: usize, choice: Choice) -> bool {
        match self.fixed[row] {
            Some(f) => f == choice,
            None => !self.banned[row].contains(&choice),
        }
    }
}

/// Optimal row choices under restrictions, with their objective. Rows fixed
/// by the restrictions are taken out before solving, along with the inputs
/// they hold.
pub(crate) fn solve_restricted(
    problem: &AssignmentProblem,
    restrictions: &Restrictions,
) -> Option<(Vec<Choice>, f64)> {
    let (p, q) = (problem.n_outputs, problem.n_inputs);
    let mut choices: Vec<Choice> = vec![None; p];
    let mut taken = vec![false; q];
    let mut rows = Vec::with_capacity(p);
    for (r, fixed) in restrictions.fixed.iter().enumerate() {
        match *fixed {
            Some(Some(c)) => {
                if taken[c] || problem.cost(r, c).is_none() {
                    return None;
                }
                taken[c] = true;
                choices[r] = Some(c);
            }
            Some(None) => {}
            None => rows.push(r),
        }
    }
    let cols: Vec<usize> = (0..q).filter(|&c| !taken[c]).collect();
    let (fp, fq) = (rows.len(), cols.len());
    // rows: free outputs then input dummies; columns: free inputs then output dummies
    let mut m = SquareMatrix::new(fp + fq);
    for (a, &r) in rows.iter().enumerate() {
        for (b, &c) in cols.iter().enumerate() {
            if restrictions.allows(r, Some(c)) {
                m.set(a, b, problem.cost(r, c));
            }
        }
        if restrictions.allows(r, None) {
            m.set(a, fq + a, Some(0.0));
        }
    }
    for b in 0..fq {
        m.set(fp + b, b, Some(0.0));
        for a in 0..fp {
            m.set(fp + b, fq + a, Some(0.0));
        }
    }
    let assignment = min_cost_assignment(&m)?;
    for (a, &r) in rows.iter().enumerate() {
        let b = assignment[a];
        choices[r] = (b < fq).then(|| cols[b]);
    }
    let objective = choices
        .iter()
        .enumerate()
        .filter_map(|(r, c)| c.map(|c| problem.cost(r, c).expect("allowed")))
        .sum();
    Some((choices, objective))
}

pub(crate) fn to_configuration(problem: &AssignmentProblem, choices: &[Choice]) -> Configuration {
    let matches = choices
        .iter()
        .enumerate()
        .filter_map(|(r, c)| c.map(|c| (r, c)))
        .collect();
    Configuration::from_matches(problem.n_outputs, problem.n_inputs, matches)
        .expect("assignment is injective")
}

/// The most likely configuration.
pub fn solve(problem: &AssignmentProblem) -> SolverResult {
    let (choices, objective) = solve_restricted(problem, &Restrictions::none(problem.n_outputs))
        .expect("the empty matching is always feasible");
    SolverResult {
        rank: 1,
        configuration: to_configuration(problem, &choices),
        objective,
    }
}
