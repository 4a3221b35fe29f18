use crate::error::{Error, Result};
use crate::model::Configuration;

use super::AssignmentProblem;

/// Largest number of outputs or inputs accepted by [`brute_force`].
pub const BRUTE_FORCE_LIMIT: usize = 8;

/// Every valid configuration with its objective, sorted by `(K, matches)`.
pub fn brute_force(problem: &AssignmentProblem) -> Result<Vec<(Configuration, f64)>> {
    let (p, q) = (problem.n_outputs, problem.n_inputs);
    if p > BRUTE_FORCE_LIMIT || q > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge {
            outputs: p,
            inputs: q,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let mut found = Vec::new();
    let mut used = vec![false; q];
    let mut current = Vec::new();
    enumerate(problem, 0, &mut used, &mut current, &mut found);
    let mut out: Vec<(Configuration, f64)> = found
        .into_iter()
        .map(|matches| {
            let config = Configuration::from_matches(p, q, matches).expect("injective");
            let k = problem.objective(&config);
            (config, k)
        })
        .collect();
    out.sort_by(|a, b| {
        a.1.total_cmp(&b.1)
            .then_with(|| a.0.matches.cmp(&b.0.matches))
    });
    Ok(out)
}

fn enumerate(
    problem: &AssignmentProblem,
    row: usize,
    used: &mut [bool],
    current: &mut Vec<(usize, usize)>,
    found: &mut Vec<Vec<(usize, usize)>>,
) {
    if row == problem.n_outputs {
        found.push(current.clone());
        return;
    }
    enumerate(problem, row + 1, used, current, found);
    for c in 0..problem.n_inputs {
        if used[c] || problem.cost(row, c).is_none() {
            continue;
        }
        used[c] = true;
        current.push((row, c));
        enumerate(problem, row + 1, used, current, found);
        current.pop();
        used[c] = false;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open(p: usize, q: usize) -> AssignmentProblem {
        AssignmentProblem::new(p, q, vec![Some(1.0); p * q]).unwrap()
    }

    #[test]
    fn counts() {
        assert_eq!(brute_force(&open(2, 2)).unwrap().len(), 7);
        assert_eq!(brute_force(&open(3, 3)).unwrap().len(), 34);
        assert_eq!(brute_force(&open(0, 4)).unwrap().len(), 1);
    }

    #[test]
    fn forbidden_pairs_skipped() {
        let p = AssignmentProblem::new(1, 1, vec![None]).unwrap();
        let all = brute_force(&p).unwrap();
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].1, 0.0);
    }

    #[test]
    fn size_guard() {
        assert!(matches!(
            brute_force(&open(9, 1)),
            Err(Error::TooLarge { .. })
        ));
    }
}
