//! Min-cost perfect assignment on a square matrix with structurally missing
//! entries (shortest augmenting paths with potentials).

/// Row `r` choice in a solved matching: an input column, or its own dummy.
pub(crate) type Choice = Option<usize>;

/// Square cost matrix; `None` entries can never be selected.
pub(crate) struct SquareMatrix {
    pub n: usize,
    pub cells: Vec<Option<f64>>,
}

impl SquareMatrix {
    pub fn new(n: usize) -> Self {
        SquareMatrix {
            n,
            cells: vec![None; n * n],
        }
    }

    pub fn set(&mut self, r: usize, c: usize, v: Option<f64>) {
        self.cells[r * self.n + c] = v;
    }

    fn get(&self, r: usize, c: usize) -> Option<f64> {
        self.cells[r * self.n + c]
    }
}

/// Column assigned to each row, or `None` when no perfect assignment exists.
pub(crate) fn min_cost_assignment(m: &SquareMatrix) -> Option<Vec<usize>> {
    let n = m.n;
    if n == 0 {
        return Some(Vec::new());
    }
    // 1-based with a virtual column 0
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                if let Some(c) = m.get(i0 - 1, j - 1) {
                    let reduced = c - u[i0] - v[j];
                    if reduced < minv[j] {
                        minv[j] = reduced;
                        way[j] = j0;
                    }
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            if j1 == 0 {
                return None;
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[owner[j] - 1] = j - 1;
    }
    Some(assignment)
}
