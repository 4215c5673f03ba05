//! Exact discrete transport by the transportation simplex method.
//!
//! Slow and careful: this is the reference every closed-form EMD in
//! [`crate::losses`] is checked against. The basis is kept as a spanning tree
//! of `m + n − 1` cells (zero-flow cells included), prices come from MODI
//! `u_i + v_j = c_ij` on the tree, and both entering and leaving cells are
//! chosen by Bland's smallest-index rule so degenerate pivots cannot cycle.

use std::collections::VecDeque;

use crate::error::{check_len, Error, Result};
use crate::matrix::Matrix;

/// Largest class count the oracle is meant for.
pub const MAX_ORACLE_SIZE: usize = 64;

/// Supplies, demands and per-route costs.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportProblem {
    pub supply: Vec<f64>,
    pub demand: Vec<f64>,
    pub cost: Matrix,
}

impl TransportProblem {
    pub fn new(supply: Vec<f64>, demand: Vec<f64>, cost: Matrix) -> Result<Self> {
        check_len("transport cost rows", supply.len(), cost.rows())?;
        check_len("transport cost cols", demand.len(), cost.cols())?;
        if supply.is_empty() || demand.is_empty() {
            return Err(Error::InvalidInput("transport problem needs at least one supplier and consumer".into()));
        }
        if supply.len() > MAX_ORACLE_SIZE || demand.len() > MAX_ORACLE_SIZE {
            return Err(Error::InvalidInput(format!(
                "transport oracle supports at most {MAX_ORACLE_SIZE} nodes per side"
            )));
        }
        for v in supply.iter().chain(&demand) {
            if !v.is_finite() || *v < 0.0 {
                return Err(Error::InvalidInput(format!("mass {v} is negative or not finite")));
            }
        }
        for v in cost.as_slice() {
            if !v.is_finite() || *v < 0.0 {
                return Err(Error::InvalidInput(format!("cost {v} is negative or not finite")));
            }
        }
        let problem = TransportProblem { supply, demand, cost };
        if problem.total_supply() <= 0.0 && problem.total_demand() <= 0.0 {
            return Err(Error::InvalidInput("both sides of the transport problem have zero mass".into()));
        }
        Ok(problem)
    }

    pub fn total_supply(&self) -> f64 {
        self.supply.iter().sum()
    }

    pub fn total_demand(&self) -> f64 {
        self.demand.iter().sum()
    }
}

/// Optimal flow with the MODI duals that certify it.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan {
    pub flow: Matrix,
    pub total_cost: f64,
    /// Row potentials of the balanced problem (slack row, if any, excluded).
    pub u: Vec<f64>,
    /// Column potentials of the balanced problem (slack column, if any, excluded).
    pub v: Vec<f64>,
    pub pivots: usize,
}

impl TransportPlan {
    pub fn total_flow(&self) -> f64 {
        self.flow.as_slice().iter().sum()
    }

    /// Checks nonnegativity, row/column capacity, total flow and cost
    /// consistency at absolute tolerance `tol`.
    pub fn check_feasible(&self, problem: &TransportProblem, tol: f64) -> std::result::Result<(), String> {
        let f = &self.flow;
        if let Some((idx, v)) = f.as_slice().iter().enumerate().find(|(_, v)| **v < 0.0) {
            return Err(format!("negative flow {v} at cell {idx}"));
        }
        for i in 0..f.rows() {
            let s: f64 = f.row(i).iter().sum();
            if s > problem.supply[i] + tol {
                return Err(format!("row {i} ships {s} > supply {}", problem.supply[i]));
            }
        }
        for j in 0..f.cols() {
            let s: f64 = (0..f.rows()).map(|i| f[(i, j)]).sum();
            if s > problem.demand[j] + tol {
                return Err(format!("column {j} receives {s} > demand {}", problem.demand[j]));
            }
        }
        let expected = problem.total_supply().min(problem.total_demand());
        if (self.total_flow() - expected).abs() > tol {
            return Err(format!("total flow {} != {expected}", self.total_flow()));
        }
        let cost: f64 = f.as_slice().iter().zip(problem.cost.as_slice()).map(|(a, b)| a * b).sum();
        if (cost - self.total_cost).abs() > tol {
            return Err(format!("reported cost {} != recomputed {cost}", self.total_cost));
        }
        Ok(())
    }

    /// Largest violation of `u_i + v_j ≤ c_ij` over all cells; nonpositive
    /// (up to rounding) at an optimum.
    pub fn max_dual_violation(&self, problem: &TransportProblem) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for i in 0..self.u.len() {
            for j in 0..self.v.len() {
                worst = worst.max(self.u[i] + self.v[j] - problem.cost[(i, j)]);
            }
        }
        worst
    }
}

struct Balanced {
    supply: Vec<f64>,
    demand: Vec<f64>,
    cost: Matrix,
    rows: usize,
    cols: usize,
}

fn balance(problem: &TransportProblem) -> Balanced {
    let (rows, cols) = (problem.supply.len(), problem.demand.len());
    let excess = problem.total_supply() - problem.total_demand();
    let mut supply = problem.supply.clone();
    let mut demand = problem.demand.clone();
    let (m, n) = if excess > 0.0 {
        demand.push(excess);
        (rows, cols + 1)
    } else if excess < 0.0 {
        supply.push(-excess);
        (rows + 1, cols)
    } else {
        (rows, cols)
    };
    let cost = Matrix::from_fn(m, n, |i, j| if i < rows && j < cols { problem.cost[(i, j)] } else { 0.0 });
    Balanced {
        supply,
        demand,
        cost,
        rows,
        cols,
    }
}

struct Basis {
    m: usize,
    n: usize,
    flow: Matrix,
    basic: Vec<bool>,
    cells: Vec<(usize, usize)>,
}

impl Basis {
    /// Northwest-corner start; advances exactly one index per step so the
    /// basis always has `m + n − 1` cells, some possibly at zero flow.
    fn northwest(supply: &[f64], demand: &[f64]) -> Basis {
        let (m, n) = (supply.len(), demand.len());
        let mut flow = Matrix::zeros(m, n);
        let mut basic = vec![false; m * n];
        let mut cells = Vec::with_capacity(m + n - 1);
        let mut s = supply.to_vec();
        let mut d = demand.to_vec();
        let (mut i, mut j) = (0, 0);
        loop {
            let x = s[i].min(d[j]).max(0.0);
            flow[(i, j)] = x;
            basic[i * n + j] = true;
            cells.push((i, j));
            s[i] -= x;
            d[j] -= x;
            if i == m - 1 && j == n - 1 {
                break;
            }
            if j == n - 1 || (i < m - 1 && s[i] <= d[j]) {
                i += 1;
            } else {
                j += 1;
            }
        }
        Basis { m, n, flow, basic, cells }
    }

    fn potentials(&self, cost: &Matrix) -> (Vec<f64>, Vec<f64>) {
        let (m, n) = (self.m, self.n);
        let adj = self.adjacency();
        let mut u = vec![f64::NAN; m];
        let mut v = vec![f64::NAN; n];
        u[0] = 0.0;
        let mut queue = VecDeque::from([0usize]);
        while let Some(node) = queue.pop_front() {
            for &next in &adj[node] {
                if node < m {
                    let j = next - m;
                    if v[j].is_nan() {
                        v[j] = cost[(node, j)] - u[node];
                        queue.push_back(next);
                    }
                } else {
                    let i = next;
                    if u[i].is_nan() {
                        u[i] = cost[(i, node - m)] - v[node - m];
                        queue.push_back(next);
                    }
                }
            }
        }
        (u, v)
    }

    /// Nodes `0..m` are rows, `m..m+n` columns.
    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.m + self.n];
        for &(i, j) in &self.cells {
            adj[i].push(self.m + j);
            adj[self.m + j].push(i);
        }
        adj
    }

    /// Tree path from row `i` to column `j`, returned as cells in order.
    fn path(&self, i: usize, j: usize) -> Vec<(usize, usize)> {
        let adj = self.adjacency();
        let target = self.m + j;
        let mut parent = vec![usize::MAX; self.m + self.n];
        parent[i] = i;
        let mut queue = VecDeque::from([i]);
        while let Some(node) = queue.pop_front() {
            if node == target {
                break;
            }
            for &next in &adj[node] {
                if parent[next] == usize::MAX {
                    parent[next] = node;
                    queue.push_back(next);
                }
            }
        }
        let mut cells = Vec::new();
        let mut node = target;
        while node != i {
            let prev = parent[node];
            let cell = if prev < self.m { (prev, node - self.m) } else { (node, prev - self.m) };
            cells.push(cell);
            node = prev;
        }
        cells.reverse();
        cells
    }
}

/// Solves the transport problem exactly.
///
/// Unequal totals are balanced with a zero-cost slack row or column, so the
/// shipped mass equals `min(total supply, total demand)`.
pub fn solve_transport(problem: &TransportProblem) -> Result<TransportPlan> {
    let bal = balance(problem);
    let (m, n) = (bal.supply.len(), bal.demand.len());
    let mut basis = Basis::northwest(&bal.supply, &bal.demand);
    let scale = bal.cost.as_slice().iter().fold(1.0f64, |a, b| a.max(b.abs()));
    let tol = 1e-12 * scale;
    // Bland's rule terminates; this bound only guards against a logic error.
    let max_pivots = 50 * (m * n).pow(2) + 1000;
    let mut pivots = 0;

    loop {
        let (u, v) = basis.potentials(&bal.cost);
        let entering = (0..m * n).find(|&idx| {
            let (i, j) = (idx / n, idx % n);
            !basis.basic[idx] && bal.cost[(i, j)] - u[i] - v[j] < -tol
        });
        let Some(idx) = entering else {
            let flow = Matrix::from_fn(bal.rows, bal.cols, |i, j| basis.flow[(i, j)]);
            let total_cost = flow
                .as_slice()
                .iter()
                .zip(problem.cost.as_slice())
                .map(|(f, c)| f * c)
                .sum();
            return Ok(TransportPlan {
                flow,
                total_cost,
                u: u[..bal.rows].to_vec(),
                v: v[..bal.cols].to_vec(),
                pivots,
            });
        };
        if pivots >= max_pivots {
            return Err(Error::NumericalFailure(format!(
                "transportation simplex exceeded {max_pivots} pivots"
            )));
        }
        pivots += 1;

        let (ei, ej) = (idx / n, idx % n);
        // cycle: entering cell (+), then the tree path from row ei to column ej
        // whose cells alternate −, +, −, ...
        let path = basis.path(ei, ej);
        let minus: Vec<(usize, usize)> = path.iter().copied().step_by(2).collect();
        let plus: Vec<(usize, usize)> = path.iter().copied().skip(1).step_by(2).collect();
        let theta = minus.iter().map(|&(i, j)| basis.flow[(i, j)]).fold(f64::INFINITY, f64::min);
        let leaving = minus
            .iter()
            .copied()
            .filter(|&(i, j)| basis.flow[(i, j)] == theta)
            .min_by_key(|&(i, j)| i * n + j)
            .ok_or_else(|| Error::NumericalFailure("empty pivot cycle".into()))?;

        for &(i, j) in &minus {
            basis.flow[(i, j)] -= theta;
        }
        basis.flow[(leaving.0, leaving.1)] = 0.0;
        for &(i, j) in &plus {
            basis.flow[(i, j)] += theta;
        }
        basis.flow[(ei, ej)] = theta;

        basis.basic[leaving.0 * n + leaving.1] = false;
        basis.basic[idx] = true;
        let slot = basis
            .cells
            .iter()
            .position(|&c| c == leaving)
            .ok_or_else(|| Error::NumericalFailure("leaving cell not in basis".into()))?;
        basis.cells[slot] = (ei, ej);
    }
}

/// Minimum transport cost divided by the total flow.
pub fn emd_exact(supply: &[f64], demand: &[f64], cost: &Matrix) -> Result<f64> {
    if supply.iter().sum::<f64>() == 0.0 && demand.iter().sum::<f64>() == 0.0 {
        return Err(Error::UndefinedDistance);
    }
    let problem = TransportProblem::new(supply.to_vec(), demand.to_vec(), cost.clone())?;
    let plan = solve_transport(&problem)?;
    let flow = plan.total_flow();
    if !(flow > 0.0) {
        return Err(Error::UndefinedDistance);
    }
    Ok(plan.total_cost / flow)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abs_cost(n: usize) -> Matrix {
        Matrix::from_fn(n, n, |i, j| i.abs_diff(j) as f64)
    }

    #[test]
    fn self_transport_is_free() {
        let mass = vec![0.2, 0.3, 0.5];
        let p = TransportProblem::new(mass.clone(), mass, abs_cost(3)).unwrap();
        let plan = solve_transport(&p).unwrap();
        assert_eq!(plan.total_cost, 0.0);
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert_eq!(plan.flow[(i, j)], 0.0);
                }
            }
        }
        plan.check_feasible(&p, 1e-12).unwrap();
    }

    #[test]
    fn forced_single_route() {
        let cost = Matrix::from_rows(&[vec![0.0, 3.0], vec![3.0, 0.0]]).unwrap();
        let p = TransportProblem::new(vec![1.0, 0.0], vec![0.0, 1.0], cost).unwrap();
        let plan = solve_transport(&p).unwrap();
        assert_eq!(plan.flow[(0, 1)], 1.0);
        assert_eq!(plan.total_cost, 3.0);
    }

    #[test]
    fn emd_exact_examples() {
        let c = abs_cost(3);
        assert_eq!(emd_exact(&[0.0, 0.0, 1.0], &[1.0, 0.0, 0.0], &c).unwrap(), 2.0);
        assert_eq!(emd_exact(&[0.1, 0.6, 0.3], &[0.1, 0.6, 0.3], &c).unwrap(), 0.0);
    }

    #[test]
    fn unbalanced_ships_the_smaller_total() {
        let c = abs_cost(2);
        let p = TransportProblem::new(vec![2.0, 0.0], vec![0.5, 0.5], c.clone()).unwrap();
        let plan = solve_transport(&p).unwrap();
        plan.check_feasible(&p, 1e-12).unwrap();
        assert_eq!(plan.total_cost, 0.5);
        // excess demand: supply side is the binding one
        let p = TransportProblem::new(vec![0.0, 0.25], vec![1.0, 1.0], c).unwrap();
        let plan = solve_transport(&p).unwrap();
        plan.check_feasible(&p, 1e-12).unwrap();
        assert_eq!(plan.total_cost, 0.0);
        assert_eq!(emd_exact(&[0.0, 0.5], &[1.0, 0.0], &abs_cost(2)).unwrap(), 1.0);
    }

    #[test]
    fn zero_flow_is_undefined() {
        let c = abs_cost(2);
        assert!(matches!(emd_exact(&[0.0, 0.0], &[1.0, 0.0], &c), Err(Error::UndefinedDistance)));
        assert!(matches!(emd_exact(&[0.0, 0.0], &[0.0, 0.0], &c), Err(Error::UndefinedDistance)));
    }

    #[test]
    fn rejects_bad_problems() {
        let c = abs_cost(2);
        assert!(TransportProblem::new(vec![-1.0, 2.0], vec![0.5, 0.5], c.clone()).is_err());
        assert!(TransportProblem::new(vec![1.0], vec![0.5, 0.5], c).is_err());
    }

    #[test]
    fn degenerate_ties_terminate() {
        // every partial sum coincides, so many northwest steps are degenerate
        let mass = vec![0.25; 4];
        let cost = Matrix::from_fn(4, 4, |i, j| ((i * 7 + j * 3) % 5) as f64);
        let p = TransportProblem::new(mass.clone(), mass, cost).unwrap();
        let plan = solve_transport(&p).unwrap();
        plan.check_feasible(&p, 1e-12).unwrap();
        assert!(plan.max_dual_violation(&p) <= 1e-12);
    }
}
