//! Levenberg-Marquardt over dense normal equations.

use nalgebra::{DMatrix, DVector};

use crate::jet::Jet;

/// `J^T J`, `J^T r` and `sum r^2` at one parameter vector.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    pub jtj: DMatrix<f64>,
    pub jtr: DVector<f64>,
    pub cost: f64,
}

impl NormalEquations {
    pub fn zeros(n: usize) -> Self {
        Self {
            jtj: DMatrix::zeros(n, n),
            jtr: DVector::zeros(n),
            cost: 0.0,
        }
    }

    pub fn add_residual<const N: usize>(&mut self, r: &Jet<N>) {
        debug_assert_eq!(N, self.jtr.len());
        for i in 0..N {
            if r.d[i] == 0.0 {
                continue;
            }
            self.jtr[i] += r.d[i] * r.v;
            for j in 0..N {
                self.jtj[(i, j)] += r.d[i] * r.d[j];
            }
        }
        self.cost += r.v * r.v;
    }

    pub fn merge(mut self, other: &Self) -> Self {
        self.jtj += &other.jtj;
        self.jtr += &other.jtr;
        self.cost += other.cost;
        self
    }
}

pub trait Problem {
    fn num_params(&self) -> usize;
    /// Sum of squared residuals.
    fn cost(&self, p: &[f64]) -> f64;
    fn normal_equations(&self, p: &[f64]) -> NormalEquations;
    /// Projects parameters back onto the feasible set.
    fn project(&self, _p: &mut [f64]) {}
}

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iterations: usize,
    pub initial_lambda: f64,
    /// Stop when an accepted step lowers the cost by less than this fraction.
    pub relative_tolerance: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            initial_lambda: 1e-3,
            relative_tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmReport {
    pub params: Vec<f64>,
    /// Cost at the start followed by the cost after every accepted step.
    pub costs: Vec<f64>,
    pub iterations: usize,
}

impl LmReport {
    pub fn final_cost(&self) -> f64 {
        *self.costs.last().unwrap()
    }
}

pub fn minimize<P: Problem + ?Sized>(problem: &P, start: &[f64], opts: &LmOptions) -> LmReport {
    let n = problem.num_params();
    let mut p = start.to_vec();
    problem.project(&mut p);
    let mut ne = problem.normal_equations(&p);
    let mut costs = vec![ne.cost];
    let mut lambda = opts.initial_lambda;
    let mut iterations = 0;
    while iterations < opts.max_iterations && ne.cost > 0.0 {
        iterations += 1;
        let mut a = ne.jtj.clone();
        for i in 0..n {
            let d = ne.jtj[(i, i)].max(1e-12);
            a[(i, i)] += lambda * d;
        }
        let Some(step) = a.cholesky().map(|c| c.solve(&(-&ne.jtr))) else {
            lambda *= 10.0;
            if lambda > 1e16 {
                break;
            }
            continue;
        };
        let mut trial: Vec<f64> = p.iter().zip(step.iter()).map(|(x, d)| x + d).collect();
        problem.project(&mut trial);
        let c = problem.cost(&trial);
        if c.is_finite() && c < ne.cost {
            let rel = (ne.cost - c) / ne.cost;
            p = trial;
            ne = problem.normal_equations(&p);
            costs.push(ne.cost);
            lambda = (lambda / 3.0).max(1e-12);
            if rel < opts.relative_tolerance {
                break;
            }
        } else {
            lambda *= 4.0;
            if lambda > 1e16 {
                break;
            }
        }
    }
    LmReport {
        params: p,
        costs,
        iterations,
    }
}
