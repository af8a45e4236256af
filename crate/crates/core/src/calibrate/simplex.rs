//! Dense two-phase primal simplex for `min c·x  s.t.  A x = b,  l <= x <= u`.
//!
//! Non-basic variables sit at either bound, so box constraints need no
//! extra rows. Phase one drives artificial variables to zero; they are
//! then fixed at zero for phase two. Pricing is Dantzig's rule, switching
//! to Bland's rule after a run of degenerate pivots.

const EPS: f64 = 1e-9;
const DEGENERATE_SWITCH: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub cost: Vec<f64>,
    /// Sparse equality rows `(coefficients, rhs)`.
    pub rows: Vec<(Vec<(usize, f64)>, f64)>,
    pub lower: Vec<f64>,
    /// `f64::INFINITY` for unbounded above.
    pub upper: Vec<f64>,
}

impl LinearProgram {
    pub fn new(n: usize) -> Self {
        Self {
            cost: vec![0.0; n],
            rows: Vec::new(),
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn add_var(&mut self, cost: f64, lower: f64, upper: f64) -> usize {
        self.cost.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.cost.len() - 1
    }

    pub fn add_row(&mut self, coefs: Vec<(usize, f64)>, rhs: f64) {
        self.rows.push((coefs, rhs));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, objective: f64, iterations: usize },
    Infeasible { iterations: usize },
    Unbounded { iterations: usize },
    IterationLimit { iterations: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Status {
    Basic,
    AtLower,
    AtUpper,
}

struct Tableau {
    m: usize,
    width: usize,
    t: Vec<f64>,
    beta: Vec<f64>,
    basis: Vec<usize>,
    status: Vec<Status>,
    ub: Vec<f64>,
    reduced: Vec<f64>,
    iterations: usize,
}

enum Step {
    Optimal,
    Unbounded,
    Continue,
}

impl Tableau {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.width + j]
    }

    fn price(&mut self, cost: &[f64]) {
        self.reduced.copy_from_slice(cost);
        for i in 0..self.m {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.t[i * self.width..(i + 1) * self.width];
                for (d, a) in self.reduced.iter_mut().zip(row) {
                    *d -= cb * a;
                }
            }
        }
    }

    fn entering(&self, bland: bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64, f64)> = None;
        for j in 0..self.width {
            let d = self.reduced[j];
            let sigma = match self.status[j] {
                Status::AtLower if d < -EPS && self.ub[j] > 0.0 => 1.0,
                Status::AtUpper if d > EPS => -1.0,
                _ => continue,
            };
            if bland {
                return Some((j, sigma));
            }
            if best.is_none_or(|(_, _, mag)| d.abs() > mag) {
                best = Some((j, sigma, d.abs()));
            }
        }
        best.map(|(j, s, _)| (j, s))
    }

    fn step(&mut self, bland: bool) -> (Step, bool) {
        let Some((j, sigma)) = self.entering(bland) else {
            return (Step::Optimal, false);
        };
        // Ratio test; `None` row means a bound flip of the entering variable.
        let mut theta = self.ub[j];
        let mut leave: Option<(usize, Status)> = None;
        for i in 0..self.m {
            let alpha = self.at(i, j) * sigma;
            let b = self.basis[i];
            let (limit, to) = if alpha > EPS {
                (self.beta[i].max(0.0) / alpha, Status::AtLower)
            } else if alpha < -EPS && self.ub[b].is_finite() {
                ((self.ub[b] - self.beta[i]).max(0.0) / -alpha, Status::AtUpper)
            } else {
                continue;
            };
            let better = if limit < theta - EPS {
                true
            } else if (limit - theta).abs() <= EPS {
                // Ties: keep a bound flip, otherwise smallest basic index.
                leave.is_some_and(|(r, _)| b < self.basis[r])
            } else {
                false
            };
            if better {
                theta = limit;
                leave = Some((i, to));
            }
        }
        if !theta.is_finite() {
            return (Step::Unbounded, false);
        }
        self.iterations += 1;
        for i in 0..self.m {
            let alpha = self.at(i, j) * sigma;
            self.beta[i] -= alpha * theta;
        }
        let degenerate = theta <= EPS;
        match leave {
            None => {
                self.status[j] = if sigma > 0.0 { Status::AtUpper } else { Status::AtLower };
            }
            Some((r, to)) => {
                let entering_value = if sigma > 0.0 { theta } else { self.ub[j] - theta };
                let leaving = self.basis[r];
                self.status[leaving] = to;
                self.pivot(r, j);
                self.basis[r] = j;
                self.status[j] = Status::Basic;
                self.beta[r] = entering_value;
            }
        }
        (Step::Continue, degenerate)
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let w = self.width;
        let p = self.t[r * w + j];
        for k in 0..w {
            self.t[r * w + k] /= p;
        }
        let (before, rest) = self.t.split_at_mut(r * w);
        let (prow, after) = rest.split_at_mut(w);
        for row in before.chunks_mut(w).chain(after.chunks_mut(w)) {
            let f = row[j];
            if f != 0.0 {
                for (x, y) in row.iter_mut().zip(prow.iter()) {
                    *x -= f * y;
                }
                row[j] = 0.0;
            }
        }
        let f = self.reduced[j];
        if f != 0.0 {
            for (x, y) in self.reduced.iter_mut().zip(prow.iter()) {
                *x -= f * y;
            }
            self.reduced[j] = 0.0;
        }
    }

    fn run(&mut self, cost: &[f64], limit: usize) -> Step {
        self.price(cost);
        let mut degenerate_run = 0;
        for _ in 0..limit {
            let (step, degenerate) = self.step(degenerate_run >= DEGENERATE_SWITCH);
            match step {
                Step::Continue => {
                    degenerate_run = if degenerate { degenerate_run + 1 } else { 0 };
                }
                other => return other,
            }
        }
        Step::Continue
    }

    fn values(&self) -> Vec<f64> {
        let mut x: Vec<f64> = (0..self.width)
            .map(|j| match self.status[j] {
                Status::AtUpper => self.ub[j],
                _ => 0.0,
            })
            .collect();
        for i in 0..self.m {
            x[self.basis[i]] = self.beta[i];
        }
        x
    }
}

pub fn solve(lp: &LinearProgram) -> LpOutcome {
    let n = lp.cost.len();
    let m = lp.rows.len();
    let width = n + m;
    let ub_shift: Vec<f64> = (0..n).map(|j| lp.upper[j] - lp.lower[j]).collect();
    if ub_shift.iter().any(|u| *u < -EPS) {
        return LpOutcome::Infeasible { iterations: 0 };
    }

    let mut t = vec![0.0; m * width];
    let mut beta = vec![0.0; m];
    for (i, (coefs, rhs)) in lp.rows.iter().enumerate() {
        let mut b = *rhs;
        for &(j, a) in coefs {
            t[i * width + j] += a;
            b -= a * lp.lower[j];
        }
        if b < 0.0 {
            for k in 0..n {
                t[i * width + k] = -t[i * width + k];
            }
            b = -b;
        }
        t[i * width + n + i] = 1.0;
        beta[i] = b;
    }
    let mut ub: Vec<f64> = ub_shift.iter().map(|u| u.max(0.0)).collect();
    ub.extend(std::iter::repeat_n(f64::INFINITY, m));
    let mut status = vec![Status::AtLower; width];
    for s in &mut status[n..] {
        *s = Status::Basic;
    }
    let mut tab = Tableau {
        m,
        width,
        t,
        beta,
        basis: (n..width).collect(),
        status,
        ub,
        reduced: vec![0.0; width],
        iterations: 0,
    };
    let limit = 50 * (width + m) + 10_000;

    let mut phase1 = vec![0.0; width];
    for c in &mut phase1[n..] {
        *c = 1.0;
    }
    if let Step::Continue = tab.run(&phase1, limit) {
        return LpOutcome::IterationLimit {
            iterations: tab.iterations,
        };
    }
    let infeasibility: f64 = tab.values()[n..].iter().sum();
    let scale = 1.0 + lp.rows.iter().map(|(_, b)| b.abs()).fold(0.0, f64::max);
    if infeasibility > 1e-7 * scale {
        return LpOutcome::Infeasible {
            iterations: tab.iterations,
        };
    }
    for j in n..width {
        tab.ub[j] = 0.0;
        if tab.status[j] == Status::AtUpper {
            tab.status[j] = Status::AtLower;
        }
    }

    let mut phase2 = lp.cost.clone();
    phase2.extend(std::iter::repeat_n(0.0, m));
    match tab.run(&phase2, limit) {
        Step::Unbounded => LpOutcome::Unbounded {
            iterations: tab.iterations,
        },
        Step::Continue => LpOutcome::IterationLimit {
            iterations: tab.iterations,
        },
        Step::Optimal => {
            let y = tab.values();
            let x: Vec<f64> = (0..n).map(|j| y[j] + lp.lower[j]).collect();
            let objective = x.iter().zip(&lp.cost).map(|(a, c)| a * c).sum();
            LpOutcome::Optimal {
                x,
                objective,
                iterations: tab.iterations,
            }
        }
    }
}
