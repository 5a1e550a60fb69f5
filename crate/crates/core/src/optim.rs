//! First-order and quasi-Newton update rules.

use std::collections::VecDeque;

use crate::error::{Error, Result};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `theta -= lr * grad`
pub fn gd_update(theta: &mut [f64], grad: &[f64], lr: f64) {
    for (t, g) in theta.iter_mut().zip(grad) {
        *t -= lr * g;
    }
}

/// Adam with bias-corrected moments.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn update(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..theta.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            theta[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub c1: f64,
    pub c2: f64,
    /// Function evaluations allowed per line search.
    pub max_evals: usize,
    pub max_iter: usize,
    /// Stop when the gradient's largest entry is below this.
    pub grad_tol: f64,
    /// Trial step for the first iteration (and after a history reset).
    pub initial_step: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            c1: 1e-4,
            c2: 0.9,
            max_evals: 40,
            max_iter: 1000,
            grad_tol: 1e-8,
            initial_step: 1.0,
        }
    }
}

/// Accepted point of one iteration.
#[derive(Clone, Debug)]
pub struct Step {
    pub f: f64,
    pub grad: Vec<f64>,
    pub evals: usize,
}

/// Limited-memory BFGS with a strong-Wolfe line search.
#[derive(Clone, Debug)]
pub struct Lbfgs {
    pub opts: LbfgsOptions,
    s: VecDeque<Vec<f64>>,
    y: VecDeque<Vec<f64>>,
    fresh: bool,
}

impl Lbfgs {
    pub fn new(opts: LbfgsOptions) -> Self {
        Self {
            opts,
            s: VecDeque::new(),
            y: VecDeque::new(),
            fresh: true,
        }
    }

    fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q = g.to_vec();
        let k = self.s.len();
        let mut alpha = vec![0.0; k];
        let rho: Vec<f64> = (0..k).map(|i| 1.0 / dot(&self.y[i], &self.s[i])).collect();
        for i in (0..k).rev() {
            alpha[i] = rho[i] * dot(&self.s[i], &q);
            for (qj, yj) in q.iter_mut().zip(&self.y[i]) {
                *qj -= alpha[i] * yj;
            }
        }
        if k > 0 {
            let gamma = dot(&self.s[k - 1], &self.y[k - 1]) / dot(&self.y[k - 1], &self.y[k - 1]);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for i in 0..k {
            let beta = rho[i] * dot(&self.y[i], &q);
            for (qj, sj) in q.iter_mut().zip(&self.s[i]) {
                *qj += (alpha[i] - beta) * sj;
            }
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }

    /// One iteration from `theta` (with value `f` and gradient `g`). Updates
    /// `theta` in place. Falls back to steepest descent, with the history
    /// cleared, when the quasi-Newton direction is unusable.
    pub fn step<F>(&mut self, f: &mut F, theta: &mut [f64], fx: f64, g: &[f64]) -> Result<Step>
    where
        F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
    {
        let mut d = self.direction(g);
        let mut slope = dot(g, &d);
        if !(slope < 0.0) || !slope.is_finite() {
            self.reset();
            d = g.iter().map(|v| -v).collect();
            slope = dot(g, &d);
        }
        let a0 = if self.fresh { self.opts.initial_step } else { 1.0 };
        let found = match strong_wolfe(f, theta, fx, &d, slope, a0, &self.opts) {
            Ok(found) => found,
            Err(e) if self.s.is_empty() => return Err(e),
            Err(_) => {
                self.reset();
                d = g.iter().map(|v| -v).collect();
                slope = dot(g, &d);
                strong_wolfe(f, theta, fx, &d, slope, self.opts.initial_step, &self.opts)?
            }
        };
        let (alpha, step) = found;
        let s: Vec<f64> = d.iter().map(|v| alpha * v).collect();
        let y: Vec<f64> = step.grad.iter().zip(g).map(|(a, b)| a - b).collect();
        for (t, si) in theta.iter_mut().zip(&s) {
            *t += si;
        }
        if dot(&s, &y) > 1e-10 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if self.s.len() == self.opts.memory {
                self.s.pop_front();
                self.y.pop_front();
            }
            self.s.push_back(s);
            self.y.push_back(y);
        }
        self.fresh = false;
        Ok(step)
    }

    pub fn reset(&mut self) {
        self.s.clear();
        self.y.clear();
        self.fresh = true;
    }
}

/// Line search satisfying the strong Wolfe conditions, by bracketing and
/// cubic-interpolation zoom. Returns the step length and the new point's data.
#[allow(clippy::too_many_arguments)]
fn strong_wolfe<F>(
    f: &mut F,
    x: &[f64],
    f0: f64,
    d: &[f64],
    dphi0: f64,
    alpha0: f64,
    opts: &LbfgsOptions,
) -> Result<(f64, Step)>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
{
    let n = x.len();
    let mut xt = vec![0.0; n];
    let mut gt = vec![0.0; n];
    let mut evals = 0;
    let mut phi = |a: f64, gt: &mut Vec<f64>, evals: &mut usize| -> Result<(f64, f64)> {
        for i in 0..n {
            xt[i] = x[i] + a * d[i];
        }
        *evals += 1;
        let v = f(&xt, gt)?;
        Ok((v, dot(gt, d)))
    };

    struct Pt {
        a: f64,
        f: f64,
        d: f64,
        g: Vec<f64>,
    }

    let mut prev = Pt {
        a: 0.0,
        f: f0,
        d: dphi0,
        g: Vec::new(),
    };
    let mut a = alpha0;
    let (mut lo, mut hi);
    loop {
        let (fa, da) = phi(a, &mut gt, &mut evals)?;
        let cur = Pt {
            a,
            f: fa,
            d: da,
            g: gt.clone(),
        };
        if !fa.is_finite() || fa > f0 + opts.c1 * a * dphi0 || (evals > 1 && fa >= prev.f) {
            lo = prev;
            hi = cur;
            break;
        }
        if da.abs() <= -opts.c2 * dphi0 {
            return Ok((a, Step { f: fa, grad: cur.g, evals }));
        }
        if da >= 0.0 {
            lo = cur;
            hi = prev;
            break;
        }
        if evals >= opts.max_evals {
            return Ok((a, Step { f: fa, grad: cur.g, evals }));
        }
        prev = cur;
        a *= 2.0;
    }

    loop {
        if evals >= opts.max_evals || (hi.a - lo.a).abs() < 1e-16 * lo.a.abs().max(1.0) {
            if lo.a > 0.0 {
                return Ok((lo.a, Step { f: lo.f, grad: lo.g, evals }));
            }
            return Err(Error::LineSearchFailed(format!(
                "no acceptable step after {evals} evaluations"
            )));
        }
        let a = interpolate(&lo, &hi);
        let (fa, da) = phi(a, &mut gt, &mut evals)?;
        let cur = Pt {
            a,
            f: fa,
            d: da,
            g: gt.clone(),
        };
        if !fa.is_finite() || fa > f0 + opts.c1 * a * dphi0 || fa >= lo.f {
            hi = cur;
        } else {
            if da.abs() <= -opts.c2 * dphi0 {
                return Ok((a, Step { f: fa, grad: cur.g, evals }));
            }
            if da * (hi.a - lo.a) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
    }

    fn interpolate(lo: &Pt, hi: &Pt) -> f64 {
        let (a0, a1) = (lo.a, hi.a);
        let width = a1 - a0;
        let bisect = a0 + 0.5 * width;
        if !hi.f.is_finite() || !hi.d.is_finite() {
            return bisect;
        }
        // Minimizer of the cubic through both values and slopes.
        let d1 = lo.d + hi.d - 3.0 * (lo.f - hi.f) / (a0 - a1);
        let disc = d1 * d1 - lo.d * hi.d;
        if disc < 0.0 {
            return bisect;
        }
        let d2 = width.signum() * disc.sqrt();
        let a = a1 - width * (hi.d + d2 - d1) / (hi.d - lo.d + 2.0 * d2);
        let (min, max) = (a0.min(a1), a0.max(a1));
        let margin = 0.1 * width.abs();
        if !a.is_finite() || a < min + margin || a > max - margin {
            bisect
        } else {
            a
        }
    }
}

/// Result of [`lbfgs_minimize`].
#[derive(Clone, Debug)]
pub struct Minimum {
    pub theta: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes `f` (value and gradient) from `theta0`.
pub fn lbfgs_minimize<F>(mut f: F, theta0: &[f64], opts: LbfgsOptions) -> Result<Minimum>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
{
    let mut theta = theta0.to_vec();
    let mut grad = vec![0.0; theta.len()];
    let mut fx = f(&theta, &mut grad)?;
    let mut opt = Lbfgs::new(opts);
    let mut it = 0;
    while it < opts.max_iter && inf_norm(&grad) > opts.grad_tol {
        let step = opt.step(&mut f, &mut theta, fx, &grad)?;
        fx = step.f;
        grad = step.grad;
        it += 1;
    }
    let converged = inf_norm(&grad) <= opts.grad_tol;
    Ok(Minimum {
        theta,
        f: fx,
        grad,
        iterations: it,
        converged,
    })
}
