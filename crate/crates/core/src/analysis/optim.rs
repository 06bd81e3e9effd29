//! BFGS minimiser with a strong-Wolfe line search.

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop once the gradient max-norm falls below this.
    pub gtol: f64,
    /// Stop once an accepted step lowers the objective by less than this
    /// fraction of its magnitude.
    pub ftol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            gtol: 1e-9,
            ftol: 1e-14,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    /// Objective after the start point and after every accepted step.
    pub trace: Vec<f64>,
    pub reason: StopReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    GradientTolerance,
    FunctionTolerance,
    MaxIterations,
    LineSearchFailed,
    NonFiniteStart,
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(x: &[f64], a: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(xi, di)| xi + a * di).collect()
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;
/// Relative rounding level assumed for objective values.
const NOISE: f64 = 1e-12;

struct Probe {
    alpha: f64,
    f: f64,
    g: Vec<f64>,
    slope: f64,
}

struct LineSearch<'a, F> {
    f: &'a mut F,
    x: &'a [f64],
    d: &'a [f64],
    f0: f64,
    slope0: f64,
    /// Objective differences below this are treated as rounding noise.
    eps: f64,
    evals: usize,
}

impl<F: FnMut(&[f64]) -> (f64, Vec<f64>)> LineSearch<'_, F> {
    const MAX_EVALS: usize = 30;

    fn probe(&mut self, alpha: f64) -> Probe {
        self.evals += 1;
        let (f, g) = (self.f)(&axpy(self.x, alpha, self.d));
        let slope = dot(&g, self.d);
        Probe { alpha, f, g, slope }
    }

    /// Sufficient decrease, or the approximate Wolfe condition when the
    /// change in `f` is lost in rounding.
    fn armijo(&self, p: &Probe) -> bool {
        p.f.is_finite()
            && (p.f <= self.f0 + C1 * p.alpha * self.slope0
                || (p.f <= self.f0 + self.eps && p.slope <= (2.0 * C1 - 1.0) * self.slope0))
    }

    fn curvature(&self, p: &Probe) -> bool {
        p.slope.abs() <= -C2 * self.slope0
    }

    fn run(&mut self, alpha0: f64) -> Option<Probe> {
        let lo = Probe {
            alpha: 0.0,
            f: self.f0,
            g: Vec::new(),
            slope: self.slope0,
        };
        let mut prev = lo;
        let mut alpha = alpha0;
        let mut first = true;
        while self.evals < Self::MAX_EVALS {
            let p = self.probe(alpha);
            if !self.armijo(&p) || (!first && p.f > prev.f + self.eps) {
                return self.zoom(prev, p);
            }
            if self.curvature(&p) {
                return Some(p);
            }
            if p.slope >= 0.0 {
                return self.zoom(p, prev);
            }
            first = false;
            alpha = p.alpha * 2.0;
            prev = p;
        }
        None
    }

    /// `lo` satisfies sufficient decrease; the minimiser lies between `lo` and `hi`.
    fn zoom(&mut self, mut lo: Probe, mut hi: Probe) -> Option<Probe> {
        while self.evals < Self::MAX_EVALS {
            let width = hi.alpha - lo.alpha;
            let mut alpha = if hi.f.is_finite() {
                // minimiser of the quadratic through f(lo), f'(lo), f(hi)
                let denom = 2.0 * (hi.f - lo.f - lo.slope * width);
                if denom > 0.0 {
                    lo.alpha - lo.slope * width * width / denom
                } else {
                    lo.alpha + 0.5 * width
                }
            } else {
                lo.alpha + 0.5 * width
            };
            let (a, b) = if lo.alpha < hi.alpha {
                (lo.alpha, hi.alpha)
            } else {
                (hi.alpha, lo.alpha)
            };
            let margin = 0.1 * (b - a);
            if !alpha.is_finite() || alpha < a + margin || alpha > b - margin {
                alpha = lo.alpha + 0.5 * width;
            }
            if (b - a) < 1e-12 * b.abs().max(1.0) {
                break;
            }
            let p = self.probe(alpha);
            if !self.armijo(&p) || p.f > lo.f + self.eps {
                hi = p;
            } else {
                if self.curvature(&p) {
                    return Some(p);
                }
                if p.slope * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = p;
            }
        }
        // fall back to the best point with sufficient decrease
        (lo.alpha > 0.0).then_some(lo)
    }
}

/// Minimises `f`, which returns the objective and its gradient.
pub fn minimize<F>(f: F, x0: &[f64], options: BfgsOptions) -> BfgsResult
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    minimize_preconditioned(f, x0, None, options)
}

/// As [`minimize`], starting from a given inverse-Hessian approximation
/// (symmetric positive definite) instead of a scaled identity.
pub fn minimize_preconditioned<F>(
    mut f: F,
    x0: &[f64],
    inverse_hessian: Option<Vec<Vec<f64>>>,
    options: BfgsOptions,
) -> BfgsResult
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut fx, mut g) = f(&x);
    let mut trace = vec![fx];
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return BfgsResult {
            x,
            f: fx,
            grad: g,
            iterations: 0,
            trace,
            reason: StopReason::NonFiniteStart,
        };
    }
    let identity = |n: usize| {
        let mut h = vec![vec![0.0; n]; n];
        for (i, row) in h.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        h
    };
    let mut fresh = inverse_hessian.is_none();
    let mut h_inv = inverse_hessian.unwrap_or_else(|| identity(n));
    let mut iterations = 0;
    let mut reason = StopReason::MaxIterations;

    while iterations < options.max_iter {
        if max_abs(&g) < options.gtol {
            reason = StopReason::GradientTolerance;
            break;
        }
        let mut d: Vec<f64> = h_inv.iter().map(|row| -dot(row, &g)).collect();
        let mut slope = dot(&g, &d);
        if slope.is_nan() || slope >= 0.0 {
            h_inv = identity(n);
            fresh = true;
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
        }
        let alpha0 = if fresh {
            (1.0 / max_abs(&d)).min(1.0)
        } else {
            1.0
        };
        let step = LineSearch {
            f: &mut f,
            x: &x,
            d: &d,
            f0: fx,
            slope0: slope,
            eps: NOISE * fx.abs().max(1.0),
            evals: 0,
        }
        .run(alpha0);
        let Some(step) = step else {
            if fresh {
                reason = StopReason::LineSearchFailed;
                break;
            }
            h_inv = identity(n);
            fresh = true;
            continue;
        };
        iterations += 1;
        let decrease = fx - step.f;
        let s: Vec<f64> = d.iter().map(|v| v * step.alpha).collect();
        let yv: Vec<f64> = step.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        x = axpy(&x, step.alpha, &d);
        fx = step.f;
        g = step.g;
        trace.push(fx);
        if decrease <= options.ftol * fx.abs().max(1.0) && max_abs(&g) >= options.gtol {
            reason = StopReason::FunctionTolerance;
            break;
        }

        let sy = dot(&s, &yv);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&yv, &yv).sqrt() {
            if fresh {
                let scale = sy / dot(&yv, &yv);
                for (i, row) in h_inv.iter_mut().enumerate() {
                    row.iter_mut().for_each(|v| *v = 0.0);
                    row[i] = scale;
                }
            }
            bfgs_update(&mut h_inv, &s, &yv, sy);
            fresh = false;
        }
    }
    if reason == StopReason::MaxIterations && max_abs(&g) < options.gtol {
        reason = StopReason::GradientTolerance;
    }
    BfgsResult {
        x,
        f: fx,
        grad: g,
        iterations,
        trace,
        reason,
    }
}

/// `H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ` with `ρ = 1 / yᵀs`.
fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = h.iter().map(|row| dot(row, y)).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            (
                (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2),
                vec![
                    -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                    200.0 * (b - a * a),
                ],
            )
        };
        let r = minimize(f, &[-1.2, 1.0], BfgsOptions::default());
        assert_eq!(r.reason, StopReason::GradientTolerance);
        assert!((r.x[0] - 1.0).abs() < 1e-8 && (r.x[1] - 1.0).abs() < 1e-8);
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn recovers_from_non_finite_region() {
        // -ln(x) + x has its minimum at 1 and is undefined for x <= 0
        let f = |x: &[f64]| {
            if x[0] <= 0.0 {
                (f64::NAN, vec![f64::NAN])
            } else {
                (-x[0].ln() + x[0], vec![-1.0 / x[0] + 1.0])
            }
        };
        let r = minimize(f, &[0.05], BfgsOptions::default());
        assert!((r.x[0] - 1.0).abs() < 1e-8, "{:?}", r);
    }

    #[test]
    fn quadratic_needs_few_iterations() {
        let f = |x: &[f64]| {
            let v = 3.0 * x[0] * x[0] + x[0] * x[1] + 2.0 * x[1] * x[1] - x[0];
            (v, vec![6.0 * x[0] + x[1] - 1.0, x[0] + 4.0 * x[1]])
        };
        let r = minimize(f, &[5.0, -5.0], BfgsOptions::default());
        assert!(r.iterations < 15);
        assert!(max_abs(&r.grad) < 1e-9);
    }
}
