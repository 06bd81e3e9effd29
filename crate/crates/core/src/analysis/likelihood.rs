//! Beta log-likelihood with logit mean link, parameterised by `(β, ln φ)`.

use nalgebra::{DMatrix, DVector};

use super::special::{digamma, ln_gamma, logistic, trigamma};

/// Log-likelihood of responses `y ∈ (0,1)` given a design matrix.
///
/// The parameter vector is `[β₀, …, β_{p−1}, ln φ]`.
#[derive(Debug, Clone)]
pub struct BetaLikelihood<'a> {
    x: &'a DMatrix<f64>,
    ln_y: Vec<f64>,
    ln_1my: Vec<f64>,
}

struct RowTerms {
    mu: f64,
    one_minus_mu: f64,
    ystar_minus_mustar: f64,
}

impl<'a> BetaLikelihood<'a> {
    /// Panics if `y` and `x` disagree on the number of rows.
    pub fn new(x: &'a DMatrix<f64>, y: &[f64]) -> Self {
        assert_eq!(x.nrows(), y.len(), "design rows must match responses");
        Self {
            x,
            ln_y: y.iter().map(|v| v.ln()).collect(),
            ln_1my: y.iter().map(|v| (-v).ln_1p()).collect(),
        }
    }

    pub fn n_obs(&self) -> usize {
        self.x.nrows()
    }

    /// Number of parameters including `ln φ`.
    pub fn dim(&self) -> usize {
        self.x.ncols() + 1
    }

    fn linear_predictor(&self, theta: &[f64]) -> DVector<f64> {
        let p = self.x.ncols();
        let beta = DVector::from_column_slice(&theta[..p]);
        self.x * beta
    }

    fn split(eta: f64) -> (f64, f64) {
        (logistic(eta), logistic(-eta))
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        assert_eq!(theta.len(), self.dim());
        let phi = theta[self.dim() - 1].exp();
        let eta = self.linear_predictor(theta);
        let lg_phi = ln_gamma(phi);
        let mut total = 0.0;
        for i in 0..self.n_obs() {
            let (mu, omu) = Self::split(eta[i]);
            let a = mu * phi;
            let b = omu * phi;
            total += lg_phi - ln_gamma(a) - ln_gamma(b)
                + (a - 1.0) * self.ln_y[i]
                + (b - 1.0) * self.ln_1my[i];
        }
        if total.is_nan() {
            f64::NEG_INFINITY
        } else {
            total
        }
    }

    fn row_terms(&self, i: usize, eta: f64, phi: f64) -> RowTerms {
        let (mu, omu) = Self::split(eta);
        let ystar = self.ln_y[i] - self.ln_1my[i];
        let mustar = digamma(mu * phi) - digamma(omu * phi);
        RowTerms {
            mu,
            one_minus_mu: omu,
            ystar_minus_mustar: ystar - mustar,
        }
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        self.value_and_gradient(theta).1
    }

    /// Value and gradient in one pass over the rows.
    pub fn value_and_gradient(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        assert_eq!(theta.len(), self.dim());
        let p = self.x.ncols();
        let phi = theta[p].exp();
        let eta = self.linear_predictor(theta);
        let lg_phi = ln_gamma(phi);
        let psi_phi = digamma(phi);
        let mut grad = vec![0.0; p + 1];
        let mut value = 0.0;
        let mut d_phi = 0.0;
        for i in 0..self.n_obs() {
            let (mu, omu) = Self::split(eta[i]);
            let (a, b) = (mu * phi, omu * phi);
            value += lg_phi - ln_gamma(a) - ln_gamma(b)
                + (a - 1.0) * self.ln_y[i]
                + (b - 1.0) * self.ln_1my[i];
            let psi_b = digamma(b);
            let resid = self.ln_y[i] - self.ln_1my[i] - (digamma(a) - psi_b);
            let w = phi * resid * mu * omu;
            for (j, g) in grad.iter_mut().take(p).enumerate() {
                *g += w * self.x[(i, j)];
            }
            d_phi += mu * resid + self.ln_1my[i] - psi_b + psi_phi;
        }
        grad[p] = phi * d_phi;
        if value.is_nan() {
            value = f64::NEG_INFINITY;
        }
        (value, grad)
    }

    /// Observed Hessian of the log-likelihood with respect to `(β, ln φ)`.
    pub fn hessian(&self, theta: &[f64]) -> DMatrix<f64> {
        assert_eq!(theta.len(), self.dim());
        let p = self.x.ncols();
        let phi = theta[p].exp();
        let eta = self.linear_predictor(theta);
        let psi_phi = digamma(phi);
        let tri_phi = trigamma(phi);
        let mut h = DMatrix::zeros(p + 1, p + 1);
        let mut l_phi = 0.0;
        let mut l_phiphi = 0.0;
        for i in 0..self.n_obs() {
            let t = self.row_terms(i, eta[i], phi);
            let (mu, omu) = (t.mu, t.one_minus_mu);
            let m = mu * omu;
            let tri_a = trigamma(mu * phi);
            let tri_b = trigamma(omu * phi);
            let d = t.ystar_minus_mustar;
            let w_eta = -phi * phi * m * m * (tri_a + tri_b) + phi * d * m * (omu - mu);
            let w_eta_phi = d * m - phi * m * (mu * tri_a - omu * tri_b);
            for a in 0..p {
                let xa = self.x[(i, a)];
                if xa == 0.0 {
                    continue;
                }
                for b in a..p {
                    h[(a, b)] += w_eta * xa * self.x[(i, b)];
                }
                h[(a, p)] += phi * w_eta_phi * xa;
            }
            l_phi += mu * d + self.ln_1my[i] - digamma(omu * phi) + psi_phi;
            l_phiphi += -mu * mu * tri_a - omu * omu * tri_b + tri_phi;
        }
        h[(p, p)] = phi * phi * l_phiphi + phi * l_phi;
        for a in 0..=p {
            for b in 0..a {
                h[(a, b)] = h[(b, a)];
            }
        }
        h
    }
}
