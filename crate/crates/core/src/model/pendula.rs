use nalgebra::DMatrix;

use super::{validate_structure, ModelFamily};
use crate::error::{Result, TorusError};

/// Parameters of the four-pendulum chain: two pendula of fixed length and
/// two whose lengths `1/(β_j + λ_j)²` are tuned so that their small
/// oscillation frequency is `β_j + λ_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct PendulaParams {
    pub l1: f64,
    pub l2: f64,
    pub beta: [f64; 2],
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub eps: f64,
}

impl PendulaParams {
    /// Values of the reference experiment at coupling `eps`.
    pub fn reference(eps: f64) -> Self {
        PendulaParams {
            l1: 0.45678,
            l2: 0.325,
            beta: [2.5f64.sqrt(), 2.8f64.sqrt()],
            k1: 1e-2,
            k2: 1.0,
            k3: 1.0,
            eps,
        }
    }
}

/// A chain of planar pendula with nearest-neighbour springs,
/// `h = Σ_j (y_j²/(2ℓ_j²) - ℓ_j cos x_j) + Σ_s κ_s/2 (ℓ_{s+1} x_{s+1} - ℓ_s x_s)²`.
///
/// Coordinates are grouped in blocks; a block of pendula `a..b` occupies
/// `(y_a..y_b, x_a..x_b)`. In each block `Ω = [[0, I], [-I, 0]]`, so that
/// `ẋ = y/ℓ²` and `ẏ = -∂h/∂x`.
#[derive(Clone, Debug)]
pub struct CoupledPendula {
    fixed: Vec<f64>,
    tuned: Vec<f64>,
    springs: Vec<f64>,
    y_idx: Vec<usize>,
    x_idx: Vec<usize>,
    omega: DMatrix<f64>,
}

impl CoupledPendula {
    /// `fixed` lengths come first in the chain, followed by pendula whose
    /// lengths are `1/(tuned_j + λ_j)²`. `springs[s]` couples pendula `s`
    /// and `s + 1`; `blocks` partitions the pendula into coordinate blocks.
    pub fn new(fixed: Vec<f64>, tuned: Vec<f64>, springs: Vec<f64>, blocks: &[usize]) -> Result<Self> {
        let n = fixed.len() + tuned.len();
        let bad = |m: String| Err(TorusError::InvalidParameters(m));
        if n == 0 {
            return bad("empty chain".into());
        }
        if fixed.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return bad("pendulum lengths must be positive".into());
        }
        if tuned.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
            return bad("tuned frequencies must be positive".into());
        }
        if springs.len() >= n && !springs.is_empty() {
            return bad(format!("{} springs for {n} pendula", springs.len()));
        }
        if springs.iter().any(|k| !k.is_finite()) {
            return bad("non-finite spring constant".into());
        }
        if blocks.iter().sum::<usize>() != n || blocks.contains(&0) {
            return bad(format!("blocks {blocks:?} do not partition {n} pendula"));
        }
        let mut y_idx = vec![0; n];
        let mut x_idx = vec![0; n];
        let mut omega = DMatrix::zeros(2 * n, 2 * n);
        let (mut offset, mut first) = (0, 0);
        for &b in blocks {
            for i in 0..b {
                y_idx[first + i] = offset + i;
                x_idx[first + i] = offset + b + i;
                omega[(offset + i, offset + b + i)] = 1.0;
                omega[(offset + b + i, offset + i)] = -1.0;
            }
            offset += 2 * b;
            first += b;
        }
        let model = CoupledPendula {
            fixed,
            tuned,
            springs,
            y_idx,
            x_idx,
            omega,
        };
        let lambda = vec![0.0; model.tuned.len()];
        let probe: Vec<f64> = (0..2 * n).map(|i| 0.1 + 0.05 * i as f64).collect();
        validate_structure(&model, &probe, &lambda)?;
        Ok(model)
    }

    /// One pendulum of length `l`, coordinates `(y, x)`.
    pub fn single(l: f64) -> Result<Self> {
        Self::new(vec![l], vec![], vec![], &[1])
    }

    /// Two pendula coupled by a spring `k1`, coordinates `(y₁, y₂, x₁, x₂)`.
    pub fn pair(l1: f64, l2: f64, k1: f64) -> Result<Self> {
        Self::new(vec![l1, l2], vec![], vec![k1], &[2])
    }

    pub fn pendula(&self) -> usize {
        self.fixed.len() + self.tuned.len()
    }

    /// Pendulum lengths at parameter `λ`.
    pub fn lengths(&self, lambda: &[f64]) -> Vec<f64> {
        let mut out = self.fixed.clone();
        out.extend(self.tuned.iter().zip(lambda).map(|(b, l)| (b + l).powi(-2)));
        out
    }

    /// `dℓ/dλ` for each tuned pendulum.
    fn length_rates(&self, lambda: &[f64]) -> Vec<f64> {
        self.tuned
            .iter()
            .zip(lambda)
            .map(|(b, l)| -2.0 * (b + l).powi(-3))
            .collect()
    }

    pub fn y_index(&self, j: usize) -> usize {
        self.y_idx[j]
    }

    pub fn x_index(&self, j: usize) -> usize {
        self.x_idx[j]
    }

    fn spring_stretch(&self, z: &[f64], ell: &[f64], s: usize) -> f64 {
        ell[s + 1] * z[self.x_idx[s + 1]] - ell[s] * z[self.x_idx[s]]
    }

    /// `∂X_h/∂ℓ_j`.
    fn field_length_derivative(&self, z: &[f64], ell: &[f64], j: usize) -> Vec<f64> {
        let mut out = vec![0.0; 2 * self.pendula()];
        let (y, x) = (self.y_idx[j], self.x_idx[j]);
        out[x] = -2.0 * z[y] / ell[j].powi(3);
        out[y] = -z[x].sin();
        for (s, &kappa) in self.springs.iter().enumerate() {
            let (a, b) = (s, s + 1);
            let u = self.spring_stretch(z, ell, s);
            let (xa, xb) = (z[self.x_idx[a]], z[self.x_idx[b]]);
            if j == a {
                out[self.y_idx[a]] += kappa * u - kappa * ell[a] * xa;
                out[self.y_idx[b]] += kappa * ell[b] * xa;
            }
            if j == b {
                out[self.y_idx[a]] += kappa * ell[a] * xb;
                out[self.y_idx[b]] += -kappa * u - kappa * ell[b] * xb;
            }
        }
        out
    }

    /// `∂(D_z X_h)/∂ℓ_j`, accumulated with weight `w` into `out`.
    fn add_jacobian_length_derivative(&self, z: &[f64], ell: &[f64], j: usize, w: f64, out: &mut DMatrix<f64>) {
        let (y, x) = (self.y_idx[j], self.x_idx[j]);
        out[(x, y)] += w * -2.0 / ell[j].powi(3);
        out[(y, x)] += w * -z[x].cos();
        for (s, &kappa) in self.springs.iter().enumerate() {
            let (a, b) = (s, s + 1);
            let (ya, yb, xa, xb) = (self.y_idx[a], self.y_idx[b], self.x_idx[a], self.x_idx[b]);
            if j == a {
                out[(ya, xa)] += w * -2.0 * kappa * ell[a];
                out[(ya, xb)] += w * kappa * ell[b];
                out[(yb, xa)] += w * kappa * ell[b];
            }
            if j == b {
                out[(ya, xb)] += w * kappa * ell[a];
                out[(yb, xa)] += w * kappa * ell[a];
                out[(yb, xb)] += w * -2.0 * kappa * ell[b];
            }
        }
    }
}

/// The four-pendulum family with `λ` tuning the lengths of pendula 3 and 4.
pub fn make_pendula(params: &PendulaParams) -> Result<CoupledPendula> {
    let p = params;
    if [p.k1, p.k2, p.k3, p.eps].iter().any(|v| !v.is_finite()) {
        return Err(TorusError::InvalidParameters("non-finite coupling constant".into()));
    }
    CoupledPendula::new(
        vec![p.l1, p.l2],
        p.beta.to_vec(),
        vec![p.k1, p.eps * p.k2, p.eps * p.k3],
        &[2, 2],
    )
}

impl ModelFamily for CoupledPendula {
    fn degrees_of_freedom(&self) -> usize {
        self.pendula()
    }

    fn parameter_count(&self) -> usize {
        self.tuned.len()
    }

    fn energy(&self, z: &[f64], lambda: &[f64]) -> f64 {
        let ell = self.lengths(lambda);
        let mut h = 0.0;
        for (j, &l) in ell.iter().enumerate() {
            let (y, x) = (z[self.y_idx[j]], z[self.x_idx[j]]);
            h += y * y / (2.0 * l * l) - l * x.cos();
        }
        for (s, &kappa) in self.springs.iter().enumerate() {
            let u = self.spring_stretch(z, &ell, s);
            h += 0.5 * kappa * u * u;
        }
        h
    }

    fn vector_field(&self, z: &[f64], lambda: &[f64]) -> Vec<f64> {
        let ell = self.lengths(lambda);
        let mut out = vec![0.0; z.len()];
        for (j, &l) in ell.iter().enumerate() {
            let (y, x) = (self.y_idx[j], self.x_idx[j]);
            out[x] = z[y] / (l * l);
            out[y] = -l * z[x].sin();
        }
        for (s, &kappa) in self.springs.iter().enumerate() {
            let u = self.spring_stretch(z, &ell, s);
            out[self.y_idx[s]] += kappa * ell[s] * u;
            out[self.y_idx[s + 1]] -= kappa * ell[s + 1] * u;
        }
        out
    }

    fn jacobian(&self, z: &[f64], lambda: &[f64]) -> DMatrix<f64> {
        let ell = self.lengths(lambda);
        let mut m = DMatrix::zeros(z.len(), z.len());
        for (j, &l) in ell.iter().enumerate() {
            let (y, x) = (self.y_idx[j], self.x_idx[j]);
            m[(x, y)] = 1.0 / (l * l);
            m[(y, x)] = -l * z[x].cos();
        }
        for (s, &kappa) in self.springs.iter().enumerate() {
            let (a, b) = (s, s + 1);
            let (ya, yb, xa, xb) = (self.y_idx[a], self.y_idx[b], self.x_idx[a], self.x_idx[b]);
            m[(ya, xa)] -= kappa * ell[a] * ell[a];
            m[(ya, xb)] += kappa * ell[a] * ell[b];
            m[(yb, xa)] += kappa * ell[a] * ell[b];
            m[(yb, xb)] -= kappa * ell[b] * ell[b];
        }
        m
    }

    fn parameter_jacobian(&self, z: &[f64], lambda: &[f64]) -> DMatrix<f64> {
        let ell = self.lengths(lambda);
        let rates = self.length_rates(lambda);
        let first = self.fixed.len();
        let mut m = DMatrix::zeros(z.len(), self.tuned.len());
        for (k, rate) in rates.iter().enumerate() {
            let col = self.field_length_derivative(z, &ell, first + k);
            for (r, v) in col.iter().enumerate() {
                m[(r, k)] = rate * v;
            }
        }
        m
    }

    fn jacobian_lambda_derivative(&self, z: &[f64], lambda: &[f64], dlambda: &[f64]) -> DMatrix<f64> {
        let ell = self.lengths(lambda);
        let rates = self.length_rates(lambda);
        let first = self.fixed.len();
        let mut m = DMatrix::zeros(z.len(), z.len());
        for (k, (rate, dl)) in rates.iter().zip(dlambda).enumerate() {
            self.add_jacobian_length_derivative(z, &ell, first + k, rate * dl, &mut m);
        }
        m
    }

    fn jacobian_z_derivative(&self, z: &[f64], lambda: &[f64], dz: &[f64]) -> DMatrix<f64> {
        let ell = self.lengths(lambda);
        let mut m = DMatrix::zeros(z.len(), z.len());
        for (j, &l) in ell.iter().enumerate() {
            let (y, x) = (self.y_idx[j], self.x_idx[j]);
            m[(y, x)] = l * z[x].sin() * dz[x];
        }
        m
    }

    fn symplectic_form(&self, _z: &[f64]) -> DMatrix<f64> {
        self.omega.clone()
    }

    fn metric(&self, z: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(z.len(), z.len())
    }

    fn complex_structure(&self, _z: &[f64]) -> DMatrix<f64> {
        // ΩJ = -G with G = I and Ω² = -I gives J = Ω.
        self.omega.clone()
    }

    fn constant_forms(&self) -> bool {
        true
    }

    fn check_domain(&self, z: &[f64]) -> std::result::Result<(), String> {
        for (j, &x) in self.x_idx.iter().enumerate() {
            if !(z[x].abs() < std::f64::consts::PI) {
                return Err(format!("pendulum {} left the libration region (x = {})", j + 1, z[x]));
            }
        }
        Ok(())
    }

    fn check_parameters(&self, lambda: &[f64]) -> std::result::Result<(), String> {
        for (j, (b, l)) in self.tuned.iter().zip(lambda).enumerate() {
            if !(b + l > 0.0) {
                return Err(format!(
                    "tuned frequency {} + {} of pendulum {} is not positive",
                    b,
                    l,
                    j + 1
                ));
            }
        }
        Ok(())
    }
}
