//! Dense reference solutions for the cohomological equations.
//!
//! Functions are real trigonometric polynomials with modes `|k|₁ ≤ order`,
//! stored in the basis `1, cos(k·θ), sin(k·θ)` over a half-set of `k`.
//! Operators are assembled as explicit dense matrices in that basis and
//! solved with LU or an SVD pseudo-inverse; nothing goes through an FFT.

#![allow(dead_code)]

use nalgebra::linalg::{LU, SVD};
use nalgebra::{DMatrix, DVector, Dyn};
use rand::Rng;
use tori_core::{FourierSeries, Grid};

pub struct TrigBasis {
    pub d: usize,
    /// One representative of each `±k` pair, `k ≠ 0`.
    pub half: Vec<Vec<i64>>,
}

impl TrigBasis {
    pub fn new(d: usize, order: i64) -> Self {
        let mut half = Vec::new();
        let mut k = vec![-order; d];
        loop {
            let l1: i64 = k.iter().map(|v| v.abs()).sum();
            let first_nonzero = k.iter().find(|v| **v != 0);
            if l1 <= order && matches!(first_nonzero, Some(v) if *v > 0) {
                half.push(k.clone());
            }
            let mut a = d;
            loop {
                if a == 0 {
                    return TrigBasis { d, half };
                }
                a -= 1;
                if k[a] < order {
                    k[a] += 1;
                    break;
                }
                k[a] = -order;
            }
        }
    }

    pub fn dim(&self) -> usize {
        1 + 2 * self.half.len()
    }

    fn dot(k: &[i64], v: &[f64]) -> f64 {
        k.iter().zip(v).map(|(a, b)| *a as f64 * b).sum()
    }

    pub fn eval(&self, c: &[f64], theta: &[f64]) -> f64 {
        let h = self.half.len();
        let mut s = c[0];
        for (i, k) in self.half.iter().enumerate() {
            let (sn, cs) = Self::dot(k, theta).sin_cos();
            s += c[1 + i] * cs + c[1 + h + i] * sn;
        }
        s
    }

    /// `L_ω u = -Du·ω`: `cos ↦ (k·ω) sin`, `sin ↦ -(k·ω) cos`.
    pub fn lie_matrix(&self, omega: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        let h = self.half.len();
        let mut m = DMatrix::zeros(n, n);
        for (i, k) in self.half.iter().enumerate() {
            let kw = Self::dot(k, omega);
            m[(1 + h + i, 1 + i)] = kw;
            m[(1 + i, 1 + h + i)] = -kw;
        }
        m
    }

    pub fn random(&self, rng: &mut impl Rng) -> Vec<f64> {
        (0..self.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }
}

/// `A ⊗ B`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows() * b.nrows(), a.ncols() * b.ncols(), |i, j| {
        a[(i / b.nrows(), j / b.ncols())] * b[(i % b.nrows(), j % b.ncols())]
    })
}

fn stack(parts: &[Vec<f64>]) -> DVector<f64> {
    DVector::from_iterator(parts.iter().map(Vec::len).sum(), parts.iter().flatten().copied())
}

fn unstack(v: &DVector<f64>, n: usize) -> Vec<Vec<f64>> {
    v.as_slice().chunks(n).map(<[f64]>::to_vec).collect()
}

/// `Γ_{0,β}`: `[[0, -diag β], [diag β, 0]]`.
pub fn rotation_generator(beta: &[f64]) -> DMatrix<f64> {
    let m = beta.len();
    let mut g = DMatrix::zeros(2 * m, 2 * m);
    for (j, b) in beta.iter().enumerate() {
        g[(j, j + m)] = -b;
        g[(j + m, j)] = *b;
    }
    g
}

/// The three operators assembled densely and factored once.
pub struct DenseOracle {
    pub basis: TrigBasis,
    /// Basis functions at the grid points, `points × dim`.
    table: DMatrix<f64>,
    grid: Grid,
    zero_average: LU<f64, Dyn, Dyn>,
    left: LU<f64, Dyn, Dyn>,
    right: LU<f64, Dyn, Dyn>,
    second: Vec<(Vec<usize>, SVD<f64, Dyn, Dyn>)>,
    m: usize,
}

impl DenseOracle {
    pub fn new(basis: TrigBasis, grid: &Grid, omega: &[f64], beta: &[f64]) -> Self {
        let n = basis.dim();
        let m = beta.len();
        let s = 2 * m;
        let lie = basis.lie_matrix(omega);
        let g = rotation_generator(beta);
        let eye_n = DMatrix::identity(n, n);
        let eye_s = DMatrix::identity(s, s);

        // L_ω restricted to the non-constant functions.
        let zero_average = lie.view((1, 1), (n - 1, n - 1)).into_owned().lu();
        // One column of L_ω u + Γ u and one row of L_ω u - u Γ.
        let left = (kron(&eye_s, &lie) + kron(&g, &eye_n)).lu();
        let right = (kron(&eye_s, &lie) - kron(&g.transpose(), &eye_n)).lu();
        // Row-major vec(U): vec(ΓU) = (Γ ⊗ I) vec U, vec(UΓ) = (I ⊗ Γᵀ) vec U.
        let comp = kron(&g, &eye_s) - kron(&eye_s, &g.transpose());
        let second = coupled_groups(&comp)
            .into_iter()
            .map(|group| {
                let k = group.len();
                let sub = DMatrix::from_fn(k, k, |i, j| comp[(group[i], group[j])]);
                let op = kron(&DMatrix::identity(k, k), &lie) + kron(&sub, &eye_n);
                (group, op.svd(true, true))
            })
            .collect();

        let table = DMatrix::from_fn(grid.len(), n, |p, j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            basis.eval(&e, &grid.angles(p))
        });
        DenseOracle {
            basis,
            table,
            grid: grid.clone(),
            zero_average,
            left,
            right,
            second,
            m,
        }
    }

    /// Grid samples of a matrix of polynomials (`coeffs[r * cols + c]`).
    pub fn series(&self, rows: usize, cols: usize, coeffs: &[Vec<f64>]) -> FourierSeries {
        let mut samples = Vec::with_capacity(rows * cols * self.grid.len());
        for c in coeffs {
            samples.extend((&self.table * DVector::from_column_slice(c)).iter());
        }
        FourierSeries::from_samples(&self.grid, rows, cols, samples).unwrap()
    }

    /// `L_ω u = v` with `⟨u⟩ = avg`; `v` has zero average.
    pub fn zero_average(&self, v: &[f64], avg: f64) -> Vec<f64> {
        let sol = self
            .zero_average
            .solve(&DVector::from_column_slice(&v[1..]))
            .expect("invertible");
        let mut out = vec![avg];
        out.extend(sol.iter());
        out
    }

    /// `L_ω u + Γ u = v` for one column of `2m` polynomials.
    pub fn melnikov1_left(&self, v: &[Vec<f64>]) -> Vec<Vec<f64>> {
        unstack(&self.left.solve(&stack(v)).expect("invertible"), self.basis.dim())
    }

    /// `L_ω u - u Γ = v` for one row of `2m` polynomials.
    pub fn melnikov1_right(&self, v: &[Vec<f64>]) -> Vec<Vec<f64>> {
        unstack(&self.right.solve(&stack(v)).expect("invertible"), self.basis.dim())
    }

    /// `L_ω U + Γ U - U Γ = V`, `U` row-major `2m × 2m`. The operator is
    /// singular on constants; the minimum-norm least-squares solution is
    /// returned. The dense operator is split into the groups of components
    /// it couples, found from its sparsity.
    pub fn melnikov2(&self, v: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = self.basis.dim();
        let s = 2 * self.m;
        let mut out = vec![vec![0.0; n]; s * s];
        for (group, svd) in &self.second {
            let rhs: Vec<Vec<f64>> = group.iter().map(|&c| v[c].clone()).collect();
            let sol = svd.solve(&stack(&rhs), 1e-10).expect("SVD solve");
            for (part, &c) in unstack(&sol, n).into_iter().zip(group) {
                out[c] = part;
            }
        }
        out
    }
}

/// Connected components of the graph with an edge wherever `m` is nonzero.
fn coupled_groups(m: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = m.nrows();
    let mut label: Vec<Option<usize>> = vec![None; n];
    let mut groups = Vec::new();
    for start in 0..n {
        if label[start].is_some() {
            continue;
        }
        let id = groups.len();
        let mut members = vec![start];
        label[start] = Some(id);
        let mut i = 0;
        while i < members.len() {
            let a = members[i];
            for b in 0..n {
                if label[b].is_none() && (m[(a, b)] != 0.0 || m[(b, a)] != 0.0) {
                    label[b] = Some(id);
                    members.push(b);
                }
            }
            i += 1;
        }
        members.sort_unstable();
        groups.push(members);
    }
    groups
}

/// Project the constant part of each diagonal `2×2` block of `V` onto the
/// image `((p, q), (q, -p))` of the second-Melnikov operator.
pub fn project_singular_averages(v: &mut [Vec<f64>], m: usize) {
    let s = 2 * m;
    for i in 0..m {
        let (a, b) = (i, i + m);
        let at = |r: usize, c: usize| r * s + c;
        let p = 0.5 * (v[at(a, a)][0] - v[at(b, b)][0]);
        let q = 0.5 * (v[at(a, b)][0] + v[at(b, a)][0]);
        v[at(a, a)][0] = p;
        v[at(b, b)][0] = -p;
        v[at(a, b)][0] = q;
        v[at(b, a)][0] = q;
    }
}

/// `max |a - b| / max |b|` over grid samples.
pub fn relative_error(a: &FourierSeries, b: &FourierSeries) -> f64 {
    (a - b).sup_norm() / b.sup_norm()
}

/// Largest relative deviation of each solver from the dense solve.
#[derive(Clone, Copy, Debug, Default)]
pub struct OracleErrors {
    pub zero_average: f64,
    pub melnikov1: f64,
    pub melnikov2: f64,
}

/// Compare the three solvers with dense solves on `count` random right-hand
/// sides of order `order` on `T^2` (grid 32 × 32).
pub fn cohomology_oracle_run(count: usize, order: i64, seed: u64) -> OracleErrors {
    use rand::SeedableRng;
    use tori_core::cohomology::{
        solve_melnikov1, solve_melnikov2, solve_zero_average, FrequencyData, Side, SolverOptions,
    };

    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let grid = Grid::uniform(2, 32).unwrap();
    let omega = [2f64.sqrt(), 3f64.sqrt()];
    let beta = [2.5f64.sqrt(), 2.8f64.sqrt()];
    let oracle = DenseOracle::new(TrigBasis::new(2, order), &grid, &omega, &beta);
    let basis = &oracle.basis;
    let freq = FrequencyData::new(omega.to_vec(), beta.to_vec()).unwrap();
    let opts = SolverOptions::default();
    let mut errs = OracleErrors::default();

    for _ in 0..count {
        // L_ω u = v, 2 × 1, zero-average right-hand side.
        let mut v: Vec<Vec<f64>> = (0..2).map(|_| basis.random(&mut rng)).collect();
        for c in &mut v {
            c[0] = 0.0;
        }
        let avg = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let dense: Vec<Vec<f64>> = v.iter().zip(avg).map(|(c, a)| oracle.zero_average(c, a)).collect();
        let got = solve_zero_average(
            &oracle.series(2, 1, &v),
            &omega,
            &DMatrix::from_column_slice(2, 1, &avg),
            &opts,
        )
        .unwrap();
        errs.zero_average = errs
            .zero_average
            .max(relative_error(&got, &oracle.series(2, 1, &dense)));

        // Left: 4 × 2, paired rows. Right: 2 × 4, paired columns.
        let v: Vec<Vec<f64>> = (0..8).map(|_| basis.random(&mut rng)).collect();
        let mut dense = vec![Vec::new(); 8];
        for c in 0..2 {
            let col: Vec<Vec<f64>> = (0..4).map(|r| v[r * 2 + c].clone()).collect();
            for (r, u) in oracle.melnikov1_left(&col).into_iter().enumerate() {
                dense[r * 2 + c] = u;
            }
        }
        let got = solve_melnikov1(&oracle.series(4, 2, &v), &freq, Side::Left, &opts).unwrap();
        errs.melnikov1 = errs.melnikov1.max(relative_error(&got, &oracle.series(4, 2, &dense)));

        let mut dense = Vec::new();
        for r in 0..2 {
            dense.extend(oracle.melnikov1_right(&v[r * 4..(r + 1) * 4]));
        }
        let got = solve_melnikov1(&oracle.series(2, 4, &v), &freq, Side::Right, &opts).unwrap();
        errs.melnikov1 = errs.melnikov1.max(relative_error(&got, &oracle.series(2, 4, &dense)));

        // 4 × 4 with solvable singular averages.
        let mut v: Vec<Vec<f64>> = (0..16).map(|_| basis.random(&mut rng)).collect();
        project_singular_averages(&mut v, 2);
        let dense = oracle.melnikov2(&v);
        let got = solve_melnikov2(&oracle.series(4, 4, &v), &freq, &opts).unwrap();
        assert!(
            got.defect < 1e-12,
            "projected right-hand side left a defect {}",
            got.defect
        );
        errs.melnikov2 = errs.melnikov2.max(relative_error(&got.u, &oracle.series(4, 4, &dense)));
    }
    errs
}
