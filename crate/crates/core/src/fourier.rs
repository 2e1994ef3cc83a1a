//! Real Fourier series on the d-torus.
//!
//! A series is held both as real samples on the regular grid
//! `θ_j = 2π j / N` (row-major, last angle fastest) and as complex
//! coefficients in FFT order: storage index `j` carries wavenumber `j` for
//! `j < N/2` and `j - N` otherwise, so `-N/2` is the Nyquist mode.
//! Matrix-valued series store one such block per component, components in
//! row-major order. Coefficients use the normalization in which `ĉ_0` is the
//! mean over the torus.
//!
//! Values are immutable. Linear operations act on samples and coefficients
//! directly; products go through a 3/2-padded grid so the retained modes of
//! a product are free of aliasing.

use std::cell::RefCell;
use std::fmt;
use std::io::{BufRead, Write};
use std::ops::{Add, Neg, Range, Sub};
use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

use crate::error::{Result, TorusError};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Index bookkeeping for one regular grid.
struct Layout {
    sizes: Vec<usize>,
    len: usize,
    /// Wavenumbers, `len * d`, row-major.
    modes: Vec<i64>,
    /// Flat index of `-k` for every `k`.
    negated: Vec<usize>,
}

impl Layout {
    fn new(sizes: &[usize]) -> Self {
        let d = sizes.len();
        let len: usize = sizes.iter().product();
        let mut modes = vec![0i64; len * d];
        let mut negated = vec![0usize; len];
        let mut digits = vec![0usize; d];
        for flat in 0..len {
            let mut rem = flat;
            for a in (0..d).rev() {
                digits[a] = rem % sizes[a];
                rem /= sizes[a];
            }
            let mut neg = 0;
            for a in 0..d {
                let n = sizes[a];
                let j = digits[a];
                modes[flat * d + a] = if j < n / 2 { j as i64 } else { j as i64 - n as i64 };
                neg = neg * n + (n - j) % n;
            }
            negated[flat] = neg;
        }
        Layout {
            sizes: sizes.to_vec(),
            len,
            modes,
            negated,
        }
    }

    fn flat_index(&self, k: &[i64]) -> usize {
        let mut flat = 0;
        for (a, &n) in self.sizes.iter().enumerate() {
            let n = n as i64;
            flat = flat * n as usize + k[a].rem_euclid(n) as usize;
        }
        flat
    }
}

struct GridData {
    base: Layout,
    padded: Layout,
    nyquist: Vec<bool>,
    /// (base index, padded index, weight): Nyquist modes are split evenly
    /// between `±N/2` so that the padded interpolant stays real.
    pad_map: Vec<(usize, usize, f64)>,
    /// (base index, padded index) for every non-Nyquist base mode.
    trunc_map: Vec<(usize, usize)>,
}

/// A regular grid on `T^d` with power-of-two sizes per angle.
#[derive(Clone)]
pub struct Grid {
    data: Arc<GridData>,
}

impl Grid {
    pub fn new(sizes: &[usize]) -> Result<Self> {
        if sizes.is_empty() {
            return Err(TorusError::InvalidGrid("at least one angle is required".into()));
        }
        for &n in sizes {
            if n < 4 || !n.is_power_of_two() {
                return Err(TorusError::InvalidGrid(format!(
                    "grid size {n} is not a power of two >= 4"
                )));
            }
        }
        let d = sizes.len();
        let base = Layout::new(sizes);
        let padded_sizes: Vec<usize> = sizes.iter().map(|n| 3 * n / 2).collect();
        let padded = Layout::new(&padded_sizes);

        let mut nyquist = Vec::with_capacity(base.len);
        let mut pad_map = Vec::with_capacity(base.len);
        let mut trunc_map = Vec::with_capacity(base.len);
        for flat in 0..base.len {
            let k = &base.modes[flat * d..(flat + 1) * d];
            let mut targets: Vec<(Vec<i64>, f64)> = vec![(Vec::with_capacity(d), 1.0)];
            let mut is_nyq = false;
            for a in 0..d {
                let half = (sizes[a] / 2) as i64;
                if k[a] == -half {
                    is_nyq = true;
                    targets = targets
                        .into_iter()
                        .flat_map(|(v, w)| {
                            let mut lo = v.clone();
                            lo.push(-half);
                            let mut hi = v;
                            hi.push(half);
                            [(lo, w * 0.5), (hi, w * 0.5)]
                        })
                        .collect();
                } else {
                    for (v, _) in targets.iter_mut() {
                        v.push(k[a]);
                    }
                }
            }
            nyquist.push(is_nyq);
            for (kk, w) in targets {
                pad_map.push((flat, padded.flat_index(&kk), w));
            }
            if !is_nyq {
                trunc_map.push((flat, padded.flat_index(k)));
            }
        }
        Ok(Grid {
            data: Arc::new(GridData {
                base,
                padded,
                nyquist,
                pad_map,
                trunc_map,
            }),
        })
    }

    /// Same size `n` along each of `d` angles.
    pub fn uniform(d: usize, n: usize) -> Result<Self> {
        Grid::new(&vec![n; d])
    }

    pub fn dims(&self) -> usize {
        self.data.base.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.data.base.sizes
    }

    /// Number of grid points (and of stored modes).
    pub fn len(&self) -> usize {
        self.data.base.len
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Wavenumber of the mode stored at flat index `flat`.
    pub fn mode(&self, flat: usize) -> &[i64] {
        let d = self.dims();
        &self.data.base.modes[flat * d..(flat + 1) * d]
    }

    /// `k · ω` for the mode at `flat`.
    pub fn mode_dot(&self, flat: usize, freq: &[f64]) -> f64 {
        self.mode(flat).iter().zip(freq).map(|(&k, &w)| k as f64 * w).sum()
    }

    /// True when some component of the mode sits on the Nyquist frequency.
    pub fn is_nyquist(&self, flat: usize) -> bool {
        self.data.nyquist[flat]
    }

    /// Flat index of the wavenumber `k` (taken modulo the grid).
    pub fn index_of(&self, k: &[i64]) -> usize {
        self.data.base.flat_index(k)
    }

    /// Flat index of `-k`.
    pub fn negated(&self, flat: usize) -> usize {
        self.data.base.negated[flat]
    }

    /// Angles of grid point `flat`.
    pub fn angles(&self, flat: usize) -> Vec<f64> {
        let sizes = self.sizes();
        let d = sizes.len();
        let mut out = vec![0.0; d];
        let mut rem = flat;
        for a in (0..d).rev() {
            let j = rem % sizes[a];
            rem /= sizes[a];
            out[a] = 2.0 * std::f64::consts::PI * j as f64 / sizes[a] as f64;
        }
        out
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.data, &other.data) || self.sizes() == other.sizes()
    }
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Grid{:?}", self.sizes())
    }
}

fn fft_nd(sizes: &[usize], data: &mut [Complex64], direction: FftDirection) {
    let total = data.len();
    let mut scratch: Vec<Complex64> = Vec::new();
    for axis in 0..sizes.len() {
        let n = sizes[axis];
        let inner: usize = sizes[axis + 1..].iter().product();
        let outer = total / (n * inner);
        let plan = PLANNER.with(|p| p.borrow_mut().plan_fft(n, direction));
        if inner == 1 {
            plan.process(data);
            continue;
        }
        scratch.resize(total, Complex64::default());
        for o in 0..outer {
            let base = o * n * inner;
            for j in 0..n {
                let row = &data[base + j * inner..base + (j + 1) * inner];
                for (i, v) in row.iter().enumerate() {
                    scratch[(o * inner + i) * n + j] = *v;
                }
            }
        }
        plan.process(&mut scratch);
        for o in 0..outer {
            let base = o * n * inner;
            for j in 0..n {
                let row = &mut data[base + j * inner..base + (j + 1) * inner];
                for (i, v) in row.iter_mut().enumerate() {
                    *v = scratch[(o * inner + i) * n + j];
                }
            }
        }
    }
}

/// Forward transforms of real components, two per complex FFT.
fn forward_real(layout: &Layout, comps: &[&[f64]]) -> Vec<Vec<Complex64>> {
    let scale = 1.0 / layout.len as f64;
    let mut out = Vec::with_capacity(comps.len());
    let mut buf = vec![Complex64::default(); layout.len];
    for pair in comps.chunks(2) {
        match pair {
            [a, b] => {
                for ((z, &x), &y) in buf.iter_mut().zip(a.iter()).zip(b.iter()) {
                    *z = Complex64::new(x, y);
                }
                fft_nd(&layout.sizes, &mut buf, FftDirection::Forward);
                let mut ca = vec![Complex64::default(); layout.len];
                let mut cb = vec![Complex64::default(); layout.len];
                for idx in 0..layout.len {
                    let z = buf[idx];
                    let zn = buf[layout.negated[idx]].conj();
                    ca[idx] = (z + zn) * (0.5 * scale);
                    let diff = z - zn;
                    cb[idx] = Complex64::new(diff.im, -diff.re) * (0.5 * scale);
                }
                out.push(ca);
                out.push(cb);
            }
            [a] => {
                for (z, &x) in buf.iter_mut().zip(a.iter()) {
                    *z = Complex64::new(x, 0.0);
                }
                fft_nd(&layout.sizes, &mut buf, FftDirection::Forward);
                let mut ca = vec![Complex64::default(); layout.len];
                for idx in 0..layout.len {
                    let zn = buf[layout.negated[idx]].conj();
                    ca[idx] = (buf[idx] + zn) * (0.5 * scale);
                }
                out.push(ca);
            }
            _ => unreachable!(),
        }
    }
    out
}

/// Inverse transforms of Hermitian spectra, two per complex FFT.
fn inverse_real(layout: &Layout, spectra: &[&[Complex64]]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(spectra.len());
    let mut buf = vec![Complex64::default(); layout.len];
    for pair in spectra.chunks(2) {
        match pair {
            [a, b] => {
                for ((z, x), y) in buf.iter_mut().zip(a.iter()).zip(b.iter()) {
                    *z = Complex64::new(x.re - y.im, x.im + y.re);
                }
                fft_nd(&layout.sizes, &mut buf, FftDirection::Inverse);
                out.push(buf.iter().map(|z| z.re).collect());
                out.push(buf.iter().map(|z| z.im).collect());
            }
            [a] => {
                buf.copy_from_slice(a);
                fft_nd(&layout.sizes, &mut buf, FftDirection::Inverse);
                out.push(buf.iter().map(|z| z.re).collect());
            }
            _ => unreachable!(),
        }
    }
    out
}

/// Real-analytic map `T^d → R^{rows×cols}` in sampled and spectral form.
#[derive(Clone)]
pub struct FourierSeries {
    grid: Grid,
    rows: usize,
    cols: usize,
    samples: Vec<f64>,
    coeffs: Vec<Complex64>,
    padded: OnceLock<Arc<Vec<f64>>>,
}

impl fmt::Debug for FourierSeries {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FourierSeries")
            .field("grid", &self.grid)
            .field("shape", &(self.rows, self.cols))
            .finish()
    }
}

impl FourierSeries {
    fn from_parts(grid: &Grid, rows: usize, cols: usize, samples: Vec<f64>, coeffs: Vec<Complex64>) -> Self {
        debug_assert_eq!(samples.len(), rows * cols * grid.len());
        debug_assert_eq!(coeffs.len(), rows * cols * grid.len());
        FourierSeries {
            grid: grid.clone(),
            rows,
            cols,
            samples,
            coeffs,
            padded: OnceLock::new(),
        }
    }

    /// Transform grid samples (component blocks, row-major) to a series.
    pub fn from_samples(grid: &Grid, rows: usize, cols: usize, samples: Vec<f64>) -> Result<Self> {
        let len = grid.len();
        if samples.len() != rows * cols * len {
            return Err(TorusError::ShapeMismatch(format!(
                "expected {} samples for a {rows}x{cols} series, got {}",
                rows * cols * len,
                samples.len()
            )));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(TorusError::InvalidData(format!(
                "non-finite sample in component {} at grid point {}",
                i / len,
                i % len
            )));
        }
        Ok(Self::from_samples_unchecked(grid, rows, cols, samples))
    }

    fn from_samples_unchecked(grid: &Grid, rows: usize, cols: usize, samples: Vec<f64>) -> Self {
        let len = grid.len();
        let comps: Vec<&[f64]> = samples.chunks(len.max(1)).collect();
        let coeffs = forward_real(&grid.data.base, &comps).concat();
        Self::from_parts(grid, rows, cols, samples, coeffs)
    }

    /// Build a series from coefficients; conjugate symmetry is enforced by
    /// replacing `ĉ_k` with `(ĉ_k + conj(ĉ_{-k}))/2`.
    pub fn from_coeffs(grid: &Grid, rows: usize, cols: usize, coeffs: Vec<Complex64>) -> Result<Self> {
        let len = grid.len();
        if coeffs.len() != rows * cols * len {
            return Err(TorusError::ShapeMismatch(format!(
                "expected {} coefficients for a {rows}x{cols} series, got {}",
                rows * cols * len,
                coeffs.len()
            )));
        }
        if coeffs.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(TorusError::InvalidData("non-finite Fourier coefficient".into()));
        }
        Ok(Self::from_coeffs_unchecked(grid, rows, cols, coeffs))
    }

    fn from_coeffs_unchecked(grid: &Grid, rows: usize, cols: usize, mut coeffs: Vec<Complex64>) -> Self {
        let len = grid.len();
        let neg = &grid.data.base.negated;
        for block in coeffs.chunks_mut(len.max(1)) {
            for idx in 0..len {
                let j = neg[idx];
                if j < idx {
                    continue;
                }
                if j == idx {
                    block[idx] = Complex64::new(block[idx].re, 0.0);
                } else {
                    let avg = (block[idx] + block[j].conj()) * 0.5;
                    block[idx] = avg;
                    block[j] = avg.conj();
                }
            }
        }
        let spectra: Vec<&[Complex64]> = coeffs.chunks(len.max(1)).collect();
        let samples = inverse_real(&grid.data.base, &spectra).concat();
        Self::from_parts(grid, rows, cols, samples, coeffs)
    }

    pub fn zeros(grid: &Grid, rows: usize, cols: usize) -> Self {
        let n = rows * cols * grid.len();
        Self::from_parts(grid, rows, cols, vec![0.0; n], vec![Complex64::default(); n])
    }

    /// Constant map with value `value`.
    pub fn constant(grid: &Grid, value: &DMatrix<f64>) -> Self {
        let (rows, cols) = value.shape();
        let len = grid.len();
        let mut out = Self::zeros(grid, rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                let c = i * cols + j;
                out.samples[c * len..(c + 1) * len].fill(value[(i, j)]);
                out.coeffs[c * len] = Complex64::new(value[(i, j)], 0.0);
            }
        }
        out
    }

    /// Sample `f(θ, out)` (out row-major) on the grid.
    pub fn from_fn<F>(grid: &Grid, rows: usize, cols: usize, mut f: F) -> Result<Self>
    where
        F: FnMut(&[f64], &mut [f64]),
    {
        let len = grid.len();
        let ncomp = rows * cols;
        let mut samples = vec![0.0; ncomp * len];
        let mut point = vec![0.0; ncomp];
        for p in 0..len {
            f(&grid.angles(p), &mut point);
            for (c, v) in point.iter().enumerate() {
                samples[c * len + p] = *v;
            }
        }
        Self::from_samples(grid, rows, cols, samples)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn component_samples(&self, i: usize, j: usize) -> &[f64] {
        let len = self.grid.len();
        let c = i * self.cols + j;
        &self.samples[c * len..(c + 1) * len]
    }

    pub fn component_coeffs(&self, i: usize, j: usize) -> &[Complex64] {
        let len = self.grid.len();
        let c = i * self.cols + j;
        &self.coeffs[c * len..(c + 1) * len]
    }

    /// Value of the series on grid point `p`, as a `rows × cols` matrix.
    pub fn value_at_point(&self, p: usize) -> DMatrix<f64> {
        let len = self.grid.len();
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.samples[(i * self.cols + j) * len + p])
    }

    /// Coefficient-space map applied mode by mode; Nyquist modes are zeroed.
    fn map_modes<F>(&self, mut f: F) -> Self
    where
        F: FnMut(usize) -> Complex64,
    {
        let len = self.grid.len();
        let factors: Vec<Complex64> = (0..len)
            .map(|idx| {
                if self.grid.is_nyquist(idx) {
                    Complex64::default()
                } else {
                    f(idx)
                }
            })
            .collect();
        let mut coeffs = self.coeffs.clone();
        for block in coeffs.chunks_mut(len) {
            for (c, fac) in block.iter_mut().zip(&factors) {
                *c *= fac;
            }
        }
        Self::from_coeffs_unchecked(&self.grid, self.rows, self.cols, coeffs)
    }

    /// `L_ω u = -Du · ω`, i.e. `(L_ω u)^_k = -i (k·ω) û_k`.
    pub fn lie_derivative(&self, omega: &[f64]) -> Result<Self> {
        if omega.len() != self.grid.dims() {
            return Err(TorusError::ShapeMismatch(format!(
                "frequency vector of length {} on a {}-torus",
                omega.len(),
                self.grid.dims()
            )));
        }
        let grid = self.grid.clone();
        Ok(self.map_modes(|idx| Complex64::new(0.0, -grid.mode_dot(idx, omega))))
    }

    /// `∂u/∂θ_j` (zero-based angle index).
    pub fn derivative(&self, j: usize) -> Result<Self> {
        if j >= self.grid.dims() {
            return Err(TorusError::IndexOutOfRange(format!(
                "angle index {j} on a {}-torus",
                self.grid.dims()
            )));
        }
        let grid = self.grid.clone();
        Ok(self.map_modes(|idx| Complex64::new(0.0, grid.mode(idx)[j] as f64)))
    }

    /// Jacobian `DK` of a vector series: `rows × d`, column `j` is `∂K/∂θ_j`.
    pub fn jacobian(&self) -> Result<Self> {
        if self.cols != 1 {
            return Err(TorusError::ShapeMismatch("jacobian needs a column series".into()));
        }
        let parts = (0..self.grid.dims())
            .map(|j| self.derivative(j))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&FourierSeries> = parts.iter().collect();
        Self::hstack(&refs)
    }

    /// `⟨u⟩ = û_0`.
    pub fn average(&self) -> DMatrix<f64> {
        let len = self.grid.len();
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.coeffs[(i * self.cols + j) * len].re)
    }

    /// Grid maximum of the row-sum norm: `max_θ max_i Σ_j |u_ij(θ)|`.
    /// For a column series this is the largest absolute component value.
    pub fn sup_norm(&self) -> f64 {
        let len = self.grid.len();
        let mut best = 0.0f64;
        for p in 0..len {
            for i in 0..self.rows {
                let s: f64 = (0..self.cols)
                    .map(|j| self.samples[(i * self.cols + j) * len + p].abs())
                    .sum();
                best = best.max(s);
            }
        }
        best
    }

    /// Largest coefficient modulus.
    pub fn max_coeff(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Evaluate the trigonometric interpolant at arbitrary angles.
    pub fn eval_at(&self, theta: &[f64]) -> DMatrix<f64> {
        let grid = &self.grid;
        let d = grid.dims();
        let len = grid.len();
        let per_axis: Vec<Vec<Complex64>> = (0..d)
            .map(|a| {
                let n = grid.sizes()[a];
                (0..n)
                    .map(|j| {
                        let k = if j < n / 2 { j as f64 } else { j as f64 - n as f64 };
                        if j == n / 2 {
                            // Nyquist coefficient represents cos(Nθ/2).
                            Complex64::new((k * theta[a]).cos(), 0.0)
                        } else {
                            Complex64::from_polar(1.0, k * theta[a])
                        }
                    })
                    .collect()
            })
            .collect();
        let mut phases = vec![Complex64::new(1.0, 0.0); len];
        let mut stride = len;
        for (a, table) in per_axis.iter().enumerate() {
            let n = grid.sizes()[a];
            stride /= n;
            for (flat, ph) in phases.iter_mut().enumerate() {
                *ph *= table[(flat / stride) % n];
            }
        }
        DMatrix::from_fn(self.rows, self.cols, |i, j| {
            let c = &self.coeffs[(i * self.cols + j) * len..(i * self.cols + j + 1) * len];
            c.iter().zip(&phases).map(|(a, b)| (a * b).re).sum()
        })
    }

    /// The same trigonometric polynomial on another grid of equal dimension.
    /// Modes the target cannot represent are dropped; a Nyquist mode moving
    /// to a finer grid is split evenly between `±N_a/2`, and `±N_a/2` of a
    /// finer source fold back onto the Nyquist mode.
    pub fn resample(&self, target: &Grid) -> Result<Self> {
        let d = self.grid.dims();
        if target.dims() != d {
            return Err(TorusError::ShapeMismatch(format!(
                "cannot resample a {d}-dimensional series onto a {}-dimensional grid",
                target.dims()
            )));
        }
        if *target == self.grid {
            return Ok(self.clone());
        }
        let (src, dst) = (self.grid.sizes(), target.sizes());
        let (len, tlen) = (self.grid.len(), target.len());
        // Source flat index -> (target flat index, weight) pairs.
        let mut map: Vec<Vec<(usize, f64)>> = Vec::with_capacity(len);
        let mut k = vec![0i64; d];
        for idx in 0..len {
            let mut images = vec![(Vec::with_capacity(d), 1.0)];
            for a in 0..d {
                let ka = self.grid.mode(idx)[a];
                let (ns, nt) = (src[a] as i64, dst[a] as i64);
                let choices: Vec<(i64, f64)> = if ka == -ns / 2 && nt > ns {
                    vec![(ka, 0.5), (-ka, 0.5)]
                } else if nt == ns || 2 * ka.abs() < nt {
                    vec![(ka, 1.0)]
                } else if 2 * ka.abs() == nt {
                    vec![(-nt / 2, 1.0)]
                } else {
                    vec![]
                };
                images = images
                    .into_iter()
                    .flat_map(|(modes, w)| {
                        choices.iter().map(move |&(c, cw)| {
                            let mut m: Vec<i64> = modes.clone();
                            m.push(c);
                            (m, w * cw)
                        })
                    })
                    .collect();
            }
            map.push(
                images
                    .into_iter()
                    .map(|(modes, w)| {
                        k.copy_from_slice(&modes);
                        (target.index_of(&k), w)
                    })
                    .collect(),
            );
        }
        let mut coeffs = vec![Complex64::default(); self.rows * self.cols * tlen];
        for (c, block) in self.coeffs.chunks(len).enumerate() {
            let out = &mut coeffs[c * tlen..(c + 1) * tlen];
            for (idx, v) in block.iter().enumerate() {
                for &(t, w) in &map[idx] {
                    out[t] += v * w;
                }
            }
        }
        Ok(Self::from_coeffs_unchecked(target, self.rows, self.cols, coeffs))
    }

    /// Zero every mode with some `|k_a| > N_a/3`, the band whose energy
    /// [`FourierSeries::tail_energy`] reports.
    pub fn low_pass(&self) -> Self {
        let grid = self.grid.clone();
        let d = grid.dims();
        self.map_modes(|idx| {
            let k = grid.mode(idx);
            if (0..d).any(|a| 3 * k[a].unsigned_abs() as usize > grid.sizes()[a]) {
                Complex64::default()
            } else {
                Complex64::new(1.0, 0.0)
            }
        })
    }

    /// Relative amplitude carried by the top third of the represented
    /// modes, `sqrt(E_tail / E_total)`, maximized over components.
    pub fn tail_energy(&self) -> f64 {
        let grid = &self.grid;
        let len = grid.len();
        let d = grid.dims();
        let is_tail: Vec<bool> = (0..len)
            .map(|idx| {
                let k = grid.mode(idx);
                (0..d).any(|a| 3 * k[a].unsigned_abs() as usize > grid.sizes()[a])
            })
            .collect();
        let mut worst = 0.0f64;
        for block in self.coeffs.chunks(len) {
            let total: f64 = block.iter().map(|c| c.norm_sqr()).sum();
            if total == 0.0 {
                continue;
            }
            let tail: f64 = block
                .iter()
                .zip(&is_tail)
                .filter(|(_, &t)| t)
                .map(|(c, _)| c.norm_sqr())
                .sum();
            worst = worst.max((tail / total).sqrt());
        }
        worst
    }

    fn padded_samples(&self) -> Arc<Vec<f64>> {
        self.padded
            .get_or_init(|| {
                let data = &self.grid.data;
                let len = data.base.len;
                let plen = data.padded.len;
                let spectra: Vec<Vec<Complex64>> = self
                    .coeffs
                    .chunks(len)
                    .map(|block| {
                        let mut spectrum = vec![Complex64::default(); plen];
                        for &(src, dst, w) in &data.pad_map {
                            spectrum[dst] += block[src] * w;
                        }
                        spectrum
                    })
                    .collect();
                let refs: Vec<&[Complex64]> = spectra.iter().map(|s| s.as_slice()).collect();
                Arc::new(inverse_real(&data.padded, &refs).concat())
            })
            .clone()
    }

    /// Matrix product `self · other` evaluated on the 3/2-padded grid and
    /// truncated back to the represented modes (Nyquist modes dropped).
    pub fn multiply(&self, other: &FourierSeries) -> Result<Self> {
        if self.grid != other.grid {
            return Err(TorusError::ShapeMismatch(format!(
                "grids differ: {:?} vs {:?}",
                self.grid, other.grid
            )));
        }
        if self.cols != other.rows {
            return Err(TorusError::ShapeMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = &self.grid.data;
        let plen = data.padded.len;
        let (r, m, c) = (self.rows, self.cols, other.cols);
        let a = self.padded_samples();
        let b = other.padded_samples();
        let mut prod = vec![0.0; r * c * plen];
        for i in 0..r {
            for j in 0..c {
                let out = &mut prod[(i * c + j) * plen..(i * c + j + 1) * plen];
                for k in 0..m {
                    let pa = &a[(i * m + k) * plen..(i * m + k + 1) * plen];
                    let pb = &b[(k * c + j) * plen..(k * c + j + 1) * plen];
                    for ((o, x), y) in out.iter_mut().zip(pa).zip(pb) {
                        *o += x * y;
                    }
                }
            }
        }
        let comps: Vec<&[f64]> = prod.chunks(plen).collect();
        let spectra = forward_real(&data.padded, &comps);
        let len = data.base.len;
        let mut coeffs = vec![Complex64::default(); r * c * len];
        for (blk, spectrum) in spectra.iter().enumerate() {
            let dst = &mut coeffs[blk * len..(blk + 1) * len];
            for &(base_idx, pad_idx) in &data.trunc_map {
                dst[base_idx] = spectrum[pad_idx];
            }
        }
        Ok(Self::from_coeffs_unchecked(&self.grid, r, c, coeffs))
    }

    /// Apply `f(point_index, value, out)` on every grid point; `value` and
    /// `out` are row-major matrices.
    pub fn map_points<F>(&self, rows: usize, cols: usize, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, &[f64], &mut [f64]) -> Result<()>,
    {
        let len = self.grid.len();
        let nin = self.rows * self.cols;
        let nout = rows * cols;
        let mut input = vec![0.0; nin];
        let mut output = vec![0.0; nout];
        let mut samples = vec![0.0; nout * len];
        for p in 0..len {
            for (c, v) in input.iter_mut().enumerate() {
                *v = self.samples[c * len + p];
            }
            f(p, &input, &mut output)?;
            for (c, v) in output.iter().enumerate() {
                samples[c * len + p] = *v;
            }
        }
        Self::from_samples(&self.grid, rows, cols, samples)
    }

    fn linear_map<F>(&self, rows: usize, cols: usize, f: F) -> Self
    where
        F: Fn(usize, usize) -> Vec<(usize, f64)>,
    {
        let len = self.grid.len();
        let mut out = Self::zeros(&self.grid, rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                let dst = (i * cols + j) * len;
                for (src, w) in f(i, j) {
                    if w == 0.0 {
                        continue;
                    }
                    let s = src * len;
                    for p in 0..len {
                        out.samples[dst + p] += w * self.samples[s + p];
                        out.coeffs[dst + p] += self.coeffs[s + p] * w;
                    }
                }
            }
        }
        out
    }

    /// `M · self` for a constant matrix `M`.
    pub fn left_mul_const(&self, m: &DMatrix<f64>) -> Result<Self> {
        if m.ncols() != self.rows {
            return Err(TorusError::ShapeMismatch(format!(
                "constant {}x{} times series {}x{}",
                m.nrows(),
                m.ncols(),
                self.rows,
                self.cols
            )));
        }
        let cols = self.cols;
        Ok(self.linear_map(m.nrows(), cols, |i, j| {
            (0..m.ncols()).map(|k| (k * cols + j, m[(i, k)])).collect()
        }))
    }

    /// `self · M` for a constant matrix `M`.
    pub fn right_mul_const(&self, m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != self.cols {
            return Err(TorusError::ShapeMismatch(format!(
                "series {}x{} times constant {}x{}",
                self.rows,
                self.cols,
                m.nrows(),
                m.ncols()
            )));
        }
        let cols = self.cols;
        Ok(self.linear_map(self.rows, m.ncols(), |i, j| {
            (0..cols).map(|k| (i * cols + k, m[(k, j)])).collect()
        }))
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.padded = OnceLock::new();
        out.samples.iter_mut().for_each(|v| *v *= s);
        out.coeffs.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// Add a constant matrix.
    pub fn add_constant(&self, value: &DMatrix<f64>) -> Result<Self> {
        if value.shape() != self.shape() {
            return Err(TorusError::ShapeMismatch("constant shape differs".into()));
        }
        let len = self.grid.len();
        let mut out = self.clone();
        out.padded = OnceLock::new();
        for i in 0..self.rows {
            for j in 0..self.cols {
                let c = i * self.cols + j;
                let v = value[(i, j)];
                out.samples[c * len..(c + 1) * len].iter_mut().for_each(|s| *s += v);
                out.coeffs[c * len].re += v;
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Self {
        let cols = self.cols;
        self.linear_map(self.cols, self.rows, |i, j| vec![(j * cols + i, 1.0)])
    }

    /// Sub-block with the given row and column ranges.
    pub fn block(&self, rows: Range<usize>, cols: Range<usize>) -> Self {
        assert!(rows.end <= self.rows && cols.end <= self.cols, "block out of range");
        let width = self.cols;
        let (r0, c0) = (rows.start, cols.start);
        self.linear_map(rows.len(), cols.len(), |i, j| vec![((i + r0) * width + j + c0, 1.0)])
    }

    pub fn rows_range(&self, rows: Range<usize>) -> Self {
        self.block(rows, 0..self.cols)
    }

    pub fn cols_range(&self, cols: Range<usize>) -> Self {
        self.block(0..self.rows, cols)
    }

    pub fn component(&self, i: usize, j: usize) -> Self {
        self.block(i..i + 1, j..j + 1)
    }

    /// Horizontal concatenation.
    pub fn hstack(parts: &[&FourierSeries]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| TorusError::ShapeMismatch("empty stack".into()))?;
        let rows = first.rows;
        if parts.iter().any(|p| p.rows != rows || p.grid != first.grid) {
            return Err(TorusError::ShapeMismatch("hstack parts disagree".into()));
        }
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let len = first.grid.len();
        let mut samples = Vec::with_capacity(rows * cols * len);
        let mut coeffs = Vec::with_capacity(rows * cols * len);
        for i in 0..rows {
            for p in parts {
                let s = i * p.cols * len;
                let e = (i + 1) * p.cols * len;
                samples.extend_from_slice(&p.samples[s..e]);
                coeffs.extend_from_slice(&p.coeffs[s..e]);
            }
        }
        Ok(Self::from_parts(&first.grid, rows, cols, samples, coeffs))
    }

    /// Vertical concatenation.
    pub fn vstack(parts: &[&FourierSeries]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| TorusError::ShapeMismatch("empty stack".into()))?;
        let cols = first.cols;
        if parts.iter().any(|p| p.cols != cols || p.grid != first.grid) {
            return Err(TorusError::ShapeMismatch("vstack parts disagree".into()));
        }
        let rows: usize = parts.iter().map(|p| p.rows).sum();
        let mut samples = Vec::new();
        let mut coeffs = Vec::new();
        for p in parts {
            samples.extend_from_slice(&p.samples);
            coeffs.extend_from_slice(&p.coeffs);
        }
        Ok(Self::from_parts(&first.grid, rows, cols, samples, coeffs))
    }

    fn zip_with(&self, other: &FourierSeries, sign: f64) -> Self {
        assert_eq!(self.shape(), other.shape(), "shape mismatch in series arithmetic");
        assert!(self.grid == other.grid, "grid mismatch in series arithmetic");
        let samples = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| a + sign * b)
            .collect();
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a + b * sign)
            .collect();
        Self::from_parts(&self.grid, self.rows, self.cols, samples, coeffs)
    }

    /// Write the coefficients as plain text: a header `d rows cols N_1 .. N_d`
    /// then one line `k_1 .. k_d row col re im` per mode and component.
    pub fn write_coeffs<W: Write>(&self, mut out: W) -> Result<()> {
        let grid = &self.grid;
        let sizes: Vec<String> = grid.sizes().iter().map(|n| n.to_string()).collect();
        writeln!(out, "{} {} {} {}", grid.dims(), self.rows, self.cols, sizes.join(" "))?;
        let len = grid.len();
        for idx in 0..len {
            let k: Vec<String> = grid.mode(idx).iter().map(|k| k.to_string()).collect();
            let k = k.join(" ");
            for i in 0..self.rows {
                for j in 0..self.cols {
                    let c = self.coeffs[(i * self.cols + j) * len + idx];
                    writeln!(out, "{k} {i} {j} {:.17e} {:.17e}", c.re, c.im)?;
                }
            }
        }
        Ok(())
    }

    /// Parse the format produced by [`FourierSeries::write_coeffs`].
    pub fn read_coeffs<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| TorusError::Parse("empty coefficient dump".into()))??;
        let nums: Vec<usize> = header
            .split_whitespace()
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|e| TorusError::Parse(format!("header: {e}")))
            })
            .collect::<Result<_>>()?;
        if nums.len() < 4 || nums.len() != 3 + nums[0] {
            return Err(TorusError::Parse(format!("malformed header '{header}'")));
        }
        let (d, rows, cols) = (nums[0], nums[1], nums[2]);
        let grid = Grid::new(&nums[3..])?;
        let len = grid.len();
        let mut coeffs = vec![Complex64::default(); rows * cols * len];
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != d + 4 {
                return Err(TorusError::Parse(format!(
                    "line {}: expected {} fields",
                    lineno + 2,
                    d + 4
                )));
            }
            let bad = |e: String| TorusError::Parse(format!("line {}: {e}", lineno + 2));
            let k = toks[..d]
                .iter()
                .map(|t| t.parse::<i64>().map_err(|e| bad(e.to_string())))
                .collect::<Result<Vec<_>>>()?;
            let i: usize = toks[d]
                .parse()
                .map_err(|e: std::num::ParseIntError| bad(e.to_string()))?;
            let j: usize = toks[d + 1]
                .parse()
                .map_err(|e: std::num::ParseIntError| bad(e.to_string()))?;
            let re: f64 = toks[d + 2]
                .parse()
                .map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?;
            let im: f64 = toks[d + 3]
                .parse()
                .map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?;
            if i >= rows || j >= cols {
                return Err(bad(format!("component ({i},{j}) outside {rows}x{cols}")));
            }
            coeffs[(i * cols + j) * len + grid.index_of(&k)] = Complex64::new(re, im);
        }
        Self::from_coeffs(&grid, rows, cols, coeffs)
    }
}

impl Add for &FourierSeries {
    type Output = FourierSeries;
    fn add(self, rhs: &FourierSeries) -> FourierSeries {
        self.zip_with(rhs, 1.0)
    }
}

impl Sub for &FourierSeries {
    type Output = FourierSeries;
    fn sub(self, rhs: &FourierSeries) -> FourierSeries {
        self.zip_with(rhs, -1.0)
    }
}

impl Neg for &FourierSeries {
    type Output = FourierSeries;
    fn neg(self) -> FourierSeries {
        self.scale(-1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid2(n: usize) -> Grid {
        Grid::uniform(2, n).unwrap()
    }

    fn idx(grid: &Grid, k: &[i64]) -> usize {
        grid.index_of(k)
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(Grid::new(&[12]).is_err());
        assert!(Grid::new(&[]).is_err());
        assert!(Grid::new(&[2]).is_err());
    }

    #[test]
    fn constant_has_only_mean() {
        let g = grid2(8);
        let u = FourierSeries::from_samples(&g, 1, 1, vec![2.5; 64]).unwrap();
        assert!((u.coeffs()[0].re - 2.5).abs() < 1e-15);
        assert!(u.coeffs()[1..].iter().all(|c| c.norm() < 1e-15));
    }

    #[test]
    fn cosine_has_two_halves() {
        let g = grid2(8);
        let u = FourierSeries::from_fn(&g, 1, 1, |t, o| o[0] = t[0].cos()).unwrap();
        for flat in 0..g.len() {
            let k = g.mode(flat);
            let expect = if k == [1, 0] || k == [-1, 0] { 0.5 } else { 0.0 };
            assert!((u.coeffs()[flat] - Complex64::new(expect, 0.0)).norm() < 1e-15, "{k:?}");
        }
    }

    #[test]
    fn non_finite_samples_rejected() {
        let g = grid2(4);
        let mut s = vec![0.0; 16];
        s[3] = f64::NAN;
        assert!(matches!(
            FourierSeries::from_samples(&g, 1, 1, s),
            Err(TorusError::InvalidData(_))
        ));
    }

    #[test]
    fn lie_derivative_of_cosine() {
        let g = grid2(16);
        let w = [2f64.sqrt(), 3f64.sqrt()];
        let u = FourierSeries::from_fn(&g, 1, 1, |t, o| o[0] = t[0].cos()).unwrap();
        let lu = u.lie_derivative(&w).unwrap();
        for p in 0..g.len() {
            let t = g.angles(p);
            assert!((lu.samples()[p] - w[0] * t[0].sin()).abs() < 1e-14);
        }
        let c = FourierSeries::constant(&g, &DMatrix::from_element(1, 1, 4.0));
        assert!(c.lie_derivative(&w).unwrap().sup_norm() < 1e-15);
    }

    #[test]
    fn derivative_of_sine() {
        let g = grid2(16);
        let u = FourierSeries::from_fn(&g, 1, 1, |t, o| o[0] = t[1].sin()).unwrap();
        let du = u.derivative(1).unwrap();
        for p in 0..g.len() {
            assert!((du.samples()[p] - g.angles(p)[1].cos()).abs() < 1e-14);
        }
        assert!(u.derivative(0).unwrap().sup_norm() < 1e-14);
        assert!(matches!(u.derivative(2), Err(TorusError::IndexOutOfRange(_))));
    }

    #[test]
    fn square_of_cosine_is_dealiased() {
        let g = grid2(8);
        let u = FourierSeries::from_fn(&g, 1, 1, |t, o| o[0] = t[0].cos()).unwrap();
        let uu = u.multiply(&u).unwrap();
        assert!((uu.coeffs()[0].re - 0.5).abs() < 1e-15);
        assert!((uu.coeffs()[idx(&g, &[2, 0])].re - 0.25).abs() < 1e-15);
        assert!((uu.coeffs()[idx(&g, &[-2, 0])].re - 0.25).abs() < 1e-15);
        let one = FourierSeries::constant(&g, &DMatrix::from_element(1, 1, 1.0));
        let same = u.multiply(&one).unwrap();
        assert!((&same - &u).sup_norm() < 1e-15);
    }

    #[test]
    fn multiply_checks_shapes() {
        let g = grid2(4);
        let a = FourierSeries::zeros(&g, 2, 3);
        let b = FourierSeries::zeros(&g, 2, 3);
        assert!(matches!(a.multiply(&b), Err(TorusError::ShapeMismatch(_))));
    }

    #[test]
    fn average_and_sup_norm() {
        let g = grid2(8);
        let u = FourierSeries::from_fn(&g, 1, 1, |t, o| o[0] = 3.0 + t[1].sin()).unwrap();
        assert!((u.average()[(0, 0)] - 3.0).abs() < 1e-15);
        let m = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 0.5, 0.0]);
        let c = FourierSeries::constant(&g, &m);
        assert_eq!(c.sup_norm(), 3.0);
        assert_eq!(FourierSeries::zeros(&g, 3, 1).sup_norm(), 0.0);
    }

    #[test]
    fn eval_at_matches_samples_and_functions() {
        let g = grid2(16);
        let u = FourierSeries::from_fn(&g, 1, 1, |t, o| o[0] = (t[0] - 2.0 * t[1]).cos() + 0.3 * t[1].sin()).unwrap();
        for p in [0, 5, 77] {
            assert!((u.eval_at(&g.angles(p))[(0, 0)] - u.samples()[p]).abs() < 1e-14);
        }
        let th = [0.3f64, 1.9];
        let v = (th[0] - 2.0 * th[1]).cos() + 0.3 * th[1].sin();
        assert!((u.eval_at(&th)[(0, 0)] - v).abs() < 1e-14);
        let nyq = FourierSeries::from_fn(&Grid::new(&[8]).unwrap(), 1, 1, |t, o| o[0] = (4.0 * t[0]).cos()).unwrap();
        assert!((nyq.eval_at(&[PI / 3.0])[(0, 0)] - (4.0 * PI / 3.0).cos()).abs() < 1e-14);
    }

    #[test]
    fn structural_ops() {
        let g = Grid::new(&[8]).unwrap();
        let a = FourierSeries::from_fn(&g, 2, 3, |t, o| {
            for (i, v) in o.iter_mut().enumerate() {
                *v = (i as f64 + 1.0) * t[0].cos();
            }
        })
        .unwrap();
        let at = a.transpose();
        assert_eq!(at.shape(), (3, 2));
        assert_eq!(at.component_samples(2, 1), a.component_samples(1, 2));
        let top = a.rows_range(0..1);
        let bottom = a.rows_range(1..2);
        let back = FourierSeries::vstack(&[&top, &bottom]).unwrap();
        assert_eq!(back.samples(), a.samples());
        let left = a.cols_range(0..1);
        let right = a.cols_range(1..3);
        let back = FourierSeries::hstack(&[&left, &right]).unwrap();
        assert_eq!(back.samples(), a.samples());
        let m = DMatrix::from_row_slice(1, 2, &[2.0, -1.0]);
        let ma = a.left_mul_const(&m).unwrap();
        for p in 0..g.len() {
            let expect = 2.0 * a.component_samples(0, 1)[p] - a.component_samples(1, 1)[p];
            assert!((ma.component_samples(0, 1)[p] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn dump_round_trip() {
        let g = Grid::new(&[8, 4]).unwrap();
        let u = FourierSeries::from_fn(&g, 2, 1, |t, o| {
            o[0] = t[0].sin() * t[1].cos();
            o[1] = 1.0 + (t[0] + t[1]).cos();
        })
        .unwrap();
        let mut buf = Vec::new();
        u.write_coeffs(&mut buf).unwrap();
        let first = String::from_utf8(buf.clone()).unwrap();
        assert!(first.starts_with("2 2 1 8 4\n"));
        let v = FourierSeries::read_coeffs(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(v.shape(), (2, 1));
        assert!((&v - &u).sup_norm() < 1e-15);
    }
}
