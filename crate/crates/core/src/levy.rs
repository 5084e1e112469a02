//! Lévy noise on a periodic lattice, spectral smoothing by `(-Δ + m²)^{-α}`,
//! and the truncated modal (generalized Karhunen-Loève) expansion.
//!
//! The torus `[-1, 1]^d` is split into `n^d` cells (`n` odd) of edge length
//! `2/n`. A noise field stores, per cell, the noise integrated over that cell,
//! so each value is infinitely divisible with characteristic function
//! `exp(|cell| ψ(t))`. Values are laid out row-major with the first coordinate
//! varying slowest.

use std::f64::consts::PI;
use std::io::{Read, Write};

use num_traits::Zero;
use rand::Rng as _;
use rand_distr::{Distribution, Gamma, Normal, Poisson};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::scalar::Real;

/// The infinitely divisible noise laws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LevyLaw {
    /// `ψ(t) = -σ² t² / 2`
    Gaussian { sigma2: f64 },
    /// `ψ(t) = λ (e^{it} - 1)`
    Poisson { lambda: f64 },
    /// `ψ(t) = -λ log(1 - it/β)`
    Gamma { lambda: f64, beta: f64 },
    /// `ψ(t) = -(λ/2) log(1 + t²/β²)`
    Bigamma { lambda: f64, beta: f64 },
}

impl LevyLaw {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LevyLaw::Gaussian { sigma2 } => sigma2 > 0.0 && sigma2.is_finite(),
            LevyLaw::Poisson { lambda } => lambda > 0.0 && lambda.is_finite(),
            LevyLaw::Gamma { lambda, beta } | LevyLaw::Bigamma { lambda, beta } => {
                lambda > 0.0 && beta > 0.0 && lambda.is_finite() && beta.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("law parameters must be positive and finite: {self:?}")))
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LevyLaw::Gaussian { .. } => "gaussian",
            LevyLaw::Poisson { .. } => "poisson",
            LevyLaw::Gamma { .. } => "gamma",
            LevyLaw::Bigamma { .. } => "bigamma",
        }
    }

    /// The four laws with matched second moments: `β = 1`, `σ² = λ = variance`.
    pub fn matched_family(variance: f64) -> [LevyLaw; 4] {
        [
            LevyLaw::Gaussian { sigma2: variance },
            LevyLaw::Poisson { lambda: variance },
            LevyLaw::Gamma { lambda: variance, beta: 1.0 },
            LevyLaw::Bigamma { lambda: variance, beta: 1.0 },
        ]
    }

    /// Build a law of the named kind from the shared parameter set.
    pub fn from_name(kind: &str, sigma2: f64, lambda: f64, beta: f64) -> Result<Self> {
        let law = match kind.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => LevyLaw::Gaussian { sigma2 },
            "poisson" => LevyLaw::Poisson { lambda },
            "gamma" => LevyLaw::Gamma { lambda, beta },
            "bigamma" => LevyLaw::Bigamma { lambda, beta },
            other => return Err(invalid(format!("unknown law {other:?}"))),
        };
        law.validate()?;
        Ok(law)
    }

    /// Lévy characteristic `ψ(t)`.
    pub fn characteristic_exponent(&self, t: f64) -> Complex<f64> {
        let i = Complex::new(0.0, 1.0);
        match *self {
            LevyLaw::Gaussian { sigma2 } => Complex::new(-0.5 * sigma2 * t * t, 0.0),
            LevyLaw::Poisson { lambda } => (Complex::new(0.0, t).exp() - 1.0) * lambda,
            LevyLaw::Gamma { lambda, beta } => -(Complex::new(1.0, 0.0) - i * t / beta).ln() * lambda,
            LevyLaw::Bigamma { lambda, beta } => Complex::new(-0.5 * lambda * (1.0 + t * t / (beta * beta)).ln(), 0.0),
        }
    }

    /// `ψ''(0)`; minus this is the variance density of the noise.
    pub fn psi_second_derivative_at_zero(&self) -> f64 {
        match *self {
            LevyLaw::Gaussian { sigma2 } => -sigma2,
            LevyLaw::Poisson { lambda } => -lambda,
            LevyLaw::Gamma { lambda, beta } | LevyLaw::Bigamma { lambda, beta } => -lambda / (beta * beta),
        }
    }

    /// Mean of the noise per unit volume, `-i ψ'(0)`.
    pub fn mean_density(&self) -> f64 {
        match *self {
            LevyLaw::Gaussian { .. } | LevyLaw::Bigamma { .. } => 0.0,
            LevyLaw::Poisson { lambda } => lambda,
            LevyLaw::Gamma { lambda, beta } => lambda / beta,
        }
    }

    /// Sampler for the noise integrated over a cell of the given measure.
    pub fn cell_sampler(&self, measure: f64) -> Result<CellSampler> {
        self.validate()?;
        let bad = |e: &dyn std::fmt::Display| invalid(format!("cannot build cell law: {e}"));
        Ok(match *self {
            LevyLaw::Gaussian { sigma2 } => {
                CellSampler::Gaussian(Normal::new(0.0, (sigma2 * measure).sqrt()).map_err(|e| bad(&e))?)
            }
            LevyLaw::Poisson { lambda } => CellSampler::Poisson(Poisson::new(lambda * measure).map_err(|e| bad(&e))?),
            LevyLaw::Gamma { lambda, beta } => {
                CellSampler::Gamma(Gamma::new(lambda * measure, 1.0 / beta).map_err(|e| bad(&e))?)
            }
            LevyLaw::Bigamma { lambda, beta } => {
                CellSampler::Bigamma(Gamma::new(0.5 * lambda * measure, 1.0 / beta).map_err(|e| bad(&e))?)
            }
        })
    }
}

/// Prepared per-cell distribution.
#[derive(Debug, Clone, Copy)]
pub enum CellSampler {
    Gaussian(Normal<f64>),
    Poisson(Poisson<f64>),
    Gamma(Gamma<f64>),
    /// Difference of two i.i.d. gamma variables.
    Bigamma(Gamma<f64>),
}

impl Distribution<f64> for CellSampler {
    fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            CellSampler::Gaussian(d) => d.sample(rng),
            CellSampler::Poisson(d) => d.sample(rng),
            CellSampler::Gamma(d) => d.sample(rng),
            CellSampler::Bigamma(d) => d.sample(rng) - d.sample(rng),
        }
    }
}

/// Periodic lattice of cell centres on `[-1, 1]^d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lattice {
    dim: usize,
    cells_per_side: usize,
}

impl Lattice {
    pub fn new(dim: usize, cells_per_side: usize) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("lattice dimension must be positive"));
        }
        if cells_per_side.is_multiple_of(2) {
            return Err(invalid(format!("cells per side must be odd, got {cells_per_side}")));
        }
        Ok(Self { dim, cells_per_side })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells_per_side(&self) -> usize {
        self.cells_per_side
    }

    /// Cell edge length `2/n`.
    pub fn spacing(&self) -> f64 {
        2.0 / self.cells_per_side as f64
    }

    pub fn cell_measure(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn len(&self) -> usize {
        self.cells_per_side.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Largest admissible mode radius `(n - 1) / 2`.
    pub fn max_radius(&self) -> usize {
        (self.cells_per_side - 1) / 2
    }

    /// Centre coordinate of cell `i` along one axis.
    pub fn center(&self, i: usize) -> f64 {
        -1.0 + self.spacing() * (i as f64 + 0.5)
    }

    pub fn multi_index(&self, mut linear: usize) -> Vec<usize> {
        let n = self.cells_per_side;
        let mut idx = vec![0; self.dim];
        for j in (0..self.dim).rev() {
            idx[j] = linear % n;
            linear /= n;
        }
        idx
    }

    pub fn linear_index(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.cells_per_side + i)
    }

    pub fn point(&self, linear: usize) -> Vec<f64> {
        self.multi_index(linear).into_iter().map(|i| self.center(i)).collect()
    }

    /// Signed integer frequency of DFT bin `k`; the wave number is `π` times it.
    pub fn signed_frequency(&self, k: usize) -> i64 {
        let n = self.cells_per_side as i64;
        let k = k as i64;
        if k <= (n - 1) / 2 {
            k
        } else {
            k - n
        }
    }

    /// Wave vector of the DFT bin with the given linear index.
    pub fn wave_vector(&self, linear: usize) -> Vec<f64> {
        self.multi_index(linear).into_iter().map(|k| PI * self.signed_frequency(k) as f64).collect()
    }
}

/// Real values on a [`Lattice`].
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeField<T> {
    lattice: Lattice,
    values: Vec<T>,
}

impl<T: Real> LatticeField<T> {
    pub fn new(lattice: Lattice, values: Vec<T>) -> Result<Self> {
        if values.len() != lattice.len() {
            return Err(invalid(format!("field has {} values, lattice has {} cells", values.len(), lattice.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("field values must be finite"));
        }
        Ok(Self { lattice, values })
    }

    pub fn constant(lattice: Lattice, value: T) -> Self {
        Self { lattice, values: vec![value; lattice.len()] }
    }

    /// Sample `f` at every cell centre.
    pub fn from_fn(lattice: Lattice, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..lattice.len()).map(|i| T::of(f(&lattice.point(i)))).collect();
        Self { lattice, values }
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { lattice: self.lattice, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    /// Periodic multilinear interpolation from the `2^d` surrounding cell centres.
    pub fn interpolate(&self, x: &[T]) -> T {
        let lat = &self.lattice;
        let d = lat.dim;
        debug_assert_eq!(x.len(), d);
        let n = lat.cells_per_side as i64;
        let h = T::of(lat.spacing());
        let half = T::of(0.5);
        let mut base = vec![0usize; d];
        let mut frac = vec![T::zero(); d];
        for j in 0..d {
            let u = (x[j] + T::one()) / h - half;
            let f = u.floor();
            frac[j] = u - f;
            let i0 = f.to_i64().unwrap_or(0);
            base[j] = i0.rem_euclid(n) as usize;
        }
        let mut acc = T::zero();
        let mut idx = vec![0usize; d];
        for corner in 0..(1usize << d) {
            let mut w = T::one();
            for j in 0..d {
                if corner >> j & 1 == 1 {
                    idx[j] = (base[j] + 1) % lat.cells_per_side;
                    w *= frac[j];
                } else {
                    idx[j] = base[j];
                    w *= T::one() - frac[j];
                }
            }
            if w != T::zero() {
                acc += w * self.values[lat.linear_index(&idx)];
            }
        }
        acc
    }

    /// Flat little-endian binary: `u32 d`, `u32 cells_per_side`, then `f64` values.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(&(self.lattice.dim as u32).to_le_bytes())?;
        out.write_all(&(self.lattice.cells_per_side as u32).to_le_bytes())?;
        for v in &self.values {
            out.write_all(&v.to_f64_lossy().to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self> {
        let mut hdr = [0u8; 8];
        input.read_exact(&mut hdr)?;
        let d = u32::from_le_bytes(hdr[0..4].try_into().unwrap()) as usize;
        let n = u32::from_le_bytes(hdr[4..8].try_into().unwrap()) as usize;
        let lattice = Lattice::new(d, n)?;
        let mut buf = vec![0u8; 8 * lattice.len()];
        input.read_exact(&mut buf).map_err(|_| Error::Parse("truncated field file".into()))?;
        let values = buf.chunks_exact(8).map(|c| T::of(f64::from_le_bytes(c.try_into().unwrap()))).collect();
        Self::new(lattice, values)
    }
}

/// Periodic multilinear interpolation of `field` at each point.
pub fn interpolate_bilinear<T: Real>(field: &LatticeField<T>, points: &[Vec<T>]) -> Vec<T> {
    points.iter().map(|p| field.interpolate(p)).collect()
}

/// Draw one noise field: each cell holds an independent draw with
/// characteristic function `exp(|cell| ψ(t))`.
pub fn sample_noise<T: Real>(lattice: &Lattice, law: &LevyLaw, seed: u64) -> Result<LatticeField<T>> {
    let sampler = law.cell_sampler(lattice.cell_measure())?;
    let mut rng = rng_from_seed(seed);
    Ok(sample_noise_with(lattice, &sampler, &mut rng))
}

pub fn sample_noise_with<T: Real>(lattice: &Lattice, sampler: &CellSampler, rng: &mut Rng) -> LatticeField<T> {
    let values = (0..lattice.len()).map(|_| T::of(sampler.sample(rng))).collect();
    LatticeField { lattice: *lattice, values }
}

/// Smoothing operator parameters: exponent `α` and mass squared `m²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingParams {
    pub alpha: f64,
    pub m2: f64,
}

impl SmoothingParams {
    pub fn new(alpha: f64, m2: f64) -> Result<Self> {
        let p = Self { alpha, m2 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.m2 > 0.0 && self.alpha.is_finite() && self.m2.is_finite()) {
            return Err(invalid(format!("smoothing needs alpha >= 0 and m^2 > 0, got {self:?}")));
        }
        Ok(())
    }

    /// Whether realizations are continuous in dimension `d` (`α > d` suffices for `d <= 4`).
    pub fn is_continuous_in(&self, d: usize) -> bool {
        let d = d as f64;
        self.alpha > d + f64::max(0.0, (3.0 * d - 12.0) / 8.0)
    }
}

/// Which eigenvalues the smoothing operator uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Spectrum {
    /// `(-symbol(κ) + m²)^{-α}` from the lattice Laplacian.
    LatticeSymbol,
    /// `(|κ|² + m²)^{-α}` from the continuum Laplacian on the torus.
    Continuum,
}

/// Symbol of the lattice Laplacian, `(1/h²) (Σ_j cos(h κ_j) - d)`.
pub fn laplacian_symbol(lattice: &Lattice, kappa: &[f64]) -> f64 {
    let h = lattice.spacing();
    (kappa.iter().map(|&k| (h * k).cos()).sum::<f64>() - kappa.len() as f64) / (h * h)
}

/// Eigenvalue of `(-Δ + m²)^{-α}` for wave vector `kappa`.
pub fn smoothing_eigenvalue(lattice: &Lattice, kappa: &[f64], params: &SmoothingParams, spectrum: Spectrum) -> f64 {
    let base = match spectrum {
        Spectrum::LatticeSymbol => -laplacian_symbol(lattice, kappa) + params.m2,
        Spectrum::Continuum => kappa.iter().map(|k| k * k).sum::<f64>() + params.m2,
    };
    base.powf(-params.alpha)
}

fn fft_along_axes<T: Real>(lattice: &Lattice, buf: &mut [Complex<T>], inverse: bool) {
    let n = lattice.cells_per_side;
    let d = lattice.dim;
    let mut planner = FftPlanner::<T>::new();
    let fft = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
    let mut line = vec![Complex::zero(); n];
    let mut scratch = vec![Complex::zero(); fft.get_inplace_scratch_len()];
    let total = buf.len();
    for axis in 0..d {
        let stride = n.pow((d - 1 - axis) as u32);
        let block = stride * n;
        for start in (0..total).step_by(block) {
            for offset in 0..stride {
                let base = start + offset;
                for (k, c) in line.iter_mut().enumerate() {
                    *c = buf[base + k * stride];
                }
                fft.process_with_scratch(&mut line, &mut scratch);
                for (k, c) in line.iter().enumerate() {
                    buf[base + k * stride] = *c;
                }
            }
        }
    }
}

/// Apply a real, even spectral multiplier to a lattice field by FFT.
fn spectral_multiply<T: Real>(field: &LatticeField<T>, multiplier: impl Fn(&[f64]) -> f64) -> Result<LatticeField<T>> {
    let lattice = field.lattice;
    let mut buf: Vec<Complex<T>> = field.values.iter().map(|&v| Complex::new(v, T::zero())).collect();
    fft_along_axes(&lattice, &mut buf, false);
    for (i, c) in buf.iter_mut().enumerate() {
        *c = *c * T::of(multiplier(&lattice.wave_vector(i)));
    }
    fft_along_axes(&lattice, &mut buf, true);
    let inv_n = T::one() / T::of_usize(lattice.len());
    let scale = buf.iter().fold(T::one(), |m, c| m.max(c.re.abs() * inv_n));
    let tol = T::of(1e-10).max(T::epsilon() * T::of(1e4)) * scale;
    let mut values = Vec::with_capacity(buf.len());
    for c in &buf {
        let (re, im) = (c.re * inv_n, c.im * inv_n);
        if !re.is_finite() || !im.is_finite() {
            return Err(Error::Internal("non-finite FFT output".into()));
        }
        if im.abs() > tol {
            return Err(Error::Internal(format!("imaginary residue {im} after smoothing")));
        }
        values.push(re);
    }
    Ok(LatticeField { lattice, values })
}

/// `F^{-1}((-symbol + m²)^{-α} F(noise))` with the lattice-Laplacian symbol.
pub fn smooth_field<T: Real>(noise: &LatticeField<T>, params: &SmoothingParams) -> Result<LatticeField<T>> {
    smooth_field_with(noise, params, Spectrum::LatticeSymbol)
}

pub fn smooth_field_with<T: Real>(
    noise: &LatticeField<T>,
    params: &SmoothingParams,
    spectrum: Spectrum,
) -> Result<LatticeField<T>> {
    params.validate()?;
    let lattice = noise.lattice;
    spectral_multiply(noise, |k| smoothing_eigenvalue(&lattice, k, params, spectrum))
}

/// `2^{-d} Σ_{κ ∈ Γ'} λ_κ^power`: the circulant kernel of `(-Δ + m²)^{-α·power}`
/// at the origin, summed over the dual lattice.
pub fn kernel_at_origin(lattice: &Lattice, params: &SmoothingParams, spectrum: Spectrum, power: f64) -> f64 {
    let sum: f64 =
        (0..lattice.len()).map(|i| smoothing_eigenvalue(lattice, &lattice.wave_vector(i), params, spectrum).powf(power)).sum();
    sum / 2f64.powi(lattice.dim as i32)
}

/// Analytic pointwise variance of a smoothed lattice noise field.
///
/// The noise holds cell integrals, so the FFT-smoothed field carries one factor
/// of the cell measure relative to the continuum field; the result is
/// `-ψ''(0) |cell|² K_{2α}(0)`.
pub fn smoothed_point_variance(law: &LevyLaw, params: &SmoothingParams, lattice: &Lattice, spectrum: Spectrum) -> f64 {
    let cm = lattice.cell_measure();
    -law.psi_second_derivative_at_zero() * cm * cm * kernel_at_origin(lattice, params, spectrum, 2.0)
}

/// Kind of a retained eigenfunction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeKind {
    Constant,
    Cos,
    Sin,
}

impl ModeKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModeKind::Constant => "constant",
            ModeKind::Cos => "cos",
            ModeKind::Sin => "sin",
        }
    }
}

/// One retained mode: kind and integer wave number (`κ = π * wave`).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mode {
    pub kind: ModeKind,
    pub wave: Vec<i64>,
}

impl Mode {
    pub fn kappa(&self) -> Vec<f64> {
        self.wave.iter().map(|&k| PI * k as f64).collect()
    }

    fn eval(&self, x: &[f64]) -> f64 {
        let phase: f64 = self.wave.iter().zip(x).map(|(&k, &xi)| PI * k as f64 * xi).sum();
        match self.kind {
            ModeKind::Constant => 1.0,
            ModeKind::Cos => phase.cos(),
            ModeKind::Sin => phase.sin(),
        }
    }
}

/// Ordered mode list for radius `r`: the constant mode, then for each
/// `k in Z^d_{r,+}` in lexicographic order a cosine and a sine mode.
pub fn mode_index(dim: usize, radius: usize) -> Vec<Mode> {
    let r = radius as i64;
    let mut modes = vec![Mode { kind: ModeKind::Constant, wave: vec![0; dim] }];
    let width = (2 * r + 1) as usize;
    let total = width.pow(dim as u32);
    for lin in 0..total {
        let mut rem = lin;
        let mut k = vec![0i64; dim];
        for j in (0..dim).rev() {
            k[j] = (rem % width) as i64 - r;
            rem /= width;
        }
        match k.iter().find(|&&v| v != 0) {
            Some(&first) if first > 0 => {
                modes.push(Mode { kind: ModeKind::Cos, wave: k.clone() });
                modes.push(Mode { kind: ModeKind::Sin, wave: k });
            }
            _ => {}
        }
    }
    modes
}

/// Random coefficient vector `η` of the truncated modal expansion.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalCoefficients<T> {
    radius: usize,
    modes: Vec<Mode>,
    eta: Vec<T>,
}

impl<T: Real> ModalCoefficients<T> {
    pub fn new(dim: usize, radius: usize, eta: Vec<T>) -> Result<Self> {
        let modes = mode_index(dim, radius);
        if modes.len() != eta.len() {
            return Err(invalid(format!("radius {radius} in {dim}D needs {} coefficients, got {}", modes.len(), eta.len())));
        }
        Ok(Self { radius, modes, eta })
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn len(&self) -> usize {
        self.eta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eta.is_empty()
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn eta(&self) -> &[T] {
        &self.eta
    }

    pub fn into_eta(self) -> Vec<T> {
        self.eta
    }

    /// CSV `index,kind,kappa1,...,kappad,value`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let d = self.modes.first().map_or(0, |m| m.wave.len());
        let kappas: Vec<String> = (1..=d).map(|j| format!("kappa{j}")).collect();
        writeln!(out, "index,kind,{},value", kappas.join(","))?;
        for (i, (m, v)) in self.modes.iter().zip(&self.eta).enumerate() {
            let ks: Vec<String> = m.kappa().iter().map(|k| format!("{k:.16e}")).collect();
            writeln!(out, "{i},{},{},{:.16e}", m.kind.as_str(), ks.join(","), v.to_f64_lossy())?;
        }
        Ok(())
    }
}

/// Precomputed eigenfunction table for extracting and reconstructing modes on
/// a fixed lattice.
#[derive(Debug, Clone)]
pub struct ModeBasis<T> {
    lattice: Lattice,
    radius: usize,
    modes: Vec<Mode>,
    /// `modes.len() x lattice.len()`, row-major.
    table: Vec<T>,
}

impl<T: Real> ModeBasis<T> {
    pub fn new(lattice: &Lattice, radius: usize) -> Result<Self> {
        if radius > lattice.max_radius() {
            return Err(invalid(format!(
                "mode radius {radius} needs {} cells per side, lattice has {}",
                2 * radius + 1,
                lattice.cells_per_side
            )));
        }
        let modes = mode_index(lattice.dim, radius);
        let points: Vec<Vec<f64>> = (0..lattice.len()).map(|i| lattice.point(i)).collect();
        let mut table = Vec::with_capacity(modes.len() * points.len());
        for m in &modes {
            table.extend(points.iter().map(|p| T::of(m.eval(p))));
        }
        Ok(Self { lattice: *lattice, radius, modes, table })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    fn row(&self, l: usize) -> &[T] {
        let n = self.lattice.len();
        &self.table[l * n..(l + 1) * n]
    }

    /// `η_ℓ = |cell| Σ_x Z(x) ζ_ℓ(x)`.
    pub fn extract(&self, noise: &LatticeField<T>) -> Result<ModalCoefficients<T>> {
        if noise.lattice != self.lattice {
            return Err(invalid("noise lattice does not match the mode basis"));
        }
        let cm = T::of(self.lattice.cell_measure());
        let eta = (0..self.modes.len())
            .map(|l| cm * self.row(l).iter().zip(&noise.values).fold(T::zero(), |acc, (&z, &v)| acc + z * v))
            .collect();
        Ok(ModalCoefficients { radius: self.radius, modes: self.modes.clone(), eta })
    }

    /// Per-mode factor multiplying `η_ℓ ζ_ℓ(x)` in the truncated expansion:
    /// `1/(2^d m^{2α})` for the constant and `1/(2^{d-1} (|κ|²+m²)^α)` otherwise.
    pub fn expansion_weights(&self, params: &SmoothingParams) -> Vec<f64> {
        let d = self.lattice.dim as i32;
        self.modes
            .iter()
            .map(|m| {
                let ev = smoothing_eigenvalue(&self.lattice, &m.kappa(), params, Spectrum::Continuum);
                match m.kind {
                    ModeKind::Constant => ev / 2f64.powi(d),
                    _ => ev / 2f64.powi(d - 1),
                }
            })
            .collect()
    }

    /// Exact mean and variance of each coefficient under noise law `law`:
    /// `E η = E[cell] |cell| Σ ζ` and `Var η = -ψ''(0) |cell|³ Σ ζ²`.
    ///
    /// Distinct modes are uncorrelated; for Gaussian noise they are independent.
    pub fn moments(&self, law: &LevyLaw) -> (Vec<f64>, Vec<f64>) {
        let cm = self.lattice.cell_measure();
        let var_cell = -law.psi_second_derivative_at_zero() * cm;
        let mean_cell = law.mean_density() * cm;
        (0..self.modes.len())
            .map(|l| {
                let (s1, s2) = self.row(l).iter().fold((0.0, 0.0), |(a, b), z| {
                    let z = z.to_f64_lossy();
                    (a + z, b + z * z)
                });
                // non-constant modes sum to zero over whole periods
                let s1 = if self.modes[l].kind == ModeKind::Constant { s1 } else { 0.0 };
                (mean_cell * cm * s1, var_cell * cm * cm * s2)
            })
            .unzip()
    }

    /// Evaluate the truncated expansion at every lattice point.
    pub fn reconstruct(&self, eta: &[T], params: &SmoothingParams) -> Result<LatticeField<T>> {
        if eta.len() != self.modes.len() {
            return Err(invalid(format!("expected {} coefficients, got {}", self.modes.len(), eta.len())));
        }
        params.validate()?;
        let coef: Vec<T> = self.expansion_weights(params).into_iter().zip(eta).map(|(w, &e)| T::of(w) * e).collect();
        let mut values = vec![T::zero(); self.lattice.len()];
        for (l, &c) in coef.iter().enumerate() {
            if c == T::zero() {
                continue;
            }
            for (v, &z) in values.iter_mut().zip(self.row(l)) {
                *v += c * z;
            }
        }
        Ok(LatticeField { lattice: self.lattice, values })
    }
}

pub fn extract_modes<T: Real>(noise: &LatticeField<T>, radius: usize) -> Result<ModalCoefficients<T>> {
    ModeBasis::new(&noise.lattice, radius)?.extract(noise)
}

pub fn reconstruct_field<T: Real>(
    modes: &ModalCoefficients<T>,
    params: &SmoothingParams,
    lattice: &Lattice,
) -> Result<LatticeField<T>> {
    ModeBasis::new(lattice, modes.radius)?.reconstruct(&modes.eta, params)
}

/// Monte Carlo check of the covariance identity at one lattice point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceCheck {
    pub empirical: f64,
    pub analytic: f64,
    /// Standard error of the empirical variance.
    pub standard_error: f64,
    pub samples: usize,
}

impl CovarianceCheck {
    /// `|empirical - analytic|` in units of the standard error.
    pub fn z_score(&self) -> f64 {
        (self.empirical - self.analytic).abs() / self.standard_error
    }
}

/// Empirical variance of the smoothed field at the lattice centre over
/// `n_samples` independent noise draws, against the spectral-sum target.
pub fn field_covariance_oracle(
    law: &LevyLaw,
    params: &SmoothingParams,
    lattice: &Lattice,
    n_samples: usize,
    seed: u64,
) -> Result<CovarianceCheck> {
    if n_samples < 100 {
        return Err(invalid("covariance oracle needs at least 100 samples"));
    }
    use rayon::prelude::*;
    let center = lattice.linear_index(&vec![lattice.cells_per_side / 2; lattice.dim]);
    let sampler = law.cell_sampler(lattice.cell_measure())?;
    let values: Vec<f64> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from_seed(derive_seed(seed, crate::rng::stream::NOISE, i as u64));
            let noise: LatticeField<f64> = sample_noise_with(lattice, &sampler, &mut rng);
            smooth_field(&noise, params).map(|f| f.values[center])
        })
        .collect::<Result<_>>()?;
    let (var, se) = variance_with_se(&values);
    Ok(CovarianceCheck {
        empirical: var,
        analytic: smoothed_point_variance(law, params, lattice, Spectrum::LatticeSymbol),
        standard_error: se,
        samples: n_samples,
    })
}

/// Unbiased sample variance and the standard error of that estimate.
pub fn variance_with_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    let var = m2 * n / (n - 1.0);
    let se = ((m4 - m2 * m2).max(0.0) / n).sqrt();
    (var, se)
}

/// Sample a standard uniform in `[0,1)`; re-exported for callers that want a
/// draw from the same stream type.
pub fn uniform(rng: &mut Rng) -> f64 {
    rng.random::<f64>()
}
