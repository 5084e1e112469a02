//! Experiment orchestration: datasets of modal coefficients, Monte Carlo
//! references, learned quadrature for monomials and the flow-cell flux, and
//! the discretisation, truncation and training-size studies.
//!
//! Every random draw is seeded from the master seed through
//! [`derive_seed`](crate::rng::derive_seed), and parallel results are reduced
//! in index order, so reruns are bit-identical.

pub mod config;
pub mod records;

pub use config::{ExperimentConfig, FieldConfig, SweepConfig};
pub use records::{read_records, write_records, ErrorRecord, Experiment};

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::fem::{solve_realization, Mesh, MeshLevel};
use crate::flow::config::{ModelKind, TrainConfig, TrainingLog};
use crate::flow::{self, map_nodes, FlowModel};
use crate::hermite::{eval_monomial, monomial_exponents, smolyak_rule, QuadratureRule};
use crate::levy::{
    smooth_field_with, smoothed_point_variance, CellSampler, Lattice, LatticeField, LevyLaw, ModeBasis, SmoothingParams,
    Spectrum,
};
use crate::linalg::Matrix;
use crate::rng::{derive_seed, rng_from_seed, stream};

/// Log-conductivity model: Lévy noise, smoothing, modal truncation and the
/// affine map to `log a`.
#[derive(Debug, Clone)]
pub struct RandomField {
    law: LevyLaw,
    lattice: Lattice,
    params: SmoothingParams,
    basis: ModeBasis<f64>,
    sampler: CellSampler,
    /// Subtracted from every noise cell when centering is enabled.
    cell_shift: f64,
    scale: f64,
    offset: f64,
}

impl RandomField {
    pub fn new(law: &LevyLaw, field: &FieldConfig) -> Result<Self> {
        Self::with_radius(law, field, field.mode_radius)
    }

    pub fn with_radius(law: &LevyLaw, field: &FieldConfig, radius: usize) -> Result<Self> {
        law.validate()?;
        field.validate()?;
        let lattice = field.lattice()?;
        let params = field.smoothing()?;
        let basis = ModeBasis::new(&lattice, radius)?;
        let sampler = law.cell_sampler(lattice.cell_measure())?;
        let cell_shift = if field.center_noise { law.mean_density() * lattice.cell_measure() } else { 0.0 };
        let target = smoothed_point_variance(law, &params, &lattice, Spectrum::Continuum);
        let scale = if field.variance == 0.0 { 0.0 } else { (field.variance / target).sqrt() };
        if !scale.is_finite() {
            return Err(invalid(format!("cannot normalise a field with point variance {target:e}")));
        }
        Ok(Self { law: *law, lattice, params, basis, sampler, cell_shift, scale, offset: field.offset })
    }

    pub fn law(&self) -> &LevyLaw {
        &self.law
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn basis(&self) -> &ModeBasis<f64> {
        &self.basis
    }

    /// Number of modal coefficients.
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// Factor applied to the smoothed field before adding the offset.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn noise(&self, seed: u64) -> LatticeField<f64> {
        let mut rng = rng_from_seed(seed);
        let mut noise: LatticeField<f64> = crate::levy::sample_noise_with(&self.lattice, &self.sampler, &mut rng);
        if self.cell_shift != 0.0 {
            noise.values_mut().iter_mut().for_each(|v| *v -= self.cell_shift);
        }
        noise
    }

    pub fn coefficients(&self, noise: &LatticeField<f64>) -> Result<Vec<f64>> {
        Ok(self.basis.extract(noise)?.into_eta())
    }

    /// Modal coefficients of one noise draw.
    pub fn sample_eta(&self, seed: u64) -> Result<Vec<f64>> {
        self.coefficients(&self.noise(seed))
    }

    fn affine(&self, field: LatticeField<f64>) -> LatticeField<f64> {
        let (s, b) = (self.scale, self.offset);
        field.map(|z| s * z + b)
    }

    /// `log a` from the truncated expansion with coefficients `eta`.
    pub fn log_conductivity(&self, eta: &[f64]) -> Result<LatticeField<f64>> {
        Ok(self.affine(self.basis.reconstruct(eta, &self.params)?))
    }

    /// `log a` from the untruncated smoothed noise.
    pub fn log_conductivity_full(&self, noise: &LatticeField<f64>, spectrum: Spectrum) -> Result<LatticeField<f64>> {
        Ok(self.affine(smooth_field_with(noise, &self.params, spectrum)?))
    }

    /// Outflow flux for the truncated field with coefficients `eta`.
    pub fn qoi(&self, eta: &[f64], mesh: &Mesh<f64>) -> Result<f64> {
        solve_realization(&self.log_conductivity(eta)?, mesh)
    }

    /// `g(ξ) = μ + diag(sd) ξ` with the exact coefficient means and standard
    /// deviations; the exact transport when the noise is Gaussian.
    pub fn moment_matched_transport(&self) -> Result<FlowModel<f64>> {
        let (mut mean, var) = self.basis.moments(&self.law);
        let shift = self.cell_shift * self.lattice.cell_measure() * self.lattice.len() as f64;
        if let Some(m) = mean.first_mut() {
            *m -= shift;
        }
        let sd: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();
        FlowModel::diagonal(&sd, mean)
    }
}

/// `n` independent coefficient vectors, row `i` drawn with
/// `derive_seed(seed, stream, i)`.
pub fn sample_coefficients(field: &RandomField, n: usize, seed: u64, stream: u64) -> Result<Matrix<f64>> {
    let rows: Vec<Vec<f64>> =
        (0..n).into_par_iter().map(|i| field.sample_eta(derive_seed(seed, stream, i as u64))).collect::<Result<_>>()?;
    if rows.is_empty() {
        return Ok(Matrix::zeros(0, field.dim()));
    }
    Matrix::from_rows(&rows)
}

/// Training data: `n` coefficient vectors from the dataset stream.
pub fn generate_dataset(field: &RandomField, n: usize, seed: u64) -> Result<Matrix<f64>> {
    sample_coefficients(field, n, seed, stream::DATASET)
}

/// Reference samples for Monte Carlo estimates, independent of the training data.
pub fn reference_samples(field: &RandomField, n: usize, seed: u64) -> Result<Matrix<f64>> {
    sample_coefficients(field, n, seed, stream::MC_REFERENCE)
}

/// CSV with header `eta1,...,etaM` and one sample per row.
pub fn write_dataset<W: Write>(out: W, data: &Matrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record((1..=data.cols()).map(|k| format!("eta{k}")))?;
    for row in data.iter_rows() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(input: R) -> Result<Matrix<f64>> {
    let mut r = csv::Reader::from_reader(input);
    let cols = r.headers()?.len();
    let mut values = Vec::new();
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != cols {
            return Err(Error::Parse(format!("row {} has {} fields, expected {cols}", rows + 1, rec.len())));
        }
        for f in rec.iter() {
            values.push(f.trim().parse::<f64>().map_err(|_| Error::Parse(format!("bad number {f:?}")))?);
        }
        rows += 1;
    }
    Matrix::from_vec(rows, cols, values)
}

/// Sample mean and 95% confidence half-width `1.96 s / √N`.
pub fn mc_estimate(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(invalid("a Monte Carlo estimate needs at least two samples"));
    }
    let n = values.len() as f64;
    // shifted sums: exact for constant samples
    let x0 = values[0];
    let s1: f64 = values.iter().map(|v| v - x0).sum();
    let s2: f64 = values.iter().map(|v| (v - x0) * (v - x0)).sum();
    let mean = x0 + s1 / n;
    let var = ((s2 - s1 * s1 / n) / (n - 1.0)).max(0.0);
    Ok((mean, 1.96 * (var / n).sqrt()))
}

/// Train a model of the configured kind on `data`.
pub fn train_model(kind: ModelKind, train: &TrainConfig, data: &Matrix<f64>, seed: u64) -> Result<(FlowModel<f64>, TrainingLog)> {
    let cfg = TrainConfig { seed, ..train.clone() };
    flow::train(kind, data, &cfg)
}

/// Averaged monomial error at one sparse-grid level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonomialError {
    pub level: usize,
    /// Mean over monomials of `|Σ_j w_j p(η̂_j) - MC[p]|`.
    pub error: f64,
    /// Mean over monomials of the MC confidence half-width.
    pub conf: f64,
    pub monomials: usize,
}

/// For each level `L`, compare the mapped rule with Monte Carlo means over
/// `reference` for every monomial of total degree `≤ L - 1`.
pub fn monomial_errors(model: &FlowModel<f64>, reference: &Matrix<f64>, levels: &[usize]) -> Result<Vec<MonomialError>> {
    let dim = model.dim();
    if reference.cols() != dim {
        return Err(invalid(format!("reference has {} columns, model dimension is {dim}", reference.cols())));
    }
    let mut out = Vec::with_capacity(levels.len());
    for &level in levels {
        let rule = map_nodes(model, &smolyak_rule::<f64>(dim, level)?)?;
        let monomials = monomial_exponents(dim, level - 1);
        let per: Vec<(f64, f64)> = monomials
            .par_iter()
            .map(|p| {
                let q = rule.integrate(|x| eval_monomial(p, x))?;
                let values: Vec<f64> = reference.iter_rows().map(|x| eval_monomial(p, x)).collect();
                let (mean, hw) = mc_estimate(&values)?;
                Ok(((q - mean).abs(), hw))
            })
            .collect::<Result<_>>()?;
        let n = per.len() as f64;
        out.push(MonomialError {
            level,
            error: per.iter().map(|e| e.0).sum::<f64>() / n,
            conf: per.iter().map(|e| e.1).sum::<f64>() / n,
            monomials: per.len(),
        });
    }
    Ok(out)
}

/// Monomial study for one model.
pub fn monomial_experiment(
    config: &ExperimentConfig,
    model: &FlowModel<f64>,
    reference: &Matrix<f64>,
    trainsize: usize,
) -> Result<Vec<ErrorRecord>> {
    Ok(monomial_errors(model, reference, &config.sweep.levels)?
        .into_iter()
        .map(|e| ErrorRecord::monomials(e.level, trainsize, e.error, e.conf))
        .collect())
}

/// A mapped node whose field could not be solved.
#[derive(Debug, Clone, PartialEq)]
pub struct SkippedNode {
    pub level: usize,
    pub mesh: MeshLevel,
    pub node: usize,
    pub weight: f64,
    pub reason: String,
}

/// Flux estimate of a quadrature rule, skipping nodes whose fields violate
/// ellipticity or do not solve.
pub fn quadrature_qoi(
    field: &RandomField,
    rule: &QuadratureRule<f64>,
    mesh: &Mesh<f64>,
    mesh_level: MeshLevel,
) -> Result<(f64, Vec<SkippedNode>)> {
    let q: Vec<Result<f64>> = (0..rule.len()).into_par_iter().map(|j| field.qoi(rule.node(j), mesh)).collect();
    let mut estimate = 0.0;
    let mut skipped = Vec::new();
    for (j, (r, &w)) in q.into_iter().zip(rule.weights()).enumerate() {
        match r {
            Ok(v) => estimate += w * v,
            Err(e @ (Error::EllipticityViolation { .. } | Error::SolverFailure { .. })) => skipped.push(SkippedNode {
                level: rule.level(),
                mesh: mesh_level,
                node: j,
                weight: w,
                reason: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    Ok((estimate, skipped))
}

/// Flux of every reference sample.
pub fn reference_qoi(field: &RandomField, reference: &Matrix<f64>, mesh: &Mesh<f64>) -> Result<Vec<f64>> {
    (0..reference.rows()).into_par_iter().map(|i| field.qoi(reference.row(i), mesh)).collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PdeReport {
    pub records: Vec<ErrorRecord>,
    pub skipped: Vec<SkippedNode>,
}

/// Learned-quadrature flux versus the Monte Carlo mean over `reference`, for
/// every configured level and mesh.
pub fn pde_experiment(
    config: &ExperimentConfig,
    field: &RandomField,
    model: &FlowModel<f64>,
    reference: &Matrix<f64>,
    trainsize: usize,
) -> Result<PdeReport> {
    pde_at_levels(config, field, model, reference, trainsize, &config.sweep.levels)
}

fn pde_at_levels(
    config: &ExperimentConfig,
    field: &RandomField,
    model: &FlowModel<f64>,
    reference: &Matrix<f64>,
    trainsize: usize,
    levels: &[usize],
) -> Result<PdeReport> {
    let mut report = PdeReport::default();
    for &mesh_level in &config.sweep.mesh_levels {
        let mesh = Mesh::for_level(mesh_level);
        let (mc, conf) = mc_estimate(&reference_qoi(field, reference, &mesh)?)?;
        for &level in levels {
            let rule = map_nodes(model, &smolyak_rule::<f64>(field.dim(), level)?)?;
            let (estimate, skipped) = quadrature_qoi(field, &rule, &mesh, mesh_level)?;
            report.records.push(ErrorRecord::pde(level, trainsize, mesh_level, estimate, mc, conf));
            report.skipped.extend(skipped);
        }
    }
    Ok(report)
}

/// The four laws with the configured law's variance density and `β = 1`.
pub fn law_family(law: &LevyLaw) -> [LevyLaw; 4] {
    LevyLaw::matched_family(-law.psi_second_derivative_at_zero())
}

/// `|Q_h - Q_fine|` for coarse and medium meshes on untruncated fields.
pub fn fem_convergence_study(config: &ExperimentConfig) -> Result<Vec<ErrorRecord>> {
    config.validate()?;
    let meshes: Vec<(MeshLevel, Mesh<f64>)> = MeshLevel::ALL.iter().map(|&l| (l, Mesh::for_level(l))).collect();
    let mut out = Vec::new();
    for law in law_family(&config.law) {
        let field = RandomField::new(&law, &config.field)?;
        let per: Vec<Vec<f64>> = (0..config.sweep.convergence_realizations)
            .into_par_iter()
            .map(|s| {
                let noise = field.noise(derive_seed(config.seed, stream::FEM_STUDY, s as u64));
                let log_a = field.log_conductivity_full(&noise, Spectrum::LatticeSymbol)?;
                meshes.iter().map(|(_, m)| solve_realization(&log_a, m)).collect()
            })
            .collect::<Result<_>>()?;
        for q in per {
            let fine = q[meshes.len() - 1];
            for ((level, _), v) in meshes.iter().zip(&q).take(meshes.len() - 1) {
                out.push(ErrorRecord::convergence(level.elements(), law.name(), (v - fine).abs()));
            }
        }
    }
    Ok(out)
}

/// Least-squares slope of `log error` against `log elements`; zero errors are ignored.
pub fn convergence_rate(records: &[ErrorRecord]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|r| Some(((r.elements? as f64).ln(), r.abs_error)))
        .filter(|&(_, e)| e > 0.0)
        .map(|(x, e)| (x, e.ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (pts.len() >= 2 && sxx > 0.0).then(|| sxy / sxx)
}

/// `|Q_r - Q_full|` for each truncation radius on one noise draw per law,
/// with the untruncated field smoothed by the same continuum eigenvalues.
pub fn truncation_study(config: &ExperimentConfig) -> Result<Vec<ErrorRecord>> {
    config.validate()?;
    let mesh = Mesh::for_level(config.sweep.truncation_mesh);
    let mut out = Vec::new();
    for law in law_family(&config.law) {
        let full_field = RandomField::new(&law, &config.field)?;
        let noise = full_field.noise(derive_seed(config.seed, stream::TRUNCATION_STUDY, 0));
        let q_full = solve_realization(&full_field.log_conductivity_full(&noise, Spectrum::Continuum)?, &mesh)?;
        let errors: Vec<(usize, f64)> = config
            .sweep
            .truncation_radii
            .par_iter()
            .map(|&r| {
                let field = RandomField::with_radius(&law, &config.field, r)?;
                let q = field.qoi(&field.coefficients(&noise)?, &mesh)?;
                Ok((field.dim(), (q - q_full).abs()))
            })
            .collect::<Result<_>>()?;
        out.extend(errors.into_iter().map(|(m, e)| ErrorRecord::truncation(m, law.name(), e)));
    }
    Ok(out)
}

#[derive(Debug, Clone, Default)]
pub struct TrainSizeReport {
    pub monomials: Vec<ErrorRecord>,
    pub pde: PdeReport,
    pub logs: Vec<(usize, TrainingLog)>,
}

/// Retrain on each configured training size and evaluate both studies at the
/// top sparse-grid level. Smaller sets are prefixes of the largest.
pub fn training_size_study(config: &ExperimentConfig) -> Result<TrainSizeReport> {
    config.validate()?;
    let field = RandomField::new(&config.law, &config.field)?;
    let max = config.sweep.train_sizes.iter().copied().max().unwrap_or(0);
    let data = generate_dataset(&field, max, config.seed)?;
    let reference = reference_samples(&field, config.sweep.mc_samples, config.seed)?;
    let top = [config.sweep.top_level()];
    let mut sizes = config.sweep.train_sizes.clone();
    sizes.sort_unstable();
    sizes.dedup();
    let mut report = TrainSizeReport::default();
    for (s, &n) in sizes.iter().enumerate() {
        let subset = data.select_rows(&(0..n).collect::<Vec<_>>());
        let seed = derive_seed(config.seed, stream::TRAINSIZE, s as u64);
        let (model, log) = train_model(config.model, &config.train, &subset, seed)?;
        report.logs.push((n, log));
        for e in monomial_errors(&model, &reference, &top)? {
            report.monomials.push(ErrorRecord::monomials(e.level, n, e.error, e.conf));
        }
        let pde = pde_at_levels(config, &field, &model, &reference, n, &top)?;
        report.pde.records.extend(pde.records);
        report.pde.skipped.extend(pde.skipped);
    }
    Ok(report)
}
