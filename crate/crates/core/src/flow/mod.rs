//! Generative transport maps from the standard normal to a data distribution:
//! affine coupling flows and flow-matching vector fields, plus the node
//! mapping that turns a Gauss-Hermite rule into a learned quadrature rule.

pub mod acf;
pub mod adam;
pub mod assignment;
pub mod config;
pub mod mlp;
pub mod mmd;
pub mod vector_field;

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use acf::{train_acf, AcfModel, CouplingBlock};
pub use assignment::linear_sum_assignment;
pub use config::{ModelKind, TrainConfig, TrainingLog};
pub use mlp::Mlp;
pub use mmd::{mmd2_biased, mmd2_unbiased};
pub use vector_field::{integrate_rk4, train_cfm, train_otcfm, VectorFieldModel};

use crate::error::{invalid, Error, Result};
use crate::hermite::QuadratureRule;
use crate::linalg::Matrix;
use crate::scalar::Real;

/// Per-column affine normalization applied to training data.
///
/// Models are trained on `(x - mean) / scale` and generated samples are
/// mapped back with the inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer<T> {
    pub mean: Vec<T>,
    pub scale: Vec<T>,
}

impl<T: Real> Standardizer<T> {
    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![T::zero(); dim], scale: vec![T::one(); dim] }
    }

    /// Column means and standard deviations; constant columns get scale 1.
    pub fn fit(data: &Matrix<T>) -> Self {
        let (n, m) = (data.rows(), data.cols());
        let nf = T::of_usize(n.max(1));
        let mut mean = vec![T::zero(); m];
        for r in data.iter_rows() {
            for (a, &v) in mean.iter_mut().zip(r) {
                *a += v;
            }
        }
        for a in &mut mean {
            *a /= nf;
        }
        let mut var = vec![T::zero(); m];
        for r in data.iter_rows() {
            for k in 0..m {
                let d = r[k] - mean[k];
                var[k] += d * d;
            }
        }
        let scale = var
            .into_iter()
            .map(|v| {
                let s = (v / nf).sqrt();
                if s > T::zero() && s.is_finite() {
                    s
                } else {
                    T::one()
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, data: &Matrix<T>) -> Matrix<T> {
        let mut out = data.clone();
        for r in 0..out.rows() {
            for (k, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.mean[k]) / self.scale[k];
            }
        }
        out
    }

    pub fn invert(&self, x: &mut [T]) {
        for (k, v) in x.iter_mut().enumerate() {
            *v = *v * self.scale[k] + self.mean[k];
        }
    }
}

/// A trained generative map `g: R^M -> R^M`.
#[derive(Debug, Clone, PartialEq)]
pub enum FlowModel<T> {
    Acf { model: AcfModel<T>, standardizer: Standardizer<T> },
    VectorField { model: VectorFieldModel<T>, standardizer: Standardizer<T>, rk4_steps: usize },
    /// `g(ξ) = A ξ + b`; used for exactly known transports.
    Affine { matrix: Matrix<T>, offset: Vec<T> },
}

impl<T: Real> FlowModel<T> {
    pub fn identity(dim: usize) -> Self {
        FlowModel::Affine { matrix: Matrix::identity(dim), offset: vec![T::zero(); dim] }
    }

    /// `g(ξ) = diag(scale) ξ + offset`.
    pub fn diagonal(scale: &[T], offset: Vec<T>) -> Result<Self> {
        if scale.len() != offset.len() {
            return Err(invalid("scale and offset lengths differ"));
        }
        let mut matrix = Matrix::zeros(scale.len(), scale.len());
        for (i, &s) in scale.iter().enumerate() {
            matrix[(i, i)] = s;
        }
        Ok(FlowModel::Affine { matrix, offset })
    }

    pub fn dim(&self) -> usize {
        match self {
            FlowModel::Acf { model, .. } => model.dim(),
            FlowModel::VectorField { model, .. } => model.dim(),
            FlowModel::Affine { offset, .. } => offset.len(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            FlowModel::Acf { .. } => "acf",
            FlowModel::VectorField { .. } => "vector_field",
            FlowModel::Affine { .. } => "affine",
        }
    }

    /// `η̂ = g(ξ)`.
    pub fn generate(&self, xi: &[T]) -> Result<Vec<T>> {
        if xi.len() != self.dim() {
            return Err(invalid(format!("model dimension {} but input has {}", self.dim(), xi.len())));
        }
        match self {
            FlowModel::Acf { model, standardizer } => {
                let mut x = model.inverse(xi);
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::GenerationDiverged { step: 0 });
                }
                standardizer.invert(&mut x);
                Ok(x)
            }
            FlowModel::VectorField { model, standardizer, rk4_steps } => {
                let mut x = model.generate(xi, *rk4_steps)?;
                standardizer.invert(&mut x);
                Ok(x)
            }
            FlowModel::Affine { matrix, offset } => {
                Ok(matrix.matvec(xi).into_iter().zip(offset).map(|(a, &b)| a + b).collect())
            }
        }
    }

    /// Draw `n` samples `g(ξ)` with `ξ` standard normal.
    pub fn sample(&self, n: usize, rng: &mut crate::rng::Rng) -> Result<Matrix<T>> {
        let xi = acf::standard_normal_matrix::<T>(n, self.dim(), rng);
        let rows = xi.iter_rows().map(|r| self.generate(r)).collect::<Result<Vec<_>>>()?;
        Matrix::from_rows(&rows)
    }
}

/// Train a model of the given kind on standardized data.
pub fn train<T: Real>(kind: ModelKind, data: &Matrix<T>, config: &TrainConfig) -> Result<(FlowModel<T>, TrainingLog)> {
    let standardizer = Standardizer::fit(data);
    let z = standardizer.apply(data);
    Ok(match kind {
        ModelKind::Acf => {
            let (model, log) = train_acf(&z, config)?;
            (FlowModel::Acf { model, standardizer }, log)
        }
        ModelKind::Cfm | ModelKind::Otcfm => {
            let cfg = TrainConfig { ot_enabled: config.ot_enabled || kind == ModelKind::Otcfm, ..config.clone() };
            let (model, log) = train_cfm(&z, &cfg)?;
            (FlowModel::VectorField { model, standardizer, rk4_steps: config.rk4_steps }, log)
        }
    })
}

/// Push every node of `rule` through `g`; weights are copied unchanged.
pub fn map_nodes<T: Real>(model: &FlowModel<T>, rule: &QuadratureRule<T>) -> Result<QuadratureRule<T>> {
    if model.dim() != rule.dim() {
        return Err(invalid(format!("model dimension {} does not match rule dimension {}", model.dim(), rule.dim())));
    }
    let mapped: Vec<Vec<T>> = (0..rule.len()).into_par_iter().map(|j| model.generate(rule.node(j))).collect::<Result<_>>()?;
    rule.with_nodes(mapped.into_iter().flatten().collect())
}

const MAGIC: &[u8; 8] = b"LQFLOW1\n";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    kind: String,
    dim: usize,
    /// Layer widths of each network, in payload order.
    nets: Vec<Vec<usize>>,
    /// Split index of each coupling block.
    splits: Vec<usize>,
    rk4_steps: Option<usize>,
    standardized: bool,
    payload_len: usize,
}

impl<T: Real> FlowModel<T> {
    /// Magic line, little-endian `u64` header length, JSON header, then the
    /// parameters as little-endian `f64`.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let mut payload: Vec<T> = Vec::new();
        let mut nets = Vec::new();
        let mut splits = Vec::new();
        let mut rk4 = None;
        let mut standardized = false;
        let mut push_std = |s: &Standardizer<T>, p: &mut Vec<T>| {
            p.extend_from_slice(&s.mean);
            p.extend_from_slice(&s.scale);
            standardized = true;
        };
        match self {
            FlowModel::Acf { model, standardizer } => {
                push_std(standardizer, &mut payload);
                for b in model.blocks() {
                    splits.push(b.split());
                    for net in [b.scale_net(), b.translate_net()] {
                        nets.push(net.widths().to_vec());
                        payload.extend_from_slice(net.params());
                    }
                }
            }
            FlowModel::VectorField { model, standardizer, rk4_steps } => {
                push_std(standardizer, &mut payload);
                nets.push(model.net().widths().to_vec());
                payload.extend_from_slice(model.net().params());
                rk4 = Some(*rk4_steps);
            }
            FlowModel::Affine { matrix, offset } => {
                payload.extend_from_slice(matrix.as_slice());
                payload.extend_from_slice(offset);
            }
        }
        let header = Header {
            version: 1,
            kind: self.kind_name().to_string(),
            dim: self.dim(),
            nets,
            splits,
            rk4_steps: rk4,
            standardized,
            payload_len: payload.len(),
        };
        let json = serde_json::to_vec(&header)?;
        out.write_all(MAGIC)?;
        out.write_all(&(json.len() as u64).to_le_bytes())?;
        out.write_all(&json)?;
        for v in payload {
            out.write_all(&v.to_f64_lossy().to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Parse("not a model file".into()));
        }
        let mut len = [0u8; 8];
        input.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        if len > 1 << 24 {
            return Err(Error::Parse("model header too large".into()));
        }
        let mut json = vec![0u8; len];
        input.read_exact(&mut json)?;
        let h: Header = serde_json::from_slice(&json)?;
        if h.version != 1 {
            return Err(Error::Parse(format!("unsupported model version {}", h.version)));
        }
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        if bytes.len() != 8 * h.payload_len {
            return Err(Error::Parse(format!("expected {} parameters, found {} bytes", h.payload_len, bytes.len())));
        }
        let mut payload = bytes.chunks_exact(8).map(|c| T::of(f64::from_le_bytes(c.try_into().unwrap())));
        let mut take = |n: usize| -> Result<Vec<T>> {
            let v: Vec<T> = payload.by_ref().take(n).collect();
            if v.len() != n {
                return Err(Error::Parse("model payload too short".into()));
            }
            Ok(v)
        };
        let dim = h.dim;
        let standardizer = if h.standardized {
            Some(Standardizer { mean: take(dim)?, scale: take(dim)? })
        } else {
            None
        };
        let need_std = || standardizer.clone().ok_or_else(|| Error::Parse("missing standardizer".into()));
        let bad = |e: Error| Error::Parse(format!("inconsistent model file: {e}"));
        let net_size = |w: &[usize]| w.windows(2).map(|p| p[0] * p[1] + p[1]).sum::<usize>();
        match h.kind.as_str() {
            "acf" => {
                if h.nets.len() != 2 * h.splits.len() {
                    return Err(Error::Parse("coupling blocks need two nets each".into()));
                }
                let mut blocks = Vec::new();
                for (i, &split) in h.splits.iter().enumerate() {
                    let ws = &h.nets[2 * i];
                    let wt = &h.nets[2 * i + 1];
                    let s = Mlp::from_params(ws.clone(), take(net_size(ws))?).map_err(bad)?;
                    let t = Mlp::from_params(wt.clone(), take(net_size(wt))?).map_err(bad)?;
                    blocks.push(CouplingBlock::from_nets(split, s, t).map_err(bad)?);
                }
                Ok(FlowModel::Acf { model: AcfModel::from_blocks(dim, blocks).map_err(bad)?, standardizer: need_std()? })
            }
            "vector_field" => {
                let w = h.nets.first().ok_or_else(|| Error::Parse("missing network".into()))?;
                let net = Mlp::from_params(w.clone(), take(net_size(w))?).map_err(bad)?;
                Ok(FlowModel::VectorField {
                    model: VectorFieldModel::from_net(net).map_err(bad)?,
                    standardizer: need_std()?,
                    rk4_steps: h.rk4_steps.unwrap_or(100),
                })
            }
            "affine" => {
                let matrix = Matrix::from_vec(dim, dim, take(dim * dim)?)?;
                Ok(FlowModel::Affine { matrix, offset: take(dim)? })
            }
            other => Err(Error::Parse(format!("unknown model kind {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermite::smolyak_rule;
    use crate::rng::rng_from_seed;

    #[test]
    fn identity_map_leaves_rule_unchanged() {
        let rule = smolyak_rule::<f64>(3, 3).unwrap();
        let mapped = map_nodes(&FlowModel::identity(3), &rule).unwrap();
        assert_eq!(mapped, rule);
    }

    #[test]
    fn affine_map_integrates_linear_functions() {
        let rule = smolyak_rule::<f64>(2, 2).unwrap();
        let a = Matrix::from_rows(&[vec![2.0, 0.5], vec![-1.0, 3.0]]).unwrap();
        let b = vec![0.7, -0.2];
        let model = FlowModel::Affine { matrix: a, offset: b.clone() };
        let mapped = map_nodes(&model, &rule).unwrap();
        assert_eq!(mapped.weights(), rule.weights());
        let l = |x: &[f64]| 1.5 * x[0] - 2.0 * x[1] + 0.3;
        let got = mapped.integrate(l).unwrap();
        assert!((got - l(&b)).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        let rule = smolyak_rule::<f64>(2, 2).unwrap();
        assert!(map_nodes(&FlowModel::identity(3), &rule).is_err());
    }

    #[test]
    fn standardizer_round_trip() {
        let data = Matrix::from_rows(&[vec![1.0f64, 5.0], vec![3.0, 5.0], vec![2.0, 5.0]]).unwrap();
        let s = Standardizer::fit(&data);
        assert_eq!(s.scale[1], 1.0);
        let z = s.apply(&data);
        let mut r = z.row(0).to_vec();
        s.invert(&mut r);
        assert!((r[0] - 1.0).abs() < 1e-15 && r[1] == 5.0);
    }

    fn roundtrip(m: &FlowModel<f64>) -> FlowModel<f64> {
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        FlowModel::read_from(buf.as_slice()).unwrap()
    }

    #[test]
    fn serialization_is_bit_exact() {
        let mut rng = rng_from_seed(1);
        let cfg = TrainConfig { hidden_width: 4, layers: 3, ..TrainConfig::default() };
        let mut acf = AcfModel::<f64>::new(3, &cfg, &mut rng).unwrap();
        // give the nets non-trivial values
        let std = Standardizer { mean: vec![0.1, 0.2, 0.3], scale: vec![1.0, 2.0, 1.0 / 3.0] };
        let m = FlowModel::Acf { model: acf.clone(), standardizer: std.clone() };
        assert_eq!(roundtrip(&m), m);
        acf = AcfModel::new(3, &TrainConfig { coupling_blocks: 2, ..cfg.clone() }, &mut rng).unwrap();
        let m = FlowModel::Acf { model: acf, standardizer: std.clone() };
        assert_eq!(roundtrip(&m), m);

        let mut vf = VectorFieldModel::<f64>::new(3, &cfg, &mut rng).unwrap();
        for (i, p) in vf.net_mut().params_mut().iter_mut().enumerate() {
            *p = (i as f64).sin() / 7.0;
        }
        let m = FlowModel::VectorField { model: vf, standardizer: std, rk4_steps: 37 };
        assert_eq!(roundtrip(&m), m);

        let m = FlowModel::<f64>::diagonal(&[1.0 / 3.0, 2.0], vec![0.1, -0.2]).unwrap();
        assert_eq!(roundtrip(&m), m);
    }

    #[test]
    fn corrupt_files_rejected() {
        assert!(FlowModel::<f64>::read_from(&b"garbage!"[..]).is_err());
        let mut buf = Vec::new();
        FlowModel::<f64>::identity(2).write_to(&mut buf).unwrap();
        buf.pop();
        assert!(FlowModel::<f64>::read_from(buf.as_slice()).is_err());
    }
}
