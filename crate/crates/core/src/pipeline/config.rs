use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fem::MeshLevel;
use crate::flow::config::{ModelKind, TrainConfig};
use crate::levy::{Lattice, LevyLaw, SmoothingParams};

/// Random field construction: smoothing, lattice, truncation and the map from
/// smoothed noise to the log-conductivity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldConfig {
    /// Smoothness exponent `α` of `(-Δ + m²)^{-α}`.
    pub alpha: f64,
    /// Mass `m`; the correlation length is `1/m`.
    pub mass: f64,
    /// Lattice cells per side (odd).
    pub cells_per_side: usize,
    /// Retained mode radius `r`; `(2r + 1)²` coefficients.
    pub mode_radius: usize,
    /// Pointwise variance of the log-conductivity; `0` gives `a ≡ exp(offset)`.
    pub variance: f64,
    /// Constant added to the log-conductivity.
    pub offset: f64,
    /// Subtract the mean of the noise before smoothing.
    pub center_noise: bool,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self { alpha: 3.0, mass: 10.0, cells_per_side: 101, mode_radius: 1, variance: 0.5, offset: 0.0, center_noise: false }
    }
}

impl FieldConfig {
    pub fn smoothing(&self) -> Result<SmoothingParams> {
        SmoothingParams::new(self.alpha, self.mass * self.mass)
    }

    pub fn lattice(&self) -> Result<Lattice> {
        Lattice::new(2, self.cells_per_side)
    }

    /// Number of modal coefficients `M`.
    pub fn modes(&self) -> usize {
        (2 * self.mode_radius + 1).pow(2)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(invalid(format!("mass must be positive, got {}", self.mass)));
        }
        self.smoothing()?;
        let lattice = self.lattice()?;
        if self.mode_radius == 0 || self.mode_radius > lattice.max_radius() {
            return Err(invalid(format!(
                "mode radius must lie in 1..={} for {} cells per side",
                lattice.max_radius(),
                self.cells_per_side
            )));
        }
        if !(self.variance >= 0.0 && self.variance.is_finite()) {
            return Err(invalid("field variance must be non-negative"));
        }
        if !self.offset.is_finite() {
            return Err(invalid("field offset must be finite"));
        }
        Ok(())
    }
}

/// Sweep coordinates and sample sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Training samples for single-model experiments.
    pub train_samples: usize,
    /// Training sizes of the training-size study.
    pub train_sizes: Vec<usize>,
    /// Sparse-grid levels `L_SG`; the monomial study uses degree `L_SG - 1`.
    pub levels: Vec<usize>,
    /// Meshes for the quadrature experiments.
    pub mesh_levels: Vec<MeshLevel>,
    /// Mesh for the truncation study.
    pub truncation_mesh: MeshLevel,
    pub truncation_radii: Vec<usize>,
    /// Realizations per law in the mesh-convergence study.
    pub convergence_realizations: usize,
    /// Monte Carlo reference sample count `N`.
    pub mc_samples: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            train_samples: 10_000,
            train_sizes: vec![100, 1_000, 10_000],
            levels: vec![2, 3, 4],
            mesh_levels: vec![MeshLevel::Coarse],
            truncation_mesh: MeshLevel::Fine,
            truncation_radii: vec![1, 2, 3],
            convergence_realizations: 5,
            mc_samples: 10_000,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        let lists = [
            ("train_sizes", self.train_sizes.is_empty()),
            ("levels", self.levels.is_empty()),
            ("mesh_levels", self.mesh_levels.is_empty()),
            ("truncation_radii", self.truncation_radii.is_empty()),
        ];
        for (name, empty) in lists {
            if empty {
                return Err(invalid(format!("{name} must not be empty")));
            }
        }
        if self.levels.contains(&0) {
            return Err(invalid("sparse-grid levels start at 1"));
        }
        if self.truncation_radii.contains(&0) {
            return Err(invalid("truncation radii start at 1"));
        }
        if self.mc_samples < 100 {
            return Err(invalid(format!("at least 100 Monte Carlo samples are required, got {}", self.mc_samples)));
        }
        if self.convergence_realizations == 0 {
            return Err(invalid("convergence_realizations must be positive"));
        }
        Ok(())
    }

    pub fn top_level(&self) -> usize {
        self.levels.iter().copied().max().unwrap_or(1)
    }
}

/// One experiment, fully determined by this value and its seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawConfig")]
pub struct ExperimentConfig {
    pub seed: u64,
    pub law: LevyLaw,
    pub field: FieldConfig,
    pub model: ModelKind,
    pub train: TrainConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ExperimentConfig {
    /// Reduced settings for a workstation.
    pub fn desk() -> Self {
        let model = ModelKind::Acf;
        Self {
            seed: 1,
            law: LevyLaw::Bigamma { lambda: 0.5, beta: 1.0 },
            field: FieldConfig::default(),
            model,
            train: TrainConfig::desk(model),
            sweep: SweepConfig::default(),
        }
    }

    /// Full-size networks, `10⁵` samples and the fine mesh.
    pub fn full() -> Self {
        let d = Self::desk();
        Self {
            train: TrainConfig::full(d.model),
            sweep: SweepConfig {
                train_samples: 100_000,
                train_sizes: vec![100, 1_000, 10_000, 100_000],
                mesh_levels: vec![MeshLevel::Fine],
                mc_samples: 100_000,
                ..d.sweep
            },
            ..d
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.law.validate()?;
        self.field.validate()?;
        self.train.validate()?;
        self.sweep.validate()?;
        let lattice = self.field.lattice()?;
        if let Some(&r) = self.sweep.truncation_radii.iter().find(|&&r| r > lattice.max_radius()) {
            return Err(invalid(format!("truncation radius {r} exceeds lattice radius {}", lattice.max_radius())));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    law: Option<LevyLaw>,
    field: Option<FieldConfig>,
    model: Option<ModelKind>,
    train: Option<TrainConfig>,
    sweep: Option<SweepConfig>,
}

impl TryFrom<RawConfig> for ExperimentConfig {
    type Error = Error;

    fn try_from(raw: RawConfig) -> Result<Self> {
        let d = ExperimentConfig::desk();
        let model = raw.model.unwrap_or(d.model);
        let config = ExperimentConfig {
            seed: raw.seed.unwrap_or(d.seed),
            law: raw.law.unwrap_or(d.law),
            field: raw.field.unwrap_or_default(),
            model,
            // a missing train table follows the chosen model
            train: raw.train.unwrap_or_else(|| TrainConfig::desk(model)),
            sweep: raw.sweep.unwrap_or_default(),
        };
        config.validate()?;
        Ok(config)
    }
}
