//! Experiment configuration (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::VariantAggregation;
use crate::simulator::{CohortConfig, EnsembleConfig};
use crate::variants::{AttackScoreRule, CorrelationMethod, Objective};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairingConfig {
    pub n_pairs: usize,
    pub max_uses_per_subject: usize,
    /// Ensemble index of the recognizer used to rank candidate pairs.
    pub selector_frs: usize,
}

impl Default for PairingConfig {
    fn default() -> Self {
        Self {
            n_pairs: 100,
            max_uses_per_subject: 4,
            selector_frs: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MorphingConfig {
    pub gamma: f64,
    pub variants_per_pair: u32,
}

impl Default for MorphingConfig {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            variants_per_pair: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    pub nonmated_cap: usize,
    /// Also write every non-mated score row to the per-recognizer CSV.
    pub export_nonmated: bool,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            nonmated_cap: crate::scoring::DEFAULT_NONMATED_CAP,
            export_nonmated: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub target_fmr: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { target_fmr: 0.001 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapConfig {
    /// Verification attempts R.
    pub rows: usize,
    /// Recognizer count C; defaults to the ensemble size.
    pub cols: Option<usize>,
    pub aggregate: VariantAggregation,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            rows: 3,
            cols: None,
            aggregate: VariantAggregation::PerVariant,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
    /// Tracked MAP cell; defaults to the bottom-right cell of the MAP matrix.
    pub r: Option<usize>,
    pub c: Option<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            lo: -1.0,
            hi: 1.0,
            steps: 21,
            r: None,
            c: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariantsConfig {
    pub n_variants: usize,
    /// Index into the selected pairs.
    pub pair_index: usize,
    pub objective: Objective,
    pub score_rule: AttackScoreRule,
    pub correlation: CorrelationMethod,
}

impl Default for VariantsConfig {
    fn default() -> Self {
        Self {
            n_variants: 100,
            pair_index: 0,
            objective: Objective::MinAcrossFrs,
            score_rule: AttackScoreRule::MinOfMean,
            correlation: CorrelationMethod::Pearson,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root seed; every random stream derives from it.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub cohort: CohortConfig,
    pub ensemble: EnsembleConfig,
    pub pairing: PairingConfig,
    pub morphing: MorphingConfig,
    pub scoring: ScoringConfig,
    pub calibration: CalibrationConfig,
    pub map: MapConfig,
    pub sweep: SweepConfig,
    pub variants: VariantsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 20240501,
            output_dir: PathBuf::from("morphmap-out"),
            cohort: CohortConfig::default(),
            ensemble: EnsembleConfig::default(),
            pairing: PairingConfig::default(),
            morphing: MorphingConfig::default(),
            scoring: ScoringConfig::default(),
            calibration: CalibrationConfig::default(),
            map: MapConfig::default(),
            sweep: SweepConfig::default(),
            variants: VariantsConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config; a relative `output_dir` resolves against the config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if cfg.output_dir.is_relative() {
            if let Some(parent) = path.parent() {
                cfg.output_dir = parent.join(&cfg.output_dir);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Cohort settings with the seed derived from the experiment seed.
    pub fn cohort_config(&self) -> CohortConfig {
        CohortConfig {
            master_seed: crate::seed::child_seed(self.seed, "cohort", 0),
            ..self.cohort.clone()
        }
    }

    pub fn map_cols(&self) -> usize {
        self.map.cols.unwrap_or(self.ensemble.models.len())
    }

    pub fn sweep_cell(&self) -> (usize, usize) {
        (
            self.sweep.r.unwrap_or(self.map.rows),
            self.sweep.c.unwrap_or_else(|| self.map_cols()),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        self.cohort.validate()?;
        self.ensemble.validate()?;
        let n_frs = self.ensemble.models.len();
        if self.pairing.selector_frs >= n_frs {
            return bad(format!(
                "pairing.selector_frs {} out of range for {n_frs} models",
                self.pairing.selector_frs
            ));
        }
        if self.pairing.n_pairs == 0 || self.pairing.max_uses_per_subject == 0 {
            return bad("pairing.n_pairs and pairing.max_uses_per_subject must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.morphing.gamma) {
            return bad(format!(
                "morphing.gamma {} outside [0, 1]",
                self.morphing.gamma
            ));
        }
        if self.morphing.variants_per_pair == 0 {
            return bad("morphing.variants_per_pair must be >= 1".into());
        }
        if self.scoring.nonmated_cap == 0 {
            return bad("scoring.nonmated_cap must be >= 1".into());
        }
        let fmr = self.calibration.target_fmr;
        if !(fmr > 0.0 && fmr < 1.0) {
            return bad(format!("calibration.target_fmr {fmr} outside (0, 1)"));
        }
        let cols = self.map_cols();
        if self.map.rows == 0 || cols == 0 || cols > n_frs {
            return bad(format!(
                "map shape {}x{cols} invalid for {n_frs} models",
                self.map.rows
            ));
        }
        if self.map.rows > self.cohort.probes_per_subject as usize {
            return bad(format!(
                "map.rows {} exceeds cohort.probes_per_subject {}",
                self.map.rows, self.cohort.probes_per_subject
            ));
        }
        let (r, c) = self.sweep_cell();
        if r == 0 || r > self.map.rows || c == 0 || c > n_frs {
            return bad(format!("sweep cell ({r}, {c}) out of range"));
        }
        crate::calibration::sweep_offsets(self.sweep.lo, self.sweep.hi, self.sweep.steps)?;
        if self.variants.n_variants < 2 {
            return bad("variants.n_variants must be >= 2 for correlation".into());
        }
        if self.variants.pair_index >= self.pairing.n_pairs {
            return bad(format!(
                "variants.pair_index {} out of range for {} pairs",
                self.variants.pair_index, self.pairing.n_pairs
            ));
        }
        if let Objective::SingleFrs(f) = self.variants.objective {
            if f >= n_frs {
                return bad(format!("variants.objective recognizer {f} out of range"));
            }
        }
        Ok(())
    }
}
