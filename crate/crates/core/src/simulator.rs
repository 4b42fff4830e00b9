//! Synthetic recognizer ensemble.
//!
//! Subjects are unit prototypes in a shared identity latent space. Each
//! captured sample perturbs its prototype with isotropic Gaussian noise and
//! is renormalized; probes get more noise than references. A simulated
//! recognizer maps a latent through a fixed matrix with orthonormal rows,
//! optionally adds its own per-sample noise, and normalizes the result.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{child_seed, rng, rng_for, standard_normal_vec};
use crate::store::Role;
use crate::template::{norm, Template};
use crate::Template64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortConfig {
    pub n_subjects: u32,
    pub refs_per_subject: u32,
    pub probes_per_subject: u32,
    pub latent_dim: usize,
    pub frs_dim: usize,
    /// Per-coordinate noise on reference samples.
    pub reference_noise_sigma: f64,
    /// Probe noise is this multiple of the reference noise.
    pub probe_noise_multiplier: f64,
    /// Set from the experiment seed rather than read from config files.
    #[serde(skip)]
    pub master_seed: u64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            n_subjects: 325,
            refs_per_subject: 4,
            probes_per_subject: 3,
            latent_dim: 512,
            frs_dim: 512,
            reference_noise_sigma: 0.028,
            probe_noise_multiplier: 1.5,
            master_seed: 20240501,
        }
    }
}

impl CohortConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.n_subjects == 0 || self.refs_per_subject == 0 || self.probes_per_subject == 0 {
            return bad("cohort counts must be at least 1");
        }
        if self.latent_dim < 2 || self.frs_dim < 2 {
            return bad("latent and frs dimensions must be at least 2");
        }
        if self.frs_dim > self.latent_dim {
            return bad("frs_dim must not exceed latent_dim");
        }
        if !self.reference_noise_sigma.is_finite() || self.reference_noise_sigma < 0.0 {
            return bad("reference_noise_sigma must be finite and >= 0");
        }
        if !self.probe_noise_multiplier.is_finite() || self.probe_noise_multiplier < 1.0 {
            return bad("probe_noise_multiplier must be finite and >= 1");
        }
        Ok(())
    }

    pub fn noise_sigma(&self, role: Role) -> f64 {
        match role {
            Role::Probe => self.reference_noise_sigma * self.probe_noise_multiplier,
            _ => self.reference_noise_sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityLatent {
    pub id: u32,
    pub prototype: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentSample {
    pub subject_id: u32,
    pub sample_id: u32,
    pub role: Role,
    pub latent: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub identities: Vec<IdentityLatent>,
    /// Per subject: references then probes, each in sample order.
    pub samples: Vec<LatentSample>,
}

fn role_tag(role: Role) -> &'static str {
    match role {
        Role::Reference => "reference",
        Role::Probe => "probe",
        Role::MorphVariant => "morph-variant",
    }
}

fn perturb_unit(base: &[f64], sigma: f64, seed: u64) -> Result<Vec<f64>> {
    if sigma == 0.0 {
        return Ok(base.to_vec());
    }
    let eta = standard_normal_vec(&mut rng(seed), base.len());
    let v: Vec<f64> = base.iter().zip(&eta).map(|(b, e)| b + sigma * e).collect();
    normalize_vec(v)
}

fn normalize_vec(mut v: Vec<f64>) -> Result<Vec<f64>> {
    let n = norm(&v);
    if n < crate::template::ZERO_NORM_EPS {
        return Err(Error::ZeroVector);
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(v)
}

pub fn generate_cohort(cfg: &CohortConfig) -> Result<Cohort> {
    cfg.validate()?;
    let per_subject: Vec<(IdentityLatent, Vec<LatentSample>)> = (0..cfg.n_subjects)
        .into_par_iter()
        .map(|id| {
            let subject_seed = child_seed(cfg.master_seed, "subject", u64::from(id));
            let proto =
                standard_normal_vec(&mut rng_for(subject_seed, "prototype", 0), cfg.latent_dim);
            let prototype = normalize_vec(proto)?;
            let mut samples = Vec::new();
            for (role, n) in [
                (Role::Reference, cfg.refs_per_subject),
                (Role::Probe, cfg.probes_per_subject),
            ] {
                for sample_id in 0..n {
                    let seed = child_seed(subject_seed, role_tag(role), u64::from(sample_id));
                    samples.push(LatentSample {
                        subject_id: id,
                        sample_id,
                        role,
                        latent: perturb_unit(&prototype, cfg.noise_sigma(role), seed)?,
                    });
                }
            }
            Ok((IdentityLatent { id, prototype }, samples))
        })
        .collect::<Result<_>>()?;

    let mut identities = Vec::with_capacity(per_subject.len());
    let mut samples = Vec::new();
    for (ident, s) in per_subject {
        identities.push(ident);
        samples.extend(s);
    }
    Ok(Cohort {
        identities,
        samples,
    })
}

/// Per-model settings as they appear in the experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrsModelSpec {
    pub name: String,
    pub sample_noise_sigma: f64,
    pub recon_noise_sigma: f64,
}

#[derive(Debug, Clone)]
pub struct FrsModel {
    pub name: String,
    /// `frs_dim x latent_dim`, orthonormal rows.
    pub projection: DMatrix<f64>,
    pub sample_noise_sigma: f64,
    pub recon_noise_sigma: f64,
    pub seed: u64,
}

impl FrsModel {
    /// Draws a seeded Gaussian matrix and orthonormalizes it with QR.
    pub fn generate(
        spec: &FrsModelSpec,
        latent_dim: usize,
        frs_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        if frs_dim > latent_dim || frs_dim < 2 {
            return Err(Error::InvalidConfig(format!(
                "frs_dim {frs_dim} must be in [2, latent_dim={latent_dim}]"
            )));
        }
        for (what, s) in [
            ("sample_noise_sigma", spec.sample_noise_sigma),
            ("recon_noise_sigma", spec.recon_noise_sigma),
        ] {
            if !s.is_finite() || s < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "{}: {what} must be finite and >= 0",
                    spec.name
                )));
            }
        }
        let gauss = standard_normal_vec(&mut rng_for(seed, "projection", 0), latent_dim * frs_dim);
        let m = DMatrix::from_column_slice(latent_dim, frs_dim, &gauss);
        let q = m.qr().q();
        Ok(Self {
            name: spec.name.clone(),
            projection: q.transpose(),
            sample_noise_sigma: spec.sample_noise_sigma,
            recon_noise_sigma: spec.recon_noise_sigma,
            seed,
        })
    }

    /// Model with an explicit projection; rows must be orthonormal.
    pub fn with_projection(
        name: &str,
        projection: DMatrix<f64>,
        sample_noise_sigma: f64,
        recon_noise_sigma: f64,
    ) -> Self {
        Self {
            name: name.to_string(),
            projection,
            sample_noise_sigma,
            recon_noise_sigma,
            seed: 0,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.projection.ncols()
    }

    pub fn frs_dim(&self) -> usize {
        self.projection.nrows()
    }

    /// Largest deviation of `P Pᵀ` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let g = &self.projection * self.projection.transpose();
        let n = g.nrows();
        (g - DMatrix::<f64>::identity(n, n)).amax()
    }

    /// Template of a latent: `normalize(P·latent + σ·η)`; noise only when a seed is given.
    pub fn extract(&self, latent: &[f64], noise_seed: Option<u64>) -> Result<Template64> {
        if latent.len() != self.latent_dim() {
            return Err(Error::DimMismatch {
                expected: self.latent_dim(),
                actual: latent.len(),
            });
        }
        let mut y = &self.projection * DVector::from_column_slice(latent);
        if let (Some(seed), true) = (noise_seed, self.sample_noise_sigma > 0.0) {
            let eta = standard_normal_vec(&mut rng(seed), y.len());
            for (v, e) in y.iter_mut().zip(eta) {
                *v += self.sample_noise_sigma * e;
            }
        }
        Template::new(y.as_slice().to_vec())?.normalize()
    }

    /// Least-squares preimage of a template in latent space, renormalized.
    pub fn invert(&self, template: &Template64) -> Result<Vec<f64>> {
        if template.dim() != self.frs_dim() {
            return Err(Error::DimMismatch {
                expected: self.frs_dim(),
                actual: template.dim(),
            });
        }
        let x = self
            .projection
            .tr_mul(&DVector::from_column_slice(template.values()));
        normalize_vec(x.as_slice().to_vec())
    }
}

/// Noise seed for the stored capture `(role, subject, sample)` under a model.
pub fn sample_noise_seed(frs_seed: u64, role: Role, subject_id: u32, sample_id: u32) -> u64 {
    child_seed(
        child_seed(frs_seed, role_tag(role), u64::from(subject_id)),
        "sample",
        u64::from(sample_id),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub models: Vec<FrsModelSpec>,
    /// Index of the model whose template space the attacker morphs in.
    pub attacker_index: usize,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        let spec = |name: &str, s: f64| FrsModelSpec {
            name: name.to_string(),
            sample_noise_sigma: s,
            recon_noise_sigma: 0.075,
        };
        Self {
            models: vec![
                spec("arcface-sim", 0.014),
                spec("adaface-sim", 0.016),
                spec("curricularface-sim", 0.015),
                spec("magface-sim", 0.013),
            ],
            attacker_index: 3,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::InvalidConfig(
                "ensemble needs at least one model".into(),
            ));
        }
        if self.attacker_index >= self.models.len() {
            return Err(Error::InvalidConfig(format!(
                "attacker_index {} out of range for {} models",
                self.attacker_index,
                self.models.len()
            )));
        }
        let mut names: Vec<&str> = self.models.iter().map(|m| m.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.models.len() {
            return Err(Error::InvalidConfig("model names must be unique".into()));
        }
        for m in &self.models {
            let ok_chars = m
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
            if m.name.is_empty() || m.name.len() > crate::store::NAME_LEN || !ok_chars {
                return Err(Error::InvalidConfig(format!(
                    "model name {:?} must be 1..=32 chars of [A-Za-z0-9._-]",
                    m.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FrsEnsemble {
    pub models: Vec<FrsModel>,
    pub attacker_index: usize,
}

impl FrsEnsemble {
    pub fn generate(
        cfg: &EnsembleConfig,
        latent_dim: usize,
        frs_dim: usize,
        master_seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let models = cfg
            .models
            .par_iter()
            .enumerate()
            .map(|(i, spec)| {
                FrsModel::generate(
                    spec,
                    latent_dim,
                    frs_dim,
                    child_seed(master_seed, "frs", i as u64),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            models,
            attacker_index: cfg.attacker_index,
        })
    }

    pub fn attacker(&self) -> &FrsModel {
        &self.models[self.attacker_index]
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.models.iter().map(|m| m.name.clone()).collect()
    }

    /// One stochastic reconstruction of a morph latent, seen by every model.
    ///
    /// The reconstruction noise (attacker model's `recon_noise_sigma`) is drawn
    /// once and shared; each model then extracts with its own sample noise.
    pub fn reconstruct_variant(
        &self,
        morph_latent: &[f64],
        variant_seed: u64,
    ) -> Result<Vec<Template64>> {
        let latent_dim = self.attacker().latent_dim();
        if morph_latent.len() != latent_dim {
            return Err(Error::DimMismatch {
                expected: latent_dim,
                actual: morph_latent.len(),
            });
        }
        let v = perturb_unit(
            morph_latent,
            self.attacker().recon_noise_sigma,
            child_seed(variant_seed, "reconstruction", 0),
        )?;
        self.models
            .iter()
            .enumerate()
            .map(|(f, m)| {
                m.extract(
                    &v,
                    Some(child_seed(variant_seed, "variant-sample", f as u64)),
                )
            })
            .collect()
    }
}
