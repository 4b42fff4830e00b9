//! Morph construction in the attacker recognizer's template space.
//!
//! Two reference templates are interpolated with SLERP, mapped back to the
//! identity latent space through the attacker's projection (the simulated
//! template inversion), and then reconstructed stochastically per variant.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pairs::MorphPair;
use crate::seed::child_seed;
use crate::simulator::{FrsEnsemble, FrsModel};
use crate::store::{Role, TemplateRecord, TemplateStore};
use crate::template::{slerp, MorphWeight, Template};

/// Latent of the morph of two attacker-space templates.
pub fn morph_latent(
    attacker: &FrsModel,
    a: &Template<f64>,
    b: &Template<f64>,
    gamma: MorphWeight,
) -> Result<Vec<f64>> {
    let m = slerp(a, b, gamma)?;
    attacker.invert(&m)
}

fn reference_template(store: &TemplateStore, subject: u32, sample: u32) -> Result<Template<f64>> {
    let rec = store
        .records
        .iter()
        .find(|r| r.role == Role::Reference && r.subject_id == subject && r.sample_id == sample)
        .ok_or_else(|| {
            Error::MalformedStore(format!(
                "{}: no reference sample {sample} for subject {subject}",
                store.frs_name
            ))
        })?;
    Template::new(rec.vector_f64())
}

/// Morph latent of a selected pair, read from the attacker's store.
pub fn pair_morph_latent(
    ensemble: &FrsEnsemble,
    attacker_store: &TemplateStore,
    pair: &MorphPair,
    gamma: MorphWeight,
) -> Result<Vec<f64>> {
    let a = reference_template(attacker_store, pair.subject_a, pair.ref_sample_a)?;
    let b = reference_template(attacker_store, pair.subject_b, pair.ref_sample_b)?;
    morph_latent(ensemble.attacker(), &a, &b, gamma)
}

pub fn variant_seed(master_seed: u64, pair_id: u32, variant_id: u32) -> u64 {
    child_seed(
        child_seed(master_seed, "pair", u64::from(pair_id)),
        "variant",
        u64::from(variant_id),
    )
}

/// Morph templates of every pair and variant, one store per recognizer.
///
/// Records use `subject_id = pair_id` and `sample_id = variant_id`.
pub fn generate_morph_stores(
    ensemble: &FrsEnsemble,
    attacker_store: &TemplateStore,
    pairs: &[MorphPair],
    variants_per_pair: u32,
    gamma: MorphWeight,
    master_seed: u64,
) -> Result<Vec<TemplateStore>> {
    if variants_per_pair == 0 {
        return Err(Error::InvalidConfig(
            "variants_per_pair must be at least 1".into(),
        ));
    }
    let jobs: Vec<(u32, u32)> = (0..pairs.len() as u32)
        .flat_map(|p| (0..variants_per_pair).map(move |v| (p, v)))
        .collect();
    let latents = pairs
        .par_iter()
        .map(|p| pair_morph_latent(ensemble, attacker_store, p, gamma))
        .collect::<Result<Vec<_>>>()?;
    let per_job = jobs
        .par_iter()
        .map(|&(p, v)| {
            ensemble.reconstruct_variant(&latents[p as usize], variant_seed(master_seed, p, v))
        })
        .collect::<Result<Vec<_>>>()?;

    let dim = ensemble.models.first().map_or(0, FrsModel::frs_dim);
    Ok(ensemble
        .models
        .iter()
        .enumerate()
        .map(|(f, m)| {
            let records = jobs
                .iter()
                .zip(&per_job)
                .map(|(&(p, v), templates)| TemplateRecord {
                    subject_id: p,
                    sample_id: v,
                    role: Role::MorphVariant,
                    vector: templates[f].values().iter().map(|&x| x as f32).collect(),
                })
                .collect();
            TemplateStore::new(m.name.clone(), dim, records)
        })
        .collect())
}
