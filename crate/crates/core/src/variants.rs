//! Stochastic morph variation: many reconstructions of one fixed morph,
//! their per-recognizer attack scores, resampling maximization, and the
//! cross-recognizer correlation of the scores.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt::sig9;
use crate::pairs::MorphPair;
use crate::seed::child_seed;
use crate::simulator::FrsEnsemble;
use crate::stats::{pearson, spearman};
use crate::store::{Role, TemplateStore};
use crate::template::dot;

/// How probe similarities of one subject collapse into a single value;
/// the attack score is the minimum over the two contributing subjects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackScoreRule {
    #[default]
    MinOfMean,
    MinOfMin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationMethod {
    #[default]
    Pearson,
    Spearman,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    SingleFrs(usize),
    #[default]
    MinAcrossFrs,
    MeanAcrossFrs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantStudy {
    pub pair_id: u32,
    pub pair: MorphPair,
    pub frs_names: Vec<String>,
    pub seeds: Vec<u64>,
    /// `scores[variant][frs]`.
    pub scores: Vec<Vec<f64>>,
}

impl VariantStudy {
    pub fn n_variants(&self) -> usize {
        self.scores.len()
    }

    pub fn frs_column(&self, f: usize) -> Vec<f64> {
        self.scores.iter().map(|row| row[f]).collect()
    }

    pub fn objective_values(&self, objective: Objective) -> Result<Vec<f64>> {
        if let Objective::SingleFrs(f) = objective {
            if f >= self.frs_names.len() {
                return Err(Error::InvalidConfig(format!(
                    "objective recognizer {f} out of range for {}",
                    self.frs_names.len()
                )));
            }
        }
        Ok(self
            .scores
            .iter()
            .map(|row| match objective {
                Objective::SingleFrs(f) => row[f],
                Objective::MinAcrossFrs => row.iter().copied().fold(f64::INFINITY, f64::min),
                Objective::MeanAcrossFrs => row.iter().sum::<f64>() / row.len() as f64,
            })
            .collect())
    }

    /// `variant_id,seed,<one column per recognizer>,objective`.
    pub fn write_csv<W: Write>(&self, out: W, objective: Objective) -> Result<()> {
        let obj = self.objective_values(objective)?;
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["variant_id".to_string(), "seed".to_string()];
        header.extend(self.frs_names.iter().cloned());
        header.push("objective".into());
        w.write_record(&header)?;
        for (i, row) in self.scores.iter().enumerate() {
            let mut rec = vec![i.to_string(), self.seeds[i].to_string()];
            rec.extend(row.iter().map(|&s| sig9(s)));
            rec.push(sig9(obj[i]));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<variant csv>", e))
    }
}

/// Unit probe vectors of one subject in one recognizer's store.
fn subject_probes(store: &TemplateStore, subject: u32) -> Result<Vec<Vec<f64>>> {
    let mut recs: Vec<_> = store
        .with_role(Role::Probe)
        .filter(|r| r.subject_id == subject)
        .collect();
    if recs.is_empty() {
        return Err(Error::MissingProbes(subject));
    }
    recs.sort_by_key(|r| r.sample_id);
    Ok(recs
        .into_iter()
        .map(|r| {
            let v = r.vector_f64();
            let n = dot(&v, &v).sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect())
}

fn subject_score(variant: &[f64], probes: &[Vec<f64>], rule: AttackScoreRule) -> f64 {
    let sims = probes.iter().map(|p| dot(variant, p).clamp(-1.0, 1.0));
    match rule {
        AttackScoreRule::MinOfMean => sims.sum::<f64>() / probes.len() as f64,
        AttackScoreRule::MinOfMin => sims.fold(f64::INFINITY, f64::min),
    }
}

pub fn study_variant_seed(master_seed: u64, variant: usize) -> u64 {
    child_seed(master_seed, "study-variant", variant as u64)
}

/// Reconstructs `n_variants` variants of `morph_latent` and scores each one
/// against the probes of both contributing subjects under every recognizer.
/// `probe_stores` is parallel to `ensemble.models`.
#[allow(clippy::too_many_arguments)]
pub fn run_variant_study(
    pair_id: u32,
    pair: &MorphPair,
    morph_latent: &[f64],
    ensemble: &FrsEnsemble,
    probe_stores: &[TemplateStore],
    n_variants: usize,
    master_seed: u64,
    rule: AttackScoreRule,
) -> Result<VariantStudy> {
    if n_variants == 0 {
        return Err(Error::EmptyStudy);
    }
    if probe_stores.len() != ensemble.len() {
        return Err(Error::DimMismatch {
            expected: ensemble.len(),
            actual: probe_stores.len(),
        });
    }
    let probes: Vec<[Vec<Vec<f64>>; 2]> = probe_stores
        .iter()
        .map(|s| {
            Ok([
                subject_probes(s, pair.subject_a)?,
                subject_probes(s, pair.subject_b)?,
            ])
        })
        .collect::<Result<_>>()?;

    let seeds: Vec<u64> = (0..n_variants)
        .map(|i| study_variant_seed(master_seed, i))
        .collect();
    let scores = seeds
        .par_iter()
        .map(|&seed| {
            let templates = ensemble.reconstruct_variant(morph_latent, seed)?;
            Ok(templates
                .iter()
                .zip(&probes)
                .map(|(t, [pa, pb])| {
                    subject_score(t.values(), pa, rule).min(subject_score(t.values(), pb, rule))
                })
                .collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(VariantStudy {
        pair_id,
        pair: pair.clone(),
        frs_names: ensemble.names(),
        seeds,
        scores,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResampleResult {
    pub best_variant: usize,
    pub best_value: f64,
    /// `trace[k]` is the best objective among the first `k + 1` variants.
    pub trace: Vec<f64>,
}

/// Best variant under `objective`; ties go to the lowest variant id.
pub fn resample_maximize(study: &VariantStudy, objective: Objective) -> Result<ResampleResult> {
    let values = study.objective_values(objective)?;
    best_of(&values)
}

pub fn best_of(values: &[f64]) -> Result<ResampleResult> {
    if values.is_empty() {
        return Err(Error::EmptyStudy);
    }
    let mut best_variant = 0;
    let mut trace = Vec::with_capacity(values.len());
    for (i, &v) in values.iter().enumerate() {
        if v > values[best_variant] {
            best_variant = i;
        }
        trace.push(values[best_variant]);
    }
    Ok(ResampleResult {
        best_variant,
        best_value: values[best_variant],
        trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub frs_names: Vec<String>,
    pub method: CorrelationMethod,
    pub entries: Vec<Vec<f64>>,
}

impl CorrelationMatrix {
    /// `frs,<names...>` followed by one row per recognizer.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["frs".to_string()];
        header.extend(self.frs_names.iter().cloned());
        w.write_record(&header)?;
        for (name, row) in self.frs_names.iter().zip(&self.entries) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(|&x| sig9(x)));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<correlation csv>", e))
    }

    pub fn min_off_diagonal(&self) -> Option<f64> {
        let n = self.entries.len();
        (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| self.entries[i][j])
            .reduce(f64::min)
    }
}

/// Correlation of per-variant attack scores between every recognizer pair.
pub fn correlation_matrix(
    study: &VariantStudy,
    method: CorrelationMethod,
) -> Result<CorrelationMatrix> {
    if study.n_variants() < 2 {
        return Err(Error::InvalidConfig(
            "correlation needs at least two variants".into(),
        ));
    }
    let n = study.frs_names.len();
    let columns: Vec<Vec<f64>> = (0..n).map(|f| study.frs_column(f)).collect();
    for (f, col) in columns.iter().enumerate() {
        if col.iter().all(|&v| v == col[0]) {
            return Err(Error::ZeroVariance(study.frs_names[f].clone()));
        }
    }
    let mut entries = vec![vec![1.0; n]; n];
    for (i, x) in columns.iter().enumerate() {
        for (j, y) in columns.iter().enumerate().skip(i + 1) {
            let r = match method {
                CorrelationMethod::Pearson => pearson(x, y),
                CorrelationMethod::Spearman => spearman(x, y),
            }
            .ok_or_else(|| Error::ZeroVariance(study.frs_names[i].clone()))?;
            entries[i][j] = r;
            entries[j][i] = r;
        }
    }
    Ok(CorrelationMatrix {
        frs_names: study.frs_names.clone(),
        method,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn study(scores: Vec<Vec<f64>>) -> VariantStudy {
        let n_frs = scores[0].len();
        VariantStudy {
            pair_id: 0,
            pair: MorphPair {
                subject_a: 0,
                subject_b: 1,
                ref_sample_a: 0,
                ref_sample_b: 0,
                selection_score: 0.0,
            },
            frs_names: (0..n_frs).map(|f| format!("f{f}")).collect(),
            seeds: (0..scores.len() as u64).collect(),
            scores,
        }
    }

    #[test]
    fn argmax_and_running_max() {
        let r = best_of(&[0.3, 0.5, 0.2]).unwrap();
        assert_eq!((r.best_variant, r.best_value), (1, 0.5));
        assert_eq!(r.trace, vec![0.3, 0.5, 0.5]);
        assert_eq!(best_of(&[0.4; 5]).unwrap().best_variant, 0);
        assert!(matches!(best_of(&[]), Err(Error::EmptyStudy)));
    }

    #[test]
    fn min_across_frs_brute_force() {
        let s = study(vec![
            vec![0.5, 0.1],
            vec![0.3, 0.35],
            vec![0.9, 0.2],
            vec![0.34, 0.4],
        ]);
        let got = resample_maximize(&s, Objective::MinAcrossFrs).unwrap();
        let mut best = (0, f64::NEG_INFINITY);
        for (i, row) in s.scores.iter().enumerate() {
            let v = row[0].min(row[1]);
            if v > best.1 {
                best = (i, v);
            }
        }
        assert_eq!((got.best_variant, got.best_value), best);
        assert_eq!(got.best_variant, 3);
        assert_eq!(
            resample_maximize(&s, Objective::SingleFrs(0))
                .unwrap()
                .best_variant,
            2
        );
        assert_eq!(
            resample_maximize(&s, Objective::MeanAcrossFrs)
                .unwrap()
                .best_variant,
            2
        );
        assert!(resample_maximize(&s, Objective::SingleFrs(2)).is_err());
    }

    #[test]
    fn correlation_fixtures() {
        let s = study(vec![
            vec![1.0, 1.0, -1.0],
            vec![2.0, 2.0, -2.0],
            vec![3.0, 4.0, -3.0],
        ]);
        let c = correlation_matrix(&s, CorrelationMethod::Pearson).unwrap();
        assert!((c.entries[0][1] - 0.98198).abs() < 1e-5);
        assert_eq!(c.entries[0][2], -1.0);
        for i in 0..3 {
            assert_eq!(c.entries[i][i], 1.0);
            for j in 0..3 {
                assert_eq!(c.entries[i][j], c.entries[j][i]);
            }
        }
        let sp = correlation_matrix(&s, CorrelationMethod::Spearman).unwrap();
        assert_eq!(sp.entries[0][1], 1.0);

        let flat = study(vec![vec![1.0, 0.2], vec![2.0, 0.2]]);
        assert!(matches!(
            correlation_matrix(&flat, CorrelationMethod::Pearson),
            Err(Error::ZeroVariance(name)) if name == "f1"
        ));
    }

    #[test]
    fn csv_outputs() {
        let s = study(vec![vec![0.25, 0.5], vec![0.75, 0.125]]);
        let mut buf = vec![];
        s.write_csv(&mut buf, Objective::MinAcrossFrs).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "variant_id,seed,f0,f1,objective\n0,0,0.25,0.5,0.25\n1,1,0.75,0.125,0.125\n"
        );
        let c = correlation_matrix(&s, CorrelationMethod::Pearson).unwrap();
        let mut buf = vec![];
        c.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "frs,f0,f1\nf0,1,-1\nf1,-1,1\n"
        );
    }
}
