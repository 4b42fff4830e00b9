//! Morph pair selection from non-mated reference similarity.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt::sig9;
use crate::store::{Role, TemplateStore};
use crate::template::dot;

/// Best-matching reference samples of two different subjects.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectSimilarity {
    pub subject_a: u32,
    pub subject_b: u32,
    pub ref_sample_a: u32,
    pub ref_sample_b: u32,
    pub score: f64,
}

/// A chosen pair of contributing subjects. `subject_a < subject_b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorphPair {
    pub subject_a: u32,
    pub subject_b: u32,
    pub ref_sample_a: u32,
    pub ref_sample_b: u32,
    pub selection_score: f64,
}

/// `(sample_id, unit vector)` of one reference sample.
type UnitRef = (u32, Vec<f64>);

/// Max cosine similarity over all cross-subject reference sample pairs, for
/// every unordered subject pair, ordered by `(subject_a, subject_b)`.
pub fn nonmated_similarity(store: &TemplateStore) -> Result<Vec<SubjectSimilarity>> {
    let refs = store.by_subject(Role::Reference);
    if refs.len() < 2 {
        return Err(Error::InsufficientSubjects(refs.len()));
    }
    let subjects: Vec<(u32, Vec<UnitRef>)> = refs
        .iter()
        .map(|(&s, recs)| {
            let vs = recs
                .iter()
                .map(|r| {
                    let v = r.vector_f64();
                    let n = dot(&v, &v).sqrt();
                    (r.sample_id, v.into_iter().map(|x| x / n).collect())
                })
                .collect();
            (s, vs)
        })
        .collect();

    let table = (0..subjects.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let subjects = &subjects;
            (i + 1..subjects.len()).map(move |j| {
                let (sa, ra) = &subjects[i];
                let (sb, rb) = &subjects[j];
                let mut best = SubjectSimilarity {
                    subject_a: *sa,
                    subject_b: *sb,
                    ref_sample_a: 0,
                    ref_sample_b: 0,
                    score: f64::NEG_INFINITY,
                };
                for (ia, va) in ra {
                    for (ib, vb) in rb {
                        let s = dot(va, vb).clamp(-1.0, 1.0);
                        if s > best.score {
                            best.score = s;
                            best.ref_sample_a = *ia;
                            best.ref_sample_b = *ib;
                        }
                    }
                }
                best
            })
        })
        .collect();
    Ok(table)
}

/// Greedy selection by descending score, ties by `(subject_a, subject_b)`,
/// with each subject used at most `max_uses_per_subject` times.
pub fn select_pairs(
    table: &[SubjectSimilarity],
    n_pairs: usize,
    max_uses_per_subject: usize,
) -> Result<Vec<MorphPair>> {
    if n_pairs == 0 || max_uses_per_subject == 0 {
        return Err(Error::InvalidConfig(
            "n_pairs and max_uses_per_subject must be >= 1".into(),
        ));
    }
    let mut order: Vec<&SubjectSimilarity> = table.iter().collect();
    order.sort_by(|x, y| {
        y.score
            .total_cmp(&x.score)
            .then((x.subject_a, x.subject_b).cmp(&(y.subject_a, y.subject_b)))
    });
    let mut uses: BTreeMap<u32, usize> = BTreeMap::new();
    let mut out = Vec::with_capacity(n_pairs);
    for e in order {
        if out.len() == n_pairs {
            break;
        }
        let ua = uses.get(&e.subject_a).copied().unwrap_or(0);
        let ub = uses.get(&e.subject_b).copied().unwrap_or(0);
        if ua >= max_uses_per_subject || ub >= max_uses_per_subject {
            continue;
        }
        *uses.entry(e.subject_a).or_default() += 1;
        *uses.entry(e.subject_b).or_default() += 1;
        out.push(MorphPair {
            subject_a: e.subject_a,
            subject_b: e.subject_b,
            ref_sample_a: e.ref_sample_a,
            ref_sample_b: e.ref_sample_b,
            selection_score: e.score,
        });
    }
    if out.len() < n_pairs {
        return Err(Error::NotEnoughPairs {
            requested: n_pairs,
            feasible: out.len(),
        });
    }
    Ok(out)
}

/// Writes `subject_a,subject_b,ref_sample_a,ref_sample_b,selection_score`;
/// the pair id is the 0-based row index.
pub fn write_pairs_csv(path: &Path, pairs: &[MorphPair]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "subject_a",
        "subject_b",
        "ref_sample_a",
        "ref_sample_b",
        "selection_score",
    ])?;
    for p in pairs {
        w.write_record([
            p.subject_a.to_string(),
            p.subject_b.to_string(),
            p.ref_sample_a.to_string(),
            p.ref_sample_b.to_string(),
            sig9(p.selection_score),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_pairs_csv(path: &Path) -> Result<Vec<MorphPair>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let pairs: Vec<MorphPair> = r.deserialize().collect::<std::result::Result<_, _>>()?;
    Ok(pairs)
}
