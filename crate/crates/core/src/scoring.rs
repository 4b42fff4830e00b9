//! Mated, non-mated and morph comparison scores for one recognizer.
//!
//! All comparisons are reference-vs-probe. Morph records live in their own
//! store with role `MorphVariant`, `subject_id = pair_id` and
//! `sample_id = variant_id`.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt::sig9;
use crate::pairs::MorphPair;
use crate::seed::rng_for;
use crate::store::{Role, TemplateRecord, TemplateStore};
use crate::template::dot;

pub const DEFAULT_NONMATED_CAP: usize = 1_000_000;
pub const HIST_BIN_WIDTH: f64 = 0.01;
pub const HIST_BINS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Mated,
    NonMated,
    Morph,
}

impl ScoreKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreKind::Mated => "mated",
            ScoreKind::NonMated => "nonmated",
            ScoreKind::Morph => "morph",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScoreKey {
    Comparison {
        ref_subject: u32,
        ref_sample: u32,
        probe_subject: u32,
        probe_sample: u32,
    },
    Morph {
        pair_id: u32,
        variant_id: u32,
        subject: u32,
        probe_sample: u32,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub key: ScoreKey,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    pub frs_name: String,
    pub kind: ScoreKind,
    pub scores: Vec<Score>,
}

impl ScoreSet {
    pub fn values(&self) -> Vec<f64> {
        self.scores.iter().map(|s| s.score).collect()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn mean(&self) -> Option<f64> {
        (!self.is_empty())
            .then(|| self.scores.iter().map(|s| s.score).sum::<f64>() / self.len() as f64)
    }
}

/// A record converted to f64 along with its norm.
struct Prepared {
    subject: u32,
    sample: u32,
    v: Vec<f64>,
    n: f64,
}

impl Prepared {
    fn new(r: &TemplateRecord) -> Self {
        let v = r.vector_f64();
        let n = dot(&v, &v).sqrt();
        Self {
            subject: r.subject_id,
            sample: r.sample_id,
            v,
            n,
        }
    }

    fn cosine(&self, other: &Prepared) -> f64 {
        (dot(&self.v, &other.v) / (self.n * other.n)).clamp(-1.0, 1.0)
    }
}

/// Records of one role, ordered by (subject, sample).
fn prepared(store: &TemplateStore, role: Role) -> Vec<Prepared> {
    let mut v: Vec<Prepared> = store.with_role(role).map(Prepared::new).collect();
    v.sort_by_key(|p| (p.subject, p.sample));
    v
}

fn comparison(r: &Prepared, p: &Prepared) -> Score {
    Score {
        key: ScoreKey::Comparison {
            ref_subject: r.subject,
            ref_sample: r.sample,
            probe_subject: p.subject,
            probe_sample: p.sample,
        },
        score: r.cosine(p),
    }
}

/// All same-subject reference-vs-probe comparisons.
pub fn mated_scores(store: &TemplateStore) -> Result<ScoreSet> {
    let refs = prepared(store, Role::Reference);
    let probes = prepared(store, Role::Probe);
    let scores: Vec<Score> = refs
        .par_iter()
        .flat_map_iter(|r| {
            probes
                .iter()
                .filter(move |p| p.subject == r.subject)
                .map(move |p| comparison(r, p))
        })
        .collect();
    if scores.is_empty() {
        return Err(Error::EmptyStore(
            "no subject has both reference and probe samples".into(),
        ));
    }
    Ok(ScoreSet {
        frs_name: store.frs_name.clone(),
        kind: ScoreKind::Mated,
        scores,
    })
}

/// Cross-subject reference-vs-probe comparisons. When more than `cap`
/// exist, exactly `cap` are drawn uniformly without replacement using
/// `seed`; the result stays in enumeration order.
pub fn nonmated_scores(store: &TemplateStore, cap: usize, seed: u64) -> Result<ScoreSet> {
    let refs = prepared(store, Role::Reference);
    let probes = prepared(store, Role::Probe);
    let subjects: std::collections::BTreeSet<u32> =
        refs.iter().chain(&probes).map(|p| p.subject).collect();
    if subjects.len() < 2 {
        return Err(Error::EmptyStore(
            "non-mated scores need at least two subjects".into(),
        ));
    }

    // Probe block [start, end) of each subject; probes are sorted by subject.
    let mut blocks: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for (j, p) in probes.iter().enumerate() {
        blocks
            .entry(p.subject)
            .and_modify(|b| b.1 = j + 1)
            .or_insert((j, j + 1));
    }
    let own = |s: u32| blocks.get(&s).copied().unwrap_or((0, 0));
    // offsets[i] = number of non-mated comparisons of references before i
    let mut offsets = Vec::with_capacity(refs.len() + 1);
    offsets.push(0usize);
    for r in &refs {
        let (a, b) = own(r.subject);
        offsets.push(offsets.last().unwrap() + probes.len() - (b - a));
    }
    let total = *offsets.last().unwrap();
    if total == 0 {
        return Err(Error::EmptyStore(
            "no cross-subject reference/probe comparisons".into(),
        ));
    }

    let locate = |k: usize| -> (usize, usize) {
        let i = offsets.partition_point(|&o| o <= k) - 1;
        let l = k - offsets[i];
        let (a, b) = own(refs[i].subject);
        let j = if l < a { l } else { l + (b - a) };
        (i, j)
    };

    let picks: Vec<usize> = if total > cap {
        let mut idx =
            index::sample(&mut rng_for(seed, "nonmated-subsample", 0), total, cap).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..total).collect()
    };

    let scores = picks
        .par_iter()
        .map(|&k| {
            let (i, j) = locate(k);
            comparison(&refs[i], &probes[j])
        })
        .collect();
    Ok(ScoreSet {
        frs_name: store.frs_name.clone(),
        kind: ScoreKind::NonMated,
        scores,
    })
}

/// Every morph record against every probe of both contributing subjects.
pub fn morph_scores(
    morphs: &TemplateStore,
    pairs: &[MorphPair],
    probes: &TemplateStore,
) -> Result<ScoreSet> {
    let probe_list = prepared(probes, Role::Probe);
    let mut by_subject: BTreeMap<u32, Vec<&Prepared>> = BTreeMap::new();
    for p in &probe_list {
        by_subject.entry(p.subject).or_default().push(p);
    }
    let morph_list = prepared(morphs, Role::MorphVariant);

    let per_morph: Vec<Vec<Score>> = morph_list
        .par_iter()
        .map(|m| {
            let pair = pairs.get(m.subject as usize).ok_or_else(|| {
                Error::MalformedStore(format!(
                    "morph record references unknown pair {}",
                    m.subject
                ))
            })?;
            let mut out = Vec::new();
            for subject in [pair.subject_a, pair.subject_b] {
                let ps = by_subject
                    .get(&subject)
                    .ok_or(Error::MissingProbes(subject))?;
                for p in ps {
                    out.push(Score {
                        key: ScoreKey::Morph {
                            pair_id: m.subject,
                            variant_id: m.sample,
                            subject,
                            probe_sample: p.sample,
                        },
                        score: m.cosine(p),
                    });
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(ScoreSet {
        frs_name: morphs.frs_name.clone(),
        kind: ScoreKind::Morph,
        scores: per_morph.into_iter().flatten().collect(),
    })
}

/// Counts in 200 bins of width 0.01 over `[-1, 1]`; 1.0 lands in the last bin.
pub fn histogram(values: &[f64]) -> Vec<u64> {
    let mut bins = vec![0u64; HIST_BINS];
    for &s in values {
        let b = ((s + 1.0) / HIST_BIN_WIDTH).floor();
        let b = if b.is_nan() {
            0
        } else {
            (b.max(0.0) as usize).min(HIST_BINS - 1)
        };
        bins[b] += 1;
    }
    bins
}

const SCORE_HEADER: [&str; 9] = [
    "frs",
    "kind",
    "ref_subject",
    "ref_sample",
    "pair_id",
    "variant_id",
    "probe_subject",
    "probe_sample",
    "score",
];

/// Score rows with a `kind` column; fields that do not apply are empty.
pub fn write_scores_csv<W: Write>(out: W, sets: &[&ScoreSet]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SCORE_HEADER)?;
    for set in sets {
        for s in &set.scores {
            let fields: [String; 6] = match s.key {
                ScoreKey::Comparison {
                    ref_subject,
                    ref_sample,
                    probe_subject,
                    probe_sample,
                } => [
                    ref_subject.to_string(),
                    ref_sample.to_string(),
                    String::new(),
                    String::new(),
                    probe_subject.to_string(),
                    probe_sample.to_string(),
                ],
                ScoreKey::Morph {
                    pair_id,
                    variant_id,
                    subject,
                    probe_sample,
                } => [
                    String::new(),
                    String::new(),
                    pair_id.to_string(),
                    variant_id.to_string(),
                    subject.to_string(),
                    probe_sample.to_string(),
                ],
            };
            w.write_field(&set.frs_name)?;
            w.write_field(set.kind.as_str())?;
            for f in &fields {
                w.write_field(f)?;
            }
            w.write_record([sig9(s.score)])?;
        }
    }
    w.flush().map_err(|e| Error::io("<scores csv>", e))
}

/// `frs,kind,bin_lo,bin_hi,count` for every bin of every set.
pub fn write_histogram_csv<W: Write>(out: W, sets: &[&ScoreSet]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["frs", "kind", "bin_lo", "bin_hi", "count"])?;
    for set in sets {
        for (i, c) in histogram(&set.values()).into_iter().enumerate() {
            let lo = -1.0 + i as f64 * HIST_BIN_WIDTH;
            w.write_record([
                set.frs_name.clone(),
                set.kind.as_str().to_string(),
                format!("{lo:.2}"),
                format!("{:.2}", lo + HIST_BIN_WIDTH),
                c.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<histogram csv>", e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(subject: u32, sample: u32, role: Role, v: [f32; 2]) -> TemplateRecord {
        TemplateRecord {
            subject_id: subject,
            sample_id: sample,
            role,
            vector: v.to_vec(),
        }
    }

    fn two_subject_store() -> TemplateStore {
        TemplateStore::new(
            "t",
            2,
            vec![
                rec(0, 0, Role::Reference, [1.0, 0.0]),
                rec(0, 0, Role::Probe, [0.8, 0.6]),
                rec(1, 0, Role::Reference, [0.0, 1.0]),
                rec(1, 0, Role::Probe, [-0.6, 0.8]),
            ],
        )
    }

    fn oracle_cos(a: &[f32], b: &[f32]) -> f64 {
        let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
        for (&x, &y) in a.iter().zip(b) {
            let (x, y) = (f64::from(x), f64::from(y));
            ab += x * y;
            aa += x * x;
            bb += y * y;
        }
        (ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0)
    }

    #[test]
    fn mated_count_and_identity() {
        let mut records = vec![
            rec(0, 0, Role::Reference, [1.0, 0.0]),
            rec(0, 1, Role::Reference, [0.0, 1.0]),
        ];
        for i in 0..3 {
            records.push(rec(0, i, Role::Probe, [1.0, 0.0]));
        }
        let s = mated_scores(&TemplateStore::new("t", 2, records)).unwrap();
        assert_eq!(s.len(), 6);
        assert_eq!(s.scores[0].score, 1.0);
        assert_eq!(s.scores[3].score, 0.0);
    }

    #[test]
    fn mated_exact_values() {
        let s = mated_scores(&two_subject_store()).unwrap();
        let v = s.values();
        assert_eq!(
            v,
            vec![
                oracle_cos(&[1.0, 0.0], &[0.8, 0.6]),
                oracle_cos(&[0.0, 1.0], &[-0.6, 0.8])
            ]
        );
        assert!((v[0] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn empty_stores() {
        let only_refs = TemplateStore::new("t", 2, vec![rec(0, 0, Role::Reference, [1.0, 0.0])]);
        assert!(matches!(
            mated_scores(&only_refs),
            Err(Error::EmptyStore(_))
        ));
        assert!(matches!(
            nonmated_scores(&only_refs, 10, 0),
            Err(Error::EmptyStore(_))
        ));
    }

    #[test]
    fn nonmated_count_and_cap() {
        let store = two_subject_store();
        let all = nonmated_scores(&store, 100, 0).unwrap();
        assert_eq!(all.len(), 2);
        let keys: Vec<_> = all.scores.iter().map(|s| s.key).collect();
        assert_eq!(
            keys,
            vec![
                ScoreKey::Comparison {
                    ref_subject: 0,
                    ref_sample: 0,
                    probe_subject: 1,
                    probe_sample: 0
                },
                ScoreKey::Comparison {
                    ref_subject: 1,
                    ref_sample: 0,
                    probe_subject: 0,
                    probe_sample: 0
                },
            ]
        );
        let one = nonmated_scores(&store, 1, 42).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one, nonmated_scores(&store, 1, 42).unwrap());
    }

    #[test]
    fn nonmated_enumeration_is_exhaustive_and_disjoint() {
        // uneven probe counts and a subject without references
        let mut records = vec![];
        for s in 0..4u32 {
            if s != 2 {
                records.push(rec(s, 0, Role::Reference, [1.0, s as f32]));
                records.push(rec(s, 1, Role::Reference, [s as f32, 1.0]));
            }
            for p in 0..=s {
                records.push(rec(s, p, Role::Probe, [p as f32 + 1.0, 2.0]));
            }
        }
        let store = TemplateStore::new("t", 2, records);
        let nm = nonmated_scores(&store, usize::MAX, 0).unwrap();
        let m = mated_scores(&store).unwrap();
        let n_refs = store.with_role(Role::Reference).count();
        let n_probes = store.with_role(Role::Probe).count();
        assert_eq!(nm.len() + m.len(), n_refs * n_probes);
        let mut keys: Vec<_> = nm.scores.iter().chain(&m.scores).map(|s| s.key).collect();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), n_refs * n_probes);
        for s in &nm.scores {
            if let ScoreKey::Comparison {
                ref_subject,
                probe_subject,
                ..
            } = s.key
            {
                assert_ne!(ref_subject, probe_subject);
            }
        }
    }

    #[test]
    fn morph_scores_counts_and_values() {
        let mut probes = vec![];
        for s in 0..2u32 {
            for p in 0..3u32 {
                probes.push(rec(s, p, Role::Probe, [1.0 - 0.5 * s as f32, p as f32]));
            }
        }
        let probes = TemplateStore::new("t", 2, probes);
        let morphs = TemplateStore::new("t", 2, vec![rec(0, 0, Role::MorphVariant, [1.0, 0.0])]);
        let pair = MorphPair {
            subject_a: 0,
            subject_b: 1,
            ref_sample_a: 0,
            ref_sample_b: 0,
            selection_score: 0.0,
        };
        let s = morph_scores(&morphs, std::slice::from_ref(&pair), &probes).unwrap();
        assert_eq!(s.len(), 6);
        // morph equals subject 0's first probe
        assert_eq!(s.scores[0].score, 1.0);
        for (score, probe) in s.scores.iter().zip(probes.records.iter()) {
            assert_eq!(score.score, oracle_cos(&[1.0, 0.0], &probe.vector));
        }

        let missing = TemplateStore::new("t", 2, probes.records[..3].to_vec());
        assert!(matches!(
            morph_scores(&morphs, &[pair], &missing),
            Err(Error::MissingProbes(1))
        ));
    }

    #[test]
    fn histogram_edges() {
        let h = histogram(&[-1.0, -0.995, 0.0, 1.0, 0.999]);
        assert_eq!(h.iter().sum::<u64>(), 5);
        assert_eq!(h[0], 2);
        assert_eq!(h[100], 1);
        assert_eq!(h[199], 2);
    }

    #[test]
    fn csv_layout() {
        let store = two_subject_store();
        let m = mated_scores(&store).unwrap();
        let mut buf = vec![];
        write_scores_csv(&mut buf, &[&m]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), SCORE_HEADER.join(","));
        // f32 inputs 0.8/0.6 are not exact in binary
        assert_eq!(lines.next().unwrap(), "t,mated,0,0,,,0,0,0.799999993");

        let mut buf = vec![];
        write_histogram_csv(&mut buf, &[&m]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 201);
        assert!(text
            .lines()
            .nth(1)
            .unwrap()
            .starts_with("t,mated,-1.00,-0.99,"));
    }
}
