//! Morph Attack Potential matrices.
//!
//! `MAP[r, c]` is the proportion of morphs that reach a match decision in at
//! least `r` verification attempts against *each* contributing subject, on
//! at least `c` of the evaluated recognizers. Attempts are the first `r_max`
//! probes of a subject ordered by sample id; "at least r" counts any subset
//! of them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::calibration::{SweepAnchors, SweepStep};
use crate::error::{Error, Result};
use crate::fmt::sig9;
use crate::pairs::MorphPair;
use crate::scoring::{ScoreKey, ScoreKind, ScoreSet};

/// Matched attempt counts of one morph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub pair_id: u32,
    pub variant_id: u32,
    /// Per recognizer: `(m_a, m_b)`, matches against subject a and b.
    pub matched: Vec<(u32, u32)>,
}

impl AttackOutcome {
    /// Recognizers on which both subjects matched in at least `r` attempts.
    pub fn systems_fooled(&self, r: u32) -> usize {
        self.matched.iter().filter(|&&(a, b)| a.min(b) >= r).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantAggregation {
    /// Every variant is a separate attack.
    #[default]
    PerVariant,
    /// A pair counts when any of its variants succeeds.
    Best,
}

/// Attempt scores of every morph, grouped once so outcomes can be
/// re-evaluated cheaply at many thresholds.
#[derive(Debug, Clone)]
pub struct AttemptTable {
    pub frs_names: Vec<String>,
    pub r_max: usize,
    /// `(pair_id, variant_id)` -> per recognizer -> `[subject a, subject b]` attempt scores.
    rows: BTreeMap<(u32, u32), Vec<[Vec<f64>; 2]>>,
}

impl AttemptTable {
    pub fn build(morph_sets: &[ScoreSet], pairs: &[MorphPair], r_max: usize) -> Result<Self> {
        if morph_sets.is_empty() {
            return Err(Error::EmptyOutcomes);
        }
        if r_max == 0 {
            return Err(Error::InvalidConfig("r_max must be at least 1".into()));
        }
        // (pair, variant) -> frs -> subject -> [(probe_sample, score)]
        type Raw = BTreeMap<(u32, u32), Vec<BTreeMap<u32, Vec<(u32, f64)>>>>;
        let n_frs = morph_sets.len();
        let mut raw: Raw = BTreeMap::new();
        for (f, set) in morph_sets.iter().enumerate() {
            if set.kind != ScoreKind::Morph {
                return Err(Error::InvalidConfig(format!(
                    "{} score set passed where morph scores are required",
                    set.kind.as_str()
                )));
            }
            for s in &set.scores {
                if let ScoreKey::Morph {
                    pair_id,
                    variant_id,
                    subject,
                    probe_sample,
                } = s.key
                {
                    raw.entry((pair_id, variant_id))
                        .or_insert_with(|| vec![BTreeMap::new(); n_frs])[f]
                        .entry(subject)
                        .or_default()
                        .push((probe_sample, s.score));
                }
            }
        }

        let mut rows = BTreeMap::new();
        for ((pair_id, variant_id), per_frs) in raw {
            let pair = pairs.get(pair_id as usize).ok_or_else(|| {
                Error::MalformedStore(format!("morph scores reference unknown pair {pair_id}"))
            })?;
            let mut row = Vec::with_capacity(n_frs);
            for (f, mut by_subject) in per_frs.into_iter().enumerate() {
                let mut take = |subject: u32| -> Result<Vec<f64>> {
                    let mut attempts = by_subject.remove(&subject).unwrap_or_default();
                    if attempts.len() < r_max {
                        return Err(Error::InsufficientProbes {
                            pair_id,
                            variant_id,
                            subject,
                            frs: morph_sets[f].frs_name.clone(),
                            available: attempts.len(),
                            required: r_max,
                        });
                    }
                    attempts.sort_by_key(|&(sample, _)| sample);
                    Ok(attempts.into_iter().take(r_max).map(|(_, s)| s).collect())
                };
                row.push([take(pair.subject_a)?, take(pair.subject_b)?]);
            }
            rows.insert((pair_id, variant_id), row);
        }
        Ok(Self {
            frs_names: morph_sets.iter().map(|s| s.frs_name.clone()).collect(),
            r_max,
            rows,
        })
    }

    pub fn n_morphs(&self) -> usize {
        self.rows.len()
    }

    /// Outcomes at per-recognizer thresholds, ordered by `(pair, variant)`.
    pub fn outcomes(&self, thresholds: &[f64]) -> Result<Vec<AttackOutcome>> {
        if thresholds.len() != self.frs_names.len() {
            return Err(Error::DimMismatch {
                expected: self.frs_names.len(),
                actual: thresholds.len(),
            });
        }
        Ok(self
            .rows
            .iter()
            .map(|(&(pair_id, variant_id), per_frs)| AttackOutcome {
                pair_id,
                variant_id,
                matched: per_frs
                    .iter()
                    .zip(thresholds)
                    .map(|([a, b], &t)| {
                        let m = |v: &Vec<f64>| v.iter().filter(|&&s| s >= t).count() as u32;
                        (m(a), m(b))
                    })
                    .collect(),
            })
            .collect())
    }
}

/// Per-morph matched attempt counts; `morph_sets` and `thresholds` are
/// parallel, one entry per recognizer.
pub fn attack_outcomes(
    morph_sets: &[ScoreSet],
    pairs: &[MorphPair],
    thresholds: &[f64],
    r_max: usize,
) -> Result<Vec<AttackOutcome>> {
    AttemptTable::build(morph_sets, pairs, r_max)?.outcomes(thresholds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapMatrix {
    /// `cells[r-1][c-1]`.
    pub cells: Vec<Vec<f64>>,
    pub n_morphs: usize,
}

impl MapMatrix {
    pub fn rows(&self) -> usize {
        self.cells.len()
    }

    pub fn cols(&self) -> usize {
        self.cells.first().map_or(0, Vec::len)
    }

    /// 1-based access, `MAP[r, c]`.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.cells[r - 1][c - 1]
    }

    /// Number of adjacent cell pairs that increase along r or c.
    pub fn monotonicity_violations(&self) -> usize {
        let mut v = 0;
        for r in 0..self.rows() {
            for c in 0..self.cols() {
                if r + 1 < self.rows() && self.cells[r + 1][c] > self.cells[r][c] {
                    v += 1;
                }
                if c + 1 < self.cols() && self.cells[r][c + 1] > self.cells[r][c] {
                    v += 1;
                }
            }
        }
        v
    }

    /// Header `c=1,...,c=C`; row i holds attempts r = i.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record((1..=self.cols()).map(|c| format!("c={c}")))?;
        for row in &self.cells {
            w.write_record(row.iter().map(|&x| sig9(x)))?;
        }
        w.flush().map_err(|e| Error::io("<map csv>", e))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "MAP matrix ({} morphs); rows: attempts r, cols: recognizers c",
            self.n_morphs
        );
        let _ = write!(s, "      ");
        for c in 1..=self.cols() {
            let _ = write!(s, "{:>9}", format!("c={c}"));
        }
        s.push('\n');
        for (r, row) in self.cells.iter().enumerate() {
            let _ = write!(s, "r={:<4}", r + 1);
            for x in row {
                let _ = write!(s, "{:>8.2}%", x * 100.0);
            }
            s.push('\n');
        }
        s
    }
}

fn check_shape(outcomes: &[AttackOutcome], rows: usize, cols: usize) -> Result<()> {
    if outcomes.is_empty() {
        return Err(Error::EmptyOutcomes);
    }
    let n_frs = outcomes[0].matched.len();
    if rows == 0 || cols == 0 || cols > n_frs {
        return Err(Error::InvalidConfig(format!(
            "MAP shape {rows}x{cols} invalid for {n_frs} recognizers"
        )));
    }
    if outcomes.iter().any(|o| o.matched.len() != n_frs) {
        return Err(Error::InvalidConfig(
            "outcomes disagree on recognizer count".into(),
        ));
    }
    Ok(())
}

/// `cell[r, c] = |{morph : systems_fooled(r) >= c}| / n_morphs`.
pub fn map_matrix(outcomes: &[AttackOutcome], rows: usize, cols: usize) -> Result<MapMatrix> {
    check_shape(outcomes, rows, cols)?;
    let n = outcomes.len();
    let mut counts = vec![vec![0usize; cols]; rows];
    for o in outcomes {
        for (r, row) in counts.iter_mut().enumerate() {
            let fooled = o.systems_fooled(r as u32 + 1);
            for cell in row.iter_mut().take(fooled.min(cols)) {
                *cell += 1;
            }
        }
    }
    Ok(MapMatrix {
        cells: counts
            .into_iter()
            .map(|row| row.into_iter().map(|k| k as f64 / n as f64).collect())
            .collect(),
        n_morphs: n,
    })
}

/// MAP where each pair counts once: it succeeds in a cell when any of its
/// variants does.
pub fn map_matrix_best_variant(
    outcomes: &[AttackOutcome],
    rows: usize,
    cols: usize,
) -> Result<MapMatrix> {
    check_shape(outcomes, rows, cols)?;
    let mut by_pair: BTreeMap<u32, Vec<&AttackOutcome>> = BTreeMap::new();
    for o in outcomes {
        by_pair.entry(o.pair_id).or_default().push(o);
    }
    let n = by_pair.len();
    let mut counts = vec![vec![0usize; cols]; rows];
    for variants in by_pair.values() {
        for (r, row) in counts.iter_mut().enumerate() {
            let fooled = variants
                .iter()
                .map(|o| o.systems_fooled(r as u32 + 1))
                .max()
                .unwrap_or(0);
            for cell in row.iter_mut().take(fooled.min(cols)) {
                *cell += 1;
            }
        }
    }
    Ok(MapMatrix {
        cells: counts
            .into_iter()
            .map(|row| row.into_iter().map(|k| k as f64 / n as f64).collect())
            .collect(),
        n_morphs: n,
    })
}

pub fn map_with(
    outcomes: &[AttackOutcome],
    rows: usize,
    cols: usize,
    agg: VariantAggregation,
) -> Result<MapMatrix> {
    match agg {
        VariantAggregation::PerVariant => map_matrix(outcomes, rows, cols),
        VariantAggregation::Best => map_matrix_best_variant(outcomes, rows, cols),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepMapPoint {
    pub offset: f64,
    pub thresholds: Vec<f64>,
    pub avg_fmr: f64,
    pub avg_fnmr: f64,
    pub map_value: f64,
}

/// The selected `MAP[r_sel, c_sel]` recomputed at every sweep step.
pub fn map_under_sweep(
    table: &AttemptTable,
    steps: &[SweepStep],
    r_sel: usize,
    c_sel: usize,
    agg: VariantAggregation,
) -> Result<Vec<SweepMapPoint>> {
    if r_sel == 0 || r_sel > table.r_max || c_sel == 0 || c_sel > table.frs_names.len() {
        return Err(Error::InvalidConfig(format!(
            "MAP cell ({r_sel}, {c_sel}) outside {}x{}",
            table.r_max,
            table.frs_names.len()
        )));
    }
    steps
        .iter()
        .map(|step| {
            let outcomes = table.outcomes(&step.thresholds)?;
            let m = map_with(&outcomes, r_sel, c_sel, agg)?;
            Ok(SweepMapPoint {
                offset: step.offset,
                thresholds: step.thresholds.clone(),
                avg_fmr: step.avg_fmr,
                avg_fnmr: step.avg_fnmr,
                map_value: m.get(r_sel, c_sel),
            })
        })
        .collect()
}

/// `offset,<frs thresholds...>,avg_fmr,avg_fnmr,map_r<r>_c<c>`.
pub fn write_sweep_csv<W: Write>(
    out: W,
    anchors: &[SweepAnchors],
    points: &[SweepMapPoint],
    r_sel: usize,
    c_sel: usize,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["offset".to_string()];
    header.extend(anchors.iter().map(|a| format!("threshold_{}", a.frs_name)));
    header.extend([
        "avg_fmr".into(),
        "avg_fnmr".into(),
        format!("map_r{r_sel}_c{c_sel}"),
    ]);
    w.write_record(&header)?;
    for p in points {
        let mut row = vec![sig9(p.offset)];
        row.extend(p.thresholds.iter().map(|&t| sig9(t)));
        row.extend([sig9(p.avg_fmr), sig9(p.avg_fnmr), sig9(p.map_value)]);
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<sweep csv>", e))
}
