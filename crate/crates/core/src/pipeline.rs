//! Stage orchestration over an output directory.
//!
//! Every stage reads its inputs from and writes its artifacts to
//! `output_dir`, so stages can run as separate processes. A single
//! [`Pipeline`] also caches what it has loaded or produced, which is how
//! `run_all` avoids rereading its own outputs.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::calibration::{
    operating_point, sweep_offsets, threshold_sweep, FrsScores, OperatingPoint,
};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::fmt::sig9;
use crate::map::{
    map_under_sweep, map_with, write_sweep_csv, AttemptTable, MapMatrix, VariantAggregation,
};
use crate::morph::{generate_morph_stores, pair_morph_latent};
use crate::pairs::{nonmated_similarity, read_pairs_csv, select_pairs, write_pairs_csv, MorphPair};
use crate::report::{
    write_atomic, write_json, write_report, MapArtifact, ScoreSummary, SweepArtifact,
    VariantsArtifact, MAP_JSON, OPERATING_POINTS_JSON, SCORE_SUMMARY_JSON, SWEEP_JSON,
    VARIANTS_JSON,
};
use crate::scoring::{
    mated_scores, morph_scores, nonmated_scores, write_histogram_csv, write_scores_csv, ScoreSet,
};
use crate::seed::child_seed;
use crate::simulator::{generate_cohort, sample_noise_seed, FrsEnsemble};
use crate::store::{encode_store, read_store, TemplateRecord, TemplateStore};
use crate::template::MorphWeight;
use crate::variants::{
    correlation_matrix, resample_maximize, run_variant_study, CorrelationMatrix, ResampleResult,
    VariantStudy,
};

pub const CONFIG_FILE: &str = "experiment.toml";
pub const COHORT_FILE: &str = "cohort.latent.btsf";
pub const PAIRS_FILE: &str = "pairs.csv";
pub const SCORES_FILE: &str = "scores.csv";
pub const HISTOGRAM_FILE: &str = "histogram.csv";
pub const OPERATING_POINTS_FILE: &str = "operating_points.csv";
pub const MAP_FILE: &str = "map_matrix.csv";
pub const MAP_TEXT_FILE: &str = "map_matrix.txt";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const VARIANTS_FILE: &str = "variant_study.csv";
pub const TRACE_FILE: &str = "resample_trace.csv";
pub const CORRELATION_FILE: &str = "correlation.csv";

const LATENT_NAME: &str = "latent";

pub fn templates_file(frs: &str) -> String {
    format!("templates.{frs}.btsf")
}

pub fn morphs_file(frs: &str) -> String {
    format!("morphs.{frs}.btsf")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    GenCohort,
    Extract,
    Pairs,
    Morph,
    Score,
    Calibrate,
    Map,
    Sweep,
    Variants,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::GenCohort,
        Stage::Extract,
        Stage::Pairs,
        Stage::Morph,
        Stage::Score,
        Stage::Calibrate,
        Stage::Map,
        Stage::Sweep,
        Stage::Variants,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::GenCohort => "gen-cohort",
            Stage::Extract => "extract",
            Stage::Pairs => "pairs",
            Stage::Morph => "morph",
            Stage::Score => "score",
            Stage::Calibrate => "calibrate",
            Stage::Map => "map",
            Stage::Sweep => "sweep",
            Stage::Variants => "variants",
            Stage::Report => "report",
        }
    }
}

#[derive(Debug, Clone)]
pub struct FrsScoreSets {
    pub mated: ScoreSet,
    pub nonmated: ScoreSet,
    pub morph: ScoreSet,
}

pub struct Pipeline {
    cfg: ExperimentConfig,
    dir: PathBuf,
    ensemble: Option<FrsEnsemble>,
    templates: Vec<Option<TemplateStore>>,
    morphs: Vec<Option<TemplateStore>>,
    pairs: Option<Vec<MorphPair>>,
    scores: Vec<Option<FrsScoreSets>>,
    operating_points: Option<Vec<OperatingPoint>>,
}

impl Pipeline {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.ensemble.models.len();
        Ok(Self {
            dir: cfg.output_dir.clone(),
            cfg,
            ensemble: None,
            templates: vec![None; n],
            morphs: vec![None; n],
            pairs: None,
            scores: vec![None; n],
            operating_points: None,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn output_dir(&self) -> &Path {
        &self.dir
    }

    pub fn set_aggregation(&mut self, agg: VariantAggregation) {
        self.cfg.map.aggregate = agg;
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn ensure_dir(&self) -> Result<()> {
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))
    }

    fn frs_names(&self) -> Vec<String> {
        self.cfg
            .ensemble
            .models
            .iter()
            .map(|m| m.name.clone())
            .collect()
    }

    fn seed(&self, tag: &str) -> u64 {
        child_seed(self.cfg.seed, tag, 0)
    }

    pub fn run(&mut self, stage: Stage) -> Result<Vec<PathBuf>> {
        match stage {
            Stage::GenCohort => self.gen_cohort(),
            Stage::Extract => self.extract(),
            Stage::Pairs => self.pairs(),
            Stage::Morph => self.morph(),
            Stage::Score => self.score(),
            Stage::Calibrate => self.calibrate(),
            Stage::Map => self.map(),
            Stage::Sweep => self.sweep(),
            Stage::Variants => self.variants(),
            Stage::Report => self.report(),
        }
    }

    /// Every stage in order, plus a copy of the effective config.
    pub fn run_all(&mut self) -> Result<Vec<PathBuf>> {
        self.ensure_dir()?;
        let mut written = vec![self.write_config()?];
        for stage in Stage::ALL {
            written.extend(self.run(stage)?);
        }
        Ok(written)
    }

    fn write_config(&self) -> Result<PathBuf> {
        let cfg = ExperimentConfig {
            output_dir: PathBuf::from("."),
            ..self.cfg.clone()
        };
        let path = self.path(CONFIG_FILE);
        write_atomic(&path, cfg.to_toml_string().as_bytes())?;
        Ok(path)
    }

    fn write_store(&self, name: &str, store: &TemplateStore) -> Result<PathBuf> {
        let path = self.path(name);
        let bytes = encode_store(&store.frs_name, store.dim, &store.records)?;
        write_atomic(&path, &bytes)?;
        Ok(path)
    }

    fn write_with<F>(&self, name: &str, f: F) -> Result<PathBuf>
    where
        F: FnOnce(&mut Vec<u8>) -> Result<()>,
    {
        let mut buf = Vec::new();
        f(&mut buf)?;
        let path = self.path(name);
        write_atomic(&path, &buf)?;
        Ok(path)
    }

    fn read_artifact(&self, name: &str) -> Result<TemplateStore> {
        let path = self.path(name);
        if !path.exists() {
            return Err(Error::MissingArtifact(path));
        }
        read_store(&path)
    }

    pub fn ensemble(&mut self) -> Result<&FrsEnsemble> {
        if self.ensemble.is_none() {
            let c = &self.cfg.cohort;
            self.ensemble = Some(FrsEnsemble::generate(
                &self.cfg.ensemble,
                c.latent_dim,
                c.frs_dim,
                self.seed("ensemble"),
            )?);
        }
        Ok(self.ensemble.as_ref().expect("set above"))
    }

    pub fn templates(&mut self, f: usize) -> Result<&TemplateStore> {
        if self.templates[f].is_none() {
            let name = templates_file(&self.cfg.ensemble.models[f].name);
            self.templates[f] = Some(self.read_artifact(&name)?);
        }
        Ok(self.templates[f].as_ref().expect("set above"))
    }

    pub fn morph_store(&mut self, f: usize) -> Result<&TemplateStore> {
        if self.morphs[f].is_none() {
            let name = morphs_file(&self.cfg.ensemble.models[f].name);
            self.morphs[f] = Some(self.read_artifact(&name)?);
        }
        Ok(self.morphs[f].as_ref().expect("set above"))
    }

    pub fn selected_pairs(&mut self) -> Result<&[MorphPair]> {
        if self.pairs.is_none() {
            self.pairs = Some(read_pairs_csv(&self.path(PAIRS_FILE))?);
        }
        Ok(self.pairs.as_deref().expect("set above"))
    }

    /// Mated, non-mated and morph scores of recognizer `f`.
    pub fn score_sets(&mut self, f: usize) -> Result<&FrsScoreSets> {
        if self.scores[f].is_none() {
            let cap = self.cfg.scoring.nonmated_cap;
            let nm_seed = self.seed("nonmated");
            let pairs = self.selected_pairs()?.to_vec();
            self.templates(f)?;
            self.morph_store(f)?;
            let templates = self.templates[f].as_ref().expect("loaded");
            let morphs = self.morphs[f].as_ref().expect("loaded");
            let sets = FrsScoreSets {
                mated: mated_scores(templates)?,
                nonmated: nonmated_scores(templates, cap, nm_seed)?,
                morph: morph_scores(morphs, &pairs, templates)?,
            };
            self.scores[f] = Some(sets);
        }
        Ok(self.scores[f].as_ref().expect("set above"))
    }

    pub fn operating_points(&mut self) -> Result<&[OperatingPoint]> {
        if self.operating_points.is_none() {
            let target = self.cfg.calibration.target_fmr;
            let mut ops = Vec::new();
            for f in 0..self.cfg.ensemble.models.len() {
                let s = self.score_sets(f)?;
                ops.push(operating_point(
                    &s.mated.frs_name,
                    &s.nonmated.values(),
                    &s.mated.values(),
                    target,
                )?);
            }
            self.operating_points = Some(ops);
        }
        Ok(self.operating_points.as_deref().expect("set above"))
    }

    pub fn attempt_table(&mut self) -> Result<AttemptTable> {
        let n = self.cfg.ensemble.models.len();
        let mut morph_sets = Vec::with_capacity(n);
        for f in 0..n {
            morph_sets.push(self.score_sets(f)?.morph.clone());
        }
        let pairs = self.selected_pairs()?.to_vec();
        AttemptTable::build(&morph_sets, &pairs, self.cfg.map.rows)
    }

    pub fn gen_cohort(&mut self) -> Result<Vec<PathBuf>> {
        self.ensure_dir()?;
        let cohort = generate_cohort(&self.cfg.cohort_config())?;
        let records = cohort
            .samples
            .into_iter()
            .map(|s| TemplateRecord {
                subject_id: s.subject_id,
                sample_id: s.sample_id,
                role: s.role,
                vector: s.latent.iter().map(|&x| x as f32).collect(),
            })
            .collect();
        let store = TemplateStore::new(LATENT_NAME, self.cfg.cohort.latent_dim, records);
        Ok(vec![self.write_store(COHORT_FILE, &store)?])
    }

    /// Templates of every cohort sample under every recognizer.
    pub fn extract(&mut self) -> Result<Vec<PathBuf>> {
        self.ensure_dir()?;
        let latent = self.read_artifact(COHORT_FILE)?;
        if latent.dim != self.cfg.cohort.latent_dim {
            return Err(Error::DimMismatch {
                expected: self.cfg.cohort.latent_dim,
                actual: latent.dim,
            });
        }
        self.ensemble()?;
        let ensemble = self.ensemble.as_ref().expect("generated");
        let mut written = Vec::new();
        for (f, model) in ensemble.models.iter().enumerate() {
            let records = latent
                .records
                .par_iter()
                .map(|r| {
                    let seed = sample_noise_seed(model.seed, r.role, r.subject_id, r.sample_id);
                    let t = model.extract(&r.vector_f64(), Some(seed))?;
                    Ok(TemplateRecord {
                        subject_id: r.subject_id,
                        sample_id: r.sample_id,
                        role: r.role,
                        vector: t.values().iter().map(|&x| x as f32).collect(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let store = TemplateStore::new(model.name.clone(), model.frs_dim(), records);
            written.push(self.write_store(&templates_file(&model.name), &store)?);
            self.templates[f] = Some(store);
        }
        Ok(written)
    }

    pub fn pairs(&mut self) -> Result<Vec<PathBuf>> {
        self.ensure_dir()?;
        let p = &self.cfg.pairing;
        let (n_pairs, max_uses, selector) = (p.n_pairs, p.max_uses_per_subject, p.selector_frs);
        let table = nonmated_similarity(self.templates(selector)?)?;
        let pairs = select_pairs(&table, n_pairs, max_uses)?;
        let path = self.path(PAIRS_FILE);
        write_pairs_csv(&path, &pairs)?;
        // Cache the rounded on-disk values.
        self.pairs = Some(read_pairs_csv(&path)?);
        Ok(vec![path])
    }

    pub fn morph(&mut self) -> Result<Vec<PathBuf>> {
        self.ensure_dir()?;
        let gamma = MorphWeight::new(self.cfg.morphing.gamma)?;
        let vpp = self.cfg.morphing.variants_per_pair;
        let seed = self.seed("morph");
        let attacker = self.cfg.ensemble.attacker_index;
        let pairs = self.selected_pairs()?.to_vec();
        self.templates(attacker)?;
        self.ensemble()?;
        let stores = generate_morph_stores(
            self.ensemble.as_ref().expect("generated"),
            self.templates[attacker].as_ref().expect("loaded"),
            &pairs,
            vpp,
            gamma,
            seed,
        )?;
        let mut written = Vec::new();
        for (f, store) in stores.into_iter().enumerate() {
            written.push(self.write_store(&morphs_file(&store.frs_name), &store)?);
            self.morphs[f] = Some(store);
        }
        Ok(written)
    }

    pub fn score(&mut self) -> Result<Vec<PathBuf>> {
        self.ensure_dir()?;
        let n = self.cfg.ensemble.models.len();
        for f in 0..n {
            self.score_sets(f)?;
        }
        let all: Vec<&FrsScoreSets> = self
            .scores
            .iter()
            .map(|s| s.as_ref().expect("scored"))
            .collect();
        let export_nm = self.cfg.scoring.export_nonmated;
        let mut exported: Vec<&ScoreSet> = Vec::new();
        let mut hist: Vec<&ScoreSet> = Vec::new();
        let mut summary = Vec::new();
        for s in &all {
            exported.push(&s.mated);
            if export_nm {
                exported.push(&s.nonmated);
            }
            exported.push(&s.morph);
            hist.extend([&s.mated, &s.nonmated, &s.morph]);
            summary.push(ScoreSummary {
                frs_name: s.mated.frs_name.clone(),
                n_mated: s.mated.len(),
                mated_mean: s.mated.mean().ok_or(Error::EmptyScores)?,
                n_nonmated: s.nonmated.len(),
                nonmated_mean: s.nonmated.mean().ok_or(Error::EmptyScores)?,
                n_morph: s.morph.len(),
                morph_mean: s.morph.mean().ok_or(Error::EmptyScores)?,
            });
        }
        Ok(vec![
            self.write_with(SCORES_FILE, |b| write_scores_csv(b, &exported))?,
            self.write_with(HISTOGRAM_FILE, |b| write_histogram_csv(b, &hist))?,
            {
                let path = self.path(SCORE_SUMMARY_JSON);
                write_json(&path, &summary)?;
                path
            },
        ])
    }

    pub fn calibrate(&mut self) -> Result<Vec<PathBuf>> {
        self.ensure_dir()?;
        let ops = self.operating_points()?.to_vec();
        let csv_path = self.write_with(OPERATING_POINTS_FILE, |b| {
            let mut w = csv::Writer::from_writer(b);
            w.write_record([
                "frs",
                "threshold",
                "target_fmr",
                "achieved_fmr",
                "fnmr",
                "n_nonmated",
                "n_mated",
            ])?;
            for op in &ops {
                w.write_record([
                    op.frs_name.clone(),
                    sig9(op.threshold),
                    sig9(op.target_fmr),
                    sig9(op.achieved_fmr),
                    sig9(op.fnmr),
                    op.n_nonmated.to_string(),
                    op.n_mated.to_string(),
                ])?;
            }
            w.flush()
                .map_err(|e| Error::io("<operating points csv>", e))
        })?;
        let json_path = self.path(OPERATING_POINTS_JSON);
        write_json(&json_path, &ops)?;
        Ok(vec![csv_path, json_path])
    }

    /// MAP matrix at the calibrated thresholds.
    pub fn map_matrix(&mut self) -> Result<(MapMatrix, Vec<f64>)> {
        let thresholds: Vec<f64> = self
            .operating_points()?
            .iter()
            .map(|o| o.threshold)
            .collect();
        let table = self.attempt_table()?;
        let outcomes = table.outcomes(&thresholds)?;
        let m = map_with(
            &outcomes,
            self.cfg.map.rows,
            self.cfg.map_cols(),
            self.cfg.map.aggregate,
        )?;
        Ok((m, thresholds))
    }

    pub fn map(&mut self) -> Result<Vec<PathBuf>> {
        self.ensure_dir()?;
        let (m, thresholds) = self.map_matrix()?;
        let artifact = MapArtifact {
            rows: m.rows(),
            cols: m.cols(),
            aggregate: self.cfg.map.aggregate,
            n_morphs: m.n_morphs,
            frs_names: self.frs_names(),
            thresholds,
            cells: m.cells.clone(),
        };
        let json_path = self.path(MAP_JSON);
        write_json(&json_path, &artifact)?;
        Ok(vec![
            self.write_with(MAP_FILE, |b| m.write_csv(b))?,
            self.write_with(MAP_TEXT_FILE, |b| {
                b.extend_from_slice(m.to_text().as_bytes());
                Ok(())
            })?,
            json_path,
        ])
    }

    pub fn sweep_artifact(&mut self) -> Result<SweepArtifact> {
        let n = self.cfg.ensemble.models.len();
        let mut per_frs = Vec::with_capacity(n);
        for f in 0..n {
            let s = self.score_sets(f)?;
            per_frs.push(FrsScores {
                frs_name: s.mated.frs_name.clone(),
                mated: s.mated.values(),
                nonmated: s.nonmated.values(),
            });
        }
        let sw = &self.cfg.sweep;
        let offsets = sweep_offsets(sw.lo, sw.hi, sw.steps)?;
        let target = self.cfg.calibration.target_fmr;
        let (anchors, steps) = threshold_sweep(&per_frs, target, &offsets)?;
        let (r, c) = self.cfg.sweep_cell();
        let agg = self.cfg.map.aggregate;
        let table = self.attempt_table()?;
        let points = map_under_sweep(&table, &steps, r, c, agg)?;
        Ok(SweepArtifact {
            r,
            c,
            target_fmr: target,
            aggregate: agg,
            anchors,
            points,
        })
    }

    pub fn sweep(&mut self) -> Result<Vec<PathBuf>> {
        self.ensure_dir()?;
        let a = self.sweep_artifact()?;
        let csv_path = self.write_with(SWEEP_FILE, |b| {
            write_sweep_csv(b, &a.anchors, &a.points, a.r, a.c)
        })?;
        let json_path = self.path(SWEEP_JSON);
        write_json(&json_path, &a)?;
        Ok(vec![csv_path, json_path])
    }

    /// Variant study of the configured pair with its resampling result and
    /// correlation matrix.
    pub fn variant_study(&mut self) -> Result<(VariantStudy, ResampleResult, CorrelationMatrix)> {
        let vc = self.cfg.variants.clone();
        let gamma = MorphWeight::new(self.cfg.morphing.gamma)?;
        let seed = self.seed("variant-study");
        let pairs = self.selected_pairs()?.to_vec();
        let pair = pairs.get(vc.pair_index).cloned().ok_or_else(|| {
            Error::InvalidConfig(format!(
                "variants.pair_index {} but only {} pairs selected",
                vc.pair_index,
                pairs.len()
            ))
        })?;
        for f in 0..self.cfg.ensemble.models.len() {
            self.templates(f)?;
        }
        self.ensemble()?;
        let ensemble = self.ensemble.as_ref().expect("generated");
        let stores: Vec<TemplateStore> = self
            .templates
            .iter()
            .map(|s| s.as_ref().expect("loaded").clone())
            .collect();
        let attacker_store = &stores[ensemble.attacker_index];
        let latent = pair_morph_latent(ensemble, attacker_store, &pair, gamma)?;
        let study = run_variant_study(
            vc.pair_index as u32,
            &pair,
            &latent,
            ensemble,
            &stores,
            vc.n_variants,
            seed,
            vc.score_rule,
        )?;
        let resample = resample_maximize(&study, vc.objective)?;
        let corr = correlation_matrix(&study, vc.correlation)?;
        Ok((study, resample, corr))
    }

    pub fn variants(&mut self) -> Result<Vec<PathBuf>> {
        self.ensure_dir()?;
        let vc = self.cfg.variants.clone();
        let (study, resample, corr) = self.variant_study()?;
        let pair = study.pair.clone();
        let objective = study.objective_values(vc.objective)?;

        let n_frs = study.frs_names.len();
        let per_frs_best = (0..n_frs)
            .map(|f| {
                study
                    .frs_column(f)
                    .into_iter()
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let per_frs_mean = (0..n_frs)
            .map(|f| study.frs_column(f).iter().sum::<f64>() / study.n_variants() as f64)
            .collect();
        let artifact = VariantsArtifact {
            pair_id: study.pair_id,
            pair: pair.clone(),
            n_variants: study.n_variants(),
            objective: vc.objective,
            score_rule: vc.score_rule,
            best_variant: resample.best_variant,
            best_value: resample.best_value,
            first_value: objective[0],
            frs_names: study.frs_names.clone(),
            per_frs_best,
            per_frs_mean,
            correlation: corr.clone(),
        };

        let study_path = self.write_with(VARIANTS_FILE, |b| study.write_csv(b, vc.objective))?;
        let trace_path = self.write_with(TRACE_FILE, |b| {
            let mut w = csv::Writer::from_writer(b);
            w.write_record(["variant_id", "objective", "running_max"])?;
            for (i, (o, m)) in objective.iter().zip(&resample.trace).enumerate() {
                w.write_record([i.to_string(), sig9(*o), sig9(*m)])?;
            }
            w.flush().map_err(|e| Error::io("<trace csv>", e))
        })?;
        let corr_path = self.write_with(CORRELATION_FILE, |b| corr.write_csv(b))?;
        let json_path = self.path(VARIANTS_JSON);
        write_json(&json_path, &artifact)?;
        Ok(vec![study_path, trace_path, corr_path, json_path])
    }

    pub fn report(&mut self) -> Result<Vec<PathBuf>> {
        Ok(vec![write_report(&self.dir)?])
    }
}

/// Runs the whole pipeline for `cfg`.
pub fn run_all(cfg: ExperimentConfig) -> Result<Vec<PathBuf>> {
    Pipeline::new(cfg)?.run_all()
}
