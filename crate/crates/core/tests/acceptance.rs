//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use morphmap::calibration::{fmr_at_threshold, threshold_at_fmr};
use morphmap::config::ExperimentConfig;
use morphmap::error::Error;
use morphmap::map::{
    map_matrix, map_with, AttackOutcome, AttemptTable, MapMatrix, VariantAggregation,
};
use morphmap::pairs::MorphPair;
use morphmap::pipeline::{self, Pipeline};
use morphmap::report::{self, MapArtifact, ScoreSummary};
use morphmap::scoring::{Score, ScoreKey, ScoreKind, ScoreSet};
use morphmap::stats::pearson;
use morphmap::store::{decode_store, encode_store, read_store, write_store, Role, TemplateRecord};
use morphmap::{angle_between, slerp, MorphWeight, Template64};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, StandardNormal};

type Outcome = Result<String, String>;

#[derive(Default)]
struct Gate {
    failures: usize,
    matrices: Vec<MapMatrix>,
}

impl Gate {
    fn run(&mut self, name: &str, f: impl FnOnce(&mut Gate) -> Outcome) {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| f(self))).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS  {name:<28} {detail} [{secs:.2}s]"),
            Err(detail) => {
                self.failures += 1;
                println!("FAIL  {name:<28} {detail} [{secs:.2}s]");
            }
        }
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64, what: &str) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s, || {
        format!(
            "{what} took {:.2}s, limit {limit_s}s",
            elapsed.as_secs_f64()
        )
    })
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Template64 {
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    Template64::new(v).unwrap().normalize().unwrap()
}

fn slerp_geometry(_: &mut Gate) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x51E4);
    let (mut worst_norm, mut worst_ratio, mut worst_mid) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let a = random_unit(&mut rng, 512);
        let b = random_unit(&mut rng, 512);
        let gamma: f64 = rng.random_range(0.0..=1.0);
        let s = slerp(&a, &b, MorphWeight::new(gamma).unwrap()).map_err(|e| e.to_string())?;
        worst_norm = worst_norm.max((s.norm() - 1.0).abs());
        let theta = angle_between(&a, &b).unwrap();
        let ratio = angle_between(&a, &s).unwrap() / theta;
        worst_ratio = worst_ratio.max((ratio - gamma).abs());
        let m = slerp(&a, &b, MorphWeight::MIDPOINT).unwrap();
        worst_mid =
            worst_mid.max((angle_between(&a, &m).unwrap() - angle_between(&b, &m).unwrap()).abs());
    }
    ensure(worst_norm <= 1e-9, || {
        format!("unit norm error {worst_norm:e}")
    })?;
    ensure(worst_ratio <= 1e-6, || {
        format!("angle ratio error {worst_ratio:e}")
    })?;
    ensure(worst_mid <= 1e-9, || {
        format!("midpoint asymmetry {worst_mid:e}")
    })?;
    within(start.elapsed(), 5.0, "suite")?;
    Ok(format!(
        "1000 pairs dim 512; max |norm-1| {worst_norm:.1e}, max ratio err {worst_ratio:.1e}, max midpoint diff {worst_mid:.1e}"
    ))
}

fn count_at_or_above(scores: &[f64], t: f64) -> usize {
    scores.iter().filter(|&&s| s >= t).count()
}

fn calibration_bound(_: &mut Gate) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xCA11B);
    let targets = [0.1, 0.01, 0.001];
    let mut lower_checked = 0;
    for i in 0..200 {
        let n = match i {
            0 => 10,
            1 => 1_000_000,
            _ => 10f64.powf(rng.random_range(1.0..=6.0)).round() as usize,
        };
        let target = targets[i % 3];
        let scores: Vec<f64> = match i % 4 {
            0 => {
                let d = Normal::new(0.0, 0.05).unwrap();
                (0..n).map(|_| d.sample(&mut rng)).collect()
            }
            1 => (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
            2 => {
                let d = Exp::new(3.0).unwrap();
                (0..n).map(|_| d.sample(&mut rng)).collect()
            }
            _ => {
                let d = Normal::new(0.3, 0.2).unwrap();
                (0..n).map(|_| d.sample(&mut rng)).collect()
            }
        };
        let t = threshold_at_fmr(&scores, target).map_err(|e| e.to_string())?;
        let achieved = count_at_or_above(&scores, t) as f64 / n as f64;
        let reported = fmr_at_threshold(&scores, t).unwrap();
        ensure(achieved == reported, || {
            format!("set {i}: counting oracle {achieved} vs {reported}")
        })?;
        ensure(achieved <= target, || {
            format!("set {i} (N={n}, target {target}): achieved {achieved}")
        })?;
        let k = (n as f64 * target).floor() as usize;
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        let tie_free = sorted.windows(2).all(|w| w[0] < w[1]);
        if k >= 1 && tie_free {
            lower_checked += 1;
            ensure(achieved >= target - 1.0 / n as f64, || {
                format!("set {i} (N={n}, target {target}): achieved {achieved} below target - 1/N")
            })?;
        }
    }
    let mut tied = 0;
    for i in 0..30 {
        let n = rng.random_range(10..5000);
        let scores: Vec<f64> = (0..n)
            .map(|_| (rng.random_range(0.0..1.0f64) * 20.0).floor() / 20.0)
            .collect();
        let target = targets[i % 3];
        let t = threshold_at_fmr(&scores, target).unwrap();
        let achieved = count_at_or_above(&scores, t) as f64 / n as f64;
        ensure(achieved <= target, || {
            format!("tied set {i}: achieved {achieved} > {target}")
        })?;
        tied += 1;
    }
    within(start.elapsed(), 30.0, "suite")?;
    Ok(format!(
        "200 multisets N in [10, 1e6]: FMR <= target for all, >= target-1/N on {lower_checked} with k>=1; {tied} tie-heavy sets within bound"
    ))
}

struct MicroInstance {
    sets: Vec<ScoreSet>,
    pairs: Vec<MorphPair>,
    thresholds: Vec<f64>,
    r_max: usize,
    /// morph -> frs -> [a, b] -> attempt scores in sample order.
    attempts: Vec<Vec<[Vec<f64>; 2]>>,
}

fn micro_instance(rng: &mut ChaCha8Rng) -> MicroInstance {
    let n_morphs = rng.random_range(1..=5usize);
    let n_frs = rng.random_range(1..=3usize);
    let r_max = rng.random_range(1..=3usize);
    let grid = rng.random_bool(0.5);
    let draw = |rng: &mut ChaCha8Rng| -> f64 {
        let x: f64 = rng.random_range(0.0..1.0);
        if grid {
            (x * 10.0).floor() / 10.0
        } else {
            x
        }
    };
    let thresholds: Vec<f64> = (0..n_frs).map(|_| draw(rng)).collect();
    let pairs: Vec<MorphPair> = (0..n_morphs as u32)
        .map(|i| MorphPair {
            subject_a: 2 * i,
            subject_b: 2 * i + 1,
            ref_sample_a: 0,
            ref_sample_b: 0,
            selection_score: 0.0,
        })
        .collect();
    let mut sets: Vec<ScoreSet> = (0..n_frs)
        .map(|f| ScoreSet {
            frs_name: format!("f{f}"),
            kind: ScoreKind::Morph,
            scores: Vec::new(),
        })
        .collect();
    let mut attempts = vec![vec![[Vec::new(), Vec::new()]; n_frs]; n_morphs];
    for (m, pair) in pairs.iter().enumerate() {
        for f in 0..n_frs {
            for (side, subject) in [pair.subject_a, pair.subject_b].into_iter().enumerate() {
                let n_probes = rng.random_range(r_max..=r_max + 2);
                let mut samples: Vec<u32> = (0..10).collect();
                samples.shuffle(rng);
                samples.truncate(n_probes);
                let mut by_sample: Vec<(u32, f64)> =
                    samples.iter().map(|&s| (s, draw(rng))).collect();
                for &(sample, score) in &by_sample {
                    sets[f].scores.push(Score {
                        key: ScoreKey::Morph {
                            pair_id: m as u32,
                            variant_id: 0,
                            subject,
                            probe_sample: sample,
                        },
                        score,
                    });
                }
                by_sample.sort_by_key(|&(s, _)| s);
                attempts[m][f][side] = by_sample.iter().take(r_max).map(|&(_, s)| s).collect();
            }
        }
        for set in &mut sets {
            set.scores.shuffle(rng);
        }
    }
    MicroInstance {
        sets,
        pairs,
        thresholds,
        r_max,
        attempts,
    }
}

fn naive_map(inst: &MicroInstance) -> Vec<Vec<f64>> {
    let n_frs = inst.thresholds.len();
    let n = inst.attempts.len();
    let mut cells = vec![vec![0.0; n_frs]; inst.r_max];
    for r in 1..=inst.r_max {
        for c in 1..=n_frs {
            let mut count = 0usize;
            for morph in &inst.attempts {
                let mut fooled = 0usize;
                for (f, [a, b]) in morph.iter().enumerate() {
                    let t = inst.thresholds[f];
                    let ma = a.iter().filter(|&&s| s >= t).count();
                    let mb = b.iter().filter(|&&s| s >= t).count();
                    if ma >= r && mb >= r {
                        fooled += 1;
                    }
                }
                if fooled >= c {
                    count += 1;
                }
            }
            cells[r - 1][c - 1] = count as f64 / n as f64;
        }
    }
    cells
}

fn map_oracle(gate: &mut Gate) -> Outcome {
    let start = Instant::now();
    let outcome = |id: u32, matched: &[(u32, u32)]| AttackOutcome {
        pair_id: id,
        variant_id: 0,
        matched: matched.to_vec(),
    };
    let fixture = map_matrix(
        &[outcome(0, &[(2, 2), (2, 2)]), outcome(1, &[(1, 1), (0, 2)])],
        2,
        2,
    )
    .map_err(|e| e.to_string())?;
    ensure(
        fixture.cells == vec![vec![1.0, 0.5], vec![0.5, 0.5]],
        || format!("fixture gave {:?}", fixture.cells),
    )?;
    gate.matrices.push(fixture);

    let mut rng = ChaCha8Rng::seed_from_u64(0x0A11);
    for i in 0..500 {
        let inst = micro_instance(&mut rng);
        let table =
            AttemptTable::build(&inst.sets, &inst.pairs, inst.r_max).map_err(|e| e.to_string())?;
        let outcomes = table
            .outcomes(&inst.thresholds)
            .map_err(|e| e.to_string())?;
        let m =
            map_matrix(&outcomes, inst.r_max, inst.thresholds.len()).map_err(|e| e.to_string())?;
        let expected = naive_map(&inst);
        let same = m.cells.len() == expected.len()
            && m.cells
                .iter()
                .flatten()
                .zip(expected.iter().flatten())
                .all(|(x, y)| x.to_bits() == y.to_bits());
        ensure(same, || {
            format!("instance {i}: {:?} vs oracle {expected:?}", m.cells)
        })?;
        gate.matrices.push(m);
    }
    within(start.elapsed(), 10.0, "suite")?;
    Ok(
        "500 micro-instances bit-exact against the triple loop; fixture [[1.0,0.5],[0.5,0.5]]"
            .into(),
    )
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

fn end_to_end(gate: &mut Gate, dir_a: &Path, dir_b: &Path) -> Outcome {
    let run = |dir: &Path| -> Result<Duration, String> {
        let cfg = ExperimentConfig {
            output_dir: dir.to_path_buf(),
            ..ExperimentConfig::default()
        };
        let start = Instant::now();
        pipeline::run_all(cfg).map_err(|e| e.to_string())?;
        Ok(start.elapsed())
    };
    let first = run(dir_a)?;
    within(first, 120.0, "default pipeline")?;

    let map: MapArtifact =
        report::read_json(&dir_a.join(report::MAP_JSON)).map_err(|e| e.to_string())?;
    ensure(map.rows == 3 && map.cols == 4, || {
        format!("MAP shape {}x{}", map.rows, map.cols)
    })?;
    let (m11, m34) = (map.cells[0][0], map.cells[2][3]);
    ensure(m11 >= m34 && m34 >= 0.0, || {
        format!("MAP[1,1]={m11} MAP[3,4]={m34}")
    })?;
    gate.matrices.push(MapMatrix {
        cells: map.cells.clone(),
        n_morphs: map.n_morphs,
    });

    let summary: Vec<ScoreSummary> =
        report::read_json(&dir_a.join(report::SCORE_SUMMARY_JSON)).map_err(|e| e.to_string())?;
    for s in &summary {
        ensure(
            s.mated_mean > s.morph_mean && s.morph_mean > s.nonmated_mean,
            || {
                format!(
                    "{}: mated {} morph {} non-mated {}",
                    s.frs_name, s.mated_mean, s.morph_mean, s.nonmated_mean
                )
            },
        )?;
    }

    let mut cfg = ExperimentConfig {
        output_dir: dir_a.to_path_buf(),
        ..ExperimentConfig::default()
    };
    cfg.sweep.lo = 0.0;
    cfg.sweep.hi = 1.0;
    cfg.sweep.steps = 11;
    let mut p = Pipeline::new(cfg).map_err(|e| e.to_string())?;
    let sweep = p.sweep_artifact().map_err(|e| e.to_string())?;
    let trace: Vec<f64> = sweep.points.iter().map(|pt| pt.map_value).collect();
    ensure(trace.len() == 11 && (sweep.r, sweep.c) == (3, 4), || {
        "sweep shape".into()
    })?;
    ensure(trace.windows(2).all(|w| w[1] <= w[0]), || {
        format!("MAP(3,4) trace {trace:?}")
    })?;
    let table = p.attempt_table().map_err(|e| e.to_string())?;
    for pt in &sweep.points {
        let outcomes = table.outcomes(&pt.thresholds).map_err(|e| e.to_string())?;
        for agg in [VariantAggregation::PerVariant, VariantAggregation::Best] {
            gate.matrices
                .push(map_with(&outcomes, 3, 4, agg).map_err(|e| e.to_string())?);
        }
    }

    let second = run(dir_b)?;
    within(second, 120.0, "default pipeline rerun")?;
    let (sa, sb) = (snapshot(dir_a), snapshot(dir_b));
    ensure(sa.keys().eq(sb.keys()), || "artifact sets differ".into())?;
    let differing: Vec<&String> = sa
        .iter()
        .filter(|(k, v)| &sb[*k] != *v)
        .map(|(k, _)| k)
        .collect();
    ensure(differing.is_empty(), || {
        format!("rerun differs in {differing:?}")
    })?;

    Ok(format!(
        "MAP[1,1]={m11:.2} >= MAP[3,4]={m34:.2}; morph mean between mated and non-mated on {} FRS; sweep MAP(3,4) {:?}; {} artifacts byte-identical; run {:.1}s",
        summary.len(),
        trace,
        sa.len(),
        first.as_secs_f64()
    ))
}

fn variant_study(_: &mut Gate, dir: &Path) -> Outcome {
    let cfg = ExperimentConfig {
        output_dir: dir.to_path_buf(),
        ..ExperimentConfig::default()
    };
    let objective = cfg.variants.objective;
    let mut p = Pipeline::new(cfg).map_err(|e| e.to_string())?;
    let (study, resample, corr) = p.variant_study().map_err(|e| e.to_string())?;
    ensure(study.n_variants() == 100, || {
        format!("{} variants", study.n_variants())
    })?;
    let values = study.objective_values(objective).unwrap();
    let mut running = f64::NEG_INFINITY;
    for (k, (&v, &t)) in values.iter().zip(&resample.trace).enumerate() {
        running = running.max(v);
        ensure(t == running, || {
            format!("trace[{k}] = {t}, running max {running}")
        })?;
    }
    ensure(resample.trace.windows(2).all(|w| w[1] >= w[0]), || {
        "trace decreases".into()
    })?;
    let n = corr.entries.len();
    for i in 0..n {
        ensure(corr.entries[i][i] == 1.0, || {
            format!("diagonal {i} = {}", corr.entries[i][i])
        })?;
        for j in 0..n {
            ensure(corr.entries[i][j] == corr.entries[j][i], || {
                format!("asymmetric at ({i},{j})")
            })?;
        }
    }
    let min_off = corr.min_off_diagonal().unwrap();
    ensure(min_off > 0.0, || format!("min off-diagonal {min_off}"))?;
    let fixture: f64 = pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
    ensure((fixture - 0.98198).abs() <= 1e-5, || {
        format!("pearson fixture {fixture}")
    })?;
    Ok(format!(
        "100 variants; trace non-decreasing ({:.4} -> {:.4}); correlation symmetric, unit diagonal, min off-diagonal {min_off:.3}; pearson fixture {fixture:.5}",
        resample.trace[0],
        resample.best_value
    ))
}

fn btsf_roundtrip(_: &mut Gate, dir: &Path) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xB75F);
    let dim = 16;
    let mut keys: Vec<(u32, u32, Role)> = Vec::new();
    while keys.len() < 1000 {
        let key = (
            rng.random_range(0..200u32),
            rng.random::<u32>(),
            [Role::Reference, Role::Probe, Role::MorphVariant][rng.random_range(0..3)],
        );
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let special = [
        0.0f32,
        -0.0,
        f32::MIN_POSITIVE / 4.0,
        f32::MAX,
        f32::MIN,
        f32::EPSILON,
    ];
    let records: Vec<TemplateRecord> = keys
        .iter()
        .enumerate()
        .map(|(i, &(subject_id, sample_id, role))| TemplateRecord {
            subject_id,
            sample_id,
            role,
            vector: (0..dim)
                .map(|j| {
                    if i < special.len() && j == 0 {
                        return special[i];
                    }
                    loop {
                        let x = f32::from_bits(rng.random::<u32>());
                        if x.is_finite() {
                            return x;
                        }
                    }
                })
                .collect(),
        })
        .collect();
    let path = dir.join("roundtrip.btsf");
    write_store(&path, "roundtrip", dim, &records).map_err(|e| e.to_string())?;
    let back = read_store(&path).map_err(|e| e.to_string())?;
    ensure(back.frs_name == "roundtrip" && back.dim == dim, || {
        "header mismatch".into()
    })?;
    ensure(back.records.len() == records.len(), || {
        "record count mismatch".into()
    })?;
    for (x, y) in records.iter().zip(&back.records) {
        ensure(x.key() == y.key(), || {
            format!("key {:?} vs {:?}", x.key(), y.key())
        })?;
        let bits = |v: &[f32]| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        ensure(bits(&x.vector) == bits(&y.vector), || {
            format!("bits differ for {:?}", x.key())
        })?;
    }
    let bytes = std::fs::read(&path).unwrap();
    ensure(
        encode_store(&back.frs_name, back.dim, &back.records).unwrap() == bytes,
        || "re-encoding differs".into(),
    )?;

    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let load = |name: &str| decode_store(&std::fs::read(fixtures.join(name)).unwrap());
    let valid = load("valid.btsf").map_err(|e| e.to_string())?;
    ensure(valid.records.len() == 3 && valid.dim == 4, || {
        "valid fixture".into()
    })?;
    type Check = fn(&Error) -> bool;
    let expectations: [(&str, Check); 6] = [
        (
            "bad_magic.btsf",
            |e| matches!(e, Error::BadMagic(m) if m == b"XTSF"),
        ),
        ("bad_version.btsf", |e| {
            matches!(e, Error::UnsupportedVersion(2))
        }),
        ("truncated.btsf", |e| {
            matches!(
                e,
                Error::TruncatedFile {
                    declared: 10,
                    available: 9
                }
            )
        }),
        ("short_header.btsf", |e| {
            matches!(e, Error::MalformedStore(_))
        }),
        ("nan_value.btsf", |e| matches!(e, Error::NonFiniteValue)),
        ("dim_one.btsf", |e| matches!(e, Error::DimTooSmall(1))),
    ];
    for (name, expected) in expectations {
        match load(name) {
            Err(e) if expected(&e) => {}
            other => return Err(format!("{name}: unexpected {other:?}")),
        }
    }
    Ok("1000 random records bit-exact incl. -0.0 and subnormals; 6 corrupted fixtures rejected as specified".into())
}

fn map_monotonicity(gate: &mut Gate) -> Outcome {
    ensure(gate.matrices.len() > 500, || {
        format!("only {} matrices collected", gate.matrices.len())
    })?;
    let violations: usize = gate
        .matrices
        .iter()
        .map(|m| m.monotonicity_violations())
        .sum();
    ensure(violations == 0, || format!("{violations} violations"))?;
    Ok(format!("{} matrices, 0 violations", gate.matrices.len()))
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        return;
    }
    let tmp_a = tempfile::tempdir().unwrap();
    let tmp_b = tempfile::tempdir().unwrap();
    let mut gate = Gate::default();
    println!("acceptance criteria");
    gate.run("slerp geometry", slerp_geometry);
    gate.run("calibration bound", calibration_bound);
    gate.run("map oracle equivalence", map_oracle);
    gate.run("end-to-end synthetic run", |g| {
        end_to_end(g, tmp_a.path(), tmp_b.path())
    });
    gate.run("variant study", |g| variant_study(g, tmp_a.path()));
    gate.run("btsf round-trip", |g| btsf_roundtrip(g, tmp_b.path()));
    gate.run("map monotonicity", map_monotonicity);
    if gate.failures > 0 {
        println!("{} criteria failed", gate.failures);
        std::process::exit(1);
    }
    println!("all criteria passed");
}
