//! Acceptance gate: ten numbered criteria, one PASS/FAIL line each.
//!
//! Runs without the libtest harness so the summary lines are always shown.
//! Exits non-zero if any criterion fails.

// `require!(a <= b)` negates float comparisons so that NaN fails.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use prospect::agent::backend::MockBackend;
use prospect::agent::{parse_assessment, AgentContext, PromptSet, ToolGraph};
use prospect::dataset::{preprocess, synthesize_dataset, Setting, SettingConfig, SynthConfig};
use prospect::decision::{decide_scores, fit_weights, simplex_grid, FitConfig, Optimizer, WeightVector};
use prospect::evaluate::{compute_metrics, random_baseline, roc_auc};
use prospect::raster::{BandId, Extent, Raster};
use prospect::signature::{builtin_registry, SignatureRegistry};

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

macro_rules! require {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

// ---------------------------------------------------------------- 1

/// Scalar per-pixel reference with the shipped constants written out.
mod reference {
    // branches written out instead of `clamp` to stay independent of the library
    #[allow(clippy::manual_clamp)]
    pub fn unit(x: f64, lo: f64, hi: f64) -> f64 {
        if x.is_nan() {
            return f64::NAN;
        }
        let t = (x - lo) / (hi - lo);
        if t < 0.0 {
            0.0
        } else if t > 1.0 {
            1.0
        } else {
            t
        }
    }

    pub fn clip(x: f64, a: f64, b: f64) -> f64 {
        if x.is_nan() {
            f64::NAN
        } else if x <= a {
            0.0
        } else if x >= b {
            1.0
        } else {
            (x - a) / (b - a)
        }
    }

    /// Raw pixel `[ox, oh, op, al, mg, fe, qa, si]` to `(h, p, s, mpm)`.
    pub fn pixel(raw: [f64; 8]) -> (f64, f64, f64, f64) {
        let ox = unit(raw[0], 1.1, 2.1);
        let oh = unit(raw[1], 2.03, 2.25);
        let op = unit(raw[2], 0.4, 0.9);
        let al = unit(raw[3], 2.0, 2.25);
        let mg = unit(raw[4], 1.05, 1.2);
        let fe = unit(raw[5], 0.1, 2.0);
        let qa = unit(raw[6], 1.0, 1.35);
        let si = unit(raw[7], 0.5, 0.52);
        let h = clip(ox + 2.0 * oh + 4.0 * op, 1.0, 3.0);
        let p = clip(al + oh + mg + 2.0 * fe, 0.6, 1.0);
        let s = clip(ox + qa + 2.0 * si, 1.0, 2.5);
        (h, p, s, (5.0 * h + 3.0 * p + s) * 5.0 / 9.0)
    }
}

const RAW_BANDS: [BandId; 8] = [BandId::Ox, BandId::Oh, BandId::Op, BandId::Al, BandId::Mg, BandId::Fe, BandId::Qa, BandId::Si];

fn same(a: f64, b: f64) -> bool {
    (a.is_nan() && b.is_nan()) || (a - b).abs() <= 1e-9
}

fn preprocessing_oracle() -> Verdict {
    let reg = builtin_registry();
    let n = 64;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut slowest = Duration::ZERO;
    let mut checked = 0usize;
    for _ in 0..100 {
        let mut raw = BTreeMap::new();
        let mut cols: Vec<Vec<f64>> = Vec::new();
        for band in &RAW_BANDS {
            let r = reg.range_of(band).unwrap();
            let span = r.hi - r.lo;
            let values: Vec<f64> = (0..n * n)
                .map(|_| if rng.random_bool(0.01) { f64::NAN } else { rng.random_range(r.lo - 0.2 * span..r.hi + 0.2 * span) })
                .collect();
            raw.insert(band.clone(), Raster::new(band.clone(), n, n, Extent::square(12.0).unwrap(), values.clone()).unwrap());
            cols.push(values);
        }
        let t = Instant::now();
        let d = reg.derive(&raw).map_err(|e| e.to_string())?;
        slowest = slowest.max(t.elapsed());
        #[allow(clippy::needless_range_loop)] // `i` indexes eight columns and four layers
        for i in 0..n * n {
            let px: [f64; 8] = std::array::from_fn(|b| cols[b][i]);
            let (h, p, s, m) = reference::pixel(px);
            let got = [d.hydrothermal.values()[i], d.propylitic.values()[i], d.silicification.values()[i], d.mpm.values()[i]];
            for (g, want) in got.iter().zip([h, p, s, m]) {
                require!(same(*g, want), "pixel {i}: got {g}, reference {want} for {px:?}");
            }
            checked += 1;
        }
    }
    require!(slowest < Duration::from_secs(1), "slowest area took {slowest:?}");
    Ok(format!("{checked} pixels agree within 1e-9; slowest area {slowest:?}"))
}

// ---------------------------------------------------------------- 2

fn registry_constants() -> Verdict {
    let reg = builtin_registry();
    let ranges = [
        (BandId::Geological, 0.0, 1.0),
        (BandId::Ox, 1.1, 2.1),
        (BandId::Oh, 2.03, 2.25),
        (BandId::Op, 0.4, 0.9),
        (BandId::Al, 2.0, 2.25),
        (BandId::Mg, 1.05, 1.2),
        (BandId::Fe, 0.1, 2.0),
        (BandId::Qa, 1.0, 1.35),
        (BandId::Si, 0.5, 0.52),
    ];
    require!(reg.band_ranges.len() == 9, "{} band ranges", reg.band_ranges.len());
    for (band, lo, hi) in ranges {
        let r = reg.range_of(&band).ok_or(format!("no range for {band}"))?;
        require!(r.lo == lo && r.hi == hi, "{band}: [{}, {}] instead of [{lo}, {hi}]", r.lo, r.hi);
    }
    let terms = |s: &prospect::signature::SignatureSpec| s.terms.iter().map(|t| (t.band.clone(), t.weight)).collect::<Vec<_>>();
    require!(
        terms(&reg.hydrothermal) == [(BandId::Ox, 1.0), (BandId::Oh, 2.0), (BandId::Op, 4.0)],
        "hydrothermal {:?}",
        terms(&reg.hydrothermal)
    );
    require!(
        terms(&reg.propylitic) == [(BandId::Al, 1.0), (BandId::Oh, 1.0), (BandId::Mg, 1.0), (BandId::Fe, 2.0)],
        "propylitic {:?}",
        terms(&reg.propylitic)
    );
    require!(
        terms(&reg.silicification) == [(BandId::Ox, 1.0), (BandId::Qa, 1.0), (BandId::Si, 2.0)],
        "silicification {:?}",
        terms(&reg.silicification)
    );
    require!((reg.hydrothermal.out_lo, reg.hydrothermal.out_hi) == (1.0, 3.0), "hydrothermal clip");
    require!((reg.propylitic.out_lo, reg.propylitic.out_hi) == (0.6, 1.0), "propylitic clip");
    require!(reg.silicification.out_lo == 1.0, "silicification clip");
    require!((reg.mpm.w_h, reg.mpm.w_p, reg.mpm.w_s) == (5.0, 3.0, 1.0), "mpm weights");
    require!((reg.geological.raw_weight, reg.geological.signature_weight) == (1.0, 1.0), "geological row");

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("registry.toml");
    std::fs::write(&path, reg.to_toml()).map_err(|e| e.to_string())?;
    let back = SignatureRegistry::load(&path).map_err(|e| e.to_string())?;
    require!(back == reg, "TOML round trip changed the registry");
    Ok("9 ranges, 10 combination weights, 3 map weights match; TOML round trip exact".into())
}

// ---------------------------------------------------------------- 3

fn mpm_dominance() -> Verdict {
    let reg = builtin_registry();
    let ext = Extent::square(1.0).unwrap();
    let grid = |band: BandId, v: f64| Raster::new(band, 1, 1, ext, vec![v]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (h, p, s) = (rng.random_range(0.1..0.8), rng.random_range(0.1..0.8), rng.random_range(0.1..0.8));
        let delta = rng.random_range(0.01..0.15);
        let at = |h: f64, p: f64, s: f64| {
            reg.mpm.build(&grid(BandId::Hydrothermal, h), &grid(BandId::Propylitic, p), &grid(BandId::Silicification, s)).unwrap().values()
                [0]
        };
        let base = at(h, p, s);
        let (dh, dp, ds) = (at(h + delta, p, s) - base, at(h, p + delta, s) - base, at(h, p, s + delta) - base);
        worst = worst.max((dh / ds - 5.0).abs()).max((dp / ds - 3.0).abs()).max((dh / dp - 5.0 / 3.0).abs());
    }
    require!(worst <= 1e-9, "ratio deviates by {worst:e}");
    Ok(format!("5:3:1 over 1000 increments, worst deviation {worst:.1e}"))
}

// ---------------------------------------------------------------- 4

fn random_baseline_band() -> Verdict {
    let t = Instant::now();
    let r = random_baseline(73, 539, 1000, 2024).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let auc = r.roc_auc.unwrap_or(f64::NAN);
    let detail = format!("Pos.F1 {:.2}, Avg.F1 {:.2}, ROC-AUC {:.2}, MCC {:.2} in {elapsed:.2?}", r.pos_f1, r.avg_f1, auc, r.mcc);
    require!((r.pos_f1 - 11.9).abs() <= 2.5, "{detail}");
    require!((r.avg_f1 - 50.0).abs() <= 2.0, "{detail}");
    require!((auc - 50.0).abs() <= 3.0, "{detail}");
    require!(r.mcc.abs() <= 5.0, "{detail}");
    require!(elapsed < Duration::from_secs(10), "{detail}");
    Ok(detail)
}

// ---------------------------------------------------------------- 5

/// Metrics straight from their definitions, as fractions.
fn definition_metrics(y: &[u8], p: &[u8]) -> (f64, f64, f64) {
    let count = |a: u8, b: u8| y.iter().zip(p).filter(|(t, q)| **t == a && **q == b).count() as f64;
    let (tp, fp, fn_, tn) = (count(1, 1), count(0, 1), count(1, 0), count(0, 0));
    let f1 = |hit: f64, false_alarm: f64, miss: f64| {
        let precision = if hit + false_alarm > 0.0 { hit / (hit + false_alarm) } else { 0.0 };
        let recall = if hit + miss > 0.0 { hit / (hit + miss) } else { 0.0 };
        if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        }
    };
    let pos = f1(tp, fp, fn_);
    let neg = f1(tn, fn_, fp);
    let denom = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
    let mcc = if denom > 0.0 { (tp * tn - fp * fn_) / denom } else { 0.0 };
    (pos, (pos + neg) / 2.0, mcc)
}

fn pair_count_auc(y: &[u8], s: &[f64]) -> Option<f64> {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, yi) in y.iter().enumerate() {
        for (j, yj) in y.iter().enumerate() {
            if *yi == 1 && *yj == 0 {
                pairs += 1.0;
                wins += if s[i] > s[j] {
                    1.0
                } else if s[i] == s[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    (pairs > 0.0).then(|| wins / pairs)
}

fn metric_oracles() -> Verdict {
    let mut cases = 0usize;
    for n in 1..=8usize {
        for ym in 0u32..1 << n {
            let y: Vec<u8> = (0..n).map(|i| ((ym >> i) & 1) as u8).collect();
            for pm in 0u32..1 << n {
                let p: Vec<u8> = (0..n).map(|i| ((pm >> i) & 1) as u8).collect();
                let r = compute_metrics(&y, &p, None).map_err(|e| e.to_string())?;
                let (pos, avg, mcc) = definition_metrics(&y, &p);
                require!(
                    (r.pos_f1 / 100.0 - pos).abs() < 1e-9 && (r.avg_f1 / 100.0 - avg).abs() < 1e-9 && (r.mcc / 100.0 - mcc).abs() < 1e-9,
                    "y {y:?} p {p:?}: got ({}, {}, {}), definition ({pos}, {avg}, {mcc})",
                    r.pos_f1,
                    r.avg_f1,
                    r.mcc
                );
                cases += 1;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let n = rng.random_range(2..=20);
        let y: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.4))).collect();
        // coarse scores so ties are common
        let s: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..8)) / 2.0).collect();
        let got = roc_auc(&y, &s).map_err(|e| e.to_string())?;
        let want = pair_count_auc(&y, &s);
        match (got, want) {
            (Some(g), Some(w)) => require!((g - w).abs() < 1e-9, "auc {g} vs pair count {w} for {y:?} {s:?}"),
            (None, None) => {}
            other => return Err(format!("auc definedness differs: {other:?}")),
        }
    }
    Ok(format!("{cases} label/prediction pairs and 1000 score vectors agree"))
}

// ---------------------------------------------------------------- 6

fn prospect(dir: &Path, args: &[&str]) -> Result<String, String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_prospect"));
    for (k, _) in std::env::vars() {
        if k.starts_with("PROSPECT_") {
            cmd.env_remove(k);
        }
    }
    let out = cmd.current_dir(dir).args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("prospect {} exited {:?}: {}", args.join(" "), out.status.code(), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn end_to_end() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let t = Instant::now();
    prospect(d, &["synth", "--out", "ds", "--positives", "20", "--negatives", "180", "--noise", "0.1", "--seed", "7"])?;
    prospect(d, &["preprocess", "--manifest", "ds/manifest.json"])?;
    prospect(
        d,
        &[
            "agent",
            "run",
            "--manifest",
            "ds/manifest.json",
            "--backend",
            "oracle",
            "--mode",
            "agents",
            "--setting",
            "standard",
            "--out",
            "run",
        ],
    )?;
    prospect(d, &["fit-weights", "--manifest", "ds/manifest.json", "--runs", "run/runs.jsonl", "--out", "weights.json", "--seed", "7"])?;
    let json =
        prospect(d, &["evaluate", "--manifest", "ds/manifest.json", "--runs", "run/runs.jsonl", "--weights", "weights.json", "--json"])?;
    let elapsed = t.elapsed();
    let v: serde_json::Value = serde_json::from_str(&json).map_err(|e| e.to_string())?;
    let rows = v["rows"].as_array().ok_or("no rows")?;
    let row = |s: &str| rows.iter().find(|r| r["strategy"] == s).ok_or(format!("no {s} row"));
    let mcc = |s: &str| row(s).and_then(|r| r["report"]["mcc"].as_f64().ok_or(format!("no mcc for {s}")));
    let (auto, mean, local) = (mcc("automatic")?, mcc("mean")?, mcc("local")?);
    let detail = format!("MCC automatic {auto:.2} >= mean {mean:.2} >= local {local:.2}; {elapsed:.1?}");
    require!(v["evaluated"] == 200, "{} areas evaluated", v["evaluated"]);
    require!(auto >= mean && mean >= local, "{detail}");
    for r in rows {
        require!(r["report"]["mismatch_rate"].as_f64() == Some(0.0), "mismatch rate {} for {}", r["report"]["mismatch_rate"], r["name"]);
    }
    require!(elapsed < Duration::from_secs(60), "{detail}");
    Ok(detail + "; mismatch 0% for every strategy")
}

// ---------------------------------------------------------------- 7

fn dag_ordering() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = SynthConfig { positives: 2, negatives: 3, size_px: 16, ..Default::default() };
    let registry = SignatureRegistry::default();
    let mut m = synthesize_dataset(dir.path(), &cfg).map_err(|e| e.to_string())?;
    preprocess(&mut m, dir.path(), &registry, false).map_err(|e| e.to_string())?;
    let prompts = PromptSet::builtin();
    let graph = ToolGraph::builtin();
    let mut violations = Vec::new();
    for run in 0..100u64 {
        let backend = MockBackend::new().with_latency(0, 6, run);
        let ctx = AgentContext { backend: &backend, prompts: &prompts, registry: &registry, max_retries: 3 };
        let area = &m.areas[run as usize % m.areas.len()];
        let setting = [Setting::Easy, Setting::Standard, Setting::Hard][run as usize % 3];
        let r = ctx.run_agents(area, dir.path(), &graph, &SettingConfig::new(setting)).map_err(|e| e.to_string())?;
        require!(r.assessments.len() == 6, "run {run}: {} assessments", r.assessments.len());
        violations.extend(r.record.dag_violations(&graph));
    }
    require!(violations.is_empty(), "{} violations, first: {}", violations.len(), violations[0]);
    Ok("100 jittered runs, zero dependency violations".into())
}

// ---------------------------------------------------------------- 8

fn mcc_of(data: &[(Vec<f64>, u8)], w: &WeightVector) -> f64 {
    let y: Vec<u8> = data.iter().map(|d| d.1).collect();
    let p: Vec<u8> = data.iter().map(|d| decide_scores(&d.0, w, 3.0).unwrap().label).collect();
    compute_metrics(&y, &p, None).unwrap().mcc / 100.0
}

fn optimizer_sanity() -> Verdict {
    // two partially informative criteria and one pure-noise criterion
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let data: Vec<(Vec<f64>, u8)> = (0..240)
        .map(|i| {
            let y = u8::from(i % 4 == 0);
            let shift = f64::from(y);
            let s1 = (1.8 + 1.6 * shift + rng.random_range(-1.2..1.2f64)).clamp(0.0, 5.0);
            let s2 = (2.0 + 1.2 * shift + rng.random_range(-1.0..1.0f64)).clamp(0.0, 5.0);
            let s3 = rng.random_range(0.0..5.0f64);
            (vec![s1, s2, s3], y)
        })
        .collect();
    let best =
        simplex_grid(3, 20).into_iter().map(|g| mcc_of(&data, &WeightVector::normalized(g).unwrap())).fold(f64::NEG_INFINITY, f64::max);
    let run = |optimizer| {
        let fit = fit_weights(&data, &FitConfig { budget: 64, seed: 8, optimizer, ..Default::default() }).map_err(|e| e.to_string())?;
        Ok::<_, String>(mcc_of(&data, &fit.weights))
    };
    let bo = run(Optimizer::Bayesian)?;
    let rs = run(Optimizer::RandomSearch)?;
    let detail = format!("grid optimum MCC {best:.4}; model-based {bo:.4}; random search {rs:.4}");
    require!(bo >= best * 0.98, "{detail}");
    require!(rs >= best * 0.95, "{detail}");
    Ok(detail)
}

// ---------------------------------------------------------------- 9

const WORDS: [&str; 12] =
    ["strong", "alteration", "ring", "weak", "signal", "north", "quartz", "halo", "iron", "diffuse", "zone", "contact"];
const AREAS: [&str; 6] = ["northeast part", "centre", "western margin", "south-central zone", "eastern rim", "northwest corner"];

struct Case {
    text: String,
    score: f64,
    preserved: bool,
}

fn well_formed(rng: &mut ChaCha8Rng) -> (Vec<(usize, String, String)>, f64) {
    let score = f64::from(rng.random_range(0..=50)) / 10.0;
    let score_text = if score.fract() == 0.0 && rng.random_bool(0.5) { format!("{}", score as i64) } else { format!("{score:.1}") };
    let n_areas = rng.random_range(0..=3);
    let areas = if n_areas == 0 {
        "none".to_string()
    } else {
        (0..n_areas).map(|_| AREAS[rng.random_range(0..AREAS.len())]).collect::<Vec<_>>().join("; ")
    };
    let words: Vec<&str> = (0..rng.random_range(3..12)).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect();
    let fields = vec![
        (0, "Score".to_string(), score_text),
        (1, "Favorable Areas".to_string(), areas),
        (2, "Explanation".to_string(), words.join(" ")),
    ];
    (fields, score)
}

/// Rewrites the value of the field with the given id, if it is still present.
fn field(fields: &mut [(usize, String, String)], id: usize, f: impl FnOnce(&str) -> String) {
    if let Some(x) = fields.iter_mut().find(|x| x.0 == id) {
        x.2 = f(&x.2);
    }
}

fn mutate(rng: &mut ChaCha8Rng) -> Case {
    let (mut fields, score) = well_formed(rng);
    let mut preserved = true;
    let mut prefix = String::new();
    let mut suffix = String::new();
    let mut sep = ":".to_string();
    let mut newline = "\n";
    let mut decorate: Option<(&str, &str)> = None;
    for _ in 0..rng.random_range(1..=3) {
        match rng.random_range(0..16) {
            0 => fields.iter_mut().for_each(|f| f.1 = f.1.to_uppercase()),
            1 => fields.iter_mut().for_each(|f| f.1 = f.1.to_lowercase()),
            2 => decorate = Some(("**", "**")),
            3 => decorate = Some(("- ", "")),
            4 => decorate = Some(("### ", "")),
            5 => sep = [" :", ":  ", " = ", "="][rng.random_range(0..4)].to_string(),
            6 => newline = "\r\n",
            7 => prefix = "Here is my assessment of the image.\n\n".into(),
            8 => suffix = "\n\nLet me know if you need more detail.".into(),
            9 => {
                let n = fields.len();
                fields.swap(rng.random_range(0..n), rng.random_range(0..n));
            }
            10 => field(&mut fields, 0, |v| format!("{v} / 5")),
            11 => field(&mut fields, 0, |v| format!("**{v}**")),
            12 => field(&mut fields, 2, |v| format!("{v}\n  continued: with ünïcødé ✓ detail")),
            13 => {
                // destroy the score
                preserved = false;
                let junk = ["high", "", "7", "-2", "n/a"][rng.random_range(0..5)];
                field(&mut fields, 0, |_| junk.to_string());
            }
            14 => {
                preserved = false;
                let i = rng.random_range(0..3);
                fields.retain(|f| f.0 != i || i == 1);
                if i == 1 {
                    preserved = true;
                }
            }
            _ => {
                preserved = false;
                suffix.push_str(&"\u{0}\u{7f}\u{feff}garbage".repeat(rng.random_range(1..3)));
                prefix.insert(0, '\u{202e}');
            }
        }
    }
    let lines: Vec<String> = fields
        .iter()
        .enumerate()
        .map(|(k, (_, label, value))| {
            let label = match decorate {
                Some((a, b)) => format!("{a}{label}{b}"),
                None => label.clone(),
            };
            let numbered = if rng.random_bool(0.1) { format!("{}. ", k + 1) } else { String::new() };
            format!("{numbered}{label}{sep} {value}")
        })
        .collect();
    let mut text = format!("{prefix}{}{suffix}", lines.join(newline));
    if !preserved && rng.random_bool(0.3) {
        // random truncation
        let cut = rng.random_range(0..=text.len());
        let cut = (0..=cut).rev().find(|&c| text.is_char_boundary(c)).unwrap_or(0);
        text.truncate(cut);
    }
    Case { text, score, preserved }
}

fn protocol_fuzz() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut kept, mut kept_ok, mut broken, mut broken_err) = (0, 0, 0, 0);
    for i in 0..10_000 {
        let case = mutate(&mut rng);
        let parsed = catch_unwind(|| parse_assessment(&case.text)).map_err(|_| format!("case {i} panicked: {:?}", case.text))?;
        if case.preserved {
            kept += 1;
            if parsed.as_ref().is_ok_and(|a| (a.score - case.score).abs() < 1e-12 && !a.explanation.is_empty()) {
                kept_ok += 1;
            }
        } else {
            broken += 1;
            broken_err += usize::from(parsed.is_err());
        }
    }
    let rate = 100.0 * kept_ok as f64 / kept as f64;
    let detail =
        format!("{kept_ok}/{kept} field-preserving mutations parse ({rate:.2}%); {broken_err}/{broken} others rejected with typed errors");
    require!(rate >= 95.0, "{detail}");
    Ok(detail)
}

// ---------------------------------------------------------------- 10

fn non_reproducibility_caveat() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    prospect(d, &["synth", "--out", "ds", "--positives", "3", "--negatives", "9", "--size", "16"])?;
    prospect(d, &["preprocess", "--manifest", "ds/manifest.json"])?;
    prospect(d, &["agent", "run", "--manifest", "ds/manifest.json", "--backend", "oracle", "--out", "run"])?;
    let report = prospect(d, &["report", "--manifest", "ds/manifest.json", "--runs", "run/runs.jsonl"])?;
    require!(report.contains("Caveat: no live multimodal model was queried"), "oracle-only report lacks the caveat");
    let runs = std::fs::read_to_string(d.join("run/runs.jsonl")).map_err(|e| e.to_string())?;
    std::fs::write(d.join("live.jsonl"), runs.replace("\"backend\":\"oracle\"", "\"backend\":\"http\"")).map_err(|e| e.to_string())?;
    let live = prospect(d, &["report", "--manifest", "ds/manifest.json", "--runs", "live.jsonl"])?;
    require!(!live.contains("Caveat"), "report with a live backend still prints the caveat");
    Ok("reports without a live backend carry the caveat; reports with one do not".into())
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("preprocessing matches the scalar reference", preprocessing_oracle),
        ("builtin constants", registry_constants),
        ("prospectivity weight dominance", mpm_dominance),
        ("random-choice baseline", random_baseline_band),
        ("metric oracles", metric_oracles),
        ("end-to-end synthetic run", end_to_end),
        ("tool dependency order", dag_ordering),
        ("optimizer sanity", optimizer_sanity),
        ("protocol robustness", protocol_fuzz),
        ("explicit non-reproducibility", non_reproducibility_caveat),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match verdict {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
