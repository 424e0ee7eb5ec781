//! End-to-end acceptance checks. Runs as a plain binary so every criterion
//! prints a verdict line; exits non-zero when any criterion fails.
//!
//! `TIST_ACCEPT=1,4` runs a subset.

use std::collections::HashSet;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng as _;
use tist::cli::{cmd_ablate, AblateArgs, ExperimentArgs};
use tist::data::{generate_synthetic, make_folds, Sample, SynthConfig};
use tist::losses::{lambda_at, overall_loss, pseudo_supervised_loss, supervised_loss, LossWeights, RampSchedule};
use tist::model::{ModelConfig, SegmentationNetwork, UNet};
use tist::pseudolabel::{st_pseudo_labels, tist_pseudo_labels, ProbabilityMap, PseudoLabelMap};
use tist::report::{dice_score, relative_dice};
use tist::rng::derive_rng;
use tist::trainer::{read_metrics, step_gradients, train, Method, MetricRecord, PreparedBatch, RunOptions, TrainConfig, TrainData, LAST_CHECKPOINT, METRICS_FILE};
use tist::{LabelMap, IGNORE_INDEX};
use tist_oracles::{fd_gradient_check_floor, naive_st_pixel, naive_tist_pixel, set_dice};

type Verdict = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

/// Random distribution over `c` classes; `sharp` pushes mass onto one class.
fn random_probs(rng: &mut impl rand::Rng, c: usize, sharp: f64) -> Vec<f64> {
    let logits: Vec<f64> = (0..c).map(|_| rng.random_range(-1.0..1.0) * sharp).collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// A distribution whose largest entry is exactly `top`.
fn pinned_probs(rng: &mut impl rand::Rng, c: usize, top: f64) -> Vec<f64> {
    let mut p = vec![(1.0 - top) / (c - 1) as f64; c];
    p[rng.random_range(0..c)] = top;
    p
}

fn criterion_1() -> Verdict {
    let mut rng = derive_rng(101, &[]);
    let combos: Vec<(usize, f64)> = [2, 3, 5]
        .iter()
        .flat_map(|&c| [0.6, 0.85, 0.95].map(move |t| (c, t)))
        .collect();
    let total = 10_000;
    let mut checked = 0;
    let mut disagreements = 0;
    let mut kept = 0;
    for (k, &(c, tau)) in combos.iter().enumerate() {
        let n = total / combos.len() + usize::from(k < total % combos.len());
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        for i in 0..n {
            let pick = |rng: &mut tist::rng::Rng, i: usize| match i % 10 {
                0 => pinned_probs(rng, c, tau),
                1 => vec![1.0 / c as f64; c],
                _ => {
                    let sharp = rng.random_range(0.5..8.0);
                    random_probs(rng, c, sharp)
                }
            };
            a.push(pick(&mut rng, i));
            b.push(pick(&mut rng, i / 3));
        }
        let ma = ProbabilityMap::<f64>::from_pixels(1, n, &a).map_err(|e| e.to_string())?;
        let mb = ProbabilityMap::<f64>::from_pixels(1, n, &b).map_err(|e| e.to_string())?;
        let got = tist_pseudo_labels(&ma, &mb, tau).map_err(|e| e.to_string())?;
        for px in 0..n {
            let want = naive_tist_pixel(&a[px], &b[px], tau).map_or(IGNORE_INDEX, |k| k as u8);
            let label = got.labels.labels().data()[px];
            let mask = got.mask.data()[px];
            if label != want || (mask == 1) != (want != IGNORE_INDEX) {
                disagreements += 1;
            }
            kept += usize::from(want != IGNORE_INDEX);
            checked += 1;
        }
    }
    check(disagreements == 0, format!("{disagreements} disagreements"))?;
    check(kept > 0 && kept < checked, "degenerate sample")?;
    Ok(format!("{checked} pixels, 0 disagreements, {kept} retained"))
}

fn criterion_2() -> Verdict {
    let mut rng = derive_rng(202, &[]);
    let (h, w) = (8, 8);
    let mut strict_pairs = 0;
    for pair in 0..1000 {
        let c = rng.random_range(2..=5);
        let tau = rng.random_range(0.5..0.99);
        let mut pa = Vec::with_capacity(h * w);
        let mut pb = Vec::with_capacity(h * w);
        for _ in 0..h * w {
            for out in [&mut pa, &mut pb] {
                let sharp = rng.random_range(0.5..10.0);
                out.push(random_probs(&mut rng, c, sharp));
            }
        }
        let a = ProbabilityMap::<f64>::from_pixels(h, w, &pa).map_err(|e| e.to_string())?;
        let b = ProbabilityMap::<f64>::from_pixels(h, w, &pb).map_err(|e| e.to_string())?;
        let ti = tist_pseudo_labels(&a, &b, tau).map_err(|e| e.to_string())?;
        let st = st_pseudo_labels(&b, tau).map_err(|e| e.to_string())?;
        check(ti.mask.is_subset_of(&st.mask), format!("pair {pair}: mask not a subset"))?;
        if ti.mask.count() < st.mask.count() {
            strict_pairs += 1;
        }
    }
    // Constructed case: the transformed view is sure, the original is not.
    let tau = 0.85;
    let sure = vec![0.97, 0.03];
    let unsure = vec![0.55, 0.45];
    let a = ProbabilityMap::<f64>::from_pixels(1, 2, &[unsure.clone(), sure.clone()]).map_err(|e| e.to_string())?;
    let b = ProbabilityMap::<f64>::from_pixels(1, 2, &[sure.clone(), sure.clone()]).map_err(|e| e.to_string())?;
    let ti = tist_pseudo_labels(&a, &b, tau).map_err(|e| e.to_string())?;
    let st = st_pseudo_labels(&b, tau).map_err(|e| e.to_string())?;
    check(ti.mask.data() == [0, 1] && st.mask.data() == [1, 1], "constructed case not strict")?;
    check(naive_st_pixel(&sure, tau) == Some(0) && naive_tist_pixel(&unsure, &sure, tau).is_none(), "oracle disagrees on constructed case")?;
    Ok(format!("1000 pairs subset-ok, {strict_pairs} strictly smaller, constructed case strict"))
}

fn criterion_3() -> Verdict {
    let mut worst: f64 = 0.0;
    for total in [2usize, 10, 30, 100] {
        let s = RampSchedule::new(total).map_err(|e| e.to_string())?;
        let mut prev = f64::NEG_INFINITY;
        for e in 0..=total {
            let l = lambda_at(&s, e).map_err(|e| e.to_string())?;
            let want = (-5.0 * (1.0 - e as f64 / total as f64)).exp();
            worst = worst.max((l - want).abs());
            check(l > prev, format!("E={total}: not increasing at e={e}"))?;
            prev = l;
        }
        check(lambda_at(&s, total).map_err(|e| e.to_string())? == 1.0, format!("E={total}: lambda(E) != 1"))?;
        if total % 2 == 0 {
            let mid = lambda_at(&s, total / 2).map_err(|e| e.to_string())?;
            check((mid - (-2.5f64).exp()).abs() < 1e-12, format!("E={total}: mid value {mid}"))?;
        }
        let start = lambda_at(&s, 0).map_err(|e| e.to_string())?;
        check((start - (-5.0f64).exp()).abs() < 1e-12, format!("E={total}: start value {start}"))?;
    }
    check(worst < 1e-12, format!("max error {worst:e}"))?;
    Ok(format!("max |error| {worst:.1e}; exp(-5), exp(-2.5), 1 at e=0, E/2, E"))
}

fn tiny_batch() -> Result<(PreparedBatch, TrainConfig), String> {
    let synth = SynthConfig {
        source_count: 4,
        target_count: 4,
        height: 8,
        width: 8,
        ..Default::default()
    };
    let (s, t) = generate_synthetic(&synth, 4).map_err(|e| e.to_string())?;
    let src: Vec<&Sample> = s.samples.iter().take(2).collect();
    let tgt: Vec<&Sample> = t.samples.iter().take(2).collect();
    let cfg = TrainConfig {
        model: ModelConfig { base_width: 2, ..Default::default() },
        ..Default::default()
    };
    let batch = PreparedBatch::prepare(&mut derive_rng(5, &[]), &cfg.augment, &src, &tgt).map_err(|e| e.to_string())?;
    Ok((batch, cfg))
}

fn criterion_4() -> Verdict {
    const EPS: f64 = 1e-5;
    // f64 rounding in the loss (~1e-15 relative) over a 1e-5 step leaves
    // ~1e-10 of noise; partials below 1e-6 are bounded absolutely instead.
    const REL_FLOOR: f64 = 1e-6;
    const ABS_TOL: f64 = 1e-8;
    let (batch, cfg) = tiny_batch()?;
    let mut net = UNet::<f64>::new(cfg.model.clone(), &mut derive_rng(9, &[])).map_err(|e| e.to_string())?;
    // Offset small tensors (biases, norms) so ReLU kinks sit away from the probes.
    for p in net.params_mut() {
        if p.len() <= 16 {
            for (i, v) in p.iter_mut().enumerate() {
                *v += 0.05 * ((i % 3) as f64 - 0.5);
            }
        }
    }
    let n_params = net.param_count();
    check(n_params <= 10_000, format!("{n_params} parameters"))?;
    let w = LossWeights::default();
    let lambda = 0.7;
    // Put the threshold in the widest gap between neighbouring confidences
    // (both views, middle half) so the mask is mixed and no probe flips it.
    let mut conf: Vec<f64> = Vec::new();
    for imgs in [&batch.target_views, &batch.target_clean] {
        for v in net.predict_probs(imgs).map_err(|e| e.to_string())? {
            conf.extend((0..v.pixels()).map(|p| v.max_prob(p)));
        }
    }
    conf.sort_by(f64::total_cmp);
    let n = conf.len();
    let k = (n / 4..3 * n / 4).max_by(|&i, &j| (conf[i + 1] - conf[i]).total_cmp(&(conf[j + 1] - conf[j]))).unwrap_or(n / 2);
    let tau = 0.5 * (conf[k] + conf[k + 1]);

    let base = step_gradients(&net, &batch, Method::Tist, tau, lambda, &w, None).map_err(|e| e.to_string())?;
    let retained = base.metrics.retained_fraction;
    check(retained > 0.0 && retained < 1.0, format!("retained fraction {retained}"))?;
    check(base.metrics.ps_loss > 0.0, "no pseudo-supervised term")?;
    let analytic = base.grads.flatten();
    let params = net.flat_params();
    // Pseudo-labels are constants of the step: the probe loss reuses the
    // ones chosen at the base point and differentiates everything else.
    let fixed: Vec<&PseudoLabelMap> = base.pseudo.iter().map(|p| &p.labels).collect();
    let labels: Vec<&LabelMap> = batch.source_labels.iter().collect();
    let probs = |n: &UNet<f64>, imgs: &[tist::ImageTensor]| -> Vec<ProbabilityMap<f64>> {
        n.forward_batch(imgs).unwrap().iter().map(ProbabilityMap::from_logits).collect()
    };
    let mut probe = net.clone();
    let coords: Vec<usize> = (0..params.len()).collect();
    let report = fd_gradient_check_floor(
        |p| {
            probe.set_flat_params(p).unwrap();
            let sup = supervised_loss(&probs(&probe, &batch.source_images), &labels, &w).unwrap();
            let ps = pseudo_supervised_loss(&probs(&probe, &batch.target_views), &fixed).unwrap();
            overall_loss(sup.value, ps.value, lambda)
        },
        &params,
        &analytic,
        EPS,
        &coords,
        REL_FLOOR,
    )
    .map_err(|e| e.to_string())?;
    check(report.max_rel_error < 1e-4 && report.max_abs_error < ABS_TOL, format!("finite differences: {report}"))?;

    // Perturb the untransformed-view probabilities without moving any pixel
    // across the threshold; gradients must not move.
    let clean = net.predict_probs(&batch.target_clean).map_err(|e| e.to_string())?;
    let mut rng = derive_rng(44, &[]);
    let perturbed: Vec<ProbabilityMap<f64>> = clean
        .iter()
        .map(|m| {
            let px: Vec<Vec<f64>> = (0..m.pixels())
                .map(|p| {
                    let v: Vec<f64> = (0..m.classes()).map(|c| m.prob(c, p) * (1.0 + 1e-3 * rng.random_range(-1.0..1.0))).collect();
                    let s: f64 = v.iter().sum();
                    v.iter().map(|x| x / s).collect()
                })
                .collect();
            ProbabilityMap::from_pixels(m.height(), m.width(), &px).unwrap()
        })
        .collect();
    let a = step_gradients(&net, &batch, Method::Tist, tau, lambda, &w, Some(&clean)).map_err(|e| e.to_string())?;
    let b = step_gradients(&net, &batch, Method::Tist, tau, lambda, &w, Some(&perturbed)).map_err(|e| e.to_string())?;
    let same_masks = a.pseudo.iter().zip(&b.pseudo).all(|(x, y)| x.mask == y.mask);
    check(same_masks, "perturbation moved the mask; pick a smaller one")?;
    let drift = a
        .grads
        .flatten()
        .iter()
        .zip(b.grads.flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    check(drift <= 1e-10, format!("gradient drift {drift:e}"))?;
    Ok(format!("{n_params} params, tau {tau:.4}, retained {retained:.2}; {report}; mask-path drift {drift:.1e}"))
}

fn criterion_5() -> Verdict {
    let mut rng = derive_rng(505, &[]);
    let mut empty_empty = 0;
    for case in 0..1000 {
        let density = rng.random_range(0.0..1.0);
        let draw = |rng: &mut tist::rng::Rng| -> Vec<u8> {
            (0..64).map(|_| u8::from(rng.random_bool(density * density))).collect()
        };
        let (p, g) = if case % 50 == 0 { (vec![0; 64], vec![0; 64]) } else { (draw(&mut rng), draw(&mut rng)) };
        let set = |v: &[u8]| -> HashSet<usize> { v.iter().enumerate().filter(|(_, &x)| x == 1).map(|(i, _)| i).collect() };
        let want = set_dice(&set(&p), &set(&g));
        let pm = LabelMap::new(8, 8, p.clone()).map_err(|e| e.to_string())?;
        let gm = LabelMap::new(8, 8, g.clone()).map_err(|e| e.to_string())?;
        let got = dice_score(&pm, &gm, 1);
        check(got == want, format!("case {case}: {got} vs {want}"))?;
        if set(&p).is_empty() && set(&g).is_empty() {
            check(got == 1.0, "empty-empty is not 1")?;
            empty_empty += 1;
        }
    }
    Ok(format!("1000 pairs exact, {empty_empty} empty-empty pairs scored 1"))
}

fn criterion_6() -> Verdict {
    let a = relative_dice(37.69, 15.42);
    let b = relative_dice(50.93, 22.87);
    let (fa, fb) = (format!("{a:+.2}"), format!("{b:+.2}"));
    check(fa == "+22.27" && fb == "+28.06", format!("{fa}, {fb}"))?;
    check((a - 22.27).abs() < 1e-9 && (b - 28.06).abs() < 1e-9, "arithmetic drift")?;
    Ok(format!("{fa} and {fb}"))
}

struct RunResult {
    target: f64,
    source: f64,
}

fn desk_run(method: Method, tau: f64, seed: u64, data: &TrainData) -> Result<RunResult, String> {
    let cfg = TrainConfig { method, tau, seed, ..Default::default() };
    let out = train(&cfg, data, &RunOptions { eval_final_only: true, ..Default::default() }).map_err(|e| e.to_string())?;
    let last = out.history.last().ok_or("empty history")?;
    Ok(RunResult {
        target: last.target_dice.ok_or("no target dice")?,
        source: last.source_dice.ok_or("no source dice")?,
    })
}

fn criterion_7() -> Verdict {
    let seeds = [0u64, 1, 2];
    let taus = [0.80, 0.85];
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mut sup_t, mut sup_s) = (Vec::new(), Vec::new());
    let mut st = vec![Vec::new(); taus.len()];
    let mut ti = vec![Vec::new(); taus.len()];
    for &seed in &seeds {
        let (s, t) = generate_synthetic(&SynthConfig::default(), seed).map_err(|e| e.to_string())?;
        let split = &make_folds(&s, &t, 4, seed).map_err(|e| e.to_string())?[0];
        let data = TrainData::from_split(&s, &t, split).map_err(|e| e.to_string())?;
        let r = desk_run(Method::Supervised, 0.85, seed, &data)?;
        println!("    seed {seed} supervised: source {:.2} target {:.2}", 100.0 * r.source, 100.0 * r.target);
        sup_t.push(r.target);
        sup_s.push(r.source);
        for (k, &tau) in taus.iter().enumerate() {
            for (method, acc) in [(Method::St, &mut st), (Method::Tist, &mut ti)] {
                let r = desk_run(method, tau, seed, &data)?;
                println!("    seed {seed} {method} tau {tau:.2}: target {:.2}", 100.0 * r.target);
                acc[k].push(r.target);
            }
        }
    }
    let (sup_target, sup_source) = (100.0 * mean(&sup_t), 100.0 * mean(&sup_s));
    let mut lines = vec![format!("supervised source {sup_source:.2} target {sup_target:.2}")];
    let mut failures = Vec::new();
    if sup_source - sup_target < 10.0 {
        failures.push(format!("(a) gap {:.2} < 10", sup_source - sup_target));
    }
    for (k, &tau) in taus.iter().enumerate() {
        let (m_st, m_ti) = (100.0 * mean(&st[k]), 100.0 * mean(&ti[k]));
        lines.push(format!("tau {tau:.2}: st {m_st:.2} tist {m_ti:.2}"));
        if m_ti < m_st {
            failures.push(format!("(b) tau {tau:.2}: tist {m_ti:.2} < st {m_st:.2}"));
        }
        if m_ti - sup_target < 5.0 {
            failures.push(format!("(c) tau {tau:.2}: tist - supervised = {:.2} < 5", m_ti - sup_target));
        }
    }
    let summary = lines.join("; ");
    if failures.is_empty() {
        Ok(summary)
    } else {
        Err(format!("{}; {summary}", failures.join("; ")))
    }
}

fn write_tiny_config(dir: &Path) -> Result<std::path::PathBuf, String> {
    let path = dir.join("tiny.toml");
    let text = r#"
[data]
kind = "synthetic"
seed = 3
[data.synth]
source_count = 8
target_count = 8
height = 16
width = 16

[train]
epochs = 2
batch_size = 2
[train.model]
base_width = 2
"#;
    fs::write(&path, text).map_err(|e| e.to_string())?;
    Ok(path)
}

fn criterion_8() -> Verdict {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = write_tiny_config(tmp.path())?;
    let ablate = |out: &Path| {
        cmd_ablate(&AblateArgs {
            exp: ExperimentArgs { config: Some(config.clone()), ..Default::default() },
            methods: vec!["st".into(), "tist".into()],
            taus: vec![0.80, 0.85, 0.90, 0.95],
            fractions: vec![1.0],
            seeds: vec![0],
            out: Some(out.to_path_buf()),
            force: false,
        })
    };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let status = ablate(&a).map_err(|e| e.to_string())?;
    check(status == tist::cli::Completion::Full, "sweep incomplete")?;
    ablate(&b).map_err(|e| e.to_string())?;

    let csv = fs::read_to_string(a.join("report/sweep.csv")).map_err(|e| e.to_string())?;
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    check(rows.len() == 8, format!("{} rows", rows.len()))?;
    for r in &rows {
        check(r[4] == "completed", format!("{}: status {}", r[10], r[4]))?;
        let records = read_metrics(&a.join("runs").join(r[10]).join(METRICS_FILE)).map_err(|e| e.to_string())?;
        let last = records
            .iter()
            .rev()
            .find_map(|m| match m {
                MetricRecord::Epoch { record, .. } => Some(record.clone()),
                _ => None,
            })
            .ok_or("no epoch record")?;
        let parse = |s: &str| s.parse::<f64>().map_err(|e| e.to_string());
        check(parse(r[6])? == last.target_dice.unwrap_or(f64::NAN), format!("{}: target dice differs", r[10]))?;
        check(parse(r[7])? == last.source_dice.unwrap_or(f64::NAN), format!("{}: source dice differs", r[10]))?;
        check(parse(r[8])? == last.retained_fraction, format!("{}: retained fraction differs", r[10]))?;
    }
    for f in ["sweep.csv", "summary.csv", "report.md", "dice_vs_tau.svg"] {
        let x = fs::read(a.join("report").join(f)).map_err(|e| e.to_string())?;
        let y = fs::read(b.join("report").join(f)).map_err(|e| e.to_string())?;
        check(x == y, format!("{f} differs between reruns"))?;
    }
    Ok("8 runs, table equals metric streams, rerun bitwise identical".into())
}

fn criterion_9() -> Verdict {
    let synth = SynthConfig { source_count: 8, target_count: 8, height: 16, width: 16, ..Default::default() };
    let (s, t) = generate_synthetic(&synth, 6).map_err(|e| e.to_string())?;
    let split = &make_folds(&s, &t, 4, 0).map_err(|e| e.to_string())?[0];
    let data = TrainData::from_split(&s, &t, split).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        epochs: 4,
        batch_size: 2,
        model: ModelConfig { base_width: 2, ..Default::default() },
        ..Default::default()
    };
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = |dir: &Path, stop: Option<usize>, resume: bool| {
        train(
            &cfg,
            &data,
            &RunOptions {
                out_dir: Some(dir.to_path_buf()),
                stop_after: stop,
                resume: resume.then(|| dir.join(LAST_CHECKPOINT)),
                ..Default::default()
            },
        )
        .map_err(|e| e.to_string())
    };
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    let first = run(&a, None, false)?;
    let second = run(&b, None, false)?;
    check(first.history == second.history, "histories differ")?;
    let stream = |d: &Path| fs::read(d.join(METRICS_FILE)).map_err(|e| e.to_string());
    check(stream(&a)? == stream(&b)?, "metric streams differ")?;
    let part = run(&c, Some(2), false)?;
    check(!part.completed, "stop_after ignored")?;
    let resumed = run(&c, None, true)?;
    check(resumed.history == first.history, "resumed history differs")?;
    check(stream(&c)? == stream(&a)?, "resumed stream differs")?;
    check(resumed.model == first.model, "resumed weights differ")?;
    Ok(format!("{} epochs identical across reruns and a resume after epoch 2", first.history.epochs.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Verdict, Duration); 9] = [
        ("1 pseudo-label oracle equivalence", criterion_1, Duration::from_secs(10)),
        ("2 mask subset property", criterion_2, Duration::from_secs(10)),
        ("3 lambda schedule", criterion_3, Duration::MAX),
        ("4 gradient contract", criterion_4, Duration::from_secs(120)),
        ("5 dice oracle equivalence", criterion_5, Duration::MAX),
        ("6 relative dice arithmetic", criterion_6, Duration::MAX),
        ("7 desk-scale adaptation", criterion_7, Duration::from_secs(45 * 60)),
        ("8 ablation tooling", criterion_8, Duration::MAX),
        ("9 determinism and resume", criterion_9, Duration::MAX),
    ];
    let only: Option<Vec<usize>> = std::env::var("TIST_ACCEPT")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut failed = 0;
    for (i, (name, f, budget)) in criteria.iter().enumerate() {
        if only.as_ref().is_some_and(|o| !o.contains(&(i + 1))) {
            continue;
        }
        let start = Instant::now();
        let verdict = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let took = start.elapsed();
        let verdict = match verdict {
            Ok(msg) if took > *budget => Err(format!("{msg}; took {took:.1?}, budget {budget:.0?}")),
            v => v,
        };
        match verdict {
            Ok(msg) => println!("criterion {name}: PASS ({took:.1?}) {msg}"),
            Err(msg) => {
                failed += 1;
                println!("criterion {name}: FAIL ({took:.1?}) {msg}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
