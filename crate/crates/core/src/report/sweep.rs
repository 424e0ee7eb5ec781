//! Ablation sweep reports: a flat table of every grid point, per-setting
//! means, Dice-vs-tau and Dice-vs-labelled-fraction plots (SVG) and a
//! markdown summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::trainer::{read_metrics, MetricRecord, Method, METRICS_FILE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepStatus {
    Completed,
    /// The run started but did not finish all epochs.
    Partial,
    Missing,
}

/// One grid point: a single training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub method: Method,
    pub tau: f64,
    /// Share of the labelled source training set used.
    pub fraction: f64,
    pub seed: u64,
    pub status: SweepStatus,
    pub epochs_done: usize,
    /// Final-epoch values from the run's metrics stream.
    pub target_dice: Option<f64>,
    pub source_dice: Option<f64>,
    pub retained_fraction: Option<f64>,
    pub config_hash: Option<String>,
    pub run_dir: String,
}

impl SweepPoint {
    /// Reads the last epoch record of `run_dir/metrics.jsonl`.
    pub fn from_run_dir(
        run_dir: &Path,
        method: Method,
        tau: f64,
        fraction: f64,
        seed: u64,
        expected_epochs: usize,
    ) -> SweepPoint {
        let mut point = SweepPoint {
            method,
            tau,
            fraction,
            seed,
            status: SweepStatus::Missing,
            epochs_done: 0,
            target_dice: None,
            source_dice: None,
            retained_fraction: None,
            config_hash: None,
            run_dir: run_dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
        };
        let Ok(records) = read_metrics(&run_dir.join(METRICS_FILE)) else {
            return point;
        };
        let last = records.iter().rev().find_map(|r| match r {
            MetricRecord::Epoch { config_hash, record } => Some((config_hash, record)),
            _ => None,
        });
        if let Some((hash, rec)) = last {
            point.epochs_done = rec.epoch + 1;
            point.status = if point.epochs_done >= expected_epochs {
                SweepStatus::Completed
            } else {
                SweepStatus::Partial
            };
            point.target_dice = rec.target_dice;
            point.source_dice = rec.source_dice;
            point.retained_fraction = Some(rec.retained_fraction);
            point.config_hash = Some(hash.clone());
        }
        point
    }
}

/// Mean over seeds of one `(method, tau, fraction)` setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingSummary {
    pub method: Method,
    pub tau: f64,
    pub fraction: f64,
    pub n_completed: usize,
    pub n_expected: usize,
    pub mean_target_dice: Option<f64>,
    pub mean_retained_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub points: Vec<SweepPoint>,
    pub settings: Vec<SettingSummary>,
    /// `(tau, fraction, tist - st)` for settings where both are present.
    pub gaps: Vec<(f64, f64, f64)>,
    pub missing: Vec<String>,
    pub files: Vec<PathBuf>,
}

impl SweepReport {
    pub fn is_complete(&self) -> bool {
        self.missing.is_empty()
    }
}

fn key(x: f64) -> u64 {
    x.to_bits()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Writes `sweep.csv`, `summary.csv`, `sweep.json`, `report.md`,
/// `dice_vs_tau.svg` and, with more than one labelled fraction,
/// `dice_vs_fraction.svg` into `out_dir`.
///
/// Points that are missing or partial are kept in the table, flagged, and
/// left out of the means.
pub fn sweep_report(points: &[SweepPoint], out_dir: &Path) -> Result<SweepReport> {
    let mut points = points.to_vec();
    points.sort_by(|a, b| {
        (a.method, key(a.fraction), key(a.tau), a.seed).cmp(&(b.method, key(b.fraction), key(b.tau), b.seed))
    });
    let methods: Vec<Method> = {
        let mut m: Vec<Method> = points.iter().map(|p| p.method).collect();
        m.dedup();
        m
    };
    let mut taus: Vec<f64> = points.iter().map(|p| p.tau).collect();
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    ensure!(
        methods.len() >= 2 && taus.len() >= 2,
        InvalidInput,
        "a sweep report needs at least two methods and two tau values, got {} and {}",
        methods.len(),
        taus.len()
    );
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut groups: BTreeMap<(Method, u64, u64), Vec<&SweepPoint>> = BTreeMap::new();
    for p in &points {
        groups.entry((p.method, key(p.fraction), key(p.tau))).or_default().push(p);
    }
    let settings: Vec<SettingSummary> = groups
        .values()
        .map(|g| {
            let done: Vec<&&SweepPoint> = g.iter().filter(|p| p.status == SweepStatus::Completed).collect();
            let dice: Vec<f64> = done.iter().filter_map(|p| p.target_dice).collect();
            let kept: Vec<f64> = done.iter().filter_map(|p| p.retained_fraction).collect();
            SettingSummary {
                method: g[0].method,
                tau: g[0].tau,
                fraction: g[0].fraction,
                n_completed: done.len(),
                n_expected: g.len(),
                mean_target_dice: mean(&dice),
                mean_retained_fraction: mean(&kept),
            }
        })
        .collect();
    let missing: Vec<String> = points
        .iter()
        .filter(|p| p.status != SweepStatus::Completed)
        .map(|p| format!("{} ({:?})", p.run_dir, p.status))
        .collect();

    let lookup = |m: Method, tau: f64, frac: f64| {
        settings
            .iter()
            .find(|s| s.method == m && key(s.tau) == key(tau) && key(s.fraction) == key(frac))
            .and_then(|s| s.mean_target_dice)
    };
    let mut fractions: Vec<f64> = points.iter().map(|p| p.fraction).collect();
    fractions.sort_by(f64::total_cmp);
    fractions.dedup();
    let mut gaps = Vec::new();
    for &frac in &fractions {
        for &tau in &taus {
            if let (Some(t), Some(s)) = (lookup(Method::Tist, tau, frac), lookup(Method::St, tau, frac)) {
                gaps.push((tau, frac, t - s));
            }
        }
    }

    let mut files = Vec::new();
    let mut write = |name: &str, text: String| -> Result<()> {
        let path = out_dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        files.push(path);
        Ok(())
    };

    let mut csv = String::from(
        "method,tau,fraction,seed,status,epochs_done,target_dice,source_dice,retained_fraction,config_hash,run_dir\n",
    );
    for p in &points {
        let status = serde_json::to_value(p.status)?;
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{}",
            p.method,
            p.tau,
            p.fraction,
            p.seed,
            status.as_str().unwrap_or_default(),
            p.epochs_done,
            fmt_opt(p.target_dice),
            fmt_opt(p.source_dice),
            fmt_opt(p.retained_fraction),
            p.config_hash.clone().unwrap_or_default(),
            p.run_dir
        )
        .expect("write to string");
    }
    write("sweep.csv", csv)?;

    let mut summary = String::from("method,tau,fraction,n_completed,n_expected,mean_target_dice,mean_retained_fraction,gap_tist_minus_st\n");
    for s in &settings {
        let gap = gaps
            .iter()
            .find(|(t, f, _)| key(*t) == key(s.tau) && key(*f) == key(s.fraction))
            .map(|g| g.2);
        writeln!(
            summary,
            "{},{},{},{},{},{},{},{}",
            s.method,
            s.tau,
            s.fraction,
            s.n_completed,
            s.n_expected,
            fmt_opt(s.mean_target_dice),
            fmt_opt(s.mean_retained_fraction),
            fmt_opt(gap)
        )
        .expect("write to string");
    }
    write("summary.csv", summary)?;

    let full_fraction = *fractions.last().expect("non-empty sweep");
    let tau_series: Vec<Series> = methods
        .iter()
        .map(|&m| Series {
            name: m.to_string(),
            points: taus
                .iter()
                .filter_map(|&t| lookup(m, t, full_fraction).map(|d| (t, 100.0 * d)))
                .collect(),
        })
        .collect();
    write(
        "dice_vs_tau.svg",
        line_chart("Target Dice vs. pseudo-label threshold", "tau", "Dice (%)", &tau_series),
    )?;
    if fractions.len() > 1 {
        let mut series = Vec::new();
        for &m in &methods {
            for &t in &taus {
                let pts: Vec<(f64, f64)> = fractions
                    .iter()
                    .filter_map(|&f| lookup(m, t, f).map(|d| (f, 100.0 * d)))
                    .collect();
                if pts.len() > 1 {
                    series.push(Series {
                        name: format!("{m} tau={t}"),
                        points: pts,
                    });
                }
            }
        }
        write(
            "dice_vs_fraction.svg",
            line_chart("Target Dice vs. labelled-set size", "labelled fraction", "Dice (%)", &series),
        )?;
    }

    let mut md = String::from("# Sweep report\n\n");
    md.push_str("Mean final-epoch target Dice (%) over completed seeds.\n\n");
    for &frac in &fractions {
        let _ = writeln!(md, "## Labelled fraction {frac}\n");
        md.push_str("| tau |");
        for m in &methods {
            let _ = write!(md, " {m} |");
        }
        md.push_str(" tist - st |\n|---|");
        md.push_str(&"---|".repeat(methods.len() + 1));
        md.push('\n');
        for &tau in &taus {
            let _ = write!(md, "| {tau} |");
            for &m in &methods {
                match lookup(m, tau, frac) {
                    Some(d) => {
                        let _ = write!(md, " {:.2} |", 100.0 * d);
                    }
                    None => md.push_str(" missing |"),
                }
            }
            match gaps.iter().find(|(t, f, _)| key(*t) == key(tau) && key(*f) == key(frac)) {
                Some(g) => {
                    let _ = writeln!(md, " {:+.2} |", 100.0 * g.2);
                }
                None => md.push_str(" n/a |\n"),
            }
        }
        md.push('\n');
    }
    if !missing.is_empty() {
        md.push_str("## Incomplete runs\n\n");
        for m in &missing {
            let _ = writeln!(md, "- {m}");
        }
    }
    write("report.md", md)?;

    let mut report = SweepReport {
        points,
        settings,
        gaps,
        missing,
        files: Vec::new(),
    };
    let json = serde_json::to_string_pretty(&report)?;
    write("sweep.json", json + "\n")?;
    report.files = files;
    Ok(report)
}

/// A named polyline in data coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

/// Minimal SVG line chart with axes, five ticks per axis and a legend.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (70.0, 170.0, 40.0, 60.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let all = || series.iter().flat_map(|s| s.points.iter());
    let (x0, x1) = span(all().map(|p| p.0));
    let (y0, y1) = span(all().map(|p| p.1));
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, left + pw / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let (px, py) = (sx(xv), sy(yv));
        let _ = writeln!(
            s,
            r##"<line x1="{px:.1}" y1="{:.1}" x2="{px:.1}" y2="{:.1}" stroke="#999"/><text x="{px:.1}" y="{:.1}" text-anchor="middle">{xv:.3}</text>"##,
            top + ph,
            top + ph + 5.0,
            top + ph + 20.0
        );
        let _ = writeln!(
            s,
            r##"<line x1="{:.1}" y1="{py:.1}" x2="{left}" y2="{py:.1}" stroke="#999"/><text x="{:.1}" y="{:.1}" text-anchor="end">{yv:.1}</text>"##,
            left - 5.0,
            left - 8.0,
            py + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        h - 15.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(y_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = ser.points.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
        if pts.len() > 1 {
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                pts.join(" ")
            );
        }
        for &(x, y) in &ser.points {
            let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3.5" fill="{color}"/>"#, sx(x), sy(y));
        }
        let ly = top + 10.0 + 20.0 * i as f64;
        let lx = left + pw + 15.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(method: Method, tau: f64, seed: u64, dice: Option<f64>) -> SweepPoint {
        SweepPoint {
            method,
            tau,
            fraction: 1.0,
            seed,
            status: if dice.is_some() { SweepStatus::Completed } else { SweepStatus::Missing },
            epochs_done: if dice.is_some() { 3 } else { 0 },
            target_dice: dice,
            source_dice: dice,
            retained_fraction: dice.map(|_| 0.5),
            config_hash: dice.map(|_| "h".into()),
            run_dir: format!("{method}_tau{tau}_seed{seed}"),
        }
    }

    #[test]
    fn two_methods_three_taus_give_six_rows_and_two_curves() {
        let mut pts = Vec::new();
        for m in [Method::St, Method::Tist] {
            for (i, t) in [0.8, 0.85, 0.9].into_iter().enumerate() {
                pts.push(point(m, t, 0, Some(0.5 + 0.1 * i as f64)));
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let r = sweep_report(&pts, dir.path()).unwrap();
        assert_eq!(r.settings.len(), 6);
        assert!(r.is_complete());
        let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
        assert_eq!(csv.lines().count(), 7);
        let svg = fs::read_to_string(dir.path().join("dice_vs_tau.svg")).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        // Identical inputs per method: zero gap everywhere.
        assert!(r.gaps.iter().all(|g| g.2 == 0.0));
        assert!(!dir.path().join("dice_vs_fraction.svg").exists());
    }

    #[test]
    fn missing_runs_are_flagged_not_fatal() {
        let pts = vec![
            point(Method::St, 0.8, 0, Some(0.4)),
            point(Method::St, 0.9, 0, Some(0.5)),
            point(Method::Tist, 0.8, 0, Some(0.45)),
            point(Method::Tist, 0.9, 0, None),
        ];
        let dir = tempfile::tempdir().unwrap();
        let r = sweep_report(&pts, dir.path()).unwrap();
        assert_eq!(r.missing.len(), 1);
        assert_eq!(r.gaps.len(), 1);
        let md = fs::read_to_string(dir.path().join("report.md")).unwrap();
        assert!(md.contains("missing"), "{md}");
        assert!(md.contains("Incomplete runs"));
    }

    #[test]
    fn too_small_a_grid_is_rejected() {
        let pts = vec![point(Method::St, 0.8, 0, Some(0.4)), point(Method::Tist, 0.8, 0, Some(0.4))];
        let dir = tempfile::tempdir().unwrap();
        assert!(sweep_report(&pts, dir.path()).is_err());
    }

    #[test]
    fn fraction_curve_is_drawn_when_sizes_vary() {
        let mut pts = Vec::new();
        for m in [Method::St, Method::Tist] {
            for t in [0.8, 0.9] {
                for f in [0.25, 0.5, 1.0] {
                    let mut p = point(m, t, 0, Some(f));
                    p.fraction = f;
                    pts.push(p);
                }
            }
        }
        let dir = tempfile::tempdir().unwrap();
        sweep_report(&pts, dir.path()).unwrap();
        let svg = fs::read_to_string(dir.path().join("dice_vs_fraction.svg")).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 4);
    }

    #[test]
    fn chart_is_deterministic() {
        let s = vec![Series {
            name: "a<b".into(),
            points: vec![(0.8, 50.0), (0.9, 55.0)],
        }];
        let a = line_chart("t", "x", "y", &s);
        assert_eq!(a, line_chart("t", "x", "y", &s));
        assert!(a.contains("a&lt;b"));
    }
}
