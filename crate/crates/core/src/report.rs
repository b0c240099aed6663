//! Heatmap rendering, analysis summaries and the static run report.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{AnalysisSummary, CkaMatrix, EpsilonSweepEntry};
use crate::attacks::ThreatModel;
use crate::error::{Error, Result};
use crate::losses::Scheme;
use crate::training::Scenario;

/// 8-bit binary PGM. Values are clamped to [0, 1] and mapped to
/// `round(255 v)`; masked cells are 0.
pub fn heatmap_pgm(m: &CkaMatrix) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", m.cols.len(), m.rows.len()).into_bytes();
    for line in &m.values {
        out.extend(
            line.iter()
                .map(|v| v.map_or(0, |v| (255.0 * v.clamp(0.0, 1.0)).round() as u8)),
        );
    }
    out
}

const VIRIDIS: [(u8, u8, u8); 8] = [
    (68, 1, 84),
    (70, 50, 127),
    (54, 92, 141),
    (39, 127, 142),
    (31, 161, 135),
    (74, 194, 109),
    (159, 218, 58),
    (253, 231, 37),
];

/// Viridis-like colour of `v` in [0, 1], interpolated between 8 stops.
pub fn viridis(v: f64) -> (u8, u8, u8) {
    let x = v.clamp(0.0, 1.0) * (VIRIDIS.len() - 1) as f64;
    let i = (x.floor() as usize).min(VIRIDIS.len() - 2);
    let t = x - i as f64;
    let (a, b) = (VIRIDIS[i], VIRIDIS[i + 1]);
    let mix = |p: u8, q: u8| (p as f64 + t * (q as f64 - p as f64)).round() as u8;
    (mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// SVG heatmap: one `rect.cell` per matrix entry, hatched masked cells, row
/// labels on the left and column labels along the bottom. Row 0 is drawn at
/// the bottom so the diagonal runs upwards.
pub fn heatmap_svg(m: &CkaMatrix, title: &str) -> String {
    const CELL: usize = 28;
    const LEFT: usize = 110;
    const TOP: usize = 30;
    let (nr, nc) = (m.rows.len(), m.cols.len());
    let width = LEFT + nc * CELL + 20;
    let height = TOP + nr * CELL + 110;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="10">"#
    );
    s.push_str(
        r##"<defs><pattern id="hatch" width="6" height="6" patternUnits="userSpaceOnUse" patternTransform="rotate(45)"><rect width="6" height="6" fill="#ffffff"/><line x1="0" y1="0" x2="0" y2="6" stroke="#888888" stroke-width="2"/></pattern></defs>
"##,
    );
    let _ = writeln!(
        s,
        r#"<text x="{LEFT}" y="18" font-size="12">{} ({}, n={})</text>"#,
        escape(title),
        m.condition,
        m.n_samples
    );
    for (r, line) in m.values.iter().enumerate() {
        let y = TOP + (nr - 1 - r) * CELL;
        for (c, v) in line.iter().enumerate() {
            let x = LEFT + c * CELL;
            let fill = match v {
                Some(v) => {
                    let (red, g, b) = viridis(*v);
                    format!("#{red:02x}{g:02x}{b:02x}")
                }
                None => "url(#hatch)".to_string(),
            };
            let tip = v.map_or_else(|| "masked".to_string(), |v| format!("{v:.4}"));
            let _ = writeln!(
                s,
                r#"<rect class="cell" x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{fill}"><title>{} / {}: {tip}</title></rect>"#,
                escape(&m.rows[r]),
                escape(&m.cols[c])
            );
        }
        let _ = writeln!(
            s,
            r#"<text class="row-label" x="{}" y="{}" text-anchor="end">{}</text>"#,
            LEFT - 4,
            y + CELL / 2 + 3,
            escape(&m.rows[r])
        );
    }
    let base = TOP + nr * CELL;
    for (c, label) in m.cols.iter().enumerate() {
        let x = LEFT + c * CELL + CELL / 2;
        let _ = writeln!(
            s,
            r#"<text class="col-label" x="{x}" y="{}" text-anchor="end" transform="rotate(-60 {x} {})">{}</text>"#,
            base + 10,
            base + 10,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `<stem>.pgm` and `<stem>.svg` and returns both paths.
pub fn render_heatmap(m: &CkaMatrix, stem: impl AsRef<Path>, title: &str) -> Result<(PathBuf, PathBuf)> {
    let stem = stem.as_ref();
    let pgm = stem.with_extension("pgm");
    let svg = stem.with_extension("svg");
    fs::write(&pgm, heatmap_pgm(m)).map_err(|e| Error::io(&pgm, e))?;
    fs::write(&svg, heatmap_svg(m, title)).map_err(|e| Error::io(&svg, e))?;
    Ok((pgm, svg))
}

/// Line chart of named series over shared x values. `None` points break the
/// line.
pub fn line_chart_svg(title: &str, x_label: &str, y_label: &str, x: &[f64], series: &[(String, Vec<Option<f64>>)]) -> String {
    const W: f64 = 420.0;
    const H: f64 = 260.0;
    const L: f64 = 50.0;
    const B: f64 = 40.0;
    let (x0, x1) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if x1 > x0 { x1 - x0 } else { 1.0 };
    let px = |v: f64| L + (v - x0) / span * (W - L - 130.0);
    let py = |v: f64| H - B - v.clamp(0.0, 1.0) * (H - B - 30.0);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(s, r#"<text x="{L}" y="16" font-size="12">{}</text>"#, escape(title));
    let _ = writeln!(
        s,
        r##"<line x1="{L}" y1="{}" x2="{}" y2="{}" stroke="#000000"/><line x1="{L}" y1="30" x2="{L}" y2="{}" stroke="#000000"/>"##,
        H - B,
        W - 130.0,
        H - B,
        H - B
    );
    for t in [0.0, 0.5, 1.0] {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{t}</text>"#, L - 4.0, py(t) + 3.0);
    }
    for &v in x {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, px(v), H - B + 14.0, fmt_num(v));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (L + W - 130.0) / 2.0, H - 6.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="12" y="{}" transform="rotate(-90 12 {})" text-anchor="middle">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
    for (k, (name, ys)) in series.iter().enumerate() {
        let (r, g, b) = viridis(if series.len() > 1 { k as f64 / (series.len() - 1) as f64 * 0.85 } else { 0.0 });
        let colour = format!("#{r:02x}{g:02x}{b:02x}");
        let mut path = String::new();
        let mut pen_down = false;
        for (xv, yv) in x.iter().zip(ys) {
            match yv {
                Some(v) => {
                    let _ = write!(path, "{}{:.1},{:.1} ", if pen_down { "L" } else { "M" }, px(*xv), py(*v));
                    pen_down = true;
                }
                None => pen_down = false,
            }
        }
        let _ = writeln!(s, r#"<path d="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#, path.trim_end());
        let ly = 40.0 + 14.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{}" width="10" height="10" fill="{colour}"/><text x="{}" y="{}">{}</text>"#,
            W - 120.0,
            ly - 9.0,
            W - 106.0,
            ly,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_num(v: f64) -> String {
    let s = format!("{v:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// One parsed row of `results.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub scenario: Scenario,
    pub scheme: Scheme,
    pub threat_model: ThreatModel,
    pub epsilon: f64,
    pub steps: usize,
    pub clean_acc: f64,
    pub robust_acc: Option<f64>,
    pub seed: u64,
    pub runtime_s: Option<f64>,
}

fn parse_scenario(s: &str) -> Option<Scenario> {
    [Scenario::St, Scenario::At, Scenario::PartialAt, Scenario::FullAt]
        .into_iter()
        .find(|k| k.as_str() == s)
}

pub fn parse_results_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("results.csv is empty".into()))?;
    if header != "scenario,scheme,threat_model,epsilon,steps,clean_acc,robust_acc,seed,runtime_s" {
        return Err(Error::Parse(format!("unexpected results.csv header {header:?}")));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
        let bad = |what: &str| Error::Parse(format!("results.csv line {}: bad {what}", i + 2));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(bad("field count"));
        }
        let opt = |s: &str| -> Result<Option<f64>> {
            if s == "NA" {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad("number"))
            }
        };
        rows.push(ResultRow {
            scenario: parse_scenario(f[0]).ok_or_else(|| bad("scenario"))?,
            scheme: f[1].parse().map_err(|_| bad("scheme"))?,
            threat_model: match f[2] {
                "I" => ThreatModel::I,
                "II" => ThreatModel::II,
                _ => return Err(bad("threat model")),
            },
            epsilon: f[3].parse().map_err(|_| bad("epsilon"))?,
            steps: f[4].parse().map_err(|_| bad("steps"))?,
            clean_acc: f[5].parse().map_err(|_| bad("clean_acc"))?,
            robust_acc: opt(f[6])?,
            seed: f[7].parse().map_err(|_| bad("seed"))?,
            runtime_s: opt(f[8])?,
        });
    }
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CheckStatus {
    Pass,
    Fail,
    /// The cells the check needs are not in the results.
    Missing,
}

/// One paper-direction check evaluated over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub id: String,
    pub claim: String,
    pub status: CheckStatus,
    pub detail: String,
}

/// Per-seed verdicts aggregated by the two-thirds rule: a check passes when
/// it holds on at least `ceil(2k/3)` of the `k` seeds that have data.
fn aggregate(id: &str, claim: &str, per_seed: Vec<(u64, Option<(bool, String)>)>) -> Check {
    let known: Vec<&(u64, Option<(bool, String)>)> = per_seed.iter().filter(|(_, v)| v.is_some()).collect();
    let detail = per_seed
        .iter()
        .map(|(s, v)| match v {
            Some((ok, d)) => format!("seed {s}: {} ({d})", if *ok { "holds" } else { "fails" }),
            None => format!("seed {s}: missing"),
        })
        .collect::<Vec<_>>()
        .join("; ");
    let status = if known.is_empty() {
        CheckStatus::Missing
    } else {
        let held = known.iter().filter(|(_, v)| v.as_ref().is_some_and(|(ok, _)| *ok)).count();
        if 3 * held >= 2 * known.len() {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        }
    };
    Check {
        id: id.into(),
        claim: claim.into(),
        status,
        detail,
    }
}

/// The directional checks that the results and summary support, at the
/// largest evaluated budget.
pub fn direction_checks(rows: &[ResultRow], summary: Option<&AnalysisSummary>) -> Vec<Check> {
    let mut seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
    if let Some(s) = summary {
        seeds.extend(s.final_layer_cka.iter().map(|e| e.seed));
        seeds.extend(s.cross_model.iter().map(|e| e.seed));
        seeds.extend(s.epsilon_sweep.iter().map(|e| e.seed));
    }
    seeds.sort_unstable();
    seeds.dedup();
    let eps = rows
        .iter()
        .filter(|r| r.threat_model == ThreatModel::I)
        .map(|r| r.epsilon)
        .fold(f64::NEG_INFINITY, f64::max);
    let acc = |sc: Scenario, k: Scheme, tm: ThreatModel, seed: u64| {
        rows.iter()
            .find(|r| r.scenario == sc && r.scheme == k && r.threat_model == tm && r.epsilon == eps && r.seed == seed)
            .and_then(|r| r.robust_acc)
    };
    let pts = |v: f64| format!("{:.1}", 100.0 * v);
    let mut checks = Vec::new();

    checks.push(aggregate(
        "robustness-ordering",
        "ST: CL is less robust than SCL and SL by >= 5 points; SL+CL and CL+SCL exceed CL by >= 3 points",
        seeds
            .iter()
            .map(|&s| {
                let get = |k| acc(Scenario::St, k, ThreatModel::I, s);
                let v = (|| {
                    let (cl, scl, sl) = (get(Scheme::Cl)?, get(Scheme::Scl)?, get(Scheme::Sl)?);
                    let (a, b) = (get(Scheme::SlCl)?, get(Scheme::ClScl)?);
                    let ok = scl.min(sl) - cl >= 0.05 && a - cl >= 0.03 && b - cl >= 0.03;
                    Some((ok, format!("CL {} SCL {} SL {} SL+CL {} CL+SCL {}", pts(cl), pts(scl), pts(sl), pts(a), pts(b))))
                })();
                (s, v)
            })
            .collect(),
    ));

    checks.push(aggregate(
        "full-at-helps-cl",
        "Full-AT(CL) >= AT(CL) + 5 points; |Full-AT(SCL) - AT(SCL)| <= 5 points",
        seeds
            .iter()
            .map(|&s| {
                let get = |sc, k| acc(sc, k, ThreatModel::I, s);
                let v = (|| {
                    let (fc, ac) = (get(Scenario::FullAt, Scheme::Cl)?, get(Scenario::At, Scheme::Cl)?);
                    let (fs, as_) = (get(Scenario::FullAt, Scheme::Scl)?, get(Scenario::At, Scheme::Scl)?);
                    let ok = fc - ac >= 0.05 && (fs - as_).abs() <= 0.05;
                    Some((ok, format!("CL {} vs {}, SCL {} vs {}", pts(fc), pts(ac), pts(fs), pts(as_))))
                })();
                (s, v)
            })
            .collect(),
    ));

    if let Some(sum) = summary {
        let fin = |sc, s| {
            sum.final_layer_cka
                .iter()
                .find(|e| e.scenario == sc && e.scheme == Scheme::Cl && e.seed == s)
                .and_then(|e| e.cka)
        };
        checks.push(aggregate(
            "at-raises-final-layer-similarity",
            "final-layer clean-adv CKA: AT(CL) exceeds ST(CL) by >= 0.2",
            seeds
                .iter()
                .map(|&s| {
                    let v = (|| {
                        let (at, st) = (fin(Scenario::At, s)?, fin(Scenario::St, s)?);
                        Some((at - st >= 0.2, format!("AT {at:.3} ST {st:.3}")))
                    })();
                    (s, v)
                })
                .collect(),
        ));
        checks.push(aggregate(
            "similarity-grows-with-budget",
            "final-layer clean-adv CKA is non-decreasing in training epsilon (tolerance 0.02)",
            seeds
                .iter()
                .map(|&s| {
                    let mut pts: Vec<&EpsilonSweepEntry> = sum.epsilon_sweep.iter().filter(|e| e.seed == s).collect();
                    pts.sort_by(|a, b| a.train_epsilon.total_cmp(&b.train_epsilon));
                    let vals: Option<Vec<f64>> = pts.iter().map(|e| e.final_layer_cka).collect();
                    let v = vals.filter(|v| v.len() >= 2).map(|v| {
                        let ok = v.windows(2).all(|w| w[1] >= w[0] - 0.02);
                        (ok, v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" -> "))
                    });
                    (s, v)
                })
                .collect(),
        ));
        let cross = |sc, s| {
            sum.cross_model
                .iter()
                .find(|e| e.scenario == sc && e.seed == s && e.a == Scheme::Cl && e.b == Scheme::Sl)
                .and_then(|e| e.upper_third)
        };
        checks.push(aggregate(
            "universal-representations",
            "upper-third cross-model CKA of AT(CL) vs AT(SL) exceeds ST(CL) vs ST(SL) by >= 0.1",
            seeds
                .iter()
                .map(|&s| {
                    let v = (|| {
                        let (at, st) = (cross(Scenario::At, s)?, cross(Scenario::St, s)?);
                        Some((at - st >= 0.1, format!("AT {at:.3} ST {st:.3}")))
                    })();
                    (s, v)
                })
                .collect(),
        ));
    }

    checks.push(aggregate(
        "tm2-exceeds-tm1",
        "AT(CL): Threat Model-II accuracy exceeds Threat Model-I by >= 10 points",
        seeds
            .iter()
            .map(|&s| {
                let v = (|| {
                    let one = acc(Scenario::At, Scheme::Cl, ThreatModel::I, s)?;
                    let two = acc(Scenario::At, Scheme::Cl, ThreatModel::II, s)?;
                    Some((two - one >= 0.10, format!("TM-II {} TM-I {}", pts(two), pts(one))))
                })();
                (s, v)
            })
            .collect(),
    ));
    checks
}

/// A figure for the report: inline SVG plus the file it was read from.
#[derive(Clone, Debug)]
pub struct Figure {
    pub caption: String,
    pub file: String,
    pub svg: String,
}

fn badge(status: CheckStatus) -> (&'static str, &'static str) {
    match status {
        CheckStatus::Pass => ("PASS", "#2e7d32"),
        CheckStatus::Fail => ("FAIL", "#c62828"),
        CheckStatus::Missing => ("N/A", "#757575"),
    }
}

fn results_table_rows(rows: &[ResultRow]) -> Vec<[String; 8]> {
    let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| format!("{:.1}", 100.0 * v));
    rows.iter()
        .map(|r| {
            [
                r.scenario.to_string(),
                r.scheme.to_string(),
                r.threat_model.to_string(),
                fmt_num(r.epsilon),
                r.steps.to_string(),
                format!("{:.1}", 100.0 * r.clean_acc),
                opt(r.robust_acc),
                r.seed.to_string(),
            ]
        })
        .collect()
}

const TABLE_HEADER: [&str; 8] = ["scenario", "scheme", "TM", "epsilon", "steps", "clean %", "robust %", "seed"];

/// Markdown summary. Figures are linked by file so the document renders
/// anywhere; the HTML variant inlines them.
pub fn markdown_report(title: &str, rows: &[ResultRow], checks: &[Check], figures: &[Figure]) -> String {
    let mut s = format!("# {title}\n\n## Directional checks\n\n| check | status | detail |\n|---|---|---|\n");
    for c in checks {
        let _ = writeln!(s, "| {} | **{}** | {} |", c.claim, badge(c.status).0, c.detail);
    }
    s.push_str("\n## Results\n\n|");
    for h in TABLE_HEADER {
        let _ = write!(s, " {h} |");
    }
    s.push_str("\n|");
    s.push_str(&"---|".repeat(TABLE_HEADER.len()));
    s.push('\n');
    for r in results_table_rows(rows) {
        let _ = writeln!(s, "| {} |", r.join(" | "));
    }
    if !figures.is_empty() {
        s.push_str("\n## Figures\n\n");
        for f in figures {
            let _ = writeln!(s, "![{}]({})\n", f.caption, f.file);
        }
    }
    s
}

/// Self-contained HTML summary with inline SVGs and pass/fail badges.
pub fn html_report(title: &str, rows: &[ResultRow], checks: &[Check], figures: &[Figure]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>{0}</title>\n<style>body{{font-family:sans-serif;margin:2em}}table{{border-collapse:collapse}}td,th{{border:1px solid #ccc;padding:3px 8px;text-align:right}}.badge{{color:#fff;padding:2px 6px;border-radius:3px;font-weight:bold}}figure{{display:inline-block;margin:1em}}</style></head><body>\n<h1>{0}</h1>",
        escape(title)
    );
    s.push_str("<h2>Directional checks</h2>\n<table><tr><th>check</th><th>status</th><th>detail</th></tr>\n");
    for c in checks {
        let (label, colour) = badge(c.status);
        let _ = writeln!(
            s,
            "<tr><td style=\"text-align:left\">{}</td><td><span class=\"badge\" style=\"background:{colour}\">{label}</span></td><td style=\"text-align:left\">{}</td></tr>",
            escape(&c.claim),
            escape(&c.detail)
        );
    }
    s.push_str("</table>\n<h2>Results</h2>\n<table><tr>");
    for h in TABLE_HEADER {
        let _ = write!(s, "<th>{h}</th>");
    }
    s.push_str("</tr>\n");
    for r in results_table_rows(rows) {
        s.push_str("<tr>");
        for v in r {
            let _ = write!(s, "<td>{}</td>", escape(&v));
        }
        s.push_str("</tr>\n");
    }
    s.push_str("</table>\n");
    if !figures.is_empty() {
        s.push_str("<h2>Figures</h2>\n");
        for f in figures {
            let _ = writeln!(s, "<figure>{}<figcaption>{}</figcaption></figure>", f.svg, escape(&f.caption));
        }
    }
    s.push_str("</body></html>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::CkaCondition;

    fn matrix(values: Vec<Vec<Option<f64>>>) -> CkaMatrix {
        let n = values.len();
        CkaMatrix {
            rows: (0..n).map(|i| format!("L{i}")).collect(),
            cols: (0..n).map(|i| format!("L{i}")).collect(),
            values,
            n_samples: 10,
            condition: CkaCondition::CleanClean,
            model_ids: ("a".into(), "a".into()),
            diagnostics: vec![],
        }
    }

    #[test]
    fn pgm_scaling() {
        let m = matrix(vec![vec![Some(1.0), Some(0.0)], vec![Some(0.0), Some(1.0)]]);
        let pgm = heatmap_pgm(&m);
        assert!(pgm.starts_with(b"P5\n2 2\n255\n"));
        assert_eq!(&pgm[pgm.len() - 4..], &[255, 0, 0, 255]);
    }

    #[test]
    fn masked_cells_are_black_and_hatched() {
        let m = matrix(vec![vec![Some(0.5), None], vec![None, Some(1.0)]]);
        let pgm = heatmap_pgm(&m);
        assert_eq!(&pgm[pgm.len() - 4..], &[128, 0, 0, 255]);
        let svg = heatmap_svg(&m, "t");
        assert_eq!(svg.matches("class=\"cell\"").count(), 4);
        assert_eq!(svg.matches("url(#hatch)").count(), 2);
        assert!(svg.contains(">L1</text>"));
    }

    #[test]
    fn viridis_endpoints() {
        assert_eq!(viridis(0.0), VIRIDIS[0]);
        assert_eq!(viridis(1.0), VIRIDIS[7]);
        assert_eq!(viridis(-3.0), VIRIDIS[0]);
    }

    #[test]
    fn two_of_three_rule() {
        let v = |b| Some((b, String::new()));
        assert_eq!(aggregate("x", "", vec![(0, v(true)), (1, v(false)), (2, v(true))]).status, CheckStatus::Pass);
        assert_eq!(aggregate("x", "", vec![(0, v(true)), (1, v(false)), (2, v(false))]).status, CheckStatus::Fail);
        assert_eq!(aggregate("x", "", vec![(0, None)]).status, CheckStatus::Missing);
    }

    #[test]
    fn results_round_trip_through_parser() {
        let text = "scenario,scheme,threat_model,epsilon,steps,clean_acc,robust_acc,seed,runtime_s\n\
                    AT,CL,I,0.1,20,0.9,0.5,0,NA\nAT,CL,II,0.1,40,0.9,0.7,0,NA\nST,SL,II,0.1,40,0.8,NA,0,1.5\n";
        let rows = parse_results_csv(text).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[1].scheme, Scheme::Cl);
        assert_eq!(rows[2].robust_acc, None);
        assert_eq!(rows[2].runtime_s, Some(1.5));
        let checks = direction_checks(&rows, None);
        let tm = checks.iter().find(|c| c.id == "tm2-exceeds-tm1").unwrap();
        assert_eq!(tm.status, CheckStatus::Pass);
        let ord = checks.iter().find(|c| c.id == "robustness-ordering").unwrap();
        assert_eq!(ord.status, CheckStatus::Missing);
    }
}
