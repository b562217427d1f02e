use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::extraction::MpsRecord;

const PALETTE: [&str; 8] = ["#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#9c755f"];
const SLOT: f64 = 110.0;
const HALF_WIDTH: f64 = 45.0;
const TOP: f64 = 30.0;
const PLOT_HEIGHT: f64 = 300.0;
const LEFT: f64 = 60.0;
const SAMPLES: usize = 96;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Silverman's rule of thumb; falls back to the standard deviation term when
/// the interquartile range is zero. Zero means a constant sample.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * n.powf(-0.2)
}

pub fn gaussian_kde(values: &[f64], bandwidth: f64, at: f64) -> f64 {
    let norm = 1.0 / (values.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    values.iter().map(|v| (-0.5 * ((at - v) / bandwidth).powi(2)).exp()).sum::<f64>() * norm
}

/// Violin plot of area ratios per model as a standalone SVG document.
///
/// Non-degenerate records only. Models with fewer than two such records are
/// left out and returned as the second element. Violins are coloured by
/// architecture tag.
pub fn plot_violin(records: &[MpsRecord], tags: &BTreeMap<String, String>) -> Result<(String, Vec<String>)> {
    let mut by_model: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in records {
        let entry = by_model.entry(&r.model_id).or_default();
        if !r.degenerate {
            entry.push(r.area_ratio);
        }
    }
    let mut skipped = Vec::new();
    by_model.retain(|m, v| {
        if v.len() < 2 {
            log::warn!("violin plot: model {m} has {} non-degenerate record(s), skipped", v.len());
            skipped.push(m.to_string());
        }
        v.len() >= 2
    });
    if by_model.is_empty() {
        return Err(Error::DegenerateSample("no model has two or more non-degenerate records to plot".into()));
    }
    let tag_of = |m: &str| tags.get(m).map_or(m.to_string(), Clone::clone);
    let tag_index: BTreeMap<String, usize> = by_model
        .keys()
        .map(|m| tag_of(m))
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, t)| (t, i))
        .collect();

    let shapes: Vec<(&str, &Vec<f64>, f64, f64, f64)> = by_model
        .iter()
        .map(|(m, v)| {
            let h = silverman_bandwidth(v);
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (*m, v, h, (lo - 3.0 * h).max(0.0), (hi + 3.0 * h).min(1.0))
        })
        .collect();
    let y_max = shapes.iter().map(|s| s.4).fold(0.0, f64::max).max(1e-6);
    let y_of = |v: f64| TOP + PLOT_HEIGHT * (1.0 - v / y_max);

    let width = LEFT + SLOT * shapes.len() as f64 + 20.0;
    let height = TOP + PLOT_HEIGHT + 60.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{}" stroke="black"/>"#,
        TOP + PLOT_HEIGHT
    );
    for i in 0..=4 {
        let v = y_max * i as f64 / 4.0;
        let y = y_of(v);
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{v:.3}</text>"#,
            LEFT - 4.0,
            LEFT - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{:.2}" transform="rotate(-90 14 {:.2})" text-anchor="middle">MPS area ratio</text>"#,
        TOP + PLOT_HEIGHT / 2.0,
        TOP + PLOT_HEIGHT / 2.0
    );

    for (i, (model, values, h, lo, hi)) in shapes.iter().enumerate() {
        let tag = tag_of(model);
        let colour = PALETTE[tag_index[&tag] % PALETTE.len()];
        let cx = LEFT + SLOT * (i as f64 + 0.5);
        let _ = writeln!(
            svg,
            r#"<g class="violin" data-model="{}" data-tag="{}">"#,
            escape(model),
            escape(&tag)
        );
        let mut sorted = (*values).clone();
        sorted.sort_by(f64::total_cmp);
        let median = quantile(&sorted, 0.5);
        if *h > 0.0 {
            let ys: Vec<f64> = (0..SAMPLES).map(|k| lo + (hi - lo) * k as f64 / (SAMPLES - 1) as f64).collect();
            let dens: Vec<f64> = ys.iter().map(|&y| gaussian_kde(values, *h, y)).collect();
            let peak = dens.iter().copied().fold(0.0, f64::max);
            let mut d = String::new();
            for (k, (y, den)) in ys.iter().zip(&dens).enumerate() {
                let _ = write!(d, "{}{:.2},{:.2} ", if k == 0 { "M" } else { "L" }, cx + HALF_WIDTH * den / peak, y_of(*y));
            }
            for (y, den) in ys.iter().zip(&dens).rev() {
                let _ = write!(d, "L{:.2},{:.2} ", cx - HALF_WIDTH * den / peak, y_of(*y));
            }
            d.push('Z');
            let _ = writeln!(svg, r#"<path d="{d}" fill="{colour}" fill-opacity="0.6" stroke="{colour}"/>"#);
        }
        let ym = y_of(median);
        let _ = writeln!(
            svg,
            r#"<line class="median" x1="{:.2}" y1="{ym:.2}" x2="{:.2}" y2="{ym:.2}" stroke="{}" stroke-width="2"/>"#,
            cx - HALF_WIDTH / 2.0,
            cx + HALF_WIDTH / 2.0,
            if *h > 0.0 { "black" } else { colour }
        );
        let _ = writeln!(
            svg,
            r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle">{}</text><text x="{cx:.2}" y="{:.2}" text-anchor="middle" fill="gray">n={}</text>"#,
            TOP + PLOT_HEIGHT + 18.0,
            escape(model),
            TOP + PLOT_HEIGHT + 34.0,
            values.len()
        );
        svg.push_str("</g>\n");
    }
    svg.push_str("</svg>\n");
    Ok((svg, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extraction::Extraction;
    use crate::tensor::PixelMask;

    fn rec(model: &str, image: &str, area: f64, degenerate: bool) -> MpsRecord {
        let mut r = MpsRecord::new(
            model,
            image,
            Extraction { mask: PixelMask::new(1, 1, true), target_class: 0, degenerate, oracle_calls: 0 },
            None,
            0,
        );
        r.area_ratio = area;
        r
    }

    #[test]
    fn one_group_per_plottable_model() {
        let mut recs = Vec::new();
        for i in 0..6 {
            recs.push(rec("a", &format!("{i}"), 0.05 + 0.01 * i as f64, false));
            recs.push(rec("b", &format!("{i}"), 0.2 + 0.03 * (i % 3) as f64, false));
        }
        recs.push(rec("c", "0", 0.1, false));
        recs.push(rec("c", "1", 0.0, true));
        let (svg, skipped) = plot_violin(&recs, &BTreeMap::new()).unwrap();
        assert_eq!(skipped, ["c"]);
        let doc = roxmltree::Document::parse(&svg).unwrap();
        let groups: Vec<_> = doc.descendants().filter(|n| n.attribute("class") == Some("violin")).collect();
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].attribute("data-model"), Some("a"));
        assert!(groups.iter().all(|g| g.children().any(|c| c.has_tag_name("path"))));
    }

    #[test]
    fn constant_sample_draws_a_tick() {
        let recs: Vec<_> = (0..4).map(|i| rec("m<&>", &format!("{i}"), 0.25, false)).collect();
        let (svg, _) = plot_violin(&recs, &BTreeMap::new()).unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        let g = doc.descendants().find(|n| n.attribute("class") == Some("violin")).unwrap();
        assert_eq!(g.attribute("data-model"), Some("m<&>"));
        assert!(!g.children().any(|c| c.has_tag_name("path")));
        assert!(g.children().any(|c| c.attribute("class") == Some("median")));
    }

    #[test]
    fn colours_follow_tags() {
        let mut recs = Vec::new();
        for m in ["x1", "x2", "y1"] {
            for i in 0..3 {
                recs.push(rec(m, &format!("{i}"), 0.1 * (i + 1) as f64, false));
            }
        }
        let tags: BTreeMap<String, String> =
            [("x1", "X"), ("x2", "X"), ("y1", "Y")].iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
        let (svg, _) = plot_violin(&recs, &tags).unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        let fills: Vec<&str> = doc
            .descendants()
            .filter(|n| n.has_tag_name("path"))
            .map(|n| n.attribute("fill").unwrap())
            .collect();
        assert_eq!(fills[0], fills[1]);
        assert_ne!(fills[0], fills[2]);
    }

    #[test]
    fn nothing_to_plot_is_an_error() {
        assert!(plot_violin(&[rec("a", "0", 0.1, false)], &BTreeMap::new()).is_err());
    }

    #[test]
    fn kde_integrates_to_one() {
        let v = [0.1, 0.15, 0.3, 0.31, 0.5];
        let h = silverman_bandwidth(&v);
        assert!(h > 0.0);
        let step = 1e-3;
        let total: f64 = (-2000..3000).map(|k| gaussian_kde(&v, h, k as f64 * step) * step).sum();
        assert!((total - 1.0).abs() < 1e-6);
    }
}
