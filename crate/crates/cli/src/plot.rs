//! Line chart of mean slot count versus threshold, rendered straight from the
//! aggregate CSV text so the plot can never drift from the recorded data.

use anyhow::{bail, Result};
use std::collections::BTreeMap;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 440.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_R: f64 = 130.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 50.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// Per variant: tau_db -> mean total_slots, keys ordered.
type Series = BTreeMap<String, BTreeMap<u64, (f64, f64)>>;

fn parse_aggregate(csv: &str) -> Result<Series> {
    let mut sums: BTreeMap<String, BTreeMap<u64, (f64, usize)>> = BTreeMap::new();
    for line in csv.lines() {
        if line.starts_with('#') || line.is_empty() || line.starts_with("variant,") {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() < 4 {
            bail!("malformed aggregate row: {line}");
        }
        let tau: f64 = parts[1].parse()?;
        let slots: f64 = parts[3].parse()?;
        let entry = sums
            .entry(parts[0].to_string())
            .or_default()
            .entry(tau.to_bits())
            .or_insert((0.0, 0));
        entry.0 += slots;
        entry.1 += 1;
    }
    if sums.is_empty() {
        bail!("aggregate CSV contains no data rows");
    }
    Ok(sums
        .into_iter()
        .map(|(variant, by_tau)| {
            let means = by_tau
                .into_iter()
                .map(|(bits, (sum, n))| (bits, (f64::from_bits(bits), sum / n as f64)))
                .collect();
            (variant, means)
        })
        .collect())
}

/// Render the mean-slots-vs-threshold chart as an SVG document.
pub fn render_slots_vs_tau(aggregate_csv: &str) -> Result<String> {
    let series = parse_aggregate(aggregate_csv)?;
    let taus: Vec<f64> = {
        let mut bits: Vec<u64> = series
            .values()
            .flat_map(|m| m.values().map(|&(t, _)| t.to_bits()))
            .collect();
        bits.sort_unstable();
        bits.dedup();
        bits.into_iter().map(f64::from_bits).collect()
    };
    let (tau_min, tau_max) = (taus[0], *taus.last().unwrap());
    let y_max = series
        .values()
        .flat_map(|m| m.values().map(|&(_, s)| s))
        .fold(1.0f64, f64::max);

    let px = |t: f64| {
        let span = (tau_max - tau_min).max(1e-12);
        MARGIN_L + (t - tau_min) / span * (WIDTH - MARGIN_L - MARGIN_R)
    };
    let py = |s: f64| HEIGHT - MARGIN_B - s / (y_max * 1.05) * (HEIGHT - MARGIN_T - MARGIN_B);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));
    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{MARGIN_L}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\n",
        HEIGHT - MARGIN_B,
        WIDTH - MARGIN_R
    ));
    svg.push_str(&format!(
        "<line x1=\"{MARGIN_L}\" y1=\"{MARGIN_T}\" x2=\"{MARGIN_L}\" y2=\"{}\" stroke=\"black\"/>\n",
        HEIGHT - MARGIN_B
    ));
    for &t in &taus {
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{t}</text>\n",
            px(t),
            HEIGHT - MARGIN_B + 18.0
        ));
    }
    let y_ticks = 5;
    for k in 0..=y_ticks {
        let v = y_max * 1.05 * k as f64 / y_ticks as f64;
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{:.1}</text>\n",
            MARGIN_L - 8.0,
            py(v) + 4.0,
            v
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">SNR threshold (dB)</text>\n",
        (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
        HEIGHT - 12.0
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">mean slots</text>\n",
        HEIGHT / 2.0,
        HEIGHT / 2.0
    ));

    for (idx, (variant, means)) in series.iter().enumerate() {
        let color = COLORS[idx % COLORS.len()];
        let pts: Vec<String> = means
            .values()
            .map(|&(t, s)| format!("{:.2},{:.2}", px(t), py(s)))
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            pts.join(" ")
        ));
        for &(t, s) in means.values() {
            svg.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>\n",
                px(t),
                py(s)
            ));
        }
        let ly = MARGIN_T + 18.0 * idx as f64;
        svg.push_str(&format!(
            "<line x1=\"{0}\" y1=\"{ly}\" x2=\"{1}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>\n\
             <text x=\"{2}\" y=\"{3:.1}\">{variant}</text>\n",
            WIDTH - MARGIN_R + 10.0,
            WIDTH - MARGIN_R + 34.0,
            WIDTH - MARGIN_R + 40.0,
            ly + 4.0
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CSV: &str = "# ris-access aggregate v1: variant,tau_db,seed,total_slots,unreachable\n\
                       variant,tau_db,seed,total_slots,unreachable\n\
                       p3,10,0,4,0\np3,10,1,6,0\np3,12,0,7,0\np3,12,1,7,0\n\
                       sweep,10,0,16,0\nsweep,12,0,16,0\n";

    #[test]
    fn means_computed_per_variant_and_tau() {
        let s = parse_aggregate(CSV).unwrap();
        let p3 = &s["p3"];
        assert_eq!(p3[&10f64.to_bits()].1, 5.0);
        assert_eq!(p3[&12f64.to_bits()].1, 7.0);
        assert_eq!(s["sweep"][&10f64.to_bits()].1, 16.0);
    }

    #[test]
    fn svg_contains_one_polyline_per_variant() {
        let svg = render_slots_vs_tau(CSV).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains(">p3<"));
        assert!(svg.contains(">sweep<"));
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn empty_csv_rejected() {
        assert!(render_slots_vs_tau("# header only\n").is_err());
    }
}
