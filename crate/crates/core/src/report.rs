//! Tables, SVG bar charts and per-stage explanations of sweep results.

use std::fmt::Write as _;

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::roofline::{PhaseLatency, PhaseResult, Resource, ResourceTimes};
use crate::search::{compare_types, SweepResult};
use crate::workload::Phase;

/// Column order of the CSV table. Stable.
pub const CSV_COLUMNS: [&str; 10] = [
    "gpu",
    "model",
    "phase",
    "tp",
    "batch",
    "ttft_s",
    "tbt_s",
    "tput_tok_s",
    "tput_per_sm",
    "bottleneck",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Json,
}

/// `%g`-style rendering with 6 significant digits and a dot decimal
/// separator regardless of locale.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

struct Row<'a> {
    gpu: &'a str,
    model: &'a str,
    phase: Phase,
    tp: u32,
    batch: u64,
    ttft: f64,
    tbt: f64,
    tput: f64,
    per_sm: f64,
    bottleneck: Resource,
}

/// Best configs ordered by GPU type, then model, then phase. Types without
/// a feasible config are left out.
fn rows(sweeps: &[SweepResult]) -> Vec<Row<'_>> {
    let mut order: Vec<&str> = Vec::new();
    for s in sweeps {
        for g in &s.gpus {
            if !order.iter().any(|n| n.eq_ignore_ascii_case(&g.gpu.name)) {
                order.push(&g.gpu.name);
            }
        }
    }
    let mut out = Vec::new();
    for gpu in order {
        for s in sweeps {
            let Some(g) = s.gpu(gpu) else { continue };
            for phase in Phase::ALL {
                if let Some(b) = g.best(phase) {
                    let m = &b.result.metrics;
                    out.push(Row {
                        gpu: &g.gpu.name,
                        model: &s.model,
                        phase,
                        tp: b.config.tp,
                        batch: b.config.batch,
                        ttft: m.ttft,
                        tbt: m.tbt,
                        tput: m.tput(phase),
                        per_sm: m.tput_per_sm(phase),
                        bottleneck: m.bottleneck(phase),
                    });
                }
            }
        }
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn rounded(x: f64) -> Value {
    fmt_sig(x)
        .parse::<f64>()
        .ok()
        .and_then(serde_json::Number::from_f64)
        .map_or(Value::Null, Value::Number)
}

/// One row per (GPU type, model, phase) best config.
pub fn emit_table(sweeps: &[SweepResult], format: TableFormat) -> String {
    match format {
        TableFormat::Csv => {
            let mut out = CSV_COLUMNS.join(",");
            out.push('\n');
            for r in rows(sweeps) {
                let fields = [
                    csv_field(r.gpu),
                    csv_field(r.model),
                    r.phase.to_string(),
                    r.tp.to_string(),
                    r.batch.to_string(),
                    fmt_sig(r.ttft),
                    fmt_sig(r.tbt),
                    fmt_sig(r.tput),
                    fmt_sig(r.per_sm),
                    r.bottleneck.to_string(),
                ];
                out.push_str(&fields.join(","));
                out.push('\n');
            }
            out
        }
        TableFormat::Json => {
            let models: Vec<Value> = sweeps
                .iter()
                .map(|s| {
                    let gpus: Vec<Value> = s
                        .gpus
                        .iter()
                        .map(|g| {
                            let mut entry = Map::new();
                            entry.insert("gpu".into(), json!(g.gpu.name));
                            for phase in Phase::ALL {
                                let v = match g.best(phase) {
                                    Some(b) => {
                                        let m = &b.result.metrics;
                                        json!({
                                            "tp": b.config.tp,
                                            "batch": b.config.batch,
                                            "ttft_s": rounded(m.ttft),
                                            "tbt_s": rounded(m.tbt),
                                            "tput_tok_s": rounded(m.tput(phase)),
                                            "tput_per_sm": rounded(m.tput_per_sm(phase)),
                                            "bottleneck": m.bottleneck(phase),
                                        })
                                    }
                                    None => json!({
                                        "feasible": false,
                                        "binding_constraint": g.binding_constraint(),
                                    }),
                                };
                                entry.insert(phase.to_string(), v);
                            }
                            Value::Object(entry)
                        })
                        .collect();
                    json!({ "model": s.model, "gpus": gpus })
                })
                .collect();
            let mut out =
                serde_json::to_string_pretty(&json!({ "columns": CSV_COLUMNS, "models": models }))
                    .expect("plain JSON values serialize");
            out.push('\n');
            out
        }
    }
}

/// Grouped bar chart: models along x, one bar per GPU type.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartSpec {
    pub phase: Phase,
    pub models: Vec<String>,
    pub gpus: Vec<String>,
    /// `values[model][gpu]`, tokens/s/SM or the ratio to `normalized_to`.
    pub values: Vec<Vec<f64>>,
    pub normalized_to: Option<String>,
}

impl ChartSpec {
    /// Missing results chart as zero-height bars.
    pub fn from_sweeps(
        sweeps: &[SweepResult],
        phase: Phase,
        normalize: Option<&str>,
    ) -> Result<ChartSpec> {
        let mut gpus: Vec<String> = Vec::new();
        for s in sweeps {
            for g in &s.gpus {
                if !gpus.iter().any(|n| n.eq_ignore_ascii_case(&g.gpu.name)) {
                    gpus.push(g.gpu.name.clone());
                }
            }
        }
        let cmp = normalize.map(|b| compare_types(sweeps, b)).transpose()?;
        let values = sweeps
            .iter()
            .map(|s| {
                gpus.iter()
                    .map(|gpu| {
                        let v = match &cmp {
                            Some(c) => c.ratio(&s.model, gpu, phase),
                            None => s
                                .gpu(gpu)
                                .and_then(|g| g.best(phase))
                                .map(|b| b.result.metrics.tput_per_sm(phase)),
                        };
                        v.unwrap_or(0.0)
                    })
                    .collect()
            })
            .collect();
        Ok(ChartSpec {
            phase,
            models: sweeps.iter().map(|s| s.model.clone()).collect(),
            gpus,
            values,
            normalized_to: normalize.map(str::to_string),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.len() != self.models.len()
            || self.values.iter().any(|r| r.len() != self.gpus.len())
        {
            return Err(Error::invalid(
                "chart.values",
                "must have one row per model and one column per GPU type",
            ));
        }
        if let Some(v) = self
            .values
            .iter()
            .flatten()
            .find(|v| !(v.is_finite() && **v >= 0.0))
        {
            return Err(Error::invalid(
                "chart.values",
                format!("must be finite and >= 0, got {v}"),
            ));
        }
        Ok(())
    }
}

const PALETTE: [&str; 8] = [
    "#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860", "#da8bc3", "#8c8c8c",
];

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Smallest 1/2/5 × 10ⁿ at or above `x`.
fn nice_ceiling(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let mag = 10f64.powf(x.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|&v| v >= x)
        .unwrap_or(10.0 * mag)
}

/// Standalone SVG 1.1 document. Bar heights are exactly proportional to
/// the values.
pub fn emit_barchart(chart: &ChartSpec) -> Result<String> {
    chart.validate()?;
    let (left, right, top, bottom) = (80.0, 190.0, 50.0, 70.0);
    let group_w = (chart.gpus.len().max(1) as f64) * 22.0 + 30.0;
    let plot_w = (chart.models.len().max(1) as f64 * group_w).max(240.0);
    let plot_h = 300.0;
    let width = left + plot_w + right;
    let height = top + plot_h + bottom;
    let vmax = chart.values.iter().flatten().copied().fold(0.0, f64::max);
    let ymax = nice_ceiling(vmax);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<?xml version="1.0" encoding="UTF-8" standalone="no"?>"#
    );
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let title = match chart.phase {
        Phase::Prefill => "Prompt prefill",
        Phase::Decode => "Decode",
    };
    let _ = writeln!(s, r#"<title>{title}</title>"#);
    let _ = writeln!(
        s,
        r#"<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="28" text-anchor="middle" font-size="16">{title}</text>"#,
        left + plot_w / 2.0
    );

    // Axes, ticks and grid.
    let base_y = top + plot_h;
    for i in 0..=5 {
        let v = ymax * f64::from(i) / 5.0;
        let y = base_y - plot_h * f64::from(i) / 5.0;
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{y}" x2="{}" y2="{y}" stroke="#dddddd"/>"##,
            left + plot_w
        );
        let _ = writeln!(
            s,
            r#"<text class="tick" x="{}" y="{}" text-anchor="end">{}</text>"#,
            left - 6.0,
            y + 4.0,
            fmt_sig(v)
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{base_y}" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{base_y}" x2="{}" y2="{base_y}" stroke="black"/>"#,
        left + plot_w
    );
    let y_label = match &chart.normalized_to {
        Some(b) => format!("Tokens/s/SM relative to {}", xml_escape(b)),
        None => "Tokens/s/SM".to_string(),
    };
    let _ = writeln!(
        s,
        r#"<text class="axis-label" x="20" y="{}" text-anchor="middle" transform="rotate(-90 20 {})">{y_label}</text>"#,
        top + plot_h / 2.0,
        top + plot_h / 2.0
    );
    let _ = writeln!(
        s,
        r#"<text class="axis-label" x="{}" y="{}" text-anchor="middle">Model</text>"#,
        left + plot_w / 2.0,
        height - 15.0
    );

    // Bars.
    let slot = plot_w / chart.models.len().max(1) as f64;
    let bar_w = (slot - 30.0) / chart.gpus.len().max(1) as f64;
    for (mi, model) in chart.models.iter().enumerate() {
        let gx = left + slot * mi as f64 + 15.0;
        let _ = writeln!(
            s,
            r#"<g class="model-group" data-model="{}">"#,
            xml_escape(model)
        );
        for (gi, gpu) in chart.gpus.iter().enumerate() {
            let v = chart.values[mi][gi];
            let h = v / ymax * plot_h;
            let _ = writeln!(
                s,
                r#"<rect class="bar" data-gpu="{}" data-value="{}" x="{}" y="{}" width="{}" height="{}" fill="{}"/>"#,
                xml_escape(gpu),
                v,
                gx + bar_w * gi as f64,
                base_y - h,
                bar_w,
                h,
                PALETTE[gi % PALETTE.len()]
            );
        }
        let _ = writeln!(
            s,
            r#"<text class="model-label" x="{}" y="{}" text-anchor="middle">{}</text>"#,
            left + slot * (mi as f64 + 0.5),
            base_y + 20.0,
            xml_escape(model)
        );
        let _ = writeln!(s, "</g>");
    }

    // Legend.
    let lx = left + plot_w + 20.0;
    let _ = writeln!(s, r#"<g class="legend">"#);
    for (gi, gpu) in chart.gpus.iter().enumerate() {
        let y = top + 20.0 * gi as f64;
        let _ = writeln!(
            s,
            r#"<g class="legend-entry"><rect x="{lx}" y="{y}" width="12" height="12" fill="{}"/><text x="{}" y="{}">{}</text></g>"#,
            PALETTE[gi % PALETTE.len()],
            lx + 18.0,
            y + 10.0,
            xml_escape(gpu)
        );
    }
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    Ok(s)
}

/// Stages sharing a label and binding resource, summed across layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplainRow {
    pub label: &'static str,
    pub bound: Resource,
    pub count: usize,
    pub times: ResourceTimes,
    pub time: f64,
}

pub fn explain_rows(latency: &PhaseLatency) -> Vec<ExplainRow> {
    let mut rows: Vec<ExplainRow> = Vec::new();
    for st in &latency.stages {
        let row = match rows
            .iter_mut()
            .find(|r| r.label == st.label() && r.bound == st.bottleneck)
        {
            Some(r) => r,
            None => {
                rows.push(ExplainRow {
                    label: st.label(),
                    bound: st.bottleneck,
                    count: 0,
                    times: ResourceTimes::default(),
                    time: 0.0,
                });
                rows.last_mut().expect("just pushed")
            }
        };
        row.count += 1;
        row.times.compute += st.times.compute;
        row.times.memory += st.times.memory;
        row.times.network += st.times.network;
        row.time += st.time;
    }
    rows
}

/// Metrics followed by a per-stage time table for each phase.
pub fn explain(result: &PhaseResult) -> String {
    let m = &result.metrics;
    let mut s = String::new();
    let _ = writeln!(s, "ttft_s           {}", fmt_sig(m.ttft));
    let _ = writeln!(s, "tbt_s            {}", fmt_sig(m.tbt));
    let _ = writeln!(s, "prefill_tok_s    {}", fmt_sig(m.prefill_tput));
    let _ = writeln!(s, "decode_tok_s     {}", fmt_sig(m.decode_tput));
    let _ = writeln!(s, "prefill_per_sm   {}", fmt_sig(m.prefill_tput_per_sm));
    let _ = writeln!(s, "decode_per_sm    {}", fmt_sig(m.decode_tput_per_sm));
    let _ = writeln!(s, "mem_per_gpu_gb   {}", fmt_sig(m.mem_per_gpu_bytes / 1e9));
    let _ = writeln!(s, "fits_memory      {}", m.fits_memory);
    for phase in Phase::ALL {
        let lat = result.breakdown(phase);
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "[{phase}] total {} s, bound by {}",
            fmt_sig(lat.total),
            m.bottleneck(phase)
        );
        let _ = writeln!(
            s,
            "{:<24} {:>5} {:>12} {:>12} {:>12} {:>12}  bound",
            "stage", "count", "compute_s", "memory_s", "network_s", "time_s"
        );
        for r in explain_rows(lat) {
            let _ = writeln!(
                s,
                "{:<24} {:>5} {:>12} {:>12} {:>12} {:>12}  {}",
                r.label,
                r.count,
                fmt_sig(r.times.compute),
                fmt_sig(r.times.memory),
                fmt_sig(r.times.network),
                fmt_sig(r.time),
                r.bound
            );
        }
    }
    s
}
