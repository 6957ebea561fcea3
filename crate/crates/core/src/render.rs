//! SVG frames of a training snapshot and a metrics figure.
//!
//! Output is plain text built with `write!`, with every coordinate printed to
//! two decimals, so identical inputs give byte-identical files.

use std::fmt::Write;

use crate::error::SnapshotError;
use crate::model::{head_into, ForwardTrace, ModelParams};
use crate::numerics::NormVariant;
use crate::snapshot::{RunLog, Snapshot};
use crate::task::{enumerate_prefix_classes, PrefixClass, ProbeSequence, TaskSpec};
use crate::training::MetricsRow;

pub const GEOMETRIC_PANELS: [&str; 8] = [
    "position-embeddings",
    "normalized-embeddings",
    "attention-map",
    "value-transform",
    "sequence-embeddings",
    "transform-level-lines",
    "mlp-receptors",
    "loss-accuracy",
];

pub const DIMENSION_FREE_PANELS: [&str; 2] = ["attention-map", "loss-accuracy"];

pub const LEVEL_GRID: usize = 64;
const LEVEL_PADDING: f64 = 0.2;
const PANEL: f64 = 260.0;
const MARGIN: f64 = 28.0;

/// What a frame needs besides the snapshot itself.
#[derive(Clone, Copy, Debug)]
pub struct Layout<'a> {
    pub spec: TaskSpec,
    pub norm: NormVariant,
    pub probes: &'a [ProbeSequence],
    /// Metrics up to (at least) the snapshot epoch; later rows are ignored.
    pub history: &'a [MetricsRow],
}

impl<'a> Layout<'a> {
    pub fn for_log(log: &'a RunLog, history: &'a [MetricsRow]) -> Self {
        Self {
            spec: log.header.config.hyper.task,
            norm: log.header.config.hyper.norm,
            probes: &log.header.probes,
            history,
        }
    }
}

pub fn frame_file_name(epoch: usize) -> String {
    format!("frame_{epoch:06}.svg")
}

pub const METRICS_FIGURE: &str = "metrics.svg";

/// Stable color per prefix class: hues spaced around the wheel in the
/// enumeration order of [`enumerate_prefix_classes`].
pub fn class_color(spec: &TaskSpec, class: &PrefixClass) -> String {
    let classes = enumerate_prefix_classes(spec);
    let index = classes.binary_search(class).unwrap_or(0);
    hsl(360.0 * index as f64 / classes.len().max(1) as f64, 0.65, 0.45)
}

fn token_rgb(v: usize, p: usize) -> [f64; 3] {
    hsl_rgb(360.0 * v as f64 / p.max(1) as f64, 0.8, 0.5)
}

fn token_color(v: usize, p: usize) -> String {
    rgb_hex(token_rgb(v, p))
}

fn hsl(h: f64, s: f64, l: f64) -> String {
    rgb_hex(hsl_rgb(h, s, l))
}

fn hsl_rgb(h: f64, s: f64, l: f64) -> [f64; 3] {
    let c = (1.0 - (2.0 * l - 1.0).abs()) * s;
    let hp = (h % 360.0) / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = l - c / 2.0;
    [r + m, g + m, b + m]
}

fn rgb_hex([r, g, b]: [f64; 3]) -> String {
    let q = |x: f64| (x.clamp(0.0, 1.0) * 255.0).round() as u8;
    format!("#{:02x}{:02x}{:02x}", q(r), q(g), q(b))
}

/// Class-anchored hues mixed by `μ`, washed toward white as confidence drops.
pub fn probability_color(mu: &[f64]) -> String {
    let p = mu.len();
    let mut rgb = [0.0; 3];
    for (v, &m) in mu.iter().enumerate() {
        let c = token_rgb(v, p);
        for i in 0..3 {
            rgb[i] += m * c[i];
        }
    }
    let top = mu.iter().copied().fold(0.0, f64::max);
    let floor = 1.0 / p as f64;
    let confidence = if p > 1 { ((top - floor) / (1.0 - floor)).clamp(0.0, 1.0) } else { 1.0 };
    for x in &mut rgb {
        *x = 1.0 - confidence * (1.0 - *x);
    }
    rgb_hex(rgb)
}

/// Maps a data box onto a pixel box (y grows downward on screen).
#[derive(Clone, Copy)]
struct Frame {
    px: f64,
    py: f64,
    w: f64,
    h: f64,
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(px: f64, py: f64, w: f64, h: f64, (x0, x1): (f64, f64), (y0, y1): (f64, f64)) -> Self {
        let widen = |a: f64, b: f64| if b - a > 1e-12 { (a, b) } else { (a - 0.5, b + 0.5) };
        let (x0, x1) = widen(x0, x1);
        let (y0, y1) = widen(y0, y1);
        Self { px, py, w, h, x0, x1, y0, y1 }
    }

    fn x(&self, v: f64) -> f64 {
        self.px + (v - self.x0) / (self.x1 - self.x0) * self.w
    }

    fn y(&self, v: f64) -> f64 {
        self.py + self.h - (v - self.y0) / (self.y1 - self.y0) * self.h
    }
}

/// Bounding box of 2-D points, padded by `pad` of its extent, square.
fn square_box(points: &[[f64; 2]], pad: f64) -> ((f64, f64), (f64, f64)) {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    if !x0.is_finite() {
        return ((-1.0, 1.0), (-1.0, 1.0));
    }
    let side = (x1 - x0).max(y1 - y0).max(1e-9) * (1.0 + 2.0 * pad);
    let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
    ((cx - side / 2.0, cx + side / 2.0), (cy - side / 2.0, cy + side / 2.0))
}

fn marker(out: &mut String, x: f64, y: f64, spurious: bool, fill: &str, attrs: &str) {
    if spurious {
        let _ = write!(out, r#"<rect x="{:.2}" y="{:.2}" width="7.00" height="7.00" fill="{fill}"{attrs}/>"#, x - 3.5, y - 3.5);
    } else {
        let _ = write!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="4.00" fill="{fill}"{attrs}/>"#);
    }
}

fn open_panel(out: &mut String, id: &str, title: &str, px: f64, py: f64) {
    let _ = write!(
        out,
        r##"<g id="{id}" class="panel"><title>{title}</title><rect x="{px:.2}" y="{py:.2}" width="{PANEL:.2}" height="{PANEL:.2}" fill="none" stroke="#bbbbbb"/><text x="{:.2}" y="{:.2}" font-size="12" font-family="sans-serif">{title}</text>"##,
        px + 4.0,
        py - 6.0,
    );
}

fn inner(px: f64, py: f64) -> (f64, f64, f64, f64) {
    (px + 10.0, py + 10.0, PANEL - 20.0, PANEL - 20.0)
}

fn pair(v: &[f64]) -> [f64; 2] {
    [v[0], v[1]]
}

/// One frame. Geometric panels need `d = 2`; otherwise only the attention
/// map and the metric curves are drawn.
pub fn render_frame(snapshot: &Snapshot, layout: &Layout) -> String {
    let params = &snapshot.params;
    let geometric = params.embed_dim() == 2;
    let panels: &[&str] = if geometric { &GEOMETRIC_PANELS } else { &DIMENSION_FREE_PANELS };
    let cols = 4usize.min(panels.len());
    let rows = panels.len().div_ceil(cols);
    let width = cols as f64 * (PANEL + MARGIN) + MARGIN;
    let height = rows as f64 * (PANEL + MARGIN) + MARGIN + 20.0;

    let mut out = String::new();
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" data-epoch="{}"><rect width="100%" height="100%" fill="white"/><text x="{MARGIN:.2}" y="16.00" font-size="13" font-family="sans-serif">epoch {}</text>"#,
        snapshot.epoch, snapshot.epoch
    );
    for (i, id) in panels.iter().enumerate() {
        let px = MARGIN + (i % cols) as f64 * (PANEL + MARGIN);
        let py = MARGIN + 20.0 + (i / cols) as f64 * (PANEL + MARGIN);
        match *id {
            "position-embeddings" => position_panel(&mut out, params, layout, px, py),
            "normalized-embeddings" => normalized_panel(&mut out, params, layout, px, py),
            "attention-map" => attention_panel(&mut out, snapshot, layout, px, py),
            "value-transform" => value_panel(&mut out, params, layout, px, py),
            "sequence-embeddings" => sequence_panel(&mut out, snapshot, layout, px, py),
            "transform-level-lines" => level_panel(&mut out, snapshot, layout, px, py),
            "mlp-receptors" => mlp_panel(&mut out, params, px, py),
            _ => metrics_panel(&mut out, snapshot.epoch, layout.history, px, py),
        }
        out.push_str("</g>");
    }
    out.push_str("</svg>\n");
    out
}

fn position_panel(out: &mut String, params: &ModelParams, layout: &Layout, px: f64, py: f64) {
    open_panel(out, "position-embeddings", "Position embeddings", px, py);
    let points: Vec<[f64; 2]> = (0..params.seq_len()).map(|t| pair(params.position_embedding.row(t))).collect();
    let (bx, by) = square_box(&points, 0.15);
    let (x, y, w, h) = inner(px, py);
    let f = Frame::new(x, y, w, h, bx, by);
    for (t, p) in points.iter().enumerate() {
        let spurious = t >= layout.spec.prefix_len;
        let attrs = format!(r#" class="position" data-t="{t}" data-x="{:e}" data-y="{:e}""#, p[0], p[1]);
        marker(out, f.x(p[0]), f.y(p[1]), spurious, if spurious { "#888888" } else { "#222222" }, &attrs);
    }
}

fn normalized_panel(out: &mut String, params: &ModelParams, layout: &Layout, px: f64, py: f64) {
    open_panel(out, "normalized-embeddings", "Normalized embeddings", px, py);
    let (x, y, w, h) = inner(px, py);
    let f = Frame::new(x, y, w, h, (-1.3, 1.3), (-1.3, 1.3));
    let _ = write!(
        out,
        r##"<circle cx="{:.2}" cy="{:.2}" r="{:.2}" fill="none" stroke="#dddddd"/>"##,
        f.x(0.0),
        f.y(0.0),
        f.x(1.0) - f.x(0.0)
    );
    let p = params.vocab();
    for t in 0..params.seq_len() {
        for v in 0..p {
            let raw: Vec<f64> = params
                .token_embedding
                .row(v)
                .iter()
                .zip(params.position_embedding.row(t))
                .map(|(a, b)| a + b)
                .collect();
            let z = layout.norm.apply(&raw);
            let attrs = format!(r#" data-token="{v}" data-t="{t}""#);
            marker(out, f.x(z[0]), f.y(z[1]), t >= layout.spec.prefix_len, &token_color(v, p), &attrs);
        }
    }
    let qn = crate::numerics::norm(&params.query);
    if qn > 0.0 {
        let (qx, qy) = (params.query[0] / qn * 1.2, params.query[1] / qn * 1.2);
        let _ = write!(
            out,
            r##"<line class="query" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#000000" stroke-width="2"/><circle cx="{:.2}" cy="{:.2}" r="3.00" fill="#000000"/>"##,
            f.x(0.0),
            f.y(0.0),
            f.x(qx),
            f.y(qy),
            f.x(qx),
            f.y(qy)
        );
    }
}

fn attention_panel(out: &mut String, snapshot: &Snapshot, layout: &Layout, px: f64, py: f64) {
    open_panel(out, "attention-map", "Attention map", px, py);
    let attn = &snapshot.probe.attn;
    let (x, y, w, h) = inner(px, py);
    let rows = attn.len().max(1) as f64;
    let cols = attn.first().map_or(1, Vec::len).max(1) as f64;
    let (cw, ch) = (w / cols, h / rows);
    for (r, row) in attn.iter().enumerate() {
        for (c, &a) in row.iter().enumerate() {
            let shade = rgb_hex([1.0 - a, 1.0 - a, 1.0 - a]);
            let _ = write!(
                out,
                r#"<rect class="attn" x="{:.2}" y="{:.2}" width="{cw:.2}" height="{ch:.2}" fill="{shade}" data-row="{r}" data-col="{c}" data-value="{a:e}"/>"#,
                x + c as f64 * cw,
                y + r as f64 * ch,
            );
        }
    }
    let k = layout.spec.prefix_len as f64;
    let _ = write!(
        out,
        r##"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{:.2}" stroke="#cc3333" stroke-dasharray="3,2"/>"##,
        x + k * cw,
        x + k * cw,
        y + h
    );
}

fn value_panel(out: &mut String, params: &ModelParams, layout: &Layout, px: f64, py: f64) {
    open_panel(out, "value-transform", "Value transform", px, py);
    let p = params.vocab();
    let mut points = Vec::new();
    for t in 0..params.seq_len() {
        for v in 0..p {
            let raw: Vec<f64> = params
                .token_embedding
                .row(v)
                .iter()
                .zip(params.position_embedding.row(t))
                .map(|(a, b)| a + b)
                .collect();
            let vz = params.value.matvec(&layout.norm.apply(&raw));
            points.push((t, v, pair(&vz)));
        }
    }
    let coords: Vec<[f64; 2]> = points.iter().map(|p| p.2).collect();
    let (bx, by) = square_box(&coords, 0.1);
    let (x, y, w, h) = inner(px, py);
    let f = Frame::new(x, y, w, h, bx, by);
    for (t, v, c) in points {
        let attrs = format!(r#" data-token="{v}" data-t="{t}""#);
        marker(out, f.x(c[0]), f.y(c[1]), t >= layout.spec.prefix_len, &token_color(v, p), &attrs);
    }
}

fn sequence_panel(out: &mut String, snapshot: &Snapshot, layout: &Layout, px: f64, py: f64) {
    open_panel(out, "sequence-embeddings", "Sequence embeddings", px, py);
    let points: Vec<[f64; 2]> = snapshot.probe.xi.iter().map(|x| pair(x)).collect();
    let (bx, by) = square_box(&points, 0.1);
    let (x, y, w, h) = inner(px, py);
    let f = Frame::new(x, y, w, h, bx, by);
    for (probe, p) in layout.probes.iter().zip(&points) {
        let color = class_color(&layout.spec, &probe.class);
        let _ = write!(
            out,
            r#"<circle class="xi" cx="{:.2}" cy="{:.2}" r="3.50" fill="{color}" fill-opacity="0.8" data-class="{:?}"/>"#,
            f.x(p[0]),
            f.y(p[1]),
            probe.class.0
        );
    }
}

fn level_panel(out: &mut String, snapshot: &Snapshot, layout: &Layout, px: f64, py: f64) {
    open_panel(out, "transform-level-lines", "Transform level lines", px, py);
    let params = &snapshot.params;
    let points: Vec<[f64; 2]> = snapshot.probe.xi.iter().map(|x| pair(x)).collect();
    let (bx, by) = square_box(&points, LEVEL_PADDING);
    let (x, y, w, h) = inner(px, py);
    let f = Frame::new(x, y, w, h, bx, by);
    let mut trace = ForwardTrace::for_params(params);
    let (cw, ch) = (w / LEVEL_GRID as f64, h / LEVEL_GRID as f64);
    for i in 0..LEVEL_GRID {
        for j in 0..LEVEL_GRID {
            let gx = f.x0 + (i as f64 + 0.5) / LEVEL_GRID as f64 * (f.x1 - f.x0);
            let gy = f.y1 - (j as f64 + 0.5) / LEVEL_GRID as f64 * (f.y1 - f.y0);
            trace.xi.copy_from_slice(&[gx, gy]);
            head_into(params, layout.norm, &mut trace);
            let _ = write!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                x + i as f64 * cw,
                y + j as f64 * ch,
                cw + 0.05,
                ch + 0.05,
                probability_color(&trace.mu)
            );
        }
    }
    for (probe, p) in layout.probes.iter().zip(&points) {
        let _ = write!(
            out,
            r##"<circle cx="{:.2}" cy="{:.2}" r="2.50" fill="{}" stroke="#000000" stroke-width="0.5"/>"##,
            f.x(p[0]),
            f.y(p[1]),
            class_color(&layout.spec, &probe.class)
        );
    }
}

fn mlp_panel(out: &mut String, params: &ModelParams, px: f64, py: f64) {
    open_panel(out, "mlp-receptors", "MLP receptors and assemblers", px, py);
    let receptors: Vec<[f64; 2]> = (0..params.hidden()).map(|i| pair(params.receptors.row(i))).collect();
    let assemblers: Vec<[f64; 2]> = (0..params.hidden()).map(|i| [params.assemblers[(0, i)], params.assemblers[(1, i)]]).collect();
    let all: Vec<[f64; 2]> = receptors.iter().chain(&assemblers).copied().chain([[0.0, 0.0]]).collect();
    let (bx, by) = square_box(&all, 0.1);
    let (x, y, w, h) = inner(px, py);
    let f = Frame::new(x, y, w, h, bx, by);
    for (i, r) in receptors.iter().enumerate() {
        let _ = write!(
            out,
            r##"<line class="receptor" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#3366cc" data-i="{i}"/>"##,
            f.x(0.0),
            f.y(0.0),
            f.x(r[0]),
            f.y(r[1])
        );
    }
    for (i, a) in assemblers.iter().enumerate() {
        let _ = write!(
            out,
            r##"<circle class="assembler" cx="{:.2}" cy="{:.2}" r="2.50" fill="#dd7722" data-i="{i}"/>"##,
            f.x(a[0]),
            f.y(a[1])
        );
    }
}

fn metrics_panel(out: &mut String, epoch: usize, history: &[MetricsRow], px: f64, py: f64) {
    open_panel(out, "loss-accuracy", "Loss and accuracy", px, py);
    let rows: Vec<&MetricsRow> = history.iter().filter(|r| r.epoch <= epoch).collect();
    let (x, y, w, h) = inner(px, py);
    let last_epoch = history.last().map_or(epoch, |r| r.epoch.max(epoch)) as f64;
    let top = rows.iter().map(|r| r.train_loss.max(r.test_loss)).fold(1.0, f64::max);
    let f = Frame::new(x, y, w, h, (0.0, last_epoch.max(1.0)), (0.0, top));
    let series: [(&str, &str, fn(&MetricsRow) -> f64, f64); 4] = [
        ("train_loss", "#1f77b4", |r| r.train_loss, 1.0),
        ("test_loss", "#ff7f0e", |r| r.test_loss, 1.0),
        ("train_acc", "#2ca02c", |r| r.train_acc, top),
        ("test_acc", "#d62728", |r| r.test_acc, top),
    ];
    for (name, color, get, scale) in series {
        polyline(out, name, color, rows.iter().map(|r| (f.x(r.epoch as f64), f.y(get(r) * scale))));
    }
    if let Some(r) = rows.last() {
        let _ = write!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="10" font-family="monospace">loss {:.3}/{:.3} acc {:.3}/{:.3}</text>"#,
            x + 2.0,
            y + 10.0,
            r.train_loss,
            r.test_loss,
            r.train_acc,
            r.test_acc
        );
    }
}

fn polyline(out: &mut String, name: &str, color: &str, points: impl Iterator<Item = (f64, f64)>) {
    let _ = write!(out, r#"<polyline class="series" data-series="{name}" fill="none" stroke="{color}" stroke-width="1.2" points=""#);
    let mut first = true;
    for (x, y) in points {
        if !first {
            out.push(' ');
        }
        first = false;
        let _ = write!(out, "{x:.2},{y:.2}");
    }
    out.push_str(r#""/>"#);
}

pub const METRIC_PLOTS: [&str; 4] = ["loss", "accuracy", "grad-norms-log", "grad-norms-linear"];

const GRAD_SERIES: [(&str, &str); 6] = [
    ("grad_E", "#8c564b"),
    ("grad_P", "#e377c2"),
    ("grad_q", "#1f77b4"),
    ("grad_V", "#ff7f0e"),
    ("grad_W", "#2ca02c"),
    ("grad_U", "#d62728"),
];

fn grad_values(r: &MetricsRow) -> [f64; 6] {
    [
        r.grad_token_embedding,
        r.grad_position_embedding,
        r.grad_query,
        r.grad_value,
        r.grad_receptors,
        r.grad_assemblers,
    ]
}

/// Loss, accuracy and per-layer gradient norms (log and linear) against epoch.
pub fn render_metrics(rows: &[MetricsRow]) -> Result<String, SnapshotError> {
    if rows.len() < 2 {
        return Err(SnapshotError::TooFewRows { needed: 2, found: rows.len() });
    }
    let (pw, ph) = (300.0, 220.0);
    let width = 4.0 * (pw + MARGIN) + MARGIN;
    let height = ph + 2.0 * MARGIN + 20.0;
    let e0 = rows[0].epoch as f64;
    let e1 = rows.last().map_or(1.0, |r| r.epoch as f64);

    let mut out = String::new();
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}"><rect width="100%" height="100%" fill="white"/>"#
    );
    for (i, id) in METRIC_PLOTS.iter().enumerate() {
        let px = MARGIN + i as f64 * (pw + MARGIN);
        let py = MARGIN + 10.0;
        let _ = write!(
            out,
            r##"<g id="{id}" class="subplot"><rect x="{px:.2}" y="{py:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="#bbbbbb"/><text x="{:.2}" y="{:.2}" font-size="12" font-family="sans-serif">{id}</text>"##,
            px + 4.0,
            py - 6.0
        );
        match *id {
            "loss" => {
                let top = rows.iter().map(|r| r.train_loss.max(r.test_loss)).fold(0.0, f64::max);
                let f = Frame::new(px, py, pw, ph, (e0, e1), (0.0, top));
                polyline(&mut out, "train_loss", "#1f77b4", rows.iter().map(|r| (f.x(r.epoch as f64), f.y(r.train_loss))));
                polyline(&mut out, "test_loss", "#ff7f0e", rows.iter().map(|r| (f.x(r.epoch as f64), f.y(r.test_loss))));
            }
            "accuracy" => {
                let f = Frame::new(px, py, pw, ph, (e0, e1), (0.0, 1.0));
                polyline(&mut out, "train_acc", "#1f77b4", rows.iter().map(|r| (f.x(r.epoch as f64), f.y(r.train_acc))));
                polyline(&mut out, "test_acc", "#ff7f0e", rows.iter().map(|r| (f.x(r.epoch as f64), f.y(r.test_acc))));
            }
            "grad-norms-log" => {
                let positive = rows.iter().flat_map(grad_values).filter(|&g| g > 0.0);
                let lo = positive.clone().fold(f64::INFINITY, f64::min);
                let hi = positive.fold(0.0, f64::max);
                let (lo, hi) = if lo.is_finite() { (lo.log10(), hi.log10()) } else { (-1.0, 0.0) };
                let f = Frame::new(px, py, pw, ph, (e0, e1), (lo, hi));
                for (k, (name, color)) in GRAD_SERIES.iter().enumerate() {
                    let pts = rows.iter().filter(|r| grad_values(r)[k] > 0.0).map(|r| (f.x(r.epoch as f64), f.y(grad_values(r)[k].log10())));
                    polyline(&mut out, name, color, pts);
                }
            }
            _ => {
                let hi = rows.iter().flat_map(grad_values).fold(0.0, f64::max);
                let f = Frame::new(px, py, pw, ph, (e0, e1), (0.0, hi));
                for (k, (name, color)) in GRAD_SERIES.iter().enumerate() {
                    polyline(&mut out, name, color, rows.iter().map(|r| (f.x(r.epoch as f64), f.y(grad_values(r)[k]))));
                }
            }
        }
        out.push_str("</g>");
    }
    out.push_str("</svg>\n");
    Ok(out)
}

pub fn render_metrics_from_log(log: &RunLog) -> Result<String, SnapshotError> {
    render_metrics(&log.metrics())
}
