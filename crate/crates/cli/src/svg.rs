//! Deterministic SVG 1.1 rendering of transport paths: sources as open
//! circles, sinks filled, edge stroke width scaling with flow^alpha, slack
//! atoms annotated. Three-dimensional problems project onto the xy plane.

use std::fmt::Write as _;

use rotpb_core::{Side, SolveReport, TransportPath, VertexKind};

use crate::schema::ProblemFile;

const WIDTH: f64 = 800.0;
const MARGIN: f64 = 40.0;

struct Frame {
    min_x: f64,
    min_y: f64,
    scale: f64,
    height: f64,
}

impl Frame {
    fn from_points(points: &[(f64, f64)]) -> Frame {
        let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in points {
            min_x = min_x.min(x);
            max_x = max_x.max(x);
            min_y = min_y.min(y);
            max_y = max_y.max(y);
        }
        if !min_x.is_finite() {
            (min_x, max_x, min_y, max_y) = (0.0, 1.0, 0.0, 1.0);
        }
        let span_x = (max_x - min_x).max(1e-9);
        let span_y = (max_y - min_y).max(1e-9);
        let scale = (WIDTH - 2.0 * MARGIN) / span_x;
        Frame {
            min_x,
            min_y,
            scale,
            height: span_y * scale + 2.0 * MARGIN,
        }
    }

    fn x(&self, x: f64) -> f64 {
        MARGIN + (x - self.min_x) * self.scale
    }

    /// SVG y grows downward; flip so the plot reads like the plane.
    fn y(&self, y: f64) -> f64 {
        self.height - MARGIN - (y - self.min_y) * self.scale
    }
}

fn xy(coords: &[f64]) -> (f64, f64) {
    (coords[0], if coords.len() > 1 { coords[1] } else { 0.0 })
}

/// Renders a solve report. When the problem is available, unused atoms are
/// drawn too and slack atoms are annotated with their unmoved mass.
pub fn render_solve(report: &SolveReport, problem: Option<&ProblemFile>) -> String {
    let mut points: Vec<(f64, f64)> = report
        .path
        .vertices()
        .iter()
        .map(|v| xy(&v.position.coords))
        .collect();
    if let Some(p) = problem {
        points.extend(p.sources.iter().map(|a| xy(&a.position)));
        points.extend(p.sinks.iter().map(|a| xy(&a.position)));
        points.push(xy(&p.domain.min));
        points.push(xy(&p.domain.max));
    }
    let frame = Frame::from_points(&points);
    let mut out = String::new();
    header(&mut out, &frame);
    edges(&mut out, &frame, &report.path, report.alpha);

    match problem {
        Some(p) => {
            let slack_src: Vec<usize> = report
                .components
                .iter()
                .filter_map(|c| match c.slack_atom {
                    Some((Side::Source, i)) => Some(i),
                    _ => None,
                })
                .collect();
            let slack_snk: Vec<usize> = report
                .components
                .iter()
                .filter_map(|c| match c.slack_atom {
                    Some((Side::Sink, j)) => Some(j),
                    _ => None,
                })
                .collect();
            let slack_amount = |side: Side, idx: usize| {
                report
                    .components
                    .iter()
                    .find(|c| c.slack_atom == Some((side, idx)))
                    .map(|c| c.slack_amount)
                    .unwrap_or(0.0)
            };
            for (i, a) in p.sources.iter().enumerate() {
                let (x, y) = xy(&a.position);
                circle(&mut out, &frame, x, y, a.mass, false);
                if slack_src.contains(&i) {
                    annotate_slack(&mut out, &frame, x, y, slack_amount(Side::Source, i));
                }
            }
            for (j, a) in p.sinks.iter().enumerate() {
                let (x, y) = xy(&a.position);
                circle(&mut out, &frame, x, y, a.mass, true);
                if slack_snk.contains(&j) {
                    annotate_slack(&mut out, &frame, x, y, slack_amount(Side::Sink, j));
                }
            }
        }
        None => {
            if let Ok(boundary) = report.path.boundary() {
                for a in &boundary.negative.atoms {
                    let (x, y) = xy(&a.position.coords);
                    circle(&mut out, &frame, x, y, a.mass, false);
                }
                for a in &boundary.positive.atoms {
                    let (x, y) = xy(&a.position.coords);
                    circle(&mut out, &frame, x, y, a.mass, true);
                }
            }
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Renders a bare path (used for sweep records and the oracle).
pub fn render_path(path: &TransportPath, alpha: f64) -> String {
    let points: Vec<(f64, f64)> = path
        .vertices()
        .iter()
        .map(|v| xy(&v.position.coords))
        .collect();
    let frame = Frame::from_points(&points);
    let mut out = String::new();
    header(&mut out, &frame);
    edges(&mut out, &frame, path, alpha);
    for v in path.vertices() {
        if v.kind == VertexKind::Boundary {
            let (x, y) = xy(&v.position.coords);
            circle(&mut out, &frame, x, y, 1.0, false);
        }
    }
    out.push_str("</svg>\n");
    out
}

fn header(out: &mut String, frame: &Frame) {
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{WIDTH:.0}\" height=\"{:.0}\" viewBox=\"0 0 {WIDTH:.0} {:.0}\">",
        frame.height.ceil(),
        frame.height.ceil()
    );
    let _ = writeln!(
        out,
        "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>"
    );
}

fn edges(out: &mut String, frame: &Frame, path: &TransportPath, alpha: f64) {
    let max_w = path
        .edges()
        .iter()
        .map(|e| e.flow.powf(alpha))
        .fold(0.0f64, f64::max)
        .max(1e-12);
    for e in path.edges() {
        let (x1, y1) = xy(&path.vertices()[e.tail].position.coords);
        let (x2, y2) = xy(&path.vertices()[e.head].position.coords);
        let w = 0.5 + 5.5 * e.flow.powf(alpha) / max_w;
        let _ = writeln!(
            out,
            "  <line x1=\"{:.3}\" y1=\"{:.3}\" x2=\"{:.3}\" y2=\"{:.3}\" stroke=\"#334155\" stroke-width=\"{:.3}\" stroke-linecap=\"round\"/>",
            frame.x(x1), frame.y(y1), frame.x(x2), frame.y(y2), w
        );
    }
}

fn circle(out: &mut String, frame: &Frame, x: f64, y: f64, mass: f64, filled: bool) {
    let r = 4.0 + 3.0 * mass.max(0.0).sqrt();
    let (fill, stroke) = if filled {
        ("#0f172a", "none")
    } else {
        ("none", "#0f172a")
    };
    let _ = writeln!(
        out,
        "  <circle cx=\"{:.3}\" cy=\"{:.3}\" r=\"{:.3}\" fill=\"{fill}\" stroke=\"{stroke}\" stroke-width=\"1.5\"/>",
        frame.x(x),
        frame.y(y),
        r
    );
}

fn annotate_slack(out: &mut String, frame: &Frame, x: f64, y: f64, amount: f64) {
    let _ = writeln!(
        out,
        "  <circle cx=\"{:.3}\" cy=\"{:.3}\" r=\"12\" fill=\"none\" stroke=\"#dc2626\" stroke-width=\"1\" stroke-dasharray=\"3 2\"/>",
        frame.x(x),
        frame.y(y)
    );
    let _ = writeln!(
        out,
        "  <text x=\"{:.3}\" y=\"{:.3}\" font-size=\"11\" font-family=\"monospace\" fill=\"#dc2626\">slack {amount:.6}</text>",
        frame.x(x) + 14.0,
        frame.y(y) - 8.0
    );
}
