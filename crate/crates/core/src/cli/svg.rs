//! Self-contained SVG figures: problem setup, sample paths and endpoints.
//!
//! All three share one frame derived from [`ProblemSpec::plot_bounds`], so
//! figures from different runs of the same problem line up. The y axis
//! points up.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scenario::{DistributionSpec, ObstacleSet, Point, ProblemSpec};
use crate::sde::{Direction, TrajectoryBatch};

const WIDTH_PX: f64 = 640.0;
const SOURCE_COLOR: &str = "#1f77b4";
const TARGET_COLOR: &str = "#d62728";
const PATH_COLOR: &str = "#555555";
const OBSTACLE_COLOR: &str = "#222222";

struct Frame {
    lo: Point,
    hi: Point,
}

impl Frame {
    fn new(spec: &ProblemSpec) -> Self {
        let (mut lo, mut hi) = spec.plot_bounds();
        for i in 0..2 {
            let pad = 0.05 * (hi[i] - lo[i]) + 1.0;
            lo[i] -= pad;
            hi[i] += pad;
        }
        Frame { lo, hi }
    }

    fn span(&self) -> f64 {
        (self.hi[0] - self.lo[0]).max(self.hi[1] - self.lo[1])
    }

    /// Line width in user units.
    fn stroke(&self) -> f64 {
        self.span() / 500.0
    }

    fn open(&self, title: &str) -> String {
        let (w, h) = (self.hi[0] - self.lo[0], self.hi[1] - self.lo[1]);
        let mut s = String::new();
        writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="{} {} {} {}" width="{}" height="{}">"#,
            num(self.lo[0]),
            num(-self.hi[1]),
            num(w),
            num(h),
            WIDTH_PX,
            (WIDTH_PX * h / w).round()
        )
        .unwrap();
        writeln!(s, "<title>{title}</title>").unwrap();
        writeln!(
            s,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="white"/>"#,
            num(self.lo[0]),
            num(-self.hi[1]),
            num(w),
            num(h)
        )
        .unwrap();
        s.push_str("<g transform=\"scale(1,-1)\">\n");
        s
    }

    fn close(mut s: String) -> String {
        s.push_str("</g>\n</svg>\n");
        s
    }
}

fn num(v: f64) -> String {
    let r = (v * 1e4).round() / 1e4;
    if r == 0.0 {
        "0".into()
    } else {
        format!("{r}")
    }
}

fn distribution(s: &mut String, dist: &DistributionSpec, color: &str, frame: &Frame) {
    let comps: Vec<(Point, f64)> = match dist {
        DistributionSpec::Gaussian { mean, cov_scale } => vec![(*mean, *cov_scale)],
        DistributionSpec::Mixture { components } => components.iter().map(|c| (c.mean, c.cov_scale)).collect(),
    };
    for (m, c) in comps {
        for k in [1.0, 2.0] {
            writeln!(
                s,
                r#"<circle class="density" cx="{}" cy="{}" r="{}" fill="{color}" fill-opacity="0.15" stroke="{color}" stroke-width="{}"/>"#,
                num(m[0]),
                num(m[1]),
                num(k * c.sqrt()),
                num(frame.stroke())
            )
            .unwrap();
        }
    }
}

fn obstacles(s: &mut String, obs: &ObstacleSet, frame: &Frame) {
    match obs {
        ObstacleSet::Circles(circles) => {
            for c in circles {
                writeln!(
                    s,
                    r#"<circle class="obstacle" cx="{}" cy="{}" r="{}" fill="{OBSTACLE_COLOR}" fill-opacity="0.35" stroke="{OBSTACLE_COLOR}" stroke-width="{}"/>"#,
                    num(c.center[0]),
                    num(c.center[1]),
                    num(c.radius),
                    num(2.0 * frame.stroke())
                )
                .unwrap();
            }
        }
        ObstacleSet::VNeck { c_sq, alpha } => {
            // blocked where x₂² > αx₁² + c²: one region above, one below
            let n = 200;
            for sign in [1.0, -1.0] {
                let edge = if sign > 0.0 { frame.hi[1] } else { frame.lo[1] };
                let mut d = format!("M {} {}", num(frame.lo[0]), num(edge));
                for j in 0..=n {
                    let x = frame.lo[0] + (frame.hi[0] - frame.lo[0]) * j as f64 / n as f64;
                    let y = sign * (alpha * x * x + c_sq).sqrt();
                    let y = if sign > 0.0 { y.min(edge) } else { y.max(edge) };
                    write!(d, " L {} {}", num(x), num(y)).unwrap();
                }
                write!(d, " L {} {} Z", num(frame.hi[0]), num(edge)).unwrap();
                writeln!(
                    s,
                    r#"<path class="obstacle" d="{d}" fill="{OBSTACLE_COLOR}" fill-opacity="0.35" stroke="{OBSTACLE_COLOR}" stroke-width="{}"/>"#,
                    num(2.0 * frame.stroke())
                )
                .unwrap();
            }
        }
    }
}

/// Source and target densities (1 and 2 standard deviation discs per
/// component) with the obstacles.
pub fn setup_svg(spec: &ProblemSpec) -> String {
    let frame = Frame::new(spec);
    let mut s = frame.open(&format!("{} setup", spec.name));
    distribution(&mut s, &spec.source, SOURCE_COLOR, &frame);
    distribution(&mut s, &spec.target, TARGET_COLOR, &frame);
    obstacles(&mut s, &spec.obstacles, &frame);
    Frame::close(s)
}

/// One polyline per sample path, obstacles on top.
pub fn trajectories_svg(batch: &TrajectoryBatch, spec: &ProblemSpec) -> String {
    let frame = Frame::new(spec);
    let mut s = frame.open(&format!("{} {} trajectories", spec.name, batch.direction));
    for i in 0..batch.len() {
        let mut pts = String::new();
        for k in 0..=batch.steps() {
            let x = batch.state(i, k);
            if k > 0 {
                pts.push(' ');
            }
            write!(pts, "{},{}", num(x[0]), num(x[1])).unwrap();
        }
        writeln!(
            s,
            r#"<polyline points="{pts}" fill="none" stroke="{PATH_COLOR}" stroke-opacity="0.35" stroke-width="{}"/>"#,
            num(frame.stroke())
        )
        .unwrap();
    }
    obstacles(&mut s, &spec.obstacles, &frame);
    Frame::close(s)
}

/// Scatter of where the paths ended, over the density they should match.
pub fn terminal_svg(batch: &TrajectoryBatch, spec: &ProblemSpec) -> String {
    let frame = Frame::new(spec);
    let mut s = frame.open(&format!("{} {} endpoints", spec.name, batch.direction));
    let (goal, color) = match batch.direction {
        Direction::Forward => (&spec.target, TARGET_COLOR),
        Direction::Backward => (&spec.source, SOURCE_COLOR),
    };
    distribution(&mut s, goal, color, &frame);
    obstacles(&mut s, &spec.obstacles, &frame);
    for x in batch.terminal() {
        writeln!(
            s,
            r#"<circle class="sample" cx="{}" cy="{}" r="{}" fill="{PATH_COLOR}"/>"#,
            num(x[0]),
            num(x[1]),
            num(2.5 * frame.stroke())
        )
        .unwrap();
    }
    Frame::close(s)
}

/// Writes `setup.svg`, `trajectories.svg` and `terminal.svg` into `out_dir`,
/// creating it if needed.
pub fn export_plots(batch: &TrajectoryBatch, spec: &ProblemSpec, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for (name, body) in [
        ("setup.svg", setup_svg(spec)),
        ("trajectories.svg", trajectories_svg(batch, spec)),
        ("terminal.svg", terminal_svg(batch, spec)),
    ] {
        let path = out_dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
