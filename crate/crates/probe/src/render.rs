//! SVG reconstruction frames and the ablation bar chart.
//!
//! Output is byte-for-byte deterministic: coordinates are printed with a
//! fixed number of decimals and elements are emitted in a fixed order.

use std::fmt::Write;

use probe_core::dataset::Trajectory;
use probe_core::eval::{iou_final, AblationRow, BoxEstimate};
use probe_core::geometry::{obb_corners, Obb};
use probe_core::model::{denormalize, Example, OUTPUTS, SLOT_OUTPUTS};
use probe_core::worldsim::{CORRIDOR_LENGTH, CORRIDOR_WIDTH, ROBOT_LENGTH, ROBOT_WIDTH};

pub const PX_PER_M: f64 = 200.0;
const MARGIN: f64 = 20.0;

pub const ROBOT: &str = "#2e9e44";
pub const TRUE_MOVABLE: &str = "#f2d21b";
pub const TRUE_STATIC: &str = "#d62828";
pub const PRED_MOVABLE: &str = "#f77f00";
pub const PRED_STATIC: &str = "#1d4ed8";

/// One predicted box, tied to the obstacle its slot tracks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictedBox {
    pub obstacle: usize,
    pub estimate: BoxEstimate,
    pub is_static: bool,
}

/// Decoded predictions of every occupied slot at token `t`.
pub fn predictions_at(example: &Example, out: &[f64], t: usize) -> Vec<PredictedBox> {
    example
        .slots
        .iter()
        .enumerate()
        .map(|(slot, &obstacle)| {
            let at = t * OUTPUTS + slot * SLOT_OUTPUTS;
            let p = denormalize(&out[at..at + SLOT_OUTPUTS]);
            PredictedBox {
                obstacle,
                estimate: BoxEstimate { pose: p.pose, width: p.width, length: p.length },
                is_static: p.static_prob > 0.5,
            }
        })
        .collect()
}

/// Maps world metres to SVG pixels with y pointing up.
pub fn to_svg(x: f64, y: f64) -> (f64, f64) {
    (MARGIN + x * PX_PER_M, MARGIN + (0.5 * CORRIDOR_WIDTH - y) * PX_PER_M)
}

fn polygon(s: &mut String, class: &str, obstacle: Option<usize>, b: &Obb, fill: &str, stroke: &str) {
    let points: Vec<String> = obb_corners(b)
        .iter()
        .map(|c| {
            let (x, y) = to_svg(c.x, c.y);
            format!("{x:.9},{y:.9}")
        })
        .collect();
    let id = obstacle.map_or_else(String::new, |i| format!(" data-obstacle=\"{i}\""));
    let _ = writeln!(
        s,
        "  <polygon class=\"{class}\"{id} points=\"{}\" fill=\"{fill}\" stroke=\"{stroke}\" stroke-width=\"2\"/>",
        points.join(" ")
    );
}

/// Frame for stored step `step` of `traj`. With no predictions only the
/// ground truth is drawn.
pub fn render_frame(traj: &Trajectory, step: usize, predictions: &[PredictedBox]) -> String {
    let s_step = &traj.steps[step];
    let (w, h) = (CORRIDOR_LENGTH * PX_PER_M + 2.0 * MARGIN, CORRIDOR_WIDTH * PX_PER_M + 2.0 * MARGIN);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\">"
    );
    let _ = writeln!(s, "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let (x0, y0) = to_svg(0.0, 0.5 * CORRIDOR_WIDTH);
    let _ = writeln!(
        s,
        "  <rect class=\"corridor\" x=\"{x0:.3}\" y=\"{y0:.3}\" width=\"{:.3}\" height=\"{:.3}\" fill=\"none\" stroke=\"black\" stroke-width=\"2\"/>",
        CORRIDOR_LENGTH * PX_PER_M,
        CORRIDOR_WIDTH * PX_PER_M
    );

    let truth_box = |i: usize| {
        let o = &traj.obstacles[i];
        Obb::new(s_step.obstacle_poses[i], o.width, o.length)
    };
    for (i, o) in traj.obstacles.iter().enumerate() {
        let (class, color) = if o.is_static { ("truth static", TRUE_STATIC) } else { ("truth movable", TRUE_MOVABLE) };
        polygon(&mut s, class, Some(i), &truth_box(i), color, color);
    }
    polygon(&mut s, "robot", None, &Obb::new(s_step.proprio.pose, ROBOT_WIDTH, ROBOT_LENGTH), ROBOT, ROBOT);

    for p in predictions {
        let (class, color) = if p.is_static { ("pred static", PRED_STATIC) } else { ("pred movable", PRED_MOVABLE) };
        let b = p.estimate.obb();
        polygon(&mut s, class, Some(p.obstacle), &b, "none", color);
        let iou = iou_final(
            &BoxEstimate {
                pose: s_step.obstacle_poses[p.obstacle],
                width: traj.obstacles[p.obstacle].width,
                length: traj.obstacles[p.obstacle].length,
            },
            &p.estimate,
        );
        let (tx, ty) = to_svg(b.center.x, b.center.y);
        let _ = writeln!(
            s,
            "  <text class=\"iou\" data-obstacle=\"{}\" x=\"{tx:.3}\" y=\"{ty:.3}\" font-size=\"14\" text-anchor=\"middle\" fill=\"{color}\">IoU {iou:.3}</text>",
            p.obstacle
        );
    }
    let _ = writeln!(
        s,
        "  <text x=\"{:.0}\" y=\"{:.0}\" font-size=\"14\">episode {} tick {}</text>",
        MARGIN,
        MARGIN - 5.0,
        traj.episode,
        s_step.tick
    );
    s.push_str("</svg>\n");
    s
}

/// Stored steps rendered with `every`: each `every`-th step and the last.
pub fn frame_steps(len: usize, every: usize) -> Vec<usize> {
    let every = every.max(1);
    let mut v: Vec<usize> = (0..len).filter(|i| (i + 1) % every == 0).collect();
    if len > 0 && v.last() != Some(&(len - 1)) {
        v.push(len - 1);
    }
    v
}

/// Grouped bars of movable and static IoU per channel subset.
pub fn ablation_chart(rows: &[AblationRow]) -> String {
    let (bar, gap, plot_h) = (28.0, 24.0, 240.0);
    let left = 50.0;
    let w = left + rows.len() as f64 * (2.0 * bar + gap) + gap;
    let h = plot_h + 70.0;
    let base = 20.0 + plot_h;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\">"
    );
    let _ = writeln!(s, "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    for k in 0..=4 {
        let v = k as f64 * 0.25;
        let y = base - v * plot_h;
        let _ = writeln!(s, "  <line x1=\"{left:.0}\" y1=\"{y:.1}\" x2=\"{w:.0}\" y2=\"{y:.1}\" stroke=\"#cccccc\"/>");
        let _ = writeln!(
            s,
            "  <text x=\"{:.0}\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"end\">{v:.2}</text>",
            left - 6.0,
            y + 4.0
        );
    }
    for (k, r) in rows.iter().enumerate() {
        let x = left + gap + k as f64 * (2.0 * bar + gap);
        for (j, (value, color)) in [(r.movable_iou, PRED_MOVABLE), (r.static_iou, PRED_STATIC)].into_iter().enumerate()
        {
            let v = value.unwrap_or(0.0).clamp(0.0, 1.0);
            let _ = writeln!(
                s,
                "  <rect x=\"{:.1}\" y=\"{:.1}\" width=\"{bar:.0}\" height=\"{:.1}\" fill=\"{color}\"/>",
                x + j as f64 * bar,
                base - v * plot_h,
                v * plot_h
            );
        }
        let _ = writeln!(
            s,
            "  <text x=\"{:.1}\" y=\"{:.0}\" font-size=\"14\" text-anchor=\"middle\">{}</text>",
            x + bar,
            base + 18.0,
            r.subset
        );
    }
    let _ = writeln!(
        s,
        "  <text x=\"{left:.0}\" y=\"{:.0}\" font-size=\"12\"><tspan fill=\"{PRED_MOVABLE}\">movable IoU</tspan> <tspan fill=\"{PRED_STATIC}\">static IoU</tspan></text>",
        base + 42.0
    );
    s.push_str("</svg>\n");
    s
}
