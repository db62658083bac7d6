//! SVG frames of a greedy rollout: road, vehicles as oriented rectangles, and one
//! line per attention head from the ego to each attended vehicle with stroke width
//! proportional to the attention weight. The ego's weight on itself is drawn as a ring.

use std::path::{Path, PathBuf};

use crossroads_core::dqn::encode;
use crossroads_core::nn::{ModelKind, QModel};
use crossroads_core::obs::observed_ids;
use crossroads_core::sim::{EgoAction, EnvConfig, IntersectionEnv, Road, Scene, VehicleId};

use crate::artifacts::{read_checkpoint, write_atomic};
use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::svg::SvgDoc;

/// Stroke width, in pixels, of an attention weight of 1.
pub const MAX_STROKE: f64 = 12.0;
/// Weights below this are not drawn.
pub const DRAW_THRESHOLD: f64 = 0.01;
pub const HEAD_COLOURS: [&str; 4] = ["green", "blue", "orange", "purple"];

const PX_PER_M: f64 = 5.0;
const MARGIN: f64 = 20.0;
const HEADER: f64 = 40.0;

#[derive(Debug, Clone)]
pub struct RenderFrame {
    pub index: usize,
    pub scene: Scene,
    pub q_values: [f64; 3],
    pub action: EgoAction,
    /// Per head, the weight on each observed vehicle (ego first); ego-attention only.
    pub attention: Option<Vec<Vec<(VehicleId, f64)>>>,
}

impl RenderFrame {
    /// Drawn stroke width for `id` under head `head`.
    pub fn stroke_width(&self, head: usize, id: VehicleId) -> f64 {
        let Some(heads) = &self.attention else { return 0.0 };
        heads[head]
            .iter()
            .find(|(v, _)| *v == id)
            .map_or(0.0, |(_, w)| if *w >= DRAW_THRESHOLD { MAX_STROKE * w } else { 0.0 })
    }

    /// Per head, `(drawn, suppressed)` weight totals.
    pub fn weight_partition(&self) -> Vec<(f64, f64)> {
        self.attention
            .iter()
            .flatten()
            .map(|head| {
                head.iter().fold((0.0, 0.0), |(d, s), (_, w)| {
                    if *w >= DRAW_THRESHOLD {
                        (d + w, s)
                    } else {
                        (d, s + w)
                    }
                })
            })
            .collect()
    }
}

/// Greedy rollout of `model` from the scene generated by `seed`, one frame per decision.
pub fn rollout_frames(model: &QModel, env_config: &EnvConfig, seed: u64) -> Result<Vec<RenderFrame>, CliError> {
    let env = IntersectionEnv::new(env_config.clone())?;
    let scene = env.reset(seed);
    rollout_from(model, &env, scene)
}

/// Greedy rollout of `model` from an arbitrary initial scene.
pub fn rollout_from(model: &QModel, env: &IntersectionEnv, mut scene: Scene) -> Result<Vec<RenderFrame>, CliError> {
    let mut frames = Vec::new();
    while !scene.terminal {
        let out = model.q_values(&encode(&scene, model.kind()))?;
        let attention = out.trace.as_ref().map(|trace| {
            let ids = observed_ids(&scene, model.kind().pads_list());
            trace
                .heads
                .iter()
                .map(|w| ids.iter().copied().zip(w.iter().copied()).collect())
                .collect()
        });
        let action = EgoAction::from_index(out.argmax()).expect("valid action index");
        frames.push(RenderFrame {
            index: frames.len(),
            scene: scene.clone(),
            q_values: out.values,
            action,
            attention,
        });
        scene = env.step(&scene, action)?.next_scene;
    }
    Ok(frames)
}

struct View {
    half: f64,
}

impl View {
    fn new(road: &Road) -> Self {
        let layout = road.layout();
        Self {
            half: layout.box_half_size() + layout.approach_length,
        }
    }

    fn size(&self) -> (f64, f64) {
        let side = 2.0 * self.half * PX_PER_M + 2.0 * MARGIN;
        (side, side + HEADER)
    }

    fn px(&self, x: f64, y: f64) -> (f64, f64) {
        (
            MARGIN + (x + self.half) * PX_PER_M,
            HEADER + MARGIN + (self.half - y) * PX_PER_M,
        )
    }
}

fn action_name(a: EgoAction) -> &'static str {
    match a {
        EgoAction::Slower => "SLOWER",
        EgoAction::NoOp => "IDLE",
        EgoAction::Faster => "FASTER",
    }
}

pub fn render_svg(frame: &RenderFrame) -> String {
    let scene = &frame.scene;
    let road = &scene.road;
    let view = View::new(road);
    let (w, h) = view.size();
    let mut doc = SvgDoc::new(w, h);
    doc.rect(0.0, 0.0, w, h, "#f4f1e8");

    let lane_px = road.layout().lane_width * PX_PER_M;
    let lanes: Vec<Vec<(f64, f64)>> = road
        .lanes()
        .iter()
        .map(|lane| {
            let n = (lane.length.ceil() as usize).max(1);
            (0..=n)
                .map(|i| {
                    let p = lane.position(lane.length * i as f64 / n as f64, 0.0);
                    view.px(p.x, p.y)
                })
                .collect()
        })
        .collect();
    for pts in &lanes {
        doc.polyline(pts, "#bdbdbd", lane_px, "");
    }
    for pts in &lanes {
        doc.polyline(pts, "#ffffff", 1.0, r#" stroke-dasharray="6 6""#);
    }

    for v in scene.all_vehicles() {
        let pts: Vec<(f64, f64)> = v.corners().iter().map(|c| view.px(c.x, c.y)).collect();
        let fill = if v.id == scene.ego.id { "#e15759" } else { "#4e79a7" };
        doc.polygon(&pts, fill, r##" stroke="#222222" stroke-width="1""##);
    }

    let ego = view.px(scene.ego.x, scene.ego.y);
    if let Some(heads) = &frame.attention {
        for (h, head) in heads.iter().enumerate() {
            let colour = HEAD_COLOURS[h % HEAD_COLOURS.len()];
            for &(id, weight) in head {
                if weight < DRAW_THRESHOLD {
                    continue;
                }
                let width = MAX_STROKE * weight;
                if id == scene.ego.id {
                    let r = 3.0 * PX_PER_M + 2.0 * MAX_STROKE * h as f64;
                    doc.circle(ego, r, colour, width, r#" stroke-opacity="0.6""#);
                } else if let Some(v) = scene.vehicle(id) {
                    doc.line(ego, view.px(v.x, v.y), colour, width, r#" stroke-opacity="0.6" stroke-linecap="round""#);
                }
            }
        }
    }

    let q = frame.q_values;
    doc.text(
        (MARGIN, 24.0),
        14.0,
        "start",
        &format!(
            "decision {}  t = {:.1} s  action {}  Q = [{:.2}, {:.2}, {:.2}]  speed {:.1} m/s",
            frame.index,
            scene.time,
            action_name(frame.action),
            q[0],
            q[1],
            q[2],
            scene.ego.speed
        ),
    );
    doc.finish()
}

/// Renders the rollout of the checkpoint at `checkpoint` to `out/frame_###.svg`.
pub fn cmd_render(config: &ExperimentConfig, checkpoint: &Path, seed: u64, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let ckpt = read_checkpoint(checkpoint)?;
    if ckpt.model.kind() != ModelKind::EgoAttention {
        eprintln!(
            "warning: {} checkpoints carry no attention weights; rendering the scene only",
            ckpt.model.kind()
        );
    }
    let frames = rollout_frames(&ckpt.model, &config.env_config(), seed)?;
    let mut paths = Vec::with_capacity(frames.len());
    for frame in &frames {
        let path = out.join(format!("frame_{:03}.svg", frame.index));
        write_atomic(&path, render_svg(frame).as_bytes())?;
        paths.push(path);
    }
    Ok(paths)
}
