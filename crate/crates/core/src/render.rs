//! SVG rendering: scene layout underlay with per-kind colored
//! trajectories, spawn dots, and goal squares.

use std::fs;
use std::path::Path;

use crate::error::Error;
use crate::layout::{SceneLayout, SegClass};
use crate::trajectory::{AgentKind, Scenario};
use crate::Result;

#[derive(Debug, Clone, Copy)]
pub struct RenderOptions {
    pub px_per_m: f64,
    pub trail_width_px: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            px_per_m: 16.0,
            trail_width_px: 1.5,
        }
    }
}

fn seg_color(class: Option<SegClass>) -> &'static str {
    match class {
        Some(SegClass::Building) => "#4a4a55",
        Some(SegClass::Structure) => "#8a8a93",
        Some(SegClass::Bush) => "#a9c985",
        Some(SegClass::Grass) => "#b9d9a0",
        Some(SegClass::Tree) => "#7fae6e",
        Some(SegClass::Sidewalk) => "#e8e4da",
        Some(SegClass::Road) => "#c9c9cc",
        None => "#d0c0c0",
    }
}

pub fn kind_color(kind: AgentKind) -> &'static str {
    match kind {
        AgentKind::Pedestrian => "#1f77b4",
        AgentKind::Bicyclist => "#ff7f0e",
        AgentKind::Skateboarder => "#2ca02c",
        AgentKind::Car => "#d62728",
        AgentKind::Cart => "#9467bd",
        AgentKind::Bus => "#8c564b",
    }
}

/// Render the scenario over its layout. An empty scenario yields the
/// layout underlay alone.
pub fn render_svg(layout: &SceneLayout, scenario: &Scenario, opts: &RenderOptions) -> String {
    let seg = &layout.segmentation;
    let s = opts.px_per_m;
    let w_px = seg.world_width() * s;
    let h_px = seg.world_height() * s;
    let origin = seg.origin();
    // SVG y grows downward; world y grows upward.
    let tx = |x: f64| (x - origin.x) * s;
    let ty = |y: f64| h_px - (y - origin.y) * s;

    let mut out = String::with_capacity(1 << 16);
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w_px:.0}\" height=\"{h_px:.0}\" \
         viewBox=\"0 0 {w_px:.2} {h_px:.2}\">\n"
    ));

    let cell_px = seg.cell_size() * s;
    for cy in 0..seg.height_cells() {
        for cx in 0..seg.width_cells() {
            let class = SegClass::from_index(seg.get(cx, cy) as usize);
            let x = cx as f64 * cell_px;
            let y = h_px - (cy + 1) as f64 * cell_px;
            out.push_str(&format!(
                "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{cell_px:.2}\" height=\"{cell_px:.2}\" \
                 fill=\"{}\"/>\n",
                seg_color(class)
            ));
        }
    }

    for a in &scenario.agents {
        let color = kind_color(a.kind);
        let pts: String = a
            .positions
            .iter()
            .map(|p| format!("{:.2},{:.2}", tx(p.x), ty(p.y)))
            .collect::<Vec<_>>()
            .join(" ");
        out.push_str(&format!(
            "<polyline points=\"{pts}\" fill=\"none\" stroke=\"{color}\" \
             stroke-width=\"{:.2}\" stroke-opacity=\"0.8\"/>\n",
            opts.trail_width_px
        ));
        let start = a.start();
        out.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"{:.2}\" fill=\"{color}\"/>\n",
            tx(start.x),
            ty(start.y),
            opts.trail_width_px * 2.0
        ));
        let end = a.end();
        let r = opts.trail_width_px * 2.0;
        out.push_str(&format!(
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" \
             stroke=\"{color}\" stroke-width=\"1\"/>\n",
            tx(end.x) - r,
            ty(end.y) - r,
            2.0 * r,
            2.0 * r
        ));
    }

    out.push_str("</svg>\n");
    out
}

pub fn render_to_file(
    layout: &SceneLayout,
    scenario: &Scenario,
    opts: &RenderOptions,
    path: &Path,
) -> Result<()> {
    fs::write(path, render_svg(layout, scenario, opts)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::corridor_fixture;

    #[test]
    fn empty_scenario_renders_layout_only() {
        let (layout, mut s) = corridor_fixture(1, 300).unwrap();
        s.agents.clear();
        let svg = render_svg(&layout, &s, &RenderOptions::default());
        assert!(svg.starts_with("<svg "));
        assert!(svg.ends_with("</svg>\n"));
        assert!(!svg.contains("<polyline"));
        assert!(svg.matches("<rect").count() >= 40 * 8);
    }

    #[test]
    fn one_polyline_per_agent() {
        let (layout, s) = corridor_fixture(2, 300).unwrap();
        assert!(!s.agents.is_empty());
        let svg = render_svg(&layout, &s, &RenderOptions::default());
        assert_eq!(svg.matches("<polyline").count(), s.agents.len());
        assert_eq!(svg.matches("<circle").count(), s.agents.len());
    }

    #[test]
    fn world_up_maps_to_svg_down() {
        let (layout, s) = corridor_fixture(3, 300).unwrap();
        let opts = RenderOptions::default();
        let svg = render_svg(&layout, &s, &opts);
        // An agent hugging the corridor's low edge must land near the
        // bottom of the image.
        let a = &s.agents[0];
        let y_world = a.start().y;
        let expected = layout.segmentation.world_height() * opts.px_per_m
            - (y_world - layout.segmentation.origin().y) * opts.px_per_m;
        let tag = format!("cy=\"{expected:.2}\"");
        assert!(svg.contains(&tag), "missing {tag}");
    }
}
