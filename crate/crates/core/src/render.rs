//! Static, self-contained HTML contact sheet of a layout.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use base64::Engine;

use crate::error::Result;
use crate::layout::LayoutResult;

const IMAGE_EXTENSIONS: [(&str, &str); 5] = [
    ("jpg", "image/jpeg"),
    ("jpeg", "image/jpeg"),
    ("png", "image/png"),
    ("gif", "image/gif"),
    ("webp", "image/webp"),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPage {
    pub html: String,
    /// Non-fatal problems, such as images that could not be found.
    pub warnings: Vec<String>,
}

/// Swatch colour for a cluster label; stable across runs.
pub fn cluster_color(label: usize) -> String {
    let hue = (label as f64 * 137.508) % 360.0;
    format!("hsl({hue:.1}, 55%, 72%)")
}

const NEUTRAL: &str = "#d9d9d9";

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

fn find_image(dir: &Path, id: &str) -> Option<(PathBuf, &'static str)> {
    IMAGE_EXTENSIONS.iter().find_map(|(ext, mime)| {
        let p = dir.join(format!("{id}.{ext}"));
        p.is_file().then_some((p, *mime))
    })
}

/// Renders `layout` as one HTML document. Images are looked up in
/// `image_dir` as `<id>.<ext>` and inlined as data URIs; without a directory
/// each cell is a swatch coloured by its cluster.
pub fn render_html(layout: &LayoutResult, title: &str, image_dir: Option<&Path>) -> Result<RenderedPage> {
    let mut warnings = Vec::new();
    let mut html = String::new();
    let title = escape(title);
    html.push_str("<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n");
    let _ = writeln!(html, "<title>{title}</title>");
    html.push_str(
        "<style>\n\
         body { font-family: sans-serif; margin: 2em; }\n\
         .grid { display: grid; gap: 6px; }\n\
         .cell { position: relative; width: 120px; height: 120px; border-radius: 4px; overflow: hidden; }\n\
         .cell img { width: 100%; height: 100%; object-fit: cover; }\n\
         .cell .label { position: absolute; bottom: 4px; left: 4px; font-size: 11px; }\n\
         .cell.ad { outline: 3px solid #333; }\n\
         .sponsored { position: absolute; top: 4px; left: 4px; background: #333; color: #fff; font-size: 11px; padding: 1px 4px; }\n\
         .missing { border: 2px dashed #999; }\n\
         </style>\n</head>\n<body>\n",
    );
    let _ = writeln!(html, "<h1>{title}</h1>");
    let _ = writeln!(html, "<p class=\"strategy\">Strategy: {}</p>", layout.strategy);

    match &layout.grid {
        None => {
            let reason = layout.reason.as_deref().unwrap_or("unspecified");
            let _ = writeln!(
                html,
                "<p class=\"rejected\">Ad placement rejected: {}</p>",
                escape(reason)
            );
        }
        Some(grid) => {
            let _ = writeln!(
                html,
                "<div class=\"grid\" style=\"grid-template-columns: repeat({}, 120px);\">",
                grid.cols
            );
            for cell in &grid.cells {
                let label = layout.clusters.as_ref().and_then(|c| c.label(&cell.id));
                let color = label.map(cluster_color).unwrap_or_else(|| NEUTRAL.to_string());
                let mut classes = String::from("cell");
                if cell.is_ad {
                    classes.push_str(" ad");
                }
                let mut body = String::new();
                if let Some(dir) = image_dir {
                    match find_image(dir, &cell.id) {
                        Some((path, mime)) => {
                            let bytes = std::fs::read(&path)?;
                            let data = base64::engine::general_purpose::STANDARD.encode(bytes);
                            let _ = write!(body, "<img alt=\"{}\" src=\"data:{mime};base64,{data}\">", escape(&cell.id));
                        }
                        None => {
                            classes.push_str(" missing");
                            let msg = format!("no image found for {} in {}", cell.id, dir.display());
                            log::warn!("{msg}");
                            warnings.push(msg);
                        }
                    }
                }
                if cell.is_ad {
                    body.push_str("<span class=\"sponsored\">Sponsored</span>");
                }
                let _ = write!(body, "<span class=\"label\">{}</span>", escape(&cell.id));
                let cluster_attr = label.map(|l| format!(" data-cluster=\"{l}\"")).unwrap_or_default();
                let _ = writeln!(
                    html,
                    "<div class=\"{classes}\" data-row=\"{}\" data-col=\"{}\" data-id=\"{}\"{cluster_attr} style=\"grid-row: {}; grid-column: {}; background: {color};\">{body}</div>",
                    cell.row,
                    cell.col,
                    escape(&cell.id),
                    cell.row + 1,
                    cell.col + 1,
                );
            }
            html.push_str("</div>\n");
            if let Some(note) = &layout.note {
                let _ = writeln!(html, "<p class=\"note\">{}</p>", escape(note));
            }
        }
    }
    html.push_str("</body>\n</html>\n");
    Ok(RenderedPage { html, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{Cell, Grid, Strategy};
    use crate::meanshift::ClusterAssignment;

    fn layout_2x2(clusters: Option<ClusterAssignment>) -> LayoutResult {
        let cell = |r, c, id: &str| Cell {
            row: r,
            col: c,
            id: id.into(),
            is_ad: id == "ad",
        };
        LayoutResult {
            strategy: Strategy::Clustered,
            grid: Some(Grid::new(2, 2, vec![cell(0, 0, "a"), cell(0, 1, "b"), cell(1, 1, "ad"), cell(1, 0, "c")]).unwrap()),
            rejected: false,
            reason: None,
            note: None,
            clusters,
        }
    }

    /// Minimal attribute scraper over the emitted cell elements.
    fn cells(html: &str) -> Vec<(usize, usize, String, Option<usize>, String)> {
        html.lines()
            .filter(|l| l.starts_with("<div class=\"cell"))
            .map(|l| {
                let attr = |name: &str| {
                    let key = format!("{name}=\"");
                    l.find(&key).map(|i| {
                        let rest = &l[i + key.len()..];
                        rest[..rest.find('"').unwrap()].to_string()
                    })
                };
                let bg = attr("style").unwrap();
                let bg = bg[bg.find("background: ").unwrap() + 12..].trim_end_matches(';').to_string();
                (
                    attr("data-row").unwrap().parse().unwrap(),
                    attr("data-col").unwrap().parse().unwrap(),
                    attr("data-id").unwrap(),
                    attr("data-cluster").map(|c| c.parse().unwrap()),
                    bg,
                )
            })
            .collect()
    }

    #[test]
    fn two_by_two_has_one_sponsored_cell() {
        let page = render_html(&layout_2x2(None), "q", None).unwrap();
        assert_eq!(cells(&page.html).len(), 4);
        assert_eq!(page.html.matches(">Sponsored<").count(), 1);
        assert!(page.warnings.is_empty());
    }

    #[test]
    fn rejected_layout_has_no_cells() {
        let page = render_html(&LayoutResult::rejected(Strategy::Greedy2d, "singleton-cluster"), "q", None).unwrap();
        assert!(cells(&page.html).is_empty());
        assert!(page.html.contains("rejected: singleton-cluster"));
    }

    #[test]
    fn same_cluster_neighbours_share_colour() {
        let clusters = ClusterAssignment {
            labels: [("a", 0), ("b", 0), ("c", 1), ("ad", 1)]
                .iter()
                .map(|(i, l)| (i.to_string(), *l))
                .collect(),
            modes: vec![[0.0, 0.0], [1.0, 1.0]],
            bandwidth: 1.0,
        };
        let page = render_html(&layout_2x2(Some(clusters)), "q", None).unwrap();
        let cs = cells(&page.html);
        for x in &cs {
            for y in &cs {
                let adjacent = x.0.abs_diff(y.0) + x.1.abs_diff(y.1) == 1;
                if adjacent && x.3 == y.3 {
                    assert_eq!(x.4, y.4);
                }
                if x.3 != y.3 {
                    assert_ne!(x.4, y.4);
                }
            }
        }
    }

    #[test]
    fn images_inline_and_missing_ones_warn() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.png"), [0x89, b'P', b'N', b'G']).unwrap();
        let page = render_html(&layout_2x2(None), "<q>", Some(dir.path())).unwrap();
        assert!(page.html.contains("data:image/png;base64,iVBORw=="));
        assert_eq!(page.warnings.len(), 3);
        assert_eq!(page.html.matches("cell missing").count() + page.html.matches("ad missing").count(), 3);
        assert!(page.html.contains("&lt;q&gt;"));
    }
}
