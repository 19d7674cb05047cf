//! Strategies driven by a 2-D embedding of the images and the ad.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::features::compare_ids;
use crate::meanshift::ClusterAssignment;
use crate::tsne::{EmbeddedPoint, Embedding2D};

use super::{Cell, Grid, LayoutResult, Strategy};

fn check_grid(embedding: &Embedding2D, rows: usize, cols: usize) -> Result<()> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid("grid must have at least one row and one column"));
    }
    if rows * cols < embedding.len() {
        return Err(Error::GridTooSmall {
            cells: rows * cols,
            items: embedding.len(),
        });
    }
    Ok(())
}

fn dist2(a: &EmbeddedPoint, b: &EmbeddedPoint) -> f64 {
    (a.x - b.x).powi(2) + (a.y - b.y).powi(2)
}

fn lookup<'a>(embedding: &'a Embedding2D, id: &str) -> Result<&'a EmbeddedPoint> {
    embedding.get(id).ok_or_else(|| Error::UnknownId(id.to_string()))
}

/// Linear map of the embedding's bounding box onto cell-centre coordinates
/// `[0, cols - 1] x [0, rows - 1]`; a flat axis maps to the middle.
fn rescale(embedding: &Embedding2D, rows: usize, cols: usize) -> Vec<(f64, f64)> {
    let axis = |vals: Vec<f64>, cells: usize| -> Vec<f64> {
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = (cells - 1) as f64;
        vals.iter()
            .map(|v| if hi > lo { (v - lo) / (hi - lo) * span } else { span / 2.0 })
            .collect()
    };
    let cs = axis(embedding.points.iter().map(|p| p.x).collect(), cols);
    let rs = axis(embedding.points.iter().map(|p| p.y).collect(), rows);
    cs.into_iter().zip(rs).collect()
}

/// Greedy snapping with a single ad; see [`place_greedy_2d_multi`].
pub fn place_greedy_2d(embedding: &Embedding2D, ad_id: &str, rows: usize, cols: usize) -> Result<LayoutResult> {
    place_greedy_2d_multi(embedding, &[ad_id.to_string()], rows, cols)
}

/// Snaps every embedded point to a grid cell.
///
/// Ads go first, in the given order, each to the free cell nearest its
/// rescaled position. The remaining points follow in ascending embedding
/// distance to the closest ad and take their nearest free cell. Ties between
/// cells go to the first in row-major order.
pub fn place_greedy_2d_multi(
    embedding: &Embedding2D,
    ad_ids: &[String],
    rows: usize,
    cols: usize,
) -> Result<LayoutResult> {
    check_grid(embedding, rows, cols)?;
    if ad_ids.is_empty() {
        return Err(Error::Empty("ad list"));
    }
    let mut ad_idx = Vec::with_capacity(ad_ids.len());
    for id in ad_ids {
        let i = embedding.position(id).ok_or_else(|| Error::UnknownId(id.clone()))?;
        if ad_idx.contains(&i) {
            return Err(Error::DuplicateId(id.clone()));
        }
        ad_idx.push(i);
    }
    let pts = &embedding.points;
    let scaled = rescale(embedding, rows, cols);

    let near_ad: Vec<f64> = pts
        .iter()
        .map(|p| ad_idx.iter().map(|&a| dist2(p, &pts[a])).fold(f64::INFINITY, f64::min))
        .collect();
    let mut rest: Vec<usize> = (0..pts.len()).filter(|i| !ad_idx.contains(i)).collect();
    rest.sort_by(|&a, &b| {
        near_ad[a]
            .total_cmp(&near_ad[b])
            .then_with(|| compare_ids(&pts[a].id, &pts[b].id))
    });

    let mut taken = vec![false; rows * cols];
    let mut cells = Vec::with_capacity(pts.len());
    for &i in ad_idx.iter().chain(&rest) {
        let (x, y) = scaled[i];
        let mut best = (f64::INFINITY, usize::MAX);
        for slot in 0..rows * cols {
            if taken[slot] {
                continue;
            }
            let (r, c) = ((slot / cols) as f64, (slot % cols) as f64);
            let d = (c - x).powi(2) + (r - y).powi(2);
            if d < best.0 {
                best = (d, slot);
            }
        }
        taken[best.1] = true;
        cells.push(Cell {
            row: best.1 / cols,
            col: best.1 % cols,
            id: pts[i].id.clone(),
            is_ad: ad_idx.contains(&i),
        });
    }
    let mut grid = Grid::new(rows, cols, cells)?;
    grid.ad_cell = grid.cell_of(&pts[ad_idx[0]].id).expect("primary ad placed");
    Ok(LayoutResult::placed(Strategy::Greedy2d, grid))
}

/// Cells in boustrophedon order: left to right on even rows, right to left
/// on odd rows, so consecutive cells are always 4-adjacent.
pub(crate) fn snake_cells(rows: usize, cols: usize) -> Vec<(usize, usize)> {
    (0..rows)
        .flat_map(|r| {
            let cs: Vec<usize> = if r % 2 == 0 { (0..cols).collect() } else { (0..cols).rev().collect() };
            cs.into_iter().map(move |c| (r, c))
        })
        .collect()
}

/// Lays clusters out as contiguous runs along a snake path, largest cluster
/// first. Members are ordered by distance to their cluster's mode; inside the
/// ad's cluster the ad leads and the rest follow by distance to the ad, so
/// the ad always borders a cluster mate when it has one.
pub fn place_clustered(
    embedding: &Embedding2D,
    clusters: &ClusterAssignment,
    ad_id: &str,
    rows: usize,
    cols: usize,
) -> Result<LayoutResult> {
    check_grid(embedding, rows, cols)?;
    let ad = lookup(embedding, ad_id)?;
    let ad_label = clusters.label(ad_id).ok_or_else(|| Error::UnknownId(ad_id.to_string()))?;
    let k = clusters.num_clusters();
    let mut members: Vec<Vec<&EmbeddedPoint>> = vec![Vec::new(); k];
    for p in &embedding.points {
        let l = clusters.label(&p.id).ok_or_else(|| Error::UnknownId(p.id.clone()))?;
        if l >= k {
            return Err(Error::IndexOutOfRange {
                what: "cluster label",
                index: l,
                len: k,
            });
        }
        members[l].push(p);
    }

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| members[b].len().cmp(&members[a].len()).then(a.cmp(&b)));

    let mut seq: Vec<&EmbeddedPoint> = Vec::with_capacity(embedding.len());
    for l in order {
        let mut ms = members[l].clone();
        if l == ad_label {
            ms.retain(|p| p.id != ad_id);
            ms.sort_by(|a, b| by_key(dist2(a, ad), &a.id, dist2(b, ad), &b.id));
            seq.push(ad);
        } else {
            let mode = EmbeddedPoint {
                id: String::new(),
                x: clusters.modes[l][0],
                y: clusters.modes[l][1],
            };
            ms.sort_by(|a, b| by_key(dist2(a, &mode), &a.id, dist2(b, &mode), &b.id));
        }
        seq.extend(ms);
    }

    let cells = snake_cells(rows, cols)
        .into_iter()
        .zip(seq)
        .map(|((row, col), p)| Cell {
            row,
            col,
            id: p.id.clone(),
            is_ad: p.id == ad_id,
        })
        .collect();
    Ok(LayoutResult::placed(Strategy::Clustered, Grid::new(rows, cols, cells)?).with_clusters(clusters.clone()))
}

fn by_key(da: f64, ida: &str, db: f64, idb: &str) -> Ordering {
    da.total_cmp(&db).then_with(|| compare_ids(ida, idb))
}
