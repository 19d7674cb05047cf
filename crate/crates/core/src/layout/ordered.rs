//! Strategies that keep the search ranking and move only a few images.

use crate::error::{Error, Result};
use crate::features::{squared_l2, FeatureSet};
use crate::selection::AdCandidate;

use super::{proximity_indices, Cell, Grid, LayoutResult, Strategy, EIGHT_CLOCKWISE, FOUR_CLOCKWISE};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    pub fn count(self) -> usize {
        match self {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        }
    }

    fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &FOUR_CLOCKWISE,
            Connectivity::Eight => &EIGHT_CLOCKWISE,
        }
    }
}

fn check_cols(cols: usize) -> Result<()> {
    if cols == 0 {
        return Err(Error::invalid("cols must be at least 1"));
    }
    Ok(())
}

fn image_seq(images: &FeatureSet) -> Vec<(String, bool)> {
    images.ids().map(|id| (id.to_string(), false)).collect()
}

/// Inserts the ad right next to its nearest image, on the side of whichever
/// neighbour of that image is closer to the ad. At a boundary, or when both
/// neighbours are equally close, the ad goes to the right.
pub fn place_preserve_order(images: &FeatureSet, ad: &AdCandidate, cols: usize) -> Result<LayoutResult> {
    check_cols(cols)?;
    let order = proximity_indices(images, &ad.feature)?;
    let first = order[0];
    let vs = images.vectors();
    let n = vs.len();
    let insert_left = first > 0
        && first + 1 < n
        && squared_l2(&vs[first - 1].values, &ad.feature.values) < squared_l2(&vs[first + 1].values, &ad.feature.values);
    let at = if insert_left { first } else { first + 1 };
    let mut seq = image_seq(images);
    seq.insert(at, (ad.id.clone(), true));
    Ok(LayoutResult::placed(Strategy::Preserve, Grid::from_sequence(seq, cols)?))
}

/// Puts the ad between its two nearest images: the second nearest is pulled
/// out of the ranking and reinserted directly after the ad, which itself
/// follows the nearest image.
pub fn place_local_1d(images: &FeatureSet, ad: &AdCandidate, cols: usize) -> Result<LayoutResult> {
    check_cols(cols)?;
    if images.len() < 2 {
        let mut r = place_preserve_order(images, ad, cols)?;
        r.strategy = Strategy::Local1d;
        r.note = Some("fewer than 2 images; fell back to preserve-order placement".into());
        return Ok(r);
    }
    let order = proximity_indices(images, &ad.feature)?;
    let (first, second) = (&images.vectors()[order[0]].id, &images.vectors()[order[1]].id);
    let mut seq: Vec<(String, bool)> = image_seq(images).into_iter().filter(|(id, _)| id != second).collect();
    let at = seq.iter().position(|(id, _)| id == first).expect("nearest image present") + 1;
    seq.insert(at, (second.clone(), false));
    seq.insert(at, (ad.id.clone(), true));
    Ok(LayoutResult::placed(Strategy::Local1d, Grid::from_sequence(seq, cols)?))
}

/// Surrounds the ad with its `c` nearest images (`c` = 4 or 8), assigned
/// clockwise from north in ascending distance. The ad takes the interior
/// cell closest to the grid centre; everything else fills the free cells
/// row-major in ranking order.
pub fn place_local_2d(
    images: &FeatureSet,
    ad: &AdCandidate,
    cols: usize,
    connectivity: Connectivity,
) -> Result<LayoutResult> {
    let strategy = match connectivity {
        Connectivity::Four => Strategy::Local2d4,
        Connectivity::Eight => Strategy::Local2d8,
    };
    if cols < 3 {
        return Err(Error::invalid(format!("local 2-D placement needs at least 3 columns, got {cols}")));
    }
    let c = connectivity.count();
    if images.len() < c {
        return Err(Error::InsufficientData {
            needed: c,
            got: images.len(),
        });
    }
    let order = proximity_indices(images, &ad.feature)?;
    let n = images.len();
    let rows = (n + 1).div_ceil(cols).max(3);

    let (cr, cc) = ((rows - 1) as f64 / 2.0, (cols - 1) as f64 / 2.0);
    let mut ad_cell = (1, 1);
    let mut best = f64::INFINITY;
    for r in 1..rows - 1 {
        for col in 1..cols - 1 {
            let d = (r as f64 - cr).powi(2) + (col as f64 - cc).powi(2);
            if d < best {
                best = d;
                ad_cell = (r, col);
            }
        }
    }

    let vs = images.vectors();
    let mut taken = vec![false; rows * cols];
    let mut placed = vec![false; n];
    let mut cells = vec![Cell {
        row: ad_cell.0,
        col: ad_cell.1,
        id: ad.id.clone(),
        is_ad: true,
    }];
    taken[ad_cell.0 * cols + ad_cell.1] = true;
    for (&img, (dr, dc)) in order.iter().zip(connectivity.offsets()) {
        let r = ad_cell.0.wrapping_add_signed(*dr);
        let col = ad_cell.1.wrapping_add_signed(*dc);
        taken[r * cols + col] = true;
        placed[img] = true;
        cells.push(Cell {
            row: r,
            col,
            id: vs[img].id.clone(),
            is_ad: false,
        });
    }
    let mut free = (0..rows * cols).filter(|i| !taken[*i]);
    for (i, v) in vs.iter().enumerate() {
        if placed[i] {
            continue;
        }
        let slot = free.next().expect("grid has room for every image");
        cells.push(Cell {
            row: slot / cols,
            col: slot % cols,
            id: v.id.clone(),
            is_ad: false,
        });
    }
    Ok(LayoutResult::placed(strategy, Grid::new(rows, cols, cells)?))
}
