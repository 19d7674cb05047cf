//! Placing the selected ad and the result images on a display grid.
//!
//! Two families of strategies live here. The order-based ones ([`ordered`])
//! keep the search engine's ranking and only move a handful of images around
//! the ad. The embedding-based ones ([`spatial`]) snap a 2-D t-SNE projection
//! of the images and the ad onto the grid, optionally keeping mean-shift
//! clusters together.

mod ordered;
mod spatial;

pub use ordered::{place_local_1d, place_local_2d, place_preserve_order, Connectivity};
pub use spatial::{place_clustered, place_greedy_2d, place_greedy_2d_multi};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{by_distance_then_id, squared_l2, FeatureSet, FeatureVector};
use crate::meanshift::ClusterAssignment;
use crate::tsne::Embedding2D;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "preserve")]
    Preserve,
    #[serde(rename = "local1d")]
    Local1d,
    #[serde(rename = "local2d-4")]
    Local2d4,
    #[serde(rename = "local2d-8")]
    Local2d8,
    #[serde(rename = "greedy2d")]
    Greedy2d,
    #[serde(rename = "clustered")]
    Clustered,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Preserve,
        Strategy::Local1d,
        Strategy::Local2d4,
        Strategy::Local2d8,
        Strategy::Greedy2d,
        Strategy::Clustered,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Preserve => "preserve",
            Strategy::Local1d => "local1d",
            Strategy::Local2d4 => "local2d-4",
            Strategy::Local2d8 => "local2d-8",
            Strategy::Greedy2d => "greedy2d",
            Strategy::Clustered => "clustered",
        }
    }

    /// Whether the strategy works on a 2-D embedding rather than the ranking.
    pub fn needs_embedding(self) -> bool {
        matches!(self, Strategy::Greedy2d | Strategy::Clustered)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown strategy {s:?} (expected one of preserve, local1d, local2d-4, local2d-8, greedy2d, clustered)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
    pub id: String,
    pub is_ad: bool,
}

/// An injective assignment of ids to grid cells. Cells are kept in row-major
/// order; cells that hold nothing are simply absent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<Cell>,
    pub ad_cell: (usize, usize),
}

impl Grid {
    pub(crate) fn new(rows: usize, cols: usize, mut cells: Vec<Cell>) -> Result<Self> {
        let mut seen_pos = BTreeSet::new();
        let mut seen_id = BTreeSet::new();
        for c in &cells {
            if c.row >= rows || c.col >= cols {
                return Err(Error::IndexOutOfRange {
                    what: "grid cell",
                    index: c.row * cols + c.col,
                    len: rows * cols,
                });
            }
            if !seen_pos.insert((c.row, c.col)) {
                return Err(Error::invalid(format!("cell ({}, {}) assigned twice", c.row, c.col)));
            }
            if !seen_id.insert(c.id.as_str()) {
                return Err(Error::DuplicateId(c.id.clone()));
            }
        }
        cells.sort_by_key(|c| (c.row, c.col));
        let ad_cell = cells
            .iter()
            .find(|c| c.is_ad)
            .map(|c| (c.row, c.col))
            .ok_or(Error::Empty("ad cell"))?;
        Ok(Self {
            rows,
            cols,
            cells,
            ad_cell,
        })
    }

    /// Wraps a reading-order sequence row-major into `ceil(len / cols)` rows.
    pub(crate) fn from_sequence(seq: Vec<(String, bool)>, cols: usize) -> Result<Self> {
        let rows = seq.len().div_ceil(cols);
        let cells = seq
            .into_iter()
            .enumerate()
            .map(|(i, (id, is_ad))| Cell {
                row: i / cols,
                col: i % cols,
                id,
                is_ad,
            })
            .collect();
        Self::new(rows, cols, cells)
    }

    pub fn reading_order(&self) -> Vec<&str> {
        self.cells.iter().map(|c| c.id.as_str()).collect()
    }

    pub fn at(&self, row: usize, col: usize) -> Option<&Cell> {
        self.cells.iter().find(|c| c.row == row && c.col == col)
    }

    pub fn cell_of(&self, id: &str) -> Option<(usize, usize)> {
        self.cells.iter().find(|c| c.id == id).map(|c| (c.row, c.col))
    }

    pub fn ad_ids(&self) -> Vec<&str> {
        self.cells.iter().filter(|c| c.is_ad).map(|c| c.id.as_str()).collect()
    }

    /// Ids in the cells around `(row, col)`, 4- or 8-connected.
    pub fn neighbors(&self, row: usize, col: usize, eight: bool) -> Vec<&str> {
        let offsets: &[(isize, isize)] = if eight { &EIGHT_CLOCKWISE } else { &FOUR_CLOCKWISE };
        offsets
            .iter()
            .filter_map(|(dr, dc)| {
                let r = row.checked_add_signed(*dr)?;
                let c = col.checked_add_signed(*dc)?;
                self.at(r, c).map(|cell| cell.id.as_str())
            })
            .collect()
    }
}

/// North, east, south, west as (row, col) offsets.
pub(crate) const FOUR_CLOCKWISE: [(isize, isize); 4] = [(-1, 0), (0, 1), (1, 0), (0, -1)];
/// Clockwise from north.
pub(crate) const EIGHT_CLOCKWISE: [(isize, isize); 8] =
    [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutResult {
    pub strategy: Strategy,
    #[serde(flatten)]
    pub grid: Option<Grid>,
    pub rejected: bool,
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clusters: Option<ClusterAssignment>,
}

impl LayoutResult {
    pub(crate) fn placed(strategy: Strategy, grid: Grid) -> Self {
        Self {
            strategy,
            grid: Some(grid),
            rejected: false,
            reason: None,
            note: None,
            clusters: None,
        }
    }

    pub fn rejected(strategy: Strategy, reason: impl Into<String>) -> Self {
        Self {
            strategy,
            grid: None,
            rejected: true,
            reason: Some(reason.into()),
            note: None,
            clusters: None,
        }
    }

    pub fn with_clusters(mut self, clusters: ClusterAssignment) -> Self {
        self.clusters = Some(clusters);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProximityOrder {
    pub order: Vec<String>,
}

/// Image indices sorted by distance to `ad`, ties by lowest id.
pub(crate) fn proximity_indices(images: &FeatureSet, ad: &FeatureVector) -> Result<Vec<usize>> {
    if images.is_empty() {
        return Err(Error::Empty("image set"));
    }
    images.require_dim(ad.dim())?;
    let vs = images.vectors();
    let dist: Vec<f64> = vs.iter().map(|v| squared_l2(&v.values, &ad.values)).collect();
    let mut idx: Vec<usize> = (0..vs.len()).collect();
    idx.sort_by(|&a, &b| by_distance_then_id(dist[a], &vs[a].id, dist[b], &vs[b].id));
    Ok(idx)
}

pub fn proximity_order(images: &FeatureSet, ad: &FeatureVector) -> Result<ProximityOrder> {
    let idx = proximity_indices(images, ad)?;
    Ok(ProximityOrder {
        order: idx.into_iter().map(|i| images.vectors()[i].id.clone()).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rejection {
    #[serde(rename = "singleton-cluster")]
    SingletonCluster,
    #[serde(rename = "convex-hull")]
    ConvexHull,
}

impl Rejection {
    pub fn as_str(self) -> &'static str {
        match self {
            Rejection::SingletonCluster => "singleton-cluster",
            Rejection::ConvexHull => "convex-hull",
        }
    }
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Discards placements where the ad does not fit visually: the ad forms a
/// mean-shift cluster on its own, or (when `enable_hull`) it lies on the
/// convex hull of the embedding.
pub fn rejection_checks(
    embedding: &Embedding2D,
    clusters: &ClusterAssignment,
    ad_id: &str,
    enable_hull: bool,
) -> Result<Option<Rejection>> {
    let ad = embedding.get(ad_id).ok_or_else(|| Error::UnknownId(ad_id.to_string()))?;
    let label = clusters.label(ad_id).ok_or_else(|| Error::UnknownId(ad_id.to_string()))?;
    if clusters.cluster_size(label) == 1 {
        return Ok(Some(Rejection::SingletonCluster));
    }
    if enable_hull {
        let hull = convex_hull(&embedding.coords());
        if hull.iter().any(|p| p[0] == ad.x && p[1] == ad.y) {
            return Ok(Some(Rejection::ConvexHull));
        }
    }
    Ok(None)
}

/// Andrew's monotone chain; collinear boundary points are not vertices.
pub(crate) fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Keeps at most `cap` images per cluster, earliest first, in original order.
pub fn diversify_by_cluster(images: &FeatureSet, clusters: &ClusterAssignment, cap: usize) -> Result<FeatureSet> {
    if cap == 0 {
        return Err(Error::invalid("cluster cap must be at least 1"));
    }
    let mut used: BTreeMap<usize, usize> = BTreeMap::new();
    let mut kept = Vec::new();
    for v in images {
        let label = clusters.label(&v.id).ok_or_else(|| Error::UnknownId(v.id.clone()))?;
        let n = used.entry(label).or_default();
        if *n < cap {
            *n += 1;
            kept.push(v.clone());
        }
    }
    FeatureSet::new(kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use super::Strategy;

    fn fv(id: &str, v: &[f64]) -> FeatureVector {
        FeatureVector::new(id, v.to_vec()).unwrap()
    }

    fn set(points: &[(&str, f64)]) -> FeatureSet {
        FeatureSet::new(points.iter().map(|(id, x)| fv(id, &[*x, 0.0])).collect()).unwrap()
    }

    fn clusters(labels: &[(&str, usize)]) -> ClusterAssignment {
        let k = labels.iter().map(|(_, l)| l + 1).max().unwrap_or(0);
        ClusterAssignment {
            labels: labels.iter().map(|(id, l)| (id.to_string(), *l)).collect(),
            modes: vec![[0.0, 0.0]; k],
            bandwidth: 1.0,
        }
    }

    #[test]
    fn proximity_examples() {
        let images = set(&[("a", 0.0), ("b", 1.0), ("c", 5.0)]);
        let o = proximity_order(&images, &fv("ad", &[0.9, 0.0])).unwrap();
        assert_eq!(o.order, ["b", "a", "c"]);
        let tie = set(&[("z", -1.0), ("y", 1.0)]);
        assert_eq!(proximity_order(&tie, &fv("ad", &[0.0, 0.0])).unwrap().order, ["y", "z"]);
        let one = set(&[("only", 3.0)]);
        assert_eq!(proximity_order(&one, &fv("ad", &[0.0, 0.0])).unwrap().order, ["only"]);
        assert!(proximity_order(&one, &fv("ad", &[0.0])).is_err());
        assert!(proximity_order(&FeatureSet::default(), &fv("ad", &[0.0])).is_err());
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.as_str().parse::<Strategy>().unwrap(), s);
            assert_eq!(serde_json::to_value(s).unwrap(), s.as_str());
        }
        assert!("spiral".parse::<Strategy>().is_err());
    }

    #[test]
    fn singleton_rejection() {
        let e = Embedding2D::from_points([("a", 0.0, 0.0), ("b", 0.1, 0.0), ("ad", 50.0, 50.0)]);
        let c = clusters(&[("a", 0), ("b", 0), ("ad", 1)]);
        assert_eq!(rejection_checks(&e, &c, "ad", false).unwrap(), Some(Rejection::SingletonCluster));
        assert!(rejection_checks(&e, &c, "missing", false).is_err());
    }

    #[test]
    fn hull_rejection() {
        let mut pts = vec![("a", 0.0, 0.0), ("b", 1.0, 0.0), ("c", 0.0, 1.0), ("d", 1.0, 1.0)];
        pts.push(("ad", 0.5, 2.0));
        let e = Embedding2D::from_points(pts.clone());
        let all = clusters(&[("a", 0), ("b", 0), ("c", 0), ("d", 0), ("ad", 0)]);
        assert_eq!(rejection_checks(&e, &all, "ad", true).unwrap(), Some(Rejection::ConvexHull));
        assert_eq!(rejection_checks(&e, &all, "ad", false).unwrap(), None);

        pts.pop();
        pts.push(("ad", 0.5, 0.5));
        let e = Embedding2D::from_points(pts);
        assert_eq!(rejection_checks(&e, &all, "ad", true).unwrap(), None);
    }

    #[test]
    fn hull_excludes_collinear_points() {
        let h = convex_hull(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [1.0, 1.0]]);
        assert_eq!(h.len(), 3);
        assert!(!h.contains(&[1.0, 0.0]));
    }

    #[test]
    fn diversify_examples() {
        let ids = ["a", "b", "c", "d", "e", "f", "g", "h", "i"];
        let images = set(&ids.iter().enumerate().map(|(i, id)| (*id, i as f64)).collect::<Vec<_>>());
        let labels = [0, 1, 0, 0, 2, 1, 0, 1, 0];
        let c = clusters(&ids.iter().zip(labels).map(|(id, l)| (*id, l)).collect::<Vec<_>>());
        let kept = diversify_by_cluster(&images, &c, 2).unwrap();
        assert_eq!(kept.ids().collect::<Vec<_>>(), ["a", "b", "c", "e", "f"]);
        let one = diversify_by_cluster(&images, &c, 1).unwrap();
        assert_eq!(one.ids().collect::<Vec<_>>(), ["a", "b", "e"]);
        assert_eq!(diversify_by_cluster(&images, &c, 5).unwrap(), images);
        assert!(diversify_by_cluster(&images, &c, 0).is_err());
    }

    #[test]
    fn layout_json_shape() {
        let grid = Grid::from_sequence(vec![("a".into(), false), ("ad".into(), true)], 2).unwrap();
        let v = serde_json::to_value(LayoutResult::placed(Strategy::Preserve, grid)).unwrap();
        assert_eq!(v["strategy"], "preserve");
        assert_eq!(v["rows"], 1);
        assert_eq!(v["cols"], 2);
        assert_eq!(v["cells"][1]["is_ad"], true);
        assert_eq!(v["rejected"], false);
        assert!(v["reason"].is_null());
        let back: LayoutResult = serde_json::from_value(v).unwrap();
        assert!(back.grid.is_some());

        let r = serde_json::to_value(LayoutResult::rejected(Strategy::Clustered, "singleton-cluster")).unwrap();
        assert_eq!(r["rejected"], true);
        assert!(r.get("cells").is_none());
        let back: LayoutResult = serde_json::from_value(r).unwrap();
        assert!(back.grid.is_none());
    }

    #[test]
    fn grid_rejects_collisions() {
        let cell = |r, c, id: &str| Cell { row: r, col: c, id: id.into(), is_ad: id == "ad" };
        assert!(Grid::new(1, 2, vec![cell(0, 0, "a"), cell(0, 0, "ad")]).is_err());
        assert!(Grid::new(1, 2, vec![cell(0, 0, "a"), cell(0, 1, "a")]).is_err());
        assert!(Grid::new(1, 2, vec![cell(0, 0, "a"), cell(0, 2, "ad")]).is_err());
        assert!(Grid::new(1, 2, vec![cell(0, 0, "a")]).is_err());
    }

    proptest! {
        #[test]
        fn singleton_fires_iff_cluster_size_one(labels in prop::collection::vec(0usize..4, 2..20)) {
            let ids: Vec<String> = (0..labels.len()).map(|i| format!("p{i}")).collect();
            let e = Embedding2D::from_points(ids.iter().enumerate().map(|(i, id)| (id.clone(), i as f64, (i * i) as f64)));
            let mut dense = BTreeMap::new();
            let labels: Vec<usize> = labels.iter().map(|l| { let n = dense.len(); *dense.entry(*l).or_insert(n) }).collect();
            let c = ClusterAssignment {
                labels: ids.iter().cloned().zip(labels.iter().copied()).collect(),
                modes: vec![[0.0, 0.0]; dense.len()],
                bandwidth: 1.0,
            };
            let ad = &ids[0];
            let size = labels.iter().filter(|l| **l == labels[0]).count();
            let fired = rejection_checks(&e, &c, ad, false).unwrap() == Some(Rejection::SingletonCluster);
            prop_assert_eq!(fired, size == 1);
        }

        #[test]
        fn hull_vertices_are_extreme(pts in prop::collection::vec((-10i32..10, -10i32..10), 3..25)) {
            let pts: Vec<[f64; 2]> = pts.iter().map(|(x, y)| [*x as f64, *y as f64]).collect();
            let hull = convex_hull(&pts);
            // Every input point lies on the inner side of every hull edge.
            if hull.len() >= 3 {
                for i in 0..hull.len() {
                    let (a, b) = (hull[i], hull[(i + 1) % hull.len()]);
                    for p in &pts {
                        let cr = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
                        prop_assert!(cr >= 0.0);
                    }
                }
            }
        }
    }
}
