//! Curvilinear (s, d) coordinates relative to a polyline reference path.

use serde::{Deserialize, Serialize};

use crate::model::{ReferencePath, Trajectory};

/// Arc length along the path and signed lateral offset (positive to the left).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvilinearCoord {
    pub s: f64,
    pub d: f64,
}

/// Projects a point onto the globally closest point of the path.
///
/// Every segment is considered; when two candidates are equally close the one
/// with the smaller arc length wins. The sign of `d` comes from the cross
/// product of the winning segment's direction with the offset vector.
pub fn project(point: [f64; 2], path: &ReferencePath) -> CurvilinearCoord {
    let [px, py] = point;
    let vertices = path.vertices();
    let arc = path.arc_lengths();

    let mut best_dist = f64::INFINITY;
    let mut best = CurvilinearCoord { s: 0.0, d: 0.0 };

    for k in 0..path.segment_count() {
        let [ax, ay] = vertices[k];
        let [bx, by] = vertices[k + 1];
        let (ex, ey) = (bx - ax, by - ay);
        let (wx, wy) = (px - ax, py - ay);
        let len_sq = ex * ex + ey * ey;
        let t = (wx * ex + wy * ey) / len_sq;
        let cross = ex * wy - ey * wx;
        // interior feet use the perpendicular distance so on-path points get d == 0 exactly
        let (s, dist) = if t <= 0.0 {
            (arc[k], wx.hypot(wy))
        } else if t >= 1.0 {
            (arc[k + 1], (px - bx).hypot(py - by))
        } else {
            (
                arc[k] + t * (arc[k + 1] - arc[k]),
                cross.abs() / len_sq.sqrt(),
            )
        };
        if dist < best_dist {
            best_dist = dist;
            best = CurvilinearCoord {
                s,
                d: if cross < 0.0 { -dist } else { dist },
            };
        }
    }
    best
}

pub fn project_trajectory(traj: &Trajectory, path: &ReferencePath) -> Vec<CurvilinearCoord> {
    traj.points()
        .iter()
        .map(|p| project(p.position(), path))
        .collect()
}
