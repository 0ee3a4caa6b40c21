//! Road geometry for single and double crossings.
//!
//! All paths are straight. The ego path runs along +x starting at the
//! origin; every crossing path runs along +y and meets the ego path at its
//! crossing point. Arc length along a path therefore equals Euclidean
//! distance from the path start.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vehicle footprint length (m).
pub const VEHICLE_LENGTH: f64 = 4.0;
/// Vehicle footprint width (m).
pub const VEHICLE_WIDTH: f64 = 2.0;

/// Crossing spacings used for double-crossing scenarios (m).
pub const D_CROSS_CHOICES: [f64; 6] = [4.0, 8.0, 12.0, 25.0, 30.0, 40.0];

/// Identifies a path in a [`PathTopology`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PathId {
    Ego,
    Cross(usize),
}

/// A straight path segment in world coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: [f64; 2],
    /// Unit direction.
    pub direction: [f64; 2],
    pub length: f64,
}

impl Segment {
    pub fn heading(&self) -> f64 {
        self.direction[1].atan2(self.direction[0])
    }

    pub fn point_at(&self, s: f64) -> [f64; 2] {
        [
            self.start[0] + s * self.direction[0],
            self.start[1] + s * self.direction[1],
        ]
    }
}

/// Where a crossing path meets the ego path.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub cross_path: usize,
    /// Arc length of the crossing point on the crossing path.
    pub p_cross_own: f64,
    /// Arc length of the crossing point on the ego path.
    pub p_cross_ego: f64,
}

/// Parameters used to lay out a scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopologySpec {
    /// Number of crossings, 1 or 2.
    pub crossings: usize,
    /// Spacing between consecutive ego crossing points (m). Ignored for a single crossing.
    pub d_cross: f64,
    /// Ego arc length of the first crossing point.
    pub first_crossing: f64,
    /// Length of each crossing path before its crossing point.
    pub approach_length: f64,
    /// Length of each crossing path after its crossing point.
    pub exit_length: f64,
    /// Distance from the last crossing to the goal.
    pub goal_margin: f64,
}

impl Default for TopologySpec {
    fn default() -> Self {
        Self {
            crossings: 1,
            d_cross: 0.0,
            first_crossing: 60.0,
            approach_length: 60.0,
            exit_length: 60.0,
            goal_margin: 30.0,
        }
    }
}

/// Road layout for one scenario. Immutable once built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathTopology {
    ego_path: Segment,
    cross_paths: Vec<Segment>,
    crossings: Vec<Crossing>,
    d_cross: f64,
    goal_position: f64,
}

impl PathTopology {
    pub fn single() -> Self {
        Self::build(&TopologySpec::default()).expect("default topology is valid")
    }

    pub fn double(d_cross: f64) -> Result<Self> {
        Self::build(&TopologySpec {
            crossings: 2,
            d_cross,
            ..TopologySpec::default()
        })
    }

    pub fn build(spec: &TopologySpec) -> Result<Self> {
        if !(1..=2).contains(&spec.crossings) {
            return Err(Error::InvalidConfig(format!(
                "crossings must be 1 or 2, got {}",
                spec.crossings
            )));
        }
        if spec.crossings == 2 && !D_CROSS_CHOICES.contains(&spec.d_cross) {
            return Err(Error::InvalidConfig(format!(
                "d_cross {} is not one of {:?}",
                spec.d_cross, D_CROSS_CHOICES
            )));
        }
        if spec.first_crossing <= 0.0
            || spec.approach_length <= 0.0
            || spec.exit_length <= 0.0
            || spec.goal_margin <= 0.0
        {
            return Err(Error::InvalidConfig(
                "topology lengths must be positive".into(),
            ));
        }
        let d_cross = if spec.crossings == 2 { spec.d_cross } else { 0.0 };

        let mut cross_paths = Vec::with_capacity(spec.crossings);
        let mut crossings = Vec::with_capacity(spec.crossings);
        for i in 0..spec.crossings {
            let p_cross_ego = spec.first_crossing + i as f64 * d_cross;
            cross_paths.push(Segment {
                start: [p_cross_ego, -spec.approach_length],
                direction: [0.0, 1.0],
                length: spec.approach_length + spec.exit_length,
            });
            crossings.push(Crossing {
                cross_path: i,
                p_cross_own: spec.approach_length,
                p_cross_ego,
            });
        }
        let last = crossings.last().map(|c| c.p_cross_ego).unwrap_or(0.0);
        let goal_position = last + spec.goal_margin;
        let ego_path = Segment {
            start: [0.0, 0.0],
            direction: [1.0, 0.0],
            length: goal_position + VEHICLE_LENGTH,
        };
        Ok(Self {
            ego_path,
            cross_paths,
            crossings,
            d_cross,
            goal_position,
        })
    }

    pub fn ego_path(&self) -> &Segment {
        &self.ego_path
    }

    pub fn cross_paths(&self) -> &[Segment] {
        &self.cross_paths
    }

    pub fn crossings(&self) -> &[Crossing] {
        &self.crossings
    }

    pub fn crossing_for(&self, cross_path: usize) -> Option<&Crossing> {
        self.crossings.iter().find(|c| c.cross_path == cross_path)
    }

    pub fn d_cross(&self) -> f64 {
        self.d_cross
    }

    pub fn goal_position(&self) -> f64 {
        self.goal_position
    }

    pub fn segment(&self, path: PathId) -> Result<&Segment> {
        match path {
            PathId::Ego => Ok(&self.ego_path),
            PathId::Cross(i) => self
                .cross_paths
                .get(i)
                .ok_or_else(|| Error::InvalidInput(format!("no crossing path {i}"))),
        }
    }

    /// Oriented footprint of a vehicle centred at arc length `p` on `path`.
    pub fn frenet_to_world(&self, path: PathId, p: f64) -> Result<VehicleFrame> {
        let seg = self.segment(path)?;
        if !(0.0..=seg.length).contains(&p) {
            return Err(Error::OutOfRange {
                value: p,
                min: 0.0,
                max: seg.length,
            });
        }
        Ok(VehicleFrame::new(seg.point_at(p), seg.heading()))
    }

    /// Like [`frenet_to_world`](Self::frenet_to_world) but extrapolates past the path ends.
    pub(crate) fn frame_unchecked(&self, path: PathId, p: f64) -> VehicleFrame {
        let seg = self.segment(path).expect("path id from this topology");
        VehicleFrame::new(seg.point_at(p), seg.heading())
    }
}

/// Oriented rectangle occupied by a vehicle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleFrame {
    pub center: [f64; 2],
    pub heading: f64,
    pub length: f64,
    pub width: f64,
}

impl VehicleFrame {
    pub fn new(center: [f64; 2], heading: f64) -> Self {
        Self {
            center,
            heading,
            length: VEHICLE_LENGTH,
            width: VEHICLE_WIDTH,
        }
    }

    /// Unit vectors along the length and width directions.
    fn axes(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.heading.sin_cos();
        [[c, s], [-s, c]]
    }

    pub fn corners(&self) -> [[f64; 2]; 4] {
        let [u, w] = self.axes();
        let hl = 0.5 * self.length;
        let hw = 0.5 * self.width;
        let [cx, cy] = self.center;
        let mut out = [[0.0; 2]; 4];
        for (i, (sl, sw)) in [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)]
            .into_iter()
            .enumerate()
        {
            out[i] = [
                cx + sl * hl * u[0] + sw * hw * w[0],
                cy + sl * hl * u[1] + sw * hw * w[1],
            ];
        }
        out
    }

    /// Whether the point lies inside or on the rectangle.
    pub fn contains(&self, point: [f64; 2]) -> bool {
        let [u, w] = self.axes();
        let d = [point[0] - self.center[0], point[1] - self.center[1]];
        let along = d[0] * u[0] + d[1] * u[1];
        let across = d[0] * w[0] + d[1] * w[1];
        along.abs() <= 0.5 * self.length && across.abs() <= 0.5 * self.width
    }

    fn project(&self, axis: [f64; 2]) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for c in self.corners() {
            let d = c[0] * axis[0] + c[1] * axis[1];
            lo = lo.min(d);
            hi = hi.max(d);
        }
        (lo, hi)
    }
}

/// Separating-axis test on the four edge normals of the two rectangles.
///
/// Touching edges count as overlap.
pub fn frames_overlap(a: &VehicleFrame, b: &VehicleFrame) -> bool {
    let [a0, a1] = a.axes();
    let [b0, b1] = b.axes();
    for axis in [a0, a1, b0, b1] {
        let (amin, amax) = a.project(axis);
        let (bmin, bmax) = b.project(axis);
        if amax < bmin || bmax < amin {
            return false;
        }
    }
    true
}
