use intersect::sim::World;
use intersect::topology::{VEHICLE_LENGTH, VEHICLE_WIDTH};

/// Rectangle as centre, heading and half extents, independent of `VehicleFrame`.
#[derive(Clone, Copy, Debug)]
pub struct Rect {
    pub c: [f64; 2],
    pub heading: f64,
}

impl Rect {
    pub fn to_world(self, along: f64, across: f64) -> [f64; 2] {
        let (s, c) = self.heading.sin_cos();
        [self.c[0] + along * c - across * s, self.c[1] + along * s + across * c]
    }

    pub fn contains(self, q: [f64; 2]) -> bool {
        let (s, c) = self.heading.sin_cos();
        let d = [q[0] - self.c[0], q[1] - self.c[1]];
        let along = d[0] * c + d[1] * s;
        let across = -d[0] * s + d[1] * c;
        along.abs() <= 0.5 * VEHICLE_LENGTH + 1e-12 && across.abs() <= 0.5 * VEHICLE_WIDTH + 1e-12
    }
}

/// Whether any grid point of one rectangle, edges included, lies in the other.
pub fn grid_overlap(a: Rect, b: Rect) -> bool {
    const NL: usize = 400;
    const NW: usize = 200;
    let hits = |x: Rect, y: Rect| {
        (0..=NL).any(|i| {
            let along = (i as f64 / NL as f64 - 0.5) * VEHICLE_LENGTH;
            (0..=NW).any(|j| {
                let across = (j as f64 / NW as f64 - 0.5) * VEHICLE_WIDTH;
                y.contains(x.to_world(along, across))
            })
        })
    };
    hits(a, b) || hits(b, a)
}

/// Exact overlap of the axis-aligned ego and crossing-path footprints.
pub fn analytic_collision(world: &World) -> bool {
    let topo = world.topology();
    let approach = topo.crossings()[0].p_cross_own;
    let e = world.ego().p;
    world.traffic().iter().filter(|t| t.active).any(|t| {
        let x = topo.crossing_for(t.path).unwrap().p_cross_ego;
        let y = t.state.p - approach;
        let hl = 0.5 * VEHICLE_LENGTH;
        let hw = 0.5 * VEHICLE_WIDTH;
        (e - x).abs() <= hl + hw && y.abs() <= hw + hl
    })
}
