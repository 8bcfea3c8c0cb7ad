//! Uniform-grid point index for exact nearest-neighbour and radius queries.

use crate::geometry::{Aabb, Vec3};

#[derive(Debug, Clone)]
pub struct PointGrid<'a> {
    points: &'a [Vec3],
    bounds: Aabb,
    cell: f64,
    dims: [usize; 3],
    /// CSR layout: `starts[c]..starts[c+1]` indexes into `items`.
    starts: Vec<usize>,
    items: Vec<usize>,
}

impl<'a> PointGrid<'a> {
    /// Builds a grid with roughly `per_cell` points per occupied cell.
    /// Returns `None` for an empty point set.
    pub fn new(points: &'a [Vec3], per_cell: usize) -> Option<Self> {
        let bounds = Aabb::from_points(points.iter())?;
        let ext = bounds.extents();
        let volume_proxy = ext.iter().filter(|e| **e > 0.0).product::<f64>();
        let active_dims = ext.iter().filter(|e| **e > 0.0).count().max(1) as i32;
        let target_cells = (points.len() as f64 / per_cell.max(1) as f64).max(1.0);
        let mut cell = if volume_proxy > 0.0 {
            (volume_proxy / target_cells).powf(1.0 / active_dims as f64)
        } else {
            1.0
        };
        let max_ext = ext.max();
        if max_ext > 0.0 {
            // Keep the cell count bounded for elongated sets.
            cell = cell.max(max_ext / 256.0);
        }
        Some(Self::with_cell_size(points, bounds, cell))
    }

    pub fn with_cell_size(points: &'a [Vec3], bounds: Aabb, cell: f64) -> Self {
        let cell = if cell > 0.0 && cell.is_finite() { cell } else { 1.0 };
        let ext = bounds.extents();
        let dims = [0, 1, 2].map(|i| ((ext[i] / cell).floor() as usize + 1).max(1));
        let n_cells = dims[0] * dims[1] * dims[2];
        let mut counts = vec![0usize; n_cells + 1];
        let mut cell_of = Vec::with_capacity(points.len());
        let mut grid = Self {
            points,
            bounds,
            cell,
            dims,
            starts: Vec::new(),
            items: Vec::new(),
        };
        for p in points {
            let c = grid.flat(grid.cell_coords(p));
            cell_of.push(c);
            counts[c + 1] += 1;
        }
        for i in 0..n_cells {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut items = vec![0usize; points.len()];
        for (i, &c) in cell_of.iter().enumerate() {
            items[fill[c]] = i;
            fill[c] += 1;
        }
        grid.starts = counts;
        grid.items = items;
        grid
    }

    pub fn points(&self) -> &'a [Vec3] {
        self.points
    }

    fn cell_coords(&self, p: &Vec3) -> [usize; 3] {
        [0, 1, 2].map(|i| {
            let f = ((p[i] - self.bounds.min[i]) / self.cell).floor();
            if f < 0.0 {
                0
            } else {
                (f as usize).min(self.dims[i] - 1)
            }
        })
    }

    fn flat(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    fn cell_items(&self, c: [usize; 3]) -> &[usize] {
        let f = self.flat(c);
        &self.items[self.starts[f]..self.starts[f + 1]]
    }

    /// Exact nearest neighbour: `(index, distance)`.
    pub fn nearest(&self, q: &Vec3) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        // Closest point of the bounds; |q - x|^2 >= |q - q'|^2 + |q' - x|^2 for x in bounds.
        let clamped = Vec3::new(
            q.x.clamp(self.bounds.min.x, self.bounds.max.x),
            q.y.clamp(self.bounds.min.y, self.bounds.max.y),
            q.z.clamp(self.bounds.min.z, self.bounds.max.z),
        );
        let outside2 = (q - clamped).norm_squared();
        let home = self.cell_coords(&clamped);
        let max_ring = self.dims.iter().copied().max().unwrap_or(1);

        let mut best = (usize::MAX, f64::INFINITY);
        for ring in 0..=max_ring {
            self.visit_ring(home, ring, |i| {
                let d2 = (self.points[i] - q).norm_squared();
                if d2 < best.1 || (d2 == best.1 && i < best.0) {
                    best = (i, d2);
                }
            });
            if best.0 != usize::MAX {
                // Lower bound on distance to any cell outside the current block.
                let inner = self.block_margin(&clamped, home, ring);
                let bound2 = outside2 + inner * inner;
                if best.1 < bound2 {
                    break;
                }
            }
        }
        Some((best.0, best.1.sqrt()))
    }

    /// Distance from `p` (inside bounds) to the outside of the cell block of
    /// Chebyshev radius `ring` around `home`, restricted to axes where the
    /// block does not already reach the grid edge.
    fn block_margin(&self, p: &Vec3, home: [usize; 3], ring: usize) -> f64 {
        let mut margin = f64::INFINITY;
        for i in 0..3 {
            let lo_cell = home[i] as i64 - ring as i64;
            let hi_cell = home[i] as i64 + ring as i64;
            if lo_cell > 0 {
                let lo = self.bounds.min[i] + lo_cell as f64 * self.cell;
                margin = margin.min(p[i] - lo);
            }
            if (hi_cell as usize) < self.dims[i] - 1 {
                let hi = self.bounds.min[i] + (hi_cell + 1) as f64 * self.cell;
                margin = margin.min(hi - p[i]);
            }
        }
        margin.max(0.0)
    }

    fn visit_ring(&self, home: [usize; 3], ring: usize, mut f: impl FnMut(usize)) {
        let r = ring as i64;
        let lo = home.map(|h| h as i64 - r);
        let hi = home.map(|h| h as i64 + r);
        for z in lo[2].max(0)..=hi[2].min(self.dims[2] as i64 - 1) {
            for y in lo[1].max(0)..=hi[1].min(self.dims[1] as i64 - 1) {
                let on_shell_yz = z == lo[2] || z == hi[2] || y == lo[1] || y == hi[1];
                let mut x = lo[0].max(0);
                let x_end = hi[0].min(self.dims[0] as i64 - 1);
                while x <= x_end {
                    if on_shell_yz || x == lo[0] || x == hi[0] {
                        for &i in self.cell_items([x as usize, y as usize, z as usize]) {
                            f(i);
                        }
                        x += 1;
                    } else {
                        // Interior of this row was visited by earlier rings.
                        x = hi[0];
                    }
                }
            }
        }
    }

    /// Indices within `radius` (inclusive) of `q`, ascending.
    pub fn within(&self, q: &Vec3, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.visit_within(q, radius, |i| out.push(i));
        out.sort_unstable();
        out
    }

    /// Calls `f` for every index within `radius` (inclusive) of `q`, in
    /// grid order.
    pub fn visit_within(&self, q: &Vec3, radius: f64, mut f: impl FnMut(usize)) {
        let r2 = radius * radius;
        let lo = [0, 1, 2].map(|i| {
            let f = ((q[i] - radius - self.bounds.min[i]) / self.cell).floor();
            f.max(0.0) as usize
        });
        let hi = [0, 1, 2].map(|i| {
            let f = ((q[i] + radius - self.bounds.min[i]) / self.cell).floor();
            if f < 0.0 {
                None
            } else {
                Some((f as usize).min(self.dims[i] - 1))
            }
        });
        let (Some(hx), Some(hy), Some(hz)) = (hi[0], hi[1], hi[2]) else {
            return;
        };
        for z in lo[2]..=hz {
            for y in lo[1]..=hy {
                for x in lo[0]..=hx {
                    for &i in self.cell_items([x, y, z]) {
                        if (self.points[i] - q).norm_squared() <= r2 {
                            f(i);
                        }
                    }
                }
            }
        }
    }
}

/// Median nearest-neighbour spacing (excluding self-matches at distance 0
/// only by index, so duplicates count as spacing 0).
pub fn median_nn_spacing(points: &[Vec3]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let grid = PointGrid::new(points, 4)?;
    let mut d: Vec<f64> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            // Two nearest: query radius growing until a second point appears.
            let mut r = grid.cell.max(1e-12);
            loop {
                let mut best = f64::INFINITY;
                grid.visit_within(p, r, |j| {
                    if j != i {
                        best = best.min((points[j] - p).norm());
                    }
                });
                if best <= r {
                    return best;
                }
                r *= 2.0;
            }
        })
        .collect();
    Some(median(&mut d))
}

pub fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
