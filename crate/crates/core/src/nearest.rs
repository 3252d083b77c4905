//! Dense uniform-grid nearest-neighbor index over a small vertex set, used
//! for the per-point pseudo-ground-truth assignment. Verified against brute
//! force.

pub struct NearestGrid {
    points: Vec<f64>,
    lo: [f64; 3],
    cell: f64,
    dims: [usize; 3],
    /// CSR layout: cell c holds ids[starts[c]..starts[c+1]].
    starts: Vec<u32>,
    ids: Vec<u32>,
}

impl NearestGrid {
    pub fn build(points: &[f64]) -> Self {
        assert!(points.len() % 3 == 0 && !points.is_empty());
        let n = points.len() / 3;
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for i in 0..n {
            for k in 0..3 {
                lo[k] = lo[k].min(points[3 * i + k]);
                hi[k] = hi[k].max(points[3 * i + k]);
            }
        }
        let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0f64, f64::max).max(1e-9);
        // Aim for a few vertices per occupied cell.
        let per_axis = ((n as f64 / 4.0).cbrt().ceil() as usize).clamp(1, 64);
        let cell = extent / per_axis as f64 * (1.0 + 1e-12);
        let dims = [
            ((hi[0] - lo[0]) / cell).floor() as usize + 1,
            ((hi[1] - lo[1]) / cell).floor() as usize + 1,
            ((hi[2] - lo[2]) / cell).floor() as usize + 1,
        ];
        let n_cells = dims[0] * dims[1] * dims[2];
        let key = |p: &[f64]| -> usize {
            let cx = ((p[0] - lo[0]) / cell).floor() as usize;
            let cy = ((p[1] - lo[1]) / cell).floor() as usize;
            let cz = ((p[2] - lo[2]) / cell).floor() as usize;
            (cz * dims[1] + cy) * dims[0] + cx
        };
        let mut counts = vec![0u32; n_cells + 1];
        for i in 0..n {
            counts[key(&points[3 * i..3 * i + 3]) + 1] += 1;
        }
        for c in 0..n_cells {
            counts[c + 1] += counts[c];
        }
        let starts = counts.clone();
        let mut cursor = counts;
        let mut ids = vec![0u32; n];
        for i in 0..n {
            let c = key(&points[3 * i..3 * i + 3]);
            ids[cursor[c] as usize] = i as u32;
            cursor[c] += 1;
        }
        Self { points: points.to_vec(), lo, cell, dims, starts, ids }
    }

    #[inline]
    fn dist2(&self, i: usize, p: &[f64; 3]) -> f64 {
        let q = &self.points[3 * i..3 * i + 3];
        (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2) + (q[2] - p[2]).powi(2)
    }

    /// Index of the exact Euclidean nearest vertex. Scans Chebyshev rings of
    /// cells outward from the (clamped) query cell; a cell in ring k+1 lies
    /// at least k*cell away from anywhere in the query cell, so the search
    /// stops once the best distance is within k*cell of the query.
    pub fn nearest(&self, p: &[f64; 3]) -> usize {
        let coord = |k: usize| -> i64 {
            (((p[k] - self.lo[k]) / self.cell).floor() as i64).clamp(0, self.dims[k] as i64 - 1)
        };
        let (cx, cy, cz) = (coord(0), coord(1), coord(2));
        // Distance from the query to its clamped cell (zero when inside the
        // grid); extends the stopping bound for out-of-bbox queries.
        let clamp_gap = {
            let mut g2 = 0.0f64;
            for k in 0..3 {
                let lo = self.lo[k] + coord(k) as f64 * self.cell;
                let hi = lo + self.cell;
                let d = if p[k] < lo {
                    lo - p[k]
                } else if p[k] > hi {
                    p[k] - hi
                } else {
                    0.0
                };
                g2 += d * d;
            }
            g2.sqrt()
        };
        let max_ring = self.dims.iter().max().unwrap() + 1;
        let mut best = usize::MAX;
        let mut best_d = f64::INFINITY;
        for ring in 0..=max_ring as i64 {
            if best != usize::MAX && best_d <= (ring - 1).max(0) as f64 * self.cell - clamp_gap {
                break;
            }
            let (x0, x1) = ((cx - ring).max(0), (cx + ring).min(self.dims[0] as i64 - 1));
            let (y0, y1) = ((cy - ring).max(0), (cy + ring).min(self.dims[1] as i64 - 1));
            let (z0, z1) = ((cz - ring).max(0), (cz + ring).min(self.dims[2] as i64 - 1));
            for z in z0..=z1 {
                for y in y0..=y1 {
                    for x in x0..=x1 {
                        let on_shell = (x - cx).abs().max((y - cy).abs()).max((z - cz).abs())
                            == ring;
                        if !on_shell {
                            continue;
                        }
                        let c = ((z as usize) * self.dims[1] + y as usize) * self.dims[0]
                            + x as usize;
                        let (s, e) = (self.starts[c] as usize, self.starts[c + 1] as usize);
                        for &i in &self.ids[s..e] {
                            let d = self.dist2(i as usize, p).sqrt();
                            if d < best_d || (d == best_d && (i as usize) < best) {
                                best_d = d;
                                best = i as usize;
                            }
                        }
                    }
                }
            }
        }
        best
    }
}

/// Brute-force nearest neighbor, the oracle for grid parity tests.
pub fn nearest_brute_force(points: &[f64], p: &[f64; 3]) -> usize {
    let n = points.len() / 3;
    let mut best = 0;
    let mut best_d2 = f64::INFINITY;
    for i in 0..n {
        let q = &points[3 * i..3 * i + 3];
        let d2 = (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2) + (q[2] - p[2]).powi(2);
        if d2 < best_d2 {
            best_d2 = d2;
            best = i;
        }
    }
    best
}
