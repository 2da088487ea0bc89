//! Reference clusters used by the examples, the test suite and the
//! regression corpus: flat and curved interfaces, nested rings, disks,
//! planted inclusions and adversarial shapes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grid::GridCluster;

/// Two adjacent unit squares, labels 1 and 2; cluster perimeter 7 under
/// the uniform density.
pub fn two_squares() -> GridCluster {
    GridCluster::new(vec![1, 2], 1.0, vec![0.0, 0.0], vec![1, 2], 2).unwrap()
}

/// `n x n` grid split along axis 0: label 1 on the lower half, label 2 on
/// the upper half. The flat-interface workhorse.
pub fn stacked_halves(n: usize, spacing: f64) -> GridCluster {
    let mut labels = vec![2u8; n * n];
    for r in 0..n / 2 {
        for c in 0..n {
            labels[r * n + c] = 1;
        }
    }
    GridCluster::new(vec![n, n], spacing, vec![0.0, 0.0], labels, 2).unwrap()
}

/// Single chamber occupying the middle half of the rows, exterior above
/// and below; both chamber interfaces are flat and explicit.
pub fn band(n: usize, spacing: f64) -> GridCluster {
    let mut labels = vec![0u8; n * n];
    for r in n / 4..3 * n / 4 {
        for c in 0..n {
            labels[r * n + c] = 1;
        }
    }
    GridCluster::new(vec![n, n], spacing, vec![0.0, 0.0], labels, 1).unwrap()
}

/// Curved-interface fixture: chamber 2 sits strictly inside chamber 1,
/// bounded below by a wavy interface with a flat central plateau (where
/// the transfer pipeline can anchor) and above by a staircase cap.
pub fn sine_interface(n: usize, spacing: f64) -> GridCluster {
    assert!(n >= 64, "sine fixture needs at least 64 cells per side");
    let mut labels = vec![1u8; n * n];
    let c_lo = n / 16;
    let c_hi = n - n / 16;
    let mid = n / 2;
    let plateau = n / 13; // half-width of the flat stretch
    for c in c_lo..c_hi {
        let d = (c as isize - mid as isize).unsigned_abs();
        let bump = if d <= plateau {
            0
        } else {
            let span = (c_hi - mid - plateau) as f64;
            (4.0 * (std::f64::consts::PI * (d - plateau) as f64 / span).sin()).round() as isize
        };
        let base = (mid as isize - bump) as usize;
        let cap = n - n / 16 - (c / 24) % 3;
        for r in base..cap {
            labels[r * n + c] = 2;
        }
    }
    GridCluster::new(vec![n, n], spacing, vec![0.0, 0.0], labels, 2).unwrap()
}

/// Three nested square rings on a 64x64 grid (spacing 1/8): chamber 1
/// outermost, chamber 3 innermost; only consecutive chambers touch.
pub fn nested_rings() -> GridCluster {
    let n = 64;
    let mut labels = vec![0u8; n * n];
    let paint = |lo: usize, hi: usize, label: u8, labels: &mut Vec<u8>| {
        for r in lo..hi {
            for c in lo..hi {
                labels[r * n + c] = label;
            }
        }
    };
    paint(4, 60, 1, &mut labels);
    paint(14, 50, 2, &mut labels);
    paint(24, 40, 3, &mut labels);
    GridCluster::new(vec![n, n], 0.125, vec![0.0, 0.0], labels, 3).unwrap()
}

/// Disk of radius 1 centered at the origin on an `n x n` grid covering
/// `[-1.25, 1.25]^2`.
pub fn disk(n: usize) -> GridCluster {
    let spacing = 2.5 / n as f64;
    let origin = vec![-1.25, -1.25];
    let mut labels = vec![0u8; n * n];
    for r in 0..n {
        for c in 0..n {
            let x = origin[0] + (r as f64 + 0.5) * spacing;
            let y = origin[1] + (c as f64 + 0.5) * spacing;
            if x * x + y * y <= 1.0 {
                labels[r * n + c] = 1;
            }
        }
    }
    GridCluster::new(vec![n, n], spacing, origin, labels, 1).unwrap()
}

/// Chamber 1 fills the lower half; the upper half is split between
/// chamber 2 (right) and chamber 3 (left). Returns the cluster and a
/// point on the (1,2) interface at the triple junction, where the
/// complement of `E_1 ∪ E_2` has strictly positive density.
pub fn quadrant(n: usize) -> (GridCluster, Vec<f64>) {
    let mut labels = vec![0u8; n * n];
    for r in 0..n {
        for c in 0..n {
            labels[r * n + c] = if r < n / 2 {
                1
            } else if c >= n / 2 {
                2
            } else {
                3
            };
        }
    }
    let cluster = GridCluster::new(vec![n, n], 1.0, vec![0.0, 0.0], labels, 3).unwrap();
    let x = vec![n as f64 / 2.0, n as f64 / 2.0 + 0.5];
    (cluster, x)
}

/// Sizes (rows, cols) of the planted inclusions, from a single cell up to
/// the largest slab that still passes the density-zero radius search.
pub const INCLUSION_SIZES: [(usize, usize); 10] =
    [(1, 1), (1, 2), (2, 2), (1, 6), (2, 5), (3, 4), (2, 8), (3, 7), (2, 12), (3, 9)];

/// Stacked halves on a 256x256 unit-spacing grid with a label-3 slab
/// planted across the (1,2) interface. Returns the cluster and a point on
/// the interface a few cells away from the slab.
pub fn foreign_inclusion(variant: usize) -> (GridCluster, Vec<f64>) {
    let n = 256;
    let (rows, cols) = INCLUSION_SIZES[variant % INCLUSION_SIZES.len()];
    let mut cluster = stacked_halves(n, 1.0);
    cluster.m = 3;
    let r0 = n / 2 - (rows + 1) / 2;
    let c0 = n / 2 - cols / 2;
    for r in r0..r0 + rows {
        for c in c0..c0 + cols {
            cluster.set_label(&[r, c], 3);
        }
    }
    // Interface facet centroid at column n/2 - 8, left of the slab.
    let x = vec![n as f64 / 2.0, n as f64 / 2.0 - 7.5];
    (cluster, x)
}

/// Centered vertical-interface fixture: chamber 1 on `x_1 < 0`, chamber 2
/// on `x_1 > 0`, extent `[-2, 2]^2`. Returns the cluster and a ball
/// around the origin contained in `E_1 ∪ E_2`.
pub fn vertical_interface_ball(n: usize) -> (GridCluster, (Vec<f64>, f64)) {
    let spacing = 4.0 / n as f64;
    let origin = vec![-2.0, -2.0];
    let mut labels = vec![2u8; n * n];
    for r in 0..n / 2 {
        for c in 0..n {
            labels[r * n + c] = 1;
        }
    }
    let cluster = GridCluster::new(vec![n, n], spacing, origin, labels, 2).unwrap();
    (cluster, (vec![0.0, 0.0], 1.5))
}

/// Random two-chamber cluster: every cell gets label 1 or 2 from a seeded
/// generator.
pub fn two_chamber_random(n: usize, seed: u64) -> GridCluster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<u8> = (0..n * n).map(|_| if rng.gen::<bool>() { 1 } else { 2 }).collect();
    GridCluster::new(vec![n, n], 1.0, vec![0.0, 0.0], labels, 2).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_squares_shape() {
        let c = two_squares();
        assert_eq!(c.raw_volumes(), vec![1.0, 1.0]);
    }

    #[test]
    fn stacked_halves_volumes() {
        let c = stacked_halves(8, 0.5);
        assert_eq!(c.raw_volumes(), vec![8.0, 8.0]);
    }

    #[test]
    fn sine_interface_is_strictly_nested() {
        let c = sine_interface(256, 1.0 / 256.0);
        // Chamber 2 must not touch the grid edge.
        for k in 0..256 {
            assert_ne!(c.label(&[0, k]), 2);
            assert_ne!(c.label(&[255, k]), 2);
            assert_ne!(c.label(&[k, 0]), 2);
            assert_ne!(c.label(&[k, 255]), 2);
        }
        // The central plateau is flat at the midline.
        for c_idx in 120..137 {
            assert_eq!(c.label(&[127, c_idx]), 1);
            assert_eq!(c.label(&[128, c_idx]), 2);
        }
    }

    #[test]
    fn nested_rings_adjacency() {
        let c = nested_rings();
        // Innermost chamber is fully surrounded by chamber 2.
        for r in 0..64usize {
            for col in 0..64usize {
                if c.label(&[r, col]) == 3 {
                    for (dr, dc) in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)] {
                        let nb = c.label_at(&[r as isize + dr, col as isize + dc]);
                        assert!(nb == 2 || nb == 3);
                    }
                }
            }
        }
    }

    #[test]
    fn disk_area_is_close_to_pi() {
        let c = disk(512);
        let v = c.raw_volumes()[0];
        assert!((v - std::f64::consts::PI).abs() < 0.01, "area {v}");
    }

    #[test]
    fn inclusions_straddle_the_interface() {
        for k in 0..INCLUSION_SIZES.len() {
            let (c, _) = foreign_inclusion(k);
            let planted = c.labels.iter().filter(|&&l| l == 3).count();
            let (rows, cols) = INCLUSION_SIZES[k];
            assert_eq!(planted, rows * cols);
            assert!(planted <= 30);
        }
    }

    #[test]
    fn random_cluster_is_deterministic() {
        assert_eq!(two_chamber_random(16, 7).labels, two_chamber_random(16, 7).labels);
        assert_ne!(two_chamber_random(16, 7).labels, two_chamber_random(16, 8).labels);
    }
}
