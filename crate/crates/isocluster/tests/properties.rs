//! Randomized invariant checks for the measurement and analysis layers:
//! exponent monotonicity, perimeter route agreement, relabeling and
//! scaling equivariance, modulus bounds and truncation monotonicity.

use proptest::prelude::*;

use isocluster::analysis::{boundedness_check, required_k_value};
use isocluster::density::{
    beta_exponent, modulus_of_continuity, DensityField, DirectionField, ScalarField,
};
use isocluster::grid::GridCluster;
use isocluster::measures::{cluster_perimeter, weighted_volume};

/// Random small cluster: 2-D grid with labels drawn uniformly in `0..=m`.
fn cluster_strategy(m: u8) -> impl Strategy<Value = GridCluster> {
    (4usize..=12, 4usize..=12)
        .prop_flat_map(move |(rows, cols)| {
            prop::collection::vec(0..=m, rows * cols)
                .prop_map(move |labels| (rows, cols, labels))
        })
        .prop_map(move |(rows, cols, labels)| {
            GridCluster::new(vec![rows, cols], 1.0, vec![0.0, 0.0], labels, m).unwrap()
        })
}

fn lipschitz_field(center: Vec<f64>, scale: f64) -> DensityField {
    DensityField {
        f: ScalarField::Constant(1.0),
        g: DirectionField::Isotropic(ScalarField::RadialHolder {
            center,
            alpha: 1.0,
            scale,
            offset: 1.0,
        }),
        alpha: 0.0,
        family_tag: "radial-holder".into(),
    }
}

proptest! {
    /// The density exponent is nondecreasing in the interpolation
    /// parameter and pinned between the two closed-form endpoints.
    #[test]
    fn exponent_is_monotone_and_bounded(
        a in 0.0f64..=1.0,
        b in 0.0f64..=1.0,
        n in 2u32..=6,
    ) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let beta_lo = beta_exponent(lo, n).unwrap();
        let beta_hi = beta_exponent(hi, n).unwrap();
        prop_assert!(beta_lo <= beta_hi + 1e-15);
        let floor = (n as f64 - 1.0) / n as f64;
        prop_assert!(beta_lo >= floor - 1e-15 && beta_hi <= 1.0 + 1e-15);
        prop_assert_eq!(beta_exponent(0.0, n).unwrap(), floor);
        prop_assert_eq!(beta_exponent(1.0, n).unwrap(), 1.0);
    }

    /// Parameters outside the admissible interpolation range are rejected.
    #[test]
    fn exponent_rejects_out_of_range(a in prop_oneof![-10.0f64..-1e-9, 1.0 + 1e-9..10.0]) {
        prop_assert!(beta_exponent(a, 2).is_err());
    }

    /// The facet sweep and the per-chamber half-sum route must compute the
    /// same cluster perimeter on arbitrary label maps.
    #[test]
    fn perimeter_routes_agree(cluster in cluster_strategy(3)) {
        let field = DensityField::uniform();
        let report = cluster_perimeter(&cluster, &field).unwrap();
        let direct = report.perimeter;
        let routed = report.perimeter_from_chambers();
        prop_assert!((direct - routed).abs() <= 1e-9 * (1.0 + direct.abs()));
        prop_assert!(direct >= 0.0);
    }

    /// Swapping two chamber labels permutes the volume vector and leaves
    /// the total perimeter unchanged (the weight sees labels only through
    /// zero versus nonzero).
    #[test]
    fn label_swap_is_equivariant(cluster in cluster_strategy(2)) {
        let field = DensityField::uniform();
        let mut swapped = cluster.clone();
        for cell in cluster.cells() {
            match cluster.label(&cell) {
                1 => swapped.set_label(&cell, 2),
                2 => swapped.set_label(&cell, 1),
                _ => {}
            }
        }
        let v = weighted_volume(&cluster, &field).unwrap();
        let w = weighted_volume(&swapped, &field).unwrap();
        prop_assert!((v[0] - w[1]).abs() <= 1e-12 && (v[1] - w[0]).abs() <= 1e-12);
        let p = cluster_perimeter(&cluster, &field).unwrap().perimeter;
        let q = cluster_perimeter(&swapped, &field).unwrap().perimeter;
        prop_assert!((p - q).abs() <= 1e-12 * (1.0 + p.abs()));
    }

    /// Rescaling the grid spacing by `s` scales volumes by `s^N` and the
    /// perimeter by `s^{N-1}`.
    #[test]
    fn measures_obey_the_scaling_law(
        cluster in cluster_strategy(3),
        s in prop_oneof![Just(0.25f64), Just(0.5), Just(2.0), Just(4.0)],
    ) {
        let field = DensityField::uniform();
        let scaled = GridCluster::new(
            cluster.shape.clone(),
            cluster.spacing * s,
            cluster.origin.clone(),
            cluster.labels.clone(),
            cluster.m,
        ).unwrap();
        let v = weighted_volume(&cluster, &field).unwrap();
        let vs = weighted_volume(&scaled, &field).unwrap();
        for (a, b) in v.iter().zip(&vs) {
            prop_assert!((a * s * s - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
        let p = cluster_perimeter(&cluster, &field).unwrap().perimeter;
        let ps = cluster_perimeter(&scaled, &field).unwrap().perimeter;
        prop_assert!((p * s - ps).abs() <= 1e-12 * (1.0 + ps.abs()));
    }

    /// The sampled oscillation of a Lipschitz weight over a ball of radius
    /// `t` is nonnegative and within the global Lipschitz bound `2 s t`.
    #[test]
    fn modulus_respects_the_lipschitz_bound(
        cx in -1.0f64..=1.0,
        cy in -1.0f64..=1.0,
        scale in 0.1f64..=3.0,
        t in 1e-3f64..=1.0,
    ) {
        let field = lipschitz_field(vec![cx, cy], scale);
        let w = modulus_of_continuity(&field, &[0.3, 0.7], t, 256).unwrap();
        prop_assert!(w >= 0.0);
        prop_assert!(w <= 2.0 * scale * t + 1e-12);
    }

    /// A uniform weight has zero oscillation at every radius.
    #[test]
    fn uniform_weight_has_zero_modulus(t in 1e-3f64..=2.0) {
        let field = DensityField::uniform();
        let w = modulus_of_continuity(&field, &[0.0, 0.0], t, 128).unwrap();
        prop_assert!(w.abs() <= 1e-15);
    }

    /// The truncated-mass profile is nonincreasing in the radius for any
    /// cluster and any radius grid.
    #[test]
    fn truncated_mass_is_nonincreasing(
        cluster in cluster_strategy(2),
        grid in prop::collection::vec(0.5f64..=24.0, 3..=8),
    ) {
        let field = DensityField::uniform();
        let (_, trace) = boundedness_check(&cluster, &field, 1.0, &grid).unwrap();
        for w in trace.v_values.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12);
        }
    }

    /// The required constant grows with the sampled oscillation and with
    /// the ambient constant, and is always positive.
    #[test]
    fn required_constant_is_monotone(
        w1 in 1e-9f64..=1.0,
        w2 in 1e-9f64..=1.0,
        m1 in 1.0f64..=8.0,
        m2 in 1.0f64..=8.0,
        n in 2u32..=4,
    ) {
        let (wlo, whi) = if w1 <= w2 { (w1, w2) } else { (w2, w1) };
        let (mlo, mhi) = if m1 <= m2 { (m1, m2) } else { (m2, m1) };
        let k = required_k_value(n, mlo, wlo);
        prop_assert!(k > 0.0);
        prop_assert!(k <= required_k_value(n, mlo, whi) + 1e-15);
        prop_assert!(k <= required_k_value(n, mhi, wlo) + 1e-15);
    }
}
