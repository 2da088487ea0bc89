//! Sweep the measured perimeter-cost constant over a grid of volume
//! scales. Under a Lipschitz perimeter weight the constant decays as the
//! scale shrinks; under a uniform weight it stays in the constant-weight
//! regime with no finite rate reference.

use isocluster::analysis::cper_sweep;
use isocluster::density::{DensityField, DirectionField, ScalarField};
use isocluster::fixtures;

fn main() {
    let band = fixtures::band(512, 1.0 / 512.0);
    let lipschitz = DensityField {
        f: ScalarField::Constant(1.0),
        g: DirectionField::Isotropic(ScalarField::RadialHolder {
            center: vec![0.25, 0.5],
            alpha: 1.0,
            scale: 1.0,
            offset: 1.0,
        }),
        alpha: 0.0,
        family_tag: "radial-holder".into(),
    };
    let t_grid = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6];

    for (name, field) in [("lipschitz weight", &lipschitz), ("uniform weight", &DensityField::uniform())] {
        let curve = cper_sweep(&band, field, 1, &t_grid, 3, 5).unwrap();
        println!("{name}:");
        println!("  t           cost        modulus reference");
        for ((t, c), w) in curve.t_grid.iter().zip(&curve.c_values).zip(&curve.omega_curve) {
            println!("  {t:<10.1e}  {c:<10.4}  {w:<10.4}");
        }
        match curve.fit_ratio {
            Some(r) => println!("  largest cost/reference ratio: {r:.3}"),
            None => println!("  note: {}", curve.note),
        }
    }
}
