//! Tour of the density layer: built-in families, the interpolation
//! exponent, sampled local bounds and the derived perimeter constant.

use isocluster::analysis::required_k;
use isocluster::density::{
    beta_exponent, local_bounds, DensityField, DirectionField, ScalarField,
};
use isocluster::io::parse_density_config;

fn main() {
    println!("exponent beta(alpha, N):");
    for n in [2u32, 3, 4] {
        let row: Vec<f64> =
            [0.0, 0.25, 0.5, 0.75, 1.0].iter().map(|&a| beta_exponent(a, n).unwrap()).collect();
        println!("  N = {n}: {row:?}");
    }

    // A Lipschitz radial weight, built directly.
    let radial = DensityField {
        f: ScalarField::Constant(1.0),
        g: DirectionField::Isotropic(ScalarField::RadialHolder {
            center: vec![0.0, 0.0],
            alpha: 1.0,
            scale: 0.5,
            offset: 1.0,
        }),
        alpha: 0.0,
        family_tag: "radial-holder".into(),
    };
    let b = local_bounds(&radial, &[0.5, 0.5], 2048).unwrap();
    println!("radial weight at (0.5, 0.5): M = {:.4}", b.m);
    for (t, w) in &b.omega_table {
        println!("  omega({t:.4}) = {w:.4}");
    }
    let k = required_k(&radial, &[0.5, 0.5], 0.7, 2048).unwrap();
    println!("  required constant K = {:.4} (C = {:.0})", k.k_required, k.c_const);

    // The same family through the JSON configuration format.
    let config = r#"{
        "family": "direction-weighted",
        "params": { "h": 1.0, "c": 0.5, "u": [1.0, 0.0] },
        "alpha": 0.0
    }"#;
    let aniso = parse_density_config(config).unwrap();
    let east = aniso.g_eval(&[0.0, 0.0], &[1.0, 0.0]).unwrap();
    let west = aniso.g_eval(&[0.0, 0.0], &[-1.0, 0.0]).unwrap();
    println!("direction-weighted config: g(x, +e1) = {east}, g(x, -e1) = {west}");
    let sym = aniso.symmetrized();
    println!(
        "symmetrized: {} in both directions",
        sym.g_eval(&[0.0, 0.0], &[1.0, 0.0]).unwrap()
    );
}
