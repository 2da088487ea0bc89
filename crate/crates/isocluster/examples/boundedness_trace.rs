//! Truncation-based boundedness check: track the weighted mass outside
//! growing balls and test the differential inequality margin.

use isocluster::analysis::boundedness_check;
use isocluster::density::DensityField;
use isocluster::fixtures;

fn main() {
    let field = DensityField::uniform();
    let disk = fixtures::disk(512);
    let t_grid = [0.25, 0.5, 0.75, 1.0, 1.2];

    let (verdict, trace) = boundedness_check(&disk, &field, 1.0, &t_grid).unwrap();
    println!("verdict: {verdict}");
    println!("  t      mass outside B(0, t)   differential margin");
    for ((t, v), m) in trace.t_grid.iter().zip(&trace.v_values).zip(&trace.differential_margin) {
        println!("  {t:<5.2}  {v:<22.6} {m:+.3e}");
    }
}
