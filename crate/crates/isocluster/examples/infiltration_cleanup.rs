//! Remove foreign material near a two-chamber interface: search the
//! density-zero radius, then absorb everything else inside the ball into
//! whichever chamber decreases the perimeter.

use isocluster::density::DensityField;
use isocluster::fixtures;
use isocluster::infiltration::{density_zero_radius, infiltrate};
use isocluster::measures::cluster_perimeter;

fn main() {
    let field = DensityField::uniform();
    let (cluster, x) = fixtures::foreign_inclusion(5);
    let h_const = 10.0;

    let r = density_zero_radius(&cluster, &x, 1, 2, h_const).unwrap();
    println!("density-zero radius at {x:?}: {r:.2}");

    let before = cluster_perimeter(&cluster, &field).unwrap().perimeter;
    let (clean, report) = infiltrate(&cluster, &field, &x, 1, 2, r).unwrap();
    let after = cluster_perimeter(&clean, &field).unwrap().perimeter;

    println!("infiltration volume {:.2}", report.infiltration_volume);
    println!("absorbed into chamber {}", report.case_taken);
    println!("perimeter {before:.4} -> {after:.4} (drop {:.4})", before - after);
}
