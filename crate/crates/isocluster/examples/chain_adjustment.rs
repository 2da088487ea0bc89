//! Change one chamber's volume through a chain of transfers toward the
//! exterior, with every step confined to a ball around its anchor.

use isocluster::density::DensityField;
use isocluster::fixtures;
use isocluster::measures::weighted_volume;
use isocluster::surgery::{adjust_single_chamber, PlanOptions};

fn main() {
    let field = DensityField::uniform();
    let rings = fixtures::nested_rings();
    let eps = 1e-6;

    let (out, report) =
        adjust_single_chamber(&rings, &field, 3, eps, None, &PlanOptions::default()).unwrap();

    println!("chain to the exterior: {:?}", report.chain);
    for (k, (center, radius)) in report.balls.iter().enumerate() {
        println!("  ball {k}: center {center:?} radius {radius:.4}");
    }
    println!("volumes before {:?}", report.volumes_before);
    println!("volumes after  {:?}", weighted_volume(&out, &field).unwrap());
    println!(
        "perimeter increment {:.3e} <= bound {:.3e}: {}",
        report.perimeter_delta_exact, report.bound, report.bound_ok
    );
}
