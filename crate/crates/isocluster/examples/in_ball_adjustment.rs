//! Two-phase adjustment inside a prescribed ball: the increment of the
//! relative perimeter obeys the eps-to-the-beta power law.

use isocluster::density::DensityField;
use isocluster::fixtures;
use isocluster::surgery::{adjust_in_ball, PlanOptions};

fn main() {
    let field = DensityField::uniform();
    let (cluster, (center, radius)) = fixtures::vertical_interface_ball(128);

    for eps in [1e-6, -1e-6, 1e-8] {
        let (_, report) = adjust_in_ball(
            &cluster,
            &field,
            1,
            2,
            (&center, radius),
            eps,
            &PlanOptions::default(),
        )
        .unwrap();
        println!(
            "eps {eps:+.1e}: increment {:+.3e}, bound {:.3e} (beta = {:.3})",
            report.perimeter_increment, report.bound, report.beta
        );
    }
}
