//! One localized volume transfer: find a flat interface point, compute
//! the feasibility limit, move some volume and verify the perimeter
//! increment against its bound.

use isocluster::density::DensityField;
use isocluster::fixtures;
use isocluster::surgery::{
    transfer, transfer_limit, verify_transfer_bound, PlanOptions, TransferResult,
};

fn main() {
    let field = DensityField::uniform();
    let cluster = fixtures::stacked_halves(256, 1.0 / 256.0);

    let (point, eps_max, _) =
        transfer_limit(&cluster, &field, 1, 2, &PlanOptions::default()).unwrap();
    println!("interface point {:?}", point.point);
    println!("largest feasible increment {eps_max:.3e}");

    let eps = 0.5 * eps_max;
    match transfer(&cluster, &field, 1, 2, eps, &PlanOptions::default()).unwrap() {
        TransferResult::Transferred(out) => {
            println!("moved {eps:.3e} into chamber 1");
            println!("  working cube side   {:.4}", out.plan.a);
            println!("  translation height  {:.3e}", out.delta);
            println!("  perimeter increment {:.3e}", out.perimeter_delta_exact);
            let check = verify_transfer_bound(&out);
            println!("  bound {:.3e} satisfied: {}", check.rhs, check.ok);
        }
        TransferResult::PerimeterDecreased { .. } => {
            println!("degenerate case: the transfer decreased the perimeter outright");
        }
    }
}
