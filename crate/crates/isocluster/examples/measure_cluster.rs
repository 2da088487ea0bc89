//! Measure a cluster: weighted volumes, the cluster perimeter by both
//! routes, and the pairwise interface breakdown.

use isocluster::density::DensityField;
use isocluster::fixtures;
use isocluster::measures::cluster_perimeter;

fn main() {
    let field = DensityField::uniform();

    for (name, cluster) in [
        ("two unit squares", fixtures::two_squares()),
        ("nested rings", fixtures::nested_rings()),
        ("disk of radius 1", fixtures::disk(256)),
    ] {
        let report = cluster_perimeter(&cluster, &field).unwrap();
        println!("{name}:");
        println!("  volumes            {:?}", report.volumes);
        println!("  perimeter (facets) {:.6}", report.perimeter);
        println!("  perimeter (route)  {:.6}", report.perimeter_from_chambers());
        for (pair, area) in &report.interface_breakdown {
            println!("  interface {pair}      {area:.6}");
        }
    }
}
