//! Acceptance gate: ten end-to-end criteria with stated tolerances.
//! Each test prints exactly one PASS/FAIL line for its criterion.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use isocluster::analysis::{boundedness_check, cper_sweep};
use isocluster::density::{beta_exponent, DensityField, DirectionField, ScalarField};
use isocluster::fixtures;
use isocluster::grid::GridCluster;
use isocluster::infiltration::{density_zero_radius, infiltrate};
use isocluster::measures::{cluster_perimeter, weighted_volume};
use isocluster::surgery::{
    adjust_in_ball, adjust_single_chamber, transfer, transfer_limit, verify_transfer_bound,
    PlanOptions, TransferResult,
};
use isocluster::Error;

fn verdict(criterion: usize, name: &str, ok: bool) {
    println!(
        "[acceptance] criterion {criterion:2} ({name}): {}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {criterion} ({name}) failed");
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn changed_cells_within(before: &GridCluster, after: &GridCluster, center: &[f64], r: f64) -> bool {
    before.cells().all(|cell| {
        before.label(&cell) == after.label(&cell)
            || dist(&before.cell_center(&cell), center) <= r
    })
}

#[test]
fn criterion_01_exponent_table() {
    let start = Instant::now();
    let mut ok = true;
    for n in 2..=4u32 {
        ok &= beta_exponent(0.0, n).unwrap() == (n as f64 - 1.0) / n as f64;
        ok &= beta_exponent(1.0, n).unwrap() == 1.0;
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=100 {
            let b = beta_exponent(k as f64 / 100.0, n).unwrap();
            ok &= b > prev;
            prev = b;
        }
    }
    ok &= start.elapsed().as_secs_f64() < 1.0;
    verdict(1, "volume-fixing exponent", ok);
}

#[test]
fn criterion_02_perimeter_routes() {
    let start = Instant::now();
    let field = DensityField::uniform();
    let two = cluster_perimeter(&fixtures::two_squares(), &field).unwrap();
    let mut ok = (two.perimeter - 7.0).abs() < 1e-12;
    for seed in 0..20 {
        let c = fixtures::two_chamber_random(64, seed);
        let r = cluster_perimeter(&c, &field).unwrap();
        let alt = r.perimeter_from_chambers();
        ok &= (r.perimeter - alt).abs() <= 1e-12 * r.perimeter.max(1.0);
    }
    ok &= start.elapsed().as_secs_f64() < 5.0;
    verdict(2, "perimeter route agreement", ok);
}

#[test]
fn criterion_03_localized_transfer() {
    let start = Instant::now();
    let field = DensityField::uniform();
    let cases: [(GridCluster, u8, u8); 2] = [
        (fixtures::stacked_halves(256, 1.0 / 256.0), 1, 2),
        (fixtures::sine_interface(256, 1.0 / 256.0), 2, 1),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ok = true;
    for (c, i, j) in &cases {
        let (_, eps_max, _) =
            transfer_limit(c, &field, *i, *j, &PlanOptions::default()).unwrap();
        for _ in 0..25 {
            let draw: f64 = rng.gen_range(-1.0..=1.0);
            let eps = if draw.abs() < 1e-6 { eps_max * 1e-6 } else { eps_max * draw };
            let out = match transfer(c, &field, *i, *j, eps, &PlanOptions::default()).unwrap()
            {
                TransferResult::Transferred(o) => o,
                TransferResult::PerimeterDecreased { .. } => {
                    ok = false;
                    continue;
                }
            };
            // Differential volume oracle: sum the density over exactly the
            // cells whose membership changed, plus the sub-cell ledger. A
            // naive full-grid difference would drown tiny increments in
            // summation round-off.
            let cell_vol = c.spacing * c.spacing;
            let mut dv = vec![0.0f64; c.m as usize];
            for cell in c.cells() {
                let a = c.label(&cell);
                let b = out.cluster.label(&cell);
                if a != b {
                    let fv = field.f_eval(&c.cell_center(&cell)).unwrap() * cell_vol;
                    if a > 0 {
                        dv[a as usize - 1] -= fv;
                    }
                    if b > 0 {
                        dv[b as usize - 1] += fv;
                    }
                }
            }
            for e in &out.cluster.ledger {
                if e.label > 0 {
                    dv[e.label as usize - 1] +=
                        field.f_eval(&c.cell_center(&e.cell)).unwrap() * e.delta;
                }
            }
            ok &= (dv[*i as usize - 1] - eps).abs() <= 1e-10 * eps.abs();
            ok &= (dv[*j as usize - 1] + eps).abs() <= 1e-10 * eps.abs();
            let r = out.plan.a * (c.dims() as f64).sqrt() / 2.0;
            ok &= changed_cells_within(c, &out.cluster, &out.plan.x_bar, r);
            // Chambers outside the working pair keep their cells bit for bit.
            for l in 1..=c.m {
                if l != out.plan.i && l != out.plan.j {
                    ok &= c
                        .cells()
                        .all(|cell| (c.label(&cell) == l) == (out.cluster.label(&cell) == l));
                }
            }
        }
    }
    ok &= start.elapsed().as_secs_f64() < 30.0;
    verdict(3, "localized volume transfer", ok);
}

#[test]
fn criterion_04_increment_bound_sweeps() {
    let c = fixtures::stacked_halves(256, 1.0 / 256.0);
    let uniform = DensityField::uniform();
    let lipschitz = DensityField {
        f: ScalarField::Constant(1.0),
        g: DirectionField::Isotropic(ScalarField::RadialHolder {
            center: vec![0.5, 0.5],
            alpha: 1.0,
            scale: 0.5,
            offset: 1.0,
        }),
        alpha: 0.0,
        family_tag: "radial-holder".into(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut violations = 0usize;
    let mut ok = true;
    for field in [&uniform, &lipschitz] {
        let (_, eps_max, _) =
            transfer_limit(&c, field, 1, 2, &PlanOptions::default()).unwrap();
        for _ in 0..100 {
            let mag = eps_max * 10f64.powf(rng.gen_range(-2.0..=0.0));
            let eps = if rng.gen::<bool>() { mag } else { -mag };
            match transfer(&c, field, 1, 2, eps, &PlanOptions::default()).unwrap() {
                TransferResult::Transferred(o) => {
                    if !verify_transfer_bound(&o).ok {
                        violations += 1;
                    }
                }
                TransferResult::PerimeterDecreased { .. } => {}
            }
        }
    }
    ok &= violations == 0;
    // Log-log slope of the measured increment over two decades.
    let (_, eps_max, _) =
        transfer_limit(&c, &uniform, 1, 2, &PlanOptions::default()).unwrap();
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for k in 0..=8 {
        let eps = eps_max * 10f64.powf(-2.0 + 2.0 * k as f64 / 8.0);
        if let TransferResult::Transferred(o) =
            transfer(&c, &uniform, 1, 2, eps, &PlanOptions::default()).unwrap()
        {
            if o.perimeter_delta_exact > 0.0 {
                pts.push((eps.ln(), o.perimeter_delta_exact.ln()));
            }
        }
    }
    let n = pts.len() as f64;
    let (sx, sy): (f64, f64) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mx, my) = (sx / n, sy / n);
    let slope: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum::<f64>();
    ok &= pts.len() >= 7 && (0.4..=0.6).contains(&slope);
    verdict(4, "perimeter increment bound and rate", ok);
}

#[test]
fn criterion_05_cost_curve_decay() {
    let start = Instant::now();
    let c = fixtures::band(512, 1.0 / 512.0);
    // Lipschitz perimeter weight, unit slope at the lower interface.
    let field = DensityField {
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
    let curve = cper_sweep(&c, &field, 1, &[1e-2, 1e-6], 3, 5).unwrap();
    let mut ok = curve.c_values[0] > 0.0;
    ok &= curve.c_values[1] < 0.5 * curve.c_values[0];
    ok &= matches!(curve.fit_ratio, Some(r) if r.is_finite());
    ok &= start.elapsed().as_secs_f64() < 120.0;
    verdict(5, "cost constant decays with scale", ok);
}

#[test]
fn criterion_06_chained_adjustment() {
    let c = fixtures::nested_rings();
    let field = DensityField::uniform();
    let before = weighted_volume(&c, &field).unwrap();
    let mut ok = true;
    for eps in [1e-6, -1e-6] {
        let (out, report) =
            adjust_single_chamber(&c, &field, 3, eps, None, &PlanOptions::default()).unwrap();
        let after = weighted_volume(&out, &field).unwrap();
        ok &= (after[2] - before[2] - eps).abs() <= 1e-9 * eps.abs();
        ok &= (after[0] - before[0]).abs() <= 1e-9 * eps.abs();
        ok &= (after[1] - before[1]).abs() <= 1e-9 * eps.abs();
        let m = c.m as usize;
        ok &= report.balls.len() <= m * (m + 1) / 2;
        ok &= report.bound_ok;
    }
    verdict(6, "chained single-chamber adjustment", ok);
}

#[test]
fn criterion_07_infiltration() {
    let start = Instant::now();
    let field = DensityField::uniform();
    let mut ok = true;
    for v in 0..10 {
        let (c, x) = fixtures::foreign_inclusion(v);
        let r = density_zero_radius(&c, &x, 1, 2, 10.0).unwrap();
        let (out, report) = infiltrate(&c, &field, &x, 1, 2, r).unwrap();
        ok &= !report.no_infiltration;
        ok &= report.case_taken == 1 || report.case_taken == 2;
        for cell in out.cells() {
            let inside = dist(&out.cell_center(&cell), &x) <= r;
            let l = out.label(&cell);
            if inside {
                ok &= l == 1 || l == 2;
            } else {
                ok &= l == c.label(&cell);
            }
        }
        ok &= report.drop_ok;
        ok &= report.perimeter_drop >= report.required_drop - 1e-12;
    }
    ok &= start.elapsed().as_secs_f64() < 30.0;
    verdict(7, "infiltration absorption", ok);
}

#[test]
fn criterion_08_radius_search() {
    let mut ok = density_zero_radius(&fixtures::stacked_halves(64, 1.0), &[32.0, 32.5], 1, 2, 10.0)
        .is_ok();
    let (inc, x) = fixtures::foreign_inclusion(0);
    ok &= density_zero_radius(&inc, &x, 1, 2, 10.0).is_ok();
    let (q, xq) = fixtures::quadrant(64);
    ok &= matches!(
        density_zero_radius(&q, &xq, 1, 2, 10.0),
        Err(Error::NoValidRadius)
    );
    verdict(8, "density-zero radius search", ok);
}

#[test]
fn criterion_09_boundedness_trace() {
    let c = fixtures::disk(512);
    let field = DensityField::uniform();
    let h = c.spacing;
    let grid = vec![0.25, 0.5, 0.75, 1.0 - 2.0 * h, 1.0 + 2.0 * h, 1.2];
    let (v, trace) = boundedness_check(&c, &field, 1.0, &grid).unwrap();
    let mut ok = v == "BOUNDED";
    ok &= trace.v_values.windows(2).all(|w| w[1] <= w[0] + 1e-15);
    ok &= trace.v_values[3] > 0.0;
    ok &= trace.v_values[4] <= 1e-12;
    let oracle = 0.75 * std::f64::consts::PI;
    ok &= (trace.v_values[1] - oracle).abs() <= 0.01 * oracle;
    verdict(9, "truncation boundedness", ok);
}

#[test]
fn criterion_10_anisotropy_invariance() {
    let (c, (center, radius)) = fixtures::vertical_interface_ball(64);
    let uniform = DensityField::uniform();
    let aniso = DensityField {
        f: ScalarField::Constant(1.0),
        g: DirectionField::DirectionWeighted {
            h: ScalarField::Constant(1.0),
            c: 0.5,
            u: vec![1.0, 0.0],
        },
        alpha: 0.0,
        family_tag: "direction-weighted".into(),
    };
    let eps = 1e-7;
    let ball = (center.as_slice(), radius);
    let (_, ra) =
        adjust_in_ball(&c, &uniform, 1, 2, ball, eps, &PlanOptions::default()).unwrap();
    let (_, rb) =
        adjust_in_ball(&c, &aniso, 1, 2, ball, eps, &PlanOptions::default()).unwrap();
    let mut ok = (ra.perimeter_increment - rb.perimeter_increment).abs() <= 1e-12;
    ok &= ra.bound_ok && rb.bound_ok;
    ok &= rb.symmetrized;
    verdict(10, "odd anisotropy invariance", ok);
}
