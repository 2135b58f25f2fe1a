//! Acceptance suite: every numbered criterion runs at its stated tolerance
//! and prints one PASS/FAIL line. Run with
//! `cargo test --test acceptance -- --nocapture` to see the tableau.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cocyclelab::cocycle::{
    matrix_to_rows, product_of_maps, two_block_matrix, Functional, GeneratorConfig,
};
use cocyclelab::dynamics::{build_castle, frac, BaseSystem, Point};
use cocyclelab::linalg::{
    self, dimension_constants, exterior_power, max_half_gap, sorted_svd, SingularData,
};
use cocyclelab::patch::{self, IterateConfig};
use cocyclelab::perturb::{
    self, bv_bound_check, bv_subspaces, exterior_corner, merge_window_maps,
    weight_identity_residual, CORNER_TOL,
};
use cocyclelab::{Cocycle, Matrix, Vector};

const GOLDEN: f64 = 0.618_033_988_749_894_9;

fn golden_base() -> BaseSystem {
    BaseSystem::circle(GOLDEN).unwrap()
}

fn cocycle(cfg: GeneratorConfig, grid: usize) -> Cocycle {
    Cocycle::from_config(golden_base(), cfg, grid).unwrap()
}

fn report(criterion: usize, pass: bool, elapsed: Duration, detail: &str) {
    println!(
        "ACCEPTANCE {criterion:02}: {} [{elapsed:.2?}] {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion} failed: {detail}");
}

fn within(elapsed: Duration, secs: u64) -> bool {
    elapsed <= Duration::from_secs(secs)
}

#[test]
fn criterion_01_zeta_gamma_identity() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for d in 2..=6 {
        for _ in 0..1000 {
            let m = cocyclelab::sampling::invertible(&mut rng, d, 2.5);
            let sd = SingularData::from_matrix(&m).unwrap();
            let weighted: f64 = (1..d).map(|i| (i * (d - i)) as f64 * sd.gamma(i)).sum();
            worst = worst.max((sd.zeta - weighted).abs());
        }
    }
    let elapsed = t0.elapsed();
    report(
        1,
        worst <= 1e-10 && within(elapsed, 10),
        elapsed,
        &format!("max residual {worst:.3e} over 5000 samples (d = 2..6)"),
    );
}

#[test]
fn criterion_02_max_gap_bound() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut violations = 0usize;
    for d in 2..=6 {
        let b = dimension_constants(d).unwrap().b;
        for _ in 0..1000 {
            let m = cocyclelab::sampling::invertible(&mut rng, d, 2.5);
            let sd = SingularData::from_matrix(&m).unwrap();
            let (_, g) = max_half_gap(&sd).unwrap();
            // ζ through its γ-identity form: for d = 2 the bound is an exact
            // equality, where the σ-computed ζ differs by one ulp
            let zeta: f64 = (1..d).map(|i| (i * (d - i)) as f64 * sd.gamma(i)).sum();
            if g < b * zeta {
                violations += 1;
            }
        }
    }
    let elapsed = t0.elapsed();
    report(
        2,
        violations == 0,
        elapsed,
        &format!("{violations} violations of max γ >= b_d·ζ on 5000 samples"),
    );
}

#[test]
fn criterion_03_exterior_power_norm() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut worst = 0.0f64;
    for d in 2..=6 {
        for _ in 0..60 {
            let m = cocyclelab::sampling::invertible(&mut rng, d, 1.5);
            let sd = SingularData::from_matrix(&m).unwrap();
            for i in 1..=d {
                let w = exterior_power(&m, i).unwrap();
                let expect = sd.sigma(i).exp();
                worst = worst.max((linalg::operator_norm(&w) - expect).abs() / expect);
            }
        }
    }
    let elapsed = t0.elapsed();
    report(
        3,
        worst <= 1e-8,
        elapsed,
        &format!("max relative error of ‖∧^i L‖ vs exp σ_i: {worst:.3e}"),
    );
}

#[test]
fn criterion_04_subadditivity() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut worst_sub = f64::NEG_INFINITY;
    let mut worst_det = 0.0f64;
    for d in 2..=6 {
        for _ in 0..1000 {
            let a = cocyclelab::sampling::invertible(&mut rng, d, 1.5);
            let b = cocyclelab::sampling::invertible(&mut rng, d, 1.5);
            let sa = SingularData::from_matrix(&a).unwrap();
            let sb = SingularData::from_matrix(&b).unwrap();
            let sab = SingularData::from_matrix(&(&a * &b)).unwrap();
            for i in 1..d {
                worst_sub = worst_sub.max(sab.sigma(i) - sa.sigma(i) - sb.sigma(i));
            }
            worst_sub = worst_sub.max(sab.zeta - sa.zeta - sb.zeta);
            worst_det = worst_det.max((sab.sigma(d) - sa.sigma(d) - sb.sigma(d)).abs());
        }
    }
    let elapsed = t0.elapsed();
    report(
        4,
        worst_sub <= 1e-9 && worst_det <= 1e-9,
        elapsed,
        &format!("max subadditivity excess {worst_sub:.3e}, max σ_d additivity defect {worst_det:.3e}"),
    );
}

#[test]
fn criterion_05_constant_cocycle_closed_forms() {
    let t0 = Instant::now();
    let a = cocycle(
        GeneratorConfig::Constant {
            matrix: vec![vec![2.0, 0.0], vec![0.0, 0.5]],
        },
        64,
    );
    let (z, k) = a.estimate_zk(1000, 16).unwrap();
    let ez = (z.value - 2.0_f64.ln()).abs();
    let ek = (k.value - 2.0 * 2.0_f64.ln()).abs();
    let elapsed = t0.elapsed();
    report(
        5,
        ez <= 1e-3 && ek <= 1e-3 && within(elapsed, 5),
        elapsed,
        &format!("|Z − ln 2| = {ez:.2e}, |K − 2 ln 2| = {ek:.2e} at n = 1000"),
    );
}

#[test]
fn criterion_06_domination_detection() {
    let t0 = Instant::now();
    let diag = cocycle(
        GeneratorConfig::Constant {
            matrix: vec![vec![2.0, 0.0], vec![0.0, 1.0]],
        },
        64,
    );
    let r_diag = diag.detect_domination(500, 64).unwrap();
    let tau_diag = r_diag.fits[0].tau_estimate;
    let ok_diag = r_diag.indices == vec![1] && (1.9..=2.1).contains(&tau_diag);

    let rot = cocycle(GeneratorConfig::RotationScale { lambda: 1.0 }, 256);
    let r_rot = rot.detect_domination(500, 256).unwrap();
    let ok_rot = r_rot.indices.is_empty();

    let blocks = cocycle(
        GeneratorConfig::Constant {
            matrix: matrix_to_rows(&two_block_matrix(0.3, 0.7, 4.0, 1.0)),
        },
        64,
    );
    let r_blocks = blocks.detect_domination(500, 64).unwrap();
    let tau_blocks = r_blocks.fits[1].tau_estimate;
    let ok_blocks = r_blocks.indices == vec![2] && (3.8..=4.2).contains(&tau_blocks);

    let elapsed = t0.elapsed();
    report(
        6,
        ok_diag && ok_rot && ok_blocks && within(elapsed, 30),
        elapsed,
        &format!(
            "diag(2,1): {:?} τ = {tau_diag:.3}; rotation: {:?}; two-block: {:?} τ = {tau_blocks:.3}",
            r_diag.indices, r_rot.indices, r_blocks.indices
        ),
    );
}

#[test]
fn criterion_07_fine_ordering() {
    let t0 = Instant::now();
    let mut pass = true;
    let mut detail = String::new();
    for (name, cfg) in cocyclelab::verify::shipped_families() {
        let a = cocycle(cfg, 512);
        let r = a.detect_domination(200, 256).unwrap();
        let frame = a.finest_splitting(&r, 150, 300).unwrap();
        let fine = a.estimate_fine(&frame, 128).unwrap();
        let (z, k) = a.estimate_zk(128, 300).unwrap();
        pass &= fine.z_fine <= z.value + 1e-6 && fine.k_fine <= k.value + 1e-6;
        detail.push_str(&format!("{name}: Zf {:.4} ≤ Z {:.4}; ", fine.z_fine, z.value));
    }
    let elapsed = t0.elapsed();
    report(7, pass, elapsed, &detail);
}

#[test]
fn criterion_08_corner_witness() {
    let t0 = Instant::now();
    let a = cocycle(GeneratorConfig::RotationScale { lambda: 1.2 }, 4096);
    let w = perturb::find_window(&a, 1, 0.375, 300, 4096).unwrap();
    let grid = a.base().sample_grid(4096);
    let mut merges = 0usize;
    let mut worst = 0.0f64;
    for &g in &w.grid_points {
        if merges >= 50 {
            break;
        }
        let maps = a.orbit_matrices(&grid[g], w.m);
        let prod = product_of_maps(2, &maps).unwrap();
        let (u, _, vt) = sorted_svd(&prod.matrix).unwrap();
        let e = u.columns(0, 1).into_owned();
        let f = vt.rows(0, 1).transpose();
        if let Ok(merged) = merge_window_maps(&maps, &e, &f, 0.375, a.norm_bound()) {
            let new_prod = product_of_maps(2, &merged).unwrap();
            worst = worst.max(exterior_corner(&new_prod.matrix, 1, &e, &f).unwrap());
            merges += 1;
        }
    }
    let elapsed = t0.elapsed();
    report(
        8,
        merges >= 50 && worst <= CORNER_TOL,
        elapsed,
        &format!("{merges} successful merges, worst corner {worst:.3e}"),
    );
}

fn householder_mapping(e: &Vector, f: &Vector) -> Matrix {
    let d = e.len();
    let diff = e - f;
    let n = diff.norm();
    if n < 1e-12 {
        return Matrix::identity(d, d);
    }
    let u = diff / n;
    Matrix::identity(d, d) - &u * u.transpose() * 2.0
}

#[test]
fn criterion_09_bv_inequality() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    let mut pass = true;
    let mut checked = 0usize;
    for d in [2usize, 3] {
        for _ in 0..100 {
            let p = cocyclelab::sampling::invertible(&mut rng, d, 1.5);
            let q = cocyclelab::sampling::invertible(&mut rng, d, 1.5);
            for i in 1..d {
                let frames = bv_subspaces(&p, &q, i).unwrap();
                let e = frames.e.column(0).into_owned();
                let f = frames.f.column(0).into_owned();
                let r = householder_mapping(&e, &f);
                let check = bv_bound_check(&p, &r, &q, i).unwrap();
                pass &= check.holds;
                checked += 1;
            }
        }
    }
    // closed-form d = 2 case: σ_1(QRP) = |a − b| exactly
    let (aa, bb) = (2.0f64, 1.0f64);
    let p = Matrix::from_diagonal(&Vector::from_row_slice(&[aa.exp(), (-aa).exp()]));
    let q = Matrix::from_diagonal(&Vector::from_row_slice(&[bb.exp(), (-bb).exp()]));
    let swap = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
    let check = bv_bound_check(&p, &swap, &q, 1).unwrap();
    let closed_form = (check.lhs - (aa - bb).abs()).abs() <= 1e-10 && check.holds;
    let elapsed = t0.elapsed();
    report(
        9,
        pass && closed_form,
        elapsed,
        &format!("{checked} random triples hold; closed form σ_1 = |a−b| verified"),
    );
}

#[test]
fn criterion_10_main_lemma_drop() {
    let t0 = Instant::now();
    let a = cocycle(GeneratorConfig::RotationScale { lambda: 1.2 }, 4096);
    let n = 2000;
    let eps = 0.5;
    let ctx = perturb::segment_context(&a, eps, n, 4096).unwrap();
    let a2 = dimension_constants(2).unwrap().a;
    let target = a2 * ctx.z_est + eps;
    let mut rng = ChaCha8Rng::seed_from_u64(110);
    let mut successes = 0usize;
    let mut worst_rate = f64::NEG_INFINITY;
    let mut worst_dev = 0.0f64;
    for _ in 0..20 {
        let x = Point::circle(rng.gen::<f64>());
        match perturb::perturb_segment_with_context(&a, &ctx, &x, n) {
            Ok(plan) => {
                let rate = plan.zeta_after_rate();
                worst_rate = worst_rate.max(rate);
                let originals = a.orbit_matrices(&x, n);
                for (l, o) in plan.maps.iter().zip(&originals) {
                    worst_dev = worst_dev.max(linalg::operator_norm(&(l - o)));
                }
                if rate < target && worst_dev < eps {
                    successes += 1;
                }
            }
            Err(_) => {}
        }
    }
    let elapsed = t0.elapsed();
    report(
        10,
        successes >= 18 && within(elapsed, 120),
        elapsed,
        &format!(
            "{successes}/20 anchors; worst rate {worst_rate:.4} < target {target:.4}; worst deviation {worst_dev:.4}"
        ),
    );
}

#[test]
fn criterion_11_global_drop() {
    let t0 = Instant::now();
    let a = cocycle(GeneratorConfig::RotationScale { lambda: 1.2 }, 2048);
    let (_, report_c) = patch::conformalize(&a, 0.5, 16, 2048).unwrap();
    let a2 = dimension_constants(2).unwrap().a;
    let bound = a2 * report_c.z_before + 0.5;
    let elapsed = t0.elapsed();
    report(
        11,
        report_c.z_after < bound && report_c.max_deviation < 0.5 && within(elapsed, 300),
        elapsed,
        &format!(
            "Z {:.5} -> {:.5} (bound {bound:.5}); max deviation {:.4} < 0.5; heights {:?}",
            report_c.z_before, report_c.z_after, report_c.max_deviation, report_c.castle_heights
        ),
    );
}

#[test]
fn criterion_12_iterated_decay() {
    let t0 = Instant::now();
    let a = cocycle(GeneratorConfig::RotationScale { lambda: 1.2 }, 2048);
    let schedule: Vec<f64> = (1..=5).map(|r| 0.3 * (2.0f64 / 3.0).powi(r)).collect();
    let cfg = IterateConfig {
        detection_horizon: 200,
        measure_horizon: 4096,
        grid_size: 2048,
        castle_n_min: 16,
    };
    let out = patch::iterate_conformalize(&a, &schedule, &cfg).unwrap();
    let a2 = dimension_constants(2).unwrap().a;
    println!("  criterion 12 decay tableau (matched horizon {}):", cfg.measure_horizon);
    println!("    round 0: Z_fine = {:.5}", out.z_fine_start);
    let mut envelope_ok = true;
    let mut prev = out.z_fine_start;
    for r in &out.rounds {
        let envelope = a2 * prev + r.epsilon + 0.02;
        envelope_ok &= r.z_fine < envelope;
        println!(
            "    round {}: eps = {:.4}, Z_fine = {:.5} (envelope {envelope:.5})",
            r.round, r.epsilon, r.z_fine
        );
        prev = r.z_fine;
    }
    let final_z = out.rounds.last().unwrap().z_fine;
    let halted = out.halted.is_none();
    let final_ok = final_z < 0.15;
    let start_ok = out.z_fine_start >= 0.36;
    let elapsed = t0.elapsed();
    // The start clause cannot hold for the pinned family: ζ = κ/2 in d = 2,
    // so the ζ-rate of the λ = 1.2 family is ln 1.2 ≈ 0.182 (0.36 is its
    // κ-rate), and by subadditivity every matched-horizon estimate is below
    // that. See the decisions ledger for the full analysis; the remaining
    // clauses are asserted and hold.
    report(
        12,
        start_ok && final_ok && envelope_ok && halted,
        elapsed,
        &format!(
            "start {:.5} (required >= 0.36: {}), final {final_z:.5} < 0.15: {}, envelopes: {}, completed: {}",
            out.z_fine_start,
            if start_ok { "yes" } else { "NO (unattainable; ζ-rate of λ=1.2 is ln 1.2 ≈ 0.182)" },
            final_ok,
            envelope_ok,
            halted
        ),
    );
}

#[test]
fn criterion_13_semi_uniform_set() {
    let t0 = Instant::now();
    let a = cocycle(GeneratorConfig::Schrodinger { energy: 5.0 }, 512);
    let r = a.susaet_check(Functional::Kappa, 2000, 512).unwrap();
    let rel = (r.sup_side - r.avg_side).abs() / r.sup_side;
    let elapsed = t0.elapsed();
    report(
        13,
        rel <= 0.05,
        elapsed,
        &format!("sup {:.5}, avg {:.5}, relative gap {rel:.4}", r.sup_side, r.avg_side),
    );
}

#[test]
fn criterion_14_castle_return_times() {
    let t0 = Instant::now();
    let base = golden_base();
    let mut rng = ChaCha8Rng::seed_from_u64(114);
    let mut checked = 0usize;
    let mut pass = true;
    for n in [5usize, 13, 34] {
        let castle = build_castle(&base, n).unwrap();
        for cell in castle.cells.clone() {
            for _ in 0..100 {
                let x = frac(cell.start + rng.gen::<f64>() * cell.len);
                let rt = castle.brute_force_return_time(x, castle.max_height() + 2);
                pass &= rt == Some(cell.height);
                checked += 1;
            }
        }
    }
    let elapsed = t0.elapsed();
    report(
        14,
        pass && within(elapsed, 5),
        elapsed,
        &format!("{checked} brute-force first-return times matched the recorded heights"),
    );
}

#[test]
fn criterion_15_weight_identity() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(115);
    let mut worst = 0.0f64;
    for d in 3..=6 {
        for _ in 0..1000 {
            let lambdas = cocyclelab::sampling::unimodular_lambdas(&mut rng, d, 3.0);
            let sd = SingularData::from_lambdas(lambdas);
            for i0 in 1..d {
                worst = worst.max(weight_identity_residual(&sd, i0));
            }
        }
    }
    let elapsed = t0.elapsed();
    report(
        15,
        worst <= 1e-10,
        elapsed,
        &format!("max residual {worst:.3e} over 4000 unimodular samples, every i0"),
    );
}
