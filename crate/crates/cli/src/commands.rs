use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde_json::json;

use cocyclelab::cocycle::{Functional, ProductAccumulator};
use cocyclelab::dynamics::Point;
use cocyclelab::linalg::dimension_constants;
use cocyclelab::patch::{self, IterateConfig, RoundAction};
use cocyclelab::{perturb, verify, Cocycle};

use crate::config::RunConfig;

pub fn out_dir(config: Option<&RunConfig>, flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| config.and_then(|c| c.output.clone()))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> anyhow::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let mut file = fs::File::create(&path).with_context(|| format!("creating {name}"))?;
    serde_json::to_writer_pretty(&mut file, value)?;
    file.write_all(b"\n")?;
    Ok(path)
}

pub fn cmd_analyze(config: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let a = config.build_cocycle()?;
    let n = config.horizons.n;
    let grid = config.horizons.grid_size;
    let (z, k) = a.estimate_zk(n, grid)?;
    let lyapunov = a.lyapunov_spectrum(&a.base().origin(), n)?;
    let susaet_zeta = a.susaet_check(Functional::Zeta, n, grid)?;
    let susaet_kappa = a.susaet_check(Functional::Kappa, n, grid)?;
    let domination = a.detect_domination(config.horizons.detection_horizon, grid)?;

    let mut fine = None;
    let mut splitting = None;
    if !domination.indices.is_empty() {
        let fine_horizon = config.horizons.detection_horizon.min(grid / 2 - 1).max(16);
        let frame = a.finest_splitting(&domination, config.horizons.detection_horizon, grid)?;
        let est = a.estimate_fine(&frame, fine_horizon)?;
        splitting = Some(json!({
            "indices": frame.indices,
            "dims": frame.dims,
            "equivariance_defect": frame.equivariance_defect,
        }));
        fine = Some(est);
    }

    let analysis = json!({
        "config": config,
        "z_estimate": z,
        "k_estimate": k,
        "lyapunov_spectrum": lyapunov,
        "susaet": {"zeta": susaet_zeta, "kappa": susaet_kappa},
        "domination": domination,
        "splitting": splitting,
        "fine": fine,
    });
    let path = write_json(out, "analysis.json", &analysis)?;
    println!("wrote {}", path.display());

    write_sigma_graph(&a, n, grid, out)?;
    println!(
        "Z = {:.6}, K = {:.6}, chi = {:?}, dominated indices {:?}",
        z.value, k.value, lyapunov, analysis["domination"]["indices"]
    );
    Ok(())
}

fn write_sigma_graph(a: &Cocycle, n: usize, grid: usize, out: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(out)?;
    let path = out.join("sigma_graph.csv");
    let mut file = fs::File::create(&path)?;
    writeln!(file, "x_index,n,i,sigma_i")?;
    let sample_count = 8.min(grid);
    let stride = (grid / sample_count).max(1);
    let checkpoints: Vec<usize> = {
        let mut c = vec![n];
        let mut v = n;
        while v > 4 {
            v /= 2;
            c.push(v);
        }
        c.sort_unstable();
        c.dedup();
        c
    };
    let points = a.base().sample_grid(grid);
    for s in 0..sample_count {
        let g = s * stride;
        let mut acc = ProductAccumulator::new(a.dim());
        let mut p = points[g].clone();
        let mut next = 0;
        for _ in 0..n {
            acc.push(&a.generator_at(&p))?;
            a.base().advance(&mut p);
            if next < checkpoints.len() && acc.steps() == checkpoints[next] {
                let sigma = acc.sigma();
                for (i, v) in sigma.iter().enumerate().skip(1) {
                    writeln!(file, "{g},{},{i},{v}", checkpoints[next])?;
                }
                next += 1;
            }
        }
    }
    println!("wrote {}", path.display());
    Ok(())
}

pub fn cmd_perturb(
    config: &RunConfig,
    anchor: f64,
    n: Option<usize>,
    out: &Path,
) -> anyhow::Result<()> {
    config.require_perturbable()?;
    let a = config.build_cocycle()?;
    let n = n.unwrap_or(config.horizons.n);
    let ctx = perturb::segment_context(&a, config.epsilon, n, config.horizons.grid_size)?;
    let x = anchor_point(&a, anchor);
    let plan = perturb::perturb_segment_with_context(&a, &ctx, &x, n)?;
    let target = ctx.drop_target_rate();
    let verdict = if plan.zeta_after_rate() < target {
        "PASS"
    } else {
        "FAIL"
    };

    let path = write_json(out, "plan.json", &plan.to_json())?;
    println!("wrote {}", path.display());

    let consts = dimension_constants(a.dim())?;
    let summary = format!(
        "segment perturbation summary\n\
         anchor             = {anchor}\n\
         n                  = {n}\n\
         epsilon            = {}\n\
         window             = [{}, {})  (m0 = {}, early exit = {})\n\
         zeta before (rate) = {:.8}\n\
         zeta after  (rate) = {:.8}\n\
         Z estimate         = {:.8}\n\
         target a_d*Z + eps = {:.8}  (a_{} = {:.6})\n\
         reported minimum N = {}\n\
         verdict            = {verdict}\n",
        config.epsilon,
        plan.window_start,
        plan.window_start + plan.window_len,
        plan.window_len,
        plan.is_early_exit(),
        plan.zeta_before / n as f64,
        plan.zeta_after_rate(),
        ctx.z_est,
        target,
        a.dim(),
        consts.a,
        ctx.min_n,
    );
    fs::write(out.join("perturb_summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn anchor_point(a: &Cocycle, anchor: f64) -> Point {
    let mut coords = vec![0.0; a.base().space_dim()];
    coords[0] = anchor;
    Point::torus(&coords)
}

pub fn cmd_conformalize(config: &RunConfig, rounds: usize, out: &Path) -> anyhow::Result<()> {
    config.require_perturbable()?;
    if rounds == 0 {
        anyhow::bail!("rounds must be >= 1");
    }
    let a = config.build_cocycle()?;
    let schedule: Vec<f64> = (0..rounds)
        .map(|r| config.epsilon * (2.0f64 / 3.0).powi(r as i32))
        .collect();
    let cfg = IterateConfig {
        detection_horizon: config.horizons.detection_horizon,
        measure_horizon: config.horizons.n,
        grid_size: config.horizons.grid_size,
        castle_n_min: 16,
    };
    let outcome = patch::iterate_conformalize(&a, &schedule, &cfg)?;

    let consts = dimension_constants(a.dim())?;
    fs::create_dir_all(out)?;
    let decay_path = out.join("decay.csv");
    let mut decay = fs::File::create(&decay_path)?;
    writeln!(decay, "round,z_fine,envelope")?;
    writeln!(decay, "0,{},{}", outcome.z_fine_start, outcome.z_fine_start)?;
    let mut envelope = outcome.z_fine_start;
    for r in &outcome.rounds {
        envelope = consts.a * envelope + r.epsilon;
        writeln!(decay, "{},{},{}", r.round, r.z_fine, envelope)?;
        let blended_json = match (&r.action, &r.blended) {
            (RoundAction::Conformalized { .. }, Some(b)) => Some(b.to_json()),
            _ => None,
        };
        let round_json = json!({
            "round": r.round,
            "epsilon": r.epsilon,
            "z_fine": r.z_fine,
            "action": r.action,
            "blended": blended_json,
        });
        write_json(out, &format!("blended_{}.json", r.round), &round_json)?;
    }
    println!("wrote {}", decay_path.display());
    println!("start Z_fine = {:.6}", outcome.z_fine_start);
    for r in &outcome.rounds {
        let kind = match &r.action {
            RoundAction::Conformalized { .. } => "conformalized",
            RoundAction::PerBlock { .. } => "per-block",
            RoundAction::NoOp { .. } => "no-op",
        };
        println!(
            "round {}: eps = {:.5}, Z_fine = {:.6} [{kind}]",
            r.round, r.epsilon, r.z_fine
        );
    }
    if let Some(halt) = &outcome.halted {
        anyhow::bail!("iteration halted: {halt}");
    }
    Ok(())
}

pub fn cmd_verify(seed: u64, out: &Path) -> anyhow::Result<bool> {
    let report = verify::run_all(seed);
    for p in &report.properties {
        println!(
            "{} {} — {}",
            if p.pass { "PASS" } else { "FAIL" },
            p.name,
            p.detail
        );
    }
    let path = write_json(out, "verify.json", &serde_json::to_value(&report)?)?;
    println!("wrote {}", path.display());
    println!("suite: {}", if report.pass { "PASS" } else { "FAIL" });
    Ok(report.pass)
}
