//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Runs without the libtest harness so the lines always print.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use ndarray::{array, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tgcc::bench::metrics::{auc, auc_trapezoid};
use tgcc::bench::{coreset_random, eval_link_prediction, eval_node_classification, herding_select, kcenter_select};
use tgcc::causal::{covariance_offdiag_sq, hsic_linear, normalize_dims};
use tgcc::condenser::condensed_size;
use tgcc::contrast::{build_negative, kept_index_start};
use tgcc::dataio::{import_planetoid, DEFAULT_SPLIT_SEED};
use tgcc::graph::{degree_marginals, gcn_normalize, normalized_laplacian, spectral_decompose};
use tgcc::intervention::{init_theta, intervene, perturbation_scale, plan, SinkhornSettings};
use tgcc::pipeline::{run_condense, EpochRecord, TgccConfig};
use tgcc::relay::init_model;
use tgcc::{linalg, Graph};

use common::{data_dir, er_adjacency, random_matrix, sbm, weighted_adjacency};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn hsic_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for k in 0..50 {
        let n = rng.random_range(10..=100);
        let h = rng.random_range(2..=16);
        let (zbar, _) = normalize_dims(random_matrix(n, h, 1000 + k).view()).map_err(|e| e.to_string())?;
        let mut lhs = 0.0;
        for i in 0..h {
            for j in 0..h {
                if i != j {
                    lhs += hsic_linear(zbar.column(i), zbar.column(j)).map_err(|e| e.to_string())?;
                }
            }
        }
        let rhs = covariance_offdiag_sq(zbar.view());
        worst = worst.max((lhs - rhs).abs() / rhs.abs().max(f64::MIN_POSITIVE));
    }
    check(worst <= 1e-8, format!("50 matrices, worst relative gap {worst:.2e}"))
}

fn gcn_gradients() -> Outcome {
    let mut worst = 0.0f64;
    let mut checked = 0;
    for seed in 0..20u64 {
        let n = 20;
        let prop = gcn_normalize(er_adjacency(n, 0.2, seed).view()).map_err(|e| e.to_string())?;
        let x = random_matrix(n, 6, seed + 50);
        let labels: Vec<usize> = (0..n).map(|i| (i + seed as usize) % 3).collect();
        let mask: Vec<usize> = (0..n).filter(|i| i % 3 != 0).collect();
        let model = init_model(6, 5, 3, seed).map_err(|e| e.to_string())?;
        let (_, g) = model.loss_and_grad(prop.view(), x.view(), &labels, &mask).map_err(|e| e.to_string())?;
        let h = 1e-5;
        for layer in 0..2 {
            let grad = if layer == 0 { &g.gw1 } else { &g.gw2 };
            for (idx, &analytic) in grad.indexed_iter() {
                let loss_at = |d: f64| {
                    let mut m = model.clone();
                    if layer == 0 {
                        m.w1[idx] += d;
                    } else {
                        m.w2[idx] += d;
                    }
                    m.loss_and_grad(prop.view(), x.view(), &labels, &mask).unwrap().0
                };
                let fd = (loss_at(h) - loss_at(-h)) / (2.0 * h);
                if analytic.abs() > 1e-6 {
                    worst = worst.max((fd - analytic).abs() / analytic.abs().max(fd.abs()));
                    checked += 1;
                }
            }
        }
    }
    check(worst <= 1e-4, format!("20 graphs, {checked} entries, worst relative error {worst:.2e}"))
}

fn sinkhorn_feasibility() -> Outcome {
    let settings = SinkhornSettings::default();
    if settings.iters > 500 {
        return Err(format!("iteration budget {} exceeds 500", settings.iters));
    }
    let mut worst = 0.0f64;
    let mut leaks = 0;
    for seed in 0..20u64 {
        let a = er_adjacency(30, 0.2, seed);
        let l = normalized_laplacian(a.view()).map_err(|e| e.to_string())?;
        let p = plan(a.view(), l.view(), init_theta(30, seed), settings).map_err(|e| e.to_string())?;
        let (ma, mb) = degree_marginals(a.view());
        let rows = p.delta_plus.sum_axis(Axis(1));
        let cols = p.delta_plus.sum_axis(Axis(0));
        for (x, y) in rows.iter().zip(&ma).chain(cols.iter().zip(&mb)) {
            worst = worst.max((x - y).abs());
        }
        leaks += p
            .delta_minus
            .iter()
            .zip(a.iter())
            .filter(|(&d, &w)| w == 0.0 && d != 0.0)
            .count();
    }
    check(
        worst <= 1e-4 && leaks == 0,
        format!("20 graphs, worst marginal error {worst:.2e}, off-support entries {leaks}"),
    )
}

fn spectral_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_full = 0.0f64;
    let mut worst_half = 0.0f64;
    for seed in 0..20u64 {
        let n = rng.random_range(5..=100);
        let v = weighted_adjacency(n, 0.15, seed);
        let l = normalized_laplacian(v.view()).map_err(|e| e.to_string())?;
        let full = build_negative(v.view(), 1.0, 5000).map_err(|e| e.to_string())?;
        worst_full = worst_full.max(linalg::relative_frobenius(full.laplacian_hat.view(), l.view()));

        let half = build_negative(v.view(), 0.0, 5000).map_err(|e| e.to_string())?;
        if half.kept_index_start != n / 2 || kept_index_start(n, 0.0) != n / 2 {
            return Err(format!("n={n}: kept start {} instead of {}", half.kept_index_start, n / 2));
        }
        let dec = spectral_decompose(l.view(), 5000).map_err(|e| e.to_string())?;
        let mut expected = Array2::<f64>::zeros((n, n));
        for i in n / 2..n {
            let u = dec.eigenvectors.column(i).to_owned().insert_axis(Axis(1));
            expected.scaled_add(dec.eigenvalues[i], &u.dot(&u.t()));
        }
        let gap = linalg::frobenius((&half.laplacian_hat - &expected).view());
        // Dropped eigenvectors are annihilated by the filtered Laplacian.
        let leak = (0..n / 2)
            .map(|i| linalg::frobenius(half.laplacian_hat.dot(&dec.eigenvectors.column(i)).insert_axis(Axis(1)).view()))
            .fold(0.0, f64::max);
        worst_half = worst_half.max(gap).max(leak);
    }
    check(
        worst_full <= 1e-6 && worst_half <= 1e-9,
        format!("20 graphs, kappa=1 relative error {worst_full:.2e}, kappa=0 upper-half deviation {worst_half:.2e}"),
    )
}

fn bookkeeping_gap(trace: &[EpochRecord], cfg: &TgccConfig) -> f64 {
    trace
        .iter()
        .map(|r| (r.total - (r.causal + cfg.delta * r.infonce + cfg.eta * r.cond)).abs())
        .fold(0.0, f64::max)
}

fn bookkeeping() -> Outcome {
    let g = sbm(&[20, 20, 20], 0.3, 0.03, 8, 3);
    let cfg = TgccConfig {
        ratio: 0.1,
        horizon: 10,
        relay_inits: 3,
        hidden: 16,
        ..TgccConfig::default()
    };
    let art = run_condense(&g, &cfg).map_err(|e| e.to_string())?;
    let gap = bookkeeping_gap(&art.trace, &cfg);
    check(
        art.trace.len() == cfg.epochs() && gap <= 1e-9,
        format!("{} epochs, worst gap {gap:.2e}", art.trace.len()),
    )
}

fn cora() -> Result<Graph, String> {
    import_planetoid(&data_dir().join("cora"), DEFAULT_SPLIT_SEED)
        .map(|b| b.graph)
        .map_err(|e| e.to_string())
}

/// Cora run settings: two relay blocks of 50 outer steps, intervention
/// refreshed every 25 epochs.
fn cora_config(ratio: f64, seed: u64) -> TgccConfig {
    TgccConfig {
        ratio,
        horizon: 50,
        relay_inits: 2,
        refresh_every: 25,
        seed,
        ..TgccConfig::default()
    }
}

fn cora_quality(g: &Graph) -> Outcome {
    let m = condensed_size(g.num_nodes(), g.num_classes(), 0.026);
    let mut wins = 0;
    let mut rows = Vec::new();
    let mut worst_gap = 0.0f64;
    for seed in 0..5u64 {
        let cfg = cora_config(0.026, seed);
        let art = run_condense(g, &cfg).map_err(|e| e.to_string())?;
        worst_gap = worst_gap.max(bookkeeping_gap(&art.trace, &cfg));
        let ours = eval_node_classification(&art.synthetic, g, &cfg.eval).map_err(|e| e.to_string())?;
        let base = coreset_random(g, m, seed).map_err(|e| e.to_string())?;
        let random = eval_node_classification(&base, g, &cfg.eval).map_err(|e| e.to_string())?;
        if ours.mean >= random.mean {
            wins += 1;
        }
        rows.push(format!("{:.3}/{:.3}", ours.mean, random.mean));
        eprintln!("  cora seed {seed}: condensed {:.4}, random coreset {:.4}", ours.mean, random.mean);
    }
    if worst_gap > 1e-9 {
        return Err(format!("bookkeeping gap {worst_gap:.2e} on a Cora run"));
    }
    check(wins >= 4, format!("m={m}, {wins}/5 seeds at or above random (condensed/random: {})", rows.join(", ")))
}

fn cora_link(g: &Graph) -> Outcome {
    let cfg = cora_config(0.013, 0);
    let art = run_condense(g, &cfg).map_err(|e| e.to_string())?;
    let reports = eval_link_prediction(&art.synthetic, g, &cfg.eval).map_err(|e| e.to_string())?;
    let acc = reports.iter().find(|r| r.metric == "accuracy").ok_or("no accuracy row")?;
    let others: Vec<String> = reports.iter().map(|r| format!("{} {:.3}", r.metric, r.mean)).collect();
    check(
        acc.mean >= 0.59,
        format!("m={}, {} (threshold accuracy 0.590)", art.synthetic.num_nodes(), others.join(", ")),
    )
}

fn high_frequency() -> Outcome {
    let n = 30;
    let q = n / 4;
    let mut wins = 0;
    for seed in 0..20u64 {
        let a = er_adjacency(n, 0.2, seed);
        let l = normalized_laplacian(a.view()).map_err(|e| e.to_string())?;
        let p = plan(a.view(), l.view(), init_theta(n, seed + 100), SinkhornSettings::default()).map_err(|e| e.to_string())?;
        let v = intervene(a.view(), &p, perturbation_scale(a.view(), 0.1)).map_err(|e| e.to_string())?;
        let (e0, _) = linalg::symmetric_eigen(l.view()).map_err(|e| e.to_string())?;
        let lv = normalized_laplacian(v.view()).map_err(|e| e.to_string())?;
        let (e1, _) = linalg::symmetric_eigen(lv.view()).map_err(|e| e.to_string())?;
        let shift = |r: std::ops::Range<usize>| r.map(|i| (e0[i] - e1[i]).abs()).sum::<f64>() / q as f64;
        if shift(n - q..n) >= shift(0..q) {
            wins += 1;
        }
    }
    check(wins >= 15, format!("{wins}/20 graphs with top-quartile shift >= bottom-quartile shift"))
}

/// Greedy herding by direct enumeration of every candidate at each step.
fn herding_oracle(points: &Array2<f64>, k: usize) -> Vec<usize> {
    let target = points.mean_axis(Axis(0)).unwrap();
    let mut chosen: Vec<usize> = Vec::new();
    for _ in 0..k {
        let mut best = (f64::INFINITY, usize::MAX);
        for cand in 0..points.nrows() {
            if chosen.contains(&cand) {
                continue;
            }
            let mut sel = chosen.clone();
            sel.push(cand);
            let mean = points.select(Axis(0), &sel).mean_axis(Axis(0)).unwrap();
            let d: f64 = mean.iter().zip(target.iter()).map(|(a, b)| (a - b).powi(2)).sum();
            if d < best.0 {
                best = (d, cand);
            }
        }
        chosen.push(best.1);
    }
    chosen
}

fn baseline_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for trial in 0..30 {
        let n = rng.random_range(2..=12);
        let d = rng.random_range(1..=3);
        let pts = Array2::from_shape_fn((n, d), |_| rng.random_range(-5.0..5.0));
        let k = rng.random_range(1..=n);
        if herding_select(pts.view(), k) != herding_oracle(&pts, k) {
            return Err(format!("herding trace differs on fixture {trial}"));
        }
    }
    if herding_select(array![[0.0], [1.0], [2.0], [10.0]].view(), 2) != vec![2, 1] {
        return Err("herding 4-point trace".into());
    }
    let line = array![[0.0], [5.0], [10.0]];
    let square = array![[0.0, 0.0], [1.0, 0.0], [0.0, 4.0], [3.0, 3.0], [1.0, 1.0]];
    let traces = [
        (kcenter_select(line.view(), 0, 2), vec![0, 2]),
        (kcenter_select(line.view(), 1, 3), vec![1, 0, 2]),
        // From (0,0): farthest is (3,3) at 18, then (0,4) at min(16, 10) = 10.
        (kcenter_select(square.view(), 0, 3), vec![0, 3, 2]),
    ];
    for (got, want) in traces {
        if got != want {
            return Err(format!("k-center trace {got:?}, expected {want:?}"));
        }
    }
    let mut worst = 0.0f64;
    for trial in 0..50 {
        let n = rng.random_range(2..200);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = (0..n)
            .map(|_| if trial % 2 == 0 { rng.random::<f64>() } else { rng.random_range(0..6) as f64 })
            .collect();
        let a = auc(&scores, &labels).map_err(|e| e.to_string())?;
        let b = auc_trapezoid(&scores, &labels).map_err(|e| e.to_string())?;
        worst = worst.max((a - b).abs());
    }
    check(
        worst <= 1e-9,
        format!("30 herding fixtures, 3 k-center traces, AUC worst gap {worst:.2e}"),
    )
}

fn main() -> ExitCode {
    let mut failures = 0;
    let mut report = |name: &str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failures += 1;
                println!("FAIL {name}: {detail} [{secs:.1}s]");
            }
        }
    };
    report("hsic-covariance identity", &mut hsic_identity);
    report("gcn gradients vs finite differences", &mut gcn_gradients);
    report("sinkhorn feasibility and support", &mut sinkhorn_feasibility);
    report("spectral round trip", &mut spectral_round_trip);
    report("loss bookkeeping", &mut bookkeeping);
    report("high-frequency targeting", &mut high_frequency);
    report("baseline oracles", &mut baseline_oracles);
    match cora() {
        Ok(g) => {
            report("cora node quality vs random coreset (r=2.6%)", &mut || cora_quality(&g));
            report("cora cross-task link accuracy (r=1.3%)", &mut || cora_link(&g));
        }
        Err(e) => {
            report("cora node quality vs random coreset (r=2.6%)", &mut || Err(format!("import failed: {e}")));
            report("cora cross-task link accuracy (r=1.3%)", &mut || Err(format!("import failed: {e}")));
        }
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    }
}
