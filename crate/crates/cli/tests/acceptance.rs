//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process fails if any criterion fails.

use std::collections::BTreeSet;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use step_cli::io::read_decisions;
use step_cli::*;
use step_core::numerics::{grad_check, load_checkpoint, GradCheckOptions, ParameterSet};
use step_core::pruner::{calibrate_threshold, prune_offline, stream_prune, DtPolicy, Pruner, PruneTarget, StreamEvent, StreamOptions, Threshold};
use step_core::rng::seeded;
use step_core::sampler::{concrete_sample, redundancy_scores, Ablation};
use step_core::store::{generate_synthetic, inject_noise, write_events_jsonl, NodeMap, SyntheticSpec};
use step_core::trainer::{batch_loss_detached, edge_score_pairs, loss_bernoulli, roots_for, spearman, train, Root, TrainConfig, Trainer};
use step_core::TemporalGraph;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn gradient_soundness() -> Outcome {
    let g = generate_synthetic(&SyntheticSpec { n_nodes: 30, n_events: 80, n_communities: 3, intra_prob: 0.8, feature_dim: 4, time_span: 50.0, seed: 11, ..Default::default() })
        .unwrap()
        .graph;
    let cfg = TrainConfig { embed_dim: 6, time_dim: 3, hidden_dim: 5, fanout: 4, batch_size: 6, lambda1: 0.7, lambda2: 0.5, ..Default::default() };
    let mut model = Trainer::new(&g, cfg.clone()).unwrap().model().clone();
    // Move biases off zero so no ReLU input sits on its kink.
    let mut rng = seeded(4);
    for id in model.params.ids().collect::<Vec<_>>() {
        if model.params.name(id).ends_with(".bias") {
            model.params.value_mut(id).iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3));
        }
    }
    let roots: Vec<Root> = roots_for(&g).into_iter().step_by(17).take(cfg.batch_size).collect();
    let (handles, frozen) = (model.handles.clone(), model.params.clone());
    let loss = |ps: &mut ParameterSet| {
        let out = batch_loss_detached(ps, &frozen, &handles, &g, &cfg, &roots, &[9], cfg.tau, 0, true).unwrap();
        ps.zero_grads();
        ps.accumulate(out.grads.as_ref().unwrap());
        out.loss.total
    };
    let report = grad_check(&mut model.params, loss, GradCheckOptions::default());
    let covered = report.params.len() == model.params.len();
    outcome(
        covered && report.max_rel_error < 1e-4,
        format!("{} events, {} tensors checked, max relative error {:.2e}", g.n_events(), report.params.len(), report.max_rel_error),
    )
}

fn concrete_law() -> Outcome {
    let n = 100_000;
    let mut worst: f64 = 0.0;
    let mut rng = seeded(21);
    for rho in [-2.0, 0.0, 2.0] {
        for tau in [1.0, 0.1] {
            let hits = (0..n).filter(|_| concrete_sample(rho, tau, &mut rng).0 > 0.5).count();
            worst = worst.max((hits as f64 / n as f64 - sigmoid(rho)).abs());
        }
    }
    outcome(worst <= 0.005, format!("max |freq - sigmoid(rho)| = {worst:.4}"))
}

fn bernoulli_moments() -> Outcome {
    let balanced: Vec<f64> = (0..100).map(|i| (i % 2) as f64).collect();
    let cases = [(balanced, 0.0), (vec![0.5; 10], 0.25), (vec![0.2, 0.8], 0.16)];
    let worst = cases.iter().map(|(y, want)| (loss_bernoulli(y, 0.5).unwrap().0 - want).abs()).fold(0.0, f64::max);
    outcome(worst <= 1e-12, format!("max error {worst:.1e}"))
}

fn redundancy_closed_forms() -> Outcome {
    let dim = 5;
    let single = redundancy_scores(&[0.3, -1.0, 2.0, 0.1, 0.7], dim).unwrap();
    let mut worst = single[0].abs();
    for n in [2usize, 3, 10] {
        let row = [0.4, -0.2, 1.1, 0.0, -0.6];
        let m: Vec<f64> = (0..n).flat_map(|_| row).collect();
        let s = redundancy_scores(&m, dim).unwrap();
        let want = (n as f64 - 1.0) / n as f64;
        worst = s.iter().map(|v| (v - want).abs()).fold(worst, f64::max);
    }
    outcome(worst <= 1e-10, format!("max error {worst:.1e}"))
}

fn calibration_exactness() -> Outcome {
    let n = 10_000;
    let mut rng = seeded(5);
    // Coarse quantisation creates many ties.
    let scores: Vec<(u64, f64)> = (0..n as u64).map(|id| (id * 7 + 3, (rng.random::<f64>() * 500.0).floor() / 500.0)).collect();
    let mut order = scores.clone();
    order.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let mut ok = true;
    for p in [0.1, 0.3, 0.5, 0.7, 0.9] {
        let cal = calibrate_threshold(&scores, p).unwrap();
        let k = (p * n as f64).round() as usize;
        let dropped: BTreeSet<u64> = scores.iter().filter(|(id, s)| !cal.threshold.keeps(*s, *id)).map(|(id, _)| *id).collect();
        let prefix: BTreeSet<u64> = order[..k].iter().map(|(id, _)| *id).collect();
        ok &= cal.n_dropped == k && dropped == prefix;
    }
    outcome(ok, "n = 10^4, p in {0.1, 0.3, 0.5, 0.7, 0.9}")
}

fn offline_online_equivalence(dir: &Path) -> Outcome {
    let spec = SyntheticSpec { n_nodes: 2000, n_events: 100_000, feature_dim: 16, seed: 77, ..Default::default() };
    let g = generate_synthetic(&spec).unwrap().graph;
    let events = dir.join("fixture.jsonl");
    write_events_jsonl(&events, &g, &NodeMap::numeric(g.n_nodes())).unwrap();
    let cfg = dir.join("cfg.json");
    std::fs::write(&cfg, r#"{"embed_dim": 8, "time_dim": 4, "hidden_dim": 8, "fanout": 4, "batch_size": 16, "max_steps": 10, "early_stopping": false}"#).unwrap();
    let run = dir.join("run");
    cmd_train(&TrainArgs {
        events: events.clone(),
        config: Some(cfg),
        out: run.clone(),
        seed: None,
        neg_policy: None,
        regularizer: None,
        ablate: None,
        max_steps: None,
        epochs: None,
        resume: None,
    })
    .unwrap();
    let ck = run.join("final");
    // A median threshold makes both keep and drop sets large.
    let pruner = step_cli::load_pruner(&ck).unwrap();
    let mut scores: Vec<f64> = g.events().iter().map(|e| pruner.score_event(&e.features, 0.0).unwrap()).collect();
    scores.sort_by(f64::total_cmp);
    let theta = scores[scores.len() / 2];

    let pruned = dir.join("offline");
    cmd_prune(&PruneArgs { events: events.clone(), checkpoint: ck.clone(), ratio: None, threshold: Some(theta), dt_policy: DtPolicy::Zero, out: pruned.clone() }).unwrap();
    let offline: BTreeSet<u64> = read_decisions(&pruned.join("decisions.csv")).unwrap().into_iter().filter(|d| d.keep).map(|d| d.event_id).collect();

    let input = std::fs::read(&events).unwrap();
    let mut same = true;
    let mut sizes = Vec::new();
    for workers in [1, 4] {
        let side = dir.join(format!("dropped-{workers}.txt"));
        let mut args = StreamArgs::with_threshold(ck.clone(), theta);
        args.workers = workers;
        args.dropped = Some(side.clone());
        let mut out = Vec::new();
        let (summary, _) = cmd_stream(&args, std::io::Cursor::new(&input), &mut out).unwrap();
        let dropped: BTreeSet<u64> = std::fs::read_to_string(&side).unwrap().lines().map(|l| l.parse().unwrap()).collect();
        let kept: BTreeSet<u64> = (0..g.n_events() as u64).filter(|id| !dropped.contains(id)).collect();
        same &= kept == offline && summary.n_kept as usize == offline.len() && out.split(|&b| b == b'\n').filter(|l| !l.is_empty()).count() == offline.len();
        sizes.push(kept.len());
    }
    outcome(same, format!("{} events, offline keeps {}, stream keeps {:?} with 1 and 4 workers", g.n_events(), offline.len(), sizes))
}

fn fixture_config(seed: u64, ablation: Ablation) -> TrainConfig {
    let mut cfg: TrainConfig = serde_json::from_value(serde_json::json!({
        "pool": "mean",
        "embed_dim": 16, "time_dim": 8, "hidden_dim": 32,
        "fanout": 8, "batch_size": 32,
        "epochs": 100, "max_steps": 250, "early_stopping": false,
        "lambda1": 0.01, "lambda2": 0.01, "tau": 0.5,
        "adam": {"lr": 1e-3}
    }))
    .unwrap();
    cfg.seed = seed;
    cfg.ablation = ablation;
    cfg
}

struct SeedRun {
    precision: [f64; 4],
    spearman: f64,
}

const ABLATIONS: [Ablation; 4] = [Ablation::None, Ablation::Red, Ablation::Rel, Ablation::RedRel];

fn fixture_runs() -> Vec<SeedRun> {
    (0..5u64)
        .map(|seed| {
            let clean = generate_synthetic(&SyntheticSpec { seed, ..Default::default() }).unwrap().graph;
            let (g, mask) = inject_noise(&clean, 0.5, &mut seeded(1000 + seed)).unwrap();
            let mut precision = [0.0; 4];
            let mut rho = 0.0;
            for (slot, &abl) in ABLATIONS.iter().enumerate() {
                let cfg = fixture_config(seed, abl);
                let (model, _) = train(&g, cfg.clone()).unwrap();
                let out = prune_offline(&g, &model.pruner(), PruneTarget::Ratio(1.0 / 3.0), DtPolicy::Zero).unwrap();
                let dropped: Vec<u64> = out.decisions.iter().filter(|d| !d.keep).map(|d| d.event_id).collect();
                precision[slot] = dropped.iter().filter(|&&id| mask.contains(id)).count() as f64 / dropped.len() as f64;
                if abl == Ablation::None {
                    let trainer = Trainer::new(&g, cfg.clone()).unwrap();
                    let held: Vec<Root> = trainer.holdout_roots().iter().take(200).copied().collect();
                    let es = edge_score_pairs(&model, &g, &cfg, &held).unwrap();
                    rho = spearman(&es.pruner, &es.sampler);
                }
            }
            println!(
                "    seed {seed}: precision full {:.3}, -red {:.3}, -rel {:.3}, -red&rel {:.3}; spearman {:.3}",
                precision[0], precision[1], precision[2], precision[3], rho
            );
            SeedRun { precision, spearman: rho }
        })
        .collect()
}

fn noise_filtering(runs: &[SeedRun]) -> Outcome {
    let mean = runs.iter().map(|r| r.precision[0]).sum::<f64>() / runs.len() as f64;
    outcome(mean - 1.0 / 3.0 >= 0.15, format!("mean precision {mean:.3} vs random 0.333 over {} seeds", runs.len()))
}

fn ablation_ordering(runs: &[SeedRun]) -> Outcome {
    let wins = runs.iter().filter(|r| r.precision[1..].iter().all(|&p| r.precision[0] >= p)).count();
    outcome(wins >= 4, format!("full model >= every ablation on {wins} of {} seeds", runs.len()))
}

fn distillation_fidelity(runs: &[SeedRun]) -> Outcome {
    let all: Vec<String> = runs.iter().map(|r| format!("{:.3}", r.spearman)).collect();
    outcome(runs[0].spearman >= 0.8, format!("held-out spearman {:.3} (seed 0); all seeds [{}]", runs[0].spearman, all.join(", ")))
}

fn determinism_and_persistence(dir: &Path) -> Outcome {
    let g = generate_synthetic(&SyntheticSpec { n_nodes: 200, n_events: 3000, n_communities: 4, feature_dim: 8, time_span: 500.0, seed: 3, ..Default::default() })
        .unwrap()
        .graph;
    let cfg = TrainConfig { embed_dim: 8, time_dim: 4, hidden_dim: 8, fanout: 5, batch_size: 16, epochs: 100, max_steps: Some(100), early_stopping: false, seed: 9, ..Default::default() };
    let mut bytes = Vec::new();
    for k in 0..2 {
        let sub = dir.join(format!("det{k}"));
        std::fs::create_dir_all(&sub).unwrap();
        let mut t = Trainer::new(&g, cfg.clone()).unwrap();
        t.run(None).unwrap();
        let stem = sub.join("ck");
        t.save(&stem).unwrap();
        bytes.push((std::fs::read(sub.join("ck.bin")).unwrap(), std::fs::read(sub.join("ck.json")).unwrap()));
    }
    let identical = bytes[0] == bytes[1];

    let mut full = Trainer::new(&g, cfg.clone()).unwrap();
    full.run(None).unwrap();
    let mut first = Trainer::new(&g, cfg).unwrap();
    for _ in 0..40 {
        first.step().unwrap();
    }
    let stem = dir.join("mid");
    first.save(&stem).unwrap();
    let mut resumed = Trainer::resume(&g, load_checkpoint(&stem).unwrap()).unwrap();
    resumed.run(None).unwrap();
    let tail = &full.report().steps[40..];
    let worst = tail.iter().zip(&resumed.report().steps).map(|(a, b)| (a.total - b.total).abs()).fold(0.0, f64::max);
    let resumed_ok = tail.len() == resumed.report().steps.len() && worst <= 1e-10;
    outcome(identical && resumed_ok, format!("checkpoints identical: {identical}; resume max loss gap {worst:.1e} over {} steps", tail.len()))
}

fn stream_events(g: &TemporalGraph, n: usize) -> Vec<StreamEvent<()>> {
    g.events()[..n].iter().map(StreamEvent::from_event).collect()
}

fn per_event_secs(pruner: &Pruner, events: &[StreamEvent<()>], reps: usize) -> f64 {
    let opts = StreamOptions::new(Threshold::new(0.5));
    let mut best = f64::INFINITY;
    for _ in 0..3 {
        let batches: Vec<Vec<StreamEvent<()>>> = (0..reps).map(|_| events.to_vec()).collect();
        let t0 = Instant::now();
        for batch in batches {
            stream_prune(batch.into_iter().map(Ok), pruner, &opts, |_, _| Ok(()), |_, _| Ok(())).unwrap();
        }
        best = best.min(t0.elapsed().as_secs_f64() / (reps * events.len()) as f64);
    }
    best
}

fn throughput_contract() -> Outcome {
    let spec = SyntheticSpec { n_events: 1_000_000, ..Default::default() };
    let g = generate_synthetic(&spec).unwrap().graph;
    let small = generate_synthetic(&SyntheticSpec { n_events: 2000, ..spec.clone() }).unwrap().graph;
    let pruner = Trainer::new(&small, TrainConfig::default()).unwrap().model().pruner();
    let big = per_event_secs(&pruner, &stream_events(&g, g.n_events()), 1);
    let short = per_event_secs(&pruner, &stream_events(&g, 1000), 1000);
    let ratio = big.max(short) / big.min(short);
    let throughput = 1.0 / big;
    outcome(
        throughput >= 1e5 && ratio <= 2.0,
        format!("{throughput:.3e} events/s on 10^6 events; per-event latency {:.2} us (10^3) vs {:.2} us (10^6), ratio {ratio:.2}", short * 1e6, big * 1e6),
    )
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let mut failed = 0;
    let mut report = |n: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let t0 = Instant::now();
        let o = f();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {n:>2} [{verdict}] {name}: {} ({:.1}s)", o.detail, t0.elapsed().as_secs_f64());
        if !o.pass {
            failed += 1;
        }
    };
    report(1, "gradient soundness", &mut gradient_soundness);
    report(2, "concrete law", &mut concrete_law);
    report(3, "bernoulli moment matching", &mut bernoulli_moments);
    report(4, "redundancy closed forms", &mut redundancy_closed_forms);
    report(5, "calibration exactness", &mut calibration_exactness);
    report(6, "offline/online equivalence", &mut || offline_online_equivalence(dir.path()));
    let t0 = Instant::now();
    println!("    training the noise fixture: 5 seeds x 4 variants");
    let runs = fixture_runs();
    println!("    fixture experiments took {:.1}s", t0.elapsed().as_secs_f64());
    report(7, "noise filtering", &mut || noise_filtering(&runs));
    report(8, "ablation ordering", &mut || ablation_ordering(&runs));
    report(9, "distillation fidelity", &mut || distillation_fidelity(&runs));
    report(10, "determinism and persistence", &mut || determinism_and_persistence(dir.path()));
    report(11, "throughput contract", &mut throughput_contract);
    println!("{} of 11 criteria passed", 11 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
