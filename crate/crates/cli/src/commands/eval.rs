use std::collections::HashMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use serde::{Deserialize, Serialize};
use step_core::pruner::PruneDecision;
use step_core::store::NoiseMask;
use step_core::trainer::Model;
use step_core::EventId;

use crate::error::{CliError, CliResult};
use crate::io::{load_graph, read_decisions, read_json, write_json};
use crate::manifest::RunManifest;
use crate::proxy::{proxy_auc, ProxyReport, Query};

pub const HISTOGRAM_BINS: usize = 32;

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// The event file that was pruned.
    #[arg(long)]
    pub events: PathBuf,
    /// Noise mask written by `inject`.
    #[arg(long)]
    pub mask: PathBuf,
    /// Decision log written by `prune` or `stream`.
    #[arg(long)]
    pub decisions: PathBuf,
    /// Output directory for the report, histogram and ratio sweep.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// With labelled events, fit the proxy classifier on this model.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub n_all: usize,
    pub n_noise: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub ratio: f64,
    pub n_dropped: usize,
    pub precision: f64,
    pub recall: f64,
    pub retention: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_events: usize,
    pub n_noise: usize,
    pub n_kept: usize,
    pub n_dropped: usize,
    /// Dropped events that are injected noise, over all dropped events.
    pub precision: f64,
    /// Injected events dropped, over all injected events.
    pub recall: f64,
    /// Original events kept, over all original events.
    pub retention: f64,
    /// Achieved pruning ratio `n_dropped / n_events`.
    pub ratio: f64,
    /// Precision expected from dropping uniformly at random.
    pub random_precision: f64,
    pub proxy: Option<ProxyReport>,
    pub histogram: Vec<HistogramBin>,
}

fn frac(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Validates that `decisions` hold exactly one row per event `0..n`.
fn index_decisions(decisions: &[PruneDecision], n: usize) -> CliResult<Vec<PruneDecision>> {
    if decisions.len() != n {
        return Err(CliError::data(format!("decision log has {} rows, event file has {n} events", decisions.len())));
    }
    let mut by_id: Vec<Option<PruneDecision>> = vec![None; n];
    for d in decisions {
        let slot = by_id
            .get_mut(d.event_id as usize)
            .ok_or_else(|| CliError::data(format!("decision for unknown event {}", d.event_id)))?;
        if slot.replace(*d).is_some() {
            return Err(CliError::data(format!("duplicate decision for event {}", d.event_id)));
        }
    }
    Ok(by_id.into_iter().map(|d| d.expect("n rows, n distinct ids")).collect())
}

pub fn histogram(decisions: &[PruneDecision], is_noise: impl Fn(EventId) -> bool) -> Vec<HistogramBin> {
    let w = 1.0 / HISTOGRAM_BINS as f64;
    let mut bins: Vec<HistogramBin> =
        (0..HISTOGRAM_BINS).map(|i| HistogramBin { lo: i as f64 * w, hi: (i + 1) as f64 * w, n_all: 0, n_noise: 0 }).collect();
    for d in decisions {
        let i = ((d.score * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
        bins[i].n_all += 1;
        bins[i].n_noise += usize::from(is_noise(d.event_id));
    }
    bins
}

/// Precision/recall/retention when dropping the lowest-scoring `round(p n)`
/// events, ties broken by ascending id.
pub fn ratio_sweep(decisions: &[PruneDecision], is_noise: impl Fn(EventId) -> bool, ratios: &[f64]) -> Vec<SweepPoint> {
    let mut order: Vec<&PruneDecision> = decisions.iter().collect();
    order.sort_by(|a, b| a.score.total_cmp(&b.score).then(a.event_id.cmp(&b.event_id)));
    let n = order.len();
    let n_noise = order.iter().filter(|d| is_noise(d.event_id)).count();
    let mut noise_prefix = vec![0usize; n + 1];
    for (i, d) in order.iter().enumerate() {
        noise_prefix[i + 1] = noise_prefix[i] + usize::from(is_noise(d.event_id));
    }
    ratios
        .iter()
        .map(|&p| {
            let k = ((p * n as f64).round() as usize).min(n);
            let hit = noise_prefix[k];
            SweepPoint {
                ratio: p,
                n_dropped: k,
                precision: frac(hit, k),
                recall: frac(hit, n_noise),
                retention: frac(n - n_noise - (k - hit), n - n_noise),
            }
        })
        .collect()
}

pub fn evaluate(decisions: &[PruneDecision], mask: &NoiseMask) -> EvalReport {
    let n = decisions.len();
    let is_noise = |id| mask.contains(id);
    let n_noise = decisions.iter().filter(|d| is_noise(d.event_id)).count();
    let n_dropped = decisions.iter().filter(|d| !d.keep).count();
    let noise_dropped = decisions.iter().filter(|d| !d.keep && is_noise(d.event_id)).count();
    let true_kept = decisions.iter().filter(|d| d.keep && !is_noise(d.event_id)).count();
    EvalReport {
        n_events: n,
        n_noise,
        n_kept: n - n_dropped,
        n_dropped,
        precision: frac(noise_dropped, n_dropped),
        recall: frac(noise_dropped, n_noise),
        retention: frac(true_kept, n - n_noise),
        ratio: frac(n_dropped, n),
        random_precision: frac(n_noise, n),
        proxy: None,
        histogram: histogram(decisions, is_noise),
    }
}

pub fn sweep_ratios() -> Vec<f64> {
    (1..20).map(|i| i as f64 * 0.05).collect()
}

pub fn cmd_eval(args: &EvalArgs) -> CliResult<(EvalReport, RunManifest)> {
    let started = Instant::now();
    let (g, _) = load_graph(&args.events)?;
    let mask: NoiseMask = read_json(&args.mask)?;
    if let Some(id) = mask.injected_event_ids.iter().find(|&&id| id as usize >= g.n_events()) {
        return Err(CliError::data(format!("noise mask names event {id}, event file has {}", g.n_events())));
    }
    let decisions = index_decisions(&read_decisions(&args.decisions)?, g.n_events())?;
    let mut report = evaluate(&decisions, &mask);

    let labelled = g.events().iter().any(|e| e.label.is_some());
    if let (Some(ck), true) = (&args.checkpoint, labelled) {
        let (model, cfg) = Model::load(ck).map_err(|e| CliError::from(e).context(ck.display()))?;
        let keep: HashMap<EventId, bool> = decisions.iter().map(|d| (d.event_id, d.keep)).collect();
        let pruned = g.filter_events(|e| keep[&e.id]);
        let queries: Vec<Query> = g
            .events()
            .iter()
            .filter_map(|e| e.label.map(|label| Query { node: e.src, time: e.timestamp, label }))
            .collect();
        report.proxy = proxy_auc(&model, &cfg, &g, &pruned, &queries, cfg.seed)?;
    }

    let mut m = RunManifest::new("eval").input("events", &args.events).input("mask", &args.mask).input("decisions", &args.decisions);
    if let Some(ck) = &args.checkpoint {
        m.inputs.insert("checkpoint".into(), ck.clone());
    }
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join("eval.json"), &report)?;
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(dir.join("histogram.csv"))?));
        w.write_record(["lo", "hi", "n_all", "n_noise"])?;
        for b in &report.histogram {
            w.write_record([b.lo.to_string(), b.hi.to_string(), b.n_all.to_string(), b.n_noise.to_string()])?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(dir.join("sweep.csv"))?));
        w.write_record(["ratio", "n_dropped", "precision", "recall", "retention"])?;
        for s in ratio_sweep(&decisions, |id| mask.contains(id), &sweep_ratios()) {
            w.write_record([s.ratio.to_string(), s.n_dropped.to_string(), s.precision.to_string(), s.recall.to_string(), s.retention.to_string()])?;
        }
        w.flush()?;
        m.output("report", &dir.join("eval.json"));
        m.output("histogram", &dir.join("histogram.csv"));
        m.output("sweep", &dir.join("sweep.csv"));
    }
    let mut summary = serde_json::to_value(&report)?;
    if let Some(obj) = summary.as_object_mut() {
        obj.remove("histogram");
    }
    m.finish(started, summary);
    if let Some(dir) = &args.out {
        m.write(&dir.join("manifest.json"))?;
    }
    Ok((report, m))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dec(id: u64, score: f64, keep: bool) -> PruneDecision {
        PruneDecision { event_id: id, score, keep, threshold: 0.5 }
    }

    fn mask(ids: &[u64]) -> NoiseMask {
        NoiseMask { ratio: 0.5, injected_event_ids: ids.iter().copied().collect() }
    }

    #[test]
    fn exact_drop_set_gives_perfect_scores() {
        let d = vec![dec(0, 0.9, true), dec(1, 0.1, false), dec(2, 0.8, true), dec(3, 0.2, false)];
        let r = evaluate(&d, &mask(&[1, 3]));
        assert_eq!((r.precision, r.recall, r.retention), (1.0, 1.0, 1.0));
        assert_eq!(r.n_kept + r.n_dropped, r.n_events);
        assert_eq!(r.random_precision, 0.5);
        assert_eq!(r.histogram.iter().map(|b| b.n_all).sum::<usize>(), 4);
        assert_eq!(r.histogram.len(), HISTOGRAM_BINS);
    }

    #[test]
    fn histogram_edges() {
        let h = histogram(&[dec(0, 0.0, true), dec(1, 1.0, true), dec(2, 0.5, true)], |id| id == 1);
        assert_eq!(h[0].n_all, 1);
        assert_eq!(h[31].n_all, 1);
        assert_eq!(h[31].n_noise, 1);
        assert_eq!(h[16].n_all, 1);
    }

    #[test]
    fn random_dropping_matches_the_noise_fraction() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        let (n, r) = (60_000u64, 0.5);
        // Last third of ids are noise: fraction r / (1 + r).
        let noise: Vec<u64> = (40_000..n).collect();
        let d: Vec<PruneDecision> = (0..n).map(|i| dec(i, 0.5, rng.random::<f64>() >= r / (1.0 + r))).collect();
        let rep = evaluate(&d, &mask(&noise));
        assert!((rep.precision - r / (1.0 + r)).abs() < 0.01, "{}", rep.precision);
    }

    #[test]
    fn sweep_counts_are_exact() {
        let d: Vec<PruneDecision> = (0..10).map(|i| dec(i, i as f64 / 10.0, true)).collect();
        let s = ratio_sweep(&d, |id| id < 3, &[0.0, 0.3, 0.5, 1.0]);
        assert_eq!(s[0].n_dropped, 0);
        assert_eq!((s[1].precision, s[1].recall, s[1].retention), (1.0, 1.0, 1.0));
        assert_eq!(s[2].n_dropped, 5);
        assert!((s[2].retention - 5.0 / 7.0).abs() < 1e-15);
        assert_eq!(s[3].retention, 0.0);
    }

    #[test]
    fn mismatched_logs_are_rejected() {
        assert!(index_decisions(&[dec(0, 0.1, true)], 2).is_err());
        assert!(index_decisions(&[dec(0, 0.1, true), dec(0, 0.2, true)], 2).is_err());
        assert!(index_decisions(&[dec(0, 0.1, true), dec(5, 0.2, true)], 2).is_err());
    }
}
