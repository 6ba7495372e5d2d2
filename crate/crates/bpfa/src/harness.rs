//! End-to-end experiment orchestration: the surrogate x victim x attack
//! transfer matrix, ASR computation against calibrated thresholds,
//! ablation sweeps, and report emission.
//!
//! Adversarial examples are crafted once per (surrogate, attack) and
//! reused across victims; victim models are never touched during crafting.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{normalized_sq_distance, AttackConfig, AttackContext, AttackMode};
use crate::error::{Error, Result};
use crate::nn::SegmentedNetwork;
use crate::rng::{derive_seed, substream};
use crate::synth::{FacePair, IdentityDataset};
use crate::tensor::Tensor;
use crate::trainer::Threshold;

/// A named model zoo. Order is significant: it fixes report row order.
pub struct Zoo {
    pub models: Vec<(String, SegmentedNetwork)>,
}

impl Zoo {
    pub fn get(&self, name: &str) -> Option<&SegmentedNetwork> {
        self.models
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, net)| net)
    }

    pub fn names(&self) -> Vec<&str> {
        self.models.iter().map(|(n, _)| n.as_str()).collect()
    }
}

/// Train the four-architecture desk zoo, model `i` seeded `base_seed + i`.
/// Architectures train in parallel; each individual run is deterministic.
pub fn train_plain_zoo(ds: &IdentityDataset, base_seed: u64) -> Result<Zoo> {
    let models: Result<Vec<_>> = crate::nn::ArchId::ALL
        .par_iter()
        .enumerate()
        .map(|(i, arch)| {
            let cfg = crate::trainer::TrainConfig::desk_default(*arch, base_seed + i as u64);
            let (net, _) = crate::trainer::train(ds, &cfg)?;
            Ok((arch.name().to_string(), net))
        })
        .collect();
    Ok(Zoo { models: models? })
}

/// Train the adversarially trained twin zoo with the same per-model seeds
/// as [`train_plain_zoo`]. Twin names carry an `r` suffix ("Ar".."Dr") so
/// a plan mixing both zoos never mislabels a cell as white-box.
pub fn train_robust_zoo(ds: &IdentityDataset, base_seed: u64) -> Result<Zoo> {
    let models: Result<Vec<_>> = crate::nn::ArchId::ALL
        .par_iter()
        .enumerate()
        .map(|(i, arch)| {
            let cfg = crate::trainer::TrainConfig::adversarial_default(*arch, base_seed + i as u64);
            let (net, _) = crate::trainer::adversarial_train(ds, &cfg)?;
            Ok((format!("{}r", arch.name()), net))
        })
        .collect();
    Ok(Zoo { models: models? })
}

/// Calibrate one distance threshold per zoo model at the given FAR target.
pub fn calibrate_zoo(
    zoo: &Zoo,
    ds: &IdentityDataset,
    far_target: f64,
) -> Result<BTreeMap<String, Threshold>> {
    let entries: Result<Vec<_>> = zoo
        .models
        .par_iter()
        .map(|(name, net)| {
            let t = crate::trainer::calibrate_threshold(net, ds, far_target)?;
            Ok((name.clone(), t))
        })
        .collect();
    Ok(entries?.into_iter().collect())
}

pub struct ExperimentPlan<'a> {
    pub dataset: &'a IdentityDataset,
    pub surrogates: &'a Zoo,
    pub victims: &'a Zoo,
    pub pairs: &'a [FacePair],
    pub attacks: &'a [AttackConfig],
    /// Threshold per victim name, calibrated for the plan's mode.
    pub thresholds: &'a BTreeMap<String, Threshold>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub surrogate: String,
    pub victim: String,
    pub attack: String,
    pub mode: String,
    pub asr: f64,
    pub n_pairs: usize,
    pub threshold: f64,
    pub is_whitebox: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

/// Impersonation ASR: fraction of pairs whose adversarial image lands
/// within the threshold of the target embedding under the victim model.
pub fn asr_impersonation(
    adv_images: &[Tensor],
    targets: &[&Tensor],
    victim: &SegmentedNetwork,
    threshold: &Threshold,
) -> Result<f64> {
    if adv_images.is_empty() || adv_images.len() != targets.len() {
        return Err(Error::InvalidArgument(
            "need a nonempty, equal-length adversarial/target set".into(),
        ));
    }
    let mut hits = 0usize;
    for (adv, target) in adv_images.iter().zip(targets) {
        let d = normalized_sq_distance(&victim.forward_plain(adv)?, &victim.forward_plain(target)?)?;
        if d < threshold.value {
            hits += 1;
        }
    }
    Ok(hits as f64 / adv_images.len() as f64)
}

/// Dodging ASR: fraction of pairs whose adversarial image escapes the
/// threshold around its own source embedding.
pub fn asr_dodging(
    adv_images: &[Tensor],
    sources: &[&Tensor],
    victim: &SegmentedNetwork,
    threshold: &Threshold,
) -> Result<f64> {
    if adv_images.is_empty() || adv_images.len() != sources.len() {
        return Err(Error::InvalidArgument(
            "need a nonempty, equal-length adversarial/source set".into(),
        ));
    }
    let mut hits = 0usize;
    for (adv, source) in adv_images.iter().zip(sources) {
        let d = normalized_sq_distance(&victim.forward_plain(adv)?, &victim.forward_plain(source)?)?;
        if d > threshold.value {
            hits += 1;
        }
    }
    Ok(hits as f64 / adv_images.len() as f64)
}

/// Counting variants over precomputed distances, used as the independent
/// recount route in tests.
pub fn asr_from_distances(distances: &[f64], threshold: f64, mode: AttackMode) -> Result<f64> {
    if distances.is_empty() {
        return Err(Error::InvalidArgument("empty distance set".into()));
    }
    let hits = distances
        .iter()
        .filter(|&&d| match mode {
            AttackMode::Impersonation => d < threshold,
            AttackMode::Dodging => d > threshold,
        })
        .count();
    Ok(hits as f64 / distances.len() as f64)
}

/// Craft adversarial images for every pair with one surrogate and attack
/// config. Per-pair attack seeds derive from the plan seed, the surrogate
/// name, and the attack name, so any cell is re-runnable in isolation.
pub fn craft_cell(
    plan: &ExperimentPlan<'_>,
    surrogate_name: &str,
    surrogate: &SegmentedNetwork,
    cfg: &AttackConfig,
) -> Result<Vec<Tensor>> {
    let label = format!("craft/{surrogate_name}/{}", cfg.name);
    plan.pairs
        .par_iter()
        .enumerate()
        .map(|(i, pair)| {
            let mut cell_cfg = cfg.clone();
            cell_cfg.seed = derive_seed(plan.seed, &label, i as u64);
            crate::attacks::run_attack(surrogate, plan.dataset, pair, &cell_cfg)
                .map(|out| out.x_adv)
        })
        .collect()
}

pub fn run_transfer_matrix(plan: &ExperimentPlan<'_>) -> Result<EvalReport> {
    // Fail before any attack runs if a victim lacks its threshold.
    for (victim_name, _) in &plan.victims.models {
        if !plan.thresholds.contains_key(victim_name) {
            return Err(Error::InvalidArgument(format!(
                "victim {victim_name} has no calibrated threshold"
            )));
        }
    }
    if plan.pairs.is_empty() {
        return Err(Error::InvalidArgument("empty pair set".into()));
    }
    let mut rows = Vec::new();
    for (surrogate_name, surrogate) in &plan.surrogates.models {
        for cfg in plan.attacks {
            let adv_images = craft_cell(plan, surrogate_name, surrogate, cfg)?;
            for (victim_name, victim) in &plan.victims.models {
                let threshold = &plan.thresholds[victim_name];
                let refs: Vec<&Tensor> = plan
                    .pairs
                    .iter()
                    .map(|p| match cfg.mode {
                        AttackMode::Impersonation => plan.dataset.image(p.target_id, p.target_img),
                        AttackMode::Dodging => plan.dataset.image(p.attacker_id, p.attacker_img),
                    })
                    .collect();
                let asr = match cfg.mode {
                    AttackMode::Impersonation => {
                        asr_impersonation(&adv_images, &refs, victim, threshold)?
                    }
                    AttackMode::Dodging => asr_dodging(&adv_images, &refs, victim, threshold)?,
                };
                rows.push(EvalRow {
                    surrogate: surrogate_name.clone(),
                    victim: victim_name.clone(),
                    attack: cfg.name.clone(),
                    mode: cfg.mode.name().into(),
                    asr,
                    n_pairs: plan.pairs.len(),
                    threshold: threshold.value,
                    is_whitebox: surrogate_name == victim_name,
                });
            }
        }
    }
    Ok(EvalReport { rows })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub x: f64,
    pub mean_blackbox_asr: f64,
    pub per_victim: Vec<(String, f64)>,
}

/// Black-box ASR of a single surrogate's attack as a function of the
/// feature step size. Negative values inject loss-decreasing perturbations.
pub fn sweep_eta(
    plan: &ExperimentPlan<'_>,
    surrogate_name: &str,
    base: &AttackConfig,
    etas: &[f64],
) -> Result<Vec<SweepPoint>> {
    let surrogate = plan
        .surrogates
        .get(surrogate_name)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown surrogate {surrogate_name}")))?;
    let mut points = Vec::with_capacity(etas.len());
    for &eta in etas {
        let mut cfg = base.clone();
        cfg.eta = eta;
        // Keep the attack name (and so the seed substream) fixed across the
        // grid so the eta = 0 point coincides with the baseline exactly.
        let adv_images = craft_cell(plan, surrogate_name, surrogate, &cfg)?;
        let point = evaluate_blackbox(plan, surrogate_name, &cfg, &adv_images, eta)?;
        points.push(point);
    }
    Ok(points)
}

fn evaluate_blackbox(
    plan: &ExperimentPlan<'_>,
    surrogate_name: &str,
    cfg: &AttackConfig,
    adv_images: &[Tensor],
    x: f64,
) -> Result<SweepPoint> {
    let mut per_victim = Vec::new();
    let mut total = 0.0;
    let mut count = 0usize;
    for (victim_name, victim) in &plan.victims.models {
        if victim_name == surrogate_name {
            continue;
        }
        let threshold = plan.thresholds.get(victim_name).ok_or_else(|| {
            Error::InvalidArgument(format!("victim {victim_name} has no threshold"))
        })?;
        let refs: Vec<&Tensor> = plan
            .pairs
            .iter()
            .map(|p| match cfg.mode {
                AttackMode::Impersonation => plan.dataset.image(p.target_id, p.target_img),
                AttackMode::Dodging => plan.dataset.image(p.attacker_id, p.attacker_img),
            })
            .collect();
        let asr = match cfg.mode {
            AttackMode::Impersonation => asr_impersonation(adv_images, &refs, victim, threshold)?,
            AttackMode::Dodging => asr_dodging(adv_images, &refs, victim, threshold)?,
        };
        per_victim.push((victim_name.clone(), asr));
        total += asr;
        count += 1;
    }
    if count == 0 {
        return Err(Error::InvalidArgument(
            "no black-box victims: zoo contains only the surrogate".into(),
        ));
    }
    Ok(SweepPoint {
        x,
        mean_blackbox_asr: total / count as f64,
        per_victim,
    })
}

/// ASR versus iteration count for one surrogate and attack, snapshotting a
/// single crafting run at each grid point. n = 0 evaluates the clean images.
pub fn sweep_iterations(
    plan: &ExperimentPlan<'_>,
    surrogate_name: &str,
    base: &AttackConfig,
    n_grid: &[usize],
) -> Result<Vec<SweepPoint>> {
    let surrogate = plan
        .surrogates
        .get(surrogate_name)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown surrogate {surrogate_name}")))?;
    let max_n = n_grid.iter().copied().max().unwrap_or(0);
    let label = format!("craft/{surrogate_name}/{}", base.name);

    // snapshots[pair][grid position]
    let snapshots: Vec<Vec<Tensor>> = plan
        .pairs
        .par_iter()
        .enumerate()
        .map(|(i, pair)| -> Result<Vec<Tensor>> {
            let mut cfg = base.clone();
            cfg.n_max = max_n.max(1);
            cfg.seed = derive_seed(plan.seed, &label, i as u64);
            let (x_src, x_target) = plan.dataset.pair_images(pair);
            let ctx = AttackContext::new(surrogate, &cfg, x_src, Some(x_target))?;
            let mut rng = substream(cfg.seed, "attack", 0);
            let mut state = ctx.initial_state();
            let mut shots = Vec::with_capacity(n_grid.len());
            for n in 0..=max_n {
                if n_grid.contains(&n) {
                    shots.push(state.x_adv.clone());
                }
                if n < max_n {
                    let (next, _) = ctx.step(&state, &mut rng, false)?;
                    state = next;
                }
            }
            Ok(shots)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut points = Vec::with_capacity(n_grid.len());
    for (gi, &n) in n_grid.iter().enumerate() {
        let adv_images: Vec<Tensor> = snapshots.iter().map(|s| s[gi].clone()).collect();
        points.push(evaluate_blackbox(plan, surrogate_name, base, &adv_images, n as f64)?);
    }
    Ok(points)
}

pub fn save_sweep_csv<P: AsRef<Path>>(points: &[SweepPoint], x_name: &str, path: P) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec![x_name.to_string(), "mean_blackbox_asr".into()];
    if let Some(p) = points.first() {
        header.extend(p.per_victim.iter().map(|(n, _)| format!("asr_{n}")));
    }
    writer.write_record(&header)?;
    for p in points {
        let mut rec = vec![format!("{}", p.x), format!("{}", p.mean_blackbox_asr)];
        rec.extend(p.per_victim.iter().map(|(_, a)| format!("{a}")));
        writer.write_record(&rec)?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(Error::InvalidArgument(format!("unknown report format {other:?}"))),
        }
    }
}

pub fn write_report<P: AsRef<Path>>(
    report: &EvalReport,
    format: ReportFormat,
    path: P,
) -> Result<()> {
    match format {
        ReportFormat::Csv => report_to_csv(report, path),
        ReportFormat::Json => {
            Ok(std::fs::write(path, serde_json::to_string_pretty(report)?)?)
        }
        ReportFormat::Markdown => {
            Ok(std::fs::write(path, report_to_markdown(report))?)
        }
    }
}

pub fn report_to_csv<P: AsRef<Path>>(report: &EvalReport, path: P) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record([
        "surrogate",
        "victim",
        "attack",
        "mode",
        "asr",
        "n_pairs",
        "threshold",
        "is_whitebox",
    ])?;
    for r in &report.rows {
        writer.write_record([
            r.surrogate.clone(),
            r.victim.clone(),
            r.attack.clone(),
            r.mode.clone(),
            format!("{}", r.asr),
            r.n_pairs.to_string(),
            format!("{}", r.threshold),
            r.is_whitebox.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

pub fn report_from_csv<P: AsRef<Path>>(path: P) -> Result<EvalReport> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let field = |i: usize| -> Result<&str> {
            rec.get(i)
                .ok_or_else(|| Error::InvalidArgument("short report record".into()))
        };
        rows.push(EvalRow {
            surrogate: field(0)?.to_string(),
            victim: field(1)?.to_string(),
            attack: field(2)?.to_string(),
            mode: field(3)?.to_string(),
            asr: field(4)?
                .parse()
                .map_err(|e| Error::InvalidArgument(format!("bad asr: {e}")))?,
            n_pairs: field(5)?
                .parse()
                .map_err(|e| Error::InvalidArgument(format!("bad n_pairs: {e}")))?,
            threshold: field(6)?
                .parse()
                .map_err(|e| Error::InvalidArgument(format!("bad threshold: {e}")))?,
            is_whitebox: field(7)?
                .parse()
                .map_err(|e| Error::InvalidArgument(format!("bad is_whitebox: {e}")))?,
        });
    }
    Ok(EvalReport { rows })
}

/// Markdown rendering. Attacks named `<base>+bpfa` are paired with their
/// base attack in one cell as "a / b", with the augmented number bolded
/// when it improves on the baseline.
pub fn report_to_markdown(report: &EvalReport) -> String {
    let mut out = String::new();
    let mut victims: Vec<&str> = Vec::new();
    for r in &report.rows {
        if !victims.contains(&r.victim.as_str()) {
            victims.push(&r.victim);
        }
    }
    out.push_str("| surrogate | attack |");
    for v in &victims {
        out.push_str(&format!(" {v} |"));
    }
    out.push('\n');
    out.push_str("|---|---|");
    for _ in &victims {
        out.push_str("---|");
    }
    out.push('\n');

    let find = |surrogate: &str, victim: &str, attack: &str| -> Option<&EvalRow> {
        report
            .rows
            .iter()
            .find(|r| r.surrogate == surrogate && r.victim == victim && r.attack == attack)
    };

    let mut seen: Vec<(String, String)> = Vec::new();
    for r in &report.rows {
        let base_name = r.attack.strip_suffix("+bpfa").unwrap_or(&r.attack).to_string();
        let key = (r.surrogate.clone(), base_name.clone());
        if seen.contains(&key) {
            continue;
        }
        seen.push(key);
        let augmented = format!("{base_name}+bpfa");
        out.push_str(&format!("| {} | {} / +bpfa |", r.surrogate, base_name));
        for v in &victims {
            let base_row = find(&r.surrogate, v, &base_name);
            let aug_row = find(&r.surrogate, v, &augmented);
            let cell = match (base_row, aug_row) {
                (Some(b), Some(a)) => {
                    let star = if b.is_whitebox { "*" } else { "" };
                    if a.asr > b.asr {
                        format!("{:.1}{star} / **{:.1}{star}**", b.asr * 100.0, a.asr * 100.0)
                    } else {
                        format!("{:.1}{star} / {:.1}{star}", b.asr * 100.0, a.asr * 100.0)
                    }
                }
                (Some(b), None) => format!("{:.1}", b.asr * 100.0),
                (None, Some(a)) => format!("- / {:.1}", a.asr * 100.0),
                (None, None) => "-".into(),
            };
            out.push_str(&format!(" {cell} |"));
        }
        out.push('\n');
    }
    out
}

/// Write a report in all three formats under a directory stem.
pub fn emit_report_files(report: &EvalReport, dir: &Path, stem: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    report_to_csv(report, dir.join(format!("{stem}.csv")))?;
    write_report(report, ReportFormat::Json, dir.join(format!("{stem}.json")))?;
    let mut f = std::fs::File::create(dir.join(format!("{stem}.md")))?;
    f.write_all(report_to_markdown(report).as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn asr_counting() {
        let d = [0.2, 0.5, 0.9];
        let a = asr_from_distances(&d, 0.4, AttackMode::Impersonation).unwrap();
        assert!((a - 1.0 / 3.0).abs() < 1e-15);
        let a = asr_from_distances(&d, 0.4, AttackMode::Dodging).unwrap();
        assert!((a - 2.0 / 3.0).abs() < 1e-15);
        // partition: dodging ASR + fraction(d <= t) == 1
        let below = d.iter().filter(|&&x| x <= 0.4).count() as f64 / 3.0;
        assert!((a + below - 1.0).abs() < 1e-15);
        assert!(asr_from_distances(&[], 0.4, AttackMode::Dodging).is_err());
        // threshold below the minimum admits nothing
        let a = asr_from_distances(&d, 0.1, AttackMode::Impersonation).unwrap();
        assert_eq!(a, 0.0);
    }

    #[test]
    fn csv_roundtrip_lossless() {
        let report = EvalReport {
            rows: vec![EvalRow {
                surrogate: "A".into(),
                victim: "B".into(),
                attack: "fim".into(),
                mode: "impersonation".into(),
                asr: 0.12345678901234567,
                n_pairs: 200,
                threshold: 0.987654321,
                is_whitebox: false,
            }],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        report_to_csv(&report, &path).unwrap();
        let loaded = report_from_csv(&path).unwrap();
        assert_eq!(loaded, report);
        // empty report -> header-only file
        let path2 = dir.path().join("empty.csv");
        report_to_csv(&EvalReport::default(), &path2).unwrap();
        assert_eq!(report_from_csv(&path2).unwrap().rows.len(), 0);
        let contents = std::fs::read_to_string(&path2).unwrap();
        assert_eq!(contents.lines().count(), 1);
    }

    #[test]
    fn markdown_bolds_improvements() {
        let row = |attack: &str, asr: f64| EvalRow {
            surrogate: "A".into(),
            victim: "B".into(),
            attack: attack.into(),
            mode: "impersonation".into(),
            asr,
            n_pairs: 10,
            threshold: 0.5,
            is_whitebox: false,
        };
        let report = EvalReport {
            rows: vec![row("fim", 0.2), row("fim+bpfa", 0.4)],
        };
        let md = report_to_markdown(&report);
        assert!(md.contains("20.0 / **40.0**"), "{md}");
    }
}
