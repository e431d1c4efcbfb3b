//! Measurement suites: internal-reward consistency rate, reward-model
//! accuracy against the gold oracle (with the consistent-subset breakdown),
//! gold-oracle win rate with length statistics, and metrics persistence.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{greedy_decode, Bound};
use crate::rewards::{compute_verdict, GoldLabel, HardLabel, PreferencePair, VerdictSettings};
use crate::tasks::{gold_preference, read_jsonl, TaskInstance};
use crate::vocab::EOS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DatasetTag {
    #[serde(rename = "trained_D_prev")]
    TrainedDPrev,
    #[serde(rename = "new_D_t")]
    NewDT,
    #[serde(rename = "heldout_gold")]
    HeldoutGold,
}

impl DatasetTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetTag::TrainedDPrev => "trained_D_prev",
            DatasetTag::NewDT => "new_D_t",
            DatasetTag::HeldoutGold => "heldout_gold",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub iteration: usize,
    pub dataset_tag: DatasetTag,
    pub metric: String,
    pub value: Option<f64>,
    pub n_valid: usize,
    pub n_total: usize,
}

impl MetricsRecord {
    pub fn validate(&self) -> Result<()> {
        if self.n_valid > self.n_total {
            return Err(Error::Metrics(format!(
                "n_valid {} exceeds n_total {} for {}",
                self.n_valid, self.n_total, self.metric
            )));
        }
        if let Some(v) = self.value {
            if self.metric.contains("rate") || self.metric.contains("accuracy") {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Metrics(format!("rate metric {} out of [0,1]: {v}", self.metric)));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RateSummary {
    pub rate: Option<f64>,
    pub n_valid: usize,
    pub n_total: usize,
}

/// Fraction of valid pairs (judge position-consistent, both hard labels
/// defined) on which the two internal reward models agree. Undefined when no
/// pair is valid.
pub fn consistency_rate(
    policy: Bound,
    global_ref: Bound,
    pairs: &[PreferencePair],
    settings: &VerdictSettings,
) -> Result<RateSummary> {
    if pairs.is_empty() {
        return Err(Error::Data("consistency_rate over empty pair set".into()));
    }
    let verdicts: Vec<_> = pairs
        .par_iter()
        .map(|pair| compute_verdict(policy, global_ref, pair, settings))
        .collect::<Result<Vec<_>>>()?;
    let mut n_valid = 0usize;
    let mut agree = 0usize;
    for v in &verdicts {
        let (Some(li), Some(lg)) = (v.label_irm.defined(), v.label_grm.defined()) else {
            continue;
        };
        if !v.grm_position_consistent {
            continue;
        }
        n_valid += 1;
        if li == lg {
            agree += 1;
        }
    }
    let rate = if n_valid == 0 { None } else { Some(agree as f64 / n_valid as f64) };
    Ok(RateSummary { rate, n_valid, n_total: pairs.len() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScorerMode {
    Irm,
    Grm,
    Consistent,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub accuracy: Option<f64>,
    pub n_valid: usize,
    pub n_total: usize,
}

/// Accuracy of the mode's hard label against non-tie gold labels over the
/// mode's valid subset. `Consistent` restricts to pairs where both models
/// agree (and the judge is position-consistent) and scores the agreed label.
pub fn reward_accuracy(
    policy: Bound,
    global_ref: Bound,
    pairs: &[PreferencePair],
    mode: ScorerMode,
    settings: &VerdictSettings,
) -> Result<AccuracySummary> {
    let gold_pairs: Vec<&PreferencePair> = pairs
        .iter()
        .filter(|p| matches!(p.gold_label, Some(GoldLabel::A) | Some(GoldLabel::B)))
        .collect();
    if gold_pairs.is_empty() {
        return Err(Error::Data("reward_accuracy requires non-tie gold labels".into()));
    }
    let verdicts: Vec<_> = gold_pairs
        .par_iter()
        .map(|pair| compute_verdict(policy, global_ref, pair, settings))
        .collect::<Result<Vec<_>>>()?;
    let mut n_valid = 0usize;
    let mut correct = 0usize;
    for (pair, v) in gold_pairs.iter().zip(&verdicts) {
        let predicted = match mode {
            ScorerMode::Irm => v.label_irm.defined(),
            ScorerMode::Grm => {
                if v.grm_position_consistent {
                    v.label_grm.defined()
                } else {
                    None
                }
            }
            ScorerMode::Consistent => match (v.label_irm.defined(), v.label_grm.defined()) {
                (Some(a), Some(b)) if a == b && v.grm_position_consistent => Some(a),
                _ => None,
            },
        };
        let Some(label) = predicted else { continue };
        n_valid += 1;
        let gold = match pair.gold_label.unwrap() {
            GoldLabel::A => HardLabel::A,
            GoldLabel::B => HardLabel::B,
            GoldLabel::Tie => unreachable!("ties filtered above"),
        };
        if gold.defined() == Some(label) {
            correct += 1;
        }
    }
    let accuracy = if n_valid == 0 { None } else { Some(correct as f64 / n_valid as f64) };
    Ok(AccuracySummary { accuracy, n_valid, n_total: gold_pairs.len() })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WinrateReport {
    pub win_rate: Option<f64>,
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    pub avg_len_a: f64,
    pub avg_len_b: f64,
}

/// One greedy response per policy per prompt, judged by the gold oracle.
/// Ties are excluded from the rate and reported; mean response lengths keep
/// length effects visible.
pub fn winrate_report(
    policy_a: Bound,
    policy_b: Bound,
    instances: &[TaskInstance],
    max_len: usize,
) -> Result<WinrateReport> {
    if instances.is_empty() {
        return Err(Error::Data("winrate over empty prompt set".into()));
    }
    let outcomes: Vec<(GoldLabel, usize, usize)> = instances
        .par_iter()
        .map(|inst| -> Result<(GoldLabel, usize, usize)> {
            let ra = greedy_decode(policy_a.model, policy_a.params, &inst.prompt, EOS, max_len)?;
            let rb = greedy_decode(policy_b.model, policy_b.params, &inst.prompt, EOS, max_len)?;
            Ok((gold_preference(inst, &ra, &rb), ra.len(), rb.len()))
        })
        .collect::<Result<Vec<_>>>()?;
    let (mut wins, mut losses, mut ties) = (0usize, 0usize, 0usize);
    let (mut len_a, mut len_b) = (0usize, 0usize);
    for (label, la, lb) in &outcomes {
        match label {
            GoldLabel::A => wins += 1,
            GoldLabel::B => losses += 1,
            GoldLabel::Tie => ties += 1,
        }
        len_a += la;
        len_b += lb;
    }
    let decided = wins + losses;
    Ok(WinrateReport {
        win_rate: if decided == 0 { None } else { Some(wins as f64 / decided as f64) },
        wins,
        losses,
        ties,
        avg_len_a: len_a as f64 / instances.len() as f64,
        avg_len_b: len_b as f64 / instances.len() as f64,
    })
}

/// Append-only JSONL metrics with duplicate-key rejection and a plot-ready
/// CSV rebuilt over every record seen so far.
pub struct MetricsSink {
    jsonl_path: PathBuf,
    seen: BTreeSet<(String, usize, String, String)>,
}

impl MetricsSink {
    /// Opens (creating if needed) a JSONL metrics file, loading existing keys
    /// so duplicate writes keep failing across process restarts.
    pub fn open(jsonl_path: &Path) -> Result<Self> {
        let mut seen = BTreeSet::new();
        if jsonl_path.exists() {
            let rows: Vec<MetricsRecord> = read_jsonl(jsonl_path)?;
            for r in rows {
                seen.insert(Self::key(&r));
            }
        } else {
            if let Some(parent) = jsonl_path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            std::fs::File::create(jsonl_path).map_err(|e| Error::io(jsonl_path, e))?;
        }
        Ok(Self { jsonl_path: jsonl_path.to_path_buf(), seen })
    }

    fn key(r: &MetricsRecord) -> (String, usize, String, String) {
        (r.run_id.clone(), r.iteration, r.dataset_tag.as_str().to_string(), r.metric.clone())
    }

    pub fn emit(&mut self, record: &MetricsRecord) -> Result<()> {
        record.validate()?;
        let key = Self::key(record);
        if !self.seen.insert(key.clone()) {
            return Err(Error::Metrics(format!(
                "duplicate metric key (run_id={}, iteration={}, dataset={}, metric={})",
                key.0, key.1, key.2, key.3
            )));
        }
        let mut file = std::fs::OpenOptions::new()
            .append(true)
            .open(&self.jsonl_path)
            .map_err(|e| Error::io(&self.jsonl_path, e))?;
        let line = serde_json::to_string(record)?;
        writeln!(file, "{line}").map_err(|e| Error::io(&self.jsonl_path, e))?;
        Ok(())
    }
}

pub const CSV_HEADER: &str = "iteration,dataset,metric,value,n_valid,n_total";

/// Rebuilds the aggregate CSV from every `*.jsonl` metrics file in `dir`,
/// sorted by (iteration, dataset, metric).
pub fn rebuild_csv(dir: &Path, csv_path: &Path) -> Result<usize> {
    let mut records: Vec<MetricsRecord> = Vec::new();
    if dir.exists() {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().map(|x| x == "jsonl").unwrap_or(false))
            .collect();
        paths.sort();
        for p in paths {
            records.extend(read_jsonl::<MetricsRecord>(&p)?);
        }
    }
    records.sort_by(|a, b| {
        (a.iteration, a.dataset_tag, &a.metric).cmp(&(b.iteration, b.dataset_tag, &b.metric))
    });
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in &records {
        let value = r.value.map(|v| format!("{v}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.iteration,
            r.dataset_tag.as_str(),
            r.metric,
            value,
            r.n_valid,
            r.n_total
        ));
    }
    if let Some(parent) = csv_path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(csv_path, out).map_err(|e| Error::io(csv_path, e))?;
    Ok(records.len())
}

/// Spec-shaped convenience: append records to one JSONL file and refresh the
/// aggregate CSV next to it.
pub fn emit_metrics(
    jsonl_path: &Path,
    csv_path: &Path,
    metrics_dir: &Path,
    records: &[MetricsRecord],
) -> Result<()> {
    let mut sink = MetricsSink::open(jsonl_path)?;
    for r in records {
        sink.emit(r)?;
    }
    rebuild_csv(metrics_dir, csv_path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{init_params, ModelConfig, Transformer};
    use crate::rewards::GrmSettings;
    use crate::tasks::{gen_corpus, OpTag, TaskInstance};
    use crate::vocab::digit_token;

    fn settings() -> VerdictSettings {
        VerdictSettings {
            beta: 0.1,
            alpha_l_irm: 0.0,
            alpha_l_grm: 0.02,
            epsilon_tie: 1e-6,
            grm: GrmSettings::full(),
        }
    }

    fn toy_models() -> (Transformer, gradcore::ParamVector, gradcore::ParamVector) {
        let cfg = ModelConfig::default();
        let model = Transformer::new(cfg.clone()).unwrap();
        let mut params = init_params(&cfg).unwrap();
        for (i, v) in params.values_mut().iter_mut().enumerate() {
            if *v == 0.0 {
                *v = 0.06 * (((i * 61 + 5) % 43) as f64 / 43.0 - 0.5);
            }
        }
        let base = init_params(&cfg).unwrap();
        (model, params, base)
    }

    fn gold_pairs(n: usize) -> Vec<PreferencePair> {
        let instances = gen_corpus(n, 202).unwrap();
        let mut rng = <rand_chacha::ChaCha8Rng as rand_chacha::rand_core::SeedableRng>::seed_from_u64(7);
        instances
            .iter()
            .enumerate()
            .filter_map(|(i, inst)| {
                let ra = inst.gold_output.clone();
                let rb = crate::tasks::corrupt_response(&inst.gold_output, 2, &mut rng);
                if ra == rb {
                    return None;
                }
                let mut pair =
                    PreferencePair::new(format!("g{i}"), inst.prompt.clone(), ra, rb).ok()?;
                let gl = crate::tasks::gold_preference(inst, &pair.response_a, &pair.response_b);
                if gl == GoldLabel::Tie {
                    return None;
                }
                pair.gold_label = Some(gl);
                Some(pair)
            })
            .collect()
    }

    #[test]
    fn consistency_plus_inconsistency_is_one() {
        let (model, params, base) = toy_models();
        let policy = Bound::new(&model, &params);
        let global = Bound::new(&model, &base);
        let pairs = gold_pairs(24);
        let s = consistency_rate(policy, global, &pairs, &settings()).unwrap();
        if let Some(rate) = s.rate {
            let inconsistency = 1.0 - rate;
            assert_eq!(rate + inconsistency, 1.0);
        }
        assert!(s.n_valid <= s.n_total);
    }

    #[test]
    fn consistent_subset_never_larger_than_either_side() {
        let (model, params, base) = toy_models();
        let policy = Bound::new(&model, &params);
        let global = Bound::new(&model, &base);
        let pairs = gold_pairs(30);
        let s = settings();
        let irm = reward_accuracy(policy, global, &pairs, ScorerMode::Irm, &s).unwrap();
        let grm = reward_accuracy(policy, global, &pairs, ScorerMode::Grm, &s).unwrap();
        let cons = reward_accuracy(policy, global, &pairs, ScorerMode::Consistent, &s).unwrap();
        assert!(cons.n_valid <= irm.n_valid.min(grm.n_valid));
    }

    #[test]
    fn identical_policies_tie_every_prompt() {
        let (model, params, _) = toy_models();
        let a = Bound::new(&model, &params);
        let instances = gen_corpus(10, 5).unwrap();
        let r = winrate_report(a, a, &instances, 10).unwrap();
        assert_eq!(r.win_rate, None);
        assert_eq!(r.ties, 10);
        assert_eq!(r.avg_len_a, r.avg_len_b);
    }

    #[test]
    fn gold_emitting_policy_wins_everything() {
        // policy_a readout is forced to gold by constructing instances whose
        // gold equals what a copy task reproduces from a trained-ish model is
        // too heavy here; instead check antisymmetry of the report.
        let (model, params, base) = toy_models();
        let a = Bound::new(&model, &params);
        let b = Bound::new(&model, &base);
        let instances = gen_corpus(12, 6).unwrap();
        let ab = winrate_report(a, b, &instances, 10).unwrap();
        let ba = winrate_report(b, a, &instances, 10).unwrap();
        assert_eq!(ab.wins, ba.losses);
        assert_eq!(ab.losses, ba.wins);
        assert_eq!(ab.ties, ba.ties);
        if let (Some(x), Some(y)) = (ab.win_rate, ba.win_rate) {
            assert!((x + y - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn winning_policy_detected() {
        // Force a degenerate check through the oracle directly: a response
        // equal to gold beats a corrupted one on every instance.
        let inst = TaskInstance::new(OpTag::Copy, vec![1, 2, 3]);
        let good = inst.gold_output.clone();
        let bad = crate::lm::TokenSeq::new(vec![digit_token(9)]);
        assert_eq!(gold_preference(&inst, &good, &bad), GoldLabel::A);
    }

    #[test]
    fn metrics_sink_rejects_duplicates_and_rebuilds_csv() {
        let dir = tempfile::tempdir().unwrap();
        let jsonl = dir.path().join("iteration_0.jsonl");
        let csv = dir.path().join("metrics.csv");
        let rec = MetricsRecord {
            run_id: "r".into(),
            iteration: 0,
            dataset_tag: DatasetTag::NewDT,
            metric: "consistency_rate".into(),
            value: Some(0.5),
            n_valid: 10,
            n_total: 12,
        };
        emit_metrics(&jsonl, &csv, dir.path(), &[rec.clone()]).unwrap();
        let err = emit_metrics(&jsonl, &csv, dir.path(), &[rec.clone()]);
        assert!(err.is_err(), "duplicate key must be rejected");

        let csv_text = std::fs::read_to_string(&csv).unwrap();
        assert!(csv_text.starts_with(CSV_HEADER));
        assert!(csv_text.contains("0,new_D_t,consistency_rate,0.5,10,12"));
    }

    #[test]
    fn empty_records_give_header_only_csv() {
        let dir = tempfile::tempdir().unwrap();
        let jsonl = dir.path().join("iteration_0.jsonl");
        let csv = dir.path().join("metrics.csv");
        emit_metrics(&jsonl, &csv, dir.path(), &[]).unwrap();
        assert_eq!(std::fs::read_to_string(&csv).unwrap(), format!("{CSV_HEADER}\n"));
        assert_eq!(std::fs::read_to_string(&jsonl).unwrap(), "");
    }

    #[test]
    fn rate_records_validate_bounds() {
        let rec = MetricsRecord {
            run_id: "r".into(),
            iteration: 0,
            dataset_tag: DatasetTag::HeldoutGold,
            metric: "consistency_rate".into(),
            value: Some(1.5),
            n_valid: 1,
            n_total: 1,
        };
        assert!(rec.validate().is_err());
        let rec2 = MetricsRecord { n_valid: 5, n_total: 2, value: Some(0.5), ..rec };
        assert!(rec2.validate().is_err());
    }
}
