//! End-to-end run orchestration: data preparation, the SFT checkpoint, and
//! the generate -> pair -> label -> train iteration loop with persisted
//! checkpoints, datasets and metrics.

use std::collections::HashSet;
use std::path::Path;

use gradcore::{value_and_gradient, Expr, ParamVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{
    consistency_rate, emit_metrics, reward_accuracy, winrate_report, AccuracySummary, DatasetTag,
    MetricsRecord, RateSummary, ScorerMode, WinrateReport,
};
use crate::lm::{
    blob_sha256, init_params, load_checkpoint, quantize_to_f32, sample_response, save_checkpoint,
    Bound, Checkpoint, PolicyModel, TokenSeq, Transformer,
};
use crate::losses::{dpo_loss_from, pointwise_judge_score, scir_batch_loss, LossConfig, ScirStepConfig};
use crate::rewards::{
    implicit_reward, irm_preference, GoldLabel, PairRefLp, PrefLabel, PreferencePair, RefChoice,
    VerdictSettings,
};
use crate::selfreward::{
    derive_seed, log_line, seed_tags, LabelingMode, RunPaths, SftConfig, SftTrainOptions,
    TrainConfig,
};
use crate::tasks::{
    build_sft_dataset, gen_corpus, gen_corpus_excluding, gold_preference, gold_score, read_jsonl,
    write_jsonl, SftExample, TaskInstance,
};
use crate::vocab::EOS;

/// Everything a command needs to act on one run directory.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub run_id: String,
    pub model: Transformer,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub sft: SftConfig,
    pub mode: LabelingMode,
    pub paths: RunPaths,
}

/// JSONL row for persisted preference pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairRecord {
    pub pair_id: String,
    pub prompt: TokenSeq,
    pub response_a: TokenSeq,
    pub response_b: TokenSeq,
    pub gold_label: Option<GoldLabel>,
    pub agreed_label: Option<PrefLabel>,
}

impl PairRecord {
    pub fn from_pair(p: &PreferencePair) -> Self {
        Self {
            pair_id: p.id.clone(),
            prompt: p.prompt.clone(),
            response_a: p.response_a.clone(),
            response_b: p.response_b.clone(),
            gold_label: p.gold_label,
            agreed_label: p.agreed_label,
        }
    }

    pub fn into_pair(self) -> Result<PreferencePair> {
        let mut pair =
            PreferencePair::new(self.pair_id, self.prompt, self.response_a, self.response_b)?;
        pair.gold_label = self.gold_label;
        pair.agreed_label = self.agreed_label;
        Ok(pair)
    }
}

/// Writes the SFT corpus and both held-out sets (prompts for win-rate,
/// gold-labeled pairs for reward accuracy). Held-out prompts never appear in
/// the SFT corpus or in any iteration pool.
pub fn prepare_data(ctx: &RunContext) -> Result<()> {
    ctx.train.validate()?;
    let master = ctx.train.master_seed;

    let heldout_prompts = gen_corpus(
        ctx.train.heldout_prompts,
        derive_seed(master, seed_tags::HELDOUT_PROMPTS, 0),
    )?;
    let mut exclude: HashSet<TokenSeq> =
        heldout_prompts.iter().map(|i| i.prompt.clone()).collect();

    let pair_instances = gen_corpus_excluding(
        ctx.train.heldout_pairs,
        derive_seed(master, seed_tags::HELDOUT_PAIRS, 0),
        &exclude,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master, seed_tags::HELDOUT_PAIRS, 1));
    let mut heldout_pairs = Vec::with_capacity(pair_instances.len());
    for (i, inst) in pair_instances.iter().enumerate() {
        let mut attempt = 0;
        let pair = loop {
            attempt += 1;
            if attempt > 64 {
                return Err(Error::Data("failed to build a non-tie held-out pair".into()));
            }
            let (ra, rb) = crate::tasks::sample_response_pair(inst, &mut rng);
            if ra == rb || ra.is_empty() || rb.is_empty() {
                continue;
            }
            let gold = gold_preference(inst, &ra, &rb);
            if gold == GoldLabel::Tie {
                continue;
            }
            let mut p = PreferencePair::new(format!("h{i:04}"), inst.prompt.clone(), ra, rb)?;
            p.gold_label = Some(gold);
            break p;
        };
        heldout_pairs.push(pair);
        exclude.insert(inst.prompt.clone());
    }

    let sft = build_sft_dataset(&ctx.sft.data, derive_seed(master, seed_tags::SFT, 0), &exclude)?;

    write_jsonl(&ctx.paths.heldout_prompts_jsonl(), &heldout_prompts)?;
    let pair_rows: Vec<PairRecord> = heldout_pairs.iter().map(PairRecord::from_pair).collect();
    write_jsonl(&ctx.paths.heldout_pairs_jsonl(), &pair_rows)?;
    write_jsonl(&ctx.paths.sft_jsonl(), &sft)?;
    log_line(
        &ctx.paths.run_log(),
        &format!(
            "gen-data: sft={} heldout_prompts={} heldout_pairs={}",
            sft.len(),
            heldout_prompts.len(),
            heldout_pairs.len()
        ),
    )?;
    Ok(())
}

/// Initializes the base model (the run-constant global reference), trains the
/// SFT checkpoint on the prepared corpus, and persists both.
pub fn train_sft_checkpoint(ctx: &RunContext) -> Result<(Checkpoint, Checkpoint)> {
    let sft_path = ctx.paths.sft_jsonl();
    if !sft_path.exists() {
        return Err(Error::Config(format!(
            "missing SFT corpus {}; run gen-data first",
            sft_path.display()
        )));
    }
    let examples: Vec<SftExample> = read_jsonl(&sft_path)?;

    let mut base_params = init_params(ctx.model.config())?;
    quantize_to_f32(&mut base_params);
    let base = Checkpoint::new(ctx.model.config().clone(), "base", base_params.clone());
    save_checkpoint(&base, &ctx.paths.checkpoint_stem("base"))?;

    let opts = SftTrainOptions {
        epochs: ctx.sft.epochs,
        learning_rate: ctx.sft.learning_rate,
        weight_decay: ctx.sft.weight_decay,
        batch_size: ctx.sft.batch_size,
        seed: derive_seed(ctx.train.master_seed, seed_tags::SFT, 1),
    };
    let (mut tuned, epoch_losses) = super::sft::train_sft(&ctx.model, base_params, &examples, &opts)?;
    quantize_to_f32(&mut tuned);
    let m0 = Checkpoint::new(ctx.model.config().clone(), "M0", tuned);
    save_checkpoint(&m0, &ctx.paths.checkpoint_stem("M0"))?;
    log_line(
        &ctx.paths.run_log(),
        &format!("sft: examples={} epoch_losses={epoch_losses:?}", examples.len()),
    )?;
    Ok((base, m0))
}

/// k sampled responses per prompt, deterministic per (seed, prompt, slot) and
/// independent of worker count.
pub fn generate_responses(
    model: &Transformer,
    params: &ParamVector,
    prompts: &[TaskInstance],
    k: usize,
    temperature: f64,
    top_p: f64,
    max_len: usize,
    seed: u64,
) -> Result<Vec<Vec<TokenSeq>>> {
    prompts
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            (0..k)
                .map(|j| {
                    let item = (i * k + j) as u64;
                    let mut rng =
                        ChaCha8Rng::seed_from_u64(derive_seed(seed, seed_tags::GENERATE, item));
                    sample_response(
                        model, params, &inst.prompt, EOS, temperature, top_p, max_len, &mut rng,
                    )
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect()
}

fn distinct_nonempty(responses: &[TokenSeq]) -> Vec<TokenSeq> {
    let mut seen = HashSet::new();
    responses
        .iter()
        .filter(|r| !r.is_empty())
        .filter(|r| seen.insert((*r).clone()))
        .cloned()
        .collect()
}

/// Scores one response under the mode's scorer (baselines only).
fn baseline_score(
    mode: LabelingMode,
    policy: Bound,
    global_ref: Bound,
    inst: &TaskInstance,
    response: &TokenSeq,
    beta: f64,
    alpha_l_irm: f64,
) -> Result<f64> {
    match mode {
        LabelingMode::SrlmJudgePointwise => pointwise_judge_score(policy, &inst.prompt, response),
        LabelingMode::SrlmIrm => {
            implicit_reward(policy, global_ref, &inst.prompt, response, beta, alpha_l_irm)
        }
        LabelingMode::ExternalGold => Ok(gold_score(inst, response)),
        LabelingMode::Scir => unreachable!("scir pairs are sampled, not scored"),
    }
}

/// Forms one preference pair per prompt. Unlabeled random two-of-k for the
/// consistency mode; best-vs-worst under the mode's scorer for baselines,
/// skipping prompts whose top and bottom scores tie. Gold labels are attached
/// to every pair for evaluation.
#[allow(clippy::too_many_arguments)]
pub fn form_pairs(
    instances: &[TaskInstance],
    response_sets: &[Vec<TokenSeq>],
    mode: LabelingMode,
    policy: Bound,
    global_ref: Bound,
    beta: f64,
    alpha_l_irm: f64,
    seed: u64,
    iteration: usize,
) -> Result<(Vec<PreferencePair>, usize)> {
    assert_eq!(instances.len(), response_sets.len());
    let formed: Vec<Option<PreferencePair>> = instances
        .par_iter()
        .zip(response_sets)
        .enumerate()
        .map(|(i, (inst, responses))| -> Result<Option<PreferencePair>> {
            let candidates = distinct_nonempty(responses);
            if candidates.len() < 2 {
                return Ok(None);
            }
            let (ra, rb) = match mode {
                LabelingMode::Scir => {
                    let mut rng =
                        ChaCha8Rng::seed_from_u64(derive_seed(seed, seed_tags::PAIR, i as u64));
                    let first = rng.random_range(0..candidates.len());
                    let mut second = rng.random_range(0..candidates.len() - 1);
                    if second >= first {
                        second += 1;
                    }
                    (candidates[first].clone(), candidates[second].clone())
                }
                _ => {
                    let scores: Vec<f64> = candidates
                        .iter()
                        .map(|r| baseline_score(mode, policy, global_ref, inst, r, beta, alpha_l_irm))
                        .collect::<Result<Vec<_>>>()?;
                    let mut best = 0;
                    let mut worst = 0;
                    for (j, &s) in scores.iter().enumerate() {
                        if s > scores[best] {
                            best = j;
                        }
                        if s < scores[worst] {
                            worst = j;
                        }
                    }
                    if scores[best] == scores[worst] {
                        return Ok(None);
                    }
                    (candidates[best].clone(), candidates[worst].clone())
                }
            };
            let mut pair =
                PreferencePair::new(format!("t{iteration}_p{i:04}"), inst.prompt.clone(), ra, rb)?;
            pair.gold_label = Some(gold_preference(inst, &pair.response_a, &pair.response_b));
            Ok(Some(pair))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut pairs = Vec::with_capacity(formed.len());
    let mut skipped = 0;
    for p in formed {
        match p {
            Some(p) => pairs.push(p),
            None => skipped += 1,
        }
    }
    Ok((pairs, skipped))
}

/// Assigns training labels per mode. Consistency-mode pairs stay unlabeled;
/// baseline pairs with undefined or tied scores are dropped.
pub fn label_pairs(
    pairs: Vec<PreferencePair>,
    mode: LabelingMode,
    policy: Bound,
    global_ref: Bound,
    settings: &VerdictSettings,
) -> Result<(Vec<PreferencePair>, usize)> {
    if mode == LabelingMode::Scir {
        return Ok((pairs, 0));
    }
    let labeled: Vec<Option<PreferencePair>> = pairs
        .into_par_iter()
        .map(|mut pair| -> Result<Option<PreferencePair>> {
            let label = match mode {
                LabelingMode::Scir => unreachable!(),
                LabelingMode::SrlmJudgePointwise => {
                    let sa = pointwise_judge_score(policy, &pair.prompt, &pair.response_a)?;
                    let sb = pointwise_judge_score(policy, &pair.prompt, &pair.response_b)?;
                    if sa > sb {
                        Some(PrefLabel::A)
                    } else if sb > sa {
                        Some(PrefLabel::B)
                    } else {
                        None
                    }
                }
                LabelingMode::SrlmIrm => {
                    let p = irm_preference(
                        policy,
                        global_ref,
                        &pair,
                        settings.beta,
                        settings.alpha_l_irm,
                    )?;
                    crate::rewards::hard_label(p, settings.epsilon_tie).defined()
                }
                LabelingMode::ExternalGold => match pair.gold_label {
                    Some(GoldLabel::A) => Some(PrefLabel::A),
                    Some(GoldLabel::B) => Some(PrefLabel::B),
                    _ => None,
                },
            };
            Ok(label.map(|l| {
                pair.agreed_label = Some(l);
                pair
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(labeled.len());
    let mut dropped = 0;
    for p in labeled {
        match p {
            Some(p) => out.push(p),
            None => dropped += 1,
        }
    }
    Ok((out, dropped))
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainStats {
    pub steps: usize,
    pub gate_open: usize,
    pub gate_total: usize,
    pub sampled_loss: Vec<f64>,
}

impl TrainStats {
    pub fn gate_rate(&self) -> Option<f64> {
        if self.gate_total == 0 {
            None
        } else {
            Some(self.gate_open as f64 / self.gate_total as f64)
        }
    }
}

/// Trains for the configured epochs with moment-based adaptive updates and a
/// cosine-decayed learning rate. Consistency mode rebuilds verdicts from the
/// current parameters every step; baseline modes run plain preference
/// optimization against the local reference.
#[allow(clippy::too_many_arguments)]
pub fn run_training_epochs(
    model: &Transformer,
    mut params: ParamVector,
    pairs: &[PreferencePair],
    ref_lps: &[PairRefLp],
    mode: LabelingMode,
    step_cfg: &ScirStepConfig,
    train: &TrainConfig,
    seed: u64,
) -> Result<(ParamVector, TrainStats)> {
    if pairs.is_empty() {
        return Err(Error::Data("no preference pairs to train on".into()));
    }
    assert_eq!(pairs.len(), ref_lps.len());
    let mut opt = super::optimizer::AdamW::new(params.len(), train.weight_decay);
    let steps_per_epoch = pairs.len().div_ceil(train.batch_size);
    let total_steps = steps_per_epoch * train.epochs_per_iteration;
    let mut stats = TrainStats { steps: 0, gate_open: 0, gate_total: 0, sampled_loss: Vec::new() };

    for epoch in 0..train.epochs_per_iteration {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        {
            use rand::seq::SliceRandom;
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(seed, seed_tags::EPOCH, epoch as u64));
            order.shuffle(&mut rng);
        }
        for (b, chunk) in order.chunks(train.batch_size).enumerate() {
            let step_index = epoch * steps_per_epoch + b;
            let lr = super::optimizer::cosine_lr(train.learning_rate, step_index, total_steps);
            let (loss_value, grad) = match mode {
                LabelingMode::Scir => {
                    let batch: Vec<(PreferencePair, PairRefLp)> =
                        chunk.iter().map(|&i| (pairs[i].clone(), ref_lps[i])).collect();
                    let out = scir_batch_loss(model, &batch, &params, step_cfg).map_err(|e| {
                        Error::Training(format!("iteration step {step_index}: {e}"))
                    })?;
                    stats.gate_total += out.signals.len();
                    stats.gate_open += out.signals.iter().filter(|s| s.gate_open).count();
                    value_and_gradient(&out.loss, &params)
                        .map_err(|e| Error::Training(format!("step {step_index}: {e}")))?
                }
                _ => {
                    let mut terms = Vec::with_capacity(chunk.len());
                    for &i in chunk {
                        let pair = &pairs[i];
                        let agreed = pair.agreed_label.ok_or_else(|| {
                            Error::Training(format!("pair {} lacks a training label", pair.id))
                        })?;
                        let lp_w = model.logprob_expr(&pair.prompt, pair.response(agreed))?;
                        let lp_l =
                            model.logprob_expr(&pair.prompt, pair.response(agreed.flipped()))?;
                        terms.push(dpo_loss_from(
                            &lp_w,
                            &lp_l,
                            ref_lps[i].of(RefChoice::Local, agreed),
                            ref_lps[i].of(RefChoice::Local, agreed.flipped()),
                            step_cfg.loss.beta,
                        ));
                    }
                    let loss = Expr::mean(terms);
                    value_and_gradient(&loss, &params)
                        .map_err(|e| Error::Training(format!("step {step_index}: {e}")))?
                }
            };
            if b == 0 {
                stats.sampled_loss.push(loss_value);
            }
            opt.step(&mut params, &grad, lr)?;
            stats.steps += 1;
        }
    }
    Ok((params, stats))
}

#[derive(Debug, Clone, Serialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub consistency_new: RateSummary,
    pub consistency_trained: Option<RateSummary>,
    pub accuracy_irm: AccuracySummary,
    pub accuracy_grm: AccuracySummary,
    pub accuracy_consistent: AccuracySummary,
    pub winrate_vs_m0: WinrateReport,
    pub gate_rate: Option<f64>,
    pub pairs_formed: usize,
    pub pairs_trained: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunOutcome {
    pub iterations: Vec<IterationMetrics>,
    /// (tag, sha256 of the f32 blob) for every checkpoint in lineage order.
    pub checkpoints: Vec<(String, String)>,
}

fn load_heldout(ctx: &RunContext) -> Result<(Vec<TaskInstance>, Vec<PreferencePair>)> {
    let prompts_path = ctx.paths.heldout_prompts_jsonl();
    let pairs_path = ctx.paths.heldout_pairs_jsonl();
    if !prompts_path.exists() || !pairs_path.exists() {
        return Err(Error::Config("missing held-out data; run gen-data first".into()));
    }
    let prompts: Vec<TaskInstance> = read_jsonl(&prompts_path)?;
    let rows: Vec<PairRecord> = read_jsonl(&pairs_path)?;
    let pairs = rows.into_iter().map(PairRecord::into_pair).collect::<Result<Vec<_>>>()?;
    Ok((prompts, pairs))
}

fn measure(
    ctx: &RunContext,
    iteration: usize,
    policy: Bound,
    global_ref: Bound,
    new_pairs: &[PreferencePair],
    prev_pairs: Option<&[PreferencePair]>,
    heldout_prompts: &[TaskInstance],
    heldout_pairs: &[PreferencePair],
    m0_params: &ParamVector,
) -> Result<IterationMetrics> {
    let vs = ctx.train.verdict_settings(&ctx.loss);
    let consistency_new = consistency_rate(policy, global_ref, new_pairs, &vs)?;
    let consistency_trained = match prev_pairs {
        Some(pp) if !pp.is_empty() => Some(consistency_rate(policy, global_ref, pp, &vs)?),
        _ => None,
    };
    let accuracy_irm = reward_accuracy(policy, global_ref, heldout_pairs, ScorerMode::Irm, &vs)?;
    let accuracy_grm = reward_accuracy(policy, global_ref, heldout_pairs, ScorerMode::Grm, &vs)?;
    let accuracy_consistent =
        reward_accuracy(policy, global_ref, heldout_pairs, ScorerMode::Consistent, &vs)?;
    let m0_bound = Bound::new(policy.model, m0_params);
    let winrate_vs_m0 =
        winrate_report(policy, m0_bound, heldout_prompts, ctx.train.max_response_len)?;
    Ok(IterationMetrics {
        iteration,
        consistency_new,
        consistency_trained,
        accuracy_irm,
        accuracy_grm,
        accuracy_consistent,
        winrate_vs_m0,
        gate_rate: None,
        pairs_formed: new_pairs.len(),
        pairs_trained: 0,
    })
}

fn metric_records(ctx: &RunContext, m: &IterationMetrics) -> Vec<MetricsRecord> {
    let mk = |dataset_tag, metric: &str, value, n_valid, n_total| MetricsRecord {
        run_id: ctx.run_id.clone(),
        iteration: m.iteration,
        dataset_tag,
        metric: metric.to_string(),
        value,
        n_valid,
        n_total,
    };
    let mut records = vec![
        mk(
            DatasetTag::NewDT,
            "consistency_rate",
            m.consistency_new.rate,
            m.consistency_new.n_valid,
            m.consistency_new.n_total,
        ),
        mk(
            DatasetTag::NewDT,
            "inconsistency_rate",
            m.consistency_new.rate.map(|r| 1.0 - r),
            m.consistency_new.n_valid,
            m.consistency_new.n_total,
        ),
    ];
    if let Some(tr) = &m.consistency_trained {
        records.push(mk(
            DatasetTag::TrainedDPrev,
            "consistency_rate",
            tr.rate,
            tr.n_valid,
            tr.n_total,
        ));
        records.push(mk(
            DatasetTag::TrainedDPrev,
            "inconsistency_rate",
            tr.rate.map(|r| 1.0 - r),
            tr.n_valid,
            tr.n_total,
        ));
    }
    for (name, acc) in [
        ("reward_accuracy_irm", &m.accuracy_irm),
        ("reward_accuracy_grm", &m.accuracy_grm),
        ("reward_accuracy_consistent", &m.accuracy_consistent),
    ] {
        records.push(mk(DatasetTag::HeldoutGold, name, acc.accuracy, acc.n_valid, acc.n_total));
    }
    let w = &m.winrate_vs_m0;
    let decided = w.wins + w.losses;
    records.push(mk(
        DatasetTag::HeldoutGold,
        "winrate_vs_m0",
        w.win_rate,
        decided,
        decided + w.ties,
    ));
    records.push(mk(
        DatasetTag::HeldoutGold,
        "avg_len_policy",
        Some(w.avg_len_a),
        decided + w.ties,
        decided + w.ties,
    ));
    records.push(mk(
        DatasetTag::HeldoutGold,
        "avg_len_m0",
        Some(w.avg_len_b),
        decided + w.ties,
        decided + w.ties,
    ));
    if let Some(g) = m.gate_rate {
        records.push(mk(DatasetTag::NewDT, "gate_rate", Some(g), m.pairs_trained, m.pairs_formed));
    }
    records.push(mk(
        DatasetTag::NewDT,
        "pairs_trained",
        Some(m.pairs_trained as f64),
        m.pairs_trained,
        m.pairs_formed,
    ));
    records
}

/// The full iteration protocol. For each iteration: snapshot the local
/// reference, generate responses, form pairs, measure the internal reward
/// models on new and previously trained data, label per mode, train, and
/// persist the next checkpoint. A final measurement pass runs with the last
/// checkpoint on freshly generated pairs.
pub fn run_iterations(ctx: &RunContext) -> Result<RunOutcome> {
    ctx.train.validate()?;
    ctx.loss.validate()?;
    let (heldout_prompts, heldout_pairs) = load_heldout(ctx)?;

    let base = load_checkpoint(&ctx.paths.checkpoint_stem("base")).map_err(|_| {
        Error::Config("missing base checkpoint; run sft first".into())
    })?;
    let m0 = load_checkpoint(&ctx.paths.checkpoint_stem("M0")).map_err(|_| {
        Error::Config("missing M0 checkpoint; run sft first".into())
    })?;
    if base.config != *ctx.model.config() || m0.config != *ctx.model.config() {
        return Err(Error::Config("checkpoint config does not match run config".into()));
    }
    let global_params = base.params.clone();
    let m0_params = m0.params.clone();
    let mut params = m0.params;

    let mut checkpoints = vec![
        ("base".to_string(), blob_sha256(&global_params)),
        ("M0".to_string(), blob_sha256(&params)),
    ];
    let mut iterations = Vec::new();
    let mut prev_pairs: Option<Vec<PreferencePair>> = None;
    let master = ctx.train.master_seed;

    let exclude: HashSet<TokenSeq> = heldout_prompts
        .iter()
        .map(|i| i.prompt.clone())
        .chain(heldout_pairs.iter().map(|p| p.prompt.clone()))
        .collect();

    let step_cfg = ctx.train.step_config(&ctx.loss);
    let vs = ctx.train.verdict_settings(&ctx.loss);

    for t in 0..=ctx.train.iterations {
        let final_pass = t == ctx.train.iterations;
        let local_params = params.clone();
        let policy = Bound::new(&ctx.model, &params);
        let global = Bound::new(&ctx.model, &global_params);
        let local = Bound::new(&ctx.model, &local_params);

        // Fresh prompt pool and self-generated pairs for this iteration.
        let pool = gen_corpus_excluding(
            ctx.train.prompts_per_iteration,
            derive_seed(master, seed_tags::POOL, t as u64),
            &exclude,
        )?;
        let response_sets = generate_responses(
            &ctx.model,
            &params,
            &pool,
            ctx.train.k_responses,
            ctx.train.temperature,
            ctx.train.top_p,
            ctx.train.max_response_len,
            derive_seed(master, seed_tags::GENERATE, t as u64),
        )?;
        let (pairs, skipped) = form_pairs(
            &pool,
            &response_sets,
            ctx.mode,
            policy,
            global,
            ctx.loss.beta,
            vs.alpha_l_irm,
            derive_seed(master, seed_tags::PAIR, t as u64),
            t,
        )?;

        let mut metrics = measure(
            ctx,
            t,
            policy,
            global,
            &pairs,
            prev_pairs.as_deref(),
            &heldout_prompts,
            &heldout_pairs,
            &m0_params,
        )?;

        if final_pass {
            let rows: Vec<PairRecord> = pairs.iter().map(PairRecord::from_pair).collect();
            write_jsonl(&ctx.paths.pairs_jsonl(t), &rows)?;
            emit_metrics(
                &ctx.paths.final_metrics(),
                &ctx.paths.metrics_csv(),
                &ctx.paths.metrics_dir(),
                &metric_records(ctx, &metrics),
            )?;
            log_line(
                &ctx.paths.run_log(),
                &format!(
                    "final: consistency_new={:?} winrate={:?}",
                    metrics.consistency_new.rate, metrics.winrate_vs_m0.win_rate
                ),
            )?;
            iterations.push(metrics);
            break;
        }

        let (labeled, dropped) = label_pairs(pairs, ctx.mode, policy, global, &vs)?;
        if labeled.is_empty() {
            return Err(Error::Training(format!(
                "iteration {t}: every pair was dropped during labeling"
            )));
        }
        let rows: Vec<PairRecord> = labeled.iter().map(PairRecord::from_pair).collect();
        write_jsonl(&ctx.paths.pairs_jsonl(t), &rows)?;

        let ref_lps: Vec<PairRefLp> = labeled
            .par_iter()
            .map(|pair| PairRefLp::compute(local, global, pair))
            .collect::<Result<Vec<_>>>()?;

        let trained = run_training_epochs(
            &ctx.model,
            params,
            &labeled,
            &ref_lps,
            ctx.mode,
            &step_cfg,
            &ctx.train,
            derive_seed(master, seed_tags::EPOCH, t as u64),
        );
        let (new_params, stats) = match trained {
            Ok(ok) => ok,
            Err(e) => {
                let dump = serde_json::json!({
                    "iteration": t,
                    "error": e.to_string(),
                    "pairs": labeled.len(),
                });
                let _ = std::fs::create_dir_all(ctx.paths.logs_dir());
                let _ = std::fs::write(
                    ctx.paths.abort_dump(),
                    serde_json::to_string_pretty(&dump).unwrap_or_default(),
                );
                return Err(e);
            }
        };
        params = new_params;
        quantize_to_f32(&mut params);
        let tag = format!("M{}", t + 1);
        let ckpt = Checkpoint::new(ctx.model.config().clone(), tag.clone(), params.clone());
        let manifest = save_checkpoint(&ckpt, &ctx.paths.checkpoint_stem(&tag))?;
        checkpoints.push((tag.clone(), manifest.sha256));

        metrics.gate_rate = stats.gate_rate();
        metrics.pairs_trained = labeled.len();
        emit_metrics(
            &ctx.paths.iteration_metrics(t),
            &ctx.paths.metrics_csv(),
            &ctx.paths.metrics_dir(),
            &metric_records(ctx, &metrics),
        )?;
        log_line(
            &ctx.paths.run_log(),
            &format!(
                "iteration {t}: mode={} pairs={} skipped={skipped} dropped={dropped} steps={} gate={:?} consistency_new={:?} winrate={:?}",
                ctx.mode.as_str(),
                labeled.len(),
                stats.steps,
                stats.gate_rate(),
                metrics.consistency_new.rate,
                metrics.winrate_vs_m0.win_rate,
            ),
        )?;

        iterations.push(metrics);
        prev_pairs = Some(labeled);
    }

    Ok(RunOutcome { iterations, checkpoints })
}

/// Loads every persisted checkpoint tag in lineage order.
pub fn checkpoint_lineage(paths: &RunPaths, iterations: usize) -> Result<Vec<Checkpoint>> {
    let mut out = vec![
        load_checkpoint(&paths.checkpoint_stem("base"))?,
        load_checkpoint(&paths.checkpoint_stem("M0"))?,
    ];
    for t in 1..=iterations {
        let stem = paths.checkpoint_stem(&format!("M{t}"));
        if stem.with_extension("bin").exists() {
            out.push(load_checkpoint(&stem)?);
        }
    }
    Ok(out)
}

/// Reads a persisted pair dataset.
pub fn load_pairs(path: &Path) -> Result<Vec<PreferencePair>> {
    let rows: Vec<PairRecord> = read_jsonl(path)?;
    rows.into_iter().map(PairRecord::into_pair).collect()
}
