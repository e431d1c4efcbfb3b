//! Scratch probe: two-phase SFT (all strata, then judge-only polish) and its
//! effect on self-generated pair validity.

use std::collections::HashSet;
use std::time::Instant;

use scir::lm::{greedy_decode, init_params, quantize_to_f32, Bound, ModelConfig, Transformer};
use scir::losses::LossConfig;
use scir::rewards::compute_verdict;
use scir::selfreward::{
    form_pairs, generate_responses, train_sft, LabelingMode, SftTrainOptions, TrainConfig,
};
use scir::tasks::{build_sft_dataset, gen_corpus, gold_score, ExampleKind, SftDataConfig};
use scir::vocab::EOS;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let main_epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(40);
    let polish_epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(8);
    let polish_lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(5e-4);

    let cfg = ModelConfig::default();
    let model = Transformer::new(cfg.clone()).unwrap();
    println!("params={} main_epochs={main_epochs} polish_epochs={polish_epochs} polish_lr={polish_lr}", model.param_count());

    let data = build_sft_dataset(&SftDataConfig::default(), 11, &HashSet::new()).unwrap();
    let t0 = Instant::now();
    let opts = SftTrainOptions {
        epochs: main_epochs,
        learning_rate: 2.5e-3,
        weight_decay: 0.0,
        batch_size: 32,
        seed: 5,
    };
    let (params, losses) = train_sft(&model, init_params(&cfg).unwrap(), &data, &opts).unwrap();
    println!("[{:?}] main sft: last losses {:?}", t0.elapsed(), &losses[losses.len().saturating_sub(3)..]);

    let judge_only: Vec<_> = data
        .iter()
        .filter(|e| e.kind == ExampleKind::JudgePair)
        .cloned()
        .collect();
    let polish_opts = SftTrainOptions {
        epochs: polish_epochs,
        learning_rate: polish_lr,
        weight_decay: 0.0,
        batch_size: 32,
        seed: 6,
    };
    let mut params = if polish_epochs > 0 {
        let (p, jlosses) = train_sft(&model, params, &judge_only, &polish_opts).unwrap();
        println!("[{:?}] judge polish: losses {:?}", t0.elapsed(), jlosses.iter().map(|l| (l*100.0).round()/100.0).collect::<Vec<_>>());
        p
    } else {
        params
    };
    quantize_to_f32(&mut params);

    // Task quality.
    let probe = gen_corpus(150, 999).unwrap();
    let mut exact = 0;
    let mut score = 0.0;
    for inst in &probe {
        let r = greedy_decode(&model, &params, &inst.prompt, EOS, 10).unwrap();
        if r == inst.gold_output {
            exact += 1;
        }
        score += gold_score(inst, &r);
    }
    println!("task: exact {exact}/150 mean_score {:.3}", score / 150.0);

    // Self-pair validity at this checkpoint.
    let base = init_params(&cfg).unwrap();
    let train = TrainConfig::default();
    let loss = LossConfig::default();
    let vs = train.verdict_settings(&loss);
    let pool = gen_corpus(256, 31415).unwrap();
    let sets = generate_responses(&model, &params, &pool, 4, 0.7, 0.9, 10, 2718).unwrap();
    let policy = Bound::new(&model, &params);
    let global = Bound::new(&model, &base);
    let (pairs, skipped) =
        form_pairs(&pool, &sets, LabelingMode::Scir, policy, global, 0.1, 0.0, 99, 0).unwrap();
    let mut valid = 0;
    let mut agree = 0;
    let mut grm_conf_max: f64 = 0.0;
    let mut grm_conf_sum = 0.0;
    let mut irm_conf_sum = 0.0;
    for pair in &pairs {
        let v = compute_verdict(policy, global, pair, &vs).unwrap();
        grm_conf_max = grm_conf_max.max(v.p_grm.max(1.0 - v.p_grm));
        grm_conf_sum += v.p_grm.max(1.0 - v.p_grm);
        irm_conf_sum += v.p_irm.max(1.0 - v.p_irm);
        if v.grm_position_consistent {
            if let (Some(a), Some(b)) = (v.label_irm.defined(), v.label_grm.defined()) {
                valid += 1;
                if a == b {
                    agree += 1;
                }
            }
        }
    }
    println!(
        "self pairs: formed {} skipped {skipped} valid {valid} agree {agree} mean_grm_conf {:.3} max {:.3} mean_irm_conf {:.3}",
        pairs.len(),
        grm_conf_sum / pairs.len() as f64,
        grm_conf_max,
        irm_conf_sum / pairs.len() as f64,
    );
}
