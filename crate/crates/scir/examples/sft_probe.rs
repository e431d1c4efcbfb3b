//! Scratch probe: SFT speed/quality across model sizes and SFT settings.

use std::collections::HashSet;
use std::time::Instant;

use scir::lm::{greedy_decode, init_params, quantize_to_f32, Bound, ModelConfig, Transformer};
use scir::rewards::GrmSettings;
use scir::selfreward::{train_sft, SftTrainOptions};
use scir::tasks::{build_sft_dataset, gen_corpus, gold_score, SftDataConfig};
use scir::vocab::EOS;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let dim: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(32);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(10);
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1.5e-3);
    let judge_pairs: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(500);
    let task_demos: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(2000);

    let cfg = ModelConfig {
        vocab_size: 32,
        context_len: 48,
        layers: 2,
        model_dim: dim,
        heads: 4,
        seed: 1,
    };
    let model = Transformer::new(cfg.clone()).unwrap();
    println!("dim={dim} params={} epochs={epochs} lr={lr} judge_pairs={judge_pairs} task_demos={task_demos}", model.param_count());

    let data_cfg = SftDataConfig { task_demos, judge_pairs, pointwise_demos: 600 };
    let data = build_sft_dataset(&data_cfg, 11, &HashSet::new()).unwrap();
    println!("examples: {}", data.len());

    let t0 = Instant::now();
    let opts = SftTrainOptions { epochs, learning_rate: lr, weight_decay: 0.0, batch_size: 32, seed: 5 };
    let (mut params, losses) = train_sft(&model, init_params(&cfg).unwrap(), &data, &opts).unwrap();
    quantize_to_f32(&mut params);
    println!("sft took {:?}; losses {:?}", t0.elapsed(), losses.iter().map(|l| (l * 100.0).round() / 100.0).collect::<Vec<_>>());

    // Task quality on fresh instances.
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

    // Judge quality on corruption pairs (like held-out reward accuracy).
    let bound = Bound::new(&model, &params);
    let judge_probe = gen_corpus(150, 555).unwrap();
    let mut rng = <rand_chacha::ChaCha8Rng as rand_chacha::rand_core::SeedableRng>::seed_from_u64(3);
    let mut pos_consistent = 0;
    let mut correct = 0;
    let mut n = 0;
    let mut sum_conf = 0.0;
    for (i, inst) in judge_probe.iter().enumerate() {
        let ra = inst.gold_output.clone();
        let rb = scir::tasks::corrupt_response(&inst.gold_output, 1 + i % 3, &mut rng);
        if ra == rb {
            continue;
        }
        let gl = scir::tasks::gold_preference(inst, &ra, &rb);
        if gl == scir::rewards::GoldLabel::Tie {
            continue;
        }
        let pair = scir::rewards::PreferencePair::new(format!("j{i}"), inst.prompt.clone(), ra, rb).unwrap();
        let g = scir::rewards::grm_preference(bound, &GrmSettings::full(), &pair, 0.02, 1e-6).unwrap();
        n += 1;
        sum_conf += g.p_mean.max(1.0 - g.p_mean);
        if g.position_consistent {
            pos_consistent += 1;
            let label = scir::rewards::hard_label(g.p_mean, 1e-6);
            let want = if gl == scir::rewards::GoldLabel::A {
                scir::rewards::HardLabel::A
            } else {
                scir::rewards::HardLabel::B
            };
            if label == want {
                correct += 1;
            }
        }
    }
    println!(
        "judge: pos_consistent {pos_consistent}/{n} acc_on_consistent {:.3} mean_conf {:.3}",
        correct as f64 / pos_consistent.max(1) as f64,
        sum_conf / n.max(1) as f64
    );

    // Per-variant diagnostics.
    let mut rng = <rand_chacha::ChaCha8Rng as rand_chacha::rand_core::SeedableRng>::seed_from_u64(3);
    let variants = GrmSettings::full().variants();
    let mut v_correct = vec![0usize; variants.len()];
    let mut v_conf = vec![0.0f64; variants.len()];
    let mut v_n = 0usize;
    for (i, inst) in judge_probe.iter().enumerate() {
        let ra = inst.gold_output.clone();
        let rb = scir::tasks::corrupt_response(&inst.gold_output, 1 + i % 3, &mut rng);
        if ra == rb {
            continue;
        }
        let gl = scir::tasks::gold_preference(inst, &ra, &rb);
        if gl == scir::rewards::GoldLabel::Tie {
            continue;
        }
        let pair = scir::rewards::PreferencePair::new(format!("v{i}"), inst.prompt.clone(), ra, rb).unwrap();
        v_n += 1;
        for (vi, (t, o)) in variants.iter().enumerate() {
            let p = scir::rewards::grm_preference_single(bound, t, &pair, *o, 0.02).unwrap();
            v_conf[vi] += p.max(1.0 - p);
            let right = (gl == scir::rewards::GoldLabel::A) == (p > 0.5);
            if right {
                v_correct[vi] += 1;
            }
        }
    }
    for (vi, (t, o)) in variants.iter().enumerate() {
        println!(
            "  variant {:?} {:?}: acc {:.3} conf {:.3}",
            t.id,
            o,
            v_correct[vi] as f64 / v_n.max(1) as f64,
            v_conf[vi] / v_n.max(1) as f64
        );
    }
}
