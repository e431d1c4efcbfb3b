//! Diagnostic: does consistency-only training move P (IRM) and Q (GRM)
//! toward sign agreement on the trained pairs, and what happens on fresh
//! pairs afterwards?

use gradcore::gradient;
use rand_chacha::rand_core::SeedableRng;

use scir::lm::{Bound, Transformer};
use scir::losses::LossConfig;
use scir::rewards::{compute_verdict, PairRefLp};
use scir::selfreward::{
    derive_seed, form_pairs, generate_responses, prepare_data, seed_tags, train_sft_checkpoint,
    AdamW, LabelingMode, RunContext, RunPaths, SftConfig, TrainConfig,
};
use scir::tasks::gen_corpus;

fn main() {
    let root = std::env::temp_dir().join("scir_cons_probe");
    let _ = std::fs::remove_dir_all(&root);
    let model_cfg = scir::lm::ModelConfig::default();
    let model = Transformer::new(model_cfg.clone()).unwrap();
    let mut train = TrainConfig::default();
    train.prompts_per_iteration = 48;
    let ctx = RunContext {
        run_id: "probe".into(),
        model: model.clone(),
        loss: LossConfig::default(),
        train,
        sft: SftConfig::default(),
        mode: LabelingMode::Scir,
        paths: RunPaths::new(&root),
    };
    prepare_data(&ctx).unwrap();
    let (base, m0) = train_sft_checkpoint(&ctx).unwrap();
    let mut params = m0.params.clone();
    let global_params = base.params.clone();

    let pool = gen_corpus(48, 4242).unwrap();
    let sets = generate_responses(&model, &params, &pool, 4, 0.7, 0.9, 10, 7).unwrap();
    let policy = Bound::new(&model, &params);
    let global = Bound::new(&model, &global_params);
    let (pairs, _) =
        form_pairs(&pool, &sets, LabelingMode::Scir, policy, global, 0.1, 0.0, 99, 0).unwrap();
    println!("pairs: {}", pairs.len());

    let vs = ctx.train.verdict_settings(&ctx.loss);
    let show = |params: &gradcore::ParamVector, label: &str| {
        let policy = Bound::new(&model, params);
        let mut agree = 0;
        let mut valid = 0;
        let mut confident_p = 0;
        let mut confident_q = 0;
        for pair in pairs.iter() {
            let v = compute_verdict(policy, global, pair, &vs).unwrap();
            if v.p_irm.max(1.0 - v.p_irm) > 0.7 {
                confident_p += 1;
            }
            if v.p_grm.max(1.0 - v.p_grm) > 0.7 {
                confident_q += 1;
            }
            if v.grm_position_consistent {
                if let (Some(a), Some(b)) = (v.label_irm.defined(), v.label_grm.defined()) {
                    valid += 1;
                    if a == b {
                        agree += 1;
                    }
                }
            }
        }
        println!("{label}: valid {valid}/{} agree {agree} confP {confident_p} confQ {confident_q}", pairs.len());
        for pair in pairs.iter().take(6) {
            let v = compute_verdict(policy, global, pair, &vs).unwrap();
            println!(
                "  {}: p_irm={:.3} p_grm={:.3} variants={:?} pos={}",
                pair.id,
                v.p_irm,
                v.p_grm,
                v.p_grm_variants.iter().map(|x| (x * 100.0).round() / 100.0).collect::<Vec<_>>(),
                v.grm_position_consistent
            );
        }
    };
    show(&params, "before");

    // Consistency-only training on these pairs.
    let step_cfg = ctx.train.step_config(&ctx.loss);
    let local_params = params.clone();
    let local = Bound::new(&model, &local_params);
    let ref_lps: Vec<PairRefLp> =
        pairs.iter().map(|p| PairRefLp::compute(local, global, p).unwrap()).collect();
    let mut opt = AdamW::new(params.len(), 0.0);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    for step in 0..60 {
        use rand::seq::SliceRandom;
        let mut idx: Vec<usize> = (0..pairs.len()).collect();
        idx.shuffle(&mut rng);
        let batch: Vec<_> =
            idx[..16].iter().map(|&i| (pairs[i].clone(), ref_lps[i])).collect();
        let out = scir::losses::scir_batch_loss(&model, &batch, &params, &step_cfg).unwrap();
        let g = gradient(&out.loss, &params).unwrap();
        opt.step(&mut params, &g, 3e-4).unwrap();
        if step % 20 == 0 {
            let gate = out.signals.iter().filter(|s| s.gate_open).count();
            println!("step {step}: gate {gate}/16 loss={:.4}", gradcore::evaluate(&out.loss, &params).unwrap());
        }
        let _ = derive_seed(0, seed_tags::EPOCH, 0);
    }
    show(&params, "after (same pairs)");

    // Fresh pairs from the updated policy.
    let pool2 = gen_corpus(48, 777).unwrap();
    let sets2 = generate_responses(&model, &params, &pool2, 4, 0.7, 0.9, 10, 8).unwrap();
    let policy2 = Bound::new(&model, &params);
    let (pairs2, _) =
        form_pairs(&pool2, &sets2, LabelingMode::Scir, policy2, global, 0.1, 0.0, 98, 1).unwrap();
    {
        let policy = Bound::new(&model, &params);
        let mut agree = 0;
        let mut valid = 0;
        for pair in pairs2.iter() {
            let v = compute_verdict(policy, global, pair, &vs).unwrap();
            if v.grm_position_consistent {
                if let (Some(a), Some(b)) = (v.label_irm.defined(), v.label_grm.defined()) {
                    valid += 1;
                    if a == b {
                        agree += 1;
                    }
                }
            }
        }
        println!("fresh pairs: valid {valid}/{} agree {agree}", pairs2.len());
    }
}
