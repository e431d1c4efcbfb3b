//! Scratch probe: anatomy of self-generated pairs at M_0 — score contrast,
//! judge validity, and what the valid subset looks like.

use scir::lm::{load_checkpoint, Bound, Transformer};
use scir::losses::LossConfig;
use scir::rewards::compute_verdict;
use scir::selfreward::{form_pairs, generate_responses, LabelingMode, TrainConfig};
use scir::tasks::{gen_corpus, gold_score};

fn main() {
    let root = std::env::temp_dir().join("scir_probe_scir");
    let m0 = load_checkpoint(&root.join("checkpoints/M0")).unwrap();
    let base = load_checkpoint(&root.join("checkpoints/base")).unwrap();
    let model = Transformer::new(m0.config.clone()).unwrap();
    let train = TrainConfig::default();
    let loss = LossConfig::default();

    let pool = gen_corpus(256, 31415).unwrap();
    let sets = generate_responses(&model, &m0.params, &pool, 4, 0.7, 0.9, 10, 2718).unwrap();

    // Distinctness stats.
    let mut identical_all = 0;
    for set in &sets {
        let mut d = set.clone();
        d.sort_by_key(|s| s.tokens().to_vec());
        d.dedup();
        if d.len() < 2 {
            identical_all += 1;
        }
    }
    println!("prompts with <2 distinct responses: {identical_all}/256");

    let policy = Bound::new(&model, &m0.params);
    let global = Bound::new(&model, &base.params);
    let (pairs, skipped) =
        form_pairs(&pool, &sets, LabelingMode::Scir, policy, global, 0.1, 0.0, 99, 0).unwrap();
    println!("pairs formed: {} skipped: {skipped}", pairs.len());

    let vs = train.verdict_settings(&loss);
    // Bucket by |gold score gap|.
    let mut buckets: Vec<(usize, usize, usize)> = vec![(0, 0, 0); 5]; // (n, valid, agree)
    let mut tie_count = 0;
    for (pair, inst) in pairs.iter().zip(pool.iter().filter(|_| true)) {
        // pair ids index into pool by formation order; recover instance by prompt.
        let _ = inst;
        let inst = pool.iter().find(|i| i.prompt == pair.prompt).unwrap();
        let gap = (gold_score(inst, &pair.response_a) - gold_score(inst, &pair.response_b)).abs();
        if gap == 0.0 {
            tie_count += 1;
        }
        let b = (gap.floor() as usize).min(4);
        let v = compute_verdict(policy, global, pair, &vs).unwrap();
        buckets[b].0 += 1;
        let valid = v.grm_position_consistent
            && v.label_irm.defined().is_some()
            && v.label_grm.defined().is_some();
        if valid {
            buckets[b].1 += 1;
            if v.label_irm == v.label_grm {
                buckets[b].2 += 1;
            }
        }
    }
    println!("gold-tie pairs: {tie_count}");
    for (i, (n, valid, agree)) in buckets.iter().enumerate() {
        println!("|score gap| ~{i}: n={n} valid={valid} agree={agree}");
    }

    // Confidence distribution on pairs.
    let mut irm_conf = Vec::new();
    let mut grm_conf = Vec::new();
    for pair in pairs.iter().take(120) {
        let v = compute_verdict(policy, global, pair, &vs).unwrap();
        irm_conf.push(v.p_irm.max(1.0 - v.p_irm));
        grm_conf.push(v.p_grm.max(1.0 - v.p_grm));
    }
    irm_conf.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grm_conf.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |v: &Vec<f64>, f: f64| v[(f * (v.len() - 1) as f64) as usize];
    println!(
        "irm conf quartiles: {:.3}/{:.3}/{:.3} max {:.3}",
        q(&irm_conf, 0.25), q(&irm_conf, 0.5), q(&irm_conf, 0.75), irm_conf.last().unwrap()
    );
    println!(
        "grm conf quartiles: {:.3}/{:.3}/{:.3} max {:.3}",
        q(&grm_conf, 0.25), q(&grm_conf, 0.5), q(&grm_conf, 0.75), grm_conf.last().unwrap()
    );
}
