//! Scratch probe for run dynamics: SFT quality, iteration-0 agreement,
//! consistency trajectory, win rate. Not part of the test suite.

use std::time::Instant;

use scir::eval::winrate_report;
use scir::lm::{Bound, Transformer};
use scir::losses::LossConfig;
use scir::selfreward::{
    prepare_data, run_iterations, train_sft_checkpoint, LabelingMode, RunContext, RunPaths,
    SftConfig, TrainConfig,
};
use scir::tasks::{gen_corpus, gold_score};

fn main() {
    let t0 = Instant::now();
    let mode = std::env::args().nth(1).unwrap_or_else(|| "scir".into());
    let root = std::env::temp_dir().join(format!("scir_probe_{mode}"));
    let _ = std::fs::remove_dir_all(&root);

    let model_cfg = scir::lm::ModelConfig::default();
    let model = Transformer::new(model_cfg.clone()).unwrap();
    println!("params: {}", model.param_count());

    let ctx = RunContext {
        run_id: format!("probe-{mode}"),
        model: model.clone(),
        loss: LossConfig::default(),
        train: TrainConfig::default(),
        sft: SftConfig::default(),
        mode: match mode.as_str() {
            "scir" => LabelingMode::Scir,
            "irm" => LabelingMode::SrlmIrm,
            "judge" => LabelingMode::SrlmJudgePointwise,
            "gold" => LabelingMode::ExternalGold,
            other => panic!("unknown mode {other}"),
        },
        paths: RunPaths::new(&root),
    };

    prepare_data(&ctx).unwrap();
    println!("[{:?}] data prepared", t0.elapsed());
    let (base, m0) = train_sft_checkpoint(&ctx).unwrap();
    println!("[{:?}] sft done", t0.elapsed());

    // SFT sanity: greedy exact-match and mean gold score on fresh instances.
    let probe = gen_corpus(100, 999).unwrap();
    let m0_bound = Bound::new(&model, &m0.params);
    let mut exact = 0;
    let mut score_sum = 0.0;
    for inst in &probe {
        let resp =
            scir::lm::greedy_decode(&model, &m0.params, &inst.prompt, scir::vocab::EOS, 10).unwrap();
        if resp == inst.gold_output {
            exact += 1;
        }
        score_sum += gold_score(inst, &resp);
    }
    println!(
        "M0 task quality: exact {}/100, mean gold score {:.3}",
        exact,
        score_sum / 100.0
    );
    let base_bound = Bound::new(&model, &base.params);
    let wr = winrate_report(m0_bound, base_bound, &probe, 10).unwrap();
    println!("M0 vs base winrate: {:?} (w{} l{} t{})", wr.win_rate, wr.wins, wr.losses, wr.ties);

    let outcome = run_iterations(&ctx).unwrap();
    for m in &outcome.iterations {
        println!(
            "iter {}: cons_new={:?} (n={}/{}) cons_trained={:?} acc(irm/grm/cons)={:?}/{:?}/{:?} (n={}/{}/{}) gate={:?} wr_vs_m0={:?} lens={:.2}/{:.2}",
            m.iteration,
            m.consistency_new.rate.map(|r| (r * 1000.0).round() / 1000.0),
            m.consistency_new.n_valid,
            m.consistency_new.n_total,
            m.consistency_trained.as_ref().and_then(|r| r.rate).map(|r| (r * 1000.0).round() / 1000.0),
            m.accuracy_irm.accuracy.map(|r| (r * 1000.0).round() / 1000.0),
            m.accuracy_grm.accuracy.map(|r| (r * 1000.0).round() / 1000.0),
            m.accuracy_consistent.accuracy.map(|r| (r * 1000.0).round() / 1000.0),
            m.accuracy_irm.n_valid,
            m.accuracy_grm.n_valid,
            m.accuracy_consistent.n_valid,
            m.gate_rate.map(|r| (r * 100.0).round() / 100.0),
            m.winrate_vs_m0.win_rate.map(|r| (r * 1000.0).round() / 1000.0),
            m.winrate_vs_m0.avg_len_a,
            m.winrate_vs_m0.avg_len_b,
        );
    }
    println!("total [{:?}]", t0.elapsed());
}
