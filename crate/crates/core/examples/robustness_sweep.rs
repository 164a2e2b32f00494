//! Prints robustness results for a few seeds and confound settings.
//!
//!     cargo run --release -p cbm-core --example robustness_sweep

use cbm_core::linear_head::TrainConfig;
use cbm_core::synth::{concept_count_ablation, run_robustness_experiment, SynthConfig};

fn main() -> cbm_core::Result<()> {
    let train = TrainConfig::default();
    for seed in [7, 11, 13] {
        for (label, cfg) in [
            ("G1", SynthConfig { seed, ..SynthConfig::default() }),
            ("beta=0", SynthConfig { seed, confound_strength: 0.0, ..SynthConfig::default() }),
            ("rho=0.5", SynthConfig { seed, rho_train: 0.5, rho_test: 0.5, ..SynthConfig::default() }),
        ] {
            let r = run_robustness_experiment(&cfg, &TrainConfig { seed, ..train.clone() })?;
            let after50 = |curve: &[cbm_core::linear_head::EpochRecord]| {
                let tail: Vec<_> = curve.iter().filter(|e| e.epoch > 50).collect();
                let min_val = tail.iter().map(|e| e.val_acc).fold(1.0, f64::min);
                let max_test = tail.iter().map(|e| e.test_acc.unwrap()).fold(0.0, f64::max);
                let max_gap = curve.iter().map(|e| (e.val_acc - e.test_acc.unwrap()).abs()).fold(0.0, f64::max);
                (tail.len(), min_val, max_test, max_gap)
            };
            println!(
                "seed {seed:>2} {label:<8} concept test {:.4} val {:.4} (best {:>4}, {} epochs) | raw test {:.4} val {:.4} (best {:>4}, {} epochs) | raw>50 {:?} concept>50 {:?}",
                r.concept_test_acc, r.concept_val_acc, r.concept_best_epoch, r.concept_curve.len(),
                r.raw_probe_test_acc, r.raw_probe_val_acc, r.raw_probe_best_epoch, r.raw_probe_curve.len(),
                after50(&r.raw_probe_curve), after50(&r.concept_curve),
            );
        }
    }
    let rows = concept_count_ablation(&SynthConfig::default(), &train, &[1, 2, 4, 8], 10, 7)?;
    for row in rows {
        println!("K={} mean {:.4} std {:.4}", row.k, row.mean_acc, row.std_acc);
    }
    Ok(())
}
