// Scratch: inspect one collapsing training trajectory. Not shipped.
use vlcfusion::conditions::*;
use vlcfusion::fusion::FusionVariant;
use vlcfusion::synth::*;

fn main() {
    let seed = 2u64;
    let spec = SceneSpec { n_scenes: 640, grid: 32, ..SceneSpec::default() };
    let store = SceneStore::generate(&spec, 4000 + seed).unwrap();
    let plan = SplitPlan { seed, ..SplitPlan::default() };
    let splits = build_splits(&store.manifest, &plan).unwrap();
    let cond_spec = SyntheticConditionSpec::with_noisy_tail(4, 0.4);
    let all = cond_spec.condition_set();
    let oracle = SyntheticOracleVlm::new(&store.manifest, &cond_spec, seed);
    let templates = PromptTemplates::default();
    let records = store.manifest.image_records();
    let probe: Vec<_> = records.iter().take(200).cloned().collect();
    let report = score_consistency(&probe, &all, &oracle, &templates, 5, RetryPolicy::immediate()).unwrap();
    let selected = select_top_k(&report, &all, 6).unwrap();
    let matrix = generate_responses(&records, &selected, &oracle, &templates, ResponseMode::Batched, RetryPolicy::immediate(), &GenerateOptions::default()).unwrap();
    let src = ConditionsSource::Matrix { conditions: selected, matrix };
    let det = DetectorConfig::new(DetectorArch::Fused(FusionVariant::Vlc), 3, 6);
    let tc = TrainConfig { epochs: 14, batch_size: 16, lr: 1e-2, seed, ..TrainConfig::default() };
    let out = train(&store, &splits, det, &src, &tc).unwrap();
    for l in &out.log {
        println!(
            "epoch {:>2}: loss {:.4} (obj {:.4} cls {:.4} box {:.4}) val mAP@.5 {:.3} val sweep {:.3}",
            l.epoch, l.loss, l.loss_obj, l.loss_cls, l.loss_box, l.val_map_50, l.val_map_50_95
        );
    }
    println!("best epoch {} val {:.3}", out.best_epoch, out.best_val_map);
}
