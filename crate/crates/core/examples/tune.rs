// Scratch harness for sizing the acceptance experiments. Not shipped.

use std::time::Instant;

use vlcfusion::fusion::FusionVariant;
use vlcfusion::synth::*;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(String::as_str).unwrap_or("utility");
    match which {
        "vulnerability" => vulnerability(),
        "utility" => utility(),
        "utility5" => utility5(),
        "hump" => hump(),
        _ => eprintln!("unknown experiment {which}"),
    }
}

fn utility5() {
    let start = Instant::now();
    let mut wins_concat = 0;
    let mut wins_cbam = 0;
    let mut deltas = Vec::new();
    for seed in 0..5u64 {
        let spec = SceneSpec { n_scenes: 640, grid: 32, ..SceneSpec::default() };
        let store = SceneStore::generate(&spec, 2000 + seed).unwrap();
        let plan = SplitPlan { seed, ..SplitPlan::default() };
        let splits = build_splits(&store.manifest, &plan).unwrap();
        let mut scores = Vec::new();
        for (variant, k, src) in [
            (FusionVariant::ConcatConv, 0usize, ConditionsSource::None),
            (FusionVariant::CbamOnly, 0, ConditionsSource::None),
            (FusionVariant::Vlc, store.manifest.spec.latent_len(), ConditionsSource::OracleLatents),
        ] {
            let det = DetectorConfig::new(DetectorArch::Fused(variant), 3, k);
            let tc = TrainConfig { epochs: 14, batch_size: 16, lr: 1e-2, seed, ..TrainConfig::default() };
            let out = train(&store, &splits, det, &src, &tc).unwrap();
            let unseen = evaluate_detector(&store, &splits.test_unseen, &out.params, &src, &tc.decode).unwrap();
            scores.push(unseen.map_50);
        }
        println!(
            "seed {seed}: concat {:.3} cbam {:.3} vlc {:.3}",
            scores[0], scores[1], scores[2]
        );
        if scores[2] > scores[0] {
            wins_concat += 1;
        }
        if scores[2] > scores[1] {
            wins_cbam += 1;
        }
        deltas.push(scores[2] - scores[0]);
    }
    let mean = deltas.iter().sum::<f64>() / deltas.len() as f64;
    println!(
        "vlc > concat in {wins_concat}/5, vlc > cbam in {wins_cbam}/5, mean delta {:.3}, elapsed {:.1?}",
        mean,
        start.elapsed()
    );
}

fn hump() {
    use vlcfusion::conditions::*;
    let start = Instant::now();
    let ks = [2usize, 4, 6, 8, 10];
    let mut means = vec![0.0f64; ks.len()];
    let n_seeds = 3u64;
    for seed in 0..n_seeds {
        let spec = SceneSpec { n_scenes: 640, grid: 32, ..SceneSpec::default() };
        let store = SceneStore::generate(&spec, 4000 + seed).unwrap();
        let plan = SplitPlan { seed, ..SplitPlan::default() };
        let splits = build_splits(&store.manifest, &plan).unwrap();

        let cond_spec = SyntheticConditionSpec::with_noisy_tail(4, 0.4);
        let oracle = SyntheticOracleVlm::new(&store.manifest, &cond_spec, seed);
        let all_conditions = cond_spec.condition_set();
        let templates = PromptTemplates::default();
        let records = store.manifest.image_records();
        let probe: Vec<_> = records.iter().take(200).cloned().collect();
        let report = score_consistency(&probe, &all_conditions, &oracle, &templates, 5, RetryPolicy::immediate()).unwrap();

        for (ki, &k) in ks.iter().enumerate() {
            let selected = select_top_k(&report, &all_conditions, k).unwrap();
            let matrix = generate_responses(
                &records, &selected, &oracle, &templates,
                ResponseMode::Batched, RetryPolicy::immediate(), &GenerateOptions::default(),
            ).unwrap();
            let src = ConditionsSource::Matrix { conditions: selected, matrix };
            let det = DetectorConfig::new(DetectorArch::Fused(FusionVariant::Vlc), 3, k);
            let tc = TrainConfig { epochs: 14, batch_size: 16, lr: 1e-2, seed, ..TrainConfig::default() };
            let out = train(&store, &splits, det, &src, &tc).unwrap();
            let unseen = evaluate_detector(&store, &splits.test_unseen, &out.params, &src, &tc.decode).unwrap();
            println!("seed {seed} k {k}: unseen mAP@.5 {:.3}", unseen.map_50);
            means[ki] += unseen.map_50 / n_seeds as f64;
        }
    }
    for (ki, &k) in ks.iter().enumerate() {
        println!("k {k}: mean unseen mAP@.5 {:.3}", means[ki]);
    }
    let peak_idx = means.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0;
    println!(
        "peak at k={} ({:.3}), k=10 {:.3}, gap {:.3}, elapsed {:.1?}",
        ks[peak_idx], means[peak_idx], means[4], means[peak_idx] - means[4], start.elapsed()
    );
}

fn vulnerability() {
    // single_a trained on clean scenes, tested on clean vs dark.
    let start = Instant::now();
    let mut drops = Vec::new();
    for seed in 0..5u64 {
        let clean_spec = SceneSpec {
            n_scenes: 360,
            grid: 32,
            p_dark: 0.0,
            p_rain: 0.0,
            p_blur: 0.0,
            ..SceneSpec::default()
        };
        let store = SceneStore::generate(&clean_spec, 1000 + seed).unwrap();
        let ids: Vec<String> = store.manifest.scenes.iter().map(|s| s.id.clone()).collect();
        let splits = Splits {
            train: ids[..280].to_vec(),
            val: ids[280..320].to_vec(),
            test_seen: ids[320..].to_vec(),
            test_unseen: vec![],
        };
        let det = DetectorConfig::new(DetectorArch::SingleA, 3, 0);
        let tc = TrainConfig { epochs: 12, batch_size: 16, lr: 1e-2, seed, ..TrainConfig::default() };
        let out = train(&store, &splits, det, &ConditionsSource::None, &tc).unwrap();

        let clean_eval = evaluate_detector(&store, &splits.test_seen, &out.params, &ConditionsSource::None, &tc.decode).unwrap();

        let dark_spec = SceneSpec { p_dark: 1.0, ..clean_spec };
        let dark_store = SceneStore::generate(&dark_spec, 9000 + seed).unwrap();
        let dark_ids: Vec<String> = dark_store.manifest.scenes.iter().map(|s| s.id.clone()).take(40).collect();
        let dark_eval = evaluate_detector(&dark_store, &dark_ids, &out.params, &ConditionsSource::None, &tc.decode).unwrap();

        println!(
            "seed {seed}: clean mAP@.5 {:.3}, dark mAP@.5 {:.3}, drop {:.3} (best epoch {})",
            clean_eval.map_50, dark_eval.map_50, clean_eval.map_50 - dark_eval.map_50, out.best_epoch
        );
        drops.push(clean_eval.map_50 - dark_eval.map_50);
    }
    let mean = drops.iter().sum::<f64>() / drops.len() as f64;
    println!("mean drop {:.3} over {} seeds, elapsed {:.1?}", mean, drops.len(), start.elapsed());
}

fn utility() {
    let start = Instant::now();
    let mut rows = Vec::new();
    for seed in 0..3u64 {
        let spec = SceneSpec {
            n_scenes: 640,
            grid: 32,
            ..SceneSpec::default()
        };
        let store = SceneStore::generate(&spec, 2000 + seed).unwrap();
        let plan = SplitPlan { seed, ..SplitPlan::default() };
        let splits = build_splits(&store.manifest, &plan).unwrap();
        println!("seed {seed}: splits {:?}", splits.counts());

        let mut result = vec![format!("seed {seed}")];
        for (variant, k, src) in [
            (FusionVariant::ConcatConv, 0usize, ConditionsSource::None),
            (FusionVariant::CbamOnly, 0, ConditionsSource::None),
            (FusionVariant::Vlc, store.manifest.spec.latent_len(), ConditionsSource::OracleLatents),
        ] {
            let t0 = Instant::now();
            let det = DetectorConfig::new(DetectorArch::Fused(variant), 3, k);
            let tc = TrainConfig { epochs: 14, batch_size: 16, lr: 1e-2, seed, ..TrainConfig::default() };
            let out = train(&store, &splits, det, &src, &tc).unwrap();
            let unseen = evaluate_detector(&store, &splits.test_unseen, &out.params, &src, &tc.decode).unwrap();
            let seen = evaluate_detector(&store, &splits.test_seen, &out.params, &src, &tc.decode).unwrap();
            result.push(format!(
                "{variant}: seen {:.3} unseen {:.3} ({:.1?}, best ep {})",
                seen.map_50, unseen.map_50, t0.elapsed(), out.best_epoch
            ));
        }
        println!("{}", result.join(" | "));
        rows.push(result);
    }
    println!("total elapsed {:.1?}", start.elapsed());
}
