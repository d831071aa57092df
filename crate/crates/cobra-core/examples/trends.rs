//! Ablation harness: trains the four loss configurations over several seeds
//! and prints seed mIoU (threshold-swept), fusion-source comparisons, and
//! branch diagnostics. Used to pick the toy-run hyperparameters.

use cobra_core::data::{generate_shapes, DatasetConfig, Sample};
use cobra_core::eval::{best_seed_miou, branch_diagnostics};
use cobra_core::model::SeedSource;
use cobra_core::train::{infer_seeds, train, BranchMode, TrainConfig};
use cobra_core::types::Seed;
use std::time::Instant;

fn dataset(seed: u64, n: usize) -> Vec<Sample> {
    generate_shapes(&DatasetConfig {
        num_classes: 3,
        image_size: 64,
        samples: n,
        rng_seed: seed,
        ..Default::default()
    })
    .unwrap()
}

fn sweep_thresholds() -> Vec<f64> {
    (2..=14).map(|i| i as f64 * 0.05).collect()
}

fn eval_seeds(seeds: &[Seed], eval: &[Sample], classes: usize) -> f64 {
    let pairs: Vec<(&Seed, &ndarray::Array2<u8>, Vec<usize>)> = seeds
        .iter()
        .zip(eval.iter())
        .map(|(s, e)| (s, e.gt_mask.as_ref().unwrap(), e.positives()))
        .collect();
    let (miou, _) = best_seed_miou(&pairs, classes, &sweep_thresholds()).unwrap();
    miou * 100.0
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|v| v.parse().ok()).unwrap_or(8);
    let lr: f64 = args.get(2).and_then(|v| v.parse().ok()).unwrap_or(3e-3);
    let lambda2: f64 = args.get(3).and_then(|v| v.parse().ok()).unwrap_or(0.1);
    let pseudo_bg: f64 = args.get(4).and_then(|v| v.parse().ok()).unwrap_or(0.4);
    let seeds_to_run: Vec<u64> = args
        .get(5)
        .map(|s| s.split(',').map(|v| v.parse().unwrap()).collect())
        .unwrap_or_else(|| vec![0, 1, 2]);

    let train_data = dataset(100, 500);
    let eval_data = dataset(999, 100);
    println!("epochs={epochs} lr={lr} lambda2={lambda2} pseudo_bg={pseudo_bg} seeds={seeds_to_run:?}");

    let base = |seed: u64| {
        let mut cfg = TrainConfig {
            epochs,
            batch_size: 16,
            lr,
            rng_seed: seed,
            scales: vec![1.0],
            ..Default::default()
        };
        cfg.pseudo_bg_thresh = pseudo_bg;
        cfg.loss.lambda2 = lambda2;
        cfg
    };

    #[derive(Clone, Copy)]
    enum Variant {
        Full,
        CamOnly,
        CakAlone,
        SakAlone,
    }
    let variants = [
        ("full", Variant::Full),
        ("cam-only", Variant::CamOnly),
        ("cak-alone", Variant::CakAlone),
        ("sak-alone", Variant::SakAlone),
    ];

    let mut results: Vec<Vec<f64>> = vec![Vec::new(); variants.len()];
    let mut table5: Vec<Vec<f64>> = vec![Vec::new(); 5];
    let mut diag_cak: Vec<(f64, f64)> = Vec::new();
    let mut diag_sak: Vec<(f64, f64)> = Vec::new();

    for &seed in &seeds_to_run {
        for (vi, (name, variant)) in variants.iter().enumerate() {
            let mut cfg = base(seed);
            match variant {
                Variant::Full => {}
                Variant::CamOnly => cfg.loss.lambda2 = 0.0,
                Variant::CakAlone => cfg.branch = BranchMode::CakOnly,
                Variant::SakAlone => cfg.branch = BranchMode::SakOnly,
            }
            let t = Instant::now();
            let out = train(&cfg, &train_data, None).unwrap();
            let source = cfg.seed_source();
            let seeds = infer_seeds(&out.model, &out.store, &eval_data, &cfg.scales, source).unwrap();
            let miou = eval_seeds(&seeds, &eval_data, 3);
            println!(
                "seed {seed} {name:<9} source {:7} mIoU {miou:6.2}  ({:.0}s)",
                format!("{source:?}"),
                t.elapsed().as_secs_f64()
            );
            results[vi].push(miou);

            if matches!(variant, Variant::Full) {
                for (si, src) in [
                    SeedSource::Fuse,
                    SeedSource::Cnn,
                    SeedSource::Tran,
                    SeedSource::Average,
                    SeedSource::Max,
                ]
                .iter()
                .enumerate()
                {
                    let s = infer_seeds(&out.model, &out.store, &eval_data, &cfg.scales, *src).unwrap();
                    table5[si].push(eval_seeds(&s, &eval_data, 3));
                }
            }
            if matches!(variant, Variant::CakAlone | Variant::SakAlone) {
                let mut ps = Vec::new();
                let mut ss = Vec::new();
                for (s, e) in seeds.iter().zip(eval_data.iter()) {
                    let (p, sv) = branch_diagnostics(s, e.gt_mask.as_ref().unwrap(), 0.5).unwrap();
                    ps.push(p);
                    ss.push(sv);
                }
                let mp = ps.iter().sum::<f64>() / ps.len() as f64;
                let ms = ss.iter().sum::<f64>() / ss.len() as f64;
                if matches!(variant, Variant::CakAlone) {
                    diag_cak.push((mp, ms));
                } else {
                    diag_sak.push((mp, ms));
                }
            }
        }
    }

    let median = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        s[s.len() / 2]
    };
    println!("\n== medians over seeds ==");
    for (vi, (name, _)) in variants.iter().enumerate() {
        println!("{name:<9} {:6.2}  (runs: {:?})", median(&results[vi]), results[vi]);
    }
    println!("\n== table 5 (full run) ==");
    for (si, src) in ["fuse", "cnn", "tran", "average", "max"].iter().enumerate() {
        println!("{src:<8} {:6.2}  (runs: {:?})", median(&table5[si]), table5[si]);
    }
    println!("\n== diagnostics (precision, sensitivity) ==");
    let med2 = |v: &[(f64, f64)]| {
        let p: Vec<f64> = v.iter().map(|x| x.0).collect();
        let s: Vec<f64> = v.iter().map(|x| x.1).collect();
        (median(&p), median(&s))
    };
    println!("cak-alone {:?}", med2(&diag_cak));
    println!("sak-alone {:?}", med2(&diag_sak));
}
