// Scratch probe for sizing the desk-scale ablation. Not part of the suite.
use mlr_core::bench::{run_ablation, synthetic_dataset, AblationVariant, SyntheticKind};
use mlr_core::data::Dataset;
use mlr_core::model::MlrConfig;
use std::time::Instant;

fn main() {
    let datasets: Vec<(String, Dataset)> = SyntheticKind::ALL
        .iter()
        .enumerate()
        .map(|(i, &kind)| {
            (
                kind.name().to_string(),
                synthetic_dataset(kind, 100, 8, 0.6, 700 + i as u64),
            )
        })
        .collect();

    let args: Vec<String> = std::env::args().collect();
    let width: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(128);
    let iters: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(50);
    let repeats: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(6);
    let bag: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(1);

    let base = MlrConfig {
        depth: 2,
        width,
        permutations: 16,
        max_iter: Some(iters),
        budget_seconds: None,
        ..MlrConfig::default()
    };
    let spread = |scores: &[f64], nds: usize| -> f64 {
        let mut per = vec![0.0; repeats];
        for ds in 0..nds {
            for r in 0..repeats {
                per[r] += scores[ds * repeats + r] / nds as f64;
            }
        }
        let m = per.iter().sum::<f64>() / repeats as f64;
        (per.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / repeats as f64).sqrt()
    };
    let t = Instant::now();
    for (name, ds) in &datasets {
        let one = vec![(name.clone(), ds.clone())];
        let rep = run_ablation(&one, &base, repeats, 1, 71).unwrap();
        let row = |v: AblationVariant| format!("{:+.3}", rep.cell(v, false).mean_r2);
        println!(
            "{name:<16} ffnn {} ridge {} dither {} permut {} full {}",
            row(AblationVariant::PlainFfnn),
            row(AblationVariant::Ridge),
            row(AblationVariant::RidgeStructDither),
            row(AblationVariant::RidgePermut),
            row(AblationVariant::Full)
        );
    }
    let report = run_ablation(&datasets, &base, repeats, bag, 71).unwrap();
    println!("pooled  width={width} iters={iters} repeats={repeats} bag={bag}");
    for v in AblationVariant::ALL {
        let s = report.cell(v, false);
        let b = report.cell(v, true);
        println!(
            "  {:<14} single {:+.3} (spread {:.3})   bag {:+.3} (spread {:.3})",
            v.label(), s.mean_r2, spread(&s.scores, 3), b.mean_r2, spread(&b.scores, 3)
        );
    }
    println!("wall={:.1}s", t.elapsed().as_secs_f64());
}
