// Scratch probe: trajectory of a single ablation-row training run.
use mlr_core::bench::{synthetic_dataset, AblationVariant, SyntheticKind};
use mlr_core::data::{train_test_split, FitMode};
use mlr_core::metrics;
use mlr_core::model::MlrConfig;
use mlr_core::train::train;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let width: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(256);
    let iters: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(60);
    let variant = match args.get(3).map(|s| s.as_str()).unwrap_or("ridge") {
        "ffnn" => AblationVariant::PlainFfnn,
        "ridge" => AblationVariant::Ridge,
        "dither" => AblationVariant::RidgeStructDither,
        "permut" => AblationVariant::RidgePermut,
        _ => AblationVariant::Full,
    };
    let kind = match args.get(4).map(|s| s.as_str()).unwrap_or("linear") {
        "additive" => SyntheticKind::AdditiveNonlinear,
        "sparse" => SyntheticKind::SparseSignal,
        _ => SyntheticKind::Linear,
    };
    let seed_off = match kind { SyntheticKind::Linear => 0, SyntheticKind::AdditiveNonlinear => 1, SyntheticKind::SparseSignal => 2 };
    let ds = synthetic_dataset(kind, 100, 8, 0.6, 700 + seed_off);
    for split_seed in [1u64, 2, 3] {
        let (tr, te) = train_test_split(&ds, 0.2, split_seed, FitMode::TrainOnly).unwrap();
        let base = MlrConfig {
            depth: 2,
            width,
            permutations: 16,
            max_iter: Some(iters),
            budget_seconds: None,
            seed: split_seed * 100,
            ..MlrConfig::default()
        };
        let cfg = variant.configure(&base);
        let (model, record) = train(&cfg, &tr.x, &tr.y).unwrap();
        let preds = model.predict_raw(&te.x).unwrap();
        let r2 = metrics::r2_score(&te.y, &preds).unwrap();
        println!(
            "split {split_seed}: lambda_init {:.2} lambda_hat {:.4} best_iter {:?} best_val {:.3} test_r2 {:.3}",
            record.lambda_init, model.lambda, record.best_iteration, record.best_val_score, r2
        );
        let vals: Vec<String> = record
            .iterations
            .iter()
            .step_by((iters / 15).max(1))
            .map(|l| format!("{:.2}", l.val_score))
            .collect();
        println!("  val: {}", vals.join(" "));
        let losses: Vec<String> = record
            .iterations
            .iter()
            .step_by((iters / 15).max(1))
            .map(|l| format!("{:.3}", l.train_loss))
            .collect();
        println!("  loss: {}", losses.join(" "));
    }
}
