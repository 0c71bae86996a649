//! Temporary calibration harness (run with --ignored --nocapture).

use std::collections::BTreeSet;
use std::time::Instant;

use peter::corpus::{build_vocab, encode_sample, split, synth_generate, EncodedSample, SplitSpec};
use peter::evaluation::{fmr, rmse_mae, usr};
use peter::inference::generate_for_records;
use peter::model::{MaskMode, ModelParams, PeterConfig};
use peter::training::{train, EarlyStopMetric, TrainSchedule};
use peter::corpus::tokenize;

#[test]
#[ignore]
fn calibrate_personalization() {
    let t_start = Instant::now();
    let records = synth_generate(50, 50, 20, 50, 0xC0FFEE);
    let parts = split(&records, &SplitSpec::new(0xBEEF)).unwrap();
    let train_recs: Vec<_> = parts.train.iter().map(|&i| records[i].clone()).collect();
    let vocab = build_vocab(&train_recs, 500).unwrap();
    eprintln!("vocab {} users {} items {}", vocab.n_words(), vocab.n_users(), vocab.n_items());

    let base = PeterConfig {
        n_users: vocab.n_users(),
        n_items: vocab.n_items(),
        vocab_size: vocab.n_words(),
        max_seq_len: 18,
        d: 64,
        ffn_dim: 256,
        n_layers: 2,
        n_heads: 2,
        word_budget: 15,
        mask_mode: MaskMode::Peter,
        use_features: false,
        lambda_e: 1.0,
        lambda_c: 1.0,
        lambda_r: 0.1,
        scale_full_d: false,
    };
    let encode = |recs: &[usize]| -> Vec<EncodedSample> {
        recs.iter()
            .map(|&i| encode_sample(&records[i], &vocab, false, base.word_budget).unwrap())
            .collect()
    };
    let train_samples = encode(&parts.train);
    let valid_samples = encode(&parts.valid);
    let test_records: Vec<_> = parts.test.iter().map(|&i| &records[i]).collect();

    let dir = tempfile::tempdir().unwrap();
    let eval_model = |params: &ModelParams, config: &PeterConfig, label: &str| {
        let gens =
            generate_for_records(&test_records, params, &vocab, config, (1.0, 5.0), 15).unwrap();
        let cands: Vec<Vec<String>> = gens.iter().map(|g| tokenize(&g.generated)).collect();
        let feats: Vec<Vec<String>> = gens.iter().map(|g| tokenize(&g.feature)).collect();
        let truths: Vec<f64> = gens.iter().map(|g| g.rating_true).collect();
        let preds: Vec<f64> = gens.iter().map(|g| g.rating_pred).collect();
        let u = usr(&cands).unwrap();
        let f = fmr(&cands, &feats).unwrap();
        let (rmse, _mae) = rmse_mae(&truths, &preds).unwrap();
        eprintln!("    {label}: USR {u:.4} FMR {f:.4} RMSE {rmse:.4}");
        eprintln!(
            "      gens: {:?}",
            &gens
                .iter()
                .take(3)
                .map(|g| g.generated.clone())
                .collect::<Vec<_>>()
        );
        (u, f, rmse)
    };

    let _universe: BTreeSet<Vec<String>> = records.iter().map(|r| r.feature_words()).collect();

    let epoch_settings: Vec<usize> = std::env::var("PETER_TUNE_EPOCHS")
        .map(|s| s.split(',').map(|v| v.parse().unwrap()).collect())
        .unwrap_or_else(|_| vec![8]);
    let lr: f64 = std::env::var("PETER_TUNE_LR")
        .map(|s| s.parse().unwrap())
        .unwrap_or(1.0);
    let clip: f64 = std::env::var("PETER_TUNE_CLIP")
        .map(|s| s.parse().unwrap())
        .unwrap_or(1.0);
    for max_epochs in epoch_settings {
        eprintln!("== max_epochs {max_epochs} lr {lr} clip {clip} ==");
        let schedule = TrainSchedule {
            initial_lr: lr,
            clip_threshold: clip,
            batch_size: 128,
            decay_factor: 0.25,
            max_decays: 5,
            max_epochs,
            early_stop: EarlyStopMetric::TotalObjective,
        };
        let mut results = Vec::new();
        for (name, config) in [
            ("peter", base.clone()),
            (
                "no_lc",
                PeterConfig {
                    lambda_c: 0.0,
                    ..base.clone()
                },
            ),
            (
                "l2r",
                PeterConfig {
                    mask_mode: MaskMode::LeftToRight,
                    ..base.clone()
                },
            ),
        ] {
            let t0 = Instant::now();
            let mut params = ModelParams::init(&config, 0xABCD);
            let ckpt = dir.path().join(format!("{name}.ckpt"));
            let report = train(
                &mut params,
                &config,
                &train_samples,
                &valid_samples,
                &schedule,
                0x5EED,
                &ckpt,
            )
            .unwrap();
            eprintln!(
                "  {name}: {} epochs in {:?}, first train_j: {:?}",
                report.state.epochs_run,
                t0.elapsed(),
                report
                    .epochs
                    .iter()
                    .take(4)
                    .map(|e| (e.train_j * 1000.0).round() / 1000.0)
                    .collect::<Vec<_>>()
            );
            results.push((name, eval_model(&params, &config, name)));
        }
        let usr_ratio = results[0].1 .0 / results[1].1 .0;
        let fmr_gap = results[0].1 .1 - results[1].1 .1;
        let rmse_ratio = results[2].1 .2 / results[0].1 .2;
        eprintln!(
            "  => usr_peter/usr_nolc = {usr_ratio:.3} (need >= 2), fmr gap {fmr_gap:+.4} (need > 0), rmse_l2r/rmse_peter = {rmse_ratio:.4} (need >= 1.05)"
        );
    }
    eprintln!("total {:?}", t_start.elapsed());
}
