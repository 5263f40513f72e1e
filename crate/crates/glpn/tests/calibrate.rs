//! Temporary calibration harness (run with --ignored). Prints graph and
//! accuracy measurements for candidate generator settings.

use glpn::dataset::{generate_synthetic, Split, SynthConfig};
use glpn::graph::{build_graph, normalize};
use glpn::pipeline::{run_pipeline, Mode, PipelineConfig, PseudoSource, SweepParameter};

fn graph_stats(cfg: &SynthConfig, theta: f64) {
    let ds = generate_synthetic(cfg).unwrap();
    let g = build_graph(&ds, theta).unwrap();
    let mut same = 0usize;
    let mut cross = 0usize;
    for e in g.edges() {
        let li = ds.records()[e.i].label.unwrap();
        let lj = ds.records()[e.j].label.unwrap();
        if li == lj {
            same += 1;
        } else {
            cross += 1;
        }
    }
    let a = normalize(&g);
    let isolated = (0..ds.len())
        .filter(|&i| a.row(i).count() == 1)
        .count();
    // Test nodes with at least one train neighbor.
    let adj = g.adjacency_lists();
    let mut test_with_train_neighbor = 0;
    let mut test_total = 0;
    for (i, r) in ds.records().iter().enumerate() {
        if r.split == Split::Test {
            test_total += 1;
            if adj[i].iter().any(|&j| ds.records()[j].split == Split::Train) {
                test_with_train_neighbor += 1;
            }
        }
    }
    println!(
        "  sigma={:.2} d={} theta={theta}: edges={} (same={same}, cross={cross}, purity={:.3}), isolated={isolated}/{}, test-with-train-nbr={test_with_train_neighbor}/{test_total}",
        cfg.noise_sigma,
        cfg.d_t,
        g.edge_count(),
        same as f64 / (same + cross).max(1) as f64,
        ds.len(),
    );
}

#[test]
#[ignore]
fn calibrate_graph_density() {
    for sigma in [0.4, 0.5, 0.6, 0.7, 0.8] {
        let cfg = SynthConfig { noise_sigma: sigma, ..Default::default() };
        graph_stats(&cfg, 0.95);
    }
    for d in [6usize, 8, 12, 16] {
        let cfg = SynthConfig { d_t: d, d_v: d, noise_sigma: 0.6, ..Default::default() };
        graph_stats(&cfg, 0.95);
    }
}

fn mode_accuracy(synth: &SynthConfig, mode: Mode, cfg: &PipelineConfig) -> (f64, f64) {
    let ds = generate_synthetic(synth).unwrap();
    let cfg = PipelineConfig { mode, ..cfg.clone() };
    let source = PseudoSource::Oracle { accuracy: 0.85, sharpness: 8.0, seed: cfg.seed };
    let out = run_pipeline(&ds, &cfg, Some(&source)).unwrap();
    (out.document.aggregate.accuracy.mean, out.document.aggregate.accuracy.std)
}

fn fast_cfg() -> PipelineConfig {
    let epochs: usize = std::env::var("CAL_EPOCHS").ok().and_then(|v| v.parse().ok()).unwrap_or(200);
    let lr: f64 = std::env::var("CAL_LR").ok().and_then(|v| v.parse().ok()).unwrap_or(1e-3);
    PipelineConfig { hidden: 32, epochs, learning_rate: lr, runs: 5, seed: 42, ..Default::default() }
}

#[test]
#[ignore]
fn calibrate_ablation_ordering() {
    let candidates = [
        // (d, sigma, separation, corr, n_train_pc, n_test_pc)
        (7usize, 0.45f64, 1.0f64, 0.90f64, 25usize, 175usize),
        (7, 0.45, 1.05, 0.92, 25, 175),
        (7, 0.42, 0.95, 0.90, 25, 175),
        (7, 0.45, 1.0, 0.90, 30, 170),
    ];
    for (d, sigma, sep, corr, ntr, nte) in candidates {
        let synth = SynthConfig {
            d_t: d,
            d_v: d,
            noise_sigma: sigma,
            class_separation: sep,
            modality_correlation: corr,
            n_per_class_train: ntr,
            n_per_class_test: nte,
            ..Default::default()
        };
        graph_stats(&synth, 0.95);
        let cfg = fast_cfg();
        let fcn = mode_accuracy(&synth, Mode::Fcn, &cfg);
        let lp = mode_accuracy(&synth, Mode::Lp, &cfg);
        let fcn_lp = mode_accuracy(&synth, Mode::FcnLp, &cfg);
        let glpn = mode_accuracy(&synth, Mode::Glpn, &cfg);
        let glpn_llm = mode_accuracy(&synth, Mode::GlpnLlm, &cfg);
        println!(
            "d={d} sigma={sigma:.2} sep={sep:.2} corr={corr:.2} split={ntr}/{nte}: fcn={:.4}±{:.3} lp={:.4} fcn-lp={:.4} glpn={:.4}±{:.3} glpn-llm={:.4}±{:.3}  [glpn-fcn={:+.2}pt, llm-glpn={:+.2}pt]\n",
            fcn.0, fcn.1, lp.0, fcn_lp.0, glpn.0, glpn.1, glpn_llm.0, glpn_llm.1,
            (glpn.0 - fcn.0) * 100.0, (glpn_llm.0 - glpn.0) * 100.0,
        );
    }
}

#[test]
#[ignore]
fn calibrate_llm_pathology() {
    use glpn::labels::Provenance;
    let synth = SynthConfig {
        d_t: 7,
        d_v: 7,
        noise_sigma: 0.45,
        class_separation: 1.05,
        modality_correlation: 0.92,
        n_per_class_train: 25,
        n_per_class_test: 175,
        ..Default::default()
    };
    let ds = generate_synthetic(&synth).unwrap();
    let cfg = fast_cfg();
    for (oracle_acc, fraction) in [(0.85, 0.05), (1.0, 0.05), (1.0, 0.0)] {
        let pc = PipelineConfig { mode: Mode::GlpnLlm, pseudo_fraction: fraction, ..cfg.clone() };
        let source = PseudoSource::Oracle { accuracy: oracle_acc, sharpness: 8.0, seed: pc.seed };
        // Per-group accuracy on the last run.
        use glpn::gcn::{predict, train, TrainConfig, MaskMode};
        use glpn::labels::build_labels;
        let a_hat = glpn::graph::normalize(&glpn::graph::build_graph(&ds, 0.95).unwrap());
        let full = glpn::pipeline::obtain_pseudo(&ds, &source).unwrap();
        let kept = full.filter_top_fraction(fraction).unwrap();
        let labels = build_labels(&ds, &kept).unwrap();
        let mut accs = Vec::new();
        let mut pseudo_accs = Vec::new();
        let mut plain_accs = Vec::new();
        for run in 0..5u64 {
            let tc = TrainConfig {
                hidden: 32,
                epochs: cfg.epochs,
                learning_rate: cfg.learning_rate,
                seed: cfg.seed + run,
                mask_mode: MaskMode::Grm,
                ..Default::default()
            };
            let (model, _) = train(&ds, &a_hat, &labels, &tc).unwrap();
            let pred = predict(&ds, &a_hat, &labels, &model).unwrap();
            let mut hits = [0usize; 2];
            let mut counts = [0usize; 2];
            for &i in &ds.test_indices() {
                let grp = if labels.provenance()[i] == Provenance::Pseudo { 1 } else { 0 };
                counts[grp] += 1;
                if ds.records()[i].label == Some(pred.classes[i]) {
                    hits[grp] += 1;
                }
            }
            accs.push((hits[0] + hits[1]) as f64 / (counts[0] + counts[1]) as f64);
            plain_accs.push(hits[0] as f64 / counts[0].max(1) as f64);
            pseudo_accs.push(hits[1] as f64 / counts[1].max(1) as f64);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        println!(
            "oracle_acc={oracle_acc} fraction={fraction}: overall={:.4} plain={:.4} pseudo-nodes={:.4}",
            mean(&accs),
            mean(&plain_accs),
            mean(&pseudo_accs)
        );
    }
}

#[test]
#[ignore]
fn calibrate_mask_rate_curve() {
    let synth = SynthConfig::default();
    let ds = generate_synthetic(&synth).unwrap();
    let cfg = PipelineConfig { mode: Mode::Glpn, ..fast_cfg() };
    let doc = glpn::pipeline::sweep(&ds, &cfg, SweepParameter::MaskRate, &[0.1, 0.3, 0.5, 0.7, 0.9], None)
        .unwrap();
    for e in &doc.result.entries {
        println!("rho={:.1}: acc={:.4} ± {:.4}", e.value, e.aggregate.accuracy.mean, e.aggregate.accuracy.std);
    }
}

#[test]
#[ignore]
fn calibrate_pseudo_fraction_curve() {
    let synth = SynthConfig::default();
    let ds = generate_synthetic(&synth).unwrap();
    for oracle_acc in [0.85, 0.7] {
        let cfg = PipelineConfig { mode: Mode::GlpnLlm, ..fast_cfg() };
        let source = PseudoSource::Oracle { accuracy: oracle_acc, sharpness: 8.0, seed: cfg.seed };
        let doc = glpn::pipeline::sweep(
            &ds,
            &cfg,
            SweepParameter::PseudoFraction,
            &[0.01, 0.05, 0.10, 0.5, 0.9],
            Some(&source),
        )
        .unwrap();
        println!("oracle accuracy {oracle_acc}:");
        for e in &doc.result.entries {
            println!(
                "  fraction={:.2}: acc={:.4} ± {:.4}",
                e.value, e.aggregate.accuracy.mean, e.aggregate.accuracy.std
            );
        }
    }
}

#[test]
#[ignore]
fn calibrate_separation_zero() {
    let synth = SynthConfig { class_separation: 0.0, ..Default::default() };
    graph_stats(&synth, 0.95);
    let cfg = fast_cfg();
    let fcn = mode_accuracy(&synth, Mode::Fcn, &cfg);
    println!("sep=0 fcn accuracy: {:.4}", fcn.0);

    // Leak diagnostic: unmasked GLPN (labels in features, loss on all train).
    let ds = generate_synthetic(&synth).unwrap();
    use glpn::gcn::{predict, train, MaskMode, TrainConfig};
    use glpn::labels::build_labels;
    use glpn::pseudo::{PseudoLabelSet, VerdictSource};
    let a_hat = normalize(&build_graph(&ds, 0.95).unwrap());
    let labels = build_labels(&ds, &PseudoLabelSet::empty(VerdictSource::Oracle, &ds)).unwrap();
    for mode in [MaskMode::Off, MaskMode::Grm] {
        let mut train_accs = Vec::new();
        let mut test_accs = Vec::new();
        for seed in 0..5u64 {
            let tc = TrainConfig {
                hidden: 32,
                epochs: 200,
                seed: 42 + seed,
                mask_mode: mode,
                ..Default::default()
            };
            let (model, _) = train(&ds, &a_hat, &labels, &tc).unwrap();
            let pred = predict(&ds, &a_hat, &labels, &model).unwrap();
            let acc_over = |indices: &[usize]| {
                let hit = indices
                    .iter()
                    .filter(|&&i| ds.records()[i].label == Some(pred.classes[i]))
                    .count();
                hit as f64 / indices.len() as f64
            };
            train_accs.push(acc_over(&ds.train_indices()));
            test_accs.push(acc_over(&ds.test_indices()));
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        println!(
            "{mode:?}: train acc mean={:.4} {:?}, test acc mean={:.4}",
            mean(&train_accs),
            train_accs,
            mean(&test_accs)
        );
    }
}
