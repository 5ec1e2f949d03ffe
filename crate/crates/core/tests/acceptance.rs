//! Acceptance run: one PASS/FAIL line per criterion. Exits non-zero on any failure.

mod common;

use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;

use common::*;
use seugnn_core::bits::BitMatrix;
use seugnn_core::dataset::{build_dataset, cross_testcase_view, load, save, Masks, SplitSpec};
use seugnn_core::faultsim::{run_campaign, simulate_golden, write_vcd, CampaignPlan, Stimulus};
use seugnn_core::models::{Arch, ModelSpec};
use seugnn_core::netlist::{gen_synthetic_circuit, Netlist};
use seugnn_core::nn::{gat_attention, Activation, AdamConfig, GatHead, GatLayer, Tape};
use seugnn_core::trainer::{
    evaluate, format_mean_std, generalization_report, majority_baseline, default_grid, repeat_experiments, train,
    tune, AuditLog, RunRecord, TrainOptions, TuneConfig, TuneInputs,
};
use seugnn_core::waveform::{parse_vcd_str, NameMap};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, start: Instant) -> Result<(), String> {
    let took = start.elapsed();
    ensure(took <= limit, || format!("took {took:.1?}, limit {limit:?}"))
}

fn rows(m: &BitMatrix) -> Vec<Vec<bool>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn grid_arithmetic() -> Outcome {
    let start = Instant::now();
    let a = CampaignPlan::new(3041, 40).total_samples();
    let b = CampaignPlan::new(2126, 20).total_samples();
    ensure(a == 121_640, || format!("3041 × 40 gave {a}"))?;
    ensure(b == 42_520, || format!("2126 × 20 gave {b}"))?;
    within(Duration::from_secs(1), start)?;
    Ok(format!("{a} and {b} samples"))
}

fn simulator_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = rng(99);
    let circuits = 100;
    for seed in 0..circuits {
        let n_ff = r.gen_range(2..=64);
        let cycles = r.gen_range(1..=50);
        let net = gen_synthetic_circuit(1000 + seed, n_ff, 1..=5);
        let stim = Stimulus::random(&net, cycles, seed);
        let golden = simulate_golden(&net, &stim).map_err(|e| e.to_string())?;
        let (ff, po) = fixpoint_sim(&net, &rows(stim.bits()), None);
        ensure(rows(&golden.ff) == ff && rows(&golden.po) == po, || {
            format!("circuit {seed} ({n_ff} FFs, {cycles} cycles) differs from the fixpoint oracle")
        })?;
    }
    let net = Netlist::parse(SHIFT_REGISTER).map_err(|e| e.to_string())?;
    let cycles = 6;
    let times = [1, 2, 3, 4];
    let labels = run_campaign(&net, &Stimulus::random(&net, cycles, 1), &times, None).map_err(|e| e.to_string())?;
    for k in 0..3 {
        for &t in &times {
            let expected = t + (2 - k) < cycles;
            let got = labels.get(k, t).map(|o| o.is_detected());
            ensure(got == Some(expected), || format!("shift register ff{k}@{t}: {got:?}"))?;
        }
    }
    within(Duration::from_secs(120), start)?;
    Ok(format!("{circuits} circuits bit-exact, 12/12 shift-register labels"))
}

fn layer_fidelity() -> Outcome {
    let start = Instant::now();
    let fixtures = 50;
    let (mut gcn, mut gat, mut tconv, mut aspp, mut rowsum) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for seed in 0..fixtures {
        let mut r = rng(7000 + seed);
        let n = r.gen_range(1..8);
        let t = r.gen_range(1..5);
        let (inp, out) = (r.gen_range(1..5), r.gen_range(1..5));
        let g = Graph::random(&mut r, n, 0.4, 16);
        let x: Vec<Mat> = (0..t).map(|_| rand_mat(&mut r, n, inp)).collect();

        let theta = rand_mat(&mut r, inp, out);
        let theta_e = rand_mat(&mut r, 1, 16).remove(0);
        let dense: Vec<Mat> = x.iter().map(|xt| gcn_dense(xt, &theta, &theta_e, &g)).collect();
        gcn = gcn.max(max_abs_diff(&gcn_tape(&x, &theta, &theta_e, &g), &stack(&dense)));

        let e_dim = r.gen_range(1..4);
        let p = GatParams::random(&mut r, inp, out, 16, e_dim);
        let dense: Vec<Mat> = x.iter().map(|xt| gat_dense(xt, &p, &g, 0.2)).collect();
        gat = gat.max(max_abs_diff(&gat_tape(&x, std::slice::from_ref(&p), &g, 0.2), &stack(&dense)));

        let tape = Tape::new();
        let layer = GatLayer {
            heads: vec![GatHead {
                theta: tape.param(to_tensor(&p.theta)),
                theta_e: tape.param(to_tensor(&p.theta_e)),
                a_s: tape.param(col_tensor(&p.a_s)),
                a_t: tape.param(col_tensor(&p.a_t)),
                a_e: tape.param(col_tensor(&p.a_e)),
            }],
            slope: 0.2,
            activation: Activation::Relu,
        };
        let att = gat_attention(&layer, tape.constant(to_tensor(&x[0])), &g.ctx()).map_err(|e| e.to_string())?;
        let mut sums = vec![0.0; n];
        for &(_, dst, a) in &att {
            sums[dst] += a;
        }
        rowsum = sums.iter().fold(rowsum, |m, s| m.max((s - 1.0).abs()));

        let (k, dil) = (r.gen_range(1..4), r.gen_range(1..4));
        let xt: Vec<Mat> = (0..dil * (k - 1) + t).map(|_| rand_mat(&mut r, n, inp)).collect();
        let theta = rand_mat(&mut r, k * inp, out);
        for (mode, causal) in [(seugnn_core::nn::ConvMode::Valid, false), (seugnn_core::nn::ConvMode::Causal, true)] {
            let got = tconv_tape(&xt, &theta, k, dil, mode).map_err(|e| e.to_string())?;
            tconv = tconv.max(max_abs_diff(&got, &stack(&tconv_dense(&xt, &taps(&theta, k), dil, causal))));
        }

        let hidden = r.gen_range(1..4);
        let f = AsppFixture::random(&mut r, inp, hidden, out, &[1, 2, 4]);
        for inner in [false, true] {
            aspp = aspp.max(max_abs_diff(&f.run(&x, inner, None), &f.dense(&x, inner)));
        }
    }
    for (name, err) in [("gcn", gcn), ("gat", gat), ("temporal conv", tconv), ("aspp", aspp)] {
        ensure(err < 1e-5, || format!("{name}: max abs diff {err:e}"))?;
    }
    ensure(rowsum < 1e-6, || format!("attention row sums off by {rowsum:e}"))?;
    within(Duration::from_secs(60), start)?;
    Ok(format!(
        "{fixtures} fixtures/layer; max diffs gcn {gcn:.1e} gat {gat:.1e} tconv {tconv:.1e} aspp {aspp:.1e}; rows {rowsum:.1e}"
    ))
}

fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let mut worst_layer = 0.0f64;
    for (layer, err) in layer_gradient_errors() {
        ensure(err < 1e-4, || format!("{layer}: relative error {err:e}"))?;
        worst_layer = worst_layer.max(err);
    }
    let mut worst_model = 0.0f64;
    for arch in Arch::ALL {
        let err = end_to_end_gradient_error(arch)?;
        ensure(err < 1e-3, || format!("{arch}: relative error {err:e}"))?;
        worst_model = worst_model.max(err);
    }
    within(Duration::from_secs(120), start)?;
    Ok(format!("worst layer {worst_layer:.1e}, worst model {worst_model:.1e}"))
}

fn end_to_end_learning() -> Outcome {
    let times: Vec<usize> = (1..=20).collect();
    let (net, wave, labels) = pipeline(7, 64, 80, &times);
    let base = build_dataset(&net, &wave, &labels, 6, 20, false).map_err(|e| e.to_string())?;
    let seeds = [0u64, 1, 2];
    let jobs: Vec<(Arch, u64)> = Arch::ALL.iter().flat_map(|&a| seeds.iter().map(move |&s| (a, s))).collect();
    let results: Vec<Result<(Arch, f64, f64, Duration), String>> = jobs
        .par_iter()
        .map(|&(arch, seed)| {
            let masks = SplitSpec::default().apply(&base, seed).map_err(|e| e.to_string())?;
            let ds = base.clone().with_masks(masks);
            let spec = ModelSpec::new(arch, 20, ds.graph.edge_dim());
            let start = Instant::now();
            let out = train::<f32>(&spec, &ds, &TrainOptions::default(), seed).map_err(|e| e.to_string())?;
            let took = start.elapsed();
            let acc = evaluate(&out.model, &ds, &ds.masks.test).map_err(|e| e.to_string())?.accuracy;
            let baseline = majority_baseline(&ds, &ds.masks.train, &ds.masks.test).map_err(|e| e.to_string())?;
            Ok((arch, acc, baseline, took))
        })
        .collect();
    let results = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut parts = Vec::new();
    for arch in Arch::ALL {
        let mine: Vec<_> = results.iter().filter(|r| r.0 == arch).collect();
        let acc = mine.iter().map(|r| r.1).sum::<f64>() / mine.len() as f64;
        let base = mine.iter().map(|r| r.2).sum::<f64>() / mine.len() as f64;
        let slowest = mine.iter().map(|r| r.3).max().unwrap_or_default();
        ensure(acc >= base + 5.0, || format!("{arch}: test {acc:.2}% vs baseline {base:.2}%"))?;
        ensure(slowest <= Duration::from_secs(600), || format!("{arch}: training took {slowest:?}"))?;
        parts.push(format!("{arch} {acc:.2}% (+{:.1})", acc - base));
    }
    Ok(format!("{}; baseline from train majority", parts.join(", ")))
}

fn tuning_protocol() -> Outcome {
    let grid = default_grid();
    ensure(grid.len() == 25, || format!("grid has {} points", grid.len()))?;
    let times: Vec<usize> = (1..=24).collect();
    let (wave, labels) = lagged_label_case(12, &times, 59, 11);
    let net = gen_synthetic_circuit(11, 12, 1..=3);
    let cfg = TuneConfig {
        arch: Arch::Astgcn,
        hidden: 8,
        train: TrainOptions {
            adam: AdamConfig {
                lr: 1e-2,
                ..AdamConfig::default()
            },
            max_epochs: 60,
            patience: 20,
        },
        ..TuneConfig::default()
    };
    ensure(cfg.grid() == grid, || "default tuner grid differs from the 25-point grid".into())?;
    let log = AuditLog::new();
    let inputs = TuneInputs {
        netlist: &net,
        wave: &wave,
        labels: &labels,
    };
    let (report, _, _) = tune::<f32>(inputs, &cfg, 0, &log).map_err(|e| e.to_string())?;
    ensure(report.grid.len() == 25, || format!("{} grid points trained", report.grid.len()))?;
    ensure(report.selected.time_win_size == 60, || format!("selected {:?}", report.selected))?;
    ensure(log.isolation_holds(), || "test mask opened before selection".into())?;
    Ok(format!(
        "25 points trained, selected md={} tw={} (val {:.1}%), isolation audit clean",
        report.selected.max_distance, report.selected.time_win_size, report.val.accuracy
    ))
}

fn reporting() -> Outcome {
    let b = generalization_report(&[3.0, 1.0, 4.0, 2.0]).ok_or("no box stats")?;
    let got = [b.min, b.p25, b.median, b.p75, b.max];
    ensure(got == [1.0, 1.75, 2.5, 3.25, 4.0], || format!("box stats {got:?}"))?;
    ensure(format_mean_std(96.15, 1.27) == "96.15 ± 1.27", || "format".into())?;

    let times: Vec<usize> = (1..=10).collect();
    let (net, wave, labels) = pipeline(31, 16, 40, &times);
    let base = build_dataset(&net, &wave, &labels, 6, 10, false).map_err(|e| e.to_string())?;
    let opts = TrainOptions {
        max_epochs: 10,
        ..TrainOptions::default()
    };
    let spec = |ds: &seugnn_core::dataset::SeuDataset| {
        let mut s = ModelSpec::new(Arch::Stgcn, 10, ds.graph.edge_dim());
        s.hidden = 8;
        s
    };
    let report = repeat_experiments(&[0, 1], |seed| {
        let ds = base.clone().with_masks(SplitSpec::default().apply(&base, seed)?);
        let out = train::<f32>(&spec(&ds), &ds, &opts, seed)?;
        let val = evaluate(&out.model, &ds, &ds.masks.val)?;
        let test = evaluate(&out.model, &ds, &ds.masks.test)?;
        Ok(RunRecord {
            seed,
            val,
            test,
            gaps: vec![val.accuracy - test.accuracy],
            selected: None,
        })
    })
    .map_err(|e| e.to_string())?;
    let accs: Vec<f64> = report.runs.iter().map(|r| r.test.accuracy).collect();
    let mean = (accs[0] + accs[1]) / 2.0;
    let std = (accs[0] - accs[1]).abs() / 2f64.sqrt();
    let cell = format_mean_std(mean, std);
    ensure(report.table().contains(&cell), || format!("table lacks `{cell}`:\n{}", report.table()))?;

    // Cross-test-case: train on stimulus A, evaluate on stimulus B without retraining.
    let ds = base.clone().with_masks(SplitSpec::default().apply(&base, 0).map_err(|e| e.to_string())?);
    let model = train::<f32>(&spec(&ds), &ds, &opts, 0).map_err(|e| e.to_string())?.model;
    let before = model.params.clone();
    let stim_b = Stimulus::random(&net, 40, 999);
    let golden_b = simulate_golden(&net, &stim_b).map_err(|e| e.to_string())?;
    let wave_b = seugnn_core::waveform::WaveMatrix {
        values: golden_b.ff,
        ..wave.clone()
    };
    let labels_b = run_campaign(&net, &stim_b, &times, None).map_err(|e| e.to_string())?;
    let view = cross_testcase_view(&ds, &net, &wave_b, &labels_b).map_err(|e| e.to_string())?;
    let m = evaluate(&model, &view, &view.masks.test).map_err(|e| e.to_string())?;
    ensure(m.total() == 16 * 10, || format!("cross-case evaluated {} cells", m.total()))?;
    ensure(model.params == before, || "parameters changed".into())?;
    Ok(format!("table cell `{cell}`, box stats exact, cross-case accuracy {:.2}% on {} cells", m.accuracy, m.total()))
}

fn round_trips() -> Outcome {
    let mut fixtures = vec![Netlist::parse(SHIFT_REGISTER).map_err(|e| e.to_string())?];
    fixtures.extend((0..20).map(|s| gen_synthetic_circuit(s, 2 + 3 * s as usize, 1..=4)));
    for net in &fixtures {
        let back = Netlist::parse(&net.to_json()).map_err(|e| e.to_string())?;
        ensure(&back == net, || format!("netlist {} changed", net.name()))?;

        let stim = Stimulus::random(net, 25, 3);
        let golden = simulate_golden(net, &stim).map_err(|e| e.to_string())?;
        let mut buf = Vec::new();
        write_vcd(&golden, net, &mut buf).map_err(|e| e.to_string())?;
        let text = String::from_utf8(buf).map_err(|e| e.to_string())?;
        let clock = format!("{}.{}", net.name(), net.clock());
        let wave = parse_vcd_str(&text, &clock, &NameMap::default_for(net), 0).map_err(|e| e.to_string())?;
        ensure(wave.values == golden.ff, || format!("VCD of {} changed", net.name()))?;
    }

    let (net, wave, labels) = pipeline(41, 20, 30, &(1..=8).collect::<Vec<_>>());
    let ds = build_dataset(&net, &wave, &labels, 6, 10, false).map_err(|e| e.to_string())?;
    let mut split_runs: Vec<Masks> = Vec::new();
    for threads in [1, 1, 4, 4] {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| e.to_string())?;
        split_runs.push(pool.install(|| SplitSpec::default().apply(&ds, 5)).map_err(|e| e.to_string())?);
    }
    ensure(split_runs.windows(2).all(|w| w[0] == w[1]), || "split differs between runs".into())?;
    let ds = ds.with_masks(split_runs.remove(0));
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    save(&ds, dir.path()).map_err(|e| e.to_string())?;
    let back = load(dir.path()).map_err(|e| e.to_string())?;
    ensure(back == ds, || "dataset changed on reload".into())?;
    Ok(format!("{} netlists + VCDs, dataset save/load, split x2 runs x2 job counts", fixtures.len()))
}

fn main() {
    let criteria: [(u8, &str, fn() -> Outcome); 8] = [
        (1, "grid arithmetic", grid_arithmetic),
        (2, "simulator oracle equivalence", simulator_oracle),
        (3, "layer equation fidelity", layer_fidelity),
        (4, "gradient correctness", gradient_checks),
        (5, "end-to-end learning", end_to_end_learning),
        (6, "tuning protocol", tuning_protocol),
        (7, "reporting fidelity", reporting),
        (8, "round trips", round_trips),
    ];
    let mut failed = 0;
    for (id, name, check) in criteria {
        let start = Instant::now();
        let result = check();
        let took = start.elapsed();
        match result {
            Ok(detail) => println!("PASS [{id}] {name}: {detail} ({took:.1?})"),
            Err(why) => {
                failed += 1;
                println!("FAIL [{id}] {name}: {why} ({took:.1?})");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
