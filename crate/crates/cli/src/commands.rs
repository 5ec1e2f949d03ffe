use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::json;

use seugnn_core::dataset::{self, cross_testcase_view, Masks, SeuDataset};
use seugnn_core::faultsim::{run_campaign, simulate_golden, write_vcd, FaultLabelSet, Stimulus};
use seugnn_core::models::{Model, ModelSpec};
use seugnn_core::netlist::{gen_synthetic_circuit, Netlist};
use seugnn_core::nn::AdamConfig;
use seugnn_core::trainer::{
    self, evaluate, predict_all, repeat_experiments, AuditLog, EpochRecord, GridPoint, Metrics, RepeatReport,
    RunRecord, TrainOptions, TuneConfig, TuneInputs, TuneReport,
};
use seugnn_core::waveform::{parse_vcd_str, NameMap, WaveMatrix};

use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;
use crate::{
    BuildDatasetArgs, FaultsimArgs, GenCircuitArgs, GenStimulusArgs, NetlistCheckArgs, PredictArgs, ReportArgs,
    TrainArgs, TuneArgs, WaveArgs,
};

const REPORT_FILE: &str = "report.json";
const CHECKPOINT_DIR: &str = "checkpoint";

// ---- helpers ---------------------------------------------------------------

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::validation(e.to_string()).at(path))
}

fn write_bytes(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::runtime(e.to_string()).at(parent))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::runtime(e.to_string()).at(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    write_bytes(path, text + "\n")
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::runtime(e.to_string()).at(dir))
}

fn load_netlist(path: &Path) -> CliResult<Netlist> {
    let net = read_text(path)?.parse::<Netlist>().map_err(|e| CliError::from(e).at(path))?;
    info!(
        "netlist {}: {} flip-flops, {} gates",
        net.name(),
        net.num_flip_flops(),
        net.num_combinational()
    );
    Ok(net)
}

fn load_labels(path: &Path, netlist: &Netlist) -> CliResult<FaultLabelSet> {
    FaultLabelSet::from_json(&read_text(path)?, netlist.num_flip_flops()).map_err(|e| CliError::from(e).at(path))
}

fn load_wave(netlist: &Netlist, vcd: &Path, name_map: Option<&Path>, clock: Option<&str>, offset: u64) -> CliResult<WaveMatrix> {
    let names = match name_map {
        Some(p) => NameMap::from_json(&read_text(p)?, netlist).map_err(|e| CliError::from(e).at(p))?,
        None => NameMap::default_for(netlist),
    };
    let clock = clock.map_or_else(|| default_clock(netlist), str::to_string);
    let wave = parse_vcd_str(&read_text(vcd)?, &clock, &names, offset).map_err(|e| CliError::from(e).at(vcd))?;
    info!("{}: {} cycles of {} flip-flops", vcd.display(), wave.cycles(), wave.num_nodes());
    Ok(wave)
}

fn load_wave_args(netlist: &Netlist, w: &WaveArgs) -> CliResult<WaveMatrix> {
    load_wave(netlist, &w.vcd, w.name_map.as_deref(), w.clock.as_deref(), w.sample_offset)
}

/// Hierarchical clock name of the VCDs written by `faultsim`.
fn default_clock(netlist: &Netlist) -> String {
    format!("{}.{}", netlist.name(), netlist.clock())
}

fn wave_inputs(m: &mut RunManifest, w: &WaveArgs) -> CliResult<()> {
    m.input("vcd", &w.vcd)?;
    if let Some(p) = &w.name_map {
        m.input("name_map", p)?;
    }
    Ok(())
}

fn load_dataset(dir: &Path) -> CliResult<SeuDataset> {
    let ds = dataset::load(dir).map_err(|e| CliError::from(e).at(dir))?;
    info!(
        "dataset {}: {} flip-flops × {} injection times, {} edges",
        ds.meta.circuit,
        ds.num_nodes(),
        ds.num_times(),
        ds.graph.edges.len()
    );
    Ok(ds)
}

/// Accepts a checkpoint directory or a run directory containing one.
fn checkpoint_dir(path: &Path) -> PathBuf {
    let nested = path.join(CHECKPOINT_DIR);
    if !path.join("spec.json").exists() && nested.join("spec.json").exists() {
        nested
    } else {
        path.to_path_buf()
    }
}

/// Parses `1-40`, `3`, `0,2,4-6` into an ascending, duplicate-free list.
pub fn parse_list(text: &str) -> Result<Vec<usize>, String> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let num = |s: &str| s.trim().parse::<usize>().map_err(|_| format!("`{s}` is not a non-negative integer"));
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b) = (num(a)?, num(b)?);
                if a > b {
                    return Err(format!("empty range `{part}`"));
                }
                out.extend(a..=b);
            }
            None => out.push(num(part)?),
        }
    }
    out.sort_unstable();
    out.dedup();
    if out.is_empty() {
        return Err(format!("`{text}` lists no values"));
    }
    Ok(out)
}

fn list_arg(flag: &str, text: &str) -> CliResult<Vec<usize>> {
    parse_list(text).map_err(|e| CliError::validation(format!("--{flag}: {e}")))
}

fn metrics_line(name: &str, m: &Metrics) -> String {
    let pct = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.2}"));
    format!(
        "{name:<10} accuracy {:.2}  precision {}  recall {}  (tp {} fp {} tn {} fn {})",
        m.accuracy,
        pct(m.precision),
        pct(m.recall),
        m.tp,
        m.fp,
        m.tn,
        m.fn_
    )
}

// ---- netlist-check / gen-circuit / gen-stimulus ------------------------------

pub fn netlist_check(a: &NetlistCheckArgs) -> CliResult<()> {
    let net = load_netlist(&a.netlist)?;
    let summary = json!({
        "circuit": net.name(),
        "clock": net.clock(),
        "primary_inputs": net.inputs().len(),
        "primary_outputs": net.outputs().len(),
        "flip_flops": net.num_flip_flops(),
        "combinational_gates": net.num_combinational(),
        "structure_hash": net.structure_hash(),
    });
    println!("{}: ok", a.netlist.display());
    for (k, v) in summary.as_object().expect("object") {
        println!("  {k:<20} {v}");
    }
    if let Some(out) = &a.out {
        write_json(out, &summary)?;
        let mut m = RunManifest::new("netlist-check", json!({}));
        m.input("netlist", &a.netlist)?;
        m.output(out);
        m.write_beside(out)?;
    }
    Ok(())
}

pub fn gen_circuit(a: &GenCircuitArgs) -> CliResult<()> {
    if a.n_ff == 0 {
        return Err(CliError::validation("--n-ff must be at least 1"));
    }
    if a.cone_min > a.cone_max {
        return Err(CliError::validation("--cone-min exceeds --cone-max"));
    }
    let net = gen_synthetic_circuit(a.seed, a.n_ff, a.cone_min..=a.cone_max);
    write_bytes(&a.out, net.to_json())?;
    let mut m = RunManifest::new(
        "gen-circuit",
        json!({ "seed": a.seed, "n_ff": a.n_ff, "cone_min": a.cone_min, "cone_max": a.cone_max }),
    );
    m.output(&a.out);
    m.write_beside(&a.out)?;
    println!("{}: {} flip-flops, {} gates", a.out.display(), net.num_flip_flops(), net.num_combinational());
    Ok(())
}

pub fn gen_stimulus(a: &GenStimulusArgs) -> CliResult<()> {
    if a.cycles == 0 {
        return Err(CliError::validation("--cycles must be at least 1"));
    }
    let net = load_netlist(&a.netlist)?;
    let stim = Stimulus::random(&net, a.cycles, a.seed);
    write_bytes(&a.out, stim.to_json(&net))?;
    let mut m = RunManifest::new("gen-stimulus", json!({ "cycles": a.cycles, "seed": a.seed }));
    m.input("netlist", &a.netlist)?;
    m.output(&a.out);
    m.write_beside(&a.out)?;
    println!("{}: {} cycles × {} inputs", a.out.display(), a.cycles, net.inputs().len());
    Ok(())
}

// ---- faultsim ----------------------------------------------------------------

pub fn faultsim(a: &FaultsimArgs) -> CliResult<()> {
    let net = load_netlist(&a.netlist)?;
    let stim = match (&a.stimulus, a.cycles) {
        (Some(p), _) => Stimulus::from_json(&net, &read_text(p)?).map_err(|e| CliError::from(e).at(p))?,
        (None, Some(0)) => return Err(CliError::validation("--cycles must be at least 1")),
        (None, Some(c)) => Stimulus::random(&net, c, a.seed),
        (None, None) => return Err(CliError::validation("either --stimulus or --cycles is required")),
    };
    let times = list_arg("times", &a.times)?;
    let labels = run_campaign(&net, &stim, &times, None)?;
    write_bytes(&a.labels, labels.to_json())?;

    let mut m = RunManifest::new(
        "faultsim",
        json!({ "times": times, "cycles": stim.cycles(), "seed": a.stimulus.is_none().then_some(a.seed) }),
    );
    m.input("netlist", &a.netlist)?;
    if let Some(p) = &a.stimulus {
        m.input("stimulus", p)?;
    }
    m.output(&a.labels);
    if let Some(vcd) = &a.vcd {
        let golden = simulate_golden(&net, &stim)?;
        let mut buf = Vec::new();
        write_vcd(&golden, &net, &mut buf).map_err(|e| CliError::runtime(e.to_string()))?;
        write_bytes(vcd, buf)?;
        m.output(vcd);
    }
    m.write_beside(&a.labels)?;
    println!(
        "{}: {} labels ({} flip-flops × {} times), {:.2}% detected",
        a.labels.display(),
        labels.len(),
        net.num_flip_flops(),
        times.len(),
        100.0 * labels.positive_rate()
    );
    Ok(())
}

// ---- build-dataset -------------------------------------------------------------

pub fn build_dataset(a: &BuildDatasetArgs) -> CliResult<()> {
    a.split.validate()?;
    let net = load_netlist(&a.netlist)?;
    let wave = load_wave_args(&net, &a.wave)?;
    let labels = load_labels(&a.labels, &net)?;
    let ds = dataset::build_dataset(&net, &wave, &labels, a.max_distance, a.time_win_size, a.undirected)?;
    let masks = a.split.apply(&ds, a.seed)?;
    let mut ds = ds.with_masks(masks);
    ds.meta.seed = a.seed;
    ds.meta.split = Some(a.split.to_string());
    dataset::save(&ds, &a.out).map_err(|e| CliError::from(e).at(&a.out))?;

    let mut m = RunManifest::new(
        "build-dataset",
        json!({
            "max_distance": a.max_distance,
            "time_win_size": a.time_win_size,
            "split": a.split,
            "seed": a.seed,
            "undirected": a.undirected,
            "sample_offset": a.wave.sample_offset,
        }),
    );
    m.input("netlist", &a.netlist)?;
    wave_inputs(&mut m, &a.wave)?;
    m.input("labels", &a.labels)?;
    m.output(&a.out);
    m.write_in(&a.out)?;
    println!(
        "{}: {} cells, {} edges, split {} → train {} / val {} / test {}",
        a.out.display(),
        ds.grid_size(),
        ds.graph.edges.len(),
        a.split,
        Masks::count(&ds.masks.train),
        Masks::count(&ds.masks.val),
        Masks::count(&ds.masks.test)
    );
    Ok(())
}

// ---- train ---------------------------------------------------------------------

/// `report.json` of a `train` run.
#[derive(Debug, Serialize, Deserialize)]
struct TrainReport {
    circuit: String,
    seed: u64,
    spec: ModelSpec,
    options: TrainOptions,
    best_epoch: Option<usize>,
    history: Vec<EpochRecord>,
    val: Option<Metrics>,
    test: Option<Metrics>,
    /// The run in the form `report` aggregates; empty without val and test cells.
    runs: Vec<RunRecord>,
}

fn evaluate_if_any(model: &Model<f32>, ds: &SeuDataset, mask: &seugnn_core::bits::BitMatrix) -> CliResult<Option<Metrics>> {
    if Masks::any(mask) {
        Ok(Some(evaluate(model, ds, mask)?))
    } else {
        Ok(None)
    }
}

pub fn train(a: &TrainArgs) -> CliResult<()> {
    let ds = load_dataset(&a.dataset)?;
    let mut spec = ModelSpec::new(a.arch, ds.meta.time_win_size, ds.graph.edge_dim());
    spec.hidden = a.hidden;
    spec.validate()?;
    let options = TrainOptions {
        adam: AdamConfig {
            lr: a.lr,
            ..AdamConfig::default()
        },
        max_epochs: a.epochs,
        patience: a.patience,
    };
    let out = trainer::train::<f32>(&spec, &ds, &options, a.seed)?;
    info!("trained {} epochs, best epoch {:?}", out.history.len(), out.best_epoch);

    let val = evaluate_if_any(&out.model, &ds, &ds.masks.val)?;
    let test = evaluate_if_any(&out.model, &ds, &ds.masks.test)?;
    let runs = match (val, test) {
        (Some(val), Some(test)) => vec![RunRecord {
            seed: a.seed,
            val,
            test,
            gaps: vec![val.accuracy - test.accuracy],
            selected: None,
        }],
        _ => Vec::new(),
    };

    create_dir(&a.out)?;
    let ckpt = a.out.join(CHECKPOINT_DIR);
    out.model.save(&ckpt).map_err(|e| CliError::from(e).at(&ckpt))?;
    let report = TrainReport {
        circuit: ds.meta.circuit.clone(),
        seed: a.seed,
        spec,
        options,
        best_epoch: out.best_epoch,
        history: out.history,
        val,
        test,
        runs,
    };
    let report_path = a.out.join(REPORT_FILE);
    write_json(&report_path, &report)?;

    let mut m = RunManifest::new("train", json!({ "arch": a.arch, "seed": a.seed, "options": options, "hidden": a.hidden }));
    m.input("dataset", &a.dataset)?;
    m.output(&ckpt);
    m.output(&report_path);
    m.write_in(&a.out)?;

    println!("{}: {} epochs, best epoch {:?}", a.out.display(), report.history.len(), report.best_epoch);
    for (name, metrics) in [("validation", &report.val), ("test", &report.test)] {
        if let Some(metrics) = metrics {
            println!("{}", metrics_line(name, metrics));
        }
    }
    Ok(())
}

// ---- tune ----------------------------------------------------------------------

/// `report.json` of a `tune` run.
#[derive(Debug, Serialize, Deserialize)]
struct TuneRunReport {
    config: TuneConfig,
    /// Seed whose selected model is checkpointed (best validation accuracy).
    best_seed: u64,
    best: GridPoint,
    #[serde(flatten)]
    summary: RepeatReport,
    tunes: Vec<TuneReport>,
}

fn tune_config(a: &TuneArgs) -> CliResult<TuneConfig> {
    let mut cfg = match &a.config {
        Some(p) => serde_json::from_str(&read_text(p)?).map_err(|e| CliError::validation(e.to_string()).at(p))?,
        None => TuneConfig::default(),
    };
    if let Some(arch) = a.arch {
        cfg.arch = arch;
    }
    if let Some(split) = &a.split {
        cfg.split = *split;
    }
    if let Some(s) = &a.max_distances {
        cfg.max_distances = list_arg("max-distances", s)?;
    }
    if let Some(s) = &a.time_wins {
        cfg.time_wins = list_arg("time-wins", s)?;
    }
    if let Some(h) = a.hidden {
        cfg.hidden = h;
    }
    if let Some(lr) = a.lr {
        cfg.train.adam.lr = lr;
    }
    if let Some(e) = a.epochs {
        cfg.train.max_epochs = e;
    }
    if let Some(p) = a.patience {
        cfg.train.patience = p;
    }
    cfg.undirected |= a.undirected;
    cfg.split.validate()?;
    if cfg.time_wins.contains(&0) {
        return Err(CliError::validation("window sizes must be at least 1"));
    }
    Ok(cfg)
}

pub fn tune(a: &TuneArgs) -> CliResult<()> {
    let cfg = tune_config(a)?;
    let seeds: Vec<u64> = list_arg("seeds", &a.seeds)?.into_iter().map(|s| s as u64).collect();
    let net = load_netlist(&a.netlist)?;
    let wave = load_wave_args(&net, &a.wave)?;
    let labels = load_labels(&a.labels, &net)?;
    let inputs = TuneInputs {
        netlist: &net,
        wave: &wave,
        labels: &labels,
    };

    let finished: Mutex<Vec<(TuneReport, Model<f32>, SeuDataset)>> = Mutex::new(Vec::new());
    let summary = repeat_experiments(&seeds, |seed| {
        let log = AuditLog::new();
        let (report, model, ds) = trainer::tune::<f32>(inputs, &cfg, seed, &log)?;
        assert!(log.isolation_holds(), "test data was opened before selection");
        let record = RunRecord {
            seed,
            val: report.val,
            test: report.test,
            gaps: report.grid.iter().map(|g| g.gap).collect(),
            selected: Some(report.selected),
        };
        finished.lock().expect("no poisoning").push((report, model, ds));
        Ok(record)
    })?;
    let mut finished = finished.into_inner().expect("no poisoning");
    finished.sort_by_key(|(r, _, _)| r.seed);
    let best = finished
        .iter()
        .enumerate()
        .max_by(|(i, x), (j, y)| x.0.val.accuracy.total_cmp(&y.0.val.accuracy).then(j.cmp(i)))
        .map(|(i, _)| i)
        .expect("at least one run succeeded");

    create_dir(&a.out)?;
    let (best_report, best_model, best_ds) = &finished[best];
    let ckpt = a.out.join(CHECKPOINT_DIR);
    best_model.save(&ckpt).map_err(|e| CliError::from(e).at(&ckpt))?;
    let ds_dir = a.out.join("dataset");
    dataset::save(best_ds, &ds_dir).map_err(|e| CliError::from(e).at(&ds_dir))?;

    let mut gaps = String::from("seed,max_distance,time_win_size,val_accuracy,gap\n");
    for (r, _, _) in &finished {
        for g in &r.grid {
            gaps.push_str(&format!(
                "{},{},{},{},{}\n",
                r.seed, g.point.max_distance, g.point.time_win_size, g.val.accuracy, g.gap
            ));
        }
    }
    let gaps_path = a.out.join("gaps.csv");
    write_bytes(&gaps_path, gaps)?;

    let table = summary.table();
    let report = TuneRunReport {
        config: cfg.clone(),
        best_seed: best_report.seed,
        best: best_report.selected,
        summary,
        tunes: finished.into_iter().map(|(r, _, _)| r).collect(),
    };
    let report_path = a.out.join(REPORT_FILE);
    write_json(&report_path, &report)?;

    let mut m = RunManifest::new("tune", json!({ "config": cfg, "seeds": seeds }));
    m.input("netlist", &a.netlist)?;
    wave_inputs(&mut m, &a.wave)?;
    m.input("labels", &a.labels)?;
    if let Some(p) = &a.config {
        m.input("config", p)?;
    }
    for p in [&ckpt, &ds_dir, &gaps_path, &report_path] {
        m.output(p);
    }
    m.write_in(&a.out)?;

    println!(
        "{}: best max_distance {} time_win_size {} (seed {})",
        a.out.display(),
        report.best.max_distance,
        report.best.time_win_size,
        report.best_seed
    );
    print!("{table}");
    Ok(())
}

// ---- predict -------------------------------------------------------------------

pub fn predict(a: &PredictArgs) -> CliResult<()> {
    let ckpt = checkpoint_dir(&a.checkpoint);
    let model = Model::<f32>::load(&ckpt).map_err(|e| CliError::from(e).at(&ckpt))?;
    let ds = load_dataset(&a.dataset)?;
    if model.spec.time_win_size != ds.meta.time_win_size || model.spec.edge_dim != ds.graph.edge_dim() {
        return Err(CliError::validation(format!(
            "checkpoint expects window {} and edge width {}, dataset has {} and {}",
            model.spec.time_win_size,
            model.spec.edge_dim,
            ds.meta.time_win_size,
            ds.graph.edge_dim()
        )));
    }

    let mut m = RunManifest::new("predict", json!({ "sample_offset": a.sample_offset }));
    m.input("checkpoint", &ckpt)?;
    m.input("dataset", &a.dataset)?;
    let view = match (&a.netlist, &a.vcd, &a.labels) {
        (Some(np), Some(vcd), Some(lp)) => {
            let net = load_netlist(np)?;
            let wave = load_wave(&net, vcd, a.name_map.as_deref(), a.clock.as_deref(), a.sample_offset)?;
            let labels = load_labels(lp, &net)?;
            m.input("netlist", np)?;
            m.input("vcd", vcd)?;
            m.input("labels", lp)?;
            if let Some(p) = &a.name_map {
                m.input("name_map", p)?;
            }
            cross_testcase_view(&ds, &net, &wave, &labels)?
        }
        _ => ds,
    };

    let preds = predict_all(&model, &view)?;
    let triples: Vec<[usize; 3]> = view
        .samples
        .iter()
        .zip(&preds)
        .flat_map(|(s, row)| row.iter().enumerate().map(move |(ff, &p)| [ff, s.t_seu, usize::from(p)]))
        .collect();
    let metrics = evaluate_if_any(&model, &view, &view.masks.test)?;

    create_dir(&a.out)?;
    let pred_path = a.out.join("predictions.json");
    write_bytes(&pred_path, serde_json::to_string(&triples).expect("serializes") + "\n")?;
    let metrics_path = a.out.join("metrics.json");
    write_json(&metrics_path, &json!({ "circuit": view.meta.circuit, "test": metrics }))?;
    m.output(&pred_path);
    m.output(&metrics_path);
    m.write_in(&a.out)?;

    println!("{}: {} predictions", a.out.display(), triples.len());
    match &metrics {
        Some(metrics) => println!("{}", metrics_line("test", metrics)),
        None => println!("no test cells to score"),
    }
    Ok(())
}

// ---- report --------------------------------------------------------------------

#[derive(Deserialize)]
struct RunsOnly {
    runs: Vec<RunRecord>,
}

pub fn report(a: &ReportArgs) -> CliResult<()> {
    let mut runs = Vec::new();
    for dir in &a.runs {
        let path = dir.join(REPORT_FILE);
        let parsed: RunsOnly =
            serde_json::from_str(&read_text(&path)?).map_err(|e| CliError::validation(e.to_string()).at(&path))?;
        runs.extend(parsed.runs);
    }
    let summary =
        RepeatReport::from_runs(runs, Vec::new()).ok_or_else(|| CliError::validation("the runs hold no evaluated experiments"))?;
    print!("{}", summary.table());
    if let Some(out) = &a.out {
        write_json(out, &summary)?;
        let mut m = RunManifest::new("report", json!({}));
        for dir in &a.runs {
            m.input("report", &dir.join(REPORT_FILE))?;
        }
        m.output(out);
        m.write_beside(out)?;
    }
    Ok(())
}
