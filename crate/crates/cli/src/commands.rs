use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde_json::json;
use sgs_core::data::{
    fmt_sig6, generate_toy, load_dataset, save_dataset, save_grids, write_csv, CsvTable,
};
use sgs_core::distill::{
    checkpoint, history_csv, resultant_maps, run_distillation, run_dm_baseline,
};
use sgs_core::eval::{config_hash, id_protocol, mdg_protocol, sdg_protocol, style_featurizer};
use sgs_core::numerics::Complex64;
use sgs_core::oracle::{attenuation_curve, resultant_sweep, sweep_csv, SpectralModel};
use sgs_core::pseudo::{assign_pseudo_domains, purity};
use sgs_core::{DistillConfig, EvalReport, MultiDomainDataset, Protocol, Split, SyntheticSet};

use crate::config::{parse_list, RunConfig};
use crate::{CliError, Command, Common};

const MAX_GRID: usize = 64;

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenData { common } => gen_data(&common),
        Command::Distill { common, dump_rmaps } => distill(&common, dump_rmaps),
        Command::Eval { common } => eval(&common),
        Command::Oracle {
            common,
            s_list,
            trials,
        } => oracle(&common, s_list.as_deref(), trials),
        Command::Cluster { common } => cluster(&common),
        Command::Sweep {
            common,
            param,
            values,
            jobs,
        } => sweep(&common, &param, &values, jobs),
    }
}

fn resolve(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    common.overrides.apply(&mut cfg)?;
    cfg.validate()?;
    Ok(cfg)
}

fn out_path(common: &Common, name: &str) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(&common.out)
        .map_err(|e| CliError::Io(format!("{}: {e}", common.out.display())))?;
    Ok(common.out.join(name))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value).expect("json value serializes");
    s.push('\n');
    write_text(path, &s)
}

fn load_data(common: &Common, cfg: &RunConfig) -> Result<MultiDomainDataset, CliError> {
    match &common.data {
        Some(path) => Ok(load_dataset(path)?),
        None => Ok(generate_toy(&cfg.toy, cfg.data_seed)?),
    }
}

fn distill_once(
    source: &MultiDomainDataset,
    cfg: &DistillConfig,
    dm_only: bool,
) -> sgs_core::Result<SyntheticSet> {
    let out = if dm_only {
        run_dm_baseline(source, cfg)?
    } else {
        run_distillation(source, cfg)?
    };
    Ok(out.set)
}

fn gen_data(common: &Common) -> Result<(), CliError> {
    let cfg = resolve(common)?;
    let ds = generate_toy(&cfg.toy, cfg.data_seed)?;
    let path = out_path(common, "dataset.dgdd")?;
    save_dataset(&ds, &path)?;
    write_text(&out_path(common, "resolved_config.json")?, &cfg.to_json())?;
    println!("{} ({} samples)", path.display(), ds.samples.len());
    Ok(())
}

fn distill(common: &Common, dump_rmaps: bool) -> Result<(), CliError> {
    let cfg = resolve(common)?;
    let data = load_data(common, &cfg)?;
    let train = data.filtered(|s| s.split == Split::Train);
    let tag = cfg.tag()?;
    let outcome = if cfg.dm_only {
        run_dm_baseline(&train, &cfg.distill)?
    } else {
        run_distillation(&train, &cfg.distill)?
    };
    let path = out_path(common, &format!("synthetic_{tag}.dgdd"))?;
    checkpoint(&outcome.set, &cfg.distill, &path)?;
    write_csv(
        &out_path(common, &format!("history_{tag}.csv"))?,
        &history_csv(&outcome.history),
    )?;
    if dump_rmaps {
        let maps = resultant_maps(&train, &outcome.set, &cfg.distill)?;
        let grids: Vec<(u16, u16, &_)> = maps
            .iter()
            .enumerate()
            .map(|(i, m)| {
                (
                    outcome.set.labels[i] as u16,
                    outcome.set.domains[i] as u16,
                    m,
                )
            })
            .collect();
        save_grids(&out_path(common, &format!("rmaps_{tag}.dgdd"))?, &grids)?;
    }
    write_text(
        &out_path(common, &format!("resolved_config_{tag}.json"))?,
        &cfg.to_json(),
    )?;
    println!("{}", path.display());
    Ok(())
}

fn evaluate(data: &MultiDomainDataset, cfg: &RunConfig) -> Result<EvalReport, CliError> {
    let distill = |source: &MultiDomainDataset, seed: u64| {
        let run = DistillConfig {
            seed,
            ..cfg.distill.clone()
        };
        distill_once(source, &run, cfg.dm_only)
    };
    let mut report = match cfg.protocol {
        Protocol::Mdg => mdg_protocol(data, &distill, &cfg.eval)?,
        Protocol::Id => id_protocol(data, &distill, &cfg.eval)?,
        Protocol::Sdg => sdg_protocol(data, cfg.sdg.source_domain, cfg.sdg.k, &distill, &cfg.eval)?,
    };
    report.config_hash = config_hash(cfg)?;
    Ok(report)
}

fn protocol_name(p: Protocol) -> &'static str {
    match p {
        Protocol::Mdg => "mdg",
        Protocol::Sdg => "sdg",
        Protocol::Id => "id",
    }
}

fn eval(common: &Common) -> Result<(), CliError> {
    let cfg = resolve(common)?;
    let data = load_data(common, &cfg)?;
    let tag = cfg.tag()?;
    let name = protocol_name(cfg.protocol);
    let report = evaluate(&data, &cfg)?;
    write_csv(
        &out_path(common, &format!("eval_{name}_{tag}.csv"))?,
        &report.to_csv(),
    )?;
    write_json(
        &out_path(common, &format!("summary_{name}_{tag}.json"))?,
        &report.summary_json(),
    )?;
    write_text(
        &out_path(common, &format!("resolved_config_{tag}.json"))?,
        &cfg.to_json(),
    )?;
    println!("{name} mean {:.4} std {:.4}", report.mean(), report.std());
    Ok(())
}

fn oracle(common: &Common, s_list: Option<&str>, trials: Option<usize>) -> Result<(), CliError> {
    let mut cfg = resolve(common)?;
    if let Some(s) = s_list {
        cfg.oracle.s_list = parse_list(s)?;
    }
    if let Some(t) = trials {
        cfg.oracle.trials = t;
    }
    let o = &cfg.oracle;
    let shared = Complex64::new(1.0, 0.0);
    let model = SpectralModel::new(shared, o.half_width, o.mag_min, o.mag_max, o.trials)?;
    let curve = attenuation_curve(&model, &o.s_list, cfg.data_seed)?;
    let aligned = SpectralModel {
        half_width: 0.0,
        ..model
    };
    let kept = attenuation_curve(&aligned, &o.s_list, cfg.data_seed)?;
    let sweep_model = SpectralModel {
        trials: o.sweep_trials,
        ..model
    };
    let sweep = resultant_sweep(
        &sweep_model,
        &o.sweep_half_widths,
        o.sweep_domains,
        cfg.data_seed,
    )?;

    write_csv(&out_path(common, "oracle_class.csv")?, &curve.to_csv())?;
    write_csv(
        &out_path(common, "oracle_consensus.csv")?,
        &curve.mean_csv(),
    )?;
    write_csv(&out_path(common, "oracle_aligned.csv")?, &kept.to_csv())?;
    write_csv(&out_path(common, "oracle_sweep.csv")?, &sweep_csv(&sweep))?;
    let summary = json!({
        "s_list": o.s_list,
        "trials": o.trials,
        "class_slope": curve.class_slope,
        "consensus_slope": curve.mean_slope,
        "aligned_slope": kept.class_slope,
        "aligned_magnitude": kept.class_magnitude,
        "sweep": sweep,
    });
    write_json(&out_path(common, "oracle_summary.json")?, &summary)?;
    write_text(&out_path(common, "resolved_config.json")?, &cfg.to_json())?;
    println!(
        "class slope {} consensus slope {}",
        fmt_sig6(curve.class_slope),
        fmt_sig6(curve.mean_slope)
    );
    Ok(())
}

fn cluster(common: &Common) -> Result<(), CliError> {
    let cfg = resolve(common)?;
    let data = load_data(common, &cfg)?;
    let source = data
        .select_domains(&[cfg.sdg.source_domain])?
        .filtered(|s| s.split == Split::Train);
    let seed = cfg.eval.base_seed;
    let psi = style_featurizer(&cfg.eval, &source, seed);
    let (_, model) = assign_pseudo_domains(&source, &psi, cfg.sdg.k, seed)?;
    let styles: Vec<usize> = source
        .samples
        .iter()
        .map(|s| s.provenance.style as usize)
        .collect();

    let mut table = CsvTable::new(&["index", "class", "style", "cluster"]);
    for (s, &c) in source.samples.iter().zip(&model.assignment) {
        table.push(vec![
            s.provenance.index.to_string(),
            s.class.to_string(),
            s.provenance.style.to_string(),
            c.to_string(),
        ]);
    }
    let k = cfg.sdg.k;
    write_csv(&out_path(common, &format!("clusters_k{k}.csv"))?, &table)?;
    let summary = json!({
        "k": k,
        "source_domain": cfg.sdg.source_domain,
        "purity": purity(&model.assignment, &styles),
        "inertia": model.inertia,
        "iterations": model.iterations,
        "sizes": model.cluster_sizes(),
    });
    write_json(
        &out_path(common, &format!("cluster_summary_k{k}.json"))?,
        &summary,
    )?;
    write_text(&out_path(common, "resolved_config.json")?, &cfg.to_json())?;
    println!("purity {:.4}", summary["purity"].as_f64().unwrap_or(0.0));
    Ok(())
}

fn cell_config(base: &RunConfig, param: &str, value: f64) -> Result<RunConfig, CliError> {
    let mut cfg = base.clone();
    match param {
        "lambda-c" => cfg.distill.lambda_c = value,
        "lambda-d" => cfg.distill.lambda_d = value,
        "k" => {
            if value.fract() != 0.0 || value < 2.0 {
                return Err(CliError::Usage(format!(
                    "k values must be integers >= 2, got {value}"
                )));
            }
            cfg.sdg.k = value as usize;
            cfg.protocol = Protocol::Sdg;
        }
        _ => {
            return Err(CliError::Usage(format!(
                "unknown sweep parameter {param:?}"
            )))
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn sweep(common: &Common, param: &str, values: &str, jobs: usize) -> Result<(), CliError> {
    let base = resolve(common)?;
    let values: Vec<f64> = parse_list(values)?;
    if values.len() > MAX_GRID {
        return Err(CliError::Usage(format!(
            "grid of {} cells exceeds the limit of {MAX_GRID}",
            values.len()
        )));
    }
    let cells = values
        .iter()
        .map(|&v| cell_config(&base, param, v))
        .collect::<Result<Vec<_>, _>>()?;
    let data = load_data(common, &base)?;

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<EvalReport, CliError>>>> =
        Mutex::new((0..cells.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, cells.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= cells.len() {
                    break;
                }
                let r = evaluate(&data, &cells[i]);
                results.lock().expect("no poisoned cells")[i] = Some(r);
            });
        }
    });

    let mut table = CsvTable::new(&["param", "value", "mean_ood_accuracy", "std"]);
    for (v, r) in values
        .iter()
        .zip(results.into_inner().expect("no poisoned cells"))
    {
        let report = r.expect("every cell ran")?;
        table.push(vec![
            param.to_string(),
            fmt_sig6(*v),
            fmt_sig6(report.mean()),
            fmt_sig6(report.std()),
        ]);
    }
    let tag = base.tag()?;
    let path = out_path(
        common,
        &format!("sweep_{}_{tag}.csv", param.replace('-', "_")),
    )?;
    write_csv(&path, &table)?;
    write_text(
        &out_path(common, &format!("resolved_config_{tag}.json"))?,
        &base.to_json(),
    )?;
    print!("{}", table.render());
    Ok(())
}
