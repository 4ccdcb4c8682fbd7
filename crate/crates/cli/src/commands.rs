use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use molspectra::numerics::Mode;
use molspectra::objectives::{parse_grid, verify_equivalence, write_report_csv, RegressorSpec};
use molspectra::pipeline::{
    eval_retrieval, embed_pairs, gen_synthetic, gradient_suite, load_checkpoint, load_jsonl, pretrain_stage1,
    pretrain_stage2, restore_model, run_ablation, save_checkpoint, write_ablation_csv, write_jsonl,
    write_metrics_csv, AblationTable, MoleculeRecord, Scale, TrainConfig,
};
use molspectra::spectra::{GridSet, PatchConfig, Spectrum};
use molspectra::specformer::{export_attention, SpectraBatch};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::args::*;
use crate::resolve::{overlay, overlay_at, peek, print_resolved, read_config, require, set, set_opt};
use crate::UsageError;

fn config_file(path: &Option<PathBuf>) -> anyhow::Result<Option<Value>> {
    path.as_deref().map(read_config).transpose()
}

fn load_strict(path: &Path, grids: &GridSet) -> anyhow::Result<Vec<MoleculeRecord>> {
    let records = load_jsonl(path, grids)?.into_strict()?;
    log::info!("loaded {} records from {}", records.len(), path.display());
    Ok(records)
}

#[derive(Debug, Serialize, Deserialize)]
struct GenData {
    n: Option<usize>,
    seed: u64,
    scale: Scale,
    workers: usize,
    out: Option<PathBuf>,
}

pub fn gen_data(a: GenDataArgs) -> anyhow::Result<()> {
    let file = config_file(&a.config)?;
    let mut c = overlay(
        GenData {
            n: None,
            seed: 0,
            scale: Scale::Full,
            workers: 1,
            out: None,
        },
        file.as_ref(),
    )?;
    set_opt(&mut c.n, a.n);
    set(&mut c.seed, a.seed);
    set(&mut c.scale, a.scale.map(Scale::from));
    set(&mut c.workers, a.workers);
    set_opt(&mut c.out, a.out);
    print_resolved("gen-data", &c)?;
    let n = c.n.ok_or_else(|| UsageError("missing --n".into()))?;
    let out = require(&c.out, "--out")?;
    if c.workers == 0 {
        bail!(UsageError("--workers must be >= 1".into()));
    }
    let records = gen_synthetic(n, c.seed, &c.scale.grids(), c.workers);
    write_jsonl(out, &records)?;
    println!("wrote {} molecules to {}", records.len(), out.display());
    Ok(())
}

/// Preset for `stage` at the scale named by the flag, the config file or
/// the default, with the file and then the flags applied.
fn resolve_train(t: &TrainArgs, file: Option<&Value>, stage: u8) -> anyhow::Result<(Scale, TrainConfig)> {
    let scale = match t.scale {
        Some(s) => s.into(),
        None => peek::<Scale>(file, "scale")?.unwrap_or(Scale::Full),
    };
    let file_train = file.and_then(|v| v.get("train"));
    let mut c = overlay_at(TrainConfig::preset(scale, stage), file_train, "train")?;
    c.stage = stage;
    set(&mut c.steps, t.steps);
    set(&mut c.batch_size, t.batch_size);
    set(&mut c.lr, t.lr);
    set_opt(&mut c.clip, t.clip);
    set(&mut c.seed, t.seed);
    set(&mut c.noise, t.noise);
    set(&mut c.weights.denoising, t.beta_denoising);
    set(&mut c.weights.mpr, t.beta_mpr);
    set(&mut c.weights.contrast, t.beta_contrast);
    set(&mut c.temperature, t.temperature);
    set(&mut c.spec.mask_ratio, t.mask_ratio);
    for p in &mut c.spec.patches {
        *p = PatchConfig::new(t.patch_len.unwrap_or(p.patch_len), t.stride.unwrap_or(p.stride));
    }
    Ok((scale, c))
}

#[derive(Debug, Serialize, Deserialize)]
struct Pretrain {
    data: Option<PathBuf>,
    init: Option<PathBuf>,
    out: Option<PathBuf>,
    metrics: Option<PathBuf>,
    scale: Scale,
    train: TrainConfig,
}

pub fn pretrain(a: PretrainArgs) -> anyhow::Result<()> {
    let file = config_file(&a.train.config)?;
    let (scale, train) = resolve_train(&a.train, file.as_ref(), a.stage)?;
    let mut c = overlay(
        Pretrain {
            data: None,
            init: None,
            out: None,
            metrics: None,
            scale,
            train,
        },
        file.as_ref().map(|f| without(f, &["train", "scale"])).as_ref(),
    )?;
    set_opt(&mut c.data, a.data);
    set_opt(&mut c.init, a.init);
    set_opt(&mut c.out, a.out);
    set_opt(&mut c.metrics, a.metrics);
    print_resolved("pretrain", &c)?;

    if c.train.stage == 2 && c.init.is_none() {
        bail!(UsageError(
            "stage 2 starts from the output of stage 1: pass --init <stage-1 checkpoint>".into()
        ));
    }
    let data = require(&c.data, "--data")?;
    let out = require(&c.out, "--out")?;
    c.train.validate()?;
    let records = load_strict(data, &c.train.grids()?)?;
    let init = c
        .init
        .as_deref()
        .map(|p| load_checkpoint(p).with_context(|| format!("loading {}", p.display())))
        .transpose()?;
    let run = match c.train.stage {
        1 => pretrain_stage1(&records, &c.train, init.as_ref())?,
        _ => pretrain_stage2(&records, init.as_ref().expect("checked above"), &c.train)?,
    };
    save_checkpoint(&run.checkpoint, out)?;
    if let Some(m) = &c.metrics {
        write_metrics_csv(m, &run.metrics)?;
    }
    if let (Some(first), Some(last)) = (run.metrics.first(), run.metrics.last()) {
        println!(
            "steps {}..={}: total {:.6} -> {:.6} (denoising {:.6}, mpr {:.6}, contrast {:.6})",
            first.step, last.step, first.total, last.total, last.denoising, last.mpr, last.contrast
        );
    }
    println!("checkpoint at step {} written to {}", run.checkpoint.step, out.display());
    Ok(())
}

fn without(v: &Value, keys: &[&str]) -> Value {
    let mut v = v.clone();
    if let Value::Object(m) = &mut v {
        for k in keys {
            m.remove(*k);
        }
    }
    v
}

#[derive(Debug, Serialize, Deserialize)]
struct Gradcheck {
    seed: u64,
    eps: f64,
    tolerance: f64,
    out: Option<PathBuf>,
}

pub fn gradcheck(a: GradcheckArgs) -> anyhow::Result<()> {
    let file = config_file(&a.config)?;
    let mut c = overlay(
        Gradcheck {
            seed: 0,
            eps: 1e-5,
            tolerance: 1e-4,
            out: None,
        },
        file.as_ref(),
    )?;
    set(&mut c.seed, a.seed);
    set(&mut c.eps, a.eps);
    set(&mut c.tolerance, a.tolerance);
    set_opt(&mut c.out, a.out);
    print_resolved("gradcheck", &c)?;
    if !(c.eps > 0.0 && c.tolerance > 0.0) {
        bail!(UsageError("--eps and --tolerance must be positive".into()));
    }
    let suite = gradient_suite(c.seed, c.eps, c.tolerance)?;
    for e in &suite {
        println!(
            "{:<10} weights {:?}  max rel err {:.3e}  worst {}  {}",
            e.name,
            e.weights,
            e.max_rel_err,
            e.worst_param.as_deref().unwrap_or("-"),
            if e.passed { "ok" } else { "FAILED" }
        );
    }
    if let Some(out) = &c.out {
        std::fs::write(out, serde_json::to_string_pretty(&suite)? + "\n")
            .with_context(|| format!("writing {}", out.display()))?;
    }
    let failed: Vec<&str> = suite.iter().filter(|e| !e.passed).map(|e| e.name.as_str()).collect();
    if !failed.is_empty() {
        bail!("gradient check failed for {}", failed.join(", "));
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct Equivalence {
    tau: f64,
    grid: String,
    samples: usize,
    seed: u64,
    out: Option<PathBuf>,
}

pub fn verify_equivalence_cmd(a: EquivalenceArgs) -> anyhow::Result<()> {
    let file = config_file(&a.config)?;
    let mut c = overlay(
        Equivalence {
            tau: 1.0,
            grid: "-2:2:0.1".into(),
            samples: 100_000,
            seed: 0,
            out: None,
        },
        file.as_ref(),
    )?;
    set(&mut c.tau, a.tau);
    set(&mut c.grid, a.grid);
    set(&mut c.samples, a.samples);
    set(&mut c.seed, a.seed);
    set_opt(&mut c.out, a.out);
    print_resolved("verify-equivalence", &c)?;
    let grid = parse_grid(&c.grid)?;
    let spec = RegressorSpec {
        samples: c.samples,
        seed: c.seed,
        ..RegressorSpec::default()
    };
    let report = verify_equivalence(c.tau, &grid, (c.samples > 0).then_some(&spec))?;
    println!(
        "max |denoiser - scaled score| = {:.3e} over {} points",
        report.max_identity_deviation,
        grid.len()
    );
    if let Some(d) = report.max_fit_deviation {
        println!("max |regressor - scaled score| = {d:.3e} ({} samples)", c.samples);
    }
    if let Some(out) = &c.out {
        write_report_csv(&report, out)?;
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct Encode {
    checkpoint: Option<PathBuf>,
    data: Option<PathBuf>,
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Embedding<'a> {
    id: &'a str,
    z_x: &'a [f64],
    #[serde(skip_serializing_if = "Option::is_none")]
    z_s: Option<&'a [f64]>,
}

pub fn encode(a: EncodeArgs) -> anyhow::Result<()> {
    let file = config_file(&a.config)?;
    let mut c = overlay(
        Encode {
            checkpoint: None,
            data: None,
            out: None,
        },
        file.as_ref(),
    )?;
    set_opt(&mut c.checkpoint, a.checkpoint);
    set_opt(&mut c.data, a.data);
    set_opt(&mut c.out, a.out);
    print_resolved("encode", &c)?;
    let ckpt = load_checkpoint(require(&c.checkpoint, "--checkpoint")?)?;
    let out = require(&c.out, "--out")?;
    let records = load_strict(require(&c.data, "--data")?, &ckpt.config.grids()?)?;
    let model = restore_model(&ckpt)?;
    let mut w = BufWriter::new(File::create(out).with_context(|| format!("creating {}", out.display()))?);
    for chunk in records.chunks(64) {
        let refs: Vec<&MoleculeRecord> = chunk.iter().collect();
        if model.spec.is_some() {
            let (zx, zs) = embed_pairs(&model, &refs)?;
            for (i, r) in chunk.iter().enumerate() {
                let e = Embedding {
                    id: &r.id,
                    z_x: zx.row(i),
                    z_s: Some(zs.row(i)),
                };
                writeln!(w, "{}", serde_json::to_string(&e)?)?;
            }
        } else {
            for r in chunk {
                let (z, _) = model.mol.encode(&model.store, &r.atoms, &r.coords)?;
                let e = Embedding {
                    id: &r.id,
                    z_x: z.data(),
                    z_s: None,
                };
                writeln!(w, "{}", serde_json::to_string(&e)?)?;
            }
        }
    }
    w.flush()?;
    println!("wrote {} embeddings to {}", records.len(), out.display());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct DumpAttention {
    checkpoint: Option<PathBuf>,
    data: Option<PathBuf>,
    index: usize,
    out: Option<PathBuf>,
}

pub fn dump_attention(a: DumpAttentionArgs) -> anyhow::Result<()> {
    let file = config_file(&a.config)?;
    let mut c = overlay(
        DumpAttention {
            checkpoint: None,
            data: None,
            index: 0,
            out: None,
        },
        file.as_ref(),
    )?;
    set_opt(&mut c.checkpoint, a.checkpoint);
    set_opt(&mut c.data, a.data);
    set(&mut c.index, a.index);
    set_opt(&mut c.out, a.out);
    print_resolved("dump-attention", &c)?;
    let ckpt = load_checkpoint(require(&c.checkpoint, "--checkpoint")?)?;
    let out = require(&c.out, "--out")?;
    let records = load_strict(require(&c.data, "--data")?, &ckpt.config.grids()?)?;
    let record = records.get(c.index).ok_or_else(|| {
        UsageError(format!("--index {} is out of range for {} records", c.index, records.len()))
    })?;
    let model = restore_model(&ckpt)?;
    let spec = model.spec()?;
    let set: [Spectrum; 3] = record.spectra_triple()?;
    let mut unmasked = spec.config.clone();
    unmasked.mask_ratio = 0.0;
    let batch = SpectraBatch::build(&unmasked, &[&set], &[0])?;
    let encoded = spec.encode(&model.store, Mode::Eval, &batch)?;
    export_attention(&encoded.attention, Some(&spec.config), out)?;
    println!(
        "attention of '{}' ({} layers x {} heads x {} tokens) written to {}",
        record.id,
        encoded.attention.num_layers(),
        encoded.attention.heads,
        encoded.attention.tokens,
        out.display()
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct EvalRetrieval {
    checkpoint: Option<PathBuf>,
    data: Option<PathBuf>,
    batch_size: usize,
    seed: u64,
    out: Option<PathBuf>,
}

pub fn eval_retrieval_cmd(a: EvalRetrievalArgs) -> anyhow::Result<()> {
    let file = config_file(&a.config)?;
    let mut c = overlay(
        EvalRetrieval {
            checkpoint: None,
            data: None,
            batch_size: 8,
            seed: 0,
            out: None,
        },
        file.as_ref(),
    )?;
    set_opt(&mut c.checkpoint, a.checkpoint);
    set_opt(&mut c.data, a.data);
    set(&mut c.batch_size, a.batch_size);
    set(&mut c.seed, a.seed);
    set_opt(&mut c.out, a.out);
    print_resolved("eval-retrieval", &c)?;
    let ckpt = load_checkpoint(require(&c.checkpoint, "--checkpoint")?)?;
    let records = load_strict(require(&c.data, "--data")?, &ckpt.config.grids()?)?;
    let model = restore_model(&ckpt)?;
    let report = eval_retrieval(&model, &records, c.batch_size, c.seed)?;
    let json = serde_json::to_string_pretty(&report)?;
    println!("{json}");
    if let Some(out) = &c.out {
        std::fs::write(out, json + "\n").with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct Ablate {
    table: Option<String>,
    data: Option<PathBuf>,
    holdout: Option<PathBuf>,
    init: Option<PathBuf>,
    out: Option<PathBuf>,
    eval_batch: usize,
    scale: Scale,
    train: TrainConfig,
}

pub fn ablate(a: AblateArgs) -> anyhow::Result<()> {
    let file = config_file(&a.train.config)?;
    let (scale, train) = resolve_train(&a.train, file.as_ref(), 2)?;
    let mut c = overlay(
        Ablate {
            table: None,
            data: None,
            holdout: None,
            init: None,
            out: None,
            eval_batch: 8,
            scale,
            train,
        },
        file.as_ref().map(|f| without(f, &["train", "scale"])).as_ref(),
    )?;
    set_opt(&mut c.table, a.table);
    set_opt(&mut c.data, a.data);
    set_opt(&mut c.holdout, a.holdout);
    set_opt(&mut c.init, a.init);
    set_opt(&mut c.out, a.out);
    set(&mut c.eval_batch, a.eval_batch);
    print_resolved("ablate", &c)?;
    let table: AblationTable = c
        .table
        .as_deref()
        .ok_or_else(|| UsageError("missing --table".into()))?
        .parse()?;
    let init = load_checkpoint(require(&c.init, "--init")?)?;
    let out = require(&c.out, "--out")?;
    c.train.validate()?;
    let grids = c.train.grids()?;
    let train = load_strict(require(&c.data, "--data")?, &grids)?;
    let holdout = load_strict(require(&c.holdout, "--holdout")?, &grids)?;
    let rows = run_ablation(table, &c.train, &train, &holdout, &init, c.eval_batch)?;
    write_ablation_csv(out, &rows)?;
    for r in &rows {
        println!(
            "{:<24} total {:.4}  structure->spectra {:.3}  spectra->structure {:.3}",
            r.variant, r.final_total, r.structure_to_spectra, r.spectra_to_structure
        );
    }
    println!("{} rows written to {}", rows.len(), out.display());
    Ok(())
}
