use super::*;
use crate::error::Error;
use crate::numerics::Tensor;
use crate::spectra::{GridSet, SpectrumKind};

fn desk_data(n: usize, seed: u64) -> Vec<MoleculeRecord> {
    gen_synthetic(n, seed, &GridSet::desk(), 1)
}

fn small_stage1(steps: u64) -> TrainConfig {
    TrainConfig {
        steps,
        batch_size: 4,
        ..TrainConfig::stage1()
    }
}

fn small_stage2(steps: u64) -> TrainConfig {
    TrainConfig {
        steps,
        batch_size: 4,
        ..TrainConfig::stage2()
    }
}

#[test]
fn empty_file_gives_empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("empty.jsonl");
    std::fs::write(&p, "").unwrap();
    let d = load_jsonl(&p, &GridSet::full()).unwrap();
    assert!(d.records.is_empty() && d.rejected.is_empty());
    assert!(load_jsonl(&dir.path().join("missing.jsonl"), &GridSet::full()).is_err());
}

#[test]
fn short_ir_spectrum_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.jsonl");
    let mut r = gen_synthetic(1, 0, &GridSet::full(), 1).remove(0);
    let good = serde_json::to_string(&r).unwrap();
    r.spectra.as_mut().unwrap().ir.as_mut().unwrap().pop();
    let bad = serde_json::to_string(&r).unwrap();
    std::fs::write(&p, format!("{good}\n{bad}\n{{not json\n")).unwrap();
    let d = load_jsonl(&p, &GridSet::full()).unwrap();
    assert_eq!(d.records.len(), 1);
    assert_eq!(d.rejected.len(), 2);
    assert_eq!(d.rejected[0].line, 2);
    assert!(d.rejected[0].message.contains("expected 3501"), "{}", d.rejected[0].message);
    assert_eq!(d.rejected[1].line, 3);
    let err = d.into_strict().unwrap_err().to_string();
    assert!(err.contains("line 2") && err.contains("line 3"));
}

#[test]
fn jsonl_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.jsonl");
    let data = desk_data(25, 3);
    write_jsonl(&p, &data).unwrap();
    let back = load_jsonl(&p, &GridSet::desk()).unwrap().into_strict().unwrap();
    assert_eq!(back, data);
}

#[test]
fn generator_is_deterministic_and_worker_independent() {
    assert!(desk_data(0, 1).is_empty());
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    write_jsonl(&a, &desk_data(30, 9)).unwrap();
    write_jsonl(&b, &gen_synthetic(30, 9, &GridSet::desk(), 4)).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_ne!(desk_data(5, 9), desk_data(5, 10));
}

#[test]
fn generated_molecules_have_the_declared_shape() {
    let table = SyntheticSpecTable::standard();
    for g in &table.groups {
        let emitting = SpectrumKind::ALL.iter().filter(|&&k| !g.peaks(k).is_empty()).count();
        assert!(emitting >= 2, "{} emits in {emitting} spectra", g.code);
    }
    for m in gen_synthetic_detailed(200, 5, &GridSet::desk(), &table, 2) {
        let r = &m.record;
        assert!((4..=12).contains(&r.atoms.len()), "{} atoms", r.atoms.len());
        assert!((2..=4).contains(&m.groups.len()));
        r.validate(&GridSet::desk()).unwrap();
        let topo = r.topology.as_ref().unwrap();
        assert_eq!(topo.bonds.len(), r.atoms.len() - 1);
        crate::encoder3d::internal_coords(&r.coords, topo).unwrap();
    }
}

/// Every record containing the hydroxyl group shows at least the
/// hydroxyl line's own contribution at its IR center.
#[test]
fn hydroxyl_line_is_present() {
    let table = SyntheticSpecTable::standard();
    let oh = table.group("hydroxyl").unwrap();
    let line = table.groups[oh].peaks(SpectrumKind::Ir)[0];
    assert_eq!(line.center, 3350.0);
    for grids in [GridSet::desk(), GridSet::full()] {
        let grid = grids.ir;
        let k = grid.nearest(line.center);
        let hwhm = line.hwhm.max(1.5 * grid.step);
        let u = (grid.point(k) - line.center) / hwhm;
        let floor = (1.0 + 0.9 * line.height / (1.0 + u * u)).log10();
        let mols = gen_synthetic_detailed(60, 2, &grids, &table, 1);
        let with: Vec<_> = mols.iter().filter(|m| m.groups.contains(&oh)).collect();
        assert!(!with.is_empty());
        for m in with {
            let ir = m.record.spectra.as_ref().unwrap().ir.as_ref().unwrap();
            assert!(ir[k] >= floor, "{}: {} < {floor}", m.record.id, ir[k]);
        }
    }
}

#[test]
fn stage1_rejects_spectrum_weights() {
    let mut c = TrainConfig::stage1();
    c.weights.mpr = 0.5;
    assert!(matches!(c.validate(), Err(Error::Config(_))));
    c.weights.mpr = 0.0;
    c.weights.contrast = 1e-9;
    assert!(matches!(c.validate(), Err(Error::Config(_))));
    TrainConfig::stage2().validate().unwrap();
}

#[test]
fn epochs_visit_every_molecule_once() {
    let n = 23;
    let mut seen = Vec::new();
    for step in 0..5 {
        seen.extend(batch_indices(n, 4, 1, step).unwrap());
    }
    seen.sort_unstable();
    seen.dedup();
    assert_eq!(seen.len(), 20);
    assert_eq!(batch_indices(n, 4, 1, 3).unwrap(), batch_indices(n, 4, 1, 3).unwrap());
    assert_ne!(batch_indices(n, 4, 1, 0).unwrap(), batch_indices(n, 4, 1, 5).unwrap());
    assert_eq!(batch_indices(3, 8, 0, 7).unwrap().len(), 3);
    assert!(batch_indices(0, 4, 0, 0).is_err());
}

#[test]
fn one_step_moves_the_parameters() {
    let data = desk_data(8, 1);
    let fresh = Model::new(&small_stage1(1)).unwrap();
    let out = pretrain_stage1(&data, &small_stage1(1), None).unwrap();
    assert_eq!(out.metrics.len(), 1);
    assert_eq!(out.checkpoint.step, 1);
    let moved = fresh
        .store
        .iter()
        .filter(|(_, p)| out.checkpoint.tensor(&p.name).unwrap().value != p.value)
        .count();
    assert!(moved > 0);
    assert!(matches!(pretrain_stage1(&[], &small_stage1(1), None), Err(Error::Dataset(_))));
}

#[test]
fn stage2_requires_all_three_spectra() {
    let mut data = desk_data(8, 1);
    let init = pretrain_stage1(&data, &small_stage1(1), None).unwrap().checkpoint;
    data[3].spectra.as_mut().unwrap().raman = None;
    let err = pretrain_stage2(&data, &init, &small_stage2(1)).unwrap_err();
    assert!(err.to_string().contains("Raman"), "{err}");
}

#[test]
fn stage2_without_spectrum_terms_matches_stage1() {
    let data = desk_data(12, 4);
    let init = pretrain_stage1(&data, &small_stage1(3), None).unwrap().checkpoint;
    let cont = pretrain_stage1(&data, &small_stage1(4), Some(&init)).unwrap();
    let mut c2 = small_stage2(4);
    c2.weights = crate::objectives::LossWeights::denoising_only();
    let joint = pretrain_stage2(&data, &init, &c2).unwrap();
    for t in &cont.checkpoint.tensors {
        assert_eq!(&joint.checkpoint.tensor(&t.name).unwrap().value, &t.value, "{}", t.name);
    }
    let d1: Vec<f64> = cont.metrics.iter().map(|m| m.denoising).collect();
    let d2: Vec<f64> = joint.metrics.iter().map(|m| m.denoising).collect();
    assert_eq!(d1, d2);
}

#[test]
fn resume_is_bit_exact() {
    let data = desk_data(12, 6);
    let init = pretrain_stage1(&data, &small_stage1(2), None).unwrap().checkpoint;
    let whole = pretrain_stage2(&data, &init, &small_stage2(6)).unwrap();
    let first = pretrain_stage2(&data, &init, &small_stage2(3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("mid.ckpt");
    save_checkpoint(&first.checkpoint, &p).unwrap();
    let second = pretrain_stage2(&data, &load_checkpoint(&p).unwrap(), &small_stage2(3)).unwrap();
    assert_eq!(second.checkpoint.tensors, whole.checkpoint.tensors);
    let joined: Vec<_> = first.metrics.iter().chain(&second.metrics).copied().collect();
    assert_eq!(joined, whole.metrics);
}

#[test]
fn checkpoint_bytes_round_trip() {
    let data = desk_data(8, 2);
    let init = pretrain_stage1(&data, &small_stage1(1), None).unwrap().checkpoint;
    let ck = pretrain_stage2(&data, &init, &small_stage2(1)).unwrap().checkpoint;
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    save_checkpoint(&ck, &a).unwrap();
    let loaded = load_checkpoint(&a).unwrap();
    assert_eq!(loaded, ck);
    save_checkpoint(&loaded, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(std::fs::read(&a).unwrap().starts_with(MAGIC));
}

#[test]
fn truncated_checkpoint_names_the_missing_tensor() {
    let ck = Checkpoint::capture(&Model::new(&TrainConfig::stage2()).unwrap(), &TrainConfig::stage2(), 0);
    let mut bytes = ck.to_bytes().unwrap();
    bytes.truncate(bytes.len() - 8);
    let err = Checkpoint::from_bytes(&bytes).unwrap_err().to_string();
    let last = &ck.tensors.last().unwrap().name;
    assert!(err.contains(last.as_str()), "{err}");
    assert!(Checkpoint::from_bytes(b"MSPC2xxxxxxxx").is_err());
}

#[test]
fn version_mismatch_is_rejected() {
    let mut ck = Checkpoint::capture(&Model::new(&TrainConfig::stage1()).unwrap(), &TrainConfig::stage1(), 0);
    ck.version = FORMAT_VERSION + 1;
    let err = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap_err().to_string();
    assert!(err.contains("version"), "{err}");
}

#[test]
fn mismatched_width_is_rejected_before_writing() {
    let cfg = TrainConfig::stage1();
    let ck = Checkpoint::capture(&Model::new(&cfg).unwrap(), &cfg, 0);
    let mut wide = cfg.clone();
    wide.mol.d_model = 48;
    let mut model = Model::new(&wide).unwrap();
    let before: Vec<Tensor> = model.store.iter().map(|(_, p)| p.value.clone()).collect();
    let err = ck.load_into(&mut model.store, &[]).unwrap_err().to_string();
    assert!(err.contains("[118, 32]") && err.contains("[118, 48]"), "{err}");
    let after: Vec<Tensor> = model.store.iter().map(|(_, p)| p.value.clone()).collect();
    assert_eq!(before, after);
}

#[test]
fn metrics_csv_is_reproducible() {
    let data = desk_data(8, 3);
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    write_metrics_csv(&a, &pretrain_stage1(&data, &small_stage1(3), None).unwrap().metrics).unwrap();
    write_metrics_csv(&b, &pretrain_stage1(&data, &small_stage1(3), None).unwrap().metrics).unwrap();
    let text = std::fs::read_to_string(&a).unwrap();
    assert!(text.starts_with("step,denoising,mpr,contrast,total\n0,"));
    assert_eq!(text.lines().count(), 4);
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
}

#[test]
fn ties_go_to_the_lowest_index() {
    let flat = Tensor::filled([4, 4], 0.5);
    assert_eq!(top1_hits(&flat).unwrap(), (1, 1));
    let eye = Tensor::identity(3);
    assert_eq!(top1_hits(&eye).unwrap(), (3, 3));
    let rows = Tensor::from_rows(&[[0.0, 1.0], [0.0, 1.0]]).unwrap();
    assert_eq!(top1_hits(&rows).unwrap(), (1, 1));
}

#[test]
fn untrained_retrieval_is_near_chance() {
    let data = desk_data(400, 8);
    let model = Model::new(&TrainConfig::stage2()).unwrap();
    let r = eval_retrieval(&model, &data, 8, 0).unwrap();
    assert_eq!(r.batches, 50);
    for acc in [r.structure_to_spectra, r.spectra_to_structure] {
        assert!((0.03..=0.25).contains(&acc), "{acc}");
    }
    assert!(matches!(eval_retrieval(&model, &data, 1, 0), Err(Error::InvalidArgument(_))));
}

#[test]
fn ablation_grids_have_the_expected_structure() {
    let base = TrainConfig::stage2();
    let counts: Vec<usize> = AblationTable::ALL
        .iter()
        .map(|&t| ablation_variants(t, &base).len())
        .collect();
    assert_eq!(counts, vec![6, 6, 3, 4]);
    for t in AblationTable::ALL {
        assert_eq!(t.key().parse::<AblationTable>().unwrap(), t);
        for v in ablation_variants(t, &base) {
            v.config.validate().unwrap_or_else(|e| panic!("{t} {}: {e}", v.name));
        }
    }
    let obj = ablation_variants(AblationTable::Objectives, &base);
    assert_eq!(obj[2].config.weights, crate::objectives::LossWeights::denoising_only());
}

#[test]
fn ablation_run_writes_one_row_per_variant() {
    let data = desk_data(24, 1);
    let (train, holdout) = data.split_at(16);
    let init = pretrain_stage1(train, &small_stage1(1), None).unwrap().checkpoint;
    let rows = run_ablation(AblationTable::Modality, &small_stage2(1), train, holdout, &init, 4).unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[2].dropped, vec![SpectrumKind::Ir]);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t7.csv");
    write_ablation_csv(&p, &rows).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    assert_eq!(text.lines().next().unwrap(), ABLATION_CSV_HEADER);
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn gradient_suite_passes() {
    let entries = gradient_suite(0, 1e-5, 1e-4).unwrap();
    assert_eq!(entries.len(), 4);
    for e in &entries {
        assert!(e.passed, "{e:?}");
    }
}
