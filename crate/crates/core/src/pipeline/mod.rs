//! Dataset files, a synthetic generator with linked structures and
//! spectra, the two training stages, checkpoints, retrieval evaluation and
//! ablation sweeps.

mod ablation;
mod checkpoint;
mod config;
mod dataset;
mod gradients;
mod retrieval;
mod synthetic;
mod train;

pub use ablation::{
    ablation_variants, run_ablation, write_ablation_csv, AblationRow, AblationTable, AblationVariant,
    ABLATION_CSV_HEADER, MASK_RATIOS, STRIDE_PATCH_PAIRS,
};
pub use checkpoint::{
    load_checkpoint, restore_model, save_checkpoint, Checkpoint, NamedTensor, OptimizerState, RngState,
    FORMAT_VERSION, MAGIC,
};
pub use config::{Model, Scale, TrainConfig};
pub use dataset::{load_jsonl, write_jsonl, LoadedDataset, MoleculeRecord, RejectedLine, SpectraSet};
pub use gradients::{gradient_suite, toy_config, toy_grids, SuiteEntry};
pub use retrieval::{embed_pairs, eval_retrieval, top1_hits, RetrievalReport};
pub use synthetic::{
    gen_synthetic, gen_synthetic_detailed, synthesize, GroupSpec, MotifAtom, Peak, SyntheticMolecule,
    SyntheticSpecTable,
};
pub use train::{
    batch_indices, forward_losses, pretrain_stage1, pretrain_stage2, write_metrics_csv, RunOutput, StepInputs,
    StepLosses, Trainer,
};

#[cfg(test)]
mod tests;
