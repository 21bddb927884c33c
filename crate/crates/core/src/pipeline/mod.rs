//! Training orchestration: configuration, pretraining, fine-tuning,
//! checkpoints and ablation grids.

mod ablation;
mod config;
mod train;

pub use ablation::{
    ablation_preset, grid_spec, parse_axis, run_ablation, AblationCell, AblationReport, AblationRow, AblationSpec,
    ABLATION_PRESETS,
};
pub use config::{
    merge, parse_override, resolve_config, schedule_lr, set_path, with_overrides, DecoderConfig, LrSchedule,
    MaskConfig, OptimizerConfig, OptimizerKind, Phase, RatioSetting, ScheduleConfig, TrainConfig, PRESETS,
};
pub use train::{
    evaluate, finetune, finetune_split, hd_cap, init_seg_model, load_pretrain_model, load_seg_model, mix_seed,
    pretrain, pretrain_checkpoint, save_finetune, save_pretrain, seg_checkpoint, write_run, FinetuneResult, FoldRun,
    Init, RunRecord, CHECKPOINT_FILE, CHECKPOINT_VERSION,
};
