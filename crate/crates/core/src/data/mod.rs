//! Labeled datasets, their CSV form, and the training loop.

mod dataset;
mod metrics;
mod optim;
mod train;

pub use dataset::{
    generate_dataset, generate_dataset_with, generate_row, load_dataset, read_csv, save_dataset, split, write_csv,
    DatasetRow, DatasetSpec, LabelSource, Labeler, Split, CSV_HEADER, DEFAULT_FRACTIONS,
};
pub use metrics::{metrics, Metrics};
pub use optim::{clip_global_norm, AdamW, Plateau};
pub use train::{
    batch_loss_grad, evaluate, graph_mean_loss, predict_rows, prepare, train, train_with, EpochRecord, Prepared,
    TrainConfig, TrainReport,
};
