//! Dual-stream tracker: model composition, head, loss, optimizer, training
//! and sequence inference.

pub mod head;
pub mod loss;
pub mod model;
pub mod optim;
pub mod track;
pub mod train;

pub use head::{decode_box, HeadConfig, HeadMaps};
pub use loss::{compute_loss, LossConfig, LossOutput};
pub use model::{
    apply_heads, dual_forward, dual_stream_layer, fused_head_input, head_route, predict_maps, select_max_score,
    DualInputs, DualState, HeadRoute, Model, ModelConfig,
};
pub use optim::{AdamW, AdamWConfig};
pub use track::{track_dataset, track_sequence, CropSpec, Predictor, SearchContext};
pub use train::{draw_sample, sample_gradients, train, train_step, Sample, TrainConfig};
