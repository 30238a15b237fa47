//! From-scratch neural-network engine.

pub mod checkpoint;
pub mod layers;
pub mod loss;
pub mod model;
pub mod tensor;

pub use layers::Mode;
pub use loss::LossKind;
pub use model::{
    init_parameters, model_backward, model_forward, model_infer, Activation, Gradients,
    LayerParams, LayerSpec, ModelSpec, Parameters,
};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use tensor::Tensor;
