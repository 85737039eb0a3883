//! Learnable non-linear quantization for simulated analog-to-digital
//! conversion, trained jointly with a small convolutional classifier.

// `!(a > b)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autograd;
pub mod data;
pub mod error;
pub mod harness;
pub mod imaging;
pub mod model;
pub mod quant;
pub mod tensor;

pub use data::{NormMeta, NormScope, Recording, SynthConfig, WindowedDataset};
pub use error::{Error, Result};
pub use harness::{
    ExperimentConfig, ExperimentResult, ParamScope, QuantStage, VariantConfig, VariantKind,
};
pub use imaging::RawImage;
pub use model::{Checkpoint, ClassifierModel, ModelConfig};
pub use quant::{BitDepth, InputDomain, QuantCode, QuantizerKind, QuantizerSpec, Transfer};
pub use tensor::Tensor;
