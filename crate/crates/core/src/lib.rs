//! Layer-splitting preprocessing for low-bit post-training quantization.
//!
//! Outlier weights stretch a quantizer's range and leave most values on a
//! handful of grid points. This crate rewrites a model so each weight layer
//! becomes up to three equivalent layers holding one k-means cluster of its
//! scalars each, which gives every part a tighter range. It also simulates
//! INT2/INT4/INT8 quantization so the effect can be measured.
//!
//! ```
//! use splitquant::ir::{execute, Graph, Layer, TensorMap};
//! use splitquant::tensor::Tensor;
//! use splitquant::transform::{apply_splitquant, TransformConfig};
//!
//! let w = Tensor::new(vec![2, 2], vec![-5.0, 0.1, 0.2, 9.0]).unwrap();
//! let b = Tensor::vector(vec![-4.0, 10.0]).unwrap();
//! let g = Graph::chain("x", &[2], vec![Layer::linear("fc", "x", w, Some(b))], "fc");
//! let split = apply_splitquant(&g, &TransformConfig::default()).unwrap().graph;
//!
//! let x = TensorMap::from([("x".to_string(), Tensor::vector(vec![1.0, 1.0]).unwrap())]);
//! let y = execute(&split, &x).unwrap();
//! assert!((y["fc"].data()[1] - 19.2).abs() < 1e-5);
//! ```

pub mod cli;
pub mod cluster;
pub mod error;
pub mod eval;
pub mod ir;
pub mod quant;
pub mod tensor;
pub mod transform;

pub use error::{Error, Result};
