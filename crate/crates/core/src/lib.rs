//! Spiking encoder–decoder for motion segmentation of event-camera streams.
//!
//! The crate covers the whole pipeline: event streams and their binned
//! spike tensors, a Spike Response Model neuron, a convolutional spiking
//! network trained with backpropagation through time and surrogate
//! gradients, the segmentation losses, quality and cost metrics, a synthetic
//! event-scene generator, and the command implementations behind the
//! `spikeseg` binary.

pub mod checkpoint;
pub mod config;
pub mod conv;
pub mod datagen;
pub mod error;
pub mod event;
pub mod harness;
pub mod io;
pub mod kalman;
pub mod loss;
pub mod metrics;
pub mod net;
pub mod srm;

pub use error::{Error, Result};
pub use event::{discretize, project, Dims, Event, EventStream, Label, Polarity, SpikeTensor};
pub use net::{ForwardTrace, Gradients, LayerSpec, Network};
pub use srm::SrmParams;
