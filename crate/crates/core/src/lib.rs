//! Real-time detection of incandescent flow fronts in fixed-camera video,
//! with trajectory estimation and multi-channel alerting.
//!
//! The pipeline stages live in separate modules and are composed by
//! [`pipeline::Engine`]:
//!
//! 1. [`imaging`] — frame decode, color-space conversion, color gating
//! 2. [`detect`] — inter-frame differencing and morphological cleanup
//! 3. [`blobs`] — connected components and shape statistics
//! 4. [`trajectory`] — line fitting, motion vectors, compass classification
//! 5. [`alert`] — event construction and sink dispatch
//! 6. [`monitor`] — read-only HTTP status service
//! 7. [`simharness`] — synthetic scenario generation and benchmarking
//!
//! [`stream`] provides frame sources (directories and packed stream files),
//! [`config`] the flat key=value configuration format, and [`pipeline`] the
//! per-frame engine plus the end-to-end runner used by the CLI.

pub mod alert;
pub mod blobs;
pub mod config;
pub mod detect;
pub mod imaging;
pub mod monitor;
pub mod pipeline;
pub mod simharness;
pub mod stream;
pub mod trajectory;
