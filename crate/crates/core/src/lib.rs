//! PE import-table analysis and rewriting.
//!
//! The crate parses PE32/PE32+ images, fingerprints their import tables
//! ([`imphash`]), and rewrites import thunk order in place while keeping the
//! program's call graph intact: absolute operands are fixed up through the
//! relocation table, RIP-relative and reloc-less sites through a code scan,
//! and every rewrite is checked by a loader-bind simulation before it is
//! accepted.  A deterministic fixture generator ([`synth`]) provides the
//! test corpus.
//!
//! All multi-byte fields are little-endian; RVA/offset arithmetic is
//! centralized in [`image::PeImage`].  With the default `parallel` feature
//! the checksum and code-scan inner loops use data parallelism; outputs are
//! bit-identical to the sequential paths.

#![forbid(unsafe_code)]

pub mod checksum;
pub mod codec;
pub mod error;
pub mod image;
pub mod imphash;
pub mod rng;
pub mod shuffle;
pub mod synth;
pub mod textscan;
pub mod verify;

pub use error::{Error, Result};
pub use image::{MachineClass, PeImage};
pub use imphash::{imphash, imphash_of_image, imphash_reports, ImphashMode, ImphashReport};
pub use shuffle::{transform, Strategy, TransformOptions, TransformResult};
pub use verify::{assert_equivalent, simulate_bind, MockExportUniverse};
