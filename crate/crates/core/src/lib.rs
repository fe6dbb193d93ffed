//! Feature-level cross-modal retrieval toolkit.
//!
//! Trains a small encoder/projection stack on two feature modalities (natural
//! images and sketches) with a cross-modal contrastive loss, a category
//! memory bank with prototype alignment, and classifier/teacher supervision,
//! then evaluates zero-shot retrieval with cosine or ITQ-Hamming ranking
//! scored by mAP@all and Prec@100.
//!
//! The numeric core is generic over the scalar type via [`Scalar`]; the
//! pipeline defaults to `f64` (see the type aliases at the crate root).

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub mod data;
pub mod error;
pub mod losses;
pub mod membank;
pub mod model;
pub mod numkit;
pub mod retrieval;
pub mod trainer;

pub use error::{DsnError, Result};

/// Floating-point scalar the numeric kernels are generic over.
///
/// Blanket-implemented for `f32` and `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossless-enough conversion from `f64` for constants and RNG draws.
    fn from_f64_c(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant conversion")
    }
}

impl<T> Scalar for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + Sum
        + AddAssign
        + SubAssign
        + MulAssign
        + Debug
        + Display
        + Send
        + Sync
        + 'static
{
}

pub type Matrix32 = numkit::Matrix<f32>;
pub type Matrix64 = numkit::Matrix<f64>;
pub type FeatureSet64 = data::FeatureSet<f64>;
pub type ModelParams64 = model::ModelParams<f64>;
pub type TeacherModel64 = model::TeacherModel<f64>;
pub type MemoryBank64 = membank::MemoryBank<f64>;
pub type ItqModel64 = retrieval::ItqModel<f64>;
