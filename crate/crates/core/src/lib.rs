//! Self Assessment Classifier: a coarse classifier proposes top-k ambiguity
//! classes; an auxiliary head jointly embeds image features with class-name
//! embeddings, reassesses the prediction, drops similar regions and localizes
//! informative areas.

pub mod assessment;
pub mod backbone;
pub mod diffcore;
pub mod dropping;
pub mod error;
pub mod harness;
pub mod joint_attention;
pub mod label_embed;
pub mod localization;
pub mod model;
pub mod synthdata;

pub use error::{Result, SacError};
