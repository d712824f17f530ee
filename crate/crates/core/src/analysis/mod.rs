//! Statistics over review outcomes.

mod binomial;
mod chisq;
mod confusion;
pub mod special;
mod taxonomy;

pub use binomial::{clopper_pearson, BinomialInterval};
pub use chisq::{chi_square_independence, ChiSquare, ContingencyTable};
pub use confusion::{confusion_pairs, ConfusionPair, ConfusionTable};
pub use taxonomy::{hierarchy_distance, Taxonomy};
