//! Descriptor encoding: PCA de-correlation, diagonal GMM and Fisher vectors.

mod fisher;
mod gmm;
mod pca;

pub use fisher::{fisher_vector, fv_len, power_l2_normalize, EncodingModel, FisherVector};
pub use gmm::{fit_gmm, GmmConfig, GmmFit, GmmModel};
pub use pca::{fit_pca, PcaModel};

/// Default PCA output dimension for CNN descriptors.
pub const DEFAULT_PCA_DIM: usize = 64;
/// Default number of mixture components.
pub const DEFAULT_GMM_COMPONENTS: usize = 256;
/// Default power-normalization exponent.
pub const DEFAULT_ALPHA: f64 = 0.5;
