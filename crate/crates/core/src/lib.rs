//! Decision-aware training of probabilistic count forecasters for top-K
//! site selection.

pub mod data;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod models;
pub mod ranking;
pub mod rng;
pub mod score_grad;
pub mod smoothing;
pub mod special;
pub mod topk;
pub mod training;

pub use error::{Error, Result};
pub use metrics::{bpr, bpr_or_one, BprConfig, Outcome};
pub use ranking::{mean_rank, ratio_rank, Estimator, SampleBatch};
pub use topk::{rank, topk_ids, topk_mask, RankingVector, TopKIds, TopKMask};
pub use score_grad::{chain_grad_phi, score_function_grad, ScoreBatch};
pub use smoothing::{perturbed_topk_forward, perturbed_topk_jacobian, smoothed_loss_grad_check, PerturbedTopK, SmoothingConfig};
