//! Length-controlled preference optimization, at desk scale.
//!
//! * [`objectives`]: SFT, DPO, SimPO, SimPER, ORPO and LCPO losses with
//!   analytic gradients.
//! * [`convergence`]: Bradley-Terry margins and the saturation conditions
//!   each objective must meet.
//! * [`datapipe`]: rollout ingestion, pass-rate labels and shortest/longest
//!   preference pairs.
//! * [`toylab`]: a bigram policy, sampler and trainer for synthetic corpora.
//! * [`evalharness`]: pass@1 accuracy, response length and reduction tables.
//! * [`cli`]: the `lcpo-lab` command line.

pub mod cli;
pub mod convergence;
pub mod datapipe;
pub mod evalharness;
pub mod numeric;
pub mod objectives;
pub mod toylab;
