//! Datasets, target/shadow partitions, membership splits and attack training sets.

mod attack_set;
mod dataset;
mod split;

pub use attack_set::{build_attack_training_set, collect_shadow_pairs, AttackDataset, AttackExample, PairRecord};
pub use dataset::{generate_blobs, split_target_shadow, Dataset};
pub use split::{balance_ratio_sample, make_membership_split, EvalTriple, Membership, MembershipSplit, ENCODING_LEGEND};
