//! Dataset manifests, vote tables and the feature archive format.

pub mod archive;
pub mod record;
pub mod votes;

pub use archive::{archive_path, read_feature_archive, write_feature_archive, Block, FeatureArchive};
pub use record::{
    compute_mos, load_manifest, load_manifest_with_scale, write_manifest, DatasetManifest, RatingScale,
    VideoRecord,
};
pub use votes::{load_votes, write_votes, Vote, VoteTable};
