//! Citation-context mining for a target paper: extract the sentences that
//! cite it, cluster them by sentiment, project and plot the clusters, write
//! polarity-specific summaries and score the results.

pub mod cluster;
pub mod corpus;
pub mod embed;
pub mod evaluate;
pub mod extract;
mod http;
pub mod pipeline;
pub mod project;
pub mod summarize;
pub mod textprep;

pub use http::{HttpError, RetryPolicy};
pub use pipeline::{run_pipeline, PipelineError, RunConfig};
