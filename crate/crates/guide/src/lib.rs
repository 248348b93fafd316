//! The chapters of `book/`, included here so `cargo test --doc` runs
//! their snippets.

#[doc = include_str!("../../../book/src/introduction.md")]
mod introduction {}

#[doc = include_str!("../../../book/src/corpus.md")]
mod corpus {}

#[doc = include_str!("../../../book/src/classifier.md")]
mod classifier {}

#[doc = include_str!("../../../book/src/localization.md")]
mod localization {}

#[doc = include_str!("../../../book/src/captioner.md")]
mod captioner {}

#[doc = include_str!("../../../book/src/pipeline.md")]
mod pipeline {}

#[doc = include_str!("../../../book/src/metrics.md")]
mod metrics {}

#[doc = include_str!("../../../book/src/service.md")]
mod service {}

#[doc = include_str!("../../../book/src/cli.md")]
mod cli {}
