//! Core library for extracting individuals and organizations from financial-crime news
//! with prompted language models, and for scoring the results against curated gold lists.

pub mod bench;
pub mod corpus;
pub mod experiment;
pub mod extraction;
pub mod gateway;
pub mod matching;
pub mod prompts;
pub mod scoring;
pub mod text;
