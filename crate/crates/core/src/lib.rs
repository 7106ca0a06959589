//! Adaptive online detection of commercial-campaign sessions in community
//! Q&A forums.
//!
//! Sessions are described by three spam-grade features computed from the
//! labeled history: how often the questioner and the best answerer took part
//! in campaign sessions, and how campaign-specific the session's words are.
//! A logistic regression model turns them into a campaign score. The
//! [`adaptive`] module replays a labeled corpus in time order, retraining as
//! labels arrive, and [`server`] exposes the detector over HTTP.

pub mod adaptive;
pub mod classifier;
pub mod cli;
pub mod corpus;
pub mod features;
pub mod role;
pub mod server;
pub mod store;
pub mod textstats;
