// Licensed under the Apache-2.0 license

//! Command-line harness for the gecko gripper twin: scenario runs, Monte
//! Carlo campaigns, pull tests, slow-drip retrieval and a live serve mode.

pub mod cli;
pub mod serve;
