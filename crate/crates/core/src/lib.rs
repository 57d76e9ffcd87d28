// Licensed under the Apache-2.0 license

//! Software twin of a gecko-adhesive perching gripper.
//!
//! * [`protocol`], [`registers`], [`bus`]: the servo-bus wire format and the
//!   half-duplex bus the gripper shares with the perching-arm joints.
//! * [`firmware`]: the gripper's command set, auto-grasp trigger and
//!   experiment log, exposed on the bus as a virtual servo.
//! * [`adhesion`]: opposed tile-pair contact and capacity model.
//! * [`sim`]: planar free-flyer perching simulator and Monte Carlo campaigns.
//! * [`pac`]: host-side bridge that turns named commands into bus traffic and
//!   retrieves logs by slow-drip.

pub mod adhesion;
pub mod bus;
pub mod config;
pub mod firmware;
pub mod pac;
pub mod protocol;
pub mod registers;
pub mod sim;
