//! Teleoperation over RTP: wire codecs, session statistics, playout buffering,
//! a seedable impairment channel, a simulated differential-drive robot, the
//! command/telemetry control plane, a discrete-event protocol comparison and
//! the metrics pipeline that reports on all of it.

pub mod metrics;
pub mod netchan;
pub mod pilot;
pub mod playout;
pub mod race;
pub mod replicate;
pub mod robot;
pub mod session;
pub mod teleop;
pub mod wire;
