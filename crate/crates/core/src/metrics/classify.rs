use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::ClientLog;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    TrueAlarm,
    FalseAlarm,
    Miss,
}

/// The two indices of a detection that classification needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Detection {
    pub detection_seq: u64,
    pub cp_estimate: u64,
}

impl From<&crate::event::DetectionEvent> for Detection {
    fn from(e: &crate::event::DetectionEvent) -> Self {
        Detection { detection_seq: e.detection_seq, cp_estimate: e.cp_estimate }
    }
}

/// Classifies the first detection of a stream of length `len` with a change
/// at `t_cp`. A true alarm carries its gap `cp_estimate - t_cp`.
pub fn classify_detection(first: Option<Detection>, t_cp: u64, len: u64) -> Result<(Outcome, Option<u64>)> {
    if !(t_cp > 1 && t_cp <= len) {
        return Err(Error::Config(format!("t_cp {t_cp} outside (1, {len}]")));
    }
    Ok(match first {
        None => (Outcome::Miss, None),
        Some(d) if d.cp_estimate >= t_cp => (Outcome::TrueAlarm, Some(d.cp_estimate - t_cp)),
        Some(_) => (Outcome::FalseAlarm, None),
    })
}

/// Wall-clock detection delay: receipt of the reply that carried the
/// detection minus the send time of sample `t_cp`, in milliseconds.
pub fn actual_dd(detection_seq: u64, t_cp: u64, log: &ClientLog) -> Result<f64> {
    let sent = log
        .record(t_cp)
        .ok_or_else(|| Error::Accounting(format!("no send timestamp for seq {t_cp}")))?
        .client_send_ns;
    let received = log
        .record(detection_seq)
        .and_then(|r| r.reply_recv_ns)
        .ok_or_else(|| Error::Accounting(format!("no reply timestamp for seq {detection_seq}")))?;
    if received < sent {
        return Err(Error::Accounting(format!("reply for {detection_seq} precedes send of {t_cp}")));
    }
    Ok((received - sent) as f64 / 1e6)
}

/// First detection reported in a client log.
pub fn first_detection(log: &ClientLog) -> Option<Detection> {
    log.detections().next().map(|r| Detection {
        detection_seq: r.seq,
        cp_estimate: r.cp_index.unwrap_or(r.seq),
    })
}
