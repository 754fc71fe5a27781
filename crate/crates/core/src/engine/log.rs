use std::fmt::Display;

use serde::{Deserialize, Serialize};

use crate::Tick;

/// Line-oriented event log, `tick=<t> event=<kind> ...`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventLog {
    enabled: bool,
    lines: Vec<String>,
}

impl EventLog {
    pub fn new(enabled: bool) -> Self {
        Self { enabled, lines: Vec::new() }
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn take(&mut self) -> Vec<String> {
        std::mem::take(&mut self.lines)
    }

    /// Protocol event: `tick=<t> event=<kind> node=<id> detail=<k=v,...>`.
    pub fn protocol(&mut self, tick: Tick, kind: &str, node: &str, detail: &[(&str, String)]) {
        if !self.enabled {
            return;
        }
        let detail: Vec<String> = detail.iter().map(|(k, v)| format!("{k}={v}")).collect();
        self.lines.push(format!("tick={tick} event={kind} node={node} detail={}", detail.join(",")));
    }

    /// Patient lifecycle event: `tick=<t> event=<kind> agent=<id> k=v ...`.
    pub fn lifecycle(&mut self, tick: Tick, kind: &str, agent: impl Display, extra: &[(&str, String)]) {
        if !self.enabled {
            return;
        }
        let mut line = format!("tick={tick} event={kind} agent={agent}");
        for (k, v) in extra {
            line.push_str(&format!(" {k}={v}"));
        }
        self.lines.push(line);
    }
}
