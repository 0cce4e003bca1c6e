use crate::netcore::{ConnKey, Micros};

/// One controller log entry. `detail` is space-separated `key=value` pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ControllerEvent {
    pub time: Micros,
    pub event: &'static str,
    pub conn: Option<ConnKey>,
    pub detail: String,
}

impl ControllerEvent {
    /// Value of `key=` in the detail string, if present.
    pub fn field(&self, key: &str) -> Option<&str> {
        self.detail
            .split(' ')
            .find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
    }
}

/// Append-only event log.
#[derive(Clone, Debug, Default)]
pub struct EventLog {
    events: Vec<ControllerEvent>,
}

impl EventLog {
    pub fn push(&mut self, time: Micros, event: &'static str, conn: Option<ConnKey>, detail: String) {
        let detail = match conn {
            Some(c) if detail.is_empty() => format!("conn={c}"),
            Some(c) => format!("conn={c} {detail}"),
            None => detail,
        };
        self.events.push(ControllerEvent {
            time,
            event,
            conn,
            detail,
        });
    }

    pub fn events(&self) -> &[ControllerEvent] {
        &self.events
    }

    pub fn of_kind<'a>(&'a self, event: &'a str) -> impl Iterator<Item = &'a ControllerEvent> + 'a {
        self.events.iter().filter(move |e| e.event == event)
    }

    pub fn into_events(self) -> Vec<ControllerEvent> {
        self.events
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_lookup() {
        let mut l = EventLog::default();
        l.push(
            5,
            "clone_instantiated",
            None,
            "latency_us=2500 strategy=VICTIM_IMAGE".into(),
        );
        let e = &l.events()[0];
        assert_eq!(e.field("latency_us"), Some("2500"));
        assert_eq!(e.field("strategy"), Some("VICTIM_IMAGE"));
        assert_eq!(e.field("latency"), None);
        assert_eq!(l.of_kind("clone_instantiated").count(), 1);
    }
}
