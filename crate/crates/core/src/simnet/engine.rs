use std::collections::BTreeMap;

use thiserror::Error;

use crate::netcore::Micros;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("cannot schedule at {at} us: clock is already at {now} us")]
    SchedulingInPast { at: Micros, now: Micros },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventId(pub u64);

/// A scheduled action over the simulation state `S`.
pub type EventFn<S> = Box<dyn FnOnce(&mut S, &mut Engine<S>)>;

/// One dispatched event, as recorded in the engine log.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LoggedEvent {
    pub time: Micros,
    pub id: u64,
    pub label: &'static str,
}

struct Pending<S> {
    label: &'static str,
    action: EventFn<S>,
}

/// Single-threaded discrete-event engine.
///
/// Events are ordered by `(time, insertion order)`. The clock only moves when
/// an event is dispatched.
pub struct Engine<S> {
    now: Micros,
    next_id: u64,
    queue: BTreeMap<(Micros, u64), Pending<S>>,
    log: Option<Vec<LoggedEvent>>,
}

impl<S> Default for Engine<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S> Engine<S> {
    pub fn new() -> Self {
        Engine {
            now: 0,
            next_id: 0,
            queue: BTreeMap::new(),
            log: None,
        }
    }

    /// Engine that records every dispatched event.
    pub fn with_log() -> Self {
        Engine {
            log: Some(Vec::new()),
            ..Self::new()
        }
    }

    pub fn now(&self) -> Micros {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn log(&self) -> &[LoggedEvent] {
        self.log.as_deref().unwrap_or(&[])
    }

    pub fn schedule<F>(&mut self, at: Micros, label: &'static str, action: F) -> Result<EventId, SimError>
    where
        F: FnOnce(&mut S, &mut Engine<S>) + 'static,
    {
        if at < self.now {
            return Err(SimError::SchedulingInPast { at, now: self.now });
        }
        let id = self.next_id;
        self.next_id += 1;
        self.queue.insert(
            (at, id),
            Pending {
                label,
                action: Box::new(action),
            },
        );
        Ok(EventId(id))
    }

    /// Schedule `delay` microseconds from now. Never fails.
    pub fn schedule_in<F>(&mut self, delay: Micros, label: &'static str, action: F) -> EventId
    where
        F: FnOnce(&mut S, &mut Engine<S>) + 'static,
    {
        let at = self.now + delay;
        self.schedule(at, label, action)
            .expect("relative schedule cannot be in the past")
    }

    /// Dispatch every event with time `<= t_end`, returning how many ran.
    pub fn run_until(&mut self, state: &mut S, t_end: Micros) -> usize {
        let mut dispatched = 0;
        loop {
            let key = match self.queue.first_key_value() {
                Some((&key, _)) if key.0 <= t_end => key,
                _ => break,
            };
            let pending = self.queue.remove(&key).expect("key just observed");
            self.now = key.0;
            if let Some(log) = self.log.as_mut() {
                log.push(LoggedEvent {
                    time: key.0,
                    id: key.1,
                    label: pending.label,
                });
            }
            (pending.action)(state, self);
            dispatched += 1;
        }
        dispatched
    }
}
