//! Deterministic interleavings over the WFE pause points.
//!
//! A script is a `;`-separated list of `role:point` or `role:finish` steps.
//! Exactly one role runs at a time: the role named by the current step runs
//! until it reaches that pause point (or returns, for `finish`), then the
//! next step's role takes over. Once the script is exhausted every role runs
//! freely. An empty script is a plain concurrent run.
//!
//! ```
//! use std::sync::Arc;
//! use wfe_reclaim::harness::schedule::ScheduleController;
//!
//! let ctl = Arc::new(ScheduleController::new("a:finish; b:finish").unwrap());
//! let order = std::sync::Mutex::new(Vec::new());
//! ctl.run(vec![
//!     ("b", Box::new(|| order.lock().unwrap().push('b'))),
//!     ("a", Box::new(|| order.lock().unwrap().push('a'))),
//! ])
//! .unwrap();
//! assert_eq!(*order.lock().unwrap(), vec!['a', 'b']);
//! ```

use std::cell::RefCell;
use std::fmt;
use std::str::FromStr;
use std::sync::{Condvar, Mutex, MutexGuard};
use std::thread;
use std::time::{Duration, Instant};

use crate::wfe::{PausePoint, ScheduleHooks};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Until {
    Point(PausePoint),
    Finish,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Step {
    pub role: String,
    pub until: Until,
}

impl FromStr for Step {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (role, what) =
            s.split_once(':').ok_or_else(|| Error::Usage(format!("schedule step `{s}` is not role:point")))?;
        let role = role.trim();
        if role.is_empty() {
            return Err(Error::Usage(format!("schedule step `{s}` has no role")));
        }
        let until = match what.trim() {
            "finish" => Until::Finish,
            p => Until::Point(p.parse()?),
        };
        Ok(Step { role: role.to_string(), until })
    }
}

/// Parses a script; unknown pause points are usage errors.
pub fn parse_script(script: &str) -> Result<Vec<Step>> {
    script.split(';').map(str::trim).filter(|s| !s.is_empty()).map(str::parse).collect()
}

/// Something a role did while the script was in control.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Event {
    pub role: String,
    /// `None` when the role returned.
    pub point: Option<PausePoint>,
    pub tid: Option<usize>,
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.point {
            Some(p) => write!(f, "{}@{}", self.role, p),
            None => write!(f, "{}@finish", self.role),
        }
    }
}

#[derive(Default)]
struct State {
    step: usize,
    released: bool,
    trace: Vec<Event>,
    error: Option<String>,
}

thread_local! {
    static ROLE: RefCell<Option<String>> = const { RefCell::new(None) };
}

pub type RoleFn<'s> = Box<dyn FnOnce() + Send + 's>;

pub struct ScheduleController {
    steps: Vec<Step>,
    state: Mutex<State>,
    cv: Condvar,
    timeout: Duration,
}

impl ScheduleController {
    pub fn new(script: &str) -> Result<Self> {
        let steps = parse_script(script)?;
        Ok(Self {
            state: Mutex::new(State { released: steps.is_empty(), ..State::default() }),
            steps,
            cv: Condvar::new(),
            timeout: Duration::from_secs(10),
        })
    }

    /// How long a role may wait for its turn before the run is aborted.
    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn advance(&self, st: &mut State) {
        st.step += 1;
        if st.step == self.steps.len() {
            st.released = true;
        }
        self.cv.notify_all();
    }

    fn abort(&self, st: &mut State, why: String) {
        st.error.get_or_insert(why);
        st.released = true;
        self.cv.notify_all();
    }

    /// Blocks until `role` holds the turn (or the script is over).
    fn wait_turn<'a>(&'a self, mut st: MutexGuard<'a, State>, role: &str) -> MutexGuard<'a, State> {
        let deadline = Instant::now() + self.timeout;
        while !st.released && self.steps[st.step].role != role {
            let now = Instant::now();
            if now >= deadline {
                let why = format!("`{role}` timed out waiting for step {} ({:?})", st.step, self.steps[st.step]);
                self.abort(&mut st, why);
                break;
            }
            st = self.cv.wait_timeout(st, deadline - now).unwrap_or_else(|e| e.into_inner()).0;
        }
        st
    }

    fn finished(&self, role: &str) {
        let mut st = self.lock();
        st.trace.push(Event { role: role.to_string(), point: None, tid: None });
        if st.released {
            return;
        }
        let step = &self.steps[st.step];
        if step.role == role {
            if step.until == Until::Finish {
                self.advance(&mut st);
            } else {
                let why = format!("`{role}` returned before reaching {:?}", step.until);
                self.abort(&mut st, why);
            }
        }
    }

    /// Runs each role on its own thread under the script. Returns the trace
    /// of script-relevant events, or the reason the script could not be
    /// followed.
    pub fn run<'s>(&self, roles: Vec<(&str, RoleFn<'s>)>) -> Result<Vec<Event>> {
        for step in &self.steps {
            if !roles.iter().any(|(r, _)| *r == step.role) {
                return Err(Error::Usage(format!("script names unknown role `{}`", step.role)));
            }
        }
        {
            let mut st = self.lock();
            *st = State { released: self.steps.is_empty(), ..State::default() };
        }
        let panicked = thread::scope(|s| {
            let threads: Vec<_> = roles
                .into_iter()
                .map(|(role, f)| {
                    let role = role.to_string();
                    s.spawn(move || {
                        ROLE.with(|r| *r.borrow_mut() = Some(role.clone()));
                        let guard = FinishGuard { ctl: self, role: &role };
                        drop(self.wait_turn(self.lock(), &role));
                        f();
                        drop(guard);
                    })
                })
                .collect();
            threads.into_iter().filter_map(|t| t.join().err()).count()
        });
        let st = self.lock();
        if panicked > 0 {
            return Err(Error::Schedule(format!("{panicked} role(s) panicked")));
        }
        if let Some(e) = &st.error {
            return Err(Error::Schedule(e.clone()));
        }
        if st.step < self.steps.len() {
            return Err(Error::Schedule(format!("script stopped at step {} of {}", st.step, self.steps.len())));
        }
        Ok(st.trace.clone())
    }
}

struct FinishGuard<'a> {
    ctl: &'a ScheduleController,
    role: &'a str,
}

impl Drop for FinishGuard<'_> {
    fn drop(&mut self) {
        self.ctl.finished(self.role);
    }
}

impl ScheduleHooks for ScheduleController {
    fn pause(&self, point: PausePoint, tid: usize) {
        let Some(role) = ROLE.with(|r| r.borrow().clone()) else {
            return;
        };
        let mut st = self.lock();
        if st.released {
            return;
        }
        let step = &self.steps[st.step];
        if step.role != role || step.until != Until::Point(point) {
            return;
        }
        st.trace.push(Event { role: role.clone(), point: Some(point), tid: Some(tid) });
        self.advance(&mut st);
        drop(self.wait_turn(st, &role));
    }
}

impl fmt::Debug for ScheduleController {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScheduleController").field("steps", &self.steps).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rejects() {
        let steps = parse_script("owner:after_pending_flip; helper:finish ;").unwrap();
        assert_eq!(steps.len(), 2);
        assert_eq!(steps[0].until, Until::Point(PausePoint::AfterPendingFlip));
        assert!(parse_script("owner:line_45").is_err());
        assert!(parse_script("owner").is_err());
        assert!(parse_script("").unwrap().is_empty());
    }

    #[test]
    fn unknown_role_is_rejected() {
        let ctl = ScheduleController::new("ghost:finish").unwrap();
        assert!(matches!(ctl.run(vec![("a", Box::new(|| {}))]), Err(Error::Usage(_))));
    }

    #[test]
    fn unreached_point_aborts() {
        let ctl = ScheduleController::new("a:after_pending_flip; b:finish").unwrap();
        let r = ctl.run(vec![("a", Box::new(|| {})), ("b", Box::new(|| {}))]);
        assert!(matches!(r, Err(Error::Schedule(_))));
    }
}
