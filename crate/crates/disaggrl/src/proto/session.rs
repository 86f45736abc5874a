//! Replica-session state machine.
//!
//! One machine tracks both directions of a replica<->learner connection:
//! Hello, then exactly one InitialObs, then a strict Actions/StepResult
//! alternation. AdrUpdate and Shutdown are legal in every non-Closed state.
//! Grads/AvgGrads belong to the DP gradient exchange and are never legal in
//! a replica session.

use thiserror::Error;

use super::msg::Message;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SessionState {
    AwaitHello,
    AwaitInitialObs,
    AwaitActions,
    AwaitStepResult,
    Closed,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("session violation in {state:?}: expected {expected}, got {actual}")]
pub struct SessionError {
    pub state: SessionState,
    pub expected: &'static str,
    pub actual: &'static str,
}

/// Advance the session machine by one message (sent or received).
pub fn session_step(state: SessionState, msg: &Message) -> Result<SessionState, SessionError> {
    use SessionState::*;
    let illegal = |expected: &'static str| {
        Err(SessionError {
            state,
            expected,
            actual: msg.type_name(),
        })
    };
    if state == Closed {
        return illegal("no further messages");
    }
    match msg {
        Message::Shutdown => Ok(Closed),
        Message::AdrUpdate { .. } => Ok(state),
        Message::Hello { .. } => match state {
            AwaitHello => Ok(AwaitInitialObs),
            _ => illegal(expected_of(state)),
        },
        Message::InitialObs { .. } => match state {
            AwaitInitialObs => Ok(AwaitActions),
            _ => illegal(expected_of(state)),
        },
        Message::Actions { .. } => match state {
            AwaitActions => Ok(AwaitStepResult),
            _ => illegal(expected_of(state)),
        },
        Message::StepResult { .. } => match state {
            AwaitStepResult => Ok(AwaitActions),
            _ => illegal(expected_of(state)),
        },
        Message::Grads { .. } | Message::AvgGrads { .. } => illegal(expected_of(state)),
    }
}

fn expected_of(state: SessionState) -> &'static str {
    match state {
        SessionState::AwaitHello => "Hello",
        SessionState::AwaitInitialObs => "InitialObs",
        SessionState::AwaitActions => "Actions",
        SessionState::AwaitStepResult => "StepResult",
        SessionState::Closed => "no further messages",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::proto::WireTensor;

    fn hello() -> Message {
        Message::Hello {
            replica_id: 0,
            num_envs: 1,
            obs_spec: vec![],
        }
    }

    fn initial_obs() -> Message {
        Message::InitialObs { obs: vec![] }
    }

    fn actions() -> Message {
        Message::Actions {
            actions: WireTensor::f32(vec![1, 3], vec![0.0; 3]).unwrap(),
        }
    }

    fn step_result() -> Message {
        Message::StepResult {
            rewards: WireTensor::f32(vec![1], vec![0.0]).unwrap(),
            dones: WireTensor::u8(vec![1], vec![0]).unwrap(),
            obs: vec![],
            successes: WireTensor::u8(vec![1], vec![0]).unwrap(),
        }
    }

    fn adr() -> Message {
        Message::AdrUpdate {
            fractions: WireTensor::f32(vec![1], vec![0.5]).unwrap(),
        }
    }

    fn grads() -> Message {
        Message::Grads {
            step_id: 0,
            flat: WireTensor::f32(vec![1], vec![0.0]).unwrap(),
        }
    }

    #[test]
    fn happy_path() {
        use SessionState::*;
        let mut s = AwaitHello;
        s = session_step(s, &hello()).unwrap();
        assert_eq!(s, AwaitInitialObs);
        s = session_step(s, &initial_obs()).unwrap();
        assert_eq!(s, AwaitActions);
        for _ in 0..3 {
            s = session_step(s, &actions()).unwrap();
            assert_eq!(s, AwaitStepResult);
            s = session_step(s, &step_result()).unwrap();
            assert_eq!(s, AwaitActions);
        }
        s = session_step(s, &Message::Shutdown).unwrap();
        assert_eq!(s, Closed);
    }

    #[test]
    fn step_result_before_actions_is_rejected() {
        let err = session_step(SessionState::AwaitActions, &step_result()).unwrap_err();
        assert_eq!(err.expected, "Actions");
        assert_eq!(err.actual, "StepResult");
    }

    #[test]
    fn adr_update_interleaves_anywhere_running() {
        use SessionState::*;
        for s in [AwaitHello, AwaitInitialObs, AwaitActions, AwaitStepResult] {
            assert_eq!(session_step(s, &adr()).unwrap(), s);
            assert_eq!(session_step(s, &Message::Shutdown).unwrap(), Closed);
        }
    }

    #[test]
    fn closed_rejects_everything() {
        for m in [hello(), initial_obs(), actions(), step_result(), adr(), Message::Shutdown] {
            assert!(session_step(SessionState::Closed, &m).is_err());
        }
    }

    /// Exhaustive legality table: (state, message kind) -> next state or error.
    #[test]
    fn transition_table_is_exactly_as_specified() {
        use SessionState::*;
        let msgs: Vec<(Message, &str)> = vec![
            (hello(), "Hello"),
            (initial_obs(), "InitialObs"),
            (actions(), "Actions"),
            (step_result(), "StepResult"),
            (adr(), "AdrUpdate"),
            (grads(), "Grads"),
            (Message::Shutdown, "Shutdown"),
        ];
        let states = [AwaitHello, AwaitInitialObs, AwaitActions, AwaitStepResult, Closed];
        for s in states {
            for (m, name) in &msgs {
                let got = session_step(s, m);
                let want: Option<SessionState> = match (s, *name) {
                    (Closed, _) => None,
                    (_, "Shutdown") => Some(Closed),
                    (_, "AdrUpdate") => Some(s),
                    (AwaitHello, "Hello") => Some(AwaitInitialObs),
                    (AwaitInitialObs, "InitialObs") => Some(AwaitActions),
                    (AwaitActions, "Actions") => Some(AwaitStepResult),
                    (AwaitStepResult, "StepResult") => Some(AwaitActions),
                    _ => None,
                };
                match want {
                    Some(next) => assert_eq!(got.unwrap(), next, "state {s:?} msg {name}"),
                    None => assert!(got.is_err(), "state {s:?} msg {name} should be illegal"),
                }
            }
        }
    }
}
