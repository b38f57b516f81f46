use serde::Serialize;
use thiserror::Error;

use smartrescue_client::ClientError;
use smartrescue_sim::SimError;

/// Exit status for usage and input errors.
pub const EXIT_USAGE: i32 = 2;
/// Exit status for runtime failures.
pub const EXIT_RUNTIME: i32 = 1;

#[derive(Debug, Error)]
#[error("{message}")]
pub struct CliError {
    pub code: &'static str,
    pub message: String,
    pub exit_code: i32,
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    error: &'a str,
    message: &'a str,
}

impl CliError {
    pub fn usage(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            exit_code: EXIT_USAGE,
        }
    }

    pub fn runtime(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            exit_code: EXIT_RUNTIME,
        }
    }

    /// Single-line JSON form written to stderr before exiting.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&ErrorLine {
            error: self.code,
            message: &self.message,
        })
        .expect("error line serializes")
    }
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        let message = e.to_string();
        match e {
            ClientError::ConnectionRefused { .. } => Self::runtime("BROKER_UNREACHABLE", message),
            ClientError::VersionMismatch(_) => Self::runtime("VERSION_MISMATCH", message),
            ClientError::HandshakeTimeout => Self::runtime("HANDSHAKE_TIMEOUT", message),
            ClientError::HandshakeRejected(_) => Self::runtime("HANDSHAKE_REJECTED", message),
            ClientError::InvalidClientId(_) => Self::usage("INVALID_CLIENT_ID", message),
            ClientError::NotAPublisher => Self::usage("NOT_A_PUBLISHER", message),
            ClientError::NotASubscriber => Self::usage("NOT_A_SUBSCRIBER", message),
            ClientError::SessionClosed => Self::runtime("SESSION_CLOSED", message),
            ClientError::EventInvalid(_) => Self::usage("EVENT_INVALID", message),
            ClientError::InvalidPredicate(_) => Self::usage("INVALID_PREDICATE", message),
            ClientError::Broker { .. } => Self::runtime("BROKER_ERROR", message),
            ClientError::Timeout(_) => Self::runtime("TIMEOUT", message),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        let message = e.to_string();
        match e {
            SimError::InvalidScenario(_) | SimError::CellOutOfGrid(_) | SimError::UnsupportedRate(_) => {
                Self::usage("INVALID_SCENARIO", message)
            }
            SimError::BrokerUnreachable(_) => Self::runtime("BROKER_UNREACHABLE", message),
            SimError::Publish { .. } => Self::runtime("PUBLISH_FAILED", message),
        }
    }
}
