use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Access level of a service user.
///
/// Regular users may look up and submit sessions, helpers may also label
/// sessions, and the administrator may additionally retrain and rescore.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Regular,
    Helper,
    Admin,
}

impl Role {
    pub fn can_annotate(self) -> bool {
        matches!(self, Role::Helper | Role::Admin)
    }

    pub fn can_administer(self) -> bool {
        self == Role::Admin
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Regular => "regular",
            Role::Helper => "helper",
            Role::Admin => "admin",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "regular" => Ok(Role::Regular),
            "helper" => Ok(Role::Helper),
            "admin" | "administrator" => Ok(Role::Admin),
            other => Err(format!("unknown role `{other}`")),
        }
    }
}
