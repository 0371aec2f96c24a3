//! Validated string identifiers.

use std::borrow::Borrow;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Longest accepted identifier, in characters.
pub const MAX_IDENT_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdentError {
    #[error("identifier must not be empty")]
    Empty,
    #[error("identifier longer than {MAX_IDENT_LEN} characters")]
    TooLong,
    #[error("identifier contains a non-printable character")]
    NotPrintable,
}

fn check(s: &str, allow_empty: bool) -> Result<(), IdentError> {
    if s.is_empty() && !allow_empty {
        return Err(IdentError::Empty);
    }
    if s.chars().count() > MAX_IDENT_LEN {
        return Err(IdentError::TooLong);
    }
    if s.chars().any(char::is_control) {
        return Err(IdentError::NotPrintable);
    }
    Ok(())
}

macro_rules! ident_type {
    ($(#[$meta:meta])* $name:ident, allow_empty = $allow:expr) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(try_from = "String", into = "String")]
        pub struct $name(String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Result<Self, IdentError> {
                let s = s.into();
                check(&s, $allow)?;
                Ok(Self(s))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl TryFrom<String> for $name {
            type Error = IdentError;
            fn try_from(s: String) -> Result<Self, Self::Error> {
                Self::new(s)
            }
        }

        impl std::str::FromStr for $name {
            type Err = IdentError;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                Self::new(s)
            }
        }

        impl TryFrom<&str> for $name {
            type Error = IdentError;
            fn try_from(s: &str) -> Result<Self, Self::Error> {
                Self::new(s)
            }
        }

        impl From<$name> for String {
            fn from(id: $name) -> String {
                id.0
            }
        }

        impl Borrow<str> for $name {
            fn borrow(&self) -> &str {
                &self.0
            }
        }

        impl AsRef<str> for $name {
            fn as_ref(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl PartialEq<str> for $name {
            fn eq(&self, other: &str) -> bool {
                self.0 == other
            }
        }

        impl PartialEq<&str> for $name {
            fn eq(&self, other: &&str) -> bool {
                self.0 == *other
            }
        }
    };
}

ident_type!(
    /// Logical substructure identity. Every physical copy of a substructure
    /// in every space shares this id.
    SubstructureId,
    allow_empty = false
);

ident_type!(
    /// Writer identity carried in version stamps. The empty actor is the
    /// origin writer of never-edited state and orders below every other.
    ActorId,
    allow_empty = true
);

impl ActorId {
    pub fn origin() -> Self {
        Self(String::new())
    }
}
