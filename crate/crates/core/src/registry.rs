//! Name-keyed lookup tables for runtime-selected strategies.

use std::fmt;

/// Ordered list of `(name, constructor)` pairs.
pub struct Registry<F> {
    what: &'static str,
    entries: Vec<(&'static str, F)>,
}

impl<F> Registry<F> {
    pub fn new(what: &'static str) -> Self {
        Self {
            what,
            entries: Vec::new(),
        }
    }

    pub fn with(mut self, name: &'static str, ctor: F) -> Self {
        assert!(
            self.lookup(name).is_none(),
            "duplicate {} `{name}`",
            self.what
        );
        self.entries.push((name, ctor));
        self
    }

    pub fn lookup(&self, name: &str) -> Option<&F> {
        self.entries
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, f)| f)
    }

    pub fn get(&self, name: &str) -> Result<&F, UnknownName> {
        self.lookup(name).ok_or_else(|| UnknownName {
            what: self.what,
            name: name.to_string(),
            known: self.names().join(", "),
        })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownName {
    pub what: &'static str,
    pub name: String,
    pub known: String,
}

impl fmt::Display for UnknownName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "unknown {} `{}` (known: {})",
            self.what, self.name, self.known
        )
    }
}

impl std::error::Error for UnknownName {}
