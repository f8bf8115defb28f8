//! Pass/fail records shared by the checking modules.

use std::fmt;

use serde::Serialize;

/// Outcome of a condition checked on a finite grid. A pass is a certificate
/// up to `certified_up_to` only; the conditions themselves quantify over all
/// occupancies.
#[derive(Clone, Debug, Serialize)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
    pub certified_up_to: usize,
    pub checked: u64,
    pub worst_residual: f64,
    pub witness: Option<String>,
    pub note: Option<String>,
}

impl Verdict {
    pub fn new(name: impl Into<String>, cutoff: usize) -> Self {
        Verdict {
            name: name.into(),
            pass: true,
            certified_up_to: cutoff,
            checked: 0,
            worst_residual: 0.0,
            witness: None,
            note: None,
        }
    }

    /// Records one grid point. The first failing point becomes the witness.
    pub fn record(&mut self, residual: f64, ok: bool, witness: impl FnOnce() -> String) {
        self.checked += 1;
        if residual.is_nan() || residual > self.worst_residual {
            self.worst_residual = residual;
        }
        if !ok && self.pass {
            self.pass = false;
            self.witness = Some(witness());
        }
    }

    pub fn fail(&mut self, witness: impl Into<String>) {
        if self.pass {
            self.pass = false;
            self.witness = Some(witness.into());
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} ({} points, certified up to {}, worst residual {:.3e})",
            self.name,
            if self.pass { "PASS" } else { "FAIL" },
            self.checked,
            self.certified_up_to,
            self.worst_residual
        )?;
        if let Some(w) = &self.witness {
            write!(f, ", witness {w}")?;
        }
        if let Some(n) = &self.note {
            write!(f, " [{n}]")?;
        }
        Ok(())
    }
}
