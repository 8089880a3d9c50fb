//! String keys for built-in laws and test functions.

use std::fmt;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::testfn::{make_cutoff, make_kernel, make_moment_testfn, TestFunction};
use crate::{BinaryDislocationLaw, DiscreteDislocationLaw, DislocationLaw};

/// Parsed law key.
#[derive(Clone, Debug, PartialEq)]
pub enum LawKey {
    BinaryUniform,
    BinaryBeta { p: f64, q: f64 },
    Dyadic,
    TernaryUniformDiscrete,
    Tabulated(PathBuf),
}

impl fmt::Display for LawKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LawKey::BinaryUniform => write!(f, "binary-uniform"),
            LawKey::BinaryBeta { p, q } => write!(f, "binary-beta({p},{q})"),
            LawKey::Dyadic => write!(f, "dyadic"),
            LawKey::TernaryUniformDiscrete => write!(f, "ternary-uniform-discrete"),
            LawKey::Tabulated(p) => write!(f, "tabulated:{}", p.display()),
        }
    }
}

/// Split `name(a,b,...)` into the name and its numeric arguments.
fn call_args(key: &str) -> Option<(&str, Vec<&str>)> {
    let open = key.find('(')?;
    let inner = key[open + 1..].strip_suffix(')')?;
    Some((&key[..open], inner.split(',').map(str::trim).collect()))
}

fn number(s: &str) -> Result<f64> {
    let v: f64 = s
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("`{s}` is not a number")))?;
    if !v.is_finite() {
        return Err(Error::InvalidParameter(format!("`{s}` is not finite")));
    }
    Ok(v)
}

impl LawKey {
    pub fn parse(key: &str) -> Result<Self> {
        let key = key.trim();
        match key {
            "binary-uniform" => return Ok(LawKey::BinaryUniform),
            "dyadic" => return Ok(LawKey::Dyadic),
            "ternary-uniform-discrete" => return Ok(LawKey::TernaryUniformDiscrete),
            _ => {}
        }
        if let Some(path) = key.strip_prefix("tabulated:") {
            if path.is_empty() {
                return Err(Error::InvalidParameter("tabulated law needs a path".into()));
            }
            return Ok(LawKey::Tabulated(PathBuf::from(path)));
        }
        match call_args(key) {
            Some(("binary-beta", args)) if args.len() == 2 => {
                let (p, q) = (number(args[0])?, number(args[1])?);
                if !(p >= 1.0 && q >= 1.0) {
                    return Err(Error::InvalidParameter(format!("beta parameters must be >= 1, got ({p}, {q})")));
                }
                Ok(LawKey::BinaryBeta { p, q })
            }
            _ => Err(Error::UnknownKey(key.to_string())),
        }
    }

    /// Build the law, reading the CSV file for tabulated keys.
    pub fn load(&self) -> Result<DislocationLaw> {
        Ok(match self {
            LawKey::BinaryUniform => BinaryDislocationLaw::uniform().into(),
            LawKey::BinaryBeta { p, q } => BinaryDislocationLaw::beta(*p, *q)?.into(),
            LawKey::Dyadic => DiscreteDislocationLaw::dyadic().into(),
            LawKey::TernaryUniformDiscrete => DiscreteDislocationLaw::ternary_uniform_discrete().into(),
            LawKey::Tabulated(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::InvalidParameter(format!("cannot read {}: {e}", path.display())))?;
                BinaryDislocationLaw::from_csv_str(&text)?.into()
            }
        })
    }
}

/// Parse and build a law in one step.
pub fn law_from_key(key: &str) -> Result<DislocationLaw> {
    LawKey::parse(key)?.load()
}

/// Test functions by key: the named elementary functions plus
/// `cutoff(g)`, `cutoff-derivative(g)`, `moment(k,g)` and `kernel(n)`.
pub fn testfn_from_key(key: &str) -> Result<TestFunction> {
    let key = key.trim();
    if let Ok(tf) = TestFunction::named(key) {
        return Ok(tf);
    }
    match call_args(key) {
        Some(("cutoff", a)) if a.len() == 1 => Ok(make_cutoff(number(a[0])?)?.0),
        Some(("cutoff-derivative", a)) if a.len() == 1 => Ok(make_cutoff(number(a[0])?)?.1),
        Some(("moment", a)) if a.len() == 2 => {
            let k: u32 = a[0]
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("bad moment order `{}`", a[0])))?;
            make_moment_testfn(k, number(a[1])?)
        }
        Some(("kernel", a)) if a.len() == 1 => {
            let n: usize = a[0]
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("bad kernel order `{}`", a[0])))?;
            make_kernel(n)
        }
        _ => Err(Error::UnknownKey(key.to_string())),
    }
}
