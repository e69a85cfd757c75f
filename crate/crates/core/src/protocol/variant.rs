use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::feataug::MixtureMode;

/// Pooling of a class's per-slot similarities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    #[default]
    Sum,
    Max,
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Sum => "sum",
            Aggregation::Max => "max",
        })
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "sum" => Ok(Aggregation::Sum),
            "max" => Ok(Aggregation::Max),
            other => Err(Error::Config(format!("unknown aggregation '{other}' (expected sum or max)"))),
        }
    }
}

/// Which method components are active. Cross-entropy is always on.
///
/// Written as `ce[+sscl][+pc][+fa]`, optionally followed by `:mixture`
/// (e.g. `ce+sscl+pc+fa:ori+noise`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationVariant {
    pub use_sscl: bool,
    pub use_proxy: bool,
    pub use_feataug: bool,
    pub mixture: MixtureMode,
}

impl AblationVariant {
    pub const CE: Self = Self::flags(false, false, false);
    pub const CE_PC: Self = Self::flags(false, true, false);
    pub const CE_SSCL: Self = Self::flags(true, false, false);
    pub const CE_SSCL_PC: Self = Self::flags(true, true, false);
    pub const CE_PC_FA: Self = Self::flags(false, true, true);
    pub const FULL: Self = Self::flags(true, true, true);

    pub const fn flags(use_sscl: bool, use_proxy: bool, use_feataug: bool) -> Self {
        Self {
            use_sscl,
            use_proxy,
            use_feataug,
            mixture: MixtureMode::AUG_AUG,
        }
    }

    pub const fn with_mixture(self, mixture: MixtureMode) -> Self {
        Self { mixture, ..self }
    }

    /// The component grid followed by the full method under every other mixture.
    pub fn default_grid() -> Vec<Self> {
        let mut grid = vec![Self::CE, Self::CE_PC, Self::CE_SSCL, Self::CE_SSCL_PC, Self::CE_PC_FA, Self::FULL];
        grid.extend(
            MixtureMode::ALL
                .into_iter()
                .filter(|m| *m != MixtureMode::AUG_AUG)
                .map(|m| Self::FULL.with_mixture(m)),
        );
        grid
    }

    pub fn validate(&self) -> Result<()> {
        if self.use_feataug && !self.use_proxy {
            return Err(Error::Config(format!(
                "variant {self}: feature augmentation needs proxy classes to carry the mixed rows"
            )));
        }
        if !self.use_feataug && self.mixture != MixtureMode::AUG_AUG {
            return Err(Error::Config(format!("variant {self}: a mixture mode needs feature augmentation")));
        }
        Ok(())
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ce")?;
        if self.use_sscl {
            f.write_str("+sscl")?;
        }
        if self.use_proxy {
            f.write_str("+pc")?;
        }
        if self.use_feataug {
            f.write_str("+fa")?;
        }
        if self.mixture != MixtureMode::AUG_AUG {
            write!(f, ":{}", self.mixture)?;
        }
        Ok(())
    }
}

impl FromStr for AblationVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (parts, mixture) = match s.split_once(':') {
            Some((p, m)) => (p, m.parse::<MixtureMode>()?),
            None => (s, MixtureMode::AUG_AUG),
        };
        let mut tokens = parts.split('+');
        if tokens.next() != Some("ce") {
            return Err(Error::Config(format!("variant '{s}' must start with 'ce'")));
        }
        let mut v = Self::CE.with_mixture(mixture);
        for t in tokens {
            let flag = match t {
                "sscl" => &mut v.use_sscl,
                "pc" => &mut v.use_proxy,
                "fa" => &mut v.use_feataug,
                other => return Err(Error::Config(format!("variant '{s}': unknown component '{other}'"))),
            };
            if *flag {
                return Err(Error::Config(format!("variant '{s}': component '{t}' repeated")));
            }
            *flag = true;
        }
        v.validate()?;
        Ok(v)
    }
}
