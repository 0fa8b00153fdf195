use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The four add-on networks that can be switched on around the backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct AblationFlags {
    pub atrous_139: bool,
    pub atrous_124: bool,
    pub pool_max: bool,
    pub pool_avg: bool,
}

impl AblationFlags {
    pub const NONE: AblationFlags = AblationFlags::new(false, false, false, false);
    pub const ALL: AblationFlags = AblationFlags::new(true, true, true, true);

    pub const fn new(atrous_139: bool, atrous_124: bool, pool_max: bool, pool_avg: bool) -> Self {
        AblationFlags {
            atrous_139,
            atrous_124,
            pool_max,
            pool_avg,
        }
    }

    /// The ten combinations of the ablation table, in row order.
    pub const fn ablation_rows() -> [AblationFlags; 10] {
        [
            AblationFlags::new(false, false, false, false),
            AblationFlags::new(true, false, false, false),
            AblationFlags::new(false, true, false, false),
            AblationFlags::new(true, true, false, false),
            AblationFlags::new(false, false, true, false),
            AblationFlags::new(false, false, false, true),
            AblationFlags::new(false, false, true, true),
            AblationFlags::new(true, true, false, true),
            AblationFlags::new(true, true, true, false),
            AblationFlags::new(true, true, true, true),
        ]
    }

    pub fn any_atrous(&self) -> bool {
        self.atrous_124 || self.atrous_139
    }

    pub fn any_pool(&self) -> bool {
        self.pool_max || self.pool_avg
    }

    /// Parse `none`, `all`, or a `+`/`,`-separated subset of
    /// `139`, `124`, `max`, `avg`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "none" | "" => return Ok(Self::NONE),
            "all" => return Ok(Self::ALL),
            _ => {}
        }
        let mut f = Self::NONE;
        for part in s.split(['+', ',']) {
            match part.trim() {
                "139" => f.atrous_139 = true,
                "124" => f.atrous_124 = true,
                "max" => f.pool_max = true,
                "avg" => f.pool_avg = true,
                other => return Err(Error::config(format!("unknown ablation flag {other:?}"))),
            }
        }
        Ok(f)
    }
}

impl fmt::Display for AblationFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = [
            (self.atrous_139, "139"),
            (self.atrous_124, "124"),
            (self.pool_max, "max"),
            (self.pool_avg, "avg"),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, n)| *n)
        .collect();
        if parts.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&parts.join("+"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub base_channels: usize,
    pub depth: usize,
    pub num_classes: usize,
    pub in_channels: usize,
    /// `(height, width)`.
    pub input_size: (usize, usize),
    pub flags: AblationFlags,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            base_channels: 32,
            depth: 4,
            num_classes: 4,
            in_channels: 1,
            input_size: (64, 64),
            flags: AblationFlags::NONE,
        }
    }
}

impl ModelConfig {
    pub fn with_flags(mut self, flags: AblationFlags) -> Self {
        self.flags = flags;
        self
    }

    /// Channel width of encoder/decoder level `level` (1-based).
    pub fn width(&self, level: usize) -> usize {
        self.base_channels << (level - 1)
    }

    pub fn bottleneck_width(&self) -> usize {
        self.base_channels << self.depth
    }

    /// `(height, width)` of encoder/decoder level `level`.
    pub fn level_size(&self, level: usize) -> (usize, usize) {
        (
            self.input_size.0 >> (level - 1),
            self.input_size.1 >> (level - 1),
        )
    }

    /// Serial augmented atrous modules on the skip path of `level`:
    /// `depth` at the top level down to one at the deepest.
    pub fn skip_modules(&self, level: usize) -> usize {
        self.depth + 1 - level
    }

    /// Encoder levels that feed pooling pyramids.
    pub fn pyramid_levels(&self) -> std::ops::Range<usize> {
        1..self.depth
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.in_channels == 0 {
            return Err(Error::config("channel counts must be positive"));
        }
        if self.depth == 0 || self.depth > 8 {
            return Err(Error::config(format!(
                "depth must be in 1..=8, got {}",
                self.depth
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::config("need at least two classes"));
        }
        let (h, w) = self.input_size;
        let m = 1usize << self.depth;
        if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return Err(Error::config(format!(
                "input {h}x{w} must be divisible by 2^depth = {m}"
            )));
        }
        if self.flags.any_pool() && self.depth >= 2 {
            let (ph, pw) = self.level_size(self.depth - 1);
            if ph < 10 || pw < 10 {
                return Err(Error::config(format!(
                    "pooling pyramid at level {} sees {ph}x{pw}, needs at least 10x10",
                    self.depth - 1
                )));
            }
        }
        Ok(())
    }
}
