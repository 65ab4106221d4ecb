use std::fmt;
use std::str::FromStr;

use crate::context::ContextSchema;
use crate::data::Unit;
use crate::error::{Error, Result};

/// Which parts of the network the context is allowed to change.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Context is ignored.
    Unadapted,
    /// Only the output-layer bias depends on context.
    SoftmaxBias,
    /// Context adds a bias to every gate of the recurrent layer.
    ConcatCell,
    /// Context adds a bias and a low-rank update to the recurrent weights.
    FactorCell,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Unadapted,
        Variant::SoftmaxBias,
        Variant::ConcatCell,
        Variant::FactorCell,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Unadapted => "unadapted",
            Variant::SoftmaxBias => "softmax_bias",
            Variant::ConcatCell => "concat_cell",
            Variant::FactorCell => "factor_cell",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Variant::Unadapted => 0,
            Variant::SoftmaxBias => 1,
            Variant::ConcatCell => 2,
            Variant::FactorCell => 3,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        Variant::ALL.get(c as usize).copied()
    }

    /// Whether the recurrent layer receives the context bias `V·c`.
    pub fn adapts_recurrent_bias(self) -> bool {
        matches!(self, Variant::ConcatCell | Variant::FactorCell)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

/// How the output bias is adapted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BiasMode {
    Off,
    /// A learned bias row per combination of categorical values.
    OneHot,
    /// `Q·c` with `Q ∈ R^{|V|×k}`.
    Projected,
}

impl BiasMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BiasMode::Off => "off",
            BiasMode::OneHot => "one_hot",
            BiasMode::Projected => "projected",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            BiasMode::Off => 0,
            BiasMode::OneHot => 1,
            BiasMode::Projected => 2,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        [BiasMode::Off, BiasMode::OneHot, BiasMode::Projected]
            .get(c as usize)
            .copied()
    }
}

impl fmt::Display for BiasMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BiasMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(BiasMode::Off),
            "one_hot" => Ok(BiasMode::OneHot),
            "projected" => Ok(BiasMode::Projected),
            _ => Err(Error::Config(format!("unknown softmax bias mode {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub vocab_size: usize,
    /// e
    pub word_dim: usize,
    /// d
    pub hidden_dim: usize,
    /// k
    pub context_dim: usize,
    /// r; zero unless the variant is FactorCell.
    pub rank: usize,
    pub softmax_bias: BiasMode,
    pub unit: Unit,
    /// Width of the encoder's hidden layer; 0 selects `2·context_dim`.
    pub encoder_hidden: usize,
    /// Largest class table allowed for one-hot bias mode.
    pub one_hot_max_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::FactorCell,
            vocab_size: 0,
            word_dim: 32,
            hidden_dim: 64,
            context_dim: 4,
            rank: 4,
            softmax_bias: BiasMode::Projected,
            unit: Unit::Word,
            encoder_hidden: 0,
            one_hot_max_classes: 64,
        }
    }
}

impl ModelConfig {
    /// Input width of the recurrent layer, `e + d`.
    pub fn input_dim(&self) -> usize {
        self.word_dim + self.hidden_dim
    }

    /// Rows of the recurrent weight matrix, `3d`.
    pub fn gate_dim(&self) -> usize {
        3 * self.hidden_dim
    }

    pub fn encoder_width(&self) -> usize {
        if self.encoder_hidden == 0 {
            2 * self.context_dim
        } else {
            self.encoder_hidden
        }
    }

    /// Whether the model computes a context embedding at all.
    pub fn uses_embedding(&self) -> bool {
        self.variant.adapts_recurrent_bias() || self.softmax_bias == BiasMode::Projected
    }

    pub fn has_projection(&self) -> bool {
        self.word_dim != self.hidden_dim
    }

    pub fn validate(&self, schema: &ContextSchema) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.vocab_size == 0 || self.word_dim == 0 || self.hidden_dim == 0 {
            return err("vocab_size, word_dim and hidden_dim must be positive".into());
        }
        match (self.variant, self.rank) {
            (Variant::FactorCell, 0) => return err("factor_cell needs rank >= 1".into()),
            (Variant::FactorCell, _) | (_, 0) => {}
            (v, r) => return err(format!("{v} does not take a rank (got {r})")),
        }
        match (self.variant, self.softmax_bias) {
            (Variant::Unadapted, BiasMode::Off) => {}
            (Variant::Unadapted, m) => {
                return err(format!("unadapted model cannot use softmax bias mode {m}"))
            }
            (Variant::SoftmaxBias, BiasMode::Off) => {
                return err("softmax_bias variant needs one_hot or projected bias mode".into())
            }
            _ => {}
        }
        if self.uses_embedding() {
            if self.context_dim == 0 {
                return err(format!("{} needs context_dim >= 1", self.variant));
            }
            if schema.is_empty() {
                return err(format!("{} needs at least one context variable", self.variant));
            }
        }
        if self.softmax_bias == BiasMode::OneHot {
            if !schema.has_categorical() {
                return err("one_hot bias mode needs a categorical context variable".into());
            }
            let n = schema.num_classes();
            if n > self.one_hot_max_classes {
                return err(format!(
                    "one_hot bias mode would need {n} classes (limit {})",
                    self.one_hot_max_classes
                ));
            }
        }
        Ok(())
    }
}
