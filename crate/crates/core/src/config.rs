//! Architecture, schedule and reference-hyperparameter types.
//!
//! Every FFN/MoE layout is a [`BlockSpec`]. Shared experts are dense branches
//! of a [`BlockSpec::Hybrid`]; there is no separate shared-expert type.
//!
//! All types serialize to JSON with the field names used throughout the
//! documentation (`H`, `N`, `a`, `h`, `N_g`, `h_g`, `d`, `L`, `B`, `T`).
//! Deserialization does not validate; call `validate()` (or use the
//! `load_*` helpers in [`crate::io`]) to get a field-path diagnostic.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normalization applied to the selected router scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RouterKind {
    /// `π = softmax` over the selected logits.
    #[serde(rename = "softmax")]
    NormalizedSoftmax,
    /// `π_e = σ(ℓ_e) / Σ_j σ(ℓ_j)` over the selected logits.
    #[serde(rename = "sigmoid")]
    NormalizedSigmoid,
}

impl fmt::Display for RouterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RouterKind::NormalizedSoftmax => f.write_str("softmax"),
            RouterKind::NormalizedSigmoid => f.write_str("sigmoid"),
        }
    }
}

/// One routed expert group of a hybrid block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RoutedGroup {
    #[serde(rename = "N_g")]
    pub experts: usize,
    #[serde(rename = "h_g")]
    pub width: usize,
}

/// A target FFN/MoE layout.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum BlockSpec {
    #[serde(rename = "DenseFFN")]
    DenseFfn {
        #[serde(rename = "H")]
        hidden: usize,
    },
    #[serde(rename = "SparseMoE")]
    SparseMoe {
        #[serde(rename = "N")]
        experts: usize,
        #[serde(rename = "a")]
        active: usize,
        #[serde(rename = "h")]
        width: usize,
        router: RouterKind,
    },
    Hybrid {
        dense_branches: Vec<usize>,
        routed_groups: Vec<RoutedGroup>,
        #[serde(rename = "a")]
        active: usize,
        router: RouterKind,
    },
}

impl BlockSpec {
    pub fn dense(hidden: usize) -> Result<Self> {
        let b = BlockSpec::DenseFfn { hidden };
        b.validate()?;
        Ok(b)
    }

    pub fn sparse(experts: usize, active: usize, width: usize, router: RouterKind) -> Result<Self> {
        let b = BlockSpec::SparseMoe {
            experts,
            active,
            width,
            router,
        };
        b.validate()?;
        Ok(b)
    }

    /// Dense MoE: every expert active (`a = N`).
    pub fn dense_moe(experts: usize, width: usize, router: RouterKind) -> Result<Self> {
        Self::sparse(experts, experts, width, router)
    }

    pub fn hybrid(
        dense_branches: Vec<usize>,
        routed_groups: Vec<RoutedGroup>,
        active: usize,
        router: RouterKind,
    ) -> Result<Self> {
        let b = BlockSpec::Hybrid {
            dense_branches,
            routed_groups,
            active,
            router,
        };
        b.validate()?;
        Ok(b)
    }

    /// Check the layout invariants. Error paths are relative to the block.
    pub fn validate(&self) -> Result<()> {
        match self {
            BlockSpec::DenseFfn { hidden } => {
                if *hidden == 0 {
                    return Err(Error::invalid("H", "dense width must be positive"));
                }
            }
            BlockSpec::SparseMoe {
                experts,
                active,
                width,
                ..
            } => {
                if *experts == 0 {
                    return Err(Error::invalid("N", "expert count must be positive"));
                }
                if *active == 0 {
                    return Err(Error::invalid("a", "activated experts must be positive"));
                }
                if active > experts {
                    return Err(Error::invalid(
                        "a",
                        format!("activated experts {active} exceed total experts {experts}"),
                    ));
                }
                if *width == 0 {
                    return Err(Error::invalid("h", "per-expert width must be positive"));
                }
            }
            BlockSpec::Hybrid {
                dense_branches,
                routed_groups,
                active,
                ..
            } => {
                for (i, w) in dense_branches.iter().enumerate() {
                    if *w == 0 {
                        return Err(Error::invalid(
                            format!("dense_branches.{i}"),
                            "branch width must be positive",
                        ));
                    }
                }
                for (i, g) in routed_groups.iter().enumerate() {
                    if g.experts == 0 {
                        return Err(Error::invalid(
                            format!("routed_groups.{i}.N_g"),
                            "group expert count must be positive",
                        ));
                    }
                    if g.width == 0 {
                        return Err(Error::invalid(
                            format!("routed_groups.{i}.h_g"),
                            "per-expert width must be positive",
                        ));
                    }
                }
                if routed_groups.is_empty() {
                    if dense_branches.is_empty() {
                        return Err(Error::invalid(
                            "routed_groups",
                            "a hybrid block needs at least one dense branch or routed group",
                        ));
                    }
                } else {
                    let total: usize = routed_groups.iter().map(|g| g.experts).sum();
                    if *active == 0 {
                        return Err(Error::invalid("a", "activated experts must be positive"));
                    }
                    if *active > total {
                        return Err(Error::invalid(
                            "a",
                            format!("activated experts {active} exceed routed experts {total}"),
                        ));
                    }
                    let uniform = routed_groups.iter().all(|g| g.width == routed_groups[0].width);
                    if !uniform && active % routed_groups.len() != 0 {
                        return Err(Error::invalid(
                            "a",
                            "groups of unequal expert width need a divisible by the group count",
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Hidden width actually applied to one token.
    pub fn active_width(&self) -> usize {
        match self {
            BlockSpec::DenseFfn { hidden } => *hidden,
            BlockSpec::SparseMoe { active, width, .. } => active * width,
            BlockSpec::Hybrid {
                dense_branches,
                routed_groups,
                active,
                ..
            } => {
                let dense: usize = dense_branches.iter().sum();
                let routed: usize = routed_groups.iter().map(|g| g.width).sum();
                // a/G selections per group; exact for equal widths or G | a.
                dense
                    + if routed_groups.is_empty() {
                        0
                    } else {
                        active * routed / routed_groups.len()
                    }
            }
        }
    }

    /// Total routed experts (0 for a dense FFN).
    pub fn routed_experts(&self) -> usize {
        match self {
            BlockSpec::DenseFfn { .. } => 0,
            BlockSpec::SparseMoe { experts, .. } => *experts,
            BlockSpec::Hybrid { routed_groups, .. } => routed_groups.iter().map(|g| g.experts).sum(),
        }
    }

    /// Activated routed experts per token (0 for a dense FFN or a hybrid without groups).
    pub fn activated(&self) -> usize {
        match self {
            BlockSpec::DenseFfn { .. } => 0,
            BlockSpec::SparseMoe { active, .. } => *active,
            BlockSpec::Hybrid {
                active,
                routed_groups,
                ..
            } => {
                if routed_groups.is_empty() {
                    0
                } else {
                    *active
                }
            }
        }
    }

    pub fn router(&self) -> Option<RouterKind> {
        match self {
            BlockSpec::DenseFfn { .. } => None,
            BlockSpec::SparseMoe { router, .. } | BlockSpec::Hybrid { router, .. } => Some(*router),
        }
    }

    pub fn is_routed(&self) -> bool {
        self.routed_experts() > 0
    }
}

impl fmt::Display for BlockSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlockSpec::DenseFfn { hidden } => write!(f, "dense(H={hidden})"),
            BlockSpec::SparseMoe { width, .. } => match format_moe_notation(self) {
                Ok(s) => write!(f, "{s}(h={width})"),
                Err(_) => write!(f, "{self:?}"),
            },
            BlockSpec::Hybrid { .. } => match format_moe_notation(self) {
                Ok(s) => write!(f, "{s}"),
                Err(_) => write!(f, "{self:?}"),
            },
        }
    }
}

/// Active width of a block: `H`, `a·h`, or `Σ H_m + (a/G)·Σ h_g` over `G` routed groups.
pub fn active_width(block: &BlockSpec) -> usize {
    block.active_width()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Residual width.
    pub d: usize,
    #[serde(rename = "L")]
    pub layers: usize,
    pub block: BlockSpec,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::invalid("d", "residual width must be positive"));
        }
        if self.layers == 0 {
            return Err(Error::invalid("L", "layer count must be positive"));
        }
        self.block.validate().map_err(|e| e.under("block"))
    }
}

/// Tokens per step and step count. The token budget `D = B·T` is derived.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "ScheduleRepr", try_from = "ScheduleRepr")]
pub struct ScheduleConfig {
    pub batch: u64,
    pub steps: u64,
}

#[derive(Serialize, Deserialize)]
struct ScheduleRepr {
    #[serde(rename = "B")]
    batch: u64,
    #[serde(rename = "T")]
    steps: u64,
    #[serde(rename = "D", default, skip_serializing_if = "Option::is_none")]
    tokens: Option<u64>,
}

impl From<ScheduleConfig> for ScheduleRepr {
    fn from(s: ScheduleConfig) -> Self {
        ScheduleRepr {
            batch: s.batch,
            steps: s.steps,
            tokens: s.batch.checked_mul(s.steps),
        }
    }
}

impl TryFrom<ScheduleRepr> for ScheduleConfig {
    type Error = String;

    fn try_from(r: ScheduleRepr) -> std::result::Result<Self, String> {
        if let Some(tokens) = r.tokens {
            if r.batch.checked_mul(r.steps) != Some(tokens) {
                return Err(format!(
                    "D = {tokens} does not equal B·T = {}·{}",
                    r.batch, r.steps
                ));
            }
        }
        Ok(ScheduleConfig {
            batch: r.batch,
            steps: r.steps,
        })
    }
}

impl ScheduleConfig {
    pub fn new(batch: u64, steps: u64) -> Result<Self> {
        let s = ScheduleConfig { batch, steps };
        s.validate()?;
        Ok(s)
    }

    /// Total trained tokens `B·T`.
    pub fn tokens(&self) -> u64 {
        self.batch * self.steps
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::invalid("B", "tokens per step must be positive"));
        }
        if self.steps == 0 {
            return Err(Error::invalid("T", "optimizer steps must be positive"));
        }
        if self.batch.checked_mul(self.steps).is_none() {
            return Err(Error::invalid("T", "token budget B·T overflows"));
        }
        Ok(())
    }
}

/// Transferable parameter groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    /// Router readout `W_gate`.
    RouterGate,
    /// FFN/MoE up and gate projections, including per-expert copies.
    UpGateProjection,
    /// FFN/MoE output projection `W_down` for dense branches and experts.
    DownProjection,
    /// Residual-branch parameters that carry the depth multiplier.
    ResidualDepthSensitive,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 4] = [
        ParamGroup::RouterGate,
        ParamGroup::UpGateProjection,
        ParamGroup::DownProjection,
        ParamGroup::ResidualDepthSensitive,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ParamGroup::RouterGate => "router_gate",
            ParamGroup::UpGateProjection => "up_gate_projection",
            ParamGroup::DownProjection => "down_projection",
            ParamGroup::ResidualDepthSensitive => "residual_depth_sensitive",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupHyper {
    pub init_std: f64,
    pub lr: f64,
}

/// AdamW coefficients shared by every group.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalHyper {
    pub wd: f64,
    pub eps: f64,
    pub beta1: f64,
    pub beta2: f64,
}

/// The tuned dense reference every transfer starts from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceConfig {
    pub model: ModelConfig,
    pub schedule: ScheduleConfig,
    pub base: BTreeMap<ParamGroup, GroupHyper>,
    pub base_global: GlobalHyper,
}

impl ReferenceConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(|e| e.under("model"))?;
        if !matches!(self.model.block, BlockSpec::DenseFfn { .. }) {
            return Err(Error::invalid(
                "model.block",
                "the reference block must be a dense FFN",
            ));
        }
        self.schedule.validate().map_err(|e| e.under("schedule"))?;
        for group in ParamGroup::ALL {
            let Some(h) = self.base.get(&group) else {
                return Err(Error::invalid(
                    format!("base.{}", group.as_str()),
                    "missing parameter group",
                ));
            };
            if !(h.init_std > 0.0 && h.init_std.is_finite()) {
                return Err(Error::invalid(
                    format!("base.{}.init_std", group.as_str()),
                    "must be a positive finite number",
                ));
            }
            if !(h.lr > 0.0 && h.lr.is_finite()) {
                return Err(Error::invalid(
                    format!("base.{}.lr", group.as_str()),
                    "must be a positive finite number",
                ));
            }
        }
        let g = &self.base_global;
        if !(g.wd >= 0.0 && g.wd.is_finite()) {
            return Err(Error::invalid("base_global.wd", "must be non-negative"));
        }
        if !(g.eps > 0.0 && g.eps.is_finite()) {
            return Err(Error::invalid("base_global.eps", "must be positive"));
        }
        for (name, beta) in [("beta1", g.beta1), ("beta2", g.beta2)] {
            if !(beta > 0.0 && beta < 1.0) {
                return Err(Error::invalid(
                    format!("base_global.{name}"),
                    "must lie in (0, 1)",
                ));
            }
        }
        Ok(())
    }

    /// Reference hidden width `H⋆`.
    pub fn hidden(&self) -> usize {
        self.model.block.active_width()
    }
}

/// A transfer target: model plus schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetConfig {
    pub model: ModelConfig,
    pub schedule: ScheduleConfig,
}

impl TargetConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(|e| e.under("model"))?;
        self.schedule.validate().map_err(|e| e.under("schedule"))
    }
}

/// Parse `XeYa[Gg][Zs]` into a block.
///
/// `XeYa` gives a [`BlockSpec::SparseMoe`]. A `Gg` suffix splits the `X`
/// experts into `G` equal routed groups and a `Zs` suffix prepends `Z` dense
/// branches of `shared_width`; either suffix yields a [`BlockSpec::Hybrid`].
pub fn parse_moe_notation(
    text: &str,
    width: usize,
    shared_width: Option<usize>,
    router: RouterKind,
) -> Result<BlockSpec> {
    let mut cursor = Cursor { text, pos: 0 };
    let experts = cursor.number()?;
    cursor.expect('e')?;
    let active = cursor.number()?;
    cursor.expect('a')?;
    let mut groups = None;
    let mut shared = None;
    if !cursor.done() {
        let n = cursor.number()?;
        match cursor.next_char() {
            Some('g') => groups = Some(n),
            Some('s') => shared = Some(n),
            _ => return Err(Error::notation(text, "expected `g` or `s` after count")),
        }
    }
    if !cursor.done() && groups.is_some() {
        let n = cursor.number()?;
        cursor.expect('s')?;
        shared = Some(n);
    }
    if !cursor.done() {
        return Err(Error::notation(text, "trailing characters"));
    }

    if experts == 0 {
        return Err(Error::notation(text, "total experts must be positive"));
    }
    if active == 0 {
        return Err(Error::notation(text, "activated experts must be positive"));
    }
    if active > experts {
        return Err(Error::notation(
            text,
            format!("activated experts {active} exceed total experts {experts}"),
        ));
    }
    if width == 0 {
        return Err(Error::notation(text, "per-expert width must be positive"));
    }
    if groups == Some(0) {
        return Err(Error::notation(text, "group count must be positive"));
    }
    if shared == Some(0) {
        return Err(Error::notation(text, "shared expert count must be positive"));
    }

    if groups.is_none() && shared.is_none() {
        return BlockSpec::sparse(experts, active, width, router);
    }

    let g = groups.unwrap_or(1);
    if experts % g != 0 {
        return Err(Error::notation(
            text,
            format!("{experts} experts do not split into {g} equal groups"),
        ));
    }
    let dense_branches = match shared {
        Some(z) => {
            let w = shared_width
                .filter(|w| *w > 0)
                .ok_or_else(|| Error::notation(text, "shared experts need a positive shared width"))?;
            vec![w; z]
        }
        None => Vec::new(),
    };
    let routed_groups = vec![
        RoutedGroup {
            experts: experts / g,
            width,
        };
        g
    ];
    BlockSpec::hybrid(dense_branches, routed_groups, active, router)
}

/// Inverse of [`parse_moe_notation`] for layouts the grammar can express.
pub fn format_moe_notation(block: &BlockSpec) -> Result<String> {
    match block {
        BlockSpec::DenseFfn { .. } => Err(Error::NotRepresentable(
            "a dense FFN has no expert notation".into(),
        )),
        BlockSpec::SparseMoe {
            experts, active, ..
        } => Ok(format!("{experts}e{active}a")),
        BlockSpec::Hybrid {
            dense_branches,
            routed_groups,
            active,
            ..
        } => {
            let Some(first) = routed_groups.first() else {
                return Err(Error::NotRepresentable("no routed groups".into()));
            };
            if routed_groups.iter().any(|g| g != first) {
                return Err(Error::NotRepresentable(
                    "routed groups differ in size or width".into(),
                ));
            }
            if let Some(w) = dense_branches.first() {
                if dense_branches.iter().any(|x| x != w) {
                    return Err(Error::NotRepresentable(
                        "shared branches have unequal widths".into(),
                    ));
                }
            }
            let g = routed_groups.len();
            let total = g * first.experts;
            let mut s = format!("{total}e{active}a");
            // `XeYaZs` already means one group; `1g` is only needed without shared branches.
            if g > 1 || dense_branches.is_empty() {
                s.push_str(&format!("{g}g"));
            }
            if !dense_branches.is_empty() {
                s.push_str(&format!("{}s", dense_branches.len()));
            }
            Ok(s)
        }
    }
}

struct Cursor<'a> {
    text: &'a str,
    pos: usize,
}

impl Cursor<'_> {
    fn done(&self) -> bool {
        self.pos >= self.text.len()
    }

    fn next_char(&mut self) -> Option<char> {
        let c = self.text[self.pos..].chars().next()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn expect(&mut self, want: char) -> Result<()> {
        match self.next_char() {
            Some(c) if c == want => Ok(()),
            Some(c) => Err(Error::notation(
                self.text,
                format!("expected `{want}`, found `{c}`"),
            )),
            None => Err(Error::notation(self.text, format!("expected `{want}`"))),
        }
    }

    fn number(&mut self) -> Result<usize> {
        let rest = &self.text[self.pos..];
        let len = rest.bytes().take_while(u8::is_ascii_digit).count();
        if len == 0 {
            return Err(Error::notation(self.text, "expected a number"));
        }
        self.pos += len;
        rest[..len]
            .parse()
            .map_err(|_| Error::notation(self.text, "number out of range"))
    }
}
