use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::mat::Mat;
use crate::config::{BlockSpec, ParamGroup, RouterKind};
use crate::error::{Error, Result};
use crate::rng::SimRng;
use crate::transfer::{self, logistic};

/// Initialization std per parameter group.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitStds {
    pub router: f64,
    pub up_gate: f64,
    pub down: f64,
}

impl InitStds {
    pub fn get(&self, group: ParamGroup) -> Option<f64> {
        match group {
            ParamGroup::RouterGate => Some(self.router),
            ParamGroup::UpGateProjection => Some(self.up_gate),
            ParamGroup::DownProjection => Some(self.down),
            ParamGroup::ResidualDepthSensitive => None,
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("router", self.router),
            ("up_gate", self.up_gate),
            ("down", self.down),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "init std for {name} must be non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x * logistic(x)
}

/// `SwiGLU(up, gate) = up · silu(gate)`.
#[inline]
pub fn swiglu(up: f64, gate: f64) -> f64 {
    up * silu(gate)
}

/// One FFN branch or expert: `W_up`, `W_gate` are `h×d`, `W_down` is `d×h`.
#[derive(Clone, Debug, PartialEq)]
pub struct FfnWeights {
    pub up: Arc<Mat>,
    pub gate: Arc<Mat>,
    pub down: Arc<Mat>,
}

impl FfnWeights {
    fn init(d: usize, h: usize, stds: &InitStds, rng: &mut SimRng) -> Self {
        FfnWeights {
            up: Arc::new(Mat::gaussian(h, d, stds.up_gate, rng)),
            gate: Arc::new(Mat::gaussian(h, d, stds.up_gate, rng)),
            down: Arc::new(Mat::gaussian(d, h, stds.down, rng)),
        }
    }

    pub fn width(&self) -> usize {
        self.up.rows()
    }

    /// Hidden activation `u(x)`.
    pub fn hidden(&self, x: &[f64]) -> Vec<f64> {
        let up = self.up.matvec(x);
        let gate = self.gate.matvec(x);
        up.iter().zip(&gate).map(|(u, g)| swiglu(*u, *g)).collect()
    }

    fn check(&self, d: usize) -> Result<()> {
        let h = self.width();
        if self.up.cols() != d || self.gate.rows() != h || self.gate.cols() != d {
            return Err(Error::Shape("up/gate projections must be h×d".into()));
        }
        if self.down.rows() != d || self.down.cols() != h {
            return Err(Error::Shape("down projection must be d×h".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Router {
    /// `N_tot × d` readout.
    pub weight: Mat,
    pub bias: Vec<f64>,
    pub kind: RouterKind,
}

/// Active experts of one token and their normalized weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Routing {
    /// Selected expert indices, per group in order of decreasing logit.
    pub active: Vec<usize>,
    /// Normalized weights aligned with `active`; they sum to 1.
    pub pi: Vec<f64>,
    /// Raw router scores over all experts.
    pub logits: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub y: Vec<f64>,
    pub active: Vec<usize>,
    pub pi: Vec<f64>,
    pub logits: Vec<f64>,
    /// Hidden activations of the dense branches.
    pub dense_hidden: Vec<Vec<f64>>,
    /// Hidden activations of the selected experts, aligned with `active`.
    pub expert_hidden: Vec<Vec<f64>>,
}

/// Down-projection gradients. `experts[e]` is `None` for inactive experts.
#[derive(Clone, Debug, PartialEq)]
pub struct DownGrads {
    pub dense: Vec<Mat>,
    pub experts: Vec<Option<Mat>>,
}

/// A concrete FFN/MoE layer `y = A·[Σ_m o_m + R·Σ_e π_e o_e]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MicroLayer {
    d: usize,
    block: BlockSpec,
    output_multiplier: f64,
    route_scale: f64,
    dense: Vec<FfnWeights>,
    experts: Vec<FfnWeights>,
    /// Experts per routed group, in index order.
    groups: Vec<usize>,
    /// Experts selected per group.
    per_group: usize,
    router: Option<Router>,
    stds: InitStds,
}

fn layout(block: &BlockSpec) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>, usize)> {
    // (dense widths, expert widths, group sizes, picks per group)
    block.validate()?;
    Ok(match block {
        BlockSpec::DenseFfn { hidden } => (vec![*hidden], vec![], vec![], 0),
        BlockSpec::SparseMoe {
            experts,
            active,
            width,
            ..
        } => (vec![], vec![*width; *experts], vec![*experts], *active),
        BlockSpec::Hybrid {
            dense_branches,
            routed_groups,
            active,
            ..
        } => {
            let mut widths = Vec::new();
            for g in routed_groups {
                widths.extend(std::iter::repeat_n(g.width, g.experts));
            }
            let n_groups = routed_groups.len();
            let per_group = if n_groups == 0 {
                0
            } else {
                if active % n_groups != 0 {
                    return Err(Error::InvalidInput(format!(
                        "group-balanced selection needs a={active} divisible by {n_groups} groups"
                    )));
                }
                active / n_groups
            };
            if let Some(g) = routed_groups.iter().find(|g| g.experts < per_group) {
                return Err(Error::InvalidInput(format!(
                    "group with {} experts cannot supply {per_group} selections",
                    g.experts
                )));
            }
            (
                dense_branches.clone(),
                widths,
                routed_groups.iter().map(|g| g.experts).collect(),
                per_group,
            )
        }
    })
}

/// Draw a layer with i.i.d. zero-mean Gaussian weights at the given stds.
/// `A` and `R` come from the layer rule; the router bias starts at zero.
pub fn init_layer(block: &BlockSpec, d: usize, stds: InitStds, rng: &mut SimRng) -> Result<MicroLayer> {
    if d == 0 {
        return Err(Error::InvalidInput("width d must be positive".into()));
    }
    stds.validate()?;
    let (dense_widths, expert_widths, groups, per_group) = layout(block)?;
    let dense = dense_widths
        .iter()
        .map(|&h| FfnWeights::init(d, h, &stds, rng))
        .collect();
    let experts: Vec<FfnWeights> = expert_widths
        .iter()
        .map(|&h| FfnWeights::init(d, h, &stds, rng))
        .collect();
    let router = block.router().filter(|_| !experts.is_empty()).map(|kind| Router {
        weight: Mat::gaussian(experts.len(), d, stds.router, rng),
        bias: vec![0.0; experts.len()],
        kind,
    });
    let rule = transfer::layer_rule(block, d, d);
    Ok(MicroLayer {
        d,
        block: block.clone(),
        output_multiplier: rule.output_multiplier,
        route_scale: rule.route_scale,
        dense,
        experts,
        groups,
        per_group,
        router,
        stds,
    })
}

impl MicroLayer {
    /// Assemble a layer from explicit weights. `A` and `R` follow the layer rule.
    pub fn from_parts(
        block: BlockSpec,
        d: usize,
        dense: Vec<FfnWeights>,
        experts: Vec<FfnWeights>,
        router: Option<Router>,
        stds: InitStds,
    ) -> Result<Self> {
        let (dense_widths, expert_widths, groups, per_group) = layout(&block)?;
        let widths = |w: &[FfnWeights]| w.iter().map(FfnWeights::width).collect::<Vec<_>>();
        if widths(&dense) != dense_widths || widths(&experts) != expert_widths {
            return Err(Error::Shape("branch widths do not match the block".into()));
        }
        for w in dense.iter().chain(&experts) {
            w.check(d)?;
        }
        match (&router, experts.is_empty()) {
            (None, false) => return Err(Error::Shape("routed block needs a router".into())),
            (Some(_), true) => return Err(Error::Shape("router without experts".into())),
            (Some(r), false) => {
                if r.weight.rows() != experts.len() || r.weight.cols() != d || r.bias.len() != experts.len() {
                    return Err(Error::Shape("router must be N_tot×d with N_tot biases".into()));
                }
            }
            (None, true) => {}
        }
        let rule = transfer::layer_rule(&block, d, d);
        Ok(MicroLayer {
            d,
            block,
            output_multiplier: rule.output_multiplier,
            route_scale: rule.route_scale,
            dense,
            experts,
            groups,
            per_group,
            router,
            stds,
        })
    }

    /// Dense MoE with `n` experts carved out of a dense layer's hidden units,
    /// with a zero router so every token weights experts uniformly.
    pub fn dense_moe_from_dense(dense: &MicroLayer, n: usize, kind: RouterKind) -> Result<Self> {
        let BlockSpec::DenseFfn { hidden } = dense.block else {
            return Err(Error::InvalidInput("source layer must be a dense FFN".into()));
        };
        if n == 0 || hidden % n != 0 {
            return Err(Error::InvalidInput(format!(
                "cannot split width {hidden} into {n} equal experts"
            )));
        }
        let h = hidden / n;
        let src = &dense.dense[0];
        let experts = (0..n)
            .map(|e| FfnWeights {
                up: Arc::new(src.up.row_slice(e * h, (e + 1) * h)),
                gate: Arc::new(src.gate.row_slice(e * h, (e + 1) * h)),
                down: Arc::new(src.down.col_slice(e * h, (e + 1) * h)),
            })
            .collect();
        let router = Router {
            weight: Mat::zeros(n, dense.d),
            bias: vec![0.0; n],
            kind,
        };
        MicroLayer::from_parts(
            BlockSpec::dense_moe(n, h, kind)?,
            dense.d,
            vec![],
            experts,
            Some(router),
            InitStds {
                router: 0.0,
                ..dense.stds
            },
        )
    }

    /// Override the route scale (negative controls).
    pub fn with_route_scale(mut self, r: f64) -> Self {
        self.route_scale = r;
        self
    }

    pub fn with_output_multiplier(mut self, a: f64) -> Self {
        self.output_multiplier = a;
        self
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn block(&self) -> &BlockSpec {
        &self.block
    }

    pub fn output_multiplier(&self) -> f64 {
        self.output_multiplier
    }

    pub fn route_scale(&self) -> f64 {
        self.route_scale
    }

    pub fn dense(&self) -> &[FfnWeights] {
        &self.dense
    }

    pub fn experts(&self) -> &[FfnWeights] {
        &self.experts
    }

    pub fn router(&self) -> Option<&Router> {
        self.router.as_ref()
    }

    pub fn router_mut(&mut self) -> Option<&mut Router> {
        self.router.as_mut()
    }

    pub fn stds(&self) -> &InitStds {
        &self.stds
    }

    /// Activated experts per token.
    pub fn activated(&self) -> usize {
        self.per_group * self.groups.len()
    }

    pub(super) fn from_raw(
        d: usize,
        block: BlockSpec,
        output_multiplier: f64,
        route_scale: f64,
        dense: Vec<FfnWeights>,
        experts: Vec<FfnWeights>,
        router: Option<Router>,
        stds: InitStds,
    ) -> Result<Self> {
        let layer = MicroLayer::from_parts(block, d, dense, experts, router, stds)?;
        Ok(MicroLayer {
            output_multiplier,
            route_scale,
            ..layer
        })
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::Shape(format!("input has {} entries, expected {}", x.len(), self.d)));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("layer input".into()));
        }
        Ok(())
    }

    /// Token-choice top-k routing with group-balanced selection. Ties go to the
    /// lowest expert index.
    pub fn route(&self, x: &[f64]) -> Result<Routing> {
        self.check_input(x)?;
        let Some(router) = &self.router else {
            return Ok(Routing {
                active: vec![],
                pi: vec![],
                logits: vec![],
            });
        };
        let mut logits = router.weight.matvec(x);
        for (l, b) in logits.iter_mut().zip(&router.bias) {
            *l += b;
        }
        let mut active = Vec::with_capacity(self.activated());
        let mut start = 0;
        for &size in &self.groups {
            let mut idx: Vec<usize> = (start..start + size).collect();
            idx.sort_by(|&i, &j| logits[j].total_cmp(&logits[i]).then(i.cmp(&j)));
            active.extend_from_slice(&idx[..self.per_group]);
            start += size;
        }
        let scores: Vec<f64> = match router.kind {
            RouterKind::NormalizedSoftmax => {
                let m = active
                    .iter()
                    .map(|&e| logits[e])
                    .fold(f64::NEG_INFINITY, f64::max);
                active.iter().map(|&e| (logits[e] - m).exp()).collect()
            }
            RouterKind::NormalizedSigmoid => active.iter().map(|&e| logistic(logits[e])).collect(),
        };
        let z: f64 = scores.iter().sum();
        let pi = scores.into_iter().map(|s| s / z).collect();
        Ok(Routing { active, pi, logits })
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        let routing = self.route(x)?;
        let a = self.output_multiplier;
        let mut y = vec![0.0; self.d];
        let dense_hidden: Vec<Vec<f64>> = self.dense.iter().map(|w| w.hidden(x)).collect();
        for (w, u) in self.dense.iter().zip(&dense_hidden) {
            w.down.matvec_acc(u, a, &mut y);
        }
        let expert_hidden: Vec<Vec<f64>> = routing
            .active
            .iter()
            .map(|&e| self.experts[e].hidden(x))
            .collect();
        for ((&e, &p), u) in routing.active.iter().zip(&routing.pi).zip(&expert_hidden) {
            self.experts[e].down.matvec_acc(u, a * self.route_scale * p, &mut y);
        }
        Ok(ForwardTrace {
            y,
            active: routing.active,
            pi: routing.pi,
            logits: routing.logits,
            dense_hidden,
            expert_hidden,
        })
    }

    /// Gradient of `⟨y, g⟩` with respect to every down projection, routing held fixed.
    pub fn down_grad(&self, trace: &ForwardTrace, g: &[f64]) -> Result<DownGrads> {
        if g.len() != self.d || trace.y.len() != self.d {
            return Err(Error::Shape("upstream gradient and output must have length d".into()));
        }
        if trace.dense_hidden.len() != self.dense.len()
            || trace.expert_hidden.len() != trace.active.len()
            || trace.pi.len() != trace.active.len()
        {
            return Err(Error::Shape("trace does not belong to this layer".into()));
        }
        let a = self.output_multiplier;
        let mut dense = Vec::with_capacity(self.dense.len());
        for (w, u) in self.dense.iter().zip(&trace.dense_hidden) {
            if u.len() != w.width() {
                return Err(Error::Shape("dense hidden width mismatch".into()));
            }
            dense.push(Mat::outer(g, u, a));
        }
        let mut experts = vec![None; self.experts.len()];
        for ((&e, &p), u) in trace.active.iter().zip(&trace.pi).zip(&trace.expert_hidden) {
            let w = self
                .experts
                .get(e)
                .ok_or_else(|| Error::Shape(format!("expert {e} out of range")))?;
            if u.len() != w.width() {
                return Err(Error::Shape(format!("expert {e} hidden width mismatch")));
            }
            experts[e] = Some(Mat::outer(g, u, a * self.route_scale * p));
        }
        Ok(DownGrads { dense, experts })
    }

    /// Normalized step on the down projections: `ΔW = -η·sign(G)`, zero where `G = 0`.
    pub fn sign_update(&self, grads: &DownGrads, eta_down: f64) -> Result<MicroLayer> {
        if grads.dense.len() != self.dense.len() || grads.experts.len() != self.experts.len() {
            return Err(Error::Shape("gradient set does not match layer".into()));
        }
        let step = |w: &FfnWeights, g: &Mat| -> Result<FfnWeights> {
            if g.rows() != w.down.rows() || g.cols() != w.down.cols() {
                return Err(Error::Shape("gradient shape differs from W_down".into()));
            }
            let mut down = (*w.down).clone();
            for (v, gv) in down.data_mut().iter_mut().zip(g.data()) {
                if *gv > 0.0 {
                    *v -= eta_down;
                } else if *gv < 0.0 {
                    *v += eta_down;
                }
            }
            Ok(FfnWeights {
                up: Arc::clone(&w.up),
                gate: Arc::clone(&w.gate),
                down: Arc::new(down),
            })
        };
        let mut next = self.clone();
        for (w, g) in next.dense.iter_mut().zip(&grads.dense) {
            *w = step(w, g)?;
        }
        for (w, g) in next.experts.iter_mut().zip(&grads.experts) {
            if let Some(g) = g {
                *w = step(w, g)?;
            }
        }
        Ok(next)
    }
}
