//! VLA model architecture descriptors, parameter/byte accounting, and the
//! size scaler used for 10B-100B projections.

use serde::Serialize;
use toml::{Table, Value};

use crate::config::{ConfigError, Doc};

/// Activations are always BF16.
pub const ACT_BYTES: u64 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VisionEncoderSpec {
    /// Fused backbones, e.g. 2 for a SigLIP + DINOv2 pair.
    pub n_backbones: u64,
    pub layers: u64,
    pub d_model: u64,
    pub n_heads: u64,
    pub d_ff: u64,
    pub tokens_per_image: u64,
    /// Output width of each projector MLP layer. The first layer consumes
    /// the concatenated backbone features (`n_backbones * d_model`).
    pub projector_dims: Vec<u64>,
    pub weight_dtype_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DecoderSpec {
    pub layers: u64,
    pub d_model: u64,
    pub n_heads: u64,
    pub n_kv_heads: u64,
    pub d_head: u64,
    pub d_ff: u64,
    pub vocab: u64,
    pub weight_dtype_bytes: u64,
    pub kv_dtype_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum ActionHeadSpec {
    /// Actions are binned into vocabulary tokens and decoded by the backbone.
    DiscreteTokens { action_tokens_per_step: u64 },
    /// A separate denoising transformer run `diffusion_steps` times over
    /// `horizon_tokens`.
    DiffusionTransformer {
        layers: u64,
        d_model: u64,
        n_heads: u64,
        d_ff: u64,
        horizon_tokens: u64,
        diffusion_steps: u64,
        weight_dtype_bytes: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VlaModelSpec {
    pub name: String,
    pub vision: VisionEncoderSpec,
    pub decoder: DecoderSpec,
    pub action: ActionHeadSpec,
}

/// Token budget of one inference.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RequestProfile {
    pub n_images: u64,
    pub prompt_tokens: u64,
    /// Reasoning and waypoint tokens emitted autoregressively before actions.
    pub generated_tokens: u64,
    /// Action horizon: actions produced per inference.
    pub actions_per_inference: u64,
    /// Hz.
    pub target_frequency: f64,
}

pub const DEFAULT_GENERATED_TOKENS: u64 = 224;

impl Default for RequestProfile {
    fn default() -> Self {
        RequestProfile {
            n_images: 1,
            prompt_tokens: 64,
            generated_tokens: DEFAULT_GENERATED_TOKENS,
            actions_per_inference: 8,
            target_frequency: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WorkloadError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("target of {target} parameters is below a quarter of the template's {template}")]
    TargetTooSmall { target: u64, template: u64 },
    #[error("no d_model within 5% of {target} parameters; nearest achievable is {nearest}")]
    Infeasible { target: u64, nearest: u64 },
}

fn check_dtype(key: &str, v: u64) -> Result<(), ConfigError> {
    if matches!(v, 1 | 2 | 4) {
        Ok(())
    } else {
        Err(ConfigError::invalid(key, "dtype bytes must be 1, 2 or 4"))
    }
}

fn check_positive(key: &str, v: u64) -> Result<(), ConfigError> {
    if v >= 1 {
        Ok(())
    } else {
        Err(ConfigError::invalid(key, "must be >= 1"))
    }
}

/// Parameters of one pre-norm block: QKV + output projection plus a gated MLP.
fn block_params(d_model: u64, d_ff: u64) -> u64 {
    4 * d_model * d_model + 3 * d_model * d_ff
}

impl VisionEncoderSpec {
    pub fn projector_input(&self) -> u64 {
        self.n_backbones * self.d_model
    }

    pub fn output_width(&self) -> u64 {
        self.projector_dims
            .last()
            .copied()
            .unwrap_or_else(|| self.projector_input())
    }

    pub fn backbone_params(&self) -> u64 {
        self.n_backbones * self.layers * block_params(self.d_model, self.d_ff)
    }

    pub fn projector_params(&self) -> u64 {
        let mut prev = self.projector_input();
        let mut total = 0;
        for &w in &self.projector_dims {
            total += prev * w;
            prev = w;
        }
        total
    }

    pub fn param_count(&self) -> u64 {
        self.backbone_params() + self.projector_params()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        check_positive("vision.backbones", self.n_backbones)?;
        check_positive("vision.layers", self.layers)?;
        check_positive("vision.d_model", self.d_model)?;
        check_positive("vision.n_heads", self.n_heads)?;
        check_positive("vision.d_ff", self.d_ff)?;
        check_positive("vision.tokens_per_image", self.tokens_per_image)?;
        if self.projector_dims.contains(&0) {
            return Err(ConfigError::invalid("vision.projector_dims", "widths must be >= 1"));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(ConfigError::invalid("vision.n_heads", "must divide d_model"));
        }
        check_dtype("vision.weight_dtype_bytes", self.weight_dtype_bytes)
    }
}

impl DecoderSpec {
    pub fn q_width(&self) -> u64 {
        self.n_heads * self.d_head
    }

    pub fn qkv_width(&self) -> u64 {
        self.d_head * (self.n_heads + 2 * self.n_kv_heads)
    }

    pub fn layer_params(&self) -> u64 {
        self.d_model * self.qkv_width()
            + self.q_width() * self.d_model
            + 3 * self.d_model * self.d_ff
    }

    /// Embedding is tied with the output head and counted once.
    pub fn embedding_params(&self) -> u64 {
        self.vocab * self.d_model
    }

    pub fn param_count(&self) -> u64 {
        self.layers * self.layer_params() + self.embedding_params()
    }

    pub fn weight_bytes(&self) -> u64 {
        self.param_count() * self.weight_dtype_bytes
    }

    /// K and V bytes one layer stores per token.
    pub fn kv_bytes_per_token_per_layer(&self) -> u64 {
        2 * self.n_kv_heads * self.d_head * self.kv_dtype_bytes
    }

    pub fn kv_bytes_per_token(&self) -> u64 {
        self.layers * self.kv_bytes_per_token_per_layer()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        check_positive("decoder.d_model", self.d_model)?;
        check_positive("decoder.n_heads", self.n_heads)?;
        check_positive("decoder.n_kv_heads", self.n_kv_heads)?;
        check_positive("decoder.d_head", self.d_head)?;
        check_positive("decoder.d_ff", self.d_ff)?;
        check_positive("decoder.vocab", self.vocab)?;
        if !self.n_heads.is_multiple_of(self.n_kv_heads) {
            return Err(ConfigError::invalid("decoder.n_kv_heads", "must divide n_heads"));
        }
        if self.d_model != self.n_heads * self.d_head {
            return Err(ConfigError::invalid("decoder.d_model", "must equal n_heads * d_head"));
        }
        check_dtype("decoder.weight_dtype_bytes", self.weight_dtype_bytes)?;
        check_dtype("decoder.kv_dtype_bytes", self.kv_dtype_bytes)
    }
}

impl ActionHeadSpec {
    pub fn param_count(&self) -> u64 {
        match *self {
            ActionHeadSpec::DiscreteTokens { .. } => 0,
            ActionHeadSpec::DiffusionTransformer {
                layers, d_model, d_ff, ..
            } => layers * block_params(d_model, d_ff),
        }
    }

    pub fn weight_bytes(&self) -> u64 {
        match *self {
            ActionHeadSpec::DiscreteTokens { .. } => 0,
            ActionHeadSpec::DiffusionTransformer {
                weight_dtype_bytes, ..
            } => self.param_count() * weight_dtype_bytes,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match *self {
            ActionHeadSpec::DiscreteTokens {
                action_tokens_per_step,
            } => check_positive("action.action_tokens_per_step", action_tokens_per_step),
            ActionHeadSpec::DiffusionTransformer {
                layers,
                d_model,
                n_heads,
                d_ff,
                horizon_tokens,
                diffusion_steps,
                weight_dtype_bytes,
            } => {
                check_positive("action.layers", layers)?;
                check_positive("action.d_model", d_model)?;
                check_positive("action.n_heads", n_heads)?;
                check_positive("action.d_ff", d_ff)?;
                check_positive("action.horizon_tokens", horizon_tokens)?;
                check_positive("action.diffusion_steps", diffusion_steps)?;
                if d_model % n_heads != 0 {
                    return Err(ConfigError::invalid("action.n_heads", "must divide d_model"));
                }
                check_dtype("action.weight_dtype_bytes", weight_dtype_bytes)
            }
        }
    }
}

impl VlaModelSpec {
    pub fn param_count(&self) -> u64 {
        self.vision.param_count() + self.decoder.param_count() + self.action.param_count()
    }

    pub fn weight_bytes(&self) -> u64 {
        self.vision.param_count() * self.vision.weight_dtype_bytes
            + self.decoder.weight_bytes()
            + self.action.weight_bytes()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.vision.validate()?;
        self.decoder.validate()?;
        self.action.validate()?;
        if self.vision.output_width() != self.decoder.d_model {
            return Err(ConfigError::invalid(
                "vision.projector_dims",
                "projector output width must equal decoder.d_model",
            ));
        }
        Ok(())
    }

    /// The bundled 7B-class stand-in: a 32-layer, 4096-wide decoder with
    /// full KV heads, two fused 24-layer vision backbones, and discrete
    /// 7-token actions.
    pub fn molmoact_7b_class() -> Self {
        VlaModelSpec {
            name: "molmoact-7b-class".into(),
            vision: VisionEncoderSpec {
                n_backbones: 2,
                layers: 24,
                d_model: 1024,
                n_heads: 16,
                d_ff: 4096,
                tokens_per_image: 1024,
                projector_dims: vec![4096, 4096],
                weight_dtype_bytes: 2,
            },
            decoder: DecoderSpec {
                layers: 32,
                d_model: 4096,
                n_heads: 32,
                n_kv_heads: 32,
                d_head: 128,
                d_ff: 11008,
                vocab: 32000,
                weight_dtype_bytes: 2,
                kv_dtype_bytes: 2,
            },
            action: ActionHeadSpec::DiscreteTokens {
                action_tokens_per_step: 7,
            },
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let doc = Doc::parse(text)?;
        doc.allow_keys(&["name", "vision", "decoder", "action"])?;
        let name = doc.req_str("name")?;

        let v = doc.req_table("vision")?;
        v.allow_keys(&[
            "backbones",
            "layers",
            "d_model",
            "n_heads",
            "d_ff",
            "tokens_per_image",
            "projector_dims",
            "weight_dtype_bytes",
        ])?;
        let vision = VisionEncoderSpec {
            n_backbones: v.opt_u64("backbones")?.unwrap_or(1),
            layers: v.req_u64("layers")?,
            d_model: v.req_u64("d_model")?,
            n_heads: v.req_u64("n_heads")?,
            d_ff: v.req_u64("d_ff")?,
            tokens_per_image: v.req_u64("tokens_per_image")?,
            projector_dims: v.opt_u64_array("projector_dims")?.unwrap_or_default(),
            weight_dtype_bytes: v.opt_u64("weight_dtype_bytes")?.unwrap_or(2),
        };

        let d = doc.req_table("decoder")?;
        d.allow_keys(&[
            "layers",
            "d_model",
            "n_heads",
            "n_kv_heads",
            "d_head",
            "d_ff",
            "vocab",
            "weight_dtype_bytes",
            "kv_dtype_bytes",
        ])?;
        let n_heads = d.req_u64("n_heads")?;
        let decoder = DecoderSpec {
            layers: d.req_u64("layers")?,
            d_model: d.req_u64("d_model")?,
            n_heads,
            n_kv_heads: d.opt_u64("n_kv_heads")?.unwrap_or(n_heads),
            d_head: d.req_u64("d_head")?,
            d_ff: d.req_u64("d_ff")?,
            vocab: d.req_u64("vocab")?,
            weight_dtype_bytes: d.opt_u64("weight_dtype_bytes")?.unwrap_or(2),
            kv_dtype_bytes: d.opt_u64("kv_dtype_bytes")?.unwrap_or(2),
        };

        let a = doc.req_table("action")?;
        let kind = a.req_str("kind")?;
        let action = match kind.as_str() {
            "discrete" | "discrete_tokens" => {
                a.allow_keys(&["kind", "action_tokens_per_step"])?;
                ActionHeadSpec::DiscreteTokens {
                    action_tokens_per_step: a.req_u64("action_tokens_per_step")?,
                }
            }
            "diffusion" | "diffusion_transformer" => {
                a.allow_keys(&[
                    "kind",
                    "layers",
                    "d_model",
                    "n_heads",
                    "d_ff",
                    "horizon_tokens",
                    "diffusion_steps",
                    "weight_dtype_bytes",
                ])?;
                ActionHeadSpec::DiffusionTransformer {
                    layers: a.req_u64("layers")?,
                    d_model: a.req_u64("d_model")?,
                    n_heads: a.req_u64("n_heads")?,
                    d_ff: a.req_u64("d_ff")?,
                    horizon_tokens: a.req_u64("horizon_tokens")?,
                    diffusion_steps: a.req_u64("diffusion_steps")?,
                    weight_dtype_bytes: a.opt_u64("weight_dtype_bytes")?.unwrap_or(2),
                }
            }
            other => {
                return Err(ConfigError::parse(
                    "action.kind",
                    format!("unknown action head `{other}`"),
                ))
            }
        };

        let model = VlaModelSpec {
            name,
            vision,
            decoder,
            action,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn to_toml(&self) -> String {
        let int = |v: u64| Value::Integer(v as i64);
        let mut t = Table::new();
        t.insert("name".into(), Value::String(self.name.clone()));

        let v = &self.vision;
        let mut vt = Table::new();
        vt.insert("backbones".into(), int(v.n_backbones));
        vt.insert("layers".into(), int(v.layers));
        vt.insert("d_model".into(), int(v.d_model));
        vt.insert("n_heads".into(), int(v.n_heads));
        vt.insert("d_ff".into(), int(v.d_ff));
        vt.insert("tokens_per_image".into(), int(v.tokens_per_image));
        vt.insert(
            "projector_dims".into(),
            Value::Array(v.projector_dims.iter().map(|&w| int(w)).collect()),
        );
        vt.insert("weight_dtype_bytes".into(), int(v.weight_dtype_bytes));
        t.insert("vision".into(), Value::Table(vt));

        let d = &self.decoder;
        let mut dt = Table::new();
        dt.insert("layers".into(), int(d.layers));
        dt.insert("d_model".into(), int(d.d_model));
        dt.insert("n_heads".into(), int(d.n_heads));
        dt.insert("n_kv_heads".into(), int(d.n_kv_heads));
        dt.insert("d_head".into(), int(d.d_head));
        dt.insert("d_ff".into(), int(d.d_ff));
        dt.insert("vocab".into(), int(d.vocab));
        dt.insert("weight_dtype_bytes".into(), int(d.weight_dtype_bytes));
        dt.insert("kv_dtype_bytes".into(), int(d.kv_dtype_bytes));
        t.insert("decoder".into(), Value::Table(dt));

        let mut at = Table::new();
        match self.action {
            ActionHeadSpec::DiscreteTokens {
                action_tokens_per_step,
            } => {
                at.insert("kind".into(), Value::String("discrete".into()));
                at.insert("action_tokens_per_step".into(), int(action_tokens_per_step));
            }
            ActionHeadSpec::DiffusionTransformer {
                layers,
                d_model,
                n_heads,
                d_ff,
                horizon_tokens,
                diffusion_steps,
                weight_dtype_bytes,
            } => {
                at.insert("kind".into(), Value::String("diffusion".into()));
                at.insert("layers".into(), int(layers));
                at.insert("d_model".into(), int(d_model));
                at.insert("n_heads".into(), int(n_heads));
                at.insert("d_ff".into(), int(d_ff));
                at.insert("horizon_tokens".into(), int(horizon_tokens));
                at.insert("diffusion_steps".into(), int(diffusion_steps));
                at.insert("weight_dtype_bytes".into(), int(weight_dtype_bytes));
            }
        }
        t.insert("action".into(), Value::Table(at));
        toml::to_string(&t).expect("model table serializes")
    }
}

impl RequestProfile {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.target_frequency > 0.0 && self.target_frequency.is_finite()) {
            return Err(ConfigError::invalid("target_hz", "must be > 0"));
        }
        Ok(())
    }

    /// Tokens in the decoder context after prefill.
    pub fn prefill_tokens(&self, model: &VlaModelSpec) -> u64 {
        self.n_images * model.vision.tokens_per_image + self.prompt_tokens
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let doc = Doc::parse(text)?;
        Self::from_doc(&doc)
    }

    pub(crate) fn from_doc(doc: &Doc) -> Result<Self, ConfigError> {
        doc.allow_keys(&[
            "n_images",
            "prompt_tokens",
            "generated_tokens",
            "actions_per_inference",
            "target_hz",
        ])?;
        let def = RequestProfile::default();
        let req = RequestProfile {
            n_images: doc.opt_u64("n_images")?.unwrap_or(def.n_images),
            prompt_tokens: doc.opt_u64("prompt_tokens")?.unwrap_or(def.prompt_tokens),
            generated_tokens: doc.opt_u64("generated_tokens")?.unwrap_or(def.generated_tokens),
            actions_per_inference: doc
                .opt_u64("actions_per_inference")?
                .unwrap_or(def.actions_per_inference),
            target_frequency: doc.opt_f64("target_hz")?.unwrap_or(def.target_frequency),
        };
        req.validate()?;
        Ok(req)
    }

    pub fn to_toml(&self) -> String {
        let mut t = Table::new();
        let int = |v: u64| Value::Integer(v as i64);
        t.insert("n_images".into(), int(self.n_images));
        t.insert("prompt_tokens".into(), int(self.prompt_tokens));
        t.insert("generated_tokens".into(), int(self.generated_tokens));
        t.insert("actions_per_inference".into(), int(self.actions_per_inference));
        t.insert("target_hz".into(), Value::Float(self.target_frequency));
        toml::to_string(&t).expect("request table serializes")
    }
}

/// Layer count by total parameter budget, used when scaling a template.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerBuckets {
    /// `(max_params, layers)`, ascending by `max_params`. Targets above the
    /// last bound use the last layer count.
    pub buckets: Vec<(u64, u64)>,
}

impl Default for LayerBuckets {
    fn default() -> Self {
        LayerBuckets {
            buckets: vec![
                (8_000_000_000, 32),
                (15_000_000_000, 40),
                (40_000_000_000, 48),
                (80_000_000_000, 64),
                (120_000_000_000, 80),
            ],
        }
    }
}

impl LayerBuckets {
    pub fn layers_for(&self, target_params: u64) -> u64 {
        self.buckets
            .iter()
            .find(|&&(max, _)| target_params <= max)
            .or(self.buckets.last())
            .map(|&(_, l)| l)
            .unwrap_or(32)
    }
}

const SCALE_TOLERANCE: f64 = 0.05;

/// Resizes the decoder of `template` so the whole model has close to
/// `target_params` parameters, using the default layer buckets.
pub fn scale_to(target_params: u64, template: &VlaModelSpec) -> Result<VlaModelSpec, WorkloadError> {
    scale_with(target_params, template, &LayerBuckets::default())
}

/// Holds `d_head`, `vocab`, the KV-head grouping and the `d_ff / d_model`
/// ratio from the template, takes the layer count from `buckets`, and picks
/// the multiple of the head width whose parameter count lands closest to the
/// target. Vision backbones and the action head are copied unchanged; the
/// projector's last layer is resized to feed the new decoder width.
pub fn scale_with(
    target_params: u64,
    template: &VlaModelSpec,
    buckets: &LayerBuckets,
) -> Result<VlaModelSpec, WorkloadError> {
    let template_params = template.param_count();
    if target_params.saturating_mul(4) < template_params {
        return Err(WorkloadError::TargetTooSmall {
            target: target_params,
            template: template_params,
        });
    }
    let t = &template.decoder;
    let group = t.n_heads / t.n_kv_heads;
    let step = t.d_head * group;
    let layers = buckets.layers_for(target_params);
    let fixed = template.vision.backbone_params() + template.action.param_count();

    let candidate = |units: u64| -> VlaModelSpec {
        let d_model = units * step;
        let n_heads = d_model / t.d_head;
        // round(d_model * d_ff / d_model_template) in integers
        let d_ff = ((2 * d_model * t.d_ff + t.d_model) / (2 * t.d_model)).max(1);
        let mut m = template.clone();
        let feature_width = m.vision.projector_input();
        match m.vision.projector_dims.last_mut() {
            Some(last) => *last = d_model,
            None if d_model != feature_width => m.vision.projector_dims.push(d_model),
            None => {}
        }
        m.decoder = DecoderSpec {
            layers,
            d_model,
            n_heads,
            n_kv_heads: n_heads / group,
            d_ff,
            ..t.clone()
        };
        m
    };
    let count = |units: u64| candidate(units).param_count();

    // Decoder parameters grow quadratically in d_model; bracket the target
    // from a continuous estimate, then compare neighbouring multiples.
    let per_d2 = layers as f64
        * (1.0 + 2.0 / group as f64 + 1.0 + 3.0 * t.d_ff as f64 / t.d_model as f64);
    // the projector's last layer scales linearly with d_model
    let dims = &template.vision.projector_dims;
    let projector_in = match dims.len() {
        0 | 1 => template.vision.projector_input(),
        n => dims[n - 2],
    };
    let fixed = fixed + template.vision.projector_params()
        - dims.last().map_or(0, |&w| projector_in * w);
    let need = target_params.saturating_sub(fixed) as f64;
    let lin = (t.vocab + projector_in) as f64;
    let d_est = if per_d2 > 0.0 {
        (-lin + (lin * lin + 4.0 * per_d2 * need).sqrt()) / (2.0 * per_d2)
    } else {
        need / lin
    };
    let center = (d_est / step as f64).round().max(1.0) as u64;
    let lo = center.saturating_sub(2).max(1);
    let best = (lo..=center + 2)
        .min_by_key(|&u| count(u).abs_diff(target_params))
        .expect("nonempty candidate range");
    let achieved = count(best);
    let rel = achieved.abs_diff(target_params) as f64 / target_params.max(1) as f64;
    if rel > SCALE_TOLERANCE {
        return Err(WorkloadError::Infeasible {
            target: target_params,
            nearest: achieved,
        });
    }
    let mut out = candidate(best);
    if out.decoder != template.decoder {
        let base = template.name.split('@').next().unwrap_or(&template.name);
        out.name = format!("{base}@{}", format_params(target_params));
    }
    Ok(out)
}

/// `7000000000 -> "7B"`, `1500000000 -> "1.5B"`.
pub fn format_params(p: u64) -> String {
    let b = p as f64 / 1e9;
    if b >= 1.0 {
        let s = format!("{b:.1}");
        format!("{}B", s.trim_end_matches(".0"))
    } else {
        format!("{:.0}M", p as f64 / 1e6)
    }
}
