//! End-to-end pipeline: generator, guided filter layer and ablation variants.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{guided_filter_node, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::guided::GuidedFilterParams;
use crate::image::{Image2D, ImagePair, Task};
use crate::net::Network;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Generator output used as guidance map for the guided filter.
    WithGf,
    /// Generator output is the prediction.
    WithoutGf,
    /// Guided filter steered by the raw guide image, no generator.
    OnlyGf,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::WithGf, Variant::WithoutGf, Variant::OnlyGf];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::WithGf => "withGF",
            Variant::WithoutGf => "withoutGF",
            Variant::OnlyGf => "onlyGF",
        }
    }

    pub fn needs_network(self) -> bool {
        self != Variant::OnlyGf
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
        match s {
            "withGF" | "with-gf" | "with_gf" => Ok(Variant::WithGf),
            "withoutGF" | "without-gf" | "without_gf" => Ok(Variant::WithoutGf),
            "onlyGF" | "only-gf" | "only_gf" => Ok(Variant::OnlyGf),
            other => Err(Error::config(format!("unknown variant `{other}`"))),
        }
    }
}

/// Nodes of one pipeline evaluation.
#[derive(Clone, Copy, Debug)]
pub struct PipelineVars {
    pub input: Var,
    /// Input at label resolution (bilinear x4 for super-resolution).
    pub input_up: Var,
    pub guide: Var,
    /// Guidance map fed to the guided filter, if the variant has one.
    pub guidance: Option<Var>,
    /// Generator output, if the variant runs the generator.
    pub generator_out: Option<Var>,
    pub output: Var,
}

/// Network and its parameter nodes on the graph being built.
pub type BoundNet<'a> = (&'a Network, &'a [Var]);

/// Builds `variant` on `g` from already-placed `input` and `guide` nodes.
pub fn build_pipeline(
    g: &mut Graph<f64>,
    net: Option<BoundNet<'_>>,
    input: Var,
    guide: Var,
    task: Task,
    variant: Variant,
    gf: &GuidedFilterParams,
) -> Result<PipelineVars> {
    let sg = g.shape(guide);
    let input_up = match task {
        Task::SuperResolution => g.bilinear_resize(input, sg.height, sg.width)?,
        Task::Denoising => input,
    };
    if let Some((n, _)) = net {
        if n.config().task != task {
            return Err(Error::config(format!(
                "network trained for {} used on {}",
                n.config().task.as_str(),
                task.as_str()
            )));
        }
    }
    // The guidance map is learned as a correction to the guide, the
    // prediction as a correction to the upsampled input.
    let run_net = |g: &mut Graph<f64>, base: Var| -> Result<Var> {
        let (n, p) = net.ok_or_else(|| {
            Error::config(format!("variant {variant} needs a generator checkpoint"))
        })?;
        n.forward_with_base(g, p, input, input_up, guide, base)
    };
    let (guidance, generator_out, output) = match variant {
        Variant::WithGf => {
            let m = run_net(g, guide)?;
            let out = guided_filter_node(g, input_up, m, gf)?;
            (Some(m), Some(m), out)
        }
        Variant::WithoutGf => {
            let m = run_net(g, input_up)?;
            (None, Some(m), m)
        }
        Variant::OnlyGf => (Some(guide), None, guided_filter_node(g, input_up, guide, gf)?),
    };
    Ok(PipelineVars {
        input,
        input_up,
        guide,
        guidance,
        generator_out,
        output,
    })
}

/// Runs `variant` on a pair with frozen weights and returns the prediction.
pub fn forward_pipeline(
    net: Option<&Network>,
    pair: &ImagePair,
    variant: Variant,
    gf: &GuidedFilterParams,
) -> Result<Tensor<f64>> {
    forward_images(net, &pair.input, &pair.guide, pair.meta.task, variant, gf)
}

/// As [`forward_pipeline`] on explicit input/guide images.
pub fn forward_images(
    net: Option<&Network>,
    input: &Image2D,
    guide: &Image2D,
    task: Task,
    variant: Variant,
    gf: &GuidedFilterParams,
) -> Result<Tensor<f64>> {
    let mut g = Graph::new();
    let params = net.map(|n| n.bind_frozen(&mut g));
    let i = g.constant(Tensor::from_image(input));
    let gd = g.constant(Tensor::from_image(guide));
    let bound = net.zip(params.as_deref());
    let vars = build_pipeline(&mut g, bound, i, gd, task, variant, gf)?;
    let out = g.value(vars.output).clone();
    if !out.is_finite() {
        return Err(Error::numerical("pipeline produced non-finite output"));
    }
    Ok(out)
}

/// Prediction as an image.
pub fn predict(net: Option<&Network>, pair: &ImagePair, variant: Variant, gf: &GuidedFilterParams) -> Result<Image2D> {
    forward_pipeline(net, pair, variant, gf)?.to_image(0)
}

/// Input brought to label resolution (bilinear for super-resolution).
pub fn upsampled_input(pair: &ImagePair) -> Result<Image2D> {
    let mut g: Graph<f64> = Graph::new();
    let i = g.constant(Tensor::from_image(&pair.input));
    let (w, h) = pair.ground_truth.dims();
    let up = match pair.meta.task {
        Task::SuperResolution => g.bilinear_resize(i, h, w)?,
        Task::Denoising => i,
    };
    g.value(up).to_image(0)
}

/// Guidance map `M = phi(input, guide)` of a withGF generator for explicit images.
pub fn guidance_map(net: &Network, input: &Image2D, guide: &Image2D) -> Result<Image2D> {
    let mut g = Graph::new();
    let p = net.bind_frozen(&mut g);
    let i = g.constant(Tensor::from_image(input));
    let gd = g.constant(Tensor::from_image(guide));
    let up = match net.config().task {
        Task::SuperResolution => g.bilinear_resize(i, guide.height(), guide.width())?,
        Task::Denoising => i,
    };
    let m = net.forward_with_base(&mut g, &p, i, up, gd, gd)?;
    g.value(m).to_image(0)
}

/// A ready-to-run variant: network (if any) plus guided filter settings.
#[derive(Clone, Debug)]
pub struct Model {
    pub variant: Variant,
    pub network: Option<Network>,
    pub gf: GuidedFilterParams,
}

impl Model {
    pub fn new(variant: Variant, network: Option<Network>, gf: GuidedFilterParams) -> Result<Self> {
        if variant.needs_network() != network.is_some() {
            return Err(Error::config(if network.is_none() {
                format!("variant {variant} needs a generator checkpoint")
            } else {
                format!("variant {variant} takes no checkpoint")
            }));
        }
        gf.validate()?;
        Ok(Self { variant, network, gf })
    }

    pub fn only_gf(gf: GuidedFilterParams) -> Self {
        Self {
            variant: Variant::OnlyGf,
            network: None,
            gf,
        }
    }

    /// Same network with a different guided filter, for radius sweeps.
    pub fn with_gf(&self, gf: GuidedFilterParams) -> Self {
        Self { gf, ..self.clone() }
    }

    pub fn predict(&self, pair: &ImagePair) -> Result<Image2D> {
        predict(self.network.as_ref(), pair, self.variant, &self.gf)
    }

    pub fn predict_images(&self, input: &Image2D, guide: &Image2D, task: Task) -> Result<Image2D> {
        forward_images(self.network.as_ref(), input, guide, task, self.variant, &self.gf)?.to_image(0)
    }
}
