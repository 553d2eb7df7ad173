//! Network assembly: input normalization, CNN encoder, capsule stack,
//! task decoders and the balanced loss.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::capsules::{self, ClassCapsVars, ConvCapsSpec, ConvCapsVars, PrimaryCapsVars, RoutingHyper, POSE};
use crate::decoders::{decode_head, DecoderConfig, HeadVars};
use crate::losses::{self, DepthLossNorm, InverseGraphicsMode, LossReport};
use crate::numerics::{xavier_uniform, Graph, ParamStore, Real, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "3d")]
    Pose3d,
    #[serde(rename = "2d")]
    Pose2d,
    #[serde(rename = "dm")]
    DepthMap,
    #[serde(rename = "w")]
    InverseGraphics,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Pose3d, Task::Pose2d, Task::DepthMap, Task::InverseGraphics];

    pub fn tag(self) -> &'static str {
        match self {
            Task::Pose3d => "3d",
            Task::Pose2d => "2d",
            Task::DepthMap => "dm",
            Task::InverseGraphics => "w",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Task> {
        Task::ALL
            .into_iter()
            .find(|t| t.tag().eq_ignore_ascii_case(tag))
            .ok_or_else(|| Error::InvalidTasks {
                reason: format!("unknown task tag {tag:?}"),
            })
    }

    /// Tasks that own a decoder head.
    pub fn has_decoder(self) -> bool {
        self != Task::InverseGraphics
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Depth,
    Rgb,
}

impl Domain {
    pub fn channels(self) -> usize {
        match self {
            Domain::Depth => 1,
            Domain::Rgb => 3,
        }
    }
}

/// Enabled tasks, kept sorted and unique.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TaskSetRepr", into = "Vec<Task>")]
pub struct TaskSet(Vec<Task>);

/// A preset name or an explicit task list.
#[derive(Deserialize)]
#[serde(untagged)]
enum TaskSetRepr {
    Named(String),
    List(Vec<Task>),
}

impl TryFrom<TaskSetRepr> for TaskSet {
    type Error = Error;
    fn try_from(r: TaskSetRepr) -> Result<Self> {
        match r {
            TaskSetRepr::Named(s) => TaskSet::parse(&s),
            TaskSetRepr::List(v) => TaskSet::try_from(v),
        }
    }
}

impl TryFrom<Vec<Task>> for TaskSet {
    type Error = Error;
    fn try_from(mut v: Vec<Task>) -> Result<Self> {
        v.sort();
        v.dedup();
        if v.is_empty() {
            return Err(Error::InvalidTasks {
                reason: "empty task set".into(),
            });
        }
        Ok(TaskSet(v))
    }
}

impl From<TaskSet> for Vec<Task> {
    fn from(t: TaskSet) -> Self {
        t.0
    }
}

impl TaskSet {
    pub fn new(tasks: &[Task]) -> Result<Self> {
        TaskSet::try_from(tasks.to_vec())
    }

    /// `[3D]`
    pub fn d1() -> Self {
        TaskSet(vec![Task::Pose3d])
    }

    /// `[3D, W]`
    pub fn d2() -> Self {
        TaskSet(vec![Task::Pose3d, Task::InverseGraphics])
    }

    /// `[3D, 2D, W]`
    pub fn d3() -> Self {
        TaskSet(vec![Task::Pose3d, Task::Pose2d, Task::InverseGraphics])
    }

    /// `[3D, 2D, DM, W]`
    pub fn r4() -> Self {
        TaskSet(vec![Task::Pose3d, Task::Pose2d, Task::DepthMap, Task::InverseGraphics])
    }

    /// Named configuration `d1`, `d2`, `d3`, `r4`, or a comma list of tags.
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "d1" | "deca-d1" => Ok(Self::d1()),
            "d2" | "deca-d2" => Ok(Self::d2()),
            "d3" | "deca-d3" => Ok(Self::d3()),
            "r4" | "deca-r4" => Ok(Self::r4()),
            list => {
                let tasks = list.split(',').map(|t| Task::from_tag(t.trim())).collect::<Result<Vec<_>>>()?;
                TaskSet::try_from(tasks)
            }
        }
    }

    pub fn contains(&self, t: Task) -> bool {
        self.0.contains(&t)
    }

    pub fn iter(&self) -> impl Iterator<Item = Task> + '_ {
        self.0.iter().copied()
    }

    /// Depth input supports `{3D, 2D, W}`; RGB adds `DM`. 3D is always on.
    pub fn validate(&self, domain: Domain) -> Result<()> {
        if !self.contains(Task::Pose3d) {
            return Err(Error::InvalidTasks {
                reason: "the 3D task is required in every configuration".into(),
            });
        }
        if domain == Domain::Depth && self.contains(Task::DepthMap) {
            return Err(Error::InvalidTasks {
                reason: "depth-map reconstruction is only available in the rgb domain".into(),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Output channels of each convolution; input channels come from the domain.
    pub widths: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub norm_eps: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            widths: vec![64, 128, 256, 256],
            kernel: 5,
            stride: 2,
            padding: 2,
            norm_eps: 1e-5,
        }
    }
}

impl EncoderConfig {
    pub fn out_extent(&self, side: usize) -> usize {
        self.widths
            .iter()
            .fold(side, |s, _| (s + 2 * self.padding - self.kernel) / self.stride + 1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapsuleConfig {
    pub primary_types: usize,
    pub conv: Vec<ConvCapsSpec>,
    pub coord_add: bool,
    pub routing: RoutingHyper,
}

impl Default for CapsuleConfig {
    fn default() -> Self {
        CapsuleConfig {
            primary_types: 16,
            conv: vec![
                ConvCapsSpec {
                    kernel: 3,
                    stride: 2,
                    types: 16,
                },
                ConvCapsSpec {
                    kernel: 3,
                    stride: 2,
                    types: 16,
                },
            ],
            coord_add: true,
            routing: RoutingHyper::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub inverse_graphics: InverseGraphicsMode,
    pub depth_norm: DepthLossNorm,
    /// Mask threshold on the depth-map target (metres in front of the far plane).
    pub depth_threshold: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            inverse_graphics: InverseGraphicsMode::IdentityDeviation,
            depth_norm: DepthLossNorm::PerPixel,
            depth_threshold: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub domain: Domain,
    pub tasks: TaskSet,
    pub joints: usize,
    pub image_size: usize,
    pub encoder: EncoderConfig,
    pub capsules: CapsuleConfig,
    pub decoder: DecoderConfig,
    pub loss: LossConfig,
}

impl ModelConfig {
    /// 256x256 input: 16x16 encoder grid, capsule grids 7x7 then 3x3.
    pub fn full_resolution(domain: Domain, tasks: TaskSet) -> Self {
        ModelConfig {
            domain,
            tasks,
            joints: 15,
            image_size: 256,
            encoder: EncoderConfig::default(),
            capsules: CapsuleConfig::default(),
            decoder: DecoderConfig::default(),
            loss: LossConfig::default(),
        }
    }

    /// 64x64 input: 4x4 encoder grid, capsule grids 3x3 then 2x2, decoder dropout 0.1.
    pub fn desk(domain: Domain, tasks: TaskSet) -> Self {
        let mut c = Self::full_resolution(domain, tasks);
        c.image_size = 64;
        c.decoder.dropout = 0.1;
        c.capsules.conv = vec![
            ConvCapsSpec {
                kernel: 2,
                stride: 1,
                types: 16,
            },
            ConvCapsSpec {
                kernel: 2,
                stride: 1,
                types: 16,
            },
        ];
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.tasks.validate(self.domain)?;
        if self.joints == 0 {
            return Err(Error::arg("model", "joint count must be positive"));
        }
        if self.encoder.widths.is_empty() {
            return Err(Error::arg("model", "encoder needs at least one convolution"));
        }
        let mut extent = self.encoder.out_extent(self.image_size);
        if extent == 0 {
            return Err(Error::arg("model", "image too small for the encoder"));
        }
        for spec in &self.capsules.conv {
            extent = spec.out_extent(extent)?;
        }
        if self.capsules.routing.iterations < 1 {
            return Err(Error::arg("model", "routing iterations must be >= 1"));
        }
        Ok(())
    }

    /// Grid extent and capsule types entering the class layer.
    pub fn class_input(&self) -> Result<(usize, usize)> {
        let mut extent = self.encoder.out_extent(self.image_size);
        let mut types = self.capsules.primary_types;
        for spec in &self.capsules.conv {
            extent = spec.out_extent(extent)?;
            types = spec.types;
        }
        Ok((extent, types))
    }
}

/// Affine map between metres and the 3D head's regression space:
/// `normalized = (camera_frame − mean) / scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetNorm {
    /// `J*3` mean camera-frame coordinates.
    pub mean: Vec<f64>,
    pub scale: f64,
}

impl TargetNorm {
    pub fn identity(joints: usize) -> Self {
        TargetNorm {
            mean: vec![0.0; joints * 3],
            scale: 1.0,
        }
    }

    /// Mean pose and the pooled standard deviation about it.
    pub fn fit(poses: &[Vec<f64>]) -> Result<Self> {
        let n = poses.len();
        if n == 0 {
            return Err(Error::EmptyInput { op: "target_norm" });
        }
        let dim = poses[0].len();
        let mut mean = vec![0.0; dim];
        for p in poses {
            for (m, v) in mean.iter_mut().zip(p) {
                *m += v / n as f64;
            }
        }
        let var: f64 = poses
            .iter()
            .flat_map(|p| p.iter().zip(&mean).map(|(v, m)| (v - m) * (v - m)))
            .sum::<f64>()
            / (n * dim) as f64;
        let scale = if var > 0.0 { libm::sqrt(var) } else { 1.0 };
        Ok(TargetNorm { mean, scale })
    }

    pub fn normalize(&self, pose: &[f64]) -> Vec<f64> {
        pose.iter().zip(&self.mean).map(|(v, m)| (v - m) / self.scale).collect()
    }

    pub fn denormalize(&self, pose: &[f64]) -> Vec<f64> {
        pose.iter().zip(&self.mean).map(|(v, m)| v * self.scale + m).collect()
    }
}

/// Depth in metres to `[0,1]` by dividing by the far plane.
pub fn normalize_depth(values: &[f32], far: f32) -> Result<Vec<f32>> {
    if !(far > 0.0) || !far.is_finite() {
        return Err(Error::arg("normalize_input", "far plane must be positive"));
    }
    values
        .iter()
        .map(|&v| {
            if v.is_finite() {
                Ok((v / far).clamp(0.0, 1.0))
            } else {
                Err(Error::NonFinite { op: "normalize_input" })
            }
        })
        .collect()
}

/// Interleaved 8-bit RGB `[H*W*3]` to planar `[3, H, W]` in `[0,1]`.
pub fn normalize_rgb(bytes: &[u8], height: usize, width: usize) -> Result<Vec<f32>> {
    if bytes.len() != height * width * 3 {
        return Err(Error::shape("normalize_input rgb", &[height, width, 3], &[bytes.len()]));
    }
    let plane = height * width;
    let mut out = vec![0.0f32; 3 * plane];
    for (p, px) in bytes.chunks(3).enumerate() {
        for c in 0..3 {
            out[c * plane + p] = px[c] as f32 / 255.0;
        }
    }
    Ok(out)
}

/// Graph handles produced by one forward pass.
pub struct ForwardOutput {
    /// `[B, J, 16]`
    pub entities: Var,
    /// `[B, J]`
    pub activations: Var,
    /// Head outputs by task: 3D `[B, 3J]` (normalized), 2D `[B, 2J]`, DM `[B, side²]`.
    pub heads: BTreeMap<Task, Var>,
    pub class_w: Var,
    pub class_w_inv: Option<Var>,
    pub loss_weights: Vec<(Task, Var)>,
}

/// Supervision for one batch, in the heads' output spaces.
pub struct Targets<T> {
    /// `[B, 3J]` normalized camera-frame joints.
    pub y3d: Tensor<T>,
    /// `[B, 2J]` joints in `[0,1]` image coordinates.
    pub y2d: Option<Tensor<T>>,
    /// `[B, side²]` depth-map target.
    pub dm: Option<Tensor<T>>,
}

/// Concrete predictions with units.
#[derive(Clone, Debug)]
pub struct TaskPrediction<T> {
    /// `[B, J, 3]` metres, camera frame.
    pub y3d: Tensor<T>,
    /// `[B, J, 2]` normalized image coordinates.
    pub y2d: Option<Tensor<T>>,
    /// `[B, 1, side, side]`
    pub ydm: Option<Tensor<T>>,
    /// `[B, J, 16]`
    pub entities: Tensor<T>,
}

pub struct Model<T: Real> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub target_norm: TargetNorm,
}

fn xavier_param<T: Real, R: Rng + ?Sized>(params: &mut ParamStore<T>, name: &str, shape: &[usize], rng: &mut R) -> Result<()> {
    let mut t = Tensor::zeros(shape);
    xavier_uniform(&mut t, rng)?;
    params.add(name, t)?;
    Ok(())
}

/// Capsule transforms `[.., 16]`, each 4x4 block drawn with fan 4 in and out.
fn capsule_param<T: Real, R: Rng + ?Sized>(params: &mut ParamStore<T>, name: &str, shape: &[usize], rng: &mut R) -> Result<()> {
    let bound = libm::sqrt(6.0 / 8.0);
    let t = Tensor::from_fn(shape, |_| T::lit(rng.gen_range(-bound..=bound)));
    params.add(name, t)?;
    Ok(())
}

impl<T: Real> Model<T> {
    /// Parameters in a fixed order; Xavier-uniform weights, zero biases,
    /// balancing weights at 1.
    pub fn build<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut p = ParamStore::new();
        let enc = &config.encoder;
        let mut in_ch = config.domain.channels();
        for (i, &w) in enc.widths.iter().enumerate() {
            xavier_param(&mut p, &format!("encoder.conv{i}.weight"), &[w, in_ch, enc.kernel, enc.kernel], rng)?;
            p.add(&format!("encoder.conv{i}.bias"), Tensor::zeros(&[w]))?;
            in_ch = w;
        }
        let caps = &config.capsules;
        let pt = caps.primary_types;
        xavier_param(&mut p, "capsules.primary.pose.weight", &[pt * POSE, in_ch, 1, 1], rng)?;
        p.add("capsules.primary.pose.bias", Tensor::zeros(&[pt * POSE]))?;
        xavier_param(&mut p, "capsules.primary.act.weight", &[pt, in_ch, 1, 1], rng)?;
        p.add("capsules.primary.act.bias", Tensor::zeros(&[pt]))?;
        let mut types = pt;
        for (i, spec) in caps.conv.iter().enumerate() {
            let l = spec.kernel * spec.kernel * types;
            capsule_param(&mut p, &format!("capsules.conv{i}.weight"), &[l, spec.types, POSE], rng)?;
            p.add(&format!("capsules.conv{i}.beta_a"), Tensor::zeros(&[spec.types]))?;
            p.add(&format!("capsules.conv{i}.beta_u"), Tensor::zeros(&[spec.types]))?;
            types = spec.types;
        }
        let j = config.joints;
        capsule_param(&mut p, "capsules.class.weight", &[types, j, POSE], rng)?;
        if config.tasks.contains(Task::InverseGraphics) {
            capsule_param(&mut p, "capsules.class.weight_inv", &[types, j, POSE], rng)?;
        }
        p.add("capsules.class.beta_a", Tensor::zeros(&[j]))?;
        p.add("capsules.class.beta_u", Tensor::zeros(&[j]))?;
        let dec = &config.decoder;
        for task in config.tasks.iter().filter(|t| t.has_decoder()) {
            let mut width = j * POSE;
            let out = dec.output_size(task, j)?;
            for (k, &h) in dec.hidden.iter().chain(core::iter::once(&out)).enumerate() {
                xavier_param(&mut p, &format!("decoders.{task}.fc{k}.weight"), &[h, width], rng)?;
                p.add(&format!("decoders.{task}.fc{k}.bias"), Tensor::zeros(&[h]))?;
                width = h;
            }
        }
        for task in config.tasks.iter() {
            p.add(&format!("loss.s_{task}"), Tensor::scalar(T::one()))?;
        }
        let target_norm = TargetNorm::identity(j);
        Ok(Model {
            config,
            params: p,
            target_norm,
        })
    }

    fn bind(&self, g: &mut Graph<T>, name: &str) -> Result<Var> {
        Ok(g.param(&self.params, self.params.id(name)?))
    }

    /// Forward pass on a normalized batch `[B, C, S, S]`.
    pub fn forward<R: Rng + ?Sized>(&self, g: &mut Graph<T>, input: Tensor<T>, training: bool, rng: &mut R) -> Result<ForwardOutput> {
        let cfg = &self.config;
        let s = cfg.image_size;
        let expected = [input.shape().first().copied().unwrap_or(0), cfg.domain.channels(), s, s];
        if input.shape() != expected || expected[0] == 0 {
            return Err(Error::shape("model input", &expected, input.shape()));
        }
        let mut x = g.input(input);
        let enc = &cfg.encoder;
        for i in 0..enc.widths.len() {
            let w = self.bind(g, &format!("encoder.conv{i}.weight"))?;
            let b = self.bind(g, &format!("encoder.conv{i}.bias"))?;
            x = g.conv2d(x, w, Some(b), enc.stride, enc.padding)?;
            x = g.instance_norm2d(x, enc.norm_eps)?;
            x = g.gelu(x);
        }
        let caps = &cfg.capsules;
        let pv = PrimaryCapsVars {
            pose_w: self.bind(g, "capsules.primary.pose.weight")?,
            pose_b: self.bind(g, "capsules.primary.pose.bias")?,
            act_w: self.bind(g, "capsules.primary.act.weight")?,
            act_b: self.bind(g, "capsules.primary.act.bias")?,
        };
        let mut layer = capsules::primary_capsules(g, x, &pv, caps.primary_types)?;
        for (i, spec) in caps.conv.iter().enumerate() {
            let vars = ConvCapsVars {
                w: self.bind(g, &format!("capsules.conv{i}.weight"))?,
                beta_a: self.bind(g, &format!("capsules.conv{i}.beta_a"))?,
                beta_u: self.bind(g, &format!("capsules.conv{i}.beta_u"))?,
            };
            layer = capsules::conv_capsules(g, &layer, &vars, *spec, &caps.routing)?;
        }
        let w_inv = if cfg.tasks.contains(Task::InverseGraphics) {
            Some(self.bind(g, "capsules.class.weight_inv")?)
        } else {
            None
        };
        let cv = ClassCapsVars {
            w: self.bind(g, "capsules.class.weight")?,
            w_inv,
            beta_a: self.bind(g, "capsules.class.beta_a")?,
            beta_u: self.bind(g, "capsules.class.beta_u")?,
        };
        let class = capsules::class_capsules(g, &layer, &cv, cfg.joints, caps.coord_add, &caps.routing)?;

        let mut heads = BTreeMap::new();
        for task in cfg.tasks.iter().filter(|t| t.has_decoder()) {
            let n_layers = cfg.decoder.hidden.len() + 1;
            let layers = (0..n_layers)
                .map(|k| {
                    Ok((
                        self.bind(g, &format!("decoders.{task}.fc{k}.weight"))?,
                        self.bind(g, &format!("decoders.{task}.fc{k}.bias"))?,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            let head = HeadVars { task, layers };
            heads.insert(task, decode_head(g, class.entities, &head, &cfg.decoder, training, rng)?);
        }
        let loss_weights = cfg
            .tasks
            .iter()
            .map(|t| Ok((t, self.bind(g, &format!("loss.s_{t}"))?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(ForwardOutput {
            entities: class.entities,
            activations: class.activations,
            heads,
            class_w: class.w,
            class_w_inv: class.w_inv,
            loss_weights,
        })
    }

    /// Per-task losses and the balanced total.
    pub fn loss(&self, g: &mut Graph<T>, out: &ForwardOutput, targets: &Targets<T>) -> Result<(Var, Vec<(Task, Var)>)> {
        let lc = &self.config.loss;
        let mut per_task = Vec::new();
        for task in self.config.tasks.iter() {
            let l = match task {
                Task::Pose3d => losses::mse_loss(g, out.heads[&task], &targets.y3d)?,
                Task::Pose2d => {
                    let gt = targets.y2d.as_ref().ok_or_else(|| Error::arg("loss", "missing 2D targets"))?;
                    losses::mse_loss(g, out.heads[&task], gt)?
                }
                Task::DepthMap => {
                    let gt = targets.dm.as_ref().ok_or_else(|| Error::arg("loss", "missing depth-map targets"))?;
                    losses::masked_l1_loss(g, out.heads[&task], gt, lc.depth_threshold, lc.depth_norm)?
                }
                Task::InverseGraphics => {
                    let w_inv = out.class_w_inv.ok_or_else(|| Error::arg("loss", "model has no inverse matrices"))?;
                    losses::inverse_graphics_loss(g, out.class_w, w_inv, lc.inverse_graphics)?
                }
            };
            per_task.push((task, l));
        }
        let total = losses::total_loss(g, &per_task, &out.loss_weights)?;
        Ok((total, per_task))
    }

    /// Read a loss evaluation back out of the graph.
    pub fn report(&self, g: &Graph<T>, total: Var, per_task: &[(Task, Var)]) -> LossReport {
        LossReport {
            per_task: per_task.iter().map(|&(t, v)| (t, g.value(v).item().to_f64_lossy())).collect(),
            total: g.value(total).item().to_f64_lossy(),
            weights: self
                .config
                .tasks
                .iter()
                .map(|t| {
                    let s = self.params.by_name(&format!("loss.s_{t}")).map(|p| p.value.item());
                    (t, s.map(|v| v.to_f64_lossy()).unwrap_or(f64::NAN))
                })
                .collect(),
        }
    }

    /// Inference with dropout off. 3D output is returned in metres.
    pub fn predict(&self, input: Tensor<T>) -> Result<TaskPrediction<T>> {
        let mut g = Graph::new();
        let mut rng = NoRng;
        let out = self.forward(&mut g, input, false, &mut rng)?;
        let j = self.config.joints;
        let b = g.shape(out.entities)[0];
        let raw = g.value(out.heads[&Task::Pose3d]).data();
        let mut y3d = Vec::with_capacity(raw.len());
        for row in raw.chunks(3 * j) {
            let r: Vec<f64> = row.iter().map(|v| v.to_f64_lossy()).collect();
            y3d.extend(self.target_norm.denormalize(&r).into_iter().map(T::lit));
        }
        let y2d = out
            .heads
            .get(&Task::Pose2d)
            .map(|&v| g.value(v).clone().reshape(&[b, j, 2]))
            .transpose()?;
        let side = self.config.decoder.depth_side;
        let ydm = out
            .heads
            .get(&Task::DepthMap)
            .map(|&v| g.value(v).clone().reshape(&[b, 1, side, side]))
            .transpose()?;
        Ok(TaskPrediction {
            y3d: Tensor::new(&[b, j, 3], y3d)?,
            y2d,
            ydm,
            entities: g.value(out.entities).clone(),
        })
    }

    /// Parameter names, for audits and checkpoint indexes.
    pub fn parameter_names(&self) -> Vec<String> {
        self.params.iter().map(|(_, p)| p.name.clone()).collect()
    }
}

/// Random source for inference, where dropout never draws.
struct NoRng;

impl rand::RngCore for NoRng {
    fn next_u32(&mut self) -> u32 {
        unreachable!("inference draws no random numbers")
    }
    fn next_u64(&mut self) -> u64 {
        unreachable!("inference draws no random numbers")
    }
    fn fill_bytes(&mut self, _: &mut [u8]) {
        unreachable!("inference draws no random numbers")
    }
    fn try_fill_bytes(&mut self, _: &mut [u8]) -> core::result::Result<(), rand::Error> {
        unreachable!("inference draws no random numbers")
    }
}
