//! Hard parameter sharing: one convolutional backbone produces an embedding
//! `z` that feeds a softmax head for overall quality (task B). An optional
//! sigmoid head on the same `z` scores the quality details (task A).

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{checkpoint, he_uniform, Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::imaging::{to_nchw, Image};

/// Number of quality details predicted by the task-A head.
pub const NUM_DETAILS: usize = 3;

/// Subtracted from every pixel value before the first conv, so inputs in
/// `[0, 1]` enter the network centered on zero.
pub const INPUT_CENTER: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneConfig {
    pub input_size: usize,
    pub widths: Vec<usize>,
    pub blocks_per_stage: usize,
    pub embedding_dim: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            input_size: 32,
            widths: vec![8, 16, 32],
            blocks_per_stage: 2,
            embedding_dim: 64,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::invalid("backbone needs at least one stage of positive width"));
        }
        let pool = 1usize << (self.widths.len() - 1);
        if self.input_size == 0 || !self.input_size.is_multiple_of(pool) {
            return Err(Error::invalid(format!(
                "input size {} must be a positive multiple of {pool} for {} stages",
                self.input_size,
                self.widths.len()
            )));
        }
        if self.embedding_dim < num_classes.max(NUM_DETAILS) {
            return Err(Error::invalid("embedding dimension must be at least the number of outputs"));
        }
        Ok(())
    }

    /// Spatial size of the final feature map.
    pub fn feature_size(&self) -> usize {
        self.input_size >> (self.widths.len() - 1)
    }

    /// Multiplier on the He-uniform bound of every residual-branch conv,
    /// `1/sqrt(total blocks)`.
    pub fn residual_branch_scale(&self) -> f64 {
        let blocks = self.widths.len() * self.blocks_per_stage;
        1.0 / (blocks.max(1) as f64).sqrt()
    }
}

fn entry_name(stage: usize) -> String {
    format!("shared.s{stage}.entry")
}

fn block_name(stage: usize, block: usize) -> String {
    format!("shared.s{stage}.b{block}")
}

/// Shared parameters θ^SH plus the task heads.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    backbone: BackboneConfig,
    num_classes: usize,
    store: ParamStore,
}

fn scaled(mut t: Tensor, s: f64) -> Tensor {
    t.data_mut().iter_mut().for_each(|v| *v *= s);
    t
}

fn add_conv(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, c_in: usize, c_out: usize, s: f64) -> Result<()> {
    store.add(format!("{name}.weight"), scaled(he_uniform(rng, &[c_out, c_in, 3, 3], c_in * 9), s))?;
    store.add(format!("{name}.bias"), Tensor::zeros(&[c_out]))?;
    Ok(())
}

fn add_dense(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d_in: usize, d_out: usize, s: f64) -> Result<()> {
    store.add(format!("{name}.weight"), scaled(he_uniform(rng, &[d_out, d_in], d_in), s))?;
    store.add(format!("{name}.bias"), Tensor::zeros(&[d_out]))?;
    Ok(())
}

impl ModelParams {
    /// Fresh single-task model (backbone + task-B head).
    pub fn new(backbone: BackboneConfig, num_classes: usize, seed: u64) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::invalid("need at least two overall-quality classes"));
        }
        backbone.validate(num_classes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let branch_scale = backbone.residual_branch_scale();
        let mut c_in = 3;
        for (s, &width) in backbone.widths.iter().enumerate() {
            add_conv(&mut store, &mut rng, &entry_name(s), c_in, width, 1.0)?;
            for b in 0..backbone.blocks_per_stage {
                add_conv(&mut store, &mut rng, &block_name(s, b), width, width, branch_scale)?;
            }
            c_in = width;
        }
        add_dense(&mut store, &mut rng, "shared.embed", c_in, backbone.embedding_dim, 1.0)?;
        add_dense(&mut store, &mut rng, "head_b", backbone.embedding_dim, num_classes, 1.0)?;
        Ok(Self {
            backbone,
            num_classes,
            store,
        })
    }

    /// Rebuilds a model from stored tensors, inferring the architecture from
    /// their names and shapes.
    pub fn from_store(store: ParamStore, input_size: usize) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(format!("not a model checkpoint: {m}"));
        let shape = |name: String| -> Result<Vec<usize>> {
            store.find(&name).map(|id| store.get(id).shape().to_vec()).ok_or_else(|| bad(&format!("missing `{name}`")))
        };
        let mut widths = Vec::new();
        while store.find(&format!("{}.weight", entry_name(widths.len()))).is_some() {
            widths.push(shape(format!("{}.weight", entry_name(widths.len())))?[0]);
        }
        if widths.is_empty() {
            return Err(bad("no backbone stages"));
        }
        let mut blocks_per_stage = 0;
        while store.find(&format!("{}.weight", block_name(0, blocks_per_stage))).is_some() {
            blocks_per_stage += 1;
        }
        let embedding_dim = shape("shared.embed.weight".into())?[0];
        let num_classes = shape("head_b.weight".into())?[0];
        let backbone = BackboneConfig {
            input_size,
            widths,
            blocks_per_stage,
            embedding_dim,
        };
        backbone.validate(num_classes)?;
        let reference = ModelParams::new(backbone.clone(), num_classes, 0)?;
        let reference = if store.find("head_a.weight").is_some() {
            reference.attach_head_a(0)?
        } else {
            reference
        };
        if reference.store.len() != store.len()
            || reference.store.iter().zip(store.iter()).any(|((n1, t1), (n2, t2))| n1 != n2 || t1.shape() != t2.shape())
        {
            return Err(bad("tensor names or shapes do not match the inferred architecture"));
        }
        Ok(Self {
            backbone,
            num_classes,
            store,
        })
    }

    pub fn load(path: &Path, input_size: usize) -> Result<Self> {
        Self::from_store(checkpoint::load(path)?, input_size)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(&self.store, path)
    }

    pub fn backbone(&self) -> &BackboneConfig {
        &self.backbone
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn has_head_a(&self) -> bool {
        self.store.find("head_a.weight").is_some()
    }

    /// Adds a freshly initialized task-A head; existing tensors are untouched.
    pub fn attach_head_a(mut self, seed: u64) -> Result<Self> {
        if self.has_head_a() {
            return Err(Error::invalid("task-A head already attached"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_a11a_0000_0001);
        add_dense(&mut self.store, &mut rng, "head_a", self.backbone.embedding_dim, NUM_DETAILS, 1.0)?;
        Ok(self)
    }

    /// Parameter ids belonging to a named group (`shared`, `head_a`, `head_b`).
    pub fn group(&self, prefix: &str) -> Vec<ParamId> {
        (0..self.store.len()).filter(|&i| self.store.name(i).starts_with(prefix)).collect()
    }

    fn id(&self, name: &str) -> ParamId {
        self.store.find(name).unwrap_or_else(|| panic!("parameter `{name}` exists by construction"))
    }
}

/// The full network as a graph, with handles to the interesting nodes.
#[derive(Debug, Clone)]
pub struct ModelGraph {
    pub graph: Graph,
    /// Final backbone feature map (input of global pooling).
    pub features: NodeId,
    pub z: NodeId,
    pub logits_b: NodeId,
    pub probs_b: NodeId,
    pub logits_a: Option<NodeId>,
    pub probs_a: Option<NodeId>,
}

impl ModelGraph {
    pub fn build(params: &ModelParams) -> Self {
        let cfg = &params.backbone;
        let mut g = Graph::new();
        let mut x = g.input("input", &[3, cfg.input_size, cfg.input_size]);
        for s in 0..cfg.widths.len() {
            if s > 0 {
                x = g.maxpool2x2(&format!("s{s}.pool"), x);
            }
            let e = entry_name(s);
            x = g.conv2d(&e, x, params.id(&format!("{e}.weight")), params.id(&format!("{e}.bias")));
            x = g.relu(&format!("{e}.relu"), x);
            for b in 0..cfg.blocks_per_stage {
                let n = block_name(s, b);
                let c = g.conv2d(&n, x, params.id(&format!("{n}.weight")), params.id(&format!("{n}.bias")));
                let r = g.relu(&format!("{n}.relu"), c);
                x = g.residual_add(&format!("{n}.add"), x, r);
            }
        }
        let features = x;
        let pooled = g.global_avg_pool("gap", features);
        let z = g.dense("z", pooled, params.id("shared.embed.weight"), params.id("shared.embed.bias"));
        let logits_b = g.dense("head_b.logits", z, params.id("head_b.weight"), params.id("head_b.bias"));
        let probs_b = g.softmax("head_b.probs", logits_b);
        let (logits_a, probs_a) = if params.has_head_a() {
            let l = g.dense("head_a.logits", z, params.id("head_a.weight"), params.id("head_a.bias"));
            (Some(l), Some(g.sigmoid("head_a.probs", l)))
        } else {
            (None, None)
        };
        g.set_root(probs_b);
        Self {
            graph: g,
            features,
            z,
            logits_b,
            probs_b,
            logits_a,
            probs_a,
        }
    }

    /// Runs the whole network on an NCHW batch of `[0, 1]` pixel values.
    pub fn run(&mut self, params: &ModelParams, batch: &Tensor) -> Result<()> {
        let mut centered = batch.clone();
        centered.data_mut().iter_mut().for_each(|v| *v -= INPUT_CENTER);
        self.graph.run_forward(params.store(), &centered)
    }
}

/// Converts an NHWC batch `(N, size, size, 3)` to NCHW.
fn nhwc_to_nchw(batch: &Tensor, size: usize) -> Result<Tensor> {
    let s = batch.shape();
    if s.len() != 4 || s[1] != size || s[2] != size || s[3] != 3 {
        return Err(Error::Shape {
            node: "input".into(),
            expected: format!("[N, {size}, {size}, 3]"),
            actual: s.to_vec(),
        });
    }
    let (n, plane) = (s[0], size * size);
    let mut out = vec![0.0; batch.numel()];
    for b in 0..n {
        for p in 0..plane {
            for ch in 0..3 {
                out[(b * 3 + ch) * plane + p] = batch.data()[(b * plane + p) * 3 + ch];
            }
        }
    }
    Tensor::new(&[n, 3, size, size], out)
}

/// Shared embedding `z` for an NHWC batch.
pub fn forward_shared(params: &ModelParams, batch: &Tensor) -> Result<Tensor> {
    let input = nhwc_to_nchw(batch, params.backbone.input_size)?;
    let mut mg = ModelGraph::build(params);
    mg.run(params, &input)?;
    Ok(mg.graph.output(mg.z)?.clone())
}

/// Builds an NHWC batch tensor from images.
pub fn nhwc_batch(images: &[&Image]) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| Error::invalid("empty image batch"))?;
    let (w, h) = (first.width(), first.height());
    let mut data = Vec::with_capacity(images.len() * w * h * 3);
    for img in images {
        if img.width() != w || img.height() != h {
            return Err(Error::invalid("images in a batch must share one size"));
        }
        data.extend_from_slice(img.data());
    }
    Tensor::new(&[images.len(), h, w, 3], data)
}

/// Head outputs for embeddings `z`: softmax over classes, and the detail
/// sigmoids when `with_details` is set.
pub fn forward_heads(params: &ModelParams, z: &Tensor, with_details: bool) -> Result<(Tensor, Option<Tensor>)> {
    if with_details && !params.has_head_a() {
        return Err(Error::invalid("task-A head requested but the model is single-task"));
    }
    let mut g = Graph::new();
    let input = g.input("z", &[params.backbone.embedding_dim]);
    let lb = g.dense("head_b.logits", input, params.id("head_b.weight"), params.id("head_b.bias"));
    let pb = g.softmax("head_b.probs", lb);
    let pa = if with_details {
        let la = g.dense("head_a.logits", input, params.id("head_a.weight"), params.id("head_a.bias"));
        Some(g.sigmoid("head_a.probs", la))
    } else {
        None
    };
    g.run_forward(params.store(), z)?;
    let probs_b = g.output(pb)?.clone();
    let probs_a = pa.map(|id| g.output(id).cloned()).transpose()?;
    Ok((probs_b, probs_a))
}

/// Predicted class probabilities (and detail probabilities, when the head
/// exists) for a list of images, evaluated in chunks.
pub fn predict(params: &ModelParams, images: &[&Image]) -> Result<(Vec<Vec<f64>>, Option<Vec<[f64; NUM_DETAILS]>>)> {
    let mut mg = ModelGraph::build(params);
    let mut probs_b = Vec::with_capacity(images.len());
    let mut probs_a = mg.probs_a.map(|_| Vec::with_capacity(images.len()));
    for chunk in images.chunks(64) {
        let batch = to_nchw(chunk)?;
        mg.run(params, &batch)?;
        let pb = mg.graph.output(mg.probs_b)?;
        for i in 0..chunk.len() {
            probs_b.push(pb.row(i).to_vec());
        }
        if let (Some(id), Some(out)) = (mg.probs_a, probs_a.as_mut()) {
            let pa = mg.graph.output(id)?;
            for i in 0..chunk.len() {
                let r = pa.row(i);
                out.push([r[0], r[1], r[2]]);
            }
        }
    }
    Ok((probs_b, probs_a))
}

/// Shared embeddings for a list of images.
pub fn embed(params: &ModelParams, images: &[&Image]) -> Result<Vec<Vec<f64>>> {
    let mut mg = ModelGraph::build(params);
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(64) {
        mg.run(params, &to_nchw(chunk)?)?;
        let z = mg.graph.output(mg.z)?;
        for i in 0..chunk.len() {
            out.push(z.row(i).to_vec());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BackboneConfig {
        BackboneConfig {
            input_size: 8,
            widths: vec![2, 4],
            blocks_per_stage: 1,
            embedding_dim: 6,
        }
    }

    fn batch(n: usize, size: usize) -> Tensor {
        let data = (0..n * size * size * 3).map(|i| ((i * 7919) % 101) as f64 / 100.0).collect();
        Tensor::new(&[n, size, size, 3], data).unwrap()
    }

    #[test]
    fn default_backbone_is_desk_scale() {
        let m = ModelParams::new(BackboneConfig::default(), 3, 1).unwrap().attach_head_a(2).unwrap();
        assert!(m.store().num_scalars() < 100_000, "{}", m.store().num_scalars());
    }

    #[test]
    fn embedding_shape_and_identical_rows() {
        let m = ModelParams::new(small(), 3, 1).unwrap();
        let mut b = batch(1, 8).into_data();
        b.extend_from_slice(&b.clone());
        let b = Tensor::new(&[2, 8, 8, 3], b).unwrap();
        let z = forward_shared(&m, &b).unwrap();
        assert_eq!(z.shape(), &[2, 6]);
        assert_eq!(z.row(0), z.row(1));
    }

    #[test]
    fn wrong_input_size_rejected() {
        let m = ModelParams::new(small(), 3, 1).unwrap();
        assert!(matches!(forward_shared(&m, &batch(1, 4)), Err(Error::Shape { .. })));
    }

    #[test]
    fn softmax_rows_sum_to_one_and_zero_head_is_uniform() {
        let mut m = ModelParams::new(small(), 3, 1).unwrap();
        let z = forward_shared(&m, &batch(4, 8)).unwrap();
        let (pb, pa) = forward_heads(&m, &z, false).unwrap();
        assert!(pa.is_none());
        for i in 0..4 {
            assert!((pb.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        for id in m.group("head_b") {
            m.store_mut().get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let (pb, _) = forward_heads(&m, &z, false).unwrap();
        assert!(pb.data().iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
        assert!(forward_heads(&m, &z, true).is_err());
    }

    #[test]
    fn attach_keeps_existing_parameters() {
        let m = ModelParams::new(small(), 3, 1).unwrap();
        let z = forward_shared(&m, &batch(3, 8)).unwrap();
        let (before, _) = forward_heads(&m, &z, false).unwrap();
        let a = m.clone().attach_head_a(9).unwrap();
        for (name, t) in m.store().iter() {
            assert_eq!(a.store().get(a.store().find(name).unwrap()), t);
        }
        let z2 = forward_shared(&a, &batch(3, 8)).unwrap();
        let (after, pa) = forward_heads(&a, &z2, true).unwrap();
        assert_eq!(before, after);
        assert!(pa.unwrap().data().iter().all(|&p| p > 0.0 && p < 1.0));
        assert_eq!(m.clone().attach_head_a(9).unwrap(), a);
        assert!(a.attach_head_a(1).is_err());
    }

    #[test]
    fn graph_and_head_paths_agree_bitwise() {
        let m = ModelParams::new(small(), 2, 3).unwrap().attach_head_a(4).unwrap();
        let b = batch(2, 8);
        let z = forward_shared(&m, &b).unwrap();
        let (pb, pa) = forward_heads(&m, &z, true).unwrap();
        let mut mg = ModelGraph::build(&m);
        mg.run(&m, &nhwc_to_nchw(&b, 8).unwrap()).unwrap();
        assert_eq!(mg.graph.output(mg.probs_b).unwrap(), &pb);
        assert_eq!(mg.graph.output(mg.probs_a.unwrap()).unwrap(), &pa.unwrap());
    }

    #[test]
    fn checkpoint_round_trip_infers_architecture() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.fmtk");
        let m = ModelParams::new(small(), 3, 5).unwrap().attach_head_a(6).unwrap();
        m.save(&path).unwrap();
        assert_eq!(ModelParams::load(&path, 8).unwrap(), m);
    }
}
