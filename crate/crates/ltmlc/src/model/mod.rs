//! The label-query model: a small convolutional image encoder, a frozen
//! class-embedding table, stacked transformer decoder layers in which the
//! class embeddings act as queries over image tokens, and per-class
//! (separate) or shared classifier heads.

mod embedding;

pub use embedding::{synthetic_class_embedding, ClassEmbeddingTable};

use std::path::PathBuf;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::core::{
    ClassVocabulary, ImageTensor, LabeledDataset, ModelCheckpoint, NamedTensor, PredictionMatrix,
};
use crate::error::{Error, Result};
use crate::nn::{
    conv_out_side, AttentionLayer, AttnCache, ConvCache, ConvLayer, FfnCache, FfnLayer,
    LayerNormLayer, LinearLayer, LnCache, ParamLayout, ParamStore,
};
use crate::rng::SplitMix64;

pub const EMBEDDING_TENSOR: &str = "class_embeddings";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMode {
    /// One independent affine head per class; gradients cannot cross classes.
    Separate,
    /// A single affine head applied to every class token.
    Shared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    /// Deterministic hash-seeded unit vectors derived from class names.
    Synthetic,
    /// Embedding CSV `class,v0..v{d-1}`, vectors used as-is.
    Csv { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Shared feature dimension d of image tokens and class embeddings.
    pub feature_dim: usize,
    pub num_decoder_layers: usize,
    pub num_heads: usize,
    pub head_mode: HeadMode,
    /// Output channels of the three stride-2 convolutions.
    pub encoder_widths: Vec<usize>,
    pub input_height: usize,
    pub input_width: usize,
    pub embedding_source: EmbeddingSource,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feature_dim: 64,
            num_decoder_layers: 4,
            num_heads: 4,
            head_mode: HeadMode::Separate,
            encoder_widths: vec![16, 32, 64],
            input_height: 64,
            input_width: 64,
            embedding_source: EmbeddingSource::Synthetic,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::Validation("feature_dim must be >= 1".into()));
        }
        if self.num_decoder_layers == 0 {
            return Err(Error::Validation("num_decoder_layers must be >= 1".into()));
        }
        if self.num_heads == 0 || !self.feature_dim.is_multiple_of(self.num_heads) {
            return Err(Error::Validation(format!(
                "feature_dim {} must be divisible by num_heads {}",
                self.feature_dim, self.num_heads
            )));
        }
        if self.encoder_widths.len() != 3 || self.encoder_widths.contains(&0) {
            return Err(Error::Validation(
                "encoder_widths must list three positive channel counts".into(),
            ));
        }
        if !self.input_height.is_multiple_of(8) || !self.input_width.is_multiple_of(8) || self.input_height == 0 {
            return Err(Error::Validation(format!(
                "input size {}x{} must be divisible by 8",
                self.input_height, self.input_width
            )));
        }
        Ok(())
    }

    pub fn ffn_hidden(&self) -> usize {
        4 * self.feature_dim
    }
}

/// Spatial feature map produced by the image encoder: `h * w` tokens of
/// dimension `dim`, rows in row-major spatial order.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub tokens: Array2<f64>,
}

#[derive(Debug, Clone)]
struct DecoderLayerDef {
    ln1: LayerNormLayer,
    self_attn: AttentionLayer,
    ln2: LayerNormLayer,
    cross_attn: AttentionLayer,
    ln3: LayerNormLayer,
    ffn: FfnLayer,
}

#[derive(Debug, Clone)]
enum HeadsDef {
    Separate(Vec<LinearLayer>),
    Shared(LinearLayer),
}

#[derive(Debug, Clone)]
struct Architecture {
    conv1: ConvLayer,
    conv2: ConvLayer,
    conv3: ConvLayer,
    proj: LinearLayer,
    layers: Vec<DecoderLayerDef>,
    heads: HeadsDef,
}

fn build_architecture(config: &ModelConfig, num_classes: usize) -> (Architecture, ParamLayout) {
    let mut layout = ParamLayout::default();
    let d = config.feature_dim;
    let [w1, w2, w3] = [
        config.encoder_widths[0],
        config.encoder_widths[1],
        config.encoder_widths[2],
    ];
    let conv1 = ConvLayer::register(&mut layout, "encoder.conv1", 3, w1, true);
    let conv2 = ConvLayer::register(&mut layout, "encoder.conv2", w1, w2, true);
    let conv3 = ConvLayer::register(&mut layout, "encoder.conv3", w2, w3, true);
    let proj = LinearLayer::register(&mut layout, "encoder.proj", w3, d);
    let layers = (0..config.num_decoder_layers)
        .map(|l| {
            let prefix = format!("decoder.layer{l}");
            DecoderLayerDef {
                ln1: LayerNormLayer::register(&mut layout, &format!("{prefix}.ln1"), d),
                self_attn: AttentionLayer::register(
                    &mut layout,
                    &format!("{prefix}.self_attn"),
                    d,
                    config.num_heads,
                ),
                ln2: LayerNormLayer::register(&mut layout, &format!("{prefix}.ln2"), d),
                cross_attn: AttentionLayer::register(
                    &mut layout,
                    &format!("{prefix}.cross_attn"),
                    d,
                    config.num_heads,
                ),
                ln3: LayerNormLayer::register(&mut layout, &format!("{prefix}.ln3"), d),
                ffn: FfnLayer::register(&mut layout, &format!("{prefix}.ffn"), d, config.ffn_hidden()),
            }
        })
        .collect();
    let heads = match config.head_mode {
        HeadMode::Separate => HeadsDef::Separate(
            (0..num_classes)
                .map(|c| LinearLayer::register(&mut layout, &format!("heads.class{c}"), d, 1))
                .collect(),
        ),
        HeadMode::Shared => {
            HeadsDef::Shared(LinearLayer::register(&mut layout, "heads.shared", d, 1))
        }
    };
    (
        Architecture {
            conv1,
            conv2,
            conv3,
            proj,
            layers,
            heads,
        },
        layout,
    )
}

#[derive(Debug)]
pub struct Model {
    config: ModelConfig,
    vocab: ClassVocabulary,
    embeddings: ClassEmbeddingTable,
    params: ParamStore,
    arch: Architecture,
}

pub(crate) struct EncoderCache {
    c1: ConvCache,
    c2: ConvCache,
    c3: ConvCache,
    a3: Array2<f64>,
}

pub(crate) struct LayerCache {
    ln1_cache: LnCache,
    ln1_out: Array2<f64>,
    self_cache: AttnCache,
    ln2_cache: LnCache,
    ln2_out: Array2<f64>,
    cross_cache: AttnCache,
    ln3_cache: LnCache,
    ffn_cache: FfnCache,
}

pub(crate) struct ForwardCache {
    n: usize,
    encoder: EncoderCache,
    tokens: Array2<f64>,
    layer_caches: Vec<LayerCache>,
    final_queries: Array2<f64>,
}

impl Model {
    /// Builds a model with freshly initialized parameters. Initialization
    /// draws are taken from a single SplitMix64 stream in registration
    /// order, so equal seeds give bit-identical models.
    pub fn new(
        config: ModelConfig,
        vocab: ClassVocabulary,
        embeddings: ClassEmbeddingTable,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if embeddings.num_classes() != vocab.len() {
            return Err(Error::ShapeMismatch(format!(
                "embedding table has {} rows, vocabulary has {} classes",
                embeddings.num_classes(),
                vocab.len()
            )));
        }
        if embeddings.dim() != config.feature_dim {
            return Err(Error::ShapeMismatch(format!(
                "embedding dimension {} != feature_dim {}",
                embeddings.dim(),
                config.feature_dim
            )));
        }
        let (arch, layout) = build_architecture(&config, vocab.len());
        let mut params = ParamStore::zeros(layout);
        let mut rng = SplitMix64::new(seed);
        arch.conv1.init(&mut params, &mut rng);
        arch.conv2.init(&mut params, &mut rng);
        arch.conv3.init(&mut params, &mut rng);
        arch.proj.init_glorot(&mut params, &mut rng);
        for layer in &arch.layers {
            layer.ln1.init(&mut params);
            layer.self_attn.init(&mut params, &mut rng);
            layer.ln2.init(&mut params);
            layer.cross_attn.init(&mut params, &mut rng);
            layer.ln3.init(&mut params);
            layer.ffn.init(&mut params, &mut rng);
        }
        let head_std = 1.0 / (config.feature_dim as f64).sqrt();
        match &arch.heads {
            HeadsDef::Separate(heads) => {
                for head in heads {
                    head.init_normal(&mut params, head_std, &mut rng);
                }
            }
            HeadsDef::Shared(head) => head.init_normal(&mut params, head_std, &mut rng),
        }
        Ok(Model {
            config,
            vocab,
            embeddings,
            params,
            arch,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocabulary(&self) -> &ClassVocabulary {
        &self.vocab
    }

    pub fn embeddings(&self) -> &ClassEmbeddingTable {
        &self.embeddings
    }

    pub fn num_params(&self) -> usize {
        self.params.data.len()
    }

    pub fn param_data(&self) -> &[f64] {
        &self.params.data
    }

    pub fn param_data_mut(&mut self) -> &mut [f64] {
        &mut self.params.data
    }

    pub fn param_layout(&self) -> &ParamLayout {
        &self.params.layout
    }

    /// Flat-vector ranges of the separate head for `class`, when in
    /// separate mode: `(weight_range, bias_range)`.
    pub fn head_param_ranges(
        &self,
        class: usize,
    ) -> Option<(std::ops::Range<usize>, std::ops::Range<usize>)> {
        match &self.arch.heads {
            HeadsDef::Separate(heads) => heads.get(class).map(|h| {
                (
                    self.params.layout.range(h.weight),
                    self.params.layout.range(h.bias),
                )
            }),
            HeadsDef::Shared(_) => None,
        }
    }

    /// Widens a slice of images into one `[n*H*W, 3]` batch matrix.
    pub fn image_batch(&self, images: &[&ImageTensor]) -> Result<Array2<f64>> {
        let (h, w) = (self.config.input_height, self.config.input_width);
        let mut batch = Array2::zeros((images.len() * h * w, 3));
        for (e, img) in images.iter().enumerate() {
            if img.height() != h || img.width() != w {
                return Err(Error::ShapeMismatch(format!(
                    "image is {}x{}, model expects {h}x{w}",
                    img.height(),
                    img.width()
                )));
            }
            let base = e * h * w;
            for (px, chunk) in img.data().chunks_exact(3).enumerate() {
                for c in 0..3 {
                    batch[(base + px, c)] = f64::from(chunk[c]);
                }
            }
        }
        Ok(batch)
    }

    fn encoder_forward(&self, batch: &Array2<f64>, n: usize) -> (Array2<f64>, EncoderCache) {
        let p = &self.params;
        let (h, w) = (self.config.input_height, self.config.input_width);
        let (a1, c1) = self.arch.conv1.forward(p, batch, n, h, w);
        let (h1, w1) = (conv_out_side(h), conv_out_side(w));
        let (a2, c2) = self.arch.conv2.forward(p, &a1, n, h1, w1);
        let (h2, w2) = (conv_out_side(h1), conv_out_side(w1));
        let (a3, c3) = self.arch.conv3.forward(p, &a2, n, h2, w2);
        let tokens = self.arch.proj.forward(p, &a3);
        (tokens, EncoderCache { c1, c2, c3, a3 })
    }

    fn decoder_forward(
        &self,
        tokens: &Array2<f64>,
        n: usize,
    ) -> (Array2<f64>, Vec<LayerCache>) {
        let p = &self.params;
        let c = self.vocab.len();
        let d = self.config.feature_dim;
        let mut x = Array2::zeros((n * c, d));
        for e in 0..n {
            x.slice_mut(ndarray::s![e * c..(e + 1) * c, ..])
                .assign(self.embeddings.vectors());
        }
        let mut caches = Vec::with_capacity(self.arch.layers.len());
        for layer in &self.arch.layers {
            let (ln1_out, ln1_cache) = layer.ln1.forward(p, &x);
            let (self_out, self_cache) = layer.self_attn.forward(p, &ln1_out, &ln1_out, n);
            let x1 = &x + &self_out;
            let (ln2_out, ln2_cache) = layer.ln2.forward(p, &x1);
            let (cross_out, cross_cache) = layer.cross_attn.forward(p, &ln2_out, tokens, n);
            let x2 = &x1 + &cross_out;
            let (ln3_out, ln3_cache) = layer.ln3.forward(p, &x2);
            let (ffn_out, ffn_cache) = layer.ffn.forward(p, &ln3_out);
            x = &x2 + &ffn_out;
            caches.push(LayerCache {
                ln1_cache,
                ln1_out,
                self_cache,
                ln2_cache,
                ln2_out,
                cross_cache,
                ln3_cache,
                ffn_cache,
            });
        }
        (x, caches)
    }

    fn heads_forward(&self, final_queries: &Array2<f64>, n: usize) -> Array2<f64> {
        let p = &self.params;
        let c = self.vocab.len();
        let mut logits = Array2::zeros((n, c));
        match &self.arch.heads {
            HeadsDef::Separate(heads) => {
                for (ci, head) in heads.iter().enumerate() {
                    let x = gather_class_rows(final_queries, n, c, ci);
                    let y = head.forward(p, &x);
                    for e in 0..n {
                        logits[(e, ci)] = y[(e, 0)];
                    }
                }
            }
            HeadsDef::Shared(head) => {
                let y = head.forward(p, final_queries);
                for e in 0..n {
                    for ci in 0..c {
                        logits[(e, ci)] = y[(e * c + ci, 0)];
                    }
                }
            }
        }
        logits
    }

    /// Full forward pass over a widened image batch. Returns raw logits
    /// `[n, |Y|]` and the caches needed for `backward`.
    pub(crate) fn forward_f64(&self, batch: &Array2<f64>, n: usize) -> Result<(Array2<f64>, ForwardCache)> {
        let (h, w) = (self.config.input_height, self.config.input_width);
        if batch.nrows() != n * h * w || batch.ncols() != 3 {
            return Err(Error::ShapeMismatch(format!(
                "batch is {:?}, expected [{} * {h} * {w}, 3]",
                batch.dim(),
                n
            )));
        }
        let (tokens, encoder) = self.encoder_forward(batch, n);
        let (final_queries, layer_caches) = self.decoder_forward(&tokens, n);
        let logits = self.heads_forward(&final_queries, n);
        Ok((
            logits,
            ForwardCache {
                n,
                encoder,
                tokens,
                layer_caches,
                final_queries,
            },
        ))
    }

    /// Accumulates parameter gradients for upstream logit gradients
    /// `d_logits [n, |Y|]`. The embedding table receives no gradient.
    pub(crate) fn backward(&self, cache: &ForwardCache, d_logits: &Array2<f64>, grads: &mut [f64]) {
        let p = &self.params;
        let n = cache.n;
        let c = self.vocab.len();
        let d = self.config.feature_dim;

        let mut d_queries = Array2::zeros((n * c, d));
        match &self.arch.heads {
            HeadsDef::Separate(heads) => {
                for (ci, head) in heads.iter().enumerate() {
                    let x = gather_class_rows(&cache.final_queries, n, c, ci);
                    let mut dy = Array2::zeros((n, 1));
                    for e in 0..n {
                        dy[(e, 0)] = d_logits[(e, ci)];
                    }
                    let dx = head.backward(p, &x, &dy, grads);
                    for e in 0..n {
                        let mut row = d_queries.row_mut(e * c + ci);
                        row += &dx.row(e);
                    }
                }
            }
            HeadsDef::Shared(head) => {
                let mut dy = Array2::zeros((n * c, 1));
                for e in 0..n {
                    for ci in 0..c {
                        dy[(e * c + ci, 0)] = d_logits[(e, ci)];
                    }
                }
                d_queries = head.backward(p, &cache.final_queries, &dy, grads);
            }
        }

        let mut dx = d_queries;
        let mut d_tokens: Array2<f64> = Array2::zeros(cache.tokens.dim());
        for (layer, lc) in self
            .arch
            .layers
            .iter()
            .zip(&cache.layer_caches)
            .rev()
        {
            // x3 = x2 + ffn(ln3(x2))
            let d_ln3out = layer.ffn.backward(p, &lc.ffn_cache, &dx, grads);
            let d_from_ffn = layer.ln3.backward(p, &lc.ln3_cache, &d_ln3out, grads);
            let dx2 = &dx + &d_from_ffn;
            // x2 = x1 + cross(ln2(x1), tokens)
            let (d_ln2out, d_tok) = layer.cross_attn.backward(
                p,
                &lc.ln2_out,
                &cache.tokens,
                &lc.cross_cache,
                &dx2,
                n,
                grads,
            );
            d_tokens += &d_tok;
            let d_from_cross = layer.ln2.backward(p, &lc.ln2_cache, &d_ln2out, grads);
            let dx1 = &dx2 + &d_from_cross;
            // x1 = x + self(ln1(x))
            let (dq, dkv) = layer.self_attn.backward(
                p,
                &lc.ln1_out,
                &lc.ln1_out,
                &lc.self_cache,
                &dx1,
                n,
                grads,
            );
            let d_ln1out = &dq + &dkv;
            let d_from_self = layer.ln1.backward(p, &lc.ln1_cache, &d_ln1out, grads);
            dx = &dx1 + &d_from_self;
        }
        // dx now holds the gradient at the initial queries (the frozen
        // embedding rows) and is deliberately dropped.

        let (h, w) = (self.config.input_height, self.config.input_width);
        let (h1, w1) = (conv_out_side(h), conv_out_side(w));
        let (h2, w2) = (conv_out_side(h1), conv_out_side(w1));
        let d_a3 = self.arch.proj.backward(p, &cache.encoder.a3, &d_tokens, grads);
        let d_a2 = self
            .arch
            .conv3
            .backward(p, &cache.encoder.c3, &d_a3, n, h2, w2, grads, true)
            .expect("dx requested");
        let d_a1 = self
            .arch
            .conv2
            .backward(p, &cache.encoder.c2, &d_a2, n, h1, w1, grads, true)
            .expect("dx requested");
        self.arch
            .conv1
            .backward(p, &cache.encoder.c1, &d_a1, n, h, w, grads, false);
    }

    /// Encodes one image to its spatial feature map of `(H/8) * (W/8)`
    /// tokens.
    pub fn encode_image(&self, image: &ImageTensor) -> Result<FeatureMap> {
        let batch = self.image_batch(&[image])?;
        let (tokens, _) = self.encoder_forward(&batch, 1);
        let height = self.config.input_height / 8;
        let width = self.config.input_width / 8;
        Ok(FeatureMap {
            height,
            width,
            dim: self.config.feature_dim,
            tokens,
        })
    }

    /// Runs the query network over one feature map and returns per-class
    /// logits.
    pub fn query_forward(&self, fm: &FeatureMap) -> Result<Vec<f64>> {
        if fm.dim != self.config.feature_dim {
            return Err(Error::ShapeMismatch(format!(
                "feature map dim {} != model dim {}",
                fm.dim, self.config.feature_dim
            )));
        }
        if fm.tokens.nrows() != fm.height * fm.width || fm.tokens.ncols() != fm.dim {
            return Err(Error::ShapeMismatch(format!(
                "feature map tokens {:?} inconsistent with {}x{}x{}",
                fm.tokens.dim(),
                fm.height,
                fm.width,
                fm.dim
            )));
        }
        let (final_queries, _) = self.decoder_forward(&fm.tokens, 1);
        let logits = self.heads_forward(&final_queries, 1);
        Ok(logits.row(0).to_vec())
    }

    /// Raw logits for a batch of images.
    pub fn logits(&self, images: &[&ImageTensor]) -> Result<Array2<f64>> {
        let batch = self.image_batch(images)?;
        let (logits, _) = self.forward_f64(&batch, images.len())?;
        Ok(logits)
    }

    /// Sigmoid scores for a slice of images, computed in fixed-size chunks.
    pub fn score_images(&self, images: &[ImageTensor]) -> Result<Array2<f64>> {
        let c = self.vocab.len();
        let mut scores = Array2::zeros((images.len(), c));
        const CHUNK: usize = 32;
        for (chunk_idx, chunk) in images.chunks(CHUNK).enumerate() {
            let refs: Vec<&ImageTensor> = chunk.iter().collect();
            let logits = self.logits(&refs)?;
            for (i, row) in logits.rows().into_iter().enumerate() {
                for (j, &z) in row.iter().enumerate() {
                    scores[(chunk_idx * CHUNK + i, j)] = stable_sigmoid(z);
                }
            }
        }
        Ok(scores)
    }

    /// Scores every example of a dataset, preserving example order.
    pub fn predict(&self, dataset: &LabeledDataset) -> Result<PredictionMatrix> {
        if dataset.vocabulary() != &self.vocab {
            return Err(Error::Validation(
                "model and dataset vocabularies differ".into(),
            ));
        }
        let images: Vec<ImageTensor> = dataset
            .examples()
            .iter()
            .map(|e| e.image.clone())
            .collect();
        let scores = self.score_images(&images)?;
        PredictionMatrix::new(dataset.image_ids(), scores, self.vocab.clone())
    }

    /// Serializes parameters (as f32), the embedding table, the given run
    /// config, and the vocabulary.
    pub fn to_checkpoint(&self, run_config: serde_json::Value) -> ModelCheckpoint {
        let mut tensors: Vec<NamedTensor> = self
            .params
            .layout
            .segments()
            .iter()
            .map(|seg| {
                let data: Vec<f32> = self.params.data
                    [seg.offset..seg.offset + seg.len()]
                    .iter()
                    .map(|&v| v as f32)
                    .collect();
                NamedTensor {
                    name: seg.name.clone(),
                    shape: seg.shape.clone(),
                    data,
                }
            })
            .collect();
        let emb = self.embeddings.vectors();
        tensors.push(NamedTensor {
            name: EMBEDDING_TENSOR.into(),
            shape: vec![emb.nrows(), emb.ncols()],
            data: emb.iter().map(|&v| v as f32).collect(),
        });
        ModelCheckpoint {
            tensors,
            config: run_config,
            vocabulary: self.vocab.clone(),
        }
    }

    /// Rebuilds a model from a checkpoint whose config carries a `model`
    /// section.
    pub fn from_checkpoint(ckpt: &ModelCheckpoint) -> Result<Self> {
        let model_value = ckpt.config.get("model").ok_or_else(|| {
            Error::Manifest("checkpoint config has no 'model' section".into())
        })?;
        let config: ModelConfig = serde_json::from_value(model_value.clone())
            .map_err(|e| Error::Manifest(format!("invalid model config: {e}")))?;
        let emb_tensor = ckpt
            .tensor(EMBEDDING_TENSOR)
            .ok_or_else(|| Error::Manifest(format!("missing tensor '{EMBEDDING_TENSOR}'")))?;
        if emb_tensor.shape != [ckpt.vocabulary.len(), config.feature_dim] {
            return Err(Error::Manifest(format!(
                "embedding tensor shape {:?} inconsistent with vocabulary and feature_dim",
                emb_tensor.shape
            )));
        }
        let vectors = Array2::from_shape_vec(
            (ckpt.vocabulary.len(), config.feature_dim),
            emb_tensor.data.iter().map(|&v| f64::from(v)).collect(),
        )
        .expect("validated shape");
        let embeddings = ClassEmbeddingTable::new(vectors);
        let mut model = Model::new(config, ckpt.vocabulary.clone(), embeddings, 0)?;

        let layout = model.params.layout.clone();
        for seg in layout.segments() {
            let tensor = ckpt
                .tensor(&seg.name)
                .ok_or_else(|| Error::Manifest(format!("missing tensor '{}'", seg.name)))?;
            if tensor.shape != seg.shape {
                return Err(Error::Manifest(format!(
                    "tensor '{}' has shape {:?}, expected {:?}",
                    seg.name, tensor.shape, seg.shape
                )));
            }
            for (dst, &src) in model.params.data[seg.offset..seg.offset + seg.len()]
                .iter_mut()
                .zip(&tensor.data)
            {
                *dst = f64::from(src);
            }
        }
        for tensor in &ckpt.tensors {
            if tensor.name != EMBEDDING_TENSOR && layout.by_name(&tensor.name).is_none() {
                return Err(Error::Manifest(format!(
                    "unexpected tensor '{}' in checkpoint",
                    tensor.name
                )));
            }
        }
        Ok(model)
    }

    /// The ids of every parameter segment, in registration order.
    pub fn segment_names(&self) -> Vec<String> {
        self.params
            .layout
            .segments()
            .iter()
            .map(|s| s.name.clone())
            .collect()
    }

}

fn gather_class_rows(q: &Array2<f64>, n: usize, num_classes: usize, class: usize) -> Array2<f64> {
    let mut x = Array2::zeros((n, q.ncols()));
    for e in 0..n {
        x.row_mut(e).assign(&q.row(e * num_classes + class));
    }
    x
}

/// Numerically stable logistic function.
pub fn stable_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::build_vocabulary;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            feature_dim: 8,
            num_decoder_layers: 2,
            num_heads: 2,
            encoder_widths: vec![4, 6, 8],
            input_height: 8,
            input_width: 8,
            ..ModelConfig::default()
        }
    }

    fn tiny_model(head_mode: HeadMode, classes: usize, seed: u64) -> Model {
        let names: Vec<String> = (0..classes).map(|c| format!("class_{c:02}")).collect();
        let vocab = build_vocabulary(names).unwrap();
        let config = ModelConfig {
            head_mode,
            ..tiny_config()
        };
        let emb = ClassEmbeddingTable::synthetic(&vocab, config.feature_dim).unwrap();
        Model::new(config, vocab, emb, seed).unwrap()
    }

    fn random_image(h: usize, w: usize, seed: u64) -> ImageTensor {
        let mut rng = SplitMix64::new(seed);
        let data: Vec<f32> = (0..h * w * 3).map(|_| rng.next_f64() as f32).collect();
        ImageTensor::new(data, h, w).unwrap()
    }

    #[test]
    fn feature_map_shape_contract() {
        let vocab = build_vocabulary(["a", "b"]).unwrap();
        let config = ModelConfig::default();
        let emb = ClassEmbeddingTable::synthetic(&vocab, config.feature_dim).unwrap();
        let model = Model::new(config, vocab, emb, 1).unwrap();
        let fm = model.encode_image(&random_image(64, 64, 9)).unwrap();
        assert_eq!((fm.height, fm.width, fm.dim), (8, 8, 64));
        assert_eq!(fm.tokens.dim(), (64, 64));
    }

    #[test]
    fn zero_image_zero_biases_gives_zero_feature_map() {
        let model = tiny_model(HeadMode::Separate, 3, 5);
        // Biases initialize to zero, so a zero image must stay zero.
        let img = ImageTensor::new(vec![0.0; 8 * 8 * 3], 8, 8).unwrap();
        let fm = model.encode_image(&img).unwrap();
        assert!(fm.tokens.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn input_size_not_divisible_by_8_rejected() {
        let config = ModelConfig {
            input_height: 60,
            input_width: 64,
            ..ModelConfig::default()
        };
        assert!(config.validate().is_err());
    }

    #[test]
    fn wrong_image_size_rejected() {
        let model = tiny_model(HeadMode::Separate, 2, 5);
        let err = model.encode_image(&random_image(16, 8, 1)).unwrap_err();
        assert!(err.to_string().contains("model expects"), "{err}");
    }

    #[test]
    fn logits_length_matches_vocabulary() {
        let model = tiny_model(HeadMode::Separate, 5, 7);
        let fm = model.encode_image(&random_image(8, 8, 2)).unwrap();
        let logits = model.query_forward(&fm).unwrap();
        assert_eq!(logits.len(), 5);
        assert!(logits.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn separate_head_perturbation_leaves_other_logits_unchanged() {
        let mut model = tiny_model(HeadMode::Separate, 4, 11);
        let img = random_image(8, 8, 3);
        let fm = model.encode_image(&img).unwrap();
        let before = model.query_forward(&fm).unwrap();
        let (w_range, b_range) = model.head_param_ranges(2).unwrap();
        for i in w_range.chain(b_range) {
            model.param_data_mut()[i] += 0.7;
        }
        let after = model.query_forward(&fm).unwrap();
        for c in 0..4 {
            if c == 2 {
                assert_ne!(before[c], after[c]);
            } else {
                assert_eq!(before[c], after[c]);
            }
        }
    }

    #[test]
    fn query_permutation_equivariance() {
        // Permuting embedding rows together with head assignment permutes
        // logits identically (up to fp reassociation in softmax sums).
        let classes = 5;
        let model = tiny_model(HeadMode::Separate, classes, 13);
        let img = random_image(8, 8, 4);
        let fm = model.encode_image(&img).unwrap();
        let base = model.query_forward(&fm).unwrap();

        let perm: Vec<usize> = vec![3, 0, 4, 2, 1];
        let mut permuted_vectors = Array2::zeros((classes, model.config().feature_dim));
        for (new_i, &old_i) in perm.iter().enumerate() {
            permuted_vectors
                .row_mut(new_i)
                .assign(&model.embeddings().vectors().row(old_i));
        }
        let names: Vec<String> = (0..classes).map(|c| format!("class_{c:02}")).collect();
        let vocab = build_vocabulary(names).unwrap();
        let mut permuted = Model::new(
            model.config().clone(),
            vocab,
            ClassEmbeddingTable::new(permuted_vectors),
            13,
        )
        .unwrap();
        permuted.params.data.copy_from_slice(&model.params.data);
        for (new_i, &old_i) in perm.iter().enumerate() {
            let (src_w, src_b) = model.head_param_ranges(old_i).unwrap();
            let (dst_w, dst_b) = permuted.head_param_ranges(new_i).unwrap();
            let src: Vec<f64> = model.param_data()[src_w.clone()].to_vec();
            permuted.param_data_mut()[dst_w].copy_from_slice(&src);
            let src_b_val = model.param_data()[src_b.start];
            permuted.param_data_mut()[dst_b.start] = src_b_val;
        }

        let fm2 = permuted.encode_image(&img).unwrap();
        let out = permuted.query_forward(&fm2).unwrap();
        for (new_i, &old_i) in perm.iter().enumerate() {
            assert!(
                (out[new_i] - base[old_i]).abs() <= 1e-9,
                "class {old_i}: {} vs {}",
                out[new_i],
                base[old_i]
            );
        }
    }

    #[test]
    fn zeroed_heads_predict_half_everywhere() {
        let mut model = tiny_model(HeadMode::Separate, 3, 17);
        for c in 0..3 {
            let (w, b) = model.head_param_ranges(c).unwrap();
            for i in w.chain(b) {
                model.param_data_mut()[i] = 0.0;
            }
        }
        let img = random_image(8, 8, 6);
        let scores = model.score_images(&[img]).unwrap();
        assert!(scores.iter().all(|&s| s == 0.5));
    }

    #[test]
    fn scores_strictly_inside_unit_interval() {
        let model = tiny_model(HeadMode::Shared, 4, 19);
        let images: Vec<ImageTensor> = (0..5).map(|i| random_image(8, 8, 100 + i)).collect();
        let scores = model.score_images(&images).unwrap();
        assert!(scores.iter().all(|&s| s > 0.0 && s < 1.0));
    }

    #[test]
    fn batched_prediction_matches_per_example() {
        let model = tiny_model(HeadMode::Separate, 4, 23);
        let images: Vec<ImageTensor> = (0..7).map(|i| random_image(8, 8, 200 + i)).collect();
        let batched = model.score_images(&images).unwrap();
        for (i, img) in images.iter().enumerate() {
            let single = model.score_images(std::slice::from_ref(img)).unwrap();
            for j in 0..4 {
                assert!(
                    (batched[(i, j)] - single[(0, j)]).abs() <= 1e-6,
                    "row {i} col {j}"
                );
            }
        }
    }

    #[test]
    fn checkpoint_round_trip_preserves_fresh_params_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ltmlc");
        let model = tiny_model(HeadMode::Separate, 3, 29);
        let run_config = serde_json::json!({"model": model.config()});
        let ckpt = model.to_checkpoint(run_config);
        crate::core::write_checkpoint(&ckpt, &path).unwrap();
        let back = crate::core::read_checkpoint(&path).unwrap();
        assert_eq!(ckpt, back);
        let restored = Model::from_checkpoint(&back).unwrap();
        // Fresh initialization is f32-exact, so the cycle is bitwise.
        assert_eq!(restored.param_data(), model.param_data());
        assert_eq!(restored.vocabulary(), model.vocabulary());
    }

    #[test]
    fn from_checkpoint_rejects_missing_tensor() {
        let model = tiny_model(HeadMode::Separate, 3, 31);
        let run_config = serde_json::json!({"model": model.config()});
        let mut ckpt = model.to_checkpoint(run_config);
        ckpt.tensors.retain(|t| t.name != "heads.class1.weight");
        let err = Model::from_checkpoint(&ckpt).unwrap_err();
        assert!(err.to_string().contains("heads.class1.weight"), "{err}");
    }

    #[test]
    fn every_parameter_named_exactly_once_in_checkpoint() {
        let model = tiny_model(HeadMode::Shared, 3, 37);
        let ckpt = model.to_checkpoint(serde_json::json!({"model": model.config()}));
        let mut names: Vec<&str> = ckpt.tensors.iter().map(|t| t.name.as_str()).collect();
        let total = names.len();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), total);
        let numel: usize = ckpt
            .tensors
            .iter()
            .filter(|t| t.name != EMBEDDING_TENSOR)
            .map(|t| t.data.len())
            .sum();
        assert_eq!(numel, model.num_params());
    }

    use crate::rng::SplitMix64;
}
