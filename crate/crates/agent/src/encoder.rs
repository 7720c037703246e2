//! Multi-grained spatial-temporal graph encoder.
//!
//! Each grain (recent/daily/weekly) passes through a stack of ST components:
//! temporal attention reweights the time axis, spatial attention modulates a
//! Chebyshev graph convolution over the scaled Laplacian, and a temporal
//! convolution compresses along time. Branch outputs are flattened,
//! concatenated, and compressed by one fully-connected ReLU layer.

use rand::Rng;

use feederlab_grid::graph::GraphMatrices;
use feederlab_grid::linalg::Mat;
use feederlab_tensor::{ParamId, ParamStore, Tape, Tensor, TensorError, Var};

use crate::env::SegmentSet;

#[derive(Debug, Clone, Copy)]
pub struct EncoderConfig {
    /// Chebyshev polynomial order K.
    pub chebyshev_order: usize,
    /// Channels per ST component.
    pub channels: usize,
    /// Stacked ST components per grain.
    pub n_components: usize,
    /// Temporal convolution kernel width (odd).
    pub temporal_kernel: usize,
    /// Output feature length D_y.
    pub output_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            chebyshev_order: 3,
            channels: 16,
            n_components: 3,
            temporal_kernel: 3,
            output_dim: 64,
        }
    }
}

/// Learnable parameters of one ST component (ids into the owning store).
#[derive(Debug, Clone)]
pub struct StComponent {
    pub w_t: ParamId,
    pub w_ft: ParamId,
    pub w_f: ParamId,
    pub v_s: ParamId,
    pub b_s: ParamId,
    pub u_n: ParamId,
    pub u_fn: ParamId,
    pub u_f: ParamId,
    pub v_e: ParamId,
    pub b_e: ParamId,
    /// Chebyshev coefficient matrices, one [F_in, C] per polynomial order.
    pub theta: Vec<ParamId>,
    pub kernel: ParamId,
    pub kernel_bias: ParamId,
    f_in: usize,
    n: usize,
    t: usize,
    channels: usize,
}

impl StComponent {
    #[allow(clippy::too_many_arguments)]
    fn new(
        store: &mut ParamStore,
        prefix: &str,
        f_in: usize,
        n: usize,
        t: usize,
        config: &EncoderConfig,
        rng: &mut impl Rng,
    ) -> Self {
        let c = config.channels;
        let name = |suffix: &str| format!("{prefix}.{suffix}");
        Self {
            w_t: store.add_uniform(name("spatial.w_t"), &[t, 1], t, rng),
            w_ft: store.add_uniform(name("spatial.w_ft"), &[f_in, t], f_in, rng),
            w_f: store.add_uniform(name("spatial.w_f"), &[1, f_in], f_in, rng),
            v_s: store.add_uniform(name("spatial.v_s"), &[n, n], n, rng),
            b_s: store.add_uniform(name("spatial.b_s"), &[n, n], n, rng),
            u_n: store.add_uniform(name("temporal.u_n"), &[1, n], n, rng),
            u_fn: store.add_uniform(name("temporal.u_fn"), &[f_in, n], f_in, rng),
            u_f: store.add_uniform(name("temporal.u_f"), &[1, f_in], f_in, rng),
            v_e: store.add_uniform(name("temporal.v_e"), &[t, t], t, rng),
            b_e: store.add_uniform(name("temporal.b_e"), &[t, t], t, rng),
            theta: (0..config.chebyshev_order)
                .map(|k| store.add_uniform(name(&format!("cheb.theta{k}")), &[f_in, c], f_in, rng))
                .collect(),
            kernel: store.add_uniform(
                name("tconv.kernel"),
                &[config.temporal_kernel, c, c],
                config.temporal_kernel * c,
                rng,
            ),
            kernel_bias: store.add_uniform(
                name("tconv.bias"),
                &[c],
                config.temporal_kernel * c,
                rng,
            ),
            f_in,
            n,
            t,
            channels: c,
        }
    }

    /// Row-stochastic spatial attention from a [F, N, T] segment.
    pub fn spatial_attention(&self, tape: &mut Tape, x: Var) -> Result<Var, TensorError> {
        let (f, n, t) = (self.f_in, self.n, self.t);
        // (X W_T)^T: contract the temporal axis -> [N, F]
        let x_fn_t = tape.reshape(x, &[f * n, t])?;
        let w_t = tape.param(self.w_t);
        let xw = tape.matmul(x_fn_t, w_t)?; // [F*N, 1]
        let xw = tape.reshape(xw, &[f, n])?;
        let lhs = tape.transpose(xw)?; // [N, F]
        // lhs W_FT -> [N, T]
        let w_ft = tape.param(self.w_ft);
        let left = tape.matmul(lhs, w_ft)?;
        // (W_F X)^T: contract the feature axis -> [T, N]
        let x_f_nt = tape.reshape(x, &[f, n * t])?;
        let w_f = tape.param(self.w_f);
        let wfx = tape.matmul(w_f, x_f_nt)?; // [1, N*T]
        let wfx = tape.reshape(wfx, &[n, t])?;
        let right = tape.transpose(wfx)?; // [T, N]
        let pre = tape.matmul(left, right)?; // [N, N]
        let b_s = tape.param(self.b_s);
        let pre = tape.add(pre, b_s)?;
        let sig = tape.sigmoid(pre);
        let v_s = tape.param(self.v_s);
        let scored = tape.mul(v_s, sig)?;
        Ok(tape.softmax_last_axis(scored))
    }

    /// Row-stochastic temporal attention and the reweighted segment X E.
    pub fn temporal_attention(&self, tape: &mut Tape, x: Var) -> Result<(Var, Var), TensorError> {
        let (f, n, t) = (self.f_in, self.n, self.t);
        // (U_N X_tatt)^T: contract the node axis -> [T, F]
        let x_nft = tape.permute3(x, [1, 0, 2])?; // [N, F, T]
        let x_n_ft = tape.reshape(x_nft, &[n, f * t])?;
        let u_n = tape.param(self.u_n);
        let unx = tape.matmul(u_n, x_n_ft)?; // [1, F*T]
        let unx = tape.reshape(unx, &[f, t])?;
        let lhs = tape.transpose(unx)?; // [T, F]
        // lhs U_FN -> [T, N]
        let u_fn = tape.param(self.u_fn);
        let left = tape.matmul(lhs, u_fn)?;
        // U_F X -> [N, T]
        let x_f_nt = tape.reshape(x, &[f, n * t])?;
        let u_f = tape.param(self.u_f);
        let ufx = tape.matmul(u_f, x_f_nt)?;
        let right = tape.reshape(ufx, &[n, t])?;
        let pre = tape.matmul(left, right)?; // [T, T]
        let b_e = tape.param(self.b_e);
        let pre = tape.add(pre, b_e)?;
        let sig = tape.sigmoid(pre);
        let v_e = tape.param(self.v_e);
        let scored = tape.mul(v_e, sig)?;
        let e = tape.softmax_last_axis(scored);

        // X~ = X E over the temporal axis.
        let x_flat = tape.reshape(x, &[f * n, t])?;
        let xe = tape.matmul(x_flat, e)?;
        let x_tilde = tape.reshape(xe, &[f, n, t])?;
        Ok((e, x_tilde))
    }

    /// Attention-modulated Chebyshev graph convolution. `cheb` holds the
    /// precomputed T_k of the scaled Laplacian; output is ReLU-activated
    /// [N, T, C].
    pub fn chebyshev_graph_conv(
        &self,
        tape: &mut Tape,
        x_tilde: Var,
        spatial: Var,
        cheb: &[Tensor],
    ) -> Result<Var, TensorError> {
        assert!(!cheb.is_empty(), "Chebyshev order must be at least 1");
        let (f, n, t) = (self.f_in, self.n, self.t);
        let c = self.channels;
        let x_ntf = tape.permute3(x_tilde, [1, 2, 0])?; // [N, T, F]
        let x_n_tf = tape.reshape(x_ntf, &[n, t * f])?;
        let mut acc: Option<Var> = None;
        for (k, t_k) in cheb.iter().enumerate() {
            let t_k_const = tape.constant(t_k.clone());
            let a_k = tape.mul(t_k_const, spatial)?; // T_k o S
            let gathered = tape.matmul(a_k, x_n_tf)?; // [N, T*F]
            let gathered = tape.reshape(gathered, &[n * t, f])?;
            let theta = tape.param(self.theta[k]);
            let term = tape.matmul(gathered, theta)?; // [N*T, C]
            acc = Some(match acc {
                None => term,
                Some(prev) => tape.add(prev, term)?,
            });
        }
        let summed = acc.expect("at least one polynomial term");
        let activated = tape.relu(summed);
        tape.reshape(activated, &[n, t, c])
    }

    /// Temporal convolution over the graph-conv output, ReLU-activated,
    /// returned in segment layout [C, N, T].
    pub fn temporal_conv(&self, tape: &mut Tape, h: Var) -> Result<Var, TensorError> {
        let h_tnc = tape.permute3(h, [1, 0, 2])?; // [T, N, C]
        let kernel = tape.param(self.kernel);
        let bias = tape.param(self.kernel_bias);
        let conv = tape.conv1d_time(h_tnc, kernel, bias)?;
        let activated = tape.relu(conv);
        tape.permute3(activated, [2, 1, 0]) // [C, N, T]
    }

    /// Full ST component: attention, graph convolution, temporal convolution.
    pub fn forward(&self, tape: &mut Tape, x: Var, cheb: &[Tensor]) -> Result<Var, TensorError> {
        let (_e, x_tilde) = self.temporal_attention(tape, x)?;
        let s = self.spatial_attention(tape, x_tilde)?;
        let h = self.chebyshev_graph_conv(tape, x_tilde, s, cheb)?;
        self.temporal_conv(tape, h)
    }
}

/// One grain's stack of ST components.
#[derive(Debug, Clone)]
struct BranchStack {
    components: Vec<StComponent>,
    t: usize,
}

/// The full encoder: three grains, stacked ST components, fusion layer.
pub struct MgAstgcn {
    pub store: ParamStore,
    config: EncoderConfig,
    branches: Vec<BranchStack>,
    fc_w: ParamId,
    fc_b: ParamId,
    cheb: Vec<Tensor>,
    n: usize,
    feature_dim: usize,
}

impl MgAstgcn {
    pub fn new(
        matrices: &GraphMatrices,
        feature_dim: usize,
        segment_lengths: (usize, usize, usize),
        config: EncoderConfig,
        rng: &mut impl Rng,
    ) -> Self {
        let n = matrices.laplacian_scaled.rows();
        let cheb = chebyshev_basis(&matrices.laplacian_scaled, config.chebyshev_order);
        let mut store = ParamStore::new();
        let mut branches = Vec::new();
        for (label, t) in [
            ("recent", segment_lengths.0),
            ("daily", segment_lengths.1),
            ("weekly", segment_lengths.2),
        ] {
            let mut components = Vec::new();
            for m in 0..config.n_components {
                let f_in = if m == 0 { feature_dim } else { config.channels };
                components.push(StComponent::new(
                    &mut store,
                    &format!("{label}.st{m}"),
                    f_in,
                    n,
                    t,
                    &config,
                    rng,
                ));
            }
            branches.push(BranchStack { components, t });
        }
        let fused_dim: usize = branches
            .iter()
            .map(|b| config.channels * n * b.t)
            .sum();
        let fc_w = store.add_uniform("fusion.weight", &[fused_dim, config.output_dim], fused_dim, rng);
        let fc_b = store.add_uniform("fusion.bias", &[config.output_dim], fused_dim, rng);
        Self {
            store,
            config,
            branches,
            fc_w,
            fc_b,
            cheb,
            n,
            feature_dim,
        }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim
    }

    pub fn chebyshev_basis(&self) -> &[Tensor] {
        &self.cheb
    }

    pub fn component(&self, branch: usize, index: usize) -> &StComponent {
        &self.branches[branch].components[index]
    }

    /// Differentiable forward pass to the fused feature vector [1, D_y].
    pub fn forward(&self, tape: &mut Tape, segments: &SegmentSet) -> Result<Var, TensorError> {
        let inputs = [&segments.recent, &segments.daily, &segments.weekly];
        let mut flats = Vec::with_capacity(3);
        for (branch, segment) in self.branches.iter().zip(inputs) {
            debug_assert_eq!(segment.shape(), &[self.feature_dim, self.n, branch.t]);
            let mut x = tape.constant((*segment).clone());
            for comp in &branch.components {
                x = comp.forward(tape, x, &self.cheb)?;
            }
            let len = tape.value(x).len();
            flats.push(tape.reshape(x, &[1, len])?);
        }
        let fused = tape.concat(&flats, 1)?;
        let w = tape.param(self.fc_w);
        let b = tape.param(self.fc_b);
        let y = tape.matmul(fused, w)?;
        let y = tape.add_row_broadcast(y, b)?;
        Ok(tape.relu(y))
    }

    /// Inference-only encoding.
    pub fn encode(&self, segments: &SegmentSet) -> Vec<f64> {
        let mut tape = Tape::new(&self.store);
        let y = self
            .forward(&mut tape, segments)
            .expect("segment shapes match the encoder");
        tape.value(y).data().to_vec()
    }
}

/// T_0..T_{K-1} of the scaled Laplacian via the Chebyshev recursion
/// T_k = 2 L T_{k-1} - T_{k-2}.
pub fn chebyshev_basis(l_scaled: &Mat, order: usize) -> Vec<Tensor> {
    assert!(order >= 1, "Chebyshev order must be at least 1");
    let n = l_scaled.rows();
    let mut mats: Vec<Mat> = vec![Mat::identity(n)];
    if order > 1 {
        mats.push(l_scaled.clone());
    }
    while mats.len() < order {
        let k = mats.len();
        let next = l_scaled.matmul(&mats[k - 1]).scale(2.0).sub(&mats[k - 2]);
        mats.push(next);
    }
    mats.iter()
        .map(|m| Tensor::new(vec![n, n], m.data().to_vec()).expect("square matrix"))
        .collect()
}

/// MLP encoder for the ablation: consumes only the newest snapshot.
pub struct MlpEncoder {
    pub store: ParamStore,
    layers: Vec<(ParamId, ParamId)>,
    input_dim: usize,
    output_dim: usize,
}

impl MlpEncoder {
    /// Hidden width chosen so the total parameter count approximately
    /// matches `target_params` (two hidden layers).
    pub fn matched(
        input_dim: usize,
        output_dim: usize,
        target_params: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let b = (input_dim + output_dim + 2) as f64;
        let c = (target_params as f64 - output_dim as f64).max(1.0);
        let width = (((b * b + 4.0 * c).sqrt() - b) / 2.0).floor().max(8.0) as usize;
        Self::with_width(input_dim, output_dim, width, rng)
    }

    pub fn with_width(
        input_dim: usize,
        output_dim: usize,
        width: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut store = ParamStore::new();
        let dims = [input_dim, width, width, output_dim];
        let mut layers = Vec::new();
        for i in 0..dims.len() - 1 {
            let w = store.add_uniform(format!("mlp.w{i}"), &[dims[i], dims[i + 1]], dims[i], rng);
            let b = store.add_uniform(format!("mlp.b{i}"), &[dims[i + 1]], dims[i], rng);
            layers.push((w, b));
        }
        Self {
            store,
            layers,
            input_dim,
            output_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// Newest snapshot of the recent segment, flattened bus-major.
    fn snapshot_input(&self, segments: &SegmentSet) -> Tensor {
        let shape = segments.recent.shape().to_vec();
        let (f, n, t) = (shape[0], shape[1], shape[2]);
        let mut data = vec![0.0; n * f];
        for bus in 0..n {
            for feat in 0..f {
                data[bus * f + feat] = segments.recent.data()[(feat * n + bus) * t + (t - 1)];
            }
        }
        debug_assert_eq!(n * f, self.input_dim);
        Tensor::new(vec![1, n * f], data).expect("snapshot shape")
    }

    pub fn forward(&self, tape: &mut Tape, segments: &SegmentSet) -> Result<Var, TensorError> {
        let mut x = tape.constant(self.snapshot_input(segments));
        for (i, (w, b)) in self.layers.iter().enumerate() {
            let wv = tape.param(*w);
            let bv = tape.param(*b);
            x = tape.matmul(x, wv)?;
            x = tape.add_row_broadcast(x, bv)?;
            if i + 1 < self.layers.len() {
                x = tape.relu(x);
            }
        }
        Ok(tape.relu(x))
    }

    pub fn encode(&self, segments: &SegmentSet) -> Vec<f64> {
        let mut tape = Tape::new(&self.store);
        let y = self
            .forward(&mut tape, segments)
            .expect("segment shapes match the encoder");
        tape.value(y).data().to_vec()
    }
}

/// The encoder behind the environment state.
pub enum Encoder {
    MgAstgcn(MgAstgcn),
    Mlp(MlpEncoder),
    /// Raw state only.
    None,
}

impl Encoder {
    pub fn output_dim(&self) -> usize {
        match self {
            Encoder::MgAstgcn(e) => e.output_dim(),
            Encoder::Mlp(e) => e.output_dim(),
            Encoder::None => 0,
        }
    }

    pub fn encode(&self, segments: &SegmentSet) -> Vec<f64> {
        match self {
            Encoder::MgAstgcn(e) => e.encode(segments),
            Encoder::Mlp(e) => e.encode(segments),
            Encoder::None => Vec::new(),
        }
    }

    pub fn store(&self) -> Option<&ParamStore> {
        match self {
            Encoder::MgAstgcn(e) => Some(&e.store),
            Encoder::Mlp(e) => Some(&e.store),
            Encoder::None => None,
        }
    }

    /// Differentiable forward; `None` when the encoder has no parameters.
    pub fn forward<'t>(
        &self,
        tape: &mut Tape<'t>,
        segments: &SegmentSet,
    ) -> Result<Option<Var>, TensorError> {
        match self {
            Encoder::MgAstgcn(e) => e.forward(tape, segments).map(Some),
            Encoder::Mlp(e) => e.forward(tape, segments).map(Some),
            Encoder::None => Ok(None),
        }
    }
}
