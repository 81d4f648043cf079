//! Differentiable forward pass: parameters bound to a tape, the encoder
//! stack, and the three loss terms.

use crate::tensor::{concat_lastdim, Elem, Tape, Tensor, Var};

use super::{LinearIds, ModelError, ModelState, NormIds, COS_EPS, LN_EPS};

/// A model's parameters registered on a tape as gradient leaves, in the same
/// order as [`ModelState::tensors`]. All network methods hang off this.
pub struct BoundModel<'m, 't> {
    state: &'m ModelState,
    tape: &'t Tape,
    vars: Vec<Var<'t>>,
}

/// The tape outputs of one branch (clean or noisy) on a window batch.
pub struct Branch<'t> {
    /// Patched reconstruction, `[B, M, P*C]`.
    pub reconstruction: Var<'t>,
    /// Projection-head output, `[B, M, proj_dim]`.
    pub projection: Var<'t>,
    /// The normalized, patched input without positional offsets: what the
    /// reconstruction is compared against. A constant; gradients stop here.
    pub target: Var<'t>,
}

/// Composite objective and its logged components.
pub struct LossTerms<'t> {
    pub total: Var<'t>,
    pub reconstruction: Var<'t>,
    pub denoise: Var<'t>,
    pub contrast: Var<'t>,
}

impl<'m, 't> BoundModel<'m, 't> {
    pub fn bind(state: &'m ModelState, tape: &'t Tape) -> BoundModel<'m, 't> {
        let vars = state.tensors().iter().map(|t| tape.leaf(t)).collect();
        BoundModel { state, tape, vars }
    }

    pub fn state(&self) -> &'m ModelState {
        self.state
    }

    fn p(&self, id: usize) -> Var<'t> {
        self.vars[id]
    }

    fn linear(&self, x: Var<'t>, ids: LinearIds) -> Var<'t> {
        x.matmul(self.p(ids.w)).broadcast_add(self.p(ids.b))
    }

    fn norm(&self, x: Var<'t>, ids: NormIds) -> Var<'t> {
        x.layer_norm(self.p(ids.gain), self.p(ids.bias), LN_EPS)
    }

    /// Patch embedding: prepared input `[B, M, P*C]` to tokens `[B, M, D]`.
    pub fn extract(&self, prepared: Var<'t>) -> Var<'t> {
        let lay = self.state.layout();
        let h = self.norm(prepared, lay.ln_pre);
        let h = self.linear(h, lay.value_embed);
        self.norm(h, lay.ln_post)
    }

    /// Per-head value matrices of one layer, each `[M, head_dim]`. Built
    /// from parameters alone: the input never enters the value path.
    pub fn value_matrices(&self, layer: usize) -> Vec<Var<'t>> {
        self.state.layout().layers[layer]
            .heads
            .iter()
            .map(|h| self.p(h.select).matmul(self.p(h.embed)))
            .collect()
    }

    /// Per-head attention outputs of one layer, each `[B, M, head_dim]`:
    /// query/key scores over the input tokens, softmax rows, applied to the
    /// learned value matrix.
    pub fn attention_heads(&self, tokens: Var<'t>, layer: usize) -> Vec<Var<'t>> {
        let lay = &self.state.layout().layers[layer];
        let d = self.state.config().head_dim();
        let scale = (1.0 / (d as f64).sqrt()) as Elem;
        let q_all = tokens.matmul(self.p(lay.w_q));
        let k_all = tokens.matmul(self.p(lay.w_k));
        self.value_matrices(layer)
            .into_iter()
            .enumerate()
            .map(|(k, value)| {
                let q = q_all.slice_lastdim(k * d, d);
                let key = k_all.slice_lastdim(k * d, d);
                let scores = q.matmul(key.transpose_last2()).scale(scale);
                scores.softmax_lastdim().matmul(value)
            })
            .collect()
    }

    /// Multi-head attention merged back to `[B, M, D]`.
    pub fn attention(&self, tokens: Var<'t>, layer: usize) -> Var<'t> {
        let z = concat_lastdim(&self.attention_heads(tokens, layer));
        self.linear(z, self.state.layout().layers[layer].merge)
    }

    /// One encoder layer: attention and feed-forward, each behind a residual
    /// connection and layer norm.
    pub fn encoder_layer(&self, tokens: Var<'t>, layer: usize) -> Var<'t> {
        let lay = &self.state.layout().layers[layer];
        let z = self.attention(tokens, layer);
        let after_attn = self.norm(tokens.add(z), lay.ln_attn);
        let f = self.linear(after_attn, lay.ffn_in).relu();
        let f = self.linear(f, lay.ffn_out);
        self.norm(after_attn.add(f), lay.ln_ffn)
    }

    /// The full encoder stack.
    pub fn encode(&self, tokens: Var<'t>) -> Var<'t> {
        (0..self.state.config().layers).fold(tokens, |n, i| self.encoder_layer(n, i))
    }

    /// Per-patch linear back to `[B, M, P*C]`.
    pub fn reconstruct(&self, tokens: Var<'t>) -> Var<'t> {
        self.linear(tokens, self.state.layout().rec)
    }

    /// Projection head for the contrastive objective, `[B, M, proj_dim]`.
    pub fn project(&self, tokens: Var<'t>) -> Var<'t> {
        let h = self.linear(tokens, self.state.layout().proj_in).relu();
        self.linear(h, self.state.layout().proj_out)
    }

    /// Run one branch on a raw window batch `[B, T, C]` (or `[T, C]`).
    pub fn branch(&self, x_raw: &Tensor) -> Result<Branch<'t>, ModelError> {
        let prepared = self.state.prepare(x_raw)?;
        let target = self.state.target(x_raw)?;
        let tokens = self.encode(self.extract(self.tape.constant(&prepared)));
        Ok(Branch {
            reconstruction: self.reconstruct(tokens),
            projection: self.project(tokens),
            target: self.tape.constant(&target),
        })
    }

    /// Both branches and the composite objective on one batch: clean
    /// reconstruction, noisy-branch reconstruction against the clean target,
    /// minus `beta` times the projection contrast.
    pub fn losses(
        &self,
        x_raw: &Tensor,
        x_noisy: &Tensor,
        beta: Elem,
    ) -> Result<LossTerms<'t>, ModelError> {
        let clean = self.branch(x_raw)?;
        let noisy = self.branch(x_noisy)?;
        let reconstruction = dissimilarity(clean.reconstruction, clean.target);
        let denoise = dissimilarity(noisy.reconstruction, clean.target);
        let contrast = contrast_loss(clean.projection, noisy.projection);
        let total = reconstruction.add(denoise).add(contrast.scale(-beta));
        Ok(LossTerms { total, reconstruction, denoise, contrast })
    }

    /// Gradients per parameter after a backward pass, aligned with
    /// [`ModelState::tensors`]. Parameters the loss never touched get zeros.
    pub fn grads(&self) -> Vec<Tensor> {
        self.vars
            .iter()
            .map(|&v| self.tape.grad(v).unwrap_or_else(|| Tensor::zeros(v.shape())))
            .collect()
    }
}

/// Reconstruction distance: mean squared error plus the mean over patches of
/// `1 - cosine` between patch vectors.
pub fn dissimilarity<'t>(a: Var<'t>, b: Var<'t>) -> Var<'t> {
    let mse = a.mse(b);
    let sim = a.cosine_lastdim(b, COS_EPS).scale(-1.0).add_scalar(1.0).mean_all();
    mse.add(sim)
}

/// Contrastive distance between the two projections, each direction seeing
/// the other side as a constant: pulling the branches together without
/// letting either collapse toward the other's gradient.
pub fn contrast_loss<'t>(h_plus: Var<'t>, h_minus: Var<'t>) -> Var<'t> {
    dissimilarity(h_plus, h_minus.detach()).add(dissimilarity(h_minus, h_plus.detach()))
}

impl ModelState {
    /// Reconstruction target `[B, M, P*C]`: normalized and patched, without
    /// positional offsets.
    pub fn target(&self, x: &Tensor) -> Result<Tensor, ModelError> {
        self.check_window(x)?;
        let batched = super::promote_batch(x, self.config().window_len, self.config().channels);
        let normalized = super::instance_normalize(&batched);
        Ok(super::patch(&normalized.values, self.config().patch_len))
    }
}
