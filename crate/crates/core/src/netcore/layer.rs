use serde::{Deserialize, Serialize};

/// Channel-major activation shape `(c, h, w)`. Dense activations use `(n, 1, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape3 {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape3 {
    pub const fn new(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w }
    }

    pub const fn flat(n: usize) -> Self {
        Self { c: n, h: 1, w: 1 }
    }

    pub const fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    None,
}

/// Stride-1, unpadded convolution or a fully connected layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum LayerKind {
    Dense,
    Conv2d { kh: usize, kw: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    /// Output units (dense) or filters (conv).
    pub out: usize,
    pub activation: Activation,
    pub prunable: bool,
}

impl LayerSpec {
    pub fn dense(out: usize, activation: Activation) -> Self {
        Self { kind: LayerKind::Dense, out, activation, prunable: true }
    }

    pub fn conv(out: usize, kh: usize, kw: usize, activation: Activation) -> Self {
        Self { kind: LayerKind::Conv2d { kh, kw }, out, activation, prunable: true }
    }

    /// Final logits layer: no activation, not prunable.
    pub fn logits(classes: usize) -> Self {
        Self { kind: LayerKind::Dense, out: classes, activation: Activation::None, prunable: false }
    }
}

/// One parameterised layer. Weights are stored output-unit-major, so each
/// filter (or dense row) is a contiguous slice of `fan_in()` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub(crate) spec: LayerSpec,
    pub(crate) in_shape: Shape3,
    pub(crate) out_shape: Shape3,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    /// `true` for weights removed by unstructured pruning; they stay at 0.
    pub(crate) frozen: Option<Vec<bool>>,
}

impl Layer {
    pub(crate) fn output_shape(spec: &LayerSpec, input: Shape3) -> Option<Shape3> {
        match spec.kind {
            LayerKind::Dense => Some(Shape3::flat(spec.out)),
            LayerKind::Conv2d { kh, kw } => {
                if kh == 0 || kw == 0 || kh > input.h || kw > input.w {
                    return None;
                }
                Some(Shape3::new(spec.out, input.h - kh + 1, input.w - kw + 1))
            }
        }
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn in_shape(&self) -> Shape3 {
        self.in_shape
    }

    pub fn out_shape(&self) -> Shape3 {
        self.out_shape
    }

    pub fn units(&self) -> usize {
        self.spec.out
    }

    /// Weights feeding one output unit / filter.
    pub fn fan_in(&self) -> usize {
        match self.spec.kind {
            LayerKind::Dense => self.in_shape.len(),
            LayerKind::Conv2d { kh, kw } => self.in_shape.c * kh * kw,
        }
    }

    pub fn filter(&self, unit: usize) -> &[f64] {
        let f = self.fan_in();
        &self.weights[unit * f..(unit + 1) * f]
    }

    pub fn frozen(&self) -> Option<&[bool]> {
        self.frozen.as_deref()
    }

    pub fn is_frozen(&self, idx: usize) -> bool {
        self.frozen.as_ref().is_some_and(|m| m[idx])
    }

    /// Pre-activations for a batch.
    pub(crate) fn forward_pre(&self, x: &[f64], batch: usize) -> Vec<f64> {
        let n_in = self.in_shape.len();
        let n_out = self.out_shape.len();
        let mut out = vec![0.0; batch * n_out];
        match self.spec.kind {
            LayerKind::Dense => {
                for b in 0..batch {
                    let xb = &x[b * n_in..(b + 1) * n_in];
                    let yb = &mut out[b * n_out..(b + 1) * n_out];
                    for (o, y) in yb.iter_mut().enumerate() {
                        let row = &self.weights[o * n_in..(o + 1) * n_in];
                        *y = dot(row, xb) + self.bias[o];
                    }
                }
            }
            LayerKind::Conv2d { kh, kw } => {
                let Shape3 { c: ic, h: ih, w: iw } = self.in_shape;
                let Shape3 { c: oc, h: oh, w: ow } = self.out_shape;
                let fan = self.fan_in();
                for b in 0..batch {
                    let xb = &x[b * n_in..(b + 1) * n_in];
                    for o in 0..oc {
                        let filt = &self.weights[o * fan..(o + 1) * fan];
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut acc = self.bias[o];
                                for c in 0..ic {
                                    for ky in 0..kh {
                                        let xrow = &xb[c * ih * iw + (oy + ky) * iw + ox..][..kw];
                                        let wrow = &filt[(c * kh + ky) * kw..][..kw];
                                        acc += dot(wrow, xrow);
                                    }
                                }
                                out[b * n_out + (o * oh + oy) * ow + ox] = acc;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Backpropagates `d_pre` (gradient w.r.t. pre-activations), accumulating
    /// into `gw`/`gb`. Returns the input gradient when `need_dx`.
    pub(crate) fn backward(
        &self,
        x: &[f64],
        d_pre: &[f64],
        batch: usize,
        gw: &mut [f64],
        gb: &mut [f64],
        need_dx: bool,
    ) -> Option<Vec<f64>> {
        let n_in = self.in_shape.len();
        let n_out = self.out_shape.len();
        let mut dx = need_dx.then(|| vec![0.0; batch * n_in]);
        match self.spec.kind {
            LayerKind::Dense => {
                for b in 0..batch {
                    let xb = &x[b * n_in..(b + 1) * n_in];
                    let db = &d_pre[b * n_out..(b + 1) * n_out];
                    for (o, &g) in db.iter().enumerate() {
                        if g == 0.0 {
                            continue;
                        }
                        gb[o] += g;
                        axpy(g, xb, &mut gw[o * n_in..(o + 1) * n_in]);
                        if let Some(dx) = dx.as_mut() {
                            let row = &self.weights[o * n_in..(o + 1) * n_in];
                            axpy(g, row, &mut dx[b * n_in..(b + 1) * n_in]);
                        }
                    }
                }
            }
            LayerKind::Conv2d { kh, kw } => {
                let Shape3 { c: ic, h: ih, w: iw } = self.in_shape;
                let Shape3 { c: oc, h: oh, w: ow } = self.out_shape;
                let fan = self.fan_in();
                for b in 0..batch {
                    let xb = &x[b * n_in..(b + 1) * n_in];
                    for o in 0..oc {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let g = d_pre[b * n_out + (o * oh + oy) * ow + ox];
                                if g == 0.0 {
                                    continue;
                                }
                                gb[o] += g;
                                for c in 0..ic {
                                    for ky in 0..kh {
                                        let xoff = b * n_in + c * ih * iw + (oy + ky) * iw + ox;
                                        let woff = o * fan + (c * kh + ky) * kw;
                                        axpy(g, &xb[xoff - b * n_in..][..kw], &mut gw[woff..][..kw]);
                                        if let Some(dx) = dx.as_mut() {
                                            axpy(g, &self.weights[woff..][..kw], &mut dx[xoff..][..kw]);
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    // Four independent accumulators so the loop vectorises.
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in chunks * 4..n {
        tail += a[j] * b[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
