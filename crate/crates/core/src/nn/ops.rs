//! Layer kernels on raw `[h, w, c]` buffers.

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in chunks * 4..a.len() {
        tail += a[j] * b[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yy, xx) in y.iter_mut().zip(x) {
        *yy += alpha * xx;
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub oh: usize,
    pub ow: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    /// Input coordinate feeding output `(o, k)` along one axis, if inside.
    #[inline]
    pub fn source(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }

    /// Visits every `(output_index, input_index, weight_row)` triple, where
    /// `weight_row` indexes the `[kernel, kernel, cin]` part of the weights
    /// (multiply by `cout` for the row start) and indices address pixels.
    #[inline]
    pub fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        for oy in 0..self.oh {
            for ox in 0..self.ow {
                let opix = oy * self.ow + ox;
                for ky in 0..self.kernel {
                    let Some(iy) = self.source(oy, ky, self.h) else {
                        continue;
                    };
                    for kx in 0..self.kernel {
                        let Some(ix) = self.source(ox, kx, self.w) else {
                            continue;
                        };
                        f(opix, iy * self.w + ix, ky * self.kernel + kx);
                    }
                }
            }
        }
    }
}

pub(crate) fn conv_forward(g: &ConvGeom, x: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let (cin, cout) = (g.cin, g.cout);
    let mut out = vec![0.0; g.oh * g.ow * cout];
    for px in out.chunks_exact_mut(cout) {
        px.copy_from_slice(bias);
    }
    g.for_each_tap(|opix, ipix, tap| {
        let o = &mut out[opix * cout..(opix + 1) * cout];
        let xs = &x[ipix * cin..(ipix + 1) * cin];
        let wbase = tap * cin * cout;
        for (ci, &xv) in xs.iter().enumerate() {
            if xv != 0.0 {
                axpy(xv, &weight[wbase + ci * cout..wbase + (ci + 1) * cout], o);
            }
        }
    });
    out
}

/// Accumulates weight/bias gradients and, if requested, the input gradient.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    g: &ConvGeom,
    x: &[f64],
    weight: &[f64],
    d_out: &[f64],
    d_weight: &mut [f64],
    d_bias: &mut [f64],
    mut d_input: Option<&mut [f64]>,
) {
    let (cin, cout) = (g.cin, g.cout);
    for gpx in d_out.chunks_exact(cout) {
        axpy(1.0, gpx, d_bias);
    }
    g.for_each_tap(|opix, ipix, tap| {
        let go = &d_out[opix * cout..(opix + 1) * cout];
        let xs = &x[ipix * cin..(ipix + 1) * cin];
        let wbase = tap * cin * cout;
        for (ci, &xv) in xs.iter().enumerate() {
            let row = wbase + ci * cout..wbase + (ci + 1) * cout;
            if xv != 0.0 {
                axpy(xv, go, &mut d_weight[row.clone()]);
            }
            if let Some(dx) = d_input.as_deref_mut() {
                dx[ipix * cin + ci] += dot(go, &weight[row]);
            }
        }
    });
}

pub(crate) fn fc_forward(x: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let outputs = bias.len();
    let mut out = bias.to_vec();
    for (i, &xv) in x.iter().enumerate() {
        if xv != 0.0 {
            axpy(xv, &weight[i * outputs..(i + 1) * outputs], &mut out);
        }
    }
    out
}

pub(crate) fn fc_backward(
    x: &[f64],
    weight: &[f64],
    d_out: &[f64],
    d_weight: &mut [f64],
    d_bias: &mut [f64],
    d_input: Option<&mut [f64]>,
) {
    let outputs = d_out.len();
    axpy(1.0, d_out, d_bias);
    for (i, &xv) in x.iter().enumerate() {
        axpy(xv, d_out, &mut d_weight[i * outputs..(i + 1) * outputs]);
    }
    if let Some(dx) = d_input {
        for (i, d) in dx.iter_mut().enumerate() {
            *d += dot(&weight[i * outputs..(i + 1) * outputs], d_out);
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct PoolGeom {
    pub w: usize,
    pub c: usize,
    pub oh: usize,
    pub ow: usize,
    pub size: usize,
    pub stride: usize,
}

impl PoolGeom {
    /// Input flat indices of the window feeding output `(oy, ox, ch)`, in
    /// row-major scan order.
    pub fn window(&self, oy: usize, ox: usize, ch: usize) -> impl Iterator<Item = usize> + '_ {
        let (y0, x0) = (oy * self.stride, ox * self.stride);
        (0..self.size).flat_map(move |dy| {
            (0..self.size).map(move |dx| ((y0 + dy) * self.w + x0 + dx) * self.c + ch)
        })
    }
}

/// Max pooling; ties go to the first cell in row-major scan order.
pub(crate) fn maxpool_forward(g: &PoolGeom, x: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut out = Vec::with_capacity(g.oh * g.ow * g.c);
    let mut argmax = Vec::with_capacity(g.oh * g.ow * g.c);
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            for ch in 0..g.c {
                let mut best = usize::MAX;
                for idx in g.window(oy, ox, ch) {
                    if best == usize::MAX || x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    (out, argmax)
}

pub(crate) fn avgpool_forward(g: &PoolGeom, x: &[f64]) -> Vec<f64> {
    let n = (g.size * g.size) as f64;
    let mut out = Vec::with_capacity(g.oh * g.ow * g.c);
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            for ch in 0..g.c {
                out.push(g.window(oy, ox, ch).map(|i| x[i]).sum::<f64>() / n);
            }
        }
    }
    out
}

/// Spreads each output value equally over its window (adjoint of average
/// pooling up to the `1 / n` factor, which the caller chooses).
pub(crate) fn avgpool_spread(g: &PoolGeom, d_out: &[f64], d_input: &mut [f64]) {
    let n = (g.size * g.size) as f64;
    let mut o = 0;
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            for ch in 0..g.c {
                let share = d_out[o] / n;
                for i in g.window(oy, ox, ch) {
                    d_input[i] += share;
                }
                o += 1;
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `W^T d` for a convolution: the input-side adjoint of `conv_forward`
/// without the bias.
pub(crate) fn conv_input_adjoint(g: &ConvGeom, weight: &[f64], d_out: &[f64]) -> Vec<f64> {
    let (cin, cout) = (g.cin, g.cout);
    let mut dx = vec![0.0; g.h * g.w * cin];
    g.for_each_tap(|opix, ipix, tap| {
        let go = &d_out[opix * cout..(opix + 1) * cout];
        if go.iter().all(|&v| v == 0.0) {
            return;
        }
        let wbase = tap * cin * cout;
        for ci in 0..cin {
            dx[ipix * cin + ci] += dot(go, &weight[wbase + ci * cout..wbase + (ci + 1) * cout]);
        }
    });
    dx
}

pub(crate) fn fc_input_adjoint(inputs: usize, weight: &[f64], d_out: &[f64]) -> Vec<f64> {
    let outputs = d_out.len();
    (0..inputs)
        .map(|i| dot(&weight[i * outputs..(i + 1) * outputs], d_out))
        .collect()
}
