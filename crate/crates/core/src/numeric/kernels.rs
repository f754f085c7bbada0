//! Raw slice kernels behind the 3-D convolution and pooling graph ops.

use super::gemm::{gemm, MatRef};

pub(crate) const KERNEL: usize = 3;
const KERNEL_VOLUME: usize = KERNEL * KERNEL * KERNEL;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub input: [usize; 3],
    pub pad: usize,
}

impl ConvGeometry {
    pub fn output(&self) -> [usize; 3] {
        self.input.map(|d| d + 2 * self.pad + 1 - KERNEL)
    }

    fn in_item(&self) -> usize {
        self.c_in * self.input.iter().product::<usize>()
    }

    fn out_spatial(&self) -> usize {
        self.output().iter().product()
    }

    fn col_rows(&self) -> usize {
        self.c_in * KERNEL_VOLUME
    }
}

/// Input channels are first copied into a zero-padded cube so every kernel
/// tap reads in bounds; this is the padded-cube offset each tap reads for
/// each output voxel.
struct TapTable {
    padded: [usize; 3],
    offsets: Vec<usize>,
}

impl TapTable {
    fn new(geo: &ConvGeometry) -> Self {
        let padded = geo.input.map(|d| d + 2 * geo.pad);
        let [_, yp, zp] = padded;
        let [xo, yo, zo] = geo.output();
        let mut offsets = Vec::with_capacity(KERNEL_VOLUME * xo * yo * zo);
        for kx in 0..KERNEL {
            for ky in 0..KERNEL {
                for kz in 0..KERNEL {
                    for ox in 0..xo {
                        for oy in 0..yo {
                            let base = ((ox + kx) * yp + oy + ky) * zp + kz;
                            offsets.extend(base..base + zo);
                        }
                    }
                }
            }
        }
        Self { padded, offsets }
    }

    fn padded_len(&self) -> usize {
        self.padded.iter().product()
    }

    fn pad_channel(&self, geo: &ConvGeometry, chan: &[f64], dst: &mut [f64]) {
        let [_, yi, zi] = geo.input;
        let [_, yp, zp] = self.padded;
        let p = geo.pad;
        for (x, plane) in chan.chunks_exact(yi * zi).enumerate() {
            for (y, row) in plane.chunks_exact(zi).enumerate() {
                let at = ((x + p) * yp + y + p) * zp + p;
                dst[at..at + zi].copy_from_slice(row);
            }
        }
    }

    fn unpad_add(&self, geo: &ConvGeometry, src: &[f64], chan: &mut [f64]) {
        let [_, yi, zi] = geo.input;
        let [_, yp, zp] = self.padded;
        let p = geo.pad;
        for (x, plane) in chan.chunks_exact_mut(yi * zi).enumerate() {
            for (y, row) in plane.chunks_exact_mut(zi).enumerate() {
                let at = ((x + p) * yp + y + p) * zp + p;
                for (d, s) in row.iter_mut().zip(&src[at..at + zi]) {
                    *d += s;
                }
            }
        }
    }
}

fn im2col(geo: &ConvGeometry, table: &TapTable, scratch: &mut [f64], item: &[f64], cols: &mut [f64]) {
    let s_in: usize = geo.input.iter().product();
    let taps = table.offsets.len();
    // col2im shares the scratch buffer and leaves the border dirty.
    scratch.fill(0.0);
    for ci in 0..geo.c_in {
        table.pad_channel(geo, &item[ci * s_in..(ci + 1) * s_in], scratch);
        let dst = &mut cols[ci * taps..(ci + 1) * taps];
        for (d, &src) in dst.iter_mut().zip(&table.offsets) {
            *d = scratch[src];
        }
    }
}

fn col2im_add(geo: &ConvGeometry, table: &TapTable, scratch: &mut [f64], cols: &[f64], item: &mut [f64]) {
    let s_in: usize = geo.input.iter().product();
    let taps = table.offsets.len();
    for ci in 0..geo.c_in {
        scratch.fill(0.0);
        for (v, &dst) in cols[ci * taps..(ci + 1) * taps].iter().zip(&table.offsets) {
            scratch[dst] += v;
        }
        table.unpad_add(geo, scratch, &mut item[ci * s_in..(ci + 1) * s_in]);
    }
}

pub(crate) fn conv3d_raw(geo: &ConvGeometry, input: &[f64], kernel: &[f64], bias: &[f64]) -> Vec<f64> {
    let s_out = geo.out_spatial();
    let rows = geo.col_rows();
    let out_item = geo.c_out * s_out;
    let mut out = vec![0.0; geo.batch * out_item];
    let mut cols = vec![0.0; rows * s_out];
    let k = MatRef::new(kernel, geo.c_out, rows);
    let table = TapTable::new(geo);
    let mut scratch = vec![0.0; table.padded_len()];
    for b in 0..geo.batch {
        im2col(geo, &table, &mut scratch, &input[b * geo.in_item()..(b + 1) * geo.in_item()], &mut cols);
        let dst = &mut out[b * out_item..(b + 1) * out_item];
        for (co, chunk) in dst.chunks_mut(s_out).enumerate() {
            chunk.fill(bias[co]);
        }
        gemm(1.0, k, MatRef::new(&cols, rows, s_out), 1.0, dst);
    }
    out
}

/// Gradients of a 3-D convolution. Returns `(d_input, d_kernel, d_bias)`;
/// the im2col buffers are recomputed rather than stored.
pub(crate) fn conv3d_backward_raw(
    geo: &ConvGeometry,
    input: &[f64],
    kernel: &[f64],
    d_out: &[f64],
    need_input: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let s_out = geo.out_spatial();
    let rows = geo.col_rows();
    let out_item = geo.c_out * s_out;
    let mut d_kernel = vec![0.0; geo.c_out * rows];
    let mut d_bias = vec![0.0; geo.c_out];
    let mut d_input = need_input.then(|| vec![0.0; geo.batch * geo.in_item()]);
    let mut cols = vec![0.0; rows * s_out];
    let mut d_cols = vec![0.0; rows * s_out];
    let k = MatRef::new(kernel, geo.c_out, rows);
    let table = TapTable::new(geo);
    let mut scratch = vec![0.0; table.padded_len()];
    for b in 0..geo.batch {
        let item = &input[b * geo.in_item()..(b + 1) * geo.in_item()];
        let dy = &d_out[b * out_item..(b + 1) * out_item];
        im2col(geo, &table, &mut scratch, item, &mut cols);
        gemm(
            1.0,
            MatRef::new(dy, geo.c_out, s_out),
            MatRef::new(&cols, rows, s_out).t(),
            1.0,
            &mut d_kernel,
        );
        for (co, chunk) in dy.chunks(s_out).enumerate() {
            d_bias[co] += chunk.iter().sum::<f64>();
        }
        if let Some(dx) = d_input.as_mut() {
            gemm(1.0, k.t(), MatRef::new(dy, geo.c_out, s_out), 0.0, &mut d_cols);
            col2im_add(geo, &table, &mut scratch, &d_cols, &mut dx[b * geo.in_item()..(b + 1) * geo.in_item()]);
        }
    }
    (d_input, d_kernel, d_bias)
}

/// Public entry point for the convolution kernel, used by tests and tools
/// that need the forward pass without a graph.
pub fn conv3d_forward(
    input: &[f64],
    input_shape: [usize; 5],
    kernel: &[f64],
    c_out: usize,
    bias: &[f64],
    pad: usize,
) -> Vec<f64> {
    let [batch, c_in, x, y, z] = input_shape;
    let geo = ConvGeometry {
        batch,
        c_in,
        c_out,
        input: [x, y, z],
        pad,
    };
    conv3d_raw(&geo, input, kernel, bias)
}

/// Max pooling with window 2 and stride 2 over the three trailing axes.
/// Returns the pooled values and the flat input index of each maximum; ties
/// go to the first element in scan order.
pub(crate) fn max_pool3d_raw(input: &[f64], shape: [usize; 5]) -> (Vec<f64>, Vec<usize>) {
    let [b, c, xi, yi, zi] = shape;
    let (xo, yo, zo) = (xi / 2, yi / 2, zi / 2);
    let n_out = b * c * xo * yo * zo;
    let mut out = Vec::with_capacity(n_out);
    let mut arg = Vec::with_capacity(n_out);
    for bc in 0..b * c {
        let base = bc * xi * yi * zi;
        for ox in 0..xo {
            for oy in 0..yo {
                for oz in 0..zo {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_at = usize::MAX;
                    for dx in 0..2 {
                        for dy in 0..2 {
                            for dz in 0..2 {
                                let at = base
                                    + ((2 * ox + dx) * yi + 2 * oy + dy) * zi
                                    + 2 * oz
                                    + dz;
                                if best_at == usize::MAX || input[at] > best {
                                    best = input[at];
                                    best_at = at;
                                }
                            }
                        }
                    }
                    out.push(best);
                    arg.push(best_at);
                }
            }
        }
    }
    (out, arg)
}

pub fn max_pool3d_forward(input: &[f64], shape: [usize; 5]) -> Vec<f64> {
    max_pool3d_raw(input, shape).0
}
