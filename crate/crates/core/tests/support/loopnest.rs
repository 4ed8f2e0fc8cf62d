//! Loop-nest MAC and weight counters that step through every output
//! position, channel and kernel tap. Shared by the oracle tests and the
//! acceptance suite.

use edgenas_core::ir::{LayerSpec, TensorShape};

/// Output positions along one axis under "same" padding, by stepping.
pub fn positions(extent: u32, stride: u32) -> u64 {
    (0..extent).step_by(stride as usize).count() as u64
}

/// (macs, params) of a full convolution, one multiply at a time.
pub fn conv_loops(h: u32, w: u32, cin: u32, cout: u32, k: u32, s: u32) -> (u64, u64) {
    let mut macs = 0u64;
    for _oy in 0..positions(h, s) {
        for _ox in 0..positions(w, s) {
            for _co in 0..cout {
                for _ky in 0..k {
                    for _kx in 0..k {
                        for _ci in 0..cin {
                            macs += 1;
                        }
                    }
                }
            }
        }
    }
    let mut params = 0u64;
    for _co in 0..cout {
        for _ky in 0..k {
            for _kx in 0..k {
                for _ci in 0..cin {
                    params += 1;
                }
            }
        }
    }
    (macs, params)
}

pub fn depthwise_loops(h: u32, w: u32, c: u32, k: u32, s: u32) -> (u64, u64) {
    let mut macs = 0u64;
    for _oy in 0..positions(h, s) {
        for _ox in 0..positions(w, s) {
            for _c in 0..c {
                for _ky in 0..k {
                    for _kx in 0..k {
                        macs += 1;
                    }
                }
            }
        }
    }
    let mut params = 0u64;
    for _c in 0..c {
        for _t in 0..k * k {
            params += 1;
        }
    }
    (macs, params)
}

pub fn plus(a: (u64, u64), b: (u64, u64)) -> (u64, u64) {
    (a.0 + b.0, a.1 + b.1)
}

pub fn oracle(layer: &LayerSpec, input: TensorShape) -> (u64, u64) {
    let (h, w, c) = (input.height, input.width, input.channels);
    match *layer {
        LayerSpec::Conv2D {
            kernel,
            stride,
            out_channels,
        } => conv_loops(h, w, c, out_channels, kernel, stride),
        LayerSpec::DepthwiseConv { kernel, stride } => depthwise_loops(h, w, c, kernel, stride),
        LayerSpec::Ibn {
            kernel,
            stride,
            expansion,
            out_channels,
            ..
        } => {
            let wide = c * expansion;
            let (ho, wo) = (positions(h, stride) as u32, positions(w, stride) as u32);
            plus(
                plus(conv_loops(h, w, c, wide, 1, 1), depthwise_loops(h, w, wide, kernel, stride)),
                conv_loops(ho, wo, wide, out_channels, 1, 1),
            )
        }
        LayerSpec::FusedIbn {
            kernel,
            stride,
            expansion,
            out_channels,
            ..
        } => {
            let wide = c * expansion;
            let (ho, wo) = (positions(h, stride) as u32, positions(w, stride) as u32);
            plus(
                conv_loops(h, w, c, wide, kernel, stride),
                conv_loops(ho, wo, wide, out_channels, 1, 1),
            )
        }
        LayerSpec::GlobalAvgPool => (0, 0),
        LayerSpec::Dense { units } => {
            let mut n = 0u64;
            for _ci in 0..c {
                for _u in 0..units {
                    n += 1;
                }
            }
            (n, n)
        }
    }
}

pub const SPATIAL: [u32; 9] = [1, 2, 3, 4, 7, 8, 15, 16, 32];
pub const CHANNELS: [u32; 7] = [1, 2, 3, 5, 8, 16, 32];

pub fn grid_layers() -> Vec<LayerSpec> {
    let mut layers = vec![LayerSpec::GlobalAvgPool];
    for &out_channels in &CHANNELS {
        for stride in [1, 2] {
            for kernel in [1, 3, 5] {
                layers.push(LayerSpec::Conv2D {
                    kernel,
                    stride,
                    out_channels,
                });
            }
            for kernel in [3, 5] {
                for expansion in [1, 3, 6] {
                    layers.push(LayerSpec::Ibn {
                        kernel,
                        stride,
                        expansion,
                        out_channels,
                        residual: false,
                    });
                    layers.push(LayerSpec::FusedIbn {
                        kernel,
                        stride,
                        expansion,
                        out_channels,
                        residual: false,
                    });
                }
            }
        }
        layers.push(LayerSpec::Dense { units: out_channels });
    }
    for stride in [1, 2] {
        for kernel in [3, 5] {
            layers.push(LayerSpec::DepthwiseConv { kernel, stride });
        }
    }
    layers
}
