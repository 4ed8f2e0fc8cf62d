//! Brute-force loop-nest counters checked against the closed-form MAC and
//! weight accounting. The oracle walks every output position, channel and
//! kernel tap one at a time and never uses the closed-form formulas.

use edgenas_core::ir::{count_macs, count_params, LayerSpec, TensorShape};

#[path = "support/loopnest.rs"]
mod loopnest;

use loopnest::{grid_layers, oracle, CHANNELS, SPATIAL};

#[test]
fn closed_forms_match_loop_nests_on_exhaustive_grid() {
    let mut checked = 0;
    for layer in grid_layers() {
        for &h in &SPATIAL {
            for &w in &SPATIAL {
                for &c in &CHANNELS {
                    let input = TensorShape::new(h, w, c);
                    let dense_on_spatial = matches!(layer, LayerSpec::Dense { .. }) && (h, w) != (1, 1);
                    let too_small = layer.stride() > h.min(w);
                    if dense_on_spatial || too_small {
                        assert!(count_macs(&layer, input).is_err(), "{layer:?} on {input}");
                        continue;
                    }
                    let expected = oracle(&layer, input);
                    let got = (
                        count_macs(&layer, input).unwrap(),
                        count_params(&layer, input).unwrap(),
                    );
                    assert_eq!(got, expected, "{layer:?} on {input}");
                    checked += 1;
                }
            }
        }
    }
    assert!(checked > 40_000, "grid too small: {checked}");
}

#[test]
fn documented_counts() {
    let conv = LayerSpec::Conv2D {
        kernel: 3,
        stride: 1,
        out_channels: 16,
    };
    assert_eq!(oracle(&conv, TensorShape::new(16, 16, 8)), (294_912, 1_152));
    let dw = LayerSpec::DepthwiseConv { kernel: 3, stride: 1 };
    assert_eq!(oracle(&dw, TensorShape::new(16, 16, 32)).0, 73_728);
    let ibn = LayerSpec::Ibn {
        kernel: 3,
        stride: 1,
        expansion: 6,
        out_channels: 16,
        residual: false,
    };
    assert_eq!(oracle(&ibn, TensorShape::new(8, 8, 16)).1, 3_936);
}

#[test]
fn kernel_ratio_is_exactly_25_over_9() {
    for &h in &SPATIAL {
        for &c in &CHANNELS {
            for stride in [1, 2] {
                if stride > h {
                    continue;
                }
                for cout in [1, 16, 32] {
                    let input = TensorShape::new(h, h, c);
                    let conv = |kernel| LayerSpec::Conv2D {
                        kernel,
                        stride,
                        out_channels: cout,
                    };
                    let m5 = count_macs(&conv(5), input).unwrap();
                    let m3 = count_macs(&conv(3), input).unwrap();
                    // cross-multiplied so the check is exact in integers
                    assert_eq!(9 * m5, 25 * m3);
                }
            }
        }
    }
}
