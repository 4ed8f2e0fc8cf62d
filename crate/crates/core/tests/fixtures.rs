use std::path::PathBuf;

use edgenas_core::accel::estimate_model;
use edgenas_core::ir::{infer_shapes, validate, ModelError};
use edgenas_core::sim::{simulate_layer, simulate_model};
use edgenas_core::{AcceleratorConfig, Bound, LayerSpec, ModelGraph, TensorShape};

fn fixture(name: &str) -> ModelGraph {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name);
    ModelGraph::from_json(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn config(name: &str) -> AcceleratorConfig {
    AcceleratorConfig::load(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)).unwrap()
}

/// One sub-convolution as (out elements, contraction depth, input elements,
/// weights, depthwise?).
struct Sub {
    out: f64,
    depth: f64,
    input: f64,
    weights: f64,
    cout: f64,
    depthwise: bool,
}

fn subs(layer: &LayerSpec, i: TensorShape, o: TensorShape) -> Vec<Sub> {
    let (h, w, c) = (i.height as f64, i.width as f64, i.channels as f64);
    let (ho, wo) = (o.height as f64, o.width as f64);
    let conv = |sh: f64, sw: f64, cin: f64, oh: f64, ow: f64, cout: f64, k: f64| Sub {
        out: oh * ow * cout,
        depth: k * k * cin,
        input: sh * sw * cin,
        weights: k * k * cin * cout,
        cout,
        depthwise: false,
    };
    match *layer {
        LayerSpec::Conv2D {
            kernel, out_channels, ..
        } => vec![conv(h, w, c, ho, wo, out_channels as f64, kernel as f64)],
        LayerSpec::Dense { units } => vec![conv(1.0, 1.0, c, 1.0, 1.0, units as f64, 1.0)],
        LayerSpec::Ibn {
            kernel,
            expansion,
            out_channels,
            ..
        } => {
            let wide = c * expansion as f64;
            let k = kernel as f64;
            vec![
                conv(h, w, c, h, w, wide, 1.0),
                Sub {
                    out: ho * wo * wide,
                    depth: k * k,
                    input: h * w * wide,
                    weights: k * k * wide,
                    cout: wide,
                    depthwise: true,
                },
                conv(ho, wo, wide, ho, wo, out_channels as f64, 1.0),
            ]
        }
        ref other => panic!("fixture oracle does not cover {other:?}"),
    }
}

/// Roofline latency straight from the documented formulas.
fn oracle_latency(layer: &LayerSpec, i: TensorShape, o: TensorShape, cfg: &AcceleratorConfig) -> f64 {
    let (r, c) = (cfg.array_rows as f64, cfg.array_cols as f64);
    let b = cfg.bytes_per_element;
    let traffic = |input: f64, output: f64, weights: f64| {
        let ws = (input + output + weights) * b;
        let f = (ws / cfg.buffer_bytes as f64).ceil();
        (weights * b + f * (input + output) * b, (input + output) * b)
    };
    if let LayerSpec::GlobalAvgPool = layer {
        let (dram, bus) = traffic(i.elements() as f64, o.elements() as f64, 0.0);
        return (dram / cfg.dram_bw).max(bus / cfg.onchip_bus_bw) * 1e6;
    }
    let (mut compute, mut dram, mut bus) = (0.0, 0.0, 0.0);
    for s in subs(layer, i, o) {
        let u_out = s.cout / (c * (s.cout / c).ceil());
        let u = if s.depthwise {
            u_out / r
        } else {
            s.depth / (r * (s.depth / r).ceil()) * u_out
        };
        compute += s.out * s.depth / (r * c * cfg.clock_hz * u);
        let (d, bb) = traffic(s.input, s.out, s.weights);
        dram += d / cfg.dram_bw;
        bus += bb / cfg.onchip_bus_bw;
    }
    compute.max(dram).max(bus) * 1e6
}

#[test]
fn fixtures_parse_and_validate() {
    for name in ["minimal.json", "mobilenet_v2_like.json"] {
        let g = fixture(name);
        assert!(validate(&g).is_empty(), "{name}");
        assert_eq!(ModelGraph::from_json(&g.to_json()).unwrap(), g);
    }
    assert_eq!(fixture("minimal.json").layers.len(), 3);
    let mb = fixture("mobilenet_v2_like.json");
    let shapes = infer_shapes(&mb).unwrap();
    assert_eq!(shapes[0].1, TensorShape::new(112, 112, 32));
    assert_eq!(shapes[shapes.len() - 2].1, TensorShape::new(1, 1, 1280));
}

#[test]
fn minimal_fixture_under_toy_config_by_hand() {
    let b = estimate_model(&fixture("minimal.json"), &config("toy.toml")).unwrap();
    let lat: Vec<f64> = b.per_layer.iter().map(|l| l.latency_us).collect();
    // conv: 294,912 MACs at 16 MMAC/s; gap: 4,096 + 16 bytes at 1 MB/s;
    // dense: 160 weights + 16 + 10 activations at 1 MB/s
    assert_eq!(lat[0], 18_432.0);
    assert_eq!(lat[1], 4_112.0);
    assert!((lat[2] - 186.0).abs() < 1e-9);
    assert_eq!(b.per_layer[0].bound, Bound::Compute);
    assert_eq!(b.per_layer[1].bound, Bound::Dram);
    assert!((b.total_us - 22_730.0).abs() < 1e-9);
    assert_eq!(b.macs, 294_912 + 160);
}

#[test]
fn mobilenet_fixture_apm_matches_per_layer_oracle() {
    let g = fixture("mobilenet_v2_like.json");
    for cfg in [config("toy.toml"), config("edgetpu-like.toml")] {
        let b = estimate_model(&g, &cfg).unwrap();
        let shapes = infer_shapes(&g).unwrap();
        let mut sum = 0.0;
        for ((layer, (i, o)), got) in g.layers.iter().zip(&shapes).zip(&b.per_layer) {
            let want = oracle_latency(layer, *i, *o, &cfg);
            assert!((got.latency_us - want).abs() <= 1e-9 * want.max(1.0), "{layer:?}: {} vs {want}", got.latency_us);
            sum += got.latency_us;
        }
        assert_eq!(b.total_us, sum);
        assert_eq!(b.per_layer.len(), g.layers.len());
    }
}

#[test]
fn mobilenet_fixture_sim_matches_layerwise_simulation() {
    let g = fixture("mobilenet_v2_like.json");
    let cfg = config("edgetpu-like.toml");
    let report = simulate_model(&g, &cfg).unwrap();
    let shapes = infer_shapes(&g).unwrap();
    let mut total = 0;
    for ((layer, (i, _)), got) in g.layers.iter().zip(&shapes).zip(&report.per_layer) {
        let alone = simulate_layer(layer, *i, &cfg).unwrap();
        assert_eq!(*got, alone);
        total += alone.cycles;
    }
    assert_eq!(report.total_cycles, total);
    assert_eq!(report.total_us, total as f64 / cfg.clock_hz * 1e6);
}

#[test]
fn shipped_configs_match_presets() {
    assert_eq!(config("edgetpu-like.toml"), AcceleratorConfig::edgetpu_like());
    assert_eq!(config("toy.toml"), AcceleratorConfig::toy());
}

#[test]
fn excluded_ops_fail_to_parse() {
    let text = r#"{"name":"x","input":{"h":8,"w":8,"c":3},"layers":[{"op":"swish"}]}"#;
    match ModelGraph::from_json(text) {
        Err(ModelError::Invalid(v)) => assert_eq!(v[0].to_string(), "UnsupportedOp(\"swish\") at layer 0"),
        other => panic!("unexpected {other:?}"),
    }
}
