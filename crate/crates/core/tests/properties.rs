use std::collections::BTreeMap;

use proptest::prelude::*;

use xnormaj::binlayers::{
    conv_forward, fc_forward, fold_bn_to_threshold, layer_counts, maxpool_binary, mconv_forward, mfc_forward,
    BinaryWeights, BnParams, ConfigString, LayerAffine, LayerConfig, LayerKind, LayerOutput, NetworkConfig,
};
use xnormaj::bitcore::{maj_reduce, popcount, xnor, xnor_popcount_neuron, xnormaj_neuron, BitTensor, MajParams};
use xnormaj::costmodel::{adder_tree_cost, dominates, layer_cost, network_cost, pareto, Device};
use xnormaj::hdlgen::{emit_popcount_tree, reference_popcount_tree, verify_emitted, HdlTreeSpec};
use xnormaj::trainer::{surrogate_trace, ShadowWeights};

fn bits(len: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<bool>> {
    prop::collection::vec(any::<bool>(), len)
}

fn tensor(b: &[bool]) -> BitTensor {
    BitTensor::from_bits(b, &[b.len()]).unwrap()
}

fn pair(len: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = (Vec<bool>, Vec<bool>)> {
    bits(len).prop_flat_map(|a| {
        let n = a.len();
        (Just(a), bits(n..=n))
    })
}

fn grouped_pair() -> impl Strategy<Value = (usize, Vec<bool>, Vec<bool>)> {
    (prop::sample::select(vec![3usize, 5, 7, 9]), 1usize..40).prop_flat_map(|(m, g)| {
        let n = m * g;
        (Just(m), bits(n..=n), bits(n..=n))
    })
}

fn sign(b: bool) -> i64 {
    if b {
        1
    } else {
        -1
    }
}

proptest! {
    #[test]
    fn pack_unpack_round_trip(b in bits(1..=200)) {
        let t = tensor(&b);
        prop_assert!(t.is_canonical());
        let back = BitTensor::pack(&t.unpack(), &[b.len()]).unwrap();
        prop_assert_eq!(&back, &t);
        prop_assert_eq!(BitTensor::from_bytes(&t.to_bytes()).unwrap(), t);
    }

    #[test]
    fn xnor_is_elementwise_product((a, b) in pair(1..=200)) {
        let (ta, tb) = (tensor(&a), tensor(&b));
        let z = xnor(&ta, &tb).unwrap();
        prop_assert!(z.is_canonical());
        let (ua, ub, uz) = (ta.unpack(), tb.unpack(), z.unpack());
        for i in 0..a.len() {
            prop_assert_eq!(uz[i], ua[i] * ub[i]);
        }
    }

    #[test]
    fn popcount_neuron_is_sum_of_xnor_signs((a, b) in pair(1..=200)) {
        let (ta, tb) = (tensor(&a), tensor(&b));
        let z = xnor(&ta, &tb).unwrap();
        let sum: i64 = (0..z.len()).map(|i| sign(z.get(i))).sum();
        prop_assert_eq!(xnor_popcount_neuron(&ta, &tb, 0.0).unwrap(), sum as f64);
        prop_assert_eq!(popcount(&z) as i64 * 2 - z.len() as i64, sum);
    }

    #[test]
    fn majority_bit_is_sign_of_group_dot((m, x, w) in grouped_pair()) {
        let z = xnor(&tensor(&x), &tensor(&w)).unwrap();
        let r = maj_reduce(&z, m).unwrap();
        prop_assert!(r.is_canonical());
        for g in 0..x.len() / m {
            let dot: i64 = (g * m..(g + 1) * m).map(|i| sign(x[i]) * sign(w[i])).sum();
            prop_assert_eq!(r.get(g), dot > 0);
        }
    }

    #[test]
    fn majority_neuron_is_scaled_group_signs((m, x, w) in grouped_pair()) {
        let p = MajParams::for_group(m).unwrap();
        let (tx, tw) = (tensor(&x), tensor(&w));
        let v = xnormaj_neuron(&tx, &tw, &p, 0.0).unwrap();
        let groups = x.len() / m;
        prop_assert!(v.abs() <= groups as f64 * p.scale() + 1e-9);
        let signs: f64 = (0..groups)
            .map(|g| {
                let dot: i64 = (g * m..(g + 1) * m).map(|i| sign(x[i]) * sign(w[i])).sum();
                p.scale() * dot.signum() as f64
            })
            .sum();
        prop_assert!((v - signs).abs() <= 1e-9);
    }

    #[test]
    fn not_is_canonical(b in bits(1..=200)) {
        let t = tensor(&b).not();
        prop_assert!(t.is_canonical());
        prop_assert_eq!(popcount(&t), b.iter().filter(|&&v| !v).count() as u64);
    }
}

fn conv_case() -> impl Strategy<Value = (LayerConfig, usize, usize, Vec<bool>, Vec<bool>)> {
    (2usize..7, 2usize..7, 1usize..5, 1usize..4, any::<bool>()).prop_flat_map(|(h, w, cin, cout, pad)| {
        let cfg = LayerConfig::conv(cin, cout, 3, pad);
        let (ni, nw) = (h * w * cin, cout * cfg.fan_in());
        (Just(cfg), Just(h), Just(w), bits(ni..=ni), bits(nw..=nw))
    })
    .prop_filter("output must be non-empty", |(cfg, h, w, ..)| cfg.pad || (*h >= 3 && *w >= 3))
}

fn weights_from(cfg: &LayerConfig, b: &[bool]) -> BinaryWeights {
    let signs: Vec<f64> = b.iter().map(|&v| if v { 1.0 } else { -1.0 }).collect();
    BinaryWeights::from_signs(cfg.cout, cfg.fan_in(), &signs).unwrap()
}

proptest! {
    #[test]
    fn negating_conv_weights_negates_output((cfg, h, w, input, wb) in conv_case(), majority in any::<bool>()) {
        let cfg = cfg.with_majority(majority);
        let x = BitTensor::from_bits(&input, &[h, w, cfg.cin]).unwrap();
        let weights = weights_from(&cfg, &wb);
        let zero = vec![0.0; cfg.cout];
        let run = |wt: &BinaryWeights| if majority {
            mconv_forward(&x, wt, &zero, &cfg).unwrap()
        } else {
            conv_forward(&x, wt, &zero, &cfg).unwrap()
        };
        let (a, b) = (run(&weights), run(&weights.negated()));
        for (p, q) in a.data.iter().zip(&b.data) {
            prop_assert_eq!(*p, -*q);
        }
    }

    #[test]
    fn negating_fc_weights_negates_output(cin in 1usize..40, cout in 1usize..5, majority in any::<bool>(), seed in any::<u64>()) {
        let cfg = LayerConfig::fc(cin, cout).with_majority(majority);
        let mut s = seed | 1;
        let mut next = || { s ^= s << 13; s ^= s >> 7; s ^= s << 17; s & 1 == 1 };
        let x = tensor(&(0..cin).map(|_| next()).collect::<Vec<_>>());
        let weights = weights_from(&cfg, &(0..cout * cfg.fan_in()).map(|_| next()).collect::<Vec<_>>());
        let zero = vec![0.0; cout];
        let run = |wt: &BinaryWeights| if majority {
            mfc_forward(&x, wt, &zero, &cfg).unwrap()
        } else {
            fc_forward(&x, wt, &zero, &cfg).unwrap()
        };
        // every XNOR bit flips, padding included, so B and M values both negate
        let (a, b) = (run(&weights), run(&weights.negated()));
        for (p, q) in a.iter().zip(&b) {
            prop_assert_eq!(*p, -*q);
        }
    }

    #[test]
    fn or_pool_equals_max_of_signs(h in 1usize..4, w in 1usize..4, c in 1usize..4, window in 1usize..3, seed in any::<u64>()) {
        let (h, w) = (h * window, w * window);
        let mut s = seed | 1;
        let b: Vec<bool> = (0..h * w * c).map(|_| { s ^= s << 13; s ^= s >> 7; s ^= s << 17; s & 1 == 1 }).collect();
        let t = BitTensor::from_bits(&b, &[h, w, c]).unwrap();
        let pooled = maxpool_binary(&t, window).unwrap();
        let signs = t.unpack();
        let (oh, ow) = (h / window, w / window);
        for oy in 0..oh {
            for ox in 0..ow {
                for ci in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    for dy in 0..window {
                        for dx in 0..window {
                            best = best.max(signs[((oy * window + dy) * w + ox * window + dx) * c + ci]);
                        }
                    }
                    prop_assert_eq!(pooled.get((oy * ow + ox) * c + ci), best > 0.0);
                }
            }
        }
    }

    #[test]
    fn folded_threshold_equals_bn_sign(
        gamma in -3.0f64..3.0, mu in -100.0f64..100.0, inv_std in 0.001f64..3.0, beta in -3.0f64..3.0,
        bias in -2i32..=2, majority in any::<bool>(),
    ) {
        let cfg = LayerConfig::conv(16, 1, 3, true).with_majority(majority);
        let bn = BnParams::new(vec![gamma], vec![mu], vec![inv_std], vec![beta]).unwrap();
        let affine = LayerAffine::for_layer(&cfg, bias as f64);
        let t = fold_bn_to_threshold(&bn, &[affine]).unwrap();
        for s in 0..=LayerAffine::max_count(&cfg) {
            prop_assert_eq!(t.channels[0].fire(s), bn.decide(0, affine.apply(s)));
        }
    }
}

fn small_net(majority: [bool; 4]) -> NetworkConfig {
    NetworkConfig {
        input: [4, 4, 2],
        layers: vec![
            LayerConfig::conv(2, 3, 3, true).with_majority(majority[0]),
            LayerConfig::conv(3, 3, 3, true).with_majority(majority[1]),
            LayerConfig::maxpool(2),
            LayerConfig::fc(12, 7).with_majority(majority[2]),
            LayerConfig::fc(7, 4).with_majority(majority[3]),
        ],
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn surrogate_matches_deployment(majority in any::<[bool; 4]>(), seed in any::<u64>(), input in bits(32..=32)) {
        let net = small_net(majority);
        let mut weights = ShadowWeights::init(&net, seed, 1e-4).unwrap();
        let mut s = seed | 1;
        let mut next = move || { s ^= s << 13; s ^= s >> 7; s ^= s << 17; (s >> 11) as f64 / (1u64 << 53) as f64 };
        for lw in &mut weights.layers {
            if let Some(bn) = &mut lw.bn {
                for c in 0..bn.mean.len() {
                    bn.gamma[c] = 2.0 * next() - 1.0;
                    bn.beta[c] = next() - 0.5;
                    bn.mean[c] = 8.0 * next() - 4.0;
                    bn.var[c] = 0.1 + 4.0 * next();
                }
            } else {
                lw.bias.iter_mut().for_each(|b| *b = 2.0 * next() - 1.0);
            }
        }
        let x = BitTensor::from_bits(&input, &[4, 4, 2]).unwrap();
        let sur = surrogate_trace(&net, &weights, &x.unpack()).unwrap();
        let deployed = weights.deploy(&net).unwrap();
        let trace = deployed.forward_trace(&x).unwrap();
        let mut k = 0;
        let mut cur = x.clone();
        for (i, cfg) in net.layers.iter().enumerate() {
            if cfg.kind == LayerKind::Maxpool {
                let LayerOutput::Bits(b) = &trace[i] else { panic!("pool yields bits") };
                cur = b.clone();
                continue;
            }
            let xin = if cfg.kind == LayerKind::Fc { cur.clone().reshape(&[cur.len()]).unwrap() } else { cur.clone() };
            let counts = layer_counts(&xin, &weights.layers[k].binary().unwrap(), cfg).unwrap();
            match &trace[i] {
                LayerOutput::Bits(b) => {
                    let affine = LayerAffine::for_layer(cfg, 0.0);
                    for (j, &c) in counts.data.iter().enumerate() {
                        prop_assert!((affine.apply(c) - sur[k].pre[j]).abs() <= 1e-9);
                    }
                    prop_assert_eq!(b.to_bits(), sur[k].bits.clone());
                    cur = b.clone();
                }
                LayerOutput::Scores(scores) => {
                    for (a, b) in scores.iter().zip(&sur[k].pre) {
                        prop_assert!((a - b).abs() <= 1e-9);
                    }
                }
            }
            k += 1;
        }
    }
}

proptest! {
    #[test]
    fn adder_tree_is_monotone(n in 1usize..300, w in 1u32..16) {
        let base = adder_tree_cost(n, w).luts;
        prop_assert!(adder_tree_cost(n + 1, w).luts >= base);
        prop_assert!(adder_tree_cost(n, w + 1).luts >= base);
    }

    #[test]
    fn majority_substitution_is_cheaper(groups in 1usize..400, cout in 1usize..64, ff in 1usize..8) {
        let cin = 3 * groups;
        let b = LayerConfig::fc(cin, cout).with_ff(ff);
        let m = b.clone().with_majority(true);
        let (cb, cm) = (
            layer_cost(&b, Device::XilinxLut6, true).unwrap(),
            layer_cost(&m, Device::XilinxLut6, true).unwrap(),
        );
        prop_assert!(cm.total() < cb.total());
        prop_assert!(cm.frontend_total() * 2.0 == cb.frontend_total());
    }

    #[test]
    fn folding_divides_cost_exactly(cin in 1usize..2000, cout in 1usize..64, ff in 1usize..64, majority in any::<bool>()) {
        let cfg = LayerConfig::fc(cin, cout).with_majority(majority);
        let one = layer_cost(&cfg.clone().with_ff(1), Device::IntelAlm, true).unwrap().total();
        let folded = layer_cost(&cfg.with_ff(ff), Device::IntelAlm, true).unwrap().total();
        prop_assert_eq!(folded, one / ff as f64);
    }

    #[test]
    fn tree_verifies(n in 1usize..=9, w in 1u32..=2) {
        let spec = HdlTreeSpec::new(n, w).unwrap();
        let text = emit_popcount_tree(&spec).unwrap();
        prop_assert_eq!(&text, &emit_popcount_tree(&spec).unwrap());
        let r = verify_emitted(&text, reference_popcount_tree(spec)).unwrap();
        prop_assert!(r.passed() && r.exhaustive);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pareto_front_is_the_non_dominated_set(errors in prop::collection::vec(prop::option::of(0u8..8), 64)) {
        let net = NetworkConfig::cnv_p();
        let all = ConfigString::enumerate(5, 1);
        let table: BTreeMap<ConfigString, f64> = all
            .iter()
            .zip(&errors)
            .filter_map(|(c, e)| e.map(|e| (c.clone(), e as f64)))
            .collect();
        let front = pareto(&net, Device::XilinxLut6, &table).unwrap();
        let cost = |c: &ConfigString| network_cost(&net.with_config(c).unwrap(), Device::XilinxLut6).unwrap().config_total();
        for (c, &e) in &table {
            let dominated = table.iter().any(|(d, &f)| dominates((cost(d), f), (cost(c), e)));
            prop_assert_eq!(front.iter().any(|p| &p.config == c), !dominated, "{}", c);
        }
    }
}
