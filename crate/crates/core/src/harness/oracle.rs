// SPDX-License-Identifier: MIT OR Apache-2.0

//! Cache-free reference decoder.
//!
//! Recomputes the whole sequence from scratch at every step, with its own
//! straight-line arithmetic: no KV cache, no hooks, and none of the engine
//! or intervention kernels. Smoothing, when configured, is written out
//! inline and applied to every generating row (the final prompt token and
//! each generated token), each with its own memory and termination state.
//! Agreement with the engine is the equivalence check.

#![allow(clippy::needless_range_loop)]

use crate::clvs::ClvsConfig;
use crate::engine::{ModelWeights, TokenLayout};
use crate::error::{Error, Result};

use super::scripted::ScriptedSchedule;

/// Tokens and per-step smoothing state from the reference decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleRun {
    pub tokens: Vec<usize>,
    /// Final logits of each step.
    pub logits: Vec<Vec<f64>>,
    /// `steps x L x N_v` memory after each layer; empty without smoothing.
    pub memory: Vec<Vec<Vec<f64>>>,
    pub termination_layers: Vec<Option<usize>>,
}

struct RowState {
    memory: Vec<f64>,
    terminated: bool,
    termination_layer: Option<usize>,
    trajectory: Vec<Vec<f64>>,
}

fn rms(x: &[f64], g: &[f64]) -> Vec<f64> {
    let mut ss = 0.0;
    for v in x {
        ss += v * v;
    }
    let r = 1.0 / (ss / x.len() as f64 + 1e-6).sqrt();
    (0..x.len()).map(|i| x[i] * r * g[i]).collect()
}

fn mul(w: &[f64], x: &[f64], rows: usize) -> Vec<f64> {
    let cols = x.len();
    let mut out = vec![0.0; rows];
    for r in 0..rows {
        let mut acc = 0.0;
        for c in 0..cols {
            acc += w[r * cols + c] * x[c];
        }
        out[r] = acc;
    }
    out
}

fn rotate(v: &mut [f64], n_heads: usize, hd: usize, pos: usize, base: f64) {
    for h in 0..n_heads {
        for i in 0..hd / 2 {
            let theta = pos as f64 / base.powf((2 * i) as f64 / hd as f64);
            let (a, b) = (v[h * hd + 2 * i], v[h * hd + 2 * i + 1]);
            v[h * hd + 2 * i] = a * theta.cos() - b * theta.sin();
            v[h * hd + 2 * i + 1] = a * theta.sin() + b * theta.cos();
        }
    }
}

fn probs_of(z: &[f64]) -> Vec<f64> {
    let mut m = z[0];
    for &v in z {
        if v > m {
            m = v;
        }
    }
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn top_entropy(p: &[f64], k: usize) -> f64 {
    if k <= 1 {
        return 0.0;
    }
    let mut s = p.to_vec();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let top = &s[..k];
    let z: f64 = top.iter().sum();
    let mut h = 0.0;
    for &q in top {
        let q = q / z;
        if q > 0.0 {
            h -= q * q.ln();
        }
    }
    h / (k as f64).ln()
}

fn first_max(z: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..z.len() {
        if z[i] > z[best] {
            best = i;
        }
    }
    best
}

/// Reference greedy decode.
///
/// `first_layer_positions` are the layer-1 indices of the prompt tokens;
/// later layers use `0..n`. With `clvs = None` no smoothing is applied.
pub fn oracle_forward(
    w: &ModelWeights,
    prompt: &[usize],
    layout: &TokenLayout,
    first_layer_positions: &[usize],
    max_new: usize,
    clvs: Option<&ClvsConfig>,
    schedule: Option<&ScriptedSchedule>,
) -> Result<OracleRun> {
    let c = &w.config;
    let (nl, nh, hd, d, v, f) = (c.n_layers, c.n_heads, c.head_dim, c.hidden, c.vocab, c.ffn_dim);
    let np = prompt.len();
    if np != layout.prompt_len() || first_layer_positions.len() != np {
        return Err(Error::Input("prompt, layout and positions disagree in length".into()));
    }
    if let Some(t) = prompt.iter().find(|&&t| t >= v) {
        return Err(Error::Input(format!("token id {t} outside vocabulary")));
    }
    if let Some(cfg) = clvs {
        cfg.validate(Some(nl))?;
        if cfg.topk > v {
            return Err(Error::Input(format!("topk {} exceeds vocabulary {v}", cfg.topk)));
        }
    }
    let scale = c.score_scale();
    let vs = layout.n_sys;
    let ve = layout.n_sys + layout.n_vis;
    let gate = clvs.map(|cfg| cfg.gate_start(nl));

    let mut seq = prompt.to_vec();
    let mut run = OracleRun {
        tokens: Vec::new(),
        logits: Vec::new(),
        memory: Vec::new(),
        termination_layers: Vec::new(),
    };

    loop {
        let n = seq.len();
        let gen_start = np - 1;
        let pos1: Vec<usize> = (0..n)
            .map(|i| {
                if i < np {
                    first_layer_positions[i]
                } else {
                    first_layer_positions[np - 1] + (i - np + 1)
                }
            })
            .collect();

        let mut x: Vec<Vec<f64>> = seq.iter().map(|&t| w.embed[t * d..(t + 1) * d].to_vec()).collect();
        let mut states: Vec<RowState> = (gen_start..n)
            .map(|_| RowState {
                memory: Vec::new(),
                terminated: false,
                termination_layer: None,
                trajectory: Vec::new(),
            })
            .collect();

        for l in 0..nl {
            let lw = &w.layers[l];
            let mut q = Vec::with_capacity(n);
            let mut k = Vec::with_capacity(n);
            let mut val = Vec::with_capacity(n);
            for i in 0..n {
                let h = rms(&x[i], &lw.attn_norm);
                let mut qi = mul(&lw.wq, &h, d);
                let mut ki = mul(&lw.wk, &h, d);
                let p = if l == 0 { pos1[i] } else { i };
                rotate(&mut qi, nh, hd, p, c.rope_base);
                rotate(&mut ki, nh, hd, p, c.rope_base);
                q.push(qi);
                k.push(ki);
                val.push(mul(&lw.wv, &h, d));
            }

            let mut mixed = vec![vec![0.0; d]; n];
            for i in 0..n {
                // alpha[h][j] for j <= i
                let mut alpha: Vec<Vec<f64>> = (0..nh)
                    .map(|h| {
                        let s: Vec<f64> = (0..=i)
                            .map(|j| {
                                let mut dotp = 0.0;
                                for e in 0..hd {
                                    dotp += q[i][h * hd + e] * k[j][h * hd + e];
                                }
                                dotp * scale
                            })
                            .collect();
                        probs_of(&s)
                    })
                    .collect();

                if i >= gen_start {
                    if let Some(s) = schedule {
                        let others = (i + 1) - (ve - vs);
                        if others == 0 {
                            return Err(Error::Config(
                                "scripted attention needs at least one non-visual position in context".into(),
                            ));
                        }
                        for h in 0..nh {
                            let scripted = &s.rows[l][h];
                            let share = (1.0 - scripted.iter().sum::<f64>()) / others as f64;
                            for j in 0..=i {
                                alpha[h][j] = if j >= vs && j < ve { scripted[j - vs] } else { share };
                            }
                        }
                    }
                    if let Some(cfg) = clvs {
                        let st = &mut states[i - gen_start];
                        let lam: Vec<Vec<f64>> = alpha.iter().map(|a| a[vs..ve].to_vec()).collect();
                        if l == 0 {
                            st.memory = (0..ve - vs)
                                .map(|t| lam.iter().map(|r| r[t]).fold(f64::NEG_INFINITY, f64::max))
                                .collect();
                        } else if !st.terminated {
                            for h in 0..nh {
                                for t in 0..ve - vs {
                                    alpha[h][vs + t] = cfg.beta * lam[h][t] + (1.0 - cfg.beta) * st.memory[t];
                                }
                                let total: f64 = alpha[h].iter().sum();
                                for a in alpha[h].iter_mut() {
                                    *a /= total;
                                }
                            }
                            for t in 0..ve - vs {
                                let mx = lam.iter().map(|r| r[t]).fold(f64::NEG_INFINITY, f64::max);
                                st.memory[t] = cfg.gamma * st.memory[t] + (1.0 - cfg.gamma) * mx;
                            }
                        }
                        st.trajectory.push(st.memory.clone());
                    }
                }

                for h in 0..nh {
                    for j in 0..=i {
                        for e in 0..hd {
                            mixed[i][h * hd + e] += alpha[h][j] * val[j][h * hd + e];
                        }
                    }
                }
            }

            for i in 0..n {
                let o = mul(&lw.wo, &mixed[i], d);
                for e in 0..d {
                    x[i][e] += o[e];
                }
                let h2 = rms(&x[i], &lw.ffn_norm);
                let mut up = mul(&lw.w_up, &h2, f);
                for u in up.iter_mut() {
                    let z = *u;
                    *u = 0.5 * z * (1.0 + (0.797_884_560_802_865_4 * (z + 0.044_715 * z * z * z)).tanh());
                }
                let down = mul(&lw.w_down, &up, d);
                for e in 0..d {
                    x[i][e] += down[e];
                }
            }

            if let (Some(cfg), Some(g)) = (clvs, gate) {
                if l + 1 >= g {
                    for i in gen_start..n {
                        let st = &mut states[i - gen_start];
                        if st.terminated {
                            continue;
                        }
                        let z = mul(&w.unembed, &rms(&x[i], &w.final_norm), v);
                        if top_entropy(&probs_of(&z), cfg.topk) < cfg.delta {
                            st.terminated = true;
                            st.termination_layer = Some(l + 1);
                        }
                    }
                }
            }
        }

        let logits = mul(&w.unembed, &rms(&x[n - 1], &w.final_norm), v);
        let next = first_max(&logits);
        let last = states.pop().expect("at least one generating row");
        if clvs.is_some() {
            run.memory.push(last.trajectory);
        }
        run.termination_layers.push(last.termination_layer);
        run.logits.push(logits);

        if run.tokens.len() >= max_new {
            break;
        }
        run.tokens.push(next);
        if run.tokens.len() == max_new {
            break;
        }
        seq.push(next);
    }
    Ok(run)
}
