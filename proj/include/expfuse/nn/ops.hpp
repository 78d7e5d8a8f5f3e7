#pragma once

#include "expfuse/nn/graph.hpp"

// Differentiable operations on NCHW tensors. Every op validates shapes and
// records its backward closure only when some input requires a gradient.
namespace expfuse::nn {

// w: (Cout, Cin, k, k); b: (1, Cout, 1, 1) or an invalid Var for no bias.
template <class T>
Var conv2d(Graph<T>& g, Var x, Var w, Var b, int stride, int pad);

// w: (C, 1, k, k), one filter per channel.
template <class T>
Var depthwise_conv2d(Graph<T>& g, Var x, Var w, Var b, int pad);

template <class T> Var add(Graph<T>& g, Var a, Var b);
template <class T> Var sub(Graph<T>& g, Var a, Var b);
template <class T> Var mul(Graph<T>& g, Var a, Var b);
template <class T> Var scale(Graph<T>& g, Var a, T factor);

// x: (N, C, H, W) plus v: (N, C, 1, 1) or (1, C, 1, 1) broadcast over space.
template <class T> Var add_channel(Graph<T>& g, Var x, Var v);

template <class T> Var silu(Graph<T>& g, Var x);
template <class T> Var exp(Graph<T>& g, Var x);
template <class T> Var square(Graph<T>& g, Var x);
template <class T> Var abs(Graph<T>& g, Var x);

template <class T> Var sum_all(Graph<T>& g, Var x);
template <class T> Var mean_all(Graph<T>& g, Var x);

// gamma, beta: (1, C, 1, 1). Statistics per (sample, group of C/groups channels).
template <class T>
Var group_norm(Graph<T>& g, Var x, Var gamma, Var beta, int groups, T eps = T(1e-5));

// Normalises the channel vector at every pixel; gamma, beta: (1, C, 1, 1).
template <class T>
Var layer_norm_channels(Graph<T>& g, Var x, Var gamma, Var beta, T eps = T(1e-5));

template <class T> Var concat_channels(Graph<T>& g, Var a, Var b);
template <class T> Var slice_channels(Graph<T>& g, Var x, int start, int count);
template <class T> Var upsample_nearest2x(Graph<T>& g, Var x);

// Channel ("transposed") attention primitives. Attention maps are stored as
// (N, 1, C, C) with rows indexed by the query channel.
template <class T> Var l2_normalize_spatial(Graph<T>& g, Var x, T eps = T(1e-12));
template <class T> Var channel_gram(Graph<T>& g, Var q, Var k);
template <class T> Var div_by_scalar(Graph<T>& g, Var x, Var s);
template <class T> Var softmax_rows(Graph<T>& g, Var x);
template <class T> Var channel_mix(Graph<T>& g, Var attn, Var v);

template <class T> Var mse(Graph<T>& g, Var a, Var b);
template <class T> Var l1(Graph<T>& g, Var a, Var b);

}  // namespace expfuse::nn
