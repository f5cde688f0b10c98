#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "neurosleep/autodiff.hpp"

namespace nsn {

// 2D convolution geometry with explicit per-side padding.
struct ConvSpec {
    std::size_t num_filters = 1;
    std::size_t kernel_h = 1, kernel_w = 1;
    std::size_t stride_h = 1, stride_w = 1;
    std::size_t pad_left = 0, pad_right = 0, pad_top = 0, pad_bottom = 0;

    std::size_t out_h(std::size_t in_h) const {
        return (in_h + pad_top + pad_bottom - kernel_h) / stride_h + 1;
    }
    std::size_t out_w(std::size_t in_w) const {
        return (in_w + pad_left + pad_right - kernel_w) / stride_w + 1;
    }
    void validate(std::size_t in_h, std::size_t in_w) const;

    // Same-width padding for a (1, k) kernel: total k-1, split
    // left = ceil((k-1)/2), right = floor((k-1)/2).
    static ConvSpec same_width(std::size_t filters, std::size_t k) {
        ConvSpec s;
        s.num_filters = filters;
        s.kernel_w = k;
        s.pad_left = k / 2;
        s.pad_right = (k - 1) / 2;
        return s;
    }
};

// input [Cin,H,W], weights [F,Cin,kh,kw], bias [F] -> [F,H',W']
Var conv2d(const Var& input, const ConvSpec& spec, const Var& weights, const Var& bias);

// input [F,H,W], window (1,r), non-overlapping, trailing remainder dropped.
Var maxpool2d(const Var& input, std::size_t r);

Var relu(const Var& x);

// Softmax over the last axis, shift-stable.
Var softmax(const Var& x);

// x [S,D], gain [D], offset [D]; per-row population statistics.
Var layer_norm(const Var& x, const Var& gain, const Var& offset, double eps = 1e-5);

// x [S,Din], w [Din,Dout], b [Dout] -> [S,Dout]
Var linear(const Var& x, const Var& w, const Var& b);

// Inverted dropout; identity when train == false or p == 0.
Var dropout(const Var& x, double p, bool train, std::mt19937_64& rng);

// a [S,K] x b [K,E] -> [S,E]
Var matmul(const Var& a, const Var& b);
// a [S,K] x b[E,K]^T -> [S,E]
Var matmul_transb(const Var& a, const Var& b);

Var add(const Var& a, const Var& b);          // same shape
Var scale(const Var& x, double alpha);
Var reshape(const Var& x, std::vector<std::size_t> shape);
Var transpose2d(const Var& x);                // [A,B] -> [B,A]
Var slice_cols(const Var& x, std::size_t c0, std::size_t c1);  // [S,D] -> [S,c1-c0]
Var concat_cols(const std::vector<Var>& parts);                // along last axis of 2-d
Var concat_axis0(const std::vector<Var>& parts);               // along first axis
Var mean_over_rows(const Var& x);             // [S,D] -> [D]

// Multi-head scaled dot-product self-attention, no masking, no positions.
// x [S,D]; wq/wk/wv/wo [D,D]; bq/bk/bv/bo [D].
Var multi_head_self_attention(const Var& x, std::size_t heads, const Var& wq, const Var& bq,
                              const Var& wk, const Var& bk, const Var& wv, const Var& bv,
                              const Var& wo, const Var& bo);

enum class Reduction { Mean, Sum };

// logits [n,Y]; per-sample weight taken from class_weights[label].
// L = reduce_i w_{y_i} * (-log softmax(logits_i)[y_i]), Mean divides by n.
Var weighted_cross_entropy(const Var& logits, const std::vector<std::size_t>& labels,
                           const std::vector<double>& class_weights,
                           Reduction reduction = Reduction::Mean);

// Central-difference gradient checker. f rebuilds the graph from the given
// leaves and returns a scalar. Returns the max relative error
// |a-n| / max(1,|a|,|n|) over all coordinates of all leaves.
double grad_check(const std::function<Var(const std::vector<Var>&)>& f,
                  const std::vector<Tensor>& points, double eps = 1e-5);

}  // namespace nsn
