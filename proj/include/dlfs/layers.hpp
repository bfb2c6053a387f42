#pragma once

#include "dlfs/tensor.hpp"

namespace dlfs {

// Plain layers with explicit forward/backward pairs. Every forward returns
// the values the matching backward needs in a small cache struct; a cache
// is only valid for the immediately preceding forward on the same
// parameters.

// ---- 2D convolution, zero padding ----
struct Conv2dCache {
  Tensor x_padded;  // [Cin, H+2p, W+2p]
  int64_t in_h = 0, in_w = 0;
  int stride = 1, pad = 0;
};
struct Conv2dGrads {
  Tensor grad_x, grad_w, grad_b;
};

// x [Cin,H,W], w [Cout,Cin,k,k], b [Cout] -> out [Cout,H',W'] with
// H' = floor((H+2p-k)/s)+1.
std::pair<Tensor, Conv2dCache> conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
                                      int stride, int pad);
Conv2dGrads conv2d_backward(const Conv2dCache& cache, const Tensor& w, const Tensor& grad_out);
int64_t conv2d_out_dim(int64_t in, int64_t k, int stride, int pad);

// ---- fully connected ----
struct FcCache {
  Tensor x;
};
struct FcGrads {
  Tensor grad_x, grad_w, grad_b;
};
// x [D], w [N,D], b [N] -> y [N]
std::pair<Tensor, FcCache> fully_connected(const Tensor& x, const Tensor& w, const Tensor& b);
FcGrads fully_connected_backward(const FcCache& cache, const Tensor& w, const Tensor& grad_y);

// ---- global average pool ----
struct GapCache {
  int64_t c = 0, h = 0, w = 0;
};
std::pair<Tensor, GapCache> global_avg_pool(const Tensor& x);
Tensor global_avg_pool_backward(const GapCache& cache, const Tensor& grad_y);

// ---- adaptive max pool to SxS ----
struct MaxPoolCache {
  std::vector<int64_t> argmax;  // flat input index per output element
  std::vector<int64_t> in_shape;
};
// x [K,H,W] -> y [K,S,S]; window i covers rows [floor(i*H/S), floor((i+1)*H/S)).
// Ties break to the first index in row-major order.
std::pair<Tensor, MaxPoolCache> max_pool(const Tensor& x, int out_size);
Tensor max_pool_backward(const MaxPoolCache& cache, const Tensor& grad_out);

// ---- relu with cache ----
struct ReluCache {
  Tensor mask;  // 1 where input > 0
};
std::pair<Tensor, ReluCache> relu_layer(const Tensor& x);
Tensor relu_backward(const ReluCache& cache, const Tensor& grad_out);

// ---- 2D softmax over a whole map ----
struct Softmax2dCache {
  Tensor h;
};
// m [H,W] -> h with sum 1; max is subtracted before exponentiation so any
// finite input is safe.
std::pair<Tensor, Softmax2dCache> softmax2d(const Tensor& m);
Tensor softmax2d_backward(const Softmax2dCache& cache, const Tensor& grad_h);

// ---- cross entropy on logits ----
struct CrossEntropyCache {
  Tensor probs;
  int64_t label = 0;
};
std::pair<double, CrossEntropyCache> cross_entropy(const Tensor& logits, int64_t label);
// gradient of the loss w.r.t. logits, scaled by grad_loss
Tensor cross_entropy_backward(const CrossEntropyCache& cache, double grad_loss = 1.0);

}  // namespace dlfs
