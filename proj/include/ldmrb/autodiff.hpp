// Copyright 2026 The ldmrb Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Minimal reverse-mode differentiation over dense double tensors.
//
// Only what the toy diffusion model needs: convolutions, token-wise linear
// maps, softmax attention, pointwise activations and an L2 distance. Weights
// are plain Tensors held by the caller and never receive gradients; only
// Vars that descend from a Tape::input() are differentiated.

#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

namespace ldmrb::ad {

struct Tensor {
  std::vector<int> dims;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> d, double fill = 0.0);
  Tensor(std::vector<int> d, std::vector<double> values);

  std::size_t size() const noexcept { return data.size(); }
  int dim(std::size_t i) const { return dims.at(i); }
  std::size_t rank() const noexcept { return dims.size(); }
};

struct Var {
  int id = -1;
  bool valid() const noexcept { return id >= 0; }
};

class Tape {
 public:
  /// With record = false no backward closures are kept (pure inference).
  explicit Tape(bool record = true) : record_(record) {}

  Var constant(Tensor value);
  Var input(Tensor value);

  const Tensor& value(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).value; }
  bool requires_grad(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).requires_grad; }
  bool recording() const noexcept { return record_; }

  /// Seeds d(root)/d(root) = 1 for a scalar root and back-propagates.
  void backward(Var root);
  /// Gradient accumulated for v (zeros if v received none).
  Tensor grad(Var v) const;

  std::size_t node_count() const noexcept { return nodes_.size(); }

  // Internal plumbing used by the op implementations.
  using Backward = std::function<void(Tape&, const Tensor& upstream)>;
  Var emit(Tensor value, std::initializer_list<Var> parents, Backward backward);
  void accumulate(Var v, std::span<const double> g);
  void accumulate_at(Var v, std::size_t i, double g);

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
  bool record_;
};

// --- ops ------------------------------------------------------------------
// Image-like tensors are [C, H, W]; token matrices are [N, D].

/// 2-D convolution, weight [O, C, k, k], bias [O], zero padding.
Var conv2d(Tape& t, Var x, const Tensor& weight, const Tensor& bias, int stride, int pad);
Var add(Tape& t, Var a, Var b);
Var add_const(Tape& t, Var a, const Tensor& c);
/// Adds c[ch] to every spatial position of channel ch of a [C, H, W] tensor.
Var add_channel_const(Tape& t, Var a, const std::vector<double>& c);
/// alpha * a + beta * b
Var axpby(Tape& t, double alpha, Var a, double beta, Var b);
Var scale(Tape& t, Var a, double s);
Var mul_const(Tape& t, Var a, const Tensor& c);
Var tanh(Tape& t, Var a);
Var silu(Tape& t, Var a);
Var sigmoid(Tape& t, Var a);
Var gelu(Tape& t, Var a);  // tanh approximation

Var concat_channels(Tape& t, Var a, Var b);
Var slice_channels(Tape& t, Var a, int first, int count);
/// Flattens and concatenates; dims of the result are {total}.
Var concat_flat(Tape& t, std::span<const Var> parts);
/// Nearest-neighbour 2x upsampling of [C, H, W].
Var upsample2(Tape& t, Var a);

/// [C, H, W] -> [H*W, C] and back.
Var to_tokens(Tape& t, Var a);
Var from_tokens(Tape& t, Var a, int height, int width);

/// a [N, K] times constant w [K, M] plus optional bias [M].
Var linear(Tape& t, Var a, const Tensor& w, const Tensor* bias = nullptr);
/// a [N, K] times b^T where b is [M, K]; both differentiable.
Var matmul_nt(Tape& t, Var a, Var b);
/// a [N, K] times b [K, M]; both differentiable.
Var matmul(Tape& t, Var a, Var b);
Var softmax_rows(Tape& t, Var a);

/// ||a - ref||_2 as a scalar; the gradient at a == ref is defined as 0.
Var l2_distance(Tape& t, Var a, std::span<const double> ref);
Var sum_scalars(Tape& t, std::span<const Var> scalars);

}  // namespace ldmrb::ad
