#pragma once

#include <functional>
#include <string>

#include "ctcycle/rng.hpp"
#include "ctcycle/tensor_ops.hpp"

// Thin parameter-owning wrappers over the functional ops. Weights draw from
// the rng in construction order, so a model init is a pure function of the
// seed. Conv weights are N(0, init_std^2), biases zero, norm scales one.

namespace ctcycle {

template <typename T>
using ParamVisitor = std::function<void(const std::string&, Tensor<T>&)>;

template <typename T>
struct Conv2dLayer {
  Tensor<T> weight;  // [C_out, C_in/groups, k, k]
  Tensor<T> bias;    // [C_out]
  Conv2dSpec spec;

  static Conv2dLayer create(std::int64_t in_ch, std::int64_t out_ch, std::int64_t kernel,
                            std::int64_t stride, std::int64_t padding, std::int64_t groups,
                            Rng& rng, double init_std = 0.02) {
    Conv2dLayer layer;
    layer.weight = Tensor<T>::randn({out_ch, in_ch / groups, kernel, kernel}, rng, 0.0,
                                    init_std, true);
    layer.bias = Tensor<T>::zeros({out_ch}, true);
    layer.spec = {stride, padding, groups};
    return layer;
  }

  Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape) const {
    return conv2d(x, weight, bias, spec, tape);
  }

  void visit_params(const std::string& prefix, const ParamVisitor<T>& fn) {
    fn(prefix + ".weight", weight);
    fn(prefix + ".bias", bias);
  }
};

template <typename T>
struct ConvTranspose2dLayer {
  Tensor<T> weight;  // [C_in, C_out, k, k]
  Tensor<T> bias;
  ConvTranspose2dSpec spec;

  static ConvTranspose2dLayer create(std::int64_t in_ch, std::int64_t out_ch,
                                     std::int64_t kernel, std::int64_t stride,
                                     std::int64_t padding, std::int64_t output_padding,
                                     Rng& rng, double init_std = 0.02) {
    ConvTranspose2dLayer layer;
    layer.weight = Tensor<T>::randn({in_ch, out_ch, kernel, kernel}, rng, 0.0, init_std, true);
    layer.bias = Tensor<T>::zeros({out_ch}, true);
    layer.spec = {stride, padding, output_padding};
    return layer;
  }

  Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape) const {
    return conv_transpose2d(x, weight, bias, spec, tape);
  }

  void visit_params(const std::string& prefix, const ParamVisitor<T>& fn) {
    fn(prefix + ".weight", weight);
    fn(prefix + ".bias", bias);
  }
};

template <typename T>
struct BatchNorm2dLayer {
  Tensor<T> gamma, beta;
  Tensor<T> running_mean, running_var;
  T momentum = T(0.1);
  T epsilon = T(1e-5);

  static BatchNorm2dLayer create(std::int64_t channels, double momentum = 0.1,
                                 double epsilon = 1e-5) {
    BatchNorm2dLayer layer;
    layer.gamma = Tensor<T>::full({channels}, T(1), true);
    layer.beta = Tensor<T>::zeros({channels}, true);
    layer.running_mean = Tensor<T>::zeros({channels});
    layer.running_var = Tensor<T>::full({channels}, T(1));
    layer.momentum = static_cast<T>(momentum);
    layer.epsilon = static_cast<T>(epsilon);
    return layer;
  }

  // Tensors are shared handles; train mode refreshes the running stats in
  // place even through a const layer.
  Tensor<T> forward(const Tensor<T>& x, NormMode mode, Tape<T>* tape,
                    bool update_running = true) const {
    auto rm = running_mean;
    auto rv = running_var;
    return batch_norm(x, gamma, beta, rm, rv, mode, momentum, epsilon, update_running, tape);
  }

  void visit_params(const std::string& prefix, const ParamVisitor<T>& fn) {
    fn(prefix + ".gamma", gamma);
    fn(prefix + ".beta", beta);
  }

  void visit_buffers(const std::string& prefix, const ParamVisitor<T>& fn) {
    fn(prefix + ".running_mean", running_mean);
    fn(prefix + ".running_var", running_var);
  }
};

template <typename T>
struct Conv3dLayer {
  Tensor<T> weight;  // [C_out, C_in, k, k, k]
  Tensor<T> bias;
  Conv3dSpec spec;

  static Conv3dLayer create(std::int64_t in_ch, std::int64_t out_ch, std::int64_t kernel,
                            std::int64_t stride, std::int64_t padding, Rng& rng,
                            double init_std = 0.02) {
    Conv3dLayer layer;
    layer.weight =
        Tensor<T>::randn({out_ch, in_ch, kernel, kernel, kernel}, rng, 0.0, init_std, true);
    layer.bias = Tensor<T>::zeros({out_ch}, true);
    layer.spec = {stride, padding};
    return layer;
  }

  Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape) const {
    return conv3d(x, weight, bias, spec, tape);
  }

  void visit_params(const std::string& prefix, const ParamVisitor<T>& fn) {
    fn(prefix + ".weight", weight);
    fn(prefix + ".bias", bias);
  }
};

template <typename T>
struct ConvTranspose3dLayer {
  Tensor<T> weight;  // [C_in, C_out, k, k, k]
  Tensor<T> bias;
  ConvTranspose3dSpec spec;

  static ConvTranspose3dLayer create(std::int64_t in_ch, std::int64_t out_ch,
                                     std::int64_t kernel, std::int64_t stride,
                                     std::int64_t padding, std::int64_t output_padding,
                                     Rng& rng, double init_std = 0.02) {
    ConvTranspose3dLayer layer;
    layer.weight =
        Tensor<T>::randn({in_ch, out_ch, kernel, kernel, kernel}, rng, 0.0, init_std, true);
    layer.bias = Tensor<T>::zeros({out_ch}, true);
    layer.spec = {stride, padding, output_padding};
    return layer;
  }

  Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape) const {
    return conv_transpose3d(x, weight, bias, spec, tape);
  }

  void visit_params(const std::string& prefix, const ParamVisitor<T>& fn) {
    fn(prefix + ".weight", weight);
    fn(prefix + ".bias", bias);
  }
};

}  // namespace ctcycle
