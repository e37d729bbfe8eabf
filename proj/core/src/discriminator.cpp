#include "ctcycle/discriminator.hpp"

#include <string>

namespace ctcycle {

void DiscriminatorConfig::validate() const {
  if (in_channels < 1 || base_width < 1 || strided_layers < 1) {
    throw ValidationError("discriminator: channels, width and depth must be positive");
  }
}

DiscriminatorConfig DiscriminatorConfig::miniature() {
  DiscriminatorConfig c;
  c.base_width = 8;
  c.strided_layers = 2;
  return c;
}

std::int64_t DiscriminatorConfig::score_extent(std::int64_t input_extent) const {
  std::int64_t e = input_extent;
  for (std::int64_t i = 0; i < strided_layers; ++i) e = (e + 2 - 4) / 2 + 1;  // k4 s2 p1
  e = e - 1;  // k4 s1 p1 stage
  e = e - 1;  // k4 s1 p1 score conv
  if (e < 1) {
    throw ShapeError("discriminator: input extent " + std::to_string(input_extent) +
                     " is smaller than the receptive field of the layer stack");
  }
  return e;
}

template <typename T>
DiscriminatorModel<T> DiscriminatorModel<T>::create(const DiscriminatorConfig& config,
                                                    Rng& rng) {
  config.validate();
  DiscriminatorModel<T> m;
  m.config = config;
  std::int64_t ch = config.in_channels;
  std::int64_t width = config.base_width;
  for (std::int64_t i = 0; i < config.strided_layers; ++i) {
    m.convs.push_back(Conv2dLayer<T>::create(ch, width, 4, 2, 1, 1, rng, config.init_std));
    m.normalized.push_back(i > 0);  // first conv is not normalized
    ch = width;
    width *= 2;
  }
  m.convs.push_back(Conv2dLayer<T>::create(ch, width, 4, 1, 1, 1, rng, config.init_std));
  m.normalized.push_back(true);
  m.convs.push_back(Conv2dLayer<T>::create(width, 1, 4, 1, 1, 1, rng, config.init_std));
  m.normalized.push_back(false);
  return m;
}

template <typename T>
Tensor<T> DiscriminatorModel<T>::discriminate(const Tensor<T>& x, Tape<T>* tape) const {
  if (x.rank() != 3 && x.rank() != 4) {
    throw ShapeError("discriminate: input must be [C,S,S] or [N,C,S,S]");
  }
  config.score_extent(x.extent(x.rank() - 1));  // receptive-field check up front
  config.score_extent(x.extent(x.rank() - 2));
  auto h = x;
  const std::size_t last = convs.size() - 1;
  for (std::size_t i = 0; i < convs.size(); ++i) {
    h = convs[i].forward(h, tape);
    if (i == last) break;
    if (normalized[i]) h = instance_norm(h, static_cast<T>(config.norm_eps), tape);
    h = leaky_relu(h, static_cast<T>(config.leaky_slope), tape);
  }
  return h;
}

template <typename T>
void DiscriminatorModel<T>::visit_params(const ParamVisitor<T>& fn) {
  for (std::size_t i = 0; i < convs.size(); ++i) {
    convs[i].visit_params("conv" + std::to_string(i), fn);
  }
}

template <typename T>
std::int64_t DiscriminatorModel<T>::parameter_count() {
  std::int64_t total = 0;
  visit_params([&](const std::string&, Tensor<T>& p) { total += p.size(); });
  return total;
}

template struct DiscriminatorModel<float>;
template struct DiscriminatorModel<double>;

}  // namespace ctcycle
