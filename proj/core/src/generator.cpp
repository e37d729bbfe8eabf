#include "ctcycle/generator.hpp"

#include <cmath>
#include <string>

namespace ctcycle {

template <typename T>
Tensor<T> self_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                         Tape<T>* tape) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) {
    throw ShapeError("self_attention: Q, K, V must be matrices");
  }
  if (q.extent(1) != k.extent(1)) {
    throw ShapeError("self_attention: d_q " + std::to_string(q.extent(1)) + " != d_k " +
                     std::to_string(k.extent(1)));
  }
  if (k.extent(0) != v.extent(0)) {
    throw ShapeError("self_attention: n_k " + std::to_string(k.extent(0)) + " != n_v " +
                     std::to_string(v.extent(0)));
  }
  const T inv_sqrt_d = static_cast<T>(1.0 / std::sqrt(static_cast<double>(q.extent(1))));
  auto logits = scale(matmul(q, transpose2d(k, tape), tape), inv_sqrt_d, tape);
  auto weights = softmax(logits, std::int64_t{1}, tape);
  return matmul(weights, v, tape);
}

void GeneratorConfig::validate() const {
  if (image_size < 16 || image_size % 8 != 0) {
    throw ValidationError("generator: image_size must be >= 16 and divisible by 8, got " +
                          std::to_string(image_size));
  }
  if (grid() % 2 != 0) {
    throw ValidationError("generator: transformer grid must be even for the key/value stride");
  }
  if (transformer_channels != 4 * base_width) {
    throw ValidationError("generator: transformer_channels must be 4 * base_width");
  }
  if (heads < 1 || head_dim < 1 || transformer_blocks < 1) {
    throw ValidationError("generator: heads, head_dim and transformer_blocks must be positive");
  }
}

GeneratorConfig GeneratorConfig::miniature(std::int64_t image_size) {
  GeneratorConfig c;
  c.base_width = 4;
  c.transformer_channels = 16;
  c.head_dim = 8;
  c.pointwise_hidden = 64;
  c.image_size = image_size;
  return c;
}

namespace {

template <typename T>
ProjectionBlock<T> make_projection(const GeneratorConfig& cfg, std::int64_t stride, Rng& rng) {
  ProjectionBlock<T> p;
  const auto c = cfg.transformer_channels;
  p.depthwise = Conv2dLayer<T>::create(c, c, 3, stride, 1, c, rng, cfg.init_std);
  p.norm = BatchNorm2dLayer<T>::create(c, cfg.bn_momentum, cfg.bn_eps);
  p.pointwise = Conv2dLayer<T>::create(c, cfg.head_dim, 1, 1, 0, 1, rng, cfg.init_std);
  return p;
}

template <typename T>
Tensor<T> projection_maps(const ProjectionBlock<T>& p, const Tensor<T>& x, NormMode mode,
                          Tape<T>* tape, bool update_running) {
  auto y = p.depthwise.forward(x, tape);
  y = p.norm.forward(y, mode, tape, update_running);
  return p.pointwise.forward(y, tape);
}

template <typename T>
void visit_projection(ProjectionBlock<T>& p, const std::string& prefix,
                      const ParamVisitor<T>& fn) {
  p.depthwise.visit_params(prefix + ".depthwise", fn);
  p.norm.visit_params(prefix + ".norm", fn);
  p.pointwise.visit_params(prefix + ".pointwise", fn);
}

}  // namespace

template <typename T>
GeneratorModel<T> GeneratorModel<T>::create(const GeneratorConfig& config, Rng& rng) {
  config.validate();
  GeneratorModel<T> m;
  m.config = config;
  const auto b = config.base_width;
  const auto c = config.transformer_channels;
  const auto std_ = config.init_std;

  m.stem = Conv2dLayer<T>::create(config.input_channels, b, 7, 1, 3, 1, rng, std_);
  m.stem_norm = BatchNorm2dLayer<T>::create(b, config.bn_momentum, config.bn_eps);
  m.down1 = Conv2dLayer<T>::create(b, b, 3, 2, 1, 1, rng, std_);
  m.down1_norm = BatchNorm2dLayer<T>::create(b, config.bn_momentum, config.bn_eps);
  m.down2 = Conv2dLayer<T>::create(b, 2 * b, 3, 2, 1, 1, rng, std_);
  m.down2_norm = BatchNorm2dLayer<T>::create(2 * b, config.bn_momentum, config.bn_eps);
  m.down3 = Conv2dLayer<T>::create(2 * b, c, 3, 2, 1, 1, rng, std_);
  m.down3_norm = BatchNorm2dLayer<T>::create(c, config.bn_momentum, config.bn_eps);

  m.blocks.reserve(static_cast<std::size_t>(config.transformer_blocks));
  for (std::int64_t blk = 0; blk < config.transformer_blocks; ++blk) {
    TransformerBlock<T> block;
    block.heads.reserve(static_cast<std::size_t>(config.heads));
    for (std::int64_t h = 0; h < config.heads; ++h) {
      AttentionHead<T> head;
      head.query = make_projection<T>(config, 1, rng);
      head.key = make_projection<T>(config, 2, rng);
      head.value = make_projection<T>(config, 2, rng);
      block.heads.push_back(std::move(head));
    }
    block.attn_out =
        Conv2dLayer<T>::create(config.heads * config.head_dim, c, 1, 1, 0, 1, rng, std_);
    block.norm1 = BatchNorm2dLayer<T>::create(c, config.bn_momentum, config.bn_eps);
    block.norm2 = BatchNorm2dLayer<T>::create(c, config.bn_momentum, config.bn_eps);
    block.pw1 = Conv2dLayer<T>::create(c, config.pointwise_hidden, 1, 1, 0, 1, rng, std_);
    block.pw2 = Conv2dLayer<T>::create(config.pointwise_hidden, c, 1, 1, 0, 1, rng, std_);
    m.blocks.push_back(std::move(block));
  }

  m.up1 = ConvTranspose2dLayer<T>::create(c, c, 3, 2, 1, 1, rng, std_);
  m.up1_norm = BatchNorm2dLayer<T>::create(c, config.bn_momentum, config.bn_eps);
  m.up2 = ConvTranspose2dLayer<T>::create(c, 2 * b, 3, 2, 1, 1, rng, std_);
  m.up2_norm = BatchNorm2dLayer<T>::create(2 * b, config.bn_momentum, config.bn_eps);
  m.up3 = ConvTranspose2dLayer<T>::create(2 * b, b, 3, 2, 1, 1, rng, std_);
  m.up3_norm = BatchNorm2dLayer<T>::create(b, config.bn_momentum, config.bn_eps);
  m.final_conv = Conv2dLayer<T>::create(b, config.input_channels, 7, 1, 3, 1, rng, std_);
  return m;
}

namespace {

template <typename T>
Tensor<T> to_batched(const Tensor<T>& x, Tape<T>* tape, bool& was_single) {
  was_single = x.rank() == 3;
  if (!was_single) return x;
  Shape s = {1, x.extent(0), x.extent(1), x.extent(2)};
  return reshape(x, std::move(s), tape);
}

template <typename T>
Tensor<T> from_batched(const Tensor<T>& x, bool was_single, Tape<T>* tape) {
  if (!was_single) return x;
  Shape s = {x.extent(1), x.extent(2), x.extent(3)};
  return reshape(x, std::move(s), tape);
}

}  // namespace

template <typename T>
Tensor<T> GeneratorModel<T>::downsample(const Tensor<T>& x, NormMode mode, Tape<T>* tape,
                                        bool update_running) const {
  bool single = false;
  auto h = to_batched(x, tape, single);
  if (h.extent(1) != config.input_channels || h.extent(2) != config.image_size ||
      h.extent(3) != config.image_size) {
    throw ShapeError("downsample: expected " + std::to_string(config.input_channels) + "x" +
                     std::to_string(config.image_size) + "x" + std::to_string(config.image_size) +
                     " input, got " + shape_str(x.shape()));
  }
  h = relu(stem_norm.forward(stem.forward(h, tape), mode, tape, update_running), tape);
  h = relu(down1_norm.forward(down1.forward(h, tape), mode, tape, update_running), tape);
  h = relu(down2_norm.forward(down2.forward(h, tape), mode, tape, update_running), tape);
  h = relu(down3_norm.forward(down3.forward(h, tape), mode, tape, update_running), tape);
  return from_batched(h, single, tape);
}

template <typename T>
Tensor<T> GeneratorModel<T>::conv_projection(std::int64_t block, std::int64_t head,
                                             Projection which, const Tensor<T>& grid_tensor,
                                             NormMode mode, Tape<T>* tape,
                                             bool update_running) const {
  if (block < 0 || block >= static_cast<std::int64_t>(blocks.size())) {
    throw ValidationError("conv_projection: block index out of range");
  }
  if (head < 0 || head >= static_cast<std::int64_t>(blocks[0].heads.size())) {
    throw ValidationError("conv_projection: head index out of range");
  }
  if (grid_tensor.rank() != 3) {
    throw ShapeError("conv_projection: expected a [c,h,w] tensor");
  }
  const auto& ah = blocks[static_cast<std::size_t>(block)].heads[static_cast<std::size_t>(head)];
  const ProjectionBlock<T>& proj = which == Projection::Query  ? ah.query
                                   : which == Projection::Key ? ah.key
                                                              : ah.value;
  auto maps = projection_maps(proj, grid_tensor, mode, tape, update_running);
  return tokens_from_chw(maps, tape);
}

template <typename T>
Tensor<T> GeneratorModel<T>::transformer_block(std::int64_t block, const Tensor<T>& x,
                                               NormMode mode, Tape<T>* tape,
                                               bool update_running) const {
  if (block < 0 || block >= static_cast<std::int64_t>(blocks.size())) {
    throw ValidationError("transformer_block: block index out of range");
  }
  const auto& blk = blocks[static_cast<std::size_t>(block)];
  bool single = false;
  auto input = to_batched(x, tape, single);
  const std::int64_t n_batch = input.extent(0);
  const std::int64_t h = input.extent(2), w = input.extent(3);
  if (input.extent(1) != config.transformer_channels) {
    throw ShapeError("transformer_block: expected " + std::to_string(config.transformer_channels) +
                     " channels, got " + shape_str(x.shape()));
  }

  // Batched conv projections per head, then per-sample attention.
  std::vector<Tensor<T>> q_maps, k_maps, v_maps;
  for (const auto& head : blk.heads) {
    q_maps.push_back(projection_maps(head.query, input, mode, tape, update_running));
    k_maps.push_back(projection_maps(head.key, input, mode, tape, update_running));
    v_maps.push_back(projection_maps(head.value, input, mode, tape, update_running));
  }

  std::vector<Tensor<T>> per_sample;
  per_sample.reserve(static_cast<std::size_t>(n_batch));
  for (std::int64_t n = 0; n < n_batch; ++n) {
    std::vector<Tensor<T>> head_outputs;
    head_outputs.reserve(blk.heads.size());
    for (std::size_t i = 0; i < blk.heads.size(); ++i) {
      auto q = tokens_from_chw(select_batch(q_maps[i], n, tape), tape);
      auto k = tokens_from_chw(select_batch(k_maps[i], n, tape), tape);
      auto v = tokens_from_chw(select_batch(v_maps[i], n, tape), tape);
      auto z = self_attention(q, k, v, tape);
      head_outputs.push_back(chw_from_tokens(z, h, w, tape));
    }
    per_sample.push_back(concat(std::span<const Tensor<T>>(head_outputs), 0, tape));
  }
  auto z_cat = stack_batch(std::span<const Tensor<T>>(per_sample), tape);
  auto z_star = blk.attn_out.forward(z_cat, tape);

  auto r1 = blk.norm1.forward(add(input, z_star, tape), mode, tape, update_running);
  auto pw = blk.pw2.forward(gelu(blk.pw1.forward(r1, tape), tape), tape);
  auto out = blk.norm2.forward(add(r1, pw, tape), mode, tape, update_running);
  return from_batched(out, single, tape);
}

template <typename T>
Tensor<T> GeneratorModel<T>::upsample(const Tensor<T>& x, NormMode mode, Tape<T>* tape,
                                      bool update_running) const {
  bool single = false;
  auto h = to_batched(x, tape, single);
  if (h.extent(1) != config.transformer_channels || h.extent(2) != config.grid() ||
      h.extent(3) != config.grid()) {
    throw ShapeError("upsample: expected " + std::to_string(config.transformer_channels) + "x" +
                     std::to_string(config.grid()) + "x" + std::to_string(config.grid()) +
                     " input, got " + shape_str(x.shape()));
  }
  h = relu(up1_norm.forward(up1.forward(h, tape), mode, tape, update_running), tape);
  h = relu(up2_norm.forward(up2.forward(h, tape), mode, tape, update_running), tape);
  h = relu(up3_norm.forward(up3.forward(h, tape), mode, tape, update_running), tape);
  h = final_conv.forward(h, tape);
  return from_batched(h, single, tape);
}

template <typename T>
Tensor<T> GeneratorModel<T>::generate(const Tensor<T>& x, NormMode mode, Tape<T>* tape,
                                      bool update_running) const {
  auto h = downsample(x, mode, tape, update_running);
  for (std::size_t blk = 0; blk < blocks.size(); ++blk) {
    h = transformer_block(static_cast<std::int64_t>(blk), h, mode, tape, update_running);
  }
  return upsample(h, mode, tape, update_running);
}

template <typename T>
void GeneratorModel<T>::visit_params(const ParamVisitor<T>& fn) {
  stem.visit_params("stem", fn);
  stem_norm.visit_params("stem_norm", fn);
  down1.visit_params("down1", fn);
  down1_norm.visit_params("down1_norm", fn);
  down2.visit_params("down2", fn);
  down2_norm.visit_params("down2_norm", fn);
  down3.visit_params("down3", fn);
  down3_norm.visit_params("down3_norm", fn);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const std::string bp = "block" + std::to_string(b);
    auto& blk = blocks[b];
    for (std::size_t h = 0; h < blk.heads.size(); ++h) {
      const std::string hp = bp + ".head" + std::to_string(h);
      visit_projection(blk.heads[h].query, hp + ".q", fn);
      visit_projection(blk.heads[h].key, hp + ".k", fn);
      visit_projection(blk.heads[h].value, hp + ".v", fn);
    }
    blk.attn_out.visit_params(bp + ".attn_out", fn);
    blk.norm1.visit_params(bp + ".norm1", fn);
    blk.norm2.visit_params(bp + ".norm2", fn);
    blk.pw1.visit_params(bp + ".pw1", fn);
    blk.pw2.visit_params(bp + ".pw2", fn);
  }
  up1.visit_params("up1", fn);
  up1_norm.visit_params("up1_norm", fn);
  up2.visit_params("up2", fn);
  up2_norm.visit_params("up2_norm", fn);
  up3.visit_params("up3", fn);
  up3_norm.visit_params("up3_norm", fn);
  final_conv.visit_params("final", fn);
}

template <typename T>
void GeneratorModel<T>::visit_buffers(const ParamVisitor<T>& fn) {
  stem_norm.visit_buffers("stem_norm", fn);
  down1_norm.visit_buffers("down1_norm", fn);
  down2_norm.visit_buffers("down2_norm", fn);
  down3_norm.visit_buffers("down3_norm", fn);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const std::string bp = "block" + std::to_string(b);
    auto& blk = blocks[b];
    for (std::size_t h = 0; h < blk.heads.size(); ++h) {
      const std::string hp = bp + ".head" + std::to_string(h);
      blk.heads[h].query.norm.visit_buffers(hp + ".q.norm", fn);
      blk.heads[h].key.norm.visit_buffers(hp + ".k.norm", fn);
      blk.heads[h].value.norm.visit_buffers(hp + ".v.norm", fn);
    }
    blk.norm1.visit_buffers(bp + ".norm1", fn);
    blk.norm2.visit_buffers(bp + ".norm2", fn);
  }
  up1_norm.visit_buffers("up1_norm", fn);
  up2_norm.visit_buffers("up2_norm", fn);
  up3_norm.visit_buffers("up3_norm", fn);
}

template <typename T>
std::int64_t GeneratorModel<T>::parameter_count() {
  std::int64_t total = 0;
  visit_params([&](const std::string&, Tensor<T>& p) { total += p.size(); });
  return total;
}

template Tensor<float> self_attention<float>(const Tensor<float>&, const Tensor<float>&,
                                             const Tensor<float>&, Tape<float>*);
template Tensor<double> self_attention<double>(const Tensor<double>&, const Tensor<double>&,
                                               const Tensor<double>&, Tape<double>*);
template struct GeneratorModel<float>;
template struct GeneratorModel<double>;

}  // namespace ctcycle
