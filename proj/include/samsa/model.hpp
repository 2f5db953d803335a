#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "samsa/attention.hpp"
#include "samsa/checkpoint.hpp"
#include "samsa/ops.hpp"
#include "samsa/tensor.hpp"

namespace samsa {

enum class AttentionKind { samsa, full };
enum class HeadKind { mean_pool, per_token };

struct ModelConfig {
  AttentionConfig attention;
  AttentionKind kind = AttentionKind::samsa;
  std::size_t n_depth = 2;
  std::size_t in_dim = 17;
  std::size_t out_dim = 16;
  HeadKind head = HeadKind::mean_pool;
  bool sinusoidal_pe = true;
};

// Fixed sinusoidal encodings: even columns sin, odd columns cos.
template <class Real>
Tensor<Real> sinusoidal_encoding(std::size_t n, std::size_t d) {
  std::vector<Real> pe(n * d);
  for (std::size_t pos = 0; pos < n; ++pos)
    for (std::size_t c = 0; c < d; ++c) {
      const double freq = std::pow(10000.0, -static_cast<double>(c - c % 2) / static_cast<double>(d));
      const double angle = static_cast<double>(pos) * freq;
      pe[pos * d + c] = static_cast<Real>(c % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  return Tensor<Real>::matrix(n, d, std::move(pe));
}

// Layers sharing one zero-initialised residual scalar, followed by the task
// head (RMSNorm, optional mean pooling, affine map).
template <class Real>
class TransformerStack {
 public:
  TransformerStack() = default;
  TransformerStack(const ModelConfig& cfg, std::mt19937_64& gen) : cfg_(cfg) {
    cfg_.attention.validate();
    for (std::size_t l = 0; l < cfg.n_depth; ++l)
      layers_.push_back(LayerParams<Real>::init(cfg_.attention, gen));
    alpha_ = Tensor<Real>::scalar(Real(0), true);
    final_norm_ = Tensor<Real>::full({cfg.attention.d_model}, Real(1), true);
    head_w_ = LayerParams<Real>::uniform(cfg.attention.d_model, cfg.out_dim, gen);
    head_b_ = Tensor<Real>::zeros({1, cfg.out_dim}, true);
  }

  Tensor<Real> forward_layers(Tensor<Real> h, GumbelRng* rng,
                              std::vector<LayerTrace>* traces = nullptr) const {
    for (const auto& layer : layers_) {
      if (cfg_.kind == AttentionKind::samsa) {
        LayerTrace trace;
        h = samsa_layer_forward(h, layer, alpha_, cfg_.attention, rng, traces ? &trace : nullptr);
        if (traces) traces->push_back(std::move(trace));
      } else {
        h = full_attention_layer_forward(h, layer, alpha_, cfg_.attention, rng);
      }
    }
    return h;
  }

  Tensor<Real> head(const Tensor<Real>& h) const {
    auto y = rms_norm(h, final_norm_);
    if (cfg_.head == HeadKind::mean_pool) y = mean_rows(y);
    return linear(y, head_w_, head_b_);
  }

  std::vector<NamedTensor<Real>> named_parameters() const {
    std::vector<NamedTensor<Real>> out;
    out.push_back({"alpha", alpha_});
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      auto named = layers_[l].named("layers." + std::to_string(l) + ".");
      out.insert(out.end(), named.begin(), named.end());
    }
    out.push_back({"head.norm", final_norm_});
    out.push_back({"head.w", head_w_});
    out.push_back({"head.b", head_b_});
    return out;
  }

  ModelConfig& config() { return cfg_; }
  const ModelConfig& config() const { return cfg_; }
  Tensor<Real>& alpha() { return alpha_; }
  std::vector<LayerParams<Real>>& layers() { return layers_; }
  const std::vector<LayerParams<Real>>& layers() const { return layers_; }

 private:
  ModelConfig cfg_;
  std::vector<LayerParams<Real>> layers_;
  Tensor<Real> alpha_, final_norm_, head_w_, head_b_;
};

// Token features -> affine embedding (+ sinusoidal positions) -> stack -> head.
template <class Real>
class SequenceModel {
 public:
  SequenceModel(const ModelConfig& cfg, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    embed_w_ = LayerParams<Real>::uniform(cfg.in_dim, cfg.attention.d_model, gen);
    embed_b_ = Tensor<Real>::zeros({1, cfg.attention.d_model}, true);
    stack_ = TransformerStack<Real>(cfg, gen);
  }

  Tensor<Real> embed(const Tensor<Real>& tokens) const {
    auto h = linear(tokens, embed_w_, embed_b_);
    if (config().sinusoidal_pe) h = add(h, positions(tokens.rows()));
    return h;
  }

  Tensor<Real> forward(const Tensor<Real>& tokens, GumbelRng* rng = nullptr,
                       std::vector<LayerTrace>* traces = nullptr) const {
    return stack_.head(stack_.forward_layers(embed(tokens), rng, traces));
  }

  std::vector<NamedTensor<Real>> named_parameters() const {
    std::vector<NamedTensor<Real>> out{{"embed.w", embed_w_}, {"embed.b", embed_b_}};
    auto rest = stack_.named_parameters();
    out.insert(out.end(), rest.begin(), rest.end());
    return out;
  }

  void set_training(bool on) { stack_.config().attention.training = on; }
  bool training() const { return config().attention.training; }
  const ModelConfig& config() const { return stack_.config(); }
  TransformerStack<Real>& stack() { return stack_; }
  const TransformerStack<Real>& stack() const { return stack_; }

 private:
  const Tensor<Real>& positions(std::size_t n) const {
    auto it = pe_cache_.find(n);
    if (it == pe_cache_.end())
      it = pe_cache_.emplace(n, sinusoidal_encoding<Real>(n, config().attention.d_model)).first;
    return it->second;
  }

  Tensor<Real> embed_w_, embed_b_;
  TransformerStack<Real> stack_;
  mutable std::map<std::size_t, Tensor<Real>> pe_cache_;
};

template <class Real>
std::vector<Tensor<Real>> tensors_of(const std::vector<NamedTensor<Real>>& named) {
  std::vector<Tensor<Real>> out;
  out.reserve(named.size());
  for (const auto& n : named) out.push_back(n.tensor);
  return out;
}

}  // namespace samsa
