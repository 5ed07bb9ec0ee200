// SPDX-License-Identifier: Apache-2.0
#include "hialign/encoders.hpp"

#include <cmath>

#include "hialign/errors.hpp"

namespace hialign {

void EncoderConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("encoder config: " + msg); };
  if (input_dim == 0 || frame_dim == 0 || hidden == 0 || ffn == 0 || proto_dim == 0) fail("dimensions must be positive");
  if (heads == 0 || hidden % heads != 0) fail("hidden must be divisible by heads");
  if (head_dim() % 2 != 0) fail("head dimension must be even for rotary embeddings");
  if (window == 0 || window % 2 == 0) fail("attention window must be odd");
  if (downsample_factor == 0) fail("downsample_factor must be positive");
  if (temporal_layers == 0) fail("temporal encoder needs at least one layer");
  if (lora_rank > hidden) fail("lora_rank exceeds the hidden width");
  if (!(lora_dropout >= 0.0 && lora_dropout < 1.0) || !(dropout >= 0.0 && dropout < 1.0)) fail("dropout outside [0, 1)");
  if (!(rope_base > 0.0)) fail("rope_base must be positive");
  if (max_decode_len == 0) fail("max_decode_len must be positive");
}

// --- layers -----------------------------------------------------------------

void init_linear(ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng, bool bias,
                 bool trainable) {
  Tensor w({out, in});
  const double std = 1.0 / std::sqrt(static_cast<double>(in));
  for (auto& v : w.storage()) v = std * rng.normal();
  store.add(prefix + ".weight", std::move(w), trainable);
  if (bias) store.add(prefix + ".bias", Tensor({out}), trainable);
}

Var apply_linear(Forward& f, const std::string& prefix, Var x) {
  const std::string bias = prefix + ".bias";
  if (f.has(bias)) return ops::linear(x, f.p(prefix + ".weight"), f.p(bias));
  return ops::linear(x, f.p(prefix + ".weight"));
}

void init_layer_norm(ParameterStore& store, const std::string& prefix, std::size_t dim, bool trainable) {
  store.add(prefix + ".gamma", Tensor({dim}, 1.0), trainable);
  store.add(prefix + ".beta", Tensor({dim}), trainable);
}

Var apply_layer_norm(Forward& f, const std::string& prefix, Var x) {
  return ops::layer_norm(x, f.p(prefix + ".gamma"), f.p(prefix + ".beta"));
}

Var lora_linear(Var x, Var w, std::optional<Var> b, std::optional<Var> a, std::optional<Var> bmat, const LoraSpec& spec,
                Rng* rng, bool training) {
  Var base = ops::linear(x, w, b);
  if (spec.rank == 0 || !a || !bmat) return base;
  const std::size_t in = x.value().cols(), out = w.value().rows();
  if (spec.rank > std::min(in, out)) {
    throw ConfigError("lora rank " + std::to_string(spec.rank) + " exceeds min(" + std::to_string(in) + ", " +
                      std::to_string(out) + ")");
  }
  Var dx = ops::dropout(x, spec.dropout, rng, training);
  Var delta = ops::linear(ops::linear(dx, *a), *bmat);
  return ops::add(base, ops::scale(delta, spec.alpha / static_cast<double>(spec.rank)));
}

void init_lora_linear(ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                      const LoraSpec& spec, Rng& rng) {
  init_linear(store, prefix, in, out, rng, true, false);
  if (spec.rank == 0) return;
  Tensor a({spec.rank, in});
  const double std = 1.0 / std::sqrt(static_cast<double>(in));
  for (auto& v : a.storage()) v = std * rng.normal();
  store.add(prefix + ".lora_a", std::move(a));
  store.add(prefix + ".lora_b", Tensor({out, spec.rank}));
}

Var apply_lora_linear(Forward& f, const std::string& prefix, Var x, const LoraSpec& spec) {
  std::optional<Var> a, b;
  if (f.has(prefix + ".lora_a")) {
    a = f.p(prefix + ".lora_a");
    b = f.p(prefix + ".lora_b");
  }
  return lora_linear(x, f.p(prefix + ".weight"), f.p(prefix + ".bias"), a, b, spec, f.rng, f.training);
}

namespace {

void init_attention(ParameterStore& store, const std::string& prefix, const BlockSpec& spec, Rng& rng) {
  const bool trainable = spec.trainable && !spec.lora;
  for (const char* name : {"q", "k", "v", "o"}) {
    const std::string p = prefix + "." + name;
    const bool adapted = spec.lora && (name[0] == 'q' || name[0] == 'v');
    if (adapted) {
      init_lora_linear(store, p, spec.dim, spec.dim, *spec.lora, rng);
    } else {
      init_linear(store, p, spec.dim, spec.dim, rng, true, trainable);
    }
  }
}

Var project(Forward& f, const std::string& prefix, const BlockSpec& spec, Var x) {
  if (spec.lora && f.has(prefix + ".lora_a")) return apply_lora_linear(f, prefix, x, *spec.lora);
  return apply_linear(f, prefix, x);
}

Var attend(Forward& f, const std::string& prefix, const BlockSpec& spec, Var x, Var source,
           const ops::AttentionSpec& attn) {
  Var q = project(f, prefix + ".q", spec, x);
  Var k = project(f, prefix + ".k", spec, source);
  Var v = project(f, prefix + ".v", spec, source);
  return apply_linear(f, prefix + ".o", ops::attention(q, k, v, attn));
}

Var residual(Forward& f, const BlockSpec& spec, Var x, Var branch) {
  return ops::add(x, ops::dropout(branch, spec.dropout, f.rng, f.training));
}

}  // namespace

void init_block(ParameterStore& store, const std::string& prefix, const BlockSpec& spec, Rng& rng) {
  const bool trainable = spec.trainable && !spec.lora;
  init_layer_norm(store, prefix + ".ln1", spec.dim, trainable);
  init_attention(store, prefix + ".attn", spec, rng);
  if (spec.cross_attn) {
    init_layer_norm(store, prefix + ".ln_cross", spec.dim, trainable);
    init_attention(store, prefix + ".cross", spec, rng);
  }
  init_layer_norm(store, prefix + ".ln2", spec.dim, trainable);
  init_linear(store, prefix + ".ffn1", spec.dim, spec.ffn, rng, true, trainable);
  init_linear(store, prefix + ".ffn2", spec.ffn, spec.dim, rng, true, trainable);
}

Var apply_block(Forward& f, const std::string& prefix, const BlockSpec& spec, Var x, std::optional<Var> memory) {
  Var h = apply_layer_norm(f, prefix + ".ln1", x);
  x = residual(f, spec, x, attend(f, prefix + ".attn", spec, h, h, spec.self_attn));
  if (spec.cross_attn) {
    if (!memory) throw ContractError("block '" + prefix + "' needs cross-attention memory");
    ops::AttentionSpec cross{spec.self_attn.heads, ops::MaskKind::kNone, 0, false, spec.self_attn.rope_base};
    Var hc = apply_layer_norm(f, prefix + ".ln_cross", x);
    x = residual(f, spec, x, attend(f, prefix + ".cross", spec, hc, *memory, cross));
  }
  Var h2 = apply_layer_norm(f, prefix + ".ln2", x);
  Var ff = apply_linear(f, prefix + ".ffn2", ops::gelu(apply_linear(f, prefix + ".ffn1", h2)));
  return residual(f, spec, x, ff);
}

// --- encoders ---------------------------------------------------------------

void init_frame_encoder(ParameterStore& store, const EncoderConfig& cfg, Rng& rng) {
  init_linear(store, "frame.proj", cfg.input_dim, cfg.frame_dim, rng);
  store.add("frame.bn.gamma", Tensor({cfg.frame_dim}, 1.0));
  store.add("frame.bn.beta", Tensor({cfg.frame_dim}));
  store.add("frame.bn.running_mean", Tensor({cfg.frame_dim}), false);
  store.add("frame.bn.running_var", Tensor({cfg.frame_dim}, 1.0), false);
}

Var frame_encode(Forward& f, const EncoderConfig& cfg, Var raw) {
  const auto& rv = raw.value();
  if (rv.rank() != 2 || rv.rows() == 0) throw DomainError("frame_encode: empty input " + shape_str(rv.shape()));
  if (rv.cols() != cfg.input_dim) {
    throw DimensionError("frame_encode: input width " + std::to_string(rv.cols()) + ", config expects " +
                         std::to_string(cfg.input_dim));
  }
  Var x = apply_linear(f, "frame.proj", raw);
  // A frozen frame encoder keeps its running statistics fixed as well.
  const bool batch_stats = f.training && f.params.get("frame.bn.gamma").receives_grad();
  ops::BatchNormState st{&f.params.value("frame.bn.running_mean"), &f.params.value("frame.bn.running_var")};
  return ops::batch_norm_1d(x, f.p("frame.bn.gamma"), f.p("frame.bn.beta"), st, batch_stats);
}

BlockSpec temporal_block_spec(const EncoderConfig& cfg) {
  BlockSpec s;
  s.dim = cfg.hidden;
  s.ffn = cfg.ffn;
  s.self_attn = ops::AttentionSpec{cfg.heads, ops::MaskKind::kBand, (cfg.window - 1) / 2, true, cfg.rope_base};
  s.dropout = cfg.dropout;
  return s;
}

void init_temporal_encoder(ParameterStore& store, const EncoderConfig& cfg, Rng& rng) {
  if (cfg.frame_dim != cfg.hidden) init_linear(store, "temporal.in", cfg.frame_dim, cfg.hidden, rng);
  const auto spec = temporal_block_spec(cfg);
  for (std::size_t i = 0; i < cfg.temporal_layers; ++i) init_block(store, "temporal." + std::to_string(i), spec, rng);
  init_layer_norm(store, "temporal.norm", cfg.hidden);
}

std::size_t segment_length(const EncoderConfig& cfg, std::size_t frames) {
  if (cfg.downsample_after_layer > cfg.temporal_layers) return frames;
  return (frames + cfg.downsample_factor - 1) / cfg.downsample_factor;
}

Var temporal_encode(Forward& f, const EncoderConfig& cfg, Var frames) {
  Var x = f.has("temporal.in.weight") ? apply_linear(f, "temporal.in", frames) : frames;
  const auto spec = temporal_block_spec(cfg);
  for (std::size_t i = 0; i < cfg.temporal_layers; ++i) {
    if (i == cfg.downsample_after_layer) x = ops::temporal_downsample(x, cfg.downsample_factor);
    x = apply_block(f, "temporal." + std::to_string(i), spec, x);
  }
  if (cfg.downsample_after_layer == cfg.temporal_layers) x = ops::temporal_downsample(x, cfg.downsample_factor);
  return apply_layer_norm(f, "temporal.norm", x);
}

BlockSpec llm_block_spec(const EncoderConfig& cfg) {
  BlockSpec s;
  s.dim = cfg.hidden;
  s.ffn = cfg.ffn;
  s.self_attn = ops::AttentionSpec{cfg.heads, ops::MaskKind::kNone, 0, true, cfg.rope_base};
  s.lora = LoraSpec{cfg.lora_rank, cfg.lora_alpha, cfg.lora_dropout};
  s.dropout = cfg.dropout;
  return s;
}

void init_llm_encoder(ParameterStore& store, const EncoderConfig& cfg, Rng& rng) {
  const auto spec = llm_block_spec(cfg);
  for (std::size_t i = 0; i < cfg.llm_layers; ++i) init_block(store, "llm." + std::to_string(i), spec, rng);
  init_layer_norm(store, "llm.norm", cfg.hidden, false);
}

Var llm_encode(Forward& f, const EncoderConfig& cfg, Var segments) {
  const auto spec = llm_block_spec(cfg);
  Var x = segments;
  for (std::size_t i = 0; i < cfg.llm_layers; ++i) x = apply_block(f, "llm." + std::to_string(i), spec, x);
  return apply_layer_norm(f, "llm.norm", x);
}

void init_text_encoder(ParameterStore& store, const EncoderConfig& cfg, std::size_t vocab_size, Rng& rng) {
  Tensor embed({vocab_size, cfg.hidden});
  for (auto& v : embed.storage()) v = rng.normal();
  store.add("text.embed", std::move(embed), false);
  BlockSpec spec;
  spec.dim = cfg.hidden;
  spec.ffn = cfg.ffn;
  spec.self_attn = ops::AttentionSpec{cfg.heads, ops::MaskKind::kNone, 0, true, cfg.rope_base};
  spec.trainable = false;
  for (std::size_t i = 0; i < cfg.text_layers; ++i) init_block(store, "text." + std::to_string(i), spec, rng);
  init_layer_norm(store, "text.norm", cfg.hidden, false);
}

Var text_encode_frozen(Forward& f, const EncoderConfig& cfg, std::span<const int> ids) {
  if (ids.empty()) throw ContractError("text_encode_frozen: empty sentence");
  BlockSpec spec;
  spec.dim = cfg.hidden;
  spec.ffn = cfg.ffn;
  spec.self_attn = ops::AttentionSpec{cfg.heads, ops::MaskKind::kNone, 0, true, cfg.rope_base};
  spec.trainable = false;
  // The frozen encoder never uses dropout, so identical sentences always encode identically.
  Forward frozen{f.tape, f.params, false, nullptr};
  Var x = ops::embedding(frozen.p("text.embed"), ids);
  for (std::size_t i = 0; i < cfg.text_layers; ++i) x = apply_block(frozen, "text." + std::to_string(i), spec, x);
  return apply_layer_norm(frozen, "text.norm", x);
}

void init_mapper(ParameterStore& store, const EncoderConfig& cfg) {
  store.add("mapper.weight", Tensor::identity(cfg.hidden));
  store.add("mapper.bias", Tensor({cfg.hidden}));
}

Var mapper(Forward& f, Var segments) { return apply_linear(f, "mapper", segments); }

}  // namespace hialign
