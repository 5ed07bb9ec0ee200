// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>

#include "hialign/autodiff.hpp"
#include "hialign/ops.hpp"
#include "hialign/rng.hpp"

// Frame -> segment -> video feature hierarchy and the building blocks shared
// with the decoder.
namespace hialign {

struct EncoderConfig {
  std::size_t input_dim = 64;  // raw per-frame feature width
  std::size_t frame_dim = 512;
  std::size_t hidden = 512;
  std::size_t heads = 8;
  std::size_t ffn = 2048;
  std::size_t temporal_layers = 4;
  std::size_t window = 7;
  std::size_t downsample_after_layer = 2;
  std::size_t downsample_factor = 2;
  double rope_base = 10000.0;
  std::size_t llm_layers = 2;
  std::size_t decoder_layers = 2;
  std::size_t text_layers = 2;
  std::size_t proto_dim = 300;
  std::size_t lora_rank = 16;
  double lora_alpha = 32.0;
  double lora_dropout = 0.1;
  double dropout = 0.1;
  std::size_t max_decode_len = 40;

  // Throws ConfigError: head dim must be even, window odd, rank within bounds, ...
  void validate() const;
  std::size_t head_dim() const { return hidden / heads; }
};

// Parameters plus the mode flags of one forward pass.
struct Forward {
  Tape& tape;
  ParameterStore& params;
  bool training = false;
  Rng* rng = nullptr;

  Var p(const std::string& name) { return tape.param(params, name); }
  bool has(const std::string& name) const { return params.contains(name); }
};

// --- layers -----------------------------------------------------------------

void init_linear(ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng,
                 bool bias = true, bool trainable = true);
Var apply_linear(Forward& f, const std::string& prefix, Var x);

void init_layer_norm(ParameterStore& store, const std::string& prefix, std::size_t dim, bool trainable = true);
Var apply_layer_norm(Forward& f, const std::string& prefix, Var x);

struct LoraSpec {
  std::size_t rank = 16;
  double alpha = 32.0;
  double dropout = 0.1;
};

// y = x W^T + b + (alpha / rank) * (dropout(x) A^T) B^T. W and b are not trained;
// rank 0 degenerates to the plain frozen linear map.
Var lora_linear(Var x, Var w, std::optional<Var> b, std::optional<Var> a, std::optional<Var> bmat, const LoraSpec& spec,
                Rng* rng, bool training);

// Frozen base `prefix.weight/.bias` plus trainable `prefix.lora_a` [r, in] (Gaussian)
// and `prefix.lora_b` [out, r] (zero).
void init_lora_linear(ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                      const LoraSpec& spec, Rng& rng);
Var apply_lora_linear(Forward& f, const std::string& prefix, Var x, const LoraSpec& spec);

struct BlockSpec {
  std::size_t dim = 0;
  std::size_t ffn = 0;
  ops::AttentionSpec self_attn;
  bool cross_attn = false;
  // LoRA on query/value projections; the rest of the block is then frozen.
  std::optional<LoraSpec> lora;
  bool trainable = true;
  double dropout = 0.0;
};

// Pre-norm transformer block: x + SelfAttn(LN(x)) [+ CrossAttn(LN(x), memory)] + FFN(LN(x)).
void init_block(ParameterStore& store, const std::string& prefix, const BlockSpec& spec, Rng& rng);
Var apply_block(Forward& f, const std::string& prefix, const BlockSpec& spec, Var x, std::optional<Var> memory = {});

// --- encoders ---------------------------------------------------------------

void init_frame_encoder(ParameterStore& store, const EncoderConfig& cfg, Rng& rng);
// Linear projection to frame_dim followed by batch norm over the frame axis.
Var frame_encode(Forward& f, const EncoderConfig& cfg, Var raw);

BlockSpec temporal_block_spec(const EncoderConfig& cfg);
void init_temporal_encoder(ParameterStore& store, const EncoderConfig& cfg, Rng& rng);
// Window-limited RoPE transformer with downsampling after the configured layer.
Var temporal_encode(Forward& f, const EncoderConfig& cfg, Var frames);
std::size_t segment_length(const EncoderConfig& cfg, std::size_t frames);

BlockSpec llm_block_spec(const EncoderConfig& cfg);
void init_llm_encoder(ParameterStore& store, const EncoderConfig& cfg, Rng& rng);
Var llm_encode(Forward& f, const EncoderConfig& cfg, Var segments);

void init_text_encoder(ParameterStore& store, const EncoderConfig& cfg, std::size_t vocab_size, Rng& rng);
// Frozen sentence encoder: token embedding + full-attention RoPE transformer.
Var text_encode_frozen(Forward& f, const EncoderConfig& cfg, std::span<const int> ids);

// Single linear D -> D layer, identity-initialized.
void init_mapper(ParameterStore& store, const EncoderConfig& cfg);
Var mapper(Forward& f, Var segments);

}  // namespace hialign
