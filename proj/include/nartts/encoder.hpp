// Copyright (c) 2026 nartts authors
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

#pragma once

#include <string>
#include <vector>

#include "nartts/nn.hpp"

namespace nartts {

struct EncoderConfig {
  int vocab_size = 16;
  int d_model = 256;
  int n_blocks = 4;
  int n_heads_block = 4;
  int n_heads_fusion = 4;
  int conv_layers = 3;
  int kernel = 3;
  int d_ff = 1024;
  double dropout_p = 0.1;
  bool fusion_enabled = true;

  void validate() const {
    if (vocab_size < 2) throw ConfigError("encoder: vocab_size must be >= 2");
    if (d_model % n_heads_block != 0 || d_model % n_heads_fusion != 0)
      throw ConfigError("encoder: d_model must divide by both head counts");
    if (fusion_enabled && n_heads_fusion != n_blocks)
      throw ConfigError("encoder: fusion binds one head per block; heads " +
                        std::to_string(n_heads_fusion) + " != blocks " + std::to_string(n_blocks));
    if (kernel % 2 == 0) throw ConfigError("encoder: kernel must be odd");
  }
};

// Final per-token encoding plus the per-block outputs retained for fine
// fusion and diagnostics.
struct HiddenTextRepr {
  Tensor matrix;                      // [T_text x d_model]
  std::vector<Tensor> block_outputs;  // n_blocks of [T_text x d_model]
};

// Self-attention + convolutional feed-forward, each sub-module running
// process -> dropout -> residual-add -> layer-norm.
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(const EncoderConfig& cfg, RngStream& rng)
      : attn_(cfg.d_model, cfg.n_heads_block, rng),
        conv1_(cfg.kernel, cfg.d_model, cfg.d_ff, rng),
        conv2_(cfg.kernel, cfg.d_ff, cfg.d_model, rng),
        ln1_(cfg.d_model),
        ln2_(cfg.d_model),
        dropout_p_(cfg.dropout_p) {}

  Tensor forward(const Tensor& x, RngStream& drop, bool training) const {
    Tensor y1 = ln1_.forward(add(x, dropout(attn_.forward(x), dropout_p_, drop, training)));
    Tensor ffn = conv2_.forward(relu(conv1_.forward(y1)));
    return ln2_.forward(add(y1, dropout(ffn, dropout_p_, drop, training)));
  }

  void collect_params(const std::string& prefix, ParamMap& pm) const {
    attn_.collect_params(prefix + ".attn", pm);
    conv1_.collect_params(prefix + ".conv1", pm);
    conv2_.collect_params(prefix + ".conv2", pm);
    ln1_.collect_params(prefix + ".ln1", pm);
    ln2_.collect_params(prefix + ".ln2", pm);
  }

 private:
  MultiHeadSelfAttention attn_;
  Conv1dSame conv1_, conv2_;
  LayerNorm ln1_, ln2_;
  double dropout_p_ = 0.1;
};

// One attention head per Transformer block: the coarse-fused feature is the
// query, block k's output supplies keys and values for head k. The result
// adjusts the coarse feature through a residual add.
class FineFusion {
 public:
  FineFusion() = default;
  FineFusion(const EncoderConfig& cfg, RngStream& rng)
      : d_model_(cfg.d_model), n_heads_(cfg.n_heads_fusion) {
    const int dh = cfg.d_model / cfg.n_heads_fusion;
    for (int h = 0; h < n_heads_; ++h) {
      wq_.push_back(init::glorot_uniform({d_model_, dh}, d_model_, dh, rng));
      wk_.push_back(init::glorot_uniform({d_model_, dh}, d_model_, dh, rng));
      wv_.push_back(init::glorot_uniform({d_model_, dh}, d_model_, dh, rng));
    }
    wo_ = init::glorot_uniform({d_model_, d_model_}, d_model_, d_model_, rng);
  }

  Tensor forward(const Tensor& coarse, const std::vector<Tensor>& blocks) const {
    if (static_cast<int>(blocks.size()) != n_heads_)
      throw ConfigError("fine fusion: " + std::to_string(n_heads_) + " heads vs " +
                        std::to_string(blocks.size()) + " block outputs");
    const int dh = d_model_ / n_heads_;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Tensor> heads;
    heads.reserve(static_cast<std::size_t>(n_heads_));
    for (int h = 0; h < n_heads_; ++h) {
      Tensor q = matmul(coarse, wq_[static_cast<std::size_t>(h)]);
      Tensor k = matmul(blocks[static_cast<std::size_t>(h)], wk_[static_cast<std::size_t>(h)]);
      Tensor v = matmul(blocks[static_cast<std::size_t>(h)], wv_[static_cast<std::size_t>(h)]);
      Tensor attn = softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt));
      heads.push_back(matmul(attn, v));
    }
    return add(coarse, matmul(concat_cols(heads), wo_));
  }

  // Attention maps only, for diagnostics/tests.
  std::vector<Tensor> attention_rows(const Tensor& coarse, const std::vector<Tensor>& blocks) const {
    const int dh = d_model_ / n_heads_;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Tensor> maps;
    for (int h = 0; h < n_heads_; ++h) {
      Tensor q = matmul(coarse, wq_[static_cast<std::size_t>(h)]);
      Tensor k = matmul(blocks[static_cast<std::size_t>(h)], wk_[static_cast<std::size_t>(h)]);
      maps.push_back(softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt)));
    }
    return maps;
  }

  void collect_params(const std::string& prefix, ParamMap& pm) const {
    for (int h = 0; h < n_heads_; ++h) {
      const std::string hp = prefix + ".head" + std::to_string(h);
      pm.emplace_back(hp + ".wq", wq_[static_cast<std::size_t>(h)]);
      pm.emplace_back(hp + ".wk", wk_[static_cast<std::size_t>(h)]);
      pm.emplace_back(hp + ".wv", wv_[static_cast<std::size_t>(h)]);
    }
    pm.emplace_back(prefix + ".wo", wo_);
  }

  Tensor& output_weight() { return wo_; }

 private:
  int d_model_ = 0, n_heads_ = 0;
  std::vector<Tensor> wq_, wk_, wv_;
  Tensor wo_;
};

// Token embedding, convolutional processor (positional information comes from
// the conv context, so there is no positional table and no length cap),
// densely bypass-connected Transformer blocks, and fine fusion.
class DenseFuseEncoder {
 public:
  DenseFuseEncoder() = default;
  DenseFuseEncoder(const EncoderConfig& cfg, RngStream& rng) : cfg_(cfg) {
    cfg.validate();
    embed_ = Embedding(cfg.vocab_size, cfg.d_model, rng);
    for (int i = 0; i < cfg.conv_layers; ++i) {
      proc_convs_.emplace_back(cfg.kernel, cfg.d_model, cfg.d_model, rng);
      proc_norms_.emplace_back(cfg.d_model);
    }
    for (int i = 0; i < cfg.n_blocks; ++i) blocks_.emplace_back(cfg, rng);
    if (cfg.fusion_enabled) fusion_ = FineFusion(cfg, rng);
  }

  const EncoderConfig& config() const { return cfg_; }

  Tensor conv_processor(const Tensor& emb, RngStream& drop, bool training) const {
    Tensor h = emb;
    for (std::size_t i = 0; i < proc_convs_.size(); ++i) {
      h = proc_norms_[i].forward(
          dropout(relu(proc_convs_[i].forward(h)), cfg_.dropout_p, drop, training));
    }
    return h;
  }

  HiddenTextRepr encode(const std::vector<int>& ids, RngStream& drop, bool training) const {
    Tensor h0 = conv_processor(embed_.forward(ids), drop, training);
    HiddenTextRepr out;
    if (cfg_.fusion_enabled) {
      // Dense bypass: block k consumes the element-wise sum of the processor
      // output and all earlier block outputs; the coarse feature is the sum
      // over all of them.
      Tensor running = h0;  // h0 + h1 + ... + h_{k-1}
      for (const TransformerBlock& block : blocks_) {
        Tensor hk = block.forward(running, drop, training);
        out.block_outputs.push_back(hk);
        running = add(running, hk);
      }
      out.matrix = fusion_.forward(running, out.block_outputs);
    } else {
      // Nofusion ablation: plain sequential blocks, last output wins.
      Tensor h = h0;
      for (const TransformerBlock& block : blocks_) {
        h = block.forward(h, drop, training);
        out.block_outputs.push_back(h);
      }
      out.matrix = h;
    }
    return out;
  }

  Tensor fine_fuse(const Tensor& coarse, const std::vector<Tensor>& blocks) const {
    if (!cfg_.fusion_enabled) throw ConfigError("fine_fuse called with fusion disabled");
    return fusion_.forward(coarse, blocks);
  }

  const FineFusion& fusion() const { return fusion_; }
  FineFusion& fusion() { return fusion_; }
  Embedding& embedding() { return embed_; }

  void collect_params(const std::string& prefix, ParamMap& pm) const {
    embed_.collect_params(prefix + ".embed", pm);
    for (std::size_t i = 0; i < proc_convs_.size(); ++i) {
      proc_convs_[i].collect_params(prefix + ".proc.conv" + std::to_string(i), pm);
      proc_norms_[i].collect_params(prefix + ".proc.ln" + std::to_string(i), pm);
    }
    for (std::size_t i = 0; i < blocks_.size(); ++i)
      blocks_[i].collect_params(prefix + ".block" + std::to_string(i), pm);
    if (cfg_.fusion_enabled) fusion_.collect_params(prefix + ".fusion", pm);
  }

 private:
  EncoderConfig cfg_;
  Embedding embed_;
  std::vector<Conv1dSame> proc_convs_;
  std::vector<LayerNorm> proc_norms_;
  std::vector<TransformerBlock> blocks_;
  FineFusion fusion_;
};

}  // namespace nartts
