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

struct CbhgConfig {
  int d_feat = 20;
  int bank_k = 8;          // conv bank kernel sizes 1..K
  int bank_channels = 128;
  int proj_dim = 256;
  int highway_dim = 128;
  int highway_layers = 4;
  int rnn_dim = 128;  // per direction
};

// Conv-bank + highway + bidirectional-recurrence refinement over the frame
// sequence. The whole module is residual: zero final weights leave the input
// untouched, so a fresh postnet is harmless at the start of training.
class CbhgPostnet {
 public:
  CbhgPostnet() = default;
  CbhgPostnet(const CbhgConfig& cfg, RngStream& rng) : cfg_(cfg) {
    for (int k = 1; k <= cfg.bank_k; ++k)
      bank_.emplace_back(k, cfg.d_feat, cfg.bank_channels, rng);
    proj1_ = Conv1dSame(3, cfg.bank_k * cfg.bank_channels, cfg.proj_dim, rng);
    proj2_ = Conv1dSame(3, cfg.proj_dim, cfg.d_feat, rng);
    pre_highway_ = Linear(cfg.d_feat, cfg.highway_dim, rng);
    for (int i = 0; i < cfg.highway_layers; ++i) highways_.emplace_back(cfg.highway_dim, rng);
    rnn_ = BiGru(cfg.highway_dim, cfg.rnn_dim, rng);
    out_ = Linear(2 * cfg.rnn_dim, cfg.d_feat, rng);
  }

  Tensor forward(const Tensor& before) const {
    std::vector<Tensor> stacks;
    stacks.reserve(bank_.size());
    for (const Conv1dBank& conv : bank_) stacks.push_back(relu(conv.forward(before)));
    Tensor h = maxpool_time2(concat_cols(stacks));
    h = relu(proj1_.forward(h));
    h = add(proj2_.forward(h), before);  // projection residual
    h = pre_highway_.forward(h);
    for (const Highway& hw : highways_) h = hw.forward(h);
    h = rnn_.forward(h);
    return add(before, out_.forward(h));  // module residual
  }

  void collect_params(const std::string& prefix, ParamMap& pm) const {
    for (std::size_t k = 0; k < bank_.size(); ++k)
      bank_[k].collect_params(prefix + ".bank" + std::to_string(k + 1), pm);
    proj1_.collect_params(prefix + ".proj1", pm);
    proj2_.collect_params(prefix + ".proj2", pm);
    pre_highway_.collect_params(prefix + ".pre_highway", pm);
    for (std::size_t i = 0; i < highways_.size(); ++i)
      highways_[i].collect_params(prefix + ".highway" + std::to_string(i), pm);
    rnn_.collect_params(prefix + ".rnn", pm);
    out_.collect_params(prefix + ".out", pm);
  }

  Linear& output_layer() { return out_; }

 private:
  CbhgConfig cfg_;
  std::vector<Conv1dBank> bank_;
  Conv1dSame proj1_, proj2_;
  Linear pre_highway_;
  std::vector<Highway> highways_;
  BiGru rnn_;
  Linear out_;
};

}  // namespace nartts
