// Copyright (c) 2026 the mtad authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "mtad/graph.hpp"
#include "mtad/moe.hpp"
#include "mtad/nn_ops.hpp"
#include "mtad/task_id.hpp"

namespace mtad {

struct EncoderConfig {
  int depth = 4;        // encoder blocks
  int width = 128;      // token embedding dimension
  int heads = 4;        // attention heads
  int patch_size = 16;  // square patch edge, pixels
  int num_experts = 5;  // experts per MoE layer
  std::vector<int> moe_layers;  // 1-indexed block ids whose FFN is a MoE; empty = all
  double expert_dropout_rate = 0.10;
  int ffn_hidden_mult = 4;

  // masked-modeling decoder
  int decoder_depth = 8;
  int decoder_width = 128;
  int decoder_heads = 16;

  int head_hidden = 0;  // task-head hidden width; 0 = same as `width`

  void validate() const {
    if (depth < 1 || depth > 12) throw ConfigError("encoder depth must be in [1, 12]");
    if (width < 1 || heads < 1 || width % heads != 0)
      throw ConfigError("encoder width must be divisible by heads");
    if (patch_size < 1) throw ConfigError("patch size must be positive");
    if (num_experts < 1) throw ConfigError("need at least one expert");
    if (expert_dropout_rate < 0.0 || expert_dropout_rate >= 1.0)
      throw ConfigError("expert dropout rate must be in [0, 1)");
    for (int l : moe_layers)
      if (l < 1 || l > depth) throw ConfigError("moe_layers entries must be in [1, depth]");
    if (decoder_depth < 1 || decoder_width < 1 || decoder_heads < 1 ||
        decoder_width % decoder_heads != 0)
      throw ConfigError("decoder width must be divisible by decoder heads");
    if (ffn_hidden_mult < 1) throw ConfigError("ffn hidden multiplier must be positive");
  }

  std::vector<bool> moe_flags() const {
    std::vector<bool> flags(static_cast<std::size_t>(depth), moe_layers.empty());
    for (int l : moe_layers) flags[static_cast<std::size_t>(l - 1)] = true;
    return flags;
  }
};

// A batch of stacked token sequences moving through the backbone.
template <typename S>
struct TokenBatch {
  Var<S> tokens;  // (batch * seq_len) x width
  int batch = 0;
  int seq_len = 0;
  TaskId task = TaskId::kMim;
  bool has_positional = true;
};

// Shared ViT backbone with task-routed MoE feed-forward layers, the
// masked-modeling decoder, and the four task heads.
template <typename S>
class Model {
 public:
  Model(const EncoderConfig& cfg, int image_size, int channels, int jigsaw_tiles,
        std::uint64_t seed)
      : cfg_(cfg), image_size_(image_size), channels_(channels), jigsaw_tiles_(jigsaw_tiles) {
    cfg_.validate();
    if (image_size % cfg_.patch_size != 0)
      throw ConfigError("image size not divisible by patch size");
    grid_ = image_size / cfg_.patch_size;
    num_patches_ = grid_ * grid_;
    patch_dim_ = cfg_.patch_size * cfg_.patch_size * channels;
    assignment_ = assign_experts(cfg_.num_experts);
    counters_ = ActivationCounters(cfg_.depth, cfg_.num_experts);
    build_parameters();
    init_parameters(seed);
  }

  // --- spec surface -------------------------------------------------------

  // Projects patch rows to tokens, prepends the class token, and adds the
  // positional table unless the task (jigsaw) asks for permutation symmetry.
  TokenBatch<S> embed(Graph<S>& g, const Matrix<S>& patches, int batch, TaskId task,
                      bool use_positional) {
    if (patches.cols() != patch_dim_) throw ShapeError("embed: patch dimension mismatch");
    if (patches.rows() != static_cast<Eigen::Index>(batch) * num_patches_)
      throw ShapeError("embed: rows != batch * num_patches");
    Var<S> x = add_rowvec(matmul(g.constant(patches), lf(g, patch_proj_w_)), lf(g, patch_proj_b_));
    x = prepend_cls(x, lf(g, cls_token_), batch);
    if (use_positional) x = add_positional(x, lf(g, pos_embed_), batch);
    return {x, batch, num_patches_ + 1, task, use_positional};
  }

  // Masked-modeling encoder input: only visible patches, with their true
  // positional rows gathered by slot index.
  TokenBatch<S> embed_visible(Graph<S>& g, const Matrix<S>& visible_patches,
                              const std::vector<int>& slots, int batch) {
    if (visible_patches.cols() != patch_dim_)
      throw ShapeError("embed_visible: patch dimension mismatch");
    const int visible = static_cast<int>(visible_patches.rows()) / batch;
    Var<S> x = add_rowvec(matmul(g.constant(visible_patches), lf(g, patch_proj_w_)),
                          lf(g, patch_proj_b_));
    x = prepend_cls(x, lf(g, cls_token_), batch);
    // class token sits at positional row 0, patch slot j at row j + 1
    std::vector<int> rows;
    rows.reserve(static_cast<std::size_t>(batch) * (visible + 1));
    for (int b = 0; b < batch; ++b) {
      rows.push_back(0);
      for (int j = 0; j < visible; ++j)
        rows.push_back(slots[static_cast<std::size_t>(b) * visible + j] + 1);
    }
    x = add_positional_gathered(x, lf(g, pos_embed_), std::move(rows));
    return {x, batch, visible + 1, TaskId::kMim, true};
  }

  // L pre-norm blocks: x += MHSA(LN(x)); x += FFN_or_MoE(LN(x)).
  TokenBatch<S> encode(TokenBatch<S> in, const ExpertDropoutMask* mask) {
    Graph<S>& g = *in.tokens.graph;
    Var<S> x = in.tokens;
    const auto moe = cfg_.moe_flags();
    for (int l = 0; l < cfg_.depth; ++l) {
      const Block& blk = enc_blocks_[static_cast<std::size_t>(l)];
      Var<S> h = layer_norm(x, lf(g, blk.ln1_g), lf(g, blk.ln1_b), S(1e-8), inspector);
      h = multi_head_attention(h, in.batch, in.seq_len, cfg_.heads, lf(g, blk.wq), lf(g, blk.bq),
                               lf(g, blk.wk), lf(g, blk.bk), lf(g, blk.wv), lf(g, blk.bv),
                               lf(g, blk.wo), lf(g, blk.bo), inspector);
      x = add(x, h);
      Var<S> f = layer_norm(x, lf(g, blk.ln2_g), lf(g, blk.ln2_b), S(1e-8), inspector);
      if (moe[static_cast<std::size_t>(l)]) {
        std::vector<ExpertLeaves<S>> experts;
        experts.reserve(blk.experts.size());
        for (const auto& e : blk.experts)
          experts.push_back({lf(g, e.w1), lf(g, e.b1), lf(g, e.w2), lf(g, e.b2)});
        const std::vector<std::uint8_t>* active =
            mask ? &mask->active[static_cast<std::size_t>(moe_slot_[static_cast<std::size_t>(l)])]
                 : nullptr;
        f = moe_forward(f, in.task, assignment_, active, experts, &counters_, l);
      } else {
        const Ffn& ffn = blk.experts[0];
        f = feed_forward(f, lf(g, ffn.w1), lf(g, ffn.b1), lf(g, ffn.w2), lf(g, ffn.b2));
      }
      x = add(x, f);
      if (!x.val().allFinite())
        throw NumericError("encode: non-finite activations after layer " + std::to_string(l + 1));
    }
    TokenBatch<S> out = in;
    out.tokens = x;
    return out;
  }

  // Reconstructs all patch rows from encoded visible tokens.
  Var<S> decode_masked(TokenBatch<S> encoded, const std::vector<int>& slots) {
    Graph<S>& g = *encoded.tokens.graph;
    const int batch = encoded.batch;
    Var<S> x = rows_drop_cls(encoded.tokens, batch, encoded.seq_len);
    x = add_rowvec(matmul(x, lf(g, dec_proj_w_)), lf(g, dec_proj_b_));
    x = assemble_masked_sequence(x, lf(g, dec_mask_token_), slots, batch, num_patches_);
    x = add_positional(x, lf(g, dec_pos_), batch);
    for (int l = 0; l < cfg_.decoder_depth; ++l) {
      const Block& blk = dec_blocks_[static_cast<std::size_t>(l)];
      Var<S> h = layer_norm(x, lf(g, blk.ln1_g), lf(g, blk.ln1_b));
      h = multi_head_attention(h, batch, num_patches_, cfg_.decoder_heads, lf(g, blk.wq),
                               lf(g, blk.bq), lf(g, blk.wk), lf(g, blk.bk), lf(g, blk.wv),
                               lf(g, blk.bv), lf(g, blk.wo), lf(g, blk.bo));
      x = add(x, h);
      Var<S> f = layer_norm(x, lf(g, blk.ln2_g), lf(g, blk.ln2_b));
      const Ffn& ffn = blk.experts[0];
      f = feed_forward(f, lf(g, ffn.w1), lf(g, ffn.b1), lf(g, ffn.w2), lf(g, ffn.b2));
      x = add(x, f);
      if (!x.val().allFinite())
        throw NumericError("decode: non-finite activations after decoder layer " +
                           std::to_string(l + 1));
    }
    x = layer_norm(x, lf(g, dec_out_ln_g_), lf(g, dec_out_ln_b_));
    return add_rowvec(matmul(x, lf(g, dec_out_w_)), lf(g, dec_out_b_));
  }

  // Per-tile position logits: (B * T^2) x T^2.
  Var<S> jigsaw_logits(TokenBatch<S> encoded) {
    Graph<S>& g = *encoded.tokens.graph;
    Var<S> x = rows_drop_cls(encoded.tokens, encoded.batch, encoded.seq_len);
    const int tile_patches = num_patches_ / (jigsaw_tiles_ * jigsaw_tiles_);
    x = group_mean_rows(x, tile_patches);
    return feed_forward(x, lf(g, head_jigsaw_.w1), lf(g, head_jigsaw_.b1), lf(g, head_jigsaw_.w2),
                        lf(g, head_jigsaw_.b2));
  }

  // Per-patch provenance logit: (B * N) x 1.
  Var<S> demix_logits(TokenBatch<S> encoded) {
    Graph<S>& g = *encoded.tokens.graph;
    Var<S> x = rows_drop_cls(encoded.tokens, encoded.batch, encoded.seq_len);
    return feed_forward(x, lf(g, head_demix_.w1), lf(g, head_demix_.b1), lf(g, head_demix_.w2),
                        lf(g, head_demix_.b2));
  }

  // Class-token logit for the pseudo-anomaly heads: B x 1.
  Var<S> cls_logit(TokenBatch<S> encoded, TaskId which) {
    if (which != TaskId::kAugCls && which != TaskId::kGenCls)
      throw StateError("cls_logit: only the classification tasks have class-token heads");
    Graph<S>& g = *encoded.tokens.graph;
    Var<S> x = rows_cls(encoded.tokens, encoded.batch, encoded.seq_len);
    const Ffn& head = which == TaskId::kAugCls ? head_aug_ : head_gen_;
    return feed_forward(x, lf(g, head.w1), lf(g, head.b1), lf(g, head.w2), lf(g, head.b2));
  }

  // --- accessors ----------------------------------------------------------

  ParameterStore<S>& params() { return store_; }
  const ParameterStore<S>& params() const { return store_; }
  const EncoderConfig& config() const { return cfg_; }
  const ExpertAssignment& assignment() const { return assignment_; }
  ActivationCounters& counters() { return counters_; }
  int image_size() const { return image_size_; }
  int channels() const { return channels_; }
  int grid() const { return grid_; }
  int num_patches() const { return num_patches_; }
  int patch_dim() const { return patch_dim_; }
  int jigsaw_tiles() const { return jigsaw_tiles_; }
  int num_moe_layers() const { return static_cast<int>(moe_slot_count_); }

  // Expert parameter tensors of (encoder layer l, expert e), for the
  // gradient-isolation audits.
  std::vector<int> expert_param_ids(int layer, int expert) const {
    const Block& blk = enc_blocks_[static_cast<std::size_t>(layer)];
    const Ffn& f = blk.experts[static_cast<std::size_t>(expert)];
    return {f.w1, f.b1, f.w2, f.b2};
  }
  bool layer_is_moe(int layer) const { return cfg_.moe_flags()[static_cast<std::size_t>(layer)]; }

  // Head parameter tensors per classification task (independence checks).
  std::vector<int> head_param_ids(TaskId t) const {
    const Ffn* f = nullptr;
    switch (t) {
      case TaskId::kJigsaw: f = &head_jigsaw_; break;
      case TaskId::kDeMixUp: f = &head_demix_; break;
      case TaskId::kAugCls: f = &head_aug_; break;
      case TaskId::kGenCls: f = &head_gen_; break;
      default: throw StateError("head_param_ids: task has no plain FFN head");
    }
    return {f->w1, f->b1, f->w2, f->b2};
  }

  EncodeInspector<S>* inspector = nullptr;

 private:
  struct Ffn {
    int w1 = -1, b1 = -1, w2 = -1, b2 = -1;
  };
  struct Block {
    int ln1_g, ln1_b;
    int wq, bq, wk, bk, wv, bv, wo, bo;
    int ln2_g, ln2_b;
    std::vector<Ffn> experts;  // size K for MoE blocks, 1 otherwise
  };

  // Leaf nodes are memoized per tape so each tensor appears once per graph.
  Var<S> lf(Graph<S>& g, int idx) {
    if (leaf_graph_ != &g || leaf_uid_ != g.uid()) {
      leaf_graph_ = &g;
      leaf_uid_ = g.uid();
      leaf_ids_.assign(static_cast<std::size_t>(store_.count()), -1);
    }
    int& cached = leaf_ids_[static_cast<std::size_t>(idx)];
    if (cached < 0) cached = g.leaf(store_[idx]).id;
    return {&g, cached};
  }

  Ffn add_ffn(const std::string& prefix, int in, int hidden, int out) {
    Ffn f;
    f.w1 = store_.add(prefix + ".w1", in, hidden);
    f.b1 = store_.add(prefix + ".b1", 1, hidden);
    f.w2 = store_.add(prefix + ".w2", hidden, out);
    f.b2 = store_.add(prefix + ".b2", 1, out);
    return f;
  }

  Block add_block(const std::string& prefix, int d, int hidden, int experts) {
    Block b;
    b.ln1_g = store_.add(prefix + ".ln1.g", 1, d);
    b.ln1_b = store_.add(prefix + ".ln1.b", 1, d);
    b.wq = store_.add(prefix + ".attn.wq", d, d);
    b.bq = store_.add(prefix + ".attn.bq", 1, d);
    b.wk = store_.add(prefix + ".attn.wk", d, d);
    b.bk = store_.add(prefix + ".attn.bk", 1, d);
    b.wv = store_.add(prefix + ".attn.wv", d, d);
    b.bv = store_.add(prefix + ".attn.bv", 1, d);
    b.wo = store_.add(prefix + ".attn.wo", d, d);
    b.bo = store_.add(prefix + ".attn.bo", 1, d);
    b.ln2_g = store_.add(prefix + ".ln2.g", 1, d);
    b.ln2_b = store_.add(prefix + ".ln2.b", 1, d);
    if (experts > 1) {
      for (int e = 0; e < experts; ++e)
        b.experts.push_back(add_ffn(prefix + ".moe." + std::to_string(e), d, hidden, d));
    } else {
      b.experts.push_back(add_ffn(prefix + ".ffn", d, hidden, d));
    }
    return b;
  }

  void build_parameters() {
    const int d = cfg_.width;
    const int hidden = d * cfg_.ffn_hidden_mult;
    patch_proj_w_ = store_.add("patch_proj.w", patch_dim_, d);
    patch_proj_b_ = store_.add("patch_proj.b", 1, d);
    cls_token_ = store_.add("cls_token", 1, d);
    pos_embed_ = store_.add("pos_embed", num_patches_ + 1, d);
    const auto moe = cfg_.moe_flags();
    moe_slot_.assign(static_cast<std::size_t>(cfg_.depth), -1);
    moe_slot_count_ = 0;
    for (int l = 0; l < cfg_.depth; ++l) {
      bool is_moe = moe[static_cast<std::size_t>(l)];
      enc_blocks_.push_back(add_block("enc." + std::to_string(l), d, hidden,
                                      is_moe ? cfg_.num_experts : 1));
      if (is_moe) moe_slot_[static_cast<std::size_t>(l)] = static_cast<int>(moe_slot_count_++);
    }
    const int dd = cfg_.decoder_width;
    dec_proj_w_ = store_.add("dec.proj.w", d, dd);
    dec_proj_b_ = store_.add("dec.proj.b", 1, dd);
    dec_mask_token_ = store_.add("dec.mask_token", 1, dd);
    dec_pos_ = store_.add("dec.pos_embed", num_patches_, dd);
    for (int l = 0; l < cfg_.decoder_depth; ++l)
      dec_blocks_.push_back(
          add_block("dec." + std::to_string(l), dd, dd * cfg_.ffn_hidden_mult, 1));
    dec_out_ln_g_ = store_.add("dec.out_ln.g", 1, dd);
    dec_out_ln_b_ = store_.add("dec.out_ln.b", 1, dd);
    dec_out_w_ = store_.add("dec.out.w", dd, patch_dim_);
    dec_out_b_ = store_.add("dec.out.b", 1, patch_dim_);

    const int hh = cfg_.head_hidden > 0 ? cfg_.head_hidden : d;
    const int t2 = jigsaw_tiles_ * jigsaw_tiles_;
    head_jigsaw_ = add_ffn("head.jigsaw", d, hh, t2);
    head_demix_ = add_ffn("head.demix", d, hh, 1);
    head_aug_ = add_ffn("head.aug", d, hh, 1);
    head_gen_ = add_ffn("head.gen", d, hh, 1);
  }

  void init_parameters(std::uint64_t seed) {
    Rng rng(derive_seed(seed, {0x1217ULL}));
    for (int i = 0; i < store_.count(); ++i) {
      Tensor<S>& t = store_[i];
      bool is_ln_scale = t.name.size() >= 2 && t.name.rfind(".g") == t.name.size() - 2 &&
                         t.name.find("ln") != std::string::npos;
      bool is_bias_like = t.name.rfind(".b") == t.name.size() - 2;
      if (is_ln_scale) {
        t.value.setOnes();
      } else if (is_bias_like) {
        t.value.setZero();
      } else {
        for (Eigen::Index r = 0; r < t.value.rows(); ++r)
          for (Eigen::Index c = 0; c < t.value.cols(); ++c)
            t.value(r, c) = static_cast<S>(rng.truncated_normal(0.02));
      }
    }
  }

  EncoderConfig cfg_;
  int image_size_, channels_, jigsaw_tiles_;
  int grid_ = 0, num_patches_ = 0, patch_dim_ = 0;
  ParameterStore<S> store_;
  ExpertAssignment assignment_;
  ActivationCounters counters_;

  int patch_proj_w_ = -1, patch_proj_b_ = -1, cls_token_ = -1, pos_embed_ = -1;
  std::vector<Block> enc_blocks_;
  std::vector<int> moe_slot_;  // encoder layer -> index among MoE layers
  std::size_t moe_slot_count_ = 0;
  int dec_proj_w_ = -1, dec_proj_b_ = -1, dec_mask_token_ = -1, dec_pos_ = -1;
  std::vector<Block> dec_blocks_;
  int dec_out_ln_g_ = -1, dec_out_ln_b_ = -1, dec_out_w_ = -1, dec_out_b_ = -1;
  Ffn head_jigsaw_, head_demix_, head_aug_, head_gen_;

  const Graph<S>* leaf_graph_ = nullptr;
  std::uint64_t leaf_uid_ = 0;
  std::vector<int> leaf_ids_;
};

}  // namespace mtad
