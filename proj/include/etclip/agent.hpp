#pragma once

// Episodic-transformer agent: encodes the instruction, frame history and
// action history with a causal multimodal transformer and emits
// per-timestep action and object logits.

#include <string>
#include <vector>

#include "etclip/common.hpp"
#include "etclip/rng.hpp"
#include "etclip/tensor.hpp"
#include "etclip/transformer.hpp"
#include "etclip/worldgen.hpp"

namespace etclip {

struct AgentConfig {
  int embed_dim = 64;
  int visual_hidden = 128;
  int layers = 2;
  int heads = 4;
  int max_time = 48;
  int max_lang = 24;
  int frame_size = 16;
  double init_std = 0.02;
  std::string object_loss_steps = "all";  // "all" | "interaction"
};

template <typename T>
struct AgentForwardOut {
  TensorT<T> action_logits;  // [T x |A|]
  TensorT<T> object_logits;  // [T x |V|]
};

template <typename T>
struct AgentModelT {
  AgentConfig cfg;

  TensorT<T> token_emb, pos_lang, pos_time;
  TensorT<T> mod_lang, mod_time;  // modality embeddings, [d]
  TensorT<T> visual_w1, visual_b1, visual_w2, visual_b2;
  TensorT<T> action_emb;  // [|A|+1 x d], last row = episode start
  std::vector<TransformerLayerT<T>> layers;
  TensorT<T> ln_f_g, ln_f_b;
  TensorT<T> action_head_w, action_head_b, object_head_w, object_head_b;

  int frame_pixels() const { return cfg.frame_size * cfg.frame_size * 3; }
  static int start_action() { return worldgen::kNumActions; }

  void init(std::uint64_t seed, int vocab_size) {
    Rng rng(seed, 3);
    int d = cfg.embed_dim;
    auto w = [&](std::vector<int> shape) {
      auto t = make_tensor<T>(shape, true);
      fill_gaussian(t, rng, cfg.init_std);
      return t;
    };
    token_emb = w({vocab_size, d});
    pos_lang = w({cfg.max_lang, d});
    pos_time = w({cfg.max_time, d});
    mod_lang = w({d});
    mod_time = w({d});
    visual_w1 = w({frame_pixels(), cfg.visual_hidden});
    visual_b1 = make_tensor<T>({cfg.visual_hidden}, true);
    visual_w2 = w({cfg.visual_hidden, d});
    visual_b2 = make_tensor<T>({d}, true);
    action_emb = w({worldgen::kNumActions + 1, d});
    layers.resize(cfg.layers);
    for (auto& l : layers) l.init(rng, d, cfg.heads, cfg.init_std);
    ln_f_g = make_tensor<T>({d}, true);
    std::fill(ln_f_g->value.begin(), ln_f_g->value.end(), T(1));
    ln_f_b = make_tensor<T>({d}, true);
    // zero-initialized heads: an untrained model emits uniform softmax
    action_head_w = make_tensor<T>({d, worldgen::kNumActions}, true);
    action_head_b = make_tensor<T>({worldgen::kNumActions}, true);
    object_head_w =
        make_tensor<T>({d, worldgen::num_object_classes()}, true);
    object_head_b = make_tensor<T>({worldgen::num_object_classes()}, true);
  }

  std::vector<std::pair<std::string, TensorT<T>>> named_params() const {
    std::vector<std::pair<std::string, TensorT<T>>> out;
    out.emplace_back("token_emb", token_emb);
    out.emplace_back("pos_lang", pos_lang);
    out.emplace_back("pos_time", pos_time);
    out.emplace_back("mod_lang", mod_lang);
    out.emplace_back("mod_time", mod_time);
    out.emplace_back("visual_w1", visual_w1);
    out.emplace_back("visual_b1", visual_b1);
    out.emplace_back("visual_w2", visual_w2);
    out.emplace_back("visual_b2", visual_b2);
    out.emplace_back("action_emb", action_emb);
    for (std::size_t i = 0; i < layers.size(); ++i)
      layers[i].collect_params("layer" + std::to_string(i), &out);
    out.emplace_back("ln_f_g", ln_f_g);
    out.emplace_back("ln_f_b", ln_f_b);
    out.emplace_back("action_head_w", action_head_w);
    out.emplace_back("action_head_b", action_head_b);
    out.emplace_back("object_head_w", object_head_w);
    out.emplace_back("object_head_b", object_head_b);
    return out;
  }

  std::vector<TensorT<T>> params() const {
    std::vector<TensorT<T>> out;
    for (auto& [n, p] : named_params()) out.push_back(p);
    return out;
  }

  // Attention pattern: language rows attend to language only; temporal
  // row t attends to the full instruction plus temporal steps <= t.
  static std::vector<std::uint8_t> build_mask(int lt, int tt) {
    int s = lt + tt;
    std::vector<std::uint8_t> allowed(static_cast<std::size_t>(s) * s, 0);
    for (int i = 0; i < s; ++i)
      for (int j = 0; j < s; ++j) {
        bool ok;
        if (i < lt) ok = j < lt;
        else ok = j < lt || (j - lt) <= (i - lt);
        allowed[static_cast<std::size_t>(i) * s + j] = ok ? 1 : 0;
      }
    return allowed;
  }

  AgentForwardOut<T> forward(
      TapeT<T>& tape, const std::vector<int>& instr_ids,
      const std::vector<const std::vector<float>*>& frames,
      const std::vector<int>& prev_actions) const {
    int tt = static_cast<int>(frames.size());
    int lt = static_cast<int>(instr_ids.size());
    ETCLIP_CHECK(tt >= 1, "forward requires at least one frame");
    ETCLIP_CHECK(tt <= cfg.max_time,
                 "episode length " + std::to_string(tt) + " exceeds max " +
                     std::to_string(cfg.max_time));
    ETCLIP_CHECK(lt >= 1 && lt <= cfg.max_lang,
                 "instruction length out of range");
    ETCLIP_CHECK(static_cast<int>(prev_actions.size()) == tt,
                 "frame/action history length mismatch");
    int px = frame_pixels();
    for (auto* f : frames)
      ETCLIP_CHECK(static_cast<int>(f->size()) == px, "bad frame size");

    auto lang = tape.add(tape.embedding_lookup(token_emb, instr_ids),
                         tape.slice_rows(pos_lang, 0, lt));
    lang = tape.add_rowwise(lang, mod_lang);

    auto fx = make_tensor<T>({tt, px});
    std::size_t o = 0;
    for (auto* f : frames)
      for (float v : *f) fx->value[o++] = static_cast<T>(v);
    auto vis = tape.add_rowwise(
        tape.matmul(tape.gelu(tape.add_rowwise(tape.matmul(fx, visual_w1),
                                               visual_b1)),
                    visual_w2),
        visual_b2);
    auto act = tape.embedding_lookup(action_emb, prev_actions);
    auto temporal = tape.add(tape.add(vis, act),
                             tape.slice_rows(pos_time, 0, tt));
    temporal = tape.add_rowwise(temporal, mod_time);

    auto x = tape.concat_rows({lang, temporal});
    auto mask = build_mask(lt, tt);
    for (auto& l : layers) x = l.apply(tape, x, &mask);
    x = tape.layer_norm(x, ln_f_g, ln_f_b);
    auto steps = tape.slice_rows(x, lt, lt + tt);
    AgentForwardOut<T> out;
    out.action_logits =
        tape.add_rowwise(tape.matmul(steps, action_head_w), action_head_b);
    out.object_logits =
        tape.add_rowwise(tape.matmul(steps, object_head_w), object_head_b);
    return out;
  }

  // teacher-forcing history: prev[0] = start token, prev[t] = actions[t-1]
  static std::vector<int> shifted_actions(const std::vector<int>& actions) {
    std::vector<int> prev(actions.size());
    if (!prev.empty()) {
      prev[0] = start_action();
      for (std::size_t t = 1; t < actions.size(); ++t)
        prev[t] = actions[t - 1];
    }
    return prev;
  }

  struct Losses {
    TensorT<T> action_loss;
    TensorT<T> object_loss;  // L_ET(obj)
  };

  Losses et_losses(TapeT<T>& tape, const worldgen::Episode& ep) const {
    auto ids = worldgen::tokens_to_ids(ep.instruction);
    std::vector<const std::vector<float>*> frames;
    for (auto& f : ep.frames) frames.push_back(&f);
    auto out = forward(tape, ids, frames, shifted_actions(ep.expert_actions));
    Losses l;
    l.action_loss =
        tape.cross_entropy_rows_mean(out.action_logits, ep.expert_actions);
    if (cfg.object_loss_steps == "interaction") {
      std::vector<int> rows, golds;
      for (std::size_t t = 0; t < ep.gold_objects.size(); ++t)
        if (ep.gold_objects[t] != worldgen::none_class()) {
          rows.push_back(static_cast<int>(t));
          golds.push_back(ep.gold_objects[t]);
        }
      if (rows.empty()) {
        l.object_loss = make_scalar<T>(T(0));
      } else {
        l.object_loss = tape.cross_entropy_rows_mean(
            tape.gather_rows(out.object_logits, rows), golds);
      }
    } else {
      l.object_loss =
          tape.cross_entropy_rows_mean(out.object_logits, ep.gold_objects);
    }
    return l;
  }

  // Greedy decoding from the final timestep. Consults only agent weights.
  std::pair<int, int> act(const std::vector<int>& instr_ids,
                          const std::vector<const std::vector<float>*>& frames,
                          const std::vector<int>& past_actions) const {
    ETCLIP_CHECK(!frames.empty(), "act requires at least one frame");
    ETCLIP_CHECK(past_actions.size() + 1 == frames.size(),
                 "act expects one more frame than past actions");
    std::vector<int> prev(frames.size());
    prev[0] = start_action();
    for (std::size_t t = 0; t < past_actions.size(); ++t)
      prev[t + 1] = past_actions[t];
    TapeT<T> tape;
    tape.set_recording(false);
    auto out = forward(tape, instr_ids, frames, prev);
    int tt = static_cast<int>(frames.size());
    int na = worldgen::kNumActions;
    int nv = worldgen::num_object_classes();
    const T* arow =
        out.action_logits->value.data() + static_cast<std::size_t>(tt - 1) * na;
    const T* orow =
        out.object_logits->value.data() + static_cast<std::size_t>(tt - 1) * nv;
    return {argmax(arow, na), argmax(orow, nv)};
  }
};

using AgentModel = AgentModelT<float>;

}  // namespace etclip
