#pragma once

// Contrastive dual encoder: paired image/text encoders with a learned
// temperature, trained on caption pairs and used afterwards as a
// zero-shot object classifier over the object vocabulary.

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "etclip/common.hpp"
#include "etclip/rng.hpp"
#include "etclip/tensor.hpp"
#include "etclip/transformer.hpp"
#include "etclip/worldgen.hpp"

namespace etclip {

struct DualEncConfig {
  int embed_dim = 64;
  std::string image_encoder = "mlp";  // "mlp" | "transformer"
  int image_hidden = 128;
  int image_patch = 4;
  int image_layers = 2;
  int text_layers = 2;
  int heads = 4;
  int max_text_len = 32;
  int frame_size = 16;
  double init_std = 0.02;
  // Position-free text encoding by default: captions are short attribute
  // lists and single-word class prompts must not be out-of-distribution
  // with respect to caption token positions.
  bool text_positional = false;
  // bare object word by default; configurable scaffold
  std::vector<std::string> prompt_prefix = {};
};

template <typename T>
struct DualEncoderT {
  DualEncConfig cfg;

  // image mlp path
  TensorT<T> img_w1, img_b1, img_w2, img_b2;
  // image transformer path
  TensorT<T> patch_proj, patch_b, img_pos;
  std::vector<TransformerLayerT<T>> img_layers;
  TensorT<T> img_ln_g, img_ln_b, img_proj;
  // text path
  TensorT<T> tok_emb, txt_pos;
  std::vector<TransformerLayerT<T>> txt_layers;
  TensorT<T> txt_ln_g, txt_ln_b, txt_proj;

  TensorT<T> log_temperature;

  int frame_pixels() const { return cfg.frame_size * cfg.frame_size * 3; }

  void init(std::uint64_t seed, int vocab_size) {
    Rng rng(seed, 2);
    int d = cfg.embed_dim;
    auto w = [&](std::vector<int> shape) {
      auto t = make_tensor<T>(shape, true);
      fill_gaussian(t, rng, cfg.init_std);
      return t;
    };
    auto ones = [&](int n) {
      auto t = make_tensor<T>({n}, true);
      std::fill(t->value.begin(), t->value.end(), T(1));
      return t;
    };
    if (cfg.image_encoder == "mlp") {
      img_w1 = w({frame_pixels(), cfg.image_hidden});
      img_b1 = make_tensor<T>({cfg.image_hidden}, true);
      img_w2 = w({cfg.image_hidden, d});
      img_b2 = make_tensor<T>({d}, true);
    } else if (cfg.image_encoder == "transformer") {
      int p = cfg.image_patch;
      ETCLIP_CHECK(cfg.frame_size % p == 0, "patch size must divide frame");
      int n_patches = (cfg.frame_size / p) * (cfg.frame_size / p);
      patch_proj = w({p * p * 3, d});
      patch_b = make_tensor<T>({d}, true);
      img_pos = w({n_patches, d});
      img_layers.resize(cfg.image_layers);
      for (auto& l : img_layers) l.init(rng, d, cfg.heads, cfg.init_std);
      img_ln_g = ones(d);
      img_ln_b = make_tensor<T>({d}, true);
      img_proj = w({d, d});
    } else {
      detail::fail("unknown image encoder kind: " + cfg.image_encoder);
    }
    tok_emb = w({vocab_size, d});
    txt_pos = w({cfg.max_text_len, d});
    txt_layers.resize(cfg.text_layers);
    for (auto& l : txt_layers) l.init(rng, d, cfg.heads, cfg.init_std);
    txt_ln_g = ones(d);
    txt_ln_b = make_tensor<T>({d}, true);
    txt_proj = w({d, d});
    log_temperature = make_scalar<T>(
        static_cast<T>(std::log(1.0 / 0.07)), true);
  }

  std::vector<std::pair<std::string, TensorT<T>>> named_params() const {
    std::vector<std::pair<std::string, TensorT<T>>> out;
    if (cfg.image_encoder == "mlp") {
      out.emplace_back("img.w1", img_w1);
      out.emplace_back("img.b1", img_b1);
      out.emplace_back("img.w2", img_w2);
      out.emplace_back("img.b2", img_b2);
    } else {
      out.emplace_back("img.patch_proj", patch_proj);
      out.emplace_back("img.patch_b", patch_b);
      out.emplace_back("img.pos", img_pos);
      for (std::size_t i = 0; i < img_layers.size(); ++i)
        img_layers[i].collect_params("img.layer" + std::to_string(i), &out);
      out.emplace_back("img.ln_g", img_ln_g);
      out.emplace_back("img.ln_b", img_ln_b);
      out.emplace_back("img.proj", img_proj);
    }
    out.emplace_back("txt.emb", tok_emb);
    out.emplace_back("txt.pos", txt_pos);
    for (std::size_t i = 0; i < txt_layers.size(); ++i)
      txt_layers[i].collect_params("txt.layer" + std::to_string(i), &out);
    out.emplace_back("txt.ln_g", txt_ln_g);
    out.emplace_back("txt.ln_b", txt_ln_b);
    out.emplace_back("txt.proj", txt_proj);
    out.emplace_back("log_temp", log_temperature);
    return out;
  }

  std::vector<TensorT<T>> params() const {
    std::vector<TensorT<T>> out;
    for (auto& [n, p] : named_params()) out.push_back(p);
    return out;
  }

  // frames: pointers to H*W*3 float buffers; returns unit-norm [B x d]
  TensorT<T> encode_images(TapeT<T>& tape,
                           const std::vector<const std::vector<float>*>&
                               frames) const {
    ETCLIP_CHECK(!frames.empty(), "empty image batch");
    int px = frame_pixels();
    for (auto* f : frames)
      ETCLIP_CHECK(static_cast<int>(f->size()) == px,
                   "frame has " + std::to_string(f->size()) +
                       " values, expected " + std::to_string(px));
    if (cfg.image_encoder == "mlp") {
      auto x = make_tensor<T>({static_cast<int>(frames.size()), px});
      std::size_t o = 0;
      for (auto* f : frames)
        for (float v : *f) x->value[o++] = static_cast<T>(v);
      auto h = tape.gelu(tape.add_rowwise(tape.matmul(x, img_w1), img_b1));
      auto e = tape.add_rowwise(tape.matmul(h, img_w2), img_b2);
      return tape.l2_normalize_rows(e);
    }
    // transformer path: per-image patch sequence, mean pooled
    int p = cfg.image_patch;
    int side = cfg.frame_size / p;
    int n_patches = side * side;
    std::vector<TensorT<T>> rows;
    for (auto* f : frames) {
      auto patches = make_tensor<T>({n_patches, p * p * 3});
      for (int pr = 0; pr < side; ++pr)
        for (int pc = 0; pc < side; ++pc) {
          int pi = pr * side + pc;
          int k = 0;
          for (int dr = 0; dr < p; ++dr)
            for (int dc = 0; dc < p; ++dc)
              for (int ch = 0; ch < 3; ++ch)
                patches->value[static_cast<std::size_t>(pi) * p * p * 3 +
                               k++] = static_cast<T>(
                    (*f)[((static_cast<std::size_t>(pr * p + dr)) *
                              cfg.frame_size +
                          (pc * p + dc)) *
                             3 +
                         ch]);
        }
      auto x = tape.add(tape.add_rowwise(tape.matmul(patches, patch_proj),
                                         patch_b),
                        img_pos);
      for (auto& l : img_layers) x = l.apply(tape, x, nullptr);
      x = tape.layer_norm(x, img_ln_g, img_ln_b);
      rows.push_back(tape.matmul(tape.mean_rows(x), img_proj));
    }
    return tape.l2_normalize_rows(tape.concat_rows(rows));
  }

  TensorT<T> encode_image(TapeT<T>& tape,
                          const std::vector<float>& frame) const {
    return encode_images(tape, {&frame});
  }

  // returns unit-norm [1 x d]
  TensorT<T> encode_text(TapeT<T>& tape, const std::vector<int>& ids) const {
    ETCLIP_CHECK(!ids.empty(), "empty token sequence");
    ETCLIP_CHECK(static_cast<int>(ids.size()) <= cfg.max_text_len,
                 "text length exceeds max_text_len");
    auto x = tape.embedding_lookup(tok_emb, ids);
    if (cfg.text_positional) {
      auto pos = tape.slice_rows(txt_pos, 0, static_cast<int>(ids.size()));
      x = tape.add(x, pos);
    }
    for (auto& l : txt_layers) x = l.apply(tape, x, nullptr);
    x = tape.layer_norm(x, txt_ln_g, txt_ln_b);
    auto pooled = tape.matmul(tape.mean_rows(x), txt_proj);
    return tape.l2_normalize_rows(pooled);
  }

  TensorT<T> encode_texts(TapeT<T>& tape,
                          const std::vector<std::vector<int>>& batch) const {
    std::vector<TensorT<T>> rows;
    for (auto& ids : batch) rows.push_back(encode_text(tape, ids));
    return tape.concat_rows(rows);
  }

  TensorT<T> temperature(TapeT<T>& tape) const {
    return tape.exp_op(log_temperature);
  }

  // Symmetric InfoNCE over the B x B similarity matrix.
  TensorT<T> contrastive_loss(
      TapeT<T>& tape, const std::vector<const std::vector<float>*>& frames,
      const std::vector<std::vector<int>>& captions) const {
    ETCLIP_CHECK(frames.size() == captions.size() && !frames.empty(),
                 "contrastive batch size mismatch");
    std::set<std::vector<int>> uniq(captions.begin(), captions.end());
    ETCLIP_CHECK(uniq.size() == captions.size(),
                 "sampler contract violation: duplicate captions in batch");
    int b = static_cast<int>(frames.size());
    auto img = encode_images(tape, frames);
    auto txt = encode_texts(tape, captions);
    auto sims = tape.scale_by(tape.matmul(img, tape.transpose(txt)),
                              temperature(tape));
    std::vector<int> diag(b);
    for (int i = 0; i < b; ++i) diag[i] = i;
    auto li = tape.cross_entropy_rows_mean(sims, diag);
    auto lt = tape.cross_entropy_rows_mean(tape.transpose(sims), diag);
    return tape.scale(tape.add(li, lt), T(0.5));
  }

  std::vector<int> prompt_tokens(const std::string& class_name) const {
    std::vector<std::string> toks = cfg.prompt_prefix;
    toks.push_back(class_name);
    return worldgen::tokens_to_ids(toks);
  }

  // [|vocab| x d] prompt embedding matrix, `none` last.
  TensorT<T> prompt_matrix(TapeT<T>& tape) const {
    std::vector<TensorT<T>> rows;
    for (auto& c : worldgen::object_classes())
      rows.push_back(encode_text(tape, prompt_tokens(c.name)));
    return tape.concat_rows(rows);
  }

  // logits[i] = temperature * cosine(image, prompt_i); [n x |vocab|]
  TensorT<T> zero_shot_logits_batch(TapeT<T>& tape, const TensorT<T>& images,
                                    const TensorT<T>& prompts) const {
    return tape.scale_by(tape.matmul(images, tape.transpose(prompts)),
                         temperature(tape));
  }

  TensorT<T> zero_shot_object_logits(TapeT<T>& tape,
                                     const std::vector<float>& frame) const {
    auto img = encode_image(tape, frame);
    auto prompts = prompt_matrix(tape);
    auto logits = zero_shot_logits_batch(tape, img, prompts);
    return tape.reshape(logits, {worldgen::num_object_classes()});
  }

  TensorT<T> clip_object_loss(TapeT<T>& tape, const std::vector<float>& frame,
                              int gold) const {
    return tape.cross_entropy(zero_shot_object_logits(tape, frame), gold);
  }
};

using DualEncoder = DualEncoderT<float>;

// Zero-shot top-1 accuracy over a probe set, with frozen weights.
template <typename T>
double probe_accuracy(const DualEncoderT<T>& enc,
                      const std::vector<worldgen::ProbeFrame>& probe) {
  if (probe.empty()) return 0.0;
  TapeT<T> tape;
  tape.set_recording(false);
  auto prompts = enc.prompt_matrix(tape);
  int hits = 0;
  for (auto& p : probe) {
    auto img = enc.encode_image(tape, p.frame);
    auto logits = enc.zero_shot_logits_batch(tape, img, prompts);
    if (argmax(logits->value.data(),
               static_cast<int>(logits->numel())) == p.label)
      ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(probe.size());
}

}  // namespace etclip
