#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "etclip/rng.hpp"
#include "etclip/tensor.hpp"

namespace etclip {

// Pre-LN transformer layer with multi-head attention. The attention mask,
// when given, is an allowed-position byte matrix of shape [S x S].
template <typename T>
struct TransformerLayerT {
  int dim = 0, heads = 0;
  TensorT<T> wq, wk, wv, wo;
  TensorT<T> ln1_g, ln1_b, ln2_g, ln2_b;
  TensorT<T> ffn_w1, ffn_b1, ffn_w2, ffn_b2;

  void init(Rng& rng, int d, int n_heads, double std) {
    dim = d;
    heads = n_heads;
    ETCLIP_CHECK(d % n_heads == 0, "embed dim not divisible by head count");
    auto w = [&](int m, int n) {
      auto t = make_tensor<T>({m, n}, true);
      fill_gaussian(t, rng, std);
      return t;
    };
    wq = w(d, d);
    wk = w(d, d);
    wv = w(d, d);
    wo = w(d, d);
    ffn_w1 = w(d, 4 * d);
    ffn_w2 = w(4 * d, d);
    ffn_b1 = make_tensor<T>({4 * d}, true);
    ffn_b2 = make_tensor<T>({d}, true);
    ln1_g = make_tensor<T>({d}, true);
    ln2_g = make_tensor<T>({d}, true);
    std::fill(ln1_g->value.begin(), ln1_g->value.end(), T(1));
    std::fill(ln2_g->value.begin(), ln2_g->value.end(), T(1));
    ln1_b = make_tensor<T>({d}, true);
    ln2_b = make_tensor<T>({d}, true);
  }

  TensorT<T> apply(TapeT<T>& tape, const TensorT<T>& x,
                   const std::vector<std::uint8_t>* mask) const {
    int dh = dim / heads;
    T inv_sqrt = T(1) / static_cast<T>(std::sqrt(static_cast<double>(dh)));
    auto h = tape.layer_norm(x, ln1_g, ln1_b);
    auto q = tape.matmul(h, wq);
    auto k = tape.matmul(h, wk);
    auto v = tape.matmul(h, wv);
    std::vector<TensorT<T>> head_outs;
    for (int hi = 0; hi < heads; ++hi) {
      auto qh = tape.slice_cols(q, hi * dh, (hi + 1) * dh);
      auto kh = tape.slice_cols(k, hi * dh, (hi + 1) * dh);
      auto vh = tape.slice_cols(v, hi * dh, (hi + 1) * dh);
      auto scores = tape.scale(tape.matmul(qh, tape.transpose(kh)), inv_sqrt);
      if (mask) scores = tape.masked_fill(scores, *mask);
      head_outs.push_back(tape.matmul(tape.softmax(scores), vh));
    }
    auto attn = tape.matmul(tape.concat_cols(head_outs), wo);
    auto x1 = tape.add(x, attn);
    auto h2 = tape.layer_norm(x1, ln2_g, ln2_b);
    auto f = tape.gelu(tape.add_rowwise(tape.matmul(h2, ffn_w1), ffn_b1));
    auto out = tape.add(x1, tape.add_rowwise(tape.matmul(f, ffn_w2), ffn_b2));
    return out;
  }

  void collect_params(const std::string& prefix,
                      std::vector<std::pair<std::string, TensorT<T>>>* out)
      const {
    out->emplace_back(prefix + ".wq", wq);
    out->emplace_back(prefix + ".wk", wk);
    out->emplace_back(prefix + ".wv", wv);
    out->emplace_back(prefix + ".wo", wo);
    out->emplace_back(prefix + ".ln1_g", ln1_g);
    out->emplace_back(prefix + ".ln1_b", ln1_b);
    out->emplace_back(prefix + ".ln2_g", ln2_g);
    out->emplace_back(prefix + ".ln2_b", ln2_b);
    out->emplace_back(prefix + ".ffn_w1", ffn_w1);
    out->emplace_back(prefix + ".ffn_b1", ffn_b1);
    out->emplace_back(prefix + ".ffn_w2", ffn_w2);
    out->emplace_back(prefix + ".ffn_b2", ffn_b2);
  }
};

}  // namespace etclip
