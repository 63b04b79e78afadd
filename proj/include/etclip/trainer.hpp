#pragma once

// Training orchestration: dual-encoder contrastive pretraining, then joint
// agent training under the mixed object loss, with deterministic seeding,
// step logs and resumable checkpoints.

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "etclip/agent.hpp"
#include "etclip/config.hpp"
#include "etclip/dualenc.hpp"
#include "etclip/optim.hpp"
#include "etclip/serialize.hpp"
#include "etclip/tensor.hpp"
#include "etclip/worldgen.hpp"

namespace etclip {

// L(obj) = alpha * L_CLIP(obj) + (1 - alpha) * L_ET(obj). The boundary
// cases return the surviving node itself so the identities are exact.
template <typename T>
TensorT<T> combine_object_loss(TapeT<T>& tape, double alpha,
                               const TensorT<T>& l_clip,
                               const TensorT<T>& l_et) {
  ETCLIP_CHECK(alpha >= 0.0 && alpha <= 1.0,
               "alpha must lie in [0,1], got " + std::to_string(alpha));
  if (alpha == 0.0) return l_et;
  if (alpha == 1.0) return l_clip;
  return tape.add(tape.scale(l_clip, static_cast<T>(alpha)),
                  tape.scale(l_et, static_cast<T>(1.0 - alpha)));
}

// The (timestep, gold class) pairs supervised by the object losses.
inline std::vector<std::pair<int, int>> supervised_pairs(
    const worldgen::Episode& ep, const std::string& object_loss_steps) {
  std::vector<std::pair<int, int>> out;
  for (std::size_t t = 0; t < ep.gold_objects.size(); ++t) {
    if (object_loss_steps == "interaction" &&
        ep.gold_objects[t] == worldgen::none_class())
      continue;
    out.emplace_back(static_cast<int>(t), ep.gold_objects[t]);
  }
  return out;
}

// Mean zero-shot classification loss over a set of supervised frames,
// with the prompt matrix computed once.
template <typename T>
TensorT<T> clip_object_loss_batch(
    TapeT<T>& tape, const DualEncoderT<T>& enc,
    const std::vector<const std::vector<float>*>& frames,
    const std::vector<int>& golds) {
  ETCLIP_CHECK(frames.size() == golds.size() && !frames.empty(),
               "clip loss batch mismatch");
  auto img = enc.encode_images(tape, frames);
  auto prompts = enc.prompt_matrix(tape);
  auto logits = enc.zero_shot_logits_batch(tape, img, prompts);
  return tape.cross_entropy_rows_mean(logits, golds);
}

template <typename T>
struct StepLossParts {
  TensorT<T> total;
  double action_loss = 0, et_obj = 0, clip_obj = 0;
};

// One training step's loss over a batch of episodes. In clip_aux mode with
// alpha > 0 the dual encoder is forwarded on exactly the pairs supervised
// by L_ET; in baseline mode the auxiliary term is never computed.
template <typename T>
StepLossParts<T> joint_step_loss(TapeT<T>& tape, const AgentModelT<T>& agent,
                                 const DualEncoderT<T>* enc,
                                 const std::vector<const worldgen::Episode*>&
                                     batch,
                                 double alpha, bool clip_aux) {
  ETCLIP_CHECK(!batch.empty(), "empty training batch");
  StepLossParts<T> parts;
  std::vector<TensorT<T>> totals;
  T inv = T(1) / static_cast<T>(batch.size());
  for (auto* ep : batch) {
    auto l = agent.et_losses(tape, *ep);
    TensorT<T> obj;
    if (clip_aux && alpha > 0.0) {
      ETCLIP_CHECK(enc != nullptr, "clip_aux loss requires a dual encoder");
      std::vector<const std::vector<float>*> frames;
      std::vector<int> golds;
      for (auto [t, g] : supervised_pairs(*ep, agent.cfg.object_loss_steps)) {
        frames.push_back(&ep->frames[static_cast<std::size_t>(t)]);
        golds.push_back(g);
      }
      TensorT<T> l_clip = frames.empty()
                              ? make_scalar<T>(T(0))
                              : clip_object_loss_batch(tape, *enc, frames,
                                                       golds);
      parts.clip_obj += static_cast<double>(l_clip->value[0]) / batch.size();
      obj = combine_object_loss(tape, alpha, l_clip, l.object_loss);
    } else {
      obj = l.object_loss;
    }
    parts.action_loss +=
        static_cast<double>(l.action_loss->value[0]) / batch.size();
    parts.et_obj +=
        static_cast<double>(l.object_loss->value[0]) / batch.size();
    totals.push_back(tape.add(l.action_loss, obj));
  }
  TensorT<T> sum = totals[0];
  for (std::size_t i = 1; i < totals.size(); ++i)
    sum = tape.add(sum, totals[i]);
  parts.total = tape.scale(sum, inv);
  return parts;
}

struct StepLog {
  int epoch = 0;
  long step = 0;
  double action_loss = 0, et_obj = 0, clip_obj = 0, total = 0;
};

// ---- dual-encoder pretraining ----

struct PretrainResult {
  DualEncoder enc;
  std::vector<double> probe_accuracy;  // per epoch
  Checkpoint checkpoint;
};

inline void add_named_sections(
    Checkpoint* ckpt, const std::string& prefix,
    const std::vector<std::pair<std::string, Tensor>>& named) {
  for (auto& [name, p] : named) ckpt->add_tensor(prefix + name, p);
}

template <typename Model>
void load_named_sections(const Checkpoint& ckpt, const std::string& prefix,
                         const Model& model) {
  for (auto& [name, p] : model.named_params()) ckpt.load_into(prefix + name, p);
}

inline Checkpoint make_dualenc_checkpoint(
    const DualEncoder& enc, const PretrainConfig& cfg,
    const std::vector<double>& probe_accuracy) {
  Checkpoint ckpt;
  nlohmann::json meta;
  meta["kind"] = "dualenc_pretrain";
  meta["pretrain"] = cfg;
  meta["dualenc"] = enc.cfg;
  meta["probe_accuracy"] = probe_accuracy;
  meta["final_probe_accuracy"] =
      probe_accuracy.empty() ? 0.0 : probe_accuracy.back();
  ckpt.config_json = meta.dump();
  add_named_sections(&ckpt, "dualenc.", enc.named_params());
  return ckpt;
}

inline DualEncoder dualenc_from_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json meta = nlohmann::json::parse(ckpt.config_json);
  ETCLIP_CHECK(meta.value("kind", "") == "dualenc_pretrain",
               "not a dual-encoder checkpoint");
  DualEncoder enc;
  enc.cfg = meta.at("dualenc").get<DualEncConfig>();
  enc.init(0, static_cast<int>(worldgen::token_vocab().size()));
  load_named_sections(ckpt, "dualenc.", enc);
  return enc;
}

inline PretrainResult pretrain_dualenc(const worldgen::Dataset& ds,
                                       const PretrainConfig& cfg,
                                       const DualEncConfig& enc_cfg = {}) {
  ETCLIP_CHECK(!ds.captions.empty(), "dataset has no caption pairs");
  PretrainResult res;
  res.enc.cfg = enc_cfg;
  res.enc.init(cfg.seed, static_cast<int>(worldgen::token_vocab().size()));
  Adam opt(static_cast<float>(cfg.lr));
  opt.add_params(res.enc.params());
  Rng shuffle(cfg.seed, 5);
  long global_step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // cosine decay keeps the zero-shot probe stable over the last epochs
    opt.learning_rate = static_cast<float>(
        cfg.lr * 0.5 *
        (1.0 + std::cos(3.14159265358979323846 * epoch / cfg.epochs)));
    std::vector<int> order(ds.captions.size());
    for (std::size_t i = 0; i < order.size(); ++i)
      order[i] = static_cast<int>(i);
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
      std::swap(order[static_cast<std::size_t>(i)],
                order[static_cast<std::size_t>(shuffle.uniform_int(i + 1))]);
    std::size_t cursor = 0;
    while (cursor < order.size()) {
      // fill a batch with distinct captions; colliding pairs are skipped
      std::vector<const std::vector<float>*> frames;
      std::vector<std::vector<int>> caps;
      std::set<std::vector<int>> seen;
      while (cursor < order.size() &&
             static_cast<int>(frames.size()) < cfg.batch_size) {
        const auto& p = ds.captions[static_cast<std::size_t>(order[cursor++])];
        auto ids = worldgen::tokens_to_ids(p.caption);
        if (!seen.insert(ids).second) continue;
        frames.push_back(&p.frame);
        caps.push_back(std::move(ids));
      }
      if (frames.size() < 2) continue;
      Tape tape;
      auto loss = res.enc.contrastive_loss(tape, frames, caps);
      ETCLIP_CHECK(std::isfinite(static_cast<double>(loss->value[0])),
                   "non-finite contrastive loss at epoch " +
                       std::to_string(epoch) + " step " +
                       std::to_string(global_step));
      tape.backward(loss);
      opt.step();
      ++global_step;
    }
    res.probe_accuracy.push_back(probe_accuracy(res.enc, ds.probe));
  }
  res.checkpoint = make_dualenc_checkpoint(res.enc, cfg, res.probe_accuracy);
  return res;
}

// ---- joint training ----

struct TrainState {
  TrainConfig cfg;
  AgentModel agent;
  DualEncoder enc;
  bool has_enc = false;
  Adam opt_agent, opt_enc;
  Rng shuffle;
  int epoch = 0;
  long global_step = 0;
};

inline void init_train_state(TrainState* st, const TrainConfig& cfg,
                             const Checkpoint* dualenc_ckpt) {
  cfg.validate();
  st->cfg = cfg;
  st->cfg.agent.object_loss_steps = cfg.object_loss_steps;
  int vocab = static_cast<int>(worldgen::token_vocab().size());
  st->agent.cfg = st->cfg.agent;
  st->agent.init(cfg.seed, vocab);
  if (cfg.mode == "clip_aux") {
    ETCLIP_CHECK(dualenc_ckpt != nullptr,
                 "clip_aux mode requires a pretrained dual-encoder checkpoint");
    st->enc = dualenc_from_checkpoint(*dualenc_ckpt);
    st->has_enc = true;
  }
  st->opt_agent = Adam(static_cast<float>(cfg.lr_agent));
  st->opt_agent.add_params(st->agent.params());
  if (st->has_enc) {
    st->opt_enc = Adam(static_cast<float>(cfg.lr_dualenc));
    st->opt_enc.add_params(st->enc.params());
  }
  st->shuffle = Rng(cfg.seed, 4);
  st->epoch = 0;
  st->global_step = 0;
}

inline void add_adam_sections(
    Checkpoint* ckpt, const std::string& prefix, const Adam& opt,
    const std::vector<std::pair<std::string, Tensor>>& named) {
  ETCLIP_CHECK(opt.num_params() == named.size(), "optimizer/param mismatch");
  for (std::size_t k = 0; k < named.size(); ++k) {
    ckpt->add_f32(prefix + ".m." + named[k].first, opt.moment1(k));
    ckpt->add_f32(prefix + ".v." + named[k].first, opt.moment2(k));
  }
  ckpt->add_u64(prefix + ".step",
                {static_cast<std::uint64_t>(opt.step_count())});
}

inline void load_adam_sections(
    const Checkpoint& ckpt, const std::string& prefix, Adam* opt,
    const std::vector<std::pair<std::string, Tensor>>& named) {
  for (std::size_t k = 0; k < named.size(); ++k) {
    const auto& m = ckpt.require(prefix + ".m." + named[k].first);
    const auto& v = ckpt.require(prefix + ".v." + named[k].first);
    opt->restore_state(k, m.f32, v.f32);
  }
  opt->set_step_count(
      static_cast<long>(ckpt.require(prefix + ".step").u64.at(0)));
}

inline Checkpoint make_train_checkpoint(const TrainState& st) {
  Checkpoint ckpt;
  nlohmann::json meta;
  meta["kind"] = "train";
  meta["config"] = st.cfg;
  ckpt.config_json = meta.dump();
  add_named_sections(&ckpt, "agent.", st.agent.named_params());
  add_adam_sections(&ckpt, "opt_agent", st.opt_agent,
                    st.agent.named_params());
  if (st.has_enc) {
    add_named_sections(&ckpt, "dualenc.", st.enc.named_params());
    add_adam_sections(&ckpt, "opt_dualenc", st.opt_enc,
                      st.enc.named_params());
  }
  ckpt.add_u64("rng.shuffle", st.shuffle.serialize());
  ckpt.add_u64("progress", {static_cast<std::uint64_t>(st.epoch),
                            static_cast<std::uint64_t>(st.global_step)});
  return ckpt;
}

inline AgentModel agent_from_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json meta = nlohmann::json::parse(ckpt.config_json);
  ETCLIP_CHECK(meta.value("kind", "") == "train", "not a training checkpoint");
  TrainConfig cfg = meta.at("config").get<TrainConfig>();
  AgentModel agent;
  agent.cfg = cfg.agent;
  agent.init(0, static_cast<int>(worldgen::token_vocab().size()));
  load_named_sections(ckpt, "agent.", agent);
  return agent;
}

inline void restore_train_state(TrainState* st, const Checkpoint& ckpt,
                                const Checkpoint* dualenc_ckpt) {
  nlohmann::json meta = nlohmann::json::parse(ckpt.config_json);
  ETCLIP_CHECK(meta.value("kind", "") == "train", "not a training checkpoint");
  TrainConfig cfg = meta.at("config").get<TrainConfig>();
  init_train_state(st, cfg, dualenc_ckpt);
  load_named_sections(ckpt, "agent.", st->agent);
  load_adam_sections(ckpt, "opt_agent", &st->opt_agent,
                     st->agent.named_params());
  if (st->has_enc) {
    load_named_sections(ckpt, "dualenc.", st->enc);
    load_adam_sections(ckpt, "opt_dualenc", &st->opt_enc,
                       st->enc.named_params());
  }
  st->shuffle.restore(ckpt.require("rng.shuffle").u64);
  const auto& prog = ckpt.require("progress").u64;
  st->epoch = static_cast<int>(prog.at(0));
  st->global_step = static_cast<long>(prog.at(1));
}

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<StepLog> steps;
};

// Runs epochs [st->epoch, cfg.epochs). max_steps > 0 stops after that many
// additional optimizer steps (used by short diagnostic runs).
inline TrainResult run_training(TrainState* st, const worldgen::Dataset& ds,
                                long max_steps = 0) {
  ETCLIP_CHECK(!ds.train.empty(), "dataset has no train episodes");
  const TrainConfig& cfg = st->cfg;
  bool clip_aux = cfg.mode == "clip_aux";
  int n = static_cast<int>(ds.train.size());
  if (cfg.max_train_episodes > 0 && cfg.max_train_episodes < n)
    n = cfg.max_train_episodes;
  TrainResult res;
  long steps_done = 0;
  for (; st->epoch < cfg.epochs; ++st->epoch) {
    // cosine decay; a pure function of the epoch index so interrupted and
    // resumed runs stay bit-identical
    double decay =
        0.5 * (1.0 + std::cos(3.14159265358979323846 *
                              static_cast<double>(st->epoch) / cfg.epochs));
    st->opt_agent.learning_rate = static_cast<float>(cfg.lr_agent * decay);
    if (st->has_enc)
      st->opt_enc.learning_rate = static_cast<float>(cfg.lr_dualenc * decay);
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    for (int i = n - 1; i > 0; --i)
      std::swap(order[static_cast<std::size_t>(i)],
                order[static_cast<std::size_t>(st->shuffle.uniform_int(i + 1))]);
    for (int start = 0; start < n; start += cfg.batch_size) {
      std::vector<const worldgen::Episode*> batch;
      for (int i = start; i < std::min(n, start + cfg.batch_size); ++i)
        batch.push_back(&ds.train[static_cast<std::size_t>(order[i])]);
      Tape tape;
      auto parts = joint_step_loss(tape, st->agent,
                                   st->has_enc ? &st->enc : nullptr, batch,
                                   cfg.alpha, clip_aux);
      double total = static_cast<double>(parts.total->value[0]);
      ETCLIP_CHECK(std::isfinite(total),
                   "non-finite loss at epoch " + std::to_string(st->epoch) +
                       " step " + std::to_string(st->global_step) +
                       " (action " + std::to_string(parts.action_loss) +
                       ", et_obj " + std::to_string(parts.et_obj) +
                       ", clip_obj " + std::to_string(parts.clip_obj) + ")");
      tape.backward(parts.total);
      st->opt_agent.step();
      if (clip_aux) st->opt_enc.step();
      StepLog log;
      log.epoch = st->epoch;
      log.step = st->global_step++;
      log.action_loss = parts.action_loss;
      log.et_obj = parts.et_obj;
      log.clip_obj = parts.clip_obj;
      log.total = total;
      res.steps.push_back(log);
      if (max_steps > 0 && ++steps_done >= max_steps) {
        res.checkpoint = make_train_checkpoint(*st);
        return res;
      }
    }
  }
  res.checkpoint = make_train_checkpoint(*st);
  return res;
}

inline TrainResult train(const worldgen::Dataset& ds, const TrainConfig& cfg,
                         const Checkpoint* dualenc_ckpt = nullptr,
                         long max_steps = 0) {
  TrainState st;
  init_train_state(&st, cfg, dualenc_ckpt);
  return run_training(&st, ds, max_steps);
}

}  // namespace etclip
