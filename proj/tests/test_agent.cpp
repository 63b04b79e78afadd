#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "etclip/agent.hpp"
#include "fd_check.hpp"

using namespace etclip;

namespace {

worldgen::Episode sample_episode(std::uint64_t seed) {
  worldgen::WorldgenConfig cfg;
  return worldgen::generate_episode(seed, 0, "ep", 1, cfg);
}

std::vector<const std::vector<float>*> frame_ptrs(
    const worldgen::Episode& ep) {
  std::vector<const std::vector<float>*> out;
  for (auto& f : ep.frames) out.push_back(&f);
  return out;
}

}  // namespace

TEST_CASE("forward shapes and input validation") {
  AgentModel agent;
  agent.init(1, static_cast<int>(worldgen::token_vocab().size()));
  auto ep = sample_episode(42);
  auto ids = worldgen::tokens_to_ids(ep.instruction);
  auto frames = frame_ptrs(ep);
  Tape tape;
  auto out = agent.forward(tape, ids, frames,
                           AgentModel::shifted_actions(ep.expert_actions));
  int tt = static_cast<int>(frames.size());
  CHECK(out.action_logits->dim(0) == tt);
  CHECK(out.action_logits->dim(1) == worldgen::kNumActions);
  CHECK(out.object_logits->dim(0) == tt);
  CHECK(out.object_logits->dim(1) == worldgen::num_object_classes());

  // single-timestep episode is legal
  std::vector<const std::vector<float>*> one = {frames[0]};
  auto out1 = agent.forward(tape, ids, one, {AgentModel::start_action()});
  CHECK(out1.action_logits->dim(0) == 1);

  CHECK_THROWS_AS(agent.forward(tape, ids, {}, {}), Error);
  CHECK_THROWS_AS(agent.forward(tape, ids, one, {}), Error);
  CHECK_THROWS_AS(agent.forward(tape, {}, one, {AgentModel::start_action()}),
                  Error);
}

TEST_CASE("zero-initialized heads emit all-zero logits") {
  AgentModel agent;
  agent.init(3, static_cast<int>(worldgen::token_vocab().size()));
  auto ep = sample_episode(7);
  Tape tape;
  auto out = agent.forward(tape, worldgen::tokens_to_ids(ep.instruction),
                           frame_ptrs(ep),
                           AgentModel::shifted_actions(ep.expert_actions));
  for (float v : out.action_logits->value) CHECK(v == 0.0f);
  for (float v : out.object_logits->value) CHECK(v == 0.0f);

  // hence both losses equal ln(num classes) exactly at init
  Tape t2;
  auto l = agent.et_losses(t2, ep);
  CHECK(l.action_loss->value[0] ==
        doctest::Approx(std::log(double(worldgen::kNumActions))).epsilon(1e-6));
  CHECK(l.object_loss->value[0] ==
        doctest::Approx(std::log(double(worldgen::num_object_classes())))
            .epsilon(1e-6));
}

TEST_CASE("attention mask geometry") {
  auto m = AgentModel::build_mask(3, 4);
  int s = 7;
  auto at = [&](int i, int j) { return m[static_cast<std::size_t>(i) * s + j]; };
  // language rows see language only
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < s; ++j) CHECK(at(i, j) == (j < 3 ? 1 : 0));
  // temporal rows see all language plus temporal prefix
  for (int i = 3; i < s; ++i)
    for (int j = 0; j < s; ++j)
      CHECK(at(i, j) == ((j < 3 || j <= i) ? 1 : 0));
}

TEST_CASE("causality: future inputs never affect earlier logits") {
  AgentModel agent;
  agent.init(11, static_cast<int>(worldgen::token_vocab().size()));
  Rng hrng(2);
  fill_gaussian(agent.action_head_w, hrng, 0.3);
  auto ep = sample_episode(99);
  REQUIRE(ep.frames.size() >= 2);
  auto ids = worldgen::tokens_to_ids(ep.instruction);
  auto prev = AgentModel::shifted_actions(ep.expert_actions);
  auto frames = frame_ptrs(ep);
  int tt = static_cast<int>(frames.size());

  Tape tape;
  auto base = agent.forward(tape, ids, frames, prev);

  // perturb the final frame and the final action-history entry
  auto mutated = ep.frames.back();
  for (auto& v : mutated) v = 1.0f - v;
  frames.back() = &mutated;
  auto prev2 = prev;
  prev2.back() = (prev2.back() + 1) % worldgen::kNumActions;
  auto pert = agent.forward(tape, ids, frames, prev2);

  int na = worldgen::kNumActions;
  // rows before T-1 are bit-identical; the final row must change
  for (int t = 0; t < tt - 1; ++t)
    for (int a = 0; a < na; ++a)
      CHECK(base.action_logits->value[t * na + a] ==
            pert.action_logits->value[t * na + a]);
  bool last_changed = false;
  for (int a = 0; a < na; ++a)
    if (base.action_logits->value[(tt - 1) * na + a] !=
        pert.action_logits->value[(tt - 1) * na + a])
      last_changed = true;
  CHECK(last_changed);
}

TEST_CASE("et_losses matches a per-step cross entropy loop") {
  AgentModelT<double> agent;
  agent.init(17, static_cast<int>(worldgen::token_vocab().size()));
  // break head symmetry so the oracle is non-trivial
  Rng rng(5);
  fill_gaussian(agent.action_head_w, rng, 0.3);
  fill_gaussian(agent.object_head_w, rng, 0.3);

  auto ep = sample_episode(123);
  TapeT<double> tape;
  auto l = agent.et_losses(tape, ep);
  auto out = agent.forward(tape, worldgen::tokens_to_ids(ep.instruction),
                           frame_ptrs(ep),
                           AgentModelT<double>::shifted_actions(
                               ep.expert_actions));
  int tt = static_cast<int>(ep.frames.size());
  double asum = 0, osum = 0;
  for (int t = 0; t < tt; ++t) {
    auto arow = tape.reshape(tape.gather_rows(out.action_logits, {t}),
                             {worldgen::kNumActions});
    auto orow = tape.reshape(tape.gather_rows(out.object_logits, {t}),
                             {worldgen::num_object_classes()});
    asum += tape.cross_entropy(arow, ep.expert_actions[t])->value[0];
    osum += tape.cross_entropy(orow, ep.gold_objects[t])->value[0];
  }
  CHECK(l.action_loss->value[0] == doctest::Approx(asum / tt).epsilon(1e-6));
  CHECK(l.object_loss->value[0] == doctest::Approx(osum / tt).epsilon(1e-6));
}

TEST_CASE("interaction-only object loss gathers the right steps") {
  AgentModelT<double> agent;
  agent.cfg.object_loss_steps = "interaction";
  agent.init(19, static_cast<int>(worldgen::token_vocab().size()));
  Rng rng(6);
  fill_gaussian(agent.object_head_w, rng, 0.3);

  auto ep = sample_episode(321);
  TapeT<double> tape;
  auto l = agent.et_losses(tape, ep);
  auto out = agent.forward(tape, worldgen::tokens_to_ids(ep.instruction),
                           frame_ptrs(ep),
                           AgentModelT<double>::shifted_actions(
                               ep.expert_actions));
  double sum = 0;
  int n = 0;
  for (std::size_t t = 0; t < ep.gold_objects.size(); ++t)
    if (ep.gold_objects[t] != worldgen::none_class()) {
      auto row = tape.reshape(
          tape.gather_rows(out.object_logits, {static_cast<int>(t)}),
          {worldgen::num_object_classes()});
      sum += tape.cross_entropy(row, ep.gold_objects[t])->value[0];
      ++n;
    }
  if (n == 0) {
    CHECK(l.object_loss->value[0] == 0.0);
  } else {
    CHECK(l.object_loss->value[0] == doctest::Approx(sum / n).epsilon(1e-6));
  }
}

TEST_CASE("act is deterministic greedy argmax of the final step") {
  AgentModel agent;
  agent.init(23, static_cast<int>(worldgen::token_vocab().size()));
  // force a known argmax through the head biases
  agent.action_head_b->value[worldgen::kTurnLeft] = 5.0f;
  agent.object_head_b->value[2] = 5.0f;

  auto ep = sample_episode(55);
  auto ids = worldgen::tokens_to_ids(ep.instruction);
  auto frames = frame_ptrs(ep);
  std::vector<int> past(ep.expert_actions.begin(),
                        ep.expert_actions.end() - 1);
  REQUIRE(past.size() + 1 == frames.size());
  auto [a1, o1] = agent.act(ids, frames, past);
  auto [a2, o2] = agent.act(ids, frames, past);
  CHECK(a1 == static_cast<int>(worldgen::kTurnLeft));
  CHECK(o1 == 2);
  CHECK(a1 == a2);
  CHECK(o1 == o2);

  CHECK_THROWS_AS(agent.act(ids, frames, ep.expert_actions), Error);
}

TEST_CASE("gradients reach every agent parameter group") {
  AgentModel agent;
  agent.init(29, static_cast<int>(worldgen::token_vocab().size()));
  Rng hrng(3);
  fill_gaussian(agent.action_head_w, hrng, 0.3);
  fill_gaussian(agent.object_head_w, hrng, 0.3);
  auto ep = sample_episode(77);
  Tape tape;
  auto l = agent.et_losses(tape, ep);
  auto total = tape.add(l.action_loss, l.object_loss);
  tape.backward(total);
  for (auto& [name, p] : agent.named_params()) {
    float m = 0;
    for (float g : p->grad) m = std::max(m, std::abs(g));
    INFO("param ", name);
    CHECK(m > 0.0f);
  }
}

TEST_CASE("agent loss gradient vs finite differences") {
  AgentModelT<double> agent;
  agent.init(31, static_cast<int>(worldgen::token_vocab().size()));
  Rng rng(9);
  fill_gaussian(agent.action_head_w, rng, 0.1);
  fill_gaussian(agent.object_head_w, rng, 0.1);
  auto ep = sample_episode(11);
  auto params = agent.params();
  auto run = [&]() {
    TapeT<double> t;
    auto l = agent.et_losses(t, ep);
    return t.add(l.action_loss, l.object_loss)->value[0];
  };
  auto bwd = [&]() {
    TapeT<double> t;
    auto l = agent.et_losses(t, ep);
    t.backward(t.add(l.action_loss, l.object_loss));
  };
  auto res = fd::check(params, run, bwd, rng, 60);
  CHECK(res.checked == 60);
  CHECK(res.max_rel_err < 1e-3);
}
