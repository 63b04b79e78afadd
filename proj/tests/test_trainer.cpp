#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "etclip/trainer.hpp"
#include "fd_check.hpp"

using namespace etclip;

namespace {

const worldgen::Dataset& tiny_dataset() {
  static worldgen::Dataset ds = [] {
    worldgen::WorldgenConfig cfg;
    cfg.n_train = 16;
    cfg.n_valid_seen = 4;
    cfg.n_valid_unseen = 6;
    cfg.n_caption_pairs = 60;
    cfg.n_probe = 20;
    return worldgen::generate_dataset(cfg, 404);
  }();
  return ds;
}

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 4;
  cfg.seed = 9;
  return cfg;
}

Checkpoint init_dualenc_ckpt(std::uint64_t seed) {
  PretrainConfig pc;
  pc.epochs = 0;
  pc.seed = seed;
  return pretrain_dualenc(tiny_dataset(), pc).checkpoint;
}

double linf_delta(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i]->numel(); ++j)
      m = std::max(m, std::abs(static_cast<double>(a[i]->value[j]) -
                               static_cast<double>(b[i]->value[j])));
  return m;
}

std::vector<Tensor> clone_values(const std::vector<Tensor>& ps) {
  std::vector<Tensor> out;
  for (auto& p : ps) {
    auto c = make_tensor<float>(p->shape);
    c->value = p->value;
    out.push_back(c);
  }
  return out;
}

}  // namespace

TEST_CASE("combine_object_loss algebra") {
  Tape tape;
  auto lc = make_scalar<float>(2.0f, true);
  auto le = make_scalar<float>(1.0f, true);
  CHECK(combine_object_loss(tape, 0.5, lc, le)->value[0] == 1.5f);
  // boundary identities return the surviving node itself
  CHECK(combine_object_loss(tape, 0.0, lc, le) == le);
  CHECK(combine_object_loss(tape, 1.0, lc, le) == lc);
  CHECK_THROWS_AS(combine_object_loss(tape, -0.1, lc, le), Error);
  CHECK_THROWS_AS(combine_object_loss(tape, 1.1, lc, le), Error);

  Rng rng(14);
  for (int i = 0; i < 1000; ++i) {
    double a = rng.uniform();
    double x = rng.uniform(-5, 5), y = rng.uniform(-5, 5);
    auto c = make_scalar<float>(static_cast<float>(x));
    auto e = make_scalar<float>(static_cast<float>(y));
    double got = combine_object_loss(tape, a, c, e)->value[0];
    double want = a * static_cast<double>(c->value[0]) +
                  (1 - a) * static_cast<double>(e->value[0]);
    CHECK(std::abs(got - want) < 1e-6);
    // linearity witness: complementary weights sum the operands
    double mirror = combine_object_loss(tape, 1 - a, c, e)->value[0];
    CHECK(std::abs((got + mirror) -
                   (static_cast<double>(c->value[0]) +
                    static_cast<double>(e->value[0]))) < 1e-6);
  }
}

TEST_CASE("dual-encoder gradients scale linearly in alpha") {
  AgentModelT<double> agent;
  agent.init(5, static_cast<int>(worldgen::token_vocab().size()));
  DualEncoderT<double> enc;
  enc.init(5, static_cast<int>(worldgen::token_vocab().size()));
  const auto& ep = tiny_dataset().train[0];
  std::vector<const worldgen::Episode*> batch = {&ep};

  auto grads_at = [&](double alpha) {
    for (auto& p : enc.params()) p->zero_grad();
    for (auto& p : agent.params()) p->zero_grad();
    TapeT<double> tape;
    auto parts = joint_step_loss(tape, agent, &enc, batch, alpha, true);
    tape.backward(parts.total);
    std::vector<double> g;
    for (auto& p : enc.params())
      for (auto v : p->grad) g.push_back(v);
    return g;
  };
  auto g1 = grads_at(0.25);
  auto g2 = grads_at(0.5);
  REQUIRE(g1.size() == g2.size());
  double worst = 0;
  bool any = false;
  for (std::size_t i = 0; i < g1.size(); ++i) {
    if (std::abs(g1[i]) < 1e-12) continue;
    any = true;
    worst = std::max(worst, std::abs(g2[i] / g1[i] - 2.0));
  }
  CHECK(any);
  CHECK(worst < 1e-4);
}

TEST_CASE("checkpoint serialization round trip and error contracts") {
  Checkpoint ckpt;
  ckpt.config_json = "{\"kind\":\"test\"}";
  auto t = make_tensor<float>({3, 2}, {1.5f, -2.25f, 0.0f, 1e-7f, 42.0f, 3.0f});
  ckpt.add_tensor("weights", t);
  ckpt.add_u64("rng", {123456789ULL, 987654321ULL});

  auto bytes = serialize_checkpoint(ckpt);
  auto back = deserialize_checkpoint(bytes);
  CHECK(back.config_json == ckpt.config_json);
  REQUIRE(back.sections.size() == 2);
  CHECK(back.require("weights").f32 == t->value);
  CHECK(back.require("weights").dims == std::vector<std::uint32_t>{3, 2});
  CHECK(back.require("rng").u64 == std::vector<std::uint64_t>{123456789ULL,
                                                              987654321ULL});
  // byte-stable re-serialization
  CHECK(serialize_checkpoint(back) == bytes);

  auto load_into_check = [&] {
    auto dst = make_tensor<float>({3, 2});
    back.load_into("weights", dst);
    CHECK(dst->value == t->value);
    auto wrong = make_tensor<float>({2, 3});
    CHECK_THROWS_AS(back.load_into("weights", wrong), Error);
    CHECK_THROWS_AS(back.load_into("missing", dst), Error);
  };
  load_into_check();

  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_WITH_AS(deserialize_checkpoint(bad),
                       doctest::Contains("magic"), Error);
  bad = bytes;
  bad[4] = 9;  // version
  CHECK_THROWS_WITH_AS(deserialize_checkpoint(bad),
                       doctest::Contains("version"), Error);
  CHECK_THROWS_WITH_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)),
                       doctest::Contains("truncated"), Error);
  CHECK_THROWS_WITH_AS(deserialize_checkpoint(bytes + "zz"),
                       doctest::Contains("trailing"), Error);
}

TEST_CASE("zero learning rate leaves weights unchanged") {
  auto cfg = tiny_config();
  cfg.lr_agent = 0.0;
  TrainState st;
  init_train_state(&st, cfg, nullptr);
  auto before = clone_values(st.agent.params());
  run_training(&st, tiny_dataset(), 1);
  CHECK(linf_delta(before, st.agent.params()) == 0.0);
}

TEST_CASE("training is deterministic in (seed, config, dataset)") {
  auto cfg = tiny_config();
  auto r1 = train(tiny_dataset(), cfg);
  auto r2 = train(tiny_dataset(), cfg);
  CHECK(serialize_checkpoint(r1.checkpoint) ==
        serialize_checkpoint(r2.checkpoint));
  REQUIRE(r1.steps.size() == r2.steps.size());
  for (std::size_t i = 0; i < r1.steps.size(); ++i)
    CHECK(r1.steps[i].total == r2.steps[i].total);

  auto cfg3 = cfg;
  cfg3.seed = 10;
  auto r3 = train(tiny_dataset(), cfg3);
  CHECK(serialize_checkpoint(r1.checkpoint) !=
        serialize_checkpoint(r3.checkpoint));
}

TEST_CASE("clip_aux with alpha 0 matches baseline per-step losses") {
  auto dckpt = init_dualenc_ckpt(9);
  auto base_cfg = tiny_config();
  auto aux_cfg = base_cfg;
  aux_cfg.mode = "clip_aux";
  aux_cfg.alpha = 0.0;
  auto rb = train(tiny_dataset(), base_cfg);
  auto ra = train(tiny_dataset(), aux_cfg, &dckpt);
  REQUIRE(rb.steps.size() == ra.steps.size());
  for (std::size_t i = 0; i < rb.steps.size(); ++i) {
    CHECK(std::abs(rb.steps[i].action_loss - ra.steps[i].action_loss) < 1e-5);
    CHECK(std::abs(rb.steps[i].et_obj - ra.steps[i].et_obj) < 1e-5);
    CHECK(ra.steps[i].clip_obj == 0.0);
  }
}

TEST_CASE("joint-update witness and baseline isolation") {
  auto dckpt = init_dualenc_ckpt(9);
  auto cfg = tiny_config();
  cfg.mode = "clip_aux";
  cfg.alpha = 0.5;
  TrainState st;
  init_train_state(&st, cfg, &dckpt);
  auto agent_before = clone_values(st.agent.params());
  auto enc_before = clone_values(st.enc.params());
  run_training(&st, tiny_dataset(), 1);
  CHECK(linf_delta(agent_before, st.agent.params()) > 0.0);
  CHECK(linf_delta(enc_before, st.enc.params()) > 0.0);

  // baseline never instantiates or reads the dual encoder
  TrainState bst;
  init_train_state(&bst, tiny_config(), nullptr);
  CHECK_FALSE(bst.has_enc);
  run_training(&bst, tiny_dataset(), 1);
  auto loaded = dualenc_from_checkpoint(dckpt);
  CHECK(linf_delta(enc_before, loaded.params()) == 0.0);

  // clip_aux without a pretrained checkpoint is a config error
  TrainState cst;
  CHECK_THROWS_AS(init_train_state(&cst, cfg, nullptr), Error);
}

TEST_CASE("interrupt and resume reproduces an uninterrupted run") {
  auto cfg = tiny_config();
  cfg.epochs = 2;
  auto full = train(tiny_dataset(), cfg);

  auto half_cfg = cfg;
  half_cfg.epochs = 1;
  auto half = train(tiny_dataset(), half_cfg);
  TrainState st;
  restore_train_state(&st, half.checkpoint, nullptr);
  st.cfg.epochs = 2;
  auto resumed = run_training(&st, tiny_dataset());
  CHECK(serialize_checkpoint(resumed.checkpoint) ==
        serialize_checkpoint(full.checkpoint));
}

TEST_CASE("pretraining determinism and zero-epoch identity") {
  PretrainConfig pc;
  pc.epochs = 0;
  pc.seed = 31;
  auto r0 = pretrain_dualenc(tiny_dataset(), pc);
  DualEncoder fresh;
  fresh.init(31, static_cast<int>(worldgen::token_vocab().size()));
  CHECK(linf_delta(r0.enc.params(), fresh.params()) == 0.0);

  pc.epochs = 1;
  auto ra = pretrain_dualenc(tiny_dataset(), pc);
  auto rb = pretrain_dualenc(tiny_dataset(), pc);
  CHECK(serialize_checkpoint(ra.checkpoint) ==
        serialize_checkpoint(rb.checkpoint));
  CHECK(linf_delta(ra.enc.params(), fresh.params()) > 0.0);
  CHECK(ra.probe_accuracy.size() == 1);

  // round trip through the checkpoint restores the encoder exactly
  auto loaded = dualenc_from_checkpoint(ra.checkpoint);
  CHECK(linf_delta(loaded.params(), ra.enc.params()) == 0.0);
}

TEST_CASE("non-finite loss aborts with diagnostics") {
  auto cfg = tiny_config();
  TrainState st;
  init_train_state(&st, cfg, nullptr);
  st.agent.visual_w1->value[0] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_WITH_AS(run_training(&st, tiny_dataset(), 1),
                       doctest::Contains("non-finite"), Error);
}

TEST_CASE("full joint loss gradient vs finite differences") {
  AgentModelT<double> agent;
  agent.init(41, static_cast<int>(worldgen::token_vocab().size()));
  DualEncoderT<double> enc;
  enc.init(41, static_cast<int>(worldgen::token_vocab().size()));
  Rng hr(2);
  fill_gaussian(agent.action_head_w, hr, 0.1);
  fill_gaussian(agent.object_head_w, hr, 0.1);
  const auto& ep = tiny_dataset().train[1];
  std::vector<const worldgen::Episode*> batch = {&ep};

  std::vector<TensorT<double>> params;
  for (auto& p : agent.params()) params.push_back(p);
  for (auto& p : enc.params()) params.push_back(p);
  auto run = [&]() {
    TapeT<double> t;
    return joint_step_loss(t, agent, &enc, batch, 0.5, true).total->value[0];
  };
  auto bwd = [&]() {
    for (auto& p : params) p->zero_grad();
    TapeT<double> t;
    t.backward(joint_step_loss(t, agent, &enc, batch, 0.5, true).total);
  };
  Rng rng(77);
  auto res = fd::check(params, run, bwd, rng, 40);
  CHECK(res.checked == 40);
  CHECK(res.max_rel_err < 1e-3);
}
