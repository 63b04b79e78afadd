#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <sstream>

#include "etclip/evalkit.hpp"

using namespace etclip;
using namespace etclip::evalkit;

namespace {

const worldgen::Dataset& tiny_dataset() {
  static worldgen::Dataset ds = [] {
    worldgen::WorldgenConfig cfg;
    cfg.n_train = 24;
    cfg.n_valid_seen = 6;
    cfg.n_valid_unseen = 8;
    cfg.n_caption_pairs = 30;
    cfg.n_probe = 10;
    return worldgen::generate_dataset(cfg, 505);
  }();
  return ds;
}

std::vector<EpisodeResult> synthetic_results(Rng& rng, int n) {
  std::vector<EpisodeResult> out;
  for (int i = 0; i < n; ++i) {
    EpisodeResult r;
    r.episode_id = "syn" + std::to_string(i);
    r.success = rng.bernoulli(0.2);
    r.goal_fraction = r.success ? 1.0 : rng.uniform() * 0.99;
    r.steps_taken = 1 + rng.uniform_int(30);
    r.object_properties = rng.bernoulli(0.5);
    r.small_objects = rng.bernoulli(0.4);
    r.rare_semantics = rng.bernoulli(0.3);
    out.push_back(r);
  }
  return out;
}

RunReport report_with(const std::string& subset, double baseline_value,
                      const std::vector<std::string>& ids) {
  RunReport rep;
  rep.split = "valid_unseen";
  rep.episode_ids = ids;
  Aggregate a;
  a.count = static_cast<long>(ids.size());
  a.goal_conditioned = baseline_value;
  a.success_rate = baseline_value / 2;
  rep.subsets["All"] = a;
  rep.subsets[subset] = a;
  return rep;
}

}  // namespace

TEST_CASE("rare flag is strict count < 30 and missing tokens are rare") {
  worldgen::Episode ep;
  ep.instruction = {"walk", "to", "the", "key"};
  std::map<std::string, long> freq = {
      {"walk", 100}, {"to", 100}, {"the", 100}, {"key", 30}};
  CHECK_FALSE(subset_flags(ep, freq).rare_semantics);
  freq["key"] = 29;
  CHECK(subset_flags(ep, freq).rare_semantics);

  freq.erase("key");
  std::vector<std::string> missing;
  auto f = subset_flags(ep, freq, &missing);
  CHECK(f.rare_semantics);
  REQUIRE(missing.size() == 1);
  CHECK(missing[0] == "key");
}

TEST_CASE("property and small flags from instruction text and metadata") {
  worldgen::Episode ep;
  ep.instruction = {"go", "to", "the", "red", "key"};
  ep.gold_objects = {worldgen::none_class(),
                     worldgen::object_class_id("key")};
  std::map<std::string, long> freq;
  for (auto& t : worldgen::token_vocab()) freq[t] = 100;
  auto f = subset_flags(ep, freq);
  CHECK(f.object_properties);
  CHECK(f.small_objects);
  CHECK_FALSE(f.rare_semantics);

  // color not followed by a noun does not count as a property
  ep.instruction = {"go", "to", "the", "red", "and", "key"};
  CHECK_FALSE(subset_flags(ep, freq).object_properties);

  // large-object target clears the small flag
  ep.gold_objects = {worldgen::object_class_id("chair")};
  CHECK_FALSE(subset_flags(ep, freq).small_objects);
}

TEST_CASE("subset flags match the generator's stored flags") {
  const auto& ds = tiny_dataset();
  for (auto* split : {&ds.train, &ds.valid_seen, &ds.valid_unseen})
    for (auto& ep : *split) {
      auto f = subset_flags(ep, ds.freq);
      CHECK(f.object_properties == ep.flag_object_properties);
      CHECK(f.small_objects == ep.flag_small_objects);
      CHECK(f.rare_semantics == ep.flag_rare_semantics);
    }
}

TEST_CASE("expert replay succeeds; an immediate stop does not") {
  const auto& ds = tiny_dataset();
  for (auto& ep : ds.valid_seen) {
    auto r = rollout_expert(ep);
    CHECK(r.success);
    CHECK(r.goal_fraction == 1.0);
  }

  AgentModel agent;
  agent.init(1, static_cast<int>(worldgen::token_vocab().size()));
  agent.action_head_b->value[worldgen::kStop] = 10.0f;
  auto r = rollout(agent, ds.valid_seen[0], 40);
  CHECK(r.steps_taken == 1);
  CHECK_FALSE(r.success);
  CHECK(r.goal_fraction < 1.0);
  CHECK(r.goal_fraction >= 0.0);
}

TEST_CASE("rollouts are deterministic and thread fan-out preserves order") {
  const auto& ds = tiny_dataset();
  AgentModel agent;
  agent.init(2, static_cast<int>(worldgen::token_vocab().size()));
  Rng hr(1);
  fill_gaussian(agent.action_head_w, hr, 0.5);
  fill_gaussian(agent.object_head_w, hr, 0.5);

  std::vector<EpisodeResult> seq;
  for (auto& ep : ds.valid_unseen) seq.push_back(rollout(agent, ep, 40));
  auto par = rollout_all(agent, ds.valid_unseen, 40, 3);
  REQUIRE(par.size() == seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i) {
    CHECK(par[i].episode_id == seq[i].episode_id);
    CHECK(par[i].success == seq[i].success);
    CHECK(par[i].goal_fraction == seq[i].goal_fraction);
    CHECK(par[i].steps_taken == seq[i].steps_taken);
  }
  auto again = rollout(agent, ds.valid_unseen[0], 40);
  CHECK(again.goal_fraction == seq[0].goal_fraction);
  CHECK(again.steps_taken == seq[0].steps_taken);
}

TEST_CASE("aggregate arithmetic and invariants") {
  CHECK_THROWS_AS(aggregate({}), Error);

  std::vector<EpisodeResult> all_good(4);
  for (auto& r : all_good) {
    r.success = true;
    r.goal_fraction = 1.0;
  }
  auto a = aggregate(all_good);
  CHECK(a.success_rate == 100.0);
  CHECK(a.goal_conditioned == 100.0);

  // 10 episodes whose fractions sum to 0.78 -> GC-SR 7.8
  std::vector<EpisodeResult> ten(10);
  double parts[10] = {0.0, 0.1, 0.05, 0.03, 0.2, 0.1, 0.1, 0.1, 0.05, 0.05};
  for (int i = 0; i < 10; ++i) ten[static_cast<std::size_t>(i)].goal_fraction =
      parts[i];
  CHECK(format_1dp(aggregate(ten).goal_conditioned) == "7.8");

  Rng rng(8);
  auto syn = synthetic_results(rng, 500);
  auto agg = aggregate(syn);
  CHECK(agg.success_rate <= agg.goal_conditioned);
  auto rep = build_report("valid_unseen", syn);
  for (auto& [name, sub] : rep.subsets)
    if (sub.count > 0) CHECK(sub.success_rate <= sub.goal_conditioned);

  // permutation invariance
  auto shuffled = syn;
  std::reverse(shuffled.begin(), shuffled.end());
  auto agg2 = aggregate(shuffled);
  CHECK(agg2.success_rate == agg.success_rate);
  CHECK(agg2.goal_conditioned ==
        doctest::Approx(agg.goal_conditioned).epsilon(1e-12));
}

TEST_CASE("one-decimal rendering uses round half up") {
  CHECK(format_1dp(0.1) == "0.1");
  CHECK(format_1dp(7.8) == "7.8");
  CHECK(format_1dp(7.85) == "7.9");
  CHECK(format_1dp(7.849) == "7.8");
  CHECK(format_1dp(-0.25) == "-0.3");
  CHECK(format_delta_1dp(3) == "+0.3");
  CHECK(format_delta_1dp(0) == "+0.0");
  CHECK(format_delta_1dp(-12) == "-1.2");
}

TEST_CASE("improvement table reproduces published-style deltas") {
  std::vector<std::string> ids = {"e1", "e2", "e3"};
  struct Case {
    const char* subset;
    double base, aug;
    const char* delta;
  } cases[] = {
      {"object_properties", 7.7, 8.0, "+0.3"},
      {"small_objects", 5.1, 5.6, "+0.5"},
      {"rare_semantics", 5.9, 6.7, "+0.8"},
  };
  for (auto& c : cases) {
    auto rb = report_with(c.subset, c.base, ids);
    auto ra = report_with(c.subset, c.aug, ids);
    auto rows = compare(rb, ra);
    bool found = false;
    for (auto& row : rows)
      if (row.subset == c.subset) {
        found = true;
        CHECK(format_delta_1dp(row.delta_tenths) == c.delta);
      }
    CHECK(found);
  }

  auto r = report_with("small_objects", 5.1, ids);
  for (auto& row : compare(r, r))
    CHECK(row.delta_tenths == 0);

  auto other = report_with("small_objects", 5.1, {"e1", "e9"});
  CHECK_THROWS_WITH_AS(compare(r, other), doctest::Contains("episode sets"),
                       Error);
}

TEST_CASE("markdown layout and CSV exact round trip") {
  Rng rng(3);
  auto syn = synthetic_results(rng, 100);
  auto rep = build_report("valid_unseen", syn);
  auto md = report_markdown(rep);
  auto p_all = md.find("| All ");
  auto p_props = md.find("| object_properties ");
  auto p_small = md.find("| small_objects ");
  auto p_rare = md.find("| rare_semantics ");
  REQUIRE(p_all != std::string::npos);
  REQUIRE(p_props != std::string::npos);
  REQUIRE(p_small != std::string::npos);
  REQUIRE(p_rare != std::string::npos);
  CHECK(p_all < p_props);
  CHECK(p_props < p_small);
  CHECK(p_small < p_rare);

  auto csv = report_csv(rep);
  CHECK(csv.rfind("split,subset,metric,value,count\n", 0) == 0);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  int rows = 0;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    REQUIRE(cells.size() == 5);
    const Aggregate& a = rep.subsets.at(cells[1]);
    double want = cells[2] == "success_rate" ? a.success_rate
                                             : a.goal_conditioned;
    CHECK(std::stod(cells[3]) == want);
    CHECK(std::stol(cells[4]) == a.count);
    ++rows;
  }
  CHECK(rows == 8);
}

TEST_CASE("episode results persist through the JSONL file") {
  Rng rng(4);
  auto syn = synthetic_results(rng, 50);
  std::string path = "test_results_tmp.jsonl";
  write_results(syn, path);
  auto back = read_results(path);
  std::remove(path.c_str());
  REQUIRE(back.size() == syn.size());
  for (std::size_t i = 0; i < syn.size(); ++i) {
    CHECK(back[i].episode_id == syn[i].episode_id);
    CHECK(back[i].success == syn[i].success);
    CHECK(back[i].goal_fraction == syn[i].goal_fraction);
    CHECK(back[i].steps_taken == syn[i].steps_taken);
    CHECK(back[i].object_properties == syn[i].object_properties);
    CHECK(back[i].small_objects == syn[i].small_objects);
    CHECK(back[i].rare_semantics == syn[i].rare_semantics);
  }
}
