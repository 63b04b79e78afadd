#pragma once

// Rollout evaluation and analysis: success rate, goal-conditioned success
// rate, instruction subsets and improvement tables.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "etclip/agent.hpp"
#include "etclip/common.hpp"
#include "etclip/worldgen.hpp"

namespace etclip::evalkit {

struct EpisodeResult {
  std::string episode_id;
  bool success = false;
  double goal_fraction = 0.0;  // satisfied conditions / total conditions
  int steps_taken = 0;
  bool object_properties = false;
  bool small_objects = false;
  bool rare_semantics = false;
};

struct Aggregate {
  double success_rate = 0.0;       // mean(success) * 100
  double goal_conditioned = 0.0;   // mean(goal_fraction) * 100
  long count = 0;
};

inline const std::vector<std::string>& subset_order() {
  static std::vector<std::string> s = {"All", "object_properties",
                                       "small_objects", "rare_semantics"};
  return s;
}

struct RunReport {
  std::string split;
  std::map<std::string, Aggregate> subsets;  // keys from subset_order()
  std::vector<std::string> episode_ids;      // sorted, for set-identity checks
};

// ---- subset flags ----

struct SubsetFlags {
  bool object_properties = false;
  bool small_objects = false;
  bool rare_semantics = false;
};

// Pure function of instruction text, episode metadata and the train
// frequency table. Tokens absent from the table count as 0 (rare) and are
// reported through missing_tokens when provided.
inline SubsetFlags subset_flags(const worldgen::Episode& ep,
                                const std::map<std::string, long>& freq,
                                std::vector<std::string>* missing_tokens =
                                    nullptr) {
  SubsetFlags f;
  std::set<std::string> colors, nouns;
  for (auto& c : worldgen::color_palette()) colors.insert(c.first);
  for (auto& o : worldgen::object_classes())
    if (o.name != "none") nouns.insert(o.name);
  for (auto& [base, alias] : worldgen::rare_aliases()) nouns.insert(alias);

  const auto& toks = ep.instruction;
  for (std::size_t i = 0; i + 1 < toks.size(); ++i)
    if (colors.count(toks[i]) && nouns.count(toks[i + 1]))
      f.object_properties = true;
  for (int g : ep.gold_objects)
    if (g != worldgen::none_class() && worldgen::object_classes()[g].small)
      f.small_objects = true;
  for (auto& t : toks) {
    auto it = freq.find(t);
    long count;
    if (it == freq.end()) {
      count = 0;
      if (missing_tokens) missing_tokens->push_back(t);
    } else {
      count = it->second;
    }
    if (count < 30) f.rare_semantics = true;
  }
  return f;
}

// ---- rollout ----

inline EpisodeResult rollout(const AgentModel& agent,
                             const worldgen::Episode& ep, int max_steps,
                             int cell_px = 2) {
  ETCLIP_CHECK(max_steps >= 1, "max_steps must be positive");
  if (max_steps > agent.cfg.max_time) max_steps = agent.cfg.max_time;
  worldgen::SimState st(ep.scene);
  auto ids = worldgen::tokens_to_ids(ep.instruction);
  std::vector<std::vector<float>> frames;
  frames.reserve(static_cast<std::size_t>(max_steps));
  std::vector<const std::vector<float>*> fptrs;
  std::vector<int> past;
  EpisodeResult res;
  res.episode_id = ep.episode_id;
  while (res.steps_taken < max_steps) {
    frames.push_back(worldgen::render_frame(st.scene, true, cell_px));
    fptrs.push_back(&frames.back());
    auto [action, object] = agent.act(ids, fptrs, past);
    past.push_back(action);
    st.step(action, object);
    ++res.steps_taken;
    if (action == worldgen::kStop) break;
  }
  res.goal_fraction = st.goal_fraction(ep.goal_conditions);
  res.success = res.goal_fraction == 1.0;
  res.object_properties = ep.flag_object_properties;
  res.small_objects = ep.flag_small_objects;
  res.rare_semantics = ep.flag_rare_semantics;
  return res;
}

// Replays the stored expert actions instead of consulting a model.
inline EpisodeResult rollout_expert(const worldgen::Episode& ep) {
  worldgen::SimState st(ep.scene);
  EpisodeResult res;
  res.episode_id = ep.episode_id;
  for (std::size_t t = 0; t < ep.expert_actions.size(); ++t) {
    st.step(ep.expert_actions[t], ep.gold_objects[t]);
    ++res.steps_taken;
  }
  res.goal_fraction = st.goal_fraction(ep.goal_conditions);
  res.success = res.goal_fraction == 1.0;
  res.object_properties = ep.flag_object_properties;
  res.small_objects = ep.flag_small_objects;
  res.rare_semantics = ep.flag_rare_semantics;
  return res;
}

// Fans rollouts out across threads; the result order matches the episode
// order regardless of scheduling.
inline std::vector<EpisodeResult> rollout_all(
    const AgentModel& agent, const std::vector<worldgen::Episode>& episodes,
    int max_steps, int n_threads = 0, int cell_px = 2) {
  if (n_threads <= 0) {
    n_threads = static_cast<int>(std::thread::hardware_concurrency());
    if (n_threads <= 0) n_threads = 4;
  }
  std::vector<EpisodeResult> out(episodes.size());
  std::vector<std::thread> workers;
  for (int w = 0; w < n_threads; ++w) {
    workers.emplace_back([&, w] {
      for (std::size_t i = static_cast<std::size_t>(w); i < episodes.size();
           i += static_cast<std::size_t>(n_threads))
        out[i] = rollout(agent, episodes[i], max_steps, cell_px);
    });
  }
  for (auto& t : workers) t.join();
  return out;
}

// ---- aggregation ----

inline Aggregate aggregate(const std::vector<EpisodeResult>& results) {
  ETCLIP_CHECK(!results.empty(), "cannot aggregate empty result set");
  Aggregate a;
  a.count = static_cast<long>(results.size());
  double s = 0, g = 0;
  for (auto& r : results) {
    s += r.success ? 1.0 : 0.0;
    g += r.goal_fraction;
  }
  a.success_rate = 100.0 * s / static_cast<double>(a.count);
  a.goal_conditioned = 100.0 * g / static_cast<double>(a.count);
  return a;
}

inline RunReport build_report(const std::string& split,
                              const std::vector<EpisodeResult>& results) {
  ETCLIP_CHECK(!results.empty(), "cannot report on empty result set");
  RunReport rep;
  rep.split = split;
  for (auto& r : results) rep.episode_ids.push_back(r.episode_id);
  std::sort(rep.episode_ids.begin(), rep.episode_ids.end());
  auto pick = [&](auto pred) {
    std::vector<EpisodeResult> sub;
    for (auto& r : results)
      if (pred(r)) sub.push_back(r);
    return sub;
  };
  rep.subsets["All"] = aggregate(results);
  auto fill = [&](const std::string& name, auto pred) {
    auto sub = pick(pred);
    if (sub.empty()) {
      Aggregate na;
      na.count = 0;  // rendered as N/A
      rep.subsets[name] = na;
    } else {
      rep.subsets[name] = aggregate(sub);
    }
  };
  fill("object_properties",
       [](const EpisodeResult& r) { return r.object_properties; });
  fill("small_objects", [](const EpisodeResult& r) { return r.small_objects; });
  fill("rare_semantics",
       [](const EpisodeResult& r) { return r.rare_semantics; });
  return rep;
}

// ---- formatting ----

// Round half up (half away from zero) to one decimal, in tenths.
inline long long tenths(double v) { return std::llround(v * 10.0); }

inline std::string format_1dp(double v) {
  long long t = tenths(v);
  long long a = t < 0 ? -t : t;
  return (t < 0 ? "-" : "") + std::to_string(a / 10) + "." +
         std::to_string(a % 10);
}

inline std::string format_delta_1dp(long long delta_tenths) {
  long long a = delta_tenths < 0 ? -delta_tenths : delta_tenths;
  return (delta_tenths < 0 ? "-" : "+") + std::to_string(a / 10) + "." +
         std::to_string(a % 10);
}

// ---- comparison ----

struct ImprovementRow {
  std::string subset;
  double baseline = 0, augmented = 0;
  long long delta_tenths = 0;  // at one-decimal rendering
};

// Deltas are computed on the one-decimal renderings so published-style
// table values reproduce exactly.
inline std::vector<ImprovementRow> compare(const RunReport& baseline,
                                           const RunReport& augmented,
                                           const std::string& metric =
                                               "goal_conditioned") {
  ETCLIP_CHECK(baseline.episode_ids == augmented.episode_ids,
               "comparison error: reports cover different episode sets");
  std::vector<ImprovementRow> rows;
  for (auto& name : subset_order()) {
    auto bi = baseline.subsets.find(name);
    auto ai = augmented.subsets.find(name);
    if (bi == baseline.subsets.end() || ai == augmented.subsets.end())
      continue;
    if (bi->second.count == 0 || ai->second.count == 0) continue;
    ImprovementRow row;
    row.subset = name;
    row.baseline = metric == "success_rate" ? bi->second.success_rate
                                            : bi->second.goal_conditioned;
    row.augmented = metric == "success_rate" ? ai->second.success_rate
                                             : ai->second.goal_conditioned;
    row.delta_tenths = tenths(row.augmented) - tenths(row.baseline);
    rows.push_back(row);
  }
  return rows;
}

// ---- report emission ----

inline std::string report_markdown(const RunReport& rep) {
  std::string out;
  out += "| subset | SR | GC-SR | episodes |\n";
  out += "| --- | --- | --- | --- |\n";
  for (auto& name : subset_order()) {
    auto it = rep.subsets.find(name);
    if (it == rep.subsets.end()) continue;
    const Aggregate& a = it->second;
    out += "| " + name + " | ";
    if (a.count == 0) {
      out += "N/A | N/A | 0 |\n";
    } else {
      out += format_1dp(a.success_rate) + " | " +
             format_1dp(a.goal_conditioned) + " | " +
             std::to_string(a.count) + " |\n";
    }
  }
  return out;
}

// CSV schema: split,subset,metric,value,count — exact unrounded values.
inline std::string report_csv(const RunReport& rep) {
  std::string out = "split,subset,metric,value,count\n";
  char buf[64];
  for (auto& name : subset_order()) {
    auto it = rep.subsets.find(name);
    if (it == rep.subsets.end() || it->second.count == 0) continue;
    const Aggregate& a = it->second;
    std::snprintf(buf, sizeof(buf), "%.17g", a.success_rate);
    out += rep.split + "," + name + ",success_rate," + buf + "," +
           std::to_string(a.count) + "\n";
    std::snprintf(buf, sizeof(buf), "%.17g", a.goal_conditioned);
    out += rep.split + "," + name + ",goal_conditioned," + buf + "," +
           std::to_string(a.count) + "\n";
  }
  return out;
}

inline std::string improvement_markdown(const std::vector<ImprovementRow>&
                                            rows,
                                        const std::string& metric =
                                            "goal_conditioned") {
  std::string out;
  out += "| subset | baseline " + metric + " | clip_aux " + metric +
         " | improvement |\n";
  out += "| --- | --- | --- | --- |\n";
  for (auto& r : rows)
    out += "| " + r.subset + " | " + format_1dp(r.baseline) + " | " +
           format_1dp(r.augmented) + " | " + format_delta_1dp(r.delta_tenths) +
           " |\n";
  return out;
}

// ---- results persistence (line-delimited JSON) ----

inline void write_results(const std::vector<EpisodeResult>& results,
                          const std::string& path) {
  std::ofstream out(path);
  ETCLIP_CHECK(out.good(), "cannot open for writing: " + path);
  for (auto& r : results) {
    nlohmann::json j = {{"episode_id", r.episode_id},
                        {"success", r.success},
                        {"goal_fraction", r.goal_fraction},
                        {"steps_taken", r.steps_taken},
                        {"object_properties", r.object_properties},
                        {"small_objects", r.small_objects},
                        {"rare_semantics", r.rare_semantics}};
    out << j.dump() << "\n";
  }
  ETCLIP_CHECK(out.good(), "write failed: " + path);
}

inline std::vector<EpisodeResult> read_results(const std::string& path) {
  std::ifstream in(path);
  ETCLIP_CHECK(in.good(), "cannot open: " + path);
  std::vector<EpisodeResult> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    EpisodeResult r;
    r.episode_id = j.at("episode_id");
    r.success = j.at("success");
    r.goal_fraction = j.at("goal_fraction");
    r.steps_taken = j.at("steps_taken");
    r.object_properties = j.at("object_properties");
    r.small_objects = j.at("small_objects");
    r.rare_semantics = j.at("rare_semantics");
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace etclip::evalkit
