// Command-line pipeline: data generation, contrastive pretraining, joint
// training, rollout evaluation, analysis and paired A/B experiments.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "etclip/config.hpp"
#include "etclip/evalkit.hpp"
#include "etclip/serialize.hpp"
#include "etclip/trainer.hpp"
#include "etclip/worldgen.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace etclip;

namespace {

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  ETCLIP_CHECK(in.good(), "cannot open config file: " + path);
  json j;
  in >> j;
  return j;
}

template <typename T>
T section_config(const json& cfg, const std::string& key) {
  T out;
  if (cfg.contains(key)) cfg.at(key).get_to(out);
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  ETCLIP_CHECK(out.good(), "cannot open for writing: " + path);
  out << text;
  ETCLIP_CHECK(out.good(), "write failed: " + path);
}

void write_step_log(const std::vector<StepLog>& steps,
                    const std::string& path) {
  std::ofstream out(path);
  ETCLIP_CHECK(out.good(), "cannot open for writing: " + path);
  for (auto& s : steps) {
    json j = {{"epoch", s.epoch},         {"step", s.step},
              {"action_loss", s.action_loss}, {"et_obj", s.et_obj},
              {"clip_obj", s.clip_obj},   {"total", s.total}};
    out << j.dump() << "\n";
  }
}

const std::vector<worldgen::Episode>& pick_split(const worldgen::Dataset& ds,
                                                 const std::string& split) {
  if (split == "train") return ds.train;
  if (split == "valid_seen") return ds.valid_seen;
  if (split == "valid_unseen") return ds.valid_unseen;
  detail::fail("unknown split: " + split);
}

struct EvalOutputs {
  std::vector<evalkit::EpisodeResult> results;
  evalkit::RunReport report;
};

EvalOutputs evaluate_checkpoint(const Checkpoint& ckpt,
                                const worldgen::Dataset& ds,
                                const std::string& split, int max_steps,
                                int threads) {
  auto agent = agent_from_checkpoint(ckpt);
  EvalOutputs out;
  out.results =
      evalkit::rollout_all(agent, pick_split(ds, split), max_steps, threads);
  out.report = evalkit::build_report(split, out.results);
  return out;
}

double median(std::vector<double> v) {
  ETCLIP_CHECK(!v.empty(), "median of empty set");
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

int run(int argc, char** argv) {
  CLI::App app{"gridworld instruction-following pipeline"};
  app.require_subcommand(1);

  std::string config_path, out_path, data_dir, split = "valid_unseen";
  std::string mode, checkpoint_path, resume_path, results_path;
  std::vector<std::string> compare_paths;
  std::uint64_t seed = 0;
  bool seed_set = false;
  double alpha = -1.0;
  int epochs = -1, n_seeds = 5, max_steps = 48, threads = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file");
    sub->add_option("--out", out_path, "output path");
    sub->add_option("--seed", seed, "seed override")
        ->each([&](const std::string&) { seed_set = true; });
  };

  auto* gen = app.add_subcommand("gen-data", "generate the dataset");
  add_common(gen);

  auto* pre = app.add_subcommand("pretrain-clip",
                                 "contrastive dual-encoder pretraining");
  add_common(pre);
  pre->add_option("--data", data_dir, "dataset directory")->required();

  auto* tr = app.add_subcommand("train", "train the agent");
  add_common(tr);
  tr->add_option("--data", data_dir, "dataset directory")->required();
  tr->add_option("--mode", mode, "baseline | clip_aux")
      ->check(CLI::IsMember({"baseline", "clip_aux"}));
  tr->add_option("--alpha", alpha, "mixed object loss weight");
  tr->add_option("--epochs", epochs, "epoch budget");
  tr->add_option("--checkpoint", checkpoint_path,
                 "pretrained dual-encoder checkpoint (clip_aux)");
  tr->add_option("--resume", resume_path, "training checkpoint to resume");

  auto* ev = app.add_subcommand("eval", "roll out a trained agent");
  add_common(ev);
  ev->add_option("--data", data_dir, "dataset directory")->required();
  ev->add_option("--checkpoint", checkpoint_path, "training checkpoint")
      ->required();
  ev->add_option("--split", split, "dataset split")
      ->check(CLI::IsMember({"train", "valid_seen", "valid_unseen"}));
  ev->add_option("--max-steps", max_steps, "rollout step budget");
  ev->add_option("--threads", threads, "rollout worker threads");

  auto* an = app.add_subcommand("analyze",
                                "re-aggregate a results file into reports");
  add_common(an);
  an->add_option("--results", results_path, "episode results JSONL")
      ->required();
  an->add_option("--split", split, "split label for the report");

  auto* rp = app.add_subcommand("report", "improvement table for two runs");
  add_common(rp);
  rp->add_option("--compare", compare_paths,
                 "baseline and augmented results files")
      ->expected(2);

  auto* ab = app.add_subcommand("ab-experiment",
                                "paired multi-seed baseline vs clip_aux");
  add_common(ab);
  ab->add_option("--data", data_dir, "dataset directory")->required();
  ab->add_option("--n-seeds", n_seeds, "number of paired seeds");
  ab->add_option("--epochs", epochs, "epoch budget override");
  ab->add_option("--alpha", alpha, "alpha override");
  ab->add_option("--max-steps", max_steps, "rollout step budget");
  ab->add_option("--threads", threads, "rollout worker threads");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);  // prints help or the usage error
    return rc == 0 ? 0 : 1;
  }
  json cfg = load_config_file(config_path);

  if (gen->parsed()) {
    ETCLIP_CHECK(!out_path.empty(), "gen-data requires --out");
    auto wcfg = section_config<worldgen::WorldgenConfig>(cfg, "worldgen");
    std::uint64_t s = seed_set ? seed : cfg.value("seed", 0ull);
    auto ds = worldgen::generate_dataset(wcfg, s);
    fs::create_directories(out_path);
    worldgen::write_dataset(ds, out_path);
    std::cerr << "wrote " << ds.train.size() << " train / "
              << ds.valid_seen.size() << " valid_seen / "
              << ds.valid_unseen.size() << " valid_unseen episodes, "
              << ds.captions.size() << " caption pairs, " << ds.probe.size()
              << " probe frames to " << out_path << "\n";
    return 0;
  }

  if (pre->parsed()) {
    ETCLIP_CHECK(!out_path.empty(), "pretrain-clip requires --out");
    auto ds = worldgen::load_dataset(data_dir);
    auto pcfg = section_config<PretrainConfig>(cfg, "pretrain");
    auto ecfg = section_config<DualEncConfig>(cfg, "dualenc");
    if (seed_set) pcfg.seed = seed;
    auto res = pretrain_dualenc(ds, pcfg, ecfg);
    save_checkpoint(res.checkpoint, out_path);
    for (std::size_t e = 0; e < res.probe_accuracy.size(); ++e)
      std::cerr << "epoch " << e << " probe accuracy "
                << res.probe_accuracy[e] << "\n";
    return 0;
  }

  if (tr->parsed()) {
    ETCLIP_CHECK(!out_path.empty(), "train requires --out");
    auto ds = worldgen::load_dataset(data_dir);
    auto tcfg = section_config<TrainConfig>(cfg, "train");
    if (seed_set) tcfg.seed = seed;
    if (!mode.empty()) tcfg.mode = mode;
    if (alpha >= 0.0) tcfg.alpha = alpha;
    if (epochs >= 0) tcfg.epochs = epochs;
    Checkpoint dckpt;
    bool have_dckpt = false;
    if (tcfg.mode == "clip_aux") {
      ETCLIP_CHECK(!checkpoint_path.empty(),
                   "clip_aux mode requires --checkpoint");
      dckpt = load_checkpoint(checkpoint_path);
      have_dckpt = true;
    }
    TrainResult res;
    if (!resume_path.empty()) {
      auto prev = load_checkpoint(resume_path);
      TrainState st;
      restore_train_state(&st, prev, have_dckpt ? &dckpt : nullptr);
      if (epochs >= 0) st.cfg.epochs = epochs;
      res = run_training(&st, ds);
    } else {
      res = train(ds, tcfg, have_dckpt ? &dckpt : nullptr);
    }
    save_checkpoint(res.checkpoint, out_path);
    write_step_log(res.steps, out_path + ".log.jsonl");
    std::cerr << "trained " << res.steps.size() << " steps, checkpoint at "
              << out_path << "\n";
    return 0;
  }

  if (ev->parsed()) {
    ETCLIP_CHECK(!out_path.empty(), "eval requires --out");
    auto ds = worldgen::load_dataset(data_dir);
    auto ckpt = load_checkpoint(checkpoint_path);
    auto out = evaluate_checkpoint(ckpt, ds, split, max_steps, threads);
    evalkit::write_results(out.results, out_path);
    write_text(out_path + ".report.md", evalkit::report_markdown(out.report));
    write_text(out_path + ".report.csv", evalkit::report_csv(out.report));
    std::cerr << evalkit::report_markdown(out.report);
    return 0;
  }

  if (an->parsed()) {
    ETCLIP_CHECK(!out_path.empty(), "analyze requires --out");
    auto results = evalkit::read_results(results_path);
    auto report = evalkit::build_report(split, results);
    write_text(out_path + ".md", evalkit::report_markdown(report));
    write_text(out_path + ".csv", evalkit::report_csv(report));
    std::cerr << evalkit::report_markdown(report);
    return 0;
  }

  if (rp->parsed()) {
    ETCLIP_CHECK(compare_paths.size() == 2, "report requires --compare");
    auto base = evalkit::build_report(split,
                                      evalkit::read_results(compare_paths[0]));
    auto aug = evalkit::build_report(split,
                                     evalkit::read_results(compare_paths[1]));
    auto rows = evalkit::compare(base, aug);
    auto md = evalkit::improvement_markdown(rows);
    if (!out_path.empty()) write_text(out_path, md);
    std::cout << md;
    return 0;
  }

  if (ab->parsed()) {
    ETCLIP_CHECK(!out_path.empty(), "ab-experiment requires --out");
    auto ds = worldgen::load_dataset(data_dir);
    auto tcfg = section_config<TrainConfig>(cfg, "train");
    auto pcfg = section_config<PretrainConfig>(cfg, "pretrain");
    auto ecfg = section_config<DualEncConfig>(cfg, "dualenc");
    if (epochs >= 0) tcfg.epochs = epochs;
    if (alpha >= 0.0) tcfg.alpha = alpha;
    std::uint64_t seed0 = seed_set ? seed : tcfg.seed;
    ETCLIP_CHECK(n_seeds >= 1, "n_seeds must be positive");

    fs::create_directories(out_path);
    std::cerr << "pretraining dual encoder...\n";
    pcfg.seed = seed0;
    auto pre_res = pretrain_dualenc(ds, pcfg, ecfg);
    save_checkpoint(pre_res.checkpoint, out_path + "/dualenc.ckpt");

    std::string csv = "seed,mode,split,success_rate,goal_conditioned\n";
    std::vector<double> deltas;
    char buf[64];
    for (int i = 0; i < n_seeds; ++i) {
      std::uint64_t s = seed0 + static_cast<std::uint64_t>(i);
      double gc[2] = {0, 0};
      for (int m = 0; m < 2; ++m) {
        auto run_cfg = tcfg;
        run_cfg.seed = s;
        run_cfg.mode = m == 0 ? "baseline" : "clip_aux";
        std::cerr << "seed " << s << " " << run_cfg.mode << ": training...\n";
        auto res = train(ds, run_cfg,
                         m == 0 ? nullptr : &pre_res.checkpoint);
        auto ev_out = evaluate_checkpoint(res.checkpoint, ds, "valid_unseen",
                                          max_steps, threads);
        const auto& a = ev_out.report.subsets.at("All");
        gc[m] = a.goal_conditioned;
        std::snprintf(buf, sizeof(buf), "%.17g", a.success_rate);
        csv += std::to_string(s) + "," + run_cfg.mode + ",valid_unseen," + buf;
        std::snprintf(buf, sizeof(buf), "%.17g", a.goal_conditioned);
        csv += std::string(",") + buf + "\n";
        std::cerr << "seed " << s << " " << run_cfg.mode << " unseen GC-SR "
                  << evalkit::format_1dp(a.goal_conditioned) << "\n";
      }
      deltas.push_back(gc[1] - gc[0]);
    }
    write_text(out_path + "/seeds.csv", csv);
    double med = median(deltas);
    json summary = {{"n_seeds", n_seeds},
                    {"median_delta_goal_conditioned", med},
                    {"deltas", deltas},
                    {"final_probe_accuracy",
                     pre_res.probe_accuracy.empty()
                         ? 0.0
                         : pre_res.probe_accuracy.back()}};
    write_text(out_path + "/summary.json", summary.dump(2) + "\n");
    std::cout << "median unseen GC-SR delta (clip_aux - baseline): "
              << evalkit::format_delta_1dp(evalkit::tenths(med)) << "\n";
    return 0;
  }

  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
